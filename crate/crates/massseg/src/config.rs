//! Flat `key=value` configuration files plus environment overrides.
//!
//! Every key maps onto one [`ModelConfig`] field. Unknown keys are errors.
//! After the file (when given), environment variables with the
//! `MASSSEG_CFG_` prefix override individual keys, e.g.
//! `MASSSEG_CFG_SEED=7` or `MASSSEG_CFG_PATCH_SIZES=3,5`.

use crate::model::ModelConfig;
use crate::{Error, Result};
use std::path::Path;

/// Environment-variable prefix for config overrides.
pub const ENV_PREFIX: &str = "MASSSEG_CFG_";

const KEYS: &[&str] = &[
    "roi_side",
    "roi_side_factor",
    "unaries",
    "pairwise",
    "patch_sizes",
    "layers",
    "gmm_components",
    "ssvm_C",
    "ssvm_tol",
    "ssvm_max_iters",
    "clamp_epsilon",
    "gamma",
    "seed",
    "preprocess",
    "dbn_epochs",
    "dbn_learning_rate",
    "dbn_batch",
    "dbn_cd_steps",
    "dbn_patch_cap",
];

fn parse_list<T: std::str::FromStr>(value: &str, key: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Format(format!("{key}: bad entry {s:?}")))
        })
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("{key}: bad value {value:?}")))
}

fn parse_bool(value: &str, key: &str) -> Result<bool> {
    match value.trim() {
        "1" | "true" | "on" | "yes" => Ok(true),
        "0" | "false" | "off" | "no" => Ok(false),
        other => Err(Error::Format(format!("{key}: bad boolean {other:?}"))),
    }
}

/// Applies one `key=value` assignment.
pub fn apply_key(cfg: &mut ModelConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "roi_side" => cfg.roi_side = parse_scalar(value, key)?,
        "roi_side_factor" => cfg.roi_side_factor = parse_scalar(value, key)?,
        "unaries" => {
            let names: Vec<String> = parse_list(value, key)?;
            cfg.use_prior = false;
            cfg.use_gmm = false;
            cfg.use_dbn = false;
            for name in names {
                match name.as_str() {
                    "prior" => cfg.use_prior = true,
                    "gmm" => cfg.use_gmm = true,
                    "dbn" => cfg.use_dbn = true,
                    other => {
                        return Err(Error::Format(format!(
                            "unaries: unknown potential {other:?} (prior, gmm, dbn)"
                        )))
                    }
                }
            }
        }
        "pairwise" => {
            let names: Vec<String> = parse_list(value, key)?;
            cfg.use_potts = false;
            cfg.use_contrast = false;
            for name in names {
                match name.as_str() {
                    "potts" => cfg.use_potts = true,
                    "contrast" => cfg.use_contrast = true,
                    other => {
                        return Err(Error::Format(format!(
                            "pairwise: unknown potential {other:?} (potts, contrast)"
                        )))
                    }
                }
            }
        }
        "patch_sizes" => cfg.patch_sizes = parse_list(value, key)?,
        "layers" => cfg.layers = parse_list(value, key)?,
        "gmm_components" => cfg.gmm_components = parse_scalar(value, key)?,
        "ssvm_C" => cfg.ssvm_c = parse_scalar(value, key)?,
        "ssvm_tol" => cfg.ssvm_tol = parse_scalar(value, key)?,
        "ssvm_max_iters" => cfg.ssvm_max_iters = parse_scalar(value, key)?,
        "clamp_epsilon" => cfg.clamp_epsilon = parse_scalar(value, key)?,
        "gamma" => cfg.gamma = parse_scalar(value, key)?,
        "seed" => cfg.seed = parse_scalar(value, key)?,
        "preprocess" => cfg.preprocess = parse_bool(value, key)?,
        "dbn_epochs" => cfg.dbn_epochs = parse_scalar(value, key)?,
        "dbn_learning_rate" => cfg.dbn_learning_rate = parse_scalar(value, key)?,
        "dbn_batch" => cfg.dbn_batch = parse_scalar(value, key)?,
        "dbn_cd_steps" => cfg.dbn_cd_steps = parse_scalar(value, key)?,
        "dbn_patch_cap" => cfg.dbn_patch_cap = parse_scalar(value, key)?,
        other => {
            return Err(Error::Format(format!(
                "unknown configuration key {other:?} (known keys: {})",
                KEYS.join(", ")
            )))
        }
    }
    Ok(())
}

/// Parses a config file body on top of the defaults.
pub fn parse_config(text: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!("line {}: expected key=value, got {line:?}", lineno + 1))
        })?;
        apply_key(&mut cfg, key.trim(), value)?;
    }
    Ok(cfg)
}

/// Applies `MASSSEG_CFG_*` environment overrides; the suffix is the
/// lower-cased key name (`ssvm_C` matches `MASSSEG_CFG_SSVM_C`).
pub fn apply_env_overrides(cfg: &mut ModelConfig) -> Result<()> {
    apply_overrides_from(cfg, std::env::vars())
}

fn apply_overrides_from(
    cfg: &mut ModelConfig,
    vars: impl Iterator<Item = (String, String)>,
) -> Result<()> {
    let mut vars: Vec<(String, String)> =
        vars.filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (var, value) in vars {
        let suffix = var[ENV_PREFIX.len()..].to_ascii_lowercase();
        let key = KEYS
            .iter()
            .find(|k| k.to_ascii_lowercase() == suffix)
            .ok_or_else(|| Error::Format(format!("{var}: no configuration key matches")))?;
        apply_key(cfg, key, &value)?;
    }
    Ok(())
}

/// Loads the configuration: defaults, then the optional file, then
/// environment overrides, then validation.
pub fn load_config(path: Option<&Path>) -> Result<ModelConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_config(&text)?
        }
        None => ModelConfig::default(),
    };
    apply_env_overrides(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_survive_an_empty_config() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ModelConfig::default());
        assert_eq!(cfg.roi_side, 40);
        assert_eq!(cfg.patch_sizes, vec![3, 5]);
        assert_eq!(cfg.gmm_components, 5);
        assert_eq!(cfg.ssvm_c, 1000.0);
        assert_eq!(cfg.clamp_epsilon, 1e-3);
        assert_eq!(cfg.gamma, 0.5);
    }

    #[test]
    fn keys_are_parsed_and_applied() {
        let text = "\
# benchmark configuration
seed=7
unaries=prior,dbn
pairwise=potts
patch_sizes=5
layers=20,10
ssvm_C=50
gamma=0.8
preprocess=off
dbn_epochs = 12
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert!(cfg.use_prior && !cfg.use_gmm && cfg.use_dbn);
        assert!(cfg.use_potts && !cfg.use_contrast);
        assert_eq!(cfg.patch_sizes, vec![5]);
        assert_eq!(cfg.layers, vec![20, 10]);
        assert_eq!(cfg.ssvm_c, 50.0);
        assert_eq!(cfg.gamma, 0.8);
        assert!(!cfg.preprocess);
        assert_eq!(cfg.dbn_epochs, 12);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_values_are_rejected() {
        assert!(parse_config("epochs=3\n").is_err());
        assert!(parse_config("seed = x\n").is_err());
        assert!(parse_config("unaries=prior,magic\n").is_err());
        assert!(parse_config("no equals sign\n").is_err());
    }

    #[test]
    fn invalid_configurations_fail_validation() {
        let cfg = parse_config("unaries=dbn\npatch_sizes=4\n").unwrap();
        assert!(cfg.validate().is_err()); // even patch size
        let cfg = parse_config("clamp_epsilon=0.9\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn env_overrides_apply_after_the_file() {
        let mut cfg = parse_config("seed=3\n").unwrap();
        let vars = vec![
            ("MASSSEG_CFG_SEED".to_string(), "11".to_string()),
            ("MASSSEG_CFG_GMM_COMPONENTS".to_string(), "2".to_string()),
            ("UNRELATED".to_string(), "whatever".to_string()),
        ];
        apply_overrides_from(&mut cfg, vars.into_iter()).unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.gmm_components, 2);

        let mut cfg = ModelConfig::default();
        let bad = vec![("MASSSEG_CFG_BOGUS".to_string(), "1".to_string())];
        assert!(apply_overrides_from(&mut cfg, bad.into_iter()).is_err());
    }
}
