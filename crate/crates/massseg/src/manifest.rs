//! Dataset manifests: one tab-separated record per line in the order
//! `image path, mask path, center_x, center_y, scale, split`. Paths are
//! resolved relative to the manifest's directory and must exist at load
//! time. Blank lines and `#` comments are ignored.

use crate::{Error, Result};
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!(
                "unknown split tag {other:?} (expected train or test)"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestRecord {
    /// Image path exactly as written in the manifest.
    pub name: String,
    /// Resolved image path.
    pub image_path: PathBuf,
    /// Resolved mask path.
    pub mask_path: PathBuf,
    pub center_x: usize,
    pub center_y: usize,
    pub scale: f64,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(Error::Format(format!(
                    "{}:{}: expected 6 tab-separated fields, found {}",
                    path.display(),
                    lineno + 1,
                    fields.len()
                )));
            }
            let parse_int = |s: &str, what: &str| -> Result<usize> {
                s.parse().map_err(|_| {
                    Error::Format(format!(
                        "{}:{}: bad {what} {s:?}",
                        path.display(),
                        lineno + 1
                    ))
                })
            };
            let scale: f64 = fields[4].parse().map_err(|_| {
                Error::Format(format!(
                    "{}:{}: bad scale {:?}",
                    path.display(),
                    lineno + 1,
                    fields[4]
                ))
            })?;
            if !(scale.is_finite() && scale > 0.0) {
                return Err(Error::Format(format!(
                    "{}:{}: scale must be > 0",
                    path.display(),
                    lineno + 1
                )));
            }
            let image_path = base.join(fields[0]);
            let mask_path = base.join(fields[1]);
            for p in [&image_path, &mask_path] {
                if !p.is_file() {
                    return Err(Error::Format(format!(
                        "{}:{}: referenced file {} does not exist",
                        path.display(),
                        lineno + 1,
                        p.display()
                    )));
                }
            }
            records.push(ManifestRecord {
                name: fields[0].to_string(),
                image_path,
                mask_path,
                center_x: parse_int(fields[2], "center_x")?,
                center_y: parse_int(fields[3], "center_y")?,
                scale,
                split: Split::parse(fields[5])?,
            });
        }
        if records.is_empty() {
            return Err(Error::Format(format!(
                "{}: manifest holds no records",
                path.display()
            )));
        }
        Ok(DatasetManifest { records })
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }
}

/// Serializes manifest lines from relative path strings.
pub fn manifest_line(
    image: &str,
    mask: &str,
    center_x: usize,
    center_y: usize,
    scale: f64,
    split: Split,
) -> String {
    format!("{image}\t{mask}\t{center_x}\t{center_y}\t{scale}\t{split}\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(path: &Path) {
        std::fs::write(path, b"x").unwrap();
    }

    #[test]
    fn loads_and_splits_records() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("a.pgm"));
        touch(&dir.path().join("am.pgm"));
        touch(&dir.path().join("b.pgm"));
        touch(&dir.path().join("bm.pgm"));
        let manifest = dir.path().join("data.tsv");
        let mut text = String::from("# comment line\n\n");
        text.push_str(&manifest_line("a.pgm", "am.pgm", 10, 12, 5.5, Split::Train));
        text.push_str(&manifest_line("b.pgm", "bm.pgm", 7, 9, 4.0, Split::Test));
        std::fs::write(&manifest, text).unwrap();

        let loaded = DatasetManifest::load(&manifest).unwrap();
        assert_eq!(loaded.records.len(), 2);
        assert_eq!(loaded.split(Split::Train).len(), 1);
        assert_eq!(loaded.split(Split::Test).len(), 1);
        let r = &loaded.records[0];
        assert_eq!(r.name, "a.pgm");
        assert_eq!((r.center_x, r.center_y), (10, 12));
        assert_eq!(r.scale, 5.5);
        assert!(r.image_path.ends_with("a.pgm"));
    }

    #[test]
    fn missing_files_and_bad_lines_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("data.tsv");

        std::fs::write(
            &manifest,
            manifest_line("ghost.pgm", "ghostm.pgm", 1, 1, 2.0, Split::Train),
        )
        .unwrap();
        assert!(DatasetManifest::load(&manifest).is_err());

        touch(&dir.path().join("a.pgm"));
        touch(&dir.path().join("am.pgm"));
        std::fs::write(&manifest, "a.pgm\tam.pgm\t1\t1\n").unwrap();
        assert!(DatasetManifest::load(&manifest).is_err());

        std::fs::write(&manifest, "a.pgm\tam.pgm\tx\t1\t2\ttrain\n").unwrap();
        assert!(DatasetManifest::load(&manifest).is_err());

        std::fs::write(&manifest, "a.pgm\tam.pgm\t1\t1\t2\tvalidation\n").unwrap();
        assert!(DatasetManifest::load(&manifest).is_err());

        std::fs::write(&manifest, "").unwrap();
        assert!(DatasetManifest::load(&manifest).is_err());
    }
}
