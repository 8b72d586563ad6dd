//! Versioned binary model files.
//!
//! Layout: an 8-byte magic string, a little-endian `u32` format version,
//! then length-prefixed sections in fixed order (`CONF`, optional `PRIR`,
//! optional `GMMM`, `DBNS`, `WGHT`). All integers are little-endian `u64`,
//! all reals little-endian `f64` bit patterns, so a save/load round trip
//! reproduces every parameter exactly.

use crate::dbn::{DbnModel, RbmLayer};
use crate::lattice::ModelWeights;
use crate::model::{ModelConfig, TrainedModel};
use crate::potentials::{Gmm1d, GmmComponent, GmmModel, PriorModel};
use crate::{Error, Result};
use std::path::Path;

const MAGIC: &[u8; 8] = b"MSEGMODL";
const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64_slice(&mut self, values: &[f64]) {
        self.u64(values.len() as u64);
        for v in values {
            self.f64(*v);
        }
    }

    fn usize_slice(&mut self, values: &[usize]) {
        self.u64(values.len() as u64);
        for v in values {
            self.u64(*v as u64);
        }
    }

    fn section(&mut self, tag: &[u8; 4], body: Vec<u8>) {
        self.buf.extend_from_slice(tag);
        self.u64(body.len() as u64);
        self.buf.extend_from_slice(&body);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    context: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "{}: truncated model file",
                self.context
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!(
                "{}: bad boolean byte {other}",
                self.context
            ))),
        }
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn count(&mut self, limit: usize) -> Result<usize> {
        let v = self.u64()?;
        if v as usize > limit {
            return Err(Error::Format(format!(
                "{}: implausible element count {v}",
                self.context
            )));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self) -> Result<Vec<f64>> {
        let n = self.count(1 << 28)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn usize_vec(&mut self) -> Result<Vec<usize>> {
        let n = self.count(1 << 20)?;
        (0..n).map(|_| Ok(self.u64()? as usize)).collect()
    }

    fn expect_section(&mut self, tag: &[u8; 4]) -> Result<()> {
        let found = self.take(4)?;
        if found != tag {
            return Err(Error::Format(format!(
                "{}: expected section {:?}, found {:?}",
                self.context,
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(found)
            )));
        }
        let _len = self.u64()?;
        Ok(())
    }
}

fn encode_config(cfg: &ModelConfig) -> Vec<u8> {
    let mut w = Writer::new();
    w.u64(cfg.roi_side as u64);
    w.f64(cfg.roi_side_factor);
    w.u8(cfg.use_prior as u8);
    w.u8(cfg.use_gmm as u8);
    w.u8(cfg.use_dbn as u8);
    w.usize_slice(&cfg.patch_sizes);
    w.u8(cfg.use_potts as u8);
    w.u8(cfg.use_contrast as u8);
    w.usize_slice(&cfg.layers);
    w.u64(cfg.gmm_components as u64);
    w.f64(cfg.ssvm_c);
    w.f64(cfg.ssvm_tol);
    w.u64(cfg.ssvm_max_iters as u64);
    w.f64(cfg.clamp_epsilon);
    w.f64(cfg.gamma);
    w.u64(cfg.seed);
    w.u8(cfg.preprocess as u8);
    w.u64(cfg.dbn_epochs as u64);
    w.f64(cfg.dbn_learning_rate);
    w.u64(cfg.dbn_batch as u64);
    w.u64(cfg.dbn_cd_steps as u64);
    w.u64(cfg.dbn_patch_cap as u64);
    w.buf
}

fn decode_config(r: &mut Reader) -> Result<ModelConfig> {
    Ok(ModelConfig {
        roi_side: r.u64()? as usize,
        roi_side_factor: r.f64()?,
        use_prior: r.bool()?,
        use_gmm: r.bool()?,
        use_dbn: r.bool()?,
        patch_sizes: r.usize_vec()?,
        use_potts: r.bool()?,
        use_contrast: r.bool()?,
        layers: r.usize_vec()?,
        gmm_components: r.u64()? as usize,
        ssvm_c: r.f64()?,
        ssvm_tol: r.f64()?,
        ssvm_max_iters: r.u64()? as usize,
        clamp_epsilon: r.f64()?,
        gamma: r.f64()?,
        seed: r.u64()?,
        preprocess: r.bool()?,
        dbn_epochs: r.u64()? as usize,
        dbn_learning_rate: r.f64()?,
        dbn_batch: r.u64()? as usize,
        dbn_cd_steps: r.u64()? as usize,
        dbn_patch_cap: r.u64()? as usize,
    })
}

fn encode_gmm1d(w: &mut Writer, g: &Gmm1d) {
    w.u64(g.components().len() as u64);
    for c in g.components() {
        w.f64(c.weight);
        w.f64(c.mean);
        w.f64(c.variance);
    }
}

fn decode_gmm1d(r: &mut Reader) -> Result<Gmm1d> {
    let n = r.count(1 << 16)?;
    let comps = (0..n)
        .map(|_| {
            Ok(GmmComponent {
                weight: r.f64()?,
                mean: r.f64()?,
                variance: r.f64()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Gmm1d::new(comps)
}

fn encode_layer(w: &mut Writer, layer: &RbmLayer) {
    w.u64(layer.visible_count() as u64);
    w.u64(layer.hidden_count() as u64);
    w.f64_slice(layer.weights());
    w.f64_slice(layer.visible_bias());
    w.f64_slice(layer.hidden_bias());
}

fn decode_layer(r: &mut Reader) -> Result<RbmLayer> {
    let visible = r.u64()? as usize;
    let hidden = r.u64()? as usize;
    let weights = r.f64_vec()?;
    let vb = r.f64_vec()?;
    let hb = r.f64_vec()?;
    RbmLayer::new(visible, hidden, weights, vb, hb)
}

/// Serializes a trained model to its binary form.
pub fn encode_model(model: &TrainedModel) -> Vec<u8> {
    let mut out = Writer::new();
    out.buf.extend_from_slice(MAGIC);
    out.buf.extend_from_slice(&VERSION.to_le_bytes());

    out.section(b"CONF", encode_config(&model.config));

    if let Some(prior) = &model.prior {
        let mut w = Writer::new();
        w.u64(prior.width() as u64);
        w.u64(prior.height() as u64);
        w.f64(prior.epsilon());
        w.f64_slice(prior.probabilities());
        out.section(b"PRIR", w.buf);
    }
    if let Some(gmm) = &model.gmm {
        let mut w = Writer::new();
        w.f64(gmm.epsilon());
        encode_gmm1d(&mut w, gmm.mass());
        encode_gmm1d(&mut w, gmm.background());
        out.section(b"GMMM", w.buf);
    }

    let mut w = Writer::new();
    w.u64(model.dbns.len() as u64);
    for dbn in &model.dbns {
        w.u64(dbn.patch_size() as u64);
        w.f64(dbn.epsilon());
        w.u64(dbn.layers().len() as u64);
        for layer in dbn.layers() {
            encode_layer(&mut w, layer);
        }
        encode_layer(&mut w, dbn.top());
    }
    out.section(b"DBNS", w.buf);

    let mut w = Writer::new();
    w.f64_slice(model.weights.unary());
    w.f64_slice(model.weights.pairwise());
    out.section(b"WGHT", w.buf);

    out.buf
}

/// Parses a binary model and validates its internal consistency.
pub fn decode_model(bytes: &[u8], context: &str) -> Result<TrainedModel> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        context,
    };
    if r.take(8)? != MAGIC {
        return Err(Error::Format(format!("{context}: not a model file")));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!(
            "{context}: unsupported model version {version}"
        )));
    }

    r.expect_section(b"CONF")?;
    let config = decode_config(&mut r)?;

    let prior = if config.use_prior {
        r.expect_section(b"PRIR")?;
        let width = r.u64()? as usize;
        let height = r.u64()? as usize;
        let epsilon = r.f64()?;
        let prob = r.f64_vec()?;
        Some(PriorModel::new(width, height, prob, epsilon)?)
    } else {
        None
    };
    let gmm = if config.use_gmm {
        r.expect_section(b"GMMM")?;
        let epsilon = r.f64()?;
        let mass = decode_gmm1d(&mut r)?;
        let background = decode_gmm1d(&mut r)?;
        Some(GmmModel::new(mass, background, epsilon))
    } else {
        None
    };

    r.expect_section(b"DBNS")?;
    let dbn_count = r.count(1 << 10)?;
    let mut dbns = Vec::with_capacity(dbn_count);
    for _ in 0..dbn_count {
        let patch_size = r.u64()? as usize;
        let epsilon = r.f64()?;
        let layer_count = r.count(1 << 10)?;
        let layers = (0..layer_count)
            .map(|_| decode_layer(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let top = decode_layer(&mut r)?;
        dbns.push(DbnModel::new(layers, top, patch_size, epsilon)?);
    }

    r.expect_section(b"WGHT")?;
    let unary = r.f64_vec()?;
    let pairwise = r.f64_vec()?;
    let weights = ModelWeights::new(unary, pairwise)?;

    let model = TrainedModel {
        config,
        prior,
        gmm,
        dbns,
        weights,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(path: &Path, model: &TrainedModel) -> Result<()> {
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, &path.display().to_string())
}
