//! Binary checkpoint persistence.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic "GALCKPT1" (8 bytes)
//! format version          u32
//! config block:           u32 pair count, then per pair u32 byte length +
//!                         UTF-8 "key=value" (fixed key order)
//! layer count             u32
//! per layer:              rows u32, cols u32, weights f64 row-major,
//!                         frozen-readout presence u8 [+ rows, cols, data],
//!                         eval-readout presence u8 [+ rows, cols, data]
//! training log:           u32 byte length + JSON array of epoch records
//! ```
//!
//! Save -> load -> save is byte-identical: the config serialization has a
//! fixed key order and floats are written in shortest round-trip decimal.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::LayerBlock;
use crate::objective::{RatioMode, ReadoutScale};
use crate::trainer::{EpochRecord, ModelCheckpoint, TrainConfig, TrainMethod};

const MAGIC: &[u8; 8] = b"GALCKPT1";
const VERSION: u32 = 1;

const CONFIG_KEYS: [&str; 16] = [
    "layer_dims",
    "num_classes",
    "alpha",
    "beta",
    "epochs_per_block",
    "batch_size",
    "lr",
    "seed",
    "use_layernorm",
    "ln_eps",
    "ratio_mode",
    "readout_scale",
    "stratified_batches",
    "cache_features",
    "eval_epochs",
    "method",
];

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: &Path) -> Result<()> {
    let bytes = to_bytes(ckpt)?;
    let tmp = path.with_extension("tmp-ckpt");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes)
}

pub fn to_bytes(ckpt: &ModelCheckpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());

    let pairs = config_pairs(&ckpt.config, ckpt.method);
    out.extend_from_slice(&(pairs.len() as u32).to_le_bytes());
    for (key, value) in &pairs {
        let entry = format!("{key}={value}");
        out.extend_from_slice(&(entry.len() as u32).to_le_bytes());
        out.extend_from_slice(entry.as_bytes());
    }

    out.extend_from_slice(&(ckpt.blocks.len() as u32).to_le_bytes());
    for (l, block) in ckpt.blocks.iter().enumerate() {
        write_matrix(&mut out, &block.weights);
        write_optional_matrix(&mut out, ckpt.frozen_readouts[l].as_ref());
        write_optional_matrix(&mut out, ckpt.eval_readouts[l].as_ref());
    }

    let log_json = serde_json::to_vec(&ckpt.log)
        .map_err(|e| Error::Format { offset: out.len(), msg: format!("log serialization: {e}") })?;
    out.extend_from_slice(&(log_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&log_json);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelCheckpoint> {
    let mut r = ByteReader { bytes, pos: 0 };

    let magic = r.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad magic {magic:?}, expected {MAGIC:?}"),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 8,
            msg: format!("unsupported format version {version}, expected {VERSION}"),
        });
    }

    let pair_count = r.u32("config pair count")? as usize;
    let mut pairs = Vec::with_capacity(pair_count);
    for _ in 0..pair_count {
        let len = r.u32("config entry length")? as usize;
        let offset = r.pos;
        let raw = r.take(len, "config entry")?;
        let text = std::str::from_utf8(raw).map_err(|e| Error::Format {
            offset,
            msg: format!("config entry is not UTF-8: {e}"),
        })?;
        let (key, value) = text.split_once('=').ok_or_else(|| Error::Format {
            offset,
            msg: format!("config entry '{text}' is not key=value"),
        })?;
        pairs.push((key.to_string(), value.to_string()));
    }
    let (config, method) = parse_config(&pairs)?;

    let layer_count = r.u32("layer count")? as usize;
    let mut blocks = Vec::with_capacity(layer_count);
    let mut frozen_readouts = Vec::with_capacity(layer_count);
    let mut eval_readouts = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let weights = read_matrix(&mut r, "block weights")?;
        let mut block = LayerBlock::new(weights, config.use_layernorm);
        block.ln_eps = config.ln_eps;
        blocks.push(block);
        frozen_readouts.push(read_optional_matrix(&mut r, "frozen readout")?);
        eval_readouts.push(read_optional_matrix(&mut r, "eval readout")?);
    }

    let log_len = r.u32("log length")? as usize;
    let offset = r.pos;
    let log_bytes = r.take(log_len, "training log")?;
    let log: Vec<EpochRecord> = serde_json::from_slice(log_bytes).map_err(|e| Error::Format {
        offset,
        msg: format!("training log: {e}"),
    })?;

    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos,
            msg: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }

    // Shape chain sanity.
    if layer_count != config.hidden_layers() {
        return Err(Error::Format {
            offset: r.pos,
            msg: format!(
                "layer count {layer_count} does not match config dims {:?}",
                config.layer_dims
            ),
        });
    }
    for (l, block) in blocks.iter().enumerate() {
        if block.weights.shape() != (config.layer_dims[l], config.layer_dims[l + 1]) {
            return Err(Error::Format {
                offset: r.pos,
                msg: format!("layer {l} weights {:?} break the dimension chain", block.weights.shape()),
            });
        }
    }

    Ok(ModelCheckpoint {
        blocks,
        frozen_readouts,
        eval_readouts,
        config,
        method,
        log,
    })
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                offset: self.pos,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn write_matrix(out: &mut Vec<u8>, m: &Matrix) {
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
}

fn write_optional_matrix(out: &mut Vec<u8>, m: Option<&Matrix>) {
    match m {
        Some(m) => {
            out.push(1);
            write_matrix(out, m);
        }
        None => out.push(0),
    }
}

fn read_matrix(r: &mut ByteReader, what: &str) -> Result<Matrix> {
    let rows = r.u32(what)? as usize;
    let cols = r.u32(what)? as usize;
    let raw = r.take(rows * cols * 8, what)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Matrix::new(rows, cols, data)
}

fn read_optional_matrix(r: &mut ByteReader, what: &str) -> Result<Option<Matrix>> {
    let offset = r.pos;
    let flag = r.take(1, what)?[0];
    match flag {
        0 => Ok(None),
        1 => Ok(Some(read_matrix(r, what)?)),
        other => Err(Error::Format {
            offset,
            msg: format!("presence flag for {what} must be 0 or 1, got {other}"),
        }),
    }
}

fn join_usizes(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn join_f64s(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn config_pairs(cfg: &TrainConfig, method: TrainMethod) -> Vec<(&'static str, String)> {
    vec![
        ("layer_dims", join_usizes(&cfg.layer_dims)),
        ("num_classes", cfg.num_classes.to_string()),
        ("alpha", join_f64s(&cfg.alpha)),
        ("beta", join_f64s(&cfg.beta)),
        ("epochs_per_block", cfg.epochs_per_block.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("lr", cfg.lr.to_string()),
        ("seed", cfg.seed.to_string()),
        ("use_layernorm", cfg.use_layernorm.to_string()),
        ("ln_eps", cfg.ln_eps.to_string()),
        (
            "ratio_mode",
            match cfg.ratio_mode {
                RatioMode::Mean => "mean".into(),
                RatioMode::Total => "total".into(),
            },
        ),
        (
            "readout_scale",
            match cfg.readout_scale {
                ReadoutScale::Unit => "unit".into(),
                ReadoutScale::InvSqrtWidth => "inv_sqrt_width".into(),
            },
        ),
        ("stratified_batches", cfg.stratified_batches.to_string()),
        ("cache_features", cfg.cache_features.to_string()),
        ("eval_epochs", cfg.eval_epochs.to_string()),
        (
            "method",
            match method {
                TrainMethod::Layerwise => "layerwise".into(),
                TrainMethod::EndToEnd => "end_to_end".into(),
            },
        ),
    ]
}

fn parse_config(pairs: &[(String, String)]) -> Result<(TrainConfig, TrainMethod)> {
    let bad = |msg: String| Error::Format { offset: 0, msg };
    let mut map = std::collections::BTreeMap::new();
    for (k, v) in pairs {
        if !CONFIG_KEYS.contains(&k.as_str()) {
            return Err(bad(format!("unknown config key '{k}'")));
        }
        if map.insert(k.as_str(), v.as_str()).is_some() {
            return Err(bad(format!("duplicate config key '{k}'")));
        }
    }
    let get = |k: &str| -> Result<&str> {
        map.get(k)
            .copied()
            .ok_or_else(|| bad(format!("missing config key '{k}'")))
    };

    let parse_usizes = |k: &str| -> Result<Vec<usize>> {
        get(k)?
            .split(',')
            .map(|s| s.parse().map_err(|e| bad(format!("{k}: {e}"))))
            .collect()
    };
    let parse_f64s = |k: &str| -> Result<Vec<f64>> {
        get(k)?
            .split(',')
            .map(|s| s.parse().map_err(|e| bad(format!("{k}: {e}"))))
            .collect()
    };

    let config = TrainConfig {
        layer_dims: parse_usizes("layer_dims")?,
        num_classes: get("num_classes")?.parse().map_err(|e| bad(format!("num_classes: {e}")))?,
        alpha: parse_f64s("alpha")?,
        beta: parse_f64s("beta")?,
        epochs_per_block: get("epochs_per_block")?.parse().map_err(|e| bad(format!("epochs_per_block: {e}")))?,
        batch_size: get("batch_size")?.parse().map_err(|e| bad(format!("batch_size: {e}")))?,
        lr: get("lr")?.parse().map_err(|e| bad(format!("lr: {e}")))?,
        seed: get("seed")?.parse().map_err(|e| bad(format!("seed: {e}")))?,
        use_layernorm: get("use_layernorm")?.parse().map_err(|e| bad(format!("use_layernorm: {e}")))?,
        ln_eps: get("ln_eps")?.parse().map_err(|e| bad(format!("ln_eps: {e}")))?,
        ratio_mode: match get("ratio_mode")? {
            "mean" => RatioMode::Mean,
            "total" => RatioMode::Total,
            other => return Err(bad(format!("unknown ratio_mode '{other}'"))),
        },
        readout_scale: match get("readout_scale")? {
            "unit" => ReadoutScale::Unit,
            "inv_sqrt_width" => ReadoutScale::InvSqrtWidth,
            other => return Err(bad(format!("unknown readout_scale '{other}'"))),
        },
        stratified_batches: get("stratified_batches")?.parse().map_err(|e| bad(format!("stratified_batches: {e}")))?,
        cache_features: get("cache_features")?.parse().map_err(|e| bad(format!("cache_features: {e}")))?,
        eval_epochs: get("eval_epochs")?.parse().map_err(|e| bad(format!("eval_epochs: {e}")))?,
    };
    let method = match get("method")? {
        "layerwise" => TrainMethod::Layerwise,
        "end_to_end" => TrainMethod::EndToEnd,
        other => return Err(bad(format!("unknown method '{other}'"))),
    };
    Ok((config, method))
}
