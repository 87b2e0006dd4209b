//! Run configuration: a sectioned key=value text file, fully validated
//! before any compute. Unknown sections or keys are rejected outright so a
//! typo cannot silently fall back to a default mid-run.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use gal_core::objective::{RatioMode, ReadoutScale};
use gal_core::trainer::{TrainConfig, TrainMethod};
use gal_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Mnist,
    Cifar10,
}

#[derive(Debug, Clone, Serialize)]
pub struct DataConfig {
    pub source: DataSource,
    pub dir: PathBuf,
    /// 0 = use everything.
    pub train_limit: usize,
    pub test_limit: usize,
    /// Download missing files through the built-in manifest.
    pub fetch: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackSettings {
    pub eps: Vec<f64>,
    pub clip: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisSettings {
    pub layer: usize,
    pub classes: Vec<u8>,
    pub n_mu: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSettings {
    pub layer: usize,
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub fgsm_eps: f64,
}

/// Everything a run needs, resolved from the config file plus flag overrides.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub method: TrainMethod,
    pub attack: AttackSettings,
    pub analysis: AnalysisSettings,
    pub sweep: SweepSettings,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self> {
        let sections = parse_sections(text)?;
        build(sections)
    }

    /// Full validation, including cross-section consistency.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.attack.eps.is_empty() {
            return Err(Error::Config("[attack] eps list is empty".into()));
        }
        if let Some(&bad) = self.attack.eps.iter().find(|&&e| e.is_nan() || e < 0.0) {
            return Err(Error::Config(format!("[attack] eps must be >= 0, got {bad}")));
        }
        let hidden = self.train.hidden_layers();
        if self.analysis.layer >= hidden {
            return Err(Error::Config(format!(
                "[analysis] layer {} out of range for {hidden} hidden layers",
                self.analysis.layer
            )));
        }
        if self.analysis.n_mu == 0 {
            return Err(Error::Config("[analysis] n_mu must be >= 1".into()));
        }
        if self.analysis.classes.is_empty() {
            return Err(Error::Config("[analysis] classes is empty".into()));
        }
        if self.sweep.layer >= hidden {
            return Err(Error::Config(format!(
                "[sweep] layer {} out of range for {hidden} hidden layers",
                self.sweep.layer
            )));
        }
        if self.sweep.alpha_grid.is_empty() || self.sweep.beta_grid.is_empty() {
            return Err(Error::Config("[sweep] grids must be non-empty".into()));
        }
        if self.sweep.fgsm_eps.is_nan() || self.sweep.fgsm_eps < 0.0 {
            return Err(Error::Config("[sweep] fgsm_eps must be >= 0".into()));
        }
        Ok(())
    }
}

type Sections = BTreeMap<String, BTreeMap<String, String>>;

fn parse_sections(text: &str) -> Result<Sections> {
    let mut sections: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim().to_string();
            if sections.contains_key(&name) {
                return Err(Error::Config(format!(
                    "line {}: duplicate section [{name}]",
                    lineno + 1
                )));
            }
            sections.insert(name.clone(), BTreeMap::new());
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected 'key = value', got '{line}'",
                lineno + 1
            )));
        };
        let Some(section) = &current else {
            return Err(Error::Config(format!(
                "line {}: key outside any [section]",
                lineno + 1
            )));
        };
        let entry = sections.get_mut(section).expect("section exists");
        if entry
            .insert(key.trim().to_string(), value.trim().to_string())
            .is_some()
        {
            return Err(Error::Config(format!(
                "line {}: duplicate key '{}' in [{section}]",
                lineno + 1,
                key.trim()
            )));
        }
    }
    Ok(sections)
}

/// Typed view over one section that tracks which keys were consumed.
struct Section<'a> {
    name: &'a str,
    map: BTreeMap<String, String>,
}

impl<'a> Section<'a> {
    fn get(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            Some(raw) => raw.parse().map_err(|e| {
                Error::Config(format!("[{}] {key} = '{raw}': {e}", self.name))
            }),
            None => Ok(default),
        }
    }

    fn parse_list<T: std::str::FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|e| Error::Config(format!("[{}] {key}: '{s}': {e}", self.name)))
                })
                .collect(),
            None => Ok(default),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.map.keys().next() {
            return Err(Error::Config(format!(
                "unknown key '{key}' in section [{}]",
                self.name
            )));
        }
        Ok(())
    }
}

fn build(mut sections: Sections) -> Result<RunConfig> {
    const KNOWN: [&str; 7] = ["data", "model", "train", "attack", "analysis", "sweep", "output"];
    if let Some(name) = sections.keys().find(|k| !KNOWN.contains(&k.as_str())) {
        return Err(Error::Config(format!("unknown section [{name}]")));
    }
    let mut take = |name: &'static str| Section {
        name,
        map: sections.remove(name).unwrap_or_default(),
    };

    let mut data = take("data");
    let source = match data.get("source").as_deref().unwrap_or("mnist") {
        "mnist" => DataSource::Mnist,
        "cifar10" => DataSource::Cifar10,
        other => return Err(Error::Config(format!("[data] unknown source '{other}'"))),
    };
    let data_cfg = DataConfig {
        source,
        dir: PathBuf::from(data.get("dir").unwrap_or_else(|| "data/mnist".into())),
        train_limit: data.parse("train_limit", 0usize)?,
        test_limit: data.parse("test_limit", 0usize)?,
        fetch: data.parse("fetch", false)?,
    };
    data.finish()?;

    let mut model = take("model");
    let dims: Vec<usize> = model.parse_list("dims", vec![784, 1000, 1000, 1000])?;
    let classes: usize = model.parse("classes", 10usize)?;
    let layernorm: bool = model.parse("layernorm", true)?;
    model.finish()?;

    let hidden = dims.len().saturating_sub(1);
    let mut train = take("train");
    let alpha: Vec<f64> = train.parse_list("alpha", vec![1.8; hidden])?;
    let beta: Vec<f64> = train.parse_list("beta", vec![0.7; hidden])?;
    let mut train_cfg = TrainConfig::new(dims, classes, alpha, beta);
    train_cfg.use_layernorm = layernorm;
    train_cfg.epochs_per_block = train.parse("epochs_per_block", 10usize)?;
    train_cfg.batch_size = train.parse("batch_size", 100usize)?;
    train_cfg.lr = train.parse("lr", 0.001f64)?;
    train_cfg.seed = train.parse("seed", 0u64)?;
    train_cfg.eval_epochs = train.parse("eval_epochs", 10usize)?;
    train_cfg.stratified_batches = train.parse("stratified", false)?;
    train_cfg.cache_features = train.parse("cache_features", true)?;
    train_cfg.ratio_mode = match train.get("ratio_mode").as_deref().unwrap_or("mean") {
        "mean" => RatioMode::Mean,
        "total" => RatioMode::Total,
        other => return Err(Error::Config(format!("[train] unknown ratio_mode '{other}'"))),
    };
    train_cfg.readout_scale = match train.get("readout_scale").as_deref().unwrap_or("unit") {
        "unit" => ReadoutScale::Unit,
        "inv_sqrt_width" => ReadoutScale::InvSqrtWidth,
        other => {
            return Err(Error::Config(format!(
                "[train] unknown readout_scale '{other}'"
            )))
        }
    };
    let method = match train.get("method").as_deref().unwrap_or("layerwise") {
        "layerwise" => TrainMethod::Layerwise,
        "end_to_end" => TrainMethod::EndToEnd,
        other => return Err(Error::Config(format!("[train] unknown method '{other}'"))),
    };
    train.finish()?;

    let mut attack = take("attack");
    let attack_cfg = AttackSettings {
        eps: attack.parse_list(
            "eps",
            vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
        )?,
        clip: attack.parse("clip", true)?,
    };
    attack.finish()?;

    let mut analysis = take("analysis");
    let analysis_cfg = AnalysisSettings {
        layer: analysis.parse("layer", hidden.saturating_sub(1))?,
        classes: analysis.parse_list("classes", vec![0u8, 2])?,
        n_mu: analysis.parse("n_mu", 100usize)?,
    };
    analysis.finish()?;

    let mut sweep = take("sweep");
    let sweep_cfg = SweepSettings {
        layer: sweep.parse("layer", hidden.saturating_sub(1))?,
        alpha_grid: sweep.parse_list("alpha_grid", vec![1.0, 1.5, 2.0, 2.5])?,
        beta_grid: sweep.parse_list("beta_grid", vec![0.3, 0.6, 0.9, 1.2])?,
        fgsm_eps: sweep.parse("fgsm_eps", 0.1f64)?,
    };
    sweep.finish()?;

    let mut output = take("output");
    let out_dir = PathBuf::from(output.get("dir").unwrap_or_else(|| "gal-out".into()));
    output.finish()?;

    let cfg = RunConfig {
        data: data_cfg,
        train: train_cfg,
        method,
        attack: attack_cfg,
        analysis: analysis_cfg,
        sweep: sweep_cfg,
        out_dir,
    };
    cfg.validate()?;
    Ok(cfg)
}
