//! The layer-wise training protocol.
//!
//! Blocks are trained strictly one at a time: while block `l` trains against
//! its local objective (through a frozen random readout), every earlier block
//! is frozen and no gradient crosses below `l`. After all blocks are trained,
//! per-layer evaluation readouts (linear probes) are fitted on frozen
//! features. An end-to-end backpropagation baseline with a matched epoch
//! budget lives here too, for robustness comparisons.

use serde::{Deserialize, Serialize};

use crate::dataset::{batch_indices, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::network::{
    forward_block, forward_stack, grad_block, grad_block_params, LayerBlock, DEFAULT_LN_EPS,
};
use crate::objective::{
    accuracy, cross_entropy_full, local_loss, GalConfig, RatioMode, ReadoutHead, ReadoutScale,
};
use crate::optimizer::AdamState;

// Stream tags for deriving independent per-phase generators from one seed.
const TAG_MODEL_INIT: u64 = 0x01;
const TAG_FROZEN_READOUT: u64 = 0x1000;
const TAG_BLOCK_SHUFFLE: u64 = 0x2000;
const TAG_EVAL_SHUFFLE: u64 = 0x3000;
const TAG_BASELINE_READOUT: u64 = 0x4000;
const TAG_BASELINE_SHUFFLE: u64 = 0x5000;

/// How a checkpoint's blocks were fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMethod {
    Layerwise,
    EndToEnd,
}

/// Full training configuration. `layer_dims` lists the input width followed
/// by every hidden width; `alpha`/`beta` hold one entry per hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub layer_dims: Vec<usize>,
    pub num_classes: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub epochs_per_block: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub use_layernorm: bool,
    pub ln_eps: f64,
    pub ratio_mode: RatioMode,
    pub readout_scale: ReadoutScale,
    pub stratified_batches: bool,
    /// Cache frozen-layer activations once per phase instead of recomputing
    /// them per batch. Bitwise-identical results either way; cache trades
    /// memory for a large speedup at desk scale.
    pub cache_features: bool,
    pub eval_epochs: usize,
}

impl TrainConfig {
    /// Baseline settings for the given architecture; callers override fields
    /// as needed.
    pub fn new(layer_dims: Vec<usize>, num_classes: usize, alpha: Vec<f64>, beta: Vec<f64>) -> Self {
        TrainConfig {
            layer_dims,
            num_classes,
            alpha,
            beta,
            epochs_per_block: 10,
            batch_size: 100,
            lr: 0.001,
            seed: 0,
            use_layernorm: true,
            ln_eps: DEFAULT_LN_EPS,
            ratio_mode: RatioMode::Mean,
            readout_scale: ReadoutScale::Unit,
            stratified_batches: false,
            cache_features: true,
            eval_epochs: 10,
        }
    }

    pub fn hidden_layers(&self) -> usize {
        self.layer_dims.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::Config(
                "layer_dims needs an input width and at least one hidden width".into(),
            ));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::Config("layer dims must be >= 1".into()));
        }
        let hidden = self.hidden_layers();
        if self.alpha.len() != hidden || self.beta.len() != hidden {
            return Err(Error::Config(format!(
                "alpha/beta need one entry per hidden layer: got {} and {} for {hidden} layers",
                self.alpha.len(),
                self.beta.len()
            )));
        }
        for (&a, &b) in self.alpha.iter().zip(&self.beta) {
            GalConfig::new(a, b)?;
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if self.epochs_per_block == 0 || self.eval_epochs == 0 {
            return Err(Error::Config("epoch counts must be >= 1".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 || self.lr.is_infinite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.ln_eps.is_nan() || self.ln_eps <= 0.0 {
            return Err(Error::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }

    fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.num_classes != self.num_classes {
            return Err(Error::Config(format!(
                "dataset has {} classes, config expects {}",
                ds.num_classes, self.num_classes
            )));
        }
        if ds.images.cols() != self.layer_dims[0] {
            return Err(Error::Config(format!(
                "dataset sample width {} does not match input width {}",
                ds.images.cols(),
                self.layer_dims[0]
            )));
        }
        if ds.is_empty() {
            return Err(Error::Data("training dataset is empty".into()));
        }
        Ok(())
    }

    fn gal_config(&self, layer: usize) -> GalConfig {
        GalConfig::new(self.alpha[layer], self.beta[layer])
            .expect("validated")
            .with_ratio_mode(self.ratio_mode)
    }
}

/// One epoch of one training phase, as recorded in the checkpoint log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Hidden-layer index for layer-wise phases; equal to the block count
    /// for the end-to-end baseline (whole stack trains at once).
    pub layer: usize,
    pub epoch: usize,
    pub mean_ce: f64,
    pub mean_gal: f64,
    /// Mean inter/intra ratio over the batches where it was defined.
    pub mean_ratio: Option<f64>,
    /// Batches whose ratio tracked the target within 10% of alpha.
    pub batches_in_band: usize,
    pub total_batches: usize,
    pub skipped_batches: usize,
}

/// A fully trained model: blocks, the random readouts used during block
/// training, post-hoc evaluation readouts, config, and the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub blocks: Vec<LayerBlock>,
    pub frozen_readouts: Vec<Option<Matrix>>,
    pub eval_readouts: Vec<Option<Matrix>>,
    pub config: TrainConfig,
    pub method: TrainMethod,
    pub log: Vec<EpochRecord>,
}

impl ModelCheckpoint {
    pub fn num_layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.blocks.len() {
            return Err(Error::Index {
                what: "layer",
                index: layer,
                len: self.blocks.len(),
            });
        }
        Ok(())
    }

    /// The trained evaluation readout at `layer`, or a state error telling
    /// the caller to train readouts first.
    pub fn eval_readout(&self, layer: usize) -> Result<&Matrix> {
        self.check_layer(layer)?;
        self.eval_readouts[layer].as_ref().ok_or_else(|| {
            Error::State(format!(
                "no evaluation readout trained at layer {layer}; run readout training first"
            ))
        })
    }
}

fn init_blocks(cfg: &TrainConfig) -> Vec<LayerBlock> {
    let mut rng = Rng::derive(cfg.seed, TAG_MODEL_INIT);
    let mut blocks = Vec::with_capacity(cfg.hidden_layers());
    for l in 0..cfg.hidden_layers() {
        let mut block = LayerBlock::init(
            &mut rng,
            cfg.layer_dims[l],
            cfg.layer_dims[l + 1],
            cfg.use_layernorm,
        );
        block.ln_eps = cfg.ln_eps;
        blocks.push(block);
    }
    blocks
}

fn ensure_finite(loss: f64, layer: usize, epoch: usize, batch: usize, indices: &[usize]) -> Result<()> {
    if loss.is_finite() {
        return Ok(());
    }
    Err(Error::Numeric(format!(
        "non-finite loss {loss} at layer {layer}, epoch {epoch}, batch {batch}; sample indices {indices:?}"
    )))
}

/// Trains every block in sequence against its local objective. Blocks below
/// the one being trained are frozen; blocks above do not exist yet as far as
/// the objective is concerned.
pub fn train_layerwise(ds_train: &Dataset, cfg: &TrainConfig) -> Result<ModelCheckpoint> {
    cfg.validate()?;
    cfg.check_dataset(ds_train)?;

    let layers = cfg.hidden_layers();
    let mut blocks = init_blocks(cfg);
    let mut frozen_readouts: Vec<Option<Matrix>> = vec![None; layers];
    let mut log = Vec::with_capacity(layers * cfg.epochs_per_block);

    // Activations of the dataset at the input of the block being trained.
    // Identical arithmetic to per-batch recomputation, since every forward
    // accumulates row-locally.
    let mut cached_input = cfg.cache_features.then(|| ds_train.images.clone());

    for layer in 0..layers {
        let mut readout_rng = Rng::derive(cfg.seed, TAG_FROZEN_READOUT + layer as u64);
        let head = ReadoutHead::random(
            &mut readout_rng,
            cfg.layer_dims[layer + 1],
            cfg.num_classes,
            cfg.readout_scale,
        );
        let gal_cfg = cfg.gal_config(layer);
        let mut adam = AdamState::new(cfg.layer_dims[layer], cfg.layer_dims[layer + 1], cfg.lr);
        let mut shuffle_rng = Rng::derive(cfg.seed, TAG_BLOCK_SHUFFLE + layer as u64);

        for epoch in 0..cfg.epochs_per_block {
            let chunks = batch_indices(
                &ds_train.labels,
                cfg.num_classes,
                cfg.batch_size,
                &mut shuffle_rng,
                cfg.stratified_batches,
            )?;

            let mut ce_sum = 0.0;
            let mut gal_sum = 0.0;
            let mut ratio_sum = 0.0;
            let mut ratio_count = 0usize;
            let mut in_band = 0usize;
            let mut skipped = 0usize;

            for (batch_no, chunk) in chunks.iter().enumerate() {
                let x = match &cached_input {
                    Some(features) => features.select_rows(chunk),
                    None => {
                        let raw = ds_train.images.select_rows(chunk);
                        if layer == 0 {
                            raw
                        } else {
                            let (h, _) = forward_stack(&blocks[..layer], &raw)?;
                            h
                        }
                    }
                };
                let y: Vec<u8> = chunk.iter().map(|&i| ds_train.labels[i]).collect();

                let (h, cache) = forward_block(&blocks[layer], &x)?;
                let out = local_loss(&h, &y, &head, &gal_cfg)?;
                ensure_finite(out.loss, layer, epoch, batch_no, chunk)?;

                let grad_w = grad_block_params(&blocks[layer], &cache, &out.grad)?;
                adam.step(&mut blocks[layer].weights, &grad_w)?;

                ce_sum += out.ce;
                gal_sum += out.gal;
                if let Some(r) = out.ratio {
                    ratio_sum += r;
                    ratio_count += 1;
                    if (r - gal_cfg.alpha).abs() <= 0.1 * gal_cfg.alpha {
                        in_band += 1;
                    }
                }
                if out.gal_skipped {
                    skipped += 1;
                }
            }

            log.push(EpochRecord {
                layer,
                epoch,
                mean_ce: ce_sum / chunks.len() as f64,
                mean_gal: gal_sum / chunks.len() as f64,
                mean_ratio: (ratio_count > 0).then(|| ratio_sum / ratio_count as f64),
                batches_in_band: in_band,
                total_batches: chunks.len(),
                skipped_batches: skipped,
            });
        }

        frozen_readouts[layer] = Some(head.weights);
        if let Some(features) = cached_input.take() {
            let (next, _) = forward_block(&blocks[layer], &features)?;
            cached_input = Some(next);
        }
    }

    Ok(ModelCheckpoint {
        blocks,
        frozen_readouts,
        eval_readouts: vec![None; layers],
        config: cfg.clone(),
        method: TrainMethod::Layerwise,
        log,
    })
}

/// Fits a fresh linear readout on the frozen features of every layer (the
/// per-layer accuracy probes). Blocks are untouched.
pub fn train_eval_readouts(
    ckpt: &mut ModelCheckpoint,
    ds_train: &Dataset,
    epochs: usize,
) -> Result<()> {
    if epochs == 0 {
        return Err(Error::Config("eval epochs must be >= 1".into()));
    }
    ckpt.config.check_dataset(ds_train)?;

    let mut features = ds_train.images.clone();
    for layer in 0..ckpt.blocks.len() {
        let (next, _) = forward_block(&ckpt.blocks[layer], &features)?;
        features = next;

        let width = ckpt.blocks[layer].output_dim();
        let mut readout = ReadoutHead::trainable(width, ckpt.config.num_classes).weights;
        let mut adam = AdamState::new(width, ckpt.config.num_classes, ckpt.config.lr);
        let mut shuffle_rng = Rng::derive(ckpt.config.seed, TAG_EVAL_SHUFFLE + layer as u64);

        for epoch in 0..epochs {
            let chunks = batch_indices(
                &ds_train.labels,
                ckpt.config.num_classes,
                ckpt.config.batch_size,
                &mut shuffle_rng,
                ckpt.config.stratified_batches,
            )?;
            for (batch_no, chunk) in chunks.iter().enumerate() {
                let x = features.select_rows(chunk);
                let y: Vec<u8> = chunk.iter().map(|&i| ds_train.labels[i]).collect();
                let (loss, _, grad_r) = cross_entropy_full(&x, &readout, &y)?;
                ensure_finite(loss, layer, epoch, batch_no, chunk)?;
                adam.step(&mut readout, &grad_r)?;
            }
        }
        ckpt.eval_readouts[layer] = Some(readout);
    }
    Ok(())
}

/// End-to-end backpropagation baseline on the same architecture: a single
/// trainable readout on top, plain cross-entropy, gradients flowing through
/// every block. The epoch budget matches the layer-wise run
/// (`hidden_layers * epochs_per_block`).
pub fn train_end_to_end_baseline(ds_train: &Dataset, cfg: &TrainConfig) -> Result<ModelCheckpoint> {
    cfg.validate()?;
    cfg.check_dataset(ds_train)?;

    let layers = cfg.hidden_layers();
    let mut blocks = init_blocks(cfg);
    let top_width = *cfg.layer_dims.last().expect("validated");
    let mut readout_rng = Rng::derive(cfg.seed, TAG_BASELINE_READOUT);
    let mut readout = readout_rng.gaussian_matrix(
        top_width,
        cfg.num_classes,
        0.0,
        1.0 / (top_width as f64).sqrt(),
    );

    let mut adams: Vec<AdamState> = (0..layers)
        .map(|l| AdamState::new(cfg.layer_dims[l], cfg.layer_dims[l + 1], cfg.lr))
        .collect();
    let mut adam_readout = AdamState::new(top_width, cfg.num_classes, cfg.lr);
    let mut shuffle_rng = Rng::derive(cfg.seed, TAG_BASELINE_SHUFFLE);

    let total_epochs = layers * cfg.epochs_per_block;
    let mut log = Vec::with_capacity(total_epochs);

    for epoch in 0..total_epochs {
        let chunks = batch_indices(
            &ds_train.labels,
            cfg.num_classes,
            cfg.batch_size,
            &mut shuffle_rng,
            cfg.stratified_batches,
        )?;
        let mut ce_sum = 0.0;

        for (batch_no, chunk) in chunks.iter().enumerate() {
            let x = ds_train.images.select_rows(chunk);
            let y: Vec<u8> = chunk.iter().map(|&i| ds_train.labels[i]).collect();

            let (h_top, caches) = forward_stack(&blocks, &x)?;
            let (loss, grad_h, grad_r) = cross_entropy_full(&h_top, &readout, &y)?;
            ensure_finite(loss, layers, epoch, batch_no, chunk)?;
            ce_sum += loss;

            // Backward through the stack; the input gradient of block 0 is
            // not needed.
            let mut upstream = grad_h;
            for l in (0..layers).rev() {
                if l == 0 {
                    let grad_w = grad_block_params(&blocks[0], &caches[0], &upstream)?;
                    adams[0].step(&mut blocks[0].weights, &grad_w)?;
                } else {
                    let (grad_w, grad_in) = grad_block(&blocks[l], &caches[l], &upstream)?;
                    adams[l].step(&mut blocks[l].weights, &grad_w)?;
                    upstream = grad_in;
                }
            }
            adam_readout.step(&mut readout, &grad_r)?;
        }

        log.push(EpochRecord {
            layer: layers,
            epoch,
            mean_ce: ce_sum / chunks.len() as f64,
            mean_gal: 0.0,
            mean_ratio: None,
            batches_in_band: 0,
            total_batches: chunks.len(),
            skipped_batches: 0,
        });
    }

    let mut eval_readouts: Vec<Option<Matrix>> = vec![None; layers];
    eval_readouts[layers - 1] = Some(readout);

    Ok(ModelCheckpoint {
        blocks,
        frozen_readouts: vec![None; layers],
        eval_readouts,
        config: cfg.clone(),
        method: TrainMethod::EndToEnd,
        log,
    })
}

/// Test accuracy of the evaluation readout at `layer`.
pub fn evaluate(ckpt: &ModelCheckpoint, ds_test: &Dataset, layer: usize) -> Result<f64> {
    let readout = ckpt.eval_readout(layer)?;
    let features = crate::network::features_at(&ckpt.blocks, &ds_test.images, layer)?;
    accuracy(&features, readout, &ds_test.labels)
}

/// Accuracy at `layer` on externally supplied inputs (used by the attack
/// harness, which evaluates perturbed pixels).
pub fn evaluate_inputs(
    ckpt: &ModelCheckpoint,
    x: &Matrix,
    labels: &[u8],
    layer: usize,
) -> Result<f64> {
    let readout = ckpt.eval_readout(layer)?;
    let features = crate::network::features_at(&ckpt.blocks, x, layer)?;
    accuracy(&features, readout, labels)
}

/// Sweep-cell retraining: keeps blocks below `layer` from the base
/// checkpoint, re-initializes and retrains block `layer` with the given
/// `(alpha, beta)`, then fits that layer's evaluation readout. Blocks above
/// `layer` are copied unchanged but their readouts are dropped (they belong
/// to the base hyperparameters).
pub fn retrain_layer(
    base: &ModelCheckpoint,
    ds_train: &Dataset,
    layer: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
) -> Result<ModelCheckpoint> {
    base.check_layer(layer)?;
    let mut cfg = base.config.clone();
    cfg.alpha[layer] = alpha;
    cfg.beta[layer] = beta;
    cfg.seed = seed;
    cfg.validate()?;
    cfg.check_dataset(ds_train)?;

    let mut ckpt = ModelCheckpoint {
        blocks: base.blocks.clone(),
        frozen_readouts: base.frozen_readouts.clone(),
        eval_readouts: vec![None; base.blocks.len()],
        config: cfg.clone(),
        method: base.method,
        log: Vec::new(),
    };

    // Fresh block init from the cell seed.
    let mut init_rng = Rng::derive(seed, TAG_MODEL_INIT + layer as u64);
    let mut block = LayerBlock::init(
        &mut init_rng,
        cfg.layer_dims[layer],
        cfg.layer_dims[layer + 1],
        cfg.use_layernorm,
    );
    block.ln_eps = cfg.ln_eps;
    ckpt.blocks[layer] = block;

    let mut readout_rng = Rng::derive(seed, TAG_FROZEN_READOUT + layer as u64);
    let head = ReadoutHead::random(
        &mut readout_rng,
        cfg.layer_dims[layer + 1],
        cfg.num_classes,
        cfg.readout_scale,
    );
    let gal_cfg = cfg.gal_config(layer);
    let mut adam = AdamState::new(cfg.layer_dims[layer], cfg.layer_dims[layer + 1], cfg.lr);
    let mut shuffle_rng = Rng::derive(seed, TAG_BLOCK_SHUFFLE + layer as u64);

    let base_features = if layer == 0 {
        ds_train.images.clone()
    } else {
        let (h, _) = forward_stack(&ckpt.blocks[..layer], &ds_train.images)?;
        h
    };

    for epoch in 0..cfg.epochs_per_block {
        let chunks = batch_indices(
            &ds_train.labels,
            cfg.num_classes,
            cfg.batch_size,
            &mut shuffle_rng,
            cfg.stratified_batches,
        )?;
        for (batch_no, chunk) in chunks.iter().enumerate() {
            let x = base_features.select_rows(chunk);
            let y: Vec<u8> = chunk.iter().map(|&i| ds_train.labels[i]).collect();
            let (h, cache) = forward_block(&ckpt.blocks[layer], &x)?;
            let out = local_loss(&h, &y, &head, &gal_cfg)?;
            ensure_finite(out.loss, layer, epoch, batch_no, chunk)?;
            let grad_w = grad_block_params(&ckpt.blocks[layer], &cache, &out.grad)?;
            adam.step(&mut ckpt.blocks[layer].weights, &grad_w)?;
        }
    }
    ckpt.frozen_readouts[layer] = Some(head.weights);

    // Probe for the retrained layer only.
    let (features, _) = forward_block(&ckpt.blocks[layer], &base_features)?;
    let width = ckpt.blocks[layer].output_dim();
    let mut readout = ReadoutHead::trainable(width, cfg.num_classes).weights;
    let mut probe_adam = AdamState::new(width, cfg.num_classes, cfg.lr);
    let mut probe_rng = Rng::derive(seed, TAG_EVAL_SHUFFLE + layer as u64);
    for epoch in 0..cfg.eval_epochs {
        let chunks = batch_indices(
            &ds_train.labels,
            cfg.num_classes,
            cfg.batch_size,
            &mut probe_rng,
            cfg.stratified_batches,
        )?;
        for (batch_no, chunk) in chunks.iter().enumerate() {
            let x = features.select_rows(chunk);
            let y: Vec<u8> = chunk.iter().map(|&i| ds_train.labels[i]).collect();
            let (loss, _, grad_r) = cross_entropy_full(&x, &readout, &y)?;
            ensure_finite(loss, layer, epoch, batch_no, chunk)?;
            probe_adam.step(&mut readout, &grad_r)?;
        }
    }
    ckpt.eval_readouts[layer] = Some(readout);

    Ok(ckpt)
}
