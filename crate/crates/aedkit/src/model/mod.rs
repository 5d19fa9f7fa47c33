//! Configurable Xception-family depthwise-separable CNN.
//!
//! The layout follows the classic three-part design: an entry flow
//! (two stem convs, then residual separable blocks at 128/256/728
//! channels), a 728-channel middle-flow block repeated `middle_repeats`
//! times (8 for the full model, 0 for the small variant), and an exit flow
//! (a 728-to-1024 residual block, separable convs at 1536 and 2048, global
//! average pooling, linear head). All channel counts scale by
//! `width_multiplier`, which keeps the topology intact for desk-scale
//! tests.
//!
//! Interpretation choices: spectrogram inputs keep the original strides
//! with same-padding on both axes (mel axis pools down with ceil
//! semantics); global average pooling spans time and frequency so any
//! `T >= 32` works (each of the five stride-2 stages needs one frame); no
//! dropout. Batch norm uses per-batch statistics while training and
//! running averages (momentum 0.9) at evaluation.

mod layers;
mod scalar;

pub use layers::{Grads, ParamKind, Tape};
pub use scalar::Scalar;

use crate::archive::{ArchiveError, Tensor, WeightArchive};
use crate::rng::SeededRng;
use layers::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, BatchNorm, Conv2d, Linear,
    MaxPool, SepConv,
};
use ndarray::{Array2, Array4, ArrayViewD, ArrayViewMutD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum time frames: one frame per stride-2 stage (2^5).
pub const MIN_TIME_FRAMES: usize = 32;

/// Name of the classification head's weight tensor in archives.
pub const HEAD_WEIGHT: &str = "head.weight";
/// Name of the classification head's bias tensor in archives.
pub const HEAD_BIAS: &str = "head.bias";
/// Name of the first convolution (the input-channel surgery target).
pub const STEM_CONV1_WEIGHT: &str = "stem.conv1.weight";
/// Prefix of the `i`-th middle-flow block's tensors.
pub fn middle_prefix(i: usize) -> String {
    format!("middle.{i}")
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input shape {got:?} does not match (batch, {channels}, {mel_bins}, T)")]
    BadInputShape {
        got: Vec<usize>,
        channels: usize,
        mel_bins: usize,
    },
    #[error("input has {got} time frames; need at least {min}")]
    TooFewFrames { got: usize, min: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("archive is missing tensors: {0:?}")]
    MissingTensors(Vec<String>),
    #[error("archive tensors have wrong shapes: {0:?}")]
    MismatchedTensors(Vec<String>),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

fn default_middle_repeats() -> usize {
    8
}
fn default_width() -> f64 {
    1.0
}
fn default_n_classes() -> usize {
    50
}
fn default_mel_bins() -> usize {
    80
}
fn default_input_channels() -> usize {
    1
}

/// Architecture knobs. `middle_repeats = 8` is the full model,
/// `0` the small one; `width_multiplier` scales every channel count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub middle_repeats: usize,
    pub width_multiplier: f64,
    pub n_classes: usize,
    pub input_mel_bins: usize,
    pub input_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            middle_repeats: default_middle_repeats(),
            width_multiplier: default_width(),
            n_classes: default_n_classes(),
            input_mel_bins: default_mel_bins(),
            input_channels: default_input_channels(),
        }
    }
}

impl ModelConfig {
    /// The full architecture (8 middle-flow repeats).
    pub fn xception(n_classes: usize) -> Self {
        Self {
            n_classes,
            ..Self::default()
        }
    }

    /// The small variant: no middle-flow repeats.
    pub fn xception_small(n_classes: usize) -> Self {
        Self {
            middle_repeats: 0,
            n_classes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return Err(ModelError::InvalidConfig(format!(
                "width_multiplier {} outside (0, 1]",
                self.width_multiplier
            )));
        }
        if self.n_classes == 0 {
            return Err(ModelError::InvalidConfig("n_classes must be >= 1".into()));
        }
        if self.input_mel_bins == 0 {
            return Err(ModelError::InvalidConfig("input_mel_bins must be >= 1".into()));
        }
        if self.input_channels == 0 {
            return Err(ModelError::InvalidConfig("input_channels must be >= 1".into()));
        }
        Ok(())
    }

    /// A channel count scaled by the width multiplier, at least 1.
    pub fn scaled(&self, channels: usize) -> usize {
        ((channels as f64 * self.width_multiplier).round() as usize).max(1)
    }
}

struct ResidualBlock<F: Scalar> {
    pre_relu: bool,
    sep1: SepConv<F>,
    bn1: BatchNorm<F>,
    sep2: SepConv<F>,
    bn2: BatchNorm<F>,
    pool: MaxPool,
    skip_conv: Conv2d<F>,
    skip_bn: BatchNorm<F>,
}

impl<F: Scalar> ResidualBlock<F> {
    /// `in -> mid -> out` with a strided 1x1 projection skip.
    fn new(in_ch: usize, mid_ch: usize, out_ch: usize, pre_relu: bool, rng: &mut SeededRng) -> Self {
        Self {
            pre_relu,
            sep1: SepConv::new(in_ch, mid_ch, rng),
            bn1: BatchNorm::new(mid_ch),
            sep2: SepConv::new(mid_ch, out_ch, rng),
            bn2: BatchNorm::new(out_ch),
            pool: MaxPool,
            skip_conv: Conv2d::new(in_ch, out_ch, 1, 2, 0, rng),
            skip_bn: BatchNorm::new(out_ch),
        }
    }

    fn forward_train(&mut self, x: &Array4<F>, tape: &mut Tape<F>) -> Array4<F> {
        let mut h = if self.pre_relu {
            relu(x, Some(tape))
        } else {
            x.clone()
        };
        h = self.sep1.forward(&h, Some(tape));
        h = self.bn1.forward_train(&h, tape);
        h = relu(&h, Some(tape));
        h = self.sep2.forward(&h, Some(tape));
        h = self.bn2.forward_train(&h, tape);
        h = self.pool.forward(&h, Some(tape));
        let s = self.skip_conv.forward(x, Some(tape));
        let s = self.skip_bn.forward_train(&s, tape);
        h + s
    }

    fn forward_eval(&self, x: &Array4<F>) -> Array4<F> {
        let mut h = if self.pre_relu { relu(x, None) } else { x.clone() };
        h = self.sep1.forward(&h, None);
        h = self.bn1.forward_eval(&h);
        h = relu(&h, None);
        h = self.sep2.forward(&h, None);
        h = self.bn2.forward_eval(&h);
        h = self.pool.forward(&h, None);
        let s = self.skip_bn.forward_eval(&self.skip_conv.forward(x, None));
        h + s
    }

    fn backward(
        &self,
        dy: &Array4<F>,
        tape: &mut Tape<F>,
        prefix: &str,
        grads: &mut Grads<F>,
    ) -> Array4<F> {
        let ds = self
            .skip_bn
            .backward(dy, tape, &format!("{prefix}.skip.bn"), grads);
        let dx_skip = self
            .skip_conv
            .backward(&ds, tape, &format!("{prefix}.skip.conv"), grads);

        let mut dm = self.pool.backward(dy, tape);
        dm = self.bn2.backward(&dm, tape, &format!("{prefix}.bn2"), grads);
        dm = self.sep2.backward(&dm, tape, &format!("{prefix}.sep2"), grads);
        dm = relu_backward(&dm, tape);
        dm = self.bn1.backward(&dm, tape, &format!("{prefix}.bn1"), grads);
        dm = self.sep1.backward(&dm, tape, &format!("{prefix}.sep1"), grads);
        if self.pre_relu {
            dm = relu_backward(&dm, tape);
        }
        dx_skip + dm
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, ParamKind, ArrayViewD<'a, F>)) {
        self.sep1.visit(&format!("{prefix}.sep1"), f);
        self.bn1.visit(&format!("{prefix}.bn1"), f);
        self.sep2.visit(&format!("{prefix}.sep2"), f);
        self.bn2.visit(&format!("{prefix}.bn2"), f);
        self.skip_conv.visit(&format!("{prefix}.skip.conv"), f);
        self.skip_bn.visit(&format!("{prefix}.skip.bn"), f);
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, ParamKind, ArrayViewMutD<'_, F>),
    ) {
        self.sep1.visit_mut(&format!("{prefix}.sep1"), f);
        self.bn1.visit_mut(&format!("{prefix}.bn1"), f);
        self.sep2.visit_mut(&format!("{prefix}.sep2"), f);
        self.bn2.visit_mut(&format!("{prefix}.bn2"), f);
        self.skip_conv.visit_mut(&format!("{prefix}.skip.conv"), f);
        self.skip_bn.visit_mut(&format!("{prefix}.skip.bn"), f);
    }

    fn set_bn_momentum(&mut self, momentum: f64) {
        self.bn1.set_momentum(momentum);
        self.bn2.set_momentum(momentum);
        self.skip_bn.set_momentum(momentum);
    }
}

/// Identity-residual middle-flow block: three pre-activated separable
/// convolutions at constant width.
struct MiddleBlock<F: Scalar> {
    seps: Vec<SepConv<F>>,
    bns: Vec<BatchNorm<F>>,
}

impl<F: Scalar> MiddleBlock<F> {
    fn new(channels: usize, rng: &mut SeededRng) -> Self {
        Self {
            seps: (0..3).map(|_| SepConv::new(channels, channels, rng)).collect(),
            bns: (0..3).map(|_| BatchNorm::new(channels)).collect(),
        }
    }

    fn forward_train(&mut self, x: &Array4<F>, tape: &mut Tape<F>) -> Array4<F> {
        let mut h = x.clone();
        for (sep, bn) in self.seps.iter().zip(self.bns.iter_mut()) {
            h = relu(&h, Some(tape));
            h = sep.forward(&h, Some(tape));
            h = bn.forward_train(&h, tape);
        }
        h + x
    }

    fn forward_eval(&self, x: &Array4<F>) -> Array4<F> {
        let mut h = x.clone();
        for (sep, bn) in self.seps.iter().zip(self.bns.iter()) {
            h = relu(&h, None);
            h = sep.forward(&h, None);
            h = bn.forward_eval(&h);
        }
        h + x
    }

    fn backward(
        &self,
        dy: &Array4<F>,
        tape: &mut Tape<F>,
        prefix: &str,
        grads: &mut Grads<F>,
    ) -> Array4<F> {
        let mut dh = dy.clone();
        for k in (0..3).rev() {
            dh = self.bns[k].backward(&dh, tape, &format!("{prefix}.bn{}", k + 1), grads);
            dh = self.seps[k].backward(&dh, tape, &format!("{prefix}.sep{}", k + 1), grads);
            dh = relu_backward(&dh, tape);
        }
        dh + dy
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, ParamKind, ArrayViewD<'a, F>)) {
        for k in 0..3 {
            self.seps[k].visit(&format!("{prefix}.sep{}", k + 1), f);
            self.bns[k].visit(&format!("{prefix}.bn{}", k + 1), f);
        }
    }

    fn visit_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(String, ParamKind, ArrayViewMutD<'_, F>),
    ) {
        for k in 0..3 {
            self.seps[k].visit_mut(&format!("{prefix}.sep{}", k + 1), f);
            self.bns[k].visit_mut(&format!("{prefix}.bn{}", k + 1), f);
        }
    }

    fn set_bn_momentum(&mut self, momentum: f64) {
        for bn in &mut self.bns {
            bn.set_momentum(momentum);
        }
    }
}

/// A built network: immutable during inference (`infer` takes `&self`);
/// training mutates parameters and batch-norm statistics and must be
/// serialized externally.
pub struct Network<F: Scalar> {
    cfg: ModelConfig,
    stem_conv1: Conv2d<F>,
    stem_bn1: BatchNorm<F>,
    stem_conv2: Conv2d<F>,
    stem_bn2: BatchNorm<F>,
    entry: Vec<ResidualBlock<F>>,
    middle: Vec<MiddleBlock<F>>,
    exit_block: ResidualBlock<F>,
    tail_sep1536: SepConv<F>,
    tail_bn1536: BatchNorm<F>,
    tail_sep2048: SepConv<F>,
    tail_bn2048: BatchNorm<F>,
    head: Linear<F>,
}

/// Build a network with fan-in-scaled uniform init (biases zero, batch
/// norm at identity). Parameters are drawn in a fixed order, so the same
/// seed reproduces the same weights.
pub fn build<F: Scalar>(cfg: &ModelConfig, rng: &mut SeededRng) -> Result<Network<F>, ModelError> {
    cfg.validate()?;
    let s = |c: usize| cfg.scaled(c);

    let stem_conv1 = Conv2d::new(cfg.input_channels, s(32), 3, 2, 1, rng);
    let stem_bn1 = BatchNorm::new(s(32));
    let stem_conv2 = Conv2d::new(s(32), s(64), 3, 1, 1, rng);
    let stem_bn2 = BatchNorm::new(s(64));

    let entry_widths = [(s(64), s(128)), (s(128), s(256)), (s(256), s(728))];
    let entry = entry_widths
        .iter()
        .enumerate()
        .map(|(i, &(in_ch, out_ch))| ResidualBlock::new(in_ch, out_ch, out_ch, i > 0, rng))
        .collect();

    let middle = (0..cfg.middle_repeats)
        .map(|_| MiddleBlock::new(s(728), rng))
        .collect();

    let exit_block = ResidualBlock::new(s(728), s(728), s(1024), true, rng);
    let tail_sep1536 = SepConv::new(s(1024), s(1536), rng);
    let tail_bn1536 = BatchNorm::new(s(1536));
    let tail_sep2048 = SepConv::new(s(1536), s(2048), rng);
    let tail_bn2048 = BatchNorm::new(s(2048));
    let head = Linear::new(s(2048), cfg.n_classes, rng);

    Ok(Network {
        cfg: cfg.clone(),
        stem_conv1,
        stem_bn1,
        stem_conv2,
        stem_bn2,
        entry,
        middle,
        exit_block,
        tail_sep1536,
        tail_bn1536,
        tail_sep2048,
        tail_bn2048,
        head,
    })
}

impl<F: Scalar> Network<F> {
    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn check_input(&self, x: &Array4<F>) -> Result<(), ModelError> {
        let (b, c, h, w) = x.dim();
        if b == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if c != self.cfg.input_channels || h != self.cfg.input_mel_bins {
            return Err(ModelError::BadInputShape {
                got: vec![b, c, h, w],
                channels: self.cfg.input_channels,
                mel_bins: self.cfg.input_mel_bins,
            });
        }
        if w < MIN_TIME_FRAMES {
            return Err(ModelError::TooFewFrames {
                got: w,
                min: MIN_TIME_FRAMES,
            });
        }
        Ok(())
    }

    /// Training-mode forward: batch statistics, caches on `tape`.
    pub fn forward_train(
        &mut self,
        x: &Array4<F>,
        tape: &mut Tape<F>,
    ) -> Result<Array2<F>, ModelError> {
        self.check_input(x)?;
        let mut h = self.stem_conv1.forward(x, Some(tape));
        h = self.stem_bn1.forward_train(&h, tape);
        h = relu(&h, Some(tape));
        h = self.stem_conv2.forward(&h, Some(tape));
        h = self.stem_bn2.forward_train(&h, tape);
        h = relu(&h, Some(tape));
        for block in &mut self.entry {
            h = block.forward_train(&h, tape);
        }
        for block in &mut self.middle {
            h = block.forward_train(&h, tape);
        }
        h = self.exit_block.forward_train(&h, tape);
        h = self.tail_sep1536.forward(&h, Some(tape));
        h = self.tail_bn1536.forward_train(&h, tape);
        h = relu(&h, Some(tape));
        h = self.tail_sep2048.forward(&h, Some(tape));
        h = self.tail_bn2048.forward_train(&h, tape);
        h = relu(&h, Some(tape));
        let pooled = global_avg_pool(&h, Some(tape));
        Ok(self.head.forward(&pooled, Some(tape)))
    }

    /// Inference-mode forward: running statistics, no caches, `&self`.
    pub fn infer(&self, x: &Array4<F>) -> Result<Array2<F>, ModelError> {
        self.check_input(x)?;
        let mut h = self.stem_conv1.forward(x, None);
        h = self.stem_bn1.forward_eval(&h);
        h = relu(&h, None);
        h = self.stem_conv2.forward(&h, None);
        h = self.stem_bn2.forward_eval(&h);
        h = relu(&h, None);
        for block in &self.entry {
            h = block.forward_eval(&h);
        }
        for block in &self.middle {
            h = block.forward_eval(&h);
        }
        h = self.exit_block.forward_eval(&h);
        h = self.tail_sep1536.forward(&h, None);
        h = self.tail_bn1536.forward_eval(&h);
        h = relu(&h, None);
        h = self.tail_sep2048.forward(&h, None);
        h = self.tail_bn2048.forward_eval(&h);
        h = relu(&h, None);
        let pooled = global_avg_pool(&h, None);
        Ok(self.head.forward(&pooled, None))
    }

    fn set_bn_momentum(&mut self, momentum: f64) {
        self.stem_bn1.set_momentum(momentum);
        self.stem_bn2.set_momentum(momentum);
        for block in &mut self.entry {
            block.set_bn_momentum(momentum);
        }
        for block in &mut self.middle {
            block.set_bn_momentum(momentum);
        }
        self.exit_block.set_bn_momentum(momentum);
        self.tail_bn1536.set_momentum(momentum);
        self.tail_bn2048.set_momentum(momentum);
    }

    /// Recompute batch-norm running statistics as the plain average of
    /// per-batch statistics over `batches`, with the weights frozen.
    ///
    /// During training the running averages trail the moving weights; with
    /// only a handful of updates per epoch the lag compounds through the
    /// depth of the network and evaluation-mode outputs collapse. One
    /// forward-only pass per epoch under the final weights removes that
    /// lag. Implemented by sweeping the EMA momentum through `i / (i + 1)`.
    pub fn refresh_running_stats<'a, I>(&mut self, batches: I) -> Result<(), ModelError>
    where
        I: IntoIterator<Item = &'a Array4<F>>,
        F: 'a,
    {
        let mut tape = Tape::new();
        for (i, x) in batches.into_iter().enumerate() {
            self.set_bn_momentum(i as f64 / (i + 1) as f64);
            let result = self.forward_train(x, &mut tape);
            tape = Tape::new();
            if let Err(e) = result {
                self.set_bn_momentum(layers::BN_MOMENTUM);
                return Err(e);
            }
        }
        self.set_bn_momentum(layers::BN_MOMENTUM);
        Ok(())
    }

    /// Backward through the recorded tape. Returns one gradient per
    /// trainable tensor; the tape must come from the immediately preceding
    /// `forward_train`.
    pub fn backward(&self, dlogits: &Array2<F>, tape: &mut Tape<F>) -> Grads<F> {
        let mut grads = Grads::new();
        let dpooled = self.head.backward(dlogits, tape, "head", &mut grads);
        let mut dh = global_avg_pool_backward(&dpooled, tape);
        dh = relu_backward(&dh, tape);
        dh = self.tail_bn2048.backward(&dh, tape, "exit.bn2048", &mut grads);
        dh = self.tail_sep2048.backward(&dh, tape, "exit.sep2048", &mut grads);
        dh = relu_backward(&dh, tape);
        dh = self.tail_bn1536.backward(&dh, tape, "exit.bn1536", &mut grads);
        dh = self.tail_sep1536.backward(&dh, tape, "exit.sep1536", &mut grads);
        dh = self.exit_block.backward(&dh, tape, "exit.block", &mut grads);
        for (i, block) in self.middle.iter().enumerate().rev() {
            dh = block.backward(&dh, tape, &middle_prefix(i), &mut grads);
        }
        for (i, block) in self.entry.iter().enumerate().rev() {
            dh = block.backward(&dh, tape, &format!("entry.{i}"), &mut grads);
        }
        dh = relu_backward(&dh, tape);
        dh = self.stem_bn2.backward(&dh, tape, "stem.bn2", &mut grads);
        dh = self.stem_conv2.backward(&dh, tape, "stem.conv2", &mut grads);
        dh = relu_backward(&dh, tape);
        dh = self.stem_bn1.backward(&dh, tape, "stem.bn1", &mut grads);
        let _ = self.stem_conv1.backward(&dh, tape, "stem.conv1", &mut grads);
        debug_assert!(tape.is_empty(), "tape should be fully consumed");
        grads
    }

    /// Visit every parameter in a fixed, stable order.
    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, ParamKind, ArrayViewD<'a, F>)) {
        self.stem_conv1.visit("stem.conv1", f);
        self.stem_bn1.visit("stem.bn1", f);
        self.stem_conv2.visit("stem.conv2", f);
        self.stem_bn2.visit("stem.bn2", f);
        for (i, block) in self.entry.iter().enumerate() {
            block.visit(&format!("entry.{i}"), f);
        }
        for (i, block) in self.middle.iter().enumerate() {
            block.visit(&middle_prefix(i), f);
        }
        self.exit_block.visit("exit.block", f);
        self.tail_sep1536.visit("exit.sep1536", f);
        self.tail_bn1536.visit("exit.bn1536", f);
        self.tail_sep2048.visit("exit.sep2048", f);
        self.tail_bn2048.visit("exit.bn2048", f);
        self.head.visit("head", f);
    }

    pub fn visit_params_mut(
        &mut self,
        f: &mut dyn FnMut(String, ParamKind, ArrayViewMutD<'_, F>),
    ) {
        self.stem_conv1.visit_mut("stem.conv1", f);
        self.stem_bn1.visit_mut("stem.bn1", f);
        self.stem_conv2.visit_mut("stem.conv2", f);
        self.stem_bn2.visit_mut("stem.bn2", f);
        for (i, block) in self.entry.iter_mut().enumerate() {
            block.visit_mut(&format!("entry.{i}"), f);
        }
        for (i, block) in self.middle.iter_mut().enumerate() {
            block.visit_mut(&middle_prefix(i), f);
        }
        self.exit_block.visit_mut("exit.block", f);
        self.tail_sep1536.visit_mut("exit.sep1536", f);
        self.tail_bn1536.visit_mut("exit.bn1536", f);
        self.tail_sep2048.visit_mut("exit.sep2048", f);
        self.tail_bn2048.visit_mut("exit.bn2048", f);
        self.head.visit_mut("head", f);
    }

    /// Total element count of all trainable tensors.
    pub fn param_count(&self) -> usize {
        let mut count = 0;
        self.visit_params(&mut |_, kind, view| {
            if kind == ParamKind::Trainable {
                count += view.len();
            }
        });
        count
    }

    /// Snapshot all tensors (including batch-norm running statistics) into
    /// an archive, with the model config recorded in metadata.
    pub fn save_weights(&self, source: &str) -> WeightArchive {
        let mut archive = WeightArchive::new();
        self.visit_params(&mut |name, kind, view| {
            let tensor = Tensor::new(
                view.shape().to_vec(),
                view.iter().map(|v| v.cast_to_f32()).collect(),
            )
            .expect("parameter tensors are dense");
            archive
                .insert(&name, tensor)
                .expect("parameter names are unique");
            let _ = kind;
        });
        archive.set_metadata("source", source);
        archive.set_metadata(
            "config",
            &serde_json::to_string(&self.cfg).expect("config serializes"),
        );
        archive
    }

    /// Load tensors by name. Missing or shape-mismatched tensors fail with
    /// every offender listed; tensors in the archive that the network does
    /// not use are returned as warnings.
    pub fn load_weights(&mut self, archive: &WeightArchive) -> Result<Vec<String>, ModelError> {
        let mut missing = Vec::new();
        let mut mismatched = Vec::new();
        self.visit_params(&mut |name, _, view| match archive.get(&name) {
            None => missing.push(name),
            Some(t) if t.shape() != view.shape() => mismatched.push(format!(
                "{name}: archive {:?} vs model {:?}",
                t.shape(),
                view.shape()
            )),
            Some(_) => {}
        });
        if !missing.is_empty() {
            return Err(ModelError::MissingTensors(missing));
        }
        if !mismatched.is_empty() {
            return Err(ModelError::MismatchedTensors(mismatched));
        }
        let mut used = std::collections::BTreeSet::new();
        self.visit_params_mut(&mut |name, _, mut view| {
            let tensor = archive.get(&name).expect("checked above");
            for (dst, src) in view.iter_mut().zip(tensor.data()) {
                *dst = F::cast_from_f32(*src);
            }
            used.insert(name);
        });
        Ok(archive
            .names()
            .filter(|n| !used.contains(*n))
            .map(|n| n.to_string())
            .collect())
    }
}

/// Names, kinds, and shapes of every tensor a config's network would have,
/// without drawing any random numbers.
pub fn shape_catalog(cfg: &ModelConfig) -> Result<Vec<(String, ParamKind, Vec<usize>)>, ModelError> {
    // A zero-seeded build is cheap and guarantees the catalog can never
    // drift from the real network.
    let net: Network<f32> = build(cfg, &mut SeededRng::new(0))?;
    let mut out = Vec::new();
    net.visit_params(&mut |name, kind, view| {
        out.push((name, kind, view.shape().to_vec()));
    });
    Ok(out)
}

#[cfg(test)]
mod tests;
