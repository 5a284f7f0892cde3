//! The trainable optical encoder: pixel frames → affine → normalization → ReLU →
//! affine → per-frame class logits, with exact backward passes, SGD with
//! momentum, source training and bit-exact checkpoints.

use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ctc::{ctc_loss_and_grad, min_frames, CtcError, LogitMatrix};
use crate::data::{LineImage, LINE_HEIGHT};
use crate::textcore::{LabelSeq, Vocabulary};

pub const DEFAULT_FRAME_WIDTH: usize = 16;
pub const DEFAULT_FRAME_STRIDE: usize = 4;
pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_EPS: f64 = 1e-9;
/// Weight of the current batch when updating running statistics in train mode.
pub const DEFAULT_NORM_MOMENTUM: f64 = 0.1;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TTOM";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum OpticalError {
    #[error("image height {found} does not match model height {expected}")]
    BadHeight { found: usize, expected: usize },
    #[error("image width {width} is narrower than one frame ({frame_width})")]
    TooNarrow { width: usize, frame_width: usize },
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error("gradient shape mismatch: {0}")]
    Shape(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("checkpoint is for vocabulary {found:016x}, expected {expected:016x}")]
    VocabMismatch { found: u64, expected: u64 },
    #[error("malformed checkpoint at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How pixel bytes map to ink intensity in [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputScaling {
    /// `1 − p/255`.
    Global,
    /// Per-line min-max: darkest pixel 1, lightest 0, constant lines all 0.
    #[default]
    PerLine,
}

impl InputScaling {
    fn code(self) -> u8 {
        match self {
            InputScaling::Global => 0,
            InputScaling::PerLine => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(InputScaling::Global),
            1 => Some(InputScaling::PerLine),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalConfig {
    pub frame_width: usize,
    pub frame_stride: usize,
    pub height: usize,
    pub hidden: usize,
    pub classes: usize,
    pub eps: f64,
    pub norm_momentum: f64,
    pub scaling: InputScaling,
}

impl OpticalConfig {
    pub fn new(classes: usize) -> Self {
        Self {
            frame_width: DEFAULT_FRAME_WIDTH,
            frame_stride: DEFAULT_FRAME_STRIDE,
            height: LINE_HEIGHT,
            hidden: DEFAULT_HIDDEN,
            classes,
            eps: DEFAULT_EPS,
            norm_momentum: DEFAULT_NORM_MOMENTUM,
            scaling: InputScaling::default(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.frame_width * self.height
    }

    fn validate(&self) -> Result<(), OpticalError> {
        let bad = |m: &str| Err(OpticalError::BadConfig(m.to_string()));
        if self.frame_width == 0 || self.frame_stride == 0 || self.height == 0 {
            return bad("frame geometry must be positive");
        }
        if self.hidden == 0 {
            return bad("hidden must be at least 1");
        }
        if self.classes < 2 {
            return bad("need at least one symbol plus blank");
        }
        if !(self.eps > 0.0) || !(0.0..=1.0).contains(&self.norm_momentum) {
            return bad("eps must be positive and norm momentum in [0,1]");
        }
        Ok(())
    }
}

/// Number of frames for an image of width `w`.
pub fn frame_count(w: usize, frame_width: usize, frame_stride: usize) -> Option<usize> {
    (w >= frame_width).then(|| (w - frame_width) / frame_stride + 1)
}

/// Flattened pixel windows of ink intensity in [0,1], one row per frame.
pub fn extract_frames(
    image: &LineImage,
    frame_width: usize,
    frame_stride: usize,
    scaling: InputScaling,
) -> Result<Array2<f64>, OpticalError> {
    let (w, h) = (image.width(), image.height());
    let t = frame_count(w, frame_width, frame_stride).ok_or(OpticalError::TooNarrow {
        width: w,
        frame_width,
    })?;
    let px = image.pixels();
    let (hi, scale) = match scaling {
        InputScaling::Global => (255.0, 1.0 / 255.0),
        InputScaling::PerLine => {
            let lo = *px.iter().min().expect("images are nonempty") as f64;
            let hi = *px.iter().max().expect("images are nonempty") as f64;
            (hi, if hi > lo { 1.0 / (hi - lo) } else { 0.0 })
        }
    };
    let mut out = Array2::zeros((t, frame_width * h));
    for (f, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let x0 = f * frame_stride;
        let mut k = 0;
        for y in 0..h {
            let line = &px[y * w + x0..y * w + x0 + frame_width];
            for &p in line {
                row[k] = (hi - p as f64) * scale;
                k += 1;
            }
        }
    }
    Ok(out)
}

/// Stacks per-line frame matrices into one batch; returns row ranges per line.
pub fn stack_frames(frames: &[&Array2<f64>]) -> (Array2<f64>, Vec<Range<usize>>) {
    let d = frames.first().map_or(0, |f| f.ncols());
    let total: usize = frames.iter().map(|f| f.nrows()).sum();
    let mut out = Array2::zeros((total, d));
    let mut ranges = Vec::with_capacity(frames.len());
    let mut at = 0;
    for f in frames {
        out.slice_mut(s![at..at + f.nrows(), ..]).assign(f);
        ranges.push(at..at + f.nrows());
        at += f.nrows();
    }
    (out, ranges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    W1,
    B1,
    Gamma,
    Beta,
    W2,
    B2,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::W1,
        ParamGroup::B1,
        ParamGroup::Gamma,
        ParamGroup::Beta,
        ParamGroup::W2,
        ParamGroup::B2,
    ];
}

/// Which parameter groups an update may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamMask {
    pub w1: bool,
    pub b1: bool,
    pub gamma: bool,
    pub beta: bool,
    pub w2: bool,
    pub b2: bool,
}

impl ParamMask {
    pub const ALL: ParamMask = ParamMask {
        w1: true,
        b1: true,
        gamma: true,
        beta: true,
        w2: true,
        b2: true,
    };
    pub const NORM_AFFINE: ParamMask = ParamMask {
        w1: false,
        b1: false,
        gamma: true,
        beta: true,
        w2: false,
        b2: false,
    };

    pub fn contains(&self, g: ParamGroup) -> bool {
        match g {
            ParamGroup::W1 => self.w1,
            ParamGroup::B1 => self.b1,
            ParamGroup::Gamma => self.gamma,
            ParamGroup::Beta => self.beta,
            ParamGroup::W2 => self.w2,
            ParamGroup::B2 => self.b2,
        }
    }
}

/// Gradients (or velocities) congruent with the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Gradients {
    pub fn zeros(cfg: &OpticalConfig) -> Self {
        Self {
            w1: Array2::zeros((cfg.hidden, cfg.input_dim())),
            b1: Array1::zeros(cfg.hidden),
            gamma: Array1::zeros(cfg.hidden),
            beta: Array1::zeros(cfg.hidden),
            w2: Array2::zeros((cfg.classes, cfg.hidden)),
            b2: Array1::zeros(cfg.classes),
        }
    }

    pub fn group(&self, g: ParamGroup) -> &[f64] {
        let v = match g {
            ParamGroup::W1 => self.w1.as_slice(),
            ParamGroup::B1 => self.b1.as_slice(),
            ParamGroup::Gamma => self.gamma.as_slice(),
            ParamGroup::Beta => self.beta.as_slice(),
            ParamGroup::W2 => self.w2.as_slice(),
            ParamGroup::B2 => self.b2.as_slice(),
        };
        v.expect("standard layout")
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut [f64] {
        let v = match g {
            ParamGroup::W1 => self.w1.as_slice_mut(),
            ParamGroup::B1 => self.b1.as_slice_mut(),
            ParamGroup::Gamma => self.gamma.as_slice_mut(),
            ParamGroup::Beta => self.beta.as_slice_mut(),
            ParamGroup::W2 => self.w2.as_slice_mut(),
            ParamGroup::B2 => self.b2.as_slice_mut(),
        };
        v.expect("standard layout")
    }

    pub fn scale(&mut self, f: f64) {
        for g in ParamGroup::ALL {
            self.group_mut(g).iter_mut().for_each(|v| *v *= f);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for g in ParamGroup::ALL {
            for (a, b) in self.group_mut(g).iter_mut().zip(other.group(g)) {
                *a += b;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        ParamGroup::ALL
            .iter()
            .flat_map(|&g| self.group(g).iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        ParamGroup::ALL
            .iter()
            .all(|&g| self.group(g).iter().all(|v| v.is_finite()))
    }

    fn same_shape(&self, cfg: &OpticalConfig) -> bool {
        self.w1.dim() == (cfg.hidden, cfg.input_dim())
            && self.b1.len() == cfg.hidden
            && self.gamma.len() == cfg.hidden
            && self.beta.len() == cfg.hidden
            && self.w2.dim() == (cfg.classes, cfg.hidden)
            && self.b2.len() == cfg.classes
    }
}

/// Intermediate activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Normalized hidden activations, before gamma/beta.
    pub normalized: Array2<f64>,
    /// Pre-ReLU activations.
    pub pre_relu: Array2<f64>,
    /// Post-ReLU activations.
    pub hidden: Array2<f64>,
    /// 1/sqrt(var + eps) used for normalization.
    pub inv_std: Array1<f64>,
    /// Whether batch statistics were used (train mode).
    pub batch_stats: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpticalModel {
    pub config: OpticalConfig,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl OpticalModel {
    /// Seeded initialization: weights and biases uniform in ±1/sqrt(fan_in),
    /// gamma 1, beta 0, running statistics (0, 1).
    pub fn new(config: OpticalConfig, seed: u64) -> Result<Self, OpticalError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, d, c) = (config.hidden, config.input_dim(), config.classes);
        let mut uniform = |fan_in: usize, n: usize| -> Vec<f64> {
            let s = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-s, s).expect("finite bounds");
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        };
        let w1 = Array2::from_shape_vec((h, d), uniform(d, h * d)).expect("shape");
        let b1 = Array1::from(uniform(d, h));
        let w2 = Array2::from_shape_vec((c, h), uniform(h, c * h)).expect("shape");
        let b2 = Array1::from(uniform(h, c));
        Ok(Self {
            config,
            w1,
            b1,
            running_mean: Array1::zeros(h),
            running_var: Array1::ones(h),
            gamma: Array1::ones(h),
            beta: Array1::zeros(h),
            w2,
            b2,
        })
    }

    /// All-zero weights and biases with identity normalization.
    pub fn zeros(config: OpticalConfig) -> Result<Self, OpticalError> {
        config.validate()?;
        let g = Gradients::zeros(&config);
        Ok(Self {
            config,
            w1: g.w1,
            b1: g.b1,
            running_mean: Array1::zeros(config.hidden),
            running_var: Array1::ones(config.hidden),
            gamma: Array1::ones(config.hidden),
            beta: g.beta,
            w2: g.w2,
            b2: g.b2,
        })
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn frames(&self, image: &LineImage) -> Result<Array2<f64>, OpticalError> {
        if image.height() != self.config.height {
            return Err(OpticalError::BadHeight {
                found: image.height(),
                expected: self.config.height,
            });
        }
        extract_frames(image, self.config.frame_width, self.config.frame_stride, self.config.scaling)
    }

    /// Frames available for an image of the given width, if any.
    pub fn frames_for_width(&self, width: usize) -> Option<usize> {
        frame_count(width, self.config.frame_width, self.config.frame_stride)
    }

    pub fn group(&self, g: ParamGroup) -> &[f64] {
        let v = match g {
            ParamGroup::W1 => self.w1.as_slice(),
            ParamGroup::B1 => self.b1.as_slice(),
            ParamGroup::Gamma => self.gamma.as_slice(),
            ParamGroup::Beta => self.beta.as_slice(),
            ParamGroup::W2 => self.w2.as_slice(),
            ParamGroup::B2 => self.b2.as_slice(),
        };
        v.expect("standard layout")
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut [f64] {
        let v = match g {
            ParamGroup::W1 => self.w1.as_slice_mut(),
            ParamGroup::B1 => self.b1.as_slice_mut(),
            ParamGroup::Gamma => self.gamma.as_slice_mut(),
            ParamGroup::Beta => self.beta.as_slice_mut(),
            ParamGroup::W2 => self.w2.as_slice_mut(),
            ParamGroup::B2 => self.b2.as_slice_mut(),
        };
        v.expect("standard layout")
    }

    pub fn is_finite(&self) -> bool {
        ParamGroup::ALL
            .iter()
            .all(|&g| self.group(g).iter().all(|v| v.is_finite()))
            && self.running_mean.iter().all(|v| v.is_finite())
            && self.running_var.iter().all(|v| v.is_finite() && *v >= 0.0)
    }

    /// Hidden pre-normalization activations `x·w1ᵀ + b1`.
    pub fn affine1(&self, frames: &Array2<f64>) -> Array2<f64> {
        let mut z = frames.dot(&self.w1.t());
        z += &self.b1;
        z
    }

    fn head(&self, normalized: Array2<f64>, inv_std: Array1<f64>, batch_stats: bool) -> (Array2<f64>, ForwardCache) {
        let mut pre = &normalized * &self.gamma;
        pre += &self.beta;
        let hidden = pre.mapv(|v| v.max(0.0));
        let mut logits = hidden.dot(&self.w2.t());
        logits += &self.b2;
        (
            logits,
            ForwardCache {
                normalized,
                pre_relu: pre,
                hidden,
                inv_std,
                batch_stats,
            },
        )
    }

    fn inv_std(&self, var: &Array1<f64>) -> Array1<f64> {
        var.mapv(|v| 1.0 / (v + self.config.eps).sqrt())
    }

    /// Eval-mode forward over a frame batch (running statistics).
    pub fn forward_frames(&self, frames: &Array2<f64>) -> (Array2<f64>, ForwardCache) {
        let mut z = self.affine1(frames);
        let inv_std = self.inv_std(&self.running_var);
        z -= &self.running_mean;
        z *= &inv_std;
        self.head(z, inv_std, false)
    }

    /// Eval-mode forward of one line.
    pub fn forward(&self, image: &LineImage) -> Result<LogitMatrix, OpticalError> {
        let frames = self.frames(image)?;
        Ok(LogitMatrix::new(self.forward_frames(&frames).0)?)
    }

    /// Per-unit mean and biased variance of the hidden activations over a batch.
    pub fn batch_stats(&self, frames: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
        let z = self.affine1(frames);
        let mean = z.mean_axis(Axis(0)).expect("nonempty batch");
        let var = z.var_axis(Axis(0), 0.0);
        (mean, var)
    }

    /// Train-mode forward: normalizes with the batch statistics of `frames` and
    /// moves the running statistics toward them.
    pub fn forward_train(&mut self, frames: &Array2<f64>) -> (Array2<f64>, ForwardCache) {
        let mut z = self.affine1(frames);
        let mean = z.mean_axis(Axis(0)).expect("nonempty batch");
        let var = z.var_axis(Axis(0), 0.0);
        let rho = self.config.norm_momentum;
        Zip::from(&mut self.running_mean)
            .and(&mean)
            .for_each(|r, &m| *r = (1.0 - rho) * *r + rho * m);
        Zip::from(&mut self.running_var)
            .and(&var)
            .for_each(|r, &v| *r = (1.0 - rho) * *r + rho * v);
        let inv_std = self.inv_std(&var);
        z -= &mean;
        z *= &inv_std;
        self.head(z, inv_std, true)
    }

    /// Exact gradients of `Σ grad_logits ⊙ logits` given the cache of the forward
    /// pass over `frames`. Eval-mode caches treat the statistics as constants;
    /// train-mode caches differentiate through the batch statistics.
    pub fn backward_frames(
        &self,
        frames: &Array2<f64>,
        cache: &ForwardCache,
        grad_logits: &Array2<f64>,
    ) -> Gradients {
        let w2 = grad_logits.t().dot(&cache.hidden);
        let b2 = grad_logits.sum_axis(Axis(0));
        let mut d_pre = grad_logits.dot(&self.w2);
        Zip::from(&mut d_pre)
            .and(&cache.pre_relu)
            .for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            });
        let gamma = (&d_pre * &cache.normalized).sum_axis(Axis(0));
        let beta = d_pre.sum_axis(Axis(0));
        let mut d_norm = d_pre;
        d_norm *= &self.gamma;
        let dz = if cache.batch_stats {
            let n = frames.nrows() as f64;
            let mean_d = d_norm.sum_axis(Axis(0)) / n;
            let mean_dn = (&d_norm * &cache.normalized).sum_axis(Axis(0)) / n;
            let mut dz = &d_norm - &mean_d;
            dz -= &(&cache.normalized * &mean_dn);
            dz *= &cache.inv_std;
            dz
        } else {
            d_norm *= &cache.inv_std;
            d_norm
        };
        let w1 = dz.t().dot(frames);
        let b1 = dz.sum_axis(Axis(0));
        Gradients {
            w1,
            b1,
            gamma,
            beta,
            w2,
            b2,
        }
    }

    /// Eval-mode gradients for one line.
    pub fn backward(&self, image: &LineImage, grad_logits: &Array2<f64>) -> Result<Gradients, OpticalError> {
        let frames = self.frames(image)?;
        let (logits, cache) = self.forward_frames(&frames);
        if logits.dim() != grad_logits.dim() {
            return Err(OpticalError::Shape(format!(
                "grad_logits {:?} vs logits {:?}",
                grad_logits.dim(),
                logits.dim()
            )));
        }
        Ok(self.backward_frames(&frames, &cache, grad_logits))
    }

    /// Sets running statistics to the exact population statistics of `frames`.
    pub fn set_running_stats(&mut self, mean: Array1<f64>, var: Array1<f64>) {
        self.running_mean = mean;
        self.running_var = var.mapv(|v| v.max(0.0));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: Gradients,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl OptimizerState {
    pub fn new(model: &OpticalModel, learning_rate: f64, momentum: f64) -> Self {
        Self {
            velocity: Gradients::zeros(&model.config),
            learning_rate,
            momentum,
        }
    }

    pub fn clear(&mut self) {
        self.velocity.scale(0.0);
    }
}

/// Classical momentum on the masked groups: `v ← μv + g; θ ← θ − ηv`.
/// Returns the L2 norm of the applied parameter displacement.
pub fn sgd_step(
    model: &mut OpticalModel,
    state: &mut OptimizerState,
    grads: &Gradients,
    mask: ParamMask,
) -> Result<f64, OpticalError> {
    if !grads.same_shape(&model.config) || !state.velocity.same_shape(&model.config) {
        return Err(OpticalError::Shape("gradients do not match the model".into()));
    }
    let (mu, eta) = (state.momentum, state.learning_rate);
    let mut sq = 0.0;
    for g in ParamGroup::ALL {
        if !mask.contains(g) {
            continue;
        }
        let v = state.velocity.group_mut(g);
        let p = model.group_mut(g);
        for ((p, v), &gr) in p.iter_mut().zip(v.iter_mut()).zip(grads.group(g)) {
            *v = mu * *v + gr;
            let step = eta * *v;
            *p -= step;
            sq += step * step;
        }
    }
    Ok(sq.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Rescale each mini-batch gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 16,
            clip_norm: Some(5.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean CTC loss per line of every mini-batch, in step order.
    pub loss_curve: Vec<f64>,
    /// Indices of examples skipped because their transcripts cannot fit.
    pub skipped: Vec<usize>,
}

/// Mini-batch CTC training in train mode (batch statistics), followed by a
/// recalibration of the running statistics over the whole training set.
/// Deterministic given `config.seed`. Only the running statistics change when
/// the learning rate is zero.
pub fn train_source(
    model: &mut OpticalModel,
    dataset: &[(LineImage, LabelSeq)],
    config: &TrainConfig,
) -> Result<TrainReport, OpticalError> {
    if dataset.is_empty() {
        return Err(OpticalError::EmptyDataset);
    }
    let mut report = TrainReport::default();
    let mut examples = Vec::with_capacity(dataset.len());
    for (i, (image, label)) in dataset.iter().enumerate() {
        let frames = model.frames(image)?;
        if frames.nrows() < min_frames(label.as_slice()) {
            log::warn!(
                "skipping training line {i}: {} frames cannot fit {} labels",
                frames.nrows(),
                label.len()
            );
            report.skipped.push(i);
            continue;
        }
        examples.push((frames, label));
    }
    if examples.is_empty() {
        return Err(OpticalError::EmptyDataset);
    }
    let mut opt = OptimizerState::new(model, config.learning_rate, config.momentum);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let bs = config.batch_size.max(1);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(bs) {
            let parts: Vec<&Array2<f64>> = batch.iter().map(|&i| &examples[i].0).collect();
            let (x, ranges) = stack_frames(&parts);
            let (logits, cache) = model.forward_train(&x);
            let mut grad = Array2::zeros(logits.dim());
            let mut loss = 0.0;
            for (&i, r) in batch.iter().zip(&ranges) {
                let lm = LogitMatrix::new(logits.slice(s![r.clone(), ..]).to_owned())?;
                let (l, g) = ctc_loss_and_grad(&lm, examples[i].1)?;
                loss += l;
                grad.slice_mut(s![r.clone(), ..]).assign(&g);
            }
            let n = batch.len() as f64;
            grad /= n;
            report.loss_curve.push(loss / n);
            let mut grads = model.backward_frames(&x, &cache, &grad);
            if let Some(c) = config.clip_norm {
                let norm = grads.norm();
                if norm > c {
                    grads.scale(c / norm);
                }
            }
            sgd_step(model, &mut opt, &grads, ParamMask::ALL)?;
        }
    }
    let parts: Vec<&Array2<f64>> = examples.iter().map(|e| &e.0).collect();
    let (x, _) = stack_frames(&parts);
    let (mean, var) = model.batch_stats(&x);
    model.set_running_stats(mean, var);
    Ok(report)
}

/// A source model frozen for later resets, bound to the vocabulary it was
/// trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: OpticalModel,
    pub vocab_hash: u64,
    /// Free-form creation metadata (e.g. training settings as JSON).
    pub metadata: String,
}

impl Checkpoint {
    pub fn new(model: &OpticalModel, vocab: &Vocabulary, metadata: impl Into<String>) -> Self {
        Self {
            model: model.clone(),
            vocab_hash: vocab.hash(),
            metadata: metadata.into(),
        }
    }

    /// Little-endian layout: magic, u16 version, u32 frame_width, frame_stride,
    /// height, hidden, classes, f64 eps, norm_momentum, u8 input scaling (0 global,
    /// 1 per line), u64 vocab hash, u32
    /// metadata length + UTF-8 bytes, then f64 blocks w1, b1, running_mean,
    /// running_var, gamma, beta, w2, b2 (row-major).
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let c = &m.config;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in [c.frame_width, c.frame_stride, c.height, c.hidden, c.classes] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&c.eps.to_le_bytes());
        out.extend_from_slice(&c.norm_momentum.to_le_bytes());
        out.push(c.scaling.code());
        out.extend_from_slice(&self.vocab_hash.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        let blocks: [&[f64]; 8] = [
            m.w1.as_slice().expect("standard layout"),
            m.b1.as_slice().expect("standard layout"),
            m.running_mean.as_slice().expect("standard layout"),
            m.running_var.as_slice().expect("standard layout"),
            m.gamma.as_slice().expect("standard layout"),
            m.beta.as_slice().expect("standard layout"),
            m.w2.as_slice().expect("standard layout"),
            m.b2.as_slice().expect("standard layout"),
        ];
        for b in blocks {
            for v in b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, OpticalError> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.err(0, "bad magic"));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != CHECKPOINT_VERSION {
            return Err(OpticalError::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = u32::from_le_bytes(r.array()?) as usize;
        }
        let config = OpticalConfig {
            frame_width: dims[0],
            frame_stride: dims[1],
            height: dims[2],
            hidden: dims[3],
            classes: dims[4],
            eps: f64::from_le_bytes(r.array()?),
            norm_momentum: f64::from_le_bytes(r.array()?),
            scaling: {
                let at = r.pos;
                let [code] = r.array()?;
                InputScaling::from_code(code).ok_or_else(|| r.err(at, "unknown input scaling"))?
            },
        };
        config
            .validate()
            .map_err(|e| r.err(r.pos, &e.to_string()))?;
        let vocab_hash = u64::from_le_bytes(r.array()?);
        let meta_len = u32::from_le_bytes(r.array()?) as usize;
        let at = r.pos;
        let metadata = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| r.err(at, "metadata is not UTF-8"))?
            .to_string();
        let (h, d, c) = (config.hidden, config.input_dim(), config.classes);
        let w1 = Array2::from_shape_vec((h, d), r.floats(h * d)?).expect("shape");
        let b1 = Array1::from(r.floats(h)?);
        let running_mean = Array1::from(r.floats(h)?);
        let running_var = Array1::from(r.floats(h)?);
        let gamma = Array1::from(r.floats(h)?);
        let beta = Array1::from(r.floats(h)?);
        let w2 = Array2::from_shape_vec((c, h), r.floats(c * h)?).expect("shape");
        let b2 = Array1::from(r.floats(c)?);
        if r.pos != bytes.len() {
            return Err(r.err(r.pos, "trailing bytes"));
        }
        let model = OpticalModel {
            config,
            w1,
            b1,
            running_mean,
            running_var,
            gamma,
            beta,
            w2,
            b2,
        };
        if !model.is_finite() {
            return Err(r.err(0, "non-finite parameters or negative variance"));
        }
        Ok(Self {
            model,
            vocab_hash,
            metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), OpticalError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Loads a checkpoint and checks it was trained on `vocab`.
    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self, OpticalError> {
        let ckpt = Self::from_bytes(&std::fs::read(path)?)?;
        ckpt.check_vocab(vocab)?;
        Ok(ckpt)
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<(), OpticalError> {
        if self.vocab_hash != vocab.hash() {
            return Err(OpticalError::VocabMismatch {
                found: self.vocab_hash,
                expected: vocab.hash(),
            });
        }
        if self.model.classes() != vocab.num_classes() {
            return Err(OpticalError::BadConfig(format!(
                "checkpoint has {} classes, vocabulary needs {}",
                self.model.classes(),
                vocab.num_classes()
            )));
        }
        Ok(())
    }

    /// Restores every parameter and statistic and clears the optimizer velocity.
    pub fn reset_to(&self, model: &mut OpticalModel, opt: &mut OptimizerState) {
        model.clone_from(&self.model);
        opt.velocity = Gradients::zeros(&model.config);
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn err(&self, offset: usize, reason: &str) -> OpticalError {
        OpticalError::Parse {
            offset,
            reason: reason.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], OpticalError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(self.pos, "unexpected end of data"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], OpticalError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>, OpticalError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.err(self.pos, "size overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}
