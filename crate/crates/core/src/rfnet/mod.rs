//! CNN + GRU gesture recognizer.
//!
//! Per frame: conv2d, ReLU, max-pool, dropout, flatten, two dense+ReLU layers.
//! The per-frame vectors run through a single GRU layer whose final hidden
//! state is the feature vector `Z`. The recognizer head applies dropout, a
//! softplus dense layer and a softmax output layer.

mod checkpoint;

use std::fmt;

use rand::Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_TAG};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose, Stream};
use crate::tensor::{gru_step, GruVars, Mode, Tape, Tensor, Var};

/// Architecture hyperparameters. Frames are single-channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arch {
    /// Spatial bins per axis (`N`).
    pub grid: usize,
    /// Frames per sample (`T`).
    pub frames: usize,
    pub classes: usize,
    pub conv_kernels: usize,
    pub kernel_size: usize,
    pub pool: usize,
    pub dense1: usize,
    pub dense2: usize,
    pub gru_hidden: usize,
    pub head_width: usize,
    pub dropout_extractor: f64,
    pub dropout_head: f64,
}

impl Default for Arch {
    fn default() -> Self {
        Arch {
            grid: 16,
            frames: 24,
            classes: 6,
            conv_kernels: 16,
            kernel_size: 3,
            pool: 2,
            dense1: 128,
            dense2: 64,
            gru_hidden: 64,
            head_width: 64,
            dropout_extractor: 0.3,
            dropout_head: 0.5,
        }
    }
}

impl Arch {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("grid", self.grid),
            ("frames", self.frames),
            ("classes", self.classes),
            ("conv_kernels", self.conv_kernels),
            ("kernel_size", self.kernel_size),
            ("pool", self.pool),
            ("dense1", self.dense1),
            ("dense2", self.dense2),
            ("gru_hidden", self.gru_hidden),
            ("head_width", self.head_width),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.classes < 2 {
            return Err(Error::Config("classes must be >= 2".into()));
        }
        if self.kernel_size > self.grid {
            return Err(Error::Config(format!(
                "kernel_size {} exceeds grid {}",
                self.kernel_size, self.grid
            )));
        }
        if self.conv_out() % self.pool != 0 {
            return Err(Error::Config(format!(
                "pool {} does not divide the conv output size {}",
                self.pool,
                self.conv_out()
            )));
        }
        for (name, r) in [
            ("dropout_extractor", self.dropout_extractor),
            ("dropout_head", self.dropout_head),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{name} {r} outside [0, 1)")));
            }
        }
        Ok(())
    }

    fn conv_out(&self) -> usize {
        self.grid + 1 - self.kernel_size
    }

    /// Length of the flattened pooled feature map.
    pub fn flat_len(&self) -> usize {
        let p = self.conv_out() / self.pool;
        self.conv_kernels * p * p
    }

    /// Stable 64-bit fingerprint of [`Arch::to_string`].
    pub fn config_hash(&self) -> u64 {
        crate::rng::fnv1a(self.to_string().as_bytes())
    }

    /// Inverse of the `Display` form.
    pub fn parse(s: &str) -> Result<Self> {
        let mut a = Arch::default();
        let mut seen = 0;
        for part in s.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad arch entry `{part}`")))?;
            let bad = || Error::Config(format!("bad value for arch `{k}`: `{v}`"));
            let int = || v.parse::<usize>().map_err(|_| bad());
            let real = || v.parse::<f64>().map_err(|_| bad());
            match k {
                "grid" => a.grid = int()?,
                "frames" => a.frames = int()?,
                "classes" => a.classes = int()?,
                "conv_kernels" => a.conv_kernels = int()?,
                "kernel_size" => a.kernel_size = int()?,
                "pool" => a.pool = int()?,
                "dense1" => a.dense1 = int()?,
                "dense2" => a.dense2 = int()?,
                "gru_hidden" => a.gru_hidden = int()?,
                "head_width" => a.head_width = int()?,
                "dropout_extractor" => a.dropout_extractor = real()?,
                "dropout_head" => a.dropout_head = real()?,
                _ => return Err(Error::Config(format!("unknown arch key `{k}`"))),
            }
            seen += 1;
        }
        if seen != 12 {
            return Err(Error::Config(format!("arch string has {seen} of 12 keys")));
        }
        a.validate()?;
        Ok(a)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "grid={},frames={},classes={},conv_kernels={},kernel_size={},pool={},dense1={},dense2={},\
             gru_hidden={},head_width={},dropout_extractor={},dropout_head={}",
            self.grid,
            self.frames,
            self.classes,
            self.conv_kernels,
            self.kernel_size,
            self.pool,
            self.dense1,
            self.dense2,
            self.gru_hidden,
            self.head_width,
            self.dropout_extractor,
            self.dropout_head
        )
    }
}

/// Parameter names in storage order.
pub const PARAM_NAMES: [&str; 19] = [
    "conv_kernels",
    "conv_bias",
    "dense1_weight",
    "dense1_bias",
    "dense2_weight",
    "dense2_bias",
    "gru_w_update",
    "gru_w_reset",
    "gru_w_candidate",
    "gru_u_update",
    "gru_u_reset",
    "gru_u_candidate",
    "gru_b_update",
    "gru_b_reset",
    "gru_b_candidate",
    "head_weight",
    "head_bias",
    "out_weight",
    "out_bias",
];

/// Every learnable tensor of the extractor and recognizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Arch,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Expected shape of every parameter, in [`PARAM_NAMES`] order.
    pub fn shapes(arch: &Arch) -> Vec<Vec<usize>> {
        let (h, d2) = (arch.gru_hidden, arch.dense2);
        vec![
            vec![arch.conv_kernels, 1, arch.kernel_size, arch.kernel_size],
            vec![arch.conv_kernels],
            vec![arch.dense1, arch.flat_len()],
            vec![arch.dense1],
            vec![d2, arch.dense1],
            vec![d2],
            vec![h, d2],
            vec![h, d2],
            vec![h, d2],
            vec![h, h],
            vec![h, h],
            vec![h, h],
            vec![h],
            vec![h],
            vec![h],
            vec![arch.head_width, h],
            vec![arch.head_width],
            vec![arch.classes, arch.head_width],
            vec![arch.classes],
        ]
    }

    /// Glorot-uniform weights, zero biases, drawn from the init stream of
    /// `seed`.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = stream(seed, Purpose::Init, &[]);
        let tensors = Self::shapes(&arch)
            .into_iter()
            .map(|shape| {
                if shape.len() == 1 {
                    return Tensor::zeros(&shape);
                }
                let (fan_out, fan_in) = if shape.len() == 4 {
                    let rf = shape[2] * shape[3];
                    (shape[0] * rf, shape[1] * rf)
                } else {
                    (shape[0], shape[1])
                };
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-a..a)).collect();
                Tensor::new(shape, data).expect("init shape")
            })
            .collect();
        Ok(ModelParams { arch, tensors })
    }

    pub fn from_tensors(arch: Arch, tensors: Vec<Tensor>) -> Result<Self> {
        arch.validate()?;
        let shapes = Self::shapes(&arch);
        if tensors.len() != shapes.len() {
            return Err(Error::dim("model params", "tensor count", shapes.len(), tensors.len()));
        }
        for ((t, s), name) in tensors.iter().zip(&shapes).zip(PARAM_NAMES) {
            if t.shape() != s.as_slice() {
                return Err(Error::dim("model params", name, format!("{s:?}"), format!("{:?}", t.shape())));
            }
            if !t.is_finite() {
                return Err(Error::Load(format!("parameter {name} has non-finite values")));
            }
        }
        Ok(ModelParams { arch, tensors })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        PARAM_NAMES.into_iter().zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        PARAM_NAMES.iter().position(|n| *n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        PARAM_NAMES.iter().position(|n| *n == name).map(|i| &mut self.tensors[i])
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors.iter_mut().collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.tensors.iter().map(Tensor::numel).collect()
    }

    /// Record the parameters as leaves of `tape`.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Network {
        let v: Vec<Var> = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), trainable))
            .collect();
        Network {
            arch: self.arch,
            vars: v.clone(),
            gru: GruVars {
                w_update: v[6],
                w_reset: v[7],
                w_candidate: v[8],
                u_update: v[9],
                u_reset: v[10],
                u_candidate: v[11],
                b_update: v[12],
                b_reset: v[13],
                b_candidate: v[14],
            },
        }
    }
}

/// Model parameters registered on a tape.
#[derive(Debug, Clone)]
pub struct Network {
    arch: Arch,
    vars: Vec<Var>,
    gru: GruVars,
}

/// Predicted class probabilities of one composed batch, split into the
/// labeled, unlabeled and augmented partitions (in that row order).
#[derive(Debug, Clone)]
pub struct PredictionBatch {
    pub labeled: Option<Var>,
    pub unlabeled: Option<Var>,
    pub augmented: Option<Var>,
    pub labeled_rows: usize,
    pub unlabeled_rows: usize,
}

impl PredictionBatch {
    /// All rows as one `[B + 2 muB, C]` matrix.
    pub fn probs(&self, tape: &Tape) -> Option<Tensor> {
        let parts: Vec<&Tensor> = [self.labeled, self.unlabeled, self.augmented]
            .into_iter()
            .flatten()
            .map(|v| tape.value(v))
            .collect();
        let c = parts.first()?.shape()[1];
        let data: Vec<f64> = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
        Some(Tensor::new(vec![data.len() / c, c], data).expect("batch probs"))
    }
}

impl Network {
    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    /// Parameter handles in [`PARAM_NAMES`] order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients of every parameter after `tape.backward`.
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| tape.grad(v).unwrap_or_else(|| Tensor::zeros(tape.value(v).shape())))
            .collect()
    }

    /// Feature extractor `G`: `[T, N, N]` frames to the final GRU state.
    pub fn extract_features<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        frames: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let a = &self.arch;
        let shape = frames.shape();
        if shape.len() != 3 || shape[0] == 0 {
            return Err(Error::dim("extract_features", "frames rank", "[T, N, N]", format!("{shape:?}")));
        }
        if shape[1] != a.grid || shape[2] != a.grid {
            return Err(Error::dim(
                "extract_features",
                "frame size (axes 1, 2)",
                format!("{0}x{0}", a.grid),
                format!("{}x{}", shape[1], shape[2]),
            ));
        }
        let v = &self.vars;
        let mut h = tape.constant(Tensor::zeros(&[a.gru_hidden]));
        for t in 0..shape[0] {
            let frame = Tensor::new(vec![1, a.grid, a.grid], frames.outer(t).to_vec())?;
            let x = tape.constant(frame);
            let c = tape.conv2d(x, v[0], v[1])?;
            let c = tape.relu(c);
            let p = tape.max_pool2d(c, a.pool)?;
            let p = tape.dropout(p, a.dropout_extractor, rng, mode)?;
            let flat = tape.reshape(p, vec![a.flat_len()])?;
            let d1 = tape.dense(flat, v[2], v[3])?;
            let d1 = tape.relu(d1);
            let d2 = tape.dense(d1, v[4], v[5])?;
            let u = tape.relu(d2);
            h = gru_step(tape, u, h, &self.gru)?;
        }
        Ok(h)
    }

    /// Recognizer head: `softmax(W_o softplus(W_z dropout(Z) + b_z) + b_o)`.
    pub fn recognize<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        z: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let v = &self.vars;
        let z = tape.dropout(z, self.arch.dropout_head, rng, mode)?;
        let hidden = tape.dense(z, v[15], v[16])?;
        let hidden = tape.softplus(hidden);
        let logits = tape.dense(hidden, v[17], v[18])?;
        tape.softmax(logits)
    }

    /// Class probabilities of one sample.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        frames: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let z = self.extract_features(tape, frames, mode, rng)?;
        self.recognize(tape, z, mode, rng)
    }

    /// Forward a composed batch `X_l ++ X_u ++ X_u_aug`.
    ///
    /// Row `i` draws its dropout masks from `streams[i]`. With
    /// `clean_unlabeled`, the unlabeled partition runs in eval mode.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        inputs: &[&Tensor],
        labeled_rows: usize,
        mode: Mode,
        clean_unlabeled: bool,
        streams: &mut [Stream],
    ) -> Result<PredictionBatch> {
        if inputs.len() < labeled_rows || (inputs.len() - labeled_rows) % 2 != 0 {
            return Err(Error::Usage(format!(
                "batch of {} rows cannot hold {labeled_rows} labeled rows plus two equal unlabeled partitions",
                inputs.len()
            )));
        }
        if streams.len() != inputs.len() {
            return Err(Error::Usage(format!(
                "{} dropout streams for {} rows",
                streams.len(),
                inputs.len()
            )));
        }
        let unlabeled_rows = (inputs.len() - labeled_rows) / 2;
        let mut rows = Vec::with_capacity(inputs.len());
        for (i, (x, rng)) in inputs.iter().zip(streams.iter_mut()).enumerate() {
            let in_unlabeled = i >= labeled_rows && i < labeled_rows + unlabeled_rows;
            let row_mode = if clean_unlabeled && in_unlabeled { Mode::Eval } else { mode };
            rows.push(self.forward(tape, x, row_mode, rng)?);
        }
        let mut part = |range: std::ops::Range<usize>| -> Result<Option<Var>> {
            if range.is_empty() {
                Ok(None)
            } else {
                tape.stack(&rows[range]).map(Some)
            }
        };
        let labeled = part(0..labeled_rows)?;
        let unlabeled = part(labeled_rows..labeled_rows + unlabeled_rows)?;
        let augmented = part(labeled_rows + unlabeled_rows..inputs.len())?;
        Ok(PredictionBatch {
            labeled,
            unlabeled,
            augmented,
            labeled_rows,
            unlabeled_rows,
        })
    }
}

/// `[rows, classes]` one-hot matrix.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Usage(format!("label {l} outside 0..{classes}")));
        }
        data[i * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data)
}

/// Mean cross-entropy of `probs[B, C]` against one-hot `targets[B, C]`, with
/// `ln` clamped at `ln(1e-12)`.
pub fn classification_loss(tape: &mut Tape, probs: Var, targets: &Tensor) -> Result<Var> {
    let p = tape.value(probs);
    if p.shape() != targets.shape() || p.rank() != 2 {
        return Err(Error::dim(
            "classification_loss",
            "targets shape",
            format!("{:?}", p.shape()),
            format!("{:?}", targets.shape()),
        ));
    }
    let (rows, c) = (p.shape()[0], p.shape()[1]);
    for r in 0..rows {
        let row = &targets.data()[r * c..(r + 1) * c];
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        if ones != 1 || row.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Usage(format!("target row {r} is not one-hot")));
        }
    }
    tape.neg_weighted_log(probs, targets.data().to_vec(), 1.0 / rows as f64)
}

/// Eval-mode inference that reuses one tape across samples.
pub struct Predictor {
    tape: Tape,
    net: Network,
    mark: usize,
}

impl Predictor {
    pub fn new(params: &ModelParams) -> Self {
        let mut tape = Tape::new();
        let net = params.register(&mut tape, false);
        let mark = tape.len();
        Predictor { tape, net, mark }
    }

    pub fn predict(&mut self, frames: &Tensor) -> Result<Vec<f64>> {
        self.tape.truncate(self.mark);
        // Eval mode never draws from the stream.
        let mut rng = stream(0, Purpose::Dropout, &[]);
        let out = self.net.forward(&mut self.tape, frames, Mode::Eval, &mut rng)?;
        Ok(self.tape.value(out).data().to_vec())
    }
}
