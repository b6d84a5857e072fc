//! The recognition model: five conv/pool stages over the 128x32 plane,
//! collapse to a 32-step sequence, bidirectional LSTM, and a dense
//! projection to per-step class log-probabilities.
//!
//! Parameters live in a flat named list so the optimizer and checkpoint
//! code can treat them uniformly; forward code looks them up by name.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::tape::{Tape, Var};
use crate::tensor::{lit, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub enum NetworkError {
    BadConfig { reason: &'static str },
    BadInput { expected: (usize, usize), got: Vec<usize> },
    Tensor(TensorError),
}

impl fmt::Display for NetworkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkError::BadConfig { reason } => write!(f, "bad model config: {reason}"),
            NetworkError::BadInput { expected, got } => {
                write!(f, "expected a [{}, {}] input plane, got {got:?}", expected.0, expected.1)
            }
            NetworkError::Tensor(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for NetworkError {}

impl From<TensorError> for NetworkError {
    fn from(e: TensorError) -> Self {
        NetworkError::Tensor(e)
    }
}

/// Model geometry. Axis 0 of the input plane is the writing (time) axis;
/// pool pairs are (time factor, height factor).
#[derive(Debug, Clone, PartialEq)]
pub struct HwrcnetConfig {
    pub input_w: usize,
    pub input_h: usize,
    pub maps: Vec<usize>,
    pub kernels: Vec<usize>,
    pub pools: Vec<(usize, usize)>,
    /// Zero-based stage index whose output is batch-normalized.
    pub bn_stage: usize,
    pub hidden: usize,
    pub num_classes: usize,
}

impl HwrcnetConfig {
    /// The full-size production geometry: 128x32 input, 32 time steps,
    /// 256-unit directions, 80 classes.
    pub fn full(num_classes: usize) -> Self {
        HwrcnetConfig {
            input_w: 128,
            input_h: 32,
            maps: vec![32, 64, 128, 128, 256],
            kernels: vec![5, 5, 3, 3, 3],
            pools: vec![(2, 2), (2, 2), (1, 2), (1, 2), (1, 2)],
            bn_stage: 2,
            hidden: 256,
            num_classes,
        }
    }

    /// Same topology at a fraction of the width, for fast desk-scale runs.
    pub fn reduced(num_classes: usize) -> Self {
        HwrcnetConfig {
            maps: vec![8, 16, 32, 32, 64],
            hidden: 64,
            ..Self::full(num_classes)
        }
    }

    /// Checks the geometry and returns (time steps, collapsed height).
    /// The pool schedule must divide the input exactly and collapse the
    /// height axis to 1.
    pub fn validate(&self) -> Result<(usize, usize), NetworkError> {
        let n = self.maps.len();
        if n == 0 || self.kernels.len() != n || self.pools.len() != n {
            return Err(NetworkError::BadConfig { reason: "stage lists must share one length" });
        }
        if self.bn_stage >= n {
            return Err(NetworkError::BadConfig { reason: "bn stage index out of range" });
        }
        if self.hidden == 0 || self.num_classes < 2 {
            return Err(NetworkError::BadConfig { reason: "hidden size or class count too small" });
        }
        if self.kernels.iter().any(|&k| !(k == 1 || k == 3 || k == 5)) {
            return Err(NetworkError::BadConfig { reason: "kernel sizes must be 1, 3 or 5" });
        }
        let (mut w, mut h) = (self.input_w, self.input_h);
        for &(p0, p1) in &self.pools {
            if p0 == 0 || p1 == 0 || w % p0 != 0 || h % p1 != 0 {
                return Err(NetworkError::BadConfig {
                    reason: "pool schedule does not divide the input evenly",
                });
            }
            w /= p0;
            h /= p1;
        }
        if h != 1 {
            return Err(NetworkError::BadConfig {
                reason: "pool schedule must collapse the height axis to 1",
            });
        }
        Ok((w, h))
    }

    /// Number of output time steps under the pool schedule.
    pub fn time_steps(&self) -> usize {
        let p: usize = self.pools.iter().map(|&(p0, _)| p0).product();
        self.input_w / p
    }

    fn feature_dim(&self) -> usize {
        *self.maps.last().expect("validated config has stages")
    }
}

const GATES: [&str; 4] = ["i", "f", "g", "o"];

/// Flat named parameter store plus the batch-norm running statistics
/// (tracked, not optimized).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: HwrcnetConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

/// Samples a truncated normal: standard normals outside two standard
/// deviations are redrawn, then scaled by `std`.
fn trunc_normal<T: Scalar>(rng: &mut ChaCha8Rng, std: f64) -> T {
    loop {
        // Box-Muller on uniforms from the top 53 bits.
        let u1 = ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
        let u2 = ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
        let z = libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2);
        if z.abs() <= 2.0 {
            return lit(z * std);
        }
    }
}

fn random_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let numel: usize = shape.iter().product();
    let data: Vec<T> = (0..numel).map(|_| trunc_normal(rng, std)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded initialization: truncated-normal weights (std 0.1), zero
    /// biases, identity batch-norm, zero-mean/unit-var running stats.
    pub fn init(config: HwrcnetConfig, seed: u64) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 0.1;
        let mut names = Vec::new();
        let mut tensors: Vec<Tensor<T>> = Vec::new();
        let push = |names: &mut Vec<String>, tensors: &mut Vec<Tensor<T>>, n: String, t: Tensor<T>| {
            names.push(n);
            tensors.push(t);
        };

        let mut cin = 1;
        for (i, (&cout, &k)) in config.maps.iter().zip(&config.kernels).enumerate() {
            push(&mut names, &mut tensors, format!("conv{i}.w"), random_tensor(&mut rng, &[k, k, cin, cout], std));
            push(&mut names, &mut tensors, format!("conv{i}.b"), Tensor::zeros(&[cout]));
            cin = cout;
        }
        let bn_c = config.maps[config.bn_stage];
        push(&mut names, &mut tensors, "bn.gamma".into(), Tensor::full(&[bn_c], T::one()));
        push(&mut names, &mut tensors, "bn.beta".into(), Tensor::zeros(&[bn_c]));

        let feat = config.feature_dim();
        let h = config.hidden;
        for dir in ["fw", "bw"] {
            for gate in GATES {
                push(&mut names, &mut tensors, format!("lstm.{dir}.{gate}.wx"), random_tensor(&mut rng, &[feat, h], std));
                push(&mut names, &mut tensors, format!("lstm.{dir}.{gate}.wh"), random_tensor(&mut rng, &[h, h], std));
                push(&mut names, &mut tensors, format!("lstm.{dir}.{gate}.b"), Tensor::zeros(&[h]));
            }
        }
        push(&mut names, &mut tensors, "proj.w".into(), random_tensor(&mut rng, &[2 * h, config.num_classes], std));
        push(&mut names, &mut tensors, "proj.b".into(), Tensor::zeros(&[config.num_classes]));

        Ok(ModelParams {
            config,
            names,
            tensors,
            running_mean: Tensor::zeros(&[bn_c]),
            running_var: Tensor::full(&[bn_c], T::one()),
        })
    }

    /// Rebuilds a parameter set from named tensors (checkpoint load).
    pub fn from_named(
        config: HwrcnetConfig,
        mut lookup: impl FnMut(&str) -> Option<Tensor<T>>,
        running_mean: Tensor<T>,
        running_var: Tensor<T>,
    ) -> Result<Self, NetworkError> {
        let template = Self::init(config, 0)?;
        let mut tensors = Vec::with_capacity(template.names.len());
        for (name, t) in template.names.iter().zip(&template.tensors) {
            let loaded = lookup(name).ok_or(NetworkError::BadConfig {
                reason: "missing parameter block",
            })?;
            if loaded.shape() != t.shape() {
                return Err(NetworkError::BadConfig { reason: "parameter block shape mismatch" });
            }
            tensors.push(loaded);
        }
        if running_mean.shape() != template.running_mean.shape()
            || running_var.shape() != template.running_var.shape()
        {
            return Err(NetworkError::BadConfig { reason: "running statistics shape mismatch" });
        }
        Ok(ModelParams {
            config: template.config,
            names: template.names,
            tensors,
            running_mean,
            running_var,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&self.tensors[i])
    }

    /// Total number of scalar parameters (running stats excluded).
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
        }
    }

    /// Registers every parameter as a tape leaf, in canonical order.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            names: self.names.clone(),
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }
}

/// Tape handles for the bound parameters, indexable by name.
pub struct BoundParams {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"));
        self.vars[i]
    }

    /// Vars in canonical parameter order (matches `ModelParams::names`).
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn lstm(&self, dir: &str) -> LstmVars {
        let pick = |g: &str, part: &str| self.var(&format!("lstm.{dir}.{g}.{part}"));
        LstmVars {
            wx: [pick("i", "wx"), pick("f", "wx"), pick("g", "wx"), pick("o", "wx")],
            wh: [pick("i", "wh"), pick("f", "wh"), pick("g", "wh"), pick("o", "wh")],
            b: [pick("i", "b"), pick("f", "b"), pick("g", "b"), pick("o", "b")],
        }
    }
}

/// Tape handles for one LSTM direction, gate order (input, forget,
/// candidate, output).
#[derive(Clone, Copy)]
pub struct LstmVars {
    pub wx: [Var; 4],
    pub wh: [Var; 4],
    pub b: [Var; 4],
}

/// Each sample is normalized by its own spatial batch-norm statistics in
/// both modes (a sample is its own batch here), so train and eval forwards
/// see identical normalization; the modes differ only in whether the
/// statistics are reported back for the running averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Convolutional feature extractor: five conv(+bias)+relu+pool stages,
/// batch norm after the configured stage's pool, then collapse to
/// `[time_steps, feature_dim]`. In train mode the batch statistics used
/// are returned so the caller can update the running averages.
#[allow(clippy::type_complexity)]
pub fn cnn_forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    bound: &BoundParams,
    input: Var,
    mode: Mode,
) -> Result<(Var, Option<(Tensor<T>, Tensor<T>)>), NetworkError> {
    let cfg = &params.config;
    let (time, _) = cfg.validate()?;
    let in_shape = tape.value(input).shape();
    if in_shape != [cfg.input_w, cfg.input_h] {
        return Err(NetworkError::BadInput {
            expected: (cfg.input_w, cfg.input_h),
            got: in_shape.to_vec(),
        });
    }

    let mut x = tape.reshape(input, vec![cfg.input_w, cfg.input_h, 1])?;
    let mut stats = None;
    for i in 0..cfg.maps.len() {
        let w = bound.var(&format!("conv{i}.w"));
        let b = bound.var(&format!("conv{i}.b"));
        x = tape.conv2d_same(x, w)?;
        x = tape.add_last_axis(x, b)?;
        x = tape.relu(x)?;
        let (p0, p1) = cfg.pools[i];
        if p0 > 1 || p1 > 1 {
            x = tape.maxpool2d(x, p0, p1)?;
        }
        if i == cfg.bn_stage {
            let gamma = bound.var("bn.gamma");
            let beta = bound.var("bn.beta");
            let (y, mean, var) = tape.batchnorm_train(x, gamma, beta)?;
            if mode == Mode::Train {
                stats = Some((mean, var));
            }
            x = y;
        }
    }
    let feat = cfg.feature_dim();
    let out = tape.reshape(x, vec![time, feat])?;
    Ok((out, stats))
}

/// One LSTM direction over `[T, in]` features with zero initial state;
/// `reverse` scans right-to-left but emits outputs in input order.
pub fn lstm_direction<T: Scalar>(
    tape: &mut Tape<T>,
    features: Var,
    cell: &LstmVars,
    hidden: usize,
    reverse: bool,
) -> Result<Var, NetworkError> {
    let t_len = tape.value(features).shape()[0];
    let mut h = tape.leaf(Tensor::zeros(&[1, hidden]));
    let mut c = tape.leaf(Tensor::zeros(&[1, hidden]));
    let mut outputs = vec![None; t_len];
    for step in 0..t_len {
        let t = if reverse { t_len - 1 - step } else { step };
        let x_t = tape.select_row(features, t)?;
        let mut pre = [x_t; 4];
        for g in 0..4 {
            let xw = tape.dense(x_t, cell.wx[g], cell.b[g])?;
            let hw = tape.matmul(h, cell.wh[g])?;
            pre[g] = tape.add(xw, hw)?;
        }
        let i = tape.sigmoid(pre[0])?;
        let f = tape.sigmoid(pre[1])?;
        let g = tape.tanh(pre[2])?;
        let o = tape.sigmoid(pre[3])?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        c = tape.add(fc, ig)?;
        let ct = tape.tanh(c)?;
        h = tape.mul(o, ct)?;
        outputs[t] = Some(h);
    }
    let rows: Vec<Var> = outputs.into_iter().map(|v| v.expect("all steps emitted")).collect();
    Ok(tape.concat_rows(&rows)?)
}

/// Both directions over the same features, outputs concatenated per step.
pub fn bilstm_forward<T: Scalar>(
    tape: &mut Tape<T>,
    features: Var,
    fw: &LstmVars,
    bw: &LstmVars,
    hidden: usize,
) -> Result<Var, NetworkError> {
    let fwd = lstm_direction(tape, features, fw, hidden, false)?;
    let bwd = lstm_direction(tape, features, bw, hidden, true)?;
    Ok(tape.concat_cols(fwd, bwd)?)
}

/// Forward pass output: per-step class log-probabilities plus, in train
/// mode, the batch-norm statistics of this pass.
pub struct ForwardOut<T> {
    pub log_probs: Var,
    pub bn_stats: Option<(Tensor<T>, Tensor<T>)>,
}

/// Full model: CNN features, BiLSTM, dense projection, per-row log-softmax.
pub fn model_forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    bound: &BoundParams,
    input: Var,
    mode: Mode,
) -> Result<ForwardOut<T>, NetworkError> {
    let (features, bn_stats) = cnn_forward(tape, params, bound, input, mode)?;
    let seq = bilstm_forward(
        tape,
        features,
        &bound.lstm("fw"),
        &bound.lstm("bw"),
        params.config.hidden,
    )?;
    let logits = tape.dense(seq, bound.var("proj.w"), bound.var("proj.b"))?;
    let log_probs = tape.log_softmax_rows(logits)?;
    Ok(ForwardOut { log_probs, bn_stats })
}

/// Binds the parameters and runs an eval-mode forward on one input plane,
/// returning the `[T, C]` log-probabilities as a plain tensor.
pub fn infer<T: Scalar>(
    params: &ModelParams<T>,
    input: &Tensor<T>,
) -> Result<Tensor<T>, NetworkError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let x = tape.leaf(input.clone());
    let out = model_forward(&mut tape, params, &bound, x, Mode::Eval)?;
    Ok(tape.value(out.log_probs).clone())
}
