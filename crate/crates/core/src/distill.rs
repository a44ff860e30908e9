//! Multi-tap distillation loss and a small trainer for affine stacks.
//!
//! The loss over a batch is `sum_x sum_j lambda_j * ||t_j(x) - s_j(x)||^2`.
//! With a single tap and `lambda = 1` it is the plain head-distillation SSE.
//! Batch losses are summed, never averaged, so learning rates here are per
//! summed-batch loss.
//!
//! The trainer mimics a frozen teacher with a student that has a narrow
//! bottleneck layer. For linear students the best achievable loss is known in
//! closed form (Eckart–Young), which `eckart_young_bound` computes from a
//! one-sided Jacobi SVD.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// One compared pair of teacher/student outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TapPoint {
    pub index: usize,
    pub lambda: f64,
    pub teacher_out: Tensor,
    pub student_out: Tensor,
}

impl TapPoint {
    pub fn new(index: usize, lambda: f64, teacher_out: Tensor, student_out: Tensor) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Argument(format!("tap {index}: lambda {lambda} must be >= 0")));
        }
        if teacher_out.shape() != student_out.shape() {
            return Err(Error::Shape(format!(
                "tap {index}: teacher output {} vs student output {}",
                teacher_out.shape(),
                student_out.shape()
            )));
        }
        Ok(TapPoint {
            index,
            lambda,
            teacher_out,
            student_out,
        })
    }
}

/// How each tap's SSE enters the total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapNorm {
    /// Raw sum of squared errors.
    #[default]
    Sum,
    /// SSE divided by the tap's element count.
    PerElement,
}

impl TapNorm {
    fn factor(self, numel: usize) -> f64 {
        match self {
            TapNorm::Sum => 1.0,
            TapNorm::PerElement => 1.0 / numel as f64,
        }
    }
}

fn sse_slices(t: &[f32], s: &[f32]) -> f64 {
    t.iter()
        .zip(s)
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum()
}

pub fn sse_loss(t_out: &Tensor, s_out: &Tensor) -> Result<f64> {
    if t_out.shape() != s_out.shape() {
        return Err(Error::Shape(format!(
            "teacher output {} vs student output {}",
            t_out.shape(),
            s_out.shape()
        )));
    }
    Ok(sse_slices(t_out.data(), s_out.data()))
}

fn check_taps(taps: &[TapPoint]) -> Result<()> {
    if taps.is_empty() {
        return Err(Error::Argument("at least one tap point is required".into()));
    }
    for tap in taps {
        if !(tap.lambda.is_finite() && tap.lambda >= 0.0) {
            return Err(Error::Argument(format!(
                "tap {}: lambda {} must be >= 0",
                tap.index, tap.lambda
            )));
        }
        if tap.teacher_out.shape() != tap.student_out.shape() {
            return Err(Error::Shape(format!(
                "tap {}: teacher output {} vs student output {}",
                tap.index,
                tap.teacher_out.shape(),
                tap.student_out.shape()
            )));
        }
    }
    Ok(())
}

pub fn generalized_loss(taps: &[TapPoint]) -> Result<f64> {
    generalized_loss_with(taps, TapNorm::Sum)
}

pub fn generalized_loss_with(taps: &[TapPoint], norm: TapNorm) -> Result<f64> {
    check_taps(taps)?;
    Ok(taps
        .iter()
        .map(|tap| {
            tap.lambda
                * norm.factor(tap.student_out.numel())
                * sse_slices(tap.teacher_out.data(), tap.student_out.data())
        })
        .sum())
}

/// Gradient of the loss with respect to each tap's student output:
/// `2 * lambda_j * (s_j - t_j)`.
pub fn loss_grad(taps: &[TapPoint]) -> Result<Vec<Tensor>> {
    loss_grad_with(taps, TapNorm::Sum)
}

pub fn loss_grad_with(taps: &[TapPoint], norm: TapNorm) -> Result<Vec<Tensor>> {
    check_taps(taps)?;
    taps.iter()
        .map(|tap| {
            let k = 2.0 * tap.lambda * norm.factor(tap.student_out.numel());
            let g = tap
                .student_out
                .data()
                .iter()
                .zip(tap.teacher_out.data())
                .map(|(&s, &t)| (k * (f64::from(s) - f64::from(t))) as f32)
                .collect();
            Tensor::new(tap.student_out.shape().clone(), g)
        })
        .collect()
}

/// `y = W x + b`. A layer without a trainable bias keeps `b` at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub trainable_bias: bool,
}

impl AffineLayer {
    pub fn linear(weight: DMatrix<f64>) -> Self {
        let rows = weight.nrows();
        AffineLayer {
            weight,
            bias: DVector::zeros(rows),
            trainable_bias: false,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Widths and tap layout of an affine stack, without weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadTopology {
    /// `widths[0]` is the input width; layer `l` maps `widths[l]` to `widths[l + 1]`.
    pub widths: Vec<usize>,
    /// Layer indices whose outputs are compared against the teacher.
    pub taps: Vec<usize>,
    pub bottleneck: Option<usize>,
    #[serde(default)]
    pub bias: bool,
}

impl HeadTopology {
    fn validate(&self) -> Result<()> {
        let layers = self.widths.len().saturating_sub(1);
        if layers == 0 || self.widths.contains(&0) {
            return Err(Error::Shape(format!("bad widths {:?}", self.widths)));
        }
        if self.taps.is_empty() {
            return Err(Error::Argument("a head needs at least one tap".into()));
        }
        if let Some(&t) = self.taps.iter().find(|&&t| t >= layers) {
            return Err(Error::Shape(format!("tap {t} but only {layers} layers")));
        }
        if let Some(b) = self.bottleneck {
            if b >= layers {
                return Err(Error::Shape(format!("bottleneck {b} but only {layers} layers")));
            }
            let width = self.widths[b + 1];
            let before = self.widths[b];
            let after = self.widths.get(b + 2).copied().unwrap_or(usize::MAX);
            if !(width < before && width < after) {
                return Err(Error::Shape(format!(
                    "bottleneck width {width} must be narrower than its neighbours ({before}, {after})"
                )));
            }
        }
        Ok(())
    }

    fn init(&self, rng: &mut impl Rng) -> Vec<AffineLayer> {
        self.widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                AffineLayer {
                    weight: DMatrix::from_fn(fan_out, fan_in, |_, _| {
                        rng.random_range(-bound..bound)
                    }),
                    bias: DVector::zeros(fan_out),
                    trainable_bias: self.bias,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyHead {
    pub layers: Vec<AffineLayer>,
    pub taps: Vec<usize>,
    pub bottleneck: Option<usize>,
}

impl ToyHead {
    pub fn new(layers: Vec<AffineLayer>, taps: Vec<usize>, bottleneck: Option<usize>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("a head needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} takes {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Shape("bias length differs from layer output".into()));
            }
        }
        let head = ToyHead {
            layers,
            taps,
            bottleneck,
        };
        head.topology().validate()?;
        Ok(head)
    }

    pub fn topology(&self) -> HeadTopology {
        let mut widths = vec![self.layers[0].in_dim()];
        widths.extend(self.layers.iter().map(AffineLayer::out_dim));
        HeadTopology {
            widths,
            taps: self.taps.clone(),
            bottleneck: self.bottleneck,
            bias: self.layers.iter().any(|l| l.trainable_bias),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Outputs of every layer for a batch whose columns are samples.
    fn forward(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut outs: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = outs.last().unwrap_or(x);
            let mut y = &layer.weight * input;
            for mut col in y.column_iter_mut() {
                col += &layer.bias;
            }
            outs.push(y);
        }
        outs
    }

    /// Tap outputs for a single input vector.
    pub fn tap_outputs(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        if x.numel() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input has {} elements, head expects {}",
                x.numel(),
                self.in_dim()
            )));
        }
        let col = DMatrix::from_iterator(x.numel(), 1, x.data().iter().map(|&v| f64::from(v)));
        let outs = self.forward(&col);
        self.taps
            .iter()
            .map(|&t| {
                let y = &outs[t];
                Tensor::new(
                    Shape::new(vec![y.nrows()])?,
                    y.iter().map(|&v| v as f32).collect(),
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay_factor: f64,
    /// After this many completed epochs the rate is multiplied by the factor.
    pub decay_epochs: Vec<usize>,
    #[serde(default = "defaults::beta1")]
    pub adam_beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub adam_beta2: f64,
    #[serde(default = "defaults::eps")]
    pub adam_eps: f64,
    /// Per-tap scale factors; empty means 1 for every tap.
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub tap_norm: TapNorm,
    pub seed: u64,
}

mod defaults {
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn eps() -> f64 {
        1e-8
    }
}

impl Default for TrainConfig {
    /// Detector-scale schedule: 20 epochs, batch 4, Adam at 1e-3, decayed by
    /// 0.1 after epochs 5 and 15.
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 4,
            lr0: 1e-3,
            lr_decay_factor: 0.1,
            decay_epochs: vec![5, 15],
            adam_beta1: defaults::beta1(),
            adam_beta2: defaults::beta2(),
            adam_eps: defaults::eps(),
            lambdas: Vec::new(),
            tap_norm: TapNorm::Sum,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be >= 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Argument(format!("lr0 {} must be > 0", self.lr0)));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Argument(format!(
                "lr_decay_factor {} must lie in (0, 1]",
                self.lr_decay_factor
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Argument("Adam betas must lie in [0, 1)".into()));
        }
        if self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Argument("lambdas must be >= 0".into()));
        }
        Ok(())
    }

    /// Learning rate used during 1-based epoch `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&d| d < epoch).count();
        self.lr0 * self.lr_decay_factor.powi(decays as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Loss over the whole dataset after the epoch, divided by its size.
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub student: ToyHead,
    pub history: Vec<EpochRecord>,
    /// Summed loss over the whole dataset after the last epoch.
    pub final_loss: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: i32, cfg: &TrainConfig) {
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
        }
    }
}

/// Summed loss and per-tap output gradients for a batch.
fn batch_loss(
    outs: &[DMatrix<f64>],
    taps: &[usize],
    targets: &[DMatrix<f64>],
    lambdas: &[f64],
    norm: TapNorm,
    want_grad: bool,
) -> (f64, Vec<DMatrix<f64>>) {
    let mut loss = 0.0;
    let mut grads = Vec::new();
    for ((&tap, target), &lambda) in taps.iter().zip(targets).zip(lambdas) {
        let diff = &outs[tap] - target;
        let k = lambda * norm.factor(diff.nrows());
        loss += k * diff.norm_squared();
        if want_grad {
            grads.push(diff * (2.0 * k));
        }
    }
    (loss, grads)
}

fn columns(dataset: &[Tensor], idx: &[usize]) -> DMatrix<f64> {
    let rows = dataset[idx[0]].numel();
    DMatrix::from_iterator(
        rows,
        idx.len(),
        idx.iter()
            .flat_map(|&i| dataset[i].data().iter().map(|&v| f64::from(v))),
    )
}

fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])])
}

/// Trains a fresh student of the given topology to mimic the frozen teacher.
pub fn train_toy(
    teacher: &ToyHead,
    student_spec: &HeadTopology,
    dataset: &[Tensor],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    student_spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::Argument("dataset is empty".into()));
    }
    let d_in = student_spec.widths[0];
    if teacher.in_dim() != d_in {
        return Err(Error::Shape(format!(
            "teacher takes {} inputs, student {d_in}",
            teacher.in_dim()
        )));
    }
    if let Some(i) = dataset.iter().position(|x| x.numel() != d_in) {
        return Err(Error::Shape(format!(
            "sample {i} has {} elements, expected {d_in}",
            dataset[i].numel()
        )));
    }
    if teacher.taps.len() != student_spec.taps.len() {
        return Err(Error::Shape(format!(
            "teacher exposes {} taps, student {}",
            teacher.taps.len(),
            student_spec.taps.len()
        )));
    }
    for (j, (&tt, &st)) in teacher.taps.iter().zip(&student_spec.taps).enumerate() {
        let tw = teacher.layers[tt].out_dim();
        let sw = student_spec.widths[st + 1];
        if tw != sw {
            return Err(Error::Shape(format!(
                "tap {j}: teacher width {tw}, student width {sw}"
            )));
        }
    }
    let lambdas = if cfg.lambdas.is_empty() {
        vec![1.0; student_spec.taps.len()]
    } else if cfg.lambdas.len() == student_spec.taps.len() {
        cfg.lambdas.clone()
    } else {
        return Err(Error::Argument(format!(
            "{} lambdas for {} taps",
            cfg.lambdas.len(),
            student_spec.taps.len()
        )));
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut layers = student_spec.init(&mut rng);

    let all: Vec<usize> = (0..dataset.len()).collect();
    let x_all = columns(dataset, &all);
    let teacher_outs = teacher.forward(&x_all);
    let targets_all: Vec<DMatrix<f64>> = teacher
        .taps
        .iter()
        .map(|&t| teacher_outs[t].clone())
        .collect();

    let mut adam_w: Vec<Adam> = layers.iter().map(|l| Adam::new(l.weight.len())).collect();
    let mut adam_b: Vec<Adam> = layers.iter().map(|l| Adam::new(l.bias.len())).collect();
    let mut order = all.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0i32;
    let n = dataset.len() as f64;

    let eval = |layers: &[AffineLayer]| {
        let head = ToyHead {
            layers: layers.to_vec(),
            taps: student_spec.taps.clone(),
            bottleneck: student_spec.bottleneck,
        };
        let outs = head.forward(&x_all);
        batch_loss(&outs, &student_spec.taps, &targets_all, &lambdas, cfg.tap_norm, false).0
    };

    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let x = select_columns(&x_all, batch);
            let targets: Vec<DMatrix<f64>> =
                targets_all.iter().map(|t| select_columns(t, batch)).collect();
            let head = ToyHead {
                layers: layers.clone(),
                taps: student_spec.taps.clone(),
                bottleneck: student_spec.bottleneck,
            };
            let outs = head.forward(&x);
            let (_, tap_grads) =
                batch_loss(&outs, &student_spec.taps, &targets, &lambdas, cfg.tap_norm, true);

            let mut delta: Option<DMatrix<f64>> = None;
            for l in (0..layers.len()).rev() {
                for (k, &tap) in student_spec.taps.iter().enumerate() {
                    if tap == l {
                        delta = Some(match delta {
                            Some(d) => d + &tap_grads[k],
                            None => tap_grads[k].clone(),
                        });
                    }
                }
                let Some(d) = delta.take() else { continue };
                let input = if l == 0 { &x } else { &outs[l - 1] };
                let grad_w = &d * input.transpose();
                let back = layers[l].weight.transpose() * &d;
                adam_w[l].step(layers[l].weight.as_mut_slice(), grad_w.as_slice(), lr, step, cfg);
                if layers[l].trainable_bias {
                    let grad_b = d.column_sum();
                    adam_b[l].step(layers[l].bias.as_mut_slice(), grad_b.as_slice(), lr, step, cfg);
                }
                if l > 0 {
                    delta = Some(back);
                }
            }
        }
        history.push(EpochRecord {
            epoch,
            mean_loss: eval(&layers) / n,
            lr,
        });
    }

    let final_loss = eval(&layers);
    let student = ToyHead::new(layers, student_spec.taps.clone(), student_spec.bottleneck)?;
    Ok(TrainOutcome {
        student,
        history,
        final_loss,
    })
}

/// Loss history as `epoch,mean_loss,lr`.
pub fn write_history_csv<W: Write>(w: W, history: &[EpochRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for rec in history {
        out.serialize(rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Singular values of `m` in descending order, by one-sided Jacobi
/// orthogonalisation of its columns.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    // Work on the orientation with fewer columns.
    let mut u = if m.ncols() > m.nrows() {
        m.transpose()
    } else {
        m.clone()
    };
    let (rows, cols) = u.shape();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    let (a, b) = (u[(i, p)], u[(i, q)]);
                    alpha += a * a;
                    beta += b * b;
                    gamma += a * b;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (a, b) = (u[(i, p)], u[(i, q)]);
                    u[(i, p)] = c * a - s * b;
                    u[(i, q)] = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = u.column_iter().map(|c| c.norm()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Smallest `sum_x ||A x - S x||^2` over maps `S` of rank at most `b`, where
/// the rows of `x` are the samples: the tail energy `sum_{i>b} sigma_i^2` of
/// `A x^T`.
pub fn eckart_young_bound(a: &DMatrix<f64>, x: &DMatrix<f64>, b: usize) -> f64 {
    let response = a * x.transpose();
    singular_values(&response).iter().skip(b).map(|s| s * s).sum()
}

/// A teacher, a student layout, data and a schedule that run end to end.
#[derive(Debug, Clone)]
pub struct ToyFixture {
    pub teacher: ToyHead,
    pub student: HeadTopology,
    pub dataset: Vec<Tensor>,
    pub config: TrainConfig,
    /// Teacher map and data matrix for the Eckart–Young oracle, when the
    /// student is a two-layer linear factorisation of a linear teacher.
    pub oracle: Option<(DMatrix<f64>, DMatrix<f64>, usize)>,
}

pub const FIXTURE_NAMES: [&str; 3] = ["linear_full_rank", "linear_low_rank", "multi_tap"];

const TOY_WIDTH: usize = 8;
const TOY_RANK: usize = 4;
const TOY_SAMPLES: usize = 64;

fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn toy_dataset(rng: &mut impl Rng) -> Result<Vec<Tensor>> {
    (0..TOY_SAMPLES)
        .map(|_| {
            let v: Vec<f32> = (0..TOY_WIDTH).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            Tensor::new(Shape::new(vec![TOY_WIDTH])?, v)
        })
        .collect()
}

fn data_matrix(dataset: &[Tensor]) -> DMatrix<f64> {
    DMatrix::from_fn(dataset.len(), dataset[0].numel(), |r, c| {
        f64::from(dataset[r].data()[c])
    })
}

fn linear_schedule(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 500,
        batch_size: TOY_SAMPLES,
        lr0: 3e-2,
        lr_decay_factor: 0.1,
        decay_epochs: vec![300, 450],
        seed,
        ..TrainConfig::default()
    }
}

/// Builds a named fixture; `seed` drives the teacher, data and training.
pub fn toy_fixture(name: &str, seed: u64) -> Result<ToyFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f1c7);
    match name {
        "linear_full_rank" | "linear_low_rank" => {
            let a = random_matrix(TOY_WIDTH, TOY_RANK, &mut rng)
                * random_matrix(TOY_RANK, TOY_WIDTH, &mut rng);
            let dataset = toy_dataset(&mut rng)?;
            let b = if name == "linear_full_rank" {
                TOY_RANK
            } else {
                TOY_RANK / 2
            };
            let teacher = ToyHead::new(vec![AffineLayer::linear(a.clone())], vec![0], None)?;
            let student = HeadTopology {
                widths: vec![TOY_WIDTH, b, TOY_WIDTH],
                taps: vec![1],
                bottleneck: Some(0),
                bias: false,
            };
            let x = data_matrix(&dataset);
            Ok(ToyFixture {
                teacher,
                student,
                dataset,
                config: linear_schedule(seed),
                oracle: Some((a, x, b)),
            })
        }
        "multi_tap" => {
            // Teacher: two full-rank maps, both outputs tapped. Student:
            // bottleneck + expansion standing in for the first map, then a
            // trainable copy of the second.
            let first = random_matrix(TOY_WIDTH, TOY_RANK, &mut rng)
                * random_matrix(TOY_RANK, TOY_WIDTH, &mut rng);
            let second = random_matrix(TOY_WIDTH, TOY_WIDTH, &mut rng);
            let teacher = ToyHead::new(
                vec![AffineLayer::linear(first), AffineLayer::linear(second)],
                vec![0, 1],
                None,
            )?;
            let student = HeadTopology {
                widths: vec![TOY_WIDTH, TOY_RANK, TOY_WIDTH, TOY_WIDTH],
                taps: vec![1, 2],
                bottleneck: Some(0),
                bias: false,
            };
            Ok(ToyFixture {
                teacher,
                student,
                dataset: toy_dataset(&mut rng)?,
                config: linear_schedule(seed),
                oracle: None,
            })
        }
        other => Err(Error::Argument(format!(
            "unknown fixture {other:?}; known: {}",
            FIXTURE_NAMES.join(", ")
        ))),
    }
}
