//! Regularized training objective, its gradient, a gradient-descent harness
//! and the analytic upper bounds furnished by a constructed memorizer.
//!
//! Parameters are the weights and biases of every layer. Post-matrices are
//! fixed structure: they take part in forward and backward passes but are
//! neither regularized nor updated.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{gelu_gap_sup, Activation, Matrix, Network};
use crate::memorize::{verify_memorization, LabeledDataset};
use crate::norms::triple_norm;

/// Largest number of step halvings tried before a run is declared stalled.
pub const MAX_HALVINGS: usize = 60;
/// Standard deviation of the Gaussian perturbation used for restarts ≥ 1.
pub const RESTART_NOISE: f64 = 0.1;
/// `|‖θ‖² − 1|` below which the geometric sum is replaced by its limit.
pub const UNIT_NORM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossId {
    /// `‖z − y‖₂²`.
    SquaredL2,
    /// `log(1 + eᶻ) − y z` for scalar outputs and labels in {0, 1}.
    BinaryLogistic,
}

impl std::str::FromStr for LossId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared_l2" | "squared" => Ok(LossId::SquaredL2),
            "binary_logistic" | "logistic" => Ok(LossId::BinaryLogistic),
            _ => Err(Error::InvalidParameter(format!("unknown loss '{s}'"))),
        }
    }
}

impl LossId {
    pub fn eval(self, z: &[f64], y: &[f64]) -> f64 {
        match self {
            LossId::SquaredL2 => z.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum(),
            LossId::BinaryLogistic => softplus(z[0]) - y[0] * z[0],
        }
    }

    /// Gradient with respect to `z`.
    pub fn grad(self, z: &[f64], y: &[f64]) -> Vec<f64> {
        match self {
            LossId::SquaredL2 => z.iter().zip(y).map(|(a, b)| 2.0 * (a - b)).collect(),
            LossId::BinaryLogistic => vec![sigmoid(z[0]) - y[0]],
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub loss: LossId,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub activation: Activation,
    /// Extra runs after the first; run 0 starts from the given network.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            loss: LossId::SquaredL2,
            learning_rate: 1e-2,
            max_iters: 500,
            activation: Activation::Relu,
            restarts: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be positive".into()));
        }
        if let Activation::GeluEps(e) = self.activation {
            if !(e > 0.0) {
                return Err(Error::InvalidParameter("GELU temperature must be positive".into()));
            }
        }
        Ok(())
    }
}

fn check_compat(net: &Network, ds: &LabeledDataset, loss: LossId) -> Result<Vec<Vec<f64>>> {
    net.check_shapes()?;
    if net.input_dim != ds.dim() {
        return Err(Error::ShapeMismatch(format!(
            "network input {} vs data dimension {}",
            net.input_dim,
            ds.dim()
        )));
    }
    let ys = ds.labels.as_vectors();
    let m = ys.first().map_or(0, Vec::len);
    if net.output_dim() != m {
        return Err(Error::ShapeMismatch(format!("network output {} vs label dimension {m}", net.output_dim())));
    }
    if loss == LossId::BinaryLogistic {
        if m != 1 {
            return Err(Error::LossLabelMismatch("logistic loss needs scalar outputs".into()));
        }
        if ys.iter().any(|y| y[0] != 0.0 && y[0] != 1.0) {
            return Err(Error::LossLabelMismatch("logistic loss needs labels in {0, 1}".into()));
        }
    }
    Ok(ys)
}

/// `(J, mean loss, ‖θ‖₂²)`.
pub fn objective_parts(net: &Network, ds: &LabeledDataset, cfg: &TrainConfig) -> Result<(f64, f64, f64)> {
    let ys = check_compat(net, ds, cfg.loss)?;
    let mut total = 0.0;
    for (x, y) in ds.points.iter().zip(&ys) {
        let z = net.forward_with_activation(x, cfg.activation)?;
        total += cfg.loss.eval(&z, y);
    }
    let loss = total / ds.n() as f64;
    let norm2 = triple_norm(net).l2_sq();
    Ok((cfg.lambda * norm2 + loss, loss, norm2))
}

/// `J_λ(θ) = λ ‖θ‖₂² + (1/N) Σ loss(φ(xᵢ), yᵢ)`.
pub fn j_lambda(net: &Network, ds: &LabeledDataset, cfg: &TrainConfig) -> Result<f64> {
    Ok(objective_parts(net, ds, cfg)?.0)
}

/// Gradient of `J_λ`, laid out like the network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradient {
    fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Matrix::zeros(l.weights.rows, l.weights.cols)).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// Entries in the order of [`flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(&w.data);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Weights then bias of each layer, in layer order.
pub fn flat_params(net: &Network) -> Vec<f64> {
    let mut out = Vec::new();
    for l in &net.layers {
        out.extend_from_slice(&l.weights.data);
        out.extend_from_slice(&l.bias);
    }
    out
}

/// Inverse of [`flat_params`].
pub fn set_flat_params(net: &mut Network, theta: &[f64]) -> Result<()> {
    let total: usize = net.layers.iter().map(|l| l.weights.data.len() + l.bias.len()).sum();
    if theta.len() != total {
        return Err(Error::ShapeMismatch(format!("{} parameters given, network has {total}", theta.len())));
    }
    let mut at = 0;
    for l in &mut net.layers {
        let nw = l.weights.data.len();
        l.weights.data.copy_from_slice(&theta[at..at + nw]);
        at += nw;
        let nb = l.bias.len();
        l.bias.copy_from_slice(&theta[at..at + nb]);
        at += nb;
    }
    Ok(())
}

/// Reverse-mode gradient of `J_λ`.
pub fn grad_j_lambda(net: &Network, ds: &LabeledDataset, cfg: &TrainConfig) -> Result<Gradient> {
    let ys = check_compat(net, ds, cfg.loss)?;
    let act = cfg.activation;
    let mut g = Gradient::zeros_like(net);
    let scale = 1.0 / ds.n() as f64;
    for (x, y) in ds.points.iter().zip(&ys) {
        let mut inputs = Vec::with_capacity(net.depth());
        let mut pre = Vec::with_capacity(net.depth());
        let mut h = x.clone();
        for l in &net.layers {
            let z = l.pre_activation(&h);
            inputs.push(h);
            h = l.apply_pre(&z, act);
            pre.push(z);
        }
        let mut delta = cfg.loss.grad(&h, y);
        for (j, l) in net.layers.iter().enumerate().rev() {
            if let Some(a) = &l.post {
                delta = a.transpose().mul_vec(&delta);
            }
            let gz: Vec<f64> = delta.iter().zip(&pre[j]).map(|(d, z)| d * act.derivative(*z)).collect();
            let w = &mut g.weights[j];
            for r in 0..w.rows {
                g.biases[j][r] += scale * gz[r];
                for c in 0..w.cols {
                    let v = w.get(r, c) + scale * gz[r] * inputs[j][c];
                    w.set(r, c, v);
                }
            }
            delta = l.weights.transpose().mul_vec(&gz);
        }
    }
    let two_l = 2.0 * cfg.lambda;
    for (l, (gw, gb)) in net.layers.iter().zip(g.weights.iter_mut().zip(g.biases.iter_mut())) {
        for (gv, v) in gw.data.iter_mut().zip(&l.weights.data) {
            *gv += two_l * v;
        }
        for (gv, v) in gb.iter_mut().zip(&l.bias) {
            *gv += two_l * v;
        }
    }
    Ok(g)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub restart: usize,
    pub iter: usize,
    #[serde(rename = "J")]
    pub j: f64,
    pub loss_term: f64,
    pub norm2_term: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: Network,
    /// `J` per accepted iteration of the winning run.
    pub history: Vec<f64>,
    pub best_restart: usize,
    /// Every run's log, in restart order.
    pub log: Vec<LogEntry>,
    /// Runs that hit a non-finite objective.
    pub aborted: Vec<usize>,
}

impl TrainOutcome {
    pub fn best_j(&self) -> f64 {
        *self.history.last().expect("history is never empty")
    }

    pub fn write_log<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.log {
            serde_json::to_writer(&mut w, e)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

fn run_gd(
    mut net: Network,
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    restart: usize,
    log: &mut Vec<LogEntry>,
) -> Result<(Network, Vec<f64>)> {
    let (mut j, mut loss, mut n2) = objective_parts(&net, ds, cfg)?;
    if !j.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let mut history = vec![j];
    log.push(LogEntry { restart, iter: 0, j, loss_term: loss, norm2_term: n2 });
    let mut theta = flat_params(&net);
    let mut lr = cfg.learning_rate;
    for iter in 1..=cfg.max_iters {
        let g = grad_j_lambda(&net, ds, cfg)?.flat();
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss);
        }
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(t, d)| t - lr * d).collect();
            let mut trial = net.clone();
            set_flat_params(&mut trial, &cand)?;
            let (jt, lt, nt) = objective_parts(&trial, ds, cfg)?;
            if jt.is_finite() && jt <= j {
                net = trial;
                theta = cand;
                (j, loss, n2) = (jt, lt, nt);
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        if !accepted {
            break;
        }
        history.push(j);
        log.push(LogEntry { restart, iter, j, loss_term: loss, norm2_term: n2 });
    }
    Ok((net, history))
}

/// Best-of-restarts gradient descent with step-halving backtracking.
///
/// A step is accepted only if it does not increase `J`, so every run's
/// history is non-increasing. Runs ≥ 1 start from `init` plus Gaussian noise
/// drawn from `ChaCha8(seed + r)`.
pub fn train_gd(init: &Network, ds: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_compat(init, ds, cfg.loss)?;
    let noise = Normal::new(0.0, RESTART_NOISE).expect("positive deviation");
    let mut log = Vec::new();
    let mut aborted = Vec::new();
    let mut best: Option<(Network, Vec<f64>, usize)> = None;
    for r in 0..=cfg.restarts {
        let mut start = init.clone();
        if r > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(r as u64));
            let theta: Vec<f64> = flat_params(init).iter().map(|t| t + noise.sample(&mut rng)).collect();
            set_flat_params(&mut start, &theta)?;
        }
        match run_gd(start, ds, cfg, r, &mut log) {
            Ok((net, hist)) => {
                let jr = *hist.last().unwrap();
                if best.as_ref().map_or(true, |(_, h, _)| jr < *h.last().unwrap()) {
                    best = Some((net, hist, r));
                }
            }
            Err(Error::NonFiniteLoss) => aborted.push(r),
            Err(e) => return Err(e),
        }
    }
    let (net, history, best_restart) = best.ok_or(Error::NonFiniteLoss)?;
    Ok(TrainOutcome { net, history, best_restart, log, aborted })
}

/// `λ ‖θ*‖₂²` for a network that memorizes `ds`.
pub fn certificate(theta_star: &Network, ds: &LabeledDataset, lambda: f64) -> Result<f64> {
    let rep = verify_memorization(theta_star, ds, 1e-6)?;
    if !rep.passed() {
        return Err(Error::NotAMemorizer(rep.max_abs_error));
    }
    Ok(lambda * triple_norm(theta_star).l2_sq())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviationBound {
    /// `R₀ … R_L`.
    pub radii: Vec<f64>,
    /// `ν₁ … ν_L`.
    pub nu: Vec<f64>,
}

/// `R₀ = max ‖xᵢ‖`, `R_j = ‖W_j‖₂ R_{j−1} + ‖b_j‖₂`.
///
/// A post-matrix `A` on layer `j` multiplies the radius handed to layer
/// `j + 1` by `‖A‖₂`.
pub fn deviation_radii(net: &Network, ds: &LabeledDataset) -> Vec<f64> {
    let r0 = ds.points.iter().map(|p| crate::geometry::norm2(p)).fold(0.0, f64::max);
    let mut radii = vec![r0];
    let mut carry = r0;
    for l in &net.layers {
        let r = l.weights.spectral_norm() * carry + crate::geometry::norm2(&l.bias);
        radii.push(r);
        carry = l.post.as_ref().map_or(r, |a| a.spectral_norm() * r);
    }
    radii
}

/// `sup_{|u| ≤ r} |gelu_ε(u) − relu(u)|` for a scalar.
pub fn gelu_gap_within(eps: f64, r: f64) -> f64 {
    let (x0, c0) = gelu_gap_sup();
    if r >= eps * x0.abs() {
        eps * c0
    } else {
        eps * crate::geometry::gelu_relu_gap(r / eps)
    }
}

/// `ν_j = √d_j · sup_{|u| ≤ R_j} |gelu_ε(u) − relu(u)|` for `j = 1 … L`.
pub fn nu_for_gelu(eps: f64, radii: &[f64], widths: &[usize]) -> Vec<f64> {
    radii
        .iter()
        .skip(1)
        .zip(widths)
        .map(|(&r, &d)| if r == 0.0 { 0.0 } else { (d as f64).sqrt() * gelu_gap_within(eps, r) })
        .collect()
}

/// Deviation radii and GELU gaps for a network.
pub fn deviation_bound(net: &Network, ds: &LabeledDataset, eps: f64) -> DeviationBound {
    let radii = deviation_radii(net, ds);
    let widths: Vec<usize> = net.layers.iter().map(|l| l.d_out()).collect();
    let nu = nu_for_gelu(eps, &radii, &widths);
    DeviationBound { radii, nu }
}

/// `2 ‖ν‖₂² (n^L − 1)/(n − 1)` with `n = ‖θ*‖₂²`, or `2 ‖ν‖₂² L` when `n = 1`.
pub fn a_loss_squared(nu: &[f64], norm_sq: f64, depth: usize) -> f64 {
    let nu2: f64 = nu.iter().map(|v| v * v).sum();
    if nu2 == 0.0 {
        return 0.0;
    }
    let l = depth as f64;
    if (norm_sq - 1.0).abs() <= UNIT_NORM_TOL {
        2.0 * nu2 * l
    } else {
        2.0 * nu2 * (norm_sq.powf(l) - 1.0) / (norm_sq - 1.0)
    }
}

/// `λ ‖θ*‖₂² + 𝒜(ν)` for the squared loss with GELU temperature `eps`.
pub fn gelu_objective_bound(theta_star: &Network, ds: &LabeledDataset, lambda: f64, eps: f64) -> Result<f64> {
    let cert = certificate(theta_star, ds, lambda)?;
    let bound = deviation_bound(theta_star, ds, eps);
    let n2 = triple_norm(theta_star).l2_sq();
    Ok(cert + a_loss_squared(&bound.nu, n2, theta_star.depth()))
}

/// Per layer, the largest measured `‖x^j − x̂^j‖` over the data and the
/// running bound `e_j = ν_j + ‖W_j‖₂ e_{j−1}` (times `‖A_j‖₂` with a post).
pub fn deviation_profile(net: &Network, ds: &LabeledDataset, eps: f64) -> Result<Vec<(f64, f64)>> {
    let bound = deviation_bound(net, ds, eps);
    let mut measured = vec![0.0; net.depth()];
    for x in &ds.points {
        let a = net.forward_trace(x)?;
        let b = net.forward_trace_with_activation(x, Activation::GeluEps(eps))?;
        for (j, (u, v)) in a.iter().zip(&b).enumerate().take(net.depth()) {
            measured[j] = f64::max(measured[j], crate::geometry::dist(u, v));
        }
    }
    let mut e = 0.0;
    let mut out = Vec::with_capacity(net.depth());
    for (j, l) in net.layers.iter().enumerate() {
        e = bound.nu[j] + l.weights.spectral_norm() * e;
        if let Some(a) = &l.post {
            e *= a.spectral_norm();
        }
        out.push((measured[j], e));
    }
    Ok(out)
}
