//! Dense layers, forward passes and the hyperplane helpers shared by every
//! constructor.
//!
//! A [`Layer`] computes `A · σ(W x + b)` where `σ` acts elementwise and the
//! post-matrix `A` is optional (absent means identity). Matrices are stored
//! row-major with shape `(rows, cols)`.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Absolute tolerance under which two points count as the same point.
pub const DEDUP_TOL: f64 = 1e-12;
/// Required projected gap, relative to the minimum pairwise point distance.
pub const GAP_TOL: f64 = 1e-9;
/// Number of random draws before [`separating_direction`] gives up.
pub const MAX_RETRIES: usize = 1000;
/// Candidates compared per round; the one with the widest projected gap wins.
pub const DIRECTION_CANDIDATES: usize = 16;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    /// `self · x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        let m = nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data);
        m.singular_values().iter().cloned().fold(0.0, f64::max)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// One layer `x ↦ A σ(W x + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    /// Optional post-matrix with `cols == d_out`; `None` acts as identity.
    pub post: Option<Matrix>,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows {
            return Err(Error::ShapeMismatch(format!(
                "bias length {} vs {} rows",
                bias.len(),
                weights.rows
            )));
        }
        Ok(Self { weights, bias, post: None })
    }

    /// Layer from explicit rows and bias.
    pub fn from_rows(rows: &[Vec<f64>], bias: Vec<f64>) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?, bias)
    }

    pub fn with_post(mut self, post: Matrix) -> Result<Self> {
        if post.cols != self.weights.rows {
            return Err(Error::ShapeMismatch(format!(
                "post-matrix has {} columns, layer has {} outputs",
                post.cols, self.weights.rows
            )));
        }
        self.post = Some(post);
        Ok(self)
    }

    /// `W = I`, `b = 0`: the identity on non-negative inputs.
    pub fn identity(n: usize) -> Self {
        Self { weights: Matrix::identity(n), bias: vec![0.0; n], post: None }
    }

    pub fn d_in(&self) -> usize {
        self.weights.cols
    }

    pub fn d_out(&self) -> usize {
        self.weights.rows
    }

    /// Dimension handed to the next layer.
    pub fn out_dim(&self) -> usize {
        self.post.as_ref().map_or(self.d_out(), |p| p.rows)
    }

    /// `W x + b`.
    pub fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.weights.mul_vec(x);
        for (zi, bi) in z.iter_mut().zip(&self.bias) {
            *zi += bi;
        }
        z
    }

    pub fn apply(&self, x: &[f64], act: Activation) -> Vec<f64> {
        self.apply_pre(&self.pre_activation(x), act)
    }

    /// `A σ(z)` for a given pre-activation `z`.
    pub fn apply_pre(&self, z: &[f64], act: Activation) -> Vec<f64> {
        let h: Vec<f64> = z.iter().map(|&v| act.eval(v)).collect();
        match &self.post {
            Some(a) => a.mul_vec(&h),
            None => h,
        }
    }
}

/// Scalar activation applied elementwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    /// `x/2 · (1 + erf(x / (ε√2)))`.
    GeluEps(f64),
}

impl Activation {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => relu(x),
            Activation::GeluEps(eps) => gelu_eps(x, eps),
        }
    }

    /// Derivative; the ReLU subgradient at 0 is taken as 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::GeluEps(eps) => {
                let s = x / (eps * std::f64::consts::SQRT_2);
                0.5 * (1.0 + libm::erf(s))
                    + x / (eps * (2.0 * std::f64::consts::PI).sqrt()) * (-s * s).exp()
            }
        }
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// GELU with temperature `eps`; `gelu_eps(x, 1)` is the standard GELU.
#[inline]
pub fn gelu_eps(x: f64, eps: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / (eps * std::f64::consts::SQRT_2)))
}

/// `|gelu_eps(x, 1) − relu(x)|`, which equals `|x| Φ(−|x|)`.
pub fn gelu_relu_gap(x: f64) -> f64 {
    (gelu_eps(x, 1.0) - relu(x)).abs()
}

/// Location and value of `sup_x |gelu(x) − relu(x)|`, found by a grid scan
/// followed by golden-section refinement. The gap is even in `x`; the
/// negative maximizer is returned.
pub fn gelu_gap_sup() -> (f64, f64) {
    static CELL: OnceLock<(f64, f64)> = OnceLock::new();
    *CELL.get_or_init(|| {
        let n = 4000;
        let (lo, hi) = (-4.0, 0.0);
        let step = (hi - lo) / n as f64;
        let best = (0..=n)
            .map(|i| lo + step * i as f64)
            .max_by(|a, b| gelu_relu_gap(*a).total_cmp(&gelu_relu_gap(*b)))
            .unwrap();
        let (mut a, mut b) = (best - step, best + step);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if gelu_relu_gap(c) > gelu_relu_gap(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let x0 = 0.5 * (a + b);
        (x0, gelu_relu_gap(x0))
    })
}

/// `c₀ = sup |gelu − relu|`.
pub fn gelu_gap_c0() -> f64 {
    gelu_gap_sup().1
}

/// Ordered list of layers acting on `input_dim`-dimensional inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub input_dim: usize,
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let net = Self { input_dim, layers };
        net.check_shapes()?;
        Ok(net)
    }

    pub fn empty(input_dim: usize) -> Self {
        Self { input_dim, layers: Vec::new() }
    }

    pub fn check_shapes(&self) -> Result<()> {
        let mut dim = self.input_dim;
        for (j, l) in self.layers.iter().enumerate() {
            if l.d_in() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "layer {j} expects {} inputs, receives {dim}",
                    l.d_in()
                )));
            }
            if l.bias.len() != l.d_out() {
                return Err(Error::ShapeMismatch(format!("layer {j} bias length")));
            }
            if let Some(p) = &l.post {
                if p.cols != l.d_out() {
                    return Err(Error::ShapeMismatch(format!("layer {j} post-matrix")));
                }
            }
            dim = l.out_dim();
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Largest `d_out` over layers (0 for an empty network).
    pub fn width(&self) -> usize {
        self.layers.iter().map(Layer::d_out).max().unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Layer::out_dim)
    }

    pub fn has_post(&self) -> bool {
        self.layers.iter().any(|l| l.post.is_some())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_with_activation(x, Activation::Relu)
    }

    pub fn forward_with_activation(&self, x: &[f64], act: Activation) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.apply(&h, act);
        }
        Ok(h)
    }

    /// Every intermediate state `x¹ … xᴸ`; the input itself for depth 0.
    pub fn forward_trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.forward_trace_with_activation(x, Activation::Relu)
    }

    pub fn forward_trace_with_activation(
        &self,
        x: &[f64],
        act: Activation,
    ) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        if self.layers.is_empty() {
            return Ok(vec![x.to_vec()]);
        }
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.apply(&h, act);
            out.push(h.clone());
        }
        Ok(out)
    }

    /// Applies layers `range` to `x` without shape checks on the input.
    pub fn forward_range(&self, x: &[f64], range: std::ops::Range<usize>) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in &self.layers[range] {
            h = l.apply(&h, Activation::Relu);
        }
        h
    }

    /// Appends the layers of `other`; output of `self` must match its input.
    pub fn compose(mut self, other: Network) -> Result<Network> {
        if self.output_dim() != other.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "cannot feed {} outputs into {} inputs",
                self.output_dim(),
                other.input_dim
            )));
        }
        self.layers.extend(other.layers);
        Ok(self)
    }
}

/// One named stage of a construction: the layers it emitted and where the
/// data sits after them.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub name: String,
    pub start: usize,
    pub end: usize,
    pub snapshot: Vec<Vec<f64>>,
}

/// Per-stage record of a construction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstructionTrace {
    pub stages: Vec<Stage>,
    pub flags: Vec<String>,
}

impl ConstructionTrace {
    pub fn push(&mut self, name: &str, len: usize, snapshot: Vec<Vec<f64>>) {
        let start = self.stages.last().map_or(0, |s| s.end);
        self.stages.push(Stage { name: name.to_string(), start, end: start + len, snapshot });
    }

    pub fn stage(&self, name: &str) -> Option<&Stage> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Ranges are contiguous, start at 0 and end at `depth`.
    pub fn covers(&self, depth: usize) -> bool {
        let mut at = 0;
        for s in &self.stages {
            if s.start != at || s.end < s.start {
                return false;
            }
            at = s.end;
        }
        at == depth
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimum pairwise distance and the pair attaining it.
pub fn min_pairwise_distance(points: &[Vec<f64>]) -> Option<(f64, usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = dist(&points[i], &points[j]);
            if best.map_or(true, |(b, _, _)| d < b) {
                best = Some((d, i, j));
            }
        }
    }
    best
}

/// Smallest gap between sorted values (infinite for fewer than two).
pub fn min_sorted_gap(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

pub(crate) fn random_unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm2(&v);
        if n > 1e-8 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

/// A unit vector `v` whose projections `v · xᵢ` are pairwise distinct, with
/// consecutive gaps at least `GAP_TOL` times the minimum point distance.
///
/// Random directions are drawn in rounds of [`DIRECTION_CANDIDATES`]; the
/// candidate with the widest relative gap is returned once one passes.
pub fn separating_direction(points: &[Vec<f64>], seed: u64) -> Result<Vec<f64>> {
    let dim = points.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::DomainError("points must have dimension ≥ 1".into()));
    }
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::ShapeMismatch("points of mixed dimension".into()));
    }
    let min_d = match min_pairwise_distance(points) {
        None => return Ok(unit_first_axis(dim)),
        Some((d, i, j)) if d <= DEDUP_TOL => return Err(Error::DuplicatePoints(i, j)),
        Some((d, _, _)) => d,
    };
    if dim == 1 {
        return Ok(vec![1.0]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn = 0;
    while drawn < MAX_RETRIES {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..DIRECTION_CANDIDATES.min(MAX_RETRIES - drawn) {
            drawn += 1;
            let v = random_unit_vector(&mut rng, dim);
            let proj: Vec<f64> = points.iter().map(|p| dot(&v, p)).collect();
            let ratio = min_sorted_gap(&proj) / min_d;
            if best.as_ref().map_or(true, |(r, _)| ratio > *r) {
                best = Some((ratio, v));
            }
        }
        if let Some((ratio, v)) = best {
            if ratio >= GAP_TOL {
                return Ok(v);
            }
        }
    }
    Err(Error::NoDirectionFound(drawn))
}

fn unit_first_axis(dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[0] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_basics() {
        assert_eq!(relu(-3.0), 0.0);
        assert_eq!(relu(0.0), 0.0);
        assert_eq!(relu(2.5), 2.5);
    }

    #[test]
    fn gelu_at_zero_and_scaling() {
        for eps in [1e-3, 0.1, 1.0, 7.0] {
            assert_eq!(gelu_eps(0.0, eps), 0.0);
        }
        for &(u, eps) in &[(0.3, 0.1), (-1.7, 0.01), (2.0, 3.0)] {
            let lhs = gelu_eps(eps * u, eps);
            let rhs = eps * gelu_eps(u, 1.0);
            assert!((lhs - rhs).abs() <= 1e-15 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn standard_gelu_reference_values() {
        // x Φ(x) from tabulated normal CDF values.
        assert!((gelu_eps(1.0, 1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((gelu_eps(-1.0, 1.0) + 0.158_655_253_931_457_05).abs() < 1e-15);
    }

    #[test]
    fn gap_sup_matches_stationarity_oracle() {
        // d/dt [t Φ(−t)] = Φ(−t) − t φ(t) = 0, solved by bisection.
        let phi = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let big_phi_neg = |t: f64| 0.5 * libm::erfc(t / std::f64::consts::SQRT_2);
        let g = |t: f64| big_phi_neg(t) - t * phi(t);
        let (mut a, mut b) = (0.1, 2.0);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if g(m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        let t = 0.5 * (a + b);
        let (x0, c0) = gelu_gap_sup();
        assert!((x0 + t).abs() < 1e-6, "x0 = {x0}, oracle {t}");
        assert!((c0 - t * big_phi_neg(t)).abs() < 1e-12);
        assert!((x0 + 0.75).abs() < 0.01);
    }

    #[test]
    fn forward_examples() {
        let net = Network::new(1, vec![Layer::from_rows(&[vec![1.0]], vec![0.0]).unwrap()]).unwrap();
        assert_eq!(net.forward(&[5.0]).unwrap(), vec![5.0]);
        let net = Network::new(1, vec![Layer::from_rows(&[vec![1.0]], vec![-2.0]).unwrap()]).unwrap();
        assert_eq!(net.forward(&[1.0]).unwrap(), vec![0.0]);
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn signed_decoder_adds_offset() {
        let y0 = -1.25;
        let layer = Layer::from_rows(&[vec![-1.0], vec![1.0]], vec![-y0, y0])
            .unwrap()
            .with_post(Matrix::from_rows(&[vec![-1.0, 1.0]]).unwrap())
            .unwrap();
        let net = Network::new(1, vec![layer]).unwrap();
        for y in [0.0, 0.5, 3.0, 10.0] {
            assert_eq!(net.forward(&[y]).unwrap(), vec![y + y0]);
        }
        assert_eq!(net.width(), 2);
        assert_eq!(net.output_dim(), 1);
    }

    #[test]
    fn trace_shapes() {
        let net = Network::empty(2);
        assert_eq!(net.forward_trace(&[1.0, 2.0]).unwrap(), vec![vec![1.0, 2.0]]);
        let l = Layer::identity(2);
        let net = Network::new(2, vec![l.clone(), l]).unwrap();
        let tr = net.forward_trace(&[1.0, 2.0]).unwrap();
        assert_eq!(tr.len(), 2);
        assert_eq!(tr[1], net.forward(&[1.0, 2.0]).unwrap());
    }

    #[test]
    fn zero_pre_activation_vanishes_for_both() {
        let net = Network::new(1, vec![Layer::from_rows(&[vec![1.0]], vec![-1.0]).unwrap()]).unwrap();
        assert_eq!(net.forward(&[1.0]).unwrap(), vec![0.0]);
        assert_eq!(net.forward_with_activation(&[1.0], Activation::GeluEps(0.3)).unwrap(), vec![0.0]);
    }

    #[test]
    fn separating_direction_examples() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert_eq!(separating_direction(&pts, 0).unwrap(), vec![1.0]);
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let v = separating_direction(&pts, 3).unwrap();
        assert!(dot(&v, &[1.0, 1.0]).abs() > 0.0);
        let pts = vec![vec![0.0, 1.0], vec![0.0, 1.0]];
        assert!(matches!(separating_direction(&pts, 0), Err(Error::DuplicatePoints(0, 1))));
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, -3.0]]).unwrap();
        assert!((m.spectral_norm() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn trace_coverage() {
        let mut t = ConstructionTrace::default();
        t.push("a", 1, vec![]);
        t.push("b", 4, vec![]);
        assert!(t.covers(5));
        assert!(!t.covers(6));
        assert_eq!(t.stage("b").unwrap().start, 1);
    }
}
