//! Approximation of functions on a box by exact memorization of a grid.
//!
//! The box is cut into cells of side `h` separated by a band of thickness
//! `δ = h^{1+p}`. The target is replaced by its per-cell average `f_h`;
//! a first block of layers collapses every cell to a single point, and a
//! memorizer maps those points to the cell values.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{min_pairwise_distance, ConstructionTrace, Layer, Network};
use crate::memorize::{build_memorizer_with_targets, decoder_layer, rank_values, vector_from_labels};

/// Default cap on the number of cells.
pub const CELL_BUDGET: usize = 4096;
/// Midpoint-rule points per axis for cell averages.
pub const QUAD_POINTS: usize = 8;
/// Cell values closer than this count as one value.
pub const VALUE_ROUND_TOL: f64 = 1e-9;
/// Name of the trace stage holding the cell collapse.
pub const STAGE_EDGE_COMPRESS: &str = "edge_compress";

/// Axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::ShapeMismatch("box corners differ in dimension".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::InvalidParameter("degenerate box".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn unit(d: usize) -> Self {
        Self { lo: vec![0.0; d], hi: vec![1.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).collect()
    }

    pub fn volume(&self) -> f64 {
        self.lengths().iter().product()
    }

    /// Longest side.
    pub fn diameter_axis(&self) -> f64 {
        self.lengths().into_iter().fold(0.0, f64::max)
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| rng.gen_range(*a..*b)).collect()
    }
}

type ValueFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type IndicatorFn = dyn Fn(&[f64]) -> bool + Send + Sync;

/// A function on a domain `Ω` inside a bounding box, extended by zero.
#[derive(Clone)]
pub struct Target {
    pub name: String,
    pub bbox: BBox,
    pub out_dim: usize,
    f: Arc<ValueFn>,
    indicator: Arc<IndicatorFn>,
}

impl std::fmt::Debug for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Target").field("name", &self.name).field("bbox", &self.bbox).finish()
    }
}

impl Target {
    pub fn new(
        name: &str,
        bbox: BBox,
        out_dim: usize,
        f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        indicator: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.to_string(), bbox, out_dim, f: Arc::new(f), indicator: Arc::new(indicator) }
    }

    /// Scalar function on the whole box.
    pub fn scalar(name: &str, bbox: BBox, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(name, bbox, 1, move |x| vec![f(x)], |_| true)
    }

    /// `x²` on `[0, 1]`.
    pub fn square() -> Self {
        Self::scalar("x2", BBox::unit(1), |x| x[0] * x[0])
    }

    /// `x² + y²` on the unit disk, inside `[−1, 1]²`.
    pub fn paraboloid() -> Self {
        let bbox = BBox { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0] };
        Self::new("paraboloid", bbox, 1, |x| vec![x[0] * x[0] + x[1] * x[1]], |x| x[0] * x[0] + x[1] * x[1] <= 1.0)
    }

    pub fn constant(c: f64, bbox: BBox) -> Self {
        Self::scalar("constant", bbox, move |_| c)
    }

    pub fn dim(&self) -> usize {
        self.bbox.dim()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        (self.indicator)(x)
    }

    /// Value at `x`, zero outside `Ω`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        if self.contains(x) {
            (self.f)(x)
        } else {
            vec![0.0; self.out_dim]
        }
    }
}

/// Cells and band intervals along one axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisPartition {
    pub cells: Vec<(f64, f64)>,
    pub bands: Vec<(f64, f64)>,
}

impl AxisPartition {
    fn new(a: f64, b: f64, h: f64, delta: f64) -> Self {
        let n = ((b - a) / (h + delta)).ceil().max(1.0) as usize;
        let mut cells = Vec::with_capacity(n);
        let mut bands = Vec::with_capacity(n);
        for i in 0..n {
            let s = a + i as f64 * (h + delta);
            let e = (s + h).min(b);
            cells.push((s, e));
            let next = if i + 1 < n { a + (i + 1) as f64 * (h + delta) } else { b };
            if next > e {
                bands.push((e, next));
            }
        }
        Self { cells, bands }
    }

    pub fn n(&self) -> usize {
        self.cells.len()
    }

    /// Index of the cell containing `t`, if any.
    pub fn locate(&self, t: f64) -> Option<usize> {
        self.cells.iter().position(|&(s, e)| t >= s && t <= e)
    }
}

/// Axis-aligned box with a multi-index into the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Cell {
    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// Uniform sample strictly inside the cell.
    pub fn sample_interior(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| {
                let t: f64 = rng.gen_range(0.01..0.99);
                a + t * (b - a)
            })
            .collect()
    }
}

/// Cells of side `h` separated by a band of thickness `δ = h^{1+p}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperrectGrid {
    pub bbox: BBox,
    pub h: f64,
    pub delta: f64,
    pub p_exponent: f64,
    pub axes: Vec<AxisPartition>,
    /// Row-major over multi-indices, last axis fastest.
    pub cells: Vec<Cell>,
    /// Products of per-axis intervals with at least one band factor.
    pub band_cells: Vec<Cell>,
    /// Cells with at most one non-zero index.
    pub edge_cells: Vec<usize>,
}

fn product_indices(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &n in sizes {
        out = out
            .into_iter()
            .flat_map(|pre| {
                (0..n).map(move |i| {
                    let mut v = pre.clone();
                    v.push(i);
                    v
                })
            })
            .collect();
    }
    out
}

/// Builds the grid; fails with `TooFine` when the cell count exceeds `budget`.
pub fn build_grid(bbox: &BBox, h: f64, p: f64, budget: usize) -> Result<HyperrectGrid> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::InvalidParameter(format!("h must lie in (0, 1), got {h}")));
    }
    if !(p > 0.0) || !p.is_finite() {
        return Err(Error::InvalidParameter(format!("p must be positive, got {p}")));
    }
    BBox::new(bbox.lo.clone(), bbox.hi.clone())?;
    let delta = h.powf(1.0 + p);
    let axes: Vec<AxisPartition> =
        bbox.lo.iter().zip(&bbox.hi).map(|(&a, &b)| AxisPartition::new(a, b, h, delta)).collect();
    let sizes: Vec<usize> = axes.iter().map(AxisPartition::n).collect();
    let count = sizes.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n)).unwrap_or(usize::MAX);
    if count > budget {
        return Err(Error::TooFine { cells: count, budget });
    }
    let cells: Vec<Cell> = product_indices(&sizes)
        .into_iter()
        .map(|index| {
            let lo = index.iter().zip(&axes).map(|(&i, ax)| ax.cells[i].0).collect();
            let hi = index.iter().zip(&axes).map(|(&i, ax)| ax.cells[i].1).collect();
            Cell { index, lo, hi }
        })
        .collect();
    let edge_cells = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.index.iter().filter(|&&i| i != 0).count() <= 1)
        .map(|(k, _)| k)
        .collect();

    // Per axis, intervals tagged (is_band, lo, hi) in increasing order.
    let tagged: Vec<Vec<(bool, f64, f64)>> = axes
        .iter()
        .map(|ax| {
            let mut v: Vec<(bool, f64, f64)> = ax
                .cells
                .iter()
                .map(|&(a, b)| (false, a, b))
                .chain(ax.bands.iter().map(|&(a, b)| (true, a, b)))
                .collect();
            v.sort_by(|x, y| x.1.total_cmp(&y.1));
            v
        })
        .collect();
    let tsizes: Vec<usize> = tagged.iter().map(Vec::len).collect();
    let band_cells = product_indices(&tsizes)
        .into_iter()
        .filter(|idx| idx.iter().zip(&tagged).any(|(&i, t)| t[i].0))
        .map(|idx| {
            let lo = idx.iter().zip(&tagged).map(|(&i, t)| t[i].1).collect();
            let hi = idx.iter().zip(&tagged).map(|(&i, t)| t[i].2).collect();
            Cell { index: idx, lo, hi }
        })
        .collect();
    Ok(HyperrectGrid { bbox: bbox.clone(), h, delta, p_exponent: p, axes, cells, band_cells, edge_cells })
}

impl HyperrectGrid {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_edge(&self) -> usize {
        self.edge_cells.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.axes.iter().map(AxisPartition::n).collect()
    }

    /// `C_Ω = Π (l_k + 1)`, so that `N_h ≤ C_Ω h^{−d}`.
    pub fn c_omega(&self) -> f64 {
        self.bbox.lengths().iter().map(|l| l + 1.0).product()
    }

    /// Measure of the band: box volume minus total cell volume.
    pub fn band_measure(&self) -> f64 {
        let covered: f64 = self.axes.iter().map(|ax| ax.cells.iter().map(|(a, b)| b - a).sum::<f64>()).product();
        self.bbox.volume() - covered
    }

    /// `Σ_k (l_k + 1) Π_{j≠k} l_j`, so that the band measure is at most
    /// this times `δ (h + δ)^{d−1} h^{−d}`.
    pub fn band_constant(&self) -> f64 {
        let l = self.bbox.lengths();
        (0..l.len()).map(|k| (l[k] + 1.0) * l.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, v)| v).product::<f64>()).sum()
    }

    /// Index of the cell containing `x`, or `None` inside the band.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut flat = 0;
        for (ax, &t) in self.axes.iter().zip(x) {
            flat = flat * ax.n() + ax.locate(t)?;
        }
        Some(flat)
    }
}

/// Per-cell averages `f_h` of a scalar target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimpleFunction {
    pub grid: HyperrectGrid,
    pub cell_values: Vec<f64>,
    pub band_values: Vec<f64>,
    /// Distinct cell values after rounding to [`VALUE_ROUND_TOL`].
    pub m_h: usize,
}

impl SimpleFunction {
    /// Cell values rounded to the value tolerance.
    pub fn rounded_values(&self) -> Vec<f64> {
        self.cell_values.iter().map(|v| round_value(*v)).collect()
    }

    /// `f_h(x)` on cells, `None` inside the band.
    pub fn eval_cells(&self, x: &[f64]) -> Option<f64> {
        self.grid.locate(x).map(|i| self.cell_values[i])
    }
}

fn round_value(v: f64) -> f64 {
    let r = (v / VALUE_ROUND_TOL).round() * VALUE_ROUND_TOL;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Midpoint rule with `q` points per axis over a box, one average per output.
pub fn box_average(target: &Target, lo: &[f64], hi: &[f64], q: usize) -> Vec<f64> {
    let q = q.max(1);
    let sizes = vec![q; lo.len()];
    let mut acc = vec![0.0; target.out_dim];
    let nodes = product_indices(&sizes);
    for idx in &nodes {
        let x: Vec<f64> =
            idx.iter().zip(lo.iter().zip(hi)).map(|(&i, (a, b))| a + (i as f64 + 0.5) / q as f64 * (b - a)).collect();
        for (s, v) in acc.iter_mut().zip(target.eval(&x)) {
            *s += v;
        }
    }
    acc.iter().map(|s| s / nodes.len() as f64).collect()
}

fn distinct_count(values: &[f64]) -> usize {
    let mut r: Vec<f64> = values.iter().map(|v| round_value(*v)).collect();
    r.sort_by(f64::total_cmp);
    r.dedup();
    r.len()
}

/// Per-cell and per-band-cell averages of component `component` of `target`.
pub fn cell_averages_component(target: &Target, grid: &HyperrectGrid, q: usize, component: usize) -> SimpleFunction {
    let cell_values: Vec<f64> = grid.cells.iter().map(|c| box_average(target, &c.lo, &c.hi, q)[component]).collect();
    let band_values = grid.band_cells.iter().map(|c| box_average(target, &c.lo, &c.hi, q)[component]).collect();
    let m_h = distinct_count(&cell_values);
    SimpleFunction { grid: grid.clone(), cell_values, band_values, m_h }
}

/// Per-cell averages of a scalar target.
pub fn cell_averages(target: &Target, grid: &HyperrectGrid, q: usize) -> SimpleFunction {
    cell_averages_component(target, grid, q, 0)
}

/// Which slab(s) a compression step flattens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeStep {
    /// Slab 0 on every axis: the corner cell `(0, …, 0)`.
    Corner,
    /// Slab `slab ≥ 1` along `axis`: the edge cell with that single index.
    Axis { axis: usize, slab: usize },
}

impl EdgeStep {
    /// Multi-index of the edge cell this step collapses.
    pub fn cell_index(&self, d: usize) -> Vec<usize> {
        let mut idx = vec![0; d];
        if let EdgeStep::Axis { axis, slab } = *self {
            idx[axis] = slab;
        }
        idx
    }

    pub fn from_cell_index(index: &[usize]) -> Result<Self> {
        let nz: Vec<usize> = (0..index.len()).filter(|&k| index[k] != 0).collect();
        match nz.as_slice() {
            [] => Ok(EdgeStep::Corner),
            [k] => Ok(EdgeStep::Axis { axis: *k, slab: index[*k] }),
            _ => Err(Error::PlacementError(format!("cell {index:?} is not an edge cell"))),
        }
    }
}

/// Per axis, the current image of every slab of cells. Images stay
/// disjoint and increasing; a collapsed slab is a degenerate interval.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressionState {
    pub slabs: Vec<Vec<(f64, f64)>>,
}

impl CompressionState {
    pub fn new(grid: &HyperrectGrid) -> Self {
        Self { slabs: grid.axes.iter().map(|ax| ax.cells.clone()).collect() }
    }

    pub fn dim(&self) -> usize {
        self.slabs.len()
    }

    /// Number of axes on which every slab is a single point.
    pub fn collapsed_axes(&self) -> usize {
        self.slabs.iter().filter(|s| s.iter().all(|(a, b)| a == b)).count()
    }

    /// Image of a cell (its lower corner; the whole cell once collapsed).
    pub fn point(&self, index: &[usize]) -> Vec<f64> {
        index.iter().zip(&self.slabs).map(|(&i, s)| s[i].0).collect()
    }

    fn check_order(&self) -> Result<()> {
        for (k, s) in self.slabs.iter().enumerate() {
            if s.windows(2).any(|w| !(w[0].1 < w[1].0)) {
                return Err(Error::PlacementError(format!("slabs on axis {k} overlap")));
            }
        }
        Ok(())
    }
}

fn gap_mid(s: &[(f64, f64)], i: usize) -> f64 {
    0.5 * (s[i].1 + s[i + 1].0)
}

/// Two layers flattening the edge cell `index` to a point.
///
/// The first layer has `d + 1` units: on the processed axis, `σ(x − t⁺)` and
/// `σ(t⁻ − x)` with `t∓` at the middle of the gaps around the slab; on every
/// other axis one unit that either shifts the axis to be non-negative or, for
/// the corner cell, flattens its first slab. The second layer recombines the
/// pair as `σ(u − v + c)` with `c` twice the least shift keeping the values
/// positive, and passes the other axes through.
pub fn compress_edge_cell(state: &mut CompressionState, index: &[usize]) -> Result<(Layer, Layer)> {
    let d = state.dim();
    if index.len() != d {
        return Err(Error::ShapeMismatch(format!("cell index of length {} in dimension {d}", index.len())));
    }
    state.check_order()?;
    let step = EdgeStep::from_cell_index(index)?;
    let (k, slab) = match step {
        EdgeStep::Corner => (0, 0),
        EdgeStep::Axis { axis, slab } => (axis, slab),
    };
    if slab >= state.slabs[k].len() {
        return Err(Error::PlacementError(format!("axis {k} has no slab {slab}")));
    }
    let mut w1 = vec![vec![0.0; d]; d + 1];
    let mut b1 = vec![0.0; d + 1];
    let mut w2 = vec![vec![0.0; d + 1]; d];
    let mut b2 = vec![0.0; d];
    let mut next = state.slabs.clone();

    // Processed axis: rows 0 (σ(x − t⁺)) and 1 (σ(t⁻ − x)).
    let s = &state.slabs[k];
    let (lo0, hi_last) = (s[0].0, s[s.len() - 1].1);
    let t_hi = if slab + 1 < s.len() { gap_mid(s, slab) } else { hi_last + 1.0 };
    let t_lo = if slab > 0 { gap_mid(s, slab - 1) } else { lo0 - 1.0 };
    let c = if slab > 0 { 2.0 * (t_lo - lo0) } else { 0.0 };
    w1[0][k] = 1.0;
    b1[0] = -t_hi;
    w1[1][k] = -1.0;
    b1[1] = t_lo;
    w2[k][0] = 1.0;
    w2[k][1] = -1.0;
    b2[k] = c;
    let map_k = |x: f64| {
        if x > t_hi {
            x - t_hi + c
        } else if x < t_lo {
            x - t_lo + c
        } else {
            c
        }
    };
    next[k] = s.iter().map(|&(a, b)| (map_k(a), map_k(b))).collect();

    // Other axes: one row each.
    let mut row = 2;
    for j in (0..d).filter(|&j| j != k) {
        let s = &state.slabs[j];
        let shift = match step {
            EdgeStep::Corner if s.len() > 1 => gap_mid(s, 0),
            EdgeStep::Corner => s[s.len() - 1].1 + 1.0,
            EdgeStep::Axis { .. } => s[0].0,
        };
        let corner = matches!(step, EdgeStep::Corner);
        w1[row][j] = 1.0;
        b1[row] = -shift;
        w2[j][row] = 1.0;
        let f = |x: f64| if corner { (x - shift).max(0.0) } else { x - shift };
        next[j] = s.iter().map(|&(a, b)| (f(a), f(b))).collect();
        row += 1;
    }
    let l1 = Layer::from_rows(&w1, b1)?;
    let l2 = Layer::from_rows(&w2, b2)?;
    let new_state = CompressionState { slabs: next };
    new_state.check_order()?;
    if !new_state.slabs[k][slab].0.eq(&new_state.slabs[k][slab].1) {
        return Err(Error::PlacementError(format!("slab {slab} on axis {k} did not collapse")));
    }
    *state = new_state;
    Ok((l1, l2))
}

/// Order in which edge cells are processed: the corner, then each axis.
pub fn edge_schedule(grid: &HyperrectGrid) -> Vec<Vec<usize>> {
    let d = grid.bbox.dim();
    let mut out = vec![EdgeStep::Corner.cell_index(d)];
    for (k, n) in grid.sizes().into_iter().enumerate() {
        for slab in 1..n {
            out.push(EdgeStep::Axis { axis: k, slab }.cell_index(d));
        }
    }
    out
}

/// Collapses every cell to a point with `2 N_E` layers of width `d + 1`.
/// Returns the layers and the image of each cell.
pub fn compress_all(grid: &HyperrectGrid) -> Result<(Vec<Layer>, Vec<Vec<f64>>)> {
    let mut state = CompressionState::new(grid);
    let mut layers = Vec::with_capacity(2 * grid.n_edge());
    for idx in edge_schedule(grid) {
        let (a, b) = compress_edge_cell(&mut state, &idx)?;
        layers.push(a);
        layers.push(b);
    }
    if state.collapsed_axes() != state.dim() {
        return Err(Error::PlacementError("cells did not collapse to points".into()));
    }
    let points: Vec<Vec<f64>> = grid.cells.iter().map(|c| state.point(&c.index)).collect();
    if let Some((dist, i, j)) = min_pairwise_distance(&points) {
        if dist <= 0.0 {
            return Err(Error::PlacementError(format!("cells {i} and {j} share an image")));
        }
    }
    Ok((layers, points))
}

/// Network, simple function and stage record of one approximation.
#[derive(Clone, Debug)]
pub struct Approximator {
    pub net: Network,
    pub simple: SimpleFunction,
    pub trace: ConstructionTrace,
    pub n_edge: usize,
}

impl Approximator {
    /// `2 N_E + 2 N_h + 4 M_h − 1` (the memorizer's `M = 1` depth otherwise).
    pub fn expected_depth(&self) -> usize {
        2 * self.n_edge + crate::memorize::memorizer_depth(self.simple.grid.n_cells(), self.simple.m_h)
    }
}

fn compressed_network(grid: &HyperrectGrid) -> Result<(Network, Vec<Vec<f64>>)> {
    let (layers, points) = compress_all(grid)?;
    Ok((Network::new(grid.bbox.dim(), layers)?, points))
}

/// Approximator of a non-negative scalar target.
pub fn build_approximator(target: &Target, h: f64, p: f64, seed: u64) -> Result<Approximator> {
    build_approximator_with_budget(target, h, p, seed, CELL_BUDGET)
}

pub fn build_approximator_with_budget(
    target: &Target,
    h: f64,
    p: f64,
    seed: u64,
    budget: usize,
) -> Result<Approximator> {
    let grid = build_grid(&target.bbox, h, p, budget)?;
    let simple = cell_averages(target, &grid, QUAD_POINTS);
    let values = simple.rounded_values();
    if values.iter().any(|v| *v < 0.0) {
        return Err(Error::DomainError("negative cell value; use build_signed_approximator".into()));
    }
    let (front, points) = compressed_network(&grid)?;
    let (classes, distinct) = rank_values(&values);
    let (mem, mtrace) = build_memorizer_with_targets(&points, &classes, &distinct, seed)?;
    let mut trace = ConstructionTrace::default();
    trace.push(STAGE_EDGE_COMPRESS, front.depth(), points);
    for s in mtrace.stages {
        trace.push(&s.name, s.end - s.start, s.snapshot);
    }
    trace.flags = mtrace.flags;
    let net = front.compose(mem)?;
    Ok(Approximator { net, simple, trace, n_edge: grid.n_edge() })
}

/// Approximator of a target of any sign and any output dimension.
///
/// Each output coordinate is shifted by `y₀ = min(0, min cell value)`,
/// memorized, and decoded; coordinates are stacked after a shared cell
/// collapse. Width `max(d + 1, 2m)`.
pub fn build_signed_approximator(target: &Target, h: f64, p: f64, seed: u64) -> Result<(Network, Vec<SimpleFunction>)> {
    let grid = build_grid(&target.bbox, h, p, CELL_BUDGET)?;
    let simples: Vec<SimpleFunction> =
        (0..target.out_dim).map(|c| cell_averages_component(target, &grid, QUAD_POINTS, c)).collect();
    let (front, points) = compressed_network(&grid)?;
    let mut nets = Vec::with_capacity(simples.len());
    for (c, sf) in simples.iter().enumerate() {
        let values = sf.rounded_values();
        let y0 = values.iter().cloned().fold(0.0, f64::min);
        let shifted: Vec<f64> = values.iter().map(|v| v - y0).collect();
        let (classes, distinct) = rank_values(&shifted);
        let (mut net, _) = build_memorizer_with_targets(&points, &classes, &distinct, seed.wrapping_add(7919 * c as u64))?;
        net.layers.push(decoder_layer(y0)?);
        nets.push(net);
    }
    let depth = nets.iter().map(Network::depth).max().unwrap_or(0);
    for net in &mut nets {
        crate::memorize::pad_to_depth(net, depth);
    }
    let back = crate::memorize::stack_parallel(&nets)?;
    Ok((front.compose(back)?, simples))
}

/// Non-negative vector target: one memorizer per coordinate after a shared
/// cell collapse.
pub fn build_vector_approximator(target: &Target, h: f64, p: f64, seed: u64) -> Result<(Network, Vec<SimpleFunction>)> {
    let grid = build_grid(&target.bbox, h, p, CELL_BUDGET)?;
    let simples: Vec<SimpleFunction> =
        (0..target.out_dim).map(|c| cell_averages_component(target, &grid, QUAD_POINTS, c)).collect();
    let (front, points) = compressed_network(&grid)?;
    let labels: Vec<Vec<f64>> =
        (0..grid.n_cells()).map(|i| simples.iter().map(|s| round_value(s.cell_values[i])).collect()).collect();
    let back = vector_from_labels(&points, &labels, 0, seed, false)?;
    Ok((front.compose(back)?, simples))
}

/// Monte Carlo estimate of `‖φ − f‖_{Lᵖ(Ω)}` and its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Uniform samples on the bounding box; the integrand vanishes off `Ω`.
/// The standard error of the root is obtained by the delta method.
pub fn lp_error(net: &Network, target: &Target, p: f64, n_samples: usize, seed: u64) -> Result<LpEstimate> {
    if n_samples < 1000 {
        return Err(Error::InvalidParameter(format!("need at least 1000 samples, got {n_samples}")));
    }
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("p must be ≥ 1, got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vol = target.bbox.volume();
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..n_samples {
        let x = target.bbox.sample(&mut rng);
        let v = if target.contains(&x) {
            let out = net.forward(&x)?;
            let f = target.eval(&x);
            let e: f64 = out.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            e.powf(p)
        } else {
            0.0
        };
        s1 += v;
        s2 += v * v;
    }
    let n = n_samples as f64;
    let mean = s1 / n;
    let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
    let integral = vol * mean;
    let se_int = vol * (var / n).sqrt();
    let value = integral.powf(1.0 / p);
    let stderr = if integral > 0.0 { value / (p * integral) * se_int } else { 0.0 };
    Ok(LpEstimate { value, stderr })
}

/// `‖f‖_{W^{1,p}(Ω)}` by the midpoint rule with `n` points per axis and
/// central differences of step `1e−6` for the partial derivatives.
pub fn w1p_norm(target: &Target, p: f64, n: usize) -> f64 {
    let d = target.dim();
    let lens = target.bbox.lengths();
    let cell_vol: f64 = lens.iter().map(|l| l / n as f64).product();
    let step = 1e-6;
    let mut total = 0.0;
    for idx in product_indices(&vec![n; d]) {
        let x: Vec<f64> =
            idx.iter().enumerate().map(|(k, &i)| target.bbox.lo[k] + (i as f64 + 0.5) / n as f64 * lens[k]).collect();
        if !target.contains(&x) {
            continue;
        }
        let f = crate::geometry::norm2(&target.eval(&x));
        let mut acc = f.powf(p);
        for k in 0..d {
            let mut a = x.clone();
            let mut b = x.clone();
            a[k] += step;
            b[k] -= step;
            let ga: Vec<f64> = (target.f)(&a);
            let gb: Vec<f64> = (target.f)(&b);
            let g = ga.iter().zip(&gb).map(|(u, v)| (u - v) / (2.0 * step)).map(|v| v * v).sum::<f64>().sqrt();
            acc += g.powf(p);
        }
        total += acc * cell_vol;
    }
    total.powf(1.0 / p)
}

/// `C ‖f‖^d ε^{−d}`.
pub fn depth_bound(w1p_norm: f64, eps: f64, d: usize, c: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let di = d as i32;
    Ok(c * w1p_norm.powi(di) * eps.powi(-di))
}

/// `C′ ‖f‖ ℒ^{−1/d}`: the error reachable with depth `ℒ`.
pub fn error_for_depth(w1p_norm: f64, depth: usize, d: usize, c_prime: f64) -> f64 {
    c_prime * w1p_norm * (depth as f64).powf(-1.0 / d as f64)
}

/// `max |φ|` over a regular grid of `n` points per axis on the box.
pub fn sup_norm_sampled(net: &Network, bbox: &BBox, n: usize) -> Result<f64> {
    let d = bbox.dim();
    let lens = bbox.lengths();
    let mut best: f64 = 0.0;
    for idx in product_indices(&vec![n; d]) {
        let x: Vec<f64> = idx
            .iter()
            .enumerate()
            .map(|(k, &i)| bbox.lo[k] + i as f64 / (n.max(2) - 1) as f64 * lens[k])
            .collect();
        let out = net.forward(&x)?;
        best = best.max(out.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
    }
    Ok(best)
}

/// `h` below which the sup-norm form `K (1 + δ(h + δ) + h)` is expected.
pub fn sup_norm_threshold(bbox: &BBox) -> f64 {
    bbox.diameter_axis() * std::f64::consts::LN_2 / (bbox.dim() as f64 + 1.0)
}

/// Summary written by the command line and the examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxReport {
    pub h: f64,
    pub delta: f64,
    #[serde(rename = "N_h")]
    pub n_h: usize,
    #[serde(rename = "N_E")]
    pub n_e: usize,
    #[serde(rename = "M_h")]
    pub m_h: usize,
    pub depth: usize,
    pub width: usize,
    pub lp_error: f64,
    pub stderr: f64,
    pub depth_bound: f64,
}
