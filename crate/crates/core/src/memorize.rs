//! Four-stage memorizer: preconditioning, class compression, sorting and
//! label mapping, plus the vector-label and signed-label variants.
//!
//! Every stage emits explicit layers computed from the current positions of
//! the data. Same-class points are merged through exact ReLU zeros, so after
//! compression they are bitwise identical.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{
    dot, min_pairwise_distance, norm2, separating_direction, ConstructionTrace, Layer, Matrix,
    Network, DEDUP_TOL,
};

/// Offset used for a missing right neighbour in the compression stage.
pub const VIRTUAL_NEIGHBOUR_OFFSET: f64 = 0.5;

pub const STAGE_PRECONDITION: &str = "precondition";
pub const STAGE_COMPRESS: &str = "compress";
pub const STAGE_SORT: &str = "sort";
pub const STAGE_MAP: &str = "map";
pub const STAGE_DECODE: &str = "decode";
pub const FLAG_NONSTANDARD_DEPTH: &str = "nonstandard_depth";

/// Labels attached to a dataset.
#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    /// Class indices covering `0..M`.
    Class(Vec<usize>),
    Real(Vec<f64>),
    Vector(Vec<Vec<f64>>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Class(v) => v.len(),
            Labels::Real(v) => v.len(),
            Labels::Vector(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Labels as output vectors.
    pub fn as_vectors(&self) -> Vec<Vec<f64>> {
        match self {
            Labels::Class(v) => v.iter().map(|&k| vec![k as f64]).collect(),
            Labels::Real(v) => v.iter().map(|&y| vec![y]).collect(),
            Labels::Vector(v) => v.clone(),
        }
    }

    /// Number of distinct labels.
    pub fn distinct(&self) -> usize {
        let mut keys: Vec<Vec<u64>> =
            self.as_vectors().iter().map(|v| v.iter().map(|x| (x + 0.0).to_bits()).collect()).collect();
        keys.sort();
        keys.dedup();
        keys.len()
    }
}

/// Distinct points with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub points: Vec<Vec<f64>>,
    pub labels: Labels,
}

impl LabeledDataset {
    pub fn new(points: Vec<Vec<f64>>, labels: Labels) -> Result<Self> {
        let ds = Self { points, labels };
        ds.validate()?;
        Ok(ds)
    }

    pub fn classes(points: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        Self::new(points, Labels::Class(labels))
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn m(&self) -> usize {
        self.labels.distinct()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidDataset("no points".into()));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidDataset("points must have dimension ≥ 1".into()));
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.len() != d {
                return Err(Error::InvalidDataset(format!("point {i} has dimension {}", p.len())));
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidDataset(format!("point {i} has a non-finite coordinate")));
            }
        }
        if self.labels.len() != self.points.len() {
            return Err(Error::InvalidDataset(format!(
                "{} labels for {} points",
                self.labels.len(),
                self.points.len()
            )));
        }
        if let Some((dmin, i, j)) = min_pairwise_distance(&self.points) {
            if dmin <= DEDUP_TOL {
                return Err(Error::DuplicatePoints(i, j));
            }
        }
        match &self.labels {
            Labels::Class(v) => {
                let m = self.labels.distinct();
                if let Some(bad) = v.iter().find(|&&k| k >= m) {
                    return Err(Error::InvalidDataset(format!(
                        "class label {bad} outside 0..{m}; class labels must cover 0..M"
                    )));
                }
            }
            Labels::Real(v) => {
                if v.iter().any(|y| !y.is_finite()) {
                    return Err(Error::InvalidDataset("non-finite label".into()));
                }
            }
            Labels::Vector(v) => {
                let m = v.first().map_or(0, Vec::len);
                if m == 0 || v.iter().any(|y| y.len() != m || y.iter().any(|c| !c.is_finite())) {
                    return Err(Error::InvalidDataset("vector labels must share a positive length".into()));
                }
            }
        }
        Ok(())
    }
}

/// Rank of each value among the sorted distinct values, plus those values.
pub fn rank_values(values: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut distinct: Vec<f64> = values.iter().map(|v| v + 0.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let idx = values
        .iter()
        .map(|v| distinct.binary_search_by(|d| d.total_cmp(&(v + 0.0))).unwrap())
        .collect();
    (idx, distinct)
}

/// One representative per class in the plane.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassRepresentatives {
    /// `reps[k]` carries class `k`.
    pub reps: Vec<Vec<f64>>,
}

/// Strictly increasing values indexed by class.
#[derive(Clone, Debug, PartialEq)]
pub struct SortedRepresentatives {
    pub values: Vec<f64>,
}

fn apply_layers(layers: &[Layer], state: &[Vec<f64>]) -> Vec<Vec<f64>> {
    state
        .iter()
        .map(|x| {
            let mut h = x.clone();
            for l in layers {
                h = l.apply(&h, crate::geometry::Activation::Relu);
            }
            h
        })
        .collect()
}

fn bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| (v + 0.0).to_bits()).collect()
}

/// Single preconditioning layer: a separating direction with bias `2 R_x`.
pub fn precondition(points: &[Vec<f64>], seed: u64) -> Result<(Layer, Vec<f64>)> {
    let v = separating_direction(points, seed)?;
    let rx = points.iter().map(|p| norm2(p)).fold(0.0, f64::max);
    let b = if rx > 0.0 { 2.0 * rx } else { 1.0 };
    let layer = Layer::from_rows(&[v], vec![b])?;
    let out: Vec<f64> = points.iter().map(|p| layer.apply(p, crate::geometry::Activation::Relu)[0]).collect();
    if out.iter().any(|&t| t <= 0.0) {
        return Err(Error::DegenerateConfiguration("non-positive preconditioned value".into()));
    }
    Ok((layer, out))
}

/// Distinct positions of the current state, sorted by `u = x − y` (or `t`
/// for one-dimensional states).
#[derive(Debug)]
struct Position {
    u: f64,
    class: usize,
    rep: usize,
}

fn positions(state: &[Vec<f64>], labels: &[usize]) -> Result<Vec<Position>> {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut out: Vec<Position> = Vec::new();
    for (i, x) in state.iter().enumerate() {
        match seen.get(&bits(x)) {
            Some(&p) => {
                if out[p].class != labels[i] {
                    return Err(Error::DegenerateConfiguration(format!(
                        "points {} and {i} of different classes coincide",
                        out[p].rep
                    )));
                }
            }
            None => {
                let u = if x.len() == 1 { x[0] } else { x[0] - x[1] };
                seen.insert(bits(x), out.len());
                out.push(Position { u, class: labels[i], rep: i });
            }
        }
    }
    out.sort_by(|a, b| a.u.total_cmp(&b.u));
    if out.windows(2).any(|w| w[0].u >= w[1].u) {
        return Err(Error::DegenerateConfiguration("order key not injective".into()));
    }
    Ok(out)
}

/// Splits between the first two positions: the leftmost goes to the y-axis
/// at height `lambda · (beta − u)`, the others to the x-axis.
fn structuring_layer(dim: usize, beta: f64, lambda: f64) -> Result<Layer> {
    let rows = if dim == 1 {
        vec![vec![1.0], vec![-lambda]]
    } else {
        vec![vec![1.0, -1.0], vec![-lambda, lambda]]
    };
    Layer::from_rows(&rows, vec![-beta, lambda * beta])
}

/// Height scale splitting a steep ratio `r` evenly between two layers.
fn balance(r: f64) -> f64 {
    r.sqrt().max(1.0)
}

/// Compression: `2N` layers after which every class sits at one point of
/// the non-negative quadrant.
pub fn compress_classes(projected: &[f64], labels: &[usize]) -> Result<(Vec<Layer>, ClassRepresentatives)> {
    let n = projected.len();
    if labels.len() != n {
        return Err(Error::ShapeMismatch("labels vs projected values".into()));
    }
    if projected.iter().any(|&t| t <= 0.0) {
        return Err(Error::DomainError("projected values must be positive".into()));
    }
    let m = labels.iter().copied().max().map_or(0, |k| k + 1);
    let mut state: Vec<Vec<f64>> = projected.iter().map(|&t| vec![t]).collect();
    let mut layers: Vec<Layer> = Vec::new();

    // Each class, once reduced to a single point at the left end, is sent to
    // its own slot `origin + k·spacing` to the right of all unfinished points,
    // so the representatives come out ordered by class. `origin` is tracked
    // as a virtual point on the x-axis.
    let (lo, hi) = projected.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
    let spacing = if hi > lo { (hi - lo) / n as f64 } else { 1.0 };
    let mut origin = hi + spacing;
    let mut placed = vec![false; m];

    loop {
        let pos = positions(&state, labels)?;
        if pos.iter().all(|p| placed[p.class]) {
            break;
        }
        if layers.len() + 2 > 2 * n {
            return Err(Error::DegenerateConfiguration("compression budget exceeded".into()));
        }
        let dim = state[0].len();
        let u_next = pos.get(1).map_or(origin, |p| p.u.min(origin));
        let beta = 0.5 * (pos[0].u + u_next);
        let p0 = beta - pos[0].u;
        let class = pos[0].class;
        let merge_with = (1..pos.len()).find(|&k| pos[k].class == class);
        // Steepness the second layer would need with an unscaled split.
        let ratio = match merge_with {
            Some(j) => {
                let xb = if j > 1 { pos[j - 1].u - beta } else { 0.0 };
                (xb + pos[j].u - beta) / p0
            }
            None => (origin + class as f64 * spacing - beta) / p0,
        };
        let first = structuring_layer(dim, beta, balance(ratio))?;
        let s1 = apply_layers(std::slice::from_ref(&first), &state);
        let pp = s1[pos[0].rep][1];
        let xs: Vec<f64> = pos.iter().map(|p| s1[p.rep][0]).collect();
        let origin_x = origin - beta;

        let second = if let Some(j) = merge_with {
            let q = xs[j];
            let x_next = if j + 1 < pos.len() { xs[j + 1] } else { q + VIRTUAL_NEIGHBOUR_OFFSET };
            let x_next = x_next.min(origin_x);
            let x_bmax = if j > 1 { xs[j - 1] } else { 0.0 };
            let t1 = 0.5 * (q + x_next);
            let t2 = 0.5 * (x_bmax + q);
            let m2 = 0.5 * pp;
            if !(pp > 0.0 && t1 > q && t2 < q && t2 > x_bmax) {
                return Err(Error::DegenerateConfiguration("merge thresholds collapsed".into()));
            }
            origin = origin_x - t1;
            Layer::from_rows(&[vec![1.0, 0.0], vec![-1.0, -t2 / m2]], vec![-t1, t2])?
        } else {
            if !(pp > 0.0) {
                return Err(Error::DegenerateConfiguration("rotation with empty gap".into()));
            }
            let k = (origin_x + class as f64 * spacing) / pp;
            origin = origin_x;
            placed[class] = true;
            Layer::from_rows(&[vec![1.0, k]], vec![0.0])?
        };
        state = apply_layers(std::slice::from_ref(&second), &s1);
        layers.push(first);
        layers.push(second);
    }

    while layers.len() < 2 * n {
        if state[0].len() == 1 {
            let lift = Layer::from_rows(&[vec![1.0], vec![0.0]], vec![0.0, 0.0])?;
            state = apply_layers(std::slice::from_ref(&lift), &state);
            layers.push(lift);
        } else {
            layers.push(Layer::identity(2));
        }
    }

    let pos = positions(&state, labels)?;
    let mut reps = vec![Vec::new(); m];
    for p in &pos {
        reps[p.class] = state[p.rep].clone();
    }
    if reps.iter().any(Vec::is_empty) {
        return Err(Error::InvalidDataset("class labels must cover 0..M".into()));
    }
    Ok((layers, ClassRepresentatives { reps }))
}

/// Angle in `(lo, hi)` maximizing the smallest gap between the keys
/// produced by `keys(angle)`, scanned on an interior grid.
fn maximin_angle(lo: f64, hi: f64, keys: impl Fn(f64) -> Vec<f64>) -> f64 {
    const STEPS: usize = 256;
    // Ties (e.g. two keys) go to the larger span, which keeps weights small.
    let mut best = (f64::NEG_INFINITY, 0.0, 0.5 * (lo + hi));
    for i in 1..STEPS {
        let ang = lo + (hi - lo) * i as f64 / STEPS as f64;
        let k = keys(ang);
        let span = k.iter().cloned().fold(0.0, f64::max);
        let score = if k.len() < 2 || span <= 0.0 { 0.0 } else { crate::geometry::min_sorted_gap(&k) / span };
        let better = score > best.0 * (1.0 + 1e-9) || (score >= best.0 * (1.0 - 1e-9) && span > best.1);
        if better {
            best = (score.max(best.0), span, ang);
        }
    }
    best.2
}

/// Two-neuron layer sending `center` to the origin: values above go to the
/// x-axis, values below to the y-axis.
fn center_layer(values: &[f64], center: f64) -> Result<Layer> {
    let right = values.iter().copied().filter(|&t| t > center).fold(f64::INFINITY, f64::min);
    let left = values.iter().copied().filter(|&t| t < center).fold(f64::NEG_INFINITY, f64::max);
    let right = if right.is_finite() { right } else { center + 1.0 };
    let left = if left.is_finite() { left } else { center - 1.0 };
    let a = 0.5 * (center + right);
    let c = 0.5 * (center + left);
    Layer::from_rows(&[vec![1.0], vec![-1.0]], vec![-a, c])
}

/// Projection directions tried by the sorting stage, each with its negation.
pub const SORT_CANDIDATES: usize = 16;

/// Sorting: `2M + 1` layers mapping class representatives to strictly
/// increasing scalars in class order.
///
/// The first layer projects onto a line; several directions (and their
/// negations) are tried and the run with the largest smallest gap between
/// the sorted values, relative to the largest weight, is kept.
pub fn sort_representatives(
    reps: &ClassRepresentatives,
    seed: u64,
) -> Result<(Vec<Layer>, SortedRepresentatives)> {
    let m = reps.reps.len();
    if m == 0 {
        return Err(Error::DomainError("no representatives".into()));
    }
    let dim = reps.reps[0].len();
    if dim == 1 && reps.reps.windows(2).all(|w| w[0][0] < w[1][0]) {
        return sort_ordered(reps);
    }
    let mut best: Option<(f64, Vec<Layer>, SortedRepresentatives)> = None;
    let mut last_err = None;
    let tries = if dim == 1 { 1 } else { SORT_CANDIDATES };
    for c in 0..tries {
        let v = separating_direction(&reps.reps, seed.wrapping_add(c as u64))?;
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        for dir in [v, neg] {
            match sort_along(reps, &dir) {
                Ok((layers, xi)) => {
                    let wmax = layers
                        .iter()
                        .map(|l| l.weights.max_abs().max(l.bias.iter().fold(0.0, |a: f64, b| a.max(b.abs()))))
                        .fold(1.0, f64::max);
                    let gap = if m > 1 { crate::geometry::min_sorted_gap(&xi.values) } else { 1.0 };
                    let score = gap / wmax;
                    if best.as_ref().map_or(true, |(s, _, _)| score > *s) {
                        best = Some((score, layers, xi));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
    }
    match best {
        Some((_, layers, xi)) => Ok((layers, xi)),
        None => Err(last_err.unwrap_or_else(|| Error::DegenerateConfiguration("sorting failed".into()))),
    }
}

/// Representatives already increasing on a line: rescale into `[1, 2]` and
/// carry the value through the remaining layers unchanged.
fn sort_ordered(reps: &ClassRepresentatives) -> Result<(Vec<Layer>, SortedRepresentatives)> {
    let m = reps.reps.len();
    let (smin, smax) = (reps.reps[0][0], reps.reps[m - 1][0]);
    let span = if smax > smin { smax - smin } else { 1.0 };
    let mut layers = vec![Layer::from_rows(&[vec![1.0 / span]], vec![1.0 - smin / span])?];
    layers.extend((0..2 * m).map(|_| Layer::identity(1)));
    let values = apply_layers(&layers, &reps.reps).into_iter().map(|v| v[0]).collect();
    Ok((layers, SortedRepresentatives { values }))
}

fn sort_along(reps: &ClassRepresentatives, v: &[f64]) -> Result<(Vec<Layer>, SortedRepresentatives)> {
    let m = reps.reps.len();
    let mut layers = Vec::with_capacity(2 * m + 1);

    // Projection onto a line, rescaled into [1, 2].
    let s: Vec<f64> = reps.reps.iter().map(|z| dot(v, z)).collect();
    let (smin, smax) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if smax > smin { smax - smin } else { 1.0 };
    let w: Vec<f64> = v.iter().map(|c| c / span).collect();
    layers.push(Layer::from_rows(&[w], vec![1.0 - smin / span])?);
    let mut state = apply_layers(&layers, &reps.reps);

    // z₀ to the origin, then a positive projection makes it the smallest.
    let vals: Vec<f64> = state.iter().map(|x| x[0]).collect();
    let l = center_layer(&vals, vals[0])?;
    state = apply_layers(std::slice::from_ref(&l), &state);
    layers.push(l);
    let phi = maximin_angle(0.0, std::f64::consts::FRAC_PI_2, |a| {
        state.iter().map(|x| a.cos() * x[0] + a.sin() * x[1]).collect()
    });
    let vmax = state.iter().map(|x| phi.cos() * x[0] + phi.sin() * x[1]).fold(0.0, f64::max);
    let scale = if vmax > 0.0 { vmax } else { 1.0 };
    let l = Layer::from_rows(&[vec![phi.cos() / scale, phi.sin() / scale]], vec![0.0])?;
    state = apply_layers(std::slice::from_ref(&l), &state);
    layers.push(l);

    for s_idx in 1..m {
        let vals: Vec<f64> = state.iter().map(|x| x[0]).collect();
        let l = center_layer(&vals, vals[s_idx])?;
        state = apply_layers(std::slice::from_ref(&l), &state);
        layers.push(l);

        // Order key κ = sinθ·a + cosθ·y; the new value is 2 − κ/κ_max.
        let unsorted: Vec<usize> = (s_idx + 1..m).collect();
        let y_of = |k: usize| state[k][1];
        let a_of = |k: usize| state[k][0];
        let (lo, hi) = if s_idx == 1 {
            let a_max = unsorted.iter().map(|&k| a_of(k)).fold(0.0, f64::max);
            let hi = if a_max > 0.0 { (y_of(0) / a_max).atan() } else { std::f64::consts::FRAC_PI_2 };
            (0.0, hi)
        } else {
            let a_prev = a_of(s_idx - 1);
            let y_left = unsorted.iter().map(|&k| y_of(k)).fold(0.0, f64::max);
            ((y_left / a_prev).atan(), (y_of(s_idx - 2) / a_prev).atan())
        };
        if !(hi > lo) {
            return Err(Error::DegenerateConfiguration(format!("empty slope window at class {s_idx}")));
        }
        let theta = maximin_angle(lo, hi, |t| {
            let (st, ct) = t.sin_cos();
            state.iter().map(|x| st * x[0] + ct * x[1]).collect()
        });
        let (st, ct) = theta.sin_cos();
        let kmax = state.iter().map(|x| st * x[0] + ct * x[1]).fold(0.0, f64::max);
        if !(kmax > 0.0) {
            return Err(Error::DegenerateConfiguration(format!("flat projection at class {s_idx}")));
        }
        let l = Layer::from_rows(&[vec![-st / kmax, -ct / kmax]], vec![2.0])?;
        state = apply_layers(std::slice::from_ref(&l), &state);
        layers.push(l);
    }

    let values: Vec<f64> = state.iter().map(|x| x[0]).collect();
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::DegenerateConfiguration("sorted values not increasing".into()));
    }
    Ok((layers, SortedRepresentatives { values }))
}

/// Label mapping: `max(2M − 3, 1)` layers sending `ξ_k ↦ targets[k]`.
pub fn map_to_labels(xi: &SortedRepresentatives, targets: &[f64]) -> Result<Vec<Layer>> {
    let m = xi.values.len();
    if targets.len() != m || m == 0 {
        return Err(Error::ShapeMismatch("targets vs representatives".into()));
    }
    if targets[0] < 0.0 || targets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::DomainError("targets must be non-negative and strictly increasing".into()));
    }
    if xi.values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::DomainError("representatives must be strictly increasing".into()));
    }
    if m == 1 {
        return Ok(vec![Layer::from_rows(&[vec![0.0]], vec![targets[0]])?]);
    }
    let (x0, x1) = (xi.values[0], xi.values[1]);
    let w = (targets[1] - targets[0]) / (x1 - x0);
    let mut layers = vec![Layer::from_rows(&[vec![w]], vec![targets[0] - w * x0])?];
    let mut t: Vec<f64> = apply_layers(&layers, &xi.values.iter().map(|&x| vec![x]).collect::<Vec<_>>())
        .into_iter()
        .map(|v| v[0])
        .collect();
    for eta in 1..m - 1 {
        let next = t[eta + 1];
        let mid = 0.5 * (t[eta] + next.min(targets[eta + 1]));
        if !(next > mid && mid >= t[eta]) {
            return Err(Error::DegenerateConfiguration(format!("label step {eta}")));
        }
        let s = Layer::from_rows(&[vec![1.0 / (next - mid)], vec![1.0]], vec![-mid / (next - mid), 0.0])?;
        let p = Layer::from_rows(&[vec![targets[eta + 1] - next, 1.0]], vec![0.0])?;
        let pair = [s, p];
        t = apply_layers(&pair, &t.iter().map(|&x| vec![x]).collect::<Vec<_>>())
            .into_iter()
            .map(|v| v[0])
            .collect();
        layers.extend(pair);
    }
    Ok(layers)
}

/// Core constructor: class indices in `0..M` mapped to `targets[k]`.
pub fn build_memorizer_with_targets(
    points: &[Vec<f64>],
    classes: &[usize],
    targets: &[f64],
    seed: u64,
) -> Result<(Network, ConstructionTrace)> {
    let n = points.len();
    let d = points.first().map_or(0, Vec::len);
    let mut trace = ConstructionTrace::default();

    let (pre, projected) = precondition(points, seed)?;
    let snap: Vec<Vec<f64>> = projected.iter().map(|&t| vec![t]).collect();
    trace.push(STAGE_PRECONDITION, 1, snap.clone());

    let (comp, reps) = compress_classes(&projected, classes)?;
    let snap = apply_layers(&comp, &snap);
    trace.push(STAGE_COMPRESS, comp.len(), snap.clone());

    let (sort, xi) = sort_representatives(&reps, seed.wrapping_add(1))?;
    let snap = apply_layers(&sort, &snap);
    trace.push(STAGE_SORT, sort.len(), snap.clone());

    let map = map_to_labels(&xi, targets)?;
    let snap = apply_layers(&map, &snap);
    trace.push(STAGE_MAP, map.len(), snap);

    let m = targets.len();
    if m < 2 {
        trace.flags.push(FLAG_NONSTANDARD_DEPTH.to_string());
    }
    let mut layers = Vec::with_capacity(2 * n + 4 * m);
    layers.push(pre);
    layers.extend(comp);
    layers.extend(sort);
    layers.extend(map);
    Ok((Network::new(d, layers)?, trace))
}

/// Memorizer for class labels `0..M`: width 2, depth `2N + 4M − 1`.
pub fn build_memorizer(ds: &LabeledDataset, seed: u64) -> Result<(Network, ConstructionTrace)> {
    ds.validate()?;
    match &ds.labels {
        Labels::Class(c) => {
            let m = ds.m();
            let targets: Vec<f64> = (0..m).map(|k| k as f64).collect();
            build_memorizer_with_targets(&ds.points, c, &targets, seed)
        }
        Labels::Real(v) => {
            let (idx, distinct) = rank_values(v);
            if distinct[0] < 0.0 {
                return Err(Error::DomainError("negative labels need the signed memorizer".into()));
            }
            build_memorizer_with_targets(&ds.points, &idx, &distinct, seed)
        }
        Labels::Vector(_) => Err(Error::InvalidDataset("vector labels need build_vector_memorizer".into())),
    }
}

/// Memorizer for real labels of any sign: the non-negative memorizer for
/// `y − y₀` followed by a decoder layer with post-matrix `(−1, 1)` adding
/// `y₀ = min label` back. Depth `2N + 4M`, width 2.
pub fn build_signed_memorizer(ds: &LabeledDataset, seed: u64) -> Result<(Network, ConstructionTrace)> {
    ds.validate()?;
    let values: Vec<f64> = match &ds.labels {
        Labels::Class(c) => c.iter().map(|&k| k as f64).collect(),
        Labels::Real(v) => v.clone(),
        Labels::Vector(_) => return Err(Error::InvalidDataset("scalar labels expected".into())),
    };
    signed_from_values(&ds.points, &values, seed)
}

pub(crate) fn signed_from_values(
    points: &[Vec<f64>],
    values: &[f64],
    seed: u64,
) -> Result<(Network, ConstructionTrace)> {
    let (idx, distinct) = rank_values(values);
    let y0 = distinct[0];
    let targets: Vec<f64> = distinct.iter().map(|y| y - y0).collect();
    let (mut net, mut trace) = build_memorizer_with_targets(points, &idx, &targets, seed)?;
    let dec = decoder_layer(y0)?;
    let last = trace.stages.last().map(|s| s.snapshot.clone()).unwrap_or_default();
    let snap = apply_layers(std::slice::from_ref(&dec), &last);
    net.layers.push(dec);
    trace.push(STAGE_DECODE, 1, snap);
    Ok((net, trace))
}

/// `ŷ ↦ −σ(−ŷ − y₀) + σ(ŷ + y₀) = ŷ + y₀`.
pub fn decoder_layer(y0: f64) -> Result<Layer> {
    Layer::from_rows(&[vec![-1.0], vec![1.0]], vec![-y0, y0])?.with_post(Matrix::from_rows(&[vec![-1.0, 1.0]])?)
}

/// Inserts identity layers until `net` has `depth` layers. Padding goes
/// before a final post-matrix layer, whose output may be negative.
pub fn pad_to_depth(net: &mut Network, depth: usize) {
    while net.depth() < depth {
        let at = match net.layers.last() {
            Some(l) if l.post.is_some() => net.layers.len() - 1,
            _ => net.layers.len(),
        };
        let dim = if at == 0 { net.input_dim } else { net.layers[at - 1].out_dim() };
        net.layers.insert(at, Layer::identity(dim));
    }
}

/// Runs networks side by side on a shared input: first layers are stacked,
/// later layers (and post-matrices) are block-diagonal. All networks must
/// share input dimension and depth.
pub fn stack_parallel(nets: &[Network]) -> Result<Network> {
    let first = nets.first().ok_or_else(|| Error::DomainError("nothing to stack".into()))?;
    let depth = first.depth();
    let input_dim = first.input_dim;
    if nets.iter().any(|n| n.depth() != depth || n.input_dim != input_dim) {
        return Err(Error::ShapeMismatch("stacked networks must share depth and input".into()));
    }
    let mut layers = Vec::with_capacity(depth);
    for j in 0..depth {
        let parts: Vec<&Layer> = nets.iter().map(|n| &n.layers[j]).collect();
        let rows: usize = parts.iter().map(|l| l.d_out()).sum();
        let cols: usize = if j == 0 { input_dim } else { parts.iter().map(|l| l.d_in()).sum() };
        let mut w = Matrix::zeros(rows, cols);
        let mut bias = Vec::with_capacity(rows);
        let (mut r0, mut c0) = (0, 0);
        for l in &parts {
            for r in 0..l.d_out() {
                for c in 0..l.d_in() {
                    w.set(r0 + r, c0 + c, l.weights.get(r, c));
                }
            }
            bias.extend_from_slice(&l.bias);
            r0 += l.d_out();
            if j > 0 {
                c0 += l.d_in();
            }
        }
        let mut layer = Layer::new(w, bias)?;
        if parts.iter().any(|l| l.post.is_some()) {
            let prow: usize = parts.iter().map(|l| l.out_dim()).sum();
            let mut a = Matrix::zeros(prow, rows);
            let (mut pr, mut pc) = (0, 0);
            for l in &parts {
                let blk = l.post.clone().unwrap_or_else(|| Matrix::identity(l.d_out()));
                for r in 0..blk.rows {
                    for c in 0..blk.cols {
                        a.set(pr + r, pc + c, blk.get(r, c));
                    }
                }
                pr += blk.rows;
                pc += blk.cols;
            }
            layer = layer.with_post(a)?;
        }
        layers.push(layer);
    }
    Network::new(input_dim, layers)
}

/// Vector labels in `ℝᵐ₊`: one scalar memorizer per output coordinate,
/// padded to depth `2N + 4M − 1` and stacked. Width ≤ `2m`.
pub fn build_vector_memorizer(ds: &LabeledDataset, seed: u64) -> Result<Network> {
    ds.validate()?;
    let labels = ds.labels.as_vectors();
    vector_from_labels(&ds.points, &labels, ds.m(), seed, false)
}

/// Vector labels of any sign; each coordinate gets its own decoder.
pub fn build_signed_vector_memorizer(ds: &LabeledDataset, seed: u64) -> Result<Network> {
    ds.validate()?;
    let labels = ds.labels.as_vectors();
    vector_from_labels(&ds.points, &labels, ds.m(), seed, true)
}

pub(crate) fn vector_from_labels(
    points: &[Vec<f64>],
    labels: &[Vec<f64>],
    m_vectors: usize,
    seed: u64,
    signed: bool,
) -> Result<Network> {
    let n = points.len();
    let width = labels.first().map_or(0, Vec::len);
    let mut nets = Vec::with_capacity(width);
    for c in 0..width {
        let col: Vec<f64> = labels.iter().map(|y| y[c]).collect();
        let s = seed.wrapping_add(7919 * c as u64);
        let net = if signed {
            signed_from_values(points, &col, s)?.0
        } else {
            let (idx, distinct) = rank_values(&col);
            if distinct[0] < 0.0 {
                return Err(Error::DomainError("negative label component; use the signed variant".into()));
            }
            build_memorizer_with_targets(points, &idx, &distinct, s)?.0
        };
        nets.push(net);
    }
    let extra = usize::from(signed);
    let formula = if m_vectors >= 2 { 2 * n + 4 * m_vectors - 1 } else { 0 } + extra;
    let depth = nets.iter().map(Network::depth).max().unwrap_or(0).max(formula);
    for net in &mut nets {
        pad_to_depth(net, depth);
    }
    stack_parallel(&nets)
}

/// Outcome of evaluating a network on labelled points.
#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub max_abs_error: f64,
    /// Indices whose error exceeds the tolerance.
    pub failures: Vec<usize>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Max over points of `‖φ(xᵢ) − yᵢ‖∞`.
pub fn verify_memorization(net: &Network, ds: &LabeledDataset, tol: f64) -> Result<VerifyReport> {
    verify_targets(net, &ds.points, &ds.labels.as_vectors(), tol)
}

pub fn verify_targets(net: &Network, points: &[Vec<f64>], targets: &[Vec<f64>], tol: f64) -> Result<VerifyReport> {
    let mut max_abs_error: f64 = 0.0;
    let mut failures = Vec::new();
    for (i, (x, y)) in points.iter().zip(targets).enumerate() {
        let out = net.forward(x)?;
        if out.len() != y.len() {
            return Err(Error::ShapeMismatch(format!(
                "network outputs {} values, label has {}",
                out.len(),
                y.len()
            )));
        }
        let err = out.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let err = if err.is_nan() { f64::INFINITY } else { err };
        max_abs_error = max_abs_error.max(err);
        if err > tol {
            failures.push(i);
        }
    }
    Ok(VerifyReport { max_abs_error, failures })
}

/// Depth promised for `N` points and `M` classes (`2N + 5` when `M = 1`).
pub fn memorizer_depth(n: usize, m: usize) -> usize {
    if m >= 2 {
        2 * n + 4 * m - 1
    } else {
        2 * n + 5
    }
}
