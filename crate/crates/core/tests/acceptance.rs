//! End-to-end acceptance checks, one line of output per criterion.
//!
//! Run with `cargo test --release --test acceptance -- --nocapture` to see
//! the report.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use relu_forge::approximate::{self, BBox, Target};
use relu_forge::geometry::{self, Activation, Layer, Matrix, Network};
use relu_forge::io::{self, NetworkFile, NetworkMeta};
use relu_forge::memorize::{self, LabeledDataset, Labels};
use relu_forge::norms;
use relu_forge::train::{self, LossId, TrainConfig};

const EXACT_TOL: f64 = 1e-6;

struct Report {
    lines: Vec<(usize, bool, String)>,
}

impl Report {
    fn record(&mut self, n: usize, pass: bool, detail: String) {
        println!("criterion {n:>2}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((n, pass, detail));
    }
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize, min_gap: f64) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n);
    while pts.len() < n {
        let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if pts.iter().all(|q| geometry::dist(q, &p) >= min_gap) {
            pts.push(p);
        }
    }
    pts
}

/// Classes `0..m`, each used at least once, in shuffled order.
fn random_classes(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<usize> {
    let mut c: Vec<usize> = (0..n).map(|i| if i < m { i } else { rng.gen_range(0..m) }).collect();
    for i in (1..n).rev() {
        c.swap(i, rng.gen_range(0..=i));
    }
    c
}

/// The `(d, N, M)` grid of the exact-memorization runs, skipping `M > N`.
fn memorization_grid() -> Vec<(usize, usize, usize)> {
    let mut g = Vec::new();
    for d in [1, 2, 5, 10] {
        for n in [5, 20, 50] {
            for m in [2, 4, 8] {
                if m <= n {
                    g.push((d, n, m));
                }
            }
        }
    }
    g
}

fn criterion_1_and_3(rep: &mut Report) {
    let grid = memorization_grid();
    let t0 = Instant::now();
    let (mut worst, mut bad_shape, mut stage_failures) = (0.0f64, Vec::new(), Vec::new());
    for i in 0..100u64 {
        let (d, n, m) = grid[i as usize % grid.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        let pts = random_points(&mut rng, n, d, 0.0);
        let classes = random_classes(&mut rng, n, m);
        let ds = LabeledDataset::classes(pts, classes.clone()).unwrap();
        let (net, trace) = memorize::build_memorizer(&ds, i).unwrap();
        let r = memorize::verify_memorization(&net, &ds, EXACT_TOL).unwrap();
        worst = worst.max(r.max_abs_error);
        if net.depth() != 2 * n + 4 * m - 1 || net.width() != 2 {
            bad_shape.push(i);
        }
        if let Err(why) = stage_invariants(&net, &trace, &ds, &classes) {
            stage_failures.push(format!("#{i}: {why}"));
        }
    }
    let el = t0.elapsed();
    let pass = worst <= EXACT_TOL && bad_shape.is_empty() && el < Duration::from_secs(30);
    rep.record(
        1,
        pass,
        format!("100 datasets, max_abs_error {worst:.2e} (tol 1e-6), wrong depth/width {bad_shape:?}, {el:.2?} (limit 30s)"),
    );
    rep.record(
        3,
        stage_failures.is_empty(),
        format!("stage postconditions on the same 100 datasets, failures {stage_failures:?}"),
    );
}

fn stage_invariants(
    net: &Network,
    trace: &geometry::ConstructionTrace,
    ds: &LabeledDataset,
    classes: &[usize],
) -> Result<(), String> {
    if !trace.covers(net.depth()) {
        return Err("stage ranges do not cover the network".into());
    }
    // Snapshots must be what the network itself produces at stage ends.
    for st in &trace.stages {
        for (i, x) in ds.points.iter().enumerate() {
            let replay = net.forward_range(x, 0..st.end);
            let same = replay.iter().zip(&st.snapshot[i]).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(format!("{} snapshot differs from replay at point {i}", st.name));
            }
        }
    }
    let pre = &trace.stage(memorize::STAGE_PRECONDITION).ok_or("no precondition stage")?.snapshot;
    let mut v: Vec<f64> = pre.iter().map(|p| p[0]).collect();
    if v.iter().any(|&t| t <= 0.0) {
        return Err("non-positive projection".into());
    }
    v.sort_by(f64::total_cmp);
    if v.windows(2).any(|w| w[0] >= w[1]) {
        return Err("repeated projection".into());
    }
    let comp = &trace.stage(memorize::STAGE_COMPRESS).ok_or("no compress stage")?.snapshot;
    for i in 0..comp.len() {
        for j in i + 1..comp.len() {
            let same = comp[i] == comp[j];
            if same != (classes[i] == classes[j]) {
                return Err(format!("points {i}, {j}: collapse {same} but classes {} and {}", classes[i], classes[j]));
            }
        }
    }
    let sorted = &trace.stage(memorize::STAGE_SORT).ok_or("no sort stage")?.snapshot;
    let m = ds.m();
    let mut per_class = vec![f64::NAN; m];
    for (i, s) in sorted.iter().enumerate() {
        per_class[classes[i]] = s[0];
    }
    if per_class.windows(2).any(|w| !(w[0] < w[1])) {
        return Err("sorted values not strictly increasing in class".into());
    }
    let mapped = &trace.stage(memorize::STAGE_MAP).ok_or("no map stage")?.snapshot;
    for (i, y) in mapped.iter().enumerate() {
        if (y[0] - classes[i] as f64).abs() > EXACT_TOL {
            return Err(format!("label miss at point {i}"));
        }
    }
    Ok(())
}

fn criterion_2(rep: &mut Report) {
    let (mut signed_worst, mut signed_bad, mut vec_worst, mut vec_bad) = (0.0f64, Vec::new(), 0.0f64, Vec::new());
    for i in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + i);
        let (n, d) = (rng.gen_range(4..30), rng.gen_range(1..6));
        let m = rng.gen_range(2..=n.min(6));
        let pts = random_points(&mut rng, n, d, 0.0);
        let levels: Vec<f64> = (0..m).map(|k| k as f64 * 1.5 - 3.0 + rng.gen_range(0.0..0.5)).collect();
        let classes = random_classes(&mut rng, n, m);
        let ys: Vec<f64> = classes.iter().map(|&c| levels[c]).collect();
        let ds = LabeledDataset::new(pts, Labels::Real(ys)).unwrap();
        let (net, _) = memorize::build_signed_memorizer(&ds, i).unwrap();
        signed_worst = signed_worst.max(memorize::verify_memorization(&net, &ds, EXACT_TOL).unwrap().max_abs_error);
        if net.depth() != 2 * n + 4 * m || net.width() != 2 {
            signed_bad.push(i);
        }
    }
    for i in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + i);
        let (n, d, out) = (rng.gen_range(4..30), rng.gen_range(1..6), rng.gen_range(2..5));
        let m = rng.gen_range(2..=n.min(6));
        let pts = random_points(&mut rng, n, d, 0.0);
        let protos: Vec<Vec<f64>> = (0..m).map(|_| (0..out).map(|_| rng.gen_range(0.0..4.0)).collect()).collect();
        let classes = random_classes(&mut rng, n, m);
        let ys: Vec<Vec<f64>> = classes.iter().map(|&c| protos[c].clone()).collect();
        let ds = LabeledDataset::new(pts, Labels::Vector(ys)).unwrap();
        let net = memorize::build_vector_memorizer(&ds, i).unwrap();
        vec_worst = vec_worst.max(memorize::verify_memorization(&net, &ds, EXACT_TOL).unwrap().max_abs_error);
        if net.width() > 2 * out {
            vec_bad.push(i);
        }
    }
    let pass = signed_worst <= EXACT_TOL && signed_bad.is_empty() && vec_worst <= EXACT_TOL && vec_bad.is_empty();
    rep.record(
        2,
        pass,
        format!(
            "signed: max error {signed_worst:.2e}, depth != 2N+4M {signed_bad:?}; vector: max error {vec_worst:.2e}, width > 2m {vec_bad:?}"
        ),
    );
}

fn criterion_4(rep: &mut Report) {
    const MIN_GAP: f64 = 0.05;
    let regime = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, 20, 2, MIN_GAP);
        let classes = random_classes(&mut rng, 20, 4);
        let ds = LabeledDataset::classes(pts, classes).unwrap();
        let (net, _) = memorize::build_memorizer(&ds, seed).unwrap();
        (net, ds)
    };
    let cal_runs: Vec<_> = (0..20).map(|s| regime(1000 + s)).collect();
    let bare = norms::calibrate("d2_n20_m4_gap0.05", MIN_GAP, &cal_runs).unwrap();
    let cal = bare.clone().with_margin(norms::CALIBRATION_MARGIN);
    let json = serde_json::to_string(&cal).unwrap();
    let (mut violations, mut bare_violations, mut worst) = (0, 0, (0.0f64, 0.0f64));
    for s in 0..20 {
        let (net, ds) = regime(2000 + s);
        let (a, b) = norms::within_envelopes(&cal, &net, &ds).unwrap();
        violations += usize::from(!a) + usize::from(!b);
        let (a, b) = norms::within_envelopes(&bare, &net, &ds).unwrap();
        bare_violations += usize::from(!a) + usize::from(!b);
        let (r2, ri) = norms::envelope_ratios(&net, &ds).unwrap();
        worst = (worst.0.max(r2), worst.1.max(ri));
    }
    rep.record(
        4,
        violations == 0,
        format!(
            "calibration {json}; held-out worst ratios l2 {:.3}, linf {:.3}; violations {violations} (with the bare calibration maximum: {bare_violations})",
            worst.0, worst.1
        ),
    );
}

fn random_width_one(rng: &mut ChaCha8Rng) -> Network {
    let d = rng.gen_range(1..4);
    let depth = rng.gen_range(1..9);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut *rng) };
    let mut layers = Vec::with_capacity(depth);
    for j in 0..depth {
        let cols = if j == 0 { d } else { 1 };
        let w: Vec<f64> = (0..cols).map(|_| gauss()).collect();
        layers.push(Layer::from_rows(&[w], vec![gauss()]).unwrap());
    }
    Network::new(d, layers).unwrap()
}

fn criterion_5(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut non_monotone = 0;
    for _ in 0..1000 {
        let net = random_width_one(&mut rng);
        for _ in 0..10 {
            let d = net.input_dim;
            let x0: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let nv = geometry::norm2(&v);
            v.iter_mut().for_each(|c| *c /= nv);
            let ys: Vec<f64> = (0..512)
                .map(|k| {
                    let t = -4.0 + 8.0 * k as f64 / 511.0;
                    let x: Vec<f64> = x0.iter().zip(&v).map(|(a, b)| a + t * b).collect();
                    net.forward(&x).unwrap()[0]
                })
                .collect();
            let scale = ys.iter().fold(1.0f64, |m, y| m.max(y.abs()));
            let tol = 1e-12 * scale;
            let up = ys.windows(2).all(|w| w[1] >= w[0] - tol);
            let down = ys.windows(2).all(|w| w[1] <= w[0] + tol);
            if !(up || down) {
                non_monotone += 1;
            }
        }
    }
    // A width-2 memorizer does realize the pattern a width-1 net cannot.
    let ds = LabeledDataset::new(vec![vec![0.0], vec![1.0], vec![2.0]], Labels::Real(vec![0.0, 1.0, 0.0])).unwrap();
    let (net, _) = memorize::build_memorizer(&ds, 0).unwrap();
    let err = memorize::verify_memorization(&net, &ds, EXACT_TOL).unwrap().max_abs_error;
    rep.record(
        5,
        non_monotone == 0 && err <= EXACT_TOL,
        format!(
            "1000 width-1 nets x 10 lines x 512 points, non-monotone {non_monotone}; every width-1 net is monotone on lines, so (0->0, 1->1, 2->0) is unreachable at width 1, while width 2 hits it with error {err:.1e}"
        ),
    );
}

fn tiny_instances() -> Vec<LabeledDataset> {
    (0..5u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(60 + i);
            let n = 3 + i as usize % 4;
            let d = 1 + i as usize % 2;
            let m = 2 + i as usize % 2;
            let pts = random_points(&mut rng, n, d, 0.1);
            LabeledDataset::classes(pts, random_classes(&mut rng, n, m)).unwrap()
        })
        .collect()
}

fn criterion_6(rep: &mut Report) {
    let lambdas = [1e-1, 1e-2, 1e-3, 1e-4];
    let (mut cert_gap, mut over_cert, mut non_mono) = (0.0f64, Vec::new(), Vec::new());
    let mut rows = Vec::new();
    for (k, ds) in tiny_instances().iter().enumerate() {
        let (star, _) = memorize::build_memorizer(ds, k as u64).unwrap();
        let mut losses = Vec::new();
        for &lambda in &lambdas {
            let cfg = TrainConfig { lambda, restarts: 4, max_iters: 300, seed: k as u64, ..TrainConfig::default() };
            let cert = train::certificate(&star, ds, lambda).unwrap();
            cert_gap = cert_gap.max(train::j_lambda(&star, ds, &cfg).unwrap() - cert);
            let out = train::train_gd(&star, ds, &cfg).unwrap();
            let (j, loss, _) = train::objective_parts(&out.net, ds, &cfg).unwrap();
            if j > cert + 1e-9 {
                over_cert.push(format!("instance {k} lambda {lambda:e}: gap {:.3e}", j - cert));
            }
            rows.push(format!("{k}/{lambda:e}: J {j:.4e} cert {cert:.4e} loss {loss:.3e}"));
            losses.push(loss);
        }
        if losses.windows(2).any(|w| w[1] > w[0] + 1e-12) {
            non_mono.push(k);
        }
    }
    for r in &rows {
        println!("    {r}");
    }
    let pass = cert_gap <= 1e-10 && non_mono.is_empty();
    let gd = if over_cert.is_empty() { "GD J <= certificate + 1e-9 everywhere".to_string() } else { format!("optimality gaps {over_cert:?}") };
    rep.record(
        6,
        pass,
        format!("max J(theta*) - cert {cert_gap:.1e} (tol 1e-10); {gd}; loss term non-increasing as lambda shrinks, violations on instances {non_mono:?}"),
    );
}

fn random_net(rng: &mut ChaCha8Rng, d: usize, out: usize, with_post: bool) -> Network {
    let depth = rng.gen_range(1..5);
    let mut dims = vec![d];
    for j in 0..depth {
        dims.push(if j + 1 == depth && !with_post { out } else { rng.gen_range(1..4) });
    }
    let mut layers = Vec::new();
    for j in 0..depth {
        let rows: Vec<Vec<f64>> =
            (0..dims[j + 1]).map(|_| (0..dims[j]).map(|_| StandardNormal.sample(&mut *rng)).collect()).collect();
        let b: Vec<f64> = (0..dims[j + 1]).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let mut l = Layer::from_rows(&rows, b).unwrap();
        if j + 1 == depth && with_post {
            let a: Vec<f64> = (0..out * dims[j + 1]).map(|_| StandardNormal.sample(&mut *rng)).collect();
            l = l.with_post(Matrix::new(out, dims[j + 1], a).unwrap()).unwrap();
        }
        layers.push(l);
    }
    Network::new(d, layers).unwrap()
}

fn off_kink(net: &Network, ds: &LabeledDataset, margin: f64) -> bool {
    ds.points.iter().all(|x| {
        let mut h = x.clone();
        net.layers.iter().all(|l| {
            let z = l.pre_activation(&h);
            let ok = z.iter().all(|v| v.abs() > margin);
            h = l.apply(&h, Activation::Relu);
            ok
        })
    })
}

fn criterion_7(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 100 {
        let logistic = rng.gen_bool(0.3);
        let d = rng.gen_range(1..4);
        let out = if logistic { 1 } else { rng.gen_range(1..3) };
        let post = rng.gen_bool(0.3);
        let net = random_net(&mut rng, d, out, post);
        let n = rng.gen_range(2..6);
        let pts = random_points(&mut rng, n, d, 0.0);
        let labels = if logistic {
            Labels::Real((0..n).map(|i| (i % 2) as f64).collect())
        } else {
            Labels::Vector((0..n).map(|_| (0..out).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
        };
        let ds = LabeledDataset::new(pts, labels).unwrap();
        if !off_kink(&net, &ds, 1e-3) {
            continue;
        }
        let activation = if rng.gen_bool(0.25) { Activation::GeluEps(0.5) } else { Activation::Relu };
        let cfg = TrainConfig {
            lambda: rng.gen_range(0.0..0.1),
            loss: if logistic { LossId::BinaryLogistic } else { LossId::SquaredL2 },
            activation,
            ..TrainConfig::default()
        };
        let analytic = train::grad_j_lambda(&net, &ds, &cfg).unwrap().flat();
        let theta = train::flat_params(&net);
        let h = 1e-6;
        let numeric: Vec<f64> = (0..theta.len())
            .map(|k| {
                let at = |delta: f64| {
                    let mut t = theta.clone();
                    t[k] += delta;
                    let mut m = net.clone();
                    train::set_flat_params(&mut m, &t).unwrap();
                    train::j_lambda(&m, &ds, &cfg).unwrap()
                };
                (at(h) - at(-h)) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = geometry::norm2(&analytic).max(geometry::norm2(&numeric)).max(1e-8);
        worst = worst.max(geometry::norm2(&diff) / scale);
        done += 1;
    }
    rep.record(7, worst <= 1e-5, format!("100 off-kink configurations, worst relative error {worst:.2e} (tol 1e-5)"));
}

/// `max_u |u| Φ(−|u|)` by a plain fine grid, independent of the library.
fn gap_constant_oracle() -> f64 {
    (0..=5_000_000).map(|i| i as f64 * 1e-6).map(|u| u * 0.5 * libm::erfc(u / std::f64::consts::SQRT_2)).fold(0.0, f64::max)
}

fn criterion_8(rep: &mut Report) {
    let c0 = gap_constant_oracle();
    let eps = [1e-1, 1e-2, 1e-3];
    let sups: Vec<f64> = eps
        .iter()
        .map(|&e| {
            (0..=200_000)
                .map(|i| -10.0 * e + 20.0 * e * i as f64 / 200_000.0)
                .map(|x| (geometry::gelu_eps(x, e) - x.max(0.0)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let mx = eps.iter().sum::<f64>() / 3.0;
    let my = sups.iter().sum::<f64>() / 3.0;
    let sxy: f64 = eps.iter().zip(&sups).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = eps.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let slope_ok = ((slope - c0) / c0).abs() <= 0.01;

    let ds = &tiny_instances()[0];
    let (star, _) = memorize::build_memorizer(ds, 0).unwrap();
    let lambda = 1e-3;
    let cert = train::certificate(&star, ds, lambda).unwrap();
    let mut gaps = Vec::new();
    let mut within = true;
    for &e in &[1e-1, 1e-2, 1e-3, 1e-4, 1e-5] {
        let cfg = TrainConfig { lambda, activation: Activation::GeluEps(e), ..TrainConfig::default() };
        let j_hat = train::j_lambda(&star, ds, &cfg).unwrap();
        let bound = train::gelu_objective_bound(&star, ds, lambda, e).unwrap();
        within &= j_hat <= bound;
        gaps.push(bound - cert);
    }
    let shrinking = gaps.windows(2).all(|w| w[1] < w[0]) && gaps[gaps.len() - 1] <= 1e-6 * gaps[0];
    rep.record(
        8,
        slope_ok && within && shrinking,
        format!(
            "c0 oracle {c0:.6}, fitted slope {slope:.6} ({:.3}% off, tol 1%); J_gelu <= bound at every eps: {within}; bound - certificate {gaps:?}",
            100.0 * ((slope - c0) / c0).abs()
        ),
    );
}

struct UatRun {
    h: f64,
    depth: usize,
    error: f64,
    sup: f64,
    form: f64,
    below_threshold: bool,
}

fn uat_run(target: &Target, h: f64, samples: usize, sup_grid: usize) -> (approximate::Approximator, UatRun) {
    let ap = approximate::build_approximator(target, h, 2.0, 0).unwrap();
    let err = approximate::lp_error(&ap.net, target, 2.0, samples, 3).unwrap();
    let sup = approximate::sup_norm_sampled(&ap.net, &target.bbox, sup_grid).unwrap();
    let delta = ap.simple.grid.delta;
    let run = UatRun {
        h,
        depth: ap.net.depth(),
        error: err.value,
        sup,
        form: 1.0 + delta * (h + delta) + h,
        below_threshold: h < approximate::sup_norm_threshold(&target.bbox),
    };
    (ap, run)
}

fn in_cell_error(ap: &approximate::Approximator, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cells = &ap.simple.grid.cells;
    (0..n)
        .map(|_| {
            let c = &cells[rng.gen_range(0..cells.len())];
            let x = c.sample_interior(&mut rng);
            (ap.net.forward(&x).unwrap()[0] - ap.simple.eval_cells(&x).unwrap()).abs()
        })
        .fold(0.0, f64::max)
}

fn criteria_9_to_11(rep: &mut Report) {
    let square = Target::square();
    let norm = approximate::w1p_norm(&square, 2.0, approximate::QUAD_POINTS);

    // Depth-bound constant fitted on grid sizes not used below.
    let mut c_depth = 0.0f64;
    let mut k_runs = Vec::new();
    for h in [0.3, 0.25, 0.15, 0.125, 0.08, 0.0625, 0.04] {
        let (_, r) = uat_run(&square, h, 100_000, 2001);
        c_depth = c_depth.max(r.depth as f64 / approximate::depth_bound(norm, r.error, 1, 1.0).unwrap());
        k_runs.push(r);
    }

    let t0 = Instant::now();
    let mut runs = Vec::new();
    let (mut exact, mut shape_ok, mut depth_ok) = (0.0f64, true, true);
    for h in [0.2, 0.1, 0.05] {
        let (ap, r) = uat_run(&square, h, 100_000, 2001);
        exact = exact.max(in_cell_error(&ap, 1000));
        let g = &ap.simple.grid;
        let formula = 2 * g.n_edge() + 2 * g.n_cells() + 4 * ap.simple.m_h - 1;
        shape_ok &= ap.net.width() == 2 && ap.net.depth() == formula;
        depth_ok &= r.depth as f64 <= approximate::depth_bound(norm, r.error, 1, c_depth).unwrap();
        runs.push(r);
    }
    let el = t0.elapsed();
    let decreasing = runs.windows(2).all(|w| w[1].error < w[0].error);
    let errs: Vec<String> = runs.iter().map(|r| format!("{:.4}", r.error)).collect();
    rep.record(
        9,
        decreasing && exact <= EXACT_TOL && shape_ok && depth_ok && el < Duration::from_secs(60),
        format!(
            "x^2, h 0.2/0.1/0.05: L2 errors {errs:?}; in-cell max error {exact:.1e}; width 2 and depth formula: {shape_ok}; depth <= bound with C {c_depth:.3} fitted on other h: {depth_ok}; {el:.2?} (limit 60s)"
        ),
    );

    let parab = Target::paraboloid();
    let (_, r) = uat_run(&parab, 0.4, 50_000, 201);
    k_runs.push(r);
    let t0 = Instant::now();
    let mut prun = Vec::new();
    let (mut width_ok, mut min_sep, mut max_spread) = (true, f64::INFINITY, 0.0f64);
    for h in [0.5, 0.25] {
        let (ap, r) = uat_run(&parab, h, 50_000, 201);
        width_ok &= ap.net.width() == 3;
        let (sep, spread) = cell_separation(&ap);
        min_sep = min_sep.min(sep);
        max_spread = max_spread.max(spread);
        prun.push(r);
    }
    let el = t0.elapsed();
    let decreasing = prun[1].error < prun[0].error;
    rep.record(
        10,
        width_ok && min_sep >= 1e-9 && max_spread <= 1e-9 && decreasing && el < Duration::from_secs(180),
        format!(
            "paraboloid, h 0.5/0.25: width 3: {width_ok}; L2 errors {:.4} -> {:.4}; smallest separation of distinct cells {min_sep:.2e}, largest in-cell spread {max_spread:.1e}; {el:.2?} (limit 180s)",
            prun[0].error, prun[1].error
        ),
    );

    // One K from the calibration runs, checked on every run reported above.
    let k = k_runs.iter().filter(|r| r.below_threshold).map(|r| r.sup / r.form).fold(0.0, f64::max);
    let checked: Vec<&UatRun> = runs.iter().chain(&prun).filter(|r| r.below_threshold).collect();
    let worst = checked.iter().map(|r| r.sup / r.form).fold(0.0, f64::max);
    let hs: Vec<f64> = checked.iter().map(|r| r.h).collect();
    rep.record(
        11,
        worst <= k,
        format!("K = {k:.3} fitted on calibration runs; largest sup/(1+delta(h+delta)+h) over runs h {hs:?} is {worst:.3}"),
    );
}

/// Sends interior samples of every cell through the collapse layers:
/// returns the smallest distance between images of distinct cells and the
/// largest spread of images within one cell.
fn cell_separation(ap: &approximate::Approximator) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let front = 0..2 * ap.n_edge;
    let images: Vec<Vec<Vec<f64>>> = ap
        .simple
        .grid
        .cells
        .iter()
        .map(|c| (0..4).map(|_| ap.net.forward_range(&c.sample_interior(&mut rng), front.clone())).collect())
        .collect();
    let mut spread = 0.0f64;
    for imgs in &images {
        for p in imgs {
            spread = spread.max(geometry::dist(p, &imgs[0]));
        }
    }
    let mut sep = f64::INFINITY;
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            for p in &images[i] {
                for q in &images[j] {
                    sep = sep.min(geometry::dist(p, q));
                }
            }
        }
    }
    (sep, spread)
}

fn run_cli(args: &[&str], dir: &Path) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_relu-forge")).args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn criterion_12(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pts = random_points(&mut rng, 30, 3, 0.0);
    let ds = LabeledDataset::classes(pts, random_classes(&mut rng, 30, 5)).unwrap();
    let (mem, trace) = memorize::build_memorizer(&ds, 1).unwrap();
    let ap = approximate::build_approximator(&Target::paraboloid(), 0.5, 2.0, 0).unwrap();
    let signed = memorize::build_signed_memorizer(
        &LabeledDataset::new(vec![vec![0.0], vec![1.0]], Labels::Real(vec![-2.0, 3.0])).unwrap(),
        0,
    )
    .unwrap()
    .0;
    let mut mismatches = 0;
    for (net, bbox) in [(&mem, BBox::new(vec![-1.5; 3], vec![1.5; 3]).unwrap()), (&ap.net, ap.simple.grid.bbox.clone()), (&signed, BBox::new(vec![-1.0], vec![2.0]).unwrap())] {
        let text = NetworkFile::from_network(net, NetworkMeta::new("memorizer", 1, Some(&trace))).to_json().unwrap();
        let back = NetworkFile::from_json(&text).unwrap().to_network().unwrap();
        for _ in 0..1000 {
            let x = bbox.sample(&mut rng);
            let (a, b) = (net.forward(&x).unwrap(), back.forward(&x).unwrap());
            if a.iter().zip(&b).any(|(u, v)| u.to_bits() != v.to_bits()) {
                mismatches += 1;
            }
        }
    }

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.csv"), io::dataset_to_csv(&ds)).unwrap();
    let mut differing = Vec::new();
    let runs: Vec<Vec<(String, Vec<u8>)>> = (0..2)
        .map(|k| {
            let sub = format!("run{k}");
            std::fs::create_dir_all(dir.path().join(&sub)).unwrap();
            let net = format!("{sub}/net.json");
            let mut outs = vec![
                ("memorize".to_string(), run_cli(&["memorize", "d.csv", "--seed", "4", "--out", &net], dir.path())),
                ("verify".to_string(), run_cli(&["verify", &net, "d.csv"], dir.path())),
                ("trace".to_string(), run_cli(&["trace", &net, "d.csv", "--out-dir", &format!("{sub}/trace")], dir.path())),
                (
                    "approximate".to_string(),
                    run_cli(
                        &["approximate", "--target", "x2", "--h", "0.1", "--samples", "5000", "--out", &format!("{sub}/ap.json"), "--report", &format!("{sub}/rep.json")],
                        dir.path(),
                    ),
                ),
                (
                    "train".to_string(),
                    run_cli(&["train", "d.csv", "--lambda", "0.001", "--max-iters", "5", "--restarts", "1", "--log", &format!("{sub}/log.jsonl")], dir.path()),
                ),
            ];
            let mut files: Vec<_> = walk(&dir.path().join(&sub));
            files.sort();
            for f in files {
                let rel = f.strip_prefix(dir.path().join(&sub)).unwrap().display().to_string();
                outs.push((rel, std::fs::read(&f).unwrap()));
            }
            outs
        })
        .collect();
    for ((name, a), (_, b)) in runs[0].iter().zip(&runs[1]) {
        // Printed paths differ only by the run directory.
        let norm = |v: &Vec<u8>| String::from_utf8_lossy(v).replace("run0", "runX").replace("run1", "runX");
        if norm(a) != norm(b) {
            differing.push(name.clone());
        }
    }
    let same_count = runs[0].len() == runs[1].len();
    rep.record(
        12,
        mismatches == 0 && differing.is_empty() && same_count,
        format!(
            "save/load bitwise mismatches on 3x1000 inputs: {mismatches}; CLI outputs compared {}, differing {differing:?}",
            runs[0].len()
        ),
    );
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn acceptance() {
    println!();
    let mut rep = Report { lines: Vec::new() };
    criterion_1_and_3(&mut rep);
    criterion_2(&mut rep);
    criterion_4(&mut rep);
    criterion_5(&mut rep);
    criterion_6(&mut rep);
    criterion_7(&mut rep);
    criterion_8(&mut rep);
    criteria_9_to_11(&mut rep);
    criterion_12(&mut rep);
    rep.lines.sort_by_key(|l| l.0);
    let failed: Vec<usize> = rep.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    println!("acceptance: {} of {} criteria pass", rep.lines.len() - failed.len(), rep.lines.len());
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
