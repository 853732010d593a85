//! Dataset and network files, and the entry points behind the command line.
//!
//! Datasets are CSV (header `x1,…,xd,label` or `x1,…,xd,y1,…,ym`) or JSON
//! (`{"points": [[…]], "labels": […]}`). Networks are JSON documents whose
//! floats are written in shortest round-trip form, so a save/load cycle is
//! bit-exact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::approximate::{self, ApproxReport, BBox, Target};
use crate::error::{Error, Result};
use crate::geometry::{Activation, ConstructionTrace, Layer, Matrix, Network};
use crate::memorize::{self, LabeledDataset, Labels};
use crate::norms::triple_norm;
use crate::train::{self, LossId, TrainConfig};

/// Environment variable supplying the default seed.
pub const SEED_ENV: &str = "RELU_FORGE_SEED";

/// How the label columns of a dataset are read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Class,
    Real,
    Vector,
}

impl LabelKind {
    pub fn of(labels: &Labels) -> Self {
        match labels {
            Labels::Class(_) => LabelKind::Class,
            Labels::Real(_) => LabelKind::Real,
            Labels::Vector(_) => LabelKind::Vector,
        }
    }
}

/// Scalar labels that are non-negative integers covering `0..M` become
/// classes; anything else stays real.
fn scalar_labels(values: Vec<f64>) -> Labels {
    let as_class: Option<Vec<usize>> = values
        .iter()
        .map(|&v| (v >= 0.0 && v.fract() == 0.0 && v < 1e15).then_some(v as usize))
        .collect();
    if let Some(c) = as_class {
        let m = c.iter().copied().max().map_or(0, |k| k + 1);
        let mut seen = vec![false; m];
        for &k in &c {
            seen[k] = true;
        }
        if seen.iter().all(|&s| s) {
            return Labels::Class(c);
        }
    }
    Labels::Real(values)
}

fn parse_f64(s: &str, row: usize, col: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::Parse(format!("row {row}, column {col}: bad number {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("row {row}, column {col}: non-finite value")));
    }
    Ok(v)
}

/// Parses a CSV dataset. Row numbers in diagnostics count data rows from 0.
pub fn parse_csv_dataset(text: &str) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let is_x = |h: &str| h.starts_with('x') && h[1..].parse::<usize>().is_ok();
    let is_y = |h: &str| h.starts_with('y') && h[1..].parse::<usize>().is_ok();
    let xs: Vec<usize> = (0..header.len()).filter(|&i| is_x(&header[i])).collect();
    let ys: Vec<usize> = (0..header.len()).filter(|&i| is_y(&header[i])).collect();
    let label = header.iter().position(|h| h == "label");
    if xs.is_empty() {
        return Err(Error::Parse("header has no x1..xd columns".into()));
    }
    if label.is_some() == !ys.is_empty() {
        return Err(Error::Parse("header needs exactly one of `label` or y1..ym".into()));
    }
    if let Some(extra) = header.iter().find(|h| !is_x(h) && !is_y(h) && h.as_str() != "label") {
        return Err(Error::Parse(format!("unknown column {extra:?}")));
    }

    let mut points = Vec::new();
    let mut scalars = Vec::new();
    let mut vectors = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let x: Result<Vec<f64>> = xs.iter().map(|&i| parse_f64(&rec[i], row, &header[i])).collect();
        points.push(x?);
        match label {
            Some(i) => scalars.push(parse_f64(&rec[i], row, "label")?),
            None => {
                let y: Result<Vec<f64>> = ys.iter().map(|&i| parse_f64(&rec[i], row, &header[i])).collect();
                vectors.push(y?);
            }
        }
    }
    let labels = if label.is_some() { scalar_labels(scalars) } else { Labels::Vector(vectors) };
    dataset_with_diagnostic(points, labels)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonLabel {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Deserialize)]
struct JsonDataset {
    points: Vec<Vec<f64>>,
    labels: Vec<JsonLabel>,
    #[serde(default)]
    label_kind: Option<LabelKind>,
}

/// Parses a JSON dataset `{"points", "labels", "label_kind"?}`.
pub fn parse_json_dataset(text: &str) -> Result<LabeledDataset> {
    let raw: JsonDataset = serde_json::from_str(text)?;
    let scalars: Option<Vec<f64>> =
        raw.labels.iter().map(|l| if let JsonLabel::Scalar(v) = l { Some(*v) } else { None }).collect();
    let labels = match (raw.label_kind, scalars) {
        (Some(LabelKind::Vector), _) | (None, None) => Labels::Vector(
            raw.labels
                .into_iter()
                .map(|l| match l {
                    JsonLabel::Scalar(v) => vec![v],
                    JsonLabel::Vector(v) => v,
                })
                .collect(),
        ),
        (Some(LabelKind::Real), Some(v)) => Labels::Real(v),
        (Some(LabelKind::Class), Some(v)) => match scalar_labels(v) {
            Labels::Class(c) => Labels::Class(c),
            _ => return Err(Error::InvalidDataset("class labels must be integers covering 0..M".into())),
        },
        (None, Some(v)) => scalar_labels(v),
        (Some(_), None) => return Err(Error::InvalidDataset("scalar label kind with vector labels".into())),
    };
    dataset_with_diagnostic(raw.points, labels)
}

fn dataset_with_diagnostic(points: Vec<Vec<f64>>, labels: Labels) -> Result<LabeledDataset> {
    if points.len() != labels.len() {
        return Err(Error::InvalidDataset(format!("{} points but {} labels", points.len(), labels.len())));
    }
    if points.iter().any(|p| p.len() != points[0].len()) {
        return Err(Error::ShapeMismatch("rows have different numbers of coordinates".into()));
    }
    LabeledDataset::new(points, labels)
}

/// Reads a dataset, choosing the format by extension (`.json` or CSV).
pub fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        parse_json_dataset(&text)
    } else {
        parse_csv_dataset(&text)
    }
}

/// CSV text of a dataset in the format [`parse_csv_dataset`] reads.
pub fn dataset_to_csv(ds: &LabeledDataset) -> String {
    let d = ds.dim();
    let mut cols: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    let ys = ds.labels.as_vectors();
    match ds.labels {
        Labels::Vector(_) => cols.extend((1..=ys[0].len()).map(|i| format!("y{i}"))),
        _ => cols.push("label".into()),
    }
    let mut out = cols.join(",");
    out.push('\n');
    for (p, y) in ds.points.iter().zip(&ys) {
        let row: Vec<String> = p.iter().chain(y).map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// One layer on disk: row-major `w`, bias `b`, optional row-major `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMeta {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkMeta {
    pub construction: String,
    pub seed: u64,
    pub stages: Vec<StageMeta>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl NetworkMeta {
    pub fn new(construction: &str, seed: u64, trace: Option<&ConstructionTrace>) -> Self {
        let stages = trace.map_or_else(Vec::new, |t| {
            t.stages.iter().map(|s| StageMeta { name: s.name.clone(), start: s.start, end: s.end }).collect()
        });
        let flags = trace.map_or_else(Vec::new, |t| t.flags.clone());
        Self { construction: construction.to_string(), seed, stages, flags }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub input_dim: usize,
    pub layers: Vec<LayerFile>,
    pub meta: NetworkMeta,
}

fn shaped(data: Vec<f64>, rows: usize, what: &str, j: usize) -> Result<Matrix> {
    if rows == 0 || data.len() % rows != 0 {
        return Err(Error::ShapeMismatch(format!("layer {j}: {what} has {} entries for {rows} rows", data.len())));
    }
    let cols = data.len() / rows;
    Matrix::new(rows, cols, data)
}

impl NetworkFile {
    pub fn from_network(net: &Network, meta: NetworkMeta) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerFile { w: l.weights.data.clone(), b: l.bias.clone(), a: l.post.as_ref().map(|a| a.data.clone()) })
            .collect();
        Self { input_dim: net.input_dim, layers, meta }
    }

    pub fn to_network(&self) -> Result<Network> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (j, lf) in self.layers.iter().enumerate() {
            let w = shaped(lf.w.clone(), lf.b.len(), "w", j)?;
            let mut layer = Layer::new(w, lf.b.clone())?;
            if let Some(a) = &lf.a {
                let cols = lf.b.len();
                if a.len() % cols != 0 {
                    return Err(Error::ShapeMismatch(format!("layer {j}: post-matrix does not fit {cols} outputs")));
                }
                layer = layer.with_post(Matrix::new(a.len() / cols, cols, a.clone())?)?;
            }
            layers.push(layer);
        }
        Network::new(self.input_dim, layers)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn save_network(path: &Path, net: &Network, meta: NetworkMeta) -> Result<()> {
    fs::write(path, NetworkFile::from_network(net, meta).to_json()?)?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<(Network, NetworkMeta)> {
    let file = NetworkFile::from_json(&fs::read_to_string(path)?)?;
    Ok((file.to_network()?, file.meta))
}

/// Printed after `memorize`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorizeSummary {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub depth: usize,
    pub width: usize,
    pub max_abs_error: f64,
    pub l2_norm: f64,
    pub linf_norm: f64,
}

/// Memorizer for whatever labels the dataset carries.
pub fn memorize_dataset(ds: &LabeledDataset, signed: bool, seed: u64) -> Result<(Network, NetworkMeta)> {
    let (name, net, trace) = match (&ds.labels, signed) {
        (Labels::Vector(_), false) => ("vector_memorizer", memorize::build_vector_memorizer(ds, seed)?, None),
        (Labels::Vector(_), true) => {
            ("signed_vector_memorizer", memorize::build_signed_vector_memorizer(ds, seed)?, None)
        }
        (_, false) => {
            let (net, trace) = memorize::build_memorizer(ds, seed)?;
            ("memorizer", net, Some(trace))
        }
        (_, true) => {
            let (net, trace) = memorize::build_signed_memorizer(ds, seed)?;
            ("signed_memorizer", net, Some(trace))
        }
    };
    Ok((net, NetworkMeta::new(name, seed, trace.as_ref())))
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

/// `memorize`: build, optionally save, and print a summary line.
pub fn cli_memorize(
    dataset: &Path,
    signed: bool,
    seed: u64,
    out_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<MemorizeSummary> {
    let ds = read_dataset(dataset)?;
    let (net, meta) = memorize_dataset(&ds, signed, seed)?;
    let norms = triple_norm(&net);
    let summary = MemorizeSummary {
        n: ds.n(),
        m: ds.m(),
        depth: net.depth(),
        width: net.width(),
        max_abs_error: memorize::verify_memorization(&net, &ds, f64::INFINITY)?.max_abs_error,
        l2_norm: norms.l2,
        linf_norm: norms.linf,
    };
    if let Some(p) = out_path {
        save_network(p, &net, meta)?;
    }
    print_json(out, &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutput {
    pub max_abs_error: f64,
    pub tol: f64,
    pub failures: usize,
    pub passed: bool,
}

/// `verify`: `passed` iff the largest error is at most `tol`.
pub fn cli_verify(network: &Path, dataset: &Path, tol: f64, out: &mut dyn Write) -> Result<VerifyOutput> {
    let (net, _) = load_network(network)?;
    let ds = read_dataset(dataset)?;
    if net.input_dim != ds.dim() {
        return Err(Error::ShapeMismatch(format!("network takes {} inputs, dataset has {}", net.input_dim, ds.dim())));
    }
    let r = memorize::verify_memorization(&net, &ds, tol)?;
    let v = VerifyOutput {
        max_abs_error: r.max_abs_error,
        tol,
        failures: r.failures.len(),
        passed: r.max_abs_error <= tol,
    };
    print_json(out, &v)?;
    Ok(v)
}

/// Options of `train`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainArgs {
    pub lambda: f64,
    /// GELU temperature; `0` trains the ReLU objective.
    pub eps: f64,
    pub loss: LossId,
    pub restarts: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub max_iters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub lambda: f64,
    pub eps: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub loss_term: f64,
    pub norm2_term: f64,
    /// `λ ‖θ*‖²` of the constructed memorizer (squared loss only).
    pub certificate: Option<f64>,
    /// Certificate plus the GELU deviation term, when `eps > 0`.
    pub bound: Option<f64>,
    pub best_restart: usize,
}

/// `train`: gradient descent started at the constructed memorizer.
pub fn cli_train(dataset: &Path, args: &TrainArgs, log: Option<&Path>, out: &mut dyn Write) -> Result<TrainSummary> {
    let ds = read_dataset(dataset)?;
    let (theta_star, _) = memorize_dataset(&ds, false, args.seed)?;
    let activation = if args.eps > 0.0 { Activation::GeluEps(args.eps) } else { Activation::Relu };
    let cfg = TrainConfig {
        lambda: args.lambda,
        loss: args.loss,
        learning_rate: args.learning_rate,
        max_iters: args.max_iters,
        activation,
        restarts: args.restarts,
        seed: args.seed,
    };
    let outcome = train::train_gd(&theta_star, &ds, &cfg)?;
    let (j, loss_term, norm2_term) = train::objective_parts(&outcome.net, &ds, &cfg)?;
    let (certificate, bound) = if args.loss == LossId::SquaredL2 {
        let c = train::certificate(&theta_star, &ds, args.lambda)?;
        let b = if args.eps > 0.0 {
            Some(train::gelu_objective_bound(&theta_star, &ds, args.lambda, args.eps)?)
        } else {
            None
        };
        (Some(c), b)
    } else {
        (None, None)
    };
    if let Some(p) = log {
        outcome.write_log(fs::File::create(p)?)?;
    }
    let s = TrainSummary {
        lambda: args.lambda,
        eps: args.eps,
        j,
        loss_term,
        norm2_term,
        certificate,
        bound,
        best_restart: outcome.best_restart,
    };
    print_json(out, &s)?;
    Ok(s)
}

/// Target selected on the command line.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetSpec {
    Square,
    Paraboloid,
    /// Nearest-neighbour interpolation of a scalar dataset on its bounding box.
    File(PathBuf),
}

/// Piecewise-constant target through the samples of a scalar dataset.
pub fn target_from_dataset(ds: &LabeledDataset, name: &str) -> Result<Target> {
    let values: Vec<f64> = match &ds.labels {
        Labels::Vector(_) => return Err(Error::InvalidDataset("target file needs scalar labels".into())),
        l => l.as_vectors().into_iter().map(|v| v[0]).collect(),
    };
    let d = ds.dim();
    let lo: Vec<f64> = (0..d).map(|k| ds.points.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..d).map(|k| ds.points.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let bbox = BBox::new(lo, hi)?;
    let points = ds.points.clone();
    Ok(Target::scalar(name, bbox, move |x| {
        let i = (0..points.len())
            .min_by(|&a, &b| crate::geometry::dist(&points[a], x).total_cmp(&crate::geometry::dist(&points[b], x)))
            .unwrap_or(0);
        values[i]
    }))
}

/// Options of `approximate`.
#[derive(Clone, Debug, PartialEq)]
pub struct ApproximateArgs {
    pub target: TargetSpec,
    pub h: f64,
    pub p: f64,
    pub samples: usize,
    pub seed: u64,
}

/// `approximate`: build, measure the `Lᵖ` error, and report depth against
/// `‖f‖^d ε^{−d}` evaluated at the measured error.
pub fn cli_approximate(
    args: &ApproximateArgs,
    net_out: Option<&Path>,
    report_out: Option<&Path>,
    out: &mut dyn Write,
) -> Result<ApproxReport> {
    if !(args.h > 0.0 && args.h < 1.0) {
        return Err(Error::InvalidParameter(format!("h must be in (0,1), got {}", args.h)));
    }
    let target = match &args.target {
        TargetSpec::Square => Target::square(),
        TargetSpec::Paraboloid => Target::paraboloid(),
        TargetSpec::File(p) => target_from_dataset(&read_dataset(p)?, &p.display().to_string())?,
    };
    let ap = approximate::build_approximator(&target, args.h, args.p, args.seed)?;
    let est = approximate::lp_error(&ap.net, &target, args.p, args.samples, args.seed)?;
    let norm = approximate::w1p_norm(&target, args.p, approximate::QUAD_POINTS);
    let d = target.dim();
    let depth_bound = if est.value > 0.0 { approximate::depth_bound(norm, est.value, d, 1.0)? } else { f64::INFINITY };
    let g = &ap.simple.grid;
    let report = ApproxReport {
        h: args.h,
        delta: g.delta,
        n_h: g.n_cells(),
        n_e: ap.n_edge,
        m_h: ap.simple.m_h,
        depth: ap.net.depth(),
        width: ap.net.width(),
        lp_error: est.value,
        stderr: est.stderr,
        depth_bound,
    };
    if let Some(p) = net_out {
        save_network(p, &ap.net, NetworkMeta::new("approximator", args.seed, Some(&ap.trace)))?;
    }
    if let Some(p) = report_out {
        let mut s = serde_json::to_string_pretty(&report)?;
        s.push('\n');
        fs::write(p, s)?;
    }
    print_json(out, &report)?;
    Ok(report)
}

fn label_text(y: &[f64]) -> String {
    y.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

/// Snapshot CSV: `point_id,label,c1,…`.
pub fn snapshot_csv(ds: &LabeledDataset, snapshot: &[Vec<f64>]) -> String {
    let k = snapshot.first().map_or(0, Vec::len);
    let mut s = String::from("point_id,label");
    for c in 1..=k {
        s.push_str(&format!(",c{c}"));
    }
    s.push('\n');
    for (i, (x, y)) in snapshot.iter().zip(ds.labels.as_vectors()).enumerate() {
        s.push_str(&format!("{i},{}", label_text(&y)));
        for v in x {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

/// `trace`: replays the dataset through the network and writes one CSV per
/// recorded stage, named `<k>_<stage>.csv`. A depth-0 network yields a
/// single `0_input.csv`.
pub fn cli_trace(network: &Path, dataset: &Path, out_dir: &Path, out: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let (net, meta) = load_network(network)?;
    let ds = read_dataset(dataset)?;
    if net.input_dim != ds.dim() {
        return Err(Error::ShapeMismatch(format!("network takes {} inputs, dataset has {}", net.input_dim, ds.dim())));
    }
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    if net.depth() == 0 {
        let p = out_dir.join("0_input.csv");
        fs::write(&p, snapshot_csv(&ds, &ds.points))?;
        files.push(p);
    } else {
        if meta.stages.is_empty() {
            return Err(Error::InvalidDataset("network file carries no stage metadata".into()));
        }
        let traces: Vec<Vec<Vec<f64>>> = ds.points.iter().map(|x| net.forward_trace(x)).collect::<Result<_>>()?;
        for (k, st) in meta.stages.iter().enumerate() {
            if st.end > net.depth() || st.end < st.start {
                return Err(Error::ShapeMismatch(format!("stage {} ends past the network", st.name)));
            }
            let snap: Vec<Vec<f64>> = if st.end == 0 {
                ds.points.clone()
            } else {
                traces.iter().map(|t| t[st.end - 1].clone()).collect()
            };
            let p = out_dir.join(format!("{}_{}.csv", k + 1, st.name));
            fs::write(&p, snapshot_csv(&ds, &snap))?;
            files.push(p);
        }
    }
    for f in &files {
        writeln!(out, "{}", f.display())?;
    }
    Ok(files)
}
