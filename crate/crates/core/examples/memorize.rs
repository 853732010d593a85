//! Memorize a small labelled point cloud and inspect each construction stage.

use relu_forge::memorize::{build_memorizer, memorizer_depth, verify_memorization, LabeledDataset};
use relu_forge::norms::triple_norm;

fn main() -> relu_forge::Result<()> {
    let points = vec![
        vec![0.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![1.0, 1.0],
        vec![2.0, 0.0],
        vec![0.0, 2.0],
        vec![2.0, 2.0],
        vec![3.0, 1.0],
    ];
    let ds = LabeledDataset::classes(points, vec![0, 1, 2, 3, 0, 1, 2, 3])?;
    let (net, trace) = build_memorizer(&ds, 0)?;

    println!("N = {}, M = {}", ds.n(), ds.m());
    println!("depth {} (expected {}), width {}", net.depth(), memorizer_depth(ds.n(), ds.m()), net.width());
    for stage in &trace.stages {
        println!("  {:<12} layers {:>2}..{:<2}", stage.name, stage.start, stage.end);
    }

    let report = verify_memorization(&net, &ds, 1e-6)?;
    println!("max |phi(x) - y| = {:.3e}", report.max_abs_error);
    for (x, y) in ds.points.iter().zip(ds.labels.as_vectors()) {
        println!("  phi({x:?}) = {:.6}  label {}", net.forward(x)?[0], y[0]);
    }

    let norms = triple_norm(&net);
    println!("l2 norm {:.3}, linf norm {:.3}", norms.l2, norms.linf);
    Ok(())
}
