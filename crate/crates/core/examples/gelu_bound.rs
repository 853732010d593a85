//! How far a GELU network drifts from its ReLU counterpart, and the resulting objective bound.

use relu_forge::geometry::Activation;
use relu_forge::memorize::{build_memorizer, LabeledDataset};
use relu_forge::train::{certificate, deviation_profile, gelu_objective_bound, objective_parts, TrainConfig};

fn main() -> relu_forge::Result<()> {
    let points: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.5, (i % 2) as f64]).collect();
    let ds = LabeledDataset::classes(points, vec![0, 1, 1, 0, 2, 2])?;
    let (star, _) = build_memorizer(&ds, 0)?;
    let lambda = 1e-3;

    for eps in [0.1, 0.01, 0.001] {
        let profile = deviation_profile(&star, &ds, eps)?;
        let (measured, bound) = profile.last().copied().unwrap_or((0.0, 0.0));
        let cfg = TrainConfig { lambda, activation: Activation::GeluEps(eps), ..TrainConfig::default() };
        let (j, _, _) = objective_parts(&star, &ds, &cfg)?;
        let total = gelu_objective_bound(&star, &ds, lambda, eps)?;
        println!("eps {eps}: output drift {measured:.3e} (bound {bound:.3e})  J at theta* {j:.5}  bound {total:.3e}");
    }
    println!("relu certificate {:.5}", certificate(&star, &ds, lambda)?);
    Ok(())
}
