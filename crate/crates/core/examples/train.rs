//! Regularized training started from the explicit memorizer.

use relu_forge::memorize::{build_memorizer, LabeledDataset};
use relu_forge::train::{certificate, objective_parts, train_gd, TrainConfig};

fn main() -> relu_forge::Result<()> {
    let points: Vec<Vec<f64>> = (0..10).map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()]).collect();
    let labels = (0..10).map(|i| i % 3).collect();
    let ds = LabeledDataset::classes(points, labels)?;
    let (star, _) = build_memorizer(&ds, 0)?;

    for lambda in [1e-2, 1e-3, 1e-4] {
        let cfg = TrainConfig { lambda, max_iters: 300, restarts: 2, seed: 5, ..TrainConfig::default() };
        let cert = certificate(&star, &ds, lambda)?;
        let out = train_gd(&star, &ds, &cfg)?;
        let (j, loss, norm2) = objective_parts(&out.net, &ds, &cfg)?;
        println!(
            "lambda {lambda:.0e}: certificate {cert:.4}  J {j:.4} (loss {loss:.4}, |theta|^2 {norm2:.1})  restart {}",
            out.best_restart
        );
        assert!(j <= cert);
    }
    Ok(())
}
