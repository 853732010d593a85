//! Signed scalar labels and vector-valued labels.

use relu_forge::memorize::{
    build_signed_memorizer, build_vector_memorizer, verify_memorization, LabeledDataset, Labels,
};

fn main() -> relu_forge::Result<()> {
    let points: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();

    let signed = LabeledDataset::new(points.clone(), Labels::Real(vec![-2.0, 3.0, -2.0, 0.5, 3.0, -1.25]))?;
    let (net, _) = build_signed_memorizer(&signed, 1)?;
    let rep = verify_memorization(&net, &signed, 1e-6)?;
    println!("signed: depth {} width {} max error {:.2e}", net.depth(), net.width(), rep.max_abs_error);

    let targets: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 % 2.0, 1.0 + (i % 3) as f64, 0.25]).collect();
    let vector = LabeledDataset::new(points, Labels::Vector(targets))?;
    let net = build_vector_memorizer(&vector, 1)?;
    let rep = verify_memorization(&net, &vector, 1e-6)?;
    println!("vector: depth {} width {} outputs {} max error {:.2e}", net.depth(), net.width(), net.output_dim(), rep.max_abs_error);
    for x in &vector.points {
        println!("  {:?} -> {:.4?}", x, net.forward(x)?);
    }
    Ok(())
}
