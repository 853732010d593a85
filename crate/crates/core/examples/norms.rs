//! Calibrate parameter-norm envelopes on one regime and check held-out datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relu_forge::memorize::{build_memorizer, LabeledDataset};
use relu_forge::Network;
use relu_forge::norms::{calibrate, envelope_ratios, within_envelopes, CALIBRATION_MARGIN};

fn random_dataset(seed: u64, n: usize, m: usize) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let points: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let labels: Vec<usize> = (0..n).map(|i| if i < m { i } else { rng.gen_range(0..m) }).collect();
        if let Ok(ds) = LabeledDataset::classes(points, labels) {
            if relu_forge::geometry::min_pairwise_distance(&ds.points).map_or(false, |d| d.0 >= 0.05) {
                return ds;
            }
        }
    }
}

fn run(seed: u64) -> relu_forge::Result<(Network, LabeledDataset)> {
    let ds = random_dataset(seed, 20, 4);
    let (net, _) = build_memorizer(&ds, seed)?;
    Ok((net, ds))
}

fn main() -> relu_forge::Result<()> {
    let runs = (1000..1020).map(run).collect::<relu_forge::Result<Vec<_>>>()?;
    let cal = calibrate("d2_n20_m4_gap0.05", 0.05, &runs)?;
    println!("bare constants: C_l2 {:.3}  C_linf {:.3}", cal.c_l2, cal.c_linf);
    let cal = cal.with_margin(CALIBRATION_MARGIN);

    let mut inside = 0;
    for seed in 2000..2020 {
        let (net, ds) = run(seed)?;
        let (l2, linf) = envelope_ratios(&net, &ds)?;
        let (a, b) = within_envelopes(&cal, &net, &ds)?;
        inside += usize::from(a && b);
        println!("seed {seed}: ratio l2 {l2:.3} linf {linf:.3}");
    }
    println!("{inside}/20 held-out networks inside both envelopes");
    Ok(())
}
