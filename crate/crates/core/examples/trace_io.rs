//! Round-trip a network through its JSON file and dump per-stage snapshots.

use std::path::PathBuf;

use relu_forge::io::{self, NetworkMeta};
use relu_forge::memorize::{build_memorizer, LabeledDataset};

fn main() -> relu_forge::Result<()> {
    let points: Vec<Vec<f64>> = (0..8).map(|i| vec![(i % 4) as f64, (i / 4) as f64]).collect();
    let ds = LabeledDataset::classes(points, vec![0, 1, 2, 3, 3, 2, 1, 0])?;
    let (net, trace) = build_memorizer(&ds, 3)?;

    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("relu-forge-trace"));
    std::fs::create_dir_all(&dir)?;
    let net_path = dir.join("net.json");
    let data_path = dir.join("data.csv");
    io::save_network(&net_path, &net, NetworkMeta::new("memorizer", 3, Some(&trace)))?;
    std::fs::write(&data_path, io::dataset_to_csv(&ds))?;

    let (loaded, meta) = io::load_network(&net_path)?;
    assert_eq!(loaded, net);
    println!("{} round-trips with {} stages", net_path.display(), meta.stages.len());

    let files = io::cli_trace(&net_path, &data_path, &dir.join("stages"), &mut std::io::sink())?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}
