//! x^2 + y^2 on the unit disk, approximated on a 2D grid of its bounding box.

use relu_forge::approximate::{build_approximator, lp_error, Target};

fn main() -> relu_forge::Result<()> {
    let target = Target::paraboloid();
    for h in [0.5, 0.25] {
        let approx = build_approximator(&target, h, 2.0, 0)?;
        let err = lp_error(&approx.net, &target, 2.0, 20_000, 1)?;
        println!(
            "h {h}: {} cells, {} edge cells, {} distinct values, depth {}, width {}, L2 error {:.3}",
            approx.simple.grid.n_cells(),
            approx.n_edge,
            approx.simple.m_h,
            approx.net.depth(),
            approx.net.width(),
            err.value
        );
        for stage in &approx.trace.stages {
            println!("  {:<14} {:>4}..{}", stage.name, stage.start, stage.end);
        }
    }
    Ok(())
}
