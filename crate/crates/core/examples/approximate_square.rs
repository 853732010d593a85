//! L2 approximation of x^2 on [0, 1] at shrinking grid sizes.

use relu_forge::approximate::{build_approximator, lp_error, Target};

fn main() -> relu_forge::Result<()> {
    let target = Target::square();
    for h in [0.2, 0.1, 0.05, 0.025] {
        let approx = build_approximator(&target, h, 2.0, 0)?;
        let err = lp_error(&approx.net, &target, 2.0, 20_000, 1)?;
        println!(
            "h {h:<6} cells {:>3}  depth {:>4}  width {}  L2 error {:.4} ± {:.4}",
            approx.simple.grid.n_cells(),
            approx.net.depth(),
            approx.net.width(),
            err.value,
            err.stderr
        );
    }
    Ok(())
}
