//! Quasi-resonant decoration counts for an order-1 couple in d = 3, normalized by
//! `L^{2d−α}`, as the window `|Ω| ≤ L^{−α}` tightens with `L`.

use wickturb::combinatorics::enumerate_regular_couples;
use wickturb::decorations::{count_quasi_resonant, LatticeSpec};

fn main() -> wickturb::Result<()> {
    let c = &enumerate_regular_couples(1)?[0];
    let (d, alpha, radius) = (3usize, 1.0, 0.5);
    println!("couple {c}, R = {radius}, alpha = {alpha}");
    println!("L,count,normalized");
    for l in [4.0f64, 8.0, 16.0] {
        let spec = LatticeSpec::new(l, d, radius)?;
        let n = count_quasi_resonant(c, &[0, 0, 0], &spec, &[(-1.0, 1.0)], l.powf(alpha))?;
        println!("{l},{n},{:.5}", n as f64 / l.powf(2.0 * d as f64 - alpha));
    }
    Ok(())
}
