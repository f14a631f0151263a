//! WK on a radial grid with RK4 and with Picard iteration, then WK-2 against WK
//! from matched Gaussian data.

use std::f64::consts::PI;
use wickturb::kinetic::{marginalize_zeta, solve, KGrid, KineticState, Scheme, SolveOptions, ZGrid};
use wickturb::spectra::{InitialProfile, ResonantRule};

fn main() -> wickturb::Result<()> {
    let p = InitialProfile::gaussian(3, PI, PI);
    let rule = ResonantRule::new(3, 8, 4)?;

    let radial = KineticState::initial_w(KGrid::Radial { kmax: 2.5, n: 101 }, None, &p)?;
    let base = SolveOptions { t_end: 0.5, dt: 0.05, ..Default::default() };
    let rk = solve(&radial, &base, &rule)?.last();
    let pc = solve(&radial, &SolveOptions { scheme: Scheme::Picard, ..base.clone() }, &rule)?.last();
    println!("radial WK to t = 0.5");
    println!("r,W0,W_rk4,W_picard");
    for i in (0..=40).step_by(8) {
        println!("{:.3},{:.6e},{:.6e},{:.6e}", i as f64 * 2.5 / 100.0, radial.data[i], rk.data[i], pc.data[i]);
    }

    let k = KGrid::Cartesian { kmax: 1.5, m: 9 };
    let e0 = KineticState::initial_e(k, None, ZGrid { extent: 1.2, points: 9 }, &p)?;
    let w0 = marginalize_zeta(&e0)?;
    let small = ResonantRule::new(3, 4, 2)?;
    let opts = SolveOptions { t_end: 0.25, dt: 0.125, ..Default::default() };
    let e = marginalize_zeta(&solve(&e0, &opts, &small)?.last())?;
    let w = solve(&w0, &opts, &small)?.last();
    let dev = e.data.iter().zip(&w.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / w.sup_norm();
    println!("\nWK-2 marginal vs WK at t = 0.25: sup relative deviation {dev:.2e}");
    Ok(())
}
