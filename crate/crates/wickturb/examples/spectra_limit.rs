//! Order-1 energy spectra: finite-lattice sums at lattice time `t L^α` approach the
//! kinetic-limit resonant integral as `L` grows.

use std::f64::consts::PI;
use wickturb::combinatorics::enumerate_regular_couples;
use wickturb::spectra::{spectrum_sweep, InitialProfile, QuadratureSpec};

fn main() -> wickturb::Result<()> {
    let profile = InitialProfile::gaussian(3, 1.0, PI);
    let q = QuadratureSpec { radial: 16, angular: 8, kmax: 2.0, ..Default::default() };
    let ks = vec![vec![0.0, 0.0, 0.0], vec![0.5, 0.0, 0.0]];
    println!("couple,L,k,finite_L,kinetic_limit,abs_error");
    for c in enumerate_regular_couples(1)? {
        for r in spectrum_sweep(&c, 0.5, &ks, &[2.0, 4.0, 8.0], 2.0, 1.0, &profile, &q)? {
            println!("{},{},{:?},{:.6e},{:.6e},{:.3e}", r.couple, r.l, r.k, r.value, r.reference, r.error);
        }
    }
    Ok(())
}
