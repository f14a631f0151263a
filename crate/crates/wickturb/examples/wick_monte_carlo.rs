//! Monte Carlo second moments of the first Dyson iterates against their diagrammatic
//! values on a small lattice.

use wickturb::decorations::LatticeSpec;
use wickturb::montecarlo::wick_crosscheck;
use wickturb::spectra::InitialProfile;

fn main() -> wickturb::Result<()> {
    let spec = LatticeSpec::new(2.0, 3, 2.0)?;
    let p = InitialProfile::gaussian(3, 1.0, 1.0);
    let (k, kp) = ([1i64, 0, 0], [0i64, 1, 1]);
    println!("n,n',same_k,estimate_re,estimate_im,stderr,target_re,z");
    for (n, np, b) in [(0, 0, k), (1, 1, k), (0, 1, k), (1, 1, kp)] {
        let r = wick_crosscheck(n, np, 1.0, &k, &b, &spec, 1.0, &p, 4000, 20261018)?;
        println!("{n},{np},{},{:.5e},{:.2e},{:.2e},{:.5e},{:.2}", b == k, r.estimate[0], r.estimate[1], r.stderr, r.target[0], r.z);
    }
    Ok(())
}
