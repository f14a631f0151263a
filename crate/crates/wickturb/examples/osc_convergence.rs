//! Riemann-sum convergence of the oscillatory lattice functional toward its
//! continuum limit, plus the localization of profiles that vanish at s = 0.

use wickturb::oscillatory::{
    convergence_sweep, osc_functional, scale_theta, Scale, SeparableTestFunction, TemporalProfile,
};

fn main() -> wickturb::Result<()> {
    let phi = SeparableTestFunction::gaussian(1, 3, TemporalProfile::Gaussian);
    let ls = [4.0, 8.0, 16.0, 32.0];
    println!("L,alpha,value_re,value_im,reference,abs_error");
    for alpha in [0.5, 1.0] {
        for r in convergence_sweep(&phi, &ls, alpha)? {
            println!("{},{},{:.10},{:.3e},{:.10},{:.3e}", r.l, r.alpha, r.value_re, r.value_im, r.reference, r.abs_error);
        }
    }
    let vanishing = SeparableTestFunction::gaussian(1, 3, TemporalProfile::GaussianS2);
    println!("\nlocalization (temporal profile s^2 e^(-pi s^2), alpha = 1)");
    for l in ls {
        let v = osc_functional(&scale_theta(&vanishing, l, 1.0), Scale::Infinite, 1, 3)?;
        println!("L = {l:>4}: S_inf(theta_L phi) = {:.6e}", v.re);
    }
    Ok(())
}
