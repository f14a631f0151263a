//! Closed-form time-ordered kernels: volume at zero frequency, agreement with direct
//! nested quadrature, and decay in the frequencies.

use wickturb::quad::gauss_legendre_on;
use wickturb::timeorder::{decay_bound, linear_extension_count, theta, OrderedForest};
use num_complex::Complex64;
use std::f64::consts::PI;

fn nested(g: &OrderedForest, om: &[f64], i: usize, upper: f64) -> Complex64 {
    gauss_legendre_on(40, 0.0, upper)
        .into_iter()
        .map(|(s, w)| g.children(i).iter().fold(Complex64::from_polar(w, 2.0 * PI * s * om[i]), |v, &c| v * nested(g, om, c, s)))
        .sum()
}

fn main() -> wickturb::Result<()> {
    // 0 → {1, 2}, 1 → 3
    let g = OrderedForest::new(vec![None, Some(0), Some(0), Some(1)])?;
    let v0 = theta(&g, &[0.0; 4])?.eval(1.0);
    println!("volume: theta = {:.15}, e(G)/n! = {:.15}", v0.re, linear_extension_count(&g) as f64 / 24.0);

    let om = [0.7, -1.3, 0.4, 2.1];
    let exact = theta(&g, &om)?.eval(1.5);
    let quad = nested(&g, &om, 0, 1.5);
    println!("omega = {om:?}, t = 1.5: closed form {exact:.12}, quadrature {quad:.12}");

    println!("\nscale,|theta|,bound");
    for s in [1.0, 4.0, 16.0, 64.0] {
        let w: Vec<f64> = om.iter().map(|x| x * s).collect();
        println!("{s},{:.4e},{:.4e}", theta(&g, &w)?.eval(1.0).norm(), decay_bound(&g, &w, 1.0)?);
    }
    Ok(())
}
