//! L⁴ and L⁶ moments of quadratic Gauss sums over a period, normalized by their
//! expected growth.

use wickturb::oscillatory::gauss_sum_moment;

fn main() -> wickturb::Result<()> {
    println!("N,L4/(N^2 log(1+N)),L6/N^4");
    for e in 3..=7 {
        let n: u64 = 1 << e;
        let (nf, nn) = (n as f64, (n * n) as usize);
        let m4 = gauss_sum_moment(4, n, 0.0, 0, 2 * nn + 7)? / (nf * nf * (1.0 + nf).ln());
        let m6 = gauss_sum_moment(6, n, 0.0, 0, 3 * nn + 7)? / nf.powi(4);
        println!("{n},{m4:.4},{m6:.4}");
    }
    Ok(())
}
