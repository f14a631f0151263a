//! Tree and couple counts against their closed forms, and the factorization of a
//! few order-2 couples into irreducible pieces.

use wickturb::combinatorics::{
    couple_count, enumerate_couples, enumerate_regular_couples, enumerate_trees, irreducible_factorization,
    regular_couple_count, regular_decompose, ternary_catalan,
};

fn main() -> wickturb::Result<()> {
    println!("n,trees,catalan,regular_couples,formula,couples,formula");
    for n in 0..=4 {
        let couples = if n <= 3 { enumerate_couples(n)?.len().to_string() } else { "-".into() };
        println!(
            "{n},{},{},{},{},{couples},{}",
            enumerate_trees(n, 1)?.len(),
            ternary_catalan(n),
            enumerate_regular_couples(n)?.len(),
            regular_couple_count(n),
            couple_count(n)
        );
    }

    let all = enumerate_couples(2)?;
    let mut shown = 0;
    for c in all.iter().filter(|c| irreducible_factorization(c).regular_index > 0).take(3) {
        let f = irreducible_factorization(c);
        println!("\n{c}\n  regular index {}, {} factor(s):", f.regular_index, f.factors.len());
        for (i, fac) in f.factors.iter().enumerate() {
            println!("    [{i}] {} (attached to {:?})", fac.couple, fac.parent);
        }
        shown += 1;
    }
    let reg = &enumerate_regular_couples(2)?[5];
    let (sigma, [q1, q2, q3]) = regular_decompose(reg)?;
    println!("\nregular {reg}\n  = product with sign {sigma} of\n    {q1}\n    {q2}\n    {q3}");
    println!("\nshowed {shown} non-regular couples out of {}", all.len());
    Ok(())
}
