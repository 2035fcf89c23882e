//! Finite-difference check of every backward rule across several seeds.
//!
//! `cargo run --release --example gradient_check -- [--double] [seeds]`

use tempseg::gradcheck::{finite_difference_check_in, tolerance, DEFAULT_EPSILON, PRIMITIVES};
use tempseg::tensor::Precision;

fn main() -> tempseg::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let precision = if args.iter().any(|a| a == "--double") {
        Precision::Double
    } else {
        Precision::Single
    };
    let seeds: u64 = args.iter().find_map(|a| a.parse().ok()).unwrap_or(10);
    println!("{precision:?} precision, seeds 1..={seeds}");
    println!("{:<18} {:>12} {:>10}", "primitive", "worst error", "tolerance");
    for &p in PRIMITIVES {
        let mut worst = 0.0f64;
        for seed in 1..=seeds {
            worst = worst.max(finite_difference_check_in(p, seed, DEFAULT_EPSILON, precision)?);
        }
        let flag = if worst < tolerance(p) { "" } else { "  FAIL" };
        println!("{p:<18} {worst:>12.3e} {:>10.0e}{flag}", tolerance(p));
    }
    Ok(())
}
