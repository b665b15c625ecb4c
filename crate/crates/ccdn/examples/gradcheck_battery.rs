//! Finite-difference audit of every differentiable primitive and of the
//! composite chains (attention, decorrelation, fusing, full model).
//!
//! Usage: cargo run --release --example gradcheck_battery [trials] [seed]

use ccdn::gradcheck::{battery, BATTERY_EPS};

fn main() {
    let mut args = std::env::args().skip(1);
    let trials: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    println!("central differences, eps {BATTERY_EPS:.0e}, {trials} random trials per row\n");
    println!("{:<22} {:>11} {:>9}", "check", "max rel err", "tol");

    let rows = battery(trials, seed).expect("battery run failed");
    let mut failed = 0;
    for row in &rows {
        println!("{row}");
        if !row.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("\n{failed} of {} checks FAILED", rows.len());
        std::process::exit(1);
    }
    println!("\nall {} checks passed", rows.len());
}
