//! Runs the built-in oracle checks and prints a summary per check kind.
//!
//! `cargo run --example verify`

use lowrank::oracle::{run_suite, SuiteCfg};

fn main() -> lowrank::Result<()> {
    let results = run_suite(&SuiteCfg::default())?;
    let mut kinds: Vec<&str> = results.iter().map(|r| r.name.as_str()).collect();
    kinds.dedup();
    for kind in kinds {
        let of_kind: Vec<_> = results.iter().filter(|r| r.name == kind).collect();
        let passed = of_kind.iter().filter(|r| r.pass).count();
        let worst = of_kind.iter().map(|r| r.measured).fold(f64::NEG_INFINITY, f64::max);
        println!("{kind:<18} {passed}/{} pass, worst measured {worst:.3e}", of_kind.len());
    }
    for r in results.iter().filter(|r| !r.pass) {
        println!("FAIL {}: {}", r.name, r.context);
    }
    Ok(())
}
