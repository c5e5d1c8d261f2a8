//! Steps the zero-sum selector on two hand-made layers and prints the trace.
//!
//! `cargo run --example zero_sum_select`

use lowrank::select::{BudgetMode, LayerProfile, SelectionState};

fn main() -> lowrank::Result<()> {
    let profiles = vec![
        LayerProfile::new(0, 6, 4, vec![4.0, 3.0, 2.0, 1.0], vec![0.30, -0.20, 0.10, 0.05])?,
        LayerProfile::new(1, 5, 5, vec![5.0, 2.5, 1.5, 0.8, 0.2], vec![-0.40, 0.02, -0.03, 0.01, -0.01])?,
    ];
    let mut state = SelectionState::new(profiles, BudgetMode::standard(), 0.5)?;
    println!("budget {}", state.budget_total);
    println!("layer\tcomp\tdl\theap\ts\tcost\tb");
    while !state.budget_met() {
        let Some(r) = state.step() else { break };
        println!(
            "{}\t{}\t{:+.2}\t{:?}\t{:+.2}\t{}\t{}",
            r.layer_id, r.comp, r.dl, r.heap, r.s_after, r.cost, r.b_after
        );
    }
    let a = state.run();
    println!("ranks {:?}, drift {:+.3}, exhausted {}", a.ranks(), a.predicted_drift, a.exhausted);
    Ok(())
}
