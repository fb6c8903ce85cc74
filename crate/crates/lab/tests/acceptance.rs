//! Runs every acceptance criterion and prints one PASS/FAIL line each.

use std::thread;

use pencil_lab::checks::{self, CRITERIA};

fn main() {
    // `cargo test -- <filter>` passes extra arguments; honour criterion filters like `c4`
    let filters: Vec<u8> = std::env::args().skip(1).filter_map(|a| checks::parse_target(&a)).collect();
    let ids: Vec<u8> = CRITERIA
        .iter()
        .map(|c| c.0)
        .filter(|id| filters.is_empty() || filters.contains(id))
        .collect();
    let handles: Vec<_> = ids.into_iter().map(|id| thread::spawn(move || checks::run(id))).collect();
    let outcomes: Vec<_> = handles.into_iter().map(|h| h.join().expect("criterion panicked")).collect();
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
