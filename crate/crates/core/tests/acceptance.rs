use llt_core::verify::{run_criterion, CRITERIA};
use std::time::{Duration, Instant};

const SEED: u64 = 20240;

fn budget(id: u8) -> Option<Duration> {
    let secs = match id {
        1 => 1,
        3 => 30,
        4 => 60,
        5 => 10,
        10 => 300,
        _ => return None,
    };
    Some(Duration::from_secs(secs))
}

fn main() {
    let mut failures = Vec::new();
    for id in 1..=10u8 {
        let start = Instant::now();
        let outcome = run_criterion(id, SEED);
        let elapsed = start.elapsed();
        let (ok, detail) = match &outcome {
            Ok(r) => (r.passed(), format!("margin {:.3e}", r.margin)),
            Err(e) => (false, format!("error: {e}")),
        };
        let in_time = budget(id).is_none_or(|b| elapsed <= b);
        let pass = ok && in_time;
        println!(
            "criterion {id:>2} {:<24} {} ({detail}, {:.2}s{})",
            CRITERIA[id as usize - 1],
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over budget" }
        );
        if !pass {
            failures.push(id);
        }
    }
    if !failures.is_empty() {
        eprintln!("failing criteria: {failures:?}");
        std::process::exit(1);
    }
}
