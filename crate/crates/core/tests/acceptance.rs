use std::process::ExitCode;
use std::time::{Duration, Instant};

use elastlab::verify::{
    check_classification, check_dhom, check_distance_trend_closed_form, check_flows_rk4, check_gradients,
    check_last_layer_oracle, check_lemma, check_mlp_regression, check_quad_sgd, check_relu_bound, check_two_phase,
    Check, Effort,
};

type Criterion = (&'static str, &'static str, u64, fn() -> elastlab::Result<Vec<Check>>);

fn distance_trend() -> elastlab::Result<Vec<Check>> {
    let mut checks = check_distance_trend_closed_form()?;
    checks.extend(check_mlp_regression(Effort::Full)?.into_iter().filter(|c| c.name == "mlp_distance_profiles"));
    Ok(checks)
}

const CRITERIA: [Criterion; 10] = [
    ("1", "relu lower bound", 60, || check_relu_bound(Effort::Full)),
    ("2", "quadratic SGD vs closed form", 300, || check_quad_sgd(Effort::Full)),
    ("3", "closed-form flows vs RK4", 60, check_flows_rk4),
    ("4", "last-layer closed form vs generic", 30, || check_last_layer_oracle(100)),
    ("5", "d-hom limit and upper bound", 30, || check_dhom(100, 1000)),
    ("6", "two-phase last layer", 300, || check_two_phase(Effort::Full)),
    ("7", "distance trend", 600, distance_trend),
    ("8", "classification elasticity", 600, check_classification),
    ("9", "lemma lower bound", 30, || check_lemma(100)),
    ("10", "gradient correctness", 30, || check_gradients(20)),
];

/// Runs one criterion and prints its summary line followed by the checks.
fn report(id: &str, title: &str, budget: Duration, run: fn() -> elastlab::Result<Vec<Check>>) -> bool {
    let start = Instant::now();
    let checks = match run() {
        Ok(c) => c,
        Err(e) => {
            println!("FAIL criterion {id} {title}: error {e}");
            return false;
        }
    };
    let elapsed = start.elapsed();
    let ok = checks.iter().all(Check::passed) && elapsed <= budget;
    let parts: Vec<String> = checks
        .iter()
        .map(|c| format!("{} {} {:.4e} vs {:.4e}", if c.passed() { "ok" } else { "bad" }, c.name, c.measured, c.tolerance))
        .collect();
    println!(
        "{} criterion {id} {title}: {} [{:.1}s of {}s]",
        if ok { "PASS" } else { "FAIL" },
        parts.join("; "),
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    for c in &checks {
        println!("    {c}");
    }
    ok
}

fn main() -> ExitCode {
    // `cargo test -- <filter>` selects criteria by number or title substring.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (id, title, secs, run) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| f == id || title.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        if !report(id, title, Duration::from_secs(secs), run) {
            failed.push(id);
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
