//! Runs the oracle catalog on its own, without the rest of the test suite.
//!
//! `cargo run --release -p lsq-core --example oracles [name...]`

use std::process::ExitCode;

use lsq_core::validation::{oracle, ORACLES};

fn main() -> ExitCode {
    let names: Vec<String> = std::env::args().skip(1).collect();
    let cases: Vec<_> = if names.is_empty() {
        ORACLES.iter().collect()
    } else {
        match names.iter().map(|n| oracle(n)).collect::<Result<Vec<_>, _>>() {
            Ok(cases) => cases,
            Err(e) => {
                eprintln!("{e}");
                return ExitCode::from(2);
            }
        }
    };
    let mut failed = 0;
    for case in cases {
        match case.run() {
            Ok(o) => {
                failed += usize::from(!o.passed);
                println!(
                    "{:<4} {:<32} expected {:<12} observed {:<12} tol {:<10} {}",
                    if o.passed { "ok" } else { "FAIL" },
                    o.name,
                    o.expected,
                    o.observed,
                    o.tolerance,
                    o.detail
                );
            }
            Err(e) => {
                failed += 1;
                println!("ERR  {:<32} {e}", case.name);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
