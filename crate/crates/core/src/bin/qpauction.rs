use std::process::ExitCode;

use qpauction::cli::{execute, parse_args, Outcome};

fn summarize(outcome: &Outcome) {
    match outcome {
        Outcome::Settled(o) => eprintln!("revenue {}", o.revenue),
        Outcome::Dynamics(t) => eprintln!(
            "iterations {} residual {:e} converged {}{}",
            t.iterations,
            t.residual,
            t.converged,
            if t.rescued { " (rescued)" } else { "" }
        ),
        Outcome::Sweep(r) => {
            eprintln!("n={} rows={}", r.n, r.rows.len());
            eprintln!("revenue crossovers {:?}", r.summary.revenue_crossovers);
            eprintln!("bid-gap crossovers {:?}", r.summary.bid_gap_crossovers);
        }
        Outcome::Bounds(b) => {
            if !b.premise_ok {
                eprintln!("warning: bound premise fails for some bidder");
            }
            if b.degenerate {
                eprintln!("warning: fewer than two positive bounds");
            }
        }
        Outcome::Verified(r) => eprintln!(
            "samples {} violations {} worst margin {}",
            r.samples,
            r.violations,
            r.worst_margin
                .map_or("NA".to_string(), |m| format!("{m:e}"))
        ),
    }
}

fn main() -> ExitCode {
    let config = match parse_args(std::env::args_os()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match execute(&config) {
        Ok(outcome) => {
            summarize(&outcome);
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
