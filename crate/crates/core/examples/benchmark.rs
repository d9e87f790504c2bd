//! Runs the simulation benchmark for every scenario.
//!
//! Usage: `benchmark [realizations] [repeats]` (defaults 10 and 1).

use eventseg::eval::{run_benchmark, BenchmarkConfig, Method, METRICS};
use eventseg::simgen::{Scenario, SimConfig};

fn main() -> eventseg::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>());
    let n_realizations = args.next().transpose().map_err(|e| eventseg::Error::Config(e.to_string()))?.unwrap_or(10);
    let n_repeats = args.next().transpose().map_err(|e| eventseg::Error::Config(e.to_string()))?.unwrap_or(1);
    let config = BenchmarkConfig {
        n_realizations,
        n_repeats,
        ..Default::default()
    };
    for scenario in Scenario::ALL {
        let start = std::time::Instant::now();
        let report = run_benchmark(&SimConfig::for_scenario(scenario), &config)?;
        println!("{scenario} ({:.1} s)", start.elapsed().as_secs_f64());
        for (method, rep) in &report.methods {
            let cells: Vec<String> = METRICS
                .iter()
                .map(|k| format!("{k} {:.4}", rep.mean(k).unwrap_or(f64::NAN)))
                .collect();
            println!("  {:9} failed {}  {}", method.as_str(), rep.n_failed, cells.join("  "));
        }
        for metric in ["accuracy", "f1", "duration_diff"] {
            if let Some(t) = report.comparison(metric, Method::Hmm).and_then(|c| c.test) {
                println!("  proposed vs hmm on {metric}: p = {:.2e}", t.p_value);
            }
        }
    }
    Ok(())
}
