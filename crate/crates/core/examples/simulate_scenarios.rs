//! Draws one realization per scenario and prints per-pair channel means,
//! showing the drift that follows the baseline.

use eventseg::simgen::{self, Scenario, SimConfig};

fn main() -> eventseg::Result<()> {
    let dir = std::env::temp_dir().join("eventseg_scenarios");
    std::fs::create_dir_all(&dir)?;
    for scenario in Scenario::ALL {
        let config = SimConfig::for_scenario(scenario).with_seed(11);
        let r = simgen::generate(&config)?;
        println!("{scenario}: {} epochs, apex pair {}", r.len(), r.apex);
        for b in r.blocks.iter().take(8) {
            let state = if b.state == 1 { "sleep" } else { "wake " };
            println!(
                "  pair {:2} {state} {:6.1}-{:6.1} h  x1 {:6.2}  x2 {:.3}",
                b.pair, b.start_hours, b.end_hours, b.trend_means[0], b.trend_means[1]
            );
        }
        let name = scenario.as_str().replace("++", "_pp").replace("+-", "_pm");
        let path = dir.join(format!("{name}.csv"));
        r.write_csv(&path)?;
    }
    println!("realizations in {}", dir.display());
    Ok(())
}
