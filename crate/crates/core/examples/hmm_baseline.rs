//! Fits a two-state Gaussian HMM to the first 36 hours of a simulated
//! record and labels sleep as the state with the lower channel-1 mean.

use eventseg::eval::{realization_rows, score_dense};
use eventseg::hmm::{self, HmmConfig, SleepRule};
use eventseg::simgen::{self, Scenario, SimConfig};

fn main() -> eventseg::Result<()> {
    let r = simgen::generate(&SimConfig::for_scenario(Scenario::Stable).with_seed(5))?;
    let rows = realization_rows(&r, &[1]);
    let n0 = r.time_hours.iter().take_while(|&&t| t < 36.0).count();
    let baseline = &rows[..n0];

    let fit = hmm::fit_em(baseline, &HmmConfig::default())?;
    let trace = &fit.log_likelihood_trace;
    println!(
        "EM: {} iterations, log-likelihood {:.2} -> {:.2}, converged {}",
        trace.len(),
        trace[0],
        fit.log_likelihood(),
        fit.converged
    );
    for (k, m) in fit.model.means.iter().enumerate() {
        println!("state {k}: mean x1 {:.2}, ln x2 {:.3}", m[0], m[1]);
    }

    let decoded = hmm::decode(&fit.model, baseline)?;
    let labels = hmm::map_states_to_events(&fit.model, &decoded, SleepRule::default())?;
    let m = score_dense(&labels, &r.truth[..n0], r.step_hours)?;
    println!("baseline accuracy {:.4}, F1 {:.4}", m.accuracy, m.f1.unwrap_or(f64::NAN));
    Ok(())
}
