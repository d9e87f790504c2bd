//! Compares a static HMM with gradual FLDA self-training on records whose
//! channel means drift in opposite directions after the baseline.

use eventseg::eval::{realization_matrix, realization_rows, score_dense, TrialMetrics};
use eventseg::flda::{gradual_self_train, AdaptationSchedule, SelfTrainParams};
use eventseg::hmm::{self, HmmConfig, SleepRule};
use eventseg::labels::{LabelSequence, Tag};
use eventseg::sessions::smooth_labels;
use eventseg::simgen::{self, Scenario, SimConfig};

fn main() -> eventseg::Result<()> {
    let seeds = 0..8u64;
    let mut scores: [Vec<TrialMetrics>; 2] = [Vec::new(), Vec::new()];
    for seed in seeds.clone() {
        let r = simgen::generate(&SimConfig::for_scenario(Scenario::UnstablePlusMinus).with_seed(seed))?;
        let rows = realization_rows(&r, &[1]);
        let n0 = r.time_hours.iter().take_while(|&&t| t < 36.0).count();
        let fit = hmm::fit_em(&rows[..n0], &HmmConfig::default())?;
        let matrix = realization_matrix(&rows, r.step_hours);
        let smooth = |labels: &[u8]| {
            let seq = LabelSequence::from_labels(matrix.epoch_length, 0.0, labels, Tag::Flda);
            smooth_labels(&seq, 9, 60.0).dense(0)
        };

        let static_labels = hmm::map_states_to_events(&fit.model, &hmm::decode(&fit.model, &rows)?, SleepRule::default())?;

        let base = hmm::map_states_to_events(&fit.model, &hmm::decode(&fit.model, &rows[..n0])?, SleepRule::default())?;
        let mut baseline = LabelSequence::empty(matrix.epoch_length, matrix.starts(), Tag::Missing);
        for (i, &l) in base.iter().enumerate() {
            baseline.set(i, l, Tag::HmmBaseline);
        }
        let schedule = AdaptationSchedule::hourly(36.0, 3.0, 12, 60);
        let st = gradual_self_train(&matrix, &[0, 1], &baseline, &schedule, SelfTrainParams::default())?;
        if seed == 0 {
            let chosen: Vec<String> = st
                .batches
                .iter()
                .take(12)
                .map(|b| b.chosen_length.map_or("-".into(), |d| format!("{:.0}", d / 3600.0)))
                .collect();
            println!("seed 0 training window (h) for the first batches: {}", chosen.join(" "));
        }

        let post = n0..r.len();
        for (k, labels) in [smooth(&static_labels), smooth(&st.labels.dense(0))].iter().enumerate() {
            scores[k].push(score_dense(&labels[post.clone()], &r.truth[post.clone()], r.step_hours)?);
        }
    }
    let n = seeds.count() as f64;
    for (name, s) in ["static HMM", "self-trained"].iter().zip(&scores) {
        let mean = |f: fn(&TrialMetrics) -> Option<f64>| s.iter().filter_map(f).sum::<f64>() / n;
        println!(
            "{name:13} accuracy {:.4}  onset diff {:.2} h  duration diff {:.2} h",
            mean(|m| Some(m.accuracy)),
            mean(|m| m.onset_diff),
            mean(|m| m.duration_diff)
        );
    }
    Ok(())
}
