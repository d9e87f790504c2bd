//! Smooths an epoch label stream, splits it into day-aligned sessions and
//! builds the per-day feature table.

use eventseg::ingest::epochize;
use eventseg::labels::{LabelSequence, Tag};
use eventseg::sessions::{build_sessions, session_features, smooth_labels, DayRules};
use eventseg::simgen::{self, WearableConfig};

fn main() -> eventseg::Result<()> {
    let cfg = WearableConfig { seed: 3, ..Default::default() };
    let epochs = epochize(&simgen::wearable(&cfg, "demo")?, 600.0, 0.9)?;

    // Ground-truth labels with a flipped epoch every 7 to mimic classifier noise.
    let noisy: Vec<u8> = epochs
        .epochs
        .iter()
        .enumerate()
        .map(|(i, e)| u8::from(cfg.is_asleep(e.start)) ^ u8::from(i % 7 == 3))
        .collect();
    let labels = LabelSequence::from_labels(epochs.epoch_length, 0.0, &noisy, Tag::Flda);
    let smooth = smooth_labels(&labels, 9, 60.0);
    let rules = DayRules::default();
    let sessions = build_sessions(&smooth, &[], rules);
    for s in &sessions {
        println!("day {} {:5} {:5.1}-{:5.1} h", s.day, s.kind.as_str(), s.start / 3600.0, s.end / 3600.0);
    }

    let table = session_features(&sessions, &epochs, rules);
    println!("{} columns", table.columns.len());
    for name in ["night_duration", "onset", "offset", "HR_MED.mean.sleep", "TEMP_MED.linear.coef1.wake"] {
        let vals: Vec<String> = table
            .rows
            .iter()
            .map(|r| table.column_index(name).and_then(|j| r.values[j]).map_or("-".into(), |v| format!("{v:.2}")))
            .collect();
        println!("{name:28} {}", vals.join("  "));
    }
    Ok(())
}
