//! Scores every epoch feature of several wearable subjects with the
//! sleep/wake separability index and keeps the consistent ones.

use eventseg::ingest::{epochize, select_features, SelectionCriteria};
use eventseg::simgen::{self, WearableConfig};

fn main() -> eventseg::Result<()> {
    let subjects = (0..6u64)
        .map(|s| {
            let series = simgen::wearable(&WearableConfig { seed: 100 + s, ..Default::default() }, &format!("s{s}"))?;
            epochize(&series, 600.0, 0.9)
        })
        .collect::<eventseg::Result<Vec<_>>>()?;
    let refs: Vec<_> = subjects.iter().collect();
    let selection = select_features(&refs, &SelectionCriteria::default())?;
    for f in &selection.report {
        let vals: Vec<String> = f.per_subject.iter().map(|v| v.map_or("-".into(), |x| format!("{x:.2}"))).collect();
        println!("{:9} pass {:.2}  [{}]", f.feature, f.pass_fraction, vals.join(" "));
    }
    println!("selected: {:?}", selection.selected);
    println!("dropped as correlated: {:?}", selection.dropped_correlated);
    Ok(())
}
