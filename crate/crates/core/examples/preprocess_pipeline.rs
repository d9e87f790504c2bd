//! Raw wearable records through screening, gating, feature selection,
//! segmentation and the per-day session feature table.

use eventseg::config::PipelineConfig;
use eventseg::pipeline;
use eventseg::simgen::{self, WearableConfig};

fn main() -> eventseg::Result<()> {
    let dir = std::env::temp_dir().join("eventseg_preprocess");
    let raw = dir.join("raw");
    std::fs::create_dir_all(&raw)?;
    for s in 0..5u64 {
        let cfg = WearableConfig {
            seed: s,
            missing_rate: 0.002,
            not_worn: (s % 2 == 0).then_some((38.0 + s as f64, 41.0 + s as f64)),
            ..Default::default()
        };
        simgen::wearable(&cfg, &format!("s{s}"))?.write_csv(&raw.join(format!("s{s}.csv")))?;
    }

    let config = PipelineConfig::default();
    let records = pipeline::input_files(&raw)?
        .iter()
        .map(|f| pipeline::load_record(f, &config))
        .collect::<eventseg::Result<Vec<_>>>()?;
    println!("{} epoch features per subject", records[0].epochs.feature_names.len());

    let run = pipeline::run(records, &config)?;
    println!("selected features: {:?}", run.features);
    for (p, seg) in &run.subjects {
        let flagged = p.screening.as_ref().map_or(0, |r| r.excluded().iter().filter(|&&x| x).count());
        match seg {
            Ok(seg) => println!(
                "{}: {} flagged epochs, {} sessions",
                p.record.id(),
                flagged,
                seg.sessions.len()
            ),
            Err(e) => println!("{}: {e}", p.record.id()),
        }
    }
    if let Some(table) = run.feature_table() {
        println!("feature table: {} rows x {} columns", table.rows.len(), table.columns.len());
    }
    let out = dir.join("out");
    pipeline::write_outputs(&run, &out)?;
    println!("outputs in {}", out.display());
    Ok(())
}
