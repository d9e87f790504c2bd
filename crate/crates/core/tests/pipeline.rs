use eventseg::config::PipelineConfig;
use eventseg::pipeline;
use eventseg::simgen::{self, Scenario, SimConfig, WearableConfig};

#[test]
fn raw_multi_subject_run() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    std::fs::create_dir_all(&raw).unwrap();
    for s in 0..5u64 {
        let cfg = WearableConfig {
            seed: 10 + s,
            not_worn: (s < 3).then_some((40.0, 43.0)),
            missing_rate: 0.002,
            ..Default::default()
        };
        simgen::wearable(&cfg, "x").unwrap().write_csv(&raw.join(format!("s{s}.csv"))).unwrap();
    }
    let config = PipelineConfig::default();
    let records = pipeline::input_files(&raw)
        .unwrap()
        .iter()
        .map(|f| pipeline::load_record(f, &config))
        .collect::<eventseg::Result<Vec<_>>>()
        .unwrap();
    assert_eq!(records[0].epochs.feature_names.len(), 12);
    let run = pipeline::run(records, &config).unwrap();

    let selection = run.selection.as_ref().expect("raw records go through SWSI");
    assert!(selection.selected.iter().any(|f| f.starts_with("HR_") || f.starts_with("TEMP_")));
    assert!(!selection.selected.iter().any(|f| f.starts_with("EDA_")));
    assert!(run.rejected.is_empty());

    for (p, seg) in &run.subjects {
        let seg = seg.as_ref().unwrap();
        let report = p.screening.as_ref().expect("HR and TEMP present");
        let excluded = report.excluded();
        // Epochs starting inside the not-worn block, 40 h to 43 h.
        let off: Vec<usize> = (240..258).collect();
        if p.record.id() < "s3" {
            let caught = off.iter().filter(|&&i| excluded[i]).count();
            assert!(caught >= 15, "{}: {caught}", p.record.id());
        }
        let share = excluded.iter().filter(|&&x| x).count() as f64 / excluded.len() as f64;
        assert!(share < 0.1, "{share}");

        // Labels follow the 23:00-07:00 schedule away from transitions.
        let mut agree = 0;
        let mut total = 0;
        for (i, &start) in seg.labels.starts.iter().enumerate() {
            let h = (start / 3600.0).rem_euclid(24.0);
            let clear = (h - 23.0).abs() > 0.5 && (h - 7.0).abs() > 0.5 && !(40.0..43.0).contains(&(start / 3600.0));
            if let (true, Some(l)) = (clear, seg.labels.labels[i]) {
                total += 1;
                agree += usize::from((l == 1) == !(7.0..23.0).contains(&h));
            }
        }
        assert!(agree as f64 / total as f64 > 0.95, "{}: {agree}/{total}", p.record.id());
    }

    let table = run.feature_table().unwrap();
    assert_eq!(table.columns.len(), 196);
    let out = dir.path().join("out");
    pipeline::write_outputs(&run, &out).unwrap();
    for s in 0..5 {
        let abnormal = std::fs::read_to_string(out.join(format!("s{s}")).join("abnormal.csv")).unwrap();
        assert!(abnormal.starts_with("epoch_start,flagged,category,reinserted\n"));
    }
    assert!(out.join("features.csv").exists());
}

#[test]
fn simulated_stable_record_segments_accurately() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stable.csv");
    simgen::generate(&SimConfig::for_scenario(Scenario::Stable).with_seed(8))
        .unwrap()
        .write_csv(&path)
        .unwrap();
    let config = PipelineConfig::default();
    let record = pipeline::load_record(&path, &config).unwrap();
    assert!(record.is_simulated());
    let run = pipeline::run(vec![record], &config).unwrap();
    assert_eq!(run.features, ["x1", "x2"]);
    let summary = &run.summaries()[0];
    assert!(summary.accuracy.unwrap() > 0.98, "{summary:?}");
}
