//! Ranks features as predictors of a binary and an ordinal outcome with
//! leave-one-out logistic and continuation-ratio models.

use std::collections::HashMap;

use eventseg::outcomes::{rank_features, GlmOptions, OutcomeDataset, OutcomeKind};
use eventseg::sessions::{FeatureRow, SessionFeatureTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> eventseg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 30;
    let levels: Vec<u8> = (0..n).map(|i| [1, 2, 2, 3, 3, 3][i % 6]).collect();
    let table = SessionFeatureTable {
        columns: vec!["night_duration".into(), "HR_MED.mean.sleep".into(), "EDA_SD.sd.wake".into()],
        rows: levels
            .iter()
            .enumerate()
            .map(|(i, &y)| FeatureRow {
                subject: format!("s{i:02}"),
                day: 2,
                values: vec![
                    Some(8.5 - f64::from(y) + rng.random_range(-0.8..0.8)),
                    Some(56.0 + 2.0 * f64::from(y) + rng.random_range(-3.0..3.0)),
                    Some(rng.random_range(-2.0..0.0)),
                ],
            })
            .collect(),
    };
    let opts = GlmOptions::default();

    let ordinal: HashMap<String, u8> = table.rows.iter().zip(&levels).map(|(r, &y)| (r.subject.clone(), y)).collect();
    let ds = OutcomeDataset::from_feature_table(&table, 2, &ordinal, OutcomeKind::Ordinal { levels: 3 })?;
    println!("ordinal outcome (per-level AUC):");
    for r in rank_features(&ds, &ds.feature_names, &opts, None) {
        let aucs: Vec<String> = r.aucs.iter().map(|a| a.map_or("-".into(), |v| format!("{v:.3}"))).collect();
        println!("  {:20} {} coef {:+.3}  auc [{}]", r.feature, r.model.as_str(), r.coef.unwrap_or(f64::NAN), aucs.join(" "));
    }

    let binary: HashMap<String, u8> = ordinal.iter().map(|(s, &y)| (s.clone(), u8::from(y < 3))).collect();
    let ds = OutcomeDataset::from_feature_table(&table, 2, &binary, OutcomeKind::Binary)?;
    println!("binary outcome, plain and SMOTE-rebalanced:");
    let plain = rank_features(&ds, &ds.feature_names, &opts, None);
    let smote = rank_features(&ds, &ds.feature_names, &opts, Some((20, 1)));
    for r in &plain {
        let s = smote.iter().find(|s| s.feature == r.feature).and_then(|s| s.aucs[0]);
        println!(
            "  {:20} AUC {:.3}  SMOTE AUC {:.3}",
            r.feature,
            r.aucs[0].unwrap_or(f64::NAN),
            s.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
