//! Nearest-neighbour label agreement on a one-dimensional axis.
//!
//! Both the projection-distance separability index used to pick training
//! windows and the sleep/wake separability index used for feature selection
//! reduce to the same question: what fraction of points share a label with
//! their nearest neighbour (self excluded)? On a line the nearest neighbour
//! is always an adjacent distinct value (or a duplicate), so sorting once
//! gives an `O(n log n)` count.
//!
//! Ties in distance go to the neighbour with the lowest original index.

/// Result of a nearest-neighbour agreement count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    /// Fraction of points whose nearest neighbour carries the same label.
    pub value: f64,
    /// Every value is identical, so neighbours were chosen purely by the
    /// tie-break rule.
    pub degenerate: bool,
}

/// Index of the nearest neighbour of every point under `|a - b|`.
///
/// Returns `None` for fewer than two points.
pub fn nearest_neighbors(values: &[f64]) -> Option<Vec<usize>> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));

    // Runs of equal values, with the two smallest original indices of each.
    struct Run {
        value: f64,
        first: usize,
        second: Option<usize>,
    }
    let mut runs: Vec<Run> = Vec::new();
    let mut run_of = vec![0usize; n];
    for &i in &order {
        match runs.last_mut() {
            Some(run) if run.value == values[i] => {
                // `order` is sorted by index within a run.
                if run.second.is_none() {
                    run.second = Some(i);
                }
            }
            _ => runs.push(Run {
                value: values[i],
                first: i,
                second: None,
            }),
        }
        run_of[i] = runs.len() - 1;
    }

    let mut nn = vec![0usize; n];
    for i in 0..n {
        let r = run_of[i];
        let run = &runs[r];
        if let Some(second) = run.second {
            nn[i] = if run.first == i { second } else { run.first };
            continue;
        }
        let left = r.checked_sub(1).map(|l| ((values[i] - runs[l].value).abs(), runs[l].first));
        let right = runs
            .get(r + 1)
            .map(|next| ((values[i] - next.value).abs(), next.first));
        nn[i] = match (left, right) {
            (Some((dl, il)), Some((dr, ir))) => {
                if dl < dr {
                    il
                } else if dr < dl {
                    ir
                } else {
                    il.min(ir)
                }
            }
            (Some((_, il)), None) => il,
            (None, Some((_, ir))) => ir,
            (None, None) => unreachable!("n >= 2 implies a second run"),
        };
    }
    Some(nn)
}

/// Fraction of points whose nearest neighbour shares their label.
pub fn agreement(values: &[f64], labels: &[u8]) -> Option<Agreement> {
    assert_eq!(values.len(), labels.len(), "values and labels must align");
    let nn = nearest_neighbors(values)?;
    let agree = nn
        .iter()
        .enumerate()
        .filter(|&(i, &j)| (labels[i] + labels[j] + 1) % 2 == 1)
        .count();
    let degenerate = values.iter().all(|v| *v == values[0]);
    Some(Agreement {
        value: agree as f64 / values.len() as f64,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_nn(values: &[f64]) -> Vec<usize> {
        (0..values.len())
            .map(|i| {
                let mut best = usize::MAX;
                let mut best_d = f64::INFINITY;
                for j in 0..values.len() {
                    if j == i {
                        continue;
                    }
                    let d = (values[i] - values[j]).abs();
                    if d < best_d {
                        best_d = d;
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    #[test]
    fn duplicates_prefer_lowest_index() {
        let nn = nearest_neighbors(&[1.0, 5.0, 1.0, 1.0]).unwrap();
        assert_eq!(nn, vec![2, 0, 0, 0]);
    }

    #[test]
    fn equidistant_neighbours_prefer_lowest_index() {
        // Point 1 at 2.0 is equidistant from 1.0 (index 2) and 3.0 (index 0).
        let nn = nearest_neighbors(&[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(nn[1], 0);
    }

    #[test]
    fn identical_values_are_degenerate() {
        let a = agreement(&[2.0; 4], &[0, 1, 0, 1]).unwrap();
        assert!(a.degenerate);
        // Everyone's neighbour is index 0, and index 0's is index 1.
        assert_eq!(a.value, 0.25);
    }

    #[test]
    fn single_point_has_no_neighbour() {
        assert!(agreement(&[1.0], &[0]).is_none());
    }

    proptest! {
        #[test]
        fn matches_brute_force(values in proptest::collection::vec(-5i32..5, 2..40)) {
            // Small integer grid forces plenty of exact ties.
            let values: Vec<f64> = values.into_iter().map(f64::from).collect();
            prop_assert_eq!(nearest_neighbors(&values).unwrap(), brute_force_nn(&values));
        }
    }
}
