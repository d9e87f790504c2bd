//! Nearest-neighbour label agreement on separable and overlapping samples,
//! and the projected index used to pick training windows.

use eventseg::flda::{fisher_weights, separability_index};
use eventseg::separability::agreement;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> eventseg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 200;
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();

    let separable: Vec<f64> = labels.iter().map(|&y| f64::from(y) * 10.0 + i_noise(&mut rng, 1.0)).collect();
    let overlapping: Vec<f64> = labels.iter().map(|_| i_noise(&mut rng, 1.0)).collect();
    for (name, v) in [("separable", &separable), ("overlapping", &overlapping)] {
        let a = agreement(v, &labels).expect("two or more points");
        println!("{name:12} SI {:.3}", a.value);
    }

    let x: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| vec![f64::from(y) + i_noise(&mut rng, 0.6), f64::from(y) * 0.5 + i_noise(&mut rng, 0.6)])
        .collect();
    let (train, test) = x.split_at(n / 2);
    let (ytr, yte) = labels.split_at(n / 2);
    let w = fisher_weights(train, ytr, None)?;
    let si = separability_index(train, ytr, test, yte, &w).expect("defined");
    println!("projected SI of a 2-D sample along w = [{:.3}, {:.3}]: {si:.3}", w[0], w[1]);
    Ok(())
}

fn i_noise(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    Normal::new(0.0, sd).unwrap().sample(rng)
}
