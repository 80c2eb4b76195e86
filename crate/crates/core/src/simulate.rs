//! Synthetic responses from a latent-distance response model,
//! `P(x_ki = 1) = logistic(β_i − ‖z_k − w_i‖)`.
//!
//! This is a test-data convention for recovery checks, not part of the
//! network model itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Response, ResponseMatrix};
use crate::error::{NirmError, Result};
use crate::model::logistic;
use crate::positions::{euclidean, Positions};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_persons: usize,
    pub n_items: usize,
    pub dim: usize,
    pub beta_mean: f64,
    pub beta_sd: f64,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_persons: 200,
            n_items: 20,
            dim: 2,
            beta_mean: 1.0,
            beta_sd: 1.5,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub responses: ResponseMatrix,
    pub person_positions: Positions,
    pub item_positions: Positions,
    pub beta: Vec<f64>,
}

pub fn simulate_responses(cfg: &SimulationConfig) -> Result<SyntheticData> {
    if cfg.n_persons < 2 || cfg.n_items < 2 || cfg.dim < 1 {
        return Err(NirmError::validation(
            "simulation needs at least 2 persons, 2 items and dimension 1",
        ));
    }
    if !(cfg.beta_sd >= 0.0 && cfg.beta_sd.is_finite() && cfg.beta_mean.is_finite()) {
        return Err(NirmError::validation("beta_mean and beta_sd must be finite, sd >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut normal_rows = |m: usize| {
        let data = (0..m * cfg.dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Positions::from_vec(m, cfg.dim, data)
    };
    let z = normal_rows(cfg.n_persons);
    let w = normal_rows(cfg.n_items);
    let beta_dist = Normal::new(cfg.beta_mean, cfg.beta_sd).expect("validated");
    let beta: Vec<f64> = (0..cfg.n_items).map(|_| beta_dist.sample(&mut rng)).collect();

    let (n, p) = (cfg.n_persons, cfg.n_items);
    let mut values = vec![Response::Zero; n * p];
    for i in 0..p {
        // redraw a column until it has a positive response so the data
        // suit either linkage
        loop {
            let mut any = false;
            for k in 0..n {
                let prob = logistic(beta[i] - euclidean(z.row(k), w.row(i)));
                let one = rng.random::<f64>() < prob;
                values[k * p + i] = Response::from(one);
                any |= one;
            }
            if any {
                break;
            }
        }
    }
    let person_ids = (1..=n).map(|k| format!("p{k}")).collect();
    let item_ids = (1..=p).map(|i| format!("i{i}")).collect();
    Ok(SyntheticData {
        responses: ResponseMatrix::new(person_ids, item_ids, values)?,
        person_positions: z,
        item_positions: w,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_and_well_formed() {
        let cfg = SimulationConfig { n_persons: 40, n_items: 6, ..SimulationConfig::default() };
        let a = simulate_responses(&cfg).unwrap();
        let b = simulate_responses(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.responses.n_persons(), 40);
        assert!(a.responses.item_positive_counts().iter().all(|&c| c > 0));
    }

    #[test]
    fn easy_items_are_answered_more_often() {
        let cfg = SimulationConfig { n_persons: 400, n_items: 8, seed: 3, ..SimulationConfig::default() };
        let d = simulate_responses(&cfg).unwrap();
        let props = d.responses.proportion_positive();
        let (hi, lo) = (0..8).fold((0, 0), |(hi, lo), i| {
            (
                if d.beta[i] > d.beta[hi] { i } else { hi },
                if d.beta[i] < d.beta[lo] { i } else { lo },
            )
        });
        assert!(props[hi] > props[lo]);
    }
}
