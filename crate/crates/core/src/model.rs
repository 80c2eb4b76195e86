//! Parameter state, the two latent-space linkages, and exact evaluation of
//! the log-likelihood, log-prior and log-posterior.
//!
//! Each network is undirected, so every unordered pair (k < l, i < j)
//! contributes one term.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{encode_pair, Encoding, Response, ResponseMatrix};
use crate::error::{NirmError, Result};
use crate::positions::Positions;

/// Which latent space is sampled; the other is derived from it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Linkage {
    /// Person positions are free; each item sits at the mean position of
    /// the persons who answered it positively.
    ItemFromPerson,
    /// Item positions are free; each person sits at the (ε-regularized)
    /// mean position of the items they answered positively.
    PersonFromItem,
}

impl Linkage {
    pub fn as_str(self) -> &'static str {
        match self {
            Linkage::ItemFromPerson => "item-from-person",
            Linkage::PersonFromItem => "person-from-item",
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Linkage {
    type Err = NirmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "item-from-person" => Ok(Linkage::ItemFromPerson),
            "person-from-item" => Ok(Linkage::PersonFromItem),
            other => Err(NirmError::validation(format!(
                "unknown linkage `{other}` (expected item-from-person or person-from-item)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub sigma_theta_sq: f64,
    pub sigma_beta_sq: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            sigma_theta_sq: 10.0,
            sigma_beta_sq: 10.0,
            a_sigma: 0.001,
            b_sigma: 0.001,
        }
    }
}

pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub encoding: Encoding,
    pub linkage: Linkage,
    pub priors: PriorConfig,
    pub epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 2,
            encoding: Encoding::PositiveConcordant,
            linkage: Linkage::ItemFromPerson,
            priors: PriorConfig::default(),
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl ModelConfig {
    /// Every violated constraint, not only the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.dim < 1 {
            v.push("dim must be at least 1".to_string());
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            v.push(format!("epsilon must be positive (got {})", self.epsilon));
        }
        let pr = &self.priors;
        for (name, value) in [
            ("sigma_theta_sq", pr.sigma_theta_sq),
            ("sigma_beta_sq", pr.sigma_beta_sq),
            ("a_sigma", pr.a_sigma),
            ("b_sigma", pr.b_sigma),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                v.push(format!("{name} must be positive (got {value})"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(NirmError::Validation(v.join("; ")))
        }
    }

    /// Number of free-position rows for a data set of this shape.
    pub fn free_rows(&self, x: &ResponseMatrix) -> usize {
        match self.linkage {
            Linkage::ItemFromPerson => x.n_persons(),
            Linkage::PersonFromItem => x.n_items(),
        }
    }
}

/// Data-dependent feasibility: under item-from-person linkage every item
/// needs at least one observed positive response.
pub fn data_violations(x: &ResponseMatrix, config: &ModelConfig) -> Vec<String> {
    let mut v = Vec::new();
    if config.linkage == Linkage::ItemFromPerson {
        for (i, &c) in x.item_positive_counts().iter().enumerate() {
            if c == 0 {
                v.push(format!(
                    "item `{}` has no positive responses; its position is undefined under item-from-person linkage",
                    x.item_ids()[i]
                ));
            }
        }
    }
    v
}

pub fn validate_data(x: &ResponseMatrix, config: &ModelConfig) -> Result<()> {
    config.validate()?;
    let v = data_violations(x, config);
    if v.is_empty() {
        Ok(())
    } else {
        Err(NirmError::Validation(v.join("; ")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    /// Person positions under item-from-person linkage, item positions otherwise.
    pub free_positions: Positions,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    /// Variance of the free latent space.
    pub sigma_sq: f64,
}

impl ParameterState {
    /// Zero intercepts, unit variance, and the given free positions.
    pub fn with_positions(free_positions: Positions, n_persons: usize, n_items: usize) -> Self {
        ParameterState {
            free_positions,
            theta: vec![0.0; n_persons],
            beta: vec![0.0; n_items],
            sigma_sq: 1.0,
        }
    }

    pub fn check(&self, x: &ResponseMatrix, config: &ModelConfig) -> Result<()> {
        let rows = config.free_rows(x);
        let mut problems = Vec::new();
        if self.free_positions.rows() != rows || self.free_positions.dim() != config.dim {
            problems.push(format!(
                "free positions are {}×{}, expected {rows}×{}",
                self.free_positions.rows(),
                self.free_positions.dim(),
                config.dim
            ));
        }
        if self.theta.len() != x.n_persons() {
            problems.push(format!(
                "theta has {} entries, expected {}",
                self.theta.len(),
                x.n_persons()
            ));
        }
        if self.beta.len() != x.n_items() {
            problems.push(format!(
                "beta has {} entries, expected {}",
                self.beta.len(),
                x.n_items()
            ));
        }
        if !(self.sigma_sq > 0.0) {
            problems.push(format!("sigma_sq must be positive (got {})", self.sigma_sq));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(NirmError::Validation(problems.join("; ")))
        }
    }
}

/// Mean of the selected rows of `source`, divided by `denominator_offset +
/// count`. Rows are accumulated in index order so identical inputs give
/// bit-identical outputs everywhere this is used.
pub(crate) fn linkage_mean(
    source: &Positions,
    selected: impl Iterator<Item = usize>,
    denominator_offset: f64,
    out: &mut [f64],
) -> usize {
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut count = 0usize;
    for r in selected {
        for (o, s) in out.iter_mut().zip(source.row(r)) {
            *o += *s;
        }
        count += 1;
    }
    let denom = denominator_offset + count as f64;
    if count > 0 {
        out.iter_mut().for_each(|v| *v /= denom);
    }
    count
}

/// Position of item `i` from person positions.
pub(crate) fn item_from_persons(x: &ResponseMatrix, persons: &Positions, i: usize, out: &mut [f64]) {
    linkage_mean(
        persons,
        (0..x.n_persons()).filter(|&k| x.get(k, i).is_one()),
        0.0,
        out,
    );
}

/// Position of person `k` from item positions.
pub(crate) fn person_from_items(
    x: &ResponseMatrix,
    items: &Positions,
    k: usize,
    epsilon: f64,
    out: &mut [f64],
) {
    linkage_mean(
        items,
        x.row(k)
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_one())
            .map(|(i, _)| i),
        epsilon,
        out,
    );
}

/// Derive the non-free space from free positions.
pub fn derive_from(x: &ResponseMatrix, free: &Positions, config: &ModelConfig) -> Result<Positions> {
    let d = free.dim();
    match config.linkage {
        Linkage::ItemFromPerson => {
            let counts = x.item_positive_counts();
            if let Some(i) = counts.iter().position(|&c| c == 0) {
                return Err(NirmError::validation(format!(
                    "item `{}` has no positive responses; its position is undefined under item-from-person linkage",
                    x.item_ids()[i]
                )));
            }
            let mut w = Positions::zeros(x.n_items(), d);
            for i in 0..x.n_items() {
                item_from_persons(x, free, i, w.row_mut(i));
            }
            Ok(w)
        }
        Linkage::PersonFromItem => {
            let mut z = Positions::zeros(x.n_persons(), d);
            for k in 0..x.n_persons() {
                person_from_items(x, free, k, config.epsilon, z.row_mut(k));
            }
            Ok(z)
        }
    }
}

pub fn derive_positions(
    state: &ParameterState,
    x: &ResponseMatrix,
    config: &ModelConfig,
) -> Result<Positions> {
    state.check(x, config)?;
    derive_from(x, &state.free_positions, config)
}

/// Person positions and item positions for a state, whichever is free.
pub fn latent_spaces(
    state: &ParameterState,
    x: &ResponseMatrix,
    config: &ModelConfig,
) -> Result<(Positions, Positions)> {
    let derived = derive_positions(state, x, config)?;
    Ok(match config.linkage {
        Linkage::ItemFromPerson => (state.free_positions.clone(), derived),
        Linkage::PersonFromItem => (derived, state.free_positions.clone()),
    })
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-probability of one edge with linear predictor `intercept - distance`.
#[inline]
pub fn edge_log_prob(intercept: f64, distance: f64, edge: bool) -> f64 {
    let eta = intercept - distance;
    if edge {
        eta - softplus(eta)
    } else {
        -softplus(eta)
    }
}

#[inline]
pub(crate) fn edge_term(intercept: f64, distance: f64, edge: Response) -> f64 {
    match edge {
        Response::One => edge_log_prob(intercept, distance, true),
        Response::Zero => edge_log_prob(intercept, distance, false),
        Response::Missing => 0.0,
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub(crate) fn normal_log_density(x: f64, variance: f64) -> f64 {
    -0.5 * (LN_2PI + variance.ln()) - 0.5 * x * x / variance
}

/// Log density of an isotropic normal row with zero mean.
#[inline]
pub(crate) fn row_log_density(row: &[f64], variance: f64) -> f64 {
    let ss: f64 = row.iter().map(|v| v * v).sum();
    -0.5 * row.len() as f64 * (LN_2PI + variance.ln()) - 0.5 * ss / variance
}

pub(crate) fn inv_gamma_log_density(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - libm::lgamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogPosterior {
    pub log_likelihood_y: f64,
    pub log_likelihood_u: f64,
    pub log_prior: f64,
    pub total: f64,
}

/// Item-network terms restricted to person pairs with at least one
/// `touched` person (all pairs when every flag is set).
pub(crate) fn item_networks_ll(
    x: &ResponseMatrix,
    enc: Encoding,
    beta: &[f64],
    persons: &Positions,
    touched: &[bool],
) -> f64 {
    let n = x.n_persons();
    let mut total = 0.0;
    for k in 0..n {
        for l in k + 1..n {
            if !(touched[k] || touched[l]) {
                continue;
            }
            let dist = persons.distance(k, l);
            let (rk, rl) = (x.row(k), x.row(l));
            for i in 0..x.n_items() {
                total += edge_term(beta[i], dist, encode_pair(rk[i], rl[i], enc));
            }
        }
    }
    total
}

/// Person-network terms restricted to item pairs with at least one
/// `touched` item.
pub(crate) fn person_networks_ll(
    x: &ResponseMatrix,
    enc: Encoding,
    theta: &[f64],
    items: &Positions,
    touched: &[bool],
) -> f64 {
    let p = x.n_items();
    let mut total = 0.0;
    for i in 0..p {
        for j in i + 1..p {
            if !(touched[i] || touched[j]) {
                continue;
            }
            let dist = items.distance(i, j);
            for k in 0..x.n_persons() {
                total += edge_term(theta[k], dist, encode_pair(x.get(k, i), x.get(k, j), enc));
            }
        }
    }
    total
}

pub fn log_prior(state: &ParameterState, config: &ModelConfig) -> f64 {
    let pr = &config.priors;
    let theta: f64 = state
        .theta
        .iter()
        .map(|&t| normal_log_density(t, pr.sigma_theta_sq))
        .sum();
    let beta: f64 = state
        .beta
        .iter()
        .map(|&b| normal_log_density(b, pr.sigma_beta_sq))
        .sum();
    let positions: f64 = (0..state.free_positions.rows())
        .map(|r| row_log_density(state.free_positions.row(r), state.sigma_sq))
        .sum();
    let variance = inv_gamma_log_density(state.sigma_sq, pr.a_sigma, pr.b_sigma);
    theta + beta + positions + variance
}

pub fn log_posterior(
    x: &ResponseMatrix,
    state: &ParameterState,
    config: &ModelConfig,
) -> Result<LogPosterior> {
    let (z, w) = latent_spaces(state, x, config)?;
    let all_persons = vec![true; x.n_persons()];
    let all_items = vec![true; x.n_items()];
    let log_likelihood_y = item_networks_ll(x, config.encoding, &state.beta, &z, &all_persons);
    let log_likelihood_u = person_networks_ll(x, config.encoding, &state.theta, &w, &all_items);
    let log_prior = log_prior(state, config);
    Ok(LogPosterior {
        log_likelihood_y,
        log_likelihood_u,
        log_prior,
        total: log_likelihood_y + log_likelihood_u + log_prior,
    })
}

/// A change to exactly one parameter block.
#[derive(Clone, Debug, PartialEq)]
pub enum Change {
    Theta { person: usize, value: f64 },
    Beta { item: usize, value: f64 },
    Position { row: usize, value: Vec<f64> },
}

impl Change {
    /// Apply to a state in place.
    pub fn apply(&self, state: &mut ParameterState) {
        match self {
            Change::Theta { person, value } => state.theta[*person] = *value,
            Change::Beta { item, value } => state.beta[*item] = *value,
            Change::Position { row, value } => {
                state.free_positions.row_mut(*row).copy_from_slice(value)
            }
        }
    }
}

/// `log_posterior(after) - log_posterior(before)`, evaluating only the
/// terms the change touches.
pub fn delta_log_posterior(
    x: &ResponseMatrix,
    state: &ParameterState,
    config: &ModelConfig,
    change: &Change,
) -> Result<f64> {
    state.check(x, config)?;
    let pr = &config.priors;
    let enc = config.encoding;
    match change {
        Change::Theta { person, value } => {
            let k = *person;
            if k >= x.n_persons() {
                return Err(NirmError::OutOfBounds {
                    what: "person",
                    index: k,
                    len: x.n_persons(),
                });
            }
            let (_, w) = latent_spaces(state, x, config)?;
            let old = state.theta[k];
            let row = x.row(k);
            let mut delta = 0.0;
            for i in 0..x.n_items() {
                for j in i + 1..x.n_items() {
                    let e = encode_pair(row[i], row[j], enc);
                    let dist = w.distance(i, j);
                    delta += edge_term(*value, dist, e) - edge_term(old, dist, e);
                }
            }
            Ok(delta + normal_log_density(*value, pr.sigma_theta_sq)
                - normal_log_density(old, pr.sigma_theta_sq))
        }
        Change::Beta { item, value } => {
            let i = *item;
            if i >= x.n_items() {
                return Err(NirmError::OutOfBounds {
                    what: "item",
                    index: i,
                    len: x.n_items(),
                });
            }
            let (z, _) = latent_spaces(state, x, config)?;
            let old = state.beta[i];
            let mut delta = 0.0;
            for k in 0..x.n_persons() {
                for l in k + 1..x.n_persons() {
                    let e = encode_pair(x.get(k, i), x.get(l, i), enc);
                    let dist = z.distance(k, l);
                    delta += edge_term(*value, dist, e) - edge_term(old, dist, e);
                }
            }
            Ok(delta + normal_log_density(*value, pr.sigma_beta_sq)
                - normal_log_density(old, pr.sigma_beta_sq))
        }
        Change::Position { row, value } => {
            let r = *row;
            let rows = state.free_positions.rows();
            if r >= rows {
                return Err(NirmError::OutOfBounds {
                    what: "position row",
                    index: r,
                    len: rows,
                });
            }
            if value.len() != config.dim {
                return Err(NirmError::validation(format!(
                    "position has {} coordinates, expected {}",
                    value.len(),
                    config.dim
                )));
            }
            let mut after = state.clone();
            change.apply(&mut after);
            let (z0, w0) = latent_spaces(state, x, config)?;
            let (z1, w1) = latent_spaces(&after, x, config)?;
            // persons/items whose positions move
            let (person_touch, item_touch): (Vec<bool>, Vec<bool>) = match config.linkage {
                Linkage::ItemFromPerson => (
                    (0..x.n_persons()).map(|k| k == r).collect(),
                    (0..x.n_items()).map(|i| x.get(r, i).is_one()).collect(),
                ),
                Linkage::PersonFromItem => (
                    (0..x.n_persons()).map(|k| x.get(k, r).is_one()).collect(),
                    (0..x.n_items()).map(|i| i == r).collect(),
                ),
            };
            let y = item_networks_ll(x, enc, &state.beta, &z1, &person_touch)
                - item_networks_ll(x, enc, &state.beta, &z0, &person_touch);
            let u = person_networks_ll(x, enc, &state.theta, &w1, &item_touch)
                - person_networks_ll(x, enc, &state.theta, &w0, &item_touch);
            let prior = row_log_density(value, state.sigma_sq)
                - row_log_density(state.free_positions.row(r), state.sigma_sq);
            Ok(y + u + prior)
        }
    }
}

/// Independent edge draws for every item network (person pairs k < l) and
/// every person network (item pairs i < j).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimulatedNetworks {
    pub n_persons: usize,
    pub n_items: usize,
    /// Per item, condensed upper triangle over person pairs.
    pub item_networks: Vec<Vec<bool>>,
    /// Per person, condensed upper triangle over item pairs.
    pub person_networks: Vec<Vec<bool>>,
}

impl SimulatedNetworks {
    pub fn item_edge(&self, item: usize, k: usize, l: usize) -> bool {
        let (a, b) = if k < l { (k, l) } else { (l, k) };
        self.item_networks[item][crate::positions::pair_index(self.n_persons, a, b)]
    }

    pub fn person_edge(&self, person: usize, i: usize, j: usize) -> bool {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.person_networks[person][crate::positions::pair_index(self.n_items, a, b)]
    }
}

/// Draw synthetic networks from the model at `state`. The response matrix
/// only supplies the linkage between the spaces.
pub fn simulate_networks(
    state: &ParameterState,
    x: &ResponseMatrix,
    config: &ModelConfig,
    seed: u64,
) -> Result<SimulatedNetworks> {
    let (z, w) = latent_spaces(state, x, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, p) = (x.n_persons(), x.n_items());
    let item_networks = (0..p)
        .map(|i| {
            let mut edges = Vec::with_capacity(n * (n - 1) / 2);
            for k in 0..n {
                for l in k + 1..n {
                    let prob = logistic(state.beta[i] - z.distance(k, l));
                    edges.push(rng.random::<f64>() < prob);
                }
            }
            edges
        })
        .collect();
    let person_networks = (0..n)
        .map(|k| {
            let mut edges = Vec::with_capacity(p * (p - 1) / 2);
            for i in 0..p {
                for j in i + 1..p {
                    let prob = logistic(state.theta[k] - w.distance(i, j));
                    edges.push(rng.random::<f64>() < prob);
                }
            }
            edges
        })
        .collect();
    Ok(SimulatedNetworks {
        n_persons: n,
        n_items: p,
        item_networks,
        person_networks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn random_state(rng: &mut ChaCha8Rng, x: &ResponseMatrix, config: &ModelConfig) -> ParameterState {
        let rows = config.free_rows(x);
        let data = (0..rows * config.dim)
            .map(|_| rng.random_range(-1.5..1.5))
            .collect();
        ParameterState {
            free_positions: Positions::from_vec(rows, config.dim, data),
            theta: (0..x.n_persons()).map(|_| rng.random_range(-2.0..2.0)).collect(),
            beta: (0..x.n_items()).map(|_| rng.random_range(-2.0..2.0)).collect(),
            sigma_sq: rng.random_range(0.3..3.0),
        }
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize, missing: f64) -> ResponseMatrix {
        loop {
            let rows: Vec<Vec<i8>> = (0..n)
                .map(|_| {
                    (0..p)
                        .map(|_| {
                            if rng.random::<f64>() < missing {
                                -1
                            } else {
                                rng.random_range(0..2)
                            }
                        })
                        .collect()
                })
                .collect();
            let x = ResponseMatrix::from_codes(&rows).unwrap();
            if x.item_positive_counts().iter().all(|&c| c > 0) {
                return x;
            }
        }
    }

    fn config(linkage: Linkage, encoding: Encoding, dim: usize) -> ModelConfig {
        ModelConfig {
            dim,
            encoding,
            linkage,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn single_positive_respondent_sets_item_position() {
        let x = ResponseMatrix::from_codes(&[[1, 1], [0, 1], [0, 0]]).unwrap();
        let cfg = config(Linkage::ItemFromPerson, Encoding::PositiveConcordant, 2);
        let z = Positions::from_rows(&[vec![0.3, -1.2], vec![2.0, 1.0], vec![-1.0, 0.5]]);
        let state = ParameterState::with_positions(z.clone(), 3, 2);
        let w = derive_positions(&state, &x, &cfg).unwrap();
        assert_eq!(w.row(0), z.row(0));
    }

    #[test]
    fn zero_score_person_sits_at_origin() {
        let x = ResponseMatrix::from_codes(&[[0, 0, 0], [1, 0, 1]]).unwrap();
        let cfg = config(Linkage::PersonFromItem, Encoding::AllConcordant, 2);
        let w = Positions::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.7, 0.7]]);
        let state = ParameterState::with_positions(w, 2, 3);
        let z = derive_positions(&state, &x, &cfg).unwrap();
        assert_eq!(z.row(0), [0.0, 0.0]);
    }

    #[test]
    fn zero_positive_item_rejected_by_name() {
        let x = ResponseMatrix::from_codes(&[[1, 0], [1, 0]]).unwrap();
        let cfg = config(Linkage::ItemFromPerson, Encoding::PositiveConcordant, 1);
        let state = ParameterState::with_positions(Positions::zeros(2, 1), 2, 2);
        let err = derive_positions(&state, &x, &cfg).unwrap_err();
        assert!(err.to_string().contains("`i2`"), "{err}");
        assert!(validate_data(&x, &cfg).is_err());
    }

    #[test]
    fn derived_positions_match_weighted_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 9, 5, 0.1);
        for linkage in [Linkage::ItemFromPerson, Linkage::PersonFromItem] {
            let cfg = config(linkage, Encoding::PositiveConcordant, 3);
            let state = random_state(&mut rng, &x, &cfg);
            let derived = derive_positions(&state, &x, &cfg).unwrap();
            let free = &state.free_positions;
            for r in 0..derived.rows() {
                for c in 0..3 {
                    let (mut num, mut den) = (0.0, 0.0);
                    match linkage {
                        Linkage::ItemFromPerson => {
                            for k in 0..x.n_persons() {
                                let v = x.get(k, r).value().unwrap_or(0) as f64;
                                num += v * free.row(k)[c];
                                den += v;
                            }
                        }
                        Linkage::PersonFromItem => {
                            for i in 0..x.n_items() {
                                let v = x.get(r, i).value().unwrap_or(0) as f64;
                                num += v * free.row(i)[c];
                                den += v;
                            }
                            den += cfg.epsilon;
                        }
                    }
                    let expected = if den > 0.0 { num / den } else { 0.0 };
                    assert_abs_diff_eq!(derived.row(r)[c], expected, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn edge_log_prob_values() {
        assert_abs_diff_eq!(edge_log_prob(0.0, 0.0, true), 0.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(edge_log_prob(2.0, 2.0, false), 0.5f64.ln(), epsilon = 1e-15);
        // ln σ(-50) = -50 - ln(1 + e^-50); e^-50 ≈ 1.93e-22 vanishes in f64.
        let v = edge_log_prob(-50.0, 0.0, true);
        assert!(v.is_finite());
        assert_abs_diff_eq!(v, -50.0, epsilon = 1e-12);
        let w = edge_log_prob(800.0, 0.0, false);
        assert!(w.is_finite());
        assert_abs_diff_eq!(w, -800.0, epsilon = 1e-9);
    }

    #[test]
    fn fully_missing_data_leaves_only_prior() {
        let x = ResponseMatrix::from_codes(&[[-1, -1, -1], [-1, -1, -1], [-1, -1, -1]]).unwrap();
        let cfg = config(Linkage::PersonFromItem, Encoding::AllConcordant, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let state = random_state(&mut rng, &x, &cfg);
        let lp = log_posterior(&x, &state, &cfg).unwrap();
        assert_eq!(lp.log_likelihood_y, 0.0);
        assert_eq!(lp.log_likelihood_u, 0.0);
        assert_eq!(lp.total, lp.log_prior);
    }

    #[test]
    fn dimension_mismatch_is_validation_error() {
        let x = ResponseMatrix::from_codes(&[[1, 0], [0, 1]]).unwrap();
        let cfg = config(Linkage::ItemFromPerson, Encoding::AllConcordant, 2);
        let state = ParameterState::with_positions(Positions::zeros(3, 2), 2, 2);
        assert!(matches!(
            log_posterior(&x, &state, &cfg),
            Err(NirmError::Validation(_))
        ));
    }

    #[test]
    fn log_posterior_matches_materialized_networks() {
        use crate::data::{materialize_network, Axis};
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (linkage, enc) in [
            (Linkage::ItemFromPerson, Encoding::PositiveConcordant),
            (Linkage::PersonFromItem, Encoding::AllConcordant),
        ] {
            let x = random_matrix(&mut rng, 3, 3, 0.0);
            let cfg = config(linkage, enc, 2);
            let state = random_state(&mut rng, &x, &cfg);
            let (z, w) = latent_spaces(&state, &x, &cfg).unwrap();
            let mut brute = 0.0;
            for i in 0..3 {
                let net = materialize_network(&x, Axis::PerItem, i, enc).unwrap();
                for k in 0..3 {
                    for l in k + 1..3 {
                        let e = net.edge(k, l).unwrap();
                        let eta = state.beta[i] - z.distance(k, l);
                        let p = 1.0 / (1.0 + (-eta).exp());
                        brute += if e.is_one() { p.ln() } else { (1.0 - p).ln() };
                    }
                }
            }
            for k in 0..3 {
                let net = materialize_network(&x, Axis::PerPerson, k, enc).unwrap();
                for i in 0..3 {
                    for j in i + 1..3 {
                        let e = net.edge(i, j).unwrap();
                        let eta = state.theta[k] - w.distance(i, j);
                        let p = 1.0 / (1.0 + (-eta).exp());
                        brute += if e.is_one() { p.ln() } else { (1.0 - p).ln() };
                    }
                }
            }
            let lp = log_posterior(&x, &state, &cfg).unwrap();
            assert_abs_diff_eq!(lp.log_likelihood_y + lp.log_likelihood_u, brute, epsilon = 1e-10);
        }
    }

    #[test]
    fn person_permutation_leaves_total_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_matrix(&mut rng, 6, 4, 0.1);
        let cfg = config(Linkage::ItemFromPerson, Encoding::AllConcordant, 2);
        let state = random_state(&mut rng, &x, &cfg);
        let perm = [3, 0, 5, 1, 4, 2];
        let y = x.select_persons(&perm).unwrap();
        let mut permuted = state.clone();
        permuted.theta = perm.iter().map(|&k| state.theta[k]).collect();
        let rows: Vec<Vec<f64>> = perm
            .iter()
            .map(|&k| state.free_positions.row(k).to_vec())
            .collect();
        permuted.free_positions = Positions::from_rows(&rows);
        let a = log_posterior(&x, &state, &cfg).unwrap().total;
        let b = log_posterior(&y, &permuted, &cfg).unwrap().total;
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);
    }

    #[test]
    fn delta_matches_full_recompute() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for linkage in [Linkage::ItemFromPerson, Linkage::PersonFromItem] {
            for enc in [Encoding::PositiveConcordant, Encoding::AllConcordant] {
                let x = random_matrix(&mut rng, 4, 4, 0.1);
                let cfg = config(linkage, enc, 2);
                let state = random_state(&mut rng, &x, &cfg);
                let base = log_posterior(&x, &state, &cfg).unwrap().total;
                let rows = cfg.free_rows(&x);
                let changes = [
                    Change::Theta { person: 2, value: rng.random_range(-2.0..2.0) },
                    Change::Beta { item: 1, value: rng.random_range(-2.0..2.0) },
                    Change::Position {
                        row: rng.random_range(0..rows),
                        value: vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                    },
                ];
                for change in &changes {
                    let mut after = state.clone();
                    change.apply(&mut after);
                    let full = log_posterior(&x, &after, &cfg).unwrap().total - base;
                    let delta = delta_log_posterior(&x, &state, &cfg, change).unwrap();
                    assert_abs_diff_eq!(delta, full, epsilon = 1e-9);
                }
                let zero = Change::Position {
                    row: 0,
                    value: state.free_positions.row(0).to_vec(),
                };
                assert_eq!(delta_log_posterior(&x, &state, &cfg, &zero).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn beta_delta_ignores_other_betas() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = random_matrix(&mut rng, 5, 4, 0.0);
        let cfg = config(Linkage::PersonFromItem, Encoding::AllConcordant, 2);
        let state = random_state(&mut rng, &x, &cfg);
        let change = Change::Beta { item: 2, value: 0.4 };
        let a = delta_log_posterior(&x, &state, &cfg, &change).unwrap();
        let mut other = state.clone();
        other.beta[0] += 1.7;
        other.beta[3] -= 0.9;
        let b = delta_log_posterior(&x, &other, &cfg, &change).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn simulate_saturates_and_is_reproducible() {
        let x = ResponseMatrix::from_codes(&[[1, 0, 1], [0, 1, 1], [1, 1, 0]]).unwrap();
        let cfg = config(Linkage::ItemFromPerson, Encoding::PositiveConcordant, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut state = random_state(&mut rng, &x, &cfg);
        state.theta = vec![30.0; 3];
        state.beta = vec![30.0; 3];
        let sims = simulate_networks(&state, &x, &cfg, 9).unwrap();
        assert!(sims.item_networks.iter().flatten().all(|&e| e));
        assert!(sims.person_networks.iter().flatten().all(|&e| e));
        state.theta = vec![0.1, -0.2, 0.3];
        let a = simulate_networks(&state, &x, &cfg, 44).unwrap();
        let b = simulate_networks(&state, &x, &cfg, 44).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn simulated_edge_rate_is_half_at_zero_predictor() {
        let n = 60;
        let rows: Vec<Vec<i8>> = (0..n).map(|k| vec![(k % 2) as i8, 1, ((k / 2) % 2) as i8]).collect();
        let x = ResponseMatrix::from_codes(&rows).unwrap();
        let cfg = config(Linkage::ItemFromPerson, Encoding::PositiveConcordant, 2);
        let state = ParameterState::with_positions(Positions::zeros(n, 2), n, 3);
        let sims = simulate_networks(&state, &x, &cfg, 123).unwrap();
        let edges: Vec<bool> = sims
            .item_networks
            .iter()
            .chain(&sims.person_networks)
            .flatten()
            .copied()
            .collect();
        let m = edges.len() as f64;
        let rate = edges.iter().filter(|&&e| e).count() as f64 / m;
        let se = (0.25 / m).sqrt();
        assert!((rate - 0.5).abs() < 3.0 * se, "rate {rate}, se {se}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn rigid_motion_preserves_likelihood(seed in 0u64..10_000, angle in 0.0f64..6.3, reflect: bool,
                                             dx in -3.0f64..3.0, dy in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_matrix(&mut rng, 5, 4, 0.1);
            // item-from-person averages are affine, so shifts are exact there
            let cfg = config(Linkage::ItemFromPerson, Encoding::AllConcordant, 2);
            let state = random_state(&mut rng, &x, &cfg);
            let (c, s) = (angle.cos(), angle.sin());
            let sign = if reflect { -1.0 } else { 1.0 };
            let mut moved = state.clone();
            for r in 0..moved.free_positions.rows() {
                let v = moved.free_positions.row_mut(r);
                let (a, b) = (v[0], v[1]);
                v[0] = c * a - s * b + dx;
                v[1] = sign * (s * a + c * b) + dy;
            }
            let a = log_posterior(&x, &state, &cfg).unwrap();
            let b = log_posterior(&x, &moved, &cfg).unwrap();
            prop_assert!(((a.log_likelihood_y + a.log_likelihood_u) - (b.log_likelihood_y + b.log_likelihood_u)).abs() < 1e-9);
        }

        #[test]
        fn rotation_preserves_likelihood_person_from_item(seed in 0u64..10_000, angle in 0.0f64..6.3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_matrix(&mut rng, 5, 4, 0.1);
            let cfg = config(Linkage::PersonFromItem, Encoding::PositiveConcordant, 2);
            let state = random_state(&mut rng, &x, &cfg);
            let (c, s) = (angle.cos(), angle.sin());
            let mut moved = state.clone();
            for r in 0..moved.free_positions.rows() {
                let v = moved.free_positions.row_mut(r);
                let (a, b) = (v[0], v[1]);
                v[0] = c * a - s * b;
                v[1] = s * a + c * b;
            }
            let a = log_posterior(&x, &state, &cfg).unwrap();
            let b = log_posterior(&x, &moved, &cfg).unwrap();
            prop_assert!(((a.log_likelihood_y + a.log_likelihood_u) - (b.log_likelihood_y + b.log_likelihood_u)).abs() < 1e-9);
        }

        #[test]
        fn derived_positions_in_convex_hull_1d(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_matrix(&mut rng, 6, 4, 0.1);
            let cfg = config(Linkage::ItemFromPerson, Encoding::AllConcordant, 1);
            let state = random_state(&mut rng, &x, &cfg);
            let w = derive_positions(&state, &x, &cfg).unwrap();
            for i in 0..4 {
                let pos: Vec<f64> = (0..6).filter(|&k| x.get(k, i).is_one())
                    .map(|k| state.free_positions.row(k)[0]).collect();
                let lo = pos.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = pos.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(w.row(i)[0] >= lo - 1e-12 && w.row(i)[0] <= hi + 1e-12);
            }
        }

        #[test]
        fn total_is_finite_for_extreme_states(seed in 0u64..10_000, scale in 1.0f64..500.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_matrix(&mut rng, 4, 3, 0.0);
            let cfg = config(Linkage::PersonFromItem, Encoding::AllConcordant, 2);
            let mut state = random_state(&mut rng, &x, &cfg);
            state.theta.iter_mut().for_each(|t| *t *= scale);
            state.beta.iter_mut().for_each(|b| *b *= -scale);
            let lp = log_posterior(&x, &state, &cfg).unwrap();
            prop_assert!(lp.total.is_finite());
        }

        #[test]
        fn deltas_telescope(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_matrix(&mut rng, 4, 3, 0.1);
            let cfg = config(Linkage::PersonFromItem, Encoding::AllConcordant, 2);
            let start = random_state(&mut rng, &x, &cfg);
            let mut state = start.clone();
            let mut acc = 0.0;
            for step in 0..6 {
                let change = match step % 3 {
                    0 => Change::Theta { person: rng.random_range(0..4), value: rng.random_range(-2.0..2.0) },
                    1 => Change::Beta { item: rng.random_range(0..3), value: rng.random_range(-2.0..2.0) },
                    _ => Change::Position { row: rng.random_range(0..3),
                        value: vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)] },
                };
                acc += delta_log_posterior(&x, &state, &cfg, &change).unwrap();
                change.apply(&mut state);
            }
            let end = log_posterior(&x, &state, &cfg).unwrap().total;
            let begin = log_posterior(&x, &start, &cfg).unwrap().total;
            prop_assert!((acc - (end - begin)).abs() < 1e-9);
        }
    }
}
