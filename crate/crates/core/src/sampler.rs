//! Adaptive random-walk Metropolis–Hastings with a conjugate Gibbs step for
//! the latent-space variance.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::ResponseMatrix;
use crate::engine::Engine;
use crate::error::{NirmError, Result};
use crate::model::{validate_data, ModelConfig, ParameterState};
use crate::positions::Positions;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalScales {
    pub positions: f64,
    pub theta: f64,
    pub beta: f64,
}

impl Default for ProposalScales {
    fn default() -> Self {
        ProposalScales {
            positions: 0.3,
            theta: 0.3,
            beta: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adaptation {
    pub enabled: bool,
    /// Sweeps between scale adjustments.
    pub window: usize,
    pub target_low: f64,
    pub target_high: f64,
}

impl Default for Adaptation {
    fn default() -> Self {
        Adaptation {
            enabled: true,
            window: 50,
            target_low: 0.2,
            target_high: 0.4,
        }
    }
}

/// Blocks held fixed at their initial values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenBlocks {
    pub positions: bool,
    pub theta: bool,
    pub beta: bool,
    pub sigma_sq: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub total_iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub scales: ProposalScales,
    pub adaptation: Adaptation,
    pub seed: u64,
    pub workers: usize,
    /// Shuffle the order of the position, θ and β blocks every sweep.
    pub random_scan: bool,
    pub frozen: FrozenBlocks,
    /// Log progress every this many sweeps; 0 disables.
    pub progress_interval: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            total_iterations: 15_000,
            burn_in: 5_000,
            thinning: 5,
            scales: ProposalScales::default(),
            adaptation: Adaptation::default(),
            seed: 1,
            workers: 1,
            random_scan: false,
            frozen: FrozenBlocks::default(),
            progress_interval: 1_000,
        }
    }
}

impl McmcConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.total_iterations == 0 {
            v.push("total_iterations must be positive".into());
        }
        if self.burn_in >= self.total_iterations {
            v.push(format!(
                "burn_in ({}) must be less than total_iterations ({})",
                self.burn_in, self.total_iterations
            ));
        }
        if self.thinning == 0 {
            v.push("thinning must be at least 1".into());
        }
        if self.workers == 0 {
            v.push("workers must be at least 1".into());
        }
        let s = &self.scales;
        for (name, value) in [
            ("position scale", s.positions),
            ("theta scale", s.theta),
            ("beta scale", s.beta),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                v.push(format!("{name} must be positive (got {value})"));
            }
        }
        let a = &self.adaptation;
        if a.window == 0 {
            v.push("adaptation window must be positive".into());
        }
        if !(0.0 <= a.target_low && a.target_low < a.target_high && a.target_high <= 1.0) {
            v.push(format!(
                "adaptation targets must satisfy 0 <= low < high <= 1 (got {}, {})",
                a.target_low, a.target_high
            ));
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

    /// `floor((total − burn_in) / thinning)`.
    pub fn retained_count(&self) -> usize {
        self.total_iterations.saturating_sub(self.burn_in) / self.thinning.max(1)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockTally {
    pub proposed: u64,
    pub accepted: u64,
}

impl BlockTally {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    fn add(&mut self, other: &BlockTally) {
        self.proposed += other.proposed;
        self.accepted += other.accepted;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepTally {
    pub positions: BlockTally,
    pub theta: BlockTally,
    pub beta: BlockTally,
}

impl SweepTally {
    pub fn add(&mut self, other: &SweepTally) {
        self.positions.add(&other.positions);
        self.theta.add(&other.theta);
        self.beta.add(&other.beta);
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub positions: f64,
    pub theta: f64,
    pub beta: f64,
}

impl From<&SweepTally> for AcceptanceRates {
    fn from(t: &SweepTally) -> Self {
        AcceptanceRates {
            positions: t.positions.rate(),
            theta: t.theta.rate(),
            beta: t.beta.rate(),
        }
    }
}

/// Retained, thinned draws of one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub states: Vec<ParameterState>,
    /// Sweep number (1-based) of each retained state.
    pub iterations: Vec<usize>,
    pub log_posterior: Vec<f64>,
    /// Acceptance after burn-in.
    pub acceptance: AcceptanceRates,
    /// Scales in force after adaptation.
    pub final_scales: ProposalScales,
    pub seed: u64,
    pub model: ModelConfig,
    pub mcmc: McmcConfig,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn theta_chain(&self, k: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.theta[k]).collect()
    }

    pub fn beta_chain(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.beta[i]).collect()
    }

    pub fn sigma_sq_chain(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.sigma_sq).collect()
    }
}

/// Seeded starting point: zero intercepts, unit variance, and free
/// positions drawn from N(0, 0.1·I).
pub fn initial_state(x: &ResponseMatrix, model: &ModelConfig, rng: &mut impl Rng) -> ParameterState {
    let rows = model.free_rows(x);
    let sd = 0.1f64.sqrt();
    let data = (0..rows * model.dim)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ParameterState::with_positions(Positions::from_vec(rows, model.dim, data), x.n_persons(), x.n_items())
}

/// Draw σ² from its conjugate full conditional given `m` free rows of
/// dimension `d` whose squared norms sum to `sum_sq`.
pub fn draw_variance(model: &ModelConfig, m: usize, sum_sq: f64, rng: &mut impl Rng) -> f64 {
    let shape = model.priors.a_sigma + 0.5 * (m * model.dim) as f64;
    let rate = model.priors.b_sigma + 0.5 * sum_sq;
    let g = Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters");
    loop {
        let v = 1.0 / g.sample(rng);
        if v > 0.0 && v.is_finite() {
            return v;
        }
    }
}

pub fn gibbs_update_variance(state: &ParameterState, model: &ModelConfig, rng: &mut impl Rng) -> f64 {
    let fp = &state.free_positions;
    let ss = fp.as_slice().iter().map(|v| v * v).sum();
    draw_variance(model, fp.rows(), ss, rng)
}

/// Scale ×1.25 above the band, ×0.8 below it, unchanged inside.
pub fn adapt_scales(tallies: &SweepTally, scales: &ProposalScales, adaptation: &Adaptation) -> ProposalScales {
    let adjust = |t: &BlockTally, s: f64| {
        if t.proposed == 0 {
            s
        } else if t.rate() > adaptation.target_high {
            s * 1.25
        } else if t.rate() < adaptation.target_low {
            s * 0.8
        } else {
            s
        }
    };
    ProposalScales {
        positions: adjust(&tallies.positions, scales.positions),
        theta: adjust(&tallies.theta, scales.theta),
        beta: adjust(&tallies.beta, scales.beta),
    }
}

#[derive(Clone, Copy)]
enum Block {
    Positions,
    Theta,
    Beta,
}

#[inline]
fn mh_accept(delta: f64, rng: &mut impl Rng) -> bool {
    let u: f64 = rng.random();
    u.ln() < delta
}

fn sweep_engine(
    engine: &mut Engine<'_>,
    model: &ModelConfig,
    scales: &ProposalScales,
    frozen: &FrozenBlocks,
    random_scan: bool,
    rng: &mut ChaCha8Rng,
) -> SweepTally {
    let mut tally = SweepTally::default();
    let mut order = [Block::Positions, Block::Theta, Block::Beta];
    if random_scan {
        order.shuffle(rng);
    }
    let mut proposal = vec![0.0; model.dim];
    for block in order {
        match block {
            Block::Positions if !frozen.positions => {
                for r in 0..engine.free_rows() {
                    for (v, cur) in proposal.iter_mut().zip(engine.free_row(r)) {
                        let step: f64 = rng.sample(StandardNormal);
                        *v = cur + scales.positions * step;
                    }
                    let delta = engine.propose_position(r, &proposal);
                    let ok = mh_accept(delta, rng);
                    if ok {
                        engine.accept_position();
                    } else {
                        engine.reject_position();
                    }
                    tally.positions.record(ok);
                }
            }
            Block::Theta if !frozen.theta => {
                for k in 0..engine.theta().len() {
                    let step: f64 = rng.sample(StandardNormal);
                    let value = engine.theta()[k] + scales.theta * step;
                    let (delta, sum) = engine.theta_delta(k, value);
                    let ok = mh_accept(delta, rng);
                    if ok {
                        engine.accept_theta(k, value, sum);
                    }
                    tally.theta.record(ok);
                }
            }
            Block::Beta if !frozen.beta => {
                for i in 0..engine.beta().len() {
                    let step: f64 = rng.sample(StandardNormal);
                    let value = engine.beta()[i] + scales.beta * step;
                    let (delta, sum) = engine.beta_delta(i, value);
                    let ok = mh_accept(delta, rng);
                    if ok {
                        engine.accept_beta(i, value, sum);
                    }
                    tally.beta.record(ok);
                }
            }
            _ => {}
        }
    }
    if !frozen.sigma_sq {
        let v = draw_variance(model, engine.free_rows(), engine.free_sum_of_squares(), rng);
        engine.set_sigma_sq(v);
    }
    tally
}

/// One full pass: every free position row, every θ_k, every β_i, then σ².
pub fn sweep(
    state: &ParameterState,
    x: &ResponseMatrix,
    model: &ModelConfig,
    scales: &ProposalScales,
    rng: &mut ChaCha8Rng,
) -> Result<(ParameterState, SweepTally)> {
    let mut engine = Engine::new(x, model, state, false)?;
    let tally = sweep_engine(&mut engine, model, scales, &FrozenBlocks::default(), false, rng);
    Ok((engine.state(), tally))
}

/// Run a chain from the seeded default starting point.
pub fn fit(x: &ResponseMatrix, model: &ModelConfig, mcmc: &McmcConfig) -> Result<PosteriorDraws> {
    validate_data(x, model)?;
    mcmc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mcmc.seed);
    let init = initial_state(x, model, &mut rng);
    run_chain(x, model, mcmc, init, rng)
}

/// Run a chain from a caller-supplied starting point (frozen blocks stay at
/// these values).
pub fn fit_from(
    x: &ResponseMatrix,
    model: &ModelConfig,
    mcmc: &McmcConfig,
    init: ParameterState,
) -> Result<PosteriorDraws> {
    validate_data(x, model)?;
    mcmc.validate()?;
    let rng = ChaCha8Rng::seed_from_u64(mcmc.seed);
    run_chain(x, model, mcmc, init, rng)
}

fn run_chain(
    x: &ResponseMatrix,
    model: &ModelConfig,
    mcmc: &McmcConfig,
    init: ParameterState,
    rng: ChaCha8Rng,
) -> Result<PosteriorDraws> {
    init.check(x, model)?;
    if mcmc.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(mcmc.workers)
            .build()
            .map_err(|e| NirmError::Initialization(format!("worker pool: {e}")))?;
        pool.install(|| chain_loop(x, model, mcmc, init, rng, true))
    } else {
        chain_loop(x, model, mcmc, init, rng, false)
    }
}

fn chain_loop(
    x: &ResponseMatrix,
    model: &ModelConfig,
    mcmc: &McmcConfig,
    init: ParameterState,
    mut rng: ChaCha8Rng,
    parallel: bool,
) -> Result<PosteriorDraws> {
    let mut engine = Engine::new(x, model, &init, parallel)?;
    let mut scales = mcmc.scales;
    let mut window = SweepTally::default();
    let mut kept = SweepTally::default();
    let mut recent = SweepTally::default();
    let expected = mcmc.retained_count();
    let mut states = Vec::with_capacity(expected);
    let mut iterations = Vec::with_capacity(expected);
    let mut log_posterior = Vec::with_capacity(expected);

    for t in 1..=mcmc.total_iterations {
        let tally = sweep_engine(&mut engine, model, &scales, &mcmc.frozen, mcmc.random_scan, &mut rng);
        recent.add(&tally);
        if t <= mcmc.burn_in {
            window.add(&tally);
            if mcmc.adaptation.enabled && t % mcmc.adaptation.window == 0 {
                scales = adapt_scales(&window, &scales, &mcmc.adaptation);
                window = SweepTally::default();
            }
        } else {
            kept.add(&tally);
            if (t - mcmc.burn_in) % mcmc.thinning == 0 {
                let lp = engine.log_posterior();
                if !lp.is_finite() {
                    return Err(NirmError::Validation(format!(
                        "log-posterior became non-finite at sweep {t}"
                    )));
                }
                states.push(engine.state());
                iterations.push(t);
                log_posterior.push(lp);
            }
        }
        if mcmc.progress_interval > 0 && t % mcmc.progress_interval == 0 {
            let rates = AcceptanceRates::from(&recent);
            log::info!(
                "sweep {t}/{}: log-posterior {:.3}, acceptance positions {:.2} theta {:.2} beta {:.2}",
                mcmc.total_iterations,
                engine.log_posterior(),
                rates.positions,
                rates.theta,
                rates.beta
            );
            recent = SweepTally::default();
        }
    }

    Ok(PosteriorDraws {
        states,
        iterations,
        log_posterior,
        acceptance: AcceptanceRates::from(&kept),
        final_scales: scales,
        seed: mcmc.seed,
        model: *model,
        mcmc: *mcmc,
    })
}
