//! Removing rotation/reflection/translation indeterminacy across draws,
//! principal-axes orientation, distance traces, and posterior summaries.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::ResponseMatrix;
use crate::error::{NirmError, Result};
use crate::model::{derive_from, latent_spaces, Linkage};
use crate::positions::Positions;
use crate::sampler::{AcceptanceRates, PosteriorDraws};

fn to_matrix(p: &Positions) -> DMatrix<f64> {
    DMatrix::from_row_slice(p.rows(), p.dim(), p.as_slice())
}

fn from_matrix(m: &DMatrix<f64>) -> Positions {
    let mut out = Positions::zeros(m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.row_mut(r)[c] = m[(r, c)];
        }
    }
    out
}

fn centered(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let means: Vec<f64> = (0..m.ncols()).map(|c| m.column(c).mean()).collect();
    let mut out = m.clone();
    for (c, mean) in means.iter().enumerate() {
        out.column_mut(c).add_scalar_mut(-mean);
    }
    (out, means)
}

fn squared_residual(a: &Positions, b: &Positions) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Result of matching one configuration to a reference.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    pub aligned: Positions,
    /// d×d orthogonal matrix, row-major; `aligned = (x − mean(x))·Q + mean(ref)`.
    pub rotation: Vec<f64>,
    /// Squared Frobenius distance between `aligned` and the reference.
    pub residual: f64,
    /// False when the configuration or reference collapsed to one point and
    /// the identity was used instead.
    pub aligned_ok: bool,
}

/// Least-squares translation plus orthogonal transform (reflections
/// allowed) taking `x` onto `reference`.
pub fn align_to(x: &Positions, reference: &Positions) -> Result<Alignment> {
    if x.rows() != reference.rows() || x.dim() != reference.dim() {
        return Err(NirmError::validation(format!(
            "cannot align a {}×{} configuration to a {}×{} reference",
            x.rows(),
            x.dim(),
            reference.rows(),
            reference.dim()
        )));
    }
    let d = x.dim();
    let (xc, _) = centered(&to_matrix(x));
    let (rc, rmean) = centered(&to_matrix(reference));
    let scale = xc.norm() * rc.norm();
    let cross = xc.transpose() * &rc;
    let svd = cross.clone().svd(true, true);
    let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if !(scale > 0.0) || !(top > 1e-14 * scale) {
        log::warn!("Procrustes cross-product is rank-deficient; using the identity transform");
        let mut identity = vec![0.0; d * d];
        (0..d).for_each(|i| identity[i * d + i] = 1.0);
        return Ok(Alignment {
            aligned: x.clone(),
            rotation: identity,
            residual: squared_residual(x, reference),
            aligned_ok: false,
        });
    }
    let q = svd.u.expect("u computed") * svd.v_t.expect("v computed");
    let mut moved = xc * &q;
    for (c, mean) in rmean.iter().enumerate() {
        moved.column_mut(c).add_scalar_mut(*mean);
    }
    let aligned = from_matrix(&moved);
    let residual = squared_residual(&aligned, reference);
    let rotation = (0..d).flat_map(|r| (0..d).map(move |c| (r, c))).map(|(r, c)| q[(r, c)]).collect();
    Ok(Alignment {
        aligned,
        rotation,
        residual,
        aligned_ok: true,
    })
}

/// Two-pass alignment of a set of configurations: everything to the first,
/// then everything to the mean of that first pass.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedConfigurations {
    pub aligned: Vec<Positions>,
    pub reference: Positions,
    pub residuals_first_pass: Vec<f64>,
    pub residuals: Vec<f64>,
    pub warnings: Vec<String>,
}

fn mean_configuration(configs: &[Positions]) -> Positions {
    let mut mean = Positions::zeros(configs[0].rows(), configs[0].dim());
    for c in configs {
        for (m, v) in mean.as_mut_slice().iter_mut().zip(c.as_slice()) {
            *m += v;
        }
    }
    let n = configs.len() as f64;
    mean.as_mut_slice().iter_mut().for_each(|m| *m /= n);
    mean
}

pub fn align_configurations(configs: &[Positions]) -> Result<AlignedConfigurations> {
    if configs.is_empty() {
        return Err(NirmError::validation("alignment needs at least one configuration"));
    }
    let mut warnings = Vec::new();
    let first = configs[0].clone();
    if configs.len() == 1 {
        // self-alignment is the identity
        return Ok(AlignedConfigurations {
            aligned: vec![first.clone()],
            reference: first,
            residuals_first_pass: vec![0.0],
            residuals: vec![0.0],
            warnings,
        });
    }
    let mut pass1 = Vec::with_capacity(configs.len());
    let mut residuals_first_pass = Vec::with_capacity(configs.len());
    let mut skipped = 0;
    for c in configs {
        let a = align_to(c, &first)?;
        skipped += !a.aligned_ok as usize;
        residuals_first_pass.push(a.residual);
        pass1.push(a.aligned);
    }
    let reference = mean_configuration(&pass1);
    let mut aligned = Vec::with_capacity(configs.len());
    let mut residuals = Vec::with_capacity(configs.len());
    for c in configs {
        let a = align_to(c, &reference)?;
        skipped += !a.aligned_ok as usize;
        residuals.push(a.residual);
        aligned.push(a.aligned);
    }
    if skipped > 0 {
        warnings.push(format!(
            "{skipped} alignment(s) were rank-deficient and used the identity transform"
        ));
    }
    Ok(AlignedConfigurations {
        aligned,
        reference,
        residuals_first_pass,
        residuals,
        warnings,
    })
}

/// Draws with persons and items aligned jointly.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedDraws {
    pub persons: Vec<Positions>,
    pub items: Vec<Positions>,
    /// Stacked reference (persons above items).
    pub reference: Positions,
    pub residuals_first_pass: Vec<f64>,
    pub residuals: Vec<f64>,
    pub warnings: Vec<String>,
}

impl AlignedDraws {
    pub fn len(&self) -> usize {
        self.persons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.persons.is_empty()
    }
}

/// Align every retained draw's stacked (person, item) configuration.
pub fn procrustes_align(draws: &PosteriorDraws, x: &ResponseMatrix) -> Result<AlignedDraws> {
    if draws.is_empty() {
        return Err(NirmError::validation("no retained draws to align"));
    }
    let n = x.n_persons();
    let stacked = draws
        .states
        .iter()
        .map(|s| latent_spaces(s, x, &draws.model).map(|(z, w)| z.stacked(&w)))
        .collect::<Result<Vec<_>>>()?;
    let out = align_configurations(&stacked)?;
    for w in &out.warnings {
        log::warn!("{w}");
    }
    let (persons, items) = out.aligned.iter().map(|c| c.split_at(n)).unzip();
    Ok(AlignedDraws {
        persons,
        items,
        reference: out.reference,
        residuals_first_pass: out.residuals_first_pass,
        residuals: out.residuals,
        warnings: out.warnings,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrincipalAxes {
    pub rotated: Positions,
    pub center: Vec<f64>,
    /// d×d, row-major, columns are axes in decreasing-variance order.
    pub axes: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub repeated_eigenvalues: bool,
}

impl PrincipalAxes {
    /// Apply the same centering and rotation to another configuration.
    pub fn apply(&self, p: &Positions) -> Positions {
        let d = self.center.len();
        let mut out = Positions::zeros(p.rows(), d);
        for r in 0..p.rows() {
            let src = p.row(r);
            let dst = out.row_mut(r);
            for c in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += (src[j] - self.center[j]) * self.axes[j * d + c];
                }
                dst[c] = acc;
            }
        }
        out
    }
}

/// Center and rotate onto the eigenvectors of the cross-product matrix,
/// largest eigenvalue first. Each axis is signed so its largest-magnitude
/// component is positive.
pub fn principal_axes(positions: &Positions) -> Result<PrincipalAxes> {
    let (m, d) = (positions.rows(), positions.dim());
    if m < d {
        return Err(NirmError::validation(format!(
            "principal axes need at least as many points ({m}) as dimensions ({d})"
        )));
    }
    let (xc, center) = centered(&to_matrix(positions));
    let cross = xc.transpose() * &xc;
    let eig = SymmetricEigen::new(cross);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&j| eig.eigenvalues[j]).collect();
    let mut axes = vec![0.0; d * d];
    for (c, &j) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(j);
        let lead = (0..d).fold(0, |best, r| if v[r].abs() > v[best].abs() { r } else { best });
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            axes[r * d + c] = sign * v[r];
        }
    }
    let top = eigenvalues.first().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
    let repeated = eigenvalues.windows(2).any(|w| (w[0] - w[1]).abs() <= 1e-10 * top);
    if repeated {
        log::warn!("repeated eigenvalues; the principal axes are not unique");
    }
    let mut pa = PrincipalAxes {
        rotated: Positions::zeros(0, d),
        center,
        axes,
        eigenvalues,
        repeated_eigenvalues: repeated,
    };
    pa.rotated = pa.apply(positions);
    Ok(pa)
}

pub fn principal_axes_rotate(positions: &Positions) -> Result<Positions> {
    Ok(principal_axes(positions)?.rotated)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Person,
    Item,
}

/// Distance between each listed pair in every retained draw.
pub fn pair_distance_trace(
    draws: &PosteriorDraws,
    x: &ResponseMatrix,
    pairs: &[(usize, usize)],
    space: Space,
) -> Result<Vec<Vec<f64>>> {
    let len = match space {
        Space::Person => x.n_persons(),
        Space::Item => x.n_items(),
    };
    let what = match space {
        Space::Person => "person",
        Space::Item => "item",
    };
    for &(a, b) in pairs {
        for index in [a, b] {
            if index >= len {
                return Err(NirmError::OutOfBounds { what, index, len });
            }
        }
    }
    let mut out = vec![Vec::with_capacity(draws.len()); pairs.len()];
    for s in &draws.states {
        let pos = match (space, draws.model.linkage) {
            (Space::Person, Linkage::ItemFromPerson) | (Space::Item, Linkage::PersonFromItem) => {
                s.free_positions.clone()
            }
            _ => derive_from(x, &s.free_positions, &draws.model)?,
        };
        for (series, &(a, b)) in out.iter_mut().zip(pairs) {
            series.push(pos.distance(a, b));
        }
    }
    Ok(out)
}

/// Sample autocorrelation at `lag` (biased autocovariance normalization).
pub fn autocorrelation(series: &[f64], lag: usize) -> f64 {
    let n = series.len();
    if lag >= n || n < 2 {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let c0: f64 = series.iter().map(|v| (v - mean) * (v - mean)).sum();
    if c0 == 0.0 {
        return 0.0;
    }
    let ck: f64 = (0..n - lag)
        .map(|t| (series[t] - mean) * (series[t + lag] - mean))
        .sum();
    ck / c0
}

/// Effective sample size by Geyer's initial positive (monotone) sequence.
/// A constant chain counts every draw.
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return n as f64;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let c0: f64 = dev.iter().map(|v| v * v).sum();
    if !(c0 > 1e-300) {
        return n as f64;
    }
    let rho = |k: usize| -> f64 {
        let mut s = 0.0;
        for t in 0..n - k {
            s += dev[t] * dev[t + k];
        }
        s / c0
    };
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let gamma = rho(2 * m) + rho(2 * m + 1);
        if gamma <= 0.0 {
            break;
        }
        let gamma = gamma.min(prev);
        sum += gamma;
        prev = gamma;
        m += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    n as f64 / tau
}

/// Linear-interpolation quantile of sorted data (R type 7).
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub const MIN_DRAWS_FOR_QUANTILES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarSummary {
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
    pub min: f64,
    pub max: f64,
    pub ess: f64,
}

/// Summary of one scalar chain; with fewer than ten draws the 5%/95%
/// quantiles fall back to min/max.
pub fn summarize_chain(chain: &[f64]) -> ScalarSummary {
    assert!(!chain.is_empty(), "summary of an empty chain");
    let n = chain.len() as f64;
    let mean = chain.iter().sum::<f64>() / n;
    let var = if chain.len() > 1 {
        chain.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mut sorted = chain.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let (q05, q95) = if chain.len() >= MIN_DRAWS_FOR_QUANTILES {
        (quantile_sorted(&sorted, 0.05), quantile_sorted(&sorted, 0.95))
    } else {
        (min, max)
    };
    ScalarSummary {
        mean,
        sd: var.sqrt(),
        median: quantile_sorted(&sorted, 0.5),
        q05,
        q95,
        min,
        max,
        ess: effective_sample_size(chain),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub person_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub theta: Vec<ScalarSummary>,
    pub beta: Vec<ScalarSummary>,
    pub sigma_sq: ScalarSummary,
    /// Point estimates in principal-axes orientation.
    pub person_positions: Positions,
    pub item_positions: Positions,
    /// Per-unit posterior variance of each coordinate (averaged over axes),
    /// from the aligned draws.
    pub person_position_variance: Vec<f64>,
    pub item_position_variance: Vec<f64>,
    /// Row-major distance matrices of the point estimates.
    pub person_distances: Vec<f64>,
    pub item_distances: Vec<f64>,
    pub acceptance: AcceptanceRates,
    pub n_draws: usize,
    pub warnings: Vec<String>,
}

impl PosteriorSummary {
    pub fn theta_means(&self) -> Vec<f64> {
        self.theta.iter().map(|s| s.mean).collect()
    }

    pub fn beta_means(&self) -> Vec<f64> {
        self.beta.iter().map(|s| s.mean).collect()
    }
}

fn per_unit_variance(draws: &[Positions], mean: &Positions) -> Vec<f64> {
    let (m, d) = (mean.rows(), mean.dim());
    let denom = (draws.len().max(2) - 1) as f64 * d as f64;
    (0..m)
        .map(|r| {
            draws
                .iter()
                .map(|p| {
                    p.row(r)
                        .iter()
                        .zip(mean.row(r))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / denom
        })
        .collect()
}

/// Scalar summaries from the raw chains; position estimates are the mean
/// of the aligned draws in the free space, rotated to principal axes
/// (computed on persons and items together), with the other space derived
/// from it through the linkage.
pub fn summarize(
    aligned: &AlignedDraws,
    draws: &PosteriorDraws,
    x: &ResponseMatrix,
) -> Result<PosteriorSummary> {
    if draws.is_empty() || aligned.len() != draws.len() {
        return Err(NirmError::validation(
            "aligned draws must be non-empty and match the chain length",
        ));
    }
    let mut warnings = aligned.warnings.clone();
    if draws.len() < MIN_DRAWS_FOR_QUANTILES {
        let msg = format!(
            "only {} retained draws; 5%/95% quantiles replaced by min/max",
            draws.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let model = &draws.model;
    let theta = (0..x.n_persons())
        .map(|k| summarize_chain(&draws.theta_chain(k)))
        .collect();
    let beta = (0..x.n_items())
        .map(|i| summarize_chain(&draws.beta_chain(i)))
        .collect();
    let sigma_sq = summarize_chain(&draws.sigma_sq_chain());

    let person_mean = mean_configuration(&aligned.persons);
    let item_mean = mean_configuration(&aligned.items);
    let person_position_variance = per_unit_variance(&aligned.persons, &person_mean);
    let item_position_variance = per_unit_variance(&aligned.items, &item_mean);
    let pa = principal_axes(&person_mean.stacked(&item_mean))?;
    if pa.repeated_eigenvalues {
        warnings.push("repeated eigenvalues in the principal-axes rotation".into());
    }
    let (person_positions, item_positions) = match model.linkage {
        Linkage::ItemFromPerson => {
            let z = pa.apply(&person_mean);
            let w = derive_from(x, &z, model)?;
            (z, w)
        }
        Linkage::PersonFromItem => {
            let w = pa.apply(&item_mean);
            let z = derive_from(x, &w, model)?;
            (z, w)
        }
    };
    Ok(PosteriorSummary {
        person_ids: x.person_ids().to_vec(),
        item_ids: x.item_ids().to_vec(),
        theta,
        beta,
        sigma_sq,
        person_distances: person_positions.distance_matrix(),
        item_distances: item_positions.distance_matrix(),
        person_positions,
        item_positions,
        person_position_variance,
        item_position_variance,
        acceptance: draws.acceptance,
        n_draws: draws.len(),
        warnings,
    })
}
