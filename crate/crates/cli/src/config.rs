//! Flat TOML run configuration. Precedence: defaults < file < flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nirm::analysis::Metric;
use nirm::data::{CsvOptions, ResponseMatrix};
use nirm::model::{data_violations, Linkage, ModelConfig};
use nirm::sampler::McmcConfig;
use nirm::UpdatePolicy;

pub const OUTPUT_ROOT_ENV: &str = "NIRM_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "nirm-output";

/// Every key is optional; the same shape carries file values and
/// command-line overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigValues {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub dim: Option<usize>,
    pub encoding: Option<String>,
    pub linkage: Option<String>,
    pub iters: Option<usize>,
    pub burnin: Option<usize>,
    pub thin: Option<usize>,
    pub workers: Option<usize>,
    pub scale_positions: Option<f64>,
    pub scale_theta: Option<f64>,
    pub scale_beta: Option<f64>,
    pub adapt: Option<bool>,
    pub adapt_window: Option<usize>,
    pub random_scan: Option<bool>,
    pub sigma_theta_sq: Option<f64>,
    pub sigma_beta_sq: Option<f64>,
    pub a_sigma: Option<f64>,
    pub b_sigma: Option<f64>,
    pub epsilon: Option<f64>,
    pub metric: Option<String>,
    pub display_threshold: Option<f64>,
    pub layout_seed: Option<u64>,
    pub missing_token: Option<String>,
    pub person_id_column: Option<bool>,
    pub policy: Option<String>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),* $(,)?) => {
        ConfigValues { $($field: $top.$field.or($base.$field)),* }
    };
}

impl ConfigValues {
    /// Values in `top` win.
    pub fn overlay(self, top: ConfigValues) -> ConfigValues {
        let base = self;
        overlay!(base, top;
            data, out, seed, dim, encoding, linkage, iters, burnin, thin, workers,
            scale_positions, scale_theta, scale_beta, adapt, adapt_window, random_scan,
            sigma_theta_sq, sigma_beta_sq, a_sigma, b_sigma, epsilon, metric,
            display_threshold, layout_seed, missing_token, person_id_column, policy,
        )
    }
}

/// Fully resolved configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub mcmc: McmcConfig,
    pub metric: Metric,
    pub display_threshold: Option<f64>,
    pub layout_seed: u64,
    pub missing_token: String,
    pub person_id_column: bool,
    pub policy: UpdatePolicy,
}

impl RunConfig {
    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            missing_token: self.missing_token.clone(),
            has_person_id_column: self.person_id_column,
        }
    }

    /// The merged configuration as recorded in manifests. The output path
    /// is left out so that the same run written to two places produces the
    /// same manifest.
    pub fn echo(&self) -> serde_json::Value {
        let m = &self.model;
        let c = &self.mcmc;
        serde_json::json!({
            "data": self.data.as_ref().map(|p| p.display().to_string()),
            "seed": c.seed,
            "dim": m.dim,
            "encoding": m.encoding.as_str(),
            "linkage": m.linkage.as_str(),
            "iters": c.total_iterations,
            "burnin": c.burn_in,
            "thin": c.thinning,
            "workers": c.workers,
            "scale_positions": c.scales.positions,
            "scale_theta": c.scales.theta,
            "scale_beta": c.scales.beta,
            "adapt": c.adaptation.enabled,
            "adapt_window": c.adaptation.window,
            "random_scan": c.random_scan,
            "sigma_theta_sq": m.priors.sigma_theta_sq,
            "sigma_beta_sq": m.priors.sigma_beta_sq,
            "a_sigma": m.priors.a_sigma,
            "b_sigma": m.priors.b_sigma,
            "epsilon": m.epsilon,
            "metric": self.metric.as_str(),
            "display_threshold": self.display_threshold,
            "layout_seed": self.layout_seed,
            "missing_token": self.missing_token,
            "person_id_column": self.person_id_column,
            "policy": self.policy.as_str(),
        })
    }

    /// `--out` if given, else `$NIRM_OUTPUT_ROOT/<data file stem>`.
    pub fn output_dir(&self) -> PathBuf {
        if let Some(out) = &self.out {
            return out.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
        let stem = self
            .data
            .as_deref()
            .and_then(Path::file_stem)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".to_string());
        root.join(stem)
    }
}

pub fn read_config_file(path: &Path) -> Result<ConfigValues, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config file `{}`: {e}", path.display()))?;
    toml::from_str(&text).map_err(|e| format!("config file `{}`: {e}", path.display()))
}

fn parse<T: std::str::FromStr>(value: Option<&str>, default: T, errors: &mut Vec<String>) -> T
where
    T::Err: std::fmt::Display,
{
    match value {
        None => default,
        Some(s) => s.parse::<T>().unwrap_or_else(|e| {
            errors.push(e.to_string());
            default
        }),
    }
}

/// Merge defaults, the optional file and the overrides, then check every
/// constraint. All violations are reported together.
pub fn resolve(file: Option<&Path>, overrides: &ConfigValues) -> Result<RunConfig, Vec<String>> {
    let mut errors = Vec::new();
    let from_file = match file {
        Some(p) => read_config_file(p).unwrap_or_else(|e| {
            errors.push(e);
            ConfigValues::default()
        }),
        None => ConfigValues::default(),
    };
    let v = from_file.overlay(overrides.clone());

    let mut model = ModelConfig::default();
    model.encoding = parse(v.encoding.as_deref(), model.encoding, &mut errors);
    model.linkage = parse::<Linkage>(v.linkage.as_deref(), model.linkage, &mut errors);
    model.dim = v.dim.unwrap_or(model.dim);
    model.epsilon = v.epsilon.unwrap_or(model.epsilon);
    let pr = &mut model.priors;
    pr.sigma_theta_sq = v.sigma_theta_sq.unwrap_or(pr.sigma_theta_sq);
    pr.sigma_beta_sq = v.sigma_beta_sq.unwrap_or(pr.sigma_beta_sq);
    pr.a_sigma = v.a_sigma.unwrap_or(pr.a_sigma);
    pr.b_sigma = v.b_sigma.unwrap_or(pr.b_sigma);

    let mut mcmc = McmcConfig::default();
    mcmc.seed = v.seed.unwrap_or(mcmc.seed);
    mcmc.total_iterations = v.iters.unwrap_or(mcmc.total_iterations);
    mcmc.burn_in = v.burnin.unwrap_or(mcmc.burn_in);
    mcmc.thinning = v.thin.unwrap_or(mcmc.thinning);
    mcmc.workers = v.workers.unwrap_or(mcmc.workers);
    mcmc.scales.positions = v.scale_positions.unwrap_or(mcmc.scales.positions);
    mcmc.scales.theta = v.scale_theta.unwrap_or(mcmc.scales.theta);
    mcmc.scales.beta = v.scale_beta.unwrap_or(mcmc.scales.beta);
    mcmc.adaptation.enabled = v.adapt.unwrap_or(mcmc.adaptation.enabled);
    mcmc.adaptation.window = v.adapt_window.unwrap_or(mcmc.adaptation.window);
    mcmc.random_scan = v.random_scan.unwrap_or(mcmc.random_scan);

    let metric = parse(v.metric.as_deref(), Metric::S1, &mut errors);
    let policy = parse(v.policy.as_deref(), UpdatePolicy::default(), &mut errors);
    if let Some(t) = v.display_threshold {
        if !(0.0..=1.0).contains(&t) {
            errors.push(format!("display_threshold must lie in [0, 1] (got {t})"));
        }
    }
    errors.extend(model.violations());
    errors.extend(mcmc.violations());

    let config = RunConfig {
        data: v.data,
        out: v.out,
        model,
        mcmc,
        metric,
        display_threshold: v.display_threshold,
        layout_seed: v.layout_seed.unwrap_or(1),
        missing_token: v.missing_token.unwrap_or_else(|| "NA".to_string()),
        person_id_column: v.person_id_column.unwrap_or(true),
        policy,
    };
    if errors.is_empty() {
        Ok(config)
    } else {
        Err(errors)
    }
}

/// [`resolve`], then load the data (if configured) and check it against
/// the model. Returns the data so callers need not read it twice.
pub fn resolve_with_data(
    file: Option<&Path>,
    overrides: &ConfigValues,
) -> Result<(RunConfig, Option<ResponseMatrix>), Vec<String>> {
    let resolved = resolve(file, overrides);
    let (config, mut errors) = match resolved {
        Ok(c) => (Some(c), Vec::new()),
        Err(e) => (None, e),
    };
    // still inspect the data when other settings are broken, so one run
    // reports everything
    let data_path = match &config {
        Some(c) => c.data.clone(),
        None => file
            .and_then(|p| read_config_file(p).ok())
            .unwrap_or_default()
            .overlay(overrides.clone())
            .data,
    };
    let mut data = None;
    if let Some(path) = data_path {
        if !path.is_file() {
            errors.push(format!("data file `{}` does not exist", path.display()));
        } else {
            let opts = config.as_ref().map(RunConfig::csv_options).unwrap_or_else(|| CsvOptions {
                has_person_id_column: true,
                ..CsvOptions::default()
            });
            match ResponseMatrix::load_csv(&path, &opts) {
                Ok(x) => {
                    if let Some(c) = &config {
                        errors.extend(data_violations(&x, &c.model));
                    }
                    data = Some(x);
                }
                Err(e) => errors.push(format!("data file `{}`: {e}", path.display())),
            }
        }
    }
    match config {
        Some(c) if errors.is_empty() => Ok((c, data)),
        _ => Err(errors),
    }
}

/// Merged, validated configuration (including data feasibility when a
/// data path is configured).
pub fn validate_config(file: Option<&Path>, overrides: &ConfigValues) -> Result<RunConfig, Vec<String>> {
    resolve_with_data(file, overrides).map(|(c, _)| c)
}
