use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use nirm::analysis::Metric;
use nirm::artifact::{
    read_draws_csv, read_json, sha256_file, write_draws_csv, write_json, Manifest, DRAWS_FILE, ESTIMATES_FILE,
};
use nirm::data::{pairwise_counts, CsvOptions, ResponseMatrix};
use nirm::export::{export_artifacts, fmt6, ExportOptions};
use nirm::extend::{
    approx_new_intercept, approx_new_position, sample_new_items, sample_new_persons, FittedModel, NewDataCase,
    NewDataKind, NewUnit, UnitDraws, UpdatePolicy,
};
use nirm::model::{Linkage, ModelConfig};
use nirm::post::{procrustes_align, summarize, PosteriorSummary};
use nirm::sampler::{fit, McmcConfig, ProposalScales};
use nirm::simulate::{simulate_responses, SimulationConfig};
use nirm::NirmError;

use crate::args::{CountsArgs, ExportArgs, ExtendCommon, FitArgs, LinkArgs, ScoreArgs, SimulateArgs};
use crate::config::{resolve_with_data, RunConfig};
use crate::error::{CliError, CliResult};
use crate::staging::Staged;

pub const DATA_FILE: &str = "data.csv";
const ARTIFACT_LOCK: &str = ".nirm.lock";

/// What `estimates.json` holds: the summary plus what is needed to rebuild
/// the chain object from `draws.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub model: ModelConfig,
    pub mcmc: McmcConfig,
    pub final_scales: ProposalScales,
    pub summary: PosteriorSummary,
}

fn deviations() -> Vec<String> {
    vec![
        "position estimates: mean of aligned free-space draws rotated to principal axes; the derived space is the linkage applied to that estimate".into(),
        "network edges with a missing response are dropped from the likelihood".into(),
        "theta_summary.csv averages posterior means and quantiles over persons sharing a sum score".into(),
    ]
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<PathBuf> {
    let (config, data) = resolve_with_data(args.config.as_deref(), &args.run.to_values())
        .map_err(CliError::invalid_config)?;
    let x = data.ok_or_else(|| CliError::usage("no data file given (use --data or `data` in the config file)"))?;
    let target = config.output_dir();
    let staged = Staged::begin(&target, args.overwrite, None)?;
    info!(
        "fitting {}×{} responses, d={}, {} / {} linkage, {} sweeps",
        x.n_persons(),
        x.n_items(),
        config.model.dim,
        config.model.encoding,
        config.model.linkage,
        config.mcmc.total_iterations
    );
    write_fit_artifact(&x, &config, staged.dir())?;
    let out = staged.commit()?;
    info!("wrote {}", out.display());
    Ok(out)
}

fn write_fit_artifact(x: &ResponseMatrix, config: &RunConfig, dir: &Path) -> CliResult<()> {
    let draws = fit(x, &config.model, &config.mcmc)?;
    let aligned = procrustes_align(&draws, x)?;
    let summary = summarize(&aligned, &draws, x)?;
    for w in &summary.warnings {
        log::warn!("{w}");
    }

    x.write_csv(BufWriter::new(File::create(dir.join(DATA_FILE))?), &config.missing_token)?;
    write_draws_csv(&draws, x, BufWriter::new(File::create(dir.join(DRAWS_FILE))?))?;
    let record = FitRecord {
        model: config.model,
        mcmc: config.mcmc,
        final_scales: draws.final_scales,
        summary: summary.clone(),
    };
    write_json(&dir.join(ESTIMATES_FILE), &record)?;

    let options = ExportOptions {
        metric: config.metric,
        display_threshold: config.display_threshold,
        layout_seed: config.layout_seed,
        overwrite: false,
        config: config.echo(),
        deviations: deviations(),
        extra_files: vec![DATA_FILE.into(), DRAWS_FILE.into(), ESTIMATES_FILE.into()],
        ..ExportOptions::default()
    };
    export_artifacts(&summary, x, dir, &options)?;
    Ok(())
}

/// A fitted artifact read back from disk.
pub struct LoadedArtifact {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub record: FitRecord,
    pub data: ResponseMatrix,
}

fn stored_csv_options(missing: Option<&str>) -> CsvOptions {
    CsvOptions {
        missing_token: missing.unwrap_or("NA").to_string(),
        has_person_id_column: true,
    }
}

pub fn load_artifact(dir: &Path, original: Option<&Path>) -> CliResult<LoadedArtifact> {
    if !dir.is_dir() {
        return Err(CliError::usage(format!("artifact directory `{}` does not exist", dir.display())));
    }
    let manifest = Manifest::read(dir)?;
    let record: FitRecord = read_json(&dir.join(ESTIMATES_FILE))?;
    let missing = manifest.config.get("missing_token").and_then(|v| v.as_str()).map(str::to_string);
    let data_path = original.map(Path::to_path_buf).unwrap_or_else(|| dir.join(DATA_FILE));
    if !data_path.is_file() {
        return Err(CliError::usage(format!("original data `{}` does not exist", data_path.display())));
    }
    let opts = match original {
        // user-supplied originals follow the same layout rules as fit input
        Some(_) => CsvOptions {
            missing_token: missing.clone().unwrap_or_else(|| "NA".into()),
            has_person_id_column: manifest
                .config
                .get("person_id_column")
                .and_then(|v| v.as_bool())
                .unwrap_or(true),
        },
        None => stored_csv_options(missing.as_deref()),
    };
    let data = ResponseMatrix::load_csv(&data_path, &opts)?;
    manifest.check_data(&data)?;
    Ok(LoadedArtifact {
        dir: dir.to_path_buf(),
        manifest,
        record,
        data,
    })
}

impl LoadedArtifact {
    pub fn fitted(&self) -> CliResult<FittedModel> {
        Ok(FittedModel::with_expected_hash(
            &self.record.summary,
            self.data.clone(),
            self.record.model,
            &self.manifest.data_hash,
        )?)
    }
}

fn sampler_config(base: &McmcConfig, common: &ExtendCommon) -> CliResult<McmcConfig> {
    let s = &common.sampler;
    let mut m = *base;
    m.seed = s.seed.unwrap_or(m.seed);
    m.total_iterations = s.iters.unwrap_or(m.total_iterations);
    m.burn_in = s.burnin.unwrap_or(m.burn_in);
    m.thinning = s.thin.unwrap_or(m.thinning);
    m.workers = s.workers.unwrap_or(m.workers);
    let v = m.violations();
    if v.is_empty() {
        Ok(m)
    } else {
        Err(CliError::invalid_config(v))
    }
}

fn load_payload(common: &ExtendCommon) -> CliResult<ResponseMatrix> {
    if !common.data.is_file() {
        return Err(CliError::usage(format!("data file `{}` does not exist", common.data.display())));
    }
    let opts = stored_csv_options(common.missing_token.as_deref());
    let file = File::open(&common.data)?;
    Ok(ResponseMatrix::read_block_csv(file, &opts)?)
}

fn extension_target(common: &ExtendCommon, artifact: &LoadedArtifact, label: &str, payload: &ResponseMatrix) -> PathBuf {
    common.out.clone().unwrap_or_else(|| {
        let hash = payload.content_hash();
        artifact.dir.join("extend").join(format!("{label}-{}", &hash[..12]))
    })
}

#[derive(Serialize)]
struct ExtensionManifest<'a> {
    format: &'static str,
    kind: &'a str,
    artifact_data_hash: &'a str,
    payload_hash: String,
    policy: Option<&'a str>,
    approx_only: bool,
    mcmc: Option<McmcConfig>,
    warnings: Vec<String>,
    files: BTreeMap<String, String>,
}

fn finish_extension(dir: &Path, mut manifest: ExtensionManifest<'_>, files: &[&str]) -> CliResult<()> {
    for name in files {
        manifest.files.insert(name.to_string(), sha256_file(&dir.join(name))?);
    }
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(())
}

fn dims_header(prefix: &str, d: usize, suffix: &str) -> Vec<String> {
    (1..=d).map(|c| format!("{prefix}dim{c}{suffix}")).collect()
}

fn push_unit(rec: &mut Vec<String>, u: &UnitDraws) {
    let s = u.intercept_summary();
    rec.extend([fmt6(s.mean), fmt6(s.q05), fmt6(s.q95)]);
    rec.extend(u.position_mean().into_iter().map(fmt6));
    rec.extend(u.position_sd().into_iter().map(fmt6));
}

fn csv_text(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", header.join(","));
    for r in rows {
        let _ = writeln!(out, "{}", r.join(","));
    }
    out
}

pub fn cmd_extend_score(args: &ScoreArgs) -> CliResult<PathBuf> {
    let common = &args.common;
    let artifact = load_artifact(&common.artifact, common.original.as_deref())?;
    let fitted = artifact.fitted()?;
    let payload = load_payload(common)?;
    // reorder columns to the fitted item order
    let item_ids = fitted.data.item_ids();
    let cols: BTreeMap<&str, usize> = payload.item_ids().iter().enumerate().map(|(c, s)| (s.as_str(), c)).collect();
    let missing: Vec<&str> = item_ids.iter().map(String::as_str).filter(|id| !cols.contains_key(id)).collect();
    if !missing.is_empty() || payload.n_items() != item_ids.len() {
        return Err(CliError::usage(format!(
            "new rows must have exactly the fitted item columns{}",
            if missing.is_empty() { String::new() } else { format!("; missing {}", missing.join(", ")) }
        )));
    }
    let rows: Vec<Vec<nirm::Response>> = (0..payload.n_persons())
        .map(|k| item_ids.iter().map(|id| payload.get(k, cols[id.as_str()])).collect())
        .collect();

    let d = fitted.dim();
    let mut warnings = Vec::new();
    let position_ok = fitted.config.linkage == Linkage::PersonFromItem;
    if !position_ok {
        warnings.push("closed-form person positions need person-from-item linkage; approx positions left empty".into());
    }
    let mut approx = Vec::with_capacity(rows.len());
    for (k, row) in rows.iter().enumerate() {
        let theta = match approx_new_intercept(row, &fitted) {
            Ok(t) => Some(t),
            Err(e @ NirmError::NoSumScoreMatch { .. }) => {
                if args.approx_only {
                    return Err(CliError::runtime(format!("person `{}`: {e}", payload.person_ids()[k])));
                }
                warnings.push(format!("person `{}`: {e}; sampling starts θ at 0", payload.person_ids()[k]));
                None
            }
            Err(e) => return Err(e.into()),
        };
        let z = if position_ok { Some(approx_new_position(NewUnit::Person(row), &fitted)?) } else { None };
        approx.push((theta, z));
    }

    let mcmc = if args.approx_only { None } else { Some(sampler_config(&artifact.record.mcmc, common)?) };
    let sampled = match &mcmc {
        Some(m) => {
            let ordered = ResponseMatrix::block(
                payload.person_ids().to_vec(),
                item_ids.to_vec(),
                rows.iter().flatten().copied().collect(),
            )?;
            Some(sample_new_persons(&ordered, &fitted, m)?)
        }
        None => None,
    };

    let mut header = vec!["person".to_string(), "sum_score".into(), "approx_theta".into()];
    header.extend(dims_header("approx_", d, ""));
    if sampled.is_some() {
        header.extend(["theta_mean".into(), "theta_q05".into(), "theta_q95".into()]);
        header.extend(dims_header("", d, "_mean"));
        header.extend(dims_header("", d, "_sd"));
    }
    let na = || "NA".to_string();
    let table: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let mut rec = vec![
                payload.person_ids()[k].clone(),
                row.iter().filter(|r| r.is_one()).count().to_string(),
                approx[k].0.map(fmt6).unwrap_or_else(na),
            ];
            match &approx[k].1 {
                Some(z) => rec.extend(z.iter().map(|&v| fmt6(v))),
                None => rec.extend((0..d).map(|_| na())),
            }
            if let Some(s) = &sampled {
                push_unit(&mut rec, &s[k]);
            }
            rec
        })
        .collect();

    let label = if args.approx_only { "score-approx" } else { "score" };
    let target = extension_target(common, &artifact, label, &payload);
    let staged = Staged::begin(&target, common.overwrite, Some(artifact.dir.join(ARTIFACT_LOCK)))?;
    std::fs::write(staged.dir().join("persons.csv"), csv_text(&header, &table))?;
    let manifest = ExtensionManifest {
        format: "nirm-extension/1",
        kind: "score",
        artifact_data_hash: &artifact.manifest.data_hash,
        payload_hash: payload.content_hash(),
        policy: None,
        approx_only: args.approx_only,
        mcmc,
        warnings,
        files: BTreeMap::new(),
    };
    finish_extension(staged.dir(), manifest, &["persons.csv"])?;
    staged.commit()
}

pub fn cmd_extend_link(args: &LinkArgs) -> CliResult<PathBuf> {
    let common = &args.common;
    let artifact = load_artifact(&common.artifact, common.original.as_deref())?;
    let fitted = artifact.fitted()?;
    let payload = load_payload(common)?;
    let policy: UpdatePolicy = match &args.policy {
        Some(p) => p.parse()?,
        None => artifact
            .manifest
            .config
            .get("policy")
            .and_then(|v| v.as_str())
            .map(str::parse)
            .transpose()?
            .unwrap_or_default(),
    };
    let known: HashSet<&str> = fitted.data.person_ids().iter().map(String::as_str).collect();
    let fitted_count = payload.person_ids().iter().filter(|id| known.contains(id.as_str())).count();
    let kind = if fitted_count == payload.n_persons() {
        NewDataKind::NewItemsSamePersons
    } else if fitted_count == 0 {
        NewDataKind::NewPersonsWithNewItems
    } else {
        return Err(CliError::usage(
            "payload mixes fitted and new person ids; split it into separate runs",
        ));
    };
    let mcmc = sampler_config(&artifact.record.mcmc, common)?;
    let case = NewDataCase { kind, payload: payload.clone(), policy };
    let ext = sample_new_items(&case, &fitted, &mcmc)?;

    let d = fitted.dim();
    let unit_header = |first: &str, intercept: &str| {
        let mut h = vec![first.to_string(), format!("{intercept}_mean"), format!("{intercept}_q05"), format!("{intercept}_q95")];
        h.extend(dims_header("", d, "_mean"));
        h.extend(dims_header("", d, "_sd"));
        h
    };
    let unit_rows = |units: &[UnitDraws]| -> Vec<Vec<String>> {
        units
            .iter()
            .map(|u| {
                let mut rec = vec![u.id.clone()];
                push_unit(&mut rec, u);
                rec
            })
            .collect()
    };
    let target = extension_target(common, &artifact, &format!("link-{}", policy.as_str()), &payload);
    let staged = Staged::begin(&target, common.overwrite, Some(artifact.dir.join(ARTIFACT_LOCK)))?;
    let mut files = vec!["items.csv", "fitted_items.csv"];
    std::fs::write(staged.dir().join("items.csv"), csv_text(&unit_header("item", "beta"), &unit_rows(&ext.items)))?;
    if !ext.persons.is_empty() {
        std::fs::write(
            staged.dir().join("persons.csv"),
            csv_text(&unit_header("person", "theta"), &unit_rows(&ext.persons)),
        )?;
        files.push("persons.csv");
    }
    let mut old_header = vec!["item".to_string()];
    old_header.extend(dims_header("", d, ""));
    let old_rows: Vec<Vec<String>> = fitted
        .data
        .item_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let mut rec = vec![id.clone()];
            rec.extend(ext.old_item_positions.row(i).iter().map(|&v| fmt6(v)));
            rec
        })
        .collect();
    std::fs::write(staged.dir().join("fitted_items.csv"), csv_text(&old_header, &old_rows))?;
    let manifest = ExtensionManifest {
        format: "nirm-extension/1",
        kind: match kind {
            NewDataKind::NewItemsSamePersons => "new-items-same-persons",
            _ => "new-persons-with-new-items",
        },
        artifact_data_hash: &artifact.manifest.data_hash,
        payload_hash: payload.content_hash(),
        policy: Some(policy.as_str()),
        approx_only: false,
        mcmc: Some(mcmc),
        warnings: ext.warnings.clone(),
        files: BTreeMap::new(),
    };
    finish_extension(staged.dir(), manifest, &files)?;
    staged.commit()
}

pub fn cmd_export(args: &ExportArgs) -> CliResult<PathBuf> {
    let artifact = load_artifact(&args.artifact, None)?;
    let x = &artifact.data;
    let rec = &artifact.record;
    let table = read_draws_csv(File::open(artifact.dir.join(DRAWS_FILE))?, x, &rec.model)?;
    let draws = table.into_draws(rec.summary.acceptance, rec.final_scales, rec.model, rec.mcmc);
    let aligned = procrustes_align(&draws, x)?;
    let summary = summarize(&aligned, &draws, x)?;

    let cfg = &artifact.manifest.config;
    let metric: Metric = match &args.metric {
        Some(m) => m.parse()?,
        None => cfg.get("metric").and_then(|v| v.as_str()).unwrap_or("s1").parse()?,
    };
    let display_threshold = args
        .display_threshold
        .or_else(|| cfg.get("display_threshold").and_then(|v| v.as_f64()));
    let layout_seed = args
        .layout_seed
        .or_else(|| cfg.get("layout_seed").and_then(|v| v.as_u64()))
        .unwrap_or(1);
    let mut echo = cfg.clone();
    if let Some(map) = echo.as_object_mut() {
        map.remove("export");
        map.insert("metric".into(), metric.as_str().into());
        map.insert("display_threshold".into(), display_threshold.into());
        map.insert("layout_seed".into(), layout_seed.into());
    }
    let target = args.out.clone().unwrap_or_else(|| artifact.dir.join("export"));
    let staged = Staged::begin(&target, args.overwrite, Some(artifact.dir.join(ARTIFACT_LOCK)))?;
    let options = ExportOptions {
        metric,
        display_threshold,
        layout_seed,
        config: echo,
        deviations: artifact.manifest.deviations.clone(),
        ..ExportOptions::default()
    };
    export_artifacts(&summary, x, staged.dir(), &options)?;
    staged.commit()
}

#[derive(Serialize)]
struct Truth<'a> {
    config: &'a SimulationConfig,
    person_positions: Vec<Vec<f64>>,
    item_positions: Vec<Vec<f64>>,
    beta: &'a [f64],
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<PathBuf> {
    let cfg = SimulationConfig {
        n_persons: args.persons,
        n_items: args.items,
        dim: args.dim,
        beta_mean: args.beta_mean,
        beta_sd: args.beta_sd,
        seed: args.seed,
    };
    for path in std::iter::once(&args.out).chain(args.truth.as_ref()) {
        if path.exists() && !args.overwrite {
            return Err(CliError::usage(format!(
                "`{}` already exists; pass --overwrite to replace it",
                path.display()
            )));
        }
    }
    let sim = simulate_responses(&cfg)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    sim.responses.write_csv(BufWriter::new(File::create(&args.out)?), "NA")?;
    if let Some(truth) = &args.truth {
        let t = Truth {
            config: &cfg,
            person_positions: sim.person_positions.to_rows(),
            item_positions: sim.item_positions.to_rows(),
            beta: &sim.beta,
        };
        write_json(truth, &t)?;
    }
    Ok(args.out.clone())
}

pub fn cmd_counts(args: &CountsArgs) -> CliResult<String> {
    if !args.data.is_file() {
        return Err(CliError::usage(format!("data file `{}` does not exist", args.data.display())));
    }
    let opts = CsvOptions {
        missing_token: args.missing_token.clone().unwrap_or_else(|| "NA".into()),
        has_person_id_column: !args.no_person_ids,
    };
    let x = ResponseMatrix::load_csv(&args.data, &opts)?;
    let mut idx = Vec::with_capacity(args.items.len());
    for id in &args.items {
        match x.item_ids().iter().position(|s| s == id) {
            Some(i) => idx.push(i),
            None => return Err(CliError::usage(format!("unknown item `{id}`"))),
        }
    }
    let counts = pairwise_counts(&x, &idx, args.cap)?;
    let json = serde_json::json!({
        "items": args.items,
        "complete": counts.complete,
        "patterns": counts.patterns,
        "pairs": counts.pairs.iter().map(|p| serde_json::json!({
            "item_a": x.item_ids()[p.item_a],
            "item_b": x.item_ids()[p.item_b],
            "concordant": p.concordant,
            "discordant": p.discordant,
        })).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&json).map_err(|e| CliError::runtime(e.to_string()))? + "\n";
    if let Some(out) = &args.out {
        std::fs::write(out, &text)?;
    }
    Ok(text)
}
