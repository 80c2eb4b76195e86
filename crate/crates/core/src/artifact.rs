//! On-disk pieces of a fit: raw draws at full precision, JSON estimates and
//! the manifest that ties them to the input data.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::ResponseMatrix;
use crate::error::{NirmError, Result};
use crate::model::{ModelConfig, ParameterState};
use crate::positions::Positions;
use crate::sampler::{AcceptanceRates, McmcConfig, PosteriorDraws, ProposalScales};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DRAWS_FILE: &str = "draws.csv";
pub const ESTIMATES_FILE: &str = "estimates.json";
pub const ARTIFACT_FORMAT: &str = "nirm-artifact/1";

/// Everything needed to trust and re-read an artifact directory. Contains
/// no timestamps so identical runs produce identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: String,
    pub data_hash: String,
    pub n_persons: usize,
    pub n_items: usize,
    /// Merged run configuration as supplied by the caller.
    pub config: serde_json::Value,
    pub deviations: Vec<String>,
    pub warnings: Vec<String>,
    /// File name → sha256 of its contents.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(x: &ResponseMatrix, config: serde_json::Value) -> Self {
        Manifest {
            format: ARTIFACT_FORMAT.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            data_hash: x.content_hash(),
            n_persons: x.n_persons(),
            n_items: x.n_items(),
            config,
            deviations: Vec::new(),
            warnings: Vec::new(),
            files: BTreeMap::new(),
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let m: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
        if m.format != ARTIFACT_FORMAT {
            return Err(NirmError::validation(format!(
                "unsupported artifact format `{}`",
                m.format
            )));
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    /// Refuse data that is not what the artifact was fitted on.
    pub fn check_data(&self, x: &ResponseMatrix) -> Result<()> {
        let found = x.content_hash();
        if found == self.data_hash {
            Ok(())
        } else {
            Err(NirmError::HashMismatch {
                expected: self.data_hash.clone(),
                found,
            })
        }
    }

    /// Re-hash every listed file and report the first that differs.
    pub fn verify_files(&self, dir: &Path) -> Result<()> {
        for (name, expected) in &self.files {
            let found = sha256_file(&dir.join(name))?;
            if &found != expected {
                return Err(NirmError::HashMismatch {
                    expected: expected.clone(),
                    found,
                });
            }
        }
        Ok(())
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}

/// Retained draws as read back from `draws.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawsTable {
    pub iterations: Vec<usize>,
    pub log_posterior: Vec<f64>,
    pub states: Vec<ParameterState>,
}

impl DrawsTable {
    pub fn into_draws(
        self,
        acceptance: AcceptanceRates,
        final_scales: ProposalScales,
        model: ModelConfig,
        mcmc: McmcConfig,
    ) -> PosteriorDraws {
        PosteriorDraws {
            states: self.states,
            iterations: self.iterations,
            log_posterior: self.log_posterior,
            acceptance,
            final_scales,
            seed: mcmc.seed,
            model,
            mcmc,
        }
    }
}

fn draws_header(x: &ResponseMatrix, rows: usize, dim: usize) -> Vec<String> {
    let mut h = vec!["iteration".to_string(), "log_posterior".into(), "sigma_sq".into()];
    h.extend(x.person_ids().iter().map(|id| format!("theta:{id}")));
    h.extend(x.item_ids().iter().map(|id| format!("beta:{id}")));
    for r in 0..rows {
        for c in 0..dim {
            h.push(format!("free:{}:{}", r + 1, c + 1));
        }
    }
    h
}

/// One row per retained draw. Floats use the shortest representation that
/// round-trips, so reading back is exact.
pub fn write_draws_csv<W: Write>(draws: &PosteriorDraws, x: &ResponseMatrix, writer: W) -> Result<()> {
    let (rows, dim) = draws
        .states
        .first()
        .map_or((0, 0), |s| (s.free_positions.rows(), s.free_positions.dim()));
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(draws_header(x, rows, dim))?;
    for (t, s) in draws.states.iter().enumerate() {
        let mut rec = Vec::with_capacity(3 + s.theta.len() + s.beta.len() + rows * dim);
        rec.push(draws.iterations[t].to_string());
        rec.push(draws.log_posterior[t].to_string());
        rec.push(s.sigma_sq.to_string());
        rec.extend(s.theta.iter().map(f64::to_string));
        rec.extend(s.beta.iter().map(f64::to_string));
        rec.extend(s.free_positions.as_slice().iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_draws_csv<R: Read>(reader: R, x: &ResponseMatrix, model: &ModelConfig) -> Result<DrawsTable> {
    let rows = model.free_rows(x);
    let dim = model.dim;
    let expected = draws_header(x, rows, dim);
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != expected {
        return Err(NirmError::validation(
            "draws file columns do not match the data and model configuration",
        ));
    }
    let (n, p) = (x.n_persons(), x.n_items());
    let mut table = DrawsTable {
        iterations: Vec::new(),
        log_posterior: Vec::new(),
        states: Vec::new(),
    };
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let num = |c: usize| -> Result<f64> {
            record[c].parse::<f64>().map_err(|e| NirmError::Parse {
                row: r + 1,
                column: c + 1,
                message: e.to_string(),
            })
        };
        let iteration = record[0].parse::<usize>().map_err(|e| NirmError::Parse {
            row: r + 1,
            column: 1,
            message: e.to_string(),
        })?;
        let values: Vec<f64> = (1..record.len()).map(num).collect::<Result<_>>()?;
        let theta = values[2..2 + n].to_vec();
        let beta = values[2 + n..2 + n + p].to_vec();
        let free = Positions::from_vec(rows, dim, values[2 + n + p..].to_vec());
        table.iterations.push(iteration);
        table.log_posterior.push(values[0]);
        table.states.push(ParameterState {
            free_positions: free,
            theta,
            beta,
            sigma_sq: values[1],
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::fit;

    #[test]
    fn draws_round_trip_exactly() {
        let x = ResponseMatrix::from_codes(&[[1i8, 0, 1], [1, 1, 0], [0, 1, 1], [1, 1, 1]]).unwrap();
        let model = ModelConfig::default();
        let mcmc = McmcConfig { total_iterations: 60, burn_in: 20, thinning: 4, progress_interval: 0, ..McmcConfig::default() };
        let draws = fit(&x, &model, &mcmc).unwrap();
        let mut buf = Vec::new();
        write_draws_csv(&draws, &x, &mut buf).unwrap();
        let back = read_draws_csv(buf.as_slice(), &x, &model).unwrap();
        let rebuilt = back.into_draws(draws.acceptance, draws.final_scales, model, mcmc);
        assert_eq!(rebuilt, draws);
    }

    #[test]
    fn manifest_detects_other_data() {
        let x = ResponseMatrix::from_codes(&[[1i8, 0], [0, 1]]).unwrap();
        let y = ResponseMatrix::from_codes(&[[1i8, 1], [0, 1]]).unwrap();
        let m = Manifest::new(&x, serde_json::json!({}));
        assert!(m.check_data(&x).is_ok());
        assert!(matches!(m.check_data(&y), Err(NirmError::HashMismatch { .. })));
    }

    #[test]
    fn manifest_round_trip_and_file_check() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"hello").unwrap();
        let x = ResponseMatrix::from_codes(&[[1i8, 0], [0, 1]]).unwrap();
        let mut m = Manifest::new(&x, serde_json::json!({"seed": 3}));
        m.files.insert("a.txt".into(), sha256_bytes(b"hello"));
        m.write(dir.path()).unwrap();
        let back = Manifest::read(dir.path()).unwrap();
        assert_eq!(back, m);
        back.verify_files(dir.path()).unwrap();
        std::fs::write(dir.path().join("a.txt"), b"changed").unwrap();
        assert!(back.verify_files(dir.path()).is_err());
    }
}
