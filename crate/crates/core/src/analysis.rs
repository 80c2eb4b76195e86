//! Similarity networks and distance summaries of fitted positions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NirmError, Result};
use crate::positions::Positions;

/// Distance-to-similarity transform.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// `exp(−d)`.
    #[default]
    S1,
    /// `1 − d / max d`.
    S2,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::S1 => "s1",
            Metric::S2 => "s2",
        }
    }

    /// Similarity for distance `d` given the largest pairwise distance.
    pub fn similarity(self, d: f64, max_distance: f64) -> f64 {
        match self {
            Metric::S1 => (-d).exp(),
            Metric::S2 if max_distance > 0.0 => 1.0 - d / max_distance,
            Metric::S2 => 1.0,
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Metric {
    type Err = NirmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s1" => Ok(Metric::S1),
            "s2" => Ok(Metric::S2),
            other => Err(NirmError::validation(format!(
                "unknown similarity metric `{other}` (expected s1 or s2)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub size: usize,
    pub metric: Metric,
    /// Row-major, symmetric, unit diagonal.
    pub values: Vec<f64>,
    pub warnings: Vec<String>,
}

impl SimilarityMatrix {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.size + b]
    }
}

fn need_two(m: usize) -> Result<()> {
    if m < 2 {
        Err(NirmError::validation(format!("need at least 2 positions, got {m}")))
    } else {
        Ok(())
    }
}

fn max_distance(dist: &[f64]) -> f64 {
    dist.iter().copied().fold(0.0, f64::max)
}

pub fn similarity_matrix(positions: &Positions, metric: Metric) -> Result<SimilarityMatrix> {
    let m = positions.rows();
    need_two(m)?;
    let dist = positions.distance_matrix();
    let dmax = max_distance(&dist);
    let mut warnings = Vec::new();
    if metric == Metric::S2 && dmax == 0.0 {
        warnings.push("all positions coincide; s2 is set to 1 for every pair".to_string());
    }
    let values = dist.iter().map(|&d| metric.similarity(d, dmax)).collect();
    Ok(SimilarityMatrix {
        size: m,
        metric,
        values,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemRest {
    /// Mean distance from each item to every other item.
    pub values: Vec<f64>,
    pub argmax: usize,
}

pub fn item_rest_distances(positions: &Positions) -> Result<ItemRest> {
    let p = positions.rows();
    need_two(p)?;
    let dist = positions.distance_matrix();
    let values: Vec<f64> = (0..p)
        .map(|i| dist[i * p..(i + 1) * p].iter().sum::<f64>() / (p - 1) as f64)
        .collect();
    let argmax = (0..p).fold(0, |best, i| if values[i] > values[best] { i } else { best });
    Ok(ItemRest { values, argmax })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub id_a: String,
    pub id_b: String,
    pub distance: f64,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeList {
    pub metric: Metric,
    pub records: Vec<EdgeRecord>,
}

/// One record per unordered pair, `id_a < id_b`, sorted by `(id_a, id_b)`.
pub fn edge_list(ids: &[String], positions: &Positions, metric: Metric) -> Result<EdgeList> {
    let m = positions.rows();
    need_two(m)?;
    if ids.len() != m {
        return Err(NirmError::validation(format!(
            "{} ids for {m} positions",
            ids.len()
        )));
    }
    let dist = positions.distance_matrix();
    let dmax = max_distance(&dist);
    let mut records = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        for b in a + 1..m {
            let (x, y) = if ids[a] <= ids[b] { (a, b) } else { (b, a) };
            let d = dist[a * m + b];
            records.push(EdgeRecord {
                id_a: ids[x].clone(),
                id_b: ids[y].clone(),
                distance: d,
                similarity: metric.similarity(d, dmax),
            });
        }
    }
    records.sort_by(|l, r| (&l.id_a, &l.id_b).cmp(&(&r.id_a, &r.id_b)));
    Ok(EdgeList { metric, records })
}

/// All pairwise distances in condensed upper-triangle order.
pub fn pairwise_distances(positions: &Positions) -> Vec<f64> {
    let m = positions.rows();
    let mut out = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for a in 0..m {
        for b in a + 1..m {
            out.push(positions.distance(a, b));
        }
    }
    out
}

/// Fruchterman–Reingold layout in the unit square. Edge `(a, b, w)` pulls
/// with strength proportional to `w`; all nodes repel.
pub fn force_layout(nodes: usize, edges: &[(usize, usize, f64)], iterations: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<[f64; 2]> = (0..nodes).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    if nodes < 2 {
        return pos;
    }
    let k = (1.0 / nodes as f64).sqrt();
    let mut temp = 0.1;
    let cooling = temp / (iterations.max(1) as f64 + 1.0);
    let mut disp = vec![[0.0f64; 2]; nodes];
    for _ in 0..iterations {
        disp.iter_mut().for_each(|d| *d = [0.0, 0.0]);
        for a in 0..nodes {
            for b in a + 1..nodes {
                let (dx, dy) = (pos[a][0] - pos[b][0], pos[a][1] - pos[b][1]);
                let dist = (dx * dx + dy * dy).sqrt().max(1e-6);
                let f = k * k / dist;
                let (ux, uy) = (dx / dist * f, dy / dist * f);
                disp[a][0] += ux;
                disp[a][1] += uy;
                disp[b][0] -= ux;
                disp[b][1] -= uy;
            }
        }
        for &(a, b, w) in edges {
            let (dx, dy) = (pos[a][0] - pos[b][0], pos[a][1] - pos[b][1]);
            let dist = (dx * dx + dy * dy).sqrt().max(1e-6);
            let f = w * dist * dist / k;
            let (ux, uy) = (dx / dist * f, dy / dist * f);
            disp[a][0] -= ux;
            disp[a][1] -= uy;
            disp[b][0] += ux;
            disp[b][1] += uy;
        }
        for (p, d) in pos.iter_mut().zip(&disp) {
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if len > 0.0 {
                let step = len.min(temp);
                p[0] += d[0] / len * step;
                p[1] += d[1] / len * step;
            }
        }
        temp -= cooling;
    }
    // rescale to the unit square
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &pos {
        for c in 0..2 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    for p in &mut pos {
        for c in 0..2 {
            let span = hi[c] - lo[c];
            p[c] = if span > 0.0 { (p[c] - lo[c]) / span } else { 0.5 };
        }
    }
    pos
}
