//! Tables, plots and the manifest for a fitted model.
//!
//! Summary tables carry six significant digits; `edges.csv` keeps full
//! precision so the similarity column can be recomputed from distances.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{edge_list, force_layout, item_rest_distances, pairwise_distances, similarity_matrix, Metric};
use crate::artifact::{sha256_bytes, Manifest, MANIFEST_FILE};
use crate::data::ResponseMatrix;
use crate::error::{NirmError, Result};
use crate::post::{quantile_sorted, PosteriorSummary};

pub const EXPORT_FILES: [&str; 9] = [
    "positions.csv",
    "edges.csv",
    "beta_summary.csv",
    "theta_summary.csv",
    "distance_histogram.csv",
    "item_rest.csv",
    "latent_space.svg",
    "network.svg",
    MANIFEST_FILE,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportOptions {
    pub metric: Metric,
    /// Minimum similarity drawn in `network.svg`; `None` uses the 75th
    /// percentile of all item similarities.
    pub display_threshold: Option<f64>,
    pub layout_seed: u64,
    pub layout_iterations: usize,
    pub overwrite: bool,
    /// Merged run configuration echoed into the manifest.
    pub config: serde_json::Value,
    pub deviations: Vec<String>,
    /// Files already written to the directory by the caller (e.g. raw
    /// draws) that the manifest should cover.
    pub extra_files: Vec<String>,
}

impl Default for ExportOptions {
    fn default() -> Self {
        ExportOptions {
            metric: Metric::S1,
            display_threshold: None,
            layout_seed: 1,
            layout_iterations: 500,
            overwrite: false,
            config: serde_json::Value::Null,
            deviations: Vec::new(),
            extra_files: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExportReport {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub display_threshold: f64,
}

/// Six significant digits, shortest form.
pub fn fmt6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    rounded.to_string()
}

pub fn export_artifacts(
    summary: &PosteriorSummary,
    x: &ResponseMatrix,
    out_dir: &Path,
    options: &ExportOptions,
) -> Result<ExportReport> {
    if summary.person_ids != x.person_ids() || summary.item_ids != x.item_ids() {
        return Err(NirmError::validation("summary ids do not match the response data"));
    }
    std::fs::create_dir_all(out_dir)?;
    if !options.overwrite {
        for name in EXPORT_FILES {
            let path = out_dir.join(name);
            if path.exists() {
                return Err(NirmError::AlreadyExists(path));
            }
        }
    }

    let similarities = similarity_matrix(&summary.item_positions, options.metric)?;
    let p = x.n_items();
    let mut upper: Vec<f64> = (0..p)
        .flat_map(|a| (a + 1..p).map(move |b| (a, b)))
        .map(|(a, b)| similarities.get(a, b))
        .collect();
    upper.sort_by(f64::total_cmp);
    let threshold = options
        .display_threshold
        .unwrap_or_else(|| quantile_sorted(&upper, 0.75));

    let mut contents: BTreeMap<&str, String> = BTreeMap::new();
    contents.insert("positions.csv", positions_csv(summary));
    contents.insert("edges.csv", edges_csv(summary, options.metric)?);
    contents.insert("beta_summary.csv", beta_csv(summary, x));
    contents.insert("theta_summary.csv", theta_csv(summary, x));
    contents.insert("distance_histogram.csv", histogram_csv(summary));
    contents.insert("item_rest.csv", item_rest_csv(summary)?);
    contents.insert("latent_space.svg", latent_svg(summary, x));
    contents.insert("network.svg", network_svg(summary, options, threshold)?);

    let mut manifest = Manifest::new(x, options.config.clone());
    manifest.deviations = options.deviations.clone();
    manifest.warnings = summary.warnings.clone();
    manifest.warnings.extend(similarities.warnings.iter().cloned());
    for (name, body) in &contents {
        std::fs::write(out_dir.join(name), body)?;
        manifest.files.insert(name.to_string(), sha256_bytes(body.as_bytes()));
    }
    for name in &options.extra_files {
        manifest
            .files
            .insert(name.clone(), crate::artifact::sha256_file(&out_dir.join(name))?);
    }
    if let serde_json::Value::Object(map) = &mut manifest.config {
        map.insert(
            "export".into(),
            serde_json::json!({
                "metric": options.metric.as_str(),
                "display_threshold": threshold,
                "layout_seed": options.layout_seed,
                "layout_iterations": options.layout_iterations,
            }),
        );
    } else {
        manifest.config = serde_json::json!({
            "run": manifest.config,
            "export": {
                "metric": options.metric.as_str(),
                "display_threshold": threshold,
                "layout_seed": options.layout_seed,
                "layout_iterations": options.layout_iterations,
            }
        });
    }
    manifest.write(out_dir)?;
    Ok(ExportReport {
        dir: out_dir.to_path_buf(),
        manifest,
        display_threshold: threshold,
    })
}

fn csv_line(out: &mut String, fields: &[String]) {
    let escaped: Vec<String> = fields
        .iter()
        .map(|f| {
            if f.contains([',', '"', '\n']) {
                format!("\"{}\"", f.replace('"', "\"\""))
            } else {
                f.clone()
            }
        })
        .collect();
    out.push_str(&escaped.join(","));
    out.push('\n');
}

fn positions_csv(s: &PosteriorSummary) -> String {
    let d = s.person_positions.dim();
    let mut out = String::new();
    let mut header = vec!["space".to_string(), "id".to_string()];
    header.extend((1..=d).map(|c| format!("dim{c}")));
    csv_line(&mut out, &header);
    for (space, ids, pos) in [
        ("person", &s.person_ids, &s.person_positions),
        ("item", &s.item_ids, &s.item_positions),
    ] {
        for (r, id) in ids.iter().enumerate() {
            let mut rec = vec![space.to_string(), id.clone()];
            rec.extend(pos.row(r).iter().map(|&v| fmt6(v)));
            csv_line(&mut out, &rec);
        }
    }
    out
}

fn edges_csv(s: &PosteriorSummary, metric: Metric) -> Result<String> {
    let edges = edge_list(&s.item_ids, &s.item_positions, metric)?;
    let mut out = String::new();
    csv_line(
        &mut out,
        &["item_a", "item_b", "distance", "similarity", "metric"].map(String::from),
    );
    for e in &edges.records {
        csv_line(
            &mut out,
            &[
                e.id_a.clone(),
                e.id_b.clone(),
                e.distance.to_string(),
                e.similarity.to_string(),
                metric.as_str().to_string(),
            ],
        );
    }
    Ok(out)
}

fn beta_csv(s: &PosteriorSummary, x: &ResponseMatrix) -> String {
    let props = x.proportion_positive();
    let mut out = String::new();
    csv_line(
        &mut out,
        &["item", "estimate", "sd", "q05", "q95", "ess", "proportion_positive"].map(String::from),
    );
    for (i, b) in s.beta.iter().enumerate() {
        csv_line(
            &mut out,
            &[
                s.item_ids[i].clone(),
                fmt6(b.mean),
                fmt6(b.sd),
                fmt6(b.q05),
                fmt6(b.q95),
                fmt6(b.ess),
                fmt6(props[i]),
            ],
        );
    }
    out
}

/// One row per observed sum score: frequency, then the mean over those
/// persons of the θ posterior mean and of its 5% and 95% quantiles.
fn theta_csv(s: &PosteriorSummary, x: &ResponseMatrix) -> String {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, score) in x.sum_scores().into_iter().enumerate() {
        groups.entry(score).or_default().push(k);
    }
    let mut out = String::new();
    csv_line(
        &mut out,
        &["sum_score", "frequency", "estimate", "q05", "q95"].map(String::from),
    );
    for (score, members) in groups {
        let m = members.len() as f64;
        let avg = |f: &dyn Fn(usize) -> f64| members.iter().map(|&k| f(k)).sum::<f64>() / m;
        csv_line(
            &mut out,
            &[
                score.to_string(),
                members.len().to_string(),
                fmt6(avg(&|k| s.theta[k].mean)),
                fmt6(avg(&|k| s.theta[k].q05)),
                fmt6(avg(&|k| s.theta[k].q95)),
            ],
        );
    }
    out
}

fn histogram_csv(s: &PosteriorSummary) -> String {
    let p = s.item_ids.len();
    let dist = pairwise_distances(&s.item_positions);
    let mut out = String::new();
    csv_line(&mut out, &["item_a", "item_b", "distance"].map(String::from));
    let mut idx = 0;
    for a in 0..p {
        for b in a + 1..p {
            csv_line(
                &mut out,
                &[s.item_ids[a].clone(), s.item_ids[b].clone(), fmt6(dist[idx])],
            );
            idx += 1;
        }
    }
    out
}

fn item_rest_csv(s: &PosteriorSummary) -> Result<String> {
    let rest = item_rest_distances(&s.item_positions)?;
    let mut out = String::new();
    csv_line(&mut out, &["item", "average_distance", "is_max"].map(String::from));
    for (i, v) in rest.values.iter().enumerate() {
        csv_line(
            &mut out,
            &[
                s.item_ids[i].clone(),
                fmt6(*v),
                (i == rest.argmax).to_string(),
            ],
        );
    }
    Ok(out)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const CANVAS: f64 = 640.0;
const MARGIN: f64 = 40.0;

/// Maps data coordinates into the canvas with a common scale on both axes.
struct Frame {
    lo: [f64; 2],
    scale: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = [f64; 2]>) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for c in 0..2 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let scale = if span > 0.0 { (CANVAS - 2.0 * MARGIN) / span } else { 1.0 };
        Frame { lo, scale }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (
            MARGIN + (p[0] - self.lo[0]) * self.scale,
            CANVAS - MARGIN - (p[1] - self.lo[1]) * self.scale,
        )
    }
}

fn xy(row: &[f64]) -> [f64; 2] {
    [row[0], row.get(1).copied().unwrap_or(0.0)]
}

/// Blue (low) to red (high).
fn score_colour(score: usize, max_score: usize) -> String {
    let t = if max_score == 0 { 0.0 } else { score as f64 / max_score as f64 };
    let hue = 240.0 * (1.0 - t);
    format!("hsl({:.0},70%,45%)", hue)
}

fn latent_svg(s: &PosteriorSummary, x: &ResponseMatrix) -> String {
    let frame = Frame::fit(
        (0..s.person_positions.rows())
            .map(|k| xy(s.person_positions.row(k)))
            .chain((0..s.item_positions.rows()).map(|i| xy(s.item_positions.row(i)))),
    );
    let scores = x.sum_scores();
    let max_score = scores.iter().copied().max().unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, score) in scores.iter().enumerate() {
        let (px, py) = frame.map(xy(s.person_positions.row(k)));
        let _ = writeln!(
            out,
            r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="{}" fill-opacity="0.6"><title>{} (sum score {score})</title></circle>"#,
            score_colour(*score, max_score),
            xml_escape(&s.person_ids[k]),
        );
    }
    for (i, id) in s.item_ids.iter().enumerate() {
        let (px, py) = frame.map(xy(s.item_positions.row(i)));
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="black"/><text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{}</text>"#,
            px - 4.0,
            py - 4.0,
            px + 6.0,
            py - 6.0,
            xml_escape(id),
        );
    }
    out.push_str("</svg>\n");
    out
}

fn network_svg(s: &PosteriorSummary, options: &ExportOptions, threshold: f64) -> Result<String> {
    let sim = similarity_matrix(&s.item_positions, options.metric)?;
    let p = s.item_ids.len();
    let edges: Vec<(usize, usize, f64)> = (0..p)
        .flat_map(|a| (a + 1..p).map(move |b| (a, b)))
        .map(|(a, b)| (a, b, sim.get(a, b)))
        .filter(|&(_, _, w)| w >= threshold)
        .collect();
    let layout = force_layout(p, &edges, options.layout_iterations, options.layout_seed);
    let span = CANVAS - 2.0 * MARGIN;
    let at = |i: usize| (MARGIN + layout[i][0] * span, MARGIN + layout[i][1] * span);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for &(a, b, w) in &edges {
        let ((x1, y1), (x2, y2)) = (at(a), at(b));
        let _ = writeln!(
            out,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="seagreen" stroke-opacity="{:.3}" stroke-width="{:.2}"><title>{} – {}: {}</title></line>"#,
            w.clamp(0.1, 1.0),
            0.5 + 5.0 * w,
            xml_escape(&s.item_ids[a]),
            xml_escape(&s.item_ids[b]),
            fmt6(w),
        );
    }
    for (i, id) in s.item_ids.iter().enumerate() {
        let (cx, cy) = at(i);
        let _ = writeln!(
            out,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="14" fill="white" stroke="black"/><text x="{cx:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            cy + 4.0,
            xml_escape(id),
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt6(1.234_567_89), "1.23457");
        assert_eq!(fmt6(-0.000_123_456_789), "-0.000123457");
        assert_eq!(fmt6(123_456_789.0), "123457000");
        assert_eq!(fmt6(0.0), "0");
        assert_eq!(fmt6(2.5), "2.5");
    }

    #[test]
    fn csv_fields_are_quoted_when_needed() {
        let mut s = String::new();
        csv_line(&mut s, &["a,b".to_string(), "c".to_string(), "say \"hi\"".to_string()]);
        assert_eq!(s, "\"a,b\",c,\"say \"\"hi\"\"\"\n");
    }
}
