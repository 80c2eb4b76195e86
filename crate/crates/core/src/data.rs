//! Response matrices and the pairwise network encodings derived from them.
//!
//! Every person×person network (one per item) and item×item network (one
//! per person) is a pure function of the response matrix, so the likelihood
//! code computes edges on demand. [`materialize_network`] exists for tests
//! and export.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NirmError, Result};

/// A single binary response, or the absence of one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Response {
    Zero = 0,
    One = 1,
    Missing = 2,
}

impl Response {
    #[inline]
    pub fn is_missing(self) -> bool {
        self == Response::Missing
    }

    #[inline]
    pub fn is_one(self) -> bool {
        self == Response::One
    }

    /// Numeric value of an observed response; missing maps to `None`.
    #[inline]
    pub fn value(self) -> Option<u8> {
        match self {
            Response::Zero => Some(0),
            Response::One => Some(1),
            Response::Missing => None,
        }
    }
}

impl From<bool> for Response {
    fn from(b: bool) -> Self {
        if b {
            Response::One
        } else {
            Response::Zero
        }
    }
}

impl From<Option<bool>> for Response {
    fn from(b: Option<bool>) -> Self {
        b.map_or(Response::Missing, Response::from)
    }
}

/// How a pair of responses becomes a network edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    /// Edge is 1 only when both responses are 1 (the product `a·b`).
    #[serde(alias = "prod")]
    PositiveConcordant,
    /// Edge is 1 whenever the responses agree (both 0 or both 1).
    #[serde(alias = "concord")]
    AllConcordant,
}

impl Encoding {
    pub fn as_str(self) -> &'static str {
        match self {
            Encoding::PositiveConcordant => "positive-concordant",
            Encoding::AllConcordant => "all-concordant",
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Encoding {
    type Err = NirmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prod" | "positive-concordant" => Ok(Encoding::PositiveConcordant),
            "concord" | "all-concordant" => Ok(Encoding::AllConcordant),
            other => Err(NirmError::validation(format!(
                "unknown encoding `{other}` (expected prod or concord)"
            ))),
        }
    }
}

/// Encode two responses into a network edge. Missing propagates.
#[inline]
pub fn encode_pair(a: Response, b: Response, enc: Encoding) -> Response {
    if a.is_missing() || b.is_missing() {
        return Response::Missing;
    }
    match enc {
        Encoding::PositiveConcordant => Response::from(a.is_one() && b.is_one()),
        Encoding::AllConcordant => Response::from(a == b),
    }
}

/// An n×p grid of binary responses with a missing mask.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    n_persons: usize,
    n_items: usize,
    values: Vec<Response>,
    person_ids: Vec<String>,
    item_ids: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub missing_token: String,
    pub has_person_id_column: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            missing_token: "NA".to_string(),
            has_person_id_column: false,
        }
    }
}

fn check_unique(ids: &[String], axis: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(NirmError::validation(format!("duplicate {axis} id `{id}`")));
        }
    }
    Ok(())
}

impl ResponseMatrix {
    /// Build a matrix from row-major values and axis labels.
    pub fn new(
        person_ids: Vec<String>,
        item_ids: Vec<String>,
        values: Vec<Response>,
    ) -> Result<Self> {
        let (n, p) = (person_ids.len(), item_ids.len());
        if n < 2 || p < 2 {
            return Err(NirmError::validation(format!(
                "response matrix must have at least 2 persons and 2 items (got {n}×{p})"
            )));
        }
        Self::block(person_ids, item_ids, values)
    }

    /// Like [`ResponseMatrix::new`] but allows a single row or column; used
    /// for new-data payloads.
    pub fn block(person_ids: Vec<String>, item_ids: Vec<String>, values: Vec<Response>) -> Result<Self> {
        let n = person_ids.len();
        let p = item_ids.len();
        if n == 0 || p == 0 {
            return Err(NirmError::validation("response block is empty"));
        }
        if values.len() != n * p {
            return Err(NirmError::validation(format!(
                "expected {} values for a {n}×{p} matrix, got {}",
                n * p,
                values.len()
            )));
        }
        check_unique(&person_ids, "person")?;
        check_unique(&item_ids, "item")?;
        Ok(ResponseMatrix {
            n_persons: n,
            n_items: p,
            values,
            person_ids,
            item_ids,
        })
    }

    /// Build from integer codes: 0, 1, or -1 for missing. Ids default to
    /// `p1..pn` and `i1..ip`.
    pub fn from_codes<R: AsRef<[i8]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(n * p);
        for (r, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != p {
                return Err(NirmError::validation(format!(
                    "row {} has {} entries, expected {p}",
                    r + 1,
                    row.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                values.push(match v {
                    0 => Response::Zero,
                    1 => Response::One,
                    -1 => Response::Missing,
                    other => {
                        return Err(NirmError::Parse {
                            row: r + 1,
                            column: c + 1,
                            message: format!("code {other} is not 0, 1 or -1"),
                        })
                    }
                });
            }
        }
        let person_ids = (1..=n).map(|k| format!("p{k}")).collect();
        let item_ids = (1..=p).map(|i| format!("i{i}")).collect();
        ResponseMatrix::new(person_ids, item_ids, values)
    }

    pub fn n_persons(&self) -> usize {
        self.n_persons
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn person_ids(&self) -> &[String] {
        &self.person_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    #[inline]
    pub fn get(&self, person: usize, item: usize) -> Response {
        self.values[person * self.n_items + item]
    }

    #[inline]
    pub fn row(&self, person: usize) -> &[Response] {
        &self.values[person * self.n_items..(person + 1) * self.n_items]
    }

    pub fn values(&self) -> &[Response] {
        &self.values
    }

    pub fn column(&self, item: usize) -> Vec<Response> {
        (0..self.n_persons).map(|k| self.get(k, item)).collect()
    }

    /// Count of positive responses per person.
    pub fn sum_scores(&self) -> Vec<usize> {
        (0..self.n_persons)
            .map(|k| self.row(k).iter().filter(|r| r.is_one()).count())
            .collect()
    }

    /// Count of positive responses per item.
    pub fn item_positive_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_items];
        for k in 0..self.n_persons {
            for (i, r) in self.row(k).iter().enumerate() {
                if r.is_one() {
                    counts[i] += 1;
                }
            }
        }
        counts
    }

    /// Proportion of observed responses that are positive, per item.
    /// Items with no observed responses yield NaN.
    pub fn proportion_positive(&self) -> Vec<f64> {
        let mut ones = vec![0usize; self.n_items];
        let mut seen = vec![0usize; self.n_items];
        for k in 0..self.n_persons {
            for (i, r) in self.row(k).iter().enumerate() {
                if let Some(v) = r.value() {
                    seen[i] += 1;
                    ones[i] += v as usize;
                }
            }
        }
        ones.iter()
            .zip(&seen)
            .map(|(&o, &s)| o as f64 / s as f64)
            .collect()
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(|r| r.is_missing())
    }

    /// Keep only the listed persons, in the given order.
    pub fn select_persons(&self, persons: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(persons.len() * self.n_items);
        let mut ids = Vec::with_capacity(persons.len());
        for &k in persons {
            if k >= self.n_persons {
                return Err(NirmError::OutOfBounds {
                    what: "person",
                    index: k,
                    len: self.n_persons,
                });
            }
            values.extend_from_slice(self.row(k));
            ids.push(self.person_ids[k].clone());
        }
        ResponseMatrix::new(ids, self.item_ids.clone(), values)
    }

    /// SHA-256 over a canonical encoding of ids and values, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_persons as u64).to_le_bytes());
        h.update((self.n_items as u64).to_le_bytes());
        for id in self.person_ids.iter().chain(&self.item_ids) {
            h.update((id.len() as u64).to_le_bytes());
            h.update(id.as_bytes());
        }
        let bytes: Vec<u8> = self.values.iter().map(|&r| r as u8).collect();
        h.update(&bytes);
        hex::encode(h.finalize())
    }

    /// Read a CSV file whose header row carries the item ids.
    pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_csv(file, options)
    }

    pub fn read_csv<R: std::io::Read>(reader: R, options: &CsvOptions) -> Result<Self> {
        let (person_ids, item_ids, values) = parse_csv(reader, options)?;
        ResponseMatrix::new(person_ids, item_ids, values)
    }

    /// Read a payload that may have a single row or column.
    pub fn read_block_csv<R: std::io::Read>(reader: R, options: &CsvOptions) -> Result<Self> {
        let (person_ids, item_ids, values) = parse_csv(reader, options)?;
        ResponseMatrix::block(person_ids, item_ids, values)
    }

    /// Write in the same layout `read_csv` accepts, with a person id column.
    pub fn write_csv<W: std::io::Write>(&self, writer: W, missing_token: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["person".to_string()];
        header.extend(self.item_ids.iter().cloned());
        w.write_record(&header)?;
        for k in 0..self.n_persons {
            let mut rec = vec![self.person_ids[k].clone()];
            rec.extend(self.row(k).iter().map(|r| match r.value() {
                Some(v) => v.to_string(),
                None => missing_token.to_string(),
            }));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

type ParsedCsv = (Vec<String>, Vec<String>, Vec<Response>);

fn parse_csv<R: std::io::Read>(reader: R, options: &CsvOptions) -> Result<ParsedCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let skip = usize::from(options.has_person_id_column);
    let item_ids: Vec<String> = header.iter().skip(skip).map(str::to_string).collect();
    let p = item_ids.len();
    let mut person_ids = Vec::new();
    let mut values = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != p + skip {
            return Err(NirmError::Parse {
                row,
                column: record.len().min(p + skip),
                message: format!("expected {} fields, found {}", p + skip, record.len()),
            });
        }
        if options.has_person_id_column {
            person_ids.push(record[0].to_string());
        } else {
            person_ids.push(row.to_string());
        }
        for (c, cell) in record.iter().skip(skip).enumerate() {
            let v = match cell {
                "0" => Response::Zero,
                "1" => Response::One,
                t if t == options.missing_token => Response::Missing,
                other => {
                    return Err(NirmError::Parse {
                        row,
                        column: c + 1 + skip,
                        message: format!(
                            "cell `{other}` for item `{}` is not 0, 1 or `{}`",
                            item_ids[c], options.missing_token
                        ),
                    })
                }
            };
            values.push(v);
        }
    }
    Ok((person_ids, item_ids, values))
}

/// Which family of networks: one n×n network per item, or one p×p per person.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    PerItem,
    PerPerson,
}

/// A materialized symmetric network. The diagonal is never evaluated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairNetwork {
    pub axis: Axis,
    pub index: usize,
    size: usize,
    edges: Vec<Response>,
}

impl PairNetwork {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Edge between two distinct nodes; `None` for self-pairs.
    pub fn edge(&self, a: usize, b: usize) -> Option<Response> {
        if a == b {
            None
        } else {
            Some(self.edges[a * self.size + b])
        }
    }

    /// Count of unordered pairs with edge value 1.
    pub fn count_ones(&self) -> usize {
        let mut c = 0;
        for a in 0..self.size {
            for b in a + 1..self.size {
                c += usize::from(self.edges[a * self.size + b].is_one());
            }
        }
        c
    }
}

pub fn materialize_network(
    x: &ResponseMatrix,
    axis: Axis,
    index: usize,
    enc: Encoding,
) -> Result<PairNetwork> {
    let (len, size) = match axis {
        Axis::PerItem => (x.n_items(), x.n_persons()),
        Axis::PerPerson => (x.n_persons(), x.n_items()),
    };
    if index >= len {
        return Err(NirmError::OutOfBounds {
            what: match axis {
                Axis::PerItem => "item",
                Axis::PerPerson => "person",
            },
            index,
            len,
        });
    }
    let response = |node: usize| match axis {
        Axis::PerItem => x.get(node, index),
        Axis::PerPerson => x.get(index, node),
    };
    let mut edges = vec![Response::Missing; size * size];
    for a in 0..size {
        for b in a + 1..size {
            let e = encode_pair(response(a), response(b), enc);
            edges[a * size + b] = e;
            edges[b * size + a] = e;
        }
    }
    Ok(PairNetwork {
        axis,
        index,
        size,
        edges,
    })
}

pub const DEFAULT_CONTINGENCY_CAP: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PatternCount {
    /// Response pattern over the listed items, first item first, e.g. `"101"`.
    pub pattern: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PairConcordance {
    pub item_a: usize,
    pub item_b: usize,
    pub concordant: usize,
    pub discordant: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PairwiseCounts {
    pub items: Vec<usize>,
    /// Persons with no missing response on the listed items.
    pub complete: usize,
    /// All 2^m patterns in binary order.
    pub patterns: Vec<PatternCount>,
    pub pairs: Vec<PairConcordance>,
}

/// Tally response patterns over a few items, plus concordant/discordant
/// counts for every pair among them.
pub fn pairwise_counts(x: &ResponseMatrix, items: &[usize], cap: usize) -> Result<PairwiseCounts> {
    let m = items.len();
    if m == 0 {
        return Err(NirmError::validation("at least one item is required"));
    }
    if m > cap {
        return Err(NirmError::TooManyItems { requested: m, cap });
    }
    let mut seen = HashSet::new();
    for &i in items {
        if i >= x.n_items() {
            return Err(NirmError::OutOfBounds {
                what: "item",
                index: i,
                len: x.n_items(),
            });
        }
        if !seen.insert(i) {
            return Err(NirmError::validation(format!("item index {i} listed twice")));
        }
    }

    let mut cells = vec![0usize; 1 << m];
    let mut complete = 0;
    for k in 0..x.n_persons() {
        let mut code = 0usize;
        let mut ok = true;
        for &i in items {
            match x.get(k, i).value() {
                Some(v) => code = (code << 1) | v as usize,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            cells[code] += 1;
            complete += 1;
        }
    }

    let patterns = cells
        .iter()
        .enumerate()
        .map(|(code, &count)| PatternCount {
            pattern: format!("{code:0m$b}"),
            count,
        })
        .collect();

    let mut pairs = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            let (mut concordant, mut discordant) = (0, 0);
            for (code, &count) in cells.iter().enumerate() {
                let va = (code >> (m - 1 - a)) & 1;
                let vb = (code >> (m - 1 - b)) & 1;
                if va == vb {
                    concordant += count;
                } else {
                    discordant += count;
                }
            }
            pairs.push(PairConcordance {
                item_a: items[a],
                item_b: items[b],
                concordant,
                discordant,
            });
        }
    }

    Ok(PairwiseCounts {
        items: items.to_vec(),
        complete,
        patterns,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const R: [Response; 3] = [Response::Zero, Response::One, Response::Missing];

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize, p_missing: f64) -> ResponseMatrix {
        let rows: Vec<Vec<i8>> = (0..n)
            .map(|_| {
                (0..p)
                    .map(|_| {
                        if rng.random::<f64>() < p_missing {
                            -1
                        } else {
                            rng.random_range(0..2)
                        }
                    })
                    .collect()
            })
            .collect();
        ResponseMatrix::from_codes(&rows).unwrap()
    }

    #[test]
    fn csv_read_through() {
        let x = ResponseMatrix::read_csv("i1,i2\n1,0\n0,1".as_bytes(), &CsvOptions::default())
            .unwrap();
        assert_eq!(x.item_ids(), ["i1", "i2"]);
        assert_eq!(x.row(0), [Response::One, Response::Zero]);
        assert_eq!(x.row(1), [Response::Zero, Response::One]);
        assert_eq!(x.person_ids(), ["1", "2"]);
    }

    #[test]
    fn csv_missing_token_and_person_column() {
        let opts = CsvOptions {
            missing_token: "NA".into(),
            has_person_id_column: true,
        };
        let x = ResponseMatrix::read_csv("id,a,b\nann,NA,1\nbob,0,1\n".as_bytes(), &opts).unwrap();
        assert_eq!(x.get(0, 0), Response::Missing);
        assert_eq!(x.person_ids(), ["ann", "bob"]);
    }

    #[test]
    fn csv_bad_cell_names_coordinate() {
        let err = ResponseMatrix::read_csv("i1,i2\n1,0\n0,2".as_bytes(), &CsvOptions::default())
            .unwrap_err();
        match err {
            NirmError::Parse { row, column, .. } => assert_eq!((row, column), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_validation_errors() {
        let dup = ResponseMatrix::read_csv("a,a\n1,0\n0,1".as_bytes(), &CsvOptions::default());
        assert!(matches!(dup, Err(NirmError::Validation(_))));
        let small = ResponseMatrix::read_csv("a,b\n1,0".as_bytes(), &CsvOptions::default());
        assert!(matches!(small, Err(NirmError::Validation(_))));
        let narrow = ResponseMatrix::read_csv("a\n1\n0".as_bytes(), &CsvOptions::default());
        assert!(matches!(narrow, Err(NirmError::Validation(_))));
    }

    #[test]
    fn csv_round_trip() {
        let x = ResponseMatrix::from_codes(&[[1, -1, 0], [0, 1, 1]]).unwrap();
        let mut buf = Vec::new();
        x.write_csv(&mut buf, "NA").unwrap();
        let opts = CsvOptions {
            has_person_id_column: true,
            ..CsvOptions::default()
        };
        let y = ResponseMatrix::read_csv(buf.as_slice(), &opts).unwrap();
        assert_eq!(x, y);
        assert_eq!(x.content_hash(), y.content_hash());
    }

    #[test]
    fn encode_pair_table() {
        use Encoding::*;
        use Response::*;
        assert_eq!(encode_pair(One, One, PositiveConcordant), One);
        assert_eq!(encode_pair(Zero, Zero, PositiveConcordant), Zero);
        assert_eq!(encode_pair(Zero, Zero, AllConcordant), One);
        assert_eq!(encode_pair(One, Zero, AllConcordant), Zero);
        for enc in [PositiveConcordant, AllConcordant] {
            assert_eq!(encode_pair(Missing, One, enc), Missing);
            assert_eq!(encode_pair(Zero, Missing, enc), Missing);
        }
    }

    #[test]
    fn materialize_small_cases() {
        let x = ResponseMatrix::from_codes(&[[1, 1], [1, 0]]).unwrap();
        let y0 = materialize_network(&x, Axis::PerItem, 0, Encoding::PositiveConcordant).unwrap();
        assert_eq!(y0.edge(0, 1), Some(Response::One));
        assert_eq!(y0.edge(1, 1), None);
        let u1 = materialize_network(&x, Axis::PerPerson, 1, Encoding::AllConcordant).unwrap();
        assert_eq!(u1.edge(0, 1), Some(Response::Zero));
        assert!(matches!(
            materialize_network(&x, Axis::PerItem, 2, Encoding::AllConcordant),
            Err(NirmError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn materialize_matches_raw_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_matrix(&mut rng, 6, 4, 0.15);
        for enc in [Encoding::PositiveConcordant, Encoding::AllConcordant] {
            for i in 0..4 {
                let net = materialize_network(&x, Axis::PerItem, i, enc).unwrap();
                for k in 0..6 {
                    for l in 0..6 {
                        if k != l {
                            let raw = encode_pair(x.get(k, i), x.get(l, i), enc);
                            assert_eq!(net.edge(k, l), Some(raw));
                        }
                    }
                }
            }
            for k in 0..6 {
                let net = materialize_network(&x, Axis::PerPerson, k, enc).unwrap();
                for i in 0..4 {
                    for j in 0..4 {
                        if i != j {
                            let raw = encode_pair(x.get(k, i), x.get(k, j), enc);
                            assert_eq!(net.edge(i, j), Some(raw));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn counts_identical_columns() {
        let x = ResponseMatrix::from_codes(&[[1, 1], [0, 0], [1, 1], [1, 1]]).unwrap();
        let c = pairwise_counts(&x, &[0, 1], DEFAULT_CONTINGENCY_CAP).unwrap();
        let cells: Vec<usize> = c.patterns.iter().map(|p| p.count).collect();
        assert_eq!(cells, [1, 0, 0, 3]);
        assert_eq!(c.pairs[0].discordant, 0);
        assert_eq!(c.pairs[0].concordant, 4);
    }

    #[test]
    fn counts_enumeration() {
        let x = ResponseMatrix::from_codes(&[[1, 1], [1, 0], [0, 1], [0, 0]]).unwrap();
        let c = pairwise_counts(&x, &[0, 1], DEFAULT_CONTINGENCY_CAP).unwrap();
        for p in &c.patterns {
            assert_eq!(p.count, 1, "pattern {}", p.pattern);
        }
        assert_eq!((c.pairs[0].concordant, c.pairs[0].discordant), (2, 2));
    }

    #[test]
    fn counts_cap_and_duplicates() {
        let x = ResponseMatrix::from_codes(&[[1, 1, 0, 1, 0], [0, 1, 1, 0, 1]]).unwrap();
        assert!(matches!(
            pairwise_counts(&x, &[0, 1, 2, 3, 4], DEFAULT_CONTINGENCY_CAP),
            Err(NirmError::TooManyItems { requested: 5, cap: 4 })
        ));
        assert!(pairwise_counts(&x, &[0, 0], DEFAULT_CONTINGENCY_CAP).is_err());
    }

    #[test]
    fn counts_match_brute_force_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_matrix(&mut rng, 30, 3, 0.05);
        let c = pairwise_counts(&x, &[2, 0, 1], DEFAULT_CONTINGENCY_CAP).unwrap();
        for pc in &c.patterns {
            let bits: Vec<u8> = pc.pattern.bytes().map(|b| b - b'0').collect();
            let brute = (0..30)
                .filter(|&k| {
                    [2, 0, 1]
                        .iter()
                        .zip(&bits)
                        .all(|(&i, &b)| x.get(k, i).value() == Some(b))
                })
                .count();
            assert_eq!(pc.count, brute, "pattern {}", pc.pattern);
        }
        let total: usize = c.patterns.iter().map(|p| p.count).sum();
        assert_eq!(total, c.complete);
        for pair in &c.pairs {
            assert_eq!(pair.concordant + pair.discordant, c.complete);
        }
    }

    fn arb_matrix() -> impl Strategy<Value = ResponseMatrix> {
        (2usize..7, 2usize..6).prop_flat_map(|(n, p)| {
            proptest::collection::vec(0usize..3, n * p).prop_map(move |cells| {
                let values = cells.into_iter().map(|c| R[c]).collect();
                ResponseMatrix::new(
                    (0..n).map(|k| format!("p{k}")).collect(),
                    (0..p).map(|i| format!("i{i}")).collect(),
                    values,
                )
                .unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn positive_edges_subset_of_all_concordant(x in arb_matrix()) {
            for i in 0..x.n_items() {
                let pos = materialize_network(&x, Axis::PerItem, i, Encoding::PositiveConcordant).unwrap();
                let all = materialize_network(&x, Axis::PerItem, i, Encoding::AllConcordant).unwrap();
                for a in 0..x.n_persons() {
                    for b in 0..x.n_persons() {
                        if let (Some(e1), Some(e2)) = (pos.edge(a, b), all.edge(a, b)) {
                            prop_assert_eq!(e1.is_missing(), e2.is_missing());
                            prop_assert!(e1.value() <= e2.value());
                        }
                    }
                }
            }
        }

        #[test]
        fn person_relabeling_permutes_networks(x in arb_matrix(), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = x.n_persons();
            let mut perm: Vec<usize> = (0..n).collect();
            for k in (1..n).rev() {
                perm.swap(k, rng.random_range(0..=k));
            }
            let y = x.select_persons(&perm).unwrap();
            for i in 0..x.n_items() {
                let a = materialize_network(&x, Axis::PerItem, i, Encoding::AllConcordant).unwrap();
                let b = materialize_network(&y, Axis::PerItem, i, Encoding::AllConcordant).unwrap();
                for k in 0..n {
                    for l in 0..n {
                        prop_assert_eq!(b.edge(k, l), a.edge(perm[k], perm[l]));
                    }
                }
            }
        }

        #[test]
        fn positive_edge_count_is_pairs_of_positives(
            cells in proptest::collection::vec(0i8..2, 12)
        ) {
            let rows: Vec<Vec<i8>> = cells.chunks(3).map(|c| c.to_vec()).collect();
            let x = ResponseMatrix::from_codes(&rows).unwrap();
            let counts = x.item_positive_counts();
            for i in 0..3 {
                let net = materialize_network(&x, Axis::PerItem, i, Encoding::PositiveConcordant).unwrap();
                let s = counts[i];
                prop_assert_eq!(net.count_ones(), s * s.saturating_sub(1) / 2);
            }
        }
    }
}
