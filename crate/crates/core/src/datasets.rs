//! Bundled example data.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{CsvOptions, ResponseMatrix};
use crate::error::{NirmError, Result};

const LSAT6_CSV: &str = include_str!("../data/lsat6.csv");

/// LSAT section 6: 1000 examinees, 5 binary items, no missing values.
pub fn lsat6() -> ResponseMatrix {
    let opts = CsvOptions {
        has_person_id_column: true,
        ..CsvOptions::default()
    };
    ResponseMatrix::read_csv(LSAT6_CSV.as_bytes(), &opts).expect("bundled LSAT6 data is well formed")
}

/// A seeded random subset of `n` LSAT6 examinees, kept in original order.
pub fn lsat6_subsample(n: usize, seed: u64) -> Result<ResponseMatrix> {
    let full = lsat6();
    if n < 2 || n > full.n_persons() {
        return Err(NirmError::validation(format!(
            "subsample size must be between 2 and {}, got {n}",
            full.n_persons()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, full.n_persons(), n).into_vec();
    picked.sort_unstable();
    full.select_persons(&picked)
}
