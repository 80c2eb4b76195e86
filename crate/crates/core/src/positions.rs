//! Row-major point configurations.

use serde::{Deserialize, Serialize};

/// `rows` points in `dim` dimensions, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Positions {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Positions {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Positions {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    /// Panics if `data.len() != rows * dim`.
    pub fn from_vec(rows: usize, dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * dim, "position data has wrong length");
        Positions { rows, dim, data }
    }

    /// Panics on ragged input or an empty list.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            assert_eq!(r.as_ref().len(), dim, "ragged position rows");
            data.extend_from_slice(r.as_ref());
        }
        Positions {
            rows: rows.len(),
            dim,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim.max(1)).take(self.rows)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(|r| r.to_vec()).collect()
    }

    #[inline]
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        euclidean(self.row(a), self.row(b))
    }

    /// Full symmetric distance matrix, row-major `rows × rows`.
    pub fn distance_matrix(&self) -> Vec<f64> {
        let m = self.rows;
        let mut out = vec![0.0; m * m];
        for a in 0..m {
            for b in a + 1..m {
                let d = self.distance(a, b);
                out[a * m + b] = d;
                out[b * m + a] = d;
            }
        }
        out
    }

    /// Stack `self` above `other` (same dimension).
    pub fn stacked(&self, other: &Positions) -> Positions {
        assert_eq!(self.dim, other.dim, "cannot stack different dimensions");
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Positions {
            rows: self.rows + other.rows,
            dim: self.dim,
            data,
        }
    }

    /// Split into the first `head` rows and the rest.
    pub fn split_at(&self, head: usize) -> (Positions, Positions) {
        let (a, b) = self.data.split_at(head * self.dim);
        (
            Positions::from_vec(head, self.dim, a.to_vec()),
            Positions::from_vec(self.rows - head, self.dim, b.to_vec()),
        )
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for r in self.iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Index of the pair `(a, b)`, `a < b < n`, in a condensed upper triangle.
#[inline]
pub fn pair_index(n: usize, a: usize, b: usize) -> usize {
    debug_assert!(a < b && b < n);
    a * (2 * n - a - 1) / 2 + (b - a - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_index_enumerates_upper_triangle() {
        let n = 7;
        let mut expected = 0;
        for a in 0..n {
            for b in a + 1..n {
                assert_eq!(pair_index(n, a, b), expected);
                expected += 1;
            }
        }
    }

    #[test]
    fn stack_and_split_roundtrip() {
        let a = Positions::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Positions::from_rows(&[[5.0, 6.0]]);
        let s = a.stacked(&b);
        assert_eq!(s.rows(), 3);
        let (x, y) = s.split_at(2);
        assert_eq!((x, y), (a, b));
    }

    #[test]
    fn distance_matrix_is_symmetric() {
        let p = Positions::from_rows(&[[0.0, 0.0], [3.0, 4.0], [1.0, 1.0]]);
        let d = p.distance_matrix();
        assert_eq!(d[1], 5.0);
        assert_eq!(d[3], 5.0);
        assert_eq!(d[4], 0.0);
    }
}
