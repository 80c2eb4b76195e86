//! Cached incremental evaluator used by the sampler.
//!
//! Every unordered pair of persons keeps its distance, `e^{-D}` and its
//! summed log-likelihood over all item networks; item pairs likewise over
//! all person networks. A proposal only recomputes the pairs it touches.
//!
//! For a fully observed pair the sum over intercepts collapses to
//!
//! ```text
//! Σ_i softplus(c_i − D) = Σ_{c_i>0} c_i + ln Π_i (a_i + b_i·e^{−D})
//! ```
//!
//! with `(a, b) = (e^{−c}, 1)` for `c > 0` and `(1, e^{c})` otherwise, so each
//! factor lies in `(0, 2]`. Products are taken over short runs and logged,
//! falling back to direct summation when a run gets too small.
//!
//! Sums are always split into fixed-size chunks whose partial results are
//! added in chunk order, so the outcome is identical for any worker count.

use std::ops::Range;

use rayon::prelude::*;

use crate::data::{encode_pair, Encoding, Response, ResponseMatrix};
use crate::error::{NirmError, Result};
use crate::model::{
    edge_term, item_from_persons, normal_log_density, person_from_items, row_log_density, softplus,
    Linkage, ModelConfig, ParameterState,
};
use crate::positions::{euclidean, Positions};

/// Factors per logged product; a multiple of 4 (unrolled accumulators).
const LN_RUN: usize = 64;
/// Unit of work for the ordered reductions; a multiple of `LN_RUN`.
const PAR_CHUNK: usize = 1024;
const TINY: f64 = 1e-290;

/// Precomputed `(a, b)` factors for summing softplus over a fixed set of
/// intercepts at a varying distance.
#[derive(Clone, Debug, Default)]
struct Factors {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    positive_sum: f64,
}

impl Factors {
    fn new(intercepts: &[f64]) -> Self {
        let mut f = Factors {
            a: Vec::with_capacity(intercepts.len()),
            b: Vec::with_capacity(intercepts.len()),
            c: intercepts.to_vec(),
            positive_sum: 0.0,
        };
        for &c in intercepts {
            if c > 0.0 {
                f.a.push((-c).exp());
                f.b.push(1.0);
                f.positive_sum += c;
            } else {
                f.a.push(1.0);
                f.b.push(c.exp());
            }
        }
        f
    }

    /// `Σ_i softplus(c_i − dist)`, with `t = e^{−dist}`.
    #[inline]
    fn softplus_sum(&self, dist: f64, t: f64) -> f64 {
        let mut total = self.positive_sum;
        let mut start = 0;
        while start < self.a.len() {
            let end = (start + LN_RUN).min(self.a.len());
            let prod = run_product(&self.a[start..end], &self.b[start..end], t);
            if prod > TINY && prod.is_finite() {
                total += prod.ln();
            } else {
                for &c in &self.c[start..end] {
                    total += softplus(c - dist) - c.max(0.0);
                }
            }
            start = end;
        }
        total
    }
}

#[inline]
fn run_product(a: &[f64], b: &[f64], t: f64) -> f64 {
    let mut acc = [1.0f64; 4];
    let mut ai = a.chunks_exact(4);
    let mut bi = b.chunks_exact(4);
    for (ac, bc) in (&mut ai).zip(&mut bi) {
        acc[0] *= bc[0] * t + ac[0];
        acc[1] *= bc[1] * t + ac[1];
        acc[2] *= bc[2] * t + ac[2];
        acc[3] *= bc[3] * t + ac[3];
    }
    for (a, b) in ai.remainder().iter().zip(bi.remainder()) {
        acc[0] *= b * t + a;
    }
    (acc[0] * acc[1]) * (acc[2] * acc[3])
}

/// `Σ_j softplus(c − D_j)` over `dist[range]`, with `t_j = e^{−D_j}`.
fn softplus_sum_const(c: f64, dist: &[f64], t: &[f64]) -> f64 {
    let (a, b, base) = if c > 0.0 {
        ((-c).exp(), 1.0, c)
    } else {
        (1.0, c.exp(), 0.0)
    };
    let mut total = base * dist.len() as f64;
    for (ds, ts) in dist.chunks(LN_RUN).zip(t.chunks(LN_RUN)) {
        let mut acc = [1.0f64; 4];
        let mut it = ts.chunks_exact(4);
        for tc in &mut it {
            acc[0] *= b * tc[0] + a;
            acc[1] *= b * tc[1] + a;
            acc[2] *= b * tc[2] + a;
            acc[3] *= b * tc[3] + a;
        }
        for tv in it.remainder() {
            acc[0] *= b * tv + a;
        }
        let prod = (acc[0] * acc[1]) * (acc[2] * acc[3]);
        if prod > TINY && prod.is_finite() {
            total += prod.ln();
        } else {
            for &d in ds {
                total += softplus(c - d) - base;
            }
        }
    }
    total
}

/// Sum of `f` over fixed chunks of `0..len`, reduced in chunk order.
fn ordered_sum<F>(len: usize, parallel: bool, f: F) -> f64
where
    F: Fn(Range<usize>) -> f64 + Sync,
{
    let chunks = len.div_ceil(PAR_CHUNK);
    let range = |c: usize| c * PAR_CHUNK..((c + 1) * PAR_CHUNK).min(len);
    if parallel && chunks > 1 {
        let parts: Vec<f64> = (0..chunks).into_par_iter().map(|c| f(range(c))).collect();
        parts.into_iter().fold(0.0, |acc, v| acc + v)
    } else {
        (0..chunks).fold(0.0, |acc, c| acc + f(range(c)))
    }
}

/// Like [`ordered_sum`], but each chunk also fills its slice of `out`.
fn ordered_fill<T, F>(out: &mut [T], parallel: bool, f: F) -> f64
where
    T: Send,
    F: Fn(usize, &mut [T]) -> f64 + Sync,
{
    if parallel && out.len() > PAR_CHUNK {
        let parts: Vec<f64> = out
            .par_chunks_mut(PAR_CHUNK)
            .enumerate()
            .map(|(c, s)| f(c * PAR_CHUNK, s))
            .collect();
        parts.into_iter().fold(0.0, |acc, v| acc + v)
    } else {
        out.chunks_mut(PAR_CHUNK)
            .enumerate()
            .fold(0.0, |acc, (c, s)| acc + f(c * PAR_CHUNK, s))
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct PairUpdate {
    dist: f64,
    t: f64,
    term: f64,
}

/// Cached quantities for all unordered pairs of one axis.
#[derive(Clone, Debug, Default)]
struct PairCache {
    pairs: Vec<(u32, u32)>,
    dist: Vec<f64>,
    t: Vec<f64>,
    term: Vec<f64>,
    /// Σ edge·intercept over fully observed pairs.
    lin: Vec<f64>,
    /// Number of 1-edges.
    count: Vec<f64>,
    stale: bool,
}

impl PairCache {
    fn new(m: usize) -> Self {
        let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
        for a in 0..m {
            for b in a + 1..m {
                pairs.push((a as u32, b as u32));
            }
        }
        let len = pairs.len();
        PairCache {
            pairs,
            dist: vec![0.0; len],
            t: vec![0.0; len],
            term: vec![0.0; len],
            lin: vec![0.0; len],
            count: vec![0.0; len],
            stale: true,
        }
    }

    fn refresh_geometry(&mut self, pos: &Positions) {
        for (q, &(a, b)) in self.pairs.iter().enumerate() {
            let d = pos.distance(a as usize, b as usize);
            self.dist[q] = d;
            self.t[q] = (-d).exp();
        }
    }
}

/// Everything a pair-term evaluation reads. Borrowed immutably so chunks
/// can be evaluated concurrently.
struct View<'e> {
    x: &'e ResponseMatrix,
    cols: &'e [Response],
    enc: Encoding,
    theta: &'e [f64],
    beta: &'e [f64],
    complete_person: &'e [bool],
    complete_item: &'e [bool],
    y_factors: &'e Factors,
    u_factors: &'e Factors,
}

impl View<'_> {
    #[inline]
    fn y_term(&self, k: usize, l: usize, lin: f64, count: f64, dist: f64, t: f64) -> f64 {
        if self.complete_person[k] && self.complete_person[l] {
            lin - count * dist - self.y_factors.softplus_sum(dist, t)
        } else {
            let (rk, rl) = (self.x.row(k), self.x.row(l));
            let mut s = 0.0;
            for i in 0..rk.len() {
                s += edge_term(self.beta[i], dist, encode_pair(rk[i], rl[i], self.enc));
            }
            s
        }
    }

    #[inline]
    fn u_term(&self, i: usize, j: usize, lin: f64, count: f64, dist: f64, t: f64) -> f64 {
        if self.complete_item[i] && self.complete_item[j] {
            lin - count * dist - self.u_factors.softplus_sum(dist, t)
        } else {
            let n = self.theta.len();
            let (ci, cj) = (&self.cols[i * n..(i + 1) * n], &self.cols[j * n..(j + 1) * n]);
            let mut s = 0.0;
            for k in 0..n {
                s += edge_term(self.theta[k], dist, encode_pair(ci[k], cj[k], self.enc));
            }
            s
        }
    }
}

pub(crate) struct Engine<'a> {
    x: &'a ResponseMatrix,
    cols: Vec<Response>,
    config: ModelConfig,
    parallel: bool,

    theta: Vec<f64>,
    beta: Vec<f64>,
    sigma_sq: f64,
    z: Positions,
    w: Positions,
    z_prop: Positions,
    w_prop: Positions,

    complete_person: Vec<bool>,
    complete_item: Vec<bool>,
    /// Derived rows that move with each free row.
    linked: Vec<Vec<usize>>,
    touched_y: Vec<Vec<u32>>,
    touched_u: Vec<Vec<u32>>,

    y: PairCache,
    u: PairCache,
    y_factors: Factors,
    u_factors: Factors,

    item_ones: Vec<f64>,
    person_ones: Vec<f64>,
    beta_sums: Option<Vec<f64>>,
    theta_sums: Option<Vec<f64>>,

    scratch_y: Vec<PairUpdate>,
    scratch_u: Vec<PairUpdate>,
    pending: Option<usize>,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(
        x: &'a ResponseMatrix,
        config: &ModelConfig,
        state: &ParameterState,
        parallel: bool,
    ) -> Result<Self> {
        state.check(x, config)?;
        let (n, p) = (x.n_persons(), x.n_items());
        let enc = config.encoding;
        let mut cols = Vec::with_capacity(n * p);
        for i in 0..p {
            for k in 0..n {
                cols.push(x.get(k, i));
            }
        }
        let complete_person: Vec<bool> = (0..n)
            .map(|k| x.row(k).iter().all(|r| !r.is_missing()))
            .collect();
        let complete_item: Vec<bool> = (0..p)
            .map(|i| cols[i * n..(i + 1) * n].iter().all(|r| !r.is_missing()))
            .collect();
        let person_items: Vec<Vec<usize>> = (0..n)
            .map(|k| (0..p).filter(|&i| x.get(k, i).is_one()).collect())
            .collect();
        let item_persons: Vec<Vec<usize>> = (0..p)
            .map(|i| (0..n).filter(|&k| x.get(k, i).is_one()).collect())
            .collect();

        let mut y = PairCache::new(n);
        let mut u = PairCache::new(p);
        let mut item_ones = vec![0.0; p];
        for (q, &(k, l)) in y.pairs.iter().enumerate() {
            let (rk, rl) = (x.row(k as usize), x.row(l as usize));
            let mut c = 0.0;
            for i in 0..p {
                if encode_pair(rk[i], rl[i], enc).is_one() {
                    c += 1.0;
                    item_ones[i] += 1.0;
                }
            }
            y.count[q] = c;
        }
        let mut person_ones = vec![0.0; n];
        for (q, &(i, j)) in u.pairs.iter().enumerate() {
            let (ci, cj) = (
                &cols[i as usize * n..(i as usize + 1) * n],
                &cols[j as usize * n..(j as usize + 1) * n],
            );
            let mut c = 0.0;
            for k in 0..n {
                if encode_pair(ci[k], cj[k], enc).is_one() {
                    c += 1.0;
                    person_ones[k] += 1.0;
                }
            }
            u.count[q] = c;
        }

        // which pairs each free row's move touches
        let pairs_touching = |m: usize, members: &[usize]| -> Vec<u32> {
            let mut flag = vec![false; m];
            members.iter().for_each(|&a| flag[a] = true);
            let mut out = Vec::new();
            let mut q = 0u32;
            for a in 0..m {
                for b in a + 1..m {
                    if flag[a] || flag[b] {
                        out.push(q);
                    }
                    q += 1;
                }
            }
            out
        };
        let (linked, touched_y, touched_u) = match config.linkage {
            Linkage::ItemFromPerson => {
                let ty = (0..n).map(|r| pairs_touching(n, &[r])).collect();
                let tu = person_items.iter().map(|c| pairs_touching(p, c)).collect();
                (person_items, ty, tu)
            }
            Linkage::PersonFromItem => {
                let ty = item_persons.iter().map(|c| pairs_touching(n, c)).collect();
                let tu = (0..p).map(|r| pairs_touching(p, &[r])).collect();
                (item_persons, ty, tu)
            }
        };

        let (z, w) = crate::model::latent_spaces(state, x, config)?;
        y.refresh_geometry(&z);
        u.refresh_geometry(&w);

        let mut engine = Engine {
            x,
            cols,
            config: *config,
            parallel,
            theta: state.theta.clone(),
            beta: state.beta.clone(),
            sigma_sq: state.sigma_sq,
            z_prop: z.clone(),
            w_prop: w.clone(),
            z,
            w,
            complete_person,
            complete_item,
            linked,
            touched_y,
            touched_u,
            y,
            u,
            y_factors: Factors::default(),
            u_factors: Factors::default(),
            item_ones,
            person_ones,
            beta_sums: None,
            theta_sums: None,
            scratch_y: Vec::new(),
            scratch_u: Vec::new(),
            pending: None,
        };
        engine.refresh_terms();
        let total = engine.log_posterior();
        if !total.is_finite() {
            return Err(NirmError::Initialization(format!(
                "log-posterior at the initial state is not finite ({total})"
            )));
        }
        Ok(engine)
    }

    fn view(&self) -> View<'_> {
        View {
            x: self.x,
            cols: &self.cols,
            enc: self.config.encoding,
            theta: &self.theta,
            beta: &self.beta,
            complete_person: &self.complete_person,
            complete_item: &self.complete_item,
            y_factors: &self.y_factors,
            u_factors: &self.u_factors,
        }
    }

    /// Rebuild stale pair terms after intercept changes.
    fn refresh_terms(&mut self) {
        if self.y.stale {
            self.y_factors = Factors::new(&self.beta);
            let mut lin = std::mem::take(&mut self.y.lin);
            let x = self.x;
            let (enc, beta, pairs) = (self.config.encoding, &self.beta, &self.y.pairs);
            ordered_fill(&mut lin, self.parallel, |off, out| {
                for (s, v) in out.iter_mut().enumerate() {
                    let (k, l) = pairs[off + s];
                    let (rk, rl) = (x.row(k as usize), x.row(l as usize));
                    let mut acc = 0.0;
                    for i in 0..rk.len() {
                        if encode_pair(rk[i], rl[i], enc).is_one() {
                            acc += beta[i];
                        }
                    }
                    *v = acc;
                }
                0.0
            });
            self.y.lin = lin;
            let mut term = std::mem::take(&mut self.y.term);
            {
                let view = self.view();
                let y = &self.y;
                ordered_fill(&mut term, self.parallel, |off, out| {
                    for (s, v) in out.iter_mut().enumerate() {
                        let q = off + s;
                        let (k, l) = y.pairs[q];
                        *v = view.y_term(k as usize, l as usize, y.lin[q], y.count[q], y.dist[q], y.t[q]);
                    }
                    0.0
                });
            }
            self.y.term = term;
            self.y.stale = false;
        }
        if self.u.stale {
            self.u_factors = Factors::new(&self.theta);
            let n = self.theta.len();
            let mut lin = std::mem::take(&mut self.u.lin);
            {
                let (enc, theta, pairs, cols) =
                    (self.config.encoding, &self.theta, &self.u.pairs, &self.cols);
                ordered_fill(&mut lin, self.parallel, |off, out| {
                    for (s, v) in out.iter_mut().enumerate() {
                        let (i, j) = pairs[off + s];
                        let ci = &cols[i as usize * n..(i as usize + 1) * n];
                        let cj = &cols[j as usize * n..(j as usize + 1) * n];
                        let mut acc = 0.0;
                        for k in 0..n {
                            if encode_pair(ci[k], cj[k], enc).is_one() {
                                acc += theta[k];
                            }
                        }
                        *v = acc;
                    }
                    0.0
                });
            }
            self.u.lin = lin;
            let mut term = std::mem::take(&mut self.u.term);
            {
                let view = self.view();
                let u = &self.u;
                ordered_fill(&mut term, self.parallel, |off, out| {
                    for (s, v) in out.iter_mut().enumerate() {
                        let q = off + s;
                        let (i, j) = u.pairs[q];
                        *v = view.u_term(i as usize, j as usize, u.lin[q], u.count[q], u.dist[q], u.t[q]);
                    }
                    0.0
                });
            }
            self.u.term = term;
            self.u.stale = false;
        }
    }

    pub(crate) fn free_rows(&self) -> usize {
        self.free().rows()
    }

    fn free(&self) -> &Positions {
        match self.config.linkage {
            Linkage::ItemFromPerson => &self.z,
            Linkage::PersonFromItem => &self.w,
        }
    }

    pub(crate) fn free_row(&self, r: usize) -> &[f64] {
        self.free().row(r)
    }

    pub(crate) fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub(crate) fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub(crate) fn set_sigma_sq(&mut self, v: f64) {
        self.sigma_sq = v;
    }

    pub(crate) fn free_sum_of_squares(&self) -> f64 {
        self.free().as_slice().iter().map(|v| v * v).sum()
    }

    pub(crate) fn state(&self) -> ParameterState {
        ParameterState {
            free_positions: self.free().clone(),
            theta: self.theta.clone(),
            beta: self.beta.clone(),
            sigma_sq: self.sigma_sq,
        }
    }

    /// Current log-posterior, from the caches.
    pub(crate) fn log_posterior(&mut self) -> f64 {
        self.refresh_terms();
        let ll_y = ordered_sum(self.y.term.len(), self.parallel, |r| self.y.term[r].iter().sum());
        let ll_u = ordered_sum(self.u.term.len(), self.parallel, |r| self.u.term[r].iter().sum());
        ll_y + ll_u + crate::model::log_prior(&self.state(), &self.config)
    }

    /// Log-posterior change if free row `r` moved to `value`. The proposal
    /// is held until [`Engine::accept_position`] or [`Engine::reject_position`].
    pub(crate) fn propose_position(&mut self, r: usize, value: &[f64]) -> f64 {
        debug_assert!(self.pending.is_none());
        self.refresh_terms();
        let x = self.x;
        let eps = self.config.epsilon;
        match self.config.linkage {
            Linkage::ItemFromPerson => {
                self.z_prop.row_mut(r).copy_from_slice(value);
                for &i in &self.linked[r] {
                    let (zp, wp) = (&self.z_prop, &mut self.w_prop);
                    item_from_persons(x, zp, i, wp.row_mut(i));
                }
            }
            Linkage::PersonFromItem => {
                self.w_prop.row_mut(r).copy_from_slice(value);
                for &k in &self.linked[r] {
                    let (wp, zp) = (&self.w_prop, &mut self.z_prop);
                    person_from_items(x, wp, k, eps, zp.row_mut(k));
                }
            }
        }
        let mut scratch_y = std::mem::take(&mut self.scratch_y);
        let mut scratch_u = std::mem::take(&mut self.scratch_u);
        let delta_y;
        let delta_u;
        {
            let view = self.view();
            let list = &self.touched_y[r];
            scratch_y.resize(list.len(), PairUpdate::default());
            let (y, zp) = (&self.y, &self.z_prop);
            delta_y = ordered_fill(&mut scratch_y, self.parallel, |off, out| {
                let mut acc = 0.0;
                for (s, slot) in out.iter_mut().enumerate() {
                    let q = list[off + s] as usize;
                    let (k, l) = y.pairs[q];
                    let dist = euclidean(zp.row(k as usize), zp.row(l as usize));
                    let t = (-dist).exp();
                    let term = view.y_term(k as usize, l as usize, y.lin[q], y.count[q], dist, t);
                    *slot = PairUpdate { dist, t, term };
                    acc += term - y.term[q];
                }
                acc
            });
            let list = &self.touched_u[r];
            scratch_u.resize(list.len(), PairUpdate::default());
            let (u, wp) = (&self.u, &self.w_prop);
            delta_u = ordered_fill(&mut scratch_u, self.parallel, |off, out| {
                let mut acc = 0.0;
                for (s, slot) in out.iter_mut().enumerate() {
                    let q = list[off + s] as usize;
                    let (i, j) = u.pairs[q];
                    let dist = euclidean(wp.row(i as usize), wp.row(j as usize));
                    let t = (-dist).exp();
                    let term = view.u_term(i as usize, j as usize, u.lin[q], u.count[q], dist, t);
                    *slot = PairUpdate { dist, t, term };
                    acc += term - u.term[q];
                }
                acc
            });
        }
        self.scratch_y = scratch_y;
        self.scratch_u = scratch_u;
        self.pending = Some(r);
        let prior = row_log_density(value, self.sigma_sq) - row_log_density(self.free().row(r), self.sigma_sq);
        delta_y + delta_u + prior
    }

    pub(crate) fn accept_position(&mut self) {
        let r = self.pending.take().expect("no pending position proposal");
        for (s, &q) in self.touched_y[r].iter().enumerate() {
            let upd = self.scratch_y[s];
            let q = q as usize;
            self.y.dist[q] = upd.dist;
            self.y.t[q] = upd.t;
            self.y.term[q] = upd.term;
        }
        for (s, &q) in self.touched_u[r].iter().enumerate() {
            let upd = self.scratch_u[s];
            let q = q as usize;
            self.u.dist[q] = upd.dist;
            self.u.t[q] = upd.t;
            self.u.term[q] = upd.term;
        }
        match self.config.linkage {
            Linkage::ItemFromPerson => {
                self.z.row_mut(r).copy_from_slice(self.z_prop.row(r));
                for &i in &self.linked[r] {
                    self.w.row_mut(i).copy_from_slice(self.w_prop.row(i));
                }
            }
            Linkage::PersonFromItem => {
                self.w.row_mut(r).copy_from_slice(self.w_prop.row(r));
                for &k in &self.linked[r] {
                    self.z.row_mut(k).copy_from_slice(self.z_prop.row(k));
                }
            }
        }
        self.beta_sums = None;
        self.theta_sums = None;
    }

    pub(crate) fn reject_position(&mut self) {
        let r = self.pending.take().expect("no pending position proposal");
        match self.config.linkage {
            Linkage::ItemFromPerson => {
                self.z_prop.row_mut(r).copy_from_slice(self.z.row(r));
                for &i in &self.linked[r] {
                    self.w_prop.row_mut(i).copy_from_slice(self.w.row(i));
                }
            }
            Linkage::PersonFromItem => {
                self.w_prop.row_mut(r).copy_from_slice(self.w.row(r));
                for &k in &self.linked[r] {
                    self.z_prop.row_mut(k).copy_from_slice(self.z.row(k));
                }
            }
        }
    }

    /// `Σ softplus(c − D)` over the observed pairs of item `i`'s network.
    fn item_softplus(&self, i: usize, c: f64) -> f64 {
        let y = &self.y;
        if self.complete_item[i] {
            ordered_sum(y.dist.len(), self.parallel, |r| {
                softplus_sum_const(c, &y.dist[r.clone()], &y.t[r])
            })
        } else {
            let n = self.theta.len();
            let col = &self.cols[i * n..(i + 1) * n];
            ordered_sum(y.dist.len(), self.parallel, |r| {
                let mut s = 0.0;
                for q in r {
                    let (k, l) = y.pairs[q];
                    if !(col[k as usize].is_missing() || col[l as usize].is_missing()) {
                        s += softplus(c - y.dist[q]);
                    }
                }
                s
            })
        }
    }

    /// `Σ softplus(c − D)` over the observed pairs of person `k`'s network.
    fn person_softplus(&self, k: usize, c: f64) -> f64 {
        let u = &self.u;
        if self.complete_person[k] {
            ordered_sum(u.dist.len(), self.parallel, |r| {
                softplus_sum_const(c, &u.dist[r.clone()], &u.t[r])
            })
        } else {
            let row = self.x.row(k);
            let mut s = 0.0;
            for (q, &(i, j)) in u.pairs.iter().enumerate() {
                if !(row[i as usize].is_missing() || row[j as usize].is_missing()) {
                    s += softplus(c - u.dist[q]);
                }
            }
            s
        }
    }

    pub(crate) fn beta_delta(&mut self, i: usize, value: f64) -> (f64, f64) {
        if self.beta_sums.is_none() {
            let sums = (0..self.beta.len())
                .map(|j| self.item_softplus(j, self.beta[j]))
                .collect();
            self.beta_sums = Some(sums);
        }
        let old = self.beta[i];
        let new_sum = self.item_softplus(i, value);
        let cur = self.beta_sums.as_ref().unwrap()[i];
        let s2 = self.config.priors.sigma_beta_sq;
        let delta = (value - old) * self.item_ones[i] - (new_sum - cur)
            + normal_log_density(value, s2)
            - normal_log_density(old, s2);
        (delta, new_sum)
    }

    pub(crate) fn accept_beta(&mut self, i: usize, value: f64, new_sum: f64) {
        self.beta[i] = value;
        if let Some(s) = self.beta_sums.as_mut() {
            s[i] = new_sum;
        }
        self.y.stale = true;
    }

    pub(crate) fn theta_delta(&mut self, k: usize, value: f64) -> (f64, f64) {
        if self.theta_sums.is_none() {
            let sums = (0..self.theta.len())
                .map(|j| self.person_softplus(j, self.theta[j]))
                .collect();
            self.theta_sums = Some(sums);
        }
        let old = self.theta[k];
        let new_sum = self.person_softplus(k, value);
        let cur = self.theta_sums.as_ref().unwrap()[k];
        let s2 = self.config.priors.sigma_theta_sq;
        let delta = (value - old) * self.person_ones[k] - (new_sum - cur)
            + normal_log_density(value, s2)
            - normal_log_density(old, s2);
        (delta, new_sum)
    }

    pub(crate) fn accept_theta(&mut self, k: usize, value: f64, new_sum: f64) {
        self.theta[k] = value;
        if let Some(s) = self.theta_sums.as_mut() {
            s[k] = new_sum;
        }
        self.u.stale = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{delta_log_posterior, log_posterior, Change};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(
        seed: u64,
        n: usize,
        p: usize,
        missing: f64,
        linkage: Linkage,
        encoding: Encoding,
    ) -> (ResponseMatrix, ModelConfig, ParameterState) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = loop {
            let rows: Vec<Vec<i8>> = (0..n)
                .map(|_| {
                    (0..p)
                        .map(|_| {
                            if rng.random::<f64>() < missing {
                                -1
                            } else {
                                rng.random_range(0..2)
                            }
                        })
                        .collect()
                })
                .collect();
            let x = ResponseMatrix::from_codes(&rows).unwrap();
            if x.item_positive_counts().iter().all(|&c| c > 0) {
                break x;
            }
        };
        let config = ModelConfig {
            dim: 2,
            encoding,
            linkage,
            ..ModelConfig::default()
        };
        let rows = config.free_rows(&x);
        let state = ParameterState {
            free_positions: Positions::from_vec(
                rows,
                2,
                (0..rows * 2).map(|_| rng.random_range(-1.5..1.5)).collect(),
            ),
            theta: (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
            beta: (0..p).map(|_| rng.random_range(-3.0..3.0)).collect(),
            sigma_sq: 0.8,
        };
        (x, config, state)
    }

    #[test]
    fn factor_sum_matches_direct() {
        let c: Vec<f64> = (0..150).map(|i| (i as f64 * 0.37).sin() * 12.0).collect();
        let f = Factors::new(&c);
        for d in [0.0, 0.3, 2.5, 9.0, 40.0] {
            let direct: f64 = c.iter().map(|&ci| softplus(ci - d)).sum();
            let fast = f.softplus_sum(d, (-d).exp());
            assert!((direct - fast).abs() < 1e-10 * direct.abs().max(1.0), "{d}: {direct} vs {fast}");
        }
    }

    #[test]
    fn const_sum_matches_direct_including_extremes() {
        let dist: Vec<f64> = (0..300).map(|i| (i as f64) * 0.05).collect();
        let t: Vec<f64> = dist.iter().map(|d| (-d).exp()).collect();
        for c in [-30.0, -2.0, 0.0, 1.5, 25.0, 400.0] {
            let direct: f64 = dist.iter().map(|&d| softplus(c - d)).sum();
            let fast = softplus_sum_const(c, &dist, &t);
            assert!((direct - fast).abs() < 1e-9 * direct.abs().max(1.0), "{c}: {direct} vs {fast}");
        }
    }

    #[test]
    fn engine_matches_pure_evaluation() {
        let mut case = 0;
        for linkage in [Linkage::ItemFromPerson, Linkage::PersonFromItem] {
            for enc in [Encoding::PositiveConcordant, Encoding::AllConcordant] {
                for missing in [0.0, 0.1] {
                    case += 1;
                    let (x, cfg, state) = setup(case, 12, 6, missing, linkage, enc);
                    let mut engine = Engine::new(&x, &cfg, &state, false).unwrap();
                    let pure = log_posterior(&x, &state, &cfg).unwrap().total;
                    assert!((engine.log_posterior() - pure).abs() < 1e-9);

                    let mut rng = ChaCha8Rng::seed_from_u64(100 + case);
                    let mut cur = state.clone();
                    for step in 0..60 {
                        let change = match step % 3 {
                            0 => Change::Position {
                                row: rng.random_range(0..engine.free_rows()),
                                value: vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                            },
                            1 => Change::Theta {
                                person: rng.random_range(0..x.n_persons()),
                                value: rng.random_range(-3.0..3.0),
                            },
                            _ => Change::Beta {
                                item: rng.random_range(0..x.n_items()),
                                value: rng.random_range(-3.0..3.0),
                            },
                        };
                        let expected = delta_log_posterior(&x, &cur, &cfg, &change).unwrap();
                        let accept = rng.random::<bool>();
                        let got = match &change {
                            Change::Position { row, value } => {
                                let d = engine.propose_position(*row, value);
                                if accept {
                                    engine.accept_position()
                                } else {
                                    engine.reject_position()
                                }
                                d
                            }
                            Change::Theta { person, value } => {
                                let (d, s) = engine.theta_delta(*person, *value);
                                if accept {
                                    engine.accept_theta(*person, *value, s);
                                }
                                d
                            }
                            Change::Beta { item, value } => {
                                let (d, s) = engine.beta_delta(*item, *value);
                                if accept {
                                    engine.accept_beta(*item, *value, s);
                                }
                                d
                            }
                        };
                        assert!(
                            (got - expected).abs() < 1e-8,
                            "case {case} step {step}: {got} vs {expected}"
                        );
                        if accept {
                            change.apply(&mut cur);
                        }
                        assert_eq!(engine.state(), cur);
                    }
                    let pure = log_posterior(&x, &cur, &cfg).unwrap().total;
                    assert!((engine.log_posterior() - pure).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn parallel_reduction_is_bitwise_identical() {
        let (x, cfg, state) = setup(77, 70, 8, 0.05, Linkage::PersonFromItem, Encoding::AllConcordant);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let run = |parallel: bool| {
            let mut e = Engine::new(&x, &cfg, &state, parallel).unwrap();
            let mut out = Vec::new();
            for r in 0..e.free_rows() {
                let v = vec![0.1 * r as f64, -0.2];
                out.push(e.propose_position(r, &v));
                e.accept_position();
            }
            for i in 0..x.n_items() {
                let (d, s) = e.beta_delta(i, 0.5);
                out.push(d);
                e.accept_beta(i, 0.5, s);
            }
            out.push(e.log_posterior());
            out
        };
        let seq = run(false);
        let par = pool.install(|| run(true));
        assert_eq!(
            seq.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            par.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
