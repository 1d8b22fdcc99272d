//! Hoeffding's D statistic and the thresholded dependence test.
//!
//! The statistic is reported on the scale where it lies in `[-0.5, 1]` for
//! tie-free data (the classical value multiplied by 30). Positive values
//! indicate dependence; the masking procedure compares the raw value against
//! a small threshold `gamma` rather than computing p-values.
//!
//! Ties follow Hoeffding's original convention: midranks for the marginal
//! ranks, and a bivariate count `Q_i` in which a point strictly below on both
//! coordinates counts 1, a point tied on one coordinate and strictly below on
//! the other counts 1/2, and a point tied on both counts 1/4.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default dependence threshold.
pub const DEFAULT_GAMMA: f64 = 1e-3;

/// Smallest sample size for which the statistic is defined.
pub const MIN_SAMPLES: usize = 5;

/// Largest sample size for which the exact integer accumulation cannot overflow.
pub const MAX_SAMPLES: usize = 10_000_000;

/// Two equally long columns of finite reals, one pair per independent draw.
#[derive(Debug, Clone, Copy)]
pub struct PairedSamples<'a> {
    x: &'a [f64],
    y: &'a [f64],
}

impl<'a> PairedSamples<'a> {
    pub fn new(x: &'a [f64], y: &'a [f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch {
                x: x.len(),
                y: y.len(),
            });
        }
        if x.len() < MIN_SAMPLES {
            return Err(Error::TooFewSamples(x.len()));
        }
        if x.len() > MAX_SAMPLES {
            return Err(Error::InvalidQuery(format!(
                "at most {MAX_SAMPLES} samples supported, got {}",
                x.len()
            )));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &'a [f64] {
        self.x
    }

    pub fn y(&self) -> &'a [f64] {
        self.y
    }

    pub fn swapped(&self) -> PairedSamples<'a> {
        PairedSamples {
            x: self.y,
            y: self.x,
        }
    }
}

/// Value of Hoeffding's D (scaled by 30).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct DStatistic(pub f64);

impl DStatistic {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn exceeds(self, gamma: f64) -> bool {
        self.0 > gamma
    }
}

/// Hoeffding's D in `O(n log n)`.
///
/// Marginal ranks come from one sort per coordinate. The bivariate counts are
/// obtained by sweeping the points in increasing `x` while a Fenwick tree over
/// the dense `y` ranks holds every point with strictly smaller `x`; ties in
/// `x` are resolved inside each equal-`x` group, which the sweep visits sorted
/// by `y`.
///
/// All intermediate quantities are integers (twice the midranks, four times
/// `Q_i`), so the numerator is accumulated exactly in `i128` and the result
/// is independent of the order of the pairs.
pub fn hoeffding_d(s: &PairedSamples<'_>) -> DStatistic {
    let y = rank_column(s.y, sorted_order(s.y));
    let x_order = sorted_order_by_x_then(s.x, &y.dense);
    let x = rank_column(s.x, x_order);
    let q4 = quadrupled_bivariate_counts(s.x, &x.order, &y.dense, y.levels);
    let d = assemble(s.len(), &x.doubled_midrank, &y.doubled_midrank, &q4);
    debug_assert!(
        x.ties || y.ties || (-0.5 - 1e-9..=1.0 + 1e-9).contains(&d),
        "tie-free Hoeffding D out of range: {d}"
    );
    DStatistic(d)
}

/// Convenience wrapper validating raw slices.
pub fn hoeffding_d_slices(x: &[f64], y: &[f64]) -> Result<DStatistic> {
    Ok(hoeffding_d(&PairedSamples::new(x, y)?))
}

/// `hoeffding_d(s) > gamma`.
pub fn dependent(s: &PairedSamples<'_>, gamma: f64) -> Result<bool> {
    check_gamma(gamma)?;
    Ok(hoeffding_d(s).exceeds(gamma))
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidGamma(gamma))
    }
}

/// Maps an `f64` to a `u64` whose unsigned order is `f64::total_cmp` order.
#[inline]
fn order_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

fn sorted_order(v: &[f64]) -> Vec<usize> {
    let mut keyed: Vec<(u64, u32)> = v
        .iter()
        .enumerate()
        .map(|(i, &x)| (order_key(x), i as u32))
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i as usize).collect()
}

/// Order by `x`, ties broken by dense `y` rank.
fn sorted_order_by_x_then(x: &[f64], y_dense: &[usize]) -> Vec<usize> {
    let mut keyed: Vec<(u64, u32, u32)> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| (order_key(v), y_dense[i] as u32, i as u32))
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, _, i)| i as usize).collect()
}

/// Runs of equal values in `order`, as half-open ranges of positions.
fn tie_runs<'a>(v: &'a [f64], order: &'a [usize]) -> impl Iterator<Item = (usize, usize)> + 'a {
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= order.len() {
            return None;
        }
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let run = (start, end);
        start = end;
        Some(run)
    })
}

struct RankedColumn {
    order: Vec<usize>,
    /// `2 * midrank` (1-based), exact in integers.
    doubled_midrank: Vec<i64>,
    /// 0-based rank among distinct values.
    dense: Vec<usize>,
    levels: usize,
    ties: bool,
}

/// Ranks of `v` given an order that sorts it.
fn rank_column(v: &[f64], order: Vec<usize>) -> RankedColumn {
    let n = v.len();
    let mut doubled_midrank = vec![0i64; n];
    let mut dense = vec![0usize; n];
    let mut levels = 0;
    let mut ties = false;
    for (start, end) in tie_runs(v, &order) {
        ties |= end - start > 1;
        // positions start..end hold ranks start+1..=end; their mean doubled
        let r2 = (start + 1 + end) as i64;
        for &i in &order[start..end] {
            doubled_midrank[i] = r2;
            dense[i] = levels;
        }
        levels += 1;
    }
    RankedColumn {
        order,
        doubled_midrank,
        dense,
        levels,
        ties,
    }
}

struct Fenwick {
    tree: Vec<u32>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            tree: vec![0; n + 1],
        }
    }

    fn add(&mut self, pos: usize) {
        let mut i = pos + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted positions strictly below `pos`.
    fn count_below(&self, pos: usize) -> u32 {
        let mut i = pos;
        let mut acc = 0;
        while i > 0 {
            acc += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        acc
    }
}

/// `4 * Q_i`, exact in integers. `order` sorts the points by `x` and then by
/// dense `y` rank.
fn quadrupled_bivariate_counts(
    x: &[f64],
    order: &[usize],
    y_rank: &[usize],
    levels: usize,
) -> Vec<i64> {
    let mut tree = Fenwick::new(levels);
    let mut q4 = vec![0i64; x.len()];
    for (gs, ge) in tie_runs(x, order) {
        let group = &order[gs..ge];
        let mut k = 0;
        while k < group.len() {
            // run of equal y inside the equal-x group
            let rank = y_rank[group[k]];
            let mut m = k + 1;
            while m < group.len() && y_rank[group[m]] == rank {
                m += 1;
            }
            let below = tree.count_below(rank);
            let both_below = below as i64;
            let x_below_y_tied = (tree.count_below(rank + 1) - below) as i64;
            let x_tied_y_below = k as i64;
            let both_tied = (m - k - 1) as i64;
            let value = 4 + 4 * both_below + 2 * (x_below_y_tied + x_tied_y_below) + both_tied;
            for &i in &group[k..m] {
                q4[i] = value;
            }
            k = m;
        }
        for &i in group {
            tree.add(y_rank[i]);
        }
    }
    q4
}

fn assemble(n: usize, rx2: &[i64], ry2: &[i64], q4: &[i64]) -> f64 {
    // Each sum below is 16x its textbook counterpart.
    let (mut a, mut b, mut c) = (0i128, 0i128, 0i128);
    for i in 0..n {
        let (r, s, q) = (rx2[i] as i128, ry2[i] as i128, q4[i] as i128);
        a += (q - 4) * (q - 8);
        b += (r - 2) * (r - 4) * (s - 2) * (s - 4);
        c += (r - 4) * (s - 4) * (q - 4);
    }
    let n = n as i128;
    let num = (n - 2) * (n - 3) * a + b - 2 * (n - 2) * c;
    let den = 16 * n * (n - 1) * (n - 2) * (n - 3) * (n - 4);
    30.0 * num as f64 / den as f64
}
