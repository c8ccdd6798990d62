//! Feature relevance: histogram mutual information, Shapley attribution
//! (exact enumeration and permutation sampling), and top-k selection.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{bail, Error, Result};
use crate::rng;

/// Equal-width two-dimensional histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// Row-major `bins x bins` counts, rows indexed by the x bin.
    pub joint: Vec<u64>,
    pub x_marginal: Vec<u64>,
    pub y_marginal: Vec<u64>,
    pub total: u64,
}

fn edges(v: &[f64], bins: usize) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..=bins)
        .map(|i| if i == bins { hi } else { lo + (hi - lo) * i as f64 / bins as f64 })
        .collect()
}

fn bin_of(x: f64, edges: &[f64]) -> usize {
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    if hi <= lo {
        return 0;
    }
    let b = libm::floor((x - lo) / (hi - lo) * bins as f64);
    if b <= 0.0 {
        0
    } else {
        (b as usize).min(bins - 1)
    }
}

impl JointHistogram {
    pub fn new(x: &[f64], y: &[f64], bins: usize) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Shape {
                op: "mutual_information",
                left: (x.len(), 1),
                right: (y.len(), 1),
            });
        }
        if x.len() < 2 {
            bail!(Parameter, "need at least two samples");
        }
        if bins < 2 {
            bail!(Parameter, "need at least two bins");
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            bail!(NonFinite, "samples must be finite");
        }
        let (x_edges, y_edges) = (edges(x, bins), edges(y, bins));
        let mut joint = vec![0u64; bins * bins];
        let mut x_marginal = vec![0u64; bins];
        let mut y_marginal = vec![0u64; bins];
        for (&a, &b) in x.iter().zip(y) {
            let (i, j) = (bin_of(a, &x_edges), bin_of(b, &y_edges));
            joint[i * bins + j] += 1;
            x_marginal[i] += 1;
            y_marginal[j] += 1;
        }
        Ok(Self {
            x_edges,
            y_edges,
            joint,
            x_marginal,
            y_marginal,
            total: x.len() as u64,
        })
    }

    pub fn bins(&self) -> usize {
        self.x_marginal.len()
    }

    /// Plug-in mutual information in nats, before clamping.
    pub fn raw_mutual_information(&self) -> f64 {
        let bins = self.bins();
        let n = self.total as f64;
        let mut mi = 0.0;
        for i in 0..bins {
            for j in 0..bins {
                let c = self.joint[i * bins + j];
                if c == 0 {
                    continue;
                }
                let c = c as f64;
                let ratio = c * n / (self.x_marginal[i] as f64 * self.y_marginal[j] as f64);
                mi += c / n * libm::log(ratio);
            }
        }
        mi
    }
}

pub const DEFAULT_BINS: usize = 16;

/// Plug-in MI estimate (nats) from equal-width histograms, clamped at zero.
pub fn mutual_information(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    Ok(JointHistogram::new(x, y, bins)?.raw_mutual_information().max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapleyMethod {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyScores {
    pub values: Vec<f64>,
    pub method: ShapleyMethod,
    /// Coalitions evaluated (exact) or permutations drawn (Monte Carlo).
    pub samples: usize,
    /// Mean model output over the background set.
    pub baseline: f64,
    pub prediction: f64,
}

pub const MAX_EXACT_FEATURES: usize = 12;

fn check_inputs(x: &[f64], background: &[Vec<f64>]) -> Result<()> {
    if x.is_empty() {
        bail!(Parameter, "instance has no features");
    }
    if background.is_empty() {
        bail!(Parameter, "background set is empty");
    }
    if let Some(row) = background.iter().find(|r| r.len() != x.len()) {
        return Err(Error::Shape {
            op: "shapley",
            left: (1, x.len()),
            right: (1, row.len()),
        });
    }
    Ok(())
}

/// Value of a coalition: mean model output with coalition features taken
/// from `x` and the rest from each background row.
fn coalition_value(model: &dyn Fn(&[f64]) -> f64, x: &[f64], background: &[Vec<f64>], mask: u32, buf: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for row in background {
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if mask >> i & 1 == 1 { x[i] } else { row[i] };
        }
        total += model(buf);
    }
    total / background.len() as f64
}

/// Exact Shapley values by subset enumeration (at most 12 features).
pub fn shapley_exact(model: &dyn Fn(&[f64]) -> f64, x: &[f64], background: &[Vec<f64>]) -> Result<ShapleyScores> {
    check_inputs(x, background)?;
    let n = x.len();
    if n > MAX_EXACT_FEATURES {
        bail!(
            Parameter,
            "{} features exceed the exact limit of {}; use the Monte Carlo estimator",
            n,
            MAX_EXACT_FEATURES
        );
    }
    let mut buf = vec![0.0; n];
    let subsets = 1usize << n;
    let values: Vec<f64> = (0..subsets)
        .map(|m| coalition_value(model, x, background, m as u32, &mut buf))
        .collect();

    // weight(|S|) = |S|! (n - |S| - 1)! / n!
    let mut weight = vec![0.0; n];
    for (s, w) in weight.iter_mut().enumerate() {
        let mut v = 1.0;
        for k in 1..=s {
            v *= k as f64;
        }
        for k in 1..n - s {
            v *= k as f64;
        }
        for k in 1..=n {
            v /= k as f64;
        }
        *w = v;
    }
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for m in (0..subsets).filter(|m| m & bit == 0) {
            *p += weight[m.count_ones() as usize] * (values[m | bit] - values[m]);
        }
    }
    Ok(ShapleyScores {
        values: phi,
        method: ShapleyMethod::Exact,
        samples: subsets,
        baseline: values[0],
        prediction: values[subsets - 1],
    })
}

/// Permutation-sampling Shapley estimate. Permutation `p` draws its order
/// and background row from sub-seed `(seed, p)`.
pub fn shapley_mc(
    model: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    background: &[Vec<f64>],
    permutations: usize,
    seed: u64,
) -> Result<ShapleyScores> {
    check_inputs(x, background)?;
    if permutations == 0 {
        bail!(Parameter, "need at least one permutation");
    }
    let n = x.len();
    let mut phi = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut z = vec![0.0; n];
    let mut prev = vec![0.0; background.len()];
    for p in 0..permutations {
        let mut r = rng::seeded(rng::derive_seed(seed, &[p as u64]));
        order.sort_unstable();
        order.shuffle(&mut r);
        for (b, row) in background.iter().enumerate() {
            z.copy_from_slice(row);
            prev[b] = model(&z);
        }
        let mut mask = vec![false; n];
        for &i in &order {
            mask[i] = true;
            let mut gain = 0.0;
            for (b, row) in background.iter().enumerate() {
                for (j, slot) in z.iter_mut().enumerate() {
                    *slot = if mask[j] { x[j] } else { row[j] };
                }
                let cur = model(&z);
                gain += cur - prev[b];
                prev[b] = cur;
            }
            phi[i] += gain / background.len() as f64;
        }
    }
    for v in &mut phi {
        *v /= permutations as f64;
    }
    let baseline = background.iter().map(|b| model(b)).sum::<f64>() / background.len() as f64;
    Ok(ShapleyScores {
        values: phi,
        method: ShapleyMethod::MonteCarlo,
        samples: permutations,
        baseline,
        prediction: model(x),
    })
}

/// Indices of the `k` largest scores, descending, ties to the lower index.
pub fn select_top_k(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        bail!(Parameter, "k = {} outside 1..={}", k, scores.len());
    }
    if scores.iter().any(|s| s.is_nan()) {
        bail!(NonFinite, "scores contain NaN");
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}
