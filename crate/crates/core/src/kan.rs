//! Kolmogorov-Arnold layers built from uniform B-spline edge functions.
//!
//! Each of the `n_out x n_in` edges carries a univariate function
//! `phi(x) = w_b * silu(x) + w_s * sum_i c_i B_i(x)`; an output is the sum
//! of its incoming edge functions. Inputs are clamped to the grid domain
//! before the spline basis is evaluated; the SiLU term sees the raw input.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::error::{bail, Error, Result};
use crate::rng;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Uniform knot grid with `order` extra knots beyond each end of `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineGrid {
    grid_size: usize,
    order: usize,
    lo: f64,
    hi: f64,
}

impl SplineGrid {
    pub fn new(grid_size: usize, order: usize, lo: f64, hi: f64) -> Result<Self> {
        if grid_size == 0 {
            bail!(Parameter, "grid size must be at least 1");
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            bail!(Parameter, "spline domain [{}, {}] is empty", lo, hi);
        }
        Ok(Self {
            grid_size,
            order,
            lo,
            hi,
        })
    }

    /// Grid on the default `[-1, 1]` domain.
    pub fn unit(grid_size: usize, order: usize) -> Result<Self> {
        Self::new(grid_size, order, -1.0, 1.0)
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.grid_size as f64
    }

    pub fn basis_count(&self) -> usize {
        self.grid_size + self.order
    }

    /// Knot `j` of the extended vector, `0 <= j <= G + 2k`.
    pub fn knot(&self, j: usize) -> f64 {
        let offset = j as f64 - self.order as f64;
        if j == self.order + self.grid_size {
            return self.hi;
        }
        self.lo + offset * self.spacing()
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..=self.grid_size + 2 * self.order).map(|j| self.knot(j)).collect()
    }

    /// Greville abscissae: coefficients equal to `f` at these points
    /// reproduce any affine `f` exactly (for order >= 1).
    pub fn greville(&self) -> Vec<f64> {
        (0..self.basis_count())
            .map(|i| {
                if self.order == 0 {
                    0.5 * (self.knot(i) + self.knot(i + 1))
                } else {
                    (1..=self.order).map(|j| self.knot(i + j)).sum::<f64>() / self.order as f64
                }
            })
            .collect()
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    /// Interval index `s` in `0..G` containing the (clamped) point.
    fn interval(&self, x: f64) -> usize {
        let s = libm::floor((x - self.lo) / self.spacing());
        if s <= 0.0 {
            0
        } else {
            (s as usize).min(self.grid_size - 1)
        }
    }

    /// Non-zero basis values of `degree` on interval `s` (Cox-de Boor,
    /// triangular form). Writes `degree + 1` values for basis indices
    /// `s + order - degree ..= s + order`.
    fn nonzero(&self, x: f64, s: usize, degree: usize, out: &mut [f64], scratch: &mut [f64]) {
        let span = s + self.order;
        let (left, right) = scratch.split_at_mut(degree + 1);
        out[0] = 1.0;
        for j in 1..=degree {
            left[j] = x - self.knot(span + 1 - j);
            right[j] = self.knot(span + j) - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    /// Full basis vector of length `G + k` at `x` (clamped to the domain).
    pub fn basis(&self, x: f64) -> Vec<f64> {
        let mut full = vec![0.0; self.basis_count()];
        let mut local = BasisEval::new(self.order);
        let start = local.eval(self, x, false);
        full[start..start + self.order + 1].copy_from_slice(&local.values);
        full
    }
}

/// Scratch space for local basis evaluation.
pub(crate) struct BasisEval {
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
    lower: Vec<f64>,
    scratch: Vec<f64>,
}

impl BasisEval {
    pub fn new(order: usize) -> Self {
        Self {
            values: vec![0.0; order + 1],
            derivs: vec![0.0; order + 1],
            lower: vec![0.0; order.max(1)],
            scratch: vec![0.0; 2 * (order + 1)],
        }
    }

    /// Evaluates the `k + 1` non-zero basis functions at `x` and returns the
    /// index of the first. Derivatives (w.r.t. the clamped point) are filled
    /// when requested.
    pub fn eval(&mut self, grid: &SplineGrid, x: f64, derivs: bool) -> usize {
        let x = grid.clamp(x);
        let s = grid.interval(x);
        let k = grid.order;
        grid.nonzero(x, s, k, &mut self.values, &mut self.scratch);
        if derivs {
            if k == 0 {
                self.derivs[0] = 0.0;
            } else {
                grid.nonzero(x, s, k - 1, &mut self.lower, &mut self.scratch);
                // knot spans t_{i+k} - t_i equal k * h on a uniform grid
                let scale = 1.0 / grid.spacing();
                for r in 0..=k {
                    let a = if r >= 1 { self.lower[r - 1] } else { 0.0 };
                    let b = if r < k { self.lower[r] } else { 0.0 };
                    self.derivs[r] = scale * (a - b);
                }
            }
        }
        s
    }
}

/// B-spline basis values of `grid` at `x`; inputs outside the domain are clamped.
pub fn bspline_basis(x: f64, grid: &SplineGrid) -> Vec<f64> {
    grid.basis(x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// One learnable univariate function.
#[derive(Debug, Clone, PartialEq)]
pub struct KanEdgeFunction {
    pub spline_coeffs: Vec<f64>,
    pub base_weight: f64,
    pub spline_weight: f64,
}

impl KanEdgeFunction {
    pub fn eval(&self, grid: &SplineGrid, x: f64) -> Result<f64> {
        if self.spline_coeffs.len() != grid.basis_count() {
            bail!(
                Parameter,
                "edge function has {} coefficients, grid expects {}",
                self.spline_coeffs.len(),
                grid.basis_count()
            );
        }
        let mut local = BasisEval::new(grid.order());
        let start = local.eval(grid, x, false);
        let spline: f64 = local
            .values
            .iter()
            .zip(&self.spline_coeffs[start..])
            .map(|(b, c)| b * c)
            .sum();
        Ok(self.base_weight * silu(x) + self.spline_weight * spline)
    }
}

pub fn kan_edge_eval(edge: &KanEdgeFunction, grid: &SplineGrid, x: f64) -> Result<f64> {
    edge.eval(grid, x)
}

/// A layer of `n_out x n_in` edge functions on a shared grid.
///
/// Coefficients are stored as a `(n_out * n_in) x (G + k)` tensor, row
/// `q * n_in + p` holding the edge from input `p` to output `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer {
    n_in: usize,
    n_out: usize,
    grid: SplineGrid,
    pub coeffs: Tensor,
    pub base_weight: Tensor,
    pub spline_weight: Tensor,
}

impl KanLayer {
    /// Random layer: coefficients ~ N(0, 0.1^2), both weights 1.
    pub fn init(n_in: usize, n_out: usize, grid_size: usize, order: usize, seed: u64) -> Result<Self> {
        let mut layer = Self::zeros(n_in, n_out, SplineGrid::unit(grid_size, order)?)?;
        let normal = Normal::new(0.0, 0.1).map_err(|e| Error::Parameter(alloc::format!("{e}")))?;
        let mut rng = rng::seeded(seed);
        for c in layer.coeffs.as_mut_slice() {
            *c = normal.sample(&mut rng);
        }
        layer.base_weight = Tensor::filled(n_out, n_in, 1.0);
        layer.spline_weight = Tensor::filled(n_out, n_in, 1.0);
        Ok(layer)
    }

    /// Layer with every coefficient and weight zero.
    pub fn zeros(n_in: usize, n_out: usize, grid: SplineGrid) -> Result<Self> {
        if n_in == 0 || n_out == 0 {
            bail!(Parameter, "layer dimensions must be positive, got {}x{}", n_in, n_out);
        }
        Ok(Self {
            n_in,
            n_out,
            grid,
            coeffs: Tensor::zeros(n_out * n_in, grid.basis_count()),
            base_weight: Tensor::zeros(n_out, n_in),
            spline_weight: Tensor::zeros(n_out, n_in),
        })
    }

    /// Assembles a layer from stored parameters, validating every shape.
    pub fn from_parts(grid: SplineGrid, coeffs: Tensor, base_weight: Tensor, spline_weight: Tensor) -> Result<Self> {
        let (n_out, n_in) = base_weight.shape();
        if spline_weight.shape() != (n_out, n_in) {
            return Err(Error::Shape {
                op: "kan_layer",
                left: base_weight.shape(),
                right: spline_weight.shape(),
            });
        }
        if coeffs.shape() != (n_out * n_in, grid.basis_count()) {
            return Err(Error::Shape {
                op: "kan_layer",
                left: coeffs.shape(),
                right: (n_out * n_in, grid.basis_count()),
            });
        }
        if n_in == 0 || n_out == 0 {
            bail!(Parameter, "layer dimensions must be positive");
        }
        Ok(Self {
            n_in,
            n_out,
            grid,
            coeffs,
            base_weight,
            spline_weight,
        })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn grid(&self) -> &SplineGrid {
        &self.grid
    }

    pub fn edge(&self, q: usize, p: usize) -> KanEdgeFunction {
        KanEdgeFunction {
            spline_coeffs: self.coeffs.row(q * self.n_in + p).to_vec(),
            base_weight: self.base_weight.get(q, p),
            spline_weight: self.spline_weight.get(q, p),
        }
    }

    pub fn set_edge(&mut self, q: usize, p: usize, edge: &KanEdgeFunction) -> Result<()> {
        if edge.spline_coeffs.len() != self.grid.basis_count() {
            bail!(Parameter, "coefficient count does not match grid");
        }
        self.coeffs.row_mut(q * self.n_in + p).copy_from_slice(&edge.spline_coeffs);
        self.base_weight.set(q, p, edge.base_weight);
        self.spline_weight.set(q, p, edge.spline_weight);
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.coeffs.len() + self.base_weight.len() + self.spline_weight.len()
    }

    /// Registers the layer parameters on a tape.
    pub fn bind(&self, tape: &mut Tape) -> KanVars {
        KanVars {
            coeffs: tape.param(self.coeffs.clone()),
            base_weight: tape.param(self.base_weight.clone()),
            spline_weight: tape.param(self.spline_weight.clone()),
        }
    }

    /// Recorded forward pass over a `batch x n_in` input.
    pub fn forward(&self, tape: &mut Tape, params: &KanVars, input: Var) -> Result<Var> {
        kan_forward(tape, self.grid, input, params)
    }

    /// Unrecorded forward pass.
    pub fn apply(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = KanVars {
            coeffs: tape.constant(self.coeffs.clone()),
            base_weight: tape.constant(self.base_weight.clone()),
            spline_weight: tape.constant(self.spline_weight.clone()),
        };
        let x = tape.constant(input.clone());
        let out = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(out).clone())
    }
}

/// Tape handles of one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct KanVars {
    pub coeffs: Var,
    pub base_weight: Var,
    pub spline_weight: Var,
}

impl KanVars {
    pub fn as_array(&self) -> [Var; 3] {
        [self.coeffs, self.base_weight, self.spline_weight]
    }
}

pub(crate) struct KanRecord {
    pub input: Var,
    pub coeffs: Var,
    pub base_weight: Var,
    pub spline_weight: Var,
    grid: SplineGrid,
    /// First non-zero basis index per (row, input).
    starts: Vec<usize>,
    values: Vec<f64>,
    derivs: Vec<f64>,
    silu: Vec<f64>,
    silu_grad: Vec<f64>,
}

pub(crate) struct KanGrads {
    pub input: Tensor,
    pub coeffs: Tensor,
    pub base_weight: Tensor,
    pub spline_weight: Tensor,
}

/// Records `out[b][q] = sum_p phi_{q,p}(x[b][p])` on the tape.
pub fn kan_forward(tape: &mut Tape, grid: SplineGrid, input: Var, params: &KanVars) -> Result<Var> {
    let x = tape.value(input);
    let wb = tape.value(params.base_weight);
    let ws = tape.value(params.spline_weight);
    let c = tape.value(params.coeffs);
    let (n_out, n_in) = wb.shape();
    if ws.shape() != wb.shape() {
        return Err(Error::Shape {
            op: "kan_forward",
            left: wb.shape(),
            right: ws.shape(),
        });
    }
    if c.shape() != (n_out * n_in, grid.basis_count()) {
        return Err(Error::Shape {
            op: "kan_forward",
            left: c.shape(),
            right: (n_out * n_in, grid.basis_count()),
        });
    }
    if x.cols() != n_in {
        return Err(Error::Shape {
            op: "kan_forward",
            left: x.shape(),
            right: (x.rows(), n_in),
        });
    }

    let batch = x.rows();
    let k1 = grid.order() + 1;
    let (lo, hi) = grid.domain();
    let mut starts = Vec::with_capacity(batch * n_in);
    let mut values = Vec::with_capacity(batch * n_in * k1);
    let mut derivs = Vec::with_capacity(batch * n_in * k1);
    let mut silu_v = Vec::with_capacity(batch * n_in);
    let mut silu_g = Vec::with_capacity(batch * n_in);
    let mut local = BasisEval::new(grid.order());
    let mut out = Tensor::zeros(batch, n_out);

    for b in 0..batch {
        for p in 0..n_in {
            let xv = x.get(b, p);
            let start = local.eval(&grid, xv, true);
            let inside = (lo..=hi).contains(&xv);
            let sv = silu(xv);
            starts.push(start);
            values.extend_from_slice(&local.values);
            if inside {
                derivs.extend_from_slice(&local.derivs);
            } else {
                derivs.extend(core::iter::repeat_n(0.0, k1));
            }
            silu_v.push(sv);
            silu_g.push(silu_grad(xv));

            for q in 0..n_out {
                let row = &c.row(q * n_in + p)[start..start + k1];
                let spline: f64 = local.values.iter().zip(row).map(|(bv, cv)| bv * cv).sum();
                let v = wb.get(q, p) * sv + ws.get(q, p) * spline;
                let o = out.get(b, q);
                out.set(b, q, o + v);
            }
        }
    }

    let record = KanRecord {
        input,
        coeffs: params.coeffs,
        base_weight: params.base_weight,
        spline_weight: params.spline_weight,
        grid,
        starts,
        values,
        derivs,
        silu: silu_v,
        silu_grad: silu_g,
    };
    Ok(tape.push(out, Op::Kan(alloc::boxed::Box::new(record))))
}

impl KanRecord {
    pub fn backward(&self, tape: &Tape, g: &Tensor) -> KanGrads {
        let x = tape.value(self.input);
        let wb = tape.value(self.base_weight);
        let ws = tape.value(self.spline_weight);
        let c = tape.value(self.coeffs);
        let (n_out, n_in) = wb.shape();
        let k1 = self.grid.order() + 1;
        let batch = x.rows();

        let mut gx = Tensor::zeros(batch, n_in);
        let mut gc = Tensor::zeros(c.rows(), c.cols());
        let mut gwb = Tensor::zeros(n_out, n_in);
        let mut gws = Tensor::zeros(n_out, n_in);

        for b in 0..batch {
            for p in 0..n_in {
                let slot = b * n_in + p;
                let start = self.starts[slot];
                let vals = &self.values[slot * k1..(slot + 1) * k1];
                let ders = &self.derivs[slot * k1..(slot + 1) * k1];
                let (sv, sg) = (self.silu[slot], self.silu_grad[slot]);
                let mut dx = 0.0;
                for q in 0..n_out {
                    let gq = g.get(b, q);
                    if gq == 0.0 {
                        continue;
                    }
                    let e = q * n_in + p;
                    let crow = &c.row(e)[start..start + k1];
                    let (wbv, wsv) = (wb.get(q, p), ws.get(q, p));
                    let spline: f64 = vals.iter().zip(crow).map(|(bv, cv)| bv * cv).sum();
                    let dspline: f64 = ders.iter().zip(crow).map(|(dv, cv)| dv * cv).sum();
                    gwb.set(q, p, gwb.get(q, p) + gq * sv);
                    gws.set(q, p, gws.get(q, p) + gq * spline);
                    let scale = gq * wsv;
                    for (gcv, bv) in gc.row_mut(e)[start..start + k1].iter_mut().zip(vals) {
                        *gcv += scale * bv;
                    }
                    dx += gq * (wbv * sg + wsv * dspline);
                }
                gx.set(b, p, dx);
            }
        }
        KanGrads {
            input: gx,
            coeffs: gc,
            base_weight: gwb,
            spline_weight: gws,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Textbook recursive Cox-de Boor, used as an oracle.
    fn cox_de_boor(knots: &[f64], i: usize, k: usize, x: f64, last_interval: usize) -> f64 {
        if k == 0 {
            let inside = knots[i] <= x && x < knots[i + 1];
            // right-closed on the final domain interval
            let at_end = i == last_interval && x == knots[i + 1];
            return if inside || at_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + k] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, k - 1, x, last_interval);
        }
        let d2 = knots[i + k + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + k + 1] - x) / d2 * cox_de_boor(knots, i + 1, k - 1, x, last_interval);
        }
        v
    }

    #[test]
    fn matches_recursive_cox_de_boor() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for order in 0..=3 {
            for g in 1..=5 {
                let grid = SplineGrid::new(g, order, -1.0, 2.0).unwrap();
                let knots = grid.knots();
                for _ in 0..50 {
                    let x: f64 = rng.random_range(-1.0..2.0);
                    let fast = grid.basis(x);
                    for (i, f) in fast.iter().enumerate() {
                        let slow = cox_de_boor(&knots, i, order, x, order + g - 1);
                        assert!((f - slow).abs() < 1e-12, "order {order} grid {g} x {x} i {i}: {f} vs {slow}");
                    }
                }
            }
        }
    }

    #[test]
    fn indicator_basis() {
        let grid = SplineGrid::new(1, 0, 0.0, 1.0).unwrap();
        assert_eq!(bspline_basis(0.5, &grid), vec![1.0]);
    }

    #[test]
    fn knot_vector_layout() {
        let grid = SplineGrid::new(4, 2, -1.0, 1.0).unwrap();
        let knots = grid.knots();
        assert_eq!(knots.len(), 4 + 2 * 2 + 1);
        assert_eq!(knots[0], -2.0);
        assert_eq!(knots[2], -1.0);
        assert_eq!(knots[6], 1.0);
        assert_eq!(knots[8], 2.0);
        assert_eq!(grid.basis_count(), 6);
    }

    #[test]
    fn linear_hat_on_interior_knot() {
        let grid = SplineGrid::new(4, 1, 0.0, 1.0).unwrap();
        let b = bspline_basis(0.5, &grid);
        assert_eq!(b.len(), 5);
        assert_eq!(b.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(b.iter().filter(|&&v| v == 0.0).count(), 4);
        assert_eq!(b[2], 1.0);
    }

    #[test]
    fn local_support() {
        let grid = SplineGrid::new(6, 3, -1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let x: f64 = rng.random_range(-1.0..1.0);
            let b = grid.basis(x);
            for (i, v) in b.iter().enumerate() {
                let (a, z) = (grid.knot(i), grid.knot(i + grid.order() + 1));
                if x < a || x > z {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn clamps_outside_domain() {
        let grid = SplineGrid::unit(3, 2).unwrap();
        assert_eq!(grid.basis(5.0), grid.basis(1.0));
        assert_eq!(grid.basis(-7.0), grid.basis(-1.0));
    }

    #[test]
    fn zero_edge_is_zero() {
        let grid = SplineGrid::unit(3, 2).unwrap();
        let e = KanEdgeFunction {
            spline_coeffs: vec![0.0; 5],
            base_weight: 0.0,
            spline_weight: 1.0,
        };
        for x in [-3.0, -0.2, 0.0, 0.9] {
            assert_eq!(e.eval(&grid, x).unwrap(), 0.0);
        }
    }

    #[test]
    fn linear_spline_reproduces_2x() {
        let grid = SplineGrid::unit(5, 1).unwrap();
        let e = KanEdgeFunction {
            spline_coeffs: grid.greville().iter().map(|t| 2.0 * t).collect(),
            base_weight: 0.0,
            spline_weight: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let x: f64 = rng.random_range(-1.0..=1.0);
            assert!((e.eval(&grid, x).unwrap() - 2.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn silu_residual_at_zero() {
        let grid = SplineGrid::unit(2, 2).unwrap();
        let e = KanEdgeFunction {
            spline_coeffs: vec![0.3, -0.2, 0.5, 0.1],
            base_weight: 1.0,
            spline_weight: 0.0,
        };
        assert_eq!(e.eval(&grid, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn init_shapes_and_determinism() {
        let a = KanLayer::init(3, 4, 1, 2, 99).unwrap();
        let b = KanLayer::init(3, 4, 1, 2, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.coeffs.shape(), (12, 3));
        assert_eq!(a.edge(3, 2).spline_coeffs.len(), 3);
        assert!(a.base_weight.as_slice().iter().all(|&w| w == 1.0));
        let c = KanLayer::init(2, 2, 1, 0, 1).unwrap();
        assert_eq!(c.coeffs.cols(), 1);
        assert_ne!(a, KanLayer::init(3, 4, 1, 2, 100).unwrap());
    }

    #[test]
    fn forward_zero_layer() {
        let layer = KanLayer::zeros(3, 2, SplineGrid::unit(2, 2).unwrap()).unwrap();
        let x = Tensor::from_rows(&[[0.1, -0.4, 0.9], [2.0, 0.0, -1.0]]).unwrap();
        assert_eq!(layer.apply(&x).unwrap(), Tensor::zeros(2, 2));
    }

    #[test]
    fn single_edge_layer_broadcasts_edge_eval() {
        let layer = KanLayer::init(1, 1, 3, 2, 4).unwrap();
        let xs = [-1.3, -0.5, 0.0, 0.25, 0.99];
        let x = Tensor::column(&xs).unwrap();
        let out = layer.apply(&x).unwrap();
        let edge = layer.edge(0, 0);
        for (i, &xv) in xs.iter().enumerate() {
            assert_eq!(out.get(i, 0), edge.eval(layer.grid(), xv).unwrap());
        }
    }

    #[test]
    fn forward_shape_error() {
        let layer = KanLayer::init(3, 2, 2, 2, 0).unwrap();
        assert!(matches!(layer.apply(&Tensor::zeros(4, 2)), Err(Error::Shape { .. })));
    }

    #[test]
    fn layer_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for order in 1..=3 {
            let layer = KanLayer::init(3, 2, 4, order, 8).unwrap();
            let x = Tensor::new(6, 3, (0..18).map(|_| rng.random_range(-1.2..1.2)).collect()).unwrap();
            let grid = *layer.grid();
            let params = [x, layer.coeffs.clone(), layer.base_weight.clone(), layer.spline_weight.clone()];
            let report = grad_check(
                |tape, p| {
                    let vars = KanVars {
                        coeffs: p[1],
                        base_weight: p[2],
                        spline_weight: p[3],
                    };
                    let out = kan_forward(tape, grid, p[0], &vars)?;
                    let sq = tape.square(out);
                    Ok(tape.sum(sq))
                },
                &params,
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "order {order}: {report:?}");
        }
    }

    #[test]
    fn edge_function_gradient_at_random_points() {
        // 100 random parameter draws for a single edge, quadratic splines.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let grid = SplineGrid::unit(3, 2).unwrap();
        for _ in 0..100 {
            let x = Tensor::scalar(rng.random_range(-0.99..0.99));
            let c = Tensor::new(1, 5, (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let wb = Tensor::scalar(rng.random_range(-1.0..1.0));
            let ws = Tensor::scalar(rng.random_range(-1.0..1.0));
            let r = grad_check(
                |tape, p| {
                    let vars = KanVars {
                        coeffs: p[1],
                        base_weight: p[2],
                        spline_weight: p[3],
                    };
                    kan_forward(tape, grid, p[0], &vars)
                },
                &[x, c, wb, ws],
                1e-5,
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }
}
