//! Unitary modulating functions, their adjoint kernels and gain functionals.
//!
//! Kernel components are polynomials in the normalized argument `s = sigma / T`.
//! The minimal-degree part is fixed by the `2n` Hermite boundary conditions;
//! extra degrees of freedom live in the null space of those conditions,
//! spanned by `s^{n+k} (1 - s)^n`, so every parameter value is a valid UMF.

use std::fmt::Write as _;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ocf::OcfData;
use crate::timefun::{spectral_norm, MatrixSignal};

/// Hermite systems with a condition estimate above this are rejected.
pub const MAX_HERMITE_CONDITION: f64 = 1e12;

fn falling(j: usize, k: usize) -> f64 {
    if k > j {
        return 0.0;
    }
    ((j - k + 1)..=j).map(|v| v as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    falling(n, k) / falling(k, k)
}

/// Values of `p, p', ..., p^(max_order)` at `s` for coefficients in ascending powers.
fn poly_derivatives(coeffs: &[f64], s: f64, max_order: usize, out: &mut [f64]) {
    for (k, slot) in out.iter_mut().enumerate().take(max_order + 1) {
        let mut acc = 0.0;
        for j in (k..coeffs.len()).rev() {
            acc = acc * s + coeffs[j] * falling(j, k);
        }
        *slot = acc;
    }
}

/// Polynomial UMF of order `n` on `[0, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct UmfKernel {
    n: usize,
    horizon: f64,
    extra_degree: usize,
    /// Null-space coordinates, `extra_degree` per component.
    free: Vec<f64>,
    /// Ascending coefficients in `s = sigma / T`, one polynomial per component.
    coeffs: Vec<Vec<f64>>,
    condition: f64,
}

/// Minimal-degree UMF of order `n` plus `extra_degree` free directions per component.
pub fn hermite_umf(n: usize, horizon: f64, extra_degree: usize) -> Result<UmfKernel> {
    if n == 0 {
        return Err(Error::InvalidArgument("kernel order must be at least 1".into()));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    // p = sum_{j=n}^{2n-1} c_j s^j satisfies the left conditions; solve the right ones.
    let mut m = DMatrix::zeros(n, n);
    for k in 0..n {
        for jj in 0..n {
            m[(k, jj)] = falling(n + jj, k);
        }
    }
    // The right-boundary values scale with T^k in the normalized variable.
    let sv = m.clone().singular_values();
    let scale_max = (0..n).map(|k| horizon.powi(k as i32)).fold(0.0_f64, f64::max);
    let scale_min = (0..n).map(|k| horizon.powi(k as i32)).fold(f64::INFINITY, f64::min);
    let condition = sv.max() / sv.min() * (scale_max / scale_min);
    if !condition.is_finite() || condition > MAX_HERMITE_CONDITION {
        return Err(Error::KernelConditioning { condition });
    }
    let lu = m.lu();
    let mut coeffs = Vec::with_capacity(n);
    for i in 0..n {
        let order = n - 1 - i;
        let mut rhs = DVector::zeros(n);
        let sign = if order.is_multiple_of(2) { 1.0 } else { -1.0 };
        rhs[order] = sign * horizon.powi(order as i32);
        let sol = lu
            .solve(&rhs)
            .ok_or(Error::KernelConditioning { condition: f64::INFINITY })?;
        let mut c = vec![0.0; 2 * n];
        for jj in 0..n {
            c[n + jj] = sol[jj];
        }
        coeffs.push(c);
    }
    Ok(UmfKernel {
        n,
        horizon,
        extra_degree,
        free: vec![0.0; n * extra_degree],
        coeffs,
        condition,
    })
}

/// Ascending coefficients of `4^n s^{n+k} (1 - s)^n`.
fn null_direction(n: usize, k: usize, degree: usize) -> Vec<f64> {
    let mut c = vec![0.0; degree + 1];
    let scale = 4f64.powi(n as i32);
    for l in 0..=n {
        let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
        c[n + k + l] += scale * sign * binomial(n, l);
    }
    c
}

/// Derivatives `0..=n` in `s` of `4^n s^{n+k} (1 - s)^n` via the Leibniz rule.
fn null_derivatives(n: usize, k: usize, s: f64) -> Vec<f64> {
    let p = n + k;
    let scale = 4f64.powi(n as i32);
    (0..=n)
        .map(|r| {
            let mut acc = 0.0;
            for q in 0..=r.min(p) {
                let m = r - q;
                if m > n {
                    continue;
                }
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                acc += binomial(r, q)
                    * falling(p, q)
                    * s.powi((p - q) as i32)
                    * sign
                    * falling(n, m)
                    * (1.0 - s).powi((n - m) as i32);
            }
            scale * acc
        })
        .collect()
}

impl UmfKernel {
    /// Raw polynomial kernel; boundary conditions are not enforced (diagnostics only).
    pub fn from_coefficients(n: usize, horizon: f64, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        if coeffs.len() != n {
            return Err(Error::Dimension(format!("expected {n} components, got {}", coeffs.len())));
        }
        Ok(Self {
            n,
            horizon,
            extra_degree: 0,
            free: Vec::new(),
            coeffs,
            condition: 1.0,
        })
    }

    pub fn zero(n: usize, horizon: f64) -> Self {
        Self::from_coefficients(n, horizon, vec![vec![0.0]; n]).expect("dimension")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn extra_degree(&self) -> usize {
        self.extra_degree
    }

    pub fn degree(&self) -> usize {
        let base = self.coeffs.iter().map(|c| c.len().saturating_sub(1)).max().unwrap_or(0);
        if self.extra_degree > 0 {
            base.max(2 * self.n - 1 + self.extra_degree)
        } else {
            base
        }
    }

    pub fn free_parameters(&self) -> &[f64] {
        &self.free
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    /// Expanded coefficients in powers of `sigma / T` for component `i`.
    pub fn component_coefficients(&self, i: usize) -> Vec<f64> {
        let degree = self.degree();
        let mut c = self.coeffs[i].clone();
        c.resize(degree + 1, 0.0);
        for k in 0..self.extra_degree {
            let w = self.free[i * self.extra_degree + k];
            for (ci, d) in c.iter_mut().zip(null_direction(self.n, k, degree)) {
                *ci += w * d;
            }
        }
        c
    }

    /// Same boundary values, shape moved along the null-space directions.
    pub fn with_free_parameters(&self, free: &[f64]) -> Result<Self> {
        if free.len() != self.n * self.extra_degree {
            return Err(Error::Dimension(format!(
                "expected {} free parameters, got {}",
                self.n * self.extra_degree,
                free.len()
            )));
        }
        Ok(Self {
            free: free.to_vec(),
            ..self.clone()
        })
    }

    /// Entry `(i, k)` is `phi_i^(k)(sigma)` for `k = 0..=n`.
    pub fn derivatives(&self, sigma: f64) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n + 1);
        self.derivatives_into(sigma, &mut out);
        out
    }

    fn derivatives_into(&self, sigma: f64, out: &mut DMatrix<f64>) {
        let n = self.n;
        let s = sigma / self.horizon;
        let mut buf = vec![0.0; n + 1];
        // null directions are evaluated in factored form so the boundary zeros stay exact
        let null: Vec<Vec<f64>> = (0..self.extra_degree).map(|k| null_derivatives(n, k, s)).collect();
        for (i, comp) in self.coeffs.iter().enumerate() {
            poly_derivatives(comp, s, n, &mut buf);
            for (k, dk) in null.iter().enumerate() {
                let w = self.free[i * self.extra_degree + k];
                if w != 0.0 {
                    for (b, d) in buf.iter_mut().zip(dk) {
                        *b += w * d;
                    }
                }
            }
            let mut scale = 1.0;
            for (k, v) in buf.iter().enumerate() {
                out[(i, k)] = v * scale;
                scale /= self.horizon;
            }
        }
    }

    pub fn value(&self, sigma: f64) -> DVector<f64> {
        self.derivatives(sigma).column(0).into_owned()
    }

    /// Largest deviation from `phi^(i)(0) = 0` and `phi^(i)(T) = (-1)^i e_{n-i}`.
    pub fn boundary_residual(&self) -> f64 {
        let n = self.n;
        let left = self.derivatives(0.0);
        let right = self.derivatives(self.horizon);
        let mut worst = 0.0_f64;
        for i in 0..n {
            for comp in 0..n {
                worst = worst.max(left[(comp, i)].abs());
                // e_{n-i} has its one in component n - i (1-based), i.e. index n - 1 - i
                let target = if comp == n - 1 - i {
                    if i % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                } else {
                    0.0
                };
                worst = worst.max((right[(comp, i)] - target).abs());
            }
        }
        worst
    }

    /// Plain-text table `sigma, phi_i, d1_phi_i, ..., dn_phi_i` sampled at `step`.
    pub fn to_csv(&self, step: f64) -> Result<String> {
        let count = horizon_samples(self.horizon, step)?;
        let mut out = String::from("sigma");
        for k in 0..=self.n {
            for i in 1..=self.n {
                if k == 0 {
                    let _ = write!(out, ",phi_{i}");
                } else {
                    let _ = write!(out, ",d{k}_phi_{i}");
                }
            }
        }
        out.push('\n');
        for j in 0..count {
            let sigma = j as f64 * step;
            let d = self.derivatives(sigma);
            let _ = write!(out, "{sigma}");
            for k in 0..=self.n {
                for i in 0..self.n {
                    let _ = write!(out, ",{}", d[(i, k)]);
                }
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Number of samples `round(T / h) + 1`; `T` must be an integer multiple of `h`.
pub fn horizon_samples(horizon: f64, step: f64) -> Result<usize> {
    if !(step > 0.0) || !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon {horizon}, step {step}")));
    }
    let ratio = horizon / step;
    let r = ratio.round();
    if (ratio - r).abs() > 1e-9 * ratio.max(1.0) || r < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} is not an integer multiple of step {step}"
        )));
    }
    Ok(r as usize + 1)
}

/// `(L* phi)_i = (-1)^n phi_i^(n) + sum_k (-1)^k a_k phi_i^(k)` with `a = [a_{n-1}, ..., a_0]`.
pub fn output_adjoint_from(derivs: &DMatrix<f64>, a: &[f64]) -> DVector<f64> {
    let n = derivs.nrows();
    DVector::from_fn(n, |i, _| {
        let lead = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
        let mut v = lead * derivs[(i, n)];
        let mut sign = 1.0;
        for k in 0..n {
            v += sign * a[n - 1 - k] * derivs[(i, k)];
            sign = -sign;
        }
        v
    })
}

/// Entry `(i, j)`: `sum_l (-1)^l B_{l,j} phi_i^(l)` where `B_l` is row `n - 1 - l` of `b`.
pub fn input_adjoint_from(derivs: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = derivs.nrows();
    let m = b.ncols();
    DMatrix::from_fn(n, m, |i, j| {
        let mut v = 0.0;
        let mut sign = 1.0;
        for l in 0..n {
            v += sign * b[(n - 1 - l, j)] * derivs[(i, l)];
            sign = -sign;
        }
        v
    })
}

/// `L*` applied to a kernel: a map `(tau, sigma) -> R^n` with coefficients taken at `tau`.
#[derive(Clone, Debug)]
pub struct OutputAdjoint {
    pub kernel: UmfKernel,
    pub a: MatrixSignal,
}

impl OutputAdjoint {
    pub fn eval(&self, tau: f64, sigma: f64) -> Result<DVector<f64>> {
        let a = self.a.value(tau)?;
        Ok(output_adjoint_from(&self.kernel.derivatives(sigma), a.as_slice()))
    }
}

/// `B*` (or `E*`) applied to a kernel: a map `(tau, sigma) -> R^{n x m}`.
#[derive(Clone, Debug)]
pub struct InputAdjoint {
    pub kernel: UmfKernel,
    pub gain: MatrixSignal,
}

impl InputAdjoint {
    pub fn eval(&self, tau: f64, sigma: f64) -> Result<DMatrix<f64>> {
        let b = self.gain.value(tau)?;
        Ok(input_adjoint_from(&self.kernel.derivatives(sigma), &b))
    }
}

pub fn adjoint_l(kernel: &UmfKernel, a: &MatrixSignal) -> OutputAdjoint {
    OutputAdjoint {
        kernel: kernel.clone(),
        a: a.clone(),
    }
}

pub fn adjoint_b(kernel: &UmfKernel, b_o: &MatrixSignal) -> InputAdjoint {
    InputAdjoint {
        kernel: kernel.clone(),
        gain: b_o.clone(),
    }
}

pub fn adjoint_e(kernel: &UmfKernel, e_o: &MatrixSignal) -> InputAdjoint {
    adjoint_b(kernel, e_o)
}

/// Sampling of the gain functionals: `sigma` step and the coefficient time window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainGrid {
    pub sigma_step: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub t_step: f64,
}

impl GainGrid {
    /// One period of `2 pi` starting at `t = 0`.
    pub fn periodic(sigma_step: f64, t_step: f64) -> Self {
        Self {
            sigma_step,
            t_start: 0.0,
            t_end: 2.0 * std::f64::consts::PI,
            t_step,
        }
    }
}

/// Coefficient samples `a, B_o, E_o` on the time grid spanned by all `(t, sigma)` pairs.
#[derive(Clone, Debug)]
pub struct GainEvaluator {
    horizon: f64,
    sigma_step: f64,
    sigma_count: usize,
    t_grid: Vec<f64>,
    t_stride: usize,
    a: Vec<Vec<f64>>,
    b: Vec<DMatrix<f64>>,
    e: Vec<DMatrix<f64>>,
}

/// Per-`t` gain curves.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GainCurves {
    pub eta_a: Vec<f64>,
    pub eta_phi: Vec<f64>,
    pub eta_d: Vec<f64>,
    pub l2_a: Vec<f64>,
    pub l2_phi: Vec<f64>,
    pub l2_d: Vec<f64>,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

impl GainEvaluator {
    pub fn new(ocf: &OcfData, horizon: f64, grid: &GainGrid) -> Result<Self> {
        Self::from_signals(&ocf.a, &ocf.b_o, &ocf.e_o, horizon, grid)
    }

    pub fn from_signals(
        a: &MatrixSignal,
        b_o: &MatrixSignal,
        e_o: &MatrixSignal,
        horizon: f64,
        grid: &GainGrid,
    ) -> Result<Self> {
        let h = grid.sigma_step;
        let sigma_count = horizon_samples(horizon, h)?;
        let constant = a.is_constant() && b_o.is_constant() && e_o.is_constant();
        let (t_grid, t_stride) = if constant {
            (vec![grid.t_start], 1)
        } else {
            if !(grid.t_end >= grid.t_start) || !(grid.t_step > 0.0) {
                return Err(Error::InvalidGrid(format!("{grid:?}")));
            }
            let stride = ((grid.t_step / h).round() as usize).max(1);
            let dt = stride as f64 * h;
            let count = ((grid.t_end - grid.t_start) / dt + 1e-9).floor() as usize + 1;
            ((0..count).map(|j| grid.t_start + j as f64 * dt).collect(), stride)
        };
        let tau_count = (t_grid.len() - 1) * t_stride + sigma_count;
        let tau0 = grid.t_start - horizon;
        let (mut av, mut bv, mut ev) = (
            Vec::with_capacity(tau_count),
            Vec::with_capacity(tau_count),
            Vec::with_capacity(tau_count),
        );
        if constant {
            let a0 = a.value(tau0)?.as_slice().to_vec();
            let b0 = b_o.value(tau0)?;
            let e0 = e_o.value(tau0)?;
            av = vec![a0; tau_count];
            bv = vec![b0; tau_count];
            ev = vec![e0; tau_count];
        } else {
            for idx in 0..tau_count {
                let tau = tau0 + idx as f64 * h;
                av.push(a.value(tau)?.as_slice().to_vec());
                bv.push(b_o.value(tau)?);
                ev.push(e_o.value(tau)?);
            }
        }
        Ok(Self {
            horizon,
            sigma_step: h,
            sigma_count,
            t_grid,
            t_stride,
            a: av,
            b: bv,
            e: ev,
        })
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn sigma_grid(&self) -> Vec<f64> {
        (0..self.sigma_count).map(|k| k as f64 * self.sigma_step).collect()
    }

    fn kernel_samples(&self, kernel: &UmfKernel) -> Vec<DMatrix<f64>> {
        (0..self.sigma_count)
            .map(|k| kernel.derivatives(k as f64 * self.sigma_step))
            .collect()
    }

    /// Stability cost `J = eta_bar_a + L_phi eta_bar_phi` (L-infinity gains only).
    pub fn cost(&self, kernel: &UmfKernel, l_phi: f64) -> f64 {
        let derivs = self.kernel_samples(kernel);
        let mut eta_a = 0.0_f64;
        let mut eta_phi = 0.0_f64;
        for j in 0..self.t_grid.len() {
            for (k, d) in derivs.iter().enumerate() {
                let idx = j * self.t_stride + k;
                eta_a = eta_a.max(output_adjoint_from(d, &self.a[idx]).norm());
                eta_phi = eta_phi.max(spectral_norm(&input_adjoint_from(d, &self.b[idx])));
            }
        }
        eta_a + l_phi * eta_phi
    }

    /// All L-infinity and L2 gain curves over the t-grid.
    pub fn curves(&self, kernel: &UmfKernel) -> GainCurves {
        let derivs = self.kernel_samples(kernel);
        let h = self.sigma_step;
        let nt = self.t_grid.len();
        let mut out = GainCurves {
            eta_a: vec![0.0; nt],
            eta_phi: vec![0.0; nt],
            eta_d: vec![0.0; nt],
            l2_a: vec![0.0; nt],
            l2_phi: vec![0.0; nt],
            l2_d: vec![0.0; nt],
        };
        let last = self.sigma_count - 1;
        for j in 0..nt {
            let (mut sa, mut sp, mut sd) = (0.0, 0.0, 0.0);
            for (k, d) in derivs.iter().enumerate() {
                let idx = j * self.t_stride + k;
                let w = if k == 0 || k == last { 0.5 * h } else { h };
                let na = output_adjoint_from(d, &self.a[idx]).norm();
                let np = spectral_norm(&input_adjoint_from(d, &self.b[idx]));
                let nd = spectral_norm(&input_adjoint_from(d, &self.e[idx]));
                out.eta_a[j] = out.eta_a[j].max(na);
                out.eta_phi[j] = out.eta_phi[j].max(np);
                out.eta_d[j] = out.eta_d[j].max(nd);
                sa += w * na * na;
                sp += w * np * np;
                sd += w * nd * nd;
            }
            out.l2_a[j] = sa.sqrt();
            out.l2_phi[j] = sp.sqrt();
            out.l2_d[j] = sd.sqrt();
        }
        out
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
}

/// Adjoint kernels together with their sampled gain functionals.
#[derive(Clone, Debug)]
pub struct AdjointGainTable {
    pub lstar: OutputAdjoint,
    pub bstar: InputAdjoint,
    pub estar: InputAdjoint,
    pub sigma_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub curves: GainCurves,
    pub eta_bar_a: f64,
    pub eta_bar_phi: f64,
    pub eta_bar_d: f64,
    pub l2_bar_a: f64,
    pub l2_bar_phi: f64,
    pub l2_bar_d: f64,
    /// Coefficient period used to map query times onto the t-grid.
    pub period: Option<f64>,
}

/// Gains at one coefficient time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainsAt {
    pub eta_a: f64,
    pub eta_phi: f64,
    pub eta_d: f64,
    pub l2_a: f64,
    pub l2_phi: f64,
    pub l2_d: f64,
}

/// Global gains: L-infinity (sampled-data criterion) and L2 (continuous bound) variants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainSummary {
    pub eta_bar_a: f64,
    pub eta_bar_phi: f64,
    pub eta_bar_d: f64,
    pub l2_bar_a: f64,
    pub l2_bar_phi: f64,
    pub l2_bar_d: f64,
}

impl GainSummary {
    pub fn cost(&self, l_phi: f64) -> f64 {
        self.eta_bar_a + l_phi * self.eta_bar_phi
    }
}

impl AdjointGainTable {
    pub fn compute(ocf: &OcfData, kernel: &UmfKernel, grid: &GainGrid, period: Option<f64>) -> Result<Self> {
        let eval = GainEvaluator::new(ocf, kernel.horizon(), grid)?;
        Ok(Self::from_evaluator(&eval, ocf, kernel, period))
    }

    pub fn from_evaluator(eval: &GainEvaluator, ocf: &OcfData, kernel: &UmfKernel, period: Option<f64>) -> Self {
        let curves = eval.curves(kernel);
        Self {
            lstar: adjoint_l(kernel, &ocf.a),
            bstar: adjoint_b(kernel, &ocf.b_o),
            estar: adjoint_e(kernel, &ocf.e_o),
            sigma_grid: eval.sigma_grid(),
            t_grid: eval.t_grid().to_vec(),
            eta_bar_a: sup(&curves.eta_a),
            eta_bar_phi: sup(&curves.eta_phi),
            eta_bar_d: sup(&curves.eta_d),
            l2_bar_a: sup(&curves.l2_a),
            l2_bar_phi: sup(&curves.l2_phi),
            l2_bar_d: sup(&curves.l2_d),
            curves,
            period,
        }
    }

    /// Replaces the global L-infinity gains (e.g. with externally reported values).
    pub fn with_global_gains(mut self, eta_bar_a: f64, eta_bar_phi: f64, eta_bar_d: f64) -> Self {
        self.eta_bar_a = eta_bar_a;
        self.eta_bar_phi = eta_bar_phi;
        self.eta_bar_d = eta_bar_d;
        self
    }

    pub fn summary(&self) -> GainSummary {
        GainSummary {
            eta_bar_a: self.eta_bar_a,
            eta_bar_phi: self.eta_bar_phi,
            eta_bar_d: self.eta_bar_d,
            l2_bar_a: self.l2_bar_a,
            l2_bar_phi: self.l2_bar_phi,
            l2_bar_d: self.l2_bar_d,
        }
    }

    pub fn cost(&self, l_phi: f64) -> f64 {
        self.summary().cost(l_phi)
    }

    fn index_for(&self, t: f64) -> usize {
        let nt = self.t_grid.len();
        if nt == 1 {
            return 0;
        }
        let t0 = self.t_grid[0];
        let dt = self.t_grid[1] - t0;
        let mut rel = t - t0;
        if let Some(p) = self.period {
            rel = rel.rem_euclid(p);
        }
        ((rel / dt).round().max(0.0) as usize).min(nt - 1)
    }

    /// Gains at the t-grid point nearest to `t` (wrapped by the period when set).
    pub fn at(&self, t: f64) -> GainsAt {
        let j = self.index_for(t);
        let c = &self.curves;
        GainsAt {
            eta_a: c.eta_a[j],
            eta_phi: c.eta_phi[j],
            eta_d: c.eta_d[j],
            l2_a: c.l2_a[j],
            l2_phi: c.l2_phi[j],
            l2_d: c.l2_d[j],
        }
    }
}

/// Global gains of a table.
pub fn gains(table: &AdjointGainTable) -> GainSummary {
    table.summary()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeOptions {
    pub extra_degree: usize,
    pub restarts: usize,
    pub max_iters: u64,
    pub seed: u64,
    /// Coarse grid used inside the search loop.
    pub search_grid: GainGrid,
    /// Grid used to report and compare the final costs.
    pub final_grid: GainGrid,
}

#[derive(Clone, Debug)]
pub struct OptimizedKernel {
    pub kernel: UmfKernel,
    pub baseline: UmfKernel,
    pub j_baseline: f64,
    pub j_optimized: f64,
    pub evaluations: usize,
    /// Set when the search did not improve on the baseline.
    pub warning: Option<String>,
}

struct KernelCost<'a> {
    eval: &'a GainEvaluator,
    base: &'a UmfKernel,
    l_phi: f64,
}

impl CostFunction for KernelCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let k = self
            .base
            .with_free_parameters(p)
            .map_err(|e| argmin::core::Error::msg(e.to_string()))?;
        Ok(self.eval.cost(&k, self.l_phi))
    }
}

fn nelder_mead(cost: KernelCost<'_>, start: &[f64], step: f64, max_iters: u64, rng: &mut ChaCha8Rng, random_axes: bool) -> Result<(Vec<f64>, f64)> {
    let dim = start.len();
    let mut simplex = vec![start.to_vec()];
    for i in 0..dim {
        let mut v = start.to_vec();
        if random_axes {
            for x in v.iter_mut() {
                *x += step * rng.random_range(-1.0..1.0);
            }
        } else {
            v[i] += step;
        }
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-10)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let res = Executor::new(cost, solver)
        .configure(|s| s.max_iters(max_iters))
        .run()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let state = res.state();
    let best = state
        .get_best_param()
        .cloned()
        .unwrap_or_else(|| start.to_vec());
    Ok((best, state.get_best_cost()))
}

/// Derivative-free minimization of `J = eta_bar_a + L_phi eta_bar_phi` over the free
/// kernel coefficients, restarted from the incumbent with seeded random simplices.
pub fn optimize_kernel(ocf: &OcfData, l_phi: f64, horizon: f64, opts: &OptimizeOptions) -> Result<OptimizedKernel> {
    let baseline = hermite_umf(ocf.n, horizon, opts.extra_degree)?;
    let final_eval = GainEvaluator::new(ocf, horizon, &opts.final_grid)?;
    let j_baseline = final_eval.cost(&baseline, l_phi);
    let dim = baseline.free_parameters().len();
    if dim == 0 {
        return Ok(OptimizedKernel {
            kernel: baseline.clone(),
            baseline,
            j_baseline,
            j_optimized: j_baseline,
            evaluations: 1,
            warning: None,
        });
    }
    let search = GainEvaluator::new(ocf, horizon, &opts.search_grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best = vec![0.0; dim];
    let mut best_cost = search.cost(&baseline, l_phi);
    let mut evaluations = 1;
    for round in 0..=opts.restarts {
        let step = if round == 0 { 0.5 } else { 0.5 / (round as f64).sqrt() };
        let cost = KernelCost {
            eval: &search,
            base: &baseline,
            l_phi,
        };
        let (cand, c) = nelder_mead(cost, &best, step, opts.max_iters, &mut rng, round > 0)?;
        evaluations += opts.max_iters as usize;
        if c < best_cost {
            best_cost = c;
            best = cand;
        }
    }
    let kernel = baseline.with_free_parameters(&best)?;
    let j_optimized = final_eval.cost(&kernel, l_phi);
    if j_optimized >= j_baseline {
        return Ok(OptimizedKernel {
            kernel: baseline.clone(),
            baseline,
            j_baseline,
            j_optimized: j_baseline,
            evaluations,
            warning: Some("kernel optimization did not improve on the baseline".into()),
        });
    }
    Ok(OptimizedKernel {
        kernel,
        baseline,
        j_baseline,
        j_optimized,
        evaluations,
        warning: None,
    })
}
