//! Continuous-measurement algebraic observer, its L2 error bound and the
//! differential parameterization of the companion-form state.
//!
//! The estimate is `z_hat = -<L* phi, y> + <B* phi, u>` and `x_hat = P(t) z_hat`.
//! Both inner products are separable in `(tau, sigma)`: the buffers store
//! `[y, a_0 y, ..., a_{n-1} y]` and `B_o u`, and fixed FIR taps carry the kernel.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{AdjointGainTable, UmfKernel};
use crate::modop::{FillPolicy, FirBank, HorizonBuffer, Quadrature, ALIGNMENT_TOLERANCE};
use crate::ocf::{ocf_jets, LtvPlant, OcfData, OcfJets};
use crate::taylor::Jet;

/// Companion-form coefficients at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Coefficients {
    /// `[a_{n-1}, ..., a_0]`
    pub a: DVector<f64>,
    pub b_o: DMatrix<f64>,
    pub e_o: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub p_inv: DMatrix<f64>,
}

impl Coefficients {
    fn from_jets(j: &OcfJets) -> Self {
        Self {
            a: j.a.value().column(0).into_owned(),
            b_o: j.b_o.value().clone(),
            e_o: j.e_o.value().clone(),
            p: j.p.value().clone(),
            p_inv: j.p_inv.value().clone(),
        }
    }
}

/// Evaluates all companion-form coefficients with one jet pass per instant.
#[derive(Clone, Debug)]
pub enum CoefficientSource {
    Constant(Box<Coefficients>),
    Plant(Arc<LtvPlant>),
}

impl CoefficientSource {
    pub fn new(plant: &LtvPlant, ocf: &OcfData) -> Result<Self> {
        if ocf.constant {
            Ok(Self::Constant(Box::new(Coefficients::from_jets(&ocf_jets(plant, 0.0, 0)?))))
        } else {
            Ok(Self::Plant(Arc::new(plant.clone())))
        }
    }

    pub fn at(&self, t: f64) -> Result<Coefficients> {
        match self {
            Self::Constant(c) => Ok((**c).clone()),
            Self::Plant(p) => Ok(Coefficients::from_jets(&ocf_jets(p, t, 0)?)),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObserverOptions {
    pub step: f64,
    pub fill_policy: FillPolicy,
    pub quadrature: Quadrature,
}

impl ObserverOptions {
    pub fn new(step: f64) -> Self {
        Self {
            step,
            fill_policy: FillPolicy::PadWithFirst,
            quadrature: Quadrature::Trapezoid,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub t: f64,
    pub z_hat: DVector<f64>,
    pub x_hat: DVector<f64>,
    /// The horizon is not yet full; padded samples entered the estimate.
    pub filling: bool,
}

fn sign(k: usize) -> f64 {
    if k.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Taps pairing with `[y, a_0 y, ..., a_{n-1} y]`.
fn output_taps(kernel: &UmfKernel, sigma: f64) -> DMatrix<f64> {
    let n = kernel.n();
    let d = kernel.derivatives(sigma);
    DMatrix::from_fn(n, n + 1, |i, c| {
        if c == 0 {
            sign(n) * d[(i, n)]
        } else {
            sign(c - 1) * d[(i, c - 1)]
        }
    })
}

/// Taps pairing with `v = B_o u` (row `r` of `B_o` multiplies `phi^(n-1-r)`).
fn input_taps(kernel: &UmfKernel, sigma: f64) -> DMatrix<f64> {
    let n = kernel.n();
    let d = kernel.derivatives(sigma);
    DMatrix::from_fn(n, n, |i, r| sign(n - 1 - r) * d[(i, n - 1 - r)])
}

#[derive(Clone, Debug)]
pub struct AlgebraicObserver {
    n: usize,
    m: usize,
    kernel: UmfKernel,
    source: CoefficientSource,
    y_buf: HorizonBuffer,
    v_buf: HorizonBuffer,
    taps_l: FirBank,
    taps_b: FirBank,
    p_now: Option<(f64, DMatrix<f64>)>,
}

impl AlgebraicObserver {
    /// `m` is the input dimension (the columns of `B_o`).
    pub fn new(source: CoefficientSource, kernel: UmfKernel, m: usize, opts: ObserverOptions) -> Result<Self> {
        let n = kernel.n();
        let t = kernel.horizon();
        let h = opts.step;
        let taps_l = FirBank::new(n, n + 1, t, h, opts.quadrature, |s| output_taps(&kernel, s))?;
        let taps_b = FirBank::new(n, n, t, h, opts.quadrature, |s| input_taps(&kernel, s))?;
        Ok(Self {
            n,
            m,
            y_buf: HorizonBuffer::new(t, h, n + 1, opts.fill_policy)?,
            v_buf: HorizonBuffer::new(t, h, n, opts.fill_policy)?,
            kernel,
            source,
            taps_l,
            taps_b,
            p_now: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kernel(&self) -> &UmfKernel {
        &self.kernel
    }

    pub fn source(&self) -> &CoefficientSource {
        &self.source
    }

    pub fn filling(&self) -> bool {
        !self.y_buf.is_full()
    }

    /// Feeds the measured output and the input at `t`.
    pub fn push(&mut self, t: f64, y: f64, input: &DVector<f64>) -> Result<()> {
        let c = self.source.at(t)?;
        self.push_with(t, y, input, &c)
    }

    /// Same as [`push`](Self::push) with coefficients already evaluated at `t`.
    pub fn push_with(&mut self, t: f64, y: f64, input: &DVector<f64>, c: &Coefficients) -> Result<()> {
        if input.len() != self.m {
            return Err(Error::Dimension(format!("expected {}-dim input, got {}", self.m, input.len())));
        }
        let n = self.n;
        let mut ch = DVector::zeros(n + 1);
        ch[0] = y;
        for k in 0..n {
            ch[1 + k] = c.a[n - 1 - k] * y;
        }
        let v = &c.b_o * input;
        self.y_buf.push(t, ch)?;
        self.v_buf.push(t, v)?;
        self.p_now = Some((t, c.p.clone()));
        Ok(())
    }

    pub fn estimate(&self, t: f64) -> Result<Estimate> {
        let (tp, p) = self.p_now.as_ref().ok_or(Error::HorizonNotInitialized)?;
        let (ty, tv) = (self.y_buf.last_time(), self.v_buf.last_time());
        if ty != tv || (tp - t).abs() > ALIGNMENT_TOLERANCE {
            return Err(Error::HorizonMisalignment { buffer: *tp, query: t });
        }
        let z_hat = self.taps_b.apply(&self.v_buf, t)? - self.taps_l.apply(&self.y_buf, t)?;
        let x_hat = p * &z_hat;
        Ok(Estimate {
            t,
            z_hat,
            x_hat,
            filling: self.filling(),
        })
    }

    pub fn reset(&mut self) {
        self.y_buf.clear();
        self.v_buf.clear();
        self.p_now = None;
    }
}

/// Bound on `||z - z_hat||` from local L2 norms of disturbance and noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L2ErrorBound {
    pub d_bar: f64,
    pub nu_bar: f64,
    pub bound: f64,
}

impl L2ErrorBound {
    /// Bound in original coordinates, `||P(t)|| * bound`.
    pub fn state_bound(&self, p_norm: f64) -> f64 {
        p_norm * self.bound
    }
}

pub fn error_bound(table: &AdjointGainTable, d_bar: f64, nu_bar: f64, t: f64) -> L2ErrorBound {
    let g = table.at(t);
    L2ErrorBound {
        d_bar,
        nu_bar,
        bound: g.l2_d * d_bar + g.l2_a * nu_bar,
    }
}

/// Lower-triangular Toeplitz matrix with unit diagonal and sub-diagonals `a_{n-1}, ..., a_1`.
pub fn toeplitz_delta(a: &DVector<f64>) -> DMatrix<f64> {
    let n = a.len();
    DMatrix::from_fn(n, n, |i, k| match i.cmp(&k) {
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Greater => a[i - k - 1],
        std::cmp::Ordering::Less => 0.0,
    })
}

/// Strictly lower Toeplitz matrix built from column `j` of `b` (rows `B_{n-1}, ..., B_1`).
pub fn toeplitz_gamma(b: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    let n = b.nrows();
    DMatrix::from_fn(n, n, |i, k| if i > k { b[(i - k - 1, j)] } else { 0.0 })
}

/// `z = Delta Y - sum_j Gamma_B^j U_j - sum_l Gamma_E^l D_l` with coefficients frozen at `t`.
///
/// `y` stacks `y, y', ..., y^(n-1)`; `u[j]` and `d[l]` stack the derivatives of one channel.
/// Exact when the companion coefficients are constant.
pub fn diff_param_oracle(ocf: &OcfData, t: f64, y: &DVector<f64>, u: &[DVector<f64>], d: &[DVector<f64>]) -> Result<DVector<f64>> {
    let a = ocf.a.value(t)?.column(0).into_owned();
    let b = ocf.b_o.value(t)?;
    let e = ocf.e_o.value(t)?;
    toeplitz_param(&a, &b, &e, y, u, d)
}

pub fn toeplitz_param(
    a: &DVector<f64>,
    b: &DMatrix<f64>,
    e: &DMatrix<f64>,
    y: &DVector<f64>,
    u: &[DVector<f64>],
    d: &[DVector<f64>],
) -> Result<DVector<f64>> {
    let n = a.len();
    if y.len() != n || u.len() != b.ncols() || d.len() != e.ncols() {
        return Err(Error::Dimension("derivative stacks do not match the plant".into()));
    }
    let mut z = toeplitz_delta(a) * y;
    for (j, uj) in u.iter().enumerate() {
        z -= toeplitz_gamma(b, j) * uj;
    }
    for (l, dl) in d.iter().enumerate() {
        z -= toeplitz_gamma(e, l) * dl;
    }
    Ok(z)
}

/// Differential parameterization including coefficient derivatives:
/// `z_1 = y`, `z_{k+1} = z_k' + a_{n-k} y - B_{n-k}^T u - E_{n-k}^T d`.
///
/// `jets` must have order at least `n - 1`; `y[k]`, `u[k]`, `d[k]` are `k`-th derivatives.
pub fn diff_param_general(jets: &OcfJets, y: &[f64], u: &[DVector<f64>], d: &[DVector<f64>]) -> Result<DVector<f64>> {
    let n = jets.a.shape().0;
    if y.len() < n || u.len() < n || d.len() < n || jets.a.order() + 1 < n {
        return Err(Error::Dimension(format!("need {n} derivative orders")));
    }
    let yj = Jet::from_derivatives(y[..n].iter().map(|&v| DMatrix::from_element(1, 1, v)).collect());
    let uj = Jet::from_derivatives(u[..n].iter().map(|v| DMatrix::from_column_slice(v.len(), 1, v.as_slice())).collect());
    let dj = Jet::from_derivatives(d[..n].iter().map(|v| DMatrix::from_column_slice(v.len(), 1, v.as_slice())).collect());
    let mut z = DVector::zeros(n);
    let mut cur = yj.clone();
    z[0] = cur.value()[(0, 0)];
    for k in 1..n {
        let next = &(&(&cur.derivative() + &(&jets.a.row(k - 1) * &yj)) - &(&jets.b_o.row(k - 1) * &uj))
            - &(&jets.e_o.row(k - 1) * &dj);
        z[k] = next.value()[(0, 0)];
        cur = next;
    }
    Ok(z)
}
