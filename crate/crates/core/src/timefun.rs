//! Time-varying matrix signals with derivative access.
//!
//! A [`MatrixSignal`] wraps an evaluator `(t, k) -> d^k/dt^k M(t)`. Orders up
//! to `max_analytic_order` are answered by the evaluator itself; higher orders
//! fall back to recursive central differences with step `fd_step`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::taylor::Jet;

pub const DEFAULT_FD_STEP: f64 = 1e-4;

type Evaluator = dyn Fn(f64, usize) -> DMatrix<f64> + Send + Sync;

#[derive(Clone)]
pub struct MatrixSignal {
    rows: usize,
    cols: usize,
    evaluator: Arc<Evaluator>,
    max_analytic_order: usize,
    fd_step: f64,
    constant: bool,
}

impl fmt::Debug for MatrixSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixSignal")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("max_analytic_order", &self.max_analytic_order)
            .field("fd_step", &self.fd_step)
            .field("constant", &self.constant)
            .finish()
    }
}

impl MatrixSignal {
    /// Signal with analytic derivatives up to `max_analytic_order`.
    pub fn new<F>(rows: usize, cols: usize, max_analytic_order: usize, evaluator: F) -> Self
    where
        F: Fn(f64, usize) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self {
            rows,
            cols,
            evaluator: Arc::new(evaluator),
            max_analytic_order,
            fd_step: DEFAULT_FD_STEP,
            constant: false,
        }
    }

    /// Signal given only by its values; every derivative is numerical.
    pub fn from_values<F>(rows: usize, cols: usize, f: F) -> Self
    where
        F: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self::new(rows, cols, 0, move |t, _| f(t))
    }

    /// Constant matrix; all derivatives vanish exactly.
    pub fn constant(m: DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut sig = Self::new(rows, cols, usize::MAX, move |_, k| {
            if k == 0 {
                m.clone()
            } else {
                DMatrix::zeros(rows, cols)
            }
        });
        sig.constant = true;
        sig
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn with_fd_step(mut self, fd_step: f64) -> Self {
        assert!(fd_step > 0.0 && fd_step.is_finite());
        self.fd_step = fd_step;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn max_analytic_order(&self) -> usize {
        self.max_analytic_order
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    /// True when derivatives of `order` require finite differences.
    pub fn uses_finite_differences(&self, order: usize) -> bool {
        order > self.max_analytic_order
    }

    /// The `order`-th time derivative at `t`.
    pub fn eval(&self, t: f64, order: usize) -> Result<DMatrix<f64>> {
        let m = self.eval_unchecked(t, order);
        if m.shape() != (self.rows, self.cols) {
            return Err(Error::SignalShape {
                rows: self.rows,
                cols: self.cols,
                got_rows: m.nrows(),
                got_cols: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::SignalEvaluation { t, order });
        }
        Ok(m)
    }

    pub fn value(&self, t: f64) -> Result<DMatrix<f64>> {
        self.eval(t, 0)
    }

    fn eval_unchecked(&self, t: f64, order: usize) -> DMatrix<f64> {
        if order <= self.max_analytic_order {
            return (self.evaluator)(t, order);
        }
        let h = self.fd_step;
        let fwd = self.eval_unchecked(t + h, order - 1);
        let bwd = self.eval_unchecked(t - h, order - 1);
        (fwd - bwd) / (2.0 * h)
    }

    /// Taylor jet of order `order` around `t`.
    pub fn jet(&self, t: f64, order: usize) -> Result<Jet> {
        if self.constant {
            return Ok(Jet::constant(self.eval(t, 0)?, order));
        }
        let derivs = (0..=order)
            .map(|k| self.eval(t, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Jet::from_derivatives(derivs))
    }

    /// Largest spectral norm of the `order`-th derivative over the grid points.
    ///
    /// This is a lower bound of the true supremum; it tightens as the grid is refined.
    pub fn sup_norm(&self, grid: &GridSpec, order: usize) -> Result<f64> {
        let pts = grid.points();
        if pts.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let mut sup = 0.0_f64;
        for t in pts {
            sup = sup.max(spectral_norm(&self.eval(t, order)?));
        }
        Ok(sup)
    }
}

/// Uniform time grid `t_start, t_start + step, ...` up to and including `t_end`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    t_start: f64,
    t_end: f64,
    step: f64,
}

impl GridSpec {
    pub fn new(t_start: f64, t_end: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() || !t_start.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "start {t_start}, end {t_end}, step {step}"
            )));
        }
        if t_end <= t_start {
            return Err(Error::EmptyGrid);
        }
        Ok(Self {
            t_start,
            t_end,
            step,
        })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        ((self.t_end - self.t_start) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| self.t_start + k as f64 * self.step)
            .collect()
    }

    /// Same interval, step halved.
    pub fn refined(&self) -> Self {
        Self {
            step: self.step / 2.0,
            ..*self
        }
    }
}

/// Largest singular value (Euclidean norm for vectors).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return 0.0;
    }
    if r == 1 || c == 1 {
        return m.norm();
    }
    if r == 2 && c == 2 {
        let (a, b, cc, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
        let s = a * a + b * b + cc * cc + d * d;
        let det = a * d - b * cc;
        let disc = (s * s - 4.0 * det * det).max(0.0);
        return ((s + disc.sqrt()) / 2.0).sqrt();
    }
    m.singular_values().max()
}
