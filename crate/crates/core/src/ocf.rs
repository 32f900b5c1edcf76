//! Observability matrix, strong observability and the observability
//! companion form (OCF) of a linear time-varying plant.
//!
//! The transformation is built from `q(t) = O(t)^-1 e_n` and the recursion
//! `K^0 q = q`, `K^k q = -d/dt K^{k-1} q + A K^{k-1} q`, with
//! `P = [q | K q | ... | K^{n-1} q] J_n`. All derivatives (including `P'`)
//! are propagated through Taylor jets so no step of the construction
//! differences `P` numerically.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::taylor::Jet;
use crate::timefun::{GridSpec, MatrixSignal};

pub const DEFAULT_DEGENERACY_THRESHOLD: f64 = 1e-8;
pub const ANALYTIC_TOLERANCE: f64 = 1e-6;
pub const FINITE_DIFFERENCE_TOLERANCE: f64 = 1e-3;

/// `x' = A(t) x + B(t) u + E(t) d`, `y = C(t) x`.
#[derive(Clone, Debug)]
pub struct LtvPlant {
    a: MatrixSignal,
    b: MatrixSignal,
    c: MatrixSignal,
    e: MatrixSignal,
}

impl LtvPlant {
    pub fn new(a: MatrixSignal, b: MatrixSignal, c: MatrixSignal, e: MatrixSignal) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::Dimension(format!("A must be square, got {:?}", a.shape())));
        }
        if b.rows() != n {
            return Err(Error::Dimension(format!("B has {} rows, expected {n}", b.rows())));
        }
        if c.shape() != (1, n) {
            return Err(Error::Dimension(format!("C must be 1x{n}, got {:?}", c.shape())));
        }
        if e.rows() != n {
            return Err(Error::Dimension(format!("E has {} rows, expected {n}", e.rows())));
        }
        Ok(Self { a, b, c, e })
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.b.cols()
    }

    pub fn p(&self) -> usize {
        self.e.cols()
    }

    pub fn a(&self) -> &MatrixSignal {
        &self.a
    }

    pub fn b(&self) -> &MatrixSignal {
        &self.b
    }

    pub fn c(&self) -> &MatrixSignal {
        &self.c
    }

    pub fn e(&self) -> &MatrixSignal {
        &self.e
    }

    fn is_constant(&self) -> bool {
        self.a.is_constant() && self.b.is_constant() && self.c.is_constant() && self.e.is_constant()
    }

    /// True if building the OCF (plus `extra` derivative orders) needs finite differences.
    fn needs_finite_differences(&self, extra: usize) -> bool {
        let n = self.n();
        self.c.uses_finite_differences(2 * n - 1 + extra)
            || self.a.uses_finite_differences(2 * n - 1 + extra)
            || self.b.uses_finite_differences(extra)
            || self.e.uses_finite_differences(extra)
    }
}

fn vstack_rows(rows: &[Jet]) -> Jet {
    let cols: Vec<Jet> = rows.iter().map(Jet::transpose).collect();
    Jet::hstack(&cols).transpose()
}

/// Jet of the observability matrix of the given order.
fn observability_jet(plant: &LtvPlant, t: f64, order: usize) -> Result<Jet> {
    let n = plant.n();
    let depth = order + n - 1;
    let c = plant.c.jet(t, depth)?;
    let a = plant.a.jet(t, depth)?;
    let mut rows = Vec::with_capacity(n);
    let mut cur = c;
    rows.push(cur.clone());
    for _ in 1..n {
        cur = &cur.derivative() + &(&cur * &a);
        rows.push(cur.clone());
    }
    let rows: Vec<Jet> = rows.iter().map(|r| r.truncate(order)).collect();
    Ok(vstack_rows(&rows))
}

/// Rows `N^0 C(t), ..., N^{n-1} C(t)` with `N^k C = d/dt N^{k-1} C + (N^{k-1} C) A`.
pub fn observability_matrix(plant: &LtvPlant, t: f64) -> Result<DMatrix<f64>> {
    Ok(observability_jet(plant, t, 0)?.value().clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservabilityReport {
    pub delta_min: f64,
    pub t_at_min: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Grid minimum of `|det O(t)|`. Failure is reported, not raised.
pub fn strong_observability_check(plant: &LtvPlant, grid: &GridSpec) -> Result<ObservabilityReport> {
    strong_observability_check_with(plant, grid, DEFAULT_DEGENERACY_THRESHOLD)
}

pub fn strong_observability_check_with(
    plant: &LtvPlant,
    grid: &GridSpec,
    threshold: f64,
) -> Result<ObservabilityReport> {
    let mut delta_min = f64::INFINITY;
    let mut t_at_min = grid.t_start();
    for t in grid.points() {
        let det = observability_matrix(plant, t)?.determinant().abs();
        if det < delta_min {
            delta_min = det;
            t_at_min = t;
        }
    }
    Ok(ObservabilityReport {
        delta_min,
        t_at_min,
        threshold,
        passed: delta_min > threshold,
    })
}

/// Jets of all OCF quantities at one time instant.
#[derive(Clone, Debug)]
pub struct OcfJets {
    pub p: Jet,
    pub p_inv: Jet,
    pub p_dot: Jet,
    pub a_o: Jet,
    /// `[a_{n-1}, ..., a_0]^T`
    pub a: Jet,
    pub b_o: Jet,
    pub e_o: Jet,
}

/// OCF quantities with Taylor order `order` at `t`.
pub fn ocf_jets(plant: &LtvPlant, t: f64, order: usize) -> Result<OcfJets> {
    let n = plant.n();
    let q_order = order + n;
    let obs = observability_jet(plant, t, q_order)?;
    let obs_inv = obs.try_inverse().map_err(|_| Error::ObservabilityDegeneracy {
        t,
        det: obs.value().determinant().abs(),
    })?;
    let q = obs_inv.column(n - 1);
    let a_jet = plant.a.jet(t, q_order)?;
    let mut cols = Vec::with_capacity(n);
    let mut cur = q;
    cols.push(cur.clone());
    for _ in 1..n {
        cur = &(-&cur.derivative()) + &(&a_jet * &cur);
        cols.push(cur.clone());
    }
    // J_n reverses the column order
    cols.reverse();
    let p_full = Jet::hstack(&cols);
    let p_dot = p_full.derivative().truncate(order);
    let p = p_full.truncate(order);
    let p_inv = p
        .try_inverse()
        .map_err(|_| Error::ObservabilityDegeneracy { t, det: 0.0 })?;
    let a_o = &p_inv * &(&(&a_jet * &p) - &p_dot);
    let a = -&a_o.column(0);
    let b_o = &p_inv * &plant.b.jet(t, order)?;
    let e_o = &p_inv * &plant.e.jet(t, order)?;
    Ok(OcfJets {
        p,
        p_inv,
        p_dot,
        a_o,
        a,
        b_o,
        e_o,
    })
}

/// Companion matrix with first column `-a` and ones on the super-diagonal.
pub fn companion(a: &DVector<f64>) -> DMatrix<f64> {
    let n = a.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, 0)] = -a[i];
        if i + 1 < n {
            m[(i, i + 1)] = 1.0;
        }
    }
    m
}

/// Transformation data of the observability companion form.
#[derive(Clone, Debug)]
pub struct OcfData {
    pub n: usize,
    pub m: usize,
    pub p_dim: usize,
    pub p: MatrixSignal,
    pub p_inv: MatrixSignal,
    /// `[a_{n-1}, ..., a_0]^T` as an n x 1 signal.
    pub a: MatrixSignal,
    pub b_o: MatrixSignal,
    pub e_o: MatrixSignal,
    pub delta_min: f64,
    pub finite_differences: bool,
    pub tolerance: f64,
    pub constant: bool,
}

#[derive(Clone, Copy)]
enum Part {
    P,
    PInv,
    A,
    Bo,
    Eo,
}

fn part_signal(plant: &Arc<LtvPlant>, part: Part, rows: usize, cols: usize) -> MatrixSignal {
    let plant = Arc::clone(plant);
    MatrixSignal::new(rows, cols, usize::MAX, move |t, k| match ocf_jets(&plant, t, k) {
        Ok(j) => {
            let jet = match part {
                Part::P => &j.p,
                Part::PInv => &j.p_inv,
                Part::A => &j.a,
                Part::Bo => &j.b_o,
                Part::Eo => &j.e_o,
            };
            jet.derivative_value(k)
        }
        Err(_) => DMatrix::from_element(rows, cols, f64::NAN),
    })
}

/// Builds the OCF and verifies its defining identities on `grid`.
pub fn to_ocf(plant: &LtvPlant, grid: &GridSpec) -> Result<OcfData> {
    let report = strong_observability_check(plant, grid)?;
    if !report.passed {
        return Err(Error::ObservabilityDegeneracy {
            t: report.t_at_min,
            det: report.delta_min,
        });
    }
    let (n, m, pd) = (plant.n(), plant.m(), plant.p());
    let finite_differences = plant.needs_finite_differences(0);
    let tolerance = if finite_differences {
        FINITE_DIFFERENCE_TOLERANCE
    } else {
        ANALYTIC_TOLERANCE
    };
    let constant = plant.is_constant();

    let data = if constant {
        let j = ocf_jets(plant, grid.t_start(), 0)?;
        OcfData {
            n,
            m,
            p_dim: pd,
            p: MatrixSignal::constant(j.p.value().clone()),
            p_inv: MatrixSignal::constant(j.p_inv.value().clone()),
            a: MatrixSignal::constant(j.a.value().clone()),
            b_o: MatrixSignal::constant(j.b_o.value().clone()),
            e_o: MatrixSignal::constant(j.e_o.value().clone()),
            delta_min: report.delta_min,
            finite_differences,
            tolerance,
            constant,
        }
    } else {
        let shared = Arc::new(plant.clone());
        OcfData {
            n,
            m,
            p_dim: pd,
            p: part_signal(&shared, Part::P, n, n),
            p_inv: part_signal(&shared, Part::PInv, n, n),
            a: part_signal(&shared, Part::A, n, 1),
            b_o: part_signal(&shared, Part::Bo, n, m),
            e_o: part_signal(&shared, Part::Eo, n, pd),
            delta_min: report.delta_min,
            finite_differences,
            tolerance,
            constant,
        }
    };
    data.verify(plant, grid)?;
    Ok(data)
}

impl OcfData {
    /// Checks `P P^-1 = I`, `C P = e_1^T` and the companion structure of `A_o` on `grid`.
    pub fn verify(&self, plant: &LtvPlant, grid: &GridSpec) -> Result<()> {
        let n = self.n;
        let tol = self.tolerance;
        let mut e1 = DMatrix::zeros(1, n);
        e1[(0, 0)] = 1.0;
        for t in grid.points() {
            let j = ocf_jets(plant, t, 0)?;
            let p = self.p.value(t)?;
            let p_inv = self.p_inv.value(t)?;
            let r = (&p * &p_inv - DMatrix::identity(n, n)).amax();
            if r > tol {
                return Err(Error::OcfInvariant { t, what: "P P^-1 - I", residual: r });
            }
            let r = (plant.c.value(t)? * &p - &e1).amax();
            if r > tol {
                return Err(Error::OcfInvariant { t, what: "C P - e1", residual: r });
            }
            let a = self.a.value(t)?.column(0).into_owned();
            let r = (j.a_o.value() - companion(&a)).amax();
            if r > tol {
                return Err(Error::OcfInvariant { t, what: "A_o - companion(a)", residual: r });
            }
        }
        Ok(())
    }

    /// Transformed dynamics `A_o(t) = P^-1 (A P - P')` reconstructed from `a`.
    pub fn companion_at(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(companion(&self.a.value(t)?.column(0).into_owned()))
    }
}
