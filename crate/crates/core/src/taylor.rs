//! Truncated Taylor series with matrix coefficients.
//!
//! A [`Jet`] of order `r` around `t` stores `M(t), M'(t)/1!, ..., M^(r)(t)/r!`.
//! Products, inverses and derivatives are exact up to the truncation order,
//! which lets the companion-form construction obtain derivatives of
//! `O(t)^-1` and of the transformation columns without numerical differencing.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    coeffs: Vec<DMatrix<f64>>,
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

impl Jet {
    /// Builds a jet from Taylor coefficients (`coeffs[k] = M^(k)/k!`).
    pub fn from_coeffs(coeffs: Vec<DMatrix<f64>>) -> Self {
        assert!(!coeffs.is_empty(), "jet needs at least one coefficient");
        let (r, c) = coeffs[0].shape();
        assert!(coeffs.iter().all(|m| m.shape() == (r, c)));
        Self { coeffs }
    }

    /// Builds a jet from plain derivatives `[M, M', M'', ...]`.
    pub fn from_derivatives(derivs: Vec<DMatrix<f64>>) -> Self {
        let coeffs = derivs
            .into_iter()
            .enumerate()
            .map(|(k, m)| m / factorial(k))
            .collect();
        Self::from_coeffs(coeffs)
    }

    pub fn constant(m: DMatrix<f64>, order: usize) -> Self {
        let zero = DMatrix::zeros(m.nrows(), m.ncols());
        let mut coeffs = vec![zero; order + 1];
        coeffs[0] = m;
        Self { coeffs }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coeffs[0].shape()
    }

    pub fn value(&self) -> &DMatrix<f64> {
        &self.coeffs[0]
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    /// The `k`-th time derivative at the expansion point.
    pub fn derivative_value(&self, k: usize) -> DMatrix<f64> {
        &self.coeffs[k] * factorial(k)
    }

    /// Jet of the time derivative; the order drops by one.
    pub fn derivative(&self) -> Jet {
        if self.coeffs.len() == 1 {
            let (r, c) = self.shape();
            return Jet::constant(DMatrix::zeros(r, c), 0);
        }
        let coeffs = self.coeffs[1..]
            .iter()
            .enumerate()
            .map(|(k, m)| m * (k as f64 + 1.0))
            .collect();
        Jet { coeffs }
    }

    pub fn truncate(&self, order: usize) -> Jet {
        let keep = (order + 1).min(self.coeffs.len());
        Jet {
            coeffs: self.coeffs[..keep].to_vec(),
        }
    }

    pub fn transpose(&self) -> Jet {
        Jet {
            coeffs: self.coeffs.iter().map(|m| m.transpose()).collect(),
        }
    }

    pub fn column(&self, j: usize) -> Jet {
        Jet {
            coeffs: self.coeffs.iter().map(|m| m.columns(j, 1).into_owned()).collect(),
        }
    }

    pub fn row(&self, i: usize) -> Jet {
        Jet {
            coeffs: self.coeffs.iter().map(|m| m.rows(i, 1).into_owned()).collect(),
        }
    }

    /// Concatenates column jets side by side; orders are truncated to the minimum.
    pub fn hstack(cols: &[Jet]) -> Jet {
        let order = cols.iter().map(Jet::order).min().expect("no columns");
        let rows = cols[0].shape().0;
        let width: usize = cols.iter().map(|c| c.shape().1).sum();
        let coeffs = (0..=order)
            .map(|k| {
                let mut m = DMatrix::zeros(rows, width);
                let mut off = 0;
                for c in cols {
                    let ck = &c.coeffs[k];
                    m.view_mut((0, off), ck.shape()).copy_from(ck);
                    off += ck.ncols();
                }
                m
            })
            .collect();
        Jet { coeffs }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet {
            coeffs: self.coeffs.iter().map(|m| m * s).collect(),
        }
    }

    /// Inverse of a square matrix jet.
    pub fn try_inverse(&self) -> Result<Jet> {
        let (r, c) = self.shape();
        if r != c {
            return Err(Error::Dimension(format!("cannot invert {r}x{c} jet")));
        }
        let inv0 = self.coeffs[0]
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("singular jet value".into()))?;
        let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(self.coeffs.len());
        out.push(inv0.clone());
        for k in 1..self.coeffs.len() {
            let mut acc = DMatrix::zeros(r, r);
            for j in 1..=k {
                acc += &self.coeffs[j] * &out[k - j];
            }
            out.push(-(&inv0 * acc));
        }
        Ok(Jet { coeffs: out })
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        let order = self.order().min(rhs.order());
        Jet {
            coeffs: (0..=order).map(|k| &self.coeffs[k] + &rhs.coeffs[k]).collect(),
        }
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        let order = self.order().min(rhs.order());
        Jet {
            coeffs: (0..=order).map(|k| &self.coeffs[k] - &rhs.coeffs[k]).collect(),
        }
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

/// Cauchy product, truncated to the smaller order.
impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        let order = self.order().min(rhs.order());
        let (r, _) = self.shape();
        let (_, c) = rhs.shape();
        let coeffs = (0..=order)
            .map(|k| {
                let mut acc = DMatrix::zeros(r, c);
                for j in 0..=k {
                    acc += &self.coeffs[j] * &rhs.coeffs[k - j];
                }
                acc
            })
            .collect();
        Jet { coeffs }
    }
}
