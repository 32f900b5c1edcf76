//! Built-in example systems with analytic derivatives to every order.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::ocf::LtvPlant;
use crate::sampled::SampledPlantSpec;
use crate::timefun::MatrixSignal;

/// Harmonic oscillator `A = [[0, 1], [-1, 0]]`, `y = x_1`, already in companion form.
pub fn oscillator_linear_part() -> LtvPlant {
    LtvPlant::new(
        MatrixSignal::constant(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])),
        MatrixSignal::constant(DMatrix::identity(2, 2)),
        MatrixSignal::constant(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])),
        MatrixSignal::zeros(2, 1),
    )
    .expect("oscillator dimensions")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OscillatorParams {
    /// Gain of the `sin(y)` injection (also its Lipschitz constant).
    pub epsilon: f64,
}

impl Default for OscillatorParams {
    fn default() -> Self {
        Self { epsilon: 1.0 / 6.0 }
    }
}

/// Oscillator with injection `phi(y, u) = [eps sin(y) + u^2, -u]`.
pub fn oscillator(params: OscillatorParams, t_bar: f64, t_under: f64) -> SampledPlantSpec {
    let eps = params.epsilon;
    SampledPlantSpec::new(
        MatrixSignal::constant(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::zeros(2, 1),
        1,
        Arc::new(move |y: f64, u: &DVector<f64>, _t: f64| {
            DVector::from_vec(vec![eps * y.sin() + u[0] * u[0], -u[0]])
        }),
        eps,
        t_bar,
        t_under,
    )
    .expect("oscillator spec")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub c_o: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            c_o: 2.0,
        }
    }
}

impl PendulumParams {
    /// `L_phi = g / (c_o L)`.
    pub fn lipschitz(&self) -> f64 {
        self.gravity / (self.c_o * self.length)
    }

    /// Upper bound of the friction coefficient.
    pub fn friction_bound(&self) -> f64 {
        0.2
    }
}

/// `k^(order)(t)` for `k(t) = (1 + sin t) / 10`.
pub fn friction(t: f64, order: usize) -> f64 {
    match order {
        0 => (1.0 + t.sin()) / 10.0,
        k => (t + k as f64 * FRAC_PI_2).sin() / 10.0,
    }
}

fn pendulum_dynamics(mass: f64) -> MatrixSignal {
    MatrixSignal::new(2, 2, usize::MAX, move |t, k| {
        let mut m = DMatrix::zeros(2, 2);
        if k == 0 {
            m[(0, 1)] = 1.0;
        }
        m[(1, 1)] = -friction(t, k) / mass;
        m
    })
}

/// Linear part of the pendulum with the injection treated as input (`B = I`).
pub fn pendulum_linear_part(params: &PendulumParams) -> LtvPlant {
    LtvPlant::new(
        pendulum_dynamics(params.mass),
        MatrixSignal::constant(DMatrix::identity(2, 2)),
        MatrixSignal::constant(DMatrix::from_row_slice(1, 2, &[params.c_o, 0.0])),
        MatrixSignal::constant(DMatrix::from_column_slice(2, 1, &[0.0, 1.0])),
    )
    .expect("pendulum dimensions")
}

/// Pendulum with time-varying friction, output `y = c_o theta`.
pub fn pendulum(params: PendulumParams, t_bar: f64, t_under: f64) -> SampledPlantSpec {
    let PendulumParams {
        mass,
        length,
        gravity,
        c_o,
    } = params;
    SampledPlantSpec::new(
        pendulum_dynamics(mass),
        DMatrix::from_row_slice(1, 2, &[c_o, 0.0]),
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        1,
        Arc::new(move |y: f64, u: &DVector<f64>, _t: f64| {
            DVector::from_vec(vec![
                0.0,
                -gravity / length * (y / c_o).sin() + u[0] / (mass * length * length),
            ])
        }),
        params.lipschitz(),
        t_bar,
        t_under,
    )
    .expect("pendulum spec")
}
