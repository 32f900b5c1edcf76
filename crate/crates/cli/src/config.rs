//! TOML run configuration. Every field is optional; missing values are filled
//! from the selected plant preset, and the resolved config is echoed in all reports.

use std::sync::Arc;

use mfobs::modop::{FillPolicy, Quadrature};
use mfobs::plants::{self, OscillatorParams, PendulumParams};
use mfobs::sampled::{FillEstimate, RateConvention, SampleSchedule, SampledPlantSpec};
use mfobs::sim::{presets, Disturbance, KernelConfig, NoiseSpec, ObserverMode, Scenario};
use mfobs::timefun::MatrixSignal;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PlantKind {
    #[default]
    LtiOscillator,
    TvPendulum,
    /// Constant-coefficient plant from `a`, `b`, `c`, `e`, `l`.
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Sampled,
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Rate {
    TStar,
    Horizon,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pad {
    First,
    Zero,
}

/// Estimate used by the predictor while the first horizon fills.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateFill {
    Padded,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Trapezoid,
    Simpson,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Equidistant,
    Jittered,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub plant: PlantConfig,
    pub kernel: KernelSection,
    pub sampler: SamplerConfig,
    pub noise: NoiseConfig,
    pub run: RunConfig,
    /// Replaces the computed global gains in the stability report and envelopes.
    #[serde(skip_serializing_if = "GainOverride::is_empty")]
    pub gains: GainOverride,
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    pub kind: Option<PlantKind>,
    pub x0: Option<Vec<f64>>,
    /// Pendulum horizontal acceleration level `H`.
    pub h_level: Option<f64>,
    pub epsilon: Option<f64>,
    pub mass: Option<f64>,
    pub length: Option<f64>,
    pub gravity: Option<f64>,
    pub c_o: Option<f64>,
    /// Custom plant: `A` rows.
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
    pub c: Option<Vec<f64>>,
    pub e: Option<Vec<Vec<f64>>>,
    /// Custom plant: output injection `phi = l y + B u`.
    pub l: Option<Vec<f64>>,
    /// Constant disturbance level (custom plant), `d = d_level`.
    pub d_level: Option<f64>,
    pub input: Option<InputConfig>,
}

/// `u_j(t) = offset_j + amplitude_j sin(frequency_j t + phase_j)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConfig {
    pub amplitude: Vec<f64>,
    pub frequency: Vec<f64>,
    pub phase: Vec<f64>,
    pub offset: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    /// Kernel order; must match the plant order except for the standalone `kernel` command.
    pub order: Option<usize>,
    pub horizon: Option<f64>,
    pub extra_degree: Option<usize>,
    pub optimize: Option<bool>,
    pub seed: Option<u64>,
    pub restarts: Option<usize>,
    pub max_iters: Option<u64>,
    pub free: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub t_bar: Option<f64>,
    pub t_under: Option<f64>,
    pub schedule: Option<Schedule>,
    pub offset: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub variance: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub t_end: Option<f64>,
    pub step: Option<f64>,
    pub mode: Option<Mode>,
    pub rate: Option<Rate>,
    pub fill_policy: Option<Pad>,
    pub fill_estimate: Option<EstimateFill>,
    pub quadrature: Option<Rule>,
    pub divergence_limit: Option<f64>,
    pub grid_step: Option<f64>,
    /// Coefficient period; `0` means aperiodic (gains over the run window).
    pub period: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainOverride {
    pub eta_bar_a: Option<f64>,
    pub eta_bar_phi: Option<f64>,
    pub eta_bar_d: Option<f64>,
}

impl GainOverride {
    pub fn is_empty(&self) -> bool {
        self.eta_bar_a.is_none() && self.eta_bar_phi.is_none() && self.eta_bar_d.is_none()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<String>,
}

pub fn parse(text: &str) -> Result<Config, String> {
    toml::from_str(text).map_err(|e| format!("invalid config: {e}"))
}

fn matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>, String> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(format!("plant.{name} must be a non-empty rectangular matrix"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn set<T: Clone>(slot: &mut Option<T>, value: T) -> T {
    slot.get_or_insert(value).clone()
}

impl Config {
    /// Fills every unset field and builds the scenario.
    pub fn resolve(&mut self) -> Result<Scenario, String> {
        let kind = set(&mut self.plant.kind, PlantKind::default());
        let reference = match kind {
            PlantKind::LtiOscillator => presets::lti_oscillator(0.22),
            PlantKind::TvPendulum => presets::tv_pendulum(0.02, 0.0),
            PlantKind::Custom => presets::lti_oscillator(0.1),
        }
        .map_err(|e| e.to_string())?;

        let t_bar = set(&mut self.sampler.t_bar, reference.plant.t_bar);
        let t_under = set(&mut self.sampler.t_under, t_bar);
        let (plant, default_x0, input_dim, disturbance) = self.plant_spec(kind, t_bar, t_under)?;
        let x0 = set(&mut self.plant.x0, default_x0);
        if x0.len() != plant.n() {
            return Err(format!("plant.x0 has {} entries, plant order is {}", x0.len(), plant.n()));
        }

        let default_input = match kind {
            PlantKind::LtiOscillator => InputConfig {
                amplitude: vec![0.5],
                frequency: vec![0.5],
                phase: vec![0.0],
                offset: vec![0.0],
            },
            _ => InputConfig {
                amplitude: vec![0.0; input_dim],
                frequency: vec![0.0; input_dim],
                phase: vec![0.0; input_dim],
                offset: vec![0.0; input_dim],
            },
        };
        let input = set(&mut self.plant.input, default_input);
        for (name, v) in [
            ("amplitude", &input.amplitude),
            ("frequency", &input.frequency),
            ("phase", &input.phase),
            ("offset", &input.offset),
        ] {
            if v.len() != input_dim {
                return Err(format!("plant.input.{name} needs {input_dim} entries, got {}", v.len()));
            }
        }

        let rk = &reference.kernel;
        set(&mut self.kernel.order, plant.n());
        let horizon = set(&mut self.kernel.horizon, rk.horizon);
        let kernel = KernelConfig {
            horizon,
            extra_degree: set(&mut self.kernel.extra_degree, if kind == PlantKind::Custom { 0 } else { rk.extra_degree }),
            optimize: set(&mut self.kernel.optimize, kind != PlantKind::Custom && rk.optimize),
            seed: set(&mut self.kernel.seed, rk.seed),
            restarts: set(&mut self.kernel.restarts, rk.restarts),
            max_iters: set(&mut self.kernel.max_iters, rk.max_iters),
            free: self.kernel.free.clone(),
        };

        let schedule = match set(&mut self.sampler.schedule, Schedule::Equidistant) {
            Schedule::Equidistant => SampleSchedule::Equidistant {
                period: t_bar,
                offset: set(&mut self.sampler.offset, 0.0),
            },
            Schedule::Jittered => SampleSchedule::Jittered {
                t_under,
                t_bar,
                seed: set(&mut self.sampler.seed, 0),
            },
        };
        let noise = NoiseSpec {
            variance: set(
                &mut self.noise.variance,
                if kind == PlantKind::Custom { 0.0 } else { reference.noise.variance },
            ),
            seed: set(&mut self.noise.seed, reference.noise.seed),
        };
        let r = &mut self.run;
        let mode = match set(&mut r.mode, Mode::Sampled) {
            Mode::Sampled => ObserverMode::Sampled,
            Mode::Continuous => ObserverMode::Continuous,
        };
        let rate = match set(&mut r.rate, Rate::TStar) {
            Rate::TStar => RateConvention::HorizonStar,
            Rate::Horizon => RateConvention::Horizon,
        };
        let fill_policy = match set(&mut r.fill_policy, Pad::First) {
            Pad::First => FillPolicy::PadWithFirst,
            Pad::Zero => FillPolicy::ZeroPad,
        };
        let fill_estimate = match set(&mut r.fill_estimate, EstimateFill::Padded) {
            EstimateFill::Padded => FillEstimate::Padded,
            EstimateFill::Zero => FillEstimate::Zero,
        };
        let quadrature = match set(&mut r.quadrature, Rule::Trapezoid) {
            Rule::Trapezoid => Quadrature::Trapezoid,
            Rule::Simpson => Quadrature::Simpson,
        };
        let period = set(&mut r.period, reference.period.unwrap_or(0.0));
        let name = match kind {
            PlantKind::LtiOscillator => "lti-oscillator",
            PlantKind::TvPendulum => "tv-pendulum",
            PlantKind::Custom => "custom",
        };
        let u = input.clone();
        Ok(Scenario {
            name: name.to_string(),
            plant,
            x0: DVector::from_vec(x0),
            u: Arc::new(move |t| {
                DVector::from_fn(u.amplitude.len(), |j, _| {
                    u.offset[j] + u.amplitude[j] * (u.frequency[j] * t + u.phase[j]).sin()
                })
            }),
            disturbance,
            noise,
            schedule,
            step: set(&mut r.step, reference.step),
            t_end: set(&mut r.t_end, reference.t_end),
            kernel,
            mode,
            fill_policy,
            fill_estimate,
            quadrature,
            rate,
            divergence_limit: set(&mut r.divergence_limit, reference.divergence_limit),
            period: (period > 0.0).then_some(period),
            grid_step: set(&mut r.grid_step, reference.grid_step),
        })
    }

    fn plant_spec(
        &mut self,
        kind: PlantKind,
        t_bar: f64,
        t_under: f64,
    ) -> Result<(SampledPlantSpec, Vec<f64>, usize, Disturbance), String> {
        let p = &mut self.plant;
        match kind {
            PlantKind::LtiOscillator => {
                let params = OscillatorParams {
                    epsilon: set(&mut p.epsilon, OscillatorParams::default().epsilon),
                };
                Ok((plants::oscillator(params, t_bar, t_under), vec![1.0, 1.0], 1, Disturbance::Zero))
            }
            PlantKind::TvPendulum => {
                let d = PendulumParams::default();
                let params = PendulumParams {
                    mass: set(&mut p.mass, d.mass),
                    length: set(&mut p.length, d.length),
                    gravity: set(&mut p.gravity, d.gravity),
                    c_o: set(&mut p.c_o, d.c_o),
                };
                let h = set(&mut p.h_level, 0.0);
                let length = params.length;
                let dist = if h == 0.0 {
                    Disturbance::Zero
                } else {
                    Disturbance::StateDependent(Arc::new(move |_, x| DVector::from_element(1, h / length * x[0].cos())))
                };
                Ok((plants::pendulum(params, t_bar, t_under), vec![0.5, 0.0], 1, dist))
            }
            PlantKind::Custom => {
                let a = matrix(p.a.as_ref().ok_or("custom plant needs plant.a")?, "a")?;
                let n = a.nrows();
                if a.ncols() != n {
                    return Err("plant.a must be square".into());
                }
                let c = p.c.clone().ok_or("custom plant needs plant.c")?;
                if c.len() != n {
                    return Err(format!("plant.c needs {n} entries"));
                }
                let b = match &p.b {
                    Some(rows) => matrix(rows, "b")?,
                    None => DMatrix::zeros(n, 1),
                };
                let e = match &p.e {
                    Some(rows) => matrix(rows, "e")?,
                    None => DMatrix::zeros(n, 1),
                };
                let l = DVector::from_vec(set(&mut p.l, vec![0.0; n]));
                if b.nrows() != n || e.nrows() != n || l.len() != n {
                    return Err(format!("plant.b, plant.e and plant.l need {n} rows"));
                }
                let m = b.ncols();
                let l_phi = l.norm();
                let (bb, ll) = (b.clone(), l.clone());
                let spec = SampledPlantSpec::new(
                    MatrixSignal::constant(a),
                    DMatrix::from_row_slice(1, n, &c),
                    e.clone(),
                    m,
                    Arc::new(move |y, u, _| &ll * y + &bb * u),
                    l_phi,
                    t_bar,
                    t_under,
                )
                .map_err(|e| e.to_string())?;
                let level = set(&mut p.d_level, 0.0);
                let dist = if level == 0.0 {
                    Disturbance::Zero
                } else {
                    let dim = e.ncols();
                    Disturbance::Signal(Arc::new(move |_| DVector::from_element(dim, level)))
                };
                Ok((spec, vec![1.0; n], m, dist))
            }
        }
    }

    pub fn echo(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("# config echo failed: {e}\n"))
    }
}
