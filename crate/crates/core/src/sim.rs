//! Scenario simulation: fixed-step RK4 plant, noise and disturbance
//! generation, measurement sampling, the closed-loop observer and trace metrics.

use std::fmt::Write as _;
use std::io;
use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernel::{hermite_umf, optimize_kernel, AdjointGainTable, GainGrid, OptimizeOptions, UmfKernel};
use crate::modop::{FillPolicy, Quadrature};
use crate::observer::{AlgebraicObserver, CoefficientSource, ObserverOptions};
use crate::ocf::{to_ocf, LtvPlant, OcfData};
use crate::sampled::{
    bound_envelopes, stability_report, sup_ey_init, EnvelopeInputs, FillEstimate, RateConvention, SampleSchedule,
    SampledObserver, SampledOptions, SampledPlantSpec, StabilityReport,
};
use crate::timefun::GridSpec;

pub use crate::sampled::{window_integral, window_l2, window_sup};

pub type InputFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;
pub type StateDisturbance = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;

#[derive(Clone, Default)]
pub enum Disturbance {
    #[default]
    Zero,
    Signal(InputFn),
    /// Depends on time and the plant state (evaluated inside the RK4 stages).
    StateDependent(StateDisturbance),
}

impl Disturbance {
    pub fn eval(&self, t: f64, x: &DVector<f64>, p: usize) -> DVector<f64> {
        match self {
            Self::Zero => DVector::zeros(p),
            Self::Signal(f) => f(t),
            Self::StateDependent(f) => f(t, x),
        }
    }
}

/// Zero-mean Gaussian measurement noise; `variance = 0` disables it.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoiseSpec {
    pub variance: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ObserverMode {
    /// Continuous measurement, algebraic observer only.
    Continuous,
    /// Sampled measurement with the output predictor.
    #[default]
    Sampled,
}

impl ObserverMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Continuous => "continuous",
            Self::Sampled => "sampled",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelConfig {
    pub horizon: f64,
    pub extra_degree: usize,
    pub optimize: bool,
    pub seed: u64,
    pub restarts: usize,
    pub max_iters: u64,
    /// Explicit null-space coordinates; overrides optimization.
    pub free: Option<Vec<f64>>,
}

impl KernelConfig {
    pub fn baseline(horizon: f64) -> Self {
        Self {
            horizon,
            extra_degree: 0,
            optimize: false,
            seed: 0,
            restarts: 3,
            max_iters: 300,
            free: None,
        }
    }
}

#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub plant: SampledPlantSpec,
    pub x0: DVector<f64>,
    pub u: InputFn,
    pub disturbance: Disturbance,
    pub noise: NoiseSpec,
    pub schedule: SampleSchedule,
    pub step: f64,
    pub t_end: f64,
    pub kernel: KernelConfig,
    pub mode: ObserverMode,
    pub fill_policy: FillPolicy,
    pub fill_estimate: FillEstimate,
    pub quadrature: Quadrature,
    pub rate: RateConvention,
    pub divergence_limit: f64,
    /// Coefficient period; the t-grid of gains and `K3` spans one period (else the run window).
    pub period: Option<f64>,
    /// Spacing of the coefficient t-grid.
    pub grid_step: f64,
}

impl Scenario {
    /// Builds a scenario with library defaults for the numerical settings.
    pub fn new(name: &str, plant: SampledPlantSpec, x0: DVector<f64>, horizon: f64) -> Self {
        let t_bar = plant.t_bar;
        Self {
            name: name.to_string(),
            plant,
            x0,
            u: Arc::new(|_| DVector::zeros(1)),
            disturbance: Disturbance::Zero,
            noise: NoiseSpec::default(),
            schedule: SampleSchedule::Equidistant { period: t_bar, offset: 0.0 },
            step: 1e-3,
            t_end: 10.0,
            kernel: KernelConfig::baseline(horizon),
            mode: ObserverMode::Sampled,
            fill_policy: FillPolicy::PadWithFirst,
            fill_estimate: FillEstimate::Padded,
            quadrature: Quadrature::Trapezoid,
            rate: RateConvention::HorizonStar,
            divergence_limit: 1e6,
            period: None,
            grid_step: 0.05,
        }
    }

    fn coefficient_grid(&self) -> Result<GridSpec> {
        let end = self.period.unwrap_or(self.t_end.max(self.kernel.horizon));
        GridSpec::new(0.0, end, self.grid_step)
    }

    fn gain_grid(&self) -> Result<GainGrid> {
        let g = self.coefficient_grid()?;
        Ok(GainGrid {
            sigma_step: self.step,
            t_start: g.t_start(),
            t_end: g.t_end(),
            t_step: self.grid_step,
        })
    }

    fn validate(&self) -> Result<()> {
        let ratio = self.kernel.horizon / self.step;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "step {} does not divide the horizon {}",
                self.step, self.kernel.horizon
            )));
        }
        if self.x0.len() != self.plant.n() {
            return Err(Error::Dimension(format!("x0 has {} entries, plant has {}", self.x0.len(), self.plant.n())));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::InvalidArgument(format!("t_end must be positive, got {}", self.t_end)));
        }
        Ok(())
    }
}

/// Result of the kernel design step.
#[derive(Clone, Debug)]
pub struct KernelDesign {
    pub kernel: UmfKernel,
    pub j_baseline: f64,
    pub j_kernel: f64,
    pub warning: Option<String>,
}

/// Everything computed before the first simulation step; reusable across seeds.
#[derive(Clone, Debug)]
pub struct Design {
    pub plant: LtvPlant,
    pub ocf: OcfData,
    pub kernel: KernelDesign,
    pub gains: AdjointGainTable,
    pub report: StabilityReport,
    pub p_norm: f64,
    pub source: CoefficientSource,
}

impl Design {
    pub fn prepare(sc: &Scenario) -> Result<Self> {
        sc.validate()?;
        let plant = sc.plant.linear_part()?;
        let grid = sc.coefficient_grid()?;
        let ocf = to_ocf(&plant, &grid)?;
        let horizon = sc.kernel.horizon;
        let gain_grid = sc.gain_grid()?;
        let l_phi = sc.plant.l_phi;
        let base = hermite_umf(ocf.n, horizon, sc.kernel.extra_degree)?;
        let kd = if let Some(free) = &sc.kernel.free {
            let kernel = base.with_free_parameters(free)?;
            let eval = crate::kernel::GainEvaluator::new(&ocf, horizon, &gain_grid)?;
            KernelDesign {
                j_baseline: eval.cost(&base, l_phi),
                j_kernel: eval.cost(&kernel, l_phi),
                kernel,
                warning: None,
            }
        } else if sc.kernel.optimize {
            let search_step = horizon / 50.0;
            let opts = OptimizeOptions {
                extra_degree: sc.kernel.extra_degree,
                restarts: sc.kernel.restarts,
                max_iters: sc.kernel.max_iters,
                seed: sc.kernel.seed,
                search_grid: GainGrid {
                    sigma_step: search_step,
                    t_step: (4.0 * sc.grid_step / search_step).round().max(1.0) * search_step,
                    ..gain_grid
                },
                final_grid: gain_grid,
            };
            let r = optimize_kernel(&ocf, l_phi, horizon, &opts)?;
            KernelDesign {
                kernel: r.kernel,
                j_baseline: r.j_baseline,
                j_kernel: r.j_optimized,
                warning: r.warning,
            }
        } else {
            let eval = crate::kernel::GainEvaluator::new(&ocf, horizon, &gain_grid)?;
            let j = eval.cost(&base, l_phi);
            KernelDesign {
                kernel: base,
                j_baseline: j,
                j_kernel: j,
                warning: None,
            }
        };
        let gains = AdjointGainTable::compute(&ocf, &kd.kernel, &gain_grid, sc.period)?;
        let report = stability_report(&sc.plant, &ocf, &gains.summary(), horizon, &grid)?;
        let p_norm = ocf.p.sup_norm(&grid, 0)?;
        let source = CoefficientSource::new(&plant, &ocf)?;
        Ok(Self {
            plant,
            ocf,
            kernel: kd,
            gains,
            report,
            p_norm,
            source,
        })
    }
}

/// One classical RK4 step of `x' = A(t) x + phi(C x, u, t) + E d(t, x)`.
pub fn integrate_plant(sc: &Scenario, t: f64, x: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    let spec = &sc.plant;
    let p = spec.p();
    let f = |s: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
        let y = spec.output(x);
        let u = (sc.u)(s);
        Ok(spec.a.value(s)? * x + spec.phi(y, &u, s) + &spec.e * sc.disturbance.eval(s, x, p))
    };
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * dt, &(x + &k1 * (0.5 * dt)))?;
    let k3 = f(t + 0.5 * dt, &(x + &k2 * (0.5 * dt)))?;
    let k4 = f(t + dt, &(x + &k3 * dt))?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::PlantDivergence { t: t + dt });
    }
    Ok(next)
}

#[derive(Clone, Debug, PartialEq)]
pub enum TraceStatus {
    Completed,
    /// Truncated at `t`.
    Diverged { t: f64, reason: String },
}

impl TraceStatus {
    pub fn is_diverged(&self) -> bool {
        matches!(self, Self::Diverged { .. })
    }
}

/// Time series of one run, all on the integration grid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub n: usize,
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub y: Vec<f64>,
    /// Measurement; `NaN` between samples in sampled mode.
    pub y_tilde: Vec<f64>,
    pub sample: Vec<bool>,
    pub y_hat: Vec<f64>,
    pub z: Vec<DVector<f64>>,
    pub z_hat: Vec<DVector<f64>>,
    pub x_hat: Vec<DVector<f64>>,
    pub e_y: Vec<f64>,
    pub ex_norm: Vec<f64>,
    pub ez_norm: Vec<f64>,
    pub d_norm: Vec<f64>,
    /// Noise acting at `t` (the latest sample's draw in sampled mode).
    pub nu: Vec<f64>,
    pub filling: Vec<bool>,
    pub w: Vec<f64>,
    pub ey_env: Vec<f64>,
    pub ex_env: Vec<f64>,
    pub status: Option<TraceStatus>,
    pub sup_ey_init: f64,
    pub alpha_x: f64,
    pub metadata: Vec<(String, String)>,
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl Trace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn status(&self) -> &TraceStatus {
        self.status.as_ref().unwrap_or(&TraceStatus::Completed)
    }

    /// Named columns in CSV order.
    pub fn columns(&self) -> Vec<(String, Vec<f64>)> {
        let n = self.n;
        let mut cols: Vec<(String, Vec<f64>)> = vec![("t".into(), self.t.clone())];
        let vec_cols = |name: &str, v: &[DVector<f64>], cols: &mut Vec<(String, Vec<f64>)>| {
            for i in 0..n {
                cols.push((format!("{name}{}", i + 1), v.iter().map(|x| x[i]).collect()));
            }
        };
        vec_cols("x", &self.x, &mut cols);
        cols.push(("y".into(), self.y.clone()));
        cols.push(("y_tilde".into(), self.y_tilde.clone()));
        cols.push(("sample".into(), self.sample.iter().map(|&b| flag(b)).collect()));
        cols.push(("y_hat".into(), self.y_hat.clone()));
        vec_cols("z", &self.z, &mut cols);
        vec_cols("z_hat", &self.z_hat, &mut cols);
        vec_cols("x_hat", &self.x_hat, &mut cols);
        cols.push(("e_y".into(), self.e_y.clone()));
        cols.push(("ex_norm".into(), self.ex_norm.clone()));
        cols.push(("ez_norm".into(), self.ez_norm.clone()));
        cols.push(("d_norm".into(), self.d_norm.clone()));
        cols.push(("nu".into(), self.nu.clone()));
        cols.push(("filling".into(), self.filling.iter().map(|&b| flag(b)).collect()));
        cols.push(("w".into(), self.w.clone()));
        cols.push(("ey_env".into(), self.ey_env.clone()));
        cols.push(("ex_env".into(), self.ex_env.clone()));
        cols
    }

    /// CSV with a header row; floats use the shortest round-trip representation.
    pub fn write_csv<W: io::Write>(&self, mut out: W) -> io::Result<()> {
        let cols = self.columns();
        let header: Vec<&str> = cols.iter().map(|(n, _)| n.as_str()).collect();
        writeln!(out, "{}", header.join(","))?;
        let mut line = String::new();
        for k in 0..self.len() {
            line.clear();
            for (j, (_, c)) in cols.iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                let _ = write!(line, "{}", c[k]);
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// `key = value` lines describing the run.
    pub fn sidecar(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn push_meta(meta: &mut Vec<(String, String)>, k: &str, v: impl ToString) {
    meta.push((k.to_string(), v.to_string()));
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn rate_name(r: RateConvention) -> &'static str {
    match r {
        RateConvention::HorizonStar => "t_star",
        RateConvention::Horizon => "horizon",
    }
}

pub fn parse_rate(s: &str) -> Option<RateConvention> {
    match s {
        "t_star" => Some(RateConvention::HorizonStar),
        "horizon" => Some(RateConvention::Horizon),
        _ => None,
    }
}

/// Designs and runs one scenario.
pub fn run(sc: &Scenario) -> Result<Trace> {
    let design = Design::prepare(sc)?;
    run_with_design(sc, &design)
}

enum Loop {
    Continuous(Box<AlgebraicObserver>),
    Sampled(Box<SampledObserver>),
}

/// Runs a scenario against a prepared design. Divergence truncates the trace with a status.
pub fn run_with_design(sc: &Scenario, design: &Design) -> Result<Trace> {
    sc.validate()?;
    let h = sc.step;
    let n = sc.plant.n();
    let p = sc.plant.p();
    let steps = (sc.t_end / h + 1e-9).floor() as usize;
    let samples = match sc.mode {
        ObserverMode::Sampled => sc.schedule.indices(sc.t_end, h)?,
        ObserverMode::Continuous => Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(sc.noise.seed);
    let normal = if sc.noise.variance > 0.0 {
        Some(Normal::new(0.0, sc.noise.variance.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    let mut draw = move || normal.as_ref().map_or(0.0, |d| d.sample(&mut rng));

    let kernel = design.kernel.kernel.clone();
    let mut lp = match sc.mode {
        ObserverMode::Continuous => Loop::Continuous(Box::new(AlgebraicObserver::new(
            design.source.clone(),
            kernel,
            n,
            ObserverOptions {
                step: h,
                fill_policy: sc.fill_policy,
                quadrature: sc.quadrature,
            },
        )?)),
        ObserverMode::Sampled => Loop::Sampled(Box::new(SampledObserver::new(
            sc.plant.clone(),
            design.source.clone(),
            kernel,
            SampledOptions {
                step: h,
                fill_policy: sc.fill_policy,
                quadrature: sc.quadrature,
                fill_estimate: sc.fill_estimate,
                divergence_limit: sc.divergence_limit,
            },
        )?)),
    };

    let mut tr = Trace {
        n,
        ..Trace::default()
    };
    let mut x = sc.x0.clone();
    let mut next_sample = 0;
    let mut nu_held = 0.0;
    let mut status = TraceStatus::Completed;
    for k in 0..=steps {
        let t = k as f64 * h;
        if x.iter().any(|v| !v.is_finite() || v.abs() > sc.divergence_limit) {
            status = TraceStatus::Diverged { t, reason: "plant divergence".into() };
            break;
        }
        let y = sc.plant.output(&x);
        let d = sc.disturbance.eval(t, &x, p);
        let coeffs = design.source.at(t)?;
        let z = &coeffs.p_inv * &x;
        let u = (sc.u)(t);
        let (is_sample, y_tilde, y_hat, z_hat, x_hat, filling) = match &mut lp {
            Loop::Continuous(obs) => {
                let nu = draw();
                nu_held = nu;
                let ym = y + nu;
                let pseudo = sc.plant.phi(ym, &u, t);
                obs.push_with(t, ym, &pseudo, &coeffs)?;
                let e = obs.estimate(t)?;
                (true, ym, ym, e.z_hat, e.x_hat, e.filling)
            }
            Loop::Sampled(obs) => {
                let mut yt = f64::NAN;
                let is_sample = next_sample < samples.len() && samples[next_sample] == k;
                if is_sample {
                    next_sample += 1;
                    nu_held = draw();
                    yt = y + nu_held;
                    obs.reset_on_sample(t, yt)?;
                }
                match obs.predictor_step(t, |s| (sc.u)(s)) {
                    Ok(out) => (is_sample, yt, out.y_hat, out.z_hat, out.x_hat, out.filling),
                    Err(Error::PredictorDivergence { t: td }) => {
                        status = TraceStatus::Diverged { t: td, reason: "predictor divergence".into() };
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        tr.t.push(t);
        tr.y.push(y);
        tr.y_tilde.push(y_tilde);
        tr.sample.push(is_sample);
        tr.y_hat.push(y_hat);
        tr.e_y.push(y - y_hat);
        tr.ex_norm.push((&x - &x_hat).norm());
        tr.ez_norm.push((&z - &z_hat).norm());
        tr.d_norm.push(d.norm());
        tr.nu.push(nu_held);
        tr.filling.push(filling);
        tr.z.push(z);
        tr.z_hat.push(z_hat);
        tr.x_hat.push(x_hat);
        tr.x.push(x.clone());
        if k < steps {
            match integrate_plant(sc, t, &x, h) {
                Ok(next) => x = next,
                Err(Error::PlantDivergence { t }) => {
                    status = TraceStatus::Diverged { t, reason: "plant divergence".into() };
                    break;
                }
                Err(e) => return Err(e),
            }
        }
    }

    let len = tr.len();
    tr.w = vec![f64::NAN; len];
    tr.ey_env = vec![f64::NAN; len];
    tr.ex_env = vec![f64::NAN; len];
    let report = &design.report;
    let t_star = report.t_bar + report.horizon;
    tr.sup_ey_init = sup_ey_init(&tr.t, &tr.e_y, t_star);
    if sc.mode == ObserverMode::Sampled && report.stable && !status.is_diverged() && len > 0 {
        let nu_abs: Vec<f64> = tr.nu.iter().map(|v| v.abs()).collect();
        let env = bound_envelopes(
            report,
            design.p_norm,
            tr.sup_ey_init,
            &EnvelopeInputs {
                times: &tr.t,
                step: h,
                nu: &nu_abs,
                d_norm: &tr.d_norm,
            },
            sc.rate,
        )?;
        tr.alpha_x = env.alpha_x;
        tr.w = env.w;
        tr.ey_env = env.ey_env;
        tr.ex_env = env.ex_env;
    } else {
        tr.alpha_x = f64::NAN;
    }

    let m = &mut tr.metadata;
    push_meta(m, "software", concat!("mfobs ", env!("CARGO_PKG_VERSION")));
    push_meta(m, "scenario", &sc.name);
    push_meta(m, "mode", sc.mode.name());
    push_meta(m, "n", n);
    push_meta(m, "step", h);
    push_meta(m, "t_end", sc.t_end);
    push_meta(m, "x0", join(sc.x0.as_slice()));
    push_meta(m, "noise_variance", sc.noise.variance);
    push_meta(m, "seed", sc.noise.seed);
    push_meta(m, "schedule", format!("{:?}", sc.schedule));
    push_meta(m, "horizon", sc.kernel.horizon);
    push_meta(m, "extra_degree", sc.kernel.extra_degree);
    push_meta(m, "kernel_free", join(design.kernel.kernel.free_parameters()));
    push_meta(m, "j_baseline", design.kernel.j_baseline);
    push_meta(m, "j_kernel", design.kernel.j_kernel);
    push_meta(m, "k1", report.k1);
    push_meta(m, "k2", report.k2);
    push_meta(m, "k3", report.k3);
    push_meta(m, "eta_bar_a", report.eta_bar_a);
    push_meta(m, "eta_bar_phi", report.eta_bar_phi);
    push_meta(m, "eta_bar_d", report.eta_bar_d);
    push_meta(m, "l_phi", report.l_phi);
    push_meta(m, "t_bar", report.t_bar);
    push_meta(m, "t_under", sc.plant.t_under);
    push_meta(m, "lambda", report.lambda);
    push_meta(m, "product", report.product);
    push_meta(m, "stable", report.stable);
    push_meta(m, "p_norm", design.p_norm);
    push_meta(m, "rate", rate_name(sc.rate));
    push_meta(m, "sup_ey_init", tr.sup_ey_init);
    push_meta(m, "alpha_x", tr.alpha_x);
    match &status {
        TraceStatus::Completed => push_meta(m, "status", "completed"),
        TraceStatus::Diverged { t, reason } => {
            push_meta(m, "status", "diverged");
            push_meta(m, "diverged_at", t);
            push_meta(m, "diverged_reason", reason);
        }
    }
    tr.status = Some(status);
    Ok(tr)
}

/// Summary statistics of a trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    /// `+inf` without noise.
    pub snr_db: f64,
    pub nu_sup: f64,
    pub d_sup: f64,
    /// Largest `||e_x||` over the last fifth of the run.
    pub steady_ex: f64,
    pub max_ex: f64,
    pub ey_checked: usize,
    pub ex_checked: usize,
    pub ey_violations: usize,
    pub ex_violations: usize,
}

pub fn metrics(tr: &Trace) -> Metrics {
    let len = tr.len();
    let (mut sig, mut noise, mut count) = (0.0, 0.0, 0usize);
    for k in 0..len {
        if tr.sample[k] {
            sig += tr.y[k] * tr.y[k];
            noise += tr.nu[k] * tr.nu[k];
            count += 1;
        }
    }
    let snr_db = if noise == 0.0 || count == 0 {
        f64::INFINITY
    } else {
        10.0 * (sig / noise).log10()
    };
    let tail = len - len / 5;
    let sup = |v: &[f64]| v.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let mut m = Metrics {
        snr_db,
        nu_sup: sup(&tr.nu),
        d_sup: sup(&tr.d_norm),
        steady_ex: sup(&tr.ex_norm[tail.min(len)..]),
        max_ex: sup(&tr.ex_norm),
        ey_checked: 0,
        ex_checked: 0,
        ey_violations: 0,
        ex_violations: 0,
    };
    for k in 0..len {
        if tr.ey_env[k].is_finite() {
            m.ey_checked += 1;
            if tr.e_y[k].abs() > tr.ey_env[k] {
                m.ey_violations += 1;
            }
        }
        if tr.ex_env[k].is_finite() {
            m.ex_checked += 1;
            if tr.ex_norm[k] > tr.ex_env[k] {
                m.ex_violations += 1;
            }
        }
    }
    m
}

/// Preset scenarios for the two built-in examples.
pub mod presets {
    use super::*;
    use crate::plants;

    /// Oscillator with output injection, sampled every `t_bar`, horizon `T = 2`, noise variance 1e-2.
    pub fn lti_oscillator(t_bar: f64) -> Result<Scenario> {
        let plant = plants::oscillator(plants::OscillatorParams::default(), t_bar, t_bar);
        let mut sc = Scenario::new("lti-oscillator", plant, DVector::from_vec(vec![1.0, 1.0]), 2.0);
        sc.u = Arc::new(|t| DVector::from_element(1, 0.5 * (0.5 * t).sin()));
        sc.noise = NoiseSpec { variance: 1e-2, seed: 0 };
        sc.t_end = 60.0;
        sc.kernel = KernelConfig {
            extra_degree: 1,
            optimize: true,
            ..KernelConfig::baseline(2.0)
        };
        Ok(sc)
    }

    /// Pendulum with time-varying friction and horizontal acceleration `H`.
    pub fn tv_pendulum(t_bar: f64, h_level: f64) -> Result<Scenario> {
        let params = plants::PendulumParams::default();
        let plant = plants::pendulum(params, t_bar, t_bar);
        let mut sc = Scenario::new("tv-pendulum", plant, DVector::from_vec(vec![0.5, 0.0]), 1.0);
        let length = params.length;
        sc.disturbance = if h_level == 0.0 {
            Disturbance::Zero
        } else {
            Disturbance::StateDependent(Arc::new(move |_, x| DVector::from_element(1, h_level / length * x[0].cos())))
        };
        sc.t_end = 10.0;
        sc.period = Some(2.0 * std::f64::consts::PI);
        sc.kernel = KernelConfig {
            extra_degree: 2,
            optimize: true,
            seed: 1,
            ..KernelConfig::baseline(1.0)
        };
        Ok(sc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants;
    use nalgebra::DMatrix;

    #[test]
    fn zero_dynamics_keep_the_state() {
        let spec = SampledPlantSpec::new(
            crate::timefun::MatrixSignal::zeros(2, 2),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(2, 1),
            1,
            Arc::new(|_, _, _| DVector::zeros(2)),
            0.0,
            0.1,
            0.1,
        )
        .unwrap();
        let sc = Scenario::new("zero", spec, DVector::from_vec(vec![0.3, -2.0]), 1.0);
        let x = integrate_plant(&sc, 0.0, &sc.x0, 1e-3).unwrap();
        assert_eq!(x, sc.x0);
    }

    fn free_oscillator() -> Scenario {
        let spec = SampledPlantSpec::new(
            crate::timefun::MatrixSignal::constant(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(2, 1),
            1,
            Arc::new(|_, _, _| DVector::zeros(2)),
            0.0,
            0.1,
            0.1,
        )
        .unwrap();
        Scenario::new("osc", spec, DVector::from_vec(vec![1.0, 0.0]), 2.0)
    }

    fn rk4_error(h: f64) -> f64 {
        let sc = free_oscillator();
        let mut x = sc.x0.clone();
        let steps = (2.0 / h).round() as usize;
        for k in 0..steps {
            x = integrate_plant(&sc, k as f64 * h, &x, h).unwrap();
        }
        (x - DVector::from_vec(vec![2f64.cos(), -(2f64.sin())])).amax()
    }

    #[test]
    fn oscillator_matches_closed_form() {
        assert!(rk4_error(1e-3) < 1e-9);
        let ratio = rk4_error(0.04) / rk4_error(0.02);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn pendulum_energy_does_not_increase() {
        let sc = presets::tv_pendulum(0.02, 0.0).unwrap();
        let p = plants::PendulumParams::default();
        let energy = |x: &DVector<f64>| 0.5 * p.mass * p.length * x[1] * x[1] + p.mass * p.gravity * (1.0 - x[0].cos());
        let mut x = DVector::from_vec(vec![1.0, 0.5]);
        let mut e = energy(&x);
        for k in 0..5000 {
            x = integrate_plant(&sc, k as f64 * 1e-3, &x, 1e-3).unwrap();
            let e1 = energy(&x);
            assert!(e1 <= e + 1e-12);
            e = e1;
        }
    }

    #[test]
    fn zero_noise_snr_is_infinite() {
        let mut sc = free_oscillator();
        sc.t_end = 0.5;
        sc.kernel = KernelConfig::baseline(0.2);
        let tr = run(&sc).unwrap();
        assert!(metrics(&tr).snr_db.is_infinite());
        assert_eq!(tr.status(), &TraceStatus::Completed);
    }

    #[test]
    fn runs_are_deterministic() {
        let mut sc = presets::lti_oscillator(0.22).unwrap();
        sc.t_end = 3.0;
        sc.noise.seed = 42;
        sc.kernel.optimize = false;
        let design = Design::prepare(&sc).unwrap();
        let a = run_with_design(&sc, &design).unwrap();
        let b = run_with_design(&sc, &design).unwrap();
        let csv = |t: &Trace| {
            let mut buf = Vec::new();
            t.write_csv(&mut buf).unwrap();
            String::from_utf8(buf).unwrap()
        };
        let text = csv(&a);
        assert_eq!(text, csv(&b));
        assert!(text.starts_with("t,x1,x2,y,y_tilde,sample,y_hat,z1,z2,z_hat1,z_hat2,x_hat1,x_hat2,e_y,ex_norm"));
        assert_eq!(text.lines().count(), a.len() + 1);
    }

    #[test]
    fn horizon_must_be_a_multiple_of_the_step() {
        let mut sc = free_oscillator();
        sc.step = 0.003;
        assert!(Design::prepare(&sc).is_err());
    }
}
