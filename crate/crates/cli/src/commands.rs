//! Subcommand implementations. Each returns an exit status.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use mfobs::kernel::hermite_umf;
use mfobs::ocf::strong_observability_check;
use mfobs::sampled::{bound_envelopes, sup_ey_init, EnvelopeInputs, StabilityReport};
use mfobs::sim::{metrics, parse_rate, run_with_design, Design, Scenario, Trace, TraceStatus};
use mfobs::timefun::GridSpec;
use mfobs::Error;
use rayon::prelude::*;
use serde_json::json;

use crate::config::Config;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CRITERION: u8 = 2;
pub const EXIT_OBSERVABILITY: u8 = 3;
pub const EXIT_DIVERGENCE: u8 = 4;

/// Error carrying the process exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::ObservabilityDegeneracy { .. } => EXIT_OBSERVABILITY,
            Error::CriterionViolated { .. } => EXIT_CRITERION,
            Error::PredictorDivergence { .. } | Error::PlantDivergence { .. } => EXIT_DIVERGENCE,
            _ => EXIT_FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new(EXIT_FAILURE, e.to_string())
    }
}

pub type Outcome = Result<u8, Failure>;

fn out_dir(cfg: &Config) -> Result<PathBuf, Failure> {
    let dir = PathBuf::from(cfg.output.dir.clone().unwrap_or_else(|| "mfobs-out".into()));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn check_order(cfg: &Config, sc: &Scenario) -> Result<(), Failure> {
    match cfg.kernel.order {
        Some(n) if n != sc.plant.n() => Err(Failure::new(
            EXIT_FAILURE,
            format!("kernel.order = {n} does not match the plant order {}", sc.plant.n()),
        )),
        _ => Ok(()),
    }
}

/// Designs kernel and report, applying any configured gain override.
pub fn design(cfg: &Config, sc: &Scenario) -> Result<Design, Failure> {
    check_order(cfg, sc)?;
    let mut d = Design::prepare(sc)?;
    let g = &cfg.gains;
    if !g.is_empty() {
        let r = &d.report;
        d.report = r.with_gains(
            g.eta_bar_a.unwrap_or(r.eta_bar_a),
            g.eta_bar_phi.unwrap_or(r.eta_bar_phi),
            g.eta_bar_d.unwrap_or(r.eta_bar_d),
        );
    }
    Ok(d)
}

fn coefficient_grid(sc: &Scenario) -> Result<GridSpec, Failure> {
    let end = sc.period.unwrap_or(sc.t_end.max(sc.kernel.horizon));
    Ok(GridSpec::new(0.0, end, sc.grid_step)?)
}

pub fn check(cfg: &Config, sc: &Scenario, json_out: bool) -> Outcome {
    let plant = sc.plant.linear_part()?;
    let grid = coefficient_grid(sc)?;
    let obs = strong_observability_check(&plant, &grid)?;
    if !obs.passed {
        return Err(Failure::new(
            EXIT_OBSERVABILITY,
            format!(
                "observability degeneracy: min |det O| = {:e} at t = {} (threshold {:e})",
                obs.delta_min, obs.t_at_min, obs.threshold
            ),
        ));
    }
    let d = design(cfg, sc)?;
    let r = &d.report;
    let verdict = if r.stable { "stable" } else { "criterion violated" };
    if json_out {
        let v = json!({
            "observability": { "det_min": obs.delta_min, "t_at_min": obs.t_at_min, "passed": obs.passed },
            "k1": r.k1, "k2": r.k2, "k3": r.k3,
            "eta_bar_a": r.eta_bar_a, "eta_bar_phi": r.eta_bar_phi, "eta_bar_d": r.eta_bar_d,
            "l_phi": r.l_phi, "horizon": r.horizon, "t_bar": r.t_bar,
            "lambda": r.lambda, "product": r.product, "t_max_feasible": r.t_max_feasible,
            "margin": r.margin, "stable": r.stable, "verdict": verdict,
            "p_norm": d.p_norm,
            "j_baseline": d.kernel.j_baseline, "j_kernel": d.kernel.j_kernel,
            "config": cfg,
        });
        println!("{}", serde_json::to_string_pretty(&v).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?);
    } else {
        println!("plant: {}", sc.name);
        println!(
            "observability: min |det O| = {} at t = {} on [{}, {}]",
            obs.delta_min,
            obs.t_at_min,
            grid.t_start(),
            grid.t_end()
        );
        println!("K1 = {}\nK2 = {}\nK3 = {}", r.k1, r.k2, r.k3);
        println!(
            "eta_bar_a = {}\neta_bar_phi = {}\neta_bar_d = {}\nL_phi = {}",
            r.eta_bar_a, r.eta_bar_phi, r.eta_bar_d, r.l_phi
        );
        println!("||P|| = {}", d.p_norm);
        println!("J baseline = {}\nJ kernel = {}", d.kernel.j_baseline, d.kernel.j_kernel);
        if let Some(w) = &d.kernel.warning {
            println!("warning: {w}");
        }
        println!("lambda = {}", r.lambda);
        println!("T_bar = {}\nT_bar*lambda = {}", r.t_bar, r.product);
        println!("1/lambda = {}\nmargin = {}", r.t_max_feasible, r.margin);
        println!("verdict: {verdict} at T_bar = {}", r.t_bar);
        println!("\n# resolved config\n{}", cfg.echo());
    }
    Ok(if r.stable { EXIT_OK } else { EXIT_CRITERION })
}

pub fn kernel(cfg: &Config, sc: &Scenario) -> Outcome {
    let dir = out_dir(cfg)?;
    let order = cfg.kernel.order.unwrap_or(sc.plant.n());
    let mut report = String::new();
    if order == sc.plant.n() {
        let d = design(cfg, sc)?;
        let k = &d.kernel.kernel;
        fs::write(dir.join("kernel.csv"), k.to_csv(sc.step)?)?;
        let g = &d.gains;
        let mut csv = String::from("t,eta_a,eta_phi,eta_d,l2_a,l2_phi,l2_d\n");
        for (j, t) in g.t_grid.iter().enumerate() {
            let c = &g.curves;
            csv.push_str(&format!(
                "{t},{},{},{},{},{},{}\n",
                c.eta_a[j], c.eta_phi[j], c.eta_d[j], c.l2_a[j], c.l2_phi[j], c.l2_d[j]
            ));
        }
        fs::write(dir.join("gains.csv"), csv)?;
        report.push_str(&format!(
            "order = {order}\nhorizon = {}\nextra_degree = {}\nfree = {:?}\ncondition = {:e}\n",
            k.horizon(),
            k.extra_degree(),
            k.free_parameters(),
            k.condition_estimate()
        ));
        report.push_str(&format!(
            "eta_bar_a = {}\neta_bar_phi = {}\neta_bar_d = {}\n",
            g.eta_bar_a, g.eta_bar_phi, g.eta_bar_d
        ));
        report.push_str(&format!("J before = {}\nJ after = {}\n", d.kernel.j_baseline, d.kernel.j_kernel));
        if let Some(w) = &d.kernel.warning {
            report.push_str(&format!("warning: {w}\n"));
        }
        report.push_str(&boundary_line(k.boundary_residual()));
    } else {
        let base = hermite_umf(order, sc.kernel.horizon, sc.kernel.extra_degree)?;
        let k = match &sc.kernel.free {
            Some(f) => base.with_free_parameters(f)?,
            None => base,
        };
        fs::write(dir.join("kernel.csv"), k.to_csv(sc.step)?)?;
        report.push_str(&format!(
            "order = {order}\nhorizon = {}\nextra_degree = {}\nfree = {:?}\ncondition = {:e}\n",
            k.horizon(),
            k.extra_degree(),
            k.free_parameters(),
            k.condition_estimate()
        ));
        report.push_str("gains: not computed (kernel order differs from the plant order)\n");
        report.push_str(&boundary_line(k.boundary_residual()));
    }
    print!("{report}");
    fs::write(dir.join("kernel-report.txt"), format!("{report}\n# resolved config\n{}", cfg.echo()))?;
    Ok(EXIT_OK)
}

fn boundary_line(residual: f64) -> String {
    let verdict = if residual <= 1e-12 { "PASS" } else { "FAIL" };
    format!("boundary check: {verdict} (max residual {residual:e})\n")
}

fn write_trace(dir: &Path, stem: &str, tr: &Trace, cfg: &Config) -> Result<(), Failure> {
    let file = fs::File::create(dir.join(format!("{stem}.csv")))?;
    tr.write_csv(std::io::BufWriter::new(file))?;
    fs::write(
        dir.join(format!("{stem}.meta")),
        format!("{}[config]\n{}", tr.sidecar(), cfg.echo()),
    )?;
    Ok(())
}

fn summary_line(label: &str, tr: &Trace) -> String {
    let m = metrics(tr);
    let status = match tr.status() {
        TraceStatus::Completed => "completed".to_string(),
        TraceStatus::Diverged { t, reason } => format!("diverged at t = {t} ({reason})"),
    };
    format!(
        "{label}: status = {status}, snr_db = {:.2}, steady ||e_x|| = {:.3e}, max ||e_x|| = {:.3e}, \
         sup_ey_init = {:.4}, alpha_x = {:.4}, envelope violations e_y {}/{} e_x {}/{}",
        m.snr_db,
        m.steady_ex,
        m.max_ex,
        tr.sup_ey_init,
        tr.alpha_x,
        m.ey_violations,
        m.ey_checked,
        m.ex_violations,
        m.ex_checked
    )
}

pub struct Sweep {
    pub h_levels: Vec<f64>,
    pub seeds: usize,
}

pub fn simulate(cfg: &Config, sc: &Scenario, sweep: &Sweep) -> Outcome {
    let dir = out_dir(cfg)?;
    let d = design(cfg, sc)?;
    if !d.report.stable {
        eprintln!("criterion violated (T_bar*lambda = {}); no envelope", d.report.product);
    }
    let mut jobs: Vec<(String, Config, Scenario)> = Vec::new();
    if sweep.h_levels.is_empty() && sweep.seeds == 0 {
        jobs.push(("trace".into(), cfg.clone(), sc.clone()));
    } else {
        let levels: Vec<Option<f64>> = if sweep.h_levels.is_empty() {
            vec![None]
        } else {
            sweep.h_levels.iter().copied().map(Some).collect()
        };
        let seeds: Vec<Option<u64>> = if sweep.seeds == 0 {
            vec![None]
        } else {
            (0..sweep.seeds as u64).map(Some).collect()
        };
        for h in &levels {
            for s in &seeds {
                let mut c = cfg.clone();
                let mut stem = String::from("trace");
                if let Some(h) = h {
                    c.plant.h_level = Some(*h);
                    stem.push_str(&format!("-h{h}"));
                }
                if let Some(s) = s {
                    c.noise.seed = Some(*s);
                    stem.push_str(&format!("-seed{s}"));
                }
                let scenario = c.resolve().map_err(|e| Failure::new(EXIT_FAILURE, e))?;
                jobs.push((stem, c, scenario));
            }
        }
    }
    let results: Vec<Result<(String, Trace, Config), Failure>> = jobs
        .into_par_iter()
        .map(|(stem, c, s)| {
            let tr = run_with_design(&s, &d)?;
            write_trace(&dir, &stem, &tr, &c)?;
            Ok((stem, tr, c))
        })
        .collect();
    let mut diverged = false;
    for r in results {
        let (stem, tr, _) = r?;
        diverged |= tr.status().is_diverged();
        println!("{}", summary_line(&stem, &tr));
    }
    Ok(if diverged {
        EXIT_DIVERGENCE
    } else if !d.report.stable {
        EXIT_CRITERION
    } else {
        EXIT_OK
    })
}

/// Columns of a trace CSV by header name.
pub fn read_trace_csv(path: &Path) -> Result<HashMap<String, Vec<f64>>, Failure> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Failure::new(EXIT_FAILURE, format!("bad number {field:?} in column {}", headers[j])))?;
            cols[j].push(v);
        }
    }
    Ok(headers.into_iter().zip(cols).collect())
}

/// `key = value` pairs of a sidecar, up to the config echo.
pub fn read_sidecar(path: &Path) -> Result<HashMap<String, String>, Failure> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .take_while(|l| l.trim() != "[config]")
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

fn num(meta: &HashMap<String, String>, key: &str) -> Result<f64, Failure> {
    meta.get(key)
        .ok_or_else(|| Failure::new(EXIT_FAILURE, format!("sidecar lacks {key}")))?
        .parse()
        .map_err(|_| Failure::new(EXIT_FAILURE, format!("sidecar value {key} is not a number")))
}

fn column<'a>(cols: &'a HashMap<String, Vec<f64>>, name: &str) -> Result<&'a [f64], Failure> {
    cols.get(name)
        .map(Vec::as_slice)
        .ok_or_else(|| Failure::new(EXIT_FAILURE, format!("trace lacks column {name}")))
}

/// Report, envelope rows `[t, w, e_y bound, e_x bound]`, max deviation, e_y and e_x violations.
type Recomputed = (StabilityReport, Vec<[f64; 4]>, f64, usize, usize);

/// Envelope recomputation from a written trace. Returns the envelope columns and
/// the largest deviation from the in-run envelope columns (NaN positions must agree).
pub fn recompute_bounds(trace: &Path, meta: &Path) -> Result<Recomputed, Failure> {
    let cols = read_trace_csv(trace)?;
    let m = read_sidecar(meta)?;
    if m.get("status").map(String::as_str) == Some("diverged") {
        return Err(Failure::new(EXIT_DIVERGENCE, "trace is from a diverged run; no envelope"));
    }
    let report = StabilityReport::from_parts(
        num(&m, "k1")?,
        num(&m, "k2")?,
        num(&m, "k3")?,
        num(&m, "eta_bar_a")?,
        num(&m, "eta_bar_phi")?,
        num(&m, "eta_bar_d")?,
        num(&m, "l_phi")?,
        num(&m, "horizon")?,
        num(&m, "t_bar")?,
    );
    let rate = m
        .get("rate")
        .and_then(|r| parse_rate(r))
        .ok_or_else(|| Failure::new(EXIT_FAILURE, "sidecar lacks a valid rate"))?;
    let t = column(&cols, "t")?;
    let e_y = column(&cols, "e_y")?;
    let nu: Vec<f64> = column(&cols, "nu")?.iter().map(|v| v.abs()).collect();
    let d_norm = column(&cols, "d_norm")?;
    let sup0 = sup_ey_init(t, e_y, report.t_bar + report.horizon);
    let env = bound_envelopes(
        &report,
        num(&m, "p_norm")?,
        sup0,
        &EnvelopeInputs {
            times: t,
            step: num(&m, "step")?,
            nu: &nu,
            d_norm,
        },
        rate,
    )?;
    let mut dev = 0.0_f64;
    for (name, fresh) in [("w", &env.w), ("ey_env", &env.ey_env), ("ex_env", &env.ex_env)] {
        if let Some(old) = cols.get(name) {
            for (a, b) in old.iter().zip(fresh.iter()) {
                if a.is_nan() != b.is_nan() {
                    dev = f64::INFINITY;
                } else if !a.is_nan() {
                    dev = dev.max((a - b).abs());
                }
            }
        }
    }
    let ex = column(&cols, "ex_norm")?;
    let (mut vy, mut vx) = (0, 0);
    let rows: Vec<[f64; 4]> = (0..t.len())
        .map(|k| {
            if env.ey_env[k].is_finite() && e_y[k].abs() > env.ey_env[k] {
                vy += 1;
            }
            if env.ex_env[k].is_finite() && ex[k] > env.ex_env[k] {
                vx += 1;
            }
            [t[k], env.w[k], env.ey_env[k], env.ex_env[k]]
        })
        .collect();
    Ok((report, rows, dev, vy, vx))
}

pub fn bounds(cfg: &Config, sc: &Scenario, trace: Option<&Path>, meta: Option<&Path>) -> Outcome {
    let dir = out_dir(cfg)?;
    let (trace_path, meta_path) = match trace {
        Some(p) => (p.to_path_buf(), meta.map(Path::to_path_buf).unwrap_or_else(|| p.with_extension("meta"))),
        None => {
            let d = design(cfg, sc)?;
            if !d.report.stable {
                return Err(Failure::new(
                    EXIT_CRITERION,
                    format!("criterion violated (T_bar*lambda = {}); no envelope", d.report.product),
                ));
            }
            let tr = run_with_design(sc, &d)?;
            write_trace(&dir, "trace", &tr, cfg)?;
            println!("{}", summary_line("trace", &tr));
            if tr.status().is_diverged() {
                return Ok(EXIT_DIVERGENCE);
            }
            (dir.join("trace.csv"), dir.join("trace.meta"))
        }
    };
    let (report, rows, dev, vy, vx) = recompute_bounds(&trace_path, &meta_path)?;
    let mut csv = String::from("t,w,ey_env,ex_env\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r[0], r[1], r[2], r[3]));
    }
    fs::write(dir.join("envelope.csv"), csv)?;
    println!("T_bar*lambda = {}", report.product);
    println!("max deviation from in-run envelope = {dev:e}");
    println!("envelope violations: e_y {vy}, e_x {vx}");
    Ok(EXIT_OK)
}
