//! End-to-end workflows behind the `check`, `run` and `sweep` commands.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::certificate::{self, Certificate, Gains, LmiReport, ModeCertificate};
use crate::exec::Execution;
use crate::linalg::Matrix;
use crate::model::Model;
use crate::polytope::CellKind;
use crate::relation::{self, JointSystem, PairedRelation};
use crate::simulator::{
    self, BoundSummary, DecreaseSummary, ReferenceSchedule, Scenario, SimError, Trajectory,
};
use crate::Error;

/// Relations, joint system and a verified certificate for a model.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub model: Model,
    pub pairing: Vec<PairedRelation>,
    pub joint: JointSystem,
    pub certificate: Certificate,
    pub reports: Vec<LmiReport>,
    /// Slopes per joint mode, with `b` evaluated at zero sups.
    pub gains: Vec<Gains>,
    pub synthesized: bool,
}

impl Prepared {
    pub fn all_certified(&self) -> bool {
        self.pairing.iter().all(|p| p.map.is_certified()) && self.reports.iter().all(|r| r.feasible)
    }
}

fn complete_supplied(
    supplied: &[ModeCertificate],
    joint: &JointSystem,
) -> Result<Vec<ModeCertificate>, Error> {
    if supplied.len() != joint.modes().len() {
        return Err(Error::InvalidArgument(format!(
            "{} certificate blocks for {} joint modes",
            supplied.len(),
            joint.modes().len()
        )));
    }
    Ok(supplied
        .iter()
        .zip(joint.modes())
        .map(|(c, md)| {
            let rows = md.cell.e().rows();
            let pad = |m: &Matrix| {
                if m.rows() == 0 {
                    Matrix::zeros(rows, rows)
                } else {
                    m.clone()
                }
            };
            ModeCertificate {
                m: c.m.clone(),
                m_scalar: c.m_scalar,
                u: pad(&c.u),
                w: pad(&c.w),
                kind: md.kind,
            }
        })
        .collect())
}

/// Solves the relations, assembles the joint system, and synthesizes (or
/// verifies a supplied) certificate.
pub fn prepare(model: Model, exec: Execution) -> Result<Prepared, Error> {
    let (pairing, joint) =
        relation::build_joint(&model.system, &model.abstraction, &model.gains, exec)?;
    let cs = &model.file.certificate;
    let (certificate, reports, synthesized) = match &model.supplied_certificate {
        Some(supplied) => {
            let modes = complete_supplied(supplied, &joint)?;
            let cert = Certificate {
                kappa: cs.kappa,
                lambda: cs.lambda.expect("checked at load"),
                modes,
            };
            cert.validate()?;
            if let Some(t) = &cs.t {
                for (k, spec) in cs.modes.iter().enumerate() {
                    if let Some(j) = &spec.jbar {
                        if !certificate::check_factorization(&cert.modes[k].m_bar(), j, t)? {
                            return Err(Error::InvalidArgument(format!(
                                "certificate block {} does not factor as JᵀTJ",
                                k + 1
                            )));
                        }
                    }
                }
            }
            let reports = certificate::verify_certificate(&cert, &joint, exec)?;
            (cert, reports, false)
        }
        None => {
            let (cert, reports) =
                certificate::synthesize_certificate(&joint, cs.kappa, &cs.synthesis_options(), exec)?;
            (cert, reports, true)
        }
    };
    if let Some(k) = reports.iter().position(|r| !r.feasible) {
        return Err(certificate::CertificateError::InfeasibleCertificate { mode: k + 1 }.into());
    }
    let gains = exec
        .map_range(joint.modes().len(), |k| {
            certificate::compute_gains(
                &certificate.modes[k],
                certificate.lambda,
                &joint.modes()[k],
                0.0,
                0.0,
                0.0,
            )
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Prepared {
        model,
        pairing,
        joint,
        certificate,
        reports,
        gains,
        synthesized,
    })
}

/// Overrides applied on top of the model's scenario block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub t_end: Option<f64>,
    pub step: Option<f64>,
    pub seed: Option<u64>,
    /// Rescales the disturbance so its sup-norm equals this value.
    pub disturbance_sup: Option<f64>,
    pub kappa: Option<f64>,
}

/// Initial output error drawn uniformly from the disc of the given radius in
/// the first `k` coordinates.
fn sample_initial_error(seed: u64, radius: f64, n: usize, k: usize) -> Vec<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let k = k.min(n).max(1);
    let mut x = vec![0.0; n];
    loop {
        let cand: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        if cand.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            for (xi, c) in x.iter_mut().zip(cand) {
                *xi = radius * c;
            }
            return x;
        }
    }
}

pub fn build_scenario(prep: &Prepared, opts: &RunOptions) -> Result<Scenario, Error> {
    let model = &prep.model;
    let sc = &model.file.scenario;
    let n = model.system.n();
    let reference = ReferenceSchedule::new(
        sc.reference
            .iter()
            .map(|w| (w.t, w.value.clone()))
            .collect(),
    )?;
    let x_tilde = match (opts.seed, &sc.x_tilde_0) {
        (Some(seed), _) => Some(sample_initial_error(
            seed,
            sc.initial_radius.unwrap_or(0.1),
            n,
            model.system.k(),
        )),
        (None, Some(x)) => Some(x.clone()),
        (None, None) => None,
    };
    let x1_0 = match (&sc.x1_0, x_tilde) {
        (Some(x1), None) => x1.clone(),
        (_, xt) => {
            let xt = xt.unwrap_or_else(|| vec![0.0; n]);
            initial_concrete_state(prep, &xt, &sc.x2_0)?
        }
    };
    let disturbance = match opts.disturbance_sup {
        Some(s) => model.file.disturbance.with_sup_norm(s),
        None => model.file.disturbance.clone(),
    };
    let c_sup = model
        .system
        .modes()
        .iter()
        .map(|m| m.c_bound)
        .fold(0.0, f64::max);
    let certificate = match opts.kappa {
        Some(k) => prep.certificate.with_kappa(k),
        None => prep.certificate.clone(),
    };
    certificate.validate()?;
    Ok(Scenario {
        system: model.system.clone(),
        abstraction: model.abstraction.clone(),
        joint: prep.joint.clone(),
        certificate,
        gains: prep.gains.clone(),
        disturbance,
        reference,
        x1_0,
        x2_0: sc.x2_0.clone(),
        t_end: opts.t_end.unwrap_or(sc.t_end),
        step: opts.step.unwrap_or(sc.step),
        c_sup,
        x2_sup: sc.x2_sup,
    })
}

/// `x₁₀ = x̃₀ + P x₂₀` using the first joint mode whose concrete cell
/// contains the result.
fn initial_concrete_state(prep: &Prepared, x_tilde: &[f64], x2: &[f64]) -> Result<Vec<f64>, Error> {
    let cells = prep.model.system.partition().cells();
    for md in prep.joint.modes() {
        let px2 = md.p.mul_vec(x2)?;
        let x1: Vec<f64> = x_tilde.iter().zip(&px2).map(|(a, b)| a + b).collect();
        if cells[md.i].contains(&x1, crate::polytope::MEMBERSHIP_SLACK) {
            return Ok(x1);
        }
    }
    Err(SimError::InvalidScenario("initial state lies in no certified cell".into()).into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RelationRow {
    pub mode: usize,
    pub paired_with: usize,
    pub residual: f64,
    pub tolerance: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LmiRow {
    pub mode_i: usize,
    pub mode_j: usize,
    pub kind: CellKind,
    pub output_margin: f64,
    pub cell_margin: f64,
    pub decay_margin: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GainRow {
    pub mode_i: usize,
    pub mode_j: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub sqrt_m: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub samples: usize,
    pub bounds: BoundSummary,
    pub decrease: DecreaseSummary,
}

/// Summary of a check or run; every number is derivable from the model and
/// the emitted CSVs.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub model: String,
    pub certificate_synthesized: bool,
    pub kappa: f64,
    pub lambda: f64,
    pub relations: Vec<RelationRow>,
    pub lmi: Vec<LmiRow>,
    pub gains: Vec<GainRow>,
    pub simulation: Option<SimulationSummary>,
    pub verdict: Verdict,
    pub files: Vec<String>,
}

impl RunReport {
    pub fn from_prepared(prep: &Prepared) -> Self {
        let relations = prep
            .pairing
            .iter()
            .enumerate()
            .map(|(i, p)| RelationRow {
                mode: i + 1,
                paired_with: p.j + 1,
                residual: p.map.residual,
                tolerance: p.map.tolerance,
                certified: p.map.is_certified(),
            })
            .collect();
        let lmi = prep
            .joint
            .modes()
            .iter()
            .zip(&prep.reports)
            .map(|(md, r)| LmiRow {
                mode_i: md.i + 1,
                mode_j: md.j + 1,
                kind: md.kind,
                output_margin: r.output_margin,
                cell_margin: r.cell_margin,
                decay_margin: r.decay_margin,
                feasible: r.feasible,
            })
            .collect();
        let gains = prep
            .joint
            .modes()
            .iter()
            .zip(&prep.gains)
            .map(|(md, g)| GainRow {
                mode_i: md.i + 1,
                mode_j: md.j + 1,
                gamma1: g.gamma1,
                gamma2: g.gamma2,
                gamma3: g.gamma3,
                sqrt_m: g.sqrt_m,
            })
            .collect();
        Self {
            model: prep.model.name.clone(),
            certificate_synthesized: prep.synthesized,
            kappa: prep.certificate.kappa,
            lambda: prep.certificate.lambda,
            relations,
            lmi,
            gains,
            simulation: None,
            verdict: if prep.all_certified() {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
            files: Vec::new(),
        }
    }

    pub fn attach_trajectory(&mut self, traj: &Trajectory) {
        let bounds = traj.bound_summary();
        self.kappa = traj.kappa;
        self.verdict = if bounds.pass() {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        self.simulation = Some(SimulationSummary {
            samples: traj.samples.len(),
            bounds,
            decrease: traj.decrease_summary(),
        });
    }

    /// Human-readable multi-line summary.
    pub fn render(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "model: {}", self.model);
        let _ = writeln!(
            s,
            "certificate: {} (kappa = {}, lambda = {:.6e})",
            if self.certificate_synthesized { "synthesized" } else { "supplied" },
            self.kappa,
            self.lambda
        );
        for r in &self.relations {
            let _ = writeln!(
                s,
                "relation mode {} -> {}: residual {:.3e} (tol {:.3e}) {}",
                r.mode,
                r.paired_with,
                r.residual,
                r.tolerance,
                if r.certified { "ok" } else { "UNCERTIFIED" }
            );
        }
        for r in &self.lmi {
            let _ = writeln!(
                s,
                "lmi ({}, {}) {:?}: output {:+.3e} cell {:+.3e} decay {:+.3e} {}",
                r.mode_i,
                r.mode_j,
                r.kind,
                r.output_margin,
                r.cell_margin,
                r.decay_margin,
                if r.feasible { "feasible" } else { "INFEASIBLE" }
            );
        }
        for g in &self.gains {
            let _ = writeln!(
                s,
                "gains ({}, {}): gamma1 {:.4e} gamma2 {:.4e} gamma3 {:.4e} sqrt_m {:.4}",
                g.mode_i, g.mode_j, g.gamma1, g.gamma2, g.gamma3, g.sqrt_m
            );
        }
        if let Some(sim) = &self.simulation {
            let b = &sim.bounds;
            let d = &sim.decrease;
            let _ = writeln!(
                s,
                "samples: {}  max |e|: {:.6e}  max V: {:.6e}  max delta: {:.6e}",
                sim.samples, b.max_err, b.max_v, b.max_delta
            );
            let _ = writeln!(
                s,
                "bound chain violations: output {} / bound {}",
                b.output_violations, b.bound_violations
            );
            let _ = writeln!(
                s,
                "decrease checks: {} samples, {} violations, {} invariance violations, {} switching steps",
                d.checked, d.decrease_violations, d.invariance_violations, d.switches
            );
        }
        for f in &self.files {
            let _ = writeln!(s, "wrote {f}");
        }
        let _ = writeln!(s, "verdict: {}", self.verdict);
        s
    }
}

fn load(path: &Path, exec: Option<Execution>) -> Result<(Model, Execution), Error> {
    let model = Model::load(path)?;
    let exec = exec.unwrap_or(model.file.execution);
    Ok((model, exec))
}

/// `exec` overrides the model's `execution` setting when given.
pub fn cmd_check(path: &Path, exec: Option<Execution>) -> Result<RunReport, Error> {
    let (model, exec) = load(path, exec)?;
    let prep = prepare(model, exec)?;
    Ok(RunReport::from_prepared(&prep))
}

/// Writes the trajectory, bound series, optional plot data and report into
/// `out_dir`; returns the written paths.
pub fn write_outputs(
    out_dir: &Path,
    traj: &Trajectory,
    report: &mut RunReport,
    plot_data: bool,
) -> Result<(), Error> {
    std::fs::create_dir_all(out_dir).map_err(|source| SimError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut files: Vec<(PathBuf, String)> = vec![
        (out_dir.join("trajectory.csv"), simulator::trajectory_csv(traj)),
        (out_dir.join("bounds.csv"), simulator::bounds_csv(traj)),
    ];
    if plot_data {
        let kappa = traj.kappa;
        let series: [(&str, Box<dyn Fn(&simulator::Sample) -> (f64, f64)>); 6] = [
            ("err.dat", Box::new(|s| (s.t, s.err))),
            ("kappaV.dat", Box::new(move |s| (s.t, kappa * s.v))),
            ("delta.dat", Box::new(|s| (s.t, s.delta))),
            ("V.dat", Box::new(|s| (s.t, s.v))),
            ("y1.dat", Box::new(|s| (s.x1[0], s.x1.get(1).copied().unwrap_or(0.0)))),
            ("y2.dat", Box::new(|s| (s.x2[0], s.x2.get(1).copied().unwrap_or(0.0)))),
        ];
        for (name, f) in series.iter() {
            files.push((out_dir.join(name), simulator::plot_series(traj, f)));
        }
    }
    for (path, contents) in &files {
        simulator::write_atomic(path, contents)?;
        report.files.push(path.display().to_string());
    }
    let report_path = out_dir.join("report.json");
    report.files.push(report_path.display().to_string());
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    simulator::write_atomic(&report_path, &(json + "\n"))?;
    Ok(())
}

pub fn cmd_run(
    path: &Path,
    out_dir: &Path,
    opts: &RunOptions,
    plot_data: bool,
    exec: Option<Execution>,
) -> Result<(RunReport, Trajectory), Error> {
    let (model, exec) = load(path, exec)?;
    let prep = prepare(model, exec)?;
    let scenario = build_scenario(&prep, opts)?;
    let traj = simulator::run_scenario(&scenario)?;
    let mut report = RunReport::from_prepared(&prep);
    report.attach_trajectory(&traj);
    write_outputs(out_dir, &traj, &mut report, plot_data)?;
    Ok((report, traj))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    DisturbanceAmplitude,
    Kappa,
    Step,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "disturbance-amplitude" => Ok(SweepParam::DisturbanceAmplitude),
            "kappa" => Ok(SweepParam::Kappa),
            "step" => Ok(SweepParam::Step),
            other => Err(Error::UnknownParameter(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub max_err: f64,
    pub max_v: f64,
    pub max_delta: f64,
    pub verdict: Verdict,
    /// `‖x₁(T) − x₁ᶠⁱʳˢᵗ(T)‖_∞` against the first sweep point.
    pub terminal_diff: f64,
    pub terminal_x1: Vec<f64>,
}

pub fn sweep_prepared(
    prep: &Prepared,
    param: SweepParam,
    values: &[f64],
    exec: Execution,
) -> Result<Vec<SweepRow>, Error> {
    let runs = exec.map(values, |&v| -> Result<(f64, Trajectory), Error> {
        let opts = match param {
            SweepParam::DisturbanceAmplitude => RunOptions {
                disturbance_sup: Some(v),
                ..RunOptions::default()
            },
            SweepParam::Kappa => RunOptions {
                kappa: Some(v),
                ..RunOptions::default()
            },
            SweepParam::Step => RunOptions {
                step: Some(v),
                ..RunOptions::default()
            },
        };
        let sc = build_scenario(prep, &opts)?;
        Ok((v, simulator::run_scenario(&sc)?))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let first = runs
        .first()
        .and_then(|(_, t)| t.terminal())
        .map(|s| s.x1.clone())
        .unwrap_or_default();
    Ok(runs
        .iter()
        .map(|(v, traj)| {
            let b = traj.bound_summary();
            let term = traj.terminal().map(|s| s.x1.clone()).unwrap_or_default();
            let diff = term
                .iter()
                .zip(&first)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            SweepRow {
                value: *v,
                max_err: b.max_err,
                max_v: b.max_v,
                max_delta: b.max_delta,
                verdict: if b.pass() { Verdict::Pass } else { Verdict::Fail },
                terminal_diff: diff,
                terminal_x1: term,
            }
        })
        .collect())
}

pub fn cmd_sweep(
    path: &Path,
    param: SweepParam,
    values: &[f64],
    exec: Option<Execution>,
) -> Result<Vec<SweepRow>, Error> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one value".into()));
    }
    let (model, exec) = load(path, exec)?;
    let prep = prepare(model, exec)?;
    sweep_prepared(&prep, param, values, exec)
}

pub fn render_sweep(param: SweepParam, rows: &[SweepRow]) -> String {
    use std::fmt::Write as _;
    let name = match param {
        SweepParam::DisturbanceAmplitude => "disturbance-amplitude",
        SweepParam::Kappa => "kappa",
        SweepParam::Step => "step",
    };
    let mut s = format!(
        "{:>22} {:>14} {:>14} {:>14} {:>14} {:>7}\n",
        name, "max|e|", "maxV", "max_delta", "dx1(T)", "verdict"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>22} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.3e} {:>7}",
            r.value, r.max_err, r.max_v, r.max_delta, r.terminal_diff, r.verdict
        );
    }
    s
}
