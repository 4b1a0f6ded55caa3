//! Closed-loop hybrid simulation of the concrete plant tracking the
//! transformed abstraction, with per-sample simulation-function bookkeeping.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::certificate::{self, Certificate, CertificateError, Gains};
use crate::linalg::{self, LinalgError};
use crate::polytope::{Polyhedron, PolytopeError, MEMBERSHIP_SLACK};
use crate::relation::{JointSystem, RelationError};
use crate::systems::{Abstraction, DisturbanceSignal, PwaSystem};

/// Upper limit on bisection halvings per crossing.
pub const MAX_BISECTIONS: usize = 40;
/// Target width of a crossing bracket.
pub const CROSSING_BRACKET: f64 = 1e-12;
/// Upper limit on mode switches inside a single sample step.
pub const MAX_SWITCHES_PER_STEP: usize = 32;
/// Absolute tolerance of the bound-chain checks.
pub const BOUND_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("reference schedule has no waypoints")]
    EmptySchedule,
    #[error("reference times must start at 0 and strictly increase (offending index {0})")]
    NonMonotoneTimes(usize),
    #[error("simulation horizon {t_end} with step {step} yields no samples beyond t = 0")]
    EmptyTrajectory { t_end: f64, step: f64 },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("state became non-finite at t = {0}")]
    NonFiniteState(f64),
    #[error("state left every cell at t = {t}: {source}")]
    NoCell { t: f64, source: PolytopeError },
    #[error("pair (concrete {i}, abstraction {j}) at t = {t} has no certified relation")]
    UncertifiedMode { i: usize, j: usize, t: f64 },
    #[error("more than {MAX_SWITCHES_PER_STEP} mode switches within one step at t = {0}")]
    TooManySwitches(f64),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Classical four-stage Runge–Kutta step of `ẋ = f(t, x)`.
pub fn step_rk4<F>(mut f: F, x: &[f64], t: f64, h: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    f(t, x, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    f(t + 0.5 * h, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    f(t + 0.5 * h, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    f(t + h, &tmp, &mut k4);
    let out: Vec<f64> = (0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(SimError::NonFiniteState(t + h))
    }
}

/// Piecewise-constant, right-continuous reference `ū₂(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSchedule {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl ReferenceSchedule {
    pub fn new(waypoints: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(SimError::EmptySchedule);
        }
        if waypoints[0].0 != 0.0 {
            return Err(SimError::NonMonotoneTimes(0));
        }
        for k in 1..waypoints.len() {
            if !(waypoints[k].0 > waypoints[k - 1].0) || !waypoints[k].0.is_finite() {
                return Err(SimError::NonMonotoneTimes(k));
            }
        }
        let dim = waypoints[0].1.len();
        if let Some(k) = waypoints.iter().position(|(_, v)| v.len() != dim) {
            return Err(SimError::InvalidScenario(format!(
                "waypoint {k} has {} entries, expected {dim}",
                waypoints[k].1.len()
            )));
        }
        let (times, values) = waypoints.into_iter().unzip();
        Ok(Self { times, values })
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn value(&self, t: f64) -> &[f64] {
        let k = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        &self.values[k]
    }

    /// `max_k ‖v_k‖_∞`.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| linalg::norm_inf(v))
            .fold(0.0, f64::max)
    }

    /// Switch times strictly inside `(t0, t1)`.
    pub fn switches_in(&self, t0: f64, t1: f64) -> impl Iterator<Item = f64> + '_ {
        self.times.iter().copied().filter(move |&s| s > t0 && s < t1)
    }

    pub fn waypoints(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.times.iter().copied().zip(self.values.iter().map(Vec::as_slice))
    }
}

/// Everything needed for one closed-loop run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub system: PwaSystem,
    pub abstraction: Abstraction,
    pub joint: JointSystem,
    pub certificate: Certificate,
    /// Gain slopes per joint mode (the `b` values inside are recomputed).
    pub gains: Vec<Gains>,
    pub disturbance: DisturbanceSignal,
    pub reference: ReferenceSchedule,
    pub x1_0: Vec<f64>,
    pub x2_0: Vec<f64>,
    pub t_end: f64,
    pub step: f64,
    /// Declared disturbance bound used in `b`.
    pub c_sup: f64,
    /// Static `‖x₂‖_∞` bound; the running maximum is used when absent.
    pub x2_sup: Option<f64>,
}

/// One recorded sample. Mode indices are zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub x_tilde: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2bar: Vec<f64>,
    pub mode_i: usize,
    pub mode_j: usize,
    pub err: f64,
    pub v: f64,
    pub b: f64,
    pub delta: f64,
    /// Analytic `V̇` at the sample; `NaN` when `V` is too small.
    pub v_dot: f64,
    /// Whether a mode switch happens before the next sample.
    pub switch_ahead: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub kappa: f64,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub samples: Vec<Sample>,
}

/// Per-sample bound-chain violations `‖e‖ ≤ κV + tol` and `κV ≤ δ + tol`.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct BoundSummary {
    pub max_err: f64,
    pub max_v: f64,
    pub max_delta: f64,
    pub output_violations: usize,
    pub bound_violations: usize,
}

impl BoundSummary {
    pub fn pass(&self) -> bool {
        self.output_violations == 0 && self.bound_violations == 0
    }
}

impl Trajectory {
    pub fn bound_summary(&self) -> BoundSummary {
        let mut s = BoundSummary::default();
        for smp in &self.samples {
            let kv = self.kappa * smp.v;
            s.max_err = s.max_err.max(smp.err);
            s.max_v = s.max_v.max(smp.v);
            s.max_delta = s.max_delta.max(smp.delta);
            if smp.err > kv + BOUND_TOLERANCE {
                s.output_violations += 1;
            }
            if kv > smp.delta + BOUND_TOLERANCE {
                s.bound_violations += 1;
            }
        }
        s
    }

    pub fn terminal(&self) -> Option<&Sample> {
        self.samples.last()
    }

    /// Decrease of `V` outside the bound and invariance of `{V ≤ b}` between
    /// mode switches.
    pub fn decrease_summary(&self) -> DecreaseSummary {
        let mut s = DecreaseSummary::default();
        let mut entered = false;
        for (k, smp) in self.samples.iter().enumerate() {
            let new_run = k == 0
                || self.samples[k - 1].switch_ahead
                || (self.samples[k - 1].mode_i, self.samples[k - 1].mode_j) != (smp.mode_i, smp.mode_j);
            if new_run {
                entered = false;
                s.segments += 1;
            }
            if entered && smp.v > smp.b + BOUND_TOLERANCE {
                s.invariance_violations += 1;
            }
            if smp.v <= smp.b {
                entered = true;
            }
            if smp.v > smp.b && !smp.switch_ahead && smp.v_dot.is_finite() {
                s.checked += 1;
                s.max_v_dot = s.max_v_dot.max(smp.v_dot);
                if smp.v_dot > BOUND_TOLERANCE {
                    s.decrease_violations += 1;
                }
            }
            if smp.switch_ahead {
                s.switches += 1;
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DecreaseSummary {
    /// Samples with `V > b` and no switch ahead.
    pub checked: usize,
    pub decrease_violations: usize,
    pub invariance_violations: usize,
    pub max_v_dot: f64,
    pub segments: usize,
    /// Sample steps containing at least one mode switch.
    pub switches: usize,
}

impl Default for DecreaseSummary {
    fn default() -> Self {
        Self {
            checked: 0,
            decrease_violations: 0,
            invariance_violations: 0,
            max_v_dot: f64::NEG_INFINITY,
            segments: 0,
            switches: 0,
        }
    }
}

impl DecreaseSummary {
    pub fn pass(&self) -> bool {
        self.decrease_violations == 0 && self.invariance_violations == 0
    }
}

/// Number of samples `⌊t_end/h⌋ + 1`, with a small guard against rounding.
pub fn sample_count(t_end: f64, step: f64) -> usize {
    (t_end / step + 1e-9).floor() as usize + 1
}

struct Active {
    i: usize,
    j: usize,
    joint: usize,
}

struct Runner<'a> {
    sc: &'a Scenario,
    n: usize,
}

impl<'a> Runner<'a> {
    fn cell_c(&self, j: usize) -> Option<&'a Polyhedron> {
        match &self.sc.abstraction {
            Abstraction::Linear(_) => None,
            Abstraction::Pwa(p) => p.concrete_space_cells().get(j),
        }
    }

    fn paired_j(&self, i: usize) -> Option<usize> {
        self.sc
            .joint
            .modes()
            .iter()
            .find(|md| md.i == i)
            .map(|md| md.j)
    }

    /// Abstraction mode at `x₁`: the pairing of `i` if it qualifies, then
    /// the previous mode, then the lowest qualifying index.
    fn locate_j(&self, x1: &[f64], i: usize, previous: Option<usize>) -> std::result::Result<usize, PolytopeError> {
        let cells = match &self.sc.abstraction {
            Abstraction::Linear(_) => return Ok(0),
            Abstraction::Pwa(p) => p.concrete_space_cells(),
        };
        let ok = |j: usize| cells[j].contains(x1, MEMBERSHIP_SLACK);
        if let Some(j) = self.paired_j(i).filter(|&j| ok(j)) {
            return Ok(j);
        }
        if let Some(j) = previous.filter(|&j| ok(j)) {
            return Ok(j);
        }
        (0..cells.len())
            .find(|&j| ok(j))
            .ok_or_else(|| PolytopeError::NoCell(x1.to_vec()))
    }

    fn locate(&self, x1: &[f64], t: f64, prev: Option<&Active>) -> Result<Active> {
        let part = self.sc.system.partition();
        let i = part
            .locate_mode(x1, prev.map(|a| a.i))
            .map_err(|source| SimError::NoCell { t, source })?;
        let j = self
            .locate_j(x1, i, prev.map(|a| a.j))
            .map_err(|source| SimError::NoCell { t, source })?;
        let joint = self
            .sc
            .joint
            .index_of(i, j)
            .ok_or(SimError::UncertifiedMode { i: i + 1, j: j + 1, t })?;
        Ok(Active { i, j, joint })
    }

    fn still_inside(&self, act: &Active, x1: &[f64]) -> bool {
        let inside_i = self.sc.system.partition().cells()[act.i].contains(x1, MEMBERSHIP_SLACK);
        inside_i
            && self
                .cell_c(act.j)
                .is_none_or(|c| c.contains(x1, MEMBERSHIP_SLACK))
    }

    /// Vector field of `z = (x₁, x₂)` with the mode and `ū₂` frozen.
    fn field(&self, act: &Active, u2bar: &[f64], t: f64, z: &[f64], out: &mut [f64]) {
        let n = self.n;
        let md = &self.sc.joint.modes()[act.joint];
        let mode = &self.sc.system.modes()[act.i];
        let abs = &self.sc.abstraction.modes()[act.j];
        let (x1, x2) = z.split_at(n);
        let px2 = md.p.mul_vec(x2).expect("P dimension checked at assembly");
        let xt: Vec<f64> = x1.iter().zip(&px2).map(|(a, b)| a - b).collect();
        let u1 = md
            .interface
            .apply(&xt, x2, u2bar)
            .expect("interface dimension checked at assembly");
        let ax = mode.a.mul_vec(x1).expect("checked");
        let bu = mode.b.mul_vec(&u1).expect("checked");
        let (o1, o2) = out.split_at_mut(n);
        self.sc.disturbance.value_into(t, o1);
        for k in 0..n {
            o1[k] += ax[k] + bu[k];
        }
        let lx = abs.l.mul_vec(x2).expect("checked");
        let u2: Vec<f64> = lx.iter().zip(u2bar).map(|(a, b)| a + b).collect();
        let fx = abs.f.mul_vec(x2).expect("checked");
        let gu = abs.g.mul_vec(&u2).expect("checked");
        for k in 0..o2.len() {
            o2[k] = fx[k] + gu[k];
        }
    }

    fn advance(&self, act: &Active, u2bar: &[f64], t: f64, z: &[f64], h: f64) -> Result<Vec<f64>> {
        if h == 0.0 {
            return Ok(z.to_vec());
        }
        step_rk4(|s, x, o| self.field(act, u2bar, s, x, o), z, t, h)
    }

    /// Integrates over `[ta, tb]` with a fixed `ū₂`, switching modes at
    /// bisected crossings.
    fn segment(
        &self,
        act: &mut Active,
        z: Vec<f64>,
        ta: f64,
        tb: f64,
        switches: &mut usize,
    ) -> Result<Vec<f64>> {
        let u2bar = self.sc.reference.value(0.5 * (ta + tb)).to_vec();
        let mut t = ta;
        let mut z = z;
        loop {
            let end = self.advance(act, &u2bar, t, &z, tb - t)?;
            if self.still_inside(act, &end[..self.n]) {
                return Ok(end);
            }
            let (mut lo, mut hi) = (t, tb);
            let mut z_hi = end;
            for _ in 0..MAX_BISECTIONS {
                if hi - lo <= CROSSING_BRACKET {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let zm = self.advance(act, &u2bar, t, &z, mid - t)?;
                if self.still_inside(act, &zm[..self.n]) {
                    lo = mid;
                } else {
                    hi = mid;
                    z_hi = zm;
                }
            }
            let z_lo = self.advance(act, &u2bar, t, &z, lo - t)?;
            let next = self.locate(&z_hi[..self.n], hi, Some(act))?;
            log::debug!(
                "switch at t = {lo:.12}: ({}, {}) -> ({}, {})",
                act.i + 1,
                act.j + 1,
                next.i + 1,
                next.j + 1
            );
            *switches += 1;
            if *switches > MAX_SWITCHES_PER_STEP {
                return Err(SimError::TooManySwitches(lo));
            }
            *act = next;
            t = lo;
            z = z_lo;
        }
    }

    fn record(&self, act: &Active, t: f64, z: &[f64], x2_sup: f64) -> Result<Sample> {
        let sc = self.sc;
        let n = self.n;
        let md = &sc.joint.modes()[act.joint];
        let mode = &sc.system.modes()[act.i];
        let abs = &sc.abstraction.modes()[act.j];
        let cert = &sc.certificate.modes[act.joint];
        let (x1, x2) = z.split_at(n);
        let px2 = md.p.mul_vec(x2)?;
        let x_tilde: Vec<f64> = x1.iter().zip(&px2).map(|(a, b)| a - b).collect();
        let u2bar = sc.reference.value(t).to_vec();
        let u1 = md.interface.apply(&x_tilde, x2, &u2bar)?;
        let y1 = mode.c.mul_vec(x1)?;
        let y2 = abs.h.mul_vec(x2)?;
        let e: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a - b).collect();
        let omega = cert.coords(&x_tilde, x2);
        let kappa = sc.certificate.kappa;
        let v = certificate::sim_fn_value(&cert.quad_matrix(), kappa, &omega)?;
        let gains = sc.gains[act.joint].with_sups(sc.reference.sup_norm(), sc.c_sup, x2_sup);
        let b = gains.bound(cert.kind);
        let delta = certificate::error_bound(kappa, &gains, v, cert.kind);
        let c_now = sc.disturbance.value(t);
        let v_dot = match certificate::sim_fn_derivative(cert, kappa, md, &omega, x2, &u2bar, &c_now) {
            Ok(d) => d,
            Err(CertificateError::DegenerateState(_)) => f64::NAN,
            Err(e) => return Err(e.into()),
        };
        Ok(Sample {
            t,
            x1: x1.to_vec(),
            x2: x2.to_vec(),
            x_tilde,
            u1,
            u2bar,
            mode_i: act.i,
            mode_j: act.j,
            err: linalg::norm2(&e),
            v,
            b,
            delta,
            v_dot,
            switch_ahead: false,
        })
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let n = self.system.n();
        let m = self.abstraction.m();
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(SimError::InvalidScenario(format!("step must be positive, got {}", self.step)));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() || sample_count(self.t_end, self.step) < 2 {
            return Err(SimError::EmptyTrajectory {
                t_end: self.t_end,
                step: self.step,
            });
        }
        if self.x1_0.len() != n || self.x2_0.len() != m {
            return Err(SimError::InvalidScenario(format!(
                "initial states have lengths ({}, {}), expected ({n}, {m})",
                self.x1_0.len(),
                self.x2_0.len()
            )));
        }
        if self.reference.dim() != self.abstraction.q() {
            return Err(SimError::InvalidScenario(format!(
                "reference has {} entries, abstraction input has {}",
                self.reference.dim(),
                self.abstraction.q()
            )));
        }
        if self.disturbance.dim() != n {
            return Err(SimError::InvalidScenario(format!(
                "disturbance has dimension {}, state has {n}",
                self.disturbance.dim()
            )));
        }
        let jm = self.joint.modes().len();
        if self.certificate.modes.len() != jm || self.gains.len() != jm {
            return Err(SimError::InvalidScenario(format!(
                "{} certificate modes and {} gain sets for {jm} joint modes",
                self.certificate.modes.len(),
                self.gains.len()
            )));
        }
        Ok(())
    }
}

/// Runs the closed loop from `t = 0` to `t_end` on the uniform grid `k·h`.
pub fn run_scenario(sc: &Scenario) -> Result<Trajectory> {
    sc.validate()?;
    let n = sc.system.n();
    let runner = Runner { sc, n };
    let count = sample_count(sc.t_end, sc.step);
    let mut z: Vec<f64> = sc.x1_0.iter().chain(&sc.x2_0).copied().collect();
    let mut act = runner.locate(&sc.x1_0, 0.0, None)?;
    let mut x2_sup = sc.x2_sup.unwrap_or(0.0);
    let running = sc.x2_sup.is_none();
    let mut samples = Vec::with_capacity(count);

    for k in 0..count {
        let t = k as f64 * sc.step;
        if running {
            x2_sup = x2_sup.max(linalg::norm_inf(&z[n..]));
        }
        samples.push(runner.record(&act, t, &z, x2_sup)?);
        if k + 1 == count {
            break;
        }
        let t_next = (k + 1) as f64 * sc.step;
        let mut cuts: Vec<f64> = vec![t];
        cuts.extend(sc.reference.switches_in(t, t_next));
        cuts.push(t_next);
        let mut switches = 0;
        for w in cuts.windows(2) {
            z = runner.segment(&mut act, z, w[0], w[1], &mut switches)?;
        }
        if switches > 0 {
            samples[k].switch_ahead = true;
        }
    }
    Ok(Trajectory {
        kappa: sc.certificate.kappa,
        n,
        m: sc.abstraction.m(),
        p: sc.system.p(),
        samples,
    })
}

fn fmt_num(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

/// CSV with columns `t,x1_*,x2_*,u1_*,mode_i,mode_j,err,V,b,delta`; modes
/// are written one-based.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::from("t");
    for k in 1..=traj.n {
        let _ = write!(out, ",x1_{k}");
    }
    for k in 1..=traj.m {
        let _ = write!(out, ",x2_{k}");
    }
    for k in 1..=traj.p {
        let _ = write!(out, ",u1_{k}");
    }
    out.push_str(",mode_i,mode_j,err,V,b,delta\n");
    for s in &traj.samples {
        fmt_num(&mut out, s.t);
        for v in s.x1.iter().chain(&s.x2).chain(&s.u1) {
            out.push(',');
            fmt_num(&mut out, *v);
        }
        let _ = write!(out, ",{},{}", s.mode_i + 1, s.mode_j + 1);
        for v in [s.err, s.v, s.b, s.delta] {
            out.push(',');
            fmt_num(&mut out, v);
        }
        out.push('\n');
    }
    out
}

/// CSV with columns `t,err,kappaV,delta`.
pub fn bounds_csv(traj: &Trajectory) -> String {
    let mut out = String::from("t,err,kappaV,delta\n");
    for s in &traj.samples {
        for (k, v) in [s.t, s.err, traj.kappa * s.v, s.delta].into_iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            fmt_num(&mut out, v);
        }
        out.push('\n');
    }
    out
}

/// Whitespace-separated two-column series for gnuplot.
pub fn plot_series(traj: &Trajectory, select: impl Fn(&Sample) -> (f64, f64)) -> String {
    let mut out = String::new();
    for s in &traj.samples {
        let (a, b) = select(s);
        fmt_num(&mut out, a);
        out.push(' ');
        fmt_num(&mut out, b);
        out.push('\n');
    }
    out
}

/// Writes `contents` through a temporary file in the same directory and
/// renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let io_err = |source| SimError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(contents.as_bytes()).map_err(io_err)?;
    tmp.flush().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub fn export_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    write_atomic(path, &trajectory_csv(traj))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_examples() {
        let x = step_rk4(|_, _, o| o.fill(0.0), &[3.0, -1.0], 0.0, 0.5).unwrap();
        assert_eq!(x, vec![3.0, -1.0]);
        let x = step_rk4(|_, x, o| o[0] = -x[0], &[1.0], 0.0, 0.1).unwrap();
        let h: f64 = 0.1;
        let poly = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((x[0] - poly).abs() < 1e-15);
        assert!((x[0] - 0.9048375).abs() < 1e-7);
        let x = step_rk4(|_, _, o| o[0] = 1.0, &[0.0], 0.0, 0.25).unwrap();
        assert_eq!(x, vec![0.25]);
        assert!(matches!(
            step_rk4(|_, _, o| o[0] = f64::INFINITY, &[0.0], 0.0, 0.1),
            Err(SimError::NonFiniteState(_))
        ));
    }

    #[test]
    fn schedule_examples() {
        let s = ReferenceSchedule::new(vec![(0.0, vec![1.0, -2.0])]).unwrap();
        assert_eq!(s.value(123.0), &[1.0, -2.0]);
        let s = ReferenceSchedule::new(vec![(0.0, vec![1.0]), (5.0, vec![-3.0])]).unwrap();
        assert_eq!(s.value(5.0), &[-3.0]);
        assert_eq!(s.value(4.999), &[1.0]);
        assert_eq!(s.sup_norm(), 3.0);
        assert!(matches!(ReferenceSchedule::new(vec![]), Err(SimError::EmptySchedule)));
        assert!(matches!(
            ReferenceSchedule::new(vec![(0.0, vec![1.0]), (0.0, vec![2.0])]),
            Err(SimError::NonMonotoneTimes(1))
        ));
        assert!(matches!(
            ReferenceSchedule::new(vec![(1.0, vec![1.0])]),
            Err(SimError::NonMonotoneTimes(0))
        ));
    }

    #[test]
    fn sample_counts() {
        assert_eq!(sample_count(12.0, 1e-3), 12_001);
        assert_eq!(sample_count(1.0, 0.3), 4);
        assert_eq!(sample_count(0.0, 0.1), 1);
    }

    fn tiny_trajectory(count: usize) -> Trajectory {
        let samples = (0..count)
            .map(|k| Sample {
                t: k as f64 * 0.1,
                x1: vec![1.0 / 3.0, k as f64],
                x2: vec![2.0],
                x_tilde: vec![0.0, 0.0],
                u1: vec![-1.5e-7],
                u2bar: vec![0.0],
                mode_i: 0,
                mode_j: 0,
                err: 0.25,
                v: 0.125,
                b: 0.5,
                delta: 1.0,
                v_dot: 0.0,
                switch_ahead: false,
            })
            .collect();
        Trajectory {
            kappa: 8.0,
            n: 2,
            m: 1,
            p: 1,
            samples,
        }
    }

    #[test]
    fn csv_shape_and_round_trip() {
        let csv = trajectory_csv(&tiny_trajectory(3));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "t,x1_1,x1_2,x2_1,u1_1,mode_i,mode_j,err,V,b,delta");
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields[1].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(fields[4].parse::<f64>().unwrap(), -1.5e-7);
        assert_eq!(fields[5], "1");
        let empty = trajectory_csv(&tiny_trajectory(0));
        assert_eq!(empty.lines().count(), 1);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, "a\n").unwrap();
        write_atomic(&path, "b\n").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "b\n");
    }
}
