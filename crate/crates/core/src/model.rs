//! TOML model files: plant, abstraction, gains, certificate options and
//! scenario in one document.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificate::{ModeCertificate, SynthesisOptions};
use crate::exec::Execution;
use crate::linalg::Matrix;
use crate::polytope::{ContinuityMatrix, Partition, Polyhedron, PolytopeError};
use crate::relation::GainSpec;
use crate::systems::{
    Abstraction, DisturbanceSignal, LinearAbstraction, PwaAbstraction, PwaMode, PwaSystem,
    SystemsError,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Systems(#[from] SystemsError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(ModelError::Invalid(msg.into()))
}

/// Declared dimensions every matrix is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    /// concrete state
    pub n: usize,
    /// abstraction state
    pub m: usize,
    /// concrete input
    pub p: usize,
    /// abstraction input
    pub q: usize,
    /// output
    pub k: usize,
    /// concrete modes
    pub s: usize,
    /// abstraction modes
    pub r: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    #[serde(rename = "E")]
    pub e: Matrix,
    pub f: Vec<f64>,
}

impl CellSpec {
    fn build(&self, what: &str, dim: usize) -> Result<Polyhedron> {
        if self.e.cols() != dim {
            return invalid(format!(
                "{what}: E has {} columns, expected {dim}",
                self.e.cols()
            ));
        }
        Polyhedron::new(self.e.clone(), self.f.clone())
            .map_err(|e| ModelError::Invalid(format!("{what}: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    #[serde(rename = "A")]
    pub a: Matrix,
    #[serde(rename = "B")]
    pub b: Matrix,
    #[serde(rename = "C")]
    pub c: Matrix,
    pub c_bound: f64,
    #[serde(rename = "K")]
    pub k: Matrix,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Matrix>,
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    pub continuity: Option<Matrix>,
    pub cell: CellSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AbstractionKind {
    Linear,
    Pwa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractionModeSpec {
    #[serde(rename = "F")]
    pub f: Matrix,
    #[serde(rename = "G")]
    pub g: Matrix,
    #[serde(rename = "H")]
    pub h: Matrix,
    #[serde(rename = "L")]
    pub l: Matrix,
    /// Concrete-space cell where this mode is active (PWA abstractions only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<CellSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractionSpec {
    pub kind: AbstractionKind,
    #[serde(rename = "mode")]
    pub modes: Vec<AbstractionModeSpec>,
}

/// A user-supplied certificate block for one joint mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateModeSpec {
    #[serde(rename = "M")]
    pub m: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_scalar: Option<f64>,
    #[serde(rename = "U", default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Matrix>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Matrix>,
    /// Continuity matrix in homogeneous joint coordinates, checked against `T`.
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    pub jbar: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSpec {
    pub kappa: f64,
    /// Required with user-supplied `mode` blocks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_scalar: Option<f64>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t: Option<Matrix>,
    #[serde(rename = "mode", default, skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<CertificateModeSpec>,
}

impl CertificateSpec {
    pub fn synthesis_options(&self) -> SynthesisOptions {
        let d = SynthesisOptions::default();
        SynthesisOptions {
            lambda_grid: self.lambda_grid.clone(),
            grid_points: self.grid_points.unwrap_or(d.grid_points),
            lambda_floor: d.lambda_floor,
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            m_scalar: self.m_scalar.unwrap_or(d.m_scalar),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    /// Marks scenario data that is a reconstruction rather than published data.
    #[serde(default)]
    pub reconstructed: bool,
    pub t_end: f64,
    pub step: f64,
    pub x2_0: Vec<f64>,
    /// Initial concrete state; defaults to `x̃₀ + P x₂₀`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x1_0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_tilde_0: Option<Vec<f64>>,
    /// Radius of the disc from which `--seed` draws the initial output error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x2_sup: Option<f64>,
    #[serde(rename = "reference")]
    pub reference: Vec<Waypoint>,
}

/// On-disk document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default)]
    pub execution: Execution,
    pub dims: Dims,
    #[serde(rename = "mode")]
    pub modes: Vec<ModeSpec>,
    pub disturbance: DisturbanceSignal,
    pub abstraction: AbstractionSpec,
    pub certificate: CertificateSpec,
    pub scenario: ScenarioSpec,
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(ModelError::Parse("model file is empty".into()));
        }
        toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ModelError::Invalid(e.to_string()))
    }
}

/// Validated model.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub file: ModelFile,
    pub system: PwaSystem,
    pub abstraction: Abstraction,
    pub gains: Vec<GainSpec>,
    pub supplied_certificate: Option<Vec<ModeCertificate>>,
}

fn check_shape(what: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return invalid(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.rows(),
            m.cols()
        ));
    }
    Ok(())
}

impl Model {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let fallback = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        Self::from_str_named(&text, &fallback)
    }

    pub fn from_str_named(text: &str, fallback_name: &str) -> Result<Self> {
        let file = ModelFile::parse(text)?;
        Self::from_file(file, fallback_name)
    }

    pub fn from_file(file: ModelFile, fallback_name: &str) -> Result<Self> {
        let d = file.dims;
        if file.modes.len() != d.s {
            return invalid(format!("dims.s = {} but {} modes given", d.s, file.modes.len()));
        }
        if file.abstraction.modes.len() != d.r {
            return invalid(format!(
                "dims.r = {} but {} abstraction modes given",
                d.r,
                file.abstraction.modes.len()
            ));
        }
        if file.abstraction.kind == AbstractionKind::Linear && d.r != 1 {
            return invalid("a linear abstraction has exactly one mode");
        }
        if d.r > d.s {
            return invalid(format!("r = {} exceeds s = {}", d.r, d.s));
        }

        let mut modes = Vec::with_capacity(d.s);
        let mut cells = Vec::with_capacity(d.s);
        let mut gains = Vec::with_capacity(d.s);
        let mut continuity = Vec::new();
        for (i, ms) in file.modes.iter().enumerate() {
            let tag = format!("mode {}", i + 1);
            check_shape(&format!("{tag} A"), &ms.a, d.n, d.n)?;
            check_shape(&format!("{tag} B"), &ms.b, d.n, d.p)?;
            check_shape(&format!("{tag} C"), &ms.c, d.k, d.n)?;
            check_shape(&format!("{tag} K"), &ms.k, d.p, d.n)?;
            if let Some(r) = &ms.r {
                check_shape(&format!("{tag} R"), r, d.p, d.q)?;
            }
            if ms.c_bound < file.disturbance.sup_norm() - 1e-12 {
                return invalid(format!(
                    "{tag}: c_bound {} is below the disturbance sup-norm {}",
                    ms.c_bound,
                    file.disturbance.sup_norm()
                ));
            }
            modes.push(PwaMode::new(ms.a.clone(), ms.b.clone(), ms.c.clone(), ms.c_bound)?);
            let cell = ms.cell.build(&format!("{tag} cell"), d.n)?;
            if let Some(j) = &ms.continuity {
                check_shape(&format!("{tag} J"), j, d.n + 1, d.n + 1)?;
                continuity.push(ContinuityMatrix {
                    jbar: j.clone(),
                    kind: cell.kind(),
                });
            }
            cells.push(cell);
            gains.push(GainSpec {
                k: ms.k.clone(),
                r: ms.r.clone(),
            });
        }
        let continuity = match continuity.len() {
            0 => None,
            l if l == d.s => Some(continuity),
            _ => return invalid("continuity matrices must be given for all modes or none"),
        };
        let system = PwaSystem::new(modes, Partition::new(cells)?, continuity)?;

        let mut abs_modes = Vec::with_capacity(d.r);
        let mut abs_cells = Vec::with_capacity(d.r);
        for (j, am) in file.abstraction.modes.iter().enumerate() {
            let tag = format!("abstraction mode {}", j + 1);
            check_shape(&format!("{tag} F"), &am.f, d.m, d.m)?;
            check_shape(&format!("{tag} G"), &am.g, d.m, d.q)?;
            check_shape(&format!("{tag} H"), &am.h, d.k, d.m)?;
            check_shape(&format!("{tag} L"), &am.l, d.q, d.m)?;
            abs_modes.push(LinearAbstraction::new(
                am.f.clone(),
                am.g.clone(),
                am.h.clone(),
                am.l.clone(),
            )?);
            match (&am.cell, file.abstraction.kind) {
                (Some(c), AbstractionKind::Pwa) => abs_cells.push(c.build(&format!("{tag} cell"), d.n)?),
                (None, AbstractionKind::Pwa) => {
                    return invalid(format!("{tag} needs a concrete-space cell"))
                }
                (Some(_), AbstractionKind::Linear) => {
                    return invalid("a linear abstraction takes no cell")
                }
                (None, AbstractionKind::Linear) => {}
            }
        }
        let abstraction = match file.abstraction.kind {
            AbstractionKind::Linear => Abstraction::Linear(abs_modes.remove(0)),
            AbstractionKind::Pwa => Abstraction::Pwa(PwaAbstraction::new(abs_modes, abs_cells)?),
        };

        file.disturbance.validate()?;
        if file.disturbance.dim() != d.n {
            return invalid(format!(
                "disturbance dimension {} differs from n = {}",
                file.disturbance.dim(),
                d.n
            ));
        }

        let cs = &file.certificate;
        if !(cs.kappa > 0.0) {
            return invalid(format!("kappa must be positive, got {}", cs.kappa));
        }
        let supplied = if cs.modes.is_empty() {
            None
        } else {
            if cs.lambda.is_none() {
                return invalid("a supplied certificate needs `lambda`");
            }
            Some(
                cs.modes
                    .iter()
                    .map(|cm| {
                        let dim = d.n + d.m;
                        check_shape("certificate M", &cm.m, dim, dim)?;
                        Ok(ModeCertificate {
                            m: cm.m.clone(),
                            m_scalar: cm.m_scalar.or(cs.m_scalar).unwrap_or(1.0),
                            u: cm.u.clone().unwrap_or_else(|| Matrix::zeros(0, 0)),
                            w: cm.w.clone().unwrap_or_else(|| Matrix::zeros(0, 0)),
                            kind: crate::polytope::CellKind::Conic,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        };

        let sc = &file.scenario;
        if sc.x2_0.len() != d.m {
            return invalid(format!("x2_0 has {} entries, expected {}", sc.x2_0.len(), d.m));
        }
        if let Some(x) = &sc.x1_0 {
            if x.len() != d.n {
                return invalid(format!("x1_0 has {} entries, expected {}", x.len(), d.n));
            }
        }
        if let Some(x) = &sc.x_tilde_0 {
            if x.len() != d.n {
                return invalid(format!("x_tilde_0 has {} entries, expected {}", x.len(), d.n));
            }
        }
        if sc.x1_0.is_some() && sc.x_tilde_0.is_some() {
            return invalid("give at most one of x1_0 and x_tilde_0");
        }
        if let Some(w) = sc.reference.iter().find(|w| w.value.len() != d.q) {
            return invalid(format!(
                "reference waypoint at t = {} has {} entries, expected {}",
                w.t,
                w.value.len(),
                d.q
            ));
        }

        Ok(Self {
            name: file.name.clone().unwrap_or_else(|| fallback_name.to_string()),
            file,
            system,
            abstraction,
            gains,
            supplied_certificate: supplied,
        })
    }
}
