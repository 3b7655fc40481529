//! Experiment configuration: a JSON document whose keys all have defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tracefem::heatsolver::{DtRule, Scheme};
use tracefem::mesh::BoundingBox;
use tracefem::operators::{AngularMode, ModeSum, SeparableField};
use tracefem::sparse::SolverKind;
use tracefem::Vec2;

use crate::error::CliError;

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Geometry {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self { center: [0.0, 0.0], radius: 1.0 }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BoxConfig {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Default for BoxConfig {
    fn default() -> Self {
        Self { min: [-1.5, -1.5], max: [1.5, 1.5] }
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    #[default]
    Bdf1,
    Bdf2,
    CrankNicolson,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SolverName {
    #[default]
    Auto,
    Direct,
    Iterative,
}

/// `{"factor": f, "power": p}` for `Δt = f·h^p`, or an explicit list.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DtConfig {
    Rule { factor: f64, power: f64 },
    List(Vec<f64>),
}

impl Default for DtConfig {
    fn default() -> Self {
        Self::Rule { factor: 0.25, power: 2.0 }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub k: usize,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Initial data and forcing.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum DataConfig {
    /// `e^{−k²t/R²} cos kθ`, unforced.
    Decaying { k: usize },
    /// `cos(t) cos kθ` with its forcing.
    Forced { k: usize },
    /// Trigonometric initial data without forcing and without an exact solution.
    Modes { modes: Vec<ModeConfig> },
}

impl Default for DataConfig {
    fn default() -> Self {
        Self::Decaying { k: 1 }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub geometry: Geometry,
    pub bbox: BoxConfig,
    pub n_cells: Vec<usize>,
    pub k_max: usize,
    pub q_surf: usize,
    pub q_vol: usize,
    pub scheme: SchemeName,
    pub dt: DtConfig,
    /// Time steps of the condition-number sweep.
    pub sweep_dt: Vec<f64>,
    pub t_final: f64,
    pub data: DataConfig,
    pub stabilized_time_derivative: bool,
    pub literal_eq_matrices: bool,
    pub solver: SolverName,
    pub mean_zero: bool,
    /// Geometry-resolution constant: `h_T ≤ c_res / κ_max`.
    pub c_res: f64,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// VTK snapshot period in steps; 0 disables.
    pub vtk_every: usize,
    pub export_matrices: bool,
    /// Also run the maximal-regularity solve in `diagnose`.
    pub mpr: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            geometry: Geometry::default(),
            bbox: BoxConfig::default(),
            n_cells: vec![96],
            k_max: 128,
            q_surf: 10,
            q_vol: 4,
            scheme: SchemeName::Bdf1,
            dt: DtConfig::default(),
            sweep_dt: (0..=10).map(|i| 2f64.powi(-4 - 2 * i)).collect(),
            t_final: 1.0,
            data: DataConfig::default(),
            stabilized_time_derivative: true,
            literal_eq_matrices: false,
            solver: SolverName::Auto,
            mean_zero: false,
            c_res: 1.0,
            output_dir: PathBuf::from("out"),
            seed: 0,
            vtk_every: 0,
            export_matrices: false,
            mpr: false,
        }
    }
}

/// Highest polynomial degree the 6-point volume rule integrates exactly.
pub const VOLUME_RULE_DEGREE: usize = 4;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.geometry.radius > 0.0 && self.geometry.radius.is_finite()) {
            return bad(format!("geometry.radius must be positive, got {}", self.geometry.radius));
        }
        if !(self.bbox.min[0] < self.bbox.max[0] && self.bbox.min[1] < self.bbox.max[1]) {
            return bad("bbox.min must be below bbox.max in both coordinates".into());
        }
        if self.n_cells.is_empty() || self.n_cells.contains(&0) {
            return bad("n_cells must be a nonempty list of positive integers".into());
        }
        if self.q_surf == 0 {
            return bad("q_surf must be positive".into());
        }
        if self.q_vol == 0 || self.q_vol > VOLUME_RULE_DEGREE {
            return bad(format!("q_vol must be between 1 and {VOLUME_RULE_DEGREE}, got {}", self.q_vol));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final must be positive, got {}", self.t_final));
        }
        match &self.dt {
            DtConfig::Rule { factor, power } if !(*factor > 0.0 && power.is_finite()) => {
                return bad("dt.rule needs a positive factor and a finite power".into())
            }
            DtConfig::List(l) if l.is_empty() || l.iter().any(|d| !(*d > 0.0)) => {
                return bad("dt.list must hold positive steps".into())
            }
            _ => {}
        }
        if self.sweep_dt.iter().any(|d| !(*d > 0.0)) {
            return bad("sweep_dt must hold positive steps".into());
        }
        if !(self.c_res > 0.0) {
            return bad("c_res must be positive".into());
        }
        Ok(())
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.geometry.center[0], self.geometry.center[1])
    }

    pub fn bounding_box(&self) -> BoundingBox {
        BoundingBox::new(Vec2::new(self.bbox.min[0], self.bbox.min[1]), Vec2::new(self.bbox.max[0], self.bbox.max[1]))
    }

    pub fn scheme(&self) -> Scheme {
        match self.scheme {
            SchemeName::Bdf1 => Scheme::Bdf1,
            SchemeName::Bdf2 => Scheme::Bdf2,
            SchemeName::CrankNicolson => Scheme::CrankNicolson,
        }
    }

    pub fn solver(&self) -> SolverKind {
        match self.solver {
            SolverName::Auto => SolverKind::Auto,
            SolverName::Direct => SolverKind::Direct,
            SolverName::Iterative => SolverKind::Iterative,
        }
    }

    /// Time steps to run on a mesh of global size `h`; one per list entry.
    pub fn time_steps(&self, h: f64) -> Vec<f64> {
        match &self.dt {
            DtConfig::Rule { factor, power } => vec![factor * h.powf(*power)],
            DtConfig::List(l) => l.clone(),
        }
    }

    /// The rule used by `converge`; a list uses its first entry for every mesh.
    pub fn dt_rule(&self) -> DtRule {
        match &self.dt {
            DtConfig::Rule { factor, power } => DtRule::Power { factor: *factor, power: *power },
            DtConfig::List(l) => DtRule::Fixed(l[0]),
        }
    }

    /// Exact solution, if the data selection has one.
    pub fn manufactured(&self) -> Option<SeparableField> {
        let (c, r) = (self.center(), self.geometry.radius);
        match self.data {
            DataConfig::Decaying { k } => Some(SeparableField::decaying_mode(c, r, k)),
            DataConfig::Forced { k } => Some(SeparableField::forced_mode(c, r, k)),
            DataConfig::Modes { .. } => None,
        }
    }

    pub fn initial_data(&self) -> ModeSum {
        match (&self.data, self.manufactured()) {
            (_, Some(field)) => field.at(0.0),
            (DataConfig::Modes { modes }, None) => ModeSum::new(
                self.center(),
                self.geometry.radius,
                modes.iter().map(|m| AngularMode { k: m.k, cos: m.cos, sin: m.sin }).collect(),
            ),
            _ => unreachable!("every other data kind is manufactured"),
        }
    }
}
