//! Implicit time stepping of the stabilized semidiscrete heat equation and
//! the error bookkeeping of manufactured-solution studies.

use crate::assembly::{FemSystem, FourierProbe};
use crate::cutquad::{required_surface_order, CutTopology};
use crate::diagnostics::{loglog_slope, MprInputs};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{LevelSetSurface, Vec2};
use crate::mesh::{ActiveMesh, BackgroundMesh, BoundingBox};
use crate::operators::{CoefVec, ModeSum, NormReport, Operators, SeparableField, SurfaceFunction};
use crate::sparse::{CsrMatrix, SolverKind, SpdSolver};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scheme {
    #[default]
    Bdf1,
    Bdf2,
    CrankNicolson,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeatConfig {
    pub scheme: Scheme,
    /// Requested step; the actual step is `t_final / n_steps`.
    pub dt: f64,
    pub t_final: f64,
    /// Use `M + S₀` (not `M`) in the time-derivative term.
    pub stabilized_time: bool,
    pub solver: SolverKind,
}

impl HeatConfig {
    pub fn new(scheme: Scheme, dt: f64, t_final: f64) -> Self {
        Self { scheme, dt, t_final, stabilized_time: true, solver: SolverKind::Auto }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "time step and final time must be positive (dt = {}, T = {})",
                self.dt, self.t_final
            )));
        }
        Ok(())
    }

    /// `⌈T / Δt⌉`.
    pub fn n_steps(&self) -> usize {
        ((self.t_final / self.dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
    }

    pub fn step_size(&self) -> f64 {
        self.t_final / self.n_steps() as f64
    }
}

/// Source term of a run.
pub enum Forcing<'a> {
    None,
    /// Manufactured forcing `∂_t u − Δ_Γ u` of a separable field.
    Field(&'a SeparableField),
    Custom(&'a (dyn Fn(Vec2, f64) -> f64 + Sync)),
}

pub struct HeatProblem<'a> {
    pub u0: &'a dyn SurfaceFunction,
    pub forcing: Forcing<'a>,
}

/// State handed to observers after each step (and once at `t = 0`).
pub struct StepView<'s> {
    pub index: usize,
    pub time: f64,
    pub dt: f64,
    pub u: &'s [f64],
    pub prev: Option<&'s [f64]>,
}

pub struct HeatSolver<'o, 's> {
    pub ops: &'o Operators<'s>,
    pub config: HeatConfig,
    mass: CsrMatrix,
    lhs: SpdSolver,
    lhs_start: Option<SpdSolver>,
}

impl<'o, 's> HeatSolver<'o, 's> {
    pub fn new(ops: &'o Operators<'s>, config: HeatConfig) -> Result<Self> {
        config.validate()?;
        let sys = ops.system;
        let dt = config.step_size();
        let mass = if config.stabilized_time { sys.m_star.clone() } else { sys.m.clone() };
        let factor = |a: f64, b: f64| -> Result<SpdSolver> {
            let m = CsrMatrix::lin_comb(&[(a, &mass), (b, &sys.a_star)]);
            SpdSolver::new(&m, config.solver).map_err(|e| match e {
                Error::SolveFailure(msg) if !config.stabilized_time => {
                    Error::SolveFailure(format!("unstabilized step matrix: {msg}"))
                }
                other => other,
            })
        };
        let (lhs, lhs_start) = match config.scheme {
            Scheme::Bdf1 => (factor(1.0 / dt, 1.0)?, None),
            Scheme::Bdf2 => (factor(1.5 / dt, 1.0)?, Some(factor(1.0 / dt, 1.0)?)),
            Scheme::CrankNicolson => (factor(1.0 / dt, 0.5)?, None),
        };
        Ok(Self { ops, config, mass, lhs, lhs_start })
    }

    fn load(&self, forcing: &Forcing<'_>, t: f64) -> Option<Vec<f64>> {
        let sys = self.ops.system;
        match forcing {
            Forcing::None => None,
            Forcing::Field(f) => {
                let g = f.forcing(t);
                if g.modes.iter().all(|m| m.cos == 0.0 && m.sin == 0.0) {
                    None
                } else {
                    Some(sys.load(&|p| g.value(p)))
                }
            }
            Forcing::Custom(f) => Some(sys.load(&|p| f(p, t))),
        }
    }

    /// Runs to `t_final`, calling `observer` at every time level; returns the final state.
    pub fn run<F>(&self, problem: &HeatProblem<'_>, mut observer: F) -> Result<Vec<f64>>
    where
        F: FnMut(&StepView<'_>) -> Result<()>,
    {
        let dt = self.config.step_size();
        let n_steps = self.config.n_steps();
        let sys = self.ops.system;
        let mut u = self.ops.project_function(problem.u0)?.values;
        observer(&StepView { index: 0, time: 0.0, dt, u: &u, prev: None })?;
        let mut prev: Vec<f64> = u.clone();
        let mut b_prev = self.load(&problem.forcing, 0.0);
        for n in 1..=n_steps {
            let t = n as f64 * dt;
            let b = self.load(&problem.forcing, t);
            let mut rhs;
            let next = match (self.config.scheme, n) {
                (Scheme::Bdf1, _) | (Scheme::Bdf2, 1) => {
                    rhs = self.mass.mul_vec(&u);
                    rhs.iter_mut().for_each(|v| *v /= dt);
                    if let Some(b) = &b {
                        rhs.iter_mut().zip(b).for_each(|(r, b)| *r += b);
                    }
                    match &self.lhs_start {
                        Some(start) => start.solve(&rhs)?,
                        None => self.lhs.solve(&rhs)?,
                    }
                }
                (Scheme::Bdf2, _) => {
                    let w: Vec<f64> = u.iter().zip(&prev).map(|(a, b)| 4.0 * a - b).collect();
                    rhs = self.mass.mul_vec(&w);
                    rhs.iter_mut().for_each(|v| *v /= 2.0 * dt);
                    if let Some(b) = &b {
                        rhs.iter_mut().zip(b).for_each(|(r, b)| *r += b);
                    }
                    self.lhs.solve(&rhs)?
                }
                (Scheme::CrankNicolson, _) => {
                    let mu = self.mass.mul_vec(&u);
                    let ku = sys.a_star.mul_vec(&u);
                    rhs = mu.iter().zip(&ku).map(|(m, k)| m / dt - 0.5 * k).collect();
                    for load in [&b, &b_prev].into_iter().flatten() {
                        rhs.iter_mut().zip(load).for_each(|(r, b)| *r += 0.5 * b);
                    }
                    self.lhs.solve(&rhs)?
                }
            };
            prev = std::mem::replace(&mut u, next);
            b_prev = b;
            observer(&StepView { index: n, time: t, dt, u: &u, prev: Some(&prev) })?;
        }
        Ok(u)
    }

    /// Runs and keeps every time level.
    pub fn run_with_history(&self, problem: &HeatProblem<'_>) -> Result<Vec<Vec<f64>>> {
        let mut history = Vec::with_capacity(self.config.n_steps() + 1);
        self.run(problem, |v| {
            history.push(v.u.to_vec());
            Ok(())
        })?;
        Ok(history)
    }
}

/// Per-level output of [`HeatSolver::run_recorded`].
#[derive(Clone, Debug, Default)]
pub struct HeatRecord {
    pub times: Vec<f64>,
    pub history: Vec<Vec<f64>>,
    pub norms: Vec<NormReport>,
    /// `𝟙ᵀ M u` per level.
    pub means: Vec<f64>,
    pub errors: Option<ErrorTotals>,
}

impl HeatSolver<'_, '_> {
    /// Full run with per-level norms and, given the exact solution, error totals.
    pub fn run_recorded(
        &self,
        problem: &HeatProblem<'_>,
        probe: &FourierProbe,
        manufactured: Option<&SeparableField>,
    ) -> Result<HeatRecord> {
        let mut rec = HeatRecord::default();
        let mut acc = manufactured.map(|f| ErrorAccumulator::new(self.ops, probe, f));
        self.run(problem, |v| {
            rec.norms.push(self.ops.norms(&CoefVec::primal(v.u.to_vec()), probe)?);
            rec.means.push(mean_value(self.ops.system, v.u));
            rec.times.push(v.time);
            rec.history.push(v.u.to_vec());
            if let Some(acc) = acc.as_mut() {
                acc.observe(v);
            }
            Ok(())
        })?;
        rec.errors = acc.map(|a| a.totals());
        Ok(rec)
    }
}

/// Time-integrated error functionals against a manufactured solution.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorTotals {
    /// `E_{L²_*}[u(0), u_h(0)]`.
    pub l2_initial: f64,
    /// `(∫ E_{L²_*}²)^{1/2}` (trapezoid).
    pub l2_l2: f64,
    /// `(∫ E_{H¹_*}²)^{1/2}` (trapezoid).
    pub h1_l2: f64,
    /// `(∫ E_{H⁻¹_*}[∂_t u, ∂_t u_h]²)^{1/2}` (midpoint, backward differences).
    pub hm1_dt_l2: f64,
    /// `E_{L²_*}` at the final time.
    pub l2_final: f64,
    pub total: f64,
}

pub struct ErrorAccumulator<'a, 's> {
    ops: &'a Operators<'s>,
    probe: &'a FourierProbe,
    field: &'a SeparableField,
    last: Option<(f64, f64)>,
    l2_initial: f64,
    l2_sq: f64,
    h1_sq: f64,
    hm1_sq: f64,
}

impl<'a, 's> ErrorAccumulator<'a, 's> {
    pub fn new(ops: &'a Operators<'s>, probe: &'a FourierProbe, field: &'a SeparableField) -> Self {
        Self { ops, probe, field, last: None, l2_initial: 0.0, l2_sq: 0.0, h1_sq: 0.0, hm1_sq: 0.0 }
    }

    pub fn observe(&mut self, v: &StepView<'_>) {
        let exact = self.field.at(v.time);
        let x = CoefVec::primal(v.u.to_vec());
        let l2 = self.ops.l2_error(&exact, &x);
        let h1 = self.ops.h1_error(&exact, &x);
        match (self.last, v.prev) {
            (None, _) => self.l2_initial = l2,
            (Some((l2p, h1p)), Some(prev)) => {
                self.l2_sq += 0.5 * v.dt * (l2p * l2p + l2 * l2);
                self.h1_sq += 0.5 * v.dt * (h1p * h1p + h1 * h1);
                let dudt = self.field.time_derivative(v.time - 0.5 * v.dt);
                let diff = CoefVec::primal(v.u.iter().zip(prev).map(|(a, b)| (a - b) / v.dt).collect());
                let e = self.ops.hm1_error(&dudt, &diff, self.probe);
                self.hm1_sq += v.dt * e * e;
            }
            (Some(_), None) => {}
        }
        self.last = Some((l2, h1));
    }

    pub fn totals(&self) -> ErrorTotals {
        ErrorTotals {
            l2_initial: self.l2_initial,
            l2_l2: self.l2_sq.sqrt(),
            h1_l2: self.h1_sq.sqrt(),
            hm1_dt_l2: self.hm1_sq.sqrt(),
            l2_final: self.last.map_or(0.0, |l| l.0),
            total: (self.l2_initial.powi(2) + self.hm1_sq + self.h1_sq).sqrt(),
        }
    }
}

/// Accumulates the norms in the discrete maximal-regularity ratio.
pub struct MprAccumulator<'a, 's> {
    ops: &'a Operators<'s>,
    probe: &'a FourierProbe,
    last_lap: Option<f64>,
    lap_sq: f64,
    dt_sq: f64,
}

impl<'a, 's> MprAccumulator<'a, 's> {
    pub fn new(ops: &'a Operators<'s>, probe: &'a FourierProbe) -> Self {
        Self { ops, probe, last_lap: None, lap_sq: 0.0, dt_sq: 0.0 }
    }

    pub fn observe(&mut self, v: &StepView<'_>) -> Result<()> {
        let lap = self.ops.discrete_laplacian(&CoefVec::primal(v.u.to_vec()))?;
        let l = self.ops.hm1_star_norm(&lap, self.probe);
        if let (Some(lp), Some(prev)) = (self.last_lap, v.prev) {
            self.lap_sq += 0.5 * v.dt * (lp * lp + l * l);
            let diff = CoefVec::primal(v.u.iter().zip(prev).map(|(a, b)| (a - b) / v.dt).collect());
            let d = self.ops.hm1_star_norm(&diff, self.probe);
            self.dt_sq += v.dt * d * d;
        }
        self.last_lap = Some(l);
        Ok(())
    }

    /// `forcing`: `(∫‖f‖²_{H⁻¹_Γ})^{1/2}`; `initial`: `‖u₀‖_{L²_Γ}`.
    pub fn inputs(&self, forcing: f64, initial: f64) -> MprInputs {
        MprInputs { laplacian_sq: self.lap_sq, time_derivative_sq: self.dt_sq, forcing, initial }
    }
}

/// `(∫_0^T ‖f‖²_{H⁻¹_Γ})^{1/2}` of a manufactured forcing by the trapezoid rule.
pub fn forcing_hm1_l2(field: &SeparableField, config: &HeatConfig) -> f64 {
    let n = config.n_steps();
    let dt = config.step_size();
    let vals: Vec<f64> = (0..=n).map(|i| field.forcing(i as f64 * dt).hm1_norm_squared()).collect();
    let s: f64 = vals.windows(2).map(|w| 0.5 * dt * (w[0] + w[1])).sum();
    s.sqrt()
}

/// Errors of the per-level stabilized projection of the exact solution.
pub fn projection_errors(
    ops: &Operators<'_>,
    probe: &FourierProbe,
    field: &SeparableField,
    config: &HeatConfig,
) -> Result<ErrorTotals> {
    let mut acc = ErrorAccumulator::new(ops, probe, field);
    let dt = config.step_size();
    let mut prev: Option<Vec<f64>> = None;
    for n in 0..=config.n_steps() {
        let t = n as f64 * dt;
        let u = ops.project_function(&field.at(t))?.values;
        acc.observe(&StepView { index: n, time: t, dt, u: &u, prev: prev.as_deref() });
        prev = Some(u);
    }
    Ok(acc.totals())
}

/// How the time step follows the mesh.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DtRule {
    /// `Δt = factor · h^power`.
    Power {
        factor: f64,
        power: f64,
    },
    Fixed(f64),
}

impl DtRule {
    pub fn dt(&self, h: f64) -> f64 {
        match *self {
            Self::Power { factor, power } => factor * h.powf(power),
            Self::Fixed(dt) => dt,
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Self::Power { factor, power } => format!("dt = {factor} * h^{power}"),
            Self::Fixed(dt) => format!("dt = {dt}"),
        }
    }
}

/// Everything a convergence study needs besides the ladder.
#[derive(Clone, Debug)]
pub struct StudySpec {
    pub center: Vec2,
    pub radius: f64,
    pub bbox: BoundingBox,
    pub k_max: usize,
    pub q_surf: usize,
    pub scheme: Scheme,
    pub dt_rule: DtRule,
    pub t_final: f64,
    pub stabilized_time: bool,
    pub field: SeparableField,
    pub solver: SolverKind,
    pub exec: Execution,
}

/// A band with its system, built the same way everywhere.
pub fn build_system(
    surface: &LevelSetSurface,
    bbox: BoundingBox,
    n_cells: usize,
    q_surf: usize,
    k_max: usize,
    exec: Execution,
) -> Result<FemSystem> {
    let background = BackgroundMesh::build(bbox, n_cells)?;
    let mesh = ActiveMesh::select(background, surface)?;
    let radius = surface.as_circle().map_or(1.0, |c| c.1);
    let q = q_surf.max(required_surface_order(k_max, mesh.h_max(), radius));
    let cut = CutTopology::build(&mesh, surface, q, exec)?;
    FemSystem::assemble(mesh, cut, exec)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConvergenceRow {
    pub n_cells: usize,
    pub h: f64,
    pub dt: f64,
    pub n_dofs: usize,
    pub errors: ErrorTotals,
    /// `E_{L²_*}[u₀, P_h u₀]`.
    pub proj_l2: f64,
    /// `E_{H¹_*}[u₀, P_h u₀]`.
    pub proj_h1: f64,
    pub mpr_ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceTable {
    pub dt_rule: String,
    pub rows: Vec<ConvergenceRow>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConvergenceRates {
    pub total: f64,
    pub l2_l2: f64,
    pub h1_l2: f64,
    pub proj_l2: f64,
    pub proj_h1: f64,
}

impl ConvergenceTable {
    pub fn rates(&self) -> Result<ConvergenceRates> {
        if self.rows.len() < 3 {
            return Err(Error::InvalidConfig(format!("rates need at least 3 meshes, got {}", self.rows.len())));
        }
        let h: Vec<f64> = self.rows.iter().map(|r| r.h).collect();
        let fit = |f: &dyn Fn(&ConvergenceRow) -> f64| {
            let y: Vec<f64> = self.rows.iter().map(f).collect();
            loglog_slope(&h, &y)
        };
        Ok(ConvergenceRates {
            total: fit(&|r| r.errors.total),
            l2_l2: fit(&|r| r.errors.l2_l2),
            h1_l2: fit(&|r| r.errors.h1_l2),
            proj_l2: fit(&|r| r.proj_l2),
            proj_h1: fit(&|r| r.proj_h1),
        })
    }
}

pub fn convergence_entry(spec: &StudySpec, n_cells: usize) -> Result<ConvergenceRow> {
    let surface = LevelSetSurface::circle(spec.center, spec.radius)?;
    let sys = build_system(&surface, spec.bbox, n_cells, spec.q_surf, spec.k_max, spec.exec)?;
    let h = sys.mesh.background.h_global;
    let ops = Operators::new(&sys, spec.solver)?;
    let probe = FourierProbe::assemble(&sys, spec.k_max)?;
    let config = HeatConfig {
        scheme: spec.scheme,
        dt: spec.dt_rule.dt(h),
        t_final: spec.t_final,
        stabilized_time: spec.stabilized_time,
        solver: spec.solver,
    };
    let solver = HeatSolver::new(&ops, config)?;
    let u0 = spec.field.at(0.0);
    let problem = HeatProblem { u0: &u0, forcing: Forcing::Field(&spec.field) };
    let mut err = ErrorAccumulator::new(&ops, &probe, &spec.field);
    let mut mpr = MprAccumulator::new(&ops, &probe);
    solver.run(&problem, |v| {
        err.observe(v);
        mpr.observe(v)
    })?;
    let p0 = ops.project_function(&u0)?;
    let mpr_in = mpr.inputs(forcing_hm1_l2(&spec.field, &config), u0.l2_norm_squared().sqrt());
    Ok(ConvergenceRow {
        n_cells,
        h,
        dt: config.step_size(),
        n_dofs: sys.n_dofs(),
        errors: err.totals(),
        proj_l2: ops.l2_error(&u0, &p0),
        proj_h1: ops.h1_error(&u0, &p0),
        mpr_ratio: crate::diagnostics::max_regularity_ratio(&mpr_in),
    })
}

/// Runs the manufactured problem on each mesh of the ladder.
pub fn convergence_study(ladder: &[usize], spec: &StudySpec) -> Result<ConvergenceTable> {
    if ladder.len() < 3 {
        return Err(Error::InvalidConfig(format!("a convergence study needs at least 3 meshes, got {}", ladder.len())));
    }
    let rows = spec.exec.try_map_range(ladder.len(), |i| convergence_entry(spec, ladder[i]))?;
    Ok(ConvergenceTable { dt_rule: spec.dt_rule.describe(), rows })
}

/// `⟨1, u_h⟩_Γ = 𝟙ᵀ M u`.
pub fn mean_value(sys: &FemSystem, u: &[f64]) -> f64 {
    sys.m.mul_vec(u).iter().sum()
}

/// Unforced field with a constant shape, used for steady-state checks.
pub fn constant_field(center: Vec2, radius: f64, c: f64) -> SeparableField {
    SeparableField { shape: ModeSum::constant(center, radius, c), time: crate::operators::TimeProfile::Constant }
}
