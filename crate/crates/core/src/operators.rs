//! Stabilized projection, discrete Laplacian, norms and error functionals.

use std::f64::consts::PI;

use crate::assembly::{wavenumber, FemSystem, FourierProbe};
use crate::error::{Error, Result};
use crate::geometry::{LevelSetSurface, Vec2};
use crate::sparse::{SolverKind, SpdSolver};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Space {
    #[default]
    Primal,
    /// Riesz data `b_i = ⟨ℓ, φ_i⟩_Γ`.
    Functional,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoefVec {
    pub values: Vec<f64>,
    pub space: Space,
}

impl CoefVec {
    pub fn primal(values: Vec<f64>) -> Self {
        Self { values, space: Space::Primal }
    }

    pub fn functional(values: Vec<f64>) -> Self {
        Self { values, space: Space::Functional }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A function on the circle with its tangential gradient.
pub trait SurfaceFunction: Sync {
    fn value(&self, p: Vec2) -> f64;
    fn tangential_gradient(&self, p: Vec2) -> Vec2;
    /// Exact coefficients in the probe basis, when known.
    fn fourier(&self, _probe: &FourierProbe) -> Option<Vec<f64>> {
        None
    }
}

/// `a cos(kθ) + b sin(kθ)`; for `k = 0` only `a` is used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngularMode {
    pub k: usize,
    pub cos: f64,
    pub sin: f64,
}

/// Finite trigonometric sum in the polar angle about `center`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSum {
    pub center: Vec2,
    pub radius: f64,
    pub modes: Vec<AngularMode>,
}

impl ModeSum {
    pub fn new(center: Vec2, radius: f64, modes: Vec<AngularMode>) -> Self {
        Self { center, radius, modes }
    }

    pub fn constant(center: Vec2, radius: f64, c: f64) -> Self {
        Self::new(center, radius, vec![AngularMode { k: 0, cos: c, sin: 0.0 }])
    }

    pub fn cos(center: Vec2, radius: f64, k: usize) -> Self {
        Self::new(center, radius, vec![AngularMode { k, cos: 1.0, sin: 0.0 }])
    }

    pub fn sin(center: Vec2, radius: f64, k: usize) -> Self {
        Self::new(center, radius, vec![AngularMode { k, cos: 0.0, sin: 1.0 }])
    }

    pub fn zero(center: Vec2, radius: f64) -> Self {
        Self::new(center, radius, Vec::new())
    }

    pub fn theta(&self, p: Vec2) -> f64 {
        let d = p - self.center;
        d.y.atan2(d.x)
    }

    pub fn at_angle(&self, theta: f64) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                if m.k == 0 {
                    m.cos
                } else {
                    let kt = m.k as f64 * theta;
                    m.cos * kt.cos() + m.sin * kt.sin()
                }
            })
            .sum()
    }

    pub fn derivative_at_angle(&self, theta: f64) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let k = m.k as f64;
                let kt = k * theta;
                k * (m.sin * kt.cos() - m.cos * kt.sin())
            })
            .sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let modes = self.modes.iter().map(|m| AngularMode { k: m.k, cos: s * m.cos, sin: s * m.sin }).collect();
        Self::new(self.center, self.radius, modes)
    }

    /// `−Δ_Γ` applied mode by mode.
    pub fn neg_laplacian(&self) -> Self {
        let modes = self
            .modes
            .iter()
            .map(|m| {
                let l = (m.k as f64 / self.radius).powi(2);
                AngularMode { k: m.k, cos: l * m.cos, sin: l * m.sin }
            })
            .collect();
        Self::new(self.center, self.radius, modes)
    }

    /// Sum with like wavenumbers merged.
    pub fn plus(&self, other: &ModeSum) -> Self {
        let mut modes: Vec<AngularMode> = Vec::new();
        for m in self.modes.iter().chain(&other.modes) {
            match modes.iter_mut().find(|x| x.k == m.k) {
                Some(x) => {
                    x.cos += m.cos;
                    x.sin += m.sin;
                }
                None => modes.push(*m),
            }
        }
        Self::new(self.center, self.radius, modes)
    }

    /// Coefficients in the orthonormal basis `[1, cos θ, sin θ, …]`.
    pub fn coefficients(&self, n_modes: usize) -> Vec<f64> {
        let mut c = vec![0.0; n_modes];
        let c0 = (2.0 * PI * self.radius).sqrt();
        let ck = (PI * self.radius).sqrt();
        for m in &self.modes {
            if m.k == 0 {
                c[0] += c0 * m.cos;
            } else if 2 * m.k < n_modes {
                c[2 * m.k - 1] += ck * m.cos;
                c[2 * m.k] += ck * m.sin;
            }
        }
        c
    }

    /// `‖·‖²_{L²(Γ)}`.
    pub fn l2_norm_squared(&self) -> f64 {
        let top = self.modes.iter().map(|m| m.k).max().unwrap_or(0);
        self.coefficients(2 * top + 1).iter().map(|c| c * c).sum()
    }

    /// `‖·‖²_{H⁻¹(Γ)}` of the functional `w ↦ (·, w)_Γ`.
    pub fn hm1_norm_squared(&self) -> f64 {
        let top = self.modes.iter().map(|m| m.k).max().unwrap_or(0);
        self.coefficients(2 * top + 1)
            .iter()
            .enumerate()
            .map(|(m, c)| c * c / (1.0 + (wavenumber(m) as f64 / self.radius).powi(2)))
            .sum()
    }
}

impl SurfaceFunction for ModeSum {
    fn value(&self, p: Vec2) -> f64 {
        self.at_angle(self.theta(p))
    }

    fn tangential_gradient(&self, p: Vec2) -> Vec2 {
        let theta = self.theta(p);
        let t = Vec2::new(-theta.sin(), theta.cos());
        t * (self.derivative_at_angle(theta) / self.radius)
    }

    fn fourier(&self, probe: &FourierProbe) -> Option<Vec<f64>> {
        Some(self.coefficients(probe.n()))
    }
}

/// Scalar time factor of a separable field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeProfile {
    Zero,
    Constant,
    /// `e^{−rate·t}`.
    Exp {
        rate: f64,
    },
    /// `cos(ω t)`.
    Cos {
        omega: f64,
    },
}

impl TimeProfile {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant => 1.0,
            Self::Exp { rate } => (-rate * t).exp(),
            Self::Cos { omega } => (omega * t).cos(),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            Self::Zero | Self::Constant => 0.0,
            Self::Exp { rate } => -rate * (-rate * t).exp(),
            Self::Cos { omega } => -omega * (omega * t).sin(),
        }
    }
}

/// `u(x, t) = g(t) φ(x)` with the forcing that makes it a heat solution.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableField {
    pub shape: ModeSum,
    pub time: TimeProfile,
}

impl SeparableField {
    /// `e^{−k² t / R²} cos(kθ)`, an exact unforced solution.
    pub fn decaying_mode(center: Vec2, radius: f64, k: usize) -> Self {
        Self { shape: ModeSum::cos(center, radius, k), time: TimeProfile::Exp { rate: (k as f64 / radius).powi(2) } }
    }

    /// `cos(t) cos(kθ)`.
    pub fn forced_mode(center: Vec2, radius: f64, k: usize) -> Self {
        Self { shape: ModeSum::cos(center, radius, k), time: TimeProfile::Cos { omega: 1.0 } }
    }

    pub fn at(&self, t: f64) -> ModeSum {
        self.shape.scaled(self.time.value(t))
    }

    pub fn time_derivative(&self, t: f64) -> ModeSum {
        self.shape.scaled(self.time.derivative(t))
    }

    /// `∂_t u − Δ_Γ u`.
    pub fn forcing(&self, t: f64) -> ModeSum {
        self.time_derivative(t).plus(&self.shape.neg_laplacian().scaled(self.time.value(t)))
    }

    pub fn is_unforced(&self) -> bool {
        let f0 = self.forcing(0.0);
        let f1 = self.forcing(0.731);
        f0.modes.iter().chain(&f1.modes).all(|m| m.cos == 0.0 && m.sin == 0.0)
    }
}

/// Right-hand side of a projection.
pub enum ProjectionData<'a> {
    Function(&'a dyn SurfaceFunction),
    Closure(&'a dyn Fn(Vec2) -> f64),
    /// Coefficients in the probe basis.
    Fourier(&'a FourierProbe, &'a [f64]),
    Functional(&'a CoefVec),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DualNormKind {
    /// Denominator `‖w_h‖_{H¹_*}` with Gram `M + A + S₁`.
    #[default]
    Energy,
    /// Gram `M + A + S₁ + S₀` of the auxiliary operator.
    Auxiliary,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NormReport {
    pub l2_star: f64,
    pub h1_star_semi: f64,
    pub h1_star: f64,
    pub h1_gamma: f64,
    pub vh_minus1: f64,
    pub hm1_gamma_trunc: f64,
    pub hm1_star: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorFunctionals {
    pub l2_star: f64,
    pub h1_star: f64,
    pub hm1_star: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Factorized solvers bound to one assembled system.
pub struct Operators<'a> {
    pub system: &'a FemSystem,
    m_star: SpdSolver,
    k_star: SpdSolver,
    k_aux: SpdSolver,
}

impl<'a> Operators<'a> {
    pub fn new(system: &'a FemSystem, kind: SolverKind) -> Result<Self> {
        Ok(Self {
            system,
            m_star: SpdSolver::new(&system.m_star, kind)?,
            k_star: SpdSolver::new(&system.k_star, kind)?,
            k_aux: SpdSolver::new(&system.k_aux, kind)?,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.system.n_dofs()
    }

    /// Solves `M_* x = b` to a relative residual of 1e-12, refining if needed.
    pub fn solve_m_star(&self, b: &[f64]) -> Result<Vec<f64>> {
        let bn = norm(b);
        let mut x = self.m_star.solve(b)?;
        if bn == 0.0 {
            return Ok(x);
        }
        for _ in 0..4 {
            let ax = self.system.m_star.mul_vec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            if norm(&r) <= 1e-12 * bn {
                return Ok(x);
            }
            let dx = self.m_star.solve(&r)?;
            x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
        }
        let ax = self.system.m_star.mul_vec(&x);
        let res = b.iter().zip(&ax).map(|(b, a)| (b - a).powi(2)).sum::<f64>().sqrt() / bn;
        if res <= 1e-12 {
            Ok(x)
        } else {
            Err(Error::SolveFailure(format!("projection residual {res:e} above 1e-12")))
        }
    }

    pub fn solve_k_star(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.k_star.solve(b)
    }

    pub fn solve_k_aux(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.k_aux.solve(b)
    }

    /// `(P_h u, v_h)_* = ⟨u, v_h⟩_Γ`.
    pub fn project(&self, data: ProjectionData<'_>) -> Result<CoefVec> {
        let b = match data {
            ProjectionData::Function(f) => self.system.load(&|p| f.value(p)),
            ProjectionData::Closure(f) => self.system.load(f),
            ProjectionData::Fourier(probe, c) => probe.load(c),
            ProjectionData::Functional(b) => b.values.clone(),
        };
        Ok(CoefVec::primal(self.solve_m_star(&b)?))
    }

    pub fn project_function(&self, f: &dyn SurfaceFunction) -> Result<CoefVec> {
        self.project(ProjectionData::Function(f))
    }

    /// `⟨Δ_h v_h, w_h⟩_* = a_*(v_h, w_h)`; note `Δ_h ≈ −Δ_Γ` with this sign.
    pub fn discrete_laplacian(&self, x: &CoefVec) -> Result<CoefVec> {
        let b = self.system.a_star.mul_vec(&x.values);
        Ok(CoefVec::primal(self.solve_m_star(&b)?))
    }

    /// `sup_{w_h} (v_h, w_h)_* / ‖w_h‖`.
    pub fn dual_norm(&self, x: &CoefVec, kind: DualNormKind) -> Result<f64> {
        let y = self.system.m_star.mul_vec(&x.values);
        let z = match kind {
            DualNormKind::Energy => self.solve_k_star(&y)?,
            DualNormKind::Auxiliary => self.solve_k_aux(&y)?,
        };
        Ok(dot(&y, &z).max(0.0).sqrt())
    }

    pub fn hm1_gamma_norm(&self, x: &CoefVec, probe: &FourierProbe) -> f64 {
        probe.hm1_norm(&probe.coefficients(&x.values))
    }

    /// `(‖v_h‖²_{H⁻¹_Γ} + s₋₁(v_h, v_h))^{1/2}`.
    pub fn hm1_star_norm(&self, x: &CoefVec, probe: &FourierProbe) -> f64 {
        let g = self.hm1_gamma_norm(x, probe);
        (g * g + self.system.s_m1.quad_form(&x.values).max(0.0)).sqrt()
    }

    pub fn l2_star_norm(&self, x: &CoefVec) -> f64 {
        self.system.m_star.quad_form(&x.values).max(0.0).sqrt()
    }

    pub fn norms(&self, x: &CoefVec, probe: &FourierProbe) -> Result<NormReport> {
        let v = &x.values;
        let sys = self.system;
        let m = sys.m.quad_form(v).max(0.0);
        let a = sys.a.quad_form(v).max(0.0);
        let s1 = sys.s1.quad_form(v).max(0.0);
        Ok(NormReport {
            l2_star: self.l2_star_norm(x),
            h1_star_semi: (a + s1).sqrt(),
            h1_star: (m + a + s1).sqrt(),
            h1_gamma: (m + a).sqrt(),
            vh_minus1: self.dual_norm(x, DualNormKind::default())?,
            hm1_gamma_trunc: self.hm1_gamma_norm(x, probe),
            hm1_star: self.hm1_star_norm(x, probe),
        })
    }

    /// `(‖v − v_h‖²_{L²_Γ} + s₀(v_h, v_h))^{1/2}`.
    pub fn l2_error(&self, v: &dyn SurfaceFunction, x: &CoefVec) -> f64 {
        let trace = self.system.trace_values(&x.values);
        let diff: f64 = self
            .system
            .surface_nodes()
            .zip(&trace)
            .map(|((_, n), vh)| n.weight * (v.value(n.point) - vh).powi(2))
            .sum();
        (diff + self.system.s0.quad_form(&x.values).max(0.0)).sqrt()
    }

    /// `(|v − v_h|²_{H¹_Γ} + s₁(v_h, v_h))^{1/2}`.
    pub fn h1_error(&self, v: &dyn SurfaceFunction, x: &CoefVec) -> f64 {
        let dvh = self.system.trace_tangential_derivatives(&x.values);
        let diff: f64 = self
            .system
            .surface_nodes()
            .zip(&dvh)
            .map(|((_, n), d)| n.weight * (v.tangential_gradient(n.point).dot(&n.tangent) - d).powi(2))
            .sum();
        (diff + self.system.s1.quad_form(&x.values).max(0.0)).sqrt()
    }

    /// `(‖v − v_h‖²_{H⁻¹_Γ} + s₋₁(v_h, v_h))^{1/2}` with truncated Fourier norms.
    pub fn hm1_error(&self, v: &dyn SurfaceFunction, x: &CoefVec, probe: &FourierProbe) -> f64 {
        let exact = v.fourier(probe).unwrap_or_else(|| self.quadrature_coefficients(v, probe));
        let discrete = probe.coefficients(&x.values);
        let diff: Vec<f64> = exact.iter().zip(&discrete).map(|(a, b)| a - b).collect();
        let h = probe.hm1_norm(&diff);
        (h * h + self.system.s_m1.quad_form(&x.values).max(0.0)).sqrt()
    }

    pub fn error_functionals(&self, v: &dyn SurfaceFunction, x: &CoefVec, probe: &FourierProbe) -> ErrorFunctionals {
        ErrorFunctionals {
            l2_star: self.l2_error(v, x),
            h1_star: self.h1_error(v, x),
            hm1_star: self.hm1_error(v, x, probe),
        }
    }

    fn quadrature_coefficients(&self, v: &dyn SurfaceFunction, probe: &FourierProbe) -> Vec<f64> {
        let mut c = vec![0.0; probe.n()];
        for (_, node) in self.system.surface_nodes() {
            let val = node.weight * v.value(node.point);
            for (m, cm) in c.iter_mut().enumerate() {
                *cm += val * probe.basis_value(m, node.theta);
            }
        }
        c
    }

    /// Dof values `v(p(z))` of the normal extension.
    pub fn nodal_interpolant(&self, surface: &LevelSetSurface, v: &dyn SurfaceFunction) -> Result<CoefVec> {
        let mesh = &self.system.mesh;
        let values = (0..mesh.n_dofs())
            .map(|d| surface.closest_point(mesh.dof_point(d)).map(|p| v.value(p)))
            .collect::<Result<Vec<f64>>>()?;
        Ok(CoefVec::primal(values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutquad::{required_surface_order, CutTopology};
    use crate::exec::Execution;
    use crate::mesh::{ActiveMesh, BackgroundMesh, BoundingBox};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::TAU;

    const C: Vec2 = Vec2::new(0.0, 0.0);

    fn system(n: usize, k_max: usize) -> (LevelSetSurface, FemSystem) {
        let s = LevelSetSurface::circle(C, 1.0).unwrap();
        let bg = BackgroundMesh::build(BoundingBox::square(-1.5, 1.5), n).unwrap();
        let mesh = ActiveMesh::select(bg, &s).unwrap();
        let q = required_surface_order(k_max, mesh.h_max(), 1.0);
        let cut = CutTopology::build(&mesh, &s, q, Execution::Sequential).unwrap();
        (s, FemSystem::assemble(mesh, cut, Execution::Sequential).unwrap())
    }

    #[test]
    fn projection_of_constants() {
        let (_, sys) = system(48, 16);
        let ops = Operators::new(&sys, SolverKind::Direct).unwrap();
        let x = ops.project(ProjectionData::Closure(&|_| 1.0)).unwrap();
        assert!(x.values.iter().all(|v| (v - 1.0).abs() <= 1e-12));
        let d = ops.discrete_laplacian(&x).unwrap();
        assert!(d.values.iter().all(|v| v.abs() <= 1e-11));
    }

    #[test]
    fn projection_symmetry() {
        let (_, sys) = system(48, 16);
        let ops = Operators::new(&sys, SolverKind::Direct).unwrap();
        let l = CoefVec::functional(sys.load(&|p| ModeSum::sin(C, 1.0, 1).value(p)));
        let vdata = CoefVec::functional(sys.load(&|p| ModeSum::cos(C, 1.0, 2).value(p)));
        let pl = ops.project(ProjectionData::Functional(&l)).unwrap();
        let pv = ops.project(ProjectionData::Functional(&vdata)).unwrap();
        // ⟨ℓ, P_h v⟩_Γ against ⟨P_h ℓ, v⟩_Γ
        assert_abs_diff_eq!(dot(&l.values, &pv.values), dot(&pl.values, &vdata.values), epsilon = 1e-11);
    }

    #[test]
    fn fourier_and_function_data_agree() {
        let (_, sys) = system(48, 16);
        let probe = FourierProbe::assemble(&sys, 16).unwrap();
        let ops = Operators::new(&sys, SolverKind::Direct).unwrap();
        let f = ModeSum::new(
            C,
            1.0,
            vec![AngularMode { k: 0, cos: 0.3, sin: 0.0 }, AngularMode { k: 3, cos: -1.0, sin: 0.5 }],
        );
        let a = ops.project_function(&f).unwrap();
        let c = f.coefficients(probe.n());
        let b = ops.project(ProjectionData::Fourier(&probe, &c)).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
    }

    #[test]
    fn laplacian_of_first_mode() {
        let (_, sys) = system(96, 16);
        let probe = FourierProbe::assemble(&sys, 16).unwrap();
        let ops = Operators::new(&sys, SolverKind::Direct).unwrap();
        let x = ops.project_function(&ModeSum::cos(C, 1.0, 1)).unwrap();
        let d = ops.discrete_laplacian(&x).unwrap();
        let ratio = probe.coefficients(&d.values)[1] / probe.coefficients(&x.values)[1];
        assert!((0.9..=1.1).contains(&ratio), "ratio {ratio}");
        // linearity
        let y = ops.project_function(&ModeSum::sin(C, 1.0, 2)).unwrap();
        let combo = CoefVec::primal(x.values.iter().zip(&y.values).map(|(a, b)| 2.0 * a - 0.5 * b).collect());
        let dy = ops.discrete_laplacian(&y).unwrap();
        let dc = ops.discrete_laplacian(&combo).unwrap();
        for i in 0..dc.len() {
            assert_abs_diff_eq!(dc.values[i], 2.0 * d.values[i] - 0.5 * dy.values[i], epsilon = 1e-11);
        }
    }

    #[test]
    fn hm1_of_constant() {
        let (_, sys) = system(48, 32);
        let probe = FourierProbe::assemble(&sys, 32).unwrap();
        let ops = Operators::new(&sys, SolverKind::Direct).unwrap();
        let one = CoefVec::primal(vec![1.0; sys.n_dofs()]);
        assert_abs_diff_eq!(ops.hm1_gamma_norm(&one, &probe), TAU.sqrt(), epsilon = 1e-10);
        let e = ops.error_functionals(&ModeSum::constant(C, 1.0, 1.0), &one, &probe);
        assert!(e.l2_star <= 1e-11 && e.h1_star <= 1e-11 && e.hm1_star <= 1e-11);
    }

    #[test]
    fn hm1_truncation_is_monotone_and_converged() {
        let (_, sys) = system(48, 64);
        let ops = Operators::new(&sys, SolverKind::Direct).unwrap();
        let small = FourierProbe::assemble(&sys, 32).unwrap();
        let big = FourierProbe::assemble(&sys, 64).unwrap();
        let x = ops.project_function(&ModeSum::cos(C, 1.0, 2)).unwrap();
        let (a, b) = (ops.hm1_gamma_norm(&x, &small), ops.hm1_gamma_norm(&x, &big));
        assert!(b >= a);
        assert!(b - a <= 1e-8, "truncation change {}", b - a);
    }

    #[test]
    fn best_approximation_against_interpolant() {
        for n in [48, 96] {
            let (s, sys) = system(n, 16);
            let ops = Operators::new(&sys, SolverKind::Direct).unwrap();
            let v = ModeSum::cos(C, 1.0, 3);
            let p = ops.project_function(&v).unwrap();
            let i = ops.nodal_interpolant(&s, &v).unwrap();
            assert!(ops.l2_error(&v, &p) <= ops.l2_error(&v, &i) + 1e-12);
        }
    }

    #[test]
    fn interpolant_of_constant() {
        let (s, sys) = system(24, 16);
        let ops = Operators::new(&sys, SolverKind::Direct).unwrap();
        let i = ops.nodal_interpolant(&s, &ModeSum::constant(C, 1.0, 2.5)).unwrap();
        assert!(i.values.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn dual_norms_are_homogeneous_and_ordered() {
        let (_, sys) = system(48, 16);
        let ops = Operators::new(&sys, SolverKind::Direct).unwrap();
        let probe = FourierProbe::assemble(&sys, 16).unwrap();
        let x = ops.project_function(&ModeSum::cos(C, 1.0, 5)).unwrap();
        let y = CoefVec::primal(x.values.iter().map(|v| -3.0 * v).collect());
        let (a, b) =
            (ops.dual_norm(&x, DualNormKind::Energy).unwrap(), ops.dual_norm(&y, DualNormKind::Energy).unwrap());
        assert_abs_diff_eq!(3.0 * a, b, epsilon = 1e-12 * b);
        let aux = ops.dual_norm(&x, DualNormKind::Auxiliary).unwrap();
        assert!(aux <= a * (1.0 + 1e-12));
        let r = ops.norms(&x, &probe).unwrap();
        assert!(r.h1_star >= r.h1_gamma);
        assert!(r.hm1_star >= r.hm1_gamma_trunc);
    }

    #[test]
    fn separable_fields() {
        let u = SeparableField::decaying_mode(C, 1.0, 2);
        assert!(u.is_unforced());
        let w = SeparableField::forced_mode(C, 1.0, 3);
        let f = w.forcing(0.4);
        let expected = -(0.4f64).sin() + 9.0 * (0.4f64).cos();
        assert_abs_diff_eq!(f.at_angle(0.0), expected, epsilon = 1e-14);
        let g = ModeSum::sin(C, 2.0, 3);
        // d/ds of sin(3θ) with arclength s = 2θ
        let p = Vec2::new(2.0, 0.0);
        assert_abs_diff_eq!(g.tangential_gradient(p), Vec2::new(0.0, 1.5), epsilon = 1e-14);
        assert_abs_diff_eq!(ModeSum::cos(C, 2.0, 1).l2_norm_squared(), 2.0 * PI, epsilon = 1e-13);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use std::sync::OnceLock;

        fn shared() -> &'static FemSystem {
            static SYS: OnceLock<FemSystem> = OnceLock::new();
            SYS.get_or_init(|| system(48, 16).1)
        }

        fn field() -> impl Strategy<Value = ModeSum> {
            proptest::collection::vec((0usize..8, -1.0f64..1.0, -1.0f64..1.0), 1..5).prop_map(|m| {
                ModeSum::new(C, 1.0, m.into_iter().map(|(k, c, s)| AngularMode { k, cos: c, sin: s }).collect())
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(20))]
            #[test]
            fn l2_star_stability(v in field()) {
                let sys = shared();
                let ops = Operators::new(sys, SolverKind::Direct).unwrap();
                let p = ops.project_function(&v).unwrap();
                let lhs = ops.l2_star_norm(&p);
                let rhs = sys.cut.integrate(|n| v.value(n.point).powi(2)).sqrt();
                prop_assert!(lhs <= rhs * (1.0 + 1e-10) + 1e-14);
            }

            #[test]
            fn galerkin_orthogonality(v in field(), alpha in -4.0f64..4.0) {
                let sys = shared();
                let ops = Operators::new(sys, SolverKind::Direct).unwrap();
                let b = sys.load(&|p| v.value(p));
                let p = ops.project(ProjectionData::Functional(&CoefVec::functional(b.clone()))).unwrap();
                let r: Vec<f64> = sys.m_star.mul_vec(&p.values).iter().zip(&b).map(|(a, b)| a - b).collect();
                prop_assert!(norm(&r) <= 1e-12 * norm(&b).max(1e-300));
                let scaled = v.scaled(alpha);
                let q = ops.project_function(&scaled).unwrap();
                for (x, y) in p.values.iter().zip(&q.values) {
                    prop_assert!((alpha * x - y).abs() <= 1e-12 * (1.0 + y.abs()));
                }
            }
        }
    }
}
