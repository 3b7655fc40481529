//! Mesh-dependent stability constants as dense generalized eigenproblems,
//! inf-sup bounds and condition numbers of the one-step matrices.

use nalgebra::DMatrix;

use crate::assembly::{FemSystem, FourierProbe};
use crate::dense::{self, Eigenpair};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::operators::Operators;
use crate::sparse::CsrMatrix;

/// Largest system handled by dense diagnostics.
pub const DENSE_LIMIT: usize = 4000;

/// Tolerance of the eigenpair residual certificate.
pub const EIG_RESIDUAL_TOL: f64 = 1e-8;

fn check_dense(n: usize) -> Result<()> {
    if n > DENSE_LIMIT {
        return Err(Error::Unsupported(format!("dense diagnostics are limited to {DENSE_LIMIT} dofs, got {n}")));
    }
    Ok(())
}

fn certify(x: &DMatrix<f64>, y: &DMatrix<f64>, pair: &Eigenpair, what: &str) -> Result<f64> {
    let r = dense::pencil_residual(x, y, pair);
    if !(r <= EIG_RESIDUAL_TOL) {
        return Err(Error::EigFailure(format!("{what}: eigenpair residual {r:e}")));
    }
    Ok(r)
}

fn columns_to_matrix(n: usize, cols: Vec<Vec<f64>>) -> DMatrix<f64> {
    let m = cols.len();
    DMatrix::from_fn(n, m, |i, j| cols[j][i])
}

/// `N = M_* K_*⁻¹ M_*` and a factor `R` with `N⁻¹ = R Rᵀ`.
pub struct DualGram {
    pub n: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl DualGram {
    pub fn new(ops: &Operators<'_>, exec: Execution) -> Result<Self> {
        let sys = ops.system;
        let size = sys.n_dofs();
        check_dense(size)?;
        let m_star = sys.m_star.to_dense();
        let inv_k_m = exec.try_map_range(size, |j| {
            let col: Vec<f64> = m_star.column(j).iter().copied().collect();
            ops.solve_k_star(&col)
        })?;
        let mut n = &m_star * columns_to_matrix(size, inv_k_m);
        dense::symmetrize(&mut n);
        // N⁻¹ = M_*⁻¹ K_* M_*⁻¹ = (M_*⁻¹ L)(M_*⁻¹ L)ᵀ with K_* = L Lᵀ
        let l = dense::cholesky_lower(sys.k_star.to_dense())?;
        let r_cols = exec.try_map_range(size, |j| {
            let col: Vec<f64> = l.column(j).iter().copied().collect();
            ops.solve_m_star(&col)
        })?;
        Ok(Self { n, r: columns_to_matrix(size, r_cols) })
    }

    /// Largest eigenvalue of `(X, N)` with its residual certificate.
    pub fn largest(&self, x: &DMatrix<f64>, what: &str) -> Result<(f64, f64)> {
        let pair = dense::largest_reduced(x, &self.r)?;
        let res = certify(x, &self.n, &pair, what)?;
        Ok((pair.value, res))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OpNorms {
    pub h1_gamma: f64,
    pub h1_star: f64,
    pub residual: f64,
}

/// `‖P_h‖` from `H¹(Γ)` into `H¹(Γ)` and into `H¹_*`, over the probe span.
pub fn op_norms_ph(ops: &Operators<'_>, probe: &FourierProbe, exec: Execution) -> Result<OpNorms> {
    let sys = ops.system;
    check_dense(sys.n_dofs())?;
    let n = sys.n_dofs();
    let cols = exec.try_map_range(probe.n(), |m| {
        let col: Vec<f64> = probe.g.column(m).iter().copied().collect();
        ops.solve_m_star(&col)
    })?;
    let images = columns_to_matrix(n, cols);
    let h1_gamma_gram = CsrMatrix::lin_comb(&[(1.0, &sys.m), (1.0, &sys.a)]);
    let quad = |gram: &CsrMatrix| -> DMatrix<f64> {
        let applied = exec.map_range(probe.n(), |m| {
            let col: Vec<f64> = images.column(m).iter().copied().collect();
            gram.mul_vec(&col)
        });
        images.transpose() * columns_to_matrix(n, applied)
    };
    let y = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&probe.h1));
    let x1 = quad(&h1_gamma_gram);
    let p1 = dense::largest_diagonal_pencil(&x1, &probe.h1)?;
    let r1 = certify(&x1, &y, &p1, "P_h into H1(Γ)")?;
    let x2 = quad(&sys.k_star);
    let p2 = dense::largest_diagonal_pencil(&x2, &probe.h1)?;
    let r2 = certify(&x2, &y, &p2, "P_h into H1_*")?;
    Ok(OpNorms { h1_gamma: p1.value.max(0.0).sqrt(), h1_star: p2.value.max(0.0).sqrt(), residual: r1.max(r2) })
}

/// `C_inv,h = sup h‖w‖_{L²_*,h} / ‖w‖_{V_h⁻¹}` via the pencil `(D, N)`.
pub fn c_inv_h(sys: &FemSystem, gram: &DualGram) -> Result<(f64, f64)> {
    check_dense(sys.n_dofs())?;
    let (l, r) = gram.largest(&sys.d.to_dense(), "inverse parameter")?;
    Ok((l.max(0.0).sqrt(), r))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LambdaReport {
    pub lambda: f64,
    pub inv_lambda: f64,
    pub residual: f64,
}

/// `Λ_h = inf ‖v‖_{V_h⁻¹} / ‖v‖_{H⁻¹_*}` from `1/Λ_h² = λ_max(Ĥ + S₋₁, N)`.
pub fn lambda_h(sys: &FemSystem, probe: &FourierProbe, gram: &DualGram) -> Result<LambdaReport> {
    check_dense(sys.n_dofs())?;
    let mut gw = probe.g.clone();
    for (m, w) in probe.hm1.iter().enumerate() {
        gw.column_mut(m).scale_mut(*w);
    }
    let h = &gw * probe.g.transpose() + sys.s_m1.to_dense();
    let (l, residual) = gram.largest(&h, "Lambda_h")?;
    let inv_lambda = l.max(0.0).sqrt();
    Ok(LambdaReport { lambda: 1.0 / inv_lambda, inv_lambda, residual })
}

/// `1/(√8 (1 + 2T))`, or `1/√8` for data with vanishing mean.
pub fn c_b_minus(t_final: f64, mean_zero: bool) -> f64 {
    if mean_zero {
        1.0 / 8f64.sqrt()
    } else {
        1.0 / (8f64.sqrt() * (1.0 + 2.0 * t_final))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InfSupBounds {
    pub c_b_minus: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn infsup_bounds(norms: &OpNorms, c_inv: f64, t_final: f64, mean_zero: bool) -> InfSupBounds {
    let cb = c_b_minus(t_final, mean_zero);
    InfSupBounds { c_b_minus: cb, lower: cb / (norms.h1_star + c_inv), upper: 2f64.sqrt() / norms.h1_gamma }
}

/// One implicit step `B_*` (stabilized time derivative) or `B`.
///
/// By default the matrices come from the bilinear forms
/// `(1/Δt)(·,·)_* + a_*` and `(1/Δt)(·,·)_Γ + a_*`. With `literal` they are
/// `(1/Δt)(M + hS) + A + (1/Δt)S` and `(1/Δt)M + A + (1/Δt)S` with the raw
/// normal Gram `S` and `h = max h_T`.
pub fn step_matrix(sys: &FemSystem, dt: f64, stabilized: bool, literal: bool) -> CsrMatrix {
    let inv = 1.0 / dt;
    match (literal, stabilized) {
        (false, true) => CsrMatrix::lin_comb(&[(inv, &sys.m_star), (1.0, &sys.a_star)]),
        (false, false) => CsrMatrix::lin_comb(&[(inv, &sys.m), (1.0, &sys.a_star)]),
        (true, true) => {
            let h = sys.mesh.h_max();
            CsrMatrix::lin_comb(&[(inv, &sys.m), (inv * h, &sys.s), (1.0, &sys.a), (inv, &sys.s)])
        }
        (true, false) => CsrMatrix::lin_comb(&[(inv, &sys.m), (1.0, &sys.a), (inv, &sys.s)]),
    }
}

pub fn condition_number(sys: &FemSystem, dt: f64, stabilized: bool, literal: bool) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")));
    }
    check_dense(sys.n_dofs())?;
    dense::condition_number(step_matrix(sys, dt, stabilized, literal).to_dense())
}

/// `κ(M + S₀)`.
pub fn kappa_p_star(sys: &FemSystem) -> Result<f64> {
    check_dense(sys.n_dofs())?;
    dense::condition_number(sys.m_star.to_dense())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ConditionRow {
    pub dt: f64,
    pub kappa_b: f64,
    pub kappa_b_star: f64,
}

pub fn dt_sweep(sys: &FemSystem, dts: &[f64], literal: bool, exec: Execution) -> Result<Vec<ConditionRow>> {
    exec.try_map_range(dts.len(), |i| {
        Ok(ConditionRow {
            dt: dts[i],
            kappa_b: condition_number(sys, dts[i], false, literal)?,
            kappa_b_star: condition_number(sys, dts[i], true, literal)?,
        })
    })
}

/// Slope of `log κ(B)` against `log Δt` over the `count` smallest steps.
pub fn small_dt_slope(rows: &[ConditionRow], count: usize) -> f64 {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.dt.total_cmp(&b.dt));
    let tail = &sorted[..count.min(sorted.len())];
    let dt: Vec<f64> = tail.iter().map(|r| r.dt).collect();
    let k: Vec<f64> = tail.iter().map(|r| r.kappa_b).collect();
    loglog_slope(&dt, &k)
}

/// `max / min` of `κ(B_*)` over the steps `Δt ≤ dt_max`; NaN when none qualify.
pub fn plateau_ratio(rows: &[ConditionRow], dt_max: f64) -> f64 {
    let k: Vec<f64> = rows.iter().filter(|r| r.dt <= dt_max).map(|r| r.kappa_b_star).collect();
    if k.is_empty() {
        return f64::NAN;
    }
    k.iter().copied().fold(0.0, f64::max) / k.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Time-integrated norms entering the maximal-regularity ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MprInputs {
    /// `∫ ‖Δ_h u_h‖²_{H⁻¹_*}`.
    pub laplacian_sq: f64,
    /// `∫ ‖∂_t u_h‖²_{H⁻¹_*}`.
    pub time_derivative_sq: f64,
    /// `(∫ ‖f‖²_{H⁻¹_Γ})^{1/2}`.
    pub forcing: f64,
    /// `‖u₀‖_{L²_Γ}`.
    pub initial: f64,
}

/// Returns 0 when there is no data.
pub fn max_regularity_ratio(m: &MprInputs) -> f64 {
    let data = m.forcing + m.initial;
    if data == 0.0 {
        return 0.0;
    }
    (m.laplacian_sq.sqrt() + m.time_derivative_sq.sqrt()) / data
}

/// Everything computed for one mesh.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstantsReport {
    pub n_cells: usize,
    pub h: f64,
    pub n_dofs: usize,
    pub k_max: usize,
    pub norm_ph_h1gamma: f64,
    pub norm_ph_h1star: f64,
    pub c_inv_h: f64,
    pub lambda_h: f64,
    pub inv_lambda_h: f64,
    pub c_b_minus: f64,
    pub c_star_lower: f64,
    pub c_star_upper: f64,
    pub kappa_p_star: f64,
    pub conditions: Vec<ConditionRow>,
    pub c_mpr_ratio: Option<f64>,
    pub max_residual: f64,
}

impl ConstantsReport {
    /// `‖P_h‖_{H¹_Γ} ≤ 1/Λ_h ≤ ‖P_h‖_{H¹_*} + C_inv,h` within a relative slack.
    pub fn lambda_sandwich(&self, slack: f64) -> (bool, bool) {
        (
            self.norm_ph_h1gamma <= self.inv_lambda_h * (1.0 + slack),
            self.inv_lambda_h <= (self.norm_ph_h1star + self.c_inv_h) * (1.0 + slack),
        )
    }
}

pub struct ConstantsInput<'a> {
    pub n_cells: usize,
    pub h: f64,
    pub dts: &'a [f64],
    pub t_final: f64,
    pub literal: bool,
    pub mean_zero: bool,
}

pub fn constants_report(
    ops: &Operators<'_>,
    probe: &FourierProbe,
    input: &ConstantsInput<'_>,
    exec: Execution,
) -> Result<ConstantsReport> {
    let sys = ops.system;
    let gram = DualGram::new(ops, exec)?;
    let norms = op_norms_ph(ops, probe, exec)?;
    let (c_inv, r_inv) = c_inv_h(sys, &gram)?;
    let lam = lambda_h(sys, probe, &gram)?;
    let bounds = infsup_bounds(&norms, c_inv, input.t_final, input.mean_zero);
    Ok(ConstantsReport {
        n_cells: input.n_cells,
        h: input.h,
        n_dofs: sys.n_dofs(),
        k_max: probe.k_max,
        norm_ph_h1gamma: norms.h1_gamma,
        norm_ph_h1star: norms.h1_star,
        c_inv_h: c_inv,
        lambda_h: lam.lambda,
        inv_lambda_h: lam.inv_lambda,
        c_b_minus: bounds.c_b_minus,
        c_star_lower: bounds.lower,
        c_star_upper: bounds.upper,
        kappa_p_star: kappa_p_star(sys)?,
        conditions: dt_sweep(sys, input.dts, input.literal, exec)?,
        c_mpr_ratio: None,
        max_residual: norms.residual.max(r_inv).max(lam.residual),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutquad::{required_surface_order, CutTopology};
    use crate::geometry::{LevelSetSurface, Vec2};
    use crate::mesh::{ActiveMesh, BackgroundMesh, BoundingBox};
    use crate::sparse::SolverKind;
    use approx::assert_abs_diff_eq;

    fn system(n: usize, k_max: usize) -> FemSystem {
        let s = LevelSetSurface::circle(Vec2::new(0.0, 0.0), 1.0).unwrap();
        let bg = BackgroundMesh::build(BoundingBox::square(-1.5, 1.5), n).unwrap();
        let mesh = ActiveMesh::select(bg, &s).unwrap();
        let q = required_surface_order(k_max, mesh.h_max(), 1.0);
        let cut = CutTopology::build(&mesh, &s, q, Execution::Sequential).unwrap();
        FemSystem::assemble(mesh, cut, Execution::Sequential).unwrap()
    }

    #[test]
    fn c_b_minus_at_unit_time() {
        assert_abs_diff_eq!(c_b_minus(1.0, false), 0.1178511302, epsilon = 1e-9);
        assert_abs_diff_eq!(c_b_minus(0.0, false), 1.0 / 8f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(c_b_minus(5.0, true), 1.0 / 8f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn zero_data_ratio() {
        assert_eq!(max_regularity_ratio(&MprInputs::default()), 0.0);
        let m = MprInputs { laplacian_sq: 4.0, time_derivative_sq: 9.0, forcing: 0.0, initial: 2.0 };
        assert_abs_diff_eq!(max_regularity_ratio(&m), 2.5);
        let s = MprInputs { laplacian_sq: 16.0, time_derivative_sq: 36.0, forcing: 0.0, initial: 4.0 };
        assert_abs_diff_eq!(max_regularity_ratio(&s), 2.5);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.3)).collect();
        assert_abs_diff_eq!(loglog_slope(&x, &y), -1.3, epsilon = 1e-12);
    }

    #[test]
    fn constants_on_a_coarse_band() {
        let sys = system(32, 32);
        let ops = Operators::new(&sys, SolverKind::Direct).unwrap();
        let probe = FourierProbe::assemble(&sys, 32).unwrap();
        let input = ConstantsInput {
            n_cells: 32,
            h: 3.0 / 32.0,
            dts: &[1e-2, 1e-4],
            t_final: 1.0,
            literal: false,
            mean_zero: false,
        };
        let r = constants_report(&ops, &probe, &input, Execution::Sequential).unwrap();
        assert!(r.norm_ph_h1gamma >= 1.0 - 1e-6);
        assert!(r.norm_ph_h1star >= r.norm_ph_h1gamma - 1e-9);
        assert!(r.c_inv_h > 0.0);
        assert!(r.lambda_h <= 1.0 + 1e-9);
        assert!(r.c_star_lower <= r.c_star_upper);
        assert!(r.max_residual <= EIG_RESIDUAL_TOL);
        let (lo, hi) = r.lambda_sandwich(0.02);
        assert!(lo && hi, "{r:?}");
        assert!(r.conditions.iter().all(|c| c.kappa_b > 1.0 && c.kappa_b_star > 1.0));
    }

    #[test]
    fn literal_matrices_differ_from_forms() {
        let sys = system(16, 8);
        let a = step_matrix(&sys, 1e-3, true, false);
        let b = step_matrix(&sys, 1e-3, true, true);
        assert!((a.to_dense() - b.to_dense()).abs().max() > 0.0);
        assert!(condition_number(&sys, 1e-3, true, true).unwrap() > 1.0);
        assert!(matches!(condition_number(&sys, 0.0, true, false), Err(Error::InvalidConfig(_))));
    }
}
