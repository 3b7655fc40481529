//! One function per subcommand. Each writes its tables into the output
//! directory and returns the paths plus a few summary lines for stdout.

use std::f64::consts::TAU;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracefem::assembly::{FemSystem, FourierProbe};
use tracefem::cutquad::{required_surface_order, CutTopology};
use tracefem::diagnostics::{self, ConstantsInput, ConstantsReport};
use tracefem::heatsolver::{
    convergence_study, forcing_hm1_l2, ErrorAccumulator, Forcing, HeatConfig, HeatProblem, HeatSolver, MprAccumulator,
    StudySpec,
};
use tracefem::mesh::{ActiveMesh, BackgroundMesh};
use tracefem::operators::{CoefVec, DualNormKind, Operators, SeparableField};
use tracefem::{io, Execution, LevelSetSurface};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::table::{Cell, Table};

/// Relative slack of the sandwich checks, covering Fourier truncation.
pub const SANDWICH_SLACK: f64 = 0.02;
const QUAD_TOL: f64 = 1e-10;

pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub exec: Execution,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
}

struct Band {
    surface: LevelSetSurface,
    mesh: ActiveMesh,
    q_surf: usize,
}

fn band(cfg: &ExperimentConfig, n_cells: usize) -> Result<Band, CliError> {
    let surface = LevelSetSurface::circle(cfg.center(), cfg.geometry.radius)?;
    let bg = BackgroundMesh::build(cfg.bounding_box(), n_cells)?;
    let mesh = ActiveMesh::select(bg, &surface)?;
    let res = surface.check_resolution(&mesh, cfg.c_res);
    if !res.passed {
        return Err(CliError::Assumption(format!(
            "n_cells = {n_cells}: {} elements have h_T above {:.4e} (max h_T {:.4e}); refine the mesh or raise c_res",
            res.violating.len(),
            res.limit,
            res.max_h
        )));
    }
    let q_surf = cfg.q_surf.max(required_surface_order(cfg.k_max, mesh.h_max(), cfg.geometry.radius));
    Ok(Band { surface, mesh, q_surf })
}

fn system(ctx: &Context, n_cells: usize) -> Result<FemSystem, CliError> {
    let b = band(&ctx.config, n_cells)?;
    let cut = CutTopology::build(&b.mesh, &b.surface, b.q_surf, ctx.exec)?;
    Ok(FemSystem::assemble(b.mesh, cut, ctx.exec)?)
}

fn forcing_of(field: &Option<SeparableField>) -> Forcing<'_> {
    match field {
        Some(f) if !f.is_unforced() => Forcing::Field(f),
        _ => Forcing::None,
    }
}

fn prepare(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn write_vtk(path: &Path, sys: &FemSystem, name: &str, values: &[f64]) -> Result<(), CliError> {
    io::write_vtk(BufWriter::new(File::create(path)?), &sys.mesh, Some((name, values)))?;
    Ok(())
}

pub fn quadcheck(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.config;
    prepare(&ctx.out)?;
    let mut table = Table::new(&[
        "n_cells",
        "h",
        "h_max",
        "n_elements",
        "n_dofs",
        "q_surf",
        "arc_length",
        "length_error",
        "tiling_defect",
        "tangencies",
        "max_arcs_per_element",
        "spectral_error",
        "status",
    ]);
    let mut failures = Vec::new();
    let length = TAU * cfg.geometry.radius;
    for &n in &cfg.n_cells {
        let b = band(cfg, n)?;
        let cut = CutTopology::build(&b.mesh, &b.surface, b.q_surf, ctx.exec)?;
        let err = (cut.total_arc_length() - length).abs();
        let tiling = cut.tiling_defect();
        let spectral = cut.spectral_self_test(cfg.k_max);
        let ok = err <= QUAD_TOL * length.max(1.0) && tiling <= QUAD_TOL && spectral <= QUAD_TOL * length.max(1.0);
        if !ok {
            failures.push(n);
        }
        table.push(vec![
            n.into(),
            b.mesh.background.h_global.into(),
            b.mesh.h_max().into(),
            b.mesh.n_elements().into(),
            b.mesh.n_dofs().into(),
            b.q_surf.into(),
            cut.total_arc_length().into(),
            err.into(),
            tiling.into(),
            cut.tangency_count().into(),
            cut.arc_counts().into_iter().max().unwrap_or(0).into(),
            spectral.into(),
            ok.into(),
        ]);
    }
    let path = table.write_csv(&ctx.out, "quadcheck")?;
    if !failures.is_empty() {
        return Err(CliError::Numerical(format!("quadrature audit failed for n_cells = {failures:?}")));
    }
    Ok(Outcome { files: vec![path], summary: vec![format!("quadrature audit passed on {} meshes", cfg.n_cells.len())] })
}

pub fn project(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.config;
    prepare(&ctx.out)?;
    let u0 = cfg.initial_data();
    let mut table = Table::new(&[
        "n_cells",
        "h",
        "n_dofs",
        "e_l2_star",
        "e_h1_star",
        "e_hm1_star",
        "l2_star",
        "h1_star",
        "vh_minus1",
        "hm1_star",
    ]);
    let mut files = Vec::new();
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for &n in &cfg.n_cells {
        let sys = system(ctx, n)?;
        let ops = Operators::new(&sys, cfg.solver())?;
        let probe = FourierProbe::assemble(&sys, cfg.k_max)?;
        let x = ops.project_function(&u0)?;
        let e = ops.error_functionals(&u0, &x, &probe);
        let norms = ops.norms(&x, &probe)?;
        let h = sys.mesh.background.h_global;
        hs.push(h);
        errs.push((e.l2_star, e.h1_star));
        table.push(vec![
            n.into(),
            h.into(),
            sys.n_dofs().into(),
            e.l2_star.into(),
            e.h1_star.into(),
            e.hm1_star.into(),
            norms.l2_star.into(),
            norms.h1_star.into(),
            norms.vh_minus1.into(),
            norms.hm1_star.into(),
        ]);
        if cfg.export_matrices {
            files.extend(export_matrices(&ctx.out, n, &sys)?);
        }
        if cfg.vtk_every > 0 {
            let path = ctx.out.join(format!("project_n{n}.vtk"));
            write_vtk(&path, &sys, "projection", &x.values)?;
            files.push(path);
        }
    }
    files.insert(0, table.write_csv(&ctx.out, "project")?);
    let mut summary = Vec::new();
    if hs.len() >= 2 {
        let l2: Vec<f64> = errs.iter().map(|e| e.0).collect();
        let h1: Vec<f64> = errs.iter().map(|e| e.1).collect();
        summary.push(format!(
            "projection rates: L2* {:.3}, H1* {:.3}",
            diagnostics::loglog_slope(&hs, &l2),
            diagnostics::loglog_slope(&hs, &h1)
        ));
    }
    Ok(Outcome { files, summary })
}

fn export_matrices(out: &Path, n: usize, sys: &FemSystem) -> Result<Vec<PathBuf>, CliError> {
    let dir = out.join(format!("matrices_n{n}"));
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    for (name, m) in [
        ("mass", &sys.m),
        ("stiffness", &sys.a),
        ("normal", &sys.s),
        ("m_star", &sys.m_star),
        ("k_star", &sys.k_star),
        ("k_aux", &sys.k_aux),
    ] {
        let path = dir.join(format!("{name}.mtx"));
        io::write_matrix_market(BufWriter::new(File::create(&path)?), m)?;
        files.push(path);
    }
    Ok(files)
}

pub fn heat(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.config;
    prepare(&ctx.out)?;
    let manufactured = cfg.manufactured();
    let u0 = cfg.initial_data();
    let mut summary_table = Table::new(&[
        "n_cells",
        "h",
        "dt",
        "n_steps",
        "l2_star_final",
        "e_total",
        "e_l2_l2",
        "e_h1_l2",
        "e_hm1_dt_l2",
        "e_l2_final",
        "mpr_ratio",
    ]);
    let mut files = Vec::new();
    for &n in &cfg.n_cells {
        let sys = system(ctx, n)?;
        let ops = Operators::new(&sys, cfg.solver())?;
        let probe = FourierProbe::assemble(&sys, cfg.k_max)?;
        let h = sys.mesh.background.h_global;
        for (i, dt) in cfg.time_steps(h).into_iter().enumerate() {
            let hc = HeatConfig {
                scheme: cfg.scheme(),
                dt,
                t_final: cfg.t_final,
                stabilized_time: cfg.stabilized_time_derivative,
                solver: cfg.solver(),
            };
            let solver = HeatSolver::new(&ops, hc)?;
            let problem = HeatProblem { u0: &u0, forcing: forcing_of(&manufactured) };
            let stem = format!("heat_n{n}_dt{i}");
            let mut steps = Table::new(&[
                "step",
                "t",
                "l2_star",
                "h1_star",
                "vh_minus1",
                "hm1_star",
                "mean",
                "e_l2_star",
                "e_h1_star",
            ]);
            let mut errors = manufactured.as_ref().map(|f| ErrorAccumulator::new(&ops, &probe, f));
            let mut mpr = MprAccumulator::new(&ops, &probe);
            let mut last_l2 = 0.0;
            solver.run(&problem, |v| {
                let x = CoefVec::primal(v.u.to_vec());
                let norms = ops.norms(&x, &probe)?;
                let (el2, eh1) = match &manufactured {
                    Some(f) => {
                        let exact = f.at(v.time);
                        (Some(ops.l2_error(&exact, &x)), Some(ops.h1_error(&exact, &x)))
                    }
                    None => (None, None),
                };
                steps.push(vec![
                    v.index.into(),
                    v.time.into(),
                    norms.l2_star.into(),
                    norms.h1_star.into(),
                    norms.vh_minus1.into(),
                    norms.hm1_star.into(),
                    tracefem::heatsolver::mean_value(&sys, v.u).into(),
                    el2.into(),
                    eh1.into(),
                ]);
                last_l2 = norms.l2_star;
                if let Some(acc) = errors.as_mut() {
                    acc.observe(v);
                }
                mpr.observe(v)?;
                if cfg.vtk_every > 0 && v.index % cfg.vtk_every == 0 {
                    let path = ctx.out.join(format!("{stem}_{:06}.vtk", v.index));
                    let file = File::create(&path).map_err(tracefem::Error::from)?;
                    io::write_vtk(BufWriter::new(file), &sys.mesh, Some(("u", v.u)))?;
                    files.push(path);
                }
                Ok(())
            })?;
            files.push(steps.write_csv(&ctx.out, &stem)?);
            let forcing_norm = manufactured.as_ref().map_or(0.0, |f| forcing_hm1_l2(f, &hc));
            let ratio = diagnostics::max_regularity_ratio(&mpr.inputs(forcing_norm, u0.l2_norm_squared().sqrt()));
            let t = errors.map(|e| e.totals());
            summary_table.push(vec![
                n.into(),
                h.into(),
                hc.step_size().into(),
                hc.n_steps().into(),
                last_l2.into(),
                t.map(|t| t.total).into(),
                t.map(|t| t.l2_l2).into(),
                t.map(|t| t.h1_l2).into(),
                t.map(|t| t.hm1_dt_l2).into(),
                t.map(|t| t.l2_final).into(),
                ratio.into(),
            ]);
        }
    }
    files.insert(0, summary_table.write_csv(&ctx.out, "heat")?);
    Ok(Outcome { summary: vec![format!("{} heat runs", summary_table.rows.len())], files })
}

/// Dual-norm sandwich on `count` seeded random vectors.
pub fn dual_sandwich(
    ops: &Operators<'_>,
    probe: &FourierProbe,
    report: &ConstantsReport,
    seed: u64,
    count: usize,
) -> Result<bool, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = (report.norm_ph_h1star + report.c_inv_h) * (1.0 + SANDWICH_SLACK);
    for _ in 0..count {
        let x = CoefVec::primal((0..ops.n_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect());
        let dual = ops.dual_norm(&x, DualNormKind::Energy)?;
        let star = ops.hm1_star_norm(&x, probe);
        if dual > star + 1e-9 * star.max(1.0) || star > bound * dual {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `C_MPR` ratio of the configured data, with `Δt` from the configured rule.
fn mpr_ratio(ctx: &Context, ops: &Operators<'_>, probe: &FourierProbe, h: f64) -> Result<f64, CliError> {
    let cfg = &ctx.config;
    let u0 = cfg.initial_data();
    let field = cfg.manufactured();
    let hc = HeatConfig {
        scheme: cfg.scheme(),
        dt: cfg.time_steps(h)[0],
        t_final: cfg.t_final,
        stabilized_time: cfg.stabilized_time_derivative,
        solver: cfg.solver(),
    };
    let solver = HeatSolver::new(ops, hc)?;
    let mut mpr = MprAccumulator::new(ops, probe);
    solver.run(&HeatProblem { u0: &u0, forcing: forcing_of(&field) }, |v| mpr.observe(v))?;
    let f_norm = field.as_ref().map_or(0.0, |f| forcing_hm1_l2(f, &hc));
    Ok(diagnostics::max_regularity_ratio(&mpr.inputs(f_norm, u0.l2_norm_squared().sqrt())))
}

pub fn diagnose(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.config;
    prepare(&ctx.out)?;
    let mut table = Table::new(&[
        "n_cells",
        "h",
        "n_dofs",
        "k_max",
        "dt",
        "kappa_b",
        "kappa_b_star",
        "norm_ph_h1gamma",
        "norm_ph_h1star",
        "c_inv_h",
        "lambda_h",
        "inv_lambda_h",
        "c_b_minus",
        "c_star_lower",
        "c_star_upper",
        "kappa_p_star",
        "c_mpr_ratio",
        "max_residual",
        "ph_ordering",
        "lambda_le_one",
        "lambda_sandwich_lower",
        "lambda_sandwich_upper",
        "infsup_ordering",
        "dual_sandwich",
    ]);
    let mut summary = Vec::new();
    for &n in &cfg.n_cells {
        let sys = system(ctx, n)?;
        let ops = Operators::new(&sys, cfg.solver())?;
        let probe = FourierProbe::assemble(&sys, cfg.k_max)?;
        let h = sys.mesh.background.h_global;
        let input = ConstantsInput {
            n_cells: n,
            h,
            dts: &cfg.sweep_dt,
            t_final: cfg.t_final,
            literal: cfg.literal_eq_matrices,
            mean_zero: cfg.mean_zero,
        };
        let mut report = diagnostics::constants_report(&ops, &probe, &input, ctx.exec)?;
        if cfg.mpr {
            report.c_mpr_ratio = Some(mpr_ratio(ctx, &ops, &probe, h)?);
        }
        let (lo, hi) = report.lambda_sandwich(SANDWICH_SLACK);
        let checks = [
            report.norm_ph_h1star - report.norm_ph_h1gamma >= -1e-9,
            report.lambda_h <= 1.0 + 1e-9,
            lo,
            hi,
            report.c_star_lower <= report.c_star_upper,
            dual_sandwich(&ops, &probe, &report, cfg.seed, 50)?,
        ];
        let passed = checks.iter().filter(|&&c| c).count();
        summary.push(format!("n_cells = {n}: {passed}/{} checks pass", checks.len()));
        let mut rows: Vec<(Cell, Cell, Cell)> =
            report.conditions.iter().map(|c| (c.dt.into(), c.kappa_b.into(), c.kappa_b_star.into())).collect();
        if rows.is_empty() {
            rows.push((Cell::Empty, Cell::Empty, Cell::Empty));
        }
        for (dt, kb, kbs) in rows {
            let mut row = vec![
                n.into(),
                h.into(),
                sys.n_dofs().into(),
                cfg.k_max.into(),
                dt,
                kb,
                kbs,
                report.norm_ph_h1gamma.into(),
                report.norm_ph_h1star.into(),
                report.c_inv_h.into(),
                report.lambda_h.into(),
                report.inv_lambda_h.into(),
                report.c_b_minus.into(),
                report.c_star_lower.into(),
                report.c_star_upper.into(),
                report.kappa_p_star.into(),
                report.c_mpr_ratio.into(),
                report.max_residual.into(),
            ];
            row.extend(checks.iter().map(|&c| Cell::from(c)));
            table.push(row);
        }
    }
    Ok(Outcome { files: vec![table.write_csv(&ctx.out, "diagnose")?], summary })
}

pub fn dtsweep(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.config;
    prepare(&ctx.out)?;
    if cfg.sweep_dt.len() < 4 {
        return Err(CliError::Config("sweep_dt needs at least 4 steps".into()));
    }
    let mut table = Table::new(&["n_cells", "h", "dt", "dt_over_h2", "kappa_b", "kappa_b_star"]);
    table.meta("literal_eq_matrices", cfg.literal_eq_matrices);
    let mut summary = Vec::new();
    for &n in &cfg.n_cells {
        let sys = system(ctx, n)?;
        let h = sys.mesh.background.h_global;
        let rows = diagnostics::dt_sweep(&sys, &cfg.sweep_dt, cfg.literal_eq_matrices, ctx.exec)?;
        for r in &rows {
            table.push(vec![
                n.into(),
                h.into(),
                r.dt.into(),
                (r.dt / (h * h)).into(),
                r.kappa_b.into(),
                r.kappa_b_star.into(),
            ]);
        }
        let slope = diagnostics::small_dt_slope(&rows, 4);
        let plateau = diagnostics::plateau_ratio(&rows, h * h);
        table.meta(&format!("n_cells {n} kappa_b slope (4 smallest dt)"), fmt6(slope));
        table.meta(&format!("n_cells {n} kappa_b_star max/min for dt <= h^2"), fmt6(plateau));
        summary.push(format!("n_cells = {n}: kappa(B) slope {slope:.3}, kappa(B*) plateau ratio {plateau:.3}"));
    }
    Ok(Outcome { files: vec![table.write_csv(&ctx.out, "dtsweep")?, table.write_dat(&ctx.out, "dtsweep")?], summary })
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

pub fn converge(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.config;
    prepare(&ctx.out)?;
    let field: SeparableField = cfg
        .manufactured()
        .ok_or_else(|| CliError::Config("converge needs manufactured data (decaying or forced)".into()))?;
    for &n in &cfg.n_cells {
        band(cfg, n)?;
    }
    let spec = StudySpec {
        center: cfg.center(),
        radius: cfg.geometry.radius,
        bbox: cfg.bounding_box(),
        k_max: cfg.k_max,
        q_surf: cfg.q_surf,
        scheme: cfg.scheme(),
        dt_rule: cfg.dt_rule(),
        t_final: cfg.t_final,
        stabilized_time: cfg.stabilized_time_derivative,
        field,
        solver: cfg.solver(),
        exec: ctx.exec,
    };
    let study = convergence_study(&cfg.n_cells, &spec)?;
    let mut table = Table::new(&[
        "n_cells",
        "h",
        "dt",
        "n_dofs",
        "e_total",
        "e_l2_l2",
        "e_h1_l2",
        "e_hm1_dt_l2",
        "e_l2_initial",
        "e_l2_final",
        "proj_l2",
        "proj_h1",
        "mpr_ratio",
    ]);
    table.meta("dt_rule", &study.dt_rule);
    for r in &study.rows {
        table.push(vec![
            r.n_cells.into(),
            r.h.into(),
            r.dt.into(),
            r.n_dofs.into(),
            r.errors.total.into(),
            r.errors.l2_l2.into(),
            r.errors.h1_l2.into(),
            r.errors.hm1_dt_l2.into(),
            r.errors.l2_initial.into(),
            r.errors.l2_final.into(),
            r.proj_l2.into(),
            r.proj_h1.into(),
            r.mpr_ratio.into(),
        ]);
    }
    let rates = study.rates()?;
    let mut rate_table = Table::new(&["quantity", "rate"]);
    for (name, v) in [
        ("e_total", rates.total),
        ("e_l2_l2", rates.l2_l2),
        ("e_h1_l2", rates.h1_l2),
        ("proj_l2", rates.proj_l2),
        ("proj_h1", rates.proj_h1),
    ] {
        rate_table.push(vec![name.into(), v.into()]);
        table.meta(&format!("rate {name}"), fmt6(v));
    }
    Ok(Outcome {
        files: vec![
            table.write_csv(&ctx.out, "converge")?,
            table.write_dat(&ctx.out, "converge")?,
            rate_table.write_csv(&ctx.out, "converge_rates")?,
        ],
        summary: vec![format!(
            "{}; rates: total {:.3}, L2L2 {:.3}, projection L2 {:.3}",
            study.dt_rule, rates.total, rates.l2_l2, rates.proj_l2
        )],
    })
}
