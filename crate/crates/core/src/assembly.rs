//! Gram matrices of the P1 trace space, stabilizations, loads and the
//! Fourier probe used for dual norms on the circle.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::cutquad::{required_surface_order, CutTopology, SurfaceNode};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::Vec2;
use crate::mesh::{signed_area, ActiveMesh};
use crate::sparse::CsrMatrix;

pub type Local = [[f64; 3]; 3];

/// Gradients of the three barycentric basis functions.
pub fn p1_gradients(tri: &[Vec2; 3]) -> [Vec2; 3] {
    let two_a = 2.0 * signed_area(tri);
    std::array::from_fn(|i| {
        let (pj, pk) = (tri[(i + 1) % 3], tri[(i + 2) % 3]);
        Vec2::new(pj.y - pk.y, pk.x - pj.x) / two_a
    })
}

/// Per-element contributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementGrams {
    /// Surface mass on `Γ ∩ T`.
    pub mass: Local,
    /// Tangential stiffness on `Γ ∩ T`.
    pub stiffness: Local,
    /// Normal-derivative Gram `∫_T (n·∇φ_i)(n·∇φ_j)`.
    pub normal: Local,
    pub gradients: [Vec2; 3],
}

fn element_grams(mesh: &ActiveMesh, cut: &CutTopology, e: usize) -> Result<ElementGrams> {
    let tri = mesh.element(e);
    let area = signed_area(&tri);
    let h = mesh.element_sizes()[e];
    if !(area > 1e-14 * h * h) {
        return Err(Error::SingularElement { element: e, area });
    }
    let grads = p1_gradients(&tri);
    let ec = &cut.elements[e];
    let mut mass = [[0.0; 3]; 3];
    let mut stiffness = [[0.0; 3]; 3];
    let mut normal = [[0.0; 3]; 3];
    for node in &ec.surface {
        let tg: [f64; 3] = std::array::from_fn(|i| node.tangent.dot(&grads[i]));
        for i in 0..3 {
            for j in 0..3 {
                mass[i][j] += node.weight * node.bary[i] * node.bary[j];
                stiffness[i][j] += node.weight * tg[i] * tg[j];
            }
        }
    }
    for node in &ec.volume {
        let d = node.point - cut.center;
        let r = d.norm();
        if r == 0.0 {
            return Err(Error::DegeneratePoint(node.point.x, node.point.y));
        }
        let n = d / r;
        let ng: [f64; 3] = std::array::from_fn(|i| n.dot(&grads[i]));
        for i in 0..3 {
            for j in 0..3 {
                normal[i][j] += node.weight * ng[i] * ng[j];
            }
        }
    }
    Ok(ElementGrams { mass, stiffness, normal, gradients: grads })
}

/// All assembled matrices of the method on one band.
#[derive(Clone, Debug)]
pub struct FemSystem {
    pub mesh: ActiveMesh,
    pub cut: CutTopology,
    /// Element sizes used in the stabilization weights.
    pub h_t: Vec<f64>,
    pub local: Vec<ElementGrams>,
    pub m: CsrMatrix,
    pub a: CsrMatrix,
    /// Unweighted `Σ_T S_T`.
    pub s: CsrMatrix,
    pub s_m1: CsrMatrix,
    pub s0: CsrMatrix,
    pub s1: CsrMatrix,
    /// `M + S₀`.
    pub m_star: CsrMatrix,
    /// `M + A + S₁`.
    pub k_star: CsrMatrix,
    /// `M + A + S₁ + S₀`.
    pub k_aux: CsrMatrix,
    /// `A + S₁`.
    pub a_star: CsrMatrix,
    /// `Σ_T h_T² (M_T + h_T S_T)`.
    pub d: CsrMatrix,
}

impl FemSystem {
    pub fn assemble(mesh: ActiveMesh, cut: CutTopology, exec: Execution) -> Result<Self> {
        let sizes = mesh.element_sizes().to_vec();
        Self::assemble_with_sizes(mesh, cut, sizes, exec)
    }

    /// Assembly with explicit stabilization weights `h_T`.
    pub fn assemble_with_sizes(mesh: ActiveMesh, cut: CutTopology, h_t: Vec<f64>, exec: Execution) -> Result<Self> {
        if cut.elements.len() != mesh.n_elements() || h_t.len() != mesh.n_elements() {
            return Err(Error::InvalidConfig("cut topology does not match the active mesh".into()));
        }
        let local = exec.try_map_range(mesh.n_elements(), |e| element_grams(&mesh, &cut, e))?;
        let n = mesh.n_dofs();
        let gather = |weight: &dyn Fn(usize, &ElementGrams, usize, usize) -> f64| {
            let mut t = Vec::with_capacity(9 * local.len());
            for (e, (dofs, g)) in mesh.element_dofs.iter().zip(&local).enumerate() {
                for i in 0..3 {
                    for j in 0..3 {
                        t.push((dofs[i], dofs[j], weight(e, g, i, j)));
                    }
                }
            }
            CsrMatrix::from_triplets(n, n, &t)
        };
        let m = gather(&|_, g, i, j| g.mass[i][j]);
        let a = gather(&|_, g, i, j| g.stiffness[i][j]);
        let s = gather(&|_, g, i, j| g.normal[i][j]);
        let s_m1 = gather(&|e, g, i, j| h_t[e].powi(3) * g.normal[i][j]);
        let s0 = gather(&|e, g, i, j| h_t[e] * g.normal[i][j]);
        let s1 = gather(&|e, g, i, j| g.normal[i][j] / h_t[e]);
        let d = gather(&|e, g, i, j| h_t[e].powi(2) * (g.mass[i][j] + h_t[e] * g.normal[i][j]));
        let m_star = CsrMatrix::lin_comb(&[(1.0, &m), (1.0, &s0)]);
        let a_star = CsrMatrix::lin_comb(&[(1.0, &a), (1.0, &s1)]);
        let k_star = CsrMatrix::lin_comb(&[(1.0, &m), (1.0, &a_star)]);
        let k_aux = CsrMatrix::lin_comb(&[(1.0, &k_star), (1.0, &s0)]);
        Ok(Self { mesh, cut, h_t, local, m, a, s, s_m1, s0, s1, m_star, k_star, k_aux, a_star, d })
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_dofs()
    }

    pub fn radius(&self) -> f64 {
        self.cut.radius
    }

    pub fn center(&self) -> Vec2 {
        self.cut.center
    }

    /// Surface nodes with the dofs of their host element.
    pub fn surface_nodes(&self) -> impl Iterator<Item = (&[usize; 3], &SurfaceNode)> + '_ {
        self.mesh
            .element_dofs
            .iter()
            .zip(&self.cut.elements)
            .flat_map(|(dofs, ec)| ec.surface.iter().map(move |n| (dofs, n)))
    }

    /// `b_i = Σ_q w_q f(x_q) φ_i(x_q)`.
    pub fn load(&self, f: &dyn Fn(Vec2) -> f64) -> Vec<f64> {
        let mut b = vec![0.0; self.n_dofs()];
        for (dofs, node) in self.surface_nodes() {
            let v = node.weight * f(node.point);
            for i in 0..3 {
                b[dofs[i]] += v * node.bary[i];
            }
        }
        b
    }

    /// Trace values of a coefficient vector at every surface node.
    pub fn trace_values(&self, x: &[f64]) -> Vec<f64> {
        self.surface_nodes().map(|(d, n)| n.bary[0] * x[d[0]] + n.bary[1] * x[d[1]] + n.bary[2] * x[d[2]]).collect()
    }

    /// Tangential derivative `t·∇v_h` at every surface node.
    pub fn trace_tangential_derivatives(&self, x: &[f64]) -> Vec<f64> {
        self.mesh
            .element_dofs
            .iter()
            .zip(&self.local)
            .zip(&self.cut.elements)
            .flat_map(|((dofs, g), ec)| {
                let grad = g.gradients[0] * x[dofs[0]] + g.gradients[1] * x[dofs[1]] + g.gradients[2] * x[dofs[2]];
                ec.surface.iter().map(move |n| n.tangent.dot(&grad))
            })
            .collect()
    }
}

/// Truncated `L²(Γ)`-orthonormal Fourier basis ordered `[1, cos θ, sin θ, cos 2θ, …]`.
#[derive(Clone, Debug)]
pub struct FourierProbe {
    pub k_max: usize,
    pub radius: f64,
    pub center: Vec2,
    /// Diagonal `H¹(Γ)` Gram `1 + k²/R²`.
    pub h1: Vec<f64>,
    /// Diagonal `H⁻¹(Γ)` weights `1 / (1 + k²/R²)`.
    pub hm1: Vec<f64>,
    /// `G[i, m] = (φ_i, e_m)_Γ`.
    pub g: DMatrix<f64>,
    /// `max |(e_m, e_n)_h − δ_mn|` under the assembled rule.
    pub orthonormality_error: f64,
}

pub fn wavenumber(m: usize) -> usize {
    m.div_ceil(2)
}

impl FourierProbe {
    pub fn n_modes(k_max: usize) -> usize {
        2 * k_max + 1
    }

    pub fn assemble(system: &FemSystem, k_max: usize) -> Result<Self> {
        let radius = system.radius();
        let required = required_surface_order(k_max, system.mesh.h_max(), radius);
        if system.cut.q_surf < required {
            return Err(Error::AliasRisk { q_surf: system.cut.q_surf, k_max, required });
        }
        let n_modes = Self::n_modes(k_max);
        let nodes: Vec<(&[usize; 3], &SurfaceNode)> = system.surface_nodes().collect();
        let mut e = DMatrix::zeros(nodes.len(), n_modes);
        let mut ew = DMatrix::zeros(nodes.len(), n_modes);
        let mut g = DMatrix::zeros(system.n_dofs(), n_modes);
        let c0 = 1.0 / (2.0 * PI * radius).sqrt();
        let ck = 1.0 / (PI * radius).sqrt();
        for (q, (dofs, node)) in nodes.iter().enumerate() {
            for m in 0..n_modes {
                let k = wavenumber(m) as f64;
                let val = match m {
                    0 => c0,
                    _ if m % 2 == 1 => ck * (k * node.theta).cos(),
                    _ => ck * (k * node.theta).sin(),
                };
                e[(q, m)] = val;
                ew[(q, m)] = val * node.weight;
                for i in 0..3 {
                    g[(dofs[i], m)] += node.weight * node.bary[i] * val;
                }
            }
        }
        let gram = e.transpose() * ew;
        let mut orthonormality_error: f64 = 0.0;
        for i in 0..n_modes {
            for j in 0..n_modes {
                let target = if i == j { 1.0 } else { 0.0 };
                orthonormality_error = orthonormality_error.max((gram[(i, j)] - target).abs());
            }
        }
        let h1: Vec<f64> = (0..n_modes).map(|m| 1.0 + (wavenumber(m) as f64 / radius).powi(2)).collect();
        let hm1 = h1.iter().map(|v| 1.0 / v).collect();
        Ok(Self { k_max, radius, center: system.center(), h1, hm1, g, orthonormality_error })
    }

    pub fn n(&self) -> usize {
        self.h1.len()
    }

    pub fn basis_value(&self, m: usize, theta: f64) -> f64 {
        let k = wavenumber(m) as f64;
        match m {
            0 => 1.0 / (2.0 * PI * self.radius).sqrt(),
            _ if m % 2 == 1 => (k * theta).cos() / (PI * self.radius).sqrt(),
            _ => (k * theta).sin() / (PI * self.radius).sqrt(),
        }
    }

    /// `c = Gᵀ x`: coefficients of the functional `w ↦ (v_h, w)_Γ`.
    pub fn coefficients(&self, x: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.n()];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (m, cm) in c.iter_mut().enumerate() {
                *cm += self.g[(i, m)] * xi;
            }
        }
        c
    }

    /// Riesz data `b = G c` of `Σ_m c_m e_m`.
    pub fn load(&self, c: &[f64]) -> Vec<f64> {
        let n = self.g.nrows();
        (0..n).map(|i| c.iter().enumerate().map(|(m, cm)| self.g[(i, m)] * cm).sum()).collect()
    }

    /// Truncated `H⁻¹(Γ)` norm of the functional with coefficients `c`.
    pub fn hm1_norm(&self, c: &[f64]) -> f64 {
        c.iter().zip(&self.hm1).map(|(c, w)| c * c * w).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LevelSetSurface;
    use crate::mesh::{BackgroundMesh, BoundingBox};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::TAU;

    pub(crate) fn system(n: usize, c: Vec2, r: f64, q: usize) -> FemSystem {
        let s = LevelSetSurface::circle(c, r).unwrap();
        let bg = BackgroundMesh::build(BoundingBox::square(-1.5, 1.5), n).unwrap();
        let mesh = ActiveMesh::select(bg, &s).unwrap();
        let cut = CutTopology::build(&mesh, &s, q, Execution::Sequential).unwrap();
        FemSystem::assemble(mesh, cut, Execution::Sequential).unwrap()
    }

    fn ones(n: usize) -> Vec<f64> {
        vec![1.0; n]
    }

    #[test]
    fn gradients_of_reference_triangle() {
        let g = p1_gradients(&[Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)]);
        assert_abs_diff_eq!(g[0], Vec2::new(-1.0, -1.0));
        assert_abs_diff_eq!(g[1], Vec2::new(1.0, 0.0));
        assert_abs_diff_eq!(g[2], Vec2::new(0.0, 1.0));
    }

    #[test]
    fn constants_and_circumference() {
        let sys = system(48, Vec2::new(0.0, 0.0), 1.0, 10);
        let one = ones(sys.n_dofs());
        assert_abs_diff_eq!(sys.m.quad_form(&one) / TAU, 1.0, epsilon = 1e-10);
        let scale = sys.s.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let kernel = sys.a.quad_form(&one).abs()
            + sys.s_m1.quad_form(&one).abs()
            + sys.s0.quad_form(&one).abs()
            + sys.s1.quad_form(&one).abs();
        assert!(kernel <= 1e-12 * scale.max(1.0), "kernel defect {kernel}");
        for m in [&sys.a, &sys.s1, &sys.s0, &sys.s_m1] {
            assert!(m.mul_vec(&one).iter().all(|v| v.abs() <= 1e-10));
        }
    }

    #[test]
    fn matrices_are_symmetric() {
        let sys = system(32, Vec2::new(0.013, -0.02), 0.9, 10);
        for m in [&sys.m, &sys.a, &sys.s0, &sys.m_star, &sys.k_star, &sys.k_aux, &sys.d] {
            assert!(m.symmetry_error() <= 1e-13);
        }
    }

    #[test]
    fn scaling_audit() {
        let sys = system(24, Vec2::new(0.0, 0.0), 1.0, 10);
        let doubled: Vec<f64> = sys.h_t.iter().map(|h| 2.0 * h).collect();
        let big =
            FemSystem::assemble_with_sizes(sys.mesh.clone(), sys.cut.clone(), doubled, Execution::Sequential).unwrap();
        for (a, b, f) in [(&sys.s0, &big.s0, 2.0), (&sys.s1, &big.s1, 0.5), (&sys.s_m1, &big.s_m1, 8.0)] {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_abs_diff_eq!(f * x, y, epsilon = 1e-14 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn loads() {
        let sys = system(48, Vec2::new(0.0, 0.0), 1.0, 10);
        let b = sys.load(&|_| 1.0);
        let row_sums = sys.m.mul_vec(&ones(sys.n_dofs()));
        for (x, y) in b.iter().zip(&row_sums) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        let b = sys.load(&|p| p.x);
        assert_abs_diff_eq!(b.iter().sum::<f64>(), 0.0, epsilon = 1e-10);
        let b = sys.load(&|p| p.x * p.x);
        assert_abs_diff_eq!(b.iter().sum::<f64>(), PI, epsilon = 1e-10);
    }

    #[test]
    fn parallel_assembly_is_bit_identical() {
        let s = LevelSetSurface::circle(Vec2::new(0.02, 0.01), 1.0).unwrap();
        let bg = BackgroundMesh::build(BoundingBox::square(-1.5, 1.5), 40).unwrap();
        let mesh = ActiveMesh::select(bg, &s).unwrap();
        let cut = CutTopology::build(&mesh, &s, 10, Execution::Parallel).unwrap();
        let a = FemSystem::assemble(mesh.clone(), cut.clone(), Execution::Sequential).unwrap();
        let b = FemSystem::assemble(mesh, cut, Execution::Parallel).unwrap();
        assert_eq!(a.k_aux, b.k_aux);
        assert_eq!(a.d, b.d);
    }

    #[test]
    fn fourier_probe_audits() {
        let sys = system(48, Vec2::new(0.0, 0.0), 1.0, 10);
        assert!(matches!(FourierProbe::assemble(&sys, 128), Err(Error::AliasRisk { .. })));
        let q = required_surface_order(64, sys.mesh.h_max(), 1.0);
        let sys = system(48, Vec2::new(0.0, 0.0), 1.0, q);
        let probe = FourierProbe::assemble(&sys, 32).unwrap();
        assert!(probe.orthonormality_error <= 1e-9);
        let row_sums = sys.m.mul_vec(&ones(sys.n_dofs()));
        for i in 0..sys.n_dofs() {
            assert_abs_diff_eq!(probe.g[(i, 0)], row_sums[i] / TAU.sqrt(), epsilon = 1e-10);
        }
        for k in 1..=64 {
            let kk = k as f64;
            let nrm = sys.cut.integrate(|n| (kk * n.theta).cos().powi(2));
            assert_abs_diff_eq!(nrm, PI, epsilon = 1e-10);
        }
        let one = ones(sys.n_dofs());
        assert_abs_diff_eq!(probe.hm1_norm(&probe.coefficients(&one)), TAU.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn laplace_beltrami_spectrum() {
        let sys = system(96, Vec2::new(0.0, 0.0), 1.0, 10);
        let l = crate::dense::cholesky_lower(sys.m_star.to_dense()).unwrap();
        let li = l.try_inverse().unwrap();
        let c = &li * sys.a_star.to_dense() * li.transpose();
        let ev = crate::dense::eigenvalues(c);
        assert!(ev[0].abs() <= 1e-8);
        for (got, want) in ev[1..5].iter().zip([1.0, 1.0, 4.0, 4.0]) {
            assert!((got / want - 1.0).abs() <= 0.02, "eigenvalue {got} vs {want}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use std::sync::OnceLock;

        fn shared() -> &'static FemSystem {
            static SYS: OnceLock<FemSystem> = OnceLock::new();
            SYS.get_or_init(|| system(32, Vec2::new(0.017, 0.003), 1.0, 10))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn scaling_duality(seed in proptest::collection::vec(-1.0f64..1.0, 1..8)) {
                let sys = shared();
                let x: Vec<f64> = (0..sys.n_dofs()).map(|i| seed[i % seed.len()] * ((i * 7 % 13) as f64 - 6.0)).collect();
                let s0 = sys.s0.quad_form(&x);
                let s1 = sys.s1.quad_form(&x);
                let sm1 = sys.s_m1.quad_form(&x);
                prop_assert!(s0 * s0 <= s1 * sm1 * (1.0 + 1e-12) + 1e-12);
                // all elements of the structured mesh share one diameter, so the bound is attained
                prop_assert!((s0 * s0 - s1 * sm1).abs() <= 1e-12 * (s0 * s0).max(1e-300));
            }
        }
    }
}
