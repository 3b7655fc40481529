//! Quadrature on the arcs `Γ ∩ T` and on the active triangles.

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{LevelSetSurface, Vec2};
use crate::mesh::{barycentric, point_in_triangle, signed_area, ActiveMesh};

const ROOT_PARAM_TOL: f64 = 1e-14;
const TANGENCY_TOL: f64 = 1e-14;
const MIN_ARC_WIDTH: f64 = 1e-12;

/// Angle interval `[theta0, theta1]` on the circle, with `theta0 ∈ [0, 2π)`
/// and `theta1 > theta0` (it may exceed `2π` when the arc wraps).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngleArc {
    pub theta0: f64,
    pub theta1: f64,
}

impl AngleArc {
    pub fn width(&self) -> f64 {
        self.theta1 - self.theta0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Intersection {
    pub arcs: Vec<AngleArc>,
    /// Set when an edge grazes the circle (near-zero discriminant).
    pub tangency: bool,
}

fn wrap_angle(t: f64) -> f64 {
    let a = t.rem_euclid(TAU);
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Maximal arcs of the circle that lie inside the closed triangle.
pub fn intersect_element(tri: &[Vec2; 3], center: Vec2, radius: f64) -> Result<Intersection> {
    let area = signed_area(tri).abs();
    let diam2 = (0..3).map(|k| (tri[(k + 1) % 3] - tri[k]).norm_squared()).fold(0.0, f64::max);
    if !(area > 1e-14 * diam2) {
        return Err(Error::SingularElement { element: usize::MAX, area });
    }

    let mut tangency = false;
    let mut angles = Vec::with_capacity(6);
    for k in 0..3 {
        let a = tri[k] - center;
        let d = tri[(k + 1) % 3] - tri[k];
        let qa = d.norm_squared();
        let qb = a.dot(&d);
        let qc = a.norm_squared() - radius * radius;
        let disc = qb * qb - qa * qc;
        let disc_n = disc / (qa * radius * radius);
        let mut roots = [f64::NAN; 2];
        if disc_n < 0.0 {
            continue;
        } else if disc_n < TANGENCY_TOL {
            tangency = true;
            roots[0] = -qb / qa;
        } else {
            let q = -(qb + qb.signum() * disc.sqrt());
            let q = if q == 0.0 { -disc.sqrt() } else { q };
            roots = [q / qa, qc / q];
        }
        for t in roots {
            if (-ROOT_PARAM_TOL..=1.0 + ROOT_PARAM_TOL).contains(&t) {
                let p = a + d * t.clamp(0.0, 1.0);
                angles.push(wrap_angle(p.y.atan2(p.x)));
            }
        }
    }

    let on_circle = |theta: f64| center + Vec2::new(theta.cos(), theta.sin()) * radius;
    let inside = |theta: f64| point_in_triangle(tri, on_circle(theta), 1e-14);

    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|b, a| (*b - *a).abs() < 1e-14);
    if angles.len() > 1 && angles[0] + TAU - angles[angles.len() - 1] < 1e-14 {
        angles.pop();
    }

    if angles.is_empty() {
        let arcs = if inside(0.0) { vec![AngleArc { theta0: 0.0, theta1: TAU }] } else { Vec::new() };
        return Ok(Intersection { arcs, tangency });
    }

    let n = angles.len();
    let mut pieces: Vec<AngleArc> = Vec::new();
    for i in 0..n {
        let t0 = angles[i];
        let t1 = if i + 1 < n { angles[i + 1] } else { angles[0] + TAU };
        if inside(0.5 * (t0 + t1)) {
            match pieces.last_mut() {
                Some(last) if last.theta1 == t0 => last.theta1 = t1,
                _ => pieces.push(AngleArc { theta0: t0, theta1: t1 }),
            }
        }
    }
    // fuse the last piece with the first across the 2π seam
    if pieces.len() > 1 {
        let (first, last) = (pieces[0], pieces[pieces.len() - 1]);
        if last.theta1 == first.theta0 + TAU {
            pieces.pop();
            pieces[0] = AngleArc { theta0: last.theta0, theta1: first.theta1 + TAU };
        }
    }
    pieces.retain(|a| a.width() >= MIN_ARC_WIDTH);
    Ok(Intersection { arcs: pieces, tangency })
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(q >= 1, "Gauss-Legendre needs at least one point");
    let mut x = vec![0.0; q];
    let mut w = vec![0.0; q];
    for i in 0..q.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..q {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = q as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[q - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[q - 1 - i] = w[i];
    }
    if q % 2 == 1 {
        x[q / 2] = 0.0;
    }
    (x, w)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceNode {
    pub point: Vec2,
    /// Arc-length weight.
    pub weight: f64,
    pub normal: Vec2,
    pub tangent: Vec2,
    pub theta: f64,
    pub bary: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeNode {
    pub point: Vec2,
    /// Area weight.
    pub weight: f64,
    pub bary: [f64; 3],
}

/// Gauss–Legendre rule in the angle variable; nodes lie on the circle.
pub fn surface_rule(arc: &AngleArc, center: Vec2, radius: f64, q: usize) -> Vec<SurfaceNode> {
    let (x, w) = gauss_legendre(q);
    let half = 0.5 * arc.width();
    let mid = 0.5 * (arc.theta0 + arc.theta1);
    x.iter()
        .zip(&w)
        .map(|(&xi, &wi)| {
            let theta = mid + half * xi;
            let normal = Vec2::new(theta.cos(), theta.sin());
            SurfaceNode {
                point: center + normal * radius,
                weight: radius * half * wi,
                normal,
                tangent: Vec2::new(-normal.y, normal.x),
                theta: wrap_angle(theta),
                bary: [0.0; 3],
            }
        })
        .collect()
}

/// Six-point symmetric rule, exact for total degree 4.
pub fn volume_rule(tri: &[Vec2; 3]) -> Vec<VolumeNode> {
    let s10 = 10f64.sqrt();
    let r = (38.0 - 44.0 * (0.4f64).sqrt()).sqrt();
    let a = (8.0 - s10 + r) / 18.0;
    let b = (8.0 - s10 - r) / 18.0;
    let t = (213125.0 - 53320.0 * s10).sqrt();
    let wa = (620.0 + t) / 3720.0;
    let wb = (620.0 - t) / 3720.0;
    let area = signed_area(tri).abs();
    let mut nodes = Vec::with_capacity(6);
    for (c, w) in [(a, wa), (b, wb)] {
        let e = 1.0 - 2.0 * c;
        for bary in [[e, c, c], [c, e, c], [c, c, e]] {
            let point = tri[0] * bary[0] + tri[1] * bary[1] + tri[2] * bary[2];
            nodes.push(VolumeNode { point, weight: w * area, bary });
        }
    }
    nodes
}

/// Smallest admissible points-per-arc for Fourier probes up to `k_max`.
pub fn required_surface_order(k_max: usize, h_max: f64, radius: f64) -> usize {
    let osc = (k_max as f64 * h_max / radius).ceil() as usize + 4;
    osc.max(10)
}

#[derive(Clone, Debug)]
pub struct ElementCut {
    pub arcs: Vec<AngleArc>,
    pub tangency: bool,
    pub surface: Vec<SurfaceNode>,
    pub volume: Vec<VolumeNode>,
}

/// Per-element arcs and quadrature for the whole band.
#[derive(Clone, Debug)]
pub struct CutTopology {
    pub center: Vec2,
    pub radius: f64,
    pub q_surf: usize,
    pub q_vol: usize,
    pub elements: Vec<ElementCut>,
}

impl CutTopology {
    pub fn build(mesh: &ActiveMesh, surface: &LevelSetSurface, q_surf: usize, exec: Execution) -> Result<Self> {
        let (center, radius) = surface
            .as_circle()
            .ok_or_else(|| Error::Unsupported("cut quadrature is only available for circles".into()))?;
        if q_surf == 0 {
            return Err(Error::InvalidConfig("q_surf must be at least 1".into()));
        }
        let elements = exec.try_map_range(mesh.n_elements(), |e| -> Result<ElementCut> {
            let tri = mesh.element(e);
            let cut = intersect_element(&tri, center, radius).map_err(|err| match err {
                Error::SingularElement { area, .. } => Error::SingularElement { element: e, area },
                other => other,
            })?;
            let mut surface = Vec::with_capacity(cut.arcs.len() * q_surf);
            for arc in &cut.arcs {
                for mut node in surface_rule(arc, center, radius, q_surf) {
                    node.bary = barycentric(&tri, node.point);
                    surface.push(node);
                }
            }
            Ok(ElementCut { arcs: cut.arcs, tangency: cut.tangency, surface, volume: volume_rule(&tri) })
        })?;
        Ok(Self { center, radius, q_surf, q_vol: 6, elements })
    }

    pub fn total_arc_length(&self) -> f64 {
        self.elements.iter().flat_map(|e| &e.surface).map(|n| n.weight).sum()
    }

    pub fn arc_counts(&self) -> Vec<usize> {
        self.elements.iter().map(|e| e.arcs.len()).collect()
    }

    pub fn tangency_count(&self) -> usize {
        self.elements.iter().filter(|e| e.tangency).count()
    }

    /// Sum of the gaps and overlaps when all arcs are laid around the circle.
    pub fn tiling_defect(&self) -> f64 {
        let mut arcs: Vec<AngleArc> = self.elements.iter().flat_map(|e| e.arcs.iter().copied()).collect();
        if arcs.is_empty() {
            return TAU;
        }
        arcs.sort_by(|a, b| a.theta0.total_cmp(&b.theta0));
        let mut defect = 0.0;
        for i in 0..arcs.len() {
            let next = if i + 1 < arcs.len() { arcs[i + 1].theta0 } else { arcs[0].theta0 + TAU };
            defect += (next - arcs[i].theta1).abs();
        }
        defect
    }

    pub fn integrate<F: Fn(&SurfaceNode) -> f64>(&self, f: F) -> f64 {
        self.elements.iter().flat_map(|e| &e.surface).map(|n| n.weight * f(n)).sum()
    }

    /// Largest difference of `∫ cos(kθ)`, `k <= k_max`, between this rule
    /// and the same arcs integrated with `q_surf + 4` points.
    pub fn spectral_self_test(&self, k_max: usize) -> f64 {
        let finer: Vec<SurfaceNode> = self
            .elements
            .iter()
            .flat_map(|e| e.arcs.iter())
            .flat_map(|a| surface_rule(a, self.center, self.radius, self.q_surf + 4))
            .collect();
        (0..=k_max)
            .map(|k| {
                let k = k as f64;
                let coarse = self.integrate(|n| (k * n.theta).cos());
                let fine: f64 = finer.iter().map(|n| n.weight * (k * n.theta).cos()).sum();
                (coarse - fine).abs()
            })
            .fold(0.0, f64::max)
    }
}
