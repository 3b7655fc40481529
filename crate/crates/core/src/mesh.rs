//! Structured background triangulation and the band of elements cut by the curve.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::geometry::{LevelSetSurface, SurfaceKind, Vec2};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub min: Vec2,
    pub max: Vec2,
}

impl BoundingBox {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Self { min, max }
    }

    pub fn square(lo: f64, hi: f64) -> Self {
        Self::new(Vec2::new(lo, lo), Vec2::new(hi, hi))
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Uniform grid of squares, each split into two triangles along its
/// south-west to north-east diagonal.
#[derive(Clone, Debug)]
pub struct BackgroundMesh {
    pub bbox: BoundingBox,
    pub n_cells: usize,
    pub vertices: Vec<Vec2>,
    pub triangles: Vec<[usize; 3]>,
    pub h_global: f64,
}

impl BackgroundMesh {
    pub fn build(bbox: BoundingBox, n_cells: usize) -> Result<Self> {
        let (w, h) = (bbox.width(), bbox.height());
        if n_cells == 0 || !(w > 0.0) || !(h > 0.0) || !w.is_finite() || !h.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "background mesh needs n_cells >= 1 and a nondegenerate box (n_cells = {n_cells}, size {w} x {h})"
            )));
        }
        let n = n_cells;
        let (dx, dy) = (w / n as f64, h / n as f64);
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push(Vec2::new(bbox.min.x + i as f64 * dx, bbox.min.y + j as f64 * dy));
            }
        }
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        Ok(Self { bbox, n_cells, vertices, triangles, h_global: w.max(h) / n as f64 })
    }

    pub fn triangle(&self, t: usize) -> [Vec2; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        signed_area(&self.triangle(t))
    }

    pub fn diameter(&self, t: usize) -> f64 {
        diameter(&self.triangle(t))
    }
}

pub fn signed_area(tri: &[Vec2; 3]) -> f64 {
    let (e1, e2) = (tri[1] - tri[0], tri[2] - tri[0]);
    0.5 * (e1.x * e2.y - e1.y * e2.x)
}

/// Longest edge.
pub fn diameter(tri: &[Vec2; 3]) -> f64 {
    (tri[1] - tri[0]).norm().max((tri[2] - tri[1]).norm()).max((tri[0] - tri[2]).norm())
}

/// Barycentric coordinates of `p` with respect to `tri`.
pub fn barycentric(tri: &[Vec2; 3], p: Vec2) -> [f64; 3] {
    let area2 = 2.0 * signed_area(tri);
    let sub = |a: Vec2, b: Vec2| {
        let (e1, e2) = (a - p, b - p);
        (e1.x * e2.y - e1.y * e2.x) / area2
    };
    [sub(tri[1], tri[2]), sub(tri[2], tri[0]), sub(tri[0], tri[1])]
}

pub fn point_in_triangle(tri: &[Vec2; 3], p: Vec2, tol: f64) -> bool {
    barycentric(tri, p).iter().all(|&l| l >= -tol)
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = b - a;
    let t = ((p - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
    (a + d * t - p).norm()
}

/// Euclidean distance from `p` to the closed triangle.
pub fn point_triangle_distance(tri: &[Vec2; 3], p: Vec2) -> f64 {
    if point_in_triangle(tri, p, 0.0) {
        return 0.0;
    }
    (0..3).map(|i| point_segment_distance(p, tri[i], tri[(i + 1) % 3])).fold(f64::INFINITY, f64::min)
}

/// The band of background triangles that meet the curve, with its P1 dof numbering.
#[derive(Clone, Debug)]
pub struct ActiveMesh {
    pub background: BackgroundMesh,
    /// Background triangle index of each active element.
    pub active: Vec<usize>,
    /// Background vertex of each dof, in increasing vertex order.
    pub dof_vertex: Vec<usize>,
    /// Dof indices of the three vertices of each active element.
    pub element_dofs: Vec<[usize; 3]>,
    h_t: Vec<f64>,
}

impl ActiveMesh {
    pub fn select(background: BackgroundMesh, surface: &LevelSetSurface) -> Result<Self> {
        let active: Vec<usize> =
            (0..background.triangles.len()).filter(|&t| is_cut(&background.triangle(t), surface)).collect();
        if active.is_empty() {
            return Err(Error::EmptyIntersection);
        }
        Ok(Self::from_elements(background, active))
    }

    /// Builds the band from an explicit list of background triangles.
    pub fn from_elements(background: BackgroundMesh, active: Vec<usize>) -> Self {
        let used: BTreeSet<usize> = active.iter().flat_map(|&t| background.triangles[t]).collect();
        let dof_vertex: Vec<usize> = used.into_iter().collect();
        let mut vertex_dof = vec![usize::MAX; background.vertices.len()];
        for (d, &v) in dof_vertex.iter().enumerate() {
            vertex_dof[v] = d;
        }
        let element_dofs = active.iter().map(|&t| background.triangles[t].map(|v| vertex_dof[v])).collect();
        let h_t = active.iter().map(|&t| background.diameter(t)).collect();
        Self { background, active, dof_vertex, element_dofs, h_t }
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_vertex.len()
    }

    pub fn n_elements(&self) -> usize {
        self.active.len()
    }

    pub fn element_sizes(&self) -> &[f64] {
        &self.h_t
    }

    /// Largest active element diameter.
    pub fn h_max(&self) -> f64 {
        self.h_t.iter().copied().fold(0.0, f64::max)
    }

    pub fn h_min(&self) -> f64 {
        self.h_t.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn element(&self, e: usize) -> [Vec2; 3] {
        self.background.triangle(self.active[e])
    }

    pub fn dof_point(&self, d: usize) -> Vec2 {
        self.background.vertices[self.dof_vertex[d]]
    }

    fn edges(&self) -> BTreeMap<(usize, usize), Vec<usize>> {
        let mut edges: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (e, dofs) in self.element_dofs.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (dofs[k], dofs[(k + 1) % 3]);
                edges.entry((a.min(b), a.max(b))).or_default().push(e);
            }
        }
        edges
    }

    /// `V - E + F` of the simplicial complex formed by the active elements.
    pub fn euler_characteristic(&self) -> i64 {
        self.n_dofs() as i64 - self.edges().len() as i64 + self.n_elements() as i64
    }

    /// Active elements that share no edge with another active element.
    pub fn isolated_elements(&self) -> Vec<usize> {
        let mut has_neighbor = vec![false; self.n_elements()];
        for elems in self.edges().values() {
            if elems.len() > 1 {
                for &e in elems {
                    has_neighbor[e] = true;
                }
            }
        }
        (0..self.n_elements()).filter(|&e| !has_neighbor[e]).collect()
    }

    /// Number of connected components under edge adjacency.
    pub fn edge_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.n_elements()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for elems in self.edges().values() {
            for w in elems.windows(2) {
                let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        (0..self.n_elements()).filter(|&e| find(&mut parent, e) == e).count()
    }
}

fn is_cut(tri: &[Vec2; 3], surface: &LevelSetSurface) -> bool {
    match surface.kind() {
        SurfaceKind::Circle { center, radius } => {
            let near = point_triangle_distance(tri, *center);
            let far = tri.iter().map(|v| (v - center).norm()).fold(0.0, f64::max);
            near <= *radius && *radius <= far
        }
        SurfaceKind::Generic(_) => {
            const SAMPLES_PER_EDGE: usize = 6;
            let mut has_neg = false;
            let mut has_pos = false;
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                for s in 0..=SAMPLES_PER_EDGE {
                    let x = a + (b - a) * (s as f64 / SAMPLES_PER_EDGE as f64);
                    let v = surface.value(x);
                    if v == 0.0 {
                        return true;
                    }
                    has_neg |= v < 0.0;
                    has_pos |= v > 0.0;
                }
            }
            has_neg && has_pos
        }
    }
}
