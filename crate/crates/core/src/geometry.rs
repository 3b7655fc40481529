//! Level-set description of the closed curve and its closest-point map.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::mesh::ActiveMesh;

pub type Vec2 = Vector2<f64>;

/// A smooth level-set function whose zero set is the curve.
pub trait LevelSet: Send + Sync + fmt::Debug {
    fn value(&self, x: Vec2) -> f64;
    fn gradient(&self, x: Vec2) -> Vec2;
    fn hessian(&self, x: Vec2) -> Matrix2<f64>;
    /// Upper bound on the curvature of the zero level set.
    fn curvature_bound(&self) -> f64;
}

/// `|x - c| - R` evaluated through the generic level-set path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialLevelSet {
    pub center: Vec2,
    pub radius: f64,
}

impl LevelSet for RadialLevelSet {
    fn value(&self, x: Vec2) -> f64 {
        (x - self.center).norm() - self.radius
    }

    fn gradient(&self, x: Vec2) -> Vec2 {
        let d = x - self.center;
        let r = d.norm();
        if r == 0.0 {
            Vec2::zeros()
        } else {
            d / r
        }
    }

    fn hessian(&self, x: Vec2) -> Matrix2<f64> {
        let d = x - self.center;
        let r = d.norm();
        if r == 0.0 {
            return Matrix2::zeros();
        }
        let n = d / r;
        (Matrix2::identity() - n * n.transpose()) / r
    }

    fn curvature_bound(&self) -> f64 {
        1.0 / self.radius
    }
}

#[derive(Clone, Debug)]
pub enum SurfaceKind {
    Circle { center: Vec2, radius: f64 },
    Generic(Arc<dyn LevelSet>),
}

#[derive(Clone, Debug)]
pub struct LevelSetSurface {
    kind: SurfaceKind,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl LevelSetSurface {
    pub fn circle(center: Vec2, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) || !center.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "circle needs a finite center and positive radius, got radius {radius}"
            )));
        }
        Ok(Self { kind: SurfaceKind::Circle { center, radius }, newton_tol: 1e-13, newton_max_iter: 50 })
    }

    pub fn generic(level_set: Arc<dyn LevelSet>) -> Self {
        Self { kind: SurfaceKind::Generic(level_set), newton_tol: 1e-13, newton_max_iter: 50 }
    }

    pub fn with_newton(mut self, tol: f64, max_iter: usize) -> Self {
        self.newton_tol = tol;
        self.newton_max_iter = max_iter;
        self
    }

    pub fn kind(&self) -> &SurfaceKind {
        &self.kind
    }

    /// Center and radius when the surface is an analytic circle.
    pub fn as_circle(&self) -> Option<(Vec2, f64)> {
        match self.kind {
            SurfaceKind::Circle { center, radius } => Some((center, radius)),
            SurfaceKind::Generic(_) => None,
        }
    }

    pub fn value(&self, x: Vec2) -> f64 {
        match &self.kind {
            SurfaceKind::Circle { center, radius } => (x - center).norm() - radius,
            SurfaceKind::Generic(ls) => ls.value(x),
        }
    }

    pub fn gradient(&self, x: Vec2) -> Vec2 {
        match &self.kind {
            SurfaceKind::Circle { center, .. } => {
                let d = x - center;
                let r = d.norm();
                if r == 0.0 {
                    Vec2::zeros()
                } else {
                    d / r
                }
            }
            SurfaceKind::Generic(ls) => ls.gradient(x),
        }
    }

    pub fn curvature_bound(&self) -> f64 {
        match &self.kind {
            SurfaceKind::Circle { radius, .. } => 1.0 / radius,
            SurfaceKind::Generic(ls) => ls.curvature_bound(),
        }
    }

    /// Closest point on the curve.
    pub fn closest_point(&self, x: Vec2) -> Result<Vec2> {
        match &self.kind {
            SurfaceKind::Circle { center, radius } => {
                let d = x - center;
                let r = d.norm();
                if r == 0.0 {
                    return Err(Error::DegeneratePoint(x.x, x.y));
                }
                Ok(center + d * (radius / r))
            }
            SurfaceKind::Generic(ls) => self.newton_projection(ls.as_ref(), x),
        }
    }

    /// Unit normal extension `n(p(x))`.
    pub fn unit_normal(&self, x: Vec2) -> Result<Vec2> {
        match &self.kind {
            SurfaceKind::Circle { center, .. } => {
                let d = x - center;
                let r = d.norm();
                if r == 0.0 {
                    return Err(Error::DegeneratePoint(x.x, x.y));
                }
                Ok(d / r)
            }
            SurfaceKind::Generic(ls) => {
                let p = self.newton_projection(ls.as_ref(), x)?;
                let g = ls.gradient(p);
                Ok(g / g.norm())
            }
        }
    }

    /// Damped Newton on `phi(p) = 0`, `(x - p) x grad phi(p) = 0`.
    fn newton_projection(&self, ls: &dyn LevelSet, x: Vec2) -> Result<Vec2> {
        let g0 = ls.gradient(x);
        let g0n2 = g0.norm_squared();
        if g0n2 < 1e-28 {
            return Err(Error::DegeneratePoint(x.x, x.y));
        }
        let residual = |p: Vec2| -> Vector2<f64> {
            let g = ls.gradient(p);
            let d = x - p;
            Vector2::new(ls.value(p), d.x * g.y - d.y * g.x)
        };
        let converged = |p: Vec2, f: &Vector2<f64>| -> bool {
            let g = ls.gradient(p);
            let scale = (x - p).norm() * g.norm();
            f[0].abs() <= self.newton_tol && (scale == 0.0 || f[1].abs() <= 1e-12 * scale.max(1e-300))
        };

        let mut p = x - g0 * (ls.value(x) / g0n2);
        let mut f = residual(p);
        for _ in 0..self.newton_max_iter {
            if converged(p, &f) {
                return Ok(p);
            }
            let g = ls.gradient(p);
            let h = ls.hessian(p);
            let d = x - p;
            let jac = Matrix2::new(
                g.x,
                g.y,
                -g.y + d.x * h[(1, 0)] - d.y * h[(0, 0)],
                g.x + d.x * h[(1, 1)] - d.y * h[(0, 1)],
            );
            let step = jac.lu().solve(&(-f)).ok_or(Error::DegeneratePoint(x.x, x.y))?;
            let f_norm = f.norm();
            let mut damping = 1.0;
            loop {
                let trial = p + step * damping;
                let f_trial = residual(trial);
                if f_trial.norm() < f_norm || damping < 1e-6 {
                    p = trial;
                    f = f_trial;
                    break;
                }
                damping *= 0.5;
            }
        }
        if converged(p, &f) {
            return Ok(p);
        }
        Err(Error::NonConvergence { iterations: self.newton_max_iter, residual: f.norm() })
    }

    /// Checks `h_T <= c_res / max curvature` on every active element.
    pub fn check_resolution(&self, mesh: &ActiveMesh, c_res: f64) -> ResolutionReport {
        ResolutionReport::evaluate(mesh.element_sizes(), self.curvature_bound(), c_res)
    }
}

/// Outcome of the geometry-resolution check.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolutionReport {
    pub passed: bool,
    pub max_h: f64,
    pub limit: f64,
    /// Active-element indices with `h_T` above the limit.
    pub violating: Vec<usize>,
}

impl ResolutionReport {
    pub fn evaluate(element_sizes: &[f64], curvature_bound: f64, c_res: f64) -> Self {
        let limit = if curvature_bound > 0.0 { c_res / curvature_bound } else { f64::INFINITY };
        let violating: Vec<usize> =
            element_sizes.iter().enumerate().filter(|(_, &h)| h > limit).map(|(i, _)| i).collect();
        let max_h = element_sizes.iter().copied().fold(0.0, f64::max);
        Self { passed: violating.is_empty(), max_h, limit, violating }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_circle() -> LevelSetSurface {
        LevelSetSurface::circle(Vec2::zeros(), 1.0).unwrap()
    }

    fn generic_circle(center: Vec2, radius: f64) -> LevelSetSurface {
        LevelSetSurface::generic(Arc::new(RadialLevelSet { center, radius }))
    }

    #[test]
    fn radial_projection_examples() {
        let s = unit_circle();
        let p = s.closest_point(Vec2::new(2.0, 0.0)).unwrap();
        assert_abs_diff_eq!(p, Vec2::new(1.0, 0.0), epsilon = 1e-15);
        let p = s.closest_point(Vec2::new(0.0, -0.3)).unwrap();
        assert_abs_diff_eq!(p, Vec2::new(0.0, -1.0), epsilon = 1e-15);
    }

    #[test]
    fn offset_circle_matches_generic_newton() {
        let c = Vec2::new(0.1, 0.2);
        let x = c + Vec2::new(0.5, 0.5);
        let expected = c + Vec2::new(0.5, 0.5).normalize() * 0.7;
        let analytic = LevelSetSurface::circle(c, 0.7).unwrap().closest_point(x).unwrap();
        let newton = generic_circle(c, 0.7).closest_point(x).unwrap();
        assert_abs_diff_eq!(analytic, expected, epsilon = 1e-14);
        assert_abs_diff_eq!(newton, expected, epsilon = 1e-12);
    }

    #[test]
    fn unit_normal_examples() {
        let s = unit_circle();
        assert_abs_diff_eq!(s.unit_normal(Vec2::new(0.5, 0.0)).unwrap(), Vec2::new(1.0, 0.0));
        assert_abs_diff_eq!(s.unit_normal(Vec2::new(0.0, 2.0)).unwrap(), Vec2::new(0.0, 1.0));
        let x = Vec2::new(3.0, 4.0) / 5.0 * 1.2;
        let n = generic_circle(Vec2::zeros(), 1.0).unit_normal(x).unwrap();
        assert_abs_diff_eq!(n, Vec2::new(3.0, 4.0) / 5.0, epsilon = 1e-10);
    }

    #[test]
    fn center_is_degenerate() {
        let s = unit_circle();
        assert!(matches!(s.closest_point(Vec2::zeros()), Err(Error::DegeneratePoint(..))));
        assert!(matches!(s.unit_normal(Vec2::zeros()), Err(Error::DegeneratePoint(..))));
        let g = generic_circle(Vec2::zeros(), 1.0);
        assert!(matches!(g.closest_point(Vec2::zeros()), Err(Error::DegeneratePoint(..))));
    }

    #[test]
    fn newton_reports_nonconvergence() {
        // An ellipse needs several Newton steps; one iteration is not enough far away.
        #[derive(Debug)]
        struct Ellipse;
        impl LevelSet for Ellipse {
            fn value(&self, x: Vec2) -> f64 {
                x.x * x.x / 4.0 + x.y * x.y - 1.0
            }
            fn gradient(&self, x: Vec2) -> Vec2 {
                Vec2::new(x.x / 2.0, 2.0 * x.y)
            }
            fn hessian(&self, _: Vec2) -> Matrix2<f64> {
                Matrix2::new(0.5, 0.0, 0.0, 2.0)
            }
            fn curvature_bound(&self) -> f64 {
                2.0
            }
        }
        let s = LevelSetSurface::generic(Arc::new(Ellipse)).with_newton(1e-13, 1);
        let err = s.closest_point(Vec2::new(1.7, 0.9)).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
        let s = LevelSetSurface::generic(Arc::new(Ellipse));
        let p = s.closest_point(Vec2::new(1.7, 0.9)).unwrap();
        assert!(Ellipse.value(p).abs() <= 1e-12);
    }

    #[test]
    fn invalid_radius_rejected() {
        assert!(LevelSetSurface::circle(Vec2::zeros(), 0.0).is_err());
        assert!(LevelSetSurface::circle(Vec2::zeros(), -1.0).is_err());
    }

    #[test]
    fn resolution_examples() {
        let r = ResolutionReport::evaluate(&[0.1; 5], 1.0, 0.5);
        assert!(r.passed);
        let r = ResolutionReport::evaluate(&[0.1; 5], 1.0 / 0.05, 0.5);
        assert!(!r.passed);
        assert_eq!(r.violating.len(), 5);
        let r = ResolutionReport::evaluate(&[0.4, 0.6, 0.4, 0.6], 1.0, 0.5);
        assert!(!r.passed);
        assert_eq!(r.violating, vec![1, 3]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn point() -> impl Strategy<Value = Vec2> {
            (0.05f64..3.0, 0.0f64..std::f64::consts::TAU)
                .prop_map(|(r, t)| Vec2::new(0.1 + r * t.cos(), -0.2 + r * t.sin()))
        }

        proptest! {
            #[test]
            fn projection_is_idempotent(x in point()) {
                let s = LevelSetSurface::circle(Vec2::new(0.1, -0.2), 0.8).unwrap();
                let p = s.closest_point(x).unwrap();
                let pp = s.closest_point(p).unwrap();
                prop_assert!((p - pp).norm() <= 1e-12);
                prop_assert!(s.value(p).abs() <= 10.0 * s.newton_tol);
            }

            #[test]
            fn normal_aligns_with_signed_distance(x in point()) {
                let s = LevelSetSurface::circle(Vec2::new(0.1, -0.2), 0.8).unwrap();
                let p = s.closest_point(x).unwrap();
                let n = s.unit_normal(x).unwrap();
                let lhs = n.dot(&(x - p));
                let rhs = (x - p).norm() * s.value(x).signum();
                prop_assert!((lhs - rhs).abs() <= 1e-10);
                prop_assert!((n.norm() - 1.0).abs() <= 1e-12);
            }

            #[test]
            fn generic_agrees_with_analytic(x in point()) {
                let c = Vec2::new(0.1, -0.2);
                let a = LevelSetSurface::circle(c, 0.8).unwrap();
                let g = generic_circle(c, 0.8);
                let (pa, pg) = (a.closest_point(x).unwrap(), g.closest_point(x).unwrap());
                prop_assert!((pa - pg).norm() <= 1e-10);
                prop_assert!((a.unit_normal(x).unwrap() - g.unit_normal(x).unwrap()).norm() <= 1e-10);
                prop_assert!((a.value(x) - g.value(x)).abs() <= 1e-10);
                let x_minus_p = x - pg;
                let grad = g.gradient(pg);
                prop_assert!((x_minus_p.x * grad.y - x_minus_p.y * grad.x).abs() <= 1e-10);
            }
        }
    }
}
