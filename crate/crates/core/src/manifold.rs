//! Latent-space manifolds.
//!
//! Each supported manifold is a closed Riemannian submanifold of Euclidean
//! space (plus the Euclidean baseline), described by immutable data and pure
//! geometric operations: closest-point projection with its Jacobian, geodesic
//! distance, uniform sampling, volume and scalar curvature. All operations
//! are safe for concurrent use; generators are caller-owned.

use std::f64::consts::{PI, TAU};

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::la;

/// Points closer than this to a projection's singular set are rejected so
/// the caller can resample its noise instead of crashing.
pub const SINGULAR_TOL: f64 = 1e-9;

/// Default tolerance for on-manifold membership checks.
pub const CONTAINS_TOL: f64 = 1e-9;

/// An ambient point or displacement, not necessarily on the manifold.
pub type AmbientVector = Vec<f64>;

/// A latent manifold embedded in Euclidean space.
///
/// - `Sphere { dim }`: unit sphere S^d in R^(d+1), d in {1,2,3};
/// - `FlatTorus2`: product of two unit circles in R^4, intrinsic dim 2;
/// - `EmbeddedTorus { major, minor }`: torus of revolution in R^3 around the
///   third axis, major radius R > minor radius r > 0;
/// - `ProjectiveSphere { dim }`: RP^d realized on S^d (the identification is
///   enforced downstream by an even decoder and a symmetrized kernel, never
///   by canonicalizing coordinates), d in {2,3};
/// - `Euclidean { dim }`: the standard-VAE baseline, d in {2,3}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Manifold {
    Sphere { dim: usize },
    FlatTorus2,
    EmbeddedTorus { major: f64, minor: f64 },
    ProjectiveSphere { dim: usize },
    Euclidean { dim: usize },
}

/// A point on a manifold, stored in ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    coords: Vec<f64>,
}

impl ManifoldPoint {
    /// Validated constructor; fails if `coords` is off the manifold.
    pub fn new(m: &Manifold, coords: Vec<f64>) -> Result<Self> {
        if !m.contains(&coords, CONTAINS_TOL) {
            return Err(Error::DomainError(format!(
                "point {coords:?} is not on {}",
                m.name()
            )));
        }
        Ok(Self { coords })
    }

    /// Constructor for coordinates already known to lie on the manifold
    /// (projection output, sampler output).
    pub(crate) fn from_projection(coords: Vec<f64>) -> Self {
        Self { coords }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }
}

impl Manifold {
    pub fn sphere(dim: usize) -> Result<Self> {
        if (1..=3).contains(&dim) {
            Ok(Manifold::Sphere { dim })
        } else {
            Err(Error::InvalidConfig(format!("sphere dim {dim} not in 1..=3")))
        }
    }

    pub fn flat_torus2() -> Self {
        Manifold::FlatTorus2
    }

    pub fn embedded_torus(major: f64, minor: f64) -> Result<Self> {
        if major > minor && minor > 0.0 && major.is_finite() {
            Ok(Manifold::EmbeddedTorus { major, minor })
        } else {
            Err(Error::InvalidConfig(format!(
                "embedded torus needs R > r > 0, got R={major}, r={minor}"
            )))
        }
    }

    pub fn projective_sphere(dim: usize) -> Result<Self> {
        if (2..=3).contains(&dim) {
            Ok(Manifold::ProjectiveSphere { dim })
        } else {
            Err(Error::InvalidConfig(format!(
                "projective sphere dim {dim} not in 2..=3"
            )))
        }
    }

    pub fn euclidean(dim: usize) -> Result<Self> {
        if (2..=3).contains(&dim) {
            Ok(Manifold::Euclidean { dim })
        } else {
            Err(Error::InvalidConfig(format!("euclidean dim {dim} not in 2..=3")))
        }
    }

    /// Intrinsic dimension d.
    pub fn intrinsic_dim(&self) -> usize {
        match self {
            Manifold::Sphere { dim } | Manifold::ProjectiveSphere { dim } => *dim,
            Manifold::FlatTorus2 | Manifold::EmbeddedTorus { .. } => 2,
            Manifold::Euclidean { dim } => *dim,
        }
    }

    /// Ambient dimension n.
    pub fn ambient_dim(&self) -> usize {
        match self {
            Manifold::Sphere { dim } | Manifold::ProjectiveSphere { dim } => dim + 1,
            Manifold::FlatTorus2 => 4,
            Manifold::EmbeddedTorus { .. } => 3,
            Manifold::Euclidean { dim } => *dim,
        }
    }

    pub fn is_closed(&self) -> bool {
        !matches!(self, Manifold::Euclidean { .. })
    }

    pub fn name(&self) -> String {
        match self {
            Manifold::Sphere { dim } => format!("sphere{dim}"),
            Manifold::FlatTorus2 => "flat-torus".to_string(),
            Manifold::EmbeddedTorus { major, minor } => {
                format!("embedded-torus({major},{minor})")
            }
            Manifold::ProjectiveSphere { dim } => format!("projective{dim}"),
            Manifold::Euclidean { dim } => format!("euclidean{dim}"),
        }
    }

    /// True iff `x` lies on the manifold within `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.ambient_dim() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            Manifold::Sphere { .. } | Manifold::ProjectiveSphere { .. } => {
                (la::norm(x) - 1.0).abs() <= tol
            }
            Manifold::FlatTorus2 => {
                (la::norm(&x[..2]) - 1.0).abs() <= tol && (la::norm(&x[2..]) - 1.0).abs() <= tol
            }
            Manifold::EmbeddedTorus { major, minor } => {
                let rho = x[0].hypot(x[1]);
                ((rho - major).hypot(x[2]) - minor).abs() <= tol
            }
            Manifold::Euclidean { .. } => true,
        }
    }

    /// Closest-point projection P: R^n -> Z.
    ///
    /// Fails with `SingularProjection` when `x` is within [`SINGULAR_TOL`]
    /// of the singular set (no unique nearest point); the caller is expected
    /// to resample its noise.
    pub fn project(&self, x: &[f64]) -> Result<ManifoldPoint> {
        self.check_ambient(x)?;
        match self {
            Manifold::Sphere { .. } | Manifold::ProjectiveSphere { .. } => {
                let n = la::norm(x);
                if n < SINGULAR_TOL {
                    return Err(Error::SingularProjection(format!("|x| = {n:.3e}")));
                }
                Ok(ManifoldPoint::from_projection(la::scale(x, 1.0 / n)))
            }
            Manifold::FlatTorus2 => {
                let n1 = la::norm(&x[..2]);
                let n2 = la::norm(&x[2..]);
                if n1 < SINGULAR_TOL || n2 < SINGULAR_TOL {
                    return Err(Error::SingularProjection(format!(
                        "circle pair norms {n1:.3e}, {n2:.3e}"
                    )));
                }
                Ok(ManifoldPoint::from_projection(vec![
                    x[0] / n1,
                    x[1] / n1,
                    x[2] / n2,
                    x[3] / n2,
                ]))
            }
            Manifold::EmbeddedTorus { major, minor } => {
                let rho = x[0].hypot(x[1]);
                if rho < SINGULAR_TOL {
                    return Err(Error::SingularProjection(format!("axis rho = {rho:.3e}")));
                }
                let c = [major * x[0] / rho, major * x[1] / rho, 0.0];
                let v = la::sub(x, &c);
                let s = la::norm(&v);
                if s < SINGULAR_TOL {
                    return Err(Error::SingularProjection(format!(
                        "on the core circle, |x-c| = {s:.3e}"
                    )));
                }
                Ok(ManifoldPoint::from_projection(vec![
                    c[0] + minor * v[0] / s,
                    c[1] + minor * v[1] / s,
                    c[2] + minor * v[2] / s,
                ]))
            }
            Manifold::Euclidean { .. } => Ok(ManifoldPoint::from_projection(x.to_vec())),
        }
    }

    /// Jacobian dP/dx of the closest-point projection, an n x n matrix.
    pub fn project_jacobian(&self, x: &[f64]) -> Result<Array2<f64>> {
        self.check_ambient(x)?;
        let n = self.ambient_dim();
        match self {
            Manifold::Sphere { .. } | Manifold::ProjectiveSphere { .. } => {
                let nx = la::norm(x);
                if nx < SINGULAR_TOL {
                    return Err(Error::SingularProjection(format!("|x| = {nx:.3e}")));
                }
                Ok(radial_jacobian(x, nx))
            }
            Manifold::FlatTorus2 => {
                let n1 = la::norm(&x[..2]);
                let n2 = la::norm(&x[2..]);
                if n1 < SINGULAR_TOL || n2 < SINGULAR_TOL {
                    return Err(Error::SingularProjection(format!(
                        "circle pair norms {n1:.3e}, {n2:.3e}"
                    )));
                }
                let b1 = radial_jacobian(&x[..2], n1);
                let b2 = radial_jacobian(&x[2..], n2);
                let mut j = Array2::zeros((4, 4));
                for r in 0..2 {
                    for c in 0..2 {
                        j[[r, c]] = b1[[r, c]];
                        j[[r + 2, c + 2]] = b2[[r, c]];
                    }
                }
                Ok(j)
            }
            Manifold::EmbeddedTorus { major, minor } => {
                let rho = x[0].hypot(x[1]);
                if rho < SINGULAR_TOL {
                    return Err(Error::SingularProjection(format!("axis rho = {rho:.3e}")));
                }
                let c = [major * x[0] / rho, major * x[1] / rho, 0.0];
                let v = la::sub(x, &c);
                let s = la::norm(&v);
                if s < SINGULAR_TOL {
                    return Err(Error::SingularProjection(format!(
                        "on the core circle, |x-c| = {s:.3e}"
                    )));
                }
                // P(x) = c(x) + r * v/|v| with v = x - c(x), so by the chain
                // rule dP = C + (r/s) (I - vv^T/s^2)(I - C), where C = dc/dx
                // is the radial 2x2 block scaled by R and padded to 3x3.
                let b = radial_jacobian(&x[..2], rho);
                let mut cmat = Array2::zeros((3, 3));
                for r in 0..2 {
                    for cc in 0..2 {
                        cmat[[r, cc]] = major * b[[r, cc]];
                    }
                }
                let mut tang: Array2<f64> = Array2::eye(3);
                for r in 0..3 {
                    for cc in 0..3 {
                        tang[[r, cc]] -= v[r] * v[cc] / (s * s);
                    }
                }
                let eye_minus_c = Array2::eye(3) - &cmat;
                let j = &cmat + &(tang.dot(&eye_minus_c) * (minor / s));
                Ok(j)
            }
            Manifold::Euclidean { .. } => Ok(Array2::eye(n)),
        }
    }

    /// Geodesic distance between two points of the manifold.
    ///
    /// Exact on spheres, the flat torus, projective spheres and Euclidean
    /// space. On the embedded torus this is the wrapped local-metric
    /// approximation sqrt(r^2 dtheta^2 + (R + r cos(mid))^2 dphi^2), valid
    /// for nearby points; it is only consumed by the small-time kernel
    /// density where samples concentrate near the center.
    pub fn geodesic_distance(&self, a: &ManifoldPoint, b: &ManifoldPoint) -> Result<f64> {
        self.check_on_manifold(a)?;
        self.check_on_manifold(b)?;
        Ok(self.distance_unchecked(a.coords(), b.coords()))
    }

    pub(crate) fn distance_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Manifold::Sphere { .. } => la::dot(a, b).clamp(-1.0, 1.0).acos(),
            Manifold::ProjectiveSphere { .. } => {
                let arc = la::dot(a, b).clamp(-1.0, 1.0).acos();
                arc.min(PI - arc)
            }
            Manifold::FlatTorus2 => {
                // relative angle per circle pair via atan2(cross, dot); the
                // cross product negates exactly under swapping, so the
                // distance is symmetric bit for bit
                let dt = circle_angle_between(&a[..2], &b[..2]);
                let dp = circle_angle_between(&a[2..], &b[2..]);
                dt.hypot(dp)
            }
            Manifold::EmbeddedTorus { major, minor } => {
                let (ta, pa) = embedded_torus_angles(*major, a);
                let (tb, pb) = embedded_torus_angles(*major, b);
                let dt = la::wrap_angle(ta - tb);
                let dp = la::wrap_angle(pa - pb);
                let mid = ta + la::wrap_angle(tb - ta) / 2.0;
                (minor * dt).hypot((major + minor * mid.cos()) * dp)
            }
            Manifold::Euclidean { .. } => la::norm(&la::sub(a, b)),
        }
    }

    /// Sample from the normalized Riemannian volume measure (the model's
    /// prior). The Euclidean baseline draws from the standard Gaussian
    /// prior instead; a uniform distribution does not exist on R^d.
    pub fn uniform_sample(&self, rng: &mut impl Rng) -> ManifoldPoint {
        match self {
            Manifold::Sphere { .. } | Manifold::ProjectiveSphere { .. } => loop {
                let v: Vec<f64> = (0..self.ambient_dim())
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                let n = la::norm(&v);
                if n > SINGULAR_TOL {
                    return ManifoldPoint::from_projection(la::scale(&v, 1.0 / n));
                }
            },
            Manifold::FlatTorus2 => {
                let t = rng.gen_range(-PI..PI);
                let p = rng.gen_range(-PI..PI);
                ManifoldPoint::from_projection(vec![t.cos(), t.sin(), p.cos(), p.sin()])
            }
            Manifold::EmbeddedTorus { major, minor } => {
                // theta has density (R + r cos theta)/(2 pi R); rejection
                // against the uniform proposal with bound (R + r)/(2 pi R).
                let theta = loop {
                    let cand = rng.gen_range(-PI..PI);
                    let accept = (major + minor * cand.cos()) / (major + minor);
                    if rng.gen::<f64>() < accept {
                        break cand;
                    }
                };
                let phi = rng.gen_range(-PI..PI);
                ManifoldPoint::from_projection(embedded_torus_point(
                    *major, *minor, theta, phi,
                ))
            }
            Manifold::Euclidean { dim } => ManifoldPoint::from_projection(
                (0..*dim).map(|_| rng.sample(StandardNormal)).collect(),
            ),
        }
    }

    /// Riemannian volume. Defined for closed manifolds only.
    pub fn volume(&self) -> Result<f64> {
        match self {
            Manifold::Sphere { dim } => Ok(sphere_volume(*dim)),
            Manifold::FlatTorus2 => Ok(4.0 * PI * PI),
            Manifold::EmbeddedTorus { major, minor } => Ok(4.0 * PI * PI * major * minor),
            Manifold::ProjectiveSphere { dim } => Ok(sphere_volume(*dim) / 2.0),
            Manifold::Euclidean { .. } => Err(Error::DomainError(
                "Euclidean space has no finite volume".to_string(),
            )),
        }
    }

    /// Scalar curvature at `z`.
    pub fn scalar_curvature(&self, z: &ManifoldPoint) -> Result<f64> {
        self.check_on_manifold(z)?;
        Ok(self.scalar_curvature_unchecked(z.coords()))
    }

    pub(crate) fn scalar_curvature_unchecked(&self, z: &[f64]) -> f64 {
        match self {
            Manifold::Sphere { dim } | Manifold::ProjectiveSphere { dim } => {
                (dim * (dim - 1)) as f64
            }
            Manifold::FlatTorus2 | Manifold::Euclidean { .. } => 0.0,
            Manifold::EmbeddedTorus { major, minor } => {
                let c = ((z[0].hypot(z[1])) - major) / minor;
                2.0 * c / (minor * (major + minor * c))
            }
        }
    }

    /// Ambient gradient of the scalar curvature at `z` (zero everywhere
    /// except on the embedded torus, where Sc varies with the poloidal
    /// angle). Used by the KL term's backward pass.
    pub(crate) fn scalar_curvature_gradient(&self, z: &[f64]) -> Vec<f64> {
        match self {
            Manifold::EmbeddedTorus { major, minor } => {
                // Sc(c) = 2c / (r (R + r c)) with c = (rho - R)/r, so
                // dSc/dc = 2R / (r (R + r c)^2) and dc/dz = (z1, z2, 0)/(rho r).
                let rho = z[0].hypot(z[1]);
                let c = (rho - major) / minor;
                let dsc_dc = 2.0 * major / (minor * (major + minor * c).powi(2));
                let f = dsc_dc / (rho * minor);
                vec![f * z[0], f * z[1], 0.0]
            }
            _ => vec![0.0; self.ambient_dim()],
        }
    }

    fn check_ambient(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.ambient_dim() {
            return Err(Error::ShapeMismatch(format!(
                "ambient vector has length {}, expected {}",
                x.len(),
                self.ambient_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("ambient vector {x:?}")));
        }
        Ok(())
    }

    pub(crate) fn check_on_manifold(&self, p: &ManifoldPoint) -> Result<()> {
        if !self.contains(p.coords(), CONTAINS_TOL) {
            return Err(Error::DomainError(format!(
                "point {:?} is not on {}",
                p.coords(),
                self.name()
            )));
        }
        Ok(())
    }
}

/// Signed angle between two points on a circle (any radius), in (-pi, pi].
fn circle_angle_between(a: &[f64], b: &[f64]) -> f64 {
    let cross = a[0] * b[1] - a[1] * b[0];
    let dot = a[0] * b[0] + a[1] * b[1];
    cross.atan2(dot)
}

/// Jacobian of x -> x/|x|: (I - u u^T)/|x| with u = x/|x|.
fn radial_jacobian(x: &[f64], nx: f64) -> Array2<f64> {
    let n = x.len();
    let mut j = Array2::zeros((n, n));
    for r in 0..n {
        for c in 0..n {
            let val = if r == c { 1.0 } else { 0.0 };
            j[[r, c]] = (val - x[r] * x[c] / (nx * nx)) / nx;
        }
    }
    j
}

/// Vol(S^d) = 2 pi^((d+1)/2) / Gamma((d+1)/2), specialized to d <= 3.
fn sphere_volume(dim: usize) -> f64 {
    match dim {
        1 => TAU,
        2 => 4.0 * PI,
        3 => 2.0 * PI * PI,
        _ => unreachable!("sphere dim validated at construction"),
    }
}

/// Poloidal / toroidal angles of a point on (or near) the embedded torus.
pub fn embedded_torus_angles(major: f64, x: &[f64]) -> (f64, f64) {
    let rho = x[0].hypot(x[1]);
    (x[2].atan2(rho - major), x[1].atan2(x[0]))
}

/// Embed (theta, phi) angles on the torus of revolution.
pub fn embedded_torus_point(major: f64, minor: f64, theta: f64, phi: f64) -> Vec<f64> {
    let tube = major + minor * theta.cos();
    vec![tube * phi.cos(), tube * phi.sin(), minor * theta.sin()]
}

/// Angles (theta, phi) of a flat-torus point from its two circle pairs.
pub fn flat_torus_angles(x: &[f64]) -> (f64, f64) {
    (x[1].atan2(x[0]), x[3].atan2(x[2]))
}

/// Embed (theta, phi) on the flat torus (product of two unit circles).
pub fn flat_torus_point(theta: f64, phi: f64) -> Vec<f64> {
    vec![theta.cos(), theta.sin(), phi.cos(), phi.sin()]
}
