//! Brownian-motion machinery.
//!
//! The approximate posterior of the model is the transition kernel of
//! Brownian motion on the latent manifold. This module provides
//!
//! - the random-walk reparametrization sampler
//!   `g(eps, t, z) = P(...P(P(z + sqrt(t/N) eps_1) + sqrt(t/N) eps_2)...)`
//!   together with its pathwise Jacobians d(out)/dz and d(out)/dt,
//! - heat-kernel densities (wrapped Gaussian on circles, small-time
//!   expansion and exact eigenfunction series on spheres, leading-order
//!   expansion on the embedded torus),
//! - the small-time KL divergence
//!   `-(d/2) log(2 pi t) - d/2 + log Vol(Z) + Sc t / 4`,
//!   its quadrature counterpart, and the closed-form Gaussian KL used by
//!   the Euclidean baseline.

use std::f64::consts::{PI, TAU};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::la;
use crate::manifold::{Manifold, ManifoldPoint};

/// Retry budget when a walk step lands in a projection's singular set.
const MAX_RESAMPLES: usize = 100;

/// Above this diffusion time the sphere density switches from the
/// small-time expansion to the exact eigenfunction series, which converges
/// quickly there. Below it the expansion is accurate to better than 1e-3
/// in normalization.
const SPHERE_SERIES_SWITCH_T: f64 = 0.1;

/// log(q) below which exp(log q) underflows to zero in f64.
const LOG_UNDERFLOW: f64 = -745.0;

/// Convergence target for KL quadrature under grid doubling (tighter than
/// the 1e-6 the callers rely on).
const KL_QUAD_TOL: f64 = 1e-9;

/// Posterior parameters: a center point z on the manifold and a diffusion
/// time t > 0.
#[derive(Debug, Clone)]
pub struct PosteriorParams {
    pub center: ManifoldPoint,
    pub time: f64,
}

impl PosteriorParams {
    pub fn new(center: ManifoldPoint, time: f64) -> Result<Self> {
        if !(time.is_finite() && time > 0.0) {
            return Err(Error::DomainError(format!(
                "diffusion time must be positive and finite, got {time}"
            )));
        }
        Ok(Self { center, time })
    }
}

/// Random-walk sampler settings: number of steps N and the base seed that
/// per-sample noise streams are derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomWalkConfig {
    pub steps: usize,
    pub seed: u64,
}

impl RandomWalkConfig {
    pub fn new(steps: usize, seed: u64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidConfig("walk needs at least one step".into()));
        }
        Ok(Self { steps, seed })
    }
}

impl Default for RandomWalkConfig {
    fn default() -> Self {
        Self { steps: 16, seed: 0 }
    }
}

/// Truncation controls for the kernel series and quadrature grids.
///
/// `wrap_terms` is the wrapped-Gaussian image count per circle factor,
/// `spectral_terms` the sphere eigen-series cutoff. Construction verifies
/// that both truncation tails stay below 1e-12 over `(0, t_ceiling]`.
#[derive(Debug, Clone, Copy)]
pub struct KernelSeriesConfig {
    pub wrap_terms: usize,
    pub spectral_terms: usize,
    pub circle_grid: usize,
    pub torus_grid: usize,
    pub sphere_grid: usize,
    pub t_ceiling: f64,
}

impl KernelSeriesConfig {
    pub fn new(
        wrap_terms: usize,
        spectral_terms: usize,
        circle_grid: usize,
        torus_grid: usize,
        sphere_grid: usize,
        t_ceiling: f64,
    ) -> Result<Self> {
        if wrap_terms == 0 || spectral_terms == 0 {
            return Err(Error::InvalidConfig("series need at least one term".into()));
        }
        if !(t_ceiling.is_finite() && t_ceiling > 0.0) {
            return Err(Error::InvalidConfig(format!("bad t ceiling {t_ceiling}")));
        }
        // Wrapped-Gaussian tail grows with t: bound the first omitted image
        // at the worst in-circle offset |delta| = pi, at t = t_ceiling.
        let k = wrap_terms as f64;
        let nearest = PI * (2.0 * k - 1.0);
        let wrap_tail =
            4.0 / (TAU * t_ceiling).sqrt() * (-nearest * nearest / (2.0 * t_ceiling)).exp();
        if wrap_tail > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "wrap_terms = {wrap_terms} leaves tail {wrap_tail:.3e} at t = {t_ceiling}"
            )));
        }
        // The eigen-series tail shrinks with t; it is only consulted for
        // t above the expansion/series switch, so bound it there.
        let t_series = SPHERE_SERIES_SWITCH_T.min(t_ceiling);
        let l = spectral_terms as f64;
        let spectral_tail: f64 = (0..200)
            .map(|j| {
                let ell = l + 1.0 + j as f64;
                (ell + 1.0).powi(2) / (2.0 * PI * PI)
                    * (-ell * (ell + 1.0) * t_series / 2.0).exp()
            })
            .sum();
        if spectral_tail > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "spectral_terms = {spectral_terms} leaves tail {spectral_tail:.3e} at t = {t_series}"
            )));
        }
        Ok(Self {
            wrap_terms,
            spectral_terms,
            circle_grid,
            torus_grid,
            sphere_grid,
            t_ceiling,
        })
    }

    /// Settings that are valid up to t = 1 (training and kernel-validation
    /// scale).
    pub fn standard() -> Self {
        Self::new(8, 64, 1024, 256, 256, 1.0).expect("standard config is valid")
    }

    /// Settings valid up to t = 100 (stationarity checks).
    pub fn wide() -> Self {
        Self::new(24, 64, 1024, 256, 256, 100.0).expect("wide config is valid")
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if !(t.is_finite() && t > 0.0 && t <= self.t_ceiling) {
            return Err(Error::DomainError(format!(
                "t = {t} outside (0, {}]",
                self.t_ceiling
            )));
        }
        Ok(())
    }
}

/// Result of a random-walk draw with pathwise derivatives.
#[derive(Debug, Clone)]
pub struct WalkOutput {
    pub point: ManifoldPoint,
    /// d(out)/dz, an n x n ambient Jacobian (chain of projection Jacobians).
    pub d_dz: Array2<f64>,
    /// d(out)/dt, an n-vector (noise scale sensitivity pushed through the
    /// remaining projections).
    pub d_dt: Array1<f64>,
}

/// Run the walk on fixed noise: the deterministic core of the sampler.
///
/// `steps[i]` is the i-th ambient noise vector eps_i; the walk computes
/// `P(... P(z + s eps_1) ... + s eps_N)` with `s = sqrt(t/N)` and
/// accumulates both pathwise Jacobians along the way.
pub fn random_walk_with_noise(
    m: &Manifold,
    p: &PosteriorParams,
    steps: &[Vec<f64>],
) -> Result<WalkOutput> {
    if !m.is_closed() {
        return Err(Error::DomainError(
            "the random walk sampler needs a closed manifold".into(),
        ));
    }
    let n = m.ambient_dim();
    let big_n = steps.len();
    if big_n == 0 {
        return Err(Error::InvalidConfig("walk needs at least one step".into()));
    }
    let t = p.time;
    let scale = (t / big_n as f64).sqrt();
    // d(scale)/dt = 1 / (2 sqrt(t N))
    let dscale_dt = 1.0 / (2.0 * (t * big_n as f64).sqrt());

    let mut z = p.center.coords().to_vec();
    let mut d_dz: Array2<f64> = Array2::eye(n);
    let mut d_dt: Array1<f64> = Array1::zeros(n);
    for eps in steps {
        if eps.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "noise vector length {} != ambient dim {n}",
                eps.len()
            )));
        }
        let w: Vec<f64> = z.iter().zip(eps).map(|(zi, ei)| zi + scale * ei).collect();
        let jac = m.project_jacobian(&w)?;
        let d_dt_in: Array1<f64> =
            &d_dt + &Array1::from_iter(eps.iter().map(|e| e * dscale_dt));
        d_dt = jac.dot(&d_dt_in);
        d_dz = jac.dot(&d_dz);
        z = m.project(&w)?.into_coords();
    }
    Ok(WalkOutput {
        point: ManifoldPoint::new(m, z)?,
        d_dz,
        d_dt,
    })
}

/// One posterior draw by the random-walk reparametrization.
///
/// Noise steps are i.i.d. standard Gaussian in ambient space; a step that
/// lands in the projection's singular set is redrawn (measure-zero event,
/// bounded by a retry budget). Deterministic given the generator state.
pub fn random_walk_sample(
    m: &Manifold,
    p: &PosteriorParams,
    cfg: &RandomWalkConfig,
    rng: &mut impl Rng,
) -> Result<ManifoldPoint> {
    Ok(walk_resampling(m, p, cfg, rng)?.point)
}

/// As [`random_walk_sample`], additionally returning the pathwise Jacobians
/// needed to backpropagate through the draw.
pub fn random_walk_sample_with_jacobians(
    m: &Manifold,
    p: &PosteriorParams,
    cfg: &RandomWalkConfig,
    rng: &mut impl Rng,
) -> Result<WalkOutput> {
    walk_resampling(m, p, cfg, rng)
}

fn walk_resampling(
    m: &Manifold,
    p: &PosteriorParams,
    cfg: &RandomWalkConfig,
    rng: &mut impl Rng,
) -> Result<WalkOutput> {
    if !m.is_closed() {
        return Err(Error::DomainError(
            "the random walk sampler needs a closed manifold".into(),
        ));
    }
    let n = m.ambient_dim();
    let mut steps: Vec<Vec<f64>> = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        steps.push((0..n).map(|_| rng.sample(StandardNormal)).collect());
    }
    let mut resamples = 0;
    loop {
        match random_walk_with_noise(m, p, &steps) {
            Ok(out) => return Ok(out),
            Err(Error::SingularProjection(_)) => {
                resamples += 1;
                if resamples > MAX_RESAMPLES {
                    return Err(Error::ResampleExceeded(resamples));
                }
                for eps in steps.iter_mut() {
                    for e in eps.iter_mut() {
                        *e = rng.sample(StandardNormal);
                    }
                }
            }
            Err(e) => return Err(e),
        }
    }
}

/// A kernel density value. When the exponential underflows the density is
/// reported as 0 with `underflow` set; `log_density` stays finite in far
/// more cases and is what likelihood computations should use.
#[derive(Debug, Clone, Copy)]
pub struct KernelEval {
    pub density: f64,
    pub log_density: f64,
    pub underflow: bool,
}

impl KernelEval {
    fn from_log(log_density: f64) -> Self {
        let underflow = log_density < LOG_UNDERFLOW;
        KernelEval {
            density: if underflow { 0.0 } else { log_density.exp() },
            log_density,
            underflow,
        }
    }
}

/// Density of the Brownian transition kernel q_Z(t; z, y) with respect to
/// the (unnormalized) Riemannian volume measure.
pub fn heat_kernel_density(
    m: &Manifold,
    t: f64,
    z: &ManifoldPoint,
    y: &ManifoldPoint,
    cfg: &KernelSeriesConfig,
) -> Result<KernelEval> {
    cfg.check_t(t)?;
    m.check_on_manifold(z)?;
    m.check_on_manifold(y)?;
    Ok(kernel_unchecked(m, t, z.coords(), y.coords(), cfg))
}

pub(crate) fn kernel_unchecked(
    m: &Manifold,
    t: f64,
    z: &[f64],
    y: &[f64],
    cfg: &KernelSeriesConfig,
) -> KernelEval {
    match m {
        Manifold::Sphere { dim: 1 } => {
            let delta = m.distance_unchecked(z, y);
            KernelEval::from_log(wrapped_gaussian_log(delta, t, cfg.wrap_terms))
        }
        Manifold::Sphere { dim } => {
            let r = m.distance_unchecked(z, y);
            KernelEval::from_log(sphere_log_density(*dim, t, r, cfg))
        }
        Manifold::ProjectiveSphere { dim } => {
            // image under the antipodal identification: q(r) + q(pi - r)
            let arc = la::dot(z, y).clamp(-1.0, 1.0).acos();
            let a = sphere_log_density(*dim, t, arc, cfg);
            let b = sphere_log_density(*dim, t, PI - arc, cfg);
            KernelEval::from_log(log_sum_exp2(a, b))
        }
        Manifold::FlatTorus2 => {
            let dt_ang = circle_delta(&z[..2], &y[..2]);
            let dp_ang = circle_delta(&z[2..], &y[2..]);
            let l = wrapped_gaussian_log(dt_ang, t, cfg.wrap_terms)
                + wrapped_gaussian_log(dp_ang, t, cfg.wrap_terms);
            KernelEval::from_log(l)
        }
        Manifold::EmbeddedTorus { .. } => {
            // leading-order small-time expansion with the approximate
            // geodesic distance; small-t use only
            let r = m.distance_unchecked(z, y);
            KernelEval::from_log(-(TAU * t).ln() - r * r / (2.0 * t))
        }
        Manifold::Euclidean { dim } => {
            let d = *dim as f64;
            let sq: f64 = z.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            KernelEval::from_log(-0.5 * d * (TAU * t).ln() - sq / (2.0 * t))
        }
    }
}

fn circle_delta(a: &[f64], b: &[f64]) -> f64 {
    let cross = a[0] * b[1] - a[1] * b[0];
    let dot = a[0] * b[0] + a[1] * b[1];
    cross.atan2(dot)
}

/// log of the wrapped Gaussian sum_k (2 pi t)^(-1/2) exp(-(d + 2 pi k)^2 / 2t).
fn wrapped_gaussian_log(delta: f64, t: f64, wrap_terms: usize) -> f64 {
    let k = wrap_terms as i64;
    let mut max_e = f64::NEG_INFINITY;
    let mut exponents = Vec::with_capacity(2 * wrap_terms + 1);
    for i in -k..=k {
        let d = delta + TAU * i as f64;
        let e = -d * d / (2.0 * t);
        exponents.push(e);
        max_e = max_e.max(e);
    }
    let sum: f64 = exponents.iter().map(|e| (e - max_e).exp()).sum();
    -0.5 * (TAU * t).ln() + max_e + sum.ln()
}

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// log q on S^d: the small-time expansion at t below the series switch,
/// the exact eigenfunction series above it.
fn sphere_log_density(dim: usize, t: f64, r: f64, cfg: &KernelSeriesConfig) -> f64 {
    if t <= SPHERE_SERIES_SWITCH_T {
        sphere_expansion_log(dim, t, r)
    } else {
        let q = sphere_spectral_density(dim, t, r, cfg.spectral_terms);
        q.max(f64::MIN_POSITIVE).ln()
    }
}

/// Small-time expansion of the heat kernel on the unit sphere S^d:
///
/// ```text
/// q(t; r) = (2 pi t)^(-d/2) exp(-r^2 / 2t) (r / sin r)^((d-1)/2)
///           (1 + Sc t / (8 d r^2) [3 - d + (d-1) r^2 + (d-3) r cot r])
/// ```
///
/// with Sc = d(d-1), including the analytic r -> 0 limits, and r clamped
/// to pi - 1e-6 (the density there is below underflow at small t).
pub fn sphere_expansion_log(dim: usize, t: f64, r: f64) -> f64 {
    let d = dim as f64;
    let sc = d * (d - 1.0);
    let r = r.clamp(0.0, PI - 1e-6);
    let (log_ratio, bracket_over_r2) = if r < 1e-4 {
        // r/sin r = 1 + r^2/6 + 7 r^4/360 + ...
        // bracket / r^2 = 2d/3 - (d-3) r^2 / 45 + ...
        let r2 = r * r;
        (
            0.5 * (d - 1.0) * (r2 / 6.0 + 7.0 * r2 * r2 / 360.0),
            2.0 * d / 3.0 - (d - 3.0) * r2 / 45.0,
        )
    } else {
        (
            0.5 * (d - 1.0) * (r / r.sin()).ln(),
            (3.0 - d + (d - 1.0) * r * r + (d - 3.0) * r / r.tan()) / (r * r),
        )
    };
    let correction = sc * t / (8.0 * d) * bracket_over_r2;
    -0.5 * d * (TAU * t).ln() - r * r / (2.0 * t) + log_ratio + (1.0 + correction).ln()
}

/// Exact eigenfunction series for the heat kernel on S^d, d in {2, 3}:
///
/// - d = 2: sum_l (2l+1)/(4 pi) e^(-l(l+1)t/2) P_l(cos r)
/// - d = 3: sum_l (l+1)/(2 pi^2) e^(-l(l+2)t/2) U_l(cos r)
///
/// with Legendre P_l and Chebyshev-of-the-second-kind U_l via their
/// three-term recurrences.
pub fn sphere_spectral_density(dim: usize, t: f64, r: f64, terms: usize) -> f64 {
    let x = r.cos();
    match dim {
        2 => {
            let mut p_prev = 1.0; // P_0
            let mut p_curr = x; // P_1
            let mut sum = 1.0 / (4.0 * PI); // l = 0 term
            for l in 1..=terms {
                let lf = l as f64;
                sum += (2.0 * lf + 1.0) / (4.0 * PI) * (-lf * (lf + 1.0) * t / 2.0).exp() * p_curr;
                let p_next = ((2.0 * lf + 1.0) * x * p_curr - lf * p_prev) / (lf + 1.0);
                p_prev = p_curr;
                p_curr = p_next;
            }
            sum
        }
        3 => {
            let mut u_prev = 1.0; // U_0
            let mut u_curr = 2.0 * x; // U_1
            let mut sum = 1.0 / (2.0 * PI * PI); // l = 0 term
            for l in 1..=terms {
                let lf = l as f64;
                sum += (lf + 1.0) / (2.0 * PI * PI) * (-lf * (lf + 2.0) * t / 2.0).exp() * u_curr;
                let u_next = 2.0 * x * u_curr - u_prev;
                u_prev = u_curr;
                u_curr = u_next;
            }
            sum
        }
        _ => panic!("eigenfunction series implemented for S^2 and S^3 only"),
    }
}

/// Small-time KL divergence of the Brownian posterior from the uniform
/// prior:
///
/// ```text
/// KL = -(d/2) log(2 pi t) - d/2 + log Vol(Z) + Sc t / 4
/// ```
///
/// Pure arithmetic in its inputs; the remainder is o(t).
pub fn kl_asymptotic(m: &Manifold, p: &PosteriorParams) -> Result<f64> {
    if !m.is_closed() {
        return Err(Error::DomainError(
            "closed manifolds only; use kl_gaussian for the Euclidean baseline".into(),
        ));
    }
    m.check_on_manifold(&p.center)?;
    let d = m.intrinsic_dim() as f64;
    let sc = m.scalar_curvature_unchecked(p.center.coords());
    Ok(-0.5 * d * (TAU * p.time).ln() - 0.5 * d + m.volume()?.ln() + 0.25 * sc * p.time)
}

/// d(KL)/dt of [`kl_asymptotic`].
pub(crate) fn kl_asymptotic_dt(m: &Manifold, p: &PosteriorParams) -> f64 {
    let d = m.intrinsic_dim() as f64;
    let sc = m.scalar_curvature_unchecked(p.center.coords());
    -0.5 * d / p.time + 0.25 * sc
}

/// KL divergence by deterministic quadrature of `integral(q log q) + log Vol`.
///
/// Supported on the circle, S^2 and the flat torus; grids start at the
/// configured resolution and double until successive values agree to 1e-9
/// (well inside the 1e-6 contract).
pub fn kl_numeric(m: &Manifold, p: &PosteriorParams, cfg: &KernelSeriesConfig) -> Result<f64> {
    cfg.check_t(p.time)?;
    m.check_on_manifold(&p.center)?;
    let t = p.time;
    let z = p.center.coords();
    match m {
        Manifold::Sphere { dim: 1 } => {
            let entropy = converge_doubling(cfg.circle_grid, 1 << 22, |grid| {
                circle_entropy(t, cfg.wrap_terms, grid)
            })?;
            Ok(entropy + TAU.ln())
        }
        Manifold::FlatTorus2 => {
            let entropy = converge_doubling(cfg.torus_grid, 1 << 13, |grid| {
                torus_entropy(t, cfg.wrap_terms, grid)
            })?;
            Ok(entropy + (4.0 * PI * PI).ln())
        }
        Manifold::Sphere { dim: 2 } => {
            let entropy = converge_doubling(cfg.sphere_grid, 1 << 13, |grid| {
                sphere2_entropy(m, t, z, cfg, grid)
            })?;
            Ok(entropy + (4.0 * PI).ln())
        }
        _ => Err(Error::UnsupportedManifold(format!(
            "kl_numeric supports circle, sphere2 and flat-torus, not {}",
            m.name()
        ))),
    }
}

fn converge_doubling(start: usize, cap: usize, f: impl Fn(usize) -> f64) -> Result<f64> {
    let mut grid = start.max(16);
    let mut prev = f(grid);
    while grid < cap {
        grid *= 2;
        let next = f(grid);
        if (next - prev).abs() <= KL_QUAD_TOL {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::DomainError(format!(
        "quadrature did not converge to {KL_QUAD_TOL} by grid {cap}"
    )))
}

/// integral of q log q over the circle (rectangle rule; spectrally accurate
/// for smooth periodic integrands).
fn circle_entropy(t: f64, wrap_terms: usize, grid: usize) -> f64 {
    let h = TAU / grid as f64;
    let mut acc = 0.0;
    for j in 0..grid {
        let delta = -PI + (j as f64 + 0.5) * h;
        let lq = wrapped_gaussian_log(delta, t, wrap_terms);
        if lq > LOG_UNDERFLOW {
            acc += lq.exp() * lq;
        }
    }
    acc * h
}

fn torus_entropy(t: f64, wrap_terms: usize, grid: usize) -> f64 {
    let h = TAU / grid as f64;
    // tabulate the circle factor once per axis; the 2-D integrand is the
    // product kernel
    let logs: Vec<f64> = (0..grid)
        .map(|j| wrapped_gaussian_log(-PI + (j as f64 + 0.5) * h, t, wrap_terms))
        .collect();
    let mut acc = 0.0;
    for la in &logs {
        for lb in &logs {
            let lq = la + lb;
            if lq > LOG_UNDERFLOW {
                acc += lq.exp() * lq;
            }
        }
    }
    acc * h * h
}

/// integral of q log q over S^2 on a latitude-longitude grid with sin
/// weight. The grid's polar axis is chosen orthogonal to z, so the kernel
/// peak stays away from the coordinate poles and the trapezoid rule
/// converges spectrally.
fn sphere2_entropy(m: &Manifold, t: f64, z: &[f64], cfg: &KernelSeriesConfig, grid: usize) -> f64 {
    let pole = orthonormal_to(z);
    let e2 = [
        pole[1] * z[2] - pole[2] * z[1],
        pole[2] * z[0] - pole[0] * z[2],
        pole[0] * z[1] - pole[1] * z[0],
    ];
    let (n_theta, n_phi) = (grid, 2 * grid);
    let h_theta = PI / n_theta as f64;
    let h_phi = TAU / n_phi as f64;
    let mut acc = 0.0;
    for i in 0..=n_theta {
        let theta = i as f64 * h_theta;
        let w_theta = if i == 0 || i == n_theta { 0.5 } else { 1.0 };
        let (st, ct) = theta.sin_cos();
        if st == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for j in 0..n_phi {
            let phi = j as f64 * h_phi;
            let (sp, cp) = phi.sin_cos();
            let y = [
                st * cp * z[0] + st * sp * e2[0] + ct * pole[0],
                st * cp * z[1] + st * sp * e2[1] + ct * pole[1],
                st * cp * z[2] + st * sp * e2[2] + ct * pole[2],
            ];
            let k = kernel_unchecked(m, t, z, &y, cfg);
            if k.log_density > LOG_UNDERFLOW {
                row += k.density * k.log_density;
            }
        }
        acc += w_theta * st * row;
    }
    acc * h_theta * h_phi
}

/// A unit vector orthogonal to `z` (|z| = 1).
fn orthonormal_to(z: &[f64]) -> [f64; 3] {
    // start from the coordinate axis least aligned with z
    let k = (0..3)
        .min_by(|&a, &b| z[a].abs().partial_cmp(&z[b].abs()).unwrap())
        .unwrap();
    let mut v = [0.0; 3];
    v[k] = 1.0;
    for i in 0..3 {
        v[i] -= z[k] * z[i];
    }
    let n = la::norm(&v);
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Closed-form KL of a diagonal Gaussian posterior from the standard normal
/// prior: 0.5 sum(var + mean^2 - 1 - log var).
pub fn kl_gaussian(mean: &[f64], var: &[f64]) -> Result<f64> {
    if mean.len() != var.len() {
        return Err(Error::ShapeMismatch(format!(
            "mean dim {} != var dim {}",
            mean.len(),
            var.len()
        )));
    }
    let mut acc = 0.0;
    for (m, v) in mean.iter().zip(var) {
        if !(*v > 0.0) {
            return Err(Error::DomainError(format!("non-positive variance {v}")));
        }
        acc += v + m * m - 1.0 - v.ln();
    }
    Ok(0.5 * acc)
}

/// Log density of the prior at `y`: -log Vol(Z) for closed manifolds, the
/// standard Gaussian for the Euclidean baseline.
pub fn prior_log_density(m: &Manifold, y: &ManifoldPoint) -> Result<f64> {
    m.check_on_manifold(y)?;
    match m {
        Manifold::Euclidean { dim } => {
            let d = *dim as f64;
            let sq = la::dot(y.coords(), y.coords());
            Ok(-0.5 * d * TAU.ln() - 0.5 * sq)
        }
        _ => Ok(-m.volume()?.ln()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::flat_torus_point;
    use crate::rng::substream;

    fn cfg() -> KernelSeriesConfig {
        KernelSeriesConfig::standard()
    }

    fn circle() -> Manifold {
        Manifold::sphere(1).unwrap()
    }

    fn circle_point(theta: f64) -> ManifoldPoint {
        ManifoldPoint::new(&circle(), vec![theta.cos(), theta.sin()]).unwrap()
    }

    #[test]
    fn config_tail_validation() {
        assert!(KernelSeriesConfig::new(2, 64, 64, 64, 64, 100.0).is_err());
        assert!(KernelSeriesConfig::new(24, 64, 64, 64, 64, 100.0).is_ok());
        assert!(KernelSeriesConfig::new(8, 2, 64, 64, 64, 1.0).is_err());
    }

    #[test]
    fn walk_tiny_time_returns_center() {
        let m = Manifold::sphere(2).unwrap();
        let z = ManifoldPoint::new(&m, vec![0.0, 0.0, 1.0]).unwrap();
        let p = PosteriorParams::new(z.clone(), 1e-300).unwrap();
        let cfg = RandomWalkConfig::new(16, 0).unwrap();
        let mut rng = substream(1, 0);
        let out = random_walk_sample(&m, &p, &cfg, &mut rng).unwrap();
        for (a, b) in out.coords().iter().zip(z.coords()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn walk_zero_noise_is_identity() {
        for m in [
            Manifold::sphere(2).unwrap(),
            Manifold::flat_torus2(),
            Manifold::embedded_torus(1.0, 0.5).unwrap(),
        ] {
            let z = match m {
                Manifold::Sphere { .. } => ManifoldPoint::new(&m, vec![0.0, 0.0, 1.0]).unwrap(),
                Manifold::FlatTorus2 => {
                    ManifoldPoint::new(&m, vec![1.0, 0.0, 0.0, 1.0]).unwrap()
                }
                _ => ManifoldPoint::new(&m, vec![1.5, 0.0, 0.0]).unwrap(),
            };
            let p = PosteriorParams::new(z.clone(), 0.25).unwrap();
            let noise = vec![vec![0.0; m.ambient_dim()]; 8];
            let out = random_walk_with_noise(&m, &p, &noise).unwrap();
            assert_eq!(out.point.coords(), z.coords(), "{}", m.name());
            for v in out.d_dt.iter() {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn walk_rejects_euclidean() {
        let m = Manifold::euclidean(2).unwrap();
        let z = ManifoldPoint::new(&m, vec![0.0, 0.0]).unwrap();
        let p = PosteriorParams::new(z, 0.1).unwrap();
        let mut rng = substream(2, 0);
        assert!(random_walk_sample(&m, &p, &RandomWalkConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn walk_jacobians_match_finite_differences() {
        let mut rng = substream(3, 0);
        for m in [
            Manifold::sphere(1).unwrap(),
            Manifold::sphere(2).unwrap(),
            Manifold::flat_torus2(),
            Manifold::embedded_torus(1.0, 0.5).unwrap(),
            Manifold::projective_sphere(2).unwrap(),
        ] {
            let n = m.ambient_dim();
            for trial in 0..5 {
                let z = m.uniform_sample(&mut rng);
                let t = 0.05 + 0.05 * trial as f64;
                let p = PosteriorParams::new(z.clone(), t).unwrap();
                let noise: Vec<Vec<f64>> = (0..6)
                    .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
                    .collect();
                let out = random_walk_with_noise(&m, &p, &noise).unwrap();

                let h = 1e-6;
                // d/dz: ambient perturbation of the start point
                for c in 0..n {
                    let mut zp = z.coords().to_vec();
                    let mut zm = zp.clone();
                    zp[c] += h;
                    zm[c] -= h;
                    let op = random_walk_with_noise(
                        &m,
                        &PosteriorParams {
                            center: ManifoldPoint::from_projection(zp),
                            time: t,
                        },
                        &noise,
                    )
                    .unwrap();
                    let om = random_walk_with_noise(
                        &m,
                        &PosteriorParams {
                            center: ManifoldPoint::from_projection(zm),
                            time: t,
                        },
                        &noise,
                    )
                    .unwrap();
                    for r in 0..n {
                        let fd =
                            (op.point.coords()[r] - om.point.coords()[r]) / (2.0 * h);
                        let an = out.d_dz[[r, c]];
                        assert!(
                            (an - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                            "{} d_dz[{r},{c}]: {an} vs {fd}",
                            m.name()
                        );
                    }
                }
                // d/dt
                let pp = PosteriorParams::new(z.clone(), t + h).unwrap();
                let pm = PosteriorParams::new(z.clone(), t - h).unwrap();
                let op = random_walk_with_noise(&m, &pp, &noise).unwrap();
                let om = random_walk_with_noise(&m, &pm, &noise).unwrap();
                for r in 0..n {
                    let fd = (op.point.coords()[r] - om.point.coords()[r]) / (2.0 * h);
                    let an = out.d_dt[r];
                    assert!(
                        (an - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                        "{} d_dt[{r}]: {an} vs {fd}",
                        m.name()
                    );
                }
            }
        }
    }

    #[test]
    fn walk_single_step_jacobian_is_near_tangent_projector() {
        let m = Manifold::sphere(2).unwrap();
        let z = ManifoldPoint::new(&m, vec![0.0, 0.0, 1.0]).unwrap();
        let p = PosteriorParams::new(z.clone(), 1e-8).unwrap();
        let mut rng = substream(4, 0);
        let noise: Vec<Vec<f64>> = vec![(0..3).map(|_| rng.sample(StandardNormal)).collect()];
        let out = random_walk_with_noise(&m, &p, &noise).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let tangent = if r == c { 1.0 } else { 0.0 }
                    - z.coords()[r] * z.coords()[c];
                assert!((out.d_dz[[r, c]] - tangent).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn circle_sampler_total_variation() {
        // binned TV between the walk and the wrapped-Gaussian kernel
        let m = circle();
        let z = circle_point(0.0);
        let t = 0.25;
        let p = PosteriorParams::new(z, t).unwrap();
        let walk = RandomWalkConfig::new(16, 0).unwrap();
        let mut rng = substream(5, 0);
        let bins = 100;
        let mut hist = vec![0usize; bins];
        let n = 100_000;
        for _ in 0..n {
            let y = random_walk_sample(&m, &p, &walk, &mut rng).unwrap();
            let theta = y.coords()[1].atan2(y.coords()[0]);
            let b = (((theta + PI) / TAU) * bins as f64) as usize;
            hist[b.min(bins - 1)] += 1;
        }
        let tv = binned_tv(&hist, n, t, bins);
        assert!(tv < 0.02, "TV = {tv}");
    }

    fn binned_tv(hist: &[usize], n: usize, t: f64, bins: usize) -> f64 {
        // exact bin masses by Simpson on a fine subgrid of each bin
        let width = TAU / bins as f64;
        let sub = 16;
        let mut tv = 0.0;
        for (b, &count) in hist.iter().enumerate() {
            let lo = -PI + b as f64 * width;
            let h = width / sub as f64;
            let mut mass = 0.0;
            for s in 0..sub {
                let a = lo + s as f64 * h;
                let q = |x: f64| wrapped_gaussian_log(x, t, 8).exp();
                mass += h / 6.0 * (q(a) + 4.0 * q(a + 0.5 * h) + q(a + h));
            }
            tv += (count as f64 / n as f64 - mass).abs();
        }
        0.5 * tv
    }

    #[test]
    fn circle_sampler_tv_shrinks_with_steps() {
        let m = circle();
        let z = circle_point(0.0);
        let t = 0.5;
        let p = PosteriorParams::new(z, t).unwrap();
        let bins = 100;
        let n = 400_000;
        let mut tvs = Vec::new();
        for steps in [16usize, 32, 64] {
            let walk = RandomWalkConfig::new(steps, 0).unwrap();
            let mut rng = substream(6, 0);
            let mut hist = vec![0usize; bins];
            for _ in 0..n {
                let y = random_walk_sample(&m, &p, &walk, &mut rng).unwrap();
                let theta = y.coords()[1].atan2(y.coords()[0]);
                let b = (((theta + PI) / TAU) * bins as f64) as usize;
                hist[b.min(bins - 1)] += 1;
            }
            tvs.push(binned_tv(&hist, n, t, bins));
        }
        assert!(
            tvs[0] > tvs[1] && tvs[1] > tvs[2],
            "TV not decreasing: {tvs:?}"
        );
    }

    #[test]
    fn kernel_circle_values() {
        let m = circle();
        let c = cfg();
        let wide = KernelSeriesConfig::wide();
        // stationary limit
        let k = heat_kernel_density(&m, 100.0, &circle_point(0.3), &circle_point(-1.0), &wide)
            .unwrap();
        assert!((k.density - 1.0 / TAU).abs() < 1e-12);
        // short time at the center: images are negligible
        let k = heat_kernel_density(&m, 0.01, &circle_point(0.7), &circle_point(0.7), &c).unwrap();
        assert!((k.density - 1.0 / (TAU * 0.01).sqrt()).abs() < 1e-12);
        assert!((k.density - 3.9894228).abs() < 1e-6);
    }

    #[test]
    fn kernel_underflow_flag() {
        let m = circle();
        let k = heat_kernel_density(&m, 1e-4, &circle_point(0.0), &circle_point(PI), &cfg())
            .unwrap();
        assert!(k.underflow);
        assert_eq!(k.density, 0.0);
        assert!(k.log_density < -1e4);
    }

    #[test]
    fn sphere_expansion_matches_eigen_series() {
        // independent routes agree at small t
        for dim in [2usize, 3] {
            let t = 0.01;
            let mut r = 0.0;
            while r <= 1.0 {
                let a = sphere_expansion_log(dim, t, r).exp();
                let b = sphere_spectral_density(dim, t, r, 256);
                // deep in the tail the alternating eigen-series cancels to
                // ~1e-15 of its term size, so the oracle carries an absolute
                // f64 floor on top of the relative tolerance
                assert!(
                    (a - b).abs() <= 1e-3 * b.abs() + 1e-14,
                    "S^{dim} r={r}: expansion {a} vs series {b}"
                );
                r += 0.05;
            }
        }
    }

    #[test]
    fn kernel_normalization_by_quadrature() {
        let c = cfg();
        for &t in &[0.01, 0.1, 1.0] {
            // circle
            let m = circle();
            let z = circle_point(0.4);
            let grid = 4096;
            let mut total = 0.0;
            for j in 0..grid {
                let theta = -PI + TAU * (j as f64 + 0.5) / grid as f64;
                let y = ManifoldPoint::new(&m, vec![theta.cos(), theta.sin()]).unwrap();
                total += heat_kernel_density(&m, t, &z, &y, &c).unwrap().density;
            }
            total *= TAU / grid as f64;
            assert!((total - 1.0).abs() < 1e-3, "circle t={t}: mass {total}");

            // flat torus
            let m = Manifold::flat_torus2();
            let z = ManifoldPoint::new(&m, flat_torus_point(0.3, -0.8)).unwrap();
            let grid = 256;
            let mut total = 0.0;
            for i in 0..grid {
                for j in 0..grid {
                    let th = -PI + TAU * (i as f64 + 0.5) / grid as f64;
                    let ph = -PI + TAU * (j as f64 + 0.5) / grid as f64;
                    let y = ManifoldPoint::new(&m, flat_torus_point(th, ph)).unwrap();
                    total += heat_kernel_density(&m, t, &z, &y, &c).unwrap().density;
                }
            }
            total *= (TAU / grid as f64).powi(2);
            assert!((total - 1.0).abs() < 1e-3, "torus t={t}: mass {total}");

            // sphere
            let m = Manifold::sphere(2).unwrap();
            let z = m.uniform_sample(&mut substream(8, 0));
            let (nt, np) = (512, 1024);
            let mut total = 0.0;
            for i in 0..=nt {
                let theta = PI * i as f64 / nt as f64;
                let w = if i == 0 || i == nt { 0.5 } else { 1.0 };
                for j in 0..np {
                    let phi = TAU * j as f64 / np as f64;
                    let y = ManifoldPoint::new(
                        &m,
                        vec![
                            theta.sin() * phi.cos(),
                            theta.sin() * phi.sin(),
                            theta.cos(),
                        ],
                    )
                    .unwrap();
                    total += w
                        * theta.sin()
                        * heat_kernel_density(&m, t, &z, &y, &c).unwrap().density;
                }
            }
            total *= (PI / nt as f64) * (TAU / np as f64);
            assert!((total - 1.0).abs() < 1e-3, "sphere t={t}: mass {total}");
        }
    }

    #[test]
    fn kernel_symmetry() {
        let c = cfg();
        let mut rng = substream(9, 0);
        for m in [
            circle(),
            Manifold::sphere(2).unwrap(),
            Manifold::flat_torus2(),
            Manifold::projective_sphere(2).unwrap(),
        ] {
            for &t in &[0.01, 0.3] {
                for _ in 0..50 {
                    let a = m.uniform_sample(&mut rng);
                    let b = m.uniform_sample(&mut rng);
                    let f = heat_kernel_density(&m, t, &a, &b, &c).unwrap().density;
                    let g = heat_kernel_density(&m, t, &b, &a, &c).unwrap().density;
                    assert!(
                        (f - g).abs() <= 1e-9 * f.abs().max(1.0),
                        "{} t={t}: {f} vs {g}",
                        m.name()
                    );
                }
            }
        }
    }

    #[test]
    fn chapman_kolmogorov_on_circle() {
        let m = circle();
        let c = cfg();
        let z = circle_point(0.2);
        let y = circle_point(-0.9);
        for &(s, t) in &[(0.05, 0.05), (0.1, 0.2)] {
            let grid = 8192;
            let mut conv = 0.0;
            for j in 0..grid {
                let theta = -PI + TAU * (j as f64 + 0.5) / grid as f64;
                let w = ManifoldPoint::new(&m, vec![theta.cos(), theta.sin()]).unwrap();
                conv += heat_kernel_density(&m, s, &z, &w, &c).unwrap().density
                    * heat_kernel_density(&m, t, &w, &y, &c).unwrap().density;
            }
            conv *= TAU / grid as f64;
            let direct = heat_kernel_density(&m, s + t, &z, &y, &c).unwrap().density;
            assert!(
                (conv - direct).abs() < 1e-6,
                "({s},{t}): {conv} vs {direct}"
            );
        }
    }

    #[test]
    fn heat_equation_residual_on_circle() {
        // dq/dt = (1/2) d^2 q / dtheta^2
        let t = 0.1;
        let (ht, hx) = (1e-5, 1e-3);
        let q = |tt: f64, dd: f64| wrapped_gaussian_log(dd, tt, 8).exp();
        let mut delta = -3.0;
        while delta <= 3.0 {
            let dt = (q(t + ht, delta) - q(t - ht, delta)) / (2.0 * ht);
            let dxx = (q(t, delta + hx) - 2.0 * q(t, delta) + q(t, delta - hx)) / (hx * hx);
            assert!(
                (dt - 0.5 * dxx).abs() <= 1e-3,
                "residual at delta={delta}: {}",
                dt - 0.5 * dxx
            );
            delta += 0.37;
        }
    }

    #[test]
    fn kl_asymptotic_values() {
        // flat torus at the time that makes the saturated KL match 6.42
        let m = Manifold::flat_torus2();
        let z = ManifoldPoint::new(&m, flat_torus_point(0.0, 0.0)).unwrap();
        let p = PosteriorParams::new(z, 3.766e-3).unwrap();
        let kl = kl_asymptotic(&m, &p).unwrap();
        let direct = -(TAU * 3.766e-3).ln() - 1.0 + (4.0 * PI * PI).ln();
        assert!((kl - direct).abs() < 1e-12);
        assert!((kl - 6.42).abs() < 5e-3, "kl = {kl}");

        // sphere at t = 0.01
        let m = Manifold::sphere(2).unwrap();
        let z = ManifoldPoint::new(&m, vec![0.0, 0.0, 1.0]).unwrap();
        let p = PosteriorParams::new(z, 0.01).unwrap();
        let kl = kl_asymptotic(&m, &p).unwrap();
        assert!((kl - 4.303).abs() < 1e-3, "kl = {kl}");

        // euclidean is rejected
        let m = Manifold::euclidean(2).unwrap();
        let z = ManifoldPoint::new(&m, vec![0.0, 0.0]).unwrap();
        let p = PosteriorParams::new(z, 0.01).unwrap();
        assert!(kl_asymptotic(&m, &p).is_err());
    }

    #[test]
    fn kl_asymptotic_diverges_as_t_vanishes() {
        let m = Manifold::sphere(2).unwrap();
        let z = ManifoldPoint::new(&m, vec![0.0, 0.0, 1.0]).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for &t in &[1.0, 0.1, 0.01, 1e-4, 1e-8, 1e-12] {
            let kl = kl_asymptotic(&m, &PosteriorParams::new(z.clone(), t).unwrap()).unwrap();
            assert!(kl > prev, "KL not increasing as t decreases");
            prev = kl;
        }
        assert!(prev > 20.0);
    }

    #[test]
    fn kl_asymptotic_decreasing_in_t_on_flat_torus() {
        let m = Manifold::flat_torus2();
        let z = ManifoldPoint::new(&m, flat_torus_point(1.0, 2.0)).unwrap();
        let mut prev = f64::INFINITY;
        let mut t = 1e-4;
        while t < 1.0 {
            let kl = kl_asymptotic(&m, &PosteriorParams::new(z.clone(), t).unwrap()).unwrap();
            assert!(kl < prev);
            prev = kl;
            t *= 1.7;
        }
    }

    #[test]
    fn kl_numeric_stationary_circle() {
        let m = circle();
        let wide = KernelSeriesConfig::wide();
        let p = PosteriorParams::new(circle_point(0.5), 100.0).unwrap();
        let kl = kl_numeric(&m, &p, &wide).unwrap();
        assert!(kl.abs() < 1e-9, "kl = {kl}");
    }

    #[test]
    fn kl_numeric_matches_asymptotic_flat_torus() {
        let m = Manifold::flat_torus2();
        let z = ManifoldPoint::new(&m, flat_torus_point(0.9, -2.1)).unwrap();
        let p = PosteriorParams::new(z, 0.01).unwrap();
        let num = kl_numeric(&m, &p, &cfg()).unwrap();
        let asym = kl_asymptotic(&m, &p).unwrap();
        assert!((num - asym).abs() < 1e-6, "{num} vs {asym}");
    }

    #[test]
    fn kl_numeric_close_to_asymptotic_sphere() {
        let m = Manifold::sphere(2).unwrap();
        let z = m.uniform_sample(&mut substream(10, 0));
        let p = PosteriorParams::new(z, 0.01).unwrap();
        let num = kl_numeric(&m, &p, &cfg()).unwrap();
        let asym = kl_asymptotic(&m, &p).unwrap();
        assert!((num - asym).abs() <= 0.01 * num.abs(), "{num} vs {asym}");
    }

    #[test]
    fn kl_numeric_unsupported() {
        let m = Manifold::embedded_torus(1.0, 0.5).unwrap();
        let z = ManifoldPoint::new(&m, vec![1.5, 0.0, 0.0]).unwrap();
        let p = PosteriorParams::new(z, 0.01).unwrap();
        assert!(matches!(
            kl_numeric(&m, &p, &cfg()),
            Err(Error::UnsupportedManifold(_))
        ));
    }

    #[test]
    fn kl_gaussian_values() {
        assert_eq!(kl_gaussian(&[0.0], &[1.0]).unwrap(), 0.0);
        assert!((kl_gaussian(&[1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(kl_gaussian(&[0.0], &[0.0]).is_err());
        assert!(kl_gaussian(&[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn kl_gaussian_matches_monte_carlo() {
        // E_q[log q - log p] estimated from 10^6 draws
        let mean = [0.4, -1.1];
        let var = [0.7, 2.3];
        let analytic = kl_gaussian(&mean, &var).unwrap();
        let mut rng = substream(11, 0);
        let n = 1_000_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..n {
            let mut log_ratio = 0.0;
            for k in 0..2 {
                let e: f64 = rng.sample(StandardNormal);
                let x = mean[k] + var[k].sqrt() * e;
                let log_q = -0.5 * (TAU * var[k]).ln() - (x - mean[k]).powi(2) / (2.0 * var[k]);
                let log_p = -0.5 * TAU.ln() - x * x / 2.0;
                log_ratio += log_q - log_p;
            }
            acc += log_ratio;
            acc2 += log_ratio * log_ratio;
        }
        let mc = acc / n as f64;
        let se = ((acc2 / n as f64 - mc * mc) / n as f64).sqrt();
        assert!(
            (mc - analytic).abs() < 3.0 * se,
            "mc {mc} vs analytic {analytic} (se {se})"
        );
    }

    #[test]
    fn prior_log_density_values() {
        let s2 = Manifold::sphere(2).unwrap();
        let z = ManifoldPoint::new(&s2, vec![0.0, 1.0, 0.0]).unwrap();
        assert!((prior_log_density(&s2, &z).unwrap() + (4.0 * PI).ln()).abs() < 1e-12);
        assert!((prior_log_density(&s2, &z).unwrap() + 2.5310).abs() < 1e-4);

        let ft = Manifold::flat_torus2();
        let z = ManifoldPoint::new(&ft, flat_torus_point(0.0, 0.0)).unwrap();
        assert!((prior_log_density(&ft, &z).unwrap() + (4.0 * PI * PI).ln()).abs() < 1e-12);
        assert!((prior_log_density(&ft, &z).unwrap() + 3.6758).abs() < 1e-4);

        let e2 = Manifold::euclidean(2).unwrap();
        let z = ManifoldPoint::new(&e2, vec![0.0, 0.0]).unwrap();
        assert!((prior_log_density(&e2, &z).unwrap() + TAU.ln()).abs() < 1e-12);
    }

    #[test]
    fn projective_kernel_sums_antipodal_images() {
        let rp2 = Manifold::projective_sphere(2).unwrap();
        let s2 = Manifold::sphere(2).unwrap();
        let c = cfg();
        let mut rng = substream(12, 0);
        for _ in 0..20 {
            let a = rp2.uniform_sample(&mut rng);
            let b = rp2.uniform_sample(&mut rng);
            let neg_b =
                ManifoldPoint::new(&s2, b.coords().iter().map(|v| -v).collect()).unwrap();
            let b_s = ManifoldPoint::new(&s2, b.coords().to_vec()).unwrap();
            let t = 0.05;
            let q_rp = heat_kernel_density(&rp2, t, &a, &b, &c).unwrap().density;
            let a_s = ManifoldPoint::new(&s2, a.coords().to_vec()).unwrap();
            let q1 = heat_kernel_density(&s2, t, &a_s, &b_s, &c).unwrap().density;
            let q2 = heat_kernel_density(&s2, t, &a_s, &neg_b, &c).unwrap().density;
            assert!((q_rp - (q1 + q2)).abs() <= 1e-12 * q_rp.max(1.0));
        }
    }
}
