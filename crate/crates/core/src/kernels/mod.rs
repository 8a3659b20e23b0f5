//! Kernel functions and domain geometry.
//!
//! Supported domains are the unit interval, the unit square, the unit
//! 2-sphere (embedded in R³), and the flat 2-torus with unit side. Kernels
//! are the Matérn family (evaluated on the domain's own metric) and spectral
//! Sobolev kernels, which are defined through Laplacian eigensystems and
//! therefore constructed in the `spectra` module rather than evaluated
//! pointwise here.

pub mod bessel;

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rand::Rng;

pub use bessel::{bessel_k, gamma, ln_gamma};

/// A compact base domain for the regression functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    /// Unit interval [0, 1].
    Interval,
    /// Unit square [0, 1]².
    Square,
    /// Unit sphere S² ⊂ R³ (points stored as embedding coordinates).
    Sphere,
    /// Flat torus T² = [0, 1)² with wraparound metric.
    Torus,
}

impl Domain {
    /// Intrinsic manifold dimension (1 for the interval, 2 otherwise).
    pub fn intrinsic_dim(self) -> usize {
        match self {
            Domain::Interval => 1,
            Domain::Square | Domain::Sphere | Domain::Torus => 2,
        }
    }

    /// Number of stored coordinates per point (3 for the sphere embedding).
    pub fn coord_count(self) -> usize {
        match self {
            Domain::Interval => 1,
            Domain::Square | Domain::Torus => 2,
            Domain::Sphere => 3,
        }
    }

    /// Draw a point uniformly with respect to the normalized domain measure.
    pub fn sample_uniform<R: Rng + ?Sized>(self, rng: &mut R) -> DomainPoint {
        let coords = match self {
            Domain::Interval => vec![rng.random::<f64>()],
            Domain::Square | Domain::Torus => vec![rng.random::<f64>(), rng.random::<f64>()],
            Domain::Sphere => {
                // z uniform on [-1, 1] and longitude uniform give area measure
                let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
                let phi = 2.0 * std::f64::consts::PI * rng.random::<f64>();
                let r = (1.0 - z * z).max(0.0).sqrt();
                vec![r * phi.cos(), r * phi.sin(), z]
            }
        };
        DomainPoint::new(self, coords).expect("uniform draw produced a valid point")
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Domain::Interval => "interval",
            Domain::Square => "square",
            Domain::Sphere => "sphere",
            Domain::Torus => "torus",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "interval" => Ok(Domain::Interval),
            "square" => Ok(Domain::Square),
            "sphere" => Ok(Domain::Sphere),
            "torus" => Ok(Domain::Torus),
            other => Err(Error::invalid(format!(
                "unknown domain '{other}' (expected interval, square, sphere, or torus)"
            ))),
        }
    }
}

/// A validated point on one of the supported domains.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPoint {
    coords: Vec<f64>,
}

impl DomainPoint {
    /// Validate raw coordinates for `domain` and build a point.
    ///
    /// Torus coordinates are reduced modulo 1; interval/square coordinates
    /// must already lie in [0, 1]; sphere coordinates must have unit norm
    /// within 1e-9.
    pub fn new(domain: Domain, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != domain.coord_count() {
            return Err(Error::invalid(format!(
                "point has {} coordinates but domain '{domain}' needs {}",
                coords.len(),
                domain.coord_count()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("point coordinates must be finite".to_string()));
        }
        let coords = match domain {
            Domain::Interval | Domain::Square => {
                if coords.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
                    return Err(Error::invalid(format!(
                        "coordinates {coords:?} fall outside [0, 1]"
                    )));
                }
                coords
            }
            Domain::Torus => coords.iter().map(|c| c.rem_euclid(1.0)).collect(),
            Domain::Sphere => {
                let norm = coords.iter().map(|c| c * c).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "point not on sphere: norm {norm} differs from 1"
                    )));
                }
                coords
            }
        };
        Ok(DomainPoint { coords })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// Kernel family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Matern,
    SobolevSpectral,
}

/// A kernel choice: family, smoothness, range, and the domain it lives on.
///
/// For the Matérn family `smoothness` is ν > 0 and `range` is ρ > 0. For the
/// spectral Sobolev family `smoothness` is an integer order r ≥ 1 with
/// 2r > dim, and `range` is unused.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub smoothness: f64,
    pub range: f64,
    pub domain: Domain,
}

impl KernelSpec {
    pub fn matern(domain: Domain, nu: f64, rho: f64) -> Result<Self> {
        if !nu.is_finite() || nu <= 0.0 {
            return Err(Error::invalid(format!("Matérn smoothness must be positive, got {nu}")));
        }
        if !rho.is_finite() || rho <= 0.0 {
            return Err(Error::invalid(format!("Matérn range must be positive, got {rho}")));
        }
        Ok(KernelSpec { family: KernelFamily::Matern, smoothness: nu, range: rho, domain })
    }

    pub fn sobolev(domain: Domain, order: f64) -> Result<Self> {
        if !order.is_finite() || order < 1.0 || order.fract() != 0.0 {
            return Err(Error::invalid(format!(
                "Sobolev order must be an integer ≥ 1, got {order}"
            )));
        }
        if 2.0 * order <= domain.intrinsic_dim() as f64 {
            return Err(Error::invalid(format!(
                "Sobolev order {order} too small on '{domain}': need 2·order > {}",
                domain.intrinsic_dim()
            )));
        }
        Ok(KernelSpec { family: KernelFamily::SobolevSpectral, smoothness: order, range: 1.0, domain })
    }

    /// Evaluate K(p, q). Only direct-evaluation families support this; the
    /// spectral Sobolev family is materialized through its eigensystem (see
    /// `spectra::sobolev_kernel_from_spectrum`).
    pub fn eval(&self, p: &DomainPoint, q: &DomainPoint) -> Result<f64> {
        match self.family {
            KernelFamily::Matern => matern_eval(self, distance(self.domain, p, q)?),
            KernelFamily::SobolevSpectral => Err(Error::invalid(
                "spectral Sobolev kernels have no pointwise form; build the basis \
                 with spectra::sobolev_kernel_from_spectrum"
                    .to_string(),
            )),
        }
    }
}

/// Matérn correlation at distance `t`:
/// (2^{1−ν}/Γ(ν)) · s^ν · K_ν(s) with s = √(2ν)·t/ρ.
///
/// Half-integer orders (ν = p + 1/2) use the exact exponential-polynomial
/// form; other orders go through the Bessel evaluation. Returns 1 at t = 0.
pub fn matern_eval(spec: &KernelSpec, t: f64) -> Result<f64> {
    check_matern_args(spec, t)?;
    let nu = spec.smoothness;
    let half_steps = nu - 0.5;
    if half_steps >= 0.0 && (half_steps - half_steps.round()).abs() < 1e-12 {
        let s = (2.0 * nu).sqrt() * t / spec.range;
        if s < 1e-10 {
            return Ok(1.0);
        }
        return Ok(matern_half_integer(half_steps.round() as usize, s));
    }
    matern_eval_general(spec, t)
}

/// Matérn correlation computed through K_ν for arbitrary ν > 0.
///
/// Kept public so the closed-form half-integer path can be cross-checked
/// against the Bessel route.
pub fn matern_eval_general(spec: &KernelSpec, t: f64) -> Result<f64> {
    check_matern_args(spec, t)?;
    let nu = spec.smoothness;
    let s = (2.0 * nu).sqrt() * t / spec.range;
    if s < 1e-10 {
        return Ok(1.0);
    }
    let k = bessel_k(nu, s)?;
    let value = 2.0_f64.powf(1.0 - nu) / gamma(nu) * s.powf(nu) * k;
    // mathematically in (0, 1]; clip fp noise at the upper end
    Ok(value.min(1.0))
}

fn check_matern_args(spec: &KernelSpec, t: f64) -> Result<()> {
    if spec.family != KernelFamily::Matern {
        return Err(Error::invalid(format!(
            "matern_eval called with a {:?} kernel",
            spec.family
        )));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::invalid(format!("distance must be non-negative, got {t}")));
    }
    Ok(())
}

/// Exact Matérn form at ν = p + 1/2:
/// e^{−s} · (p!/(2p)!) · Σ_{j=0}^{p} [(p+j)!/(j!(p−j)!)] (2s)^{p−j}.
fn matern_half_integer(p: usize, s: f64) -> f64 {
    let mut prefactor = 1.0; // p!/(2p)! = 1/∏_{i=p+1}^{2p} i
    for i in (p + 1)..=(2 * p) {
        prefactor /= i as f64;
    }
    let two_s = 2.0 * s;
    let mut coef = 1.0; // (p+j)!/(j!(p−j)!) at j = 0
    let mut sum = two_s.powi(p as i32);
    for j in 1..=p {
        coef *= (p + j) as f64 * (p - j + 1) as f64 / j as f64;
        sum += coef * two_s.powi((p - j) as i32);
    }
    (-s).exp() * prefactor * sum
}

/// Distance between two points under the domain's own metric: Euclidean on
/// the interval and square, per-coordinate wraparound then Euclidean on the
/// torus, great-circle arc on the sphere.
pub fn distance(domain: Domain, p: &DomainPoint, q: &DomainPoint) -> Result<f64> {
    let (a, b) = (p.coords(), q.coords());
    if a.len() != domain.coord_count() || b.len() != domain.coord_count() {
        return Err(Error::invalid(format!(
            "point arity ({}, {}) does not match domain '{domain}'",
            a.len(),
            b.len()
        )));
    }
    let d = match domain {
        Domain::Interval | Domain::Square => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        Domain::Torus => a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                let delta = (x - y).abs();
                let wrapped = delta.min(1.0 - delta);
                wrapped * wrapped
            })
            .sum::<f64>()
            .sqrt(),
        Domain::Sphere => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            dot.clamp(-1.0, 1.0).acos()
        }
    };
    Ok(d)
}

/// Gram matrix G[a][b] = K(p_a, p_b) of a kernel over a point set.
pub fn gram_matrix(spec: &KernelSpec, points: &[DomainPoint]) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::invalid("gram_matrix needs at least one point".to_string()));
    }
    let n = points.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = spec.eval(&points[i], &points[j])?;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}
