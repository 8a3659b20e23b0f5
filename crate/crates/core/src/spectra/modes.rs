//! Closed-form Laplacian eigensystems on the interval, torus, and sphere.
//!
//! Eigenfunctions are normalized in L² of the unit measure: Lebesgue on
//! [0,1] and [0,1)², area/4π on the sphere. The square domain has no
//! supported closed-form basis here (its role is covariate experiments, not
//! spectral analysis).

use crate::error::{Error, Result};
use crate::kernels::{ln_gamma, Domain, DomainPoint};

/// One closed-form eigenfunction with unit L² norm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpectralMode {
    /// Constant function 1 (zero eigenvalue) on any domain.
    Constant,
    /// √2·cos(πk·u) on [0,1] (Neumann boundary), k ≥ 1.
    IntervalCos { k: u32 },
    /// √2·cos(2π(k₁u₁ + k₂u₂)) on the torus.
    TorusCos { k1: i32, k2: i32 },
    /// √2·sin(2π(k₁u₁ + k₂u₂)) on the torus.
    TorusSin { k1: i32, k2: i32 },
    /// Real spherical harmonic of degree l, order m (−l ≤ m ≤ l).
    SphereHarmonic { l: u32, m: i32 },
}

impl SpectralMode {
    pub fn eval(&self, p: &DomainPoint) -> f64 {
        const SQRT2: f64 = std::f64::consts::SQRT_2;
        let c = p.coords();
        match *self {
            SpectralMode::Constant => 1.0,
            SpectralMode::IntervalCos { k } => {
                SQRT2 * (std::f64::consts::PI * k as f64 * c[0]).cos()
            }
            SpectralMode::TorusCos { k1, k2 } => {
                let arg = 2.0 * std::f64::consts::PI * (k1 as f64 * c[0] + k2 as f64 * c[1]);
                SQRT2 * arg.cos()
            }
            SpectralMode::TorusSin { k1, k2 } => {
                let arg = 2.0 * std::f64::consts::PI * (k1 as f64 * c[0] + k2 as f64 * c[1]);
                SQRT2 * arg.sin()
            }
            SpectralMode::SphereHarmonic { l, m } => real_spherical_harmonic(l, m, c),
        }
    }
}

/// Real spherical harmonic normalized so ∫ S² dμ = 1 with μ = area/4π.
///
/// S_l0 = √(2l+1)·P_l(z); for m ≠ 0 a √2·cos(mφ)/√2·sin(|m|φ) pair scaled by
/// √((2l+1)(l−|m|)!/(l+|m|)!) on the associated Legendre part.
fn real_spherical_harmonic(l: u32, m: i32, c: &[f64]) -> f64 {
    let (x, y, z) = (c[0], c[1], c[2]);
    let am = m.unsigned_abs();
    let plm = assoc_legendre(l, am, z.clamp(-1.0, 1.0));
    let ln_norm = 0.5
        * ((2.0 * l as f64 + 1.0).ln() + ln_gamma((l - am) as f64 + 1.0)
            - ln_gamma((l + am) as f64 + 1.0));
    let norm = ln_norm.exp();
    if m == 0 {
        norm * plm
    } else {
        let phi = y.atan2(x);
        let angular = if m > 0 { (m as f64 * phi).cos() } else { (am as f64 * phi).sin() };
        std::f64::consts::SQRT_2 * norm * plm * angular
    }
}

/// Associated Legendre P_l^m(z) for 0 ≤ m ≤ l, positive convention
/// (no Condon–Shortley phase), by the standard stable upward recurrence.
fn assoc_legendre(l: u32, m: u32, z: f64) -> f64 {
    debug_assert!(m <= l);
    let mut pmm = 1.0;
    if m > 0 {
        let somx2 = ((1.0 - z) * (1.0 + z)).max(0.0).sqrt();
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= fact * somx2;
            fact += 2.0;
        }
    }
    if l == m {
        return pmm;
    }
    let mut pmmp1 = z * (2.0 * m as f64 + 1.0) * pmm;
    if l == m + 1 {
        return pmmp1;
    }
    let mut pll = 0.0;
    for ll in (m + 2)..=l {
        pll = (z * (2.0 * ll as f64 - 1.0) * pmmp1 - (ll + m - 1) as f64 * pmm)
            / (ll - m) as f64;
        pmm = pmmp1;
        pmmp1 = pll;
    }
    pll
}

/// An ascending Laplacian eigensystem with closed-form eigenfunctions.
#[derive(Debug, Clone)]
pub struct ManifoldSpectrum {
    domain: Domain,
    eigenvalues: Vec<f64>,
    modes: Vec<SpectralMode>,
    zero_count: usize,
}

impl ManifoldSpectrum {
    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Eigenvalues ξ_1 ≤ ξ_2 ≤ …, starting at 0.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn modes(&self) -> &[SpectralMode] {
        &self.modes
    }

    /// Number of zero eigenvalues (1 on all supported domains: the constant).
    pub fn zero_count(&self) -> usize {
        self.zero_count
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eval_mode(&self, k: usize, p: &DomainPoint) -> f64 {
        self.modes[k].eval(p)
    }
}

/// First `count` Laplace–Beltrami eigenpairs of a supported domain, sorted
/// ascending with deterministic lexicographic tie-breaking inside each
/// multiplicity class.
///
/// Interval uses Neumann boundary conditions (cosine basis, ξ = (πk)²);
/// torus modes are sin/cos lattice pairs with ξ = (2π)²(k₁²+k₂²); sphere
/// modes are real spherical harmonics with ξ = l(l+1), multiplicity 2l+1.
pub fn analytic_laplacian_spectrum(domain: Domain, count: usize) -> Result<ManifoldSpectrum> {
    if count == 0 {
        return Err(Error::invalid("spectrum needs count ≥ 1".to_string()));
    }
    let pi = std::f64::consts::PI;
    let (eigenvalues, modes): (Vec<f64>, Vec<SpectralMode>) = match domain {
        Domain::Interval => (0..count)
            .map(|k| {
                let xi = (pi * k as f64).powi(2);
                let mode = if k == 0 {
                    SpectralMode::Constant
                } else {
                    SpectralMode::IntervalCos { k: k as u32 }
                };
                (xi, mode)
            })
            .unzip(),
        Domain::Torus => {
            // one lattice point per ± pair: k₁ > 0, or k₁ = 0 and k₂ > 0
            let b = (count as f64).sqrt().ceil() as i32 + 1;
            let mut entries: Vec<(i64, i32, i32, u8)> = Vec::new();
            entries.push((0, 0, 0, 0));
            for k1 in 0..=b {
                let lo = if k1 == 0 { 1 } else { -b };
                for k2 in lo..=b {
                    let norm2 = (k1 as i64).pow(2) + (k2 as i64).pow(2);
                    entries.push((norm2, k1, k2, 0)); // cos
                    entries.push((norm2, k1, k2, 1)); // sin
                }
            }
            entries.sort();
            if entries.len() < count {
                return Err(Error::invalid(format!(
                    "internal lattice bound too small for count {count}"
                )));
            }
            entries
                .into_iter()
                .take(count)
                .map(|(norm2, k1, k2, parity)| {
                    let xi = (2.0 * pi).powi(2) * norm2 as f64;
                    let mode = if norm2 == 0 {
                        SpectralMode::Constant
                    } else if parity == 0 {
                        SpectralMode::TorusCos { k1, k2 }
                    } else {
                        SpectralMode::TorusSin { k1, k2 }
                    };
                    (xi, mode)
                })
                .unzip()
        }
        Domain::Sphere => {
            let mut eigenvalues = Vec::with_capacity(count);
            let mut modes = Vec::with_capacity(count);
            let mut l: u32 = 0;
            'outer: loop {
                for m in -(l as i32)..=(l as i32) {
                    if eigenvalues.len() == count {
                        break 'outer;
                    }
                    eigenvalues.push((l * (l + 1)) as f64);
                    modes.push(if l == 0 {
                        SpectralMode::Constant
                    } else {
                        SpectralMode::SphereHarmonic { l, m }
                    });
                }
                l += 1;
            }
            (eigenvalues, modes)
        }
        Domain::Square => {
            return Err(Error::invalid(
                "no closed-form Laplacian basis is provided for the square".to_string(),
            ))
        }
    };
    Ok(ManifoldSpectrum { domain, eigenvalues, modes, zero_count: 1 })
}
