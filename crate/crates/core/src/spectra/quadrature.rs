//! Quadrature rules representing the normalized measure of each domain.

use crate::error::{Error, Result};
use crate::kernels::{Domain, DomainPoint};

/// Nodes and positive weights; weights always sum to 1, matching the
/// unit-measure convention used throughout.
#[derive(Debug, Clone)]
pub struct Quadrature {
    domain: Domain,
    nodes: Vec<DomainPoint>,
    weights: Vec<f64>,
}

impl Quadrature {
    pub fn new(domain: Domain, nodes: Vec<DomainPoint>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::invalid(format!(
                "quadrature needs matching nonempty nodes/weights, got {} nodes, {} weights",
                nodes.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !w.is_finite() || w <= 0.0) {
            return Err(Error::invalid("quadrature weights must be positive".to_string()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!(
                "quadrature weights sum to {total}, expected 1"
            )));
        }
        if nodes.iter().any(|p| p.coords().len() != domain.coord_count()) {
            return Err(Error::invalid(format!("quadrature node arity mismatch for '{domain}'")));
        }
        Ok(Quadrature { domain, nodes, weights })
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn nodes(&self) -> &[DomainPoint] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Σ_q w_q f(s_q).
    pub fn integrate<F: Fn(&DomainPoint) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }
}

/// Gauss–Legendre nodes and weights on [0, 1], weights summing to 1.
///
/// Roots of P_n are found by Newton iteration from the Chebyshev initial
/// guess; this stays O(n²) and is accurate to ~1e-15 for n into the
/// thousands.
pub fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // initial guess for the i-th root of P_n (descending order on [-1,1])
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j as f64 - 1.0) * z * p2 - (j as f64 - 1.0) * p3) / j as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        // z is the (i+1)-th largest root; fill symmetrically, ascending in u
        nodes[n - 1 - i] = (1.0 + z) / 2.0;
        nodes[i] = (1.0 - z) / 2.0;
        weights[n - 1 - i] = w / 2.0;
        weights[i] = w / 2.0;
    }
    (nodes, weights)
}

/// Build the default quadrature for a domain.
///
/// Interval: `size`-point Gauss–Legendre. Square: `size`×`size` tensor
/// Gauss–Legendre. Torus: `size`×`size` midpoint grid (periodic trapezoid).
/// Sphere: `size` Gauss–Legendre colatitude bands × `2·size` uniform
/// longitudes, exact for spherical harmonics up to degree 2·size−1.
pub fn build_quadrature(domain: Domain, size: usize) -> Result<Quadrature> {
    if size < 2 {
        return Err(Error::invalid(format!(
            "quadrature size must be at least 2, got {size}"
        )));
    }
    match domain {
        Domain::Interval => {
            let (u, w) = gauss_legendre_01(size);
            let nodes = u
                .into_iter()
                .map(|x| DomainPoint::new(domain, vec![x]))
                .collect::<Result<Vec<_>>>()?;
            Quadrature::new(domain, nodes, w)
        }
        Domain::Square => {
            let (u, w) = gauss_legendre_01(size);
            let mut nodes = Vec::with_capacity(size * size);
            let mut weights = Vec::with_capacity(size * size);
            for i in 0..size {
                for j in 0..size {
                    nodes.push(DomainPoint::new(domain, vec![u[i], u[j]])?);
                    weights.push(w[i] * w[j]);
                }
            }
            Quadrature::new(domain, nodes, weights)
        }
        Domain::Torus => {
            let mut nodes = Vec::with_capacity(size * size);
            let step = 1.0 / size as f64;
            for i in 0..size {
                for j in 0..size {
                    nodes.push(DomainPoint::new(
                        domain,
                        vec![(i as f64 + 0.5) * step, (j as f64 + 0.5) * step],
                    )?);
                }
            }
            let weights = vec![step * step; size * size];
            Quadrature::new(domain, nodes, weights)
        }
        Domain::Sphere => {
            let (u, w) = gauss_legendre_01(size);
            let n_lon = 2 * size;
            let mut nodes = Vec::with_capacity(size * n_lon);
            let mut weights = Vec::with_capacity(size * n_lon);
            for i in 0..size {
                let z = 2.0 * u[i] - 1.0; // Gauss–Legendre in z = cos(colatitude)
                let r = (1.0 - z * z).max(0.0).sqrt();
                for j in 0..n_lon {
                    let phi = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / n_lon as f64;
                    nodes.push(DomainPoint::new(
                        domain,
                        vec![r * phi.cos(), r * phi.sin(), z],
                    )?);
                    weights.push(w[i] / n_lon as f64);
                }
            }
            Quadrature::new(domain, nodes, weights)
        }
    }
}
