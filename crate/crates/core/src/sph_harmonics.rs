//! Real spherical harmonics, truncated expansions and least-squares fitting.
//!
//! Normalization is orthonormal over the sphere with no Condon-Shortley
//! phase, so `Y_{1,-1}, Y_{1,0}, Y_{1,1}` are `sqrt(3/4pi) * (y, z, x)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::sphere_geom::{omega, SphereCoord, UnitDirection};
use crate::{Error, Result};

/// Relative singular-value threshold for rank detection in [`fit_expansion`].
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Flat index of `(l, m)` in an expansion's coefficient array.
pub fn coeff_index(l: usize, m: i64) -> usize {
    l * l + (m + l as i64) as usize
}

/// Coefficients `c_{l,m}` for `l <= max_degree`, ordered by `l` then `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShExpansion {
    pub max_degree: usize,
    pub coeffs: Vec<f64>,
}

impl ShExpansion {
    pub fn zeros(max_degree: usize) -> Self {
        Self {
            max_degree,
            coeffs: vec![0.0; (max_degree + 1) * (max_degree + 1)],
        }
    }

    pub fn from_coeffs(max_degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        let n = (max_degree + 1) * (max_degree + 1);
        if coeffs.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: coeffs.len(),
            });
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("spherical harmonic coefficients".into()));
        }
        Ok(Self { max_degree, coeffs })
    }

    pub fn get(&self, l: usize, m: i64) -> f64 {
        self.coeffs[coeff_index(l, m)]
    }

    pub fn set(&mut self, l: usize, m: i64, value: f64) {
        let i = coeff_index(l, m);
        self.coeffs[i] = value;
    }
}

/// `Y_{l,m}(u)`.
pub fn eval_basis(l: usize, m: i64, u: UnitDirection) -> Result<f64> {
    if m.unsigned_abs() as usize > l {
        return Err(Error::InvalidArgument(format!("|m| > l for (l={l}, m={m})")));
    }
    let all = basis_all(l, u);
    Ok(all[coeff_index(l, m)])
}

/// All basis values up to degree `max_degree` in [`coeff_index`] order.
pub fn basis_all(max_degree: usize, u: UnitDirection) -> Vec<f64> {
    let n = max_degree + 1;
    let cos_t = u.z.clamp(-1.0, 1.0);
    let sin_t = u.x.hypot(u.y);
    let phi = if sin_t > 0.0 { u.y.atan2(u.x) } else { 0.0 };

    // Associated Legendre P_l^m(cos t) without the Condon-Shortley phase.
    let mut p = vec![0.0; n * n];
    let idx = |l: usize, m: usize| l * n + m;
    p[idx(0, 0)] = 1.0;
    for m in 1..n {
        p[idx(m, m)] = p[idx(m - 1, m - 1)] * (2 * m - 1) as f64 * sin_t;
    }
    for m in 0..n {
        if m + 1 < n {
            p[idx(m + 1, m)] = cos_t * (2 * m + 1) as f64 * p[idx(m, m)];
        }
        for l in (m + 2)..n {
            p[idx(l, m)] = ((2 * l - 1) as f64 * cos_t * p[idx(l - 1, m)] - (l + m - 1) as f64 * p[idx(l - 2, m)])
                / (l - m) as f64;
        }
    }

    let mut out = vec![0.0; n * n];
    for l in 0..n {
        for m in 0..=l {
            let k = normalization(l, m);
            let plm = p[idx(l, m)];
            if m == 0 {
                out[coeff_index(l, 0)] = k * plm;
            } else {
                let (s, c) = (m as f64 * phi).sin_cos();
                out[coeff_index(l, m as i64)] = std::f64::consts::SQRT_2 * k * c * plm;
                out[coeff_index(l, -(m as i64))] = std::f64::consts::SQRT_2 * k * s * plm;
            }
        }
    }
    out
}

fn normalization(l: usize, m: usize) -> f64 {
    // (l-m)!/(l+m)! as a running product to stay finite at moderate l.
    let mut ratio = 1.0;
    for k in (l - m + 1)..=(l + m) {
        ratio /= k as f64;
    }
    ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt()
}

/// `r_L(d) = sum_l sum_m c_{l,m} Y_{l,m}(omega(d))`.
pub fn eval_expansion(e: &ShExpansion, d: SphereCoord) -> f64 {
    let basis = basis_all(e.max_degree, omega(d));
    basis.iter().zip(&e.coeffs).map(|(y, c)| y * c).sum()
}

/// Least-squares fit result.
#[derive(Debug, Clone)]
pub struct ShFit {
    pub expansion: ShExpansion,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub condition: f64,
}

/// Fits `c_{l,m}` minimizing `sum_j (r_L(d_j) - r_j)^2` by SVD.
pub fn fit_expansion(samples: &[(SphereCoord, f64)], max_degree: usize) -> Result<ShFit> {
    let cols = (max_degree + 1) * (max_degree + 1);
    if samples.len() < cols {
        return Err(Error::InvalidArgument(format!(
            "need at least {cols} samples for degree {max_degree}, got {}",
            samples.len()
        )));
    }
    if samples
        .iter()
        .any(|(d, r)| !r.is_finite() || !d.theta.is_finite() || !d.phi.is_finite())
    {
        return Err(Error::NonFinite("radius samples".into()));
    }
    let rows: Vec<Vec<f64>> = samples.iter().map(|(d, _)| basis_all(max_degree, omega(*d))).collect();
    let a = DMatrix::from_fn(samples.len(), cols, |i, j| rows[i][j]);
    let b = DVector::from_iterator(samples.len(), samples.iter().map(|(_, r)| *r));

    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_TOLERANCE * smax)
        .count();
    if rank < cols {
        return Err(Error::RankDeficient { rank, cols, condition });
    }
    let x = svd
        .solve(&b, RANK_TOLERANCE * smax)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let residual = &a * &x - &b;
    let max_residual = residual.amax();
    let mean_residual = residual.iter().map(|r| r.abs()).sum::<f64>() / samples.len() as f64;
    Ok(ShFit {
        expansion: ShExpansion::from_coeffs(max_degree, x.iter().copied().collect())?,
        max_residual,
        mean_residual,
        condition,
    })
}
