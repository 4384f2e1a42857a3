use crate::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error.
pub const REL_FLOOR: f64 = 1e-8;

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter index with the largest error.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares a reverse-mode gradient against central finite differences.
///
/// `value` evaluates the scalar function; `gradient` returns its analytic
/// gradient at the same point.
pub fn grad_check<F, G>(value: F, gradient: G, point: &[f64]) -> Result<GradCheck>
where
    F: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    grad_check_indices(value, gradient, point, &(0..point.len()).collect::<Vec<_>>())
}

/// Like [`grad_check`] but only differences the listed coordinates.
pub fn grad_check_indices<F, G>(value: F, gradient: G, point: &[f64], indices: &[usize]) -> Result<GradCheck>
where
    F: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let full = gradient(point)?;
    if full.len() != point.len() {
        return Err(Error::ShapeMismatch {
            expected: point.len(),
            got: full.len(),
        });
    }
    if full.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("analytic gradient".into()));
    }
    let mut x = point.to_vec();
    let mut analytic = Vec::with_capacity(indices.len());
    let mut numeric = Vec::with_capacity(indices.len());
    let mut max_rel_error: f64 = 0.0;
    let mut worst_index = indices.first().copied().unwrap_or(0);
    for &i in indices {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let plus = value(&x)?;
        x[i] = orig - FD_STEP;
        let minus = value(&x)?;
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("function value near coordinate {i}")));
        }
        let fd = (plus - minus) / (2.0 * FD_STEP);
        let err = relative_error(full[i], fd);
        if err > max_rel_error {
            max_rel_error = err;
            worst_index = i;
        }
        analytic.push(full[i]);
        numeric.push(fd);
    }
    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff_engine::mlp::{MlpParams, DEFAULT_LAYERS};
    use crate::diff_engine::tape::Tape;
    use crate::Vec3;

    #[test]
    fn square() {
        let r = grad_check(
            |w| Ok(w[0] * w[0]),
            |w| {
                let t = Tape::new();
                let v = t.var(w[0]);
                Ok(vec![(v * v).backward().wrt(&v)])
            },
            &[3.0],
        )
        .unwrap();
        assert_eq!(r.analytic[0], 6.0);
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn mlp_parameters() {
        let mlp = MlpParams::init(&DEFAULT_LAYERS, 17).unwrap();
        let x = Vec3::new(0.36, -0.48, 0.8);
        let r = grad_check(
            |p| {
                let m = MlpParams {
                    layers: mlp.layers.clone(),
                    params: p.to_vec(),
                };
                m.forward(&x)
            },
            |p| {
                let m = MlpParams {
                    layers: mlp.layers.clone(),
                    params: p.to_vec(),
                };
                let mut g = vec![0.0; p.len()];
                m.backward_batch(&[x], &[1.0], &mut g, None);
                Ok(g)
            },
            &mlp.params,
        )
        .unwrap();
        assert!(
            r.max_rel_error < 1e-4,
            "rel err {} at {}",
            r.max_rel_error,
            r.worst_index
        );
    }

    #[test]
    fn non_finite_is_error() {
        let r = grad_check(|_| Ok(f64::NAN), |_| Ok(vec![1.0]), &[0.0]);
        assert!(r.is_err());
    }
}
