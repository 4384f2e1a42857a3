//! Training objectives and their gradients.
//!
//! Chamfer gradients reach only the predicted points, and nearest-neighbour
//! assignments are held fixed within an evaluation.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::assembly::{AssemblyGrad, PrimitiveAssembly, SurfaceSampleSet};
use crate::spatial::nearest_all;
use crate::sphere_geom::UnitDirection;
use crate::{Error, Result, Vec3};

/// Predicted probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
pub const BCE_CLAMP: f64 = 1e-7;
/// Surface loss charged when extraction leaves no predicted points.
pub const EMPTY_SURFACE_PENALTY: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_occupancy: f64,
    pub w_surface: f64,
    pub w_overlap: f64,
    /// Overlap budget: summed indicator mass tolerated before penalising.
    pub tau_r: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_occupancy: 1.0,
            w_surface: 10.0,
            w_overlap: 0.0,
            tau_r: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_occupancy", self.w_occupancy),
            ("w_surface", self.w_surface),
            ("w_overlap", self.w_overlap),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be a finite value >= 0, got {w}"
                )));
            }
        }
        if self.w_overlap > 0.0 && !(self.tau_r > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tau_r must be > 0 when the overlap term is on, got {}",
                self.tau_r
            )));
        }
        Ok(())
    }
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub surface: f64,
    pub occupancy: f64,
    pub overlap: f64,
}

/// Symmetric Chamfer distance between `predicted` and `target`.
pub fn surface_loss(predicted: &[Vec3], target: &[Vec3]) -> Result<f64> {
    surface_loss_grad(predicted, target).map(|(v, _)| v)
}

/// Chamfer value and its gradient with respect to each predicted point.
pub fn surface_loss_grad(predicted: &[Vec3], target: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
    if target.is_empty() {
        return Err(Error::InvalidArgument("target point set is empty".into()));
    }
    if predicted.is_empty() {
        warn!("no predicted surface points; charging the empty-set penalty");
        return Ok((EMPTY_SURFACE_PENALTY, Vec::new()));
    }
    let mut grad = vec![Vec3::zeros(); predicted.len()];
    let unit = |a: &Vec3, b: &Vec3| {
        let d = a - b;
        let n = d.norm();
        if n > 0.0 {
            d / n
        } else {
            Vec3::zeros()
        }
    };

    let np = predicted.len() as f64;
    let mut forward = 0.0;
    for ((p, (j, d)), g) in predicted.iter().zip(nearest_all(target, predicted)).zip(&mut grad) {
        forward += d;
        *g += unit(p, &target[j]) / np;
    }

    let nt = target.len() as f64;
    let mut backward = 0.0;
    for (q, (i, d)) in target.iter().zip(nearest_all(predicted, target)) {
        backward += d;
        grad[i] += unit(&predicted[i], q) / nt;
    }
    Ok((forward / np + backward / nt, grad))
}

fn check_labels(predictions: &[f64], labels: &[u8]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: predictions.len(),
            got: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("no occupancy samples".into()));
    }
    if let Some(bad) = labels.iter().find(|l| **l > 1) {
        return Err(Error::InvalidArgument(format!(
            "occupancy label must be 0 or 1, got {bad}"
        )));
    }
    Ok(())
}

/// Mean binary cross entropy of clamped predictions.
pub fn occupancy_loss(predictions: &[f64], labels: &[u8]) -> Result<f64> {
    occupancy_loss_grad(predictions, labels).map(|(v, _)| v)
}

/// BCE value and its derivative with respect to each prediction (zero where
/// the clamp is active).
pub fn occupancy_loss_grad(predictions: &[f64], labels: &[u8]) -> Result<(f64, Vec<f64>)> {
    check_labels(predictions, labels)?;
    let n = predictions.len() as f64;
    let mut total = 0.0;
    let grad = predictions
        .iter()
        .zip(labels)
        .map(|(&o, &y)| {
            let c = o.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let active = c == o;
            if y == 1 {
                total -= c.ln();
                if active {
                    -1.0 / (c * n)
                } else {
                    0.0
                }
            } else {
                total -= (1.0 - c).ln();
                if active {
                    1.0 / ((1.0 - c) * n)
                } else {
                    0.0
                }
            }
        })
        .collect();
    Ok((total / n, grad))
}

/// Mean of `ReLU(sum_i O_i(x) - tau_r)` over the samples.
pub fn overlap_regularizer(a: &PrimitiveAssembly, points: &[Vec3], tau_r: f64) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let sums = a.indicator_sum(points);
    sums.iter().map(|s| (s - tau_r).max(0.0)).sum::<f64>() / points.len() as f64
}

/// Overlap regularizer with its gradient accumulated into `grads` (scaled by
/// `weight`).
pub fn overlap_regularizer_backward(
    a: &PrimitiveAssembly,
    points: &[Vec3],
    tau_r: f64,
    weight: f64,
    grads: &mut AssemblyGrad,
) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let n = points.len() as f64;
    let sums = a.indicator_sum(points);
    let upstream: Vec<f64> = sums.iter().map(|s| if *s > tau_r { weight / n } else { 0.0 }).collect();
    let active: Vec<usize> = (0..points.len()).filter(|&k| upstream[k] != 0.0).collect();
    if !active.is_empty() {
        let xs: Vec<Vec3> = active.iter().map(|&k| points[k]).collect();
        let up: Vec<f64> = active.iter().map(|&k| upstream[k]).collect();
        a.indicator_sum_backward(&xs, &up, grads);
    }
    sums.iter().map(|s| (s - tau_r).max(0.0)).sum::<f64>() / n
}

/// Weighted sum of the components; a non-finite component is an error.
pub fn total_loss(w: &LossWeights, c: &LossComponents) -> Result<f64> {
    for (name, v) in [
        ("surface", c.surface),
        ("occupancy", c.occupancy),
        ("overlap", c.overlap),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} loss is {v}")));
        }
    }
    let mut total = w.w_occupancy * c.occupancy + w.w_surface * c.surface;
    // keep a disabled regularizer from contributing even as 0 * value
    if w.w_overlap > 0.0 {
        total += w.w_overlap * c.overlap;
    }
    Ok(total)
}

/// One minibatch for [`assembly_loss`].
#[derive(Debug, Clone, Copy)]
pub struct LossBatch<'a> {
    pub directions: &'a [UnitDirection],
    pub target_surface: &'a [Vec3],
    pub occupancy_points: &'a [Vec3],
    pub occupancy_labels: &'a [u8],
    /// Points used by the overlap regularizer.
    pub overlap_points: &'a [Vec3],
    /// Whether surface extraction rejects points buried in other primitives.
    pub filter: bool,
    /// Reuse this selection of (owner, direction) pairs instead of running
    /// extraction; the points themselves are recomputed.
    pub frozen_surface: Option<&'a SurfaceSampleSet>,
}

/// Everything computed in one loss evaluation.
#[derive(Debug, Clone)]
pub struct LossEvaluation {
    pub components: LossComponents,
    pub total: f64,
    pub surface: SurfaceSampleSet,
    pub grads: Option<AssemblyGrad>,
}

/// Evaluates the weighted objective of `a` on a batch, with gradients with
/// respect to every primitive when `with_grad` is set.
pub fn assembly_loss(
    a: &PrimitiveAssembly,
    w: &LossWeights,
    batch: &LossBatch<'_>,
    with_grad: bool,
) -> Result<LossEvaluation> {
    let mut grads = with_grad.then(|| a.zero_grad());

    let surface = match batch.frozen_surface {
        Some(s) => a.recompute_surface(s),
        None => a.extract_surface_with(batch.directions, batch.filter)?,
    };
    let mut c = LossComponents::default();
    if w.w_surface > 0.0 {
        let (ls, g) = surface_loss_grad(&surface.points, batch.target_surface)?;
        c.surface = ls;
        if let Some(grads) = grads.as_mut() {
            if !g.is_empty() {
                let scaled: Vec<Vec3> = g.iter().map(|v| v * w.w_surface).collect();
                a.surface_backward(&surface, &scaled, grads);
            }
        }
    }

    if w.w_occupancy > 0.0 {
        let xs = batch.occupancy_points;
        let sums = a.indicator_sum(xs);
        let probs: Vec<f64> = sums.iter().map(|s| crate::diff_engine::sigmoid(*s)).collect();
        let (lo, dprob) = occupancy_loss_grad(&probs, batch.occupancy_labels)?;
        c.occupancy = lo;
        if let Some(grads) = grads.as_mut() {
            let up: Vec<f64> = dprob
                .iter()
                .zip(&probs)
                .map(|(d, p)| d * p * (1.0 - p) * w.w_occupancy)
                .collect();
            a.indicator_sum_backward(xs, &up, grads);
        }
    }

    if w.w_overlap > 0.0 {
        c.overlap = match grads.as_mut() {
            Some(grads) => overlap_regularizer_backward(a, batch.overlap_points, w.tau_r, w.w_overlap, grads),
            None => overlap_regularizer(a, batch.overlap_points, w.tau_r),
        };
    }

    let total = total_loss(w, &c)?;
    Ok(LossEvaluation {
        components: c,
        total,
        surface,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff_engine::{grad_check, grad_check_indices, MlpParams, DEFAULT_LAYERS};
    use crate::nsd::{IndicatorConfig, NsdPrimitive};
    use crate::sphere_geom::{omega, sample_directions, DirectionScheme};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                )
            })
            .collect()
    }

    #[test]
    fn chamfer_examples() {
        let o = Vec3::zeros();
        let ex = Vec3::x();
        assert_eq!(surface_loss(&[o, ex], &[ex, o]).unwrap(), 0.0);
        assert_eq!(surface_loss(&[o], &[ex]).unwrap(), 2.0);
        assert_eq!(surface_loss(&[o], &[ex, -ex]).unwrap(), 2.0);
        assert_eq!(surface_loss(&[], &[ex]).unwrap(), EMPTY_SURFACE_PENALTY);
        assert!(surface_loss(&[o], &[]).is_err());
    }

    #[test]
    fn chamfer_grad_matches_fd() {
        for seed in 0..5 {
            let pred = cloud(40, seed);
            let target = cloud(60, seed + 100);
            let flat: Vec<f64> = pred
                .iter()
                .flat_map(|p| p.iter().copied().collect::<Vec<_>>())
                .collect();
            let unflat = |x: &[f64]| x.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect::<Vec<_>>();
            let chk = grad_check(
                |x| surface_loss(&unflat(x), &target),
                |x| {
                    let (_, g) = surface_loss_grad(&unflat(x), &target)?;
                    Ok(g.iter().flat_map(|v| v.iter().copied().collect::<Vec<_>>()).collect())
                },
                &flat,
            )
            .unwrap();
            assert!(chk.max_rel_error < 1e-4, "{}", chk.max_rel_error);
        }
    }

    proptest! {
        #[test]
        fn chamfer_symmetric_nonnegative_translation_invariant(
            seed in 0u64..1000,
            n in 1usize..30,
            m in 1usize..30,
            shift in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let a = cloud(n, seed);
            let b = cloud(m, seed + 7);
            let ab = surface_loss(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - surface_loss(&b, &a).unwrap()).abs() < 1e-12);
            let s = Vec3::from(shift);
            let a2: Vec<Vec3> = a.iter().map(|p| p + s).collect();
            let b2: Vec<Vec3> = b.iter().map(|p| p + s).collect();
            prop_assert!((ab - surface_loss(&a2, &b2).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn bce_examples() {
        assert!(occupancy_loss(&[1.0, 0.0], &[1, 0]).unwrap() < 1e-6);
        assert!((occupancy_loss(&[0.5; 4], &[0, 1, 1, 0]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((occupancy_loss(&[0.9], &[1]).unwrap() + 0.9f64.ln()).abs() < 1e-12);
        assert!((occupancy_loss(&[0.9], &[1]).unwrap() - 0.1054).abs() < 1e-4);
        assert!(occupancy_loss(&[0.5], &[2]).is_err());
        assert!(occupancy_loss(&[0.5], &[]).is_err());
    }

    #[test]
    fn bce_grad_matches_fd() {
        let preds = [0.3, 0.6, 0.95, 0.51];
        let labels = [1, 0, 1, 0];
        let chk = grad_check(
            |x| occupancy_loss(x, &labels),
            |x| occupancy_loss_grad(x, &labels).map(|(_, g)| g),
            &preds,
        )
        .unwrap();
        assert!(chk.max_rel_error < 1e-7);
    }

    fn spheres(list: &[(f64, Vec3)]) -> PrimitiveAssembly {
        let prims = list
            .iter()
            .enumerate()
            .map(|(i, (r, c))| NsdPrimitive::sphere(i, *r, *c))
            .collect();
        PrimitiveAssembly::new(prims, IndicatorConfig::default(), 0.9, 0.1).unwrap()
    }

    #[test]
    fn overlap_examples() {
        let pts = cloud(2000, 3);
        assert_eq!(overlap_regularizer(&spheres(&[(0.4, Vec3::zeros())]), &pts, 1.0), 0.0);
        let twins = spheres(&[(0.4, Vec3::zeros()), (0.4, Vec3::zeros())]);
        assert!((overlap_regularizer(&twins, &[Vec3::zeros()], 1.0) - 1.0).abs() < 1e-12);
        // tau_r at or above N switches the term off entirely
        assert_eq!(overlap_regularizer(&twins, &pts, 2.0), 0.0);
    }

    #[test]
    fn overlap_matches_monte_carlo_lens() {
        // Two radius-0.3 spheres, centres 0.3 apart. With a sharp indicator
        // the regularizer is ~ the fraction of the box inside both.
        let a = spheres(&[(0.3, Vec3::new(-0.15, 0.0, 0.0)), (0.3, Vec3::new(0.15, 0.0, 0.0))]);
        let pts = cloud(500_000, 11);
        let reg = overlap_regularizer(&a, &pts, 1.0);
        // Independent oracle: lens volume in closed form over the unit box.
        let (r, d) = (0.3f64, 0.3f64);
        let lens = std::f64::consts::PI * (4.0 * r + d) * (2.0 * r - d).powi(2) / 12.0;
        assert!((reg - lens).abs() / lens < 0.02, "{reg} vs {lens}");
    }

    #[test]
    fn total_loss_arithmetic() {
        let c = LossComponents {
            surface: 0.05,
            occupancy: 0.2,
            overlap: 0.3,
        };
        assert!((total_loss(&LossWeights::default(), &c).unwrap() - 0.7).abs() < 1e-12);
        let zero = LossWeights {
            w_occupancy: 0.0,
            w_surface: 0.0,
            w_overlap: 0.0,
            tau_r: 1.0,
        };
        assert_eq!(total_loss(&zero, &c).unwrap(), 0.0);
        let on = LossWeights {
            w_overlap: 10.0,
            ..LossWeights::default()
        };
        assert!((total_loss(&on, &c).unwrap() - (0.2 + 0.5 + 3.0)).abs() < 1e-12);
        let bad = LossComponents {
            occupancy: f64::NAN,
            ..c
        };
        let err = total_loss(&on, &bad).unwrap_err().to_string();
        assert!(err.contains("occupancy"), "{err}");
        assert!(LossWeights { w_surface: -1.0, ..on }.validate().is_err());
        assert!(LossWeights { tau_r: 0.0, ..on }.validate().is_err());
    }

    fn random_assembly(n: usize, seed: u64) -> PrimitiveAssembly {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prims = (0..n)
            .map(|i| {
                let mut mlp = MlpParams::init(&DEFAULT_LAYERS, seed * 31 + i as u64).unwrap();
                let last = mlp.len() - 1;
                mlp.params[last] = rng.random_range(0.25..0.35);
                let t = Vec3::new(
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                );
                NsdPrimitive::new(i, mlp, t).unwrap()
            })
            .collect();
        PrimitiveAssembly::new(prims, IndicatorConfig::new(10.0).unwrap(), 0.9, 0.1).unwrap()
    }

    #[test]
    fn assembly_loss_gradient() {
        let a = random_assembly(2, 5);
        let dirs: Vec<_> = sample_directions(30, DirectionScheme::UniformRandom, 1)
            .unwrap()
            .into_iter()
            .map(omega)
            .collect();
        let target = cloud(50, 2);
        let occ = cloud(40, 3);
        let labels: Vec<u8> = occ.iter().map(|p| (p.norm() < 0.3) as u8).collect();
        let w = LossWeights {
            w_overlap: 10.0,
            tau_r: 0.5,
            ..LossWeights::default()
        };
        let batch = LossBatch {
            directions: &dirs,
            target_surface: &target,
            occupancy_points: &occ,
            occupancy_labels: &labels,
            overlap_points: &occ,
            filter: true,
            frozen_surface: None,
        };
        let kept = assembly_loss(&a, &w, &batch, false).unwrap().surface;
        assert!(!kept.is_empty() && kept.len() < 60);
        let frozen = LossBatch {
            frozen_surface: Some(&kept),
            ..batch
        };
        let eval = |x: &[f64], g: bool| {
            let mut b = a.clone();
            b.set_flat_params(x)?;
            assembly_loss(&b, &w, &frozen, g)
        };
        let g0 = eval(&a.flat_params(), true).unwrap();
        let g1 = assembly_loss(&a, &w, &batch, true).unwrap();
        assert_eq!(g0.total, g1.total);
        assert_eq!(g0.grads, g1.grads);
        let x0 = a.flat_params();
        let per = a.primitives[0].param_count();
        let mut idx: Vec<usize> = (0..2)
            .flat_map(|i| {
                [
                    i * per + 5,
                    i * per + 300,
                    i * per + 4480,
                    i * per + 4481,
                    i * per + 4483,
                ]
            })
            .collect();
        idx.push(per + 4200);
        let chk = grad_check_indices(
            |x| eval(x, false).map(|e| e.total),
            |x| Ok(PrimitiveAssembly::flatten_grad(&eval(x, true)?.grads.unwrap())),
            &x0,
            &idx,
        )
        .unwrap();
        assert!(chk.max_rel_error < 1e-4, "{chk:?}");
    }
}
