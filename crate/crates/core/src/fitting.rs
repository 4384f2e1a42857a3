//! Per-shape optimization of an assembly against sampled targets.

use std::path::Path;
use std::time::Instant;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::PrimitiveAssembly;
use crate::diff_engine::{AdamConfig, AdamState, MlpParams, DEFAULT_LAYERS};
use crate::losses::{assembly_loss, LossBatch, LossComponents, LossWeights};
use crate::metrics::{fscore, FSCORE_THRESHOLD};
use crate::nsd::{IndicatorConfig, NsdPrimitive};
use crate::shape_io::{sample_surface, ShapeSample};
use crate::sphere_geom::{omega, sample_directions, sample_uniform_with, DirectionScheme, UnitDirection};
use crate::{Error, Result, Vec3};

/// Candidate surface levels for [`grid_search_tau_o`].
pub const TAU_O_GRID: [f64; 7] = [0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.999];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub n_primitives: usize,
    pub steps: usize,
    /// Target surface points per step.
    pub surface_batch: usize,
    /// Sphere directions per primitive per step.
    pub directions_per_primitive: usize,
    /// Occupancy samples per step (also used by the overlap term).
    pub occupancy_batch: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub tau_s: f64,
    pub tau_o: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub direction_scheme: DirectionScheme,
    /// Fraction of steps run with the occlusion filter off.
    pub warmup_fraction: f64,
    /// Enables the occlusion filter after warm-up.
    pub surface_filter: bool,
    pub layers: Vec<usize>,
    /// Lloyd iterations refining the farthest-point seeds.
    pub kmeans_iterations: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_primitives: 30,
            steps: 20_000,
            surface_batch: 4096,
            directions_per_primitive: 400,
            occupancy_batch: 2048,
            learning_rate: 1e-4,
            alpha: 100.0,
            tau_s: 0.1,
            tau_o: 0.99,
            weights: LossWeights::default(),
            seed: 0,
            direction_scheme: DirectionScheme::UniformRandom,
            warmup_fraction: 0.05,
            surface_filter: true,
            layers: DEFAULT_LAYERS.to_vec(),
            kmeans_iterations: 10,
        }
    }
}

impl FitConfig {
    /// All violated constraints, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, n) in [
            ("n_primitives", self.n_primitives),
            ("surface_batch", self.surface_batch),
            ("directions_per_primitive", self.directions_per_primitive),
            ("occupancy_batch", self.occupancy_batch),
        ] {
            if n < 1 {
                v.push(format!("{name} must be >= 1"));
            }
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            v.push(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if let Err(e) = IndicatorConfig::new(self.alpha) {
            v.push(e.to_string());
        }
        if !(self.tau_s > 0.0 && self.tau_s < 1.0) {
            v.push(format!("tau_s must lie in (0, 1), got {}", self.tau_s));
        }
        if !(self.tau_o > 0.5 && self.tau_o < 1.0) {
            v.push(format!("tau_o must lie in (0.5, 1), got {}", self.tau_o));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            v.push(format!(
                "warmup_fraction must lie in [0, 1], got {}",
                self.warmup_fraction
            ));
        }
        if let Err(e) = self.weights.validate() {
            v.push(e.to_string());
        }
        if let Err(e) = MlpParams::zeros(&self.layers) {
            v.push(e.to_string());
        } else if self.layers.first() != Some(&3) || self.layers.last() != Some(&1) {
            v.push("layers must start with 3 inputs and end with 1 output".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(v.join("; ")))
        }
    }

    pub fn indicator(&self) -> IndicatorConfig {
        IndicatorConfig { alpha: self.alpha }
    }

    fn warmup_steps(&self) -> usize {
        (self.steps as f64 * self.warmup_fraction).round() as usize
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub surface: f64,
    pub occupancy: f64,
    pub overlap: f64,
    pub total: f64,
    /// Seconds since the optimization loop started.
    pub wall_time: f64,
    /// Predicted surface points kept by extraction.
    pub kept_points: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub init_s: f64,
    pub optimize_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub trace: Vec<TraceRow>,
    pub final_losses: LossComponents,
    pub final_total: f64,
    pub times: PhaseTimes,
    pub checkpoint_path: Option<String>,
}

impl FitReport {
    /// Mean total loss over the first and last `window` trace rows.
    pub fn smoothed_ends(&self, window: usize) -> Option<(f64, f64)> {
        let n = self.trace.len();
        if n == 0 {
            return None;
        }
        let w = window.clamp(1, n);
        let mean = |rows: &[TraceRow]| rows.iter().map(|r| r.total).sum::<f64>() / rows.len() as f64;
        Some((mean(&self.trace[..w]), mean(&self.trace[n - w..])))
    }
}

/// Writes the trace as `step,L_S,L_O,L_decomp,total,wall_time`.
pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "L_S", "L_O", "L_decomp", "total", "wall_time", "kept_points"])?;
    for r in trace {
        w.write_record([
            r.step.to_string(),
            r.surface.to_string(),
            r.occupancy.to_string(),
            r.overlap.to_string(),
            r.total.to_string(),
            r.wall_time.to_string(),
            r.kept_points.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Farthest-point seeds refined by a few Lloyd iterations.
fn seed_centres(points: &[Vec3], k: usize, iterations: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let mut centres = vec![points[rng.random_range(0..points.len())]];
    let mut dist: Vec<f64> = points.iter().map(|p| (p - centres[0]).norm_squared()).collect();
    while centres.len() < k {
        let far = (0..points.len())
            .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
            .unwrap();
        centres.push(points[far]);
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min((p - points[far]).norm_squared());
        }
    }
    for _ in 0..iterations {
        let mut sum = vec![Vec3::zeros(); k];
        let mut count = vec![0usize; k];
        for p in points {
            let c = (0..k)
                .min_by(|&a, &b| {
                    (p - centres[a])
                        .norm_squared()
                        .total_cmp(&(p - centres[b]).norm_squared())
                })
                .unwrap();
            sum[c] += p;
            count[c] += 1;
        }
        for c in 0..k {
            if count[c] > 0 {
                centres[c] = sum[c] / count[c] as f64;
            }
        }
    }
    centres
}

/// Fresh assembly: networks per the default initialization, translations at
/// cluster centres of the target surface.
pub fn init_assembly(cfg: &FitConfig, target: &ShapeSample) -> Result<PrimitiveAssembly> {
    cfg.validate()?;
    let pts = &target.surface_points;
    if cfg.n_primitives > pts.len() {
        return Err(Error::InvalidArgument(format!(
            "n_primitives ({}) exceeds the number of target surface points ({})",
            cfg.n_primitives,
            pts.len()
        )));
    }
    let centres = if cfg.n_primitives == 1 {
        vec![pts.iter().sum::<Vec3>() / pts.len() as f64]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c0de);
        seed_centres(pts, cfg.n_primitives, cfg.kmeans_iterations, &mut rng)
    };
    let primitives = centres
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let mlp = MlpParams::init(&cfg.layers, cfg.seed.wrapping_mul(1000).wrapping_add(i as u64))?;
            NsdPrimitive::new(i, mlp, t)
        })
        .collect::<Result<Vec<_>>>()?;
    PrimitiveAssembly::new(primitives, cfg.indicator(), cfg.tau_o, cfg.tau_s)
}

fn numerical(step: usize, err: Error) -> Error {
    match err {
        Error::NonFinite(detail) => {
            let component = detail.split_whitespace().next().unwrap_or("loss").to_string();
            Error::Numerical {
                step,
                component,
                detail,
            }
        }
        other => other,
    }
}

/// Fits from [`init_assembly`].
pub fn fit(cfg: &FitConfig, target: &ShapeSample) -> Result<(PrimitiveAssembly, FitReport)> {
    let t0 = Instant::now();
    let init = init_assembly(cfg, target)?;
    let init_s = t0.elapsed().as_secs_f64();
    let (a, mut report) = fit_from(cfg, target, init)?;
    report.times.init_s = init_s;
    Ok((a, report))
}

/// Runs `cfg.steps` Adam iterations starting from `a`.
pub fn fit_from(
    cfg: &FitConfig,
    target: &ShapeSample,
    mut a: PrimitiveAssembly,
) -> Result<(PrimitiveAssembly, FitReport)> {
    cfg.validate()?;
    target.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam_cfg = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut params = a.flat_params();
    let mut adam = AdamState::new(adam_cfg, params.len());
    let fixed_dirs: Option<Vec<UnitDirection>> = match cfg.direction_scheme {
        DirectionScheme::Fibonacci => Some(
            sample_directions(cfg.directions_per_primitive, DirectionScheme::Fibonacci, cfg.seed)?
                .into_iter()
                .map(omega)
                .collect(),
        ),
        DirectionScheme::UniformRandom => None,
    };
    let surf = &target.surface_points;
    let occ = &target.occupancy_points;
    let warmup = cfg.warmup_steps();
    let mut report = FitReport::default();
    let start = Instant::now();

    for step in 0..cfg.steps {
        let dirs: Vec<UnitDirection> = match &fixed_dirs {
            Some(d) => d.clone(),
            None => sample_uniform_with(&mut rng, cfg.directions_per_primitive)
                .into_iter()
                .map(omega)
                .collect(),
        };
        let target_batch: Vec<Vec3> = if surf.len() <= cfg.surface_batch {
            surf.clone()
        } else {
            (0..cfg.surface_batch)
                .map(|_| surf[rng.random_range(0..surf.len())])
                .collect()
        };
        let (occ_pts, occ_labels): (Vec<Vec3>, Vec<u8>) = if occ.len() <= cfg.occupancy_batch {
            occ.iter().copied().unzip()
        } else {
            (0..cfg.occupancy_batch)
                .map(|_| occ[rng.random_range(0..occ.len())])
                .unzip()
        };
        let batch = LossBatch {
            directions: &dirs,
            target_surface: &target_batch,
            occupancy_points: &occ_pts,
            occupancy_labels: &occ_labels,
            overlap_points: &occ_pts,
            filter: cfg.surface_filter && step >= warmup,
            frozen_surface: None,
        };
        let eval = assembly_loss(&a, &cfg.weights, &batch, true).map_err(|e| numerical(step, e))?;
        let grad = PrimitiveAssembly::flatten_grad(eval.grads.as_ref().unwrap());
        if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical {
                step,
                component: "gradient".into(),
                detail: format!("non-finite gradient entry {k}"),
            });
        }
        adam.step(&mut params, &grad)?;
        a.set_flat_params(&params)?;

        let row = TraceRow {
            step,
            surface: eval.components.surface,
            occupancy: eval.components.occupancy,
            overlap: eval.components.overlap,
            total: eval.total,
            wall_time: start.elapsed().as_secs_f64(),
            kept_points: eval.surface.len(),
        };
        if step % 500 == 0 {
            debug!(
                "step {step}: total {:.5} (L_S {:.5}, L_O {:.5})",
                row.total, row.surface, row.occupancy
            );
        }
        report.trace.push(row);
    }
    report.times.optimize_s = start.elapsed().as_secs_f64();
    if let Some(last) = report.trace.last() {
        report.final_losses = LossComponents {
            surface: last.surface,
            occupancy: last.occupancy,
            overlap: last.overlap,
        };
        report.final_total = last.total;
        info!("fit finished after {} steps: total loss {:.5}", cfg.steps, last.total);
    }
    Ok((a, report))
}

/// Outcome of the surface-level search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSearch {
    pub best: f64,
    /// `(tau_o, fscore)` for every grid value.
    pub scores: Vec<(f64, f64)>,
}

/// Options for [`grid_search_tau_o`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauSearchOptions {
    pub resolution: usize,
    pub samples: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TauSearchOptions {
    fn default() -> Self {
        Self {
            resolution: 64,
            samples: 20_000,
            threshold: FSCORE_THRESHOLD,
            seed: 0,
        }
    }
}

/// Picks the grid level whose marching-cubes mesh scores the best F-score
/// against `validation` surface points. Ties go to the earlier grid value.
pub fn grid_search_tau_o(
    a: &PrimitiveAssembly,
    validation: &[Vec3],
    grid: &[f64],
    opts: &TauSearchOptions,
) -> Result<TauSearch> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("tau_o grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|t| !(**t > 0.5 && **t < 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "tau_o candidates must lie in (0.5, 1), got {bad}"
        )));
    }
    let points = PrimitiveAssembly::domain_grid(opts.resolution).points();
    let values = a.composite_indicators(&points);
    let spec = PrimitiveAssembly::domain_grid(opts.resolution);
    let mut scores = Vec::with_capacity(grid.len());
    for &tau in grid {
        let mesh = crate::assembly::polygonize(&spec, &values, tau);
        let score = if mesh.faces.is_empty() || !(mesh.area() > 0.0) {
            0.0
        } else {
            let pts = sample_surface(&mesh, opts.samples, opts.seed)?;
            fscore(&pts, validation, opts.threshold)?
        };
        scores.push((tau, score));
    }
    let best = scores
        .iter()
        .fold(None::<(f64, f64)>, |acc, &(t, s)| match acc {
            Some((_, bs)) if bs >= s => acc,
            _ => Some((t, s)),
        })
        .unwrap()
        .0;
    Ok(TauSearch { best, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shape_io::{build_shape_sample, OccupancySampling};
    use crate::shapes::{two_disjoint_spheres, unit_sphere};

    fn small_cfg(n: usize, steps: usize) -> FitConfig {
        FitConfig {
            n_primitives: n,
            steps,
            surface_batch: 512,
            directions_per_primitive: 100,
            occupancy_batch: 256,
            learning_rate: 2e-3,
            tau_o: 0.6,
            ..FitConfig::default()
        }
    }

    #[test]
    fn config_validation_lists_violations() {
        let cfg = FitConfig {
            n_primitives: 0,
            tau_o: 0.4,
            ..FitConfig::default()
        };
        let v = cfg.violations();
        assert_eq!(v.len(), 2);
        assert!(v[0].contains("n_primitives"));
        assert!(FitConfig::default().validate().is_ok());
        let json = serde_json::to_string(&FitConfig::default()).unwrap();
        let back: FitConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, FitConfig::default());
        assert!(serde_json::from_str::<FitConfig>(r#"{"bogus": 1}"#).is_err());
        let partial: FitConfig = serde_json::from_str(r#"{"steps": 7}"#).unwrap();
        assert_eq!(partial.steps, 7);
        assert_eq!(partial.n_primitives, 30);
    }

    #[test]
    fn init_examples() {
        let s = build_shape_sample(&unit_sphere(3), 2000, 100, OccupancySampling::Uniform, 1).unwrap();
        let a = init_assembly(&small_cfg(1, 0), &s).unwrap();
        let c = s.surface_points.iter().sum::<Vec3>() / s.surface_points.len() as f64;
        assert!((a.primitives[0].translation - c).norm() < 1e-12);

        let two = two_disjoint_spheres(3);
        let s2 = build_shape_sample(&two.mesh, 2000, 100, OccupancySampling::Uniform, 1).unwrap();
        let a2 = init_assembly(&small_cfg(2, 0), &s2).unwrap();
        let mut xs: Vec<f64> = a2.primitives.iter().map(|p| p.translation.x).collect();
        xs.sort_by(f64::total_cmp);
        assert!(xs[0] < -0.15 && xs[1] > 0.15, "{xs:?}");
        assert_eq!(a2, init_assembly(&small_cfg(2, 0), &s2).unwrap());
        assert!(init_assembly(&small_cfg(2001, 0), &s2).is_err());
    }

    #[test]
    fn zero_steps_returns_init() {
        let s = build_shape_sample(&unit_sphere(2), 500, 100, OccupancySampling::Uniform, 2).unwrap();
        let cfg = small_cfg(1, 0);
        let (a, r) = fit(&cfg, &s).unwrap();
        assert_eq!(a, init_assembly(&cfg, &s).unwrap());
        assert!(r.trace.is_empty());
    }

    #[test]
    fn short_fit_decreases_loss_and_is_deterministic() {
        let s = build_shape_sample(&unit_sphere(3), 2000, 2000, OccupancySampling::Uniform, 3).unwrap();
        let cfg = small_cfg(1, 150);
        let (a, r) = fit(&cfg, &s).unwrap();
        let (first, last) = r.smoothed_ends(20).unwrap();
        assert!(last < first, "{first} -> {last}");
        assert!(r.trace.windows(2).all(|w| w[1].step == w[0].step + 1));
        let (b, r2) = fit(&cfg, &s).unwrap();
        assert_eq!(a, b);
        assert!((r.final_total - r2.final_total).abs() <= 1e-10);
    }

    #[test]
    fn tau_search_properties() {
        let a = PrimitiveAssembly::new(
            vec![NsdPrimitive::sphere(0, 0.4, Vec3::zeros())],
            IndicatorConfig::default(),
            0.6,
            0.1,
        )
        .unwrap();
        let gt = sample_surface(&crate::shapes::sphere_mesh(0.4, Vec3::zeros(), 4), 5000, 1).unwrap();
        let opts = TauSearchOptions {
            resolution: 32,
            samples: 5000,
            threshold: 0.02,
            seed: 0,
        };
        let one = grid_search_tau_o(&a, &gt, &[0.7], &opts).unwrap();
        assert_eq!(one.best, 0.7);
        let all = grid_search_tau_o(&a, &gt, &TAU_O_GRID, &opts).unwrap();
        let best_score = all.scores.iter().find(|(t, _)| *t == all.best).unwrap().1;
        assert!(all.scores.iter().all(|(_, s)| *s <= best_score));
        // single primitive composite never exceeds sigmoid(1) ~ 0.731
        assert!(all.best < 0.731);
        assert!(grid_search_tau_o(&a, &gt, &[], &opts).is_err());
        assert_eq!(all, grid_search_tau_o(&a, &gt, &TAU_O_GRID, &opts).unwrap());
    }
}
