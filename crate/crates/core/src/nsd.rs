//! A single star-domain primitive.
//!
//! The radius along direction `d` is `r+(d) = ReLU(f(omega(d)))` for an MLP
//! `f`. Implicitly the primitive is the soft indicator
//! `sigmoid(alpha * (1 - |x - t| / r+(G(x - t))))`; explicitly its surface is
//! `r+(d) * omega(d) + t`. Both forms share parameters, so every explicit
//! surface point sits exactly on the 0.5 level set of the indicator.

use serde::{Deserialize, Serialize};

use crate::diff_engine::{sigmoid, MlpParams, DEFAULT_LAYERS};
use crate::sphere_geom::{omega, to_cartesian, to_sphere_flagged, SphereCoord, UnitDirection};
use crate::{Error, Result, Vec3};

/// Radii at or below this are treated as a collapsed primitive.
pub const RADIUS_FLOOR: f64 = 1e-8;
/// Logit used for points of a collapsed primitive (indicator ~ 1e-26).
pub const COLLAPSED_LOGIT: f64 = -60.0;
/// Below this indicator-gradient norm a normal is undefined.
pub const FLAT_GRADIENT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorConfig {
    /// Sharpness of the indicator's transition band.
    pub alpha: f64,
}

impl Default for IndicatorConfig {
    fn default() -> Self {
        Self { alpha: 100.0 }
    }
}

impl IndicatorConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be > 0, got {alpha}")));
        }
        Ok(Self { alpha })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsdPrimitive {
    pub index: usize,
    pub mlp: MlpParams,
    pub translation: Vec3,
}

/// Gradient of a scalar with respect to one primitive's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveGrad {
    pub mlp: Vec<f64>,
    pub translation: Vec3,
}

impl PrimitiveGrad {
    pub fn zeros(p: &NsdPrimitive) -> Self {
        Self {
            mlp: vec![0.0; p.mlp.len()],
            translation: Vec3::zeros(),
        }
    }

    pub fn add_assign(&mut self, other: &PrimitiveGrad) {
        for (a, b) in self.mlp.iter_mut().zip(&other.mlp) {
            *a += b;
        }
        self.translation += other.translation;
    }
}

/// Forward quantities of the indicator at one query point.
#[derive(Debug, Clone, Copy)]
struct IndicatorTerms {
    rho: f64,
    u: Vec3,
    f: f64,
    radius: f64,
    value: f64,
    collapsed: bool,
}

impl NsdPrimitive {
    pub fn new(index: usize, mlp: MlpParams, translation: Vec3) -> Result<Self> {
        mlp.validate()?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("primitive translation".into()));
        }
        Ok(Self {
            index,
            mlp,
            translation,
        })
    }

    /// A primitive whose network outputs `radius` everywhere: a sphere.
    pub fn sphere(index: usize, radius: f64, center: Vec3) -> Self {
        let mut mlp = MlpParams::zeros(&DEFAULT_LAYERS).expect("default layers are valid");
        let last = mlp.params.len() - 1;
        mlp.params[last] = radius;
        Self {
            index,
            mlp,
            translation: center,
        }
    }

    pub fn param_count(&self) -> usize {
        self.mlp.len() + 3
    }

    /// `r+(d)`.
    pub fn radius(&self, d: SphereCoord) -> f64 {
        self.radius_unit(&omega(d).to_vec3())
    }

    fn radius_unit(&self, u: &Vec3) -> f64 {
        self.mlp.forward_batch(std::slice::from_ref(u))[0].max(0.0)
    }

    /// Radii for a batch of unit directions.
    pub fn radii(&self, dirs: &[UnitDirection]) -> Vec<f64> {
        let us: Vec<Vec3> = dirs.iter().map(|d| d.to_vec3()).collect();
        self.mlp.forward_batch(&us).into_iter().map(|f| f.max(0.0)).collect()
    }

    /// `r+(d) * omega(d) + t`.
    pub fn surface_point(&self, d: SphereCoord) -> Vec3 {
        to_cartesian(self.radius(d), d) + self.translation
    }

    pub fn surface_points(&self, dirs: &[UnitDirection]) -> Vec<Vec3> {
        self.radii(dirs)
            .iter()
            .zip(dirs)
            .map(|(r, d)| d.to_vec3() * *r + self.translation)
            .collect()
    }

    /// Pulls `dL/dP` for each surface point back to the parameters.
    pub fn surface_points_backward(&self, dirs: &[UnitDirection], upstream: &[Vec3], grad: &mut PrimitiveGrad) {
        assert_eq!(dirs.len(), upstream.len());
        let us: Vec<Vec3> = dirs.iter().map(|d| d.to_vec3()).collect();
        let f = self.mlp.forward_batch(&us);
        let df: Vec<f64> = us
            .iter()
            .zip(upstream)
            .zip(&f)
            .map(|((u, g), f)| if *f > 0.0 { g.dot(u) } else { 0.0 })
            .collect();
        for g in upstream {
            grad.translation += g;
        }
        if df.iter().any(|v| *v != 0.0) {
            self.mlp.backward_batch(&us, &df, &mut grad.mlp, None);
        }
    }

    fn terms(&self, cfg: &IndicatorConfig, xs: &[Vec3]) -> Vec<IndicatorTerms> {
        let geo: Vec<(f64, Vec3)> = xs
            .iter()
            .map(|x| {
                let xbar = x - self.translation;
                let (d, _) = to_sphere_flagged(&xbar);
                (xbar.norm(), omega(d).to_vec3())
            })
            .collect();
        let us: Vec<Vec3> = geo.iter().map(|g| g.1).collect();
        let fs = self.mlp.forward_batch(&us);
        geo.iter()
            .zip(fs)
            .map(|(&(rho, u), f)| {
                let radius = f.max(0.0);
                let collapsed = radius <= RADIUS_FLOOR;
                let z = if collapsed {
                    COLLAPSED_LOGIT
                } else {
                    cfg.alpha * (1.0 - rho / radius)
                };
                IndicatorTerms {
                    rho,
                    u,
                    f,
                    radius,
                    value: sigmoid(z),
                    collapsed,
                }
            })
            .collect()
    }

    /// Indicator value in (0, 1) at `x`.
    pub fn indicator(&self, cfg: &IndicatorConfig, x: &Vec3) -> f64 {
        self.indicators(cfg, std::slice::from_ref(x))[0]
    }

    pub fn indicators(&self, cfg: &IndicatorConfig, xs: &[Vec3]) -> Vec<f64> {
        if xs.is_empty() {
            return Vec::new();
        }
        self.terms(cfg, xs).iter().map(|t| t.value).collect()
    }

    /// `|x - t| - r+(G(x - t))`; negative inside.
    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        let xbar = x - self.translation;
        let (d, _) = to_sphere_flagged(&xbar);
        xbar.norm() - self.radius_unit(&omega(d).to_vec3())
    }

    /// Pulls `dL/dO_i(x_k)` back to the parameters and optionally the query
    /// points. Returns the indicator values.
    pub fn indicators_backward(
        &self,
        cfg: &IndicatorConfig,
        xs: &[Vec3],
        upstream: &[f64],
        grad: &mut PrimitiveGrad,
        mut x_grad: Option<&mut [Vec3]>,
    ) -> Vec<f64> {
        assert_eq!(xs.len(), upstream.len());
        if xs.is_empty() {
            return Vec::new();
        }
        let terms = self.terms(cfg, xs);
        let alpha = cfg.alpha;
        // dL/dz for every point, then split into the radial and radius paths.
        let mut df = vec![0.0; xs.len()];
        let mut dz = vec![0.0; xs.len()];
        for (k, t) in terms.iter().enumerate() {
            if t.collapsed {
                continue;
            }
            dz[k] = upstream[k] * t.value * (1.0 - t.value);
            if t.f > 0.0 {
                df[k] = dz[k] * alpha * t.rho / (t.radius * t.radius);
            }
        }
        let us: Vec<Vec3> = terms.iter().map(|t| t.u).collect();
        let mut du = vec![Vec3::zeros(); xs.len()];
        if df.iter().any(|v| *v != 0.0) {
            self.mlp.backward_batch(&us, &df, &mut grad.mlp, Some(&mut du));
        }
        for (k, t) in terms.iter().enumerate() {
            if t.collapsed {
                if let Some(xg) = x_grad.as_deref_mut() {
                    xg[k] = Vec3::zeros();
                }
                continue;
            }
            let mut dxbar = t.u * (dz[k] * -alpha / t.radius);
            if t.rho > 0.0 {
                let g = du[k];
                dxbar += (g - t.u * t.u.dot(&g)) / t.rho;
            }
            grad.translation -= dxbar;
            if let Some(xg) = x_grad.as_deref_mut() {
                xg[k] = dxbar;
            }
        }
        terms.iter().map(|t| t.value).collect()
    }

    /// Gradient of the indicator with respect to the query point.
    pub fn indicator_spatial_gradient(&self, cfg: &IndicatorConfig, x: &Vec3) -> Vec3 {
        let mut scratch = PrimitiveGrad::zeros(self);
        let mut g = [Vec3::zeros()];
        self.indicators_backward(cfg, std::slice::from_ref(x), &[1.0], &mut scratch, Some(&mut g));
        g[0]
    }

    /// Outward unit normal `-grad O_i / |grad O_i|`.
    pub fn normal(&self, cfg: &IndicatorConfig, x: &Vec3) -> Result<Vec3> {
        let g = self.indicator_spatial_gradient(cfg, x);
        let n = g.norm();
        if !(n >= FLAT_GRADIENT) {
            return Err(Error::FlatGradient(n));
        }
        Ok(-g / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff_engine::{grad_check, Tape, Var};
    use crate::sphere_geom::{sample_directions, DirectionScheme};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_primitive(seed: u64) -> NsdPrimitive {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mlp = MlpParams::init(&DEFAULT_LAYERS, seed).unwrap();
        let last = mlp.len() - 1;
        mlp.params[last] = rng.random_range(0.4..0.8);
        let t = Vec3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
        );
        NsdPrimitive::new(0, mlp, t).unwrap()
    }

    #[test]
    fn radius_clamps() {
        let d = SphereCoord { theta: 0.4, phi: 2.0 };
        assert_eq!(NsdPrimitive::sphere(0, -1.0, Vec3::zeros()).radius(d), 0.0);
        assert_eq!(NsdPrimitive::sphere(0, 0.8, Vec3::zeros()).radius(d), 0.8);
    }

    #[test]
    fn indicator_values() {
        let cfg = IndicatorConfig::default();
        let s = NsdPrimitive::sphere(0, 1.0, Vec3::new(0.2, 0.0, 0.0));
        assert!((s.indicator(&cfg, &Vec3::new(1.2, 0.0, 0.0)) - 0.5).abs() < 1e-15);
        assert!((s.indicator(&cfg, &Vec3::new(0.2, 0.0, 0.0)) - sigmoid(100.0)).abs() < 1e-15);
        let far = s.indicator(&cfg, &Vec3::new(0.2, 1.1, 0.0));
        assert!((far - sigmoid(-10.0)).abs() < 1e-15);
        assert!((far - 4.54e-5).abs() < 1e-7);
        assert!((s.signed_distance(&Vec3::new(0.2, 0.0, 1.5)) - 0.5).abs() < 1e-15);
        // collapsed primitive
        let c = NsdPrimitive::sphere(0, 0.0, Vec3::zeros());
        assert!(c.indicator(&cfg, &Vec3::new(0.1, 0.0, 0.0)) < 1e-20);
        assert!(c.indicator(&cfg, &Vec3::zeros()) < 1e-20);
    }

    #[test]
    fn surface_points_translate() {
        let d = SphereCoord {
            theta: std::f64::consts::FRAC_PI_2,
            phi: 0.0,
        };
        let s = NsdPrimitive::sphere(0, 1.0, Vec3::zeros());
        assert!((s.surface_point(d) - Vec3::x()).norm() < 1e-15);
        let s = NsdPrimitive::sphere(0, 1.0, Vec3::new(5.0, 0.0, 0.0));
        assert!((s.surface_point(d) - Vec3::new(6.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn implicit_explicit_consistency() {
        let cfg = IndicatorConfig::default();
        for seed in 0..20 {
            let p = random_primitive(seed);
            for d in sample_directions(50, DirectionScheme::UniformRandom, seed).unwrap() {
                if p.radius(d) <= RADIUS_FLOOR {
                    continue;
                }
                let v = p.indicator(&cfg, &p.surface_point(d));
                assert!((v - 0.5).abs() < 1e-6, "seed {seed}: {v}");
            }
        }
    }

    #[test]
    fn star_domain_and_ray_monotonicity() {
        let cfg = IndicatorConfig::default();
        let p = random_primitive(3);
        for d in sample_directions(100, DirectionScheme::UniformRandom, 1).unwrap() {
            let surf = p.surface_point(d);
            let mut last = f64::INFINITY;
            for k in 1..=9 {
                let s = k as f64 / 10.0;
                let v = p.indicator(&cfg, &(p.translation + (surf - p.translation) * s));
                assert!(v >= 0.5);
                assert!(v <= last + 1e-15);
                last = v;
            }
            let beyond = p.indicator(&cfg, &(p.translation + (surf - p.translation) * 1.3));
            assert!(beyond <= last);
        }
    }

    #[test]
    fn translation_equivariance() {
        let cfg = IndicatorConfig::default();
        let p = random_primitive(8);
        let v = Vec3::new(0.7, -1.1, 0.25);
        let mut q = p.clone();
        q.translation += v;
        for d in sample_directions(40, DirectionScheme::Fibonacci, 0).unwrap() {
            assert!((q.surface_point(d) - p.surface_point(d) - v).norm() < 1e-12);
            let x = p.surface_point(d) * 0.9 + Vec3::new(0.01, 0.02, -0.03);
            assert!((q.indicator(&cfg, &(x + v)) - p.indicator(&cfg, &x)).abs() < 1e-9);
        }
    }

    #[test]
    fn sphere_normals() {
        let cfg = IndicatorConfig::default();
        let s = NsdPrimitive::sphere(0, 1.0, Vec3::zeros());
        assert!((s.normal(&cfg, &Vec3::x()).unwrap() - Vec3::x()).norm() < 1e-6);
        assert!((s.normal(&cfg, &Vec3::z()).unwrap() - Vec3::z()).norm() < 1e-6);
        // deep inside the sigmoid saturates completely
        assert!(matches!(
            s.normal(&cfg, &Vec3::new(0.0, 0.0, 1e-3)),
            Err(Error::FlatGradient(_))
        ));
    }

    #[test]
    fn normal_matches_finite_difference() {
        let cfg = IndicatorConfig::default();
        let p = random_primitive(12);
        for d in sample_directions(30, DirectionScheme::UniformRandom, 4).unwrap() {
            let x = p.surface_point(d);
            let n = p.normal(&cfg, &x).unwrap();
            let h = 1e-7;
            let mut g = Vec3::zeros();
            for k in 0..3 {
                let mut a = x;
                let mut b = x;
                a[k] += h;
                b[k] -= h;
                g[k] = (p.indicator(&cfg, &a) - p.indicator(&cfg, &b)) / (2.0 * h);
            }
            let fd = -g / g.norm();
            let angle = n.dot(&fd).clamp(-1.0, 1.0).acos();
            assert!(angle < 1e-4, "angle {angle}");
        }
    }

    /// The indicator recorded op by op on the scalar tape.
    fn tape_indicator<'t>(
        p: &NsdPrimitive,
        alpha: f64,
        params: &[Var<'t>],
        t: [Var<'t>; 3],
        x: [Var<'t>; 3],
    ) -> Var<'t> {
        let xb = [x[0] - t[0], x[1] - t[1], x[2] - t[2]];
        let rho = (xb[0].square() + xb[1].square() + xb[2].square()).sqrt();
        let u = [xb[0] / rho, xb[1] / rho, xb[2] / rho];
        let r = p.mlp.forward_on_tape(params, u).relu();
        ((1.0 - rho / r) * alpha).sigmoid()
    }

    #[test]
    fn indicator_backward_matches_tape() {
        let cfg = IndicatorConfig::new(20.0).unwrap();
        let p = random_primitive(21);
        let xs: Vec<Vec3> = sample_directions(6, DirectionScheme::UniformRandom, 2)
            .unwrap()
            .iter()
            .enumerate()
            .map(|(k, d)| p.surface_point(*d) * (0.9 + 0.04 * k as f64))
            .collect();
        let up: Vec<f64> = (0..xs.len()).map(|k| 1.0 - 0.3 * k as f64).collect();
        let mut grad = PrimitiveGrad::zeros(&p);
        let mut xg = vec![Vec3::zeros(); xs.len()];
        p.indicators_backward(&cfg, &xs, &up, &mut grad, Some(&mut xg));

        let mut want = PrimitiveGrad::zeros(&p);
        for (k, x) in xs.iter().enumerate() {
            let tape = Tape::new();
            let ps: Vec<_> = p.mlp.params.iter().map(|&v| tape.var(v)).collect();
            let t = [0, 1, 2].map(|i| tape.var(p.translation[i]));
            let xv = [0, 1, 2].map(|i| tape.var(x[i]));
            let o = tape_indicator(&p, cfg.alpha, &ps, t, xv);
            assert!((o.value() - p.indicator(&cfg, x)).abs() < 1e-12);
            let g = o.backward();
            for (w, v) in want.mlp.iter_mut().zip(&ps) {
                *w += up[k] * g.wrt(v);
            }
            for i in 0..3 {
                want.translation[i] += up[k] * g.wrt(&t[i]);
                assert!((xg[k][i] - up[k] * g.wrt(&xv[i])).abs() < 1e-9);
            }
        }
        for (a, b) in grad.mlp.iter().zip(&want.mlp) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
        assert!((grad.translation - want.translation).norm() < 1e-9);
    }

    fn flat(p: &NsdPrimitive) -> Vec<f64> {
        let mut v = p.mlp.params.clone();
        v.extend(p.translation.iter());
        v
    }

    fn unflat(p: &NsdPrimitive, v: &[f64]) -> NsdPrimitive {
        let n = p.mlp.len();
        let mut q = p.clone();
        q.mlp.params.copy_from_slice(&v[..n]);
        q.translation = Vec3::new(v[n], v[n + 1], v[n + 2]);
        q
    }

    #[test]
    fn surface_and_indicator_grad_check() {
        let cfg = IndicatorConfig::default();
        for seed in 0..5 {
            let p = random_primitive(100 + seed);
            let dirs: Vec<UnitDirection> = sample_directions(5, DirectionScheme::UniformRandom, seed)
                .unwrap()
                .into_iter()
                .map(omega)
                .collect();
            let weights = [
                Vec3::new(0.3, -0.2, 0.9),
                Vec3::new(-1.0, 0.5, 0.1),
                Vec3::new(0.2, 0.2, 0.2),
                Vec3::new(0.0, 1.0, -0.4),
                Vec3::new(0.7, 0.1, -0.6),
            ];
            let r = grad_check(
                |v| {
                    Ok(unflat(&p, v)
                        .surface_points(&dirs)
                        .iter()
                        .zip(&weights)
                        .map(|(a, w)| a.dot(w))
                        .sum())
                },
                |v| {
                    let q = unflat(&p, v);
                    let mut g = PrimitiveGrad::zeros(&q);
                    q.surface_points_backward(&dirs, &weights, &mut g);
                    let mut out = g.mlp;
                    out.extend(g.translation.iter());
                    Ok(out)
                },
                &flat(&p),
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "surface seed {seed}: {}", r.max_rel_error);

            // query points in the transition band so the sigmoid is informative
            let xs: Vec<Vec3> = dirs
                .iter()
                .enumerate()
                .map(|(k, d)| p.translation + d.to_vec3() * p.radii(&[*d])[0] * (0.97 + 0.015 * k as f64))
                .collect();
            let r = grad_check(
                |v| Ok(unflat(&p, v).indicators(&cfg, &xs).iter().sum()),
                |v| {
                    let q = unflat(&p, v);
                    let mut g = PrimitiveGrad::zeros(&q);
                    q.indicators_backward(&cfg, &xs, &vec![1.0; xs.len()], &mut g, None);
                    let mut out = g.mlp;
                    out.extend(g.translation.iter());
                    Ok(out)
                },
                &flat(&p),
            )
            .unwrap();
            assert!(
                r.max_rel_error < 1e-4,
                "indicator seed {seed}: {} at {}",
                r.max_rel_error,
                r.worst_index
            );
        }
    }
}
