//! Evaluation metrics for fitted assemblies.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::PrimitiveAssembly;
use crate::losses::surface_loss;
use crate::mesh::TriangleMesh;
use crate::shape_io::{sample_domain, sample_surface};
use crate::spatial::nearest_all;
use crate::sphere_geom::icosphere;
use crate::{Error, Result, Vec3};

/// Default F-score distance threshold (1% of the normalized box side).
pub const FSCORE_THRESHOLD: f64 = 0.01;
/// Reporting multiplier applied to raw CD1.
pub const CD1_SCALE: f64 = 10.0;
/// Reporting multiplier applied to the overlap fraction.
pub const OVERLAP_SCALE: f64 = 1000.0;

fn require_points(name: &str, pts: &[Vec3]) -> Result<()> {
    if pts.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} point set is empty")));
    }
    Ok(())
}

/// F-score in percent: harmonic mean of precision and recall at `threshold`.
pub fn fscore(pred: &[Vec3], gt: &[Vec3], threshold: f64) -> Result<f64> {
    require_points("predicted", pred)?;
    require_points("ground-truth", gt)?;
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be > 0, got {threshold}"
        )));
    }
    let within = |from: &[Vec3], to: &[Vec3]| {
        nearest_all(to, from).iter().filter(|(_, d)| *d <= threshold).count() as f64 / from.len() as f64
    };
    let precision = within(pred, gt);
    let recall = within(gt, pred);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * 2.0 * precision * recall / (precision + recall))
}

/// Raw symmetric Chamfer-L1 (same kernel as the surface loss).
pub fn chamfer_l1(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    require_points("predicted", pred)?;
    surface_loss(pred, gt)
}

/// Monte Carlo IoU of two occupancy labelings of the same points.
pub fn volumetric_iou(pred_inside: &[bool], gt_labels: &[u8]) -> Result<f64> {
    if pred_inside.len() != gt_labels.len() {
        return Err(Error::ShapeMismatch {
            expected: pred_inside.len(),
            got: gt_labels.len(),
        });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred_inside.iter().zip(gt_labels) {
        let g = g == 1;
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    if union == 0 {
        warn!("both shapes are empty on the samples; IoU defined as 0");
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// IoU of the assembly's `composite >= tau_o` region against labels.
pub fn assembly_iou(a: &PrimitiveAssembly, points: &[Vec3], labels: &[u8]) -> Result<f64> {
    let inside: Vec<bool> = a.composite_indicators(points).iter().map(|o| *o >= a.tau_o).collect();
    volumetric_iou(&inside, labels)
}

/// Fraction of points inside more than one primitive, times 1000.
pub fn overlap_count(a: &PrimitiveAssembly, points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut hits = vec![0u32; points.len()];
    for row in a.indicator_matrix(points) {
        for (h, v) in hits.iter_mut().zip(row) {
            *h += u32::from(v >= a.tau_s);
        }
    }
    OVERLAP_SCALE * hits.iter().filter(|h| **h > 1).count() as f64 / points.len() as f64
}

/// Discrete Gaussian curvature over a triangle mesh.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurvatureStats {
    /// Area-normalized angle defect per evaluated vertex.
    pub values: Vec<f64>,
    /// Mesh vertex of each entry in `values`.
    pub vertex_index: Vec<usize>,
    /// Sum of unnormalized angle defects over evaluated vertices.
    pub defect_sum: f64,
    pub mean: f64,
    pub std: f64,
    /// Boundary or non-manifold vertices left out.
    pub skipped: usize,
}

fn angle(at: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let (u, v) = (a - at, b - at);
    u.cross(&v).norm().atan2(u.dot(&v))
}

/// Mixed (Voronoi / barycentric fallback) area of triangle `tri` at corner `k`.
fn mixed_area(tri: &[Vec3; 3], k: usize) -> f64 {
    let (p, q, r) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
    let area = (q - p).cross(&(r - p)).norm() / 2.0;
    let (ap, aq, ar) = (angle(&p, &q, &r), angle(&q, &r, &p), angle(&r, &p, &q));
    if ap > PI / 2.0 {
        area / 2.0
    } else if aq > PI / 2.0 || ar > PI / 2.0 {
        area / 4.0
    } else {
        let cot = |a: f64| a.cos() / a.sin();
        ((p - r).norm_squared() * cot(aq) + (p - q).norm_squared() * cot(ar)) / 8.0
    }
}

/// Angle-defect curvature at every interior manifold vertex.
pub fn gaussian_curvature(mesh: &TriangleMesh) -> CurvatureStats {
    let n = mesh.vertices.len();
    let mut angle_sum = vec![0.0; n];
    let mut area = vec![0.0; n];
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (f, face) in mesh.faces.iter().enumerate() {
        let tri = mesh.triangle(f);
        for k in 0..3 {
            let v = face[k];
            angle_sum[v] += angle(&tri[k], &tri[(k + 1) % 3], &tri[(k + 2) % 3]);
            area[v] += mixed_area(&tri, k);
            incident[v].push(f);
        }
    }

    let mut out = CurvatureStats::default();
    for v in 0..n {
        if incident[v].is_empty() {
            continue;
        }
        if !is_closed_fan(mesh, v, &incident[v]) || !(area[v] > 0.0) {
            out.skipped += 1;
            continue;
        }
        let defect = 2.0 * PI - angle_sum[v];
        out.defect_sum += defect;
        out.values.push(defect / area[v]);
        out.vertex_index.push(v);
    }
    if !out.values.is_empty() {
        let m = out.values.len() as f64;
        out.mean = out.values.iter().sum::<f64>() / m;
        out.std = (out.values.iter().map(|x| (x - out.mean).powi(2)).sum::<f64>() / m).sqrt();
    }
    if out.skipped > 0 {
        warn!("curvature skipped {} boundary or non-manifold vertices", out.skipped);
    }
    out
}

/// True when the faces around `v` form one closed disc.
fn is_closed_fan(mesh: &TriangleMesh, v: usize, faces: &[usize]) -> bool {
    // Each face contributes the edge opposite `v` as (next, prev) around v.
    let mut next: HashMap<usize, usize> = HashMap::new();
    for &f in faces {
        let face = mesh.faces[f];
        let k = face.iter().position(|&x| x == v).unwrap();
        if next.insert(face[(k + 1) % 3], face[(k + 2) % 3]).is_some() {
            return false;
        }
    }
    let start = *next.keys().next().unwrap();
    let mut cur = start;
    for _ in 0..next.len() {
        match next.get(&cur) {
            Some(&n) => cur = n,
            None => return false,
        }
    }
    cur == start && {
        // a single cycle visits every wedge
        let mut seen = 1;
        let mut c = next[&start];
        while c != start {
            seen += 1;
            c = next[&c];
        }
        seen == next.len()
    }
}

/// Result of propagating part labels through primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTransfer {
    /// Majority label per primitive.
    pub primitive_labels: Vec<usize>,
    /// Primitives that received no votes (given the global majority label).
    pub unvoted: Vec<usize>,
    pub predicted: Vec<usize>,
    /// IoU per label present in either labeling, ascending label order.
    pub per_label_iou: Vec<(usize, f64)>,
    pub label_iou: f64,
}

/// Index of the primitive that claims each point: highest indicator, ties
/// broken by the smaller distance to that primitive's surface.
pub fn nearest_primitive(a: &PrimitiveAssembly, points: &[Vec3]) -> Vec<usize> {
    let ind = a.indicator_matrix(points);
    (0..points.len())
        .map(|k| {
            let mut best = 0;
            for i in 1..ind.len() {
                let (vi, vb) = (ind[i][k], ind[best][k]);
                if vi > vb
                    || (vi == vb
                        && a.primitives[i].signed_distance(&points[k]).abs()
                            < a.primitives[best].signed_distance(&points[k]).abs())
                {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Votes training labels onto primitives and transfers them to test points.
pub fn label_transfer(a: &PrimitiveAssembly, train: &[(Vec3, usize)], test: &[(Vec3, usize)]) -> Result<LabelTransfer> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(
            "label transfer needs train and test points".into(),
        ));
    }
    let owners = nearest_primitive(a, &train.iter().map(|(p, _)| *p).collect::<Vec<_>>());
    let mut votes: Vec<HashMap<usize, usize>> = vec![HashMap::new(); a.len()];
    let mut global: HashMap<usize, usize> = HashMap::new();
    for (&o, (_, l)) in owners.iter().zip(train) {
        *votes[o].entry(*l).or_default() += 1;
        *global.entry(*l).or_default() += 1;
    }
    // deterministic majority: most votes, then the smaller label
    let majority = |h: &HashMap<usize, usize>| h.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(l, _)| *l);
    let fallback = majority(&global).unwrap();
    let mut unvoted = Vec::new();
    let primitive_labels: Vec<usize> = votes
        .iter()
        .enumerate()
        .map(|(i, h)| {
            majority(h).unwrap_or_else(|| {
                unvoted.push(i);
                fallback
            })
        })
        .collect();
    if !unvoted.is_empty() {
        warn!("primitives {unvoted:?} received no label votes");
    }

    let test_owner = nearest_primitive(a, &test.iter().map(|(p, _)| *p).collect::<Vec<_>>());
    let predicted: Vec<usize> = test_owner.iter().map(|&o| primitive_labels[o]).collect();
    let labels: BTreeSet<usize> = test.iter().map(|(_, l)| *l).chain(predicted.iter().copied()).collect();
    let per_label_iou: Vec<(usize, f64)> = labels
        .iter()
        .map(|&c| {
            let (mut inter, mut union) = (0usize, 0usize);
            for (&p, (_, g)) in predicted.iter().zip(test) {
                inter += usize::from(p == c && *g == c);
                union += usize::from(p == c || *g == c);
            }
            (c, inter as f64 / union as f64)
        })
        .collect();
    let label_iou = per_label_iou.iter().map(|(_, v)| v).sum::<f64>() / per_label_iou.len() as f64;
    Ok(LabelTransfer {
        primitive_labels,
        unvoted,
        predicted,
        per_label_iou,
        label_iou,
    })
}

/// Settings for [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    pub fscore_threshold: f64,
    pub cd1_scale: f64,
    /// Points drawn from the predicted mesh.
    pub pred_samples: usize,
    /// Icosphere level of the explicit mesh that is sampled.
    pub mesh_level: u32,
    /// Uniform samples for the overlap count.
    pub overlap_samples: usize,
    pub seed: u64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            fscore_threshold: FSCORE_THRESHOLD,
            cd1_scale: CD1_SCALE,
            pred_samples: 100_000,
            mesh_level: 5,
            overlap_samples: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Percent.
    pub fscore: f64,
    /// Scaled by `cd1_scale`.
    pub cd1: f64,
    pub cd1_raw: f64,
    pub iou: f64,
    /// Scaled by 1000.
    pub overlap: f64,
    pub curvature_mean: f64,
    pub curvature_std: f64,
    pub label_iou: Option<f64>,
}

impl MetricReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<16}{:>12.4}\n", "F-score (%)", self.fscore));
        s.push_str(&format!("{:<16}{:>12.5}\n", "CD1 (scaled)", self.cd1));
        s.push_str(&format!("{:<16}{:>12.6}\n", "CD1 (raw)", self.cd1_raw));
        s.push_str(&format!("{:<16}{:>12.4}\n", "IoU", self.iou));
        s.push_str(&format!("{:<16}{:>12.4}\n", "Overlap (x1e3)", self.overlap));
        s.push_str(&format!("{:<16}{:>12.4}\n", "Curvature mean", self.curvature_mean));
        s.push_str(&format!("{:<16}{:>12.4}\n", "Curvature std", self.curvature_std));
        if let Some(l) = self.label_iou {
            s.push_str(&format!("{:<16}{:>12.4}\n", "Label IoU", l));
        }
        s
    }
}

/// Predicted surface samples: area-uniform points on the explicit mesh.
pub fn predicted_surface(
    a: &PrimitiveAssembly,
    level: u32,
    count: usize,
    seed: u64,
) -> Result<(TriangleMesh, Vec<Vec3>)> {
    let mesh = a.assemble_mesh(&icosphere(level)?).mesh;
    if mesh.faces.is_empty() {
        return Err(Error::InvalidArgument("assembled mesh has no faces".into()));
    }
    let pts = sample_surface(&mesh, count, seed)?;
    Ok((mesh, pts))
}

/// Full metric suite against a ground-truth surface sample and occupancy
/// labels.
pub fn evaluate(
    a: &PrimitiveAssembly,
    gt_surface: &[Vec3],
    gt_occupancy: &[(Vec3, u8)],
    opts: &MetricOptions,
) -> Result<MetricReport> {
    require_points("ground-truth", gt_surface)?;
    if gt_occupancy.is_empty() {
        return Err(Error::InvalidArgument("no ground-truth occupancy samples".into()));
    }
    let (mesh, pred) = predicted_surface(a, opts.mesh_level, opts.pred_samples, opts.seed)?;
    let cd1_raw = chamfer_l1(&pred, gt_surface)?;
    let positions: Vec<Vec3> = gt_occupancy.iter().map(|(p, _)| *p).collect();
    let labels: Vec<u8> = gt_occupancy.iter().map(|(_, l)| *l).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let curv = gaussian_curvature(&mesh);
    Ok(MetricReport {
        fscore: fscore(&pred, gt_surface, opts.fscore_threshold)?,
        cd1: cd1_raw * opts.cd1_scale,
        cd1_raw,
        iou: assembly_iou(a, &positions, &labels)?,
        overlap: overlap_count(a, &sample_domain(&mut rng, opts.overlap_samples)),
        curvature_mean: curv.mean,
        curvature_std: curv.std,
        label_iou: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nsd::{IndicatorConfig, NsdPrimitive};
    use crate::shapes::{box_mesh, sphere_mesh};
    use proptest::prelude::*;
    use rand::Rng;

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

    fn spheres(list: &[(f64, Vec3)]) -> PrimitiveAssembly {
        let prims = list
            .iter()
            .enumerate()
            .map(|(i, (r, c))| NsdPrimitive::sphere(i, *r, *c))
            .collect();
        PrimitiveAssembly::new(prims, IndicatorConfig::default(), 0.6, 0.1).unwrap()
    }

    #[test]
    fn fscore_examples() {
        let a = cloud(500, 1);
        assert_eq!(fscore(&a, &a, 0.01).unwrap(), 100.0);
        let far: Vec<Vec3> = a.iter().map(|p| p + Vec3::new(5.0, 0.0, 0.0)).collect();
        assert_eq!(fscore(&a, &far, 0.01).unwrap(), 0.0);
        let half: Vec<Vec3> = a.iter().map(|p| p + Vec3::new(0.005, 0.0, 0.0)).collect();
        assert_eq!(fscore(&half, &a, 0.01).unwrap(), 100.0);
        assert!(fscore(&a, &a, 0.0).is_err());
        assert!(fscore(&[], &a, 0.01).is_err());
    }

    #[test]
    fn chamfer_examples() {
        let a = cloud(100, 2);
        assert_eq!(chamfer_l1(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer_l1(&[Vec3::zeros()], &[Vec3::x()]).unwrap(), 2.0);
        let s = sphere_mesh(0.5, Vec3::zeros(), 5);
        let p = sample_surface(&s, 100_000, 1).unwrap();
        let q = sample_surface(&s, 100_000, 2).unwrap();
        assert!(chamfer_l1(&p, &q).unwrap() < 0.01);
    }

    proptest! {
        #[test]
        fn metrics_symmetric_and_translation_invariant(seed in 0u64..500, shift in prop::array::uniform3(-1.0f64..1.0)) {
            let a = cloud(60, seed);
            let b = cloud(80, seed + 1);
            let t = 0.08;
            prop_assert!((fscore(&a, &b, t).unwrap() - fscore(&b, &a, t).unwrap()).abs() < 1e-9);
            prop_assert!((chamfer_l1(&a, &b).unwrap() - chamfer_l1(&b, &a).unwrap()).abs() < 1e-12);
            let s = Vec3::from(shift);
            let a2: Vec<Vec3> = a.iter().map(|p| p + s).collect();
            let b2: Vec<Vec3> = b.iter().map(|p| p + s).collect();
            prop_assert!((chamfer_l1(&a, &b).unwrap() - chamfer_l1(&a2, &b2).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn iou_of_half_overlapping_cubes() {
        // Boxes [-0.4, 0.2] and [-0.1, 0.5] in x: intersection 0.3, union 0.9.
        let a = box_mesh(Vec3::new(0.6, 0.6, 0.6), Vec3::new(-0.1, 0.0, 0.0));
        let b = box_mesh(Vec3::new(0.6, 0.6, 0.6), Vec3::new(0.2, 0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = sample_domain(&mut rng, 1_000_000);
        let la = crate::shape_io::label_occupancy(&a, &pts).unwrap();
        let lb = crate::shape_io::label_occupancy(&b, &pts).unwrap();
        let inside: Vec<bool> = la.iter().map(|l| *l == 1).collect();
        let iou = volumetric_iou(&inside, &lb).unwrap();
        assert!((3.0 * iou - 1.0).abs() < 0.01, "{iou}");
        assert!((volumetric_iou(&inside, &la).unwrap() - 1.0).abs() < 1e-12);
        let outside: Vec<u8> = la.iter().map(|l| 1 - l).collect();
        assert_eq!(volumetric_iou(&inside, &outside).unwrap(), 0.0);
        assert_eq!(volumetric_iou(&[false], &[0]).unwrap(), 0.0);
    }

    #[test]
    fn iou_standard_error_is_small() {
        let a = spheres(&[(0.3, Vec3::zeros())]);
        let est: Vec<f64> = (0..8)
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let pts = sample_domain(&mut rng, 100_000);
                let labels: Vec<u8> = pts.iter().map(|p| u8::from(p.norm() <= 0.25)).collect();
                assembly_iou(&a, &pts, &labels).unwrap()
            })
            .collect();
        let m = est.iter().sum::<f64>() / est.len() as f64;
        let sd = (est.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (est.len() - 1) as f64).sqrt();
        assert!(sd < 0.005, "{sd}");
    }

    #[test]
    fn overlap_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = sample_domain(&mut rng, 400_000);
        assert_eq!(overlap_count(&spheres(&[(0.3, Vec3::zeros())]), &pts), 0.0);
        let apart = spheres(&[(0.2, Vec3::new(-0.3, 0.0, 0.0)), (0.2, Vec3::new(0.3, 0.0, 0.0))]);
        assert_eq!(overlap_count(&apart, &pts), 0.0);
        // Membership is O >= tau_s, i.e. a ball of radius r (1 + ln(1/tau_s - 1) / alpha).
        let ball = |r: f64| 1000.0 * 4.0 / 3.0 * PI * r.powi(3) / 1.1f64.powi(3);
        let mut twins = spheres(&[(0.3, Vec3::zeros()), (0.3, Vec3::zeros())]);
        let r_eff = 0.3 * (1.0 + (1.0 / twins.tau_s - 1.0).ln() / twins.cfg.alpha);
        let got = overlap_count(&twins, &pts);
        assert!(
            (got - ball(r_eff)).abs() / ball(r_eff) < 0.05,
            "{got} vs {}",
            ball(r_eff)
        );
        // with a sharp indicator the plain ball volume is the oracle
        twins.cfg.alpha = 1000.0;
        let got = overlap_count(&twins, &pts);
        assert!((got - ball(0.3)).abs() / ball(0.3) < 0.05, "{got} vs {}", ball(0.3));
    }

    #[test]
    fn overlap_shrinks_with_nested_spheres() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts = sample_domain(&mut rng, 50_000);
        let mut last = f64::INFINITY;
        for r in [0.4, 0.3, 0.2, 0.1] {
            let v = overlap_count(&spheres(&[(0.4, Vec3::zeros()), (r, Vec3::new(0.05, 0.0, 0.0))]), &pts);
            assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn curvature_examples() {
        let t = icosphere(3).unwrap();
        let m = TriangleMesh {
            vertices: t.vertices.iter().map(|v| v.to_vec3()).collect(),
            faces: t.faces.clone(),
        };
        let c = gaussian_curvature(&m);
        assert!((c.defect_sum - 4.0 * PI).abs() < 1e-9);
        assert_eq!(c.skipped, 0);
        let t4 = icosphere(4).unwrap();
        let m4 = TriangleMesh {
            vertices: t4.vertices.iter().map(|v| v.to_vec3()).collect(),
            faces: t4.faces.clone(),
        };
        assert!((gaussian_curvature(&m4).mean - 1.0).abs() < 0.05);

        // 3x3 planar grid: only the centre vertex is interior
        let mut vertices = Vec::new();
        for j in 0..3 {
            for i in 0..3 {
                vertices.push(Vec3::new(i as f64, j as f64, 0.0));
            }
        }
        let mut faces = Vec::new();
        for j in 0..2 {
            for i in 0..2 {
                let v = j * 3 + i;
                faces.push([v, v + 1, v + 4]);
                faces.push([v, v + 4, v + 3]);
            }
        }
        let flat = gaussian_curvature(&TriangleMesh { vertices, faces });
        assert_eq!(flat.vertex_index, vec![4]);
        assert!(flat.values[0].abs() < 1e-12);
        assert_eq!(flat.skipped, 8);
    }

    #[test]
    fn label_transfer_examples() {
        let one = spheres(&[(0.3, Vec3::zeros())]);
        let train: Vec<(Vec3, usize)> = cloud(50, 1).into_iter().map(|p| (p, 7)).collect();
        let test: Vec<(Vec3, usize)> = cloud(50, 2).into_iter().map(|p| (p, 7)).collect();
        let lt = label_transfer(&one, &train, &test).unwrap();
        assert!(lt.predicted.iter().all(|l| *l == 7));
        assert_eq!(lt.label_iou, 1.0);

        let two = spheres(&[
            (0.2, Vec3::new(-0.3, 0.0, 0.0)),
            (0.2, Vec3::new(0.3, 0.0, 0.0)),
            (0.05, Vec3::new(0.0, 0.45, 0.0)),
        ]);
        let label = |p: &Vec3| usize::from(p.x > 0.0);
        let pts = |s| -> Vec<(Vec3, usize)> {
            cloud(400, s)
                .into_iter()
                .filter(|p| p.x.abs() > 0.05 && p.y < 0.3)
                .map(|p| (p, label(&p)))
                .collect()
        };
        let lt = label_transfer(&two, &pts(3), &pts(4)).unwrap();
        assert_eq!(lt.label_iou, 1.0);
        assert_eq!(lt.unvoted, vec![2]);
    }

    #[test]
    fn evaluate_sphere_against_itself() {
        let a = spheres(&[(0.4, Vec3::zeros())]);
        let gt_mesh = sphere_mesh(0.4, Vec3::zeros(), 5);
        let gt = sample_surface(&gt_mesh, 20_000, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let occ: Vec<(Vec3, u8)> = sample_domain(&mut rng, 20_000)
            .into_iter()
            .map(|p| (p, u8::from(p.norm() <= 0.4)))
            .collect();
        let opts = MetricOptions {
            pred_samples: 20_000,
            overlap_samples: 1000,
            ..MetricOptions::default()
        };
        let r = evaluate(&a, &gt, &occ, &opts).unwrap();
        assert!(r.fscore > 90.0, "{}", r.table());
        assert!(r.iou > 0.97);
        assert_eq!(r.overlap, 0.0);
        assert!((r.cd1 - 10.0 * r.cd1_raw).abs() < 1e-15);
        assert!((r.curvature_mean - 1.0 / 0.16).abs() < 0.05 / 0.16);
    }
}
