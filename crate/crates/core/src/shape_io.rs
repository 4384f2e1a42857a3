//! Target-shape ingestion: normalization, surface sampling, occupancy
//! labels and the CSV dataset formats.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::mesh::{Bvh, TriangleMesh};
use crate::{Error, Result, Vec3};

/// Half-width of the padded cube occupancy samples are drawn from.
pub const DOMAIN_HALF_EXTENT: f64 = 0.55;

/// Fixed ray directions for parity voting; irrational-looking components
/// keep them off mesh edges and axis-aligned faces.
#[allow(clippy::approx_constant)]
const VOTE_RAYS: [[f64; 3]; 3] = [
    [0.5773502691896258, 0.6176378570313, 0.5341621908760],
    [-0.7071067811865, 0.2357022603955, 0.6666666666667],
    [0.1234567890123, -0.9012345678901, 0.4155522310301],
];

/// Uniform scale + recentring that maps a mesh into the unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            center: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.center) * self.scale
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p / self.scale + self.center
    }
}

/// Centres on the bounding-box centre and scales the longest side to 1.
pub fn normalize(m: &TriangleMesh) -> Result<(TriangleMesh, Normalization)> {
    let (lo, hi) = m
        .bounds()
        .ok_or_else(|| Error::InvalidArgument("cannot normalize an empty mesh".into()))?;
    let extent = (hi - lo).max();
    if !(extent > 0.0) {
        return Err(Error::InvalidArgument("mesh has zero extent".into()));
    }
    let mut t = Normalization {
        center: (lo + hi) / 2.0,
        scale: 1.0 / extent,
    };
    // exact identity for already-normalized input
    if (t.scale - 1.0).abs() < 1e-15 {
        t.scale = 1.0;
    }
    if t.center.norm() < 1e-15 {
        t.center = Vec3::zeros();
    }
    let mesh = TriangleMesh {
        vertices: m.vertices.iter().map(|v| t.apply(v)).collect(),
        faces: m.faces.clone(),
    };
    Ok((mesh, t))
}

/// Area-weighted uniform samples on the mesh surface.
pub fn sample_surface(m: &TriangleMesh, count: usize, seed: u64) -> Result<Vec<Vec3>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_surface_with(m, count, &mut rng)
}

pub fn sample_surface_with<R: Rng>(m: &TriangleMesh, count: usize, rng: &mut R) -> Result<Vec<Vec3>> {
    Ok(sample_with_faces(m, count, rng)?.into_iter().map(|(p, _)| p).collect())
}

/// Same as [`sample_surface`], also returning the source face of each point.
pub fn sample_surface_faces(m: &TriangleMesh, count: usize, seed: u64) -> Result<Vec<(Vec3, usize)>> {
    sample_with_faces(m, count, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn sample_with_faces<R: Rng>(m: &TriangleMesh, count: usize, rng: &mut R) -> Result<Vec<(Vec3, usize)>> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let mut cumulative = Vec::with_capacity(m.faces.len());
    let mut total = 0.0;
    for f in 0..m.faces.len() {
        total += m.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("mesh has zero surface area".into()));
    }
    Ok((0..count)
        .map(|_| {
            let pick = rng.random_range(0.0..total);
            let f = cumulative.partition_point(|&c| c <= pick).min(m.faces.len() - 1);
            let [a, b, c] = m.triangle(f);
            let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            (a + (b - a) * u + (c - a) * v, f)
        })
        .collect())
}

/// Inside (1) / outside (0) by ray-crossing parity, majority of three rays.
pub fn label_occupancy(m: &TriangleMesh, points: &[Vec3]) -> Result<Vec<u8>> {
    let boundary_edges = m.boundary_edge_count();
    if boundary_edges > 0 || m.faces.is_empty() {
        return Err(Error::NotWatertight { boundary_edges });
    }
    let bvh = Bvh::build(m);
    let rays: Vec<Vec3> = VOTE_RAYS
        .iter()
        .map(|r| Vec3::new(r[0], r[1], r[2]).normalize())
        .collect();
    Ok(points
        .iter()
        .map(|p| {
            let votes = rays.iter().filter(|d| bvh.count_crossings(p, d) % 2 == 1).count();
            u8::from(votes >= 2)
        })
        .collect())
}

/// Uniform points in the padded cube `[-0.55, 0.55]^3`.
pub fn sample_domain<R: Rng>(rng: &mut R, count: usize) -> Vec<Vec3> {
    let h = DOMAIN_HALF_EXTENT;
    (0..count)
        .map(|_| {
            Vec3::new(
                rng.random_range(-h..h),
                rng.random_range(-h..h),
                rng.random_range(-h..h),
            )
        })
        .collect()
}

/// How occupancy query points are distributed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum OccupancySampling {
    /// Uniform over the padded cube.
    #[default]
    Uniform,
    /// Half uniform, half surface samples jittered by a Gaussian of `sigma`.
    NearSurface { sigma: f64 },
}

/// Target shape as seen by the fitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSample {
    pub surface_points: Vec<Vec3>,
    pub occupancy_points: Vec<(Vec3, u8)>,
    pub transform: Normalization,
}

impl ShapeSample {
    pub fn validate(&self) -> Result<()> {
        let h = DOMAIN_HALF_EXTENT + 1e-9;
        let inside = |p: &Vec3| p.iter().all(|c| c.abs() <= h);
        if self.surface_points.is_empty() {
            return Err(Error::InvalidArgument("shape has no surface points".into()));
        }
        if self.occupancy_points.is_empty() {
            return Err(Error::InvalidArgument("shape has no occupancy samples".into()));
        }
        if !self.surface_points.iter().all(inside) || !self.occupancy_points.iter().all(|(p, _)| inside(p)) {
            return Err(Error::InvalidArgument("samples lie outside the normalized cube".into()));
        }
        if self.occupancy_points.iter().any(|(_, l)| *l > 1) {
            return Err(Error::InvalidArgument("occupancy labels must be 0 or 1".into()));
        }
        Ok(())
    }

    pub fn occupancy_positions(&self) -> Vec<Vec3> {
        self.occupancy_points.iter().map(|(p, _)| *p).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.occupancy_points.iter().map(|(_, l)| *l).collect()
    }
}

/// Normalizes a watertight mesh and draws surface and occupancy samples.
pub fn build_shape_sample(
    mesh: &TriangleMesh,
    surface_count: usize,
    occupancy_count: usize,
    sampling: OccupancySampling,
    seed: u64,
) -> Result<ShapeSample> {
    let (norm_mesh, transform) = normalize(mesh)?;
    if !norm_mesh.is_watertight() {
        return Err(Error::NotWatertight {
            boundary_edges: norm_mesh.boundary_edge_count(),
        });
    }
    let surface_points = sample_surface(&norm_mesh, surface_count, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let positions = match sampling {
        OccupancySampling::Uniform => sample_domain(&mut rng, occupancy_count),
        OccupancySampling::NearSurface { sigma } => {
            let near = occupancy_count / 2;
            let mut pts = sample_domain(&mut rng, occupancy_count - near);
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let h = DOMAIN_HALF_EXTENT;
            for p in sample_surface_with(&norm_mesh, near.max(1), &mut rng)?
                .into_iter()
                .take(near)
            {
                let j = Vec3::new(
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                );
                pts.push((p + j).map(|c| c.clamp(-h, h)));
            }
            pts
        }
    };
    let labels = label_occupancy(&norm_mesh, &positions)?;
    Ok(ShapeSample {
        surface_points,
        occupancy_points: positions.into_iter().zip(labels).collect(),
        transform,
    })
}

pub fn write_surface_csv(path: &Path, points: &[Vec3]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "z"])?;
    for p in points {
        w.write_record([p.x.to_string(), p.y.to_string(), p.z.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_surface_csv(path: &Path) -> Result<Vec<Vec3>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let (x, y, z): (f64, f64, f64) = rec?;
        out.push(Vec3::new(x, y, z));
    }
    Ok(out)
}

pub fn write_occupancy_csv(path: &Path, samples: &[(Vec3, u8)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "z", "label"])?;
    for (p, l) in samples {
        w.write_record([p.x.to_string(), p.y.to_string(), p.z.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_occupancy_csv(path: &Path) -> Result<Vec<(Vec3, u8)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        let (x, y, z, l): (f64, f64, f64, u8) = rec?;
        if l > 1 {
            return Err(Error::Parse {
                line: i + 2,
                msg: format!("label {l} is not 0 or 1"),
            });
        }
        out.push((Vec3::new(x, y, z), l));
    }
    Ok(out)
}
