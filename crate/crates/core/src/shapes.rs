//! Watertight synthetic target shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use crate::mesh::TriangleMesh;
use crate::sphere_geom::icosphere;
use crate::Vec3;

/// Axis-aligned box with outward-facing triangles.
pub fn box_mesh(size: Vec3, center: Vec3) -> TriangleMesh {
    let h = size / 2.0;
    let vertices = (0..8)
        .map(|i| {
            let s = Vec3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            center + s.component_mul(&h)
        })
        .collect();
    let faces = vec![
        [0, 2, 1],
        [1, 2, 3],
        [4, 5, 6],
        [5, 7, 6],
        [0, 1, 4],
        [1, 5, 4],
        [2, 6, 3],
        [3, 6, 7],
        [0, 4, 2],
        [2, 4, 6],
        [1, 3, 5],
        [3, 7, 5],
    ];
    TriangleMesh { vertices, faces }
}

/// Icosphere-tessellated sphere.
pub fn sphere_mesh(radius: f64, center: Vec3, level: u32) -> TriangleMesh {
    let t = icosphere(level).expect("level within range");
    TriangleMesh {
        vertices: t.vertices.iter().map(|v| center + v.to_vec3() * radius).collect(),
        faces: t.faces,
    }
}

/// A mesh made of disjoint closed parts, with each face's part label.
#[derive(Debug, Clone)]
pub struct PartShape {
    pub mesh: TriangleMesh,
    pub face_parts: Vec<usize>,
    pub part_names: Vec<String>,
}

impl PartShape {
    pub fn from_parts(parts: Vec<(&str, TriangleMesh)>) -> Self {
        let mut mesh = TriangleMesh::default();
        let mut face_parts = Vec::new();
        let mut part_names = Vec::new();
        for (label, (name, part)) in parts.into_iter().enumerate() {
            face_parts.extend(std::iter::repeat_n(label, part.faces.len()));
            mesh.append(&part);
            part_names.push(name.to_string());
        }
        Self {
            mesh,
            face_parts,
            part_names,
        }
    }
}

/// Sphere of radius 0.5 centred at the origin (unit bounding box).
pub fn unit_sphere(level: u32) -> TriangleMesh {
    sphere_mesh(0.5, Vec3::zeros(), level)
}

/// Two disjoint spheres along x, fitting the unit cube.
pub fn two_disjoint_spheres(level: u32) -> PartShape {
    PartShape::from_parts(vec![
        ("left", sphere_mesh(0.22, Vec3::new(-0.27, 0.0, 0.0), level)),
        ("right", sphere_mesh(0.22, Vec3::new(0.27, 0.0, 0.0), level)),
    ])
}

/// Union of possibly overlapping analytic spheres.
///
/// Overlapping unions have no simple watertight tessellation, so surface
/// samples and occupancy come straight from the geometry.
#[derive(Debug, Clone)]
pub struct SphereUnion {
    pub spheres: Vec<(Vec3, f64)>,
}

impl SphereUnion {
    /// Two spheres of radius 0.3 with centres 0.4 apart along x.
    pub fn overlapping_pair() -> Self {
        Self {
            spheres: vec![(Vec3::new(-0.2, 0.0, 0.0), 0.3), (Vec3::new(0.2, 0.0, 0.0), 0.3)],
        }
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        self.spheres.iter().any(|(c, r)| (x - c).norm() <= *r)
    }

    /// Area-uniform points on the boundary of the union.
    pub fn sample_surface(&self, count: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let areas: Vec<f64> = self.spheres.iter().map(|(_, r)| r * r).collect();
        let total: f64 = areas.iter().sum();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let mut pick = rng.random_range(0.0..total);
            let mut i = 0;
            while i + 1 < areas.len() && pick >= areas[i] {
                pick -= areas[i];
                i += 1;
            }
            let [x, y, z]: [f64; 3] = UnitSphere.sample(&mut rng);
            let (c, r) = self.spheres[i];
            let p = c + Vec3::new(x, y, z) * r;
            let buried = self
                .spheres
                .iter()
                .enumerate()
                .any(|(j, (cj, rj))| j != i && (p - cj).norm() < *rj);
            if !buried {
                out.push(p);
            }
        }
        out
    }

    pub fn volume_monte_carlo(&self, samples: &[Vec3]) -> f64 {
        samples.iter().filter(|x| self.contains(x)).count() as f64 / samples.len() as f64
    }
}

/// Lamp-like stack of base, pole and shade with small gaps between them.
pub fn stacked_lamp(level: u32) -> PartShape {
    PartShape::from_parts(vec![
        ("base", box_mesh(Vec3::new(0.6, 0.12, 0.6), Vec3::new(0.0, -0.43, 0.0))),
        ("pole", box_mesh(Vec3::new(0.1, 0.44, 0.1), Vec3::new(0.0, -0.13, 0.0))),
        ("shade", sphere_mesh(0.2, Vec3::new(0.0, 0.3, 0.0), level)),
    ])
}
