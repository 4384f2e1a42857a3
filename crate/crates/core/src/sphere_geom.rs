//! Spherical/Cartesian conversions, direction sampling and icosphere templates.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// Maximum icosphere subdivision level accepted by [`icosphere`].
pub const MAX_ICOSPHERE_LEVEL: u32 = 6;

/// A direction on the unit sphere as (polar angle, azimuth).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereCoord {
    /// Polar angle from +z, in `[0, pi]`.
    pub theta: f64,
    /// Azimuth from +x towards +y, in `[-pi, pi]`.
    pub phi: f64,
}

impl SphereCoord {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(0.0..=PI).contains(&theta) || !(-PI..=PI).contains(&phi) {
            return Err(Error::InvalidArgument(format!(
                "sphere coordinate out of range: theta={theta}, phi={phi}"
            )));
        }
        Ok(Self { theta, phi })
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=PI).contains(&self.theta) && (-PI..=PI).contains(&self.phi)
    }
}

/// A unit three-vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitDirection {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitDirection {
    /// Normalizes `v`. Returns `None` for a (near) zero vector.
    pub fn normalize(v: &Vec3) -> Option<Self> {
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return None;
        }
        Some(Self {
            x: v.x / n,
            y: v.y / n,
            z: v.z / n,
        })
    }

    pub fn to_vec3(self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn to_sphere(self) -> SphereCoord {
        to_sphere(&self.to_vec3())
    }
}

/// `omega(d) = (sin t cos p, sin t sin p, cos t)`.
pub fn omega(d: SphereCoord) -> UnitDirection {
    let (st, ct) = d.theta.sin_cos();
    let (sp, cp) = d.phi.sin_cos();
    UnitDirection {
        x: st * cp,
        y: st * sp,
        z: ct,
    }
}

/// Cartesian to sphere direction. The zero vector maps to the north pole.
pub fn to_sphere(x: &Vec3) -> SphereCoord {
    to_sphere_flagged(x).0
}

/// Like [`to_sphere`], also reporting whether the input was degenerate (zero).
pub fn to_sphere_flagged(x: &Vec3) -> (SphereCoord, bool) {
    let rho = x.x.hypot(x.y);
    if rho == 0.0 && x.z == 0.0 {
        return (SphereCoord { theta: 0.0, phi: 0.0 }, true);
    }
    let theta = rho.atan2(x.z);
    let phi = if rho == 0.0 { 0.0 } else { x.y.atan2(x.x) };
    (SphereCoord { theta, phi }, false)
}

/// `r * omega(d)`.
pub fn to_cartesian(r: f64, d: SphereCoord) -> Vec3 {
    omega(d).to_vec3() * r
}

/// Direction sampling scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionScheme {
    /// i.i.d. uniform with respect to area on the sphere.
    #[default]
    UniformRandom,
    /// Deterministic Fibonacci spiral lattice; ignores the seed.
    Fibonacci,
}

pub fn sample_directions(k: usize, scheme: DirectionScheme, seed: u64) -> Result<Vec<SphereCoord>> {
    if k == 0 {
        return Err(Error::InvalidArgument("direction count must be >= 1".into()));
    }
    Ok(match scheme {
        DirectionScheme::UniformRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_uniform_with(&mut rng, k)
        }
        DirectionScheme::Fibonacci => fibonacci_directions(k),
    })
}

/// Uniform directions drawn from a caller-provided generator.
pub fn sample_uniform_with<R: rand::Rng>(rng: &mut R, k: usize) -> Vec<SphereCoord> {
    (0..k)
        .map(|_| {
            let [x, y, z]: [f64; 3] = UnitSphere.sample(rng);
            to_sphere(&Vec3::new(x, y, z))
        })
        .collect()
}

fn fibonacci_directions(k: usize) -> Vec<SphereCoord> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..k)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / k as f64;
            let theta = z.clamp(-1.0, 1.0).acos();
            let raw = golden * i as f64;
            let phi = (raw + PI).rem_euclid(2.0 * PI) - PI;
            SphereCoord { theta, phi }
        })
        .collect()
}

/// Subdivided icosahedron projected onto the unit sphere.
#[derive(Debug, Clone)]
pub struct IcosphereTemplate {
    pub level: u32,
    pub vertices: Vec<UnitDirection>,
    pub faces: Vec<[usize; 3]>,
}

impl IcosphereTemplate {
    pub fn edge_count(&self) -> usize {
        self.faces.len() * 3 / 2
    }
}

pub fn icosphere(level: u32) -> Result<IcosphereTemplate> {
    if level > MAX_ICOSPHERE_LEVEL {
        return Err(Error::InvalidArgument(format!(
            "icosphere level {level} exceeds maximum {MAX_ICOSPHERE_LEVEL}"
        )));
    }
    let g = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, g, 0.0),
        (1.0, g, 0.0),
        (-1.0, -g, 0.0),
        (1.0, -g, 0.0),
        (0.0, -1.0, g),
        (0.0, 1.0, g),
        (0.0, -1.0, -g),
        (0.0, 1.0, -g),
        (g, 0.0, -1.0),
        (g, 0.0, 1.0),
        (-g, 0.0, -1.0),
        (-g, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }

    let vertices = verts
        .iter()
        .map(|v| UnitDirection::normalize(v).expect("icosphere vertex is non-zero"))
        .collect();
    Ok(IcosphereTemplate { level, vertices, faces })
}
