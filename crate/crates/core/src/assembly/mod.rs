//! Composition of several primitives into one shape.
//!
//! The composite indicator is `sigmoid(sum_i O_i)`. Because every summand is
//! positive it never drops below 0.5, so the surface iso-level `tau_o` has to
//! sit strictly above it. Explicit surface points of primitive `i` are kept
//! only when no other primitive claims them as interior (`O_j < tau_s`).

mod marching_cubes;

use log::warn;
use serde::{Deserialize, Serialize};

pub use marching_cubes::{polygonize, GridSpec};

use crate::diff_engine::sigmoid;
use crate::mesh::TriangleMesh;
use crate::nsd::{IndicatorConfig, NsdPrimitive, PrimitiveGrad};
use crate::shape_io::DOMAIN_HALF_EXTENT;
use crate::sphere_geom::{IcosphereTemplate, UnitDirection};
use crate::{Error, Result, Vec3};

/// Grid resolutions accepted by [`PrimitiveAssembly::marching_cubes`].
pub const MC_RESOLUTIONS: [usize; 3] = [32, 64, 128];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveAssembly {
    pub primitives: Vec<NsdPrimitive>,
    pub cfg: IndicatorConfig,
    /// Surface level of the composite indicator.
    pub tau_o: f64,
    /// Interior-rejection threshold for surface extraction.
    pub tau_s: f64,
}

/// Explicit surface points that survived the occlusion filter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceSampleSet {
    pub points: Vec<Vec3>,
    pub owner: Vec<usize>,
    pub directions: Vec<UnitDirection>,
    /// True when every candidate point was rejected.
    pub degenerate: bool,
}

impl SurfaceSampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Unit normals for the points of a [`SurfaceSampleSet`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollectiveNormals {
    pub normals: Vec<Vec3>,
    /// Index into the sample set for each normal.
    pub point_index: Vec<usize>,
    /// Points skipped because the indicator gradient vanished there.
    pub dropped: usize,
}

/// Template mesh mapped onto every primitive, with buried faces removed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssembledMesh {
    pub mesh: TriangleMesh,
    /// Owning primitive per vertex.
    pub owners: Vec<usize>,
    pub dropped_faces: usize,
}

/// Gradient with respect to every primitive in an assembly.
pub type AssemblyGrad = Vec<PrimitiveGrad>;

impl PrimitiveAssembly {
    pub fn new(primitives: Vec<NsdPrimitive>, cfg: IndicatorConfig, tau_o: f64, tau_s: f64) -> Result<Self> {
        let a = Self {
            primitives,
            cfg,
            tau_o,
            tau_s,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::InvalidArgument("assembly needs at least one primitive".into()));
        }
        if !(self.tau_o > 0.5 && self.tau_o < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tau_o must lie in (0.5, 1) since the composite indicator is at least 0.5, got {}",
                self.tau_o
            )));
        }
        if !(self.tau_s > 0.0 && self.tau_s < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "tau_s must lie in (0, 1), got {}",
                self.tau_s
            )));
        }
        IndicatorConfig::new(self.cfg.alpha)?;
        for p in &self.primitives {
            p.mlp.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// `sum_i O_i(x)` for each point.
    pub fn indicator_sum(&self, xs: &[Vec3]) -> Vec<f64> {
        let mut sum = vec![0.0; xs.len()];
        for p in &self.primitives {
            for (s, v) in sum.iter_mut().zip(p.indicators(&self.cfg, xs)) {
                *s += v;
            }
        }
        sum
    }

    /// Per-primitive indicators, `out[i][k] = O_i(x_k)`.
    pub fn indicator_matrix(&self, xs: &[Vec3]) -> Vec<Vec<f64>> {
        self.primitives.iter().map(|p| p.indicators(&self.cfg, xs)).collect()
    }

    pub fn composite_indicator(&self, x: &Vec3) -> f64 {
        self.composite_indicators(std::slice::from_ref(x))[0]
    }

    pub fn composite_indicators(&self, xs: &[Vec3]) -> Vec<f64> {
        self.indicator_sum(xs).into_iter().map(sigmoid).collect()
    }

    /// Pulls `dL/d(sum_i O_i)(x_k)` back into `grads`. Returns the sums.
    pub fn indicator_sum_backward(&self, xs: &[Vec3], upstream: &[f64], grads: &mut AssemblyGrad) -> Vec<f64> {
        assert_eq!(grads.len(), self.primitives.len());
        let mut sum = vec![0.0; xs.len()];
        for (p, g) in self.primitives.iter().zip(grads.iter_mut()) {
            let vals = p.indicators_backward(&self.cfg, xs, upstream, g, None);
            for (s, v) in sum.iter_mut().zip(vals) {
                *s += v;
            }
        }
        sum
    }

    /// Largest indicator among primitives other than `owner` at each point.
    fn max_other(&self, owner: usize, xs: &[Vec3]) -> Vec<f64> {
        let mut best = vec![0.0f64; xs.len()];
        for (j, p) in self.primitives.iter().enumerate() {
            if j == owner {
                continue;
            }
            for (b, v) in best.iter_mut().zip(p.indicators(&self.cfg, xs)) {
                *b = b.max(v);
            }
        }
        best
    }

    /// Explicit surface points of every primitive, keeping only those that
    /// no other primitive considers interior.
    pub fn extract_surface(&self, dirs: &[UnitDirection]) -> Result<SurfaceSampleSet> {
        self.extract_surface_with(dirs, true)
    }

    /// As [`Self::extract_surface`]; with `filter` off the plain union of all
    /// primitives' points is returned.
    pub fn extract_surface_with(&self, dirs: &[UnitDirection], filter: bool) -> Result<SurfaceSampleSet> {
        if dirs.is_empty() {
            return Err(Error::InvalidArgument("no sphere directions given".into()));
        }
        let mut out = SurfaceSampleSet::default();
        for (i, p) in self.primitives.iter().enumerate() {
            let pts = p.surface_points(dirs);
            let keep: Vec<bool> = if filter && self.primitives.len() > 1 {
                self.max_other(i, &pts).iter().map(|m| *m < self.tau_s).collect()
            } else {
                vec![true; pts.len()]
            };
            for ((x, d), k) in pts.into_iter().zip(dirs).zip(keep) {
                if k {
                    out.points.push(x);
                    out.owner.push(i);
                    out.directions.push(*d);
                }
            }
        }
        out.degenerate = out.points.is_empty();
        if out.degenerate {
            warn!("surface extraction rejected every point");
        }
        Ok(out)
    }

    /// Re-evaluates the points of `s` under the current parameters, keeping
    /// its selection. Used to difference the loss with the filter frozen.
    pub fn recompute_surface(&self, s: &SurfaceSampleSet) -> SurfaceSampleSet {
        let mut out = s.clone();
        for (i, p) in self.primitives.iter().enumerate() {
            let idx: Vec<usize> = (0..s.len()).filter(|&k| s.owner[k] == i).collect();
            let dirs: Vec<UnitDirection> = idx.iter().map(|&k| s.directions[k]).collect();
            for (k, x) in idx.into_iter().zip(p.surface_points(&dirs)) {
                out.points[k] = x;
            }
        }
        out
    }

    /// Pulls `dL/dP` for each kept point back to its owner's parameters.
    pub fn surface_backward(&self, s: &SurfaceSampleSet, upstream: &[Vec3], grads: &mut AssemblyGrad) {
        assert_eq!(s.points.len(), upstream.len());
        for (i, p) in self.primitives.iter().enumerate() {
            let (dirs, ups): (Vec<UnitDirection>, Vec<Vec3>) = s
                .owner
                .iter()
                .zip(&s.directions)
                .zip(upstream)
                .filter(|((o, _), _)| **o == i)
                .map(|((_, d), g)| (*d, *g))
                .unzip();
            if !dirs.is_empty() {
                p.surface_points_backward(&dirs, &ups, &mut grads[i]);
            }
        }
    }

    /// Outward normals from each point's owning primitive.
    pub fn collective_normals(&self, s: &SurfaceSampleSet) -> CollectiveNormals {
        let mut out = CollectiveNormals::default();
        for (k, (x, &o)) in s.points.iter().zip(&s.owner).enumerate() {
            match self.primitives[o].normal(&self.cfg, x) {
                Ok(n) => {
                    out.normals.push(n);
                    out.point_index.push(k);
                }
                Err(_) => out.dropped += 1,
            }
        }
        if out.dropped > 0 {
            warn!("{} surface points had a flat indicator gradient", out.dropped);
        }
        out
    }

    /// Maps the template onto every primitive and concatenates the pieces,
    /// dropping faces whose three vertices are all inside another primitive.
    pub fn assemble_mesh(&self, template: &IcosphereTemplate) -> AssembledMesh {
        let mut out = AssembledMesh::default();
        for (i, p) in self.primitives.iter().enumerate() {
            let verts = p.surface_points(&template.vertices);
            let interior: Vec<bool> = if self.primitives.len() > 1 {
                self.max_other(i, &verts).iter().map(|m| *m >= self.tau_s).collect()
            } else {
                vec![false; verts.len()]
            };
            let mut remap = vec![usize::MAX; verts.len()];
            for f in &template.faces {
                if f.iter().all(|&v| interior[v]) {
                    out.dropped_faces += 1;
                    continue;
                }
                let face = f.map(|v| {
                    if remap[v] == usize::MAX {
                        remap[v] = out.mesh.vertices.len();
                        out.mesh.vertices.push(verts[v]);
                        out.owners.push(i);
                    }
                    remap[v]
                });
                out.mesh.faces.push(face);
            }
        }
        out
    }

    /// Sample grid over the normalized domain with `resolution` cells a side.
    pub fn domain_grid(resolution: usize) -> GridSpec {
        GridSpec {
            cells: resolution,
            lo: -DOMAIN_HALF_EXTENT,
            spacing: 2.0 * DOMAIN_HALF_EXTENT / resolution as f64,
        }
    }

    /// Marching cubes on the composite indicator at level `iso`.
    pub fn marching_cubes(&self, resolution: usize, iso: f64) -> Result<TriangleMesh> {
        if !MC_RESOLUTIONS.contains(&resolution) {
            return Err(Error::InvalidArgument(format!(
                "grid resolution must be one of {MC_RESOLUTIONS:?}, got {resolution}"
            )));
        }
        Ok(self.marching_cubes_any(resolution, iso))
    }

    /// Marching cubes without the resolution whitelist.
    pub fn marching_cubes_any(&self, resolution: usize, iso: f64) -> TriangleMesh {
        let grid = Self::domain_grid(resolution.max(1));
        let values = crate::parallel::map_chunks(&grid.points(), |c| self.composite_indicators(c));
        let mesh = polygonize(&grid, &values, iso);
        if mesh.is_empty() {
            warn!("marching cubes found no surface at level {iso}");
        }
        mesh
    }

    pub fn zero_grad(&self) -> AssemblyGrad {
        self.primitives.iter().map(PrimitiveGrad::zeros).collect()
    }

    pub fn param_count(&self) -> usize {
        self.primitives.iter().map(|p| p.param_count()).sum()
    }

    /// All parameters: per primitive, MLP weights then translation.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in &self.primitives {
            out.extend_from_slice(&p.mlp.params);
            out.extend(p.translation.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for p in &mut self.primitives {
            let n = p.mlp.params.len();
            p.mlp.params.copy_from_slice(&flat[off..off + n]);
            p.translation = Vec3::new(flat[off + n], flat[off + n + 1], flat[off + n + 2]);
            off += n + 3;
        }
        Ok(())
    }

    /// Flattens a gradient in the layout of [`Self::flat_params`].
    pub fn flatten_grad(grads: &AssemblyGrad) -> Vec<f64> {
        let mut out = Vec::new();
        for g in grads {
            out.extend_from_slice(&g.mlp);
            out.extend(g.translation.iter());
        }
        out
    }
}
