//! Indexed triangle meshes, ASCII OBJ I/O and ray-crossing queries.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result, Vec3};

/// Faces with area below this are dropped by [`TriangleMesh::drop_degenerate`].
pub const DEGENERATE_AREA: f64 = 1e-18;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let m = Self { vertices, faces };
        m.validate()?;
        Ok(m)
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidArgument(format!("face {f:?} references a vertex >= {n}")));
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("mesh vertices".into()));
        }
        Ok(())
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        self.faces[f].map(|i| self.vertices[i])
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Removes zero-area faces; returns how many were dropped.
    pub fn drop_degenerate(&mut self) -> usize {
        let before = self.faces.len();
        let keep: Vec<[usize; 3]> = (0..self.faces.len())
            .filter(|&f| {
                let [a, b, c] = self.faces[f];
                a != b && b != c && a != c && self.face_area(f) > DEGENERATE_AREA
            })
            .map(|f| self.faces[f])
            .collect();
        self.faces = keep;
        before - self.faces.len()
    }

    /// Number of undirected edges not shared by exactly two faces.
    pub fn boundary_edge_count(&self) -> usize {
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        edges.values().filter(|&&c| c != 2).count()
    }

    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.boundary_edge_count() == 0
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(
            self.vertices
                .iter()
                .fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))),
        )
    }

    /// Appends `other`, reindexing its faces.
    pub fn append(&mut self, other: &TriangleMesh) {
        let off = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.faces.extend(other.faces.iter().map(|f| f.map(|i| i + off)));
    }

    pub fn translated(&self, v: Vec3) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|p| p + v).collect(),
            faces: self.faces.clone(),
        }
    }
}

/// Parsed OBJ plus bookkeeping about what was cleaned up.
#[derive(Debug, Clone)]
pub struct ObjLoad {
    pub mesh: TriangleMesh,
    pub dropped_degenerate: usize,
}

pub fn load_obj(path: &Path) -> Result<ObjLoad> {
    let text = std::fs::read_to_string(path)?;
    parse_obj(&text)
}

fn parse_index(tok: &str, nverts: usize, line: usize) -> Result<usize> {
    let head = tok.split('/').next().unwrap_or("");
    let raw: i64 = head.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad face index '{tok}'"),
    })?;
    let idx = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        nverts as i64 + raw
    } else {
        -1
    };
    if idx < 0 || idx as usize >= nverts {
        return Err(Error::Parse {
            line,
            msg: format!("face index {raw} out of range ({nverts} vertices so far)"),
        });
    }
    Ok(idx as usize)
}

/// Parses `v` and `f` records; other record types are ignored. Polygons are
/// fan-triangulated.
pub fn parse_obj(text: &str) -> Result<ObjLoad> {
    let mut mesh = TriangleMesh::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("v") => {
                let coords: Vec<f64> = toks
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse {
                        line,
                        msg: format!("bad vertex coordinate: {e}"),
                    })?;
                if coords.len() != 3 || coords.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Parse {
                        line,
                        msg: "vertex needs three finite coordinates".into(),
                    });
                }
                mesh.vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = toks
                    .map(|t| parse_index(t, mesh.vertices.len(), line))
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::Parse {
                        line,
                        msg: "face needs at least three vertices".into(),
                    });
                }
                for k in 1..idx.len() - 1 {
                    mesh.faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let dropped_degenerate = mesh.drop_degenerate();
    if dropped_degenerate > 0 {
        log::warn!("dropped {dropped_degenerate} degenerate faces");
    }
    Ok(ObjLoad {
        mesh,
        dropped_degenerate,
    })
}

/// Writes ASCII OBJ with 1-based indices. With `owners`, each vertex is
/// followed by a `# owner <i>` comment.
pub fn write_obj<W: Write>(mesh: &TriangleMesh, owners: Option<&[usize]>, mut out: W) -> Result<()> {
    let mut buf = String::with_capacity(mesh.vertices.len() * 40 + mesh.faces.len() * 24);
    for (i, v) in mesh.vertices.iter().enumerate() {
        writeln!(buf, "v {} {} {}", v.x, v.y, v.z).unwrap();
        if let Some(o) = owners {
            writeln!(buf, "# owner {}", o[i]).unwrap();
        }
    }
    for f in &mesh.faces {
        writeln!(buf, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn save_obj(mesh: &TriangleMesh, owners: Option<&[usize]>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_obj(mesh, owners, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn hit(&self, origin: &Vec3, inv_dir: &Vec3) -> bool {
        let mut tmin: f64 = 0.0;
        let mut tmax = f64::INFINITY;
        for k in 0..3 {
            let t1 = (self.lo[k] - origin[k]) * inv_dir[k];
            let t2 = (self.hi[k] - origin[k]) * inv_dir[k];
            let (a, b) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            // NaN from 0 * inf keeps the current interval
            if a > tmin {
                tmin = a;
            }
            if b < tmax {
                tmax = b;
            }
        }
        tmin <= tmax
    }
}

#[derive(Debug, Clone)]
enum BvhNode {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

/// Bounding-volume hierarchy over mesh triangles for ray queries.
#[derive(Debug, Clone)]
pub struct Bvh<'a> {
    mesh: &'a TriangleMesh,
    order: Vec<usize>,
    nodes: Vec<BvhNode>,
}

const LEAF_SIZE: usize = 4;

impl<'a> Bvh<'a> {
    pub fn build(mesh: &'a TriangleMesh) -> Self {
        let centroids: Vec<Vec3> = (0..mesh.faces.len())
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                (a + b + c) / 3.0
            })
            .collect();
        let mut bvh = Self {
            mesh,
            order: (0..mesh.faces.len()).collect(),
            nodes: Vec::new(),
        };
        if !mesh.faces.is_empty() {
            bvh.split(0, mesh.faces.len(), &centroids);
        }
        bvh
    }

    fn bounds_of(&self, start: usize, end: usize) -> Aabb {
        let mut b = Aabb::empty();
        for &f in &self.order[start..end] {
            for v in self.mesh.triangle(f) {
                b.grow(&v);
            }
        }
        b
    }

    fn split(&mut self, start: usize, end: usize, centroids: &[Vec3]) -> usize {
        let bounds = self.bounds_of(start, end);
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(BvhNode::Leaf { bounds, start, end });
            return id;
        }
        self.nodes.push(BvhNode::Leaf { bounds, start, end });
        let mut cb = Aabb::empty();
        for &f in &self.order[start..end] {
            cb.grow(&centroids[f]);
        }
        let axis = (cb.hi - cb.lo).imax();
        let mid = (start + end) / 2;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]));
        let left = self.split(start, mid, centroids);
        let right = self.split(mid, end, centroids);
        self.nodes[id] = BvhNode::Inner { bounds, left, right };
        id
    }

    /// Number of triangles crossed by the ray `origin + s * dir`, `s > 0`.
    pub fn count_crossings(&self, origin: &Vec3, dir: &Vec3) -> usize {
        if self.nodes.is_empty() {
            return 0;
        }
        let inv = dir.map(|d| 1.0 / d);
        let mut count = 0;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            match &self.nodes[n] {
                BvhNode::Leaf { bounds, start, end } => {
                    if !bounds.hit(origin, &inv) {
                        continue;
                    }
                    for &f in &self.order[*start..*end] {
                        if ray_triangle(origin, dir, &self.mesh.triangle(f)).is_some() {
                            count += 1;
                        }
                    }
                }
                BvhNode::Inner { bounds, left, right } => {
                    if bounds.hit(origin, &inv) {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        count
    }
}

/// Moller-Trumbore; returns the ray parameter of a hit with `s > 0`.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 1e-12).then_some(t)
}

/// Distance from `p` to a triangle.
pub fn point_triangle_distance(p: &Vec3, tri: &[Vec3; 3]) -> f64 {
    (p - closest_point_on_triangle(p, tri)).norm()
}

fn closest_point_on_triangle(p: &Vec3, [a, b, c]: &[Vec3; 3]) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}
