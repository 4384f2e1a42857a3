//! Marching cubes over a sampled scalar field.
//!
//! The per-case triangulation is generated from the cube's faces instead of
//! a hand-typed table: on every face the crossing edges are paired so that
//! inside corners are never joined across a diagonal, and the face segments
//! are chained into closed loops. Neighbouring cubes see the same face and
//! make the same choice, so the output is watertight for closed level sets.

use std::sync::OnceLock;

use crate::mesh::TriangleMesh;
use crate::Vec3;

/// Corner offsets in (x, y, z) grid steps.
pub const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Cube edges as corner pairs.
pub const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Faces with corners counter-clockwise seen from outside the cube.
const FACES: [[usize; 4]; 6] = [
    [0, 3, 2, 1],
    [4, 5, 6, 7],
    [0, 1, 5, 4],
    [3, 7, 6, 2],
    [0, 4, 7, 3],
    [1, 2, 6, 5],
];

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a))
        .expect("corners share an edge")
}

/// Triangles (as cube edge indices) for a case; bit `i` set means corner `i`
/// is inside. Triangles wind counter-clockwise seen from outside.
fn triangulate_case(case: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| case & (1 << c) != 0;
    // Directed segments: from the crossing where the boundary walk leaves an
    // inside arc back to the crossing where it entered that arc.
    let mut next = [usize::MAX; 12];
    for face in FACES {
        for k in 0..4 {
            let (a, b) = (face[k], face[(k + 1) % 4]);
            if !(inside(a) && !inside(b)) {
                continue;
            }
            let exit = edge_between(a, b);
            let mut j = k;
            loop {
                let prev = (j + 3) % 4;
                if !inside(face[prev]) {
                    next[exit] = edge_between(face[prev], face[j]);
                    break;
                }
                j = prev;
            }
        }
    }
    let mut used = [false; 12];
    let mut tris = Vec::new();
    for start in 0..12 {
        if next[start] == usize::MAX || used[start] {
            continue;
        }
        let mut ring = Vec::new();
        let mut e = start;
        while !used[e] {
            used[e] = true;
            ring.push(e as u8);
            e = next[e];
        }
        // Loops walked this way wind around the inside corners; reverse the
        // fan so normals face away from them.
        for i in 1..ring.len() - 1 {
            tris.push([ring[0], ring[i + 1], ring[i]]);
        }
    }
    tris
}

fn case_table() -> &'static [Vec<[u8; 3]>] {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(triangulate_case).collect())
}

/// Regular sample grid: `(n+1)^3` vertices spanning `[lo, lo + n*h]^3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub cells: usize,
    pub lo: f64,
    pub spacing: f64,
}

impl GridSpec {
    pub fn points_per_axis(&self) -> usize {
        self.cells + 1
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        Vec3::new(
            self.lo + i as f64 * self.spacing,
            self.lo + j as f64 * self.spacing,
            self.lo + k as f64 * self.spacing,
        )
    }

    /// All grid vertices, x fastest.
    pub fn points(&self) -> Vec<Vec3> {
        let n = self.points_per_axis();
        let mut out = Vec::with_capacity(n * n * n);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    out.push(self.point(i, j, k));
                }
            }
        }
        out
    }
}

/// Extracts the `iso` level set of `values` (laid out as [`GridSpec::points`]).
/// Values above `iso` count as inside; faces point towards lower values.
pub fn polygonize(grid: &GridSpec, values: &[f64], iso: f64) -> TriangleMesh {
    let n = grid.points_per_axis();
    assert_eq!(values.len(), n * n * n);
    let table = case_table();
    let idx = |i: usize, j: usize, k: usize| (k * n + j) * n + i;
    // One shared vertex per crossed grid edge: slot = 3 * vertex + axis.
    let mut slots = vec![u32::MAX; 3 * n * n * n];
    let mut mesh = TriangleMesh::default();

    for k in 0..grid.cells {
        for j in 0..grid.cells {
            for i in 0..grid.cells {
                let mut case = 0;
                let mut v = [0.0; 8];
                for (c, off) in CORNERS.iter().enumerate() {
                    v[c] = values[idx(i + off[0], j + off[1], k + off[2])];
                    if v[c] > iso {
                        case |= 1 << c;
                    }
                }
                let tris = &table[case];
                if tris.is_empty() {
                    continue;
                }
                let mut local = [u32::MAX; 12];
                for tri in tris {
                    let mut face = [0usize; 3];
                    for (slot, &e) in face.iter_mut().zip(tri) {
                        let e = e as usize;
                        if local[e] == u32::MAX {
                            let [a, b] = EDGES[e];
                            let (pa, pb) = (CORNERS[a], CORNERS[b]);
                            let base = [i + pa[0].min(pb[0]), j + pa[1].min(pb[1]), k + pa[2].min(pb[2])];
                            let axis = (0..3).find(|&d| pa[d] != pb[d]).unwrap();
                            let key = 3 * idx(base[0], base[1], base[2]) + axis;
                            if slots[key] == u32::MAX {
                                let t = ((iso - v[a]) / (v[b] - v[a])).clamp(0.0, 1.0);
                                let xa = grid.point(i + pa[0], j + pa[1], k + pa[2]);
                                let xb = grid.point(i + pb[0], j + pb[1], k + pb[2]);
                                slots[key] = mesh.vertices.len() as u32;
                                mesh.vertices.push(xa + (xb - xa) * t);
                            }
                            local[e] = slots[key];
                        }
                        *slot = local[e] as usize;
                    }
                    mesh.faces.push(face);
                }
            }
        }
    }
    mesh
}
