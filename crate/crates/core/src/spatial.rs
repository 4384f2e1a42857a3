//! Nearest-neighbour queries over point sets.
//!
//! Brute force is the reference; [`KdTree`] takes over once sets grow past a
//! few thousand points. Ties go to the lower point index in both paths.

use crate::Vec3;

/// Below this many `query * target` pairs brute force is used.
const BRUTE_FORCE_PAIRS: usize = 1 << 16;
/// Ranges this small are scanned linearly.
const LEAF_SIZE: usize = 8;

/// Index and distance of the point in `points` closest to `query`.
pub fn nearest_brute(points: &[Vec3], query: &Vec3) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d2 = (p - query).norm_squared();
        if best.is_none_or(|(_, b)| d2 < b) {
            best = Some((i, d2));
        }
    }
    best.map(|(i, d2)| (i, d2.sqrt()))
}

/// Static 3-d tree in implicit layout: the node of range `[lo, hi)` is the
/// median slot `(lo + hi) / 2`, splitting on the axis stored there.
#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    points: &'a [Vec3],
    order: Vec<usize>,
    axis: Vec<u8>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut tree = Self {
            points,
            order: (0..points.len()).collect(),
            axis: vec![0; points.len()],
        };
        tree.build(0, points.len());
        tree
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= LEAF_SIZE {
            return;
        }
        let (mut min, mut max) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &i in &self.order[lo..hi] {
            min = min.inf(&self.points[i]);
            max = max.sup(&self.points[i]);
        }
        let axis = (max - min).imax();
        let mid = (lo + hi) / 2;
        let pts = self.points;
        self.order[lo..hi]
            .select_nth_unstable_by(mid - lo, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
        self.axis[mid] = axis as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    fn consider(&self, i: usize, q: &Vec3, best: &mut (usize, f64)) {
        let d2 = (self.points[i] - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && i < best.0) {
            *best = (i, d2);
        }
    }

    fn search(&self, lo: usize, hi: usize, q: &Vec3, best: &mut (usize, f64)) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                self.consider(i, q, best);
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let node = self.order[mid];
        self.consider(node, q, best);
        let axis = self.axis[mid] as usize;
        let diff = q[axis] - self.points[node][axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, q, best);
        // `<=` keeps equal-distance candidates on the far side reachable
        if diff * diff <= best.1 {
            self.search(far.0, far.1, q, best);
        }
    }

    pub fn nearest(&self, query: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, self.points.len(), query, &mut best);
        Some((best.0, best.1.sqrt()))
    }
}

/// For each query, the nearest target index and distance.
pub fn nearest_all(targets: &[Vec3], queries: &[Vec3]) -> Vec<(usize, f64)> {
    if targets.is_empty() {
        return Vec::new();
    }
    if targets.len().saturating_mul(queries.len()) <= BRUTE_FORCE_PAIRS {
        return queries.iter().map(|q| nearest_brute(targets, q).unwrap()).collect();
    }
    let tree = KdTree::new(targets);
    crate::parallel::map(queries, |q| tree.nearest(q).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64, scale: f64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                )
            })
            .collect()
    }

    #[test]
    fn tree_matches_brute_force() {
        let pts = cloud(3000, 1, 0.5);
        let tree = KdTree::new(&pts);
        for q in cloud(500, 2, 1.5) {
            assert_eq!(nearest_brute(&pts, &q), tree.nearest(&q));
        }
    }

    #[test]
    fn flat_duplicate_and_degenerate_sets() {
        // all points on a plane
        let pts: Vec<Vec3> = cloud(2000, 3, 0.5)
            .into_iter()
            .map(|p| Vec3::new(p.x, p.y, 0.0))
            .collect();
        let tree = KdTree::new(&pts);
        for q in cloud(200, 4, 0.8) {
            assert_eq!(nearest_brute(&pts, &q), tree.nearest(&q));
        }
        // many coincident points: lowest index wins
        let mut dup = vec![Vec3::new(0.1, 0.1, 0.1); 50];
        dup.extend(cloud(50, 5, 0.5));
        let t = KdTree::new(&dup);
        assert_eq!(t.nearest(&Vec3::new(0.1, 0.1, 0.1)).unwrap().0, 0);
        let single = [Vec3::new(1.0, 2.0, 3.0)];
        assert_eq!(KdTree::new(&single).nearest(&Vec3::zeros()).unwrap().0, 0);
        assert!(KdTree::new(&[]).nearest(&Vec3::zeros()).is_none());
        assert!(nearest_brute(&[], &Vec3::zeros()).is_none());
    }

    proptest! {
        #[test]
        fn nearest_all_agrees_with_brute_force(seed in 0u64..1000, n in 1usize..400, spread in 0.01f64..2.0) {
            let pts = cloud(n, seed, 0.5);
            let qs = cloud(300, seed + 1, spread);
            let fast: Vec<(usize, f64)> = {
                let tree = KdTree::new(&pts);
                qs.iter().map(|q| tree.nearest(q).unwrap()).collect()
            };
            for (q, got) in qs.iter().zip(&fast) {
                prop_assert_eq!(nearest_brute(&pts, q).unwrap(), *got);
            }
            prop_assert_eq!(nearest_all(&pts, &qs), fast);
        }
    }
}
