//! Static 2-d tree over tagged points.

use std::cmp::Ordering;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaggedPoint {
    pub x: f64,
    pub y: f64,
    pub tag: u64,
}

/// Balanced 2-d tree stored implicitly: the node of a range is its middle
/// element, splitting on x at even depth and y at odd depth.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<TaggedPoint>,
}

/// Result of a nearest-neighbour query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub point: TaggedPoint,
    pub dist2: f64,
}

fn axis_value(p: &TaggedPoint, axis: usize) -> f64 {
    if axis == 0 {
        p.x
    } else {
        p.y
    }
}

impl KdTree {
    pub fn build(mut points: Vec<TaggedPoint>) -> Self {
        fn arrange(slice: &mut [TaggedPoint], depth: usize) {
            if slice.len() <= 1 {
                return;
            }
            let axis = depth % 2;
            let mid = slice.len() / 2;
            slice.select_nth_unstable_by(mid, |a, b| {
                axis_value(a, axis).total_cmp(&axis_value(b, axis))
            });
            let (left, right) = slice.split_at_mut(mid);
            arrange(left, depth + 1);
            arrange(&mut right[1..], depth + 1);
        }
        arrange(&mut points, 0);
        KdTree { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[TaggedPoint] {
        &self.points
    }

    /// Nearest point to `(x, y)`. Among equidistant points the smallest tag
    /// wins.
    pub fn nearest(&self, x: f64, y: f64) -> Option<Neighbor> {
        let mut best: Option<Neighbor> = None;
        self.search(&self.points, 0, x, y, &mut best);
        best
    }

    fn search(&self, slice: &[TaggedPoint], depth: usize, x: f64, y: f64, best: &mut Option<Neighbor>) {
        if slice.is_empty() {
            return;
        }
        let mid = slice.len() / 2;
        let node = slice[mid];
        let d2 = (node.x - x).powi(2) + (node.y - y).powi(2);
        let better = match best {
            None => true,
            Some(b) => match d2.total_cmp(&b.dist2) {
                Ordering::Less => true,
                Ordering::Equal => node.tag < b.point.tag,
                Ordering::Greater => false,
            },
        };
        if better {
            *best = Some(Neighbor { point: node, dist2: d2 });
        }

        let axis = depth % 2;
        let diff = if axis == 0 { x - node.x } else { y - node.y };
        let (near, far) = if diff < 0.0 {
            (&slice[..mid], &slice[mid + 1..])
        } else {
            (&slice[mid + 1..], &slice[..mid])
        };
        self.search(near, depth + 1, x, y, best);
        // `<=` keeps equidistant candidates reachable for the tag tie-break.
        if best.is_none_or(|b| diff * diff <= b.dist2) {
            self.search(far, depth + 1, x, y, best);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scan(points: &[TaggedPoint], x: f64, y: f64) -> (f64, u64) {
        points
            .iter()
            .map(|p| ((p.x - x).powi(2) + (p.y - y).powi(2), p.tag))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .unwrap()
    }

    #[test]
    fn empty_tree() {
        assert!(KdTree::build(Vec::new()).nearest(0.0, 0.0).is_none());
    }

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<TaggedPoint> = (0..500)
            .map(|i| TaggedPoint {
                x: rng.random_range(-50.0..50.0),
                y: rng.random_range(-50.0..50.0),
                tag: i % 37,
            })
            .collect();
        let tree = KdTree::build(points.clone());
        for _ in 0..500 {
            let (x, y) = (rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
            let got = tree.nearest(x, y).unwrap();
            assert_eq!((got.dist2, got.point.tag), scan(&points, x, y));
        }
    }

    #[test]
    fn ties_pick_smallest_tag() {
        // Integer lattice with duplicate positions carrying different tags.
        let mut points = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                points.push(TaggedPoint { x: i as f64, y: j as f64, tag: 100 - (i * 10 + j) });
                points.push(TaggedPoint { x: i as f64, y: j as f64, tag: 200 + i * 10 + j });
            }
        }
        let tree = KdTree::build(points.clone());
        for i in 0..19 {
            for j in 0..19 {
                let (x, y) = (i as f64 / 2.0, j as f64 / 2.0);
                let got = tree.nearest(x, y).unwrap();
                assert_eq!((got.dist2, got.point.tag), scan(&points, x, y));
            }
        }
    }
}
