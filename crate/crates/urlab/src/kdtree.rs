//! Weighted kd-tree used for nearest-neighbour, ball-mass and clustered
//! kernel queries.

use crate::Point;

const LEAF: usize = 8;

#[derive(Clone, Debug)]
pub struct Node {
    pub lo: Point,
    pub hi: Point,
    pub start: usize,
    pub end: usize,
    pub children: Option<(usize, usize)>,
    pub mass: f64,
    /// Weighted centre of mass.
    pub com: Point,
    /// Largest distance from `com` to a member point.
    pub radius: f64,
    /// Second moment about `com`: sum of w |y - com|^2.
    pub moment2: f64,
}

#[derive(Clone, Debug)]
pub struct KdTree {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    /// `index[i]` is the caller's index of the i-th stored point.
    pub index: Vec<usize>,
    pub nodes: Vec<Node>,
    dim: usize,
}

impl KdTree {
    pub fn new(points: &[Point], weights: &[f64], dim: usize) -> KdTree {
        assert_eq!(points.len(), weights.len());
        let mut index: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(points, weights, &mut index, 0, points.len(), dim, &mut nodes);
        }
        KdTree {
            points: index.iter().map(|&i| points[i]).collect(),
            weights: index.iter().map(|&i| weights[i]).collect(),
            index,
            nodes,
            dim,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.nodes.first().map_or(0.0, |n| n.mass)
    }

    /// Nearest stored point: (caller index, distance).
    pub fn nearest(&self, x: &Point) -> Option<(usize, f64)> {
        self.nearest_excluding(x, usize::MAX)
    }

    /// Nearest stored point other than caller index `skip`.
    pub fn nearest_excluding(&self, x: &Point, skip: usize) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if box_dist2(x, &node.lo, &node.hi, self.dim) >= best.1 {
                continue;
            }
            match node.children {
                None => {
                    for k in node.start..node.end {
                        if self.index[k] == skip {
                            continue;
                        }
                        let d2 = dist2(x, &self.points[k], self.dim);
                        if d2 < best.1 || (d2 == best.1 && self.index[k] < best.0) {
                            best = (self.index[k], d2);
                        }
                    }
                }
                Some((a, b)) => {
                    let da = box_dist2(x, &self.nodes[a].lo, &self.nodes[a].hi, self.dim);
                    let db = box_dist2(x, &self.nodes[b].lo, &self.nodes[b].hi, self.dim);
                    if da <= db {
                        stack.push(b);
                        stack.push(a);
                    } else {
                        stack.push(a);
                        stack.push(b);
                    }
                }
            }
        }
        if best.0 == usize::MAX {
            return None;
        }
        Some((best.0, best.1.sqrt()))
    }

    /// Distance from an axis-aligned box to the nearest stored point.
    pub fn nearest_to_box(&self, lo: &Point, hi: &Point) -> f64 {
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        if self.nodes.is_empty() {
            return best;
        }
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if box_box_dist2(lo, hi, &node.lo, &node.hi, self.dim) >= best {
                continue;
            }
            match node.children {
                None => {
                    for k in node.start..node.end {
                        best = best.min(box_dist2(&self.points[k], lo, hi, self.dim));
                    }
                }
                Some((a, b)) => {
                    stack.push(a);
                    stack.push(b);
                }
            }
        }
        best.sqrt()
    }

    /// Visit every stored point with |y - x| <= r: `f(caller_index, y, w)`.
    pub fn for_each_in_ball<F: FnMut(usize, &Point, f64)>(&self, x: &Point, r: f64, mut f: F) {
        if self.nodes.is_empty() {
            return;
        }
        let r2 = r * r;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if box_dist2(x, &node.lo, &node.hi, self.dim) > r2 {
                continue;
            }
            match node.children {
                None => {
                    for k in node.start..node.end {
                        if dist2(x, &self.points[k], self.dim) <= r2 {
                            f(self.index[k], &self.points[k], self.weights[k]);
                        }
                    }
                }
                Some((a, b)) => {
                    stack.push(b);
                    stack.push(a);
                }
            }
        }
    }

    /// Caller indices within the closed ball, sorted ascending.
    pub fn ball_indices(&self, x: &Point, r: f64) -> Vec<usize> {
        let mut v = Vec::new();
        self.for_each_in_ball(x, r, |i, _, _| v.push(i));
        v.sort_unstable();
        v
    }

    /// Total weight inside the closed ball.
    pub fn ball_mass(&self, x: &Point, r: f64) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        let r2 = r * r;
        let mut total = 0.0;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if box_dist2(x, &node.lo, &node.hi, self.dim) > r2 {
                continue;
            }
            if box_far2(x, &node.lo, &node.hi, self.dim) <= r2 {
                total += node.mass;
                continue;
            }
            match node.children {
                None => {
                    for k in node.start..node.end {
                        if dist2(x, &self.points[k], self.dim) <= r2 {
                            total += self.weights[k];
                        }
                    }
                }
                Some((a, b)) => {
                    stack.push(b);
                    stack.push(a);
                }
            }
        }
        total
    }
}

fn build(
    points: &[Point],
    weights: &[f64],
    index: &mut [usize],
    start: usize,
    end: usize,
    dim: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut lo = Point::repeat(f64::INFINITY);
    let mut hi = Point::repeat(f64::NEG_INFINITY);
    let mut mass = 0.0;
    let mut com = Point::zeros();
    for &i in &index[start..end] {
        let p = &points[i];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
        mass += weights[i];
        com += p * weights[i];
    }
    if mass > 0.0 {
        com /= mass;
    } else {
        com = (lo + hi) * 0.5;
    }
    let mut radius: f64 = 0.0;
    let mut moment2 = 0.0;
    for &i in &index[start..end] {
        let r2 = (points[i] - com).norm_squared();
        radius = radius.max(r2.sqrt());
        moment2 += weights[i] * r2;
    }
    let id = nodes.len();
    nodes.push(Node {
        lo,
        hi,
        start,
        end,
        children: None,
        mass,
        com,
        radius,
        moment2,
    });
    if end - start > LEAF {
        let mut axis = 0;
        for a in 1..dim {
            if hi[a] - lo[a] > hi[axis] - lo[axis] {
                axis = a;
            }
        }
        if hi[axis] > lo[axis] {
            let mid = start + (end - start) / 2;
            index[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                points[a][axis]
                    .total_cmp(&points[b][axis])
                    .then(a.cmp(&b))
            });
            let l = build(points, weights, index, start, mid, dim, nodes);
            let r = build(points, weights, index, mid, end, dim, nodes);
            nodes[id].children = Some((l, r));
        }
    }
    id
}

#[inline]
pub fn dist2(a: &Point, b: &Point, dim: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..dim {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

#[inline]
fn box_dist2(x: &Point, lo: &Point, hi: &Point, dim: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..dim {
        let d = if x[k] < lo[k] {
            lo[k] - x[k]
        } else if x[k] > hi[k] {
            x[k] - hi[k]
        } else {
            0.0
        };
        s += d * d;
    }
    s
}

#[inline]
fn box_far2(x: &Point, lo: &Point, hi: &Point, dim: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..dim {
        let d = (x[k] - lo[k]).abs().max((x[k] - hi[k]).abs());
        s += d * d;
    }
    s
}

#[inline]
fn box_box_dist2(alo: &Point, ahi: &Point, blo: &Point, bhi: &Point, dim: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..dim {
        let d = (blo[k] - ahi[k]).max(alo[k] - bhi[k]).max(0.0);
        s += d * d;
    }
    s
}
