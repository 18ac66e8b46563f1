//! Dyadic pseudo-cubes on the boundary sample, Whitney cubes in the domain
//! and Carleson-packing sums.

use crate::exec::Exec;
use crate::geometry::{BoundarySample, DomainBox};
use crate::{Error, Point, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::fmt::Write;

/// A boundary cube of generation k, side length 2^-k.
#[derive(Clone, Debug)]
pub struct Cube {
    pub id: usize,
    pub k: i32,
    pub center: Point,
    /// Atom index of the center.
    pub center_atom: usize,
    /// Sorted atom indices.
    pub members: Vec<usize>,
    pub sigma_mass: f64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

impl Cube {
    pub fn ell(&self) -> f64 {
        2f64.powi(-self.k)
    }
}

#[derive(Clone, Debug)]
pub struct CubeForest {
    pub cubes: Vec<Cube>,
    pub k_min: i32,
    pub k_max: i32,
    /// Achieved inner-ball constant: every atom within a0 2^-k of a center
    /// belongs to its cube.
    pub a0: f64,
    n: usize,
    generations: Vec<Vec<usize>>,
    /// `labels[g][atom]` is the id of the generation-(k_min + g) cube holding the atom.
    labels: Vec<Vec<usize>>,
}

impl CubeForest {
    pub fn generation(&self, k: i32) -> &[usize] {
        if k < self.k_min || k > self.k_max {
            return &[];
        }
        &self.generations[(k - self.k_min) as usize]
    }

    /// Id of the generation-k cube containing an atom.
    pub fn cube_of(&self, atom: usize, k: i32) -> Option<usize> {
        if k < self.k_min || k > self.k_max {
            return None;
        }
        self.labels[(k - self.k_min) as usize].get(atom).copied()
    }

    pub fn roots(&self) -> &[usize] {
        self.generation(self.k_min)
    }

    /// Ids of Q0 and all its descendants, generation by generation.
    pub fn descendants(&self, q0: usize) -> Vec<usize> {
        let mut out = vec![q0];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(&self.cubes[out[i]].children);
            i += 1;
        }
        out
    }

    /// The j-th ancestor Q^(j), if it exists.
    pub fn ancestor(&self, q: usize, j: u32) -> Option<usize> {
        let mut cur = q;
        for _ in 0..j {
            cur = self.cubes[cur].parent?;
        }
        Some(cur)
    }

    /// One row per cube: `id k x_Q... sigma_mass parent_id` (parent -1 for roots).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.cubes {
            write!(s, "{} {}", c.id, c.k).unwrap();
            for i in 0..self.n {
                write!(s, " {:.17e}", c.center[i]).unwrap();
            }
            let parent = c.parent.map_or(-1, |p| p as i64);
            writeln!(s, " {:.17e} {}", c.sigma_mass, parent).unwrap();
        }
        s
    }
}

/// Build nested pseudo-cubes for generations k_min..=k_max. Inside each
/// parent, atoms are grouped into linkage components at scale 2^-k / 2;
/// components wider than 3/4 2^-k around their central atom are bisected at
/// the mass median of their widest axis. The central atom (nearest to the
/// bounding-box center) is the cube center, so every member lies within
/// 2^-k of it.
pub fn build_christ_cubes(sample: &BoundarySample, k_min: i32, k_max: i32) -> Result<CubeForest> {
    if k_min > k_max {
        return Err(Error::Parameter(format!("k_min = {k_min} exceeds k_max = {k_max}")));
    }
    if sample.is_empty() {
        return Err(Error::Parameter("empty boundary sample".into()));
    }
    if sample.len() > 1 && 2f64.powi(-k_max) < 4.0 * sample.spacing() {
        return Err(Error::Resolution(format!(
            "sample spacing {:e} too coarse for generation {k_max} (needs 2^-k >= 4 spacing)",
            sample.spacing()
        )));
    }
    let pts = sample.points();
    let ws = sample.weights();
    let n_atoms = pts.len();
    let mut splitter = Splitter { sample, mark: vec![false; n_atoms] };

    let mut cubes: Vec<Cube> = Vec::new();
    let mut generations: Vec<Vec<usize>> = Vec::new();
    let mut labels: Vec<Vec<usize>> = Vec::new();

    let all: Vec<usize> = (0..n_atoms).collect();
    let mut groups: Vec<(Vec<usize>, Option<usize>)> = vec![(all, None)];
    for k in k_min..=k_max {
        let tau = 2f64.powi(-k);
        let mut gen_ids = Vec::new();
        let mut label = vec![usize::MAX; n_atoms];
        let mut next = Vec::new();
        for (members, parent) in groups {
            for (center, mem) in splitter.split(&members, tau) {
                let id = cubes.len();
                let sigma_mass = mem.iter().map(|&i| ws[i]).sum();
                for &i in &mem {
                    label[i] = id;
                }
                if let Some(p) = parent {
                    cubes[p].children.push(id);
                }
                cubes.push(Cube {
                    id,
                    k,
                    center: pts[center],
                    center_atom: center,
                    members: mem.clone(),
                    sigma_mass,
                    parent,
                    children: Vec::new(),
                });
                gen_ids.push(id);
                next.push((mem, Some(id)));
            }
        }
        generations.push(gen_ids);
        labels.push(label);
        groups = next;
    }

    // achieved a0
    let tree = sample.tree();
    let mut a0: f64 = 1.0;
    for c in &cubes {
        let tau = c.ell();
        let label = &labels[(c.k - k_min) as usize];
        let mut nearest_out = tau;
        tree.for_each_in_ball(&c.center, tau, |i, y, _| {
            if label[i] != c.id {
                nearest_out = nearest_out.min((y - c.center).norm());
            }
        });
        a0 = a0.min(nearest_out / tau);
    }

    Ok(CubeForest { cubes, k_min, k_max, a0, n: sample.n(), generations, labels })
}

struct Splitter<'a> {
    sample: &'a BoundarySample,
    mark: Vec<bool>,
}

impl Splitter<'_> {
    /// Cells of a parent at scale tau: (center atom, sorted members), ordered
    /// by smallest member.
    fn split(&mut self, members: &[usize], tau: f64) -> Vec<(usize, Vec<usize>)> {
        let pts = self.sample.points();
        let mut out = Vec::new();
        let mut queue = self.components(members, 0.5 * tau);
        while let Some(g) = queue.pop() {
            let (c, radius) = central_atom(pts, &g);
            if radius <= 0.75 * tau || g.len() == 1 {
                out.push((c, g));
            } else {
                let (a, b) = bisect(pts, self.sample.weights(), &g);
                queue.push(a);
                queue.push(b);
            }
        }
        out.sort_by_key(|(_, g)| g[0]);
        out
    }

    /// Single-linkage components of `members` with link length `eps`.
    fn components(&mut self, members: &[usize], eps: f64) -> Vec<Vec<usize>> {
        let pts = self.sample.points();
        let (lo, hi) = bbox(pts, members);
        if (hi - lo).norm() <= eps {
            return vec![members.to_vec()];
        }
        for &i in members {
            self.mark[i] = true;
        }
        let mut out = Vec::new();
        for &start in members {
            if !self.mark[start] {
                continue;
            }
            self.mark[start] = false;
            let mut comp = vec![start];
            let mut head = 0;
            while head < comp.len() {
                let y = pts[comp[head]];
                head += 1;
                let mark = &mut self.mark;
                self.sample.tree().for_each_in_ball(&y, eps, |j, _, _| {
                    if mark[j] {
                        mark[j] = false;
                        comp.push(j);
                    }
                });
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }
}

fn bbox(pts: &[Point], ids: &[usize]) -> (Point, Point) {
    let mut lo = pts[ids[0]];
    let mut hi = lo;
    for &i in ids {
        lo = lo.inf(&pts[i]);
        hi = hi.sup(&pts[i]);
    }
    (lo, hi)
}

/// Member nearest to the bounding-box center (lowest index on ties) and the
/// largest member distance from it.
fn central_atom(pts: &[Point], ids: &[usize]) -> (usize, f64) {
    let (lo, hi) = bbox(pts, ids);
    let mid = (lo + hi) / 2.0;
    let mut c = ids[0];
    let mut best = f64::INFINITY;
    for &i in ids {
        let d = (pts[i] - mid).norm_squared();
        if d < best {
            best = d;
            c = i;
        }
    }
    let radius = ids.iter().map(|&i| (pts[i] - pts[c]).norm()).fold(0.0, f64::max);
    (c, radius)
}

/// Split at the mass median along the widest bounding-box axis.
fn bisect(pts: &[Point], ws: &[f64], ids: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let (lo, hi) = bbox(pts, ids);
    let ext = hi - lo;
    let axis = (0..3).fold(0, |a, k| if ext[k] > ext[a] { k } else { a });
    let mut order = ids.to_vec();
    order.sort_by(|&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
    let total: f64 = order.iter().map(|&i| ws[i]).sum();
    let mut acc = 0.0;
    let mut cut = order.len() / 2;
    for (j, &i) in order.iter().enumerate() {
        acc += ws[i];
        if acc >= 0.5 * total {
            cut = j + 1;
            break;
        }
    }
    let cut = cut.clamp(1, order.len() - 1);
    let mut a = order[..cut].to_vec();
    let mut b = order[cut..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

/// (sum of sigma(Q) over Q in Q0 with predicate(Q)) / sigma(Q0).
pub fn packing_sum<F>(forest: &CubeForest, predicate: F, q0: usize, exec: Exec) -> f64
where
    F: Fn(&Cube) -> bool + Sync,
{
    let ids = forest.descendants(q0);
    let hits = exec.map_slice(&ids, |&q| {
        let c = &forest.cubes[q];
        if predicate(c) {
            c.sigma_mass
        } else {
            0.0
        }
    });
    hits.iter().sum::<f64>() / forest.cubes[q0].sigma_mass
}

/// A dyadic lattice cube with 20 l <= dist(W, boundary) < 40 l.
#[derive(Clone, Debug)]
pub struct WhitneyCube {
    pub corner: Point,
    pub side: f64,
    pub center: Point,
    /// Cube-to-boundary distance used for the selection.
    pub dist: f64,
    level: u32,
    index: [i64; 3],
}

impl WhitneyCube {
    pub fn upper(&self, n: usize) -> Point {
        let mut hi = self.corner;
        for k in 0..n {
            hi[k] += self.side;
        }
        hi
    }

    /// Radius of the dilate W* = 2 B_W, with B_W the circumscribed ball.
    pub fn star_radius(&self, n: usize) -> f64 {
        (n as f64).sqrt() * self.side
    }
}

#[derive(Clone, Debug)]
pub struct WhitneySet {
    pub cubes: Vec<WhitneyCube>,
    pub h_min: f64,
    /// Side of the generation-0 lattice cube, anchored at the box's lower corner.
    pub top_side: f64,
    /// Fraction of sampled points of box ∩ domain not covered by any cube.
    pub uncovered_fraction: f64,
    /// Largest number of dilates W* containing a common point, over cube
    /// centers and corners.
    pub multiplicity: usize,
    origin: Point,
    n: usize,
    max_level: u32,
    lookup: HashMap<(u32, [i64; 3]), usize>,
}

impl WhitneySet {
    /// Index of the cube containing x (half-open cells).
    pub fn locate(&self, x: &Point) -> Option<usize> {
        for level in 0..=self.max_level {
            let side = self.top_side / 2f64.powi(level as i32);
            let mut idx = [0i64; 3];
            for k in 0..self.n {
                idx[k] = ((x[k] - self.origin[k]) / side).floor() as i64;
            }
            if let Some(&i) = self.lookup.get(&(level, idx)) {
                return Some(i);
            }
        }
        None
    }

    /// Fraction of uniform samples of box ∩ domain satisfying `region` that
    /// lie in no cube.
    pub fn uncovered_where<F: Fn(&Point) -> bool>(&self, domain: &DomainBox, region: F, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut hit, mut miss) = (0usize, 0usize);
        let mut tries = 0usize;
        while hit + miss < samples && tries < 100 * samples {
            tries += 1;
            let mut x = Point::zeros();
            for k in 0..self.n {
                x[k] = rng.gen_range(domain.lower[k]..domain.upper[k]);
            }
            if !domain.contains(&x) || !region(&x) {
                continue;
            }
            if self.locate(&x).is_some() {
                hit += 1;
            } else {
                miss += 1;
            }
        }
        if hit + miss == 0 {
            return 0.0;
        }
        miss as f64 / (hit + miss) as f64
    }

    /// Number of dilates W* containing x.
    pub fn star_count(&self, x: &Point) -> usize {
        self.star_count_levels(x, 0, self.max_level)
    }

    /// Number of dilates W* of cubes with level in [lo, hi] containing x.
    pub fn star_count_levels(&self, x: &Point, lo: u32, hi: u32) -> usize {
        let mut count = 0;
        let reach = (self.n as f64).sqrt().ceil() as i64 + 1;
        for level in lo..=hi.min(self.max_level) {
            let side = self.top_side / 2f64.powi(level as i32);
            let mut base = [0i64; 3];
            for k in 0..self.n {
                base[k] = ((x[k] - self.origin[k]) / side).floor() as i64;
            }
            let zr = if self.n == 3 { reach } else { 0 };
            for i in -reach..=reach {
                for j in -reach..=reach {
                    for l in -zr..=zr {
                        let idx = [base[0] + i, base[1] + j, base[2] + l];
                        if let Some(&c) = self.lookup.get(&(level, idx)) {
                            let w = &self.cubes[c];
                            if (x - w.center).norm() <= w.star_radius(self.n) {
                                count += 1;
                            }
                        }
                    }
                }
            }
        }
        count
    }
}

/// Maximal lattice cubes W with 20 l(W) <= dist(W, boundary) < 40 l(W) and
/// l(W) >= h_min inside box ∩ domain.
pub fn build_whitney(domain: &DomainBox, h_min: f64) -> Result<WhitneySet> {
    if !(h_min > 0.0 && h_min.is_finite()) {
        return Err(Error::Parameter(format!("h_min must be positive, got {h_min}")));
    }
    let n = domain.n();
    let s = &domain.boundary;
    let span = (0..n).map(|k| domain.upper[k] - domain.lower[k]).fold(0.0, f64::max);
    let top_side = 2f64.powf(span.log2().ceil());
    let origin = domain.lower;
    let mut cubes = Vec::new();
    let mut max_level = 0;
    let mut stack = vec![(0u32, [0i64; 3])];
    while let Some((level, index)) = stack.pop() {
        let side = top_side / 2f64.powi(level as i32);
        let mut lo = origin;
        let mut hi = origin;
        for k in 0..n {
            lo[k] += index[k] as f64 * side;
            hi[k] = lo[k] + side;
        }
        if (0..n).any(|k| lo[k] >= domain.upper[k] || hi[k] <= domain.lower[k]) {
            continue;
        }
        let dist = s.box_distance(&lo, &hi);
        if dist >= 20.0 * side {
            let center = (lo + hi) / 2.0;
            if dist < 40.0 * side && domain.contains(&center) {
                max_level = max_level.max(level);
                cubes.push(WhitneyCube { corner: lo, side, center, dist, level, index });
            }
            continue;
        }
        if side / 2.0 < h_min {
            continue;
        }
        let zr = if n == 3 { 1 } else { 0 };
        for l in (0..=zr).rev() {
            for j in (0..=1).rev() {
                for i in (0..=1).rev() {
                    stack.push((level + 1, [2 * index[0] + i, 2 * index[1] + j, 2 * index[2] + l]));
                }
            }
        }
    }
    cubes.sort_by(|a, b| {
        a.level.cmp(&b.level).then(a.index.cmp(&b.index))
    });
    let lookup = cubes.iter().enumerate().map(|(i, c)| ((c.level, c.index), i)).collect();
    let mut set = WhitneySet {
        cubes,
        h_min,
        top_side,
        uncovered_fraction: 0.0,
        multiplicity: 0,
        origin,
        n,
        max_level,
        lookup,
    };
    set.uncovered_fraction = set.uncovered_where(domain, |_| true, 4096, 0);
    // dilates that meet have sides within a factor 4 of each other
    let mut mult = 0;
    for c in &set.cubes {
        let (lo, hi) = (c.level.saturating_sub(2), c.level + 2);
        mult = mult.max(set.star_count_levels(&c.center, lo, hi));
        for corner in 0..(1usize << n) {
            let mut p = c.corner;
            for k in 0..n {
                if corner >> k & 1 == 1 {
                    p[k] += c.side;
                }
            }
            mult = mult.max(set.star_count_levels(&p, lo, hi));
        }
    }
    set.multiplicity = mult;
    Ok(set)
}
