//! Boundary samples, domains and the geometric uniformity diagnostics.
//!
//! A boundary measure is represented by quadrature atoms (point + weight).
//! Generated kinds carry an exact distance oracle where one exists and, for
//! unbounded flat kinds, a far-field model describing the part of the set
//! outside the sampled window. The far field only enters kernel sums.

use crate::exec::Exec;
use crate::kdtree::KdTree;
use crate::quad;
use crate::{Error, Point, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Plane,
    LipschitzGraph,
    Circle,
    FourCornerCantor,
    LowDimPlane,
    Custom,
}

impl Kind {
    pub fn tag(self) -> &'static str {
        match self {
            Kind::Plane => "plane",
            Kind::LipschitzGraph => "lipschitz_graph",
            Kind::Circle => "circle",
            Kind::FourCornerCantor => "four_corner_cantor",
            Kind::LowDimPlane => "low_dim_plane",
            Kind::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Kind> {
        Ok(match s {
            "plane" => Kind::Plane,
            "lipschitz_graph" => Kind::LipschitzGraph,
            "circle" => Kind::Circle,
            "four_corner_cantor" => Kind::FourCornerCantor,
            "low_dim_plane" => Kind::LowDimPlane,
            "custom" => Kind::Custom,
            other => return Err(Error::Parameter(format!("unknown boundary kind `{other}`"))),
        })
    }
}

/// Kind-specific construction parameters.
#[derive(Clone, Debug)]
pub enum BoundaryParams {
    /// The hyperplane {x_n = 0} in R^n (n = 2 or 3), sampled on [-extent, extent]^(n-1).
    Plane { n: usize, extent: f64, spacing: f64 },
    /// Graph t = (slope/frequency) sin(frequency x) in R^2.
    LipschitzGraph {
        slope: f64,
        frequency: f64,
        extent: f64,
        spacing: f64,
    },
    Circle { radius: f64, count: usize },
    FourCornerCantor { generation: u32 },
    /// The x_1 axis in R^3 (d = 1, n = 3).
    LowDimPlane { extent: f64, spacing: f64 },
    Custom {
        n: usize,
        d: f64,
        points: Vec<Point>,
        weights: Vec<f64>,
    },
}

impl BoundaryParams {
    pub fn kind(&self) -> Kind {
        match self {
            BoundaryParams::Plane { .. } => Kind::Plane,
            BoundaryParams::LipschitzGraph { .. } => Kind::LipschitzGraph,
            BoundaryParams::Circle { .. } => Kind::Circle,
            BoundaryParams::FourCornerCantor { .. } => Kind::FourCornerCantor,
            BoundaryParams::LowDimPlane { .. } => Kind::LowDimPlane,
            BoundaryParams::Custom { .. } => Kind::Custom,
        }
    }
}

#[derive(Clone, Debug)]
enum Shape {
    /// {x_n = 0}
    Hyperplane,
    /// x_1 axis in R^3
    Axis,
    Circle { radius: f64 },
    Graph { amplitude: f64, frequency: f64 },
    Unknown,
}

/// Missing part of an unbounded flat set, in reference coordinates.
#[derive(Clone, Debug)]
enum FarField {
    /// The x_1 axis outside [-a, a], with weights scaled by `factor`.
    Line { a: f64, factor: f64 },
    /// The x_1 x_2 plane of R^3 outside [-a, a]^2.
    Plane2 { a: f64 },
}

/// Result of an empirical Ahlfors-regularity check.
#[derive(Clone, Debug)]
pub struct AhlforsReport {
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// max(max_ratio, 1/min_ratio)
    pub c_sigma: f64,
    /// Set when a ratio leaves [1e-3, 1e3].
    pub flagged: bool,
    pub samples: usize,
    pub r_range: (f64, f64),
}

#[derive(Clone, Debug)]
pub struct BoundarySample {
    kind: Kind,
    n: usize,
    d: f64,
    points: Vec<Point>,
    weights: Vec<f64>,
    spacing: f64,
    diam: f64,
    /// Half-width of the sampled window (reference coordinates) for unbounded kinds.
    window: Option<f64>,
    shape: Shape,
    shift: Point,
    scale: f64,
    far: Option<FarField>,
    tree: KdTree,
    ahlfors: Option<AhlforsReport>,
}

fn check_spacing(spacing: f64, extent: f64) -> Result<()> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::Parameter(format!("spacing must be positive, got {spacing}")));
    }
    if !(extent > 0.0 && extent.is_finite()) || extent < spacing {
        return Err(Error::Parameter(format!("extent must be positive and at least one spacing, got {extent}")));
    }
    Ok(())
}

fn lattice_1d(extent: f64, spacing: f64) -> Vec<f64> {
    let m = (extent / spacing + 1e-9).floor() as i64;
    (-m..=m).map(|i| i as f64 * spacing).collect()
}

/// Build a boundary sample of the requested kind.
pub fn make_boundary(params: &BoundaryParams) -> Result<BoundarySample> {
    let mut s = match params {
        BoundaryParams::Plane { n, extent, spacing } => {
            check_spacing(*spacing, *extent)?;
            let ts = lattice_1d(*extent, *spacing);
            let a = ts.last().copied().unwrap_or(0.0) + 0.5 * spacing;
            match n {
                2 => {
                    let points: Vec<Point> = ts.iter().map(|&x| Point::new(x, 0.0, 0.0)).collect();
                    let weights = vec![*spacing; points.len()];
                    BoundarySample::assemble(Kind::Plane, 2, 1.0, points, weights, *spacing, 2.0 * a, Some(a), Shape::Hyperplane, Some(FarField::Line { a, factor: 1.0 }))
                }
                3 => {
                    let mut points = Vec::with_capacity(ts.len() * ts.len());
                    for &x in &ts {
                        for &y in &ts {
                            points.push(Point::new(x, y, 0.0));
                        }
                    }
                    let weights = vec![spacing * spacing; points.len()];
                    BoundarySample::assemble(Kind::Plane, 3, 2.0, points, weights, *spacing, 2.0 * 2f64.sqrt() * a, Some(a), Shape::Hyperplane, Some(FarField::Plane2 { a }))
                }
                _ => return Err(Error::Dimension(format!("plane supports n in {{2, 3}}, got {n}"))),
            }
        }
        BoundaryParams::LowDimPlane { extent, spacing } => {
            check_spacing(*spacing, *extent)?;
            let ts = lattice_1d(*extent, *spacing);
            let a = ts.last().copied().unwrap_or(0.0) + 0.5 * spacing;
            let points: Vec<Point> = ts.iter().map(|&x| Point::new(x, 0.0, 0.0)).collect();
            let weights = vec![*spacing; points.len()];
            BoundarySample::assemble(Kind::LowDimPlane, 3, 1.0, points, weights, *spacing, 2.0 * a, Some(a), Shape::Axis, Some(FarField::Line { a, factor: 1.0 }))
        }
        BoundaryParams::LipschitzGraph { slope, frequency, extent, spacing } => {
            check_spacing(*spacing, *extent)?;
            if !(*slope >= 0.0 && slope.is_finite()) {
                return Err(Error::Parameter(format!("Lipschitz constant must be >= 0, got {slope}")));
            }
            if !(*frequency > 0.0 && frequency.is_finite()) {
                return Err(Error::Parameter(format!("frequency must be positive, got {frequency}")));
            }
            let amp = slope / frequency;
            let ts = lattice_1d(*extent, *spacing);
            let a = ts.last().copied().unwrap_or(0.0) + 0.5 * spacing;
            let points: Vec<Point> = ts.iter().map(|&x| Point::new(x, amp * (frequency * x).sin(), 0.0)).collect();
            let weights: Vec<f64> = ts
                .iter()
                .map(|&x| spacing * (1.0 + (slope * (frequency * x).cos()).powi(2)).sqrt())
                .collect();
            // mean arc-length factor over one period
            let m = 512;
            let factor = (0..m)
                .map(|i| (1.0 + (slope * (2.0 * PI * i as f64 / m as f64).cos()).powi(2)).sqrt())
                .sum::<f64>()
                / m as f64;
            let diam = (4.0 * a * a + 4.0 * amp * amp).sqrt();
            BoundarySample::assemble(
                Kind::LipschitzGraph,
                2,
                1.0,
                points,
                weights,
                *spacing,
                diam,
                Some(a),
                Shape::Graph { amplitude: amp, frequency: *frequency },
                Some(FarField::Line { a, factor }),
            )
        }
        BoundaryParams::Circle { radius, count } => {
            if !(*radius > 0.0 && radius.is_finite()) || *count < 3 {
                return Err(Error::Parameter(format!("circle needs radius > 0 and count >= 3, got {radius}, {count}")));
            }
            let w = 2.0 * PI * radius / *count as f64;
            let points: Vec<Point> = (0..*count)
                .map(|i| {
                    let th = 2.0 * PI * i as f64 / *count as f64;
                    Point::new(radius * th.cos(), radius * th.sin(), 0.0)
                })
                .collect();
            let weights = vec![w; *count];
            BoundarySample::assemble(Kind::Circle, 2, 1.0, points, weights, w, 2.0 * radius, None, Shape::Circle { radius: *radius }, None)
        }
        BoundaryParams::FourCornerCantor { generation } => {
            let g = *generation;
            if g < 1 {
                return Err(Error::Parameter("Cantor generation must be >= 1".into()));
            }
            if g > 10 {
                return Err(Error::Parameter(format!("Cantor generation {g} exceeds the supported maximum 10")));
            }
            let mut squares = vec![(0.0f64, 0.0f64)];
            let mut side = 1.0;
            for _ in 0..g {
                let child = side / 4.0;
                let mut next = Vec::with_capacity(squares.len() * 4);
                for &(x, y) in &squares {
                    for (dx, dy) in [(0.0, 0.0), (0.0, 3.0), (3.0, 0.0), (3.0, 3.0)] {
                        next.push((x + dx * child, y + dy * child));
                    }
                }
                squares = next;
                side = child;
            }
            let points: Vec<Point> = squares
                .iter()
                .map(|&(x, y)| Point::new(x + side / 2.0, y + side / 2.0, 0.0))
                .collect();
            let w = 4f64.powi(-(g as i32));
            let weights = vec![w; points.len()];
            let diam = 2f64.sqrt() * (1.0 - side);
            BoundarySample::assemble(Kind::FourCornerCantor, 2, 1.0, points, weights, 3.0 * side, diam, None, Shape::Unknown, None)
        }
        BoundaryParams::Custom { n, d, points, weights } => {
            if !(2..=3).contains(n) {
                return Err(Error::Dimension(format!("ambient dimension {n} not supported (2 or 3)")));
            }
            if !(*d > 0.0 && *d < *n as f64) {
                return Err(Error::Dimension(format!("d must lie in (0, n), got d = {d}, n = {n}")));
            }
            if points.is_empty() || points.len() != weights.len() {
                return Err(Error::Parameter("custom sample needs matching, nonempty points and weights".into()));
            }
            if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
                return Err(Error::Parameter(format!("weights must be positive, found {w}")));
            }
            let mut pts = points.clone();
            for p in pts.iter_mut() {
                for k in *n..3 {
                    p[k] = 0.0;
                }
            }
            let mut order: Vec<usize> = (0..pts.len()).collect();
            order.sort_by(|&a, &b| {
                let (p, q) = (&pts[a], &pts[b]);
                p[0].total_cmp(&q[0]).then(p[1].total_cmp(&q[1])).then(p[2].total_cmp(&q[2]))
            });
            if order.windows(2).any(|w| pts[w[0]] == pts[w[1]]) {
                return Err(Error::Parameter("custom sample contains repeated points".into()));
            }
            let tree = KdTree::new(&pts, weights, *n);
            let spacing = pts
                .iter()
                .enumerate()
                .map(|(i, p)| tree.nearest_excluding(p, i).map_or(f64::INFINITY, |(_, d)| d))
                .fold(0.0f64, f64::max);
            let spacing = if spacing.is_finite() { spacing } else { 0.0 };
            let mut lo = pts[0];
            let mut hi = pts[0];
            for p in &pts {
                lo = lo.inf(p);
                hi = hi.sup(p);
            }
            let diam = (hi - lo).norm();
            BoundarySample::assemble(Kind::Custom, *n, *d, pts, weights.clone(), spacing, diam, None, Shape::Unknown, None)
        }
    };
    let report = verify_ahlfors(&s, 200, 0);
    s.ahlfors = Some(report);
    Ok(s)
}

impl BoundarySample {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        kind: Kind,
        n: usize,
        d: f64,
        points: Vec<Point>,
        weights: Vec<f64>,
        spacing: f64,
        diam: f64,
        window: Option<f64>,
        shape: Shape,
        far: Option<FarField>,
    ) -> BoundarySample {
        let tree = KdTree::new(&points, &weights, n);
        BoundarySample {
            kind,
            n,
            d,
            points,
            weights,
            spacing,
            diam,
            window,
            shape,
            shift: Point::zeros(),
            scale: 1.0,
            far,
            tree,
            ahlfors: None,
        }
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn d(&self) -> f64 {
        self.d
    }
    pub fn points(&self) -> &[Point] {
        &self.points
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }
    /// Nominal sample spacing (nearest-neighbour scale).
    pub fn spacing(&self) -> f64 {
        self.spacing
    }
    pub fn diam(&self) -> f64 {
        self.diam
    }
    pub fn tree(&self) -> &KdTree {
        &self.tree
    }
    pub fn ahlfors(&self) -> Option<&AhlforsReport> {
        self.ahlfors.as_ref()
    }
    /// Recorded empirical Ahlfors constant.
    pub fn c_sigma(&self) -> f64 {
        self.ahlfors.as_ref().map_or(f64::NAN, |a| a.c_sigma)
    }
    /// True for kinds whose sample is a window onto an unbounded set.
    pub fn is_unbounded(&self) -> bool {
        self.window.is_some()
    }

    fn to_ref(&self, x: &Point) -> Point {
        (x - self.shift) / self.scale
    }

    pub fn has_oracle(&self) -> bool {
        matches!(self.shape, Shape::Hyperplane | Shape::Axis | Shape::Circle { .. })
    }

    /// Exact distance to the underlying set, when known.
    pub fn oracle_distance(&self, x: &Point) -> Option<f64> {
        let y = self.to_ref(x);
        let d = match self.shape {
            Shape::Hyperplane => y[self.n - 1].abs(),
            Shape::Axis => (y[1] * y[1] + y[2] * y[2]).sqrt(),
            Shape::Circle { radius } => ((y[0] * y[0] + y[1] * y[1]).sqrt() - radius).abs(),
            _ => return None,
        };
        Some(d * self.scale)
    }

    /// Distance from the axis-aligned box [lo, hi] to the boundary: exact with
    /// an oracle, otherwise the minimum over atoms.
    pub fn box_distance(&self, lo: &Point, hi: &Point) -> f64 {
        let (a, b) = (self.to_ref(lo), self.to_ref(hi));
        // distance from 0 to the interval [a_k, b_k]
        let gap = |k: usize| (a[k]).max(-b[k]).max(0.0);
        let d = match self.shape {
            Shape::Hyperplane => gap(self.n - 1),
            Shape::Axis => (gap(1).powi(2) + gap(2).powi(2)).sqrt(),
            Shape::Circle { radius } => {
                let near = (gap(0).powi(2) + gap(1).powi(2)).sqrt();
                let far = (a[0].abs().max(b[0].abs()).powi(2) + a[1].abs().max(b[1].abs()).powi(2)).sqrt();
                if near > radius {
                    near - radius
                } else if far < radius {
                    radius - far
                } else {
                    0.0
                }
            }
            _ => return self.tree.nearest_to_box(lo, hi),
        };
        d * self.scale
    }

    /// Exact nearest point of the underlying set, when known.
    pub fn oracle_projection(&self, x: &Point) -> Option<Point> {
        let mut y = self.to_ref(x);
        match self.shape {
            Shape::Hyperplane => y[self.n - 1] = 0.0,
            Shape::Axis => {
                y[1] = 0.0;
                y[2] = 0.0;
            }
            Shape::Circle { radius } => {
                let r = (y[0] * y[0] + y[1] * y[1]).sqrt();
                if r == 0.0 {
                    y = Point::new(radius, 0.0, 0.0);
                } else {
                    y *= radius / r;
                }
            }
            _ => return None,
        }
        Some(y * self.scale + self.shift)
    }

    /// Signed side indicator for sets that split space in two: positive on the
    /// upper side of a graph or plane and outside a circle.
    pub fn side(&self, x: &Point) -> Option<f64> {
        let y = self.to_ref(x);
        match self.shape {
            Shape::Hyperplane => Some(y[self.n - 1]),
            Shape::Graph { amplitude, frequency } => Some(y[1] - amplitude * (frequency * y[0]).sin()),
            Shape::Circle { radius } => Some((y[0] * y[0] + y[1] * y[1]).sqrt() - radius),
            _ => None,
        }
    }

    /// Distance to the boundary: exact with an oracle, otherwise the minimum
    /// over atoms.
    pub fn dist(&self, x: &Point) -> f64 {
        match self.oracle_distance(x) {
            Some(d) => d,
            None => self.nearest(x).1,
        }
    }

    /// Nearest atom (index, distance).
    pub fn nearest(&self, x: &Point) -> (usize, f64) {
        self.tree.nearest(x).unwrap_or((usize::MAX, f64::INFINITY))
    }

    /// Closest boundary point: oracle projection when available, else nearest atom.
    pub fn closest_point(&self, x: &Point) -> Point {
        self.oracle_projection(x)
            .unwrap_or_else(|| self.points[self.nearest(x).0])
    }

    /// sigma(B(x, r))
    pub fn ball_mass(&self, x: &Point, r: f64) -> f64 {
        self.tree.ball_mass(x, r)
    }

    /// Distance from the in-window part of `x` to the edge of the sampled
    /// window; infinite for bounded kinds.
    pub fn window_margin(&self, x: &Point) -> f64 {
        match self.window {
            None => f64::INFINITY,
            Some(a) => {
                let y = self.to_ref(x);
                let flat = match self.shape {
                    Shape::Hyperplane if self.n == 3 => 2,
                    _ => 1,
                };
                (0..flat).map(|k| a - y[k].abs()).fold(f64::INFINITY, f64::min) * self.scale
            }
        }
    }

    /// Copy moved by the similarity X -> scale * X + shift (oracle and far field follow).
    pub fn transformed(&self, shift: Point, scale: f64) -> BoundarySample {
        assert!(scale > 0.0);
        let points: Vec<Point> = self.points.iter().map(|p| p * scale + shift).collect();
        let weights: Vec<f64> = self.weights.iter().map(|w| w * scale.powf(self.d)).collect();
        let tree = KdTree::new(&points, &weights, self.n);
        let mut out = BoundarySample {
            kind: self.kind,
            n: self.n,
            d: self.d,
            points,
            weights,
            spacing: self.spacing * scale,
            diam: self.diam * scale,
            window: self.window,
            shape: self.shape.clone(),
            shift: self.shift * scale + shift,
            scale: self.scale * scale,
            far: self.far.clone(),
            tree,
            ahlfors: None,
        };
        out.ahlfors = self.ahlfors.clone();
        out
    }

    /// Quadrature atoms representing the part of an unbounded set outside the
    /// sampled window, tuned for kernels decaying like |X - y|^(-d - beta).
    /// Empty for bounded kinds.
    pub fn far_field_atoms(&self, beta: f64) -> Vec<(Point, f64)> {
        let Some(far) = &self.far else {
            return Vec::new();
        };
        // x = a s^(-p) turns the radial tail integrand into a polynomial in s
        let p = (2.0 / beta).clamp(1.0, 8.0);
        let tail = |a: f64, nodes: usize| -> Vec<(f64, f64)> {
            quad::gauss_legendre_on(nodes, 0.0, 1.0)
                .into_iter()
                .map(|(s, w)| (a * s.powf(-p), w * a * p * s.powf(-p - 1.0)))
                .collect()
        };
        let mut atoms = Vec::new();
        match *far {
            FarField::Line { a, factor } => {
                for (x, w) in tail(a, 48) {
                    atoms.push((Point::new(x, 0.0, 0.0), w * factor));
                    atoms.push((Point::new(-x, 0.0, 0.0), w * factor));
                }
            }
            FarField::Plane2 { a } => {
                let r0 = a * 2f64.sqrt();
                let nth = 64;
                for (r, w) in tail(r0, 40) {
                    for k in 0..nth {
                        let th = 2.0 * PI * (k as f64 + 0.5) / nth as f64;
                        atoms.push((Point::new(r * th.cos(), r * th.sin(), 0.0), w * r * 2.0 * PI / nth as f64));
                    }
                }
                // four lenses between the square and the circle of radius r0
                let mut ys = quad::gauss_legendre_on(16, -a, 0.0);
                ys.extend(quad::gauss_legendre_on(16, 0.0, a));
                for &(y, wy) in &ys {
                    let xmax = (r0 * r0 - y * y).sqrt();
                    for (x, wx) in quad::gauss_legendre_on(12, a, xmax) {
                        let w = wx * wy;
                        for (u, v) in [(x, y), (-x, y), (y, x), (y, -x)] {
                            atoms.push((Point::new(u, v, 0.0), w));
                        }
                    }
                }
            }
        }
        atoms
            .into_iter()
            .map(|(p, w)| (p * self.scale + self.shift, w * self.scale.powf(self.d)))
            .collect()
    }

    /// Serialize as `n d count` followed by `x1 .. xn w` rows.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} {} {}", self.n, self.d, self.len()).unwrap();
        for (p, w) in self.points.iter().zip(&self.weights) {
            for k in 0..self.n {
                write!(s, "{:e} ", p[k]).unwrap();
            }
            writeln!(s, "{w:e}").unwrap();
        }
        s
    }

    /// Parse the text format; the result is a `custom` sample.
    pub fn from_text(text: &str) -> Result<BoundarySample> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parameter("empty boundary file".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 3 {
            return Err(Error::Parameter(format!("bad header `{header}`")));
        }
        let parse = |s: &str| -> Result<f64> { s.parse::<f64>().map_err(|_| Error::Parameter(format!("bad number `{s}`"))) };
        let n = h[0].parse::<usize>().map_err(|_| Error::Parameter(format!("bad n `{}`", h[0])))?;
        let d = parse(h[1])?;
        let count = h[2].parse::<usize>().map_err(|_| Error::Parameter(format!("bad count `{}`", h[2])))?;
        let mut points = Vec::with_capacity(count);
        let mut weights = Vec::with_capacity(count);
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != n + 1 {
                return Err(Error::Parameter(format!("row `{line}` should have {} fields", n + 1)));
            }
            let mut p = Point::zeros();
            for k in 0..n {
                p[k] = parse(f[k])?;
            }
            points.push(p);
            weights.push(parse(f[n])?);
        }
        if points.len() != count {
            return Err(Error::Parameter(format!("header announces {count} atoms, found {}", points.len())));
        }
        make_boundary(&BoundaryParams::Custom { n, d, points, weights })
    }
}

/// Which part of the complement of the boundary is the domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Upper side of a graph or plane; exterior of a circle.
    OneSide,
    /// All of R^n minus the boundary.
    Complement,
}

impl Side {
    pub fn parse(s: &str) -> Result<Side> {
        match s {
            "one_side" => Ok(Side::OneSide),
            "complement" => Ok(Side::Complement),
            other => Err(Error::Parameter(format!("unknown side `{other}`"))),
        }
    }
}

/// A computational box together with the domain it cuts out.
#[derive(Clone, Debug)]
pub struct DomainBox {
    pub lower: Point,
    pub upper: Point,
    pub boundary: Arc<BoundarySample>,
    pub side: Side,
}

impl DomainBox {
    pub fn new(lower: Point, upper: Point, boundary: Arc<BoundarySample>, side: Side) -> Result<DomainBox> {
        let n = boundary.n();
        for k in 0..n {
            if !(upper[k] > lower[k]) {
                return Err(Error::Parameter(format!("box axis {k} is empty")));
            }
        }
        if boundary.d() < (n - 1) as f64 && side != Side::Complement {
            return Err(Error::Parameter("for d < n-1 the domain must be the complement of the boundary".into()));
        }
        if side == Side::OneSide && boundary.side(&Point::zeros()).is_none() {
            return Err(Error::Parameter(format!("boundary kind `{}` has no one-sided domain", boundary.kind().tag())));
        }
        let mut lower = lower;
        let mut upper = upper;
        for k in n..3 {
            lower[k] = 0.0;
            upper[k] = 0.0;
        }
        let dom = DomainBox { lower, upper, boundary, side };
        // nonempty interior: probe a coarse lattice of the box
        let m = 8;
        let mut found = false;
        'outer: for i in 0..=m {
            for j in 0..=m {
                for l in 0..=(if n == 3 { m } else { 0 }) {
                    let t = Point::new(i as f64 / m as f64, j as f64 / m as f64, l as f64 / m as f64);
                    let x = lower + (upper - lower).component_mul(&t);
                    if dom.contains(&x) && dom.delta(&x) > 0.0 {
                        found = true;
                        break 'outer;
                    }
                }
            }
        }
        if !found {
            return Err(Error::Parameter("box does not meet the domain".into()));
        }
        Ok(dom)
    }

    pub fn n(&self) -> usize {
        self.boundary.n()
    }

    /// Distance to the boundary.
    pub fn delta(&self, x: &Point) -> f64 {
        self.boundary.dist(x)
    }

    /// Membership in the domain (not restricted to the box).
    pub fn contains(&self, x: &Point) -> bool {
        match self.side {
            Side::Complement => self.delta(x) > 0.0,
            Side::OneSide => self.boundary.side(x).is_some_and(|s| s > 0.0) && self.delta(x) > 0.0,
        }
    }

    pub fn in_box(&self, x: &Point) -> bool {
        (0..self.n()).all(|k| x[k] >= self.lower[k] - 1e-12 && x[k] <= self.upper[k] + 1e-12)
    }
}

/// d_{x,r}(E, F): normalized bilateral sup-distance inside B(x, r). An empty
/// intersection contributes 0 to its sup.
pub fn local_hausdorff(e: &BoundarySample, f: &BoundarySample, x: &Point, r: f64) -> f64 {
    let one_way = |a: &BoundarySample, b: &BoundarySample| {
        let mut sup: f64 = 0.0;
        a.tree().for_each_in_ball(x, r, |_, y, _| sup = sup.max(b.dist(y)));
        sup
    };
    (one_way(e, f) + one_way(f, e)) / r
}

/// Grid search for a corkscrew point of B(x, r): maximizes
/// min(delta(X), r - |X - x|) / r over a lattice of pitch r/64.
pub fn find_corkscrew(domain: &DomainBox, x: &Point, r: f64) -> Result<(Point, f64)> {
    let n = domain.n();
    let m: i64 = 64;
    let step = r / m as f64;
    let side = (2 * m + 1) as usize;
    let rows = if n == 3 { side * side } else { side };
    let best_per_row = Exec::Parallel.map(rows, |row| {
        let (i, j) = ((row % side) as i64 - m, (row / side) as i64 - m);
        let mut best: Option<(f64, Point)> = None;
        for k in -m..=m {
            let off = if n == 3 {
                Point::new(k as f64, i as f64, j as f64)
            } else {
                Point::new(k as f64, i as f64, 0.0)
            } * step;
            let dist = off.norm();
            if dist >= r {
                continue;
            }
            let p = x + off;
            if !domain.contains(&p) {
                continue;
            }
            let score = domain.delta(&p).min(r - dist) / r;
            if better(score, &p, &best) {
                best = Some((score, p));
            }
        }
        best
    });
    let mut best: Option<(f64, Point)> = None;
    for (score, p) in best_per_row.into_iter().flatten() {
        if better(score, &p, &best) {
            best = Some((score, p));
        }
    }
    match best {
        Some((score, p)) if score > 0.0 => Ok((p, score)),
        _ => Err(Error::SearchFailure {
            resolution: step,
            message: format!("no interior point in B({:?}, {r})", &x.as_slice()[..n]),
        }),
    }
}

fn lex_less(a: &Point, b: &Point) -> bool {
    for k in 0..3 {
        if a[k] != b[k] {
            return a[k] < b[k];
        }
    }
    false
}

fn better(score: f64, p: &Point, best: &Option<(f64, Point)>) -> bool {
    match best {
        None => true,
        Some((s, q)) => score > *s || (score == *s && lex_less(p, q)),
    }
}

#[derive(Clone, Debug)]
pub struct HarnackChain {
    pub points: Vec<Point>,
    /// Smallest N' with delta(Z_i) >= 2^(-N') min(delta(X), delta(Y)) for all i.
    pub n_prime: u32,
    /// |X - Y| / min(delta(X), delta(Y))
    pub lambda: f64,
}

impl HarnackChain {
    /// Number of steps N (points minus one).
    pub fn steps(&self) -> usize {
        self.points.len().saturating_sub(1)
    }
}

const CHAIN_CAP: usize = 100_000;

fn greedy_path(domain: &DomainBox, from: Point, to: Point, frac: f64) -> Result<Vec<Point>> {
    let mut path = vec![from];
    let mut z = from;
    for _ in 0..CHAIN_CAP {
        let gap = (to - z).norm();
        let d = domain.delta(&z);
        if d <= 0.0 {
            return Err(Error::Connectivity("chain touched the boundary".into()));
        }
        let step = frac * d;
        if gap <= step {
            if gap > 0.0 {
                path.push(to);
            }
            return Ok(path);
        }
        z += (to - z) * (step / gap);
        if !domain.contains(&z) {
            return Err(Error::Connectivity("greedy step left the domain".into()));
        }
        path.push(z);
    }
    Err(Error::Connectivity(format!("no chain within {CHAIN_CAP} steps")))
}

/// Harnack chain from X to Y with steps |Z_i - Z_{i+1}| <= delta(Z_i)/2.
///
/// Nearby points are joined by greedy straight steps; otherwise both ends climb
/// toward corkscrew points at scale |X - Y| which are then joined across the top.
pub fn harnack_chain(domain: &DomainBox, x: &Point, y: &Point) -> Result<HarnackChain> {
    let dx = domain.delta(x);
    let dy = domain.delta(y);
    if !domain.contains(x) || !domain.contains(y) {
        return Err(Error::Connectivity("endpoints must lie in the domain".into()));
    }
    let m = dx.min(dy);
    let r = (x - y).norm();
    let lambda = r / m;
    let points = if r == 0.0 {
        vec![*x]
    } else if lambda <= 2.0 {
        greedy_path(domain, *x, *y, 0.5)?
    } else {
        let (ax, _) = find_corkscrew(domain, &domain.boundary.closest_point(x), r)?;
        let (ay, _) = find_corkscrew(domain, &domain.boundary.closest_point(y), r)?;
        let mut up = greedy_path(domain, *x, ax, 0.5)?;
        let across = greedy_path(domain, ax, ay, 0.5)?;
        // built from Y upward with shorter steps so the reversed steps stay admissible
        let down = greedy_path(domain, *y, ay, 1.0 / 3.0)?;
        up.extend_from_slice(&across[1..]);
        up.extend(down.into_iter().rev().skip(1));
        up
    };
    for w in points.windows(2) {
        if (w[1] - w[0]).norm() > 0.5 * domain.delta(&w[0]) * (1.0 + 1e-12) {
            return Err(Error::Connectivity("step condition violated".into()));
        }
    }
    let dmin = points.iter().map(|p| domain.delta(p)).fold(f64::INFINITY, f64::min);
    let n_prime = if dmin >= m { 0 } else { (m / dmin).log2().ceil() as u32 };
    Ok(HarnackChain { points, n_prime, lambda })
}

/// Measured corkscrew and Harnack-chain constants.
#[derive(Clone, Debug)]
pub struct UniformityReport {
    pub epsilon: f64,
    /// (C, goodness) for N ~ C ln(1 + Lambda); goodness is the coefficient of determination.
    pub chain_length_fit: (f64, f64),
    pub samples: usize,
}

/// Fit N ~ C ln(1 + Lambda) by least squares through the origin.
pub fn fit_chain_lengths(data: &[(f64, usize)]) -> (f64, f64) {
    let l: Vec<f64> = data.iter().map(|(lam, _)| (1.0 + lam).ln()).collect();
    let nn: Vec<f64> = data.iter().map(|(_, n)| *n as f64).collect();
    let sll: f64 = l.iter().map(|v| v * v).sum();
    if sll == 0.0 {
        return (0.0, 0.0);
    }
    let c = l.iter().zip(&nn).map(|(a, b)| a * b).sum::<f64>() / sll;
    let mean = nn.iter().sum::<f64>() / nn.len() as f64;
    let ss_tot: f64 = nn.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = l.iter().zip(&nn).map(|(a, b)| (b - c * a).powi(2)).sum();
    let good = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (c, good)
}

/// Corkscrew constants over random boundary balls and chain lengths between
/// corkscrew points of random pairs.
pub fn uniformity_report(domain: &DomainBox, radii: &[f64], trials: usize, seed: u64) -> Result<UniformityReport> {
    let b = &domain.boundary;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eps = f64::INFINITY;
    let mut data = Vec::new();
    for t in 0..trials {
        let r = radii[t % radii.len()];
        let i = rng.gen_range(0..b.len());
        let j = rng.gen_range(0..b.len());
        let (_, e) = find_corkscrew(domain, &b.points()[i], r)?;
        eps = eps.min(e);
        let small = r / 8.0;
        let (q, _) = find_corkscrew(domain, &b.points()[j], small)?;
        let (p2, _) = find_corkscrew(domain, &b.points()[i], small)?;
        let chain = harnack_chain(domain, &p2, &q)?;
        data.push((chain.lambda, chain.steps()));
    }
    Ok(UniformityReport {
        epsilon: eps,
        chain_length_fit: fit_chain_lengths(&data),
        samples: trials,
    })
}

/// sigma(B(x, r)) / r^d
pub fn ahlfors_ratio(sample: &BoundarySample, x: &Point, r: f64) -> f64 {
    sample.ball_mass(x, r) / r.powf(sample.d())
}

/// Random (x, r) pairs with x an atom and r log-uniform in
/// [10 spacing, diam/4]; for unbounded kinds x is kept at least r inside the
/// sampled window.
pub fn verify_ahlfors(sample: &BoundarySample, trials: usize, seed: u64) -> AhlforsReport {
    let hi = sample.diam() / 4.0;
    let lo = (10.0 * sample.spacing()).min(hi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio: f64 = 0.0;
    let mut samples = 0;
    for _ in 0..trials.max(1) {
        let r = if hi > lo { (lo.ln() + rng.gen::<f64>() * (hi / lo).ln()).exp() } else { hi };
        let mut center = None;
        for _ in 0..64 {
            let i = rng.gen_range(0..sample.len());
            if sample.window_margin(&sample.points()[i]) >= r {
                center = Some(i);
                break;
            }
        }
        let Some(i) = center else { continue };
        let ratio = ahlfors_ratio(sample, &sample.points()[i], r);
        min_ratio = min_ratio.min(ratio);
        max_ratio = max_ratio.max(ratio);
        samples += 1;
    }
    let c_sigma = max_ratio.max(1.0 / min_ratio);
    AhlforsReport {
        min_ratio,
        max_ratio,
        c_sigma,
        flagged: samples > 0 && !(min_ratio >= 1e-3 && max_ratio <= 1e3),
        samples,
        r_range: (lo, hi),
    }
}
