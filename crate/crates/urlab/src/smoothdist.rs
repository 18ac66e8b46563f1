//! The regularized distance D_beta = R_beta^(-1/beta), where
//! R_beta(X) = sum_i w_i |X - y_i|^(-d - beta), with analytic derivatives up
//! to order two, the plane-kernel comparison quantities and the DEM integrands.
//!
//! Kernel sums run over a kd-tree of atoms. A cluster is replaced by its
//! monopole only when it passes the opening-angle test, the probe is at least
//! four cluster radii from the boundary, and a rigorous bound on the dropped
//! quadrupole remainder fits inside the cluster's share of the error budget.
//! The budget is a relative tolerance of a lower bound for R_beta, so the
//! accelerated sum stays within that tolerance of direct summation.

use crate::exec::Exec;
use crate::geometry::BoundarySample;
use crate::kdtree::KdTree;
use crate::quad;
use crate::{Error, Mat, Point, Result};
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

/// c_beta = integral over R^d of (1 + |y|^2)^(-(d + beta)/2) dy for integer d >= 1.
pub fn c_beta(d: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Parameter(format!("beta must be positive, got {beta}")));
    }
    if !(d >= 1.0 && d.fract() == 0.0 && d <= 64.0) {
        return Err(Error::Parameter(format!("c_beta needs an integer d >= 1, got {d}")));
    }
    let k = d as usize;
    // y = tan(theta) reduces the radial integral to sin^(d-1) cos^(beta-1) on [0, pi/2]
    let radial = quad::tanh_sinh(
        |t| t.sin().powi(k as i32 - 1) * t.cos().powf(beta - 1.0),
        0.0,
        PI / 2.0,
        1e-14,
    );
    Ok(sphere_area(k) * radial)
}

/// Surface area of the unit sphere in R^k.
fn sphere_area(k: usize) -> f64 {
    // |S^(k-1)| = 2 pi^(k/2) / Gamma(k/2)
    let gamma_half = |j: usize| -> f64 {
        if j % 2 == 0 {
            (1..j / 2).map(|i| i as f64).product()
        } else {
            let mut g = PI.sqrt();
            let mut x = 0.5;
            while x < j as f64 / 2.0 - 1e-9 {
                g *= x;
                x += 1.0;
            }
            g
        }
    };
    2.0 * PI.powf(k as f64 / 2.0) / gamma_half(k)
}

/// How kernel sums are evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Accel {
    Direct,
    Tree { theta: f64, tol: f64 },
}

impl Default for Accel {
    fn default() -> Self {
        Accel::Tree { theta: 0.5, tol: 1e-7 }
    }
}

/// Values returned by [`SmoothDistanceField::eval`]; entries beyond the
/// requested order are zero.
#[derive(Clone, Copy, Debug)]
pub struct SmoothEval {
    pub delta: f64,
    pub r: f64,
    pub grad_r: Point,
    pub hess_r: Mat,
    pub d: f64,
    pub grad_d: Point,
    pub hess_d: Mat,
}

#[derive(Clone, Debug)]
pub struct SmoothDistanceField {
    beta: f64,
    m: f64,
    sample: Arc<BoundarySample>,
    atoms: KdTree,
    accel: Accel,
    c_beta: Option<f64>,
    companions: Arc<OnceLock<(Box<SmoothDistanceField>, Box<SmoothDistanceField>)>>,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    r: f64,
    g: Point,
    h: Mat,
}

#[inline]
fn neg_pow(r2: f64, m: f64, quarter: Option<i32>) -> f64 {
    match quarter {
        Some(q) => 1.0 / r2.sqrt().sqrt().powi(q),
        None => r2.powf(-0.5 * m),
    }
}

impl SmoothDistanceField {
    pub fn new(sample: Arc<BoundarySample>, beta: f64) -> Result<SmoothDistanceField> {
        Self::with_accel(sample, beta, Accel::default())
    }

    pub fn with_accel(sample: Arc<BoundarySample>, beta: f64, accel: Accel) -> Result<SmoothDistanceField> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Parameter(format!("beta must be positive, got {beta}")));
        }
        if let Accel::Tree { theta, tol } = accel {
            if !(theta > 0.0 && theta < 1.0) || !(tol > 0.0) {
                return Err(Error::Parameter("tree needs 0 < theta < 1 and tol > 0".into()));
            }
        }
        let mut pts = sample.points().to_vec();
        let mut ws = sample.weights().to_vec();
        for (p, w) in sample.far_field_atoms(beta) {
            pts.push(p);
            ws.push(w);
        }
        let atoms = KdTree::new(&pts, &ws, sample.n());
        let d = sample.d();
        let c_beta = c_beta(d, beta).ok();
        Ok(SmoothDistanceField {
            beta,
            m: d + beta,
            sample,
            atoms,
            accel,
            c_beta,
            companions: Arc::new(OnceLock::new()),
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn sample(&self) -> &BoundarySample {
        &self.sample
    }
    pub fn sample_arc(&self) -> &Arc<BoundarySample> {
        &self.sample
    }
    pub fn accel(&self) -> Accel {
        self.accel
    }
    /// c_beta for integer d, otherwise `None`.
    pub fn c_beta(&self) -> Option<f64> {
        self.c_beta
    }
    /// Number of kernel atoms including far-field quadrature atoms.
    pub fn kernel_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// Same sample and acceleration with a different acceleration policy.
    pub fn with_policy(&self, accel: Accel) -> Result<SmoothDistanceField> {
        Self::with_accel(self.sample.clone(), self.beta, accel)
    }

    fn quarter(&self) -> Option<i32> {
        let q = 2.0 * self.m;
        (q.fract() == 0.0 && q <= 64.0).then_some(q as i32)
    }

    #[inline]
    fn add_point(&self, z: Point, w: f64, order: u8, quarter: Option<i32>, acc: &mut Acc) {
        let r2 = z.norm_squared();
        let k = w * neg_pow(r2, self.m, quarter);
        acc.r += k;
        if order >= 1 {
            let inv = 1.0 / r2;
            acc.g -= z * (self.m * k * inv);
            if order >= 2 {
                let a = self.m * (self.m + 2.0) * k * inv * inv;
                let b = self.m * k * inv;
                acc.h += z * z.transpose() * a;
                for i in 0..3 {
                    acc.h[(i, i)] -= b;
                }
            }
        }
    }

    fn kernel_sum(&self, x: &Point, order: u8, delta: f64, r_lb: f64, radius: Option<f64>) -> Acc {
        let quarter = self.quarter();
        let mut acc = Acc::default();
        let tree = &self.atoms;
        if tree.is_empty() {
            return acc;
        }
        let (theta, tol) = match (self.accel, radius) {
            (Accel::Tree { theta, tol }, None) => (theta, tol),
            _ => (0.0, 0.0),
        };
        let total = tree.total_mass();
        let m = self.m;
        let c2 = m * (m + 1.0);
        let c3 = m * (m + 2.0) * (m + 7.0);
        let c4 = m * (m + 2.0) * ((m + 4.0) * (m + 6.0) + 6.0 * (m + 4.0) + 3.0);
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &tree.nodes[ni];
            if let Some(rad) = radius {
                // truncated sum: atoms within `rad` only
                let mut lo2 = 0.0;
                for k in 0..3 {
                    let d = (node.lo[k] - x[k]).max(x[k] - node.hi[k]).max(0.0);
                    lo2 += d * d;
                }
                if lo2 > rad * rad {
                    continue;
                }
            }
            let z = x - node.com;
            let rho = z.norm();
            if theta > 0.0 && node.children.is_some() {
                let s = node.radius;
                if rho * theta > s && delta >= 4.0 * s {
                    let q = rho - s;
                    let share = tol * r_lb * node.mass / total;
                    let half = 0.5 * node.moment2;
                    let mut ok = half * c2 * q.powf(-m - 2.0) <= share;
                    if ok && order >= 1 {
                        ok = half * c3 * q.powf(-m - 3.0) <= share / delta;
                    }
                    if ok && order >= 2 {
                        ok = half * c4 * q.powf(-m - 4.0) <= share / (delta * delta);
                    }
                    if ok {
                        self.add_point(z, node.mass, order, quarter, &mut acc);
                        continue;
                    }
                }
            }
            match node.children {
                Some((a, b)) => {
                    stack.push(b);
                    stack.push(a);
                }
                None => {
                    for k in node.start..node.end {
                        let y = &tree.points[k];
                        if let Some(rad) = radius {
                            if (x - y).norm() > rad {
                                continue;
                            }
                        }
                        self.add_point(x - y, tree.weights[k], order, quarter, &mut acc);
                    }
                }
            }
        }
        let n = self.sample.n();
        for i in n..3 {
            acc.g[i] = 0.0;
            for j in 0..3 {
                acc.h[(i, j)] = 0.0;
                acc.h[(j, i)] = 0.0;
            }
        }
        acc
    }

    /// Evaluate R_beta, D_beta and derivatives up to `order` (0, 1 or 2).
    pub fn eval(&self, x: &Point, order: u8) -> Result<SmoothEval> {
        let s = &self.sample;
        let delta = s.dist(x);
        let (nn, nn_dist) = s.nearest(x);
        if delta <= 2.0 * s.spacing() || nn_dist == 0.0 {
            return Err(Error::Resolution(format!(
                "probe at distance {delta:e} from the boundary is within two spacings ({:e}) of atom {nn}",
                s.spacing()
            )));
        }
        let r_lb = s.weights()[nn] * neg_pow(nn_dist * nn_dist, self.m, None);
        let acc = self.kernel_sum(x, order, delta, r_lb, None);
        Ok(self.finish(delta, acc, order))
    }

    fn finish(&self, delta: f64, acc: Acc, order: u8) -> SmoothEval {
        let ib = 1.0 / self.beta;
        let r = acc.r;
        let d = r.powf(-ib);
        let mut out = SmoothEval {
            delta,
            r,
            grad_r: acc.g,
            hess_r: acc.h,
            d,
            grad_d: Point::zeros(),
            hess_d: Mat::zeros(),
        };
        if order >= 1 {
            let a = -ib * d / r;
            out.grad_d = acc.g * a;
            if order >= 2 {
                let b = ib * (ib + 1.0) * d / (r * r);
                out.hess_d = acc.h * a + acc.g * acc.g.transpose() * b;
            }
        }
        out
    }

    /// Evaluate a batch of probes.
    pub fn eval_batch(&self, xs: &[Point], order: u8, exec: Exec) -> Vec<Result<SmoothEval>> {
        exec.map_slice(xs, |x| self.eval(x, order))
    }

    /// R_beta restricted to atoms within `radius` of X (direct summation).
    pub fn r_truncated(&self, x: &Point, radius: f64) -> f64 {
        self.kernel_sum(x, 0, self.sample.dist(x), 0.0, Some(radius)).r
    }

    /// K' = max over m of (1 - R_trunc(2^m delta)/R) 2^(beta m): the measured
    /// constant of the tail bound.
    pub fn tail_constant(&self, x: &Point, ms: std::ops::RangeInclusive<u32>) -> Result<f64> {
        let full = self.with_policy(Accel::Direct)?.eval(x, 0)?;
        let mut k: f64 = 0.0;
        for m in ms {
            let rad = 2f64.powi(m as i32) * full.delta;
            let part = self.r_truncated(x, rad);
            k = k.max((1.0 - part / full.r) * 2f64.powf(self.beta * m as f64));
        }
        Ok(k)
    }

    /// max over probes of max(D/delta, delta/D), skipping rejected probes.
    pub fn comparability(&self, probes: &[Point]) -> f64 {
        probes
            .iter()
            .filter_map(|x| self.eval(x, 0).ok())
            .map(|e| (e.d / e.delta).max(e.delta / e.d))
            .fold(1.0, f64::max)
    }

    fn companions(&self) -> Result<&(Box<SmoothDistanceField>, Box<SmoothDistanceField>)> {
        if let Some(c) = self.companions.get() {
            return Ok(c);
        }
        let one = Self::with_accel(self.sample.clone(), 1.0, self.accel)?;
        let half = Self::with_accel(self.sample.clone(), 0.5, self.accel)?;
        let _ = self.companions.set((Box::new(one), Box::new(half)));
        Ok(self.companions.get().expect("companions initialised"))
    }
}

/// Measured constants C_0, C_1, C_2 with |D| <= C_0 delta, |grad D| <= C_1 and
/// |hess D| <= C_2 / delta over the accepted probes.
pub fn derivative_constants(evals: &[SmoothEval]) -> [f64; 3] {
    let mut c = [0.0f64; 3];
    for e in evals {
        c[0] = c[0].max(e.d / e.delta);
        c[1] = c[1].max(e.grad_d.norm());
        c[2] = c[2].max(e.delta * e.hess_d.norm());
    }
    c
}

/// Columnar probe output: `X... delta D grad... hess...` (hessian row-major),
/// one row per accepted probe; rejected probes are written as a comment.
pub fn write_probe_batch(n: usize, probes: &[Point], evals: &[Result<SmoothEval>]) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    for (x, e) in probes.iter().zip(evals) {
        match e {
            Ok(e) => {
                let mut row: Vec<f64> = (0..n).map(|i| x[i]).collect();
                row.push(e.delta);
                row.push(e.d);
                row.extend((0..n).map(|i| e.grad_d[i]));
                for i in 0..n {
                    row.extend((0..n).map(|j| e.hess_d[(i, j)]));
                }
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
                writeln!(s, "{}", cells.join(" ")).unwrap();
            }
            Err(err) => writeln!(s, "# rejected: {err}").unwrap(),
        }
    }
    s
}

/// Parse probe points, one whitespace-separated row of `n` coordinates per
/// line; blank lines and `#` comments are skipped.
pub fn read_probe_points(text: &str, n: usize) -> Result<Vec<Point>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Validation(format!("probe line {}: {e}", lineno + 1)))?;
        if vals.len() < n {
            return Err(Error::Dimension(format!("probe line {} has {} coordinates, need {n}", lineno + 1, vals.len())));
        }
        let mut p = Point::zeros();
        for i in 0..n {
            p[i] = vals[i];
        }
        out.push(p);
    }
    Ok(out)
}

/// Affine d-plane with the constant c_X.
#[derive(Clone, Debug)]
pub struct PlaneFit {
    pub point: Point,
    /// Orthonormal basis of the plane directions.
    pub frame: Vec<Point>,
    /// Orthonormal basis of the normal space; for codimension one the normal
    /// points toward the probe.
    pub normals: Vec<Point>,
    pub c_x: f64,
    pub d1: f64,
    pub d_half: f64,
}

impl PlaneFit {
    pub fn dist(&self, y: &Point) -> f64 {
        let z = y - self.point;
        self.normals.iter().map(|nu| nu.dot(&z).powi(2)).sum::<f64>().sqrt()
    }

    /// Normal component of Y - point.
    pub fn normal_part(&self, y: &Point) -> Point {
        let z = y - self.point;
        self.normals.iter().fold(Point::zeros(), |acc, nu| acc + nu * nu.dot(&z))
    }
}

/// Weighted principal directions of atoms: returns (centroid, eigenvectors
/// sorted by decreasing eigenvalue) restricted to the first `n` axes.
pub fn principal_frame(points: &[Point], weights: &[f64], n: usize) -> (Point, Vec<Point>) {
    let total: f64 = weights.iter().sum();
    let c = points.iter().zip(weights).fold(Point::zeros(), |a, (p, w)| a + p * *w) / total;
    let mut cov = Mat::zeros();
    for (p, w) in points.iter().zip(weights) {
        let z = p - c;
        cov += z * z.transpose() * *w;
    }
    let sub = cov.view((0, 0), (n, n)).clone_owned();
    let eig = nalgebra::SymmetricEigen::new(sub);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vecs = order
        .iter()
        .map(|&i| {
            let mut v = Point::zeros();
            for k in 0..n {
                v[k] = eig.eigenvectors[(k, i)];
            }
            // deterministic sign: first nonzero entry positive
            if let Some(k) = (0..n).find(|&k| v[k].abs() > 1e-12) {
                if v[k] < 0.0 {
                    v = -v;
                }
            }
            v
        })
        .collect();
    (c, vecs)
}

fn integer_d(d: f64) -> Result<usize> {
    if d.fract() != 0.0 || d < 1.0 {
        return Err(Error::Fit(format!("plane fits need integer d, got {d}")));
    }
    Ok(d as usize)
}

/// Least-squares d-plane over atoms in B(X, 100 delta(X)) minimizing the
/// kernel-weighted squared angular residual sum w_i |X - y_i|^(-d - beta)
/// (dist(y_i, P) / |X - y_i|)^2, with c_X = (c_1 / c_{1/2}^2) D_1(X) / D_{1/2}(X).
pub fn best_plane(field: &SmoothDistanceField, x: &Point) -> Result<PlaneFit> {
    let s = field.sample();
    let d = integer_d(s.d())?;
    let n = s.n();
    let delta = s.dist(x);
    if !(delta > 0.0) {
        return Err(Error::Fit("probe lies on the boundary".into()));
    }
    let mut pts = Vec::new();
    let mut ws = Vec::new();
    s.tree().for_each_in_ball(x, 100.0 * delta, |_, y, w| {
        pts.push(*y);
        ws.push(w * (x - y).norm().powf(-field.m - 2.0));
    });
    if pts.len() < d + 1 {
        return Err(Error::Fit(format!("{} atoms in range, need {}", pts.len(), d + 1)));
    }
    // tree visiting order is deterministic but keep the sums order-independent of it
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    idx.sort_by(|&a, &b| {
        let (p, q) = (&pts[a], &pts[b]);
        p[0].total_cmp(&q[0]).then(p[1].total_cmp(&q[1])).then(p[2].total_cmp(&q[2]))
    });
    let pts: Vec<Point> = idx.iter().map(|&i| pts[i]).collect();
    let ws: Vec<f64> = idx.iter().map(|&i| ws[i]).collect();
    let (c, vecs) = principal_frame(&pts, &ws, n);
    let frame = vecs[..d].to_vec();
    let mut normals = vecs[d..].to_vec();
    if normals.len() == 1 && normals[0].dot(&(x - c)) < 0.0 {
        normals[0] = -normals[0];
    }
    let (one, half) = field.companions()?;
    let d1 = one.eval(x, 0)?.d;
    let d_half = half.eval(x, 0)?.d;
    let c1 = c_beta(s.d(), 1.0)?;
    let ch = c_beta(s.d(), 0.5)?;
    Ok(PlaneFit {
        point: c,
        frame,
        normals,
        c_x: (c1 / (ch * ch)) * d1 / d_half,
        d1,
        d_half,
    })
}

/// Value, gradient and Hessian of dist(Y, P)^(-beta) at Y = X.
fn plane_kernel(fit: &PlaneFit, x: &Point, beta: f64) -> (f64, Point, Mat) {
    let z = fit.normal_part(x);
    let rho2 = z.norm_squared();
    let f = rho2.powf(-0.5 * beta);
    let g = z * (-beta * f / rho2);
    let mut proj = Mat::zeros();
    for nu in &fit.normals {
        proj += nu * nu.transpose();
    }
    let h = proj * (-beta * f / rho2) + z * z.transpose() * (beta * (beta + 2.0) * f / (rho2 * rho2));
    (f, g, h)
}

/// delta^(beta + |kappa|) |d^kappa R_beta(X) - c_X d^kappa R_{beta,X}(X)| with
/// R_{beta,X} = c_beta dist(., P_X)^(-beta). `kappa` lists the differentiated
/// axes (empty, one or two entries).
pub fn flatness_deficit(field: &SmoothDistanceField, x: &Point, kappa: &[usize], fit: &PlaneFit) -> Result<f64> {
    if kappa.len() > 2 {
        return Err(Error::Parameter("multi-index order must be at most 2".into()));
    }
    let cb = field
        .c_beta()
        .ok_or_else(|| Error::Parameter("flatness deficit needs an integer dimension".into()))?;
    let e = field.eval(x, kappa.len() as u8)?;
    let (f, g, h) = plane_kernel(fit, x, field.beta);
    let (lhs, rhs) = match kappa {
        [] => (e.r, f),
        [i] => (e.grad_r[*i], g[*i]),
        [i, j] => (e.hess_r[(*i, *j)], h[(*i, *j)]),
        _ => unreachable!(),
    };
    Ok(e.delta.powf(field.beta + kappa.len() as f64) * (lhs - fit.c_x * cb * rhs).abs())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DemIntegrands {
    pub g2: f64,
    pub g1: f64,
    pub ind: f64,
    pub wdiv: f64,
}

/// Threshold c = c_beta^(-1/beta) / 2 used by the indicator integrand.
pub fn dem_threshold(field: &SmoothDistanceField) -> Result<f64> {
    let cb = field
        .c_beta()
        .ok_or_else(|| Error::Parameter("threshold needs an integer dimension".into()))?;
    Ok(0.5 * cb.powf(-1.0 / field.beta))
}

/// DEM integrands assembled from an order-2 evaluation.
pub fn dem_from_eval(e: &SmoothEval, d: f64, n: usize, threshold: f64) -> DemIntegrands {
    let hg = e.hess_d * e.grad_d;
    let gn = e.grad_d.norm();
    let nf = n as f64;
    let lap = e.hess_d.trace();
    let div = (d + 1.0 - nf) * e.d.powf(d - nf) * gn * gn + e.d.powf(d + 1.0 - nf) * lap;
    DemIntegrands {
        g2: e.delta * 2.0 * hg.norm(),
        g1: if gn > 0.0 { e.delta * hg.norm() / gn } else { 0.0 },
        ind: if gn < threshold { 1.0 } else { 0.0 },
        wdiv: e.delta.powf(nf - d) * div.abs(),
    }
}

pub fn dem_integrands(field: &SmoothDistanceField, x: &Point) -> Result<DemIntegrands> {
    let e = field.eval(x, 2)?;
    let s = field.sample();
    Ok(dem_from_eval(&e, s.d(), s.n(), dem_threshold(field).unwrap_or(f64::NAN)))
}
