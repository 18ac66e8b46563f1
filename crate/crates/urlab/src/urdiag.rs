//! Geometric diagnostics: bilateral beta numbers and their packing, the
//! eikonal distance check and the distance Hessian of convex bodies.

use crate::dyadic::{packing_sum, CubeForest};
use crate::elliptic::GridField;
use crate::exec::Exec;
use crate::geometry::BoundarySample;
use crate::smoothdist::principal_frame;
use crate::{Error, Mat, Point, Result};
use std::fmt::Write as _;
use std::sync::Arc;

/// Affine d-plane: a point and an orthonormal frame of tangents and normals.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinePlane {
    pub point: Point,
    pub tangents: Vec<Point>,
    pub normals: Vec<Point>,
}

impl AffinePlane {
    pub fn dist(&self, y: &Point) -> f64 {
        let z = y - self.point;
        self.normals.iter().map(|nu| nu.dot(&z).powi(2)).sum::<f64>().sqrt()
    }

    pub fn project(&self, y: &Point) -> Point {
        let z = y - self.point;
        self.tangents.iter().fold(self.point, |acc, t| acc + t * t.dot(&z))
    }

    /// Rotate tangent i toward normal j by angle a.
    fn rotated(&self, i: usize, j: usize, a: f64) -> AffinePlane {
        let mut p = self.clone();
        let (t, nu) = (self.tangents[i], self.normals[j]);
        p.tangents[i] = t * a.cos() + nu * a.sin();
        p.normals[j] = -t * a.sin() + nu * a.cos();
        p
    }

    fn shifted(&self, j: usize, s: f64) -> AffinePlane {
        let mut p = self.clone();
        p.point += self.normals[j] * s;
        p
    }
}

#[derive(Clone, Debug)]
pub struct BetaValue {
    /// Pattern-search upper bound for the infimum.
    pub value: f64,
    /// Value at the least-squares seed plane.
    pub seed_value: f64,
    pub plane: AffinePlane,
}

/// Lattice of pitch `pitch` on P ∩ B(x, r).
fn plane_lattice(p: &AffinePlane, x: &Point, r: f64, pitch: f64) -> Vec<Point> {
    let h = p.dist(x);
    if h >= r {
        return Vec::new();
    }
    let rho = (r * r - h * h).sqrt();
    let c = p.project(x);
    let m = (rho / pitch).floor() as i64;
    let mut out = Vec::new();
    match p.tangents.len() {
        1 => {
            for a in -m..=m {
                out.push(c + p.tangents[0] * (a as f64 * pitch));
            }
        }
        2 => {
            for a in -m..=m {
                for b in -m..=m {
                    let (u, v) = (a as f64 * pitch, b as f64 * pitch);
                    if u * u + v * v <= rho * rho {
                        out.push(c + p.tangents[0] * u + p.tangents[1] * v);
                    }
                }
            }
        }
        _ => {}
    }
    out
}

/// Normalized bilateral sup-sum for a given plane.
fn bilateral(sample: &BoundarySample, atoms: &[Point], p: &AffinePlane, x: &Point, ell: f64) -> f64 {
    let first = atoms.iter().map(|y| p.dist(y)).fold(0.0, f64::max);
    // lattice points past the sampled window have no boundary to compare with
    let second = plane_lattice(p, x, 2.0 * ell, ell / 32.0)
        .iter()
        .filter(|y| sample.window_margin(y) >= 0.0)
        .map(|y| sample.dist(y))
        .fold(0.0, f64::max);
    (first + second) / ell
}

/// bβ_∞ at center x and scale ell: least-squares seed, then a deterministic
/// pattern search over normal offsets and tangent/normal rotations.
pub fn bbeta_at(sample: &BoundarySample, x: &Point, ell: f64) -> Result<BetaValue> {
    let d = sample.d();
    if d.fract() != 0.0 || d < 1.0 {
        return Err(Error::Fit(format!("beta numbers need integer d, got {d}")));
    }
    let d = d as usize;
    let n = sample.n();
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    sample.tree().for_each_in_ball(x, 2.0 * ell, |_, y, w| {
        atoms.push(*y);
        weights.push(w);
    });
    if atoms.len() < d + 1 {
        return Err(Error::Fit(format!("{} atoms in 2B_Q, need at least {}", atoms.len(), d + 1)));
    }
    let (c, frame) = principal_frame(&atoms, &weights, n);
    let seed = AffinePlane { point: c, tangents: frame[..d].to_vec(), normals: frame[d..].to_vec() };
    let eval = |p: &AffinePlane| bilateral(sample, &atoms, p, x, ell);
    let seed_value = eval(&seed);
    let mut best = (seed.clone(), seed_value);
    let mut shift = ell / 4.0;
    let mut angle = 0.25;
    for _ in 0..200 {
        let mut improved = false;
        let mut moves = Vec::new();
        for j in 0..(n - d) {
            moves.push(best.0.shifted(j, shift));
            moves.push(best.0.shifted(j, -shift));
            for i in 0..d {
                moves.push(best.0.rotated(i, j, angle));
                moves.push(best.0.rotated(i, j, -angle));
            }
        }
        for m in moves {
            let v = eval(&m);
            if v < best.1 {
                best = (m, v);
                improved = true;
            }
        }
        if !improved {
            shift /= 2.0;
            angle /= 2.0;
            if shift < 1e-6 * ell && angle < 1e-6 {
                break;
            }
        }
    }
    Ok(BetaValue { value: best.1, seed_value, plane: best.0 })
}

/// bβ_∞(Q) for a cube of the forest.
pub fn bbeta_inf(sample: &BoundarySample, forest: &CubeForest, q: usize) -> Result<BetaValue> {
    let c = &forest.cubes[q];
    bbeta_at(sample, &c.center, c.ell())
}

#[derive(Clone, Debug)]
pub struct BetaReport {
    pub eps: f64,
    /// (cube id, k, bβ_∞, bad)
    pub cubes: Vec<(usize, i32, f64, bool)>,
    /// (root id, bad-mass packing ratio)
    pub roots: Vec<(usize, f64)>,
    pub max_ratio: f64,
}

impl BetaReport {
    /// `cube_id,k,bbeta,is_bad` rows, then `root,<id>,ratio,<value>` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cube_id,k,bbeta,is_bad\n");
        for (id, k, b, bad) in &self.cubes {
            writeln!(s, "{id},{k},{b:.12e},{}", *bad as u8).unwrap();
        }
        for (id, r) in &self.roots {
            writeln!(s, "root,{id},ratio,{r:.12e}").unwrap();
        }
        s
    }
}

/// bβ_∞ for every cube and the packing ratio of cubes with bβ_∞ > eps under
/// each root.
pub fn bwgl_report(sample: &BoundarySample, forest: &CubeForest, eps: f64, exec: Exec) -> Result<BetaReport> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    let ids: Vec<usize> = (0..forest.cubes.len()).collect();
    let vals = exec.map_slice(&ids, |&q| bbeta_inf(sample, forest, q).map(|b| b.value));
    let mut cubes = Vec::with_capacity(ids.len());
    let mut bad = vec![false; ids.len()];
    for (q, v) in vals.into_iter().enumerate() {
        let v = v?;
        bad[q] = v > eps;
        cubes.push((q, forest.cubes[q].k, v, bad[q]));
    }
    let roots: Vec<(usize, f64)> = forest
        .roots()
        .iter()
        .map(|&r| (r, packing_sum(forest, |c| bad[c.id], r, Exec::Sequential)))
        .collect();
    let max_ratio = roots.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(BetaReport { eps, cubes, roots, max_ratio })
}

#[derive(Clone, Debug)]
pub struct EikonalReport {
    pub is_const_grad: bool,
    /// Mean |grad G| over tested nodes.
    pub c: f64,
    /// (max - min) / mean of |grad G|.
    pub oscillation: f64,
    /// max |G - c dist(., zero set)| relative to max G.
    pub max_deviation: f64,
    pub tested: usize,
}

/// Does G have constant gradient norm, and if so is G = c dist(., {G = 0})?
pub fn eikonal_distance_check(g: &GridField, tol: f64, exec: Exec) -> Result<EikonalReport> {
    let grid = &*g.grid;
    let n = grid.n();
    let gmax = (0..grid.len()).filter(|&i| g.defined[i]).map(|i| g.scalar(i).abs()).fold(0.0, f64::max);
    if (0..grid.len()).any(|i| g.defined[i] && g.scalar(i) < -1e-12 * gmax.max(1.0)) {
        return Err(Error::Parameter("G must be nonnegative".into()));
    }
    let zero_tol = 1e-12 * gmax.max(1e-300);
    let zeros: Vec<Point> = (0..grid.len())
        .filter(|&i| g.defined[i] && g.scalar(i) <= zero_tol)
        .map(|i| grid.node(i))
        .collect();
    if zeros.is_empty() {
        return Err(Error::Domain("zero set of G is empty on the grid".into()));
    }
    let dists: Vec<f64> = exec.map(grid.len(), |i| {
        let x = grid.node(i);
        zeros.iter().map(|z| (x - z).norm_squared()).fold(f64::INFINITY, f64::min).sqrt()
    });
    // centered gradients at least 4h from the zero set, where the whole
    // stencil is defined and positive; closer in, corners of the zero set
    // spoil the difference quotient
    let grads: Vec<Option<f64>> = exec.map(grid.len(), |i| {
        if !g.defined[i] || g.scalar(i) <= zero_tol || dists[i] < 4.0 * grid.h {
            return None;
        }
        let mut v = Point::zeros();
        for k in 0..n {
            let mut o = [0i64; 3];
            o[k] = 1;
            let p = grid.offset(i, o)?;
            o[k] = -1;
            let m = grid.offset(i, o)?;
            if !g.defined[p] || !g.defined[m] || g.scalar(p) <= zero_tol || g.scalar(m) <= zero_tol {
                return None;
            }
            v[k] = (g.scalar(p) - g.scalar(m)) / (2.0 * grid.h);
        }
        Some(v.norm())
    });
    let norms: Vec<f64> = grads.iter().flatten().copied().collect();
    if norms.is_empty() {
        return Err(Error::Domain("no node with a full positive stencil".into()));
    }
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    let lo = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = norms.iter().cloned().fold(0.0, f64::max);
    let oscillation = if mean > 0.0 { (hi - lo) / mean } else { f64::INFINITY };
    let is_const_grad = oscillation < tol;
    let devs: Vec<f64> = exec.map(grid.len(), |i| {
        if !g.defined[i] {
            return 0.0;
        }
        (g.scalar(i) - mean * dists[i]).abs()
    });
    let max_deviation = devs.iter().cloned().fold(0.0, f64::max) / gmax.max(1e-300);
    Ok(EikonalReport { is_const_grad, c: mean, oscillation, max_deviation, tested: norms.len() })
}

type ScalarChart = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorChart = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Convex body E = {x_n <= phi(x')} near the origin, with phi concave,
/// phi(0) = 0, grad phi(0) = 0 and -D^2 phi(0) = diag(lambdas).
#[derive(Clone)]
pub struct ConvexBodySpec {
    pub n: usize,
    pub lambdas: Vec<f64>,
    pub phi: ScalarChart,
    pub grad: VectorChart,
    /// Row-major (n-1)x(n-1) Hessian.
    pub hess: VectorChart,
}

impl std::fmt::Debug for ConvexBodySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ConvexBodySpec {{ n: {}, lambdas: {:?} }}", self.n, self.lambdas)
    }
}

impl ConvexBodySpec {
    /// Half-space x_n <= 0.
    pub fn half_space(n: usize) -> ConvexBodySpec {
        let m = n - 1;
        ConvexBodySpec {
            n,
            lambdas: vec![0.0; m],
            phi: Arc::new(|_| 0.0),
            grad: Arc::new(move |_| vec![0.0; m]),
            hess: Arc::new(move |_| vec![0.0; m * m]),
        }
    }

    /// Ball of the given radius tangent to x_n = 0 at the origin, from below.
    pub fn ball(n: usize, radius: f64) -> ConvexBodySpec {
        let m = n - 1;
        let rr = radius * radius;
        let s = move |x: &[f64]| (rr - x.iter().map(|v| v * v).sum::<f64>()).sqrt();
        ConvexBodySpec {
            n,
            lambdas: vec![1.0 / radius; m],
            phi: Arc::new(move |x| s(x) - radius),
            grad: Arc::new(move |x| {
                let r = s(x);
                x.iter().map(|v| -v / r).collect()
            }),
            hess: Arc::new(move |x| {
                let r = s(x);
                let mut h = vec![0.0; m * m];
                for i in 0..m {
                    for j in 0..m {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        h[i * m + j] = -delta / r - x[i] * x[j] / (r * r * r);
                    }
                }
                h
            }),
        }
    }

    /// Paraboloid x_n = -sum lambda_i x_i^2 / 2.
    pub fn paraboloid(lambdas: Vec<f64>) -> ConvexBodySpec {
        let m = lambdas.len();
        let (l1, l2, l3) = (lambdas.clone(), lambdas.clone(), lambdas.clone());
        ConvexBodySpec {
            n: m + 1,
            lambdas,
            phi: Arc::new(move |x| -0.5 * x.iter().zip(&l1).map(|(v, l)| l * v * v).sum::<f64>()),
            grad: Arc::new(move |x| x.iter().zip(&l2).map(|(v, l)| -l * v).collect()),
            hess: Arc::new(move |_| {
                let mut h = vec![0.0; m * m];
                for i in 0..m {
                    h[i * m + i] = -l3[i];
                }
                h
            }),
        }
    }

    /// Distance from y (outside E) to the graph of phi by damped Newton on
    /// x' -> |y - (x', phi(x'))|^2 / 2, step tolerance 1e-10.
    pub fn distance(&self, y: &[f64]) -> Result<f64> {
        let m = self.n - 1;
        let (yp, yn) = (&y[..m], y[m]);
        let objective = |x: &[f64]| {
            let a: f64 = x.iter().zip(yp).map(|(a, b)| (a - b).powi(2)).sum();
            0.5 * (a + ((self.phi)(x) - yn).powi(2))
        };
        let mut x: Vec<f64> = yp.to_vec();
        for _ in 0..100 {
            let f = (self.phi)(&x);
            let gphi = (self.grad)(&x);
            let hphi = (self.hess)(&x);
            let g: Vec<f64> = (0..m).map(|i| x[i] - yp[i] + (f - yn) * gphi[i]).collect();
            let mut h = nalgebra::DMatrix::<f64>::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    h[(i, j)] = delta + gphi[i] * gphi[j] + (f - yn) * hphi[i * m + j];
                }
            }
            let gv = nalgebra::DVector::from_vec(g.clone());
            let step = match h.clone().cholesky() {
                Some(ch) => -ch.solve(&gv),
                None => -gv.clone(),
            };
            let f0 = objective(&x);
            let mut t = 1.0;
            let mut next: Vec<f64>;
            loop {
                next = (0..m).map(|i| x[i] + t * step[i]).collect();
                if next.iter().all(|v| v.is_finite()) && objective(&next).is_finite() && objective(&next) <= f0 {
                    break;
                }
                t /= 2.0;
                if t < 1e-12 {
                    return Err(Error::Projection("line search failed".into()));
                }
            }
            let size = (0..m).map(|i| (next[i] - x[i]).powi(2)).sum::<f64>().sqrt();
            x = next;
            if size <= 1e-10 {
                let mut p = x.clone();
                p.push((self.phi)(&x));
                let d2: f64 = p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
                return Ok(d2.sqrt());
            }
        }
        Err(Error::Projection("Newton projection did not converge in 100 steps".into()))
    }
}

#[derive(Clone, Debug)]
pub struct ConvexHessianReport {
    pub t: f64,
    /// Finite-difference Hessian of the true distance at (0, t).
    pub fd: Mat,
    /// Closed form delta_ij lambda_i / (1 + t lambda_i)^2.
    pub squared_form: Mat,
    /// Direct value delta_ij lambda_i / (1 + t lambda_i).
    pub direct: Mat,
    /// max |fd - squared_form| entrywise.
    pub discrepancy: f64,
    /// -sum a_ij d_ij delta_E from the finite-difference Hessian.
    pub l_delta: f64,
}

/// Distance Hessian at (0, ..., 0, t) by both the closed form and central
/// differences (steps t/100 and t/200, Richardson-combined) of the projected
/// distance.
pub fn convex_distance_hessian(body: &ConvexBodySpec, t: f64, a: &Mat) -> Result<ConvexHessianReport> {
    if !(t > 0.0) {
        return Err(Error::Parameter(format!("t must be positive, got {t}")));
    }
    let n = body.n;
    if !(2..=3).contains(&n) || body.lambdas.len() != n - 1 {
        return Err(Error::Dimension(format!("convex body chart needs n in 2..=3 and n-1 curvatures, got n = {n}")));
    }
    let hess = (body.hess)(&vec![0.0; n - 1]);
    for i in 0..n - 1 {
        if (hess[i * (n - 1) + i] + body.lambdas[i]).abs() > 1e-9 {
            return Err(Error::Parameter("chart Hessian at the origin does not match the curvatures".into()));
        }
    }
    let x0: Vec<f64> = (0..n).map(|k| if k == n - 1 { t } else { 0.0 }).collect();
    let dist = |off: &[(usize, f64)]| -> Result<f64> {
        let mut y = x0.clone();
        for &(k, s) in off {
            y[k] += s;
        }
        body.distance(&y)
    };
    let fd_at = |s: f64| -> Result<Mat> {
        let mut m = Mat::zeros();
        let c = dist(&[])?;
        for i in 0..n {
            let p = dist(&[(i, s)])?;
            let q = dist(&[(i, -s)])?;
            m[(i, i)] = (p - 2.0 * c + q) / (s * s);
            for j in (i + 1)..n {
                let v = (dist(&[(i, s), (j, s)])? - dist(&[(i, s), (j, -s)])? - dist(&[(i, -s), (j, s)])?
                    + dist(&[(i, -s), (j, -s)])?)
                    / (4.0 * s * s);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(m)
    };
    let coarse = fd_at(t / 100.0)?;
    let fine = fd_at(t / 200.0)?;
    let fd = (fine * 4.0 - coarse) / 3.0;
    let mut squared_form = Mat::zeros();
    let mut direct = Mat::zeros();
    for (i, &l) in body.lambdas.iter().enumerate() {
        squared_form[(i, i)] = l / (1.0 + t * l).powi(2);
        direct[(i, i)] = l / (1.0 + t * l);
    }
    let mut discrepancy: f64 = 0.0;
    let mut l_delta = 0.0;
    for i in 0..n {
        for j in 0..n {
            discrepancy = discrepancy.max((fd[(i, j)] - squared_form[(i, j)]).abs());
            l_delta -= a[(i, j)] * fd[(i, j)];
        }
    }
    Ok(ConvexHessianReport { t, fd, squared_form, direct, discrepancy, l_delta })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_hessian_and_squared_form() {
        let body = ConvexBodySpec::ball(2, 1.0);
        let a = Mat::from_diagonal(&Point::new(1.0, 2.0, 0.0));
        let r = convex_distance_hessian(&body, 1.0, &a).unwrap();
        assert!((r.fd[(0, 0)] - 0.5).abs() < 1e-4, "{}", r.fd);
        assert!(r.fd[(1, 1)].abs() < 1e-4);
        assert!((r.squared_form[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((r.discrepancy - 0.25).abs() < 1e-4);
        assert!(r.l_delta < 0.0);
    }

    #[test]
    fn half_space_is_flat() {
        let r = convex_distance_hessian(&ConvexBodySpec::half_space(3), 0.7, &Mat::identity()).unwrap();
        assert!(r.fd.norm() < 1e-6);
        assert_eq!(r.squared_form, Mat::zeros());
    }
}
