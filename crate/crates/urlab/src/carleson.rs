//! Carleson-measure functionals r^-d ∬_{B(x,r)∩Ω} f² δ^(d-n) over balls
//! centered at dyadic cube centers, integrand builders and the DKP check.

use crate::dyadic::{CubeForest, WhitneySet};
use crate::elliptic::{jet, log_ratio, Coefficient, Grid, GridField, NodeKind, OperatorSpec, Rank};
use crate::exec::Exec;
use crate::geometry::BoundarySample;
use crate::smoothdist::{dem_from_eval, dem_threshold, SmoothDistanceField};
use crate::{Error, Mat, Point, Result};
use std::fmt::Write as _;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IntegrandKind {
    HessU,
    GradAbsGradU,
    GradSqGradU,
    LogratioGrad,
    LogratioHess,
    DkpCoeff,
    DemG1,
    DemG2,
    DemInd,
    WeightDiv,
}

impl IntegrandKind {
    pub const ALL: [IntegrandKind; 10] = [
        IntegrandKind::HessU,
        IntegrandKind::GradAbsGradU,
        IntegrandKind::GradSqGradU,
        IntegrandKind::LogratioGrad,
        IntegrandKind::LogratioHess,
        IntegrandKind::DkpCoeff,
        IntegrandKind::DemG1,
        IntegrandKind::DemG2,
        IntegrandKind::DemInd,
        IntegrandKind::WeightDiv,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            IntegrandKind::HessU => "hess_u",
            IntegrandKind::GradAbsGradU => "grad_abs_grad_u",
            IntegrandKind::GradSqGradU => "grad_sq_grad_u",
            IntegrandKind::LogratioGrad => "logratio_grad",
            IntegrandKind::LogratioHess => "logratio_hess",
            IntegrandKind::DkpCoeff => "dkp_coeff",
            IntegrandKind::DemG1 => "dem_g1",
            IntegrandKind::DemG2 => "dem_g2",
            IntegrandKind::DemInd => "dem_ind",
            IntegrandKind::WeightDiv => "weight_div",
        }
    }

    pub fn parse(s: &str) -> Result<IntegrandKind> {
        Self::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| Error::Validation(format!("unknown integrand tag `{s}`")))
    }

    /// Whether the integrand is built from a solution u.
    pub fn needs_solution(self) -> bool {
        matches!(
            self,
            IntegrandKind::HessU
                | IntegrandKind::GradAbsGradU
                | IntegrandKind::GradSqGradU
                | IntegrandKind::LogratioGrad
                | IntegrandKind::LogratioHess
        )
    }
}

/// Built integrand f >= 0 with any regime warnings.
#[derive(Clone, Debug)]
pub struct Integrand {
    pub kind: IntegrandKind,
    pub field: GridField,
    pub warnings: Vec<String>,
}

/// Spectral norm of a symmetric matrix.
fn sym_norm(m: &Mat) -> f64 {
    nalgebra::SymmetricEigen::new(*m).eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// |grad A|(x) = sqrt(sum_k |d_k A|^2) by central differences of the
/// coefficient field, spectral norm per partial.
pub fn coefficient_gradient(coeff: &Coefficient, grid: &Grid, x: &Point) -> f64 {
    let n = grid.n();
    let delta = grid.domain.delta(x);
    let s = 1e-5 * delta.max(grid.h);
    let mut acc = 0.0;
    for k in 0..n {
        let mut e = Point::zeros();
        e[k] = s;
        let (xp, xm) = (x + e, x - e);
        let ap = coeff.eval(&xp, grid.domain.delta(&xp), n);
        let am = coeff.eval(&xm, grid.domain.delta(&xm), n);
        let dk = (ap - am) / (2.0 * s);
        acc += sym_norm(&dk).powi(2);
    }
    acc.sqrt()
}

/// Integrand per tag on the lattice. Solution tags need `u` and use its grid
/// and pole mask; all tags are masked where delta < 2h.
pub fn build_integrand(
    kind: IntegrandKind,
    grid: Arc<Grid>,
    u: Option<&GridField>,
    field: &SmoothDistanceField,
    spec: &OperatorSpec,
    exec: Exec,
) -> Result<Integrand> {
    let mut warnings = Vec::new();
    let n = grid.n();
    if field.sample().n() != n {
        return Err(Error::Dimension("smooth distance field and grid differ in dimension".into()));
    }
    if kind.needs_solution() {
        let Some(u) = u else {
            return Err(Error::Parameter(format!("integrand `{}` needs a solution field", kind.tag())));
        };
        if !Arc::ptr_eq(&u.grid, &grid) && u.grid.len() != grid.len() {
            return Err(Error::Dimension("solution lives on a different grid".into()));
        }
        if u.rank != Rank::Scalar {
            return Err(Error::Parameter("solution must be a scalar field".into()));
        }
    }
    if kind == IntegrandKind::HessU && spec.d < (n - 1) as f64 {
        warnings.push(format!(
            "hess_u with d = {} < n - 1: the Hessian form fails for u = |t| in this regime and is reported as a trend",
            spec.d
        ));
    }
    let threshold = dem_threshold(field).unwrap_or(f64::NAN);
    let d = spec.d;
    let g = &*grid;
    let vals: Vec<Option<f64>> = exec.map(g.len(), |i| {
        if g.kind(i) == NodeKind::Exterior || g.delta(i) < 2.0 * g.h {
            return None;
        }
        let x = g.node(i);
        let delta = g.delta(i);
        if kind.needs_solution() {
            let u = u.unwrap();
            let j = jet(u, i)?;
            if !(j.u > 0.0) {
                return None;
            }
            let v = match kind {
                IntegrandKind::HessU => delta * delta * j.hess.norm() / j.u,
                IntegrandKind::GradAbsGradU => {
                    let gn = j.grad.norm();
                    if gn == 0.0 {
                        return None;
                    }
                    delta * delta * (j.hess * j.grad).norm() / gn / j.u
                }
                IntegrandKind::GradSqGradU => delta.powi(3) * (j.hess * j.grad * 2.0).norm() / (j.u * j.u),
                IntegrandKind::LogratioGrad | IntegrandKind::LogratioHess => {
                    let e = field.eval(&x, 2).ok()?;
                    let (lg, lh) = log_ratio(&j, e.d, &e.grad_d, &e.hess_d).ok()?;
                    if kind == IntegrandKind::LogratioGrad {
                        e.d * lg.norm()
                    } else {
                        e.d * e.d * lh.norm()
                    }
                }
                _ => unreachable!(),
            };
            return Some(v);
        }
        match kind {
            IntegrandKind::DkpCoeff => {
                let dval = field.eval(&x, 0).ok()?.d;
                Some(dval * coefficient_gradient(&spec.coeff, g, &x))
            }
            _ => {
                let e = field.eval(&x, 2).ok()?;
                let dem = dem_from_eval(&e, d, n, threshold);
                Some(match kind {
                    IntegrandKind::DemG1 => dem.g1,
                    IntegrandKind::DemG2 => dem.g2,
                    IntegrandKind::DemInd => dem.ind,
                    IntegrandKind::WeightDiv => dem.wdiv,
                    _ => unreachable!(),
                })
            }
        }
    });
    let defined: Vec<bool> = vals.iter().map(|v| v.is_some()).collect();
    let values: Vec<f64> = vals.iter().map(|v| v.unwrap_or(0.0)).collect();
    let pole = if kind.needs_solution() { u.and_then(|u| u.pole) } else { None };
    Ok(Integrand { kind, field: GridField { grid, rank: Rank::Scalar, values, defined, pole }, warnings })
}

/// Which balls are admissible for a field.
#[derive(Clone, Copy, Debug)]
pub struct BallPolicy {
    /// B(x, dilation r) ∩ Ω must stay inside the grid box.
    pub dilation: f64,
    /// Exclude balls whose dilate contains the pole.
    pub avoid_pole: bool,
}

impl BallPolicy {
    /// For fields solved on the box: B(x, 2r) inside the box and off the pole.
    pub fn solved() -> BallPolicy {
        BallPolicy { dilation: 2.0, avoid_pole: true }
    }
    /// For closed-form fields.
    pub fn imposed() -> BallPolicy {
        BallPolicy { dilation: 1.0, avoid_pole: false }
    }
}

#[derive(Clone, Debug)]
pub struct BallValue {
    pub cube: usize,
    pub center: Point,
    pub r: f64,
    /// None when no usable node falls inside the ball.
    pub value: Option<f64>,
    pub cells: usize,
}

#[derive(Clone, Debug)]
pub struct CarlesonReport {
    pub scales: Vec<f64>,
    pub balls: Vec<BallValue>,
    pub sup: f64,
    /// Index into `balls` of the largest value.
    pub argmax: Option<usize>,
    pub h: f64,
    /// Fraction of in-box atoms whose coarsest-scale cube got a ball.
    pub coverage: f64,
    /// Candidate balls rejected by the policy.
    pub skipped: usize,
    /// Slope of sup against log(1/h), filled by refinement drivers.
    pub trend: Option<f64>,
}

impl CarlesonReport {
    pub fn absent(&self) -> usize {
        self.balls.iter().filter(|b| b.value.is_none()).count()
    }

    /// Largest value among balls of radius r.
    pub fn sup_at(&self, r: f64) -> Option<f64> {
        self.balls
            .iter()
            .filter(|b| (b.r - r).abs() <= 1e-12 * r)
            .filter_map(|b| b.value)
            .fold(None, |a, v| Some(a.map_or(v, |a: f64| a.max(v))))
    }

    /// CSV rows `x.., r, value, cells_used`; absent balls have an empty value.
    pub fn to_csv(&self, n: usize) -> String {
        let mut s = String::new();
        let axes = ["x", "y", "z"];
        for a in axes.iter().take(n) {
            write!(s, "{a},").unwrap();
        }
        writeln!(s, "r,value,cells_used").unwrap();
        for b in &self.balls {
            for k in 0..n {
                write!(s, "{:.12e},", b.center[k]).unwrap();
            }
            match b.value {
                Some(v) => writeln!(s, "{:.12e},{:.12e},{}", b.r, v, b.cells).unwrap(),
                None => writeln!(s, "{:.12e},,{}", b.r, b.cells).unwrap(),
            }
        }
        s
    }

    pub fn summary(&self) -> serde_json::Value {
        let arg = self.argmax.map(|i| {
            let b = &self.balls[i];
            serde_json::json!({ "center": [b.center[0], b.center[1], b.center[2]], "r": b.r })
        });
        serde_json::json!({
            "sup": self.sup,
            "argmax": arg,
            "h": self.h,
            "scales": self.scales,
            "balls": self.balls.len(),
            "absent": self.absent(),
            "skipped": self.skipped,
            "coverage": self.coverage,
            "trend_slope": self.trend,
        })
    }
}

fn index_range(g: &Grid, k: usize, lo: f64, hi: f64) -> (usize, usize) {
    let a = ((lo - g.domain.lower[k]) / g.h).ceil().max(0.0) as usize;
    let b = ((hi - g.domain.lower[k]) / g.h).floor().min((g.dims[k] - 1) as f64);
    if b < 0.0 {
        return (1, 0);
    }
    (a, b as usize)
}

/// Visit lattice nodes inside the closed ball B(x, r).
fn for_nodes_in_ball(g: &Grid, x: &Point, r: f64, mut f: impl FnMut(usize)) {
    let n = g.n();
    let mut ranges = [(0usize, 0usize); 3];
    for k in 0..n {
        ranges[k] = index_range(g, k, x[k] - r, x[k] + r);
        if ranges[k].0 > ranges[k].1 {
            return;
        }
    }
    let r2 = r * r;
    for c in ranges[2].0..=ranges[2].1 {
        for b in ranges[1].0..=ranges[1].1 {
            for a in ranges[0].0..=ranges[0].1 {
                let i = g.index([a, b, c]);
                if (g.node(i) - x).norm_squared() <= r2 {
                    f(i);
                }
            }
        }
    }
}

/// r^-d sum f² δ^(d-n) h^n over usable nodes in B(x, r); None when no node
/// contributes.
pub fn ball_integral(f: &GridField, d: f64, x: &Point, r: f64) -> (Option<f64>, usize) {
    let g = &*f.grid;
    let n = g.n();
    let hn = g.h.powi(n as i32);
    let mut sum = 0.0;
    let mut cells = 0usize;
    for_nodes_in_ball(g, x, r, |i| {
        let delta = g.delta(i);
        if g.kind(i) != NodeKind::Exterior && delta > 0.0 && f.usable(i) {
            let v = f.scalar(i);
            sum += v * v * delta.powf(d - n as f64) * hn;
            cells += 1;
        }
    });
    if cells == 0 {
        (None, 0)
    } else {
        (Some(sum / r.powf(d)), cells)
    }
}

/// True when Ω ∩ B(x, R) does not reach the box faces.
fn inside_box(g: &Grid, x: &Point, big_r: f64) -> bool {
    let n = g.n();
    for k in 0..n {
        for (face, crosses) in [(0usize, x[k] - big_r < g.domain.lower[k]), (g.dims[k] - 1, x[k] + big_r > g.domain.upper[k])] {
            if !crosses {
                continue;
            }
            let mut ranges = [(0usize, 0usize); 3];
            for j in 0..n {
                ranges[j] = if j == k { (face, face) } else { index_range(g, j, x[j] - big_r, x[j] + big_r) };
                if ranges[j].0 > ranges[j].1 {
                    ranges[j] = (1, 0);
                }
            }
            if (0..n).any(|j| ranges[j].0 > ranges[j].1) {
                continue;
            }
            for c in ranges[2].0..=ranges[2].1 {
                for b in ranges[1].0..=ranges[1].1 {
                    for a in ranges[0].0..=ranges[0].1 {
                        let i = g.index([a, b, c]);
                        let inside_omega = g.kind(i) != NodeKind::Exterior && !g.is_band(i);
                        if inside_omega && (g.node(i) - x).norm() < big_r {
                            return false;
                        }
                    }
                }
            }
        }
    }
    true
}

/// Evaluate the Carleson functional on balls B(x_Q, 2^-k) for every cube of
/// every requested generation.
pub fn carleson_norm(
    f: &GridField,
    sample: &BoundarySample,
    forest: &CubeForest,
    ks: &[i32],
    policy: BallPolicy,
    exec: Exec,
) -> Result<CarlesonReport> {
    let g = &*f.grid;
    if f.rank != Rank::Scalar {
        return Err(Error::Parameter("Carleson integrand must be scalar".into()));
    }
    if ks.is_empty() {
        return Err(Error::Parameter("no scales requested".into()));
    }
    let cap = if sample.is_unbounded() { f64::INFINITY } else { sample.diam() / 2.0 };
    let mut scales = Vec::new();
    for &k in ks {
        let r = 2f64.powi(-k);
        if r < 8.0 * g.h * (1.0 - 1e-12) {
            return Err(Error::Parameter(format!("scale {r} below 8h = {}", 8.0 * g.h)));
        }
        if r > cap * (1.0 + 1e-12) {
            return Err(Error::Parameter(format!("scale {r} above diam/2 = {cap}")));
        }
        if k < forest.k_min || k > forest.k_max {
            return Err(Error::Parameter(format!("generation {k} not in the cube forest")));
        }
        scales.push(r);
    }
    if let Some(i) = f.values.iter().zip(&f.defined).position(|(v, &d)| d && *v < 0.0) {
        return Err(Error::Parameter(format!("integrand negative at node {i}")));
    }
    let d = sample.d();
    let mut candidates = Vec::new();
    let mut skipped = 0;
    for &k in ks {
        let r = 2f64.powi(-k);
        for &q in forest.generation(k) {
            let c = forest.cubes[q].center;
            let big_r = policy.dilation * r;
            let pole_ok = !policy.avoid_pole || f.pole.is_none_or(|p| (p - c).norm() >= big_r);
            if g.domain.in_box(&c) && pole_ok && inside_box(g, &c, big_r) {
                candidates.push((q, c, r));
            } else {
                skipped += 1;
            }
        }
    }
    let balls: Vec<BallValue> = exec.map_slice(&candidates, |&(q, c, r)| {
        let (value, cells) = ball_integral(f, d, &c, r);
        BallValue { cube: q, center: c, r, value, cells }
    });
    let mut sup = 0.0;
    let mut argmax = None;
    for (i, b) in balls.iter().enumerate() {
        if let Some(v) = b.value {
            if argmax.is_none() || v > sup {
                sup = v;
                argmax = Some(i);
            }
        }
    }
    // coverage at the coarsest requested scale
    let k0 = *ks.iter().min().unwrap();
    let used: std::collections::HashSet<usize> = balls.iter().filter(|b| b.cube < forest.cubes.len() && forest.cubes[b.cube].k == k0).map(|b| b.cube).collect();
    let mut total = 0usize;
    let mut hit = 0usize;
    for (a, p) in sample.points().iter().enumerate() {
        if !g.domain.in_box(p) {
            continue;
        }
        total += 1;
        if forest.cube_of(a, k0).is_some_and(|q| used.contains(&q)) {
            hit += 1;
        }
    }
    let coverage = if total == 0 { 0.0 } else { hit as f64 / total as f64 };
    Ok(CarlesonReport { scales, balls, sup, argmax, h: g.h, coverage, skipped, trend: None })
}

#[derive(Clone, Debug)]
pub struct Trend {
    /// Every increment exceeds tau times the finer value.
    pub divergent: bool,
    pub increments: Vec<f64>,
    /// Least-squares slope of value against log(1/h).
    pub slope: f64,
}

/// Refinement-trend rule on values V_i at decreasing spacings h_i: divergent
/// iff V_(i+1) - V_i > tau V_(i+1) for every step.
pub fn classify_trend(hs: &[f64], values: &[f64], tau: f64) -> Result<Trend> {
    if hs.len() != values.len() || hs.len() < 2 {
        return Err(Error::Parameter("trend needs at least two matching (h, value) pairs".into()));
    }
    if hs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Validation("h ladder must be strictly decreasing".into()));
    }
    let increments: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let divergent = increments.iter().zip(&values[1..]).all(|(dv, v)| *dv > tau * v);
    let xs: Vec<f64> = hs.iter().map(|h| (1.0 / h).ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = values.iter().sum::<f64>() / values.len() as f64;
    let sxy: f64 = xs.iter().zip(values).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(Trend { divergent, increments, slope: sxy / sxx })
}

#[derive(Clone, Debug)]
pub struct DkpReport {
    /// sup delta |grad A| over nodes with delta >= 2h.
    pub sup_linf: f64,
    pub carleson: CarlesonReport,
}

/// L-infinity bound and Carleson table of f = D |grad A|.
pub fn dkp_check(
    spec: &OperatorSpec,
    grid: Arc<Grid>,
    field: &SmoothDistanceField,
    forest: &CubeForest,
    ks: &[i32],
    exec: Exec,
) -> Result<DkpReport> {
    let g = &*grid;
    let sups: Vec<f64> = exec.map(g.len(), |i| {
        if g.kind(i) == NodeKind::Exterior || g.delta(i) < 2.0 * g.h {
            return 0.0;
        }
        g.delta(i) * coefficient_gradient(&spec.coeff, g, &g.node(i))
    });
    let sup_linf = sups.iter().cloned().fold(0.0, f64::max);
    let f = build_integrand(IntegrandKind::DkpCoeff, grid.clone(), None, field, spec, exec)?;
    let carleson = carleson_norm(&f.field, field.sample(), forest, ks, BallPolicy::imposed(), exec)?;
    Ok(DkpReport { sup_linf, carleson })
}

#[derive(Clone, Debug)]
pub struct CaccioppoliCube {
    pub cube: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug)]
pub struct CaccioppoliReport {
    /// Smallest C with lhs <= C rhs on every tested cube.
    pub c: f64,
    pub cubes: Vec<CaccioppoliCube>,
    /// Eligible-size cubes dropped because W* leaves the usable region.
    pub skipped: usize,
}

/// Whitney-cube comparison of ∬_W |∇² ln(u/D)|² D^(d+4-n) against
/// ∬_{W*} |∇ ln(u/D)|² D^(d+2-n) + |D^(n-d) div(D^(d+1-n) ∇D)|² D^(d-n)
/// + |∇A|² D^(d+2-n), over cubes of side >= min_side.
pub fn caccioppoli_report(
    u: &GridField,
    field: &SmoothDistanceField,
    spec: &OperatorSpec,
    whitney: &WhitneySet,
    min_side: f64,
    exec: Exec,
) -> Result<CaccioppoliReport> {
    let g = &*u.grid;
    let n = g.n();
    let nf = n as f64;
    let d = spec.d;
    let near = 18.0 * min_side;
    let dens: Vec<Option<(f64, f64)>> = exec.map(g.len(), |i| {
        if g.delta(i) < near {
            return None;
        }
        let j = jet(u, i)?;
        let x = g.node(i);
        let e = field.eval(&x, 2).ok()?;
        let (lg, lh) = log_ratio(&j, e.d, &e.grad_d, &e.hess_d).ok()?;
        let gn2 = e.grad_d.norm_squared();
        let div = (d + 1.0 - nf) * e.d.powf(d - nf) * gn2 + e.d.powf(d + 1.0 - nf) * e.hess_d.trace();
        let wdiv = e.d.powf(nf - d) * div;
        let ga = if spec.coeff.is_identity() { 0.0 } else { coefficient_gradient(&spec.coeff, g, &x) };
        let lhs = lh.norm_squared() * e.d.powf(d + 4.0 - nf);
        let rhs = lg.norm_squared() * e.d.powf(d + 2.0 - nf) + wdiv * wdiv * e.d.powf(d - nf) + ga * ga * e.d.powf(d + 2.0 - nf);
        Some((lhs, rhs))
    });
    let hn = g.h.powi(n as i32);
    let eligible: Vec<usize> = (0..whitney.cubes.len()).filter(|&q| whitney.cubes[q].side >= min_side * (1.0 - 1e-12)).collect();
    let per: Vec<Option<CaccioppoliCube>> = exec.map_slice(&eligible, |&q| {
        let w = &whitney.cubes[q];
        let star = w.star_radius(n);
        let hi = w.upper(n);
        let mut ok = true;
        let mut rhs = 0.0;
        let mut nodes = 0usize;
        for_nodes_in_ball(g, &w.center, star, |i| match dens[i] {
            Some((_, r)) if ok => {
                rhs += r * hn;
                nodes += 1;
            }
            _ => ok = false,
        });
        // W* must be fully inside the lattice and the usable region
        for k in 0..n {
            if w.center[k] - star < g.domain.lower[k] || w.center[k] + star > g.domain.upper[k] {
                ok = false;
            }
        }
        if !ok || nodes == 0 {
            return None;
        }
        let mut lhs = 0.0;
        for_nodes_in_ball(g, &w.center, star, |i| {
            let x = g.node(i);
            if (0..n).all(|k| x[k] >= w.corner[k] && x[k] < hi[k]) {
                lhs += dens[i].unwrap().0 * hn;
            }
        });
        Some(CaccioppoliCube { cube: q, lhs, rhs })
    });
    let skipped = per.iter().filter(|c| c.is_none()).count();
    let cubes: Vec<CaccioppoliCube> = per.into_iter().flatten().collect();
    if cubes.is_empty() {
        return Err(Error::Domain("no Whitney cube of the requested size fits the grid".into()));
    }
    let c = cubes
        .iter()
        .map(|c| if c.rhs > 0.0 { c.lhs / c.rhs } else if c.lhs > 0.0 { f64::INFINITY } else { 0.0 })
        .fold(0.0, f64::max);
    Ok(CaccioppoliReport { c, cubes, skipped })
}
