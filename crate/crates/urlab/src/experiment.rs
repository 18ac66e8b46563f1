//! Experiment driver: runs the configured stages and writes a bundle
//! directory of CSV tables, binary fields, an SVG slice and a manifest.
//!
//! Stages run in order; each error is wrapped with the failing stage name.
//! CSV output is byte-reproducible for a fixed config.

use crate::carleson::{build_integrand, carleson_norm, classify_trend, CarlesonReport, IntegrandKind, Trend};
use crate::config::{DataFn, ExperimentConfig, Outer, SolveMode};
use crate::dyadic::build_christ_cubes;
use crate::elliptic::{
    default_band, green_function, solve_boundary_ball, Grid, GridField, NodeKind, OperatorSpec, SolveOptions,
    SolveReport,
};
use crate::geometry::{make_boundary, uniformity_report, BoundaryParams, BoundarySample, DomainBox};
use crate::smoothdist::SmoothDistanceField;
use crate::urdiag::{bwgl_report, BetaReport};
use crate::{Error, Exec, Point, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Which stages to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verb {
    GenBoundary,
    Solve,
    Functional,
    Bwgl,
    Dichotomy,
    Report,
}

impl Verb {
    pub fn tag(self) -> &'static str {
        match self {
            Verb::GenBoundary => "gen-boundary",
            Verb::Solve => "solve",
            Verb::Functional => "functional",
            Verb::Bwgl => "bwgl",
            Verb::Dichotomy => "dichotomy",
            Verb::Report => "report",
        }
    }

    fn solves(self) -> bool {
        !matches!(self, Verb::GenBoundary | Verb::Bwgl)
    }

    fn functionals(self) -> bool {
        matches!(self, Verb::Functional | Verb::Dichotomy | Verb::Report)
    }
}

/// One rung of the spacing ladder.
#[derive(Clone, Debug)]
pub struct Rung {
    pub h: f64,
    pub grid: Arc<Grid>,
    pub u: Option<GridField>,
    pub solve: Option<SolveReport>,
    /// (tag, report) per requested integrand.
    pub functionals: Vec<(IntegrandKind, CarlesonReport)>,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub dir: PathBuf,
    pub sample: Arc<BoundarySample>,
    pub rungs: Vec<Rung>,
    /// (tag, trend) when the ladder has at least two rungs.
    pub trends: Vec<(IntegrandKind, Trend)>,
    pub bwgl: Option<BetaReport>,
    pub manifest: Value,
    /// Files written, relative to `dir`, in write order.
    pub files: Vec<String>,
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Method-of-images Green function of the Laplacian in {x_n > 0}.
pub fn images_green(n: usize, x: &Point, y: &Point) -> f64 {
    let mut ys = *y;
    ys[n - 1] = -ys[n - 1];
    if n == 2 {
        ((x - ys).norm() / (x - y).norm()).ln() / (2.0 * PI)
    } else {
        (1.0 / (x - y).norm() - 1.0 / (x - ys).norm()) / (4.0 * PI)
    }
}

fn data_fn(data: DataFn, n: usize, sample: Arc<BoundarySample>) -> impl Fn(&Point) -> f64 + Sync + Send {
    move |x: &Point| match data {
        DataFn::Height => x[n - 1],
        DataFn::AbsHeight => x[n - 1].abs(),
        DataFn::Radial => (x[1] * x[1] + x[2] * x[2]).sqrt(),
        DataFn::Distance => sample.dist(x),
        DataFn::One => 1.0,
    }
}

fn csv_point(s: &mut String, x: &Point, n: usize) {
    for k in 0..n {
        write!(s, "{:.12e},", x[k]).unwrap();
    }
}

fn boundary_csv(sample: &BoundarySample) -> String {
    let n = sample.n();
    let mut s = String::from(if n == 2 { "x,y,weight\n" } else { "x,y,z,weight\n" });
    for (p, w) in sample.points().iter().zip(sample.weights()) {
        csv_point(&mut s, p, n);
        writeln!(s, "{w:.12e}").unwrap();
    }
    s
}

struct Writer {
    dir: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

/// Solve stage for one spacing.
fn solve_rung(
    cfg: &ExperimentConfig,
    sample: &Arc<BoundarySample>,
    field: &SmoothDistanceField,
    spec: &mut OperatorSpec,
    h: f64,
    exec: Exec,
) -> Result<(Arc<Grid>, Option<GridField>, Option<SolveReport>)> {
    let n = sample.n();
    let domain = DomainBox::new(cfg.lower, cfg.upper, sample.clone(), cfg.side)?;
    let weight = (spec.exponent() != 0.0).then_some(field);
    let opts = SolveOptions { tol: cfg.tol, max_iter: cfg.max_iter, exec };
    match &cfg.mode {
        SolveMode::Green { pole } => {
            let grid = Arc::new(Grid::new(domain, h)?);
            let images = move |x: &Point| images_green(n, x, pole);
            let outer: Option<&(dyn Fn(&Point) -> f64 + Sync)> = match cfg.outer {
                Outer::Zero => None,
                Outer::Images => {
                    let flat = matches!(cfg.boundary, BoundaryParams::Plane { .. });
                    if !flat || !spec.coeff.is_identity() || spec.exponent() != 0.0 {
                        return Err(Error::Validation(
                            "images outer data needs a plane boundary, identity coefficient and d = n - 1".into(),
                        ));
                    }
                    Some(&images)
                }
            };
            let gs = green_function(spec, grid.clone(), weight, pole, outer, &opts)?;
            Ok((grid, Some(gs.field), Some(gs.report)))
        }
        SolveMode::Ball { center, radius } => {
            let data = data_fn(cfg.data, n, sample.clone());
            let (u, report) =
                solve_boundary_ball(spec, domain, h, default_band(n, h), weight, center, *radius, &data, &opts)?;
            Ok((u.grid.clone(), Some(u), Some(report)))
        }
        SolveMode::Imposed => {
            let grid = Arc::new(Grid::new(domain, h)?);
            let u = GridField::from_fn(grid.clone(), data_fn(cfg.data, n, sample.clone()));
            Ok((grid, Some(u), None))
        }
        SolveMode::None => Ok((Arc::new(Grid::new(domain, h)?), None, None)),
    }
}

/// Seeded probe points among interior nodes with delta >= 4h.
fn probes(grid: &Grid, count: usize, seed: u64) -> Vec<Point> {
    let pool: Vec<usize> =
        (0..grid.len()).filter(|&i| grid.kind(i) == NodeKind::Interior && grid.delta(i) >= 4.0 * grid.h).collect();
    if pool.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| grid.node(pool[rng.gen_range(0..pool.len())])).collect()
}

/// Heat map of a scalar field on the slice through the middle of the box
/// (third coordinate fixed in 3-D), at most 128 cells per side.
pub fn svg_slice(u: &GridField) -> String {
    let g = &*u.grid;
    let [nx, ny, nz] = g.dims;
    let kz = nz / 2;
    let stride = nx.max(ny).div_ceil(128).max(1);
    let cell = 4usize;
    let (w, hgt) = (nx.div_ceil(stride) * cell, ny.div_ceil(stride) * cell);
    let vmax = (0..g.len()).filter(|&i| u.defined[i]).map(|i| u.scalar(i).abs()).fold(0.0, f64::max);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{hgt}" viewBox="0 0 {w} {hgt}">"#).unwrap();
    writeln!(s, r#"<rect width="{w}" height="{hgt}" fill="rgb(255,255,255)"/>"#).unwrap();
    for j in (0..ny).step_by(stride) {
        for i in (0..nx).step_by(stride) {
            let idx = g.index([i, j, kz]);
            if !u.defined[idx] {
                continue;
            }
            let v = if vmax > 0.0 { (u.scalar(idx) / vmax).clamp(-1.0, 1.0) } else { 0.0 };
            // blue for negative, red for positive
            let (r, gr, b) = if v >= 0.0 {
                (255, (255.0 * (1.0 - v)) as u8, (255.0 * (1.0 - v)) as u8)
            } else {
                ((255.0 * (1.0 + v)) as u8, (255.0 * (1.0 + v)) as u8, 255)
            };
            let (x, y) = (i / stride * cell, hgt - (j / stride + 1) * cell);
            writeln!(s, r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({r},{gr},{b})"/>"#).unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Run the stages selected by `verb` and write the bundle under
/// `cfg.bundle_dir()`.
pub fn run_experiment(cfg: &ExperimentConfig, verb: Verb, exec: Exec) -> Result<Outcome> {
    let dir = cfg.bundle_dir();
    stage("output", std::fs::create_dir_all(&dir).map_err(Error::from))?;
    let mut out = Writer { dir: dir.clone(), files: Vec::new() };
    stage("output", out.put("config.txt", cfg.canonical().as_bytes()))?;

    let sample = Arc::new(stage("gen-boundary", make_boundary(&cfg.boundary))?);
    stage("gen-boundary", out.put("boundary.csv", boundary_csv(&sample).as_bytes()))?;
    let n = sample.n();
    let d = cfg.d.unwrap_or(sample.d());

    let mut manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "verb": verb.tag(),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "boundary": { "kind": sample.kind().tag(), "n": n, "d": sample.d(), "atoms": sample.len(), "diam": sample.diam() },
        "tolerances": { "solve_tol": cfg.tol, "max_iter": cfg.max_iter, "trend_tau": cfg.tau, "bwgl_eps": cfg.eps },
        "constants": { "c_sigma": sample.c_sigma(), "eps": cfg.eps },
    });

    let mut rungs = Vec::new();
    let mut trends = Vec::new();
    if verb.solves() {
        let field = stage("field", SmoothDistanceField::new(sample.clone(), cfg.beta))?;
        let mut spec = stage("solve", OperatorSpec::new(cfg.beta, d, n, cfg.coefficient.clone()))?;
        let tags: Vec<IntegrandKind> =
            if verb == Verb::Dichotomy { vec![IntegrandKind::GradSqGradU] } else { cfg.tags.clone() };
        if verb.functionals() && tags.iter().any(|k| k.needs_solution()) && cfg.mode == SolveMode::None {
            return Err(Error::Validation("functionals of u need solve.mode other than none".into()).in_stage("functional"));
        }
        let forest = if verb.functionals() && !tags.is_empty() {
            let lo = cfg.ks.iter().copied().min().unwrap_or(0);
            let hi = cfg.ks.iter().copied().max().unwrap_or(0);
            Some(stage("functional", build_christ_cubes(&sample, lo, hi))?)
        } else {
            None
        };
        let mut solve_csv = String::from("h,nodes,iterations,residual,scaled_residual,positivity\n");
        let mut table = String::from("tag,h,sup,balls,absent,skipped,coverage\n");
        for (ri, &h) in cfg.ladder.iter().enumerate() {
            let (grid, u, report) = stage("solve", solve_rung(cfg, &sample, &field, &mut spec, h, exec))?;
            if let Some(r) = &report {
                let pos = r.positivity.map_or("na".to_string(), |p| p.to_string());
                writeln!(solve_csv, "{h:.12e},{},{},{:.6e},{:.6e},{pos}", grid.len(), r.iterations, r.residual, r.scaled_residual)
                    .unwrap();
            }
            if let Some(u) = &u {
                let name = format!("u_h{ri}.bin");
                stage("solve", out.put(&name, &u.to_bytes()))?;
                let side = u.sidecar(&[("config_hash", cfg.hash()), ("binary", name.clone())]);
                stage("solve", out.put(&format!("u_h{ri}.txt"), side.as_bytes()))?;
            }
            let mut functionals = Vec::new();
            if let Some(forest) = &forest {
                for &kind in &tags {
                    let f = stage("functional", build_integrand(kind, grid.clone(), u.as_ref(), &field, &spec, exec))?;
                    let rep = stage("functional", carleson_norm(&f.field, &sample, forest, &cfg.ks, cfg.policy, exec))?;
                    stage("functional", out.put(&format!("carleson_{}_h{ri}.csv", kind.tag()), rep.to_csv(n).as_bytes()))?;
                    writeln!(
                        table,
                        "{},{h:.12e},{:.12e},{},{},{},{:.6}",
                        kind.tag(),
                        rep.sup,
                        rep.balls.len(),
                        rep.absent(),
                        rep.skipped,
                        rep.coverage
                    )
                    .unwrap();
                    functionals.push((kind, rep));
                }
            }
            rungs.push(Rung { h, grid, u, solve: report, functionals });
        }
        if cfg.mode != SolveMode::None && cfg.mode != SolveMode::Imposed {
            stage("solve", out.put("solve.csv", solve_csv.as_bytes()))?;
        }
        if let (Some(first), true) = (rungs.first(), verb == Verb::Report) {
            let pts = probes(&first.grid, 64, cfg.seed);
            if !pts.is_empty() {
                manifest["constants"]["c_beta"] = json!(field.comparability(&pts));
            }
            if sample.is_unbounded() || cfg.side == crate::geometry::Side::OneSide {
                let r = (cfg.upper - cfg.lower).min() / 8.0;
                if let Ok(u) = uniformity_report(&first.grid.domain, &[r], 4, cfg.seed) {
                    manifest["constants"]["a0"] = json!(u.epsilon);
                }
            }
        }
        if forest.is_some() {
            stage("functional", out.put("functional.csv", table.as_bytes()))?;
            let hs: Vec<f64> = rungs.iter().map(|r| r.h).collect();
            if hs.len() >= 2 {
                let mut tcsv = String::from("tag,divergent,slope,increments\n");
                for (j, &kind) in tags.iter().enumerate() {
                    let vals: Vec<f64> = rungs.iter().map(|r| r.functionals[j].1.sup).collect();
                    let t = stage("functional", classify_trend(&hs, &vals, cfg.tau))?;
                    let inc: Vec<String> = t.increments.iter().map(|v| format!("{v:.6e}")).collect();
                    writeln!(tcsv, "{},{},{:.6e},{}", kind.tag(), t.divergent, t.slope, inc.join(";")).unwrap();
                    trends.push((kind, t));
                }
                stage("functional", out.put("trend.csv", tcsv.as_bytes()))?;
            }
        }
        if verb == Verb::Dichotomy {
            let mut s = String::from("h,sup,ratio_to_previous\n");
            let mut prev: Option<f64> = None;
            for r in &rungs {
                let v = r.functionals[0].1.sup;
                let ratio = prev.map_or(String::new(), |p| format!("{:.6}", v / p));
                writeln!(s, "{:.12e},{v:.12e},{ratio}", r.h).unwrap();
                prev = Some(v);
            }
            let verdict = trends.first().map_or("undetermined", |(_, t)| if t.divergent { "increasing" } else { "bounded" });
            writeln!(s, "verdict,{verdict},").unwrap();
            stage("dichotomy", out.put("dichotomy.csv", s.as_bytes()))?;
            manifest["dichotomy"] = json!(verdict);
        }
        manifest["solves"] = Value::Array(
            rungs
                .iter()
                .filter_map(|r| {
                    r.solve.as_ref().map(|s| {
                        json!({ "h": r.h, "iterations": s.iterations, "residual": s.residual,
                                "scaled_residual": s.scaled_residual, "positivity": s.positivity, "solver": s.solver })
                    })
                })
                .collect(),
        );
        manifest["operator"] = json!({
            "beta": cfg.beta, "d": d, "n": n, "coefficient": cfg.coefficient.tag(),
            "lambda": spec.lambda, "big_lambda": spec.big_lambda,
        });
        if verb == Verb::Report && cfg.svg {
            if let Some(r) = rungs.last() {
                let f = r.u.clone().unwrap_or_else(|| {
                    let g = r.grid.clone();
                    GridField::from_fn(g.clone(), |x| g.domain.delta(x))
                });
                stage("output", out.put("slice.svg", svg_slice(&f).as_bytes()))?;
            }
        }
    }

    let mut bwgl = None;
    if matches!(verb, Verb::Bwgl | Verb::Report) {
        let forest = stage("bwgl", build_christ_cubes(&sample, 0, cfg.k_max))?;
        let rep = stage("bwgl", bwgl_report(&sample, &forest, cfg.eps, exec))?;
        stage("bwgl", out.put("bwgl.csv", rep.to_csv().as_bytes()))?;
        manifest["bwgl_max_ratio"] = json!(rep.max_ratio);
        bwgl = Some(rep);
    }

    manifest["files"] = json!(out.files);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Validation(e.to_string()))?;
    stage("output", out.put("manifest.json", text.as_bytes()))?;
    Ok(Outcome { dir, sample, rungs, trends, bwgl, manifest, files: out.files })
}

/// Names of the CSV files in a bundle, sorted.
pub fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    v.sort();
    Ok(v)
}
