//! Experiment configuration: flat `section.key = value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are comma
//! separated; numbers may be written as fractions such as `1/128`.

use crate::carleson::{BallPolicy, IntegrandKind};
use crate::elliptic::Coefficient;
use crate::geometry::{BoundaryParams, Kind, Side};
use crate::{Error, Point, Result};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

const KEYS: &[&str] = &[
    "boundary.kind",
    "boundary.n",
    "boundary.extent",
    "boundary.spacing",
    "boundary.slope",
    "boundary.frequency",
    "boundary.radius",
    "boundary.count",
    "boundary.generation",
    "field.beta",
    "operator.coefficient",
    "operator.d",
    "grid.lower",
    "grid.upper",
    "grid.side",
    "grid.h",
    "solve.mode",
    "solve.pole",
    "solve.center",
    "solve.radius",
    "solve.data",
    "solve.outer",
    "solve.tol",
    "solve.max_iter",
    "functional.tags",
    "functional.ks",
    "functional.policy",
    "functional.tau",
    "bwgl.eps",
    "bwgl.k_max",
    "output.dir",
    "output.svg",
    "seed",
];

/// How the solution u fed to the functionals is obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum SolveMode {
    /// Green function with the given pole.
    Green { pole: Point },
    /// Dirichlet problem on Omega ∩ B(center, 2 radius) with boundary data.
    Ball { center: Point, radius: f64 },
    /// u given in closed form.
    Imposed,
    /// Geometry only; functionals that need u are rejected.
    None,
}

/// Closed-form functions used as imposed solutions or boundary data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFn {
    /// Last coordinate.
    Height,
    /// |last coordinate|.
    AbsHeight,
    /// Distance to the x_1 axis in R^3.
    Radial,
    /// Distance to the boundary sample.
    Distance,
    One,
}

impl DataFn {
    pub fn parse(s: &str) -> Result<DataFn> {
        Ok(match s {
            "t" => DataFn::Height,
            "abs_t" => DataFn::AbsHeight,
            "radial" => DataFn::Radial,
            "dist" => DataFn::Distance,
            "one" => DataFn::One,
            other => return Err(Error::Validation(format!("unknown data function `{other}`"))),
        })
    }
}

/// What to put on the outer box faces of a Green-function solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outer {
    Zero,
    /// Method-of-images Green function of the Laplacian in a half-space.
    Images,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub boundary: BoundaryParams,
    pub beta: f64,
    pub coefficient: Coefficient,
    /// Operator dimension d; defaults to the dimension of the sample.
    pub d: Option<f64>,
    pub lower: Point,
    pub upper: Point,
    pub side: Side,
    /// Strictly decreasing grid spacings.
    pub ladder: Vec<f64>,
    pub mode: SolveMode,
    pub data: DataFn,
    pub outer: Outer,
    pub tol: f64,
    pub max_iter: usize,
    pub tags: Vec<IntegrandKind>,
    pub ks: Vec<i32>,
    pub policy: BallPolicy,
    pub tau: f64,
    pub eps: f64,
    pub k_max: i32,
    pub out_dir: PathBuf,
    pub svg: bool,
    pub seed: u64,
    /// Canonical `key = value` lines, sorted by key.
    canonical: BTreeMap<String, String>,
}

fn invalid(e: Error) -> Error {
    match e {
        Error::Validation(_) => e,
        Error::Parameter(m) => Error::Validation(m),
        other => Error::Validation(other.to_string()),
    }
}

fn number(key: &str, s: &str) -> Result<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => a.trim().parse::<f64>().ok().zip(b.trim().parse::<f64>().ok()).map(|(a, b)| a / b),
        None => s.parse::<f64>().ok(),
    };
    v.filter(|v| v.is_finite())
        .ok_or_else(|| Error::Validation(format!("`{key}`: `{s}` is not a number")))
}

fn list<T>(key: &str, s: &str, f: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    s.split(',').map(str::trim).filter(|v| !v.is_empty()).map(|v| f(key, v)).collect()
}

fn integer(key: &str, s: &str) -> Result<i64> {
    s.trim()
        .parse::<i64>()
        .map_err(|_| Error::Validation(format!("`{key}`: `{s}` is not an integer")))
}

fn point(key: &str, s: &str) -> Result<Point> {
    let v = list(key, s, number)?;
    if !(2..=3).contains(&v.len()) {
        return Err(Error::Validation(format!("`{key}` needs 2 or 3 coordinates, got {}", v.len())));
    }
    Ok(Point::new(v[0], v[1], v.get(2).copied().unwrap_or(0.0)))
}

struct Table {
    map: BTreeMap<String, String>,
}

impl Table {
    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }
    fn num(&self, key: &str, default: f64) -> Result<f64> {
        self.get(key).map_or(Ok(default), |v| number(key, v))
    }
    fn int(&self, key: &str, default: i64) -> Result<i64> {
        self.get(key).map_or(Ok(default), |v| integer(key, v))
    }
    fn req(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Validation(format!("missing key `{key}`")))
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut map = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("line {}: expected `key = value`", no + 1)))?;
            let k = k.trim();
            if k.split('.').count() > 2 {
                return Err(Error::Validation(format!("line {}: `{k}` nests deeper than one section", no + 1)));
            }
            if !KEYS.contains(&k) {
                return Err(Error::Validation(format!("line {}: unknown key `{k}`", no + 1)));
            }
            if map.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Validation(format!("line {}: duplicate key `{k}`", no + 1)));
            }
        }
        Self::from_table(Table { map })
    }

    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn from_table(t: Table) -> Result<ExperimentConfig> {
        let kind = Kind::parse(t.req("boundary.kind")?).map_err(invalid)?;
        let extent = t.num("boundary.extent", 4.0)?;
        let spacing = t.num("boundary.spacing", 1.0 / 256.0)?;
        let boundary = match kind {
            Kind::Plane => BoundaryParams::Plane { n: t.int("boundary.n", 2)? as usize, extent, spacing },
            Kind::LipschitzGraph => BoundaryParams::LipschitzGraph {
                slope: t.num("boundary.slope", 0.3)?,
                frequency: t.num("boundary.frequency", 4.0)?,
                extent,
                spacing,
            },
            Kind::Circle => BoundaryParams::Circle {
                radius: t.num("boundary.radius", 1.0)?,
                count: t.int("boundary.count", 628)?.max(0) as usize,
            },
            Kind::FourCornerCantor => {
                BoundaryParams::FourCornerCantor { generation: t.int("boundary.generation", 5)?.max(0) as u32 }
            }
            Kind::LowDimPlane => BoundaryParams::LowDimPlane { extent, spacing },
            Kind::Custom => return Err(Error::Validation("custom boundaries cannot be built from a config".into())),
        };
        let coefficient = Coefficient::parse(t.get("operator.coefficient").unwrap_or("identity"))
            .map_err(invalid)?;
        let d = t.get("operator.d").map(|v| number("operator.d", v)).transpose()?;
        let lower = point("grid.lower", t.req("grid.lower")?)?;
        let upper = point("grid.upper", t.req("grid.upper")?)?;
        let side = Side::parse(t.get("grid.side").unwrap_or("one_side")).map_err(invalid)?;
        let ladder = list("grid.h", t.req("grid.h")?, number)?;
        if ladder.is_empty() || ladder.iter().any(|&h| h <= 0.0) {
            return Err(Error::Validation("`grid.h` needs positive spacings".into()));
        }
        if ladder.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Validation("`grid.h` ladder must be strictly decreasing".into()));
        }
        let mode = match t.get("solve.mode").unwrap_or("none") {
            "green" => SolveMode::Green { pole: point("solve.pole", t.req("solve.pole")?)? },
            "ball" => SolveMode::Ball {
                center: point("solve.center", t.req("solve.center")?)?,
                radius: number("solve.radius", t.req("solve.radius")?)?,
            },
            "imposed" => SolveMode::Imposed,
            "none" => SolveMode::None,
            other => return Err(Error::Validation(format!("unknown solve mode `{other}`"))),
        };
        let data = DataFn::parse(t.get("solve.data").unwrap_or("t"))?;
        let outer = match t.get("solve.outer").unwrap_or("zero") {
            "zero" => Outer::Zero,
            "images" => Outer::Images,
            other => return Err(Error::Validation(format!("unknown outer data `{other}`"))),
        };
        let tags = list("functional.tags", t.get("functional.tags").unwrap_or(""), |_, v| {
            IntegrandKind::parse(v).map_err(invalid)
        })?;
        if mode == SolveMode::None {
            if let Some(k) = tags.iter().find(|k| k.needs_solution()) {
                return Err(Error::Validation(format!("tag `{}` needs a solution but solve.mode = none", k.tag())));
            }
        }
        let ks = list("functional.ks", t.get("functional.ks").unwrap_or("1"), integer)?
            .into_iter()
            .map(|k| k as i32)
            .collect::<Vec<_>>();
        let policy = match t.get("functional.policy").unwrap_or("imposed") {
            "solved" => BallPolicy::solved(),
            "imposed" => BallPolicy::imposed(),
            other => return Err(Error::Validation(format!("unknown ball policy `{other}`"))),
        };
        let svg = match t.get("output.svg").unwrap_or("true") {
            "true" => true,
            "false" => false,
            other => return Err(Error::Validation(format!("`output.svg`: `{other}` is not a boolean"))),
        };
        let tol = t.num("solve.tol", 1e-9)?;
        let eps = t.num("bwgl.eps", 0.1)?;
        let tau = t.num("functional.tau", 0.01)?;
        if tol <= 0.0 || eps <= 0.0 || tau <= 0.0 {
            return Err(Error::Validation("tolerances must be positive".into()));
        }
        Ok(ExperimentConfig {
            boundary,
            beta: t.num("field.beta", 1.0)?,
            coefficient,
            d,
            lower,
            upper,
            side,
            ladder,
            mode,
            data,
            outer,
            tol,
            max_iter: t.int("solve.max_iter", 50_000)?.max(1) as usize,
            tags,
            ks,
            policy,
            tau,
            eps,
            k_max: t.int("bwgl.k_max", 3)? as i32,
            out_dir: PathBuf::from(t.get("output.dir").unwrap_or("out")),
            svg,
            seed: t.int("seed", 0)?.max(0) as u64,
            canonical: t.map,
        })
    }

    /// Sorted `key = value` lines, excluding the output directory.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.canonical {
            if k != "output.dir" {
                writeln!(s, "{k} = {v}").unwrap();
            }
        }
        s
    }

    /// First 16 hex digits of the SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Replace the spacing ladder (CLI `--h`).
    pub fn set_ladder(&mut self, h: f64) -> Result<()> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Validation(format!("grid spacing must be positive, got {h}")));
        }
        self.ladder = vec![h];
        self.canonical.insert("grid.h".into(), format!("{h}"));
        Ok(())
    }

    pub fn bundle_dir(&self) -> PathBuf {
        self.out_dir.join(self.hash())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "boundary.kind = plane\ngrid.lower = -1, 0\ngrid.upper = 1, 1\ngrid.h = 1/32, 1/64\n";

    #[test]
    fn parses_fractions_and_defaults() {
        let c = ExperimentConfig::parse(BASE).unwrap();
        assert_eq!(c.ladder, vec![1.0 / 32.0, 1.0 / 64.0]);
        assert_eq!(c.mode, SolveMode::None);
        assert_eq!(c.beta, 1.0);
    }

    #[test]
    fn unknown_tag_is_named() {
        let e = ExperimentConfig::parse(&format!("{BASE}solve.mode = imposed\nfunctional.tags = hess_u, bogus\n")).unwrap_err();
        assert!(matches!(&e, Error::Validation(m) if m.contains("bogus")), "{e}");
    }

    #[test]
    fn rejects_bad_ladders_and_keys() {
        assert!(ExperimentConfig::parse("boundary.kind = plane\ngrid.lower = -1,0\ngrid.upper = 1,1\ngrid.h = 1/64, 1/32\n").is_err());
        assert!(ExperimentConfig::parse(&format!("{BASE}grid.extra = 1\n")).is_err());
        assert!(ExperimentConfig::parse(&format!("{BASE}a.b.c = 1\n")).is_err());
    }

    #[test]
    fn hash_ignores_order_and_output_dir() {
        let a = ExperimentConfig::parse(&format!("{BASE}output.dir = x\n")).unwrap();
        let mut lines: Vec<&str> = BASE.lines().collect();
        lines.reverse();
        let b = ExperimentConfig::parse(&(lines.join("\n") + "\noutput.dir = y\n")).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
