//! Lattice discretization of L = -div(D_beta^(d+1-n) A grad), Dirichlet
//! solves, Green functions and derivative fields of lattice solutions.

use crate::exec::Exec;
use crate::geometry::{DomainBox, Side};
use crate::smoothdist::SmoothDistanceField;
use crate::{Error, Mat, Point, Result};
use std::fmt;
use std::fmt::Write as _;
use std::sync::Arc;

/// Covering radius sqrt(n) h / 2 of the lattice.
pub fn default_band(n: usize, h: f64) -> f64 {
    (n as f64).sqrt() * h / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Dirichlet,
    Exterior,
}

impl NodeKind {
    fn code(self) -> u8 {
        match self {
            NodeKind::Interior => 0,
            NodeKind::Dirichlet => 1,
            NodeKind::Exterior => 2,
        }
    }

    fn from_code(c: u8) -> Result<NodeKind> {
        match c {
            0 => Ok(NodeKind::Interior),
            1 => Ok(NodeKind::Dirichlet),
            2 => Ok(NodeKind::Exterior),
            _ => Err(Error::Validation(format!("unknown node kind code {c}"))),
        }
    }
}

/// Lattice over a domain box. Dirichlet nodes are those with
/// delta <= h_bc, those on the outer box faces and, for boundary-ball
/// problems, those outside the solve ball.
#[derive(Clone, Debug)]
pub struct Grid {
    pub domain: DomainBox,
    pub h: f64,
    pub h_bc: f64,
    pub dims: [usize; 3],
    /// Solve region for boundary-ball problems: nodes at or beyond the radius
    /// are Dirichlet.
    pub region: Option<(Point, f64)>,
    n: usize,
    kinds: Vec<NodeKind>,
    delta: Vec<f64>,
}

impl Grid {
    /// Grid with the default band h_bc = sqrt(n) h / 2, the covering radius
    /// of the lattice: every boundary point has a Dirichlet node within it.
    pub fn new(domain: DomainBox, h: f64) -> Result<Grid> {
        let h_bc = default_band(domain.n(), h);
        Self::build(domain, h, h_bc, None)
    }

    pub fn with_band(domain: DomainBox, h: f64, h_bc: f64) -> Result<Grid> {
        Self::build(domain, h, h_bc, None)
    }

    pub fn build(domain: DomainBox, h: f64, h_bc: f64, region: Option<(Point, f64)>) -> Result<Grid> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Parameter(format!("grid spacing must be positive, got {h}")));
        }
        if !(h_bc >= 0.0 && h_bc.is_finite()) {
            return Err(Error::Parameter(format!("Dirichlet band must be >= 0, got {h_bc}")));
        }
        let n = domain.n();
        let mut dims = [1usize; 3];
        for k in 0..n {
            let m = ((domain.upper[k] - domain.lower[k]) / h + 1e-9).floor() as usize + 1;
            if m < 3 {
                return Err(Error::Resolution(format!("grid has {m} nodes along axis {k}; need at least 3")));
            }
            dims[k] = m;
        }
        let total = dims[0] * dims[1] * dims[2];
        let mut grid = Grid { domain, h, h_bc, dims, region, n, kinds: Vec::new(), delta: Vec::new() };
        let g = &grid;
        let pairs: Vec<(NodeKind, f64)> = Exec::default().map(total, |i| {
            let x = g.node(i);
            let delta = g.domain.delta(&x);
            (g.classify(i, &x, delta), delta)
        });
        grid.kinds = pairs.iter().map(|p| p.0).collect();
        grid.delta = pairs.iter().map(|p| p.1).collect();
        Ok(grid)
    }

    fn classify(&self, i: usize, x: &Point, delta: f64) -> NodeKind {
        let ijk = self.ijk(i);
        if self.domain.side == Side::OneSide && self.domain.boundary.side(x).is_some_and(|s| s < 0.0) {
            return NodeKind::Exterior;
        }
        if delta <= self.h_bc {
            return NodeKind::Dirichlet;
        }
        let on_face = (0..self.n).any(|k| ijk[k] == 0 || ijk[k] + 1 == self.dims[k]);
        let outside = self.region.is_some_and(|(c, r)| (x - c).norm() >= r);
        if on_face || outside {
            NodeKind::Dirichlet
        } else {
            NodeKind::Interior
        }
    }

    /// Rebuild from stored node kinds (distances are recomputed).
    pub fn from_parts(domain: DomainBox, h: f64, h_bc: f64, dims: [usize; 3], kinds: Vec<NodeKind>) -> Result<Grid> {
        let total = dims[0] * dims[1] * dims[2];
        if kinds.len() != total {
            return Err(Error::Validation(format!("{} node kinds for {total} nodes", kinds.len())));
        }
        let n = domain.n();
        let mut grid = Grid { domain, h, h_bc, dims, region: None, n, kinds, delta: Vec::new() };
        let g = &grid;
        grid.delta = Exec::default().map(total, |i| g.domain.delta(&g.node(i)));
        Ok(grid)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn len(&self) -> usize {
        self.kinds.len()
    }
    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }
    pub fn kind(&self, i: usize) -> NodeKind {
        self.kinds[i]
    }
    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }
    /// Distance from node i to the boundary.
    pub fn delta(&self, i: usize) -> f64 {
        self.delta[i]
    }
    /// Dirichlet node inside the boundary band (value 0).
    pub fn is_band(&self, i: usize) -> bool {
        self.kinds[i] == NodeKind::Dirichlet && self.delta[i] <= self.h_bc
    }

    pub fn ijk(&self, i: usize) -> [usize; 3] {
        let a = i % self.dims[0];
        let b = (i / self.dims[0]) % self.dims[1];
        let c = i / (self.dims[0] * self.dims[1]);
        [a, b, c]
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.dims[0] * (ijk[1] + self.dims[1] * ijk[2])
    }

    pub fn node(&self, i: usize) -> Point {
        let ijk = self.ijk(i);
        let mut x = self.domain.lower;
        for k in 0..self.n {
            x[k] += ijk[k] as f64 * self.h;
        }
        x
    }

    /// Neighbor at integer offset, if inside the lattice.
    pub fn offset(&self, i: usize, off: [i64; 3]) -> Option<usize> {
        let ijk = self.ijk(i);
        let mut out = [0usize; 3];
        for k in 0..3 {
            let v = ijk[k] as i64 + off[k];
            if v < 0 || v >= self.dims[k] as i64 {
                return None;
            }
            out[k] = v as usize;
        }
        Some(self.index(out))
    }

    /// Nearest lattice node to x.
    pub fn nearest_node(&self, x: &Point) -> usize {
        let mut ijk = [0usize; 3];
        for k in 0..self.n {
            let v = ((x[k] - self.domain.lower[k]) / self.h).round();
            ijk[k] = v.clamp(0.0, (self.dims[k] - 1) as f64) as usize;
        }
        self.index(ijk)
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.kinds.iter().filter(|&&k| k == kind).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rank {
    Scalar,
    Vector,
    Matrix,
}

impl Rank {
    fn components(self, n: usize) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => n,
            Rank::Matrix => n * n,
        }
    }
    fn code(self) -> u8 {
        match self {
            Rank::Scalar => 0,
            Rank::Vector => 1,
            Rank::Matrix => 2,
        }
    }
    fn from_code(c: u8) -> Result<Rank> {
        match c {
            0 => Ok(Rank::Scalar),
            1 => Ok(Rank::Vector),
            2 => Ok(Rank::Matrix),
            _ => Err(Error::Validation(format!("unknown rank code {c}"))),
        }
    }
}

/// Values on lattice nodes with a per-node definedness mask.
#[derive(Clone, Debug)]
pub struct GridField {
    pub grid: Arc<Grid>,
    pub rank: Rank,
    pub values: Vec<f64>,
    pub defined: Vec<bool>,
    /// Pole of a Green function; nodes within 4h are excluded from functionals.
    pub pole: Option<Point>,
}

impl GridField {
    pub fn zeros(grid: Arc<Grid>, rank: Rank) -> GridField {
        let m = rank.components(grid.n()) * grid.len();
        let defined = grid.kinds().iter().map(|&k| k != NodeKind::Exterior).collect();
        GridField { grid, rank, values: vec![0.0; m], defined, pole: None }
    }

    /// Scalar field from a function of position on non-exterior nodes.
    pub fn from_fn<F: Fn(&Point) -> f64 + Sync + Send>(grid: Arc<Grid>, f: F) -> GridField {
        let g = grid.clone();
        let values = Exec::default().map(grid.len(), |i| {
            if g.kind(i) == NodeKind::Exterior {
                0.0
            } else {
                f(&g.node(i))
            }
        });
        let defined = grid.kinds().iter().map(|&k| k != NodeKind::Exterior).collect();
        GridField { grid, rank: Rank::Scalar, values, defined, pole: None }
    }

    pub fn components(&self) -> usize {
        self.rank.components(self.grid.n())
    }

    pub fn scalar(&self, i: usize) -> f64 {
        self.values[i * self.components()]
    }

    pub fn vector(&self, i: usize) -> Point {
        let n = self.grid.n();
        let mut v = Point::zeros();
        for k in 0..n {
            v[k] = self.values[i * n + k];
        }
        v
    }

    pub fn matrix(&self, i: usize) -> Mat {
        let n = self.grid.n();
        let mut m = Mat::zeros();
        for a in 0..n {
            for b in 0..n {
                m[(a, b)] = self.values[i * n * n + a * n + b];
            }
        }
        m
    }

    /// True when node i is defined and farther than 4h from the pole.
    pub fn usable(&self, i: usize) -> bool {
        if !self.defined[i] {
            return false;
        }
        match self.pole {
            Some(y) => (self.grid.node(i) - y).norm() > 4.0 * self.grid.h,
            None => true,
        }
    }

    /// Flat little-endian layout: magic, header, run-length encoded node
    /// kinds, definedness runs, then values in node order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let g = &self.grid;
        let mut out = Vec::new();
        out.extend_from_slice(b"URGF");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(g.n() as u32).to_le_bytes());
        for d in g.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in [g.h, g.h_bc] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for k in 0..3 {
            out.extend_from_slice(&g.domain.lower[k].to_le_bytes());
        }
        for k in 0..3 {
            out.extend_from_slice(&g.domain.upper[k].to_le_bytes());
        }
        out.push(self.rank.code());
        match self.pole {
            Some(p) => {
                out.push(1);
                for k in 0..3 {
                    out.extend_from_slice(&p[k].to_le_bytes());
                }
            }
            None => out.push(0),
        }
        let kinds: Vec<u8> = g.kinds().iter().map(|k| k.code()).collect();
        write_runs(&mut out, &kinds);
        let defined: Vec<u8> = self.defined.iter().map(|&b| b as u8).collect();
        write_runs(&mut out, &defined);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Inverse of [`GridField::to_bytes`]; the domain must be supplied.
    pub fn from_bytes(bytes: &[u8], domain: DomainBox) -> Result<GridField> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != b"URGF" {
            return Err(Error::Validation("not a grid field file".into()));
        }
        let version = r.u32()?;
        if version != 1 {
            return Err(Error::Validation(format!("unsupported grid field version {version}")));
        }
        let n = r.u32()? as usize;
        if n != domain.n() {
            return Err(Error::Dimension(format!("file has n = {n}, domain has n = {}", domain.n())));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = r.u64()? as usize;
        }
        let h = r.f64()?;
        let h_bc = r.f64()?;
        let mut lower = Point::zeros();
        let mut upper = Point::zeros();
        for k in 0..3 {
            lower[k] = r.f64()?;
        }
        for k in 0..3 {
            upper[k] = r.f64()?;
        }
        if (lower - domain.lower).norm() > 1e-12 || (upper - domain.upper).norm() > 1e-12 {
            return Err(Error::Validation("box corners differ from the supplied domain".into()));
        }
        let rank = Rank::from_code(r.u8()?)?;
        let pole = if r.u8()? == 1 { Some(Point::new(r.f64()?, r.f64()?, r.f64()?)) } else { None };
        let total = dims[0] * dims[1] * dims[2];
        let kinds = read_runs(&mut r, total)?
            .into_iter()
            .map(NodeKind::from_code)
            .collect::<Result<Vec<_>>>()?;
        let defined: Vec<bool> = read_runs(&mut r, total)?.into_iter().map(|b| b != 0).collect();
        let m = rank.components(n) * total;
        let mut values = Vec::with_capacity(m);
        for _ in 0..m {
            values.push(r.f64()?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Validation("trailing bytes after grid field".into()));
        }
        let grid = Arc::new(Grid::from_parts(domain, h, h_bc, dims, kinds)?);
        Ok(GridField { grid, rank, values, defined, pole })
    }

    /// Text sidecar: `key = value` lines describing the field plus extras.
    pub fn sidecar(&self, extra: &[(&str, String)]) -> String {
        let g = &self.grid;
        let mut s = String::new();
        writeln!(s, "n = {}", g.n()).unwrap();
        writeln!(s, "dims = {} {} {}", g.dims[0], g.dims[1], g.dims[2]).unwrap();
        writeln!(s, "h = {:e}", g.h).unwrap();
        writeln!(s, "h_bc = {:e}", g.h_bc).unwrap();
        writeln!(s, "boundary = {}", g.domain.boundary.kind().tag()).unwrap();
        writeln!(s, "rank = {:?}", self.rank).unwrap();
        if let Some(p) = self.pole {
            writeln!(s, "pole = {:e} {:e} {:e}", p[0], p[1], p[2]).unwrap();
        }
        for (k, v) in extra {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }
}

fn write_runs(out: &mut Vec<u8>, data: &[u8]) {
    let mut runs: Vec<(u8, u64)> = Vec::new();
    for &b in data {
        match runs.last_mut() {
            Some((v, c)) if *v == b => *c += 1,
            _ => runs.push((b, 1)),
        }
    }
    out.extend_from_slice(&(runs.len() as u64).to_le_bytes());
    for (v, c) in runs {
        out.push(v);
        out.extend_from_slice(&c.to_le_bytes());
    }
}

fn read_runs(r: &mut Reader, total: usize) -> Result<Vec<u8>> {
    let count = r.u64()? as usize;
    let mut out = Vec::with_capacity(total);
    for _ in 0..count {
        let v = r.u8()?;
        let c = r.u64()? as usize;
        if out.len() + c > total {
            return Err(Error::Validation("run lengths exceed node count".into()));
        }
        out.extend(std::iter::repeat_n(v, c));
    }
    if out.len() != total {
        return Err(Error::Validation("run lengths do not cover the grid".into()));
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, k: usize) -> Result<&[u8]> {
        if self.pos + k > self.bytes.len() {
            return Err(Error::Validation("truncated grid field".into()));
        }
        let s = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Coefficient matrix field A(X); scalar profiles use t = delta(X).
#[derive(Clone)]
pub enum Coefficient {
    Identity,
    /// (1 + amplitude sin(ln t)) I
    LogOscillating { amplitude: f64 },
    /// (1 + t / (1 + t)) I
    IntegrableDecay,
    /// Constant diagonal matrix.
    Diagonal([f64; 3]),
    /// Arbitrary field of (X, delta(X)).
    Custom(Arc<dyn Fn(&Point, f64) -> Mat + Send + Sync>),
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Identity => write!(f, "Identity"),
            Coefficient::LogOscillating { amplitude } => write!(f, "LogOscillating({amplitude})"),
            Coefficient::IntegrableDecay => write!(f, "IntegrableDecay"),
            Coefficient::Diagonal(d) => write!(f, "Diagonal({d:?})"),
            Coefficient::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Coefficient {
    /// `identity`, `log_oscillating`, `integrable_decay` or `diagonal:a,b[,c]`.
    pub fn parse(s: &str) -> Result<Coefficient> {
        match s {
            "identity" => Ok(Coefficient::Identity),
            "log_oscillating" => Ok(Coefficient::LogOscillating { amplitude: 0.5 }),
            "integrable_decay" => Ok(Coefficient::IntegrableDecay),
            _ => {
                if let Some(rest) = s.strip_prefix("diagonal:") {
                    let vals: Vec<f64> = rest
                        .split(',')
                        .map(|t| t.trim().parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::Validation(format!("coefficient `{s}`: {e}")))?;
                    if vals.is_empty() || vals.len() > 3 {
                        return Err(Error::Validation(format!("coefficient `{s}` needs 1 to 3 entries")));
                    }
                    let mut d = [1.0; 3];
                    d[..vals.len()].copy_from_slice(&vals);
                    return Ok(Coefficient::Diagonal(d));
                }
                Err(Error::Validation(format!("unknown coefficient `{s}`")))
            }
        }
    }

    pub fn tag(&self) -> String {
        match self {
            Coefficient::Identity => "identity".into(),
            Coefficient::LogOscillating { .. } => "log_oscillating".into(),
            Coefficient::IntegrableDecay => "integrable_decay".into(),
            Coefficient::Diagonal(d) => format!("diagonal:{},{},{}", d[0], d[1], d[2]),
            Coefficient::Custom(_) => "custom".into(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Coefficient::Identity)
    }

    /// A(X) restricted to the first n axes.
    pub fn eval(&self, x: &Point, delta: f64, n: usize) -> Mat {
        let mut m = match self {
            Coefficient::Identity => Mat::identity(),
            Coefficient::LogOscillating { amplitude } => {
                let s = if delta > 0.0 { 1.0 + amplitude * delta.ln().sin() } else { 1.0 };
                Mat::identity() * s
            }
            Coefficient::IntegrableDecay => Mat::identity() * (1.0 + delta / (1.0 + delta)),
            Coefficient::Diagonal(d) => Mat::from_diagonal(&Point::new(d[0], d[1], d[2])),
            Coefficient::Custom(f) => f(x, delta),
        };
        for i in n..3 {
            for j in 0..3 {
                m[(i, j)] = 0.0;
                m[(j, i)] = 0.0;
            }
        }
        m
    }
}

/// Operator L = -div(D_beta^(d+1-n) A grad).
#[derive(Clone, Debug)]
pub struct OperatorSpec {
    pub beta: f64,
    pub d: f64,
    pub n: usize,
    pub coeff: Coefficient,
    /// Ellipticity bounds measured by the last assembly.
    pub lambda: Option<f64>,
    pub big_lambda: Option<f64>,
}

impl OperatorSpec {
    pub fn new(beta: f64, d: f64, n: usize, coeff: Coefficient) -> Result<OperatorSpec> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Parameter(format!("beta must be positive, got {beta}")));
        }
        if !(2..=3).contains(&n) {
            return Err(Error::Dimension(format!("n = {n} not supported")));
        }
        if !(d > 0.0 && d < n as f64) {
            return Err(Error::Parameter(format!("need 0 < d < n, got d = {d}")));
        }
        if d < (n - 1) as f64 && !coeff.is_identity() {
            return Err(Error::Parameter("for d < n-1 only the identity coefficient is admitted".into()));
        }
        Ok(OperatorSpec { beta, d, n, coeff, lambda: None, big_lambda: None })
    }

    /// Exponent d + 1 - n of the weight.
    pub fn exponent(&self) -> f64 {
        self.d + 1.0 - self.n as f64
    }

    /// (lambda, Lambda) over non-exterior nodes; errors on asymmetric or
    /// non-elliptic coefficients.
    pub fn measure(&self, grid: &Grid) -> Result<(f64, f64)> {
        if self.coeff.is_identity() {
            return Ok((1.0, 1.0));
        }
        let n = self.n;
        let per: Vec<Result<(f64, f64)>> = Exec::default().map(grid.len(), |i| {
            if grid.kind(i) == NodeKind::Exterior {
                return Ok((f64::INFINITY, 0.0));
            }
            let a = self.coeff.eval(&grid.node(i), grid.delta(i), n);
            let sub = a.view((0, 0), (n, n)).clone_owned();
            let asym = (&sub - sub.transpose()).norm();
            if asym > 1e-12 * sub.norm().max(1.0) {
                return Err(Error::Parameter(format!("coefficient is not symmetric at node {i}")));
            }
            let eig = nalgebra::SymmetricEigen::new(sub);
            let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
            Ok((lo, hi))
        });
        let mut lam = f64::INFINITY;
        let mut big: f64 = 0.0;
        for p in per {
            let (lo, hi) = p?;
            lam = lam.min(lo);
            big = big.max(hi);
        }
        if !(lam > 0.0) {
            return Err(Error::Ellipticity(format!("smallest coefficient eigenvalue {lam:e} is not positive")));
        }
        Ok((lam, big))
    }
}

/// Compressed sparse rows.
#[derive(Clone, Debug, Default)]
pub struct Csr {
    pub rows: usize,
    pub ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Csr {
        let mut ptr = Vec::with_capacity(rows.len() + 1);
        ptr.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for row in &rows {
            for &(c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            ptr.push(cols.len());
        }
        Csr { rows: rows.len(), ptr, cols, vals }
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64], exec: Exec) {
        exec.fill_chunks(y, 4096, |start, chunk| {
            for (k, out) in chunk.iter_mut().enumerate() {
                let r = start + k;
                let mut s = 0.0;
                for p in self.ptr[r]..self.ptr[r + 1] {
                    s += self.vals[p] * x[self.cols[p]];
                }
                *out = s;
            }
        });
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        (self.ptr[r]..self.ptr[r + 1]).find(|&p| self.cols[p] == c).map_or(0.0, |p| self.vals[p])
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, r)).collect()
    }
}

/// Assembled system on the interior nodes of a grid.
#[derive(Clone, Debug)]
pub struct System {
    pub grid: Arc<Grid>,
    /// Interior-interior block (symmetric).
    pub matrix: Csr,
    /// Couplings from unknowns to Dirichlet/exterior node indices.
    pub coupling: Csr,
    /// Unknown index to node index.
    pub nodes: Vec<usize>,
    /// Node index to unknown index (`usize::MAX` when not an unknown).
    pub unknown: Vec<usize>,
    pub lambda: f64,
    pub big_lambda: f64,
    /// All off-diagonal entries nonpositive.
    pub m_matrix: bool,
    pub exponent: f64,
}

fn harmonic(a: f64, b: f64) -> f64 {
    match (a.is_infinite(), b.is_infinite()) {
        (true, true) => f64::INFINITY,
        (true, false) => 2.0 * b,
        (false, true) => 2.0 * a,
        _ if a + b == 0.0 => 0.0,
        _ => 2.0 * a * b / (a + b),
    }
}

/// Finite-volume assembly with harmonic-mean nodal weights w = D_beta^(d+1-n)
/// and symmetric cross stencils for off-diagonal coefficient entries. Rows
/// are scaled so that a nodal source f contributes f h^n.
pub fn assemble(spec: &mut OperatorSpec, grid: Arc<Grid>, weight: Option<&SmoothDistanceField>, exec: Exec) -> Result<System> {
    let n = grid.n();
    if n != spec.n {
        return Err(Error::Dimension(format!("operator n = {} but grid n = {n}", spec.n)));
    }
    let (lambda, big_lambda) = spec.measure(&grid)?;
    spec.lambda = Some(lambda);
    spec.big_lambda = Some(big_lambda);
    let e = spec.exponent();
    let g = &*grid;
    let w: Vec<f64> = if e == 0.0 {
        vec![1.0; g.len()]
    } else {
        let field = weight.ok_or_else(|| Error::Parameter("weighted operator needs a smooth distance field".into()))?;
        exec.map(g.len(), |i| {
            if g.kind(i) == NodeKind::Exterior {
                return f64::NAN;
            }
            let dval = field.eval(&g.node(i), 0).map(|v| v.d).unwrap_or(0.0);
            dval.powf(e)
        })
    };
    for i in 0..g.len() {
        if g.kind(i) == NodeKind::Interior && !(w[i].is_finite() && w[i] > 0.0) {
            return Err(Error::Resolution(format!("weight not evaluable at interior node {i} (delta = {:e})", g.delta(i))));
        }
    }
    let mut unknown = vec![usize::MAX; g.len()];
    let mut nodes = Vec::new();
    for i in 0..g.len() {
        if g.kind(i) == NodeKind::Interior {
            unknown[i] = nodes.len();
            nodes.push(i);
        }
    }
    let scale = g.h.powi(n as i32 - 2);
    let identity = spec.coeff.is_identity();
    let coeff = &spec.coeff;
    let cross = !identity && !matches!(coeff, Coefficient::Diagonal(_));
    let node_coeff = |i: usize| coeff.eval(&g.node(i), g.delta(i), n);
    let rows: Vec<(Vec<(usize, f64)>, Vec<(usize, f64)>)> = exec.map_slice(&nodes, |&p| {
        let mut diag = 0.0;
        let mut inner: Vec<(usize, f64)> = Vec::new();
        let mut outer: Vec<(usize, f64)> = Vec::new();
        let mut couple = |q: usize, cond: f64, diag: &mut f64| {
            *diag += cond;
            if unknown[q] != usize::MAX {
                inner.push((unknown[q], -cond));
            } else {
                outer.push((q, cond));
            }
        };
        for k in 0..n {
            for s in [-1i64, 1] {
                let mut off = [0i64; 3];
                off[k] = s;
                let q = g.offset(p, off).expect("interior nodes are not on the box faces");
                let wq = if g.kind(q) == NodeKind::Exterior { w[p] } else { w[q] };
                let a = if identity {
                    1.0
                } else {
                    let mid = (g.node(p) + g.node(q)) / 2.0;
                    coeff.eval(&mid, g.domain.delta(&mid), n)[(k, k)]
                };
                let cond = harmonic(w[p], wq) * a * scale;
                couple(q, cond, &mut diag);
            }
        }
        if cross {
            for k in 0..n {
                for l in (k + 1)..n {
                    for sk in [-1i64, 1] {
                        for sl in [-1i64, 1] {
                            let mut ok = [0i64; 3];
                            ok[k] = sk;
                            let mut ol = [0i64; 3];
                            ol[l] = sl;
                            let mut od = ok;
                            od[l] = sl;
                            let (Some(qk), Some(ql), Some(qd)) = (g.offset(p, ok), g.offset(p, ol), g.offset(p, od)) else {
                                continue;
                            };
                            if [qk, ql, qd].iter().any(|&q| g.kind(q) == NodeKind::Exterior) {
                                continue;
                            }
                            let ck = w[qk] * node_coeff(qk)[(k, l)];
                            let cl = w[ql] * node_coeff(ql)[(k, l)];
                            let (ck, cl) = match (ck.is_finite(), cl.is_finite()) {
                                (true, true) => (ck, cl),
                                (true, false) => (ck, ck),
                                (false, true) => (cl, cl),
                                _ => continue,
                            };
                            let cond = (sk * sl) as f64 * (ck + cl) / 4.0 * scale;
                            if cond != 0.0 {
                                couple(qd, cond, &mut diag);
                            }
                        }
                    }
                }
            }
        }
        inner.push((unknown[p], diag));
        inner.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(inner.len());
        for (c, v) in inner {
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => merged.push((c, v)),
            }
        }
        outer.sort_by_key(|e| e.0);
        (merged, outer)
    });
    let m_matrix = rows.iter().enumerate().all(|(r, (row, outer))| {
        row.iter().all(|&(c, v)| c == r || v <= 0.0) && outer.iter().all(|&(_, v)| v >= 0.0)
    });
    let (inner, outer): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok(System {
        grid,
        matrix: Csr::from_rows(inner),
        coupling: Csr::from_rows(outer),
        nodes,
        unknown,
        lambda,
        big_lambda,
        m_matrix,
        exponent: e,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub exec: Exec,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-9, max_iter: 50_000, exec: Exec::default() }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    /// Relative residual |b - Ax| / |b|.
    pub residual: f64,
    /// Relative residual after diagonal scaling.
    pub scaled_residual: f64,
    pub iterations: usize,
    pub solver: String,
    /// Some(true) when every non-exterior value is >= -10 tol max|u|;
    /// None when positivity is not expected.
    pub positivity: Option<bool>,
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients.
pub fn pcg(a: &Csr, b: &[f64], opts: &SolveOptions) -> Result<(Vec<f64>, f64, usize, Vec<f64>)> {
    let m = a.rows;
    let mut x = vec![0.0; m];
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok((x, 0.0, 0, vec![0.0]));
    }
    let inv: Vec<f64> = a.diag().iter().map(|d| 1.0 / d).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; m];
    let mut rz = dot(&r, &z);
    let mut history = vec![1.0];
    for it in 1..=opts.max_iter {
        a.mul(&p, &mut ap, opts.exec);
        let alpha = rz / dot(&p, &ap);
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = dot(&r, &r).sqrt() / bnorm;
        history.push(rel);
        if rel <= opts.tol {
            return Ok((x, rel, it, history));
        }
        for i in 0..m {
            z[i] = r[i] * inv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..m {
            p[i] = z[i] + beta * p[i];
        }
    }
    let last = *history.last().unwrap();
    Err(Error::Convergence { iterations: opts.max_iter, last, history })
}

/// Solve L u = source with u = boundary on Dirichlet nodes (exterior nodes
/// are held at 0). `boundary` and `source` are indexed by node.
pub fn solve_dirichlet(sys: &System, boundary: &[f64], source: Option<&[f64]>, opts: &SolveOptions) -> Result<(GridField, SolveReport)> {
    let g = &*sys.grid;
    if boundary.len() != g.len() || source.is_some_and(|s| s.len() != g.len()) {
        return Err(Error::Dimension("boundary and source arrays must have one entry per node".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Parameter("tolerance must be positive".into()));
    }
    let hn = g.h.powi(g.n() as i32);
    let value = |q: usize| if g.kind(q) == NodeKind::Exterior { 0.0 } else { boundary[q] };
    let b: Vec<f64> = (0..sys.nodes.len())
        .map(|r| {
            let mut s = source.map_or(0.0, |f| f[sys.nodes[r]] * hn);
            for p in sys.coupling.ptr[r]..sys.coupling.ptr[r + 1] {
                s += sys.coupling.vals[p] * value(sys.coupling.cols[p]);
            }
            s
        })
        .collect();
    let (x, residual, iterations, history) = pcg(&sys.matrix, &b, opts)?;
    // diagonally scaled residual
    let mut ax = vec![0.0; x.len()];
    sys.matrix.mul(&x, &mut ax, opts.exec);
    let diag = sys.matrix.diag();
    let num: f64 = (0..x.len()).map(|i| ((b[i] - ax[i]) / diag[i]).powi(2)).sum::<f64>().sqrt();
    let den: f64 = (0..x.len()).map(|i| (b[i] / diag[i]).powi(2)).sum::<f64>().sqrt();
    let scaled_residual = if den > 0.0 { num / den } else { 0.0 };

    let mut values = vec![0.0; g.len()];
    for i in 0..g.len() {
        values[i] = match g.kind(i) {
            NodeKind::Interior => x[sys.unknown[i]],
            NodeKind::Dirichlet => boundary[i],
            NodeKind::Exterior => 0.0,
        };
    }
    let defined = g.kinds().iter().map(|&k| k != NodeKind::Exterior).collect();
    let field = GridField { grid: sys.grid.clone(), rank: Rank::Scalar, values, defined, pole: None };
    let report = SolveReport {
        residual,
        scaled_residual,
        iterations,
        solver: "pcg-jacobi".into(),
        positivity: None,
        history,
    };
    Ok((field, report))
}

fn positivity(u: &GridField, tol: f64) -> bool {
    let max = u.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    u.values.iter().zip(&u.defined).all(|(v, &d)| !d || *v >= -10.0 * tol * max)
}

/// Result of a Green-function solve.
#[derive(Clone, Debug)]
pub struct GreenSolve {
    pub field: GridField,
    pub report: SolveReport,
    pub pole_node: usize,
    /// Distance from the requested pole to the lattice node used.
    pub placement_error: f64,
    pub m_matrix: bool,
}

/// Discrete Green function: unit nodal load at the node nearest to `pole`,
/// zero data on the boundary band and `outer` (default 0) on the other
/// Dirichlet nodes.
pub fn green_function(
    spec: &mut OperatorSpec,
    grid: Arc<Grid>,
    weight: Option<&SmoothDistanceField>,
    pole: &Point,
    outer: Option<&(dyn Fn(&Point) -> f64 + Sync)>,
    opts: &SolveOptions,
) -> Result<GreenSolve> {
    let g = &*grid;
    if !g.domain.in_box(pole) {
        return Err(Error::Placement("pole outside the grid box".into()));
    }
    let node = g.nearest_node(pole);
    if g.kind(node) != NodeKind::Interior {
        return Err(Error::Placement(format!("pole snaps to a {:?} node", g.kind(node))));
    }
    if g.delta(node) < 8.0 * g.h {
        return Err(Error::Placement(format!("pole at distance {:e} < 8h from the boundary", g.delta(node))));
    }
    let sys = assemble(spec, grid.clone(), weight, opts.exec)?;
    let boundary: Vec<f64> = (0..g.len())
        .map(|i| match (g.kind(i), outer) {
            (NodeKind::Dirichlet, Some(f)) if !g.is_band(i) => f(&g.node(i)),
            _ => 0.0,
        })
        .collect();
    let mut source = vec![0.0; g.len()];
    source[node] = 1.0 / g.h.powi(g.n() as i32);
    let (mut field, mut report) = solve_dirichlet(&sys, &boundary, Some(&source), opts)?;
    field.pole = Some(g.node(node));
    if sys.m_matrix {
        report.positivity = Some(positivity(&field, opts.tol));
    }
    Ok(GreenSolve {
        placement_error: (g.node(node) - pole).norm(),
        field,
        report,
        pole_node: node,
        m_matrix: sys.m_matrix,
    })
}

/// Solve L u = 0 in Omega ∩ B(x, 2r) with u = 0 on the boundary band and
/// u = outer_data on the rest of the ball's Dirichlet shell.
#[allow(clippy::too_many_arguments)]
pub fn solve_boundary_ball(
    spec: &mut OperatorSpec,
    domain: DomainBox,
    h: f64,
    h_bc: f64,
    weight: Option<&SmoothDistanceField>,
    x: &Point,
    r: f64,
    outer_data: &(dyn Fn(&Point) -> f64 + Sync),
    opts: &SolveOptions,
) -> Result<(GridField, SolveReport)> {
    if !(r > 0.0) {
        return Err(Error::Parameter(format!("ball radius must be positive, got {r}")));
    }
    let n = domain.n();
    let grid = Arc::new(Grid::build(domain, h, h_bc, Some((*x, 2.0 * r)))?);
    let g = &*grid;
    // Omega ∩ B(x, 2r) must not reach the box faces
    for i in 0..g.len() {
        let ijk = g.ijk(i);
        let on_face = (0..n).any(|k| ijk[k] == 0 || ijk[k] + 1 == g.dims[k]);
        if on_face && g.kind(i) != NodeKind::Exterior && !g.is_band(i) && (g.node(i) - x).norm() < 2.0 * r {
            return Err(Error::Parameter("Omega ∩ B(x, 2r) must lie inside the grid box".into()));
        }
    }
    let boundary: Vec<f64> = (0..g.len())
        .map(|i| if g.kind(i) == NodeKind::Dirichlet && !g.is_band(i) { outer_data(&g.node(i)) } else { 0.0 })
        .collect();
    // the data must be nonzero somewhere the solution can see it
    let mut seen = false;
    'outer: for i in 0..g.len() {
        if g.kind(i) != NodeKind::Interior {
            continue;
        }
        for k in 0..n {
            for s in [-1i64, 1] {
                let mut off = [0i64; 3];
                off[k] = s;
                if let Some(q) = g.offset(i, off) {
                    if boundary[q] != 0.0 {
                        seen = true;
                        break 'outer;
                    }
                }
            }
        }
    }
    if !seen {
        return Err(Error::Triviality("outer data vanishes on the shell of B(x, 2r)".into()));
    }
    if boundary.iter().any(|&v| v < 0.0) {
        return Err(Error::Parameter("outer data must be nonnegative".into()));
    }
    let sys = assemble(spec, grid.clone(), weight, opts.exec)?;
    let (field, mut report) = solve_dirichlet(&sys, &boundary, None, opts)?;
    if sys.m_matrix {
        report.positivity = Some(positivity(&field, opts.tol));
    }
    Ok((field, report))
}

/// Value, centered gradient and Hessian at a node.
#[derive(Clone, Copy, Debug)]
pub struct Jet {
    pub u: f64,
    pub grad: Point,
    pub hess: Mat,
}

/// Radius-one centered differences at node i. None unless the node is
/// usable, delta >= 2h, and every stencil node exists and is defined.
pub fn jet(u: &GridField, i: usize) -> Option<Jet> {
    let g = &*u.grid;
    if !u.usable(i) || g.delta(i) < 2.0 * g.h {
        return None;
    }
    let n = g.n();
    let h = g.h;
    let val = |off: [i64; 3]| -> Option<f64> {
        let q = g.offset(i, off)?;
        u.defined[q].then(|| u.scalar(q))
    };
    let u0 = u.scalar(i);
    let mut grad = Point::zeros();
    let mut hess = Mat::zeros();
    for k in 0..n {
        let mut o = [0i64; 3];
        o[k] = 1;
        let up = val(o)?;
        o[k] = -1;
        let um = val(o)?;
        grad[k] = (up - um) / (2.0 * h);
        hess[(k, k)] = (up - 2.0 * u0 + um) / (h * h);
        for l in (k + 1)..n {
            let c = |a: i64, b: i64| {
                let mut o = [0i64; 3];
                o[k] = a;
                o[l] = b;
                val(o)
            };
            let m = (c(1, 1)? - c(1, -1)? - c(-1, 1)? + c(-1, -1)?) / (4.0 * h * h);
            hess[(k, l)] = m;
            hess[(l, k)] = m;
        }
    }
    Some(Jet { u: u0, grad, hess })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Derivative {
    Grad,
    Hess,
    GradNorm,
    GradNormSq,
    /// grad |grad u| = H grad u / |grad u|
    GradOfGradNorm,
    /// grad |grad u|^2 = 2 H grad u
    GradOfGradNormSq,
    /// grad ln(u / D_beta)
    LogRatioGrad,
    /// hess ln(u / D_beta)
    LogRatioHess,
}

/// Gradient and Hessian of ln(u / D): u from the jet, D analytic.
pub fn log_ratio(j: &Jet, d: f64, gd: &Point, hd: &Mat) -> Result<(Point, Mat)> {
    if !(j.u > 0.0) {
        return Err(Error::Positivity(format!("logarithm of nonpositive value {:e}", j.u)));
    }
    let g = j.grad / j.u - gd / d;
    let h = j.hess / j.u - j.grad * j.grad.transpose() / (j.u * j.u) - hd / d + gd * gd.transpose() / (d * d);
    Ok((g, h))
}

/// Derivative field of a scalar solution on nodes with a full stencil and
/// delta >= 2h; log ratios also need a smooth distance field.
pub fn derivative_field(u: &GridField, what: Derivative, field: Option<&SmoothDistanceField>, exec: Exec) -> Result<GridField> {
    let g = &*u.grid;
    let n = g.n();
    let rank = match what {
        Derivative::Grad | Derivative::GradOfGradNorm | Derivative::GradOfGradNormSq | Derivative::LogRatioGrad => Rank::Vector,
        Derivative::Hess | Derivative::LogRatioHess => Rank::Matrix,
        Derivative::GradNorm | Derivative::GradNormSq => Rank::Scalar,
    };
    let needs_d = matches!(what, Derivative::LogRatioGrad | Derivative::LogRatioHess);
    if needs_d && field.is_none() {
        return Err(Error::Parameter("log-ratio derivatives need a smooth distance field".into()));
    }
    let comps = rank.components(n);
    let per: Vec<Result<Option<Vec<f64>>>> = exec.map(g.len(), |i| {
        let Some(j) = jet(u, i) else { return Ok(None) };
        let vec_out = |v: Point| (0..n).map(|k| v[k]).collect::<Vec<f64>>();
        let mat_out = |m: Mat| {
            let mut o = Vec::with_capacity(n * n);
            for a in 0..n {
                for b in 0..n {
                    o.push(m[(a, b)]);
                }
            }
            o
        };
        let out = match what {
            Derivative::Grad => vec_out(j.grad),
            Derivative::Hess => mat_out(j.hess),
            Derivative::GradNorm => vec![j.grad.norm()],
            Derivative::GradNormSq => vec![j.grad.norm_squared()],
            Derivative::GradOfGradNorm => {
                let gn = j.grad.norm();
                if gn == 0.0 {
                    return Ok(None);
                }
                vec_out(j.hess * j.grad / gn)
            }
            Derivative::GradOfGradNormSq => vec_out(j.hess * j.grad * 2.0),
            Derivative::LogRatioGrad | Derivative::LogRatioHess => {
                let Ok(e) = field.unwrap().eval(&g.node(i), 2) else { return Ok(None) };
                let (lg, lh) = log_ratio(&j, e.d, &e.grad_d, &e.hess_d)?;
                if what == Derivative::LogRatioGrad {
                    vec_out(lg)
                } else {
                    mat_out(lh)
                }
            }
        };
        Ok(Some(out))
    });
    let mut values = vec![0.0; comps * g.len()];
    let mut defined = vec![false; g.len()];
    for (i, p) in per.into_iter().enumerate() {
        if let Some(v) = p? {
            values[i * comps..(i + 1) * comps].copy_from_slice(&v);
            defined[i] = true;
        }
    }
    Ok(GridField { grid: u.grid.clone(), rank, values, defined, pole: u.pole })
}

#[derive(Clone, Copy, Debug)]
pub struct GradientBound {
    pub sup: f64,
    pub node: usize,
    pub point: Point,
    pub tested: usize,
}

/// sup of delta |grad u| / u over usable nodes with delta >= 4h.
pub fn gradient_bound_check(u: &GridField) -> Result<GradientBound> {
    let g = &*u.grid;
    let mut best = GradientBound { sup: 0.0, node: usize::MAX, point: Point::zeros(), tested: 0 };
    for i in 0..g.len() {
        if g.delta(i) < 4.0 * g.h {
            continue;
        }
        let Some(j) = jet(u, i) else { continue };
        if !(j.u > 0.0) {
            return Err(Error::Positivity(format!("u = {:e} at tested node {i}", j.u)));
        }
        best.tested += 1;
        let v = g.delta(i) * j.grad.norm() / j.u;
        if v > best.sup || best.node == usize::MAX {
            best.sup = v;
            best.node = i;
            best.point = g.node(i);
        }
    }
    if best.tested == 0 {
        return Err(Error::Domain("no node with delta >= 4h and a full stencil".into()));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_boundary, BoundaryParams};

    fn half_plane(h_bc_ratio: f64) -> Arc<Grid> {
        let s = Arc::new(make_boundary(&BoundaryParams::Plane { n: 2, extent: 2.0, spacing: 0.01 }).unwrap());
        let dom = DomainBox::new(Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0), s, Side::OneSide).unwrap();
        let h = 1.0 / 16.0;
        Arc::new(Grid::with_band(dom, h, h * h_bc_ratio).unwrap())
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let g = half_plane(0.5);
        let mut spec = OperatorSpec::new(1.0, 1.0, 2, Coefficient::Identity).unwrap();
        let sys = assemble(&mut spec, g, None, Exec::Sequential).unwrap();
        assert!(sys.m_matrix);
        for r in 0..sys.matrix.rows {
            let inner: f64 = (sys.matrix.ptr[r]..sys.matrix.ptr[r + 1]).map(|p| sys.matrix.vals[p]).sum();
            let outer: f64 = (sys.coupling.ptr[r]..sys.coupling.ptr[r + 1]).map(|p| sys.coupling.vals[p]).sum();
            assert!((inner - outer).abs() < 1e-12);
            assert_eq!(sys.matrix.get(r, r), 4.0);
        }
    }

    #[test]
    fn linear_function_is_stencil_exact() {
        let g = half_plane(0.5);
        let mut spec = OperatorSpec::new(1.0, 1.0, 2, Coefficient::Identity).unwrap();
        let sys = assemble(&mut spec, g.clone(), None, Exec::Sequential).unwrap();
        let bnd: Vec<f64> = (0..g.len()).map(|i| g.node(i)[1]).collect();
        let (u, rep) = solve_dirichlet(&sys, &bnd, None, &SolveOptions::default()).unwrap();
        assert!(rep.residual <= 1e-9);
        for i in 0..g.len() {
            assert!((u.scalar(i) - g.node(i)[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn low_dimensional_sets_need_identity() {
        assert!(OperatorSpec::new(1.0, 1.0, 3, Coefficient::IntegrableDecay).is_err());
        assert!(OperatorSpec::new(1.0, 1.0, 3, Coefficient::Identity).is_ok());
    }

    #[test]
    fn asymmetric_coefficient_rejected() {
        let g = half_plane(1.0);
        let f = Arc::new(|_: &Point, _: f64| Mat::new(1.0, 0.3, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0));
        let mut spec = OperatorSpec::new(1.0, 1.0, 2, Coefficient::Custom(f)).unwrap();
        assert!(matches!(assemble(&mut spec, g, None, Exec::Sequential), Err(Error::Parameter(_))));
        let g = half_plane(1.0);
        let mut spec = OperatorSpec::new(1.0, 1.0, 2, Coefficient::Diagonal([1.0, -1.0, 1.0])).unwrap();
        assert!(matches!(assemble(&mut spec, g, None, Exec::Sequential), Err(Error::Ellipticity(_))));
    }

    #[test]
    fn coefficient_parsing() {
        assert!(matches!(Coefficient::parse("diagonal:1,2"), Ok(Coefficient::Diagonal([1.0, 2.0, 1.0]))));
        assert!(Coefficient::parse("bogus").is_err());
    }
}
