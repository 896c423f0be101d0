//! Run configuration, the shipped scenarios, snapshots and refinement runs.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::analysis::{self, grid_error, grid_error_fn, line_error, BesselMode, Level, Norm, RefinementReport};
use crate::error::{MoltError, Result};
use crate::fastconv::SweepLine;
use crate::geometry::{
    build_ghost_stencils, build_mesh, Circle, Domain, DoubleCircle, EmbeddedMesh, Grid, LineMode, QuarterCircle, Rectangle,
    SlitGrating,
};
use crate::params::{make_params, SchemeParams, Variant};
use crate::stepper1d::{time_fn, LineBc, SourceKind, Stepper1d};
use crate::stepper2d::{BcMap, Correction, EdgeBc, Source2d, SourceShape, Stepper2d};

/// Environment variable overriding `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "MOLT_OUTPUT_DIR";

pub const SCENARIOS: [(&str, &str); 9] = [
    ("sine_1d", "standing mode sin(pi x)cos(pi t) on [0,1], Dirichlet"),
    ("pulse_outflow_1d", "Gaussian pulse leaving [-1,1] through outflow ends"),
    ("double_circle", "cos^6 bumps in two overlapping disks, Dirichlet"),
    ("bessel_dirichlet", "J0 standing mode on the unit disk, Dirichlet"),
    ("quarter_circle", "Dirichlet disk vs quarter disk with Neumann axes"),
    ("bessel_neumann", "J0 mode on a disk of radius pi/2, embedded Neumann"),
    ("slit_grating", "plane wave through a periodic slit screen, outflow top and bottom"),
    ("point_sources", "two off-grid point sources; Dirichlet, outflow, periodic edges"),
    ("generic", "Gaussian pulse on a chosen geometry and boundary condition"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcKind {
    Dirichlet,
    Neumann,
    EmbeddedNeumann,
    Periodic,
    Outflow,
}

impl BcKind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "dirichlet" => BcKind::Dirichlet,
            "neumann" => BcKind::Neumann,
            "embedded_neumann" => BcKind::EmbeddedNeumann,
            "periodic" => BcKind::Periodic,
            "outflow" => BcKind::Outflow,
            _ => return None,
        })
    }

    fn edge(self) -> EdgeBc {
        match self {
            BcKind::Dirichlet => EdgeBc::zero_dirichlet(),
            BcKind::Neumann | BcKind::EmbeddedNeumann => EdgeBc::Neumann,
            BcKind::Periodic => EdgeBc::Periodic,
            BcKind::Outflow => EdgeBc::Outflow,
        }
    }
}

/// Boundary kinds: `all` applies where no edge-specific kind is given.
/// Edges are the rectangle sides left, right, bottom, top.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BcSpec {
    pub all: BcKind,
    pub edges: [Option<BcKind>; 4],
}

impl BcSpec {
    pub fn uniform(kind: BcKind) -> Self {
        BcSpec { all: kind, edges: [None; 4] }
    }
    pub fn edge(&self, i: usize) -> BcKind {
        self.edges[i].unwrap_or(self.all)
    }
    fn kinds(&self) -> impl Iterator<Item = BcKind> + '_ {
        std::iter::once(self.all).chain(self.edges.iter().flatten().copied())
    }
    fn map(&self) -> BcMap {
        (0..4).fold(BcMap::uniform(self.all.edge()), |m, i| m.with(i, self.edge(i).edge()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: String,
    /// `rectangle`, `circle` or `double_circle` (generic runs).
    pub geometry: String,
    pub radius: f64,
    pub gamma: f64,
    pub aperture: f64,
    pub period: f64,
    pub ly: f64,
    /// Bounding box `[xlo, xhi] × [ylo, yhi]`; a 1D run uses `[xlo, xhi]`.
    pub bbox: [f64; 4],
    pub nx: usize,
    pub ny: usize,
    /// CFL number `cΔt/h` with `h` the finer of `dx, dy`.
    pub cfl: f64,
    pub c: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub variant: Variant,
    pub bc: BcSpec,
    pub t_final: f64,
    pub snapshots: Vec<f64>,
    pub output_dir: PathBuf,
    pub tol: f64,
    pub max_iter: usize,
    pub averaging: bool,
    pub correction: Correction,
    /// Gaussian initial pulse for generic runs: centre and width.
    pub pulse: [f64; 3],
}

impl RunConfig {
    /// Defaults shared by every scenario.
    fn base(scenario: &str) -> Self {
        RunConfig {
            scenario: scenario.to_string(),
            geometry: "rectangle".into(),
            radius: 1.0,
            gamma: 0.0,
            aperture: 0.1,
            period: 1.0,
            ly: 1.0,
            bbox: [0.0, 1.0, 0.0, 1.0],
            nx: 64,
            ny: 64,
            cfl: 2.0,
            c: 1.0,
            beta: 2.0,
            epsilon: 0.0,
            variant: Variant::Dispersive,
            bc: BcSpec::uniform(BcKind::Dirichlet),
            t_final: 1.0,
            snapshots: Vec::new(),
            output_dir: PathBuf::from("output"),
            tol: 1e-15,
            max_iter: 200,
            averaging: false,
            correction: Correction::Symmetric,
            pulse: [0.5, 0.5, 0.05],
        }
    }

    /// Defaults of a named scenario; `None` if the name is unknown.
    pub fn for_scenario(name: &str) -> Option<Self> {
        let mut c = Self::base(name);
        match name {
            "sine_1d" => {
                c.nx = 50;
                c.ny = 0;
            }
            "pulse_outflow_1d" => {
                c.bbox = [-1.0, 1.0, 0.0, 0.0];
                c.nx = 200;
                c.ny = 0;
                c.t_final = 2.0;
                c.bc = BcSpec::uniform(BcKind::Outflow);
                c.pulse = [0.0, 0.0, 0.1];
            }
            "double_circle" => {
                c.geometry = "double_circle".into();
                c.radius = 0.3;
                c.gamma = 0.2;
                c.bbox = [-0.56, 0.56, -0.39, 0.39];
                c.nx = 160;
                c.ny = 180;
                c.t_final = 0.29;
            }
            "bessel_dirichlet" => {
                c.geometry = "circle".into();
                c.bbox = [-1.2, 1.2, -1.2, 1.2];
                c.nx = 96;
                c.ny = 96;
            }
            "quarter_circle" => {
                c.geometry = "circle".into();
                c.bbox = [-1.2, 1.2, -1.2, 1.2];
                c.nx = 96;
                c.ny = 96;
                c.snapshots = vec![0.25, 0.5, 0.75, 1.0];
            }
            "bessel_neumann" => {
                c.geometry = "circle".into();
                c.radius = FRAC_PI_2;
                c.bbox = [-2.0, 2.0, -2.0, 2.0];
                c.nx = 128;
                c.ny = 128;
                c.variant = Variant::Diffusive;
                c.bc = BcSpec::uniform(BcKind::EmbeddedNeumann);
            }
            "slit_grating" => {
                c.bbox = [-0.5, 0.5, -0.5, 0.5];
                c.nx = 200;
                c.ny = 201;
                c.t_final = 2.01;
                c.snapshots = vec![0.31, 0.51, 1.01, 2.01];
                c.bc = BcSpec { all: BcKind::Periodic, edges: [None, None, Some(BcKind::Outflow), Some(BcKind::Outflow)] };
                c.correction = Correction::Off;
            }
            "point_sources" => {
                c.nx = 200;
                c.ny = 200;
                c.snapshots = vec![0.05, 0.4, 0.75, 1.0];
                c.bc = BcSpec {
                    all: BcKind::Dirichlet,
                    edges: [Some(BcKind::Dirichlet), Some(BcKind::Outflow), Some(BcKind::Periodic), Some(BcKind::Periodic)],
                };
                c.correction = Correction::Off;
            }
            "generic" => {}
            _ => return None,
        }
        Some(c)
    }

    pub fn is_1d(&self) -> bool {
        matches!(self.scenario.as_str(), "sine_1d" | "pulse_outflow_1d")
    }

    fn grid(&self) -> Grid {
        let [x0, x1, y0, y1] = self.bbox;
        Grid::new(x0, x1, self.nx, y0, y1, self.ny)
    }

    /// Spacing the CFL number refers to.
    pub fn h(&self) -> f64 {
        let [x0, x1, y0, y1] = self.bbox;
        let dx = (x1 - x0) / self.nx as f64;
        if self.is_1d() {
            dx
        } else {
            dx.min((y1 - y0) / self.ny as f64)
        }
    }

    pub fn params(&self) -> Result<SchemeParams> {
        make_params(self.c, self.cfl * self.h() / self.c, self.beta, self.epsilon, self.variant)
    }

    /// The same run with every resolution multiplied by `r`.
    pub fn refined(&self, r: usize) -> Self {
        let mut c = self.clone();
        c.nx *= r;
        c.ny *= r;
        c
    }
}

fn invalid(key: &str, value: &str) -> MoltError {
    MoltError::InvalidValue { key: key.to_string(), value: value.to_string() }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| invalid(key, v))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse_num(key, s)).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(invalid(key, v)),
    }
}

const KEYS: [&str; 30] = [
    "scenario", "geometry", "radius", "gamma", "aperture", "period", "ly", "xlo", "xhi", "ylo", "yhi", "nx", "ny", "n", "cfl", "c",
    "beta", "epsilon", "variant", "bc", "bc_left", "bc_right", "bc_bottom", "bc_top", "t_final", "snapshots", "output_dir", "tol",
    "max_iter", "averaging",
];
const EXTRA_KEYS: [&str; 4] = ["correction", "pulse_x", "pulse_y", "pulse_width"];

/// Parses `key = value` lines (`#` starts a comment) into a validated
/// configuration. Unset keys take the scenario's defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut kv = BTreeMap::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| invalid(line, "expected key = value"))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) && !EXTRA_KEYS.contains(&k) {
            return Err(MoltError::UnknownKey(k.to_string()));
        }
        kv.insert(k.to_string(), v.to_string());
    }
    let scenario = kv.get("scenario").cloned();
    let mut c = match &scenario {
        Some(s) => RunConfig::for_scenario(s).ok_or_else(|| invalid("scenario", s))?,
        None => RunConfig::base(""),
    };
    for (k, v) in &kv {
        let v = v.as_str();
        match k.as_str() {
            "scenario" => {}
            "geometry" => match v {
                "rectangle" | "circle" | "double_circle" => c.geometry = v.to_string(),
                _ => return Err(invalid(k, v)),
            },
            "radius" => c.radius = parse_num(k, v)?,
            "gamma" => c.gamma = parse_num(k, v)?,
            "aperture" => c.aperture = parse_num(k, v)?,
            "period" => c.period = parse_num(k, v)?,
            "ly" => c.ly = parse_num(k, v)?,
            "xlo" => c.bbox[0] = parse_num(k, v)?,
            "xhi" => c.bbox[1] = parse_num(k, v)?,
            "ylo" => c.bbox[2] = parse_num(k, v)?,
            "yhi" => c.bbox[3] = parse_num(k, v)?,
            "nx" | "n" => c.nx = parse_num(k, v)?,
            "ny" => c.ny = parse_num(k, v)?,
            "cfl" => c.cfl = parse_num(k, v)?,
            "c" => c.c = parse_num(k, v)?,
            "beta" => c.beta = parse_num(k, v)?,
            "epsilon" => c.epsilon = parse_num(k, v)?,
            "variant" => c.variant = Variant::parse(v).ok_or_else(|| invalid(k, v))?,
            "bc" => c.bc.all = BcKind::parse(v).ok_or_else(|| invalid(k, v))?,
            "bc_left" | "bc_right" | "bc_bottom" | "bc_top" => {
                let i = ["bc_left", "bc_right", "bc_bottom", "bc_top"].iter().position(|e| e == k).unwrap_or(0);
                c.bc.edges[i] = Some(BcKind::parse(v).ok_or_else(|| invalid(k, v))?);
            }
            "t_final" => c.t_final = parse_num(k, v)?,
            "snapshots" => c.snapshots = parse_list(k, v)?,
            "output_dir" => c.output_dir = PathBuf::from(v),
            "tol" => c.tol = parse_num(k, v)?,
            "max_iter" => c.max_iter = parse_num(k, v)?,
            "averaging" => c.averaging = parse_bool(k, v)?,
            "correction" => {
                c.correction = match v {
                    "symmetric" => Correction::Symmetric,
                    "expanded" => Correction::Expanded,
                    "flipped" => Correction::Flipped,
                    "off" => Correction::Off,
                    _ => return Err(invalid(k, v)),
                }
            }
            "pulse_x" => c.pulse[0] = parse_num(k, v)?,
            "pulse_y" => c.pulse[1] = parse_num(k, v)?,
            "pulse_width" => c.pulse[2] = parse_num(k, v)?,
            _ => return Err(MoltError::UnknownKey(k.clone())),
        }
    }
    if !kv.contains_key("correction") && c.bc.kinds().any(|k| k == BcKind::Outflow) {
        c.correction = Correction::Off;
    }
    validate(&c)?;
    if scenario.is_none() {
        return Err(MoltError::MissingScenario);
    }
    Ok(c)
}

fn validate(c: &RunConfig) -> Result<()> {
    let positive = |k: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(invalid(k, &v.to_string())) };
    positive("cfl", c.cfl)?;
    positive("c", c.c)?;
    positive("t_final", c.t_final)?;
    positive("tol", c.tol)?;
    if let Some(t) = c.snapshots.iter().find(|t| !(0.0..=c.t_final).contains(*t)) {
        return Err(invalid("snapshots", &format!("{t} outside [0, {}]", c.t_final)));
    }
    let embedded = c.bc.kinds().any(|k| k == BcKind::EmbeddedNeumann);
    if embedded {
        let ok = c.variant == Variant::Diffusive || (c.variant == Variant::Dissipative && c.epsilon > 0.0);
        if !ok {
            return Err(MoltError::IncompatibleBC(format!(
                "embedded Neumann needs the diffusive variant or dissipation (variant {}, epsilon {})",
                c.variant.name(),
                c.epsilon
            )));
        }
    }
    if c.bc.kinds().any(|k| k == BcKind::Outflow) && c.variant != Variant::Dispersive {
        return Err(MoltError::IncompatibleBC(format!("outflow with the {} variant", c.variant.name())));
    }
    if c.bc.kinds().any(|k| k == BcKind::Outflow) && c.correction != Correction::Off && !c.is_1d() {
        return Err(MoltError::IncompatibleBC("outflow edges need correction = off".into()));
    }
    if c.averaging && c.bc.kinds().any(|k| k == BcKind::Outflow) {
        return Err(MoltError::IncompatibleBC("sweep averaging with outflow edges".into()));
    }
    if c.max_iter == 0 || c.nx < 2 || (!c.is_1d() && c.ny < 2 && !c.scenario.is_empty()) {
        return Err(invalid("nx/ny/max_iter", "too small"));
    }
    c.params().map(|_| ())
}

/// CSV `x,y,u` with one row per interior node in node order (row by row,
/// ascending x within a row), 17 significant digits.
pub fn write_snapshot(field: &[f64], mesh: &EmbeddedMesh, path: &Path) -> Result<()> {
    if field.len() != mesh.grid.n_nodes() {
        return Err(MoltError::ShapeMismatch { expected: mesh.grid.n_nodes(), got: field.len() });
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "x,y,u")?;
    for n in mesh.interior() {
        let (x, y) = mesh.point(n);
        writeln!(w, "{:.16e},{:.16e},{:.16e}", x, y, field[n])?;
    }
    w.flush()?;
    Ok(())
}

/// CSV `x,u` for a line.
pub fn write_snapshot_1d(field: &[f64], nodes: &[f64], path: &Path) -> Result<()> {
    if field.len() != nodes.len() {
        return Err(MoltError::ShapeMismatch { expected: nodes.len(), got: field.len() });
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "x,u")?;
    for (x, u) in nodes.iter().zip(field) {
        writeln!(w, "{:.16e},{:.16e}", x, u)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a snapshot back as rows of numbers (header skipped).
pub fn read_snapshot(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| parse_num("snapshot", v)).collect())
        .collect()
}

/// Outcome of one run.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub scenario: String,
    pub steps: usize,
    pub t_final: f64,
    pub wall_seconds: f64,
    /// Largest ghost-iteration count of any phase (embedded Neumann runs).
    pub max_iterations: Option<usize>,
    pub final_max: f64,
    /// Named error measures, e.g. against an analytic mode.
    pub metrics: Vec<(String, f64)>,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario      {}", self.scenario);
        let _ = writeln!(s, "steps         {}", self.steps);
        let _ = writeln!(s, "t_final       {:.6}", self.t_final);
        let _ = writeln!(s, "wall_seconds  {:.3}", self.wall_seconds);
        if let Some(i) = self.max_iterations {
            let _ = writeln!(s, "max_iter_used {i}");
        }
        let _ = writeln!(s, "max_abs_u     {:.6e}", self.final_max);
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "{k:<13} {v:.6e}");
        }
        for f in &self.files {
            let _ = writeln!(s, "wrote         {}", f.display());
        }
        s
    }
}

/// `output_dir` of the config unless the environment overrides it.
pub fn output_dir(c: &RunConfig) -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| c.output_dir.clone())
}

fn max_abs(u: &[f64]) -> f64 {
    u.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Snapshot bookkeeping: each requested time is written once, at the first
/// step within half a step of it.
struct Snapshots {
    times: Vec<f64>,
    next: usize,
    dir: PathBuf,
}

impl Snapshots {
    fn new(c: &RunConfig) -> Result<Self> {
        let mut times = if c.snapshots.is_empty() { vec![c.t_final] } else { c.snapshots.clone() };
        times.sort_by(f64::total_cmp);
        let dir = output_dir(c);
        fs::create_dir_all(&dir)?;
        Ok(Snapshots { times, next: 0, dir })
    }

    /// Requested times now due at time `t`.
    fn due(&mut self, t: f64, dt: f64) -> Vec<f64> {
        let mut out = Vec::new();
        while self.next < self.times.len() && self.times[self.next] <= t + 0.5 * dt {
            out.push(self.times[self.next]);
            self.next += 1;
        }
        out
    }

    fn path(&self, prefix: &str, t: f64) -> PathBuf {
        self.dir.join(format!("{prefix}_t{t:.4}.csv"))
    }
}

fn domain_for(c: &RunConfig) -> Box<dyn Domain> {
    let [x0, x1, y0, y1] = c.bbox;
    match c.geometry.as_str() {
        "circle" => Box::new(Circle { cx: 0.0, cy: 0.0, r: c.radius }),
        "double_circle" => Box::new(DoubleCircle { r: c.radius, gamma: c.gamma }),
        _ => Box::new(Rectangle { x0, x1, y0, y1 }),
    }
}

fn embedded(c: &RunConfig) -> bool {
    c.bc.kinds().any(|k| k == BcKind::EmbeddedNeumann)
}

/// Stepper for `c` on `domain`; embedded Neumann selects the ghost iteration.
fn stepper_2d(c: &RunConfig, domain: &dyn Domain, bcs: BcMap, sources: Vec<Source2d>) -> Result<Stepper2d> {
    let p = c.params()?;
    let grid = c.grid();
    if embedded(c) {
        let mesh = build_mesh(domain, grid, LineMode::GhostEndpoints)?;
        let stencils = build_ghost_stencils(&mesh, domain, SQRT_2 * grid.dx.max(grid.dy))?;
        return Ok(Stepper2d::neumann(p, Arc::new(mesh), stencils)?.with_iteration(c.tol, c.max_iter));
    }
    let mesh = Arc::new(build_mesh(domain, grid, LineMode::BoundaryEndpoints)?);
    Stepper2d::new(p, mesh, bcs, sources)?
        .with_correction(c.correction)?
        .with_averaging(c.averaging)
        .map(|s| s.with_iteration(c.tol, c.max_iter))
}

fn double_bump(c: &RunConfig) -> impl Fn(f64, f64) -> f64 {
    let (g, w) = (c.gamma, 0.8 * c.gamma);
    move |x, y| {
        let bump = |d: f64| (FRAC_PI_2 * (d / w).powi(2)).cos().powi(6);
        let (d1, d2) = ((x + g).hypot(y), (x - g).hypot(y));
        if d1 < w {
            -bump(d1)
        } else if d2 < w {
            bump(d2)
        } else {
            0.0
        }
    }
}

fn gaussian(c: &RunConfig) -> impl Fn(f64, f64) -> f64 {
    let [x0, y0, w] = c.pulse;
    move |x, y| (-((x - x0).powi(2) + (y - y0).powi(2)) / (w * w)).exp()
}

/// Steps to `t_final`, calling `snap` at each due snapshot time.
fn drive(s: &mut Stepper2d, c: &RunConfig, snaps: &mut Snapshots, r: &mut RunReport, mut snap: impl FnMut(&Stepper2d, f64, &Snapshots, &mut RunReport) -> Result<()>) -> Result<()> {
    let dt = s.params().dt;
    let mut worst = 0usize;
    loop {
        for t in snaps.due(s.time(), dt) {
            snap(s, t, snaps, r)?;
        }
        if s.time() >= c.t_final - 1e-9 * dt {
            break;
        }
        s.step()?;
        worst = worst.max(s.stats().max_iterations());
    }
    r.steps = s.steps();
    r.t_final = s.time();
    r.final_max = max_abs(s.u());
    if embedded(c) {
        r.max_iterations = Some(worst);
    }
    Ok(())
}

fn snapshot_2d(prefix: &'static str) -> impl FnMut(&Stepper2d, f64, &Snapshots, &mut RunReport) -> Result<()> {
    move |s, t, snaps, r| {
        let path = snaps.path(prefix, t);
        write_snapshot(s.u(), s.mesh(), &path)?;
        r.files.push(path);
        Ok(())
    }
}

/// Runs the configured scenario, writes snapshots and `summary.txt`.
pub fn run_scenario(c: &RunConfig) -> Result<RunReport> {
    let start = Instant::now();
    let mut snaps = Snapshots::new(c)?;
    let mut r = RunReport { scenario: c.scenario.clone(), ..RunReport::default() };
    match c.scenario.as_str() {
        "sine_1d" | "pulse_outflow_1d" => run_1d(c, &mut snaps, &mut r)?,
        "quarter_circle" => run_quarter(c, &mut snaps, &mut r)?,
        "bessel_dirichlet" | "bessel_neumann" => run_bessel(c, &mut snaps, &mut r)?,
        "slit_grating" => run_slit(c, &mut snaps, &mut r)?,
        "point_sources" => run_sources(c, &mut snaps, &mut r)?,
        "double_circle" | "generic" => {
            let domain = domain_for(c);
            let mut s = stepper_2d(c, domain.as_ref(), c.bc.map(), vec![])?;
            let u0 = if c.scenario == "double_circle" { s.sample(double_bump(c)) } else { s.sample(gaussian(c)) };
            s.start(&u0, &vec![0.0; u0.len()])?;
            drive(&mut s, c, &mut snaps, &mut r, snapshot_2d(if c.scenario == "generic" { "u" } else { "double_circle" }))?;
        }
        other => return Err(invalid("scenario", other)),
    }
    r.wall_seconds = start.elapsed().as_secs_f64();
    let path = snaps.dir.join("summary.txt");
    fs::write(&path, r.summary())?;
    Ok(r)
}

fn run_1d(c: &RunConfig, snaps: &mut Snapshots, r: &mut RunReport) -> Result<()> {
    let p = c.params()?;
    let line = SweepLine::uniform(c.bbox[0], c.bbox[1], c.nx)?;
    let x = line.nodes().to_vec();
    let sine = c.scenario == "sine_1d";
    let bc = match c.bc.all {
        BcKind::Dirichlet => LineBc::homogeneous_dirichlet(),
        BcKind::Neumann => LineBc::homogeneous_neumann(),
        BcKind::Periodic => LineBc::Periodic,
        BcKind::Outflow => LineBc::outflow(),
        BcKind::EmbeddedNeumann => return Err(MoltError::IncompatibleBC("embedded Neumann on a line".into())),
    };
    let mut s = Stepper1d::new(p, line, bc, vec![])?;
    let [x0, _, w] = c.pulse;
    let u0: Vec<f64> = x.iter().map(|&x| if sine { (PI * x).sin() } else { (-((x - x0) / w).powi(2)).exp() }).collect();
    s.start(&u0, &vec![0.0; x.len()])?;
    let prefix = if sine { "sine_1d" } else { "pulse_outflow_1d" };
    loop {
        for t in snaps.due(s.time(), p.dt) {
            let path = snaps.path(prefix, t);
            write_snapshot_1d(s.u(), &x, &path)?;
            r.files.push(path);
        }
        if s.time() >= c.t_final - 1e-9 * p.dt {
            break;
        }
        s.step()?;
    }
    r.steps = s.steps();
    r.t_final = s.time();
    r.final_max = max_abs(s.u());
    if sine {
        let t = s.time();
        let exact: Vec<f64> = x.iter().map(|&x| (PI * x).sin() * (PI * c.c * t).cos()).collect();
        r.metrics.push(("l2_error".into(), line_error(s.u(), &exact, s.line(), Norm::L2)?));
        r.metrics.push(("linf_error".into(), line_error(s.u(), &exact, s.line(), Norm::Linf)?));
    } else {
        r.metrics.push(("residual_rel".into(), max_abs(s.u()) / max_abs(&u0)));
    }
    Ok(())
}

fn bessel_mode(c: &RunConfig) -> BesselMode {
    if embedded(c) {
        BesselMode::neumann(c.radius, c.c)
    } else {
        BesselMode::dirichlet(c.radius, c.c)
    }
}

fn push_errors(s: &Stepper2d, mode: &BesselMode, tag: &str, r: &mut RunReport) -> Result<()> {
    let t = s.time();
    for (norm, name) in [(Norm::L2, "l2"), (Norm::Linf, "linf")] {
        let e = grid_error_fn(s.u(), s.mesh(), |x, y| mode.eval(x, y, t), norm)?;
        r.metrics.push((format!("{tag}{name}_error"), e));
    }
    Ok(())
}

/// Bessel modes. Dirichlet runs start from `u(0)`, `u_t = 0` by the half
/// step; embedded Neumann runs seed the exact levels.
fn run_bessel(c: &RunConfig, snaps: &mut Snapshots, r: &mut RunReport) -> Result<()> {
    let domain = Circle { cx: 0.0, cy: 0.0, r: c.radius };
    let mode = bessel_mode(c);
    let mut s = stepper_2d(c, &domain, c.bc.map(), vec![])?;
    if embedded(c) {
        let dt = s.params().dt;
        let level = |t: f64| s.sample(|x, y| mode.eval(x, y, t));
        let (u0, u1, u2) = (level(0.0), level(-dt), level(-2.0 * dt));
        s.set_levels(0.0, u0, u1, Some(u2))?;
    } else {
        let u0 = s.sample(|x, y| mode.eval(x, y, 0.0));
        s.start(&u0, &vec![0.0; u0.len()])?;
    }
    drive(&mut s, c, snaps, r, snapshot_2d(if embedded(c) { "bessel_neumann" } else { "bessel_dirichlet" }))?;
    push_errors(&s, &mode, "", r)
}

/// Full-disk Dirichlet run against a quarter disk with Neumann edges on
/// the axes, both on the same spacing. The quarter grid covers
/// `[xlo, 0] × [0, yhi]` with `nx/2 × ny/2` cells.
fn run_quarter(c: &RunConfig, snaps: &mut Snapshots, r: &mut RunReport) -> Result<()> {
    let mode = BesselMode::dirichlet(c.radius, c.c);
    let [x0, _, _, y1] = c.bbox;
    let full_grid = c.grid();
    let (nq, mq) = (c.nx / 2, c.ny / 2);
    let q_grid = Grid::new(x0, 0.0, nq, 0.0, y1, mq);
    if (q_grid.dx - full_grid.dx).abs() > 1e-12 * full_grid.dx || (q_grid.dy - full_grid.dy).abs() > 1e-12 * full_grid.dy {
        return Err(invalid("bbox", "quarter grid must share the full grid spacing"));
    }
    let p = c.params()?;
    let full_mesh = build_mesh(&Circle { cx: 0.0, cy: 0.0, r: c.radius }, full_grid, LineMode::BoundaryEndpoints)?;
    let q_mesh = build_mesh(&QuarterCircle { r: c.radius }, q_grid, LineMode::BoundaryEndpoints)?;
    let q_bcs = BcMap::uniform(EdgeBc::zero_dirichlet()).with(1, EdgeBc::Neumann).with(2, EdgeBc::Neumann);
    let mut full = Stepper2d::new(p, Arc::new(full_mesh), BcMap::uniform(EdgeBc::zero_dirichlet()), vec![])?
        .with_correction(c.correction)?;
    let mut quarter = Stepper2d::new(p, Arc::new(q_mesh), q_bcs, vec![])?.with_correction(c.correction)?;
    for s in [&mut full, &mut quarter] {
        let u0 = s.sample(|x, y| mode.eval(x, y, 0.0));
        s.start(&u0, &vec![0.0; u0.len()])?;
    }
    // quarter node (i, k) sits at full node (i, k + offset)
    let offset = ((0.0 - full_grid.y(0)) / full_grid.dy).round() as usize;
    let shared: Vec<(usize, usize)> = quarter
        .mesh()
        .interior()
        .filter_map(|n| {
            let (i, k) = q_grid.ik(n);
            let m = full_grid.idx(i, k + offset);
            full.mesh().is_interior(m).then_some((n, m))
        })
        .collect();
    loop {
        for t in snaps.due(full.time(), p.dt) {
            let tag = format!("t{t:.4}_");
            for (s, name) in [(&full, "full"), (&quarter, "quarter")] {
                let path = snaps.path(&format!("quarter_circle_{name}"), t);
                write_snapshot(s.u(), s.mesh(), &path)?;
                r.files.push(path);
                let tn = s.time();
                let e = grid_error_fn(s.u(), s.mesh(), |x, y| mode.eval(x, y, tn), Norm::Linf)?;
                r.metrics.push((format!("{tag}{name}_linf_error"), e));
            }
            let mut diff = vec![0.0; q_grid.n_nodes()];
            let mut worst = 0.0f64;
            for &(n, m) in &shared {
                diff[n] = quarter.u()[n] - full.u()[m];
                worst = worst.max(diff[n].abs());
            }
            let path = snaps.path("quarter_circle_diff", t);
            write_snapshot(&diff, quarter.mesh(), &path)?;
            r.files.push(path);
            r.metrics.push((format!("{tag}overlap_linf_diff"), worst));
        }
        if full.time() >= c.t_final - 1e-9 * p.dt {
            break;
        }
        full.step()?;
        quarter.step()?;
    }
    r.steps = full.steps();
    r.t_final = full.time();
    r.final_max = max_abs(full.u());
    Ok(())
}

/// Smooth switch-on `1 - exp(-(t/τ)²)`.
fn ramp(t: f64, tau: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        1.0 - (-(t / tau).powi(2)).exp()
    }
}

/// Plane wave `cos(ωt + k y_s)` injected by a soft line source below the
/// screen, `k = 2π/a`.
fn run_slit(c: &RunConfig, snaps: &mut Snapshots, r: &mut RunReport) -> Result<()> {
    let domain = SlitGrating { d: c.period, a: c.aperture, ly: c.ly };
    let (k, y_s) = (2.0 * PI / c.aperture, -0.25 * c.ly);
    let omega = c.c * k;
    let wave = move |t: f64| ramp(t, 0.2) * (omega * t + k * y_s).cos();
    let dwave = move |t: f64| {
        let dr = if t <= 0.0 { 0.0 } else { 2.0 * t / 0.04 * (-(t / 0.2).powi(2)).exp() };
        dr * (omega * t + k * y_s).cos() - ramp(t, 0.2) * omega * (omega * t + k * y_s).sin()
    };
    let src = Source2d {
        shape: SourceShape::LineY(y_s),
        waveform: time_fn(wave),
        derivative: Some(time_fn(dwave)),
        kind: SourceKind::Soft,
    };
    let bcs = c.bc.map().with(SlitGrating::SCREEN, EdgeBc::zero_dirichlet());
    let mut s = stepper_2d(c, &domain, bcs, vec![src])?;
    let n = s.mesh().grid.n_nodes();
    s.start(&vec![0.0; n], &vec![0.0; n])?;
    drive(&mut s, c, snaps, r, snapshot_2d("slit_grating"))
}

/// Two off-grid point sources with a ramped sinusoid.
fn run_sources(c: &RunConfig, snaps: &mut Snapshots, r: &mut RunReport) -> Result<()> {
    let [x0, x1, y0, y1] = c.bbox;
    let domain = Rectangle { x0, x1, y0, y1 };
    let (lx, ly) = (x1 - x0, y1 - y0);
    let omega = 20.0 * PI * c.c / lx;
    let sources = [0.3517, 0.6483]
        .iter()
        .map(|&fy| Source2d {
            shape: SourceShape::Point(x0 + 0.4012 * lx, y0 + fy * ly),
            waveform: time_fn(move |t| ramp(t, 0.05) * (omega * t).sin()),
            derivative: None,
            kind: SourceKind::Point,
        })
        .collect();
    let mut s = stepper_2d(c, &domain, c.bc.map(), sources)?;
    let n = s.mesh().grid.n_nodes();
    s.start(&vec![0.0; n], &vec![0.0; n])?;
    drive(&mut s, c, snaps, r, snapshot_2d("point_sources"))
}

/// Width of the time window over which self-convergence errors are maximised.
pub const SELF_WINDOW: f64 = 0.01;

fn level_of(c: &RunConfig) -> Result<Level> {
    let g = c.grid();
    Ok(Level { dx: g.dx, dy: if c.is_1d() { 0.0 } else { g.dy }, dt: c.params()?.dt })
}

/// Stepper advanced to `t_final` from the scenario's analytic start.
fn analytic_run(c: &RunConfig) -> Result<Stepper2d> {
    let domain = Circle { cx: 0.0, cy: 0.0, r: c.radius };
    let mode = bessel_mode(c);
    let mut s = stepper_2d(c, &domain, c.bc.map(), vec![])?;
    if embedded(c) {
        let dt = s.params().dt;
        let level = |t: f64| s.sample(|x, y| mode.eval(x, y, t));
        let (u0, u1, u2) = (level(0.0), level(-dt), level(-2.0 * dt));
        s.set_levels(0.0, u0, u1, Some(u2))?;
    } else {
        let u0 = s.sample(|x, y| mode.eval(x, y, 0.0));
        s.start(&u0, &vec![0.0; u0.len()])?;
    }
    s.run_until(c.t_final)?;
    Ok(s)
}

fn analytic_errors(c: &RunConfig) -> Result<(f64, f64)> {
    if c.scenario == "sine_1d" {
        let line = SweepLine::uniform(c.bbox[0], c.bbox[1], c.nx)?;
        let mut s = Stepper1d::new(c.params()?, line, LineBc::homogeneous_dirichlet(), vec![])?;
        let u0: Vec<f64> = s.line().nodes().iter().map(|&x| (PI * x).sin()).collect();
        s.start(&u0, &vec![0.0; u0.len()])?;
        s.run_until(c.t_final)?;
        let t = s.time();
        let exact: Vec<f64> = s.line().nodes().iter().map(|&x| (PI * x).sin() * (PI * c.c * t).cos()).collect();
        return Ok((line_error(s.u(), &exact, s.line(), Norm::L2)?, line_error(s.u(), &exact, s.line(), Norm::Linf)?));
    }
    let s = analytic_run(c)?;
    let mode = bessel_mode(c);
    let t = s.time();
    let e = |norm| grid_error_fn(s.u(), s.mesh(), |x, y| mode.eval(x, y, t), norm);
    Ok((e(Norm::L2)?, e(Norm::Linf)?))
}

/// Double-circle run; fields at every step with `t ≥ t_final - SELF_WINDOW`.
fn windowed_run(c: &RunConfig) -> Result<(Stepper2d, Vec<(usize, Vec<f64>)>)> {
    let domain = DoubleCircle { r: c.radius, gamma: c.gamma };
    let mut s = stepper_2d(c, &domain, c.bc.map(), vec![])?;
    let u0 = s.sample(double_bump(c));
    s.start(&u0, &vec![0.0; u0.len()])?;
    let dt = s.params().dt;
    let mut out = Vec::new();
    while s.time() <= c.t_final + 1e-9 * dt {
        if s.time() >= c.t_final - SELF_WINDOW - 1e-9 * dt {
            out.push((s.steps(), s.u().to_vec()));
        }
        s.step()?;
    }
    Ok((s, out))
}

/// Errors of `levels` resolutions `×1, ×2, …` against a reference one level
/// finer, maximised over the final window with steps matched exactly.
pub fn self_convergence(c: &RunConfig, levels: usize) -> Result<(Vec<Level>, Vec<f64>, Vec<f64>)> {
    let f_ref = 1usize << levels;
    let reference = c.refined(f_ref);
    let (s_ref, ref_fields) = windowed_run(&reference)?;
    let ref_grid = s_ref.mesh().grid;
    drop(s_ref);
    let (mut lv, mut l2, mut linf) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..levels {
        let r = 1usize << k;
        let cl = c.refined(r);
        let (s, fields) = windowed_run(&cl)?;
        let f = f_ref / r;
        let (mut e2, mut einf) = (0.0f64, 0.0f64);
        for (n, u) in &fields {
            let Some((_, fine)) = ref_fields.iter().find(|(m, _)| *m == n * f) else {
                continue;
            };
            let rr = analysis::restrict(fine, &ref_grid, &s.mesh().grid)?;
            e2 = e2.max(grid_error(u, &rr, s.mesh(), Norm::L2)?);
            einf = einf.max(grid_error(u, &rr, s.mesh(), Norm::Linf)?);
        }
        lv.push(level_of(&cl)?);
        l2.push(e2);
        linf.push(einf);
    }
    Ok((lv, l2, linf))
}

/// Refinement study over `levels` resolutions doubling each time. Writes
/// `convergence.csv` and `convergence.txt` to the output directory.
pub fn converge(c: &RunConfig, levels: usize) -> Result<RefinementReport> {
    if levels < 2 {
        return Err(MoltError::InsufficientSteps { need: 2, got: levels });
    }
    let (lv, l2, linf) = match c.scenario.as_str() {
        "sine_1d" | "bessel_dirichlet" | "bessel_neumann" => {
            let (mut lv, mut l2, mut linf) = (Vec::new(), Vec::new(), Vec::new());
            for k in 0..levels {
                let cl = c.refined(1 << k);
                let (a, b) = analytic_errors(&cl)?;
                lv.push(level_of(&cl)?);
                l2.push(a);
                linf.push(b);
            }
            (lv, l2, linf)
        }
        "double_circle" => self_convergence(c, levels)?,
        other => return Err(invalid("scenario", &format!("{other} has no convergence study"))),
    };
    let report = RefinementReport::new(lv, l2, linf, 2.0)?;
    let dir = output_dir(c);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("convergence.csv"), report.csv())?;
    fs::write(dir.join("convergence.txt"), report.table())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str, dir: &Path) -> RunConfig {
        let mut c = parse_config(text).unwrap();
        c.output_dir = dir.to_path_buf();
        c
    }

    #[test]
    fn every_listed_scenario_has_defaults() {
        for (name, _) in SCENARIOS {
            let c = parse_config(&format!("scenario = {name}")).unwrap();
            assert_eq!(c.scenario, name);
        }
    }

    #[test]
    fn config_errors_are_classified() {
        let e = parse_config("scenario = sine_1d\nfoo = 1").unwrap_err();
        assert!(matches!(e, MoltError::UnknownKey(ref k) if k == "foo"));
        assert_eq!(e.exit_code(), 2);
        assert!(matches!(parse_config("cfl = 2"), Err(MoltError::MissingScenario)));
        assert!(matches!(parse_config("scenario = sine_1d\ncfl = -1"), Err(MoltError::InvalidValue { .. })));
        assert!(matches!(parse_config("scenario = sine_1d\nnx = ten"), Err(MoltError::InvalidValue { .. })));
        assert!(matches!(parse_config("scenario = nope"), Err(MoltError::InvalidValue { .. })));
        assert!(matches!(parse_config("scenario = sine_1d\nsnapshots = 0.5, 3"), Err(MoltError::InvalidValue { .. })));
        let e = parse_config("scenario = bessel_neumann\nvariant = dispersive").unwrap_err();
        assert!(matches!(e, MoltError::IncompatibleBC(_)));
        assert_eq!(e.exit_code(), 2);
        assert!(parse_config("scenario = bessel_neumann\nvariant = dissipative\nepsilon = 0.1\nbeta = 1.9").is_ok());
        assert!(matches!(
            parse_config("scenario = generic\nbc_top = outflow\ncorrection = symmetric"),
            Err(MoltError::IncompatibleBC(_))
        ));
        assert!(matches!(parse_config("scenario = pulse_outflow_1d\nvariant = diffusive"), Err(MoltError::IncompatibleBC(_))));
    }

    #[test]
    fn comments_overrides_and_outflow_default() {
        let c = parse_config("# header\nscenario = generic  # trailing\nn = 32\nny = 16\nbc_top = outflow\nsnapshots = 0.1,0.2\n").unwrap();
        assert_eq!((c.nx, c.ny), (32, 16));
        assert_eq!(c.bc.edge(3), BcKind::Outflow);
        assert_eq!(c.bc.edge(0), BcKind::Dirichlet);
        assert_eq!(c.correction, Correction::Off);
        assert_eq!(c.snapshots, vec![0.1, 0.2]);
        let d = parse_config("scenario = double_circle").unwrap();
        assert_eq!(d.correction, Correction::Symmetric);
        assert_eq!(d.h(), 0.78 / 180.0);
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = build_mesh(&Circle { cx: 0.0, cy: 0.0, r: 1.0 }, Grid::new(-1.2, 1.2, 12, -1.2, 1.2, 12), LineMode::BoundaryEndpoints).unwrap();
        let field: Vec<f64> = (0..mesh.grid.n_nodes()).map(|n| (n as f64).sqrt() / 3.0).collect();
        let path = dir.path().join("s.csv");
        write_snapshot(&field, &mesh, &path).unwrap();
        let rows = read_snapshot(&path).unwrap();
        let interior: Vec<usize> = mesh.interior().collect();
        assert_eq!(rows.len(), interior.len());
        for (row, &n) in rows.iter().zip(&interior) {
            let (x, y) = mesh.point(n);
            assert_eq!(row, &vec![x, y, field[n]]);
        }
        assert!(write_snapshot(&field[1..], &mesh, &path).is_err());
    }

    #[test]
    fn sine_run_writes_outputs_and_is_accurate() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg("scenario = sine_1d\nnx = 100\nsnapshots = 0, 0.5, 1", dir.path());
        let r = run_scenario(&c).unwrap();
        assert_eq!(r.files.len(), 3);
        assert!(dir.path().join("summary.txt").exists());
        let err = r.metrics.iter().find(|(k, _)| k == "linf_error").unwrap().1;
        assert!(err < 1e-3, "{err}");
        let last = read_snapshot(r.files.last().unwrap()).unwrap();
        assert_eq!(last.len(), 101);
    }

    #[test]
    fn small_runs_of_every_2d_scenario() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            "scenario = double_circle\nnx = 40\nny = 45\nt_final = 0.1",
            "scenario = bessel_dirichlet\nn = 32\nny = 32\nt_final = 0.2",
            "scenario = quarter_circle\nn = 32\nny = 32\nt_final = 0.2\nsnapshots = 0.1, 0.2",
            "scenario = bessel_neumann\nn = 32\nny = 32\nt_final = 0.2",
            "scenario = slit_grating\nn = 40\nny = 41\nt_final = 0.2\nsnapshots = 0.2",
            "scenario = point_sources\nn = 40\nny = 40\nt_final = 0.2\nsnapshots = 0.2",
            "scenario = generic\nn = 32\nny = 32\nt_final = 0.2",
            "scenario = pulse_outflow_1d\nn = 100\nt_final = 0.5",
        ];
        for text in cases {
            let r = run_scenario(&cfg(text, dir.path())).unwrap_or_else(|e| panic!("{text}: {e}"));
            assert!(r.final_max.is_finite() && r.final_max < 10.0, "{text}: {}", r.final_max);
        }
        let q = run_scenario(&cfg(cases[2], dir.path())).unwrap();
        assert_eq!(q.files.len(), 6);
        assert!(q.metrics.iter().any(|(k, _)| k == "t0.2000_overlap_linf_diff"));
        let n = run_scenario(&cfg(cases[3], dir.path())).unwrap();
        assert!(n.max_iterations.unwrap() <= 200);
    }

    #[test]
    fn convergence_study_for_sine() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg("scenario = sine_1d\nn = 20\nt_final = 0.5", dir.path());
        let rep = converge(&c, 3).unwrap();
        assert_eq!(rep.levels.len(), 3);
        assert!(rep.l2_orders.iter().all(|&p| (p - 2.0).abs() < 0.3), "{:?}", rep.l2_orders);
        assert!(dir.path().join("convergence.csv").exists());
        assert!(matches!(converge(&c, 1), Err(MoltError::InsufficientSteps { .. })));
        let g = cfg("scenario = generic", dir.path());
        assert!(converge(&g, 2).is_err());
    }
}
