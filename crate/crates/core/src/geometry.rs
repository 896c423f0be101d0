//! Embedded Cartesian meshes cut from level-set domains.
//!
//! Grid nodes sit at `x0 + i dx, y0 + k dy`. A node is inside when the level
//! set is `≤ tol` there (boundary nodes count as inside). Every maximal run of
//! inside nodes along a grid row or column becomes one sweep line, closed by
//! the boundary points found by bisection, or by the adjacent ghost nodes.

use crate::error::{MoltError, Result};
use crate::fastconv::SweepLine;

/// Uniform node lattice; `nx`, `ny` count cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    pub fn new(xlo: f64, xhi: f64, nx: usize, ylo: f64, yhi: f64, ny: usize) -> Self {
        Grid {
            x0: xlo,
            y0: ylo,
            dx: (xhi - xlo) / nx as f64,
            dy: (yhi - ylo) / ny as f64,
            nx,
            ny,
        }
    }
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }
    pub fn y(&self, k: usize) -> f64 {
        self.y0 + k as f64 * self.dy
    }
    pub fn idx(&self, i: usize, k: usize) -> usize {
        k * (self.nx + 1) + i
    }
    /// `(i, k)` of a flat index.
    pub fn ik(&self, n: usize) -> (usize, usize) {
        (n % (self.nx + 1), n / (self.nx + 1))
    }
    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }
    /// Factor-`r` refinement covering the same box.
    pub fn refined(&self, r: usize) -> Self {
        Grid {
            dx: self.dx / r as f64,
            dy: self.dy / r as f64,
            nx: self.nx * r,
            ny: self.ny * r,
            ..*self
        }
    }
}

/// Level set `C(x, y)`: negative inside, positive outside.
pub trait Domain: Send + Sync {
    fn level(&self, x: f64, y: f64) -> f64;

    /// Boundary component closest to `(x, y)`.
    fn tag(&self, _x: f64, _y: f64) -> usize {
        0
    }

    /// Analytic gradient, if known. Otherwise centred differences are used.
    fn gradient(&self, _x: f64, _y: f64) -> Option<(f64, f64)> {
        None
    }

    /// Heights of zero-thickness walls cutting the vertical line at `x`.
    fn cuts_y(&self, _x: f64) -> Vec<f64> {
        Vec::new()
    }

    /// Tag reported for wall cuts.
    fn cut_tag(&self) -> usize {
        usize::MAX
    }

    fn scale(&self) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Domain for Circle {
    fn level(&self, x: f64, y: f64) -> f64 {
        (x - self.cx).hypot(y - self.cy) - self.r
    }
    fn gradient(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let r = dx.hypot(dy).max(f64::MIN_POSITIVE);
        Some((dx / r, dy / r))
    }
    fn scale(&self) -> f64 {
        self.r
    }
}

/// Union of two disks of radius `r` centred at `(±gamma, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleCircle {
    pub r: f64,
    pub gamma: f64,
}

impl DoubleCircle {
    fn parts(&self, x: f64, y: f64) -> [f64; 2] {
        [(x + self.gamma).hypot(y) - self.r, (x - self.gamma).hypot(y) - self.r]
    }
}

impl Domain for DoubleCircle {
    fn level(&self, x: f64, y: f64) -> f64 {
        let [a, b] = self.parts(x, y);
        a.min(b)
    }
    fn tag(&self, x: f64, y: f64) -> usize {
        let [a, b] = self.parts(x, y);
        usize::from(b < a)
    }
    fn gradient(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let c = if self.tag(x, y) == 0 { -self.gamma } else { self.gamma };
        Circle { cx: c, cy: 0.0, r: self.r }.gradient(x, y)
    }
    fn scale(&self) -> f64 {
        self.r + self.gamma
    }
}

/// Second-quadrant quarter disk `x ≤ 0, y ≥ 0, r ≤ R`.
/// Tags: 0 arc, 1 edge `x = 0`, 2 edge `y = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarterCircle {
    pub r: f64,
}

impl QuarterCircle {
    fn parts(&self, x: f64, y: f64) -> [f64; 3] {
        [x.hypot(y) - self.r, x, -y]
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl Domain for QuarterCircle {
    fn level(&self, x: f64, y: f64) -> f64 {
        let p = self.parts(x, y);
        p[0].max(p[1]).max(p[2])
    }
    fn tag(&self, x: f64, y: f64) -> usize {
        argmax(&self.parts(x, y))
    }
    fn gradient(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        match self.tag(x, y) {
            0 => Circle { cx: 0.0, cy: 0.0, r: self.r }.gradient(x, y),
            1 => Some((1.0, 0.0)),
            _ => Some((0.0, -1.0)),
        }
    }
    fn scale(&self) -> f64 {
        self.r
    }
}

/// Axis-aligned box. Tags: 0 left, 1 right, 2 bottom, 3 top.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rectangle {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rectangle {
    fn parts(&self, x: f64, y: f64) -> [f64; 4] {
        [self.x0 - x, x - self.x1, self.y0 - y, y - self.y1]
    }
}

impl Domain for Rectangle {
    fn level(&self, x: f64, y: f64) -> f64 {
        self.parts(x, y).iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }
    fn tag(&self, x: f64, y: f64) -> usize {
        argmax(&self.parts(x, y))
    }
    fn gradient(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        Some([(-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0)][self.tag(x, y)])
    }
    fn scale(&self) -> f64 {
        (self.x1 - self.x0).max(self.y1 - self.y0)
    }
}

/// One period `[-d/2, d/2] × [-ly/2, ly/2]` of a grating: a screen along
/// `y = 0` with an aperture of width `a` centred at `x = 0`. Tag 4 is the screen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlitGrating {
    pub d: f64,
    pub a: f64,
    pub ly: f64,
}

impl SlitGrating {
    pub const SCREEN: usize = 4;
    fn rect(&self) -> Rectangle {
        Rectangle {
            x0: -0.5 * self.d,
            x1: 0.5 * self.d,
            y0: -0.5 * self.ly,
            y1: 0.5 * self.ly,
        }
    }
}

impl Domain for SlitGrating {
    fn level(&self, x: f64, y: f64) -> f64 {
        self.rect().level(x, y)
    }
    fn tag(&self, x: f64, y: f64) -> usize {
        self.rect().tag(x, y)
    }
    fn gradient(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        self.rect().gradient(x, y)
    }
    fn cuts_y(&self, x: f64) -> Vec<f64> {
        if x.abs() >= 0.5 * self.a {
            vec![0.0]
        } else {
            Vec::new()
        }
    }
    fn cut_tag(&self) -> usize {
        Self::SCREEN
    }
    fn scale(&self) -> f64 {
        self.d.max(self.ly)
    }
}

/// Unit outward normal: analytic gradient if the domain has one, else centred
/// differences with step `h`.
pub fn normal_at(domain: &dyn Domain, x: f64, y: f64, h: f64) -> (f64, f64) {
    let (gx, gy) = domain.gradient(x, y).unwrap_or_else(|| {
        (
            (domain.level(x + h, y) - domain.level(x - h, y)) / (2.0 * h),
            (domain.level(x, y + h) - domain.level(x, y - h)) / (2.0 * h),
        )
    });
    let n = gx.hypot(gy).max(f64::MIN_POSITIVE);
    (gx / n, gy / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Exterior,
    Ghost,
}

/// How sweep lines terminate: at the bisected boundary points (Dirichlet,
/// grid-aligned conditions) or at the ghost nodes just outside (embedded Neumann).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineMode {
    BoundaryEndpoints,
    GhostEndpoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineEnd {
    /// Coordinate along the line.
    pub pos: f64,
    pub point: (f64, f64),
    /// Boundary component the line leaves through.
    pub tag: usize,
    /// Index along the line when the end sits on a grid node.
    pub node: Option<usize>,
}

/// One run of a grid row (`Axis::X`) or column (`Axis::Y`).
#[derive(Debug, Clone)]
pub struct MeshLine {
    pub axis: Axis,
    /// Row index `k` for x-lines, column index `i` for y-lines.
    pub fixed: usize,
    /// Grid nodes `lo..=hi` along the line carried by the sweep.
    pub lo: usize,
    pub hi: usize,
    pub left: LineEnd,
    pub right: LineEnd,
    pub sweep: SweepLine,
}

impl MeshLine {
    pub fn flat(&self, grid: &Grid, s: usize) -> usize {
        match self.axis {
            Axis::X => grid.idx(s, self.fixed),
            Axis::Y => grid.idx(self.fixed, s),
        }
    }

    /// Flat indices of the grid nodes on the line.
    pub fn grid_nodes<'a>(&'a self, grid: &'a Grid) -> impl Iterator<Item = usize> + 'a {
        (self.lo..=self.hi).map(move |s| self.flat(grid, s))
    }

    /// Offset of grid node `lo` in the sweep vector.
    pub fn offset(&self) -> usize {
        usize::from(self.left.node.is_none())
    }

    pub fn len(&self) -> usize {
        self.sweep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sweep.is_empty()
    }

    /// Line values from a grid field; off-grid ends take `left`, `right`.
    pub fn gather(&self, grid: &Grid, field: &[f64], left: f64, right: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        if self.left.node.is_none() {
            v.push(left);
        }
        v.extend(self.grid_nodes(grid).map(|n| field[n]));
        if self.right.node.is_none() {
            v.push(right);
        }
        v
    }

    /// Writes line values back to the grid nodes.
    pub fn scatter(&self, grid: &Grid, vals: &[f64], field: &mut [f64]) {
        let off = self.offset();
        for (j, n) in self.grid_nodes(grid).enumerate() {
            field[n] = vals[off + j];
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddedMesh {
    pub grid: Grid,
    pub mode: LineMode,
    pub mask: Vec<NodeKind>,
    /// Level set at every node.
    pub level: Vec<f64>,
    pub x_lines: Vec<MeshLine>,
    pub y_lines: Vec<MeshLine>,
    pub scale: f64,
    /// Inside nodes lying on no line of some axis (isolated tangent points).
    pub isolated: Vec<usize>,
}

impl EmbeddedMesh {
    pub fn is_interior(&self, n: usize) -> bool {
        self.mask[n] == NodeKind::Interior
    }
    pub fn interior(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.mask.len()).filter(move |&n| self.is_interior(n))
    }
    pub fn ghosts(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.mask.len()).filter(move |&n| self.mask[n] == NodeKind::Ghost)
    }
    pub fn lines(&self, axis: Axis) -> &[MeshLine] {
        match axis {
            Axis::X => &self.x_lines,
            Axis::Y => &self.y_lines,
        }
    }
    /// Node lies on the boundary within the level-set tolerance.
    pub fn on_boundary(&self, n: usize) -> bool {
        self.level[n].abs() <= ON_BOUNDARY * self.scale
    }
    pub fn point(&self, n: usize) -> (f64, f64) {
        let (i, k) = self.grid.ik(n);
        (self.grid.x(i), self.grid.y(k))
    }
}

const ON_BOUNDARY: f64 = 1e-12;
const SNAP: f64 = 1e-9;

/// Root of `f` in `[inside, outside]` with `f(inside) ≤ 0 < f(outside)`.
fn bisect(f: impl Fn(f64) -> f64, mut inside: f64, mut outside: f64, tol: f64) -> f64 {
    for _ in 0..200 {
        if (outside - inside).abs() <= tol {
            break;
        }
        let mid = 0.5 * (inside + outside);
        if f(mid) <= 0.0 {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    // closer of the two bracket ends
    if f(inside).abs() <= f(outside).abs() {
        inside
    } else {
        outside
    }
}

struct Scan<'a> {
    domain: &'a dyn Domain,
    grid: &'a Grid,
    mode: LineMode,
    level: &'a [f64],
    scale: f64,
}

impl Scan<'_> {
    fn n_along(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.grid.nx,
            Axis::Y => self.grid.ny,
        }
    }
    fn h(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.grid.dx,
            Axis::Y => self.grid.dy,
        }
    }
    fn coord(&self, axis: Axis, s: usize) -> f64 {
        match axis {
            Axis::X => self.grid.x(s),
            Axis::Y => self.grid.y(s),
        }
    }
    fn point(&self, axis: Axis, fixed: usize, pos: f64) -> (f64, f64) {
        match axis {
            Axis::X => (pos, self.grid.y(fixed)),
            Axis::Y => (self.grid.x(fixed), pos),
        }
    }
    fn level_at(&self, axis: Axis, fixed: usize, pos: f64) -> f64 {
        let (x, y) = self.point(axis, fixed, pos);
        self.domain.level(x, y)
    }
    fn flat(&self, axis: Axis, fixed: usize, s: usize) -> usize {
        match axis {
            Axis::X => self.grid.idx(s, fixed),
            Axis::Y => self.grid.idx(fixed, s),
        }
    }
    fn inside(&self, axis: Axis, fixed: usize, s: usize) -> bool {
        self.level[self.flat(axis, fixed, s)] <= ON_BOUNDARY * self.scale
    }

    /// End of the run whose outermost inside node is `s`; `dir` is −1 for the
    /// left end and +1 for the right end.
    fn end(&self, axis: Axis, fixed: usize, s: usize, dir: i64, cut: Option<f64>) -> Result<LineEnd> {
        let h = self.h(axis);
        let here = self.coord(axis, s);
        let neighbour = s as i64 + dir;
        let has_neighbour = neighbour >= 0 && neighbour <= self.n_along(axis) as i64;
        let ghost = |tag: usize| -> Result<LineEnd> {
            if !has_neighbour {
                return Err(MoltError::DomainExceedsBox(self.point(axis, fixed, here).0, self.point(axis, fixed, here).1));
            }
            let g = neighbour as usize;
            let pos = self.coord(axis, g);
            Ok(LineEnd { pos, point: self.point(axis, fixed, pos), tag, node: Some(g) })
        };
        let tag_at = |pos: f64| {
            let (x, y) = self.point(axis, fixed, pos + dir as f64 * 1e-6 * h);
            self.domain.tag(x, y)
        };

        if let Some(c) = cut {
            if self.mode == LineMode::GhostEndpoints {
                return Err(MoltError::IncompatibleBC("ghost endpoints across a wall cut".into()));
            }
            let node = ((c - here).abs() <= SNAP * h).then_some(s);
            let pos = if node.is_some() { here } else { c };
            return Ok(LineEnd { pos, point: self.point(axis, fixed, pos), tag: self.domain.cut_tag(), node });
        }

        // a node on a boundary the line runs along is not an end: bisect anyway
        let root = if !has_neighbour {
            if self.level[self.flat(axis, fixed, s)].abs() > ON_BOUNDARY * self.scale {
                let (x, y) = self.point(axis, fixed, here);
                return Err(MoltError::DomainExceedsBox(x, y));
            }
            here
        } else {
            let out = self.coord(axis, neighbour as usize);
            let r = bisect(|p| self.level_at(axis, fixed, p), here, out, 1e-14 * self.scale.max(h));
            if self.level_at(axis, fixed, r).abs() > ON_BOUNDARY * self.scale {
                return Err(MoltError::TangentIntersection(r));
            }
            if (r - here).abs() <= SNAP * h {
                here
            } else {
                r
            }
        };
        let tag = tag_at(root);
        match self.mode {
            LineMode::GhostEndpoints => ghost(tag),
            LineMode::BoundaryEndpoints if root == here => {
                Ok(LineEnd { pos: here, point: self.point(axis, fixed, here), tag, node: Some(s) })
            }
            LineMode::BoundaryEndpoints => {
                Ok(LineEnd { pos: root, point: self.point(axis, fixed, root), tag, node: None })
            }
        }
    }

    /// Runs of inside nodes on one row or column, split at wall cuts.
    fn runs(&self, axis: Axis, fixed: usize) -> Vec<(usize, usize, Option<f64>, Option<f64>)> {
        let cuts = match axis {
            Axis::Y => self.domain.cuts_y(self.grid.x(fixed)),
            Axis::X => Vec::new(),
        };
        let cut_between = |s: usize| {
            let (lo, hi) = (self.coord(axis, s), self.coord(axis, s + 1));
            cuts.iter().copied().find(|&c| c > lo && c <= hi)
        };
        let mut out = Vec::new();
        let mut open: Option<(usize, Option<f64>)> = None;
        for s in 0..=self.n_along(axis) {
            if !self.inside(axis, fixed, s) {
                if let Some((first, lc)) = open.take() {
                    out.push((first, s - 1, lc, None));
                }
                continue;
            }
            match open {
                None => open = Some((s, None)),
                Some((first, lc)) => {
                    if let Some(c) = cut_between(s - 1) {
                        out.push((first, s - 1, lc, Some(c)));
                        open = Some((s, Some(c)));
                    }
                }
            }
        }
        if let Some((first, lc)) = open {
            out.push((first, self.n_along(axis), lc, None));
        }
        out
    }

    fn lines(&self, axis: Axis, isolated: &mut Vec<usize>) -> Result<Vec<MeshLine>> {
        let n_fixed = match axis {
            Axis::X => self.grid.ny,
            Axis::Y => self.grid.nx,
        };
        let mut lines = Vec::new();
        for fixed in 0..=n_fixed {
            for (first, last, lc, rc) in self.runs(axis, fixed) {
                let left = self.end(axis, fixed, first, -1, lc)?;
                let right = self.end(axis, fixed, last, 1, rc)?;
                let lo = left.node.unwrap_or(first);
                let hi = right.node.unwrap_or(last);
                let mut nodes = Vec::with_capacity(hi - lo + 3);
                if left.node.is_none() {
                    nodes.push(left.pos);
                }
                nodes.extend((lo..=hi).map(|s| self.coord(axis, s)));
                if right.node.is_none() {
                    nodes.push(right.pos);
                }
                if nodes.len() < 2 {
                    isolated.push(self.flat(axis, fixed, first));
                    continue;
                }
                let sweep = SweepLine::new(nodes)?;
                lines.push(MeshLine { axis, fixed, lo, hi, left, right, sweep });
            }
        }
        Ok(lines)
    }
}

/// Cuts `domain` out of `grid`.
pub fn build_mesh(domain: &dyn Domain, grid: Grid, mode: LineMode) -> Result<EmbeddedMesh> {
    let scale = domain.scale();
    let level: Vec<f64> = (0..grid.n_nodes())
        .map(|n| {
            let (i, k) = grid.ik(n);
            domain.level(grid.x(i), grid.y(k))
        })
        .collect();
    let inside: Vec<bool> = level.iter().map(|&c| c <= ON_BOUNDARY * scale).collect();
    if !inside.iter().any(|&b| b) {
        return Err(MoltError::NoInteriorNodes);
    }
    let mask = (0..grid.n_nodes())
        .map(|n| {
            if inside[n] {
                return NodeKind::Interior;
            }
            let (i, k) = grid.ik(n);
            let nb = [
                (i > 0).then(|| grid.idx(i - 1, k)),
                (i < grid.nx).then(|| grid.idx(i + 1, k)),
                (k > 0).then(|| grid.idx(i, k - 1)),
                (k < grid.ny).then(|| grid.idx(i, k + 1)),
            ];
            if nb.iter().flatten().any(|&m| inside[m]) {
                NodeKind::Ghost
            } else {
                NodeKind::Exterior
            }
        })
        .collect();
    let scan = Scan { domain, grid: &grid, mode, level: &level, scale };
    let mut isolated = Vec::new();
    let x_lines = scan.lines(Axis::X, &mut isolated)?;
    let y_lines = scan.lines(Axis::Y, &mut isolated)?;
    isolated.sort_unstable();
    isolated.dedup();
    Ok(EmbeddedMesh { grid, mode, mask, level, x_lines, y_lines, scale, isolated })
}

/// Four cell nodes, counter-clockwise from `(i, k)`, with bilinear weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellInterp {
    pub nodes: [usize; 4],
    pub weights: [f64; 4],
}

impl CellInterp {
    pub fn eval(&self, field: &[f64]) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&n, &w)| w * field[n]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GhostStencil {
    pub ghost: usize,
    pub boundary_pt: (f64, f64),
    pub normal: (f64, f64),
    pub xi_g: f64,
    pub xi_i: f64,
    pub xi_ii: f64,
    pub gamma_i: f64,
    pub gamma_ii: f64,
    pub interp_i: CellInterp,
    pub interp_ii: CellInterp,
}

impl GhostStencil {
    /// Ghost value from the interior field.
    pub fn eval(&self, field: &[f64]) -> f64 {
        self.gamma_i * self.interp_i.eval(field) + self.gamma_ii * self.interp_ii.eval(field)
    }
}

/// Weights of `p` in cell `(i, k)`: nodes `(i,k), (i+1,k), (i+1,k+1), (i,k+1)`.
pub fn bilinear_weights(p: (f64, f64), grid: &Grid, cell: (usize, usize)) -> Result<[f64; 4]> {
    let (i, k) = cell;
    if i >= grid.nx || k >= grid.ny {
        return Err(MoltError::PointOutsideCell(p.0, p.1));
    }
    let sx = (p.0 - grid.x(i)) / grid.dx;
    let sy = (p.1 - grid.y(k)) / grid.dy;
    let slack = 1e-12;
    if !(-slack..=1.0 + slack).contains(&sx) || !(-slack..=1.0 + slack).contains(&sy) {
        return Err(MoltError::PointOutsideCell(p.0, p.1));
    }
    let (sx, sy) = (sx.clamp(0.0, 1.0), sy.clamp(0.0, 1.0));
    Ok([(1.0 - sx) * (1.0 - sy), sx * (1.0 - sy), sx * sy, (1.0 - sx) * sy])
}

/// Cell containing `p`; points on the last grid line go to the last cell.
pub fn locate(p: (f64, f64), grid: &Grid) -> Result<(usize, usize)> {
    let fx = ((p.0 - grid.x0) / grid.dx).floor();
    let fy = ((p.1 - grid.y0) / grid.dy).floor();
    if fx < 0.0 || fy < 0.0 || fx > grid.nx as f64 || fy > grid.ny as f64 {
        return Err(MoltError::PointOutsideCell(p.0, p.1));
    }
    Ok(((fx as usize).min(grid.nx - 1), (fy as usize).min(grid.ny - 1)))
}

fn cell_interp(mesh: &EmbeddedMesh, p: (f64, f64), ghost: usize) -> Result<CellInterp> {
    let g = &mesh.grid;
    let (i, k) = locate(p, g)?;
    let weights = bilinear_weights(p, g, (i, k))?;
    let nodes = [g.idx(i, k), g.idx(i + 1, k), g.idx(i + 1, k + 1), g.idx(i, k + 1)];
    if nodes.iter().any(|&n| !mesh.is_interior(n)) {
        return Err(MoltError::StencilNotInterior(ghost));
    }
    Ok(CellInterp { nodes, weights })
}

/// Hermite-Birkhoff weights for a zero normal derivative at the boundary.
pub fn hb_gammas(xi_g: f64, xi_i: f64, xi_ii: f64) -> (f64, f64) {
    let d = xi_ii * xi_ii - xi_i * xi_i;
    ((xi_ii * xi_ii - xi_g * xi_g) / d, (xi_g * xi_g - xi_i * xi_i) / d)
}

/// Stencils for every ghost node; `ds` is the spacing of the two interior
/// points along the inward normal (`√2·dx` typically).
pub fn build_ghost_stencils(mesh: &EmbeddedMesh, domain: &dyn Domain, ds: f64) -> Result<Vec<GhostStencil>> {
    let h = mesh.grid.dx.max(mesh.grid.dy);
    let fd = mesh.grid.dx.min(mesh.grid.dy) / 100.0;
    mesh.ghosts()
        .map(|ghost| {
            let (gx, gy) = mesh.point(ghost);
            let normal = normal_at(domain, gx, gy, fd);
            let along = |t: f64| domain.level(gx - t * normal.0, gy - t * normal.1);
            let mut t_in = 0.25 * h;
            while along(t_in) > 0.0 {
                t_in += 0.25 * h;
                if t_in > 4.0 * h {
                    return Err(MoltError::TangentIntersection(gx));
                }
            }
            let xi_g = bisect(along, t_in, 0.0, 1e-14 * mesh.scale.max(h));
            let boundary_pt = (gx - xi_g * normal.0, gy - xi_g * normal.1);
            let at = |xi: f64| (gx - (xi_g + xi) * normal.0, gy - (xi_g + xi) * normal.1);
            let (xi_i, xi_ii) = (ds, 2.0 * ds);
            let (gamma_i, gamma_ii) = hb_gammas(xi_g, xi_i, xi_ii);
            Ok(GhostStencil {
                ghost,
                boundary_pt,
                normal,
                xi_g,
                xi_i,
                xi_ii,
                gamma_i,
                gamma_ii,
                interp_i: cell_interp(mesh, at(xi_i), ghost)?,
                interp_ii: cell_interp(mesh, at(xi_ii), ghost)?,
            })
        })
        .collect()
}
