//! Dimensionally split 2D stepping on embedded meshes.
//!
//! Fields live on the full node lattice of the mesh grid; exterior nodes hold
//! zero and ghost nodes hold whatever the last closure left there. The
//! centered step is `u^{n+1} = 2u^n − u^{n−1} − β²C[u^n] + β²G_S`, with
//! `C = L_x^{-1}D_y + L_y^{-1}D_x` assembled from one x-sweep and two y-sweeps.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::bc1d::{end_coeffs, periodic_coeffs, EndCondition, EndData, OutflowState};
use crate::error::{MoltError, Result};
use crate::fastconv::{LineKernel, SweepLine};
use crate::geometry::{Axis, EmbeddedMesh, GhostStencil, LineEnd, LineMode, MeshLine};
use crate::params::{FieldHistory, SchemeParams, Variant};
use crate::stepper1d::{blown_up, source_mass_factor, SourceKind, TimeFn};

/// Boundary data `g(x, y, t)`.
pub type SpaceTimeFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

pub fn space_time_fn(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> SpaceTimeFn {
    Arc::new(f)
}

/// Condition on one boundary component. Neumann is homogeneous and must be
/// grid-aligned; curved Neumann boundaries use a ghost-endpoint mesh.
#[derive(Clone)]
pub enum EdgeBc {
    Dirichlet(SpaceTimeFn),
    Neumann,
    Outflow,
    Periodic,
}

impl EdgeBc {
    pub fn zero_dirichlet() -> Self {
        EdgeBc::Dirichlet(space_time_fn(|_, _, _| 0.0))
    }
    fn name(&self) -> &'static str {
        match self {
            EdgeBc::Dirichlet(_) => "dirichlet",
            EdgeBc::Neumann => "neumann",
            EdgeBc::Outflow => "outflow",
            EdgeBc::Periodic => "periodic",
        }
    }
}

impl std::fmt::Debug for EdgeBc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Conditions by boundary tag, with a fallback for untagged components.
#[derive(Clone, Debug)]
pub struct BcMap {
    by_tag: BTreeMap<usize, EdgeBc>,
    fallback: EdgeBc,
}

impl BcMap {
    pub fn uniform(bc: EdgeBc) -> Self {
        BcMap { by_tag: BTreeMap::new(), fallback: bc }
    }
    pub fn with(mut self, tag: usize, bc: EdgeBc) -> Self {
        self.by_tag.insert(tag, bc);
        self
    }
    pub fn get(&self, tag: usize) -> &EdgeBc {
        self.by_tag.get(&tag).unwrap_or(&self.fallback)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceShape {
    Point(f64, f64),
    /// Uniform in x along the line `y = y_s`.
    LineY(f64),
}

#[derive(Clone)]
pub struct Source2d {
    pub shape: SourceShape,
    pub waveform: TimeFn,
    pub derivative: Option<TimeFn>,
    pub kind: SourceKind,
}

impl std::fmt::Debug for Source2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Source2d").field("shape", &self.shape).field("kind", &self.kind).finish()
    }
}

impl Source2d {
    pub fn strength(&self, t: f64, p: &SchemeParams) -> f64 {
        match self.kind {
            SourceKind::Point => (self.waveform)(t),
            SourceKind::Soft => {
                let d = match &self.derivative {
                    Some(d) => d(t),
                    None => ((self.waveform)(t + p.dt) - (self.waveform)(t - p.dt)) / (2.0 * p.dt),
                };
                2.0 / p.c * d
            }
        }
    }
}

/// Form of the splitting correction added to the `D_xy` step. With
/// `v₁ = L_x^{-1}u`, `v₂ = L_y^{-1}v₁`, `v₃ = L_x^{-1}L_y^{-1}u`:
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correction {
    /// `β²(D_y[u] − v₁ + v₃)`, so the step is exactly `−β²C[u]` with
    /// `C = L_x^{-1}D_y + L_y^{-1}D_x` even when the sweeps do not commute.
    Symmetric,
    /// `β²(D_y[u] − v₁ + v₂)`. Equal to `Symmetric` on rectangles; on curved
    /// domains the non-commuting sweeps give the step complex modes.
    Expanded,
    /// `β²(D_y[u] + v₁ − v₂)`, unstable.
    Flipped,
    Off,
}

/// Convergence record of the last embedded-Neumann solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterStats {
    /// Iterations used by each phase of the last step.
    pub iterations: Vec<usize>,
    /// Max-norm change per iteration, per phase.
    pub changes: Vec<Vec<f64>>,
}

impl IterStats {
    pub fn max_iterations(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(0)
    }
    /// Largest ratio of successive changes once they fall below `floor`·first.
    pub fn contraction(&self) -> f64 {
        self.changes
            .iter()
            .flat_map(|c| c.windows(2).filter(|w| w[0] > 1e-12).map(|w| w[1] / w[0]))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EndKind {
    Dirichlet,
    Neumann,
    Outflow,
    Ghost,
}

struct LinePlan {
    kernel: LineKernel,
    left: EndKind,
    right: EndKind,
    periodic: bool,
}

fn end_kind(bcs: &BcMap, end: &LineEnd, mode: LineMode) -> Result<EndKind> {
    if mode == LineMode::GhostEndpoints {
        return Ok(EndKind::Ghost);
    }
    let k = match bcs.get(end.tag) {
        EdgeBc::Dirichlet(_) => EndKind::Dirichlet,
        EdgeBc::Neumann => EndKind::Neumann,
        EdgeBc::Outflow => EndKind::Outflow,
        EdgeBc::Periodic => return Ok(EndKind::Ghost),
    };
    if k != EndKind::Dirichlet && end.node.is_none() {
        return Err(MoltError::IncompatibleBC(format!(
            "{} on a boundary that is not grid-aligned",
            bcs.get(end.tag).name()
        )));
    }
    Ok(k)
}

fn plan_lines(mesh: &EmbeddedMesh, bcs: &BcMap, axis: Axis, alpha: f64) -> Result<Vec<LinePlan>> {
    mesh.lines(axis)
        .iter()
        .map(|line| {
            let per = |e: &LineEnd| mesh.mode == LineMode::BoundaryEndpoints && matches!(bcs.get(e.tag), EdgeBc::Periodic);
            let periodic = match (per(&line.left), per(&line.right)) {
                (true, true) => true,
                (false, false) => false,
                _ => return Err(MoltError::IncompatibleBC("periodic on one end of a line only".into())),
            };
            let kernel = if periodic {
                LineKernel::periodic(&line.sweep, alpha)?
            } else {
                LineKernel::new(&line.sweep, alpha)?
            };
            Ok(LinePlan {
                kernel,
                left: end_kind(bcs, &line.left, mesh.mode)?,
                right: end_kind(bcs, &line.right, mesh.mode)?,
                periodic,
            })
        })
        .collect()
}

fn end_flat(mesh: &EmbeddedMesh, line: &MeshLine, right: bool) -> Option<usize> {
    let e = if right { &line.right } else { &line.left };
    e.node.map(|s| line.flat(&mesh.grid, s))
}

/// Supplies, for one end of a line, the swept field's value at an off-grid end
/// and the Dirichlet target.
type EndFn<'a> = dyn Fn(&MeshLine, bool) -> (f64, f64) + Sync + 'a;

/// One sweep of `L^{-1}` along every line of `axis`. Ends whose condition is
/// outflow use the transmission history when `states` is given and the
/// `EndFn` target otherwise.
fn sweep_lines(
    mesh: &EmbeddedMesh,
    params: &SchemeParams,
    plans: &[LinePlan],
    states: Option<&mut [Option<OutflowState>]>,
    axis: Axis,
    f: &[f64],
    ends: &EndFn,
) -> Result<Vec<f64>> {
    let g = &mesh.grid;
    let lines = mesh.lines(axis);
    let mut none: Vec<Option<OutflowState>> = Vec::new();
    let use_outflow = states.is_some();
    let states: &mut [Option<OutflowState>] = match states {
        Some(s) => s,
        None => {
            none.resize(lines.len(), None);
            &mut none
        }
    };
    let results: Vec<Result<Vec<f64>>> = lines
        .par_iter()
        .zip(plans.par_iter())
        .zip(states.par_iter_mut())
        .map(|((line, plan), st)| {
            let (fl, tl) = ends(line, false);
            let (fr, tr) = ends(line, true);
            let vals = line.gather(g, f, fl, fr);
            let mut v = vec![0.0; vals.len()];
            plan.kernel.convolve_into(&vals, &mut v);
            let m = v.len() - 1;
            let mu = plan.kernel.mu();
            let (a, b) = if plan.periodic {
                periodic_coeffs(v[0], v[m], mu)?
            } else {
                let cond = |kind: EndKind, target: f64, right: bool| match (kind, st.as_ref()) {
                    (EndKind::Neumann, _) => EndCondition::Slope(0.0),
                    (EndKind::Outflow, Some(s)) if use_outflow => {
                        if right {
                            s.right_condition()
                        } else {
                            s.left_condition()
                        }
                    }
                    _ => EndCondition::Value(target),
                };
                end_coeffs(cond(plan.left, tl, false), cond(plan.right, tr, true), v[0], v[m], mu, params)?
            };
            if use_outflow {
                if let Some(s) = st.as_mut() {
                    s.a_prev = a;
                    s.b_prev = b;
                }
            }
            plan.kernel.add_modes(&mut v, a, b);
            if plan.periodic {
                v[m] = v[0];
            }
            Ok(v)
        })
        .collect();
    let mut out = vec![0.0; g.n_nodes()];
    for (line, r) in lines.iter().zip(results) {
        line.scatter(g, &r?, &mut out);
    }
    Ok(out)
}

/// Ghost-point data for an embedded Neumann mesh.
struct GhostPlan {
    stencils: Vec<GhostStencil>,
    /// Stencil index by grid node.
    of_node: Vec<Option<usize>>,
    /// `(node, line, position)` of every stencil node, per axis.
    covered: [Vec<(usize, usize, usize)>; 2],
}

impl GhostPlan {
    fn new(mesh: &EmbeddedMesh, stencils: Vec<GhostStencil>) -> Result<Self> {
        let g = &mesh.grid;
        let mut of_node = vec![None; g.n_nodes()];
        for (i, s) in stencils.iter().enumerate() {
            of_node[s.ghost] = Some(i);
        }
        let mut used = vec![false; g.n_nodes()];
        for s in &stencils {
            for n in s.interp_i.nodes.iter().chain(&s.interp_ii.nodes) {
                used[*n] = true;
            }
        }
        let mut covered: [Vec<(usize, usize, usize)>; 2] = [Vec::new(), Vec::new()];
        for (ax, axis) in [Axis::X, Axis::Y].into_iter().enumerate() {
            for (k, line) in mesh.lines(axis).iter().enumerate() {
                for e in [end_flat(mesh, line, false), end_flat(mesh, line, true)] {
                    let n = e.ok_or(MoltError::IncompatibleBC("ghost line without grid ends".into()))?;
                    if of_node[n].is_none() {
                        return Err(MoltError::StencilNotInterior(n));
                    }
                }
                let off = line.offset();
                for (j, n) in line.grid_nodes(g).enumerate() {
                    if used[n] {
                        covered[ax].push((n, k, off + j));
                    }
                }
            }
        }
        Ok(GhostPlan { stencils, of_node, covered })
    }

    fn ghost_value(&self, n: usize, w: &[f64]) -> f64 {
        self.stencils[self.of_node[n].expect("ghost without stencil")].eval(w)
    }
}

/// Homogeneous-mode coefficients fitting ghost values `(ga, gb)` at the line
/// ends given the particular solution there.
fn ghost_coeffs(ia: f64, ib: f64, ga: f64, gb: f64, mu: f64) -> (f64, f64) {
    let (ra, rb) = (ga - ia, gb - ib);
    let d = 1.0 - mu * mu;
    ((ra - mu * rb) / d, (rb - mu * ra) / d)
}

/// `L^{-1}[f]` along `axis` with zero normal derivative imposed through ghost
/// values, by the boundary correction iteration. Returns the full line
/// solution on interior and ghost nodes and the change history.
#[allow(clippy::too_many_arguments)]
fn ghost_inverse(
    mesh: &EmbeddedMesh,
    plans: &[LinePlan],
    gp: &GhostPlan,
    axis: Axis,
    f: &[f64],
    guess: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = &mesh.grid;
    let lines = mesh.lines(axis);
    let mut fg = f.to_vec();
    for s in &gp.stencils {
        fg[s.ghost] = s.eval(f);
    }
    let parts: Vec<Vec<f64>> = lines
        .par_iter()
        .zip(plans.par_iter())
        .map(|(line, plan)| {
            let vals = line.gather(g, &fg, 0.0, 0.0);
            let mut v = vec![0.0; vals.len()];
            plan.kernel.convolve_into(&vals, &mut v);
            v
        })
        .collect();
    let coeffs = |w: &[f64]| -> Vec<(f64, f64)> {
        lines
            .iter()
            .zip(plans)
            .zip(&parts)
            .map(|((line, plan), p)| {
                let ga = gp.ghost_value(end_flat(mesh, line, false).unwrap(), w);
                let gb = gp.ghost_value(end_flat(mesh, line, true).unwrap(), w);
                ghost_coeffs(p[0], p[p.len() - 1], ga, gb, plan.kernel.mu())
            })
            .collect()
    };
    let covered = &gp.covered[match axis {
        Axis::X => 0,
        Axis::Y => 1,
    }];
    let mut w = guess.to_vec();
    let mut changes = Vec::new();
    let mut converged = covered.is_empty();
    for _ in 0..max_iter {
        if converged {
            break;
        }
        let ab = coeffs(&w);
        let mut change: f64 = 0.0;
        let mut scale: f64 = 1.0;
        // Jacobi sweep: all ghost values were read from the previous iterate
        let new: Vec<f64> = covered
            .iter()
            .map(|&(_, k, j)| {
                let (a, b) = ab[k];
                let kern = &plans[k].kernel;
                parts[k][j] + a * kern.left_mode()[j] + b * kern.right_mode()[j]
            })
            .collect();
        for (&(n, _, _), v) in covered.iter().zip(new) {
            change = change.max((v - w[n]).abs());
            scale = scale.max(v.abs());
            w[n] = v;
        }
        changes.push(change);
        converged = change < tol * scale;
    }
    if !converged {
        return Err(MoltError::MaxIterExceeded { iters: max_iter, change: *changes.last().unwrap_or(&f64::NAN) });
    }
    let ab = coeffs(&w);
    let mut out = vec![0.0; g.n_nodes()];
    for (k, line) in lines.iter().enumerate() {
        let mut v = parts[k].clone();
        plans[k].kernel.add_modes(&mut v, ab[k].0, ab[k].1);
        line.scatter(g, &v, &mut out);
    }
    Ok((out, changes))
}

pub struct Stepper2d {
    params: SchemeParams,
    mesh: Arc<EmbeddedMesh>,
    bcs: BcMap,
    plans: [Vec<LinePlan>; 2],
    outflow: [Vec<Option<OutflowState>>; 2],
    has_outflow: bool,
    ghost: Option<GhostPlan>,
    sources: Vec<Source2d>,
    source_scale: Vec<f64>,
    normalize_sources: bool,
    /// Period lengths of periodic directions, for source images.
    period: [Option<f64>; 2],
    hist: Option<FieldHistory>,
    averaging: bool,
    correction: Correction,
    tol: f64,
    max_iter: usize,
    stats: IterStats,
    steps: usize,
}

fn ax(axis: Axis) -> usize {
    match axis {
        Axis::X => 0,
        Axis::Y => 1,
    }
}

fn other(axis: Axis) -> Axis {
    match axis {
        Axis::X => Axis::Y,
        Axis::Y => Axis::X,
    }
}

impl Stepper2d {
    /// Stepper on a boundary-endpoint mesh with conditions by tag.
    pub fn new(params: SchemeParams, mesh: Arc<EmbeddedMesh>, bcs: BcMap, sources: Vec<Source2d>) -> Result<Self> {
        if mesh.mode != LineMode::BoundaryEndpoints {
            return Err(MoltError::IncompatibleBC("ghost-endpoint mesh needs Stepper2d::neumann".into()));
        }
        Self::build(params, mesh, bcs, sources, None)
    }

    /// Embedded homogeneous Neumann stepper on a ghost-endpoint mesh.
    pub fn neumann(params: SchemeParams, mesh: Arc<EmbeddedMesh>, stencils: Vec<GhostStencil>) -> Result<Self> {
        if mesh.mode != LineMode::GhostEndpoints {
            return Err(MoltError::IncompatibleBC("embedded Neumann needs a ghost-endpoint mesh".into()));
        }
        let ok = match params.variant {
            Variant::Diffusive => true,
            Variant::Dissipative => params.epsilon > 0.0,
            Variant::Dispersive => false,
        };
        if !ok {
            return Err(MoltError::UnsupportedClosure(
                "embedded Neumann needs the diffusive variant or dissipation ε > 0".into(),
            ));
        }
        let gp = GhostPlan::new(&mesh, stencils)?;
        Self::build(params, mesh, BcMap::uniform(EdgeBc::Neumann), Vec::new(), Some(gp))
    }

    fn build(
        params: SchemeParams,
        mesh: Arc<EmbeddedMesh>,
        bcs: BcMap,
        sources: Vec<Source2d>,
        ghost: Option<GhostPlan>,
    ) -> Result<Self> {
        let plans = [
            plan_lines(&mesh, &bcs, Axis::X, params.alpha)?,
            plan_lines(&mesh, &bcs, Axis::Y, params.alpha)?,
        ];
        let mk = |p: &Vec<LinePlan>| -> Vec<Option<OutflowState>> {
            p.iter()
                .map(|l| (l.left == EndKind::Outflow || l.right == EndKind::Outflow).then(|| OutflowState::new(params.beta)))
                .collect()
        };
        let outflow = [mk(&plans[0]), mk(&plans[1])];
        let has_outflow = outflow.iter().flatten().any(Option::is_some);
        if has_outflow && params.variant != Variant::Dispersive {
            return Err(MoltError::UnsupportedClosure(format!("outflow with the {} variant", params.variant.name())));
        }
        let g = mesh.grid;
        let period = [
            plans[0].iter().any(|p| p.periodic).then_some(g.nx as f64 * g.dx),
            plans[1].iter().any(|p| p.periodic).then_some(g.ny as f64 * g.dy),
        ];
        let mut s = Stepper2d {
            params,
            mesh,
            bcs,
            plans,
            outflow,
            has_outflow,
            ghost,
            sources,
            source_scale: Vec::new(),
            normalize_sources: true,
            period,
            hist: None,
            averaging: false,
            correction: if has_outflow { Correction::Off } else { Correction::Symmetric },
            tol: 1e-15,
            max_iter: 200,
            stats: IterStats::default(),
            steps: 0,
        };
        s.rescale_sources();
        Ok(s)
    }

    fn rescale_sources(&mut self) {
        let g = self.mesh.grid;
        let a = self.params.alpha;
        let xl = SweepLine::uniform(g.x0, g.x(g.nx), g.nx).expect("grid line");
        let yl = SweepLine::uniform(g.y0, g.y(g.ny), g.ny).expect("grid line");
        let on = self.normalize_sources;
        self.source_scale = self
            .sources
            .iter()
            .map(|s| match (on, s.shape) {
                (false, _) => 1.0,
                (true, SourceShape::Point(x, y)) => source_mass_factor(x, &xl, a) * source_mass_factor(y, &yl, a),
                (true, SourceShape::LineY(y)) => source_mass_factor(y, &yl, a),
            })
            .collect();
    }

    /// Mass normalization of delta sources (on by default).
    pub fn with_source_normalization(mut self, on: bool) -> Self {
        self.normalize_sources = on;
        self.rescale_sources();
        self
    }

    /// Runs both sweep orders and averages; not available with outflow.
    pub fn with_averaging(mut self, on: bool) -> Result<Self> {
        if on && self.has_outflow {
            return Err(MoltError::IncompatibleBC("sweep averaging with outflow edges".into()));
        }
        self.averaging = on;
        Ok(self)
    }

    /// Splitting correction; must stay `Off` with outflow edges, whose
    /// closures have no counterpart for the correction's inner inversions.
    pub fn with_correction(mut self, c: Correction) -> Result<Self> {
        if c != Correction::Off && self.has_outflow {
            return Err(MoltError::IncompatibleBC("splitting correction with outflow edges".into()));
        }
        self.correction = c;
        Ok(self)
    }

    /// Stopping rule of the ghost iteration: change below `tol·max(1, |w|)`.
    pub fn with_iteration(mut self, tol: f64, max_iter: usize) -> Self {
        self.tol = tol;
        self.max_iter = max_iter;
        self
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }
    pub fn mesh(&self) -> &EmbeddedMesh {
        &self.mesh
    }
    pub fn history(&self) -> Option<&FieldHistory> {
        self.hist.as_ref()
    }
    pub fn u(&self) -> &[f64] {
        &self.hist.as_ref().expect("stepper not started").u_n
    }
    pub fn time(&self) -> f64 {
        self.hist.as_ref().map_or(0.0, |h| h.t_n)
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    /// Iteration record of the last step (embedded Neumann only).
    pub fn stats(&self) -> &IterStats {
        &self.stats
    }

    /// `G_S(x, y, t) = L_x^{-1}L_y^{-1}[S/α²]` in free space, with images
    /// across periodic directions.
    pub fn source_value(&self, x: f64, y: f64, t: f64) -> f64 {
        let p = &self.params;
        let a = p.alpha;
        let images = |axis: usize| -> Vec<f64> {
            match self.period[axis] {
                Some(l) => (-2..=2).map(|k| k as f64 * l).collect(),
                None => vec![0.0],
            }
        };
        let (ix, iy) = (images(0), images(1));
        let mut total = 0.0;
        for (s, k) in self.sources.iter().zip(&self.source_scale) {
            let amp = k * s.strength(t, p);
            if amp == 0.0 {
                continue;
            }
            total += match s.shape {
                SourceShape::Point(xs, ys) => {
                    let ex: f64 = ix.iter().map(|o| (-a * (x - xs - o).abs()).exp()).sum();
                    let ey: f64 = iy.iter().map(|o| (-a * (y - ys - o).abs()).exp()).sum();
                    0.25 * amp * ex * ey
                }
                SourceShape::LineY(ys) => {
                    let ey: f64 = iy.iter().map(|o| (-a * (y - ys - o).abs()).exp()).sum();
                    amp / (2.0 * a) * ey
                }
            };
        }
        total
    }

    fn source_grid(&self, t: f64) -> Vec<f64> {
        let m = &self.mesh;
        if self.sources.is_empty() {
            return vec![0.0; m.grid.n_nodes()];
        }
        (0..m.grid.n_nodes())
            .map(|n| {
                if m.mask[n] == crate::geometry::NodeKind::Exterior {
                    return 0.0;
                }
                let (x, y) = m.point(n);
                self.source_value(x, y, t)
            })
            .collect()
    }

    fn data(&self, e: &LineEnd, t: f64) -> f64 {
        match self.bcs.get(e.tag) {
            EdgeBc::Dirichlet(g) => g(e.point.0, e.point.1, t),
            _ => 0.0,
        }
    }

    /// Centered Dirichlet target for `L^{-1}[u^n]` at an end, net of the source field.
    fn centered_target(&self, e: &LineEnd, t: f64) -> f64 {
        let dt = self.params.dt;
        EndData([self.data(e, t - dt), self.data(e, t), self.data(e, t + dt)]).target(self.params.beta)
            - self.source_value(e.point.0, e.point.1, t)
    }

    /// One inversion along `axis`. Boundary meshes close lines with `ends`;
    /// ghost meshes iterate from `guess`.
    fn inv(
        &self,
        axis: Axis,
        f: &[f64],
        ends: &EndFn,
        states: Option<&mut [Option<OutflowState>]>,
        guess: Option<&[f64]>,
        changes: &mut Vec<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        match &self.ghost {
            None => sweep_lines(&self.mesh, &self.params, &self.plans[ax(axis)], states, axis, f, ends),
            Some(gp) => {
                let (out, ch) = ghost_inverse(
                    &self.mesh,
                    &self.plans[ax(axis)],
                    gp,
                    axis,
                    f,
                    guess.unwrap_or(f),
                    self.tol,
                    self.max_iter,
                )?;
                changes.push(ch);
                Ok(out)
            }
        }
    }

    /// Homogeneous closure: each end keeps the input's own value (zero at
    /// off-grid ends), or zero slope.
    fn homog_inv(&self, axis: Axis, f: &[f64], changes: &mut Vec<Vec<f64>>) -> Result<Vec<f64>> {
        let mesh = &self.mesh;
        let own = |l: &MeshLine, r: bool| {
            let v = end_flat(mesh, l, r).map_or(0.0, |n| f[n]);
            (0.0, v)
        };
        self.inv(axis, f, &own, None, None, changes)
    }

    /// `L^{-1}` along `axis` with homogeneous closures.
    pub fn inverse(&self, axis: Axis, f: &[f64]) -> Result<Vec<f64>> {
        self.homog_inv(axis, f, &mut Vec::new())
    }

    /// `D = I − L^{-1}` along `axis` with homogeneous closures.
    pub fn d_op(&self, axis: Axis, f: &[f64]) -> Result<Vec<f64>> {
        let v = self.inverse(axis, f)?;
        Ok(self.interior_diff(f, &v))
    }

    fn interior_diff(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let m = &self.mesh;
        (0..a.len()).map(|n| if m.is_interior(n) { a[n] - b[n] } else { 0.0 }).collect()
    }

    /// `C[f] = L_x^{-1}D_y[f] + L_y^{-1}D_x[f]`.
    pub fn operator_c(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.operator_c_rec(f, &mut Vec::new())
    }

    fn operator_c_rec(&self, f: &[f64], ch: &mut Vec<Vec<f64>>) -> Result<Vec<f64>> {
        let dy = self.interior_diff(f, &self.homog_inv(Axis::Y, f, ch)?);
        let dx = self.interior_diff(f, &self.homog_inv(Axis::X, f, ch)?);
        self.c_outer(f, &dx, &dy, ch)
    }

    /// `C[u]` for a solution level at time `t`: the inner sweeps close
    /// off-grid Dirichlet ends with the boundary data, so `C` of data-matching
    /// constants vanishes.
    fn operator_c_level(&self, f: &[f64], t: f64, ch: &mut Vec<Vec<f64>>) -> Result<Vec<f64>> {
        let mesh = &self.mesh;
        let ends = |l: &MeshLine, r: bool| match end_flat(mesh, l, r) {
            Some(n) => (0.0, f[n]),
            None => {
                let g = self.data(if r { &l.right } else { &l.left }, t);
                (g, g)
            }
        };
        let dy = self.interior_diff(f, &self.inv(Axis::Y, f, &ends, None, None, ch)?);
        let dx = self.interior_diff(f, &self.inv(Axis::X, f, &ends, None, None, ch)?);
        self.c_outer(f, &dx, &dy, ch)
    }

    fn c_outer(&self, f: &[f64], dx: &[f64], dy: &[f64], ch: &mut Vec<Vec<f64>>) -> Result<Vec<f64>> {
        let a = self.homog_inv(Axis::X, dy, ch)?;
        let b = self.homog_inv(Axis::Y, dx, ch)?;
        Ok(self.masked((0..f.len()).map(|n| a[n] + b[n]).collect()))
    }

    /// `D_xy[f] = f − L_x^{-1}L_y^{-1}[f]`.
    pub fn d_xy(&self, f: &[f64]) -> Result<Vec<f64>> {
        let inner = self.inverse(Axis::Y, f)?;
        let v = self.inverse(Axis::X, &inner)?;
        Ok(self.interior_diff(f, &v))
    }

    /// Interior (and ghost-free) restriction.
    fn masked(&self, mut v: Vec<f64>) -> Vec<f64> {
        for (n, x) in v.iter_mut().enumerate() {
            if !self.mesh.is_interior(n) {
                *x = 0.0;
            }
        }
        v
    }
}

impl Stepper2d {
    /// `−β²C[u] + β²G_S(t)` with centered closures at time `t`.
    fn accel(&mut self, u: &[f64], t: f64, use_outflow: bool, ch: &mut Vec<Vec<f64>>) -> Result<Vec<f64>> {
        if !self.averaging {
            return self.accel_order(u, t, Axis::X, use_outflow, ch);
        }
        let a = self.accel_order(u, t, Axis::X, use_outflow, ch)?;
        let b = self.accel_order(u, t, Axis::Y, use_outflow, ch)?;
        Ok(a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect())
    }

    fn accel_order(
        &mut self,
        u: &[f64],
        t: f64,
        first: Axis,
        use_outflow: bool,
        ch: &mut Vec<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let second = other(first);
        let mut s1 = std::mem::take(&mut self.outflow[ax(first)]);
        let mut s2 = std::mem::take(&mut self.outflow[ax(second)]);
        let this: &Self = self;
        let end = |l: &MeshLine, r: bool| if r { l.right } else { l.left };
        let result = (|| {
            let e1 = |l: &MeshLine, r: bool| {
                let e = end(l, r);
                (this.data(&e, t), this.centered_target(&e, t))
            };
            let v1 = this.inv(first, u, &e1, use_outflow.then_some(&mut s1[..]), None, ch)?;
            let e2 = |l: &MeshLine, r: bool| {
                let tg = this.centered_target(&end(l, r), t);
                (tg, tg)
            };
            let v2 = this.inv(second, &v1, &e2, use_outflow.then_some(&mut s2[..]), Some(&v1), ch)?;
            let corr = match this.correction {
                Correction::Off => None,
                _ => {
                    let mesh = &this.mesh;
                    let own = |l: &MeshLine, r: bool| {
                        let v = end_flat(mesh, l, r).map_or_else(|| this.data(&end(l, r), t), |n| u[n]);
                        (v, v)
                    };
                    let w = this.inv(second, u, &own, None, None, ch)?;
                    let v3 = if this.correction == Correction::Symmetric {
                        let own_w = |l: &MeshLine, r: bool| {
                            let v = end_flat(mesh, l, r).map_or_else(|| this.data(&end(l, r), t), |n| w[n]);
                            (v, v)
                        };
                        Some(this.inv(first, &w, &own_w, None, None, ch)?)
                    } else {
                        None
                    };
                    Some((this.interior_diff(u, &w), v3))
                }
            };
            let b2 = this.params.beta * this.params.beta;
            let src = this.source_grid(t);
            let x: Vec<f64> = (0..u.len())
                .map(|n| {
                    let c = match (&corr, this.correction) {
                        (Some((d, _)), Correction::Expanded) => d[n] - v1[n] + v2[n],
                        (Some((d, _)), Correction::Flipped) => d[n] + v1[n] - v2[n],
                        (Some((d, Some(v3))), Correction::Symmetric) => d[n] - v1[n] + v3[n],
                        _ => 0.0,
                    };
                    b2 * (v2[n] - u[n] + c + src[n])
                })
                .collect();
            Ok(this.masked(x))
        })();
        self.outflow[ax(first)] = s1;
        self.outflow[ax(second)] = s2;
        result
    }

    /// Backward (diffusive) update `L_xL_y u^{n+1} = ½(5u^n − 4u^{n−1} + u^{n−2}) + S/α²`.
    fn implicit(&self, ch: &mut Vec<Vec<f64>>) -> Result<Vec<f64>> {
        let h = self.hist.as_ref().ok_or(MoltError::MissingLevel("u^n"))?;
        let nm2 = h.u_nm2.as_ref().ok_or(MoltError::MissingLevel("u^{n-2}"))?;
        let (t, dt) = (h.t_n, self.params.dt);
        let t1 = t + dt;
        let f: Vec<f64> = (0..h.len()).map(|n| 0.5 * (5.0 * h.u_n[n] - 4.0 * h.u_nm1[n] + nm2[n])).collect();
        let guess: Vec<f64> = (0..h.len()).map(|n| 3.0 * h.u_n[n] - 3.0 * h.u_nm1[n] + nm2[n]).collect();
        let end = |l: &MeshLine, r: bool| if r { l.right } else { l.left };
        let target = |e: &LineEnd| self.data(e, t1) - self.source_value(e.point.0, e.point.1, t1);
        let e1 = |l: &MeshLine, r: bool| {
            let e = end(l, r);
            let fe = 0.5 * (5.0 * self.data(&e, t) - 4.0 * self.data(&e, t - dt) + self.data(&e, t - 2.0 * dt));
            (fe, target(&e))
        };
        let e2 = |l: &MeshLine, r: bool| {
            let tg = target(&end(l, r));
            (tg, tg)
        };
        let order = |first: Axis, ch: &mut Vec<Vec<f64>>| -> Result<Vec<f64>> {
            let w = self.inv(first, &f, &e1, None, Some(&guess), ch)?;
            self.inv(other(first), &w, &e2, None, Some(&guess), ch)
        };
        let mut u = order(Axis::X, ch)?;
        if self.averaging {
            let v = order(Axis::Y, ch)?;
            u.iter_mut().zip(&v).for_each(|(a, b)| *a = 0.5 * (*a + b));
        }
        let src = self.source_grid(t1);
        u.iter_mut().zip(&src).for_each(|(a, s)| *a += s);
        Ok(u)
    }

    /// Dirichlet values at on-grid boundary nodes, exterior zeroed.
    fn finalize(&self, mut u: Vec<f64>, t: f64) -> Vec<f64> {
        let m = &self.mesh;
        for (n, v) in u.iter_mut().enumerate() {
            if !m.is_interior(n) {
                *v = 0.0;
            }
        }
        for line in m.x_lines.iter().chain(&m.y_lines) {
            for r in [false, true] {
                let e = if r { &line.right } else { &line.left };
                if let (Some(n), EdgeBc::Dirichlet(g)) = (end_flat(m, line, r), self.bcs.get(e.tag)) {
                    if self.ghost.is_none() {
                        u[n] = g(e.point.0, e.point.1, t);
                    }
                }
            }
        }
        for &n in &m.isolated {
            if let EdgeBc::Dirichlet(g) = self.bcs.get(0) {
                let (x, y) = m.point(n);
                u[n] = g(x, y, t);
            }
        }
        u
    }

    fn push_outflow(&mut self, u: &[f64]) {
        let mesh = self.mesh.clone();
        for axis in [Axis::X, Axis::Y] {
            for (line, st) in mesh.lines(axis).iter().zip(self.outflow[ax(axis)].iter_mut()) {
                if let Some(s) = st {
                    let ua = end_flat(&mesh, line, false).map_or(0.0, |n| u[n]);
                    let ub = end_flat(&mesh, line, true).map_or(0.0, |n| u[n]);
                    s.push_endpoints(ua, ub);
                }
            }
        }
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        let n = self.mesh.grid.n_nodes();
        if v.len() != n {
            return Err(MoltError::ShapeMismatch { expected: n, got: v.len() });
        }
        Ok(())
    }

    /// Installs known levels at time `t_n`.
    pub fn set_levels(&mut self, t_n: f64, u_n: Vec<f64>, u_nm1: Vec<f64>, u_nm2: Option<Vec<f64>>) -> Result<()> {
        self.check_len(&u_n)?;
        if self.params.variant == Variant::Diffusive && u_nm2.is_none() {
            return Err(MoltError::MissingLevel("u^{n-2}"));
        }
        let u_nm2 = u_nm2.or_else(|| (self.params.variant.levels() == 3).then(|| u_nm1.clone()));
        self.push_outflow(&u_nm1);
        self.push_outflow(&u_n);
        self.hist = Some(FieldHistory::new(u_n, u_nm1, u_nm2, t_n)?);
        self.steps = 2;
        Ok(())
    }

    /// Starts from `u(0) = u0`, `u_t(0) = g` with a half step of the centered
    /// scheme; the diffusive variant adds one centered step.
    pub fn start(&mut self, u0: &[f64], g: &[f64]) -> Result<()> {
        self.check_len(u0)?;
        self.check_len(g)?;
        let dt = self.params.dt;
        let u0 = self.finalize(u0.to_vec(), 0.0);
        let mut ch = Vec::new();
        let x = self.accel(&u0, 0.0, false, &mut ch)?;
        let u1: Vec<f64> = (0..u0.len()).map(|n| u0[n] + dt * g[n] + 0.5 * x[n]).collect();
        let u1 = self.finalize(u1, dt);
        self.push_outflow(&u0);
        self.push_outflow(&u1);
        let three = self.params.variant.levels() == 3;
        self.hist = Some(FieldHistory::new(u1, u0.clone(), three.then_some(u0), dt)?);
        self.steps = 1;
        if self.params.variant == Variant::Diffusive {
            let h = self.hist.as_ref().unwrap();
            let (un, unm1) = (h.u_n.clone(), h.u_nm1.clone());
            let x = self.accel(&un, dt, false, &mut ch)?;
            let next: Vec<f64> = (0..un.len()).map(|n| 2.0 * un[n] - unm1[n] + x[n]).collect();
            let next = self.finalize(next, 2.0 * dt);
            self.commit(next);
        }
        Ok(())
    }

    fn commit(&mut self, next: Vec<f64>) {
        self.push_outflow(&next);
        let dt = self.params.dt;
        self.hist.as_mut().expect("stepper not started").push(next, dt);
        self.steps += 1;
    }

    pub fn step(&mut self) -> Result<()> {
        let h = self.hist.as_ref().ok_or(MoltError::MissingLevel("u^n"))?;
        let (t, dt) = (h.t_n, self.params.dt);
        let mut ch = Vec::new();
        let next = match self.params.variant {
            Variant::Diffusive => self.implicit(&mut ch)?,
            v => {
                let (un, unm1) = (h.u_n.clone(), h.u_nm1.clone());
                let x = self.accel(&un, t, true, &mut ch)?;
                let mut next: Vec<f64> = (0..un.len()).map(|n| 2.0 * un[n] - unm1[n] + x[n]).collect();
                let eps = self.params.epsilon;
                if v == Variant::Dissipative && eps > 0.0 {
                    let c1 = self.operator_c_level(&unm1, t - dt, &mut ch)?;
                    let c2 = self.operator_c_rec(&c1, &mut ch)?;
                    next.iter_mut().zip(&c2).for_each(|(a, c)| *a += eps * c);
                }
                next
            }
        };
        let next = self.finalize(next, t + dt);
        if blown_up(&next) {
            return Err(MoltError::BlowUp(t + dt));
        }
        self.stats = IterStats { iterations: ch.iter().map(Vec::len).collect(), changes: ch };
        self.commit(next);
        Ok(())
    }

    pub fn run_until(&mut self, t_final: f64) -> Result<()> {
        while self.time() < t_final - 1e-9 * self.params.dt {
            self.step()?;
        }
        Ok(())
    }

    /// Field sampled from `f(x, y)` on interior nodes, zero elsewhere.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let m = &self.mesh;
        (0..m.grid.n_nodes())
            .map(|n| {
                if m.is_interior(n) {
                    let (x, y) = m.point(n);
                    f(x, y)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// `L^{-1}` along `axis` with Dirichlet closure `value(x, y)` at every end.
    pub fn sweep_dirichlet(&self, axis: Axis, f: &[f64], value: impl Fn(f64, f64) -> f64 + Sync) -> Result<Vec<f64>> {
        let ends = |l: &MeshLine, r: bool| {
            let e = if r { l.right } else { l.left };
            let v = value(e.point.0, e.point.1);
            (v, v)
        };
        sweep_lines(&self.mesh, &self.params, &self.plans[ax(axis)], None, axis, f, &ends)
    }
}

/// One-dimensional ghost geometry: nodes `x_j = j·dx` from the ghost node
/// `x_0`, a Neumann boundary at `ξ_G ∈ (0, dx]`, and interpolation points at
/// `ξ_G + Δs` and `ξ_G + 2Δs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ghost1d {
    pub dx: f64,
    pub xi_g: f64,
    pub ds: f64,
    /// Cells `[x_m, x_{m+1}]`, `[x_n, x_{n+1}]` holding the two points.
    pub m: usize,
    pub n: usize,
    /// Weights of `x_m` and `x_n` in the linear interpolants.
    pub sigma_i: f64,
    pub sigma_ii: f64,
    pub gamma_i: f64,
    pub gamma_ii: f64,
}

impl Ghost1d {
    pub fn new(dx: f64, xi_g: f64, ds: f64) -> Result<Self> {
        if !(xi_g > 0.0 && xi_g <= dx) {
            return Err(MoltError::InvalidValue { key: "xi_g".into(), value: xi_g.to_string() });
        }
        if !(ds > dx && ds < 1.5 * dx) {
            return Err(MoltError::InvalidValue { key: "ds".into(), value: ds.to_string() });
        }
        let cell = |x: f64| {
            let m = (x / dx).floor() as usize;
            (m, ((m + 1) as f64 * dx - x) / dx)
        };
        let (m, sigma_i) = cell(xi_g + ds);
        let (n, sigma_ii) = cell(xi_g + 2.0 * ds);
        let (gamma_i, gamma_ii) = crate::geometry::hb_gammas(xi_g, ds, 2.0 * ds);
        Ok(Ghost1d { dx, xi_g, ds, m, n, sigma_i, sigma_ii, gamma_i, gamma_ii })
    }

    /// Ghost value from node values `u_0, u_1, …`.
    pub fn interp(&self, u: &[f64]) -> f64 {
        let (m, n) = (self.m, self.n);
        self.gamma_i * (self.sigma_i * u[m] + (1.0 - self.sigma_i) * u[m + 1])
            + self.gamma_ii * (self.sigma_ii * u[n] + (1.0 - self.sigma_ii) * u[n + 1])
    }

    fn decay(&self, alpha: f64, j: usize) -> f64 {
        (-alpha * self.dx * j as f64).exp()
    }

    /// Contraction constant of the ghost-value fixed-point map.
    pub fn k(&self, alpha: f64) -> f64 {
        let e: Vec<f64> = (0..=self.n + 1).map(|j| self.decay(alpha, j)).collect();
        self.interp(&e)
    }

    /// `(4d^m − d^{n+1})/3` with `d = e^{−α dx}`.
    pub fn k_bound(&self, alpha: f64) -> f64 {
        k_bound_fn(self.m, self.n, (-alpha * self.dx).exp())
    }
}

/// `f_{m,n}(d) = (4d^m − d^{n+1})/3`.
pub fn k_bound_fn(m: usize, n: usize, d: f64) -> f64 {
    (4.0 * d.powi(m as i32) - d.powi(n as i32 + 1)) / 3.0
}

/// Closed-form ghost value for `u_j = I_j + (u_G − I_0) e^{−α x_j}` with the
/// ghost value given by the interpolant; `conv` holds `I_j` from the ghost node.
pub fn ghost_solve_1d(conv: &[f64], geo: &Ghost1d, alpha: f64) -> Result<f64> {
    if conv.len() < geo.n + 2 {
        return Err(MoltError::ShapeMismatch { expected: geo.n + 2, got: conv.len() });
    }
    let k = geo.k(alpha);
    if 1.0 - k < 1e-10 {
        return Err(MoltError::IllConditioned(k));
    }
    let r: Vec<f64> = (0..=geo.n + 1).map(|j| conv[j] - conv[0] * geo.decay(alpha, j)).collect();
    Ok(geo.interp(&r) / (1.0 - k))
}

/// Fixed-point iteration of the same map from `u_g`; returns the limit and
/// the successive changes.
pub fn ghost_iterate_1d(conv: &[f64], geo: &Ghost1d, alpha: f64, mut u_g: f64, tol: f64, max_iter: usize) -> Result<(f64, Vec<f64>)> {
    let mut changes = Vec::new();
    for _ in 0..max_iter {
        let u: Vec<f64> = (0..=geo.n + 1).map(|j| conv[j] + (u_g - conv[0]) * geo.decay(alpha, j)).collect();
        let next = geo.interp(&u);
        let c = (next - u_g).abs();
        changes.push(c);
        u_g = next;
        if c <= tol * u_g.abs().max(1.0) {
            return Ok((u_g, changes));
        }
    }
    Err(MoltError::MaxIterExceeded { iters: max_iter, change: *changes.last().unwrap_or(&f64::NAN) })
}
