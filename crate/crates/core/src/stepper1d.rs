//! One-dimensional time stepping on a single line.

use std::sync::Arc;

use crate::bc1d::{end_coeffs, periodic_coeffs, EndCondition, EndData, OutflowState};
use crate::error::{MoltError, Result};
use crate::fastconv::{LineKernel, SweepLine};
use crate::params::{FieldHistory, SchemeParams, Variant};

/// Shared scalar function of time.
pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub fn time_fn(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> TimeFn {
    Arc::new(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    /// Prescribed field value at the source point, injected with strength `(2/c) σ'`.
    Soft,
    /// Delta source of strength `σ`.
    Point,
}

#[derive(Clone)]
pub struct SourceSpec {
    pub x_s: f64,
    pub waveform: TimeFn,
    /// Analytic `σ'`; a centered difference is used when absent.
    pub derivative: Option<TimeFn>,
    pub kind: SourceKind,
}

impl std::fmt::Debug for SourceSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SourceSpec").field("x_s", &self.x_s).field("kind", &self.kind).finish()
    }
}

impl SourceSpec {
    pub fn point(x_s: f64, waveform: TimeFn) -> Self {
        SourceSpec { x_s, waveform, derivative: None, kind: SourceKind::Point }
    }

    pub fn soft(x_s: f64, waveform: TimeFn, derivative: Option<TimeFn>) -> Self {
        SourceSpec { x_s, waveform, derivative, kind: SourceKind::Soft }
    }

    /// Delta strength `σ̃(t)`.
    pub fn strength(&self, t: f64, params: &SchemeParams) -> f64 {
        match self.kind {
            SourceKind::Point => (self.waveform)(t),
            SourceKind::Soft => {
                let d = match &self.derivative {
                    Some(d) => d(t),
                    None => ((self.waveform)(t + params.dt) - (self.waveform)(t - params.dt)) / (2.0 * params.dt),
                };
                2.0 / params.c * d
            }
        }
    }
}

/// `I[S/α²]` for delta sources at time `t`, i.e. `Σ σ̃ᵢ/(2α) e^{-α|x-xᵢ|}`.
pub fn source_field(sources: &[SourceSpec], line: &SweepLine, params: &SchemeParams, t: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; line.len()];
    for s in sources {
        if s.x_s < line.a() || s.x_s > line.b() {
            return Err(MoltError::SourceOutsideLine { x: s.x_s, a: line.a(), b: line.b() });
        }
        let amp = s.strength(t, params) / (2.0 * params.alpha);
        if amp == 0.0 {
            continue;
        }
        for (o, &x) in out.iter_mut().zip(line.nodes()) {
            *o += amp * (-params.alpha * (x - s.x_s).abs()).exp();
        }
    }
    Ok(out)
}

/// Ratio of the continuous mass `∫_a^b e^{-α|x-x_s|} dx` to its nodal
/// trapezoid sum. Sampling the narrow kernel of a delta source on the grid
/// changes its mass by a factor that stays fixed under refinement at fixed
/// CFL; multiplying by this ratio restores it.
pub fn source_mass_factor(x_s: f64, line: &SweepLine, alpha: f64) -> f64 {
    let x = line.nodes();
    let m = x.len() - 1;
    let cont = (2.0 - (-alpha * (x_s - x[0])).exp() - (-alpha * (x[m] - x_s)).exp()) / alpha;
    let disc: f64 = (0..=m)
        .map(|j| {
            let w = 0.5 * (x[(j + 1).min(m)] - x[j.saturating_sub(1)]);
            w * (-alpha * (x[j] - x_s).abs()).exp()
        })
        .sum();
    cont / disc
}

/// Largest magnitude a solution may reach before a run is declared unstable.
pub const BLOW_UP: f64 = 1e10;

pub(crate) fn blown_up(u: &[f64]) -> bool {
    !u.iter().all(|v| v.abs() <= BLOW_UP)
}

/// Condition at one end of a line; data are functions of time.
#[derive(Clone)]
pub enum EndBc {
    /// `u(end, t)`
    Dirichlet(TimeFn),
    /// `u_x(end, t)`
    Neumann(TimeFn),
    Outflow,
}

#[derive(Clone)]
pub enum LineBc {
    Ends(EndBc, EndBc),
    Periodic,
}

impl LineBc {
    pub fn dirichlet(left: TimeFn, right: TimeFn) -> Self {
        LineBc::Ends(EndBc::Dirichlet(left), EndBc::Dirichlet(right))
    }
    pub fn homogeneous_dirichlet() -> Self {
        Self::dirichlet(time_fn(|_| 0.0), time_fn(|_| 0.0))
    }
    pub fn homogeneous_neumann() -> Self {
        LineBc::Ends(EndBc::Neumann(time_fn(|_| 0.0)), EndBc::Neumann(time_fn(|_| 0.0)))
    }
    pub fn outflow() -> Self {
        LineBc::Ends(EndBc::Outflow, EndBc::Outflow)
    }
    fn has_outflow(&self) -> bool {
        matches!(self, LineBc::Ends(EndBc::Outflow, _) | LineBc::Ends(_, EndBc::Outflow))
    }
}

/// How the closure of one inversion is built.
#[derive(Clone, Copy)]
enum Role {
    /// Boundary data of the centered update at levels `t - dt, t, t + dt`.
    Centered(f64),
    /// Data of the implicit (backward) update at `t`.
    Implicit(f64),
    /// Ends reproduce the input's own boundary behaviour at time `t`.
    Homog(f64),
    /// Ends reproduce zero boundary behaviour.
    Zero,
}

pub struct Stepper1d {
    params: SchemeParams,
    line: SweepLine,
    kernel: LineKernel,
    bc: LineBc,
    sources: Vec<SourceSpec>,
    outflow: OutflowState,
    hist: Option<FieldHistory>,
    steps: usize,
    source_scale: Vec<f64>,
}

impl Stepper1d {
    pub fn new(params: SchemeParams, line: SweepLine, bc: LineBc, sources: Vec<SourceSpec>) -> Result<Self> {
        if bc.has_outflow() && params.variant != Variant::Dispersive {
            return Err(MoltError::UnsupportedClosure(format!(
                "outflow with the {} variant",
                params.variant.name()
            )));
        }
        let kernel = match bc {
            LineBc::Periodic => LineKernel::periodic(&line, params.alpha)?,
            LineBc::Ends(..) => LineKernel::new(&line, params.alpha)?,
        };
        source_field(&sources, &line, &params, 0.0)?;
        Ok(Stepper1d {
            outflow: OutflowState::new(params.beta),
            params,
            line,
            kernel,
            bc,
            sources,
            hist: None,
            steps: 0,
            source_scale: vec![],
        }
        .with_source_normalization(true))
    }

    /// Toggles the mass normalization of delta sources (on by default).
    pub fn with_source_normalization(mut self, on: bool) -> Self {
        self.source_scale = self
            .sources
            .iter()
            .map(|s| if on { source_mass_factor(s.x_s, &self.line, self.params.alpha) } else { 1.0 })
            .collect();
        self
    }

    fn sources_at(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.line.len()];
        for (s, k) in self.sources.iter().zip(&self.source_scale) {
            let f = source_field(std::slice::from_ref(s), &self.line, &self.params, t)?;
            out.iter_mut().zip(&f).for_each(|(o, v)| *o += k * v);
        }
        Ok(out)
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }
    pub fn line(&self) -> &SweepLine {
        &self.line
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
    /// Number of levels computed so far, counting the initial data.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Installs known levels `u^n, u^{n-1}` (and `u^{n-2}`) at time `t_n`.
    pub fn set_levels(&mut self, t_n: f64, u_n: Vec<f64>, u_nm1: Vec<f64>, u_nm2: Option<Vec<f64>>) -> Result<()> {
        if u_n.len() != self.line.len() {
            return Err(MoltError::ShapeMismatch { expected: self.line.len(), got: u_n.len() });
        }
        if self.params.variant == Variant::Diffusive && u_nm2.is_none() {
            return Err(MoltError::MissingLevel("u^{n-2}"));
        }
        let u_nm2 = u_nm2.or_else(|| (self.params.variant.levels() == 3).then(|| u_nm1.clone()));
        let n = self.line.len() - 1;
        self.outflow.u_a_hist = [u_n[0], u_nm1[0]];
        self.outflow.u_b_hist = [u_n[n], u_nm1[n]];
        self.hist = Some(FieldHistory::new(u_n, u_nm1, u_nm2, t_n)?);
        self.steps = 2;
        Ok(())
    }

    /// Starts from `u(0) = u0`, `u_t(0) = g` with a half step of the centered scheme.
    /// The diffusive variant takes one further centered step to fill `u^{n-2}`.
    pub fn start(&mut self, u0: &[f64], g: &[f64]) -> Result<()> {
        let n = self.line.len();
        if u0.len() != n || g.len() != n {
            return Err(MoltError::ShapeMismatch { expected: n, got: u0.len().min(g.len()) });
        }
        let p = self.params;
        let w = if self.bc.has_outflow() {
            // compactly supported data: nothing outside the line yet, A = B = 0
            let mut v = vec![0.0; n];
            self.kernel.convolve_into(u0, &mut v);
            let s = self.sources_at(0.0)?;
            v.iter().zip(&s).map(|(a, b)| a + b).collect()
        } else {
            self.inverse(u0, Role::Centered(0.0), Some(0.0))?.0
        };
        let mut u1: Vec<f64> = (0..n)
            .map(|j| u0[j] + p.dt * g[j] + 0.5 * p.beta * p.beta * (w[j] - u0[j]))
            .collect();
        self.impose_dirichlet(&mut u1, p.dt);
        let levels = p.variant.levels();
        self.hist = Some(FieldHistory::new(u1, u0.to_vec(), (levels == 3).then(|| u0.to_vec()), p.dt)?);
        let last = n - 1;
        self.outflow.u_a_hist = [self.u()[0], u0[0]];
        self.outflow.u_b_hist = [self.u()[last], u0[last]];
        self.steps = 1;
        if p.variant == Variant::Diffusive {
            let next = self.centered_update(false)?;
            self.push(next);
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<()> {
        let next = match self.params.variant {
            Variant::Dispersive => self.centered_update(false)?,
            Variant::Dissipative => self.centered_update(true)?,
            Variant::Diffusive => self.implicit_update()?,
        };
        if blown_up(&next) {
            return Err(MoltError::BlowUp(self.time() + self.params.dt));
        }
        self.push(next);
        Ok(())
    }

    pub fn run_until(&mut self, t_final: f64) -> Result<()> {
        while self.time() < t_final - 1e-9 * self.params.dt {
            self.step()?;
        }
        Ok(())
    }

    fn push(&mut self, mut next: Vec<f64>) {
        let dt = self.params.dt;
        let hist = self.hist.as_mut().expect("stepper not started");
        if matches!(self.bc, LineBc::Periodic) {
            let m = next.len() - 1;
            next[m] = next[0];
        }
        let m = next.len() - 1;
        self.outflow.push_endpoints(next[0], next[m]);
        hist.push(next, dt);
        self.steps += 1;
    }

    fn impose_dirichlet(&self, u: &mut [f64], t: f64) {
        if let LineBc::Ends(l, r) = &self.bc {
            let m = u.len() - 1;
            if let EndBc::Dirichlet(f) = l {
                u[0] = f(t);
            }
            if let EndBc::Dirichlet(f) = r {
                u[m] = f(t);
            }
        }
    }

    fn end_condition(&self, bc: &EndBc, f: &[f64], end: usize, role: Role, outflow: EndCondition) -> EndCondition {
        let p = &self.params;
        match (bc, role) {
            (EndBc::Dirichlet(u), Role::Centered(t)) => {
                EndCondition::Value(EndData([u(t - p.dt), u(t), u(t + p.dt)]).target(p.beta))
            }
            (EndBc::Neumann(v), Role::Centered(t)) => {
                EndCondition::Slope(EndData([v(t - p.dt), v(t), v(t + p.dt)]).target(p.beta))
            }
            (EndBc::Dirichlet(u), Role::Implicit(t)) => EndCondition::Value(u(t)),
            (EndBc::Neumann(v), Role::Implicit(t)) => EndCondition::Slope(v(t)),
            (EndBc::Dirichlet(_), Role::Homog(_)) => EndCondition::Value(f[end]),
            (EndBc::Neumann(v), Role::Homog(t)) => EndCondition::Slope(v(t)),
            (EndBc::Dirichlet(_), Role::Zero) => EndCondition::Value(0.0),
            (EndBc::Neumann(_), Role::Zero) => EndCondition::Slope(0.0),
            (EndBc::Outflow, _) => outflow,
        }
    }

    /// `L^{-1}[f + S(t_src)/α²]` with the closure selected by `role`; also
    /// returns the homogeneous coefficients used.
    fn inverse(&self, f: &[f64], role: Role, t_src: Option<f64>) -> Result<(Vec<f64>, f64, f64)> {
        let mut v = vec![0.0; f.len()];
        self.kernel.convolve_into(f, &mut v);
        if let Some(t) = t_src {
            if !self.sources.is_empty() {
                let s = self.sources_at(t)?;
                v.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
            }
        }
        let m = v.len() - 1;
        let (a, b) = match &self.bc {
            LineBc::Periodic => periodic_coeffs(v[0], v[m], self.kernel.mu())?,
            LineBc::Ends(l, r) => {
                let lc = self.end_condition(l, f, 0, role, self.outflow.left_condition());
                let rc = self.end_condition(r, f, m, role, self.outflow.right_condition());
                end_coeffs(lc, rc, v[0], v[m], self.kernel.mu(), &self.params)?
            }
        };
        self.kernel.add_modes(&mut v, a, b);
        Ok((v, a, b))
    }

    /// `D[f] = f - L^{-1}[f]` with closure role `role`.
    fn d_op(&self, f: &[f64], role: Role) -> Result<Vec<f64>> {
        let (v, _, _) = self.inverse(f, role, None)?;
        Ok(f.iter().zip(&v).map(|(a, b)| a - b).collect())
    }

    fn centered_update(&mut self, dissipate: bool) -> Result<Vec<f64>> {
        let p = self.params;
        let hist = self.hist.as_ref().ok_or(MoltError::MissingLevel("u^n"))?;
        let t = hist.t_n;
        let (v, a, b) = self.inverse(&hist.u_n, Role::Centered(t), Some(t))?;
        let b2 = p.beta * p.beta;
        let mut next: Vec<f64> = (0..v.len())
            .map(|j| 2.0 * hist.u_n[j] - hist.u_nm1[j] - b2 * hist.u_n[j] + b2 * v[j])
            .collect();
        if dissipate && p.epsilon > 0.0 {
            let d1 = self.d_op(&hist.u_nm1, Role::Homog(t - p.dt))?;
            let d2 = self.d_op(&d1, Role::Zero)?;
            next.iter_mut().zip(&d2).for_each(|(u, d)| *u += p.epsilon * d);
        }
        self.outflow.a_prev = a;
        self.outflow.b_prev = b;
        self.impose_dirichlet(&mut next, t + p.dt);
        Ok(next)
    }

    fn implicit_update(&mut self) -> Result<Vec<f64>> {
        let p = self.params;
        let hist = self.hist.as_ref().ok_or(MoltError::MissingLevel("u^n"))?;
        let nm2 = hist.u_nm2.as_ref().ok_or(MoltError::MissingLevel("u^{n-2}"))?;
        let f: Vec<f64> = (0..hist.len())
            .map(|j| 0.5 * (5.0 * hist.u_n[j] - 4.0 * hist.u_nm1[j] + nm2[j]))
            .collect();
        let t1 = hist.t_n + p.dt;
        let (mut next, _, _) = self.inverse(&f, Role::Implicit(t1), Some(t1))?;
        self.impose_dirichlet(&mut next, t1);
        Ok(next)
    }
}
