//! Homogeneous-mode coefficients for one line.
//!
//! The inverse on `[a, b]` is `I[f](x) + A e^{-α(x-a)} + B e^{-α(b-x)}`. Each
//! boundary condition supplies one linear row in `(A, B)` per end.

use crate::error::{MoltError, Result};
use crate::fastconv::moments;
use crate::params::SchemeParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosureKind {
    Dirichlet,
    Neumann,
    Periodic,
    Outflow,
}

impl ClosureKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dirichlet" => Some(ClosureKind::Dirichlet),
            "neumann" => Some(ClosureKind::Neumann),
            "periodic" => Some(ClosureKind::Periodic),
            "outflow" => Some(ClosureKind::Outflow),
            _ => None,
        }
    }
}

/// Boundary data at one end for levels `t^{n-1}, t^n, t^{n+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EndData(pub [f64; 3]);

impl EndData {
    pub fn constant(v: f64) -> Self {
        EndData([v; 3])
    }
    /// Value the inverse must take so that the centered update reproduces the data.
    pub fn target(&self, beta: f64) -> f64 {
        let [p, c, n] = self.0;
        c + (n - 2.0 * c + p) / (beta * beta)
    }
}

/// Per-line closure: kind, latest coefficients, decay factor and data.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryClosure {
    pub kind: ClosureKind,
    pub a: f64,
    pub b: f64,
    pub mu: f64,
    pub left: EndData,
    pub right: EndData,
}

/// One linear condition `ca A + cb B = rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub ca: f64,
    pub cb: f64,
    pub rhs: f64,
}

/// Condition imposed at a single end of a line on `v = L^{-1}[f]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EndCondition {
    /// `v(end) = value`
    Value(f64),
    /// `v'(end) = slope`
    Slope(f64),
    /// Time-convolution transmission condition.
    Outflow {
        prev: f64,
        u_n: f64,
        u_nm1: f64,
    },
}

fn check_mu(mu: f64) -> Result<()> {
    // μ may underflow to zero on lines many decay lengths long
    if !(0.0..1.0).contains(&mu) || 1.0 - mu * mu < 1e-14 {
        return Err(MoltError::DegenerateLine(mu));
    }
    Ok(())
}

/// Row at `x = a` given `I(a)`.
pub fn left_row(cond: EndCondition, i_a: f64, mu: f64, alpha: f64, g: &OutflowGammas) -> Row {
    match cond {
        EndCondition::Value(t) => Row { ca: 1.0, cb: mu, rhs: t - i_a },
        EndCondition::Slope(v) => Row { ca: 1.0, cb: -mu, rhs: i_a - v / alpha },
        EndCondition::Outflow { prev, u_n, u_nm1 } => Row {
            ca: 1.0 - g.big[0],
            cb: -g.big[0] * mu,
            rhs: g.decay * prev + g.big[0] * i_a + g.big[1] * u_n + g.big[2] * u_nm1,
        },
    }
}

/// Row at `x = b` given `I(b)`.
pub fn right_row(cond: EndCondition, i_b: f64, mu: f64, alpha: f64, g: &OutflowGammas) -> Row {
    match cond {
        EndCondition::Value(t) => Row { ca: mu, cb: 1.0, rhs: t - i_b },
        EndCondition::Slope(v) => Row { ca: -mu, cb: 1.0, rhs: i_b + v / alpha },
        EndCondition::Outflow { prev, u_n, u_nm1 } => Row {
            ca: -g.big[0] * mu,
            cb: 1.0 - g.big[0],
            rhs: g.decay * prev + g.big[0] * i_b + g.big[1] * u_n + g.big[2] * u_nm1,
        },
    }
}

/// Solves the two rows by Cramer's rule.
pub fn solve_rows(l: Row, r: Row) -> Result<(f64, f64)> {
    let det = l.ca * r.cb - l.cb * r.ca;
    let scale = (l.ca.abs() + l.cb.abs()) * (r.ca.abs() + r.cb.abs());
    if det.abs() <= 1e-14 * scale {
        return Err(MoltError::SingularOutflowSystem);
    }
    Ok(((l.rhs * r.cb - l.cb * r.rhs) / det, (l.ca * r.rhs - l.rhs * r.ca) / det))
}

/// Coefficients for mixed or matching end conditions.
pub fn end_coeffs(
    left: EndCondition,
    right: EndCondition,
    i_a: f64,
    i_b: f64,
    mu: f64,
    params: &SchemeParams,
) -> Result<(f64, f64)> {
    check_mu(mu)?;
    let g = outflow_gammas(params.beta);
    let l = left_row(left, i_a, mu, params.alpha, &g);
    let r = right_row(right, i_b, mu, params.alpha, &g);
    match solve_rows(l, r) {
        Err(_) if !matches!(left, EndCondition::Outflow { .. }) && !matches!(right, EndCondition::Outflow { .. }) => {
            Err(MoltError::DegenerateLine(mu))
        }
        other => other,
    }
}

pub fn dirichlet_coeffs(i_a: f64, i_b: f64, left: &EndData, right: &EndData, beta: f64, mu: f64) -> Result<(f64, f64)> {
    check_mu(mu)?;
    let wa = i_a - left.target(beta);
    let wb = i_b - right.target(beta);
    let d = 1.0 - mu * mu;
    Ok((-(wa - mu * wb) / d, -(wb - mu * wa) / d))
}

/// `left`/`right` hold the outward-agnostic derivative `u_x` at each end.
pub fn neumann_coeffs(i_a: f64, i_b: f64, left: &EndData, right: &EndData, params: &SchemeParams, mu: f64) -> Result<(f64, f64)> {
    check_mu(mu)?;
    let wa = i_a - left.target(params.beta) / params.alpha;
    let wb = i_b + right.target(params.beta) / params.alpha;
    let d = 1.0 - mu * mu;
    Ok(((wa + mu * wb) / d, (wb + mu * wa) / d))
}

pub fn periodic_coeffs(i_a: f64, i_b: f64, mu: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&mu) || 1.0 - mu < 1e-14 {
        return Err(MoltError::DegenerateLine(mu));
    }
    Ok((i_b / (1.0 - mu), i_a / (1.0 - mu)))
}

/// Quadrature weights of the outflow time convolution and their eliminated forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutflowGammas {
    pub small: [f64; 3],
    pub big: [f64; 3],
    pub decay: f64,
}

/// `γ₀, γ₁, γ₂` weight `u^{n+1}, u^n, u^{n-1}` at the boundary; `Γᵢ` follow
/// from eliminating `u^{n+1}` with the centered update.
pub fn outflow_gammas(beta: f64) -> OutflowGammas {
    let [m0, m1, m2] = moments(beta);
    let g0 = 0.25 * (m2 - m1);
    let g1 = 0.5 * (m0 - m2);
    let g2 = 0.25 * (m1 + m2);
    let b2 = beta * beta;
    OutflowGammas {
        small: [g0, g1, g2],
        big: [b2 * g0, g1 - g0 * (b2 - 2.0), g2 - g0],
        decay: (-beta).exp(),
    }
}

/// Transmission history for a line with outflow at one or both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct OutflowState {
    pub a_prev: f64,
    pub b_prev: f64,
    /// `u(a)` at levels n, n-1
    pub u_a_hist: [f64; 2],
    pub u_b_hist: [f64; 2],
    pub gammas: OutflowGammas,
}

impl OutflowState {
    pub fn new(beta: f64) -> Self {
        OutflowState {
            a_prev: 0.0,
            b_prev: 0.0,
            u_a_hist: [0.0; 2],
            u_b_hist: [0.0; 2],
            gammas: outflow_gammas(beta),
        }
    }

    pub fn left_condition(&self) -> EndCondition {
        EndCondition::Outflow {
            prev: self.a_prev,
            u_n: self.u_a_hist[0],
            u_nm1: self.u_a_hist[1],
        }
    }

    pub fn right_condition(&self) -> EndCondition {
        EndCondition::Outflow {
            prev: self.b_prev,
            u_n: self.u_b_hist[0],
            u_nm1: self.u_b_hist[1],
        }
    }

    /// Records the endpoint values of the level just computed.
    pub fn push_endpoints(&mut self, ua: f64, ub: f64) {
        self.u_a_hist = [ua, self.u_a_hist[0]];
        self.u_b_hist = [ub, self.u_b_hist[0]];
    }
}

/// Outflow at both ends. The caller must have pushed `u^n` endpoint values
/// (and `u^{n-1}`) before calling; the new coefficients are stored.
pub fn outflow_coeffs(state: &mut OutflowState, i_a: f64, i_b: f64, mu: f64) -> Result<(f64, f64)> {
    check_mu(mu)?;
    let g = &state.gammas;
    let wa = g.decay * state.a_prev + g.big[0] * i_a + g.big[1] * state.u_a_hist[0] + g.big[2] * state.u_a_hist[1];
    let wb = g.decay * state.b_prev + g.big[0] * i_b + g.big[1] * state.u_b_hist[0] + g.big[2] * state.u_b_hist[1];
    let p = 1.0 - g.big[0];
    let q = mu * g.big[0];
    let det = p * p - q * q;
    if det.abs() <= 1e-14 * (p * p + q * q) {
        return Err(MoltError::SingularOutflowSystem);
    }
    let a = (p * wa + q * wb) / det;
    let b = (p * wb + q * wa) / det;
    state.a_prev = a;
    state.b_prev = b;
    Ok((a, b))
}
