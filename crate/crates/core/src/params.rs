//! Scheme parameters and stability gating.

use crate::error::{MoltError, Result};

/// Time discretization used by the steppers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Time-centered second-order update; no numerical dissipation.
    Dispersive,
    /// Second-order backward difference update; dissipative, implicit source.
    Diffusive,
    /// Centered update with a tunable `ε D²[u^{n-1}]` damping term.
    Dissipative,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Dispersive => "dispersive",
            Variant::Diffusive => "diffusive",
            Variant::Dissipative => "dissipative",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dispersive" => Some(Variant::Dispersive),
            "diffusive" => Some(Variant::Diffusive),
            "dissipative" => Some(Variant::Dissipative),
            _ => None,
        }
    }

    /// Number of time levels the update reads.
    pub fn levels(self) -> usize {
        match self {
            Variant::Dispersive => 2,
            Variant::Diffusive | Variant::Dissipative => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeParams {
    pub c: f64,
    pub dt: f64,
    pub beta: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub variant: Variant,
}

/// Largest β keeping the centered scheme with dissipation ε A-stable.
pub fn max_beta(variant: Variant, epsilon: f64) -> f64 {
    match variant {
        Variant::Dispersive => 2.0,
        Variant::Dissipative => (2.0 + 2.0 * (1.0 - epsilon).sqrt()).sqrt(),
        Variant::Diffusive => f64::INFINITY,
    }
}

/// Builds validated parameters. For the diffusive variant `beta` is ignored
/// and stored as `√2`, so that `alpha = beta / (c dt)` holds for all variants.
pub fn make_params(c: f64, dt: f64, beta: f64, epsilon: f64, variant: Variant) -> Result<SchemeParams> {
    if !(c > 0.0 && dt > 0.0 && c.is_finite() && dt.is_finite()) {
        return Err(MoltError::NonPositiveStep { c, dt });
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(MoltError::EpsilonOutOfRange(epsilon));
    }
    let beta = match variant {
        Variant::Diffusive => std::f64::consts::SQRT_2,
        _ => {
            let max = max_beta(variant, epsilon);
            // a few ulps of slack so that the closed-form bound itself is accepted
            if !(beta > 0.0 && beta <= max * (1.0 + 4.0 * f64::EPSILON)) {
                return Err(MoltError::BetaOutOfRange { beta, max });
            }
            beta
        }
    };
    Ok(SchemeParams {
        c,
        dt,
        beta,
        alpha: beta / (c * dt),
        epsilon,
        variant,
    })
}

impl SchemeParams {
    pub fn new(c: f64, dt: f64, beta: f64, epsilon: f64, variant: Variant) -> Result<Self> {
        make_params(c, dt, beta, epsilon, variant)
    }

    /// Convenience constructor from a CFL number `c dt / h`.
    pub fn from_cfl(c: f64, h: f64, cfl: f64, beta: f64, epsilon: f64, variant: Variant) -> Result<Self> {
        make_params(c, cfl * h / c, beta, epsilon, variant)
    }

    pub fn cfl(&self, h: f64) -> f64 {
        self.c * self.dt / h
    }

    /// ε actually applied by the update (zero unless dissipative).
    pub fn damping(&self) -> f64 {
        if self.variant == Variant::Dissipative {
            self.epsilon
        } else {
            0.0
        }
    }
}

/// Solution levels `u^n, u^{n-1}` and optionally `u^{n-2}` over a node set.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldHistory {
    pub u_n: Vec<f64>,
    pub u_nm1: Vec<f64>,
    pub u_nm2: Option<Vec<f64>>,
    pub t_n: f64,
}

impl FieldHistory {
    pub fn new(u_n: Vec<f64>, u_nm1: Vec<f64>, u_nm2: Option<Vec<f64>>, t_n: f64) -> Result<Self> {
        let n = u_n.len();
        for v in std::iter::once(&u_nm1).chain(u_nm2.as_ref()) {
            if v.len() != n {
                return Err(MoltError::ShapeMismatch { expected: n, got: v.len() });
            }
        }
        Ok(FieldHistory { u_n, u_nm1, u_nm2, t_n })
    }

    pub fn len(&self) -> usize {
        self.u_n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_n.is_empty()
    }

    /// Pushes `u^{n+1}` and advances the clock by `dt`.
    pub fn push(&mut self, next: Vec<f64>, dt: f64) {
        let old_nm1 = std::mem::replace(&mut self.u_nm1, std::mem::replace(&mut self.u_n, next));
        if self.u_nm2.is_some() {
            self.u_nm2 = Some(old_nm1);
        }
        self.t_n += dt;
    }

    pub fn max_abs(&self) -> f64 {
        self.u_n.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispersive_alpha() {
        let p = make_params(1.0, 0.01, 2.0, 0.0, Variant::Dispersive).unwrap();
        assert!((p.alpha - 200.0).abs() < 1e-12);
    }

    #[test]
    fn dispersive_beta_bound() {
        let e = make_params(1.0, 0.01, 2.1, 0.0, Variant::Dispersive).unwrap_err();
        assert!(matches!(e, MoltError::BetaOutOfRange { .. }));
        assert!(make_params(1.0, 0.01, 0.0, 0.0, Variant::Dispersive).is_err());
    }

    #[test]
    fn diffusive_alpha() {
        let p = make_params(1.0, 0.01, 123.0, 0.0, Variant::Diffusive).unwrap();
        assert!((p.alpha - 141.421_356_237_309_5).abs() < 1e-9);
    }

    #[test]
    fn dissipative_bound() {
        let m = max_beta(Variant::Dissipative, 0.19);
        assert!((m - 3.8f64.sqrt()).abs() < 1e-14);
        assert!((m - 1.949_358_868_961_793).abs() < 1e-12);
        assert!(make_params(1.0, 0.01, m, 0.19, Variant::Dissipative).is_ok());
        assert!(make_params(1.0, 0.01, 1.95, 0.19, Variant::Dissipative).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            make_params(0.0, 0.01, 1.0, 0.0, Variant::Dispersive),
            Err(MoltError::NonPositiveStep { .. })
        ));
        assert!(matches!(
            make_params(1.0, -1.0, 1.0, 0.0, Variant::Dispersive),
            Err(MoltError::NonPositiveStep { .. })
        ));
        assert!(matches!(
            make_params(1.0, 0.1, 1.0, 1.0, Variant::Dissipative),
            Err(MoltError::EpsilonOutOfRange(_))
        ));
    }

    #[test]
    fn history_shift() {
        let mut h = FieldHistory::new(vec![2.0], vec![1.0], Some(vec![0.0]), 1.0).unwrap();
        h.push(vec![3.0], 0.5);
        assert_eq!((h.u_n[0], h.u_nm1[0], h.u_nm2.as_ref().unwrap()[0]), (3.0, 2.0, 1.0));
        assert_eq!(h.t_n, 1.5);
        assert!(FieldHistory::new(vec![0.0; 2], vec![0.0; 3], None, 0.0).is_err());
    }

    #[test]
    fn alpha_invariant_under_rescaling() {
        for lambda in [0.5, 2.0, 7.0] {
            let p = make_params(1.0, 0.02, 1.5, 0.0, Variant::Dispersive).unwrap();
            let q = make_params(lambda, 0.02 / lambda, 1.5, 0.0, Variant::Dispersive).unwrap();
            assert!((p.alpha - q.alpha).abs() < 1e-12 * p.alpha);
        }
    }
}
