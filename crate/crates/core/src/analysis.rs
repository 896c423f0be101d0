//! Error norms, refinement reports, Bessel reference modes and the damping fit.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::OnceLock;
use std::fmt::{self, Write as _};

use crate::error::{MoltError, Result};
use crate::fastconv::SweepLine;
use crate::geometry::{EmbeddedMesh, Grid};
use crate::params::{SchemeParams, Variant};
use crate::stepper1d::{LineBc, Stepper1d};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L2,
    Linf,
}

fn combine(diffs: impl Iterator<Item = f64>, cell: f64, norm: Norm) -> Result<f64> {
    let mut count = 0usize;
    let mut acc = 0.0f64;
    for d in diffs {
        count += 1;
        match norm {
            Norm::L2 => acc += d * d,
            Norm::Linf => acc = acc.max(d.abs()),
        }
    }
    if count == 0 {
        return Err(MoltError::EmptyInterior);
    }
    Ok(match norm {
        Norm::L2 => (acc * cell).sqrt(),
        Norm::Linf => acc,
    })
}

/// Error over interior nodes of `mesh`; `L2` weights each node by `dx·dy`.
pub fn grid_error(numeric: &[f64], reference: &[f64], mesh: &EmbeddedMesh, norm: Norm) -> Result<f64> {
    let n = mesh.grid.n_nodes();
    for len in [numeric.len(), reference.len()] {
        if len != n {
            return Err(MoltError::ShapeMismatch { expected: n, got: len });
        }
    }
    let diffs = mesh.interior().map(|k| numeric[k] - reference[k]);
    combine(diffs, mesh.grid.dx * mesh.grid.dy, norm)
}

/// As [`grid_error`] against a closed form `f(x, y)`.
pub fn grid_error_fn(numeric: &[f64], mesh: &EmbeddedMesh, f: impl Fn(f64, f64) -> f64, norm: Norm) -> Result<f64> {
    let reference: Vec<f64> = (0..mesh.grid.n_nodes())
        .map(|k| {
            let (x, y) = mesh.point(k);
            f(x, y)
        })
        .collect();
    grid_error(numeric, &reference, mesh, norm)
}

/// Error on a 1D line with node weight `h` (the interior spacing).
pub fn line_error(numeric: &[f64], reference: &[f64], line: &SweepLine, norm: Norm) -> Result<f64> {
    if numeric.len() != reference.len() {
        return Err(MoltError::ShapeMismatch { expected: reference.len(), got: numeric.len() });
    }
    combine(numeric.iter().zip(reference).map(|(a, b)| a - b), line.h(), norm)
}

/// Samples a field on `fine` at the nodes of `coarse`. The grids must be
/// nested: same origin and `fine.dx = coarse.dx / r` for an integer `r`.
pub fn restrict(field: &[f64], fine: &Grid, coarse: &Grid) -> Result<Vec<f64>> {
    let ratio = |c: f64, f: f64| {
        let r = c / f;
        let ri = r.round();
        (ri >= 1.0 && (r - ri).abs() < 1e-9).then_some(ri as usize)
    };
    let nested = |what: &str| MoltError::InvalidValue { key: "grid".into(), value: format!("not nested: {what}") };
    let rx = ratio(coarse.dx, fine.dx).ok_or_else(|| nested("x spacing"))?;
    let ry = ratio(coarse.dy, fine.dy).ok_or_else(|| nested("y spacing"))?;
    let tol = 1e-9 * fine.dx.min(fine.dy);
    if (coarse.x0 - fine.x0).abs() > tol || (coarse.y0 - fine.y0).abs() > tol {
        return Err(nested("origin"));
    }
    if coarse.nx * rx != fine.nx || coarse.ny * ry != fine.ny {
        return Err(nested("extent"));
    }
    if field.len() != fine.n_nodes() {
        return Err(MoltError::ShapeMismatch { expected: fine.n_nodes(), got: field.len() });
    }
    Ok((0..coarse.n_nodes())
        .map(|n| {
            let (i, k) = coarse.ik(n);
            field[fine.idx(i * rx, k * ry)]
        })
        .collect())
}

/// `log(e_i / e_{i+1}) / log(ratio)` for consecutive levels.
pub fn convergence_order(errors: &[f64], ratio: f64) -> Result<Vec<f64>> {
    if let Some(&e) = errors.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
        return Err(MoltError::NonPositiveError(e));
    }
    if errors.len() < 2 {
        return Err(MoltError::InsufficientSteps { need: 2, got: errors.len() });
    }
    Ok(errors.windows(2).map(|w| (w[0] / w[1]).ln() / ratio.ln()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub dx: f64,
    pub dy: f64,
    pub dt: f64,
}

/// Errors of a refinement study with the orders between consecutive levels.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementReport {
    pub levels: Vec<Level>,
    pub l2: Vec<f64>,
    pub linf: Vec<f64>,
    pub l2_orders: Vec<f64>,
    pub linf_orders: Vec<f64>,
}

impl RefinementReport {
    pub fn new(levels: Vec<Level>, l2: Vec<f64>, linf: Vec<f64>, ratio: f64) -> Result<Self> {
        for len in [l2.len(), linf.len()] {
            if len != levels.len() {
                return Err(MoltError::ShapeMismatch { expected: levels.len(), got: len });
            }
        }
        Ok(RefinementReport {
            l2_orders: convergence_order(&l2, ratio)?,
            linf_orders: convergence_order(&linf, ratio)?,
            levels,
            l2,
            linf,
        })
    }

    /// Aligned plain-text table; orders sit on the finer level's row.
    pub fn table(&self) -> String {
        let mut s = format!("{:>12} {:>12} {:>12} {:>14} {:>8} {:>14} {:>8}\n", "dx", "dy", "dt", "L2 error", "order", "Linf error", "order");
        for (i, l) in self.levels.iter().enumerate() {
            let ord = |o: &[f64]| if i == 0 { "-".to_string() } else { format!("{:.4}", o[i - 1]) };
            let _ = writeln!(
                s,
                "{:>12.6e} {:>12.6e} {:>12.6e} {:>14.6e} {:>8} {:>14.6e} {:>8}",
                l.dx,
                l.dy,
                l.dt,
                self.l2[i],
                ord(&self.l2_orders),
                self.linf[i],
                ord(&self.linf_orders)
            );
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("dx,dy,dt,l2_error,l2_order,linf_error,linf_order\n");
        for (i, l) in self.levels.iter().enumerate() {
            let ord = |o: &[f64]| if i == 0 { String::new() } else { format!("{:.16e}", o[i - 1]) };
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{}",
                l.dx,
                l.dy,
                l.dt,
                self.l2[i],
                ord(&self.l2_orders),
                self.linf[i],
                ord(&self.linf_orders)
            );
        }
        s
    }
}

impl fmt::Display for RefinementReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table())
    }
}

/// Below this |x| the power series is used, above it the Hankel expansion.
/// At 14 both stay below 1e-11: the series loses about 1e-12 to
/// cancellation and the smallest asymptotic term is of order e^{-2x}.
const SERIES_LIMIT: f64 = 14.0;

fn bessel_series(nu: u32, x: f64) -> f64 {
    let q = -x * x / 4.0;
    let mut term = (x / 2.0).powi(nu as i32) / (1..=nu).map(f64::from).product::<f64>();
    let mut sum = term;
    for k in 1..200u32 {
        term *= q / (f64::from(k) * f64::from(k + nu));
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

fn bessel_asymptotic(nu: u32, x: f64) -> f64 {
    let mu = 4.0 * f64::from(nu * nu);
    let (mut p, mut q) = (0.0, 0.0);
    let mut a = 1.0;
    let mut last = f64::INFINITY;
    for k in 0..60u32 {
        if k > 0 {
            let odd = f64::from(2 * k - 1);
            a *= (mu - odd * odd) / (f64::from(k) * 8.0 * x);
        }
        if a.abs() >= last {
            break;
        }
        last = a.abs();
        match k % 4 {
            0 => p += a,
            1 => q += a,
            2 => p -= a,
            _ => q -= a,
        }
        if a.abs() < 1e-17 {
            break;
        }
    }
    let chi = x - (f64::from(nu) / 2.0 + 0.25) * PI;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

fn bessel(nu: u32, x: f64) -> f64 {
    let sign = if nu % 2 == 1 && x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    sign * if x <= SERIES_LIMIT { bessel_series(nu, x) } else { bessel_asymptotic(nu, x) }
}

pub fn bessel_j0(x: f64) -> f64 {
    bessel(0, x)
}

pub fn bessel_j1(x: f64) -> f64 {
    bessel(1, x)
}

/// Root of `f` in `[lo, hi]` by bisection; `f(lo)` and `f(hi)` differ in sign.
pub fn bisect_root(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `k`-th positive zero (1-based) of `f`, scanning from the origin.
fn nth_zero(f: impl Fn(f64) -> f64, k: usize) -> f64 {
    let step = 0.25;
    let mut found = 0;
    let mut a = step;
    loop {
        let b = a + step;
        if (f(a) > 0.0) != (f(b) > 0.0) {
            found += 1;
            if found == k {
                return bisect_root(&f, a, b);
            }
        }
        a = b;
    }
}

/// `k`-th positive zero of `J₀`.
pub fn j0_zero(k: usize) -> f64 {
    nth_zero(bessel_j0, k.max(1))
}

/// `k`-th nonzero root of `J₀′ = −J₁`.
pub fn j0_prime_zero(k: usize) -> f64 {
    nth_zero(bessel_j1, k.max(1))
}

/// Radial standing mode `J₀(z r/R) cos(z c t/R)` on a disk of radius `R`
/// centred at the origin. `z` is a zero of `J₀` (Dirichlet) or of `J₀′`
/// (Neumann).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselMode {
    pub radius: f64,
    pub z: f64,
    pub c: f64,
}

impl BesselMode {
    /// Second Dirichlet mode of the unit disk.
    pub fn dirichlet(radius: f64, c: f64) -> Self {
        BesselMode { radius, z: j0_zero(2), c }
    }

    /// First non-constant Neumann mode.
    pub fn neumann(radius: f64, c: f64) -> Self {
        BesselMode { radius, z: j0_prime_zero(1), c }
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        let r = x.hypot(y);
        bessel_j0(self.z * r / self.radius) * (self.z * self.c * t / self.radius).cos()
    }

    /// `∂u/∂t`.
    pub fn velocity(&self, x: f64, y: f64, t: f64) -> f64 {
        let w = self.z * self.c / self.radius;
        -w * bessel_j0(self.z * x.hypot(y) / self.radius) * (w * t).sin()
    }
}

/// Named closed-form solutions with unit wave speed:
/// `bessel_dirichlet` (unit disk, second J₀ zero), `bessel_neumann`
/// (radius π/2, first J₀′ zero), `plane_wave` `sin 2π(x − t)`, and
/// `sine_1d` `sin πx cos πt`.
pub fn reference_solution(name: &str, x: f64, y: f64, t: f64) -> Result<f64> {
    static DIRICHLET: OnceLock<BesselMode> = OnceLock::new();
    static NEUMANN: OnceLock<BesselMode> = OnceLock::new();
    match name {
        "bessel_dirichlet" => Ok(DIRICHLET.get_or_init(|| BesselMode::dirichlet(1.0, 1.0)).eval(x, y, t)),
        "bessel_neumann" => Ok(NEUMANN.get_or_init(|| BesselMode::neumann(FRAC_PI_2, 1.0)).eval(x, y, t)),
        "plane_wave" => Ok((2.0 * PI * (x - t)).sin()),
        "sine_1d" => Ok((PI * x).sin() * (PI * t).cos()),
        other => Err(MoltError::UnknownReference(other.to_string())),
    }
}

/// Per-step squared amplification of the Fourier mode `k = 2π·mode` on a
/// periodic unit line of `n_cells` cells.
///
/// The mode's cosine and sine coefficients obey the two-level recurrence
/// `a_{n+1} = p a_n + q a_{n−1}` of the centered scheme; `p, q` are fitted by
/// least squares over `steps` steps and the factor is the largest `|z|²` over
/// the roots of `z² − p z − q`. This is insensitive to the standing-wave
/// oscillation that spoils a direct fit of the amplitude.
pub fn measure_damping(params: &SchemeParams, n_cells: usize, mode: usize, steps: usize) -> Result<f64> {
    if params.variant == Variant::Diffusive {
        return Err(MoltError::UnsupportedClosure("damping fit needs a centered variant".into()));
    }
    if steps < 8 {
        return Err(MoltError::InsufficientSteps { need: 8, got: steps });
    }
    let line = SweepLine::uniform(0.0, 1.0, n_cells)?;
    let k = 2.0 * PI * mode as f64;
    let x = line.nodes().to_vec();
    let cos: Vec<f64> = x.iter().map(|x| (k * x).cos()).collect();
    let sin: Vec<f64> = x.iter().map(|x| (k * x).sin()).collect();
    // a phase-shifted start excites both recurrence roots
    let start = |shift: f64| -> Vec<f64> { x.iter().map(|x| (k * x + shift).cos()).collect() };
    let mut s = Stepper1d::new(*params, line, LineBc::Periodic, vec![])?;
    let nm2 = (params.variant == Variant::Dissipative).then(|| start(0.6));
    s.set_levels(0.0, start(0.0), start(0.3), nm2)?;
    let project = |u: &[f64], basis: &[f64]| -> f64 { u[..n_cells].iter().zip(basis).map(|(a, b)| a * b).sum() };
    let mut a = vec![(project(&start(0.3), &cos), project(&start(0.3), &sin))];
    a.push((project(s.u(), &cos), project(s.u(), &sin)));
    for _ in 0..steps {
        s.step()?;
        a.push((project(s.u(), &cos), project(s.u(), &sin)));
    }
    let (mut spp, mut spq, mut sqq, mut sp, mut sq) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let scale = a.iter().map(|(c, s)| c.abs().max(s.abs())).fold(0.0, f64::max);
    for w in a.windows(3) {
        for (y0, y1, y2) in [(w[0].0, w[1].0, w[2].0), (w[0].1, w[1].1, w[2].1)] {
            let (y0, y1, y2) = (y0 / scale, y1 / scale, y2 / scale);
            spp += y1 * y1;
            spq += y1 * y0;
            sqq += y0 * y0;
            sp += y2 * y1;
            sq += y2 * y0;
        }
    }
    let det = spp * sqq - spq * spq;
    let (p, q) = if det.abs() > 1e-14 * spp * sqq {
        ((sp * sqq - sq * spq) / det, (spp * sq - spq * sp) / det)
    } else {
        (sp / spp, 0.0)
    };
    let disc = p * p + 4.0 * q;
    Ok(if disc < 0.0 {
        -q
    } else {
        let r = 0.5 * (p.abs() + disc.sqrt());
        r * r
    })
}
