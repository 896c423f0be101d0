//! O(N) evaluation of `I[f](x) = (α/2) ∫_a^b f(x') e^{-α|x-x'|} dx'` on a line.
//!
//! The integral is split at `x` into a left and a right part, each of which
//! obeys an exact exponential recursion from node to node. Only the local cell
//! integrals need quadrature; they use an exponentially weighted quadratic
//! interpolant. On uniform cells the weights reduce to the classical `P, Q, R`.

use crate::error::{MoltError, Result};
use crate::params::SchemeParams;

/// Weights of the unit-kernel local integral `ν ∫_0^1 f(s) e^{-νs} ds`
/// against `f(0)`, `f(1)` and the second difference through `f(-1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadWeights {
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

/// Exponential moments `M_k(ν) = ν ∫_0^1 s^k e^{-νs} ds` for k = 0, 1, 2.
pub(crate) fn moments(nu: f64) -> [f64; 3] {
    if nu < 0.5 {
        // M_k = ν Σ_n (-ν)^n / (n! (n + k + 1))
        let mut out = [0.0; 3];
        for (k, m) in out.iter_mut().enumerate() {
            let mut term = 1.0;
            let mut sum = 0.0;
            for n in 0..40 {
                let add = term / (n + k + 1) as f64;
                sum += add;
                if add.abs() < 1e-18 * sum.abs() {
                    break;
                }
                term *= -nu / (n + 1) as f64;
            }
            *m = nu * sum;
        }
        out
    } else {
        let d = (-nu).exp();
        let m0 = -(-nu).exp_m1();
        let m1 = (m0 - nu * d) / nu;
        let m2 = (2.0 * m0 - d * nu * (nu + 2.0)) / (nu * nu);
        [m0, m1, m2]
    }
}

/// Second-order quadrature weights for a uniform cell of width `Δx`, `nu = αΔx`.
///
/// `P = 1 - (1-d)/ν`, `Q = -d + (1-d)/ν`, `R = (1-d)/ν² - (1+d)/(2ν)` with
/// `d = e^{-ν}`; evaluated through the exponential moments so that small `ν`
/// does not lose digits.
pub fn local_weights(nu: f64) -> Result<QuadWeights> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(MoltError::NonPositiveNu(nu));
    }
    let [m0, m1, m2] = moments(nu);
    Ok(QuadWeights {
        p: m0 - m1,
        q: m1,
        r: 0.5 * (m2 - m1),
    })
}

/// Half-kernel weights for one cell: integral from the evaluation node
/// (`s = 0`) to the neighbouring node (`s = 1`), with an optional third
/// interpolation node at `s = s3`.
fn cell_weights(nu: f64, s3: Option<f64>) -> [f64; 3] {
    let [m0, m1, m2] = moments(nu);
    match s3 {
        Some(s3) => [
            0.5 * (m2 - (1.0 + s3) * m1 + s3 * m0) / s3,
            0.5 * (m2 - s3 * m1) / (1.0 - s3),
            0.5 * (m2 - m1) / (s3 * (s3 - 1.0)),
        ],
        None => [0.5 * (m0 - m1), 0.5 * m1, 0.0],
    }
}

/// One x- or y-grid line: node coordinates including its two endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepLine {
    nodes: Vec<f64>,
    h: f64,
}

impl SweepLine {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(MoltError::InvalidLine(format!("{} nodes", nodes.len())));
        }
        if nodes.iter().any(|x| !x.is_finite()) || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MoltError::InvalidLine("nodes must be strictly increasing".into()));
        }
        let m = nodes.len() - 1;
        let h = if m >= 3 {
            nodes[2] - nodes[1]
        } else {
            nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
        };
        for j in 1..m.saturating_sub(1) {
            let hj = nodes[j + 1] - nodes[j];
            if (hj - h).abs() > 1e-9 * h {
                return Err(MoltError::InvalidLine(format!("interior spacing not uniform at node {j}")));
            }
        }
        let line = SweepLine { nodes, h };
        if line.h_left() > h * (1.0 + 1e-9) || line.h_right() > h * (1.0 + 1e-9) {
            return Err(MoltError::InvalidLine("end cell wider than the interior spacing".into()));
        }
        Ok(line)
    }

    /// `n_cells` uniform cells on `[a, b]`.
    pub fn uniform(a: f64, b: f64, n_cells: usize) -> Result<Self> {
        let h = (b - a) / n_cells as f64;
        let mut nodes: Vec<f64> = (0..=n_cells).map(|i| a + i as f64 * h).collect();
        nodes[n_cells] = b;
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn a(&self) -> f64 {
        self.nodes[0]
    }
    pub fn b(&self) -> f64 {
        *self.nodes.last().unwrap()
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn h_left(&self) -> f64 {
        self.nodes[1] - self.nodes[0]
    }
    pub fn h_right(&self) -> f64 {
        let m = self.nodes.len() - 1;
        self.nodes[m] - self.nodes[m - 1]
    }
}

/// Output of a convolution: total and left/right partial sums at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvResult {
    pub i: Vec<f64>,
    pub i_left: Vec<f64>,
    pub i_right: Vec<f64>,
    pub mu: f64,
}

#[derive(Debug, Clone)]
struct Stencil {
    idx: [usize; 3],
    w: [f64; 3],
}

/// Precomputed per-line convolution data for a fixed `α`.
#[derive(Debug, Clone)]
pub struct LineKernel {
    alpha: f64,
    n: usize,
    x: Vec<f64>,
    decay: Vec<f64>,
    left: Vec<Stencil>,
    right: Vec<Stencil>,
    uni: [f64; 3],
    uni_left: Vec<bool>,
    uni_right: Vec<bool>,
    ea: Vec<f64>,
    eb: Vec<f64>,
    mu: f64,
    periodic: bool,
}

fn choose_third(eval: f64, other: f64, candidates: &[(usize, f64)]) -> Option<(usize, f64)> {
    let width = other - eval;
    candidates.iter().find_map(|&(k, xc)| {
        let s3 = (xc - eval) / width;
        (s3.abs() >= 0.25 && (s3 - 1.0).abs() >= 0.25).then_some((k, s3))
    })
}

impl LineKernel {
    pub fn new(line: &SweepLine, alpha: f64) -> Result<Self> {
        Self::build(line, alpha, false)
    }

    /// Kernel whose end-cell stencils wrap around, for lines with `u(a) = u(b)`.
    pub fn periodic(line: &SweepLine, alpha: f64) -> Result<Self> {
        if line.len() < 4 {
            return Err(MoltError::InvalidLine("periodic line needs at least 3 cells".into()));
        }
        Self::build(line, alpha, true)
    }

    fn build(line: &SweepLine, alpha: f64, periodic: bool) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(MoltError::NonPositiveNu(alpha));
        }
        let x = line.nodes().to_vec();
        let n = x.len();
        let m = n - 1;
        let h = line.h();
        let len = x[m] - x[0];
        let is_uniform = |w: f64| (w - h).abs() <= 1e-9 * h;
        let decay: Vec<f64> = x.windows(2).map(|w| (-alpha * (w[1] - w[0])).exp()).collect();
        let w = local_weights(alpha * h)?;
        let uni = [0.5 * w.p, 0.5 * w.q, 0.5 * w.r];

        // coordinate of node k seen from the line, unwrapping periodic images
        let coord = |k: isize| -> Option<(usize, f64)> {
            if (0..=m as isize).contains(&k) {
                Some((k as usize, x[k as usize]))
            } else if periodic && k > m as isize {
                let kk = (k - m as isize) as usize;
                Some((kk, x[kk] + len))
            } else if periodic && k < 0 {
                let kk = (m as isize + k) as usize;
                Some((kk, x[kk] - len))
            } else {
                None
            }
        };

        let mut left = vec![Stencil { idx: [0; 3], w: [0.0; 3] }; n];
        let mut right = vec![Stencil { idx: [0; 3], w: [0.0; 3] }; n];
        let mut uni_left = vec![false; n];
        let mut uni_right = vec![false; n];
        for j in 0..n {
            let ji = j as isize;
            if j >= 1 {
                let (other, eval) = (x[j - 1], x[j]);
                let cands: Vec<_> = [coord(ji + 1), coord(ji - 2)].into_iter().flatten().collect();
                let third = choose_third(eval, other, &cands);
                let ww = cell_weights(alpha * (eval - other), third.map(|t| t.1));
                left[j] = Stencil {
                    idx: [j, j - 1, third.map_or(j, |t| t.0)],
                    w: ww,
                };
                uni_left[j] = j + 1 <= m && is_uniform(x[j] - x[j - 1]) && is_uniform(x[j + 1] - x[j]);
            }
            if j < m {
                let (eval, other) = (x[j], x[j + 1]);
                let cands: Vec<_> = [coord(ji - 1), coord(ji + 2)].into_iter().flatten().collect();
                let third = choose_third(eval, other, &cands);
                let ww = cell_weights(alpha * (other - eval), third.map(|t| t.1));
                right[j] = Stencil {
                    idx: [j, j + 1, third.map_or(j, |t| t.0)],
                    w: ww,
                };
                uni_right[j] = j >= 1 && is_uniform(x[j + 1] - x[j]) && is_uniform(x[j] - x[j - 1]);
            }
        }
        let ea = x.iter().map(|&xj| (-alpha * (xj - x[0])).exp()).collect();
        let eb = x.iter().map(|&xj| (-alpha * (x[m] - xj)).exp()).collect();
        Ok(LineKernel {
            alpha,
            n,
            x,
            decay,
            left,
            right,
            uni,
            uni_left,
            uni_right,
            ea,
            eb,
            mu: (-alpha * len).exp(),
            periodic,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
    pub fn nodes(&self) -> &[f64] {
        &self.x
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn is_periodic(&self) -> bool {
        self.periodic
    }
    /// `e^{-α(x_j - a)}` at every node.
    pub fn left_mode(&self) -> &[f64] {
        &self.ea
    }
    /// `e^{-α(b - x_j)}` at every node.
    pub fn right_mode(&self) -> &[f64] {
        &self.eb
    }

    #[inline]
    fn j_left(&self, f: &[f64], j: usize) -> f64 {
        if self.uni_left[j] {
            let (fm, f0, fp) = (f[j - 1], f[j], f[j + 1]);
            self.uni[0] * f0 + self.uni[1] * fm + self.uni[2] * (fp - 2.0 * f0 + fm)
        } else {
            let s = &self.left[j];
            s.w[0] * f[s.idx[0]] + s.w[1] * f[s.idx[1]] + s.w[2] * f[s.idx[2]]
        }
    }

    #[inline]
    fn j_right(&self, f: &[f64], j: usize) -> f64 {
        if self.uni_right[j] {
            let (fm, f0, fp) = (f[j - 1], f[j], f[j + 1]);
            self.uni[0] * f0 + self.uni[1] * fp + self.uni[2] * (fp - 2.0 * f0 + fm)
        } else {
            let s = &self.right[j];
            s.w[0] * f[s.idx[0]] + s.w[1] * f[s.idx[1]] + s.w[2] * f[s.idx[2]]
        }
    }

    /// Local integrals `J_L[j]` (cell left of node j, zero at j = 0) and
    /// `J_R[j]` (cell right of node j, zero at the last node).
    pub fn local_integrals(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(f.len(), self.n);
        let mut jl = vec![0.0; self.n];
        let mut jr = vec![0.0; self.n];
        for j in 1..self.n {
            jl[j] = self.j_left(f, j);
        }
        for j in 0..self.n - 1 {
            jr[j] = self.j_right(f, j);
        }
        (jl, jr)
    }

    /// `I[f]` at every node written into `out`, by the two recursions.
    pub fn convolve_into(&self, f: &[f64], out: &mut [f64]) {
        assert_eq!(f.len(), self.n);
        assert_eq!(out.len(), self.n);
        let m = self.n - 1;
        let mut acc = 0.0;
        out[0] = 0.0;
        for j in 1..=m {
            acc = acc * self.decay[j - 1] + self.j_left(f, j);
            out[j] = acc;
        }
        acc = 0.0;
        for j in (0..m).rev() {
            acc = acc * self.decay[j] + self.j_right(f, j);
            out[j] += acc;
        }
    }

    pub fn convolve(&self, f: &[f64]) -> ConvResult {
        assert_eq!(f.len(), self.n);
        let m = self.n - 1;
        let mut il = vec![0.0; self.n];
        let mut ir = vec![0.0; self.n];
        for j in 1..=m {
            il[j] = il[j - 1] * self.decay[j - 1] + self.j_left(f, j);
        }
        for j in (0..m).rev() {
            ir[j] = ir[j + 1] * self.decay[j] + self.j_right(f, j);
        }
        let i = il.iter().zip(&ir).map(|(l, r)| l + r).collect();
        ConvResult {
            i,
            i_left: il,
            i_right: ir,
            mu: self.mu,
        }
    }

    /// Quadratic-cost evaluation of the same discrete operator: every local
    /// integral is attenuated by its explicit exponential distance.
    pub fn direct(&self, f: &[f64]) -> ConvResult {
        let (jl, jr) = self.local_integrals(f);
        let n = self.n;
        let mut il = vec![0.0; n];
        let mut ir = vec![0.0; n];
        for j in 0..n {
            il[j] = (1..=j)
                .map(|i| jl[i] * (-self.alpha * (self.x[j] - self.x[i])).exp())
                .sum();
            ir[j] = (j..n - 1)
                .map(|i| jr[i] * (-self.alpha * (self.x[i] - self.x[j])).exp())
                .sum();
        }
        let i = il.iter().zip(&ir).map(|(l, r)| l + r).collect();
        ConvResult {
            i,
            i_left: il,
            i_right: ir,
            mu: self.mu,
        }
    }

    /// `I + A e^{-α(x-a)} + B e^{-α(b-x)}` in place.
    pub fn add_modes(&self, out: &mut [f64], a: f64, b: f64) {
        for ((o, ea), eb) in out.iter_mut().zip(&self.ea).zip(&self.eb) {
            *o += a * ea + b * eb;
        }
    }
}

pub fn local_integrals(f: &[f64], params: &SchemeParams, line: &SweepLine) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(f, line)?;
    Ok(LineKernel::new(line, params.alpha)?.local_integrals(f))
}

pub fn fast_convolve(f: &[f64], params: &SchemeParams, line: &SweepLine) -> Result<ConvResult> {
    check_len(f, line)?;
    Ok(LineKernel::new(line, params.alpha)?.convolve(f))
}

pub fn direct_convolve(f: &[f64], params: &SchemeParams, line: &SweepLine) -> Result<ConvResult> {
    check_len(f, line)?;
    Ok(LineKernel::new(line, params.alpha)?.direct(f))
}

fn check_len(f: &[f64], line: &SweepLine) -> Result<()> {
    if f.len() != line.len() {
        return Err(MoltError::ShapeMismatch {
            expected: line.len(),
            got: f.len(),
        });
    }
    Ok(())
}
