//! Scalar special functions and the root solvers used by the potential and
//! booster modules.

use std::f64::consts::SQRT_2;

use thiserror::Error;

/// Errors raised by the root solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("no sign change found on [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },
    #[error("solver did not converge (best {best:?}, residual {residual:?})")]
    NoConvergence {
        /// Best point seen, padded with NaN for the scalar solver.
        best: (f64, f64),
        residual: (f64, f64),
    },
    /// The system has no root inside the box; the point returned is pinned
    /// to the upper face of the first coordinate.
    #[error("solution pinned to box face at {point:?} (residual {residual:?})")]
    BoundaryHit { point: (f64, f64), residual: (f64, f64) },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub abs_tol: f64,
    pub max_iters: usize,
    pub bracket_expansion_limit: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { abs_tol: 1e-10, max_iters: 200, bracket_expansion_limit: 60 }
    }
}

impl SolverSettings {
    /// Settings for a two-residual system whose residuals are sums over `n`
    /// examples.
    pub fn for_system(n: usize) -> Self {
        SolverSettings { abs_tol: 1e-8 * n.max(1) as f64, ..Default::default() }
    }

    pub fn with_tol(mut self, abs_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self
    }

    fn validate(&self) {
        assert!(self.abs_tol > 0.0, "abs_tol must be positive");
        assert!(self.max_iters >= 1, "max_iters must be at least 1");
    }
}

/// Error function normalised as `(1/√π) ∫_{-∞}^{a} e^{-x²} dx`.
///
/// This is the Gaussian CDF evaluated at `a·√2`, not the conventional `erf`;
/// it runs from 0 at `-∞` to 1 at `+∞` and equals 1/2 at the origin.
pub fn erf_half(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 - 0.5 * libm::erfc(a)
    } else {
        0.5 * libm::erfc(-a)
    }
}

/// `1 - erf_half(a)`, accurate in the upper tail.
pub fn erf_half_complement(a: f64) -> f64 {
    if a >= 0.0 {
        0.5 * libm::erfc(a)
    } else {
        1.0 - 0.5 * libm::erfc(-a)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    erf_half(z / SQRT_2)
}

/// Finds a root of `f` by bisection.
///
/// If `f(lo)` and `f(hi)` share a sign the interval is widened around its
/// centre, doubling its width up to `bracket_expansion_limit` times.
pub fn solve_scalar<F>(f: F, lo: f64, hi: f64, settings: &SolverSettings) -> Result<f64, SolveError>
where
    F: Fn(f64) -> f64,
{
    settings.validate();
    let (mut lo, mut hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut flo = f(lo);
    let mut fhi = f(hi);
    if flo.abs() <= settings.abs_tol {
        return Ok(lo);
    }
    if fhi.abs() <= settings.abs_tol {
        return Ok(hi);
    }

    let mut expansions = 0;
    while flo.signum() == fhi.signum() {
        if expansions >= settings.bracket_expansion_limit || !lo.is_finite() || !hi.is_finite() {
            return Err(SolveError::NoBracket { lo, hi });
        }
        let centre = 0.5 * (lo + hi);
        let half = (hi - lo).max(f64::MIN_POSITIVE);
        lo = centre - half;
        hi = centre + half;
        flo = f(lo);
        fhi = f(hi);
        expansions += 1;
        if flo.abs() <= settings.abs_tol {
            return Ok(lo);
        }
        if fhi.abs() <= settings.abs_tol {
            return Ok(hi);
        }
    }

    for _ in 0..settings.max_iters {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fmid = f(mid);
        if fmid.abs() <= settings.abs_tol {
            return Ok(mid);
        }
        if fmid.signum() == flo.signum() {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
            fhi = fmid;
        }
    }

    let (best, residual) = if flo.abs() <= fhi.abs() { (lo, flo) } else { (hi, fhi) };
    if residual.abs() <= settings.abs_tol {
        Ok(best)
    } else {
        Err(SolveError::NoConvergence { best: (best, f64::NAN), residual: (residual, f64::NAN) })
    }
}

/// Axis-aligned bounds for [`solve_2d`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2 {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Box2 {
    pub fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        assert!(x.0 <= x.1 && y.0 <= y.1, "empty box");
        Box2 { x, y }
    }

    pub fn project(&self, p: (f64, f64)) -> (f64, f64) {
        (p.0.clamp(self.x.0, self.x.1), p.1.clamp(self.y.0, self.y.1))
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        p.0 >= self.x.0 && p.0 <= self.x.1 && p.1 >= self.y.0 && p.1 <= self.y.1
    }
}

fn converged(r: (f64, f64), tol: f64) -> bool {
    r.0.abs() <= tol && r.1.abs() <= tol
}

fn norm(r: (f64, f64)) -> f64 {
    r.0.hypot(r.1)
}

fn fd_step(x: f64) -> f64 {
    1e-6f64.max(1e-6 * x.abs())
}

/// Central-difference Jacobian, one-sided where the stencil would leave the box.
fn jacobian<F>(f: &F, p: (f64, f64), bounds: &Box2) -> [[f64; 2]; 2]
where
    F: Fn(f64, f64) -> (f64, f64),
{
    let column = |axis: usize| {
        let (v, (lo, hi)) = if axis == 0 { (p.0, bounds.x) } else { (p.1, bounds.y) };
        let h = fd_step(v);
        let a = (v - h).max(lo);
        let b = (v + h).min(hi);
        let at = |s: f64| if axis == 0 { f(s, p.1) } else { f(p.0, s) };
        let (ra, rb) = (at(a), at(b));
        let span = b - a;
        ((rb.0 - ra.0) / span, (rb.1 - ra.1) / span)
    };
    let cx = column(0);
    let cy = column(1);
    [[cx.0, cy.0], [cx.1, cy.1]]
}

/// Damped Newton iteration projected into the box. Returns the converged
/// point or `None`.
pub fn newton_2d<F>(f: &F, init: (f64, f64), bounds: &Box2, settings: &SolverSettings) -> Option<(f64, f64)>
where
    F: Fn(f64, f64) -> (f64, f64),
{
    let mut p = bounds.project(init);
    let mut r = f(p.0, p.1);
    for _ in 0..settings.max_iters {
        if converged(r, settings.abs_tol) {
            // One polishing step; Newton is quadratically convergent here.
            if let Some((q, rq)) = newton_update(f, p, r, bounds) {
                if norm(rq) < norm(r) {
                    return Some(q);
                }
            }
            return Some(p);
        }
        let (q, rq) = newton_update(f, p, r, bounds)?;
        p = q;
        r = rq;
    }
    None
}

fn newton_update<F>(f: &F, p: (f64, f64), r: (f64, f64), bounds: &Box2) -> Option<((f64, f64), (f64, f64))>
where
    F: Fn(f64, f64) -> (f64, f64),
{
    let j = jacobian(f, p, bounds);
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    if !det.is_finite() || det == 0.0 {
        return None;
    }
    let dx = (j[1][1] * r.0 - j[0][1] * r.1) / det;
    let dy = (j[0][0] * r.1 - j[1][0] * r.0) / det;
    let current = norm(r);
    let mut scale = 1.0;
    for _ in 0..=30 {
        let q = bounds.project((p.0 - scale * dx, p.1 - scale * dy));
        let rq = f(q.0, q.1);
        if norm(rq) < current {
            return Some((q, rq));
        }
        scale *= 0.5;
    }
    None
}

/// Number of log-spaced probes used when scanning the second coordinate.
const INNER_GRID: usize = 64;

/// For fixed `x`, picks `y` where `f(x, ·).1` is smallest among the zero
/// crossings of `f(x, ·).0` and the two faces of the box.
///
/// The crossings are located on a log-spaced grid anchored at the lower face
/// and refined by bisection. When the first component is (a positive multiple
/// of) minus the `y`-derivative of the second, this tracks the minimum of the
/// second component in `y`, which varies continuously with `x`.
fn inner_solve<F>(f: &F, x: f64, bounds: &Box2, settings: &SolverSettings) -> f64
where
    F: Fn(f64, f64) -> (f64, f64),
{
    let (lo, hi) = bounds.y;
    let g = |y: f64| f(x, y).0;
    let span = hi - lo;
    let r_lo = f(x, lo);
    let mut best = (lo, r_lo.1);
    let mut consider = |y: f64| {
        let v = f(x, y).1;
        if v < best.1 {
            best = (y, v);
        }
    };
    let mut prev_y = lo;
    let mut prev_g = r_lo.0;
    for k in 0..=INNER_GRID {
        let frac = 10f64.powf(-8.0 * (INNER_GRID - k) as f64 / INNER_GRID as f64);
        let y = lo + span * frac;
        if y <= prev_y {
            continue;
        }
        let gy = g(y);
        if prev_g > 0.0 && gy <= 0.0 {
            let root = match solve_scalar(g, prev_y, y, settings) {
                Ok(root) => root,
                Err(SolveError::NoConvergence { best, .. }) => best.0,
                Err(_) => 0.5 * (prev_y + y),
            };
            consider(root);
        }
        prev_y = y;
        prev_g = gy;
    }
    consider(hi);
    best.0
}

/// Probes of the first coordinate: log-spaced up to 1% of the range, then
/// evenly spaced.
const OUTER_LOG: usize = 16;
const OUTER_LINEAR: usize = 64;

fn outer_fraction(k: usize) -> f64 {
    if k < OUTER_LOG {
        10f64.powf(-6.0 + 4.0 * k as f64 / OUTER_LOG as f64)
    } else {
        ((k - OUTER_LOG + 1) as f64 / OUTER_LINEAR as f64).max(0.01)
    }
}

/// Nested search: outer bisection of the second residual over the first
/// coordinate. For every probe the second coordinate is chosen by the inner
/// solve, which zeroes the first residual where that minimizes the second.
///
/// The first coordinate is scanned on a grid from the lower face
/// and the first sign change is bisected, so the root nearest the lower face
/// wins. When no probe changes sign the root lies beyond the box and
/// [`SolveError::BoundaryHit`] is returned at the upper face.
pub fn nested_search<F>(f: &F, bounds: &Box2, settings: &SolverSettings) -> Result<(f64, f64), SolveError>
where
    F: Fn(f64, f64) -> (f64, f64),
{
    let eval = |x: f64| {
        let y = inner_solve(f, x, bounds, settings);
        let r = f(x, y);
        ((x, y), r)
    };
    let (x_lo, x_hi) = bounds.x;
    let (plo, rlo) = eval(x_lo);
    if converged(rlo, settings.abs_tol) {
        return Ok(plo);
    }
    let sign_lo = rlo.1.signum();
    let mut best = (plo, rlo);
    let mut bracket = None;
    let mut lo = x_lo;
    let last = OUTER_LOG + OUTER_LINEAR - 1;
    for k in 0..=last {
        let x = if k == last { x_hi } else { x_lo + (x_hi - x_lo) * outer_fraction(k) };
        if x <= lo {
            continue;
        }
        let (p, r) = eval(x);
        if converged(r, settings.abs_tol) {
            return Ok(p);
        }
        if norm(r) < norm(best.1) {
            best = (p, r);
        }
        if r.1.signum() != sign_lo {
            bracket = Some((lo, x));
            break;
        }
        lo = x;
        if k == last {
            return Err(SolveError::BoundaryHit { point: p, residual: r });
        }
    }
    let Some((mut lo, mut hi)) = bracket else {
        return Err(SolveError::BoundaryHit { point: best.0, residual: best.1 });
    };
    for _ in 0..settings.max_iters {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (p, r) = eval(mid);
        if converged(r, settings.abs_tol) {
            return Ok(p);
        }
        if norm(r) < norm(best.1) {
            best = (p, r);
        }
        if r.1.signum() == sign_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(SolveError::NoConvergence { best: best.0, residual: best.1 })
}

/// Solves `f(x, y) = (0, 0)` inside `bounds`.
///
/// Damped Newton with a finite-difference Jacobian runs first; when it fails
/// (singular Jacobian, no descent, or iteration budget), the nested search
/// takes over.
pub fn solve_2d<F>(f: F, init: (f64, f64), bounds: Box2, settings: &SolverSettings) -> Result<(f64, f64), SolveError>
where
    F: Fn(f64, f64) -> (f64, f64),
{
    settings.validate();
    if let Some(p) = newton_2d(&f, init, &bounds, settings) {
        return Ok(p);
    }
    nested_search(&f, &bounds, settings)
}
