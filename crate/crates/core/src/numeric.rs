//! One-dimensional numerical kernels: quadrature, root bracketing, and
//! golden-section maximization.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericError {
    #[error("quadrature did not converge on [{lo}, {hi}] (last change {change:e})")]
    Quadrature { lo: f64, hi: f64, change: f64 },
    #[error("no sign change on [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },
    #[error("no bracketing interval found around {start}")]
    NoBracket { start: f64 },
}

// Five-point Gauss-Legendre nodes and weights on [-1, 1].
const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_47,
    0.478_628_670_499_366_47,
    0.236_926_885_056_189_08,
    0.236_926_885_056_189_08,
];

/// Composite five-point Gauss-Legendre rule with `panels` equal panels.
pub fn gauss_legendre<F, E>(f: &mut F, lo: f64, hi: f64, panels: usize) -> Result<f64, E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    if hi <= lo {
        return Ok(0.0);
    }
    let h = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let a = lo + h * p as f64;
        let mid = a + 0.5 * h;
        let mut s = 0.0;
        for k in 0..5 {
            s += GL_WEIGHTS[k] * f(mid + 0.5 * h * GL_NODES[k])?;
        }
        total += 0.5 * h * s;
    }
    Ok(total)
}

/// Gauss-Legendre with panel doubling until two successive estimates agree.
pub fn integrate<F>(mut f: F, lo: f64, hi: f64, panels: usize, rel_tol: f64) -> Result<f64, QuadError>
where
    F: FnMut(f64) -> Result<f64, crate::expr::EvalError>,
{
    let mut n = panels.max(1);
    let mut prev = gauss_legendre(&mut f, lo, hi, n)?;
    for _ in 0..8 {
        n *= 2;
        let next = gauss_legendre(&mut f, lo, hi, n)?;
        let change = (next - prev).abs();
        if change <= rel_tol * next.abs().max(1.0) {
            return Ok(next);
        }
        prev = next;
    }
    let last = gauss_legendre(&mut f, lo, hi, n * 2)?;
    Err(QuadError::Numeric(NumericError::Quadrature {
        lo,
        hi,
        change: (last - prev).abs(),
    }))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error(transparent)]
    Eval(#[from] crate::expr::EvalError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Bisection for an increasing-through-zero function: returns the point where
/// `f` changes sign from negative to nonnegative.
pub fn bisect<F, E>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64, E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let mut f_lo = f(lo)?;
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if (fm < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section maximization on `[lo, hi]`; stops once the bracket is
/// narrower than `width`. Returns `(argmax, max, evaluations)`.
pub fn golden_max<F, E>(mut f: F, mut lo: f64, mut hi: f64, width: f64) -> Result<(f64, f64, usize), E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut evals = 2;
    while hi - lo > width {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d)?;
        }
        evals += 1;
    }
    let (x, fx) = if fc >= fd { (c, fc) } else { (d, fd) };
    Ok((x, fx, evals))
}

/// Grid scan followed by golden-section refinement on the bracket around the
/// best grid point. Ties on the grid go to the lowest index.
pub fn grid_golden_max<F, E>(
    mut f: F,
    lo: f64,
    hi: f64,
    points: usize,
    width: f64,
) -> Result<GridMax, E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let points = points.max(2);
    let step = (hi - lo) / (points - 1) as f64;
    let mut trace = Vec::with_capacity(points);
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for i in 0..points {
        let x = if i + 1 == points { hi } else { lo + step * i as f64 };
        let v = f(x)?;
        trace.push((x, v));
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    let a = trace[best.saturating_sub(1)].0;
    let b = trace[(best + 1).min(points - 1)].0;
    let (x, v, _) = golden_max(&mut f, a, b, width)?;
    // The refinement can only be accepted if it does not lose to the grid.
    let (x, v) = if v >= best_val { (x, v) } else { trace[best] };
    Ok(GridMax { arg: x, value: v, trace })
}

#[derive(Debug, Clone)]
pub struct GridMax {
    pub arg: f64,
    pub value: f64,
    pub trace: Vec<(f64, f64)>,
}

/// Expands `[lo, hi]` geometrically until the midpoint dominates both ends,
/// which brackets the maximizer of a unimodal function.
pub fn bracket_max<F, E>(mut f: F, center: f64, half_width: f64) -> Result<Result<(f64, f64), NumericError>, E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let mut w = half_width.max(1e-6);
    for _ in 0..64 {
        let (lo, hi) = (center - w, center + w);
        let (fl, fm, fh) = (f(lo)?, f(center)?, f(hi)?);
        if fm >= fl && fm >= fh {
            return Ok(Ok((lo, hi)));
        }
        w *= 2.0;
    }
    Ok(Err(NumericError::NoBracket { start: center }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn ok(v: f64) -> Result<f64, Infallible> {
        Ok(v)
    }

    #[test]
    fn quadrature_of_polynomials_and_log() {
        let v = gauss_legendre(&mut |t| ok(t * t), 0.0, 3.0, 1).unwrap();
        assert!((v - 9.0).abs() < 1e-12);
        let v = integrate(|t| Ok(1.0 / t), 0.5, 1.5, 4, 1e-12).unwrap();
        assert!((v - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn root_and_maximum() {
        let r = bisect(|t| ok(t * t - 2.0), 0.0, 2.0, 1e-12).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-11);
        let (x, _, _) = golden_max(|t| ok(-(t - 0.3) * (t - 0.3)), -1.0, 1.0, 1e-10).unwrap();
        assert!((x - 0.3).abs() < 1e-8);
        let g = grid_golden_max(|t| ok(-(t - 2.71).abs()), 0.0, 5.0, 11, 1e-10).unwrap();
        assert!((g.arg - 2.71).abs() < 1e-8);
        let (lo, hi) = bracket_max(|t| ok(-(t - 40.0).powi(2)), 0.0, 1.0).unwrap().unwrap();
        assert!(lo < 40.0 && 40.0 < hi);
    }
}
