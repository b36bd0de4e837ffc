//! Single-principal screening with exit: participation cutoffs, expected
//! profit over the staying types, and the two-level offer search.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::env::{Belief, TypePoint, TypeSpace};
use crate::expr::{parse, Compiled, EvalError, Expr};
use crate::numeric::{self, QuadError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SingleError {
    #[error("search box [{0}, {1}] is empty")]
    EmptyBox(f64, f64),
    #[error("u is not strictly increasing in theta at (x, y) = ({x}, {y})")]
    Monotonicity { x: f64, y: f64 },
    #[error("single crossing fails between {a:?} and {b:?}")]
    SingleCrossing { a: (f64, f64), b: (f64, f64) },
    #[error("no type stays at the probed pair")]
    NoStayers,
    #[error("slack {0} is not positive")]
    NoSlack(f64),
    #[error("v is not increasing in y on the stay set")]
    NotIncreasing,
    #[error("t = {0} is outside [3, 4)")]
    OutOfRange(f64),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

type Result<T> = std::result::Result<T, SingleError>;

#[derive(Debug, Clone, PartialEq)]
pub struct SingleProblem {
    /// Agent payoff in `x`, `y`, `theta`.
    pub u: Expr,
    /// Principal payoff in `x`, `y`, `theta`.
    pub v: Expr,
    pub types: TypeSpace,
    pub x_box: (f64, f64),
    pub y_box: (f64, f64),
    pub panels: usize,
    pub grid: usize,
    pub width: f64,
    pub root_tol: f64,
    pub quad_tol: f64,
}

impl SingleProblem {
    pub fn new(u: Expr, v: Expr, types: TypeSpace) -> Self {
        SingleProblem {
            u,
            v,
            types,
            x_box: (0.0, 5.0),
            y_box: (0.0, 5.0),
            panels: 4,
            grid: 256,
            width: 1e-8,
            root_tol: 1e-10,
            quad_tol: 1e-12,
        }
    }

    /// `u = (x theta - y^2)/sqrt(theta)`, `v = y theta - x^2`, Unif[3, 4].
    pub fn labor() -> Self {
        Self::labor_scaled(1.0)
    }

    /// Labor payoffs with the principal's revenue term scaled by `a`.
    pub fn labor_scaled(a: f64) -> Self {
        SingleProblem::new(
            parse("(x*theta - y^2)/sqrt(theta)").expect("labor u"),
            parse(&format!("({a:?})*y*theta - x^2")).expect("labor v"),
            TypeSpace::uniform_interval(3.0, 4.0),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "theta", rename_all = "snake_case")]
pub enum Cutoff {
    AllStay,
    NoneStay,
    Interior(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult {
    pub x: f64,
    pub y: f64,
    /// Lowest staying type.
    pub cutoff: f64,
    pub value: f64,
    pub stay_probability: f64,
    pub no_trade: bool,
    pub outer_trace: Vec<(f64, f64)>,
    pub inner_trace: Vec<(f64, f64)>,
}

const LAYOUT: [&str; 3] = ["x", "y", "theta"];
const AUDIT_POINTS: usize = 33;

/// Compiled payoffs plus the type space, shared by every search.
pub(crate) struct Kernel<'a> {
    u: Compiled,
    v: Compiled,
    p: &'a SingleProblem,
}

impl<'a> Kernel<'a> {
    pub(crate) fn new(p: &'a SingleProblem) -> Result<Self> {
        for (lo, hi) in [p.x_box, p.y_box] {
            if !(lo <= hi) {
                return Err(SingleError::EmptyBox(lo, hi));
            }
        }
        Ok(Kernel {
            u: p.u.compile(&LAYOUT)?,
            v: p.v.compile(&LAYOUT)?,
            p,
        })
    }

    fn u(&self, x: f64, y: f64, t: f64) -> Result<f64> {
        Ok(self.u.eval(&[x, y, t])?)
    }

    fn v(&self, x: f64, y: f64, t: f64) -> Result<f64> {
        Ok(self.v.eval(&[x, y, t])?)
    }

    fn cutoff(&self, x: f64, y: f64) -> Result<Cutoff> {
        match &self.p.types {
            TypeSpace::Finite(points) => self.finite_cutoff(points, x, y),
            TypeSpace::Interval { lo, hi, .. } => {
                let (lo, hi) = (*lo, *hi);
                let h = (hi - lo) / (AUDIT_POINTS - 1) as f64;
                let mut vals = Vec::with_capacity(AUDIT_POINTS);
                for i in 0..AUDIT_POINTS {
                    let t = if i + 1 == AUDIT_POINTS { hi } else { lo + h * i as f64 };
                    vals.push(self.u(x, y, t)?);
                }
                if vals.iter().all(|u| *u >= 0.0) {
                    return Ok(Cutoff::AllStay);
                }
                if vals.iter().all(|u| *u < 0.0) {
                    return Ok(Cutoff::NoneStay);
                }
                if vals.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(SingleError::Monotonicity { x, y });
                }
                let root = numeric::bisect(|t| self.u(x, y, t), lo, hi, self.p.root_tol)?;
                Ok(Cutoff::Interior(root))
            }
        }
    }

    fn finite_cutoff(&self, points: &[TypePoint], x: f64, y: f64) -> Result<Cutoff> {
        let mut stay = Vec::with_capacity(points.len());
        for pt in points {
            stay.push(self.u(x, y, pt.value)? >= 0.0);
        }
        Ok(if stay.iter().all(|s| *s) {
            Cutoff::AllStay
        } else if !stay.iter().any(|s| *s) {
            Cutoff::NoneStay
        } else {
            let lowest = points
                .iter()
                .zip(&stay)
                .filter(|(_, s)| **s)
                .map(|(p, _)| p.value)
                .fold(f64::INFINITY, f64::min);
            Cutoff::Interior(lowest)
        })
    }

    /// `(expected profit, stay probability, lowest staying type)`.
    fn profit(&self, x: f64, y: f64) -> Result<(f64, f64, f64)> {
        self.evaluate(x, y, true)
    }

    fn value(&self, x: f64, y: f64) -> Result<f64> {
        Ok(self.evaluate(x, y, false)?.0)
    }

    fn evaluate(&self, x: f64, y: f64, with_mass: bool) -> Result<(f64, f64, f64)> {
        let cut = self.cutoff(x, y)?;
        match &self.p.types {
            TypeSpace::Finite(points) => {
                let (mut value, mut mass) = (0.0, 0.0);
                for pt in points {
                    if self.u(x, y, pt.value)? >= 0.0 {
                        value += pt.weight * self.v(x, y, pt.value)?;
                        mass += pt.weight;
                    }
                }
                let low = match cut {
                    Cutoff::Interior(t) => t,
                    Cutoff::AllStay => self.p.types.bounds().0,
                    Cutoff::NoneStay => self.p.types.bounds().1,
                };
                Ok((value, mass, low))
            }
            TypeSpace::Interval { lo, hi, .. } => {
                let from = match cut {
                    Cutoff::NoneStay => return Ok((0.0, 0.0, *hi)),
                    Cutoff::AllStay => *lo,
                    Cutoff::Interior(t) => t.max(*lo),
                };
                let types = &self.p.types;
                let value = numeric::integrate(
                    |t| Ok(self.v.eval(&[x, y, t])? * types.pdf(t)),
                    from,
                    *hi,
                    self.p.panels,
                    self.p.quad_tol,
                )?;
                let mass = if with_mass {
                    numeric::integrate(|t| Ok(types.pdf(t)), from, *hi, self.p.panels, self.p.quad_tol)?
                } else {
                    f64::NAN
                };
                Ok((value, mass, from))
            }
        }
    }

    fn inner(&self, x: f64) -> Result<numeric::GridMax> {
        let (lo, hi) = self.p.y_box;
        numeric::grid_golden_max(|y| self.value(x, y), lo, hi, self.p.grid, self.p.width)
    }
}

pub fn cutoff(p: &SingleProblem, x: f64, y: f64) -> Result<Cutoff> {
    Kernel::new(p)?.cutoff(x, y)
}

pub fn expected_profit(p: &SingleProblem, x: f64, y: f64) -> Result<f64> {
    Kernel::new(p)?.value(x, y)
}

/// Best discretionary action and value for a fixed offer `x`.
pub fn offer_value(p: &SingleProblem, x: f64) -> Result<(f64, f64)> {
    let g = Kernel::new(p)?.inner(x)?;
    Ok((g.arg, g.value))
}

/// Audits single crossing on pairs drawn from a 3x3 grid of the search box.
fn audit(p: &SingleProblem) -> Result<()> {
    let thetas = audit_thetas(&p.types);
    let pick = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * (1 + i) as f64 / 4.0;
    let pairs: Vec<(f64, f64)> = (0..3).flat_map(|i| (0..3).map(move |k| (i, k))).map(|(i, k)| (pick(p.x_box, i), pick(p.y_box, k))).collect();
    for (i, a) in pairs.iter().enumerate() {
        for b in &pairs[i + 1..] {
            let r = single_crossing_audit(&p.u, *a, *b, &thetas)?;
            if !r.passed {
                return Err(SingleError::SingleCrossing { a: *a, b: *b });
            }
        }
    }
    Ok(())
}

fn audit_thetas(types: &TypeSpace) -> Vec<f64> {
    match types {
        TypeSpace::Finite(points) => points.iter().map(|p| p.value).collect(),
        TypeSpace::Interval { lo, hi, .. } => (0..AUDIT_POINTS)
            .map(|i| lo + (hi - lo) * i as f64 / (AUDIT_POINTS - 1) as f64)
            .collect(),
    }
}

/// Grid over `x` with golden refinement, each point solving the inner
/// problem over `y` the same way.
pub fn solve(p: &SingleProblem) -> Result<SolveResult> {
    let k = Kernel::new(p)?;
    audit(p)?;
    let (lo, hi) = p.x_box;
    let points = p.grid.max(2);
    let step = (hi - lo) / (points - 1) as f64;
    let xs: Vec<f64> = (0..points).map(|i| if i + 1 == points { hi } else { lo + step * i as f64 }).collect();
    let values: Vec<f64> = xs
        .par_iter()
        .map(|&x| k.inner(x).map(|g| g.value))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    let outer_trace: Vec<(f64, f64)> = xs.iter().copied().zip(values.iter().copied()).collect();
    let a = xs[best.saturating_sub(1)];
    let b = xs[(best + 1).min(points - 1)];
    let (xr, vr, _) = numeric::golden_max(|x| Ok::<_, SingleError>(k.inner(x)?.value), a, b, p.width)?;
    let x = if vr >= values[best] { xr } else { xs[best] };
    let inner = k.inner(x)?;
    let (value, stay, low) = k.profit(x, inner.arg)?;
    let no_trade = value < 0.0 || stay <= 0.0;
    Ok(SolveResult {
        x,
        y: inner.arg,
        cutoff: low,
        value: if no_trade { 0.0 } else { value },
        stay_probability: if no_trade { 0.0 } else { stay },
        no_trade,
        outer_trace,
        inner_trace: inner.trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaborProfile {
    pub k: f64,
    pub x: f64,
    pub value: f64,
}

/// Closed forms of the labor example at cutoff `t`.
pub fn labor_profile(t: f64) -> Result<LaborProfile> {
    if !(3.0..4.0).contains(&t) {
        return Err(SingleError::OutOfRange(t));
    }
    let k = t.sqrt() * (t + 4.0) / 2.0;
    let x = (k / 4.0).powf(2.0 / 3.0);
    Ok(LaborProfile {
        k,
        x,
        value: (4.0 - t) * (k * x.sqrt() - x * x),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RentProbeResult {
    pub kappa: f64,
    pub step: Option<f64>,
    pub y_new: Option<f64>,
    pub before: f64,
    pub after: Option<f64>,
    pub improvement: f64,
    pub success: bool,
}

const SLACK_TOL: f64 = 1e-12;

/// Halving steps from 0.1 down to about 1e-10.
pub fn default_probe_steps() -> Vec<f64> {
    (0..31).map(|k| 0.1 * 0.5f64.powi(k)).collect()
}

/// Raises `y` by each step in turn and reports the first one that keeps
/// the stay set and strictly raises the posterior expectation of `v`.
pub fn rent_probe(p: &SingleProblem, x: f64, y: f64, belief: &Belief, steps: &[f64]) -> Result<RentProbeResult> {
    let k = Kernel::new(p)?;
    let mut stay = Vec::new();
    let mut kappa = f64::INFINITY;
    for (theta, w) in belief.support() {
        let u = k.u(x, y, theta)?;
        if u >= -SLACK_TOL {
            stay.push((theta, w));
            kappa = kappa.min(u);
        }
    }
    let mass: f64 = stay.iter().map(|(_, w)| w).sum();
    if stay.is_empty() || mass <= 0.0 {
        return Err(SingleError::NoStayers);
    }
    if kappa <= SLACK_TOL {
        return Err(SingleError::NoSlack(kappa));
    }
    let h = 1e-6 * y.abs().max(1.0);
    for (theta, _) in &stay {
        if k.v(x, y + h, *theta)? <= k.v(x, y, *theta)? {
            return Err(SingleError::NotIncreasing);
        }
    }
    let posterior = |yy: f64| -> Result<f64> {
        let mut s = 0.0;
        for (theta, w) in &stay {
            s += w * k.v(x, yy, *theta)?;
        }
        Ok(s / mass)
    };
    let before = posterior(y)?;
    for &t in steps {
        let y2 = y + t;
        let mut kept = true;
        for (theta, _) in &stay {
            if k.u(x, y2, *theta)? < 0.0 {
                kept = false;
                break;
            }
        }
        if !kept {
            continue;
        }
        let after = posterior(y2)?;
        if after > before {
            return Ok(RentProbeResult {
                kappa,
                step: Some(t),
                y_new: Some(y2),
                before,
                after: Some(after),
                improvement: after - before,
                success: true,
            });
        }
    }
    Ok(RentProbeResult {
        kappa,
        step: None,
        y_new: None,
        before,
        after: None,
        improvement: 0.0,
        success: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleCrossingReport {
    pub sign_changes: usize,
    pub zeros: usize,
    pub degenerate: bool,
    pub passed: bool,
}

/// Sign scan of `u(a, theta) - u(b, theta)` over the grid.
pub fn single_crossing_audit(u: &Expr, a: (f64, f64), b: (f64, f64), thetas: &[f64]) -> Result<SingleCrossingReport> {
    const ZERO: f64 = 1e-12;
    let c = u.compile(&LAYOUT)?;
    let mut diffs = Vec::with_capacity(thetas.len());
    for &t in thetas {
        diffs.push(c.eval(&[a.0, a.1, t])? - c.eval(&[b.0, b.1, t])?);
    }
    let zeros = diffs.iter().filter(|d| d.abs() <= ZERO).count();
    let degenerate = zeros == diffs.len();
    let signs: Vec<bool> = diffs.iter().filter(|d| d.abs() > ZERO).map(|d| *d > 0.0).collect();
    let sign_changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
    Ok(SingleCrossingReport {
        sign_changes,
        zeros,
        degenerate,
        passed: degenerate || (sign_changes <= 1 && zeros <= 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labor_cutoffs() {
        let p = SingleProblem::labor();
        match cutoff(&p, 1.32, 1.99).unwrap() {
            Cutoff::Interior(t) => assert!((t - 1.99f64.powi(2) / 1.32).abs() < 1e-10),
            c => panic!("{c:?}"),
        }
        assert_eq!(cutoff(&p, 1.0, 0.0).unwrap(), Cutoff::AllStay);
        assert_eq!(cutoff(&p, 0.0, 1.0).unwrap(), Cutoff::NoneStay);
        assert_eq!(cutoff(&p, -1.0, 1.0).unwrap(), Cutoff::NoneStay);
        assert_eq!(expected_profit(&p, -1.0, 1.0).unwrap(), 0.0);
        for i in 0..20 {
            let x = 0.3 + 0.2 * i as f64;
            for t in [3.1, 3.5, 3.9] {
                let y = (x * t).sqrt();
                let Cutoff::Interior(c) = cutoff(&p, x, y).unwrap() else { panic!() };
                assert!((c - t).abs() < 1e-9);
                let u = (x * c - y * y) / c.sqrt();
                assert!(u.abs() < 1e-8);
            }
        }
    }

    #[test]
    fn labor_profit_matches_closed_form() {
        let p = SingleProblem::labor();
        let v = expected_profit(&p, 1.0, 3f64.sqrt()).unwrap();
        assert!((v - (7.0 * 3f64.sqrt() / 2.0 - 1.0)).abs() < 1e-9);
        for i in 0..10 {
            let t = 3.0 + 0.1 * i as f64;
            for x in [0.5f64, 1.3, 2.0] {
                let k = t.sqrt() * (t + 4.0) / 2.0;
                let pi = (4.0 - t) * (k * x.sqrt() - x * x);
                assert!((expected_profit(&p, x, (x * t).sqrt()).unwrap() - pi).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn labor_profile_values() {
        let r = labor_profile(3.0).unwrap();
        assert!((r.k - 7.0 * 3f64.sqrt() / 2.0).abs() < 1e-12 && (r.x - 1.3193).abs() < 1e-3 && (r.value - 5.2225).abs() < 1e-4);
        assert!(labor_profile(4.0).is_err());
        assert!(labor_profile(3.999_999).unwrap().value < 1e-4);
        let best = (0..1000)
            .map(|i| 3.0 + i as f64 / 1000.0)
            .max_by(|a, b| labor_profile(*a).unwrap().value.total_cmp(&labor_profile(*b).unwrap().value))
            .unwrap();
        assert_eq!(best, 3.0);
    }

    #[test]
    fn no_trade() {
        let p = SingleProblem::new(
            parse("(x*theta - y^2)/sqrt(theta)").unwrap(),
            parse("-1").unwrap(),
            TypeSpace::uniform_interval(3.0, 4.0),
        );
        let p = SingleProblem { grid: 32, ..p };
        let r = solve(&p).unwrap();
        assert!(r.no_trade);
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn rent_probe_fixture() {
        let p = SingleProblem::new(
            parse("x*theta - y^2").unwrap(),
            parse("y*theta").unwrap(),
            TypeSpace::uniform_interval(3.0, 4.0),
        );
        let b = Belief::uniform_interval(3.0, 4.0, 1025);
        let r = rent_probe(&p, 1.0, 1.5, &b, &default_probe_steps()).unwrap();
        assert!((r.kappa - 0.75).abs() < 1e-12);
        assert!(r.success);
        assert!((r.y_new.unwrap() - 1.6).abs() < 1e-12);
        assert!((r.before - 5.25).abs() < 1e-9 && (r.after.unwrap() - 5.6).abs() < 1e-9);

        // The binding type leaves no slack.
        assert!(matches!(
            rent_probe(&p, 1.0, 3f64.sqrt(), &b, &default_probe_steps()),
            Err(SingleError::NoSlack(_))
        ));
        let dec = SingleProblem {
            v: parse("-y*theta").unwrap(),
            ..p
        };
        assert_eq!(
            rent_probe(&dec, 1.0, 1.5, &b, &default_probe_steps()),
            Err(SingleError::NotIncreasing)
        );
    }

    #[test]
    fn crossing_audit() {
        let u = parse("(x*theta - y^2)/sqrt(theta)").unwrap();
        let grid: Vec<f64> = (0..=100).map(|i| 3.0 + i as f64 / 100.0).collect();
        let r = single_crossing_audit(&u, (1.0, 1.0), (2.0, 2.0), &grid).unwrap();
        assert!(r.passed && !r.degenerate);
        let r = single_crossing_audit(&u, (1.0, 1.0), (1.0, 1.0), &grid).unwrap();
        assert!(r.passed && r.degenerate);
        let wavy = parse("x*(theta - 3.3)*(theta - 3.7) - y").unwrap();
        let r = single_crossing_audit(&wavy, (1.0, 0.0), (0.0, 0.0), &grid).unwrap();
        assert!(!r.passed && r.sign_changes >= 2);
    }
}
