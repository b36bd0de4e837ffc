//! Two-principal common agency with separable agent utility: bilateral
//! reductions, best responses, and damped best-response iteration over
//! simple offers.

use serde::Serialize;
use thiserror::Error;

use crate::env::TypeSpace;
use crate::expr::{parse, Expr};
use crate::single::{self, SingleError, SingleProblem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgencyError {
    #[error("principal index {0} (two principals)")]
    Principal(usize),
    #[error("x_other = {0} is outside the search box")]
    OutOfBox(f64),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        trajectory: Vec<[f64; 2]>,
    },
    #[error("t = {0} is outside [3, 4)")]
    OutOfRange(f64),
    #[error(transparent)]
    Single(#[from] SingleError),
}

type Result<T> = std::result::Result<T, AgencyError>;

#[derive(Debug, Clone, PartialEq)]
pub struct AgencyProblem {
    pub beta: f64,
    /// Bilateral agent utilities in `x`, `y`, `theta`.
    pub u: [Expr; 2],
    /// Bilateral principal payoffs in `x`, `y`, `xo`, `theta`; `xo` is the
    /// other principal's contractible action and `beta` is bound on reduce.
    pub v: [Expr; 2],
    pub types: TypeSpace,
    pub x_box: (f64, f64),
    pub y_box: (f64, f64),
    pub grid: usize,
    pub width: f64,
    pub damping: f64,
    pub start: [f64; 2],
    pub max_iter: usize,
    pub tol: f64,
}

impl AgencyProblem {
    /// Labor payoffs for both firms with revenue scaled by `1 + beta*xo`.
    pub fn worked(beta: f64) -> Self {
        let u = parse("(x*theta - y^2)/sqrt(theta)").expect("u");
        let v = parse("(1 + beta*xo)*y*theta - x^2").expect("v");
        AgencyProblem {
            beta,
            u: [u.clone(), u],
            v: [v.clone(), v],
            types: TypeSpace::uniform_interval(3.0, 4.0),
            x_box: (0.0, 5.0),
            y_box: (0.0, 5.0),
            grid: 64,
            width: 1e-8,
            damping: 0.5,
            start: [0.0, 0.0],
            max_iter: 200,
            tol: 1e-5,
        }
    }
}

/// Firm `j`'s problem with the other firm's offer frozen at `x_other`.
pub fn bilateral_reduce(p: &AgencyProblem, j: usize, x_other: f64) -> Result<SingleProblem> {
    if j > 1 {
        return Err(AgencyError::Principal(j));
    }
    if x_other < p.x_box.0 || x_other > p.x_box.1 {
        return Err(AgencyError::OutOfBox(x_other));
    }
    let v = p.v[j].substitute("beta", p.beta).substitute("xo", x_other);
    Ok(SingleProblem {
        x_box: p.x_box,
        y_box: p.y_box,
        grid: p.grid,
        width: p.width,
        ..SingleProblem::new(p.u[j].clone(), v, p.types.clone())
    })
}

/// Closed-form best response of the worked family.
pub fn worked_best_response(beta: f64, x_other: f64) -> f64 {
    ((1.0 + beta * x_other) * 7.0 * 3f64.sqrt() / 8.0).powf(2.0 / 3.0)
}

pub fn best_response(p: &AgencyProblem, j: usize, x_other: f64) -> Result<f64> {
    Ok(single::solve(&bilateral_reduce(p, j, x_other)?)?.x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgencyEquilibrium {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub cutoffs: [f64; 2],
    pub values: [f64; 2],
    pub residual: f64,
    pub iterations: usize,
    pub trajectory: Vec<[f64; 2]>,
}

/// Damped simultaneous best-response iteration. Identical opponent offers
/// reuse the previous bilateral solve.
pub fn fixed_point(p: &AgencyProblem) -> Result<AgencyEquilibrium> {
    let symmetric = p.u[0] == p.u[1] && p.v[0] == p.v[1];
    let mut cache: Vec<(usize, u64, single::SolveResult)> = Vec::new();
    let mut solve = |j: usize, xo: f64| -> Result<single::SolveResult> {
        let key = (if symmetric { 0 } else { j }, xo.to_bits());
        if let Some((_, _, r)) = cache.iter().find(|(k, b, _)| (*k, *b) == key) {
            return Ok(r.clone());
        }
        let r = single::solve(&bilateral_reduce(p, j, xo)?)?;
        if cache.len() == 4 {
            cache.remove(0);
        }
        cache.push((key.0, key.1, r.clone()));
        Ok(r)
    };
    let mut x = p.start;
    let mut trajectory = vec![x];
    for it in 0..=p.max_iter {
        let r0 = solve(0, x[1])?;
        let r1 = solve(1, x[0])?;
        let residual = (x[0] - r0.x).abs().max((x[1] - r1.x).abs());
        if residual <= p.tol {
            return Ok(AgencyEquilibrium {
                x,
                y: [r0.y, r1.y],
                cutoffs: [r0.cutoff, r1.cutoff],
                values: [r0.value, r1.value],
                residual,
                iterations: it,
                trajectory,
            });
        }
        if it == p.max_iter {
            return Err(AgencyError::NonConvergence {
                iterations: it,
                residual,
                trajectory,
            });
        }
        let l = p.damping;
        x = [(1.0 - l) * x[0] + l * r0.x, (1.0 - l) * x[1] + l * r1.x];
        trajectory.push(x);
    }
    unreachable!("the last iteration returns")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffShape {
    pub value_factor: f64,
    pub numerator: f64,
    pub negative: bool,
}

/// `(4 - t) t^(2/3) (t + 4)^(4/3)` and the numerator of its log derivative.
pub fn cutoff_value_shape(t: f64) -> Result<CutoffShape> {
    if !(3.0..4.0).contains(&t) {
        return Err(AgencyError::OutOfRange(t));
    }
    let numerator = 32.0 + 4.0 * t - 9.0 * t * t;
    Ok(CutoffShape {
        value_factor: (4.0 - t) * t.powf(2.0 / 3.0) * (t + 4.0).powf(4.0 / 3.0),
        numerator,
        negative: numerator < 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeScan {
    pub points: usize,
    pub all_negative: bool,
    pub argmax: f64,
}

/// Scans `points` equally spaced cutoffs on `[3, 4)`.
pub fn cutoff_shape_scan(points: usize) -> ShapeScan {
    let mut all_negative = true;
    let mut best = (3.0, f64::NEG_INFINITY);
    for i in 0..points {
        let t = 3.0 + i as f64 / points as f64;
        let s = cutoff_value_shape(t).expect("grid inside [3, 4)");
        all_negative &= s.negative;
        if s.value_factor > best.1 {
            best = (t, s.value_factor);
        }
    }
    ShapeScan {
        points,
        all_negative,
        argmax: best.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MenuOutcome {
    pub principal: usize,
    pub menu: Vec<f64>,
    pub best_offer: f64,
    pub best_value: f64,
    pub equilibrium_value: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgencyRobustReport {
    pub outcomes: Vec<MenuOutcome>,
}

impl AgencyRobustReport {
    pub fn robust(&self) -> bool {
        self.outcomes.iter().all(|o| !o.violation)
    }
}

/// The 21-point menu of offers on `[0, 5]`.
pub fn default_menu() -> Vec<f64> {
    (0..=20).map(|i| 0.25 * i as f64).collect()
}

/// Bounds each deviation menu's value by its best single offer against the
/// frozen opponent offer and compares it with the equilibrium value.
pub fn robustness_check(p: &AgencyProblem, eq: &AgencyEquilibrium, menus: &[Vec<f64>], tol: f64) -> Result<AgencyRobustReport> {
    let mut outcomes = Vec::new();
    for j in 0..2 {
        let reduced = bilateral_reduce(p, j, eq.x[1 - j])?;
        for menu in menus {
            let mut best = (f64::NAN, f64::NEG_INFINITY);
            for &x in menu {
                let (_, v) = single::offer_value(&reduced, x)?;
                if v > best.1 {
                    best = (x, v);
                }
            }
            // Exit leaves the deviator with zero.
            let best_value = best.1.max(0.0);
            outcomes.push(MenuOutcome {
                principal: j,
                menu: menu.clone(),
                best_offer: best.0,
                best_value,
                equilibrium_value: eq.values[j],
                violation: best_value > eq.values[j] + tol,
            });
        }
    }
    Ok(AgencyRobustReport { outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BETA: f64 = 17.0 / 21.0;

    #[test]
    fn reduction_scales_revenue() {
        let p = AgencyProblem::worked(BETA);
        let s = bilateral_reduce(&p, 0, 3.0).unwrap();
        let a = single::expected_profit(&s, 1.0, 1.0).unwrap() + 1.0;
        assert!((a / 3.5 - 24.0 / 7.0).abs() < 1e-12);
        let s0 = bilateral_reduce(&p, 1, 0.0).unwrap();
        let base = SingleProblem::labor();
        for (x, y) in [(1.0, 1.5), (2.0, 2.7), (0.5, 0.1)] {
            let d = single::expected_profit(&s0, x, y).unwrap() - single::expected_profit(&base, x, y).unwrap();
            assert!(d.abs() < 1e-12);
        }
        assert!(bilateral_reduce(&p, 2, 0.0).is_err());
        assert!(bilateral_reduce(&p, 0, 6.0).is_err());
    }

    #[test]
    fn closed_form_best_response() {
        assert!((worked_best_response(BETA, 3.0) - 3.0).abs() < 1e-9);
        assert!((worked_best_response(0.3, 0.0) - 1.3193).abs() < 1e-3);
    }

    #[test]
    fn numeric_best_response() {
        let p = AgencyProblem::worked(BETA);
        for xo in [0.0, 1.0, 2.0, 3.0] {
            let br = best_response(&p, 0, xo).unwrap();
            assert!((br - worked_best_response(BETA, xo)).abs() < 1e-3, "{xo}: {br}");
        }
    }

    #[test]
    fn shape() {
        let s = cutoff_value_shape(3.0).unwrap();
        assert_eq!(s.numerator, -37.0);
        assert!(cutoff_value_shape(4.0).is_err());
        assert!(cutoff_value_shape(3.999_999_9).unwrap().value_factor < 1e-5);
        let scan = cutoff_shape_scan(1001);
        assert!(scan.all_negative);
        assert_eq!(scan.argmax, 3.0);
    }

    #[test]
    fn start_at_fixed_point() {
        let p = AgencyProblem {
            start: [3.0, 3.0],
            ..AgencyProblem::worked(BETA)
        };
        let eq = fixed_point(&p).unwrap();
        assert_eq!(eq.iterations, 0);
        assert!(eq.residual <= p.tol);
        let r = robustness_check(&p, &eq, &[default_menu(), vec![eq.x[0]]], 1e-6).unwrap();
        assert!(r.robust());
        for o in &r.outcomes {
            assert!((o.best_value - 27.0).abs() < 1e-4, "{o:?}");
        }
    }

    #[test]
    fn non_convergence_reports_trajectory() {
        let p = AgencyProblem {
            max_iter: 1,
            ..AgencyProblem::worked(BETA)
        };
        match fixed_point(&p) {
            Err(AgencyError::NonConvergence { trajectory, .. }) => assert_eq!(trajectory.len(), 2),
            r => panic!("{r:?}"),
        }
    }
}
