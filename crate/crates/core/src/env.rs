//! Environments: types and prior, per-principal action sets with feasibility,
//! payoffs, and the outside option.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::expr::{EvalError, Expr};
use crate::numeric;

/// Default number of grid points used when an interval type space is
/// represented by a weighted grid.
pub const DEFAULT_GRID: usize = 1025;
/// Absolute tolerance for real comparisons unless a caller overrides it.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("principal index {0} out of range")]
    Principal(usize),
    #[error("type index {0} out of range")]
    Type(usize),
    #[error("this operation needs a finite type space")]
    NotFinite,
    #[error("principal {principal}: {what} is not finite")]
    InfiniteActions { principal: usize, what: &'static str },
    #[error("principal {principal}: action {value} is not in the contractible set")]
    UnknownContractible { principal: usize, value: f64 },
    #[error("principal {principal}: action pair ({x}, {y}) is infeasible")]
    Infeasible { principal: usize, x: String, y: String },
    #[error("action `{0}` has no numeric value")]
    NonNumeric(String),
    #[error("payoff table has no entry for type {ty} and profile {profile:?}")]
    MissingTableEntry { ty: usize, profile: Vec<usize> },
    #[error("type {0} lies outside the type space")]
    TypeOutOfRange(f64),
    #[error("expected {expected} action pairs, got {got}")]
    ProfileArity { expected: usize, got: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    Uniform,
    TruncatedNormal { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypePoint {
    pub label: String,
    pub value: f64,
    pub weight: f64,
}

impl TypePoint {
    pub fn new(label: impl Into<String>, value: f64, weight: f64) -> Self {
        TypePoint {
            label: label.into(),
            value,
            weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TypeSpace {
    Finite(Vec<TypePoint>),
    Interval {
        lo: f64,
        hi: f64,
        density: Density,
        grid: usize,
    },
}

impl TypeSpace {
    pub fn uniform_interval(lo: f64, hi: f64) -> Self {
        TypeSpace::Interval {
            lo,
            hi,
            density: Density::Uniform,
            grid: DEFAULT_GRID,
        }
    }

    /// Finite space with equal weights on the given values; labels `t0, t1, ...`.
    pub fn uniform_finite(values: &[f64]) -> Self {
        let w = 1.0 / values.len() as f64;
        TypeSpace::Finite(
            values
                .iter()
                .enumerate()
                .map(|(i, v)| TypePoint::new(format!("t{i}"), *v, w))
                .collect(),
        )
    }

    pub fn finite(&self) -> Result<&[TypePoint], EnvError> {
        match self {
            TypeSpace::Finite(points) => Ok(points),
            TypeSpace::Interval { .. } => Err(EnvError::NotFinite),
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            TypeSpace::Finite(points) => points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
                (a.min(p.value), b.max(p.value))
            }),
            TypeSpace::Interval { lo, hi, .. } => (*lo, *hi),
        }
    }

    /// Density of an interval type space, normalized on `[lo, hi]`.
    pub fn pdf(&self, theta: f64) -> f64 {
        match *self {
            TypeSpace::Finite(_) => 0.0,
            TypeSpace::Interval { lo, hi, density, .. } => {
                if theta < lo || theta > hi {
                    return 0.0;
                }
                match density {
                    Density::Uniform => 1.0 / (hi - lo),
                    Density::TruncatedNormal { mean, sd } => match Normal::new(mean, sd) {
                        Ok(n) => {
                            let mass = n.cdf(hi) - n.cdf(lo);
                            let z = (theta - mean) / sd;
                            (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()) / mass
                        }
                        Err(_) => f64::NAN,
                    },
                }
            }
        }
    }

    /// The prior as a finitely supported belief: the finite weights, or a
    /// Simpson-weighted grid for interval spaces.
    pub fn prior(&self) -> Belief {
        match self {
            TypeSpace::Finite(points) => Belief {
                points: points.iter().map(|p| p.value).collect(),
                weights: points.iter().map(|p| p.weight).collect(),
            },
            TypeSpace::Interval { lo, hi, grid, .. } => Belief::density_grid(*lo, *hi, *grid, |t| self.pdf(t)),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TypeSpace::Finite(points) => points.len(),
            TypeSpace::Interval { grid, .. } => *grid,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionValue {
    pub label: String,
    pub value: Option<f64>,
}

impl ActionValue {
    pub fn real(value: f64) -> Self {
        ActionValue {
            label: fmt_label(value),
            value: Some(value),
        }
    }

    pub fn labeled(label: impl Into<String>) -> Self {
        ActionValue {
            label: label.into(),
            value: None,
        }
    }

    pub fn numeric(&self) -> Result<f64, EnvError> {
        self.value.ok_or_else(|| EnvError::NonNumeric(self.label.clone()))
    }
}

fn fmt_label(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSet {
    Finite(Vec<ActionValue>),
    Interval { lo: f64, hi: f64 },
}

impl ActionSet {
    pub fn reals(values: &[f64]) -> Self {
        ActionSet::Finite(values.iter().map(|v| ActionValue::real(*v)).collect())
    }

    pub fn labels(labels: &[&str]) -> Self {
        ActionSet::Finite(labels.iter().map(|l| ActionValue::labeled(*l)).collect())
    }

    pub fn finite(&self) -> Option<&[ActionValue]> {
        match self {
            ActionSet::Finite(v) => Some(v),
            ActionSet::Interval { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    /// For each contractible index, the feasible discretionary indices.
    Finite(Vec<Vec<usize>>),
    /// Every contractible action admits the same discretionary interval.
    Box { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalSpec {
    pub contractible: ActionSet,
    pub discretionary: ActionSet,
    pub feasibility: Feasibility,
}

impl PrincipalSpec {
    pub fn finite(contractible: ActionSet, discretionary: ActionSet, feasibility: Vec<Vec<usize>>) -> Self {
        PrincipalSpec {
            contractible,
            discretionary,
            feasibility: Feasibility::Finite(feasibility),
        }
    }

    pub fn xs(&self) -> Option<&[ActionValue]> {
        self.contractible.finite()
    }

    pub fn ys(&self) -> Option<&[ActionValue]> {
        self.discretionary.finite()
    }

    /// F(x) for a finite contractible index.
    pub fn feasible(&self, x: usize) -> &[usize] {
        match &self.feasibility {
            Feasibility::Finite(f) => f.get(x).map(|v| v.as_slice()).unwrap_or(&[]),
            Feasibility::Box { .. } => &[],
        }
    }

    /// The feasible pairs Z as `(x index, y index)`, ordered by x then by the
    /// order of F(x).
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        match &self.feasibility {
            Feasibility::Finite(f) => f
                .iter()
                .enumerate()
                .flat_map(|(x, ys)| ys.iter().map(move |y| (x, *y)))
                .collect(),
            Feasibility::Box { .. } => Vec::new(),
        }
    }

    /// Contractible actions with at least two feasible discretionary actions.
    pub fn rich_contractibles(&self) -> Vec<usize> {
        match &self.feasibility {
            Feasibility::Finite(f) => (0..f.len()).filter(|x| f[*x].len() >= 2).collect(),
            Feasibility::Box { .. } => Vec::new(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.xs().is_some() && self.ys().is_some() && matches!(self.feasibility, Feasibility::Finite(_))
    }
}

/// Tabulated payoffs keyed by type index and one pair index (into Z_j) per
/// principal. Values are `(agent, per-principal)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PayoffTable {
    pub entries: BTreeMap<(usize, Vec<usize>), (f64, Vec<f64>)>,
}

impl PayoffTable {
    pub fn insert(&mut self, ty: usize, profile: Vec<usize>, agent: f64, principals: Vec<f64>) {
        self.entries.insert((ty, profile), (agent, principals));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PayoffKind {
    /// Expressions over `x1.., y1.., theta` (plus `x`, `y` with one principal).
    Expressions { agent: Expr, principals: Vec<Expr> },
    Table(PayoffTable),
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutsideOption {
    /// The agent cannot exit.
    None,
    Expr(Expr),
}

impl Default for OutsideOption {
    fn default() -> Self {
        OutsideOption::Expr(Expr::Num(0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PayoffModel {
    pub kind: PayoffKind,
    pub outside: OutsideOption,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observability {
    #[default]
    Public,
    Private,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub types: TypeSpace,
    pub principals: Vec<PrincipalSpec>,
    pub payoffs: PayoffModel,
    pub observability: Observability,
}

/// Payoffs at one outcome: the agent's and each principal's.
#[derive(Debug, Clone, PartialEq)]
pub struct Payoffs {
    pub agent: f64,
    pub principals: Vec<f64>,
}

/// Variable names bound for expression payoffs with `n` principals.
pub fn payoff_layout(n: usize) -> Vec<String> {
    let mut names: Vec<String> = Vec::with_capacity(2 * n + 3);
    for j in 1..=n {
        names.push(format!("x{j}"));
    }
    for j in 1..=n {
        names.push(format!("y{j}"));
    }
    names.push("theta".into());
    if n == 1 {
        names.push("x".into());
        names.push("y".into());
    }
    names
}

impl Environment {
    pub fn n_principals(&self) -> usize {
        self.principals.len()
    }

    pub fn principal(&self, j: usize) -> Result<&PrincipalSpec, EnvError> {
        self.principals.get(j).ok_or(EnvError::Principal(j))
    }

    fn expr_context(&self, xs: &[f64], ys: &[f64], theta: f64) -> crate::expr::EvalContext {
        let n = self.n_principals();
        let layout = payoff_layout(n);
        let mut vals: Vec<f64> = xs.iter().chain(ys.iter()).copied().collect();
        vals.push(theta);
        if n == 1 {
            vals.push(xs[0]);
            vals.push(ys[0]);
        }
        layout.into_iter().zip(vals).collect()
    }

    /// Locates a real-valued pair in principal `j`'s finite action sets, or
    /// checks box membership for interval sets.
    fn check_pair(&self, j: usize, x: f64, y: f64) -> Result<Option<usize>, EnvError> {
        let p = self.principal(j)?;
        let infeasible = || EnvError::Infeasible {
            principal: j,
            x: format!("{x}"),
            y: format!("{y}"),
        };
        match (&p.contractible, &p.discretionary, &p.feasibility) {
            (ActionSet::Finite(xs), ActionSet::Finite(ys), Feasibility::Finite(f)) => {
                let xi = xs
                    .iter()
                    .position(|a| a.value.is_some_and(|v| (v - x).abs() <= 1e-12))
                    .ok_or(EnvError::UnknownContractible { principal: j, value: x })?;
                let yi = f[xi]
                    .iter()
                    .copied()
                    .find(|yi| ys[*yi].value.is_some_and(|v| (v - y).abs() <= 1e-12))
                    .ok_or_else(infeasible)?;
                let pair = p.pairs().iter().position(|pr| *pr == (xi, yi)).expect("pair listed");
                Ok(Some(pair))
            }
            (xset, _, fe) => {
                let x_ok = match xset {
                    ActionSet::Interval { lo, hi } => x >= *lo && x <= *hi,
                    ActionSet::Finite(xs) => xs.iter().any(|a| a.value == Some(x)),
                };
                let y_ok = match fe {
                    Feasibility::Box { lo, hi } => y >= *lo && y <= *hi,
                    Feasibility::Finite(_) => false,
                };
                if !x_ok {
                    return Err(EnvError::UnknownContractible { principal: j, value: x });
                }
                if !y_ok {
                    return Err(infeasible());
                }
                Ok(None)
            }
        }
    }

    fn type_index(&self, theta: f64) -> Result<Option<usize>, EnvError> {
        match &self.types {
            TypeSpace::Finite(points) => points
                .iter()
                .position(|p| (p.value - theta).abs() <= 1e-12)
                .map(Some)
                .ok_or(EnvError::TypeOutOfRange(theta)),
            TypeSpace::Interval { lo, hi, .. } => {
                if theta < *lo || theta > *hi {
                    Err(EnvError::TypeOutOfRange(theta))
                } else {
                    Ok(None)
                }
            }
        }
    }

    /// Payoffs at a real-valued action profile `[(x_j, y_j)]` and type value.
    pub fn payoffs_at(&self, profile: &[(f64, f64)], theta: f64) -> Result<Payoffs, EnvError> {
        let n = self.n_principals();
        if profile.len() != n {
            return Err(EnvError::ProfileArity {
                expected: n,
                got: profile.len(),
            });
        }
        let mut pair_idx = Vec::with_capacity(n);
        for (j, (x, y)) in profile.iter().enumerate() {
            pair_idx.push(self.check_pair(j, *x, *y)?);
        }
        let ti = self.type_index(theta)?;
        match &self.payoffs.kind {
            PayoffKind::Expressions { agent, principals } => {
                let xs: Vec<f64> = profile.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = profile.iter().map(|p| p.1).collect();
                let ctx = self.expr_context(&xs, &ys, theta);
                Ok(Payoffs {
                    agent: agent.evaluate(&ctx)?,
                    principals: principals.iter().map(|e| e.evaluate(&ctx)).collect::<Result<_, _>>()?,
                })
            }
            PayoffKind::Table(_) => {
                let ti = ti.ok_or(EnvError::NotFinite)?;
                let idx: Vec<usize> = pair_idx.into_iter().map(|p| p.expect("finite table env")).collect();
                self.payoffs_indexed(ti, &idx)
            }
        }
    }

    pub fn payoff_u(&self, profile: &[(f64, f64)], theta: f64) -> Result<f64, EnvError> {
        Ok(self.payoffs_at(profile, theta)?.agent)
    }

    pub fn payoff_v(&self, j: usize, profile: &[(f64, f64)], theta: f64) -> Result<f64, EnvError> {
        let p = self.payoffs_at(profile, theta)?;
        p.principals.get(j).copied().ok_or(EnvError::Principal(j))
    }

    /// Payoffs on a finite environment, with one index into Z_j per principal.
    pub fn payoffs_indexed(&self, ty: usize, pairs: &[usize]) -> Result<Payoffs, EnvError> {
        let types = self.types.finite()?;
        let point = types.get(ty).ok_or(EnvError::Type(ty))?;
        match &self.payoffs.kind {
            PayoffKind::Table(t) => t
                .entries
                .get(&(ty, pairs.to_vec()))
                .map(|(a, v)| Payoffs {
                    agent: *a,
                    principals: v.clone(),
                })
                .ok_or_else(|| EnvError::MissingTableEntry {
                    ty,
                    profile: pairs.to_vec(),
                }),
            PayoffKind::Expressions { agent, principals } => {
                let mut xs = Vec::with_capacity(pairs.len());
                let mut ys = Vec::with_capacity(pairs.len());
                for (j, pi) in pairs.iter().enumerate() {
                    let spec = self.principal(j)?;
                    let (xi, yi) = spec.pairs()[*pi];
                    xs.push(spec.xs().ok_or(EnvError::InfiniteActions { principal: j, what: "X" })?[xi].numeric()?);
                    ys.push(spec.ys().ok_or(EnvError::InfiniteActions { principal: j, what: "Y" })?[yi].numeric()?);
                }
                let ctx = self.expr_context(&xs, &ys, point.value);
                Ok(Payoffs {
                    agent: agent.evaluate(&ctx)?,
                    principals: principals.iter().map(|e| e.evaluate(&ctx)).collect::<Result<_, _>>()?,
                })
            }
        }
    }

    /// U(θ), or `None` when exit is not available.
    pub fn outside_value(&self, theta: f64) -> Result<Option<f64>, EnvError> {
        match &self.payoffs.outside {
            OutsideOption::None => Ok(None),
            OutsideOption::Expr(e) => {
                let mut ctx = crate::expr::EvalContext::new();
                ctx.insert("theta".into(), theta);
                Ok(Some(e.evaluate(&ctx)?))
            }
        }
    }
}

/// A finitely supported belief over type values (or a weighted grid).
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BeliefError {
    #[error("belief has empty support")]
    EmptySupport,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl Belief {
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Self {
        Belief { points, weights }
    }

    pub fn point_mass(theta: f64) -> Self {
        Belief {
            points: vec![theta],
            weights: vec![1.0],
        }
    }

    pub fn uniform(points: &[f64]) -> Self {
        let w = 1.0 / points.len() as f64;
        Belief {
            points: points.to_vec(),
            weights: vec![w; points.len()],
        }
    }

    /// Composite-Simpson grid with `n` points (n odd; rounded up otherwise),
    /// weighted by `density` and normalized to total mass one.
    pub fn density_grid(lo: f64, hi: f64, n: usize, density: impl Fn(f64) -> f64) -> Self {
        let n = if n < 3 { 3 } else if n % 2 == 0 { n + 1 } else { n };
        let h = (hi - lo) / (n - 1) as f64;
        let mut points = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let t = if i + 1 == n { hi } else { lo + h * i as f64 };
            let simpson = if i == 0 || i + 1 == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            points.push(t);
            weights.push(simpson * h / 3.0 * density(t));
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Belief { points, weights }
    }

    pub fn uniform_interval(lo: f64, hi: f64, n: usize) -> Self {
        Belief::density_grid(lo, hi, n, |_| 1.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        self.weights.iter().all(|w| *w >= 0.0) && (self.total_mass() - 1.0).abs() <= tol
    }

    pub fn support(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > 0.0)
            .map(|(p, w)| (*p, *w))
    }

    pub fn mean(&self) -> f64 {
        self.support().map(|(p, w)| p * w).sum()
    }
}

/// Expected value of `f` under `belief` (weighted sum over its support).
pub fn expect<F, E>(mut f: F, belief: &Belief) -> Result<f64, E>
where
    F: FnMut(f64) -> Result<f64, E>,
    E: From<BeliefError>,
{
    if belief.support().next().is_none() {
        return Err(BeliefError::EmptySupport.into());
    }
    let mut total = 0.0;
    for (p, w) in belief.support() {
        total += w * f(p)?;
    }
    Ok(total)
}

/// An outcome for one type: exit, or one feasible pair per principal given
/// as `(x index, y index)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Outcome {
    OptOut,
    Trade(Vec<(usize, usize)>),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::OptOut => f.write_str("opt-out"),
            Outcome::Trade(pairs) => {
                for (i, (x, y)) in pairs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "({x},{y})")?;
                }
                Ok(())
            }
        }
    }
}

/// Map from type index to a finitely supported distribution over outcomes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Allocation {
    pub per_type: Vec<Vec<(Outcome, f64)>>,
}

impl Allocation {
    /// Sorts each type's distribution and merges duplicate outcomes.
    pub fn normalized(mut self) -> Self {
        for dist in &mut self.per_type {
            dist.sort_by(|a, b| a.0.cmp(&b.0));
            let mut merged: Vec<(Outcome, f64)> = Vec::with_capacity(dist.len());
            for (o, p) in dist.drain(..) {
                match merged.last_mut() {
                    Some(last) if last.0 == o => last.1 += p,
                    _ => merged.push((o, p)),
                }
            }
            merged.retain(|(_, p)| *p > 0.0);
            *dist = merged;
        }
        self
    }

    /// Elementwise comparison with a probability tolerance.
    pub fn approx_eq(&self, other: &Allocation, tol: f64) -> bool {
        self.per_type.len() == other.per_type.len()
            && self.per_type.iter().zip(&other.per_type).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.0 == y.0 && (x.1 - y.1).abs() <= tol)
            })
    }

    /// Checks per-type mass and feasibility of every listed pair.
    pub fn check(&self, env: &Environment, tol: f64) -> Result<(), String> {
        for (t, dist) in self.per_type.iter().enumerate() {
            let mass: f64 = dist.iter().map(|(_, p)| p).sum();
            if (mass - 1.0).abs() > tol {
                return Err(format!("type {t}: mass {mass}"));
            }
            for (o, _) in dist {
                if let Outcome::Trade(pairs) = o {
                    for (j, (x, y)) in pairs.iter().enumerate() {
                        let spec = env.principal(j).map_err(|e| e.to_string())?;
                        if !spec.feasible(*x).contains(y) {
                            return Err(format!("type {t}: pair ({x},{y}) infeasible for principal {j}"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Total mass of the joint distribution over (type, outcome) under the
    /// given prior weights.
    pub fn joint_mass(&self, prior: &[f64]) -> f64 {
        self.per_type
            .iter()
            .zip(prior)
            .map(|(dist, w)| w * dist.iter().map(|(_, p)| p).sum::<f64>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyFeasibility { principal: usize, contractible: String },
    TooFewPairs { principal: usize, feasible_pairs: usize },
    NegativeWeight { ty: String },
    WeightSum { total: f64 },
    EmptyTypeSpace,
    IntervalBounds { lo: f64, hi: f64 },
    DensityMass { mass: f64 },
    UnknownVariable { name: String },
    PrincipalCount { expected: usize, got: usize },
    FeasibilityArity { principal: usize, expected: usize, got: usize },
    UnknownDiscretionary { principal: usize, index: usize },
    BadPayoff { ty: String, profile: String, reason: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyFeasibility { principal, contractible } => {
                write!(f, "empty feasibility: principal {principal}, action {contractible}")
            }
            Violation::TooFewPairs { principal, feasible_pairs } => write!(
                f,
                "principal {principal} has {feasible_pairs} feasible pair(s), needs at least two"
            ),
            Violation::NegativeWeight { ty } => write!(f, "negative prior weight on type {ty}"),
            Violation::WeightSum { total } => write!(f, "prior weights sum to {total}"),
            Violation::EmptyTypeSpace => f.write_str("empty type space"),
            Violation::IntervalBounds { lo, hi } => write!(f, "interval bounds [{lo}, {hi}] are not ordered"),
            Violation::DensityMass { mass } => write!(f, "density integrates to {mass}"),
            Violation::UnknownVariable { name } => write!(f, "unknown variable `{name}` in payoff"),
            Violation::PrincipalCount { expected, got } => {
                write!(f, "payoffs cover {got} principal(s), environment has {expected}")
            }
            Violation::FeasibilityArity { principal, expected, got } => write!(
                f,
                "principal {principal}: feasibility lists {got} entries for {expected} contractible actions"
            ),
            Violation::UnknownDiscretionary { principal, index } => {
                write!(f, "principal {principal}: discretionary index {index} out of range")
            }
            Violation::BadPayoff { ty, profile, reason } => {
                write!(f, "payoff at type {ty}, profile {profile}: {reason}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the structural assumptions; never fails, collects violations.
pub fn validate(env: &Environment) -> ValidationReport {
    let mut v = Vec::new();
    match &env.types {
        TypeSpace::Finite(points) => {
            if points.is_empty() {
                v.push(Violation::EmptyTypeSpace);
            }
            for p in points {
                if p.weight < 0.0 {
                    v.push(Violation::NegativeWeight { ty: p.label.clone() });
                }
            }
            let total: f64 = points.iter().map(|p| p.weight).sum();
            if (total - 1.0).abs() > 1e-12 {
                v.push(Violation::WeightSum { total });
            }
        }
        TypeSpace::Interval { lo, hi, .. } => {
            if !(lo < hi) {
                v.push(Violation::IntervalBounds { lo: *lo, hi: *hi });
            } else {
                let mass = numeric::integrate(|t| Ok(env.types.pdf(t)), *lo, *hi, 64, 1e-13).unwrap_or(f64::NAN);
                if !((mass - 1.0).abs() <= 1e-9) {
                    v.push(Violation::DensityMass { mass });
                }
            }
        }
    }

    for (j, p) in env.principals.iter().enumerate() {
        match (&p.contractible, &p.feasibility) {
            (ActionSet::Finite(xs), Feasibility::Finite(f)) => {
                if f.len() != xs.len() {
                    v.push(Violation::FeasibilityArity {
                        principal: j,
                        expected: xs.len(),
                        got: f.len(),
                    });
                }
                let ny = p.ys().map(|ys| ys.len()).unwrap_or(0);
                for (xi, x) in xs.iter().enumerate() {
                    let ys = f.get(xi).map(|v| v.as_slice()).unwrap_or(&[]);
                    if ys.is_empty() {
                        v.push(Violation::EmptyFeasibility {
                            principal: j,
                            contractible: x.label.clone(),
                        });
                    }
                    for y in ys {
                        if *y >= ny {
                            v.push(Violation::UnknownDiscretionary { principal: j, index: *y });
                        }
                    }
                }
                let count: usize = f.iter().map(|ys| ys.len()).sum();
                if count < 2 {
                    v.push(Violation::TooFewPairs {
                        principal: j,
                        feasible_pairs: count,
                    });
                }
            }
            (_, Feasibility::Box { lo, hi }) => {
                if !(lo <= hi) {
                    v.push(Violation::EmptyFeasibility {
                        principal: j,
                        contractible: "*".into(),
                    });
                }
            }
            (ActionSet::Interval { .. }, Feasibility::Finite(_)) => {
                v.push(Violation::EmptyFeasibility {
                    principal: j,
                    contractible: "interval".into(),
                });
            }
        }
    }

    let n = env.n_principals();
    match &env.payoffs.kind {
        PayoffKind::Expressions { agent, principals } => {
            if principals.len() != n {
                v.push(Violation::PrincipalCount {
                    expected: n,
                    got: principals.len(),
                });
            }
            let layout = payoff_layout(n);
            for e in std::iter::once(agent).chain(principals.iter()) {
                for name in e.free_vars() {
                    if !layout.contains(&name) {
                        v.push(Violation::UnknownVariable { name });
                    }
                }
            }
        }
        PayoffKind::Table(t) => {
            if let Some((_, (_, vs))) = t.entries.iter().next() {
                if vs.len() != n {
                    v.push(Violation::PrincipalCount {
                        expected: n,
                        got: vs.len(),
                    });
                }
            }
        }
    }
    if let OutsideOption::Expr(e) = &env.payoffs.outside {
        for name in e.free_vars() {
            if name != "theta" {
                v.push(Violation::UnknownVariable { name });
            }
        }
    }

    // Exhaustive sweep over feasible profiles on finite environments.
    if v.is_empty() {
        if let (Ok(types), true) = (env.types.finite(), env.principals.iter().all(|p| p.is_finite())) {
            let sizes: Vec<usize> = env.principals.iter().map(|p| p.pairs().len()).collect();
            let total: usize = sizes.iter().product();
            'sweep: for (ti, tp) in types.iter().enumerate() {
                if let Ok(Some(u)) = env.outside_value(tp.value) {
                    if !u.is_finite() {
                        v.push(Violation::BadPayoff {
                            ty: tp.label.clone(),
                            profile: "outside option".into(),
                            reason: "non-finite".into(),
                        });
                    }
                }
                for flat in 0..total {
                    let profile = unflatten(flat, &sizes);
                    let bad = match env.payoffs_indexed(ti, &profile) {
                        Ok(p) => {
                            if p.agent.is_finite() && p.principals.iter().all(|x| x.is_finite()) {
                                None
                            } else {
                                Some("non-finite".to_string())
                            }
                        }
                        Err(e) => Some(e.to_string()),
                    };
                    if let Some(reason) = bad {
                        v.push(Violation::BadPayoff {
                            ty: tp.label.clone(),
                            profile: format!("{profile:?}"),
                            reason,
                        });
                        if v.len() > 16 {
                            break 'sweep;
                        }
                    }
                }
            }
        }
    }
    ValidationReport { violations: v }
}

/// Mixed-radix decoding, first coordinate most significant.
pub fn unflatten(mut flat: usize, sizes: &[usize]) -> Vec<usize> {
    let mut out = vec![0; sizes.len()];
    for i in (0..sizes.len()).rev() {
        out[i] = flat % sizes[i];
        flat /= sizes[i];
    }
    out
}

pub fn flatten(idx: &[usize], sizes: &[usize]) -> usize {
    idx.iter().zip(sizes).fold(0, |acc, (i, s)| acc * s + i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn labor_env() -> Environment {
        Environment {
            types: TypeSpace::uniform_finite(&[3.0, 4.0]),
            principals: vec![PrincipalSpec::finite(
                ActionSet::reals(&[1.0, 3.0]),
                ActionSet::reals(&[0.0, 3.0]),
                vec![vec![0, 1], vec![0, 1]],
            )],
            payoffs: PayoffModel {
                kind: PayoffKind::Expressions {
                    agent: parse("(x*theta - y^2)/sqrt(theta)").unwrap(),
                    principals: vec![parse("y*theta - x^2").unwrap()],
                },
                outside: OutsideOption::default(),
            },
            observability: Observability::Public,
        }
    }

    #[test]
    fn payoff_evaluation() {
        let env = labor_env();
        let env4 = Environment {
            types: TypeSpace::uniform_finite(&[4.0, 3.0]),
            ..env.clone()
        };
        assert_eq!(env4.payoff_u(&[(1.0, 0.0)], 4.0).unwrap(), 2.0);
        assert_eq!(env.payoff_v(0, &[(3.0, 3.0)], 3.0).unwrap(), 0.0);
        assert!(matches!(
            env.payoff_u(&[(2.0, 0.0)], 3.0),
            Err(EnvError::UnknownContractible { .. })
        ));
        assert!(matches!(env.payoff_u(&[(1.0, 1.0)], 3.0), Err(EnvError::Infeasible { .. })));
    }

    #[test]
    fn two_principal_interaction_payoff() {
        let beta = 17.0 / 21.0;
        let env = Environment {
            types: TypeSpace::uniform_finite(&[3.0]),
            principals: vec![
                PrincipalSpec::finite(ActionSet::reals(&[3.0]), ActionSet::reals(&[3.0]), vec![vec![0]]),
                PrincipalSpec::finite(ActionSet::reals(&[3.0]), ActionSet::reals(&[3.0]), vec![vec![0]]),
            ],
            payoffs: PayoffModel {
                kind: PayoffKind::Expressions {
                    agent: parse("0").unwrap(),
                    principals: vec![
                        parse(&format!("(1 + {beta}*x2)*y1*theta - x1^2")).unwrap(),
                        parse(&format!("(1 + {beta}*x1)*y2*theta - x2^2")).unwrap(),
                    ],
                },
                outside: OutsideOption::default(),
            },
            observability: Observability::Public,
        };
        let v = env.payoff_v(0, &[(3.0, 3.0), (3.0, 3.0)], 3.0).unwrap();
        assert!((v - ((1.0 + 51.0 / 21.0) * 9.0 - 9.0)).abs() < 1e-12);
        assert!((v - 21.857).abs() < 1e-3);
    }

    #[test]
    fn validation_flags() {
        let mut env = labor_env();
        assert!(validate(&env).passed());

        env.principals[0].feasibility = Feasibility::Finite(vec![vec![0], vec![]]);
        let r = validate(&env);
        assert!(r
            .violations
            .iter()
            .any(|v| matches!(v, Violation::EmptyFeasibility { .. })));

        let mut env = labor_env();
        env.principals[0] =
            PrincipalSpec::finite(ActionSet::labels(&["x0"]), ActionSet::labels(&["y0"]), vec![vec![0]]);
        env.payoffs.kind = PayoffKind::Expressions {
            agent: parse("1").unwrap(),
            principals: vec![parse("1").unwrap()],
        };
        let r = validate(&env);
        assert!(r.violations.iter().any(|v| v.to_string().contains("needs at least two")));

        let mut env = labor_env();
        env.types = TypeSpace::Finite(vec![TypePoint::new("a", 3.0, 0.5), TypePoint::new("b", 4.0, 0.6)]);
        assert!(matches!(validate(&env).violations[0], Violation::WeightSum { .. }));

        let mut env = labor_env();
        env.payoffs.kind = PayoffKind::Expressions {
            agent: parse("z").unwrap(),
            principals: vec![parse("1").unwrap()],
        };
        assert!(matches!(validate(&env).violations[0], Violation::UnknownVariable { .. }));

        let mut env = labor_env();
        env.payoffs.kind = PayoffKind::Expressions {
            agent: parse("log(x - 1)").unwrap(),
            principals: vec![parse("1").unwrap()],
        };
        assert!(matches!(validate(&env).violations[0], Violation::BadPayoff { .. }));

        let mut env = labor_env();
        env.types = TypeSpace::Interval {
            lo: 3.0,
            hi: 4.0,
            density: Density::TruncatedNormal { mean: 3.2, sd: 0.4 },
            grid: 101,
        };
        assert!(validate(&env).passed());
        env.types = TypeSpace::uniform_interval(4.0, 3.0);
        assert!(matches!(validate(&env).violations[0], Violation::IntervalBounds { .. }));
    }

    #[test]
    fn expectations() {
        let b = Belief::uniform(&[3.0, 4.0]);
        assert_eq!(expect(|t| Ok::<_, BeliefError>(t), &b).unwrap(), 3.5);
        let grid = TypeSpace::Interval {
            lo: 3.0,
            hi: 4.0,
            density: Density::Uniform,
            grid: 1025,
        }
        .prior();
        assert_eq!(grid.points.len(), 1025);
        assert!((expect(|t| Ok::<_, BeliefError>(t), &grid).unwrap() - 3.5).abs() < 1e-9);
        let g = Belief::uniform_interval(0.5, 1.5, 1025);
        assert!((expect(|t| Ok::<_, BeliefError>(1.0 / t), &g).unwrap() - 3f64.ln()).abs() < 1e-6);
        let empty = Belief::new(vec![1.0], vec![0.0]);
        assert_eq!(
            expect(|t| Ok::<_, BeliefError>(t), &empty),
            Err(BeliefError::EmptySupport)
        );
        let tn = TypeSpace::Interval {
            lo: 3.0,
            hi: 4.0,
            density: Density::TruncatedNormal { mean: 3.5, sd: 0.3 },
            grid: 1025,
        }
        .prior();
        assert!((expect(|_| Ok::<_, BeliefError>(2.5), &tn).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn radix_roundtrip() {
        let sizes = [3, 1, 4];
        for flat in 0..12 {
            assert_eq!(flatten(&unflatten(flat, &sizes), &sizes), flat);
        }
    }
}
