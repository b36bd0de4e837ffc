//! Revisable actions: the receiver commits to a baseline `x` and may revise
//! it to a final action `z` within a bounded range. Grid games compare the
//! final allocations supportable with and without the revision.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::contracts::{enumerate_gstar, ContractError, Mechanism};
use crate::env::{
    ActionSet, Belief, Environment, Observability, Outcome, OutsideOption, PayoffKind, PayoffModel, PayoffTable,
    PrincipalSpec, TypeSpace,
};
use crate::equilibrium::{
    bayes_update, check_continuation, enumerate_equilibria, AgentChoice, AgentStrategy, Assessment, ContinuationProfile,
    EquilibriumError, Found, OffPathPolicy, SearchOptions,
};
use crate::expr::{EvalContext, EvalError, Expr};
use crate::numeric;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RevisableError {
    #[error("revision bounds are invalid: {0}")]
    Bounds(String),
    #[error("proportional revisions need a positive baseline or target, got {0}")]
    NonPositive(f64),
    #[error("receiver payoff is not strictly concave at theta = {theta}, z = {z}")]
    NotConcave { theta: f64, z: f64 },
    #[error("no bracket for the posterior ideal point")]
    NoBracket,
    #[error("belief has empty support")]
    EmptyBelief,
    #[error("a in (0, 1) required, got {0}")]
    Slope(f64),
    #[error("k = {k} puts the delegation interval outside [0, 1] for a = {a}")]
    Interval { k: f64, a: f64 },
    #[error("grid games need additive revisions of whole grid steps")]
    GridMode,
    #[error("grid instance too large: {0}")]
    GridCap(String),
    #[error("final action {0} is off the grid")]
    OffGrid(f64),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Contract(#[from] ContractError),
}

type Result<T> = std::result::Result<T, RevisableError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Revision {
    Additive { alpha: f64 },
    Proportional { lo: f64, hi: f64 },
}

/// A payoff over the final action `z` and the type.
#[derive(Debug, Clone, PartialEq)]
pub enum Payoff1D {
    /// `-(z - k - a*theta)^2`.
    Quadratic { k: f64, a: f64 },
    /// Expression in `z` and `theta`.
    Expr(Expr),
}

impl Payoff1D {
    pub fn eval(&self, z: f64, theta: f64) -> Result<f64> {
        match self {
            Payoff1D::Quadratic { k, a } => {
                let d = z - k - a * theta;
                Ok(-d * d)
            }
            Payoff1D::Expr(e) => {
                let mut ctx = EvalContext::new();
                ctx.insert("z".into(), z);
                ctx.insert("theta".into(), theta);
                Ok(e.evaluate(&ctx)?)
            }
        }
    }

    pub fn to_expr(&self) -> Expr {
        match self {
            Payoff1D::Quadratic { k, a } => {
                crate::expr::parse(&format!("-(z - ({k:?}) - ({a:?})*theta)^2")).expect("well-formed quadratic")
            }
            Payoff1D::Expr(e) => e.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RevisableModel {
    pub revision: Revision,
    pub sender: Payoff1D,
    pub receiver: Payoff1D,
    pub types: TypeSpace,
    /// Working range of final actions for audits and searches.
    pub z_range: (f64, f64),
}

impl RevisableModel {
    pub fn validate(&self) -> Result<()> {
        match self.revision {
            Revision::Additive { alpha } if !(alpha >= 0.0) => Err(RevisableError::Bounds(format!("alpha = {alpha}"))),
            Revision::Proportional { lo, hi } if !(lo > 0.0 && lo <= hi) => {
                Err(RevisableError::Bounds(format!("[{lo}, {hi}]")))
            }
            _ => Ok(()),
        }
    }
}

/// Second-difference audit of `v(., theta)` on a 101-point grid of
/// `z_range`, at each sampled type.
pub fn concavity_audit(model: &RevisableModel, thetas: &[f64]) -> Result<()> {
    let (lo, hi) = model.z_range;
    let n = 101;
    let h = (hi - lo) / (n - 1) as f64;
    for &theta in thetas {
        let vals: Vec<f64> = (0..n)
            .map(|i| model.receiver.eval(lo + h * i as f64, theta))
            .collect::<Result<_>>()?;
        for i in 1..n - 1 {
            if vals[i - 1] - 2.0 * vals[i] + vals[i + 1] >= 0.0 {
                return Err(RevisableError::NotConcave {
                    theta,
                    z: lo + h * i as f64,
                });
            }
        }
    }
    Ok(())
}

fn audit_thetas(belief: &Belief) -> Vec<f64> {
    let support: Vec<f64> = belief.support().map(|(p, _)| p).collect();
    if support.len() <= 11 {
        return support;
    }
    (0..11).map(|i| support[i * (support.len() - 1) / 10]).collect()
}

fn expected_receiver(model: &RevisableModel, belief: &Belief, z: f64) -> Result<f64> {
    let mut total = 0.0;
    for (theta, w) in belief.support() {
        total += w * model.receiver.eval(z, theta)?;
    }
    Ok(total)
}

/// The receiver's unique maximizer of expected payoff under `belief`.
pub fn posterior_ideal(model: &RevisableModel, belief: &Belief) -> Result<f64> {
    if belief.support().next().is_none() {
        return Err(RevisableError::EmptyBelief);
    }
    if let Payoff1D::Quadratic { k, a } = model.receiver {
        return Ok(k + a * belief.mean());
    }
    concavity_audit(model, &audit_thetas(belief))?;
    let (lo, hi) = model.z_range;
    let f = |z: f64| expected_receiver(model, belief, z);
    let (a, b) = numeric::bracket_max(f, 0.5 * (lo + hi), 0.5 * (hi - lo))?.map_err(|_| RevisableError::NoBracket)?;
    let (z, _, _) = numeric::golden_max(f, a, b, 1e-10)?;
    Ok(z)
}

pub fn feasible_final_interval(model: &RevisableModel, x: f64) -> Result<(f64, f64)> {
    match model.revision {
        Revision::Additive { alpha } => Ok((x - alpha, x + alpha)),
        Revision::Proportional { lo, hi } => {
            if x < 0.0 {
                Err(RevisableError::NonPositive(x))
            } else {
                Ok((lo * x, hi * x))
            }
        }
    }
}

/// Baseline placing `z` at the endpoint of the feasible interval nearest the
/// receiver's ideal `r`, with the revision that reaches `z` (an additive
/// shift or a multiplicative factor).
pub fn endpoint_baseline(model: &RevisableModel, z: f64, r: f64) -> Result<(f64, f64)> {
    const EQ: f64 = 1e-12;
    match model.revision {
        Revision::Additive { alpha } => Ok(if (z - r).abs() <= EQ {
            (z, 0.0)
        } else if z < r {
            (z - alpha, alpha)
        } else {
            (z + alpha, -alpha)
        }),
        Revision::Proportional { lo, hi } => {
            if z <= 0.0 {
                return Err(RevisableError::NonPositive(z));
            }
            Ok(if (z - r).abs() <= EQ {
                (z, 1.0)
            } else if z < r {
                (z / hi, hi)
            } else {
                (z / lo, lo)
            })
        }
    }
}

/// Argmax of the receiver's expected payoff over a 101-point grid of the
/// feasible interval above `x`.
pub fn constrained_optimum(model: &RevisableModel, belief: &Belief, x: f64) -> Result<f64> {
    let (lo, hi) = feasible_final_interval(model, x)?;
    let n = 101;
    let mut best = (lo, f64::NEG_INFINITY);
    for i in 0..n {
        let z = if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
        let v = expected_receiver(model, belief, z)?;
        if v > best.1 {
            best = (z, v);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MsThresholds {
    pub lo: f64,
    pub hi: f64,
    /// Whether `k` lies in the range where both thresholds are interior.
    pub valid: bool,
}

/// Thresholds of the sender-optimal delegation interval on `[0, 1]`.
pub fn ms_thresholds(k: f64, a: f64) -> Result<MsThresholds> {
    if !(a > 0.0 && a < 1.0) {
        return Err(RevisableError::Slope(a));
    }
    Ok(MsThresholds {
        lo: (2.0 * k / (2.0 - a)).max(0.0),
        hi: ((2.0 * k + a) / (2.0 - a)).min(1.0),
        valid: k > -a / 2.0 && k < 1.0 - a / 2.0,
    })
}

pub fn ms_allocation(k: f64, a: f64, theta: f64) -> Result<f64> {
    let t = ms_thresholds(k, a)?;
    if !t.valid {
        return Err(RevisableError::Interval { k, a });
    }
    Ok(theta.clamp(t.lo, t.hi))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MsLiftRow {
    pub theta: f64,
    pub z: f64,
    pub ideal: f64,
    pub baseline: f64,
    pub revision: f64,
    pub optimum: f64,
    pub ok: bool,
}

/// Lifts the delegation allocation under a uniform prior on `[0, 1]`: types
/// in the bottom and top pools share a message, interior types separate.
pub fn ms_lift(k: f64, a: f64, alpha: f64, thetas: &[f64]) -> Result<Vec<MsLiftRow>> {
    let t = ms_thresholds(k, a)?;
    let model = RevisableModel {
        revision: Revision::Additive { alpha },
        sender: Payoff1D::Quadratic { k: 0.0, a: 1.0 },
        receiver: Payoff1D::Quadratic { k, a },
        types: TypeSpace::uniform_interval(0.0, 1.0),
        z_range: (-1.0, 2.0),
    };
    let tol = 2.0 * alpha / 100.0;
    thetas
        .iter()
        .map(|&theta| {
            let z = ms_allocation(k, a, theta)?;
            let belief = if theta < t.lo && t.lo > 0.0 {
                Belief::uniform_interval(0.0, t.lo, 1025)
            } else if theta > t.hi && t.hi < 1.0 {
                Belief::uniform_interval(t.hi, 1.0, 1025)
            } else {
                Belief::point_mass(theta)
            };
            let ideal = posterior_ideal(&model, &belief)?;
            let (baseline, revision) = endpoint_baseline(&model, z, ideal)?;
            let optimum = constrained_optimum(&model, &belief, baseline)?;
            Ok(MsLiftRow {
                theta,
                z,
                ideal,
                baseline,
                revision,
                optimum,
                ok: (optimum - z).abs() <= tol,
            })
        })
        .collect()
}

/// Map from type to a distribution over final actions, sorted by `z`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalAllocation {
    pub per_type: Vec<Vec<(f64, f64)>>,
}

impl FinalAllocation {
    /// Exact comparison key: grid index of each final action.
    pub fn key(&self, z_lo: f64, step: f64) -> Vec<Vec<(i64, u64)>> {
        self.per_type
            .iter()
            .map(|d| d.iter().map(|(z, p)| (((z - z_lo) / step).round() as i64, p.to_bits())).collect())
            .collect()
    }
}

/// A finite grid instance: equally likely types, an equally spaced grid of
/// final actions, and the two payoffs over `(z, theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub types: Vec<f64>,
    pub z_lo: f64,
    pub z_hi: f64,
    pub z_points: usize,
    pub sender: Payoff1D,
    pub receiver: Payoff1D,
}

impl GridSpec {
    /// Five types on [0, 1], nine final actions, quadratic payoffs with the
    /// receiver biased by k = 0.2, a = 0.5.
    pub fn quadratic_default() -> Self {
        GridSpec {
            types: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            z_lo: 0.0,
            z_hi: 1.0,
            z_points: 9,
            sender: Payoff1D::Quadratic { k: 0.0, a: 1.0 },
            receiver: Payoff1D::Quadratic { k: 0.2, a: 0.5 },
        }
    }

    pub fn step(&self) -> f64 {
        (self.z_hi - self.z_lo) / (self.z_points - 1) as f64
    }

    fn z(&self, i: i64) -> f64 {
        self.z_lo + self.step() * i as f64
    }

    pub fn model(&self, alpha_steps: usize) -> RevisableModel {
        RevisableModel {
            revision: Revision::Additive {
                alpha: alpha_steps as f64 * self.step(),
            },
            sender: self.sender.clone(),
            receiver: self.receiver.clone(),
            types: TypeSpace::uniform_finite(&self.types),
            z_range: (self.z_lo, self.z_hi),
        }
    }

    /// The discretized game with revisions of up to `alpha_steps` grid
    /// steps; baselines extend the final-action grid by the same amount on
    /// each side. With zero steps this is the full-commitment game.
    pub fn environment(&self, alpha_steps: usize) -> Result<Environment> {
        if self.z_points < 2 || self.types.is_empty() {
            return Err(RevisableError::GridCap("need two grid points and one type".into()));
        }
        let a = alpha_steps as i64;
        let xs: Vec<f64> = (-a..self.z_points as i64 + a).map(|i| self.z(i)).collect();
        let ys: Vec<f64> = (-a..=a).map(|i| self.step() * i as f64).collect();
        let feas = vec![(0..ys.len()).collect::<Vec<_>>(); xs.len()];
        let spec = PrincipalSpec::finite(ActionSet::reals(&xs), ActionSet::reals(&ys), feas);
        let mut table = PayoffTable::default();
        for (t, theta) in self.types.iter().enumerate() {
            for (p, (xi, yi)) in spec.pairs().into_iter().enumerate() {
                let z = xs[xi] + ys[yi];
                table.insert(t, vec![p], self.sender.eval(z, *theta)?, vec![self.receiver.eval(z, *theta)?]);
            }
        }
        Ok(Environment {
            types: TypeSpace::uniform_finite(&self.types),
            principals: vec![spec],
            payoffs: PayoffModel {
                kind: PayoffKind::Table(table),
                outside: OutsideOption::None,
            },
            observability: Observability::Public,
        })
    }
}

fn single_principal(env: &Environment) -> Result<()> {
    if env.n_principals() != 1 || env.principals[0].xs().is_none() || env.principals[0].ys().is_none() {
        return Err(RevisableError::GridMode);
    }
    Ok(())
}

fn action_value(env: &Environment, x: usize, y: usize) -> f64 {
    let p = &env.principals[0];
    p.xs().expect("finite")[x].value.unwrap_or(f64::NAN) + p.ys().expect("finite")[y].value.unwrap_or(f64::NAN)
}

/// Final allocation of a single-principal grid assessment (`z = x + y`).
pub fn final_allocation(env: &Environment, alloc: &crate::env::Allocation) -> Result<FinalAllocation> {
    single_principal(env)?;
    let mut per_type = Vec::with_capacity(alloc.per_type.len());
    for dist in &alloc.per_type {
        let mut m: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
        for (o, p) in dist {
            match o {
                Outcome::Trade(pairs) => {
                    let z = action_value(env, pairs[0].0, pairs[0].1);
                    // Order-preserving key for finite doubles.
                    let bits = z.to_bits();
                    let key = if z.is_sign_negative() { !bits } else { bits | (1 << 63) };
                    let e = m.entry(key).or_insert((z, 0.0));
                    e.1 += p;
                }
                Outcome::OptOut => return Err(RevisableError::GridMode),
            }
        }
        per_type.push(m.into_values().collect());
    }
    Ok(FinalAllocation { per_type })
}

/// Equilibrium final allocations over every menu, one witness each.
#[derive(Debug, Clone)]
pub struct GammaSet {
    pub allocations: Vec<FinalAllocation>,
    pub witnesses: Vec<Found>,
    pub menus: usize,
}

pub fn gamma_set(spec: &GridSpec, alpha_steps: usize, opts: &SearchOptions) -> Result<GammaSet> {
    let env = spec.environment(alpha_steps)?;
    let opts = SearchOptions {
        image_exact: true,
        ..opts.clone()
    };
    let menus = enumerate_gstar(&env, 0)?;
    let mut seen = BTreeSet::new();
    let mut allocations = Vec::new();
    let mut witnesses = Vec::new();
    for menu in &menus {
        if menu.image().len() > spec.types.len() {
            continue;
        }
        for found in enumerate_equilibria(&env, std::slice::from_ref(menu), &opts)? {
            let fa = final_allocation(&env, &found.allocation)?;
            if seen.insert(fa.key(spec.z_lo, spec.step())) {
                allocations.push(fa);
                witnesses.push(found);
            }
        }
    }
    Ok(GammaSet {
        allocations,
        witnesses,
        menus: menus.len(),
    })
}

fn grid_index(env: &Environment, value: f64, of_x: bool) -> Result<usize> {
    let p = &env.principals[0];
    let set = if of_x { p.xs() } else { p.ys() }.expect("finite");
    set.iter()
        .position(|a| a.value.is_some_and(|v| (v - value).abs() <= 1e-9))
        .ok_or(RevisableError::OffGrid(value))
}

/// Receiver best response (lowest index on ties) at every message under the
/// given public beliefs.
fn receiver_best(env: &Environment, contract: &Mechanism, beliefs: &[Vec<f64>]) -> Result<Vec<usize>> {
    let types = env.types.finite().map_err(EquilibriumError::from)?;
    let p = &env.principals[0];
    let pairs = p.pairs();
    contract
        .messages
        .iter()
        .zip(beliefs)
        .map(|(m, b)| {
            let mut best = (usize::MAX, f64::NEG_INFINITY);
            for &y in p.feasible(m.x) {
                let idx = pairs.iter().position(|pr| *pr == (m.x, y)).expect("pair");
                let mut v = 0.0;
                for t in 0..types.len() {
                    if b[t] > 0.0 {
                        v += b[t] * env.payoffs_indexed(t, &[idx]).map_err(EquilibriumError::from)?.principals[0];
                    }
                }
                if v > best.1 {
                    best = (y, v);
                }
            }
            Ok(best.0)
        })
        .collect()
}

/// Replaces every message `m` by the final action `G(m) + gamma(m)` in the
/// zero-revision game. Messages whose final action leaves the grid are
/// dropped; on-path ones must stay on it.
pub fn collapse_to_full(limited: &Environment, full: &Environment, a: &Assessment) -> Result<Assessment> {
    single_principal(limited)?;
    single_principal(full)?;
    if a.mode() != Observability::Public {
        return Err(RevisableError::GridMode);
    }
    let c = &a.contracts[0];
    let mut z_of_msg = Vec::with_capacity(c.len());
    for (m, msg) in c.messages.iter().enumerate() {
        let z = action_value(limited, msg.x, a.continuation.gamma[0][m]);
        z_of_msg.push(grid_index(full, z, true).ok());
    }
    let mut menu: Vec<usize> = z_of_msg.iter().flatten().copied().collect();
    menu.sort_unstable();
    menu.dedup();
    let contract = Mechanism::menu_rec(full, 0, &menu)?;
    let mut per_type = Vec::with_capacity(a.strategy.per_type.len());
    for dist in &a.strategy.per_type {
        let mut row: BTreeMap<AgentChoice, f64> = BTreeMap::new();
        for (ch, p) in dist {
            let AgentChoice::Send(profile) = ch else {
                return Err(RevisableError::GridMode);
            };
            let zi = z_of_msg[profile[0]].ok_or_else(|| {
                RevisableError::OffGrid(action_value(limited, c.messages[profile[0]].x, a.continuation.gamma[0][profile[0]]))
            })?;
            let m = contract.messages_above(zi)[0];
            *row.entry(AgentChoice::Send(vec![m])).or_insert(0.0) += p;
        }
        per_type.push(row.into_iter().collect());
    }
    let strategy = AgentStrategy { per_type };
    let beliefs = bayes_update(full, std::slice::from_ref(&contract), &strategy, OffPathPolicy::CopyFromSelector)?;
    let gamma = vec![contract.messages.iter().map(|m| m.rec.expect("menu message")).collect()];
    Ok(Assessment {
        contracts: vec![contract],
        strategy,
        continuation: ContinuationProfile { gamma },
        beliefs,
    })
}

/// Endpoint placement of every on-path message of a zero-revision
/// assessment. Unused menu items are pruned; off-path messages of the new
/// menu copy the belief of the selected on-path message above the same
/// baseline, and the receiver best-responds there.
pub fn lift_to_limited(spec: &GridSpec, alpha_steps: usize, full: &Environment, limited: &Environment, a: &Assessment) -> Result<Assessment> {
    single_principal(full)?;
    single_principal(limited)?;
    let model = spec.model(alpha_steps);
    let c = &a.contracts[0];
    let types = full.types.finite().map_err(EquilibriumError::from)?;
    let values: Vec<f64> = types.iter().map(|t| t.value).collect();

    // Posterior and final action per on-path message.
    let mut joint = vec![vec![0.0; types.len()]; c.len()];
    for (t, dist) in a.strategy.per_type.iter().enumerate() {
        for (ch, p) in dist {
            let AgentChoice::Send(profile) = ch else {
                return Err(RevisableError::GridMode);
            };
            joint[profile[0]][t] += types[t].weight * p;
        }
    }
    let mut lifted: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (m, w) in joint.iter().enumerate() {
        let mass: f64 = w.iter().sum();
        if mass <= 0.0 {
            continue;
        }
        let belief = Belief::new(values.clone(), w.iter().map(|x| x / mass).collect());
        let z = action_value(full, c.messages[m].x, a.continuation.gamma[0][m]);
        let r = posterior_ideal(&model, &belief)?;
        let (xb, yb) = endpoint_baseline(&model, z, r)?;
        lifted.insert(m, (grid_index(limited, xb, true)?, grid_index(limited, yb, false)?));
    }
    let menu: Vec<usize> = lifted.values().map(|(x, _)| *x).collect::<BTreeSet<_>>().into_iter().collect();
    let contract = Mechanism::menu_rec(limited, 0, &menu)?;
    let msg_of = |x: usize, y: usize| {
        contract
            .messages
            .iter()
            .position(|mm| mm.x == x && mm.rec == Some(y))
            .expect("lifted pair is a menu message")
    };
    let strategy = AgentStrategy {
        per_type: a
            .strategy
            .per_type
            .iter()
            .map(|dist| {
                dist.iter()
                    .map(|(ch, p)| match ch {
                        AgentChoice::Send(profile) => {
                            let (x, y) = lifted[&profile[0]];
                            (AgentChoice::Send(vec![msg_of(x, y)]), *p)
                        }
                        AgentChoice::OptOut => (AgentChoice::OptOut, *p),
                    })
                    .collect()
            })
            .collect(),
    };
    let beliefs = bayes_update(limited, std::slice::from_ref(&contract), &strategy, OffPathPolicy::CopyFromSelector)?;
    let mut gamma = receiver_best(limited, &contract, &beliefs.beliefs[0])?;
    for (x, y) in lifted.values() {
        gamma[msg_of(*x, *y)] = *y;
    }
    Ok(Assessment {
        contracts: vec![contract],
        strategy,
        continuation: ContinuationProfile { gamma: vec![gamma] },
        beliefs,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaReport {
    pub alpha_steps: usize,
    pub gamma_alpha: Vec<FinalAllocation>,
    pub gamma_zero: Vec<FinalAllocation>,
    pub equal: bool,
    pub only_in_alpha: usize,
    pub only_in_zero: usize,
    pub collapse_failures: usize,
    pub lift_failures: usize,
    pub menus_alpha: usize,
    pub menus_zero: usize,
}

impl GammaReport {
    pub fn passed(&self) -> bool {
        self.equal && self.collapse_failures == 0 && self.lift_failures == 0
    }
}

/// Computes both sets by exhaustive search, compares them, and re-checks
/// every collapsed and lifted witness in its own game.
pub fn check_gamma_equal(spec: &GridSpec, alpha_steps: usize, opts: &SearchOptions) -> Result<GammaReport> {
    if spec.z_points > 16 || spec.types.len() > 6 {
        return Err(RevisableError::GridCap(format!(
            "{} grid points and {} types (caps 16 and 6)",
            spec.z_points,
            spec.types.len()
        )));
    }
    let full = spec.environment(0)?;
    let limited = spec.environment(alpha_steps)?;
    let ga = gamma_set(spec, alpha_steps, opts)?;
    let g0 = if alpha_steps == 0 {
        ga.clone()
    } else {
        gamma_set(spec, 0, opts)?
    };
    let (lo, step) = (spec.z_lo, spec.step());
    let ka: BTreeSet<_> = ga.allocations.iter().map(|f| f.key(lo, step)).collect();
    let k0: BTreeSet<_> = g0.allocations.iter().map(|f| f.key(lo, step)).collect();
    let tol = opts.tol;

    let mut collapse_failures = 0;
    for w in &ga.witnesses {
        let ok = collapse_to_full(&limited, &full, &w.assessment)
            .ok()
            .and_then(|c| check_continuation(&full, &c, tol).ok())
            .is_some_and(|r| {
                r.passed()
                    && final_allocation(&full, &r.allocation)
                        .is_ok_and(|f| f.key(lo, step) == final_allocation(&limited, &w.allocation).unwrap().key(lo, step))
            });
        if !ok {
            collapse_failures += 1;
        }
    }
    let mut lift_failures = 0;
    for w in &g0.witnesses {
        let ok = lift_to_limited(spec, alpha_steps, &full, &limited, &w.assessment)
            .ok()
            .and_then(|l| check_continuation(&limited, &l, tol).ok())
            .is_some_and(|r| {
                r.passed()
                    && final_allocation(&limited, &r.allocation)
                        .is_ok_and(|f| f.key(lo, step) == final_allocation(&full, &w.allocation).unwrap().key(lo, step))
            });
        if !ok {
            lift_failures += 1;
        }
    }
    Ok(GammaReport {
        alpha_steps,
        equal: ka == k0,
        only_in_alpha: ka.difference(&k0).count(),
        only_in_zero: k0.difference(&ka).count(),
        gamma_alpha: ga.allocations,
        gamma_zero: g0.allocations,
        collapse_failures,
        lift_failures,
        menus_alpha: ga.menus,
        menus_zero: g0.menus,
    })
}
