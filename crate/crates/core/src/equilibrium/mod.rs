//! Continuation equilibria on finite environments: assessments, Bayes
//! updating, exact checking, enumeration, robustness, canonicalization.

mod canon;
mod robust;
mod search;

pub use canon::canonicalize;
pub use robust::{check_robust, continuations_after, DeviationOutcome, RobustOptions, RobustReport};
pub use search::{enumerate_equilibria, Found, SearchOptions};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracts::{ContractError, Mechanism};
use crate::env::{Allocation, EnvError, Environment, Observability, Outcome};

pub const DEFAULT_TOL: f64 = 1e-9;
/// Default cap on the number of candidate agent strategies in a search.
pub const DEFAULT_CAP: u64 = 5_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EquilibriumError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error("malformed assessment: {0}")]
    Malformed(String),
    #[error("search space of {size} candidates exceeds the cap {cap}")]
    CapExceeded { size: u64, cap: u64 },
}

type Result<T> = std::result::Result<T, EquilibriumError>;

fn malformed<T>(msg: impl Into<String>) -> Result<T> {
    Err(EquilibriumError::Malformed(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentChoice {
    OptOut,
    /// One message index per principal.
    Send(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentStrategy {
    pub per_type: Vec<Vec<(AgentChoice, f64)>>,
}

impl AgentStrategy {
    pub fn pure(choices: Vec<AgentChoice>) -> Self {
        AgentStrategy {
            per_type: choices.into_iter().map(|c| vec![(c, 1.0)]).collect(),
        }
    }

    pub fn pure_profiles(profiles: &[Vec<usize>]) -> Self {
        AgentStrategy::pure(profiles.iter().map(|p| AgentChoice::Send(p.clone())).collect())
    }
}

/// Per principal, the discretionary action (index into Y_j) at each key:
/// the flat message profile in public mode, the own message in private mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContinuationProfile {
    pub gamma: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffPathPolicy {
    Prior,
    Lowest,
    Highest,
    CopyFromSelector,
}

impl OffPathPolicy {
    pub const ALL: [OffPathPolicy; 4] = [
        OffPathPolicy::Prior,
        OffPathPolicy::Lowest,
        OffPathPolicy::Highest,
        OffPathPolicy::CopyFromSelector,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BeliefSource {
    Policy(OffPathPolicy),
    Explicit,
}

/// Public: `beliefs[j][flat profile][type]`. Private:
/// `beliefs[j][own message][type * |M_-j| + flat others]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeliefSystem {
    pub mode: Observability,
    pub source: BeliefSource,
    pub beliefs: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assessment {
    pub contracts: Vec<Mechanism>,
    pub strategy: AgentStrategy,
    pub continuation: ContinuationProfile,
    pub beliefs: BeliefSystem,
}

impl Assessment {
    pub fn mode(&self) -> Observability {
        self.beliefs.mode
    }
}

/// A finite game: an environment with installed contracts and a payoff cache
/// indexed by type and feasible-pair profile.
pub struct Game<'a> {
    pub env: &'a Environment,
    pub contracts: &'a [Mechanism],
    pub n: usize,
    pub n_types: usize,
    pub prior: Vec<f64>,
    pub outside: Vec<Option<f64>>,
    /// Messages per principal.
    pub sizes: Vec<usize>,
    pub n_profiles: usize,
    /// Types ordered by value, then index.
    pub type_order: Vec<usize>,
    msg_x: Vec<Vec<usize>>,
    pair_of: Vec<Vec<Vec<usize>>>,
    z_strides: Vec<usize>,
    nz: usize,
    table: Vec<f64>,
}

const NO_PAIR: usize = usize::MAX;

impl<'a> Game<'a> {
    pub fn new(env: &'a Environment, contracts: &'a [Mechanism]) -> Result<Self> {
        let types = env.types.finite()?;
        let n = env.n_principals();
        if contracts.len() != n {
            return malformed(format!("{} contracts for {} principals", contracts.len(), n));
        }
        for (j, c) in contracts.iter().enumerate() {
            if c.principal != j {
                return malformed(format!("contract {j} belongs to principal {}", c.principal));
            }
            c.validate(env)?;
        }
        let n_types = types.len();
        let prior: Vec<f64> = types.iter().map(|t| t.weight).collect();
        let outside = types
            .iter()
            .map(|t| env.outside_value(t.value))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let sizes: Vec<usize> = contracts.iter().map(|c| c.len()).collect();
        let n_profiles = sizes.iter().product();
        let mut type_order: Vec<usize> = (0..n_types).collect();
        type_order.sort_by(|a, b| types[*a].value.total_cmp(&types[*b].value).then(a.cmp(b)));

        let mut pair_of = Vec::with_capacity(n);
        let mut zsizes = Vec::with_capacity(n);
        for p in &env.principals {
            let nx = p.xs().map(|x| x.len()).unwrap_or(0);
            let ny = p.ys().map(|y| y.len()).unwrap_or(0);
            let mut m = vec![vec![NO_PAIR; ny]; nx];
            let pairs = p.pairs();
            for (i, (x, y)) in pairs.iter().enumerate() {
                m[*x][*y] = i;
            }
            zsizes.push(pairs.len());
            pair_of.push(m);
        }
        let mut z_strides = vec![1; n];
        for j in (0..n.saturating_sub(1)).rev() {
            z_strides[j] = z_strides[j + 1] * zsizes[j + 1];
        }
        let nz: usize = zsizes.iter().product();
        let mut table = vec![0.0; n_types * nz * (n + 1)];
        for t in 0..n_types {
            for z in 0..nz {
                let profile = crate::env::unflatten(z, &zsizes);
                let p = env.payoffs_indexed(t, &profile)?;
                let base = (t * nz + z) * (n + 1);
                table[base] = p.agent;
                table[base + 1..base + 1 + n].copy_from_slice(&p.principals);
            }
        }
        Ok(Game {
            env,
            contracts,
            n,
            n_types,
            prior,
            outside,
            sizes,
            n_profiles,
            type_order,
            msg_x: contracts.iter().map(|c| c.messages.iter().map(|m| m.x).collect()).collect(),
            pair_of,
            z_strides,
            nz,
            table,
        })
    }

    pub fn exit_allowed(&self) -> bool {
        self.outside.iter().all(|u| u.is_some())
    }

    pub fn unflatten(&self, flat: usize) -> Vec<usize> {
        crate::env::unflatten(flat, &self.sizes)
    }

    pub fn flatten(&self, profile: &[usize]) -> usize {
        crate::env::flatten(profile, &self.sizes)
    }

    pub fn msg_x(&self, j: usize, m: usize) -> usize {
        self.msg_x[j][m]
    }

    /// Contractible profile of a message profile.
    pub fn xs_of(&self, profile: &[usize]) -> Vec<usize> {
        profile.iter().enumerate().map(|(j, m)| self.msg_x[j][*m]).collect()
    }

    pub fn feasible(&self, j: usize, x: usize) -> &[usize] {
        self.env.principals[j].feasible(x)
    }

    pub fn z_index(&self, xs: &[usize], ys: &[usize]) -> usize {
        let mut z = 0;
        for j in 0..self.n {
            let p = self.pair_of[j][xs[j]][ys[j]];
            debug_assert!(p != NO_PAIR, "infeasible pair");
            z += p * self.z_strides[j];
        }
        z
    }

    #[inline]
    pub fn u(&self, t: usize, z: usize) -> f64 {
        self.table[(t * self.nz + z) * (self.n + 1)]
    }

    #[inline]
    pub fn v(&self, t: usize, z: usize, j: usize) -> f64 {
        self.table[(t * self.nz + z) * (self.n + 1) + 1 + j]
    }

    pub fn outcome(&self, xs: &[usize], ys: &[usize]) -> Outcome {
        Outcome::Trade(xs.iter().copied().zip(ys.iter().copied()).collect())
    }

    /// Sizes of the others' message profile space for principal `j`.
    pub fn others_sizes(&self, j: usize) -> Vec<usize> {
        (0..self.n).filter(|k| *k != j).map(|k| self.sizes[k]).collect()
    }

    pub fn others_count(&self, j: usize) -> usize {
        self.others_sizes(j).iter().product()
    }

    /// Flat index of `m_{-j}` within the others' profile space.
    pub fn others_flat(&self, j: usize, profile: &[usize]) -> usize {
        let mut f = 0;
        for k in 0..self.n {
            if k != j {
                f = f * self.sizes[k] + profile[k];
            }
        }
        f
    }

    /// Full profile from the own message of `j` and a flat others index.
    pub fn join(&self, j: usize, mj: usize, others: usize) -> Vec<usize> {
        let os = crate::env::unflatten(others, &self.others_sizes(j));
        let mut out = Vec::with_capacity(self.n);
        let mut it = os.into_iter();
        for k in 0..self.n {
            out.push(if k == j { mj } else { it.next().expect("others arity") });
        }
        out
    }

    fn type_label(&self, t: usize) -> String {
        self.env.types.finite().map(|p| p[t].label.clone()).unwrap_or_default()
    }

    fn profile_label(&self, profile: &[usize]) -> String {
        let parts: Vec<&str> = profile
            .iter()
            .enumerate()
            .map(|(j, m)| self.contracts[j].messages[*m].label.as_str())
            .collect();
        format!("[{}]", parts.join(" "))
    }

    fn y_label(&self, j: usize, y: usize) -> String {
        self.env.principals[j].ys().map(|ys| ys[y].label.clone()).unwrap_or_default()
    }
}

/// Posterior over types proportional to `weights`, or `None` without mass.
fn normalize(weights: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = weights.iter().sum();
    (total > 0.0).then(|| weights.iter().map(|w| w / total).collect())
}

fn point_mass(n: usize, t: usize) -> Vec<f64> {
    let mut b = vec![0.0; n];
    b[t] = 1.0;
    b
}

/// The belief a q-independent policy assigns over types.
fn policy_types(game: &Game, policy: OffPathPolicy) -> Vec<f64> {
    match policy {
        OffPathPolicy::Lowest => point_mass(game.n_types, game.type_order[0]),
        OffPathPolicy::Highest => point_mass(game.n_types, *game.type_order.last().expect("types")),
        OffPathPolicy::Prior | OffPathPolicy::CopyFromSelector => game.prior.clone(),
    }
}

/// Per type, the probability of each flat profile; opt-out excluded.
fn profile_weights(game: &Game, strategy: &AgentStrategy) -> Result<Vec<Vec<(usize, f64)>>> {
    if strategy.per_type.len() != game.n_types {
        return malformed(format!(
            "strategy covers {} types, environment has {}",
            strategy.per_type.len(),
            game.n_types
        ));
    }
    let mut out = Vec::with_capacity(game.n_types);
    for (t, dist) in strategy.per_type.iter().enumerate() {
        let mass: f64 = dist.iter().map(|(_, p)| p).sum();
        if (mass - 1.0).abs() > 1e-12 || dist.iter().any(|(_, p)| *p < 0.0) {
            return malformed(format!("type {t}: strategy mass {mass}"));
        }
        let mut row = Vec::new();
        for (c, p) in dist {
            match c {
                AgentChoice::OptOut => {
                    if game.outside[t].is_none() {
                        return malformed(format!("type {t} exits but no outside option exists"));
                    }
                }
                AgentChoice::Send(profile) => {
                    if profile.len() != game.n || profile.iter().zip(&game.sizes).any(|(m, s)| m >= s) {
                        return malformed(format!("type {t}: invalid message profile {profile:?}"));
                    }
                    if *p > 0.0 {
                        row.push((game.flatten(profile), *p));
                    }
                }
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Public posteriors on path (`None` off path).
fn public_posteriors(game: &Game, weights: &[Vec<(usize, f64)>]) -> Vec<Option<Vec<f64>>> {
    let mut joint = vec![vec![0.0; game.n_types]; game.n_profiles];
    for (t, row) in weights.iter().enumerate() {
        for (f, p) in row {
            joint[*f][t] += game.prior[t] * p;
        }
    }
    joint.iter().map(|w| normalize(w)).collect()
}

/// Selector for copy-from-selector: on-path profile with the same
/// contractible profile whose pool contains the lowest such type.
fn public_selector(game: &Game, weights: &[Vec<(usize, f64)>], xs: &[usize]) -> Option<usize> {
    for &t in &game.type_order {
        if game.prior[t] <= 0.0 {
            continue;
        }
        let mut hits: Vec<usize> = weights[t]
            .iter()
            .filter(|(f, _)| game.xs_of(&game.unflatten(*f)) == xs)
            .map(|(f, _)| *f)
            .collect();
        hits.sort_unstable();
        if let Some(f) = hits.first() {
            return Some(*f);
        }
    }
    None
}

fn public_beliefs(game: &Game, weights: &[Vec<(usize, f64)>], policy: OffPathPolicy) -> Vec<Vec<f64>> {
    let post = public_posteriors(game, weights);
    let fallback = policy_types(game, policy);
    (0..game.n_profiles)
        .map(|f| match &post[f] {
            Some(b) => b.clone(),
            None => {
                if policy == OffPathPolicy::CopyFromSelector {
                    let xs = game.xs_of(&game.unflatten(f));
                    if let Some(sel) = public_selector(game, weights, &xs) {
                        return post[sel].clone().expect("selector is on path");
                    }
                }
                fallback.clone()
            }
        })
        .collect()
}

/// Private joint (type, others) weights received by each own message of `j`.
fn private_joint(game: &Game, weights: &[Vec<(usize, f64)>], j: usize) -> Vec<Vec<f64>> {
    let no = game.others_count(j);
    let mut joint = vec![vec![0.0; game.n_types * no]; game.sizes[j]];
    for (t, row) in weights.iter().enumerate() {
        for (f, p) in row {
            let profile = game.unflatten(*f);
            joint[profile[j]][t * no + game.others_flat(j, &profile)] += game.prior[t] * p;
        }
    }
    joint
}

fn private_offpath(game: &Game, weights: &[Vec<(usize, f64)>], j: usize, policy: OffPathPolicy) -> Vec<f64> {
    let no = game.others_count(j);
    let pi = policy_types(game, policy);
    // Conditional distribution of m_-j given type and trading.
    let mut cond = vec![vec![0.0; no]; game.n_types];
    let mut trades = vec![false; game.n_types];
    for (t, row) in weights.iter().enumerate() {
        let mass: f64 = row.iter().map(|(_, p)| p).sum();
        if mass > 0.0 {
            trades[t] = true;
            for (f, p) in row {
                let profile = game.unflatten(*f);
                cond[t][game.others_flat(j, &profile)] += p / mass;
            }
        }
    }
    let restricted: Vec<f64> = pi.iter().enumerate().map(|(t, w)| if trades[t] { *w } else { 0.0 }).collect();
    let mut out = vec![0.0; game.n_types * no];
    match normalize(&restricted) {
        Some(r) => {
            for t in 0..game.n_types {
                for o in 0..no {
                    out[t * no + o] = r[t] * cond[t][o];
                }
            }
        }
        None => {
            for t in 0..game.n_types {
                for o in 0..no {
                    out[t * no + o] = pi[t] / no as f64;
                }
            }
        }
    }
    out
}

fn private_beliefs(game: &Game, weights: &[Vec<(usize, f64)>], j: usize, policy: OffPathPolicy) -> Vec<Vec<f64>> {
    let joint = private_joint(game, weights, j);
    let post: Vec<Option<Vec<f64>>> = joint.iter().map(|w| normalize(w)).collect();
    let fallback = private_offpath(game, weights, j, policy);
    (0..game.sizes[j])
        .map(|m| match &post[m] {
            Some(b) => b.clone(),
            None => {
                if policy == OffPathPolicy::CopyFromSelector {
                    let x = game.msg_x(j, m);
                    for &t in &game.type_order {
                        let mut hits: Vec<usize> = weights[t]
                            .iter()
                            .map(|(f, _)| game.unflatten(*f)[j])
                            .filter(|mj| game.msg_x(j, *mj) == x)
                            .collect();
                        hits.sort_unstable();
                        if let Some(src) = hits.first() {
                            return post[*src].clone().expect("on path");
                        }
                    }
                }
                fallback.clone()
            }
        })
        .collect()
}

/// Bayes posteriors on path; off-path entries filled by `policy`. The mode
/// follows the environment's observability.
pub fn bayes_update(
    env: &Environment,
    contracts: &[Mechanism],
    strategy: &AgentStrategy,
    policy: OffPathPolicy,
) -> Result<BeliefSystem> {
    let game = Game::new(env, contracts)?;
    let weights = profile_weights(&game, strategy)?;
    let beliefs = match env.observability {
        Observability::Public => {
            let b = public_beliefs(&game, &weights, policy);
            vec![b; game.n]
        }
        Observability::Private => (0..game.n).map(|j| private_beliefs(&game, &weights, j, policy)).collect(),
    };
    Ok(BeliefSystem {
        mode: env.observability,
        source: BeliefSource::Policy(policy),
        beliefs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentViolation {
    pub ty: String,
    pub deviation: String,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrincipalViolation {
    pub principal: usize,
    pub key: String,
    pub played: String,
    pub better: String,
    pub gap: f64,
}

/// An on-path information set where several discretionary actions are optimal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tie {
    pub principal: usize,
    pub key: String,
    pub actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub bayes_ok: bool,
    pub bayes_max_discrepancy: f64,
    pub agent_ic_ok: bool,
    pub agent_worst: Option<AgentViolation>,
    pub principal_ic_ok: Vec<bool>,
    pub principal_worst: Vec<Option<PrincipalViolation>>,
    pub values: Vec<f64>,
    pub allocation: Allocation,
    pub ties: Vec<Tie>,
}

impl EquilibriumReport {
    pub fn passed(&self) -> bool {
        self.bayes_ok && self.agent_ic_ok && self.principal_ic_ok.iter().all(|b| *b)
    }
}

impl fmt::Display for EquilibriumReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "bayes {} (max {:.3e}), agent IC {}, principal IC {:?}, values {:?}",
            self.bayes_ok, self.bayes_max_discrepancy, self.agent_ic_ok, self.principal_ic_ok, self.values
        )
    }
}

/// Discretionary actions of all principals at a flat profile.
fn actions_at(game: &Game, a: &Assessment, f: usize, profile: &[usize]) -> Vec<usize> {
    match a.mode() {
        Observability::Public => (0..game.n).map(|j| a.continuation.gamma[j][f]).collect(),
        Observability::Private => (0..game.n).map(|j| a.continuation.gamma[j][profile[j]]).collect(),
    }
}

fn validate_shapes(game: &Game, a: &Assessment) -> Result<()> {
    let g = &a.continuation.gamma;
    if g.len() != game.n || a.beliefs.beliefs.len() != game.n {
        return malformed("continuation or beliefs do not cover every principal");
    }
    for j in 0..game.n {
        let (keys, blen) = match a.mode() {
            Observability::Public => (game.n_profiles, game.n_types),
            Observability::Private => (game.sizes[j], game.n_types * game.others_count(j)),
        };
        if g[j].len() != keys || a.beliefs.beliefs[j].len() != keys {
            return malformed(format!("principal {j}: expected {keys} information sets"));
        }
        for key in 0..keys {
            let mj = match a.mode() {
                Observability::Public => game.unflatten(key)[j],
                Observability::Private => key,
            };
            if !game.feasible(j, game.msg_x(j, mj)).contains(&g[j][key]) {
                return malformed(format!("principal {j}: continuation action infeasible at key {key}"));
            }
            let b = &a.beliefs.beliefs[j][key];
            if b.len() != blen || b.iter().any(|w| *w < 0.0) || (b.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return malformed(format!("principal {j}: belief at key {key} is not a distribution"));
            }
        }
    }
    Ok(())
}

/// Verifies Bayes consistency, agent optimality with participation, and
/// principal optimality at every information set.
pub fn check_continuation(env: &Environment, a: &Assessment, tol: f64) -> Result<EquilibriumReport> {
    let all: Vec<usize> = (0..env.n_principals()).collect();
    check_continuation_for(env, a, tol, &all)
}

/// As [`check_continuation`], restricting the Bayes and principal checks to
/// `principals`.
pub fn check_continuation_for(env: &Environment, a: &Assessment, tol: f64, principals: &[usize]) -> Result<EquilibriumReport> {
    if a.mode() != env.observability {
        return malformed("assessment mode differs from the environment's observability");
    }
    let game = Game::new(env, &a.contracts)?;
    validate_shapes(&game, a)?;
    let weights = profile_weights(&game, &a.strategy)?;

    // Bayes: joint mass of (type, information) against belief times marginal.
    let mut bayes = 0.0f64;
    for &j in principals {
        match a.mode() {
            Observability::Public => {
                let mut joint = vec![vec![0.0; game.n_types]; game.n_profiles];
                for (t, row) in weights.iter().enumerate() {
                    for (f, p) in row {
                        joint[*f][t] += game.prior[t] * p;
                    }
                }
                for (f, w) in joint.iter().enumerate() {
                    let mass: f64 = w.iter().sum();
                    if mass > 0.0 {
                        for t in 0..game.n_types {
                            bayes = bayes.max((a.beliefs.beliefs[j][f][t] * mass - w[t]).abs());
                        }
                    }
                }
            }
            Observability::Private => {
                let joint = private_joint(&game, &weights, j);
                for (m, w) in joint.iter().enumerate() {
                    let mass: f64 = w.iter().sum();
                    if mass > 0.0 {
                        for (k, wk) in w.iter().enumerate() {
                            bayes = bayes.max((a.beliefs.beliefs[j][m][k] * mass - wk).abs());
                        }
                    }
                }
            }
        }
    }

    // Agent optimality.
    let mut agent_worst: Option<AgentViolation> = None;
    let mut values = vec![0.0; game.n];
    let mut per_type = Vec::with_capacity(game.n_types);
    let mut u_at = vec![vec![0.0; game.n_profiles]; game.n_types];
    let mut z_at = vec![0usize; game.n_profiles];
    for (f, z) in z_at.iter_mut().enumerate() {
        let profile = game.unflatten(f);
        let ys = actions_at(&game, a, f, &profile);
        *z = game.z_index(&game.xs_of(&profile), &ys);
        for (t, row) in u_at.iter_mut().enumerate() {
            row[f] = game.u(t, *z);
        }
    }
    for t in 0..game.n_types {
        let mut best = game.outside[t].unwrap_or(f64::NEG_INFINITY);
        let mut best_label = "opt-out".to_string();
        for f in 0..game.n_profiles {
            if u_at[t][f] > best {
                best = u_at[t][f];
                best_label = game.profile_label(&game.unflatten(f));
            }
        }
        let mut dist = Vec::new();
        for (c, p) in &a.strategy.per_type[t] {
            if *p <= 0.0 {
                continue;
            }
            let val = match c {
                AgentChoice::OptOut => {
                    dist.push((Outcome::OptOut, *p));
                    game.outside[t].expect("validated")
                }
                AgentChoice::Send(profile) => {
                    let f = game.flatten(profile);
                    let z = z_at[f];
                    let ys = actions_at(&game, a, f, profile);
                    dist.push((game.outcome(&game.xs_of(profile), &ys), *p));
                    for (j, v) in values.iter_mut().enumerate() {
                        *v += game.prior[t] * p * game.v(t, z, j);
                    }
                    u_at[t][f]
                }
            };
            let gap = best - val;
            if gap > agent_worst.as_ref().map_or(f64::NEG_INFINITY, |w| w.gap) {
                agent_worst = Some(AgentViolation {
                    ty: game.type_label(t),
                    deviation: best_label.clone(),
                    gap,
                });
            }
        }
        per_type.push(dist);
    }
    let allocation = Allocation { per_type }.normalized();

    // Principal optimality at every information set.
    let mut principal_worst: Vec<Option<PrincipalViolation>> = vec![None; game.n];
    let mut ties = Vec::new();
    let joint_public = public_posteriors(&game, &weights);
    for &j in principals {
        let keys = match a.mode() {
            Observability::Public => game.n_profiles,
            Observability::Private => game.sizes[j],
        };
        let private_on: Vec<bool> = match a.mode() {
            Observability::Private => private_joint(&game, &weights, j)
                .iter()
                .map(|w| w.iter().sum::<f64>() > 0.0)
                .collect(),
            Observability::Public => Vec::new(),
        };
        for key in 0..keys {
            let belief = &a.beliefs.beliefs[j][key];
            let mj = match a.mode() {
                Observability::Public => game.unflatten(key)[j],
                Observability::Private => key,
            };
            let played = a.continuation.gamma[j][key];
            let value_of = |y: usize| -> f64 {
                match a.mode() {
                    Observability::Public => {
                        let profile = game.unflatten(key);
                        let mut ys = actions_at(&game, a, key, &profile);
                        ys[j] = y;
                        let z = game.z_index(&game.xs_of(&profile), &ys);
                        (0..game.n_types).map(|t| belief[t] * game.v(t, z, j)).sum()
                    }
                    Observability::Private => {
                        let no = game.others_count(j);
                        let mut total = 0.0;
                        for t in 0..game.n_types {
                            for o in 0..no {
                                let w = belief[t * no + o];
                                if w == 0.0 {
                                    continue;
                                }
                                let profile = game.join(j, mj, o);
                                let f = game.flatten(&profile);
                                let mut ys = actions_at(&game, a, f, &profile);
                                ys[j] = y;
                                let z = game.z_index(&game.xs_of(&profile), &ys);
                                total += w * game.v(t, z, j);
                            }
                        }
                        total
                    }
                }
            };
            let current = value_of(played);
            let mut optimal = Vec::new();
            for &y in game.feasible(j, game.msg_x(j, mj)) {
                let alt = if y == played { current } else { value_of(y) };
                let gap = alt - current;
                if gap >= -tol {
                    optimal.push(y);
                }
                if y != played && gap > principal_worst[j].as_ref().map_or(f64::NEG_INFINITY, |w| w.gap) {
                    principal_worst[j] = Some(PrincipalViolation {
                        principal: j,
                        key: match a.mode() {
                            Observability::Public => game.profile_label(&game.unflatten(key)),
                            Observability::Private => game.contracts[j].messages[key].label.clone(),
                        },
                        played: game.y_label(j, played),
                        better: game.y_label(j, y),
                        gap,
                    });
                }
            }
            let on_path = match a.mode() {
                Observability::Public => joint_public[key].is_some(),
                Observability::Private => private_on[key],
            };
            if on_path && optimal.len() > 1 {
                ties.push(Tie {
                    principal: j,
                    key: match a.mode() {
                        Observability::Public => game.profile_label(&game.unflatten(key)),
                        Observability::Private => game.contracts[j].messages[key].label.clone(),
                    },
                    actions: optimal.iter().map(|y| game.y_label(j, *y)).collect(),
                });
            }
        }
    }
    let principal_ic_ok = (0..game.n)
        .map(|j| principal_worst[j].as_ref().map_or(true, |w| w.gap <= tol))
        .collect();
    Ok(EquilibriumReport {
        bayes_ok: bayes <= tol,
        bayes_max_discrepancy: bayes,
        agent_ic_ok: agent_worst.as_ref().map_or(true, |w| w.gap <= tol),
        agent_worst,
        principal_ic_ok,
        principal_worst,
        values,
        allocation,
        ties,
    })
}

/// Pushforward of the agent strategy through contracts and continuation.
pub fn induced_allocation(env: &Environment, a: &Assessment) -> Result<Allocation> {
    let game = Game::new(env, &a.contracts)?;
    validate_shapes(&game, a)?;
    profile_weights(&game, &a.strategy)?;
    let mut per_type = Vec::with_capacity(game.n_types);
    for dist in &a.strategy.per_type {
        let mut row = Vec::new();
        for (c, p) in dist {
            match c {
                AgentChoice::OptOut => row.push((Outcome::OptOut, *p)),
                AgentChoice::Send(profile) => {
                    let ys = actions_at(&game, a, game.flatten(profile), profile);
                    row.push((game.outcome(&game.xs_of(profile), &ys), *p));
                }
            }
        }
        per_type.push(row);
    }
    Ok(Allocation { per_type }.normalized())
}

/// Ex ante payoff of principal `j`; exit gives every principal zero.
pub fn principal_value(env: &Environment, a: &Assessment, j: usize) -> Result<f64> {
    let game = Game::new(env, &a.contracts)?;
    if j >= game.n {
        return Err(EnvError::Principal(j).into());
    }
    validate_shapes(&game, a)?;
    profile_weights(&game, &a.strategy)?;
    let mut total = 0.0;
    for (t, dist) in a.strategy.per_type.iter().enumerate() {
        for (c, p) in dist {
            if let AgentChoice::Send(profile) = c {
                let f = game.flatten(profile);
                let z = game.z_index(&game.xs_of(profile), &actions_at(&game, a, f, profile));
                total += game.prior[t] * p * game.v(t, z, j);
            }
        }
    }
    Ok(total)
}

/// Value of an allocation to principal `j` under the prior.
pub fn allocation_value(env: &Environment, alloc: &Allocation, j: usize) -> Result<f64> {
    let types = env.types.finite()?;
    let zs: Vec<Vec<(usize, usize)>> = env.principals.iter().map(|p| p.pairs()).collect();
    let mut total = 0.0;
    for (t, dist) in alloc.per_type.iter().enumerate() {
        for (o, p) in dist {
            if let Outcome::Trade(pairs) = o {
                let idx: Vec<usize> = pairs
                    .iter()
                    .enumerate()
                    .map(|(k, pr)| zs[k].iter().position(|z| z == pr).expect("feasible pair"))
                    .collect();
                total += types[t].weight * p * env.payoffs_indexed(t, &idx)?.principals[j];
            }
        }
    }
    Ok(total)
}

/// Per-type conditional payoff of principal `j` under an allocation.
pub fn allocation_state_values(env: &Environment, alloc: &Allocation, j: usize) -> Result<Vec<f64>> {
    let zs: Vec<Vec<(usize, usize)>> = env.principals.iter().map(|p| p.pairs()).collect();
    alloc
        .per_type
        .iter()
        .enumerate()
        .map(|(t, dist)| {
            let mut total = 0.0;
            for (o, p) in dist {
                if let Outcome::Trade(pairs) = o {
                    let idx: Vec<usize> = pairs
                        .iter()
                        .enumerate()
                        .map(|(k, pr)| zs[k].iter().position(|z| z == pr).expect("feasible pair"))
                        .collect();
                    total += p * env.payoffs_indexed(t, &idx)?.principals[j];
                }
            }
            Ok(total)
        })
        .collect()
}

/// Assessment with continuation actions equal to the messages'
/// recommendations and beliefs from `policy`. Needs recommendation-carrying
/// messages.
pub fn truthful_assessment(
    env: &Environment,
    contracts: Vec<Mechanism>,
    strategy: AgentStrategy,
    policy: OffPathPolicy,
) -> Result<Assessment> {
    let game = Game::new(env, &contracts)?;
    let mut gamma = Vec::with_capacity(game.n);
    for (j, c) in contracts.iter().enumerate() {
        let rec = |m: usize| {
            c.messages[m]
                .rec
                .ok_or_else(|| EquilibriumError::Malformed(format!("message {m} of principal {j} has no recommendation")))
        };
        let row = match env.observability {
            Observability::Public => (0..game.n_profiles)
                .map(|f| rec(game.unflatten(f)[j]))
                .collect::<Result<Vec<_>>>()?,
            Observability::Private => (0..c.len()).map(rec).collect::<Result<Vec<_>>>()?,
        };
        gamma.push(row);
    }
    let beliefs = bayes_update(env, &contracts, &strategy, policy)?;
    Ok(Assessment {
        contracts,
        strategy,
        continuation: ContinuationProfile { gamma },
        beliefs,
    })
}

/// Reference assessment of a necessity instance (truthful recommendations,
/// prior off path).
pub fn necessity_reference(inst: &crate::contracts::NecessityInstance) -> Result<Assessment> {
    truthful_assessment(
        &inst.env,
        inst.contracts.clone(),
        AgentStrategy::pure_profiles(&inst.messages),
        OffPathPolicy::Prior,
    )
}

/// Separating assessment of the plain-menu scenario.
pub fn plain_menu_reference(s: &crate::contracts::PlainMenuScenario) -> Result<Assessment> {
    truthful_assessment(
        &s.env,
        s.contracts.clone(),
        AgentStrategy::pure_profiles(&s.messages),
        OffPathPolicy::Prior,
    )
}

#[cfg(test)]
mod tests;
