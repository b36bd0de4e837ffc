use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::Serialize;

use super::{
    private_beliefs, public_beliefs, AgentChoice, AgentStrategy, Assessment, BeliefSource, BeliefSystem,
    ContinuationProfile, EquilibriumError, Game, OffPathPolicy, Result, DEFAULT_CAP, DEFAULT_TOL,
};
use crate::contracts::Mechanism;
use crate::env::{Allocation, Environment, Observability, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOptions {
    /// Off-path belief policies tried in order.
    pub policies: Vec<OffPathPolicy>,
    /// Also search two-point mixtures on a 1/8 probability grid.
    pub mixtures: bool,
    /// Enumerate one labeling per class of interchangeable messages.
    pub symmetry: bool,
    /// Keep only strategies whose on-path actions cover every contract image.
    pub image_exact: bool,
    pub cap: u64,
    pub tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            policies: vec![OffPathPolicy::Prior],
            mixtures: false,
            symmetry: true,
            image_exact: false,
            cap: DEFAULT_CAP,
            tol: DEFAULT_TOL,
        }
    }
}

impl SearchOptions {
    pub fn all_policies() -> Self {
        SearchOptions {
            policies: OffPathPolicy::ALL.to_vec(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Found {
    pub assessment: Assessment,
    pub allocation: Allocation,
    pub values: Vec<f64>,
    pub policy: OffPathPolicy,
}

type AllocKey = Vec<Vec<(Outcome, u64)>>;

fn alloc_key(a: &Allocation) -> AllocKey {
    a.per_type
        .iter()
        .map(|d| d.iter().map(|(o, p)| (o.clone(), p.to_bits())).collect())
        .collect()
}

/// One agent choice for one type: a distribution over exit (`None`) and
/// flat message profiles.
type Choice = Vec<(Option<usize>, f64)>;

struct Candidates {
    choices: Vec<Choice>,
    /// Flattened choice indices, `n_types` per candidate.
    flat: Vec<u32>,
    n_types: usize,
}

impl Candidates {
    fn len(&self) -> usize {
        if self.n_types == 0 {
            0
        } else {
            self.flat.len() / self.n_types
        }
    }

    fn get(&self, i: usize) -> &[u32] {
        &self.flat[i * self.n_types..(i + 1) * self.n_types]
    }
}

fn pure_choices(game: &Game) -> Vec<Choice> {
    let mut c = vec![vec![(None, 1.0)]];
    c.extend((0..game.n_profiles).map(|f| vec![(Some(f), 1.0)]));
    c
}

/// Recursive generator of pure strategies in canonical labeling.
struct PureGen<'g, 'a> {
    game: &'g Game<'a>,
    sym: Vec<bool>,
    image_exact: bool,
    rank: Vec<Vec<usize>>,
    images: Vec<Vec<usize>>,
    used: Vec<Vec<usize>>,
    covered: Vec<Vec<usize>>,
    current: Vec<u32>,
    out: Vec<u32>,
    cap: u64,
    count: u64,
}

impl PureGen<'_, '_> {
    fn missing(&self) -> usize {
        (0..self.game.n)
            .map(|j| self.images[j].iter().filter(|x| self.covered[j][**x] == 0).count())
            .max()
            .unwrap_or(0)
    }

    fn run(&mut self, t: usize) -> Result<()> {
        let game = self.game;
        if self.image_exact && game.n_types - t < self.missing() {
            return Ok(());
        }
        if t == game.n_types {
            self.count += 1;
            if self.count > self.cap {
                return Err(EquilibriumError::CapExceeded {
                    size: self.count,
                    cap: self.cap,
                });
            }
            self.out.extend_from_slice(&self.current);
            return Ok(());
        }
        if game.outside[t].is_some() {
            self.current[t] = 0;
            self.run(t + 1)?;
        }
        let mut profile = vec![0usize; game.n];
        self.profiles(t, 0, &mut profile)
    }

    fn profiles(&mut self, t: usize, j: usize, profile: &mut Vec<usize>) -> Result<()> {
        let game = self.game;
        if j == game.n {
            self.current[t] = 1 + game.flatten(profile) as u32;
            return self.run(t + 1);
        }
        for m in 0..game.sizes[j] {
            let x = game.msg_x(j, m);
            let r = self.rank[j][m];
            if self.sym[j] && r > self.used[j][x] {
                continue;
            }
            let fresh = r == self.used[j][x];
            if fresh {
                self.used[j][x] += 1;
            }
            self.covered[j][x] += 1;
            profile[j] = m;
            let res = self.profiles(t, j + 1, profile);
            self.covered[j][x] -= 1;
            if fresh {
                self.used[j][x] -= 1;
            }
            res?;
        }
        Ok(())
    }
}

fn generate(game: &Game, sym: &[bool], opts: &SearchOptions) -> Result<Candidates> {
    let images: Vec<Vec<usize>> = game.contracts.iter().map(|c| c.image().into_iter().collect()).collect();
    if !opts.mixtures {
        let nx: Vec<usize> = game.env.principals.iter().map(|p| p.xs().map_or(0, |x| x.len())).collect();
        let mut rank = Vec::with_capacity(game.n);
        for c in game.contracts {
            let mut seen: HashMap<usize, usize> = HashMap::new();
            rank.push(
                c.messages
                    .iter()
                    .map(|m| {
                        let e = seen.entry(m.x).or_insert(0);
                        *e += 1;
                        *e - 1
                    })
                    .collect(),
            );
        }
        let mut gen = PureGen {
            game,
            sym: sym.to_vec(),
            image_exact: opts.image_exact,
            rank,
            images,
            used: nx.iter().map(|n| vec![0; *n]).collect(),
            covered: nx.iter().map(|n| vec![0; *n]).collect(),
            current: vec![0; game.n_types],
            out: Vec::new(),
            cap: opts.cap,
            count: 0,
        };
        gen.run(0)?;
        return Ok(Candidates {
            choices: pure_choices(game),
            flat: gen.out,
            n_types: game.n_types,
        });
    }

    // Two-point mixtures on the 1/8 grid, without symmetry reduction.
    let mut choices = pure_choices(game);
    let atoms: Vec<Option<usize>> = std::iter::once(None).chain((0..game.n_profiles).map(Some)).collect();
    for a in 0..atoms.len() {
        for b in a + 1..atoms.len() {
            for k in 1..8 {
                let w = k as f64 / 8.0;
                choices.push(vec![(atoms[a], w), (atoms[b], 1.0 - w)]);
            }
        }
    }
    let allowed: Vec<Vec<u32>> = (0..game.n_types)
        .map(|t| {
            (0..choices.len() as u32)
                .filter(|c| game.outside[t].is_some() || choices[*c as usize].iter().all(|(a, _)| a.is_some()))
                .collect()
        })
        .collect();
    let size = allowed.iter().fold(1u64, |acc, a| acc.saturating_mul(a.len() as u64));
    if size > opts.cap {
        return Err(EquilibriumError::CapExceeded { size, cap: opts.cap });
    }
    let mut flat = Vec::new();
    let mut idx = vec![0usize; game.n_types];
    if game.n_types > 0 && allowed.iter().all(|a| !a.is_empty()) {
        loop {
            let cand: Vec<u32> = (0..game.n_types).map(|t| allowed[t][idx[t]]).collect();
            if !opts.image_exact || covers(game, &choices, &cand, &images) {
                flat.extend_from_slice(&cand);
            }
            if !odometer(&mut idx, &allowed.iter().map(|a| a.len()).collect::<Vec<_>>()) {
                break;
            }
        }
    }
    Ok(Candidates {
        choices,
        flat,
        n_types: game.n_types,
    })
}

fn covers(game: &Game, choices: &[Choice], cand: &[u32], images: &[Vec<usize>]) -> bool {
    let mut hit: Vec<HashSet<usize>> = vec![HashSet::new(); game.n];
    for c in cand {
        for (a, p) in &choices[*c as usize] {
            if let (Some(f), true) = (a, *p > 0.0) {
                for (j, m) in game.unflatten(*f).iter().enumerate() {
                    hit[j].insert(game.msg_x(j, *m));
                }
            }
        }
    }
    (0..game.n).all(|j| images[j].iter().all(|x| hit[j].contains(x)))
}

/// Advances a mixed-radix counter; returns false after the last state.
fn odometer(idx: &mut [usize], sizes: &[usize]) -> bool {
    for i in (0..idx.len()).rev() {
        idx[i] += 1;
        if idx[i] < sizes[i] {
            return true;
        }
        idx[i] = 0;
    }
    false
}

/// All pure Nash equilibria of the principals' stage game at contractible
/// profile `xs` under a common belief over types, ties included.
pub(crate) fn stage_equilibria(game: &Game, xs: &[usize], belief: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let feas: Vec<&[usize]> = (0..game.n).map(|j| game.feasible(j, xs[j])).collect();
    let sizes: Vec<usize> = feas.iter().map(|f| f.len()).collect();
    let payoff = |ys: &[usize], j: usize| -> f64 {
        let z = game.z_index(xs, ys);
        (0..game.n_types).map(|t| belief[t] * game.v(t, z, j)).sum()
    };
    let mut out = Vec::new();
    let mut idx = vec![0usize; game.n];
    loop {
        let ys: Vec<usize> = (0..game.n).map(|j| feas[j][idx[j]]).collect();
        let mut ok = true;
        'players: for j in 0..game.n {
            let cur = payoff(&ys, j);
            let mut alt = ys.clone();
            for &y in feas[j] {
                if y == ys[j] {
                    continue;
                }
                alt[j] = y;
                if payoff(&alt, j) > cur + tol {
                    ok = false;
                    break 'players;
                }
            }
        }
        if ok {
            out.push(ys);
        }
        if !odometer(&mut idx, &sizes) {
            break;
        }
    }
    out
}

fn x_flat(game: &Game, xs: &[usize]) -> usize {
    let mut f = 0;
    for (j, x) in xs.iter().enumerate() {
        f = f * game.env.principals[j].xs().map_or(1, |v| v.len()) + x;
    }
    f
}

struct Weights {
    rows: Vec<Vec<(usize, f64)>>,
    exit: Vec<f64>,
}

fn weights_of(game: &Game, cands: &Candidates, cand: &[u32]) -> Weights {
    let mut rows = Vec::with_capacity(game.n_types);
    let mut exit = Vec::with_capacity(game.n_types);
    for c in cand {
        let mut row = Vec::new();
        let mut e = 0.0;
        for (a, p) in &cands.choices[*c as usize] {
            match a {
                Some(f) => row.push((*f, *p)),
                None => e += p,
            }
        }
        rows.push(row);
        exit.push(e);
    }
    Weights { rows, exit }
}

fn strategy_of(game: &Game, w: &Weights) -> AgentStrategy {
    AgentStrategy {
        per_type: (0..game.n_types)
            .map(|t| {
                let mut d: Vec<(AgentChoice, f64)> = Vec::new();
                if w.exit[t] > 0.0 {
                    d.push((AgentChoice::OptOut, w.exit[t]));
                }
                d.extend(w.rows[t].iter().map(|(f, p)| (AgentChoice::Send(game.unflatten(*f)), *p)));
                d
            })
            .collect(),
    }
}

fn allocation_of(game: &Game, w: &Weights, outcome_of: impl Fn(usize) -> Outcome) -> Allocation {
    Allocation {
        per_type: (0..game.n_types)
            .map(|t| {
                let mut d = Vec::new();
                if w.exit[t] > 0.0 {
                    d.push((Outcome::OptOut, w.exit[t]));
                }
                d.extend(w.rows[t].iter().map(|(f, p)| (outcome_of(*f), *p)));
                d
            })
            .collect(),
    }
    .normalized()
}

/// Stage equilibria per contractible profile for q-independent policies.
struct PublicCtx {
    /// For each policy (index into opts.policies): x-flat -> equilibria.
    fixed: Vec<Option<HashMap<usize, Vec<Vec<usize>>>>>,
    profile_xs: Vec<Vec<usize>>,
    profile_xflat: Vec<usize>,
}

fn public_ctx(game: &Game, opts: &SearchOptions) -> PublicCtx {
    let profile_xs: Vec<Vec<usize>> = (0..game.n_profiles).map(|f| game.xs_of(&game.unflatten(f))).collect();
    let profile_xflat: Vec<usize> = profile_xs.iter().map(|xs| x_flat(game, xs)).collect();
    let fixed = opts
        .policies
        .iter()
        .map(|p| {
            (*p != OffPathPolicy::CopyFromSelector).then(|| {
                let belief = super::policy_types(game, *p);
                let mut m = HashMap::new();
                for (f, xf) in profile_xflat.iter().enumerate() {
                    m.entry(*xf)
                        .or_insert_with(|| stage_equilibria(game, &profile_xs[f], &belief, opts.tol));
                }
                m
            })
        })
        .collect();
    PublicCtx {
        fixed,
        profile_xs,
        profile_xflat,
    }
}

fn prior_ne<'c>(game: &Game, ctx: &'c PublicCtx, opts: &SearchOptions, xf: usize, xs: &[usize], scratch: &'c mut Option<Vec<Vec<usize>>>) -> &'c [Vec<usize>] {
    // The copy policy falls back to the prior when nothing is selected.
    if let Some(i) = opts.policies.iter().position(|p| *p == OffPathPolicy::Prior) {
        if let Some(m) = &ctx.fixed[i] {
            return &m[&xf];
        }
    }
    *scratch = Some(stage_equilibria(game, xs, &game.prior, opts.tol));
    scratch.as_deref().expect("just set")
}

fn eval_public(game: &Game, cands: &Candidates, i: usize, ctx: &PublicCtx, opts: &SearchOptions, seen: &mut HashSet<AllocKey>, out: &mut Vec<Found>) {
    let tol = opts.tol;
    let w = weights_of(game, cands, cands.get(i));
    let mut joint: HashMap<usize, Vec<f64>> = HashMap::new();
    for (t, row) in w.rows.iter().enumerate() {
        for (f, p) in row {
            joint.entry(*f).or_insert_with(|| vec![0.0; game.n_types])[t] += game.prior[t] * p;
        }
    }
    let mut on: Vec<usize> = joint.keys().copied().collect();
    on.sort_unstable();
    let mut posts = Vec::with_capacity(on.len());
    let mut ne_lists = Vec::with_capacity(on.len());
    for f in &on {
        let post = match super::normalize(&joint[f]) {
            Some(p) => p,
            None => return,
        };
        let ne = stage_equilibria(game, &ctx.profile_xs[*f], &post, tol);
        if ne.is_empty() {
            return;
        }
        posts.push(post);
        ne_lists.push(ne);
    }
    let on_pos: HashMap<usize, usize> = on.iter().enumerate().map(|(k, f)| (*f, k)).collect();

    // Copy-from-selector: the on-path profile selected for each x-profile.
    let mut selector: HashMap<usize, usize> = HashMap::new();
    if opts.policies.contains(&OffPathPolicy::CopyFromSelector) {
        for &t in &game.type_order {
            if game.prior[t] <= 0.0 {
                continue;
            }
            let mut fs: Vec<usize> = w.rows[t].iter().map(|(f, _)| *f).collect();
            fs.sort_unstable();
            for f in fs {
                selector.entry(ctx.profile_xflat[f]).or_insert(on_pos[&f]);
            }
        }
    }
    let mut off_xf: Vec<usize> = (0..game.n_profiles)
        .filter(|f| !on_pos.contains_key(f))
        .map(|f| ctx.profile_xflat[f])
        .collect();
    off_xf.sort_unstable();
    off_xf.dedup();
    let xs_of_xf: HashMap<usize, usize> = (0..game.n_profiles).rev().map(|f| (ctx.profile_xflat[f], f)).collect();

    let sizes: Vec<usize> = ne_lists.iter().map(|l| l.len()).collect();
    let mut idx = vec![0usize; on.len()];
    loop {
        let zs: Vec<usize> = (0..on.len())
            .map(|k| game.z_index(&ctx.profile_xs[on[k]], &ne_lists[k][idx[k]]))
            .collect();
        let alloc = allocation_of(game, &w, |f| {
            let k = on_pos[&f];
            game.outcome(&ctx.profile_xs[f], &ne_lists[k][idx[k]])
        });
        let key = alloc_key(&alloc);
        if !seen.contains(&key) {
            if let Some(found) = try_combo(game, &w, &on, &on_pos, &zs, &posts, &ne_lists, &idx, &selector, &off_xf, &xs_of_xf, ctx, opts, alloc) {
                seen.insert(key);
                out.push(found);
            }
        }
        if !odometer(&mut idx, &sizes) {
            break;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn try_combo(
    game: &Game,
    w: &Weights,
    on: &[usize],
    on_pos: &HashMap<usize, usize>,
    zs: &[usize],
    posts: &[Vec<f64>],
    ne_lists: &[Vec<Vec<usize>>],
    idx: &[usize],
    selector: &HashMap<usize, usize>,
    off_xf: &[usize],
    xs_of_xf: &HashMap<usize, usize>,
    ctx: &PublicCtx,
    opts: &SearchOptions,
    alloc: Allocation,
) -> Option<Found> {
    let tol = opts.tol;
    // Worst supported payoff per type, and best on-path alternative.
    let mut floor = vec![f64::INFINITY; game.n_types];
    for t in 0..game.n_types {
        if w.exit[t] > 0.0 {
            floor[t] = floor[t].min(game.outside[t].expect("exit allowed"));
        }
        for (f, _) in &w.rows[t] {
            floor[t] = floor[t].min(game.u(t, zs[on_pos[f]]));
        }
        let mut best = game.outside[t].unwrap_or(f64::NEG_INFINITY);
        for z in zs {
            best = best.max(game.u(t, *z));
        }
        if best > floor[t] + tol {
            return None;
        }
    }
    let harmless = |xs: &[usize], ys: &[usize]| {
        let z = game.z_index(xs, ys);
        (0..game.n_types).all(|t| game.u(t, z) <= floor[t] + tol)
    };
    'policies: for (pi, policy) in opts.policies.iter().enumerate() {
        let mut chosen: HashMap<usize, Vec<usize>> = HashMap::new();
        for xf in off_xf {
            let xs = &ctx.profile_xs[xs_of_xf[xf]];
            let mut scratch = None;
            let list: &[Vec<usize>] = match &ctx.fixed[pi] {
                Some(m) => &m[xf],
                None => match selector.get(xf) {
                    Some(k) => &ne_lists[*k],
                    None => prior_ne(game, ctx, opts, *xf, xs, &mut scratch),
                },
            };
            match list.iter().find(|ys| harmless(xs, ys)) {
                Some(ys) => {
                    chosen.insert(*xf, ys.clone());
                }
                None => continue 'policies,
            }
        }
        // Build the assessment.
        let mut gamma = vec![vec![0usize; game.n_profiles]; game.n];
        for f in 0..game.n_profiles {
            let ys = match on_pos.get(&f) {
                Some(k) => &ne_lists[*k][idx[*k]],
                None => &chosen[&ctx.profile_xflat[f]],
            };
            for j in 0..game.n {
                gamma[j][f] = ys[j];
            }
        }
        let beliefs = public_beliefs(game, &w.rows, *policy);
        debug_assert!(on.iter().enumerate().all(|(k, f)| beliefs[*f] == posts[k]));
        let mut values = vec![0.0; game.n];
        for t in 0..game.n_types {
            for (f, p) in &w.rows[t] {
                for (j, v) in values.iter_mut().enumerate() {
                    *v += game.prior[t] * p * game.v(t, zs[on_pos[f]], j);
                }
            }
        }
        return Some(Found {
            assessment: Assessment {
                contracts: game.contracts.to_vec(),
                strategy: strategy_of(game, w),
                continuation: ContinuationProfile { gamma },
                beliefs: BeliefSystem {
                    mode: Observability::Public,
                    source: BeliefSource::Policy(*policy),
                    beliefs: vec![beliefs; game.n],
                },
            },
            allocation: alloc,
            values,
            policy: *policy,
        });
    }
    None
}

/// Private-mode search. Principals in `scope` choose continuation actions
/// and are checked; the rest keep `frozen` continuation and beliefs.
struct PrivateCtx {
    scope: Vec<usize>,
    frozen_gamma: Vec<Option<Vec<usize>>>,
    frozen_beliefs: Vec<Option<Vec<Vec<f64>>>>,
    /// Per scoped (principal, message), the feasible actions.
    slots: Vec<(usize, usize, Vec<usize>)>,
}

fn eval_private(game: &Game, cands: &Candidates, i: usize, ctx: &PrivateCtx, opts: &SearchOptions, seen: &mut HashSet<AllocKey>, out: &mut Vec<Found>) {
    let tol = opts.tol;
    let w = weights_of(game, cands, cands.get(i));
    // Beliefs per policy for scoped principals (independent of continuation).
    let beliefs: Vec<Vec<Vec<Vec<f64>>>> = opts
        .policies
        .iter()
        .map(|p| {
            (0..game.n)
                .map(|j| {
                    if ctx.scope.contains(&j) {
                        private_beliefs(game, &w.rows, j, *p)
                    } else {
                        Vec::new()
                    }
                })
                .collect()
        })
        .collect();
    let sizes: Vec<usize> = ctx.slots.iter().map(|s| s.2.len()).collect();
    let mut idx = vec![0usize; ctx.slots.len()];
    let mut gamma: Vec<Vec<usize>> = (0..game.n)
        .map(|j| ctx.frozen_gamma[j].clone().unwrap_or_else(|| vec![0; game.sizes[j]]))
        .collect();
    loop {
        for (k, (j, m, ys)) in ctx.slots.iter().enumerate() {
            gamma[*j][*m] = ys[idx[k]];
        }
        let z_of = |f: usize| {
            let profile = game.unflatten(f);
            let ys: Vec<usize> = (0..game.n).map(|j| gamma[j][profile[j]]).collect();
            game.z_index(&game.xs_of(&profile), &ys)
        };
        let zs: Vec<usize> = (0..game.n_profiles).map(z_of).collect();
        let agent_ok = (0..game.n_types).all(|t| {
            let mut best = game.outside[t].unwrap_or(f64::NEG_INFINITY);
            for z in &zs {
                best = best.max(game.u(t, *z));
            }
            let mut floor = f64::INFINITY;
            if w.exit[t] > 0.0 {
                floor = floor.min(game.outside[t].expect("exit allowed"));
            }
            for (f, _) in &w.rows[t] {
                floor = floor.min(game.u(t, zs[*f]));
            }
            best <= floor + tol
        });
        if agent_ok {
            let alloc = allocation_of(game, &w, |f| {
                let profile = game.unflatten(f);
                let ys: Vec<usize> = (0..game.n).map(|j| gamma[j][profile[j]]).collect();
                game.outcome(&game.xs_of(&profile), &ys)
            });
            let key = alloc_key(&alloc);
            if !seen.contains(&key) {
                for (pi, policy) in opts.policies.iter().enumerate() {
                    if ctx.scope.iter().all(|j| private_ic(game, &gamma, *j, &beliefs[pi][*j], tol)) {
                        let mut values = vec![0.0; game.n];
                        for t in 0..game.n_types {
                            for (f, p) in &w.rows[t] {
                                for (j, v) in values.iter_mut().enumerate() {
                                    *v += game.prior[t] * p * game.v(t, zs[*f], j);
                                }
                            }
                        }
                        let bs: Vec<Vec<Vec<f64>>> = (0..game.n)
                            .map(|j| match &ctx.frozen_beliefs[j] {
                                Some(b) if !ctx.scope.contains(&j) => b.clone(),
                                _ => {
                                    if ctx.scope.contains(&j) {
                                        beliefs[pi][j].clone()
                                    } else {
                                        private_beliefs(game, &w.rows, j, *policy)
                                    }
                                }
                            })
                            .collect();
                        seen.insert(key);
                        out.push(Found {
                            assessment: Assessment {
                                contracts: game.contracts.to_vec(),
                                strategy: strategy_of(game, &w),
                                continuation: ContinuationProfile { gamma: gamma.clone() },
                                beliefs: BeliefSystem {
                                    mode: Observability::Private,
                                    source: BeliefSource::Policy(*policy),
                                    beliefs: bs,
                                },
                            },
                            allocation: alloc,
                            values,
                            policy: *policy,
                        });
                        break;
                    }
                }
            }
        }
        if !odometer(&mut idx, &sizes) {
            break;
        }
    }
}

fn private_ic(game: &Game, gamma: &[Vec<usize>], j: usize, beliefs: &[Vec<f64>], tol: f64) -> bool {
    let no = game.others_count(j);
    for mj in 0..game.sizes[j] {
        let b = &beliefs[mj];
        let value = |y: usize| -> f64 {
            let mut total = 0.0;
            for t in 0..game.n_types {
                for o in 0..no {
                    let wt = b[t * no + o];
                    if wt == 0.0 {
                        continue;
                    }
                    let profile = game.join(j, mj, o);
                    let mut ys: Vec<usize> = (0..game.n).map(|k| gamma[k][profile[k]]).collect();
                    ys[j] = y;
                    total += wt * game.v(t, game.z_index(&game.xs_of(&profile), &ys), j);
                }
            }
            total
        };
        let cur = value(gamma[j][mj]);
        for &y in game.feasible(j, game.msg_x(j, mj)) {
            if y != gamma[j][mj] && value(y) > cur + tol {
                return false;
            }
        }
    }
    true
}

const CHUNK: usize = 2048;

fn run_chunks<F>(n: usize, f: F) -> Vec<Found>
where
    F: Fn(usize, &mut HashSet<AllocKey>, &mut Vec<Found>) + Sync,
{
    let chunks: Vec<Vec<Found>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut seen = HashSet::new();
            let mut out = Vec::new();
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                f(i, &mut seen, &mut out);
            }
            out
        })
        .collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for found in chunks.into_iter().flatten() {
        if seen.insert(alloc_key(&found.allocation)) {
            out.push(found);
        }
    }
    out
}

/// Exhaustive search over the declared space; one assessment per distinct
/// induced allocation, in deterministic candidate order.
pub fn enumerate_equilibria(env: &Environment, contracts: &[Mechanism], opts: &SearchOptions) -> Result<Vec<Found>> {
    let game = Game::new(env, contracts)?;
    let sym = vec![opts.symmetry && !opts.mixtures; game.n];
    let cands = generate(&game, &sym, opts)?;
    match env.observability {
        Observability::Public => {
            let ctx = public_ctx(&game, opts);
            Ok(run_chunks(cands.len(), |i, seen, out| eval_public(&game, &cands, i, &ctx, opts, seen, out)))
        }
        Observability::Private => {
            let scope: Vec<usize> = (0..game.n).collect();
            let ctx = private_ctx(&game, scope, vec![None; game.n], vec![None; game.n], opts)?;
            Ok(run_chunks(cands.len(), |i, seen, out| eval_private(&game, &cands, i, &ctx, opts, seen, out)))
        }
    }
}

fn private_ctx(
    game: &Game,
    scope: Vec<usize>,
    frozen_gamma: Vec<Option<Vec<usize>>>,
    frozen_beliefs: Vec<Option<Vec<Vec<f64>>>>,
    opts: &SearchOptions,
) -> Result<PrivateCtx> {
    let mut slots = Vec::new();
    let mut size = 1u64;
    for &j in &scope {
        for m in 0..game.sizes[j] {
            let ys = game.feasible(j, game.msg_x(j, m)).to_vec();
            size = size.saturating_mul(ys.len() as u64);
            slots.push((j, m, ys));
        }
    }
    if size > opts.cap {
        return Err(EquilibriumError::CapExceeded { size, cap: opts.cap });
    }
    Ok(PrivateCtx {
        scope,
        frozen_gamma,
        frozen_beliefs,
        slots,
    })
}

/// Private continuation equilibria after principal `j` replaces its contract
/// by `deviation`, with every other principal's contract, continuation and
/// beliefs frozen at `base`.
pub(crate) fn enumerate_frozen(env: &Environment, base: &Assessment, j: usize, deviation: &Mechanism, opts: &SearchOptions) -> Result<Vec<Found>> {
    let mut contracts = base.contracts.clone();
    contracts[j] = deviation.clone();
    let game = Game::new(env, &contracts)?;
    let sym: Vec<bool> = (0..game.n).map(|k| k == j && opts.symmetry && !opts.mixtures).collect();
    let cands = generate(&game, &sym, opts)?;
    let frozen_gamma = (0..game.n)
        .map(|k| (k != j).then(|| base.continuation.gamma[k].clone()))
        .collect();
    let frozen_beliefs = (0..game.n)
        .map(|k| (k != j).then(|| base.beliefs.beliefs[k].clone()))
        .collect();
    let ctx = private_ctx(&game, vec![j], frozen_gamma, frozen_beliefs, opts)?;
    Ok(run_chunks(cands.len(), |i, seen, out| eval_private(&game, &cands, i, &ctx, opts, seen, out)))
}
