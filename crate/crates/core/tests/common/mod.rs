#![allow(dead_code)]

use std::collections::BTreeSet;

use contract_forge_core::contracts::Mechanism;
use contract_forge_core::env::{
    ActionSet, Allocation, Environment, Observability, Outcome, OutsideOption, PayoffKind, PayoffModel, PayoffTable,
    PrincipalSpec, TypePoint, TypeSpace,
};
use contract_forge_core::expr::Expr;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type AllocKey = Vec<Vec<(Outcome, u64)>>;

pub fn alloc_key(a: &Allocation) -> AllocKey {
    a.clone()
        .normalized()
        .per_type
        .into_iter()
        .map(|d| d.into_iter().map(|(o, p)| (o, p.to_bits())).collect())
        .collect()
}

pub struct Instance {
    pub env: Environment,
    pub contracts: Vec<Mechanism>,
}

/// Up to three types, two principals and four feasible pairs per principal,
/// integer payoffs in [-3, 3]. Contracts are either the full menu with
/// recommendations or a general mechanism with duplicated messages.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_types = rng.gen_range(1..=3);
    let raw: Vec<f64> = (0..n_types).map(|_| rng.gen_range(1..=3) as f64).collect();
    let total: f64 = raw.iter().sum();
    let types = TypeSpace::Finite(
        raw.iter()
            .enumerate()
            .map(|(i, w)| TypePoint::new(format!("t{i}"), i as f64, w / total))
            .collect(),
    );
    let n = rng.gen_range(1..=2);
    let mut principals = Vec::new();
    for _ in 0..n {
        loop {
            let nx = rng.gen_range(1..=2);
            let ny = rng.gen_range(1..=3);
            let feas: Vec<Vec<usize>> = (0..nx)
                .map(|_| {
                    let mut f: Vec<usize> = (0..ny).filter(|_| rng.gen_bool(0.6)).collect();
                    if f.is_empty() {
                        f.push(rng.gen_range(0..ny));
                    }
                    f
                })
                .collect();
            if feas.iter().map(Vec::len).sum::<usize>() <= 4 {
                let xs: Vec<f64> = (0..nx).map(|i| i as f64).collect();
                let ys: Vec<f64> = (0..ny).map(|i| i as f64).collect();
                principals.push(PrincipalSpec::finite(ActionSet::reals(&xs), ActionSet::reals(&ys), feas));
                break;
            }
        }
    }
    let zs: Vec<usize> = principals.iter().map(|p| p.pairs().len()).collect();
    let mut table = PayoffTable::default();
    for t in 0..n_types {
        let mut idx = vec![0usize; n];
        loop {
            let agent = rng.gen_range(-3..=3) as f64;
            let vs = (0..n).map(|_| rng.gen_range(-3..=3) as f64).collect();
            table.insert(t, idx.clone(), agent, vs);
            if !advance(&mut idx, &zs) {
                break;
            }
        }
    }
    let outside = if rng.gen_bool(0.7) {
        OutsideOption::Expr(Expr::Num(rng.gen_range(-1..=1) as f64))
    } else {
        OutsideOption::None
    };
    let env = Environment {
        types,
        principals,
        payoffs: PayoffModel {
            kind: PayoffKind::Table(table),
            outside,
        },
        observability: Observability::Public,
    };
    let mut contracts = Vec::new();
    for j in 0..n {
        let nx = env.principals[j].xs().unwrap().len();
        if rng.gen_bool(0.5) {
            let menu: Vec<usize> = (0..nx).collect();
            contracts.push(Mechanism::menu_rec(&env, j, &menu).unwrap());
        } else {
            let m = rng.gen_range(1..=3);
            let msgs = (0..m).map(|i| (format!("m{i}"), rng.gen_range(0..nx))).collect();
            contracts.push(Mechanism::general(&env, j, msgs).unwrap());
        }
    }
    Instance { env, contracts }
}

/// Every pure-strategy continuation equilibrium under prior off-path
/// beliefs, found by exhausting agent strategies and on-path
/// recommendations directly.
pub fn oracle_allocations(env: &Environment, contracts: &[Mechanism], tol: f64) -> BTreeSet<AllocKey> {
    let types = env.types.finite().unwrap();
    let nt = types.len();
    let prior: Vec<f64> = types.iter().map(|t| t.weight).collect();
    let n = contracts.len();
    let pairs: Vec<Vec<(usize, usize)>> = env.principals.iter().map(|p| p.pairs()).collect();
    let outside: Vec<Option<f64>> = types.iter().map(|t| env.outside_value(t.value).unwrap()).collect();
    let exit = outside[0].is_some();

    // All message profiles as explicit vectors.
    let mut profiles: Vec<Vec<usize>> = vec![vec![]];
    for c in contracts {
        profiles = profiles
            .into_iter()
            .flat_map(|p| {
                (0..c.messages.len()).map(move |m| {
                    let mut q = p.clone();
                    q.push(m);
                    q
                })
            })
            .collect();
    }
    let xs_of = |p: &[usize]| -> Vec<usize> { p.iter().enumerate().map(|(j, m)| contracts[j].messages[*m].x).collect() };
    let payoff = |t: usize, xs: &[usize], ys: &[usize]| -> (f64, Vec<f64>) {
        let idx: Vec<usize> = (0..n)
            .map(|j| pairs[j].iter().position(|pr| *pr == (xs[j], ys[j])).unwrap())
            .collect();
        let p = env.payoffs_indexed(t, &idx).unwrap();
        (p.agent, p.principals)
    };
    let y_profiles = |xs: &[usize]| -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = vec![vec![]];
        for (j, x) in xs.iter().enumerate() {
            let f = env.principals[j].feasible(*x).to_vec();
            out = out
                .into_iter()
                .flat_map(|p| {
                    f.iter().map(move |y| {
                        let mut q = p.clone();
                        q.push(*y);
                        q
                    })
                })
                .collect();
        }
        out
    };
    let nash = |xs: &[usize], belief: &[f64]| -> Vec<Vec<usize>> {
        let expv = |ys: &[usize], j: usize| -> f64 { (0..nt).map(|t| belief[t] * payoff(t, xs, ys).1[j]).sum() };
        y_profiles(xs)
            .into_iter()
            .filter(|ys| {
                (0..n).all(|j| {
                    let cur = expv(ys, j);
                    env.principals[j].feasible(xs[j]).iter().all(|&y| {
                        let mut alt = ys.clone();
                        alt[j] = y;
                        expv(&alt, j) <= cur + tol
                    })
                })
            })
            .collect()
    };

    // Choice 0 is exit when allowed; otherwise choices index profiles.
    let n_choices = profiles.len() + usize::from(exit);
    let mut out = BTreeSet::new();
    let mut q = vec![0usize; nt];
    loop {
        let prof_of = |c: usize| -> Option<usize> {
            if exit {
                c.checked_sub(1)
            } else {
                Some(c)
            }
        };
        let on: BTreeSet<usize> = q.iter().filter_map(|c| prof_of(*c)).collect();
        let on: Vec<usize> = on.into_iter().collect();
        let posts: Vec<Vec<f64>> = on
            .iter()
            .map(|p| {
                let w: Vec<f64> = (0..nt).map(|t| if prof_of(q[t]) == Some(*p) { prior[t] } else { 0.0 }).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|x| x / s).collect()
            })
            .collect();
        let lists: Vec<Vec<Vec<usize>>> = on
            .iter()
            .zip(&posts)
            .map(|(p, b)| nash(&xs_of(&profiles[*p]), b))
            .collect();
        if lists.iter().all(|l| !l.is_empty()) {
            let mut pick = vec![0usize; on.len()];
            loop {
                let gamma = |p: usize| -> &Vec<usize> {
                    let k = on.iter().position(|x| *x == p).unwrap();
                    &lists[k][pick[k]]
                };
                let eq: Vec<f64> = (0..nt)
                    .map(|t| match prof_of(q[t]) {
                        None => outside[t].unwrap(),
                        Some(p) => payoff(t, &xs_of(&profiles[p]), gamma(p)).0,
                    })
                    .collect();
                let mut ok = (0..nt).all(|t| {
                    outside[t].map_or(true, |u| u <= eq[t] + tol)
                        && on
                            .iter()
                            .all(|p| payoff(t, &xs_of(&profiles[*p]), gamma(*p)).0 <= eq[t] + tol)
                });
                if ok {
                    for (pi, p) in profiles.iter().enumerate() {
                        if on.contains(&pi) {
                            continue;
                        }
                        let xs = xs_of(p);
                        let deterred = nash(&xs, &prior)
                            .iter()
                            .any(|ys| (0..nt).all(|t| payoff(t, &xs, ys).0 <= eq[t] + tol));
                        if !deterred {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    let key: AllocKey = (0..nt)
                        .map(|t| {
                            let o = match prof_of(q[t]) {
                                None => Outcome::OptOut,
                                Some(p) => {
                                    let xs = xs_of(&profiles[p]);
                                    Outcome::Trade(xs.iter().copied().zip(gamma(p).iter().copied()).collect())
                                }
                            };
                            vec![(o, 1f64.to_bits())]
                        })
                        .collect();
                    out.insert(key);
                }
                if !advance(&mut pick, &lists.iter().map(Vec::len).collect::<Vec<_>>()) {
                    break;
                }
            }
        }
        if !advance(&mut q, &vec![n_choices; nt]) {
            break;
        }
    }
    out
}

fn advance(idx: &mut [usize], sizes: &[usize]) -> bool {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < sizes[k] {
            return true;
        }
        idx[k] = 0;
    }
    false
}
