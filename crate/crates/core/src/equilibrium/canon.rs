use std::collections::BTreeMap;

use super::{
    malformed, AgentChoice, AgentStrategy, Assessment, BeliefSource, BeliefSystem, ContinuationProfile, Game, Result,
};
use crate::contracts::Mechanism;
use crate::env::{Environment, Observability};

/// Rewrites a public assessment over menus with recommendations. Each
/// message profile `m` maps to `T(m) = (G_k(m_k), gamma_k(m))_k`; the agent
/// strategy is pushed forward through `T`. Profiles outside the image of `T`
/// copy behavior from the profile of lowest-index messages with the same
/// contractible actions.
pub fn canonicalize(env: &Environment, a: &Assessment) -> Result<Assessment> {
    if a.mode() != Observability::Public || env.observability != Observability::Public {
        return malformed("canonicalization is defined for public assessments");
    }
    let game = Game::new(env, &a.contracts)?;
    let contracts = a
        .contracts
        .iter()
        .map(|c| crate::contracts::canonical_counterpart(env, c))
        .collect::<std::result::Result<Vec<Mechanism>, _>>()?;
    let canon = Game::new(env, &contracts)?;
    let n = game.n;

    let lookup = |k: usize, x: usize, y: usize| -> usize {
        contracts[k]
            .messages
            .iter()
            .position(|m| m.x == x && m.rec == Some(y))
            .expect("feasible pair is a message of the counterpart")
    };
    let t_map: Vec<usize> = (0..game.n_profiles)
        .map(|f| {
            let profile = game.unflatten(f);
            let canon_profile: Vec<usize> = (0..n)
                .map(|k| lookup(k, game.msg_x(k, profile[k]), a.continuation.gamma[k][f]))
                .collect();
            canon.flatten(&canon_profile)
        })
        .collect();

    // Pushforward of q.
    let mut per_type = Vec::with_capacity(game.n_types);
    for dist in &a.strategy.per_type {
        let mut merged: BTreeMap<AgentChoice, f64> = BTreeMap::new();
        for (c, p) in dist {
            let key = match c {
                AgentChoice::OptOut => AgentChoice::OptOut,
                AgentChoice::Send(profile) => AgentChoice::Send(canon.unflatten(t_map[game.flatten(profile)])),
            };
            *merged.entry(key).or_insert(0.0) += p;
        }
        per_type.push(merged.into_iter().collect::<Vec<_>>());
    }
    let strategy = AgentStrategy { per_type };

    // Joint mass per canonical profile.
    let mut joint = vec![vec![0.0; game.n_types]; canon.n_profiles];
    for (t, dist) in strategy.per_type.iter().enumerate() {
        for (c, p) in dist {
            if let AgentChoice::Send(profile) = c {
                joint[canon.flatten(profile)][t] += game.prior[t] * p;
            }
        }
    }
    let mut first_preimage = vec![None; canon.n_profiles];
    for (f, fp) in t_map.iter().enumerate() {
        if first_preimage[*fp].is_none() {
            first_preimage[*fp] = Some(f);
        }
    }
    // Lowest-index original message per contractible action.
    let selector: Vec<BTreeMap<usize, usize>> = a
        .contracts
        .iter()
        .map(|c| {
            let mut s = BTreeMap::new();
            for (m, msg) in c.messages.iter().enumerate() {
                s.entry(msg.x).or_insert(m);
            }
            s
        })
        .collect();

    let mut gamma = vec![vec![0usize; canon.n_profiles]; n];
    let mut beliefs = vec![vec![Vec::new(); canon.n_profiles]; n];
    for fp in 0..canon.n_profiles {
        let cprofile = canon.unflatten(fp);
        let mass: f64 = joint[fp].iter().sum();
        let (source, truthful) = match first_preimage[fp] {
            Some(f) => (f, true),
            None => {
                let r: Vec<usize> = (0..n).map(|k| selector[k][&canon.msg_x(k, cprofile[k])]).collect();
                (game.flatten(&r), false)
            }
        };
        for k in 0..n {
            gamma[k][fp] = if truthful {
                contracts[k].messages[cprofile[k]].rec.expect("menu message")
            } else {
                a.continuation.gamma[k][source]
            };
            beliefs[k][fp] = if mass > 0.0 {
                joint[fp].iter().map(|w| w / mass).collect()
            } else {
                a.beliefs.beliefs[k][source].clone()
            };
        }
    }
    Ok(Assessment {
        contracts,
        strategy,
        continuation: ContinuationProfile { gamma },
        beliefs: BeliefSystem {
            mode: Observability::Public,
            source: BeliefSource::Explicit,
            beliefs,
        },
    })
}
