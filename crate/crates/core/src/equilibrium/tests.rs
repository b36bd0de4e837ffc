use super::*;
use crate::contracts::{
    enumerate_gstar, necessity_environment, necessity_skeleton, plain_menu_scenario, Mechanism, MechanismKind,
};
use crate::env::{
    ActionSet, Observability, OutsideOption, PayoffKind, PayoffModel, PayoffTable, PrincipalSpec, TypePoint, TypeSpace,
};
use crate::expr::parse;

fn expr_env(types: TypeSpace, principals: Vec<PrincipalSpec>, u: &str, v: &[&str]) -> Environment {
    Environment {
        types,
        principals,
        payoffs: PayoffModel {
            kind: PayoffKind::Expressions {
                agent: parse(u).unwrap(),
                principals: v.iter().map(|s| parse(s).unwrap()).collect(),
            },
            outside: OutsideOption::default(),
        },
        observability: Observability::Public,
    }
}

fn two_message_env(weights: (f64, f64)) -> Environment {
    expr_env(
        TypeSpace::Finite(vec![TypePoint::new("lo", 0.0, weights.0), TypePoint::new("hi", 1.0, weights.1)]),
        vec![PrincipalSpec::finite(ActionSet::reals(&[0.0, 1.0]), ActionSet::reals(&[0.0]), vec![vec![0], vec![0]])],
        "1",
        &["1"],
    )
}

#[test]
fn bayes_pooling_separating_and_mixed() {
    let env = two_message_env((0.5, 0.5));
    let c = vec![Mechanism::menu_rec(&env, 0, &[0, 1]).unwrap()];
    let pool = AgentStrategy::pure_profiles(&[vec![0], vec![0]]);
    let b = bayes_update(&env, &c, &pool, OffPathPolicy::Prior).unwrap();
    assert_eq!(b.beliefs[0][0], vec![0.5, 0.5]);

    let sep = AgentStrategy::pure_profiles(&[vec![0], vec![1]]);
    let b = bayes_update(&env, &c, &sep, OffPathPolicy::Prior).unwrap();
    assert_eq!(b.beliefs[0][0], vec![1.0, 0.0]);
    assert_eq!(b.beliefs[0][1], vec![0.0, 1.0]);

    let env = two_message_env((0.25, 0.75));
    let mixed = AgentStrategy {
        per_type: vec![
            vec![(AgentChoice::Send(vec![0]), 1.0)],
            vec![(AgentChoice::Send(vec![0]), 1.0 / 3.0), (AgentChoice::Send(vec![1]), 2.0 / 3.0)],
        ],
    };
    let b = bayes_update(&env, &c, &mixed, OffPathPolicy::Prior).unwrap();
    assert!((b.beliefs[0][0][0] - 0.5).abs() < 1e-15);
    assert!((b.beliefs[0][0][1] - 0.5).abs() < 1e-15);
}

#[test]
fn off_path_policies() {
    let env = two_message_env((0.25, 0.75));
    let c = vec![Mechanism::menu_rec(&env, 0, &[0, 1]).unwrap()];
    let pool = AgentStrategy::pure_profiles(&[vec![0], vec![0]]);
    let at = |p| bayes_update(&env, &c, &pool, p).unwrap().beliefs[0][1].clone();
    assert_eq!(at(OffPathPolicy::Prior), vec![0.25, 0.75]);
    assert_eq!(at(OffPathPolicy::Lowest), vec![1.0, 0.0]);
    assert_eq!(at(OffPathPolicy::Highest), vec![0.0, 1.0]);
    // No on-path profile shares the contractible action: falls back to prior.
    assert_eq!(at(OffPathPolicy::CopyFromSelector), vec![0.25, 0.75]);
}

#[test]
fn singleton_environment_passes() {
    let env = expr_env(
        TypeSpace::uniform_finite(&[1.0]),
        vec![PrincipalSpec::finite(ActionSet::reals(&[0.0, 1.0]), ActionSet::reals(&[0.0]), vec![vec![0], vec![0]])],
        "1",
        &["0"],
    );
    let c = vec![Mechanism::menu_rec(&env, 0, &[0]).unwrap()];
    let a = truthful_assessment(&env, c, AgentStrategy::pure_profiles(&[vec![0]]), OffPathPolicy::Prior).unwrap();
    let r = check_continuation(&env, &a, DEFAULT_TOL).unwrap();
    assert!(r.passed(), "{r}");
}

#[test]
fn necessity_reference_and_gap() {
    let skel = necessity_skeleton(3, 3, true);
    let inst = necessity_environment(&skel, 0, &[0, 1, 2]).unwrap();
    let a = necessity_reference(&inst).unwrap();
    let r = check_continuation(&inst.env, &a, DEFAULT_TOL).unwrap();
    assert!(r.passed(), "{r}");
    assert_eq!(r.values, vec![1.0, 1.0]);
    assert!(r.allocation.approx_eq(&inst.reference, 0.0));

    // One type, two responses worth 1 and 0; playing the worse one.
    let env = Environment {
        types: TypeSpace::uniform_finite(&[0.0]),
        principals: vec![PrincipalSpec::finite(ActionSet::labels(&["a"]), ActionSet::labels(&["y0", "y1"]), vec![vec![0, 1]])],
        payoffs: PayoffModel {
            kind: PayoffKind::Table({
                let mut t = PayoffTable::default();
                t.insert(0, vec![0], 0.0, vec![1.0]);
                t.insert(0, vec![1], 0.0, vec![0.0]);
                t
            }),
            outside: OutsideOption::default(),
        },
        observability: Observability::Public,
    };
    let c = vec![Mechanism::menu_rec(&env, 0, &[0]).unwrap()];
    let mut a = truthful_assessment(&env, c, AgentStrategy::pure_profiles(&[vec![0]]), OffPathPolicy::Prior).unwrap();
    a.continuation.gamma[0] = vec![1, 1];
    let r = check_continuation(&env, &a, DEFAULT_TOL).unwrap();
    assert!(!r.principal_ic_ok[0]);
    assert_eq!(r.principal_worst[0].as_ref().unwrap().gap, 1.0);
}

#[test]
fn mixing_value() {
    let env = expr_env(
        TypeSpace::uniform_finite(&[0.0]),
        vec![PrincipalSpec::finite(ActionSet::reals(&[0.0, 2.0]), ActionSet::reals(&[0.0]), vec![vec![0], vec![0]])],
        "1",
        &["x"],
    );
    let c = vec![Mechanism::menu_rec(&env, 0, &[0, 1]).unwrap()];
    let strategy = AgentStrategy {
        per_type: vec![vec![(AgentChoice::Send(vec![0]), 0.5), (AgentChoice::Send(vec![1]), 0.5)]],
    };
    let a = truthful_assessment(&env, c, strategy, OffPathPolicy::Prior).unwrap();
    assert_eq!(principal_value(&env, &a, 0).unwrap(), 1.0);
    assert_eq!(induced_allocation(&env, &a).unwrap().per_type[0].len(), 2);
}

#[test]
fn constant_payoffs_admit_every_pure_map() {
    let env = expr_env(
        TypeSpace::uniform_finite(&[0.0, 1.0]),
        vec![PrincipalSpec::finite(ActionSet::reals(&[0.0, 1.0]), ActionSet::reals(&[0.0, 1.0]), vec![vec![0, 1], vec![0]])],
        "0",
        &["0"],
    );
    let c = vec![Mechanism::menu_rec(&env, 0, &[0, 1]).unwrap()];
    let found = enumerate_equilibria(&env, &c, &SearchOptions::default()).unwrap();
    // Per type: exit or one of three feasible pairs.
    assert_eq!(found.len(), 16);
    for f in &found {
        assert!(check_continuation(&env, &f.assessment, DEFAULT_TOL).unwrap().passed());
    }
}

#[test]
fn symmetry_reduction_keeps_allocations() {
    let env = expr_env(
        TypeSpace::uniform_finite(&[0.0, 0.5, 1.0]),
        vec![PrincipalSpec::finite(
            ActionSet::reals(&[0.0, 1.0]),
            ActionSet::reals(&[0.0, 1.0]),
            vec![vec![0, 1], vec![0, 1]],
        )],
        "x*theta - (y - theta)^2",
        &["y*theta - x/2 - (y-0.5)^2"],
    );
    let c = vec![Mechanism::menu_rec(&env, 0, &[0, 1]).unwrap()];
    let mut opts = SearchOptions::all_policies();
    let with = enumerate_equilibria(&env, &c, &opts).unwrap();
    opts.symmetry = false;
    let without = enumerate_equilibria(&env, &c, &opts).unwrap();
    let key = |v: &[Found]| {
        let mut k: Vec<String> = v.iter().map(|f| format!("{:?}", f.allocation)).collect();
        k.sort();
        k
    };
    assert_eq!(key(&with), key(&without));
}

#[test]
fn plain_menu_continuation_is_pooled() {
    let s = plain_menu_scenario(0);
    let a = plain_menu_reference(&s).unwrap();
    let r = check_continuation(&s.env, &a, 0.0).unwrap();
    assert!(r.passed(), "{r}");
    let per_state = allocation_state_values(&s.env, &r.allocation, 0).unwrap();
    assert_eq!(per_state, vec![2.0, 1.0]);

    let found = search::enumerate_frozen(&s.env, &a, 0, &s.deviation, &SearchOptions::all_policies()).unwrap();
    assert_eq!(found.len(), 1);
    let per_state = allocation_state_values(&s.env, &found[0].allocation, 0).unwrap();
    assert_eq!(per_state, vec![2.0, 2.0]);
}

#[test]
fn plain_menu_is_safe_profitable() {
    let s = plain_menu_scenario(0);
    let a = plain_menu_reference(&s).unwrap();
    let mut opts = RobustOptions::default();
    opts.search.tol = 0.0;
    let r = check_robust(&s.env, &a, &opts).unwrap();
    let flagged: Vec<&DeviationOutcome> = r.safe_profitable().collect();
    assert_eq!(flagged.len(), 1);
    assert_eq!(flagged[0].deviation, "PlainMenu({xr})");
    assert_eq!(flagged[0].principal, 0);
}

#[test]
fn plain_menu_with_auxiliary_state() {
    let s = plain_menu_scenario(1);
    let a = plain_menu_reference(&s).unwrap();
    assert!(check_continuation(&s.env, &a, 0.0).unwrap().passed());
    let r = check_robust(&s.env, &a, &RobustOptions::default()).unwrap();
    let flagged: Vec<String> = r.safe_profitable().map(|o| o.deviation.clone()).collect();
    assert_eq!(flagged, vec!["PlainMenu({xr,xa1})".to_string()]);
}

#[test]
fn current_contract_is_never_safe_profitable() {
    let skel = necessity_skeleton(3, 3, false);
    let inst = necessity_environment(&skel, 0, &[0, 2]).unwrap();
    let a = necessity_reference(&inst).unwrap();
    let opts = RobustOptions {
        deviations: Some(vec![vec![a.contracts[0].clone()]]),
        ..Default::default()
    };
    let r = check_robust(&inst.env, &a, &opts).unwrap();
    assert!(r.robust());
    assert_eq!(r.outcomes[0].max_value, Some(1.0));
}

#[test]
fn necessity_deviations_are_deterred() {
    let skel = necessity_skeleton(3, 3, true);
    let inst = necessity_environment(&skel, 0, &[0, 1]).unwrap();
    let a = necessity_reference(&inst).unwrap();
    let r = check_robust(&inst.env, &a, &RobustOptions::default()).unwrap();
    assert!(r.robust());
    for o in r.outcomes.iter().filter(|o| o.principal == 0) {
        if o.deviation.contains("a2") {
            assert_eq!(o.min_value, Some(-8.0), "{}", o.deviation);
        } else {
            assert!(o.max_value.unwrap() <= 1.0);
        }
    }
}

#[test]
fn canonicalize_general_mechanism() {
    // Three messages, two of them above the same action.
    let env = expr_env(
        TypeSpace::uniform_finite(&[0.0, 1.0, 2.0]),
        vec![PrincipalSpec::finite(
            ActionSet::reals(&[0.0, 1.0]),
            ActionSet::reals(&[0.0, 1.0]),
            vec![vec![0, 1], vec![0, 1]],
        )],
        "x*theta + y",
        &["y*(theta - 0.5) - x"],
    );
    let g = Mechanism::general(&env, 0, vec![("m0".into(), 0), ("m1".into(), 1), ("m2".into(), 1)]).unwrap();
    let found = enumerate_equilibria(&env, std::slice::from_ref(&g), &SearchOptions::all_policies()).unwrap();
    assert!(!found.is_empty());
    for f in &found {
        let c = canonicalize(&env, &f.assessment).unwrap();
        assert_eq!(c.contracts[0].kind, MechanismKind::MenuRec);
        let r = check_continuation(&env, &c, DEFAULT_TOL).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.allocation.approx_eq(&f.allocation, 1e-12));
        for j in 0..1 {
            assert!((r.values[j] - f.values[j]).abs() <= 1e-12);
        }
    }
}

#[test]
fn canonicalize_merges_equal_messages() {
    let env = two_message_env((0.5, 0.5));
    let g = Mechanism::general(&env, 0, vec![("m0".into(), 0), ("m0b".into(), 0)]).unwrap();
    let a = Assessment {
        contracts: vec![g.clone()],
        strategy: AgentStrategy::pure_profiles(&[vec![0], vec![1]]),
        continuation: ContinuationProfile { gamma: vec![vec![0, 0]] },
        beliefs: bayes_update(&env, &[g], &AgentStrategy::pure_profiles(&[vec![0], vec![1]]), OffPathPolicy::Prior).unwrap(),
    };
    assert!(check_continuation(&env, &a, DEFAULT_TOL).unwrap().passed());
    let c = canonicalize(&env, &a).unwrap();
    assert_eq!(c.contracts[0].len(), 1);
    assert_eq!(c.strategy.per_type[0], vec![(AgentChoice::Send(vec![0]), 1.0)]);
    assert_eq!(c.beliefs.beliefs[0][0], vec![0.5, 0.5]);
}

#[test]
fn canonical_fixed_point() {
    let skel = necessity_skeleton(3, 3, false);
    let inst = necessity_environment(&skel, 0, &[0, 1, 2]).unwrap();
    let a = necessity_reference(&inst).unwrap();
    let c = canonicalize(&inst.env, &a).unwrap();
    assert_eq!(c.contracts, a.contracts);
    assert_eq!(c.strategy, a.strategy);
    assert_eq!(c.continuation, a.continuation);
}

#[test]
fn gstar_search_recovers_necessary_image() {
    let skel = necessity_skeleton(3, 3, false);
    let inst = necessity_environment(&skel, 0, &[1, 2]).unwrap();
    let mut hits = 0;
    for g in enumerate_gstar(&inst.env, 0).unwrap() {
        for f in enumerate_equilibria(&inst.env, std::slice::from_ref(&g), &SearchOptions::all_policies()).unwrap() {
            if f.allocation.approx_eq(&inst.reference, 0.0) {
                assert_eq!(g.image().into_iter().collect::<Vec<_>>(), vec![1, 2]);
                hits += 1;
            }
        }
    }
    assert_eq!(hits, 1);
}

#[test]
fn cap_is_enforced() {
    let env = two_message_env((0.5, 0.5));
    let c = vec![Mechanism::menu_rec(&env, 0, &[0, 1]).unwrap()];
    let opts = SearchOptions {
        cap: 2,
        ..Default::default()
    };
    assert!(matches!(
        enumerate_equilibria(&env, &c, &opts),
        Err(EquilibriumError::CapExceeded { .. })
    ));
}

#[test]
fn mixtures_extend_the_search() {
    let env = expr_env(
        TypeSpace::uniform_finite(&[0.0]),
        vec![PrincipalSpec::finite(ActionSet::reals(&[0.0, 1.0]), ActionSet::reals(&[0.0]), vec![vec![0], vec![0]])],
        "1",
        &["x"],
    );
    let c = vec![Mechanism::menu_rec(&env, 0, &[0, 1]).unwrap()];
    let pure = enumerate_equilibria(&env, &c, &SearchOptions::default()).unwrap();
    let mixed = enumerate_equilibria(
        &env,
        &c,
        &SearchOptions {
            mixtures: true,
            ..Default::default()
        },
    )
    .unwrap();
    // Exit is dominated; two pure outcomes plus seven interior mixtures.
    assert_eq!(pure.len(), 2);
    assert_eq!(mixed.len(), 2 + 7);
    assert!(mixed.iter().any(|f| f.values[0] == 0.5));
}
