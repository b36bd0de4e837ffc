mod common;

use contract_forge_core::contracts::{enumerate_gstar, necessity_environment, necessity_skeleton};
use contract_forge_core::env::{Belief, TypeSpace};
use contract_forge_core::equilibrium::{
    bayes_update, enumerate_equilibria, necessity_reference, AgentStrategy, OffPathPolicy, SearchOptions,
};
use contract_forge_core::expr::parse;
use contract_forge_core::revisable::{
    constrained_optimum, endpoint_baseline, ms_allocation, posterior_ideal, Payoff1D, Revision, RevisableModel,
};
use contract_forge_core::single::{self, Cutoff, SingleProblem};
use proptest::prelude::*;

fn quadratic(alpha: f64, k: f64, a: f64) -> RevisableModel {
    RevisableModel {
        revision: Revision::Additive { alpha },
        sender: Payoff1D::Quadratic { k: 0.0, a: 1.0 },
        receiver: Payoff1D::Quadratic { k, a },
        types: TypeSpace::uniform_interval(0.0, 1.0),
        z_range: (-2.0, 3.0),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn beliefs_are_distributions(seed in 0u64..500, choice in proptest::collection::vec(0usize..8, 3)) {
        let inst = common::random_instance(seed);
        let sizes: Vec<usize> = inst.contracts.iter().map(|c| c.len()).collect();
        let nt = inst.env.types.len();
        let profiles: Vec<Vec<usize>> = (0..nt)
            .map(|t| sizes.iter().enumerate().map(|(j, s)| (choice[t] + j) % s).collect())
            .collect();
        let strategy = AgentStrategy::pure_profiles(&profiles);
        for policy in OffPathPolicy::ALL {
            let b = bayes_update(&inst.env, &inst.contracts, &strategy, policy).unwrap();
            for per_j in &b.beliefs {
                for belief in per_j {
                    let s: f64 = belief.iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-12);
                    prop_assert!(belief.iter().all(|w| *w >= 0.0));
                }
            }
        }
    }

    #[test]
    fn labor_cutoff_is_the_root(x in 0.05f64..5.0, t in 3.0f64..4.0) {
        let p = SingleProblem::labor();
        let y = (x * t).sqrt();
        let Cutoff::Interior(c) = single::cutoff(&p, x, y).unwrap() else {
            return Err(TestCaseError::fail("expected an interior cutoff"));
        };
        prop_assert!((c - y * y / x).abs() < 1e-9);
        prop_assert!(((x * c - y * y) / c.sqrt()).abs() < 1e-8);
        let k = t.sqrt() * (t + 4.0) / 2.0;
        let pi = (4.0 - t) * (k * x.sqrt() - x * x);
        prop_assert!((single::expected_profit(&p, x, y).unwrap() - pi).abs() < 1e-6);
    }

    #[test]
    fn rent_probe_finds_slack(x in 0.5f64..3.0, frac in 0.0f64..0.9) {
        let p = SingleProblem::new(parse("x*theta - y^2").unwrap(), parse("y*theta").unwrap(), TypeSpace::uniform_interval(3.0, 4.0));
        // y^2 <= 3x - 0.1 keeps the slack at or above 0.1.
        let y = (frac * (3.0 * x - 0.1)).sqrt();
        let b = Belief::uniform_interval(3.0, 4.0, 257);
        let r = single::rent_probe(&p, x, y, &b, &single::default_probe_steps()).unwrap();
        prop_assert!(r.kappa >= 0.1 - 1e-12);
        prop_assert!(r.success && r.improvement > 0.0);
    }

    #[test]
    fn labor_single_crossing(a in (0.1f64..4.0, 0.0f64..4.0), b in (0.1f64..4.0, 0.0f64..4.0)) {
        let u = parse("(x*theta - y^2)/sqrt(theta)").unwrap();
        let grid: Vec<f64> = (0..=64).map(|i| 3.0 + i as f64 / 64.0).collect();
        prop_assert!(single::single_crossing_audit(&u, a, b, &grid).unwrap().passed);
    }

    #[test]
    fn endpoint_is_constrained_optimum(
        k in -0.5f64..0.5, a in 0.1f64..0.9, alpha in 0.05f64..0.5,
        points in proptest::collection::vec(0.0f64..1.0, 1..5), z in 0.0f64..1.0,
    ) {
        let m = quadratic(alpha, k, a);
        let b = Belief::uniform(&points);
        let r = posterior_ideal(&m, &b).unwrap();
        let (x, s) = endpoint_baseline(&m, z, r).unwrap();
        prop_assert!((x + s - z).abs() < 1e-12);
        let opt = constrained_optimum(&m, &b, x).unwrap();
        prop_assert!((opt - z).abs() <= 2.0 * alpha / 100.0 + 1e-12);
    }

    #[test]
    fn delegation_is_monotone(k in -0.04f64..0.5, a in 0.1f64..0.9, t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(ms_allocation(k, a, lo).unwrap() <= ms_allocation(k, a, hi).unwrap());
    }
}

#[test]
fn solve_dominates_audit_grid() {
    let p = SingleProblem::labor();
    let r = single::solve(&p).unwrap();
    for i in 0..64 {
        for k in 0..64 {
            let (x, y) = (5.0 * i as f64 / 63.0, 5.0 * k as f64 / 63.0);
            assert!(r.value >= single::expected_profit(&p, x, y).unwrap() - 1e-9);
        }
    }
}

/// Finite-type labor environments: the best equilibrium value over every
/// menu stays below the best single offer.
#[test]
fn menus_do_not_beat_single_offers() {
    use contract_forge_core::env::{
        ActionSet, Environment, Observability, OutsideOption, PayoffKind, PayoffModel, PrincipalSpec,
    };
    use contract_forge_core::expr::Expr;

    let xs = [0.5, 1.0, 1.5, 2.0];
    let ys = [1.0, 1.5, 2.0];
    let thetas = [3.0, 3.5, 4.0];
    let env = Environment {
        types: TypeSpace::uniform_finite(&thetas),
        principals: vec![PrincipalSpec::finite(ActionSet::reals(&xs), ActionSet::reals(&ys), vec![vec![0, 1, 2]; 4])],
        payoffs: PayoffModel {
            kind: PayoffKind::Expressions {
                agent: parse("(x*theta - y^2)/sqrt(theta)").unwrap(),
                principals: vec![parse("y*theta - x^2").unwrap()],
            },
            outside: OutsideOption::Expr(Expr::Num(0.0)),
        },
        observability: Observability::Public,
    };
    let p = SingleProblem::new(
        parse("(x*theta - y^2)/sqrt(theta)").unwrap(),
        parse("y*theta - x^2").unwrap(),
        TypeSpace::uniform_finite(&thetas),
    );
    let mut single_best = 0.0f64;
    for x in xs {
        for y in ys {
            single_best = single_best.max(single::expected_profit(&p, x, y).unwrap());
        }
    }
    let opts = SearchOptions::all_policies();
    for menu in enumerate_gstar(&env, 0).unwrap() {
        for f in enumerate_equilibria(&env, &[menu], &opts).unwrap() {
            assert!(f.values[0] <= single_best + 1e-9, "{} > {single_best}", f.values[0]);
        }
    }
}

#[test]
fn necessity_images_are_exact() {
    let skeleton = necessity_skeleton(3, 3, false);
    for mask in 1u32..8 {
        let menu: Vec<usize> = (0..3).filter(|i| mask >> i & 1 == 1).collect();
        let inst = necessity_environment(&skeleton, 0, &menu).unwrap();
        let a = necessity_reference(&inst).unwrap();
        let r = contract_forge_core::equilibrium::check_continuation(&inst.env, &a, 1e-9).unwrap();
        assert!(r.passed());
        assert_eq!(r.values, vec![1.0]);
        let found = enumerate_equilibria(&inst.env, &inst.contracts, &SearchOptions::all_policies()).unwrap();
        assert!(!found.is_empty());
        for f in found {
            let image: std::collections::BTreeSet<usize> = f
                .allocation
                .per_type
                .iter()
                .flat_map(|d| d.iter())
                .filter_map(|(o, _)| match o {
                    contract_forge_core::env::Outcome::Trade(p) => Some(p[0].0),
                    _ => None,
                })
                .collect();
            assert_eq!(image.into_iter().collect::<Vec<_>>(), menu);
        }
    }
}
