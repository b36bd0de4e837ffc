//! Mechanisms over finite action sets, the canonical contract spaces, and
//! constructors for the environments that make individual menus necessary.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::env::{
    ActionSet, Allocation, Environment, Observability, Outcome, OutsideOption, PayoffKind, PayoffModel,
    PayoffTable, PrincipalSpec, TypePoint, TypeSpace,
};

/// Largest finite set whose nonempty subsets will be enumerated.
pub const MAX_SUBSET_BITS: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContractError {
    #[error("principal {0}: contractible set is not finite")]
    NotFinite(usize),
    #[error("principal index {0} out of range")]
    Principal(usize),
    #[error("menu is empty")]
    EmptyMenu,
    #[error("action index {0} out of range")]
    Action(usize),
    #[error("pair ({0}, {1}) is infeasible")]
    Infeasible(usize, usize),
    #[error("plain menu must contain an action with at least two feasible responses")]
    PlainWithoutRichAction,
    #[error("{0} elements is too many to enumerate subsets")]
    TooLarge(usize),
    #[error("need at least {needed} types, found {found}")]
    TooFewTypes { needed: usize, found: usize },
    #[error("need at least two principals")]
    TooFewPrincipals,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    MenuRec,
    Submenu,
    PlainMenu,
    General,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Message {
    pub label: String,
    /// Assigned contractible action (index into X_j).
    pub x: usize,
    /// Optional recommendation (index into Y_j).
    pub rec: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Mechanism {
    pub principal: usize,
    pub kind: MechanismKind,
    pub messages: Vec<Message>,
}

fn spec(env: &Environment, j: usize) -> Result<&PrincipalSpec, ContractError> {
    let p = env.principals.get(j).ok_or(ContractError::Principal(j))?;
    if !p.is_finite() {
        return Err(ContractError::NotFinite(j));
    }
    Ok(p)
}

fn x_label(p: &PrincipalSpec, x: usize) -> String {
    p.xs().map(|xs| xs[x].label.clone()).unwrap_or_default()
}

fn y_label(p: &PrincipalSpec, y: usize) -> String {
    p.ys().map(|ys| ys[y].label.clone()).unwrap_or_default()
}

fn pair_message(p: &PrincipalSpec, x: usize, y: usize) -> Message {
    Message {
        label: format!("({},{})", x_label(p, x), y_label(p, y)),
        x,
        rec: Some(y),
    }
}

fn check_menu(p: &PrincipalSpec, menu: &[usize]) -> Result<(), ContractError> {
    if menu.is_empty() {
        return Err(ContractError::EmptyMenu);
    }
    let nx = p.xs().map(|xs| xs.len()).unwrap_or(0);
    match menu.iter().find(|x| **x >= nx) {
        Some(x) => Err(ContractError::Action(*x)),
        None => Ok(()),
    }
}

fn sorted_unique(menu: &[usize]) -> Vec<usize> {
    menu.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

impl Mechanism {
    /// Menu with recommendations: messages are all feasible pairs above the menu.
    pub fn menu_rec(env: &Environment, j: usize, menu: &[usize]) -> Result<Self, ContractError> {
        let p = spec(env, j)?;
        check_menu(p, menu)?;
        let messages = sorted_unique(menu)
            .into_iter()
            .flat_map(|x| p.feasible(x).iter().map(move |y| pair_message(p, x, *y)))
            .collect();
        Ok(Mechanism {
            principal: j,
            kind: MechanismKind::MenuRec,
            messages,
        })
    }

    /// A nonempty set of feasible pairs, assigned by first coordinate.
    pub fn submenu(env: &Environment, j: usize, pairs: &[(usize, usize)]) -> Result<Self, ContractError> {
        let p = spec(env, j)?;
        if pairs.is_empty() {
            return Err(ContractError::EmptyMenu);
        }
        let mut messages = Vec::with_capacity(pairs.len());
        for (x, y) in pairs {
            if !p.feasible(*x).contains(y) {
                return Err(ContractError::Infeasible(*x, *y));
            }
            messages.push(pair_message(p, *x, *y));
        }
        Ok(Mechanism {
            principal: j,
            kind: MechanismKind::Submenu,
            messages,
        })
    }

    /// Plain menu: messages are the contractible actions themselves.
    pub fn plain(env: &Environment, j: usize, menu: &[usize]) -> Result<Self, ContractError> {
        let p = spec(env, j)?;
        check_menu(p, menu)?;
        let menu = sorted_unique(menu);
        if !menu.iter().any(|x| p.feasible(*x).len() >= 2) {
            return Err(ContractError::PlainWithoutRichAction);
        }
        Ok(Mechanism {
            principal: j,
            kind: MechanismKind::PlainMenu,
            messages: menu
                .into_iter()
                .map(|x| Message {
                    label: x_label(p, x),
                    x,
                    rec: None,
                })
                .collect(),
        })
    }

    /// Arbitrary labeled messages with assigned contractible actions.
    pub fn general(env: &Environment, j: usize, messages: Vec<(String, usize)>) -> Result<Self, ContractError> {
        let p = spec(env, j)?;
        if messages.is_empty() {
            return Err(ContractError::EmptyMenu);
        }
        let xs: Vec<usize> = messages.iter().map(|m| m.1).collect();
        check_menu(p, &xs)?;
        Ok(Mechanism {
            principal: j,
            kind: MechanismKind::General,
            messages: messages
                .into_iter()
                .map(|(label, x)| Message { label, x, rec: None })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn image(&self) -> BTreeSet<usize> {
        self.messages.iter().map(|m| m.x).collect()
    }

    pub fn is_equiv(&self, other: &Mechanism) -> bool {
        self.image() == other.image()
    }

    /// Messages above `x`, in message order.
    pub fn messages_above(&self, x: usize) -> Vec<usize> {
        (0..self.messages.len()).filter(|m| self.messages[*m].x == x).collect()
    }

    /// Checks totality, image ⊆ X_j, and feasibility of recommendations.
    pub fn validate(&self, env: &Environment) -> Result<(), ContractError> {
        let p = spec(env, self.principal)?;
        let nx = p.xs().map(|x| x.len()).unwrap_or(0);
        if self.messages.is_empty() {
            return Err(ContractError::EmptyMenu);
        }
        for m in &self.messages {
            if m.x >= nx {
                return Err(ContractError::Action(m.x));
            }
            if let Some(y) = m.rec {
                if !p.feasible(m.x).contains(&y) {
                    return Err(ContractError::Infeasible(m.x, y));
                }
            }
        }
        Ok(())
    }

    pub fn describe(&self, env: &Environment) -> String {
        let p = &env.principals[self.principal];
        let menu: Vec<String> = self.image().into_iter().map(|x| x_label(p, x)).collect();
        let kind = match self.kind {
            MechanismKind::MenuRec => "MenuRec",
            MechanismKind::Submenu => "Submenu",
            MechanismKind::PlainMenu => "PlainMenu",
            MechanismKind::General => "General",
        };
        format!("{kind}({{{}}})", menu.join(","))
    }
}

/// Witness that `G'` refines `G`: a surjection `iota: M' -> M` preserving the
/// assigned action, and a right inverse `M -> M'`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Refinement {
    pub iota: Vec<usize>,
    pub right_inverse: Vec<usize>,
}

/// Searches for an action-preserving surjection from `fine`'s messages onto
/// `coarse`'s messages.
pub fn refines(fine: &Mechanism, coarse: &Mechanism) -> Option<Refinement> {
    if fine.principal != coarse.principal || fine.len() < coarse.len() {
        return None;
    }
    let mut iota = vec![usize::MAX; fine.len()];
    let mut right_inverse = vec![usize::MAX; coarse.len()];
    for x in fine.image().union(&coarse.image()) {
        let src = fine.messages_above(*x);
        let dst = coarse.messages_above(*x);
        if dst.is_empty() || src.len() < dst.len() {
            return None;
        }
        for (k, m) in src.iter().enumerate() {
            let target = dst[k.min(dst.len() - 1)];
            iota[*m] = target;
            if k < dst.len() {
                right_inverse[target] = *m;
            }
        }
    }
    Some(Refinement { iota, right_inverse })
}

pub fn canonical_counterpart(env: &Environment, g: &Mechanism) -> Result<Mechanism, ContractError> {
    let menu: Vec<usize> = g.image().into_iter().collect();
    Mechanism::menu_rec(env, g.principal, &menu)
}

fn subsets(n: usize) -> Result<impl Iterator<Item = Vec<usize>>, ContractError> {
    if n > MAX_SUBSET_BITS {
        return Err(ContractError::TooLarge(n));
    }
    Ok((1u64..(1u64 << n)).map(move |mask| (0..n).filter(|i| mask >> i & 1 == 1).collect()))
}

/// One menu with recommendations per nonempty menu, in bitmask order.
pub fn enumerate_gstar(env: &Environment, j: usize) -> Result<Vec<Mechanism>, ContractError> {
    let nx = spec(env, j)?.xs().map(|x| x.len()).unwrap_or(0);
    subsets(nx)?.map(|menu| Mechanism::menu_rec(env, j, &menu)).collect()
}

/// Every nonempty set of feasible pairs, in bitmask order over Z_j.
pub fn enumerate_gsharp(env: &Environment, j: usize) -> Result<Vec<Mechanism>, ContractError> {
    let z = spec(env, j)?.pairs();
    subsets(z.len())?
        .map(|idx| {
            let pairs: Vec<(usize, usize)> = idx.iter().map(|i| z[*i]).collect();
            Mechanism::submenu(env, j, &pairs)
        })
        .collect()
}

/// Menus with recommendations followed by the plain menus that contain a
/// recommendation-rich action, each block in bitmask order.
pub fn enumerate_private(env: &Environment, j: usize) -> Result<Vec<Mechanism>, ContractError> {
    let p = spec(env, j)?;
    let nx = p.xs().map(|x| x.len()).unwrap_or(0);
    let mut out = enumerate_gstar(env, j)?;
    for menu in subsets(nx)? {
        if menu.iter().any(|x| p.feasible(*x).len() >= 2) {
            out.push(Mechanism::plain(env, j, &menu)?);
        }
    }
    Ok(out)
}

/// An environment in which the menu `menu` of principal `j` is the unique
/// contract image compatible with a reference allocation.
#[derive(Debug, Clone)]
pub struct NecessityInstance {
    pub env: Environment,
    pub principal: usize,
    pub menu: Vec<usize>,
    /// phi[t]: the contractible action assigned to type t.
    pub phi: Vec<usize>,
    /// Reference contracts: the menu for `principal`, the first action for others.
    pub contracts: Vec<Mechanism>,
    /// Message profile sent by each type under the reference contracts.
    pub messages: Vec<Vec<usize>>,
    pub reference: Allocation,
}

/// Builds the payoff environment on the skeleton's types and action sets:
/// off-menu actions give the agent 8 and every principal -8; on-menu,
/// everyone gets 1 when `x_j = phi(theta)` and 0 otherwise.
pub fn necessity_environment(skeleton: &Environment, j: usize, menu: &[usize]) -> Result<NecessityInstance, ContractError> {
    let types = skeleton.types.finite().map_err(|_| ContractError::NotFinite(j))?.to_vec();
    for k in 0..skeleton.n_principals() {
        spec(skeleton, k)?;
    }
    let p = spec(skeleton, j)?;
    check_menu(p, menu)?;
    let menu = sorted_unique(menu);
    if types.len() < menu.len() {
        return Err(ContractError::TooFewTypes {
            needed: menu.len(),
            found: types.len(),
        });
    }
    let phi: Vec<usize> = (0..types.len()).map(|t| menu[t % menu.len()]).collect();

    let n = skeleton.n_principals();
    let zs: Vec<Vec<(usize, usize)>> = skeleton.principals.iter().map(|p| p.pairs()).collect();
    let sizes: Vec<usize> = zs.iter().map(|z| z.len()).collect();
    let total: usize = sizes.iter().product();
    let mut table = PayoffTable::default();
    for (t, _) in types.iter().enumerate() {
        for flat in 0..total {
            let profile = crate::env::unflatten(flat, &sizes);
            let xj = zs[j][profile[j]].0;
            let (u, v) = if !menu.contains(&xj) {
                (8.0, -8.0)
            } else if xj == phi[t] {
                (1.0, 1.0)
            } else {
                (0.0, 0.0)
            };
            table.insert(t, profile, u, vec![v; n]);
        }
    }
    let env = Environment {
        types: skeleton.types.clone(),
        principals: skeleton.principals.clone(),
        payoffs: PayoffModel {
            kind: PayoffKind::Table(table),
            outside: OutsideOption::default(),
        },
        observability: skeleton.observability,
    };

    let mut contracts = Vec::with_capacity(n);
    for k in 0..n {
        if k == j {
            contracts.push(Mechanism::menu_rec(&env, k, &menu)?);
        } else {
            contracts.push(Mechanism::menu_rec(&env, k, &[0])?);
        }
    }
    let mut messages = Vec::with_capacity(types.len());
    let mut per_type = Vec::with_capacity(types.len());
    for x in &phi {
        let mut profile = Vec::with_capacity(n);
        let mut pairs = Vec::with_capacity(n);
        for (k, c) in contracts.iter().enumerate() {
            let want_x = if k == j { *x } else { 0 };
            let m = c.messages_above(want_x)[0];
            profile.push(m);
            pairs.push((want_x, c.messages[m].rec.expect("menu message")));
        }
        messages.push(profile);
        per_type.push(vec![(Outcome::Trade(pairs), 1.0)]);
    }
    Ok(NecessityInstance {
        env,
        principal: j,
        menu,
        phi,
        contracts,
        messages,
        reference: Allocation { per_type },
    })
}

/// A skeleton with `types` equally likely types, a principal with
/// `nx` contractible actions (one discretionary action each), and optionally
/// a second principal with two contractible actions.
pub fn necessity_skeleton(types: usize, nx: usize, second_principal: bool) -> Environment {
    let values: Vec<f64> = (0..types).map(|t| t as f64).collect();
    let xs: Vec<String> = (0..nx).map(|i| format!("a{i}")).collect();
    let xs: Vec<&str> = xs.iter().map(|s| s.as_str()).collect();
    let mut principals = vec![PrincipalSpec::finite(
        ActionSet::labels(&xs),
        ActionSet::labels(&["y0"]),
        vec![vec![0]; nx],
    )];
    if second_principal {
        principals.push(PrincipalSpec::finite(
            ActionSet::labels(&["b0", "b1"]),
            ActionSet::labels(&["w0"]),
            vec![vec![0]; 2],
        ));
    }
    Environment {
        types: TypeSpace::uniform_finite(&values),
        principals,
        payoffs: PayoffModel {
            kind: PayoffKind::Table(PayoffTable::default()),
            outside: OutsideOption::default(),
        },
        observability: Observability::Public,
    }
}

/// The two-principal private-contracting environment in which a plain menu
/// is a safe profitable deviation.
#[derive(Debug, Clone)]
pub struct PlainMenuScenario {
    pub env: Environment,
    /// The deviating principal (index 0) and the other principal (index 1).
    pub deviator: usize,
    pub kappa: f64,
    /// Contractible indices of principal 0: the rich action, the auxiliary
    /// actions, and the off-menu action.
    pub rich_x: usize,
    pub off_menu_x: usize,
    pub menu: Vec<usize>,
    /// Separating contracts (menus with recommendations).
    pub contracts: Vec<Mechanism>,
    /// Message profile per type under the separating contracts.
    pub messages: Vec<Vec<usize>>,
    /// The plain-menu deviation of principal 0.
    pub deviation: Mechanism,
}

/// Builds the scenario with `aux` auxiliary menu items (and one auxiliary
/// state for each). Types are `theta1, theta2, aux1, ...` with weight kappa.
pub fn plain_menu_scenario(aux: usize) -> PlainMenuScenario {
    let n_types = 2 + aux;
    let kappa = 1.0 / n_types as f64;
    let big = 100.0 / kappa;
    let mut types = vec![TypePoint::new("theta1", 1.0, kappa), TypePoint::new("theta2", 2.0, kappa)];
    for i in 0..aux {
        types.push(TypePoint::new(format!("aux{}", i + 1), (3 + i) as f64, kappa));
    }

    // Principal 0: rich action, auxiliary actions, off-menu action.
    let mut xs = vec!["xr".to_string()];
    xs.extend((0..aux).map(|i| format!("xa{}", i + 1)));
    xs.push("xo".into());
    let xs_ref: Vec<&str> = xs.iter().map(|s| s.as_str()).collect();
    let mut feas = vec![vec![1, 2]];
    feas.extend((0..=aux).map(|_| vec![0]));
    let p0 = PrincipalSpec::finite(ActionSet::labels(&xs_ref), ActionSet::labels(&["y0", "y1", "y2"]), feas);
    let p1 = PrincipalSpec::finite(ActionSet::labels(&["xk"]), ActionSet::labels(&["a1", "a2"]), vec![vec![0, 1]]);
    let z0 = p0.pairs();
    let z1 = p1.pairs();
    let off = aux + 1;

    let mut table = PayoffTable::default();
    for t in 0..n_types {
        for (i0, (x, y)) in z0.iter().enumerate() {
            for (i1, (_, ak)) in z1.iter().enumerate() {
                // (agent = principal 1, principal 0)
                let (common, dev) = if *x == off {
                    (big, -big)
                } else if t >= 2 {
                    let target = t - 1;
                    if *x == target {
                        (big, big)
                    } else {
                        (-big, -big)
                    }
                } else if *x != 0 {
                    (-big, -big)
                } else {
                    match (t, *y, *ak) {
                        (_, 1, 0) => (2.0, 2.0),
                        (_, 1, 1) => (0.0, 0.0),
                        (0, 2, _) => (0.0, -big),
                        (1, 2, 0) => (0.0, 0.0),
                        (1, 2, 1) => (2.0, 1.0),
                        _ => unreachable!("pairs above the rich action"),
                    }
                };
                table.insert(t, vec![i0, i1], common, vec![dev, common]);
            }
        }
    }
    let env = Environment {
        types: TypeSpace::Finite(types),
        principals: vec![p0, p1],
        payoffs: PayoffModel {
            kind: PayoffKind::Table(table),
            outside: OutsideOption::None,
        },
        observability: Observability::Private,
    };
    let menu: Vec<usize> = (0..=aux).collect();
    let c0 = Mechanism::menu_rec(&env, 0, &menu).expect("menu is valid");
    let c1 = Mechanism::menu_rec(&env, 1, &[0]).expect("menu is valid");
    let find = |c: &Mechanism, x: usize, y: usize| {
        c.messages
            .iter()
            .position(|m| m.x == x && m.rec == Some(y))
            .expect("message exists")
    };
    let mut messages = vec![
        vec![find(&c0, 0, 1), find(&c1, 0, 0)],
        vec![find(&c0, 0, 2), find(&c1, 0, 1)],
    ];
    for i in 0..aux {
        messages.push(vec![find(&c0, i + 1, 0), find(&c1, 0, 0)]);
    }
    let deviation = Mechanism::plain(&env, 0, &[0]).expect("rich action");
    PlainMenuScenario {
        env,
        deviator: 0,
        kappa,
        rich_x: 0,
        off_menu_x: off,
        menu,
        contracts: vec![c0, c1],
        messages,
        deviation,
    }
}
