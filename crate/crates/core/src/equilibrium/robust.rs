use serde::Serialize;

use super::search::enumerate_frozen;
use super::{enumerate_equilibria, principal_value, Assessment, Found, Result, SearchOptions};
use crate::contracts::{enumerate_gstar, enumerate_private, Mechanism};
use crate::env::{Environment, Observability};

#[derive(Debug, Clone, Default)]
pub struct RobustOptions {
    pub search: SearchOptions,
    /// Deviation space per principal; defaults to the canonical space of the
    /// environment's observability mode.
    pub deviations: Option<Vec<Vec<Mechanism>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationOutcome {
    pub principal: usize,
    pub deviation: String,
    pub continuations: usize,
    pub min_value: Option<f64>,
    pub max_value: Option<f64>,
    pub safe_profitable: bool,
    /// No continuation equilibrium exists in the search space.
    pub no_continuation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustReport {
    pub values: Vec<f64>,
    pub outcomes: Vec<DeviationOutcome>,
}

impl RobustReport {
    pub fn safe_profitable(&self) -> impl Iterator<Item = &DeviationOutcome> {
        self.outcomes.iter().filter(|o| o.safe_profitable)
    }

    pub fn no_continuation(&self) -> impl Iterator<Item = &DeviationOutcome> {
        self.outcomes.iter().filter(|o| o.no_continuation)
    }

    pub fn robust(&self) -> bool {
        self.safe_profitable().next().is_none()
    }
}

/// Continuation equilibria after principal `j` switches to `deviation`. In
/// private mode the other principals' continuation and beliefs stay frozen.
pub fn continuations_after(
    env: &Environment,
    a: &Assessment,
    j: usize,
    deviation: &Mechanism,
    opts: &SearchOptions,
) -> Result<Vec<Found>> {
    match env.observability {
        Observability::Public => {
            let mut contracts = a.contracts.clone();
            contracts[j] = deviation.clone();
            enumerate_equilibria(env, &contracts, opts)
        }
        Observability::Private => enumerate_frozen(env, a, j, deviation, opts),
    }
}

/// No-safe-deviation check. A deviation is safe-profitable iff continuation
/// equilibria exist after it and each gives the deviator more than its
/// equilibrium value plus `tol`.
pub fn check_robust(env: &Environment, a: &Assessment, opts: &RobustOptions) -> Result<RobustReport> {
    let n = env.n_principals();
    let values = (0..n).map(|j| principal_value(env, a, j)).collect::<Result<Vec<_>>>()?;
    let tol = opts.search.tol;
    let mut outcomes = Vec::new();
    for j in 0..n {
        let space = match &opts.deviations {
            Some(d) => d[j].clone(),
            None => match env.observability {
                Observability::Public => enumerate_gstar(env, j)?,
                Observability::Private => enumerate_private(env, j)?,
            },
        };
        for dev in &space {
            let found = continuations_after(env, a, j, dev, &opts.search)?;
            let vals: Vec<f64> = found.iter().map(|f| f.values[j]).collect();
            let min_value = vals.iter().copied().reduce(f64::min);
            let max_value = vals.iter().copied().reduce(f64::max);
            outcomes.push(DeviationOutcome {
                principal: j,
                deviation: dev.describe(env),
                continuations: found.len(),
                min_value,
                max_value,
                safe_profitable: min_value.is_some_and(|v| v > values[j] + tol),
                no_continuation: found.is_empty(),
            });
        }
    }
    Ok(RobustReport { values, outcomes })
}
