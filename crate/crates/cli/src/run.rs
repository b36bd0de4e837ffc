use std::fmt::Display;
use std::time::Instant;

use contract_forge_core::agency::{self, AgencyProblem};
use contract_forge_core::contracts::{
    enumerate_gsharp, enumerate_gstar, enumerate_private, necessity_environment, necessity_skeleton,
    plain_menu_scenario, Mechanism,
};
use contract_forge_core::env::{ActionSet, Environment, Feasibility, Observability, OutsideOption, PayoffKind};
use contract_forge_core::equilibrium::{
    allocation_state_values, check_continuation, check_robust, continuations_after, enumerate_equilibria,
    necessity_reference, plain_menu_reference, truthful_assessment, OffPathPolicy, RobustOptions, RobustReport,
    SearchOptions, DEFAULT_TOL,
};
use contract_forge_core::expr::{BinOp, Expr};
use contract_forge_core::revisable::{check_gamma_equal, ms_lift, ms_thresholds, FinalAllocation, GridSpec};
use contract_forge_core::single::{self, SingleProblem};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::report::{Cell, RunReport, Table};
use crate::scenario::{self, Command, NecessityOptions, Scenario};
use crate::CliError;

/// Command-line settings that take precedence over the scenario file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub timing: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub tables: Vec<Table>,
}

impl RunOutput {
    pub fn exit_code(&self) -> i32 {
        i32::from(!self.report.findings.is_empty())
    }
}

struct Outcome {
    results: Value,
    tables: Vec<Table>,
    findings: Vec<String>,
    warnings: Vec<String>,
}

impl Outcome {
    fn new(results: Value) -> Self {
        Outcome {
            results,
            tables: Vec::new(),
            findings: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

/// SHA-256 of the canonical JSON of the effective configuration. Thread
/// count and output directory do not enter the hash.
pub fn config_hash(s: &Scenario, o: &Overrides) -> String {
    let mut file = s.file.clone();
    file.options.threads = None;
    file.options.out_dir = None;
    if o.tol.is_some() {
        file.options.tol = o.tol;
    }
    let canonical = json!({ "scenario": file, "seed": o.seed }).to_string();
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn run(s: &Scenario, o: &Overrides) -> Result<RunOutput, CliError> {
    let cmd = s.file.command;
    let start = Instant::now();
    let tol = o.tol.or(s.file.options.tol);
    let out = match cmd {
        Command::SolveSingle => solve_single(s),
        Command::SolveAgency => solve_agency(s, tol),
        Command::RevisableCheck => revisable_check(s, tol),
        Command::EnumerateCanonical => enumerate_canonical(s),
        Command::CheckEquilibrium => check_equilibrium(s, tol),
        Command::RobustCheck => robust_check(s, tol, false),
        Command::PrivateCheck => robust_check(s, tol, true),
        Command::NecessityEnv => necessity_env(s, tol),
        Command::PlainMenuDemo => plain_menu_demo(s, tol),
    }
    .map_err(|e| match e {
        CliError::Command { .. } => e,
        other => CliError::Command {
            command: cmd.name().to_string(),
            message: other.to_string(),
        },
    })?;
    let mut warnings = out.warnings;
    if o.seed.is_some() {
        warnings.push(format!("--seed has no effect on {}", cmd.name()));
    }
    Ok(RunOutput {
        report: RunReport {
            command: cmd.name().to_string(),
            config_hash: config_hash(s, o),
            wall_time: o.timing.then(|| start.elapsed().as_secs_f64()),
            results: out.results,
            findings: out.findings,
            warnings,
        },
        tables: out.tables,
    })
}

fn fail<E: Display>(e: E) -> CliError {
    CliError::Invalid(e.to_string())
}

fn need_env(s: &Scenario) -> Result<&Environment, CliError> {
    s.environment
        .as_ref()
        .ok_or_else(|| CliError::Invalid("this command needs an environment block".into()))
}

fn search_options(s: &Scenario, tol: Option<f64>, default: SearchOptions) -> SearchOptions {
    let o = &s.file.options;
    SearchOptions {
        policies: o.policies.clone().unwrap_or(default.policies),
        mixtures: o.mixtures.unwrap_or(default.mixtures),
        tol: tol.unwrap_or(default.tol),
        ..default
    }
}

fn boxes(env: &Environment, j: usize) -> Result<((f64, f64), (f64, f64)), CliError> {
    let p = &env.principals[j];
    let x = match p.contractible {
        ActionSet::Interval { lo, hi } => (lo, hi),
        ActionSet::Finite(_) => return Err(CliError::Invalid(format!("principal {j}: contractible actions must be an interval"))),
    };
    let y = match (&p.feasibility, &p.discretionary) {
        (Feasibility::Box { lo, hi }, _) => (*lo, *hi),
        (_, ActionSet::Interval { lo, hi }) => (*lo, *hi),
        _ => return Err(CliError::Invalid(format!("principal {j}: discretionary actions must be an interval"))),
    };
    Ok((x, y))
}

fn is_zero(e: &Expr) -> bool {
    matches!(e, Expr::Num(v) if *v == 0.0)
}

fn solve_single(s: &Scenario) -> Result<Outcome, CliError> {
    let env = need_env(s)?;
    if env.n_principals() != 1 {
        return Err(CliError::Invalid("solve-single needs exactly one principal".into()));
    }
    let PayoffKind::Expressions { agent, principals } = &env.payoffs.kind else {
        return Err(CliError::Invalid("solve-single needs expression payoffs".into()));
    };
    // Staying means u >= outside value; solve on the difference.
    let u = match &env.payoffs.outside {
        OutsideOption::None => return Err(CliError::Invalid("solve-single needs an outside option".into())),
        OutsideOption::Expr(e) if is_zero(e) => agent.clone(),
        OutsideOption::Expr(e) => Expr::Bin(BinOp::Sub, Box::new(agent.clone()), Box::new(e.clone())),
    };
    let (x_box, y_box) = boxes(env, 0)?;
    let mut p = SingleProblem {
        x_box,
        y_box,
        ..SingleProblem::new(u, principals[0].clone(), env.types.clone())
    };
    let opts = s.file.options.single.clone();
    if let Some(o) = &opts {
        p.grid = o.grid.unwrap_or(p.grid);
        p.panels = o.panels.unwrap_or(p.panels);
        p.width = o.width.unwrap_or(p.width);
    }
    let r = single::solve(&p).map_err(fail)?;
    let kind = single::cutoff(&p, r.x, r.y).map_err(fail)?;
    let mut results = json!({
        "x": r.x,
        "y": r.y,
        "cutoff": r.cutoff,
        "cutoff_kind": kind,
        "value": r.value,
        "stay_probability": r.stay_probability,
        "no_trade": r.no_trade,
    });
    let mut out = Outcome::new(Value::Null);
    if let Some([x, y]) = opts.and_then(|o| o.probe) {
        let (lo, hi) = env.types.bounds();
        let belief = match &env.types {
            contract_forge_core::env::TypeSpace::Finite(_) => env.types.prior(),
            _ => contract_forge_core::env::Belief::uniform_interval(lo, hi, 1025),
        };
        let probe = single::rent_probe(&p, x, y, &belief, &single::default_probe_steps()).map_err(fail)?;
        results["probe"] = json!(probe);
    }
    out.results = results;
    let mut outer = Table::new("outer_trace", &["x", "value"]);
    for (x, v) in &r.outer_trace {
        outer.push(vec![(*x).into(), (*v).into()]);
    }
    let mut inner = Table::new("inner_trace", &["y", "value"]);
    for (y, v) in &r.inner_trace {
        inner.push(vec![(*y).into(), (*v).into()]);
    }
    out.tables = vec![outer, inner];
    if r.no_trade {
        out.warnings.push("no offer earns a positive profit; the principal does not trade".into());
    }
    Ok(out)
}

fn solve_agency(s: &Scenario, tol: Option<f64>) -> Result<Outcome, CliError> {
    let env = need_env(s)?;
    let bil = s
        .bilateral
        .as_ref()
        .filter(|b| b.agents.len() == 2)
        .ok_or_else(|| CliError::Invalid("solve-agency needs bilateral payoffs for two principals".into()))?;
    match &env.payoffs.outside {
        OutsideOption::Expr(e) if is_zero(e) => {}
        _ => return Err(CliError::Invalid("solve-agency needs the zero outside option".into())),
    }
    let o = s
        .file
        .options
        .agency
        .as_ref()
        .ok_or_else(|| CliError::Invalid("solve-agency needs options.agency".into()))?;
    let (x_box, y_box) = boxes(env, 0)?;
    if boxes(env, 1)? != (x_box, y_box) {
        return Err(CliError::Invalid("solve-agency needs identical action boxes".into()));
    }
    let base = AgencyProblem::worked(o.beta);
    let p = AgencyProblem {
        beta: o.beta,
        u: [bil.agents[0].clone(), bil.agents[1].clone()],
        v: [bil.principals[0].clone(), bil.principals[1].clone()],
        types: env.types.clone(),
        x_box,
        y_box,
        grid: o.grid.unwrap_or(base.grid),
        damping: o.damping.unwrap_or(base.damping),
        start: o.start.unwrap_or(base.start),
        max_iter: o.max_iter.unwrap_or(base.max_iter),
        tol: tol.unwrap_or(base.tol),
        ..base
    };
    let eq = agency::fixed_point(&p).map_err(fail)?;
    let mut out = Outcome::new(json!({
        "x": eq.x,
        "y": eq.y,
        "cutoffs": eq.cutoffs,
        "values": eq.values,
        "residual": eq.residual,
        "iterations": eq.iterations,
    }));
    let mut traj = Table::new("trajectory", &["iteration", "x1", "x2"]);
    for (i, x) in eq.trajectory.iter().enumerate() {
        traj.push(vec![i.into(), x[0].into(), x[1].into()]);
    }
    let points = o.br_points.clone().unwrap_or_else(|| vec![0.0, 1.0, 2.0, 3.0]);
    let mut br = Table::new("best_response", &["principal", "x_other", "best_response"]);
    for j in 0..2 {
        for xo in &points {
            br.push(vec![(j + 1).into(), (*xo).into(), agency::best_response(&p, j, *xo).map_err(fail)?.into()]);
        }
    }
    let menus = o.menus.clone().unwrap_or_else(|| vec![agency::default_menu()]);
    let robust = agency::robustness_check(&p, &eq, &menus, DEFAULT_TOL).map_err(fail)?;
    let mut dev = Table::new(
        "deviations",
        &["principal", "menu", "best_offer", "best_value", "equilibrium_value", "violation"],
    );
    for m in &robust.outcomes {
        let menu: Vec<String> = m.menu.iter().map(|v| crate::report::fmt_num(*v)).collect();
        dev.push(vec![
            (m.principal + 1).into(),
            menu.join(" ").into(),
            m.best_offer.into(),
            m.best_value.into(),
            m.equilibrium_value.into(),
            m.violation.into(),
        ]);
        if m.violation {
            out.findings.push(format!(
                "profitable menu deviation for principal {}: offer {} earns {} > {}",
                m.principal + 1,
                m.best_offer,
                m.best_value,
                m.equilibrium_value
            ));
        }
    }
    out.results["robust"] = json!(robust.robust());
    out.tables = vec![traj, br, dev];
    Ok(out)
}

fn grid_spec(s: &Scenario) -> Result<(GridSpec, usize), CliError> {
    let r = s
        .file
        .options
        .revisable
        .as_ref()
        .ok_or_else(|| CliError::Invalid("revisable-check needs options.revisable".into()))?;
    Ok((
        GridSpec {
            types: r.types.clone(),
            z_lo: r.z_lo,
            z_hi: r.z_hi,
            z_points: r.z_points,
            sender: scenario::payoff_1d(&r.sender, "options.revisable.sender")?,
            receiver: scenario::payoff_1d(&r.receiver, "options.revisable.receiver")?,
        },
        r.alpha_steps,
    ))
}

fn gamma_table(name: &str, spec: &GridSpec, set: &[FinalAllocation]) -> Table {
    let mut sorted: Vec<&FinalAllocation> = set.iter().collect();
    sorted.sort_by_key(|a| a.key(spec.z_lo, spec.step()));
    let mut t = Table::new(name, &["allocation", "type", "z", "probability", "regime"]);
    for (i, a) in sorted.iter().enumerate() {
        for (ty, dist) in a.per_type.iter().enumerate() {
            for (z, p) in dist {
                t.push(vec![i.into(), spec.types[ty].into(), (*z).into(), (*p).into(), "trade".into()]);
            }
        }
    }
    t
}

fn revisable_check(s: &Scenario, tol: Option<f64>) -> Result<Outcome, CliError> {
    let (spec, alpha_steps) = grid_spec(s)?;
    let opts = search_options(s, tol, SearchOptions::all_policies());
    let r = check_gamma_equal(&spec, alpha_steps, &opts).map_err(fail)?;
    let mut out = Outcome::new(json!({
        "alpha_steps": r.alpha_steps,
        "alpha": alpha_steps as f64 * spec.step(),
        "gamma_alpha": r.gamma_alpha.len(),
        "gamma_zero": r.gamma_zero.len(),
        "equal": r.equal,
        "only_in_alpha": r.only_in_alpha,
        "only_in_zero": r.only_in_zero,
        "collapse_failures": r.collapse_failures,
        "lift_failures": r.lift_failures,
        "menus_alpha": r.menus_alpha,
        "menus_zero": r.menus_zero,
        "passed": r.passed(),
    }));
    if !r.passed() {
        out.findings.push(format!(
            "equivalence fails: {} allocations only with revisions, {} only without, {} collapse and {} lift failures",
            r.only_in_alpha, r.only_in_zero, r.collapse_failures, r.lift_failures
        ));
    }
    out.tables.push(gamma_table("gamma_alpha", &spec, &r.gamma_alpha));
    out.tables.push(gamma_table("gamma_zero", &spec, &r.gamma_zero));
    if let Some(d) = s.file.options.revisable.as_ref().and_then(|r| r.delegation.as_ref()) {
        let th = ms_thresholds(d.k, d.a).map_err(fail)?;
        let n = d.points.max(2);
        let thetas: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let rows = ms_lift(d.k, d.a, d.alpha, &thetas).map_err(fail)?;
        let mut t = Table::new("delegation", &["theta", "z", "ideal", "baseline", "revision", "optimum", "ok"]);
        for r in &rows {
            t.push(vec![
                r.theta.into(),
                r.z.into(),
                r.ideal.into(),
                r.baseline.into(),
                r.revision.into(),
                r.optimum.into(),
                r.ok.into(),
            ]);
        }
        let failed = rows.iter().filter(|r| !r.ok).count();
        if failed > 0 {
            out.findings.push(format!("{failed} delegation types do not lift to their constrained optimum"));
        }
        out.results["delegation"] = json!({ "thresholds": th, "types": rows.len(), "failed": failed });
        out.tables.push(t);
    }
    Ok(out)
}

fn describe_contracts(env: &Environment, cs: &[Mechanism]) -> Value {
    let p = |j: usize| &env.principals[j];
    Value::Array(
        cs.iter()
            .map(|c| {
                let xs = p(c.principal).xs().unwrap_or(&[]);
                let ys = p(c.principal).ys().unwrap_or(&[]);
                json!({
                    "contract": c.describe(env),
                    "messages": c.messages.iter().map(|m| json!([
                        m.label,
                        xs[m.x].label,
                        m.rec.map(|y| ys[y].label.clone()),
                    ])).collect::<Vec<_>>(),
                })
            })
            .collect(),
    )
}

fn enumerate_canonical(s: &Scenario) -> Result<Outcome, CliError> {
    let env = need_env(s)?;
    let mut per = Vec::new();
    let mut t = Table::new("contracts", &["principal", "space", "index", "contract", "message", "x", "rec"]);
    for j in 0..env.n_principals() {
        let spaces = [
            ("gstar", enumerate_gstar(env, j).map_err(fail)?),
            ("gsharp", enumerate_gsharp(env, j).map_err(fail)?),
            ("private", enumerate_private(env, j).map_err(fail)?),
        ];
        let mut entry = serde_json::Map::new();
        entry.insert("principal".into(), json!(j + 1));
        for (name, cs) in &spaces {
            entry.insert(format!("{name}_count"), json!(cs.len()));
            entry.insert((*name).into(), describe_contracts(env, cs));
            let xs = env.principals[j].xs().unwrap_or(&[]);
            let ys = env.principals[j].ys().unwrap_or(&[]);
            for (i, c) in cs.iter().enumerate() {
                for m in &c.messages {
                    t.push(vec![
                        (j + 1).into(),
                        (*name).into(),
                        i.into(),
                        c.describe(env).into(),
                        m.label.clone().into(),
                        xs[m.x].label.clone().into(),
                        m.rec.map(|y| ys[y].label.clone()).unwrap_or_default().into(),
                    ]);
                }
            }
        }
        per.push(Value::Object(entry));
    }
    let mut out = Outcome::new(json!({ "principals": per }));
    out.tables.push(t);
    Ok(out)
}

fn first_policy(s: &Scenario) -> OffPathPolicy {
    s.file
        .options
        .policies
        .as_ref()
        .and_then(|p| p.first().copied())
        .unwrap_or(OffPathPolicy::Prior)
}

fn check_equilibrium(s: &Scenario, tol: Option<f64>) -> Result<Outcome, CliError> {
    let env = need_env(s)?;
    let contracts = scenario::contracts(env, s.file.options.contracts.as_deref())?;
    let tol = tol.unwrap_or(DEFAULT_TOL);
    if let Some(st) = &s.file.options.strategy {
        let strategy = scenario::strategy(env, &contracts, st)?;
        let a = truthful_assessment(env, contracts, strategy, first_policy(s)).map_err(fail)?;
        let r = check_continuation(env, &a, tol).map_err(fail)?;
        let mut out = Outcome::new(json!({ "passed": r.passed(), "report": r }));
        if !r.passed() {
            out.findings.push("the assessment fails the continuation checks".into());
        }
        out.tables.push(allocation_table("allocation", env, &[(0, &r.allocation)]));
        return Ok(out);
    }
    let opts = search_options(s, Some(tol), SearchOptions::default());
    let found = enumerate_equilibria(env, &contracts, &opts).map_err(fail)?;
    let list: Vec<Value> = found
        .iter()
        .map(|f| json!({ "policy": f.policy, "values": f.values, "allocation": f.allocation }))
        .collect();
    let mut out = Outcome::new(json!({
        "contracts": describe_contracts(env, &contracts),
        "equilibria": found.len(),
        "found": list,
    }));
    if found.is_empty() {
        out.findings.push("no continuation equilibrium found".into());
    }
    let allocs: Vec<_> = found.iter().enumerate().map(|(i, f)| (i, &f.allocation)).collect();
    out.tables.push(allocation_table("equilibria", env, &allocs));
    Ok(out)
}

fn allocation_table(name: &str, env: &Environment, allocs: &[(usize, &contract_forge_core::env::Allocation)]) -> Table {
    let labels: Vec<String> = env
        .types
        .finite()
        .map(|ts| ts.iter().map(|t| t.label.clone()).collect())
        .unwrap_or_default();
    let mut t = Table::new(name, &["equilibrium", "type", "outcome", "probability"]);
    for (i, a) in allocs {
        for (ty, dist) in a.per_type.iter().enumerate() {
            for (o, p) in dist {
                let label = labels.get(ty).cloned().unwrap_or_else(|| ty.to_string());
                t.push(vec![(*i).into(), label.into(), o.to_string().into(), (*p).into()]);
            }
        }
    }
    t
}

fn deviations_table(r: &RobustReport) -> Table {
    let mut t = Table::new(
        "deviations",
        &["principal", "deviation", "continuations", "min_value", "max_value", "safe_profitable", "no_continuation"],
    );
    let opt = |v: Option<f64>| v.map(Cell::from).unwrap_or(Cell::Text(String::new()));
    for o in &r.outcomes {
        t.push(vec![
            (o.principal + 1).into(),
            o.deviation.clone().into(),
            o.continuations.into(),
            opt(o.min_value),
            opt(o.max_value),
            o.safe_profitable.into(),
            o.no_continuation.into(),
        ]);
    }
    t
}

fn robust_findings(out: &mut Outcome, r: &RobustReport) {
    for d in r.safe_profitable() {
        out.findings.push(format!("safe-profitable deviation: {}", d.deviation));
    }
    let none = r.no_continuation().count();
    if none > 0 {
        out.warnings.push(format!("{none} deviations admit no continuation equilibrium in the search space"));
    }
}

fn robust_check(s: &Scenario, tol: Option<f64>, private: bool) -> Result<Outcome, CliError> {
    let env = need_env(s)?;
    if private && env.observability != Observability::Private {
        return Err(CliError::Invalid("private-check needs a private environment".into()));
    }
    let contracts = scenario::contracts(env, s.file.options.contracts.as_deref())?;
    let st = s
        .file
        .options
        .strategy
        .as_ref()
        .ok_or_else(|| CliError::Invalid("this command needs options.strategy".into()))?;
    let strategy = scenario::strategy(env, &contracts, st)?;
    let a = truthful_assessment(env, contracts, strategy, first_policy(s)).map_err(fail)?;
    let tol = tol.unwrap_or(DEFAULT_TOL);
    let cont = check_continuation(env, &a, tol).map_err(fail)?;
    let opts = RobustOptions {
        search: search_options(s, Some(tol), SearchOptions::all_policies()),
        deviations: None,
    };
    let r = check_robust(env, &a, &opts).map_err(fail)?;
    let mut out = Outcome::new(json!({
        "continuation_passed": cont.passed(),
        "values": r.values,
        "robust": r.robust(),
        "deviations": r.outcomes.len(),
    }));
    if !cont.passed() {
        out.findings.push("the reference assessment fails the continuation checks".into());
    }
    robust_findings(&mut out, &r);
    out.tables.push(deviations_table(&r));
    Ok(out)
}

fn necessity_env(s: &Scenario, tol: Option<f64>) -> Result<Outcome, CliError> {
    let o = s.file.options.necessity.clone().unwrap_or(NecessityOptions {
        types: 3,
        actions: 3,
        second_principal: false,
        menus: None,
    });
    let skeleton = necessity_skeleton(o.types, o.actions, o.second_principal);
    let menus = o.menus.clone().unwrap_or_else(|| {
        (1u32..1 << o.actions)
            .map(|mask| (0..o.actions).filter(|i| mask >> i & 1 == 1).collect())
            .collect()
    });
    let opts = search_options(s, tol, SearchOptions::all_policies());
    let mut t = Table::new("necessity", &["menu", "reference_passed", "values", "equilibria", "image_exact"]);
    let mut rows = Vec::new();
    let mut findings = Vec::new();
    for menu in &menus {
        let inst = necessity_environment(&skeleton, 0, menu).map_err(fail)?;
        let a = necessity_reference(&inst).map_err(fail)?;
        let r = check_continuation(&inst.env, &a, tol.unwrap_or(0.0)).map_err(fail)?;
        let mut hits = 0usize;
        let mut exact = true;
        for g in enumerate_gstar(&inst.env, 0).map_err(fail)? {
            let mut cs = inst.contracts.clone();
            cs[0] = g.clone();
            for f in enumerate_equilibria(&inst.env, &cs, &opts).map_err(fail)? {
                if f.allocation.approx_eq(&inst.reference, 0.0) {
                    hits += 1;
                    exact &= g.image().into_iter().collect::<Vec<_>>() == *menu;
                }
            }
        }
        let ok = r.passed() && r.values.iter().all(|v| *v == 1.0) && hits > 0 && exact;
        if !ok {
            findings.push(format!("menu {menu:?}: reference or image check fails"));
        }
        let label: Vec<String> = menu.iter().map(|x| x.to_string()).collect();
        let vals: Vec<String> = r.values.iter().map(|v| crate::report::fmt_num(*v)).collect();
        t.push(vec![label.join(" ").into(), r.passed().into(), vals.join(" ").into(), hits.into(), exact.into()]);
        rows.push(json!({ "menu": menu, "reference_passed": r.passed(), "values": r.values, "equilibria": hits, "image_exact": exact }));
    }
    let mut out = Outcome::new(json!({ "menus": rows }));
    out.findings = findings;
    out.tables.push(t);
    Ok(out)
}

fn plain_menu_demo(s: &Scenario, tol: Option<f64>) -> Result<Outcome, CliError> {
    let aux = s.file.options.plain_menu.as_ref().map_or(0, |p| p.aux);
    let tol = tol.unwrap_or(0.0);
    let sc = plain_menu_scenario(aux);
    let a = plain_menu_reference(&sc).map_err(fail)?;
    let cont = check_continuation(&sc.env, &a, tol).map_err(fail)?;
    let before = allocation_state_values(&sc.env, &cont.allocation, sc.deviator).map_err(fail)?;
    let search = search_options(s, Some(tol), SearchOptions::all_policies());
    let after = continuations_after(&sc.env, &a, sc.deviator, &sc.deviation, &search)
        .map_err(fail)?
        .iter()
        .map(|f| allocation_state_values(&sc.env, &f.allocation, sc.deviator))
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail)?;
    let r = check_robust(&sc.env, &a, &RobustOptions { search, deviations: None }).map_err(fail)?;
    let mut out = Outcome::new(json!({
        "continuation_passed": cont.passed(),
        "deviation": sc.deviation.describe(&sc.env),
        "state_values_before": before,
        "state_values_after": after,
        "values": r.values,
        "robust": r.robust(),
    }));
    if !cont.passed() {
        out.findings.push("the separating assessment fails the continuation checks".into());
    }
    robust_findings(&mut out, &r);
    out.tables.push(deviations_table(&r));
    Ok(out)
}
