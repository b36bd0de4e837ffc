//! Scenario files: JSON documents naming a command, an optional environment
//! and command options. Unknown fields are rejected everywhere.

use std::path::Path;

use contract_forge_core::contracts::Mechanism;
use contract_forge_core::env::{
    validate, ActionSet, ActionValue, Density, Environment, Feasibility, Observability, OutsideOption, PayoffKind,
    PayoffModel, PayoffTable, PrincipalSpec, TypePoint, TypeSpace, DEFAULT_GRID,
};
use contract_forge_core::equilibrium::{AgentChoice, AgentStrategy, OffPathPolicy};
use contract_forge_core::expr::{parse, Expr};
use contract_forge_core::revisable::Payoff1D;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SolveSingle,
    SolveAgency,
    RevisableCheck,
    EnumerateCanonical,
    CheckEquilibrium,
    RobustCheck,
    PrivateCheck,
    NecessityEnv,
    PlainMenuDemo,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SolveSingle => "solve-single",
            Command::SolveAgency => "solve-agency",
            Command::RevisableCheck => "revisable-check",
            Command::EnumerateCanonical => "enumerate-canonical",
            Command::CheckEquilibrium => "check-equilibrium",
            Command::RobustCheck => "robust-check",
            Command::PrivateCheck => "private-check",
            Command::NecessityEnv => "necessity-env",
            Command::PlainMenuDemo => "plain-menu-demo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<EnvironmentDto>,
    #[serde(default)]
    pub options: Options,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentDto {
    pub types: TypesDto,
    pub principals: Vec<PrincipalDto>,
    pub payoffs: PayoffsDto,
    /// Outside option expression in `theta`; `null` removes the exit option.
    #[serde(default = "default_outside")]
    pub outside: Option<String>,
    #[serde(default)]
    pub observability: Observability,
}

fn default_outside() -> Option<String> {
    Some("0".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TypesDto {
    Finite(Vec<TypeDto>),
    Interval {
        lo: f64,
        hi: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        density: Option<Density>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeDto {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub value: f64,
    /// Weights default to uniform; give all or none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ActionSetDto {
    Values(Vec<f64>),
    Labels(Vec<String>),
    Interval { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FeasibilityDto {
    /// Every discretionary action is feasible after every contractible one.
    All,
    /// Feasible discretionary indices per contractible index.
    Table(Vec<Vec<usize>>),
    Box { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrincipalDto {
    pub contractible: ActionSetDto,
    pub discretionary: ActionSetDto,
    #[serde(default = "feasibility_all")]
    pub feasibility: FeasibilityDto,
}

fn feasibility_all() -> FeasibilityDto {
    FeasibilityDto::All
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffsDto {
    /// Expressions over `x1.., y1.., theta`, or `x`, `y`, `theta` with one principal.
    Expressions { agent: String, principals: Vec<String> },
    /// Explicit payoffs per state and action-pair profile.
    Table(Vec<TableRowDto>),
    /// Per-principal agent utilities in `x`, `y`, `theta` and principal
    /// payoffs that may also use `xo` and `beta`.
    Bilateral { agents: Vec<String>, principals: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRowDto {
    /// Type label.
    pub state: String,
    /// One `[x index, y index]` pair per principal.
    pub profile: Vec<[usize; 2]>,
    pub agent: f64,
    pub principals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ContractDto {
    MenuRec(Vec<usize>),
    Plain(Vec<usize>),
    Submenu(Vec<[usize; 2]>),
    General(Vec<MessageDto>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageDto {
    pub label: String,
    pub x: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    /// Offer `[x, y]` to probe for extractable rent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgencyOptions {
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    /// Opponent offers at which best responses are tabulated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub br_points: Option<Vec<f64>>,
    /// Deviation menus for the robustness check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub menus: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Payoff1DDto {
    Quadratic { k: f64, a: f64 },
    /// Expression in `z` and `theta`.
    Expr(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelegationOptions {
    pub k: f64,
    pub a: f64,
    pub alpha: f64,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_points() -> usize {
    101
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevisableOptions {
    pub types: Vec<f64>,
    pub z_lo: f64,
    pub z_hi: f64,
    pub z_points: usize,
    pub sender: Payoff1DDto,
    pub receiver: Payoff1DDto,
    #[serde(default = "one")]
    pub alpha_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delegation: Option<DelegationOptions>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NecessityOptions {
    #[serde(default = "three")]
    pub types: usize,
    #[serde(default = "three")]
    pub actions: usize,
    #[serde(default)]
    pub second_principal: bool,
    /// Menus to build; every nonempty subset when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub menus: Option<Vec<Vec<usize>>>,
}

fn three() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlainMenuOptions {
    #[serde(default)]
    pub aux: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policies: Option<Vec<OffPathPolicy>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixtures: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    /// One contract per principal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contracts: Option<Vec<ContractDto>>,
    /// Per type, one message index per principal, or `null` to opt out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Vec<Option<Vec<usize>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single: Option<SingleOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agency: Option<AgencyOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revisable: Option<RevisableOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub necessity: Option<NecessityOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plain_menu: Option<PlainMenuOptions>,
}

/// Bilateral payoffs of a two-principal scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Bilateral {
    pub agents: Vec<Expr>,
    pub principals: Vec<Expr>,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub environment: Option<Environment>,
    pub bilateral: Option<Bilateral>,
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_scenario_str(&text)
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario, CliError> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| CliError::Schema {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    build(file)
}

pub fn build(file: ScenarioFile) -> Result<Scenario, CliError> {
    if file.schema_version != SCHEMA_VERSION {
        return Err(CliError::Invalid(format!(
            "schema_version {} is not supported (expected {SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    let (environment, bilateral) = match &file.environment {
        Some(e) => {
            let beta = file.options.agency.as_ref().map(|a| a.beta);
            let (env, bil) = build_environment(e, beta)?;
            (Some(env), bil)
        }
        None => (None, None),
    };
    if let Some(r) = &file.options.revisable {
        payoff_1d(&r.sender, "options.revisable.sender")?;
        payoff_1d(&r.receiver, "options.revisable.receiver")?;
    }
    Ok(Scenario {
        file,
        environment,
        bilateral,
    })
}

fn expr(src: &str, field: &str) -> Result<Expr, CliError> {
    parse(src).map_err(|e| CliError::Expression {
        field: field.to_string(),
        offset: e.offset,
        message: e.message,
    })
}

pub fn payoff_1d(p: &Payoff1DDto, field: &str) -> Result<Payoff1D, CliError> {
    Ok(match p {
        Payoff1DDto::Quadratic { k, a } => Payoff1D::Quadratic { k: *k, a: *a },
        Payoff1DDto::Expr(s) => Payoff1D::Expr(expr(s, field)?),
    })
}

fn types(t: &TypesDto) -> Result<TypeSpace, CliError> {
    match t {
        TypesDto::Interval { lo, hi, density, grid } => Ok(TypeSpace::Interval {
            lo: *lo,
            hi: *hi,
            density: density.unwrap_or(Density::Uniform),
            grid: grid.unwrap_or(DEFAULT_GRID),
        }),
        TypesDto::Finite(points) => {
            let weighted = points.iter().filter(|p| p.weight.is_some()).count();
            if weighted != 0 && weighted != points.len() {
                return Err(CliError::Invalid("environment.types: give a weight for every type or for none".into()));
            }
            let uniform = 1.0 / points.len().max(1) as f64;
            Ok(TypeSpace::Finite(
                points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| {
                        TypePoint::new(
                            p.label.clone().unwrap_or_else(|| format!("t{i}")),
                            p.value,
                            p.weight.unwrap_or(uniform),
                        )
                    })
                    .collect(),
            ))
        }
    }
}

fn action_set(a: &ActionSetDto) -> ActionSet {
    match a {
        ActionSetDto::Values(v) => ActionSet::reals(v),
        ActionSetDto::Labels(l) => ActionSet::Finite(l.iter().map(ActionValue::labeled).collect()),
        ActionSetDto::Interval { lo, hi } => ActionSet::Interval { lo: *lo, hi: *hi },
    }
}

fn principal(p: &PrincipalDto, j: usize) -> Result<PrincipalSpec, CliError> {
    let contractible = action_set(&p.contractible);
    let discretionary = action_set(&p.discretionary);
    let feasibility = match (&p.feasibility, contractible.finite(), discretionary.finite()) {
        (FeasibilityDto::Box { lo, hi }, _, _) => Feasibility::Box { lo: *lo, hi: *hi },
        (FeasibilityDto::All, Some(xs), Some(ys)) => Feasibility::Finite(vec![(0..ys.len()).collect(); xs.len()]),
        (FeasibilityDto::All, _, _) => match &discretionary {
            ActionSet::Interval { lo, hi } => Feasibility::Box { lo: *lo, hi: *hi },
            ActionSet::Finite(_) => {
                return Err(CliError::Invalid(format!(
                    "environment.principals[{j}]: an interval contractible set needs box feasibility"
                )))
            }
        },
        (FeasibilityDto::Table(t), Some(xs), Some(ys)) => {
            if t.len() != xs.len() || t.iter().flatten().any(|y| *y >= ys.len()) {
                return Err(CliError::Invalid(format!(
                    "environment.principals[{j}].feasibility: table must list valid discretionary indices for each of {} contractible actions",
                    xs.len()
                )));
            }
            Feasibility::Finite(t.clone())
        }
        (FeasibilityDto::Table(_), _, _) => {
            return Err(CliError::Invalid(format!(
                "environment.principals[{j}].feasibility: a table needs finite action sets"
            )))
        }
    };
    Ok(PrincipalSpec {
        contractible,
        discretionary,
        feasibility,
    })
}

fn build_environment(e: &EnvironmentDto, beta: Option<f64>) -> Result<(Environment, Option<Bilateral>), CliError> {
    let types = types(&e.types)?;
    let principals = e
        .principals
        .iter()
        .enumerate()
        .map(|(j, p)| principal(p, j))
        .collect::<Result<Vec<_>, _>>()?;
    let n = principals.len();
    let outside = match &e.outside {
        Some(s) => OutsideOption::Expr(expr(s, "environment.outside")?),
        None => OutsideOption::None,
    };
    let count = |what: &str, got: usize| -> Result<(), CliError> {
        if got == n {
            Ok(())
        } else {
            Err(CliError::Invalid(format!("environment.payoffs: {got} {what} for {n} principals")))
        }
    };
    let mut bilateral = None;
    let kind = match &e.payoffs {
        PayoffsDto::Expressions { agent, principals } => {
            count("principal payoffs", principals.len())?;
            PayoffKind::Expressions {
                agent: expr(agent, "environment.payoffs.expressions.agent")?,
                principals: principals
                    .iter()
                    .enumerate()
                    .map(|(j, s)| expr(s, &format!("environment.payoffs.expressions.principals[{j}]")))
                    .collect::<Result<_, _>>()?,
            }
        }
        PayoffsDto::Bilateral { agents, principals } => {
            count("agent utilities", agents.len())?;
            count("principal payoffs", principals.len())?;
            let agents: Vec<Expr> = agents
                .iter()
                .enumerate()
                .map(|(j, s)| expr(s, &format!("environment.payoffs.bilateral.agents[{j}]")))
                .collect::<Result<_, _>>()?;
            let vs: Vec<Expr> = principals
                .iter()
                .enumerate()
                .map(|(j, s)| expr(s, &format!("environment.payoffs.bilateral.principals[{j}]")))
                .collect::<Result<_, _>>()?;
            bilateral = Some(Bilateral {
                agents: agents.clone(),
                principals: vs.clone(),
            });
            // The environment carries the sum of the bilateral agent terms.
            let agent = agents
                .iter()
                .enumerate()
                .map(|(j, a)| rename_xy(a, j))
                .reduce(|a, b| Expr::Bin(contract_forge_core::expr::BinOp::Add, Box::new(a), Box::new(b)))
                .unwrap_or(Expr::Num(0.0));
            let bind = |e: Expr| match beta {
                Some(b) => e.substitute("beta", b),
                None => e,
            };
            PayoffKind::Expressions {
                agent: bind(agent),
                principals: vs.iter().enumerate().map(|(j, v)| bind(rename_xy(v, j))).collect(),
            }
        }
        PayoffsDto::Table(rows) => PayoffKind::Table(table(rows, &types, &principals)?),
    };
    let env = Environment {
        types,
        principals,
        payoffs: PayoffModel { kind, outside },
        observability: e.observability,
    };
    let report = validate(&env);
    if !report.passed() {
        let msgs: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        return Err(CliError::Invalid(format!("environment: {}", msgs.join("; "))));
    }
    Ok((env, bilateral))
}

/// Renames the bilateral variables of principal `j` into environment
/// variables: `x`, `y` to its own, `xo` to the other principal's action.
fn rename_xy(e: &Expr, j: usize) -> Expr {
    match e {
        Expr::Var(v) => Expr::Var(match v.as_str() {
            "x" => format!("x{}", j + 1),
            "y" => format!("y{}", j + 1),
            "xo" => format!("x{}", 2 - j),
            _ => v.clone(),
        }),
        Expr::Num(_) => e.clone(),
        Expr::Neg(a) => Expr::Neg(Box::new(rename_xy(a, j))),
        Expr::Bin(op, a, b) => Expr::Bin(*op, Box::new(rename_xy(a, j)), Box::new(rename_xy(b, j))),
        Expr::Call(f, args) => Expr::Call(*f, args.iter().map(|a| rename_xy(a, j)).collect()),
    }
}

fn table(rows: &[TableRowDto], types: &TypeSpace, principals: &[PrincipalSpec]) -> Result<PayoffTable, CliError> {
    let points = types
        .finite()
        .map_err(|_| CliError::Invalid("environment.payoffs.table: needs a finite type space".into()))?;
    let pairs: Vec<Vec<(usize, usize)>> = principals.iter().map(|p| p.pairs()).collect();
    let mut out = PayoffTable::default();
    for (r, row) in rows.iter().enumerate() {
        let at = |m: String| CliError::Invalid(format!("environment.payoffs.table[{r}]: {m}"));
        let t = points
            .iter()
            .position(|p| p.label == row.state)
            .ok_or_else(|| at(format!("unknown state {:?}", row.state)))?;
        if row.profile.len() != principals.len() || row.principals.len() != principals.len() {
            return Err(at(format!("expected {} profile pairs and payoffs", principals.len())));
        }
        let idx = row
            .profile
            .iter()
            .enumerate()
            .map(|(j, [x, y])| {
                pairs[j]
                    .iter()
                    .position(|p| *p == (*x, *y))
                    .ok_or_else(|| at(format!("pair [{x}, {y}] is not feasible for principal {j}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if out.entries.contains_key(&(t, idx.clone())) {
            return Err(at("duplicate entry".into()));
        }
        out.insert(t, idx, row.agent, row.principals.clone());
    }
    Ok(out)
}

/// The contracts of `options.contracts`, or full menus with recommendations.
pub fn contracts(env: &Environment, dto: Option<&[ContractDto]>) -> Result<Vec<Mechanism>, CliError> {
    let n = env.n_principals();
    let bad = |j: usize, e: contract_forge_core::contracts::ContractError| {
        CliError::Invalid(format!("options.contracts[{j}]: {e}"))
    };
    match dto {
        None => (0..n)
            .map(|j| {
                let nx = env.principals[j].xs().map(|x| x.len()).unwrap_or(0);
                Mechanism::menu_rec(env, j, &(0..nx).collect::<Vec<_>>()).map_err(|e| bad(j, e))
            })
            .collect(),
        Some(list) => {
            if list.len() != n {
                return Err(CliError::Invalid(format!("options.contracts: {} contracts for {n} principals", list.len())));
            }
            list.iter()
                .enumerate()
                .map(|(j, c)| {
                    match c {
                        ContractDto::MenuRec(m) => Mechanism::menu_rec(env, j, m),
                        ContractDto::Plain(m) => Mechanism::plain(env, j, m),
                        ContractDto::Submenu(p) => {
                            Mechanism::submenu(env, j, &p.iter().map(|[x, y]| (*x, *y)).collect::<Vec<_>>())
                        }
                        ContractDto::General(m) => {
                            Mechanism::general(env, j, m.iter().map(|m| (m.label.clone(), m.x)).collect())
                        }
                    }
                    .map_err(|e| bad(j, e))
                })
                .collect()
        }
    }
}

pub fn strategy(env: &Environment, contracts: &[Mechanism], dto: &[Option<Vec<usize>>]) -> Result<AgentStrategy, CliError> {
    let nt = env.types.len();
    if dto.len() != nt {
        return Err(CliError::Invalid(format!("options.strategy: {} entries for {nt} types", dto.len())));
    }
    let choices = dto
        .iter()
        .enumerate()
        .map(|(t, c)| match c {
            None => Ok(AgentChoice::OptOut),
            Some(p) => {
                let ok = p.len() == contracts.len() && p.iter().zip(contracts).all(|(m, c)| *m < c.len());
                if ok {
                    Ok(AgentChoice::Send(p.clone()))
                } else {
                    Err(CliError::Invalid(format!("options.strategy[{t}]: one valid message index per principal")))
                }
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(AgentStrategy::pure(choices))
}
