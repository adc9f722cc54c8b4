//! Lifted value iteration over relational case expressions.
//!
//! One backup runs in four steps:
//!
//! 1. **Regression** — [`regress`] pushes a value expression backwards
//!    through one deterministic action variant by replacing every predicate
//!    atom with that variant's truth-value diagram (and negated atoms with
//!    the negated diagram); equalities are rigid and pass through.
//! 2. **Variant combination** — [`backup_action`] weighs each regressed
//!    expression by its variant's choice probability (case-wise, since
//!    probability conditions mention only action parameters), sums the
//!    variants, and in accumulate mode discounts and adds the reward. Both
//!    sums standardize the operands apart.
//! 3. **Object maximization** — [`object_maximize`] turns each action
//!    parameter into a fresh `max`-aggregated variable at the head of the
//!    prefix, then normalizes, tracking where each parameter's binding went
//!    so policies can be read back out.
//! 4. **Action maximization** — [`backup`] folds the per-action results with
//!    pairwise max and normalizes; [`solve`] iterates to a fixed horizon or
//!    to convergence.
//!
//! [`extract_policy`] reads a first-match decision list off the per-action
//! level structure: one rule per kept disjunct, ordered by value, with
//! θ-subsumption pruning of rules that can never fire first.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num::{BigInt, One, Signed, Zero};

use crate::expr::simplify::{
    canonicalize, merge_max_levels, normalize_decision_list, simplify, theta_subsumes, Level,
};
use crate::expr::{
    apply_binary, max_combine, mult_choice_prob, scalar_combine, AggOp, BinOp, Case, ExprError,
    PrefixEntry, Rational, RelExpr,
};
use crate::ground::GroundInstance;
use crate::logic::{
    eval_formula, EvalError, Formula, Literal, SortName, Substitution, Term,
};
use crate::model::{tvd_formals, ActionSchema, BackupMode, RmdpSpec, Variant};

// ---------------------------------------------------------------------------
// Configuration and errors
// ---------------------------------------------------------------------------

/// Knobs for the symbolic solver.
#[derive(Debug, Clone)]
pub struct SolveConfig {
    /// Hard cap on the number of cases any intermediate expression may
    /// reach after simplification; exceeding it aborts with diagnostics
    /// rather than truncating.
    pub max_cases: usize,
    /// Iteration cap for infinite-horizon runs.
    pub max_iterations: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig { max_cases: 512, max_iterations: 1000 }
    }
}

/// Errors from the symbolic backup pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SdpError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("variant `{variant}` has no truth-value diagram for predicate `{predicate}`")]
    MissingTvd { variant: String, predicate: String },
    #[error("epsilon must be positive for infinite-horizon solving")]
    BadEpsilon,
    #[error(
        "no convergence after {iterations} iterations \
         (last value function has {cases} cases{delta})",
        delta = match .last_delta {
            Some(d) => format!(", last sup-norm change {d}"),
            None => ", case partition still changing".to_string(),
        }
    )]
    NoConvergence {
        iterations: usize,
        cases: usize,
        /// Largest case-value change of the final sweep, when the partition
        /// was already stable; `None` while the partition itself changed.
        last_delta: Option<Rational>,
    },
    #[error("policy extraction needs an all-max value function, got prefix `{0}`")]
    PolicyUnavailable(String),
    #[error("no rule of the decision list is executable on this instance")]
    NoApplicableAction,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// The value of taking one concrete action (parameters still free) and
/// following the backed-up value function afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QFunction {
    /// Action schema name.
    pub action: String,
    /// The schema's parameters; these appear as `$name` terms in `expr`.
    pub parameters: Vec<(String, SortName)>,
    pub expr: RelExpr,
}

/// A Q-function after object maximization: parameters replaced by
/// `max`-aggregated variables, plus the decision-list level structure with
/// per-disjunct parameter bindings (for policy extraction).
#[derive(Debug, Clone)]
pub struct MaxedQFunction {
    pub action: String,
    pub parameters: Vec<(String, SortName)>,
    pub expr: RelExpr,
    /// Normalized level structure; empty when the prefix is not all-max
    /// (then no decision list is available).
    pub levels: Vec<Level>,
    /// Sort of every variable a level disjunct may mention. Trigger
    /// minimization can drop a variable from `expr`'s prefix while a level
    /// disjunct still uses it, so sorts are resolved here.
    pub var_sorts: BTreeMap<String, SortName>,
}

/// A value function at a given number of steps-to-go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueFunction {
    /// Number of backups applied since the reward function.
    pub horizon: usize,
    pub expr: RelExpr,
}

/// Requested solve depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Finite(usize),
    Infinite,
}

/// A solved value function plus the metadata needed to serialize it.
#[derive(Debug, Clone)]
pub struct Solution {
    pub value: ValueFunction,
    pub mode: BackupMode,
    pub discount: Rational,
    /// `Some(k)` when an infinite-horizon run converged after `k` backups;
    /// `None` for a fixed-horizon run.
    pub converged_after: Option<usize>,
}

impl fmt::Display for Solution {
    /// Metadata header (as `#` comments, so the text re-parses as an
    /// expression) followed by the value expression.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# horizon: {}", self.value.horizon)?;
        writeln!(f, "# mode: {}", self.mode)?;
        writeln!(f, "# discount: {}", self.discount)?;
        match self.converged_after {
            Some(k) => writeln!(f, "# status: converged after {k} iterations")?,
            None => writeln!(f, "# status: fixed horizon")?,
        }
        write!(f, "{}", self.value.expr)
    }
}

/// One rule of a first-match decision-list policy.
#[derive(Debug, Clone)]
pub struct PolicyRule {
    pub value: Rational,
    /// Action schema name.
    pub action: String,
    /// The schema's parameters (name, sort), kept for instantiating
    /// bindings whose variable the condition does not constrain.
    pub parameters: Vec<(String, SortName)>,
    /// Max-quantified variables scoping the condition.
    pub prefix: Vec<PrefixEntry>,
    /// Conjunction of literals; the rule fires on a state if some binding
    /// of the prefix variables satisfies it (first match wins).
    pub condition: Formula,
    /// Parameter bindings in schema order: the term each action parameter
    /// was bound to when this rule's disjunct was derived.
    pub bindings: Vec<(String, Term)>,
    /// The condition's literals (used for subsumption pruning).
    lits: BTreeSet<Literal>,
}

/// Ordered decision-list policy with a final default rule.
#[derive(Debug, Clone)]
pub struct DecisionListPolicy {
    /// Rules in decreasing value order (first match wins).
    pub rules: Vec<PolicyRule>,
    /// Action taken when no rule fires.
    pub default_action: String,
    pub default_parameters: Vec<(String, SortName)>,
    /// Value of the fall-through region.
    pub default_value: Rational,
}

// ---------------------------------------------------------------------------
// Step 1: regression
// ---------------------------------------------------------------------------

/// Regress a value expression through one deterministic action variant:
/// every atom `p(t…)` becomes the variant's truth-value diagram for `p`
/// with its formal arguments bound to `t…` (negated atoms become the
/// negated diagram); equality atoms are rigid and pass through unchanged.
/// The aggregation prefix is unchanged and the result is simplified.
pub fn regress(v: &RelExpr, variant: &Variant) -> Result<RelExpr, SdpError> {
    let mut cases = Vec::with_capacity(v.cases.len());
    for c in &v.cases {
        let condition = regress_formula(&c.condition, variant)?;
        cases.push(Case::new(condition, c.value.clone()));
    }
    Ok(simplify(&RelExpr { prefix: v.prefix.clone(), scale: v.scale.clone(), cases }))
}

fn regress_formula(f: &Formula, variant: &Variant) -> Result<Formula, SdpError> {
    Ok(match f {
        Formula::True => Formula::True,
        Formula::False => Formula::False,
        Formula::Lit(l) => match &l.atom {
            crate::logic::Atom::Eq(..) => f.clone(),
            crate::logic::Atom::Pred { name, args } => {
                let tvd = variant.tvds.get(name).ok_or_else(|| SdpError::MissingTvd {
                    variant: variant.name.clone(),
                    predicate: name.clone(),
                })?;
                let sub = Substitution::of(
                    tvd_formals(args.len()).into_iter().zip(args.iter().cloned()),
                );
                let replaced = sub.apply(tvd);
                if l.positive {
                    replaced
                } else {
                    replaced.negate()
                }
            }
        },
        Formula::And(cs) => Formula::and_of(
            cs.iter().map(|c| regress_formula(c, variant)).collect::<Result<_, _>>()?,
        ),
        Formula::Or(cs) => Formula::or_of(
            cs.iter().map(|c| regress_formula(c, variant)).collect::<Result<_, _>>()?,
        ),
    })
}

// ---------------------------------------------------------------------------
// Step 2: variant combination
// ---------------------------------------------------------------------------

/// Build the Q-function of one action schema against value function `v`.
///
/// Accumulate mode: `Q = R ⊕ γ ⊗ ⊕_j (P_j ⊗ Regr_j(v))`; goal-terminal
/// mode: `Q = ⊕_j (P_j ⊗ Regr_j(v))` (undiscounted, no reward term). Each
/// choice probability multiplies case-wise under the regressed prefix, each
/// `⊕` standardizes its operands apart, and the result is normalized.
pub fn backup_action(
    v: &RelExpr,
    schema: &ActionSchema,
    spec: &RmdpSpec,
    cfg: &SolveConfig,
) -> Result<QFunction, SdpError> {
    let q = backup_action_raw(v, schema, spec, cfg)?;
    Ok(QFunction { expr: tidy(&q.expr, cfg)?, ..q })
}

/// Same combination as [`backup_action`] but the resulting partition is only
/// simplified, not normalized into decision-list form. Used by the pooled
/// backup path, which normalizes once across every action.
fn backup_action_raw(
    v: &RelExpr,
    schema: &ActionSchema,
    spec: &RmdpSpec,
    cfg: &SolveConfig,
) -> Result<QFunction, SdpError> {
    let mut total: Option<RelExpr> = None;
    for variant in &schema.variants {
        let regressed = regress(v, variant)?;
        let weighted = mult_choice_prob(&regressed, &variant.choice_prob)?;
        total = Some(match total {
            None => weighted,
            Some(acc) => apply_binary(BinOp::Add, &acc, &weighted, cfg.max_cases)?,
        });
    }
    let total = total.expect("validated domains give every action at least one variant");
    let q = match spec.mode {
        BackupMode::Accumulate => {
            let discounted = scalar_combine(&total, &spec.discount, BinOp::Mul);
            apply_binary(BinOp::Add, &spec.reward, &discounted, cfg.max_cases)?
        }
        BackupMode::GoalTerminal => total,
    };
    Ok(QFunction {
        action: schema.name.clone(),
        parameters: schema.parameters.clone(),
        expr: simplify(&q),
    })
}

/// Normalize an all-max expression into decision-list form (otherwise just
/// simplify) and enforce the case cap.
fn tidy(e: &RelExpr, cfg: &SolveConfig) -> Result<RelExpr, SdpError> {
    let out = if e.prefix_all(AggOp::Max) {
        normalize_decision_list(e, &BTreeMap::new()).expr
    } else {
        simplify(e)
    };
    if out.cases.len() > cfg.max_cases {
        return Err(ExprError::TooManyCases(out.cases.len(), cfg.max_cases).into());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Step 3: object maximization
// ---------------------------------------------------------------------------

/// Replace every `$param` of `parameters` with a fresh variable under a
/// `max` aggregation prepended to the head of the prefix. Returns the
/// rewritten expression plus the parameter-to-variable map.
fn maximize_params(
    expr: &RelExpr,
    parameters: &[(String, SortName)],
) -> (RelExpr, BTreeMap<String, Term>) {
    let mut used: BTreeSet<String> = expr.prefix_vars();
    for c in &expr.cases {
        for atom in c.condition.atoms() {
            for t in atom.terms() {
                used.insert(t.name().to_string());
            }
        }
    }
    let mut sub = Substitution::new();
    let mut tracked: BTreeMap<String, Term> = BTreeMap::new();
    let mut head: Vec<PrefixEntry> = Vec::new();
    for (p, sort) in parameters {
        let mut fresh = p.clone();
        let mut i = 1usize;
        while used.contains(&fresh) {
            i += 1;
            fresh = format!("{p}_{i}");
        }
        used.insert(fresh.clone());
        sub.bind(Term::Param(p.clone()), Term::Var(fresh.clone()));
        tracked.insert(p.clone(), Term::Var(fresh.clone()));
        head.push(PrefixEntry::new(AggOp::Max, fresh, sort.clone()));
    }
    let mut out = expr.map_conditions(&sub);
    head.extend(out.prefix.iter().cloned());
    out.prefix = head;
    (out, tracked)
}

/// Maximize a Q-function over its action parameters: each `$param` becomes
/// a fresh variable under a `max` aggregation prepended to the head of the
/// prefix, and the result is normalized (equality elimination happens
/// there), tracking each parameter's binding through the reductions. No
/// action-parameter terms remain afterwards.
pub fn object_maximize(q: &QFunction) -> MaxedQFunction {
    let (expr, tracked) = maximize_params(&q.expr, &q.parameters);
    debug_assert!(expr.params().is_disjoint(&q.parameters.iter().map(|(p, _)| p.clone()).collect()));
    if expr.prefix_all(AggOp::Max) {
        let out = normalize_decision_list(&expr, &tracked);
        MaxedQFunction {
            action: q.action.clone(),
            parameters: q.parameters.clone(),
            expr: out.expr,
            levels: out.levels,
            var_sorts: out.var_sorts,
        }
    } else {
        let var_sorts = expr
            .prefix_info()
            .into_iter()
            .map(|(v, (_, sort))| (v, sort))
            .collect();
        MaxedQFunction {
            action: q.action.clone(),
            parameters: q.parameters.clone(),
            expr: simplify(&expr),
            levels: Vec::new(),
            var_sorts,
        }
    }
}

// ---------------------------------------------------------------------------
// Step 4: action maximization and the solve loop
// ---------------------------------------------------------------------------

/// One full backup: `V_{k+1} = max_A object_maximize(Q^A_{V_k})`.
///
/// Preferred path: build every action's raw maxed Q (parameters replaced by
/// fresh max variables, partition only simplified) and merge all of them in
/// a single level-layer pass, so the expensive partition rebuild runs once
/// per backup and weak regions are shadowed by the strongest levels of all
/// actions at once. When some side has no usable level view (non-max
/// aggregations, mismatched scales or variable sorts), the pairwise
/// normalize-and-fold path runs instead.
pub fn backup(v: &ValueFunction, spec: &RmdpSpec, cfg: &SolveConfig) -> Result<ValueFunction, SdpError> {
    let mut schemas: Vec<&ActionSchema> = spec.actions.iter().collect();
    schemas.sort_by(|a, b| a.name.cmp(&b.name));
    let mut sides: Vec<(Vec<Level>, BTreeMap<String, SortName>)> = Vec::new();
    let mut pooled = true;
    for schema in &schemas {
        let stage = std::time::Instant::now();
        let q = backup_action_raw(&v.expr, schema, spec, cfg)?;
        if std::env::var_os("NORM_DEBUG").is_some() {
            eprintln!("raw Q[{}]: {} cases, {:.2?}", schema.name, q.expr.cases.len(), stage.elapsed());
        }
        let (expr, _) = maximize_params(&q.expr, &q.parameters);
        if !expr.prefix_all(AggOp::Max) || expr.scale != v.expr.scale {
            pooled = false;
            break;
        }
        let levels = expr
            .cases
            .iter()
            .map(|c| Level {
                value: c.value.clone(),
                trigger: c.condition.clone(),
                disjuncts: Vec::new(),
                is_else: false,
            })
            .collect();
        let var_sorts = expr.prefix_info().into_iter().map(|(n, (_, s))| (n, s)).collect();
        sides.push((levels, var_sorts));
    }
    if pooled {
        let stage = std::time::Instant::now();
        let refs: Vec<(&[Level], &BTreeMap<String, SortName>)> =
            sides.iter().map(|(lv, vs)| (lv.as_slice(), vs)).collect();
        let merged = merge_max_levels(&refs, &v.expr.scale);
        if std::env::var_os("NORM_DEBUG").is_some() {
            eprintln!("merge: {:.2?} ok={}", stage.elapsed(), merged.is_some());
        }
        if let Some(out) = merged {
            if out.expr.cases.len() > cfg.max_cases {
                return Err(ExprError::TooManyCases(out.expr.cases.len(), cfg.max_cases).into());
            }
            return Ok(ValueFunction { horizon: v.horizon + 1, expr: out.expr });
        }
    }
    let mut acc: Option<MaxAcc> = None;
    for schema in schemas {
        let q = backup_action(&v.expr, schema, spec, cfg)?;
        let m = object_maximize(&q);
        acc = Some(match acc {
            None => MaxAcc { expr: m.expr, levels: m.levels, var_sorts: m.var_sorts },
            Some(prev) => fold_max(prev, m, cfg)?,
        });
    }
    let acc = acc.expect("validated domains have at least one action");
    Ok(ValueFunction { horizon: v.horizon + 1, expr: acc.expr })
}

/// Accumulator of the per-action maximization fold: the running expression
/// plus its decision-list view when one is available.
struct MaxAcc {
    expr: RelExpr,
    levels: Vec<Level>,
    var_sorts: BTreeMap<String, SortName>,
}

/// One fold step of `max(acc, m)`. Preferred path: merge the two decision
/// lists at the level layer, which keeps every condition free of the other
/// side's negated upper levels. When either side has no usable level
/// structure the case-product path runs instead, re-normalized immediately
/// so later steps see a decision list again.
fn fold_max(prev: MaxAcc, m: MaxedQFunction, cfg: &SolveConfig) -> Result<MaxAcc, SdpError> {
    if !prev.levels.is_empty() && !m.levels.is_empty() && prev.expr.scale == m.expr.scale {
        if let Some(out) = merge_max_levels(
            &[(&prev.levels, &prev.var_sorts), (&m.levels, &m.var_sorts)],
            &m.expr.scale,
        ) {
            if out.expr.cases.len() > cfg.max_cases {
                return Err(ExprError::TooManyCases(out.expr.cases.len(), cfg.max_cases).into());
            }
            return Ok(MaxAcc { expr: out.expr, levels: out.levels, var_sorts: out.var_sorts });
        }
    }
    let e = tidy(&max_combine(&prev.expr, &m.expr, cfg.max_cases)?, cfg)?;
    if e.prefix_all(AggOp::Max) {
        let out = normalize_decision_list(&e, &BTreeMap::new());
        Ok(MaxAcc { expr: out.expr, levels: out.levels, var_sorts: out.var_sorts })
    } else {
        Ok(MaxAcc { expr: e, levels: Vec::new(), var_sorts: BTreeMap::new() })
    }
}

/// Solve a domain to a fixed horizon or to convergence.
///
/// `V_0` is the reward expression in both modes. Finite horizons run
/// exactly that many backups. Infinite horizons iterate until the canonical
/// case partition is identical on two consecutive value functions *and* the
/// largest case-value change is below `epsilon`, failing with diagnostics
/// after `cfg.max_iterations` backups.
pub fn solve(
    spec: &RmdpSpec,
    horizon: Horizon,
    epsilon: &Rational,
    cfg: &SolveConfig,
) -> Result<Solution, SdpError> {
    let v0 = ValueFunction { horizon: 0, expr: tidy(&spec.reward, cfg)? };
    match horizon {
        Horizon::Finite(h) => {
            let mut v = v0;
            for _ in 0..h {
                v = backup(&v, spec, cfg)?;
            }
            Ok(Solution {
                value: v,
                mode: spec.mode,
                discount: spec.discount.clone(),
                converged_after: None,
            })
        }
        Horizon::Infinite => {
            if !epsilon.is_positive() {
                return Err(SdpError::BadEpsilon);
            }
            let mut prev = canonicalize(&v0.expr);
            let mut v = v0;
            let mut last_delta: Option<Rational> = None;
            for iteration in 1..=cfg.max_iterations {
                v = backup(&v, spec, cfg)?;
                let cur = canonicalize(&v.expr);
                last_delta = partition_delta(&prev, &cur);
                if let Some(delta) = &last_delta {
                    if delta < epsilon {
                        return Ok(Solution {
                            value: v,
                            mode: spec.mode,
                            discount: spec.discount.clone(),
                            converged_after: Some(iteration),
                        });
                    }
                }
                prev = cur;
            }
            Err(SdpError::NoConvergence {
                iterations: cfg.max_iterations,
                cases: v.expr.cases.len(),
                last_delta,
            })
        }
    }
}

/// Largest absolute case-value difference between two canonicalized
/// expressions with the *same* case partition (prefix, scale, and pairwise
/// conditions all equal); `None` when the partitions differ structurally.
fn partition_delta(a: &RelExpr, b: &RelExpr) -> Option<Rational> {
    if a.prefix != b.prefix || a.scale != b.scale || a.cases.len() != b.cases.len() {
        return None;
    }
    let mut delta = Rational::zero();
    for (ca, cb) in a.cases.iter().zip(&b.cases) {
        if ca.condition != cb.condition {
            return None;
        }
        let d = (&ca.value - &cb.value).abs();
        if d > delta {
            delta = d;
        }
    }
    Some(delta)
}

// ---------------------------------------------------------------------------
// Policy extraction
// ---------------------------------------------------------------------------

/// Read a first-match decision list off a value function: recompute every
/// action's object-maximized Q-function against `v`, emit one rule per kept
/// disjunct carrying its tracked parameter bindings, order rules by
/// (value desc, parameter count asc, action name, condition text), and prune
/// any rule whose condition is θ-subsumed by an earlier rule of at least its
/// value (that rule can never fire first). The default rule takes the action
/// with the best fall-through value, preferring fewer parameters.
pub fn extract_policy(
    spec: &RmdpSpec,
    v: &ValueFunction,
    cfg: &SolveConfig,
) -> Result<DecisionListPolicy, SdpError> {
    if !v.expr.prefix_all(AggOp::Max) {
        return Err(SdpError::PolicyUnavailable(
            v.expr
                .prefix
                .iter()
                .map(|e| format!("{} {}", e.op, e.var))
                .collect::<Vec<_>>()
                .join(", "),
        ));
    }
    let mut schemas: Vec<&ActionSchema> = spec.actions.iter().collect();
    schemas.sort_by(|a, b| a.name.cmp(&b.name));

    let mut candidates: Vec<PolicyRule> = Vec::new();
    // (fall-through value, parameter count, action name) per schema.
    let mut defaults: Vec<(Rational, usize, String, Vec<(String, SortName)>)> = Vec::new();
    for schema in schemas {
        let q = backup_action(&v.expr, schema, spec, cfg)?;
        let m = object_maximize(&q);
        let mut fall_through: Option<Rational> = None;
        for level in &m.levels {
            if level.is_else {
                fall_through = Some(level.value.clone());
                continue;
            }
            for d in &level.disjuncts {
                let vars: BTreeSet<String> = d
                    .lits
                    .iter()
                    .flat_map(|l| l.atom.terms())
                    .filter(|t| t.is_var())
                    .map(|t| t.name().to_string())
                    .collect();
                let mut prefix: Vec<PrefixEntry> = m
                    .expr
                    .prefix
                    .iter()
                    .filter(|e| vars.contains(&e.var))
                    .cloned()
                    .collect();
                // Variables the minimized expression prefix no longer
                // carries still need an entry; their sorts are on file.
                for x in &vars {
                    if !prefix.iter().any(|e| &e.var == x) {
                        if let Some(sort) = m.var_sorts.get(x) {
                            prefix.push(PrefixEntry::new(AggOp::Max, x.clone(), sort.clone()));
                        }
                    }
                }
                let bindings: Vec<(String, Term)> = schema
                    .parameters
                    .iter()
                    .map(|(p, _)| {
                        (p.clone(), d.binding.get(p).cloned().unwrap_or(Term::Param(p.clone())))
                    })
                    .collect();
                debug_assert!(vars.iter().all(|x| m.var_sorts.contains_key(x)));
                candidates.push(PolicyRule {
                    value: level.value.clone(),
                    action: schema.name.clone(),
                    parameters: schema.parameters.clone(),
                    prefix,
                    condition: d.formula(),
                    bindings,
                    lits: d.lits.clone(),
                });
            }
        }
        // A Q-function whose non-else levels cover every state has no
        // fall-through region; its minimum level still bounds it below.
        let fall_through = fall_through
            .or_else(|| m.levels.last().map(|l| l.value.clone()))
            .unwrap_or_else(Rational::zero);
        defaults.push((
            fall_through,
            schema.parameters.len(),
            schema.name.clone(),
            schema.parameters.clone(),
        ));
    }

    candidates.sort_by(|a, b| {
        b.value
            .cmp(&a.value)
            .then_with(|| a.parameters.len().cmp(&b.parameters.len()))
            .then_with(|| a.action.cmp(&b.action))
            .then_with(|| a.condition.to_string().cmp(&b.condition.to_string()))
    });
    let mut rules: Vec<PolicyRule> = Vec::new();
    'next: for cand in candidates {
        for kept in &rules {
            if kept.value >= cand.value && theta_subsumes(&kept.lits, &cand.lits) {
                continue 'next;
            }
        }
        rules.push(cand);
    }

    // Best fall-through action: highest guaranteed value, then fewest
    // parameters, then name.
    defaults.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)).then_with(|| a.2.cmp(&b.2)));
    let (default_value, _, default_action, default_parameters) =
        defaults.into_iter().next().expect("validated domains have at least one action");

    Ok(DecisionListPolicy { rules, default_action, default_parameters, default_value })
}

impl DecisionListPolicy {
    /// The first rule (by list order) some binding of which holds in ground
    /// state `s`, together with that binding; `None` means fall through to
    /// the default rule.
    pub fn first_match(
        &self,
        gi: &GroundInstance,
        s: u64,
    ) -> Result<Option<(usize, BTreeMap<String, String>)>, SdpError> {
        let interp = gi.interpretation(s);
        for (i, rule) in self.rules.iter().enumerate() {
            if let Some(env) = first_satisfying_binding(rule, gi, &interp)? {
                return Ok(Some((i, env)));
            }
        }
        Ok(None)
    }

    /// Execute the policy on ground state `s`: index into `gi.actions()` of
    /// the instantiated first-match action (the default rule if no rule
    /// fires). Binding variables the condition leaves free take the first
    /// object of the parameter's sort.
    pub fn choose(&self, gi: &GroundInstance, s: u64) -> Result<usize, SdpError> {
        if let Some((i, env)) = self.first_match(gi, s)? {
            let rule = &self.rules[i];
            let mut args: Vec<String> = Vec::with_capacity(rule.bindings.len());
            for ((_, term), (_, sort)) in rule.bindings.iter().zip(&rule.parameters) {
                let obj = match term {
                    Term::Const(c) => Some(c.clone()),
                    Term::Var(x) => env.get(x).cloned().or_else(|| first_object(gi, sort)),
                    Term::Param(_) => first_object(gi, sort),
                };
                match obj {
                    Some(o) => args.push(o),
                    None => return Err(SdpError::NoApplicableAction),
                }
            }
            if let Some(idx) = gi.action_index(&rule.action, &args) {
                return Ok(idx);
            }
            return Err(SdpError::NoApplicableAction);
        }
        let mut args: Vec<String> = Vec::new();
        for (_, sort) in &self.default_parameters {
            match first_object(gi, sort) {
                Some(o) => args.push(o),
                None => return Err(SdpError::NoApplicableAction),
            }
        }
        gi.action_index(&self.default_action, &args).ok_or(SdpError::NoApplicableAction)
    }
}

fn first_object(gi: &GroundInstance, sort: &str) -> Option<String> {
    gi.objects.get(sort).and_then(|os| os.first().cloned())
}

/// Row-major scan (first prefix variable slowest) for a binding of the
/// rule's variables satisfying its condition.
fn first_satisfying_binding(
    rule: &PolicyRule,
    gi: &GroundInstance,
    interp: &crate::logic::Interpretation,
) -> Result<Option<BTreeMap<String, String>>, SdpError> {
    let mut envs: Vec<BTreeMap<String, String>> = vec![BTreeMap::new()];
    for e in &rule.prefix {
        let objects = gi.objects.get(&e.sort).cloned().unwrap_or_default();
        let mut next = Vec::with_capacity(envs.len() * objects.len());
        for env in &envs {
            for o in &objects {
                let mut env2 = env.clone();
                env2.insert(e.var.clone(), o.clone());
                next.push(env2);
            }
        }
        envs = next;
    }
    for env in envs {
        if eval_formula(&rule.condition, interp, &env)? {
            return Ok(Some(env));
        }
    }
    Ok(None)
}

impl fmt::Display for PolicyRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "if ")?;
        if !self.prefix.is_empty() {
            write!(
                f,
                "exists {}: ",
                self.prefix.iter().map(|e| e.var.clone()).collect::<Vec<_>>().join(", ")
            )?;
        }
        let mut first = true;
        for l in &self.lits {
            if !first {
                write!(f, " & ")?;
            }
            first = false;
            write!(f, "{l}")?;
        }
        if first {
            write!(f, "true")?;
        }
        write!(f, " then {}(", self.action)?;
        for (i, (_, t)) in self.bindings.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            match t {
                Term::Var(x) | Term::Const(x) => write!(f, "{x}")?,
                Term::Param(p) => write!(f, "{p}")?,
            }
        }
        write!(f, ")  (value = {})", display_value(&self.value))
    }
}

impl fmt::Display for DecisionListPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, rule) in self.rules.iter().enumerate() {
            if i > 0 {
                write!(f, "else ")?;
            }
            writeln!(f, "{rule}")?;
        }
        if !self.rules.is_empty() {
            write!(f, "else ")?;
        }
        let args = self.default_parameters.iter().map(|_| "_").collect::<Vec<_>>().join(", ");
        write!(
            f,
            "{}({})  (value = {})",
            self.default_action,
            args,
            display_value(&self.default_value)
        )
    }
}

/// Exact fraction, with a 4-place decimal approximation when it is not an
/// integer.
pub fn display_value(r: &Rational) -> String {
    if r.denom() == &BigInt::one() {
        return r.to_string();
    }
    format!("{r} ~ {}", approx4(r))
}

/// Decimal approximation to 4 places (round half away from zero).
pub fn approx4(r: &Rational) -> String {
    let sign = if r.is_negative() { "-" } else { "" };
    let scaled = r.abs() * Rational::from(BigInt::from(10_000));
    let mag = (scaled + Rational::new(BigInt::one(), BigInt::from(2))).floor().to_integer();
    let whole = &mag / BigInt::from(10_000);
    let frac = &mag % BigInt::from(10_000);
    format!("{sign}{whole}.{frac:04}")
}
