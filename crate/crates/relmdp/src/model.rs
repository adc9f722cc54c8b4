//! Domain model: sorted relational MDP specifications.
//!
//! A domain is authored in a small PSTRIPS-style text format (see
//! [`parse_domain`]) and compiled into action schemas whose variants carry
//! choice probabilities and truth-value descriptions (TVDs) — one formula
//! per predicate giving the condition under which that predicate holds
//! after the variant executes, written over reserved head variables
//! `__y1..__yk` plus the action's parameters.
//!
//! Grammar (line comments with `#`, whitespace free-form):
//!
//! ```text
//! sort Name [ const1, const2 ]
//! pred Name(Sort, ...)
//! action Name(Var: Sort, ...) {
//!   prob { formula : p ; ... ; else : q }
//!   add [ atom, ... ]
//!   del [ atom, ... ]
//! }
//! exogenous Sort Var { prob p add [ ... ] del [ ... ] }
//! reward [agg Var, ...] { formula : value ; ... }
//! discount 9/10
//! mode goal|accumulate
//! ```
//!
//! Declarations must precede use. In action bodies the parameter names are
//! read as parameter terms; in `exogenous` bodies the declared variable is
//! the affected object and any other variable in a `del` atom is a wildcard
//! (the atom is deleted for every value of that position).

use crate::expr::parse::{ParseError, Parser, SortContext, Tok};
use crate::expr::{Case, Rational, RelExpr};
use crate::logic::{satisfiable, Atom, Formula, SortName, Term};
use num::{One, Zero};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Shipped example domains, also present under `fixtures/` in the source tree.
pub mod fixtures {
    /// Logistics world with a max-aggregated (existential) reward.
    pub const BOXWORLD: &str = include_str!("../../../fixtures/boxworld.rmdp");
    /// Additive-reward logistics world with per-box disappearance events.
    pub const BOXWORLD_ADDITIVE: &str =
        include_str!("../../../fixtures/boxworld_additive.rmdp");
}

/// A declared sort and its named constants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortDecl {
    pub name: SortName,
    pub constants: Vec<String>,
}

/// A declared predicate signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredDecl {
    pub name: String,
    pub arg_sorts: Vec<SortName>,
}

/// An action in authoring form: success-probability cases plus add/delete
/// lists over the action parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PstripsAction {
    pub name: String,
    pub parameters: Vec<(String, SortName)>,
    /// Mutually exclusive, exhaustive `(condition, success probability)`
    /// cases over the parameters.
    pub success_prob_cases: Vec<(Formula, Rational)>,
    pub add_list: Vec<Atom>,
    pub delete_list: Vec<Atom>,
}

/// One nature's-choice outcome of an action: its choice probability (an
/// empty-prefix expression over the action parameters) and a TVD per
/// predicate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variant {
    pub name: String,
    pub choice_prob: RelExpr,
    /// Predicate name to the formula over `__y1..__yk` (and parameters)
    /// under which the predicate holds after this variant.
    pub tvds: BTreeMap<String, Formula>,
}

/// A compiled action schema: named variants with choice probabilities
/// summing to one in every state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSchema {
    pub name: String,
    pub parameters: Vec<(String, SortName)>,
    pub variants: Vec<Variant>,
}

/// A per-object exogenous event: after the agent acts, each object of the
/// sort independently undergoes the add/delete effects with the given
/// probability.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExogenousEvent {
    pub sort: SortName,
    pub var: String,
    pub prob: Rational,
    pub add_list: Vec<Atom>,
    pub delete_list: Vec<Atom>,
    pub variants: Vec<Variant>,
}

/// How backups treat the reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackupMode {
    /// Reward enters only as `V_0`; backups take expectations without
    /// adding reward or discounting (reachability-style goal values).
    GoalTerminal,
    /// Discounted accumulation: `V_{k+1} = R ⊕ γ·max_a E[V_k]`.
    Accumulate,
}

impl fmt::Display for BackupMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackupMode::GoalTerminal => write!(f, "goal"),
            BackupMode::Accumulate => write!(f, "accumulate"),
        }
    }
}

/// A fully validated relational MDP specification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RmdpSpec {
    pub sorts: Vec<SortDecl>,
    pub predicates: Vec<PredDecl>,
    /// Actions in authoring form (printed back by `Display`).
    pub pstrips: Vec<PstripsAction>,
    /// Compiled actions, in declaration order.
    pub actions: Vec<ActionSchema>,
    /// At most one event per sort.
    pub exogenous: Vec<ExogenousEvent>,
    pub reward: RelExpr,
    pub discount: Rational,
    pub mode: BackupMode,
}

impl RmdpSpec {
    /// Predicate signatures and constants for the expression parser.
    pub fn sort_context(&self) -> SortContext {
        SortContext {
            predicates: self
                .predicates
                .iter()
                .map(|p| (p.name.clone(), p.arg_sorts.clone()))
                .collect(),
            constants: self
                .sorts
                .iter()
                .flat_map(|s| s.constants.iter().map(|c| (c.clone(), s.name.clone())))
                .collect(),
        }
    }

    pub fn action(&self, name: &str) -> Option<&ActionSchema> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn exogenous_for(&self, sort: &str) -> Option<&ExogenousEvent> {
        self.exogenous.iter().find(|e| e.sort == sort)
    }
}

/// Reserved head variables `__y1..__yk` that TVDs are written over.
pub fn tvd_formals(arity: usize) -> Vec<Term> {
    (1..=arity).map(|i| Term::Var(format!("__y{i}"))).collect()
}

/// Condition over the head variables under which some atom in `atoms` with
/// this predicate matches the head. `bound_var` is the exogenous-event
/// variable: it stays symbolic in the match condition, while any other
/// variable is a wildcard imposing no constraint on its position.
fn match_any(atoms: &[Atom], pred: &str, formals: &[Term], bound_var: Option<&str>) -> Formula {
    let mut alts = Vec::new();
    for atom in atoms {
        let Atom::Pred { name, args } = atom else { continue };
        if name != pred {
            continue;
        }
        let mut conj = Vec::new();
        for (y, t) in formals.iter().zip(args) {
            match t {
                Term::Var(v) if Some(v.as_str()) != bound_var => {} // wildcard
                _ => conj.push(Formula::literal(Atom::eq(y.clone(), t.clone()), true)),
            }
        }
        alts.push(Formula::and_of(conj));
    }
    Formula::or_of(alts)
}

fn empty_prefix_expr(cases: Vec<(Formula, Rational)>) -> RelExpr {
    RelExpr {
        prefix: Vec::new(),
        scale: Vec::new(),
        cases: cases.into_iter().map(|(f, p)| Case::new(f, p)).collect(),
    }
}

/// True when every satisfiable case of the empty-prefix expression has
/// value zero.
fn identically_zero(e: &RelExpr) -> bool {
    e.cases.iter().all(|c| c.value.is_zero() || !satisfiable(&c.condition))
}

/// Compile an authored action into its variant schema.
///
/// The success variant's TVD for predicate `p` holds when `p` held and was
/// not deleted, or was added with the action's precondition (the union of
/// positive-probability cases) true. The failure variant changes nothing.
/// When the failure probability is identically zero the action collapses
/// to the single success variant.
pub fn compile_pstrips(a: &PstripsAction, predicates: &[PredDecl]) -> ActionSchema {
    let precond = Formula::or_of(
        a.success_prob_cases
            .iter()
            .filter(|(_, p)| p > &Rational::zero())
            .map(|(f, _)| f.clone())
            .collect(),
    );
    let mut success_tvds = BTreeMap::new();
    let mut failure_tvds = BTreeMap::new();
    for pd in predicates {
        let formals = tvd_formals(pd.arg_sorts.len());
        let head = Formula::atom(Atom::pred(pd.name.clone(), formals.clone()));
        let del_match = match_any(&a.delete_list, &pd.name, &formals, None);
        let add_match = match_any(&a.add_list, &pd.name, &formals, None);
        let tvd = Formula::or_of(vec![
            Formula::and_of(vec![head.clone(), del_match.negate()]),
            Formula::and_of(vec![add_match, precond.clone()]),
        ]);
        success_tvds.insert(pd.name.clone(), tvd);
        failure_tvds.insert(pd.name.clone(), head);
    }
    let success_prob = empty_prefix_expr(a.success_prob_cases.clone());
    let failure_prob = empty_prefix_expr(
        a.success_prob_cases
            .iter()
            .map(|(f, p)| (f.clone(), Rational::one() - p))
            .collect(),
    );
    let variants = if identically_zero(&failure_prob) {
        vec![Variant {
            name: a.name.clone(),
            choice_prob: success_prob,
            tvds: success_tvds,
        }]
    } else if identically_zero(&success_prob) {
        vec![Variant {
            name: a.name.clone(),
            choice_prob: failure_prob,
            tvds: failure_tvds,
        }]
    } else {
        vec![
            Variant {
                name: format!("{}S", a.name),
                choice_prob: success_prob,
                tvds: success_tvds,
            },
            Variant {
                name: format!("{}F", a.name),
                choice_prob: failure_prob,
                tvds: failure_tvds,
            },
        ]
    };
    ActionSchema {
        name: a.name.clone(),
        parameters: a.parameters.clone(),
        variants,
    }
}

/// Compile an exogenous event's two variants (occur / not occur).
fn compile_exogenous(
    sort: &str,
    var: &str,
    prob: &Rational,
    add_list: &[Atom],
    delete_list: &[Atom],
    predicates: &[PredDecl],
) -> Vec<Variant> {
    let mut fire_tvds = BTreeMap::new();
    let mut skip_tvds = BTreeMap::new();
    for pd in predicates {
        let formals = tvd_formals(pd.arg_sorts.len());
        let head = Formula::atom(Atom::pred(pd.name.clone(), formals.clone()));
        let del_match = match_any(delete_list, &pd.name, &formals, Some(var));
        let add_match = match_any(add_list, &pd.name, &formals, Some(var));
        let tvd = Formula::or_of(vec![
            Formula::and_of(vec![head.clone(), del_match.negate()]),
            add_match,
        ]);
        fire_tvds.insert(pd.name.clone(), tvd);
        skip_tvds.insert(pd.name.clone(), head);
    }
    let fire_prob = empty_prefix_expr(vec![(Formula::True, prob.clone())]);
    let skip_prob = empty_prefix_expr(vec![(Formula::True, Rational::one() - prob)]);
    if prob.is_one() {
        vec![Variant { name: format!("exo_{sort}"), choice_prob: fire_prob, tvds: fire_tvds }]
    } else if prob.is_zero() {
        vec![Variant { name: format!("exo_{sort}"), choice_prob: skip_prob, tvds: skip_tvds }]
    } else {
        vec![
            Variant {
                name: format!("exo_{sort}S"),
                choice_prob: fire_prob,
                tvds: fire_tvds,
            },
            Variant {
                name: format!("exo_{sort}F"),
                choice_prob: skip_prob,
                tvds: skip_tvds,
            },
        ]
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Parse and fully validate a domain file.
pub fn parse_domain(text: &str) -> Result<RmdpSpec, ParseError> {
    let mut p = Parser::new(text, SortContext::default(), BTreeMap::new())?;
    let mut sorts: Vec<SortDecl> = Vec::new();
    let mut predicates: Vec<PredDecl> = Vec::new();
    let mut pstrips: Vec<PstripsAction> = Vec::new();
    let mut raw_events: Vec<(ExogenousEvent, (usize, usize))> = Vec::new();
    let mut reward: Option<RelExpr> = None;
    let mut discount: Option<Rational> = None;
    let mut mode: Option<BackupMode> = None;

    while !p.at_eof() {
        let (word, pos) = p.expect_ident()?;
        match word.as_str() {
            "sort" => {
                let (name, npos) = p.expect_ident()?;
                check_fresh_name(&name, npos)?;
                if sorts.iter().any(|s| s.name == name) {
                    return Err(ParseError::at(npos, format!("duplicate sort `{name}`")));
                }
                let mut constants = Vec::new();
                if p.eat_punct('[') {
                    if !p.eat_punct(']') {
                        loop {
                            let (c, cpos) = p.expect_ident()?;
                            check_fresh_name(&c, cpos)?;
                            if p.ctx.constants.contains_key(&c) {
                                return Err(ParseError::at(
                                    cpos,
                                    format!("constant `{c}` is already declared"),
                                ));
                            }
                            p.ctx.constants.insert(c.clone(), name.clone());
                            constants.push(c);
                            if !p.eat_punct(',') {
                                break;
                            }
                        }
                        p.expect_punct(']')?;
                    }
                }
                sorts.push(SortDecl { name, constants });
            }
            "pred" => {
                let (name, npos) = p.expect_ident()?;
                check_fresh_name(&name, npos)?;
                if p.ctx.predicates.contains_key(&name) {
                    return Err(ParseError::at(npos, format!("duplicate predicate `{name}`")));
                }
                p.expect_punct('(')?;
                let mut arg_sorts = Vec::new();
                if !p.eat_punct(')') {
                    loop {
                        let (s, spos) = p.expect_ident()?;
                        require_sort(&sorts, &s, spos)?;
                        arg_sorts.push(s);
                        if !p.eat_punct(',') {
                            break;
                        }
                    }
                    p.expect_punct(')')?;
                }
                p.ctx.predicates.insert(name.clone(), arg_sorts.clone());
                predicates.push(PredDecl { name, arg_sorts });
            }
            "action" => {
                let action = parse_action(&mut p, &sorts, &pstrips)?;
                pstrips.push(action);
            }
            "exogenous" => {
                let (sort, spos) = p.expect_ident()?;
                require_sort(&sorts, &sort, spos)?;
                if raw_events.iter().any(|(e, _)| e.sort == sort) {
                    return Err(ParseError::at(
                        spos,
                        format!("sort `{sort}` already has an exogenous event"),
                    ));
                }
                let ev = parse_exogenous(&mut p, sort, spos)?;
                raw_events.push((ev, spos));
            }
            "reward" => {
                if reward.is_some() {
                    return Err(ParseError::at(pos, "duplicate reward declaration"));
                }
                p.params.clear();
                p.clear_inference();
                reward = Some(p.expression()?);
            }
            "discount" => {
                if discount.is_some() {
                    return Err(ParseError::at(pos, "duplicate discount declaration"));
                }
                let vpos = p.here();
                let v = p.value()?;
                if v <= Rational::zero() || v >= Rational::one() {
                    return Err(ParseError::at(
                        vpos,
                        format!("discount must be strictly between 0 and 1, got {v}"),
                    ));
                }
                discount = Some(v);
            }
            "mode" => {
                if mode.is_some() {
                    return Err(ParseError::at(pos, "duplicate mode declaration"));
                }
                let (m, mpos) = p.expect_ident()?;
                mode = Some(match m.as_str() {
                    "goal" => BackupMode::GoalTerminal,
                    "accumulate" => BackupMode::Accumulate,
                    other => {
                        return Err(ParseError::at(
                            mpos,
                            format!("mode must be `goal` or `accumulate`, got `{other}`"),
                        ))
                    }
                });
            }
            other => {
                return Err(ParseError::at(
                    pos,
                    format!(
                        "expected a declaration (sort, pred, action, exogenous, reward, discount, mode), found `{other}`"
                    ),
                ));
            }
        }
    }

    let end = p.here();
    if pstrips.is_empty() {
        return Err(ParseError::at(end, "at least one action is required"));
    }
    let reward = reward.ok_or_else(|| ParseError::at(end, "missing reward declaration"))?;
    let discount =
        discount.ok_or_else(|| ParseError::at(end, "missing discount declaration"))?;
    let mode = mode.unwrap_or(BackupMode::Accumulate);

    let actions = pstrips.iter().map(|a| compile_pstrips(a, &predicates)).collect();
    let exogenous = raw_events
        .into_iter()
        .map(|(mut e, _)| {
            e.variants =
                compile_exogenous(&e.sort, &e.var, &e.prob, &e.add_list, &e.delete_list, &predicates);
            e
        })
        .collect();

    let spec = RmdpSpec {
        sorts,
        predicates,
        pstrips,
        actions,
        exogenous,
        reward,
        discount,
        mode,
    };
    let violations = validate_spec(&spec);
    if !violations.is_empty() {
        return Err(ParseError::at(
            (1, 1),
            format!("invalid domain: {}", violations.join("; ")),
        ));
    }
    Ok(spec)
}

fn check_fresh_name(name: &str, pos: (usize, usize)) -> Result<(), ParseError> {
    if name.starts_with("__") {
        return Err(ParseError::at(
            pos,
            format!("names beginning with `__` are reserved, got `{name}`"),
        ));
    }
    Ok(())
}

fn require_sort(sorts: &[SortDecl], name: &str, pos: (usize, usize)) -> Result<(), ParseError> {
    if sorts.iter().any(|s| s.name == name) {
        Ok(())
    } else {
        Err(ParseError::at(pos, format!("unknown sort `{name}`")))
    }
}

fn parse_action(
    p: &mut Parser,
    sorts: &[SortDecl],
    existing: &[PstripsAction],
) -> Result<PstripsAction, ParseError> {
    let (name, npos) = p.expect_ident()?;
    check_fresh_name(&name, npos)?;
    if existing.iter().any(|a| a.name == name) {
        return Err(ParseError::at(npos, format!("duplicate action `{name}`")));
    }
    p.expect_punct('(')?;
    let mut parameters: Vec<(String, SortName)> = Vec::new();
    if !p.eat_punct(')') {
        loop {
            let (v, vpos) = p.expect_ident()?;
            check_fresh_name(&v, vpos)?;
            if parameters.iter().any(|(n, _)| n == &v) {
                return Err(ParseError::at(vpos, format!("duplicate parameter `{v}`")));
            }
            if p.ctx.constants.contains_key(&v) {
                return Err(ParseError::at(
                    vpos,
                    format!("parameter `{v}` shadows a declared constant"),
                ));
            }
            p.expect_punct(':')?;
            let (s, spos) = p.expect_ident()?;
            require_sort(sorts, &s, spos)?;
            parameters.push((v, s));
            if !p.eat_punct(',') {
                break;
            }
        }
        p.expect_punct(')')?;
    }
    p.expect_punct('{')?;
    p.params = parameters.iter().cloned().collect();
    let mut prob: Option<Vec<(Formula, Rational)>> = None;
    let mut add_list: Option<Vec<Atom>> = None;
    let mut delete_list: Option<Vec<Atom>> = None;
    while !p.eat_punct('}') {
        let (sec, spos) = p.expect_ident()?;
        match sec.as_str() {
            "prob" => {
                if prob.is_some() {
                    return Err(ParseError::at(spos, "duplicate prob section"));
                }
                p.clear_inference();
                let e = p.expression()?;
                if !e.prefix.is_empty() || !e.scale.is_empty() {
                    return Err(ParseError::at(
                        spos,
                        "prob cases must not have an aggregation prefix",
                    ));
                }
                for c in &e.cases {
                    if c.value < Rational::zero() || c.value > Rational::one() {
                        return Err(ParseError::at(
                            spos,
                            format!("probability out of range: {}", c.value),
                        ));
                    }
                }
                prob = Some(e.cases.into_iter().map(|c| (c.condition, c.value)).collect());
            }
            "add" => {
                if add_list.is_some() {
                    return Err(ParseError::at(spos, "duplicate add section"));
                }
                add_list = Some(parse_atom_list(p)?);
            }
            "del" => {
                if delete_list.is_some() {
                    return Err(ParseError::at(spos, "duplicate del section"));
                }
                delete_list = Some(parse_atom_list(p)?);
            }
            other => {
                return Err(ParseError::at(
                    spos,
                    format!("expected `prob`, `add`, `del`, or `}}`, found `{other}`"),
                ));
            }
        }
    }
    p.params.clear();
    let prob = prob.ok_or_else(|| {
        ParseError::at(npos, format!("action `{name}` must declare a prob section"))
    })?;
    Ok(PstripsAction {
        name,
        parameters,
        success_prob_cases: prob,
        add_list: add_list.unwrap_or_default(),
        delete_list: delete_list.unwrap_or_default(),
    })
}

fn parse_exogenous(
    p: &mut Parser,
    sort: SortName,
    spos: (usize, usize),
) -> Result<ExogenousEvent, ParseError> {
    let (var, vpos) = p.expect_ident()?;
    check_fresh_name(&var, vpos)?;
    if p.ctx.constants.contains_key(&var) {
        return Err(ParseError::at(
            vpos,
            format!("event variable `{var}` shadows a declared constant"),
        ));
    }
    p.expect_punct('{')?;
    p.params.clear();
    p.clear_inference();
    let mut prob: Option<Rational> = None;
    let mut add_list: Option<Vec<Atom>> = None;
    let mut delete_list: Option<Vec<Atom>> = None;
    while !p.eat_punct('}') {
        let (sec, secpos) = p.expect_ident()?;
        match sec.as_str() {
            "prob" => {
                if prob.is_some() {
                    return Err(ParseError::at(secpos, "duplicate prob section"));
                }
                let v = p.value()?;
                if v < Rational::zero() || v > Rational::one() {
                    return Err(ParseError::at(
                        secpos,
                        format!("probability out of range: {v}"),
                    ));
                }
                prob = Some(v);
            }
            "add" => {
                if add_list.is_some() {
                    return Err(ParseError::at(secpos, "duplicate add section"));
                }
                add_list = Some(parse_atom_list(p)?);
            }
            "del" => {
                if delete_list.is_some() {
                    return Err(ParseError::at(secpos, "duplicate del section"));
                }
                delete_list = Some(parse_atom_list(p)?);
            }
            other => {
                return Err(ParseError::at(
                    secpos,
                    format!("expected `prob`, `add`, `del`, or `}}`, found `{other}`"),
                ));
            }
        }
    }
    let prob = prob
        .ok_or_else(|| ParseError::at(spos, "exogenous event must declare a prob section"))?;
    // The event variable's inferred sort must agree with the declared sort.
    if let Some(inferred) = p.inferred_var_sort(&var) {
        if inferred != &sort {
            return Err(ParseError::at(
                vpos,
                format!("event variable `{var}` is declared `{sort}` but used as `{inferred}`"),
            ));
        }
    }
    Ok(ExogenousEvent {
        sort,
        var,
        prob,
        add_list: add_list.unwrap_or_default(),
        delete_list: delete_list.unwrap_or_default(),
        variants: Vec::new(),
    })
}

fn parse_atom_list(p: &mut Parser) -> Result<Vec<Atom>, ParseError> {
    p.expect_punct('[')?;
    let mut atoms = Vec::new();
    if !p.eat_punct(']') {
        loop {
            atoms.push(p.atom()?);
            if !p.eat_punct(',') {
                break;
            }
        }
        p.expect_punct(']')?;
    }
    Ok(atoms)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Structural validation; returns one message per violation (empty when the
/// specification satisfies every invariant). `parse_domain` runs this before
/// returning, so it mainly serves programmatically built specifications and
/// the `check` command.
pub fn validate_spec(spec: &RmdpSpec) -> Vec<String> {
    let mut out = Vec::new();
    let sort_names: BTreeSet<&str> = spec.sorts.iter().map(|s| s.name.as_str()).collect();
    let consts: BTreeMap<&str, &str> = spec
        .sorts
        .iter()
        .flat_map(|s| s.constants.iter().map(|c| (c.as_str(), s.name.as_str())))
        .collect();
    let preds: BTreeMap<&str, usize> =
        spec.predicates.iter().map(|p| (p.name.as_str(), p.arg_sorts.len())).collect();

    for s in &spec.sorts {
        if s.name.starts_with("__") {
            out.push(format!("sort `{}` uses a reserved name", s.name));
        }
        for c in &s.constants {
            if c.starts_with("__") {
                out.push(format!("constant `{c}` uses a reserved name"));
            }
        }
    }
    for pd in &spec.predicates {
        if pd.name.starts_with("__") {
            out.push(format!("predicate `{}` uses a reserved name", pd.name));
        }
        for s in &pd.arg_sorts {
            if !sort_names.contains(s.as_str()) {
                out.push(format!("predicate `{}` uses unknown sort `{s}`", pd.name));
            }
        }
    }

    if spec.pstrips.is_empty() {
        out.push("at least one action is required".to_string());
    }
    if spec.discount <= Rational::zero() || spec.discount >= Rational::one() {
        out.push(format!(
            "discount must be strictly between 0 and 1, got {}",
            spec.discount
        ));
    }

    for a in &spec.pstrips {
        let label = format!("action `{}`", a.name);
        let param_names: BTreeSet<&str> = a.parameters.iter().map(|(n, _)| n.as_str()).collect();
        if param_names.len() != a.parameters.len() {
            out.push(format!("{label}: duplicate parameter names"));
        }
        for (n, s) in &a.parameters {
            if n.starts_with("__") {
                out.push(format!("{label}: parameter `{n}` uses a reserved name"));
            }
            if !sort_names.contains(s.as_str()) {
                out.push(format!("{label}: parameter `{n}` has unknown sort `{s}`"));
            }
        }
        for (f, pr) in &a.success_prob_cases {
            if pr < &Rational::zero() || pr > &Rational::one() {
                out.push(format!("{label}: probability out of range: {pr}"));
            }
            for v in f.free_vars() {
                out.push(format!("{label}: prob condition has free variable `{v}`"));
            }
            for q in f.params() {
                if !param_names.contains(q.as_str()) {
                    out.push(format!("{label}: prob condition uses unknown parameter `{q}`"));
                }
            }
        }
        let prob_expr = empty_prefix_expr(a.success_prob_cases.clone());
        for v in prob_expr.check_partition() {
            out.push(format!("{label}: prob cases: {v}"));
        }
        for (which, list) in [("add", &a.add_list), ("del", &a.delete_list)] {
            for atom in list {
                match atom {
                    Atom::Pred { name, args } => {
                        match preds.get(name.as_str()) {
                            None => out.push(format!(
                                "{label}: {which} atom uses undeclared predicate `{name}`"
                            )),
                            Some(k) if *k != args.len() => out.push(format!(
                                "{label}: {which} atom `{atom}` has wrong arity"
                            )),
                            _ => {}
                        }
                        for t in args {
                            match t {
                                Term::Param(q) if param_names.contains(q.as_str()) => {}
                                Term::Const(c) if consts.contains_key(c.as_str()) => {}
                                other => out.push(format!(
                                    "{label}: {which} atom `{atom}` argument `{other}` is not a parameter or constant"
                                )),
                            }
                        }
                    }
                    Atom::Eq(..) => {
                        out.push(format!("{label}: {which} list contains an equality"))
                    }
                }
            }
        }
        for atom in &a.add_list {
            if a.delete_list.contains(atom) {
                out.push(format!(
                    "{label}: atom `{atom}` appears in both add and del lists"
                ));
            }
        }
    }

    for schema in &spec.actions {
        let label = format!("action `{}`", schema.name);
        // Variant probabilities must sum to one case-wise; compiled variants
        // share the same case conditions.
        if let Some(first) = schema.variants.first() {
            let conds: Vec<&Formula> =
                first.choice_prob.cases.iter().map(|c| &c.condition).collect();
            let aligned = schema.variants.iter().all(|v| {
                v.choice_prob.cases.len() == conds.len()
                    && v.choice_prob
                        .cases
                        .iter()
                        .zip(&conds)
                        .all(|(c, f)| &&c.condition == f)
            });
            if !aligned {
                out.push(format!("{label}: variant probability cases are not aligned"));
            } else {
                for (i, cond) in conds.iter().enumerate() {
                    if !satisfiable(cond) {
                        continue;
                    }
                    let total: Rational = schema
                        .variants
                        .iter()
                        .map(|v| v.choice_prob.cases[i].value.clone())
                        .sum();
                    if !total.is_one() {
                        out.push(format!(
                            "{label}: variant probabilities sum to {total} (not 1) under `{cond}`"
                        ));
                    }
                }
            }
        } else {
            out.push(format!("{label}: no variants"));
        }
        for v in &schema.variants {
            for (pred, tvd) in &v.tvds {
                let arity = preds.get(pred.as_str()).copied().unwrap_or(0);
                let formals: BTreeSet<String> = tvd_formals(arity)
                    .into_iter()
                    .map(|t| t.name().to_string())
                    .collect();
                for fv in tvd.free_vars() {
                    if !formals.contains(&fv) {
                        out.push(format!(
                            "variant `{}`: TVD for `{pred}` references variable `{fv}` outside the head variables",
                            v.name
                        ));
                    }
                }
            }
        }
    }

    let mut seen_sorts: BTreeSet<&str> = BTreeSet::new();
    for e in &spec.exogenous {
        let label = format!("exogenous event on `{}`", e.sort);
        if !sort_names.contains(e.sort.as_str()) {
            out.push(format!("{label}: unknown sort"));
        }
        if !seen_sorts.insert(e.sort.as_str()) {
            out.push(format!("{label}: more than one event for this sort"));
        }
        if e.prob < Rational::zero() || e.prob > Rational::one() {
            out.push(format!("{label}: probability out of range: {}", e.prob));
        }
        for (which, list) in [("add", &e.add_list), ("del", &e.delete_list)] {
            for atom in list {
                let Atom::Pred { name, args } = atom else {
                    out.push(format!("{label}: {which} list contains an equality"));
                    continue;
                };
                match preds.get(name.as_str()) {
                    None => out.push(format!(
                        "{label}: {which} atom uses undeclared predicate `{name}`"
                    )),
                    Some(k) if *k != args.len() => {
                        out.push(format!("{label}: {which} atom `{atom}` has wrong arity"))
                    }
                    _ => {}
                }
                if !args.iter().any(|t| matches!(t, Term::Var(v) if v == &e.var)) {
                    out.push(format!(
                        "{label}: {which} atom `{atom}` does not mention the event variable `{}`",
                        e.var
                    ));
                }
                let mut wildcards: BTreeSet<&str> = BTreeSet::new();
                for t in args {
                    match t {
                        Term::Var(v) if v == &e.var => {}
                        Term::Var(v) => {
                            if which == "add" {
                                out.push(format!(
                                    "{label}: add atom `{atom}` has wildcard `{v}` (adds must be fully bound)"
                                ));
                            }
                            if !wildcards.insert(v.as_str()) {
                                out.push(format!(
                                    "{label}: {which} atom `{atom}` repeats wildcard `{v}`"
                                ));
                            }
                        }
                        Term::Const(c) => {
                            if !consts.contains_key(c.as_str()) {
                                out.push(format!(
                                    "{label}: {which} atom `{atom}` uses undeclared constant `{c}`"
                                ));
                            }
                        }
                        Term::Param(q) => out.push(format!(
                            "{label}: {which} atom `{atom}` uses parameter `${q}` (events have no parameters)"
                        )),
                    }
                }
            }
        }
    }

    if spec.reward.cases.is_empty() {
        out.push("reward has no cases".to_string());
    }
    if !spec.reward.params().is_empty() {
        out.push("reward must not reference action parameters".to_string());
    }
    for e in &spec.reward.prefix {
        if !sort_names.contains(e.sort.as_str()) {
            out.push(format!("reward prefix variable `{}` has unknown sort `{}`", e.var, e.sort));
        }
    }
    for s in &spec.reward.scale {
        if !sort_names.contains(s.as_str()) {
            out.push(format!("reward scale uses unknown sort `{s}`"));
        }
    }
    for v in spec.reward.check_partition() {
        out.push(format!("reward cases: {v}"));
    }
    out
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

fn write_atom_list(f: &mut fmt::Formatter<'_>, name: &str, list: &[Atom]) -> fmt::Result {
    if list.is_empty() {
        return Ok(());
    }
    write!(f, "  {name} [ ")?;
    for (i, a) in list.iter().enumerate() {
        if i > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{a}")?;
    }
    writeln!(f, " ]")
}

impl fmt::Display for RmdpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.sorts {
            write!(f, "sort {}", s.name)?;
            if !s.constants.is_empty() {
                write!(f, " [ {} ]", s.constants.join(", "))?;
            }
            writeln!(f)?;
        }
        writeln!(f)?;
        for pd in &self.predicates {
            writeln!(f, "pred {}({})", pd.name, pd.arg_sorts.join(", "))?;
        }
        for a in &self.pstrips {
            writeln!(f)?;
            write!(f, "action {}(", a.name)?;
            for (i, (n, s)) in a.parameters.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{n}: {s}")?;
            }
            writeln!(f, ") {{")?;
            write!(f, "  prob {{ ")?;
            for (i, (cond, pr)) in a.success_prob_cases.iter().enumerate() {
                if i > 0 {
                    write!(f, " ; ")?;
                }
                write!(f, "{cond} : {pr}")?;
            }
            writeln!(f, " }}")?;
            write_atom_list(f, "add", &a.add_list)?;
            write_atom_list(f, "del", &a.delete_list)?;
            writeln!(f, "}}")?;
        }
        for e in &self.exogenous {
            writeln!(f)?;
            writeln!(f, "exogenous {} {} {{", e.sort, e.var)?;
            writeln!(f, "  prob {}", e.prob)?;
            write_atom_list(f, "add", &e.add_list)?;
            write_atom_list(f, "del", &e.delete_list)?;
            writeln!(f, "}}")?;
        }
        writeln!(f)?;
        writeln!(f, "reward {}", self.reward)?;
        writeln!(f)?;
        writeln!(f, "discount {}", self.discount)?;
        writeln!(f, "mode {}", self.mode)
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::rat;
    use crate::logic::Interpretation;

    fn param(n: &str) -> Term {
        Term::Param(n.to_string())
    }
    fn var(n: &str) -> Term {
        Term::Var(n.to_string())
    }

    #[test]
    fn parses_boxworld_shapes() {
        let spec = parse_domain(fixtures::BOXWORLD).unwrap();
        assert_eq!(spec.sorts.len(), 3);
        assert_eq!(spec.predicates.len(), 3);
        assert_eq!(spec.actions.len(), 4);
        assert_eq!(spec.mode, BackupMode::Accumulate);
        assert_eq!(spec.discount, rat(9, 10));
        assert_eq!(spec.sorts[2].constants, vec!["paris".to_string()]);

        let unload = spec.action("unload").unwrap();
        assert_eq!(
            unload.variants.iter().map(|v| v.name.as_str()).collect::<Vec<_>>(),
            vec!["unloadS", "unloadF"]
        );
        let success = &unload.variants[0].choice_prob;
        let failure = &unload.variants[1].choice_prob;
        let precond = Formula::and_of(vec![
            Formula::atom(Atom::pred("On", vec![param("B"), param("T")])),
            Formula::atom(Atom::pred("TIn", vec![param("T"), param("C")])),
        ]);
        assert_eq!(success.cases[0].condition, precond);
        assert_eq!(success.cases[0].value, rat(9, 10));
        assert_eq!(success.cases[1].condition, precond.negate());
        assert_eq!(success.cases[1].value, rat(0, 1));
        assert_eq!(failure.cases[0].value, rat(1, 10));
        assert_eq!(failure.cases[1].value, rat(1, 1));

        // noop: degenerate probability-1 case collapses to a single variant
        // whose TVDs are all frames.
        let noop = spec.action("noop").unwrap();
        assert_eq!(noop.variants.len(), 1);
        assert_eq!(noop.variants[0].name, "noop");
        for pd in &spec.predicates {
            let formals = tvd_formals(pd.arg_sorts.len());
            assert_eq!(
                noop.variants[0].tvds[&pd.name],
                Formula::atom(Atom::pred(pd.name.clone(), formals))
            );
        }

        // drive keeps both variants: its success probability is 0 away from
        // the precondition, so the failure branch has probability 1 there.
        assert_eq!(spec.action("drive").unwrap().variants.len(), 2);
    }

    #[test]
    fn unload_success_tvd_matches_worked_form() {
        let spec = parse_domain(fixtures::BOXWORLD).unwrap();
        let unload = spec.action("unload").unwrap();
        let y = tvd_formals(2);
        // BIn holds after unloadS iff it held before (nothing deletes it) or
        // the head matches the added atom and the precondition held.
        let expected = Formula::or_of(vec![
            Formula::atom(Atom::pred("BIn", y.clone())),
            Formula::and_of(vec![
                Formula::literal(Atom::eq(y[0].clone(), param("B")), true),
                Formula::literal(Atom::eq(y[1].clone(), param("C")), true),
                Formula::atom(Atom::pred("On", vec![param("B"), param("T")])),
                Formula::atom(Atom::pred("TIn", vec![param("T"), param("C")])),
            ]),
        ]);
        assert_eq!(unload.variants[0].tvds["BIn"], expected);
        // On is deleted on success: frame minus the deleted instance, plus
        // nothing (On is not added).
        let expected_on = Formula::and_of(vec![
            Formula::atom(Atom::pred("On", y.clone())),
            Formula::and_of(vec![
                Formula::literal(Atom::eq(y[0].clone(), param("B")), true),
                Formula::literal(Atom::eq(y[1].clone(), param("T")), true),
            ])
            .negate(),
        ]);
        assert_eq!(unload.variants[0].tvds["On"], expected_on);
        // Failure variant: all frames.
        assert_eq!(
            unload.variants[1].tvds["On"],
            Formula::atom(Atom::pred("On", y))
        );
    }

    #[test]
    fn drive_to_same_city_is_a_self_loop() {
        let spec = parse_domain(fixtures::BOXWORLD).unwrap();
        let drive = spec.action("drive").unwrap();
        let tvd = &drive.variants[0].tvds["TIn"];
        let interp = Interpretation {
            objects: BTreeMap::from([
                ("Truck".to_string(), vec!["t1".to_string()]),
                ("City".to_string(), vec!["paris".to_string()]),
                ("Box".to_string(), vec!["b1".to_string()]),
            ]),
            facts: BTreeSet::from([("TIn".to_string(), vec!["t1".to_string(), "paris".to_string()])]),
        };
        // Head = TIn(t1, paris), parameters T=t1, C1=C2=paris: the delete
        // matches but so does the add, and the add wins.
        let env = BTreeMap::from([
            ("__y1".to_string(), "t1".to_string()),
            ("__y2".to_string(), "paris".to_string()),
            ("T".to_string(), "t1".to_string()),
            ("C1".to_string(), "paris".to_string()),
            ("C2".to_string(), "paris".to_string()),
        ]);
        assert!(crate::logic::eval_formula(tvd, &interp, &env).unwrap());
    }

    #[test]
    fn variant_probabilities_ground_sum_to_one() {
        let spec = parse_domain(fixtures::BOXWORLD).unwrap();
        let interp = Interpretation {
            objects: BTreeMap::from([
                ("Box".to_string(), vec!["b1".to_string()]),
                ("Truck".to_string(), vec!["t1".to_string()]),
                ("City".to_string(), vec!["paris".to_string(), "rome".to_string()]),
            ]),
            facts: BTreeSet::from([("On".to_string(), vec!["b1".to_string(), "t1".to_string()])]),
        };
        for schema in &spec.actions {
            // Enumerate all parameter bindings.
            let mut envs: Vec<BTreeMap<String, String>> = vec![BTreeMap::new()];
            for (n, s) in &schema.parameters {
                let mut next = Vec::new();
                for env in &envs {
                    for o in interp.objects_of(s) {
                        let mut e2 = env.clone();
                        e2.insert(n.clone(), o.clone());
                        next.push(e2);
                    }
                }
                envs = next;
            }
            for env in envs {
                let total: Rational = schema
                    .variants
                    .iter()
                    .map(|v| v.choice_prob.evaluate_with_env(&interp, &env).unwrap())
                    .sum();
                assert!(total.is_one(), "{}: sums to {total} under {env:?}", schema.name);
            }
        }
    }

    #[test]
    fn exogenous_event_compiles_with_wildcard_delete() {
        let spec = parse_domain(fixtures::BOXWORLD_ADDITIVE).unwrap();
        assert_eq!(spec.exogenous.len(), 1);
        let e = spec.exogenous_for("Box").unwrap();
        assert_eq!(e.prob, rat(1, 5));
        assert_eq!(e.var, "B");
        assert_eq!(
            e.variants.iter().map(|v| v.name.as_str()).collect::<Vec<_>>(),
            vec!["exo_BoxS", "exo_BoxF"]
        );
        let y = tvd_formals(2);
        // The wildcard city leaves only the box-position constraint.
        let expected = Formula::and_of(vec![
            Formula::atom(Atom::pred("BIn", y.clone())),
            Formula::literal(Atom::eq(y[0].clone(), var("B")), true).negate(),
        ]);
        assert_eq!(e.variants[0].tvds["BIn"], expected);
        // Other predicates are untouched.
        assert_eq!(e.variants[0].tvds["On"], Formula::atom(Atom::pred("On", y)));
        assert_eq!(
            e.variants[0].choice_prob.cases[0].value.clone()
                + e.variants[1].choice_prob.cases[0].value.clone(),
            rat(1, 1)
        );
        // The additive fixture's reward aggregates with sum.
        assert_eq!(spec.reward.prefix[0].op, crate::expr::AggOp::Sum);
    }

    #[test]
    fn round_trips_both_fixtures() {
        for text in [fixtures::BOXWORLD, fixtures::BOXWORLD_ADDITIVE] {
            let s1 = parse_domain(text).unwrap();
            let printed = s1.to_string();
            let s2 = parse_domain(&printed).unwrap();
            assert_eq!(s1, s2, "printed domain did not round-trip:\n{printed}");
        }
    }

    #[test]
    fn rejects_invalid_domains() {
        // No actions.
        let err = parse_domain("sort Box\npred P(Box)\nreward { true : 1 }\ndiscount 1/2\n")
            .unwrap_err();
        assert!(err.msg.contains("at least one action"), "{err}");

        let base = "sort Box\nsort City [ paris ]\npred BIn(Box, City)\n";
        // Probability out of range.
        let err = parse_domain(&format!(
            "{base}action a(B: Box) {{ prob {{ true : 3/2 }} }}\nreward {{ true : 1 }}\ndiscount 1/2\n"
        ))
        .unwrap_err();
        assert!(err.msg.contains("probability out of range"), "{err}");

        // Non-partition probability cases (overlapping conditions).
        let err = parse_domain(&format!(
            "{base}action a(B: Box) {{ prob {{ BIn(B, paris) : 1/2 ; true : 1/2 }} }}\nreward {{ true : 1 }}\ndiscount 1/2\n"
        ))
        .unwrap_err();
        assert!(err.msg.contains("prob cases"), "{err}");

        // Unknown predicate in add list.
        let err = parse_domain(&format!(
            "{base}action a(B: Box) {{ prob {{ true : 1 }} add [ Foo(B) ] }}\nreward {{ true : 1 }}\ndiscount 1/2\n"
        ))
        .unwrap_err();
        assert!(err.msg.contains("unknown predicate"), "{err}");

        // Arity violation.
        let err = parse_domain(&format!(
            "{base}action a(B: Box) {{ prob {{ true : 1 }} add [ BIn(B) ] }}\nreward {{ true : 1 }}\ndiscount 1/2\n"
        ))
        .unwrap_err();
        assert!(err.msg.contains("arguments"), "{err}");

        // Free variable in a prob condition.
        let err = parse_domain(&format!(
            "{base}action a(B: Box) {{ prob {{ BIn(X, paris) : 1 ; else : 0 }} }}\nreward {{ true : 1 }}\ndiscount 1/2\n"
        ))
        .unwrap_err();
        assert!(err.msg.contains("not bound"), "{err}");

        // Missing discount.
        let err = parse_domain(&format!(
            "{base}action a(B: Box) {{ prob {{ true : 1 }} }}\nreward {{ true : 1 }}\n"
        ))
        .unwrap_err();
        assert!(err.msg.contains("missing discount"), "{err}");

        // Discount at the boundary.
        let err = parse_domain(&format!(
            "{base}action a(B: Box) {{ prob {{ true : 1 }} }}\nreward {{ true : 1 }}\ndiscount 1\n"
        ))
        .unwrap_err();
        assert!(err.msg.contains("strictly between"), "{err}");

        // Duplicate sort.
        let err = parse_domain("sort Box\nsort Box\n").unwrap_err();
        assert!(err.msg.contains("duplicate sort"), "{err}");

        // Undeclared sort in a predicate.
        let err = parse_domain("sort Box\npred P(Vehicle)\n").unwrap_err();
        assert!(err.msg.contains("unknown sort"), "{err}");

        // Parameter shadowing a constant.
        let err = parse_domain(&format!(
            "{base}action a(paris: City) {{ prob {{ true : 1 }} }}\nreward {{ true : 1 }}\ndiscount 1/2\n"
        ))
        .unwrap_err();
        assert!(err.msg.contains("shadows"), "{err}");

        // Reserved name.
        let err = parse_domain("sort __Hidden\n").unwrap_err();
        assert!(err.msg.contains("reserved"), "{err}");

        // Two events on one sort.
        let err = parse_domain(&format!(
            "{base}action a(B: Box) {{ prob {{ true : 1 }} }}\nexogenous Box B {{ prob 1/2 }}\nexogenous Box B {{ prob 1/3 }}\nreward {{ true : 1 }}\ndiscount 1/2\n"
        ))
        .unwrap_err();
        assert!(err.msg.contains("already has"), "{err}");

        // Wildcard in an event add list.
        let err = parse_domain(&format!(
            "{base}action a(B: Box) {{ prob {{ true : 1 }} }}\nexogenous Box B {{ prob 1/2 add [ BIn(B, C) ] }}\nreward {{ true : 1 }}\ndiscount 1/2\n"
        ))
        .unwrap_err();
        assert!(err.msg.contains("wildcard"), "{err}");

        // Event variable used at the wrong sort.
        let err = parse_domain(&format!(
            "{base}action a(B: Box) {{ prob {{ true : 1 }} }}\nexogenous City B {{ prob 1/2 del [ BIn(B, B) ] }}\nreward {{ true : 1 }}\ndiscount 1/2\n"
        ))
        .unwrap_err();
        assert!(err.msg.contains("used"), "{err}");
    }

    #[test]
    fn goal_mode_and_defaults() {
        let text = "sort Box\nsort City [ paris ]\npred BIn(Box, City)\naction a(B: Box, C: City) { prob { BIn(B, C) : 1 ; else : 0 } del [ BIn(B, C) ] }\nreward [max B] { BIn(B, paris) : 10 ; else : 0 }\ndiscount 9/10\nmode goal\n";
        let spec = parse_domain(text).unwrap();
        assert_eq!(spec.mode, BackupMode::GoalTerminal);
        // Omitted mode defaults to accumulate.
        let spec2 = parse_domain(&text.replace("mode goal\n", "")).unwrap();
        assert_eq!(spec2.mode, BackupMode::Accumulate);
        // validate_spec is clean on the fixtures.
        assert!(validate_spec(&spec).is_empty());
        assert!(validate_spec(&parse_domain(fixtures::BOXWORLD).unwrap()).is_empty());
        assert!(validate_spec(&parse_domain(fixtures::BOXWORLD_ADDITIVE).unwrap()).is_empty());
    }
}
