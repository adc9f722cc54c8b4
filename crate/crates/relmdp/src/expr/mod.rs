//! Relational case expressions: an aggregation prefix over a mutually
//! exclusive, exhaustive list of (formula : value) cases, with an optional
//! sort-cardinality scale.
//!
//! These expressions are the central symbolic object of the solver: rewards,
//! probability expressions, Q-functions and value functions are all
//! represented this way. The module provides exact-rational evaluation
//! against finite interpretations, the safe binary combination operators
//! (`⊕`, `⊗`, pairwise max) via cross products of cases, standardize-apart,
//! scalar combination, choice-probability multiplication, aligned addition
//! for identically-shaped prefixes, and a symbolic dominance test used when
//! pairwise max is not safe.
//!
//! Simplification and decision-list normalization live in [`simplify`]; the
//! text format lives in [`parse`].
//!
//! Value semantics: evaluation enumerates sort-respecting bindings of the
//! prefix variables, looks up the unique matching case per binding, and
//! folds with the aggregation operators right to left (the innermost,
//! rightmost operator aggregates first). The scale multiplies the final
//! result by the product of the named sorts' object counts.

pub mod parse;
pub mod simplify;

use crate::logic::{
    eval_formula, satisfiable, EvalError, Formula, Interpretation, SortName, Substitution, Term,
};
use num::{BigInt, BigRational, One, Signed, Zero};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Exact rational used for all case values and probabilities.
pub type Rational = BigRational;

/// Convenience constructor for exact rationals.
pub fn rat(num: i64, den: i64) -> Rational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// Aggregation operator: the numeric generalization of a quantifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AggOp {
    Max,
    Min,
    Sum,
    Avg,
    Product,
}

impl AggOp {
    pub fn name(self) -> &'static str {
        match self {
            AggOp::Max => "max",
            AggOp::Min => "min",
            AggOp::Sum => "sum",
            AggOp::Avg => "avg",
            AggOp::Product => "product",
        }
    }

    pub fn from_name(s: &str) -> Option<AggOp> {
        match s {
            "max" => Some(AggOp::Max),
            "min" => Some(AggOp::Min),
            "sum" => Some(AggOp::Sum),
            "avg" => Some(AggOp::Avg),
            "product" => Some(AggOp::Product),
            _ => None,
        }
    }
}

impl fmt::Display for AggOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One aggregation prefix entry: an operator binding a sorted variable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PrefixEntry {
    pub op: AggOp,
    pub var: String,
    pub sort: SortName,
}

impl PrefixEntry {
    pub fn new(op: AggOp, var: impl Into<String>, sort: impl Into<String>) -> Self {
        PrefixEntry { op, var: var.into(), sort: sort.into() }
    }
}

/// One case: a quantifier-free condition and its exact value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Case {
    pub condition: Formula,
    pub value: Rational,
}

impl Case {
    pub fn new(condition: Formula, value: Rational) -> Self {
        Case { condition, value }
    }
}

/// A relational expression: `scale · [prefix] [cases]`.
///
/// Invariants (maintained by the operations, checkable with
/// [`RelExpr::check_partition`]):
/// - cases are pairwise mutually exclusive and jointly exhaustive;
/// - every free variable of every condition is bound by the prefix (action
///   parameters and constants are not variables).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelExpr {
    pub prefix: Vec<PrefixEntry>,
    /// Multiply the result by the object count of each listed sort.
    pub scale: Vec<SortName>,
    pub cases: Vec<Case>,
}

/// Binary combination operators over expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Mul,
    Max,
}

impl BinOp {
    pub fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Mul => "multiply",
            BinOp::Max => "max",
        }
    }

    fn apply(self, a: &Rational, b: &Rational) -> Rational {
        match self {
            BinOp::Add => a + b,
            BinOp::Mul => a * b,
            BinOp::Max => a.max(b).clone(),
        }
    }
}

/// Errors from expression operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("operation `{op}` is not safe over aggregation `{agg}`")]
    UnsafeCombination { op: &'static str, agg: &'static str },
    #[error("scales must match for this operation: {0:?} vs {1:?}")]
    ScaleMismatch(Vec<SortName>, Vec<SortName>),
    #[error("multiplication over max/min prefixes requires nonnegative case values")]
    NegativeInProduct,
    #[error("case count {0} exceeds the configured cap {1}; simplification could not keep the expression compact")]
    TooManyCases(usize, usize),
    #[error("pairwise max could not be resolved: {0}")]
    MaxUnresolved(String),
    #[error("probability expression must have an empty prefix")]
    OpenExprHasPrefix,
    #[error("expected the prefix to contain `{0}`")]
    MissingPrefixVar(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

// ---------------------------------------------------------------------------
// Construction helpers
// ---------------------------------------------------------------------------

impl RelExpr {
    /// Prefix-free constant expression `[[true : v]]`.
    pub fn constant(v: Rational) -> RelExpr {
        RelExpr {
            prefix: Vec::new(),
            scale: Vec::new(),
            cases: vec![Case::new(Formula::True, v)],
        }
    }

    /// Two-case expression `[cond : v; ¬cond : w]` under the given prefix.
    pub fn if_else(
        prefix: Vec<PrefixEntry>,
        cond: Formula,
        v: Rational,
        w: Rational,
    ) -> RelExpr {
        let neg = cond.negate();
        RelExpr {
            prefix,
            scale: Vec::new(),
            cases: vec![Case::new(cond, v), Case::new(neg, w)],
        }
    }

    /// Variable names bound by the prefix.
    pub fn prefix_vars(&self) -> BTreeSet<String> {
        self.prefix.iter().map(|e| e.var.clone()).collect()
    }

    /// Map from prefix variable name to its (operator, sort).
    pub fn prefix_info(&self) -> BTreeMap<String, (AggOp, SortName)> {
        self.prefix
            .iter()
            .map(|e| (e.var.clone(), (e.op, e.sort.clone())))
            .collect()
    }

    /// All variable names free in some case condition.
    pub fn condition_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for c in &self.cases {
            out.extend(c.condition.free_vars());
        }
        out
    }

    /// All action-parameter names appearing in conditions.
    pub fn params(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for c in &self.cases {
            out.extend(c.condition.params());
        }
        out
    }

    /// Every name (variable or otherwise) appearing anywhere; used to pick
    /// fresh names.
    fn all_names(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.prefix.iter().map(|e| e.var.clone()).collect();
        for c in &self.cases {
            for atom in c.condition.atoms() {
                for t in atom.terms() {
                    out.insert(t.name().to_string());
                }
            }
        }
        out
    }

    /// True when every prefix operator equals `op`.
    pub fn prefix_all(&self, op: AggOp) -> bool {
        self.prefix.iter().all(|e| e.op == op)
    }

    /// True when all case values are nonnegative.
    pub fn nonnegative(&self) -> bool {
        self.cases.iter().all(|c| !c.value.is_negative())
    }

    /// Apply a substitution to every case condition (prefix unchanged).
    pub fn map_conditions(&self, s: &Substitution) -> RelExpr {
        RelExpr {
            prefix: self.prefix.clone(),
            scale: self.scale.clone(),
            cases: self
                .cases
                .iter()
                .map(|c| Case::new(s.apply(&c.condition), c.value.clone()))
                .collect(),
        }
    }

    /// Check mutual exclusivity and exhaustiveness via satisfiability;
    /// returns human-readable violations (empty when the invariants hold).
    pub fn check_partition(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.cases.len() {
            for j in (i + 1)..self.cases.len() {
                let both = Formula::and_of(vec![
                    self.cases[i].condition.clone(),
                    self.cases[j].condition.clone(),
                ]);
                if satisfiable(&both) {
                    out.push(format!("cases {i} and {j} are not mutually exclusive"));
                }
            }
        }
        let any = Formula::or_of(self.cases.iter().map(|c| c.condition.clone()).collect());
        if satisfiable(&any.negate()) {
            out.push("cases are not exhaustive".to_string());
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

impl RelExpr {
    /// Evaluate against an interpretation (all conditions closed by the
    /// prefix; errors if a variable or parameter is unbound).
    pub fn evaluate(&self, interp: &Interpretation) -> Result<Rational, EvalError> {
        self.evaluate_with_env(interp, &BTreeMap::new())
    }

    /// Evaluate with outer bindings (used for open expressions that mention
    /// action parameters).
    pub fn evaluate_with_env(
        &self,
        interp: &Interpretation,
        env: &BTreeMap<String, String>,
    ) -> Result<Rational, EvalError> {
        let mut env = env.clone();
        let core = eval_prefix(&self.prefix, &self.cases, interp, &mut env)?;
        let mut result = core;
        for sort in &self.scale {
            let n = interp.objects_of(sort).len();
            result *= Rational::from(BigInt::from(n));
        }
        Ok(result)
    }
}

fn eval_prefix(
    prefix: &[PrefixEntry],
    cases: &[Case],
    interp: &Interpretation,
    env: &mut BTreeMap<String, String>,
) -> Result<Rational, EvalError> {
    let Some(entry) = prefix.first() else {
        for case in cases {
            if eval_formula(&case.condition, interp, env)? {
                return Ok(case.value.clone());
            }
        }
        return Err(EvalError::NoCaseHolds);
    };
    let objects = interp.objects_of(&entry.sort).to_vec();
    if objects.is_empty() {
        return match entry.op {
            AggOp::Sum => Ok(Rational::zero()),
            AggOp::Product => Ok(Rational::one()),
            op => Err(EvalError::EmptySort(entry.sort.clone(), op.name().to_string())),
        };
    }
    let mut acc: Option<Rational> = None;
    for obj in &objects {
        let saved = env.insert(entry.var.clone(), obj.clone());
        let v = eval_prefix(&prefix[1..], cases, interp, env)?;
        match saved {
            Some(s) => {
                env.insert(entry.var.clone(), s);
            }
            None => {
                env.remove(&entry.var);
            }
        }
        acc = Some(match acc {
            None => v,
            Some(a) => match entry.op {
                AggOp::Max => a.max(v),
                AggOp::Min => a.min(v),
                AggOp::Sum | AggOp::Avg => a + v,
                AggOp::Product => a * v,
            },
        });
    }
    let mut total = acc.expect("nonempty object list");
    if entry.op == AggOp::Avg {
        total /= Rational::from(BigInt::from(objects.len()));
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Standardize apart
// ---------------------------------------------------------------------------

/// Rename the prefix variables of `e` so they avoid `avoid` (and each other);
/// semantics are unchanged on every interpretation.
pub fn standardize_apart(e: &RelExpr, avoid: &BTreeSet<String>) -> RelExpr {
    let mut taken: BTreeSet<String> = avoid.clone();
    taken.extend(e.all_names());
    let mut renames = Substitution::new();
    let mut new_prefix = Vec::with_capacity(e.prefix.len());
    for entry in &e.prefix {
        let name = if avoid.contains(&entry.var) {
            let fresh = fresh_name(&entry.var, &taken);
            taken.insert(fresh.clone());
            renames.bind(Term::Var(entry.var.clone()), Term::Var(fresh.clone()));
            fresh
        } else {
            entry.var.clone()
        };
        new_prefix.push(PrefixEntry::new(entry.op, name, entry.sort.clone()));
    }
    if renames.is_empty() {
        return e.clone();
    }
    let mut out = e.map_conditions(&renames);
    out.prefix = new_prefix;
    out
}

/// Smallest numeric-suffix variant of `base` that is not taken.
pub(crate) fn fresh_name(base: &str, taken: &BTreeSet<String>) -> String {
    // Strip an existing numeric suffix so B2 renames to B3, not B22.
    let stem: &str = base.trim_end_matches(|c: char| c.is_ascii_digit());
    let stem = if stem.is_empty() { base } else { stem };
    for k in 2.. {
        let cand = format!("{stem}{k}");
        if !taken.contains(&cand) {
            return cand;
        }
    }
    unreachable!()
}

// ---------------------------------------------------------------------------
// Binary combination
// ---------------------------------------------------------------------------

/// Which aggregation operators each binary operation distributes over.
fn op_safe(op: BinOp, agg: AggOp) -> bool {
    match op {
        BinOp::Add => matches!(agg, AggOp::Max | AggOp::Min | AggOp::Sum | AggOp::Avg),
        BinOp::Mul | BinOp::Max => matches!(agg, AggOp::Max | AggOp::Min),
    }
}

/// Combine two expressions with a safe binary operation: standardize `g`
/// apart from `f`, concatenate prefixes (`g` first), cross-product the case
/// lists, drop unsatisfiable combinations, and lightly simplify.
///
/// Errors on unsafe (operation, aggregation) pairs per the safe-operation
/// table: `⊕` distributes over max/min/sum/avg; `⊗` and pairwise max only
/// over max/min (`⊗` additionally requires nonnegative values).
pub fn apply_binary(
    op: BinOp,
    f: &RelExpr,
    g: &RelExpr,
    cap: usize,
) -> Result<RelExpr, ExprError> {
    for e in [f, g] {
        for entry in &e.prefix {
            if !op_safe(op, entry.op) {
                return Err(ExprError::UnsafeCombination {
                    op: op.name(),
                    agg: entry.op.name(),
                });
            }
        }
    }
    if op == BinOp::Mul && (!f.nonnegative() || !g.nonnegative()) {
        return Err(ExprError::NegativeInProduct);
    }
    let scale = match op {
        BinOp::Add | BinOp::Max => {
            if f.scale != g.scale {
                return Err(ExprError::ScaleMismatch(f.scale.clone(), g.scale.clone()));
            }
            f.scale.clone()
        }
        BinOp::Mul => {
            let mut s = f.scale.clone();
            s.extend(g.scale.iter().cloned());
            s.sort();
            s
        }
    };
    let g2 = standardize_apart(g, &f.all_names());
    let mut prefix = g2.prefix.clone();
    prefix.extend(f.prefix.iter().cloned());
    let cases = match op {
        // Pairwise max groups by value instead of cross-multiplying: the
        // result takes value `v` exactly when one side is at `v` and the
        // other is not above it. This keeps each side's case partition
        // intact (its union is `true` and vanishes), where a cross product
        // would smear every case over every other.
        BinOp::Max => {
            let mut values: Vec<&Rational> =
                f.cases.iter().chain(&g2.cases).map(|c| &c.value).collect();
            values.sort();
            values.dedup();
            let group = |e: &RelExpr, v: &Rational, above: bool| -> Formula {
                Formula::or_of(
                    e.cases
                        .iter()
                        .filter(|c| if above { &c.value > v } else { &c.value == v })
                        .map(|c| c.condition.clone())
                        .collect(),
                )
            };
            let mut cases = Vec::new();
            for v in values {
                let cond = Formula::or_of(vec![
                    Formula::and_of(vec![group(f, v, false), group(&g2, v, true).negate()]),
                    Formula::and_of(vec![group(&g2, v, false), group(f, v, true).negate()]),
                ]);
                if satisfiable(&cond) {
                    cases.push(Case::new(cond, v.clone()));
                }
            }
            cases
        }
        BinOp::Add | BinOp::Mul => {
            let mut cases = Vec::new();
            for cf in &f.cases {
                for cg in &g2.cases {
                    let cond =
                        Formula::and_of(vec![cf.condition.clone(), cg.condition.clone()]);
                    if satisfiable(&cond) {
                        cases.push(Case::new(cond, op.apply(&cf.value, &cg.value)));
                    }
                }
            }
            cases
        }
    };
    let out = RelExpr { prefix, scale, cases };
    let out = simplify::simplify(&out);
    if out.cases.len() > cap {
        return Err(ExprError::TooManyCases(out.cases.len(), cap));
    }
    Ok(out)
}

/// Apply `op` between every case value and the scalar `k`; prefix and
/// conditions unchanged. This is the definitionally case-wise scalar
/// combination (e.g. discounting multiplies every value by γ).
pub fn scalar_combine(e: &RelExpr, k: &Rational, op: BinOp) -> RelExpr {
    RelExpr {
        prefix: e.prefix.clone(),
        scale: e.scale.clone(),
        cases: e
            .cases
            .iter()
            .map(|c| Case::new(c.condition.clone(), op.apply(&c.value, k)))
            .collect(),
    }
}

/// Multiply by a choice-probability expression: `prob` must be open (empty
/// prefix, conditions over action parameters only). The multiplication is
/// case-wise under `f`'s prefix — probability conditions cannot mention
/// `f`'s variables, so within each combined case the factor is constant and
/// distributes through every aggregation operator exactly.
pub fn mult_choice_prob(f: &RelExpr, prob: &RelExpr) -> Result<RelExpr, ExprError> {
    if !prob.prefix.is_empty() || !prob.condition_vars().is_empty() {
        return Err(ExprError::OpenExprHasPrefix);
    }
    let mut cases = Vec::new();
    for cf in &f.cases {
        for cp in &prob.cases {
            let cond = Formula::and_of(vec![cf.condition.clone(), cp.condition.clone()]);
            if satisfiable(&cond) {
                cases.push(Case::new(cond, &cf.value * &cp.value));
            }
        }
    }
    Ok(simplify::simplify(&RelExpr {
        prefix: f.prefix.clone(),
        scale: f.scale.clone(),
        cases,
    }))
}

/// Case-wise addition of two expressions with *identical* prefixes, without
/// standardizing apart.
///
/// Exactness: the result equals `f ⊕ g` on every interpretation when every
/// shared prefix variable is aggregated linearly (`sum`/`avg`), or occurs in
/// the conditions of at most one operand (vacuous max/min variables are
/// harmless). When max/min variables are shared by both operands the result
/// is only a *lower bound* on the true sum (`max (f+g) ≤ max f + max g`);
/// [`aligned_add_exact`] refuses that case while
/// [`aligned_add_lower_bound`] permits it, and the additive-reward pipeline
/// documents its use of the latter.
fn aligned_add(f: &RelExpr, g: &RelExpr) -> Result<RelExpr, ExprError> {
    if f.prefix != g.prefix {
        return Err(ExprError::MaxUnresolved(
            "aligned addition requires identical prefixes".into(),
        ));
    }
    if f.scale != g.scale {
        return Err(ExprError::ScaleMismatch(f.scale.clone(), g.scale.clone()));
    }
    let mut cases = Vec::new();
    for cf in &f.cases {
        for cg in &g.cases {
            let cond = Formula::and_of(vec![cf.condition.clone(), cg.condition.clone()]);
            if satisfiable(&cond) {
                cases.push(Case::new(cond, &cf.value + &cg.value));
            }
        }
    }
    Ok(simplify::simplify(&RelExpr {
        prefix: f.prefix.clone(),
        scale: f.scale.clone(),
        cases,
    }))
}

/// Aligned addition, restricted to the exact configurations (see
/// [`aligned_add`]).
pub fn aligned_add_exact(f: &RelExpr, g: &RelExpr) -> Result<RelExpr, ExprError> {
    if f.prefix != g.prefix {
        return Err(ExprError::MaxUnresolved(
            "aligned addition requires identical prefixes".into(),
        ));
    }
    let f_vars = f.condition_vars();
    let g_vars = g.condition_vars();
    for entry in &f.prefix {
        let linear = matches!(entry.op, AggOp::Sum | AggOp::Avg);
        let shared = f_vars.contains(&entry.var) && g_vars.contains(&entry.var);
        if !linear && shared {
            return Err(ExprError::UnsafeCombination { op: "aligned-add", agg: entry.op.name() });
        }
        if entry.op == AggOp::Product {
            return Err(ExprError::UnsafeCombination { op: "aligned-add", agg: "product" });
        }
    }
    aligned_add(f, g)
}

/// Aligned addition that tolerates shared max/min variables, yielding a
/// pointwise lower bound on the true sum (exact in the linear cases).
pub fn aligned_add_lower_bound(f: &RelExpr, g: &RelExpr) -> Result<RelExpr, ExprError> {
    for entry in &f.prefix {
        if entry.op == AggOp::Product {
            return Err(ExprError::UnsafeCombination { op: "aligned-add", agg: "product" });
        }
    }
    aligned_add(f, g)
}

// ---------------------------------------------------------------------------
// Pairwise max and dominance
// ---------------------------------------------------------------------------

/// Pairwise maximum of two expressions.
///
/// Safe path: both prefixes contain only max/min, combined via
/// [`apply_binary`]. Otherwise a symbolic dominance test is attempted — if
/// one expression's value is at least the other's on every interpretation,
/// the dominant expression is returned. Anything else is an error: the
/// combination would need operation-specific machinery this solver does not
/// claim to have.
pub fn max_combine(f: &RelExpr, g: &RelExpr, cap: usize) -> Result<RelExpr, ExprError> {
    let safe = |e: &RelExpr| e.prefix.iter().all(|p| matches!(p.op, AggOp::Max | AggOp::Min));
    if safe(f) && safe(g) {
        return apply_binary(BinOp::Max, f, g, cap);
    }
    if dominates(f, g)? {
        return Ok(f.clone());
    }
    if dominates(g, f)? {
        return Ok(g.clone());
    }
    Err(ExprError::MaxUnresolved(
        "neither expression dominates the other and the prefixes are unsafe for pairwise max"
            .into(),
    ))
}

/// Symbolic dominance: does `f(s) ≥ g(s)` hold on every interpretation?
///
/// The prefixes are aligned from the tail (equal (op, sort) runs share
/// variables); leftover head entries must all be `max`, which act as
/// vacuous padding on the other side. Sound because every aggregation
/// operator is monotone: if in every jointly satisfiable case pair `f`'s
/// value is at least `g`'s, the pointwise comparison lifts through the
/// aggregations. Conservative: may report false for expressions that do
/// dominate semantically.
pub fn dominates(f: &RelExpr, g: &RelExpr) -> Result<bool, ExprError> {
    if f.scale != g.scale {
        return Err(ExprError::ScaleMismatch(f.scale.clone(), g.scale.clone()));
    }
    // Rename g apart, then share the common tail variable names.
    let mut g2 = standardize_apart(g, &f.all_names());
    let mut shared = 0usize;
    while shared < f.prefix.len() && shared < g2.prefix.len() {
        let fe = &f.prefix[f.prefix.len() - 1 - shared];
        let ge = &g2.prefix[g2.prefix.len() - 1 - shared];
        if fe.op == ge.op && fe.sort == ge.sort {
            shared += 1;
        } else {
            break;
        }
    }
    let mut renames = Substitution::new();
    let g_len = g2.prefix.len();
    for k in 0..shared {
        let fe = &f.prefix[f.prefix.len() - 1 - k];
        let ge = &g2.prefix[g_len - 1 - k];
        if ge.var != fe.var {
            renames.bind(Term::Var(ge.var.clone()), Term::Var(fe.var.clone()));
        }
    }
    if !renames.is_empty() {
        let prefix = g2
            .prefix
            .iter()
            .enumerate()
            .map(|(i, e)| {
                if i >= g_len - shared {
                    PrefixEntry::new(e.op, f.prefix[f.prefix.len() - (g_len - i)].var.clone(), e.sort.clone())
                } else {
                    e.clone()
                }
            })
            .collect();
        g2 = g2.map_conditions(&renames);
        g2.prefix = prefix;
    }
    // Leftover heads must be max-aggregated (vacuous-paddable).
    for e in f.prefix[..f.prefix.len() - shared].iter() {
        if e.op != AggOp::Max {
            return Err(ExprError::UnsafeCombination { op: "max", agg: e.op.name() });
        }
    }
    for e in g2.prefix[..g2.prefix.len() - shared].iter() {
        if e.op != AggOp::Max {
            return Err(ExprError::UnsafeCombination { op: "max", agg: e.op.name() });
        }
    }
    for cf in &f.cases {
        for cg in &g2.cases {
            if cf.value < cg.value {
                let both =
                    Formula::and_of(vec![cf.condition.clone(), cg.condition.clone()]);
                if satisfiable(&both) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::simplify::{canonicalize, simplify};
    use super::*;
    use crate::logic::Atom;

    fn v(n: &str) -> Term {
        Term::Var(n.into())
    }

    fn atom(name: &str, args: Vec<Term>) -> Formula {
        Formula::atom(Atom::pred(name, args))
    }

    /// The two-sort color world: objects a, b; colors black, white;
    /// color(a, black), color(a, white), color(b, black).
    fn color_world() -> Interpretation {
        let mut i = Interpretation::default();
        i.objects.insert("Obj".into(), vec!["a".into(), "b".into()]);
        i.objects.insert("Color".into(), vec!["black".into(), "white".into()]);
        for (x, y) in [("a", "black"), ("a", "white"), ("b", "black")] {
            i.facts.insert(("color".into(), vec![x.into(), y.into()]));
        }
        i
    }

    fn color_cases(hi: Rational, lo: Rational) -> Vec<Case> {
        let c = atom("color", vec![v("X"), v("Y")]);
        vec![Case::new(c.clone(), hi), Case::new(c.negate(), lo)]
    }

    #[test]
    fn evaluate_product_of_products() {
        // Three of the four (X, Y) pairs are colored: (3/10)^3 · (1/2).
        let e = RelExpr {
            prefix: vec![
                PrefixEntry::new(AggOp::Product, "X", "Obj"),
                PrefixEntry::new(AggOp::Product, "Y", "Color"),
            ],
            scale: vec![],
            cases: color_cases(rat(3, 10), rat(1, 2)),
        };
        assert_eq!(e.evaluate(&color_world()).unwrap(), rat(27, 2000));
    }

    #[test]
    fn evaluate_constant_and_max_sum() {
        assert_eq!(
            RelExpr::constant(rat(5, 1)).evaluate(&color_world()).unwrap(),
            rat(5, 1)
        );
        // Largest number of objects sharing one color: black has 2.
        let e = RelExpr {
            prefix: vec![
                PrefixEntry::new(AggOp::Max, "Y", "Color"),
                PrefixEntry::new(AggOp::Sum, "X", "Obj"),
            ],
            scale: vec![],
            cases: color_cases(rat(1, 1), rat(0, 1)),
        };
        assert_eq!(e.evaluate(&color_world()).unwrap(), rat(2, 1));
    }

    #[test]
    fn evaluate_scale_and_avg() {
        // avg over objects of [colored-black: 1; else 0] = 1/2... times |Obj|.
        let cb = atom("color", vec![v("X"), Term::Const("black".into())]);
        let e = RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Avg, "X", "Obj")],
            scale: vec!["Obj".into()],
            cases: vec![Case::new(cb.clone(), rat(1, 1)), Case::new(cb.negate(), rat(0, 1))],
        };
        assert_eq!(e.evaluate(&color_world()).unwrap(), rat(2, 1));
    }

    #[test]
    fn evaluate_empty_sort_rules() {
        let mut i = Interpretation::default();
        i.objects.insert("Obj".into(), vec![]);
        let mk = |op| RelExpr {
            prefix: vec![PrefixEntry::new(op, "X", "Obj")],
            scale: vec![],
            cases: vec![Case::new(Formula::True, rat(4, 1))],
        };
        assert_eq!(mk(AggOp::Sum).evaluate(&i).unwrap(), rat(0, 1));
        assert_eq!(mk(AggOp::Product).evaluate(&i).unwrap(), rat(1, 1));
        assert!(matches!(
            mk(AggOp::Avg).evaluate(&i),
            Err(EvalError::EmptySort(_, _))
        ));
        assert!(matches!(
            mk(AggOp::Max).evaluate(&i),
            Err(EvalError::EmptySort(_, _))
        ));
    }

    /// The worked addition: `[max_X, min_Y [color:3; ¬:5]] ⊕
    /// [max_X [box:1; ¬:2]]` has prefix `[max, max, min]` and values
    /// 4/6/5/7 on the cross product.
    #[test]
    fn apply_binary_cross_product_example() {
        let f = RelExpr {
            prefix: vec![
                PrefixEntry::new(AggOp::Max, "X", "Obj"),
                PrefixEntry::new(AggOp::Min, "Y", "Color"),
            ],
            scale: vec![],
            cases: color_cases(rat(3, 1), rat(5, 1)),
        };
        let b = atom("box", vec![v("X")]);
        let g = RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Max, "X", "Obj")],
            scale: vec![],
            cases: vec![Case::new(b.clone(), rat(1, 1)), Case::new(b.negate(), rat(2, 1))],
        };
        let sum = apply_binary(BinOp::Add, &f, &g, 512).unwrap();
        // g is standardized apart and leads the prefix.
        assert_eq!(
            sum.prefix.iter().map(|e| e.op).collect::<Vec<_>>(),
            vec![AggOp::Max, AggOp::Max, AggOp::Min]
        );
        assert_ne!(sum.prefix[0].var, "X");
        let mut values: Vec<Rational> = sum.cases.iter().map(|c| c.value.clone()).collect();
        values.sort();
        assert_eq!(values, vec![rat(4, 1), rat(5, 1), rat(6, 1), rat(7, 1)]);
        // Evaluation homomorphism on the color world (box is empty there).
        let w = color_world();
        assert_eq!(
            sum.evaluate(&w).unwrap(),
            f.evaluate(&w).unwrap() + g.evaluate(&w).unwrap()
        );
    }

    #[test]
    fn apply_binary_rejects_unsafe_combinations() {
        let e_sum = RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Sum, "X", "Obj")],
            scale: vec![],
            cases: vec![Case::new(Formula::True, rat(1, 1))],
        };
        let e_max = RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Max, "X", "Obj")],
            scale: vec![],
            cases: vec![Case::new(Formula::True, rat(1, 1))],
        };
        // ⊗ distributes over max/min only.
        assert!(matches!(
            apply_binary(BinOp::Mul, &e_sum, &e_max, 512),
            Err(ExprError::UnsafeCombination { .. })
        ));
        // Pairwise max is unsafe over sum.
        assert!(matches!(
            apply_binary(BinOp::Max, &e_max, &e_sum, 512),
            Err(ExprError::UnsafeCombination { .. })
        ));
        // ⊕ is fine over sum.
        assert!(apply_binary(BinOp::Add, &e_sum, &e_sum, 512).is_ok());
    }

    #[test]
    fn scalar_combine_scales_discount() {
        let e = RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Max, "X", "Obj")],
            scale: vec![],
            cases: vec![
                Case::new(atom("p", vec![v("X")]), rat(10, 1)),
                Case::new(atom("p", vec![v("X")]).negate(), rat(9, 1)),
            ],
        };
        let d = scalar_combine(&e, &rat(9, 10), BinOp::Mul);
        let values: Vec<Rational> = d.cases.iter().map(|c| c.value.clone()).collect();
        assert_eq!(values, vec![rat(9, 1), rat(81, 10)]);
        let one = scalar_combine(&e, &rat(1, 1), BinOp::Mul);
        assert_eq!(one, e);
        let zero = scalar_combine(&e, &rat(0, 1), BinOp::Mul);
        assert!(zero.cases.iter().all(|c| c.value.is_zero()));
    }

    #[test]
    fn standardize_apart_renames_and_preserves_value() {
        let e = RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Max, "X", "Obj")],
            scale: vec![],
            cases: vec![
                Case::new(atom("color", vec![v("X"), Term::Const("black".into())]), rat(1, 1)),
                Case::new(
                    atom("color", vec![v("X"), Term::Const("black".into())]).negate(),
                    rat(0, 1),
                ),
            ],
        };
        let avoid: BTreeSet<String> = ["X".to_string()].into();
        let r = standardize_apart(&e, &avoid);
        assert_ne!(r.prefix[0].var, "X");
        assert_eq!(
            r.evaluate(&color_world()).unwrap(),
            e.evaluate(&color_world()).unwrap()
        );
        let unchanged = standardize_apart(&e, &BTreeSet::new());
        assert_eq!(unchanged, e);
    }

    #[test]
    fn add_constant_zero_is_identity_semantically() {
        let f = RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Max, "X", "Obj")],
            scale: vec![],
            cases: vec![
                Case::new(atom("color", vec![v("X"), Term::Const("black".into())]), rat(2, 1)),
                Case::new(
                    atom("color", vec![v("X"), Term::Const("black".into())]).negate(),
                    rat(1, 1),
                ),
            ],
        };
        let z = RelExpr::constant(rat(0, 1));
        let sum = apply_binary(BinOp::Add, &f, &z, 512).unwrap();
        let w = color_world();
        assert_eq!(sum.evaluate(&w).unwrap(), f.evaluate(&w).unwrap());
    }

    #[test]
    fn mult_choice_prob_is_casewise() {
        let f = RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Max, "X", "Obj")],
            scale: vec![],
            cases: vec![
                Case::new(atom("color", vec![v("X"), Term::Const("black".into())]), rat(10, 1)),
                Case::new(
                    atom("color", vec![v("X"), Term::Const("black".into())]).negate(),
                    rat(0, 1),
                ),
            ],
        };
        let pre = atom("box", vec![Term::Param("B1".into())]);
        let prob = RelExpr {
            prefix: vec![],
            scale: vec![],
            cases: vec![Case::new(pre.clone(), rat(9, 10)), Case::new(pre.negate(), rat(0, 1))],
        };
        let q = mult_choice_prob(&f, &prob).unwrap();
        assert!(q.prefix == f.prefix);
        let mut values: Vec<Rational> = q.cases.iter().map(|c| c.value.clone()).collect();
        values.sort();
        values.dedup();
        assert_eq!(values, vec![rat(0, 1), rat(9, 1)]);
    }

    #[test]
    fn aligned_add_exact_matches_apply_binary_on_avg() {
        let black = atom("color", vec![v("X"), Term::Const("black".into())]);
        let white = atom("color", vec![v("X"), Term::Const("white".into())]);
        let mk = |c: &Formula, hi: Rational| RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Avg, "X", "Obj")],
            scale: vec![],
            cases: vec![Case::new(c.clone(), hi), Case::new(c.negate(), rat(0, 1))],
        };
        let f = mk(&black, rat(4, 1));
        let g = mk(&white, rat(6, 1));
        let aligned = aligned_add_exact(&f, &g).unwrap();
        let general = apply_binary(BinOp::Add, &f, &g, 512).unwrap();
        let w = color_world();
        assert_eq!(
            aligned.evaluate(&w).unwrap(),
            general.evaluate(&w).unwrap()
        );
        assert_eq!(aligned.prefix.len(), 1);
        assert_eq!(general.prefix.len(), 2);
    }

    #[test]
    fn aligned_add_exact_refuses_shared_max_vars() {
        let black = atom("color", vec![v("X"), Term::Const("black".into())]);
        let mk = || RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Max, "X", "Obj")],
            scale: vec![],
            cases: vec![
                Case::new(black.clone(), rat(1, 1)),
                Case::new(black.negate(), rat(0, 1)),
            ],
        };
        assert!(matches!(
            aligned_add_exact(&mk(), &mk()),
            Err(ExprError::UnsafeCombination { .. })
        ));
        assert!(aligned_add_lower_bound(&mk(), &mk()).is_ok());
    }

    #[test]
    fn max_combine_safe_path_is_pointwise_max() {
        let black = atom("color", vec![v("X"), Term::Const("black".into())]);
        let white = atom("color", vec![v("X"), Term::Const("white".into())]);
        let mk = |c: &Formula, hi: Rational| RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Max, "X", "Obj")],
            scale: vec![],
            cases: vec![Case::new(c.clone(), hi), Case::new(c.negate(), rat(0, 1))],
        };
        let f = mk(&black, rat(4, 1));
        let g = mk(&white, rat(6, 1));
        let m = max_combine(&f, &g, 512).unwrap();
        let w = color_world();
        let expected = f.evaluate(&w).unwrap().max(g.evaluate(&w).unwrap());
        assert_eq!(m.evaluate(&w).unwrap(), expected);
        // max(f, f) is semantically f.
        let mff = max_combine(&f, &f, 512).unwrap();
        assert_eq!(
            canonicalize(&mff),
            canonicalize(&simplify(&f)),
        );
    }

    #[test]
    fn dominance_resolves_unsafe_max() {
        // f = [avg_X [black:5; ¬:1]] dominates g = [avg_X [black:2; ¬:0]].
        let black = atom("color", vec![v("X"), Term::Const("black".into())]);
        let mk = |hi: Rational, lo: Rational| RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Avg, "X", "Obj")],
            scale: vec![],
            cases: vec![Case::new(black.clone(), hi), Case::new(black.negate(), lo)],
        };
        let f = mk(rat(5, 1), rat(1, 1));
        let g = mk(rat(2, 1), rat(0, 1));
        assert!(dominates(&f, &g).unwrap());
        assert!(!dominates(&g, &f).unwrap());
        let m = max_combine(&f, &g, 512).unwrap();
        assert_eq!(m, f);
        // Incomparable pair: neither dominates, so pairwise max errors.
        let h = mk(rat(2, 1), rat(3, 1));
        assert!(matches!(
            max_combine(&f, &h, 512),
            Ok(_) | Err(ExprError::MaxUnresolved(_))
        ));
        let j = mk(rat(9, 1), rat(0, 1));
        assert!(matches!(max_combine(&j, &h, 512), Err(ExprError::MaxUnresolved(_))));
    }

    #[test]
    fn dominance_pads_vacuous_max_heads() {
        // f has an extra max head over g; g is f's tail weakened.
        let black = atom("color", vec![v("X"), Term::Const("black".into())]);
        let f = RelExpr {
            prefix: vec![
                PrefixEntry::new(AggOp::Max, "Z", "Color"),
                PrefixEntry::new(AggOp::Avg, "X", "Obj"),
            ],
            scale: vec![],
            cases: vec![
                Case::new(
                    Formula::and_of(vec![
                        black.clone(),
                        atom("color", vec![v("X"), v("Z")]),
                    ]),
                    rat(5, 1),
                ),
                Case::new(
                    Formula::and_of(vec![
                        black.clone(),
                        atom("color", vec![v("X"), v("Z")]),
                    ])
                    .negate(),
                    rat(2, 1),
                ),
            ],
        };
        let g = RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Avg, "X", "Obj")],
            scale: vec![],
            cases: vec![
                Case::new(black.clone(), rat(2, 1)),
                Case::new(black.negate(), rat(1, 1)),
            ],
        };
        assert!(dominates(&f, &g).unwrap());
    }

    #[test]
    fn partition_check_flags_violations() {
        let black = atom("color", vec![v("X"), Term::Const("black".into())]);
        let good = RelExpr::if_else(
            vec![PrefixEntry::new(AggOp::Max, "X", "Obj")],
            black.clone(),
            rat(1, 1),
            rat(0, 1),
        );
        assert!(good.check_partition().is_empty());
        let overlapping = RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Max, "X", "Obj")],
            scale: vec![],
            cases: vec![
                Case::new(black.clone(), rat(1, 1)),
                Case::new(Formula::True, rat(0, 1)),
            ],
        };
        assert!(!overlapping.check_partition().is_empty());
        let gap = RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Max, "X", "Obj")],
            scale: vec![],
            cases: vec![Case::new(black.clone(), rat(1, 1))],
        };
        assert!(gap
            .check_partition()
            .iter()
            .any(|m| m.contains("exhaustive")));
    }
}
