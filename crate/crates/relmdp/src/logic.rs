//! Sorted first-order logic fragment used by the solver.
//!
//! Provides sorts, terms, atoms, quantifier-free formulas in negation normal
//! form (NNF), substitutions, ground evaluation against finite
//! interpretations, and a small DPLL-style satisfiability check with equality
//! reasoning (congruence over flat atoms plus unique names for declared
//! constants).
//!
//! Conventions:
//! - Formulas are always kept in NNF with flattened, deduplicated,
//!   canonically ordered conjunction/disjunction lists.
//! - Free variables in satisfiability checks behave as rigid fresh objects
//!   that are distinct from each other and from constants unless the formula
//!   itself equates them. This is the standard free-model (EUF) reading and
//!   is what case-condition pruning relies on.

use once_cell::sync::Lazy;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Mutex;

/// Name of an object sort.
pub type SortName = String;

// ---------------------------------------------------------------------------
// Terms
// ---------------------------------------------------------------------------

/// A term: a quantified variable, a declared constant, or an action
/// parameter.
///
/// Action parameters are kept distinct from variables because they behave as
/// fixed-but-arbitrary objects throughout regression and only become
/// quantified during object maximization. Distinct constants always denote
/// distinct objects (unique names); variables and parameters may equal
/// anything of their sort.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    /// Variable bound by an aggregation prefix.
    Var(String),
    /// Declared constant (unique-names assumption applies).
    Const(String),
    /// Action parameter: a distinguished placeholder chosen at instantiation.
    Param(String),
}

impl Term {
    /// The bare name of the term.
    pub fn name(&self) -> &str {
        match self {
            Term::Var(n) | Term::Const(n) | Term::Param(n) => n,
        }
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Term::Const(_))
    }

    pub fn is_param(&self) -> bool {
        matches!(self, Term::Param(_))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(n) | Term::Const(n) => write!(f, "{n}"),
            Term::Param(n) => write!(f, "${n}"),
        }
    }
}

// ---------------------------------------------------------------------------
// Atoms and literals
// ---------------------------------------------------------------------------

/// An atomic formula: a predicate applied to terms, or an equality.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    /// `name(args...)`
    Pred { name: String, args: Vec<Term> },
    /// `lhs = rhs`, stored with `lhs <= rhs` in term order.
    Eq(Term, Term),
}

impl Atom {
    pub fn pred(name: impl Into<String>, args: Vec<Term>) -> Self {
        Atom::Pred { name: name.into(), args }
    }

    /// Equality atom with canonically ordered sides.
    pub fn eq(a: Term, b: Term) -> Self {
        if a <= b {
            Atom::Eq(a, b)
        } else {
            Atom::Eq(b, a)
        }
    }

    /// All terms appearing in this atom.
    pub fn terms(&self) -> Vec<&Term> {
        match self {
            Atom::Pred { args, .. } => args.iter().collect(),
            Atom::Eq(a, b) => vec![a, b],
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Pred { name, args } => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
            Atom::Eq(a, b) => write!(f, "{a} = {b}"),
        }
    }
}

/// A possibly negated atom.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Literal {
    pub atom: Atom,
    pub positive: bool,
}

impl Literal {
    pub fn pos(atom: Atom) -> Self {
        Literal { atom, positive: true }
    }

    pub fn neg(atom: Atom) -> Self {
        Literal { atom, positive: false }
    }

    pub fn negated(&self) -> Self {
        Literal { atom: self.atom.clone(), positive: !self.positive }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.positive {
            write!(f, "{}", self.atom)
        } else {
            write!(f, "~{}", self.atom)
        }
    }
}

// ---------------------------------------------------------------------------
// Formulas
// ---------------------------------------------------------------------------

/// Quantifier-free formula in negation normal form.
///
/// `And`/`Or` children are flattened, deduplicated and canonically ordered by
/// the smart constructors [`Formula::and_of`] / [`Formula::or_of`]; negation
/// appears only on atoms.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Formula {
    True,
    False,
    Lit(Literal),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    /// Literal with trivial-equality folding: `t = t` is true, and two
    /// distinct constants are never equal (unique names).
    pub fn literal(atom: Atom, positive: bool) -> Formula {
        if let Atom::Eq(a, b) = &atom {
            if a == b {
                return if positive { Formula::True } else { Formula::False };
            }
            if a.is_const() && b.is_const() {
                // Distinct constants: equality is false.
                return if positive { Formula::False } else { Formula::True };
            }
        }
        Formula::Lit(Literal { atom, positive })
    }

    pub fn atom(atom: Atom) -> Formula {
        Formula::literal(atom, true)
    }

    pub fn not_atom(atom: Atom) -> Formula {
        Formula::literal(atom, false)
    }

    /// Conjunction with flattening, short-circuiting, dedup and canonical
    /// child order. Detects complementary literal pairs.
    pub fn and_of(children: Vec<Formula>) -> Formula {
        let mut flat: Vec<Formula> = Vec::new();
        for c in children {
            match c {
                Formula::True => {}
                Formula::False => return Formula::False,
                Formula::And(gs) => flat.extend(gs),
                other => flat.push(other),
            }
        }
        flat.sort();
        flat.dedup();
        // Complementary literals make the conjunction false.
        let lits: BTreeSet<&Literal> = flat
            .iter()
            .filter_map(|f| if let Formula::Lit(l) = f { Some(l) } else { None })
            .collect();
        for l in &lits {
            if lits.contains(&l.negated()) {
                return Formula::False;
            }
        }
        match flat.len() {
            0 => Formula::True,
            1 => flat.pop().unwrap(),
            _ => Formula::And(flat),
        }
    }

    /// Disjunction, dual of [`Formula::and_of`].
    pub fn or_of(children: Vec<Formula>) -> Formula {
        let mut flat: Vec<Formula> = Vec::new();
        for c in children {
            match c {
                Formula::False => {}
                Formula::True => return Formula::True,
                Formula::Or(gs) => flat.extend(gs),
                other => flat.push(other),
            }
        }
        flat.sort();
        flat.dedup();
        let lits: BTreeSet<&Literal> = flat
            .iter()
            .filter_map(|f| if let Formula::Lit(l) = f { Some(l) } else { None })
            .collect();
        for l in &lits {
            if lits.contains(&l.negated()) {
                return Formula::True;
            }
        }
        match flat.len() {
            0 => Formula::False,
            1 => flat.pop().unwrap(),
            _ => Formula::Or(flat),
        }
    }

    /// NNF negation (De Morgan over the flattened lists).
    pub fn negate(&self) -> Formula {
        match self {
            Formula::True => Formula::False,
            Formula::False => Formula::True,
            Formula::Lit(l) => Formula::literal(l.atom.clone(), !l.positive),
            Formula::And(cs) => Formula::or_of(cs.iter().map(|c| c.negate()).collect()),
            Formula::Or(cs) => Formula::and_of(cs.iter().map(|c| c.negate()).collect()),
        }
    }

    /// All atoms occurring in the formula.
    pub fn atoms(&self) -> BTreeSet<Atom> {
        let mut out = BTreeSet::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut BTreeSet<Atom>) {
        match self {
            Formula::True | Formula::False => {}
            Formula::Lit(l) => {
                out.insert(l.atom.clone());
            }
            Formula::And(cs) | Formula::Or(cs) => {
                for c in cs {
                    c.collect_atoms(out);
                }
            }
        }
    }

    /// Names of free variables occurring in the formula.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for atom in self.atoms() {
            for t in atom.terms() {
                if let Term::Var(n) = t {
                    out.insert(n.clone());
                }
            }
        }
        out
    }

    /// Names of action parameters occurring in the formula.
    pub fn params(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for atom in self.atoms() {
            for t in atom.terms() {
                if let Term::Param(n) = t {
                    out.insert(n.clone());
                }
            }
        }
        out
    }

    /// Replace one atom by a truth value, rebuilding with the smart
    /// constructors.
    pub fn assign_atom(&self, atom: &Atom, value: bool) -> Formula {
        match self {
            Formula::True => Formula::True,
            Formula::False => Formula::False,
            Formula::Lit(l) => {
                if &l.atom == atom {
                    if l.positive == value {
                        Formula::True
                    } else {
                        Formula::False
                    }
                } else {
                    self.clone()
                }
            }
            Formula::And(cs) => {
                Formula::and_of(cs.iter().map(|c| c.assign_atom(atom, value)).collect())
            }
            Formula::Or(cs) => {
                Formula::or_of(cs.iter().map(|c| c.assign_atom(atom, value)).collect())
            }
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => write!(f, "true"),
            Formula::False => write!(f, "false"),
            Formula::Lit(l) => write!(f, "{l}"),
            Formula::And(cs) => {
                write!(f, "and(")?;
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{c}")?;
                }
                write!(f, ")")
            }
            Formula::Or(cs) => {
                write!(f, "or(")?;
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Substitutions
// ---------------------------------------------------------------------------

/// Mapping from variables and action parameters to terms. Application is
/// plain simultaneous replacement (case conditions are quantifier-free, so no
/// capture is possible).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Substitution {
    map: BTreeMap<Term, Term>,
}

impl Substitution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn of(pairs: impl IntoIterator<Item = (Term, Term)>) -> Self {
        let mut s = Self::new();
        for (k, v) in pairs {
            s.bind(k, v);
        }
        s
    }

    /// Bind `from` (a variable or parameter) to `to`.
    ///
    /// Binding a constant is rejected: constants denote fixed objects.
    pub fn bind(&mut self, from: Term, to: Term) {
        assert!(!from.is_const(), "cannot substitute for a constant: {from}");
        self.map.insert(from, to);
    }

    pub fn get(&self, t: &Term) -> Option<&Term> {
        self.map.get(t)
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Term, &Term)> {
        self.map.iter()
    }

    pub fn apply_term(&self, t: &Term) -> Term {
        self.map.get(t).cloned().unwrap_or_else(|| t.clone())
    }

    pub fn apply_atom(&self, a: &Atom) -> Atom {
        match a {
            Atom::Pred { name, args } => Atom::Pred {
                name: name.clone(),
                args: args.iter().map(|t| self.apply_term(t)).collect(),
            },
            Atom::Eq(x, y) => Atom::eq(self.apply_term(x), self.apply_term(y)),
        }
    }

    pub fn apply(&self, f: &Formula) -> Formula {
        match f {
            Formula::True => Formula::True,
            Formula::False => Formula::False,
            Formula::Lit(l) => Formula::literal(self.apply_atom(&l.atom), l.positive),
            Formula::And(cs) => Formula::and_of(cs.iter().map(|c| self.apply(c)).collect()),
            Formula::Or(cs) => Formula::or_of(cs.iter().map(|c| self.apply(c)).collect()),
        }
    }
}

/// Apply a substitution to a formula (free-standing form of
/// [`Substitution::apply`]).
pub fn apply_substitution(f: &Formula, s: &Substitution) -> Formula {
    s.apply(f)
}

// ---------------------------------------------------------------------------
// Interpretations and ground evaluation
// ---------------------------------------------------------------------------

/// A finite sorted interpretation: objects per sort plus the set of true
/// ground atoms. Constants are objects under their own names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interpretation {
    /// Objects of each sort, in a fixed order.
    pub objects: BTreeMap<SortName, Vec<String>>,
    /// True ground atoms: predicate name plus object names.
    pub facts: BTreeSet<(String, Vec<String>)>,
}

impl Interpretation {
    pub fn objects_of(&self, sort: &str) -> &[String] {
        self.objects.get(sort).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn holds(&self, pred: &str, args: &[String]) -> bool {
        self.facts.contains(&(pred.to_string(), args.to_vec()))
    }
}

/// Errors raised when grounding or evaluating formulas and expressions.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound term `{0}` during evaluation")]
    UnboundTerm(String),
    #[error("sort `{0}` has no objects, cannot aggregate with `{1}`")]
    EmptySort(String, String),
    #[error("no case condition holds for a substitution (case list not exhaustive)")]
    NoCaseHolds,
    #[error("{0}")]
    Other(String),
}

/// Resolve a term to an object name under the given variable/parameter
/// bindings.
pub fn denote(t: &Term, env: &BTreeMap<String, String>) -> Result<String, EvalError> {
    match t {
        Term::Const(c) => Ok(c.clone()),
        Term::Var(v) | Term::Param(v) => env
            .get(v)
            .cloned()
            .ok_or_else(|| EvalError::UnboundTerm(t.to_string())),
    }
}

/// Evaluate a formula in an interpretation under bindings for its variables
/// and parameters.
pub fn eval_formula(
    f: &Formula,
    interp: &Interpretation,
    env: &BTreeMap<String, String>,
) -> Result<bool, EvalError> {
    match f {
        Formula::True => Ok(true),
        Formula::False => Ok(false),
        Formula::Lit(l) => {
            let v = match &l.atom {
                Atom::Pred { name, args } => {
                    let mut objs = Vec::with_capacity(args.len());
                    for a in args {
                        objs.push(denote(a, env)?);
                    }
                    interp.holds(name, &objs)
                }
                Atom::Eq(a, b) => denote(a, env)? == denote(b, env)?,
            };
            Ok(if l.positive { v } else { !v })
        }
        Formula::And(cs) => {
            for c in cs {
                if !eval_formula(c, interp, env)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Formula::Or(cs) => {
            for c in cs {
                if eval_formula(c, interp, env)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
    }
}

// ---------------------------------------------------------------------------
// Satisfiability (DPLL-style search + equality/unique-names consistency)
// ---------------------------------------------------------------------------

static SAT_CACHE: Lazy<Mutex<HashMap<Formula, Option<bool>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));
const SAT_CACHE_MAX: usize = 1 << 18;
/// Don't cache formulas above this many atoms (the keys get expensive).
const SAT_CACHE_ATOMS: usize = 64;
/// Node budget for one satisfiability search; exhausting it yields
/// "unknown", which every caller treats as "possibly satisfiable".
const SAT_BUDGET: usize = 200_000;

/// Is the formula satisfiable in some interpretation?
///
/// Search: pick an atom of the current (partially evaluated) formula, branch
/// on its truth value, and simplify; at each fully satisfied leaf the partial
/// assignment is checked for equality-theory consistency (congruence of flat
/// atoms over the equivalence classes induced by asserted equalities,
/// disequalities respected, and no two distinct constants identified).
/// Variables and parameters are rigid fresh objects, distinct unless equated.
///
/// The search is budgeted: on pathological inputs it gives up and reports
/// `true` (possibly satisfiable), which is the conservative answer for every
/// use here — cases are kept rather than dropped and formulas are left
/// unsimplified rather than collapsed.
pub fn satisfiable(f: &Formula) -> bool {
    satisfiable_checked(f).unwrap_or(true)
}

/// As [`satisfiable`], but `None` when the search budget ran out.
pub fn satisfiable_checked(f: &Formula) -> Option<bool> {
    match f {
        Formula::True => return Some(true),
        Formula::False => return Some(false),
        _ => {}
    }
    let cacheable = f.atoms().len() <= SAT_CACHE_ATOMS;
    if cacheable {
        if let Ok(cache) = SAT_CACHE.lock() {
            if let Some(&r) = cache.get(f) {
                return r;
            }
        }
    }
    let mut assign: BTreeMap<Atom, bool> = BTreeMap::new();
    let mut budget = SAT_BUDGET;
    let r = sat_search(f, &mut assign, &mut budget);
    if cacheable {
        if let Ok(mut cache) = SAT_CACHE.lock() {
            if cache.len() >= SAT_CACHE_MAX {
                cache.clear();
            }
            cache.insert(f.clone(), r);
        }
    }
    r
}

/// Satisfiability of a plain literal conjunction: complementary-pair check
/// plus the equality-theory consistency check. No search and no cache, so
/// it is cheap enough for inner loops.
pub fn lits_consistent<'a, I: IntoIterator<Item = &'a Literal>>(lits: I) -> bool {
    let mut assign: BTreeMap<Atom, bool> = BTreeMap::new();
    for l in lits {
        match assign.insert(l.atom.clone(), l.positive) {
            Some(prev) if prev != l.positive => return false,
            _ => {}
        }
    }
    euf_consistent(&assign)
}

/// Does `f` entail `g` (every model of `f` satisfies `g`)?
pub fn entails(f: &Formula, g: &Formula) -> bool {
    !satisfiable(&Formula::and_of(vec![f.clone(), g.negate()]))
}

fn sat_search(f: &Formula, assign: &mut BTreeMap<Atom, bool>, budget: &mut usize) -> Option<bool> {
    match f {
        Formula::False => return Some(false),
        Formula::True => return Some(euf_consistent(assign)),
        _ => {}
    }
    if *budget == 0 {
        return None;
    }
    *budget -= 1;
    let atom = match pick_atom(f) {
        Some(a) => a,
        // No atoms left but not literally True/False cannot happen with the
        // smart constructors; treat defensively as unsatisfiable.
        None => return Some(false),
    };
    let mut exhausted = false;
    for value in [true, false] {
        let g = f.assign_atom(&atom, value);
        assign.insert(atom.clone(), value);
        // Prune branches that are already equality-inconsistent.
        if euf_consistent(assign) {
            match sat_search(&g, assign, budget) {
                Some(true) => {
                    assign.remove(&atom);
                    return Some(true);
                }
                Some(false) => {}
                None => exhausted = true,
            }
        }
        assign.remove(&atom);
    }
    if exhausted {
        None
    } else {
        Some(false)
    }
}

/// Choose the next branching atom: the most frequent atom of the formula,
/// ties broken by atom order (deterministic).
fn pick_atom(f: &Formula) -> Option<Atom> {
    let mut counts: BTreeMap<Atom, usize> = BTreeMap::new();
    count_atoms(f, &mut counts);
    counts
        .into_iter()
        .max_by(|(a1, c1), (a2, c2)| c1.cmp(c2).then_with(|| a2.cmp(a1)))
        .map(|(a, _)| a)
}

fn count_atoms(f: &Formula, counts: &mut BTreeMap<Atom, usize>) {
    match f {
        Formula::True | Formula::False => {}
        Formula::Lit(l) => *counts.entry(l.atom.clone()).or_insert(0) += 1,
        Formula::And(cs) | Formula::Or(cs) => {
            for c in cs {
                count_atoms(c, counts);
            }
        }
    }
}

/// Check equality-theory consistency of a partial atom assignment.
fn euf_consistent(assign: &BTreeMap<Atom, bool>) -> bool {
    // Gather all terms.
    let mut terms: Vec<&Term> = Vec::new();
    let mut index: BTreeMap<&Term, usize> = BTreeMap::new();
    for atom in assign.keys() {
        for t in atom.terms() {
            index.entry(t).or_insert_with(|| {
                terms.push(t);
                terms.len() - 1
            });
        }
    }
    let mut uf = UnionFind::new(terms.len());
    for (atom, &v) in assign {
        if let (Atom::Eq(a, b), true) = (atom, v) {
            uf.union(index[a], index[b]);
        }
    }
    // Asserted disequalities must keep classes apart.
    for (atom, &v) in assign {
        if let (Atom::Eq(a, b), false) = (atom, v) {
            if uf.find(index[a]) == uf.find(index[b]) {
                return false;
            }
        }
    }
    // Unique names: no class may contain two distinct constants.
    let mut class_const: BTreeMap<usize, &str> = BTreeMap::new();
    for t in &terms {
        if let Term::Const(c) = t {
            let root = uf.find(index[*t]);
            match class_const.get(&root) {
                Some(&prev) if prev != c.as_str() => return false,
                _ => {
                    class_const.insert(root, c);
                }
            }
        }
    }
    // Congruence over flat predicate atoms: atoms with componentwise equal
    // argument classes must agree on truth value.
    let mut seen: BTreeMap<(String, Vec<usize>), bool> = BTreeMap::new();
    for (atom, &v) in assign {
        if let Atom::Pred { name, args } = atom {
            let key: Vec<usize> = args.iter().map(|t| uf.find(index[t])).collect();
            match seen.get(&(name.clone(), key.clone())) {
                Some(&prev) if prev != v => return false,
                _ => {
                    seen.insert((name.clone(), key), v);
                }
            }
        }
    }
    true
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

// ---------------------------------------------------------------------------
// Formula simplification
// ---------------------------------------------------------------------------

/// Simplify a formula: unit propagation inside conjunctions, absorption,
/// merging of resolvable disjuncts, factoring of common disjunct conjuncts,
/// and the cheap constructor rules; small results are additionally collapsed
/// to `true`/`false` when the satisfiability check proves them valid or
/// contradictory. The result is equivalent in every interpretation.
pub fn simplify_formula(f: &Formula) -> Formula {
    let mut cur = f.clone();
    for _ in 0..8 {
        let next = simplify_pass(&cur);
        if next == cur {
            break;
        }
        cur = next;
    }
    semantic_collapse(cur)
}

/// Bounded semantic collapse: replace a small connective node that is
/// provably contradictory or valid by the matching constant, leaving
/// larger nodes (and budget-exhausted checks) untouched.
fn semantic_collapse(f: Formula) -> Formula {
    if matches!(f, Formula::And(_) | Formula::Or(_)) && f.atoms().len() <= 16 {
        if satisfiable_checked(&f) == Some(false) {
            return Formula::False;
        }
        if satisfiable_checked(&f.negate()) == Some(false) {
            return Formula::True;
        }
    }
    f
}

fn simplify_pass(f: &Formula) -> Formula {
    match f {
        Formula::True | Formula::False | Formula::Lit(_) => f.clone(),
        Formula::And(cs) => {
            let mut children: Vec<Formula> = cs.iter().map(simplify_pass).collect();
            // Unit propagation: literal children fix atom values in siblings.
            let units: Vec<Literal> = children
                .iter()
                .filter_map(|c| if let Formula::Lit(l) = c { Some(l.clone()) } else { None })
                .collect();
            if !units.is_empty() {
                children = children
                    .into_iter()
                    .map(|c| {
                        if matches!(c, Formula::Lit(_)) {
                            c
                        } else {
                            let mut cc = c;
                            for u in &units {
                                cc = cc.assign_atom(&u.atom, u.positive);
                            }
                            cc
                        }
                    })
                    .collect();
            }
            // Absorption: drop a child that is entailed syntactically by
            // another child's conjunct set (And(a, Or(a, b)) => And(a, ...)).
            let rebuilt = Formula::and_of(children);
            semantic_collapse(absorb(rebuilt, /*conjunction=*/ true))
        }
        Formula::Or(cs) => {
            let children: Vec<Formula> = cs.iter().map(simplify_pass).collect();
            let rebuilt = Formula::or_of(children);
            let rebuilt = absorb(rebuilt, /*conjunction=*/ false);
            semantic_collapse(factor_common(resolve_adjacent(rebuilt)))
        }
    }
}

/// Literal-set view of a formula as a conjunction (for absorption checks):
/// `a` is `{a}`, `And(ls...)` of literals is the set, anything else is none.
fn conjunct_lits(f: &Formula) -> Option<BTreeSet<Literal>> {
    match f {
        Formula::Lit(l) => Some(BTreeSet::from([l.clone()])),
        Formula::And(cs) => {
            let mut out = BTreeSet::new();
            for c in cs {
                if let Formula::Lit(l) = c {
                    out.insert(l.clone());
                } else {
                    return None;
                }
            }
            Some(out)
        }
        _ => None,
    }
}

/// In a disjunction, drop children that entail another child (`d ∨ (d ∧ e)`
/// becomes `d`); in a conjunction, drop children entailed by another child.
fn absorb(f: Formula, conjunction: bool) -> Formula {
    let children = match &f {
        Formula::And(cs) if conjunction => cs.clone(),
        Formula::Or(cs) if !conjunction => cs.clone(),
        _ => return f,
    };
    let sets: Vec<Option<BTreeSet<Literal>>> = children.iter().map(conjunct_lits).collect();
    let mut keep = vec![true; children.len()];
    for i in 0..children.len() {
        if !keep[i] {
            continue;
        }
        for j in 0..children.len() {
            if i == j || !keep[j] {
                continue;
            }
            if let (Some(si), Some(sj)) = (&sets[i], &sets[j]) {
                // In a disjunction: if si ⊆ sj then child j entails child i
                // and j is redundant. In a conjunction the roles flip.
                if si.is_subset(sj) && (si != sj || i < j) {
                    if conjunction {
                        keep[i] = false;
                        break;
                    } else {
                        keep[j] = false;
                    }
                }
            }
        }
    }
    let kept: Vec<Formula> = children
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| if k { Some(c) } else { None })
        .collect();
    if conjunction {
        Formula::and_of(kept)
    } else {
        Formula::or_of(kept)
    }
}

/// Factor conjuncts common to every disjunct:
/// `(S ∧ a) ∨ (S ∧ b)` becomes `S ∧ (a ∨ b)`.
fn factor_common(f: Formula) -> Formula {
    let Formula::Or(cs) = &f else { return f };
    let sets: Vec<BTreeSet<Literal>> = match cs.iter().map(conjunct_lits).collect() {
        Some(sets) => sets,
        None => return f,
    };
    let mut common = sets[0].clone();
    for s in &sets[1..] {
        common = common.intersection(s).cloned().collect();
        if common.is_empty() {
            return f;
        }
    }
    let stripped: Vec<Formula> = sets
        .iter()
        .map(|s| {
            Formula::and_of(s.difference(&common).cloned().map(Formula::Lit).collect())
        })
        .collect();
    let mut parts: Vec<Formula> = common.into_iter().map(Formula::Lit).collect();
    parts.push(Formula::or_of(stripped));
    Formula::and_of(parts)
}

/// Merge resolvable disjuncts: `(S ∧ l) ∨ (S ∧ ~l)` becomes `S`.
fn resolve_adjacent(f: Formula) -> Formula {
    let Formula::Or(cs) = &f else { return f };
    let sets: Vec<Option<BTreeSet<Literal>>> = cs.iter().map(conjunct_lits).collect();
    for i in 0..cs.len() {
        for j in (i + 1)..cs.len() {
            if let (Some(si), Some(sj)) = (&sets[i], &sets[j]) {
                if si.len() == sj.len() {
                    let diff: Vec<&Literal> = si.difference(sj).collect();
                    if diff.len() == 1 && sj.contains(&diff[0].negated()) {
                        let mut merged = si.clone();
                        merged.remove(diff[0]);
                        let mut rest: Vec<Formula> = Vec::new();
                        for (k, c) in cs.iter().enumerate() {
                            if k != i && k != j {
                                rest.push(c.clone());
                            }
                        }
                        rest.push(Formula::and_of(
                            merged.into_iter().map(Formula::Lit).collect(),
                        ));
                        return resolve_adjacent(Formula::or_of(rest));
                    }
                }
            }
        }
    }
    f
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn v(n: &str) -> Term {
        Term::Var(n.into())
    }

    fn c(n: &str) -> Term {
        Term::Const(n.into())
    }

    fn p(name: &str, args: Vec<Term>) -> Formula {
        Formula::atom(Atom::pred(name, args))
    }

    fn np(name: &str, args: Vec<Term>) -> Formula {
        Formula::not_atom(Atom::pred(name, args))
    }

    #[test]
    fn constructors_flatten_and_short_circuit() {
        let a = p("A", vec![v("X")]);
        let b = p("B", vec![v("X")]);
        let nested = Formula::and_of(vec![a.clone(), Formula::and_of(vec![b.clone(), a.clone()])]);
        assert_eq!(nested, Formula::and_of(vec![a.clone(), b.clone()]));
        assert_eq!(Formula::and_of(vec![a.clone(), Formula::False]), Formula::False);
        assert_eq!(Formula::or_of(vec![a.clone(), Formula::True]), Formula::True);
        assert_eq!(Formula::and_of(vec![]), Formula::True);
        assert_eq!(Formula::or_of(vec![]), Formula::False);
        // Complementary literals.
        assert_eq!(
            Formula::and_of(vec![a.clone(), np("A", vec![v("X")])]),
            Formula::False
        );
        assert_eq!(Formula::or_of(vec![a.clone(), np("A", vec![v("X")])]), Formula::True);
    }

    #[test]
    fn negate_is_nnf_involution() {
        let f = Formula::or_of(vec![
            Formula::and_of(vec![p("A", vec![v("X")]), np("B", vec![v("Y")])]),
            p("C", vec![c("k")]),
        ]);
        let nn = f.negate().negate();
        assert_eq!(f, nn);
    }

    #[test]
    fn trivial_equalities_fold() {
        assert_eq!(Formula::atom(Atom::eq(v("X"), v("X"))), Formula::True);
        assert_eq!(Formula::not_atom(Atom::eq(v("X"), v("X"))), Formula::False);
        assert_eq!(Formula::atom(Atom::eq(c("a"), c("b"))), Formula::False);
        assert_eq!(Formula::not_atom(Atom::eq(c("a"), c("b"))), Formula::True);
    }

    #[test]
    fn satisfiable_basics() {
        let a = p("A", vec![v("X")]);
        assert!(satisfiable(&a));
        assert!(!satisfiable(&Formula::and_of(vec![a.clone(), a.negate()])));
        // Different variables denote possibly different objects.
        let mixed = Formula::and_of(vec![p("A", vec![v("X")]), np("A", vec![v("Y")])]);
        assert!(satisfiable(&mixed));
    }

    #[test]
    fn equality_congruence_conflicts() {
        // A(X) ∧ ¬A(Y) ∧ X = Y is inconsistent.
        let f = Formula::and_of(vec![
            p("A", vec![v("X")]),
            np("A", vec![v("Y")]),
            Formula::atom(Atom::eq(v("X"), v("Y"))),
        ]);
        assert!(!satisfiable(&f));
        // Transitivity through classes: X=Y ∧ Y=Z ∧ A(X) ∧ ¬A(Z).
        let g = Formula::and_of(vec![
            Formula::atom(Atom::eq(v("X"), v("Y"))),
            Formula::atom(Atom::eq(v("Y"), v("Z"))),
            p("A", vec![v("X")]),
            np("A", vec![v("Z")]),
        ]);
        assert!(!satisfiable(&g));
        // Unique names: X = a ∧ X = b forces a = b, impossible.
        let h = Formula::and_of(vec![
            Formula::atom(Atom::eq(v("X"), c("a"))),
            Formula::atom(Atom::eq(v("X"), c("b"))),
        ]);
        assert!(!satisfiable(&h));
    }

    #[test]
    fn entails_examples() {
        let a = p("A", vec![v("X")]);
        let b = p("B", vec![v("X")]);
        let ab = Formula::and_of(vec![a.clone(), b.clone()]);
        assert!(entails(&ab, &a));
        assert!(!entails(&a, &ab));
        assert!(entails(&a, &Formula::or_of(vec![a.clone(), b.clone()])));
        // Congruence-aware entailment: X=Y ∧ A(X) entails A(Y).
        let lhs = Formula::and_of(vec![Formula::atom(Atom::eq(v("X"), v("Y"))), a.clone()]);
        assert!(entails(&lhs, &p("A", vec![v("Y")])));
    }

    #[test]
    fn eval_formula_ground() {
        let mut interp = Interpretation::default();
        interp.objects.insert("Box".into(), vec!["b1".into(), "b2".into()]);
        interp.facts.insert(("Big".into(), vec!["b1".into()]));
        let env = BTreeMap::from([("X".to_string(), "b1".to_string())]);
        assert!(eval_formula(&p("Big", vec![v("X")]), &interp, &env).unwrap());
        let env2 = BTreeMap::from([("X".to_string(), "b2".to_string())]);
        assert!(!eval_formula(&p("Big", vec![v("X")]), &interp, &env2).unwrap());
        assert!(eval_formula(
            &Formula::atom(Atom::eq(v("X"), c("b2"))),
            &interp,
            &env2
        )
        .unwrap());
    }

    #[test]
    fn simplify_unit_propagation_and_resolution() {
        let a = p("A", vec![v("X")]);
        let b = p("B", vec![v("X")]);
        let cfm = p("C", vec![v("X")]);
        // a ∧ (¬a ∨ b) simplifies to a ∧ b.
        let f = Formula::and_of(vec![a.clone(), Formula::or_of(vec![a.negate(), b.clone()])]);
        assert_eq!(simplify_formula(&f), Formula::and_of(vec![a.clone(), b.clone()]));
        // (c ∧ a) ∨ (c ∧ ¬a) simplifies to c.
        let g = Formula::or_of(vec![
            Formula::and_of(vec![cfm.clone(), a.clone()]),
            Formula::and_of(vec![cfm.clone(), a.negate()]),
        ]);
        assert_eq!(simplify_formula(&g), cfm);
        // Absorption: a ∨ (a ∧ b) simplifies to a.
        let h = Formula::or_of(vec![a.clone(), Formula::and_of(vec![a.clone(), b.clone()])]);
        assert_eq!(simplify_formula(&h), a);
    }

    #[test]
    fn simplify_factors_and_collapses_semantically() {
        let a = p("A", vec![v("X")]);
        let b = p("B", vec![v("X")]);
        let cfm = p("C", vec![v("X")]);
        // (c ∧ a) ∨ (c ∧ b) factors to c ∧ (a ∨ b).
        let f = Formula::or_of(vec![
            Formula::and_of(vec![cfm.clone(), a.clone()]),
            Formula::and_of(vec![cfm.clone(), b.clone()]),
        ]);
        assert_eq!(
            simplify_formula(&f),
            Formula::and_of(vec![cfm.clone(), Formula::or_of(vec![a.clone(), b.clone()])])
        );
        // A covering disjunction collapses to true: (a ∧ b) ∨ ¬a ∨ ¬b.
        let g = Formula::or_of(vec![
            Formula::and_of(vec![a.clone(), b.clone()]),
            a.negate(),
            b.negate(),
        ]);
        assert_eq!(simplify_formula(&g), Formula::True);
        // A hidden equality contradiction collapses to false.
        let h = Formula::and_of(vec![
            Formula::atom(Atom::eq(v("X"), c("a"))),
            Formula::atom(Atom::eq(v("X"), c("b"))),
        ]);
        assert_eq!(simplify_formula(&h), Formula::False);
    }

    #[test]
    fn substitution_replaces_terms() {
        let f = Formula::and_of(vec![
            p("On", vec![v("B"), v("T")]),
            Formula::atom(Atom::eq(v("B"), c("b1"))),
        ]);
        let s = Substitution::of([(v("B"), c("b1"))]);
        let g = s.apply(&f);
        // B = b1 folds to true under the substitution b1 = b1.
        assert_eq!(g, p("On", vec![c("b1"), v("T")]));
    }
}
