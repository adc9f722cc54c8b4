//! Expression simplification and decision-list normalization.
//!
//! Two tiers:
//!
//! - [`simplify`] (light): per-case formula simplification, unsatisfiable
//!   case removal, merging of equal-valued cases, and removal of vacuous
//!   prefix variables. Cheap enough to run after every combination.
//!
//! - [`normalize_decision_list`] (full, all-`max` prefixes only): rewrites
//!   the expression as a first-match decision list ordered by descending
//!   value. Each value level's condition is put in disjunctive normal form
//!   and aggressively reduced with equality elimination, per-disjunct
//!   variable canonicalization, θ-subsumption against higher levels,
//!   variable merging, and context-strengthened literal deletion; the final
//!   case of the list is the complement of everything above it at the
//!   minimum value. All rewrites preserve [`RelExpr::evaluate`] on every
//!   interpretation — the reductions rely on the purely existential reading
//!   that an all-`max` prefix gives each value level.
//!
//! [`canonicalize`] composes the two with deterministic variable naming and
//! case/prefix ordering so that semantically equal expressions produced by
//! different derivations compare structurally equal.

use super::{AggOp, Case, PrefixEntry, Rational, RelExpr};
use crate::logic::{
    lits_consistent, satisfiable, simplify_formula, Atom, Formula, Literal, SortName,
    Substitution, Term,
};
use std::collections::{BTreeMap, BTreeSet};

/// Upper bound on the number of disjuncts a single level may expand to;
/// beyond this, normalization falls back to the lightly simplified input.
/// Node budget for the branch-and-prune expansion of one normalization
/// call; exhausting it abandons normalization (the caller keeps the
/// unnormalized expression or falls back to the case-product path).
const EXPAND_BUDGET: usize = 400_000;

/// Within-level resolution is attempted only on levels at most this large
/// (pair enumeration is quadratic) and performs at most this many set
/// updates before stopping.
const RESOLUTION_SET_CAP: usize = 48;
const RESOLUTION_UPDATE_CAP: usize = 64;

// ---------------------------------------------------------------------------
// Light simplification
// ---------------------------------------------------------------------------

/// Light, always-sound cleanup: simplify each condition, drop unsatisfiable
/// cases, merge equal-valued cases by disjunction, and drop prefix
/// variables no condition mentions (a vacuous `sum` variable multiplies the
/// scale by its sort's cardinality; a vacuous `product` variable must stay).
pub fn simplify(e: &RelExpr) -> RelExpr {
    let mut cases: Vec<Case> = Vec::new();
    for c in &e.cases {
        let cond = simplify_formula(&c.condition);
        if cond == Formula::False || !satisfiable(&cond) {
            continue;
        }
        cases.push(Case::new(cond, c.value.clone()));
    }
    // Merge cases that share a value (disjunction preserves the partition).
    let mut merged: Vec<Case> = Vec::new();
    for c in cases {
        if let Some(prev) = merged.iter_mut().find(|m| m.value == c.value) {
            prev.condition = simplify_formula(&Formula::or_of(vec![
                prev.condition.clone(),
                c.condition,
            ]));
        } else {
            merged.push(c);
        }
    }
    // Drop vacuous prefix entries.
    let mut used: BTreeSet<String> = BTreeSet::new();
    for c in &merged {
        used.extend(c.condition.free_vars());
    }
    let mut prefix = Vec::new();
    let mut scale = e.scale.clone();
    for entry in &e.prefix {
        if used.contains(&entry.var) {
            prefix.push(entry.clone());
            continue;
        }
        match entry.op {
            AggOp::Max | AggOp::Min | AggOp::Avg => {}
            AggOp::Sum => scale.push(entry.sort.clone()),
            AggOp::Product => prefix.push(entry.clone()),
        }
    }
    scale.sort();
    RelExpr { prefix, scale, cases: merged }
}

// ---------------------------------------------------------------------------
// Decision-list normalization
// ---------------------------------------------------------------------------

/// One reduced disjunct of a value level: a conjunction of literals plus the
/// tracked term bindings (used for policy parameter recovery) as rewritten
/// by the reductions this disjunct went through.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Disjunct {
    pub lits: BTreeSet<Literal>,
    pub binding: BTreeMap<String, Term>,
}

impl Disjunct {
    pub fn formula(&self) -> Formula {
        Formula::and_of(self.lits.iter().cloned().map(Formula::Lit).collect())
    }
}

/// One value level of the normalized decision list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Level {
    pub value: Rational,
    /// Disjunction of the kept disjuncts (the level fires when some binding
    /// satisfies it and no higher level fires).
    pub trigger: Formula,
    pub disjuncts: Vec<Disjunct>,
    /// The final complement case at the minimum value.
    pub is_else: bool,
}

/// Result of normalization: the rewritten expression plus its level
/// structure (consumed by policy extraction).
#[derive(Debug, Clone)]
pub struct NormalOutcome {
    pub expr: RelExpr,
    pub levels: Vec<Level>,
    /// False when a condition was too large to normalize and the lightly
    /// simplified input was returned unchanged.
    pub reduced: bool,
    /// Sort of every variable a level disjunct may mention. Trigger
    /// minimization can eliminate a variable from the rebuilt expression's
    /// prefix while a kept disjunct still uses it, so consumers of
    /// [`Level::disjuncts`] resolve sorts here rather than in the prefix.
    pub var_sorts: BTreeMap<String, SortName>,
}

/// Normalize an all-`max` expression into a first-match decision list.
///
/// `tracked` seeds each disjunct's binding map (policy extraction passes
/// the action-parameter-to-variable map); pass an empty map otherwise.
pub fn normalize_decision_list(
    e: &RelExpr,
    tracked: &BTreeMap<String, Term>,
) -> NormalOutcome {
    debug_assert!(e.prefix_all(AggOp::Max));
    let e = simplify(e);
    if e.cases.is_empty() {
        return NormalOutcome {
            expr: e,
            levels: Vec::new(),
            reduced: true,
            var_sorts: BTreeMap::new(),
        };
    }
    let info = e.prefix_info();
    let forbidden = rename_forbidden(&e);

    // Group case conditions by value; the minimum level is rebuilt as the
    // complement case, so only the levels above it are reduced.
    let mut by_value: BTreeMap<Rational, Vec<Formula>> = BTreeMap::new();
    for c in &e.cases {
        by_value.entry(c.value.clone()).or_default().push(c.condition.clone());
    }
    let min_value = by_value.keys().next().expect("nonempty").clone();
    by_value.remove(&min_value);

    match normalize_core(&e.prefix, &e.scale, &info, forbidden, &by_value, min_value, tracked) {
        Some(out) => out,
        None => {
            // A condition was too large to normalize: keep the lightly
            // simplified input and expose its raw cases as levels.
            let levels = fallback_levels(&e, tracked);
            let var_sorts = info
                .iter()
                .map(|(v, (_, sort))| (v.clone(), sort.clone()))
                .collect();
            NormalOutcome { expr: e, levels, reduced: false, var_sorts }
        }
    }
}

/// Pointwise maximum of any number of decision lists, merged at the level
/// layer. Each side's levels carry per-value triggers (exact regions or
/// pure triggers; exclusion conjuncts are unnecessary), so merging never
/// expands the negation of another side's upper levels: levels of equal
/// value pool their triggers, levels at or below the merged complement
/// value drop (some side guarantees at least that value everywhere), and
/// one normalization pass restores first-match exclusivity. Sound because
/// overlapping triggers are harmless under first-match: a state caught by
/// several levels reads its value from the highest, which is exactly the
/// pointwise maximum.
///
/// A side without an `is_else` level is treated as an exact partition whose
/// minimum-value level is the complement (exhaustiveness makes the two
/// readings agree).
///
/// Returns `None` when the inputs cannot be merged at this layer (empty
/// level sets, a variable named with different sorts on two sides, or an
/// expansion over budget); the caller falls back to the case-product path.
pub fn merge_max_levels(
    sides: &[(&[Level], &BTreeMap<String, SortName>)],
    scale: &[SortName],
) -> Option<NormalOutcome> {
    if sides.is_empty() || sides.iter().any(|(lv, _)| lv.is_empty()) {
        return None;
    }
    let else_of = |side: &[Level]| -> Rational {
        side.iter()
            .find(|l| l.is_else)
            .map(|l| l.value.clone())
            .unwrap_or_else(|| {
                side.iter().map(|l| l.value.clone()).min().expect("nonempty side")
            })
    };
    let else_v = sides
        .iter()
        .map(|(lv, _)| else_of(lv))
        .max()
        .expect("nonempty sides");
    let mut info: BTreeMap<String, (AggOp, SortName)> = BTreeMap::new();
    for (_, sorts) in sides {
        for (v, sort) in sorts.iter() {
            match info.get(v) {
                Some((_, prev)) if prev != sort => return None,
                _ => {
                    info.insert(v.clone(), (AggOp::Max, sort.clone()));
                }
            }
        }
    }
    let mut by_value: BTreeMap<Rational, Vec<Formula>> = BTreeMap::new();
    let mut forbidden: BTreeSet<String> = BTreeSet::new();
    for lvl in sides.iter().flat_map(|(lv, _)| lv.iter()) {
        if lvl.is_else || lvl.value <= else_v {
            continue;
        }
        for atom in lvl.trigger.atoms() {
            for t in atom.terms() {
                match t {
                    Term::Const(n) | Term::Param(n) => {
                        forbidden.insert(n.clone());
                    }
                    Term::Var(v) => {
                        if !info.contains_key(v) {
                            return None;
                        }
                    }
                }
            }
        }
        by_value.entry(lvl.value.clone()).or_default().push(lvl.trigger.clone());
    }
    let input_prefix: Vec<PrefixEntry> = info
        .iter()
        .map(|(v, (op, sort))| PrefixEntry::new(*op, v.clone(), sort.clone()))
        .collect();
    normalize_core(&input_prefix, scale, &info, forbidden, &by_value, else_v, &BTreeMap::new())
}

/// Shared normalization engine behind [`normalize_decision_list`] and
/// [`merge_max_levels`]: reduce per-value trigger formulas (all strictly
/// above the complement value) into a first-match decision list. Returns
/// `None` when a condition exceeds the DNF budget.
fn normalize_core(
    input_prefix: &[PrefixEntry],
    scale: &[SortName],
    info: &BTreeMap<String, (AggOp, SortName)>,
    forbidden: BTreeSet<String>,
    by_value: &BTreeMap<Rational, Vec<Formula>>,
    min_value: Rational,
    tracked: &BTreeMap<String, Term>,
) -> Option<NormalOutcome> {
    let mut slots = SlotRegistry::new(forbidden);
    // Per level: value, resolution-minimized disjuncts (drive the trigger,
    // the facts, and the shadowing of lower levels), and the kept originals
    // (carry the policy bindings).
    let mut kept_levels: Vec<(Rational, Vec<Disjunct>, Vec<Disjunct>)> = Vec::new();
    // Single-literal disjuncts of higher levels: in the branch where no
    // higher level fires, each such literal fails under *every* binding.
    let mut facts: Vec<Disjunct> = Vec::new();

    let mut budget: usize = EXPAND_BUDGET;
    for (value, conds) in by_value.iter().rev() {
        // Patterns that prune the expansion: a partial conjunction already
        // θ-subsumed by a kept disjunct of this or any higher level stays
        // subsumed under every extension, so its whole subtree is covered.
        let higher: Vec<Disjunct> = kept_levels
            .iter()
            .flat_map(|(_, minimized, _)| minimized.iter())
            .cloned()
            .collect();
        let mut ctx = ExpandCtx {
            higher: &higher,
            facts: &facts,
            info,
            slots: &mut slots,
            tracked,
            out: Vec::new(),
            budget: &mut budget,
            stats: (0, 0),
        };
        let mut exhausted = false;
        for cond in conds {
            let rem = vec![cond];
            if !expand(BTreeSet::new(), rem, &mut ctx) {
                exhausted = true;
                break;
            }
        }
        if std::env::var("NORM_DEBUG").is_ok() {
            eprintln!(
                "level {value}: budget left {}, forks {}, leaves {}, kept {}{}",
                *ctx.budget,
                ctx.stats.0,
                ctx.stats.1,
                ctx.out.len(),
                if exhausted { " EXHAUSTED" } else { "" }
            );
        }
        if exhausted {
            return None; // expansion budget exhausted
        }
        let mut reduced = ctx.out;
        // Deterministic downstream order: smallest first, ties by text.
        reduced.sort_by(|a, b| {
            (a.lits.len(), format!("{:?}", a.lits)).cmp(&(b.lits.len(), format!("{:?}", b.lits)))
        });
        let mut final_disjuncts: Vec<Disjunct> = Vec::new();
        for d in reduced {
            let covered = final_disjuncts
                .iter()
                .any(|prev| theta_subsumes(&prev.lits, &d.lits));
            if !covered {
                final_disjuncts.push(d);
            }
        }
        if final_disjuncts.is_empty() {
            continue;
        }
        let minimized = resolution_minimize(&final_disjuncts, &mut slots);
        for d in &minimized {
            if d.lits.len() == 1 {
                facts.push(d.clone());
            }
        }
        kept_levels.push((value.clone(), minimized, final_disjuncts));
    }

    Some(rebuild(
        input_prefix,
        scale,
        kept_levels,
        min_value,
        info,
        &slots,
        !tracked.is_empty(),
    ))
}

/// State shared across the branch-and-prune expansion of one value level.
struct ExpandCtx<'a> {
    /// Minimized disjuncts of every higher level (prune patterns).
    higher: &'a [Disjunct],
    /// Single-literal disjuncts of higher levels (context strengthening).
    facts: &'a [Disjunct],
    info: &'a BTreeMap<String, (AggOp, SortName)>,
    slots: &'a mut SlotRegistry,
    tracked: &'a BTreeMap<String, Term>,
    /// Fully reduced disjuncts kept so far for this level.
    out: Vec<Disjunct>,
    budget: &'a mut usize,
    /// (forks, leaves) instrumentation for tuning.
    stats: (usize, usize),
}

impl ExpandCtx<'_> {
    /// Is this (possibly partial) conjunction already θ-subsumed by a kept
    /// disjunct of this or a higher level? Subsumption is monotone in the
    /// target, so a subsumed partial stays subsumed under every extension.
    fn pruned(&self, partial: &BTreeSet<Literal>) -> bool {
        // Pending positive equalities hide matches (the pattern names one
        // variable where the partial still has two); substitute them out
        // before matching.
        let eq_reduced: BTreeSet<Literal>;
        let partial = if partial
            .iter()
            .any(|l| l.positive && matches!(l.atom, Atom::Eq(_, _)))
        {
            let mut d = Disjunct { lits: partial.clone(), binding: BTreeMap::new() };
            if !eliminate_equalities(&mut d, self.info) {
                return true; // collapsed to an unsatisfiable set
            }
            eq_reduced = d.lits;
            &eq_reduced
        } else {
            partial
        };
        // A pattern can only match if every (sign, symbol) it uses occurs
        // in the target; the cheap index skips most patterns before the
        // backtracking matcher runs.
        let index: BTreeSet<(bool, &str)> = partial
            .iter()
            .map(|l| {
                (
                    l.positive,
                    match &l.atom {
                        Atom::Pred { name, .. } => name.as_str(),
                        Atom::Eq(_, _) => "=",
                    },
                )
            })
            .collect();
        self.higher.iter().chain(self.out.iter()).any(|p| {
            p.lits.iter().all(|l| {
                index.contains(&(
                    l.positive,
                    match &l.atom {
                        Atom::Pred { name, .. } => name.as_str(),
                        Atom::Eq(_, _) => "=",
                    },
                ))
            }) && theta_subsumes(&p.lits, partial)
        })
    }

    /// Run the reduction chain on a completed conjunction and keep it
    /// unless it collapses or is subsumed.
    fn finalize(&mut self, lits: BTreeSet<Literal>) {
        self.stats.1 += 1;
        if !lits_consistent(lits.iter()) {
            return;
        }
        let mut d = Disjunct { lits, binding: self.tracked.clone() };
        if !eliminate_equalities(&mut d, self.info) {
            return;
        }
        merge_variables(&mut d, self.info);
        // Context strengthening against higher-level single-literal facts;
        // may falsify the disjunct outright.
        if !strengthen(&mut d, self.facts) {
            return;
        }
        merge_variables(&mut d, self.info);
        rename_to_slots(&mut d, self.info, self.slots);
        if self.pruned(&d.lits) {
            return;
        }
        self.out.push(d);
    }
}

/// Expand one level condition into reduced disjuncts without materializing
/// its full disjunctive normal form: conjunctions grow literal by literal
/// and or-blocks branch. Three cuts keep the tree far below the raw
/// product: a partial that picks up a complementary literal or becomes
/// unsatisfiable under equality reasoning prunes its subtree, a partial
/// already θ-subsumed by a kept disjunct prunes its subtree (subsumption is
/// monotone in the target), and an or-block with one alternative already in
/// the partial contributes nothing (absorption). Returns false when the
/// node budget runs out.
fn expand(
    mut partial: BTreeSet<Literal>,
    mut rem: Vec<&Formula>,
    ctx: &mut ExpandCtx<'_>,
) -> bool {
    if *ctx.budget == 0 {
        return false;
    }
    *ctx.budget -= 1;
    loop {
        let Some(f) = rem.pop() else {
            ctx.finalize(partial);
            return true;
        };
        match f {
            Formula::True => {}
            Formula::False => return true,
            Formula::Lit(l) => {
                if partial.contains(&l.negated()) {
                    return true;
                }
                partial.insert(l.clone());
            }
            Formula::And(children) => {
                // Literals first (they tighten the partial before any
                // branching), then or-blocks from narrowest to widest.
                let mut lits: Vec<&Formula> = Vec::new();
                let mut blocks: Vec<&Formula> = Vec::new();
                for c in children {
                    match c {
                        Formula::Lit(_) | Formula::True | Formula::False => lits.push(c),
                        _ => blocks.push(c),
                    }
                }
                // Clause subsumption among pure-literal or-blocks:
                // (a ∨ b) ∧ (a ∨ b ∨ c) ≡ (a ∨ b), so the wider block
                // never needs to branch.
                let branch_sets: Vec<Option<BTreeSet<&Literal>>> = blocks
                    .iter()
                    .map(|b| match b {
                        Formula::Or(cs) => cs
                            .iter()
                            .map(|c| match c {
                                Formula::Lit(l) => Some(l),
                                _ => None,
                            })
                            .collect(),
                        _ => None,
                    })
                    .collect();
                let keep: Vec<bool> = branch_sets
                    .iter()
                    .enumerate()
                    .map(|(i, set)| {
                        let Some(set) = set else { return true };
                        !branch_sets.iter().enumerate().any(|(j, other)| {
                            let Some(other) = other else { return false };
                            j != i
                                && other.is_subset(set)
                                && (other.len() < set.len() || j < i)
                        })
                    })
                    .collect();
                let mut blocks: Vec<&Formula> = blocks
                    .into_iter()
                    .zip(&keep)
                    .filter_map(|(b, &k)| k.then_some(b))
                    .collect();
                blocks.sort_by_key(|b| match b {
                    Formula::Or(cs) => cs.len(),
                    _ => 0,
                });
                // Stack order: widest deepest, literals on top.
                rem.extend(blocks.into_iter().rev());
                rem.extend(lits);
            }
            Formula::Or(children) => {
                // Absorption: one alternative already holds, so the block
                // adds nothing along this path.
                if children
                    .iter()
                    .any(|c| matches!(c, Formula::Lit(l) if partial.contains(l)))
                {
                    continue;
                }
                // Dead alternatives (complement already present) never
                // spawn a branch.
                let live: Vec<&Formula> = children
                    .iter()
                    .filter(|c| {
                        !matches!(c, Formula::Lit(l) if partial.contains(&l.negated()))
                    })
                    .collect();
                if live.is_empty() {
                    return true;
                }
                // The tree can only widen here, so this is where the two
                // expensive cuts pay for themselves: equality-aware
                // consistency and θ-subsumption by a kept disjunct.
                if live.len() > 1 {
                    ctx.stats.0 += 1;
                    if !lits_consistent(partial.iter()) || ctx.pruned(&partial) {
                        return true;
                    }
                }
                for c in live {
                    let mut rem2 = rem.clone();
                    rem2.push(c);
                    if !expand(partial.clone(), rem2, ctx) {
                        return false;
                    }
                }
                return true;
            }
        }
    }
}


/// Sorts for every name a level disjunct may carry: the input prefix
/// variables plus every canonical slot the registry handed out.
fn collect_var_sorts(
    info: &BTreeMap<String, (AggOp, SortName)>,
    slots: &SlotRegistry,
) -> BTreeMap<String, SortName> {
    let mut out: BTreeMap<String, SortName> = info
        .iter()
        .map(|(v, (_, sort))| (v.clone(), sort.clone()))
        .collect();
    for (sort, names) in &slots.by_sort {
        for name in names {
            out.insert(name.clone(), sort.clone());
        }
    }
    out
}

/// When normalization is skipped, expose the existing cases as levels so
/// policy extraction still has conditions and identity bindings to work
/// with.
fn fallback_levels(e: &RelExpr, tracked: &BTreeMap<String, Term>) -> Vec<Level> {
    let mut levels: Vec<Level> = e
        .cases
        .iter()
        .map(|c| Level {
            value: c.value.clone(),
            trigger: c.condition.clone(),
            disjuncts: vec![Disjunct { lits: BTreeSet::new(), binding: tracked.clone() }],
            is_else: false,
        })
        .collect();
    levels.sort_by(|a, b| b.value.cmp(&a.value));
    levels
}

/// Reassemble the kept levels into mutually exclusive first-match cases and
/// the complement case. The prefix is rebuilt from the canonical slot
/// names actually used (the reductions renamed every surviving variable).
fn rebuild(
    input_prefix: &[PrefixEntry],
    scale: &[SortName],
    kept_levels: Vec<(Rational, Vec<Disjunct>, Vec<Disjunct>)>,
    min_value: Rational,
    info: &BTreeMap<String, (AggOp, SortName)>,
    slots: &SlotRegistry,
    keep_originals: bool,
) -> NormalOutcome {
    let mut cases: Vec<Case> = Vec::new();
    let mut levels: Vec<Level> = Vec::new();
    let mut kept_triggers: Vec<Formula> = Vec::new();
    for (value, minimized, originals) in kept_levels {
        let trigger = simplify_formula(&Formula::or_of(
            minimized.iter().map(|d| d.formula()).collect(),
        ));
        let mut parts = vec![trigger.clone()];
        parts.extend(kept_triggers.iter().map(|t| t.negate()));
        let cond = simplify_formula(&Formula::and_of(parts));
        if !satisfiable(&cond) {
            // Every state reaching this level is already caught above it;
            // its negation is implied by the earlier negations, so the
            // level vanishes without weakening the complement.
            continue;
        }
        cases.push(Case::new(cond, value.clone()));
        // Policy extraction needs the original disjuncts (their bindings
        // name the action arguments); value-only callers get the minimized
        // set, which matches the trigger.
        let disjuncts = if keep_originals { originals } else { minimized };
        levels.push(Level { value, trigger: trigger.clone(), disjuncts, is_else: false });
        kept_triggers.push(trigger);
    }
    let else_cond = simplify_formula(&Formula::and_of(
        kept_triggers.iter().map(|t| t.negate()).collect(),
    ));
    if satisfiable(&else_cond) {
        cases.push(Case::new(else_cond.clone(), min_value.clone()));
        levels.push(Level {
            value: min_value,
            trigger: else_cond,
            disjuncts: Vec::new(),
            is_else: true,
        });
    }
    // Surviving case variables all carry canonical slot names; rebuild the
    // prefix (all max) from them, ordered by sort then slot index.
    let mut used: BTreeSet<String> = BTreeSet::new();
    for c in &cases {
        used.extend(c.condition.free_vars());
    }
    let mut prefix: Vec<PrefixEntry> = Vec::new();
    for (sort, names) in &slots.by_sort {
        for name in names {
            if used.contains(name) {
                prefix.push(PrefixEntry::new(AggOp::Max, name.clone(), sort.clone()));
            }
        }
    }
    // Defensive: any case variable not in the registry keeps its entry from
    // the input prefix (cannot happen on the normal path).
    for entry in input_prefix {
        if used.contains(&entry.var) && !prefix.iter().any(|p| p.var == entry.var) {
            prefix.push(entry.clone());
        }
    }
    prefix.sort_by(|a, b| {
        (&a.sort, slot_rank(&a.var), &a.var).cmp(&(&b.sort, slot_rank(&b.var), &b.var))
    });
    let expr = simplify(&RelExpr { prefix, scale: scale.to_vec(), cases });
    let var_sorts = collect_var_sorts(info, slots);
    NormalOutcome { expr, levels, reduced: true, var_sorts }
}

/// Numeric suffix of a slot name (`B` → 1, `B2` → 2) for natural ordering.
fn slot_rank(name: &str) -> u64 {
    let digits: String = name.chars().filter(|c| c.is_ascii_digit()).collect();
    digits.parse().unwrap_or(1)
}

// ---------------------------------------------------------------------------
// Disjunct reductions
// ---------------------------------------------------------------------------

fn disjunct_satisfiable(d: &Disjunct) -> bool {
    satisfiable(&d.formula())
}

/// Apply a substitution to every literal; `None` signals a literal became
/// false (the disjunct is unsatisfiable), trivially-true literals drop out.
fn subst_lits(lits: &BTreeSet<Literal>, s: &Substitution) -> Option<BTreeSet<Literal>> {
    let mut out = BTreeSet::new();
    for l in lits {
        match Formula::literal(s.apply_atom(&l.atom), l.positive) {
            Formula::True => {}
            Formula::False => return None,
            Formula::Lit(l2) => {
                // A literal and its complement in one conjunction: false.
                if out.contains(&l2.negated()) {
                    return None;
                }
                out.insert(l2);
            }
            _ => unreachable!("literal maps to literal"),
        }
    }
    Some(out)
}

fn apply_to_binding(binding: &mut BTreeMap<String, Term>, s: &Substitution) {
    for v in binding.values_mut() {
        *v = s.apply_term(v);
    }
}

/// Eliminate positive equalities that pin a `max`-bound variable to another
/// term: `∃X (X = t ∧ φ(X)) ≡ φ(t)` whenever `t` is a constant, parameter,
/// or another prefix variable (with both sides variables, the earlier
/// prefix variable is mapped onto the later one). Returns false when the
/// disjunct collapses to an unsatisfiable literal set.
fn eliminate_equalities(
    d: &mut Disjunct,
    info: &BTreeMap<String, (AggOp, SortName)>,
) -> bool {
    loop {
        let mut theta: Option<Substitution> = None;
        for l in &d.lits {
            if !l.positive {
                continue;
            }
            let Atom::Eq(a, b) = &l.atom else { continue };
            let choose = |x: &Term, y: &Term| -> Option<(Term, Term)> {
                match (x, y) {
                    (Term::Var(vx), t) if info.contains_key(vx) => match t {
                        Term::Const(_) | Term::Param(_) => Some((x.clone(), t.clone())),
                        Term::Var(vy) if info.contains_key(vy) => {
                            // Map the earlier prefix variable to the later.
                            Some((x.clone(), Term::Var(vy.clone())))
                        }
                        _ => None,
                    },
                    _ => None,
                }
            };
            let pick = choose(a, b).or_else(|| choose(b, a));
            if let Some((from, to)) = pick {
                let mut s = Substitution::new();
                s.bind(from, to);
                theta = Some(s);
                break;
            }
        }
        let Some(s) = theta else { return true };
        match subst_lits(&d.lits, &s) {
            Some(lits) => {
                d.lits = lits;
                apply_to_binding(&mut d.binding, &s);
            }
            None => return false,
        }
    }
}

/// Variable merging: replacing a variable by another term of the disjunct
/// is exact when the substituted literal set is contained in the original
/// (then `∃ d ⇔ ∃ dθ`: one direction is the witness `X := t`, the other is
/// monotonicity of conjunction shrinkage).
fn merge_variables(d: &mut Disjunct, info: &BTreeMap<String, (AggOp, SortName)>) {
    loop {
        let mut applied = false;
        let vars: BTreeSet<String> = d
            .lits
            .iter()
            .flat_map(|l| l.atom.terms())
            .filter_map(|t| match t {
                Term::Var(v) => Some(v.clone()),
                _ => None,
            })
            .collect();
        let terms: BTreeSet<Term> = d.lits.iter().flat_map(|l| l.atom.terms()).cloned().collect();
        'search: for v in &vars {
            let v_sort = info.get(v).map(|(_, s)| s.clone());
            for t in &terms {
                if *t == Term::Var(v.clone()) {
                    continue;
                }
                // Skip merges that are ill-sorted on their face.
                if let (Term::Var(w), Some(vs)) = (t, &v_sort) {
                    if let Some((_, ws)) = info.get(w) {
                        if ws != vs {
                            continue;
                        }
                    }
                }
                let mut s = Substitution::new();
                s.bind(Term::Var(v.clone()), t.clone());
                if let Some(mapped) = subst_lits(&d.lits, &s) {
                    if mapped.len() < d.lits.len() && mapped.iter().all(|l| d.lits.contains(l)) {
                        d.lits = mapped;
                        apply_to_binding(&mut d.binding, &s);
                        applied = true;
                        break 'search;
                    }
                }
            }
        }
        if !applied {
            return;
        }
    }
}

/// Context strengthening. In the branch of the decision list where no
/// higher level fires, a higher single-literal disjunct `{L}` yields the
/// universal fact "no instance of `L` holds". Any literal of this disjunct
/// matched by an instance of `L` is therefore false here (the disjunct is
/// dropped), and any literal matched by `¬L`'s instances is trivially true
/// (the literal is deleted). Where a higher level *does* fire, this level
/// is never consulted, so the rewrite cannot change the expression's value.
fn strengthen(d: &mut Disjunct, facts: &[Disjunct]) -> bool {
    for fact in facts {
        let pat = fact.lits.iter().next().expect("single-literal fact");
        let flex: BTreeSet<String> = pattern_vars(pat);
        let mut deletions: Vec<Literal> = Vec::new();
        for l in &d.lits {
            if l.positive == pat.positive && match_atom(&pat.atom, &l.atom, &flex) {
                return false; // Contradicts the context: drop the disjunct.
            }
            if l.positive != pat.positive && match_atom(&pat.atom, &l.atom, &flex) {
                deletions.push(l.clone());
            }
        }
        for l in deletions {
            d.lits.remove(&l);
        }
    }
    true
}

fn pattern_vars(l: &Literal) -> BTreeSet<String> {
    l.atom
        .terms()
        .into_iter()
        .filter_map(|t| match t {
            Term::Var(v) => Some(v.clone()),
            _ => None,
        })
        .collect()
}

/// One-way match: does some substitution of `pat`'s flexible variables make
/// it syntactically equal to `target`?
fn match_atom(pat: &Atom, target: &Atom, flex: &BTreeSet<String>) -> bool {
    fn match_terms(
        pairs: &[(Term, Term)],
        flex: &BTreeSet<String>,
        theta: &mut BTreeMap<String, Term>,
    ) -> bool {
        let Some(((p, t), rest)) = pairs.split_first() else { return true };
        match p {
            Term::Var(v) if flex.contains(v) => match theta.get(v) {
                Some(bound) => bound == t && match_terms(rest, flex, theta),
                None => {
                    theta.insert(v.clone(), t.clone());
                    if match_terms(rest, flex, theta) {
                        true
                    } else {
                        theta.remove(v);
                        false
                    }
                }
            },
            _ => p == t && match_terms(rest, flex, theta),
        }
    }
    match (pat, target) {
        (Atom::Pred { name: pn, args: pa }, Atom::Pred { name: tn, args: ta }) => {
            pn == tn
                && pa.len() == ta.len()
                && match_terms(
                    &pa.iter().cloned().zip(ta.iter().cloned()).collect::<Vec<_>>(),
                    flex,
                    &mut BTreeMap::new(),
                )
        }
        (Atom::Eq(p1, p2), Atom::Eq(t1, t2)) => {
            let straight = match_terms(
                &[(p1.clone(), t1.clone()), (p2.clone(), t2.clone())],
                flex,
                &mut BTreeMap::new(),
            );
            straight
                || match_terms(
                    &[(p1.clone(), t2.clone()), (p2.clone(), t1.clone())],
                    flex,
                    &mut BTreeMap::new(),
                )
        }
        _ => false,
    }
}

/// θ-subsumption: is there a substitution of `pat`'s variables making every
/// literal of `pat` a literal of `target`? Existentially, `target` then
/// entails `pat`, so `target` is redundant at an equal-or-lower value.
/// Every pattern variable is flexible (disjunct variables are always
/// max-bound); constants and parameters are rigid.
pub fn theta_subsumes(pat: &BTreeSet<Literal>, target: &BTreeSet<Literal>) -> bool {
    let pats: Vec<Literal> = pat.iter().cloned().collect();
    let flex: BTreeSet<String> = pats
        .iter()
        .flat_map(|l| l.atom.terms())
        .filter_map(|t| match t {
            Term::Var(v) => Some(v.clone()),
            _ => None,
        })
        .collect();
    fn unify_term(
        p: &Term,
        t: &Term,
        flex: &BTreeSet<String>,
        theta: &mut BTreeMap<String, Term>,
    ) -> Option<Option<String>> {
        match p {
            Term::Var(v) if flex.contains(v) => match theta.get(v) {
                Some(bound) => (bound == t).then_some(None),
                None => {
                    theta.insert(v.clone(), t.clone());
                    Some(Some(v.clone()))
                }
            },
            _ => (p == t).then_some(None),
        }
    }
    fn unify_args(
        ps: &[Term],
        ts: &[Term],
        flex: &BTreeSet<String>,
        theta: &mut BTreeMap<String, Term>,
    ) -> Option<Vec<String>> {
        let mut added = Vec::new();
        for (p, t) in ps.iter().zip(ts) {
            match unify_term(p, t, flex, theta) {
                Some(Some(v)) => added.push(v),
                Some(None) => {}
                None => {
                    for v in added {
                        theta.remove(&v);
                    }
                    return None;
                }
            }
        }
        Some(added)
    }
    fn solve(
        pats: &[Literal],
        target: &BTreeSet<Literal>,
        flex: &BTreeSet<String>,
        theta: &mut BTreeMap<String, Term>,
    ) -> bool {
        let Some((p, rest)) = pats.split_first() else { return true };
        for t in target {
            if t.positive != p.positive {
                continue;
            }
            let attempts: Vec<Option<Vec<String>>> = match (&p.atom, &t.atom) {
                (Atom::Pred { name: pn, args: pa }, Atom::Pred { name: tn, args: ta })
                    if pn == tn && pa.len() == ta.len() =>
                {
                    vec![unify_args(pa, ta, flex, theta)]
                }
                (Atom::Eq(p1, p2), Atom::Eq(t1, t2)) => vec![
                    unify_args(
                        &[p1.clone(), p2.clone()],
                        &[t1.clone(), t2.clone()],
                        flex,
                        theta,
                    ),
                    unify_args(
                        &[p1.clone(), p2.clone()],
                        &[t2.clone(), t1.clone()],
                        flex,
                        theta,
                    ),
                ],
                _ => continue,
            };
            for attempt in attempts.into_iter().flatten() {
                if solve(rest, target, flex, theta) {
                    return true;
                }
                for v in attempt {
                    theta.remove(&v);
                }
            }
        }
        false
    }
    solve(&pats, target, &flex, &mut BTreeMap::new())
}

// ---------------------------------------------------------------------------
// Within-level resolution
// ---------------------------------------------------------------------------

/// Bounded resolution over one level's kept disjuncts.
///
/// The disjuncts of a level are independent existentials over nonempty
/// sorts, so for disjuncts `d1`, `d2` (variables renamed apart) and a most
/// general unifier σ of some `l1 ∈ d1` with the complement of `l2 ∈ d2`,
/// the resolvent `(d1σ \ {l1σ}) ∪ (d2σ \ {l2σ})` covers only states already
/// covered by `d1` or `d2`: under any witness binding (extended arbitrarily
/// to the variables σ eliminated), `l1σ` is either true — then all of `d1σ`
/// holds — or false — then all of `d2σ` holds. Adding a resolvent therefore
/// never changes the level's region, and any disjunct it θ-subsumes can be
/// dropped. A resolvent is kept only when it does subsume a current
/// disjunct, so the set never grows; enumerations shrink to their logical
/// core (for example `{A,¬P}, {A,¬Q}, {A,P,Q}` collapses to `{A}` when `P`
/// and `Q` repeat their arguments).
///
/// The result serves triggers, facts, and cross-level shadowing; bindings
/// are not maintained, so policy parameter recovery must keep reading the
/// unminimized disjuncts.
fn resolution_minimize(kept: &[Disjunct], slots: &mut SlotRegistry) -> Vec<Disjunct> {
    // Cross-clean first: the keep loop only checks new against old, so a
    // later disjunct may subsume an earlier one.
    let mut working: Vec<Disjunct> = Vec::new();
    for d in kept {
        if working.iter().any(|w| theta_subsumes(&w.lits, &d.lits)) {
            continue;
        }
        working.retain(|w| !theta_subsumes(&d.lits, &w.lits));
        working.push(d.clone());
    }
    if working.len() < 2 || working.len() > RESOLUTION_SET_CAP {
        return working;
    }
    // Sorts for the slot names the disjuncts now carry.
    let mut info: BTreeMap<String, (AggOp, SortName)> = BTreeMap::new();
    for (sort, names) in &slots.by_sort {
        for n in names {
            info.insert(n.clone(), (AggOp::Max, sort.clone()));
        }
    }
    let mut updates = 0usize;
    'search: while updates < RESOLUTION_UPDATE_CAP {
        for i in 0..working.len() {
            for j in (i + 1)..working.len() {
                let cands = resolvent_candidates(&working[i], &working[j], &mut info, slots);
                for cand in cands {
                    if working.iter().any(|w| theta_subsumes(&w.lits, &cand.lits)) {
                        continue; // Already covered: nothing new.
                    }
                    if !working.iter().any(|w| theta_subsumes(&cand.lits, &w.lits)) {
                        continue; // Strictly weaker than nothing: not useful.
                    }
                    working.retain(|w| !theta_subsumes(&cand.lits, &w.lits));
                    working.push(cand);
                    updates += 1;
                    continue 'search;
                }
            }
        }
        break;
    }
    working
}

/// All reduced resolvents of one disjunct pair, over every complementary
/// literal pair and every unifier orientation.
fn resolvent_candidates(
    d1: &Disjunct,
    d2: &Disjunct,
    info: &mut BTreeMap<String, (AggOp, SortName)>,
    slots: &mut SlotRegistry,
) -> Vec<Disjunct> {
    let d1_vars = disjunct_vars(d1);
    let d2_vars = disjunct_vars(d2);
    // Every variable needs a sort on file, or the resolvent could smuggle a
    // name the rebuilt prefix cannot account for.
    if d1_vars.union(&d2_vars).any(|v| !info.contains_key(v)) {
        return Vec::new();
    }
    // The two disjuncts are independently quantified: rename d2 apart.
    let mut apart = Substitution::new();
    for v in &d2_vars {
        if d1_vars.contains(v) {
            let mut fresh = format!("{v}__r");
            while d1_vars.contains(&fresh) || d2_vars.contains(&fresh) {
                fresh.push('_');
            }
            let meta = info[v].clone();
            info.insert(fresh.clone(), meta);
            apart.bind(Term::Var(v.clone()), Term::Var(fresh));
        }
    }
    let d2_lits = if apart.is_empty() {
        d2.lits.clone()
    } else {
        match subst_lits(&d2.lits, &apart) {
            Some(lits) => lits,
            None => return Vec::new(),
        }
    };
    let mut out = Vec::new();
    for l1 in &d1.lits {
        for l2 in &d2_lits {
            if l1.positive == l2.positive {
                continue;
            }
            for s in mgu_atoms(&l1.atom, &l2.atom) {
                let mut rest1 = d1.lits.clone();
                rest1.remove(l1);
                let mut rest2 = d2_lits.clone();
                rest2.remove(l2);
                let Some(a) = subst_lits(&rest1, &s) else { continue };
                let Some(b) = subst_lits(&rest2, &s) else { continue };
                let mut merged = a;
                let mut clash = false;
                for l in b {
                    if merged.contains(&l.negated()) {
                        clash = true;
                        break;
                    }
                    merged.insert(l);
                }
                if clash {
                    continue;
                }
                let mut cand = Disjunct { lits: merged, binding: BTreeMap::new() };
                if !disjunct_satisfiable(&cand) {
                    continue;
                }
                if !eliminate_equalities(&mut cand, info) {
                    continue;
                }
                merge_variables(&mut cand, info);
                rename_to_slots(&mut cand, info, slots);
                out.push(cand);
            }
        }
    }
    out
}

fn disjunct_vars(d: &Disjunct) -> BTreeSet<String> {
    d.lits
        .iter()
        .flat_map(|l| l.atom.terms())
        .filter_map(|t| match t {
            Term::Var(v) => Some(v.clone()),
            _ => None,
        })
        .collect()
}

/// Most general unifiers of two flat atoms: variables on both sides are
/// flexible, constants and parameters rigid. Equalities unify in either
/// orientation, so up to two unifiers come back.
fn mgu_atoms(a: &Atom, b: &Atom) -> Vec<Substitution> {
    fn walk(t: &Term, theta: &BTreeMap<String, Term>) -> Term {
        let mut cur = t.clone();
        while let Term::Var(v) = &cur {
            match theta.get(v) {
                Some(next) => cur = next.clone(),
                None => break,
            }
        }
        cur
    }
    fn unify(pairs: &[(&Term, &Term)]) -> Option<Substitution> {
        let mut theta: BTreeMap<String, Term> = BTreeMap::new();
        for (a, b) in pairs {
            let ra = walk(a, &theta);
            let rb = walk(b, &theta);
            if ra == rb {
                continue;
            }
            match (ra, rb) {
                (Term::Var(v), t) | (t, Term::Var(v)) => {
                    theta.insert(v, t);
                }
                _ => return None, // Two distinct rigid terms.
            }
        }
        let mut s = Substitution::new();
        for v in theta.keys() {
            s.bind(Term::Var(v.clone()), walk(&Term::Var(v.clone()), &theta));
        }
        Some(s)
    }
    match (a, b) {
        (Atom::Pred { name: an, args: aa }, Atom::Pred { name: bn, args: ba })
            if an == bn && aa.len() == ba.len() =>
        {
            unify(&aa.iter().zip(ba).collect::<Vec<_>>()).into_iter().collect()
        }
        (Atom::Eq(a1, a2), Atom::Eq(b1, b2)) => {
            [unify(&[(a1, b1), (a2, b2)]), unify(&[(a1, b2), (a2, b1)])]
                .into_iter()
                .flatten()
                .collect()
        }
        _ => Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// Canonical slot naming
// ---------------------------------------------------------------------------

/// Canonical per-sort variable names: first `Box` variable of a disjunct is
/// `B`, the second `B2`, and so on; shared across disjuncts so that
/// structurally similar disjuncts reuse the same names. Sound because each
/// disjunct of a level is an independent existential: renaming within one
/// disjunct never affects another.
struct SlotRegistry {
    forbidden: BTreeSet<String>,
    by_sort: BTreeMap<SortName, Vec<String>>,
}

impl SlotRegistry {
    fn new(forbidden: BTreeSet<String>) -> Self {
        SlotRegistry { forbidden, by_sort: BTreeMap::new() }
    }

    fn slot(&mut self, sort: &str, k: usize) -> String {
        while self.by_sort.get(sort).map_or(0, Vec::len) <= k {
            let idx = self.by_sort.get(sort).map_or(0, Vec::len);
            let initial: String = sort
                .chars()
                .next()
                .map(|c| c.to_ascii_uppercase().to_string())
                .unwrap_or_else(|| "V".to_string());
            let mut n = idx;
            let name = loop {
                let cand = if n == 0 { initial.clone() } else { format!("{initial}{}", n + 1) };
                let clash = self.forbidden.contains(&cand)
                    || self
                        .by_sort
                        .iter()
                        .any(|(s, ns)| s != sort && ns.contains(&cand));
                if !clash {
                    break cand;
                }
                n += 1;
            };
            self.by_sort.entry(sort.to_string()).or_default().push(name);
        }
        self.by_sort[sort][k].clone()
    }
}

/// Names that slot variables must avoid: constants and parameters appearing
/// anywhere in the expression.
fn rename_forbidden(e: &RelExpr) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for c in &e.cases {
        for atom in c.condition.atoms() {
            for t in atom.terms() {
                match t {
                    Term::Const(n) | Term::Param(n) => {
                        out.insert(n.clone());
                    }
                    Term::Var(_) => {}
                }
            }
        }
    }
    out
}

/// Rename this disjunct's variables to canonical slots in order of first
/// appearance over the sorted literal list.
fn rename_to_slots(
    d: &mut Disjunct,
    info: &BTreeMap<String, (AggOp, SortName)>,
    slots: &mut SlotRegistry,
) {
    let mut per_sort_seen: BTreeMap<SortName, usize> = BTreeMap::new();
    let mut renames = Substitution::new();
    let mut assigned: BTreeSet<String> = BTreeSet::new();
    for l in &d.lits {
        for t in l.atom.terms() {
            let Term::Var(v) = t else { continue };
            if assigned.contains(v) {
                continue;
            }
            assigned.insert(v.clone());
            let Some((_, sort)) = info.get(v) else { continue };
            let k = per_sort_seen.entry(sort.clone()).or_insert(0);
            let slot = slots.slot(sort, *k);
            *k += 1;
            if slot != *v {
                renames.bind(Term::Var(v.clone()), Term::Var(slot));
            }
        }
    }
    if renames.is_empty() {
        return;
    }
    if let Some(lits) = subst_lits(&d.lits, &renames) {
        d.lits = lits;
        apply_to_binding(&mut d.binding, &renames);
    }
}

// ---------------------------------------------------------------------------
// Canonical form
// ---------------------------------------------------------------------------

/// Deterministic canonical form: normalize (all-`max` prefixes get the full
/// decision-list treatment), order the prefix within commuting runs, rename
/// variables positionally, and order cases by descending value then
/// condition text. Semantically equal expressions produced by different
/// derivations compare equal after canonicalization in all the regression
/// suites; use it for such comparisons rather than raw structural equality.
pub fn canonicalize(e: &RelExpr) -> RelExpr {
    let e = simplify(e);
    let mut e = if !e.prefix.is_empty() && e.prefix_all(AggOp::Max) {
        normalize_decision_list(&e, &BTreeMap::new()).expr
    } else {
        e
    };
    // Adjacent entries with the same operator commute; order each run by
    // (sort, existing name) so equivalent prefixes line up.
    let mut i = 0;
    while i < e.prefix.len() {
        let mut j = i + 1;
        while j < e.prefix.len() && e.prefix[j].op == e.prefix[i].op {
            j += 1;
        }
        e.prefix[i..j].sort_by(|a, b| (&a.sort, slot_rank(&a.var), &a.var).cmp(&(&b.sort, slot_rank(&b.var), &b.var)));
        i = j;
    }
    // Positional rename: k-th variable of each sort in prefix order gets
    // its canonical slot name. Two-phase to tolerate swaps.
    let forbidden = rename_forbidden(&e);
    let mut slots = SlotRegistry::new(forbidden);
    let mut per_sort: BTreeMap<SortName, usize> = BTreeMap::new();
    let mut phase1 = Substitution::new();
    let mut phase2 = Substitution::new();
    let mut final_names: Vec<String> = Vec::new();
    for (idx, entry) in e.prefix.iter().enumerate() {
        let k = per_sort.entry(entry.sort.clone()).or_insert(0);
        let slot = slots.slot(&entry.sort, *k);
        *k += 1;
        let tmp = format!("__c{idx}");
        phase1.bind(Term::Var(entry.var.clone()), Term::Var(tmp.clone()));
        phase2.bind(Term::Var(tmp), Term::Var(slot.clone()));
        final_names.push(slot);
    }
    if !phase1.is_empty() {
        e = e.map_conditions(&phase1);
        e = e.map_conditions(&phase2);
        for (entry, name) in e.prefix.iter_mut().zip(final_names) {
            entry.var = name;
        }
    }
    // Conditions were rebuilt through the constructors by substitution;
    // order the cases.
    e.cases.sort_by(|a, b| {
        b.value
            .cmp(&a.value)
            .then_with(|| a.condition.to_string().cmp(&b.condition.to_string()))
    });
    e
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::super::{rat, AggOp, Case, PrefixEntry, RelExpr};
    use super::*;
    use crate::logic::Interpretation;

    fn v(n: &str) -> Term {
        Term::Var(n.into())
    }

    fn c(n: &str) -> Term {
        Term::Const(n.into())
    }

    fn atomf(name: &str, args: Vec<Term>) -> Formula {
        Formula::atom(Atom::pred(name, args))
    }

    fn world(boxes: &[&str], trucks: &[&str], cities: &[&str], facts: &[(&str, &[&str])]) -> Interpretation {
        let mut i = Interpretation::default();
        i.objects.insert("Box".into(), boxes.iter().map(|s| s.to_string()).collect());
        i.objects.insert("Truck".into(), trucks.iter().map(|s| s.to_string()).collect());
        i.objects.insert("City".into(), cities.iter().map(|s| s.to_string()).collect());
        for (p, args) in facts {
            i.facts.insert((p.to_string(), args.iter().map(|s| s.to_string()).collect()));
        }
        i
    }

    #[test]
    fn simplify_merges_equal_values_and_drops_unsat() {
        let p = atomf("BIn", vec![v("B"), c("paris")]);
        let e = RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Max, "B", "Box")],
            scale: vec![],
            cases: vec![
                Case::new(p.clone(), rat(1, 1)),
                Case::new(
                    Formula::and_of(vec![p.clone(), p.negate()]),
                    rat(7, 1),
                ),
                Case::new(p.negate(), rat(1, 1)),
            ],
        };
        let s = simplify(&e);
        assert_eq!(s.cases.len(), 1);
        assert_eq!(s.cases[0].condition, Formula::True);
        // The prefix variable became vacuous and is dropped.
        assert!(s.prefix.is_empty());
    }

    #[test]
    fn simplify_vacuous_sum_var_scales() {
        let e = RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Sum, "B", "Box")],
            scale: vec![],
            cases: vec![Case::new(Formula::True, rat(10, 1))],
        };
        let s = simplify(&e);
        assert!(s.prefix.is_empty());
        assert_eq!(s.scale, vec!["Box".to_string()]);
        let w = world(&["b1", "b2", "b3"], &[], &[], &[]);
        assert_eq!(s.evaluate(&w).unwrap(), rat(30, 1));
        // A vacuous product variable must stay.
        let p = RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Product, "B", "Box")],
            scale: vec![],
            cases: vec![Case::new(Formula::True, rat(2, 1))],
        };
        assert_eq!(simplify(&p).prefix.len(), 1);
    }

    /// Per-case equality elimination alone would be unsound; the decision
    /// list restores soundness, verified here on the classic trap: with
    /// cases [X=a : 1; ¬(X=a) : 2] the max over two objects is 2.
    #[test]
    fn normalization_preserves_equality_semantics() {
        let eq = Formula::literal(Atom::eq(v("X"), c("a")), true);
        let e = RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Max, "X", "Obj")],
            scale: vec![],
            cases: vec![Case::new(eq.clone(), rat(1, 1)), Case::new(eq.negate(), rat(2, 1))],
        };
        let n = normalize_decision_list(&e, &BTreeMap::new());
        let mut w = Interpretation::default();
        w.objects.insert("Obj".into(), vec!["a".into(), "b".into()]);
        assert_eq!(n.expr.evaluate(&w).unwrap(), rat(2, 1));
        let mut w1 = Interpretation::default();
        w1.objects.insert("Obj".into(), vec!["a".into()]);
        assert_eq!(n.expr.evaluate(&w1).unwrap(), rat(1, 1));
        // Positive pinning is eliminated outright: [X=a : 2; else 1] → the
        // trigger collapses to true (the constant denotes), keeping max 2.
        let e2 = RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Max, "X", "Obj")],
            scale: vec![],
            cases: vec![Case::new(eq.clone(), rat(2, 1)), Case::new(eq.negate(), rat(1, 1))],
        };
        let n2 = normalize_decision_list(&e2, &BTreeMap::new());
        assert_eq!(n2.expr.evaluate(&w).unwrap(), rat(2, 1));
        assert_eq!(n2.expr.cases.len(), 1);
        assert_eq!(n2.expr.cases[0].value, rat(2, 1));
    }

    /// The assembled Q-function shape: crossing the reward with the scaled
    /// backup leaves phantom intermediate levels whose conditions all carry
    /// a positive `BIn` next to the top level's `¬∃ BIn` context; context
    /// strengthening removes them, leaving the familiar three-case form.
    #[test]
    fn normalization_collapses_phantom_levels() {
        let bin = |t: Term| atomf("BIn", vec![t, c("paris")]);
        let on = atomf("On", vec![v("B2"), v("T")]);
        let tin = atomf("TIn", vec![v("T"), c("paris")]);
        let goal_reach = Formula::and_of(vec![bin(v("B2")).negate(), on.clone(), tin.clone()]);
        // f = reward [BIn(B3):10; else 0], g = scaled backup
        // [BIn(B):9; ¬BIn(B)∧On(B2,T)∧TIn(T,paris):8.1; else 0].
        let f = RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Max, "B3", "Box")],
            scale: vec![],
            cases: vec![
                Case::new(bin(v("B3")), rat(10, 1)),
                Case::new(bin(v("B3")).negate(), rat(0, 1)),
            ],
        };
        let g = RelExpr {
            prefix: vec![
                PrefixEntry::new(AggOp::Max, "B", "Box"),
                PrefixEntry::new(AggOp::Max, "B2", "Box"),
                PrefixEntry::new(AggOp::Max, "T", "Truck"),
            ],
            scale: vec![],
            cases: vec![
                Case::new(bin(v("B")), rat(9, 1)),
                Case::new(
                    Formula::and_of(vec![bin(v("B")).negate(), goal_reach.clone()]),
                    rat(81, 10),
                ),
                Case::new(
                    Formula::and_of(vec![bin(v("B")).negate(), goal_reach.negate()]),
                    rat(0, 1),
                ),
            ],
        };
        let q = super::super::apply_binary(super::super::BinOp::Add, &f, &g, 512).unwrap();
        let n = normalize_decision_list(&q, &BTreeMap::new());
        let values: Vec<Rational> = n.expr.cases.iter().map(|c| c.value.clone()).collect();
        assert_eq!(values, vec![rat(19, 1), rat(81, 10), rat(0, 1)]);
        // One box variable suffices after slot unification.
        let box_vars = n
            .expr
            .prefix
            .iter()
            .filter(|e| e.sort == "Box")
            .count();
        assert_eq!(box_vars, 1);
        // Semantics across a handful of states.
        let states: Vec<Vec<(&str, Vec<&str>)>> = vec![
            vec![("BIn", vec!["b1", "paris"])],
            vec![("On", vec!["b1", "t1"]), ("TIn", vec!["t1", "paris"])],
            vec![("On", vec!["b1", "t1"])],
            vec![],
            vec![
                ("BIn", vec!["b2", "paris"]),
                ("On", vec!["b1", "t1"]),
                ("TIn", vec!["t1", "paris"]),
            ],
        ];
        for facts in states {
            let mut w = world(&["b1", "b2"], &["t1"], &["paris", "rome"], &[]);
            for (p, a) in &facts {
                w.facts
                    .insert((p.to_string(), a.iter().map(|s| s.to_string()).collect()));
            }
            assert_eq!(
                n.expr.evaluate(&w).unwrap(),
                q.evaluate(&w).unwrap(),
                "state {facts:?}"
            );
        }
    }

    #[test]
    fn theta_subsumption_drops_weaker_disjuncts() {
        let bin = Literal::pos(Atom::pred("BIn", vec![v("B"), c("paris")]));
        let on = Literal::pos(Atom::pred("On", vec![v("B"), v("T")]));
        let pat: BTreeSet<Literal> = [bin.clone()].into_iter().collect();
        let target: BTreeSet<Literal> = [
            Literal::pos(Atom::pred("BIn", vec![c("b7"), c("paris")])),
            on.clone(),
        ]
        .into_iter()
        .collect();
        assert!(theta_subsumes(&pat, &target));
        assert!(!theta_subsumes(&target, &pat));
        // Polarity must match.
        let neg: BTreeSet<Literal> = [bin.negated()].into_iter().collect();
        assert!(!theta_subsumes(&pat, &neg));
    }

    #[test]
    fn variable_merging_contracts_redundant_vars() {
        let info: BTreeMap<String, (AggOp, SortName)> = [
            ("B".to_string(), (AggOp::Max, "Box".to_string())),
            ("B2".to_string(), (AggOp::Max, "Box".to_string())),
            ("T".to_string(), (AggOp::Max, "Truck".to_string())),
        ]
        .into();
        // {On(B,T), On(B2,T)} merges one box variable into the other (the
        // first workable candidate in term order: B into B2).
        let mut d = Disjunct {
            lits: [
                Literal::pos(Atom::pred("On", vec![v("B"), v("T")])),
                Literal::pos(Atom::pred("On", vec![v("B2"), v("T")])),
            ]
            .into_iter()
            .collect(),
            binding: [("p".to_string(), v("B"))].into(),
        };
        merge_variables(&mut d, &info);
        assert_eq!(d.lits.len(), 1);
        assert_eq!(d.binding["p"], v("B2"));
    }

    #[test]
    fn canonicalize_identifies_renamed_expressions() {
        let mk = |bvar: &str, tvar: &str| {
            let binp = atomf("BIn", vec![v(bvar), c("paris")]);
            let goal = Formula::and_of(vec![
                binp.negate(),
                atomf("On", vec![v(bvar), v(tvar)]),
                atomf("TIn", vec![v(tvar), c("paris")]),
            ]);
            RelExpr {
                prefix: vec![
                    PrefixEntry::new(AggOp::Max, bvar, "Box"),
                    PrefixEntry::new(AggOp::Max, tvar, "Truck"),
                ],
                scale: vec![],
                cases: vec![
                    Case::new(binp.clone(), rat(19, 1)),
                    Case::new(goal.clone(), rat(81, 10)),
                    Case::new(
                        Formula::and_of(vec![binp.negate(), goal.negate()]),
                        rat(0, 1),
                    ),
                ],
            }
        };
        let a = mk("B1", "T9");
        let b = mk("Z", "W");
        assert_eq!(canonicalize(&a), canonicalize(&b));
    }

    #[test]
    fn canonicalize_is_idempotent_on_examples() {
        let binp = atomf("BIn", vec![v("B"), c("paris")]);
        let goal = Formula::and_of(vec![
            binp.negate(),
            atomf("On", vec![v("B"), v("T")]),
            atomf("TIn", vec![v("T"), c("paris")]),
        ]);
        let e = RelExpr {
            prefix: vec![
                PrefixEntry::new(AggOp::Max, "B", "Box"),
                PrefixEntry::new(AggOp::Max, "T", "Truck"),
            ],
            scale: vec![],
            cases: vec![
                Case::new(binp.clone(), rat(19, 1)),
                Case::new(goal.clone(), rat(81, 10)),
                Case::new(Formula::and_of(vec![binp.negate(), goal.negate()]), rat(0, 1)),
            ],
        };
        let once = canonicalize(&e);
        let twice = canonicalize(&once);
        assert_eq!(once, twice);
    }

    #[test]
    fn normalization_keeps_min_level_as_complement() {
        // Triggers should not accumulate raw negative clutter: the minimum
        // value is reconstructed as the complement of everything above.
        let p = atomf("P", vec![v("X")]);
        let q = atomf("Q", vec![v("X")]);
        let e = RelExpr {
            prefix: vec![PrefixEntry::new(AggOp::Max, "X", "Obj")],
            scale: vec![],
            cases: vec![
                Case::new(Formula::and_of(vec![p.clone(), q.clone()]), rat(5, 1)),
                Case::new(
                    Formula::and_of(vec![p.clone(), q.negate()]),
                    rat(3, 1),
                ),
                Case::new(p.negate(), rat(0, 1)),
            ],
        };
        let n = normalize_decision_list(&e, &BTreeMap::new());
        assert!(n.reduced);
        assert_eq!(n.levels.len(), 3);
        assert!(n.levels[2].is_else);
        // Strengthening trims the middle level: in the ¬∃(P∧Q) branch the
        // ¬Q conjunct is not retained verbatim... the middle trigger stays
        // satisfiable and the complement case carries value 0.
        assert_eq!(n.expr.cases.last().unwrap().value, rat(0, 1));
        let mut w = Interpretation::default();
        w.objects.insert("Obj".into(), vec!["a".into(), "b".into()]);
        for facts in [
            vec![("P", "a"), ("Q", "a")],
            vec![("P", "a")],
            vec![("P", "a"), ("Q", "b")],
            vec![("Q", "b")],
            vec![],
        ] {
            let mut wi = w.clone();
            for (p, a) in &facts {
                wi.facts.insert((p.to_string(), vec![a.to_string()]));
            }
            assert_eq!(
                n.expr.evaluate(&wi).unwrap(),
                e.evaluate(&wi).unwrap(),
                "facts {facts:?}"
            );
        }
    }

    #[test]
    fn binding_tracks_through_elimination() {
        // Tracked parameter variable pinned by an equality: the binding map
        // follows the substitution chain.
        let vb1 = v("VB1");
        let eq = Formula::literal(Atom::eq(vb1.clone(), v("B")), true);
        let e = RelExpr {
            prefix: vec![
                PrefixEntry::new(AggOp::Max, "VB1", "Box"),
                PrefixEntry::new(AggOp::Max, "B", "Box"),
            ],
            scale: vec![],
            cases: vec![
                Case::new(
                    Formula::and_of(vec![eq.clone(), atomf("BIn", vec![v("B"), c("paris")])]),
                    rat(1, 1),
                ),
                Case::new(
                    Formula::and_of(vec![eq.clone(), atomf("BIn", vec![v("B"), c("paris")])])
                        .negate(),
                    rat(0, 1),
                ),
            ],
        };
        let tracked: BTreeMap<String, Term> = [("B1".to_string(), vb1.clone())].into();
        let n = normalize_decision_list(&e, &tracked);
        let lvl = &n.levels[0];
        assert_eq!(lvl.disjuncts.len(), 1);
        let bound = &lvl.disjuncts[0].binding["B1"];
        // VB1 was eliminated into the kept box variable (canonical slot B).
        assert_eq!(bound, &v("B"));
    }
}
