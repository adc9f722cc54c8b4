//! Brute-force ground-truth machinery: state enumeration over ground atoms,
//! ground action application, exact tabular value iteration, and
//! lifted-vs-ground conformance checking.
//!
//! This module is deliberately independent of the lifted solver: successor
//! states come from evaluating each variant's truth-value descriptions atom
//! by atom, and values from flat Bellman backups over every ground state,
//! all in exact rational arithmetic. It is the oracle the lifted results
//! are checked against.

use crate::expr::{Rational, RelExpr};
use crate::logic::{eval_formula, EvalError, Interpretation, SortName};
use crate::model::{tvd_formals, BackupMode, ExogenousEvent, RmdpSpec, Variant};
use num::{One, Zero};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Default cap on the number of ground atoms (2^20 ≈ 1M states).
pub const DEFAULT_ATOM_CAP: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GroundError {
    #[error("instance has {atoms} ground atoms, exceeding the cap of {cap}")]
    AtomCapExceeded { atoms: usize, cap: usize },
    #[error("sort `{sort}` needs at least {need} objects (its constants), got {got}")]
    SizeTooSmall { sort: String, need: usize, got: usize },
    #[error("unknown sort `{0}` in sizes")]
    UnknownSort(String),
    #[error("too many exogenous coins ({0}) to enumerate outcomes")]
    TooManyEvents(usize),
    #[error("value iteration did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// One ground instantiation of an action schema.
#[derive(Debug, Clone)]
pub struct GroundAction {
    /// Index into `spec.actions` / `spec.pstrips`.
    pub schema_index: usize,
    /// Parameter name to object, in schema parameter order.
    pub env: BTreeMap<String, String>,
    /// Human-readable `name(obj, ...)` label.
    pub label: String,
}

/// A finite instantiation of a domain: named objects per sort, a bijective
/// ground-atom index, and the ground action list.
#[derive(Debug, Clone)]
pub struct GroundInstance {
    pub spec: RmdpSpec,
    pub sizes: BTreeMap<SortName, usize>,
    pub objects: BTreeMap<SortName, Vec<String>>,
    /// Atom index: position `i` holds the (predicate, argument objects) pair
    /// represented by bit `i` of a state mask.
    pub atoms: Vec<(String, Vec<String>)>,
    atom_index: BTreeMap<(String, Vec<String>), usize>,
    actions: Vec<GroundAction>,
}

impl GroundInstance {
    /// Build an instance with the given per-sort sizes. Sorts missing from
    /// `sizes` get exactly their declared constants. Object names are the
    /// declared constants followed by generated fillers named from the
    /// sort's lowercased initial (`b1`, `b2`, ...).
    pub fn new(
        spec: &RmdpSpec,
        sizes: &BTreeMap<SortName, usize>,
        atom_cap: usize,
    ) -> Result<GroundInstance, GroundError> {
        for s in sizes.keys() {
            if !spec.sorts.iter().any(|d| &d.name == s) {
                return Err(GroundError::UnknownSort(s.clone()));
            }
        }
        let mut objects: BTreeMap<SortName, Vec<String>> = BTreeMap::new();
        let mut final_sizes: BTreeMap<SortName, usize> = BTreeMap::new();
        for decl in &spec.sorts {
            let n = sizes.get(&decl.name).copied().unwrap_or(decl.constants.len());
            if n < decl.constants.len() {
                return Err(GroundError::SizeTooSmall {
                    sort: decl.name.clone(),
                    need: decl.constants.len(),
                    got: n,
                });
            }
            let mut names = decl.constants.clone();
            let stem: String = decl
                .name
                .chars()
                .next()
                .map(|c| c.to_lowercase().to_string())
                .unwrap_or_else(|| "o".to_string());
            let mut i = names.len();
            while names.len() < n {
                i += 1;
                let cand = format!("{stem}{i}");
                if !names.contains(&cand) {
                    names.push(cand);
                }
            }
            final_sizes.insert(decl.name.clone(), n);
            objects.insert(decl.name.clone(), names);
        }

        let mut atoms = Vec::new();
        for pd in &spec.predicates {
            let mut tuples: Vec<Vec<String>> = vec![Vec::new()];
            for s in &pd.arg_sorts {
                let mut next = Vec::new();
                for t in &tuples {
                    for o in &objects[s] {
                        let mut t2 = t.clone();
                        t2.push(o.clone());
                        next.push(t2);
                    }
                }
                tuples = next;
            }
            for t in tuples {
                atoms.push((pd.name.clone(), t));
            }
        }
        if atoms.len() > atom_cap {
            return Err(GroundError::AtomCapExceeded { atoms: atoms.len(), cap: atom_cap });
        }
        let atom_index =
            atoms.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect::<BTreeMap<_, _>>();

        let mut actions = Vec::new();
        for (si, schema) in spec.actions.iter().enumerate() {
            let mut envs: Vec<BTreeMap<String, String>> = vec![BTreeMap::new()];
            for (n, s) in &schema.parameters {
                let mut next = Vec::new();
                for env in &envs {
                    for o in &objects[s] {
                        let mut e2 = env.clone();
                        e2.insert(n.clone(), o.clone());
                        next.push(e2);
                    }
                }
                envs = next;
            }
            for env in envs {
                let args: Vec<&str> =
                    schema.parameters.iter().map(|(n, _)| env[n].as_str()).collect();
                let label = format!("{}({})", schema.name, args.join(", "));
                actions.push(GroundAction { schema_index: si, env, label });
            }
        }

        Ok(GroundInstance {
            spec: spec.clone(),
            sizes: final_sizes,
            objects,
            atoms,
            atom_index,
            actions,
        })
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_states(&self) -> u64 {
        1u64 << self.atoms.len()
    }

    /// All states in mask order.
    pub fn states(&self) -> impl Iterator<Item = u64> {
        0..self.num_states()
    }

    /// Index of the ground action instantiating schema `name` with `args`
    /// (in schema parameter order), if that instantiation exists here.
    pub fn action_index(&self, name: &str, args: &[String]) -> Option<usize> {
        self.actions.iter().position(|ga| {
            let schema = &self.spec.actions[ga.schema_index];
            schema.name == name
                && schema.parameters.len() == args.len()
                && schema.parameters.iter().zip(args).all(|((p, _), a)| &ga.env[p] == a)
        })
    }

    pub fn actions(&self) -> &[GroundAction] {
        &self.actions
    }

    pub fn atom_bit(&self, pred: &str, args: &[&str]) -> Option<usize> {
        let key = (pred.to_string(), args.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        self.atom_index.get(&key).copied()
    }

    /// Mask with the given atoms set.
    pub fn state_of(&self, facts: &[(&str, &[&str])]) -> u64 {
        let mut s = 0u64;
        for (p, args) in facts {
            let bit = self
                .atom_bit(p, args)
                .unwrap_or_else(|| panic!("unknown ground atom {p}({args:?})"));
            s |= 1 << bit;
        }
        s
    }

    pub fn interpretation(&self, s: u64) -> Interpretation {
        let facts: BTreeSet<(String, Vec<String>)> = self
            .atoms
            .iter()
            .enumerate()
            .filter(|(i, _)| s & (1 << i) != 0)
            .map(|(_, a)| a.clone())
            .collect();
        Interpretation { objects: self.objects.clone(), facts }
    }

    /// Pretty `{atom, atom, ...}` rendering of a state mask.
    pub fn state_text(&self, s: u64) -> String {
        let parts: Vec<String> = self
            .atoms
            .iter()
            .enumerate()
            .filter(|(i, _)| s & (1 << i) != 0)
            .map(|(_, (p, args))| format!("{p}({})", args.join(", ")))
            .collect();
        format!("{{{}}}", parts.join(", "))
    }

    pub fn evaluate_expr(&self, e: &RelExpr, s: u64) -> Result<Rational, EvalError> {
        e.evaluate(&self.interpretation(s))
    }

    pub fn reward_at(&self, s: u64) -> Result<Rational, EvalError> {
        self.evaluate_expr(&self.spec.reward.clone(), s)
    }

    /// Successor distribution of the agent's action alone (no exogenous
    /// events), as a merged state→probability map.
    pub fn agent_step(
        &self,
        s: u64,
        action: usize,
    ) -> Result<BTreeMap<u64, Rational>, GroundError> {
        let ga = &self.actions[action];
        let schema = &self.spec.actions[ga.schema_index];
        let interp = self.interpretation(s);
        let env: BTreeMap<String, String> = ga.env.clone();
        let mut out: BTreeMap<u64, Rational> = BTreeMap::new();
        for variant in &schema.variants {
            let p = variant.choice_prob.evaluate_with_env(&interp, &env)?;
            if p.is_zero() {
                continue;
            }
            let succ = self.tvd_successor(s, variant, &env)?;
            *out.entry(succ).or_insert_with(Rational::zero) += p;
        }
        Ok(out)
    }

    /// Deterministic successor under one specific variant of a ground
    /// action, ignoring the variant's probability of being chosen.
    pub fn variant_successor(
        &self,
        s: u64,
        action: usize,
        variant: usize,
    ) -> Result<u64, GroundError> {
        let ga = &self.actions[action];
        let schema = &self.spec.actions[ga.schema_index];
        self.tvd_successor(s, &schema.variants[variant], &ga.env)
    }

    /// Evaluate every atom's truth-value diagram under `env` to produce the
    /// deterministic successor state of `variant`.
    fn tvd_successor(
        &self,
        s: u64,
        variant: &Variant,
        env: &BTreeMap<String, String>,
    ) -> Result<u64, GroundError> {
        let interp = self.interpretation(s);
        let mut succ = 0u64;
        for (i, (pred, args)) in self.atoms.iter().enumerate() {
            let tvd = &variant.tvds[pred];
            let mut env2 = env.clone();
            for (formal, obj) in tvd_formals(args.len()).iter().zip(args) {
                env2.insert(formal.name().to_string(), obj.clone());
            }
            if eval_formula(tvd, &interp, &env2)? {
                succ |= 1 << i;
            }
        }
        Ok(succ)
    }

    /// Apply one object's exogenous event outcome (fired) to a state.
    fn apply_event(&self, s: u64, event: &ExogenousEvent, object: &str) -> Result<u64, GroundError> {
        if event.prob.is_zero() {
            return Ok(s);
        }
        // The firing variant is always compiled first.
        let env = BTreeMap::from([(event.var.clone(), object.to_string())]);
        self.tvd_successor(s, &event.variants[0], &env)
    }

    /// Compose a distribution with the independent per-object exogenous
    /// events (applied in deterministic order; an object's event only
    /// touches atoms mentioning that object, so firing orders agree).
    fn compose_exogenous(
        &self,
        dist: BTreeMap<u64, Rational>,
    ) -> Result<BTreeMap<u64, Rational>, GroundError> {
        if self.spec.exogenous.is_empty() {
            return Ok(dist);
        }
        let mut coins: Vec<(&ExogenousEvent, &str)> = Vec::new();
        for ev in &self.spec.exogenous {
            for o in &self.objects[&ev.sort] {
                coins.push((ev, o));
            }
        }
        if coins.len() > 16 {
            return Err(GroundError::TooManyEvents(coins.len()));
        }
        let mut out: BTreeMap<u64, Rational> = BTreeMap::new();
        for (s1, p1) in dist {
            for subset in 0u32..(1u32 << coins.len()) {
                let mut p = p1.clone();
                let mut s2 = s1;
                for (ci, (ev, obj)) in coins.iter().enumerate() {
                    if subset & (1 << ci) != 0 {
                        p *= ev.prob.clone();
                        s2 = self.apply_event(s2, ev, obj)?;
                    } else {
                        p *= Rational::one() - ev.prob.clone();
                    }
                }
                if !p.is_zero() {
                    *out.entry(s2).or_insert_with(Rational::zero) += p;
                }
            }
        }
        Ok(out)
    }

    /// Full successor distribution: agent action then exogenous events.
    pub fn step(&self, s: u64, action: usize) -> Result<BTreeMap<u64, Rational>, GroundError> {
        self.compose_exogenous(self.agent_step(s, action)?)
    }
}

/// Exact finite-horizon value iteration. Returns values per horizon
/// `0..=horizon` (so the result has `horizon + 1` rows).
///
/// Accumulate mode: `V_{k+1}(s) = max_a { R(s) + γ Σ_{s'} P(s'|s,a) V_k(s') }`.
/// Goal-terminal mode: `V_0 = R` and `V_{k+1}(s) = max_a Σ P V_k` (undiscounted
/// expectation of eventually-reached reward, no accumulation).
pub fn tabular_vi(
    gi: &GroundInstance,
    horizon: usize,
    mode: BackupMode,
) -> Result<Vec<Vec<Rational>>, GroundError> {
    let n = gi.num_states();
    let mut rewards = Vec::with_capacity(n as usize);
    for s in gi.states() {
        rewards.push(gi.reward_at(s)?);
    }
    let mut rows: Vec<Vec<Rational>> = vec![rewards.clone()];
    // Successor distributions are state/action-dependent but horizon-free;
    // compute once.
    let mut dists: Vec<Vec<BTreeMap<u64, Rational>>> = Vec::with_capacity(n as usize);
    for s in gi.states() {
        let mut per_action = Vec::with_capacity(gi.actions.len());
        for a in 0..gi.actions.len() {
            per_action.push(gi.step(s, a)?);
        }
        dists.push(per_action);
    }
    for _ in 0..horizon {
        let prev = rows.last().unwrap();
        let mut next = Vec::with_capacity(n as usize);
        for s in gi.states() {
            let best = dists[s as usize]
                .iter()
                .map(|d| {
                    d.iter()
                        .map(|(s2, p)| p.clone() * prev[*s2 as usize].clone())
                        .fold(Rational::zero(), |a, b| a + b)
                })
                .max()
                .expect("at least one action");
            let v = match mode {
                BackupMode::Accumulate => {
                    rewards[s as usize].clone() + gi.spec.discount.clone() * best
                }
                BackupMode::GoalTerminal => best,
            };
            next.push(v);
        }
        rows.push(next);
    }
    Ok(rows)
}

/// Value iteration until the sup-norm change drops below `eps`; returns the
/// converged values and the number of sweeps performed.
pub fn tabular_vi_converged(
    gi: &GroundInstance,
    mode: BackupMode,
    eps: &Rational,
    max_sweeps: usize,
) -> Result<(Vec<Rational>, usize), GroundError> {
    let mut rows = tabular_vi(gi, 0, mode)?;
    let mut current = rows.pop().unwrap();
    for sweep in 1..=max_sweeps {
        let gi_rows = tabular_vi_step(gi, &current, mode)?;
        let delta = current
            .iter()
            .zip(&gi_rows)
            .map(|(a, b)| {
                let d = a.clone() - b.clone();
                if d < Rational::zero() {
                    -d
                } else {
                    d
                }
            })
            .max()
            .unwrap_or_else(Rational::zero);
        current = gi_rows;
        if &delta < eps {
            return Ok((current, sweep));
        }
    }
    Err(GroundError::NoConvergence(max_sweeps))
}

/// One Bellman sweep from the given value vector.
pub fn tabular_vi_step(
    gi: &GroundInstance,
    prev: &[Rational],
    mode: BackupMode,
) -> Result<Vec<Rational>, GroundError> {
    let mut next = Vec::with_capacity(prev.len());
    for s in gi.states() {
        let mut best: Option<Rational> = None;
        for a in 0..gi.actions.len() {
            let q = gi
                .step(s, a)?
                .into_iter()
                .map(|(s2, p)| p * prev[s2 as usize].clone())
                .fold(Rational::zero(), |x, y| x + y);
            best = Some(match best {
                None => q,
                Some(b) => b.max(q),
            });
        }
        let best = best.expect("at least one action");
        let v = match mode {
            BackupMode::Accumulate => gi.reward_at(s)? + gi.spec.discount.clone() * best,
            BackupMode::GoalTerminal => best,
        };
        next.push(v);
    }
    Ok(next)
}

/// Iteratively evaluate a fixed policy (a map from state to action index)
/// under accumulate semantics until the sup-norm change drops below `eps`.
pub fn policy_value(
    gi: &GroundInstance,
    choose: impl Fn(u64) -> usize,
    eps: &Rational,
    max_sweeps: usize,
) -> Result<Vec<Rational>, GroundError> {
    let n = gi.num_states() as usize;
    let mut rewards = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n);
    for s in gi.states() {
        rewards.push(gi.reward_at(s)?);
        dists.push(gi.step(s, choose(s))?);
    }
    let mut current = rewards.clone();
    for _ in 0..max_sweeps {
        let mut next = Vec::with_capacity(n);
        for s in 0..n {
            let exp = dists[s]
                .iter()
                .map(|(s2, p)| p.clone() * current[*s2 as usize].clone())
                .fold(Rational::zero(), |a, b| a + b);
            next.push(rewards[s].clone() + gi.spec.discount.clone() * exp);
        }
        let delta = current
            .iter()
            .zip(&next)
            .map(|(a, b)| {
                let d = a.clone() - b.clone();
                if d < Rational::zero() {
                    -d
                } else {
                    d
                }
            })
            .max()
            .unwrap_or_else(Rational::zero);
        current = next;
        if &delta < eps {
            return Ok(current);
        }
    }
    Err(GroundError::NoConvergence(max_sweeps))
}

/// Per-state comparison row of a conformance check.
#[derive(Debug, Clone)]
pub struct ConformanceRow {
    pub state: u64,
    pub lifted: Rational,
    pub ground: Rational,
    /// lifted − ground.
    pub delta: Rational,
}

/// Result of comparing a lifted value expression against tabular values on
/// every ground state.
#[derive(Debug, Clone)]
pub struct ConformanceReport {
    pub horizon: Option<usize>,
    pub tolerance: Rational,
    pub max_abs_deviation: Rational,
    /// States where |lifted − ground| exceeds the tolerance.
    pub mismatches: usize,
    /// States where lifted exceeds ground by more than the tolerance
    /// (violations when the lifted value is supposed to be a lower bound).
    pub lifted_above_ground: usize,
    pub rows: Vec<ConformanceRow>,
}

impl ConformanceReport {
    /// Machine-readable table: state mask, lifted, ground, delta.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("state\tlifted\tground\tdelta\n");
        for r in &self.rows {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.state, r.lifted, r.ground, r.delta));
        }
        out
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let horizon = match self.horizon {
            Some(h) => format!("horizon {h}"),
            None => "converged".to_string(),
        };
        write!(
            f,
            "{horizon}: {} states, max |lifted - ground| = {}, {} mismatch(es) above {}, {} state(s) with lifted > ground",
            self.rows.len(),
            self.max_abs_deviation,
            self.mismatches,
            self.tolerance,
            self.lifted_above_ground
        )
    }
}

/// Compare a lifted value expression against explicit per-state ground
/// values.
pub fn conformance_against(
    gi: &GroundInstance,
    lifted: &RelExpr,
    ground: &[Rational],
    tolerance: &Rational,
    horizon: Option<usize>,
) -> Result<ConformanceReport, GroundError> {
    let mut rows = Vec::with_capacity(ground.len());
    let mut max_abs = Rational::zero();
    let mut mismatches = 0usize;
    let mut above = 0usize;
    for s in gi.states() {
        let lv = gi.evaluate_expr(lifted, s)?;
        let gv = ground[s as usize].clone();
        let delta = lv.clone() - gv.clone();
        let abs = if delta < Rational::zero() { -delta.clone() } else { delta.clone() };
        if abs > max_abs {
            max_abs = abs.clone();
        }
        if &abs > tolerance {
            mismatches += 1;
        }
        if &delta > tolerance {
            above += 1;
        }
        rows.push(ConformanceRow { state: s, lifted: lv, ground: gv, delta });
    }
    Ok(ConformanceReport {
        horizon,
        tolerance: tolerance.clone(),
        max_abs_deviation: max_abs,
        mismatches,
        lifted_above_ground: above,
        rows,
    })
}

/// Evaluate a lifted value expression on every ground state and compare with
/// exact tabular value iteration at the same horizon and mode.
pub fn conformance_check(
    gi: &GroundInstance,
    lifted: &RelExpr,
    horizon: usize,
    mode: BackupMode,
    tolerance: &Rational,
) -> Result<ConformanceReport, GroundError> {
    let vi = tabular_vi(gi, horizon, mode)?;
    conformance_against(gi, lifted, &vi[horizon], tolerance, Some(horizon))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::rat;
    use crate::model::{fixtures, parse_domain};
    use num::Signed;

    fn sizes(list: &[(&str, usize)]) -> BTreeMap<String, usize> {
        list.iter().map(|(s, n)| (s.to_string(), *n)).collect()
    }

    fn boxworld(b: usize, t: usize, c: usize) -> GroundInstance {
        let spec = parse_domain(fixtures::BOXWORLD).unwrap();
        GroundInstance::new(
            &spec,
            &sizes(&[("Box", b), ("Truck", t), ("City", c)]),
            DEFAULT_ATOM_CAP,
        )
        .unwrap()
    }

    #[test]
    fn atom_and_state_counts() {
        let gi = boxworld(2, 1, 2);
        // 2·2 BIn + 1·2 TIn + 2·1 On = 8 atoms, 256 states.
        assert_eq!(gi.num_atoms(), 8);
        assert_eq!(gi.num_states(), 256);
        assert_eq!(gi.objects["Box"], vec!["b1", "b2"]);
        assert_eq!(gi.objects["City"], vec!["paris", "c2"]);
        assert_eq!(gi.objects["Truck"], vec!["t1"]);

        // No predicates → a single state.
        let tiny = parse_domain(
            "sort S\naction wait() { prob { true : 1 } }\nreward { true : 5 }\ndiscount 1/2\n",
        )
        .unwrap();
        let gi0 = GroundInstance::new(&tiny, &sizes(&[("S", 1)]), DEFAULT_ATOM_CAP).unwrap();
        assert_eq!(gi0.num_atoms(), 0);
        assert_eq!(gi0.num_states(), 1);

        // One unary predicate over two objects → 4 states.
        let unary = parse_domain(
            "sort S\npred P(S)\naction wait() { prob { true : 1 } }\nreward { true : 5 }\ndiscount 1/2\n",
        )
        .unwrap();
        let gi1 = GroundInstance::new(&unary, &sizes(&[("S", 2)]), DEFAULT_ATOM_CAP).unwrap();
        assert_eq!(gi1.num_states(), 4);

        // Atom cap enforced.
        let err = GroundInstance::new(&boxworld(2, 1, 2).spec, &sizes(&[("Box", 4), ("Truck", 4), ("City", 4)]), 20)
            .unwrap_err();
        assert!(matches!(err, GroundError::AtomCapExceeded { .. }));
    }

    #[test]
    fn unload_distribution_matches_worked_values() {
        let gi = boxworld(1, 1, 2);
        let s = gi.state_of(&[("On", &["b1", "t1"]), ("TIn", &["t1", "paris"])]);
        let action = gi
            .actions()
            .iter()
            .position(|a| a.label == "unload(b1, t1, paris)")
            .unwrap();
        let dist = gi.step(s, action).unwrap();
        let success = gi.state_of(&[("BIn", &["b1", "paris"]), ("TIn", &["t1", "paris"])]);
        assert_eq!(dist.len(), 2);
        assert_eq!(dist[&success], rat(9, 10));
        assert_eq!(dist[&s], rat(1, 10));

        // noop from any state is the identity distribution.
        let noop = gi.actions().iter().position(|a| a.label == "noop()").unwrap();
        for state in [0u64, s, success] {
            let d = gi.step(state, noop).unwrap();
            assert_eq!(d.len(), 1);
            assert_eq!(d[&state], rat(1, 1));
        }
    }

    #[test]
    fn exogenous_composition_probabilities() {
        let spec = parse_domain(fixtures::BOXWORLD_ADDITIVE).unwrap();
        let gi = GroundInstance::new(
            &spec,
            &sizes(&[("Box", 2), ("Truck", 1), ("City", 2)]),
            DEFAULT_ATOM_CAP,
        )
        .unwrap();
        let s = gi.state_of(&[("BIn", &["b1", "paris"]), ("BIn", &["b2", "paris"])]);
        let noop = gi.actions().iter().position(|a| a.label == "noop()").unwrap();
        let dist = gi.step(s, noop).unwrap();
        let only_b1 = gi.state_of(&[("BIn", &["b1", "paris"])]);
        let only_b2 = gi.state_of(&[("BIn", &["b2", "paris"])]);
        assert_eq!(dist.len(), 4);
        assert_eq!(dist[&s], rat(16, 25));
        assert_eq!(dist[&only_b2], rat(4, 25)); // b1 disappeared
        assert_eq!(dist[&only_b1], rat(4, 25)); // b2 disappeared
        assert_eq!(dist[&0], rat(1, 25));
    }

    #[test]
    fn step_probabilities_sum_to_one_everywhere() {
        for text in [fixtures::BOXWORLD, fixtures::BOXWORLD_ADDITIVE] {
            let spec = parse_domain(text).unwrap();
            let gi = GroundInstance::new(
                &spec,
                &sizes(&[("Box", 1), ("Truck", 1), ("City", 2)]),
                DEFAULT_ATOM_CAP,
            )
            .unwrap();
            for s in gi.states() {
                for a in 0..gi.actions().len() {
                    let total: Rational =
                        gi.step(s, a).unwrap().values().cloned().fold(rat(0, 1), |x, y| x + y);
                    assert!(total.is_one(), "state {s} action {a}: {total}");
                }
            }
        }
    }

    #[test]
    fn agent_step_agrees_with_direct_pstrips_simulation() {
        let gi = boxworld(2, 1, 2);
        for s in gi.states() {
            let interp = gi.interpretation(s);
            for (ai, ga) in gi.actions().iter().enumerate() {
                let via_tvd = gi.agent_step(s, ai).unwrap();
                // Direct semantics: evaluate the success probability, apply
                // delete-then-add on success, stay put on failure.
                let pstrips = &gi.spec.pstrips[ga.schema_index];
                let mut succ_p = rat(0, 1);
                for (cond, p) in &pstrips.success_prob_cases {
                    if eval_formula(cond, &interp, &ga.env).unwrap() {
                        succ_p = p.clone();
                        break;
                    }
                }
                let mut direct: BTreeMap<u64, Rational> = BTreeMap::new();
                if !succ_p.is_zero() {
                    let mut s2 = s;
                    for atom in &pstrips.delete_list {
                        let crate::logic::Atom::Pred { name, args } = atom else { unreachable!() };
                        let ground: Vec<String> = args
                            .iter()
                            .map(|t| crate::logic::denote(t, &ga.env).unwrap())
                            .collect();
                        let refs: Vec<&str> = ground.iter().map(|s| s.as_str()).collect();
                        s2 &= !(1 << gi.atom_bit(name, &refs).unwrap());
                    }
                    for atom in &pstrips.add_list {
                        let crate::logic::Atom::Pred { name, args } = atom else { unreachable!() };
                        let ground: Vec<String> = args
                            .iter()
                            .map(|t| crate::logic::denote(t, &ga.env).unwrap())
                            .collect();
                        let refs: Vec<&str> = ground.iter().map(|s| s.as_str()).collect();
                        s2 |= 1 << gi.atom_bit(name, &refs).unwrap();
                    }
                    *direct.entry(s2).or_insert_with(|| rat(0, 1)) += succ_p.clone();
                }
                let stay = rat(1, 1) - succ_p;
                if !stay.is_zero() {
                    *direct.entry(s).or_insert_with(|| rat(0, 1)) += stay;
                }
                assert_eq!(via_tvd, direct, "state {} action {}", gi.state_text(s), ga.label);
            }
        }
    }

    #[test]
    fn goal_mode_horizon_one_matches_generalized_query_values() {
        let gi = boxworld(1, 1, 2);
        let vi = tabular_vi(&gi, 1, BackupMode::GoalTerminal).unwrap();
        // A box already in paris is worth 10 at horizon 1.
        let s_goal = gi.state_of(&[("BIn", &["b1", "paris"])]);
        assert_eq!(vi[1][s_goal as usize], rat(10, 1));
        // A box on a truck in paris is worth 9 (0.9 · 10 via unload).
        let s_near = gi.state_of(&[("On", &["b1", "t1"]), ("TIn", &["t1", "paris"])]);
        assert_eq!(vi[1][s_near as usize], rat(9, 1));
        // An empty state is worth 0.
        assert_eq!(vi[1][0], rat(0, 1));
    }

    #[test]
    fn accumulate_mode_noop_only_is_geometric() {
        let text = "sort S [ a ]\npred P(S)\naction wait() { prob { true : 1 } }\nreward [max X] { P(X) : 10 ; else : 0 }\ndiscount 9/10\n";
        let spec = parse_domain(text).unwrap();
        let gi = GroundInstance::new(&spec, &sizes(&[("S", 1)]), DEFAULT_ATOM_CAP).unwrap();
        let vi = tabular_vi(&gi, 3, BackupMode::Accumulate).unwrap();
        let s = gi.state_of(&[("P", &["a"])]);
        // V_k(s) = R(s) (1 − γ^{k+1}) / (1 − γ).
        for k in 0..=3usize {
            let g = rat(9, 10);
            let expect = rat(10, 1) * (rat(1, 1) - g.clone().pow((k + 1) as i32))
                / (rat(1, 1) - g);
            assert_eq!(vi[k][s as usize], expect, "horizon {k}");
        }
    }

    #[test]
    fn goal_values_monotone_and_accumulate_bounded() {
        let gi = boxworld(1, 1, 2);
        let goal = tabular_vi(&gi, 3, BackupMode::GoalTerminal).unwrap();
        for k in 0..3 {
            for s in gi.states() {
                assert!(
                    goal[k][s as usize] <= goal[k + 1][s as usize],
                    "goal values must be monotone in horizon at state {s}"
                );
            }
        }
        let acc = tabular_vi(&gi, 3, BackupMode::Accumulate).unwrap();
        let bound = rat(10, 1) / (rat(1, 1) - rat(9, 10)); // R_max/(1−γ) = 100
        for row in &acc {
            for v in row {
                assert!(v <= &bound && v >= &rat(0, 1));
            }
        }
    }

    #[test]
    fn convergence_and_policy_evaluation_helpers() {
        let gi = boxworld(1, 1, 2);
        let eps = rat(1, 1000);
        let (converged, sweeps) =
            tabular_vi_converged(&gi, BackupMode::Accumulate, &eps, 500).unwrap();
        assert!(sweeps > 10, "discount 9/10 needs many sweeps for 1e-3");
        // One more sweep changes nothing beyond eps.
        let step = tabular_vi_step(&gi, &converged, BackupMode::Accumulate).unwrap();
        for (a, b) in converged.iter().zip(&step) {
            let d = if a > b { a.clone() - b.clone() } else { b.clone() - a.clone() };
            assert!(d < eps);
        }
        // Evaluating the noop-everywhere policy: V = R/(1−γ) at fixed states.
        let noop = gi.actions().iter().position(|a| a.label == "noop()").unwrap();
        let pv = policy_value(&gi, |_| noop, &eps, 500).unwrap();
        let s_goal = gi.state_of(&[("BIn", &["b1", "paris"])]);
        let expect = rat(100, 1); // 10/(1-9/10)
        let d = (pv[s_goal as usize].clone() - expect).abs();
        assert!(d < rat(1, 10), "noop policy value ≈ 100, got {}", pv[s_goal as usize]);
    }

    #[test]
    fn conformance_detects_perturbations() {
        let gi = boxworld(1, 1, 2);
        // The reward itself conforms exactly at horizon 0.
        let report =
            conformance_check(&gi, &gi.spec.reward.clone(), 0, BackupMode::Accumulate, &rat(0, 1))
                .unwrap();
        assert_eq!(report.max_abs_deviation, rat(0, 1));
        assert_eq!(report.mismatches, 0);
        assert_eq!(report.lifted_above_ground, 0);
        // Perturbing one case value is detected.
        let mut bad = gi.spec.reward.clone();
        bad.cases[0].value += rat(1, 2);
        let report =
            conformance_check(&gi, &bad, 0, BackupMode::Accumulate, &rat(0, 1)).unwrap();
        assert!(report.mismatches > 0);
        assert!(report.lifted_above_ground > 0);
        assert_eq!(report.max_abs_deviation, rat(1, 2));
        // The text and table renderings carry the numbers.
        assert!(report.to_string().contains("max |lifted - ground| = 1/2"));
        assert!(report.to_tsv().lines().count() == 1 + gi.num_states() as usize);
    }
}
