//! Text format for relational expressions.
//!
//! Printed form (also the parse grammar, round-trippable):
//!
//! ```text
//! |Box| * [max B, avg B2] { BIn(B2, paris) : 8 ; B2 = B & On(B, T) : 36/5 ; else : 0 }
//! ```
//!
//! - Optional `|Sort| *` factors render the scale.
//! - The bracketed prefix lists `op var` entries; a `: Sort` annotation is
//!   accepted anywhere and required only when the sort cannot be inferred
//!   from predicate positions (the printer adds it exactly then).
//! - Cases are `formula : value` separated by `;`. Values are exact
//!   rationals (`19`, `81/10`); decimal literals like `8.1` are accepted on
//!   input. The keyword `else` in the final case denotes the complement of
//!   the previous conditions; the printer uses it whenever the final case
//!   is semantically that complement.
//! - Formulas accept infix `&`, `|`, `~`, `=`, `!=`, parentheses, `true`,
//!   `false`, and the function forms `and(...)`, `or(...)` that the
//!   canonical printer emits. `$name` is an action parameter; a bare name
//!   is a constant if declared in the [`SortContext`], otherwise a
//!   variable.
//!
//! Parsing needs a [`SortContext`] (predicate signatures plus declared
//! constants) because the format does not annotate sorts at use sites.

use super::{AggOp, Case, PrefixEntry, Rational, RelExpr};
use crate::logic::{entails, Atom, Formula, SortName, Term};
use num::BigInt;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Predicate signatures and declared constants used to resolve names and
/// infer variable sorts while parsing.
#[derive(Debug, Clone, Default)]
pub struct SortContext {
    /// Predicate name to argument sorts.
    pub predicates: BTreeMap<String, Vec<SortName>>,
    /// Declared constant name to its sort.
    pub constants: BTreeMap<String, SortName>,
}

/// Parse error with 1-based position information.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {col}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl ParseError {
    pub(crate) fn at(pos: (usize, usize), msg: impl Into<String>) -> Self {
        ParseError { line: pos.0, col: pos.1, msg: msg.into() }
    }
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

impl fmt::Display for RelExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.scale {
            write!(f, "|{s}| * ")?;
        }
        // A variable sort is recoverable by the parser when the variable
        // appears in a predicate argument position; annotate the others.
        let mut inferrable: BTreeSet<String> = BTreeSet::new();
        for case in &self.cases {
            for atom in case.condition.atoms() {
                if let Atom::Pred { args, .. } = &atom {
                    for t in args {
                        if let Term::Var(v) = t {
                            inferrable.insert(v.clone());
                        }
                    }
                }
            }
        }
        if !self.prefix.is_empty() {
            write!(f, "[")?;
            for (i, e) in self.prefix.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{} {}", e.op, e.var)?;
                if !inferrable.contains(&e.var) {
                    write!(f, ": {}", e.sort)?;
                }
            }
            write!(f, "] ")?;
        }
        write!(f, "{{ ")?;
        let else_at = else_index(self);
        for (i, case) in self.cases.iter().enumerate() {
            if i > 0 {
                write!(f, " ; ")?;
            }
            if Some(i) == else_at {
                write!(f, "else")?;
            } else {
                write!(f, "{}", case.condition)?;
            }
            write!(f, " : {}", case.value)?;
        }
        write!(f, " }}")
    }
}

/// Index of the final case if it is semantically the complement of the
/// disjunction of the previous conditions (then it prints as `else`).
fn else_index(e: &RelExpr) -> Option<usize> {
    if e.cases.len() < 2 {
        return None;
    }
    let last = e.cases.len() - 1;
    let complement = Formula::or_of(
        e.cases[..last].iter().map(|c| c.condition.clone()).collect(),
    )
    .negate();
    let cond = &e.cases[last].condition;
    (entails(cond, &complement) && entails(&complement, cond)).then_some(last)
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Number(String),
    Param(String),
    Punct(char),
    NotEq,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Number(s) => write!(f, "number `{s}`"),
            Tok::Param(s) => write!(f, "`${s}`"),
            Tok::Punct(c) => write!(f, "`{c}`"),
            Tok::NotEq => write!(f, "`!=`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

fn lex(input: &str) -> Result<Vec<(Tok, (usize, usize))>, ParseError> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = input.chars().peekable();
    while let Some(&c) = chars.peek() {
        let pos = (line, col);
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            '#' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                    col += 1;
                }
            }
            '!' => {
                chars.next();
                col += 1;
                if chars.peek() == Some(&'=') {
                    chars.next();
                    col += 1;
                    out.push((Tok::NotEq, pos));
                } else {
                    return Err(ParseError::at(pos, "expected `=` after `!`"));
                }
            }
            '$' => {
                chars.next();
                col += 1;
                let mut name = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_alphanumeric() || c == '_' {
                        name.push(c);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                if name.is_empty() {
                    return Err(ParseError::at(pos, "expected a name after `$`"));
                }
                out.push((Tok::Param(name), pos));
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut name = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_alphanumeric() || c == '_' {
                        name.push(c);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                out.push((Tok::Ident(name), pos));
            }
            c if c.is_ascii_digit() || c == '-' => {
                let mut num = String::new();
                if c == '-' {
                    num.push(c);
                    chars.next();
                    col += 1;
                    if !chars.peek().is_some_and(|c| c.is_ascii_digit()) {
                        return Err(ParseError::at(pos, "expected digits after `-`"));
                    }
                }
                let mut saw_dot = false;
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_digit() || (c == '.' && !saw_dot) {
                        saw_dot |= c == '.';
                        num.push(c);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                out.push((Tok::Number(num), pos));
            }
            '|' | '*' | '[' | ']' | '{' | '}' | '(' | ')' | ',' | ';' | ':' | '&' | '~'
            | '=' | '/' => {
                chars.next();
                col += 1;
                out.push((Tok::Punct(c), pos));
            }
            other => {
                return Err(ParseError::at(pos, format!("unexpected character `{other}`")));
            }
        }
    }
    out.push((Tok::Eof, (line, col)));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

pub(crate) struct Parser {
    toks: Vec<(Tok, (usize, usize))>,
    pos: usize,
    /// Known predicates and constants; the domain parser grows this as
    /// declarations are read.
    pub(crate) ctx: SortContext,
    /// Names to read as action parameters (with sorts when known).
    pub(crate) params: BTreeMap<String, SortName>,
    /// Inferred variable sorts (from predicate positions).
    var_sorts: BTreeMap<String, SortName>,
    /// First-use position of each variable, for error reporting.
    var_pos: BTreeMap<String, (usize, usize)>,
    /// Equalities involving variables, for sort propagation.
    eq_terms: Vec<(Term, Term, (usize, usize))>,
}

impl Parser {
    pub(crate) fn new(
        input: &str,
        ctx: SortContext,
        params: BTreeMap<String, SortName>,
    ) -> Result<Self, ParseError> {
        Ok(Parser {
            toks: lex(input)?,
            pos: 0,
            ctx,
            params,
            var_sorts: BTreeMap::new(),
            var_pos: BTreeMap::new(),
            eq_terms: Vec::new(),
        })
    }

    /// Reset per-fragment variable-sort inference (used between independent
    /// embedded fragments of a domain file).
    pub(crate) fn clear_inference(&mut self) {
        self.var_sorts.clear();
        self.var_pos.clear();
        self.eq_terms.clear();
    }

    /// Sort inferred for a variable in the current fragment, if any.
    pub(crate) fn inferred_var_sort(&self, name: &str) -> Option<&SortName> {
        self.var_sorts.get(name)
    }

    pub(crate) fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)].0
    }

    pub(crate) fn here(&self) -> (usize, usize) {
        self.toks[self.pos].1
    }

    pub(crate) fn next(&mut self) -> (Tok, (usize, usize)) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    pub(crate) fn expect_punct(&mut self, c: char) -> Result<(), ParseError> {
        let (t, pos) = self.next();
        if t == Tok::Punct(c) {
            Ok(())
        } else {
            Err(ParseError::at(pos, format!("expected `{c}`, found {t}")))
        }
    }

    pub(crate) fn eat_punct(&mut self, c: char) -> bool {
        if self.peek() == &Tok::Punct(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub(crate) fn expect_ident(&mut self) -> Result<(String, (usize, usize)), ParseError> {
        let (t, pos) = self.next();
        match t {
            Tok::Ident(s) => Ok((s, pos)),
            other => Err(ParseError::at(pos, format!("expected a name, found {other}"))),
        }
    }

    /// True when the next token is the given bare name.
    pub(crate) fn at_keyword(&self, word: &str) -> bool {
        matches!(self.peek(), Tok::Ident(w) if w == word)
    }

    pub(crate) fn at_eof(&self) -> bool {
        self.peek() == &Tok::Eof
    }

    // -- expressions --------------------------------------------------------

    pub(crate) fn expression(&mut self) -> Result<RelExpr, ParseError> {
        let mut scale: Vec<SortName> = Vec::new();
        while self.peek() == &Tok::Punct('|') {
            self.expect_punct('|')?;
            let (sort, _) = self.expect_ident()?;
            self.expect_punct('|')?;
            self.expect_punct('*')?;
            scale.push(sort);
        }
        let mut prefix: Vec<PrefixEntry> = Vec::new();
        if self.eat_punct('[') {
            loop {
                let (op_name, op_pos) = self.expect_ident()?;
                let op = AggOp::from_name(&op_name).ok_or_else(|| {
                    ParseError::at(op_pos, format!("unknown aggregation operator `{op_name}`"))
                })?;
                let (var, var_pos) = self.expect_ident()?;
                if prefix.iter().any(|e| e.var == var) {
                    return Err(ParseError::at(
                        var_pos,
                        format!("duplicate prefix variable `{var}`"),
                    ));
                }
                let mut sort = String::new();
                if self.eat_punct(':') {
                    let (s, _) = self.expect_ident()?;
                    sort = s;
                }
                prefix.push(PrefixEntry { op, var, sort });
                if !self.eat_punct(',') {
                    break;
                }
            }
            self.expect_punct(']')?;
        }
        self.expect_punct('{')?;
        // A case is `formula : value` or `else : value` (final only).
        enum RawCase {
            Cond(Formula, Rational),
            Else(Rational, (usize, usize)),
        }
        let mut raw: Vec<RawCase> = Vec::new();
        loop {
            if self.peek() == &Tok::Punct('}') {
                break;
            }
            if let Tok::Ident(w) = self.peek() {
                if w == "else" && self.peek2() == &Tok::Punct(':') {
                    let (_, pos) = self.next();
                    self.expect_punct(':')?;
                    let value = self.value()?;
                    raw.push(RawCase::Else(value, pos));
                    if self.eat_punct(';') {
                        continue;
                    }
                    break;
                }
            }
            let cond = self.formula()?;
            self.expect_punct(':')?;
            let value = self.value()?;
            raw.push(RawCase::Cond(cond, value));
            if !self.eat_punct(';') {
                break;
            }
        }
        self.expect_punct('}')?;
        // Expand `else` and check it comes last.
        let mut cases: Vec<Case> = Vec::new();
        let n = raw.len();
        for (i, rc) in raw.into_iter().enumerate() {
            match rc {
                RawCase::Cond(cond, value) => cases.push(Case::new(cond, value)),
                RawCase::Else(value, pos) => {
                    if i + 1 != n {
                        return Err(ParseError::at(pos, "`else` must be the final case"));
                    }
                    let complement = Formula::or_of(
                        cases.iter().map(|c| c.condition.clone()).collect(),
                    )
                    .negate();
                    cases.push(Case::new(complement, value));
                }
            }
        }
        self.finish_sorts(&mut prefix)?;
        // Every free variable must be prefix-bound.
        let bound: BTreeSet<&str> = prefix.iter().map(|e| e.var.as_str()).collect();
        for case in &cases {
            for v in case.condition.free_vars() {
                if !bound.contains(v.as_str()) {
                    let pos = self.var_pos.get(&v).copied().unwrap_or((1, 1));
                    return Err(ParseError::at(
                        pos,
                        format!("variable `{v}` is not bound by the prefix (and is not a declared constant)"),
                    ));
                }
            }
        }
        Ok(RelExpr { prefix, scale, cases })
    }

    /// Propagate sorts through recorded equalities, then fill prefix entry
    /// sorts, erroring on conflicts or unresolved variables.
    fn finish_sorts(&mut self, prefix: &mut [PrefixEntry]) -> Result<(), ParseError> {
        for e in prefix.iter() {
            if !e.sort.is_empty() {
                if let Some(prev) = self.var_sorts.get(&e.var) {
                    if prev != &e.sort {
                        let pos = self.var_pos.get(&e.var).copied().unwrap_or((1, 1));
                        return Err(ParseError::at(
                            pos,
                            format!(
                                "variable `{}` is annotated `{}` but used as `{prev}`",
                                e.var, e.sort
                            ),
                        ));
                    }
                }
                self.var_sorts.insert(e.var.clone(), e.sort.clone());
            }
        }
        // Fixpoint over equalities.
        loop {
            let mut changed = false;
            for (a, b, pos) in self.eq_terms.clone() {
                let sa = self.term_sort(&a);
                let sb = self.term_sort(&b);
                match (sa, sb) {
                    (Some(x), Some(y)) if x != y => {
                        return Err(ParseError::at(
                            pos,
                            format!("equality between different sorts `{x}` and `{y}`"),
                        ));
                    }
                    (Some(x), None) => {
                        if let Term::Var(v) = &b {
                            self.var_sorts.insert(v.clone(), x);
                            changed = true;
                        }
                    }
                    (None, Some(y)) => {
                        if let Term::Var(v) = &a {
                            self.var_sorts.insert(v.clone(), y);
                            changed = true;
                        }
                    }
                    _ => {}
                }
            }
            if !changed {
                break;
            }
        }
        for e in prefix.iter_mut() {
            if e.sort.is_empty() {
                match self.var_sorts.get(&e.var) {
                    Some(s) => e.sort = s.clone(),
                    None => {
                        let pos = self.var_pos.get(&e.var).copied().unwrap_or((1, 1));
                        return Err(ParseError::at(
                            pos,
                            format!(
                                "cannot infer the sort of `{}`; annotate it as `{} {}: Sort`",
                                e.var,
                                e.op.name(),
                                e.var
                            ),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn term_sort(&self, t: &Term) -> Option<SortName> {
        match t {
            Term::Var(v) => self.var_sorts.get(v).cloned(),
            Term::Const(c) => self.ctx.constants.get(c).cloned(),
            Term::Param(p) => self.params.get(p).cloned(),
        }
    }

    pub(crate) fn value(&mut self) -> Result<Rational, ParseError> {
        let (t, pos) = self.next();
        let Tok::Number(num) = t else {
            return Err(ParseError::at(pos, format!("expected a number, found {t}")));
        };
        let numer = parse_decimal(&num)
            .ok_or_else(|| ParseError::at(pos, format!("malformed number `{num}`")))?;
        if self.eat_punct('/') {
            let (t2, pos2) = self.next();
            let Tok::Number(den) = t2 else {
                return Err(ParseError::at(pos2, format!("expected a denominator, found {t2}")));
            };
            let denom = parse_decimal(&den)
                .ok_or_else(|| ParseError::at(pos2, format!("malformed number `{den}`")))?;
            if denom.numer() == &BigInt::from(0) {
                return Err(ParseError::at(pos2, "zero denominator"));
            }
            return Ok(numer / denom);
        }
        Ok(numer)
    }

    // -- formulas ------------------------------------------------------------

    pub(crate) fn formula(&mut self) -> Result<Formula, ParseError> {
        let mut parts = vec![self.and_chain()?];
        while self.eat_punct('|') {
            parts.push(self.and_chain()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::or_of(parts) })
    }

    fn and_chain(&mut self) -> Result<Formula, ParseError> {
        let mut parts = vec![self.unary()?];
        while self.eat_punct('&') {
            parts.push(self.unary()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::and_of(parts) })
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        if self.eat_punct('~') {
            let inner = self.unary()?;
            return Ok(inner.negate());
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Formula, ParseError> {
        match self.peek().clone() {
            Tok::Punct('(') => {
                self.expect_punct('(')?;
                let f = self.formula()?;
                self.expect_punct(')')?;
                Ok(f)
            }
            Tok::Ident(name) if name == "true" => {
                self.next();
                Ok(Formula::True)
            }
            Tok::Ident(name) if name == "false" => {
                self.next();
                Ok(Formula::False)
            }
            Tok::Ident(name) if (name == "and" || name == "or") && self.peek2() == &Tok::Punct('(') => {
                self.next();
                self.expect_punct('(')?;
                let mut children = Vec::new();
                if self.peek() != &Tok::Punct(')') {
                    loop {
                        children.push(self.formula()?);
                        if !self.eat_punct(',') {
                            break;
                        }
                    }
                }
                self.expect_punct(')')?;
                Ok(if name == "and" {
                    Formula::and_of(children)
                } else {
                    Formula::or_of(children)
                })
            }
            Tok::Ident(_) if self.peek2() == &Tok::Punct('(') => self.predicate(),
            Tok::Ident(_) | Tok::Param(_) => self.comparison(),
            other => {
                let pos = self.here();
                Err(ParseError::at(pos, format!("expected a formula, found {other}")))
            }
        }
    }

    fn predicate(&mut self) -> Result<Formula, ParseError> {
        Ok(Formula::atom(self.atom()?))
    }

    /// Parse a predicate atom `Name(term, ...)`, checking the signature.
    pub(crate) fn atom(&mut self) -> Result<Atom, ParseError> {
        let (name, pos) = self.expect_ident()?;
        let Some(sig) = self.ctx.predicates.get(&name).cloned() else {
            return Err(ParseError::at(pos, format!("unknown predicate `{name}`")));
        };
        self.expect_punct('(')?;
        let mut args = Vec::new();
        if self.peek() != &Tok::Punct(')') {
            loop {
                args.push(self.term()?);
                if !self.eat_punct(',') {
                    break;
                }
            }
        }
        self.expect_punct(')')?;
        if args.len() != sig.len() {
            return Err(ParseError::at(
                pos,
                format!("predicate `{name}` expects {} arguments, got {}", sig.len(), args.len()),
            ));
        }
        for ((term, tpos), want) in args.iter().zip(&sig) {
            self.record_sort(term, want, *tpos)?;
        }
        Ok(Atom::pred(name, args.into_iter().map(|(t, _)| t).collect()))
    }

    fn comparison(&mut self) -> Result<Formula, ParseError> {
        let (a, apos) = self.term()?;
        let (t, pos) = self.next();
        let positive = match t {
            Tok::Punct('=') => true,
            Tok::NotEq => false,
            other => {
                return Err(ParseError::at(
                    pos,
                    format!("expected `=` or `!=` after a term, found {other}"),
                ))
            }
        };
        let (b, _) = self.term()?;
        self.eq_terms.push((a.clone(), b.clone(), apos));
        Ok(Formula::literal(Atom::eq(a, b), positive))
    }

    fn term(&mut self) -> Result<(Term, (usize, usize)), ParseError> {
        let (t, pos) = self.next();
        match t {
            Tok::Param(name) => Ok((Term::Param(name), pos)),
            Tok::Ident(name) => {
                if self.params.contains_key(&name) {
                    Ok((Term::Param(name), pos))
                } else if self.ctx.constants.contains_key(&name) {
                    Ok((Term::Const(name), pos))
                } else {
                    self.var_pos.entry(name.clone()).or_insert(pos);
                    Ok((Term::Var(name), pos))
                }
            }
            other => Err(ParseError::at(pos, format!("expected a term, found {other}"))),
        }
    }

    fn record_sort(
        &mut self,
        term: &Term,
        want: &SortName,
        pos: (usize, usize),
    ) -> Result<(), ParseError> {
        match term {
            Term::Var(v) => match self.var_sorts.get(v) {
                Some(prev) if prev != want => Err(ParseError::at(
                    pos,
                    format!("variable `{v}` used both as `{prev}` and as `{want}`"),
                )),
                _ => {
                    self.var_sorts.insert(v.clone(), want.clone());
                    Ok(())
                }
            },
            Term::Const(c) => {
                let declared = self.ctx.constants.get(c).expect("classified as constant");
                if declared != want {
                    Err(ParseError::at(
                        pos,
                        format!("constant `{c}` has sort `{declared}`, expected `{want}`"),
                    ))
                } else {
                    Ok(())
                }
            }
            Term::Param(p) => match self.params.get(p) {
                Some(declared) if declared != want => Err(ParseError::at(
                    pos,
                    format!("parameter `${p}` has sort `{declared}`, expected `{want}`"),
                )),
                _ => Ok(()),
            },
        }
    }
}

/// Parse a decimal or integer literal into an exact rational.
fn parse_decimal(s: &str) -> Option<Rational> {
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1i32, rest),
        None => (1, s),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: BigInt = digits.parse().ok()?;
    let denom = BigInt::from(10u32).pow(frac_part.len() as u32);
    Some(Rational::new(numer * BigInt::from(sign), denom))
}

/// Parse an expression in the text format against a sort context.
pub fn parse_expr(input: &str, ctx: &SortContext) -> Result<RelExpr, ParseError> {
    let mut p = Parser::new(input, ctx.clone(), BTreeMap::new())?;
    let e = p.expression()?;
    if !p.at_eof() {
        let t = p.peek().clone();
        return Err(ParseError::at(p.here(), format!("unexpected {t} after expression")));
    }
    Ok(e)
}

/// Parse a bare formula; names listed in `params` (with their sorts) are
/// read as action parameters rather than variables.
pub fn parse_formula(
    input: &str,
    ctx: &SortContext,
    params: &BTreeMap<String, SortName>,
) -> Result<Formula, ParseError> {
    let mut p = Parser::new(input, ctx.clone(), params.clone())?;
    let f = p.formula()?;
    if !p.at_eof() {
        let t = p.peek().clone();
        return Err(ParseError::at(p.here(), format!("unexpected {t} after formula")));
    }
    Ok(f)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
