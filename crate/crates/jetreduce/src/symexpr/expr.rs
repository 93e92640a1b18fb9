//! Canonical expression trees: sums of products with exact rational coefficients.
//!
//! The canonical form is a flattened sum of terms; each term is a rational
//! coefficient times a monomial, i.e. a sorted product of `(Atom, exponent)`
//! pairs with rational exponents. Polynomial structure is always expanded
//! (positive integer powers of sums are multiplied out), so two polynomials
//! that are equal as functions are structurally equal. Transcendental
//! subterms (exp, log, cosh, sinh, acosh) and non-integer powers of sums are
//! opaque atoms; their equality beyond structural identity is left to the
//! probabilistic zero test.
//!
//! Fractional powers follow the safe-domain convention used throughout the
//! crate: atoms are sampled from positive ranges, so rewrites like
//! (u^2)^(1/2) = u are applied without absolute values.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Pow, Signed, ToPrimitive, Zero};

use super::coord::Coord;

pub type Rat = BigRational;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum ExprError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("domain error: {0}")]
    Domain(String),
}

pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(BigInt::from(num), BigInt::from(den))
}

/// An opaque multiplicative atom. Order of the variants fixes the canonical
/// factor order inside a monomial.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Atom {
    Coord(Coord),
    Exp(Expr),
    Log(Expr),
    Cosh(Expr),
    Sinh(Expr),
    Acosh(Expr),
    /// A sum with at least two terms used as a power base. Normalized: positive
    /// rational content 1 and no common monomial factor across its terms; when
    /// formed for an integer exponent the first term's coefficient is positive.
    Sum(Expr),
    /// A positive rational that is not an exact power, under a fractional
    /// exponent (e.g. 2^(1/2)).
    Surd(Rat),
}

/// A monomial: sorted factor list with nonzero rational exponents.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct Monomial {
    pub factors: Vec<(Atom, Rat)>,
}

impl Monomial {
    pub fn one() -> Self {
        Monomial { factors: vec![] }
    }

    pub fn is_one(&self) -> bool {
        self.factors.is_empty()
    }

    fn atom(a: Atom, e: Rat) -> Self {
        if e.is_zero() {
            Monomial::one()
        } else {
            Monomial { factors: vec![(a, e)] }
        }
    }

    /// Merge two sorted factor lists, adding exponents of equal atoms.
    fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.factors.len() + other.factors.len());
        let (mut i, mut j) = (0, 0);
        while i < self.factors.len() && j < other.factors.len() {
            match self.factors[i].0.cmp(&other.factors[j].0) {
                Ordering::Less => {
                    out.push(self.factors[i].clone());
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(other.factors[j].clone());
                    j += 1;
                }
                Ordering::Equal => {
                    let e = &self.factors[i].1 + &other.factors[j].1;
                    if !e.is_zero() {
                        out.push((self.factors[i].0.clone(), e));
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.factors[i..]);
        out.extend_from_slice(&other.factors[j..]);
        Monomial { factors: out }
    }

    fn pow(&self, q: &Rat) -> Monomial {
        if q.is_zero() {
            return Monomial::one();
        }
        Monomial {
            factors: self
                .factors
                .iter()
                .map(|(a, e)| (a.clone(), e * q))
                .collect(),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Term {
    pub coeff: Rat,
    pub mono: Monomial,
}

#[derive(PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
struct ExprInner {
    terms: Vec<Term>,
}

/// An immutable canonical expression. Cloning is cheap (shared storage).
#[derive(Clone, Debug)]
pub struct Expr(Arc<ExprInner>);

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }
}
impl Eq for Expr {}
impl PartialOrd for Expr {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Expr {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.cmp(&other.0)
    }
}
impl std::hash::Hash for Expr {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.hash(state);
    }
}

impl Expr {
    fn from_terms(mut terms: Vec<Term>) -> Expr {
        terms.sort_by(|a, b| a.mono.cmp(&b.mono));
        let mut out: Vec<Term> = Vec::with_capacity(terms.len());
        for t in terms {
            if t.coeff.is_zero() {
                continue;
            }
            if let Some(last) = out.last_mut() {
                if last.mono == t.mono {
                    last.coeff += t.coeff;
                    if last.coeff.is_zero() {
                        out.pop();
                    }
                    continue;
                }
            }
            out.push(t);
        }
        Expr(Arc::new(ExprInner { terms: out }))
    }

    pub fn zero() -> Expr {
        Expr(Arc::new(ExprInner { terms: vec![] }))
    }

    pub fn one() -> Expr {
        Expr::from_rat(Rat::one())
    }

    pub fn from_int(n: i64) -> Expr {
        Expr::from_rat(rat_int(n))
    }

    pub fn from_rat(r: Rat) -> Expr {
        if r.is_zero() {
            return Expr::zero();
        }
        Expr(Arc::new(ExprInner {
            terms: vec![Term { coeff: r, mono: Monomial::one() }],
        }))
    }

    pub fn coord(c: Coord) -> Expr {
        Expr(Arc::new(ExprInner {
            terms: vec![Term {
                coeff: Rat::one(),
                mono: Monomial::atom(Atom::Coord(c), Rat::one()),
            }],
        }))
    }

    pub fn param(name: &str) -> Expr {
        Expr::coord(Coord::param(name))
    }

    pub(crate) fn from_atom(a: Atom, e: Rat) -> Expr {
        Expr(Arc::new(ExprInner {
            terms: vec![Term { coeff: Rat::one(), mono: Monomial::atom(a, e) }],
        }))
    }

    pub fn terms(&self) -> &[Term] {
        &self.0.terms
    }

    pub fn is_zero_expr(&self) -> bool {
        self.0.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.as_rational().map(|r| r.is_one()).unwrap_or(false)
    }

    /// Some(r) iff the expression is a rational constant.
    pub fn as_rational(&self) -> Option<Rat> {
        match self.0.terms.as_slice() {
            [] => Some(Rat::zero()),
            [t] if t.mono.is_one() => Some(t.coeff.clone()),
            _ => None,
        }
    }

    /// Some((coeff, mono)) iff the expression is a single term.
    fn as_single_term(&self) -> Option<&Term> {
        match self.0.terms.as_slice() {
            [t] => Some(t),
            _ => None,
        }
    }

    pub fn add(&self, other: &Expr) -> Expr {
        if self.is_zero_expr() {
            return other.clone();
        }
        if other.is_zero_expr() {
            return self.clone();
        }
        let mut terms = self.0.terms.clone();
        terms.extend(other.0.terms.iter().cloned());
        Expr::from_terms(terms)
    }

    pub fn sum(parts: &[Expr]) -> Expr {
        let mut terms = Vec::new();
        for p in parts {
            terms.extend(p.0.terms.iter().cloned());
        }
        Expr::from_terms(terms)
    }

    pub fn neg(&self) -> Expr {
        self.scale(&-Rat::one())
    }

    pub fn sub(&self, other: &Expr) -> Expr {
        self.add(&other.neg())
    }

    pub fn scale(&self, r: &Rat) -> Expr {
        if r.is_zero() {
            return Expr::zero();
        }
        Expr(Arc::new(ExprInner {
            terms: self
                .0
                .terms
                .iter()
                .map(|t| Term { coeff: &t.coeff * r, mono: t.mono.clone() })
                .collect(),
        }))
    }

    pub fn mul(&self, other: &Expr) -> Expr {
        if self.is_zero_expr() || other.is_zero_expr() {
            return Expr::zero();
        }
        if let Some(r) = self.as_rational() {
            return other.scale(&r);
        }
        if let Some(r) = other.as_rational() {
            return self.scale(&r);
        }
        let mut parts: Vec<Term> = Vec::new();
        let mut expanded: Vec<Expr> = Vec::new();
        for a in &self.0.terms {
            for b in &other.0.terms {
                let coeff = &a.coeff * &b.coeff;
                let mono = a.mono.mul(&b.mono);
                match normalize_term(coeff, mono) {
                    TermNorm::Term(t) => parts.push(t),
                    TermNorm::Expanded(e) => expanded.push(e),
                }
            }
        }
        let mut acc = Expr::from_terms(parts);
        for e in expanded {
            acc = acc.add(&e);
        }
        acc
    }

    pub fn product(parts: &[Expr]) -> Expr {
        let mut acc = Expr::one();
        for p in parts {
            acc = acc.mul(p);
        }
        acc
    }

    /// Integer power by repeated squaring (negative via reciprocal).
    pub fn powi(&self, n: i64) -> Result<Expr, ExprError> {
        self.pow(&rat_int(n))
    }

    /// Rational power.
    pub fn pow(&self, q: &Rat) -> Result<Expr, ExprError> {
        if q.is_zero() {
            // by convention expr^0 == 1, including 0^0
            return Ok(Expr::one());
        }
        if self.is_zero_expr() {
            if q.is_positive() {
                return Ok(Expr::zero());
            }
            return Err(ExprError::DivisionByZero);
        }
        if q.is_one() {
            return Ok(self.clone());
        }
        // single term: distribute the exponent over coefficient and factors
        if let Some(t) = self.as_single_term() {
            let coeff_pow = rat_pow(&t.coeff, q)?;
            let mono = t.mono.pow(q);
            return Ok(coeff_pow.mul(&finalize_monomial(Rat::one(), mono)));
        }
        // positive integer power of a sum: expand
        if q.is_integer() && q.is_positive() {
            let n = q
                .to_integer()
                .to_u32()
                .ok_or_else(|| ExprError::Domain("power too large to expand".into()))?;
            let mut acc = Expr::one();
            let mut base = self.clone();
            let mut k = n;
            loop {
                if k & 1 == 1 {
                    acc = acc.mul(&base);
                }
                k >>= 1;
                if k == 0 {
                    break;
                }
                base = base.mul(&base);
            }
            return Ok(acc);
        }
        // half-integer powers: collapse perfect squares (safe-domain sign
        // convention: the root is normalized to a positive leading coefficient)
        if q.denom() == &BigInt::from(2) {
            if let Some(root) = poly_square_root(self, 0) {
                let p = q
                    .numer()
                    .to_i64()
                    .ok_or_else(|| ExprError::Domain("exponent too large".into()))?;
                return root.powi(p);
            }
        }
        // negative-integer or fractional power of a sum: opaque base
        let (content, common, base) = self.extract_content(q.is_integer());
        let coeff_pow = rat_pow(&content, q)?;
        let common_pow = finalize_monomial(Rat::one(), common.pow(q));
        let base_pow = finalize_monomial(Rat::one(), Monomial::atom(Atom::Sum(base), q.clone()));
        Ok(coeff_pow.mul(&common_pow).mul(&base_pow))
    }

    /// Factor out the rational content and the common monomial factor
    /// (and, when `extract_sign`, a leading −1) from a multi-term expression.
    /// Returns (content, common monomial, base) with
    /// self = content · common · base and base normalized.
    pub(crate) fn extract_content(&self, extract_sign: bool) -> (Rat, Monomial, Expr) {
        debug_assert!(self.0.terms.len() >= 2);
        // rational content: gcd of numerators / lcm of denominators
        let mut num_gcd = BigInt::zero();
        let mut den_lcm = BigInt::one();
        for t in &self.0.terms {
            num_gcd = num_gcd.gcd(t.coeff.numer());
            den_lcm = den_lcm.lcm(t.coeff.denom());
        }
        let mut content = Rat::new(num_gcd, den_lcm);
        if extract_sign && self.0.terms[0].coeff.is_negative() {
            content = -content;
        }
        // common monomial factor: per-atom minimum exponent over all terms,
        // with absent atoms counting as exponent zero; negative minima pull
        // denominators out of the base (Laurent extraction)
        let mut mins: BTreeMap<Atom, Rat> = BTreeMap::new();
        for (a, e) in self.0.terms.iter().flat_map(|t| t.mono.factors.iter()) {
            mins.entry(a.clone())
                .and_modify(|cur| {
                    if *e < *cur {
                        *cur = e.clone();
                    }
                })
                .or_insert_with(|| e.clone());
        }
        for t in &self.0.terms {
            let present: BTreeMap<&Atom, &Rat> =
                t.mono.factors.iter().map(|(a, e)| (a, e)).collect();
            for (a, min) in mins.iter_mut() {
                if !present.contains_key(a) && min.is_positive() {
                    *min = Rat::zero();
                }
            }
        }
        mins.retain(|_, e| !e.is_zero());
        let common_mono = Monomial {
            factors: mins.into_iter().collect(),
        };
        let inv_content = content.recip();
        let inv_mono = common_mono.pow(&-Rat::one());
        // dividing out the common factor can leave sum atoms at positive
        // integer powers; finalize each term to restore the invariants
        let parts: Vec<Expr> = self
            .0
            .terms
            .iter()
            .map(|t| finalize_monomial(&t.coeff * &inv_content, t.mono.mul(&inv_mono)))
            .collect();
        let base = Expr::sum(&parts);
        (content, common_mono, base)
    }

    /// Division; errors when dividing by structural zero.
    pub fn div(&self, other: &Expr) -> Result<Expr, ExprError> {
        Ok(self.mul(&other.pow(&-Rat::one())?))
    }

    /// All coordinates occurring anywhere in the expression, including inside
    /// transcendental arguments and opaque sum bases.
    pub fn coords(&self) -> BTreeSet<Coord> {
        let mut set = BTreeSet::new();
        self.collect_coords(&mut set);
        set
    }

    pub(crate) fn collect_coords(&self, set: &mut BTreeSet<Coord>) {
        for t in &self.0.terms {
            for (a, _) in &t.mono.factors {
                match a {
                    Atom::Coord(c) => {
                        set.insert(c.clone());
                    }
                    Atom::Exp(e) | Atom::Log(e) | Atom::Cosh(e) | Atom::Sinh(e)
                    | Atom::Acosh(e) | Atom::Sum(e) => e.collect_coords(set),
                    Atom::Surd(_) => {}
                }
            }
        }
    }

    /// Dependent coordinates only.
    pub fn dep_coords(&self) -> BTreeSet<Coord> {
        self.coords().into_iter().filter(|c| c.is_dep()).collect()
    }

    /// Highest jet order of any dependent coordinate (0 when none occur).
    pub fn jet_order(&self) -> u32 {
        self.coords().iter().map(|c| c.order()).max().unwrap_or(0)
    }

    pub fn contains_coord(&self, c: &Coord) -> bool {
        self.coords().contains(c)
    }

    /// Number of top-level terms.
    pub fn term_count(&self) -> usize {
        self.0.terms.len()
    }
}

enum TermNorm {
    Term(Term),
    Expanded(Expr),
}

/// Re-establish term invariants after a raw factor merge: expand sum atoms
/// whose exponent became a positive integer, fold surds with integer
/// exponents into the coefficient.
fn normalize_term(coeff: Rat, mono: Monomial) -> TermNorm {
    let mut plain: Vec<(Atom, Rat)> = Vec::with_capacity(mono.factors.len());
    let mut pending: Vec<Expr> = Vec::new();
    let mut c = coeff;
    for (a, e) in mono.factors {
        match &a {
            Atom::Sum(s) if e.is_integer() && e.is_positive() => {
                let n = e.to_integer().to_u32().expect("small power");
                let mut acc = s.clone();
                for _ in 1..n {
                    acc = acc.mul(s);
                }
                pending.push(acc);
            }
            Atom::Surd(r) if e.is_integer() => {
                let p = rat_pow(r, &e).expect("surd base positive");
                c *= p.as_rational().expect("integer power of rational");
            }
            _ => plain.push((a, e)),
        }
    }
    let t = Term { coeff: c, mono: Monomial { factors: plain } };
    if pending.is_empty() {
        TermNorm::Term(t)
    } else {
        let mut acc = Expr(Arc::new(ExprInner { terms: vec![t] }));
        for p in pending {
            acc = acc.mul(&p);
        }
        TermNorm::Expanded(acc)
    }
}

/// Multiply by a raw monomial, merging exponents before the invariants are
/// re-established (so a sum base at power −k cancels against +k instead of
/// being hit with the expanded polynomial).
pub(crate) fn mul_monomial(e: &Expr, mono: &Monomial) -> Expr {
    let parts: Vec<Expr> = e
        .terms()
        .iter()
        .map(|t| finalize_monomial(t.coeff.clone(), t.mono.mul(mono)))
        .collect();
    Expr::sum(&parts)
}

/// Build a canonical expression from a single (coeff, monomial), applying the
/// same invariants as `normalize_term`.
pub(crate) fn finalize_monomial(coeff: Rat, mono: Monomial) -> Expr {
    match normalize_term(coeff, mono) {
        TermNorm::Term(t) => {
            if t.coeff.is_zero() {
                Expr::zero()
            } else {
                Expr(Arc::new(ExprInner { terms: vec![t] }))
            }
        }
        TermNorm::Expanded(e) => e,
    }
}

/// Exact square root of a multi-term polynomial, when it is one: treats the
/// expression as a quadratic in its highest atom and recurses on the leading
/// coefficient. Returns a root with positive leading coefficient.
fn poly_square_root(p: &Expr, depth: usize) -> Option<Expr> {
    if depth > 4 || p.terms().len() < 2 {
        return None;
    }
    // pull out content and common (Laurent) monomial factors first so the
    // remaining base is a candidate polynomial square
    let (content, common, base) = p.extract_content(false);
    if !content.is_one() || !common.is_one() {
        let root_base = poly_square_root(&base, depth + 1)?;
        let content_root = rat_pow(&content, &rat(1, 2)).ok()?;
        let common_root = finalize_monomial(Rat::one(), common.pow(&rat(1, 2)));
        let root = content_root.mul(&common_root).mul(&root_base);
        if root.mul(&root) != *p {
            return None;
        }
        return Some(root);
    }
    // the highest atom appearing at top level
    let xi = p
        .terms()
        .iter()
        .flat_map(|t| t.mono.factors.iter().map(|(a, _)| a))
        .max()?
        .clone();
    // collect coefficients of xi powers; need exactly degrees within {0,1,2}
    let mut c = [Expr::zero(), Expr::zero(), Expr::zero()];
    for t in p.terms() {
        let e = t
            .mono
            .factors
            .iter()
            .find(|(a, _)| *a == xi)
            .map(|(_, e)| e.clone())
            .unwrap_or_else(Rat::zero);
        let k = if e.is_integer() {
            e.to_integer().to_i64()?
        } else {
            return None;
        };
        if !(0..=2).contains(&k) {
            return None;
        }
        let rest = Monomial {
            factors: t
                .mono
                .factors
                .iter()
                .filter(|(a, _)| *a != xi)
                .cloned()
                .collect(),
        };
        c[k as usize] = c[k as usize].add(&finalize_monomial(t.coeff.clone(), rest));
    }
    if c[2].is_zero_expr() {
        return None;
    }
    // discriminant must vanish identically
    let disc = c[1].mul(&c[1]).sub(&c[2].mul(&c[0]).scale(&rat(4, 1)));
    if !disc.is_zero_expr() {
        return None;
    }
    let sqrt_a = if let Some(t) = c[2].as_single_term() {
        let coeff_root = rat_pow(&t.coeff, &rat(1, 2)).ok()?;
        if !matches!(
            coeff_root.as_single_term(),
            Some(rt) if rt.mono.is_one()
        ) {
            return None;
        }
        coeff_root.mul(&finalize_monomial(Rat::one(), t.mono.pow(&rat(1, 2))))
    } else {
        poly_square_root(&c[2], depth + 1)?
    };
    let xi_expr = finalize_monomial(Rat::one(), Monomial::atom(xi, Rat::one()));
    let half_b = c[1].scale(&rat(1, 2));
    let lin = half_b.div(&sqrt_a).ok()?;
    let root = sqrt_a.mul(&xi_expr).add(&lin);
    // exactness check
    if root.mul(&root) != *p {
        return None;
    }
    // normalize: positive leading coefficient
    if root.terms().first().map(|t| t.coeff.is_negative()).unwrap_or(false) {
        Some(root.neg())
    } else {
        Some(root)
    }
}

/// Exact rational power: integer exponents exactly; for p/q tries exact q-th
/// roots and falls back to a surd atom.
pub(crate) fn rat_pow(base: &Rat, q: &Rat) -> Result<Expr, ExprError> {
    if base.is_zero() {
        return if q.is_positive() {
            Ok(Expr::zero())
        } else {
            Err(ExprError::DivisionByZero)
        };
    }
    if base.is_one() {
        return Ok(Expr::one());
    }
    if q.is_integer() {
        let n = q
            .to_integer()
            .to_i64()
            .ok_or_else(|| ExprError::Domain("exponent too large".into()))?;
        let mut r = Rat::one();
        let b = if n >= 0 { base.clone() } else { base.recip() };
        for _ in 0..n.unsigned_abs() {
            r *= &b;
        }
        return Ok(Expr::from_rat(r));
    }
    // fractional exponent p/q
    let p = q.numer().clone();
    let den = q
        .denom()
        .to_u32()
        .ok_or_else(|| ExprError::Domain("root order too large".into()))?;
    if base.is_negative() {
        if den % 2 == 0 {
            return Err(ExprError::Domain(format!(
                "even root of negative rational {base}"
            )));
        }
        let inner = rat_pow(&-base.clone(), q)?;
        // odd root of negative: (−1)^(p/q) with q odd = (−1)^p
        let sign = if p.is_odd() { -Rat::one() } else { Rat::one() };
        return Ok(inner.scale(&sign));
    }
    // try exact roots of numerator and denominator
    let rn = base.numer().nth_root(den);
    let rd = base.denom().nth_root(den);
    if &rn.clone().pow(den) == base.numer() && &rd.clone().pow(den) == base.denom() {
        let root = Rat::new(rn, rd);
        let pi = p
            .to_i64()
            .ok_or_else(|| ExprError::Domain("exponent too large".into()))?;
        return rat_pow(&root, &rat_int(pi));
    }
    Ok(Expr::from_atom(Atom::Surd(base.clone()), q.clone()))
}

/// exp with the canonical rewrites: exp(0) = 1, exp(Σ cᵢ·log Rᵢ) = Π Rᵢ^cᵢ,
/// rational content of the argument extracted into the exponent.
pub fn exp_expr(arg: &Expr) -> Result<Expr, ExprError> {
    if arg.is_zero_expr() {
        return Ok(Expr::one());
    }
    // pure-log sum: every term is rational · log(R)
    let mut log_parts: Vec<(Expr, Rat)> = Vec::new();
    let mut all_logs = true;
    for t in arg.terms() {
        match t.mono.factors.as_slice() {
            [(Atom::Log(r), e)] if e.is_one() => log_parts.push((r.clone(), t.coeff.clone())),
            _ => {
                all_logs = false;
                break;
            }
        }
    }
    if all_logs && !log_parts.is_empty() {
        let mut acc = Expr::one();
        for (r, c) in log_parts {
            acc = acc.mul(&r.pow(&c)?);
        }
        return Ok(acc);
    }
    // extract full rational content (with sign) so exp(4b) = exp(b)^4
    let (content, prim) = arg_content(arg);
    Ok(Expr::from_atom(Atom::Exp(prim), content))
}

/// Positive-leading-coefficient primitive part: arg = content · prim with the
/// first term of prim having coefficient +1-content-free.
fn arg_content(arg: &Expr) -> (Rat, Expr) {
    let mut num_gcd = BigInt::zero();
    let mut den_lcm = BigInt::one();
    for t in arg.terms() {
        num_gcd = num_gcd.gcd(t.coeff.numer());
        den_lcm = den_lcm.lcm(t.coeff.denom());
    }
    let mut content = Rat::new(num_gcd, den_lcm);
    if arg.terms()[0].coeff.is_negative() {
        content = -content;
    }
    let prim = arg.scale(&content.recip());
    (content, prim)
}

pub fn log_expr(arg: &Expr) -> Result<Expr, ExprError> {
    if arg.is_one() {
        return Ok(Expr::zero());
    }
    if let Some(r) = arg.as_rational() {
        if r.is_zero() {
            return Err(ExprError::Domain("log of zero".into()));
        }
        if r.is_negative() {
            return Err(ExprError::Domain("log of negative constant".into()));
        }
    }
    Ok(Expr::from_atom(Atom::Log(arg.clone()), Rat::one()))
}

pub fn cosh_expr(arg: &Expr) -> Expr {
    if arg.is_zero_expr() {
        return Expr::one();
    }
    Expr::from_atom(Atom::Cosh(arg.clone()), Rat::one())
}

pub fn sinh_expr(arg: &Expr) -> Expr {
    if arg.is_zero_expr() {
        return Expr::zero();
    }
    Expr::from_atom(Atom::Sinh(arg.clone()), Rat::one())
}

pub fn acosh_expr(arg: &Expr) -> Result<Expr, ExprError> {
    if arg.is_one() {
        return Ok(Expr::zero());
    }
    if let Some(r) = arg.as_rational() {
        if r < Rat::one() {
            return Err(ExprError::Domain("acosh of constant < 1".into()));
        }
    }
    Ok(Expr::from_atom(Atom::Acosh(arg.clone()), Rat::one()))
}

pub fn sqrt_expr(arg: &Expr) -> Result<Expr, ExprError> {
    arg.pow(&rat(1, 2))
}

impl std::ops::Add for &Expr {
    type Output = Expr;
    fn add(self, rhs: &Expr) -> Expr {
        Expr::add(self, rhs)
    }
}
impl std::ops::Sub for &Expr {
    type Output = Expr;
    fn sub(self, rhs: &Expr) -> Expr {
        Expr::sub(self, rhs)
    }
}
impl std::ops::Mul for &Expr {
    type Output = Expr;
    fn mul(self, rhs: &Expr) -> Expr {
        Expr::mul(self, rhs)
    }
}
impl std::ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}
