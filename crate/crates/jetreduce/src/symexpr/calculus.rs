//! Partial differentiation and substitution on canonical expressions.

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::{One, Zero};

use super::coord::Coord;
use super::expr::{
    acosh_expr, cosh_expr, exp_expr, finalize_monomial, log_expr, rat, sinh_expr, Atom, Expr,
    ExprError, Monomial, Rat,
};

/// Exact partial derivative ∂e/∂c treating every coordinate as an independent
/// symbol.
pub fn diff_partial(e: &Expr, c: &Coord) -> Expr {
    let mut parts: Vec<Expr> = Vec::new();
    for t in e.terms() {
        // product rule over the factors of the monomial
        for (idx, (atom, exp)) in t.mono.factors.iter().enumerate() {
            let da = diff_atom(atom, c);
            if da.is_zero_expr() {
                continue;
            }
            // coeff * exp * atom^(exp-1) * da * (other factors)
            let mut rest = Monomial { factors: Vec::with_capacity(t.mono.factors.len()) };
            for (j, f) in t.mono.factors.iter().enumerate() {
                if j == idx {
                    let e1 = exp - Rat::one();
                    if !e1.is_zero() {
                        rest.factors.push((f.0.clone(), e1));
                    }
                } else {
                    rest.factors.push(f.clone());
                }
            }
            let base = finalize_monomial(&t.coeff * exp, rest);
            parts.push(base.mul(&da));
        }
    }
    Expr::sum(&parts)
}

fn diff_atom(atom: &Atom, c: &Coord) -> Expr {
    match atom {
        Atom::Coord(cc) => {
            if cc == c {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Atom::Exp(f) => {
            let df = diff_partial(f, c);
            if df.is_zero_expr() {
                return Expr::zero();
            }
            exp_expr(f).expect("exp is total").mul(&df)
        }
        Atom::Log(f) => {
            let df = diff_partial(f, c);
            if df.is_zero_expr() {
                return Expr::zero();
            }
            df.mul(&f.pow(&-Rat::one()).expect("log argument nonzero"))
        }
        Atom::Cosh(f) => {
            let df = diff_partial(f, c);
            if df.is_zero_expr() {
                return Expr::zero();
            }
            sinh_expr(f).mul(&df)
        }
        Atom::Sinh(f) => {
            let df = diff_partial(f, c);
            if df.is_zero_expr() {
                return Expr::zero();
            }
            cosh_expr(f).mul(&df)
        }
        Atom::Acosh(f) => {
            let df = diff_partial(f, c);
            if df.is_zero_expr() {
                return Expr::zero();
            }
            // d acosh(f) = f' · (f²−1)^(−1/2)
            let inner = f.mul(f).sub(&Expr::one());
            df.mul(&inner.pow(&rat(-1, 2)).expect("nonzero by domain"))
        }
        Atom::Sum(f) => diff_partial(f, c),
        Atom::Surd(_) => Expr::zero(),
    }
}

/// Simultaneous substitution of coordinates by expressions, followed by
/// canonicalization. Coordinates not in the map are left unchanged.
pub fn substitute(e: &Expr, map: &BTreeMap<Coord, Expr>) -> Result<Expr, ExprError> {
    if map.is_empty() {
        return Ok(e.clone());
    }
    // fast path: nothing to substitute
    if !e.coords().iter().any(|c| map.contains_key(c)) {
        return Ok(e.clone());
    }
    let mut parts: Vec<Expr> = Vec::with_capacity(e.terms().len());
    for t in e.terms() {
        let mut acc = Expr::from_rat(t.coeff.clone());
        for (atom, exp) in &t.mono.factors {
            let sub = subst_atom(atom, map)?;
            acc = acc.mul(&sub.pow(exp)?);
        }
        parts.push(acc);
    }
    Ok(Expr::sum(&parts))
}

fn subst_atom(atom: &Atom, map: &BTreeMap<Coord, Expr>) -> Result<Expr, ExprError> {
    Ok(match atom {
        Atom::Coord(c) => match map.get(c) {
            Some(r) => r.clone(),
            None => Expr::coord(c.clone()),
        },
        Atom::Exp(f) => exp_expr(&substitute(f, map)?)?,
        Atom::Log(f) => log_expr(&substitute(f, map)?)?,
        Atom::Cosh(f) => cosh_expr(&substitute(f, map)?),
        Atom::Sinh(f) => sinh_expr(&substitute(f, map)?),
        Atom::Acosh(f) => acosh_expr(&substitute(f, map)?)?,
        Atom::Sum(f) => substitute(f, map)?,
        Atom::Surd(r) => Expr::from_atom(Atom::Surd(r.clone()), BigRational::one()),
    })
}

/// Substitute a single coordinate.
pub fn substitute_one(e: &Expr, c: &Coord, r: &Expr) -> Result<Expr, ExprError> {
    let mut map = BTreeMap::new();
    map.insert(c.clone(), r.clone());
    substitute(e, &map)
}
