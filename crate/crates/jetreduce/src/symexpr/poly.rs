//! Exact multivariate polynomial division over the atom alphabet, used to
//! strip denominator bases out of cleared constraint equations.

use num_traits::{One, Signed, ToPrimitive, Zero};

use super::expr::{finalize_monomial, Atom, Expr, Monomial, Rat};

/// Exponent of `xi` in a term, when it is a non-negative integer; None
/// otherwise (fractional or negative powers make the division inapplicable).
fn xi_degree(t: &super::expr::Term, xi: &Atom) -> Option<i64> {
    let e = t
        .mono
        .factors
        .iter()
        .find(|(a, _)| a == xi)
        .map(|(_, e)| e.clone())
        .unwrap_or_else(Rat::zero);
    if !e.is_integer() || e.is_negative() {
        return None;
    }
    e.to_integer().to_i64()
}

/// Collect coefficients by powers of `xi`; None if any exponent is fractional
/// or negative.
fn collect_by(e: &Expr, xi: &Atom) -> Option<Vec<(i64, Expr)>> {
    let mut out: Vec<(i64, Expr)> = Vec::new();
    for t in e.terms() {
        let d = xi_degree(t, xi)?;
        let rest = Monomial {
            factors: t
                .mono
                .factors
                .iter()
                .filter(|(a, _)| a != xi)
                .cloned()
                .collect(),
        };
        let piece = finalize_monomial(t.coeff.clone(), rest);
        match out.iter_mut().find(|(k, _)| *k == d) {
            Some((_, acc)) => *acc = acc.add(&piece),
            None => out.push((d, piece)),
        }
    }
    out.retain(|(_, c)| !c.is_zero_expr());
    out.sort_by_key(|(d, _)| *d);
    Some(out)
}

fn highest_atom(e: &Expr) -> Option<Atom> {
    e.terms()
        .iter()
        .flat_map(|t| t.mono.factors.iter().map(|(a, _)| a))
        .max()
        .cloned()
}

/// Exact division n / s when both are denominator-free; returns None when the
/// division is not exact (or not applicable to the representation).
pub fn exact_poly_div(n: &Expr, s: &Expr) -> Option<Expr> {
    exact_div_rec(n, s, 0)
}

fn exact_div_rec(n: &Expr, s: &Expr, depth: usize) -> Option<Expr> {
    if depth > 16 || s.is_zero_expr() {
        return None;
    }
    if n.is_zero_expr() {
        return Some(Expr::zero());
    }
    if let Some(r) = s.as_rational() {
        return Some(n.scale(&r.recip()));
    }
    let xi = highest_atom(s)?;
    let s_coeffs = collect_by(s, &xi)?;
    let (s_deg, s_top) = s_coeffs.last()?.clone();
    if s_deg == 0 {
        // s does not actually involve its highest atom as a polynomial pivot
        return None;
    }
    let mut remainder = n.clone();
    let mut quotient = Expr::zero();
    let xi_expr = finalize_monomial(Rat::one(), Monomial { factors: vec![(xi.clone(), Rat::one())] });
    for _ in 0..256 {
        if remainder.is_zero_expr() {
            return Some(quotient);
        }
        let r_coeffs = collect_by(&remainder, &xi)?;
        let (r_deg, r_top) = r_coeffs.last()?.clone();
        if r_deg < s_deg {
            return None;
        }
        let q_top = exact_div_rec(&r_top, &s_top, depth + 1)?;
        let shift = xi_expr.powi(r_deg - s_deg).ok()?;
        let term = q_top.mul(&shift);
        quotient = quotient.add(&term);
        remainder = remainder.sub(&term.mul(s));
        // the top coefficient cancels by construction; guard against stalls
        if let Some(nc) = collect_by(&remainder, &xi) {
            if let Some((nd, _)) = nc.last() {
                if *nd >= r_deg {
                    return None;
                }
            }
        } else {
            return None;
        }
    }
    None
}

/// All sum bases appearing as factors anywhere in the expression, candidates
/// for denominator stripping.
pub fn sum_bases(e: &Expr) -> Vec<Expr> {
    let mut out: Vec<Expr> = Vec::new();
    collect_sum_bases(e, &mut out);
    out.sort();
    out.dedup();
    out
}

fn collect_sum_bases(e: &Expr, out: &mut Vec<Expr>) {
    for t in e.terms() {
        for (a, _) in &t.mono.factors {
            match a {
                Atom::Sum(b) => {
                    out.push(b.clone());
                    collect_sum_bases(b, out);
                }
                Atom::Exp(f) | Atom::Log(f) | Atom::Cosh(f) | Atom::Sinh(f)
                | Atom::Acosh(f) => collect_sum_bases(f, out),
                _ => {}
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::parse_expr;

    #[test]
    fn divides_exactly() {
        let n = parse_expr("(u - x*u_x)^3*(2*u^2*u_xx - x*u_x^3 + u*u_x^2)").unwrap();
        let s = parse_expr("u - x*u_x").unwrap();
        let q1 = exact_poly_div(&n, &s).unwrap();
        let q2 = exact_poly_div(&q1, &s).unwrap();
        let q3 = exact_poly_div(&q2, &s).unwrap();
        let expect = parse_expr("2*u^2*u_xx - x*u_x^3 + u*u_x^2").unwrap();
        assert_eq!(q3, expect);
        assert!(exact_poly_div(&q3, &s).is_none());
    }

    #[test]
    fn rejects_inexact() {
        let n = parse_expr("u^2 + u_x").unwrap();
        let s = parse_expr("u + 1").unwrap();
        assert!(exact_poly_div(&n, &s).is_none());
    }

    #[test]
    fn divides_with_parameters() {
        let n = parse_expr("beta0*u*v + beta0*v^2").unwrap();
        let s = parse_expr("u + v").unwrap();
        let q = exact_poly_div(&n, &s).unwrap();
        assert_eq!(q, parse_expr("beta0*v").unwrap());
    }
}
