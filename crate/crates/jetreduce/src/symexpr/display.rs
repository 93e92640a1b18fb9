//! Grammar-compatible printing. `parse_expr(print(e))` canonicalizes back to `e`.

use std::fmt;

use num_traits::{One, Signed};

use super::expr::{Atom, Expr, Rat, Term};

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms().is_empty() {
            return write!(f, "0");
        }
        for (i, t) in self.terms().iter().enumerate() {
            if i == 0 {
                write_term(f, t, false)?;
            } else if t.coeff.is_negative() {
                write!(f, " - ")?;
                write_term(f, t, true)?;
            } else {
                write!(f, " + ")?;
                write_term(f, t, true)?;
            }
        }
        Ok(())
    }
}

fn write_rat(f: &mut fmt::Formatter<'_>, r: &Rat) -> fmt::Result {
    if r.is_integer() {
        write!(f, "{}", r.numer())
    } else {
        write!(f, "{}/{}", r.numer(), r.denom())
    }
}

fn write_term(f: &mut fmt::Formatter<'_>, t: &Term, abs: bool) -> fmt::Result {
    let coeff = if abs { t.coeff.abs() } else { t.coeff.clone() };
    if t.mono.is_one() {
        return write_rat(f, &coeff);
    }
    let mut lead = true;
    if coeff == -Rat::one() {
        write!(f, "-")?;
    } else if !coeff.is_one() {
        write_rat(f, &coeff)?;
        write!(f, "*")?;
        lead = false;
    }
    let _ = lead;
    for (i, (atom, exp)) in t.mono.factors.iter().enumerate() {
        if i > 0 {
            write!(f, "*")?;
        }
        write_atom(f, atom)?;
        if !exp.is_one() {
            if exp.is_integer() && exp.is_positive() {
                write!(f, "^{}", exp.numer())?;
            } else if exp.is_integer() {
                write!(f, "^({})", exp.numer())?;
            } else {
                write!(f, "^(")?;
                write_rat(f, exp)?;
                write!(f, ")")?;
            }
        }
    }
    Ok(())
}

fn write_atom(f: &mut fmt::Formatter<'_>, atom: &Atom) -> fmt::Result {
    match atom {
        Atom::Coord(c) => write!(f, "{c}"),
        Atom::Exp(e) => write!(f, "exp({e})"),
        Atom::Log(e) => write!(f, "log({e})"),
        Atom::Cosh(e) => write!(f, "cosh({e})"),
        Atom::Sinh(e) => write!(f, "sinh({e})"),
        Atom::Acosh(e) => write!(f, "acosh({e})"),
        Atom::Sum(e) => write!(f, "({e})"),
        Atom::Surd(r) => {
            write!(f, "(")?;
            write_rat(f, r)?;
            write!(f, ")")
        }
    }
}
