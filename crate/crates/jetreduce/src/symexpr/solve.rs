//! Pattern solvers for scalar equations in one unknown coordinate.
//!
//! Coverage is deliberately small: Laurent-polynomial (degree ≤ 2 after
//! clearing), exponential-isolatable (polynomial in exp(ξ) or a fractional
//! power of it), and a single square-root radical handled by
//! isolate-and-square. Everything else is left to the numeric fallback of the
//! callers.

use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

use super::calculus::diff_partial;
use super::coord::Coord;
use super::expr::{log_expr, rat, rat_int, Atom, Expr, ExprError, Rat};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum SolveError {
    #[error("no pattern solver applies to the equation")]
    NoPattern,
    #[error("polynomial degree {0} exceeds the solvable range")]
    DegreeTooHigh(u32),
    #[error("expression error: {0}")]
    Expr(#[from] ExprError),
}

/// Multiply through by every base that occurs with a negative exponent, so
/// the result is denominator-free. Expanding a cleared sum base can expose
/// negative powers nested inside it, so the pass iterates to a fixed point.
/// Zero sets may grow by the zero locus of the denominators; callers filter
/// candidate roots afterwards.
pub fn clear_denominators(e: &Expr) -> Expr {
    let mut out = e.clone();
    for _ in 0..32 {
        let mut mults: Vec<(Atom, Rat)> = Vec::new();
        for t in out.terms() {
            for (a, q) in &t.mono.factors {
                if q.is_negative() {
                    match mults.iter_mut().find(|(b, _)| b == a) {
                        Some((_, acc)) => {
                            if *q < -acc.clone() {
                                *acc = -q.clone();
                            }
                        }
                        None => mults.push((a.clone(), -q.clone())),
                    }
                }
            }
        }
        if mults.is_empty() {
            break;
        }
        // merge exponents at the monomial level so negative powers cancel
        // against the multiplier instead of meeting its expansion
        mults.sort_by(|(a, _), (b, _)| a.cmp(b));
        let mono = super::expr::Monomial { factors: mults };
        out = super::expr::mul_monomial(&out, &mono);
    }
    out
}

/// Remove factors common to all terms that can never vanish (exponentials,
/// surds) together with the rational content, and common powers of the
/// unknown-free part is left alone. Keeps the zero set within the safe domain.
fn strip_nonvanishing(e: &Expr) -> Expr {
    if e.terms().len() < 2 {
        // single term: strip exponential/surd factors and normalize coeff
        if let Some(t) = e.terms().first() {
            let factors: Vec<(Atom, Rat)> = t
                .mono
                .factors
                .iter()
                .filter(|(a, _)| !matches!(a, Atom::Exp(_) | Atom::Surd(_)))
                .cloned()
                .collect();
            return super::expr::finalize_monomial(
                Rat::one(),
                super::expr::Monomial { factors },
            );
        }
        return e.clone();
    }
    let (_, common, base) = e.extract_content(true);
    // re-attach common factors that can vanish (anything but exp/surd)
    let keep: Vec<(Atom, Rat)> = common
        .factors
        .into_iter()
        .filter(|(a, q)| !matches!(a, Atom::Exp(_) | Atom::Surd(_)) && q.is_positive())
        .collect();
    let kept =
        super::expr::finalize_monomial(Rat::one(), super::expr::Monomial { factors: keep });
    base.mul(&kept)
}

/// How the unknown occurs in an expression.
enum Occurrence {
    /// Only as powers of the bare coordinate.
    Bare,
    /// Only inside exp(ξ) powers.
    ExpOnly,
    /// Exactly one radical atom (fractional power of a sum) contains it,
    /// possibly along with bare occurrences.
    Radical(Expr, Rat),
    None,
    Unsupported,
}

fn classify(e: &Expr, unknown: &Coord) -> Occurrence {
    let mut bare = false;
    let mut exp_only = true;
    let mut exp_seen = false;
    let mut radical: Option<(Expr, Rat)> = None;
    let mut unsupported = false;
    for t in e.terms() {
        for (a, q) in &t.mono.factors {
            match a {
                Atom::Coord(c) if c == unknown => {
                    bare = true;
                    exp_only = false;
                }
                Atom::Coord(_) => {}
                Atom::Exp(arg) => {
                    if arg.contains_coord(unknown) {
                        // require the argument to be exactly the unknown
                        if arg == &Expr::coord(unknown.clone()) {
                            exp_seen = true;
                        } else {
                            unsupported = true;
                        }
                    }
                }
                Atom::Sum(s) => {
                    if s.contains_coord(unknown) {
                        exp_only = false;
                        if q.is_integer() {
                            // negative integer power of a sum containing the
                            // unknown: cleared beforehand, so unreachable
                            unsupported = true;
                        } else {
                            match &radical {
                                Some((r, _)) if r == s => {}
                                Some(_) => unsupported = true,
                                None => radical = Some((s.clone(), q.clone())),
                            }
                        }
                    }
                }
                Atom::Log(arg) | Atom::Cosh(arg) | Atom::Sinh(arg) | Atom::Acosh(arg) => {
                    if arg.contains_coord(unknown) {
                        unsupported = true;
                    }
                }
                Atom::Surd(_) => {}
            }
        }
    }
    if unsupported {
        return Occurrence::Unsupported;
    }
    if let Some((r, q)) = radical {
        return Occurrence::Radical(r, q);
    }
    if exp_seen && exp_only && !bare {
        return Occurrence::ExpOnly;
    }
    if bare && !exp_seen {
        return Occurrence::Bare;
    }
    if !bare && !exp_seen {
        return Occurrence::None;
    }
    Occurrence::Unsupported
}

/// Solve e = 0 for the unknown coordinate. Returns candidate roots (possibly
/// from several branches); callers must verify and select.
pub fn solve_scalar(e: &Expr, unknown: &Coord) -> Result<Vec<Expr>, SolveError> {
    solve_inner(e, unknown, 0)
}

fn solve_inner(e: &Expr, unknown: &Coord, depth: usize) -> Result<Vec<Expr>, SolveError> {
    if depth > 3 {
        return Err(SolveError::NoPattern);
    }
    let cleared = clear_denominators(e);
    let stripped = strip_nonvanishing(&cleared);
    if !stripped.contains_coord(unknown) {
        return Err(SolveError::NoPattern);
    }
    match classify(&stripped, unknown) {
        Occurrence::Bare => {
            let probe = Expr::coord(unknown.clone());
            solve_laurent(&stripped, unknown, &probe, |r| Ok(r))
        }
        Occurrence::ExpOnly => {
            let probe = super::expr::exp_expr(&Expr::coord(unknown.clone()))?;
            solve_laurent(&stripped, unknown, &probe, |r| {
                log_expr(&r).map_err(SolveError::from)
            })
        }
        Occurrence::Radical(r, q) => {
            // write e = t0 + t1·W with W = r^q_frac; move and square
            solve_radical(&stripped, unknown, &r, &q, depth)
        }
        Occurrence::None => Err(SolveError::NoPattern),
        Occurrence::Unsupported => Err(SolveError::NoPattern),
    }
}

/// Exponent of `probe`'s atom in a term (0 if absent).
fn probe_exponent(t: &super::expr::Term, probe_atom: &Atom) -> Rat {
    t.mono
        .factors
        .iter()
        .find(|(a, _)| a == probe_atom)
        .map(|(_, q)| q.clone())
        .unwrap_or_else(Rat::zero)
}

fn term_without(t: &super::expr::Term, probe_atom: &Atom) -> Expr {
    let factors: Vec<(Atom, Rat)> = t
        .mono
        .factors
        .iter()
        .filter(|(a, _)| a != probe_atom)
        .cloned()
        .collect();
    super::expr::finalize_monomial(t.coeff.clone(), super::expr::Monomial { factors })
}

fn rat_gcd(a: &Rat, b: &Rat) -> Rat {
    if a.is_zero() {
        return b.abs();
    }
    if b.is_zero() {
        return a.abs();
    }
    Rat::new(
        a.numer().gcd(b.numer()),
        a.denom().lcm(b.denom()),
    )
}

/// Solve a Laurent polynomial in `probe` (the unknown coordinate or exp of
/// it): shift exponents to start at zero, divide by their gcd so the
/// polynomial variable is w = probe^g, solve degree ≤ 2, and post-process
/// each root with `back` (identity or log).
fn solve_laurent(
    e: &Expr,
    _unknown: &Coord,
    probe: &Expr,
    back: impl Fn(Expr) -> Result<Expr, SolveError>,
) -> Result<Vec<Expr>, SolveError> {
    let probe_atom = match probe.terms() {
        [t] if t.mono.factors.len() == 1 && t.coeff.is_one() => t.mono.factors[0].0.clone(),
        _ => return Err(SolveError::NoPattern),
    };
    // shift exponents so the minimum is zero (multiplying by probe^(-min)
    // keeps the zero set away from probe = 0), then rescale by the gcd
    let mut min: Option<Rat> = None;
    for t in e.terms() {
        let q = probe_exponent(t, &probe_atom);
        min = Some(match min {
            None => q,
            Some(m) => {
                if q < m {
                    q
                } else {
                    m
                }
            }
        });
    }
    let min = min.unwrap_or_else(Rat::zero);
    let mut g = Rat::zero();
    for t in e.terms() {
        let q = probe_exponent(t, &probe_atom) - &min;
        g = rat_gcd(&g, &q);
    }
    if g.is_zero() {
        return Err(SolveError::NoPattern);
    }
    let mut coeffs: Vec<(i64, Expr)> = Vec::new();
    for t in e.terms() {
        let q = (probe_exponent(t, &probe_atom) - &min) / &g;
        debug_assert!(q.is_integer());
        let k = q.to_integer().to_i64().ok_or(SolveError::NoPattern)?;
        let rest = term_without(t, &probe_atom);
        match coeffs.iter_mut().find(|(d, _)| *d == k) {
            Some((_, acc)) => *acc = acc.add(&rest),
            None => coeffs.push((k, rest)),
        }
    }
    coeffs.retain(|(_, c)| !c.is_zero_expr());
    coeffs.sort_by_key(|(d, _)| *d);
    let deg = coeffs.last().map(|(d, _)| *d).unwrap_or(0);
    // roots for w = probe^g
    let roots_w: Vec<Expr> = match deg {
        0 => return Err(SolveError::NoPattern),
        1 => {
            let c1 = coeff_of(&coeffs, 1);
            let c0 = coeff_of(&coeffs, 0);
            vec![c0.neg().div(&c1)?]
        }
        2 => {
            let c2 = coeff_of(&coeffs, 2);
            let c1 = coeff_of(&coeffs, 1);
            let c0 = coeff_of(&coeffs, 0);
            if c0.is_zero_expr() {
                // w(c2 w + c1) = 0
                vec![Expr::zero(), c1.neg().div(&c2)?]
            } else if c1.is_zero_expr() {
                let sq = c0.neg().div(&c2)?.pow(&rat(1, 2))?;
                vec![sq.clone(), sq.neg()]
            } else {
                let disc = c1.mul(&c1).sub(&c2.mul(&c0).scale(&rat_int(4)));
                let sq = disc.pow(&rat(1, 2))?;
                let two_a = c2.scale(&rat_int(2));
                vec![
                    c1.neg().add(&sq).div(&two_a)?,
                    c1.neg().sub(&sq).div(&two_a)?,
                ]
            }
        }
        d => {
            return Err(SolveError::DegreeTooHigh(d as u32));
        }
    };
    let ginv = Rat::one() / &g;
    let mut out = Vec::new();
    for w in roots_w {
        // probe = w^(1/g)
        let val = match w.pow(&ginv) {
            Ok(v) => v,
            Err(_) => continue,
        };
        match back(val) {
            Ok(r) => out.push(r),
            Err(_) => continue,
        }
    }
    if out.is_empty() {
        return Err(SolveError::NoPattern);
    }
    Ok(out)
}

/// Cheap classification used by the system solver to pick the easiest
/// (equation, unknown) pair first. Lower is easier; None means no pattern.
pub fn difficulty(e: &Expr, unknown: &Coord) -> Option<u32> {
    let cleared = clear_denominators(e);
    let stripped = strip_nonvanishing(&cleared);
    if !stripped.contains_coord(unknown) {
        return None;
    }
    match classify(&stripped, unknown) {
        Occurrence::Bare => {
            let probe_atom = Atom::Coord(unknown.clone());
            Some(match laurent_degree(&stripped, &probe_atom) {
                Some(1) => 0,
                Some(2) => 2,
                _ => return None,
            })
        }
        Occurrence::ExpOnly => {
            let arg = Expr::coord(unknown.clone());
            let probe_atom = match super::expr::exp_expr(&arg) {
                Ok(p) => match p.terms() {
                    [t] if t.mono.factors.len() == 1 => t.mono.factors[0].0.clone(),
                    _ => return None,
                },
                Err(_) => return None,
            };
            Some(match laurent_degree(&stripped, &probe_atom) {
                Some(1) => 1,
                Some(2) => 3,
                _ => return None,
            })
        }
        Occurrence::Radical(_, _) => Some(4),
        _ => None,
    }
}

/// Effective degree after shift-and-gcd normalization.
fn laurent_degree(e: &Expr, probe_atom: &Atom) -> Option<i64> {
    let mut min: Option<Rat> = None;
    for t in e.terms() {
        let q = probe_exponent(t, probe_atom);
        min = Some(match min {
            None => q,
            Some(m) => {
                if q < m {
                    q
                } else {
                    m
                }
            }
        });
    }
    let min = min?;
    let mut g = Rat::zero();
    for t in e.terms() {
        g = rat_gcd(&g, &(probe_exponent(t, probe_atom) - &min));
    }
    if g.is_zero() {
        return None;
    }
    let mut deg: i64 = 0;
    let mut degs: Vec<(i64, Expr)> = Vec::new();
    for t in e.terms() {
        let k = ((probe_exponent(t, probe_atom) - &min) / &g)
            .to_integer()
            .to_i64()?;
        let rest = term_without(t, probe_atom);
        match degs.iter_mut().find(|(d, _)| *d == k) {
            Some((_, acc)) => *acc = acc.add(&rest),
            None => degs.push((k, rest)),
        }
    }
    degs.retain(|(_, c)| !c.is_zero_expr());
    for (k, _) in &degs {
        deg = deg.max(*k);
    }
    Some(deg)
}

fn coeff_of(coeffs: &[(i64, Expr)], d: i64) -> Expr {
    coeffs
        .iter()
        .find(|(k, _)| *k == d)
        .map(|(_, c)| c.clone())
        .unwrap_or_else(Expr::zero)
}

/// Isolate a single radical W = r^q (q fractional) and square it away:
/// e = T0 + T1·W ⇒ T0² − T1²·W² = 0 (when 2q is integral), then recurse.
fn solve_radical(
    e: &Expr,
    unknown: &Coord,
    r: &Expr,
    _q: &Rat,
    depth: usize,
) -> Result<Vec<Expr>, SolveError> {
    let atom = Atom::Sum(r.clone());
    // split into radical-carrying exponent classes; only handle half-integers
    let mut t0 = Expr::zero();
    let mut t1 = Expr::zero();
    for t in e.terms() {
        let q = probe_exponent(t, &atom);
        if q.is_zero() {
            t0 = t0.add(&super::expr::finalize_monomial(
                t.coeff.clone(),
                t.mono.clone(),
            ));
        } else {
            let doubled = &q * rat_int(2);
            if !doubled.is_integer() {
                return Err(SolveError::NoPattern);
            }
            // factor the half-integer power: q = n + 1/2 with n integer
            let n = (&q - rat(1, 2)).clone();
            if !n.is_integer() {
                return Err(SolveError::NoPattern);
            }
            let rest = term_without(t, &atom);
            let extra = r.pow(&n)?;
            t1 = t1.add(&rest.mul(&extra));
        }
    }
    if t1.is_zero_expr() {
        return Err(SolveError::NoPattern);
    }
    // T0 + T1·sqrt(r) = 0  ⇒  T0² = T1²·r
    let squared = t0.mul(&t0).sub(&t1.mul(&t1).mul(r));
    solve_inner(&squared, unknown, depth + 1)
}

/// Derivative of an equation with respect to the unknown; used by callers for
/// Newton fallbacks.
pub fn d_unknown(e: &Expr, unknown: &Coord) -> Expr {
    diff_partial(e, unknown)
}
