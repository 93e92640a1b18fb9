//! IEEE double evaluation of canonical expressions, plus a flattened compiled
//! form for grid-scale inner loops.

use std::collections::BTreeMap;

use num_traits::ToPrimitive;

use super::coord::Coord;
use super::expr::{Atom, Expr, Rat};

/// A point of (a finite truncation of) jet space: coordinate bindings.
#[derive(Clone, Debug, Default)]
pub struct Point(pub BTreeMap<Coord, f64>);

impl Point {
    pub fn new() -> Self {
        Point(BTreeMap::new())
    }

    pub fn bind(mut self, c: Coord, v: f64) -> Self {
        self.0.insert(c, v);
        self
    }

    pub fn set(&mut self, c: Coord, v: f64) {
        self.0.insert(c, v);
    }

    pub fn get(&self, c: &Coord) -> Option<f64> {
        self.0.get(c).copied()
    }
}

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum EvalError {
    #[error("unbound coordinate {0}")]
    Unbound(Coord),
    #[error("domain error: {0}")]
    Domain(String),
}

/// Evaluate at a point. Every coordinate occurring in the expression must be
/// bound.
pub fn eval_at(e: &Expr, p: &Point) -> Result<f64, EvalError> {
    Ok(eval_terms(e, p)?.0)
}

/// Evaluate returning `(value, scale)` where scale is the magnitude of the
/// largest top-level term; used by the relative zero test.
pub fn eval_scaled(e: &Expr, p: &Point) -> Result<(f64, f64), EvalError> {
    eval_terms(e, p)
}

fn eval_terms(e: &Expr, p: &Point) -> Result<(f64, f64), EvalError> {
    let mut sum = 0.0;
    let mut scale: f64 = 0.0;
    for t in e.terms() {
        let mut v = rat_f64(&t.coeff);
        for (atom, exp) in &t.mono.factors {
            let a = eval_atom(atom, p)?;
            v *= pow_checked(a, exp)?;
        }
        sum += v;
        scale = scale.max(v.abs());
    }
    Ok((sum, scale))
}

fn rat_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn pow_checked(base: f64, exp: &Rat) -> Result<f64, EvalError> {
    if exp.is_integer() {
        let n = exp.to_integer().to_i32().ok_or_else(|| {
            EvalError::Domain("exponent overflow".into())
        })?;
        if base == 0.0 && n < 0 {
            return Err(EvalError::Domain("zero to negative power".into()));
        }
        return Ok(base.powi(n));
    }
    let q = rat_f64(exp);
    if base < 0.0 {
        return Err(EvalError::Domain(format!(
            "fractional power of negative value {base}"
        )));
    }
    if base == 0.0 && q < 0.0 {
        return Err(EvalError::Domain("zero to negative power".into()));
    }
    Ok(base.powf(q))
}

fn eval_atom(atom: &Atom, p: &Point) -> Result<f64, EvalError> {
    match atom {
        Atom::Coord(c) => p.get(c).ok_or_else(|| EvalError::Unbound(c.clone())),
        Atom::Exp(f) => Ok(eval_terms(f, p)?.0.exp()),
        Atom::Log(f) => {
            let v = eval_terms(f, p)?.0;
            if v <= 0.0 {
                return Err(EvalError::Domain(format!("log of non-positive value {v}")));
            }
            Ok(v.ln())
        }
        Atom::Cosh(f) => Ok(eval_terms(f, p)?.0.cosh()),
        Atom::Sinh(f) => Ok(eval_terms(f, p)?.0.sinh()),
        Atom::Acosh(f) => {
            let v = eval_terms(f, p)?.0;
            if v < 1.0 {
                return Err(EvalError::Domain(format!("acosh of value {v} < 1")));
            }
            Ok(v.acosh())
        }
        Atom::Sum(f) => Ok(eval_terms(f, p)?.0),
        Atom::Surd(r) => Ok(rat_f64(r)),
    }
}

/// A stack program compiled from an expression against a fixed coordinate
/// schema; evaluation is allocation-free. Domain violations surface as
/// non-finite values rather than errors.
#[derive(Clone, Debug)]
pub struct CompiledExpr {
    ops: Vec<Op>,
    max_stack: usize,
    pub coords: Vec<Coord>,
}

#[derive(Clone, Debug)]
enum Op {
    Const(f64),
    Load(usize),
    PowI(i32),
    PowF(f64),
    Exp,
    Ln,
    Cosh,
    Sinh,
    Acosh,
    Mul,
    Add,
}

impl CompiledExpr {
    /// Compile against a schema: coordinate `coords[i]` reads slot `i` of the
    /// input slice. Every coordinate of `e` must appear in `coords`.
    pub fn compile(e: &Expr, coords: &[Coord]) -> Result<CompiledExpr, EvalError> {
        let index: BTreeMap<&Coord, usize> =
            coords.iter().enumerate().map(|(i, c)| (c, i)).collect();
        for c in e.coords() {
            if !index.contains_key(&c) {
                return Err(EvalError::Unbound(c));
            }
        }
        let mut ops = Vec::new();
        emit_expr(e, &index, &mut ops);
        let mut depth = 0usize;
        let mut max = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Load(_) => depth += 1,
                Op::Mul | Op::Add => depth -= 1,
                _ => {}
            }
            max = max.max(depth);
        }
        Ok(CompiledExpr { ops, max_stack: max.max(1), coords: coords.to_vec() })
    }

    pub fn eval(&self, slots: &[f64]) -> f64 {
        let mut stack = [0.0f64; 64];
        let mut heap;
        let buf: &mut [f64] = if self.max_stack <= 64 {
            &mut stack
        } else {
            heap = vec![0.0; self.max_stack];
            &mut heap
        };
        let mut sp = 0usize;
        for op in &self.ops {
            match op {
                Op::Const(v) => {
                    buf[sp] = *v;
                    sp += 1;
                }
                Op::Load(i) => {
                    buf[sp] = slots[*i];
                    sp += 1;
                }
                Op::PowI(n) => buf[sp - 1] = buf[sp - 1].powi(*n),
                Op::PowF(q) => buf[sp - 1] = buf[sp - 1].powf(*q),
                Op::Exp => buf[sp - 1] = buf[sp - 1].exp(),
                Op::Ln => buf[sp - 1] = buf[sp - 1].ln(),
                Op::Cosh => buf[sp - 1] = buf[sp - 1].cosh(),
                Op::Sinh => buf[sp - 1] = buf[sp - 1].sinh(),
                Op::Acosh => buf[sp - 1] = buf[sp - 1].acosh(),
                Op::Mul => {
                    buf[sp - 2] *= buf[sp - 1];
                    sp -= 1;
                }
                Op::Add => {
                    buf[sp - 2] += buf[sp - 1];
                    sp -= 1;
                }
            }
        }
        buf[sp - 1]
    }
}

fn emit_expr(e: &Expr, index: &BTreeMap<&Coord, usize>, ops: &mut Vec<Op>) {
    if e.terms().is_empty() {
        ops.push(Op::Const(0.0));
        return;
    }
    for (i, t) in e.terms().iter().enumerate() {
        ops.push(Op::Const(rat_f64(&t.coeff)));
        for (atom, exp) in &t.mono.factors {
            emit_atom(atom, index, ops);
            if !num_traits::One::is_one(exp) {
                if exp.is_integer() {
                    ops.push(Op::PowI(exp.to_integer().to_i32().unwrap_or(i32::MAX)));
                } else {
                    ops.push(Op::PowF(rat_f64(exp)));
                }
            }
            ops.push(Op::Mul);
        }
        if i > 0 {
            ops.push(Op::Add);
        }
    }
}

fn emit_atom(atom: &Atom, index: &BTreeMap<&Coord, usize>, ops: &mut Vec<Op>) {
    match atom {
        Atom::Coord(c) => ops.push(Op::Load(*index.get(c).expect("checked in compile"))),
        Atom::Exp(f) => {
            emit_expr(f, index, ops);
            ops.push(Op::Exp);
        }
        Atom::Log(f) => {
            emit_expr(f, index, ops);
            ops.push(Op::Ln);
        }
        Atom::Cosh(f) => {
            emit_expr(f, index, ops);
            ops.push(Op::Cosh);
        }
        Atom::Sinh(f) => {
            emit_expr(f, index, ops);
            ops.push(Op::Sinh);
        }
        Atom::Acosh(f) => {
            emit_expr(f, index, ops);
            ops.push(Op::Acosh);
        }
        Atom::Sum(f) => emit_expr(f, index, ops),
        Atom::Surd(r) => ops.push(Op::Const(rat_f64(r))),
    }
}
