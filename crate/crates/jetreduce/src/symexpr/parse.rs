//! Recursive-descent parser for the expression grammar.
//!
//! Identifiers `[a-zA-Z][a-zA-Z0-9]*`; jet coordinates `u`, `v` (with `_x`
//! suffixes or `u_3` for the third derivative, or `u[k]_(s1,...,sm)` in
//! several independent variables); independents `x` (or `x1..xm`); every other
//! identifier is a parameter. Operators `+ - * / ^`, functions
//! `exp log sqrt cosh sinh acosh`, rational literals `3`, `1/2`, `0.25`.

use num_bigint::BigInt;
use num_traits::{Pow, Zero};

use super::coord::{Coord, MultiIndex};
use super::expr::{
    acosh_expr, cosh_expr, exp_expr, log_expr, sinh_expr, sqrt_expr, Expr, Rat,
};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
#[error("parse error at byte {pos}: {msg}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

fn err<T>(pos: usize, msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { pos, msg: msg.into() })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(Rat),
    Ident(String),
    /// Jet coordinate: dependent index k (1-based) and multi-index.
    Jet(usize, MultiIndex),
    /// Independent variable index (1-based).
    Indep(usize),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    m: usize,
}

const FUNCS: &[&str] = &["exp", "log", "sqrt", "cosh", "sinh", "acosh"];

impl<'a> Lexer<'a> {
    fn tokens(mut self) -> Result<Vec<(usize, Tok)>, ParseError> {
        let mut out = Vec::new();
        loop {
            self.skip_ws();
            if self.pos >= self.src.len() {
                break;
            }
            let start = self.pos;
            let c = self.src[self.pos];
            let tok = match c {
                b'+' => {
                    self.pos += 1;
                    Tok::Plus
                }
                b'-' => {
                    self.pos += 1;
                    Tok::Minus
                }
                b'*' => {
                    self.pos += 1;
                    Tok::Star
                }
                b'/' => {
                    self.pos += 1;
                    Tok::Slash
                }
                b'^' => {
                    self.pos += 1;
                    Tok::Caret
                }
                b'(' => {
                    self.pos += 1;
                    Tok::LParen
                }
                b')' => {
                    self.pos += 1;
                    Tok::RParen
                }
                b'0'..=b'9' | b'.' => self.number()?,
                c if c.is_ascii_alphabetic() => self.ident()?,
                _ => return err(start, format!("unexpected character '{}'", c as char)),
            };
            out.push((start, tok));
        }
        Ok(out)
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn number(&mut self) -> Result<Tok, ParseError> {
        let start = self.pos;
        let mut int_part = String::new();
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            int_part.push(self.src[self.pos] as char);
            self.pos += 1;
        }
        let mut frac_part = String::new();
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                frac_part.push(self.src[self.pos] as char);
                self.pos += 1;
            }
            if frac_part.is_empty() && int_part.is_empty() {
                return err(start, "malformed number");
            }
        }
        if int_part.is_empty() && frac_part.is_empty() {
            return err(start, "malformed number");
        }
        let int_val: BigInt = if int_part.is_empty() {
            BigInt::zero()
        } else {
            int_part.parse().map_err(|_| ParseError {
                pos: start,
                msg: "malformed integer".into(),
            })?
        };
        let mut val = Rat::from_integer(int_val);
        if !frac_part.is_empty() {
            let num: BigInt = frac_part.parse().map_err(|_| ParseError {
                pos: start,
                msg: "malformed decimal".into(),
            })?;
            let den = BigInt::from(10u32).pow(frac_part.len() as u32);
            val += Rat::new(num, den);
        }
        Ok(Tok::Num(val))
    }

    fn ident(&mut self) -> Result<Tok, ParseError> {
        let start = self.pos;
        let mut name = String::new();
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric())
        {
            name.push(self.src[self.pos] as char);
            self.pos += 1;
        }
        // dependent-variable index: u[k]
        let mut dep_index: Option<usize> = None;
        if self.pos < self.src.len() && self.src[self.pos] == b'[' {
            if name != "u" {
                return err(self.pos, "indexed coordinates must use the base name 'u'");
            }
            self.pos += 1;
            let mut digits = String::new();
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                digits.push(self.src[self.pos] as char);
                self.pos += 1;
            }
            if self.pos >= self.src.len() || self.src[self.pos] != b']' {
                return err(start, "unterminated '[' in coordinate");
            }
            self.pos += 1;
            let k: usize = digits
                .parse()
                .map_err(|_| ParseError { pos: start, msg: "bad dependent index".into() })?;
            if k == 0 {
                return err(start, "dependent index is 1-based");
            }
            dep_index = Some(k);
        }
        // subscript
        if self.pos < self.src.len() && self.src[self.pos] == b'_' {
            let k = match (dep_index, name.as_str()) {
                (Some(k), _) => k,
                (None, "u") => 1,
                (None, "v") => 2,
                _ => {
                    return err(
                        start,
                        format!("subscript on '{name}' which is not a jet coordinate"),
                    )
                }
            };
            self.pos += 1;
            let sigma = self.subscript(start)?;
            return Ok(Tok::Jet(k, sigma));
        }
        if let Some(k) = dep_index {
            return Ok(Tok::Jet(k, MultiIndex::zero(self.m)));
        }
        match name.as_str() {
            "u" => Ok(Tok::Jet(1, MultiIndex::zero(self.m))),
            "v" => Ok(Tok::Jet(2, MultiIndex::zero(self.m))),
            "x" => Ok(Tok::Indep(1)),
            _ => {
                // x1..xm are independents
                if let Some(rest) = name.strip_prefix('x') {
                    if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                        let i: usize = rest.parse().map_err(|_| ParseError {
                            pos: start,
                            msg: "bad independent index".into(),
                        })?;
                        if i >= 1 && i <= self.m {
                            return Ok(Tok::Indep(i));
                        }
                        if i >= 1 && self.m == 1 && i == 1 {
                            return Ok(Tok::Indep(1));
                        }
                        return err(
                            start,
                            format!("independent index {i} out of range (m = {})", self.m),
                        );
                    }
                }
                Ok(Tok::Ident(name))
            }
        }
    }

    fn subscript(&mut self, start: usize) -> Result<MultiIndex, ParseError> {
        if self.pos >= self.src.len() {
            return err(start, "dangling '_' in coordinate");
        }
        let c = self.src[self.pos];
        if c == b'(' {
            // tuple form: (s1,...,sm)
            self.pos += 1;
            let mut entries = Vec::new();
            loop {
                let mut digits = String::new();
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    digits.push(self.src[self.pos] as char);
                    self.pos += 1;
                }
                if digits.is_empty() {
                    return err(self.pos, "expected digit in multi-index");
                }
                entries.push(digits.parse().map_err(|_| ParseError {
                    pos: start,
                    msg: "bad multi-index entry".into(),
                })?);
                if self.pos < self.src.len() && self.src[self.pos] == b',' {
                    self.pos += 1;
                    continue;
                }
                break;
            }
            if self.pos >= self.src.len() || self.src[self.pos] != b')' {
                return err(self.pos, "unterminated multi-index");
            }
            self.pos += 1;
            if entries.len() != self.m {
                return err(
                    start,
                    format!("multi-index length {} but m = {}", entries.len(), self.m),
                );
            }
            return Ok(MultiIndex(entries));
        }
        if c.is_ascii_digit() {
            // numeric total-order form (one independent variable): u_3
            let mut digits = String::new();
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                digits.push(self.src[self.pos] as char);
                self.pos += 1;
            }
            if self.m != 1 {
                return err(start, "numeric derivative suffix requires m = 1");
            }
            let n: u32 = digits
                .parse()
                .map_err(|_| ParseError { pos: start, msg: "bad derivative order".into() })?;
            return Ok(MultiIndex(vec![n]));
        }
        // letter form: counts of x, y, z
        let mut sigma = MultiIndex::zero(self.m);
        let mut any = false;
        while self.pos < self.src.len() {
            let dim = match self.src[self.pos] {
                b'x' => 1,
                b'y' => 2,
                b'z' => 3,
                _ => break,
            };
            if dim > self.m {
                return err(
                    self.pos,
                    format!("derivative direction '{}' needs m >= {dim}", self.src[self.pos] as char),
                );
            }
            sigma.0[dim - 1] += 1;
            any = true;
            self.pos += 1;
        }
        if !any {
            return err(self.pos, "empty derivative suffix");
        }
        Ok(sigma)
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    idx: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.idx).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.idx).map(|(_, t)| t.clone());
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        let pos = self.pos();
        match self.next() {
            Some(t) if t == want => Ok(()),
            _ => err(pos, format!("expected {what}")),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.next();
                    let rhs = self.term()?;
                    acc = acc.add(&rhs);
                }
                Some(Tok::Minus) => {
                    self.next();
                    let rhs = self.term()?;
                    acc = acc.sub(&rhs);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.next();
                    let rhs = self.unary()?;
                    acc = acc.mul(&rhs);
                }
                Some(Tok::Slash) => {
                    let pos = self.pos();
                    self.next();
                    let rhs = self.unary()?;
                    acc = acc
                        .div(&rhs)
                        .map_err(|e| ParseError { pos, msg: e.to_string() })?;
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.next();
            let inner = self.unary()?;
            return Ok(inner.neg());
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if matches!(self.peek(), Some(Tok::Caret)) {
            let pos = self.pos();
            self.next();
            // exponent: a (possibly negated/parenthesized) rational constant
            let exp_expr = self.unary()?;
            let q = exp_expr.as_rational().ok_or_else(|| ParseError {
                pos,
                msg: "exponent must be a rational constant".into(),
            })?;
            return base
                .pow(&q)
                .map_err(|e| ParseError { pos, msg: e.to_string() });
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.next() {
            Some(Tok::Num(r)) => Ok(Expr::from_rat(r)),
            Some(Tok::Jet(k, sigma)) => Ok(Expr::coord(Coord::dep(k, sigma))),
            Some(Tok::Indep(i)) => Ok(Expr::coord(Coord::indep(i))),
            Some(Tok::Ident(name)) => {
                if matches!(self.peek(), Some(Tok::LParen)) {
                    if !FUNCS.contains(&name.as_str()) {
                        return err(pos, format!("unknown function '{name}'"));
                    }
                    self.next();
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "')'")?;
                    let wrap = |e: Result<Expr, super::expr::ExprError>| {
                        e.map_err(|e| ParseError { pos, msg: e.to_string() })
                    };
                    return match name.as_str() {
                        "exp" => wrap(exp_expr(&arg)),
                        "log" => wrap(log_expr(&arg)),
                        "sqrt" => wrap(sqrt_expr(&arg)),
                        "cosh" => Ok(cosh_expr(&arg)),
                        "sinh" => Ok(sinh_expr(&arg)),
                        "acosh" => wrap(acosh_expr(&arg)),
                        _ => unreachable!(),
                    };
                }
                Ok(Expr::param(&name))
            }
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            _ => err(pos, "expected expression"),
        }
    }
}

/// Parse in one independent variable (the common case).
pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    parse_expr_m(text, 1)
}

/// Parse with `m` independent variables.
pub fn parse_expr_m(text: &str, m: usize) -> Result<Expr, ParseError> {
    assert!(m >= 1, "m must be at least 1");
    let toks = Lexer { src: text.as_bytes(), pos: 0, m }.tokens()?;
    let mut p = Parser { toks, idx: 0, end: text.len() };
    let e = p.expr()?;
    if p.idx != p.toks.len() {
        return err(p.pos(), "trailing input");
    }
    Ok(e)
}
