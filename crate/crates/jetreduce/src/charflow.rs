//! Characteristic vector fields V̄_G = V_G − Σ hⁱ D_i, strong-characteristics
//! checks against a filtration, closed-form flows with the jet-order
//! prolongation recursion Φ*(D_i f) = Σ_j B^j_i D_j(Φ*(f)), and a numeric
//! flow used as fallback and cross-check.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::RwLock;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::jetcalc::{apply_evolution, total_derivative, Generator};
use crate::symexpr::{
    diff_partial, eval_at, is_zero, sample_point, substitute, substitute_one, Coord, Expr,
    MultiIndex, Point, Rat,
};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum FlowError {
    #[error("generator depends on u_sigma with |sigma| >= 2, no first-order characteristic")]
    OrderTooHigh,
    #[error("first-order characteristics require a scalar equation (n = 1)")]
    NotScalar,
    #[error("declared flow does not match the characteristic field at {0}")]
    GeneratorMismatch(Coord),
    #[error("flow Jacobian is identically singular; the flow leaves the chart")]
    SingularJacobian,
    #[error("base pullback missing for {0}")]
    MissingBase(Coord),
    #[error("symbolic Jacobian inversion implemented for m <= 2, got m = {0}")]
    UnsupportedDimension(usize),
    #[error("flow escaped: |value| > 1e12 at parameter {param}")]
    FlowEscaped { param: f64 },
    #[error("numeric flow did not reach the target within the step limit")]
    StepLimit,
    #[error("numeric flow right-hand side needs {0}, not bound at the start point")]
    UnboundCoordinate(Coord),
    #[error("expression error: {0}")]
    Expr(String),
    #[error("flow parameter {0} occurs in the generator or shifts")]
    ParameterInField(String),
}

impl From<crate::symexpr::ExprError> for FlowError {
    fn from(e: crate::symexpr::ExprError) -> Self {
        FlowError::Expr(e.to_string())
    }
}

/// V̄_G = V_G − Σ hⁱ D_i.
#[derive(Clone, Debug)]
pub struct CharField {
    pub gen: Generator,
    pub shifts: Vec<Expr>,
}

impl CharField {
    pub fn new(gen: Generator, shifts: Vec<Expr>) -> CharField {
        assert_eq!(shifts.len(), gen.m, "one shift per independent variable");
        CharField { gen, shifts }
    }

    /// Vertical field (h = 0).
    pub fn vertical(gen: Generator) -> CharField {
        let m = gen.m;
        CharField::new(gen, vec![Expr::zero(); m])
    }

    /// V̄_G(e) = V_G(e) − Σ hⁱ·D_i(e).
    pub fn apply(&self, e: &Expr) -> Expr {
        let mut acc = apply_evolution(&self.gen, e);
        for (i, h) in self.shifts.iter().enumerate() {
            if h.is_zero_expr() {
                continue;
            }
            acc = acc.sub(&h.mul(&total_derivative(e, i + 1)));
        }
        acc
    }
}

/// Characteristic field of a scalar first-order generator:
/// V̄_F = V_F − Σ_i ∂_{u_i}(F) D_i.
pub fn first_order_char(f: &Generator) -> Result<CharField, FlowError> {
    if f.n != 1 {
        return Err(FlowError::NotScalar);
    }
    if f.order() >= 2 {
        return Err(FlowError::OrderTooHigh);
    }
    let comp = f.component(1);
    let shifts = (1..=f.m)
        .map(|i| {
            let ui = Coord::dep(1, MultiIndex::zero(f.m).bump(i));
            diff_partial(comp, &ui)
        })
        .collect();
    Ok(CharField::new(f.clone(), shifts))
}

/// Generators of a finitely generated subalgebra 𝒢₀ that is required to
/// contain the independent variables.
#[derive(Clone, Debug)]
pub struct FiltrationSpec {
    pub generators0: Vec<Expr>,
    pub max_check_order: u32,
}

impl FiltrationSpec {
    pub fn new(generators0: Vec<Expr>, max_check_order: u32) -> FiltrationSpec {
        FiltrationSpec { generators0, max_check_order }
    }
}

pub const FILTRATION_TOL: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct FiltrationReport {
    /// Per 𝒢₀ generator: worst row-space residual of ∇V̄(g) over the samples.
    pub residuals: Vec<f64>,
    /// Indices of generators whose image leaves the algebra.
    pub failures: Vec<usize>,
    pub passed: bool,
}

/// Tests V̄(𝒢₀) ⊆ 𝒢₀ numerically: for each generator g, the gradient of
/// V̄(g) with respect to all jet coordinates must lie in the row space of the
/// 𝒢₀ generators' Jacobian at every sampled point.
pub fn filtration_check(
    cf: &CharField,
    filt: &FiltrationSpec,
    samples: usize,
    seed: u64,
) -> Result<FiltrationReport, FlowError> {
    let samples = samples.max(20);
    let images: Vec<Expr> = filt.generators0.iter().map(|g| cf.apply(g)).collect();
    // coordinate set: everything occurring anywhere (excluding parameters,
    // which are constants for D_i and carry no gradient component of interest)
    let mut coords: BTreeSet<Coord> = BTreeSet::new();
    for e in filt.generators0.iter().chain(images.iter()) {
        coords.extend(e.coords());
    }
    let grad_coords: Vec<Coord> = coords.iter().filter(|c| !c.is_param()).cloned().collect();
    let all_coords: Vec<Coord> = coords.into_iter().collect();

    let jac_rows: Vec<Vec<Expr>> = filt
        .generators0
        .iter()
        .map(|g| grad_coords.iter().map(|c| diff_partial(g, c)).collect())
        .collect();
    let grads: Vec<Vec<Expr>> = images
        .iter()
        .map(|w| grad_coords.iter().map(|c| diff_partial(w, c)).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut residuals = vec![0.0f64; images.len()];
    let mut done = 0usize;
    let mut attempts = 0usize;
    while done < samples {
        attempts += 1;
        if attempts > samples * 50 {
            return Err(FlowError::Expr(
                "sampling failure in filtration_check".into(),
            ));
        }
        let p = sample_point(&all_coords, &mut rng);
        let Some(jt) = eval_matrix(&jac_rows, &p) else { continue };
        let mut ok = true;
        let mut point_res = vec![0.0f64; images.len()];
        for (gi, grad) in grads.iter().enumerate() {
            let Some(v) = eval_vector(grad, &p) else {
                ok = false;
                break;
            };
            // v in rowspace(J): least squares J^T λ = v
            let jt_t = jt.transpose();
            let sol = match jt_t.clone().svd(true, true).solve(&v, 1e-13) {
                Ok(s) => s,
                Err(_) => {
                    ok = false;
                    break;
                }
            };
            let res = (&jt_t * &sol - &v).norm() / (1.0 + v.norm());
            point_res[gi] = res;
        }
        if !ok {
            continue;
        }
        for (gi, r) in point_res.iter().enumerate() {
            residuals[gi] = residuals[gi].max(*r);
        }
        done += 1;
    }
    let failures: Vec<usize> = residuals
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > FILTRATION_TOL)
        .map(|(i, _)| i)
        .collect();
    Ok(FiltrationReport { passed: failures.is_empty(), residuals, failures })
}

fn eval_matrix(rows: &[Vec<Expr>], p: &Point) -> Option<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut m = DMatrix::zeros(nr, nc);
    for (i, row) in rows.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            let v = eval_at(e, p).ok()?;
            if !v.is_finite() {
                return None;
            }
            m[(i, j)] = v;
        }
    }
    Some(m)
}

fn eval_vector(exprs: &[Expr], p: &Point) -> Option<DVector<f64>> {
    let mut v = DVector::zeros(exprs.len());
    for (i, e) in exprs.iter().enumerate() {
        let x = eval_at(e, p).ok()?;
        if !x.is_finite() {
            return None;
        }
        v[i] = x;
    }
    Some(v)
}

/// Closed-form or numeric source of a flow.
#[derive(Clone, Debug, PartialEq)]
pub enum FlowSource {
    ClosedForm,
    Numeric,
}

/// A one-parameter flow given by coordinate pullbacks Φ*_a, prolonged to
/// arbitrary jet order on demand.
#[derive(Debug)]
pub struct FlowMap {
    pub field: CharField,
    /// Flow parameter symbol.
    pub param: Coord,
    base: BTreeMap<Coord, Expr>,
    cache: RwLock<BTreeMap<Coord, Expr>>,
    /// Inverse Jacobian B^j_i, built on first use.
    binv: RwLock<Option<Vec<Vec<Expr>>>>,
    pub source: FlowSource,
}

impl Clone for FlowMap {
    fn clone(&self) -> Self {
        FlowMap {
            field: self.field.clone(),
            param: self.param.clone(),
            base: self.base.clone(),
            cache: RwLock::new(self.cache.read().expect("lock").clone()),
            binv: RwLock::new(self.binv.read().expect("lock").clone()),
            source: self.source.clone(),
        }
    }
}

/// Registers a closed-form flow after verifying that its infinitesimal
/// generator matches the characteristic field: for every seeded coordinate c,
/// ∂_a(Φ*_a(c))|_{a=0} = V̄(c) and Φ*_0(c) = c.
pub fn register_closed_form_flow(
    cf: &CharField,
    param: &str,
    base: BTreeMap<Coord, Expr>,
) -> Result<FlowMap, FlowError> {
    let a = Coord::param(param);
    // the flow parameter must not occur in the field itself
    for e in cf.gen.components().iter().chain(cf.shifts.iter()) {
        if e.contains_coord(&a) {
            return Err(FlowError::ParameterInField(param.to_string()));
        }
    }
    for i in 1..=cf.gen.m {
        if !base.contains_key(&Coord::indep(i)) {
            return Err(FlowError::MissingBase(Coord::indep(i)));
        }
    }
    for k in 1..=cf.gen.n {
        if !base.contains_key(&Coord::dep(k, MultiIndex::zero(cf.gen.m))) {
            return Err(FlowError::MissingBase(Coord::dep(
                k,
                MultiIndex::zero(cf.gen.m),
            )));
        }
    }
    let zero = Expr::zero();
    for (c, e) in &base {
        // identity at a = 0
        let at0 = substitute_one(e, &a, &zero)?;
        if !is_zero(&at0.sub(&Expr::coord(c.clone()))) {
            return Err(FlowError::GeneratorMismatch(c.clone()));
        }
        // infinitesimal generator
        let da = diff_partial(e, &a);
        let da0 = substitute_one(&da, &a, &zero)?;
        if !is_zero(&da0.sub(&cf.apply(&Expr::coord(c.clone())))) {
            return Err(FlowError::GeneratorMismatch(c.clone()));
        }
    }
    Ok(FlowMap {
        field: cf.clone(),
        param: a,
        base,
        cache: RwLock::new(BTreeMap::new()),
        binv: RwLock::new(None),
        source: FlowSource::ClosedForm,
    })
}

impl FlowMap {
    pub fn m(&self) -> usize {
        self.field.gen.m
    }

    pub fn n(&self) -> usize {
        self.field.gen.n
    }

    /// Inverse Jacobian column B^j_i (inverse of A^j_i = D_i(Φ*(x^j))).
    fn inverse_jacobian(&self) -> Result<Vec<Vec<Expr>>, FlowError> {
        if let Some(b) = self.binv.read().expect("lock").as_ref() {
            return Ok(b.clone());
        }
        let m = self.m();
        let mut a = vec![vec![Expr::zero(); m]; m];
        for j in 1..=m {
            let px = self
                .base
                .get(&Coord::indep(j))
                .ok_or_else(|| FlowError::MissingBase(Coord::indep(j)))?;
            for (i, row) in a.iter_mut().enumerate().take(m) {
                row[j - 1] = total_derivative(px, i + 1);
            }
        }
        let b = invert_symbolic(&a)?;
        *self.binv.write().expect("lock") = Some(b.clone());
        Ok(b)
    }

    /// Pullback of a single coordinate, computed by the recursion
    /// Φ*(u_{σ+1_i}) = Σ_j B^j_i D_j(Φ*(u_σ)) and memoized.
    pub fn prolong(&self, c: &Coord) -> Result<Expr, FlowError> {
        if let Some(e) = self.base.get(c) {
            return Ok(e.clone());
        }
        match c {
            Coord::Param(_) => Ok(Expr::coord(c.clone())),
            Coord::Indep(_) => Err(FlowError::MissingBase(c.clone())),
            Coord::Dep { k, sigma } => {
                if let Some(hit) = self.cache.read().expect("lock").get(c) {
                    return Ok(hit.clone());
                }
                let i = sigma
                    .leading_direction()
                    .ok_or_else(|| FlowError::MissingBase(c.clone()))?;
                let tau = sigma.lower(i).expect("positive entry");
                let below = self.prolong(&Coord::dep(*k, tau))?;
                let binv = self.inverse_jacobian()?;
                let mut acc = Expr::zero();
                for j in 1..=self.m() {
                    let term = binv[j - 1][i - 1].mul(&total_derivative(&below, j));
                    acc = acc.add(&term);
                }
                self.cache
                    .write()
                    .expect("lock")
                    .insert(c.clone(), acc.clone());
                Ok(acc)
            }
        }
    }

    /// Pullback of an arbitrary expression: substitute every coordinate by its
    /// pullback (an algebra morphism).
    pub fn pullback(&self, e: &Expr) -> Result<Expr, FlowError> {
        let mut map = BTreeMap::new();
        for c in e.coords() {
            if c == self.param {
                continue;
            }
            if !c.is_param() {
                map.insert(c.clone(), self.prolong(&c)?);
            }
        }
        Ok(substitute(e, &map)?)
    }

    /// Substitute a concrete parameter value into a pulled-back expression.
    pub fn at_param(&self, e: &Expr, value: &Rat) -> Result<Expr, FlowError> {
        Ok(substitute_one(e, &self.param, &Expr::from_rat(value.clone()))?)
    }
}

/// Symbolic inverse by adjugate for m ≤ 2.
fn invert_symbolic(a: &[Vec<Expr>]) -> Result<Vec<Vec<Expr>>, FlowError> {
    match a.len() {
        1 => {
            let det = &a[0][0];
            if is_zero(det) {
                return Err(FlowError::SingularJacobian);
            }
            Ok(vec![vec![det.pow(&-Rat::from_integer(1.into()))?]])
        }
        2 => {
            let det = a[0][0].mul(&a[1][1]).sub(&a[0][1].mul(&a[1][0]));
            if is_zero(&det) {
                return Err(FlowError::SingularJacobian);
            }
            let inv_det = det.pow(&-Rat::from_integer(1.into()))?;
            Ok(vec![
                vec![a[1][1].mul(&inv_det), a[0][1].neg().mul(&inv_det)],
                vec![a[1][0].neg().mul(&inv_det), a[0][0].mul(&inv_det)],
            ])
        }
        m => Err(FlowError::UnsupportedDimension(m)),
    }
}

pub const ESCAPE_THRESHOLD: f64 = 1e12;

/// Integrates d(coord)/da = V̄(coord) for all coordinates up to `order` with
/// adaptive Runge-Kutta (step doubling, tolerance 1e-10). Coordinates are
/// ordered by jet order; values beyond `order` referenced by the right-hand
/// sides must be bound in the starting point.
pub fn numeric_flow(
    cf: &CharField,
    p: &Point,
    a: f64,
    order: u32,
) -> Result<Point, FlowError> {
    let m = cf.gen.m;
    let n = cf.gen.n;
    // state coordinates, ordered
    let mut state_coords: Vec<Coord> = Vec::new();
    for i in 1..=m {
        state_coords.push(Coord::indep(i));
    }
    let mut sigmas = vec![MultiIndex::zero(m)];
    let mut frontier = vec![MultiIndex::zero(m)];
    for _ in 0..order {
        let mut next = Vec::new();
        for s in &frontier {
            for dir in 1..=m {
                let b = s.bump(dir);
                if !sigmas.contains(&b) {
                    sigmas.push(b.clone());
                    next.push(b);
                }
            }
        }
        frontier = next;
    }
    sigmas.sort();
    for k in 1..=n {
        for s in &sigmas {
            state_coords.push(Coord::dep(k, s.clone()));
        }
    }
    state_coords.sort_by_key(|c| (c.order(), c.clone()));

    let rhs: Vec<Expr> = state_coords
        .iter()
        .map(|c| cf.apply(&Expr::coord(c.clone())))
        .collect();

    // initial state; coordinates referenced by the rhs but not in the state
    // are treated as constants from p (they must be bound)
    let mut extra: BTreeSet<Coord> = BTreeSet::new();
    for e in &rhs {
        extra.extend(e.coords());
    }
    let mut consts = Point::new();
    for c in extra {
        if state_coords.contains(&c) {
            continue;
        }
        match p.get(&c) {
            Some(v) => consts.set(c, v),
            None => return Err(FlowError::UnboundCoordinate(c)),
        }
    }
    let mut y: Vec<f64> = Vec::with_capacity(state_coords.len());
    for c in &state_coords {
        match p.get(c) {
            Some(v) => y.push(v),
            None => return Err(FlowError::UnboundCoordinate(c.clone())),
        }
    }

    let eval_rhs = |y: &[f64], out: &mut Vec<f64>| -> Result<(), FlowError> {
        let mut pt = consts.clone();
        for (c, v) in state_coords.iter().zip(y) {
            pt.set(c.clone(), *v);
        }
        out.clear();
        for e in &rhs {
            let v = eval_at(e, &pt).map_err(|e| FlowError::Expr(e.to_string()))?;
            out.push(v);
        }
        Ok(())
    };

    // adaptive RK4 by step doubling with local extrapolation; the error is
    // controlled against the initial scale (absolute control), which keeps a
    // numeric pole from drifting past the requested parameter
    let tol = 1e-10;
    let scale0 = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let total = a;
    if total == 0.0 {
        let mut out = p.clone();
        for (c, v) in state_coords.iter().zip(&y) {
            out.set(c.clone(), *v);
        }
        return Ok(out);
    }
    let dir = total.signum();
    let mut t = 0.0f64;
    let mut h = (total.abs() / 16.0).max(1e-8) * dir;
    let mut steps = 0usize;
    let mut k = vec![0.0; y.len()];
    while (t - total).abs() > 1e-14 && t.abs() < total.abs() {
        steps += 1;
        if steps > 200_000 {
            return Err(FlowError::StepLimit);
        }
        if (t + h - total) * dir > 0.0 {
            h = total - t;
        }
        let full = rk4_step(&eval_rhs, &y, h, &mut k);
        let half = full.as_ref().ok().and_then(|_| {
            let h1 = rk4_step(&eval_rhs, &y, h / 2.0, &mut k).ok()?;
            rk4_step(&eval_rhs, &h1, h / 2.0, &mut k).ok()
        });
        let (full, half2) = match (full, half) {
            (Ok(f), Some(h2))
                if f.iter().all(|v| v.is_finite()) && h2.iter().all(|v| v.is_finite()) =>
            {
                (f, h2)
            }
            _ => {
                // evaluation failed or overflowed: treat like a rejected step
                h /= 2.0;
                if h.abs() < 1e-13 {
                    return Err(FlowError::FlowEscaped { param: t });
                }
                continue;
            }
        };
        let mut err: f64 = 0.0;
        let mut ymax: f64 = 0.0;
        for (a, b) in full.iter().zip(&half2) {
            err = err.max((a - b).abs() / 15.0);
            ymax = ymax.max(b.abs());
        }
        if ymax > ESCAPE_THRESHOLD {
            return Err(FlowError::FlowEscaped { param: t });
        }
        if err <= tol * scale0 {
            t += h;
            // Richardson extrapolation of the half-step pair
            for (yi, (f, h2)) in y.iter_mut().zip(full.iter().zip(&half2)) {
                *yi = h2 + (h2 - f) / 15.0;
            }
            if err < tol * scale0 / 32.0 {
                h *= 2.0;
            }
        } else {
            h /= 2.0;
            if h.abs() < 1e-13 {
                return Err(FlowError::FlowEscaped { param: t });
            }
        }
    }
    let mut out = p.clone();
    for (c, v) in state_coords.iter().zip(&y) {
        out.set(c.clone(), *v);
    }
    Ok(out)
}

fn rk4_step(
    f: &impl Fn(&[f64], &mut Vec<f64>) -> Result<(), FlowError>,
    y: &[f64],
    h: f64,
    scratch: &mut Vec<f64>,
) -> Result<Vec<f64>, FlowError> {
    let n = y.len();
    f(y, scratch)?;
    let k1 = scratch.clone();
    let mut tmp: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * h * k1[i]).collect();
    f(&tmp, scratch)?;
    let k2 = scratch.clone();
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(&tmp, scratch)?;
    let k3 = scratch.clone();
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    f(&tmp, scratch)?;
    let k4 = scratch.clone();
    Ok((0..n)
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::parse_expr;

    fn transport_field() -> CharField {
        let g1 = Generator::scalar(parse_expr("u*u_x").unwrap());
        CharField::new(g1, vec![parse_expr("u").unwrap()])
    }

    fn transport_flow() -> FlowMap {
        let mut base = BTreeMap::new();
        base.insert(Coord::indep(1), parse_expr("x - a*u").unwrap());
        base.insert(Coord::dep1(1, 0), parse_expr("u").unwrap());
        base.insert(Coord::dep1(1, 1), parse_expr("u_x/(1 - a*u_x)").unwrap());
        register_closed_form_flow(&transport_field(), "a", base).unwrap()
    }

    #[test]
    fn characteristic_field_spec_examples() {
        // transport: V̄(x) = −u
        let cf = transport_field();
        let vx = cf.apply(&parse_expr("x").unwrap());
        assert_eq!(vx, parse_expr("-u").unwrap());
        // h = 0 keeps the field vertical
        let g = Generator::scalar(parse_expr("u_xx").unwrap());
        let cf0 = CharField::vertical(g);
        assert_eq!(
            cf0.apply(&parse_expr("u_x").unwrap()),
            parse_expr("u_xxx").unwrap()
        );
        // KdV G₂ = xu_x + 2u with h = x: V̄(u) = 2u, V̄(x) = −x
        let g2 = Generator::scalar(parse_expr("x*u_x + 2*u").unwrap());
        let cf2 = CharField::new(g2, vec![parse_expr("x").unwrap()]);
        assert_eq!(cf2.apply(&parse_expr("u").unwrap()), parse_expr("2*u").unwrap());
        assert_eq!(cf2.apply(&parse_expr("x").unwrap()), parse_expr("-x").unwrap());
    }

    #[test]
    fn first_order_char_spec_examples() {
        let f = Generator::scalar(parse_expr("u*u_x").unwrap());
        let cf = first_order_char(&f).unwrap();
        assert_eq!(cf.shifts[0], parse_expr("u").unwrap());

        let f = Generator::scalar(parse_expr("u").unwrap());
        let cf = first_order_char(&f).unwrap();
        assert!(cf.shifts[0].is_zero_expr());

        let f = Generator::scalar(parse_expr("u_xx").unwrap());
        assert!(matches!(first_order_char(&f), Err(FlowError::OrderTooHigh)));

        let f = Generator::new(vec![parse_expr("u_x").unwrap(), Expr::zero()], 1, 2).unwrap();
        assert!(matches!(first_order_char(&f), Err(FlowError::NotScalar)));
    }

    #[test]
    fn filtration_check_spec_examples() {
        // F = (v_xx, 0): strong characteristics with 𝒢₀ = <x, u, v, v_x, v_xx>
        let f = Generator::new(vec![parse_expr("v_xx").unwrap(), Expr::zero()], 1, 2).unwrap();
        let cf = CharField::vertical(f);
        let filt = FiltrationSpec::new(
            ["x", "u", "v", "v_x", "v_xx"]
                .iter()
                .map(|s| parse_expr(s).unwrap())
                .collect(),
            4,
        );
        let rep = filtration_check(&cf, &filt, 20, 11).unwrap();
        assert!(rep.passed, "residuals {:?}", rep.residuals);

        // heat G₁ = xu with 𝒢₀ = <x, u>, h = 0
        let g1 = Generator::scalar(parse_expr("x*u").unwrap());
        let cf = CharField::vertical(g1);
        let filt2 = FiltrationSpec::new(
            vec![parse_expr("x").unwrap(), parse_expr("u").unwrap()],
            4,
        );
        let rep = filtration_check(&cf, &filt2, 20, 11).unwrap();
        assert!(rep.passed);

        // F = u_xx with 𝒢₀ = <x, u> fails: u_xx is not a function of (x, u)
        let f = Generator::scalar(parse_expr("u_xx").unwrap());
        let cf = CharField::vertical(f);
        let rep = filtration_check(&cf, &filt2, 20, 11).unwrap();
        assert!(!rep.passed);
        assert_eq!(rep.failures, vec![1]);
    }

    #[test]
    fn register_flow_verifies_generator() {
        // correct transport flow accepted
        let _ = transport_flow();

        // heat dilation flow accepted
        let g2 = Generator::scalar(parse_expr("x^2*u").unwrap());
        let cf = CharField::vertical(g2);
        let mut base = BTreeMap::new();
        base.insert(Coord::indep(1), parse_expr("x").unwrap());
        base.insert(Coord::dep1(1, 0), parse_expr("exp(b*x^2)*u").unwrap());
        register_closed_form_flow(&cf, "b", base).unwrap();

        // wrong seed rejected at x
        let mut bad = BTreeMap::new();
        bad.insert(Coord::indep(1), parse_expr("x - 2*a*u").unwrap());
        bad.insert(Coord::dep1(1, 0), parse_expr("u").unwrap());
        match register_closed_form_flow(&transport_field(), "a", bad) {
            Err(FlowError::GeneratorMismatch(c)) => assert_eq!(c, Coord::indep(1)),
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn prolong_flow_spec_examples() {
        // transport: Φ*(u_xx) agrees with D_x(Φ*(u_x))/(1 − a·u_x)
        let fm = transport_flow();
        let pulled = fm.prolong(&Coord::dep1(1, 2)).unwrap();
        let ux_pulled = fm.prolong(&Coord::dep1(1, 1)).unwrap();
        let expect = total_derivative(&ux_pulled, 1)
            .div(&parse_expr("1 - a*u_x").unwrap())
            .unwrap();
        assert!(is_zero(&pulled.sub(&expect)));

        // identity at a = 0 for all prolonged coordinates
        for ord in 0..=3 {
            let c = Coord::dep1(1, ord);
            let e = fm.prolong(&c).unwrap();
            let at0 = fm.at_param(&e, &Rat::from_integer(0.into())).unwrap();
            assert!(is_zero(&at0.sub(&Expr::coord(c))), "order {ord}");
        }

        // heat two-parameter family: Φ*(u_x) = e^{ax+bx²}((a+2bx)u + u_x)
        // realized as the composition of the two single-parameter flows
        let ga = Generator::scalar(parse_expr("x*u").unwrap());
        let cfa = CharField::vertical(ga);
        let mut base_a = BTreeMap::new();
        base_a.insert(Coord::indep(1), parse_expr("x").unwrap());
        base_a.insert(Coord::dep1(1, 0), parse_expr("exp(a*x)*u").unwrap());
        let fa = register_closed_form_flow(&cfa, "a", base_a).unwrap();

        let gb = Generator::scalar(parse_expr("x^2*u").unwrap());
        let cfb = CharField::vertical(gb);
        let mut base_b = BTreeMap::new();
        base_b.insert(Coord::indep(1), parse_expr("x").unwrap());
        base_b.insert(Coord::dep1(1, 0), parse_expr("exp(b*x^2)*u").unwrap());
        let fb = register_closed_form_flow(&cfb, "b", base_b).unwrap();

        let ux = Expr::coord(Coord::dep1(1, 1));
        let composed = fa.pullback(&fb.pullback(&ux).unwrap()).unwrap();
        let expect =
            parse_expr("exp(a*x + b*x^2)*((a + 2*b*x)*u + u_x)").unwrap();
        assert!(is_zero(&composed.sub(&expect)));
    }

    #[test]
    fn numeric_flow_spec_examples() {
        let cf = transport_field();
        // a = 0 leaves the point unchanged
        let p = Point::new()
            .bind(Coord::indep(1), 1.0)
            .bind(Coord::dep1(1, 0), 2.0)
            .bind(Coord::dep1(1, 1), 3.0)
            .bind(Coord::dep1(1, 2), 0.5);
        let q = numeric_flow(&cf, &p, 0.0, 1).unwrap();
        assert_eq!(q.get(&Coord::indep(1)), Some(1.0));

        // transport at {x=1, u=2, u_x=3}, a = 0.1: x = 0.8, u = 2,
        // u_x = 3/(1 − 0.3)
        let q = numeric_flow(&cf, &p, 0.1, 1).unwrap();
        assert!((q.get(&Coord::indep(1)).unwrap() - 0.8).abs() < 1e-8);
        assert!((q.get(&Coord::dep1(1, 0)).unwrap() - 2.0).abs() < 1e-10);
        assert!(
            (q.get(&Coord::dep1(1, 1)).unwrap() - 3.0 / 0.7).abs() < 1e-8,
            "u_x = {}",
            q.get(&Coord::dep1(1, 1)).unwrap()
        );

        // pole of u_x/(1 − a·u_x): u_x = 2, a → 0.5 escapes
        let p = Point::new()
            .bind(Coord::indep(1), 1.0)
            .bind(Coord::dep1(1, 0), 2.0)
            .bind(Coord::dep1(1, 1), 2.0)
            .bind(Coord::dep1(1, 2), 1.0);
        match numeric_flow(&cf, &p, 0.5, 1) {
            Err(FlowError::FlowEscaped { param }) => {
                assert!(param > 0.0 && param <= 0.5);
            }
            other => panic!("expected escape, got {other:?}"),
        }
    }

    #[test]
    fn numeric_flow_group_law() {
        let cf = transport_field();
        let p = Point::new()
            .bind(Coord::indep(1), 1.2)
            .bind(Coord::dep1(1, 0), 0.7)
            .bind(Coord::dep1(1, 1), 0.9)
            .bind(Coord::dep1(1, 2), 0.4);
        let ab = numeric_flow(&cf, &p, 0.15, 1).unwrap();
        let ab2 = numeric_flow(&cf, &ab, 0.1, 1).unwrap();
        let direct = numeric_flow(&cf, &p, 0.25, 1).unwrap();
        for c in [Coord::indep(1), Coord::dep1(1, 0), Coord::dep1(1, 1)] {
            let a = ab2.get(&c).unwrap();
            let b = direct.get(&c).unwrap();
            assert!((a - b).abs() <= 1e-7, "{c}: {a} vs {b}");
        }
    }

    #[test]
    fn closed_form_matches_numeric_flow() {
        let fm = transport_flow();
        let cf = transport_field();
        let p = Point::new()
            .bind(Coord::indep(1), 1.3)
            .bind(Coord::dep1(1, 0), 0.8)
            .bind(Coord::dep1(1, 1), 0.6)
            .bind(Coord::dep1(1, 2), 0.3)
            .bind(Coord::dep1(1, 3), 0.2)
            .bind(Coord::dep1(1, 4), 0.1)
            .bind(Coord::dep1(1, 5), 0.05);
        let a = 0.21;
        let numeric = numeric_flow(&cf, &p, a, 4).unwrap();
        let mut pa = p.clone();
        pa.set(Coord::param("a"), a);
        for ord in 0..=4 {
            let c = Coord::dep1(1, ord);
            let sym = fm.prolong(&c).unwrap();
            let v = eval_at(&sym, &pa).unwrap();
            let w = numeric.get(&c).unwrap();
            assert!(
                (v - w).abs() <= 1e-7 * (1.0 + w.abs()),
                "order {ord}: closed {v} vs numeric {w}"
            );
        }
    }
}
