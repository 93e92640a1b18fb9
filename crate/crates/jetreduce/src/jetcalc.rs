//! Jet-space differential operators: total derivatives, prolongation of
//! evolution vector fields, the induced bracket on generators, and the
//! sampled closure test for families of generators.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::symexpr::{
    diff_partial, eval_at, sample_point, Coord, Expr, MultiIndex, Point,
};

/// Total derivative D_i(e) = ∂_{x^i}(e) + Σ u^k_{σ+1_i} ∂_{u^k_σ}(e), the sum
/// truncated to the coordinates occurring in `e`.
pub fn total_derivative(e: &Expr, i: usize) -> Expr {
    let mut parts = vec![diff_partial(e, &Coord::indep(i))];
    for c in e.coords() {
        if let Coord::Dep { k, sigma } = &c {
            let up = Coord::dep(*k, sigma.bump(i));
            let d = diff_partial(e, &c);
            if !d.is_zero_expr() {
                parts.push(Expr::coord(up).mul(&d));
            }
        }
    }
    Expr::sum(&parts)
}

/// D^σ = (D_1)^{σ_1} ... (D_m)^{σ_m}; application order is immaterial.
pub fn total_derivative_multi(e: &Expr, sigma: &MultiIndex) -> Expr {
    let mut acc = e.clone();
    for (dir, &count) in sigma.0.iter().enumerate() {
        for _ in 0..count {
            acc = total_derivative(&acc, dir + 1);
        }
    }
    acc
}

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum JetError {
    #[error("generator has {got} components, expected n = {expected}")]
    ComponentCount { got: usize, expected: usize },
    #[error("mismatched generator dimensions: ({0}, {1}) vs ({2}, {3})")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("degenerate sampling: design matrix rank {rank} < {need} at all sampled points")]
    DegenerateSampling { rank: usize, need: usize },
}

/// Generator F = (f¹, ..., fⁿ) of an evolution vector field V_F, with a
/// memoized prolongation table D^σ(f^k).
#[derive(Clone, Debug)]
pub struct Generator {
    comps: Arc<Vec<Expr>>,
    pub m: usize,
    pub n: usize,
    cache: Arc<RwLock<HashMap<(usize, MultiIndex), Expr>>>,
}

impl PartialEq for Generator {
    fn eq(&self, other: &Self) -> bool {
        self.m == other.m && self.n == other.n && self.comps == other.comps
    }
}
impl Eq for Generator {}

impl Generator {
    pub fn new(comps: Vec<Expr>, m: usize, n: usize) -> Result<Generator, JetError> {
        if comps.len() != n {
            return Err(JetError::ComponentCount { got: comps.len(), expected: n });
        }
        Ok(Generator {
            comps: Arc::new(comps),
            m,
            n,
            cache: Arc::new(RwLock::new(HashMap::new())),
        })
    }

    /// Scalar generator in one independent variable.
    pub fn scalar(f: Expr) -> Generator {
        Generator::new(vec![f], 1, 1).expect("one component")
    }

    pub fn components(&self) -> &[Expr] {
        &self.comps
    }

    pub fn component(&self, k: usize) -> &Expr {
        &self.comps[k - 1]
    }

    /// Highest jet order over the components.
    pub fn order(&self) -> u32 {
        self.comps.iter().map(|f| f.jet_order()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(|f| f.is_zero_expr())
    }

    /// D^σ(f^k), memoized. Computed lazily by lowering σ one direction at a
    /// time; concurrent readers share the table.
    pub fn prolonged(&self, k: usize, sigma: &MultiIndex) -> Expr {
        if sigma.order() == 0 {
            return self.comps[k - 1].clone();
        }
        let key = (k, sigma.clone());
        if let Some(hit) = self.cache.read().expect("cache lock").get(&key) {
            return hit.clone();
        }
        let dir = sigma.leading_direction().expect("order > 0");
        let lower = sigma.lower(dir).expect("entry positive");
        let below = self.prolonged(k, &lower);
        let val = total_derivative(&below, dir);
        self.cache
            .write()
            .expect("cache lock")
            .insert(key, val.clone());
        val
    }
}

/// V_F(e) = Σ over dependent coordinates u^k_σ occurring in e of
/// D^σ(f^k) · ∂_{u^k_σ}(e).
pub fn apply_evolution(f: &Generator, e: &Expr) -> Expr {
    let mut parts = Vec::new();
    for c in e.coords() {
        if let Coord::Dep { k, sigma } = &c {
            if *k > f.n {
                continue;
            }
            let de = diff_partial(e, &c);
            if de.is_zero_expr() {
                continue;
            }
            parts.push(f.prolonged(*k, sigma).mul(&de));
        }
    }
    Expr::sum(&parts)
}

/// Generator bracket: [F, G] = H with H^k = V_F(g^k) − V_G(f^k), so that
/// [V_F, V_G] = V_H.
pub fn bracket(f: &Generator, g: &Generator) -> Result<Generator, JetError> {
    if f.m != g.m || f.n != g.n {
        return Err(JetError::DimensionMismatch(f.m, f.n, g.m, g.n));
    }
    let comps = (1..=f.n)
        .map(|k| {
            apply_evolution(f, g.component(k)).sub(&apply_evolution(g, f.component(k)))
        })
        .collect();
    Generator::new(comps, f.m, f.n)
}

/// Outcome of expressing one bracket in the span of the family.
#[derive(Clone, Debug, PartialEq)]
pub enum SpanCoeffs {
    /// Constant coefficients λ^h with [F_i, F_j] = Σ_h λ^h F_h.
    Constant(Vec<f64>),
    /// Pointwise solvable but the coefficients vary across sample points.
    NotConstant { spread: f64 },
    /// Residual above tolerance: the bracket leaves the span.
    NotInSpan { residual: f64 },
}

#[derive(Clone, Debug)]
pub struct ClosureReport {
    /// Symbolic brackets per (i, j), i < j (1-based indices).
    pub brackets: Vec<((usize, usize), Generator)>,
    /// Span expansion per pair, same order as `brackets`.
    pub coefficients: Vec<((usize, usize), SpanCoeffs)>,
    pub closed: bool,
}

impl ClosureReport {
    pub fn coeffs(&self, i: usize, j: usize) -> Option<&SpanCoeffs> {
        self.coefficients
            .iter()
            .find(|((a, b), _)| (*a, *b) == (i, j))
            .map(|(_, c)| c)
    }
}

pub const CLOSURE_TOL: f64 = 1e-6;

/// Sampled test of the necessary closure condition: every bracket
/// [F_i, F_j] must equal Σ_h λ^h_{i,j} F_h with λ constant.
///
/// Per sample point, the design matrix stacks evaluations of D^r(F_h^k) for
/// r = 0..=R over all components k; R is max(order)+2, raised to the family
/// size when needed so the per-point systems are square or overdetermined.
pub fn closure_report(
    gens: &[Generator],
    samples: usize,
    seed: u64,
) -> Result<ClosureReport, JetError> {
    assert!(!gens.is_empty(), "closure_report requires generators");
    assert!(samples >= 20, "closure_report requires samples >= 20");
    let s = gens.len();
    let m = gens[0].m;
    let n = gens[0].n;
    for g in gens {
        if g.m != m || g.n != n {
            return Err(JetError::DimensionMismatch(m, n, g.m, g.n));
        }
    }
    let max_order = gens.iter().map(|g| g.order()).max().unwrap_or(0);
    let r_max = ((max_order + 2) as usize).max(s);

    let mut brackets = Vec::new();
    let mut coefficients = Vec::new();
    let mut closed = true;

    // prolonged rows of the family, shared across pairs
    let dirs: Vec<MultiIndex> = derivative_rows(m, r_max);
    let row_exprs: Vec<Vec<Expr>> = gens
        .iter()
        .map(|g| {
            let mut rows = Vec::new();
            for k in 1..=n {
                for sigma in &dirs {
                    rows.push(g.prolonged(k, sigma));
                }
            }
            rows
        })
        .collect();

    for i in 0..s {
        for j in (i + 1)..s {
            let h = bracket(&gens[i], &gens[j])?;
            let coeffs = span_coefficients(&row_exprs, &h, &dirs, n, samples, seed)?;
            if !matches!(coeffs, SpanCoeffs::Constant(_)) {
                closed = false;
            }
            brackets.push(((i + 1, j + 1), h));
            coefficients.push(((i + 1, j + 1), coeffs));
        }
    }
    Ok(ClosureReport { brackets, coefficients, closed })
}

/// Expresses a single generator in the span of a family with constant
/// coefficients, by the same sampled least-squares machinery as
/// `closure_report`.
pub fn span_in_family(
    family: &[Generator],
    target: &Generator,
    samples: usize,
    seed: u64,
) -> Result<SpanCoeffs, JetError> {
    let s = family.len();
    let m = family[0].m;
    let n = family[0].n;
    for g in family {
        if g.m != m || g.n != n {
            return Err(JetError::DimensionMismatch(m, n, g.m, g.n));
        }
    }
    let max_order = family
        .iter()
        .chain(std::iter::once(target))
        .map(|g| g.order())
        .max()
        .unwrap_or(0);
    let r_max = ((max_order + 2) as usize).max(s);
    let dirs = derivative_rows(m, r_max);
    let row_exprs: Vec<Vec<Expr>> = family
        .iter()
        .map(|g| {
            let mut rows = Vec::new();
            for k in 1..=n {
                for sigma in &dirs {
                    rows.push(g.prolonged(k, sigma));
                }
            }
            rows
        })
        .collect();
    span_coefficients(&row_exprs, target, &dirs, n, samples, seed)
}

fn derivative_rows(m: usize, r_max: usize) -> Vec<MultiIndex> {
    // in one independent variable: D^0..D^r_max; in general: all σ with
    // |σ| ≤ r_max in direction-1 only is not enough, use total enumeration
    if m == 1 {
        (0..=r_max as u32).map(|r| MultiIndex(vec![r])).collect()
    } else {
        let mut out = vec![MultiIndex::zero(m)];
        let mut frontier = vec![MultiIndex::zero(m)];
        for _ in 0..r_max {
            let mut next = Vec::new();
            for sigma in &frontier {
                for dir in 1..=m {
                    let b = sigma.bump(dir);
                    if !out.contains(&b) {
                        out.push(b.clone());
                        next.push(b);
                    }
                }
            }
            frontier = next;
        }
        out.sort();
        out
    }
}

fn span_coefficients(
    row_exprs: &[Vec<Expr>],
    h: &Generator,
    dirs: &[MultiIndex],
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<SpanCoeffs, JetError> {
    let s = row_exprs.len();
    if h.is_zero() {
        return Ok(SpanCoeffs::Constant(vec![0.0; s]));
    }
    // rhs rows for the bracket
    let mut rhs_exprs = Vec::new();
    for k in 1..=n {
        for sigma in dirs {
            rhs_exprs.push(h.prolonged(k, sigma));
        }
    }
    // coordinates needed: everything in the row/rhs expressions
    let mut coords: BTreeSet<Coord> = BTreeSet::new();
    for rows in row_exprs {
        for e in rows {
            coords.extend(e.coords());
        }
    }
    for e in &rhs_exprs {
        coords.extend(e.coords());
    }
    let coords: Vec<Coord> = coords.into_iter().collect();

    let rows_per_point = rhs_exprs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_point: Vec<DVector<f64>> = Vec::new();
    let mut stacked_a: Vec<f64> = Vec::new();
    let mut stacked_b: Vec<f64> = Vec::new();
    let mut attempts = 0;
    let mut worst_residual: f64 = 0.0;
    let mut degenerate = 0usize;
    while per_point.len() < samples {
        attempts += 1;
        if attempts > samples * 50 {
            break;
        }
        let p = sample_point(&coords, &mut rng);
        let Some((a, b)) = eval_design(row_exprs, &rhs_exprs, rows_per_point, s, &p) else {
            continue;
        };
        // per-point least squares
        let svd = a.clone().svd(true, true);
        let rank = svd.rank(1e-9 * svd.singular_values[0].max(1.0));
        if rank < s {
            degenerate += 1;
            continue;
        }
        let sol = svd.solve(&b, 1e-12).map_err(|_| JetError::DegenerateSampling {
            rank,
            need: s,
        })?;
        let resid = (&a * &sol - &b).norm() / (1.0 + b.norm());
        worst_residual = worst_residual.max(resid);
        if resid > CLOSURE_TOL {
            return Ok(SpanCoeffs::NotInSpan { residual: resid });
        }
        for r in 0..a.nrows() {
            for c in 0..a.ncols() {
                stacked_a.push(a[(r, c)]);
            }
        }
        stacked_b.extend(b.iter().copied());
        per_point.push(sol);
    }
    if per_point.len() < samples {
        return Err(JetError::DegenerateSampling {
            rank: if degenerate > 0 { s - 1 } else { 0 },
            need: s,
        });
    }
    // constancy across points
    let mut mean = DVector::zeros(s);
    for sol in &per_point {
        mean += sol;
    }
    mean /= per_point.len() as f64;
    let mut spread: f64 = 0.0;
    for sol in &per_point {
        spread = spread.max((sol - &mean).amax());
    }
    if spread > CLOSURE_TOL {
        return Ok(SpanCoeffs::NotConstant { spread });
    }
    // global least squares over the stacked system for the reported λ
    let rows = stacked_b.len();
    let a = DMatrix::from_row_slice(rows, s, &stacked_a);
    let b = DVector::from_vec(stacked_b);
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|_| JetError::DegenerateSampling { rank: 0, need: s })?;
    Ok(SpanCoeffs::Constant(sol.iter().copied().collect()))
}

/// Evaluate the design matrix (rows × generators) and rhs at a point; None if
/// any evaluation hits a domain error.
fn eval_design(
    row_exprs: &[Vec<Expr>],
    rhs_exprs: &[Expr],
    rows: usize,
    s: usize,
    p: &Point,
) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let mut a = DMatrix::zeros(rows, s);
    for (col, exprs) in row_exprs.iter().enumerate() {
        for (row, e) in exprs.iter().enumerate() {
            let v = eval_at(e, p).ok()?;
            if !v.is_finite() {
                return None;
            }
            a[(row, col)] = v;
        }
    }
    let mut b = DVector::zeros(rows);
    for (row, e) in rhs_exprs.iter().enumerate() {
        let v = eval_at(e, p).ok()?;
        if !v.is_finite() {
            return None;
        }
        b[row] = v;
    }
    Some((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::{is_zero, parse_expr, rat_int, DEFAULT_SEED};

    fn g(src: &str) -> Generator {
        Generator::scalar(parse_expr(src).unwrap())
    }

    #[test]
    fn total_derivative_spec_examples() {
        let e = parse_expr("u").unwrap();
        assert_eq!(total_derivative(&e, 1), parse_expr("u_x").unwrap());

        let e = parse_expr("u*u_x").unwrap();
        assert_eq!(
            total_derivative(&e, 1),
            parse_expr("u_x^2 + u*u_xx").unwrap()
        );

        // differential consequence of the KdV seed
        let e = parse_expr("u_xx + (1/2)*u^2 - beta0*u").unwrap();
        assert_eq!(
            total_derivative(&e, 1),
            parse_expr("u_xxx + u*u_x - beta0*u_x").unwrap()
        );
    }

    #[test]
    fn total_derivative_multi_examples() {
        let e = parse_expr("u*u_x").unwrap();
        assert_eq!(total_derivative_multi(&e, &MultiIndex(vec![0])), e);
        assert_eq!(
            total_derivative_multi(&parse_expr("u").unwrap(), &MultiIndex(vec![2])),
            parse_expr("u_xx").unwrap()
        );
        // 2-d: D^{(1,1)}(u) = u_(1,1)
        let u2 = crate::symexpr::parse_expr_m("u", 2).unwrap();
        assert_eq!(
            total_derivative_multi(&u2, &MultiIndex(vec![1, 1])),
            crate::symexpr::parse_expr_m("u_(1,1)", 2).unwrap()
        );
    }

    #[test]
    fn total_derivatives_commute() {
        let e = crate::symexpr::parse_expr_m("u*u_(1,0) + exp(x1)*u_(0,1)", 2).unwrap();
        let d12 = total_derivative(&total_derivative(&e, 1), 2);
        let d21 = total_derivative(&total_derivative(&e, 2), 1);
        assert_eq!(d12, d21);
    }

    #[test]
    fn apply_evolution_spec_examples() {
        // V_{uu_x}(u) = u·u_x
        let f = g("u*u_x");
        assert_eq!(
            apply_evolution(&f, &parse_expr("u").unwrap()),
            parse_expr("u*u_x").unwrap()
        );
        // V_{u_xx}(u_x) = u_xxx (heat generator prolonged once)
        let f = g("u_xx");
        assert_eq!(
            apply_evolution(&f, &parse_expr("u_x").unwrap()),
            parse_expr("u_xxx").unwrap()
        );
        // n = 2: V_{(v_xx, 0)}(u_x) = v_xxx
        let f = Generator::new(
            vec![parse_expr("v_xx").unwrap(), Expr::zero()],
            1,
            2,
        )
        .unwrap();
        assert_eq!(
            apply_evolution(&f, &parse_expr("u_x").unwrap()),
            parse_expr("v_xxx").unwrap()
        );
        // V_F(u^k) = f^k exactly
        let f = g("u_xxx + u*u_x");
        assert_eq!(
            apply_evolution(&f, &parse_expr("u").unwrap()),
            parse_expr("u_xxx + u*u_x").unwrap()
        );
    }

    #[test]
    fn evolution_commutes_with_total_derivative() {
        let f = g("u*u_x + exp(x)*u");
        for src in ["u*u_xx", "x*u_x^2", "u^3 + u_x*u_xx"] {
            let e = parse_expr(src).unwrap();
            let lhs = apply_evolution(&f, &total_derivative(&e, 1));
            let rhs = total_derivative(&apply_evolution(&f, &e), 1);
            assert!(is_zero(&lhs.sub(&rhs)), "failed for {src}");
        }
    }

    #[test]
    fn bracket_spec_examples() {
        // [F, F] = 0
        let f = g("u*u_x");
        assert!(bracket(&f, &f).unwrap().is_zero());

        // heat: [xu, x²u] = 0 (abelian)
        let a = g("x*u");
        let b = g("x^2*u");
        assert!(bracket(&a, &b).unwrap().is_zero());

        // KdV: [G₁, G₂] with G₁ = 1, G₂ = xu_x + 2u equals 2 = 2·G₁
        let g1 = g("1");
        let g2 = g("x*u_x + 2*u");
        let h = bracket(&g1, &g2).unwrap();
        assert_eq!(h.component(1), &Expr::from_int(2));

        // transport pair: [uu_x, u] = −uu_x
        let a = g("u*u_x");
        let b = g("u");
        let h = bracket(&a, &b).unwrap();
        assert!(is_zero(
            &h.component(1).add(&parse_expr("u*u_x").unwrap())
        ));
    }

    #[test]
    fn bracket_bilinear_antisymmetric_jacobi() {
        let f = g("u*u_x");
        let gg = g("u_xx");
        let h = g("x*u");
        // antisymmetry
        let fg = bracket(&f, &gg).unwrap();
        let gf = bracket(&gg, &f).unwrap();
        assert!(is_zero(&fg.component(1).add(gf.component(1))));
        // bilinearity in the first slot: [2f + h, g] = 2[f,g] + [h,g]
        let two_f_plus_h = Generator::scalar(
            f.component(1).scale(&rat_int(2).into()).add(h.component(1)),
        );
        let lhs = bracket(&two_f_plus_h, &gg).unwrap();
        let hg = bracket(&h, &gg).unwrap();
        let rhs = fg
            .component(1)
            .scale(&rat_int(2).into())
            .add(hg.component(1));
        assert!(is_zero(&lhs.component(1).sub(&rhs)));
        // Jacobi identity
        let a = bracket(&f, &bracket(&gg, &h).unwrap()).unwrap();
        let b = bracket(&gg, &bracket(&h, &f).unwrap()).unwrap();
        let c = bracket(&h, &bracket(&f, &gg).unwrap()).unwrap();
        let total = a.component(1).add(b.component(1)).add(c.component(1));
        assert!(is_zero(&total));
    }

    #[test]
    fn closure_heat_family_closed() {
        let gens: Vec<Generator> = ["u_xx", "x*u", "x^2*u", "u_x", "x*u_x", "u"]
            .iter()
            .map(|s| g(s))
            .collect();
        let rep = closure_report(&gens, 20, DEFAULT_SEED).unwrap();
        assert!(rep.closed, "heat six-generator family must be closed");
    }

    #[test]
    fn closure_transport_pair_constant_lambda() {
        let gens = vec![g("u*u_x"), g("u")];
        let rep = closure_report(&gens, 20, DEFAULT_SEED).unwrap();
        assert!(rep.closed);
        match rep.coeffs(1, 2).unwrap() {
            SpanCoeffs::Constant(lambda) => {
                // [uu_x, u] = −uu_x, i.e. λ = (−1, 0)
                assert!((lambda[0] + 1.0).abs() < 1e-7, "lambda = {lambda:?}");
                assert!(lambda[1].abs() < 1e-7, "lambda = {lambda:?}");
            }
            other => panic!("expected constant coefficients, got {other:?}"),
        }
    }

    #[test]
    fn closure_not_in_span() {
        let gens = vec![g("u_xx"), g("u^2")];
        let rep = closure_report(&gens, 20, DEFAULT_SEED).unwrap();
        assert!(!rep.closed);
        assert!(matches!(
            rep.coeffs(1, 2).unwrap(),
            SpanCoeffs::NotInSpan { .. }
        ));
    }

    #[test]
    fn closure_single_generator_trivial() {
        let gens = vec![g("u_xx")];
        let rep = closure_report(&gens, 20, DEFAULT_SEED).unwrap();
        assert!(rep.closed);
        assert!(rep.brackets.is_empty());
    }
}
