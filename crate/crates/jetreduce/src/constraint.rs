//! Differential-constraint construction: transversality of characteristic
//! fields against a seed manifold, the parameter solve 𝚽*_α(gⁱ) = 0, the
//! constraint manifold K with its solved chart, and tangency verification
//! V_F(kdef)|_K = 0.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::charflow::{CharField, FlowError, FlowMap};
use crate::jetcalc::{apply_evolution, bracket, total_derivative, Generator, JetError, SpanCoeffs};
use crate::symexpr::expr::Monomial;
use crate::symexpr::solve::{clear_denominators, difficulty, solve_scalar};
use crate::symexpr::zero::{SAFE_HI, SAFE_LO};
use crate::symexpr::{
    diff_partial, eval_at, substitute, Atom, Coord, Expr, MultiIndex, Point, Rat, ZeroTest,
};

use num_traits::{One, Signed};

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("no transversal set of seed functions within the order cap")]
    NoTransversalSet,
    #[error("parameter solve failed at point: {0}")]
    ParameterSolveFailed(String),
    #[error("chart incomplete: cannot solve for {0}")]
    ChartIncomplete(Coord),
    #[error("seed sampling failed: {0}")]
    SeedSampling(String),
    #[error("flow error: {0}")]
    Flow(#[from] FlowError),
    #[error("jet error: {0}")]
    Jet(#[from] JetError),
    #[error("expression error: {0}")]
    Expr(String),
    #[error("no solution branch passes through the seed manifold")]
    NoSeedBranch,
}

impl From<crate::symexpr::ExprError> for ConstraintError {
    fn from(e: crate::symexpr::ExprError) -> Self {
        ConstraintError::Expr(e.to_string())
    }
}

/// Seed manifold 𝓗: zero set of `defs` and all their differential
/// consequences.
#[derive(Clone, Debug)]
pub struct SeedManifold {
    pub defs: Vec<Expr>,
    pub label: String,
    pub m: usize,
    pub n: usize,
}

/// One element of the adapted defining sequence of a seed manifold.
#[derive(Clone, Debug)]
pub struct SeedDef {
    pub expr: Expr,
    /// Highest dependent coordinate; the one the equation is solved for.
    pub leading: Coord,
    /// (index of the originating def, σ of the consequence).
    pub origin: (usize, MultiIndex),
}

impl SeedManifold {
    pub fn new(defs: Vec<Expr>, label: &str, m: usize, n: usize) -> SeedManifold {
        SeedManifold { defs: defs.clone(), label: label.to_string(), m, n }
    }

    /// Defs together with differential consequences D^σ(f), ordered by the
    /// jet order of their leading coordinate (then by def index), which makes
    /// the sequence adapted to the filtration.
    pub fn defining_sequence(&self, order_cap: u32) -> Vec<SeedDef> {
        let mut out = Vec::new();
        for (idx, f) in self.defs.iter().enumerate() {
            let mut sigmas = vec![MultiIndex::zero(self.m)];
            let mut frontier = vec![MultiIndex::zero(self.m)];
            let base_order = f.jet_order();
            while let Some(next_order) = frontier.first().map(|s| s.order()) {
                if base_order + next_order >= order_cap {
                    break;
                }
                let mut next = Vec::new();
                for s in &frontier {
                    for dir in 1..=self.m {
                        let b = s.bump(dir);
                        if !sigmas.contains(&b) {
                            sigmas.push(b.clone());
                            next.push(b);
                        }
                    }
                }
                frontier = next;
            }
            for sigma in sigmas {
                let e = crate::jetcalc::total_derivative_multi(f, &sigma);
                if let Some(lead) = leading_dep(&e) {
                    out.push(SeedDef { expr: e, leading: lead, origin: (idx, sigma) });
                }
            }
        }
        out.sort_by(|a, b| {
            (a.leading.order(), a.origin.0, a.origin.1.clone()).cmp(&(
                b.leading.order(),
                b.origin.0,
                b.origin.1.clone(),
            ))
        });
        out
    }
}

/// Highest dependent coordinate of an expression.
pub fn leading_dep(e: &Expr) -> Option<Coord> {
    e.coords().into_iter().filter(|c| c.is_dep()).max()
}

/// Draws points on the seed manifold: free coordinates uniformly from the
/// safe domain, leading coordinates solved per defining equation with
/// one-dimensional Newton iterations in ascending order.
pub struct SeedSampler {
    sequence: Vec<SeedDef>,
    free: Vec<Coord>,
    fixed: Point,
}

impl SeedSampler {
    /// `coords` is the full set of coordinates callers will evaluate;
    /// `fixed` pins selected coordinates (typically model parameters).
    pub fn new(
        seed: &SeedManifold,
        coords: &BTreeSet<Coord>,
        fixed: &Point,
    ) -> Result<SeedSampler, ConstraintError> {
        let max_order = coords.iter().map(|c| c.order()).max().unwrap_or(0);
        let sequence = seed.defining_sequence(max_order.max(1) + 1);
        let leads: BTreeSet<Coord> = sequence.iter().map(|d| d.leading.clone()).collect();
        let mut all: BTreeSet<Coord> = coords.clone();
        for d in &sequence {
            all.extend(d.expr.coords());
        }
        let free: Vec<Coord> = all
            .iter()
            .filter(|c| !leads.contains(c) && fixed.get(c).is_none())
            .cloned()
            .collect();
        Ok(SeedSampler { sequence, free, fixed: fixed.clone() })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Point, ConstraintError> {
        'outer: for _ in 0..200 {
            let mut p = self.fixed.clone();
            for c in &self.free {
                p.set(c.clone(), rng.random_range(SAFE_LO..SAFE_HI));
            }
            for d in &self.sequence {
                // 1-d Newton for the leading coordinate
                let mut ok = false;
                for _ in 0..6 {
                    let mut x = rng.random_range(SAFE_LO..SAFE_HI);
                    let dexpr = diff_partial(&d.expr, &d.leading);
                    let mut converged = false;
                    for _ in 0..60 {
                        p.set(d.leading.clone(), x);
                        let Ok(f) = eval_at(&d.expr, &p) else { break };
                        let Ok(df) = eval_at(&dexpr, &p) else { break };
                        if !f.is_finite() || !df.is_finite() || df.abs() < 1e-14 {
                            break;
                        }
                        let step = f / df;
                        x -= step;
                        if step.abs() <= 1e-13 * (1.0 + x.abs()) {
                            converged = f.abs() < 1e-9;
                            break;
                        }
                    }
                    if converged {
                        p.set(d.leading.clone(), x);
                        ok = true;
                        break;
                    }
                }
                if !ok {
                    continue 'outer;
                }
            }
            // final residual check
            let good = self.sequence.iter().all(|d| {
                eval_at(&d.expr, &p)
                    .map(|v| v.abs() <= 1e-8)
                    .unwrap_or(false)
            });
            if good {
                return Ok(p);
            }
        }
        Err(ConstraintError::SeedSampling(
            "no seed point found in 200 attempts".into(),
        ))
    }
}

#[derive(Clone, Debug)]
pub struct TransversalityReport {
    /// Indices into the defining sequence, in selection order (the recorded
    /// permutation making r_j = j after reordering).
    pub selected: Vec<usize>,
    /// The chosen transversal functions gⁱ.
    pub exprs: Vec<Expr>,
    /// Leading coordinates of the chosen functions.
    pub leads: Vec<Coord>,
    /// Smallest singular value of the h×h matrix over the samples.
    pub min_singular: f64,
    /// The adapted defining sequence that was scanned.
    pub sequence: Vec<SeedDef>,
}

pub const TRANSVERSALITY_TOL: f64 = 1e-6;

/// Scans the seed's defining sequence for h functions making the matrix
/// (V̄_{G_i}(g^j)) full-rank at sampled points of 𝓗.
pub fn transversality(
    charfields: &[CharField],
    seed: &SeedManifold,
    order_cap: u32,
    samples: usize,
    fixed: &Point,
    rng_seed: u64,
) -> Result<TransversalityReport, ConstraintError> {
    let h = charfields.len();
    let sequence = seed.defining_sequence(order_cap);
    // candidate images V̄_i(f_j)
    let images: Vec<Vec<Expr>> = sequence
        .iter()
        .map(|d| charfields.iter().map(|cf| cf.apply(&d.expr)).collect())
        .collect();
    let mut coords: BTreeSet<Coord> = BTreeSet::new();
    for row in &images {
        for e in row {
            coords.extend(e.coords());
        }
    }
    for d in &sequence {
        coords.extend(d.expr.coords());
    }
    let sampler = SeedSampler::new(seed, &coords, fixed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let samples: Vec<Point> = (0..samples.max(20))
        .map(|_| sampler.sample(&mut rng))
        .collect::<Result<_, _>>()?;

    let mut selected: Vec<usize> = Vec::new();
    for (j, img) in images.iter().enumerate() {
        if selected.len() == h {
            break;
        }
        let mut cols = selected.clone();
        cols.push(j);
        // min over samples of the smallest singular value of the h×|cols|
        let mut min_sv = f64::INFINITY;
        let mut valid = true;
        for p in &samples {
            let mut m = DMatrix::zeros(h, cols.len());
            for (cj, &cand) in cols.iter().enumerate() {
                for (ri, e) in images[cand].iter().enumerate() {
                    match eval_at(e, p) {
                        Ok(v) if v.is_finite() => m[(ri, cj)] = v,
                        _ => {
                            valid = false;
                            break;
                        }
                    }
                }
            }
            if !valid {
                break;
            }
            let svd = m.svd(false, false);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            min_sv = min_sv.min(smin / smax.max(1.0));
        }
        let _ = img;
        if valid && min_sv > TRANSVERSALITY_TOL {
            selected.push(j);
        }
    }
    if selected.len() < h {
        return Err(ConstraintError::NoTransversalSet);
    }
    // final min singular value of the square matrix
    let mut min_singular = f64::INFINITY;
    for p in &samples {
        let mut m = DMatrix::zeros(h, h);
        for (cj, &cand) in selected.iter().enumerate() {
            for (ri, e) in images[cand].iter().enumerate() {
                m[(ri, cj)] = eval_at(e, p).unwrap_or(f64::NAN);
            }
        }
        let svd = m.svd(false, false);
        min_singular = min_singular.min(svd.singular_values.min());
    }
    Ok(TransversalityReport {
        exprs: selected.iter().map(|&i| sequence[i].expr.clone()).collect(),
        leads: selected.iter().map(|&i| sequence[i].leading.clone()).collect(),
        selected,
        min_singular,
        sequence,
    })
}

/// Composite pullback 𝚽*_α(e) = Φ¹*(Φ²*(...Φ^h*(e)...)): the last flow in the
/// list is applied first.
pub fn composite_pullback(flows: &[FlowMap], e: &Expr) -> Result<Expr, ConstraintError> {
    let mut acc = e.clone();
    for fm in flows.iter().rev() {
        acc = fm.pullback(&acc)?;
    }
    Ok(acc)
}

/// Solved group parameters aⁱ = Aⁱ(x, u, u_σ), or a Newton fallback when the
/// pattern solvers do not apply.
#[derive(Clone, Debug)]
pub struct ParameterMap {
    /// Flow parameter coordinates, in flow (composition) order.
    pub params: Vec<Coord>,
    /// Symbolic solutions (same order as `params`); None on the numeric branch.
    pub solutions: Option<Vec<Expr>>,
    /// The pulled-back transversal equations 𝚽*_α(gⁱ).
    pub equations: Vec<Expr>,
    /// The transversal functions gⁱ.
    pub transversal_defs: Vec<Expr>,
    /// All solution branches found by the pattern solvers (the chosen one is
    /// `solutions`); exposed for callers that need the other branch.
    pub branches: Vec<Vec<Expr>>,
    pub chosen_branch: Option<usize>,
}

impl ParameterMap {
    /// Pointwise Newton solve of 𝚽*_α(gⁱ)(p) = 0 with initial guess α = 0.
    pub fn solve_at(&self, p: &Point) -> Result<Vec<f64>, ConstraintError> {
        let h = self.params.len();
        let jac: Vec<Vec<Expr>> = self
            .equations
            .iter()
            .map(|e| self.params.iter().map(|a| diff_partial(e, a)).collect())
            .collect();
        let mut alpha = vec![0.0f64; h];
        for _ in 0..50 {
            let mut pt = p.clone();
            for (a, v) in self.params.iter().zip(&alpha) {
                pt.set(a.clone(), *v);
            }
            let mut f = nalgebra::DVector::zeros(h);
            let mut j = DMatrix::zeros(h, h);
            for (i, e) in self.equations.iter().enumerate() {
                f[i] = eval_at(e, &pt)
                    .map_err(|e| ConstraintError::ParameterSolveFailed(e.to_string()))?;
                for (k, je) in jac[i].iter().enumerate() {
                    j[(i, k)] = eval_at(je, &pt)
                        .map_err(|e| ConstraintError::ParameterSolveFailed(e.to_string()))?;
                }
            }
            if f.amax() <= 1e-12 {
                return Ok(alpha);
            }
            let step = j
                .lu()
                .solve(&f)
                .ok_or_else(|| ConstraintError::ParameterSolveFailed("singular Jacobian".into()))?;
            for (a, s) in alpha.iter_mut().zip(step.iter()) {
                *a -= s;
            }
        }
        Err(ConstraintError::ParameterSolveFailed(format!("{:?}", p.0)))
    }
}

/// Solves 𝚽*_α(gⁱ) = 0 for the group parameters by sequential elimination
/// with the pattern solvers; falls back to the Newton marker.
pub fn solve_parameters(
    flows: &[FlowMap],
    g: &[Expr],
    seed: &SeedManifold,
    fixed: &Point,
    rng_seed: u64,
) -> Result<ParameterMap, ConstraintError> {
    let params: Vec<Coord> = flows.iter().map(|f| f.param.clone()).collect();
    let equations: Vec<Expr> = g
        .iter()
        .map(|gi| composite_pullback(flows, gi))
        .collect::<Result<_, _>>()?;

    let branches = solve_system(&equations, &params);
    let probe = ParameterMap {
        params: params.clone(),
        solutions: None,
        equations: equations.clone(),
        transversal_defs: g.to_vec(),
        branches: branches.clone(),
        chosen_branch: None,
    };
    if branches.is_empty() {
        return Ok(probe);
    }
    // verify and select in one pass: near the seed the Newton solve from
    // α = 0 follows the seed-connected branch; the symbolic branch must match
    // it pointwise (the construction is local, so global zero testing of the
    // substituted equations would reject valid local branches)
    let mut coords: BTreeSet<Coord> = BTreeSet::new();
    for b in &branches {
        for e in b {
            coords.extend(e.coords());
        }
    }
    for e in &equations {
        coords.extend(e.coords());
    }
    coords.retain(|c| !params.contains(c));
    let sampler = SeedSampler::new(seed, &coords, fixed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut tests: Vec<(Point, Vec<f64>)> = Vec::new();
    let mut attempts = 0;
    while tests.len() < 8 {
        attempts += 1;
        if attempts > 200 {
            break;
        }
        let mut p = match sampler.sample(&mut rng) {
            Ok(p) => p,
            Err(_) => break,
        };
        // perturb off the seed manifold, keeping coordinates positive-ish
        let keys: Vec<Coord> = p.0.keys().cloned().collect();
        for c in keys {
            if fixed.get(&c).is_some() {
                continue;
            }
            let v = p.get(&c).unwrap();
            p.set(c, v + 0.08 * rng.random_range(-1.0..1.0f64));
        }
        if let Ok(alpha) = probe.solve_at(&p) {
            tests.push((p, alpha));
        }
    }
    let mut chosen = None;
    if !tests.is_empty() {
        'branch: for (bi, branch) in branches.iter().enumerate() {
            for (p, alpha) in &tests {
                for (a_expr, a_num) in branch.iter().zip(alpha) {
                    match eval_at(a_expr, p) {
                        Ok(v) if (v - a_num).abs() <= 1e-7 * (1.0 + a_num.abs()) => {}
                        _ => continue 'branch,
                    }
                }
            }
            chosen = Some(bi);
            break;
        }
    }
    let Some(bi) = chosen else {
        // no branch matches the seed-connected solution: numeric fallback
        return Ok(probe);
    };
    Ok(ParameterMap {
        params,
        solutions: Some(branches[bi].clone()),
        equations,
        transversal_defs: g.to_vec(),
        chosen_branch: Some(bi),
        branches,
    })
}

/// Sequential elimination over (equation, unknown) pairs ordered by solver
/// difficulty; returns fully back-substituted solution branches.
fn solve_system(eqs: &[Expr], unknowns: &[Coord]) -> Vec<Vec<Expr>> {
    let mut results = Vec::new();
    let state: Vec<Option<Expr>> = vec![None; unknowns.len()];
    solve_system_rec(
        eqs.to_vec(),
        unknowns,
        state,
        &mut results,
        &mut 0usize,
    );
    // back-substitute inside each branch until fixed point
    let mut out = Vec::new();
    'branch: for sol in results {
        let mut exprs: Vec<Expr> = Vec::with_capacity(unknowns.len());
        for s in &sol {
            match s {
                Some(e) => exprs.push(e.clone()),
                None => continue 'branch,
            }
        }
        for _ in 0..unknowns.len() {
            let map: BTreeMap<Coord, Expr> = unknowns
                .iter()
                .cloned()
                .zip(exprs.iter().cloned())
                .collect();
            let mut changed = false;
            for e in exprs.iter_mut() {
                if e.coords().iter().any(|c| unknowns.contains(c)) {
                    if let Ok(ne) = substitute(e, &map) {
                        changed = true;
                        *e = ne;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if exprs
            .iter()
            .all(|e| !e.coords().iter().any(|c| unknowns.contains(c)))
        {
            out.push(exprs);
        }
    }
    out
}

fn solve_system_rec(
    eqs: Vec<Expr>,
    unknowns: &[Coord],
    state: Vec<Option<Expr>>,
    results: &mut Vec<Vec<Option<Expr>>>,
    budget: &mut usize,
) {
    if *budget > 64 || results.len() >= 16 {
        return;
    }
    if state.iter().all(|s| s.is_some()) {
        results.push(state);
        return;
    }
    // pick the easiest (equation, unknown) pair
    let mut best: Option<(u32, usize, usize)> = None;
    for (ei, e) in eqs.iter().enumerate() {
        if e.is_zero_expr() {
            continue;
        }
        for (ui, u) in unknowns.iter().enumerate() {
            if state[ui].is_some() {
                continue;
            }
            if let Some(d) = difficulty(e, u) {
                if best.map(|(bd, _, _)| d < bd).unwrap_or(true) {
                    best = Some((d, ei, ui));
                }
            }
        }
    }
    let Some((_, ei, ui)) = best else { return };
    *budget += 1;
    let roots = match solve_scalar(&eqs[ei], &unknowns[ui]) {
        Ok(r) => r,
        Err(_) => return,
    };
    for root in roots.into_iter().take(4) {
        let mut new_state = state.clone();
        new_state[ui] = Some(root.clone());
        let mut map = BTreeMap::new();
        map.insert(unknowns[ui].clone(), root);
        let mut new_eqs = Vec::with_capacity(eqs.len());
        let mut ok = true;
        for (k, e) in eqs.iter().enumerate() {
            if k == ei {
                continue;
            }
            match substitute(e, &map) {
                Ok(ne) => new_eqs.push(ne),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        solve_system_rec(new_eqs, unknowns, new_state, results, budget);
    }
}

/// A chart parameter coordinate: either a raw flow parameter or a declared
/// function of the raw parameters (e.g. β = e^{2b}).
#[derive(Clone, Debug)]
pub struct ParamCoord {
    pub name: Coord,
    /// Value in terms of the raw flow parameters.
    pub from_raw: Expr,
    /// Raw parameter expressed through the declared coordinates; used to
    /// rewrite chart expressions. Identity for raw coordinates.
    pub raw: Coord,
    pub raw_from_named: Expr,
}

impl ParamCoord {
    pub fn raw(param: &Coord) -> ParamCoord {
        ParamCoord {
            name: param.clone(),
            from_raw: Expr::coord(param.clone()),
            raw: param.clone(),
            raw_from_named: Expr::coord(param.clone()),
        }
    }
}

/// The solved chart (x, yʲ, aᵏ) of a constraint manifold: fiber coordinates
/// are the undetermined low-order jet coordinates; every other dependent
/// coordinate has a solved expression.
#[derive(Clone, Debug)]
pub struct Chart {
    pub m: usize,
    pub fiber: Vec<Coord>,
    pub params: Vec<ParamCoord>,
    solved: BTreeMap<Coord, Expr>,
}

impl Chart {
    /// Chart expression for a dependent coordinate, extended on demand by
    /// differentiating along the flat connection: D_i(a) = 0 on K and
    /// D_i(φ) = ∂_{x^i}φ + Σ_y ∂_y φ · φ_{y+1_i}.
    pub fn solved_for(&mut self, c: &Coord) -> Result<Expr, ConstraintError> {
        if let Some(e) = self.solved.get(c) {
            return Ok(e.clone());
        }
        if self.fiber.contains(c) {
            return Ok(Expr::coord(c.clone()));
        }
        let Coord::Dep { k, sigma } = c else {
            return Err(ConstraintError::ChartIncomplete(c.clone()));
        };
        let Some(i) = sigma.leading_direction() else {
            // order-0 coordinate that is neither fiber nor solved
            return Err(ConstraintError::ChartIncomplete(c.clone()));
        };
        let tau = sigma.lower(i).expect("positive entry");
        let below = self.solved_for(&Coord::dep(*k, tau))?;
        let ext = self.connection_derivative(&below, i)?;
        self.solved.insert(c.clone(), ext.clone());
        Ok(ext)
    }

    /// D_i along the chart: x-derivative plus fiber-coordinate advection.
    pub fn connection_derivative(&mut self, e: &Expr, i: usize) -> Result<Expr, ConstraintError> {
        let mut acc = diff_partial(e, &Coord::indep(i));
        for y in self.fiber.clone() {
            let de = diff_partial(e, &y);
            if de.is_zero_expr() {
                continue;
            }
            let Coord::Dep { k, sigma } = &y else { unreachable!("fiber is dependent") };
            let up = Coord::dep(*k, sigma.bump(i));
            let phi = self.solved_for(&up)?;
            acc = acc.add(&de.mul(&phi));
        }
        Ok(acc)
    }

    /// Substitute solved chart expressions for every dependent coordinate of
    /// `e`, producing an expression in (x, fiber, parameters).
    pub fn restrict(&mut self, e: &Expr) -> Result<Expr, ConstraintError> {
        let mut map = BTreeMap::new();
        for c in e.coords() {
            if c.is_dep() && !self.fiber.contains(&c) {
                map.insert(c.clone(), self.solved_for(&c)?);
            }
        }
        Ok(substitute(e, &map)?)
    }

    /// Rewrite raw flow parameters through the declared parameter coordinates.
    pub fn to_named_params(&self, e: &Expr) -> Result<Expr, ConstraintError> {
        let mut map = BTreeMap::new();
        for pc in &self.params {
            map.insert(pc.raw.clone(), pc.raw_from_named.clone());
        }
        Ok(substitute(e, &map)?)
    }

    pub fn solved_coords(&self) -> Vec<Coord> {
        self.solved.keys().cloned().collect()
    }
}

/// The constraint manifold K: defining functions plus the solved chart.
#[derive(Clone, Debug)]
pub struct ConstraintManifold {
    pub kdefs: Vec<Expr>,
    pub chart: Chart,
    pub seed: SeedManifold,
    pub flows: Vec<FlowMap>,
    pub parameter_map: ParameterMap,
}

/// Clears denominators, divides out every denominator base that still divides
/// the result exactly, removes the rational content and any common monomial
/// factor, and normalizes the leading sign: the polynomial normal form used
/// to compare constraint equations.
pub fn normalize_constraint(e: &Expr) -> Expr {
    let divisors = crate::symexpr::poly::sum_bases(e);
    let mut cleared = clear_denominators(e);
    if cleared.is_zero_expr() {
        return cleared;
    }
    loop {
        let mut divided = false;
        for d in &divisors {
            while let Some(q) = crate::symexpr::poly::exact_poly_div(&cleared, d) {
                if q.is_zero_expr() {
                    break;
                }
                cleared = q;
                divided = true;
            }
        }
        if !divided {
            break;
        }
    }
    if cleared.terms().len() == 1 {
        // single term: strip coefficient and nonvanishing factors entirely
        let t = &cleared.terms()[0];
        let factors: Vec<(Atom, Rat)> = t
            .mono
            .factors
            .iter()
            .filter(|(a, _)| !matches!(a, Atom::Exp(_) | Atom::Surd(_)))
            .cloned()
            .collect();
        return crate::symexpr::expr::finalize_monomial(Rat::one(), Monomial { factors });
    }
    let (_, common, base) = cleared.extract_content(true);
    // keep common factors that can vanish, normalized to positive powers
    let keep: Vec<(Atom, Rat)> = common
        .factors
        .into_iter()
        .filter(|(a, q)| !matches!(a, Atom::Exp(_) | Atom::Surd(_)) && q.is_positive())
        .collect();
    base.mul(&crate::symexpr::expr::finalize_monomial(
        Rat::one(),
        Monomial { factors: keep },
    ))
}

/// Builds K from the seed, the flows, and the solved parameters: kdefs are
/// 𝚽*_{A(p)}(h^j) for the remaining defining functions up to
/// `extra_defs_order`; the chart is built by solving the transversal
/// equations for their leading coordinates with the parameters symbolic.
pub fn build_constraint(
    seed: &SeedManifold,
    flows: &[FlowMap],
    pm: &ParameterMap,
    transversal: &TransversalityReport,
    extra_defs_order: u32,
    param_coords: Option<Vec<ParamCoord>>,
    fixed: &Point,
    rng_seed: u64,
) -> Result<ConstraintManifold, ConstraintError> {
    let Some(solutions) = &pm.solutions else {
        return Err(ConstraintError::ParameterSolveFailed(
            "symbolic parameter solutions required to build the constraint chart".into(),
        ))
    };
    let solution_map: BTreeMap<Coord, Expr> = pm
        .params
        .iter()
        .cloned()
        .zip(solutions.iter().cloned())
        .collect();

    // kdefs: pulled-back remaining defs with parameters replaced by A(p)
    let mut kdefs = Vec::new();
    for (i, d) in transversal.sequence.iter().enumerate() {
        if transversal.selected.contains(&i) {
            continue;
        }
        if d.leading.order() > extra_defs_order {
            continue;
        }
        let pulled = composite_pullback(flows, &d.expr)?;
        let with_params = substitute(&pulled, &solution_map)?;
        let normalized = normalize_constraint(&with_params);
        if !normalized.is_zero_expr() {
            kdefs.push(normalized);
        }
    }

    // chart: solve the transversal equations for their leading coordinates,
    // in ascending order, substituting previous solutions

    let max_fiber_order = transversal
        .sequence
        .iter()
        .map(|d| d.leading.order())
        .max()
        .unwrap_or(0);
    let mut fiber: Vec<Coord> = Vec::new();
    {
        // dependent coordinates of low order that are not leading anywhere
        let all_leads: BTreeSet<Coord> = transversal
            .sequence
            .iter()
            .map(|d| d.leading.clone())
            .collect();
        let mut sigmas = vec![MultiIndex::zero(seed.m)];
        let mut frontier = vec![MultiIndex::zero(seed.m)];
        for _ in 0..max_fiber_order {
            let mut next = Vec::new();
            for s in &frontier {
                for dir in 1..=seed.m {
                    let b = s.bump(dir);
                    if !sigmas.contains(&b) {
                        sigmas.push(b.clone());
                        next.push(b);
                    }
                }
            }
            frontier = next;
        }
        for k in 1..=seed.n {
            for s in &sigmas {
                let c = Coord::dep(k, s.clone());
                if !all_leads.contains(&c) {
                    fiber.push(c);
                }
            }
        }
        fiber.sort();
    }

    let params = param_coords.unwrap_or_else(|| pm.params.iter().map(ParamCoord::raw).collect());
    let mut chart = Chart { m: seed.m, fiber: fiber.clone(), params, solved: BTreeMap::new() };

    // sampler for branch selection: seed values extended with small parameters
    let mut branch_rng = ChaCha8Rng::seed_from_u64(rng_seed ^ 0x5eed);
    let mut seq_sorted: Vec<usize> = transversal.selected.clone();
    seq_sorted.sort_by_key(|&i| {
        (
            transversal.sequence[i].leading.order(),
            transversal.sequence[i].leading.clone(),
        )
    });
    for &idx in &seq_sorted {
        let d = &transversal.sequence[idx];
        let pulled = composite_pullback(flows, &d.expr)?;
        // substitute previously solved chart coordinates
        let mut map = BTreeMap::new();
        for c in pulled.coords() {
            if c.is_dep() && c != d.leading {
                if let Some(sol) = chart.solved.get(&c) {
                    map.insert(c.clone(), sol.clone());
                }
            }
        }
        let eq = substitute(&pulled, &map)?;
        let roots = solve_scalar(&eq, &d.leading)
            .map_err(|_| ConstraintError::ChartIncomplete(d.leading.clone()))?;
        let root = select_seed_branch(
            &roots,
            &eq,
            &d.leading,
            seed,
            &pm.params,
            fixed,
            &mut branch_rng,
        )?;
        chart.solved.insert(d.leading.clone(), root);
    }

    Ok(ConstraintManifold {
        kdefs,
        chart,
        seed: seed.clone(),
        flows: flows.to_vec(),
        parameter_map: pm.clone(),
    })
}

/// Picks the root branch connected to the seed: at sampled seed points with
/// small parameter values, the branch value must match the root that a
/// Newton iteration seeded from the seed-manifold value converges to.
fn select_seed_branch(
    roots: &[Expr],
    eq: &Expr,
    lead: &Coord,
    seed: &SeedManifold,
    params: &[Coord],
    fixed: &Point,
    rng: &mut ChaCha8Rng,
) -> Result<Expr, ConstraintError> {
    if roots.len() == 1 {
        return Ok(roots[0].clone());
    }
    let mut coords: BTreeSet<Coord> = eq.coords();
    for r in roots {
        coords.extend(r.coords());
    }
    coords.insert(lead.clone());
    coords.retain(|c| !params.contains(c));
    let sampler = SeedSampler::new(seed, &coords, fixed)?;
    let deq = diff_partial(eq, lead);
    let mut scores = vec![0.0f64; roots.len()];
    let mut votes = 0usize;
    for _ in 0..12 {
        let Ok(base) = sampler.sample(rng) else { continue };
        let seed_value = match base.get(lead) {
            Some(v) => v,
            None => continue,
        };
        let mut p = base.clone();
        for a in params {
            p.set(a.clone(), rng.random_range(1e-4..3e-4));
        }
        // continuation target: Newton from the seed value
        let mut x = seed_value;
        let mut ok = false;
        for _ in 0..50 {
            p.set(lead.clone(), x);
            let (Ok(f), Ok(df)) = (eval_at(eq, &p), eval_at(&deq, &p)) else { break };
            if !f.is_finite() || !df.is_finite() || df.abs() < 1e-13 {
                break;
            }
            let step = f / df;
            x -= step;
            if step.abs() <= 1e-12 * (1.0 + x.abs()) {
                ok = true;
                break;
            }
        }
        if !ok {
            continue;
        }
        p.set(lead.clone(), x);
        votes += 1;
        for (ri, r) in roots.iter().enumerate() {
            match eval_at(r, &p) {
                Ok(v) if v.is_finite() => {
                    scores[ri] += (v - x).abs() / (1.0 + x.abs());
                }
                _ => scores[ri] += 1e6,
            }
        }
    }
    if votes == 0 {
        return Err(ConstraintError::NoSeedBranch);
    }
    let best = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    if scores[best] / votes as f64 > 1e-6 {
        return Err(ConstraintError::NoSeedBranch);
    }
    Ok(roots[best].clone())
}

#[derive(Clone, Debug)]
pub struct TangencyReport {
    /// Per kdef: (passed, max residual over sample points).
    pub per_def: Vec<(bool, f64)>,
    pub passed: bool,
}

/// Checks V_F(kdef)|_K = 0 for every defining function of K by substituting
/// the solved chart and zero-testing.
pub fn tangency_check(
    f: &Generator,
    k: &mut ConstraintManifold,
    samples: usize,
    tol: f64,
    rng_seed: u64,
) -> Result<TangencyReport, ConstraintError> {
    let mut per_def = Vec::new();
    let mut passed = true;
    for kd in k.kdefs.clone() {
        let w = apply_evolution(f, &kd);
        let restricted = k.chart.restrict(&w)?;
        let (ok, max_res) = residual_zero_test(&restricted, samples, tol, rng_seed)?;
        passed &= ok;
        per_def.push((ok, max_res));
    }
    Ok(TangencyReport { per_def, passed })
}

/// Like tangency_check but for the characteristic fields V̄_{G_i}.
pub fn invariance_check(
    cf: &CharField,
    k: &mut ConstraintManifold,
    samples: usize,
    tol: f64,
    rng_seed: u64,
) -> Result<TangencyReport, ConstraintError> {
    let mut per_def = Vec::new();
    let mut passed = true;
    for kd in k.kdefs.clone() {
        let w = cf.apply(&kd);
        let restricted = k.chart.restrict(&w)?;
        let (ok, max_res) = residual_zero_test(&restricted, samples, tol, rng_seed)?;
        passed &= ok;
        per_def.push((ok, max_res));
    }
    Ok(TangencyReport { per_def, passed })
}

/// Max scaled residual of an expression over safe-domain samples.
fn residual_zero_test(
    e: &Expr,
    samples: usize,
    tol: f64,
    rng_seed: u64,
) -> Result<(bool, f64), ConstraintError> {
    if e.is_zero_expr() {
        return Ok((true, 0.0));
    }
    let coords: Vec<Coord> = e.coords().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut max_res: f64 = 0.0;
    let mut done = 0usize;
    let mut attempts = 0usize;
    while done < samples {
        attempts += 1;
        if attempts > samples * 100 {
            return Err(ConstraintError::SeedSampling(
                "residual sampling failed".into(),
            ));
        }
        let p = crate::symexpr::sample_point(&coords, &mut rng);
        match crate::symexpr::eval_scaled(e, &p) {
            Ok((v, scale)) if v.is_finite() => {
                max_res = max_res.max(v.abs() / (1.0 + scale));
                done += 1;
            }
            _ => continue,
        }
    }
    Ok((max_res <= tol, max_res))
}

#[derive(Clone, Debug)]
pub struct Theorem51Report {
    /// Per generator G_i: Some((μ_i, λ_i)) when [G_i, F] = μ_i F + Σ λ G_k
    /// with constant coefficients, None otherwise.
    pub per_generator: Vec<Option<(f64, Vec<f64>)>>,
    pub all_hold: bool,
}

/// Tests the bracket condition [G_i, F] = μ_i F + Σ_k λ_i^k G_k with constant
/// coefficients, using the sampled span machinery of the closure report.
pub fn theorem51_precondition(
    f: &Generator,
    gens: &[Generator],
    rng_seed: u64,
) -> Result<Theorem51Report, ConstraintError> {
    let mut family = vec![f.clone()];
    family.extend(gens.iter().cloned());
    let mut per_generator = Vec::new();
    let mut all_hold = true;
    for g in gens {
        let br = bracket(g, f)?;
        let coeffs = crate::jetcalc::span_in_family(&family, &br, 24, rng_seed)?;
        match coeffs {
            SpanCoeffs::Constant(c) => {
                per_generator.push(Some((c[0], c[1..].to_vec())));
            }
            _ => {
                all_hold = false;
                per_generator.push(None);
            }
        }
    }
    Ok(Theorem51Report { per_generator, all_hold })
}

/// Differential consequence helper re-exported for sequences.
pub fn seed_consequence(f: &Expr, sigma: &MultiIndex) -> Expr {
    crate::jetcalc::total_derivative_multi(f, sigma)
}

/// Convenience: D_x of an expression in one independent variable.
pub fn dx(e: &Expr) -> Expr {
    total_derivative(e, 1)
}
