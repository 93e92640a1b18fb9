//! End-to-end construction checks for the built-in reductions, driven by
//! hand-assembled flows (the problems module packages the same data).

use std::collections::BTreeMap;

use jetreduce::charflow::{register_closed_form_flow, CharField, FlowMap};
use jetreduce::constraint::{
    build_constraint, normalize_constraint, solve_parameters, tangency_check, theorem51_precondition,
    transversality, SeedManifold,
};
use jetreduce::jetcalc::Generator;
use jetreduce::symexpr::{is_zero, parse_expr, Coord, Expr, Point};

fn scalar_gen(src: &str) -> Generator {
    Generator::scalar(parse_expr(src).unwrap())
}

fn flow(
    gen: &str,
    shifts: &[&str],
    param: &str,
    base: &[(&str, &str)],
) -> FlowMap {
    let g = scalar_gen(gen);
    let shifts = shifts.iter().map(|s| parse_expr(s).unwrap()).collect();
    let cf = CharField::new(g, shifts);
    let mut map = BTreeMap::new();
    for (c, e) in base {
        let coord = match *c {
            "x" => Coord::indep(1),
            "u" => Coord::dep1(1, 0),
            "u_x" => Coord::dep1(1, 1),
            other => panic!("unknown base coord {other}"),
        };
        map.insert(coord, parse_expr(e).unwrap());
    }
    register_closed_form_flow(&cf, param, map).unwrap()
}

fn heat_flows() -> Vec<FlowMap> {
    vec![
        flow("x*u", &["0"], "a", &[("x", "x"), ("u", "exp(a*x)*u")]),
        flow("x^2*u", &["0"], "b", &[("x", "x"), ("u", "exp(b*x^2)*u")]),
    ]
}

#[test]
fn heat_construction_reproduces_paper_formulas() {
    let seed = SeedManifold::new(vec![parse_expr("u_x").unwrap()], "heat-seed", 1, 1);
    let flows = heat_flows();
    let fields: Vec<CharField> = flows.iter().map(|f| f.field.clone()).collect();
    let fixed = Point::new();

    // transversality picks (u_x, u_xx)
    let tr = transversality(&fields, &seed, 4, 20, &fixed, 17).unwrap();
    assert_eq!(tr.leads, vec![Coord::dep1(1, 1), Coord::dep1(1, 2)]);
    assert!(tr.min_singular > 1e-6);

    // parameter solve: a = ((u·u_xx − u_x²)x − u·u_x)/u², b = (u_x² − u·u_xx)/(2u²)
    let pm = solve_parameters(&flows, &tr.exprs, &seed, &fixed, 17).unwrap();
    let sols = pm.solutions.as_ref().expect("symbolic branch");
    let a_expected = parse_expr("((u*u_xx - u_x^2)*x - u*u_x)/u^2").unwrap();
    let b_expected = parse_expr("(u_x^2 - u*u_xx)/(2*u^2)").unwrap();
    assert!(is_zero(&sols[0].sub(&a_expected)), "a = {}", sols[0]);
    assert!(is_zero(&sols[1].sub(&b_expected)), "b = {}", sols[1]);

    // point already on the seed: alpha = 0
    let on_seed = Point::new()
        .bind(Coord::indep(1), 0.7)
        .bind(Coord::dep1(1, 0), 1.3)
        .bind(Coord::dep1(1, 1), 0.0)
        .bind(Coord::dep1(1, 2), 0.0);
    for s in sols {
        let v = jetreduce::symexpr::eval_at(s, &on_seed).unwrap();
        assert!(v.abs() < 1e-12, "alpha on seed = {v}");
    }

    // constraint: u_xxx = 3u_x·u_xx/u − 2u_x³/u²
    let mut k = build_constraint(&seed, &flows, &pm, &tr, 4, None, &fixed, 17).unwrap();
    let expected = normalize_constraint(
        &parse_expr("u_xxx - 3*u_x*u_xx/u + 2*u_x^3/u^2").unwrap(),
    );
    let found = k
        .kdefs
        .iter()
        .any(|kd| is_zero(&kd.sub(&expected)) || is_zero(&kd.add(&expected)));
    assert!(
        found,
        "expected kdef {expected}, got {:?}",
        k.kdefs.iter().map(|e| e.to_string()).collect::<Vec<_>>()
    );

    // chart: u_x = −(a + 2bx)u, u_xx = ((a + 2bx)² − 2b)u
    let ux = k.chart.solved_for(&Coord::dep1(1, 1)).unwrap();
    let ux_expected = parse_expr("-(a + 2*b*x)*u").unwrap();
    assert!(is_zero(&ux.sub(&ux_expected)), "u_x chart = {ux}");
    let uxx = k.chart.solved_for(&Coord::dep1(1, 2)).unwrap();
    let uxx_expected = parse_expr("((2*b*x + a)^2 - 2*b)*u").unwrap();
    assert!(is_zero(&uxx.sub(&uxx_expected)), "u_xx chart = {uxx}");

    // tangency: V_F in TK for F = u_xx; fails for F = u_xxx
    let f = scalar_gen("u_xx");
    let rep = tangency_check(&f, &mut k, 20, 1e-9, 17).unwrap();
    assert!(rep.passed, "heat tangency: {:?}", rep.per_def);

    let f_zero = scalar_gen("0");
    let rep = tangency_check(&f_zero, &mut k, 20, 1e-9, 17).unwrap();
    assert!(rep.passed);

    let f_bad = scalar_gen("u_xxx");
    let rep = tangency_check(&f_bad, &mut k, 20, 1e-9, 17).unwrap();
    assert!(!rep.passed, "u_xxx must not be tangent to the heat constraint");
}

#[test]
fn heat_invariance_and_seed_recovery() {
    let seed = SeedManifold::new(vec![parse_expr("u_x").unwrap()], "heat-seed", 1, 1);
    let flows = heat_flows();
    let fields: Vec<CharField> = flows.iter().map(|f| f.field.clone()).collect();
    let fixed = Point::new();
    let tr = transversality(&fields, &seed, 4, 20, &fixed, 17).unwrap();
    let pm = solve_parameters(&flows, &tr.exprs, &seed, &fixed, 17).unwrap();
    let mut k = build_constraint(&seed, &flows, &pm, &tr, 4, None, &fixed, 17).unwrap();

    // V̄_{G_i}(kdef)|_K = 0 and D_x(kdef)|_K = 0
    for cf in &fields {
        let rep = jetreduce::constraint::invariance_check(cf, &mut k, 20, 1e-9, 23).unwrap();
        assert!(rep.passed, "invariance: {:?}", rep.per_def);
    }
    for kd in k.kdefs.clone() {
        let dk = jetreduce::jetcalc::total_derivative(&kd, 1);
        let restricted = k.chart.restrict(&dk).unwrap();
        assert!(is_zero(&restricted), "D_x(kdef) restricted = {restricted}");
    }

    // seed recovery: points of the seed satisfy the kdefs
    let on_seed = Point::new()
        .bind(Coord::indep(1), 1.1)
        .bind(Coord::dep1(1, 0), 0.9)
        .bind(Coord::dep1(1, 1), 0.0)
        .bind(Coord::dep1(1, 2), 0.0)
        .bind(Coord::dep1(1, 3), 0.0)
        .bind(Coord::dep1(1, 4), 0.0);
    for kd in &k.kdefs {
        let v = jetreduce::symexpr::eval_at(kd, &on_seed).unwrap();
        assert!(v.abs() <= 1e-9, "kdef on seed = {v}");
    }

    // parameter round-trip: reconstruct u_sigma from random chart values and
    // re-solve the parameters
    let sols = pm.solutions.as_ref().unwrap();
    let mut rng_vals = [0.63f64, 1.21, 0.54, 0.87];
    for shift in 0..3 {
        rng_vals.rotate_left(1);
        let (xv, uv, av, bv) = (rng_vals[0], rng_vals[1], rng_vals[2] - 0.7, rng_vals[3] - 0.4);
        let mut p = Point::new()
            .bind(Coord::indep(1), xv)
            .bind(Coord::dep1(1, 0), uv)
            .bind(Coord::param("a"), av)
            .bind(Coord::param("b"), bv);
        for ord in 1..=2u32 {
            let c = Coord::dep1(1, ord);
            let phi = k.chart.solved_for(&c).unwrap();
            let v = jetreduce::symexpr::eval_at(&phi, &p).unwrap();
            p.set(c, v);
        }
        let a_back = jetreduce::symexpr::eval_at(&sols[0], &p).unwrap();
        let b_back = jetreduce::symexpr::eval_at(&sols[1], &p).unwrap();
        assert!((a_back - av).abs() < 1e-8, "round trip a: {a_back} vs {av} (case {shift})");
        assert!((b_back - bv).abs() < 1e-8, "round trip b: {b_back} vs {bv}");
    }
}

fn transport_flows() -> Vec<FlowMap> {
    // composition order: the scaling flow (parameter b) is applied outermost,
    // the transport flow (parameter a) innermost
    vec![
        flow("u", &["0"], "b", &[("x", "x"), ("u", "exp(b)*u")]),
        flow(
            "u*u_x",
            &["u"],
            "a",
            &[("x", "x - a*u"), ("u", "u"), ("u_x", "u_x/(1 - a*u_x)")],
        ),
    ]
}

#[test]
fn transport_construction_reproduces_paper_formulas() {
    let seed = SeedManifold::new(
        vec![parse_expr("u - x^2").unwrap()],
        "transport-seed",
        1,
        1,
    );
    let flows = transport_flows();
    let fields: Vec<CharField> = flows.iter().map(|f| f.field.clone()).collect();
    let fixed = Point::new();

    let tr = transversality(&fields, &seed, 4, 20, &fixed, 29).unwrap();
    assert_eq!(tr.leads, vec![Coord::dep1(1, 0), Coord::dep1(1, 1)]);

    let pm = solve_parameters(&flows, &tr.exprs, &seed, &fixed, 29).unwrap();
    let sols = pm.solutions.as_ref().expect("symbolic branch");
    // declared order is [b-flow, a-flow]; paper formulas:
    // a = −u_x(xu_x − 2u)/(4(xu_x − u)²), b = log(4(xu_x − u)²/(u·u_x²))
    let b_expected = parse_expr("log(4*(x*u_x - u)^2/(u*u_x^2))").unwrap();
    let a_expected = parse_expr("-u_x*(x*u_x - 2*u)/(4*(x*u_x - u)^2)").unwrap();
    let b_found = &sols[0];
    let a_found = &sols[1];
    assert!(
        is_zero(&a_found.sub(&a_expected)),
        "a = {a_found} vs {a_expected}"
    );
    assert!(
        is_zero(&b_found.sub(&b_expected)),
        "b = {b_found} vs {b_expected}"
    );

    // constraint 2u²u_xx − xu_x³ + uu_x² = 0
    let mut k = build_constraint(&seed, &flows, &pm, &tr, 4, None, &fixed, 29).unwrap();
    let expected =
        normalize_constraint(&parse_expr("2*u^2*u_xx - x*u_x^3 + u*u_x^2").unwrap());
    let found = k
        .kdefs
        .iter()
        .any(|kd| is_zero(&kd.sub(&expected)) || is_zero(&kd.add(&expected)));
    assert!(
        found,
        "expected kdef {expected}, got {:?}",
        k.kdefs.iter().map(|e| e.to_string()).collect::<Vec<_>>()
    );

    // chart u(x, a, b) = (2ax + 1 − √(4ax + 1))/(2a²e^b)
    let u_chart = k.chart.solved_for(&Coord::dep1(1, 0)).unwrap();
    let u_expected =
        parse_expr("(2*a*x + 1 - sqrt(4*a*x + 1))/(2*a^2*exp(b))").unwrap();
    assert!(
        is_zero(&u_chart.sub(&u_expected)),
        "u chart = {u_chart} vs {u_expected}"
    );

    // V_F = 0 is tangent (F = 0 for the pure transport problem)
    let rep = tangency_check(&scalar_gen("0"), &mut k, 20, 1e-9, 29).unwrap();
    assert!(rep.passed);
    for cf in &fields {
        let rep = jetreduce::constraint::invariance_check(cf, &mut k, 20, 1e-8, 31).unwrap();
        assert!(rep.passed, "transport invariance: {:?}", rep.per_def);
    }
}

#[test]
fn transversality_rank_deficient_reports_no_set() {
    // single vertical flow V_u against seed u = 0: V_u(u_k) = u_k vanishes on
    // the seed, so no transversal set exists
    let seed = SeedManifold::new(vec![parse_expr("u").unwrap()], "zero-seed", 1, 1);
    let g = scalar_gen("u");
    let fields = vec![CharField::vertical(g)];
    let err = transversality(&fields, &seed, 4, 20, &Point::new(), 7).unwrap_err();
    assert!(matches!(
        err,
        jetreduce::constraint::ConstraintError::NoTransversalSet
    ));
}

#[test]
fn theorem51_bracket_reports() {
    // KdV: [G₂, F] = 3F with F = u_xxx + uu_x, G₂ = xu_x + 2u
    let f = scalar_gen("u_xxx + u*u_x");
    let g1 = scalar_gen("1");
    let g2 = scalar_gen("x*u_x + 2*u");
    let rep = theorem51_precondition(&f, &[g1.clone(), g2.clone()], 13).unwrap();
    let (mu2, lambda2) = rep.per_generator[1].as_ref().expect("[G2,F] in span");
    assert!((mu2 - 3.0).abs() < 1e-6, "mu_2 = {mu2}");
    assert!(lambda2.iter().all(|l| l.abs() < 1e-6));
    // [G₁, F] = u_x is not in span{F, G₁, G₂}
    assert!(rep.per_generator[0].is_none(), "[G1,F] must fail the span test");
    assert!(!rep.all_hold);

    // heat: [G₁, F] = 2u_x is not in span{F, G₁, G₂}
    let f = scalar_gen("u_xx");
    let g1 = scalar_gen("x*u");
    let g2 = scalar_gen("x^2*u");
    let rep = theorem51_precondition(&f, &[g1, g2], 13).unwrap();
    assert!(rep.per_generator[0].is_none());

    // [G, F] with G = F: zero bracket, mu = 0, lambda = 0
    let f = scalar_gen("u_xx");
    let rep = theorem51_precondition(&f, &[f.clone()], 13).unwrap();
    let (mu, lambda) = rep.per_generator[0].as_ref().unwrap();
    assert!(mu.abs() < 1e-9 && lambda.iter().all(|l| l.abs() < 1e-9));
}
