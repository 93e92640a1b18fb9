use jetreduce::charflow::{register_closed_form_flow, CharField};
use jetreduce::constraint::*;
use jetreduce::jetcalc::Generator;
use jetreduce::symexpr::poly::sum_bases;
use jetreduce::symexpr::{parse_expr, substitute, Coord, Point};
use std::collections::BTreeMap;

fn main() {
    let g_scal = Generator::scalar(parse_expr("u").unwrap());
    let cf_scal = CharField::new(g_scal, vec![parse_expr("0").unwrap()]);
    let mut base = BTreeMap::new();
    base.insert(Coord::indep(1), parse_expr("x").unwrap());
    base.insert(Coord::dep1(1, 0), parse_expr("exp(b)*u").unwrap());
    let fb = register_closed_form_flow(&cf_scal, "b", base).unwrap();
    let g_tr = Generator::scalar(parse_expr("u*u_x").unwrap());
    let cf_tr = CharField::new(g_tr, vec![parse_expr("u").unwrap()]);
    let mut base = BTreeMap::new();
    base.insert(Coord::indep(1), parse_expr("x - a*u").unwrap());
    base.insert(Coord::dep1(1, 0), parse_expr("u").unwrap());
    base.insert(Coord::dep1(1, 1), parse_expr("u_x/(1 - a*u_x)").unwrap());
    let fa = register_closed_form_flow(&cf_tr, "a", base).unwrap();
    let flows = vec![fb, fa];

    let seed = SeedManifold::new(vec![parse_expr("u - x^2").unwrap()], "t", 1, 1);
    let fields: Vec<CharField> = flows.iter().map(|f| f.field.clone()).collect();
    let fixed = Point::new();
    let tr = transversality(&fields, &seed, 4, 20, &fixed, 29).unwrap();
    let pm = solve_parameters(&flows, &tr.exprs, &seed, &fixed, 29).unwrap();
    let sols = pm.solutions.as_ref().unwrap();
    println!("a = {}", sols[1]);
    println!("b = {}", sols[0]);
    let sol_map: BTreeMap<Coord, jetreduce::Expr> = pm
        .params.iter().cloned().zip(sols.iter().cloned()).collect();
    // f3 = u_xx - 2
    let f3 = parse_expr("u_xx - 2").unwrap();
    let pulled = composite_pullback(&flows, &f3).unwrap();
    let subst = substitute(&pulled, &sol_map).unwrap();
    println!("substituted terms: {}", subst.term_count());
    for b in sum_bases(&subst) {
        println!("base: {}", b);
    }
}
// appended: trace normalize steps
