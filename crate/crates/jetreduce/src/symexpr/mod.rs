//! Minimal computer-algebra core over jet coordinates.
//!
//! Expressions are immutable canonical values (see [`expr`]); parsing,
//! differentiation, substitution and canonicalization are pure functions, so
//! everything here is safe to share across threads.

pub mod calculus;
pub mod coord;
pub mod display;
pub mod eval;
pub mod expr;
pub mod parse;
pub mod poly;
pub mod solve;
pub mod zero;

pub use calculus::{diff_partial, substitute, substitute_one};
pub use coord::{Coord, MultiIndex};
pub use eval::{eval_at, eval_scaled, CompiledExpr, EvalError, Point};
pub use expr::{
    acosh_expr, cosh_expr, exp_expr, log_expr, rat, rat_int, sinh_expr, sqrt_expr, Atom, Expr,
    ExprError, Rat,
};
pub use parse::{parse_expr, parse_expr_m, ParseError};
pub use zero::{is_zero, is_zero_with, sample_point, ZeroTest, ZeroTestError, DEFAULT_SEED};

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn u() -> Coord {
        Coord::dep1(1, 0)
    }
    fn ux() -> Coord {
        Coord::dep1(1, 1)
    }
    fn uxx() -> Coord {
        Coord::dep1(1, 2)
    }

    #[test]
    fn parse_product_of_coords() {
        let e = parse_expr("u*u_x").unwrap();
        let manual = Expr::coord(u()).mul(&Expr::coord(ux()));
        assert_eq!(e, manual);
    }

    #[test]
    fn parse_kdv_seed_generator() {
        // g = u_xx + u^2/2 − beta0·u
        let e = parse_expr("u_xx + (1/2)*u^2 - beta0*u").unwrap();
        let manual = Expr::coord(uxx())
            .add(&Expr::coord(u()).powi(2).unwrap().scale(&rat(1, 2)))
            .sub(&Expr::param("beta0").mul(&Expr::coord(u())));
        assert_eq!(e, manual);
        assert_eq!(e.term_count(), 3);
    }

    #[test]
    fn parse_kdv_scaling_generator() {
        let e = parse_expr("x*u_x + 2*u").unwrap();
        let manual = Expr::coord(Coord::indep(1))
            .mul(&Expr::coord(ux()))
            .add(&Expr::coord(u()).scale(&rat_int(2)));
        assert_eq!(e, manual);
    }

    #[test]
    fn canonical_like_terms_merge() {
        let e = parse_expr("u + u - 2*u").unwrap();
        assert!(e.is_zero_expr());
        let e2 = parse_expr("(u + 1)^2 - u^2 - 2*u - 1").unwrap();
        assert!(e2.is_zero_expr());
    }

    #[test]
    fn division_and_negative_powers() {
        let e = parse_expr("u_x/(1 - a*u_x)").unwrap();
        // multiplying back recovers u_x as a function (sum-of-products form
        // does not put terms over a common denominator structurally)
        let back = e.mul(&parse_expr("1 - a*u_x").unwrap());
        assert!(is_zero(&back.sub(&Expr::coord(ux()))));
        // clearing denominators recombines exactly
        let cleared = solve::clear_denominators(&back.sub(&Expr::coord(ux())));
        assert!(cleared.is_zero_expr());
    }

    #[test]
    fn sqrt_square_collapses() {
        let e = parse_expr("sqrt(u)^2").unwrap();
        assert_eq!(e, Expr::coord(u()));
        // monomial square root extraction
        let q = parse_expr("sqrt(u_x^2*beta0^2)").unwrap();
        assert_eq!(q, parse_expr("u_x*beta0").unwrap());
        // common monomial factor pulled out of radicands
        let r = parse_expr("sqrt(u_x^2*u_xx + u_x^4)").unwrap();
        let expect = parse_expr("u_x*sqrt(u_xx + u_x^2)").unwrap();
        assert_eq!(r, expect);
    }

    #[test]
    fn exp_rules() {
        assert!(parse_expr("exp(0)").unwrap().is_one());
        assert!(parse_expr("log(1)").unwrap().is_zero_expr());
        // exp(4b) == exp(b)^4 canonically
        let a = parse_expr("exp(4*b)").unwrap();
        let b = parse_expr("exp(b)^4").unwrap();
        assert_eq!(a, b);
        // exp(c·log R) = R^c
        let c = parse_expr("exp(2*log(u))").unwrap();
        assert_eq!(c, parse_expr("u^2").unwrap());
        let d = parse_expr("exp((1/2)*log(u_x^2))").unwrap();
        assert_eq!(d, Expr::coord(ux()));
    }

    #[test]
    fn diff_partial_spec_examples() {
        // ∂_{u_x}(u·u_x) = u
        let e = parse_expr("u*u_x").unwrap();
        assert_eq!(diff_partial(&e, &ux()), Expr::coord(u()));
        // ∂_u(e^{a·x}·u) = e^{a·x}
        let e = parse_expr("exp(a*x)*u").unwrap();
        assert_eq!(diff_partial(&e, &u()), parse_expr("exp(a*x)").unwrap());
        // ∂_{u_xx}(u_xx + ½u² − β₀u) = 1
        let e = parse_expr("u_xx + (1/2)*u^2 - beta0*u").unwrap();
        assert!(diff_partial(&e, &uxx()).is_one());
    }

    #[test]
    fn substitute_spec_examples() {
        // u_x ↦ u_x/(1−a·u_x)
        let target = parse_expr("u_x/(1 - a*u_x)").unwrap();
        let got = substitute_one(&Expr::coord(ux()), &ux(), &target).unwrap();
        assert_eq!(got, target);
        // identity binding
        let got = substitute_one(&Expr::coord(u()), &u(), &Expr::coord(u())).unwrap();
        assert_eq!(got, Expr::coord(u()));
        // (u·u_x)[u ↦ e^b·u, u_x ↦ e^b·u_x] = e^{2b}·u·u_x
        let mut map = BTreeMap::new();
        map.insert(u(), parse_expr("exp(b)*u").unwrap());
        map.insert(ux(), parse_expr("exp(b)*u_x").unwrap());
        let got = substitute(&parse_expr("u*u_x").unwrap(), &map).unwrap();
        let expect = parse_expr("exp(2*b)*u*u_x").unwrap();
        assert_eq!(got, expect);
        // cross-check by evaluation at 3 random points
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            let p = Point::new()
                .bind(u(), rng.random_range(0.2..1.7))
                .bind(ux(), rng.random_range(0.2..1.7))
                .bind(Coord::param("b"), rng.random_range(0.2..1.7));
            let lhs = eval_at(&got, &p).unwrap();
            let ub = p.get(&u()).unwrap();
            let uxb = p.get(&ux()).unwrap();
            let bb = p.get(&Coord::param("b")).unwrap();
            let rhs = (2.0 * bb).exp() * ub * uxb;
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_spec_examples() {
        let p = Point::new().bind(u(), 2.0).bind(ux(), 3.0);
        assert_eq!(eval_at(&parse_expr("u*u_x").unwrap(), &p).unwrap(), 6.0);

        let p = Point::new()
            .bind(Coord::param("a"), 0.0)
            .bind(Coord::indep(1), 5.0)
            .bind(u(), 7.0);
        assert_eq!(eval_at(&parse_expr("exp(a*x)*u").unwrap(), &p).unwrap(), 7.0);

        let p = Point::new().bind(ux(), 2.0).bind(Coord::param("a"), 0.25);
        let v = eval_at(&parse_expr("u_x/(1 - a*u_x)").unwrap(), &p).unwrap();
        assert!((v - 4.0).abs() < 1e-15);
    }

    #[test]
    fn eval_domain_errors() {
        let p = Point::new().bind(u(), -1.0);
        assert!(matches!(
            eval_at(&parse_expr("log(u)").unwrap(), &p),
            Err(EvalError::Domain(_))
        ));
        assert!(matches!(
            eval_at(&parse_expr("sqrt(u)").unwrap(), &p),
            Err(EvalError::Domain(_))
        ));
        let p = Point::new().bind(u(), 0.5);
        assert!(matches!(
            eval_at(&parse_expr("acosh(u)").unwrap(), &p),
            Err(EvalError::Domain(_))
        ));
        let p = Point::new();
        assert!(matches!(
            eval_at(&parse_expr("u").unwrap(), &p),
            Err(EvalError::Unbound(_))
        ));
    }

    #[test]
    fn is_zero_spec_examples() {
        assert!(is_zero(&Expr::zero()));
        // D_x(u²) − 2uu_x with D_x applied by hand
        let lhs = parse_expr("2*u*u_x - 2*u*u_x").unwrap();
        assert!(is_zero(&lhs));
        assert!(!is_zero(&parse_expr("u_xx - u_x").unwrap()));
    }

    #[test]
    fn print_parse_round_trip() {
        let samples = [
            "u_xx + (1/2)*u^2 - beta0*u",
            "u_x/(1 - a*u_x)",
            "exp(a*x + b*x^2)*u",
            "sqrt(4*a*x + 1)",
            "log(4*(x*u_x - u)^2/(u*u_x^2))",
            "x*u_x + 2*u",
            "cosh(x) + sinh(x) - acosh(u + 2)",
            "u^(-3/2)*v_x",
        ];
        for s in samples {
            let e = parse_expr(s).unwrap();
            let printed = e.to_string();
            let back = parse_expr(&printed)
                .unwrap_or_else(|err| panic!("reparse of `{printed}` failed: {err}"));
            assert_eq!(e, back, "round trip failed for `{s}` -> `{printed}`");
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        let e = parse_expr("u + sin(x)").unwrap_err();
        assert!(e.msg.contains("unknown function"));
        let e = parse_expr("u + ").unwrap_err();
        assert_eq!(e.pos, 4);
    }

    #[test]
    fn compiled_eval_matches_tree_eval() {
        let e = parse_expr("u_xx*exp(a*x)/(1 + u^2) + sqrt(u_x)").unwrap();
        let coords: Vec<Coord> = e.coords().into_iter().collect();
        let compiled = CompiledExpr::compile(&e, &coords).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut p = Point::new();
            let mut slots = vec![0.0; coords.len()];
            for (i, c) in coords.iter().enumerate() {
                let v = rng.random_range(0.2..1.7);
                p.set(c.clone(), v);
                slots[i] = v;
            }
            let a = eval_at(&e, &p).unwrap();
            let b = compiled.eval(&slots);
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn multi_d_coordinates() {
        let e = parse_expr_m("u_(1,1) + u_xy", 2).unwrap();
        let c = Coord::dep(1, MultiIndex(vec![1, 1]));
        assert_eq!(e, Expr::coord(c).scale(&rat_int(2)));
    }
}
