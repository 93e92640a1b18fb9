//! Probabilistic zero test and the safe-domain sampler.
//!
//! Zero testing under transcendental functions is undecidable; the test
//! substitutes random points from a domain on which the charts of interest
//! (which divide by u, u_x, take logs and square roots) are defined:
//! coordinates are drawn uniformly from [0.2, 1.7].

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::coord::Coord;
use super::eval::{eval_scaled, EvalError, Point};
use super::expr::Expr;

pub const SAFE_LO: f64 = 0.2;
pub const SAFE_HI: f64 = 1.7;

/// Seed used by the convenience wrappers; CLI runs thread their own.
pub const DEFAULT_SEED: u64 = 0x6a65_7472_6564;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum ZeroTestError {
    #[error("no valid domain point found in {0} attempts")]
    SamplingFailure(usize),
}

/// Configuration of the probabilistic zero test.
#[derive(Clone, Debug)]
pub struct ZeroTest {
    pub trials: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for ZeroTest {
    fn default() -> Self {
        ZeroTest { trials: 8, tol: 1e-9, seed: DEFAULT_SEED }
    }
}

impl ZeroTest {
    pub fn with_seed(seed: u64) -> Self {
        ZeroTest { seed, ..ZeroTest::default() }
    }

    /// True iff |e| ≤ tol·(1 + magnitude of the largest term) at `trials`
    /// sampled points. Canonically-zero expressions return true immediately.
    pub fn is_zero(&self, e: &Expr) -> Result<bool, ZeroTestError> {
        if e.is_zero_expr() {
            return Ok(true);
        }
        let coords: Vec<Coord> = e.coords().into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut attempts = 0usize;
        let mut done = 0usize;
        const MAX_ATTEMPTS: usize = 1000;
        while done < self.trials {
            if attempts >= MAX_ATTEMPTS {
                return Err(ZeroTestError::SamplingFailure(MAX_ATTEMPTS));
            }
            attempts += 1;
            let p = sample_point(&coords, &mut rng);
            match eval_scaled(e, &p) {
                Ok((v, scale)) => {
                    if !v.is_finite() {
                        continue;
                    }
                    done += 1;
                    if v.abs() > self.tol * (1.0 + scale) {
                        return Ok(false);
                    }
                }
                Err(EvalError::Domain(_)) => continue,
                Err(EvalError::Unbound(_)) => unreachable!("all coords bound"),
            }
        }
        Ok(true)
    }
}

/// Uniform safe-domain point for the given coordinates.
pub fn sample_point<R: Rng>(coords: &[Coord], rng: &mut R) -> Point {
    let mut p = Point::new();
    for c in coords {
        p.set(c.clone(), rng.random_range(SAFE_LO..SAFE_HI));
    }
    p
}

/// Convenience wrapper with default settings; panics on sampling failure
/// (which signals an expression undefined on the whole safe domain).
pub fn is_zero(e: &Expr) -> bool {
    ZeroTest::default()
        .is_zero(e)
        .expect("zero test sampling failed on safe domain")
}

/// is_zero with explicit trial count and tolerance.
pub fn is_zero_with(e: &Expr, trials: usize, tol: f64) -> Result<bool, ZeroTestError> {
    ZeroTest { trials, tol, seed: DEFAULT_SEED }.is_zero(e)
}
