//! Jet coordinates: independent variables, dependent-variable derivatives, parameters.

use std::cmp::Ordering;
use std::fmt;

/// Multi-index over the independent variables: entry `l` counts derivatives in `x^l`.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zero(m: usize) -> Self {
        MultiIndex(vec![0; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total order |σ| = Σ σ_l.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    /// σ + 1_i (1-based direction index).
    pub fn bump(&self, i: usize) -> Self {
        let mut v = self.0.clone();
        v[i - 1] += 1;
        MultiIndex(v)
    }

    /// σ − 1_i if σ_i > 0.
    pub fn lower(&self, i: usize) -> Option<Self> {
        if self.0[i - 1] == 0 {
            return None;
        }
        let mut v = self.0.clone();
        v[i - 1] -= 1;
        Some(MultiIndex(v))
    }

    /// First direction (1-based) with a positive entry.
    pub fn leading_direction(&self) -> Option<usize> {
        self.0.iter().position(|&e| e > 0).map(|p| p + 1)
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Graded lexicographic order: compare |σ| first, then entries.
impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.order()
            .cmp(&other.order())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// A coordinate of the (finitely truncated) jet space, or a named parameter.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Coord {
    /// Independent variable x^i, 1-based.
    Indep(usize),
    /// Dependent-variable derivative u^k_σ; k is 1-based, σ = 0 means u^k itself.
    Dep { k: usize, sigma: MultiIndex },
    /// Named parameter (flow parameters, model constants, the time symbol in
    /// coefficient expressions).
    Param(String),
}

impl Coord {
    pub fn indep(i: usize) -> Self {
        Coord::Indep(i)
    }

    pub fn dep(k: usize, sigma: MultiIndex) -> Self {
        Coord::Dep { k, sigma }
    }

    /// u^k_σ in one independent variable with σ = (order).
    pub fn dep1(k: usize, order: u32) -> Self {
        Coord::Dep {
            k,
            sigma: MultiIndex(vec![order]),
        }
    }

    pub fn param(name: &str) -> Self {
        Coord::Param(name.to_string())
    }

    pub fn is_dep(&self) -> bool {
        matches!(self, Coord::Dep { .. })
    }

    pub fn is_param(&self) -> bool {
        matches!(self, Coord::Param(_))
    }

    /// Jet order: 0 for independents and parameters, |σ| for u^k_σ.
    pub fn order(&self) -> u32 {
        match self {
            Coord::Dep { sigma, .. } => sigma.order(),
            _ => 0,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Coord::Indep(_) => 0,
            Coord::Dep { .. } => 1,
            Coord::Param(_) => 2,
        }
    }
}

/// Total coordinate order: independents, then dependents by (k, graded-lex σ),
/// then parameters by name.
impl Ord for Coord {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank().cmp(&other.rank()).then_with(|| match (self, other) {
            (Coord::Indep(a), Coord::Indep(b)) => a.cmp(b),
            (Coord::Dep { k: ka, sigma: sa }, Coord::Dep { k: kb, sigma: sb }) => {
                ka.cmp(kb).then_with(|| sa.cmp(sb))
            }
            (Coord::Param(a), Coord::Param(b)) => a.cmp(b),
            _ => unreachable!("rank already distinguished"),
        })
    }
}

impl PartialOrd for Coord {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coord::Indep(1) => write!(f, "x"),
            Coord::Indep(i) => write!(f, "x{i}"),
            Coord::Param(name) => write!(f, "{name}"),
            Coord::Dep { k, sigma } => {
                let base = match k {
                    1 => "u".to_string(),
                    2 => "v".to_string(),
                    k => format!("u[{k}]"),
                };
                if sigma.len() == 1 {
                    let ord = sigma.order();
                    match ord {
                        0 => write!(f, "{base}"),
                        1..=4 => {
                            write!(f, "{base}_{}", "x".repeat(ord as usize))
                        }
                        _ => write!(f, "{base}_{ord}"),
                    }
                } else if sigma.order() == 0 {
                    write!(f, "{base}")
                } else {
                    write!(f, "{base}_{sigma}")
                }
            }
        }
    }
}
