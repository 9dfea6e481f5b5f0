//! Contract menus, client/server utilities, the closed-form menu solver and
//! the IR/IC feasibility audit.
//!
//! A client of quality `theta` facing contract `(f, R)` picks effort
//! `e = theta * R / c` and obtains the envelope utility
//! `(theta * R)^2 / (2c) - f`. All solver and audit arithmetic uses this
//! unclamped envelope; the round simulator clamps effort into `[0, 1]`.

mod feasibility;
mod grid;
mod solver;
mod utility;

pub use feasibility::{
    verify_feasibility, verify_feasibility_with, FeasibilityReport, IcConstraint, IrConstraint,
    DEFAULT_TOLERANCE,
};
pub use grid::{grid_search_contract, Axis, GridOptimum, GridSpec, TypeAxes};
pub use solver::{enforce_monotonicity, fees_for_rewards, paper_contract_unpooled, solve_paper_contract};
pub use utility::{
    best_response_effort, client_utility, client_utility_at_best_response, envelope_utility,
    server_expected_utility, server_expected_utility_clamped, Effort,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the type probabilities summing to one.
pub const BETA_SUM_TOLERANCE: f64 = 1e-9;

/// A private client type: data-coverage quality and its population share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientType {
    /// 1-based position in the profile.
    pub index: usize,
    pub theta: f64,
    pub beta: f64,
}

/// The ordered list of client types together with the unit training cost `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeProfile {
    pub types: Vec<ClientType>,
    pub c: f64,
}

impl TypeProfile {
    pub fn new(thetas: &[f64], betas: &[f64], c: f64) -> Result<Self> {
        if thetas.len() != betas.len() {
            return Err(Error::LengthMismatch {
                expected: thetas.len(),
                got: betas.len(),
            });
        }
        let types = thetas
            .iter()
            .zip(betas)
            .enumerate()
            .map(|(i, (&theta, &beta))| ClientType {
                index: i + 1,
                theta,
                beta,
            })
            .collect();
        let profile = Self { types, c };
        profile.validate()?;
        Ok(profile)
    }

    /// Equal shares for every type.
    pub fn uniform(thetas: &[f64], c: f64) -> Result<Self> {
        let beta = 1.0 / thetas.len().max(1) as f64;
        Self::new(thetas, &vec![beta; thetas.len()], c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.types.is_empty() {
            return Err(Error::config("types", "profile needs at least one type"));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::config(
                "c",
                format!("unit cost must be positive, got {}", self.c),
            ));
        }
        for (i, t) in self.types.iter().enumerate() {
            if t.index != i + 1 {
                return Err(Error::config(
                    format!("types[{i}].index"),
                    format!("expected {}, got {}", i + 1, t.index),
                ));
            }
            if !(t.theta > 0.0 && t.theta <= 1.0) {
                return Err(Error::config(
                    format!("types[{i}].theta"),
                    format!("{} outside (0,1]", t.theta),
                ));
            }
            if !(0.0..=1.0).contains(&t.beta) {
                return Err(Error::config(
                    format!("types[{i}].beta"),
                    format!("{} outside [0,1]", t.beta),
                ));
            }
            if i > 0 && t.theta <= self.types[i - 1].theta {
                return Err(Error::config(
                    format!("types[{i}].theta"),
                    "thetas must be strictly increasing",
                ));
            }
        }
        let total: f64 = self.betas().sum();
        if (total - 1.0).abs() > BETA_SUM_TOLERANCE {
            return Err(Error::config(
                "types[].beta",
                format!("betas sum to {total}, expected 1"),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn thetas(&self) -> impl Iterator<Item = f64> + '_ {
        self.types.iter().map(|t| t.theta)
    }

    pub fn betas(&self) -> impl Iterator<Item = f64> + '_ {
        self.types.iter().map(|t| t.beta)
    }

    /// Same types under a different unit cost.
    pub fn with_cost(&self, c: f64) -> Self {
        Self {
            types: self.types.clone(),
            c,
        }
    }
}

/// One menu entry: registration fee `f`, reward `R`, benchmark accuracy `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractItem {
    pub index: usize,
    #[serde(rename = "f")]
    pub fee: f64,
    #[serde(rename = "R")]
    pub reward: f64,
    #[serde(rename = "M")]
    pub benchmark: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractMenu {
    pub items: Vec<ContractItem>,
}

impl ContractMenu {
    pub fn from_parts(fees: &[f64], rewards: &[f64], benchmarks: &[f64]) -> Result<Self> {
        if fees.len() != rewards.len() || fees.len() != benchmarks.len() {
            return Err(Error::contract(format!(
                "menu parts differ in length: {} fees, {} rewards, {} benchmarks",
                fees.len(),
                rewards.len(),
                benchmarks.len()
            )));
        }
        let items = fees
            .iter()
            .zip(rewards)
            .zip(benchmarks)
            .enumerate()
            .map(|(i, ((&fee, &reward), &benchmark))| ContractItem {
                index: i + 1,
                fee,
                reward,
                benchmark,
            })
            .collect();
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn fees(&self) -> Vec<f64> {
        self.items.iter().map(|it| it.fee).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.items.iter().map(|it| it.reward).collect()
    }

    pub fn benchmarks(&self) -> Vec<f64> {
        self.items.iter().map(|it| it.benchmark).collect()
    }

    pub fn rewards_non_decreasing(&self) -> bool {
        self.items.windows(2).all(|w| w[0].reward <= w[1].reward)
    }

    /// Checks item invariants (`f >= 0`, `R >= 0`, `M` in `[0,1]`).
    pub fn validate(&self) -> Result<()> {
        for (i, it) in self.items.iter().enumerate() {
            if !(it.fee >= 0.0 && it.reward >= 0.0 && (0.0..=1.0).contains(&it.benchmark)) {
                return Err(Error::config(
                    format!("items[{i}]"),
                    format!(
                        "f={} R={} M={} violate f>=0, R>=0, 0<=M<=1",
                        it.fee, it.reward, it.benchmark
                    ),
                ));
            }
        }
        Ok(())
    }

    pub(crate) fn check_len(&self, profile: &TypeProfile) -> Result<()> {
        if self.len() != profile.len() {
            return Err(Error::LengthMismatch {
                expected: profile.len(),
                got: self.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    #[serde(rename = "M")]
    pub benchmark: f64,
    #[serde(rename = "G")]
    pub revenue: f64,
}

/// Server revenue `G(M)` from a model meeting benchmark `M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RevenueCurve {
    /// `G(M) = a * exp(b * M)`, increasing and convex for `a, b > 0`.
    Exponential { a: f64, b: f64 },
    /// Tabulated revenues, linearly interpolated between points sorted by `M`.
    Table { points: Vec<CurvePoint> },
}

impl RevenueCurve {
    pub fn table(benchmarks: &[f64], revenues: &[f64]) -> Result<Self> {
        if benchmarks.len() != revenues.len() {
            return Err(Error::LengthMismatch {
                expected: benchmarks.len(),
                got: revenues.len(),
            });
        }
        let mut points: Vec<CurvePoint> = benchmarks
            .iter()
            .zip(revenues)
            .map(|(&benchmark, &revenue)| CurvePoint { benchmark, revenue })
            .collect();
        points.sort_by(|a, b| a.benchmark.total_cmp(&b.benchmark));
        let curve = Self::Table { points };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Exponential { a, b } => {
                if !(*a > 0.0 && *b > 0.0 && a.is_finite() && b.is_finite()) {
                    return Err(Error::config(
                        "revenue_curve",
                        "exponential curve needs a > 0 and b > 0",
                    ));
                }
            }
            Self::Table { points } => {
                if points.is_empty() {
                    return Err(Error::config("revenue_curve.points", "table is empty"));
                }
                for (i, w) in points.windows(2).enumerate() {
                    if w[1].benchmark <= w[0].benchmark {
                        return Err(Error::config(
                            format!("revenue_curve.points[{}].M", i + 1),
                            "benchmarks must be strictly increasing",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, benchmark: f64) -> Result<f64> {
        match self {
            Self::Exponential { a, b } => Ok(a * (b * benchmark).exp()),
            Self::Table { points } => {
                let k = points.partition_point(|p| p.benchmark < benchmark);
                if let Some(p) = points.get(k) {
                    if p.benchmark == benchmark {
                        return Ok(p.revenue);
                    }
                    if k > 0 {
                        let q = points[k - 1];
                        let t = (benchmark - q.benchmark) / (p.benchmark - q.benchmark);
                        return Ok(q.revenue + t * (p.revenue - q.revenue));
                    }
                }
                Err(Error::domain(format!(
                    "benchmark {benchmark} outside the tabulated revenue range"
                )))
            }
        }
    }

    pub fn eval_all(&self, benchmarks: &[f64]) -> Result<Vec<f64>> {
        benchmarks.iter().map(|&m| self.eval(m)).collect()
    }

    /// Finite-difference check that `G` is increasing and convex on the given
    /// strictly increasing benchmarks.
    pub fn check_increasing_convex(&self, benchmarks: &[f64]) -> Result<()> {
        let g = self.eval_all(benchmarks)?;
        let mut prev_slope = f64::NEG_INFINITY;
        for k in 1..benchmarks.len() {
            let dm = benchmarks[k] - benchmarks[k - 1];
            if dm <= 0.0 {
                return Err(Error::domain("benchmarks must be strictly increasing"));
            }
            let slope = (g[k] - g[k - 1]) / dm;
            if slope <= 0.0 {
                return Err(Error::domain(format!(
                    "revenue not increasing between M={} and M={}",
                    benchmarks[k - 1],
                    benchmarks[k]
                )));
            }
            if slope < prev_slope {
                return Err(Error::domain(format!(
                    "revenue not convex around M={}",
                    benchmarks[k - 1]
                )));
            }
            prev_slope = slope;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_validation() {
        assert!(TypeProfile::new(&[0.5, 1.0], &[0.5, 0.5], 1.0).is_ok());
        assert!(TypeProfile::new(&[0.5, 0.5], &[0.5, 0.5], 1.0).is_err());
        assert!(TypeProfile::new(&[0.6, 0.5], &[0.5, 0.5], 1.0).is_err());
        assert!(TypeProfile::new(&[0.5, 1.0], &[0.5, 0.4], 1.0).is_err());
        assert!(TypeProfile::new(&[0.5, 1.0], &[0.5, 0.5], 0.0).is_err());
        assert!(TypeProfile::new(&[0.0, 1.0], &[0.5, 0.5], 1.0).is_err());
        assert!(TypeProfile::new(&[0.5], &[0.5, 0.5], 1.0).is_err());
        let err = TypeProfile::new(&[0.5, 0.5], &[0.5, 0.5], 1.0).unwrap_err();
        assert!(err.to_string().contains("types[1].theta"), "{err}");
    }

    #[test]
    fn exponential_curve_is_increasing_convex() {
        let curve = RevenueCurve::Exponential { a: 0.5, b: 2.0 };
        assert!(curve.check_increasing_convex(&[0.1, 0.2, 0.4, 0.9]).is_ok());
        assert!((curve.eval(0.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn table_curve_interpolates_and_rejects_out_of_range() {
        let curve = RevenueCurve::table(&[0.2, 0.4], &[1.0, 3.0]).unwrap();
        assert_eq!(curve.eval(0.2).unwrap(), 1.0);
        assert_eq!(curve.eval(0.4).unwrap(), 3.0);
        assert!((curve.eval(0.3).unwrap() - 2.0).abs() < 1e-12);
        assert!(curve.eval(0.1).is_err());
        assert!(curve.eval(0.5).is_err());
    }

    #[test]
    fn concave_table_fails_convexity_check() {
        let ms = [0.1, 0.2, 0.3];
        let curve = RevenueCurve::table(&ms, &[1.0, 2.0, 2.5]).unwrap();
        assert!(curve.check_increasing_convex(&ms).is_err());
        let flat = RevenueCurve::table(&ms, &[1.0, 1.0, 2.0]).unwrap();
        assert!(flat.check_increasing_convex(&ms).is_err());
    }

    #[test]
    fn json_field_names() {
        let menu = ContractMenu::from_parts(&[0.125], &[1.0], &[0.3]).unwrap();
        let s = serde_json::to_string(&menu).unwrap();
        assert_eq!(s, r#"{"items":[{"index":1,"f":0.125,"R":1.0,"M":0.3}]}"#);
        let profile = TypeProfile::uniform(&[0.5], 2.0).unwrap();
        let s = serde_json::to_string(&profile).unwrap();
        assert_eq!(s, r#"{"types":[{"index":1,"theta":0.5,"beta":1.0}],"c":2.0}"#);
        let curve = RevenueCurve::Exponential { a: 1.0, b: 2.0 };
        assert_eq!(
            serde_json::to_string(&curve).unwrap(),
            r#"{"kind":"exponential","a":1.0,"b":2.0}"#
        );
    }
}
