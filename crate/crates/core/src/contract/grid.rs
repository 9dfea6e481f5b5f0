//! Exhaustive grid oracle for the menu design problem.
//!
//! Every reward tuple and every fee tuple of the lower types is enumerated.
//! For the top type the feasible fees form an interval, so only the grid
//! values inside that interval are tested; the result is the same maximizer
//! a full enumeration would return.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::feasibility::is_feasible;
use super::{envelope_utility, ContractMenu, RevenueCurve, TypeProfile, DEFAULT_TOLERANCE};
use crate::error::{Error, Result};

/// Largest number of types the oracle accepts.
pub const MAX_GRID_TYPES: usize = 3;

/// Evenly spaced values `min, ..., max` (`points` of them).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, points: usize) -> Self {
        Self { min, max, points }
    }

    pub fn step(&self) -> f64 {
        if self.points > 1 {
            (self.max - self.min) / (self.points - 1) as f64
        } else {
            0.0
        }
    }

    pub fn values(&self) -> Vec<f64> {
        let step = self.step();
        (0..self.points).map(|k| self.min + k as f64 * step).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.points == 0 || !(self.min <= self.max) || self.min < 0.0 {
            return Err(Error::domain(format!("invalid grid axis {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeAxes {
    pub fee: Axis,
    pub reward: Axis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub types: Vec<TypeAxes>,
}

impl GridSpec {
    pub fn uniform(type_count: usize, fee: Axis, reward: Axis) -> Self {
        Self {
            types: vec![TypeAxes { fee, reward }; type_count],
        }
    }

    /// Grid spanning rewards `[0, 1.25 max G(M_i)]` and every fee that can be
    /// individually rational under those rewards, `intervals` steps per axis.
    pub fn covering(
        profile: &TypeProfile,
        curve: &RevenueCurve,
        benchmarks: &[f64],
        intervals: usize,
    ) -> Result<Self> {
        let g_max = curve.eval_all(benchmarks)?.into_iter().fold(0.0, f64::max);
        let theta_max = profile.thetas().fold(0.0, f64::max);
        let r_max = 1.25 * g_max;
        let f_max = (theta_max * r_max).powi(2) / (2.0 * profile.c);
        Ok(Self::uniform(
            profile.len(),
            Axis::new(0.0, f_max, intervals + 1),
            Axis::new(0.0, r_max, intervals + 1),
        ))
    }

    /// Bound on the objective change from moving every fee and reward by
    /// `steps` grid steps, from the objective's partial derivatives over the grid.
    pub fn objective_slack(
        &self,
        profile: &TypeProfile,
        curve: &RevenueCurve,
        benchmarks: &[f64],
        steps: f64,
    ) -> Result<f64> {
        let g = curve.eval_all(benchmarks)?;
        let mut slack = 0.0;
        for ((t, axes), g) in profile.types.iter().zip(&self.types).zip(g) {
            let reward_lipschitz = t.theta * t.theta / profile.c
                * (g - 2.0 * axes.reward.min)
                    .abs()
                    .max((g - 2.0 * axes.reward.max).abs());
            slack += t.beta * steps * (axes.fee.step() + reward_lipschitz * axes.reward.step());
        }
        Ok(slack)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptimum {
    pub menu: ContractMenu,
    pub objective: f64,
}

struct Search {
    thetas: Vec<f64>,
    betas: Vec<f64>,
    revenues: Vec<f64>,
    c: f64,
    fee_values: Vec<Vec<f64>>,
    reward_values: Vec<Vec<f64>>,
    best: Option<(f64, Vec<f64>)>,
}

impl Search {
    fn objective(&self, fees: &[f64], rewards: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..fees.len() {
            let (theta, r) = (self.thetas[i], rewards[i]);
            total += self.betas[i] * (fees[i] + theta * theta * r * (self.revenues[i] - r) / self.c);
        }
        total
    }

    fn offer(&mut self, fees: &[f64], rewards: &[f64]) {
        let value = self.objective(fees, rewards);
        let better = match &self.best {
            None => true,
            Some((best, key)) => match value.total_cmp(best) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => lex_less(fees.iter().chain(rewards), key.iter()),
            },
        };
        if better {
            self.best = Some((value, fees.iter().chain(rewards).copied().collect()));
        }
    }

    /// Tests the admissible top-type fees for fixed lower fees and all rewards.
    fn finish_top_fee(&mut self, fees: &mut [f64], rewards: &[f64]) {
        let top = fees.len() - 1;
        if !is_feasible(
            &self.thetas[..top],
            &fees[..top],
            &rewards[..top],
            self.c,
            DEFAULT_TOLERANCE,
        ) {
            return;
        }
        let theta = self.thetas[top];
        let gross = envelope_utility(theta, rewards[top], 0.0, self.c);
        let mut hi = gross;
        let mut lo = f64::NEG_INFINITY;
        for j in 0..top {
            hi = hi.min(gross - envelope_utility(theta, rewards[j], 0.0, self.c) + fees[j]);
            let own_j = envelope_utility(self.thetas[j], rewards[j], fees[j], self.c);
            lo = lo.max(envelope_utility(self.thetas[j], rewards[top], 0.0, self.c) - own_j);
        }
        let margin = 1e-6 * (1.0 + hi.abs());
        let values = std::mem::take(&mut self.fee_values[top]);
        let start = values.partition_point(|&v| v < lo - margin);
        let end = values.partition_point(|&v| v <= hi + margin).max(start);
        let candidates = &values[start..end];
        let pick = |v: f64, fees: &mut [f64]| {
            fees[top] = v;
            is_feasible(&self.thetas, fees, rewards, self.c, DEFAULT_TOLERANCE)
        };
        // The objective grows with the top fee unless that type has zero weight,
        // in which case the lexicographically smallest fee wins the tie.
        let found = if self.betas[top] > 0.0 {
            candidates.iter().rev().copied().find(|&v| pick(v, fees))
        } else {
            candidates.iter().copied().find(|&v| pick(v, fees))
        };
        self.fee_values[top] = values;
        if let Some(v) = found {
            fees[top] = v;
            self.offer(fees, rewards);
        }
    }
}

fn lex_less<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> bool {
    for (x, y) in a.zip(b) {
        match x.total_cmp(y) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
    }
    false
}

/// Advances a mixed-radix counter; returns false once it wraps around.
fn advance(counter: &mut [usize], radix: &[usize]) -> bool {
    for (k, r) in counter.iter_mut().zip(radix) {
        *k += 1;
        if *k < *r {
            return true;
        }
        *k = 0;
    }
    false
}

/// Best feasible menu on the grid by expected server utility.
///
/// Objective ties go to the lexicographically smallest `(f_1..f_I, R_1..R_I)`.
pub fn grid_search_contract(
    profile: &TypeProfile,
    curve: &RevenueCurve,
    benchmarks: &[f64],
    grid: &GridSpec,
) -> Result<GridOptimum> {
    let n = profile.len();
    if n == 0 || n > MAX_GRID_TYPES {
        return Err(Error::domain(format!(
            "grid search supports 1..={MAX_GRID_TYPES} types, got {n}"
        )));
    }
    for (name, len) in [("benchmarks", benchmarks.len()), ("grid axes", grid.types.len())] {
        if len != n {
            return Err(Error::contract(format!(
                "{name}: expected {n} entries, got {len}"
            )));
        }
    }
    for axes in &grid.types {
        axes.fee.validate()?;
        axes.reward.validate()?;
    }
    let mut search = Search {
        thetas: profile.thetas().collect(),
        betas: profile.betas().collect(),
        revenues: curve.eval_all(benchmarks)?,
        c: profile.c,
        fee_values: grid.types.iter().map(|a| a.fee.values()).collect(),
        reward_values: grid.types.iter().map(|a| a.reward.values()).collect(),
        best: None,
    };

    let reward_radix: Vec<usize> = search.reward_values.iter().map(Vec::len).collect();
    let fee_radix: Vec<usize> = search.fee_values[..n - 1].iter().map(Vec::len).collect();
    let mut reward_idx = vec![0; n];
    let mut rewards = vec![0.0; n];
    let mut fees = vec![0.0; n];
    loop {
        for i in 0..n {
            rewards[i] = search.reward_values[i][reward_idx[i]];
        }
        let mut fee_idx = vec![0; n - 1];
        loop {
            for i in 0..n - 1 {
                fees[i] = search.fee_values[i][fee_idx[i]];
            }
            search.finish_top_fee(&mut fees, &rewards);
            if !advance(&mut fee_idx, &fee_radix) {
                break;
            }
        }
        if !advance(&mut reward_idx, &reward_radix) {
            break;
        }
    }

    let (objective, key) = search.best.ok_or(Error::NoFeasibleGridPoint)?;
    let menu = ContractMenu::from_parts(&key[..n], &key[n..], benchmarks)?;
    Ok(GridOptimum { menu, objective })
}
