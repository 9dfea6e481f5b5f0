use super::{ContractMenu, RevenueCurve, TypeProfile};
use crate::error::{Error, Result};

/// Fees making IR bind for the lowest type and every adjacent downward IC
/// constraint tight:
/// `f_1 = (theta_1 R_1)^2 / 2c`,
/// `f_i = (theta_i R_i)^2 / 2c - (theta_i R_{i-1})^2 / 2c + f_{i-1}`.
pub fn fees_for_rewards(profile: &TypeProfile, rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() != profile.len() {
        return Err(Error::LengthMismatch {
            expected: profile.len(),
            got: rewards.len(),
        });
    }
    let c2 = 2.0 * profile.c;
    let mut fees = Vec::with_capacity(rewards.len());
    for (i, (t, &r)) in profile.types.iter().zip(rewards).enumerate() {
        let own = (t.theta * r).powi(2) / c2;
        let fee = match i {
            0 => own,
            _ => own - (t.theta * rewards[i - 1]).powi(2) / c2 + fees[i - 1],
        };
        fees.push(fee);
    }
    Ok(fees)
}

/// Closed-form menu before any monotonicity adjustment: `R_i = G(M_i)` with fees
/// from [`fees_for_rewards`].
pub fn paper_contract_unpooled(
    profile: &TypeProfile,
    curve: &RevenueCurve,
    benchmarks: &[f64],
) -> Result<ContractMenu> {
    profile
        .validate()
        .map_err(|e| Error::domain(format!("invalid type profile: {e}")))?;
    if benchmarks.len() != profile.len() {
        return Err(Error::LengthMismatch {
            expected: profile.len(),
            got: benchmarks.len(),
        });
    }
    let rewards = curve.eval_all(benchmarks)?;
    let fees = fees_for_rewards(profile, &rewards)?;
    ContractMenu::from_parts(&fees, &rewards, benchmarks)
}

/// Closed-form optimal menu, ironed when the rewards come out non-monotone.
pub fn solve_paper_contract(
    profile: &TypeProfile,
    curve: &RevenueCurve,
    benchmarks: &[f64],
) -> Result<ContractMenu> {
    if let Err(e) = curve.check_increasing_convex(benchmarks) {
        log::warn!("revenue curve precondition does not hold on the benchmarks: {e}");
    }
    let menu = paper_contract_unpooled(profile, curve, benchmarks)?;
    enforce_monotonicity(&menu, profile)
}

/// Irons a non-monotone reward sequence by pooling adjacent violators.
///
/// Blocks of rewards that decrease are replaced by their beta-weighted mean
/// until the sequence is non-decreasing; fees are then recomputed from the
/// pooled rewards. A menu whose rewards are already non-decreasing is returned
/// unchanged.
pub fn enforce_monotonicity(menu: &ContractMenu, profile: &TypeProfile) -> Result<ContractMenu> {
    menu.check_len(profile)?;
    if menu.rewards_non_decreasing() {
        return Ok(menu.clone());
    }
    let pooled = pool_adjacent_violators(&menu.rewards(), &profile.betas().collect::<Vec<_>>());
    let fees = fees_for_rewards(profile, &pooled)?;
    ContractMenu::from_parts(&fees, &pooled, &menu.benchmarks())
}

struct Block {
    weight: f64,
    /// Plain sum and count, used when every weight in the block is zero.
    sum: f64,
    count: usize,
    weighted_sum: f64,
}

impl Block {
    fn mean(&self) -> f64 {
        if self.weight > 0.0 {
            self.weighted_sum / self.weight
        } else {
            self.sum / self.count as f64
        }
    }

    fn merge(&mut self, other: Block) {
        self.weight += other.weight;
        self.sum += other.sum;
        self.count += other.count;
        self.weighted_sum += other.weighted_sum;
    }
}

fn pool_adjacent_violators(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<Block> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        let mut block = Block {
            weight: w,
            sum: v,
            count: 1,
            weighted_sum: w * v,
        };
        while let Some(last) = blocks.last() {
            if last.mean() <= block.mean() {
                break;
            }
            let mut prev = blocks.pop().expect("non-empty");
            prev.merge(block);
            block = prev;
        }
        blocks.push(block);
    }
    blocks
        .iter()
        .flat_map(|b| std::iter::repeat_n(b.mean(), b.count))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::verify_feasibility;

    fn two_type(c: f64) -> (TypeProfile, RevenueCurve, Vec<f64>) {
        let profile = TypeProfile::uniform(&[0.5, 1.0], c).unwrap();
        let curve = RevenueCurve::table(&[0.2, 0.4], &[1.0, 2.0]).unwrap();
        (profile, curve, vec![0.2, 0.4])
    }

    #[test]
    fn single_type_ir_binds() {
        let profile = TypeProfile::uniform(&[1.0], 1.0).unwrap();
        let curve = RevenueCurve::table(&[0.3], &[1.0]).unwrap();
        let menu = solve_paper_contract(&profile, &curve, &[0.3]).unwrap();
        assert_eq!(menu.fees(), vec![0.5]);
        assert_eq!(menu.rewards(), vec![1.0]);
    }

    #[test]
    fn two_type_canonical_instance() {
        let (profile, curve, ms) = two_type(1.0);
        let menu = solve_paper_contract(&profile, &curve, &ms).unwrap();
        assert_eq!(menu.rewards(), vec![1.0, 2.0]);
        assert_eq!(menu.fees(), vec![0.125, 1.625]);
        assert!(verify_feasibility(&profile, &menu).unwrap().feasible);

        let (profile, curve, ms) = two_type(2.0);
        let menu = solve_paper_contract(&profile, &curve, &ms).unwrap();
        assert_eq!(menu.rewards(), vec![1.0, 2.0]);
        assert_eq!(menu.fees(), vec![0.0625, 0.8125]);
    }

    #[test]
    fn non_increasing_thetas_rejected() {
        let profile = TypeProfile {
            types: TypeProfile::uniform(&[0.5, 1.0], 1.0).unwrap().types,
            c: 1.0,
        };
        let mut bad = profile.clone();
        bad.types[1].theta = 0.5;
        let curve = RevenueCurve::Exponential { a: 1.0, b: 1.0 };
        assert!(matches!(
            solve_paper_contract(&bad, &curve, &[0.1, 0.2]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            solve_paper_contract(&profile, &curve, &[0.1]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn pooling_examples() {
        let profile = TypeProfile::uniform(&[0.5, 1.0], 1.0).unwrap();
        let menu = ContractMenu::from_parts(&[0.0, 0.0], &[2.0, 1.0], &[0.3, 0.2]).unwrap();
        let ironed = enforce_monotonicity(&menu, &profile).unwrap();
        assert_eq!(ironed.rewards(), vec![1.5, 1.5]);
        assert_eq!(ironed.benchmarks(), vec![0.3, 0.2]);

        let profile = TypeProfile::uniform(&[0.3, 0.6, 0.9], 1.0).unwrap();
        let menu = ContractMenu::from_parts(&[0.0; 3], &[1.0, 3.0, 2.0], &[0.1, 0.3, 0.2]).unwrap();
        let ironed = enforce_monotonicity(&menu, &profile).unwrap();
        assert_eq!(ironed.rewards(), vec![1.0, 2.5, 2.5]);
        let fees = ironed.fees();
        assert_eq!(fees[1], fees[2]);
        assert!(verify_feasibility(&profile, &ironed).unwrap().feasible);
        assert_eq!(enforce_monotonicity(&ironed, &profile).unwrap(), ironed);
    }

    #[test]
    fn pooling_respects_weights_and_cascades() {
        assert_eq!(
            pool_adjacent_violators(&[3.0, 1.0], &[0.75, 0.25]),
            vec![2.5, 2.5]
        );
        // A pooled block that still exceeds its successor keeps merging.
        assert_eq!(
            pool_adjacent_violators(&[1.0, 3.0, 2.0, 0.0], &[0.25; 4]),
            vec![1.0, 5.0 / 3.0, 5.0 / 3.0, 5.0 / 3.0]
        );
        assert_eq!(pool_adjacent_violators(&[2.0, 1.0], &[0.0, 0.0]), vec![1.5, 1.5]);
    }

    #[test]
    fn monotone_menu_left_untouched() {
        let profile = TypeProfile::uniform(&[0.5, 1.0], 1.0).unwrap();
        let menu = ContractMenu::from_parts(&[0.3, 0.1], &[1.0, 2.0], &[0.2, 0.4]).unwrap();
        assert_eq!(enforce_monotonicity(&menu, &profile).unwrap(), menu);
    }

    #[test]
    fn fees_scale_inversely_with_cost() {
        let curve = RevenueCurve::Exponential { a: 0.7, b: 2.0 };
        let ms = [0.1, 0.25, 0.5, 0.8];
        let thetas = [0.2, 0.4, 0.75, 0.9];
        let base = solve_paper_contract(&TypeProfile::uniform(&thetas, 1.0).unwrap(), &curve, &ms).unwrap();
        for k in [0.25, 3.0, 7.5] {
            let scaled =
                solve_paper_contract(&TypeProfile::uniform(&thetas, k).unwrap(), &curve, &ms).unwrap();
            assert_eq!(scaled.rewards(), base.rewards());
            for (a, b) in scaled.fees().iter().zip(base.fees()) {
                assert!((a - b / k).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
