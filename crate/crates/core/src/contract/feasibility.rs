//! Exhaustive IR/IC audit of a menu in envelope form.

use serde::{Deserialize, Serialize};

use super::{envelope_utility, ContractMenu, TypeProfile};
use crate::error::Result;

/// Absolute tolerance on constraint slacks.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrConstraint {
    pub type_index: usize,
    /// `(theta_i R_i)^2 / 2c - f_i`
    pub slack: f64,
    pub binds: bool,
}

/// Type `type_index` compared against taking contract `contract_index` instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcConstraint {
    pub type_index: usize,
    pub contract_index: usize,
    pub slack: f64,
    pub binds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub tolerance: f64,
    pub ir: Vec<IrConstraint>,
    pub ic: Vec<IcConstraint>,
}

impl FeasibilityReport {
    pub fn ir_violations(&self) -> impl Iterator<Item = &IrConstraint> {
        self.ir.iter().filter(|c| c.slack < -self.tolerance)
    }

    pub fn ic_violations(&self) -> impl Iterator<Item = &IcConstraint> {
        self.ic.iter().filter(|c| c.slack < -self.tolerance)
    }

    pub fn ir_slack(&self, type_index: usize) -> Option<f64> {
        self.ir
            .iter()
            .find(|c| c.type_index == type_index)
            .map(|c| c.slack)
    }

    pub fn ic(&self, type_index: usize, contract_index: usize) -> Option<&IcConstraint> {
        self.ic
            .iter()
            .find(|c| c.type_index == type_index && c.contract_index == contract_index)
    }

    pub fn min_slack(&self) -> f64 {
        self.ir
            .iter()
            .map(|c| c.slack)
            .chain(self.ic.iter().map(|c| c.slack))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn verify_feasibility(profile: &TypeProfile, menu: &ContractMenu) -> Result<FeasibilityReport> {
    verify_feasibility_with(profile, menu, DEFAULT_TOLERANCE)
}

pub fn verify_feasibility_with(
    profile: &TypeProfile,
    menu: &ContractMenu,
    tolerance: f64,
) -> Result<FeasibilityReport> {
    menu.check_len(profile)?;
    let c = profile.c;
    let n = profile.len();
    let mut ir = Vec::with_capacity(n);
    let mut ic = Vec::with_capacity(n * n.saturating_sub(1));
    for (t, own) in profile.types.iter().zip(&menu.items) {
        let own_utility = envelope_utility(t.theta, own.reward, own.fee, c);
        ir.push(IrConstraint {
            type_index: t.index,
            slack: own_utility,
            binds: own_utility.abs() <= tolerance,
        });
        for other in menu.items.iter().filter(|it| it.index != own.index) {
            let slack = own_utility - envelope_utility(t.theta, other.reward, other.fee, c);
            ic.push(IcConstraint {
                type_index: t.index,
                contract_index: other.index,
                slack,
                binds: slack.abs() <= tolerance,
            });
        }
    }
    let feasible = ir.iter().all(|c| c.slack >= -tolerance) && ic.iter().all(|c| c.slack >= -tolerance);
    Ok(FeasibilityReport {
        feasible,
        tolerance,
        ir,
        ic,
    })
}

/// Allocation-free form of the same test, used by the grid oracle.
pub(crate) fn is_feasible(thetas: &[f64], fees: &[f64], rewards: &[f64], c: f64, tolerance: f64) -> bool {
    for (i, &theta) in thetas.iter().enumerate() {
        let own = envelope_utility(theta, rewards[i], fees[i], c);
        if own < -tolerance {
            return false;
        }
        for j in 0..thetas.len() {
            if j != i && own - envelope_utility(theta, rewards[j], fees[j], c) < -tolerance {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn canonical() -> (TypeProfile, ContractMenu) {
        (
            TypeProfile::uniform(&[0.5, 1.0], 1.0).unwrap(),
            ContractMenu::from_parts(&[0.125, 1.625], &[1.0, 2.0], &[0.2, 0.4]).unwrap(),
        )
    }

    #[test]
    fn canonical_menu_binding_pattern() {
        let (profile, menu) = canonical();
        let report = verify_feasibility(&profile, &menu).unwrap();
        assert!(report.feasible);
        assert!(report.ir[0].binds);
        assert!(!report.ir[1].binds);
        assert_eq!(report.ir_slack(2), Some(0.375));
        let down = report.ic(2, 1).unwrap();
        assert!(down.binds);
        assert_eq!(down.slack, 0.0);
        let up = report.ic(1, 2).unwrap();
        assert!(!up.binds);
        assert_eq!(up.slack, 1.125);
    }

    #[test]
    fn fee_bump_breaks_downward_ic() {
        let (profile, mut menu) = canonical();
        menu.items[1].fee += 1.0;
        let report = verify_feasibility(&profile, &menu).unwrap();
        assert!(!report.feasible);
        assert_eq!(report.ic(2, 1).unwrap().slack, -1.0);
        assert_eq!(report.ir_slack(2), Some(-0.625));
        let violated: Vec<_> = report
            .ic_violations()
            .map(|c| (c.type_index, c.contract_index))
            .collect();
        assert_eq!(violated, vec![(2, 1)]);
        assert_eq!(report.ir_violations().count(), 1);
    }

    #[test]
    fn zero_menu_has_zero_slack() {
        let profile = TypeProfile::uniform(&[0.2, 0.5, 0.9], 3.0).unwrap();
        let menu = ContractMenu::from_parts(&[0.0; 3], &[0.0; 3], &[0.1, 0.2, 0.3]).unwrap();
        let report = verify_feasibility(&profile, &menu).unwrap();
        assert!(report.feasible);
        assert!(report.ir.iter().all(|c| c.slack == 0.0 && c.binds));
        assert!(report.ic.iter().all(|c| c.slack == 0.0 && c.binds));
        assert_eq!(report.ic.len(), 6);
    }

    #[test]
    fn length_mismatch() {
        let (profile, _) = canonical();
        let menu = ContractMenu { items: vec![] };
        assert!(matches!(
            verify_feasibility(&profile, &menu),
            Err(Error::LengthMismatch { expected: 2, got: 0 })
        ));
    }

    #[test]
    fn fast_check_agrees_with_report() {
        let (profile, mut menu) = canonical();
        let thetas: Vec<f64> = profile.thetas().collect();
        for bump in [-0.5, -1e-10, 0.0, 1e-10, 2e-9, 0.3] {
            menu.items[1].fee = 1.625 + bump;
            let full = verify_feasibility(&profile, &menu).unwrap().feasible;
            let fast = is_feasible(&thetas, &menu.fees(), &menu.rewards(), 1.0, DEFAULT_TOLERANCE);
            assert_eq!(full, fast, "bump {bump}");
        }
    }
}
