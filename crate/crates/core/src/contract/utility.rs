use serde::{Deserialize, Serialize};

use super::{ContractItem, ContractMenu, RevenueCurve, TypeProfile};
use crate::error::{Error, Result};

fn check_cost(c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::domain(format!("unit cost must be positive, got {c}")));
    }
    Ok(())
}

/// Utility-maximizing effort for a given reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Effort {
    /// Effort clamped into `[0, 1]`.
    pub clamped: f64,
    /// `theta * R / c` without the physical bound.
    pub unclamped: f64,
}

pub fn best_response_effort(theta: f64, reward: f64, c: f64) -> Result<Effort> {
    check_cost(c)?;
    if theta < 0.0 || reward < 0.0 {
        return Err(Error::domain(format!(
            "theta ({theta}) and reward ({reward}) must be non-negative"
        )));
    }
    let unclamped = theta * reward / c;
    Ok(Effort {
        clamped: unclamped.clamp(0.0, 1.0),
        unclamped,
    })
}

/// `theta * e * R - f - (c/2) e^2`.
pub fn client_utility(theta: f64, effort: f64, item: &ContractItem, c: f64) -> f64 {
    theta * effort * item.reward - item.fee - 0.5 * c * effort * effort
}

/// Envelope utility `(theta * R)^2 / (2c) - f` of a client at its unclamped best response.
#[inline]
pub fn envelope_utility(theta: f64, reward: f64, fee: f64, c: f64) -> f64 {
    let x = theta * reward;
    x * x / (2.0 * c) - fee
}

pub fn client_utility_at_best_response(theta: f64, item: &ContractItem, c: f64) -> Result<f64> {
    check_cost(c)?;
    Ok(envelope_utility(theta, item.reward, item.fee, c))
}

/// Expected server utility `sum beta_i (f_i + theta_i^2 R_i (G(M_i) - R_i) / c)`
/// with efforts at the unclamped best response.
pub fn server_expected_utility(
    profile: &TypeProfile,
    menu: &ContractMenu,
    curve: &RevenueCurve,
) -> Result<f64> {
    menu.check_len(profile)?;
    check_cost(profile.c)?;
    let mut total = 0.0;
    for (t, it) in profile.types.iter().zip(&menu.items) {
        let g = curve.eval(it.benchmark)?;
        total += t.beta * (it.fee + t.theta * t.theta * it.reward * (g - it.reward) / profile.c);
    }
    Ok(total)
}

/// Expected server utility when every type takes its own contract with effort
/// clamped into `[0,1]` and success probability `min(1, theta * e)`.
pub fn server_expected_utility_clamped(
    profile: &TypeProfile,
    menu: &ContractMenu,
    curve: &RevenueCurve,
) -> Result<f64> {
    menu.check_len(profile)?;
    let mut total = 0.0;
    for (t, it) in profile.types.iter().zip(&menu.items) {
        let g = curve.eval(it.benchmark)?;
        let e = best_response_effort(t.theta, it.reward, profile.c)?.clamped;
        let p = (t.theta * e).min(1.0);
        total += t.beta * (it.fee + p * (g - it.reward));
    }
    Ok(total)
}
