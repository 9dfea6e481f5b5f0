//! One contracting round: sample clients, let each pick a contract by best
//! response, realize test outcomes, settle payments and weight the models.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::contract::{
    best_response_effort, envelope_utility, verify_feasibility, ClientType, ContractItem, ContractMenu,
    RevenueCurve, TypeProfile, DEFAULT_TOLERANCE,
};
use crate::error::{Error, Result};

/// Two envelope utilities closer than this count as a tie.
pub const TIE_TOLERANCE: f64 = DEFAULT_TOLERANCE;

/// Salt separating the success-draw streams from the population stream.
const SUCCESS_STREAM_SALT: u64 = 0x5EED_0F5C_CE55;

/// Contract index picked by a client, or the outside option.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Contract(usize),
    Reject,
}

impl Choice {
    pub fn index(self) -> Option<usize> {
        match self {
            Choice::Contract(i) => Some(i),
            Choice::Reject => None,
        }
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Choice::Contract(i) => write!(f, "{i}"),
            Choice::Reject => f.write_str("REJECT"),
        }
    }
}

impl Serialize for Choice {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Choice::Contract(i) => s.serialize_u64(*i as u64),
            Choice::Reject => s.serialize_str("REJECT"),
        }
    }
}

impl<'de> Deserialize<'de> for Choice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(Choice::Contract(i)),
            Raw::Text(t) if t == "REJECT" => Ok(Choice::Reject),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("unknown choice `{t}`"))),
        }
    }
}

/// How a client resolves exact indifference between menu items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    LowestIndex,
    /// Take the given item if it is among the maximizers, otherwise the lowest index.
    Prefer(usize),
}

/// Rule the simulator applies for every client.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    LowestIndex,
    /// Indifferent clients keep the item designed for their own type.
    #[default]
    Truthful,
}

impl SelectionRule {
    fn tie_break(self, own_index: usize) -> TieBreak {
        match self {
            SelectionRule::LowestIndex => TieBreak::LowestIndex,
            SelectionRule::Truthful => TieBreak::Prefer(own_index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractChoice {
    pub choice: Choice,
    /// Best-response effort clamped into `[0,1]`; zero on reject.
    pub effort: f64,
    /// Envelope utility of the best item.
    pub utility: f64,
    /// Indices of every item within [`TIE_TOLERANCE`] of the best; more than one
    /// entry means the client was indifferent.
    pub maximizers: Vec<usize>,
}

impl ContractChoice {
    pub fn tied(&self) -> bool {
        self.maximizers.len() > 1
    }
}

/// Best response of a client that only knows its quality; ties go to the lowest index.
pub fn choose_contract(theta: f64, menu: &ContractMenu, c: f64) -> Result<ContractChoice> {
    choose_contract_with(theta, menu, c, TieBreak::LowestIndex)
}

pub fn choose_contract_with(
    theta: f64,
    menu: &ContractMenu,
    c: f64,
    tie_break: TieBreak,
) -> Result<ContractChoice> {
    if !(c > 0.0) {
        return Err(Error::domain(format!("unit cost must be positive, got {c}")));
    }
    let values: Vec<f64> = menu
        .items
        .iter()
        .map(|it| envelope_utility(theta, it.reward, it.fee, c))
        .collect();
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if menu.is_empty() || best < -TIE_TOLERANCE {
        return Ok(ContractChoice {
            choice: Choice::Reject,
            effort: 0.0,
            utility: 0.0,
            maximizers: Vec::new(),
        });
    }
    let maximizers: Vec<usize> = menu
        .items
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v >= best - TIE_TOLERANCE)
        .map(|(it, _)| it.index)
        .collect();
    let picked = match tie_break {
        TieBreak::Prefer(own) if maximizers.contains(&own) => own,
        _ => maximizers[0],
    };
    let pos = menu
        .items
        .iter()
        .position(|it| it.index == picked)
        .expect("maximizer comes from the menu");
    let effort = best_response_effort(theta, menu.items[pos].reward, c)?.clamped;
    Ok(ContractChoice {
        choice: Choice::Contract(picked),
        effort,
        utility: values[pos],
        maximizers,
    })
}

/// `n` independent draws from the type distribution, ids `0..n`.
pub fn sample_population(profile: &TypeProfile, n: usize, seed: u64) -> Result<Vec<(u64, ClientType)>> {
    if n == 0 {
        return Err(Error::domain("population size must be positive"));
    }
    let dist = WeightedIndex::new(profile.betas())
        .map_err(|e| Error::domain(format!("invalid type distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n as u64)
        .map(|id| (id, profile.types[dist.sample(&mut rng)]))
        .collect())
}

fn success_probability(theta: f64, effort: f64) -> f64 {
    (theta * effort).clamp(0.0, 1.0)
}

fn draw_success<R: Rng>(rng: &mut R, theta: f64, effort: f64) -> bool {
    rng.random::<f64>() < success_probability(theta, effort)
}

/// Bernoulli test outcome with probability `min(1, theta * effort)`.
pub fn realize_success(theta: f64, effort: f64, seed: u64) -> bool {
    draw_success(&mut ChaCha8Rng::seed_from_u64(seed), theta, effort)
}

/// Independent, reproducible stream for client `id` of a round seeded with `seed`.
pub(crate) fn client_stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SUCCESS_STREAM_SALT);
    rng.set_stream(id);
    rng
}

/// Reward-proportional aggregation weights over the clients that passed.
///
/// If every passing reward is zero, or all are equal, the weights are exactly uniform.
pub fn aggregation_weights(succeeded: &[(u64, ContractItem)]) -> BTreeMap<u64, f64> {
    let total: f64 = succeeded.iter().map(|(_, it)| it.reward).sum();
    let uniform = 1.0 / succeeded.len() as f64;
    let equal = succeeded.windows(2).all(|p| p[0].1.reward == p[1].1.reward);
    succeeded
        .iter()
        .map(|(id, it)| {
            let w = if total > 0.0 && !equal {
                it.reward / total
            } else {
                uniform
            };
            (*id, w)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundMode {
    /// Payments booked at their expected values `theta * e`.
    Analytic,
    /// Test outcomes drawn at random.
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedClient {
    pub id: u64,
    pub true_type: ClientType,
    pub choice: Choice,
    pub effort: f64,
    pub success_probability: f64,
    /// Realized outcome; always false in analytic mode.
    pub succeeded: bool,
    pub fee: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieEvent {
    pub client_id: u64,
    pub type_index: usize,
    pub maximizers: Vec<usize>,
    pub chosen: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub mode: RoundMode,
    pub menu_feasible: bool,
    pub clients: Vec<SimulatedClient>,
    pub fees_collected: f64,
    pub rewards_paid: f64,
    pub fees_forfeited: f64,
    pub realized_server_utility: f64,
    pub aggregation_weights: BTreeMap<u64, f64>,
    pub tie_events: Vec<TieEvent>,
}

impl RoundOutcome {
    pub fn participants(&self) -> usize {
        self.clients.iter().filter(|c| c.choice != Choice::Reject).count()
    }

    pub fn successes(&self) -> usize {
        self.clients.iter().filter(|c| c.succeeded).count()
    }

    pub fn mean_server_utility(&self) -> f64 {
        self.realized_server_utility / self.clients.len() as f64
    }

    /// One row per client: `id,type,choice,effort,succeeded,fee,reward`.
    pub fn write_clients_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "type", "choice", "effort", "succeeded", "fee", "reward"])?;
        for c in &self.clients {
            w.write_record([
                c.id.to_string(),
                c.true_type.index.to_string(),
                c.choice.to_string(),
                c.effort.to_string(),
                c.succeeded.to_string(),
                c.fee.to_string(),
                c.reward.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundSettings {
    pub population: usize,
    pub mode: RoundMode,
    pub seed: u64,
    pub selection: SelectionRule,
}

pub fn run_round(
    profile: &TypeProfile,
    menu: &ContractMenu,
    curve: &RevenueCurve,
    settings: RoundSettings,
) -> Result<RoundOutcome> {
    let menu_feasible = verify_feasibility(profile, menu)?.feasible;
    if !menu_feasible {
        log::warn!("simulating a menu that fails the IR/IC audit");
    }
    let revenues = curve.eval_all(&menu.benchmarks())?;
    let population = sample_population(profile, settings.population, settings.seed)?;

    let mut clients = Vec::with_capacity(population.len());
    let mut tie_events = Vec::new();
    for (id, true_type) in population {
        let pick = choose_contract_with(
            true_type.theta,
            menu,
            profile.c,
            settings.selection.tie_break(true_type.index),
        )?;
        let item = pick
            .choice
            .index()
            .map(|i| menu.items.iter().position(|it| it.index == i).expect("menu item"));
        if let (true, Some(pos)) = (pick.tied(), item) {
            tie_events.push(TieEvent {
                client_id: id,
                type_index: true_type.index,
                maximizers: pick.maximizers.clone(),
                chosen: menu.items[pos].index,
            });
        }
        let p = success_probability(true_type.theta, pick.effort);
        let succeeded = match (settings.mode, item) {
            (RoundMode::Stochastic, Some(_)) => draw_success(
                &mut client_stream(settings.seed, id),
                true_type.theta,
                pick.effort,
            ),
            _ => false,
        };
        let (fee, reward) = item.map_or((0.0, 0.0), |pos| (menu.items[pos].fee, menu.items[pos].reward));
        clients.push((
            SimulatedClient {
                id,
                true_type,
                choice: pick.choice,
                effort: pick.effort,
                success_probability: if item.is_some() { p } else { 0.0 },
                succeeded,
                fee,
                reward,
            },
            item,
        ));
    }

    // Ledger, reduced in client-id order.
    let (mut fees_collected, mut rewards_paid, mut fees_forfeited, mut net_revenue) = (0.0, 0.0, 0.0, 0.0);
    let mut passed = Vec::new();
    for (c, item) in &clients {
        let Some(pos) = *item else { continue };
        fees_collected += c.fee;
        let margin = revenues[pos] - c.reward;
        match settings.mode {
            RoundMode::Analytic => {
                let p = c.success_probability;
                rewards_paid += p * c.reward;
                fees_forfeited += (1.0 - p) * c.fee;
                net_revenue += p * margin;
            }
            RoundMode::Stochastic if c.succeeded => {
                rewards_paid += c.reward;
                net_revenue += margin;
                passed.push((c.id, menu.items[pos]));
            }
            RoundMode::Stochastic => fees_forfeited += c.fee,
        }
    }

    Ok(RoundOutcome {
        mode: settings.mode,
        menu_feasible,
        clients: clients.into_iter().map(|(c, _)| c).collect(),
        fees_collected,
        rewards_paid,
        fees_forfeited,
        realized_server_utility: fees_collected + net_revenue,
        aggregation_weights: aggregation_weights(&passed),
        tie_events,
    })
}
