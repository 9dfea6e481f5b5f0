//! Single-round comparison of contract-weighted aggregation (scheme 1), plain
//! averaging under the same contracts (scheme 2) and a flat reward paid to
//! everyone (scheme 3).

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{aggregate, epochs_for_effort, local_train, server_test, ModelVector, TrainSettings};
use super::task::{generate_client_dataset, ClientDataset, CoverageSettings, SyntheticTask};
use crate::contract::{solve_paper_contract, ClientType, ContractItem, RevenueCurve, TypeProfile};
use crate::error::{Error, Result};
use crate::sim::{aggregation_weights, choose_contract_with, client_stream, sample_population, TieBreak};

const DATA_SALT: u64 = 0xDA7A_5EED;
const TRAIN_SALT: u64 = 0x7A1_4ED;

pub const FLAT_REWARD_NOTE: &str =
    "scheme-3 pays every client the beta-weighted mean reward and fee, tests against the \
     beta-weighted mean benchmark, and fixes every client's effort at the beta-weighted mean \
     of the contracted best-response efforts";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    /// Contract menu, reward-proportional weights.
    #[serde(rename = "scheme-1")]
    Contract,
    /// Contract menu, uniform weights.
    #[serde(rename = "scheme-2")]
    FedAvg,
    /// One flat contract, uniform weights.
    #[serde(rename = "scheme-3")]
    Flat,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Contract, Scheme::FedAvg, Scheme::Flat];
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Contract => "scheme-1",
            Scheme::FedAvg => "scheme-2",
            Scheme::Flat => "scheme-3",
        })
    }
}

/// How a submitted model is judged against its benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassGate {
    /// Server-test accuracy must reach the contracted benchmark.
    ServerTest,
    /// Bernoulli draw with probability `min(1, theta * e)`.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSettings {
    pub dimension: usize,
    pub classes: usize,
    pub test_size: usize,
    pub points_per_client: usize,
    pub max_epochs: usize,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub coverage: CoverageSettings,
}

impl Default for TaskSettings {
    fn default() -> Self {
        Self {
            dimension: 2,
            classes: 2,
            test_size: 2000,
            points_per_client: 100,
            max_epochs: 50,
            train: TrainSettings::default(),
            coverage: CoverageSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSettings {
    /// Types and their shares; the cost in here is replaced by each swept value.
    pub profile: TypeProfile,
    pub curve: RevenueCurve,
    pub benchmarks: Vec<f64>,
    pub population: usize,
    pub seeds: Vec<u64>,
    pub c_values: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub gate: PassGate,
    pub task: TaskSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRow {
    pub seed: u64,
    pub c: f64,
    pub scheme: Scheme,
    pub accuracy: f64,
    pub participants: usize,
    pub successes: usize,
    pub total_fees: f64,
    pub total_rewards: f64,
}

/// Per-client view of the contracted (scheme-1/2) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDiagnostic {
    pub seed: u64,
    pub c: f64,
    pub client_id: u64,
    pub type_index: usize,
    pub measured_theta: f64,
    pub effort: f64,
    pub epochs: usize,
    pub local_accuracy: f64,
    pub server_accuracy: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanAccuracy {
    pub c: f64,
    pub scheme: Scheme,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub c: f64,
    /// Scheme-1 >= scheme-2 >= scheme-3 on seed means.
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub seeds: usize,
    pub means: Vec<MeanAccuracy>,
    /// Empty unless all three schemes ran.
    pub ordering: Vec<OrderingCheck>,
    /// Scheme-1 seed means never increase with c; `None` without scheme-1 or a sweep.
    pub smaller_c_not_worse: Option<bool>,
    /// In every run the passing clients held one contract, so scheme-1 and 2 coincide.
    pub degenerate_equal: bool,
    /// Share of below-median-quality clients whose local accuracy beats their server accuracy.
    pub low_quality_gap_share: Option<f64>,
    pub flat_reward_note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeReport {
    pub rows: Vec<SchemeRow>,
    pub clients: Vec<ClientDiagnostic>,
    pub summary: SchemeSummary,
}

impl SchemeReport {
    pub fn mean_accuracy(&self, c: f64, scheme: Scheme) -> Option<f64> {
        self.summary
            .means
            .iter()
            .find(|m| m.c == c && m.scheme == scheme)
            .map(|m| m.accuracy)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_clients_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.clients {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn derived_seed(seed: u64, salt: u64, id: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(id);
    rng.next_u64()
}

fn validate(settings: &ComparisonSettings) -> Result<()> {
    settings.profile.validate()?;
    settings.curve.validate()?;
    if settings.benchmarks.len() != settings.profile.len() {
        return Err(Error::LengthMismatch {
            expected: settings.profile.len(),
            got: settings.benchmarks.len(),
        });
    }
    if settings.seeds.is_empty() || settings.c_values.is_empty() || settings.schemes.is_empty() {
        return Err(Error::domain("comparison needs seeds, c values and schemes"));
    }
    if let Some(c) = settings.c_values.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
        return Err(Error::domain(format!("cost {c} must be positive")));
    }
    if settings.task.max_epochs == 0 || settings.task.points_per_client == 0 {
        return Err(Error::domain("max_epochs and points_per_client must be positive"));
    }
    Ok(())
}

/// A client's submission under one scheme.
struct Entry {
    id: u64,
    item: ContractItem,
    effort: f64,
}

struct Participant<'a> {
    id: u64,
    true_type: ClientType,
    data: &'a ClientDataset,
}

type ModelCache = HashMap<(u64, usize), (ModelVector, f64)>;

/// Trains every missing `(client, epochs)` model and stores it with its server accuracy.
fn fill_cache(
    cache: &mut ModelCache,
    wanted: &[(u64, usize)],
    clients: &HashMap<u64, &ClientDataset>,
    init: &ModelVector,
    task: &SyntheticTask,
    seed: u64,
    settings: &TaskSettings,
) -> Result<()> {
    let mut missing: Vec<(u64, usize)> = wanted
        .iter()
        .copied()
        .filter(|k| !cache.contains_key(k))
        .collect();
    missing.sort_unstable();
    missing.dedup();
    let trained: Vec<((u64, usize), (ModelVector, f64))> = missing
        .par_iter()
        .map(|&(id, epochs)| {
            let effort = epochs as f64 / settings.max_epochs as f64;
            let model = local_train(
                init,
                &clients[&id].data,
                effort,
                settings.max_epochs,
                derived_seed(seed, TRAIN_SALT, id),
                &settings.train,
            )?;
            let acc = server_test(&model, task);
            Ok(((id, epochs), (model, acc)))
        })
        .collect::<Result<_>>()?;
    cache.extend(trained);
    Ok(())
}

pub fn run_scheme_comparison(settings: &ComparisonSettings) -> Result<SchemeReport> {
    validate(settings)?;
    let ts = &settings.task;
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    let mut degenerate_equal = true;

    for &seed in &settings.seeds {
        let task = SyntheticTask::new(ts.dimension, ts.classes, ts.test_size, seed)?;
        let population = sample_population(&settings.profile, settings.population, seed)?;
        let datasets: Vec<ClientDataset> = population
            .par_iter()
            .map(|(id, t)| {
                generate_client_dataset(
                    &task,
                    t.theta,
                    ts.points_per_client,
                    derived_seed(seed, DATA_SALT, *id),
                    &ts.coverage,
                )
            })
            .collect::<Result<_>>()?;
        let participants: Vec<Participant> = population
            .iter()
            .zip(&datasets)
            .map(|(&(id, true_type), data)| Participant { id, true_type, data })
            .collect();
        let by_id: HashMap<u64, &ClientDataset> = participants.iter().map(|p| (p.id, p.data)).collect();
        let init = ModelVector::for_task(&task)?;
        let init_accuracy = server_test(&init, &task);
        let mut cache = ModelCache::new();

        for &c in &settings.c_values {
            let profile = settings.profile.with_cost(c);
            let menu = solve_paper_contract(&profile, &settings.curve, &settings.benchmarks)?;

            let mut contracted = Vec::with_capacity(participants.len());
            for p in &participants {
                let pick =
                    choose_contract_with(p.true_type.theta, &menu, c, TieBreak::Prefer(p.true_type.index))?;
                if let Some(i) = pick.choice.index() {
                    let item = *menu.items.iter().find(|it| it.index == i).expect("menu item");
                    contracted.push(Entry {
                        id: p.id,
                        item,
                        effort: pick.effort,
                    });
                }
            }

            let betas: Vec<f64> = profile.betas().collect();
            let mean = |xs: Vec<f64>| xs.iter().zip(&betas).map(|(x, b)| x * b).sum::<f64>();
            let flat_item = ContractItem {
                index: 0,
                fee: mean(menu.fees()),
                reward: mean(menu.rewards()),
                benchmark: mean(menu.benchmarks()),
            };
            let flat_effort = mean(
                profile
                    .types
                    .iter()
                    .zip(&menu.items)
                    .map(|(t, it)| (t.theta * it.reward / c).clamp(0.0, 1.0))
                    .collect(),
            );
            let flat: Vec<Entry> = participants
                .iter()
                .map(|p| Entry {
                    id: p.id,
                    item: flat_item,
                    effort: flat_effort,
                })
                .collect();

            let wanted: Vec<(u64, usize)> = contracted
                .iter()
                .chain(&flat)
                .map(|e| (e.id, epochs_for_effort(e.effort, ts.max_epochs)))
                .collect();
            fill_cache(&mut cache, &wanted, &by_id, &init, &task, seed, ts)?;

            // One uniform draw per client and cost, shared by every scheme.
            let draws: HashMap<u64, f64> = participants
                .iter()
                .map(|p| (p.id, client_stream(seed ^ c.to_bits(), p.id).random::<f64>()))
                .collect();
            let theta_of: HashMap<u64, f64> =
                participants.iter().map(|p| (p.id, p.true_type.theta)).collect();
            let passes = |e: &Entry| -> bool {
                let (_, acc) = &cache[&(e.id, epochs_for_effort(e.effort, ts.max_epochs))];
                match settings.gate {
                    PassGate::ServerTest => *acc >= e.item.benchmark,
                    PassGate::Sampled => draws[&e.id] < (theta_of[&e.id] * e.effort).clamp(0.0, 1.0),
                }
            };

            for p in &participants {
                let Some(e) = contracted.iter().find(|e| e.id == p.id) else {
                    continue;
                };
                let epochs = epochs_for_effort(e.effort, ts.max_epochs);
                let (model, server_accuracy) = &cache[&(p.id, epochs)];
                diagnostics.push(ClientDiagnostic {
                    seed,
                    c,
                    client_id: p.id,
                    type_index: p.true_type.index,
                    measured_theta: p.data.measured_theta,
                    effort: e.effort,
                    epochs,
                    local_accuracy: model.accuracy(&p.data.data),
                    server_accuracy: *server_accuracy,
                    passed: passes(e),
                });
            }

            let mut accuracies = HashMap::new();
            for &scheme in &settings.schemes {
                let entries = match scheme {
                    Scheme::Contract | Scheme::FedAvg => &contracted,
                    Scheme::Flat => &flat,
                };
                let passed: Vec<&Entry> = entries.iter().filter(|e| passes(e)).collect();
                let weights: Vec<f64> = match scheme {
                    Scheme::Contract => {
                        let items: Vec<(u64, ContractItem)> = passed.iter().map(|e| (e.id, e.item)).collect();
                        let w = aggregation_weights(&items);
                        passed.iter().map(|e| w[&e.id]).collect()
                    }
                    _ => vec![1.0 / passed.len() as f64; passed.len()],
                };
                let accuracy = if passed.is_empty() {
                    init_accuracy
                } else {
                    let models: Vec<(&ModelVector, f64)> = passed
                        .iter()
                        .zip(&weights)
                        .map(|(e, &w)| (&cache[&(e.id, epochs_for_effort(e.effort, ts.max_epochs))].0, w))
                        .collect();
                    server_test(&aggregate(&models)?, &task)
                };
                if scheme != Scheme::Flat {
                    let single = passed.windows(2).all(|w| w[0].item.reward == w[1].item.reward);
                    degenerate_equal &= single;
                }
                accuracies.insert(scheme, accuracy);
                rows.push(SchemeRow {
                    seed,
                    c,
                    scheme,
                    accuracy,
                    participants: entries.len(),
                    successes: passed.len(),
                    total_fees: entries.iter().map(|e| e.item.fee).sum(),
                    total_rewards: passed.iter().map(|e| e.item.reward).sum(),
                });
            }
            if let (Some(a), Some(b)) = (accuracies.get(&Scheme::Contract), accuracies.get(&Scheme::FedAvg)) {
                degenerate_equal &= a == b;
            }
        }
    }

    let summary = summarize(settings, &rows, &diagnostics, degenerate_equal);
    Ok(SchemeReport {
        rows,
        clients: diagnostics,
        summary,
    })
}

fn summarize(
    settings: &ComparisonSettings,
    rows: &[SchemeRow],
    clients: &[ClientDiagnostic],
    degenerate_equal: bool,
) -> SchemeSummary {
    let mut means = Vec::new();
    for &c in &settings.c_values {
        for &scheme in &settings.schemes {
            let accs: Vec<f64> = rows
                .iter()
                .filter(|r| r.c == c && r.scheme == scheme)
                .map(|r| r.accuracy)
                .collect();
            means.push(MeanAccuracy {
                c,
                scheme,
                accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
            });
        }
    }
    let mean_of = |c: f64, s: Scheme| {
        means
            .iter()
            .find(|m| m.c == c && m.scheme == s)
            .map(|m| m.accuracy)
    };

    let ordering = if Scheme::ALL.iter().all(|s| settings.schemes.contains(s)) {
        settings
            .c_values
            .iter()
            .map(|&c| {
                let [a, b, d] = Scheme::ALL.map(|s| mean_of(c, s).unwrap_or(f64::NAN));
                OrderingCheck {
                    c,
                    holds: a >= b && b >= d,
                }
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut costs = settings.c_values.clone();
    costs.sort_by(f64::total_cmp);
    costs.dedup();
    let smaller_c_not_worse = if settings.schemes.contains(&Scheme::Contract) && costs.len() > 1 {
        let curve: Vec<f64> = costs
            .iter()
            .filter_map(|&c| mean_of(c, Scheme::Contract))
            .collect();
        Some(curve.windows(2).all(|w| w[0] >= w[1]))
    } else {
        None
    };

    SchemeSummary {
        seeds: settings.seeds.len(),
        means,
        ordering,
        smaller_c_not_worse,
        degenerate_equal,
        low_quality_gap_share: low_quality_gap_share(clients),
        flat_reward_note: FLAT_REWARD_NOTE.to_string(),
    }
}

/// Among clients whose measured quality is below the median of their seed, the
/// share whose local accuracy strictly exceeds their server accuracy.
pub fn low_quality_gap_share(clients: &[ClientDiagnostic]) -> Option<f64> {
    let mut seeds: Vec<u64> = clients.iter().map(|d| d.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let (mut hits, mut total) = (0usize, 0usize);
    for seed in seeds {
        let group: Vec<&ClientDiagnostic> = clients.iter().filter(|d| d.seed == seed).collect();
        let mut thetas: Vec<f64> = group.iter().map(|d| d.measured_theta).collect();
        thetas.sort_by(f64::total_cmp);
        let n = thetas.len();
        let median = if n % 2 == 1 {
            thetas[n / 2]
        } else {
            0.5 * (thetas[n / 2 - 1] + thetas[n / 2])
        };
        for d in group.iter().filter(|d| d.measured_theta < median) {
            total += 1;
            if d.local_accuracy > d.server_accuracy {
                hits += 1;
            }
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_settings(thetas: &[f64], benchmarks: &[f64], gate: PassGate) -> ComparisonSettings {
        let rewards: Vec<f64> = (0..thetas.len())
            .map(|i| 0.4 + 0.1 * i as f64 * (1.0 + 0.1 * i as f64))
            .collect();
        ComparisonSettings {
            profile: TypeProfile::uniform(thetas, 1.0).unwrap(),
            curve: if thetas.len() > 1 {
                RevenueCurve::table(benchmarks, &rewards).unwrap()
            } else {
                RevenueCurve::Exponential { a: 0.5, b: 1.0 }
            },
            benchmarks: benchmarks.to_vec(),
            population: 8,
            seeds: vec![1, 2],
            c_values: vec![0.5, 2.0],
            schemes: Scheme::ALL.to_vec(),
            gate,
            task: TaskSettings {
                test_size: 500,
                points_per_client: 40,
                max_epochs: 20,
                coverage: CoverageSettings {
                    radius_steps: 16,
                    samples: 500,
                    seed: 3,
                },
                ..TaskSettings::default()
            },
        }
    }

    #[test]
    fn single_type_makes_schemes_one_and_two_coincide() {
        let settings = small_settings(&[0.8], &[0.5], PassGate::ServerTest);
        let report = run_scheme_comparison(&settings).unwrap();
        assert!(report.summary.degenerate_equal);
        for seed in [1, 2] {
            for c in [0.5, 2.0] {
                let acc = |s| {
                    report
                        .rows
                        .iter()
                        .find(|r| r.seed == seed && r.c == c && r.scheme == s)
                        .unwrap()
                        .accuracy
                };
                assert_eq!(acc(Scheme::Contract).to_bits(), acc(Scheme::FedAvg).to_bits());
            }
        }
    }

    #[test]
    fn comparison_is_reproducible() {
        let settings = small_settings(&[0.6, 0.8], &[0.5, 0.6], PassGate::Sampled);
        let a = run_scheme_comparison(&settings).unwrap();
        let b = run_scheme_comparison(&settings).unwrap();
        assert_eq!(a, b);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        let header = String::from_utf8(x).unwrap();
        assert!(
            header.starts_with("seed,c,scheme,accuracy,participants,successes,total_fees,total_rewards\n")
        );
        assert_eq!(a.rows.len(), 2 * 2 * 3);
        assert!(!a.summary.degenerate_equal);
        assert_eq!(a.summary.ordering.len(), 2);
    }

    #[test]
    fn flat_scheme_pays_mean_contract() {
        let settings = small_settings(&[0.6, 0.8], &[0.5, 0.6], PassGate::Sampled);
        let report = run_scheme_comparison(&settings).unwrap();
        for row in report.rows.iter().filter(|r| r.scheme == Scheme::Flat) {
            assert_eq!(row.participants, settings.population);
            let menu = solve_paper_contract(
                &settings.profile.with_cost(row.c),
                &settings.curve,
                &settings.benchmarks,
            )
            .unwrap();
            let mean_fee = 0.5 * (menu.items[0].fee + menu.items[1].fee);
            assert!((row.total_fees - 8.0 * mean_fee).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_settings() {
        let mut settings = small_settings(&[0.6, 0.8], &[0.5, 0.6], PassGate::Sampled);
        settings.c_values = vec![0.0];
        assert!(run_scheme_comparison(&settings).is_err());
        settings.c_values = vec![1.0];
        settings.benchmarks.pop();
        assert!(matches!(
            run_scheme_comparison(&settings),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn gap_share_uses_per_seed_median() {
        let d = |seed, theta, local, server| ClientDiagnostic {
            seed,
            c: 1.0,
            client_id: 0,
            type_index: 1,
            measured_theta: theta,
            effort: 1.0,
            epochs: 1,
            local_accuracy: local,
            server_accuracy: server,
            passed: true,
        };
        let clients = [
            d(1, 0.5, 1.0, 0.5),
            d(1, 0.9, 0.9, 0.95),
            d(2, 0.6, 0.7, 0.8),
            d(2, 0.7, 1.0, 1.0),
        ];
        assert_eq!(low_quality_gap_share(&clients), Some(0.5));
        assert_eq!(low_quality_gap_share(&[]), None);
    }
}
