//! Decentralized personalized federated learning: Dirichlet non-IID
//! partitioning, SR preprocessing of local datasets, mask-based
//! neighbor aggregation, masked local training, plateau voting with the
//! pruning schedule, per-round metric accounting, and the dense
//! decentralized-averaging baseline.

use crate::constellation::{
    adjacency, link_rate, round_delay, ConstellationConfig, ConstellationError, LinkBudget,
    SatelliteState, TopologyMode,
};
use crate::data::Dataset;
use crate::nn::{
    classifier_loss_grad, ConvSpec, LayerDef, MomentumState, Network, NnError, ParamVector,
    Padding, Tensor4,
};
use crate::parallel::run_indexed;
use crate::pruning::{
    apply_mask, below_threshold_count, init_mask_sfn, pq_index_with, prune_and_regrow,
    prune_quota, prune_schedule, vote_from_distances, LayerQuota, Mask, PruneHyperparams,
    PruneSchedule, PruningError, RegrowthBudget, VoteComparison,
};
use crate::seed::{derive_seed, stream};
use crate::sr::{bicubic_upscale, SrError, SrModel};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;
use std::borrow::Borrow;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PflError {
    #[error(transparent)]
    Constellation(#[from] ConstellationError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Pruning(#[from] PruningError),
    #[error(transparent)]
    Sr(#[from] SrError),
    #[error("non-finite loss at round {round} on satellite {satellite}; aborting the run")]
    NonFiniteLoss { round: usize, satellite: usize },
    #[error("cannot partition {samples} samples over {satellites} satellites")]
    TooFewSamples { samples: usize, satellites: usize },
    #[error("dirichlet alpha must be positive, got {0}")]
    BadAlpha(f64),
    #[error("preprocess mode `sr` needs a trained SR model")]
    MissingSrModel,
}

// ---------------------------------------------------------------------------
// Dirichlet partitioning
// ---------------------------------------------------------------------------

/// Non-IID partition: per class, satellite shares are drawn from
/// Dirichlet(alpha) and samples assigned by largest-remainder rounding.
#[derive(Clone, Debug)]
pub struct PartitionPlan {
    pub alpha: f64,
    /// Per-satellite sorted sample indices; disjoint and exhaustive.
    pub assignments: Vec<Vec<usize>>,
    /// Drawn proportions, `proportions[class][satellite]`.
    pub proportions: Vec<Vec<f64>>,
}

impl PartitionPlan {
    /// Label histogram of one satellite's assignment.
    pub fn label_histogram(&self, labels: &[usize], classes: usize, sat: usize) -> Vec<usize> {
        let mut hist = vec![0usize; classes];
        for &i in &self.assignments[sat] {
            hist[labels[i]] += 1;
        }
        hist
    }

    /// Mean per-satellite label entropy (nats).
    pub fn mean_label_entropy(&self, labels: &[usize], classes: usize) -> f64 {
        let n = self.assignments.len();
        let mut acc = 0.0;
        for sat in 0..n {
            let hist = self.label_histogram(labels, classes, sat);
            let total: usize = hist.iter().sum();
            if total == 0 {
                continue;
            }
            let mut h = 0.0;
            for &c in &hist {
                if c > 0 {
                    let p = c as f64 / total as f64;
                    h -= p * p.ln();
                }
            }
            acc += h;
        }
        acc / n as f64
    }
}

pub fn dirichlet_partition(
    labels: &[usize],
    classes: usize,
    satellites: usize,
    alpha: f64,
    seed: u64,
) -> Result<PartitionPlan, PflError> {
    if alpha <= 0.0 {
        return Err(PflError::BadAlpha(alpha));
    }
    if labels.len() < satellites || satellites == 0 {
        return Err(PflError::TooFewSamples {
            samples: labels.len(),
            satellites,
        });
    }
    let mut rng = stream(seed, "dirichlet", 0);
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); satellites];
    let mut proportions = Vec::with_capacity(classes);
    for class in 0..classes {
        let mut draws: Vec<f64> = (0..satellites).map(|_| gamma.sample(&mut rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum <= 0.0 {
            draws = vec![1.0; satellites];
        }
        let total: f64 = draws.iter().sum();
        let props: Vec<f64> = draws.iter().map(|d| d / total).collect();

        let mut indices: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        indices.shuffle(&mut rng);
        let count = indices.len();
        if count > 0 {
            // largest-remainder rounding of props * count
            let quotas: Vec<f64> = props.iter().map(|p| p * count as f64).collect();
            let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
            let mut remainder = count - take.iter().sum::<usize>();
            let mut order: Vec<usize> = (0..satellites).collect();
            order.sort_by(|&a, &b| {
                let fa = quotas[a] - quotas[a].floor();
                let fb = quotas[b] - quotas[b].floor();
                fb.total_cmp(&fa).then(a.cmp(&b))
            });
            for &sat in order.iter() {
                if remainder == 0 {
                    break;
                }
                take[sat] += 1;
                remainder -= 1;
            }
            let mut cursor = 0usize;
            for (sat, &t) in take.iter().enumerate() {
                assignments[sat].extend_from_slice(&indices[cursor..cursor + t]);
                cursor += t;
            }
        }
        proportions.push(props);
    }

    // Every satellite gets at least one sample: move one from the
    // largest holder (ties to the lowest id) to each empty satellite.
    loop {
        let empty = (0..satellites).find(|&s| assignments[s].is_empty());
        let Some(empty) = empty else { break };
        let donor = (0..satellites)
            .max_by(|&a, &b| {
                assignments[a]
                    .len()
                    .cmp(&assignments[b].len())
                    .then(b.cmp(&a))
            })
            .expect("non-empty satellite exists");
        let moved = assignments[donor].pop().expect("donor has samples");
        assignments[empty].push(moved);
    }
    for a in &mut assignments {
        a.sort_unstable();
    }
    Ok(PartitionPlan {
        alpha,
        assignments,
        proportions,
    })
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PreprocessMode {
    /// Raw low-resolution captures.
    Original,
    /// Bicubic-upscaled captures.
    Bicubic,
    /// SR-enhanced captures: F_map(bicubic(L)).
    Sr,
}

/// Replaces every image of a low-resolution capture set according to the
/// preprocessing mode; labels and size are unchanged.
pub fn sr_preprocess(
    low_res: &Dataset,
    mode: PreprocessMode,
    factor: usize,
    sr_model: Option<&SrModel>,
) -> Result<Dataset, PflError> {
    let images = match mode {
        PreprocessMode::Original => low_res.images.clone(),
        PreprocessMode::Bicubic => low_res
            .images
            .iter()
            .map(|img| bicubic_upscale(img, factor).map_err(SrError::from))
            .collect::<Result<Vec<_>, _>>()?,
        PreprocessMode::Sr => {
            let model = sr_model.ok_or(PflError::MissingSrModel)?;
            low_res
                .images
                .iter()
                .map(|img| {
                    let up = bicubic_upscale(img, factor).map_err(SrError::from)?;
                    model.forward(&up)
                })
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    Ok(Dataset {
        images,
        labels: low_res.labels.clone(),
        classes: low_res.classes,
    })
}

// ---------------------------------------------------------------------------
// Classifier
// ---------------------------------------------------------------------------

/// Four 3x3 convolutions (8-16-16-32 channels, stride 2 on layers 2 and
/// 4, ReLU), global average pooling, and a dense head.
pub fn classifier_network(classes: usize) -> Network {
    Network::new(vec![
        LayerDef::Conv {
            spec: ConvSpec::same(3, 8, 3),
            relu: true,
        },
        LayerDef::Conv {
            spec: ConvSpec {
                in_channels: 8,
                out_channels: 16,
                kernel: 3,
                stride: 2,
                padding: Padding::Same,
            },
            relu: true,
        },
        LayerDef::Conv {
            spec: ConvSpec::same(16, 16, 3),
            relu: true,
        },
        LayerDef::Conv {
            spec: ConvSpec {
                in_channels: 16,
                out_channels: 32,
                kernel: 3,
                stride: 2,
                padding: Padding::Same,
            },
            relu: true,
        },
        LayerDef::GlobalAvgPool,
        LayerDef::Dense {
            inputs: 32,
            outputs: classes,
        },
    ])
}

/// Fraction of argmax-correct predictions; ties resolve to the lowest
/// class index. Empty datasets score 0.
pub fn evaluate(net: &Network, params: &ParamVector<f32>, dataset: &Dataset) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    let mut correct = 0usize;
    for chunk in (0..dataset.len()).collect::<Vec<_>>().chunks(32) {
        let images: Vec<Tensor4<f32>> = chunk.iter().map(|&i| dataset.images[i].clone()).collect();
        let batch = Tensor4::stack(&images).expect("uniform image dims");
        let logits = net.forward(params, &batch).expect("matching architecture");
        for (row, &i) in chunk.iter().enumerate() {
            let mut best = (f32::NEG_INFINITY, 0usize);
            for c in 0..dataset.classes {
                let v = logits.get(row, c, 0, 0);
                if v > best.0 {
                    best = (v, c);
                }
            }
            if best.1 == dataset.labels[i] {
                correct += 1;
            }
        }
    }
    correct as f64 / dataset.len() as f64
}

// ---------------------------------------------------------------------------
// Aggregation and masked training
// ---------------------------------------------------------------------------

/// Mask-based neighbor aggregation over S_n+ (neighbors plus self):
/// coordinate-wise sum of member models divided by the count of member
/// masks that keep the coordinate, multiplied by the own mask. Where no
/// member keeps a coordinate the satellite's own value is preserved
/// (before the own-mask product). Members are summed in ascending id
/// order; accumulation runs in f64.
pub fn neighbor_aggregate<M, K>(
    models: &[M],
    masks: &[K],
    members: &[usize],
    own: usize,
) -> ParamVector<f32>
where
    M: Borrow<ParamVector<f32>>,
    K: Borrow<Mask>,
{
    let own_model = models[own].borrow();
    let own_mask = masks[own].borrow();
    let mut order: Vec<usize> = members.to_vec();
    order.sort_unstable();
    order.dedup();
    let len = own_model.len();
    let mut out = own_model.clone();
    for i in 0..len {
        let mut sum = 0.0f64;
        let mut count = 0u32;
        for &j in &order {
            sum += models[j].borrow().values()[i] as f64;
            count += u32::from(masks[j].borrow().get(i));
        }
        let value = if count > 0 {
            (sum / count as f64) as f32
        } else {
            own_model.values()[i]
        };
        out.values_mut()[i] = if own_mask.get(i) { value } else { 0.0 };
    }
    out
}

/// Masked local training: per batch the momentum accumulates the full
/// gradient (it feeds regrowth), the update applies the masked momentum,
/// and the model is re-masked. Returns the mean per-sample loss.
#[allow(clippy::too_many_arguments)]
pub fn masked_local_train(
    net: &Network,
    params: &mut ParamVector<f32>,
    mask: &Mask,
    momentum: &mut MomentumState<f32>,
    dataset: &Dataset,
    epochs: usize,
    learning_rate: f32,
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<f64, NnError> {
    let mut rng = stream(shuffle_seed, "pfl-shuffle", 0);
    let mut loss_acc = 0.0f64;
    let mut samples = 0usize;
    for _ in 0..epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size.max(1)) {
            let images: Vec<Tensor4<f32>> =
                chunk.iter().map(|&i| dataset.images[i].clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels[i]).collect();
            let batch = Tensor4::stack(&images)?;
            let (loss, grad) = classifier_loss_grad(net, params, &batch, &labels)?;
            momentum.update(grad.values());
            let lambda_applied = momentum.values();
            for ((w, m), &on) in params
                .values_mut()
                .iter_mut()
                .zip(lambda_applied.iter())
                .zip(mask.bits().iter())
            {
                if on {
                    *w -= learning_rate * *m;
                } else {
                    *w = 0.0;
                }
            }
            loss_acc += loss * chunk.len() as f64;
            samples += chunk.len();
        }
    }
    Ok(if samples > 0 {
        loss_acc / samples as f64
    } else {
        0.0
    })
}

// ---------------------------------------------------------------------------
// The training loop
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct PflConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Momentum smoothing lambda.
    pub momentum: f64,
    pub prune: PruneHyperparams,
    pub topology: TopologyMode,
    /// Wall-clock seconds advanced per FL round for orbit propagation.
    pub round_duration_s: f64,
    pub jobs: usize,
    pub seed: u64,
}

impl Default for PflConfig {
    fn default() -> Self {
        Self {
            rounds: 20,
            local_epochs: 1,
            learning_rate: 0.01,
            batch_size: 64,
            momentum: 0.9,
            prune: PruneHyperparams::default(),
            topology: TopologyMode::Ring,
            round_duration_s: 60.0,
            jobs: 1,
            seed: 0,
        }
    }
}

/// Everything the loop consumes besides its configuration.
#[derive(Clone, Debug)]
pub struct PflEnvironment {
    pub constellation_config: ConstellationConfig,
    pub satellites: Vec<SatelliteState>,
    pub link: LinkBudget,
    pub classes: usize,
    /// Preprocessed per-satellite training sets D_n^SR.
    pub train_sets: Vec<Dataset>,
    /// Per-satellite test subsets drawn with each satellite's own label
    /// proportions.
    pub test_personalized: Vec<Dataset>,
    /// Shared test subset for the global-accuracy column.
    pub test_global: Dataset,
    /// Training FLOPs per sample for the computation-delay model.
    pub work_per_sample_flop: f64,
}

/// Per-satellite state carried across rounds.
#[derive(Clone, Debug)]
pub struct SatelliteRoundState {
    pub satellite: usize,
    pub model: ParamVector<f32>,
    pub mask: Mask,
    pub momentum: MomentumState<f32>,
    /// Per-satellite prune rate p_m, halved after each prune event.
    pub prune_rate: f64,
    pub vote_history: Vec<u8>,
    initial_model: ParamVector<f32>,
    prev_dist: f64,
    first_dist: Option<f64>,
}

impl SatelliteRoundState {
    pub fn sparsity(&self) -> f64 {
        self.mask.sparsity()
    }
}

/// One metrics row per (round, satellite).
#[derive(Clone, Debug, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub satellite: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub sparsity: f64,
    pub comm_delay_s: f64,
    pub comp_delay_s: f64,
    pub energy_j: f64,
    pub pruned_this_round: usize,
    pub accuracy_global: f64,
}

/// One prune-log row per (round, satellite, layer).
#[derive(Clone, Debug, Serialize)]
pub struct PruneLogRow {
    pub round: usize,
    pub satellite: usize,
    pub layer: usize,
    pub active_weights: usize,
    pub pq_index: f64,
    pub lower_bound: f64,
    pub prune_count: usize,
    pub regrown: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct PflSummary {
    pub final_mean_accuracy: f64,
    pub final_mean_accuracy_global: f64,
    pub final_mean_sparsity: f64,
    pub total_comm_delay_s: f64,
    pub total_comp_delay_s: f64,
    pub total_energy_j: f64,
    /// Initial pruning time; equals `rounds` when the vote never crossed.
    pub t_hat: usize,
    pub prune_times: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct PflOutcome {
    pub metrics: Vec<RoundMetrics>,
    pub prune_log: Vec<PruneLogRow>,
    pub summary: PflSummary,
    pub final_models: Vec<ParamVector<f32>>,
    pub final_masks: Vec<Mask>,
}

fn layer_quotas(
    model: &ParamVector<f32>,
    mask: &Mask,
    hyper: &PruneHyperparams,
) -> Vec<LayerQuota> {
    (0..mask.num_layers())
        .map(|l| {
            let active: Vec<f64> = mask
                .layer_weight_range(l)
                .filter(|&i| mask.get(i))
                .map(|i| model.values()[i] as f64)
                .collect();
            let pq = if active.is_empty() {
                0.0
            } else {
                pq_index_with(&active, hyper.norm_s, hyper.norm_j, hyper.pq_exponent)
            };
            prune_quota(l, active.len(), pq, hyper)
        })
        .collect()
}

/// Runs the full decentralized PFL loop.
pub fn run_pfl(config: &PflConfig, env: &PflEnvironment) -> Result<PflOutcome, PflError> {
    run_pfl_observed(config, env, |_, _| {})
}

/// Same as [`run_pfl`] with a per-round observer called after each
/// round barrier (post-training, post-pruning).
pub fn run_pfl_observed(
    config: &PflConfig,
    env: &PflEnvironment,
    mut observer: impl FnMut(usize, &[SatelliteRoundState]),
) -> Result<PflOutcome, PflError> {
    config.prune.validate()?;
    let n = env.satellites.len();
    assert_eq!(env.train_sets.len(), n, "one training set per satellite");
    let net = classifier_network(env.classes);
    let shapes = net.param_shapes();
    let masked_mode = config.prune.target_sparsity > 0.0;

    let init: ParamVector<f32> = net.init_params(derive_seed(config.seed, "pfl-init", 0));
    let total_params = init.len();

    let mut states: Vec<SatelliteRoundState> = Vec::with_capacity(n);
    for sat in 0..n {
        let mask = if masked_mode {
            let (mask, _floored) = init_mask_sfn(
                &shapes,
                config.prune.target_sparsity,
                derive_seed(config.seed, "pfl-mask", sat as u64),
            )?;
            mask
        } else {
            Mask::all_ones(shapes.clone())
        };
        let mut model = init.clone();
        apply_mask(&mut model, &mask);
        states.push(SatelliteRoundState {
            satellite: sat,
            initial_model: model.clone(),
            momentum: MomentumState::zeros(model.len(), config.momentum as f32),
            prune_rate: config.prune.prune_rate,
            vote_history: Vec::new(),
            prev_dist: 0.0,
            first_dist: None,
            model,
            mask,
        });
    }

    let rates: Vec<f64> = env
        .satellites
        .iter()
        .map(|s| link_rate(&env.link, s))
        .collect();

    let mut metrics = Vec::with_capacity(config.rounds * n);
    let mut prune_log = Vec::new();
    let mut t_hat: Option<usize> = None;
    let mut schedule: Option<PruneSchedule> = None;

    for round in 1..=config.rounds {
        let t = (round - 1) as f64 * config.round_duration_s;
        let topo = adjacency(
            &env.satellites,
            round,
            t,
            config.topology,
            &env.constellation_config,
        )?;

        // Aggregation barrier over the previous round's models.
        let models: Vec<&ParamVector<f32>> = states.iter().map(|s| &s.model).collect();
        let masks: Vec<&Mask> = states.iter().map(|s| &s.mask).collect();
        let aggregated: Vec<ParamVector<f32>> = run_indexed(config.jobs, n, |sat| {
            let mut members = topo.neighbors(sat);
            members.push(sat);
            neighbor_aggregate(&models, &masks, &members, sat)
        });
        drop(models);
        drop(masks);

        // Local training.
        let trained: Vec<Result<(ParamVector<f32>, MomentumState<f32>, f64), NnError>> =
            run_indexed(config.jobs, n, |sat| {
                let mut params = aggregated[sat].clone();
                let mut momentum = states[sat].momentum.clone();
                let loss = masked_local_train(
                    &net,
                    &mut params,
                    &states[sat].mask,
                    &mut momentum,
                    &env.train_sets[sat],
                    config.local_epochs,
                    config.learning_rate as f32,
                    config.batch_size,
                    derive_seed(config.seed, "pfl-round", ((round as u64) << 32) | sat as u64),
                )?;
                Ok((params, momentum, loss))
            });
        let mut losses = vec![0.0f64; n];
        for (sat, result) in trained.into_iter().enumerate() {
            let (params, momentum, loss) = result.map_err(|e| match e {
                NnError::NonFiniteLoss => PflError::NonFiniteLoss {
                    round,
                    satellite: sat,
                },
                other => PflError::Nn(other),
            })?;
            states[sat].model = params;
            states[sat].momentum = momentum;
            losses[sat] = loss;
        }

        // Plateau votes, broadcast instantly; the vote compares squared
        // distances to the initial model, normalized by the first step.
        let mut votes = Vec::with_capacity(n);
        for state in states.iter_mut() {
            let dist = state.model.l2_distance_sq(&state.initial_model);
            let first = *state.first_dist.get_or_insert(dist);
            let v = vote_from_distances(dist, state.prev_dist, first, config.prune.vote_threshold);
            state.prev_dist = dist;
            state.vote_history.push(v);
            votes.push(v);
        }
        let mean_vote = votes.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        if t_hat.is_none() {
            let crossed = match config.prune.vote_comparison {
                VoteComparison::Below => mean_vote < config.prune.vote_ratio,
                VoteComparison::Above => mean_vote >= config.prune.vote_ratio,
            };
            if crossed {
                t_hat = Some(round);
                schedule = Some(prune_schedule(
                    round,
                    config.prune.schedule_alpha,
                    config.prune.schedule_beta,
                    config.prune.schedule_gamma,
                    config.rounds,
                ));
            }
        }

        // Prune events while below the target sparsity.
        let mut pruned_counts = vec![0usize; n];
        let due = masked_mode && schedule.as_ref().is_some_and(|s| s.contains(round));
        if due {
            for sat in 0..n {
                let state = &mut states[sat];
                if state.mask.sparsity() >= config.prune.target_sparsity {
                    continue;
                }
                let quotas = layer_quotas(&state.model, &state.mask, &config.prune);
                let budget = match config.prune.regrowth {
                    RegrowthBudget::MatchedToPruned => None,
                    RegrowthBudget::BelowPruneRate => Some(below_threshold_count(
                        &state.model,
                        &state.mask,
                        state.prune_rate,
                    )),
                };
                let outcome = prune_and_regrow(
                    &mut state.model,
                    &mut state.mask,
                    &state.momentum,
                    &quotas,
                    budget,
                );
                state.prune_rate *= 0.5;
                pruned_counts[sat] = outcome.pruned;
                for layer in &outcome.layers {
                    prune_log.push(PruneLogRow {
                        round,
                        satellite: sat,
                        layer: layer.layer,
                        active_weights: layer.active_before,
                        pq_index: layer.pq_index,
                        lower_bound: layer.lower_bound,
                        prune_count: layer.pruned,
                        regrown: layer.regrown,
                    });
                }
            }
        }

        // Metrics: accuracy on the personalized and global test splits,
        // payload accounting (weights of active coordinates plus the
        // mask bitmap in masked mode), and the delay/energy model.
        let accuracy: Vec<(f64, f64)> = run_indexed(config.jobs, n, |sat| {
            let state = &states[sat];
            (
                evaluate(&net, &state.model, &env.test_personalized[sat]),
                evaluate(&net, &state.model, &env.test_global),
            )
        });
        for sat in 0..n {
            let state = &states[sat];
            let payload_bits = if masked_mode {
                32.0 * state.mask.active_count() as f64 + total_params as f64
            } else {
                32.0 * total_params as f64
            };
            let delay = round_delay(
                payload_bits,
                rates[sat],
                config.local_epochs,
                env.train_sets[sat].len(),
                env.work_per_sample_flop,
                &env.satellites[sat],
            );
            metrics.push(RoundMetrics {
                round,
                satellite: sat,
                accuracy: accuracy[sat].0,
                loss: losses[sat],
                sparsity: state.mask.sparsity(),
                comm_delay_s: delay.comm_s,
                comp_delay_s: delay.comp_s,
                energy_j: delay.energy_j,
                pruned_this_round: pruned_counts[sat],
                accuracy_global: accuracy[sat].1,
            });
        }

        observer(round, &states);
    }

    let last_round = metrics.len() - n;
    let final_rows = &metrics[last_round..];
    let summary = PflSummary {
        final_mean_accuracy: final_rows.iter().map(|m| m.accuracy).sum::<f64>() / n as f64,
        final_mean_accuracy_global: final_rows.iter().map(|m| m.accuracy_global).sum::<f64>()
            / n as f64,
        final_mean_sparsity: final_rows.iter().map(|m| m.sparsity).sum::<f64>() / n as f64,
        total_comm_delay_s: metrics.iter().map(|m| m.comm_delay_s).sum(),
        total_comp_delay_s: metrics.iter().map(|m| m.comp_delay_s).sum(),
        total_energy_j: metrics.iter().map(|m| m.energy_j).sum(),
        t_hat: t_hat.unwrap_or(config.rounds),
        prune_times: schedule.map(|s| s.times).unwrap_or_default(),
    };
    Ok(PflOutcome {
        metrics,
        prune_log,
        summary,
        final_models: states.iter().map(|s| s.model.clone()).collect(),
        final_masks: states.iter().map(|s| s.mask.clone()).collect(),
    })
}

/// Dense decentralized-averaging baseline: the same loop with all-ones
/// masks, no pruning, and dense payload accounting. Definitionally
/// identical to `run_pfl` with target sparsity zero.
pub fn dense_baseline(config: &PflConfig, env: &PflEnvironment) -> Result<PflOutcome, PflError> {
    let mut dense = config.clone();
    dense.prune.target_sparsity = 0.0;
    run_pfl(&dense, env)
}

// ---------------------------------------------------------------------------
// Metric writers
// ---------------------------------------------------------------------------

pub fn write_metrics_csv<W: std::io::Write>(
    w: &mut W,
    metrics: &[RoundMetrics],
) -> std::io::Result<()> {
    writeln!(
        w,
        "round,satellite,accuracy,loss,sparsity,comm_delay_s,comp_delay_s,energy_j,pruned_this_round,accuracy_global"
    )?;
    for m in metrics {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            m.round,
            m.satellite,
            m.accuracy,
            m.loss,
            m.sparsity,
            m.comm_delay_s,
            m.comp_delay_s,
            m.energy_j,
            m.pruned_this_round,
            m.accuracy_global
        )?;
    }
    Ok(())
}

pub fn write_prune_log_csv<W: std::io::Write>(
    w: &mut W,
    rows: &[PruneLogRow],
) -> std::io::Result<()> {
    writeln!(
        w,
        "round,satellite,layer,active_weights,pq_index,lower_bound,prune_count,regrown"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.round,
            r.satellite,
            r.layer,
            r.active_weights,
            r.pq_index,
            r.lower_bound,
            r.prune_count,
            r.regrown
        )?;
    }
    Ok(())
}
