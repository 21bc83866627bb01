//! Three-layer super-resolution CNN trained by decentralized FL:
//! bicubic preprocessing, the mapping network, capacity-based satellite
//! selection, local SGD with data-size-weighted aggregation, and
//! PSNR/SSIM evaluation.

mod bicubic;
mod metrics;

pub use bicubic::{bicubic_upscale, box_downsample, BicubicError};
pub use metrics::{psnr, ssim};

use crate::constellation::SatelliteState;
use crate::nn::{
    regression_loss_grad, ConvSpec, LayerDef, Network, NnError, ParamVector, Tensor4,
};
use crate::parallel::run_indexed;
use crate::seed::{derive_seed, stream};
use rand::seq::SliceRandom;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SrError {
    #[error(transparent)]
    Bicubic(#[from] BicubicError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid SR hyperparameters: {0}")]
    BadHyperparams(String),
    #[error("cohort size {requested} exceeds constellation size {available}")]
    CohortTooLarge { requested: usize, available: usize },
}

/// Architecture of the mapping network: patch extraction (k1), 1x1
/// non-linear mapping (k2), reconstruction (k3, linear output).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SrHyperparams {
    /// Input (and output) image channels C.
    pub channels: usize,
    pub d1: usize,
    pub d2: usize,
    pub k1: usize,
    pub k2: usize,
    pub k3: usize,
}

impl Default for SrHyperparams {
    fn default() -> Self {
        Self {
            channels: 3,
            d1: 16,
            d2: 8,
            k1: 9,
            k2: 1,
            k3: 5,
        }
    }
}

impl SrHyperparams {
    pub fn validate(&self) -> Result<(), SrError> {
        if self.k2 != 1 {
            return Err(SrError::BadHyperparams(format!(
                "the mapping layer kernel k2 must be 1, got {}",
                self.k2
            )));
        }
        if self.channels == 0 || self.d1 == 0 || self.d2 == 0 {
            return Err(SrError::BadHyperparams(
                "channel widths must be positive".to_string(),
            ));
        }
        if self.k1 % 2 == 0 || self.k3 % 2 == 0 {
            return Err(SrError::BadHyperparams(
                "kernels must be odd for symmetric same-padding".to_string(),
            ));
        }
        Ok(())
    }

    /// relu(K1 * L + b1) -> relu(K2 * . + b2) -> K3 * . + b3.
    pub fn network(&self) -> Network {
        Network::new(vec![
            LayerDef::Conv {
                spec: ConvSpec::same(self.channels, self.d1, self.k1),
                relu: true,
            },
            LayerDef::Conv {
                spec: ConvSpec::same(self.d1, self.d2, self.k2),
                relu: true,
            },
            LayerDef::Conv {
                spec: ConvSpec::same(self.d2, self.channels, self.k3),
                relu: false,
            },
        ])
    }
}

/// The SR model: hyperparameters plus the flat parameter vector phi.
#[derive(Clone, Debug)]
pub struct SrModel {
    hyper: SrHyperparams,
    params: ParamVector<f32>,
}

impl SrModel {
    pub fn new_seeded(hyper: SrHyperparams, seed: u64) -> Result<Self, SrError> {
        hyper.validate()?;
        let params = hyper.network().init_params(seed);
        Ok(Self { hyper, params })
    }

    pub fn from_params(hyper: SrHyperparams, params: ParamVector<f32>) -> Result<Self, SrError> {
        hyper.validate()?;
        if params.segments() != hyper.network().param_shapes().as_slice() {
            return Err(SrError::BadHyperparams(
                "parameter vector does not match the SR architecture".to_string(),
            ));
        }
        Ok(Self { hyper, params })
    }

    pub fn hyper(&self) -> &SrHyperparams {
        &self.hyper
    }

    pub fn params(&self) -> &ParamVector<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector<f32> {
        &mut self.params
    }

    /// F_map(L): forward through the three layers.
    pub fn forward(&self, low: &Tensor4<f32>) -> Result<Tensor4<f32>, SrError> {
        Ok(self.hyper.network().forward(&self.params, low)?)
    }
}

/// One training pair: the bicubic-upscaled low-resolution image and its
/// high-resolution counterpart, identical dims.
#[derive(Clone, Debug)]
pub struct SrPair {
    pub low_upscaled: Tensor4<f32>,
    pub high: Tensor4<f32>,
}

impl SrPair {
    pub fn new(low_upscaled: Tensor4<f32>, high: Tensor4<f32>) -> Result<Self, SrError> {
        if low_upscaled.dims() != high.dims() {
            return Err(SrError::Nn(NnError::ShapeMismatch(format!(
                "pair dims {:?} vs {:?}",
                low_upscaled.dims(),
                high.dims()
            ))));
        }
        Ok(Self { low_upscaled, high })
    }
}

/// Local SR loss: mean over pairs of the summed squared residual
/// ||F_map(L) - H||^2 (one pair's inner norm is a sum over all pixels
/// and channels; the outer normalization is 1/|D|).
pub fn sr_local_loss(model: &SrModel, pairs: &[SrPair]) -> Result<f64, SrError> {
    if pairs.is_empty() {
        return Err(SrError::EmptyDataset);
    }
    let mut acc = 0.0f64;
    for pair in pairs {
        let pred = model.forward(&pair.low_upscaled)?;
        let mut sum = 0.0f64;
        for (p, t) in pred.data().iter().zip(pair.high.data().iter()) {
            let d = (*p as f64) - (*t as f64);
            sum += d * d;
        }
        acc += sum;
    }
    Ok(acc / pairs.len() as f64)
}

/// Satellites selected for SR training.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SrTrainingCohort {
    /// Satellite ids, in selection order.
    pub selected: Vec<usize>,
}

/// Capacity-based selection: iterate orbits in index order, picking the
/// highest-capacity not-yet-selected satellite per orbit (ties to the
/// lowest id), cycling until `max` satellites are chosen.
pub fn select_satellites(
    sats: &[SatelliteState],
    max: usize,
) -> Result<SrTrainingCohort, SrError> {
    if max > sats.len() {
        return Err(SrError::CohortTooLarge {
            requested: max,
            available: sats.len(),
        });
    }
    let num_orbits = sats.iter().map(|s| s.orbit_id + 1).max().unwrap_or(0);
    let mut selected = Vec::with_capacity(max);
    let mut taken = vec![false; sats.len()];
    while selected.len() < max {
        let before = selected.len();
        for orbit in 0..num_orbits {
            if selected.len() >= max {
                break;
            }
            let pick = sats
                .iter()
                .filter(|s| s.orbit_id == orbit && !taken[s.sat_id])
                .max_by(|a, b| {
                    a.compute_capacity_flops
                        .total_cmp(&b.compute_capacity_flops)
                        .then(b.sat_id.cmp(&a.sat_id))
                });
            if let Some(sat) = pick {
                taken[sat.sat_id] = true;
                selected.push(sat.sat_id);
            }
        }
        if selected.len() == before {
            break;
        }
    }
    Ok(SrTrainingCohort { selected })
}

/// Data-size-weighted average of parameter vectors. Accumulation runs
/// in f64 with integer weights so averaging identical models is exact.
pub fn weighted_average(models: &[ParamVector<f32>], sizes: &[usize]) -> ParamVector<f32> {
    assert_eq!(models.len(), sizes.len());
    assert!(!models.is_empty());
    let total: usize = sizes.iter().sum();
    assert!(total > 0, "aggregation needs at least one sample");
    let mut out = models[0].clone();
    let len = out.len();
    let mut acc = vec![0.0f64; len];
    for (model, &size) in models.iter().zip(sizes.iter()) {
        debug_assert!(model.same_layout(&out));
        let weight = size as f64;
        for (a, v) in acc.iter_mut().zip(model.values()) {
            *a += weight * (*v as f64);
        }
    }
    let inv_total = total as f64;
    for (o, a) in out.values_mut().iter_mut().zip(acc.iter()) {
        *o = (a / inv_total) as f32;
    }
    out
}

/// Configuration of the decentralized SR training loop.
#[derive(Clone, Debug)]
pub struct SrTrainConfig {
    pub hyper: SrHyperparams,
    pub rounds: usize,
    pub cohort_size: usize,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub jobs: usize,
}

impl Default for SrTrainConfig {
    fn default() -> Self {
        Self {
            hyper: SrHyperparams::default(),
            rounds: 30,
            cohort_size: 5,
            learning_rate: 0.3,
            local_epochs: 10,
            batch_size: 4,
            jobs: 1,
        }
    }
}

/// Per-round, per-satellite SR metrics row.
#[derive(Clone, Debug)]
pub struct SrRoundMetrics {
    pub round: usize,
    pub satellite: usize,
    /// Local loss of the trained local model on its own pairs.
    pub loss: f64,
    /// Mean per-pair PSNR of the aggregated model on the eval split.
    pub psnr_db: f64,
    /// Mean SSIM of the aggregated model on the eval split.
    pub ssim: f64,
}

/// Local minibatch SGD from the current global parameters.
fn local_sr_update(
    net: &Network,
    global: &ParamVector<f32>,
    pairs: &[SrPair],
    cfg: &SrTrainConfig,
    shuffle_seed: u64,
) -> Result<ParamVector<f32>, SrError> {
    let mut params = global.clone();
    let mut rng = stream(shuffle_seed, "sr-shuffle", 0);
    let lr = cfg.learning_rate as f32;
    for _ in 0..cfg.local_epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let lows: Vec<Tensor4<f32>> =
                chunk.iter().map(|&i| pairs[i].low_upscaled.clone()).collect();
            let highs: Vec<Tensor4<f32>> = chunk.iter().map(|&i| pairs[i].high.clone()).collect();
            let input = Tensor4::stack(&lows)?;
            let target = Tensor4::stack(&highs)?;
            let (_, grad) = regression_loss_grad(net, &params, &input, &target)?;
            params.scaled_add(-lr, &grad);
        }
    }
    Ok(params)
}

/// One synchronous round: local SGD on every cohort satellite from the
/// shared global model, then the data-size-weighted average.
pub fn sr_train_round(
    global: &SrModel,
    cohort: &SrTrainingCohort,
    datasets: &[Vec<SrPair>],
    cfg: &SrTrainConfig,
    round: usize,
    seed: u64,
) -> Result<(SrModel, Vec<f64>), SrError> {
    let net = global.hyper.network();
    let results: Vec<Result<(ParamVector<f32>, f64), SrError>> =
        run_indexed(cfg.jobs, cohort.selected.len(), |slot| {
            let sat = cohort.selected[slot];
            let pairs = &datasets[sat];
            if pairs.is_empty() {
                return Err(SrError::EmptyDataset);
            }
            let shuffle_seed = derive_seed(seed, "sr-round", (round as u64) << 32 | sat as u64);
            let params = local_sr_update(&net, global.params(), pairs, cfg, shuffle_seed)?;
            let local = SrModel::from_params(global.hyper, params)?;
            let loss = sr_local_loss(&local, pairs)?;
            Ok((local.params, loss))
        });
    let mut locals = Vec::with_capacity(results.len());
    let mut losses = Vec::with_capacity(results.len());
    let mut sizes = Vec::with_capacity(results.len());
    for (slot, result) in results.into_iter().enumerate() {
        let (params, loss) = result?;
        locals.push(params);
        losses.push(loss);
        sizes.push(datasets[cohort.selected[slot]].len());
    }
    let averaged = weighted_average(&locals, &sizes);
    Ok((SrModel::from_params(global.hyper, averaged)?, losses))
}

/// Mean per-pair PSNR and SSIM of a model over an evaluation split.
pub fn evaluate_sr(model: &SrModel, pairs: &[SrPair], max_val: f64) -> Result<(f64, f64), SrError> {
    if pairs.is_empty() {
        return Err(SrError::EmptyDataset);
    }
    let mut psnr_acc = 0.0f64;
    let mut ssim_acc = 0.0f64;
    for pair in pairs {
        let pred = model.forward(&pair.low_upscaled)?;
        psnr_acc += psnr(&pred, &pair.high, max_val)?;
        ssim_acc += ssim(&pred, &pair.high, max_val)?;
    }
    let n = pairs.len() as f64;
    Ok((psnr_acc / n, ssim_acc / n))
}

/// Full decentralized SR training: capacity-based selection once, then
/// `rounds` synchronous rounds. Metrics carry each selected satellite's
/// local loss and the aggregated model's eval PSNR/SSIM per round.
pub fn train_sr(
    cfg: &SrTrainConfig,
    sats: &[SatelliteState],
    datasets: &[Vec<SrPair>],
    eval_pairs: &[SrPair],
    seed: u64,
) -> Result<(SrModel, SrTrainingCohort, Vec<SrRoundMetrics>), SrError> {
    let cohort = select_satellites(sats, cfg.cohort_size)?;
    let mut global = SrModel::new_seeded(cfg.hyper, derive_seed(seed, "sr-init", 0))?;
    let mut metrics = Vec::new();
    for round in 1..=cfg.rounds {
        let (next, losses) = sr_train_round(&global, &cohort, datasets, cfg, round, seed)?;
        global = next;
        let (psnr_db, ssim_val) = if eval_pairs.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            evaluate_sr(&global, eval_pairs, 1.0)?
        };
        for (slot, &sat) in cohort.selected.iter().enumerate() {
            metrics.push(SrRoundMetrics {
                round,
                satellite: sat,
                loss: losses[slot],
                psnr_db,
                ssim: ssim_val,
            });
        }
    }
    Ok((global, cohort, metrics))
}
