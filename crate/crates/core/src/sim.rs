//! Experiment driver: builds the constellation and dataset, trains the
//! SR model, partitions data across satellites, preprocesses local
//! datasets, and runs the PFL loop. Every artifact derives from one
//! master seed.

use crate::constellation::{
    build_walker_star, ConstellationConfig, ConstellationError, HardwareProfile, LinkBudget,
    SatelliteState,
};
use crate::data::{
    build_sr_views, generate_synthetic, make_sr_pairs, split_train_test, DataError, Dataset,
    SrViews, SyntheticDatasetSpec,
};
use crate::pfl::{
    classifier_network, dirichlet_partition, run_pfl_observed, sr_preprocess, PartitionPlan,
    PflConfig, PflEnvironment, PflError, PflOutcome, PreprocessMode, SatelliteRoundState,
};
use crate::sr::{train_sr, SrError, SrModel, SrPair, SrRoundMetrics, SrTrainConfig, SrTrainingCohort};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Constellation(#[from] ConstellationError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sr(#[from] SrError),
    #[error(transparent)]
    Pfl(#[from] PflError),
}

/// Full experiment description.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub constellation: ConstellationConfig,
    pub hardware: HardwareProfile,
    pub link: LinkBudget,
    pub dataset: SyntheticDatasetSpec,
    /// Upscale factor (2 or 4).
    pub scale: usize,
    pub sr: SrTrainConfig,
    pub pfl: PflConfig,
    pub preprocess: PreprocessMode,
    pub dirichlet_alpha: f64,
    pub train_fraction: f64,
    /// Personalized test subset size per satellite.
    pub test_per_satellite: usize,
    /// Cap on the shared global test subset.
    pub global_test_cap: usize,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            constellation: ConstellationConfig::default(),
            hardware: HardwareProfile::default(),
            link: LinkBudget::default(),
            dataset: SyntheticDatasetSpec::default(),
            scale: 2,
            sr: SrTrainConfig::default(),
            pfl: PflConfig::default(),
            preprocess: PreprocessMode::Sr,
            dirichlet_alpha: 0.3,
            train_fraction: 0.8,
            test_per_satellite: 32,
            global_test_cap: 48,
            seed: 0,
        }
    }
}

/// Constellation, imagery, split, and partition shared by the SR and
/// PFL phases.
#[derive(Clone, Debug)]
pub struct PreparedWorld {
    pub satellites: Vec<SatelliteState>,
    /// Clean high-resolution dataset.
    pub dataset: Dataset,
    /// Low-resolution capture views and their bicubic upscales.
    pub views: SrViews,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub partition: PartitionPlan,
    /// Per-satellite global sample indices (train split).
    pub per_sat_indices: Vec<Vec<usize>>,
    /// SR training pairs per satellite.
    pub sr_train_sets: Vec<Vec<SrPair>>,
    /// Held-out SR evaluation pairs (test split).
    pub sr_eval_pairs: Vec<SrPair>,
}

pub fn prepare_world(spec: &ExperimentSpec) -> Result<PreparedWorld, SimError> {
    let satellites = build_walker_star(&spec.constellation, &spec.hardware, spec.seed)?;
    let mut dataset_spec = spec.dataset.clone();
    dataset_spec.seed = spec.seed;
    let dataset = generate_synthetic(&dataset_spec)?;
    prepare_world_with_dataset(spec, satellites, dataset)
}

/// Same as [`prepare_world`] but with externally supplied imagery.
pub fn prepare_world_with_dataset(
    spec: &ExperimentSpec,
    satellites: Vec<SatelliteState>,
    dataset: Dataset,
) -> Result<PreparedWorld, SimError> {
    let views = build_sr_views(&dataset, spec.scale, spec.dataset.texture.noise_sigma, spec.seed)?;
    let (train_indices, test_indices) = split_train_test(&dataset, spec.train_fraction, spec.seed);
    let train_labels: Vec<usize> = train_indices.iter().map(|&i| dataset.labels[i]).collect();
    let partition = dirichlet_partition(
        &train_labels,
        dataset.classes,
        satellites.len(),
        spec.dirichlet_alpha,
        spec.seed,
    )?;
    let per_sat_indices: Vec<Vec<usize>> = partition
        .assignments
        .iter()
        .map(|positions| positions.iter().map(|&p| train_indices[p]).collect())
        .collect();
    let sr_train_sets: Vec<Vec<SrPair>> = per_sat_indices
        .iter()
        .map(|indices| make_sr_pairs(&views, &dataset, indices))
        .collect::<Result<_, _>>()?;
    let sr_eval_pairs = make_sr_pairs(&views, &dataset, &test_indices)?;
    Ok(PreparedWorld {
        satellites,
        dataset,
        views,
        train_indices,
        test_indices,
        partition,
        per_sat_indices,
        sr_train_sets,
        sr_eval_pairs,
    })
}

/// Runs decentralized SR training over the prepared world.
pub fn train_sr_phase(
    spec: &ExperimentSpec,
    world: &PreparedWorld,
) -> Result<(SrModel, SrTrainingCohort, Vec<SrRoundMetrics>), SimError> {
    Ok(train_sr(
        &spec.sr,
        &world.satellites,
        &world.sr_train_sets,
        &world.sr_eval_pairs,
        spec.seed,
    )?)
}

/// Builds the PFL environment: per-satellite preprocessed training
/// sets, personalized test subsets matching each satellite's label
/// proportions, the shared global test subset, and the compute model.
pub fn build_pfl_environment(
    spec: &ExperimentSpec,
    world: &PreparedWorld,
    sr_model: Option<&SrModel>,
) -> Result<PflEnvironment, SimError> {
    let n = world.satellites.len();
    let low_res_all = Dataset {
        images: world.views.low_res.clone(),
        labels: world.dataset.labels.clone(),
        classes: world.dataset.classes,
    };

    // Training sets: satellite-local captures through the chosen mode.
    let mut train_sets = Vec::with_capacity(n);
    for indices in &world.per_sat_indices {
        let local = low_res_all.subset(indices);
        train_sets.push(sr_preprocess(&local, spec.preprocess, world.views.factor, sr_model)?);
    }

    // Shared preprocessed test pool.
    let test_pool_low = low_res_all.subset(&world.test_indices);
    let test_pool = sr_preprocess(&test_pool_low, spec.preprocess, world.views.factor, sr_model)?;

    // Personalized test subsets: targets per class by largest-remainder
    // rounding of each satellite's train label proportions; indices
    // rotate through each class pool so satellites see different items.
    let mut class_pools: Vec<Vec<usize>> = vec![Vec::new(); test_pool.classes];
    for (i, &label) in test_pool.labels.iter().enumerate() {
        class_pools[label].push(i);
    }
    let train_labels: Vec<usize> = world
        .train_indices
        .iter()
        .map(|&i| world.dataset.labels[i])
        .collect();
    let mut test_personalized = Vec::with_capacity(n);
    for sat in 0..n {
        let hist = world
            .partition
            .label_histogram(&train_labels, test_pool.classes, sat);
        let total: usize = hist.iter().sum();
        let quotas: Vec<f64> = hist
            .iter()
            .map(|&h| h as f64 / total.max(1) as f64 * spec.test_per_satellite as f64)
            .collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut remainder = spec.test_per_satellite.saturating_sub(counts.iter().sum());
        let mut order: Vec<usize> = (0..test_pool.classes).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &c in order.iter() {
            if remainder == 0 {
                break;
            }
            counts[c] += 1;
            remainder -= 1;
        }
        let mut picks = Vec::new();
        for (class, &count) in counts.iter().enumerate() {
            let pool = &class_pools[class];
            if pool.is_empty() {
                continue;
            }
            for k in 0..count {
                picks.push(pool[(sat * 7 + k) % pool.len()]);
            }
        }
        test_personalized.push(test_pool.subset(&picks));
    }

    // Global test subset: the first `global_test_cap` pool items.
    let global_indices: Vec<usize> =
        (0..test_pool.len().min(spec.global_test_cap)).collect();
    let test_global = test_pool.subset(&global_indices);

    // Compute model: training work per sample approximated as three
    // forward passes at the preprocessed input size.
    let (_, _, h, w) = train_sets[0].images[0].dims();
    let net = classifier_network(world.dataset.classes);
    let work_per_sample_flop = 3.0 * net.flops_forward(h, w);

    Ok(PflEnvironment {
        constellation_config: spec.constellation.clone(),
        satellites: world.satellites.clone(),
        link: spec.link,
        classes: world.dataset.classes,
        train_sets,
        test_personalized,
        test_global,
        work_per_sample_flop,
    })
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub world: PreparedWorld,
    pub sr_model: Option<SrModel>,
    pub sr_metrics: Vec<SrRoundMetrics>,
    pub pfl: PflOutcome,
}

/// End-to-end experiment: SR phase (when the preprocess mode needs it),
/// environment assembly, and the PFL loop.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome, SimError> {
    run_experiment_observed(spec, |_, _| {})
}

pub fn run_experiment_observed(
    spec: &ExperimentSpec,
    observer: impl FnMut(usize, &[SatelliteRoundState]),
) -> Result<ExperimentOutcome, SimError> {
    let world = prepare_world(spec)?;
    let (sr_model, sr_metrics) = match spec.preprocess {
        PreprocessMode::Sr => {
            let (model, _, metrics) = train_sr_phase(spec, &world)?;
            (Some(model), metrics)
        }
        _ => (None, Vec::new()),
    };
    let mut pfl_config = spec.pfl.clone();
    pfl_config.seed = spec.seed;
    let env = build_pfl_environment(spec, &world, sr_model.as_ref())?;
    let pfl = run_pfl_observed(&pfl_config, &env, observer)?;
    Ok(ExperimentOutcome {
        world,
        sr_model,
        sr_metrics,
        pfl,
    })
}

/// The dense decentralized-averaging baseline over the same world.
pub fn run_dense_baseline(spec: &ExperimentSpec) -> Result<ExperimentOutcome, SimError> {
    let mut dense = spec.clone();
    dense.pfl.prune.target_sparsity = 0.0;
    run_experiment(&dense)
}
