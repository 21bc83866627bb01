use orbitfl::data::*;
use orbitfl::pfl::*;
use orbitfl::sim::*;
use orbitfl::sr::*;
use orbitfl::constellation::*;
use orbitfl::pruning::PruneHyperparams;

#[test]
fn pfl_mode_ordering() {
    let t_all = std::time::Instant::now();
    for seed in [1u64, 2, 3] {
        let base = ExperimentSpec {
            constellation: ConstellationConfig { num_orbits: 2, sats_per_orbit: 3, ..Default::default() },
            dataset: SyntheticDatasetSpec { num_images: 120, size: 32, classes: 4, ..Default::default() },
            scale: 2,
            sr: SrTrainConfig { rounds: 20, cohort_size: 2, ..Default::default() },
            pfl: PflConfig {
                rounds: 12, local_epochs: 5, learning_rate: 0.01, batch_size: 8,
                momentum: 0.9, topology: TopologyMode::Ring, jobs: 1, seed,
                prune: PruneHyperparams { target_sparsity: 0.0, ..Default::default() },
                ..Default::default()
            },
            preprocess: PreprocessMode::Sr,
            dirichlet_alpha: 1.0,
            test_per_satellite: 24,
            global_test_cap: 36,
            seed,
            ..Default::default()
        };
        let mut line = format!("seed {seed}:");
        for mode in [PreprocessMode::Original, PreprocessMode::Bicubic, PreprocessMode::Sr] {
            let mut spec = base.clone();
            spec.preprocess = mode;
            let t0 = std::time::Instant::now();
            let out = run_experiment(&spec).unwrap();
            line += &format!(" {:?}={:.3} (g={:.3}) [{:.0?}]", mode, out.pfl.summary.final_mean_accuracy, out.pfl.summary.final_mean_accuracy_global, t0.elapsed());
        }
        println!("{line}");
    }
    println!("total {:?}", t_all.elapsed());
}
