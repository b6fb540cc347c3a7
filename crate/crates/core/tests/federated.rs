mod common;

use common::{max_abs_diff, random_dataset, rng};
use fedsurv::datagen::{generate_synthetic, SplitKind, SyntheticConfig};
use fedsurv::evaluation::c_index;
use fedsurv::federated::{
    build_centers, run_centralized_training, run_federated_training, BatchSampler, Center, CoxBatchObjective,
    FederatedConfig, FederatedPartition, LocalObjective, Sampling,
};
use fedsurv::schemes::{train, train_pooled_stacked, RiskFunctionSpec, Scheme, SchemeConfig, ScoringModel};
use fedsurv::survival::stratified_cox_loss_and_gradient;
use fedsurv::{Error, LinearRiskModel};
use rand::Rng;

fn synthetic(split: SplitKind, seed: u64) -> fedsurv::datagen::SyntheticData {
    generate_synthetic(&SyntheticConfig {
        n_centers: 4,
        per_center: 60,
        dim: 5,
        split,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn flat(model: &ScoringModel) -> Vec<f64> {
    match model {
        ScoringModel::Discrete { model } => model.to_flat(),
        ScoringModel::Linear { beta } => beta.clone(),
        other => panic!("unexpected model {other:?}"),
    }
}

#[test]
fn dt_fl_is_invariant_to_the_partition() {
    let synth = synthetic(SplitKind::SortedByEndpoint, 2);
    let config = SchemeConfig {
        scheme: Scheme::DtFl,
        rounds: 150,
        batch_size: 64,
        sampling: Sampling::WithoutReplacement,
        seed: 5,
        ..SchemeConfig::default()
    };
    let reference = flat(&train_pooled_stacked(&config, &synth.dataset, &synth.partition).unwrap().model);
    let mut r = rng(3);
    for centers in [1, 2, 4, 7] {
        let assignments: Vec<usize> = (0..synth.dataset.len())
            .map(|i| if i < centers { i } else { r.random_range(0..centers) })
            .collect();
        let partition = FederatedPartition::new(assignments, centers).unwrap();
        let trained = train(&config, &synth.dataset, &partition).unwrap();
        assert!(max_abs_diff(&flat(&trained.model), &reference) < 1e-9);
        assert_eq!(trained.comm.n_centers, centers);
    }
}

#[test]
fn dt_fl_with_mlp_matches_pooled_training() {
    let synth = synthetic(SplitKind::Uniform, 4);
    let config = SchemeConfig {
        scheme: Scheme::DtFl,
        rounds: 100,
        batch_size: 50,
        risk_fn: RiskFunctionSpec::Mlp {
            hidden: vec![6],
            output: 3,
        },
        seed: 8,
        ..SchemeConfig::default()
    };
    let pooled = train_pooled_stacked(&config, &synth.dataset, &synth.partition).unwrap();
    let federated = train(&config, &synth.dataset, &synth.partition).unwrap();
    assert!(max_abs_diff(&flat(&pooled.model), &flat(&federated.model)) < 1e-9);
    assert_eq!(pooled.batch_losses.len(), 100);
}

#[test]
fn single_center_naive_fl_follows_minibatch_cox() {
    let synth = synthetic(SplitKind::Uniform, 6);
    let single = FederatedPartition::single(synth.dataset.len()).unwrap();
    let config = SchemeConfig {
        rounds: 300,
        batch_size: 40,
        seed: 2,
        ..SchemeConfig::default()
    };
    let mini = train(&config.with_scheme(Scheme::Mini), &synth.dataset, &single).unwrap();
    let nfl = train(&config.with_scheme(Scheme::NFl), &synth.dataset, &single).unwrap();
    assert!(max_abs_diff(&flat(&mini.model), &flat(&nfl.model)) < 1e-9);
    assert!(max_abs_diff(&mini.batch_losses, &nfl.batch_losses) < 1e-9);
}

#[test]
fn full_batch_naive_fl_follows_the_stratified_gradient() {
    // with every item in every batch and plain gradient steps, N-FL is gradient descent on the stratified loss
    let synth = synthetic(SplitKind::Uniform, 9);
    let (data, partition) = (&synth.dataset, &synth.partition);
    let config = FederatedConfig {
        rounds: 5,
        batch_size: data.len(),
        sampling: Sampling::WithoutReplacement,
        optimizer: fedsurv::optim::OptimizerConfig::Sgd { learning_rate: 0.01 },
        ..FederatedConfig::default()
    };
    let centers = build_centers(partition, |_, members| Ok(CoxBatchObjective::new(data.subset(members)?))).unwrap();
    let run = run_federated_training(&centers, partition, vec![0.0; 5], &config).unwrap();
    let mut beta = vec![0.0; 5];
    for _ in 0..5 {
        let (_, g) = stratified_cox_loss_and_gradient(data, partition, &LinearRiskModel::new(beta.clone())).unwrap();
        for (b, g) in beta.iter_mut().zip(&g) {
            *b -= 0.01 * g;
        }
    }
    assert!(max_abs_diff(&run.params, &beta) < 1e-12);
}

#[test]
fn centers_only_read_their_own_items() {
    let mut r = rng(1);
    let data = random_dataset(&mut r, 20, 2, 0.0, 0.3);
    let partition = FederatedPartition::new((0..20).map(|i| i % 3).collect(), 3).unwrap();
    let centers: Vec<Center<CoxBatchObjective>> =
        build_centers(&partition, |_, members| Ok(CoxBatchObjective::new(data.subset(members)?))).unwrap();
    let foreign = centers[0].local_gradient(&[1], &[0.0, 0.0]);
    assert!(matches!(foreign, Err(Error::ForeignIndex { center: 0, index: 1 })));

    let config = FederatedConfig {
        rounds: 25,
        batch_size: 8,
        ..FederatedConfig::default()
    };
    run_federated_training(&centers, &partition, vec![0.0; 2], &config).unwrap();
    // every sampled item is read by exactly one center
    let reads: usize = centers.iter().map(Center::reads).sum();
    assert_eq!(reads, 25 * 8);
}

#[test]
fn split_batches_reassemble_the_global_batch() {
    let partition = FederatedPartition::new((0..50).map(|i| (i * 13) % 5).collect(), 5).unwrap();
    let mut sampler = BatchSampler::new(50, 17, Sampling::WithReplacement, 4).unwrap();
    let mut replay = sampler.clone();
    for _ in 0..20 {
        let local = fedsurv::federated::sample_pooled_equivalent_batches(&partition, &mut sampler).unwrap();
        let global = replay.next_global_batch();
        for (k, batch) in local.iter().enumerate() {
            assert!(batch.iter().all(|&i| partition.center_of(i) == k));
            let expected: Vec<usize> = global.iter().copied().filter(|&i| partition.center_of(i) == k).collect();
            assert_eq!(batch, &expected);
        }
    }
}

#[test]
fn centralized_and_federated_runs_share_batches() {
    let mut r = rng(2);
    let data = random_dataset(&mut r, 30, 2, 0.0, 0.2);
    let objective = CoxBatchObjective::new(data.clone());
    let config = FederatedConfig {
        rounds: 10,
        batch_size: 30,
        sampling: Sampling::WithoutReplacement,
        trace_every: Some(5),
        ..FederatedConfig::default()
    };
    let run = run_centralized_training(&objective, vec![0.0; 2], &config).unwrap();
    assert_eq!(run.full_losses.iter().map(|(q, _)| *q).collect::<Vec<_>>(), vec![0, 5, 10]);
    // full batches: the batch loss is the full loss
    assert!((run.batch_losses[0] - objective.total_loss(&[0.0, 0.0]).unwrap()).abs() < 1e-12);
}

#[test]
fn sorted_split_hurts_naive_fl_ranking() {
    // within-center risk sets cannot compare individuals across the time blocks
    let synth = generate_synthetic(&SyntheticConfig {
        n_centers: 5,
        per_center: 120,
        dim: 5,
        split: SplitKind::SortedByEndpoint,
        seed: 12,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let config = SchemeConfig {
        rounds: 1500,
        batch_size: 100,
        seed: 1,
        ..SchemeConfig::default()
    };
    let data = &synth.dataset;
    let score = |scheme| {
        let trained = train(&config.with_scheme(scheme), data, &synth.partition).unwrap();
        let eta: Vec<f64> = data.individuals().iter().map(|i| trained.model.score(&i.covariates)).collect();
        c_index(&eta, &data.times(), &data.events()).unwrap()
    };
    let (pool, mini, nfl) = (score(Scheme::Pool), score(Scheme::Mini), score(Scheme::NFl));
    assert!(pool - nfl > 0.05, "pool {pool}, mini {mini}, n-fl {nfl}");
    assert!(mini - nfl > 0.05, "pool {pool}, mini {mini}, n-fl {nfl}");
}
