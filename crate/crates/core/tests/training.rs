mod support;

use gsmo_core::autodiff::{Mode, ParamId};
use gsmo_core::data::SyntheticSpec;
use gsmo_core::models::{HeadKind, ModelParams, ParamGroup};
use gsmo_core::training::{
    aggregate_runs, evaluate_model, fine_tune, fit, init_models, run_repeats, selection_f1,
    train_epoch, Approach, BalanceWeights, FitOptions, Headline, Optimizer, OptimizerKind, Summary,
    TrainConfig,
};
use gsmo_core::Error;
use support::fixtures::{model_config, synthetic, tiny};
use support::stopping::plateau_run;

fn quick(max_epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs,
        batch_size: 8,
        learning_rate: 3e-3,
        repeats: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn stops_exactly_patience_epochs_after_last_improvement() {
    for e in [1, 4, 9] {
        let out = plateau_run(
            e,
            &TrainConfig {
                max_epochs: 300,
                batch_size: 16,
                ..TrainConfig::default()
            },
        );
        assert_eq!(out.epochs(), e + 50, "plateau after {e}");
    }
    let out = plateau_run(
        3,
        &TrainConfig {
            patience: 5,
            max_epochs: 300,
            batch_size: 16,
            ..TrainConfig::default()
        },
    );
    assert_eq!(out.epochs(), 8);
    let out = plateau_run(
        3,
        &TrainConfig {
            max_epochs: 20,
            batch_size: 16,
            ..TrainConfig::default()
        },
    );
    assert_eq!(out.epochs(), 20);
}

#[test]
fn single_epoch_selects_that_epoch() {
    let fx = tiny();
    let m = ModelParams::init(HeadKind::Gsmo, &model_config(8, 4, 8), fx.data.spaces(), 1).unwrap();
    let out = fit(
        m,
        &quick(1),
        &BalanceWeights::PAPER,
        &fx.data,
        &fx.split,
        &FitOptions::default(),
    )
    .unwrap();
    assert_eq!(out.epochs(), 1);
    assert_eq!(out.best_epoch, Some(1));
}

#[test]
fn selected_model_reproduces_its_validation_score() {
    let fx = tiny();
    for kind in [HeadKind::Gsmo, HeadKind::Powerset, HeadKind::SinglePlant] {
        let m = ModelParams::init(kind, &model_config(8, 4, 8), fx.data.spaces(), 2).unwrap();
        let out = fit(
            m,
            &quick(6),
            &BalanceWeights::PAPER,
            &fx.data,
            &fx.split,
            &FitOptions::default(),
        )
        .unwrap();
        let rec = out.history[out.best_epoch.unwrap() - 1];
        assert!(out.history.iter().all(|r| r.val_f1 <= rec.val_f1));
        let (loss, preds) = evaluate_model(
            &out.best,
            &fx.data,
            &fx.split.val,
            8,
            &BalanceWeights::PAPER,
        )
        .unwrap();
        assert_eq!(
            selection_f1(&out.best, &fx.data, &fx.split.val, &preds).unwrap(),
            rec.val_f1
        );
        assert_eq!(loss, rec.val_loss);
    }
}

#[test]
fn training_is_deterministic() {
    let fx = tiny();
    let run = || {
        let m =
            ModelParams::init(HeadKind::Gsmo, &model_config(8, 4, 8), fx.data.spaces(), 5).unwrap();
        fit(
            m,
            &quick(3),
            &BalanceWeights::PAPER,
            &fx.data,
            &fx.split,
            &FitOptions::default(),
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    for (p, q) in a.best.params().iter().zip(b.best.params()) {
        assert_eq!(p.value, q.value, "{}", p.name);
    }
}

#[test]
fn zero_learning_rate_only_moves_batch_norm_statistics() {
    let fx = tiny();
    let start =
        ModelParams::init(HeadKind::Gsmo, &model_config(8, 4, 8), fx.data.spaces(), 3).unwrap();
    for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
        let mut m = start.clone();
        let mut opt = Optimizer::new(kind, 0.0, Default::default(), &m);
        train_epoch(
            &mut m,
            &mut opt,
            &fx.data,
            &fx.split.train,
            8,
            &BalanceWeights::PAPER,
            0,
            1,
        )
        .unwrap();
        for (p, q) in m.params().iter().zip(start.params()) {
            if p.name.contains(".running_") {
                assert_ne!(p.value, q.value, "{}", p.name);
            } else {
                assert_eq!(p.value, q.value, "{}", p.name);
            }
        }
    }
}

#[test]
fn convex_output_layer_descends_monotonically() {
    let fx = tiny();
    let mut m = ModelParams::init(
        HeadKind::SinglePlant,
        &model_config(8, 4, 8),
        fx.data.spaces(),
        4,
    )
    .unwrap();
    m.set_trainable(&[ParamGroup::Backbone], false);
    for i in 0..m.params().len() {
        let p = m.param_mut(ParamId(i));
        if p.name.contains("hidden") {
            p.trainable = false;
        }
    }
    let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.05, Default::default(), &m);
    let n = fx.split.train.len();
    let mut losses = Vec::new();
    for epoch in 1..=30 {
        let w = BalanceWeights::PAPER;
        losses.push(
            train_epoch(
                &mut m,
                &mut opt,
                &fx.data,
                &fx.split.train,
                n,
                &w,
                epoch as u64,
                epoch,
            )
            .unwrap(),
        );
    }
    for pair in losses.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-6, "{losses:?}");
    }
    assert!(losses[29] < losses[0]);
}

#[test]
fn frozen_fine_tune_keeps_the_donor_backbone() {
    let fx = tiny();
    let cfg = model_config(8, 4, 8);
    let donor = ModelParams::init(HeadKind::Gsmo, &cfg, fx.data.spaces(), 9).unwrap();
    let all = ParamGroup::ALL;
    let out = fine_tune(
        &donor,
        &[ParamGroup::Backbone],
        &all,
        HeadKind::Powerset,
        &cfg,
        &quick(0),
        &BalanceWeights::PAPER,
        &fx.data,
        &fx.split,
        &FitOptions::default(),
    )
    .unwrap();
    assert_eq!(out.epochs(), 0);
    assert_eq!(out.best_epoch, None);
    let x = fx.data.batch(&fx.split.test).unwrap().images;
    assert_eq!(
        out.best.features(&x, Mode::Eval).unwrap(),
        donor.features(&x, Mode::Eval).unwrap()
    );

    // Frozen backbone stays put while the head trains.
    let out = fine_tune(
        &donor,
        &[ParamGroup::Backbone],
        &[ParamGroup::Backbone],
        HeadKind::Powerset,
        &cfg,
        &quick(2),
        &BalanceWeights::PAPER,
        &fx.data,
        &fx.split,
        &FitOptions::default(),
    )
    .unwrap();
    for p in out
        .best
        .params()
        .iter()
        .filter(|p| p.name.starts_with("backbone") && !p.name.contains("running"))
    {
        assert_eq!(
            &p.value,
            &donor.by_name(&p.name).unwrap().value,
            "{}",
            p.name
        );
    }
}

#[test]
fn repeats_aggregate_in_seed_order() {
    let fx = tiny();
    let cfg = model_config(8, 4, 8);
    let one = run_repeats(
        Approach::MultiOutput,
        &cfg,
        &quick(2),
        &BalanceWeights::PAPER,
        &fx.data,
        &fx.split,
    )
    .unwrap();
    assert_eq!(one.runs.len(), 1);
    let a = one.aggregate;
    for s in [
        a.plant_acc,
        a.plant_f1,
        a.plant_fpr,
        a.dis_acc,
        a.dis_f1,
        a.dis_fpr,
        a.both_acc,
        a.both_f1,
        a.both_fpr,
    ] {
        assert_eq!(s.std, 0.0);
    }
    let three = run_repeats(
        Approach::MultiModel,
        &cfg,
        &TrainConfig {
            repeats: 3,
            seed: 10,
            ..quick(2)
        },
        &BalanceWeights::PAPER,
        &fx.data,
        &fx.split,
    )
    .unwrap();
    assert_eq!(
        three.runs.iter().map(|r| r.seed).collect::<Vec<_>>(),
        vec![10, 11, 12]
    );
    assert!(three.runs.iter().all(|r| r.histories.len() == 2));
    let f1: Vec<f64> = three.runs.iter().map(|r| r.test.both.f1).collect();
    assert_eq!(three.aggregate.both_f1, Summary::of(&f1));
}

#[test]
fn aggregation_matches_hand_computed_statistics() {
    let fx = tiny();
    let cfg = model_config(8, 4, 8);
    let base = run_repeats(
        Approach::Powerset,
        &cfg,
        &quick(1),
        &BalanceWeights::PAPER,
        &fx.data,
        &fx.split,
    )
    .unwrap();
    let values = [0.5, 0.75, 1.0, 0.25, 0.5, 0.625, 0.875, 0.125, 0.375, 1.0];
    let runs: Vec<_> = values
        .iter()
        .map(|&v| {
            let mut r = base.runs[0].clone();
            r.test.both.f1 = v;
            r.test.plant.accuracy = 1.0 - v;
            r
        })
        .collect();
    let agg = aggregate_runs(Approach::Powerset, None, runs, Vec::new());
    // mean 0.6, population variance 0.08375
    assert!((agg.aggregate.both_f1.mean - 0.6).abs() < 1e-12);
    assert!((agg.aggregate.both_f1.std - 0.08375f64.sqrt()).abs() < 1e-12);
    assert!((agg.aggregate.plant_acc.mean - 0.4).abs() < 1e-12);
    assert_eq!(agg.aggregate.plant_acc.std, agg.aggregate.both_f1.std);
    assert_eq!(Headline::aggregate(&[]).both_f1, Summary::default());
}

#[test]
fn empty_validation_split_is_rejected() {
    let fx = synthetic(&SyntheticSpec::new(2, 2, 2, 0), 8, 0);
    let models = init_models(Approach::Gsmo, &model_config(8, 4, 8), fx.data.spaces(), 0).unwrap();
    let mut split = fx.split.clone();
    split.val.clear();
    let err = fit(
        models[0].clone(),
        &quick(1),
        &BalanceWeights::PAPER,
        &fx.data,
        &split,
        &FitOptions::default(),
    );
    assert!(matches!(err, Err(Error::Dataset(_))));
}

#[test]
fn divergence_is_reported_with_its_batch() {
    let fx = tiny();
    let mut m =
        ModelParams::init(HeadKind::Gsmo, &model_config(8, 4, 8), fx.data.spaces(), 0).unwrap();
    m.by_name_mut("plant_branch.out.bias")
        .unwrap()
        .value
        .data_mut()[0] = f32::NAN;
    let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-3, Default::default(), &m);
    let err = train_epoch(
        &mut m,
        &mut opt,
        &fx.data,
        &fx.split.train,
        8,
        &BalanceWeights::PAPER,
        0,
        3,
    );
    assert!(
        matches!(err, Err(Error::Divergence { epoch: 3, batch: 0 })),
        "{err:?}"
    );
}
