use lstm_tikhonov::data::{gen_adding, gen_noisy_sine, load_checkpoint, load_csv, save_checkpoint, save_csv};
use lstm_tikhonov::perturb::{bound_table, run_perturbation_experiment, write_bound_table};
use lstm_tikhonov::trainer::{dataset_mse, evaluate_robustness, train, write_metrics_csv};
use lstm_tikhonov::{Checkpoint, ModelParams, RegConfig, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_adding(7, 6, 3).unwrap();
    let csv_path = dir.path().join("adding.csv");
    save_csv(&data, &csv_path).unwrap();
    assert_eq!(load_csv(&csv_path, data.dims).unwrap(), data);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = ModelParams::init_uniform(data.model_dims(5), &mut rng);
    let ckpt_path = dir.path().join("model.json");
    save_checkpoint(&ckpt_path, &Checkpoint::new(&p, None, Some(5))).unwrap();
    let back = load_checkpoint(&ckpt_path).unwrap();
    assert_eq!(back.seed, Some(5));
    assert_eq!(back.params().unwrap().to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        p.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
}

#[test]
fn train_then_evaluate_then_verify() {
    let data = gen_noisy_sine(96, 8, 0.05, 9).unwrap();
    let splits = data.split(0.25, 0.25).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p0 = ModelParams::init_uniform(data.model_dims(6), &mut rng);
    let config = TrainConfig { epochs: 8, batch_size: 16, learning_rate: 0.02, ..TrainConfig::default() };

    let before = dataset_mse(&p0, &splits.val).unwrap();
    let result = train(&p0, &splits.train, &splits.val, &config).unwrap();
    let after = dataset_mse(&result.params, &splits.val).unwrap();
    assert!(after < before, "{after} >= {before}");
    assert_eq!(result.history[result.best_epoch - 1].val_mse, after);

    let mut csv = Vec::new();
    write_metrics_csv(&result.history, &mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + result.history.len());

    let rows = evaluate_robustness(&result.params, &splits.test, &[0.0, 0.05, 0.2], 4, 1).unwrap();
    assert_eq!(rows[0].mean_mse, dataset_mse(&result.params, &splits.test).unwrap());

    let reg = RegConfig::default();
    let report = run_perturbation_experiment(&result.params, &splits.test.sequences, 1e-3, 16, 2, &reg).unwrap();
    assert_eq!(report.step_violations, 0);
    let rows = bound_table(&result.params, &splits.test.sequences, &[1e-3, 1e-2], 16, 2, &reg).unwrap();
    assert_eq!(rows[0], report.table_row());
    let mut table = Vec::new();
    write_bound_table(&rows, &mut table).unwrap();
    assert_eq!(String::from_utf8(table).unwrap().lines().count(), 3);
}
