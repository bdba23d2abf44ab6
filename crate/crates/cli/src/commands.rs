use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use lstm_tikhonov::data::{load_checkpoint, save_checkpoint, save_csv, Splits};
use lstm_tikhonov::perturb::{random_feasible_params, run_perturbation_experiment, trial_seed, write_bound_table};
use lstm_tikhonov::tikhonov::InspectReport;
use lstm_tikhonov::trainer::{evaluate_robustness, grid_search_lambda_s, train as fit, write_metrics_csv, write_robustness_csv};
use lstm_tikhonov::{Checkpoint, ModelParams, PerturbReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;

// Independent streams derived from the run seed.
const INIT_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;
const PERTURB_STREAM: u64 = 3;

fn splits(config: &RunConfig) -> Result<Splits> {
    Ok(config.dataset()?.split(config.data.val_frac, config.data.test_frac)?)
}

fn out_file(config: &RunConfig, name: &str) -> Result<std::path::PathBuf> {
    fs::create_dir_all(&config.out_dir).with_context(|| format!("creating {}", config.out_dir.display()))?;
    Ok(config.out_dir.join(name))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_params(path: &Path) -> Result<ModelParams> {
    let ckpt = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(ckpt.params()?)
}

pub fn train(config: &RunConfig) -> Result<ExitCode> {
    let data = splits(config)?;
    if data.train.is_empty() {
        anyhow::bail!("the training split is empty");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(config.seed, INIT_STREAM));
    let p0 = ModelParams::init_uniform(data.train.model_dims(config.model.hidden), &mut rng);
    let mut train_config = config.train_config();

    let result = if config.search.enabled {
        let s = &config.search;
        let found = grid_search_lambda_s(&p0, &data.train, &data.val, &train_config, &s.grid, s.sigma_eps, s.trials)?;
        for (lambda_s, score) in &found.scores {
            println!("search lambda_s={lambda_s:e} val_mse_noisy={score:.6e}");
        }
        println!("selected lambda_s={:e}", found.best_lambda_s);
        train_config.reg.lambda_s = found.best_lambda_s;
        found.best
    } else {
        fit(&p0, &data.train, &data.val, &train_config)?
    };

    for m in &result.history {
        println!(
            "epoch {:>3} train_mse={:.6e} val_mse={:.6e} reg={:.3e} pen1={:.3e} pen2={:.3e} rho_h^2={:.4} beta|W_oh|={:.4}",
            m.epoch, m.train_mse, m.val_mse, m.reg, m.pen1, m.pen2, m.rho_h_sq, m.beta_norm_oh
        );
    }

    let mut echo = config.clone();
    echo.train = train_config;
    let ckpt = Checkpoint::new(&result.params, Some(serde_json::to_value(&echo)?), Some(config.seed));
    save_checkpoint(&out_file(config, "checkpoint.json")?, &ckpt)?;
    write_metrics_csv(&result.history, create(&out_file(config, "metrics.csv")?)?)?;
    if !data.test.is_empty() {
        let rows = evaluate_robustness(
            &result.params,
            &data.test,
            &config.eval.noise_levels,
            config.eval.trials,
            trial_seed(config.seed, EVAL_STREAM),
        )?;
        write_robustness_csv(&rows, create(&out_file(config, "robustness.csv")?)?)?;
    }
    println!("best epoch {} written to {}", result.best_epoch, config.out_dir.display());
    Ok(ExitCode::SUCCESS)
}

pub fn eval(config: &RunConfig, checkpoint: Option<&Path>) -> Result<ExitCode> {
    let path = checkpoint.context("eval needs --checkpoint")?;
    let params = load_params(path)?;
    let data = splits(config)?;
    let rows = evaluate_robustness(
        &params,
        &data.test,
        &config.eval.noise_levels,
        config.eval.trials,
        trial_seed(config.seed, EVAL_STREAM),
    )?;
    for r in &rows {
        println!("sigma_eps={} mean_mse={:.6e}", r.sigma_eps, r.mean_mse);
    }
    write_robustness_csv(&rows, create(&out_file(config, "robustness.csv")?)?)?;
    Ok(ExitCode::SUCCESS)
}

pub fn verify_bounds(config: &RunConfig, checkpoint: Option<&Path>) -> Result<ExitCode> {
    let data = splits(config)?;
    let sequences = if data.test.is_empty() { &data.train.sequences } else { &data.test.sequences };
    let params = match checkpoint {
        Some(path) => load_params(path)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(config.seed, INIT_STREAM));
            let p = &config.perturb;
            random_feasible_params(data.train.model_dims(config.model.hidden), p.max_rho_h_sq, p.max_gain, &mut rng)
        }
    };
    let reg = config.train.reg;
    let seed = trial_seed(config.seed, PERTURB_STREAM);
    let reports = config
        .perturb
        .sigma_eps
        .iter()
        .map(|&s| run_perturbation_experiment(&params, sequences, s, config.perturb.n_trials, seed, &reg))
        .collect::<lstm_tikhonov::Result<Vec<PerturbReport>>>()?;

    let mut violations = 0;
    for r in &reports {
        violations += r.step_violations;
        let bound = match (r.bound_loose, r.loose_holds_fraction) {
            (Some(b), Some(f)) => format!("bound_loose={b:.3e} loose_holds={f:.4}"),
            _ => format!("bound: not applicable (rho_h^2 = {:.4})", r.rho_h_sq),
        };
        println!(
            "sigma_eps={:e} emp_sigma_y2_mean={:.3e} {bound} step_violations={} s_saturation={:.4}",
            r.sigma_eps, r.emp_sigma_y2_mean, r.step_violations, r.s_saturation_fraction
        );
    }

    let json = serde_json::to_string_pretty(&reports)?;
    fs::write(out_file(config, "perturb_report.json")?, json + "\n")?;
    let rows: Vec<_> = reports.iter().map(PerturbReport::table_row).collect();
    write_bound_table(&rows, create(&out_file(config, "perturb_table.csv")?)?)?;

    if violations > 0 {
        eprintln!("error: {violations} per-step inequality violations");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn inspect_reg(config: &RunConfig, checkpoint: &Path, json: bool) -> Result<ExitCode> {
    let report = InspectReport::new(&load_params(checkpoint)?, &config.train.reg);
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_text());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn gen_data(config: &RunConfig, output: &Path) -> Result<ExitCode> {
    let data = config.dataset()?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_csv(&data, output)?;
    println!("wrote {} sequences to {}", data.len(), output.display());
    Ok(ExitCode::SUCCESS)
}
