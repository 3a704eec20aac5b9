//! Subcommand implementations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use caribou_core::accountant::{
    calibrate_sigma, calibrate_sigma_with_orders, emit_noise_table, noise_table_csv, ModuleBudgets,
    NoisePlan, PrivacyLevel, PrivacySpec, TableFormat,
};
use caribou_core::audit::run_mia_game;
use caribou_core::graph::{gen_chain_dataset, ChainPreset};
use caribou_core::pipeline::run_pipeline;
use caribou_core::rng::derive_seed;
use serde::Serialize;

use crate::config::RunConfig;
use crate::{CalibrateArgs, CliError, GenChainArgs, NoiseTableArgs, RunArgs, SweepArgs, OUT_ENV};

const SWEEP_TAG: u64 = 0x5357;

fn output_dir(flag: Option<PathBuf>, configured: Option<&Path>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| configured.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::new("io", format!("{}: {e}", dir.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("serialisable output")
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serialisable output") + "\n"
}

pub fn gen_chain(a: GenChainArgs) -> Result<(), CliError> {
    let data = match (&a.preset, a.chains) {
        (Some(name), _) => ChainPreset::parse(name).and_then(|p| p.generate(a.seed)),
        (None, Some(chains)) => gen_chain_dataset(
            chains,
            a.len.unwrap_or_default(),
            a.classes.unwrap_or_default(),
            a.dim.unwrap_or_default(),
            a.seed,
        ),
        (None, None) => return Err(CliError::new("args", "give --preset or --chains/--len/--classes/--dim")),
    }
    .map_err(|e| CliError::new("dataset", e))?;
    let dir = output_dir(a.out, None);
    data.write_to_dir(&dir).map_err(|e| CliError::new("io", e))?;
    let summary = serde_json::json!({
        "nodes": data.num_nodes(),
        "edges": data.graph.num_edges(),
        "train": data.train_mask.len(),
        "test": data.test_mask.len(),
        "seed": a.seed,
        "out": dir.display().to_string(),
    });
    println!("{summary}");
    Ok(())
}

pub fn calibrate(a: CalibrateArgs) -> Result<(), CliError> {
    let spec = PrivacySpec::new(a.eps, a.delta, PrivacyLevel::Edge, a.k, a.gamma)
        .map_err(|e| CliError::new("args", e))?;
    let budgets = ModuleBudgets::default();
    let plan = match a.alpha {
        Some(alpha) => calibrate_sigma_with_orders(&spec, a.delta_mp, &budgets, a.mode.into(), &[alpha]),
        None => calibrate_sigma(&spec, a.delta_mp, &budgets, a.mode.into()),
    }
    .map_err(|e| CliError::new("calibrate", e))?;
    println!("{}", to_json(&plan));
    Ok(())
}

pub fn noise_table(a: NoiseTableArgs) -> Result<(), CliError> {
    let rows = emit_noise_table(a.eps, a.delta, a.alpha, a.gamma, &a.k).map_err(|e| CliError::new("calibrate", e))?;
    let format = if a.full_precision {
        TableFormat::RoundTrip
    } else {
        TableFormat::Significant4
    };
    let csv = noise_table_csv(&rows, format);
    if let Some(path) = &a.out {
        write_file(path, &csv)?;
    }
    print!("{csv}");
    Ok(())
}

#[derive(Serialize)]
struct TrainResults {
    accuracy_train: f64,
    accuracy_test: Option<f64>,
    noise_plan: NoisePlan,
    seed: u64,
}

fn load_config(a: &RunArgs) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let dir = output_dir(a.out.clone(), Some(&cfg.output_dir));
    Ok((cfg, dir))
}

pub fn train(a: RunArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let (cfg, dir) = load_config(&a)?;
    let data = cfg.load_dataset()?;
    let out = run_pipeline(&data, &cfg.pipeline()).map_err(|e| CliError::new("pipeline", e))?;
    create_dir(&dir)?;
    let results = TrainResults {
        accuracy_train: out.accuracy_train,
        accuracy_test: out.accuracy_test,
        noise_plan: out.artifacts.plan,
        seed: cfg.seed,
    };
    write_file(&dir.join("results.json"), to_pretty_json(&results))?;
    out.artifacts
        .write_embedding_csv(&dir.join("embedding.csv"))
        .map_err(|e| CliError::new("io", e))?;
    out.artifacts
        .write_plan_json(&dir.join("noise_plan.json"))
        .map_err(|e| CliError::new("io", e))?;
    write_file(&dir.join("model.json"), to_pretty_json(out.model.head()))?;
    let wall_time_ms = start.elapsed().as_millis() as u64;
    write_file(
        &dir.join("run_meta.json"),
        to_pretty_json(&serde_json::json!({ "wall_time_ms": wall_time_ms })),
    )?;
    let mut line = serde_json::to_value(&results).expect("serialisable output");
    line["wall_time_ms"] = wall_time_ms.into();
    println!("{line}");
    Ok(())
}

pub fn audit(a: RunArgs) -> Result<(), CliError> {
    let (cfg, dir) = load_config(&a)?;
    let audit_cfg = cfg
        .audit
        .ok_or_else(|| CliError::new("config", "the config has no \"audit\" section"))?;
    let data = cfg.load_dataset()?;
    let report = run_mia_game(&data, &cfg.pipeline(), &audit_cfg).map_err(|e| CliError::new("audit", e))?;
    create_dir(&dir)?;
    let mut buf = Vec::new();
    report.write_jsonl(&mut buf).map_err(|e| CliError::new("io", e))?;
    write_file(&dir.join("audit.jsonl"), &buf)?;
    let text = String::from_utf8(buf).expect("JSON is UTF-8");
    println!("{}", text.lines().last().unwrap_or_default());
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    epsilon: f64,
    replica: u64,
    seed: u64,
    accuracy_train: Option<f64>,
    accuracy_test: Option<f64>,
    sigma: Option<f64>,
    error: Option<String>,
}

pub fn sweep(a: SweepArgs) -> Result<(), CliError> {
    let base = RunConfig::load(&a.config)?;
    let dir = output_dir(a.out.clone(), Some(&base.output_dir));
    let budgets = if a.eps.is_empty() { vec![base.privacy.epsilon] } else { a.eps.clone() };
    let jobs: Vec<(f64, u64)> = budgets
        .iter()
        .flat_map(|&e| (0..a.replicas).map(move |r| (e, r)))
        .collect();
    let data = base.load_dataset()?;
    let rows: Mutex<Vec<Option<SweepRow>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = Mutex::new(0usize);
    std::thread::scope(|s| {
        for _ in 0..a.threads.max(1).min(jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("sweep counter");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(&(epsilon, replica)) = jobs.get(i) else { break };
                let mut cfg = base.pipeline();
                cfg.privacy.epsilon = epsilon;
                cfg.seed = derive_seed(base.seed, SWEEP_TAG, replica);
                let row = match run_pipeline(&data, &cfg) {
                    Ok(out) => SweepRow {
                        epsilon,
                        replica,
                        seed: cfg.seed,
                        accuracy_train: Some(out.accuracy_train),
                        accuracy_test: out.accuracy_test,
                        sigma: Some(out.artifacts.plan.sigma),
                        error: None,
                    },
                    Err(e) => SweepRow {
                        epsilon,
                        replica,
                        seed: cfg.seed,
                        accuracy_train: None,
                        accuracy_test: None,
                        sigma: None,
                        error: Some(e.to_string()),
                    },
                };
                rows.lock().expect("sweep rows")[i] = Some(row);
            });
        }
    });
    create_dir(&dir)?;
    let mut text = String::new();
    for row in rows.into_inner().expect("sweep rows").into_iter().flatten() {
        text.push_str(&to_json(&row));
        text.push('\n');
    }
    write_file(&dir.join("sweep.jsonl"), &text)?;
    std::io::stdout()
        .write_all(text.as_bytes())
        .map_err(|e| CliError::new("io", e))?;
    Ok(())
}
