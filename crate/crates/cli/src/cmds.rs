use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use ndarray::Array1;

use mmalign_core::adl::{impute, reconstruct_plan, FitterParams};
use mmalign_core::checkpoint::{self, file_digest};
use mmalign_core::data::{
    apply_missing, ingest, partition, synth_generate, write_jsonl, DatasetSplits, Setting,
    SplitSpec, SynthConfig,
};
use mmalign_core::encoder::SharedRepr;
use mmalign_core::eval::{mae, mse, window_sweep};
use mmalign_core::model::ImputeMode;
use mmalign_core::numerics::seeded_rng;
use mmalign_core::ot_align::{build_cost, sinkhorn, slot_valid};
use mmalign_core::training::{fit, val_metric, TrainConfig};
use mmalign_core::{Error, ModelConfig, ModelParams, Result};

use crate::cfgfile::FileCfg;
use crate::manifest::RunManifest;

// ---------------------------------------------------------------- generate

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Directory for train/val/test.jsonl plus the generator sidecar.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub l: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    /// Maximum cross-modal shift in timestamps.
    #[arg(long)]
    pub shift: Option<usize>,
    #[arg(long)]
    pub mix_noise: Option<f64>,
    #[arg(long)]
    pub label_noise: Option<f64>,
    #[arg(long)]
    pub identity_mix: bool,
    #[arg(long)]
    pub fixed_shift: bool,
    #[arg(long)]
    pub orthonormal_base: bool,
    /// Surviving rate of the victim modality.
    #[arg(long)]
    pub p: Option<f64>,
    /// A masks all of val/test, B masks them at the training rate.
    #[arg(long)]
    pub setting: Option<Setting>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let file = FileCfg::load(args.config.as_deref())?;
    let seed = file.pick_seed(args.seed, 7)?;
    let gen = SynthConfig {
        n: file.pick(args.n, "n", 2000)?,
        l: file.pick(args.l, "l", 20)?,
        d: file.pick(args.d, "d", 8)?,
        shift_range: file.pick(args.shift, "shift", 2)?,
        mix_noise: file.pick(args.mix_noise, "mix-noise", 0.1)?,
        label_noise: file.pick(args.label_noise, "label-noise", 0.05)?,
        identity_mix: file.pick_switch(args.identity_mix, "identity-mix")?,
        fixed_shift: file.pick_switch(args.fixed_shift, "fixed-shift")?,
        orthonormal_base: file.pick_switch(args.orthonormal_base, "orthonormal-base")?,
        seed,
    };
    let spec = SplitSpec {
        p: file.pick(args.p, "p", 0.1)?,
        setting: file.pick(args.setting, "setting", Setting::A)?,
        seed,
    };
    let mut splits = partition(synth_generate(&gen)?, seed);
    apply_missing(&mut splits, &spec)?;
    std::fs::create_dir_all(&args.out_dir)?;
    for (name, samples) in [
        ("train", &splits.train),
        ("val", &splits.val),
        ("test", &splits.test),
    ] {
        write_jsonl(&args.out_dir.join(format!("{name}.jsonl")), samples)?;
    }
    let sidecar = serde_json::json!({ "generator": gen, "split": spec });
    std::fs::write(
        args.out_dir.join("generate.json"),
        serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Data(e.to_string()))?,
    )?;
    println!(
        "wrote {}/{{train,val,test}}.jsonl ({} samples, seed {seed})",
        args.out_dir.display(),
        splits.total()
    );
    Ok(())
}

// ------------------------------------------------------------------- train

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory containing train/val/test.jsonl (as written by generate).
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Shared-space width d.
    #[arg(long)]
    pub attn_dim: Option<usize>,
    #[arg(long)]
    pub num_head: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub enc_layers: Option<usize>,
    #[arg(long)]
    pub fusion_layers: Option<usize>,
    #[arg(long)]
    pub head_hidden: Option<usize>,
    #[arg(long)]
    pub eta_main: Option<f64>,
    #[arg(long)]
    pub eta_fit: Option<f64>,
    /// Batch size n_b.
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub warm_up: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// mse | paper
    #[arg(long)]
    pub fit_loss_mode: Option<String>,
    /// adl | zero
    #[arg(long)]
    pub impute: Option<String>,
    #[arg(long)]
    pub no_con: bool,
    #[arg(long)]
    pub random_fitter: bool,
    #[arg(long)]
    pub split_loop: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_fit_loss_mode(raw: &str) -> Result<mmalign_core::adl::FitLossMode> {
    match raw {
        "mse" => Ok(mmalign_core::adl::FitLossMode::Mse),
        "paper" => Ok(mmalign_core::adl::FitLossMode::PaperScaledRoot),
        _ => Err(Error::Config(format!(
            "fit-loss-mode must be mse or paper, got {raw:?}"
        ))),
    }
}

fn parse_impute(raw: &str) -> Result<ImputeMode> {
    match raw {
        "adl" => Ok(ImputeMode::Adl),
        "zero" => Ok(ImputeMode::Zero),
        _ => Err(Error::Config(format!("impute must be adl or zero, got {raw:?}"))),
    }
}

fn load_splits(dir: &Path) -> Result<DatasetSplits> {
    Ok(DatasetSplits {
        train: ingest(&dir.join("train.jsonl"))?,
        val: ingest(&dir.join("val.jsonl"))?,
        test: ingest(&dir.join("test.jsonl"))?,
    })
}

fn infer_dims(splits: &DatasetSplits) -> Result<(usize, usize, usize)> {
    let all = splits.train.iter().chain(&splits.val).chain(&splits.test);
    let mut d1 = None;
    let mut d2 = None;
    let mut max_l = 0usize;
    for s in all {
        d1.get_or_insert(s.x1.values[0].len());
        if let Some(x2) = &s.x2 {
            d2.get_or_insert(x2.values[0].len());
        }
        max_l = max_l.max(s.x1.len());
    }
    let d1 = d1.ok_or_else(|| Error::Data("no samples in any split".into()))?;
    Ok((d1, d2.unwrap_or(d1), max_l))
}

pub fn resolve_train_cfg(
    args: &TrainArgs,
    file: &FileCfg,
    seed: u64,
) -> Result<(ModelConfig, TrainConfig)> {
    let base = TrainConfig::default();
    let train = TrainConfig {
        eta_main: file.pick(args.eta_main, "eta-main", base.eta_main)?,
        eta_fit: file.pick(args.eta_fit, "eta-fit", base.eta_fit)?,
        n_b: file.pick(args.batch, "batch", base.n_b)?,
        lambda: file.pick(args.lambda, "lambda", base.lambda)?,
        mu: file.pick(args.mu, "mu", base.mu)?,
        tau: file.pick(args.tau, "tau", base.tau)?,
        warm_up_epochs: file.pick(args.warm_up, "warm-up", base.warm_up_epochs)?,
        patience: file.pick(args.patience, "patience", base.patience)?,
        max_epochs: file.pick(args.max_epochs, "max-epochs", base.max_epochs)?,
        seed,
        fit_loss_mode: parse_fit_loss_mode(&file.pick(
            args.fit_loss_mode.clone(),
            "fit-loss-mode",
            "mse".to_string(),
        )?)?,
        impute_mode: parse_impute(&file.pick(args.impute.clone(), "impute", "adl".to_string())?)?,
        no_con: file.pick_switch(args.no_con, "no-con")?,
        random_fitter: file.pick_switch(args.random_fitter, "random-fitter")?,
        split_loop: file.pick_switch(args.split_loop, "split-loop")?,
        ..base
    };
    let model_base = ModelConfig::default();
    let model = ModelConfig {
        d_model: file.pick(args.attn_dim, "attn-dim", model_base.d_model)?,
        num_heads: file.pick(args.num_head, "num-head", model_base.num_heads)?,
        window: file.pick(args.window, "window", model_base.window)?,
        d_ff: file.pick(args.d_ff, "d-ff", model_base.d_ff)?,
        enc_layers: file.pick(args.enc_layers, "enc-layers", model_base.enc_layers)?,
        fusion_layers: file.pick(args.fusion_layers, "fusion-layers", model_base.fusion_layers)?,
        head_hidden: file.pick(args.head_hidden, "head-hidden", model_base.head_hidden)?,
        ..model_base
    };
    Ok((model, train))
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let file = FileCfg::load(args.config.as_deref())?;
    let seed = file.pick_seed(args.seed, 7)?;
    let (mut model_cfg, train_cfg) = resolve_train_cfg(args, &file, seed)?;
    let splits = load_splits(&args.data_dir)?;
    let (d1, d2, max_l) = infer_dims(&splits)?;
    model_cfg.d_in1 = d1;
    model_cfg.d_in2 = d2;
    model_cfg.max_len = model_cfg.max_len.max(max_l + 1);
    if model_cfg.window >= max_l {
        return Err(Error::Config(format!(
            "window {} must be smaller than the sequence length {max_l}",
            model_cfg.window
        )));
    }

    std::fs::create_dir_all(&args.out_dir)?;
    let checkpoint_path = args.out_dir.join("checkpoint.bin");
    let log_path = args.out_dir.join("log.jsonl");
    let mut digests = BTreeMap::new();
    let mut paths = BTreeMap::new();
    for name in ["train", "val", "test"] {
        let p = args.data_dir.join(format!("{name}.jsonl"));
        digests.insert(name.to_string(), file_digest(&p)?);
        paths.insert(name.to_string(), p);
    }
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        model: model_cfg.clone(),
        train: train_cfg.clone(),
        data_digests: digests,
        data_paths: paths,
        checkpoint: checkpoint_path.clone(),
        log: log_path.clone(),
    };
    manifest.write(&args.out_dir.join("manifest.json"))?;

    let mut rng = seeded_rng(seed, "init-model");
    let model = ModelParams::new(model_cfg.clone(), &mut rng)?;
    let out = fit(model, &splits, &train_cfg)?;

    let mut log = std::fs::File::create(&log_path)?;
    for report in &out.log {
        let line =
            serde_json::to_string(report).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(log, "{line}")?;
    }
    let mut best = out.model;
    let cfg_blob = serde_json::json!({ "model": model_cfg, "train": train_cfg });
    checkpoint::save(&checkpoint_path, &mut best, &cfg_blob, seed)?;
    println!(
        "best epoch {} val {:.6}; checkpoint {}",
        out.best_epoch,
        out.best_val,
        checkpoint_path.display()
    );
    Ok(())
}

// -------------------------------------------------------------------- eval

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSONL file to score; must hash to the digest the manifest recorded.
    #[arg(long)]
    pub data: PathBuf,
    /// Which manifest digest the data file must match.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Optional JSON output path (stdout otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let manifest = RunManifest::read(&args.manifest)?;
    manifest.verify_input(&args.split, &args.data)?;
    let mut rng = seeded_rng(manifest.seed, "init-model");
    let mut model = ModelParams::new(manifest.model.clone(), &mut rng)?;
    let (_cfg, _seed) = checkpoint::load(&manifest.checkpoint, &mut model)?;
    let samples = ingest(&args.data)?;
    let mode = manifest.train.impute_mode;
    let mut preds = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for s in &samples {
        preds.push(mmalign_core::training::predict(&model, s, mode)?.scalar());
        labels.push(s.y.value());
    }
    let report = serde_json::json!({
        "split": args.split,
        "n": samples.len(),
        "mae": mae(&preds, &labels)?,
        "mse": mse(&preds, &labels)?,
        "val_metric": val_metric(&model, &samples, mode)?,
    });
    let text =
        serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))?;
    match &args.out {
        Some(path) => std::fs::write(path, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

// ------------------------------------------------------------ sweep-window

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Unmasked sample pool (single JSONL); each seed re-partitions it.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated window sizes.
    #[arg(long, value_delimiter = ',')]
    pub windows: Vec<usize>,
    /// Comma-separated seeds, one run per seed per window.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    #[command(flatten)]
    pub train: SweepTrainArgs,
}

/// Subset of training knobs that matter for a sweep.
#[derive(Args, Debug)]
pub struct SweepTrainArgs {
    #[arg(long)]
    pub attn_dim: Option<usize>,
    #[arg(long)]
    pub num_head: Option<usize>,
    #[arg(long)]
    pub eta_main: Option<f64>,
    #[arg(long)]
    pub eta_fit: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub warm_up: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub setting: Option<Setting>,
}

pub fn cmd_sweep_window(args: &SweepArgs) -> Result<()> {
    if args.windows.is_empty() || args.seeds.is_empty() {
        return Err(Error::Config(
            "sweep-window needs --windows and --seeds".into(),
        ));
    }
    let file = FileCfg::load(args.config.as_deref())?;
    let samples = ingest(&args.data)?;
    let base = TrainConfig::default();
    let t = &args.train;
    let train_cfg = TrainConfig {
        eta_main: file.pick(t.eta_main, "eta-main", base.eta_main)?,
        eta_fit: file.pick(t.eta_fit, "eta-fit", base.eta_fit)?,
        n_b: file.pick(t.batch, "batch", base.n_b)?,
        max_epochs: file.pick(t.max_epochs, "max-epochs", base.max_epochs)?,
        patience: file.pick(t.patience, "patience", base.patience)?,
        warm_up_epochs: file.pick(t.warm_up, "warm-up", base.warm_up_epochs)?,
        lambda: file.pick(t.lambda, "lambda", base.lambda)?,
        mu: file.pick(t.mu, "mu", base.mu)?,
        p: file.pick(t.p, "p", base.p)?,
        setting: file.pick(t.setting, "setting", base.setting)?,
        ..base
    };
    let model_base = ModelConfig::default();
    let mut model_cfg = ModelConfig {
        d_model: file.pick(t.attn_dim, "attn-dim", model_base.d_model)?,
        num_heads: file.pick(t.num_head, "num-head", model_base.num_heads)?,
        ..model_base
    };
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("empty sample pool".into()))?;
    model_cfg.d_in1 = first.x1.values[0].len();
    model_cfg.d_in2 = model_cfg.d_in1;
    model_cfg.max_len = model_cfg.max_len.max(first.x1.len() + 1);
    let report = window_sweep(&samples, &model_cfg, &train_cfg, &args.windows, &args.seeds)?;
    print!("{}", report.table());
    if let Some(best) = report.best_window() {
        println!("best window: {best}");
    }
    if let Some(path) = &args.out_csv {
        std::fs::write(path, report.csv())?;
    }
    Ok(())
}

// ------------------------------------------------------------- solve-align

#[derive(Args, Debug)]
pub struct SolveAlignArgs {
    /// JSONL samples; rows missing the victim modality are skipped.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub window: usize,
    #[arg(long, default_value_t = 0.1)]
    pub mu: f64,
    #[arg(long)]
    pub max_samples: Option<usize>,
    /// Only sequences at least this long contribute to the band heat profile.
    #[arg(long, default_value_t = 1)]
    pub min_len: usize,
    /// Plan dump destination (stdout otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_solve_align(args: &SolveAlignArgs) -> Result<()> {
    let samples = ingest(&args.data)?;
    let limit = args.max_samples.unwrap_or(usize::MAX);
    let width = 2 * args.window + 1;
    let mut heat_sum = vec![0.0f64; width];
    let mut heat_count = vec![0usize; width];
    let mut dump = String::new();
    let mut solved = 0usize;
    let mut skipped = 0usize;
    for s in &samples {
        if solved >= limit {
            break;
        }
        let Some(x2) = &s.x2 else {
            skipped += 1;
            continue;
        };
        let cost = build_cost(&s.x1.to_matrix(), &x2.to_matrix(), args.window)?;
        let plan = sinkhorn(&cost, args.mu, 1e-6, 500)?.plan;
        dump.push_str(&plan.dump());
        if plan.length >= args.min_len {
            for i in 0..plan.length {
                for k in 0..width {
                    if slot_valid(plan.length, plan.window, i, k) {
                        heat_sum[k] += plan.band[[i, k]].abs();
                        heat_count[k] += 1;
                    }
                }
            }
        }
        solved += 1;
    }
    if solved == 0 {
        return Err(Error::Data("no sample with both modalities present".into()));
    }
    match &args.out {
        Some(path) => std::fs::write(path, &dump)?,
        None => print!("{dump}"),
    }
    let heat: Vec<String> = heat_sum
        .iter()
        .zip(&heat_count)
        .map(|(s, c)| format!("{:.6e}", if *c == 0 { 0.0 } else { s / *c as f64 }))
        .collect();
    println!("heat {}", heat.join(" "));
    println!("solved {solved} skipped {skipped}");
    Ok(())
}

// ------------------------------------------------------------------- bench

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    #[arg(long, default_value_t = 8)]
    pub window: usize,
    /// Repetitions per length; the report uses the median.
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [32usize, 64, 128])]
    pub lengths: Vec<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Full decode: window predictions from the surviving modality, plan
/// reconstruction, imputation.
fn decode_once(fitter: &FitterParams, z1: &SharedRepr, cls: &Array1<f64>) -> Result<SharedRepr> {
    let (pred, _) = fitter.fit_predict(z1)?;
    let plan = reconstruct_plan(&pred, true)?;
    impute(&plan, z1, cls.view())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    if args.reps == 0 {
        return Err(Error::Config("bench needs --reps >= 1".into()));
    }
    if args.lengths.is_empty() {
        return Err(Error::Config("bench needs at least one length".into()));
    }
    let seed = args.seed.unwrap_or(7);
    let mut rng = seeded_rng(seed, "bench");
    let fitter = FitterParams::new(args.d, args.d, args.window, &mut rng);
    let cls = Array1::zeros(args.d);
    println!(
        "machine {} {} ({} cpus), reps {}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        std::thread::available_parallelism().map_or(0, |n| n.get()),
        args.reps
    );
    let mut medians = Vec::new();
    for &l in &args.lengths {
        if args.window >= l {
            return Err(Error::Config(format!(
                "window {} must be smaller than l = {l}",
                args.window
            )));
        }
        use mmalign_core::Matrix;
        use rand::Rng;
        let values = Matrix::from_shape_fn((l + 1, args.d), |_| rng.gen_range(-1.0..1.0));
        let z1 = SharedRepr { values };
        decode_once(&fitter, &z1, &cls)?; // warm-up outside the timings
        let mut times: Vec<f64> = Vec::with_capacity(args.reps);
        for _ in 0..args.reps {
            let start = Instant::now();
            let out = decode_once(&fitter, &z1, &cls)?;
            times.push(start.elapsed().as_secs_f64());
            std::hint::black_box(out);
        }
        times.sort_by(f64::total_cmp);
        let median = times[times.len() / 2];
        medians.push((l, median));
        println!("l {l:>4}  median {:.3} ms", median * 1e3);
    }
    for pair in medians.windows(2) {
        let (l0, t0) = pair[0];
        let (l1, t1) = pair[1];
        println!("ratio t({l1})/t({l0}) = {:.3}", t1 / t0);
    }
    Ok(())
}
