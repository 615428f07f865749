//! `iagcn`: generate synthetic data, train, evaluate, run the ablation sweep
//! and dump correlation matrices.
//!
//! Log verbosity follows `RUST_LOG` (default `info`).

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use iagcn_core::model::{self, Checkpoint};
use iagcn_core::{data, report, AblationLevel, IaGcn, RunConfig, Sample, StatLcmForm};

#[derive(Parser)]
#[command(
    name = "iagcn",
    version,
    about = "Instance-aware GCN multi-label classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test split.
    Gendata(GendataArgs),
    /// Train a model and write a checkpoint plus loss log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split.
    Eval(EvalArgs),
    /// Train and evaluate all four ablation levels.
    Ablate(AblateArgs),
    /// Dump statistical, individual and fused label correlation matrices.
    InspectLcm(InspectArgs),
}

#[derive(Args)]
struct Common {
    /// TOML run config; defaults apply to anything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GendataArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Directory holding train.jsonl.
    #[arg(long)]
    data: PathBuf,
    /// Cumulative ablation level; overrides the config flags.
    #[arg(long)]
    ablation: Option<AblationLevel>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory holding the split to score.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-region scaling factors to z.csv.
    #[arg(long)]
    dump_z: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// Directory holding train.jsonl and test.jsonl.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// Trained model; needed for the per-image matrices.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Config used to build the statistical matrix when no checkpoint is given.
    #[arg(long, conflicts_with = "checkpoint")]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Sample indices in the split.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    samples: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_split(dir: &Path, split: &str) -> Result<Vec<Sample>> {
    let path = dir.join(format!("{split}.jsonl"));
    let samples =
        data::load_dataset(&path).with_context(|| format!("loading {}", path.display()))?;
    if samples.is_empty() {
        bail!("{} holds no samples", path.display());
    }
    Ok(samples)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn gendata(args: GendataArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(seed) = args.common.seed {
        cfg.data.seed = seed;
    }
    let ds = data::generate(&cfg.data)?;
    let out = &args.common.out;
    out_dir(out)?;
    data::save_dataset(&out.join("train.jsonl"), &ds.train)?;
    data::save_dataset(&out.join("test.jsonl"), &ds.test)?;
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    info!(
        "wrote {} train and {} test samples to {}",
        ds.train.len(),
        ds.test.len(),
        out.display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(level) = args.ablation {
        cfg.ablation = level.flags();
    }
    let samples = load_split(&args.data, "train")?;
    let out = &args.common.out;
    out_dir(out)?;
    info!("training {:?} on {} samples", cfg.ablation, samples.len());
    let trained = model::train(&cfg, &samples)?;
    let header = report::config_header(&cfg)?;
    report::write_loss_log(create(out, "loss.csv")?, &header, &trained.log)?;
    let ck = Checkpoint::new(cfg, trained.model.stat.clone(), trained.params);
    ck.save(&out.join("checkpoint.json"))?;
    info!(
        "checkpoint written to {}",
        out.join("checkpoint.json").display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, IaGcn)> {
    let ck =
        Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let model = ck.model()?;
    Ok((ck, model))
}

fn eval(args: EvalArgs) -> Result<()> {
    let (ck, model) = load_checkpoint(&args.checkpoint)?;
    let samples = load_split(&args.data, &args.split)?;
    out_dir(&args.out)?;
    let report = model::evaluate_model(&model, &ck.params, &samples)?;
    let header = report::config_header(&ck.config)?;
    report::write_metrics(create(&args.out, "metrics.csv")?, &header, &report)?;
    report::write_per_label_ap(create(&args.out, "per_label_ap.csv")?, &header, &report)?;
    if args.dump_z {
        if !model.ablation.var_inf {
            bail!("--dump-z needs a model trained with variational weighting");
        }
        let preds = model::predict_all(&model, &ck.params, &samples)?;
        let z: Vec<(usize, Vec<f64>)> = preds
            .into_iter()
            .enumerate()
            .filter_map(|(i, p)| p.z.map(|z| (i, z)))
            .collect();
        report::write_region_weights(create(&args.out, "z.csv")?, &header, &z)?;
    }
    info!(
        "mAP {:.4}  OF1 {:.4}  CF1 {:.4}",
        report.map, report.pr.of1, report.pr.cf1
    );
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let train = load_split(&args.data, "train")?;
    let test = load_split(&args.data, "test")?;
    out_dir(&args.common.out)?;
    let mut rows = Vec::with_capacity(AblationLevel::ALL.len());
    for level in AblationLevel::ALL {
        let mut run = cfg.clone();
        run.ablation = level.flags();
        let trained = model::train(&run, &train).with_context(|| level.label().to_string())?;
        let report = model::evaluate_model(&trained.model, &trained.params, &test)?;
        info!("{:<28} mAP {:.4}", level.label(), report.map);
        rows.push((level, report));
    }
    let header = report::config_header(&cfg)?;
    report::write_ablation(create(&args.common.out, "ablation.csv")?, &header, &rows)?;
    Ok(())
}

fn inspect_lcm(args: InspectArgs) -> Result<()> {
    out_dir(&args.out)?;
    let (cfg, model, params) = match &args.checkpoint {
        Some(path) => {
            let (ck, model) = load_checkpoint(path)?;
            (ck.config, model, Some(ck.params))
        }
        None => {
            let cfg = match &args.config {
                Some(path) => RunConfig::load(path)
                    .with_context(|| format!("reading config {}", path.display()))?,
                None => RunConfig::default(),
            };
            let train = load_split(&args.data, "train")?;
            let model = IaGcn::from_samples(cfg.model.clone(), cfg.ablation, &train)?;
            (cfg, model, None)
        }
    };
    let header = report::config_header(&cfg)?;
    let stat = &model.stat;
    report::write_matrix(
        create(&args.out, "A_S_condprob.csv")?,
        &header,
        stat.matrix(StatLcmForm::CondProb),
    )?;
    report::write_matrix(
        create(&args.out, "A_S.csv")?,
        &header,
        stat.matrix(StatLcmForm::Binarized),
    )?;
    report::write_matrix(
        create(&args.out, "A_S_hat.csv")?,
        &header,
        model.stat_adjacency(),
    )?;

    let Some(params) = params else {
        info!("no checkpoint given; wrote the statistical matrices only");
        return Ok(());
    };
    if !model.ablation.id_lcm {
        info!("model was trained without per-image matrices; wrote the statistical matrices only");
        return Ok(());
    }
    let samples = load_split(&args.data, &args.split)?;
    for &i in &args.samples {
        let s = samples
            .get(i)
            .with_context(|| format!("sample {i} out of range ({} in split)", samples.len()))?;
        let scores = model.predict(&params, s)?;
        let (Some(ind), Some(fused)) = (scores.individual, scores.fused) else {
            bail!("sample {i}: forward pass produced no per-image matrix");
        };
        report::write_matrix(create(&args.out, &format!("A_I_{i}.csv"))?, &header, &ind)?;
        report::write_matrix(create(&args.out, &format!("A_F_{i}.csv"))?, &header, &fused)?;
        report::write_matrix(
            create(&args.out, &format!("A_F_hat_{i}.csv"))?,
            &header,
            &scores.label_adj,
        )?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gendata(a) => gendata(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::InspectLcm(a) => inspect_lcm(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
