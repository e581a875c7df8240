use std::path::{Path, PathBuf};

use clap::Args;
use spartan::model::{read_archive, Model, ModelConfig};
use spartan::train::{evaluate, AdamWConfig, Augment, Dataset, MetricsLog, TrainConfig, Trainer};
use spartan::{Error, Result};

use crate::ConfigArgs;

/// Cost report text. CSV output ends with a `total` row.
pub fn costs(cfg: &ModelConfig, resolution: usize, csv: bool, double_flops: bool) -> Result<String> {
    let model = Model::<f32>::build(cfg, 0)?;
    let mut report = model.costs(resolution)?;
    report.double_flops = double_flops;
    let t = report.totals();
    let unit = if double_flops { "FLOPs" } else { "MACs" };
    let summary = format!(
        "{resolution}x{resolution}: params {:.3}M, {unit} {:.3}G, memory access {:.3}M",
        t.params as f64 / 1e6,
        report.flops() as f64 / 1e9,
        t.mem_access as f64 / 1e6
    );
    if csv {
        eprintln!("# {summary}");
        Ok(format!("{}total,{},{},{}\n", report.to_csv(), t.params, t.macs, t.mem_access))
    } else {
        Ok(format!("{}{summary}\n", report.to_table()))
    }
}

/// Checkpoint problems, including unreadable files, map to exit code 4.
fn load_checkpoint(cfg: &ModelConfig, path: &Path) -> Result<Model<f32>> {
    let entries = read_archive(path).map_err(|e| match e {
        Error::Io { .. } => Error::Checkpoint(e.to_string()),
        other => other,
    })?;
    let mut model = Model::build(cfg, 0)?;
    model.load_archive(entries)?;
    Ok(model)
}

pub fn eval(cfg: &ModelConfig, checkpoint: &Path, data: &Path, batch_size: usize) -> Result<()> {
    let model = load_checkpoint(cfg, checkpoint)?;
    let ds = Dataset::load(data)?;
    let m = evaluate(&model, &ds, batch_size.max(2))?;
    println!("samples={} loss={:.9} top1={:.6}", ds.len(), m.loss, m.top1);
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Training set: packed archive or directory with index.tsv.
    #[arg(long)]
    data: PathBuf,
    /// Held-out set evaluated after every epoch.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    /// Where the best checkpoint is written.
    #[arg(long, default_value = "checkpoint.sprt")]
    out: PathBuf,
    /// Metrics CSV, appended to.
    #[arg(long, default_value = "metrics.csv")]
    metrics: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 2.5e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    min_lr: f64,
    #[arg(long, default_value_t = 2)]
    warmup_epochs: usize,
    #[arg(long, default_value_t = 0.03)]
    weight_decay: f64,
    /// `none` or `flip_crop`.
    #[arg(long, default_value = "flip_crop")]
    augment: String,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let augment: Augment = args.augment.parse()?;
    let train_ds = Dataset::load(&args.data)?;
    if train_ds.is_empty() {
        return Err(Error::Empty(format!("{} has no samples", args.data.display())));
    }
    let eval_ds = args.eval_data.as_deref().map(Dataset::load).transpose()?;
    for ds in std::iter::once(&train_ds).chain(eval_ds.as_ref()) {
        ds.check_labels(cfg.num_classes)?;
        let (c, h, w) = ds.image_shape();
        if c != cfg.in_channels {
            return Err(Error::Data(format!("images have {c} channels, config expects {}", cfg.in_channels)));
        }
        cfg.check_resolution(h, w).map_err(|e| Error::Data(e.to_string()))?;
    }
    let model = match &args.resume {
        Some(path) => load_checkpoint(&cfg, path)?,
        None => Model::build(&cfg, args.seed)?,
    };
    let tc = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        base_lr: args.lr,
        min_lr: args.min_lr,
        warmup_epochs: args.warmup_epochs,
        optimizer: AdamWConfig { weight_decay: args.weight_decay, ..AdamWConfig::default() },
        augment,
        seed: args.seed,
    };
    let log = MetricsLog::open(&args.metrics)?;
    if args.resume.is_some() {
        let ds = eval_ds.as_ref().unwrap_or(&train_ds);
        let m = evaluate(&model, ds, args.batch_size)?;
        log.append(0, "eval", m.loss, m.top1, 0.0)?;
        println!("resumed: eval loss={:.9} top1={:.6}", m.loss, m.top1);
    }
    let mut trainer = Trainer::new(model, tc, train_ds.len())?;
    let mut best: Option<(f64, f64)> = None;
    for epoch in 1..=args.epochs {
        let m = trainer.train_epoch(&train_ds)?;
        log.append(epoch, "train", m.loss, m.top1, m.lr)?;
        println!("epoch {epoch}: train loss={:.6} top1={:.4} lr={:.3e}", m.loss, m.top1, m.lr);
        // Higher top-1 wins, then lower loss.
        let score = match &eval_ds {
            Some(ds) => {
                let e = evaluate(&trainer.model, ds, args.batch_size)?;
                log.append(epoch, "eval", e.loss, e.top1, m.lr)?;
                println!("epoch {epoch}: eval  loss={:.9} top1={:.6}", e.loss, e.top1);
                (e.top1, -e.loss)
            }
            None => (m.top1, -m.loss),
        };
        if best.is_none_or(|b| score >= b) {
            best = Some(score);
            trainer.model.save(&args.out)?;
            println!("epoch {epoch}: saved {}", args.out.display());
        }
    }
    Ok(())
}
