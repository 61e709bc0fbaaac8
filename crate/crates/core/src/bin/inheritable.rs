use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use inheritable::client::{adapt_with, write_adapt_log, AdaptConfig};
use inheritable::config::{load_or_default, write_snapshot};
use inheritable::data::{generate_pair, load_labeled, load_unlabeled, save_labeled, save_unlabeled, ShiftSpec, UnlabeledSet};
use inheritable::eval::{evaluate_model, precision_at_percentile, proxy_a_distance, truth_from_ids, write_precision_curves};
use inheritable::inheritability::{instance_weight, model_inheritability, weight_histogram};
use inheritable::model::{load_any, load_model, save_adapted, save_model};
use inheritable::numcore::Rng;
use inheritable::pipeline::{split_target, sweep, sweep_csv, PipelineConfig, SweepParam, CURVE_PERCENTILES};
use inheritable::vendor::{train_vendor_with, write_training_log, VendorConfig};
use inheritable::{Error, Result};

/// Vendor/client open-set domain adaptation with inheritable models.
#[derive(Parser)]
#[command(name = "inheritable", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic source/target pair as feature CSVs.
    GenData {
        /// TOML shift spec; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_source: PathBuf,
        /// Target features with every label written as -1.
        #[arg(long)]
        out_target: PathBuf,
        /// Target features with their true class ids, for evaluation.
        #[arg(long)]
        out_target_labeled: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train an inheritable vendor model on a labeled source CSV.
    TrainVendor {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_model: PathBuf,
        /// Sets both pretrain and fine-tune epochs.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Training log CSV; defaults to `<out-model>.log.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score one or more models against a target set, best first.
    Inheritability {
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Adapt a vendor model to an unlabeled target CSV.
    Adapt {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        k_percent: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Adaptation log CSV; defaults to `<out-model>.log.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a model on a labeled target CSV.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target_with_labels: PathBuf,
        /// Labeled source CSV; enables PAD against target-shared and target-unknown rows.
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the full synthetic pipeline across values of one hyperparameter.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        param: ParamArg,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamArg {
    /// Number of negative classes.
    #[value(name = "negatives")]
    K,
    /// Splice percent.
    #[value(name = "splice")]
    D,
    /// Pseudo-label percent.
    #[value(name = "pseudo")]
    PseudoK,
}

impl From<ParamArg> for SweepParam {
    fn from(p: ParamArg) -> Self {
        match p {
            ParamArg::K => SweepParam::K,
            ParamArg::D => SweepParam::D,
            ParamArg::PseudoK => SweepParam::PseudoK,
        }
    }
}

#[derive(Serialize)]
struct EvaluateSettings {
    model: PathBuf,
    target_with_labels: PathBuf,
    source: Option<PathBuf>,
    seed: u64,
}

#[derive(Serialize)]
struct SweepSettings {
    param: SweepParam,
    values: Vec<f64>,
    seeds: u64,
    pipeline: PipelineConfig,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, out_source, out_target, out_target_labeled, seed } => {
            let mut spec: ShiftSpec = load_or_default(spec.as_deref())?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let pair = generate_pair(&spec)?;
            save_labeled(&pair.source, &out_source)?;
            save_unlabeled(&pair.target, &out_target)?;
            if let Some(path) = out_target_labeled {
                save_labeled(&pair.target_labeled(), &path)?;
            }
            write_snapshot(&spec, &out_source)?;
            println!("source rows {}, target rows {}", pair.source.len(), pair.target.len());
        }
        Command::TrainVendor { source, config, out_model, epochs, learning_rate, seed, log } => {
            let mut cfg: VendorConfig = load_or_default(config.as_deref())?;
            if let Some(e) = epochs {
                cfg.pretrain_epochs = e;
                cfg.finetune_epochs = e;
            }
            if let Some(lr) = learning_rate {
                cfg.learning_rate = lr;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let source = load_labeled(&source)?;
            let run = train_vendor_with(&source, &cfg, &mut |r| {
                eprintln!("{:?} epoch {} loss {:.5} acc {:.4}", r.phase, r.epoch, r.loss, r.source_accuracy)
            })?;
            save_model(&run.model, &out_model)?;
            write_training_log(&run.log, log.unwrap_or_else(|| with_suffix(&out_model, ".log.csv")))?;
            write_snapshot(&cfg, &out_model)?;
            println!("source_mean_w {:?}", run.model.source_mean_w);
        }
        Command::Inheritability { models, target, bins } => {
            let target = load_unlabeled(&target)?;
            let mut scored = Vec::with_capacity(models.len());
            for path in &models {
                let (_, model) = load_any(path)?;
                let score = model_inheritability(&model, &target)?;
                let w = instance_weight(&model, &target.features)?;
                scored.push((path, score, weight_histogram(&w, bins)));
            }
            scored.sort_by(|a, b| b.1.total_cmp(&a.1));
            let mut out = String::from("rank,model,inheritability\n");
            for (rank, (path, score, _)) in scored.iter().enumerate() {
                out.push_str(&format!("{},{},{:?}\n", rank + 1, path.display(), score));
            }
            out.push_str("\nmodel,lo,hi,count\n");
            for (path, _, hist) in &scored {
                for b in hist {
                    out.push_str(&format!("{},{:?},{:?},{}\n", path.display(), b.lo, b.hi, b.count));
                }
            }
            let _ = std::io::stdout().write_all(out.as_bytes());
        }
        Command::Adapt { model, target, config, out_model, epochs, learning_rate, k_percent, seed, log } => {
            let mut cfg: AdaptConfig = load_or_default(config.as_deref())?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(lr) = learning_rate {
                cfg.learning_rate = lr;
            }
            if let Some(k) = k_percent {
                cfg.k_percent = k;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let source = load_model(&model)?;
            let target = load_unlabeled(&target)?;
            let out = adapt_with(&source, &target, &cfg, None, &mut |r, _| {
                eprintln!("epoch {} l_inh {:.5} l_t1 {:.5} l_t2 {:.5}", r.epoch, r.inherit, r.separation, r.entropy)
            })?;
            save_adapted(&out.model.adapted, &out_model)?;
            write_adapt_log(&out.log, log.unwrap_or_else(|| with_suffix(&out_model, ".log.csv")))?;
            write_snapshot(&cfg, &out_model)?;
            println!("pseudo-labeled {} of {} target rows", out.pseudo.len(), target.len());
        }
        Command::Evaluate { model, target_with_labels, source, out_dir, seed } => {
            let (_, net) = load_any(&model)?;
            let target = load_labeled(&target_with_labels)?;
            let truth = truth_from_ids(&target.labels, &net.shared_labels);
            let mut report = evaluate_model(&net, &target.features, &truth)?;
            let classes = target.classes();
            let absent = classes.iter().filter(|c| !net.shared_labels.contains(c)).count();
            if absent > 0 {
                report.openness = Some(absent as f64 / classes.len() as f64);
            }
            if let Some(src) = &source {
                let src = load_labeled(src)?;
                let split = split_target(&UnlabeledSet::new(target.features.clone()), &truth);
                let src_u = net.embed(&src.features)?;
                let root = Rng::new(seed);
                if !split.shared.is_empty() {
                    report.pad_shared = Some(proxy_a_distance(&src_u, &net.embed(&split.shared.features)?, &mut root.fork(1))?);
                }
                if !split.unknown.is_empty() {
                    report.pad_unknown = Some(proxy_a_distance(&src_u, &net.embed(&split.unknown.features)?, &mut root.fork(2))?);
                }
            }
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let report_path = out_dir.join("report.json");
            write(&report_path, &report.to_json())?;
            let curve = precision_at_percentile(&net, &target.features, &truth, &CURVE_PERCENTILES)?;
            let name = model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            write_precision_curves(&[(name.as_str(), &curve)], out_dir.join("precision.csv"))?;
            write_snapshot(&EvaluateSettings { model, target_with_labels, source, seed }, &report_path)?;
            print!("{report}");
        }
        Command::Sweep { config, param, values, seeds, out } => {
            let base: PipelineConfig = load_or_default(config.as_deref())?;
            let param = SweepParam::from(param);
            let seed_list: Vec<u64> = (0..seeds).collect();
            let rows = sweep(&base, param, &values, &seed_list, &mut |r| {
                eprintln!("{}={} seed {}: OS {:.4} -> {:.4}", r.param.name(), r.value, r.seed, r.source_only_os, r.os)
            })?;
            write(&out, &sweep_csv(&rows))?;
            write_snapshot(&SweepSettings { param, values, seeds, pipeline: base }, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(_) => ExitCode::from(1),
    }
}
