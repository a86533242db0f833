use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde_json::{json, Value};

use gwquant::config::{parse_kind, parse_policy, PipelineConfig};
use gwquant::pipeline::{self, seed_line};
use gwquant_core::damage_index::DiDataset;
use gwquant_core::model::ModelKind;
use gwquant_core::quantify::summarize_states;
use gwquant_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "gwquant",
    version,
    about = "Guided-wave damage and load quantification"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides GWQUANT_SEED and the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate signals for every damage x load state.
    Simulate {
        /// Output directory (default: the configured workdir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute a DI dataset from simulated or measured signals.
    Di {
        /// Signal CSV, manifest.csv or a directory holding one.
        #[arg(long)]
        signals: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        policy: Option<String>,
    },
    /// Split a DI dataset, train a model and score the held-out rows.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        model_file: Option<PathBuf>,
        /// Held-out rows (default: heldout.csv next to the model file).
        #[arg(long)]
        heldout: Option<PathBuf>,
        #[arg(long)]
        train_fraction: Option<f64>,
    },
    /// Probabilities of the grid states for test DIs.
    Predict(PredictArgs),
    /// Fit metrics of a model on a DI dataset.
    Evaluate {
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Box-plot summaries of predictions per true state.
    Report(ReportArgs),
    /// Full pipeline: simulate, DI, train, predict, report.
    Run {
        #[arg(long)]
        workdir: Option<PathBuf>,
        #[arg(long)]
        model: Option<ModelKind>,
    },
}

#[derive(Args)]
#[command(group(ArgGroup::new("input").required(true).args(["test_di", "test_di_file", "two_state"])))]
struct PredictArgs {
    #[arg(long)]
    model_file: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    test_di: Option<f64>,
    /// One DI per line.
    #[arg(long)]
    test_di_file: Option<PathBuf>,
    /// Rows `[case,]class,ref_damage,ref_load,di` for a three-input model.
    #[arg(long)]
    two_state: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    known_load: Option<f64>,
    #[arg(long)]
    grid_refine: Option<usize>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["data", "predictions"])))]
struct ReportArgs {
    /// DI dataset to predict with --model-file.
    #[arg(long, requires = "model_file")]
    data: Option<PathBuf>,
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Existing predictions.csv.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.resolve_seed(cli.seed)?;
    Ok(cfg)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| pipeline::io_error(path, e))
}

fn emit_json(value: Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&value).expect("JSON values serialize") + "\n";
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                pipeline::ensure_dir(dir)?;
            }
            gwquant_core::io::write_atomic(p, text.as_bytes())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn with_seed(mut v: Value, seed: u64) -> Value {
    if let Value::Object(m) = &mut v {
        m.insert("seed".into(), json!(seed));
    }
    v
}

fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(cli)?;
    let seed = cfg.seed;
    match &cli.command {
        Command::Simulate { out } => {
            let dir = out.clone().unwrap_or_else(|| cfg.paths.workdir.clone());
            let (_, entries) = pipeline::simulate(&cfg, &dir)?;
            println!(
                "wrote {} signals to {} ({seed_line})",
                entries.len(),
                dir.join(pipeline::MANIFEST_NAME).display(),
                seed_line = seed_line(seed)
            );
        }
        Command::Di {
            signals,
            out,
            kind,
            mode,
            policy,
        } => {
            if let Some(k) = kind {
                cfg.di.kind = k.clone();
            }
            if let Some(m) = mode {
                cfg.di.mode = m.clone();
            }
            if let Some(p) = policy {
                cfg.di.policy = p.clone();
            }
            parse_kind(&cfg.di.kind, &cfg.di.mode)?;
            parse_policy(&cfg.di.policy, cfg.di.fixed_damage, cfg.di.fixed_load)?;
            let sigs = pipeline::load_signals(signals)?;
            let ds = pipeline::di_dataset(&cfg, &sigs)?;
            pipeline::write_dataset(out, &ds, seed)?;
            println!(
                "wrote {} DI rows ({} inputs) to {}",
                ds.len(),
                ds.dim(),
                out.display()
            );
        }
        Command::Train {
            data,
            model,
            model_file,
            heldout,
            train_fraction,
        } => {
            if let Some(f) = train_fraction {
                cfg.train.train_fraction = *f;
                cfg.validate()?;
            }
            let kind = match model {
                Some(k) => *k,
                None => cfg.model_kind()?,
            };
            let ds = DiDataset::read_csv(data)?;
            let outcome = pipeline::train(&cfg, &ds, kind)?;
            let model_path = model_file
                .clone()
                .unwrap_or_else(|| cfg.workdir_path(&cfg.paths.model_file));
            let heldout_path = heldout
                .clone()
                .unwrap_or_else(|| model_path.with_file_name("heldout.csv"));
            pipeline::write_model(&model_path, &outcome.model, &outcome.columns, seed)?;
            pipeline::write_dataset(&heldout_path, &outcome.heldout, seed)?;
            println!(
                "model={kind} train_rows={} heldout_rows={} {}",
                outcome.train.len(),
                outcome.heldout.len(),
                seed_line(seed)
            );
            match &outcome.metrics {
                Some(m) => println!("{}", pipeline::format_metrics(m)),
                None => println!("no held-out rows to score"),
            }
            println!(
                "wrote {} and {}",
                model_path.display(),
                heldout_path.display()
            );
        }
        Command::Predict(args) => {
            let model = pipeline::read_model(&args.model_file)?;
            let refine = args.grid_refine.unwrap_or(cfg.quantify.grid_refine);
            let options = cfg.quantify_options();
            let value = if let Some(path) = &args.two_state {
                if refine > 0 {
                    return Err(Error::InvalidArgument(
                        "grid refinement is not available for two-state prediction".into(),
                    ));
                }
                let cases = pipeline::parse_two_state(&read_text(path)?)?;
                let results = cases
                    .iter()
                    .map(|c| {
                        pipeline::predict_two_state_case(&model, c, &options)
                            .map(|p| pipeline::two_step_json(&c.name, &p))
                    })
                    .collect::<Result<Vec<_>>>()?;
                json!({ "predictions": results })
            } else if let Some(di) = args.test_di {
                let t = pipeline::predict_single(&model, di, args.known_load, refine, &options)?;
                pipeline::table_json(&t)
            } else {
                let path = args.test_di_file.as_ref().expect("clap enforces one input");
                let dis = pipeline::parse_di_list(&read_text(path)?)?;
                let results = dis
                    .iter()
                    .map(|di| {
                        pipeline::predict_single(&model, *di, args.known_load, refine, &options)
                            .map(|t| pipeline::table_json(&t))
                    })
                    .collect::<Result<Vec<_>>>()?;
                json!({ "predictions": results })
            };
            emit_json(with_seed(value, seed), args.out.as_deref())?;
        }
        Command::Evaluate { model_file, data } => {
            let model = pipeline::read_model(model_file)?;
            let ds = DiDataset::read_csv(data)?;
            let m = pipeline::evaluate(&model, &ds)?;
            println!(
                "rows={} {} {}",
                ds.len(),
                pipeline::format_metrics(&m),
                seed_line(seed)
            );
        }
        Command::Report(args) => {
            let (truth, pred) = match (&args.data, &args.predictions) {
                (Some(data), _) => {
                    let model_file = args
                        .model_file
                        .as_ref()
                        .expect("clap requires --model-file");
                    let model = pipeline::read_model(model_file)?;
                    let ds = DiDataset::read_csv(data)?;
                    pipeline::predict_rows(
                        &model,
                        &ds,
                        cfg.quantify.grid_refine,
                        &cfg.quantify_options(),
                    )?
                }
                (None, Some(p)) => pipeline::parse_predictions(&read_text(p)?)?,
                (None, None) => unreachable!("clap requires a source"),
            };
            let report = summarize_states(&truth, &pred)?;
            let dir = args
                .out
                .clone()
                .unwrap_or_else(|| cfg.workdir_path(&cfg.paths.report_dir));
            for f in pipeline::write_report(&dir, &report, seed)? {
                println!("wrote {}", f.display());
            }
        }
        Command::Run { workdir, model } => {
            if let Some(w) = workdir {
                cfg.paths.workdir = w.clone();
            }
            if let Some(k) = model {
                cfg.train.model = k.to_string();
            }
            let s = pipeline::run(&cfg)?;
            println!(
                "signals={} di_rows={} train_rows={} heldout_rows={} {}",
                s.n_signals,
                s.n_rows,
                s.n_train,
                s.n_heldout,
                seed_line(seed)
            );
            if let Some(m) = &s.metrics {
                println!("{}", pipeline::format_metrics(m));
            }
            print!(
                "predictions={} damage_accuracy={:.3}",
                s.n_predictions, s.damage_accuracy
            );
            match s.joint_accuracy {
                Some(j) => println!(" joint_accuracy={j:.3}"),
                None => println!(),
            }
            for f in &s.files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: kind={} msg={e}", e.kind());
            ExitCode::from(1)
        }
    }
}
