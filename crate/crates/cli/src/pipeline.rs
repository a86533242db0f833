//! Pipeline stages behind the subcommands. Every file written here starts
//! with a `# seed=N` line and is written atomically.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use gwquant_core::damage_index::{build_di_dataset, DiDataset, ReferenceBank};
use gwquant_core::gp::Regressor;
use gwquant_core::io::write_atomic;
use gwquant_core::metrics::{evaluate_fit, FitMetrics};
use gwquant_core::model::{ModelKind, TrainedModel};
use gwquant_core::quantify::{
    predict_single_state, predict_two_states, summarize_states, BoxSummary, QuantifyOptions, State,
    StateGrid, StateProbabilityTable, SummaryReport, TwoStepPrediction,
};
use gwquant_core::signals::{read_signals_csv, simulate_dataset, write_signals_csv, Signal};
use gwquant_core::{Error, Result};

use crate::config::PipelineConfig;

/// Independent random streams derived from the root seed.
pub mod stream {
    pub const SIMULATION: u64 = 1;
    pub const TEST_SIGNALS: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const TRAINING: u64 = 4;
}

pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream);
    rng.next_u64()
}

pub fn seed_line(seed: u64) -> String {
    format!("seed={seed}")
}

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    write_atomic(path, text.as_bytes())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

// ---------------------------------------------------------------- simulate

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub file: String,
    pub damage: f64,
    pub load: f64,
    pub replicate: u32,
    pub role: String,
}

pub fn state_file_name(damage: f64, load: f64) -> String {
    format!("damage{damage}_load{load}.csv")
}

/// Write one CSV per (damage, load) state under `dir/signals/` plus a manifest.
pub fn write_signal_set(dir: &Path, signals: &[Signal], seed: u64) -> Result<Vec<ManifestEntry>> {
    let sig_dir = dir.join("signals");
    ensure_dir(&sig_dir)?;
    let mut groups: Vec<(String, Vec<Signal>)> = Vec::new();
    for s in signals {
        let name = state_file_name(s.state.damage_size, s.state.load);
        match groups.last_mut() {
            Some((n, g)) if *n == name => g.push(s.clone()),
            _ => groups.push((name, vec![s.clone()])),
        }
    }
    let preamble = [seed_line(seed)];
    let mut entries = Vec::new();
    for (name, group) in &groups {
        write_signals_csv(&sig_dir.join(name), group, &preamble)?;
        for s in group {
            entries.push(ManifestEntry {
                file: format!("signals/{name}"),
                damage: s.state.damage_size,
                load: s.state.load,
                replicate: s.state.replicate,
                role: s.state.role.to_string(),
            });
        }
    }
    let mut text = format!("# {}\nfile,damage,load,replicate,role\n", seed_line(seed));
    for e in &entries {
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            e.file, e.damage, e.load, e.replicate, e.role
        );
    }
    write_text(&dir.join(MANIFEST_NAME), &text)?;
    Ok(entries)
}

pub fn simulate(cfg: &PipelineConfig, dir: &Path) -> Result<(Vec<Signal>, Vec<ManifestEntry>)> {
    let sim = cfg.simulation_config(derive_seed(cfg.seed, stream::SIMULATION));
    let signals = simulate_dataset(&sim, &cfg.simulation.damage_grid, &cfg.simulation.load_grid)?;
    let entries = write_signal_set(dir, &signals, cfg.seed)?;
    Ok((signals, entries))
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    let mut header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header {
            if line != "file,damage,load,replicate,role" {
                return Err(Error::Schema(format!(
                    "unexpected manifest header '{line}'"
                )));
            }
            header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |msg: String| Error::Parse { line: idx + 1, msg };
        if f.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", f.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| bad(format!("cannot parse number '{s}'")))
        };
        out.push(ManifestEntry {
            file: f[0].to_string(),
            damage: num(f[1])?,
            load: num(f[2])?,
            replicate: f[3]
                .parse()
                .map_err(|_| bad(format!("bad replicate '{}'", f[3])))?,
            role: f[4].to_string(),
        });
    }
    if !header {
        return Err(Error::Schema("missing manifest header".into()));
    }
    Ok(out)
}

/// Load signals from a signal CSV, a manifest, or a directory holding a manifest.
pub fn load_signals(path: &Path) -> Result<Vec<Signal>> {
    let manifest = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    };
    if manifest.file_name().and_then(|n| n.to_str()) != Some(MANIFEST_NAME) {
        return read_signals_csv(path);
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&read_text(&manifest)?)?;
    let mut files: Vec<&str> = Vec::new();
    for e in &entries {
        if !files.contains(&e.file.as_str()) {
            files.push(&e.file);
        }
    }
    let mut signals = Vec::new();
    for f in files {
        signals.extend(read_signals_csv(&base.join(f))?);
    }
    if signals.len() != entries.len() {
        return Err(Error::LengthMismatch(format!(
            "manifest lists {} signals but the files hold {}",
            entries.len(),
            signals.len()
        )));
    }
    Ok(signals)
}

// ---------------------------------------------------------------------- di

pub fn di_dataset(cfg: &PipelineConfig, signals: &[Signal]) -> Result<DiDataset> {
    build_di_dataset(signals, cfg.di_kind()?, cfg.policy()?, cfg.di.n_use)
}

pub fn write_dataset(path: &Path, ds: &DiDataset, seed: u64) -> Result<()> {
    ensure_parent(path)?;
    ds.write_csv(path, &[seed_line(seed)])
}

// ------------------------------------------------------------------- train

/// Split rows state by state: each group of `k` identical input rows puts
/// `clamp(ceil(fraction * k), 1, k - 1)` rows into training (all of them
/// when `k == 1`). Returns (train, held-out) row indices in ascending order.
pub fn stratified_split(ds: &DiDataset, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut groups: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
    for i in 0..ds.len() {
        let key = ds.row(i).iter().map(|v| (v + 0.0).to_bits()).collect();
        groups.entry(key).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (_, mut rows) in groups {
        let k = rows.len();
        rows.shuffle(&mut rng);
        let n = if k == 1 {
            1
        } else {
            ((fraction * k as f64).ceil() as usize).clamp(1, k - 1)
        };
        train.extend_from_slice(&rows[..n]);
        held.extend_from_slice(&rows[n..]);
    }
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

pub struct TrainOutcome {
    pub model: TrainedModel,
    pub columns: Vec<String>,
    pub train: DiDataset,
    pub heldout: DiDataset,
    pub metrics: Option<FitMetrics>,
}

pub fn train(cfg: &PipelineConfig, ds: &DiDataset, kind: ModelKind) -> Result<TrainOutcome> {
    ds.validate()?;
    let (tr, ho) = stratified_split(
        ds,
        cfg.train.train_fraction,
        derive_seed(cfg.seed, stream::SPLIT),
    );
    let train = ds.select(&tr);
    let heldout = ds.select(&ho);
    let opts = cfg.train_options(derive_seed(cfg.seed, stream::TRAINING));
    let model = TrainedModel::train(kind, &train.inputs, &train.targets, &opts)?;
    for w in model.warnings() {
        log::warn!("{w}");
    }
    let metrics = if heldout.is_empty() {
        None
    } else {
        Some(evaluate(&model, &heldout)?)
    };
    Ok(TrainOutcome {
        model,
        columns: ds.column_names.clone(),
        train,
        heldout,
        metrics,
    })
}

pub fn evaluate(model: &TrainedModel, ds: &DiDataset) -> Result<FitMetrics> {
    if ds.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: ds.dim(),
        });
    }
    let moments = model.predict(&ds.inputs)?;
    evaluate_fit(&moments, &ds.targets, model.train_targets())
}

pub fn format_metrics(m: &FitMetrics) -> String {
    format!(
        "nmse={:.3e} rss_sss_percent={:.3e}",
        m.nmse, m.rss_sss_percent
    )
}

pub fn write_model(path: &Path, model: &TrainedModel, columns: &[String], seed: u64) -> Result<()> {
    let text = format!("# {}\n{}", seed_line(seed), model.to_text(columns));
    write_text(path, &text)
}

pub fn read_model(path: &Path) -> Result<TrainedModel> {
    Ok(TrainedModel::read(path)?.0)
}

// ----------------------------------------------------------------- predict

fn unique_sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.map(|x| x + 0.0).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

pub fn training_damages(model: &TrainedModel) -> Vec<f64> {
    unique_sorted(model.train_inputs().column(0).iter().copied())
}

pub fn training_loads(model: &TrainedModel) -> Vec<f64> {
    if model.dim() < 2 {
        return Vec::new();
    }
    unique_sorted(model.train_inputs().column(1).iter().copied())
}

/// Damage-only or joint (damage, load) prediction for one test DI.
pub fn predict_single(
    model: &TrainedModel,
    test_di: f64,
    known_load: Option<f64>,
    grid_refine: usize,
    options: &QuantifyOptions,
) -> Result<StateProbabilityTable> {
    if model.dim() == 3 {
        return Err(Error::InvalidArgument(
            "a three-input model needs two-state input".into(),
        ));
    }
    let damages = training_damages(model);
    let grid = if model.dim() == 2 && known_load.is_none() {
        StateGrid::product(&damages, &training_loads(model))?
    } else {
        StateGrid::damages(&damages)?
    };
    let grid = grid.refine(grid_refine)?;
    predict_single_state(model, &grid, test_di, known_load, options)
}

fn state_json(s: &State) -> Value {
    json!({ "damage": s.damage, "load": s.load })
}

pub fn table_json(table: &StateProbabilityTable) -> Value {
    json!({
        "test_di": table.test_di,
        "argmax": state_json(&table.argmax_state),
        "max_probability": table.max_probability,
        "low_confidence": table.low_confidence,
        "closest_training_di": table.closest_training_di,
        "closest_variance": table.closest_variance,
        "probabilities": table.entries.iter().map(|(s, p)| json!({
            "damage": s.damage,
            "load": s.load,
            "p": p,
        })).collect::<Vec<_>>(),
    })
}

pub fn two_step_json(case: &str, p: &TwoStepPrediction) -> Value {
    json!({
        "case": case,
        "argmax": state_json(&p.state()),
        "low_confidence": p.step1_table.low_confidence || p.step2_table.low_confidence,
        "step1_reference_load": p.step1_reference_load,
        "class2_di": p.class2_di,
        "step1": table_json(&p.step1_table),
        "step2": table_json(&p.step2_table),
    })
}

/// DIs of one unknown signal against the class-1 and class-2 references.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TwoStateCase {
    pub name: String,
    /// (reference load, DI) against healthy references.
    pub class1: Vec<(f64, f64)>,
    /// (reference damage, DI) against unloaded references.
    pub class2: Vec<(f64, f64)>,
}

/// Parse rows `[case,]class,ref_damage,ref_load,di`. A header line whose
/// first field is not numeric is allowed; `#` lines are skipped.
pub fn parse_two_state(text: &str) -> Result<Vec<TwoStateCase>> {
    let mut cases: Vec<TwoStateCase> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let lineno = idx + 1;
        let numeric_tail = f.iter().rev().take(4).all(|s| s.parse::<f64>().is_ok());
        if width.is_none() && !numeric_tail {
            // header
            width = Some(f.len());
            continue;
        }
        let w = *width.get_or_insert(f.len());
        if f.len() != w || !(w == 4 || w == 5) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 4 or 5 consistent fields, found {}", f.len()),
            });
        }
        let (name, rest) = if w == 5 {
            (f[0], &f[1..])
        } else {
            ("0", &f[..])
        };
        let nums: Vec<f64> = rest
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("non-numeric field in '{line}'"),
            })?;
        let case = match cases.iter_mut().position(|c| c.name == name) {
            Some(i) => &mut cases[i],
            None => {
                cases.push(TwoStateCase {
                    name: name.to_string(),
                    ..Default::default()
                });
                cases.last_mut().expect("just pushed")
            }
        };
        match nums[0] {
            c if c == 1.0 => case.class1.push((nums[2], nums[3])),
            c if c == 2.0 => case.class2.push((nums[1], nums[3])),
            c => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("reference class must be 1 or 2, got {c}"),
                })
            }
        }
    }
    Ok(cases)
}

pub fn predict_two_state_case(
    model: &TrainedModel,
    case: &TwoStateCase,
    options: &QuantifyOptions,
) -> Result<TwoStepPrediction> {
    let lookup = |d: f64| {
        case.class2
            .iter()
            .find(|(rd, _)| *rd == d)
            .map(|(_, di)| *di)
    };
    predict_two_states(
        model,
        &case.class1,
        lookup,
        &training_damages(model),
        &training_loads(model),
        options,
    )
}

/// Test DIs from a file: one number per line, `#` lines and a non-numeric
/// header ignored.
pub fn parse_di_list(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or(line).trim();
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if out.is_empty() => continue,
            Err(_) => {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("cannot parse DI '{field}'"),
                })
            }
        }
    }
    Ok(out)
}

// ------------------------------------------------------------------ report

fn state_label(s: &State) -> String {
    match s.load {
        Some(l) => format!("{}:{}", s.damage, l),
        None => s.damage.to_string(),
    }
}

fn boxplot_csv(rows: &[BoxSummary], seed: u64) -> String {
    let mut out = format!(
        "# {}\nstate,median,q25,q75,lo_whisk,hi_whisk,outliers\n",
        seed_line(seed)
    );
    for b in rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            state_label(&b.state),
            b.median,
            b.q25,
            b.q75,
            b.lo_whisk,
            b.hi_whisk
        );
        for o in &b.outliers {
            let _ = write!(out, ",{o}");
        }
        out.push('\n');
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn predictions_csv(report: &SummaryReport, seed: u64) -> String {
    let mut out = format!(
        "# {}\ntrue_damage,true_load,pred_damage,pred_load,err_damage,err_load\n",
        seed_line(seed)
    );
    for e in &report.errors {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            e.true_state.damage,
            opt(e.true_state.load),
            e.predicted.damage,
            opt(e.predicted.load),
            e.err_damage,
            opt(e.err_load)
        );
    }
    out
}

pub fn parse_predictions(text: &str) -> Result<(Vec<State>, Vec<State>)> {
    let (mut truth, mut pred) = (Vec::new(), Vec::new());
    let mut header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header {
            if !line.starts_with("true_damage,true_load,pred_damage,pred_load") {
                return Err(Error::Schema(format!(
                    "unexpected predictions header '{line}'"
                )));
            }
            header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::Parse {
            line: idx + 1,
            msg: format!("bad prediction row '{line}'"),
        };
        if f.len() < 4 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let maybe = |s: &str| {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        truth.push(State::new(num(f[0])?, maybe(f[1])?));
        pred.push(State::new(num(f[2])?, maybe(f[3])?));
    }
    if !header {
        return Err(Error::Schema("missing predictions header".into()));
    }
    Ok((truth, pred))
}

/// Write boxplot_damage.csv, boxplot_load.csv and predictions.csv into `dir`.
pub fn write_report(dir: &Path, report: &SummaryReport, seed: u64) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let files = [
        ("boxplot_damage.csv", boxplot_csv(&report.damage, seed)),
        ("boxplot_load.csv", boxplot_csv(&report.load, seed)),
        ("predictions.csv", predictions_csv(report, seed)),
    ];
    let mut out = Vec::new();
    for (name, text) in files {
        let p = dir.join(name);
        write_atomic(&p, text.as_bytes())?;
        out.push(p);
    }
    Ok(out)
}

/// Predict every row of a one- or two-input dataset, using the row's load as
/// the known load.
pub fn predict_rows(
    model: &TrainedModel,
    ds: &DiDataset,
    grid_refine: usize,
    options: &QuantifyOptions,
) -> Result<(Vec<State>, Vec<State>)> {
    if ds.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: ds.dim(),
        });
    }
    let mut truth = Vec::with_capacity(ds.len());
    let mut pred = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let row = ds.row(i);
        let load = row.get(1).copied();
        let t = predict_single(model, ds.targets[i], load, grid_refine, options)?;
        truth.push(State::new(row[0], load));
        pred.push(State::new(
            t.argmax_state.damage,
            t.argmax_state.load.or(load),
        ));
    }
    Ok((truth, pred))
}

// --------------------------------------------------------------------- run

pub struct RunSummary {
    pub n_signals: usize,
    pub n_rows: usize,
    pub n_train: usize,
    pub n_heldout: usize,
    pub metrics: Option<FitMetrics>,
    pub n_predictions: usize,
    pub damage_accuracy: f64,
    pub joint_accuracy: Option<f64>,
    pub files: Vec<PathBuf>,
}

fn accuracy(truth: &[State], pred: &[State]) -> (f64, Option<f64>) {
    let n = truth.len().max(1) as f64;
    let dmg = truth
        .iter()
        .zip(pred)
        .filter(|(t, p)| t.damage == p.damage)
        .count() as f64
        / n;
    let joint = truth.iter().all(|t| t.load.is_some()).then(|| {
        truth
            .iter()
            .zip(pred)
            .filter(|(t, p)| t.damage == p.damage && t.load == p.load)
            .count() as f64
            / n
    });
    (dmg, joint)
}

/// Simulate, compute DIs, split, train, predict and report under `cfg.paths.workdir`.
pub fn run(cfg: &PipelineConfig) -> Result<RunSummary> {
    let work = cfg.paths.workdir.clone();
    ensure_dir(&work)?;
    let (signals, _) = simulate(cfg, &work)?;
    let ds = di_dataset(cfg, &signals)?;
    let di_path = work.join("di.csv");
    write_dataset(&di_path, &ds, cfg.seed)?;

    let outcome = train(cfg, &ds, cfg.model_kind()?)?;
    let model_path = cfg.workdir_path(&cfg.paths.model_file);
    write_model(&model_path, &outcome.model, &outcome.columns, cfg.seed)?;
    let heldout_path = work.join("heldout.csv");
    write_dataset(&heldout_path, &outcome.heldout, cfg.seed)?;

    let options = cfg.quantify_options();
    let (truth, pred) = if outcome.model.dim() == 3 {
        let sim = cfg.simulation_config(derive_seed(cfg.seed, stream::TEST_SIGNALS));
        let sim = gwquant_core::signals::SimulationConfig {
            n_replicates: cfg.simulation.test_replicates,
            ..sim
        };
        let tests = simulate_dataset(&sim, &cfg.simulation.damage_grid, &cfg.simulation.load_grid)?;
        let bank = ReferenceBank::new(&signals, cfg.di_kind()?, cfg.di.n_use)?;
        let damages = training_damages(&outcome.model);
        let loads = training_loads(&outcome.model);
        let mut truth = Vec::with_capacity(tests.len());
        let mut pred = Vec::with_capacity(tests.len());
        for sig in &tests {
            let class1 = bank.class1_dis(sig, &loads)?;
            let p = predict_two_states(
                &outcome.model,
                &class1,
                |d| bank.di(sig, d, 0.0).ok(),
                &damages,
                &loads,
                &options,
            )?;
            truth.push(State::new(sig.state.damage_size, Some(sig.state.load)));
            pred.push(p.state());
        }
        (truth, pred)
    } else {
        predict_rows(
            &outcome.model,
            &outcome.heldout,
            cfg.quantify.grid_refine,
            &options,
        )?
    };
    let report = summarize_states(&truth, &pred)?;
    let report_dir = cfg.workdir_path(&cfg.paths.report_dir);
    let mut files = vec![work.join(MANIFEST_NAME), di_path, model_path, heldout_path];
    files.extend(write_report(&report_dir, &report, cfg.seed)?);
    let (damage_accuracy, joint_accuracy) = accuracy(&truth, &pred);
    Ok(RunSummary {
        n_signals: signals.len(),
        n_rows: ds.len(),
        n_train: outcome.train.len(),
        n_heldout: outcome.heldout.len(),
        metrics: outcome.metrics,
        n_predictions: truth.len(),
        damage_accuracy,
        joint_accuracy,
        files,
    })
}
