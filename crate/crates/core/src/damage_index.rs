//! Damage indices computed from baseline/unknown signal pairs, and the
//! assembly of DI training sets with the two reference-signal classes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::signals::{Role, Signal, StateLabel};

/// Default DI window length (roughly the first 100 us at 24 MHz).
pub const DEFAULT_N_USE: usize = 2500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizedMode {
    /// Baseline is replaced by its component along the normalized unknown.
    #[default]
    Projection,
    /// Per-sample division by the baseline, singular where it crosses zero.
    AsWritten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiKind {
    Rmsd,
    Normalized(NormalizedMode),
}

/// Which reference signal(s) each unknown signal is compared against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferencePolicy {
    /// Class 1: the healthy signal at the unknown's load.
    HealthyPerLoad,
    /// Class 2: the unloaded signal at the unknown's damage size.
    UnloadedPerDamage,
    /// Class 1 and class 2 stacked, with a switch covariate.
    BothClasses,
    /// One fixed reference state for every unknown.
    Fixed { damage: f64, load: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceClass {
    Class1,
    Class2,
    Single,
}

impl ReferenceClass {
    /// Value of the switch covariate for this class.
    pub fn switch_value(self) -> Option<f64> {
        match self {
            ReferenceClass::Class1 => Some(1.0),
            ReferenceClass::Class2 => Some(2.0),
            ReferenceClass::Single => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiValue {
    pub value: f64,
    /// State of the unknown signal.
    pub state: StateLabel,
    pub reference_state: StateLabel,
    pub reference_class: ReferenceClass,
}

fn check_window(baseline: &[f64], unknown: &[f64], n_use: usize) -> Result<()> {
    if n_use == 0 {
        return Err(Error::InvalidArgument("n_use must be at least 1".into()));
    }
    if baseline.len() < n_use || unknown.len() < n_use {
        return Err(Error::InvalidArgument(format!(
            "signals of length {} and {} are shorter than the {n_use}-sample window",
            baseline.len(),
            unknown.len()
        )));
    }
    Ok(())
}

/// Root-mean-square deviation over the first `n_use` samples.
pub fn rmsd_di(baseline: &[f64], unknown: &[f64], n_use: usize) -> Result<f64> {
    check_window(baseline, unknown, n_use)?;
    let ss: f64 = baseline[..n_use]
        .iter()
        .zip(&unknown[..n_use])
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ss / n_use as f64).sqrt())
}

/// Normalized damage index: the summed difference between the unit-energy
/// unknown signal and the rescaled baseline.
pub fn normalized_di(
    baseline: &[f64],
    unknown: &[f64],
    n_use: usize,
    mode: NormalizedMode,
) -> Result<f64> {
    check_window(baseline, unknown, n_use)?;
    let y0 = &baseline[..n_use];
    let yu = &unknown[..n_use];
    let eu: f64 = yu.iter().map(|v| v * v).sum();
    let e0: f64 = y0.iter().map(|v| v * v).sum();
    if eu == 0.0 {
        return Err(Error::DegenerateSignal(
            "unknown signal has zero energy".into(),
        ));
    }
    if e0 == 0.0 {
        return Err(Error::DegenerateSignal(
            "baseline signal has zero energy".into(),
        ));
    }
    let norm_u = eu.sqrt();
    let cross: f64 = y0.iter().zip(yu).map(|(a, b)| a * b / norm_u).sum();
    let mut di = 0.0;
    match mode {
        NormalizedMode::Projection => {
            let scale = cross / e0;
            for (a, b) in y0.iter().zip(yu) {
                di += b / norm_u - a * scale;
            }
        }
        NormalizedMode::AsWritten => {
            for (t, (a, b)) in y0.iter().zip(yu).enumerate() {
                if *a == 0.0 {
                    return Err(Error::DivisionByZero { index: t });
                }
                di += b / norm_u - cross / (a * e0);
            }
        }
    }
    Ok(di)
}

pub fn compute_di(kind: DiKind, baseline: &[f64], unknown: &[f64], n_use: usize) -> Result<f64> {
    let v = match kind {
        DiKind::Rmsd => rmsd_di(baseline, unknown, n_use)?,
        DiKind::Normalized(mode) => normalized_di(baseline, unknown, n_use, mode)?,
    };
    if !v.is_finite() {
        return Err(Error::DegenerateSignal(format!(
            "damage index evaluated to {v}"
        )));
    }
    Ok(v)
}

/// Hashable (damage, load) key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct CellKey(u64, u64);

impl CellKey {
    fn new(damage: f64, load: f64) -> Self {
        // +0.0 so that -0.0 and 0.0 share a cell
        CellKey((damage + 0.0).to_bits(), (load + 0.0).to_bits())
    }
}

/// Replicate sums of the reference signals of one state, so that both the
/// plain and the leave-one-out averages are cheap.
struct ReferencePool<'a> {
    members: Vec<&'a Signal>,
    sum: Vec<f64>,
}

impl<'a> ReferencePool<'a> {
    fn average_excluding(&self, unknown: &Signal, n_use: usize) -> Option<Vec<f64>> {
        let self_paired = self.members.iter().any(|m| std::ptr::eq(*m, unknown));
        let count = self.members.len() - usize::from(self_paired);
        if count == 0 {
            return None;
        }
        let mut avg = self.sum[..n_use].to_vec();
        if self_paired {
            for (a, u) in avg.iter_mut().zip(unknown.samples()) {
                *a -= u;
            }
        }
        let inv = 1.0 / count as f64;
        avg.iter_mut().for_each(|a| *a *= inv);
        Some(avg)
    }
}

/// Group signals by (damage, load) and sum each state's reference members:
/// its Baseline-role signals if it has any, otherwise all of its signals.
fn build_pools(signals: &[Signal], n_use: usize) -> BTreeMap<CellKey, ReferencePool<'_>> {
    let mut by_state: BTreeMap<CellKey, Vec<&Signal>> = BTreeMap::new();
    for s in signals {
        by_state
            .entry(CellKey::new(s.state.damage_size, s.state.load))
            .or_default()
            .push(s);
    }
    by_state
        .into_iter()
        .map(|(key, all)| {
            let baselines: Vec<&Signal> = all
                .iter()
                .copied()
                .filter(|s| s.state.role == Role::Baseline)
                .collect();
            let members = if baselines.is_empty() { all } else { baselines };
            let mut sum = vec![0.0; n_use];
            for m in &members {
                for (acc, v) in sum.iter_mut().zip(m.samples()) {
                    *acc += v;
                }
            }
            (key, ReferencePool { members, sum })
        })
        .collect()
}

/// Replicate-averaged reference signals per (damage, load) state, for
/// scoring unknowns that are not part of the reference set.
#[derive(Debug, Clone)]
pub struct ReferenceBank {
    kind: DiKind,
    n_use: usize,
    averages: BTreeMap<CellKey, Vec<f64>>,
}

impl ReferenceBank {
    pub fn new(signals: &[Signal], kind: DiKind, n_use: usize) -> Result<Self> {
        if let Some(short) = signals.iter().find(|s| s.len() < n_use) {
            return Err(Error::InvalidArgument(format!(
                "reference signal has {} samples, fewer than n_use={n_use}",
                short.len()
            )));
        }
        let averages = build_pools(signals, n_use)
            .into_iter()
            .map(|(key, pool)| {
                let inv = 1.0 / pool.members.len() as f64;
                (key, pool.sum.iter().map(|v| v * inv).collect())
            })
            .collect();
        Ok(Self {
            kind,
            n_use,
            averages,
        })
    }

    pub fn has_state(&self, damage: f64, load: f64) -> bool {
        self.averages.contains_key(&CellKey::new(damage, load))
    }

    /// DI of `unknown` against the averaged reference at (damage, load).
    pub fn di(&self, unknown: &Signal, damage: f64, load: f64) -> Result<f64> {
        let reference = self
            .averages
            .get(&CellKey::new(damage, load))
            .ok_or(Error::MissingBaseline { damage, load })?;
        if unknown.len() < self.n_use {
            return Err(Error::InvalidArgument(format!(
                "unknown signal has {} samples, fewer than n_use={}",
                unknown.len(),
                self.n_use
            )));
        }
        compute_di(self.kind, reference, unknown.samples(), self.n_use)
    }

    /// Class-1 DIs of `unknown` against the healthy reference at each load.
    pub fn class1_dis(&self, unknown: &Signal, loads: &[f64]) -> Result<Vec<(f64, f64)>> {
        loads
            .iter()
            .map(|l| Ok((*l, self.di(unknown, 0.0, *l)?)))
            .collect()
    }
}

/// Compute one DI per unknown signal per reference state selected by
/// `policy`. Each unknown is paired with the replicate-averaged reference
/// signal of the reference state, leaving the unknown itself out of the
/// average when it belongs to that state. Class-1 values precede class-2
/// values when both classes are requested.
pub fn compute_di_values(
    signals: &[Signal],
    kind: DiKind,
    policy: ReferencePolicy,
    n_use: usize,
) -> Result<Vec<DiValue>> {
    if let Some(short) = signals.iter().find(|s| s.len() < n_use) {
        return Err(Error::InvalidArgument(format!(
            "signal damage={} load={} has {} samples, fewer than n_use={n_use}",
            short.state.damage_size,
            short.state.load,
            short.len()
        )));
    }
    let pools = build_pools(signals, n_use);

    let has_test = signals.iter().any(|s| s.state.role == Role::Test);
    let unknowns: Vec<&Signal> = signals
        .iter()
        .filter(|s| !has_test || s.state.role == Role::Test)
        .collect();

    let passes: Vec<ReferenceClass> = match policy {
        ReferencePolicy::HealthyPerLoad => vec![ReferenceClass::Class1],
        ReferencePolicy::UnloadedPerDamage => vec![ReferenceClass::Class2],
        ReferencePolicy::BothClasses => vec![ReferenceClass::Class1, ReferenceClass::Class2],
        ReferencePolicy::Fixed { .. } => vec![ReferenceClass::Single],
    };

    let mut out = Vec::new();
    for class in passes {
        for u in &unknowns {
            let (rd, rl) = match (class, policy) {
                (ReferenceClass::Class1, _) => (0.0, u.state.load),
                (ReferenceClass::Class2, _) => (u.state.damage_size, 0.0),
                (ReferenceClass::Single, ReferencePolicy::Fixed { damage, load }) => (damage, load),
                (ReferenceClass::Single, _) => unreachable!("single class only for fixed policy"),
            };
            let pool = pools
                .get(&CellKey::new(rd, rl))
                .ok_or(Error::MissingBaseline {
                    damage: rd,
                    load: rl,
                })?;
            let Some(reference) = pool.average_excluding(u, n_use) else {
                // The unknown is the only signal of its own reference state.
                continue;
            };
            let value = compute_di(kind, &reference, u.samples(), n_use)?;
            out.push(DiValue {
                value,
                state: u.state,
                reference_state: StateLabel::new(rd, rl, 0, pool.members[0].state.role),
                reference_class: class,
            });
        }
    }
    Ok(out)
}

/// Training/test matrix of state covariates against DI targets.
#[derive(Debug, Clone, PartialEq)]
pub struct DiDataset {
    pub inputs: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub column_names: Vec<String>,
}

pub const COLUMN_NAMES: [&str; 3] = ["damage", "load", "switch"];

impl DiDataset {
    pub fn new(inputs: DMatrix<f64>, targets: DVector<f64>) -> Result<Self> {
        let d = inputs.ncols();
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidArgument(format!(
                "dataset must have 1 to 3 input columns, got {d}"
            )));
        }
        let ds = Self {
            column_names: COLUMN_NAMES[..d].iter().map(|s| s.to_string()).collect(),
            inputs,
            targets,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.inputs.nrows();
        if self.targets.len() != n {
            return Err(Error::LengthMismatch(format!(
                "{n} input rows but {} targets",
                self.targets.len()
            )));
        }
        if n < 2 {
            return Err(Error::InvalidArgument(
                "dataset needs at least two rows".into(),
            ));
        }
        if self
            .inputs
            .iter()
            .chain(self.targets.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument(
                "dataset entries must be finite".into(),
            ));
        }
        if self.column_names.len() != self.dim() {
            return Err(Error::Schema(
                "column names do not match input width".into(),
            ));
        }
        if self.dim() == 3 && self.inputs.column(2).iter().any(|s| *s != 1.0 && *s != 2.0) {
            return Err(Error::InvalidArgument(
                "switch covariate must be exactly 1 or 2".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Build from DI values. The input width is 3 when both reference classes
    /// are present, 2 when the unknowns span more than one load, else 1.
    pub fn from_values(values: &[DiValue]) -> Result<Self> {
        let both = values
            .iter()
            .any(|v| v.reference_class == ReferenceClass::Class1)
            && values
                .iter()
                .any(|v| v.reference_class == ReferenceClass::Class2);
        let multi_load = values
            .iter()
            .any(|v| values.first().is_some_and(|f| f.state.load != v.state.load));
        let d = if both {
            3
        } else if multi_load {
            2
        } else {
            1
        };
        let n = values.len();
        let mut inputs = DMatrix::zeros(n, d);
        let mut targets = DVector::zeros(n);
        for (i, v) in values.iter().enumerate() {
            inputs[(i, 0)] = v.state.damage_size;
            if d >= 2 {
                inputs[(i, 1)] = v.state.load;
            }
            if d == 3 {
                inputs[(i, 2)] = v.reference_class.switch_value().unwrap_or(1.0);
            }
            targets[i] = v.value;
        }
        Self::new(inputs, targets)
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.inputs.row(i).iter().copied().collect()
    }

    /// Subset of rows, in the order given.
    pub fn select(&self, rows: &[usize]) -> Self {
        let inputs = self.inputs.select_rows(rows);
        let targets = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.targets[i]));
        Self {
            inputs,
            targets,
            column_names: self.column_names.clone(),
        }
    }

    pub fn to_csv(&self, preamble: &[String]) -> String {
        let mut out = String::new();
        for line in preamble {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(out, "{},di", self.column_names.join(","));
        for i in 0..self.len() {
            for v in self.inputs.row(i).iter() {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{}", self.targets[i]);
        }
        out
    }

    pub fn write_csv(&self, path: &Path, preamble: &[String]) -> Result<()> {
        write_atomic(path, self.to_csv(preamble).as_bytes())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut header: Option<Vec<String>> = None;
        let mut rows: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let Some(cols) = &header else {
                let names: Vec<String> = fields.iter().map(|s| s.to_string()).collect();
                let d = names.len().saturating_sub(1);
                let valid = (1..=3).contains(&d)
                    && names.last().map(String::as_str) == Some("di")
                    && names[..d].iter().zip(COLUMN_NAMES).all(|(a, b)| a == b);
                if !valid {
                    return Err(Error::Schema(format!(
                        "line {lineno}: expected header damage[,load[,switch]],di, got '{line}'"
                    )));
                }
                header = Some(names);
                continue;
            };
            if fields.len() != cols.len() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {} fields, found {}", cols.len(), fields.len()),
                });
            }
            for f in fields {
                rows.push(f.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("cannot parse number '{f}'"),
                })?);
            }
            n += 1;
        }
        let cols = header.ok_or_else(|| Error::Schema("missing dataset header".into()))?;
        let width = cols.len();
        let all = DMatrix::from_row_slice(n, width, &rows);
        let inputs = all.columns(0, width - 1).into_owned();
        let targets = all.column(width - 1).into_owned();
        Self::new(inputs, targets)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }
}

/// Compute DI values for `signals` under `policy` and lay them out as a dataset.
pub fn build_di_dataset(
    signals: &[Signal],
    kind: DiKind,
    policy: ReferencePolicy,
    n_use: usize,
) -> Result<DiDataset> {
    let values = compute_di_values(signals, kind, policy, n_use)?;
    DiDataset::from_values(&values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{simulate_dataset, SimulationConfig};

    #[test]
    fn rmsd_examples() {
        let y = [0.3, -1.2, 4.0];
        assert_eq!(rmsd_di(&y, &y, 3).unwrap(), 0.0);
        assert_eq!(rmsd_di(&[0.0; 4], &[1.0; 4], 4).unwrap(), 1.0);
        // sqrt((4 + 4) / 2)
        assert_eq!(rmsd_di(&[1.0, 2.0], &[3.0, 4.0], 2).unwrap(), 2.0);
    }

    #[test]
    fn rmsd_rejects_short_signals() {
        assert!(rmsd_di(&[1.0], &[1.0, 2.0], 2).is_err());
        assert!(rmsd_di(&[1.0], &[1.0], 0).is_err());
    }

    #[test]
    fn normalized_examples() {
        let y = [0.3, -1.2, 4.0, 0.7];
        let di = normalized_di(&y, &y, 4, NormalizedMode::Projection).unwrap();
        assert!(di.abs() < 1e-15);
        let di = normalized_di(
            &[1.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0],
            3,
            NormalizedMode::Projection,
        )
        .unwrap();
        assert_eq!(di, 1.0);
        let base = [1.0, 2.0, -0.5, 0.25];
        let unk = [0.9, 2.2, -0.4, 0.3];
        let scaled: Vec<f64> = unk.iter().map(|v| v * 7.5).collect();
        let a = normalized_di(&base, &unk, 4, NormalizedMode::Projection).unwrap();
        let b = normalized_di(&base, &scaled, 4, NormalizedMode::Projection).unwrap();
        assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
    }

    #[test]
    fn normalized_as_written_matches_hand_evaluation() {
        let y0 = [1.0, 2.0];
        let yu = [3.0, 4.0];
        // Yu = [0.6, 0.8]; cross = 0.6 + 1.6 = 2.2; sum y0^2 = 5
        // Y0 = [2.2 / 5, 2.2 / 10]; DI = 1.4 - 0.66
        let di = normalized_di(&y0, &yu, 2, NormalizedMode::AsWritten).unwrap();
        assert!((di - 0.74).abs() < 1e-12);
    }

    #[test]
    fn normalized_degenerate_cases() {
        assert!(matches!(
            normalized_di(&[1.0, 1.0], &[0.0, 0.0], 2, NormalizedMode::Projection),
            Err(Error::DegenerateSignal(_))
        ));
        assert!(matches!(
            normalized_di(&[0.0, 0.0], &[1.0, 0.0], 2, NormalizedMode::Projection),
            Err(Error::DegenerateSignal(_))
        ));
        assert!(matches!(
            normalized_di(&[1.0, 0.0], &[1.0, 1.0], 2, NormalizedMode::AsWritten),
            Err(Error::DivisionByZero { index: 1 })
        ));
    }

    fn grid_signals(noise: f64, replicates: u32) -> Vec<Signal> {
        let cfg = SimulationConfig {
            noise_floor_std: noise,
            n_replicates: replicates,
            ..SimulationConfig::default()
        };
        simulate_dataset(&cfg, &[0.0, 1.0, 2.0, 3.0, 4.0], &[0.0, 5.0, 10.0, 15.0]).unwrap()
    }

    #[test]
    fn healthy_self_reference_scatter_is_near_zero() {
        let cfg = SimulationConfig {
            noise_floor_std: 0.01,
            n_replicates: 20,
            ..SimulationConfig::default()
        };
        let sigs = simulate_dataset(&cfg, &[0.0], &[0.0]).unwrap();
        let ds = build_di_dataset(
            &sigs,
            DiKind::Rmsd,
            ReferencePolicy::Fixed {
                damage: 0.0,
                load: 0.0,
            },
            DEFAULT_N_USE,
        )
        .unwrap();
        assert_eq!(ds.len(), 20);
        assert_eq!(ds.dim(), 1);
        let mean = ds.targets.mean();
        assert!(mean > 0.0 && mean < 3.0 * cfg.noise_floor_std, "{mean}");
    }

    #[test]
    fn both_classes_row_count_and_layout() {
        let r = 3;
        let sigs = grid_signals(0.002, r);
        let values = compute_di_values(
            &sigs,
            DiKind::Rmsd,
            ReferencePolicy::BothClasses,
            DEFAULT_N_USE,
        )
        .unwrap();
        // every signal pairs once with its class-1 and once with its class-2
        // reference; leave-one-out keeps self-referenced states populated
        let per_class = 5 * 4 * r as usize;
        assert_eq!(values.len(), 2 * per_class);
        let ds = DiDataset::from_values(&values).unwrap();
        assert_eq!(ds.dim(), 3);
        for (i, v) in values.iter().enumerate() {
            let switch = ds.inputs[(i, 2)];
            match v.reference_class {
                ReferenceClass::Class1 => {
                    assert_eq!(switch, 1.0);
                    assert_eq!(v.reference_state.damage_size, 0.0);
                    assert_eq!(v.reference_state.load, v.state.load);
                }
                ReferenceClass::Class2 => {
                    assert_eq!(switch, 2.0);
                    assert_eq!(v.reference_state.load, 0.0);
                    assert_eq!(v.reference_state.damage_size, v.state.damage_size);
                }
                ReferenceClass::Single => panic!("unexpected single class"),
            }
        }
        // class-1 block first
        assert!(ds.inputs.column(2).as_slice()[..per_class]
            .iter()
            .all(|s| *s == 1.0));
        assert!(ds.inputs.column(2).as_slice()[per_class..]
            .iter()
            .all(|s| *s == 2.0));
    }

    #[test]
    fn single_replicate_self_pairing_is_dropped() {
        let sigs = grid_signals(0.0, 1);
        let values =
            compute_di_values(&sigs, DiKind::Rmsd, ReferencePolicy::HealthyPerLoad, 2500).unwrap();
        // the four healthy signals are their own only reference
        assert_eq!(values.len(), 20 - 4);
    }

    #[test]
    fn fixed_reference_rmsd_is_monotone_in_damage() {
        let cfg = SimulationConfig {
            noise_floor_std: 0.0,
            n_replicates: 1,
            ..SimulationConfig::default()
        };
        let grid = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0];
        let mut sigs = simulate_dataset(&cfg, &grid, &[5.0]).unwrap();
        // give the unknowns a separate baseline copy of the healthy signal
        let mut base = sigs[0].clone();
        base.state.role = Role::Baseline;
        sigs.push(base);
        let ds = build_di_dataset(
            &sigs,
            DiKind::Rmsd,
            ReferencePolicy::Fixed {
                damage: 0.0,
                load: 5.0,
            },
            DEFAULT_N_USE,
        )
        .unwrap();
        assert_eq!(ds.len(), 6);
        let t = ds.targets.as_slice();
        assert_eq!(t[0], 0.0);
        assert!(t.windows(2).all(|w| w[1] > w[0]), "{t:?}");
    }

    #[test]
    fn missing_baseline_names_state() {
        let cfg = SimulationConfig {
            n_replicates: 2,
            ..SimulationConfig::default()
        };
        let sigs = simulate_dataset(&cfg, &[1.0, 2.0], &[5.0]).unwrap();
        let err = build_di_dataset(&sigs, DiKind::Rmsd, ReferencePolicy::HealthyPerLoad, 2500)
            .unwrap_err();
        assert!(
            matches!(err, Error::MissingBaseline { damage, load } if damage == 0.0 && load == 5.0)
        );
    }

    #[test]
    fn reference_bank_averages_replicates() {
        let refs = grid_signals(0.003, 3);
        let bank = ReferenceBank::new(&refs, DiKind::Rmsd, 2500).unwrap();
        let cfg = SimulationConfig {
            n_replicates: 1,
            rng_seed: 99,
            noise_floor_std: 0.003,
            ..SimulationConfig::default()
        };
        let unknown = &simulate_dataset(&cfg, &[1.0], &[5.0]).unwrap()[0];

        let members: Vec<&Signal> = refs
            .iter()
            .filter(|s| s.state.damage_size == 0.0 && s.state.load == 5.0)
            .collect();
        assert_eq!(members.len(), 3);
        let avg: Vec<f64> = (0..2500)
            .map(|t| members.iter().map(|m| m.samples()[t]).sum::<f64>() / 3.0)
            .collect();
        let expected = rmsd_di(&avg, unknown.samples(), 2500).unwrap();
        let got = bank.di(unknown, 0.0, 5.0).unwrap();
        assert!((got - expected).abs() <= 1e-14 * expected);

        let c1 = bank.class1_dis(unknown, &[0.0, 5.0]).unwrap();
        assert_eq!(c1[1], (5.0, got));
        assert!(
            c1[0].1 > got,
            "matching load is the closest healthy reference"
        );
        assert!(bank.has_state(0.0, 5.0) && !bank.has_state(0.5, 5.0));
        assert!(matches!(
            bank.di(unknown, 0.5, 5.0),
            Err(Error::MissingBaseline { .. })
        ));
    }

    #[test]
    fn dataset_csv_round_trip() {
        let sigs = grid_signals(0.003, 2);
        let ds = build_di_dataset(&sigs, DiKind::Rmsd, ReferencePolicy::BothClasses, 2500).unwrap();
        let text = ds.to_csv(&["seed=1".into()]);
        assert!(text.lines().nth(1).unwrap() == "damage,load,switch,di");
        let back = DiDataset::parse_csv(&text).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn dataset_rejects_bad_switch_and_header() {
        let bad = "damage,load,switch,di\n0,0,3,0.1\n1,0,1,0.2\n";
        assert!(DiDataset::parse_csv(bad).is_err());
        let bad_header = "load,damage,di\n0,0,0.1\n";
        assert!(matches!(
            DiDataset::parse_csv(bad_header),
            Err(Error::Schema(_))
        ));
    }
}
