//! State quantification: turn a trained model's predictive moments and an
//! incoming damage index into a probability for each candidate state, plus
//! the two-step damage/load procedure and box-plot style summaries.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::damage_index::DiDataset;
use crate::error::{Error, Result};
use crate::gp::Regressor;

/// Normal CDF `Phi((s - mean) / sqrt(variance))`.
pub fn gaussian_cdf(s: f64, mean: f64, variance: f64) -> Result<f64> {
    let z = standardize(s, mean, variance)?;
    Ok(0.5 * libm::erfc(-z / std::f64::consts::SQRT_2))
}

fn standardize(s: f64, mean: f64, variance: f64) -> Result<f64> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "variance must be positive and finite, got {variance}"
        )));
    }
    if s.is_nan() || !mean.is_finite() {
        return Err(Error::InvalidArgument(
            "cdf arguments must be numbers".into(),
        ));
    }
    Ok((s - mean) / variance.sqrt())
}

/// `F(b) - F(a)`, evaluated from whichever tail keeps the difference accurate.
pub fn interval_probability(a: f64, b: f64, mean: f64, variance: f64) -> Result<f64> {
    if a > b {
        return Err(Error::InvalidArgument(format!("empty interval [{a}, {b}]")));
    }
    let za = standardize(a, mean, variance)?;
    let zb = standardize(b, mean, variance)?;
    let upper = |z: f64| 0.5 * libm::erfc(z / std::f64::consts::SQRT_2);
    let p = if za >= 0.0 {
        upper(za) - upper(zb)
    } else if zb <= 0.0 {
        upper(-zb) - upper(-za)
    } else {
        1.0 - upper(zb) - upper(-za)
    };
    Ok(p.clamp(0.0, 1.0))
}

/// A candidate structural state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub damage: f64,
    pub load: Option<f64>,
}

impl State {
    pub fn new(damage: f64, load: Option<f64>) -> Self {
        Self { damage, load }
    }

    /// Damage first, then load (a missing load sorts first).
    pub fn order(&self, other: &Self) -> Ordering {
        self.damage
            .total_cmp(&other.damage)
            .then_with(|| match (self.load, other.load) {
                (None, None) => Ordering::Equal,
                (None, Some(_)) => Ordering::Less,
                (Some(_), None) => Ordering::Greater,
                (Some(a), Some(b)) => a.total_cmp(&b),
            })
    }
}

/// Sorted, duplicate-free list of candidate states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrid {
    states: Vec<State>,
    pub source: String,
}

impl StateGrid {
    pub fn new(mut states: Vec<State>, source: impl Into<String>) -> Result<Self> {
        if states
            .iter()
            .any(|s| !s.damage.is_finite() || s.load.is_some_and(|l| !l.is_finite()))
        {
            return Err(Error::InvalidArgument("grid states must be finite".into()));
        }
        states.sort_by(State::order);
        states.dedup_by(|a, b| a.order(b) == Ordering::Equal);
        Ok(Self {
            states,
            source: source.into(),
        })
    }

    pub fn damages(damages: &[f64]) -> Result<Self> {
        Self::new(
            damages.iter().map(|d| State::new(*d, None)).collect(),
            "damage list",
        )
    }

    /// Every damage combined with every load.
    pub fn product(damages: &[f64], loads: &[f64]) -> Result<Self> {
        let states = damages
            .iter()
            .flat_map(|d| loads.iter().map(move |l| State::new(*d, Some(*l))))
            .collect();
        Self::new(states, "damage x load")
    }

    /// Unique (damage[, load]) input states of a dataset; the switch column is not a state.
    pub fn from_dataset(ds: &DiDataset) -> Result<Self> {
        let states = (0..ds.len())
            .map(|i| {
                let load = (ds.dim() >= 2).then(|| ds.inputs[(i, 1)]);
                State::new(ds.inputs[(i, 0)], load)
            })
            .collect();
        Self::new(states, "training data")
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Insert `k` evenly spaced damage values between consecutive damages
    /// sharing the same load.
    pub fn refine(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Ok(self.clone());
        }
        let mut out = self.states.clone();
        let mut loads: Vec<Option<f64>> = self.states.iter().map(|s| s.load).collect();
        loads.sort_by(|a, b| State::new(0.0, *a).order(&State::new(0.0, *b)));
        loads.dedup();
        for load in loads {
            let damages: Vec<f64> = self
                .states
                .iter()
                .filter(|s| s.load == load)
                .map(|s| s.damage)
                .collect();
            for w in damages.windows(2) {
                for j in 1..=k {
                    let t = j as f64 / (k + 1) as f64;
                    out.push(State::new(w[0] + t * (w[1] - w[0]), load));
                }
            }
        }
        Self::new(out, format!("{} refined x{k}", self.source))
    }
}

/// Inputs held fixed while the grid varies.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Covariates {
    pub load: Option<f64>,
    pub switch: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantifyOptions {
    /// Flag the prediction when the best probability is below this.
    pub low_confidence_threshold: f64,
    /// Also flag it when the runner-up reaches this fraction of the best.
    pub ambiguity_ratio: Option<f64>,
}

impl Default for QuantifyOptions {
    fn default() -> Self {
        Self {
            low_confidence_threshold: 0.05,
            ambiguity_ratio: Some(0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateProbabilityTable {
    pub entries: Vec<(State, f64)>,
    pub test_di: f64,
    pub closest_training_di: f64,
    /// Training row that supplied the closest DI.
    pub closest_index: usize,
    pub closest_variance: f64,
    pub argmax_state: State,
    pub max_probability: f64,
    pub low_confidence: bool,
}

impl StateProbabilityTable {
    pub fn probability(&self, state: &State) -> Option<f64> {
        self.entries
            .iter()
            .find(|(s, _)| s.order(state) == Ordering::Equal)
            .map(|(_, p)| *p)
    }
}

fn input_row(state: &State, fixed: &Covariates, dim: usize) -> Result<Vec<f64>> {
    let mismatch = |m: String| Err(Error::CovariateMismatch(m));
    let load = match (state.load, fixed.load) {
        (Some(a), Some(b)) if a != b => {
            return mismatch(format!("grid load {a} conflicts with fixed load {b}"))
        }
        (a, b) => a.or(b),
    };
    match dim {
        1 => {
            if state.load.is_some() {
                return mismatch("grid states carry a load but the model has one input".into());
            }
            if fixed.switch.is_some() {
                return mismatch("switch given for a one-input model".into());
            }
            Ok(vec![state.damage])
        }
        2 => {
            let Some(load) = load else {
                return mismatch("the model needs a load but none was given".into());
            };
            if fixed.switch.is_some() {
                return mismatch("switch given for a two-input model".into());
            }
            Ok(vec![state.damage, load])
        }
        3 => {
            let (Some(load), Some(switch)) = (load, fixed.switch) else {
                return mismatch("the model needs both a load and a switch value".into());
            };
            Ok(vec![state.damage, load, switch])
        }
        d => mismatch(format!("unsupported model input dimension {d}")),
    }
}

/// Probability that the test DI came from each grid state.
///
/// The interval is `test_di +/- 2 sqrt(V)`, where `V` is the predictive
/// variance at the training row whose target is closest to `test_di`. When a
/// switch value is fixed, only training rows with that switch are candidates.
pub fn state_probabilities<R: Regressor + ?Sized>(
    model: &R,
    grid: &StateGrid,
    test_di: f64,
    fixed: &Covariates,
    options: &QuantifyOptions,
) -> Result<StateProbabilityTable> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if !test_di.is_finite() {
        return Err(Error::InvalidArgument("test DI must be finite".into()));
    }
    let dim = model.dim();
    let rows: Vec<Vec<f64>> = grid
        .states()
        .iter()
        .map(|s| input_row(s, fixed, dim))
        .collect::<Result<_>>()?;

    let x = model.train_inputs();
    let y = model.train_targets();
    let mut closest: Option<usize> = None;
    for i in 0..y.len() {
        if let (3, Some(sw)) = (dim, fixed.switch) {
            if x[(i, 2)] != sw {
                continue;
            }
        }
        let better = match closest {
            None => true,
            Some(j) => (y[i] - test_di).abs() < (y[j] - test_di).abs(),
        };
        if better {
            closest = Some(i);
        }
    }
    let closest = closest.ok_or_else(|| {
        Error::CovariateMismatch("no training rows match the fixed switch value".into())
    })?;
    let closest_moments = model.predict(&x.rows(closest, 1).into_owned())?;
    let closest_variance = closest_moments.variance[0];
    let half = 2.0 * closest_variance.sqrt();
    let (a, b) = (test_di - half, test_di + half);

    let xq = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
    let m = model.predict(&xq)?;
    let mut entries = Vec::with_capacity(rows.len());
    for (i, state) in grid.states().iter().enumerate() {
        let p = interval_probability(a, b, m.mean[i], m.variance[i])?;
        entries.push((*state, p));
    }
    // grid order is sorted, so the first maximum is the smallest state
    let mut best = 0;
    for (i, (_, p)) in entries.iter().enumerate() {
        if *p > entries[best].1 {
            best = i;
        }
    }
    let max_probability = entries[best].1;
    let runner_up = entries
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != best)
        .map(|(_, e)| e.1)
        .fold(0.0, f64::max);
    let ambiguous = options
        .ambiguity_ratio
        .is_some_and(|r| entries.len() > 1 && runner_up >= r * max_probability);
    Ok(StateProbabilityTable {
        argmax_state: entries[best].0,
        entries,
        test_di,
        closest_training_di: y[closest],
        closest_index: closest,
        closest_variance,
        max_probability,
        low_confidence: max_probability < options.low_confidence_threshold || ambiguous,
    })
}

/// Probabilities for many test DIs at once, evaluated in parallel.
pub fn state_probabilities_batch<R: Regressor + Sync + ?Sized>(
    model: &R,
    grid: &StateGrid,
    test_dis: &[f64],
    fixed: &Covariates,
    options: &QuantifyOptions,
) -> Result<Vec<StateProbabilityTable>> {
    test_dis
        .par_iter()
        .map(|di| state_probabilities(model, grid, *di, fixed, options))
        .collect()
}

/// Damage-only prediction, optionally at a known load.
pub fn predict_single_state<R: Regressor + ?Sized>(
    model: &R,
    grid: &StateGrid,
    test_di: f64,
    known_load: Option<f64>,
    options: &QuantifyOptions,
) -> Result<StateProbabilityTable> {
    let fixed = Covariates {
        load: if model.dim() >= 2 { known_load } else { None },
        switch: None,
    };
    state_probabilities(model, grid, test_di, &fixed, options)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepPrediction {
    pub predicted_damage: f64,
    pub predicted_load: f64,
    pub step1_table: StateProbabilityTable,
    pub step2_table: StateProbabilityTable,
    /// Reference load of the class-1 DI whose table won step 1.
    pub step1_reference_load: f64,
    pub class2_di: f64,
}

impl TwoStepPrediction {
    pub fn state(&self) -> State {
        State::new(self.predicted_damage, Some(self.predicted_load))
    }
}

/// Simultaneous damage and load prediction with a three-input model
/// (damage, load, switch).
///
/// Step 1 scores every class-1 DI (one per healthy reference load) over the
/// damage x load grid with switch 1 and keeps only the damage of the single
/// most probable state. Step 2 asks `class2_di` for the DI against the
/// unloaded reference at that damage and scores the load grid with switch 2.
pub fn predict_two_states<R, F>(
    model: &R,
    class1_test_dis: &[(f64, f64)],
    mut class2_di: F,
    damage_grid: &[f64],
    load_grid: &[f64],
    options: &QuantifyOptions,
) -> Result<TwoStepPrediction>
where
    R: Regressor + ?Sized,
    F: FnMut(f64) -> Option<f64>,
{
    if model.dim() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            found: model.dim(),
        });
    }
    if class1_test_dis.is_empty() {
        return Err(Error::InvalidArgument("no class-1 test DIs".into()));
    }
    let grid = StateGrid::product(damage_grid, load_grid)?;
    let class1 = Covariates {
        load: None,
        switch: Some(1.0),
    };
    let mut winner: Option<(f64, StateProbabilityTable)> = None;
    for (reference_load, di) in class1_test_dis {
        let table = state_probabilities(model, &grid, *di, &class1, options)?;
        if winner
            .as_ref()
            .is_none_or(|(_, w)| table.max_probability > w.max_probability)
        {
            winner = Some((*reference_load, table));
        }
    }
    let (step1_reference_load, step1_table) = winner.expect("at least one class-1 DI");
    let predicted_damage = step1_table.argmax_state.damage;

    let di2 = class2_di(predicted_damage).ok_or(Error::MissingClass2Reference {
        damage: predicted_damage,
    })?;
    let load_states = StateGrid::product(&[predicted_damage], load_grid)?;
    let class2 = Covariates {
        load: None,
        switch: Some(2.0),
    };
    let step2_table = state_probabilities(model, &load_states, di2, &class2, options)?;
    Ok(TwoStepPrediction {
        predicted_damage,
        predicted_load: step2_table
            .argmax_state
            .load
            .expect("load grid states carry loads"),
        step1_table,
        step2_table,
        step1_reference_load,
        class2_di: di2,
    })
}

/// Box-plot statistics of the predictions made for one true state.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSummary {
    pub state: State,
    pub count: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub lo_whisk: f64,
    pub hi_whisk: f64,
    pub outliers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionError {
    pub true_state: State,
    pub predicted: State,
    pub err_damage: f64,
    pub err_load: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryReport {
    /// Predicted damage per true state.
    pub damage: Vec<BoxSummary>,
    /// Predicted load per true state (states with loads only).
    pub load: Vec<BoxSummary>,
    pub errors: Vec<PredictionError>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn box_summary(state: State, mut values: Vec<f64>) -> BoxSummary {
    values.sort_by(f64::total_cmp);
    let q25 = quantile_sorted(&values, 0.25);
    let q75 = quantile_sorted(&values, 0.75);
    let iqr = q75 - q25;
    let (lo_fence, hi_fence) = (q25 - 1.5 * iqr, q75 + 1.5 * iqr);
    let inside: Vec<f64> = values
        .iter()
        .copied()
        .filter(|v| *v >= lo_fence && *v <= hi_fence)
        .collect();
    BoxSummary {
        state,
        count: values.len(),
        median: quantile_sorted(&values, 0.5),
        q25,
        q75,
        lo_whisk: inside.first().copied().unwrap_or(q25),
        hi_whisk: inside.last().copied().unwrap_or(q75),
        outliers: values
            .iter()
            .copied()
            .filter(|v| *v < lo_fence || *v > hi_fence)
            .collect(),
    }
}

pub fn summarize_predictions(
    true_states: &[State],
    tables: &[StateProbabilityTable],
) -> Result<SummaryReport> {
    let predicted: Vec<State> = tables.iter().map(|t| t.argmax_state).collect();
    summarize_states(true_states, &predicted)
}

pub fn summarize_states(true_states: &[State], predicted: &[State]) -> Result<SummaryReport> {
    if true_states.len() != predicted.len() {
        return Err(Error::LengthMismatch(format!(
            "{} true states for {} predictions",
            true_states.len(),
            predicted.len()
        )));
    }
    let mut order: Vec<usize> = (0..true_states.len()).collect();
    order.sort_by(|&i, &j| true_states[i].order(&true_states[j]).then(i.cmp(&j)));
    let mut damage = Vec::new();
    let mut load = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let state = true_states[order[start]];
        let mut end = start;
        while end < order.len() && true_states[order[end]].order(&state) == Ordering::Equal {
            end += 1;
        }
        let group = &order[start..end];
        damage.push(box_summary(
            state,
            group.iter().map(|&i| predicted[i].damage).collect(),
        ));
        let loads: Vec<f64> = group.iter().filter_map(|&i| predicted[i].load).collect();
        if state.load.is_some() && !loads.is_empty() {
            load.push(box_summary(state, loads));
        }
        start = end;
    }
    let errors = true_states
        .iter()
        .zip(predicted)
        .map(|(t, p)| PredictionError {
            true_state: *t,
            predicted: *p,
            err_damage: p.damage - t.damage,
            err_load: t.load.zip(p.load).map(|(t, p)| p - t),
        })
        .collect();
    Ok(SummaryReport {
        damage,
        load,
        errors,
    })
}
