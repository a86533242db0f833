//! Pipeline configuration, read from a TOML file.
//!
//! Every key is optional; missing keys take the defaults below. Example:
//!
//! ```toml
//! seed = 42
//!
//! [simulation]
//! noise_floor_std = 0.005
//! damage_grid = [0.0, 1.0, 2.0, 3.0, 4.0]
//! load_grid = [0.0, 1.0, 2.0, 3.0]
//!
//! [di]
//! kind = "rmsd"          # rmsd | normalized
//! mode = "projection"    # projection | as-written
//! policy = "class1"      # class1 | class2 | both | fixed
//!
//! [train]
//! model = "sgpr"         # sgpr | vhgpr
//! train_fraction = 0.5
//!
//! [paths]
//! workdir = "gwquant-out"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use gwquant_core::damage_index::{DiKind, NormalizedMode, ReferencePolicy, DEFAULT_N_USE};
use gwquant_core::gp::TrainOptions;
use gwquant_core::model::ModelKind;
use gwquant_core::quantify::QuantifyOptions;
use gwquant_core::signals::SimulationConfig;
use gwquant_core::{Error, Result};

pub const SEED_ENV: &str = "GWQUANT_SEED";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root of every random stream used by the pipeline.
    pub seed: u64,
    pub simulation: SimulationSection,
    pub di: DiSection,
    pub train: TrainSection,
    pub quantify: QuantifySection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub center_frequency: f64,
    pub n_cycles: u32,
    pub burst_amplitude: f64,
    pub sample_rate: f64,
    pub path_delay: f64,
    pub damage_attenuation_coeff: f64,
    pub damage_delay_coeff: f64,
    pub load_delay_coeff: f64,
    pub noise_floor_std: f64,
    pub heteroscedastic_noise_slope: f64,
    pub n_samples: usize,
    pub n_replicates: u32,
    pub crosstalk_blank_samples: usize,
    pub damage_grid: Vec<f64>,
    pub load_grid: Vec<f64>,
    /// Fresh test signals per state for two-state prediction in `run`.
    pub test_replicates: u32,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiSection {
    pub kind: String,
    pub mode: String,
    pub policy: String,
    pub n_use: usize,
    pub fixed_damage: f64,
    pub fixed_load: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub model: String,
    pub restarts: usize,
    pub center_targets: bool,
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantifySection {
    pub grid_refine: usize,
    pub low_confidence_threshold: f64,
    /// Runner-up to best probability ratio that also marks low confidence; 0 disables it.
    pub ambiguity_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub workdir: PathBuf,
    pub model_file: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            simulation: SimulationSection::default(),
            di: DiSection::default(),
            train: TrainSection::default(),
            quantify: QuantifySection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl Default for SimulationSection {
    fn default() -> Self {
        let s = SimulationConfig::default();
        Self {
            center_frequency: s.center_frequency,
            n_cycles: s.n_cycles,
            burst_amplitude: s.burst_amplitude,
            sample_rate: s.sample_rate,
            path_delay: s.path_delay,
            damage_attenuation_coeff: s.damage_attenuation_coeff,
            damage_delay_coeff: s.damage_delay_coeff,
            load_delay_coeff: s.load_delay_coeff,
            noise_floor_std: s.noise_floor_std,
            heteroscedastic_noise_slope: s.heteroscedastic_noise_slope,
            n_samples: s.n_samples,
            n_replicates: s.n_replicates,
            crosstalk_blank_samples: s.crosstalk_blank_samples,
            damage_grid: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            load_grid: vec![0.0, 1.0, 2.0, 3.0],
            test_replicates: 2,
        }
    }
}

impl Default for DiSection {
    fn default() -> Self {
        Self {
            kind: "rmsd".into(),
            mode: "projection".into(),
            policy: "class1".into(),
            n_use: DEFAULT_N_USE,
            fixed_damage: 0.0,
            fixed_load: 0.0,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            model: "sgpr".into(),
            restarts: 5,
            center_targets: false,
            train_fraction: 0.5,
        }
    }
}

impl Default for QuantifySection {
    fn default() -> Self {
        let q = QuantifyOptions::default();
        Self {
            grid_refine: 0,
            low_confidence_threshold: q.low_confidence_threshold,
            ambiguity_ratio: q.ambiguity_ratio.unwrap_or(0.0),
        }
    }
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            workdir: PathBuf::from("gwquant-out"),
            model_file: PathBuf::from("model.txt"),
            report_dir: PathBuf::from("report"),
        }
    }
}

pub fn parse_kind(kind: &str, mode: &str) -> Result<DiKind> {
    let mode = match mode {
        "projection" => NormalizedMode::Projection,
        "as-written" | "as_written" => NormalizedMode::AsWritten,
        other => return Err(Error::InvalidArgument(format!("unknown DI mode '{other}'"))),
    };
    match kind {
        "rmsd" => Ok(DiKind::Rmsd),
        "normalized" => Ok(DiKind::Normalized(mode)),
        other => Err(Error::InvalidArgument(format!("unknown DI kind '{other}'"))),
    }
}

pub fn parse_policy(policy: &str, fixed_damage: f64, fixed_load: f64) -> Result<ReferencePolicy> {
    match policy {
        "class1" => Ok(ReferencePolicy::HealthyPerLoad),
        "class2" => Ok(ReferencePolicy::UnloadedPerDamage),
        "both" => Ok(ReferencePolicy::BothClasses),
        "fixed" => Ok(ReferencePolicy::Fixed {
            damage: fixed_damage,
            load: fixed_load,
        }),
        other => Err(Error::InvalidArgument(format!(
            "unknown reference policy '{other}'"
        ))),
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                line,
                msg: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    /// Seed precedence: explicit flag, then `GWQUANT_SEED`, then the file.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<()> {
        if let Some(s) = flag {
            self.seed = s;
        } else if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!("{SEED_ENV}='{v}' is not an unsigned integer"))
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train.train_fraction > 0.0 && self.train.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train.train_fraction
            )));
        }
        self.simulation_config(0).validate()?;
        let sim = &self.simulation;
        for (name, grid) in [
            ("damage_grid", &sim.damage_grid),
            ("load_grid", &sim.load_grid),
        ] {
            if grid.is_empty()
                || grid.iter().any(|v| !v.is_finite() || *v < 0.0)
                || grid.windows(2).any(|w| w[0] >= w[1])
            {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be non-empty, non-negative and strictly increasing"
                )));
            }
        }
        self.di_kind()?;
        self.policy()?;
        self.model_kind()?;
        if !(0.0..=1.0).contains(&self.quantify.low_confidence_threshold)
            || !(self.quantify.ambiguity_ratio >= 0.0)
        {
            return Err(Error::InvalidArgument("invalid quantify thresholds".into()));
        }
        Ok(())
    }

    pub fn simulation_config(&self, rng_seed: u64) -> SimulationConfig {
        let s = &self.simulation;
        SimulationConfig {
            center_frequency: s.center_frequency,
            n_cycles: s.n_cycles,
            burst_amplitude: s.burst_amplitude,
            sample_rate: s.sample_rate,
            path_delay: s.path_delay,
            damage_attenuation_coeff: s.damage_attenuation_coeff,
            damage_delay_coeff: s.damage_delay_coeff,
            load_delay_coeff: s.load_delay_coeff,
            noise_floor_std: s.noise_floor_std,
            heteroscedastic_noise_slope: s.heteroscedastic_noise_slope,
            n_samples: s.n_samples,
            n_replicates: s.n_replicates,
            rng_seed,
            crosstalk_blank_samples: s.crosstalk_blank_samples,
        }
    }

    pub fn di_kind(&self) -> Result<DiKind> {
        parse_kind(&self.di.kind, &self.di.mode)
    }

    pub fn policy(&self) -> Result<ReferencePolicy> {
        parse_policy(&self.di.policy, self.di.fixed_damage, self.di.fixed_load)
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        self.train.model.parse()
    }

    pub fn train_options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            n_restarts: self.train.restarts,
            seed,
            center_targets: self.train.center_targets,
            ..TrainOptions::default()
        }
    }

    pub fn quantify_options(&self) -> QuantifyOptions {
        QuantifyOptions {
            low_confidence_threshold: self.quantify.low_confidence_threshold,
            ambiguity_ratio: (self.quantify.ambiguity_ratio > 0.0)
                .then_some(self.quantify.ambiguity_ratio),
        }
    }

    pub fn workdir_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.paths.workdir.join(p)
        }
    }
}
