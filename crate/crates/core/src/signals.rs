//! Guided-wave signals: the tone-burst excitation, a parametric propagation
//! simulator standing in for coupon measurements, and the sectioned signal
//! CSV format.

use std::f64::consts::PI;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Whether a signal was recorded as a baseline reference or as a test signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Baseline,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Baseline => "baseline",
            Role::Test => "test",
        })
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Role::Baseline),
            "test" => Ok(Role::Test),
            other => Err(format!("unknown role '{other}'")),
        }
    }
}

/// Structural state under which a signal was acquired.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateLabel {
    /// Damage size (mm of notch, or number of attached weights).
    pub damage_size: f64,
    /// Applied load in kN.
    pub load: f64,
    pub replicate: u32,
    pub role: Role,
}

impl StateLabel {
    pub fn new(damage_size: f64, load: f64, replicate: u32, role: Role) -> Self {
        Self {
            damage_size,
            load,
            replicate,
            role,
        }
    }

    /// True when both labels describe the same (damage, load) cell.
    pub fn same_state(&self, other: &StateLabel) -> bool {
        self.damage_size == other.damage_size && self.load == other.load
    }
}

/// A uniformly sampled sensor waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: f64,
    pub state: StateLabel,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: f64, state: StateLabel) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("signal has no samples".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "signal sample {i} is not finite"
            )));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
            state,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn peak_amplitude(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Parameters of the synthetic propagation model.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub center_frequency: f64,
    pub n_cycles: u32,
    pub burst_amplitude: f64,
    pub sample_rate: f64,
    /// Propagation delay of the healthy, unloaded path (s).
    pub path_delay: f64,
    /// Amplitude decay per unit damage: received amplitude scales by `exp(-coeff * damage)`.
    pub damage_attenuation_coeff: f64,
    /// Extra delay per unit damage (s).
    pub damage_delay_coeff: f64,
    /// Extra delay per kN of load (s).
    pub load_delay_coeff: f64,
    pub noise_floor_std: f64,
    /// Increase of the noise standard deviation per unit damage.
    pub heteroscedastic_noise_slope: f64,
    pub n_samples: usize,
    pub n_replicates: u32,
    pub rng_seed: u64,
    /// Leading samples zeroed in every received signal to suppress cross-talk.
    pub crosstalk_blank_samples: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            center_frequency: 250e3,
            n_cycles: 5,
            burst_amplitude: 1.0,
            sample_rate: 24e6,
            path_delay: 10e-6,
            damage_attenuation_coeff: 0.08,
            damage_delay_coeff: 0.05e-6,
            load_delay_coeff: 0.08e-6,
            noise_floor_std: 0.005,
            heteroscedastic_noise_slope: 0.0,
            n_samples: 2500,
            n_replicates: 10,
            rng_seed: 42,
            crosstalk_blank_samples: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let coeffs = [
            self.center_frequency,
            self.burst_amplitude,
            self.sample_rate,
            self.path_delay,
            self.damage_attenuation_coeff,
            self.damage_delay_coeff,
            self.load_delay_coeff,
            self.noise_floor_std,
            self.heteroscedastic_noise_slope,
        ];
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(
                "simulation coefficients must be finite".into(),
            ));
        }
        if self.n_cycles < 1 || self.n_samples < 1 {
            return Err(Error::InvalidArgument(
                "n_cycles and n_samples must be at least 1".into(),
            ));
        }
        if self.noise_floor_std < 0.0 || self.heteroscedastic_noise_slope < 0.0 {
            return Err(Error::InvalidArgument(
                "noise parameters must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Total delay, in whole samples, for a given state.
    pub fn delay_samples(&self, damage: f64, load: f64) -> i64 {
        let delay =
            self.path_delay + self.damage_delay_coeff * damage + self.load_delay_coeff * load;
        (delay * self.sample_rate).round() as i64
    }

    pub fn attenuation(&self, damage: f64) -> f64 {
        (-self.damage_attenuation_coeff * damage).exp()
    }

    pub fn noise_std(&self, damage: f64) -> f64 {
        self.noise_floor_std + self.heteroscedastic_noise_slope * damage
    }
}

/// Number of samples spanned by `n_cycles` periods.
pub fn burst_length(center_frequency: f64, n_cycles: u32, sample_rate: f64) -> usize {
    // Guard against 479.99999 style rounding of exact ratios.
    (f64::from(n_cycles) * sample_rate / center_frequency - 1e-9).ceil() as usize
}

/// Hamming-windowed sine burst of `n_cycles` cycles at the head of an
/// otherwise zero buffer.
pub fn tone_burst(
    center_frequency: f64,
    n_cycles: u32,
    amplitude: f64,
    sample_rate: f64,
    n_samples: usize,
) -> Result<Signal> {
    if !(center_frequency > 0.0) {
        return Err(Error::InvalidArgument(
            "center frequency must be positive".into(),
        ));
    }
    if !(sample_rate > 2.0 * center_frequency) {
        return Err(Error::InvalidArgument(format!(
            "sample rate {sample_rate} must exceed twice the center frequency {center_frequency}"
        )));
    }
    if n_cycles < 1 || !amplitude.is_finite() {
        return Err(Error::InvalidArgument(
            "burst needs at least one cycle and a finite amplitude".into(),
        ));
    }
    let len = burst_length(center_frequency, n_cycles, sample_rate);
    if n_samples < len {
        return Err(Error::InvalidArgument(format!(
            "buffer of {n_samples} samples cannot hold a {len}-sample burst"
        )));
    }
    let mut samples = vec![0.0; n_samples];
    for (t, s) in samples.iter_mut().take(len).enumerate() {
        *s = amplitude
            * hamming(t, len)
            * (2.0 * PI * center_frequency * t as f64 / sample_rate).sin();
    }
    Signal::new(
        samples,
        sample_rate,
        StateLabel::new(0.0, 0.0, 0, Role::Baseline),
    )
}

pub(crate) fn hamming(t: usize, len: usize) -> f64 {
    if len == 1 {
        return 1.0;
    }
    0.54 - 0.46 * (2.0 * PI * t as f64 / (len - 1) as f64).cos()
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} grid is empty")));
    }
    if grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{name} grid values must be finite and non-negative"
        )));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!(
            "{name} grid must be strictly increasing"
        )));
    }
    Ok(())
}

/// Simulate `n_replicates` received signals for every (damage, load) cell.
///
/// Signals are ordered by damage, then load, then replicate. The random
/// stream is owned by the call and seeded from `config.rng_seed`.
pub fn simulate_dataset(
    config: &SimulationConfig,
    damage_grid: &[f64],
    load_grid: &[f64],
) -> Result<Vec<Signal>> {
    config.validate()?;
    check_grid("damage", damage_grid)?;
    check_grid("load", load_grid)?;
    let burst = tone_burst(
        config.center_frequency,
        config.n_cycles,
        config.burst_amplitude,
        config.sample_rate,
        config.n_samples,
    )?;
    let burst_len = burst_length(config.center_frequency, config.n_cycles, config.sample_rate);
    let burst = &burst.samples()[..burst_len];

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut out =
        Vec::with_capacity(damage_grid.len() * load_grid.len() * config.n_replicates as usize);
    for &damage in damage_grid {
        for &load in load_grid {
            let shift = config.delay_samples(damage, load);
            let gain = config.attenuation(damage);
            let std = config.noise_std(damage);
            let noise = if std > 0.0 {
                Some(Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?)
            } else {
                None
            };
            for replicate in 0..config.n_replicates {
                let mut samples = vec![0.0; config.n_samples];
                for (i, b) in burst.iter().enumerate() {
                    let t = shift + i as i64;
                    if t >= 0 && (t as usize) < config.n_samples {
                        samples[t as usize] = gain * b;
                    }
                }
                if let Some(noise) = &noise {
                    for s in samples.iter_mut() {
                        *s += noise.sample(&mut rng);
                    }
                }
                let blank = config.crosstalk_blank_samples.min(config.n_samples);
                samples[..blank].iter_mut().for_each(|s| *s = 0.0);
                out.push(Signal::new(
                    samples,
                    config.sample_rate,
                    StateLabel::new(damage, load, replicate, Role::Test),
                )?);
            }
        }
    }
    Ok(out)
}

/// Render signals in the sectioned CSV format. `preamble` lines are written
/// first as `# ` comments.
pub fn format_signals_csv(signals: &[Signal], preamble: &[String]) -> String {
    let mut out = String::new();
    for line in preamble {
        let _ = writeln!(out, "# {line}");
    }
    for (k, s) in signals.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        let st = &s.state;
        let _ = writeln!(
            out,
            "# signal damage={} load={} replicate={} role={} sample_rate={}",
            st.damage_size, st.load, st.replicate, st.role, s.sample_rate
        );
        for v in s.samples() {
            let _ = writeln!(out, "{v:.16e}");
        }
    }
    out
}

pub fn write_signals_csv(path: &Path, signals: &[Signal], preamble: &[String]) -> Result<()> {
    write_atomic(path, format_signals_csv(signals, preamble).as_bytes())
}

pub fn read_signals_csv(path: &Path) -> Result<Vec<Signal>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_signals_csv(&text)
}

struct PendingSection {
    header_line: usize,
    header: String,
    state: StateLabel,
    sample_rate: f64,
    samples: Vec<f64>,
}

impl PendingSection {
    fn finish(self, out: &mut Vec<Signal>) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Parse {
                line: self.header_line,
                msg: format!("empty data section after header '{}'", self.header),
            });
        }
        let signal =
            Signal::new(self.samples, self.sample_rate, self.state).map_err(|e| Error::Parse {
                line: self.header_line,
                msg: e.to_string(),
            })?;
        out.push(signal);
        Ok(())
    }
}

fn parse_header(line: &str, lineno: usize) -> Result<(StateLabel, f64)> {
    let body = line
        .strip_prefix("# signal")
        .ok_or_else(|| Error::Schema(format!("line {lineno}: not a signal header")))?;
    let mut damage = None;
    let mut load = None;
    let mut replicate = None;
    let mut role = None;
    let mut rate = None;
    for field in body.split_whitespace() {
        let (key, value) = field.split_once('=').ok_or_else(|| {
            Error::Schema(format!("line {lineno}: malformed header field '{field}'"))
        })?;
        let bad = |what: &str| Error::Parse {
            line: lineno,
            msg: format!("cannot parse {what} from '{value}'"),
        };
        match key {
            "damage" => damage = Some(value.parse::<f64>().map_err(|_| bad("damage"))?),
            "load" => load = Some(value.parse::<f64>().map_err(|_| bad("load"))?),
            "replicate" => replicate = Some(value.parse::<u32>().map_err(|_| bad("replicate"))?),
            "role" => role = Some(value.parse::<Role>().map_err(|_| bad("role"))?),
            "sample_rate" => rate = Some(value.parse::<f64>().map_err(|_| bad("sample_rate"))?),
            other => {
                return Err(Error::Schema(format!(
                    "line {lineno}: unknown header field '{other}'"
                )))
            }
        }
    }
    match (damage, load, replicate, role, rate) {
        (Some(d), Some(l), Some(r), Some(role), Some(rate)) => {
            if d < 0.0 || l < 0.0 || !d.is_finite() || !l.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "damage and load must be finite and non-negative".into(),
                });
            }
            Ok((StateLabel::new(d, l, r, role), rate))
        }
        _ => Err(Error::Schema(format!(
            "line {lineno}: header needs damage, load, replicate, role and sample_rate"
        ))),
    }
}

pub fn parse_signals_csv(text: &str) -> Result<Vec<Signal>> {
    let mut out = Vec::new();
    let mut current: Option<PendingSection> = None;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with("# signal") {
            if let Some(section) = current.take() {
                section.finish(&mut out)?;
            }
            let (state, sample_rate) = parse_header(line, lineno)?;
            current = Some(PendingSection {
                header_line: lineno,
                header: line.to_string(),
                state,
                sample_rate,
                samples: Vec::new(),
            });
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let section = current.as_mut().ok_or_else(|| {
            Error::Schema(format!(
                "line {lineno}: sample value before any signal header"
            ))
        })?;
        let v: f64 = line.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("cannot parse amplitude '{line}'"),
        })?;
        section.samples.push(v);
    }
    if let Some(section) = current.take() {
        section.finish(&mut out)?;
    }
    for (i, a) in out.iter().enumerate() {
        if out[..i].iter().any(|b| a.state == b.state) {
            return Err(Error::Schema(format!(
                "duplicate signal label damage={} load={} replicate={} role={}",
                a.state.damage_size, a.state.load, a.state.replicate, a.state.role
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_config() -> SimulationConfig {
        SimulationConfig {
            noise_floor_std: 0.0,
            n_replicates: 2,
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn zero_amplitude_burst_is_silent() {
        let s = tone_burst(250e3, 5, 0.0, 24e6, 1000).unwrap();
        assert!(s.samples().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn burst_occupies_expected_prefix() {
        let s = tone_burst(250e3, 5, 1.0, 24e6, 2500).unwrap();
        // 5 cycles * 24e6 / 250e3 = 480 samples
        assert_eq!(burst_length(250e3, 5, 24e6), 480);
        assert!(s.samples()[480..].iter().all(|v| *v == 0.0));
        assert!(s.samples()[1..479].iter().any(|v| v.abs() > 0.9));
    }

    #[test]
    fn burst_energy_matches_direct_sum() {
        let (fc, fs, amp) = (250e3, 24e6, 1.7);
        let s = tone_burst(fc, 5, amp, fs, 600).unwrap();
        let len = 480;
        let mut expected = 0.0;
        for t in 0..len {
            let w = 0.54 - 0.46 * (2.0 * PI * t as f64 / (len as f64 - 1.0)).cos();
            let sn = (2.0 * PI * fc * t as f64 / fs).sin();
            expected += amp * amp * w * w * sn * sn;
        }
        assert!((s.energy() - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn burst_rejects_bad_arguments() {
        assert!(tone_burst(0.0, 5, 1.0, 24e6, 1000).is_err());
        assert!(tone_burst(250e3, 5, 1.0, 400e3, 1000).is_err());
        assert!(tone_burst(250e3, 5, 1.0, 24e6, 479).is_err());
    }

    #[test]
    fn noiseless_healthy_signal_is_delayed_burst() {
        let cfg = quiet_config();
        let sigs = simulate_dataset(&cfg, &[0.0], &[0.0]).unwrap();
        let burst = tone_burst(250e3, 5, 1.0, 24e6, 2500).unwrap();
        let shift = (cfg.path_delay * cfg.sample_rate).round() as usize;
        assert_eq!(shift, 240);
        let s = sigs[0].samples();
        for t in 0..2500 {
            let expected = if t >= shift {
                burst.samples()[t - shift]
            } else {
                0.0
            };
            assert_eq!(s[t], expected);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = SimulationConfig::default();
        let a = simulate_dataset(&cfg, &[0.0, 1.0], &[0.0, 5.0]).unwrap();
        let b = simulate_dataset(&cfg, &[0.0, 1.0], &[0.0, 5.0]).unwrap();
        assert_eq!(a, b);
        let other = SimulationConfig { rng_seed: 7, ..cfg };
        let c = simulate_dataset(&other, &[0.0, 1.0], &[0.0, 5.0]).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn attenuation_ratio_is_exponential() {
        let cfg = quiet_config();
        let sigs = simulate_dataset(&cfg, &[0.0, 2.5], &[0.0]).unwrap();
        let ratio = sigs[2].peak_amplitude() / sigs[0].peak_amplitude();
        let expected = (-cfg.damage_attenuation_coeff * 2.5_f64).exp();
        assert!((ratio - expected).abs() < 1e-12);
    }

    #[test]
    fn peak_amplitude_strictly_decreases_with_damage() {
        let cfg = SimulationConfig {
            n_replicates: 1,
            ..quiet_config()
        };
        let grid = [0.0, 0.5, 1.0, 2.0, 3.0, 4.0];
        let sigs = simulate_dataset(&cfg, &grid, &[0.0]).unwrap();
        let peaks: Vec<f64> = sigs.iter().map(Signal::peak_amplitude).collect();
        assert!(peaks.windows(2).all(|w| w[1] < w[0]), "{peaks:?}");
    }

    #[test]
    fn replicate_noise_std_matches_configuration() {
        let cfg = SimulationConfig {
            noise_floor_std: 0.01,
            heteroscedastic_noise_slope: 0.02,
            n_replicates: 200,
            n_samples: 600,
            ..SimulationConfig::default()
        };
        let damage = 1.5;
        let sigs = simulate_dataset(&cfg, &[damage], &[0.0]).unwrap();
        let expected = cfg.noise_std(damage);
        // standard error of a sample std is about sigma / sqrt(2(n-1))
        let se = expected / (2.0 * 199.0_f64).sqrt();
        for idx in [5usize, 300, 599] {
            let xs: Vec<f64> = sigs.iter().map(|s| s.samples()[idx]).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
            assert!(
                (var.sqrt() - expected).abs() <= 3.0 * se,
                "index {idx}: {} vs {expected}",
                var.sqrt()
            );
        }
    }

    #[test]
    fn crosstalk_blanking_zeroes_prefix() {
        let cfg = SimulationConfig {
            crosstalk_blank_samples: 300,
            ..SimulationConfig::default()
        };
        let sigs = simulate_dataset(&cfg, &[0.0], &[0.0]).unwrap();
        assert!(sigs[0].samples()[..300].iter().all(|v| *v == 0.0));
        assert!(sigs[0].samples()[300] != 0.0);
    }

    #[test]
    fn simulation_rejects_bad_grids() {
        let cfg = SimulationConfig::default();
        assert!(simulate_dataset(&cfg, &[], &[0.0]).is_err());
        assert!(simulate_dataset(&cfg, &[0.0], &[]).is_err());
        assert!(simulate_dataset(&cfg, &[1.0, 0.5], &[0.0]).is_err());
        assert!(simulate_dataset(&cfg, &[-1.0], &[0.0]).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let cfg = SimulationConfig {
            n_samples: 700,
            n_replicates: 1,
            ..SimulationConfig::default()
        };
        let sigs = simulate_dataset(&cfg, &[0.0, 1.0, 2.0], &[0.0]).unwrap();
        let text = format_signals_csv(&sigs, &["seed=42".to_string()]);
        let back = parse_signals_csv(&text).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back, sigs);
    }

    #[test]
    fn csv_empty_section_names_header() {
        let text = "# signal damage=1 load=0 replicate=0 role=test sample_rate=24000000\n\n\
                    # signal damage=2 load=0 replicate=0 role=test sample_rate=24000000\n0.5\n";
        let err = parse_signals_csv(text).unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 1);
                assert!(msg.contains("damage=1"), "{msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn csv_schema_errors() {
        let unknown = "# signal damage=1 load=0 replicate=0 role=test rate=1\n0.5\n";
        assert!(matches!(parse_signals_csv(unknown), Err(Error::Schema(_))));
        let orphan = "0.5\n";
        assert!(matches!(parse_signals_csv(orphan), Err(Error::Schema(_))));
        let bad_value = "# signal damage=1 load=0 replicate=0 role=test sample_rate=1\nabc\n";
        assert!(matches!(
            parse_signals_csv(bad_value),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
