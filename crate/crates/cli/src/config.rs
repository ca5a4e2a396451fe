//! Run configuration: a TOML file, command-line overrides and validation.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use qei_core::source::{SourceKind, DEFAULT_ATTENUATION_DB_PER_KM};

use crate::error::CliError;

/// Largest window count that survives the trip through an `f64` unchanged.
const MAX_EXACT_WINDOWS: f64 = 9_007_199_254_740_992.0;

/// Source intensity: fixed, or optimized per transmittance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MuSetting {
    Auto,
    Fixed(f64),
}

impl FromStr for MuSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(MuSetting::Auto);
        }
        s.parse()
            .map(MuSetting::Fixed)
            .map_err(|_| format!("expected a number or \"auto\", got `{s}`"))
    }
}

impl fmt::Display for MuSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MuSetting::Auto => f.write_str("auto"),
            MuSetting::Fixed(mu) => write!(f, "{mu}"),
        }
    }
}

impl Serialize for MuSetting {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            MuSetting::Auto => s.serialize_str("auto"),
            MuSetting::Fixed(mu) => s.serialize_f64(*mu),
        }
    }
}

impl<'de> Deserialize<'de> for MuSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(mu) => Ok(MuSetting::Fixed(mu)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// What `mu = "auto"` maximizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MuObjectiveKind {
    /// Single-photon weight after the channel.
    MaxP1,
    /// Fisher information of the full outcome table at `phi`.
    MaxFisher,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Auxiliary source kinds to evaluate.
    pub sources: Vec<SourceKind>,
    pub mu: MuSetting,
    pub mu_objective: MuObjectiveKind,
    /// Modes per telescope; `N - 1` identical sources feed the circuit.
    pub modes: usize,
    pub baselines_km: Vec<f64>,
    pub attenuation_db_per_km: f64,
    pub wavelength_nm: f64,
    pub epsilon: f64,
    /// Phase at which Fisher information is reported.
    pub phi: f64,
    pub efficiencies: Vec<f64>,
    pub dark_counts: Vec<f64>,
    /// Photon-number cutoff; automatic when absent.
    pub m_max: Option<usize>,
    /// Largest tolerated truncated probability mass.
    pub tail_ceiling: Option<f64>,
    /// Time windows per phase setting.
    pub windows: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Photon-number bound for the oracle cross-check.
    pub oracle_max_photons: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            sources: vec![SourceKind::Heralded, SourceKind::Coherent],
            mu: MuSetting::Auto,
            mu_objective: MuObjectiveKind::MaxP1,
            modes: 2,
            baselines_km: (0..=16).map(|i| 40.0 + 10.0 * i as f64).collect(),
            attenuation_db_per_km: DEFAULT_ATTENUATION_DB_PER_KM,
            wavelength_nm: 1000.0,
            epsilon: 0.02,
            phi: std::f64::consts::FRAC_PI_4,
            efficiencies: vec![1.0],
            dark_counts: vec![0.0],
            m_max: None,
            tail_ceiling: None,
            windows: vec![1e5],
            trials: 200,
            seed: 20_240_917,
            oracle_max_photons: 3,
        }
    }
}

/// Command-line values that replace file values.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// Source kinds, comma separated (coherent, heralded, single-photon).
    #[arg(long, global = true, value_delimiter = ',')]
    pub sources: Option<Vec<SourceKind>>,
    /// Source intensity, a number or "auto".
    #[arg(long, global = true)]
    pub mu: Option<MuSetting>,
    #[arg(long, global = true, value_enum)]
    pub mu_objective: Option<MuObjectiveKind>,
    /// Modes per telescope.
    #[arg(long, global = true)]
    pub modes: Option<usize>,
    /// Baselines in km, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub baselines: Option<Vec<f64>>,
    /// Fiber attenuation in dB/km.
    #[arg(long, global = true)]
    pub attenuation: Option<f64>,
    #[arg(long, global = true)]
    pub wavelength_nm: Option<f64>,
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub phi: Option<f64>,
    /// Detector efficiencies, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub efficiency: Option<Vec<f64>>,
    /// Dark-count probabilities, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub dark_count: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub m_max: Option<usize>,
    #[arg(long, global = true)]
    pub tail_ceiling: Option<f64>,
    /// Windows per phase setting, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub windows: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub oracle_max_photons: Option<usize>,
}

/// A configuration together with where each value came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: Config,
    text: String,
    origin: String,
    overridden: BTreeSet<&'static str>,
}

impl LoadedConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let (text, origin) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                (text, p.display().to_string())
            }
            None => (String::new(), "<defaults>".to_string()),
        };
        Self::parse(text, origin, overrides)
    }

    pub fn parse(text: String, origin: String, overrides: &Overrides) -> Result<Self, CliError> {
        let config: Config =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
        let mut loaded = Self {
            config,
            text,
            origin,
            overridden: BTreeSet::new(),
        };
        loaded.apply(overrides);
        loaded.validate()?;
        Ok(loaded)
    }

    fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($field:ident, $key:literal, $value:expr) => {
                if let Some(v) = $value {
                    self.config.$field = v;
                    self.overridden.insert($key);
                }
            };
        }
        set!(sources, "sources", o.sources.clone());
        set!(mu, "mu", o.mu);
        set!(mu_objective, "mu_objective", o.mu_objective);
        set!(modes, "modes", o.modes);
        set!(baselines_km, "baselines_km", o.baselines.clone());
        set!(
            attenuation_db_per_km,
            "attenuation_db_per_km",
            o.attenuation
        );
        set!(wavelength_nm, "wavelength_nm", o.wavelength_nm);
        set!(epsilon, "epsilon", o.epsilon);
        set!(phi, "phi", o.phi);
        set!(efficiencies, "efficiencies", o.efficiency.clone());
        set!(dark_counts, "dark_counts", o.dark_count.clone());
        set!(m_max, "m_max", o.m_max.map(Some));
        set!(tail_ceiling, "tail_ceiling", o.tail_ceiling.map(Some));
        set!(windows, "windows", o.windows.clone());
        set!(trials, "trials", o.trials);
        set!(seed, "seed", o.seed);
        set!(
            oracle_max_photons,
            "oracle_max_photons",
            o.oracle_max_photons
        );
    }

    /// Error for `key`, pointing at its line in the file or at the flag that set it.
    pub fn error(&self, key: &'static str, message: impl fmt::Display) -> CliError {
        let location = if self.overridden.contains(key) {
            format!("command line ({key})")
        } else {
            match line_of(&self.text, key) {
                Some(line) => format!("{}:{line}", self.origin),
                None => format!("{} (default {key})", self.origin),
            }
        };
        CliError::Config(format!("{location}: {key}: {message}"))
    }

    fn validate(&self) -> Result<(), CliError> {
        let c = &self.config;
        let probability = |v: f64| (0.0..=1.0).contains(&v);
        if c.sources.is_empty() {
            return Err(self.error("sources", "at least one source kind is required"));
        }
        if let MuSetting::Fixed(mu) = c.mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(self.error("mu", format!("{mu} must be positive and finite")));
            }
        }
        if !(2..=16).contains(&c.modes) {
            return Err(self.error("modes", format!("{} is outside 2..=16", c.modes)));
        }
        if c.baselines_km.is_empty() {
            return Err(self.error("baselines_km", "at least one baseline is required"));
        }
        if let Some(&l) = c
            .baselines_km
            .iter()
            .find(|l| !(**l >= 0.0 && l.is_finite()))
        {
            return Err(self.error(
                "baselines_km",
                format!("{l} must be a finite non-negative length"),
            ));
        }
        if !(c.attenuation_db_per_km >= 0.0 && c.attenuation_db_per_km.is_finite()) {
            return Err(self.error("attenuation_db_per_km", "must be finite and non-negative"));
        }
        if !(c.wavelength_nm > 0.0 && c.wavelength_nm.is_finite()) {
            return Err(self.error("wavelength_nm", "must be positive and finite"));
        }
        if !probability(c.epsilon) {
            return Err(self.error("epsilon", format!("{} is outside [0, 1]", c.epsilon)));
        }
        if !c.phi.is_finite() {
            return Err(self.error("phi", "must be finite"));
        }
        if c.efficiencies.is_empty() || c.efficiencies.iter().any(|&x| !(x > 0.0 && x <= 1.0)) {
            return Err(self.error("efficiencies", "each efficiency must lie in (0, 1]"));
        }
        if c.dark_counts.is_empty() || c.dark_counts.iter().any(|&p| !probability(p)) {
            return Err(self.error(
                "dark_counts",
                "each dark-count probability must lie in [0, 1]",
            ));
        }
        if c.m_max == Some(0) {
            return Err(self.error("m_max", "must be at least 1"));
        }
        if let Some(t) = c.tail_ceiling {
            if !probability(t) {
                return Err(self.error("tail_ceiling", format!("{t} is outside [0, 1]")));
            }
        }
        if c.windows.is_empty()
            || c.windows
                .iter()
                .any(|&w| !(w >= 1.0 && w.fract() == 0.0 && w <= MAX_EXACT_WINDOWS))
        {
            return Err(self.error("windows", "each window count must be a positive integer"));
        }
        if c.trials == 0 {
            return Err(self.error("trials", "must be at least 1"));
        }
        if c.oracle_max_photons == 0 {
            return Err(self.error("oracle_max_photons", "must be at least 1"));
        }
        Ok(())
    }

    /// The resolved configuration as TOML, for embedding in outputs.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(&self.config).expect("configuration is serializable")
    }
}

impl Config {
    pub fn wavelength_m(&self) -> f64 {
        self.wavelength_nm * 1e-9
    }

    pub fn window_counts(&self) -> Vec<u64> {
        self.windows.iter().map(|&w| w as u64).collect()
    }
}

/// 1-based line on which `key` is assigned at the start of a line.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|line| {
            let t = line.trim_start();
            t.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<LoadedConfig, CliError> {
        LoadedConfig::parse(text.to_string(), "run.toml".into(), &Overrides::default())
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse("").unwrap().config, Config::default());
    }

    #[test]
    fn mu_accepts_numbers_and_auto() {
        assert_eq!(parse("mu = 8").unwrap().config.mu, MuSetting::Fixed(8.0));
        assert_eq!(parse("mu = 0.5").unwrap().config.mu, MuSetting::Fixed(0.5));
        assert_eq!(parse("mu = \"auto\"").unwrap().config.mu, MuSetting::Auto);
        assert!(parse("mu = \"lots\"").is_err());
    }

    #[test]
    fn validation_error_names_the_line() {
        let err = parse("seed = 3\n\nepsilon = 1.5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("run.toml:3"), "{msg}");
        assert!(msg.contains("epsilon"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn syntax_and_unknown_keys_are_rejected() {
        let msg = parse("epsilon = 0.1\nbogus = 2\n").unwrap_err().to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(parse("epsilon = = 1").is_err());
    }

    #[test]
    fn overrides_win_and_are_attributed() {
        let o = Overrides {
            epsilon: Some(2.0),
            ..Overrides::default()
        };
        let msg = LoadedConfig::parse("epsilon = 0.1".into(), "run.toml".into(), &o)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("command line"), "{msg}");

        let o = Overrides {
            seed: Some(9),
            ..Overrides::default()
        };
        let c = LoadedConfig::parse("seed = 1".into(), "run.toml".into(), &o).unwrap();
        assert_eq!(c.config.seed, 9);
    }

    #[test]
    fn windows_must_be_integers() {
        assert!(parse("windows = [1e4, 2.5]").is_err());
        assert_eq!(
            parse("windows = [1e4, 100]")
                .unwrap()
                .config
                .window_counts(),
            [10_000, 100]
        );
    }

    #[test]
    fn resolved_toml_round_trips() {
        let c = parse("mu = 3\nsources = [\"coherent\"]\nm_max = 7").unwrap();
        let again = parse(&c.resolved_toml()).unwrap();
        assert_eq!(again.config, c.config);
    }

    #[test]
    fn key_lookup_ignores_prefixes() {
        let text = "m_max_extra = 1\n  m_max = 4\n";
        assert_eq!(line_of(text, "m_max"), Some(2));
        assert_eq!(line_of(text, "seed"), None);
    }
}
