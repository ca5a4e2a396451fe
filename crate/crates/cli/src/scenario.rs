//! A single fully resolved evaluation point.

use serde::Serialize;

use qei_core::detection::{DetectorModel, TableOptions, TableSpec};
use qei_core::estimation::fisher_value;
use qei_core::source::{
    eta_from_baseline, optimize_mu, ChannelModel, MuObjective, MuOptimum, MuSearch, SourceKind,
};

use crate::config::{Config, MuObjectiveKind, MuSetting};
use crate::error::CliError;

/// Search range for the Fisher-information objective, which needs a table
/// build per evaluation.
const FISHER_MU_RANGE: (f64, f64) = (1e-2, 1e2);

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario {
    pub kind: SourceKind,
    /// Resolved intensity; `None` for the ideal single-photon source.
    pub mu: Option<f64>,
    /// The automatic intensity sits on the edge of its search range.
    pub mu_at_boundary: bool,
    pub modes: usize,
    pub baseline_km: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub detector: DetectorModel,
    pub options: TableOptions,
}

impl Scenario {
    pub fn resolve(
        cfg: &Config,
        kind: SourceKind,
        baseline_km: f64,
        detector: DetectorModel,
    ) -> Result<Self, CliError> {
        let eta = eta_from_baseline(&ChannelModel::new(cfg.attenuation_db_per_km, baseline_km)?);
        let defaults = TableOptions::default();
        let mut scenario = Self {
            kind,
            mu: None,
            mu_at_boundary: false,
            modes: cfg.modes,
            baseline_km,
            eta,
            epsilon: cfg.epsilon,
            detector,
            options: TableOptions {
                m_max: cfg.m_max,
                tail_ceiling: cfg.tail_ceiling.unwrap_or(defaults.tail_ceiling),
                ..defaults
            },
        };
        if kind.has_intensity() {
            let (mu, at_boundary) = match cfg.mu {
                MuSetting::Fixed(mu) => (mu, false),
                MuSetting::Auto => {
                    let opt = scenario.optimal_mu(cfg.mu_objective, cfg.phi)?;
                    (opt.mu, opt.at_boundary)
                }
            };
            scenario.mu = Some(mu);
            scenario.mu_at_boundary = at_boundary;
        }
        Ok(scenario)
    }

    /// Maximizes the chosen objective over the source intensity.
    pub fn optimal_mu(&self, objective: MuObjectiveKind, phi: f64) -> Result<MuOptimum, CliError> {
        let opt = match objective {
            MuObjectiveKind::MaxP1 => optimize_mu(
                self.kind,
                self.eta,
                MuObjective::MaxP1,
                &MuSearch::default(),
            )?,
            MuObjectiveKind::MaxFisher => {
                let fisher = |mu: f64| {
                    let trial = Scenario {
                        mu: Some(mu),
                        ..self.clone()
                    };
                    Ok(fisher_value(&trial.spec().build()?, phi))
                };
                let (lo, hi) = FISHER_MU_RANGE;
                optimize_mu(
                    self.kind,
                    self.eta,
                    MuObjective::MaxFisher(&fisher),
                    &MuSearch::coarse(lo, hi),
                )?
            }
        };
        Ok(opt)
    }

    pub fn spec(&self) -> TableSpec {
        let source = self.kind.with_mu(self.mu.unwrap_or(0.0));
        let spec = if self.modes == 2 {
            TableSpec::single_source(source, self.eta, self.epsilon)
        } else {
            TableSpec::multi_source(
                self.modes,
                vec![source; self.modes - 1],
                self.eta,
                self.epsilon,
            )
        };
        spec.with_detector(self.detector).with_options(self.options)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auto_mu_follows_transmittance() {
        let cfg = Config::default();
        // 100 km at 0.2 dB/km leaves 10 dB per arm.
        let s = Scenario::resolve(&cfg, SourceKind::Heralded, 100.0, DetectorModel::IDEAL).unwrap();
        assert!((s.eta - 0.1).abs() < 1e-12);
        assert!((s.mu.unwrap() - 8.0).abs() < 1e-3);
        let s = Scenario::resolve(&cfg, SourceKind::Coherent, 100.0, DetectorModel::IDEAL).unwrap();
        assert!((s.mu.unwrap() * s.eta - 1.0).abs() < 1e-4);
    }

    #[test]
    fn single_photon_has_no_intensity() {
        let s = Scenario::resolve(
            &Config::default(),
            SourceKind::SinglePhoton,
            50.0,
            DetectorModel::IDEAL,
        )
        .unwrap();
        assert_eq!(s.mu, None);
        assert_eq!(s.spec().sources.len(), 1);
    }

    #[test]
    fn modes_select_the_circuit() {
        let cfg = Config {
            modes: 3,
            mu: MuSetting::Fixed(0.5),
            ..Config::default()
        };
        let s = Scenario::resolve(&cfg, SourceKind::Heralded, 60.0, DetectorModel::IDEAL).unwrap();
        let spec = s.spec();
        assert_eq!(spec.modes_per_telescope, 3);
        assert_eq!(spec.sources.len(), 2);
        assert!(spec.validate().is_ok());
    }
}
