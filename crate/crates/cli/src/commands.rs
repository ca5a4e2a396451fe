//! Subcommand implementations. Each evaluates its points in parallel and emits
//! rows in configuration order.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use qei_core::detection::closed_form::{cross_check, CrossCheckReport};
use qei_core::detection::DetectorModel;
use qei_core::estimation::{
    average_angular_error, crb_angular_uncertainty, fisher_value, AngleTrials, AngularErrorSummary,
    RAD_TO_MICROARCSEC,
};
use qei_core::source::SourceKind;

use crate::cache::TableCache;
use crate::config::{Config, LoadedConfig};
use crate::error::CliError;
use crate::scenario::Scenario;

/// Largest tolerated closed-form versus engine deviation.
pub const ORACLE_TOLERANCE: f64 = 1e-9;

/// Size of the coefficient error planted by `--inject-fault`.
pub const INJECTED_FAULT: f64 = 1e-6;

pub const MLE_SCHEMA: &str = "qei.mle-sim/v1";
pub const ORACLE_SCHEMA: &str = "qei.oracle-check/v1";

pub struct Context {
    pub config: LoadedConfig,
    pub cache: TableCache,
    pub out: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

impl Context {
    fn cfg(&self) -> &Config {
        &self.config.config
    }

    fn write_csv(
        &self,
        command: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> Result<(), CliError> {
        let mut sink: Box<dyn Write> = match &self.out {
            Some(path) => Box::new(io::BufWriter::new(fs::File::create(path)?)),
            None => Box::new(io::stdout().lock()),
        };
        writeln!(sink, "# qei {command} {}", env!("CARGO_PKG_VERSION"))?;
        for line in self.config.resolved_toml().lines() {
            writeln!(sink, "# {line}")?;
        }
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    fn write_json<T: Serialize>(&self, value: &T) -> Result<(), CliError> {
        if let Some(path) = &self.json {
            let text =
                serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
            fs::write(path, text + "\n")?;
        }
        Ok(())
    }

    fn positive_baselines(&self, command: &str) -> Result<(), CliError> {
        let cfg = self.cfg();
        if let Some(l) = cfg.baselines_km.iter().find(|&&l| l <= 0.0) {
            return Err(self.config.error(
                "baselines_km",
                format!("{command} needs positive baselines, got {l}"),
            ));
        }
        Ok(())
    }

    /// Angle trials need the full phase period inside `[0, lambda / L]`.
    fn resolvable_baselines(&self, command: &str) -> Result<(), CliError> {
        self.positive_baselines(command)?;
        let cfg = self.cfg();
        if let Some(l) = cfg
            .baselines_km
            .iter()
            .find(|&&l| cfg.wavelength_m() > l * 1e3)
        {
            return Err(self.config.error(
                "baselines_km",
                format!("baseline {l} km is shorter than the wavelength"),
            ));
        }
        Ok(())
    }
}

fn sci(x: f64) -> String {
    format!("{x:e}")
}

fn mu_cell(mu: Option<f64>) -> String {
    mu.map(sci).unwrap_or_default()
}

fn grid<A: Copy + Send + Sync, B: Copy + Send + Sync>(a: &[A], b: &[B]) -> Vec<(A, B)> {
    a.iter()
        .flat_map(|&x| b.iter().map(move |&y| (x, y)))
        .collect()
}

fn first_detector(cfg: &Config) -> Result<DetectorModel, CliError> {
    Ok(DetectorModel::new(cfg.efficiencies[0], cfg.dark_counts[0])?)
}

/// Fisher information and its Cramér–Rao angular bound per baseline and source.
pub fn fisher_sweep(ctx: &Context) -> Result<(), CliError> {
    ctx.positive_baselines("fisher-sweep")?;
    let cfg = ctx.cfg();
    let mut kinds = cfg.sources.clone();
    if !kinds.contains(&SourceKind::SinglePhoton) {
        kinds.push(SourceKind::SinglePhoton);
    }
    let detector = first_detector(cfg)?;
    let windows = cfg.windows[0];
    let rows = grid(&cfg.baselines_km, &kinds)
        .into_par_iter()
        .map(|(l, kind)| -> Result<Vec<String>, CliError> {
            let s = Scenario::resolve(cfg, kind, l, detector)?;
            let table = ctx.cache.table(&s.spec())?;
            let fisher = fisher_value(&table, cfg.phi);
            let bound = crb_angular_uncertainty(fisher, windows, cfg.wavelength_m(), l * 1e3)?;
            Ok(vec![
                l.to_string(),
                sci(s.eta),
                kind.name().to_string(),
                s.modes.to_string(),
                mu_cell(s.mu),
                sci(fisher),
                sci(bound.microarcsec),
            ])
        })
        .collect::<Result<Vec<_>, _>>()?;
    ctx.write_csv(
        "fisher-sweep",
        &[
            "L_km",
            "eta",
            "source_kind",
            "N",
            "mu_used",
            "fisher",
            "crb_delta_theta_uas",
        ],
        &rows,
    )
}

/// Optimal intensity per baseline for every tunable source.
pub fn mu_opt(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.cfg();
    let kinds: Vec<SourceKind> = cfg
        .sources
        .iter()
        .copied()
        .filter(|k| k.has_intensity())
        .collect();
    if kinds.is_empty() {
        return Err(ctx
            .config
            .error("sources", "mu-opt needs a source with tunable intensity"));
    }
    let rows = grid(&cfg.baselines_km, &kinds)
        .into_par_iter()
        .map(|(l, kind)| -> Result<Vec<String>, CliError> {
            let s = Scenario::resolve(
                &Config {
                    mu: crate::config::MuSetting::Auto,
                    ..cfg.clone()
                },
                kind,
                l,
                DetectorModel::IDEAL,
            )?;
            let mu = s.mu.expect("tunable source has an intensity");
            Ok(vec![
                l.to_string(),
                sci(s.eta),
                kind.name().to_string(),
                sci(mu),
                sci(kind.with_mu(mu).p1(s.eta)),
                s.mu_at_boundary.to_string(),
            ])
        })
        .collect::<Result<Vec<_>, _>>()?;
    ctx.write_csv(
        "mu-opt",
        &[
            "L_km",
            "eta",
            "source_kind",
            "mu_star",
            "P1_at_star",
            "at_boundary",
        ],
        &rows,
    )
}

#[derive(Serialize)]
struct MlePoint {
    scenario: Scenario,
    windows: u64,
    seed: u64,
    mean_abs_error_rad: f64,
    crb_rad: f64,
    summary: AngularErrorSummary,
}

#[derive(Serialize)]
struct MleReport<'a> {
    schema: &'static str,
    config: &'a Config,
    points: Vec<MlePoint>,
}

fn angle_trials(cfg: &Config, l: f64, windows: u64) -> AngleTrials {
    AngleTrials {
        wavelength_m: cfg.wavelength_m(),
        baseline_m: l * 1e3,
        windows,
        trials: cfg.trials,
        seed: cfg.seed,
    }
}

/// Monte Carlo maximum-likelihood estimation against the Cramér–Rao bound.
pub fn mle_sim(ctx: &Context) -> Result<(), CliError> {
    ctx.resolvable_baselines("mle-sim")?;
    let cfg = ctx.cfg();
    let detector = first_detector(cfg)?;
    let mut points = Vec::new();
    for &l in &cfg.baselines_km {
        for windows in cfg.window_counts() {
            for &kind in &cfg.sources {
                let scenario = Scenario::resolve(cfg, kind, l, detector)?;
                let table = ctx.cache.table(&scenario.spec())?;
                // Every point reuses the same seed so sweeps share random numbers.
                let summary = average_angular_error(&table, &angle_trials(cfg, l, windows))?;
                points.push(MlePoint {
                    scenario,
                    windows,
                    seed: cfg.seed,
                    mean_abs_error_rad: summary.error.mean,
                    crb_rad: summary.crb,
                    summary,
                });
            }
        }
    }
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.scenario.baseline_km.to_string(),
                p.windows.to_string(),
                p.scenario.kind.name().to_string(),
                sci(p.mean_abs_error_rad * RAD_TO_MICROARCSEC),
                sci(p.crb_rad * RAD_TO_MICROARCSEC),
                sci(p.summary.ratio),
                p.summary.trials.len().to_string(),
                p.seed.to_string(),
                p.summary.degenerate_trials.to_string(),
            ]
        })
        .collect();
    ctx.write_csv(
        "mle-sim",
        &[
            "L_km",
            "N_t",
            "source_kind",
            "mean_abs_error_uas",
            "crb_uas",
            "ratio",
            "trials",
            "seed",
            "degenerate_trials",
        ],
        &rows,
    )?;
    ctx.write_json(&MleReport {
        schema: MLE_SCHEMA,
        config: cfg,
        points,
    })
}

#[derive(Serialize)]
struct OracleCase {
    scenario: Scenario,
    injected_fault: bool,
    passed: bool,
    report: CrossCheckReport,
}

#[derive(Serialize)]
struct OracleReport<'a> {
    schema: &'static str,
    config: &'a Config,
    tolerance: f64,
    cases: Vec<OracleCase>,
}

/// Cross-checks engine coefficients against the closed forms on every outcome
/// up to the configured photon number. Fails with exit code 3 on any deviation
/// above [`ORACLE_TOLERANCE`].
pub fn oracle_check(ctx: &Context, inject_fault: bool) -> Result<(), CliError> {
    let cfg = ctx.cfg();
    let photons = cfg.oracle_max_photons;
    let cases = grid(&cfg.baselines_km, &cfg.sources)
        .into_par_iter()
        .map(|(l, kind)| -> Result<OracleCase, CliError> {
            let mut scenario = Scenario::resolve(cfg, kind, l, DetectorModel::IDEAL)?;
            // Photon number is conserved after the channel, so capping the
            // cutoff at the checked photon number leaves those outcomes exact.
            scenario.options.m_max = Some(photons);
            scenario.options.tail_ceiling = 1.0;
            let spec = scenario.spec();
            let mut engine = spec.build_virtual()?;
            if inject_fault {
                if let Some(c) = engine
                    .entries
                    .values_mut()
                    .max_by(|a, b| a.amplitude().total_cmp(&b.amplitude()))
                {
                    c.k1 += INJECTED_FAULT;
                }
            }
            let report = cross_check(&spec, &engine, photons)?;
            Ok(OracleCase {
                scenario,
                injected_fault: inject_fault,
                passed: report.passed(ORACLE_TOLERANCE),
                report,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<Vec<String>> = cases
        .iter()
        .map(|c| {
            vec![
                c.scenario.baseline_km.to_string(),
                sci(c.scenario.eta),
                c.scenario.kind.name().to_string(),
                c.scenario.modes.to_string(),
                photons.to_string(),
                c.report.outcomes_checked.to_string(),
                sci(c.report.max_deviation),
                sci(c.report.max_two_click_deviation),
                if c.passed { "pass" } else { "fail" }.to_string(),
            ]
        })
        .collect();
    ctx.write_csv(
        "oracle-check",
        &[
            "L_km",
            "eta",
            "source_kind",
            "N",
            "max_photons",
            "outcomes_checked",
            "max_deviation",
            "max_two_click_deviation",
            "status",
        ],
        &rows,
    )?;
    let failed = cases.iter().filter(|c| !c.passed).count();
    let total = cases.len();
    ctx.write_json(&OracleReport {
        schema: ORACLE_SCHEMA,
        config: cfg,
        tolerance: ORACLE_TOLERANCE,
        cases,
    })?;
    if failed > 0 {
        return Err(CliError::Check(format!(
            "{failed} of {total} oracle cases deviate by more than {ORACLE_TOLERANCE:e}"
        )));
    }
    Ok(())
}

/// Mean angular error over detector efficiency and dark-count grids.
pub fn detector_sweep(ctx: &Context) -> Result<(), CliError> {
    ctx.resolvable_baselines("detector-sweep")?;
    let cfg = ctx.cfg();
    let [kind] = cfg.sources[..] else {
        return Err(ctx
            .config
            .error("sources", "detector-sweep takes exactly one source kind"));
    };
    let mut rows = Vec::new();
    for &l in &cfg.baselines_km {
        for (xi, p_d) in grid(&cfg.efficiencies, &cfg.dark_counts) {
            let scenario = Scenario::resolve(cfg, kind, l, DetectorModel::new(xi, p_d)?)?;
            let table = ctx.cache.table(&scenario.spec())?;
            for windows in cfg.window_counts() {
                let summary = average_angular_error(&table, &angle_trials(cfg, l, windows))?;
                rows.push(vec![
                    l.to_string(),
                    xi.to_string(),
                    p_d.to_string(),
                    windows.to_string(),
                    sci(summary.error.mean * RAD_TO_MICROARCSEC),
                    sci(summary.error.se * RAD_TO_MICROARCSEC),
                ]);
            }
        }
    }
    ctx.write_csv(
        "detector-sweep",
        &[
            "L_km",
            "xi",
            "p_d",
            "N_t",
            "mean_delta_theta_uas",
            "mean_delta_theta_se_uas",
        ],
        &rows,
    )
}
