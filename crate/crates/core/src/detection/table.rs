use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fock::OccupationVector;

use super::TableSpec;

pub const TABLE_SCHEMA: &str = "qei.outcome-table/v1";

/// `P(phi) = k0 + k1 cos(phi) + k2 sin(phi)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OutcomeCoefficients {
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
}

impl OutcomeCoefficients {
    pub fn new(k0: f64, k1: f64, k2: f64) -> Self {
        Self { k0, k1, k2 }
    }

    pub fn probability(&self, phi: f64) -> f64 {
        let (s, c) = phi.sin_cos();
        self.k0 + self.k1 * c + self.k2 * s
    }

    pub fn derivative(&self, phi: f64) -> f64 {
        let (s, c) = phi.sin_cos();
        -self.k1 * s + self.k2 * c
    }

    /// Interference amplitude `sqrt(k1^2 + k2^2)`.
    pub fn amplitude(&self) -> f64 {
        self.k1.hypot(self.k2)
    }

    pub fn is_zero(&self) -> bool {
        self.k0 == 0.0 && self.k1 == 0.0 && self.k2 == 0.0
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        self.k0 += other.k0;
        self.k1 += other.k1;
        self.k2 += other.k2;
    }

    pub(crate) fn add_scaled(&mut self, other: &Self, w: f64) {
        self.k0 += w * other.k0;
        self.k1 += w * other.k1;
        self.k2 += w * other.k2;
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.k0 - other.k0)
            .abs()
            .max((self.k1 - other.k1).abs())
            .max((self.k2 - other.k2).abs())
    }
}

impl Serialize for OutcomeCoefficients {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.k0, self.k1, self.k2].serialize(s)
    }
}

impl<'de> Deserialize<'de> for OutcomeCoefficients {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [k0, k1, k2] = <[f64; 3]>::deserialize(d)?;
        Ok(Self { k0, k1, k2 })
    }
}

/// Click pattern of `2N` threshold detectors in `(a_1..a_N, b_1..b_N)` order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ThresholdOutcome {
    mask: u32,
    detectors: u8,
}

impl ThresholdOutcome {
    pub const MAX_DETECTORS: usize = 32;

    pub fn new(mask: u32, detectors: usize) -> Self {
        debug_assert!(detectors <= Self::MAX_DETECTORS);
        debug_assert!(detectors == 32 || mask >> detectors == 0);
        Self {
            mask,
            detectors: detectors as u8,
        }
    }

    pub fn from_clicks(clicks: &[bool]) -> Self {
        let mask = clicks
            .iter()
            .enumerate()
            .fold(0u32, |m, (i, &c)| if c { m | (1 << i) } else { m });
        Self::new(mask, clicks.len())
    }

    pub fn from_occupation(occ: &OccupationVector) -> Self {
        let mask = occ
            .counts()
            .enumerate()
            .fold(0u32, |m, (i, c)| if c > 0 { m | (1 << i) } else { m });
        Self::new(mask, occ.mode_count())
    }

    pub fn all_mask(detectors: usize) -> u32 {
        if detectors == 32 {
            u32::MAX
        } else {
            (1u32 << detectors) - 1
        }
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    pub fn detectors(&self) -> usize {
        self.detectors as usize
    }

    pub fn clicked(&self, detector: usize) -> bool {
        self.mask & (1 << detector) != 0
    }

    pub fn clicks(&self) -> Vec<bool> {
        (0..self.detectors()).map(|i| self.clicked(i)).collect()
    }

    pub fn click_count(&self) -> usize {
        self.mask.count_ones() as usize
    }
}

impl fmt::Display for ThresholdOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.detectors() {
            f.write_str(if self.clicked(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for ThresholdOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ThresholdOutcome({self})")
    }
}

impl FromStr for ThresholdOutcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() || s.len() > Self::MAX_DETECTORS {
            return Err(Error::Invalid(format!("bad outcome bitstring `{s}`")));
        }
        let clicks = s
            .chars()
            .map(|c| match c {
                '1' | 'Y' => Ok(true),
                '0' | 'N' => Ok(false),
                _ => Err(Error::Invalid(format!("bad outcome bitstring `{s}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_clicks(&clicks))
    }
}

impl Serialize for ThresholdOutcome {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ThresholdOutcome {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Photon-number-resolved ("virtual") outcome table.
#[derive(Clone, Debug, PartialEq)]
pub struct PnrTable {
    pub mode_count: usize,
    pub entries: BTreeMap<OccupationVector, OutcomeCoefficients>,
    pub tail_mass: f64,
}

impl PnrTable {
    pub fn get(&self, occ: &OccupationVector) -> OutcomeCoefficients {
        self.entries.get(occ).copied().unwrap_or_default()
    }

    pub fn probability(&self, occ: &OccupationVector, phi: f64) -> f64 {
        self.get(occ).probability(phi)
    }

    pub fn total(&self, phi: f64) -> f64 {
        self.entries.values().map(|c| c.probability(phi)).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TableMetadata {
    pub fingerprint: String,
    pub tail_mass: f64,
    pub m_max: usize,
    pub spec: Option<TableSpec>,
}

/// Threshold outcome probabilities as affine functions of `(cos phi, sin phi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeTable {
    pub detectors: usize,
    pub entries: BTreeMap<ThresholdOutcome, OutcomeCoefficients>,
    pub metadata: TableMetadata,
}

impl OutcomeTable {
    pub fn tail_mass(&self) -> f64 {
        self.metadata.tail_mass
    }

    pub fn get(&self, outcome: &ThresholdOutcome) -> OutcomeCoefficients {
        self.entries.get(outcome).copied().unwrap_or_default()
    }

    pub fn probability(&self, outcome: &ThresholdOutcome, phi: f64) -> f64 {
        self.get(outcome).probability(phi)
    }

    pub fn outcomes(&self) -> impl Iterator<Item = &ThresholdOutcome> {
        self.entries.keys()
    }

    pub fn total(&self, phi: f64) -> f64 {
        self.entries.values().map(|c| c.probability(phi)).sum()
    }

    /// Largest `|sum P - (1 - tail)|` over an even grid of `points` phases.
    pub fn normalization_error(&self, points: usize) -> f64 {
        (0..points)
            .map(|i| {
                let phi = std::f64::consts::TAU * i as f64 / points as f64;
                (self.total(phi) - (1.0 - self.tail_mass())).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Smallest probability over an even grid of `points` phases.
    pub fn min_probability(&self, points: usize) -> f64 {
        let mut worst = f64::INFINITY;
        for i in 0..points {
            let phi = std::f64::consts::TAU * i as f64 / points as f64;
            for c in self.entries.values() {
                worst = worst.min(c.probability(phi));
            }
        }
        worst
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&TableFile::from(self))
            .map_err(|e| Error::Invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TableFile =
            serde_json::from_str(text).map_err(|e| Error::Invalid(e.to_string()))?;
        if file.schema != TABLE_SCHEMA {
            return Err(Error::Invalid(format!(
                "unsupported table schema `{}`",
                file.schema
            )));
        }
        if file.entries.keys().any(|o| o.detectors() != file.detectors) {
            return Err(Error::Invalid(
                "outcome length does not match detector count".into(),
            ));
        }
        Ok(Self {
            detectors: file.detectors,
            entries: file.entries,
            metadata: TableMetadata {
                fingerprint: file.fingerprint,
                tail_mass: file.tail_mass,
                m_max: file.m_max,
                spec: file.spec,
            },
        })
    }
}

/// On-disk layout: outcome bitstring → `[K0, K1, K2]` plus metadata.
#[derive(Serialize, Deserialize)]
struct TableFile {
    schema: String,
    fingerprint: String,
    detectors: usize,
    tail_mass: f64,
    m_max: usize,
    spec: Option<TableSpec>,
    entries: BTreeMap<ThresholdOutcome, OutcomeCoefficients>,
}

impl From<&OutcomeTable> for TableFile {
    fn from(t: &OutcomeTable) -> Self {
        Self {
            schema: TABLE_SCHEMA.to_string(),
            fingerprint: t.metadata.fingerprint.clone(),
            detectors: t.detectors,
            tail_mass: t.metadata.tail_mass,
            m_max: t.metadata.m_max,
            spec: t.metadata.spec.clone(),
            entries: t.entries.clone(),
        }
    }
}
