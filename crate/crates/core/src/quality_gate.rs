//! Quality-based score rejection.
//!
//! The quality of a comparison is the worse of its two samples. Fingerprint
//! scores below the group threshold are replaced by the access's best-quality
//! fingerprint score; when all three fall below it the fingerprint modality is
//! dropped. A face score below its threshold drops the face modality.
//! Thresholds are chosen per device group by sweeping a quality-quantile grid
//! for the lowest EER of the gated modality score on training data.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    Access, ChannelId, Dataset, DeviceClass, Label, Modality, ModalitySet, ScoreRecord,
};
use crate::error::{Error, Result};
use crate::metrics;

/// Quality threshold per device group; a missing entry disables the gate for
/// that group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateThresholds {
    /// 1-based face quality measure used for gating.
    #[serde(default = "default_face_index")]
    pub face_quality_index: usize,
    #[serde(default)]
    pub thresholds: BTreeMap<DeviceClass, f64>,
}

fn default_face_index() -> usize {
    1
}

impl Default for GateThresholds {
    fn default() -> Self {
        GateThresholds {
            face_quality_index: default_face_index(),
            thresholds: BTreeMap::new(),
        }
    }
}

impl GateThresholds {
    pub fn with(mut self, group: DeviceClass, tau: f64) -> Self {
        self.thresholds.insert(group, tau);
        self
    }

    pub fn get(&self, group: DeviceClass) -> Option<f64> {
        self.thresholds.get(&group).copied()
    }

    pub fn is_disabled(&self) -> bool {
        self.thresholds.is_empty()
    }

    /// Zero-based index of the quality measure gated for a channel.
    pub fn quality_slot(&self, channel: ChannelId) -> usize {
        match channel.modality() {
            Modality::Face => self.face_quality_index.saturating_sub(1),
            Modality::Fingerprint => 0,
        }
    }

    fn record_quality(&self, r: &ScoreRecord) -> Option<f64> {
        r.quality_at(self.quality_slot(r.channel))
    }
}

pub fn score_quality(q_t: f64, q_q: f64) -> f64 {
    q_t.min(q_q)
}

/// Device condition of each modality of one access, as resolved by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DeviceAssignment {
    pub face: Option<DeviceClass>,
    pub fingerprint: Option<DeviceClass>,
}

impl DeviceAssignment {
    pub fn from_truth(a: &Access) -> Self {
        DeviceAssignment {
            face: a.face_device(),
            fingerprint: a.fingerprint_device(),
        }
    }

    pub fn get(&self, m: Modality) -> Option<DeviceClass> {
        match m {
            Modality::Face => self.face,
            Modality::Fingerprint => self.fingerprint,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome {
    pub access: Access,
    /// Modalities that survive gating.
    pub modalities: ModalitySet,
    /// `(rejected, source)` fingerprint channel pairs whose score was replaced.
    pub replaced: Vec<(ChannelId, ChannelId)>,
    /// Every active modality was rejected; the pipeline emits its fallback score.
    pub all_rejected: bool,
}

/// Gates one access. `active` lists the modalities still in play after
/// missing-data handling; records with a missing quality are never rejected.
pub fn apply_gate(
    a: &Access,
    t: &GateThresholds,
    devices: DeviceAssignment,
    active: ModalitySet,
) -> GateOutcome {
    let mut access = a.clone();
    let mut modalities = active;
    let mut replaced = Vec::new();

    let threshold = |m: Modality| devices.get(m).and_then(|d| t.get(d));
    let below = |r: &ScoreRecord, tau: f64| t.record_quality(r).is_some_and(|q| q < tau);

    if active.face {
        if let (Some(tau), Some(face)) = (threshold(Modality::Face), access.face()) {
            if below(face, tau) {
                modalities.face = false;
            }
        }
    }

    if active.fingerprint {
        if let Some(tau) = threshold(Modality::Fingerprint) {
            let scored: Vec<&ScoreRecord> = access
                .fingerprints()
                .filter(|r| r.score.is_some())
                .collect();
            let rejected: Vec<ChannelId> = scored
                .iter()
                .filter(|r| below(r, tau))
                .map(|r| r.channel)
                .collect();
            if !scored.is_empty() && rejected.len() == scored.len() {
                modalities.fingerprint = false;
            } else if !rejected.is_empty() {
                // First record of maximal quality; it cannot be below tau.
                let best = scored
                    .iter()
                    .filter(|r| t.record_quality(r).is_some())
                    .fold(None::<&ScoreRecord>, |best, r| match best {
                        Some(b) if t.record_quality(b) >= t.record_quality(r) => Some(b),
                        _ => Some(r),
                    })
                    .expect("a non-rejected record has a quality");
                let (source, score) = (best.channel, best.score);
                for channel in rejected {
                    if let Some(r) = access.record_mut(channel) {
                        r.score = score;
                    }
                    replaced.push((channel, source));
                }
            }
        }
    }

    GateOutcome {
        access,
        all_rejected: !active.is_empty() && modalities.is_empty(),
        modalities,
        replaced,
    }
}

/// Quantile levels of the default sweep grid: 0%, 5%, ..., 50%.
pub const DEFAULT_QUANTILES: [f64; 11] = [
    0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50,
];

/// Lower empirical quantile: the value at sorted position floor(q n).
/// Gating strictly below it discards exactly the floor(q n) lowest values
/// when they are distinct.
pub fn quantile_grid(values: &[f64], levels: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    levels
        .iter()
        .map(|&q| {
            let k = ((q * v.len() as f64).floor() as usize).min(v.len() - 1);
            v[k]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    /// Accesses whose modality survives gating.
    pub kept: usize,
    /// `None` when gating leaves a class empty.
    pub eer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub group: DeviceClass,
    pub best: f64,
    pub curve: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn best_point(&self) -> &SweepPoint {
        self.curve
            .iter()
            .find(|p| p.threshold == self.best)
            .expect("best threshold is on the grid")
    }
}

fn in_group(a: &Access, group: DeviceClass) -> bool {
    DeviceAssignment::from_truth(a).get(group.modality()) == Some(group)
}

/// `(score, quality, is_target)` for every labeled, scored record of the group.
fn group_samples(train: &Dataset, group: DeviceClass, t: &GateThresholds) -> Vec<(f64, f64, bool)> {
    train
        .accesses
        .iter()
        .filter(|a| in_group(a, group))
        .flat_map(|a| a.records.iter())
        .filter(|r| r.channel.modality() == group.modality() && r.label.is_known())
        .filter_map(|r| Some((r.score?, t.record_quality(r)?, r.label == Label::Target)))
        .collect()
}

/// Modality score of a gated access: the face score, or the sum of the
/// (possibly replaced) fingerprint scores.
fn modality_score(a: &Access, modality: Modality) -> Option<f64> {
    match modality {
        Modality::Face => a.face()?.score,
        Modality::Fingerprint => a.fingerprints().map(|r| r.score).sum(),
    }
}

/// Genuine and impostor modality scores of the group after gating at `tau`.
/// Accesses whose modality is rejected are left out.
fn gated_scores(
    accesses: &[&Access],
    group: DeviceClass,
    tau: f64,
    t: &GateThresholds,
) -> (Vec<f64>, Vec<f64>) {
    let modality = group.modality();
    let gate = GateThresholds {
        face_quality_index: t.face_quality_index,
        thresholds: BTreeMap::from([(group, tau)]),
    };
    let active = ModalitySet {
        face: modality == Modality::Face,
        fingerprint: modality == Modality::Fingerprint,
    };
    let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
    for a in accesses {
        let out = apply_gate(a, &gate, DeviceAssignment::from_truth(a), active);
        if !out.modalities.contains(modality) {
            continue;
        }
        if let Some(s) = modality_score(&out.access, modality) {
            match a.label() {
                Label::Target => genuine.push(s),
                Label::NonTarget => impostor.push(s),
                Label::Unknown => {}
            }
        }
    }
    (genuine, impostor)
}

/// Chooses the group threshold minimizing the EER of the gated modality
/// score on training data. Ties go to the smallest threshold.
///
/// The default grid holds quality quantiles of the group's records.
pub fn sweep_threshold(
    train: &Dataset,
    group: DeviceClass,
    grid: Option<&[f64]>,
    t: &GateThresholds,
) -> Result<SweepResult> {
    let samples = group_samples(train, group, t);
    if samples.is_empty() {
        return Err(Error::insufficient(format!(
            "no labeled training scores for group {group}"
        )));
    }
    let mut grid = match grid {
        Some(g) if !g.is_empty() => g.to_vec(),
        Some(_) => return Err(Error::invalid("empty threshold grid")),
        None => {
            let qualities: Vec<f64> = samples.iter().map(|s| s.1).collect();
            quantile_grid(&qualities, &DEFAULT_QUANTILES)
        }
    };
    grid.sort_by(f64::total_cmp);
    let accesses: Vec<&Access> = train
        .accesses
        .iter()
        .filter(|a| in_group(a, group) && a.label().is_known())
        .collect();

    let curve: Vec<SweepPoint> = grid
        .par_iter()
        .map(|&tau| {
            let (genuine, impostor) = gated_scores(&accesses, group, tau, t);
            SweepPoint {
                threshold: tau,
                kept: genuine.len() + impostor.len(),
                eer: metrics::eer(&genuine, &impostor).ok().map(|e| e.rate),
            }
        })
        .collect();

    let mut best: Option<&SweepPoint> = None;
    for p in &curve {
        if let Some(e) = p.eer {
            if best.is_none_or(|b| e < b.eer.expect("best has an EER")) {
                best = Some(p);
            }
        }
    }
    let best = best
        .ok_or_else(|| {
            Error::insufficient(format!("group {group} lacks genuine or impostor scores"))
        })?
        .threshold;
    Ok(SweepResult { group, best, curve })
}

/// Sweeps every device group that has training data; groups without data stay disabled.
pub fn auto_thresholds(
    train: &Dataset,
    face_quality_index: usize,
) -> Result<(GateThresholds, Vec<SweepResult>)> {
    let mut thresholds = GateThresholds {
        face_quality_index,
        ..GateThresholds::default()
    };
    let mut sweeps = Vec::new();
    for group in DeviceClass::ALL {
        match sweep_threshold(train, group, None, &thresholds) {
            Ok(s) => {
                thresholds.thresholds.insert(group, s.best);
                sweeps.push(s);
            }
            Err(Error::InsufficientData(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((thresholds, sweeps))
}
