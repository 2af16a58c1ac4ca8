//! Calibrated score fusion and the conditional processing pipeline.
//!
//! An access is imputed, assigned a device condition per modality, gated on
//! quality, mapped to log-likelihood-ratios (or tanh-normalized for the
//! baseline rules) and fused. The face contributes one LLR; the three
//! fingerprint scores feed a single three-input calibrator.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{train_calibrator, Calibrator, TrainingConfig};
use crate::datamodel::{
    Access, ChannelId, Dataset, DecisionPolicy, DeviceClass, Finger, Label, MixtureId, Modality,
    ModalitySet,
};
use crate::device_inference::{
    access_face_features, access_fp_features, labeled_features, qda_fit, FeatureSelection,
    QdaModel, Regularization, FP_FEATURES,
};
use crate::error::{Error, Result};
use crate::ingestion::{impute_evaluation, impute_training, FusionDirective};
use crate::metrics;
use crate::normalization::{fit_tanh, rule_fuse, Rule, TanhNormalizer};
use crate::quality_gate::{apply_gate, DeviceAssignment, GateThresholds};

/// Fused score emitted by the LLR rules when nothing is left to fuse.
pub const LLR_FALLBACK: f64 = 0.0;

pub fn fuse_llr_sum(llrs: &[f64]) -> Result<f64> {
    if llrs.is_empty() {
        return Err(Error::invalid("LLR sum over no inputs"));
    }
    Ok(llrs.iter().sum())
}

pub fn fuse_llr_max(llrs: &[f64]) -> Result<f64> {
    if llrs.is_empty() {
        return Err(Error::invalid("LLR max over no inputs"));
    }
    Ok(llrs.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Accept,
    Reject,
}

/// Accept iff the fused score is strictly above the threshold.
pub fn decide(fused: f64, policy: DecisionPolicy) -> Decision {
    if fused > policy.threshold {
        Decision::Accept
    } else {
        Decision::Reject
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceMode {
    /// Use the recorded acquisition device.
    Oracle,
    /// Estimate the device with the QDA models.
    Inferred,
    /// Ignore the device: one calibrator per modality.
    Pooled,
}

impl DeviceMode {
    pub const ALL: [DeviceMode; 3] = [DeviceMode::Oracle, DeviceMode::Inferred, DeviceMode::Pooled];

    pub fn code(self) -> &'static str {
        match self {
            DeviceMode::Oracle => "oracle",
            DeviceMode::Inferred => "inferred",
            DeviceMode::Pooled => "pooled",
        }
    }
}

impl fmt::Display for DeviceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for DeviceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DeviceMode::ALL
            .into_iter()
            .find(|m| m.code() == s)
            .ok_or_else(|| Error::invalid(format!("unknown device mode '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FusionRule {
    #[serde(rename = "llr-sum")]
    LlrSum,
    #[serde(rename = "llr-max")]
    LlrMax,
    #[serde(rename = "mean")]
    TanhMean,
    #[serde(rename = "min")]
    TanhMin,
    #[serde(rename = "max")]
    TanhMax,
}

impl FusionRule {
    pub const ALL: [FusionRule; 5] = [
        FusionRule::LlrSum,
        FusionRule::LlrMax,
        FusionRule::TanhMean,
        FusionRule::TanhMin,
        FusionRule::TanhMax,
    ];

    pub fn code(self) -> &'static str {
        match self {
            FusionRule::LlrSum => "llr-sum",
            FusionRule::LlrMax => "llr-max",
            FusionRule::TanhMean => "mean",
            FusionRule::TanhMin => "min",
            FusionRule::TanhMax => "max",
        }
    }

    pub fn is_llr(self) -> bool {
        matches!(self, FusionRule::LlrSum | FusionRule::LlrMax)
    }

    /// The combination rule of a tanh baseline.
    pub fn baseline(self) -> Option<Rule> {
        match self {
            FusionRule::LlrSum | FusionRule::LlrMax => None,
            FusionRule::TanhMean => Some(Rule::Mean),
            FusionRule::TanhMin => Some(Rule::Min),
            FusionRule::TanhMax => Some(Rule::Max),
        }
    }
}

impl fmt::Display for FusionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for FusionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionRule::ALL
            .into_iter()
            .find(|r| r.code() == s)
            .ok_or_else(|| Error::invalid(format!("unknown fusion rule '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub device_mode: DeviceMode,
    pub fusion_rule: FusionRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateThresholds>,
    /// Fused score when no modality is left.
    pub fallback: f64,
    #[serde(default)]
    pub decision: DecisionPolicy,
    /// One fingerprint calibrator per device instead of a shared one.
    #[serde(default)]
    pub fingerprint_per_device: bool,
}

impl PipelineConfig {
    pub fn new(fusion_rule: FusionRule, device_mode: DeviceMode) -> Self {
        PipelineConfig {
            device_mode,
            fusion_rule,
            gate: None,
            fallback: LLR_FALLBACK,
            decision: DecisionPolicy::default(),
            fingerprint_per_device: false,
        }
    }

    pub fn with_gate(mut self, gate: Option<GateThresholds>) -> Self {
        self.gate = gate;
        self
    }

    /// Takes the fallback score and decision threshold from the training
    /// operating point stored in the models.
    pub fn with_training_fallback(mut self, models: &FusionModels) -> Result<Self> {
        let value = models.fallback(self.fusion_rule, self.device_mode)?;
        self.fallback = value;
        self.decision = DecisionPolicy { threshold: value };
        Ok(self)
    }
}

/// A calibrator for one device condition, or pooled over devices when `device` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<DeviceClass>,
    pub calibrator: Calibrator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerEntry {
    pub channel: ChannelId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<DeviceClass>,
    pub normalizer: TanhNormalizer,
}

/// Training-set EER threshold of a rule, used as its missing-data score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackEntry {
    pub rule: FusionRule,
    pub device_mode: DeviceMode,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default = "FeatureSelection::default_face")]
    pub face_features: FeatureSelection,
    #[serde(default = "FeatureSelection::default_fingerprint")]
    pub fingerprint_features: FeatureSelection,
    #[serde(default)]
    pub regularization: Regularization,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            training: TrainingConfig::default(),
            face_features: FeatureSelection::default_face(),
            fingerprint_features: FeatureSelection::default_fingerprint(),
            regularization: Regularization::default(),
        }
    }
}

/// Everything fitted on the training release.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModels {
    pub face_features: FeatureSelection,
    pub fingerprint_features: FeatureSelection,
    pub face_calibrators: Vec<CalibratorEntry>,
    pub fingerprint_calibrators: Vec<CalibratorEntry>,
    pub normalizers: Vec<NormalizerEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_qda: Option<QdaModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint_qda: Option<QdaModel>,
    /// Gate applied to the training scores, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateThresholds>,
    #[serde(default)]
    pub fallbacks: Vec<FallbackEntry>,
}

fn key_name(device: Option<DeviceClass>) -> String {
    device.map_or_else(|| "pooled".to_string(), |d| d.code().to_string())
}

impl FusionModels {
    pub fn calibrator(
        &self,
        modality: Modality,
        device: Option<DeviceClass>,
    ) -> Result<&Calibrator> {
        let entries = match modality {
            Modality::Face => &self.face_calibrators,
            Modality::Fingerprint => &self.fingerprint_calibrators,
        };
        entries
            .iter()
            .find(|e| e.device == device)
            .map(|e| &e.calibrator)
            .ok_or_else(|| {
                Error::MissingModel(format!(
                    "{} calibrator ({})",
                    modality.code(),
                    key_name(device)
                ))
            })
    }

    pub fn normalizer(
        &self,
        channel: ChannelId,
        device: Option<DeviceClass>,
    ) -> Result<&TanhNormalizer> {
        self.normalizers
            .iter()
            .find(|e| e.channel == channel && e.device == device)
            .map(|e| &e.normalizer)
            .ok_or_else(|| {
                Error::MissingModel(format!("{channel} tanh normalizer ({})", key_name(device)))
            })
    }

    pub fn qda(&self, modality: Modality) -> Result<&QdaModel> {
        match modality {
            Modality::Face => self.face_qda.as_ref(),
            Modality::Fingerprint => self.fingerprint_qda.as_ref(),
        }
        .ok_or_else(|| Error::MissingModel(format!("{} device classifier", modality.code())))
    }

    pub fn fallback(&self, rule: FusionRule, device_mode: DeviceMode) -> Result<f64> {
        if rule.is_llr() {
            return Ok(LLR_FALLBACK);
        }
        self.fallbacks
            .iter()
            .find(|f| f.rule == rule && f.device_mode == device_mode)
            .map(|f| f.value)
            .ok_or_else(|| {
                Error::MissingModel(format!("training threshold for {rule} ({device_mode})"))
            })
    }
}

type Classes<V> = (Vec<V>, Vec<V>);

fn push_labeled<V>(classes: &mut Classes<V>, label: Label, v: V) {
    match label {
        Label::Target => classes.0.push(v),
        Label::NonTarget => classes.1.push(v),
        Label::Unknown => {}
    }
}

/// Fingerprint score vector in finger order; `None` unless all three are present.
fn fingerprint_vector(a: &Access) -> Option<[f64; 3]> {
    let mut v = [0.0; 3];
    for finger in Finger::ALL {
        v[finger.slot()] = a.record(ChannelId::Fingerprint(finger))?.score?;
    }
    Some(v)
}

/// Keys trained for each modality: every device seen, then the pooled model.
fn device_keys(accesses: &[Access], modality: Modality) -> Vec<Option<DeviceClass>> {
    let mut keys: Vec<Option<DeviceClass>> = DeviceClass::ALL
        .into_iter()
        .filter(|d| d.modality() == modality)
        .filter(|d| {
            accesses.iter().any(|a| match modality {
                Modality::Face => a.face_device() == Some(*d),
                Modality::Fingerprint => a.fingerprint_device() == Some(*d),
            })
        })
        .map(Some)
        .collect();
    keys.push(None);
    keys
}

fn modality_device(a: &Access, modality: Modality) -> Option<DeviceClass> {
    match modality {
        Modality::Face => a.face_device(),
        Modality::Fingerprint => a.fingerprint_device(),
    }
}

fn fit_calibrators(
    accesses: &[Access],
    modality: Modality,
    cfg: &TrainingConfig,
) -> Result<Vec<CalibratorEntry>> {
    let mut out = Vec::new();
    for key in device_keys(accesses, modality) {
        let selected = accesses
            .iter()
            .filter(|a| key.is_none() || modality_device(a, modality) == key);
        let calibrator = match modality {
            Modality::Face => {
                let mut classes: Classes<[f64; 1]> = Default::default();
                for a in selected {
                    if let Some(s) = a.face().and_then(|r| r.score) {
                        push_labeled(&mut classes, a.label(), [s]);
                    }
                }
                train_calibrator(&classes.0, &classes.1, cfg)
            }
            Modality::Fingerprint => {
                let mut classes: Classes<[f64; 3]> = Default::default();
                for a in selected {
                    if let Some(v) = fingerprint_vector(a) {
                        push_labeled(&mut classes, a.label(), v);
                    }
                }
                train_calibrator(&classes.0, &classes.1, cfg)
            }
        };
        let calibrator = calibrator.map_err(|e| match e {
            Error::InsufficientData(m) => Error::InsufficientData(format!(
                "{} calibrator ({}): {m}",
                modality.code(),
                key_name(key)
            )),
            other => other,
        })?;
        out.push(CalibratorEntry {
            device: key,
            calibrator,
        });
    }
    Ok(out)
}

fn fit_normalizers(accesses: &[Access]) -> Result<Vec<NormalizerEntry>> {
    let mut out = Vec::new();
    for channel in ChannelId::ALL {
        let modality = channel.modality();
        for key in device_keys(accesses, modality) {
            let genuine: Vec<f64> = accesses
                .iter()
                .filter(|a| a.label() == Label::Target)
                .filter(|a| key.is_none() || modality_device(a, modality) == key)
                .filter_map(|a| a.record(channel)?.score)
                .collect();
            let normalizer = fit_tanh(&genuine)?;
            out.push(NormalizerEntry {
                channel,
                device: key,
                normalizer,
            });
        }
    }
    Ok(out)
}

fn fit_qda(
    accesses: &[Access],
    modality: Modality,
    sel: &FeatureSelection,
    reg: Regularization,
) -> Result<Option<QdaModel>> {
    match qda_fit(&labeled_features(accesses, modality, sel), reg) {
        Ok(m) => Ok(Some(m)),
        Err(Error::InsufficientData(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Applies the gate to training accesses with their recorded devices.
/// Scores of rejected modalities are removed.
fn gate_training(accesses: &[Access], gate: &GateThresholds) -> Vec<Access> {
    accesses
        .iter()
        .map(|a| {
            let out = apply_gate(a, gate, DeviceAssignment::from_truth(a), ModalitySet::BOTH);
            let mut gated = out.access;
            for r in &mut gated.records {
                if !out.modalities.contains(r.channel.modality()) {
                    r.score = None;
                }
            }
            gated
        })
        .collect()
}

/// Fits calibrators, tanh normalizers and device classifiers on training
/// data, then records each baseline rule's training EER threshold.
///
/// With a gate, calibrators and normalizers see the gated training scores so
/// that they match what the gated pipeline feeds them.
pub fn train_models(
    train: &Dataset,
    cfg: &ModelConfig,
    gate: Option<&GateThresholds>,
) -> Result<FusionModels> {
    FeatureSelection::new(
        cfg.face_features.indices().to_vec(),
        Modality::Face.quality_arity(),
    )?;
    FeatureSelection::new(cfg.fingerprint_features.indices().to_vec(), FP_FEATURES)?;

    let ds = impute_training(train)?;
    let accesses = &ds.accesses;
    let gate = gate.filter(|g| !g.is_disabled());
    let gated = gate.map(|g| gate_training(accesses, g));
    let scored = gated.as_deref().unwrap_or(accesses);
    let mut models = FusionModels {
        face_features: cfg.face_features.clone(),
        fingerprint_features: cfg.fingerprint_features.clone(),
        face_calibrators: fit_calibrators(scored, Modality::Face, &cfg.training)?,
        fingerprint_calibrators: fit_calibrators(scored, Modality::Fingerprint, &cfg.training)?,
        normalizers: fit_normalizers(scored)?,
        face_qda: fit_qda(
            accesses,
            Modality::Face,
            &cfg.face_features,
            cfg.regularization,
        )?,
        fingerprint_qda: fit_qda(
            accesses,
            Modality::Fingerprint,
            &cfg.fingerprint_features,
            cfg.regularization,
        )?,
        gate: gate.cloned(),
        fallbacks: Vec::new(),
    };

    let mut fallbacks = Vec::new();
    for rule in FusionRule::ALL.into_iter().filter(|r| !r.is_llr()) {
        for mode in DeviceMode::ALL {
            if mode == DeviceMode::Inferred
                && (models.face_qda.is_none() || models.fingerprint_qda.is_none())
            {
                continue;
            }
            let pipeline = PipelineConfig::new(rule, mode).with_gate(models.gate.clone());
            let outputs = run_batch(accesses, &pipeline, &models)?;
            let (genuine, impostor) = split_by_label(&outputs);
            let value = metrics::eer(&genuine, &impostor)?.threshold;
            fallbacks.push(FallbackEntry {
                rule,
                device_mode: mode,
                value,
            });
        }
    }
    models.fallbacks = fallbacks;
    Ok(models)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub access_id: String,
    pub label: Label,
    pub mixture: Option<MixtureId>,
    pub fused: f64,
    pub decision: Decision,
    pub devices: DeviceAssignment,
    /// Modalities that contributed to the fused score.
    pub modalities: ModalitySet,
    /// One `stage key=value ...` line per pipeline stage.
    pub trail: Vec<String>,
}

fn modality_list(set: ModalitySet) -> &'static str {
    match (set.face, set.fingerprint) {
        (true, true) => "face+fingerprint",
        (true, false) => "face",
        (false, true) => "fingerprint",
        (false, false) => "none",
    }
}

fn device_code(d: Option<DeviceClass>) -> &'static str {
    d.map_or("-", DeviceClass::code)
}

fn resolve_devices(
    a: &Access,
    active: ModalitySet,
    cfg: &PipelineConfig,
    models: &FusionModels,
    trail: &mut Vec<String>,
) -> Result<DeviceAssignment> {
    let truth = DeviceAssignment::from_truth(a);
    let devices = match cfg.device_mode {
        DeviceMode::Pooled => truth,
        DeviceMode::Oracle => {
            for m in [Modality::Face, Modality::Fingerprint] {
                if active.contains(m) && truth.get(m).is_none() {
                    return Err(Error::MissingModel(format!(
                        "recorded {} device of access {}",
                        m.code(),
                        a.id
                    )));
                }
            }
            truth
        }
        DeviceMode::Inferred => {
            let mut inferred = DeviceAssignment::default();
            for m in [Modality::Face, Modality::Fingerprint] {
                if !active.contains(m) {
                    continue;
                }
                let features = match m {
                    Modality::Face => access_face_features(a, &models.face_features),
                    Modality::Fingerprint => access_fp_features(a, &models.fingerprint_features),
                };
                let device = match features {
                    Some(f) => models.qda(m)?.classify(&f)?.device,
                    None => m.same_device(),
                };
                match m {
                    Modality::Face => inferred.face = Some(device),
                    Modality::Fingerprint => inferred.fingerprint = Some(device),
                }
            }
            inferred
        }
    };
    trail.push(format!(
        "device mode={} face={} fingerprint={}",
        cfg.device_mode,
        device_code(devices.face),
        device_code(devices.fingerprint)
    ));
    Ok(devices)
}

fn finish(
    a: &Access,
    fused: f64,
    cfg: &PipelineConfig,
    devices: DeviceAssignment,
    modalities: ModalitySet,
    mut trail: Vec<String>,
) -> PipelineOutput {
    let decision = decide(fused, cfg.decision);
    trail.push(format!(
        "decide threshold={} decision={}",
        cfg.decision.threshold,
        match decision {
            Decision::Accept => "accept",
            Decision::Reject => "reject",
        }
    ));
    PipelineOutput {
        access_id: a.id.clone(),
        label: a.label(),
        mixture: a.mixture,
        fused,
        decision,
        devices,
        modalities,
        trail,
    }
}

/// Runs the full conditional pipeline on one access.
pub fn run_pipeline(
    a: &Access,
    cfg: &PipelineConfig,
    models: &FusionModels,
) -> Result<PipelineOutput> {
    let mut sorted = a.clone();
    sorted.sort_records();
    let mut trail = Vec::new();

    let imputed = impute_evaluation(&sorted, cfg.fallback);
    let active = match imputed.directive {
        FusionDirective::EmitFused(v) => {
            trail.push(format!("impute modalities=none fused={v}"));
            return Ok(finish(
                a,
                v,
                cfg,
                DeviceAssignment::default(),
                ModalitySet::NONE,
                trail,
            ));
        }
        FusionDirective::Fuse(set) => set,
    };
    trail.push(format!("impute modalities={}", modality_list(active)));
    let access = imputed.access;

    let devices = resolve_devices(&access, active, cfg, models, &mut trail)?;

    let (access, set) = match cfg.gate.as_ref().filter(|g| !g.is_disabled()) {
        None => {
            trail.push("gate off".to_string());
            (access, active)
        }
        Some(gate) => {
            let outcome = apply_gate(&access, gate, devices, active);
            let replaced: Vec<String> = outcome
                .replaced
                .iter()
                .map(|(r, s)| format!("{r}<-{s}"))
                .collect();
            trail.push(format!(
                "gate modalities={} replaced={}",
                modality_list(outcome.modalities),
                if replaced.is_empty() {
                    "-".to_string()
                } else {
                    replaced.join(",")
                }
            ));
            if outcome.all_rejected {
                trail.push(format!(
                    "fuse rule={} fused={} all-rejected",
                    cfg.fusion_rule, cfg.fallback
                ));
                return Ok(finish(
                    a,
                    cfg.fallback,
                    cfg,
                    devices,
                    ModalitySet::NONE,
                    trail,
                ));
            }
            (outcome.access, outcome.modalities)
        }
    };

    let pooled = cfg.device_mode == DeviceMode::Pooled;
    let face_key = if pooled { None } else { devices.face };
    let fp_key = if pooled || !cfg.fingerprint_per_device {
        None
    } else {
        devices.fingerprint
    };

    let fused = match cfg.fusion_rule.baseline() {
        None => {
            let mut llrs = Vec::with_capacity(2);
            if set.face {
                let s = access
                    .face()
                    .and_then(|r| r.score)
                    .expect("usable face has a score");
                let llr = models.calibrator(Modality::Face, face_key)?.apply(&[s])?;
                trail.push(format!(
                    "calibrate channel=face model={} llr={llr}",
                    key_name(face_key)
                ));
                llrs.push(llr);
            }
            if set.fingerprint {
                let v = fingerprint_vector(&access).expect("imputed fingerprints are complete");
                let llr = models
                    .calibrator(Modality::Fingerprint, fp_key)?
                    .apply(&v)?;
                trail.push(format!(
                    "calibrate channel=fingerprint model={} llr={llr}",
                    key_name(fp_key)
                ));
                llrs.push(llr);
            }
            match cfg.fusion_rule {
                FusionRule::LlrMax => fuse_llr_max(&llrs)?,
                _ => fuse_llr_sum(&llrs)?,
            }
        }
        Some(rule) => {
            let mut normalized = Vec::with_capacity(4);
            for r in access
                .records
                .iter()
                .filter(|r| set.contains(r.channel.modality()))
            {
                let key = if r.channel.modality() == Modality::Face {
                    face_key
                } else {
                    devices.fingerprint.filter(|_| !pooled)
                };
                let s = r.score.expect("usable channel has a score");
                let n = models.normalizer(r.channel, key)?.apply(s);
                trail.push(format!(
                    "normalize channel={} model={} value={n}",
                    r.channel,
                    key_name(key)
                ));
                normalized.push(n);
            }
            rule_fuse(&normalized, rule)?
        }
    };
    trail.push(format!("fuse rule={} fused={fused}", cfg.fusion_rule));
    Ok(finish(a, fused, cfg, devices, set, trail))
}

/// Runs the pipeline on every access; output order follows input order.
pub fn run_batch(
    accesses: &[Access],
    cfg: &PipelineConfig,
    models: &FusionModels,
) -> Result<Vec<PipelineOutput>> {
    accesses
        .par_iter()
        .map(|a| run_pipeline(a, cfg, models))
        .collect()
}

/// Fused genuine and impostor scores; unlabeled accesses are skipped.
pub fn split_by_label(outputs: &[PipelineOutput]) -> (Vec<f64>, Vec<f64>) {
    let mut classes: Classes<f64> = Default::default();
    for o in outputs {
        push_labeled(&mut classes, o.label, o.fused);
    }
    classes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::fixtures::access;
    use proptest::prelude::*;

    fn cal(params: &[f64]) -> Calibrator {
        Calibrator::from_params(params, 0.0)
    }

    /// Face LLR = 2s, fingerprint LLR = s1 + s2 + s3 for every device.
    fn toy_models() -> FusionModels {
        let mut face_calibrators = vec![CalibratorEntry {
            device: None,
            calibrator: cal(&[0.0, 2.0]),
        }];
        let mut fingerprint_calibrators = vec![CalibratorEntry {
            device: None,
            calibrator: cal(&[0.0, 1.0, 1.0, 1.0]),
        }];
        for d in DeviceClass::ALL {
            let entry = match d.modality() {
                Modality::Face => &mut face_calibrators,
                Modality::Fingerprint => &mut fingerprint_calibrators,
            };
            entry.push(CalibratorEntry {
                device: Some(d),
                calibrator: entry[0].calibrator.clone(),
            });
        }
        let mut normalizers = Vec::new();
        for channel in ChannelId::ALL {
            for device in [
                None,
                Some(channel.modality().same_device()),
                Some(channel.modality().cross_device()),
            ] {
                normalizers.push(NormalizerEntry {
                    channel,
                    device,
                    normalizer: TanhNormalizer {
                        mu: 0.0,
                        sigma: 1.0,
                    },
                });
            }
        }
        FusionModels {
            face_features: FeatureSelection::default_face(),
            fingerprint_features: FeatureSelection::default_fingerprint(),
            face_calibrators,
            fingerprint_calibrators,
            normalizers,
            face_qda: None,
            fingerprint_qda: None,
            gate: None,
            fallbacks: vec![FallbackEntry {
                rule: FusionRule::TanhMean,
                device_mode: DeviceMode::Oracle,
                value: 0.5,
            }],
        }
    }

    #[test]
    fn llr_sum_and_max_examples() {
        assert_eq!(fuse_llr_sum(&[2.0, -0.5]).unwrap(), 1.5);
        assert_eq!(fuse_llr_sum(&[0.7]).unwrap(), 0.7);
        assert_eq!(fuse_llr_max(&[2.0, -0.5]).unwrap(), 2.0);
        assert_eq!(fuse_llr_max(&[0.3, 0.3]).unwrap(), 0.3);
        assert!(fuse_llr_sum(&[]).is_err());
        assert!(fuse_llr_max(&[]).is_err());
    }

    #[test]
    fn decide_is_strict() {
        let p = DecisionPolicy::default();
        assert_eq!(decide(1.2, p), Decision::Accept);
        assert_eq!(decide(-0.3, p), Decision::Reject);
        assert_eq!(decide(0.0, p), Decision::Reject);
    }

    #[test]
    fn complete_access_sums_calibrated_modalities() {
        let a = access(
            "a",
            [Some(0.5), Some(1.0), Some(2.0), Some(-1.0)],
            Label::Target,
        );
        let out = run_pipeline(
            &a,
            &PipelineConfig::new(FusionRule::LlrSum, DeviceMode::Oracle),
            &toy_models(),
        )
        .unwrap();
        assert_eq!(out.fused, 1.0 + 2.0);
        assert_eq!(out.decision, Decision::Accept);
        assert_eq!(out.modalities, ModalitySet::BOTH);

        let max = run_pipeline(
            &a,
            &PipelineConfig::new(FusionRule::LlrMax, DeviceMode::Oracle),
            &toy_models(),
        )
        .unwrap();
        assert_eq!(max.fused, 2.0);
    }

    #[test]
    fn all_missing_uses_rule_fallback() {
        let models = toy_models();
        let a = access("a", [None; 4], Label::Target);
        let llr = PipelineConfig::new(FusionRule::LlrSum, DeviceMode::Oracle);
        assert_eq!(run_pipeline(&a, &llr, &models).unwrap().fused, 0.0);
        let mean = PipelineConfig::new(FusionRule::TanhMean, DeviceMode::Oracle)
            .with_training_fallback(&models)
            .unwrap();
        assert_eq!(run_pipeline(&a, &mean, &models).unwrap().fused, 0.5);
    }

    #[test]
    fn missing_threshold_is_an_error() {
        let cfg = PipelineConfig::new(FusionRule::TanhMin, DeviceMode::Oracle)
            .with_training_fallback(&toy_models());
        assert!(matches!(cfg, Err(Error::MissingModel(_))));
    }

    #[test]
    fn inferred_mode_without_classifier_fails() {
        let a = access(
            "a",
            [Some(0.5), Some(1.0), Some(2.0), Some(-1.0)],
            Label::Target,
        );
        let cfg = PipelineConfig::new(FusionRule::LlrSum, DeviceMode::Inferred);
        assert!(matches!(
            run_pipeline(&a, &cfg, &toy_models()),
            Err(Error::MissingModel(_))
        ));
    }

    #[test]
    fn gate_rejecting_everything_emits_zero() {
        let a = access(
            "a",
            [Some(0.5), Some(1.0), Some(2.0), Some(-1.0)],
            Label::Target,
        );
        let gate = GateThresholds::default()
            .with(DeviceClass::FaceHighRes, 2.0)
            .with(DeviceClass::FingerOptical, 2.0);
        let cfg = PipelineConfig::new(FusionRule::LlrSum, DeviceMode::Oracle).with_gate(Some(gate));
        let out = run_pipeline(&a, &cfg, &toy_models()).unwrap();
        assert_eq!(out.fused, 0.0);
        assert!(out.trail.iter().any(|l| l.contains("all-rejected")));
    }

    #[test]
    fn tanh_mean_averages_normalized_channels() {
        let a = access(
            "a",
            [Some(0.0), Some(0.0), Some(0.0), Some(0.0)],
            Label::Target,
        );
        let cfg = PipelineConfig::new(FusionRule::TanhMean, DeviceMode::Pooled);
        assert_eq!(run_pipeline(&a, &cfg, &toy_models()).unwrap().fused, 0.5);
    }

    #[test]
    fn modes_and_rules_parse() {
        for r in FusionRule::ALL {
            assert_eq!(r.code().parse::<FusionRule>().unwrap(), r);
        }
        for m in DeviceMode::ALL {
            assert_eq!(m.code().parse::<DeviceMode>().unwrap(), m);
        }
        assert!("median".parse::<FusionRule>().is_err());
    }

    fn score() -> impl Strategy<Value = Option<f64>> {
        prop::option::weighted(0.8, -3.0..3.0f64)
    }

    proptest! {
        #[test]
        fn llr_sum_is_permutation_invariant(mut v in prop::collection::vec(-10.0..10.0f64, 1..6), seed in any::<u64>()) {
            let a = fuse_llr_sum(&v).unwrap();
            let k = (seed as usize) % v.len();
            v.rotate_left(k);
            v.reverse();
            prop_assert!((fuse_llr_sum(&v).unwrap() - a).abs() < 1e-12);
        }

        #[test]
        fn max_dominates_mean(v in prop::collection::vec(-10.0..10.0f64, 1..6)) {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!(fuse_llr_max(&v).unwrap() >= mean - 1e-12);
        }

        #[test]
        fn record_order_does_not_matter(s in prop::array::uniform4(score()), seed in any::<u64>(), rule in 0usize..5) {
            let models = toy_models();
            let cfg = PipelineConfig::new(FusionRule::ALL[rule], DeviceMode::Oracle);
            let a = access("a", s, Label::Target);
            let mut b = a.clone();
            let k = (seed as usize) % b.records.len();
            b.records.rotate_left(k);
            b.records.reverse();
            let x = run_pipeline(&a, &cfg, &models).unwrap();
            let y = run_pipeline(&b, &cfg, &models).unwrap();
            prop_assert_eq!(x.fused.to_bits(), y.fused.to_bits());
            prop_assert_eq!(x.decision, y.decision);
        }

        #[test]
        fn disabled_gate_matches_absent_gate(s in prop::array::uniform4(score()), rule in 0usize..5) {
            let models = toy_models();
            let absent = PipelineConfig::new(FusionRule::ALL[rule], DeviceMode::Oracle);
            let disabled = absent.clone().with_gate(Some(GateThresholds::default()));
            let a = access("a", s, Label::NonTarget);
            let x = run_pipeline(&a, &absent, &models).unwrap();
            let y = run_pipeline(&a, &disabled, &models).unwrap();
            prop_assert_eq!(x, y);
        }
    }
}
