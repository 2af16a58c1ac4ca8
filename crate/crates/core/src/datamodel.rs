//! Domain types shared by every stage of the fusion pipeline.
//!
//! A verification attempt ([`Access`]) bundles one face comparison and up to
//! three fingerprint comparisons ([`ScoreRecord`]). Scores are similarity
//! scores: higher means more genuine. Missing scores and quality values are
//! `None`, never a sentinel number.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of face quality measures per image.
pub const FACE_QUALITY_ARITY: usize = 14;
/// Number of fingerprint quality measures per image.
pub const FINGERPRINT_QUALITY_ARITY: usize = 1;
/// Fingerprint channels per access.
pub const FINGERS_PER_ACCESS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    /// Same individual (genuine).
    Target,
    /// Different individuals (impostor).
    NonTarget,
    /// Ground truth withheld.
    Unknown,
}

impl Label {
    pub fn code(self) -> &'static str {
        match self {
            Label::Target => "genuine",
            Label::NonTarget => "impostor",
            Label::Unknown => "unknown",
        }
    }

    pub fn is_known(self) -> bool {
        self != Label::Unknown
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "genuine" => Ok(Label::Target),
            "impostor" => Ok(Label::NonTarget),
            "unknown" => Ok(Label::Unknown),
            other => Err(Error::invalid(format!("unknown label '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Face,
    Fingerprint,
}

impl Modality {
    pub fn code(self) -> &'static str {
        match self {
            Modality::Face => "face",
            Modality::Fingerprint => "fingerprint",
        }
    }

    /// Device class used when template and query come from the same sensor.
    pub fn same_device(self) -> DeviceClass {
        match self {
            Modality::Face => DeviceClass::FaceHighRes,
            Modality::Fingerprint => DeviceClass::FingerOptical,
        }
    }

    pub fn cross_device(self) -> DeviceClass {
        match self {
            Modality::Face => DeviceClass::FaceCross,
            Modality::Fingerprint => DeviceClass::FingerCross,
        }
    }

    pub fn quality_arity(self) -> usize {
        match self {
            Modality::Face => FACE_QUALITY_ARITY,
            Modality::Fingerprint => FINGERPRINT_QUALITY_ARITY,
        }
    }
}

/// Right-hand finger of a fingerprint channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Finger {
    Thumb,
    Index,
    Middle,
}

impl Finger {
    pub const ALL: [Finger; 3] = [Finger::Thumb, Finger::Index, Finger::Middle];

    /// 1 = thumb, 2 = index, 3 = middle.
    pub fn number(self) -> u8 {
        match self {
            Finger::Thumb => 1,
            Finger::Index => 2,
            Finger::Middle => 3,
        }
    }

    pub fn slot(self) -> usize {
        usize::from(self.number() - 1)
    }
}

/// One score stream. The finger is present exactly when the modality is
/// fingerprint, which the enum shape enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ChannelId {
    Face,
    Fingerprint(Finger),
}

impl ChannelId {
    pub const ALL: [ChannelId; 4] = [
        ChannelId::Face,
        ChannelId::Fingerprint(Finger::Thumb),
        ChannelId::Fingerprint(Finger::Index),
        ChannelId::Fingerprint(Finger::Middle),
    ];

    pub fn modality(self) -> Modality {
        match self {
            ChannelId::Face => Modality::Face,
            ChannelId::Fingerprint(_) => Modality::Fingerprint,
        }
    }

    pub fn finger(self) -> Option<Finger> {
        match self {
            ChannelId::Face => None,
            ChannelId::Fingerprint(f) => Some(f),
        }
    }

    pub fn quality_arity(self) -> usize {
        self.modality().quality_arity()
    }

    pub fn code(self) -> &'static str {
        match self {
            ChannelId::Face => "face",
            ChannelId::Fingerprint(Finger::Thumb) => "fp1",
            ChannelId::Fingerprint(Finger::Index) => "fp2",
            ChannelId::Fingerprint(Finger::Middle) => "fp3",
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ChannelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ChannelId::ALL
            .into_iter()
            .find(|c| c.code() == s)
            .ok_or_else(|| Error::invalid(format!("unknown channel '{s}'")))
    }
}

impl TryFrom<String> for ChannelId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ChannelId> for String {
    fn from(c: ChannelId) -> String {
        c.code().to_string()
    }
}

/// Acquisition condition of the query sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeviceClass {
    /// High-resolution camera, same as the template (fnf1).
    #[serde(rename = "fnf1")]
    FaceHighRes,
    /// Low-resolution webcam query against a high-resolution template (xfa1).
    #[serde(rename = "xfa1")]
    FaceCross,
    /// Optical flat sensor, same as the template (fo).
    #[serde(rename = "fo")]
    FingerOptical,
    /// Thermal sweep query against an optical template (xft).
    #[serde(rename = "xft")]
    FingerCross,
}

impl DeviceClass {
    pub const ALL: [DeviceClass; 4] = [
        DeviceClass::FaceHighRes,
        DeviceClass::FaceCross,
        DeviceClass::FingerOptical,
        DeviceClass::FingerCross,
    ];

    pub fn code(self) -> &'static str {
        match self {
            DeviceClass::FaceHighRes => "fnf1",
            DeviceClass::FaceCross => "xfa1",
            DeviceClass::FingerOptical => "fo",
            DeviceClass::FingerCross => "xft",
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            DeviceClass::FaceHighRes | DeviceClass::FaceCross => Modality::Face,
            DeviceClass::FingerOptical | DeviceClass::FingerCross => Modality::Fingerprint,
        }
    }

    pub fn is_cross(self) -> bool {
        matches!(self, DeviceClass::FaceCross | DeviceClass::FingerCross)
    }
}

impl fmt::Display for DeviceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for DeviceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DeviceClass::ALL
            .into_iter()
            .find(|d| d.code() == s)
            .ok_or_else(|| Error::invalid(format!("unknown device '{s}'")))
    }
}

/// Face/fingerprint query-device combination of an access.
///
/// | id | face | fingerprint |
/// |----|------|-------------|
/// | 1  | fnf1 | fo          |
/// | 2  | fnf1 | xft         |
/// | 3  | xfa1 | fo          |
/// | 4  | xfa1 | xft         |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct MixtureId(u8);

impl MixtureId {
    pub const ALL: [MixtureId; 4] = [MixtureId(1), MixtureId(2), MixtureId(3), MixtureId(4)];

    pub fn new(id: u8) -> Result<Self> {
        if (1..=4).contains(&id) {
            Ok(MixtureId(id))
        } else {
            Err(Error::invalid(format!("mixture id {id} outside 1..=4")))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn from_devices(face: DeviceClass, fingerprint: DeviceClass) -> Option<Self> {
        match (face, fingerprint) {
            (DeviceClass::FaceHighRes, DeviceClass::FingerOptical) => Some(MixtureId(1)),
            (DeviceClass::FaceHighRes, DeviceClass::FingerCross) => Some(MixtureId(2)),
            (DeviceClass::FaceCross, DeviceClass::FingerOptical) => Some(MixtureId(3)),
            (DeviceClass::FaceCross, DeviceClass::FingerCross) => Some(MixtureId(4)),
            _ => None,
        }
    }

    pub fn face_device(self) -> DeviceClass {
        if self.0 <= 2 {
            DeviceClass::FaceHighRes
        } else {
            DeviceClass::FaceCross
        }
    }

    pub fn fingerprint_device(self) -> DeviceClass {
        if self.0 % 2 == 1 {
            DeviceClass::FingerOptical
        } else {
            DeviceClass::FingerCross
        }
    }
}

impl TryFrom<u8> for MixtureId {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        MixtureId::new(id)
    }
}

impl From<MixtureId> for u8 {
    fn from(m: MixtureId) -> u8 {
        m.0
    }
}

impl fmt::Display for MixtureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Session {
    One,
    Two,
}

impl Session {
    pub fn number(self) -> u8 {
        match self {
            Session::One => 1,
            Session::Two => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Session::One),
            2 => Ok(Session::Two),
            _ => Err(Error::invalid(format!("session {n} is not 1 or 2"))),
        }
    }
}

/// Ordered quality measures of one sample; `None` marks a missing value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QualityVector(pub Vec<Option<f64>>);

impl QualityVector {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        QualityVector(values.into_iter().map(Some).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Zero-based lookup; `None` when out of range or missing.
    pub fn get(&self, index: usize) -> Option<f64> {
        self.0.get(index).copied().flatten()
    }

    pub fn is_complete(&self) -> bool {
        self.0.iter().all(Option::is_some)
    }

    /// All values, or `None` if any is missing.
    pub fn complete_values(&self) -> Option<Vec<f64>> {
        self.0.iter().copied().collect()
    }
}

/// One raw matcher comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub access_id: String,
    pub session: Session,
    pub channel: ChannelId,
    pub device_true: Option<DeviceClass>,
    pub score: Option<f64>,
    pub q_template: QualityVector,
    pub q_query: QualityVector,
    pub label: Label,
}

impl ScoreRecord {
    /// Score-quality of the comparison on one measure: the worse of the two samples.
    pub fn quality_at(&self, index: usize) -> Option<f64> {
        match (self.q_template.get(index), self.q_query.get(index)) {
            (Some(t), Some(q)) => Some(t.min(q)),
            _ => None,
        }
    }
}

/// One verification attempt: a face record plus up to three fingerprint
/// records, kept in channel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Access {
    pub id: String,
    pub records: Vec<ScoreRecord>,
    pub mixture: Option<MixtureId>,
}

impl Access {
    pub fn record(&self, channel: ChannelId) -> Option<&ScoreRecord> {
        self.records.iter().find(|r| r.channel == channel)
    }

    pub fn record_mut(&mut self, channel: ChannelId) -> Option<&mut ScoreRecord> {
        self.records.iter_mut().find(|r| r.channel == channel)
    }

    pub fn face(&self) -> Option<&ScoreRecord> {
        self.record(ChannelId::Face)
    }

    pub fn fingerprints(&self) -> impl Iterator<Item = &ScoreRecord> {
        self.records
            .iter()
            .filter(|r| r.channel.modality() == Modality::Fingerprint)
    }

    pub fn label(&self) -> Label {
        self.records.first().map_or(Label::Unknown, |r| r.label)
    }

    pub fn session(&self) -> Option<Session> {
        self.records.first().map(|r| r.session)
    }

    /// Number of present scores (M).
    pub fn present_scores(&self) -> usize {
        self.records.iter().filter(|r| r.score.is_some()).count()
    }

    pub fn face_device(&self) -> Option<DeviceClass> {
        self.face().and_then(|r| r.device_true)
    }

    /// Shared fingerprint device, if every fingerprint record agrees on one.
    pub fn fingerprint_device(&self) -> Option<DeviceClass> {
        let mut devices = self.fingerprints().map(|r| r.device_true);
        let first = devices.next()??;
        devices.all(|d| d == Some(first)).then_some(first)
    }

    /// Mixture implied by the true devices, if both are known.
    pub fn implied_mixture(&self) -> Option<MixtureId> {
        MixtureId::from_devices(self.face_device()?, self.fingerprint_device()?)
    }

    pub(crate) fn sort_records(&mut self) {
        self.records.sort_by_key(|r| r.channel);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Training,
    Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub role: Role,
    pub accesses: Vec<Access>,
}

impl Dataset {
    pub fn new(role: Role, accesses: Vec<Access>) -> Self {
        Dataset { role, accesses }
    }

    /// N_TG.
    pub fn n_target(&self) -> usize {
        self.accesses
            .iter()
            .filter(|a| a.label() == Label::Target)
            .count()
    }

    /// N_TI.
    pub fn n_nontarget(&self) -> usize {
        self.accesses
            .iter()
            .filter(|a| a.label() == Label::NonTarget)
            .count()
    }

    pub fn records(&self) -> impl Iterator<Item = &ScoreRecord> {
        self.accesses.iter().flat_map(|a| a.records.iter())
    }
}

/// Which modalities still take part in fusion for one access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySet {
    pub face: bool,
    pub fingerprint: bool,
}

impl ModalitySet {
    pub const BOTH: ModalitySet = ModalitySet {
        face: true,
        fingerprint: true,
    };
    pub const NONE: ModalitySet = ModalitySet {
        face: false,
        fingerprint: false,
    };

    pub fn contains(self, m: Modality) -> bool {
        match m {
            Modality::Face => self.face,
            Modality::Fingerprint => self.fingerprint,
        }
    }

    pub fn is_empty(self) -> bool {
        !self.face && !self.fingerprint
    }

    pub fn intersect(self, other: ModalitySet) -> ModalitySet {
        ModalitySet {
            face: self.face && other.face,
            fingerprint: self.fingerprint && other.fingerprint,
        }
    }
}

/// Bayes decision threshold in the log-odds domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionPolicy {
    pub threshold: f64,
}

impl Default for DecisionPolicy {
    fn default() -> Self {
        DecisionPolicy { threshold: 0.0 }
    }
}

/// A violated access invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    MissingFace,
    TooManyFingerprints(usize),
    DuplicateChannel(ChannelId),
    ForeignRecord(String),
    MixedLabels,
    MixedSessions,
    MixedFingerprintDevices,
    DeviceModality {
        channel: ChannelId,
        device: DeviceClass,
    },
    QualityArity {
        channel: ChannelId,
        side: &'static str,
        expected: usize,
        got: usize,
    },
    NonFiniteScore(ChannelId),
    NonFiniteQuality(ChannelId),
    MixtureMismatch {
        stated: MixtureId,
        implied: MixtureId,
    },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::MissingFace => write!(f, "no face record"),
            Diagnostic::TooManyFingerprints(n) => write!(f, "{n} fingerprint records (max 3)"),
            Diagnostic::DuplicateChannel(c) => write!(f, "duplicate channel {c}"),
            Diagnostic::ForeignRecord(id) => write!(f, "record belongs to access {id}"),
            Diagnostic::MixedLabels => write!(f, "records disagree on the label"),
            Diagnostic::MixedSessions => write!(f, "records disagree on the session"),
            Diagnostic::MixedFingerprintDevices => {
                write!(f, "fingerprint records acquired with different devices")
            }
            Diagnostic::DeviceModality { channel, device } => {
                write!(f, "device {device} does not match channel {channel}")
            }
            Diagnostic::QualityArity {
                channel,
                side,
                expected,
                got,
            } => write!(
                f,
                "{channel} {side} quality arity {got}, expected {expected}"
            ),
            Diagnostic::NonFiniteScore(c) => write!(f, "non-finite score on {c}"),
            Diagnostic::NonFiniteQuality(c) => write!(f, "non-finite quality on {c}"),
            Diagnostic::MixtureMismatch { stated, implied } => {
                write!(
                    f,
                    "mixture {stated} contradicts devices (mixture {implied})"
                )
            }
        }
    }
}

/// Checks every access invariant; an empty list means the access is well formed.
pub fn validate_access(a: &Access) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    let faces = a
        .records
        .iter()
        .filter(|r| r.channel == ChannelId::Face)
        .count();
    if faces == 0 {
        out.push(Diagnostic::MissingFace);
    }
    let fps = a.fingerprints().count();
    if fps > FINGERS_PER_ACCESS {
        out.push(Diagnostic::TooManyFingerprints(fps));
    }

    let mut seen = Vec::with_capacity(a.records.len());
    for r in &a.records {
        if seen.contains(&r.channel) {
            out.push(Diagnostic::DuplicateChannel(r.channel));
        } else {
            seen.push(r.channel);
        }
        if r.access_id != a.id {
            out.push(Diagnostic::ForeignRecord(r.access_id.clone()));
        }
        if let Some(d) = r.device_true {
            if d.modality() != r.channel.modality() {
                out.push(Diagnostic::DeviceModality {
                    channel: r.channel,
                    device: d,
                });
            }
        }
        let expected = r.channel.quality_arity();
        for (side, q) in [("template", &r.q_template), ("query", &r.q_query)] {
            if q.len() != expected {
                out.push(Diagnostic::QualityArity {
                    channel: r.channel,
                    side,
                    expected,
                    got: q.len(),
                });
            }
        }
        if r.score.is_some_and(|s| !s.is_finite()) {
            out.push(Diagnostic::NonFiniteScore(r.channel));
        }
        let non_finite = |q: &QualityVector| q.0.iter().flatten().any(|v| !v.is_finite());
        if non_finite(&r.q_template) || non_finite(&r.q_query) {
            out.push(Diagnostic::NonFiniteQuality(r.channel));
        }
    }

    if let Some(first) = a.records.first() {
        if a.records.iter().any(|r| r.label != first.label) {
            out.push(Diagnostic::MixedLabels);
        }
        if a.records.iter().any(|r| r.session != first.session) {
            out.push(Diagnostic::MixedSessions);
        }
    }

    let mut fp_devices = a.fingerprints().map(|r| r.device_true);
    if let Some(first) = fp_devices.next() {
        if fp_devices.any(|d| d != first) {
            out.push(Diagnostic::MixedFingerprintDevices);
        }
    }

    if let (Some(stated), Some(implied)) = (a.mixture, a.implied_mixture()) {
        if stated != implied {
            out.push(Diagnostic::MixtureMismatch { stated, implied });
        }
    }

    out
}

/// Partitions records into accesses sorted by access id, with records in
/// channel order. The mixture is filled in from the true devices when known.
pub fn group_records(records: Vec<ScoreRecord>) -> Result<Vec<Access>> {
    let mut by_id: BTreeMap<String, Vec<ScoreRecord>> = BTreeMap::new();
    for r in records {
        by_id.entry(r.access_id.clone()).or_default().push(r);
    }

    by_id
        .into_iter()
        .map(|(id, records)| {
            let mut access = Access {
                id,
                records,
                mixture: None,
            };
            access.sort_records();
            access.mixture = access.implied_mixture();
            let diagnostics = validate_access(&access);
            if diagnostics.is_empty() {
                return Ok(access);
            }
            let reason = diagnostics
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            Err(Error::Structural {
                access_id: access.id,
                reason,
            })
        })
        .collect()
}

/// Inverse of [`group_records`] on valid accesses.
pub fn flatten(accesses: &[Access]) -> Vec<ScoreRecord> {
    accesses
        .iter()
        .flat_map(|a| a.records.iter().cloned())
        .collect()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn record(id: &str, channel: ChannelId, score: Option<f64>, label: Label) -> ScoreRecord {
        let arity = channel.quality_arity();
        let device = match channel.modality() {
            Modality::Face => DeviceClass::FaceHighRes,
            Modality::Fingerprint => DeviceClass::FingerOptical,
        };
        ScoreRecord {
            access_id: id.to_string(),
            session: Session::Two,
            channel,
            device_true: Some(device),
            score,
            q_template: QualityVector::from_values(vec![0.9; arity]),
            q_query: QualityVector::from_values(vec![0.8; arity]),
            label,
        }
    }

    pub fn access(id: &str, scores: [Option<f64>; 4], label: Label) -> Access {
        let records = ChannelId::ALL
            .into_iter()
            .zip(scores)
            .map(|(c, s)| record(id, c, s, label))
            .collect();
        let mut a = Access {
            id: id.to_string(),
            records,
            mixture: None,
        };
        a.mixture = a.implied_mixture();
        a
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn groups_one_access_with_four_scores() {
        let a = access(
            "a1",
            [Some(1.0), Some(2.0), Some(3.0), Some(4.0)],
            Label::Target,
        );
        let grouped = group_records(a.records.clone()).unwrap();
        assert_eq!(grouped.len(), 1);
        assert_eq!(grouped[0].present_scores(), 4);
        assert_eq!(grouped[0].mixture, Some(MixtureId::new(1).unwrap()));
    }

    #[test]
    fn empty_input_groups_to_nothing() {
        assert!(group_records(Vec::new()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_channel_is_structural_error() {
        let mut records = access("a1", [Some(1.0); 4], Label::Target).records;
        records.push(record(
            "a1",
            ChannelId::Fingerprint(Finger::Index),
            Some(0.5),
            Label::Target,
        ));
        let err = group_records(records).unwrap_err();
        assert!(matches!(err, Error::Structural { ref access_id, .. } if access_id == "a1"));
        assert!(err.to_string().contains("duplicate channel fp2"));
    }

    #[test]
    fn output_sorted_by_access_id() {
        let mut records = access("b", [Some(1.0); 4], Label::Target).records;
        records.extend(access("a", [Some(1.0); 4], Label::NonTarget).records);
        records.reverse();
        let grouped = group_records(records).unwrap();
        let ids: Vec<_> = grouped.iter().map(|a| a.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert!(grouped[0]
            .records
            .windows(2)
            .all(|w| w[0].channel < w[1].channel));
    }

    #[test]
    fn well_formed_access_has_no_diagnostics() {
        let a = access("a1", [Some(1.0), None, Some(3.0), Some(4.0)], Label::Target);
        assert!(validate_access(&a).is_empty());
    }

    #[test]
    fn mixed_fingerprint_devices_flagged_once() {
        let mut a = access("a1", [Some(1.0); 4], Label::Target);
        a.mixture = None;
        a.records[2].device_true = Some(DeviceClass::FingerCross);
        assert_eq!(
            validate_access(&a),
            vec![Diagnostic::MixedFingerprintDevices]
        );
    }

    #[test]
    fn short_face_quality_flagged() {
        let mut a = access("a1", [Some(1.0); 4], Label::Target);
        a.records[0].q_query.0.pop();
        let diags = validate_access(&a);
        assert_eq!(
            diags,
            vec![Diagnostic::QualityArity {
                channel: ChannelId::Face,
                side: "query",
                expected: 14,
                got: 13
            }]
        );
    }

    #[test]
    fn fingerprint_device_requires_agreement() {
        let mut a = access("a1", [Some(1.0); 4], Label::Target);
        assert_eq!(a.fingerprint_device(), Some(DeviceClass::FingerOptical));
        a.records[3].device_true = Some(DeviceClass::FingerCross);
        assert_eq!(a.fingerprint_device(), None);
    }

    #[test]
    fn mixture_table_round_trips_through_devices() {
        for m in MixtureId::ALL {
            assert_eq!(
                MixtureId::from_devices(m.face_device(), m.fingerprint_device()),
                Some(m)
            );
        }
        assert!(MixtureId::new(0).is_err());
        assert!(MixtureId::new(5).is_err());
    }

    #[test]
    fn dataset_counts() {
        let ds = Dataset::new(
            Role::Training,
            vec![
                access("a", [Some(1.0); 4], Label::Target),
                access("b", [Some(1.0); 4], Label::NonTarget),
                access("c", [Some(1.0); 4], Label::NonTarget),
            ],
        );
        assert_eq!((ds.n_target(), ds.n_nontarget()), (1, 2));
    }
}
