//! Score files, protocol splits and the missing-data policies.
//!
//! Score file layout (UTF-8, LF, comma separated, header mandatory):
//!
//! ```text
//! access_id,session,label,channel,device,score,q_template,q_query
//! a0001,2,genuine,face,fnf1,0.8125,0.9;0.7;...;0.5,0.8;0.6;...;0.4
//! a0001,2,genuine,fp1,fo,,0.61,0.58
//! ```
//!
//! `label` is `genuine|impostor|unknown`, `channel` is `face|fp1|fp2|fp3`,
//! `device` is `fnf1|xfa1|fo|xft|unknown`. An empty score is a missing score.
//! Quality vectors are `;`-joined decimals; an empty element is a missing value.
//! Decimals are written in their shortest round-trip form, so reading a written
//! file reproduces every value bit for bit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datamodel::{
    group_records, Access, ChannelId, Dataset, DeviceClass, Finger, Label, Modality, ModalitySet,
    QualityVector, Role, ScoreRecord, Session,
};
use crate::error::{Error, Result};

pub const HEADER: [&str; 8] = [
    "access_id",
    "session",
    "label",
    "channel",
    "device",
    "score",
    "q_template",
    "q_query",
];

fn parse_decimal(field: &str) -> std::result::Result<f64, String> {
    let v: f64 = field
        .parse()
        .map_err(|_| format!("'{field}' is not a decimal"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("'{field}' is not finite"))
    }
}

fn parse_quality(field: &str) -> std::result::Result<QualityVector, String> {
    field
        .split(';')
        .map(|v| {
            if v.is_empty() {
                Ok(None)
            } else {
                parse_decimal(v).map(Some)
            }
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(QualityVector)
}

fn format_quality(q: &QualityVector) -> String {
    q.0.iter()
        .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_row(row: &csv::StringRecord) -> std::result::Result<ScoreRecord, String> {
    if row.len() != HEADER.len() {
        return Err(format!(
            "expected {} fields, got {}",
            HEADER.len(),
            row.len()
        ));
    }
    let access_id = row[0].to_string();
    if access_id.is_empty() {
        return Err("empty access_id".into());
    }
    let session = row[1]
        .parse::<u8>()
        .map_err(|_| format!("bad session '{}'", &row[1]))
        .and_then(|n| Session::from_number(n).map_err(|e| e.to_string()))?;
    let label: Label = row[2].parse().map_err(|e: Error| e.to_string())?;
    let channel: ChannelId = row[3].parse().map_err(|e: Error| e.to_string())?;
    let device_true = match &row[4] {
        "unknown" => None,
        d => Some(d.parse::<DeviceClass>().map_err(|e| e.to_string())?),
    };
    let score = match &row[5] {
        "" => None,
        s => Some(parse_decimal(s)?),
    };
    let q_template = parse_quality(&row[6])?;
    let q_query = parse_quality(&row[7])?;
    let expected = channel.quality_arity();
    for (side, q) in [("template", &q_template), ("query", &q_query)] {
        if q.len() != expected {
            return Err(format!(
                "{channel} {side} quality has {} values, expected {expected}",
                q.len()
            ));
        }
    }
    Ok(ScoreRecord {
        access_id,
        session,
        channel,
        device_true,
        score,
        q_template,
        q_query,
        label,
    })
}

pub fn parse_score_file(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = reader.records();

    match rows.next() {
        Some(Ok(header)) if header.iter().eq(HEADER) => {}
        Some(Ok(_)) | None => {
            return Err(Error::Parse {
                line: 1,
                message: format!("header must be '{}'", HEADER.join(",")),
            })
        }
        Some(Err(e)) => return Err(e.into()),
    }

    let mut records = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        records.push(parse_row(&row).map_err(|message| Error::Parse { line, message })?);
    }
    Ok(records)
}

pub fn write_score_file(records: &[ScoreRecord]) -> String {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(HEADER).expect("write to memory");
    for r in records {
        let session = r.session.number().to_string();
        let device = r.device_true.map_or("unknown", DeviceClass::code);
        let score = r.score.map(|s| s.to_string()).unwrap_or_default();
        let qt = format_quality(&r.q_template);
        let qq = format_quality(&r.q_query);
        writer
            .write_record([
                r.access_id.as_str(),
                session.as_str(),
                r.label.code(),
                r.channel.code(),
                device,
                score.as_str(),
                qt.as_str(),
                qq.as_str(),
            ])
            .expect("write to memory");
    }
    let bytes = writer.into_inner().expect("flush to memory");
    String::from_utf8(bytes).expect("fields are UTF-8")
}

/// Parses a score file and groups it into a dataset.
pub fn read_dataset(text: &str, role: Role) -> Result<Dataset> {
    Ok(Dataset::new(role, group_records(parse_score_file(text)?)?))
}

pub fn write_dataset(ds: &Dataset) -> String {
    write_score_file(&crate::datamodel::flatten(&ds.accesses))
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn get(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

fn quality_key(channel: ChannelId, template: bool, index: usize) -> (ChannelId, bool, usize) {
    (channel, template, index)
}

/// Adds empty fingerprint records for fingers absent from the access.
fn materialize_fingerprints(a: &mut Access) {
    let Some(template) = a.fingerprints().next().cloned() else {
        return;
    };
    let device = a.fingerprint_device();
    for finger in Finger::ALL {
        let channel = ChannelId::Fingerprint(finger);
        if a.record(channel).is_none() {
            a.records.push(ScoreRecord {
                channel,
                device_true: device,
                score: None,
                q_template: QualityVector(vec![None; channel.quality_arity()]),
                q_query: QualityVector(vec![None; channel.quality_arity()]),
                ..template.clone()
            });
        }
    }
    a.sort_records();
}

/// Replaces missing training values with class-conditional means.
///
/// Scores: mean of the valid scores with the same channel and label.
/// Qualities: mean of the valid values of the same channel, side and index.
/// Absent fingerprint records are created and filled the same way.
pub fn impute_training(ds: &Dataset) -> Result<Dataset> {
    if ds.role != Role::Training {
        return Err(Error::invalid(
            "training imputation applied to an evaluation dataset",
        ));
    }
    if let Some(a) = ds.accesses.iter().find(|a| !a.label().is_known()) {
        return Err(Error::invalid(format!(
            "training access {} has an unknown label",
            a.id
        )));
    }

    let mut score_means: BTreeMap<(ChannelId, Label), Mean> = BTreeMap::new();
    let mut quality_means: BTreeMap<(ChannelId, bool, usize), Mean> = BTreeMap::new();
    for r in ds.records() {
        if let Some(s) = r.score {
            score_means.entry((r.channel, r.label)).or_default().add(s);
        }
        for (template, q) in [(true, &r.q_template), (false, &r.q_query)] {
            for (i, v) in q.0.iter().enumerate() {
                if let Some(v) = v {
                    quality_means
                        .entry(quality_key(r.channel, template, i))
                        .or_default()
                        .add(*v);
                }
            }
        }
    }

    let mut accesses = ds.accesses.clone();
    for a in &mut accesses {
        materialize_fingerprints(a);
        for r in &mut a.records {
            if r.score.is_none() {
                let mean = score_means
                    .get(&(r.channel, r.label))
                    .and_then(Mean::get)
                    .ok_or_else(|| Error::Imputation {
                        what: format!("{} {} scores", r.channel, r.label.code()),
                    })?;
                r.score = Some(mean);
            }
            let channel = r.channel;
            for (template, q) in [(true, &mut r.q_template), (false, &mut r.q_query)] {
                for (i, v) in q.0.iter_mut().enumerate() {
                    if v.is_none() {
                        let mean = quality_means
                            .get(&quality_key(channel, template, i))
                            .and_then(Mean::get)
                            .ok_or_else(|| Error::Imputation {
                                what: format!("{channel} quality {}", i + 1),
                            })?;
                        *v = Some(mean);
                    }
                }
            }
        }
    }
    Ok(Dataset::new(Role::Training, accesses))
}

/// Outcome of the missing-data policy for one evaluation access.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FusionDirective {
    /// Fuse the listed modalities.
    Fuse(ModalitySet),
    /// Skip fusion and emit this value as the fused score.
    EmitFused(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationImputation {
    pub access: Access,
    pub directive: FusionDirective,
}

fn face_usable(a: &Access) -> bool {
    a.face()
        .is_some_and(|r| r.score.is_some() && r.q_template.is_complete() && r.q_query.is_complete())
}

/// Resolves missing data in one evaluation access using only that access.
///
/// Missing fingerprint scores and qualities take the mean of the access's
/// remaining valid fingerprint values. A face record with a missing score or
/// quality value is excluded rather than imputed. A modality with nothing
/// valid is excluded, and with both excluded the directive is to emit `fallback`.
pub fn impute_evaluation(a: &Access, fallback: f64) -> EvaluationImputation {
    let mut access = a.clone();
    let face = face_usable(&access);

    let valid_scores: Vec<f64> = access.fingerprints().filter_map(|r| r.score).collect();
    let fingerprint = !valid_scores.is_empty();
    if fingerprint {
        materialize_fingerprints(&mut access);
        let score_mean = valid_scores.iter().sum::<f64>() / valid_scores.len() as f64;

        let mut quality_means: BTreeMap<(bool, usize), Mean> = BTreeMap::new();
        for r in access.fingerprints() {
            for (template, q) in [(true, &r.q_template), (false, &r.q_query)] {
                for (i, v) in q.0.iter().enumerate() {
                    if let Some(v) = v {
                        quality_means.entry((template, i)).or_default().add(*v);
                    }
                }
            }
        }

        for r in access
            .records
            .iter_mut()
            .filter(|r| r.channel.modality() == Modality::Fingerprint)
        {
            r.score.get_or_insert(score_mean);
            for (template, q) in [(true, &mut r.q_template), (false, &mut r.q_query)] {
                for (i, v) in q.0.iter_mut().enumerate() {
                    if v.is_none() {
                        *v = quality_means.get(&(template, i)).and_then(Mean::get);
                    }
                }
            }
        }
    }

    let set = ModalitySet { face, fingerprint };
    let directive = if set.is_empty() {
        FusionDirective::EmitFused(fallback)
    } else {
        FusionDirective::Fuse(set)
    };
    EvaluationImputation { access, directive }
}

/// Accesses used for training and testing, plus the held-back session 1 data.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSplit {
    pub train: Dataset,
    pub eval: Dataset,
    /// Session 1 of the training release; not used.
    pub unused_training: Vec<Access>,
    /// Session 1 of the evaluation release; reserved for user-adapted fusion, not used.
    pub unused_evaluation: Vec<Access>,
}

/// Keeps session 2 of each release. The two releases must not share access ids.
pub fn split_protocol(training: &Dataset, evaluation: &Dataset) -> Result<ProtocolSplit> {
    let partition = |ds: &Dataset| -> (Vec<Access>, Vec<Access>) {
        ds.accesses
            .iter()
            .cloned()
            .partition(|a| a.session() == Some(Session::Two))
    };
    let (train, unused_training) = partition(training);
    let (eval, unused_evaluation) = partition(evaluation);
    if train.is_empty() {
        return Err(Error::insufficient(
            "training release has no session 2 accesses",
        ));
    }
    if eval.is_empty() {
        return Err(Error::insufficient(
            "evaluation release has no session 2 accesses",
        ));
    }

    let training_ids: std::collections::BTreeSet<&str> =
        training.accesses.iter().map(|a| a.id.as_str()).collect();
    if let Some(a) = evaluation
        .accesses
        .iter()
        .find(|a| training_ids.contains(a.id.as_str()))
    {
        return Err(Error::Structural {
            access_id: a.id.clone(),
            reason: "appears in both the training and the evaluation release".into(),
        });
    }

    Ok(ProtocolSplit {
        train: Dataset::new(Role::Training, train),
        eval: Dataset::new(Role::Evaluation, eval),
        unused_training,
        unused_evaluation,
    })
}
