//! Query-device estimation from quality measures with quadratic discriminant
//! analysis.
//!
//! Face accesses are classified from a selection of the 14 query-image quality
//! measures. Fingerprint accesses use eight features derived from the
//! template/query qualities of the three fingers.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::datamodel::{Access, DeviceClass, Modality, QualityVector, FINGERS_PER_ACCESS};
use crate::error::{Error, Result};

/// Number of derived fingerprint quality features.
pub const FP_FEATURES: usize = 8;

/// Derived fingerprint features, in order:
/// 1. count of fingers with template quality above query quality,
/// 2. max query quality, 3. max |template - query|, 4. min query quality,
/// 5. min |template - query|, 6. mean query quality, 7. mean |template - query|,
/// 8. max (template - query).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpQualityFeatures(pub [f64; FP_FEATURES]);

pub fn derive_fp_features(q_templates: &[f64], q_queries: &[f64]) -> Result<FpQualityFeatures> {
    if q_templates.len() != FINGERS_PER_ACCESS || q_queries.len() != FINGERS_PER_ACCESS {
        return Err(Error::insufficient(format!(
            "fingerprint features need {FINGERS_PER_ACCESS} template/query quality pairs, got {}/{}",
            q_templates.len(),
            q_queries.len()
        )));
    }
    let n = FINGERS_PER_ACCESS as f64;
    let diff: Vec<f64> = q_templates
        .iter()
        .zip(q_queries)
        .map(|(t, q)| t - q)
        .collect();
    let abs: Vec<f64> = diff.iter().map(|d| d.abs()).collect();
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);

    Ok(FpQualityFeatures([
        diff.iter().filter(|&&d| d > 0.0).count() as f64,
        max(q_queries),
        max(&abs),
        min(q_queries),
        min(&abs),
        q_queries.iter().sum::<f64>() / n,
        abs.iter().sum::<f64>() / n,
        max(&diff),
    ]))
}

/// 1-based indices into a feature vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSelection(Vec<usize>);

impl FeatureSelection {
    pub fn new(indices: Vec<usize>, arity: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("empty feature selection"));
        }
        for (k, &i) in indices.iter().enumerate() {
            if i == 0 || i > arity {
                return Err(Error::invalid(format!(
                    "feature index {i} outside 1..={arity}"
                )));
            }
            if indices[..k].contains(&i) {
                return Err(Error::invalid(format!("feature index {i} repeated")));
            }
        }
        Ok(FeatureSelection(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn project(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.0
            .iter()
            .map(|&i| {
                features.get(i - 1).copied().ok_or_else(|| {
                    Error::invalid(format!("feature index {i} outside 1..={}", features.len()))
                })
            })
            .collect()
    }

    /// Best single face feature on the reference benchmark.
    pub fn default_face() -> Self {
        FeatureSelection(vec![8])
    }

    /// Best single derived fingerprint feature on the reference benchmark.
    pub fn default_fingerprint() -> Self {
        FeatureSelection(vec![2])
    }
}

pub fn select_face_features(qv: &QualityVector, sel: &FeatureSelection) -> Result<Vec<f64>> {
    if qv.len() != Modality::Face.quality_arity() {
        return Err(Error::Arity {
            channel: "face".into(),
            expected: Modality::Face.quality_arity(),
            got: qv.len(),
        });
    }
    sel.0
        .iter()
        .map(|&i| {
            if i == 0 || i > qv.len() {
                return Err(Error::invalid(format!(
                    "feature index {i} outside 1..={}",
                    qv.len()
                )));
            }
            qv.get(i - 1)
                .ok_or_else(|| Error::invalid(format!("face quality {i} is missing")))
        })
        .collect()
}

/// Face-path feature vector of an access (query-image qualities).
pub fn access_face_features(a: &Access, sel: &FeatureSelection) -> Option<Vec<f64>> {
    select_face_features(&a.face()?.q_query, sel).ok()
}

/// Fingerprint-path feature vector of an access; `None` when any of the
/// three quality pairs is missing.
pub fn access_fp_features(a: &Access, sel: &FeatureSelection) -> Option<Vec<f64>> {
    let mut t = Vec::with_capacity(FINGERS_PER_ACCESS);
    let mut q = Vec::with_capacity(FINGERS_PER_ACCESS);
    for r in a.fingerprints() {
        t.push(r.q_template.get(0)?);
        q.push(r.q_query.get(0)?);
    }
    let derived = derive_fp_features(&t, &q).ok()?;
    sel.project(&derived.0).ok()
}

/// Feature vectors of every access grouped by true device of `modality`;
/// accesses without a device or with incomplete qualities are skipped.
pub fn labeled_features(
    accesses: &[Access],
    modality: Modality,
    sel: &FeatureSelection,
) -> Vec<(DeviceClass, Vec<Vec<f64>>)> {
    let mut groups: BTreeMap<DeviceClass, Vec<Vec<f64>>> = BTreeMap::new();
    for a in accesses {
        let (device, features) = match modality {
            Modality::Face => (a.face_device(), access_face_features(a, sel)),
            Modality::Fingerprint => (a.fingerprint_device(), access_fp_features(a, sel)),
        };
        if let (Some(d), Some(f)) = (device, features) {
            groups.entry(d).or_default().push(f);
        }
    }
    groups.into_iter().collect()
}

/// Covariance ridge added to every class covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Regularization {
    /// `eps = factor * trace(cov) / d`.
    Relative(f64),
    Absolute(f64),
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::Relative(1e-6)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QdaClass {
    pub device: DeviceClass,
    pub mean: Vec<f64>,
    /// Row-major, symmetric positive definite.
    pub cov: Vec<Vec<f64>>,
    pub prior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QdaModel {
    pub classes: Vec<QdaClass>,
}

pub fn qda_fit(samples: &[(DeviceClass, Vec<Vec<f64>>)], reg: Regularization) -> Result<QdaModel> {
    if samples.len() < 2 {
        return Err(Error::insufficient("QDA needs at least two classes"));
    }
    let dim = samples[0]
        .1
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::insufficient(format!("class {} has no samples", samples[0].0)))?;
    if dim == 0 {
        return Err(Error::invalid(
            "QDA features must have dimension at least 1",
        ));
    }
    let total: usize = samples.iter().map(|(_, s)| s.len()).sum();

    let mut classes = Vec::with_capacity(samples.len());
    for (k, (device, xs)) in samples.iter().enumerate() {
        if samples[..k].iter().any(|(d, _)| d == device) {
            return Err(Error::invalid(format!("class {device} supplied twice")));
        }
        if xs.len() < dim + 1 {
            return Err(Error::insufficient(format!(
                "class {device} has {} samples, needs at least {}",
                xs.len(),
                dim + 1
            )));
        }
        if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        let n = xs.len() as f64;
        let mut mean = vec![0.0; dim];
        for x in xs {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);

        let mut cov = vec![vec![0.0; dim]; dim];
        for x in xs {
            for r in 0..dim {
                let dr = x[r] - mean[r];
                for c in 0..=r {
                    cov[r][c] += dr * (x[c] - mean[c]);
                }
            }
        }
        for r in 0..dim {
            for c in 0..=r {
                cov[r][c] /= n - 1.0;
                cov[c][r] = cov[r][c];
            }
        }
        let eps = match reg {
            Regularization::Relative(f) => {
                f * (0..dim).map(|i| cov[i][i]).sum::<f64>() / dim as f64
            }
            Regularization::Absolute(e) => e,
        };
        for (i, row) in cov.iter_mut().enumerate() {
            row[i] += eps;
        }
        if to_matrix(&cov).cholesky().is_none() {
            return Err(Error::insufficient(format!(
                "class {device} covariance is singular; increase the regularization"
            )));
        }

        classes.push(QdaClass {
            device: *device,
            mean,
            cov,
            prior: n / total as f64,
        });
    }
    Ok(QdaModel { classes })
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.len();
    DMatrix::from_fn(d, d, |r, c| rows[r][c])
}

/// Decision plus every class's log-discriminant, in model class order.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub device: DeviceClass,
    pub discriminants: Vec<(DeviceClass, f64)>,
}

impl QdaModel {
    pub fn dim(&self) -> usize {
        self.classes.first().map_or(0, |c| c.mean.len())
    }

    pub fn classify(&self, f: &[f64]) -> Result<Classification> {
        qda_classify(self, f)
    }

    /// Factors every covariance once for repeated classification.
    pub fn prepare(&self) -> Result<PreparedQda> {
        let classes = self
            .classes
            .iter()
            .map(|class| {
                let chol = to_matrix(&class.cov).cholesky().ok_or_else(|| {
                    Error::invalid(format!(
                        "class {} covariance is not positive definite",
                        class.device
                    ))
                })?;
                let half_log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
                Ok(PreparedClass {
                    device: class.device,
                    mean: DVector::from_column_slice(&class.mean),
                    chol,
                    offset: -half_log_det + class.prior.ln(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedQda {
            dim: self.dim(),
            classes,
        })
    }
}

struct PreparedClass {
    device: DeviceClass,
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    /// `-1/2 log|S_k| + log p_k`.
    offset: f64,
}

/// A [`QdaModel`] with factored covariances.
pub struct PreparedQda {
    dim: usize,
    classes: Vec<PreparedClass>,
}

impl PreparedQda {
    pub fn classify(&self, f: &[f64]) -> Result<Classification> {
        if f.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: f.len(),
            });
        }
        let x = DVector::from_column_slice(f);
        let discriminants: Vec<(DeviceClass, f64)> = self
            .classes
            .iter()
            .map(|c| {
                let diff = &x - &c.mean;
                (c.device, c.offset - 0.5 * diff.dot(&c.chol.solve(&diff)))
            })
            .collect();
        Ok(Classification {
            device: argmax_prefer_same_device(&discriminants),
            discriminants,
        })
    }
}

/// `g_k(f) = -1/2 log|S_k| - 1/2 (f - m_k)' S_k^-1 (f - m_k) + log p_k`.
pub fn qda_classify(m: &QdaModel, f: &[f64]) -> Result<Classification> {
    m.prepare()?.classify(f)
}

/// Exact ties go to the same-device class.
pub fn argmax_prefer_same_device(discriminants: &[(DeviceClass, f64)]) -> DeviceClass {
    let mut best = discriminants[0];
    for &(device, g) in &discriminants[1..] {
        if g > best.1 || (g == best.1 && best.0.is_cross() && !device.is_cross()) {
            best = (device, g);
        }
    }
    best.0
}

/// Posterior class probabilities from log-discriminants.
pub fn softmax(g: &[f64]) -> Vec<f64> {
    let top = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = g.iter().map(|v| (v - top).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Misclassification counts per true class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCount {
    pub errors: usize,
    pub total: usize,
}

impl ErrorCount {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.errors as f64 / self.total as f64
        }
    }
}

pub fn error_rates(
    m: &QdaModel,
    labeled: &[(DeviceClass, Vec<Vec<f64>>)],
) -> Result<BTreeMap<DeviceClass, ErrorCount>> {
    let prepared = m.prepare()?;
    let mut out = BTreeMap::new();
    for (device, xs) in labeled {
        let entry: &mut ErrorCount = out.entry(*device).or_default();
        for x in xs {
            entry.total += 1;
            if prepared.classify(x)?.device != *device {
                entry.errors += 1;
            }
        }
    }
    Ok(out)
}

/// One candidate feature subset with its estimation error rates.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetResult {
    pub selection: FeatureSelection,
    pub training: BTreeMap<DeviceClass, ErrorCount>,
    pub evaluation: Option<BTreeMap<DeviceClass, ErrorCount>>,
}

impl SubsetResult {
    /// Mean of the per-class training error rates.
    pub fn balanced_training_error(&self) -> f64 {
        let n = self.training.len().max(1) as f64;
        self.training.values().map(ErrorCount::rate).sum::<f64>() / n
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..=n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(1, n, k, &mut Vec::new(), &mut out);
    out
}

/// Fits a QDA model on every subset of 1..=`max_size` features and ranks the
/// subsets by balanced training error (ties keep enumeration order).
pub fn rank_feature_subsets(
    training: &[(DeviceClass, Vec<Vec<f64>>)],
    evaluation: Option<&[(DeviceClass, Vec<Vec<f64>>)]>,
    max_size: usize,
    reg: Regularization,
) -> Result<Vec<SubsetResult>> {
    let arity = training
        .iter()
        .find_map(|(_, xs)| xs.first().map(Vec::len))
        .ok_or_else(|| Error::insufficient("no training features"))?;
    let project = |sel: &FeatureSelection, data: &[(DeviceClass, Vec<Vec<f64>>)]| {
        data.iter()
            .map(|(d, xs)| {
                Ok((
                    *d,
                    xs.iter()
                        .map(|x| sel.project(x))
                        .collect::<Result<Vec<_>>>()?,
                ))
            })
            .collect::<Result<Vec<_>>>()
    };

    let mut results = Vec::new();
    for size in 1..=max_size.min(arity) {
        for indices in combinations(arity, size) {
            let selection = FeatureSelection::new(indices, arity)?;
            let train = project(&selection, training)?;
            let model = match qda_fit(&train, reg) {
                Ok(m) => m,
                Err(Error::InsufficientData(_)) => continue,
                Err(e) => return Err(e),
            };
            let training_errors = error_rates(&model, &train)?;
            let evaluation_errors = match evaluation {
                Some(data) => Some(error_rates(&model, &project(&selection, data)?)?),
                None => None,
            };
            results.push(SubsetResult {
                selection,
                training: training_errors,
                evaluation: evaluation_errors,
            });
        }
    }
    results.sort_by(|a, b| {
        a.balanced_training_error()
            .total_cmp(&b.balanced_training_error())
    });
    Ok(results)
}
