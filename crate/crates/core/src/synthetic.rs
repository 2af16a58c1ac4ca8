//! Seeded generator of protocol-shaped score sets with known properties.
//!
//! Scores are Gaussian per device condition and label, and every finger of a
//! device shares one law. Qualities come from a Gaussian cluster per device;
//! templates always use the same-device cluster. A corrupted record has its
//! score redrawn from the impostor law and its query quality from a
//! low-quality cluster. All randomness comes from one ChaCha8 stream seeded
//! from the spec.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    Access, ChannelId, Dataset, DeviceClass, Label, MixtureId, Modality, QualityVector, Role,
    ScoreRecord, Session, FACE_QUALITY_ARITY, FINGERPRINT_QUALITY_ARITY,
};
use crate::error::{Error, Result};
use crate::metrics::normal_cdf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaussian {
    pub mean: f64,
    pub sd: f64,
}

impl Gaussian {
    pub fn new(mean: f64, sd: f64) -> Self {
        Gaussian { mean, sd }
    }

    fn validate(&self, what: &str) -> Result<Normal<f64>> {
        if !self.mean.is_finite() || !(self.sd.is_finite() && self.sd > 0.0) {
            return Err(Error::Config(format!(
                "{what}: need a finite mean and sd > 0"
            )));
        }
        Normal::new(self.mean, self.sd).map_err(|e| Error::Config(format!("{what}: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreLaw {
    pub genuine: Gaussian,
    pub impostor: Gaussian,
}

impl ScoreLaw {
    /// Equal error rate of the two Gaussians: the crossing lies where both
    /// standardized distances agree, giving `Phi(-(mg - mi) / (sg + si))`.
    pub fn analytic_eer(&self) -> f64 {
        normal_cdf(-(self.genuine.mean - self.impostor.mean) / (self.genuine.sd + self.impostor.sd))
    }
}

/// Independent Gaussian per quality dimension, clamped at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityCluster {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl QualityCluster {
    pub fn uniform(dim: usize, mean: f64, sd: f64) -> Self {
        QualityCluster {
            mean: vec![mean; dim],
            sd: vec![sd; dim],
        }
    }

    fn sampler(&self, what: &str, arity: usize) -> Result<Vec<Normal<f64>>> {
        if self.mean.len() != arity || self.sd.len() != arity {
            return Err(Error::Config(format!(
                "{what}: expected {arity} dimensions"
            )));
        }
        self.mean
            .iter()
            .zip(&self.sd)
            .map(|(&m, &s)| Gaussian::new(m, s).validate(what))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerDevice<T> {
    pub fnf1: T,
    pub xfa1: T,
    pub fo: T,
    pub xft: T,
}

impl<T> PerDevice<T> {
    pub fn get(&self, d: DeviceClass) -> &T {
        match d {
            DeviceClass::FaceHighRes => &self.fnf1,
            DeviceClass::FaceCross => &self.xfa1,
            DeviceClass::FingerOptical => &self.fo,
            DeviceClass::FingerCross => &self.xft,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerModality<T> {
    pub face: T,
    pub fingerprint: T,
}

impl<T> PerModality<T> {
    pub fn get(&self, m: Modality) -> &T {
        match m {
            Modality::Face => &self.face,
            Modality::Fingerprint => &self.fingerprint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub seed: u64,
    /// Claimed identities; access ids cycle through them.
    pub subjects: u32,
    /// Genuine accesses per mixture, session and release.
    pub genuine_per_mixture: usize,
    /// Impostor accesses per mixture, session and release.
    pub impostor_per_mixture: usize,
    pub scores: PerDevice<ScoreLaw>,
    pub quality: PerDevice<QualityCluster>,
    pub low_quality: PerModality<QualityCluster>,
    /// Per-record corruption probability.
    pub corruption: PerModality<f64>,
    /// Per-channel probability that a record is missing.
    pub missing: PerModality<f64>,
}

fn face_cluster(dips: &[(usize, f64)]) -> QualityCluster {
    let mut c = QualityCluster::uniform(FACE_QUALITY_ARITY, 0.7, 0.1);
    for &(i, m) in dips {
        c.mean[i - 1] = m;
    }
    c
}

impl Default for SynthSpec {
    /// Heterogeneous benchmark: a weak face channel on a wide score scale
    /// with unequal class spreads, stronger fingerprints, cross-device
    /// conditions less separable, and one fingerprint record in five corrupted.
    fn default() -> Self {
        let law = |g: (f64, f64), i: (f64, f64)| ScoreLaw {
            genuine: Gaussian::new(g.0, g.1),
            impostor: Gaussian::new(i.0, i.1),
        };
        SynthSpec {
            seed: 20_100_101,
            subjects: 200,
            genuine_per_mixture: 400,
            impostor_per_mixture: 1200,
            scores: PerDevice {
                fnf1: law((15.0, 5.0), (0.0, 10.0)),
                xfa1: law((8.0, 6.0), (0.0, 10.0)),
                fo: law((3.0, 1.0), (0.0, 1.0)),
                xft: law((2.0, 1.2), (0.0, 1.0)),
            },
            quality: PerDevice {
                fnf1: face_cluster(&[]),
                xfa1: face_cluster(&[(6, 0.5), (8, 0.35), (9, 0.5)]),
                fo: QualityCluster::uniform(FINGERPRINT_QUALITY_ARITY, 0.7, 0.1),
                xft: QualityCluster::uniform(FINGERPRINT_QUALITY_ARITY, 0.55, 0.07),
            },
            low_quality: PerModality {
                face: QualityCluster::uniform(FACE_QUALITY_ARITY, 0.15, 0.05),
                fingerprint: QualityCluster::uniform(FINGERPRINT_QUALITY_ARITY, 0.12, 0.04),
            },
            corruption: PerModality {
                face: 0.05,
                fingerprint: 0.2,
            },
            missing: PerModality {
                face: 0.03,
                fingerprint: 0.02,
            },
        }
    }
}

struct Laws {
    genuine: Normal<f64>,
    impostor: Normal<f64>,
}

struct Samplers {
    laws: Vec<(DeviceClass, Laws)>,
    quality: Vec<(DeviceClass, Vec<Normal<f64>>)>,
    low: Vec<(Modality, Vec<Normal<f64>>)>,
}

impl Samplers {
    fn law(&self, d: DeviceClass) -> &Laws {
        &self
            .laws
            .iter()
            .find(|(k, _)| *k == d)
            .expect("every device has a law")
            .1
    }

    fn quality(&self, d: DeviceClass) -> &[Normal<f64>] {
        &self
            .quality
            .iter()
            .find(|(k, _)| *k == d)
            .expect("every device has a cluster")
            .1
    }

    fn low(&self, m: Modality) -> &[Normal<f64>] {
        &self
            .low
            .iter()
            .find(|(k, _)| *k == m)
            .expect("every modality has a cluster")
            .1
    }
}

fn check_probability(p: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} = {p} is not a probability")))
    }
}

impl SynthSpec {
    fn samplers(&self) -> Result<Samplers> {
        if self.subjects == 0 {
            return Err(Error::Config("subjects must be positive".into()));
        }
        if self.genuine_per_mixture == 0 || self.impostor_per_mixture == 0 {
            return Err(Error::Config(
                "both genuine and impostor counts must be positive".into(),
            ));
        }
        let mut laws = Vec::new();
        let mut quality = Vec::new();
        for d in DeviceClass::ALL {
            let law = self.scores.get(d);
            laws.push((
                d,
                Laws {
                    genuine: law.genuine.validate(&format!("scores.{d}.genuine"))?,
                    impostor: law.impostor.validate(&format!("scores.{d}.impostor"))?,
                },
            ));
            let arity = d.modality().quality_arity();
            quality.push((
                d,
                self.quality
                    .get(d)
                    .sampler(&format!("quality.{d}"), arity)?,
            ));
        }
        let mut low = Vec::new();
        for m in [Modality::Face, Modality::Fingerprint] {
            check_probability(*self.corruption.get(m), &format!("corruption.{}", m.code()))?;
            check_probability(*self.missing.get(m), &format!("missing.{}", m.code()))?;
            low.push((
                m,
                self.low_quality
                    .get(m)
                    .sampler(&format!("low_quality.{}", m.code()), m.quality_arity())?,
            ));
        }
        Ok(Samplers { laws, quality, low })
    }
}

/// Generated training and evaluation releases, both sessions each.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub training: Dataset,
    pub evaluation: Dataset,
}

fn draw_quality(rng: &mut ChaCha8Rng, cluster: &[Normal<f64>]) -> QualityVector {
    QualityVector::from_values(cluster.iter().map(|n| n.sample(rng).max(0.0)))
}

fn draw_record(
    rng: &mut ChaCha8Rng,
    spec: &SynthSpec,
    samplers: &Samplers,
    base: &ScoreRecord,
    device: DeviceClass,
) -> ScoreRecord {
    let modality = device.modality();
    let law = samplers.law(device);
    let missing = rng.random::<f64>() < *spec.missing.get(modality);
    let corrupted = rng.random::<f64>() < *spec.corruption.get(modality);
    let genuine = base.label == Label::Target && !corrupted;
    let score = if genuine {
        law.genuine.sample(rng)
    } else {
        law.impostor.sample(rng)
    };
    let q_template = draw_quality(rng, samplers.quality(modality.same_device()));
    let q_query = if corrupted {
        draw_quality(rng, samplers.low(modality))
    } else {
        draw_quality(rng, samplers.quality(device))
    };
    if missing {
        let empty = QualityVector(vec![None; modality.quality_arity()]);
        return ScoreRecord {
            device_true: Some(device),
            score: None,
            q_template: empty.clone(),
            q_query: empty,
            ..base.clone()
        };
    }
    ScoreRecord {
        device_true: Some(device),
        score: Some(score),
        q_template,
        q_query,
        ..base.clone()
    }
}

fn release(rng: &mut ChaCha8Rng, spec: &SynthSpec, samplers: &Samplers, role: Role) -> Dataset {
    let prefix = match role {
        Role::Training => "dev",
        Role::Evaluation => "eva",
    };
    let mut accesses = Vec::new();
    for session in [Session::One, Session::Two] {
        for mixture in MixtureId::ALL {
            let counts = [
                (Label::Target, spec.genuine_per_mixture, 'g'),
                (Label::NonTarget, spec.impostor_per_mixture, 'i'),
            ];
            for (label, n, tag) in counts {
                for k in 0..n {
                    let subject = k as u64 % u64::from(spec.subjects);
                    let id = format!(
                        "{prefix}-s{}-m{}-u{subject:04}-{tag}{k:05}",
                        session.number(),
                        mixture.id()
                    );
                    let records = ChannelId::ALL
                        .into_iter()
                        .map(|channel| {
                            let device = match channel.modality() {
                                Modality::Face => mixture.face_device(),
                                Modality::Fingerprint => mixture.fingerprint_device(),
                            };
                            let base = ScoreRecord {
                                access_id: id.clone(),
                                session,
                                channel,
                                device_true: None,
                                score: None,
                                q_template: QualityVector(Vec::new()),
                                q_query: QualityVector(Vec::new()),
                                label,
                            };
                            draw_record(rng, spec, samplers, &base, device)
                        })
                        .collect();
                    accesses.push(Access {
                        id,
                        records,
                        mixture: Some(mixture),
                    });
                }
            }
        }
    }
    Dataset::new(role, accesses)
}

pub fn gen_dataset(spec: &SynthSpec) -> Result<SyntheticCorpus> {
    let samplers = spec.samplers()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let training = release(&mut rng, spec, &samplers, Role::Training);
    let evaluation = release(&mut rng, spec, &samplers, Role::Evaluation);
    Ok(SyntheticCorpus {
        training,
        evaluation,
    })
}

/// `n` draws from a Gaussian.
pub fn gaussian_scores(rng: &mut ChaCha8Rng, law: Gaussian, n: usize) -> Result<Vec<f64>> {
    let normal = law.validate("score law")?;
    Ok((0..n).map(|_| normal.sample(rng)).collect())
}

/// Genuine and impostor scores of one channel, genuine drawn first.
pub fn two_class_scores(
    seed: u64,
    law: ScoreLaw,
    n_genuine: usize,
    n_impostor: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let genuine = gaussian_scores(&mut rng, law.genuine, n_genuine)?;
    let impostor = gaussian_scores(&mut rng, law.impostor, n_impostor)?;
    Ok((genuine, impostor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::validate_access;
    use crate::metrics::eer;

    fn small() -> SynthSpec {
        SynthSpec {
            genuine_per_mixture: 20,
            impostor_per_mixture: 30,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = gen_dataset(&small()).unwrap();
        let b = gen_dataset(&small()).unwrap();
        assert_eq!(a, b);
        let c = gen_dataset(&SynthSpec { seed: 7, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn corpus_has_protocol_shape() {
        let c = gen_dataset(&small()).unwrap();
        for ds in [&c.training, &c.evaluation] {
            assert_eq!(ds.accesses.len(), 2 * 4 * 50);
            assert_eq!(ds.n_target(), 2 * 4 * 20);
            for a in &ds.accesses {
                assert!(
                    validate_access(a).is_empty(),
                    "{}: {:?}",
                    a.id,
                    validate_access(a)
                );
                assert_eq!(a.implied_mixture(), a.mixture);
            }
        }
    }

    #[test]
    fn zero_missing_rate_leaves_nothing_missing() {
        let spec = SynthSpec {
            missing: PerModality {
                face: 0.0,
                fingerprint: 0.0,
            },
            ..small()
        };
        let c = gen_dataset(&spec).unwrap();
        assert!(c
            .training
            .records()
            .all(|r| r.score.is_some() && r.q_query.is_complete()));
    }

    #[test]
    fn corrupted_records_have_low_quality() {
        let spec = SynthSpec {
            corruption: PerModality {
                face: 0.0,
                fingerprint: 1.0,
            },
            ..small()
        };
        let c = gen_dataset(&spec).unwrap();
        let q: Vec<f64> = c
            .training
            .records()
            .filter(|r| r.channel.modality() == Modality::Fingerprint)
            .filter_map(|r| r.q_query.get(0))
            .collect();
        let mean = q.iter().sum::<f64>() / q.len() as f64;
        assert!((mean - 0.12).abs() < 0.02, "{mean}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = small();
        s.scores.fo.genuine.sd = 0.0;
        assert!(matches!(gen_dataset(&s), Err(Error::Config(_))));
        let mut s = small();
        s.corruption.face = 1.5;
        assert!(gen_dataset(&s).is_err());
        let mut s = small();
        s.quality.fnf1.mean.pop();
        assert!(gen_dataset(&s).is_err());
    }

    #[test]
    fn analytic_eer_matches_known_values() {
        let law = ScoreLaw {
            genuine: Gaussian::new(1.0, 1.0),
            impostor: Gaussian::new(-1.0, 1.0),
        };
        assert!((law.analytic_eer() - 0.158_655_253_931_457).abs() < 1e-12);
    }

    #[test]
    fn single_channel_eer_matches_oracle() {
        let law = ScoreLaw {
            genuine: Gaussian::new(1.0, 1.0),
            impostor: Gaussian::new(-1.0, 1.0),
        };
        let (g, i) = two_class_scores(11, law, 100_000, 100_000).unwrap();
        let e = eer(&g, &i).unwrap().rate;
        assert!((e - law.analytic_eer()).abs() < 0.005, "{e}");
    }

    #[test]
    fn unequal_spreads_match_oracle() {
        let law = SynthSpec::default().scores.xft;
        let (g, i) = two_class_scores(5, law, 100_000, 100_000).unwrap();
        let e = eer(&g, &i).unwrap().rate;
        assert!(
            (e - law.analytic_eer()).abs() < 0.005,
            "{e} vs {}",
            law.analytic_eer()
        );
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let s = SynthSpec::default();
        let text = toml::to_string(&s).unwrap();
        let back: SynthSpec = toml::from_str(&text).unwrap();
        assert_eq!(s, back);
        assert!(toml::from_str::<SynthSpec>("bogus = 1").is_err());
    }
}
