//! Verification error rates: FAR/FRR curves, EER, HTER and DET points.
//!
//! Conventions: a score `s` is accepted at threshold `t` when `s >= t`, so
//! FAR(t) is the fraction of impostor scores `>= t` and FRR(t) the fraction of
//! genuine scores `< t`. The EER is read off the curve by linear interpolation
//! between the two curve points that bracket the FAR/FRR crossing.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// FAR/FRR sampled at every distinct pooled score plus the two infinite sentinels.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub thresholds: Vec<f64>,
    pub far: Vec<f64>,
    pub frr: Vec<f64>,
}

fn check_nonempty(genuine: &[f64], impostor: &[f64]) -> Result<()> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::insufficient(
            "error rates need at least one genuine and one impostor score",
        ));
    }
    if genuine.iter().chain(impostor).any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite score"));
    }
    Ok(())
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn far_frr_curve(genuine: &[f64], impostor: &[f64]) -> Result<ErrorCurve> {
    check_nonempty(genuine, impostor)?;
    let g = sorted(genuine);
    let i = sorted(impostor);
    let (ng, ni) = (g.len() as f64, i.len() as f64);

    let mut thresholds = Vec::with_capacity(g.len() + i.len() + 2);
    thresholds.push(f64::NEG_INFINITY);
    let (mut gi, mut ii) = (0, 0);
    while gi < g.len() || ii < i.len() {
        let next = match (g.get(gi), i.get(ii)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        if thresholds.last() != Some(&next) {
            thresholds.push(next);
        }
        while g.get(gi) == Some(&next) {
            gi += 1;
        }
        while i.get(ii) == Some(&next) {
            ii += 1;
        }
    }
    thresholds.push(f64::INFINITY);

    // Both pointers walk the sorted lists once: count of scores strictly below t.
    let mut far = Vec::with_capacity(thresholds.len());
    let mut frr = Vec::with_capacity(thresholds.len());
    let (mut below_g, mut below_i) = (0usize, 0usize);
    for &t in &thresholds {
        while below_g < g.len() && g[below_g] < t {
            below_g += 1;
        }
        while below_i < i.len() && i[below_i] < t {
            below_i += 1;
        }
        far.push((i.len() - below_i) as f64 / ni);
        frr.push(below_g as f64 / ng);
    }

    Ok(ErrorCurve {
        thresholds,
        far,
        frr,
    })
}

/// Equal error rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eer {
    pub rate: f64,
    pub threshold: f64,
}

pub fn eer(genuine: &[f64], impostor: &[f64]) -> Result<Eer> {
    Ok(eer_from_curve(&far_frr_curve(genuine, impostor)?))
}

pub fn eer_from_curve(curve: &ErrorCurve) -> Eer {
    let ErrorCurve {
        thresholds,
        far,
        frr,
    } = curve;
    // FAR - FRR falls from >= 0 at -inf to <= 0 at +inf.
    let gap = |k: usize| far[k] - frr[k];
    let n = thresholds.len();
    for k in 0..n {
        let d = gap(k);
        if d == 0.0 {
            return Eer {
                rate: far[k],
                threshold: finite_threshold(thresholds, k),
            };
        }
        if d < 0.0 {
            // k >= 1 because gap(0) = 1 - 0 > 0.
            let j = k - 1;
            let (d0, d1) = (gap(j), d);
            let alpha = d0 / (d0 - d1);
            let rate = far[j] + alpha * (far[k] - far[j]);
            let (t0, t1) = (thresholds[j], thresholds[k]);
            let threshold = match (t0.is_finite(), t1.is_finite()) {
                (true, true) => t0 + alpha * (t1 - t0),
                (false, true) => t1,
                (true, false) => t0,
                (false, false) => 0.0,
            };
            return Eer { rate, threshold };
        }
    }
    unreachable!("FAR - FRR is -1 at +inf")
}

fn finite_threshold(thresholds: &[f64], k: usize) -> f64 {
    let t = thresholds[k];
    if t.is_finite() {
        return t;
    }
    let finite: Vec<f64> = thresholds
        .iter()
        .copied()
        .filter(|t| t.is_finite())
        .collect();
    if t < 0.0 {
        finite.first().copied().unwrap_or(0.0)
    } else {
        finite.last().copied().unwrap_or(0.0)
    }
}

/// FAR and FRR at one threshold, by direct counting.
pub fn rates_at(genuine: &[f64], impostor: &[f64], threshold: f64) -> Result<(f64, f64)> {
    check_nonempty(genuine, impostor)?;
    let far = impostor.iter().filter(|&&s| s >= threshold).count() as f64 / impostor.len() as f64;
    let frr = genuine.iter().filter(|&&s| s < threshold).count() as f64 / genuine.len() as f64;
    Ok((far, frr))
}

/// Half total error rate at a pre-committed threshold.
pub fn hter(genuine: &[f64], impostor: &[f64], threshold: f64) -> Result<f64> {
    let (far, frr) = rates_at(genuine, impostor, threshold)?;
    Ok(0.5 * (far + frr))
}

/// Clipping bound applied before the probit warp.
pub const DET_CLIP: f64 = 1e-6;

pub fn det_points(far: &[f64], frr: &[f64]) -> Vec<(f64, f64)> {
    let clip = |p: f64| p.clamp(DET_CLIP, 1.0 - DET_CLIP);
    far.iter()
        .zip(frr)
        .map(|(&a, &r)| (probit(clip(a)), probit(clip(r))))
        .collect()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse standard normal CDF.
///
/// Acklam's rational approximation (relative error ~1.2e-9) followed by one
/// Halley refinement step against `erfc`, giving close to full double precision.
pub fn probit(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }

    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Summary of one score set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub curve: ErrorCurve,
    pub eer: Eer,
    /// HTER at each requested threshold, in request order.
    pub hter_at: Vec<(f64, f64)>,
    pub det_points: Vec<(f64, f64)>,
}

pub fn evaluate(genuine: &[f64], impostor: &[f64], hter_thresholds: &[f64]) -> Result<EvalReport> {
    let curve = far_frr_curve(genuine, impostor)?;
    let eer = eer_from_curve(&curve);
    let hter_at = hter_thresholds
        .iter()
        .map(|&t| hter(genuine, impostor, t).map(|h| (t, h)))
        .collect::<Result<_>>()?;
    let det_points = det_points(&curve.far, &curve.frr);
    Ok(EvalReport {
        curve,
        eer,
        hter_at,
        det_points,
    })
}

impl EvalReport {
    /// `threshold,far,frr` lines with a header.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("threshold,far,frr\n");
        for ((t, a), r) in self
            .curve
            .thresholds
            .iter()
            .zip(&self.curve.far)
            .zip(&self.curve.frr)
        {
            let _ = writeln!(out, "{t},{a},{r}");
        }
        out
    }

    /// `probit_far,probit_frr` lines with a header.
    pub fn det_csv(&self) -> String {
        let mut out = String::from("probit_far,probit_frr\n");
        for (x, y) in &self.det_points {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }
}
