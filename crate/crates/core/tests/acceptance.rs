//! Acceptance criteria, one test per criterion. Each test prints a single
//! `criterion N: PASS|FAIL ...` line (visible with `--nocapture`) before
//! asserting.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use qfusion::calibration::{
    clr_gradient, clr_objective, train_calibrator, Calibrator, TrainingConfig,
};
use qfusion::cli;
use qfusion::datamodel::{
    Access, ChannelId, DeviceClass, Label, Modality, QualityVector, ScoreRecord, Session,
};
use qfusion::device_inference::{argmax_prefer_same_device, qda_fit, Regularization};
use qfusion::fusion::{
    fuse_llr_sum, run_batch, run_pipeline, split_by_label, train_models, DeviceMode, FusionRule,
    ModelConfig, PipelineConfig,
};
use qfusion::ingestion::{impute_training, split_protocol};
use qfusion::metrics::{eer, normal_cdf};
use qfusion::normalization::fit_tanh;
use qfusion::quality_gate::{auto_thresholds, GateThresholds};
use qfusion::synthetic::{
    gaussian_scores, gen_dataset, two_class_scores, Gaussian, ScoreLaw, SynthSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, pass: bool, detail: String) {
    println!(
        "criterion {n}: {} {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn unit_law() -> ScoreLaw {
    ScoreLaw {
        genuine: Gaussian::new(1.0, 1.0),
        impostor: Gaussian::new(-1.0, 1.0),
    }
}

fn wrap(v: &[f64]) -> Vec<[f64; 1]> {
    v.iter().map(|&x| [x]).collect()
}

#[test]
fn criterion_01_single_channel_eer() {
    let start = Instant::now();
    let (g, i) = two_class_scores(101, unit_law(), 50_000, 50_000).unwrap();
    let e = eer(&g, &i).unwrap().rate;
    let elapsed = start.elapsed();
    let oracle = normal_cdf(-1.0);
    let pass = (e - oracle).abs() <= 0.005 && elapsed < Duration::from_secs(5);
    report(
        1,
        pass,
        format!("eer={e:.5} oracle={oracle:.5} time={elapsed:?}"),
    );
    assert!(pass);
}

fn recovery_data() -> (Vec<f64>, Vec<f64>) {
    two_class_scores(202, unit_law(), 100_000, 100_000).unwrap()
}

#[test]
fn criterion_02_calibrator_recovery() {
    let (g, i) = recovery_data();
    let (t, n) = (wrap(&g), wrap(&i));
    let cfg = TrainingConfig::default();
    let cal = train_calibrator(&t, &n, &cfg).unwrap();
    let objective = clr_objective(&cal, &t, &n, cfg.prior).unwrap();
    let grad = clr_gradient(&cal, &t, &n, cfg.prior).unwrap();
    let grad_inf = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let pass = cal.intercept.abs() <= 0.05
        && (cal.weights[0] - 2.0).abs() <= 0.05
        && objective <= std::f64::consts::LN_2
        && grad_inf <= 1e-8;
    report(
        2,
        pass,
        format!(
            "a0={:.4} a1={:.4} C={objective:.5} |grad|inf={grad_inf:e}",
            cal.intercept, cal.weights[0]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_llr_sum_of_four_channels() {
    let n = 100_000;
    let cfg = TrainingConfig::default();
    let mut fused_g = vec![0.0; n];
    let mut fused_i = vec![0.0; n];
    for channel in 0..4u64 {
        let (tg, ti) = two_class_scores(300 + channel, unit_law(), n, n).unwrap();
        let cal = train_calibrator(&wrap(&tg), &wrap(&ti), &cfg).unwrap();
        let (eg, ei) = two_class_scores(400 + channel, unit_law(), n, n).unwrap();
        for (acc, s) in fused_g.iter_mut().zip(&eg) {
            *acc = fuse_llr_sum(&[*acc, cal.apply(&[*s]).unwrap()]).unwrap();
        }
        for (acc, s) in fused_i.iter_mut().zip(&ei) {
            *acc = fuse_llr_sum(&[*acc, cal.apply(&[*s]).unwrap()]).unwrap();
        }
    }
    let e = eer(&fused_g, &fused_i).unwrap().rate;
    let oracle = normal_cdf(-2.0);
    let pass = (e - oracle).abs() <= 0.004;
    report(3, pass, format!("eer={e:.5} oracle={oracle:.5}"));
    assert!(pass);
}

#[test]
fn criterion_04_rank_invariance() {
    let (g, i) = recovery_data();
    let cal = train_calibrator(
        &wrap(&g[..20_000]),
        &wrap(&i[..20_000]),
        &TrainingConfig::default(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut failures = 0;
    for _ in 0..1000 {
        let ng = rng.random_range(2..=20);
        let ni = rng.random_range(2..=20);
        let g = gaussian_scores(&mut rng, Gaussian::new(1.0, 1.0), ng).unwrap();
        let i = gaussian_scores(&mut rng, Gaussian::new(-1.0, 1.0), ni).unwrap();
        let raw = eer(&g, &i).unwrap().rate;

        let calibrated =
            |v: &[f64]| -> Vec<f64> { v.iter().map(|&s| cal.apply(&[s]).unwrap()).collect() };
        let c = eer(&calibrated(&g), &calibrated(&i)).unwrap().rate;

        let norm = fit_tanh(&g).unwrap();
        let normalized = |v: &[f64]| -> Vec<f64> { v.iter().map(|&s| norm.apply(s)).collect() };
        let t = eer(&normalized(&g), &normalized(&i)).unwrap().rate;

        if c != raw || t != raw {
            failures += 1;
        }
    }
    let pass = failures == 0 && cal.weights[0] > 0.0;
    report(4, pass, format!("1000 sets, {failures} mismatches"));
    assert!(pass);
}

/// FAR and FRR at every pooled score plus both infinities, by direct counting.
fn brute_curve(g: &[f64], i: &[f64]) -> Vec<(f64, f64)> {
    let mut thresholds: Vec<f64> = g.iter().chain(i).copied().collect();
    thresholds.push(f64::NEG_INFINITY);
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds
        .iter()
        .map(|&t| {
            let far = i.iter().filter(|&&s| s >= t).count() as f64 / i.len() as f64;
            let frr = g.iter().filter(|&&s| s < t).count() as f64 / g.len() as f64;
            (far, frr)
        })
        .collect()
}

#[test]
fn criterion_05_eer_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut failures = Vec::new();
    let instances = 1000;
    for k in 0..instances {
        let ng = rng.random_range(1..=10);
        let ni = rng.random_range(1..=10);
        let discrete = k % 2 == 0;
        let mut draw = |n: usize, shift: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    if discrete {
                        f64::from(rng.random_range(0..6u8))
                    } else {
                        rng.random::<f64>() * 4.0 - 2.0 + shift
                    }
                })
                .collect()
        };
        let g = draw(ng, 0.5);
        let i = draw(ni, -0.5);
        let e = eer(&g, &i).unwrap().rate;
        let curve = brute_curve(&g, &i);
        let minimax = curve
            .iter()
            .map(|(a, r)| a.max(*r))
            .fold(f64::INFINITY, f64::min);

        let ok = if let Some(&(far, _)) = curve.iter().find(|(a, r)| a == r) {
            (e - far).abs() <= 1e-9
        } else {
            let k = curve
                .iter()
                .position(|(a, r)| a < r)
                .expect("FAR ends below FRR");
            let (a0, r0) = curve[k - 1];
            let (a1, r1) = curve[k];
            let lo = r0.max(a1);
            let hi = a0.min(r1);
            e >= lo - 1e-12 && e <= hi + 1e-12 && e <= minimax + 1e-12
        };
        if !ok {
            failures.push((g, i, e));
        }
    }
    let pass = failures.is_empty();
    report(
        5,
        pass,
        format!(
            "{instances} instances, {} outside the bracket",
            failures.len()
        ),
    );
    assert!(pass, "{:?}", failures.first());
}

#[test]
fn criterion_06_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let dim = rng.random_range(1..=4);
        let mut vectors = |n: usize, shift: f64| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| {
                    (0..dim)
                        .map(|_| rng.random::<f64>() * 2.0 - 1.0 + shift)
                        .collect()
                })
                .collect()
        };
        let targets = vectors(30, 0.3);
        let nontargets = vectors(40, -0.3);
        let params: Vec<f64> = (0..=dim).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let prior = 0.1 + 0.8 * rng.random::<f64>();
        let lambda = (prior / (1.0 - prior)).ln();
        let cal = Calibrator::from_params(&params, lambda);
        let grad = clr_gradient(&cal, &targets, &nontargets, prior).unwrap();

        let mut diff = 0.0f64;
        let mut scale = 0.0f64;
        for j in 0..params.len() {
            let mut up = params.clone();
            let mut down = params.clone();
            up[j] += h;
            down[j] -= h;
            let cu = clr_objective(
                &Calibrator::from_params(&up, lambda),
                &targets,
                &nontargets,
                prior,
            )
            .unwrap();
            let cd = clr_objective(
                &Calibrator::from_params(&down, lambda),
                &targets,
                &nontargets,
                prior,
            )
            .unwrap();
            let fd = (cu - cd) / (2.0 * h);
            diff += (grad[j] - fd).powi(2);
            scale += grad[j].powi(2).max(fd.powi(2));
        }
        worst = worst.max(diff.sqrt() / scale.sqrt().max(f64::MIN_POSITIVE));
    }
    let pass = worst < 1e-5;
    report(
        6,
        pass,
        format!("100 points, worst relative error {worst:e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_zero_information_channel() {
    let n = 100_000;
    let cfg = TrainingConfig::default();
    let noise = ScoreLaw {
        genuine: Gaussian::new(0.0, 1.0),
        impostor: Gaussian::new(0.0, 1.0),
    };
    let (train_g, train_i) = two_class_scores(701, unit_law(), n, n).unwrap();
    let (train_zg, train_zi) = two_class_scores(702, noise, n, n).unwrap();
    let (g, i) = two_class_scores(703, unit_law(), n, n).unwrap();
    let (zg, zi) = two_class_scores(704, noise, n, n).unwrap();

    let cal = train_calibrator(&wrap(&train_g), &wrap(&train_i), &cfg).unwrap();
    let zcal = train_calibrator(&wrap(&train_zg), &wrap(&train_zi), &cfg).unwrap();
    let fuse = |s: &[f64], z: &[f64]| -> Vec<f64> {
        s.iter()
            .zip(z)
            .map(|(&a, &b)| {
                fuse_llr_sum(&[cal.apply(&[a]).unwrap(), zcal.apply(&[b]).unwrap()]).unwrap()
            })
            .collect()
    };
    let alone = eer(&g, &i).unwrap().rate;
    let llr_sum = eer(&fuse(&g, &zg), &fuse(&i, &zi)).unwrap().rate;

    let norm = fit_tanh(&train_g).unwrap();
    let znorm = fit_tanh(&train_zg).unwrap();
    let mean = |s: &[f64], z: &[f64]| -> Vec<f64> {
        s.iter()
            .zip(z)
            .map(|(&a, &b)| 0.5 * (norm.apply(a) + znorm.apply(b)))
            .collect()
    };
    let tanh_mean = eer(&mean(&g, &zg), &mean(&i, &zi)).unwrap().rate;

    let pass = (llr_sum - alone).abs() < 0.01 && llr_sum <= tanh_mean;
    report(
        7,
        pass,
        format!(
            "alone={alone:.5} llr-sum={llr_sum:.5} tanh-mean={tanh_mean:.5} |a1 noise|={:.4}",
            zcal.weights[0].abs()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_device_inference() {
    // Identity covariances, equal priors: Bayes error = Phi(-d / 2).
    let d = 2.0 * 1.644_853_626_951_472_2;
    let bayes = normal_cdf(-d / 2.0);
    let axis = d / 2.0_f64.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut cluster = |n: usize, centre: f64| -> Vec<Vec<f64>> {
        let x = gaussian_scores(&mut rng, Gaussian::new(centre, 1.0), 2 * n).unwrap();
        x.chunks(2).map(<[f64]>::to_vec).collect()
    };
    let train = vec![
        (DeviceClass::FingerOptical, cluster(5000, 0.0)),
        (DeviceClass::FingerCross, cluster(5000, axis)),
    ];
    let test = [
        (DeviceClass::FingerOptical, cluster(5000, 0.0)),
        (DeviceClass::FingerCross, cluster(5000, axis)),
    ];
    let model = qda_fit(&train, Regularization::default()).unwrap();
    let prepared = model.prepare().unwrap();

    let mut errors = 0;
    let mut shift_mismatches = 0;
    let shifts = [-1e3, -7.5, 0.25, 42.0, 1e3];
    for (device, xs) in &test {
        for x in xs {
            let c = prepared.classify(x).unwrap();
            if c.device != *device {
                errors += 1;
            }
            for s in shifts {
                let shifted: Vec<(DeviceClass, f64)> =
                    c.discriminants.iter().map(|&(k, g)| (k, g + s)).collect();
                if argmax_prefer_same_device(&shifted) != c.device {
                    shift_mismatches += 1;
                }
            }
        }
    }
    let rate = errors as f64 / 10_000.0;
    let pass = (rate - bayes).abs() <= 0.01 && shift_mismatches == 0;
    report(
        8,
        pass,
        format!("error={rate:.4} bayes={bayes:.4} shift mismatches={shift_mismatches}"),
    );
    assert!(pass);
}

#[test]
fn criterion_09_quality_gate() {
    let spec = SynthSpec::default();
    assert_eq!(spec.corruption.fingerprint, 0.2);
    let corpus = gen_dataset(&spec).unwrap();
    let split = split_protocol(&corpus.training, &corpus.evaluation).unwrap();
    let model_cfg = ModelConfig::default();
    let mode = DeviceMode::Inferred;
    let rule = FusionRule::LlrSum;

    let fused_eer = |gate: Option<GateThresholds>| -> (f64, Vec<u64>) {
        let models = train_models(&split.train, &model_cfg, gate.as_ref()).unwrap();
        let cfg = PipelineConfig::new(rule, mode)
            .with_gate(gate)
            .with_training_fallback(&models)
            .unwrap();
        let out = run_batch(&split.eval.accesses, &cfg, &models).unwrap();
        let (g, i) = split_by_label(&out);
        (
            eer(&g, &i).unwrap().rate,
            out.iter().map(|o| o.fused.to_bits()).collect(),
        )
    };

    let (auto, _) = auto_thresholds(&impute_training(&split.train).unwrap(), 1).unwrap();
    let (ungated, absent_bits) = fused_eer(None);
    let (gated, _) = fused_eer(Some(auto));
    let (_, off_bits) = fused_eer(Some(GateThresholds::default()));
    let improvement = (ungated - gated) / ungated;
    let pass = gated < ungated && improvement >= 0.10 && off_bits == absent_bits;
    report(
        9,
        pass,
        format!(
            "ungated={ungated:.5} gated={gated:.5} relative improvement={:.1}% off==absent={}",
            100.0 * improvement,
            off_bits == absent_bits
        ),
    );
    assert!(pass);
}

fn empty_access(id: &str) -> Access {
    let records = ChannelId::ALL
        .into_iter()
        .map(|channel| {
            let device = match channel.modality() {
                Modality::Face => DeviceClass::FaceHighRes,
                Modality::Fingerprint => DeviceClass::FingerOptical,
            };
            ScoreRecord {
                access_id: id.to_string(),
                session: Session::Two,
                channel,
                device_true: Some(device),
                score: None,
                q_template: QualityVector(vec![None; channel.quality_arity()]),
                q_query: QualityVector(vec![None; channel.quality_arity()]),
                label: Label::Unknown,
            }
        })
        .collect();
    Access {
        id: id.to_string(),
        records,
        mixture: None,
    }
}

#[test]
fn criterion_10_fallback_policies() {
    let spec = SynthSpec {
        genuine_per_mixture: 60,
        impostor_per_mixture: 120,
        ..SynthSpec::default()
    };
    let corpus = gen_dataset(&spec).unwrap();
    let split = split_protocol(&corpus.training, &corpus.evaluation).unwrap();
    let models = train_models(&split.train, &ModelConfig::default(), None).unwrap();
    let imputed = impute_training(&split.train).unwrap();
    let missing = empty_access("all-missing");

    // The whole access rejected by the gate takes the same path.
    let mut gated_out = split.eval.accesses[0].clone();
    gated_out.id = "all-rejected".into();
    let reject_all = DeviceClass::ALL
        .into_iter()
        .fold(GateThresholds::default(), |g, d| g.with(d, f64::INFINITY));

    let mut lines = Vec::new();
    let mut pass = true;
    for rule in FusionRule::ALL {
        for mode in [DeviceMode::Oracle, DeviceMode::Pooled] {
            let expected = if rule.is_llr() {
                0.0
            } else {
                let plain = PipelineConfig::new(rule, mode);
                let out = run_batch(&imputed.accesses, &plain, &models).unwrap();
                let (g, i) = split_by_label(&out);
                eer(&g, &i).unwrap().threshold
            };
            let cfg = PipelineConfig::new(rule, mode)
                .with_training_fallback(&models)
                .unwrap();
            let a = run_pipeline(&missing, &cfg, &models).unwrap().fused;
            let b = run_pipeline(
                &gated_out,
                &cfg.clone().with_gate(Some(reject_all.clone())),
                &models,
            )
            .unwrap()
            .fused;
            pass &= a == expected && b == expected;
            lines.push(format!("{rule}/{mode}={a}"));
        }
    }
    report(10, pass, lines.join(" "));
    assert!(pass);
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        out.insert(
            path.file_name().unwrap().to_string_lossy().into_owned(),
            fs::read(&path).unwrap(),
        );
    }
    out
}

#[test]
fn criterion_11_determinism_and_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out_arg = out.to_str().unwrap().to_string();
    let run_all = || -> (Duration, bool) {
        let start = Instant::now();
        let ok = ["gen", "train", "fuse", "eval"].iter().all(|cmd| {
            cli::run([
                "qfusion",
                "--out",
                out_arg.as_str(),
                "--seed",
                "20100101",
                cmd,
            ]) == 0
        });
        (start.elapsed(), ok)
    };

    let (first_time, first_ok) = run_all();
    let first = read_tree(&out);
    fs::remove_dir_all(&out).unwrap();
    let (second_time, second_ok) = run_all();
    let second = read_tree(&out);

    let differing: Vec<&String> = first
        .keys()
        .filter(|k| second.get(*k) != first.get(*k))
        .chain(second.keys().filter(|k| !first.contains_key(*k)))
        .collect();
    let pass = first_ok
        && second_ok
        && differing.is_empty()
        && first.len() >= 10
        && first_time < Duration::from_secs(60);
    report(
        11,
        pass,
        format!(
            "{} artifacts, differing={differing:?}, runs {first_time:?} / {second_time:?}",
            first.len()
        ),
    );
    assert!(pass);
}
