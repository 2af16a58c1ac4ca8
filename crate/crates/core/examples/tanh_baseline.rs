//! Tanh-normalized mean/min/max fusion of two channels, one of them carrying
//! no information, against the calibrated LLR sum.

use qfusion::calibration::{train_calibrator, TrainingConfig};
use qfusion::fusion::fuse_llr_sum;
use qfusion::metrics::eer;
use qfusion::normalization::{fit_tanh, rule_fuse, Rule};
use qfusion::synthetic::{two_class_scores, Gaussian, ScoreLaw};

fn main() -> qfusion::error::Result<()> {
    let useful = ScoreLaw {
        genuine: Gaussian::new(1.0, 1.0),
        impostor: Gaussian::new(-1.0, 1.0),
    };
    let noise = ScoreLaw {
        genuine: Gaussian::new(0.0, 1.0),
        impostor: Gaussian::new(0.0, 1.0),
    };
    let n = 20_000;
    let (ag, ai) = two_class_scores(11, useful, n, n)?;
    let (bg, bi) = two_class_scores(12, noise, n, n)?;

    let na = fit_tanh(&ag)?;
    let nb = fit_tanh(&bg)?;
    let wrap = |v: &[f64]| v.iter().map(|&s| [s]).collect::<Vec<_>>();
    let ca = train_calibrator(&wrap(&ag), &wrap(&ai), &TrainingConfig::default())?;
    let cb = train_calibrator(&wrap(&bg), &wrap(&bi), &TrainingConfig::default())?;

    let fuse = |a: &[f64], b: &[f64], f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
    };
    println!("channel alone: {:.4}", eer(&ag, &ai)?.rate);
    for rule in [Rule::Mean, Rule::Min, Rule::Max] {
        let f = |x: f64, y: f64| rule_fuse(&[na.apply(x), nb.apply(y)], rule).expect("two scores");
        println!(
            "tanh {rule:?}: {:.4}",
            eer(&fuse(&ag, &bg, &f), &fuse(&ai, &bi, &f))?.rate
        );
    }
    let f =
        |x: f64, y: f64| fuse_llr_sum(&[ca.apply(&[x]).unwrap(), cb.apply(&[y]).unwrap()]).unwrap();
    println!(
        "llr sum: {:.4}",
        eer(&fuse(&ag, &bg, &f), &fuse(&ai, &bi, &f))?.rate
    );
    Ok(())
}
