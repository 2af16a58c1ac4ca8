//! Train an affine LLR calibrator on one synthetic channel and compare the
//! recovered parameters with the closed form for equal-variance Gaussians.

use qfusion::calibration::{clr_objective, train_calibrator, TrainingConfig};
use qfusion::synthetic::{two_class_scores, Gaussian, ScoreLaw};

fn main() -> qfusion::error::Result<()> {
    let law = ScoreLaw {
        genuine: Gaussian::new(1.0, 1.0),
        impostor: Gaussian::new(-1.0, 1.0),
    };
    let (g, i) = two_class_scores(1, law, 20_000, 20_000)?;
    let targets: Vec<[f64; 1]> = g.iter().map(|&s| [s]).collect();
    let nontargets: Vec<[f64; 1]> = i.iter().map(|&s| [s]).collect();

    for prior in [0.5, 0.1, 0.01] {
        let cfg = TrainingConfig {
            prior,
            ..TrainingConfig::default()
        };
        let cal = train_calibrator(&targets, &nontargets, &cfg)?;
        let c = clr_objective(&cal, &targets, &nontargets, prior)?;
        println!(
            "prior {prior:<5} a0 {:+.4}  a1 {:.4}  objective {c:.4} (closed form a0 0, a1 2)",
            cal.intercept, cal.weights[0]
        );
    }

    let cal = train_calibrator(&targets, &nontargets, &TrainingConfig::default())?;
    for s in [-2.0, 0.0, 1.5] {
        println!("score {s:+.1} -> llr {:+.3}", cal.apply(&[s])?);
    }
    Ok(())
}
