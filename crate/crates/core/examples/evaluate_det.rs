//! EER, HTER and DET points for two overlapping Gaussian score sets.

use qfusion::metrics::{evaluate, normal_cdf};
use qfusion::synthetic::{two_class_scores, Gaussian, ScoreLaw};

fn main() -> qfusion::error::Result<()> {
    let law = ScoreLaw {
        genuine: Gaussian::new(2.0, 1.0),
        impostor: Gaussian::new(0.0, 1.5),
    };
    let (g, i) = two_class_scores(3, law, 10_000, 10_000)?;
    let report = evaluate(&g, &i, &[0.0, 1.0])?;

    println!(
        "eer {:.4} at threshold {:.4} (analytic {:.4})",
        report.eer.rate,
        report.eer.threshold,
        law.analytic_eer()
    );
    for (t, h) in &report.hter_at {
        println!("hter at {t:+.1}: {h:.4}");
    }
    println!("normal_cdf(-0.8) = {:.4}", normal_cdf(-0.8));

    let step = (report.det_points.len() / 8).max(1);
    println!("probit_far probit_frr");
    for (x, y) in report.det_points.iter().step_by(step) {
        println!("{x:+10.3} {y:+10.3}");
    }
    Ok(())
}
