//! Sweep per-device quality thresholds on training data and show the
//! modality EER at every grid point.

use qfusion::ingestion::{impute_training, split_protocol};
use qfusion::quality_gate::auto_thresholds;
use qfusion::synthetic::{gen_dataset, SynthSpec};

fn main() -> qfusion::error::Result<()> {
    let spec = SynthSpec {
        genuine_per_mixture: 150,
        impostor_per_mixture: 450,
        ..SynthSpec::default()
    };
    let corpus = gen_dataset(&spec)?;
    let split = split_protocol(&corpus.training, &corpus.evaluation)?;
    let train = impute_training(&split.train)?;

    let (gate, sweeps) = auto_thresholds(&train, 1)?;
    for s in &sweeps {
        println!("{} (chosen tau {:.4})", s.group, s.best);
        for p in &s.curve {
            let eer = p.eer.map_or_else(|| "-".to_string(), |e| format!("{e:.4}"));
            println!("  tau {:.4} kept {:>5} eer {eer}", p.threshold, p.kept);
        }
    }
    println!("{}", toml::to_string(&gate).expect("thresholds serialize"));
    Ok(())
}
