//! End to end: train models, then fuse evaluation accesses under every rule
//! and device mode, with and without the quality gate.

use qfusion::fusion::{
    run_batch, split_by_label, train_models, DeviceMode, FusionRule, ModelConfig, PipelineConfig,
};
use qfusion::ingestion::{impute_training, split_protocol};
use qfusion::metrics::eer;
use qfusion::quality_gate::auto_thresholds;
use qfusion::synthetic::{gen_dataset, SynthSpec};

fn main() -> qfusion::error::Result<()> {
    let corpus = gen_dataset(&SynthSpec::default())?;
    let split = split_protocol(&corpus.training, &corpus.evaluation)?;
    let (gate, _) = auto_thresholds(&impute_training(&split.train)?, 1)?;
    let cfg = ModelConfig::default();

    println!(
        "{:<8} {:<9} {:>8} {:>8}",
        "rule", "devices", "ungated", "gated"
    );
    let plain = train_models(&split.train, &cfg, None)?;
    let gated = train_models(&split.train, &cfg, Some(&gate))?;
    for rule in FusionRule::ALL {
        for mode in DeviceMode::ALL {
            let mut rates = Vec::new();
            for (models, g) in [(&plain, None), (&gated, Some(gate.clone()))] {
                let pc = PipelineConfig::new(rule, mode)
                    .with_gate(g)
                    .with_training_fallback(models)?;
                let out = run_batch(&split.eval.accesses, &pc, models)?;
                let (gen, imp) = split_by_label(&out);
                rates.push(eer(&gen, &imp)?.rate);
            }
            println!(
                "{:<8} {:<9} {:>7.2}% {:>7.2}%",
                rule.to_string(),
                mode.to_string(),
                100.0 * rates[0],
                100.0 * rates[1]
            );
        }
    }

    let pc = PipelineConfig::new(FusionRule::LlrSum, DeviceMode::Inferred).with_gate(Some(gate));
    let first = run_batch(&split.eval.accesses[..1], &pc, &gated)?;
    println!("\naudit trail for {}:", first[0].access_id);
    for line in &first[0].trail {
        println!("  {line}");
    }
    Ok(())
}
