//! Infer the fingerprint acquisition device from quality measures with QDA
//! and rank small feature subsets by estimation error.

use qfusion::datamodel::Modality;
use qfusion::device_inference::{
    error_rates, labeled_features, qda_fit, rank_feature_subsets, FeatureSelection, Regularization,
};
use qfusion::ingestion::{impute_training, split_protocol};
use qfusion::synthetic::{gen_dataset, SynthSpec};

fn main() -> qfusion::error::Result<()> {
    let spec = SynthSpec {
        genuine_per_mixture: 100,
        impostor_per_mixture: 300,
        ..SynthSpec::default()
    };
    let corpus = gen_dataset(&spec)?;
    let split = split_protocol(&corpus.training, &corpus.evaluation)?;
    let train = impute_training(&split.train)?;

    let sel = FeatureSelection::default_fingerprint();
    let labeled = labeled_features(&train.accesses, Modality::Fingerprint, &sel);
    let model = qda_fit(&labeled, Regularization::default())?;
    let held_out = labeled_features(&split.eval.accesses, Modality::Fingerprint, &sel);
    for (device, count) in error_rates(&model, &held_out)? {
        println!(
            "{device}: {}/{} misassigned ({:.2}%)",
            count.errors,
            count.total,
            100.0 * count.rate()
        );
    }

    let all = FeatureSelection::new((1..=6).collect(), 6)?;
    let full = labeled_features(&train.accesses, Modality::Fingerprint, &all);
    let ranked = rank_feature_subsets(&full, None, 2, Regularization::default())?;
    println!("best fingerprint subsets by balanced training error:");
    for r in ranked.iter().take(5) {
        println!(
            "  {:?} {:.4}",
            r.selection.indices(),
            r.balanced_training_error()
        );
    }
    Ok(())
}
