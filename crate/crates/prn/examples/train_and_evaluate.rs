//! End-to-end run at reduced size: synthesize identities, pretrain the
//! backbone, train the relational variants, and compare them on the
//! held-out split. Takes well under a minute.
//!
//!     cargo run --example train_and_evaluate

use prn::config::RunConfig;
use prn::eval::evaluate;
use prn::relation::ModelVariant;
use prn::train::prepare;

fn main() -> prn::Result<()> {
    let cfg = RunConfig::from_overrides([
        "identities=8",
        "samples_per_identity=16",
        "batch=16",
        "steps_backbone=80",
        "steps_encoder=40",
        "steps_relation=60",
        "steps_combined=40",
        "train_frac=0.75",
        "folds=5",
        "seed=3",
    ])?;
    println!("resolved configuration:\n{}\n", cfg.echo());

    let pipe = prepare(&cfg)?;
    println!(
        "backbone softmax validation accuracy: {:.4}",
        pipe.backbone_val_accuracy
    );

    println!("\nvariant    tar@far={:<5} fold-acc  rank-1", cfg.far_target);
    for variant in [
        ModelVariant::ModelA,
        ModelVariant::Prn,
        ModelVariant::PrnPlus,
        ModelVariant::ModelB,
        ModelVariant::ModelC,
    ] {
        let mut model = pipe.train_variant(variant)?;
        let eval = evaluate(&pipe, &mut model)?;
        println!(
            "{:<10} {:<13.4} {:<9.4} {:.4}",
            variant.name(),
            eval.tar_at_far,
            eval.fold_accuracy,
            eval.cmc[0]
        );
    }
    Ok(())
}
