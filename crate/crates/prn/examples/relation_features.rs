//! The relational core on its own: enumerate patch pairs, map each
//! pair through the shared relation MLP, and show that the canonical
//! aggregation is invariant to the order the pairs arrive in.
//!
//!     cargo run --example relation_features

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prn::relation::{
    aggregate_canonical, enumerate_pairs, init_relation, prn_forward, relate, PrnConfig,
};
use prn::backbone::LocalPatchSet;
use prn::params::ParamStore;

fn main() -> prn::Result<()> {
    // the full-scale convention pairs 68 landmarks
    println!("68 landmarks -> {} unordered pairs", enumerate_pairs(68)?.len());

    let cfg = PrnConfig::desk(10);
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    init_relation(&mut store, &cfg, false, &mut rng);

    // fake a patch set (normally these come from the backbone)
    let patches = LocalPatchSet {
        patches: (0..cfg.n_landmarks)
            .map(|_| (0..cfg.patch_width).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect(),
        cells: Vec::new(),
    };

    let (bundle, embedding) = prn_forward(&patches, &mut store, &cfg)?;
    println!(
        "{} landmarks -> {} relations of width {}, embedding width {}",
        cfg.n_landmarks,
        bundle.relations.len(),
        cfg.relation_width,
        embedding.width()
    );

    // a single pair through the shared MLP matches the batch path
    let lone = relate(&mut store, &cfg, &patches.patches[0], &patches.patches[1], None)?;
    let delta: f64 = lone
        .iter()
        .zip(&bundle.relations[0])
        .map(|(a, b)| (a - b).abs())
        .sum();
    println!("pair (0,1) standalone vs batched: max abs delta {delta:.3e}");

    // canonical aggregation: shuffle the tagged relations, re-sort, sum
    let pairs = enumerate_pairs(cfg.n_landmarks)?;
    let tagged: Vec<((usize, usize), Vec<f64>)> = pairs
        .pairs()
        .iter()
        .cloned()
        .zip(bundle.relations.iter().cloned())
        .collect();
    let baseline = aggregate_canonical(&tagged)?;
    let mut identical = true;
    for _ in 0..100 {
        let mut shuffled = tagged.clone();
        shuffled.shuffle(&mut rng);
        identical &= aggregate_canonical(&shuffled)? == baseline;
    }
    println!(
        "100 shuffles, canonical aggregation bit-identical: {identical}"
    );
    assert!(identical);
    Ok(())
}
