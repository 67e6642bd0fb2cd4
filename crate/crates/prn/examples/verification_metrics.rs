//! The evaluation toolbox on toy embeddings: ROC with TAR@FAR,
//! k-fold verification accuracy, closed-set CMC, and open-set
//! TPIR@FPIR.
//!
//!     cargo run --example verification_metrics

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prn::metrics::{
    fold_accuracy, identification_cmc, open_set_tpir, squared_l2, tar_at_far, verification_roc,
};

fn main() -> prn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    // toy embeddings: 6 identities, 8 samples each, identity centers
    // separated well beyond the within-identity spread
    let ids = 6;
    let per = 8;
    let centers: Vec<Vec<f64>> = (0..ids)
        .map(|_| (0..4).map(|_| rng.gen_range(-4.0..4.0)).collect())
        .collect();
    let mut embeddings = Vec::new();
    let mut labels = Vec::new();
    for (id, c) in centers.iter().enumerate() {
        for _ in 0..per {
            embeddings.push(
                c.iter()
                    .map(|v| v + rng.gen_range(-0.4..0.4))
                    .collect::<Vec<f64>>(),
            );
            labels.push(id);
        }
    }

    // verification over all pairs
    let mut scored = Vec::new();
    for a in 0..embeddings.len() {
        for b in (a + 1)..embeddings.len() {
            scored.push((
                squared_l2(&embeddings[a], &embeddings[b]),
                labels[a] == labels[b],
            ));
        }
    }
    let roc = verification_roc(&scored)?;
    println!("{} pairs -> {} ROC operating points", scored.len(), roc.len());
    for far in [0.0, 0.001, 0.01, 0.1] {
        println!("  TAR @ FAR<={far}: {:.4}", tar_at_far(&roc, far)?);
    }
    println!("10-fold accuracy: {:.4}", fold_accuracy(&scored, 10)?);

    // closed-set identification: first sample enrolls
    let gallery: Vec<(Vec<f64>, usize)> = (0..ids)
        .map(|id| (embeddings[id * per].clone(), id))
        .collect();
    let probes: Vec<(Vec<f64>, usize)> = (0..embeddings.len())
        .filter(|i| i % per != 0)
        .map(|i| (embeddings[i].clone(), labels[i]))
        .collect();
    let cmc = identification_cmc(&probes, &gallery)?;
    println!("CMC rank-1..3: {:.4} {:.4} {:.4}", cmc[0], cmc[1], cmc[2]);

    // open set: last two identities leave the gallery
    let open_gallery: Vec<(Vec<f64>, usize)> =
        gallery.iter().filter(|(_, l)| *l < ids - 2).cloned().collect();
    let open_probes: Vec<(Vec<f64>, Option<usize>)> = probes
        .iter()
        .map(|(e, l)| (e.clone(), if *l < ids - 2 { Some(*l) } else { None }))
        .collect();
    for fpir in [0.01, 0.1] {
        println!(
            "TPIR @ FPIR<={fpir}: {:.4}",
            open_set_tpir(&open_probes, &open_gallery, fpir)?
        );
    }
    Ok(())
}
