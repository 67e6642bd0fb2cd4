//! Align a synthetic face: render one sample, rotate it upright, and
//! pin its eye/mouth rows to the canonical positions.
//!
//!     cargo run --example align_face

use prn::data::{generate_identities, render_sample, DatasetConfig};
use prn::geometry::{align_face, anchor_points, AlignmentConfig};

fn main() -> prn::Result<()> {
    let cfg = DatasetConfig::desk(2, 2, 42);
    let identity = &generate_identities(&cfg)?[0];
    let sample = render_sample(&cfg, identity, 0);

    let align = AlignmentConfig::synthetic_15(64);
    let (face, landmarks, transform) = align_face(&sample.image, &sample.landmarks, &align)?;

    println!("input:  {}x{} pixels", cfg.image_size, cfg.image_size);
    println!("output: {0}x{0} pixels", face.side());
    println!(
        "recovered rotation: {:.2}° (the sample was rendered with a random in-plane tilt)",
        transform.rotation.to_degrees()
    );
    println!("scale: {:.4}, translation: ({:.2}, {:.2})",
        transform.scale, transform.translation.0, transform.translation.1);

    let (center, eye, mouth) = anchor_points(&landmarks, &align.eye_indices(), &align.mouth)?;
    println!("eye row:   {:.2} (target {:.2})", eye.1, 0.30 * 64.0);
    println!("mouth row: {:.2} (target {:.2})", mouth.1, (1.0 - 0.35) * 64.0);
    println!("face center x: {:.2} (target {:.2})", center.0, 32.0);

    let out = std::env::temp_dir().join("prn_aligned.png");
    prn::data::save_png(&face.pixels, &out)?;
    println!("aligned face written to {}", out.display());
    Ok(())
}
