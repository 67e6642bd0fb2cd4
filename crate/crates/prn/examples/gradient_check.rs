//! Verify the reverse-mode gradients against central finite
//! differences, for an MLP with batch norm and for a small
//! convolution + max-pool stack.
//!
//!     cargo run --example gradient_check

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use prn::graph::{ConvGeom, Graph};
use prn::nn::{grad_check, init_mlp, mlp_forward, MlpSpec, Mode};
use prn::params::ParamStore;
use prn::tensor::Tensor;

fn main() -> prn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    // MLP with batch norm, trained-mode statistics
    let spec = MlpSpec::uniform(6, 8, 3);
    let mut store = ParamStore::new();
    init_mlp(&mut store, "mlp", &spec, &mut rng);
    let x = Tensor::new(
        vec![4, 6],
        (0..24).map(|i| ((i * 37 % 17) as f64 - 8.0) / 8.0).collect(),
    )?;
    let err = grad_check(
        &mut store,
        |s, with_grads| {
            let mut g = Graph::new();
            let input = g.input(x.clone());
            let y = mlp_forward(&mut g, s, "mlp", &spec, input, Mode::Train)?;
            let sq = g.mul(y, y);
            let loss = g.sum_all(sq);
            if with_grads {
                g.backward_params(loss, s)?;
            }
            Ok(g.value(loss).item())
        },
        1e-5,
    )?;
    println!("MLP + batch norm   worst relative error: {err:.3e}");

    // convolution via im2col, then 2x2 max pooling
    let mut store = ParamStore::new();
    store.insert(
        "conv.weight",
        Tensor::new(
            vec![3 * 3 * 2, 4],
            (0..72).map(|i| ((i * 29 % 13) as f64 - 6.0) / 30.0).collect(),
        )?,
        true,
    );
    let img = Tensor::new(
        vec![1, 6, 6, 2],
        (0..72).map(|i| ((i * 31 % 19) as f64 - 9.0) / 9.0).collect(),
    )?;
    let err = grad_check(
        &mut store,
        |s, with_grads| {
            let mut g = Graph::new();
            let x = g.input(img.clone());
            let cols = g.im2col(x, ConvGeom::same(1, 6, 2, 3, 1));
            let w = g.param(s, "conv.weight")?;
            let conv = g.matmul(cols, w);
            let fmap = g.reshape(conv, vec![1, 6, 6, 4]);
            let pooled = g.max_pool(fmap, ConvGeom::same(1, 6, 4, 2, 2));
            let sq = g.mul(pooled, pooled);
            let loss = g.sum_all(sq);
            if with_grads {
                g.backward_params(loss, s)?;
            }
            Ok(g.value(loss).item())
        },
        1e-5,
    )?;
    println!("conv + max pool    worst relative error: {err:.3e}");
    println!("(both should sit well below 1e-5)");
    Ok(())
}
