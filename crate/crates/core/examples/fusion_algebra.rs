//! The four fusion schemes on two-dimensional inputs with identity
//! projections, so each output can be checked by hand.
//!
//! cargo run --example fusion_algebra

use hdr_nmt::backbone::{ParamStore, Tensor};
use hdr_nmt::fusion::{
    fuse_add, fuse_cascade, fuse_gate, fuse_selection, FusionInputs, FusionLayer,
};
use hdr_nmt::transformer::{FusionScheme, GateMode, ModelConfig};
use rand::SeedableRng;

fn identity_layer(scheme: FusionScheme) -> (FusionLayer, ParamStore) {
    let cfg = ModelConfig {
        d_model: 2,
        n_heads: 1,
        d_ff: 2,
        fusion_scheme: scheme,
        gate_mode: GateMode::Fixed(0.5),
        identity_mode: true,
        ..Default::default()
    };
    let mut store = ParamStore::new();
    let layer = FusionLayer::new(
        &mut store,
        "f",
        &cfg,
        &mut rand_chacha::ChaCha8Rng::seed_from_u64(0),
    );
    for p in store.iter_mut() {
        if p.name.ends_with(".w") && p.value.shape() == [2, 2] {
            p.value = Tensor::identity(2);
        } else if p.name.ends_with(".b") {
            p.value = Tensor::zeros(p.value.shape());
        }
    }
    (layer, store)
}

fn main() -> hdr_nmt::Result<()> {
    let inputs = |s: [f32; 2], h: [f32; 2], n: [f32; 2]| FusionInputs {
        s: Tensor::from_rows(&[&s]),
        hdr_states: Some(Tensor::from_rows(&[&h])),
        nmt_states: Tensor::from_rows(&[&n]),
    };

    let (layer, ps) = identity_layer(FusionScheme::Add);
    let out = fuse_add(&inputs([1.0, 0.0], [0.0, 1.0], [1.0, 1.0]), &layer, &ps)?;
    println!("add       s=[1,0] h=[0,1] n=[1,1] -> {:?}", out.data());

    let (layer, ps) = identity_layer(FusionScheme::Cascade);
    let out = fuse_cascade(&inputs([1.0, 0.0], [0.0, 1.0], [1.0, 1.0]), &layer, &ps)?;
    println!("cascade   s=[1,0] h=[0,1] n=[1,1] -> {:?}", out.data());

    let (layer, ps) = identity_layer(FusionScheme::Gate);
    let out = fuse_gate(&inputs([0.0, 0.0], [2.0, 0.0], [0.0, 2.0]), &layer, &ps)?;
    println!("gate 0.5  s=[0,0] h=[2,0] n=[0,2] -> {:?}", out.data());

    // Queries come from the HDR states, values from the NMT states; with a
    // single source position the output is that position's value.
    let (layer, ps) = identity_layer(FusionScheme::Selection);
    let out = fuse_selection(&inputs([1.0, 0.0], [0.0, 1.0], [1.0, 1.0]), &layer, &ps)?;
    println!("selection s=[1,0] h=[0,1] n=[1,1] -> {:?}", out.data());
    Ok(())
}
