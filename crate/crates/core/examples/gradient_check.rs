//! Compare reverse-mode gradients with central differences on a small
//! attention block followed by a cross-entropy loss.
//!
//! cargo run --example gradient_check

use hdr_nmt::backbone::{AttentionLayout, Graph, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn loss(store: &ParamStore, x: &Tensor) -> hdr_nmt::Result<(Graph, hdr_nmt::backbone::Var)> {
    let mut g = Graph::new();
    let x = g.constant(x.clone());
    let wq = g.param(store, store.id("wq").unwrap());
    let wk = g.param(store, store.id("wk").unwrap());
    let wv = g.param(store, store.id("wv").unwrap());
    let gamma = g.param(store, store.id("gamma").unwrap());
    let beta = g.param(store, store.id("beta").unwrap());
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let a = g.attention(q, k, v, 2, &AttentionLayout::single(3, 3, true))?;
    let h = g.add(a, x)?;
    let h = g.layer_norm(h, gamma, beta, 1e-5)?;
    let l = g.cross_entropy(h, &[0, 2, 3], 0.1)?;
    Ok((g, l))
}

fn main() -> hdr_nmt::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    for name in ["wq", "wk", "wv"] {
        store.add(name, Tensor::uniform(&[4, 4], 0.8, &mut rng));
    }
    store.add("gamma", Tensor::uniform(&[4], 1.0, &mut rng));
    store.add("beta", Tensor::uniform(&[4], 0.5, &mut rng));
    let x = Tensor::uniform(&[3, 4], 1.0, &mut rng);

    let (g, l) = loss(&store, &x)?;
    let grads = g.backward(l);
    store.zero_grads();
    g.accumulate_into(&grads, &mut store);

    let h = 1e-2f32;
    let names: Vec<String> = store.iter().map(|(_, p)| p.name.clone()).collect();
    for name in names {
        let id = store.id(&name).unwrap();
        let analytic = store.get(id).grad.clone().expect("gradient");
        let mut worst = 0.0f32;
        for k in 0..analytic.len() {
            let orig = store.get(id).value.data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + h;
            let (g1, l1) = loss(&store, &x)?;
            store.get_mut(id).value.data_mut()[k] = orig - h;
            let (g2, l2) = loss(&store, &x)?;
            store.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (g1.value(l1).data()[0] - g2.value(l2).data()[0]) / (2.0 * h);
            let a = analytic.data()[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3));
        }
        println!(
            "{name:<6} {:>3} entries, worst relative error {worst:.2e}",
            analytic.len()
        );
    }
    Ok(())
}
