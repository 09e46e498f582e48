#![allow(dead_code)]

use hdr_nmt::backbone::gradcheck::finite_difference_check;
use hdr_nmt::backbone::{
    finite_difference_check_params, AttentionLayout, Graph, ParamId, ParamStore, Tensor, Var,
};
use hdr_nmt::data::{tokenize, Vocab};
use hdr_nmt::fusion::FusionLayer;
use hdr_nmt::nmt::NmtModel;
use hdr_nmt::transformer::{FusionScheme, GateMode, ModelConfig};
use hdr_nmt::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PER_OP_TOL: f32 = 1e-3;
pub const COMPOSED_TOL: f32 = 1e-2;
/// Smaller step for composed blocks: ReLU kinks inside the feed-forward
/// sub-layers sit within 1e-2 of some probes.
pub const COMPOSED_STEP: f32 = 3e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, 1.0, &mut rng(seed))
}

/// Entries with magnitude in [0.2, 1] so kinks at 0 are never crossed.
pub fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f32 = r.random_range(0.2..1.0);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// `sum(w * y)` with fixed pseudo-random weights, so every output entry
/// contributes a distinct amount.
pub fn weighted_sum(g: &mut Graph, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.constant(random(&shape, 99 + shape.iter().sum::<usize>() as u64));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

pub type OpFn = Box<dyn Fn(&mut Graph, Var) -> Result<Var>>;

/// One differentiable operation probed with respect to one of its inputs.
pub struct OpCase {
    pub name: &'static str,
    pub input: Tensor,
    pub f: OpFn,
}

fn case(
    name: &'static str,
    input: Tensor,
    f: impl Fn(&mut Graph, Var) -> Result<Var> + 'static,
) -> OpCase {
    OpCase {
        name,
        input,
        f: Box::new(f),
    }
}

pub fn op_cases() -> Vec<OpCase> {
    let c34 = random(&[3, 4], 1);
    let c45 = random(&[4, 5], 2);
    let c23 = random(&[2, 3], 3);
    let col = random(&[3, 1], 4);
    let row4 = random(&[4], 5);
    let gamma = Tensor::uniform(&[8], 0.5, &mut rng(6))
        .into_data()
        .iter()
        .map(|v| v + 1.0)
        .collect::<Vec<_>>();
    let gamma = Tensor::new(&[8], gamma).unwrap();
    let beta = random(&[8], 7);
    let x48 = random(&[4, 8], 8);
    let k48 = random(&[4, 8], 9);
    let v48 = random(&[4, 8], 10);
    let q38 = random(&[3, 8], 11);
    let mut mask = vec![false; 12];
    mask[1] = true;
    mask[6] = true;
    mask[11] = true;

    vec![
        case("matmul (left)", random(&[3, 4], 20), {
            let b = c45.clone();
            move |g, x| {
                let b = g.constant(b.clone());
                let y = g.matmul(x, b)?;
                weighted_sum(g, y)
            }
        }),
        case("matmul (right)", random(&[3, 4], 21), {
            let a = c23.clone();
            move |g, x| {
                let a = g.constant(a.clone());
                let y = g.matmul(a, x)?;
                weighted_sum(g, y)
            }
        }),
        case("add", random(&[3, 4], 22), {
            let c = c34.clone();
            move |g, x| {
                let c = g.constant(c.clone());
                let y = g.add(x, c)?;
                let y = g.mul(y, y)?;
                weighted_sum(g, y)
            }
        }),
        case("sub", random(&[3, 4], 23), {
            let c = c34.clone();
            move |g, x| {
                let c = g.constant(c.clone());
                let y = g.sub(c, x)?;
                let y = g.mul(y, y)?;
                weighted_sum(g, y)
            }
        }),
        case("mul", random(&[3, 4], 24), {
            let c = c34.clone();
            move |g, x| {
                let c = g.constant(c.clone());
                let y = g.mul(x, c)?;
                let y = g.mul(y, x)?;
                weighted_sum(g, y)
            }
        }),
        case("add_row (matrix)", random(&[3, 4], 25), {
            let b = row4.clone();
            move |g, x| {
                let b = g.constant(b.clone());
                let y = g.add_row(x, b)?;
                let y = g.mul(y, y)?;
                weighted_sum(g, y)
            }
        }),
        case("add_row (bias)", random(&[4], 26), {
            let a = c34.clone();
            move |g, x| {
                let a = g.constant(a.clone());
                let y = g.add_row(a, x)?;
                let y = g.mul(y, y)?;
                weighted_sum(g, y)
            }
        }),
        case("mul_col (matrix)", random(&[3, 4], 27), {
            let c = col.clone();
            move |g, x| {
                let c = g.constant(c.clone());
                let y = g.mul_col(x, c)?;
                weighted_sum(g, y)
            }
        }),
        case("mul_col (column)", random(&[3, 1], 28), {
            let a = c34.clone();
            move |g, x| {
                let a = g.constant(a.clone());
                let y = g.mul_col(a, x)?;
                weighted_sum(g, y)
            }
        }),
        case("affine", random(&[3, 4], 29), |g, x| {
            let y = g.affine(x, -1.5, 0.25);
            let y = g.mul(y, y)?;
            weighted_sum(g, y)
        }),
        case("scale", random(&[3, 4], 30), |g, x| {
            let y = g.scale(x, 2.5);
            weighted_sum(g, y)
        }),
        case("abs", away_from_zero(&[3, 4], 31), |g, x| {
            let y = g.abs(x);
            weighted_sum(g, y)
        }),
        case("relu", away_from_zero(&[3, 4], 32), |g, x| {
            let y = g.relu(x);
            weighted_sum(g, y)
        }),
        case("sigmoid", random(&[3, 4], 33), |g, x| {
            let y = g.sigmoid(x);
            weighted_sum(g, y)
        }),
        case("softmax", random(&[3, 4], 34), |g, x| {
            let y = g.softmax(x, None)?;
            weighted_sum(g, y)
        }),
        case("softmax (masked)", random(&[3, 4], 35), move |g, x| {
            let y = g.softmax(x, Some(&mask))?;
            weighted_sum(g, y)
        }),
        case("layer_norm (x)", random(&[4, 8], 36), {
            let (gm, bt) = (gamma.clone(), beta.clone());
            move |g, x| {
                let gm = g.constant(gm.clone());
                let bt = g.constant(bt.clone());
                let y = g.layer_norm(x, gm, bt, 1e-5)?;
                weighted_sum(g, y)
            }
        }),
        case("layer_norm (gamma)", gamma.clone(), {
            let (x0, bt) = (x48.clone(), beta.clone());
            move |g, gm| {
                let x = g.constant(x0.clone());
                let bt = g.constant(bt.clone());
                let y = g.layer_norm(x, gm, bt, 1e-5)?;
                weighted_sum(g, y)
            }
        }),
        case("layer_norm (beta)", beta.clone(), {
            let (x0, gm) = (x48.clone(), gamma.clone());
            move |g, bt| {
                let x = g.constant(x0.clone());
                let gm = g.constant(gm.clone());
                let y = g.layer_norm(x, gm, bt, 1e-5)?;
                weighted_sum(g, y)
            }
        }),
        case("attention (query)", random(&[3, 8], 37), {
            let (k, v) = (k48.clone(), v48.clone());
            move |g, q| {
                let k = g.constant(k.clone());
                let v = g.constant(v.clone());
                let y = g.attention(q, k, v, 2, &AttentionLayout::single(3, 4, false))?;
                weighted_sum(g, y)
            }
        }),
        case("attention (key)", random(&[4, 8], 38), {
            let (q, v) = (q38.clone(), v48.clone());
            move |g, k| {
                let q = g.constant(q.clone());
                let v = g.constant(v.clone());
                let y = g.attention(q, k, v, 2, &AttentionLayout::single(3, 4, false))?;
                weighted_sum(g, y)
            }
        }),
        case("attention (value)", random(&[4, 8], 39), {
            let (q, k) = (q38.clone(), k48.clone());
            move |g, v| {
                let q = g.constant(q.clone());
                let k = g.constant(k.clone());
                let y = g.attention(q, k, v, 2, &AttentionLayout::single(3, 4, false))?;
                weighted_sum(g, y)
            }
        }),
        case("attention (causal self)", random(&[4, 8], 40), |g, x| {
            let y = g.attention(x, x, x, 2, &AttentionLayout::single(4, 4, true))?;
            weighted_sum(g, y)
        }),
        case("attention (packed batch)", random(&[4, 8], 41), |g, x| {
            let y = g.attention(
                x,
                x,
                x,
                4,
                &AttentionLayout::from_lengths(&[1, 3], &[1, 3], false),
            )?;
            weighted_sum(g, y)
        }),
        case("cross_entropy", random(&[3, 5], 42), |g, x| {
            g.cross_entropy(x, &[0, 4, 2], 0.0)
        }),
        case("cross_entropy (smoothed)", random(&[3, 5], 43), |g, x| {
            g.cross_entropy(x, &[1, 1, 3], 0.1)
        }),
        case("gather_rows", random(&[4, 3], 44), |g, x| {
            let y = g.gather_rows(x, &[2, 0, 2, 3])?;
            weighted_sum(g, y)
        }),
        case("segment_sum", random(&[4, 3], 45), |g, x| {
            let y = g.segment_sum(x, &[(0, 1), (1, 3)])?;
            let y = g.mul(y, y)?;
            weighted_sum(g, y)
        }),
        case("cosine_distance (left)", random(&[3, 4], 46), {
            let b = c34.clone();
            move |g, x| {
                let b = g.constant(b.clone());
                let y = g.cosine_distance(x, b)?;
                weighted_sum(g, y)
            }
        }),
        case("cosine_distance (right)", random(&[3, 4], 47), {
            let a = c34.clone();
            move |g, x| {
                let a = g.constant(a.clone());
                let y = g.cosine_distance(a, x)?;
                weighted_sum(g, y)
            }
        }),
        case("mean", random(&[3, 4], 48), |g, x| {
            let y = g.mul(x, x)?;
            Ok(g.mean(y))
        }),
        case("sum", random(&[3, 4], 49), |g, x| {
            let y = g.mul(x, x)?;
            Ok(g.sum(y))
        }),
        case("concat_cols", random(&[3, 4], 50), {
            let c = c23.clone();
            move |g, x| {
                let c = g.constant(Tensor::new(&[3, 2], c.data().to_vec()).unwrap());
                let y = g.concat_cols(x, c)?;
                let y = g.concat_cols(y, x)?;
                weighted_sum(g, y)
            }
        }),
        case("interleave_heads", random(&[3, 4], 51), {
            let c = c34.clone();
            move |g, x| {
                let c = g.constant(c.clone());
                let y = g.interleave_heads(x, c, 2)?;
                let y = g.mul(y, y)?;
                weighted_sum(g, y)
            }
        }),
        case("dropout (evaluation)", random(&[3, 4], 52), |g, x| {
            let y = g.dropout(x, 0.3);
            weighted_sum(g, y)
        }),
    ]
}

/// Worst relative error of one op case.
pub fn check_op(c: &OpCase) -> Result<f32> {
    finite_difference_check(|g, x| (c.f)(g, x), &c.input, 1e-2)
}

pub fn fusion_config(scheme: FusionScheme, gate: GateMode) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        d_ff: 16,
        src_vocab: 10,
        tgt_vocab: 10,
        max_len: 8,
        fusion_scheme: scheme,
        gate_mode: gate,
        ..Default::default()
    }
}

pub fn fusion_variants() -> Vec<(&'static str, FusionScheme, GateMode)> {
    vec![
        ("baseline", FusionScheme::Baseline, GateMode::Fixed(0.5)),
        ("add", FusionScheme::Add, GateMode::Fixed(0.5)),
        ("gate fixed:0.5", FusionScheme::Gate, GateMode::Fixed(0.5)),
        ("gate sigmoid", FusionScheme::Gate, GateMode::Sigmoid),
        ("cascade", FusionScheme::Cascade, GateMode::Fixed(0.5)),
        ("selection", FusionScheme::Selection, GateMode::Fixed(0.5)),
    ]
}

/// Finite-difference check of one fusion block with respect to all of its
/// parameters, on a 3-row decoder input and 4-row encoder memories.
pub fn check_fusion(scheme: FusionScheme, gate: GateMode) -> Result<f32> {
    let cfg = fusion_config(scheme, gate);
    let mut store = ParamStore::new();
    let layer = FusionLayer::new(&mut store, "fuse", &cfg, &mut rng(3));
    let s = random(&[3, 8], 60);
    let h = random(&[4, 8], 61);
    let n = random(&[4, 8], 62);
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    let uses_hdr = scheme.uses_second_encoder();
    finite_difference_check_params(
        &mut store,
        &ids,
        |g, ps| {
            let sv = g.input(s.clone());
            let hv = uses_hdr.then(|| g.input(h.clone()));
            let nv = g.input(n.clone());
            let out = layer.forward(
                g,
                ps,
                sv,
                hv,
                nv,
                &AttentionLayout::single(3, 4, false),
                0.0,
            )?;
            weighted_sum(g, out)
        },
        COMPOSED_STEP,
        6,
    )
}

/// Same check for the decoder inputs of a fusion block: `s`, and both encoder memories.
pub fn check_fusion_inputs(scheme: FusionScheme, gate: GateMode) -> Result<f32> {
    let cfg = fusion_config(scheme, gate);
    let mut store = ParamStore::new();
    let layer = FusionLayer::new(&mut store, "fuse", &cfg, &mut rng(4));
    let s = random(&[3, 8], 63);
    let h = random(&[4, 8], 64);
    let n = random(&[4, 8], 65);
    let layout = AttentionLayout::single(3, 4, false);
    let uses_hdr = scheme.uses_second_encoder();
    let mut worst = 0.0f32;
    for which in 0..3 {
        if which == 1 && !uses_hdr {
            continue;
        }
        let x = [&s, &h, &n][which].clone();
        let e = finite_difference_check(
            |g, x| {
                let mut v = [None, None, None];
                v[which] = Some(x);
                let sv = v[0].unwrap_or_else(|| g.constant(s.clone()));
                let hv = if uses_hdr {
                    Some(v[1].unwrap_or_else(|| g.constant(h.clone())))
                } else {
                    None
                };
                let nv = v[2].unwrap_or_else(|| g.constant(n.clone()));
                let out = layer.forward(g, &store, sv, hv, nv, &layout, 0.0)?;
                weighted_sum(g, out)
            },
            &x,
            COMPOSED_STEP,
        )?;
        worst = worst.max(e);
    }
    Ok(worst)
}

/// Teacher-forced loss of a whole two-encoder translation model, checked
/// on a strided subset of every trainable parameter.
pub fn check_full_model(scheme: FusionScheme) -> Result<f32> {
    let src = Vocab::build(&[tokenize("a b c d e")], 1, None);
    let tgt = Vocab::build(&[tokenize("v w x y")], 1, None);
    let mut cfg = fusion_config(scheme, GateMode::Sigmoid);
    cfg.dropout = 0.0;
    let model = NmtModel::new(cfg, src, tgt, 5)?;
    let (encoder, second, decoder) = (
        model.encoder.clone(),
        model.second.clone(),
        model.decoder.clone(),
    );
    let mut store = model.store.clone();
    let ids: Vec<ParamId> = store
        .iter()
        .filter(|(_, p)| !p.frozen)
        .map(|(id, _)| id)
        .collect();
    let srcs = vec![vec![4usize, 5, 6], vec![7, 8]];
    let tgt_in = vec![vec![2usize, 4, 5], vec![2, 6]];
    let tgt_out = vec![4usize, 5, 3, 6, 3];
    finite_difference_check_params(
        &mut store,
        &ids,
        |g, ps| {
            let nmt = encoder.forward(g, ps, &srcs, false)?;
            let hdr = match &second {
                Some(e) => Some(e.forward(g, ps, &srcs, false)?),
                None => None,
            };
            let logits = decoder.logits(g, ps, &tgt_in, hdr.as_ref(), &nmt, false)?;
            g.cross_entropy(logits, &tgt_out, 0.1)
        },
        COMPOSED_STEP,
        2,
    )
}

pub fn toks(s: &str) -> Vec<String> {
    tokenize(s)
}
