mod common;

use common::*;
use hdr_nmt::backbone::{AttentionLayout, Graph, ParamStore, Tensor};
use hdr_nmt::checkpoint::{self, Checkpoint};
use hdr_nmt::data::{generate_synthetic_homograph_corpus, SentencePair, SynsetPair, Vocab, BOS};
use hdr_nmt::fusion::{FusionInputs, FusionLayer};
use hdr_nmt::nmt::{heldout_loss, train_nmt, NmtModel, TrainOptions};
use hdr_nmt::pipeline::{source_vocab, target_vocab};
use hdr_nmt::pretrain::{wdr_loss, wdr_train, HdrModel, WdrOptions, ENCODER_PREFIX};
use hdr_nmt::transformer::{
    Encoder, FusionScheme, GateMode, ModelConfig, MultiHeadAttention, SecondEncoderSource, Strategy,
};
use rand::Rng;

fn tiny(scheme: FusionScheme) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 2,
        d_ff: 32,
        max_len: 12,
        fusion_scheme: scheme,
        ..Default::default()
    }
}

fn vocabs() -> (Vocab, Vocab) {
    (
        Vocab::build(&[toks("a b c d e f g h")], 1, None),
        Vocab::build(&[toks("p q r s t u")], 1, None),
    )
}

#[test]
fn attention_with_one_key_returns_projected_value() {
    let mut store = ParamStore::new();
    let att = MultiHeadAttention::new(&mut store, "att", 4, 2, &mut rng(1));
    let mut g = Graph::inference();
    let q = g.constant(random(&[3, 4], 2));
    let mem = g.constant(random(&[1, 4], 3));
    let out = att
        .forward(
            &mut g,
            &store,
            q,
            mem,
            &AttentionLayout::single(3, 1, false),
        )
        .unwrap();
    // Expected: Wo (Wv m + bv) + bo for every query row.
    let mut h = Graph::inference();
    let m = h.constant(random(&[1, 4], 3));
    let v = att.wv.forward(&mut h, &store, m).unwrap();
    let o = att.wo.forward(&mut h, &store, v).unwrap();
    let want = h.value(o).clone();
    for r in 0..3 {
        let got = g.value(out).row(r);
        for (a, b) in got.iter().zip(want.row(0)) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn identical_keys_average_values() {
    let mut g = Graph::inference();
    let q = g.constant(random(&[2, 4], 5));
    let k = g.constant(Tensor::from_rows(&[
        &[0.3, -0.2, 0.5, 0.1],
        &[0.3, -0.2, 0.5, 0.1],
    ]));
    let v = g.constant(Tensor::from_rows(&[
        &[1.0, 2.0, 3.0, 4.0],
        &[3.0, 0.0, -1.0, 2.0],
    ]));
    let out = g
        .attention(q, k, v, 1, &AttentionLayout::single(2, 2, false))
        .unwrap();
    for r in 0..2 {
        let row = g.value(out).row(r);
        for (a, b) in row.iter().zip([2.0, 1.0, 1.0, 3.0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn decoder_is_causal() {
    let (s, t) = vocabs();
    let model = NmtModel::new(tiny(FusionScheme::Gate), s.clone(), t, 4).unwrap();
    let src = s.encode(&toks("a b c d"));
    let (nmt, hdr) = model.encode(&src).unwrap();
    let short = model.decode_step(&[BOS, 4, 5], &nmt, hdr.as_ref()).unwrap();
    // Logits for a prefix equal the corresponding rows of a longer pass.
    let run = |prefix: &[usize]| {
        let mut g = Graph::inference();
        let a = hdr_nmt::transformer::EncodedBatch {
            states: g.constant(nmt.states.clone()),
            lengths: vec![nmt.states.rows()],
        };
        let b = hdr_nmt::transformer::EncodedBatch {
            states: g.constant(hdr.as_ref().unwrap().states.clone()),
            lengths: vec![nmt.states.rows()],
        };
        let l = model
            .decoder
            .logits(&mut g, &model.store, &[prefix], Some(&b), &a, false)
            .unwrap();
        g.value(l).clone()
    };
    let long_a = run(&[BOS, 4, 5, 6, 7]);
    let long_b = run(&[BOS, 4, 5, 8, 4]);
    for (x, y) in short.iter().zip(long_a.row(2)) {
        assert!((x - y).abs() < 1e-5);
    }
    for r in 0..3 {
        assert_eq!(long_a.row(r), long_b.row(r), "row {r} saw a later token");
    }
    assert_ne!(long_a.row(3), long_b.row(3));
}

#[test]
fn encoder_contracts() {
    let (s, _) = vocabs();
    let cfg = ModelConfig {
        src_vocab: s.len(),
        tgt_vocab: 4,
        ..tiny(FusionScheme::Baseline)
    };
    let mut store = ParamStore::new();
    let enc = Encoder::new(&mut store, "enc.", &cfg, &mut rng(2));
    let ids = s.encode(&toks("a b c"));
    let a = enc.encode(&store, &ids).unwrap();
    let b = enc.encode(&store, &ids).unwrap();
    assert_eq!(a.states.shape(), [3, 16]);
    assert!(a.states.bit_eq(&b.states));
    let swapped = enc.encode(&store, &s.encode(&toks("b a c"))).unwrap();
    assert!(a.states.max_abs_diff(&swapped.states) > 1e-4);
    let out_of_range = vec![4; 13];
    assert!(enc.encode(&store, &out_of_range).is_err());
}

fn fusion(scheme: FusionScheme, gate: GateMode, identity: bool) -> (FusionLayer, ParamStore) {
    let cfg = ModelConfig {
        identity_mode: identity,
        ..fusion_config(scheme, gate)
    };
    let mut store = ParamStore::new();
    let layer = FusionLayer::new(&mut store, "f", &cfg, &mut rng(8));
    (layer, store)
}

#[test]
fn gate_endpoints_select_one_branch() {
    for (w, pick_hdr) in [(1.0, true), (0.0, false)] {
        let (layer, ps) = fusion(FusionScheme::Gate, GateMode::Fixed(w), false);
        let mut g = Graph::inference();
        let s = g.constant(random(&[3, 8], 1));
        let h = g.constant(random(&[4, 8], 2));
        let n = g.constant(random(&[4, 8], 3));
        let t = layer
            .forward_traced(
                &mut g,
                &ps,
                s,
                Some(h),
                n,
                &AttentionLayout::single(3, 4, false),
                0.0,
            )
            .unwrap();
        let branch = if pick_hdr {
            t.s_h.unwrap()
        } else {
            t.s_n.unwrap()
        };
        assert!(g.value(t.ffn_input).bit_eq(g.value(branch)), "gate {w}");
    }
}

#[test]
fn sigmoid_gate_stays_in_unit_interval() {
    let (layer, ps) = fusion(FusionScheme::Gate, GateMode::Sigmoid, false);
    let mut g = Graph::inference();
    let s = g.constant(random(&[3, 8], 1));
    let h = g.constant(random(&[4, 8], 2));
    let n = g.constant(random(&[4, 8], 3));
    let t = layer
        .forward_traced(
            &mut g,
            &ps,
            s,
            Some(h),
            n,
            &AttentionLayout::single(3, 4, false),
            0.0,
        )
        .unwrap();
    let gate = g.value(t.gate.unwrap());
    assert_eq!(gate.shape(), [3, 1]);
    assert!(gate.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn tied_branches_agree() {
    let (layer, mut ps) = fusion(FusionScheme::Add, GateMode::Fixed(0.5), false);
    let names: Vec<String> = ps.iter().map(|(_, p)| p.name.clone()).collect();
    for name in names.iter().filter(|n| n.starts_with("f.cross_h.")) {
        let twin = name.replace("cross_h", "cross_n");
        let v = ps.by_name(&twin).unwrap().value.clone();
        ps.get_mut(ps.id(name).unwrap()).value = v;
    }
    for name in names.iter().filter(|n| n.starts_with("f.ln_h.")) {
        let twin = name.replace("ln_h", "ln_n");
        let v = ps.by_name(&twin).unwrap().value.clone();
        ps.get_mut(ps.id(name).unwrap()).value = v;
    }
    let mut g = Graph::inference();
    let s = g.constant(random(&[3, 8], 1));
    let mem = random(&[4, 8], 2);
    let h = g.constant(mem.clone());
    let n = g.constant(mem);
    let t = layer
        .forward_traced(
            &mut g,
            &ps,
            s,
            Some(h),
            n,
            &AttentionLayout::single(3, 4, false),
            0.0,
        )
        .unwrap();
    assert!(g.value(t.s_h.unwrap()).bit_eq(g.value(t.s_n.unwrap())));
    assert_eq!(g.value(t.out).shape(), [3, 8]);
}

#[test]
fn cascade_without_hdr_contribution_is_a_standard_layer() {
    let (cascade, mut ps) = fusion(FusionScheme::Cascade, GateMode::Fixed(0.5), false);
    // Zero output projection: the first attention contributes nothing.
    for p in ps.iter_mut() {
        if p.name.starts_with("f.cross_h.o.") {
            p.value = Tensor::zeros(p.value.shape());
        }
    }
    let s = random(&[3, 8], 1);
    let mem = random(&[4, 8], 2);
    let mut g = Graph::inference();
    let sv = g.constant(s.clone());
    let h = g.constant(random(&[4, 8], 5));
    let n = g.constant(mem.clone());
    let layout = AttentionLayout::single(3, 4, false);
    let got = cascade
        .forward(&mut g, &ps, sv, Some(h), n, &layout, 0.0)
        .unwrap();

    let cfg = fusion_config(FusionScheme::Baseline, GateMode::Fixed(0.5));
    let mut bs = ParamStore::new();
    let base = FusionLayer::new(&mut bs, "f", &cfg, &mut rng(0));
    let copied = bs.load_matching(&ps, "f.", "f.").unwrap();
    assert_eq!(copied, bs.len());
    // Plain layer norm on s stands in for the residual around the silent attention.
    let mut g2 = Graph::inference();
    let sv = g2.constant(s);
    let gm = g2.param(&ps, ps.id("f.ln_h.gamma").unwrap());
    let bt = g2.param(&ps, ps.id("f.ln_h.beta").unwrap());
    let s1 = g2.layer_norm(sv, gm, bt, 1e-5).unwrap();
    let n = g2.constant(mem);
    let want = base
        .forward(&mut g2, &bs, s1, None, n, &layout, 0.0)
        .unwrap();
    assert!(g.value(got).max_abs_diff(g2.value(want)) < 1e-5);
}

#[test]
fn selection_attention_is_convex_over_nmt_values() {
    let (layer, ps) = fusion(FusionScheme::Selection, GateMode::Fixed(0.5), false);
    let mut g = Graph::inference();
    let s = g.constant(random(&[3, 8], 1));
    let h = g.constant(random(&[4, 8], 2));
    let n = g.constant(random(&[4, 8], 3));
    let t = layer
        .forward_traced(
            &mut g,
            &ps,
            s,
            Some(h),
            n,
            &AttentionLayout::single(3, 4, false),
            0.0,
        )
        .unwrap();
    let raw = t.attention[0];
    let w = g.attention_weights(raw).expect("weights recorded");
    for head in &w {
        for row in head.iter().flatten() {
            assert!(row.iter().all(|&x| x >= 0.0));
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
    }

    // With one source position the attention reduces to the projected value.
    let mut g = Graph::inference();
    let s = g.constant(random(&[2, 8], 1));
    let h = g.constant(random(&[1, 8], 2));
    let n = g.constant(random(&[1, 8], 3));
    let t = layer
        .forward_traced(
            &mut g,
            &ps,
            s,
            Some(h),
            n,
            &AttentionLayout::single(2, 1, false),
            0.0,
        )
        .unwrap();
    let FusionLayer::Selection { v_n, .. } = &layer else {
        unreachable!()
    };
    let v = v_n.forward(&mut g, &ps, n).unwrap();
    for r in 0..2 {
        let got = g.value(t.attention[0]).row(r).to_vec();
        assert!(got
            .iter()
            .zip(g.value(v).row(0))
            .all(|(a, b)| (a - b).abs() < 1e-6));
    }
}

#[test]
fn standalone_fusion_checks_scheme_and_shapes() {
    let (add, ps) = fusion(FusionScheme::Add, GateMode::Fixed(0.5), false);
    let inp = FusionInputs {
        s: random(&[3, 8], 1),
        hdr_states: Some(random(&[4, 8], 2)),
        nmt_states: random(&[4, 8], 3),
    };
    assert_eq!(
        hdr_nmt::fusion::fuse_add(&inp, &add, &ps).unwrap().shape(),
        [3, 8]
    );
    assert!(hdr_nmt::fusion::fuse_gate(&inp, &add, &ps).is_err());
    let bad = FusionInputs {
        hdr_states: Some(random(&[5, 8], 2)),
        ..inp.clone()
    };
    assert!(hdr_nmt::fusion::fuse_add(&bad, &add, &ps).is_err());
    let missing = FusionInputs {
        hdr_states: None,
        ..inp
    };
    assert!(hdr_nmt::fusion::fuse_add(&missing, &add, &ps).is_err());
}

#[test]
fn copy_task() {
    let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
    let mut r = rng(12);
    let mut pairs = Vec::new();
    for _ in 0..2000 {
        let n = r.random_range(3..=6);
        let s: Vec<String> = (0..n)
            .map(|_| words[r.random_range(0..20)].clone())
            .collect();
        pairs.push(SentencePair {
            source: s.clone(),
            target: s,
        });
    }
    let (train, test) = pairs.split_at(1900);
    let src = source_vocab(train, None, &[]);
    let tgt = target_vocab(train);
    let cfg = ModelConfig {
        d_model: 64,
        n_heads: 4,
        n_enc_layers: 2,
        n_dec_layers: 2,
        d_ff: 128,
        max_len: 8,
        dropout: 0.0,
        ..Default::default()
    };
    let mut model = NmtModel::new(cfg, src, tgt, 12).unwrap();
    let r = train_nmt(
        &mut model,
        train,
        &test[..20],
        &TrainOptions {
            max_steps: Some(500),
            max_tokens: 600,
            peak_lr: 2e-3,
            warmup_steps: 100,
            patience: 500,
            bleu_sentences: 0,
            seed: 12,
            ..Default::default()
        },
        |_| {},
    )
    .unwrap();
    assert_eq!(r.steps, 500);
    let exact = test
        .iter()
        .filter(|p| {
            let ids = model.src_vocab.encode(&p.source);
            let out = model.decode_sequence(&ids, Strategy::Greedy).unwrap();
            model.tgt_vocab.decode(&out) == p.target
        })
        .count();
    assert!(
        exact as f64 / test.len() as f64 >= 0.95,
        "copied {exact}/{}",
        test.len()
    );
}

#[test]
fn warm_start_reproduces_final_heldout_loss() {
    let c = generate_synthetic_homograph_corpus(150, 2, 4).unwrap();
    let (train, held) = c.pairs.split_at(120);
    let src = source_vocab(&c.pairs, None, &[]);
    let tgt = target_vocab(&c.pairs);
    let mut base =
        NmtModel::new(tiny(FusionScheme::Baseline), src.clone(), tgt.clone(), 4).unwrap();
    let opts = TrainOptions {
        max_steps: Some(30),
        max_tokens: 200,
        bleu_sentences: 0,
        seed: 4,
        ..Default::default()
    };
    let r = train_nmt(&mut base, train, held, &opts, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("base.ckpt");
    checkpoint::save_nmt(&base, 4, &path).unwrap();
    let loaded = checkpoint::load_nmt(&path).unwrap();

    // Same architecture, and a gate model that reuses every shared tensor.
    let mut again =
        NmtModel::new(tiny(FusionScheme::Baseline), src.clone(), tgt.clone(), 99).unwrap();
    again.store.load_matching(&loaded.store, "", "").unwrap();
    let mut first = None;
    train_nmt(
        &mut again,
        train,
        held,
        &TrainOptions {
            max_steps: Some(0),
            ..opts.clone()
        },
        |m| {
            first.get_or_insert(m.heldout_loss);
        },
    )
    .unwrap();
    assert!((first.unwrap() - r.best_heldout_loss).abs() < 1e-4);

    let mut gate = NmtModel::new(tiny(FusionScheme::Gate), src, tgt, 5).unwrap();
    let n = gate.store.load_matching(&loaded.store, "", "").unwrap();
    assert!(n > 0 && n < gate.store.len());
    let ids: Vec<_> = held.iter().map(|p| gate.encode_pair(p)).collect();
    assert!(heldout_loss(&gate, &ids, 200).unwrap().is_finite());
}

#[test]
fn translation_is_deterministic_and_handles_empty_input() {
    let (s, t) = vocabs();
    let model = NmtModel::new(tiny(FusionScheme::Selection), s, t, 6).unwrap();
    let none: Vec<String> = Vec::new();
    assert!(model.translate(&none, Strategy::Greedy).unwrap().is_empty());
    let a = model
        .translate(&["a b c", "d e"], Strategy::Greedy)
        .unwrap();
    let b = model
        .translate(&["a b c", "d e"], Strategy::Greedy)
        .unwrap();
    assert_eq!(a, b);
    let beam1 = model
        .translate(&["a b c", "d e"], Strategy::Beam(1))
        .unwrap();
    assert_eq!(a, beam1);
    for out in model.translate(&["a b c"], Strategy::Beam(3)).unwrap() {
        assert!(out.split_whitespace().count() <= model.config.max_len);
    }
}

#[test]
fn second_encoder_requires_matching_output_count() {
    let (s, t) = vocabs();
    let gate = NmtModel::new(tiny(FusionScheme::Gate), s.clone(), t.clone(), 1).unwrap();
    let base = NmtModel::new(tiny(FusionScheme::Baseline), s.clone(), t, 1).unwrap();
    let ids = s.encode(&toks("a b"));
    let (a, b) = gate.encode(&ids).unwrap();
    assert!(gate.decode_step(&[BOS], &a, None).is_err());
    assert_eq!(
        gate.decode_step(&[BOS], &a, b.as_ref()).unwrap().len(),
        gate.tgt_vocab.len()
    );
    let (a, _) = base.encode(&ids).unwrap();
    assert!(base.decode_step(&[BOS], &a, Some(&a)).is_err());
}

#[test]
fn pretrained_encoder_checkpoints_chain() {
    let c = generate_synthetic_homograph_corpus(60, 2, 3).unwrap();
    let src = source_vocab(&c.pairs, Some(&c.wordnet), &[]);
    let cfg = tiny(FusionScheme::Baseline);
    let hdr = HdrModel::new(cfg.clone(), src.clone(), false, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sr.ckpt");
    checkpoint::save_hdr(&hdr, 3, &path).unwrap();
    // A sentence-stage checkpoint is a valid word-stage starting point.
    let mut again = checkpoint::load_hdr(&path).unwrap();
    assert!(again.store.bit_eq(&hdr.store));
    let set = hdr_nmt::data::prepare_disambiguation_set(&c.annotations, &c.wordnet).unwrap();
    wdr_train(
        &mut again,
        &set.pairs[..8],
        &WdrOptions {
            steps: 3,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(!again.store.bit_eq(&hdr.store));
    let head_same = again
        .store
        .iter()
        .filter(|(_, p)| p.name.starts_with("sr."))
        .all(|(_, p)| hdr.store.by_name(&p.name).unwrap().value.bit_eq(&p.value));
    assert!(head_same);

    let mut nmt = NmtModel::new(
        ModelConfig {
            fusion_scheme: FusionScheme::Cascade,
            second_encoder_source: SecondEncoderSource::HdrPretrained,
            ..cfg
        },
        src,
        target_vocab(&c.pairs),
        3,
    )
    .unwrap();
    nmt.attach_hdr(&again.store, ENCODER_PREFIX).unwrap();
    assert!(nmt.hdr_matches(&again.store, ENCODER_PREFIX));
    let bytes = Checkpoint::from_nmt(&nmt, 3).to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() / 2]).is_err());
}

fn pair(original: &str, i: usize, example: &str, j: usize) -> SynsetPair {
    SynsetPair {
        original: toks(original),
        example: toks(example),
        i,
        j,
        synset_id: "x.n.01".into(),
        sentence_id: 0,
        example_id: 0,
    }
}

#[test]
fn word_stage_loss_contracts() {
    let vocab = Vocab::build(&[toks("the bank of the river money interest")], 1, None);
    let cfg = ModelConfig {
        dropout: 0.0,
        ..tiny(FusionScheme::Baseline)
    };
    let mut model = HdrModel::new(cfg, vocab, false, 7).unwrap();
    let same = pair("the bank of the river", 1, "the bank of the river", 1);
    let mut g = Graph::inference();
    let l = wdr_loss(&mut g, &model, &[&same], false).unwrap();
    assert_eq!(g.value(l).data()[0], 0.0);

    let p = pair("the bank of the river", 1, "money interest bank", 2);
    let mut g = Graph::inference();
    let l = wdr_loss(&mut g, &model, &[&p, &same], false).unwrap();
    let v = g.value(l).data()[0];
    assert!((0.0..=2.0).contains(&v));

    let mut last = f32::INFINITY;
    let report = wdr_train(
        &mut model,
        std::slice::from_ref(&p),
        &WdrOptions {
            steps: 10,
            batch_size: 1,
            lr: 1e-4,
            dropout: false,
            seed: 1,
        },
    )
    .unwrap();
    for &l in &report.losses {
        assert!(l <= last + 1e-6, "{:?}", report.losses);
        last = l;
    }
}
