mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use usts::backbone::{biased_attention, Backbone, Block, PassOptions};
use usts::bias::{build_adjacency, differential_signal, dynamic_bias, BiasGenerator};
use usts::embeddings::{Calendar, Perception, TemporalEmbedding};
use usts::fusion::gated_fuse;
use usts::guidance::Guidance;
use usts::numerics::{Array, ParamStore, Tape};
use usts::ModelConfig;

#[test]
fn perception_hand_trace() {
    let cfg = ModelConfig {
        nodes: 2,
        channels: 1,
        embed_dim: 2,
        perception_hidden: 2,
        d_model: 2,
        group_kernel: 1,
        ..ModelConfig::default()
    };
    let mut store = ParamStore::<f64>::new();
    let p = Perception::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    set(&mut store, "percept.channel_mix.weight", &[1, 1], &[0.8]);
    set(&mut store, "percept.channel_mix.bias", &[1], &[0.1]);
    set(&mut store, "percept.node_groups.weight", &[2, 1, 1], &[0.5, -1.2]);
    set(&mut store, "percept.node_groups.bias", &[2], &[0.05, -0.1]);
    set(&mut store, "percept.gru.w_ih", &[2, 6], &pattern(12, 0.1, 0));
    set(&mut store, "percept.gru.b_ih", &[6], &pattern(6, 0.05, 3));
    set(&mut store, "percept.gru.w_hh", &[2, 6], &pattern(12, 0.08, 5));
    set(&mut store, "percept.gru.b_hh", &[6], &pattern(6, 0.04, 1));
    set(&mut store, "percept.proj.weight", &[2, 2], &[0.3, -0.5, 0.7, 0.2]);
    set(&mut store, "percept.proj.bias", &[2], &[0.01, -0.02]);
    let tape = Tape::new();
    let x = tape.constant(Array::from_f64(&[1, 2, 2, 1], &[0.5, -1.0, 2.0, 0.25]).unwrap());
    let e = tape.constant(Array::from_f64(&[1, 2, 2], &[0.3, -0.2, 0.1, 0.4]).unwrap());
    let h = p.forward(&tape, &store, x, e).unwrap();
    assert_eq!(h.shape(), vec![1, 2, 2]);
    assert_close(
        &h.value().to_f64_vec(),
        &[
            0.012255980037478588,
            -0.1016493811892284,
            -0.07623610287492165,
            -0.1625954811108933,
        ],
        1e-12,
    );
}

#[test]
fn perception_shapes_and_time_order() {
    for (n, c) in [(3, 1), (5, 4), (8, 2)] {
        let cfg = ModelConfig {
            nodes: n,
            channels: c,
            embed_dim: 2,
            perception_hidden: 3,
            d_model: 8,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::<f64>::new();
        let p = Perception::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(n as u64)).unwrap();
        let tape = Tape::new();
        let xv = randn(&[2, 6, n, c], 1);
        let e = tape.constant(randn(&[2, 6, 2], 2));
        let h = p.forward(&tape, &store, tape.constant(xv.clone()), e).unwrap();
        assert_eq!(h.shape(), vec![2, 6, 8]);

        // Reversing time changes the output.
        let rev = Array::from_fn(&[2, 6, n, c], |i| {
            let per = n * c;
            let (b, t, r) = (i / (6 * per), (i / per) % 6, i % per);
            xv.data()[(b * 6 + 5 - t) * per + r]
        });
        let hr = p.forward(&tape, &store, tape.constant(rev), e).unwrap();
        assert!(h.value().max_abs_diff(&hr.value()) > 1e-6);
    }
}

#[test]
fn perception_dimension_errors_name_stage() {
    let cfg = ModelConfig {
        nodes: 3,
        channels: 2,
        embed_dim: 2,
        ..ModelConfig::default()
    };
    let mut store = ParamStore::<f64>::new();
    let p = Perception::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let tape = Tape::new();
    let err = p
        .forward(
            &tape,
            &store,
            tape.constant(Array::zeros(&[1, 4, 3, 2])),
            tape.constant(Array::zeros(&[1, 4, 3])),
        )
        .unwrap_err();
    assert!(err.to_string().contains("temporal embedding"), "{err}");
}

#[test]
fn weekly_table_separates_days() {
    let cfg = ModelConfig {
        embed_dim: 3,
        intervals_per_day: 24,
        ..ModelConfig::default()
    };
    let mut store = ParamStore::<f64>::new();
    let emb = TemporalEmbedding::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let tape = Tape::new();
    let e = emb.forward(&tape, &store, &[5, 29], 2).unwrap().value();
    let (day, week) = (store.value(emb.daily), store.value(emb.weekly));
    for j in 0..3 {
        let diff = e.data()[3 + j] - e.data()[j];
        let expect = week.data()[3 + j] - week.data()[j];
        assert!((diff - expect).abs() < 1e-15);
        assert_eq!(e.data()[j], day.data()[5 * 3 + j] + week.data()[j]);
    }
    store.assign(emb.weekly, Array::zeros(&[7, 3])).unwrap();
    let tape = Tape::new();
    let e = emb.forward(&tape, &store, &[5], 1).unwrap().value();
    assert_eq!(e.data(), &store.value(emb.daily).data()[15..18]);
}

proptest! {
    #[test]
    fn embedding_is_periodic(t in 0u64..100_000, k in 0u64..20, f in 1u64..4, q in 1u64..50) {
        let cal = Calendar { steps_per_interval: f, intervals_per_day: q, week_cycle: 7 };
        let (d, w) = cal.indices(t);
        prop_assert!(d < q as usize && w < 7);
        prop_assert_eq!(cal.indices(t), cal.indices(t + k * cal.period()));
    }
}

fn scalar_gru(
    store: &mut ParamStore<f64>,
    prefix: &str,
    w_ih: [f64; 3],
    b_ih: [f64; 3],
    w_hh: [f64; 3],
    b_hh: [f64; 3],
) {
    set(store, &format!("{prefix}.w_ih"), &[1, 3], &w_ih);
    set(store, &format!("{prefix}.b_ih"), &[3], &b_ih);
    set(store, &format!("{prefix}.w_hh"), &[1, 3], &w_hh);
    set(store, &format!("{prefix}.b_hh"), &[3], &b_hh);
}

fn scalar_guidance() -> (Guidance, ParamStore<f64>) {
    let cfg = ModelConfig {
        channels: 1,
        guidance_hidden: 1,
        ..ModelConfig::default()
    };
    let mut store = ParamStore::new();
    let g = Guidance::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let fwd = ([0.5, -0.3, 0.8], [0.1, 0.2, -0.1], [0.4, 0.6, -0.7], [0.0, 0.1, 0.05]);
    scalar_gru(&mut store, "guide.predict.gru", fwd.0, fwd.1, fwd.2, fwd.3);
    set(&mut store, "guide.predict.head.weight", &[1, 1], &[1.5]);
    set(&mut store, "guide.predict.head.bias", &[1], &[-0.2]);
    scalar_gru(&mut store, "guide.forward.gru", fwd.0, fwd.1, fwd.2, fwd.3);
    set(&mut store, "guide.forward.head.weight", &[1, 1], &[0.7]);
    set(&mut store, "guide.forward.head.bias", &[1], &[0.3]);
    scalar_gru(
        &mut store,
        "guide.backward.gru",
        [-0.6, 0.2, 0.9],
        [0.05, -0.1, 0.2],
        [0.3, -0.4, 0.5],
        [0.1, 0.0, -0.05],
    );
    set(&mut store, "guide.backward.head.weight", &[1, 1], &[-1.1]);
    set(&mut store, "guide.backward.head.bias", &[1], &[0.4]);
    (g, store)
}

#[test]
fn guidance_predict_hand_trace() {
    let (g, store) = scalar_guidance();
    let tape = Tape::new();
    let x = tape.constant(Array::from_f64(&[1, 3, 1, 1], &[1.0, -2.0, 0.5]).unwrap());
    let y = g.predict(&tape, &store, x, 2).unwrap();
    assert_eq!(y.shape(), vec![1, 2, 1, 1]);
    assert_close(
        &y.value().to_f64_vec(),
        &[-0.2058789477558156, 0.018704832117434955],
        1e-12,
    );
    assert_eq!(g.predict(&tape, &store, x, 3).unwrap().shape(), vec![1, 3, 1, 1]);
}

#[test]
fn guidance_impute_hand_trace() {
    let (g, store) = scalar_guidance();
    let tape = Tape::new();
    let x = tape.constant(Array::from_f64(&[1, 3, 1, 1], &[1.0, 0.0, 0.5]).unwrap());
    let m = Array::from_f64(&[1, 3, 1, 1], &[1., 0., 1.]).unwrap();
    let y = g.impute(&tape, &store, x, &m).unwrap();
    assert_close(&y.value().to_f64_vec(), &[1.0, -0.09837180004854384, 0.5], 1e-12);
}

#[test]
fn guidance_zero_heads_give_bias_constants() {
    let cfg = ModelConfig {
        channels: 2,
        guidance_hidden: 3,
        ..ModelConfig::default()
    };
    let mut store = ParamStore::<f64>::new();
    let g = Guidance::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    for head in ["predict", "backward"] {
        set(&mut store, &format!("guide.{head}.head.weight"), &[3, 2], &[0.; 6]);
        set(&mut store, &format!("guide.{head}.head.bias"), &[2], &[0.25, -0.5]);
    }
    let tape = Tape::new();
    let x = tape.constant(randn(&[2, 5, 3, 2], 5));
    let y = g.predict(&tape, &store, x, 2).unwrap().value();
    assert_eq!(y.shape(), &[2, 2, 3, 2]);
    for (i, &v) in y.data().iter().enumerate() {
        assert_eq!(v, if i % 2 == 0 { 0.25 } else { -0.5 });
    }
    let y = g
        .impute(&tape, &store, x, &Array::zeros(&[2, 5, 3, 2]))
        .unwrap()
        .value();
    for (i, &v) in y.data().iter().enumerate() {
        assert_eq!(v, if i % 2 == 0 { 0.25 } else { -0.5 });
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn impute_passes_observed_entries_bitwise(seed in 0u64..10_000, p in 0.0f64..1.0) {
        let cfg = ModelConfig { channels: 2, guidance_hidden: 3, ..ModelConfig::default() };
        let mut store = ParamStore::<f32>::new();
        let g = Guidance::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let tape = Tape::new();
        let xv = randn(&[2, 6, 3, 2], seed).cast::<f32>();
        let m = bernoulli(&[2, 6, 3, 2], p, seed + 1).cast::<f32>();
        let y = g.impute(&tape, &store, tape.constant(xv.clone()), &m).unwrap().value();
        prop_assert_eq!(y.shape(), xv.shape());
        for i in 0..xv.numel() {
            if m.data()[i] == 1.0 {
                prop_assert_eq!(y.data()[i].to_bits(), xv.data()[i].to_bits());
            }
        }
    }
}

fn block_cfg() -> ModelConfig {
    ModelConfig {
        d_model: 2,
        n_heads: 1,
        ..ModelConfig::default()
    }
}

#[test]
fn block_hand_trace() {
    let mut store = ParamStore::<f64>::new();
    let block = Block::new(&mut store, 0, &block_cfg(), false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let p = "backbone.block0";
    set(&mut store, &format!("{p}.ln_attn.gamma"), &[2], &[1.2, 0.8]);
    set(&mut store, &format!("{p}.ln_attn.beta"), &[2], &[0.1, -0.1]);
    for (w, wv, bv) in [
        ("q", [0.5, -0.2, 0.3, 0.9], [0.0, 0.1]),
        ("k", [-0.4, 0.6, 0.2, 0.1], [0.05, 0.0]),
        ("v", [0.7, 0.3, -0.5, 0.4], [0.0, -0.2]),
        ("o", [0.6, -0.1, 0.2, 0.5], [0.02, 0.03]),
    ] {
        set(&mut store, &format!("{p}.attn.{w}.weight"), &[2, 2], &wv);
        set(&mut store, &format!("{p}.attn.{w}.bias"), &[2], &bv);
    }
    set(&mut store, &format!("{p}.ln_mlp.gamma"), &[2], &[0.9, 1.1]);
    set(&mut store, &format!("{p}.ln_mlp.beta"), &[2], &[0.0, 0.05]);
    set(
        &mut store,
        &format!("{p}.mlp.fc.weight"),
        &[2, 8],
        &pattern(16, 0.07, 2),
    );
    set(&mut store, &format!("{p}.mlp.fc.bias"), &[8], &pattern(8, 0.02, 4));
    set(
        &mut store,
        &format!("{p}.mlp.out.weight"),
        &[8, 2],
        &pattern(16, 0.06, 6),
    );
    set(&mut store, &format!("{p}.mlp.out.bias"), &[2], &[0.01, -0.01]);
    let tape = Tape::new();
    let h = tape.constant(Array::from_f64(&[1, 2, 2], &[0.4, -0.9, 1.3, 0.2]).unwrap());
    let run = |causal| {
        let opts = PassOptions { causal, adapters: true };
        block
            .forward(&tape, &store, h, None, opts, None)
            .unwrap()
            .value()
            .to_f64_vec()
    };
    assert_close(
        &run(false),
        &[
            1.1950005879839412,
            -1.0968347764840278,
            2.0950006013396347,
            0.0031652113518219867,
        ],
        1e-12,
    );
    assert_close(
        &run(true),
        &[
            1.1950023530831502,
            -1.0968350205934028,
            2.0950006013396347,
            0.0031652113518219867,
        ],
        1e-12,
    );
}

fn attention_inputs(tape: &Tape<f64>, seed: u64) -> [usts::numerics::Var<'_, f64>; 3] {
    [
        tape.constant(randn(&[2, 3, 5, 4], seed)),
        tape.constant(randn(&[2, 3, 5, 4], seed + 1)),
        tape.constant(randn(&[2, 3, 5, 4], seed + 2)),
    ]
}

#[test]
fn attention_contracts() {
    let tape = Tape::new();
    let [q, k, v] = attention_inputs(&tape, 3);
    let bias = tape.constant(randn(&[2, 5, 5], 9).map(|x| 20.0 * x));
    let (_, w) = biased_attention(q, k, v, Some(bias), true).unwrap();
    let w = w.value();
    for row in w.data().chunks(5) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    for b in 0..2 {
        for h in 0..3 {
            for i in 0..5 {
                for j in i + 1..5 {
                    assert_eq!(w.at(&[b, h, i, j]), 0.0);
                }
            }
        }
    }

    let mut spike = Array::<f64>::zeros(&[2, 5, 5]);
    spike.set(&[1, 2, 4], 1e9);
    let (_, w) = biased_attention(q, k, v, Some(tape.constant(spike)), false).unwrap();
    for h in 0..3 {
        assert!(w.value().at(&[1, h, 2, 4]) >= 0.999);
    }

    let (plain, _) = biased_attention(q, k, v, None, false).unwrap();
    let (zero, _) = biased_attention(q, k, v, Some(tape.constant(Array::zeros(&[2, 5, 5]))), false).unwrap();
    assert!(plain.value().bit_eq(&zero.value()));

    let mut bad = Array::<f64>::zeros(&[2, 5, 5]);
    bad.set(&[0, 0, 0], f64::NAN);
    let err = biased_attention(q, k, v, Some(tape.constant(bad)), false).unwrap_err();
    assert!(err.to_string().contains("bias generator"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_rows_sum_to_one(seed in 0u64..10_000, scale in 0.0f64..50.0, causal: bool) {
        let tape = Tape::<f32>::new();
        let q = tape.constant(randn(&[1, 2, 6, 4], seed).cast());
        let k = tape.constant(randn(&[1, 2, 6, 4], seed + 1).cast());
        let v = tape.constant(randn(&[1, 2, 6, 4], seed + 2).cast());
        let bias = tape.constant(randn(&[1, 6, 6], seed + 3).map(|x| scale * x).cast());
        let (_, w) = biased_attention(q, k, v, Some(bias), causal).unwrap();
        for row in w.value().data().chunks(6) {
            prop_assert!((row.iter().map(|&x| x as f64).sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }
}

fn lora_cfg(n_layers: usize, frozen: usize, adapted: usize) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_layers,
        frozen_layers: frozen,
        adapted_layers: adapted,
        lora_rank: 2,
        hist_len: 6,
        horizon: 2,
        ..ModelConfig::default()
    }
}

#[test]
fn adapted_blocks_own_the_trainable_set() {
    let mut store = ParamStore::<f64>::new();
    Backbone::new(&mut store, &lora_cfg(4, 2, 2), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut names: Vec<String> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(_, p)| p.name.clone())
        .collect();
    names.sort();
    let mut expect = Vec::new();
    for b in [2, 3] {
        for s in [
            "attn.k.lora_a",
            "attn.k.lora_b",
            "attn.q.lora_a",
            "attn.q.lora_b",
            "ln_attn.beta",
            "ln_attn.gamma",
        ] {
            expect.push(format!("backbone.block{b}.{s}"));
        }
    }
    expect.sort();
    assert_eq!(names, expect);
}

#[test]
fn trainable_count_formula() {
    use usts::config::LoraTarget::*;
    for (d, heads, r, layers, adapted, targets) in [
        (16, 2, 2, 3, 1, vec![Q, K]),
        (32, 4, 4, 4, 2, vec![Q, K, V]),
        (64, 4, 4, 6, 3, vec![Q, K]),
        (24, 3, 3, 2, 2, vec![Q, K, V, O]),
        (16, 2, 1, 2, 0, vec![Q, K]),
    ] {
        let cfg = ModelConfig {
            d_model: d,
            n_heads: heads,
            lora_rank: r,
            n_layers: layers,
            frozen_layers: layers - adapted,
            adapted_layers: adapted,
            lora_targets: targets.clone(),
            hist_len: 4,
            horizon: 1,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::<f32>::new();
        Backbone::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let expect = adapted * targets.len() * 2 * d * r + adapted * 2 * d;
        assert_eq!(store.count(true), expect, "{cfg:?}");
    }
}

#[test]
fn fresh_adapters_match_frozen_forward_exactly() {
    let cfg = lora_cfg(3, 1, 2);
    let mut store = ParamStore::<f64>::new();
    let bb = Backbone::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let tape = Tape::new();
    let h = tape.constant(randn(&[2, 6, 16], 1));
    let bias = Some(tape.constant(randn(&[2, 6, 6], 2)));
    for causal in [false, true] {
        let with = bb
            .forward(&tape, &store, h, bias, PassOptions { causal, adapters: true }, None)
            .unwrap();
        let without = bb
            .forward(
                &tape,
                &store,
                h,
                bias,
                PassOptions {
                    causal,
                    adapters: false,
                },
                None,
            )
            .unwrap();
        assert_eq!(*with.value(), *without.value());
    }
}

#[test]
fn zero_intensity_matches_unbiased_forward() {
    let cfg = ModelConfig {
        nodes: 3,
        channels: 2,
        gate_hidden: 4,
        ..lora_cfg(3, 1, 2)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f32>::new();
    let bb = Backbone::new(&mut store, &cfg, &mut rng).unwrap();
    let gen = BiasGenerator::new(&mut store, &cfg, &mut rng).unwrap();
    store.assign(gen.intensity, Array::scalar(0.0)).unwrap();
    let tape = Tape::new();
    let x = randn(&[2, 6, 3, 2], 5).cast::<f32>();
    let bias = gen.forward(&tape, &store, &x, true).unwrap();
    assert!(bias.value().data().iter().all(|&v| v == 0.0));
    let h = tape.constant(randn(&[2, 6, 16], 6).cast::<f32>());
    let opts = PassOptions {
        causal: true,
        adapters: true,
    };
    let biased = bb.forward(&tape, &store, h, Some(bias), opts, None).unwrap();
    let plain = bb.forward(&tape, &store, h, None, opts, None).unwrap();
    assert!(biased.value().max_abs_diff(&plain.value()) <= 1e-6);
}

#[test]
fn bias_structure() {
    let cfg = ModelConfig {
        nodes: 5,
        channels: 2,
        hist_len: 7,
        gate_hidden: 4,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::<f64>::new();
    let gen = BiasGenerator::new(&mut store, &cfg, &mut rng).unwrap();
    store.assign(gen.intensity, Array::scalar(1.3)).unwrap();
    let series = randn(&[40, 5, 2], 12).map(f64::abs);
    store.assign(gen.adjacency, build_adjacency(&series).unwrap()).unwrap();
    let tape = Tape::new();
    let x = randn(&[3, 7, 5, 2], 13);
    let b = gen.forward(&tape, &store, &x, true).unwrap().value();
    assert_eq!(b.shape(), &[3, 7, 7]);
    for s in 0..3 {
        for i in 0..7 {
            for j in 0..7 {
                assert!((b.at(&[s, i, j]) - b.at(&[s, j, i])).abs() < 1e-12);
            }
        }
    }

    // g is tanh-bounded and the outer product has rank one.
    let signal = tape.constant(differential_signal(&x).unwrap());
    let (k, g) = gen.gate(&tape, &store, signal).unwrap();
    assert_eq!(k.shape(), vec![7, 5]);
    assert!(g.value().data().iter().all(|v| v.abs() < 1.0));
    let outer = dynamic_bias(
        tape.constant(Array::ones(&[7, 7])),
        g,
        tape.constant(Array::scalar(1.0)),
    )
    .unwrap()
    .value();
    for s in 0..3 {
        // Every 2×2 minor of g·gᵀ vanishes, so its rank is at most one.
        for (i, j) in [(0, 1), (2, 5), (3, 6), (1, 4)] {
            let m = |a, b| outer.at(&[s, a, b]);
            assert!((m(i, i) * m(j, j) - m(i, j) * m(j, i)).abs() < 1e-12);
        }
    }

    // Identical samples: k equals a single sample's head output.
    let one = Array::from_fn(&[1, 7, 5, 2], |i| x.data()[i]);
    let same = Array::from_fn(&[3, 7, 5, 2], |i| one.data()[i % one.numel()]);
    let (k1, _) = gen
        .gate(&tape, &store, tape.constant(differential_signal(&one).unwrap()))
        .unwrap();
    let (k3, _) = gen
        .gate(&tape, &store, tape.constant(differential_signal(&same).unwrap()))
        .unwrap();
    assert!(k1.value().max_abs_diff(&k3.value()) < 1e-12);

    // Zero intensity gives a zero bias; unit gate and intensity give B_s.
    let bs = tape.constant(randn(&[7, 7], 14));
    let g1 = tape.constant(Array::ones(&[2, 7]));
    let out = dynamic_bias(bs, g1, tape.constant(Array::scalar(1.0))).unwrap().value();
    assert_eq!(&out.data()[..49], bs.value().data());
    assert_eq!(&out.data()[49..], bs.value().data());
}

#[test]
fn zero_signal_gives_zero_bias() {
    let cfg = ModelConfig {
        nodes: 3,
        channels: 1,
        hist_len: 5,
        gate_hidden: 4,
        ..ModelConfig::default()
    };
    let mut store = ParamStore::<f64>::new();
    let gen = BiasGenerator::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for name in ["bias.gate_in.bias", "bias.gate_out.bias"] {
        set_array(&mut store, name, Array::zeros(&[4]));
    }
    set_array(&mut store, "bias.head_k.bias", Array::zeros(&[3]));
    set_array(&mut store, "bias.head_g.bias", Array::zeros(&[1]));
    let tape = Tape::new();
    let b = gen
        .forward(&tape, &store, &Array::full(&[2, 5, 3, 1], 4.0), true)
        .unwrap();
    assert!(b.value().data().iter().all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn differential_signal_ignores_node_order(seed in 0u64..10_000) {
        let x = randn(&[2, 5, 4, 2], seed);
        let perm = [2usize, 0, 3, 1];
        let shuffled = Array::from_fn(&[2, 5, 4, 2], |i| {
            let (bt, n, c) = (i / 8, (i / 2) % 4, i % 2);
            x.data()[bt * 8 + perm[n] * 2 + c]
        });
        let a = differential_signal(&x).unwrap();
        let b = differential_signal(&shuffled).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn adjacency_symmetric_and_finite(seed in 0u64..10_000, n in 1usize..7) {
        let series = randn(&[12, n, 2], seed).map(f64::abs);
        let a = build_adjacency(&series).unwrap();
        prop_assert!(a.is_finite());
        for i in 0..n {
            for j in 0..n {
                prop_assert!((a.at(&[i, j]) - a.at(&[j, i])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn fused_output_is_convex(seed in 0u64..10_000, raw in -8.0f64..8.0) {
        let tape = Tape::<f64>::new();
        let h = randn(&[2, 3, 2, 1], seed);
        let g = randn(&[2, 3, 2, 1], seed + 1);
        let y = gated_fuse(tape.constant(h.clone()), tape.constant(g.clone()), tape.constant(Array::scalar(raw)))
            .unwrap()
            .value();
        for i in 0..h.numel() {
            let (lo, hi) = (h.data()[i].min(g.data()[i]), h.data()[i].max(g.data()[i]));
            prop_assert!(y.data()[i] >= lo - 1e-15 && y.data()[i] <= hi + 1e-15);
        }
    }
}
