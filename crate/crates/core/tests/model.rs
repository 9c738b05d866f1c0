mod common;

use common::{bernoulli, randn, set, times, tiny_cfg};
use usts::backbone::is_lora;
use usts::checkpoint;
use usts::numerics::{Array, Tape};
use usts::{Input, Model, ModelConfig, Task};

fn run(model: &Model<f64>, x: &Array<f64>, mask: Option<&Array<f64>>, task: Task, u: Option<&[f64]>) -> Vec<f64> {
    let tape = Tape::new();
    let t = times(x.shape()[0], x.shape()[1], 5);
    let out = model
        .forward(&tape, Input { x, mask, times: &t }, task, u, None, None)
        .unwrap();
    out.y.value().to_f64_vec()
}

#[test]
fn output_shapes_per_task() {
    let cfg = tiny_cfg();
    let model = Model::<f64>::new(cfg.clone(), 0).unwrap();
    let x = randn(&[3, 8, 4, 2], 1);
    let mask = bernoulli(&[3, 8, 4, 2], 0.3, 2);
    assert_eq!(run(&model, &x, None, Task::Predict, None).len(), 3 * 4 * 4 * 2);
    assert_eq!(run(&model, &x, Some(&mask), Task::Impute, None).len(), 3 * 8 * 4 * 2);
    let tape = Tape::new();
    let t = times(3, 8, 0);
    let err = model
        .forward(
            &tape,
            Input {
                x: &x,
                mask: None,
                times: &t,
            },
            Task::Impute,
            None,
            None,
            None,
        )
        .err()
        .unwrap();
    assert_eq!(err.code(), "E_CONTRACT");
}

#[test]
fn identity_scale_matches_conditioning_off() {
    let on_cfg = tiny_cfg();
    let off_cfg = ModelConfig {
        conditioning: false,
        ..tiny_cfg()
    };
    let mut on = Model::<f64>::new(on_cfg, 3).unwrap();
    let off = Model::<f64>::new(off_cfg, 3).unwrap();
    set(&mut on.store, "cond.center", &[1], &[1.0]);
    set(&mut on.store, "cond.radius", &[1], &[0.0]);
    for name in ["cond.out.weight", "cond.out.bias"] {
        let id = on.store.lookup(name).unwrap();
        let shape = on.store.value(id).shape().to_vec();
        on.store.assign(id, Array::zeros(&shape)).unwrap();
    }
    let x = randn(&[2, 8, 4, 2], 4);
    let mask = bernoulli(&[2, 8, 4, 2], 0.4, 5);
    let u = [0.13, 0.91];
    for (task, m) in [(Task::Predict, None), (Task::Impute, Some(&mask))] {
        let a = run(&on, &x, m, task, Some(&u));
        let b = run(&off, &x, m, task, Some(&u));
        common::assert_close(&a, &b, 1e-6);
    }
}

#[test]
fn guidance_off_leaves_guidance_without_gradient() {
    let cfg = ModelConfig {
        use_guidance: false,
        ..tiny_cfg()
    };
    let model = Model::<f64>::new(cfg, 1).unwrap();
    let x = randn(&[2, 8, 4, 2], 6);
    let t = times(2, 8, 0);
    let tape = Tape::new();
    let out = model
        .forward(
            &tape,
            Input {
                x: &x,
                mask: None,
                times: &t,
            },
            Task::Predict,
            None,
            None,
            None,
        )
        .unwrap();
    assert!(out.guide.is_none());
    let grads = tape.backward(out.y.square().sum_all()).unwrap();
    let mut guided = 0;
    for (id, p) in model.store.iter() {
        if p.name.starts_with("guide.") || p.name.ends_with(".gate") {
            guided += 1;
            assert!(
                grads.param(id).is_none_or(|g| g.data().iter().all(|&v| v == 0.0)),
                "{}",
                p.name
            );
        }
    }
    assert!(guided > 0);
}

#[test]
fn graph_off_is_identity_for_one_node() {
    let base = ModelConfig { nodes: 1, ..tiny_cfg() };
    let with = Model::<f64>::new(base.clone(), 2).unwrap();
    let without = Model::<f64>::new(
        ModelConfig {
            use_graph: false,
            ..base
        },
        2,
    )
    .unwrap();
    let x = randn(&[2, 8, 1, 2], 7);
    assert_eq!(
        run(&with, &x, None, Task::Predict, None),
        run(&without, &x, None, Task::Predict, None)
    );
}

#[test]
fn checkpoint_round_trip_reproduces_forward_bitwise() {
    let cfg = tiny_cfg();
    let mut a = Model::<f64>::new(cfg.clone(), 10).unwrap();
    // Move adapters off their zero init so they matter.
    for (id, p) in a.store.iter().map(|(id, p)| (id, p.clone())).collect::<Vec<_>>() {
        if is_lora(&p.name) {
            a.store.assign(id, randn(p.value.shape(), id.index() as u64)).unwrap();
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &a.store).unwrap();
    let mut b = Model::<f64>::new(cfg, 11).unwrap();
    checkpoint::load(&path, &mut b.store, |_| false).unwrap();
    let x = randn(&[2, 8, 4, 2], 8);
    let ya = run(&a, &x, None, Task::Predict, None);
    let yb = run(&b, &x, None, Task::Predict, None);
    assert!(ya.iter().zip(&yb).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn checkpoint_without_adapters_loads_fresh_ones() {
    let cfg = tiny_cfg();
    let a = Model::<f32>::new(cfg.clone(), 20).unwrap();
    let records: Vec<_> = checkpoint::decode(&checkpoint::encode(&a.store))
        .unwrap()
        .into_iter()
        .filter(|r| !is_lora(&r.name))
        .collect();
    let mut b = Model::<f32>::new(cfg, 21).unwrap();
    let fresh = b.store.clone();
    assert!(checkpoint::load_into(&records, &mut b.store, |_| false).is_err());
    checkpoint::load_into(&records, &mut b.store, is_lora).unwrap();
    for (id, p) in b.store.iter() {
        let want = if is_lora(&p.name) {
            fresh.value(id)
        } else {
            a.store.value(id)
        };
        assert!(p.value.bit_eq(want), "{}", p.name);
    }
}

#[test]
fn f32_and_f64_agree() {
    let cfg = tiny_cfg();
    let m64 = Model::<f64>::new(cfg.clone(), 4).unwrap();
    let m32 = Model::<f32>::new(cfg, 4).unwrap();
    let x = randn(&[1, 8, 4, 2], 9);
    let y64 = run(&m64, &x, None, Task::Predict, None);
    let tape = Tape::<f32>::new();
    let t = times(1, 8, 5);
    let x32 = x.cast::<f32>();
    let y32 = m32
        .forward(
            &tape,
            Input {
                x: &x32,
                mask: None,
                times: &t,
            },
            Task::Predict,
            None,
            None,
            None,
        )
        .unwrap()
        .y
        .value()
        .to_f64_vec();
    common::assert_close(&y32, &y64, 1e-4);
}
