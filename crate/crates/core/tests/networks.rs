mod common;

use topofield::autodiff::{finite_difference_gradient, Bound, ParamStore, Tape, Tensor};
use topofield::nets::{DeformNet, NetConfig, ShapeGenerator};
use topofield::Result;

fn small() -> NetConfig {
    NetConfig {
        k: 2,
        latent_dim: 3,
        trunk_width: 5,
        trunk_depth: 2,
        hyper_hidden: 4,
        pe_point_freqs: 2,
        pe_feature_freqs: 1,
        uncond_hidden: 4,
        encoder_channels: vec![2, 2, 2, 2, 2],
        lstm_hidden: 3,
    }
}

fn shape_loss(net: &ShapeGenerator, tape: &mut Tape, b: &Bound, x: &Tensor, f: &Tensor, z: &Tensor) -> Result<Tensor> {
    let field = net.field(tape, b, z)?;
    let out = net.forward(tape, &field, x, Some(f))?;
    let s = common::mse(tape, &out.sdf)?;
    let c = tape.mean(&out.rgb)?;
    let t = tape.mean(&out.trunk)?;
    let a = tape.add(&s, &c)?;
    tape.add(&a, &t)
}

fn max_relative(store: &ParamStore, fd: &indexmap::IndexMap<String, Vec<f64>>) -> f64 {
    fd.iter()
        .map(|(name, num)| common::relative_error(store.grad(name).unwrap(), num))
        .fold(0.0, f64::max)
}

#[test]
fn shape_hypernetwork_gradients_match_finite_differences() {
    let cfg = small();
    let net = ShapeGenerator::new(&cfg).unwrap();
    let mut store = ParamStore::new();
    let mut r = common::rng(3);
    net.init(&mut store, &mut r).unwrap();
    let x = common::random(&mut r, &[6, 3], -1.0, 1.0);
    let f = common::random(&mut r, &[6, 2], -1.0, 1.0);
    let z = common::random(&mut r, &[1, 3], -1.0, 1.0);

    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let loss = shape_loss(&net, &mut tape, &bound, &x, &f, &z).unwrap();
    let g = tape.backward(&loss).unwrap();
    store.accumulate(&bound, &g);

    let fd = finite_difference_gradient(
        |p| {
            let mut t = Tape::inference();
            shape_loss(&net, &mut t, &p.frozen(), &x, &f, &z).unwrap().item()
        },
        &store,
        1e-5,
    )
    .unwrap();
    let err = max_relative(&store, &fd);
    assert!(err < 1e-5, "relative error {err:e}");
}

#[test]
fn deformnet_gradients_match_finite_differences() {
    let cfg = small();
    let net = DeformNet::new(&cfg).unwrap();
    let mut store = ParamStore::new();
    let mut r = common::rng(4);
    net.init(&mut store, &mut r).unwrap();
    // the zero-initialised displacement head would hide its own gradient
    for name in store.names().cloned().collect::<Vec<_>>() {
        let v: Vec<f64> = store.value(&name).to_vec().iter().map(|v| v + r_small(&mut r)).collect();
        store.set_value(&name, v).unwrap();
    }
    let x = common::random(&mut r, &[5, 3], -1.0, 1.0);
    let z = common::random(&mut r, &[1, 3], -1.0, 1.0);
    let loss = |tape: &mut Tape, b: &Bound| -> Result<Tensor> {
        let field = net.field(tape, b, &z)?;
        let out = net.forward(tape, &field, &x)?;
        let d = common::mse(tape, &out.delta)?;
        let f = common::mse(tape, out.features.as_ref().unwrap())?;
        let c = tape.mean(&out.rgb)?;
        let a = tape.add(&d, &f)?;
        tape.add(&a, &c)
    };
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    let l = loss(&mut tape, &b).unwrap();
    let g = tape.backward(&l).unwrap();
    store.accumulate(&b, &g);
    let fd = finite_difference_gradient(
        |p| {
            let mut t = Tape::inference();
            loss(&mut t, &p.frozen()).unwrap().item()
        },
        &store,
        1e-5,
    )
    .unwrap();
    let err = max_relative(&store, &fd);
    assert!(err < 1e-5, "relative error {err:e}");
}

fn r_small(r: &mut impl rand::Rng) -> f64 {
    r.gen_range(-0.05..0.05)
}
