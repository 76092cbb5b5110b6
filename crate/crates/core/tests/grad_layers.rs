//! Finite-difference verification of every layer adjoint.

use pnp_core::micrograd::fdcheck::{check_input_gradients, check_param_gradients};
use pnp_core::micrograd::{LayerSpec, NetParams};
use pnp_core::rng::Rng;
use pnp_core::tensor::Tensor;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Random input kept away from ReLU kinks so central differences stay clean.
fn image_input(rng: &mut Rng, c: usize, h: usize, w: usize) -> Tensor {
    let data: Vec<f64> = (0..c * h * w)
        .map(|_| {
            let v = rng.uniform_in(-1.0, 1.0);
            v + 0.05 * v.signum()
        })
        .collect();
    Tensor::from_real(&[c, h, w], data).unwrap()
}

fn vector_input(rng: &mut Rng, n: usize) -> Tensor {
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let v = rng.uniform_in(-1.0, 1.0);
            v + 0.05 * v.signum()
        })
        .collect();
    Tensor::from_real(&[n], data).unwrap()
}

fn check_net(topology: Vec<LayerSpec>, input: Tensor, label: &str) {
    let mut rng = Rng::new(0xBEEF);
    let mut net = NetParams::init(topology, &mut rng);
    if net.param_count() > 0 {
        let rep = check_param_gradients(&mut net, &input, H, 200, 99).unwrap();
        assert!(
            rep.max_rel_err <= TOL,
            "{label}: param grad rel err {} over {} coords",
            rep.max_rel_err,
            rep.coords_checked
        );
    }
    let rep = check_input_gradients(&mut net, &input, H, 200, 100).unwrap();
    assert!(
        rep.max_rel_err <= TOL,
        "{label}: input grad rel err {}",
        rep.max_rel_err
    );
}

#[test]
fn conv_stride_1() {
    let mut rng = Rng::new(1);
    let input = image_input(&mut rng, 2, 6, 7);
    check_net(
        vec![LayerSpec::Conv { in_ch: 2, out_ch: 3, stride: 1 }],
        input,
        "conv s1",
    );
}

#[test]
fn conv_stride_2() {
    let mut rng = Rng::new(2);
    let input = image_input(&mut rng, 2, 8, 8);
    check_net(
        vec![LayerSpec::Conv { in_ch: 2, out_ch: 3, stride: 2 }],
        input,
        "conv s2",
    );
}

#[test]
fn dense() {
    let mut rng = Rng::new(3);
    let input = vector_input(&mut rng, 9);
    check_net(vec![LayerSpec::Dense { n_in: 9, n_out: 5 }], input, "dense");
}

#[test]
fn relu() {
    let mut rng = Rng::new(4);
    let input = vector_input(&mut rng, 32);
    check_net(vec![LayerSpec::Relu], input, "relu");
}

#[test]
fn sigmoid() {
    let mut rng = Rng::new(5);
    let input = vector_input(&mut rng, 16);
    check_net(vec![LayerSpec::Sigmoid], input, "sigmoid");
}

#[test]
fn softmax() {
    let mut rng = Rng::new(6);
    let input = vector_input(&mut rng, 8);
    check_net(vec![LayerSpec::Softmax], input, "softmax");
}

#[test]
fn avgpool() {
    let mut rng = Rng::new(7);
    let input = image_input(&mut rng, 2, 6, 8);
    check_net(vec![LayerSpec::AvgPool2], input, "avgpool2");
}

#[test]
fn global_avgpool() {
    let mut rng = Rng::new(8);
    let input = image_input(&mut rng, 3, 5, 5);
    check_net(vec![LayerSpec::GlobalAvgPool], input, "gavgpool");
}

#[test]
fn upsample() {
    let mut rng = Rng::new(9);
    let input = image_input(&mut rng, 2, 4, 4);
    check_net(vec![LayerSpec::Upsample2], input, "upsample2");
}

#[test]
fn skip_add() {
    let mut rng = Rng::new(10);
    let input = image_input(&mut rng, 2, 6, 6);
    check_net(
        vec![
            LayerSpec::PushSkip,
            LayerSpec::Conv { in_ch: 2, out_ch: 2, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::Conv { in_ch: 2, out_ch: 2, stride: 1 },
            LayerSpec::PopSkipAdd,
        ],
        input,
        "skip-add",
    );
}

#[test]
fn composite_unet_shaped_net() {
    // exercises pool/upsample/skip in one pass
    let mut rng = Rng::new(11);
    let input = image_input(&mut rng, 2, 8, 8);
    check_net(
        vec![
            LayerSpec::Conv { in_ch: 2, out_ch: 4, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::PushSkip,
            LayerSpec::AvgPool2,
            LayerSpec::Conv { in_ch: 4, out_ch: 4, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::Upsample2,
            LayerSpec::PopSkipAdd,
            LayerSpec::Conv { in_ch: 4, out_ch: 1, stride: 1 },
        ],
        input,
        "composite",
    );
}
