//! Finite-difference gradient verification.
//!
//! This is the oracle side of the gradient tests: it never touches the
//! backward kernels except to compare against them. The scalar probe is
//! `L(theta) = <net(theta, input), cotangent>` with a fixed random cotangent,
//! so a single backward pass yields every analytic derivative at once.

use super::NetParams;
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}

fn scalar_loss(net: &NetParams, input: &Tensor, cotangent: &Tensor) -> Result<f64> {
    let (out, _) = net.forward(input)?;
    Ok(out
        .real()
        .iter()
        .zip(cotangent.real())
        .map(|(a, b)| a * b)
        .sum())
}

/// Central finite differences (step `h`) on up to `max_coords` randomly probed
/// parameter coordinates, compared against reverse-mode gradients.
pub fn check_param_gradients(
    net: &mut NetParams,
    input: &Tensor,
    h: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let (out, tape) = net.forward(input)?;
    let cotangent = Tensor::from_real(
        out.dims(),
        (0..out.len()).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
    )?;
    net.zero_grads();
    net.backward(&tape, &cotangent)?;
    let analytic: Vec<Vec<f64>> = net.blocks().iter().map(|b| b.grad.real().to_vec()).collect();

    // enumerate all (block, coord) pairs, then subsample
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (bi, b) in net.blocks().iter().enumerate() {
        for ci in 0..b.value.len() {
            coords.push((bi, ci));
        }
    }
    rng.shuffle(&mut coords);
    coords.truncate(max_coords);

    let mut max_err = 0.0f64;
    for &(bi, ci) in &coords {
        let orig = net.blocks()[bi].value.real()[ci];
        net.blocks_mut()[bi].value.real_mut()[ci] = orig + h;
        net.bump_version();
        let lp = scalar_loss(net, input, &cotangent)?;
        net.blocks_mut()[bi].value.real_mut()[ci] = orig - h;
        net.bump_version();
        let lm = scalar_loss(net, input, &cotangent)?;
        net.blocks_mut()[bi].value.real_mut()[ci] = orig;
        net.bump_version();
        let fd = (lp - lm) / (2.0 * h);
        max_err = max_err.max(rel_err(fd, analytic[bi][ci]));
    }
    net.zero_grads();
    Ok(GradCheckReport {
        max_rel_err: max_err,
        coords_checked: coords.len(),
    })
}

/// Same check for the gradient with respect to the network input.
pub fn check_input_gradients(
    net: &mut NetParams,
    input: &Tensor,
    h: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let (out, tape) = net.forward(input)?;
    let cotangent = Tensor::from_real(
        out.dims(),
        (0..out.len()).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
    )?;
    net.zero_grads();
    let gin = net.backward(&tape, &cotangent)?;
    net.zero_grads();

    let mut coords: Vec<usize> = (0..input.len()).collect();
    rng.shuffle(&mut coords);
    coords.truncate(max_coords);

    let mut max_err = 0.0f64;
    let mut probe = input.clone();
    for &ci in &coords {
        let orig = probe.real()[ci];
        probe.real_mut()[ci] = orig + h;
        let lp = scalar_loss(net, &probe, &cotangent)?;
        probe.real_mut()[ci] = orig - h;
        let lm = scalar_loss(net, &probe, &cotangent)?;
        probe.real_mut()[ci] = orig;
        let fd = (lp - lm) / (2.0 * h);
        max_err = max_err.max(rel_err(fd, gin.real()[ci]));
    }
    Ok(GradCheckReport {
        max_rel_err: max_err,
        coords_checked: coords.len(),
    })
}
