//! Minimal neural-network stack with hand-written reverse-mode gradients.
//!
//! There is no general autodiff graph: networks are linear programs over a
//! fixed layer vocabulary ([`LayerSpec`]), with skip connections expressed
//! through an explicit save/restore stack (`PushSkip` / `PopSkipAdd`). Every
//! layer has a hand-written adjoint, checked against central finite
//! differences (see [`fdcheck`]).

pub mod adam;
pub mod bundle;
pub mod fdcheck;
pub mod layers;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub use adam::{adam_step, AdamState};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LayerSpec {
    /// 3x3 convolution, replicate padding 1, stride 1 or 2.
    Conv { in_ch: usize, out_ch: usize, stride: usize },
    Dense { n_in: usize, n_out: usize },
    Relu,
    Sigmoid,
    Softmax,
    /// 2x2 average pooling with stride 2.
    AvgPool2,
    /// Collapse [c,h,w] to per-channel means [c].
    GlobalAvgPool,
    /// 2x nearest-neighbour upsampling.
    Upsample2,
    /// Save the current activation on the skip stack.
    PushSkip,
    /// Pop the most recent saved activation and add it elementwise.
    PopSkipAdd,
}

#[derive(Clone)]
pub struct ParamBlock {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Flat, seedable parameter store for one network: an immutable topology plus
/// named parameter blocks, each paired with a same-shaped gradient block.
#[derive(Clone)]
pub struct NetParams {
    topology: Vec<LayerSpec>,
    blocks: Vec<ParamBlock>,
    /// First block index of each layer, if it has parameters.
    layer_blocks: Vec<Option<usize>>,
    version: u64,
}

impl std::fmt::Debug for NetParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "NetParams({} layers, {} params)",
            self.topology.len(),
            self.param_count()
        )
    }
}

/// Activation record from one forward pass; consumed by [`NetParams::backward`].
pub struct Tape {
    saved: Vec<Tensor>,
    out_dims: Vec<usize>,
    version: u64,
}

impl NetParams {
    /// He-uniform initialization for conv/dense weights, zero biases.
    pub fn init(topology: Vec<LayerSpec>, rng: &mut Rng) -> NetParams {
        let mut blocks = Vec::new();
        let mut layer_blocks = Vec::with_capacity(topology.len());
        for (li, spec) in topology.iter().enumerate() {
            match *spec {
                LayerSpec::Conv { in_ch, out_ch, .. } => {
                    layer_blocks.push(Some(blocks.len()));
                    let fan_in = in_ch * 9;
                    let limit = (6.0 / fan_in as f64).sqrt();
                    let n = out_ch * in_ch * 9;
                    let w: Vec<f64> = (0..n).map(|_| rng.uniform_in(-limit, limit)).collect();
                    blocks.push(ParamBlock {
                        name: format!("layer{li}.weight"),
                        value: Tensor::from_real(&[out_ch, in_ch, 3, 3], w).unwrap(),
                        grad: Tensor::zeros_real(&[out_ch, in_ch, 3, 3]),
                    });
                    blocks.push(ParamBlock {
                        name: format!("layer{li}.bias"),
                        value: Tensor::zeros_real(&[out_ch]),
                        grad: Tensor::zeros_real(&[out_ch]),
                    });
                }
                LayerSpec::Dense { n_in, n_out } => {
                    layer_blocks.push(Some(blocks.len()));
                    let limit = (6.0 / n_in as f64).sqrt();
                    let w: Vec<f64> = (0..n_in * n_out)
                        .map(|_| rng.uniform_in(-limit, limit))
                        .collect();
                    blocks.push(ParamBlock {
                        name: format!("layer{li}.weight"),
                        value: Tensor::from_real(&[n_out, n_in], w).unwrap(),
                        grad: Tensor::zeros_real(&[n_out, n_in]),
                    });
                    blocks.push(ParamBlock {
                        name: format!("layer{li}.bias"),
                        value: Tensor::zeros_real(&[n_out]),
                        grad: Tensor::zeros_real(&[n_out]),
                    });
                }
                _ => layer_blocks.push(None),
            }
        }
        NetParams {
            topology,
            blocks,
            layer_blocks,
            version: 0,
        }
    }

    pub fn topology(&self) -> &[LayerSpec] {
        &self.topology
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ParamBlock] {
        &mut self.blocks
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Invalidate outstanding tapes after an external parameter edit.
    pub fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for b in &mut self.blocks {
            b.grad = Tensor::zeros_real(b.grad.dims());
        }
    }

    pub fn grads_all_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.grad.all_finite())
    }

    pub fn params_all_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.value.all_finite())
    }

    /// Multiply every gradient block by `c` (used to average a minibatch or
    /// flip ascent into descent).
    pub fn scale_grads(&mut self, c: f64) {
        for b in &mut self.blocks {
            b.grad = b.grad.scale(c);
        }
    }

    /// Deterministic forward pass; the returned tape suffices for one or more
    /// exact backward passes as long as the parameters are unchanged.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Tape)> {
        let mut cur = input.clone();
        let mut saved = Vec::with_capacity(self.topology.len());
        let mut skips: Vec<Tensor> = Vec::new();
        for (li, spec) in self.topology.iter().enumerate() {
            saved.push(cur.clone());
            cur = match *spec {
                LayerSpec::Conv { stride, .. } => {
                    let b0 = self.layer_blocks[li].unwrap();
                    layers::conv_forward(
                        &cur,
                        &self.blocks[b0].value,
                        &self.blocks[b0 + 1].value,
                        stride,
                    )?
                }
                LayerSpec::Dense { .. } => {
                    let b0 = self.layer_blocks[li].unwrap();
                    layers::dense_forward(&cur, &self.blocks[b0].value, &self.blocks[b0 + 1].value)?
                }
                LayerSpec::Relu => layers::relu_forward(&cur),
                LayerSpec::Sigmoid => layers::sigmoid_forward(&cur),
                LayerSpec::Softmax => layers::softmax_forward(&cur),
                LayerSpec::AvgPool2 => layers::avgpool2_forward(&cur)?,
                LayerSpec::GlobalAvgPool => layers::global_avgpool_forward(&cur)?,
                LayerSpec::Upsample2 => layers::upsample2_forward(&cur)?,
                LayerSpec::PushSkip => {
                    skips.push(cur.clone());
                    cur
                }
                LayerSpec::PopSkipAdd => {
                    let s = skips
                        .pop()
                        .ok_or_else(|| Error::invalid("PopSkipAdd without matching PushSkip"))?;
                    if s.dims() != cur.dims() {
                        return Err(Error::dims(format!(
                            "skip-add: {:?} vs {:?}",
                            s.dims(),
                            cur.dims()
                        )));
                    }
                    cur.add(&s)
                }
            };
        }
        if !skips.is_empty() {
            return Err(Error::invalid("unconsumed PushSkip at end of network"));
        }
        let out_dims = cur.dims().to_vec();
        Ok((
            cur,
            Tape {
                saved,
                out_dims,
                version: self.version,
            },
        ))
    }

    /// Exact reverse-mode gradients of `<output, grad_output>` with respect to
    /// parameters (accumulated into the paired grad blocks) and the input
    /// (returned). Errors on a tape from stale parameters.
    pub fn backward(&mut self, tape: &Tape, grad_output: &Tensor) -> Result<Tensor> {
        if tape.version != self.version {
            return Err(Error::invalid(
                "stale tape: parameters were updated after this forward pass",
            ));
        }
        if grad_output.dims() != tape.out_dims.as_slice() {
            return Err(Error::dims(format!(
                "grad_output dims {:?} do not match network output {:?}",
                grad_output.dims(),
                tape.out_dims
            )));
        }
        let topo = self.topology.clone();
        let mut g = grad_output.clone();
        let mut skip_grads: Vec<Tensor> = Vec::new();
        for (li, spec) in topo.iter().enumerate().rev() {
            let inp = &tape.saved[li];
            g = match *spec {
                LayerSpec::Conv { stride, .. } => {
                    let b0 = self.layer_blocks[li].unwrap();
                    let weight = self.blocks[b0].value.clone();
                    let (gw, gb) = {
                        let (left, right) = self.blocks.split_at_mut(b0 + 1);
                        (&mut left[b0].grad, &mut right[0].grad)
                    };
                    layers::conv_backward(inp, &g, &weight, gw, gb, stride)?
                }
                LayerSpec::Dense { .. } => {
                    let b0 = self.layer_blocks[li].unwrap();
                    let weight = self.blocks[b0].value.clone();
                    let (gw, gb) = {
                        let (left, right) = self.blocks.split_at_mut(b0 + 1);
                        (&mut left[b0].grad, &mut right[0].grad)
                    };
                    layers::dense_backward(inp, &g, &weight, gw, gb)?
                }
                LayerSpec::Relu => layers::relu_backward(inp, &g),
                LayerSpec::Sigmoid => layers::sigmoid_backward(inp, &g),
                LayerSpec::Softmax => layers::softmax_backward(inp, &g),
                LayerSpec::AvgPool2 => layers::avgpool2_backward(inp, &g),
                LayerSpec::GlobalAvgPool => layers::global_avgpool_backward(inp, &g),
                LayerSpec::Upsample2 => layers::upsample2_backward(inp, &g),
                LayerSpec::PopSkipAdd => {
                    skip_grads.push(g.clone());
                    g
                }
                LayerSpec::PushSkip => {
                    let sg = skip_grads
                        .pop()
                        .ok_or_else(|| Error::invalid("skip gradient stack underflow"))?;
                    g.add(&sg)
                }
            };
        }
        Ok(g)
    }
}

/// Forward pass as a free function, mirroring the module-level operation set.
pub fn net_forward(net: &NetParams, input: &Tensor) -> Result<(Tensor, Tape)> {
    net.forward(input)
}

/// Backward pass as a free function; returns (nothing, input gradient) with
/// parameter gradients accumulated in the net's grad blocks.
pub fn net_backward(net: &mut NetParams, tape: &Tape, grad_output: &Tensor) -> Result<Tensor> {
    net.backward(tape, grad_output)
}
