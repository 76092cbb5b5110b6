//! Hand-written forward/adjoint kernels for the fixed layer vocabulary.
//!
//! Convolutions are 3x3 with replicate (edge-clamp) padding so that spatially
//! constant inputs stay spatially constant through the whole stack; this is
//! what lets the residual denoiser preserve flat images exactly.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    let d = t.dims();
    if d.len() != 3 {
        return Err(Error::dims(format!("{what}: expected [c,h,w], got {d:?}")));
    }
    Ok((d[0], d[1], d[2]))
}

pub fn conv_out_hw(h: usize, w: usize, stride: usize) -> (usize, usize) {
    // kernel 3, padding 1
    ((h + 2 - 3) / stride + 1, (w + 2 - 3) / stride + 1)
}

/// Gather indices mapping each (tap, output pixel) to its clamped source
/// pixel: the im2col index table for a replicate-padded 3x3 convolution.
fn build_gather_indices(ci: usize, h: usize, w: usize, stride: usize) -> (Vec<usize>, usize, usize) {
    let (oh, ow) = conv_out_hw(h, w, stride);
    let n = oh * ow;
    let k = ci * 9;
    let mut idx = vec![0usize; k * n];
    let mut t = 0;
    for ic in 0..ci {
        let base = ic * h * w;
        for dy in 0..3 {
            for dx in 0..3 {
                for oy in 0..oh {
                    let iy = (oy * stride + dy).saturating_sub(1).min(h - 1);
                    let row = base + iy * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + dx).saturating_sub(1).min(w - 1);
                        idx[t] = row + ix;
                        t += 1;
                    }
                }
            }
        }
    }
    (idx, k, n)
}

thread_local! {
    static GATHER_CACHE: std::cell::RefCell<Vec<((usize, usize, usize, usize), std::rc::Rc<Vec<usize>>)>> =
        const { std::cell::RefCell::new(Vec::new()) };
}

/// Index tables are deterministic per shape; keep the recent ones around.
fn conv_gather_indices(ci: usize, h: usize, w: usize, stride: usize) -> (std::rc::Rc<Vec<usize>>, usize, usize) {
    let key = (ci, h, w, stride);
    let (oh, ow) = conv_out_hw(h, w, stride);
    let (k, n) = (ci * 9, oh * ow);
    let cached = GATHER_CACHE.with(|c| {
        c.borrow().iter().find(|(kk, _)| *kk == key).map(|(_, v)| std::rc::Rc::clone(v))
    });
    if let Some(idx) = cached {
        return (idx, k, n);
    }
    let (idx, _, _) = build_gather_indices(ci, h, w, stride);
    let idx = std::rc::Rc::new(idx);
    GATHER_CACHE.with(|c| {
        let mut cache = c.borrow_mut();
        if cache.len() >= 64 {
            cache.remove(0);
        }
        cache.push((key, std::rc::Rc::clone(&idx)));
    });
    (idx, k, n)
}

pub fn conv_forward(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let (ci, h, w) = dims3(input, "conv input")?;
    let wd = weight.dims();
    if wd.len() != 4 || wd[2] != 3 || wd[3] != 3 {
        return Err(Error::dims(format!("conv weight must be [co,ci,3,3], got {wd:?}")));
    }
    let (co, wci) = (wd[0], wd[1]);
    if wci != ci {
        return Err(Error::dims(format!("conv: input has {ci} channels, weight expects {wci}")));
    }
    let (oh, ow) = conv_out_hw(h, w, stride);
    let x = input.real();
    let wt = weight.real();
    let b = bias.real();

    // im2col gather, then a register-tiled multiply: the patch matrix rows
    // are contiguous per tap, so the inner loops are branch-free saxpys even
    // on tiny spatial extents.
    let (idx, k, n) = conv_gather_indices(ci, h, w, stride);
    let mut patches = vec![0.0f64; k * n];
    for (pv, &src) in patches.iter_mut().zip(idx.iter()) {
        *pv = x[src];
    }

    let mut out = vec![0.0f64; co * n];
    for oc in 0..co {
        out[oc * n..(oc + 1) * n].fill(b[oc]);
    }
    for kk in 0..k {
        let prow = &patches[kk * n..(kk + 1) * n];
        for oc in 0..co {
            let wv = wt[oc * k + kk];
            let orow = &mut out[oc * n..(oc + 1) * n];
            for (o, pv) in orow.iter_mut().zip(prow) {
                *o += wv * pv;
            }
        }
    }
    Tensor::from_real(&[co, oh, ow], out)
}

/// Backward pass of the replicate-padded 3x3 conv. Accumulates into
/// `gweight`/`gbias` and returns the input gradient.
pub fn conv_backward(
    input: &Tensor,
    gout: &Tensor,
    weight: &Tensor,
    gweight: &mut Tensor,
    gbias: &mut Tensor,
    stride: usize,
) -> Result<Tensor> {
    let (ci, h, w) = dims3(input, "conv input")?;
    let (co, _oh, _ow) = dims3(gout, "conv gout")?;
    let x = input.real();
    let g = gout.real();
    let wt = weight.real();
    let gw = gweight.real_mut();
    let gb = gbias.real_mut();

    let (idx, k, n) = conv_gather_indices(ci, h, w, stride);
    let mut patches = vec![0.0f64; k * n];
    for (pv, &src) in patches.iter_mut().zip(idx.iter()) {
        *pv = x[src];
    }

    // weight/bias grads: per output channel, dot the output gradient row
    // against every patch row
    for oc in 0..co {
        let grow = &g[oc * n..(oc + 1) * n];
        gb[oc] += grow.iter().sum::<f64>();
        let gwrow = &mut gw[oc * k..(oc + 1) * k];
        for (kk, gwv) in gwrow.iter_mut().enumerate() {
            let prow = &patches[kk * n..(kk + 1) * n];
            let mut acc = 0.0;
            for (gv, pv) in grow.iter().zip(prow) {
                acc += gv * pv;
            }
            *gwv += acc;
        }
    }

    // input grads: patch-space gradient, then scatter-add through the same
    // gather indices (duplicated clamped taps accumulate correctly)
    let mut gpatches = vec![0.0f64; k * n];
    for kk in 0..k {
        let gprow = &mut gpatches[kk * n..(kk + 1) * n];
        for oc in 0..co {
            let wv = wt[oc * k + kk];
            let grow = &g[oc * n..(oc + 1) * n];
            for (gp, gv) in gprow.iter_mut().zip(grow) {
                *gp += wv * gv;
            }
        }
    }
    let mut gin = vec![0.0f64; ci * h * w];
    for (gp, &src) in gpatches.iter().zip(idx.iter()) {
        gin[src] += gp;
    }
    Tensor::from_real(&[ci, h, w], gin)
}

pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let x = input.try_real()?;
    let wd = weight.dims();
    if wd.len() != 2 || wd[1] != x.len() {
        return Err(Error::dims(format!(
            "dense: weight {wd:?} incompatible with input of length {}",
            x.len()
        )));
    }
    let (m, n) = (wd[0], wd[1]);
    let wt = weight.real();
    let b = bias.real();
    let mut out = vec![0.0f64; m];
    for i in 0..m {
        let row = &wt[i * n..(i + 1) * n];
        let mut acc = b[i];
        for j in 0..n {
            acc += row[j] * x[j];
        }
        out[i] = acc;
    }
    Tensor::from_real(&[m], out)
}

pub fn dense_backward(
    input: &Tensor,
    gout: &Tensor,
    weight: &Tensor,
    gweight: &mut Tensor,
    gbias: &mut Tensor,
) -> Result<Tensor> {
    let x = input.real();
    let g = gout.real();
    let (m, n) = (weight.dims()[0], weight.dims()[1]);
    let wt = weight.real();
    let gw = gweight.real_mut();
    let gb = gbias.real_mut();
    let mut gin = vec![0.0f64; n];
    for i in 0..m {
        gb[i] += g[i];
        let row = &wt[i * n..(i + 1) * n];
        let grow = &mut gw[i * n..(i + 1) * n];
        for j in 0..n {
            grow[j] += g[i] * x[j];
            gin[j] += row[j] * g[i];
        }
    }
    Tensor::from_real(&[n], gin)
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let data = input.real().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_real(input.dims(), data).unwrap()
}

pub fn relu_backward(input: &Tensor, gout: &Tensor) -> Tensor {
    let data = input
        .real()
        .iter()
        .zip(gout.real())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_real(input.dims(), data).unwrap()
}

pub fn sigmoid_forward(input: &Tensor) -> Tensor {
    let data = input.real().iter().map(|&v| sigmoid(v)).collect();
    Tensor::from_real(input.dims(), data).unwrap()
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_backward(input: &Tensor, gout: &Tensor) -> Tensor {
    let data = input
        .real()
        .iter()
        .zip(gout.real())
        .map(|(&v, &g)| {
            let y = sigmoid(v);
            g * y * (1.0 - y)
        })
        .collect();
    Tensor::from_real(input.dims(), data).unwrap()
}

pub fn softmax_forward(input: &Tensor) -> Tensor {
    Tensor::from_real(input.dims(), softmax(input.real())).unwrap()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / s).collect()
}

pub fn softmax_backward(input: &Tensor, gout: &Tensor) -> Tensor {
    let y = softmax(input.real());
    let g = gout.real();
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    let data = y.iter().zip(g).map(|(&yi, &gi)| yi * (gi - dot)).collect();
    Tensor::from_real(input.dims(), data).unwrap()
}

pub fn avgpool2_forward(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = dims3(input, "avgpool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dims(format!("avgpool2 needs even extents, got {h}x{w}")));
    }
    let x = input.real();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f64; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let i = ch * h * w + 2 * oy * w + 2 * ox;
                out[ch * oh * ow + oy * ow + ox] =
                    0.25 * (x[i] + x[i + 1] + x[i + w] + x[i + w + 1]);
            }
        }
    }
    Tensor::from_real(&[c, oh, ow], out)
}

pub fn avgpool2_backward(input: &Tensor, gout: &Tensor) -> Tensor {
    let (c, h, w) = dims3(input, "avgpool2").unwrap();
    let (oh, ow) = (h / 2, w / 2);
    let g = gout.real();
    let mut gin = vec![0.0f64; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = 0.25 * g[ch * oh * ow + oy * ow + ox];
                let i = ch * h * w + 2 * oy * w + 2 * ox;
                gin[i] += gv;
                gin[i + 1] += gv;
                gin[i + w] += gv;
                gin[i + w + 1] += gv;
            }
        }
    }
    Tensor::from_real(&[c, h, w], gin).unwrap()
}

pub fn global_avgpool_forward(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = dims3(input, "global avgpool")?;
    let x = input.real();
    let inv = 1.0 / (h * w) as f64;
    let out = (0..c)
        .map(|ch| x[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() * inv)
        .collect();
    Tensor::from_real(&[c], out)
}

pub fn global_avgpool_backward(input: &Tensor, gout: &Tensor) -> Tensor {
    let (c, h, w) = dims3(input, "global avgpool").unwrap();
    let g = gout.real();
    let inv = 1.0 / (h * w) as f64;
    let mut gin = vec![0.0f64; c * h * w];
    for ch in 0..c {
        let gv = g[ch] * inv;
        gin[ch * h * w..(ch + 1) * h * w].fill(gv);
    }
    Tensor::from_real(&[c, h, w], gin).unwrap()
}

pub fn upsample2_forward(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = dims3(input, "upsample2")?;
    let x = input.real();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0f64; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            let iy = oy / 2;
            for ox in 0..ow {
                out[ch * oh * ow + oy * ow + ox] = x[ch * h * w + iy * w + ox / 2];
            }
        }
    }
    Tensor::from_real(&[c, oh, ow], out)
}

pub fn upsample2_backward(input: &Tensor, gout: &Tensor) -> Tensor {
    let (c, h, w) = dims3(input, "upsample2").unwrap();
    let (oh, ow) = (2 * h, 2 * w);
    let g = gout.real();
    let mut gin = vec![0.0f64; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            let iy = oy / 2;
            for ox in 0..ow {
                gin[ch * h * w + iy * w + ox / 2] += g[ch * oh * ow + oy * ow + ox];
            }
        }
    }
    Tensor::from_real(&[c, h, w], gin).unwrap()
}
