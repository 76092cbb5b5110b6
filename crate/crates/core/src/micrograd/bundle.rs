//! Network checkpoint serialization: a plain-text topology header followed by
//! the parameter blocks as concatenated TFT1 tensors.

use super::{LayerSpec, NetParams};
use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::rng::Rng;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

fn spec_line(spec: &LayerSpec) -> String {
    match spec {
        LayerSpec::Conv { in_ch, out_ch, stride } => format!("conv {in_ch} {out_ch} {stride}"),
        LayerSpec::Dense { n_in, n_out } => format!("dense {n_in} {n_out}"),
        LayerSpec::Relu => "relu".into(),
        LayerSpec::Sigmoid => "sigmoid".into(),
        LayerSpec::Softmax => "softmax".into(),
        LayerSpec::AvgPool2 => "avgpool2".into(),
        LayerSpec::GlobalAvgPool => "gavgpool".into(),
        LayerSpec::Upsample2 => "upsample2".into(),
        LayerSpec::PushSkip => "pushskip".into(),
        LayerSpec::PopSkipAdd => "popskipadd".into(),
    }
}

fn parse_spec(line: &str) -> Result<LayerSpec> {
    let mut it = line.split_whitespace();
    let kind = it.next().ok_or_else(|| Error::Format("empty layer line".into()))?;
    let mut num = || -> Result<usize> {
        it.next()
            .ok_or_else(|| Error::Format(format!("layer `{line}`: missing field")))?
            .parse()
            .map_err(|_| Error::Format(format!("layer `{line}`: bad integer")))
    };
    Ok(match kind {
        "conv" => LayerSpec::Conv { in_ch: num()?, out_ch: num()?, stride: num()? },
        "dense" => LayerSpec::Dense { n_in: num()?, n_out: num()? },
        "relu" => LayerSpec::Relu,
        "sigmoid" => LayerSpec::Sigmoid,
        "softmax" => LayerSpec::Softmax,
        "avgpool2" => LayerSpec::AvgPool2,
        "gavgpool" => LayerSpec::GlobalAvgPool,
        "upsample2" => LayerSpec::Upsample2,
        "pushskip" => LayerSpec::PushSkip,
        "popskipadd" => LayerSpec::PopSkipAdd,
        other => return Err(Error::Format(format!("unknown layer kind `{other}`"))),
    })
}

pub fn write_net<W: Write>(w: &mut W, net: &NetParams) -> Result<()> {
    writeln!(w, "NETB1")?;
    writeln!(w, "layers {}", net.topology().len())?;
    for spec in net.topology() {
        writeln!(w, "{}", spec_line(spec))?;
    }
    writeln!(w, "blocks {}", net.blocks().len())?;
    for b in net.blocks() {
        write_tensor(w, &b.value)?;
    }
    Ok(())
}

pub fn read_net<R: Read>(r: R) -> Result<NetParams> {
    let mut br = BufReader::new(r);
    let mut line = String::new();
    let next_line = |br: &mut BufReader<R>, line: &mut String| -> Result<String> {
        line.clear();
        if br.read_line(line)? == 0 {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        Ok(line.trim().to_string())
    };
    if next_line(&mut br, &mut line)? != "NETB1" {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let header = next_line(&mut br, &mut line)?;
    let n_layers: usize = header
        .strip_prefix("layers ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("bad layers header".into()))?;
    let mut topology = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let l = next_line(&mut br, &mut line)?;
        topology.push(parse_spec(&l)?);
    }
    let header = next_line(&mut br, &mut line)?;
    let n_blocks: usize = header
        .strip_prefix("blocks ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("bad blocks header".into()))?;

    // rebuild the store from the topology, then overwrite the values
    let mut rng = Rng::new(0);
    let mut net = NetParams::init(topology, &mut rng);
    if net.blocks().len() != n_blocks {
        return Err(Error::Format(format!(
            "checkpoint has {n_blocks} blocks, topology implies {}",
            net.blocks().len()
        )));
    }
    for bi in 0..n_blocks {
        let t = read_tensor(&mut br)?;
        if t.dims() != net.blocks()[bi].value.dims() {
            return Err(Error::Format(format!(
                "block {bi}: dims {:?} do not match topology {:?}",
                t.dims(),
                net.blocks()[bi].value.dims()
            )));
        }
        net.blocks_mut()[bi].value = t;
    }
    net.bump_version();
    Ok(net)
}

pub fn save_net(path: impl AsRef<Path>, net: &NetParams) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_net(&mut f, net)
}

pub fn load_net(path: impl AsRef<Path>) -> Result<NetParams> {
    read_net(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{max_abs_diff, Tensor};

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = Rng::new(77);
        let net = NetParams::init(
            vec![
                LayerSpec::Conv { in_ch: 2, out_ch: 4, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { n_in: 4, n_out: 3 },
                LayerSpec::Sigmoid,
            ],
            &mut rng,
        );
        let mut buf = Vec::new();
        write_net(&mut buf, &net).unwrap();
        let back = read_net(buf.as_slice()).unwrap();
        assert_eq!(back.topology(), net.topology());
        for (a, b) in back.blocks().iter().zip(net.blocks()) {
            assert_eq!(max_abs_diff(&a.value, &b.value), 0.0);
        }
        // forward agreement on a fixed input
        let x = Tensor::filled(&[2, 8, 8], 0.25);
        let (y0, _) = net.forward(&x).unwrap();
        let (y1, _) = back.forward(&x).unwrap();
        assert_eq!(y0.real(), y1.real());
    }
}
