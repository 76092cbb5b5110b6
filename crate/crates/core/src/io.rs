//! Tensor and image file formats.
//!
//! TFT1 is the crate's binary tensor container: magic bytes `TFT1`, one byte
//! dtype code (0 = real64, 1 = complex128 interleaved re/im, 2 = byte), one
//! byte rank, `rank` little-endian u32 extents, then the row-major payload in
//! little-endian order. Grayscale images round-trip through binary PGM (P5,
//! maxval 255).

use crate::error::{Error, Result};
use crate::tensor::{Dtype, Tensor, TensorData};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"TFT1";

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[t.dtype().code()])?;
    let rank = t.dims().len();
    if rank > u8::MAX as usize {
        return Err(Error::invalid("tensor rank exceeds 255"));
    }
    w.write_all(&[rank as u8])?;
    for &d in t.dims() {
        if d > u32::MAX as usize {
            return Err(Error::invalid("tensor extent exceeds u32"));
        }
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    match t.data() {
        TensorData::Real(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        TensorData::Complex(v) => {
            for c in v {
                w.write_all(&c.re.to_le_bytes())?;
                w.write_all(&c.im.to_le_bytes())?;
            }
        }
        TensorData::Byte(v) => w.write_all(v)?,
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad TFT1 magic".into()));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    let dtype = Dtype::from_code(head[0])?;
    let rank = head[1] as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        dims.push(u32::from_le_bytes(b) as usize);
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Format("zero extent in TFT1 header".into()));
    }
    let n: usize = dims.iter().product();
    match dtype {
        Dtype::Real64 => {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            let data = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::from_real(&dims, data)
        }
        Dtype::Complex128 => {
            let mut buf = vec![0u8; n * 16];
            r.read_exact(&mut buf)?;
            let data = buf
                .chunks_exact(16)
                .map(|c| {
                    num_complex::Complex64::new(
                        f64::from_le_bytes(c[0..8].try_into().unwrap()),
                        f64::from_le_bytes(c[8..16].try_into().unwrap()),
                    )
                })
                .collect();
            Tensor::from_complex(&dims, data)
        }
        Dtype::Byte => {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf)?;
            Tensor::from_bytes(&dims, buf)
        }
    }
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut f, t)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut f = BufReader::new(std::fs::File::open(path)?);
    read_tensor(&mut f)
}

/// Write a real [0,1] image as binary PGM (P5, maxval 255).
pub fn write_pgm<W: Write>(w: &mut W, img: &Tensor) -> Result<()> {
    let dims = img.dims();
    if dims.len() != 2 {
        return Err(Error::dims(format!("PGM expects H x W image, got {dims:?}")));
    }
    let (h, wid) = (dims[0], dims[1]);
    writeln!(w, "P5")?;
    writeln!(w, "{wid} {h}")?;
    writeln!(w, "255")?;
    let bytes: Vec<u8> = img
        .try_real()?
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Read a binary PGM into a real tensor scaled to [0, 1].
pub fn read_pgm<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut br = BufReader::new(r);
    let mut tokens: Vec<String> = Vec::new();
    // header: magic, width, height, maxval, with '#' comments allowed
    while tokens.len() < 4 {
        let mut line = String::new();
        if br.read_line(&mut line)? == 0 {
            return Err(Error::Format("truncated PGM header".into()));
        }
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(|s| s.to_string()));
    }
    if tokens[0] != "P5" {
        return Err(Error::Format(format!("expected P5 magic, got {}", tokens[0])));
    }
    let w: usize = tokens[1]
        .parse()
        .map_err(|_| Error::Format("bad PGM width".into()))?;
    let h: usize = tokens[2]
        .parse()
        .map_err(|_| Error::Format("bad PGM height".into()))?;
    let maxval: usize = tokens[3]
        .parse()
        .map_err(|_| Error::Format("bad PGM maxval".into()))?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    let mut buf = vec![0u8; w * h];
    br.read_exact(&mut buf)?;
    let data = buf.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::from_real(&[h, w], data)
}

pub fn save_pgm(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_pgm(&mut f, img)
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut f = std::fs::File::open(path)?;
    read_pgm(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::max_abs_diff;
    use num_complex::Complex64;

    #[test]
    fn tft1_roundtrips_all_dtypes() {
        let mut rng = Rng::new(9);
        let real = Tensor::from_real(&[3, 4], (0..12).map(|_| rng.normal()).collect()).unwrap();
        let cplx = Tensor::from_complex(
            &[2, 2, 2],
            (0..8)
                .map(|_| Complex64::new(rng.normal(), rng.normal()))
                .collect(),
        )
        .unwrap();
        let byte = Tensor::from_bytes(&[5], vec![1, 2, 3, 254, 255]).unwrap();
        for t in [&real, &cplx, &byte] {
            let mut buf = Vec::new();
            write_tensor(&mut buf, t).unwrap();
            let back = read_tensor(&mut buf.as_slice()).unwrap();
            assert_eq!(back.dims(), t.dims());
            assert_eq!(back.dtype(), t.dtype());
            assert!(&back == t, "payload mismatch");
        }
    }

    #[test]
    fn tft1_layout_is_pinned() {
        // byte-level check of the header contract
        let t = Tensor::from_real(&[1, 2], vec![0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[0..4], b"TFT1");
        assert_eq!(buf[4], 0); // real64
        assert_eq!(buf[5], 2); // rank
        assert_eq!(&buf[6..10], &1u32.to_le_bytes());
        assert_eq!(&buf[10..14], &2u32.to_le_bytes());
        assert_eq!(buf.len(), 14 + 16);
        assert_eq!(&buf[22..30], &1.0f64.to_le_bytes());
    }

    #[test]
    fn bad_magic_rejected() {
        let buf = b"NOPE\x00\x01\x01\x00\x00\x00".to_vec();
        assert!(read_tensor(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn pgm_roundtrip_on_lattice() {
        // values on the /255 lattice survive the byte quantization exactly
        let mut rng = Rng::new(2);
        let data: Vec<f64> = (0..24).map(|_| rng.index(256) as f64 / 255.0).collect();
        let img = Tensor::from_real(&[4, 6], data).unwrap();
        let mut buf = Vec::new();
        write_pgm(&mut buf, &img).unwrap();
        let back = read_pgm(&mut buf.as_slice()).unwrap();
        assert!(max_abs_diff(&img, &back) < 1e-12);
    }
}
