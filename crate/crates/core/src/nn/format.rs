//! `GFN1` model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GFN1"                      4 bytes
//! layer_count                 u32
//! per layer:
//!   out_dim, in_dim           u32, u32
//!   activation                u8 (0 = relu, 1 = softmax)
//!   weights                   out_dim * in_dim f64, row-major
//!   bias                      out_dim f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::network::{Activation, DenseNetwork, Layer};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MODEL_MAGIC: &[u8; 4] = b"GFN1";

/// Upper bound on a single layer dimension accepted when reading.
const MAX_DIM: u32 = 1 << 24;

pub fn write_network<W: Write>(net: &DenseNetwork, mut w: W) -> std::io::Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for layer in net.layers() {
        w.write_all(&(layer.out_dim() as u32).to_le_bytes())?;
        w.write_all(&(layer.in_dim() as u32).to_le_bytes())?;
        w.write_all(&[layer.activation.code()])?;
        for v in layer.weights.as_slice().iter().chain(&layer.bias) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn save_network(net: &DenseNetwork, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_network(net, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: impl AsRef<Path>) -> Result<DenseNetwork> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_network(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_network<R: Read>(mut r: R) -> Result<DenseNetwork> {
    let mut magic = [0u8; 4];
    match r.read_exact(&mut magic) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Err(Error::NotAModelFile),
        Err(e) => return Err(Error::io("<model>", e)),
    }
    if &magic[..3] != b"GFN" {
        return Err(Error::NotAModelFile);
    }
    if magic[3] != MODEL_MAGIC[3] {
        return Err(Error::UnsupportedModelVersion(magic[3] as char));
    }

    let count = read_u32(&mut r)?;
    if count == 0 {
        return Err(Error::InconsistentModel("model declares zero layers".into()));
    }
    let mut layers = Vec::new();
    for k in 0..count {
        let out_dim = read_u32(&mut r)?;
        let in_dim = read_u32(&mut r)?;
        if out_dim == 0 || in_dim == 0 || out_dim > MAX_DIM || in_dim > MAX_DIM {
            return Err(Error::InconsistentModel(format!(
                "layer {k} has implausible shape {out_dim}x{in_dim}"
            )));
        }
        let mut code = [0u8; 1];
        read_exact(&mut r, &mut code)?;
        let activation = Activation::from_code(code[0]).ok_or_else(|| {
            Error::InconsistentModel(format!("layer {k} has unknown activation code {}", code[0]))
        })?;
        let (out_dim, in_dim) = (out_dim as usize, in_dim as usize);
        let weights = read_f64s(&mut r, out_dim * in_dim)?;
        let bias = read_f64s(&mut r, out_dim)?;
        let weights = Matrix::from_vec(out_dim, in_dim, weights)
            .map_err(|_| Error::InconsistentModel(format!("layer {k} has non-finite weights")))?;
        layers.push(Layer {
            weights,
            bias,
            activation,
        });
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::InconsistentModel(
                "trailing bytes after the last layer".into(),
            ))
        }
        Err(e) => return Err(Error::io("<model>", e)),
    }
    DenseNetwork::from_layers(layers)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::TruncatedModel
        } else {
            Error::io("<model>", e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n.min(1 << 20));
    let mut buf = [0u8; 8];
    for _ in 0..n {
        read_exact(r, &mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkSpec;

    fn net() -> DenseNetwork {
        DenseNetwork::init(&NetworkSpec::new(8, vec![6, 4], 3).unwrap(), 21).unwrap()
    }

    fn encoded(net: &DenseNetwork) -> Vec<u8> {
        let mut buf = Vec::new();
        write_network(net, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_exact() {
        let n = net();
        let back = read_network(encoded(&n).as_slice()).unwrap();
        assert_eq!(back, n);
        assert_eq!(back.spec(), n.spec());
    }

    #[test]
    fn header_layout() {
        let buf = encoded(&net());
        assert_eq!(&buf[..4], b"GFN1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 6);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 8);
        assert_eq!(buf[16], 0);
        let expected_len = 8 + 3 * 9 + 8 * (6 * 8 + 6 + 4 * 6 + 4 + 3 * 4 + 3);
        assert_eq!(buf.len(), expected_len);
    }

    #[test]
    fn wrong_magic() {
        let mut buf = encoded(&net());
        buf[0] = b'X';
        assert!(matches!(read_network(buf.as_slice()), Err(Error::NotAModelFile)));
        assert!(matches!(read_network(&b"GF"[..]), Err(Error::NotAModelFile)));
    }

    #[test]
    fn version_mismatch() {
        let mut buf = encoded(&net());
        buf[3] = b'2';
        assert!(matches!(
            read_network(buf.as_slice()),
            Err(Error::UnsupportedModelVersion('2'))
        ));
    }

    #[test]
    fn missing_layer_payload_is_truncated() {
        let n = DenseNetwork::init(&NetworkSpec::new(8, vec![6, 5, 4, 3], 2).unwrap(), 1).unwrap();
        let buf = encoded(&n);
        // drop the final layer's header and payload: 5 declared, 4 present
        let last = n.layers().last().unwrap();
        let cut = buf.len() - (9 + 8 * (last.out_dim() * last.in_dim() + last.out_dim()));
        assert!(matches!(read_network(&buf[..cut]), Err(Error::TruncatedModel)));
        assert!(matches!(read_network(&buf[..buf.len() - 1]), Err(Error::TruncatedModel)));
    }

    fn raw(layers: &[(u32, u32, u8)]) -> Vec<u8> {
        let mut buf = b"GFN1".to_vec();
        buf.extend((layers.len() as u32).to_le_bytes());
        for &(out_dim, in_dim, act) in layers {
            buf.extend(out_dim.to_le_bytes());
            buf.extend(in_dim.to_le_bytes());
            buf.push(act);
            for _ in 0..(out_dim * in_dim + out_dim) {
                buf.extend(0.25f64.to_le_bytes());
            }
        }
        buf
    }

    #[test]
    fn shape_inconsistency() {
        assert!(read_network(raw(&[(6, 8, 0), (3, 6, 1)]).as_slice()).is_ok());
        // layer 1 expects 5 inputs, layer 0 emits 6
        assert!(matches!(
            read_network(raw(&[(6, 8, 0), (3, 5, 1)]).as_slice()),
            Err(Error::InconsistentModel(_))
        ));
        assert!(matches!(
            read_network(raw(&[(6, 8, 1), (3, 6, 1)]).as_slice()),
            Err(Error::InconsistentModel(_))
        ));
        assert!(matches!(
            read_network(raw(&[(6, 8, 0), (3, 6, 7)]).as_slice()),
            Err(Error::InconsistentModel(_))
        ));
        let mut buf = raw(&[(6, 8, 0), (3, 6, 1)]);
        buf.push(0);
        assert!(matches!(read_network(buf.as_slice()), Err(Error::InconsistentModel(_))));
        let mut buf = raw(&[(3, 2, 1)]);
        buf[8 + 9..8 + 17].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(read_network(buf.as_slice()), Err(Error::InconsistentModel(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gfn");
        let n = net();
        save_network(&n, &path).unwrap();
        assert_eq!(load_network(&path).unwrap(), n);
        assert!(matches!(load_network(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
