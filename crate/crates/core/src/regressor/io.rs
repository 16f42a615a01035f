//! Binary model files.
//!
//! Layout, little-endian:
//!
//! ```text
//! "SVSM" u32 version u32 embed_dim u8 angle_encoding f64 dropout
//! u32 n_layers u32 concat_at
//! n_layers × { u32 in u32 out u8 dropout_before u8 activation }
//! u8 has_digest [u8; 32] digest
//! n_layers × { weight (row-major out × in), bias, gamma, beta,
//!              running_mean, running_var }   all f64
//! u32 CRC32 of every preceding byte
//! ```

use std::fs;
use std::io::{self, Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};

use super::{Activation, AngleEncoding, Layer, RegressorError, RegressorState};
use crate::Digest;

const MAGIC: &[u8; 4] = b"SVSM";
const VERSION: u32 = 1;

pub fn write_model(state: &RegressorState, digest: Option<&Digest>) -> Vec<u8> {
    let mut w = Vec::new();
    w.extend_from_slice(MAGIC);
    w.write_u32::<LE>(VERSION).unwrap();
    w.write_u32::<LE>(state.embed_dim as u32).unwrap();
    w.write_u8(match state.angle_encoding {
        AngleEncoding::Raw => 0,
        AngleEncoding::Sincos => 1,
    })
    .unwrap();
    w.write_f64::<LE>(state.dropout).unwrap();
    w.write_u32::<LE>(state.layers.len() as u32).unwrap();
    w.write_u32::<LE>(state.concat_at as u32).unwrap();
    for l in &state.layers {
        w.write_u32::<LE>(l.n_in() as u32).unwrap();
        w.write_u32::<LE>(l.n_out() as u32).unwrap();
        w.write_u8(l.dropout_before as u8).unwrap();
        w.write_u8(match l.activation {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
        })
        .unwrap();
    }
    w.write_u8(digest.is_some() as u8).unwrap();
    w.extend_from_slice(digest.map_or(&[0u8; Digest::LEN], |d| d.as_bytes()));
    for l in &state.layers {
        for r in 0..l.n_out() {
            for c in 0..l.n_in() {
                w.write_f64::<LE>(l.weight[(r, c)]).unwrap();
            }
        }
        for v in [&l.bias, &l.gamma, &l.beta, &l.running_mean, &l.running_var] {
            for &x in v.iter() {
                w.write_f64::<LE>(x).unwrap();
            }
        }
    }
    let crc = crc32fast::hash(&w);
    w.write_u32::<LE>(crc).unwrap();
    w
}

pub fn save_model(
    state: &RegressorState,
    path: impl AsRef<Path>,
    digest: Option<&Digest>,
) -> Result<(), RegressorError> {
    fs::write(path, write_model(state, digest))?;
    Ok(())
}

fn eof(e: io::Error) -> RegressorError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        RegressorError::Truncated
    } else {
        RegressorError::Io(e)
    }
}

pub fn read_model(bytes: &[u8]) -> Result<(RegressorState, Option<Digest>), RegressorError> {
    if bytes.len() < 8 {
        return Err(RegressorError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(RegressorError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(RegressorError::UnsupportedVersion(version));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let mut cur = Cursor::new(&body[8..]);
    let embed_dim = cur.read_u32::<LE>().map_err(eof)? as usize;
    let angle_encoding = match cur.read_u8().map_err(eof)? {
        0 => AngleEncoding::Raw,
        1 => AngleEncoding::Sincos,
        x => return Err(RegressorError::Malformed(format!("angle encoding {x}"))),
    };
    let dropout = cur.read_f64::<LE>().map_err(eof)?;
    let n_layers = cur.read_u32::<LE>().map_err(eof)? as usize;
    let concat_at = cur.read_u32::<LE>().map_err(eof)? as usize;
    let mut shapes = Vec::new();
    let mut params = 0usize;
    for _ in 0..n_layers.min(1 << 16) {
        let n_in = cur.read_u32::<LE>().map_err(eof)? as usize;
        let n_out = cur.read_u32::<LE>().map_err(eof)? as usize;
        let drop = cur.read_u8().map_err(eof)? != 0;
        let act = match cur.read_u8().map_err(eof)? {
            0 => Activation::Relu,
            1 => Activation::Sigmoid,
            x => return Err(RegressorError::Malformed(format!("activation {x}"))),
        };
        params = params.saturating_add(n_out.saturating_mul(n_in + 5));
        shapes.push((n_in, n_out, drop, act));
    }
    let has_digest = cur.read_u8().map_err(eof)?;
    let mut d = [0u8; Digest::LEN];
    cur.read_exact(&mut d).map_err(eof)?;
    let remaining = body.len() - 8 - cur.position() as usize;
    if remaining / 8 < params || n_layers != shapes.len() {
        return Err(RegressorError::Truncated);
    }
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(RegressorError::Checksum { stored, computed });
    }
    if remaining != params * 8 {
        return Err(RegressorError::Malformed(format!(
            "{} unexpected bytes",
            remaining - params * 8
        )));
    }

    let mut layers = Vec::with_capacity(n_layers);
    let mut f = || cur.read_f64::<LE>().map_err(eof);
    for &(n_in, n_out, dropout_before, activation) in &shapes {
        let mut wv = Vec::with_capacity(n_in * n_out);
        for _ in 0..n_in * n_out {
            wv.push(f()?);
        }
        let weight = DMatrix::from_row_slice(n_out, n_in, &wv);
        let mut vecs = Vec::with_capacity(5);
        for _ in 0..5 {
            let mut v = Vec::with_capacity(n_out);
            for _ in 0..n_out {
                v.push(f()?);
            }
            vecs.push(DVector::from_vec(v));
        }
        let mut it = vecs.into_iter();
        layers.push(Layer {
            weight,
            bias: it.next().unwrap(),
            gamma: it.next().unwrap(),
            beta: it.next().unwrap(),
            running_mean: it.next().unwrap(),
            running_var: it.next().unwrap(),
            dropout_before,
            activation,
        });
    }
    let state = RegressorState {
        embed_dim,
        angle_encoding,
        dropout,
        layers,
        concat_at,
        training: false,
    };
    check_shapes(&state)?;
    let digest = match has_digest {
        0 => None,
        _ => Some(Digest(d)),
    };
    Ok((state, digest))
}

fn check_shapes(s: &RegressorState) -> Result<(), RegressorError> {
    let bad = |m: String| Err(RegressorError::Malformed(m));
    if s.layers.is_empty() || s.concat_at == 0 || s.concat_at >= s.layers.len() {
        return bad(format!(
            "concat index {} for {} layers",
            s.concat_at,
            s.layers.len()
        ));
    }
    let mut prev = s.embed_dim;
    for (i, l) in s.layers.iter().enumerate() {
        let expected = if i == s.concat_at {
            prev + s.angle_encoding.width()
        } else {
            prev
        };
        if l.n_in() != expected {
            return bad(format!(
                "layer {i} takes {} inputs, expected {expected}",
                l.n_in()
            ));
        }
        prev = l.n_out();
    }
    if prev != 1 {
        return bad(format!("final layer has {prev} outputs"));
    }
    if s.layers
        .iter()
        .any(|l| l.running_var.iter().any(|&v| v.is_nan() || v < 0.0))
    {
        return bad("negative running variance".into());
    }
    Ok(())
}

pub fn load_model(
    path: impl AsRef<Path>,
) -> Result<(RegressorState, Option<Digest>), RegressorError> {
    read_model(&fs::read(path)?)
}

/// Loads a model and checks that it expects `embed_dim` inputs.
pub fn load_model_for(
    path: impl AsRef<Path>,
    embed_dim: usize,
) -> Result<(RegressorState, Option<Digest>), RegressorError> {
    let (state, digest) = load_model(path)?;
    if state.embed_dim != embed_dim {
        return Err(RegressorError::DimensionMismatch {
            expected: embed_dim,
            found: state.embed_dim,
        });
    }
    Ok((state, digest))
}
