//! Binary checkpoint: header, architecture, tensor manifest, then raw
//! little-endian `f32` parameters.
//!
//! ```text
//! "FCKP" | version u32 | step u64 | arch 10 x u32 | n_tensors u32
//! per tensor: name_len u16 | name | ndim u8 | dims u32.. | offset u64
//! data: f32 LE x num_params
//! ```

use std::path::Path;

use super::reference::{Architecture, ParamEntry, ReferenceNet};
use crate::codec::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::seq::FrameShape;

const MAGIC: [u8; 4] = *b"FCKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: u64,
    pub net: ReferenceNet,
}

fn arch_fields(a: &Architecture) -> [u32; 10] {
    [
        a.frame.h as u32,
        a.frame.w as u32,
        a.frame.c as u32,
        a.width as u32,
        a.blocks as u32,
        a.time_dim as u32,
        a.time_hidden as u32,
        a.mlp_hidden as u32,
        a.token_dim as u32,
        a.rate_hidden as u32,
    ]
}

fn arch_from_fields(f: [u32; 10]) -> Architecture {
    let u = |i: usize| f[i] as usize;
    Architecture {
        frame: FrameShape::new(u(0), u(1), u(2)),
        width: u(3),
        blocks: u(4),
        time_dim: u(5),
        time_hidden: u(6),
        mlp_hidden: u(7),
        token_dim: u(8),
        rate_hidden: u(9),
    }
}

pub fn encode_checkpoint(net: &ReferenceNet, step: u64) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(&MAGIC);
    w.u32(VERSION);
    w.u64(step);
    for v in arch_fields(net.arch()) {
        w.u32(v);
    }
    let layout = net.arch().layout();
    w.u32(layout.len() as u32);
    for e in &layout {
        w.u16(e.name.len() as u16);
        w.bytes(e.name.as_bytes());
        w.u8(e.shape.len() as u8);
        for &d in &e.shape {
            w.u32(d as u32);
        }
        w.u64(e.offset as u64);
    }
    w.f32s(&net.params_f32());
    w.buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            expected: VERSION,
            found: version,
        });
    }
    let step = r.u64()?;
    let mut fields = [0u32; 10];
    for f in &mut fields {
        *f = r.u32()?;
    }
    let arch = arch_from_fields(fields);
    arch.validate()
        .map_err(|e| Error::Corrupt(format!("architecture: {e}")))?;
    let n = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?;
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let offset = r.u64()? as usize;
        manifest.push(ParamEntry {
            name,
            shape,
            offset,
        });
    }
    let expected = arch.layout();
    if manifest != expected {
        let bad = manifest
            .iter()
            .zip(&expected)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("tensor {} {:?} does not match {} {:?}", a.name, a.shape, b.name, b.shape))
            .unwrap_or_else(|| format!("{} tensors, expected {}", manifest.len(), expected.len()));
        return Err(Error::ShapeMismatch {
            expected: "manifest matching the architecture".into(),
            got: bad,
        });
    }
    let values = r.f32s(arch.num_params())?;
    if r.remaining() != 0 {
        return Err(Error::Corrupt(format!("{} trailing bytes", r.remaining())));
    }
    Ok(Checkpoint {
        step,
        net: ReferenceNet::from_f32(arch, &values)?,
    })
}

pub fn save_checkpoint(path: &Path, net: &ReferenceNet, step: u64) -> Result<()> {
    write_file(path, &encode_checkpoint(net, step))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?)
}

/// Loads and rejects a checkpoint whose architecture differs from `arch`.
pub fn load_checkpoint_expecting(path: &Path, arch: &Architecture) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if ck.net.arch() != arch {
        return Err(Error::ShapeMismatch {
            expected: format!("{arch:?}"),
            got: format!("{:?}", ck.net.arch()),
        });
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Architecture {
        Architecture {
            frame: FrameShape::new(1, 1, 2),
            width: 8,
            blocks: 1,
            time_dim: 4,
            time_hidden: 8,
            mlp_hidden: 8,
            token_dim: 2,
            rate_hidden: 4,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let net = ReferenceNet::new(small(), 9).unwrap();
        let bytes = encode_checkpoint(&net, 42);
        let ck = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.step, 42);
        assert_eq!(ck.net.arch(), net.arch());
        let a: Vec<u64> = net.params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = ck.net.params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_damage() {
        let net = ReferenceNet::new(small(), 1).unwrap();
        let bytes = encode_checkpoint(&net, 0);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::BadMagic { .. })));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(Error::VersionMismatch { found: 9, .. })
        ));

        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated { .. })
        ));

        // widen the stored model without touching the manifest
        let mut bad = bytes.clone();
        bad[16 + 12..16 + 16].copy_from_slice(&16u32.to_le_bytes());
        assert!(matches!(decode_checkpoint(&bad), Err(Error::ShapeMismatch { .. })));
    }
}
