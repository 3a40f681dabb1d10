//! Binary checkpoint: `SMD1`, then little-endian `u32` layer count, the layer
//! sizes as `u32`, a `u8` activation code, `u64` parameter count and the
//! parameters as `f32` in genome order. Writing rounds each parameter to `f32`.

use std::path::Path;

use super::{Activation, Network, NetworkSpec, ParamVector};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SMD1";

impl Network {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let spec = self.spec();
        let params = self.params().as_slice();
        let mut out = Vec::with_capacity(4 + 4 + 4 * spec.layer_sizes.len() + 1 + 8 + 4 * params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(spec.layer_sizes.len() as u32).to_le_bytes());
        for &s in &spec.layer_sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        out.push(spec.hidden_activation.code());
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&(*p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, expected SMD1".into()));
        }
        let layer_count = cur.u32()? as usize;
        if layer_count < 2 || layer_count > (bytes.len() / 4) {
            return Err(Error::Checkpoint(format!("implausible layer count {layer_count}")));
        }
        let layer_sizes = (0..layer_count)
            .map(|_| cur.u32().map(|s| s as usize))
            .collect::<Result<Vec<_>>>()?;
        let code = cur.take(1)?[0];
        let hidden_activation =
            Activation::from_code(code).ok_or_else(|| Error::Checkpoint(format!("unknown activation code {code}")))?;
        let spec = NetworkSpec {
            layer_sizes,
            hidden_activation,
            seed: 0,
        };
        spec.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let w = cur.u64()? as usize;
        if w != spec.param_count() {
            return Err(Error::Checkpoint(format!(
                "parameter count {w} does not match architecture {:?} ({})",
                spec.layer_sizes,
                spec.param_count()
            )));
        }
        if cur.remaining() != 4 * w {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                4 * w,
                cur.remaining()
            )));
        }
        let values = cur
            .rest()
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        let params = ParamVector::new(values).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Network::new(spec, params)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

pub fn write_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, net.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Network::from_checkpoint_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_network;

    #[test]
    fn round_trip() {
        let net = init_network(&NetworkSpec::new(vec![2, 6, 3], Activation::Tanh, 11)).unwrap();
        let bytes = net.to_checkpoint_bytes();
        assert_eq!(&bytes[..4], b"SMD1");
        assert_eq!(bytes.len(), 4 + 4 + 12 + 1 + 8 + 4 * 39);
        let back = Network::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back.params(), net.params());
        assert!(back.spec().same_architecture(net.spec()));
    }

    #[test]
    fn rejects_bad_magic_and_lengths() {
        let net = init_network(&NetworkSpec::new(vec![2, 3], Activation::Relu, 1)).unwrap();
        let mut bytes = net.to_checkpoint_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Network::from_checkpoint_bytes(&bad),
            Err(Error::Checkpoint(_))
        ));
        bytes.pop();
        assert!(matches!(
            Network::from_checkpoint_bytes(&bytes),
            Err(Error::Checkpoint(_))
        ));
        bytes.extend_from_slice(&[0, 0, 0, 0, 0]);
        assert!(matches!(
            Network::from_checkpoint_bytes(&bytes),
            Err(Error::Checkpoint(_))
        ));
    }
}
