//! Binary model checkpoints.
//!
//! All integers are little-endian `u64` and all reals little-endian IEEE-754
//! `f64`, so a checkpoint round-trips bit-exactly.
//!
//! ```text
//! [0..6)   magic  b"DRILLC"
//! [6..8)   format version, u16 LE (currently 1)
//! u64      number of layer dimensions n
//! n x u64  layer dimensions (input, hidden..., output)
//! f64...   parameters, layer by layer: weight (out x in, row-major), then bias
//! u8       head tag: 0 = scalar output, 1 = bucket distribution
//!          if 1: u64 bucket count, f64 label_min, f64 label_max
//! u64      feature count d of the input standardizer (0 = none)
//!          if d > 0: d x f64 means, then d x f64 standard deviations
//! ```
//!
//! Trailing bytes are rejected.

use std::fs;
use std::path::Path;

use crate::data::Standardizer;
use crate::dde::BucketSpec;
use crate::error::{Error, Result};
use crate::net::Mlp;
use crate::trainer::Head;

pub const MAGIC: &[u8; 6] = b"DRILLC";
pub const FORMAT_VERSION: u16 = 1;

/// A model plus what is needed to turn raw feature rows into scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Mlp,
    pub head: Head,
    pub scaler: Option<Standardizer>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let dims = self.model.layer_dims();
        put_u64(&mut out, dims.len() as u64);
        for d in dims {
            put_u64(&mut out, d as u64);
        }
        for p in self.model.flat_params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        match &self.head {
            Head::Scalar => out.push(0),
            Head::Distribution(spec) => {
                out.push(1);
                put_u64(&mut out, spec.count() as u64);
                out.extend_from_slice(&spec.label_min().to_le_bytes());
                out.extend_from_slice(&spec.label_max().to_le_bytes());
            }
        }
        match &self.scaler {
            None => put_u64(&mut out, 0),
            Some(s) => {
                put_u64(&mut out, s.mean().len() as u64);
                for v in s.mean().iter().chain(s.std()) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(6)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let n = r.u64()? as usize;
        if n > 1024 {
            return Err(Error::Checkpoint(format!("implausible layer count {n}")));
        }
        let dims = (0..n).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let mut model = Mlp::zeros(&dims).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let params = (0..model.num_params()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        model.set_flat_params(&params)?;
        let head = match r.take(1)?[0] {
            0 => Head::Scalar,
            1 => {
                let count = r.u64()? as usize;
                let lo = r.f64()?;
                let hi = r.f64()?;
                let spec = BucketSpec::new(lo, hi, count).map_err(|e| Error::Checkpoint(e.to_string()))?;
                if spec.count() != model.output_dim() {
                    return Err(Error::Checkpoint(format!(
                        "{} buckets but the model outputs {}",
                        spec.count(),
                        model.output_dim()
                    )));
                }
                Head::Distribution(spec)
            }
            t => return Err(Error::Checkpoint(format!("unknown head tag {t}"))),
        };
        let d = r.u64()? as usize;
        let scaler = if d == 0 {
            None
        } else {
            if d != model.input_dim() {
                return Err(Error::Checkpoint(format!(
                    "standardizer has {d} features, model expects {}",
                    model.input_dim()
                )));
            }
            let mean = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let std = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            Some(Standardizer::from_parts(mean, std)?)
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { model, head, scaler })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        Checkpoint {
            model: Mlp::new(&[3, 5, 7], &mut rng).unwrap(),
            head: Head::Distribution(BucketSpec::new(1.0, 5.0, 7).unwrap()),
            scaler: Some(Standardizer::from_parts(vec![0.1, 0.2, 0.3], vec![1.0, 2.0, 0.5]).unwrap()),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..6], b"DRILLC");
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = sample().to_bytes();
        bytes[6] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));

        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());

        let mut bytes = sample().to_bytes();
        bytes.push(0);
        assert!(Checkpoint::from_bytes(&bytes).is_err());

        assert!(Checkpoint::from_bytes(b"nope").is_err());
    }
}
