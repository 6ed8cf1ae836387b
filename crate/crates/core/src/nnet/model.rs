//! Trained parameters plus the `DIVM` model file.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{quantize_latent, Architecture, Decoded, Network};
use crate::hash::fnv1a64;
use crate::prior::{CodingTable, FactorizedPrior};
use crate::wire::{put_f32, put_i32, put_u32, put_u64, Reader};
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"DIVM";
pub const MODEL_VERSION: u8 = 1;
/// Initial scale of each channel's cumulative in the prior.
pub const PRIOR_INIT_SCALE: f64 = 10.0;

/// Network and prior parameters in one flat vector (network first).
#[derive(Debug, Clone)]
pub struct Model {
    network: Network,
    prior: FactorizedPrior,
    pub params: Vec<f64>,
    /// Per-channel range of quantized latents seen during training.
    pub observed: Option<Vec<(i32, i32)>>,
}

impl Model {
    /// Freshly initialized parameters, a pure function of `arch` and `seed`.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let network = Network::new(arch)?;
        let prior = FactorizedPrior::new(network.arch().latent_channels());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = network.init_params(&mut rng);
        params.extend(prior.init_params(PRIOR_INIT_SCALE, || 0.0));
        let mut m = Model { network, prior, params, observed: None };
        m.round_to_f32();
        Ok(m)
    }

    /// Model with the given parameter vector.
    pub fn with_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        let network = Network::new(arch)?;
        let prior = FactorizedPrior::new(network.arch().latent_channels());
        let expected = network.num_params() + prior.num_params();
        if params.len() != expected {
            return Err(Error::Shape { expected, actual: params.len() });
        }
        Ok(Model { network, prior, params, observed: None })
    }

    pub fn arch(&self) -> &Architecture {
        self.network.arch()
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn prior(&self) -> &FactorizedPrior {
        &self.prior
    }

    pub fn net_params(&self) -> &[f64] {
        &self.params[..self.network.num_params()]
    }

    pub fn prior_params(&self) -> &[f64] {
        &self.params[self.network.num_params()..]
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Makes in-memory parameters equal to what the model file stores.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            *p = f64::from(*p as f32);
        }
    }

    /// Quantized latent of a raw block (values in mm).
    pub fn encode_block(&self, values: &[f32], tau: f32) -> Result<Vec<i32>> {
        let x: Vec<f64> = values.iter().map(|&v| f64::from(v) / f64::from(tau)).collect();
        Ok(quantize_latent(&self.network.encode(self.net_params(), &x)?))
    }

    pub fn decode_latent(&self, z_hat: &[i32]) -> Result<Decoded> {
        let z: Vec<f64> = z_hat.iter().map(|&v| f64::from(v)).collect();
        self.network.decode(self.net_params(), &z)
    }

    pub fn coding_tables(&self) -> Result<CodingTable> {
        self.prior.build_coding_tables(self.prior_params(), self.observed.as_deref())
    }

    /// Serialized model; the last 8 bytes are the FNV-1a hash of the rest.
    pub fn to_bytes(&self) -> Vec<u8> {
        let a = self.arch();
        let mut out = Vec::with_capacity(64 + 4 * self.params.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.push(MODEL_VERSION);
        put_u32(&mut out, a.block_size as u32);
        put_u32(&mut out, a.kernel as u32);
        put_u32(&mut out, a.head_kernel as u32);
        put_u32(&mut out, a.widths.len() as u32);
        for &w in &a.widths {
            put_u32(&mut out, w as u32);
        }
        put_u32(&mut out, self.params.len() as u32);
        for &p in &self.params {
            put_f32(&mut out, p as f32);
        }
        match &self.observed {
            Some(ranges) => {
                out.push(1);
                for &(lo, hi) in ranges {
                    put_i32(&mut out, lo);
                    put_i32(&mut out, hi);
                }
            }
            None => out.push(0),
        }
        let h = fnv1a64(&out);
        put_u64(&mut out, h);
        out
    }

    /// Identity embedded in every container coded with this model.
    pub fn hash(&self) -> u64 {
        let b = self.to_bytes();
        u64::from_le_bytes(b[b.len() - 8..].try_into().unwrap())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::BadMagic { expected: "DIVM" });
        }
        let version = r.u8()?;
        if version != MODEL_VERSION {
            return Err(Error::Version(version));
        }
        let block_size = r.u32()? as usize;
        let kernel = r.u32()? as usize;
        let head_kernel = r.u32()? as usize;
        let layers = r.u32()? as usize;
        if layers > 16 {
            return Err(Error::Malformed(format!("{layers} layers")));
        }
        let widths = (0..layers).map(|_| r.u32().map(|w| w as usize)).collect::<Result<Vec<_>>>()?;
        let arch = Architecture { block_size, widths, kernel, head_kernel };
        let n = r.u32()? as usize;
        if n.saturating_mul(4) > r.remaining() {
            return Err(Error::Truncated);
        }
        let params = (0..n).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        let mut model = Model::with_params(arch, params)?;
        model.observed = match r.u8()? {
            0 => None,
            1 => Some(
                (0..model.prior.channels())
                    .map(|_| Ok((r.i32()?, r.i32()?)))
                    .collect::<Result<Vec<_>>>()?,
            ),
            f => return Err(Error::Malformed(format!("observed-range flag {f}"))),
        };
        let body = r.position();
        let h = r.u64()?;
        if r.remaining() != 0 {
            return Err(Error::Malformed("trailing bytes after model".into()));
        }
        if fnv1a64(&bytes[..body]) != h {
            return Err(Error::Malformed("model hash mismatch".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Architecture {
        Architecture { block_size: 4, widths: vec![2, 3], kernel: 4, head_kernel: 3 }
    }

    #[test]
    fn file_round_trip_preserves_params_and_hash() {
        let mut m = Model::new(small(), 9).unwrap();
        m.observed = Some(vec![(-3, 4), (0, 0), (-1, 7)]);
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"DIVM");
        let back = Model::from_bytes(&bytes).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.observed, m.observed);
        assert_eq!(back.hash(), m.hash());
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupted_model_is_rejected() {
        let m = Model::new(small(), 1).unwrap();
        let mut b = m.to_bytes();
        b[30] ^= 1;
        assert!(Model::from_bytes(&b).is_err());
        let mut b = m.to_bytes();
        b[0] = b'X';
        assert!(matches!(Model::from_bytes(&b), Err(Error::BadMagic { .. })));
        let b = m.to_bytes();
        assert!(matches!(Model::from_bytes(&b[..b.len() - 3]), Err(Error::Truncated)));
    }

    #[test]
    fn different_seeds_give_different_hashes() {
        let a = Model::new(small(), 1).unwrap();
        let b = Model::new(small(), 2).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), Model::new(small(), 1).unwrap().hash());
    }
}
