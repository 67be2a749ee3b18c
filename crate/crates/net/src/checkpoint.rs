//! OLNC network checkpoints.
//!
//! ```text
//! "OLNC" | version u32
//! config: n_param_layers, filters, kernel, in_channels, out_channels (u32 each)
//! iteration u64 | array count u32
//! per array: ndim u32, dims u32 × ndim, little-endian f32 values
//! metadata length u32 | metadata JSON
//! ```
//!
//! Arrays appear per layer as conv weight `(out, in, k, k)`, conv bias, BN
//! γ, BN β, running mean, running variance.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::gemm::Gemm;
use crate::network::{Network, NetworkConfig};
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 4] = b"OLNC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub t2_scale_ms: f64,
    /// `seed:word_position` of the batch sampler when the checkpoint was taken.
    pub rng_digest: String,
    pub running_stats_initialized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub network: Network<T>,
    pub iteration: u64,
    pub meta: CheckpointMeta,
}

impl<T: Gemm> Checkpoint<T> {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let cfg = &self.network.config;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            u(cfg.n_param_layers)?,
            u(cfg.filters)?,
            u(cfg.kernel)?,
            u(cfg.in_channels)?,
            u(cfg.out_channels)?,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&self.iteration.to_le_bytes());
        let arrays = self.arrays();
        buf.extend_from_slice(&u(arrays.len())?.to_le_bytes());
        for (dims, data) in arrays {
            buf.extend_from_slice(&u(dims.len())?.to_le_bytes());
            for d in &dims {
                buf.extend_from_slice(&u(*d)?.to_le_bytes());
            }
            for v in data {
                buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        let meta = serde_json::to_vec(&self.meta)?;
        buf.extend_from_slice(&u(meta.len())?.to_le_bytes());
        buf.extend_from_slice(&meta);
        w.write_all(&buf)?;
        Ok(())
    }

    fn arrays(&self) -> Vec<(Vec<usize>, &[T])> {
        let mut out = Vec::new();
        for l in &self.network.layers {
            let c = &l.conv;
            out.push((vec![c.out_ch, c.in_ch, c.kernel, c.kernel], &c.w[..]));
            out.push((vec![c.out_ch], &c.b[..]));
            for v in [&l.bn.gamma, &l.bn.beta, &l.bn.running_mean, &l.bn.running_var] {
                out.push((vec![v.len()], &v[..]));
            }
        }
        out
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(NetError::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(NetError::Format(format!("unsupported checkpoint version {version}")));
        }
        let config = NetworkConfig {
            n_param_layers: read_u32(r)? as usize,
            filters: read_u32(r)? as usize,
            kernel: read_u32(r)? as usize,
            in_channels: read_u32(r)? as usize,
            out_channels: read_u32(r)? as usize,
        };
        config.validate().map_err(|e| NetError::Format(format!("checkpoint config invalid: {e}")))?;
        if config.filters > 4096 || config.kernel > 63 || config.n_param_layers > 4096 {
            return Err(NetError::Format("implausible checkpoint config".into()));
        }
        let mut b8 = [0u8; 8];
        read_exact(r, &mut b8)?;
        let iteration = u64::from_le_bytes(b8);
        let mut network = Network::<T>::zeroed(&config)?;
        let n_arrays = read_u32(r)? as usize;
        if n_arrays != 6 * network.layers.len() {
            return Err(NetError::Format(format!("expected {} arrays, found {n_arrays}", 6 * network.layers.len())));
        }
        for layer in &mut network.layers {
            let c = &mut layer.conv;
            let conv_dims = vec![c.out_ch, c.in_ch, c.kernel, c.kernel];
            read_array(r, &conv_dims, &mut c.w)?;
            read_array(r, &[c.out_ch], &mut c.b)?;
            let n = layer.bn.gamma.len();
            for v in [&mut layer.bn.gamma, &mut layer.bn.beta, &mut layer.bn.running_mean, &mut layer.bn.running_var] {
                read_array(r, &[n], v)?;
            }
            if layer.bn.running_var.iter().any(|v| !(*v >= T::zero())) {
                return Err(NetError::Format("negative running variance".into()));
            }
        }
        let meta_len = read_u32(r)?;
        if meta_len > 1 << 24 {
            return Err(NetError::Format("metadata too large".into()));
        }
        let mut meta = vec![0u8; meta_len as usize];
        read_exact(r, &mut meta)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(NetError::Format("trailing bytes after checkpoint metadata".into()));
        }
        let meta: CheckpointMeta = serde_json::from_slice(&meta)?;
        for l in &mut network.layers {
            l.bn.initialized = meta.running_stats_initialized;
        }
        Ok(Checkpoint { network, iteration, meta })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut v = Vec::new();
        self.write_to(&mut v)?;
        Ok(v)
    }

    pub fn from_bytes(mut b: &[u8]) -> Result<Self> {
        Self::read_from(&mut b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Errors unless the stored architecture equals `cfg`.
    pub fn expect_config(&self, cfg: &NetworkConfig) -> Result<()> {
        if &self.network.config != cfg {
            return Err(NetError::Config(format!(
                "checkpoint architecture {:?} does not match configured {:?}",
                self.network.config, cfg
            )));
        }
        Ok(())
    }
}

fn u(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| NetError::Format(format!("{n} does not fit in u32")))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            NetError::Format("truncated checkpoint".into())
        } else {
            NetError::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_array<T: Gemm, R: Read>(r: &mut R, dims: &[usize], out: &mut [T]) -> Result<()> {
    let ndim = read_u32(r)? as usize;
    if ndim != dims.len() {
        return Err(NetError::Format(format!("array rank {ndim}, expected {}", dims.len())));
    }
    for &d in dims {
        let got = read_u32(r)? as usize;
        if got != d {
            return Err(NetError::Format(format!("array dimension {got}, expected {d}")));
        }
    }
    let mut buf = vec![0u8; out.len() * 4];
    read_exact(r, &mut buf)?;
    for (o, b) in out.iter_mut().zip(buf.chunks_exact(4)) {
        *o = T::lit(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
    }
    Ok(())
}
