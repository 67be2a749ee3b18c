//! OIMG binary image container.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "OIMG" | version | rows | cols | channels | dtype | domain
//! payload: channel-planar, row-major f32 (complex values interleaved re, im)
//! metadata length | metadata JSON (UTF-8)
//! ```
//!
//! `dtype` is 0 for real f32 and 1 for interleaved complex f32; `domain` is 0
//! for image space and 1 for k-space.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexImage, Domain, GridSpec, Raster};
use crate::phantom::TissueMap;
use crate::scalar::Real;
use crate::seqsim::SequenceParams;

pub const MAGIC: &[u8; 4] = b"OIMG";
pub const VERSION: u32 = 1;
const MAX_META_BYTES: u32 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    RealF32 = 0,
    ComplexF32 = 1,
}

/// JSON trailer. Unknown keys land in `extra`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OimgMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<SequenceParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Channel names, e.g. `["t2_ms", "pd"]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channel_names: Vec<String>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Real(Vec<f32>),
    Complex(Vec<Complex<f32>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Oimg {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub domain: Domain,
    pub payload: Payload,
    pub meta: OimgMeta,
}

impl Oimg {
    pub fn dtype(&self) -> DType {
        match self.payload {
            Payload::Real(_) => DType::RealF32,
            Payload::Complex(_) => DType::ComplexF32,
        }
    }

    fn expected_len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        let n = match &self.payload {
            Payload::Real(v) => v.len(),
            Payload::Complex(v) => v.len(),
        };
        if self.rows == 0 || self.cols == 0 || self.channels == 0 {
            return Err(Error::Format("OIMG dimensions must be non-zero".into()));
        }
        if n != self.expected_len() {
            return Err(Error::Format(format!(
                "payload has {n} values, expected {}x{}x{}",
                self.rows, self.cols, self.channels
            )));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        self.validate()?;
        let domain = match self.domain {
            Domain::Image => 0u32,
            Domain::Kspace => 1,
        };
        w.write_all(MAGIC)?;
        for v in [VERSION, dim(self.rows)?, dim(self.cols)?, dim(self.channels)?, self.dtype() as u32, domain] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.expected_len() * 8);
        match &self.payload {
            Payload::Real(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            Payload::Complex(v) => v.iter().for_each(|z| {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }),
        }
        w.write_all(&buf)?;
        let meta = serde_json::to_vec(&self.meta)?;
        w.write_all(&dim(meta.len())?.to_le_bytes())?;
        w.write_all(&meta)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad OIMG magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported OIMG version {version}")));
        }
        let rows = read_u32(r)? as usize;
        let cols = read_u32(r)? as usize;
        let channels = read_u32(r)? as usize;
        let dtype = read_u32(r)?;
        let domain = match read_u32(r)? {
            0 => Domain::Image,
            1 => Domain::Kspace,
            d => return Err(Error::Format(format!("unknown OIMG domain tag {d}"))),
        };
        let n = rows
            .checked_mul(cols)
            .and_then(|v| v.checked_mul(channels))
            .filter(|&n| n > 0 && n <= 1 << 30)
            .ok_or_else(|| Error::Format(format!("implausible OIMG shape {rows}x{cols}x{channels}")))?;
        let payload = match dtype {
            0 => Payload::Real(read_f32s(r, n)?),
            1 => Payload::Complex(read_f32s(r, 2 * n)?.chunks_exact(2).map(|p| Complex::new(p[0], p[1])).collect()),
            d => return Err(Error::Format(format!("unknown OIMG dtype code {d}"))),
        };
        let meta_len = read_u32(r)?;
        if meta_len > MAX_META_BYTES {
            return Err(Error::Format(format!("OIMG metadata length {meta_len} too large")));
        }
        let mut meta = vec![0u8; meta_len as usize];
        r.read_exact(&mut meta).map_err(truncated)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after OIMG metadata".into()));
        }
        let meta: OimgMeta = serde_json::from_slice(&meta)?;
        Ok(Oimg { rows, cols, channels, domain, payload, meta })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut v = Vec::new();
        self.write_to(&mut v)?;
        Ok(v)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    fn grid(&self) -> GridSpec {
        match self.meta.grid {
            Some(g) if g.rows == self.rows && g.cols == self.cols => g,
            _ => GridSpec::square(self.rows).resampled(self.rows, self.cols),
        }
    }

    pub fn from_complex_image<T: Real>(img: &ComplexImage<T>, mut meta: OimgMeta) -> Self {
        meta.grid = Some(img.grid);
        Oimg {
            rows: img.grid.rows,
            cols: img.grid.cols,
            channels: 1,
            domain: img.domain,
            payload: Payload::Complex(
                img.data.iter().map(|z| Complex::new(z.re.as_f64() as f32, z.im.as_f64() as f32)).collect(),
            ),
            meta,
        }
    }

    pub fn to_complex_image<T: Real>(&self) -> Result<ComplexImage<T>> {
        let Payload::Complex(v) = &self.payload else {
            return Err(Error::Format("expected a complex OIMG".into()));
        };
        if self.channels != 1 {
            return Err(Error::Format(format!("expected 1 complex channel, found {}", self.channels)));
        }
        let data = v.iter().map(|z| Complex::new(T::lit(z.re as f64), T::lit(z.im as f64))).collect();
        ComplexImage::from_vec(self.grid(), data, self.domain)
    }

    /// Real multi-channel image; all rasters must share a shape.
    pub fn from_rasters<T: Real>(rasters: &[&Raster<T>], names: &[&str], mut meta: OimgMeta) -> Result<Self> {
        let first = rasters.first().ok_or_else(|| Error::Format("no channels".into()))?;
        if rasters.iter().any(|r| !r.same_shape(first)) {
            return Err(Error::Shape("OIMG channels differ in shape".into()));
        }
        meta.channel_names = names.iter().map(|s| s.to_string()).collect();
        let data = rasters.iter().flat_map(|r| r.data.iter().map(|v| v.as_f64() as f32)).collect();
        let out = Oimg {
            rows: first.rows,
            cols: first.cols,
            channels: rasters.len(),
            domain: Domain::Image,
            payload: Payload::Real(data),
            meta,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn to_rasters<T: Real>(&self) -> Result<Vec<Raster<T>>> {
        let Payload::Real(v) = &self.payload else {
            return Err(Error::Format("expected a real OIMG".into()));
        };
        let n = self.rows * self.cols;
        v.chunks_exact(n)
            .map(|ch| Raster::from_vec(self.rows, self.cols, ch.iter().map(|&x| T::lit(x as f64)).collect()))
            .collect()
    }

    /// Two real channels: T2 (ms) then proton density.
    pub fn from_tissue_map<T: Real>(map: &TissueMap<T>, mut meta: OimgMeta) -> Result<Self> {
        meta.grid = Some(map.grid);
        Self::from_rasters(&[&map.t2_ms, &map.pd], &["t2_ms", "pd"], meta)
    }

    pub fn to_tissue_map<T: Real>(&self) -> Result<TissueMap<T>> {
        if self.channels != 2 {
            return Err(Error::Format(format!("tissue map needs 2 channels, found {}", self.channels)));
        }
        let mut ch = self.to_rasters::<T>()?;
        let pd = ch.pop().unwrap();
        let t2_ms = ch.pop().unwrap();
        let map = TissueMap { grid: self.grid(), t2_ms, pd };
        map.validate()?;
        Ok(map)
    }
}

fn dim(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{n} does not fit in u32")))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated OIMG file".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
}
