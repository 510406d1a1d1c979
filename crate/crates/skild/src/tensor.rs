//! SKFT tensor container.
//!
//! Layout: `b"SKFT"`, `u32` version, `u32` dtype code, `u32` ndim, `ndim`
//! `u64` dims, then the payload as `f64`, all little-endian, row-major with
//! the last dimension fastest.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use skild_core::spectrum::VarianceSpectrum;
use skild_core::{PixelField, Shape};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SKFT";
pub const VERSION: u32 = 1;
pub const DTYPE_F64: u32 = 1;
const MAX_DIMS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self, String> {
        if dims.is_empty() || dims.len() > MAX_DIMS {
            return Err(format!("ndim must be in 1..={MAX_DIMS}, got {}", dims.len()));
        }
        let len = element_count(&dims)?;
        if len != data.len() {
            return Err(format!("dims {dims:?} need {len} values, got {}", data.len()));
        }
        Ok(Self { dims, data })
    }

    /// Single-channel fields are stored as `[H, W]`, others as `[C, H, W]`.
    pub fn from_field(field: &PixelField) -> Self {
        let s = field.shape();
        let dims = if s.channels == 1 {
            vec![s.height, s.width]
        } else {
            vec![s.channels, s.height, s.width]
        };
        Self {
            dims,
            data: field.values().to_vec(),
        }
    }

    /// Spectra keep their channel axis: `[C, H, W]`.
    pub fn from_spectrum(spectrum: &VarianceSpectrum) -> Self {
        let s = spectrum.shape();
        Self {
            dims: vec![s.channels, s.height, s.width],
            data: spectrum.values().to_vec(),
        }
    }

    /// Stacks equally shaped fields into `[M, C, H, W]`.
    pub fn stack(fields: &[PixelField]) -> Result<Self, String> {
        let first = fields.first().ok_or("nothing to stack")?.shape();
        let mut data = Vec::with_capacity(first.len() * fields.len());
        for (i, f) in fields.iter().enumerate() {
            if f.shape() != first {
                return Err(format!("field {i} has shape {}, expected {first}", f.shape()));
            }
            data.extend_from_slice(f.values());
        }
        Ok(Self {
            dims: vec![fields.len(), first.channels, first.height, first.width],
            data,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Shape of one field: `[H, W]`, `[C, H, W]`, or the trailing three axes
    /// of `[M, C, H, W]`.
    pub fn field_shape(&self) -> Result<Shape, String> {
        let (c, h, w) = match self.dims[..] {
            [h, w] => (1, h, w),
            [c, h, w] | [_, c, h, w] => (c, h, w),
            _ => return Err(format!("expected 2 to 4 dims, got {:?}", self.dims)),
        };
        Shape::new(c, h, w).map_err(|e| e.to_string())
    }

    /// Every field in the tensor; a 4-dim tensor is a batch.
    pub fn fields(&self) -> Result<Vec<PixelField>, String> {
        let shape = self.field_shape()?;
        self.data
            .chunks(shape.len())
            .map(|c| PixelField::new(shape, c.to_vec()).map_err(|e| e.to_string()))
            .collect()
    }

    /// The single field held by a 2- or 3-dim tensor.
    pub fn field(&self) -> Result<PixelField, String> {
        if self.dims.len() == 4 {
            return Err(format!("expected a single field, got a batch {:?}", self.dims));
        }
        PixelField::new(self.field_shape()?, self.data.clone()).map_err(|e| e.to_string())
    }

    pub fn spectrum(&self) -> Result<VarianceSpectrum, String> {
        if self.dims.len() == 4 {
            return Err(format!("expected a single spectrum, got a batch {:?}", self.dims));
        }
        VarianceSpectrum::new(self.field_shape()?, self.data.clone(), 0).map_err(|e| e.to_string())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&DTYPE_F64.to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    }

    /// Reads one tensor and rejects trailing bytes.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self, String> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if magic != MAGIC {
            return Err(format!("bad magic {magic:?}, expected \"SKFT\""));
        }
        let version = read_u32(&mut r, "version")?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let dtype = read_u32(&mut r, "dtype")?;
        if dtype != DTYPE_F64 {
            return Err(format!("unsupported dtype code {dtype}"));
        }
        let ndim = read_u32(&mut r, "ndim")? as usize;
        if ndim == 0 || ndim > MAX_DIMS {
            return Err(format!("ndim must be in 1..={MAX_DIMS}, got {ndim}"));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            read_exact(&mut r, &mut b, "dims")?;
            let d = u64::from_le_bytes(b);
            dims.push(usize::try_from(d).map_err(|_| format!("dimension {d} too large"))?);
        }
        let len = element_count(&dims)?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload).map_err(|e| e.to_string())?;
        if payload.len() != len * 8 {
            return Err(format!(
                "payload has {} bytes, dims {dims:?} need {}",
                payload.len(),
                len * 8
            ));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file)).map_err(|e| Error::format(path, e))
    }
}

fn element_count(dims: &[usize]) -> Result<usize, String> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or_else(|| format!("dims {dims:?} overflow"))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), String> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => format!("truncated header ({what})"),
        _ => e.to_string(),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32, String> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Loads a pixel field, or every field of a batch.
pub fn load_fields(path: &Path) -> Result<Vec<PixelField>> {
    Tensor::load(path)?.fields().map_err(|e| Error::format(path, e))
}

pub fn load_field(path: &Path) -> Result<PixelField> {
    Tensor::load(path)?.field().map_err(|e| Error::format(path, e))
}

pub fn save_field(path: &Path, field: &PixelField) -> Result<()> {
    Tensor::from_field(field).save(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes(t: &Tensor) -> Vec<u8> {
        let mut out = Vec::new();
        t.write_to(&mut out).unwrap();
        out
    }

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 3], vec![0.0, 1.0, -2.5, 3.0, 1e-300, f64::MAX]).unwrap();
        let b = bytes(&t);
        assert_eq!(&b[..4], b"SKFT");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(&b[8..12], &[1, 0, 0, 0]);
        assert_eq!(&b[12..16], &[2, 0, 0, 0]);
        assert_eq!(&b[16..24], &2u64.to_le_bytes());
        assert_eq!(&b[24..32], &3u64.to_le_bytes());
        assert_eq!(&b[32..40], &0.0f64.to_le_bytes());
        assert_eq!(b.len(), 32 + 6 * 8);
        assert_eq!(Tensor::read_from(&b[..]).unwrap(), t);
    }

    #[test]
    fn rejects_damage() {
        let t = Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap();
        let good = bytes(&t);
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(Tensor::read_from(&bad[..]).unwrap_err().contains("magic"));
        let mut bad = good.clone();
        bad[8] = 2;
        assert!(Tensor::read_from(&bad[..]).unwrap_err().contains("dtype"));
        assert!(Tensor::read_from(&good[..good.len() - 1]).unwrap_err().contains("payload"));
        let mut long = good.clone();
        long.push(0);
        assert!(Tensor::read_from(&long[..]).is_err());
        assert!(Tensor::read_from(&good[..10]).unwrap_err().contains("truncated"));
    }

    #[test]
    fn field_views() {
        let shape = Shape::new(3, 2, 4).unwrap();
        let f = PixelField::from_fn(shape, |c, i, j| (c * 100 + i * 10 + j) as f64).unwrap();
        let t = Tensor::from_field(&f);
        assert_eq!(t.dims(), &[3, 2, 4]);
        assert_eq!(t.field().unwrap(), f);
        let batch = Tensor::stack(&[f.clone(), f.clone()]).unwrap();
        assert_eq!(batch.dims(), &[2, 3, 2, 4]);
        assert_eq!(batch.fields().unwrap(), vec![f.clone(), f]);
        assert!(batch.field().is_err());
        let single = PixelField::zeros(Shape::square(5).unwrap());
        assert_eq!(Tensor::from_field(&single).dims(), &[5, 5]);
    }

    #[test]
    fn non_finite_payload_is_not_a_field() {
        let t = Tensor::new(vec![1, 2], vec![1.0, f64::NAN]).unwrap();
        assert!(t.field().is_err());
    }
}
