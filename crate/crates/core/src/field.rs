use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result};

/// Dimensions of a multi-channel field. Storage is row-major with the channel
/// index outermost: element `(c, i, j)` lives at `(c * height + i) * width + j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("channels", "must be at least 1"));
        }
        if height == 0 {
            return Err(Error::invalid("height", "must be at least 1"));
        }
        if width == 0 {
            return Err(Error::invalid("width", "must be at least 1"));
        }
        Ok(Self {
            channels,
            height,
            width,
        })
    }

    /// Single-channel square shape.
    pub fn square(side: usize) -> Result<Self> {
        Self::new(1, side, side)
    }

    /// Number of elements in one channel.
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.plane()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

macro_rules! field_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            shape: Shape,
            values: Vec<f64>,
        }

        impl $name {
            /// Wraps `values`, rejecting a length mismatch or any non-finite entry.
            pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
                if values.len() != shape.len() {
                    return Err(Error::LengthMismatch {
                        expected: shape.len(),
                        found: values.len(),
                    });
                }
                check_finite(&values)?;
                Ok(Self { shape, values })
            }

            pub fn zeros(shape: Shape) -> Self {
                Self {
                    shape,
                    values: vec![0.0; shape.len()],
                }
            }

            pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
                let mut values = Vec::with_capacity(shape.len());
                for c in 0..shape.channels {
                    for i in 0..shape.height {
                        for j in 0..shape.width {
                            values.push(f(c, i, j));
                        }
                    }
                }
                Self::new(shape, values)
            }

            pub fn shape(&self) -> Shape {
                self.shape
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            /// Mutable access. Callers are responsible for keeping entries finite;
            /// consumers that require it re-check.
            pub fn values_mut(&mut self) -> &mut [f64] {
                &mut self.values
            }

            pub fn into_values(self) -> Vec<f64> {
                self.values
            }

            pub fn channel(&self, c: usize) -> &[f64] {
                let plane = self.shape.plane();
                &self.values[c * plane..(c + 1) * plane]
            }

            pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
                self.values[(c * self.shape.height + i) * self.shape.width + j]
            }

            pub fn check_finite(&self) -> Result<()> {
                check_finite(&self.values)
            }

            pub(crate) fn from_parts_unchecked(shape: Shape, values: Vec<f64>) -> Self {
                debug_assert_eq!(values.len(), shape.len());
                Self { shape, values }
            }
        }
    };
}

field_type!(
    /// Pixel-space image or field.
    PixelField
);

field_type!(
    /// DCT coefficients `X_{u,v}` of a [`PixelField`], same layout.
    SpectralField
);
