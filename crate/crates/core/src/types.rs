use apvg_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

/// Landmark coordinates of one frame in normalized image space `[0,1]²`, `y` pointing down.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointSet<T> {
    coords: Vec<[T; 2]>,
    pub instrument: String,
}

impl<T: Scalar> KeypointSet<T> {
    pub fn new(coords: Vec<[T; 2]>, instrument: impl Into<String>) -> Result<Self> {
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Shape("keypoint coordinates must be finite".into()));
        }
        Ok(Self {
            coords,
            instrument: instrument.into(),
        })
    }

    /// Rebuilds a set from `[x0, y0, x1, y1, ...]`.
    pub fn from_flat(flat: &[T], instrument: impl Into<String>) -> Result<Self> {
        if !flat.len().is_multiple_of(2) {
            return Err(Error::Shape(format!("odd flat keypoint length {}", flat.len())));
        }
        Self::new(flat.chunks(2).map(|c| [c[0], c[1]]).collect(), instrument)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[T; 2]] {
        &self.coords
    }

    pub fn flatten(&self) -> Vec<T> {
        self.coords.iter().flat_map(|c| [c[0], c[1]]).collect()
    }

    /// True when every coordinate lies inside `[0,1]`.
    pub fn in_frame(&self) -> bool {
        self.coords
            .iter()
            .flatten()
            .all(|&v| v >= T::zero() && v <= T::one())
    }

    pub fn cast<U: Scalar>(&self) -> KeypointSet<U> {
        KeypointSet {
            coords: self
                .coords
                .iter()
                .map(|c| [U::from(c[0]).unwrap(), U::from(c[1]).unwrap()])
                .collect(),
            instrument: self.instrument.clone(),
        }
    }
}

/// Tent-kernel landmark heatmap. `grid[i * height + j]` holds column `i` (width axis), row `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap<T> {
    pub width: usize,
    pub height: usize,
    pub alpha: T,
    pub grid: Vec<T>,
}

impl<T: Scalar> Heatmap<T> {
    pub fn get(&self, i: usize, j: usize) -> T {
        self.grid[i * self.height + j]
    }

    pub fn total_mass(&self) -> T {
        self.grid.iter().copied().sum()
    }

    /// Image-layout plane `[1, height, width]` (rows are `j`).
    pub fn to_plane(&self) -> Tensor<T> {
        let mut out = vec![T::zero(); self.width * self.height];
        for i in 0..self.width {
            for j in 0..self.height {
                out[j * self.width + i] = self.get(i, j);
            }
        }
        Tensor::from_vec(&[1, self.height, self.width], out)
    }
}

/// RGB image with values in `[0,1]`, stored planar as `[3, height, width]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame<T> {
    pixels: Tensor<T>,
}

impl<T: Scalar> Frame<T> {
    pub fn new(pixels: Tensor<T>) -> Result<Self> {
        let s = pixels.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::Shape(format!("frame must be [3,H,W], got {s:?}")));
        }
        if pixels
            .data()
            .iter()
            .any(|&v| !(v >= T::zero() && v <= T::one()))
        {
            return Err(Error::Shape("frame values must lie in [0,1]".into()));
        }
        Ok(Self { pixels })
    }

    /// Clamps into `[0,1]` (NaN becomes 0).
    pub fn from_tensor_clamped(pixels: Tensor<T>) -> Result<Self> {
        let clamped = pixels.map(|v| if v.is_nan() { T::zero() } else { v.max(T::zero()).min(T::one()) });
        Self::new(clamped)
    }

    pub fn filled(height: usize, width: usize, rgb: [T; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, height * width));
        }
        Self {
            pixels: Tensor::from_vec(&[3, height, width], data),
        }
    }

    pub fn height(&self) -> usize {
        self.pixels.dim(1)
    }

    pub fn width(&self) -> usize {
        self.pixels.dim(2)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.pixels
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.pixels
    }

    /// Pixel `(y, x)` channel `c`, matching the `H x W x 3` view.
    pub fn at(&self, y: usize, x: usize, c: usize) -> T {
        self.pixels.data()[(c * self.height() + y) * self.width() + x]
    }

    pub fn cast<U: Scalar>(&self) -> Frame<U> {
        Frame {
            pixels: self.pixels.cast(),
        }
    }
}

/// Constant-Q magnitude features aligned to one video frame: `[bins, hops]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip<T> {
    cqt: Tensor<T>,
    pub sample_rate: u32,
    pub hop_length: usize,
}

impl<T: Scalar> AudioClip<T> {
    pub fn new(cqt: Tensor<T>, sample_rate: u32, hop_length: usize) -> Result<Self> {
        if cqt.shape().len() != 2 {
            return Err(Error::Shape(format!("clip must be [bins, hops], got {:?}", cqt.shape())));
        }
        if !cqt.all_finite() {
            return Err(Error::Shape("clip contains non-finite values".into()));
        }
        Ok(Self {
            cqt,
            sample_rate,
            hop_length,
        })
    }

    pub fn bins(&self) -> usize {
        self.cqt.dim(0)
    }

    pub fn hops(&self) -> usize {
        self.cqt.dim(1)
    }

    pub fn cqt(&self) -> &Tensor<T> {
        &self.cqt
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            cqt: self.cqt.map(f),
            sample_rate: self.sample_rate,
            hop_length: self.hop_length,
        }
    }
}
