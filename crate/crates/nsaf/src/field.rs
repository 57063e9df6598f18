//! Physical and spectral fields on a grid, and the NSAF binary snapshot format.
//!
//! Fields are immutable values after construction: every operation returns a
//! new field, so sharing across threads is safe.

use std::io::{Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::grid::Grid;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("field data contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("data length {got} does not match grid size {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("grids differ: {0:?} vs {1:?}")]
    GridMismatch(Grid, Grid),
    #[error("inverse transform left imaginary residue {residue:.3e} of max {max:.3e}")]
    ImaginaryResidue { residue: f64, max: f64 },
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot format: {0}")]
    Format(String),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
}

/// Real samples of one scalar component on the grid.
#[derive(Debug, Clone)]
pub struct PhysicalField {
    grid: Grid,
    data: Vec<f64>,
    time_tag: f64,
}

/// Complex Fourier coefficients of a real field, full-spectrum storage.
///
/// Coefficients are true Fourier-series coefficients with respect to the
/// centered coordinates: f(x) = sum_k coeff(k) exp(i xi_k . x).
#[derive(Debug, Clone)]
pub struct SpectralField {
    grid: Grid,
    data: Vec<Complex64>,
    time_tag: f64,
}

impl PhysicalField {
    pub fn new(grid: Grid, data: Vec<f64>, time_tag: f64) -> Result<Self, FieldError> {
        if data.len() != grid.len() {
            return Err(FieldError::LengthMismatch {
                got: data.len(),
                want: grid.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite(i));
        }
        Ok(Self { grid, data, time_tag })
    }

    pub fn zeros(grid: Grid, time_tag: f64) -> Self {
        Self {
            grid,
            data: vec![0.0; grid.len()],
            time_tag,
        }
    }

    /// Sample a function of the centered coordinates.
    pub fn from_fn(grid: Grid, time_tag: f64, f: impl Fn(&[f64]) -> f64) -> Self {
        let coords = grid.coords();
        let n = grid.dim();
        let npts = grid.points();
        let mut data = vec![0.0; grid.len()];
        let mut x = [0.0f64; crate::grid::MAX_DIM];
        for (idx, v) in data.iter_mut().enumerate() {
            let mut rem = idx;
            for axis in (0..n).rev() {
                x[axis] = coords[rem % npts];
                rem /= npts;
            }
            *v = f(&x[..n]);
        }
        Self { grid, data, time_tag }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn time_tag(&self) -> f64 {
        self.time_tag
    }

    pub fn with_time_tag(mut self, t: f64) -> Self {
        self.time_tag = t;
        self
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// a*self + b*other.
    pub fn axpby(&self, a: f64, other: &Self, b: f64) -> Result<Self, FieldError> {
        if self.grid != other.grid {
            return Err(FieldError::GridMismatch(self.grid, other.grid));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Self {
            grid: self.grid,
            data,
            time_tag: self.time_tag,
        })
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            grid: self.grid,
            data: self.data.iter().map(|v| a * v).collect(),
            time_tag: self.time_tag,
        }
    }

    /// Pointwise product, used for bilinear terms like omega * u.
    pub fn pointwise_mul(&self, other: &Self) -> Result<Self, FieldError> {
        if self.grid != other.grid {
            return Err(FieldError::GridMismatch(self.grid, other.grid));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| x * y)
            .collect();
        Ok(Self {
            grid: self.grid,
            data,
            time_tag: self.time_tag,
        })
    }

    /// Pointwise magnitude sqrt(f1^2 + f2^2) of a two-component field.
    pub fn magnitude(f1: &Self, f2: &Self) -> Result<Self, FieldError> {
        if f1.grid != f2.grid {
            return Err(FieldError::GridMismatch(f1.grid, f2.grid));
        }
        let data = f1
            .data
            .iter()
            .zip(&f2.data)
            .map(|(a, b)| a.hypot(*b))
            .collect();
        Ok(Self {
            grid: f1.grid,
            data,
            time_tag: f1.time_tag,
        })
    }

    /// Max |f| over the outermost one-cell shell divided by the global max.
    /// Gauges how well the field has decayed before the periodic boundary.
    pub fn boundary_decay(&self) -> f64 {
        let max = self.max_abs();
        if max == 0.0 {
            return 0.0;
        }
        let npts = self.grid.points();
        let n = self.grid.dim();
        let mut edge = 0.0f64;
        for (idx, v) in self.data.iter().enumerate() {
            let ix = self.grid.unravel(idx);
            if (0..n).any(|a| ix[a] == 0 || ix[a] == npts - 1) {
                edge = edge.max(v.abs());
            }
        }
        edge / max
    }

    /// Fraction of the L1 mass carried by the outer shell of the given width
    /// in cells. Used as the box-size diagnostic on solver snapshots.
    pub fn boundary_mass_fraction(&self, shell_cells: usize) -> f64 {
        let npts = self.grid.points();
        let n = self.grid.dim();
        let mut total = 0.0;
        let mut shell = 0.0;
        for (idx, v) in self.data.iter().enumerate() {
            let a = v.abs();
            total += a;
            let ix = self.grid.unravel(idx);
            if (0..n).any(|ax| ix[ax] < shell_cells || ix[ax] >= npts - shell_cells) {
                shell += a;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            shell / total
        }
    }

    pub fn write_nsaf(&self, path: &Path) -> Result<(), FieldError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(b"NSAF")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.grid.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.grid.points() as u32).to_le_bytes())?;
        w.write_all(&self.grid.length().to_le_bytes())?;
        w.write_all(&self.time_tag.to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_nsaf(path: &Path) -> Result<Self, FieldError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"NSAF" {
            return Err(FieldError::Format("bad magic".into()));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != 1 {
            return Err(FieldError::Format(format!("unsupported version {version}")));
        }
        r.read_exact(&mut u32buf)?;
        let n = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let points = u32::from_le_bytes(u32buf) as usize;
        let mut f64buf = [0u8; 8];
        r.read_exact(&mut f64buf)?;
        let length = f64::from_le_bytes(f64buf);
        r.read_exact(&mut f64buf)?;
        let time_tag = f64::from_le_bytes(f64buf);
        let grid = Grid::new(n, points, length)?;
        let mut data = vec![0.0f64; grid.len()];
        for v in data.iter_mut() {
            r.read_exact(&mut f64buf)?;
            *v = f64::from_le_bytes(f64buf);
        }
        Self::new(grid, data, time_tag)
    }
}

impl SpectralField {
    pub fn new(grid: Grid, data: Vec<Complex64>, time_tag: f64) -> Result<Self, FieldError> {
        if data.len() != grid.len() {
            return Err(FieldError::LengthMismatch {
                got: data.len(),
                want: grid.len(),
            });
        }
        Ok(Self { grid, data, time_tag })
    }

    pub fn zeros(grid: Grid, time_tag: f64) -> Self {
        Self {
            grid,
            data: vec![Complex64::new(0.0, 0.0); grid.len()],
            time_tag,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn time_tag(&self) -> f64 {
        self.time_tag
    }

    pub fn with_time_tag(mut self, t: f64) -> Self {
        self.time_tag = t;
        self
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.norm()))
    }

    /// Largest violation of coeff(-xi) = conj(coeff(xi)), relative to the max
    /// coefficient magnitude.
    pub fn hermitian_defect(&self) -> f64 {
        let max = self.max_abs();
        if max == 0.0 {
            return 0.0;
        }
        let npts = self.grid.points();
        let n = self.grid.dim();
        let strides = self.grid.strides();
        let mut worst = 0.0f64;
        for (idx, v) in self.data.iter().enumerate() {
            let ix = self.grid.unravel(idx);
            // mirror index; Nyquist row (N/2) maps to itself
            let mut mirror = 0usize;
            for a in 0..n {
                let m = (npts - ix[a]) % npts;
                mirror += m * strides[a];
            }
            let w = self.data[mirror];
            worst = worst.max((v - w.conj()).norm());
        }
        worst / max
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::new(2, 16, 4.0).unwrap()
    }

    #[test]
    fn rejects_nan() {
        let mut data = vec![0.0; grid().len()];
        data[7] = f64::NAN;
        assert!(matches!(
            PhysicalField::new(grid(), data, 0.0),
            Err(FieldError::NonFinite(7))
        ));
    }

    #[test]
    fn nsaf_round_trip() {
        let f = PhysicalField::from_fn(grid(), 2.5, |x| (x[0] + 0.3 * x[1]).sin());
        let dir = std::env::temp_dir().join(format!("nsaf-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f.nsaf");
        f.write_nsaf(&path).unwrap();
        let g = PhysicalField::read_nsaf(&path).unwrap();
        assert_eq!(f.grid(), g.grid());
        assert_eq!(f.time_tag(), g.time_tag());
        assert_eq!(f.data(), g.data());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn nsaf_header_layout() {
        let f = PhysicalField::zeros(grid(), 1.0);
        let dir = std::env::temp_dir().join(format!("nsaf-hdr-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("z.nsaf");
        f.write_nsaf(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"NSAF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 16);
        assert_eq!(f64::from_le_bytes(bytes[16..24].try_into().unwrap()), 4.0);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 1.0);
        assert_eq!(bytes.len(), 32 + 8 * 256);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn boundary_decay_of_centered_bump() {
        let g = Grid::new(2, 32, 20.0).unwrap();
        let f = PhysicalField::from_fn(g, 0.0, |x| (-(x[0] * x[0] + x[1] * x[1])).exp());
        assert!(f.boundary_decay() < 1e-12);
    }
}
