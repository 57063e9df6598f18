//! Uniform periodic grids over the centered box [-L/2, L/2)^n.
//!
//! The box approximates R^n; wavenumbers are 2*pi/L times signed integer
//! indices in [-N/2, N/2). Dimension is 2 for all solver paths and may be
//! 3 for kernel evaluation.

use thiserror::Error;

pub const MAX_DIM: usize = 3;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dimension must be 2 or 3, got {0}")]
    BadDimension(usize),
    #[error("points per axis must be a power of two >= 16, got {0}")]
    BadPoints(usize),
    #[error("box length must be positive and finite, got {0}")]
    BadLength(f64),
}

/// Descriptor of a uniform periodic grid; cheap to copy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n: usize,
    points: usize,
    length: f64,
}

impl Grid {
    pub fn new(n: usize, points: usize, length: f64) -> Result<Self, GridError> {
        if !(2..=MAX_DIM).contains(&n) {
            return Err(GridError::BadDimension(n));
        }
        if points < 16 || !points.is_power_of_two() {
            return Err(GridError::BadPoints(points));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(GridError::BadLength(length));
        }
        Ok(Self { n, points, length })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Points per axis.
    pub fn points(&self) -> usize {
        self.points
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.length / self.points as f64
    }

    /// Cell volume dx^n.
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.n as i32)
    }

    /// Total number of samples N^n.
    pub fn len(&self) -> usize {
        self.points.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of sample index i along any axis: x = (i - N/2) dx.
    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - self.points as f64 / 2.0) * self.dx()
    }

    /// Per-axis coordinate table.
    pub fn coords(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.coord(i)).collect()
    }

    /// Signed wavenumber for index i: xi = (2 pi / L) * f with f in [-N/2, N/2).
    pub fn freq(&self, i: usize) -> f64 {
        let f = if i < self.points / 2 {
            i as f64
        } else {
            i as f64 - self.points as f64
        };
        2.0 * std::f64::consts::PI / self.length * f
    }

    /// Per-axis wavenumber table in FFT storage order.
    pub fn freqs(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.freq(i)).collect()
    }

    /// Largest resolved wavenumber magnitude per axis, (N/2)(2 pi / L).
    pub fn freq_max(&self) -> f64 {
        std::f64::consts::PI * self.points as f64 / self.length
    }

    /// Row-major strides for index arithmetic.
    pub fn strides(&self) -> [usize; MAX_DIM] {
        let mut s = [0usize; MAX_DIM];
        let mut acc = 1usize;
        for axis in (0..self.n).rev() {
            s[axis] = acc;
            acc *= self.points;
        }
        s
    }

    /// Decompose a linear index into per-axis indices.
    pub fn unravel(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0usize; MAX_DIM];
        for axis in (0..self.n).rev() {
            out[axis] = idx % self.points;
            idx /= self.points;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        assert!(Grid::new(1, 32, 1.0).is_err());
        assert!(Grid::new(2, 12, 1.0).is_err());
        assert!(Grid::new(2, 33, 1.0).is_err());
        assert!(Grid::new(2, 32, -1.0).is_err());
        assert!(Grid::new(2, 32, f64::NAN).is_err());
    }

    #[test]
    fn coordinates_and_frequencies() {
        let g = Grid::new(2, 16, 8.0).unwrap();
        assert_eq!(g.dx(), 0.5);
        assert_eq!(g.coord(0), -4.0);
        assert_eq!(g.coord(8), 0.0);
        assert_eq!(g.coord(15), 3.5);
        let xi = g.freqs();
        assert_eq!(xi[0], 0.0);
        assert!((xi[1] - 2.0 * std::f64::consts::PI / 8.0).abs() < 1e-15);
        assert!(xi[8] < 0.0); // Nyquist stored as negative frequency
        assert_eq!(g.unravel(17), [1, 1, 0]);
    }
}
