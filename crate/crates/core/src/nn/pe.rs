use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::scene::Bbox;

/// Sinusoidal features of bbox-normalized `(x, y)`.
///
/// Layout: `[px, py]`, then for each band `k` the block
/// `[sin(2^k π px), sin(2^k π py), cos(2^k π px), cos(2^k π py)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionalEncoding {
    bbox: Bbox,
}

impl PositionalEncoding {
    pub const NUM_FREQUENCIES: usize = 5;
    pub const OUTPUT_DIM: usize = 2 + 2 * 2 * Self::NUM_FREQUENCIES;

    pub fn new(bbox: Bbox) -> Result<Self> {
        let [ex, ey] = bbox.extent();
        if !(ex > 0.0 && ey > 0.0) || !ex.is_finite() || !ey.is_finite() {
            return Err(Error::invalid(format!(
                "positional encoding needs a non-degenerate bbox, got extent ({ex}, {ey})"
            )));
        }
        Ok(PositionalEncoding { bbox })
    }

    pub fn bbox(&self) -> Bbox {
        self.bbox
    }

    /// Maps a point into `[-1, 1]^2`, clamping outside the bbox.
    pub fn normalize(&self, x: f64, y: f64) -> [f64; 2] {
        let [ex, ey] = self.bbox.extent();
        [
            (2.0 * (x - self.bbox.min[0]) / ex - 1.0).clamp(-1.0, 1.0),
            (2.0 * (y - self.bbox.min[1]) / ey - 1.0).clamp(-1.0, 1.0),
        ]
    }

    pub fn encode(&self, x: f64, y: f64) -> [f64; Self::OUTPUT_DIM] {
        Self::encode_normalized(self.normalize(x, y))
    }

    pub fn encode_normalized(p: [f64; 2]) -> [f64; Self::OUTPUT_DIM] {
        let mut out = [0.0; Self::OUTPUT_DIM];
        out[0] = p[0];
        out[1] = p[1];
        for k in 0..Self::NUM_FREQUENCIES {
            let w = (1u32 << k) as f64 * PI;
            for axis in 0..2 {
                out[Self::sin_index(axis, k)] = (w * p[axis]).sin();
                out[Self::cos_index(axis, k)] = (w * p[axis]).cos();
            }
        }
        out
    }

    pub fn sin_index(axis: usize, band: usize) -> usize {
        2 + 4 * band + axis
    }

    pub fn cos_index(axis: usize, band: usize) -> usize {
        2 + 4 * band + 2 + axis
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> PositionalEncoding {
        PositionalEncoding::new(Bbox { min: [-1.0, -1.0], max: [1.0, 1.0] }).unwrap()
    }

    #[test]
    fn origin_encoding() {
        let e = unit().encode(0.0, 0.0);
        assert_eq!(e.len(), 22);
        assert_eq!(&e[..2], &[0.0, 0.0]);
        for k in 0..5 {
            for axis in 0..2 {
                assert_eq!(e[PositionalEncoding::sin_index(axis, k)], 0.0);
                assert_eq!(e[PositionalEncoding::cos_index(axis, k)], 1.0);
            }
        }
    }

    #[test]
    fn first_band_sine_at_half() {
        let e = unit().encode(0.5, 0.0);
        // Direct formula: sin(2^0 · π · 0.5).
        let expected = (PI * 0.5).sin();
        assert_eq!(e[PositionalEncoding::sin_index(0, 0)], expected);
        assert!((expected - 1.0).abs() < 1e-15);
        // Second band: sin(2π · 0.5) = 0, cos = -1.
        assert!(e[PositionalEncoding::sin_index(0, 1)].abs() < 1e-15);
        assert!((e[PositionalEncoding::cos_index(0, 1)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn normalization_and_clamping() {
        let pe = PositionalEncoding::new(Bbox { min: [10.0, -5.0], max: [30.0, 5.0] }).unwrap();
        assert_eq!(pe.normalize(20.0, 0.0), [0.0, 0.0]);
        assert_eq!(pe.normalize(30.0, -5.0), [1.0, -1.0]);
        assert_eq!(pe.normalize(99.0, -99.0), [1.0, -1.0]);
    }

    #[test]
    fn degenerate_bbox_is_rejected() {
        assert!(PositionalEncoding::new(Bbox { min: [0.0, 0.0], max: [0.0, 1.0] }).is_err());
    }
}
