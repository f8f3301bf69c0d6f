//! Byte quantization of grid values.
//!
//! Every stored grid value is produced as `2m · q(σ(raw)) - m`, where `q`
//! snaps to one of 256 levels. During fitting the rounding is treated as the
//! identity in the backward pass (straight-through gradient), so the fitted
//! values are already exact byte levels and baking them loses nothing.

use serde::{Deserialize, Serialize};

use crate::math::sigmoid;

/// Number of quantization levels per channel.
pub const LEVELS: u32 = 256;
const MAX_LEVEL: f64 = (LEVELS - 1) as f64;

/// Value ranges for density and appearance channels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizationSpec {
    pub m_density: f64,
    pub m_appearance: f64,
    pub levels: u32,
}

impl Default for QuantizationSpec {
    fn default() -> Self {
        Self { m_density: 14.0, m_appearance: 7.0, levels: LEVELS }
    }
}

impl QuantizationSpec {
    /// Range for channel `c` (channel 0 is density).
    #[inline]
    pub fn m_for_channel(&self, c: usize) -> f64 {
        if c == 0 {
            self.m_density
        } else {
            self.m_appearance
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.m_density > 0.0 && self.m_appearance > 0.0) || self.levels != LEVELS {
            return Err(crate::Error::InvalidConfig(format!("bad quantization spec {self:?}")));
        }
        Ok(())
    }
}

/// Snaps `v` to the nearest of 256 levels in `[0, 1]`. Inputs outside the
/// unit interval are clamped first.
#[inline]
pub fn quantize_value(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    // non-negative, so truncation is floor
    ((MAX_LEVEL * v + 0.5) as u32) as f64 / MAX_LEVEL
}

/// Derivative used for [`quantize_value`] in the backward pass.
#[inline]
pub fn quantize_value_grad(_v: f64) -> f64 {
    1.0
}

/// Byte for a raw (pre-sigmoid) parameter.
#[inline]
pub fn encode_cell(raw: f64) -> u8 {
    level_byte(sigmoid(raw))
}

#[inline]
fn level_byte(unit: f64) -> u8 {
    (MAX_LEVEL * unit.clamp(0.0, 1.0) + 0.5) as u8
}

/// Affine map of a byte into `[-m, m]`.
#[inline]
pub fn decode_cell(b: u8, m: f64) -> f64 {
    2.0 * m * (b as f64 / MAX_LEVEL) - m
}

/// Grid value of a raw parameter: `2m · q(σ(raw)) - m` when `quantized`,
/// otherwise `2m · σ(raw) - m`.
#[inline]
pub fn grid_value(raw: f64, m: f64, quantized: bool) -> f64 {
    let s = sigmoid(raw);
    let unit = if quantized { quantize_value(s) } else { s };
    2.0 * m * unit - m
}

/// `d grid_value / d raw` under the straight-through rule; identical for
/// both modes.
#[inline]
pub fn grid_value_grad(raw: f64, m: f64) -> f64 {
    let s = sigmoid(raw);
    2.0 * m * s * (1.0 - s) * quantize_value_grad(s)
}

/// Byte for an already-affine grid value in `[-m, m]`.
#[inline]
pub fn encode_value(v: f64, m: f64) -> u8 {
    level_byte((v + m) / (2.0 * m))
}

/// Lookup table of decoded values for every byte.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeTable(pub [f64; 256]);

impl DecodeTable {
    pub fn new(m: f64) -> Self {
        let mut t = [0.0; 256];
        for (b, v) in t.iter_mut().enumerate() {
            *v = decode_cell(b as u8, m);
        }
        Self(t)
    }

    #[inline]
    pub fn get(&self, b: u8) -> f64 {
        self.0[b as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_hand_values() {
        assert_eq!(quantize_value(0.0), 0.0);
        assert_eq!(quantize_value(1.0), 1.0);
        assert_eq!(quantize_value(0.3), 77.0 / 255.0);
        assert_eq!(quantize_value(0.5), 128.0 / 255.0);
        assert_eq!(quantize_value(-0.2), 0.0);
        assert_eq!(quantize_value(1.7), 1.0);
    }

    #[test]
    fn encode_decode_hand_values() {
        assert_eq!(encode_cell(0.0), 128);
        assert!((decode_cell(128, 14.0) - 0.054_901_960_784_313_7).abs() < 1e-12);
        assert_eq!(decode_cell(0, 7.0), -7.0);
        assert_eq!(decode_cell(255, 7.0), 7.0);
        assert_eq!(encode_cell(1e6), 255);
        assert_eq!(encode_cell(f64::INFINITY), 255);
        assert_eq!(encode_cell(-1e6), 0);
    }

    #[test]
    fn decode_of_encode_is_eq7_value() {
        for i in 0..2000 {
            let raw = -12.0 + 24.0 * i as f64 / 1999.0;
            for m in [7.0, 14.0] {
                assert_eq!(decode_cell(encode_cell(raw), m), grid_value(raw, m, true));
                assert_eq!(encode_value(grid_value(raw, m, true), m), encode_cell(raw));
            }
        }
    }

    #[test]
    fn table_matches_decode() {
        let t = DecodeTable::new(14.0);
        for b in 0..=255u8 {
            assert_eq!(t.get(b), decode_cell(b, 14.0));
        }
    }
}
