//! Step conversion of float feature maps into `c`-bit integer symbols.
//!
//! When the map's maximum reaches `2^c` the values are min/max normalized
//! onto `0..=2^c-1` and rounded half away from zero. Otherwise the values
//! already fit and are only rounded and clamped, with the `passthrough`
//! flag set so the inverse knows not to rescale. A constant map always
//! yields zero symbols.

use crate::error::{Error, Result};

pub const MAX_BIT_DEPTH: u8 = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub shape: Vec<usize>,
    /// Row-major values.
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                expected,
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(k));
        }
        Ok(FeatureMap { shape, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Size of the map when shipped as float32.
    pub fn float32_bytes(&self) -> u64 {
        4 * self.values.len() as u64
    }

    /// Little-endian bytes of the shape followed by every value's bit
    /// pattern, suitable for digesting.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * (self.shape.len() + self.values.len() + 1));
        out.extend_from_slice(&(self.shape.len() as u64).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMap {
    pub shape: Vec<usize>,
    pub bit_depth: u8,
    pub v_min: f64,
    pub v_max: f64,
    pub passthrough: bool,
    pub symbols: Vec<u32>,
}

impl QuantizedMap {
    /// Largest representable symbol, `2^c - 1`.
    pub fn max_symbol(&self) -> u32 {
        max_symbol(self.bit_depth)
    }

    pub fn validate(&self) -> Result<()> {
        check_bit_depth(self.bit_depth)?;
        let expected: usize = self.shape.iter().product();
        if expected != self.symbols.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} holds {} symbols, got {}",
                self.shape,
                expected,
                self.symbols.len()
            )));
        }
        if !(self.v_min.is_finite() && self.v_max.is_finite() && self.v_min <= self.v_max) {
            return Err(Error::Invalid(format!(
                "invalid value range [{}, {}]",
                self.v_min, self.v_max
            )));
        }
        let top = self.max_symbol();
        if let Some(k) = self.symbols.iter().position(|&s| s > top) {
            return Err(Error::Invalid(format!(
                "symbol {} at element {k} exceeds {}-bit range",
                self.symbols[k], self.bit_depth
            )));
        }
        Ok(())
    }

    /// Reconstruction error bound for a non-passthrough map.
    pub fn error_bound(&self) -> f64 {
        (self.v_max - self.v_min) / (2.0 * f64::from(self.max_symbol()))
    }
}

pub(crate) fn max_symbol(bit_depth: u8) -> u32 {
    if bit_depth >= 32 {
        u32::MAX
    } else {
        (1u32 << bit_depth) - 1
    }
}

fn check_bit_depth(c: u8) -> Result<()> {
    if c == 0 || c > MAX_BIT_DEPTH {
        return Err(Error::InvalidBitDepth(u32::from(c)));
    }
    Ok(())
}

pub fn quantize(fm: &FeatureMap, bit_depth: u8) -> Result<QuantizedMap> {
    check_bit_depth(bit_depth)?;
    if fm.values.is_empty() {
        return Err(Error::Dimension("cannot quantize an empty feature map".into()));
    }
    let (mut v_min, mut v_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (k, &v) in fm.values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(k));
        }
        v_min = v_min.min(v);
        v_max = v_max.max(v);
    }

    let top = max_symbol(bit_depth);
    let levels = f64::from(top);
    let (passthrough, symbols) = if v_max == v_min {
        (false, vec![0; fm.values.len()])
    } else if v_max >= levels + 1.0 {
        let scale = levels / (v_max - v_min);
        let symbols = fm
            .values
            .iter()
            .map(|&v| ((v - v_min) * scale).round().clamp(0.0, levels) as u32)
            .collect();
        (false, symbols)
    } else {
        let symbols = fm
            .values
            .iter()
            .map(|&v| v.round().clamp(0.0, levels) as u32)
            .collect();
        (true, symbols)
    };

    Ok(QuantizedMap {
        shape: fm.shape.clone(),
        bit_depth,
        v_min,
        v_max,
        passthrough,
        symbols,
    })
}

pub fn dequantize(qm: &QuantizedMap) -> Result<FeatureMap> {
    qm.validate()?;
    let values = if qm.passthrough {
        qm.symbols.iter().map(|&s| f64::from(s)).collect()
    } else {
        let step = (qm.v_max - qm.v_min) / f64::from(qm.max_symbol());
        qm.symbols
            .iter()
            .map(|&s| qm.v_min + f64::from(s) * step)
            .collect()
    };
    Ok(FeatureMap {
        shape: qm.shape.clone(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(values: &[f64]) -> FeatureMap {
        FeatureMap::new(vec![values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn scaled_branch_rounds_half_away() {
        let q = quantize(&map(&[0.0, 7.5, 15.0]), 2).unwrap();
        assert_eq!(q.symbols, vec![0, 2, 3]);
        assert!(!q.passthrough);
        assert_eq!((q.v_min, q.v_max), (0.0, 15.0));

        let r = dequantize(&q).unwrap();
        assert_eq!(r.values, vec![0.0, 10.0, 15.0]);
        for (a, b) in r.values.iter().zip([0.0, 7.5, 15.0]) {
            assert!((a - b).abs() <= 2.5);
        }
    }

    #[test]
    fn small_values_pass_through() {
        let q = quantize(&map(&[0.0, 3.0]), 2).unwrap();
        assert!(q.passthrough);
        assert_eq!(q.symbols, vec![0, 3]);
        assert_eq!(dequantize(&q).unwrap().values, vec![0.0, 3.0]);
    }

    #[test]
    fn passthrough_clamps_negatives_to_zero() {
        let q = quantize(&map(&[-1.2, 2.6]), 2).unwrap();
        assert!(q.passthrough);
        assert_eq!(q.symbols, vec![0, 3]);
    }

    #[test]
    fn constant_map_is_all_zero() {
        for c in [1, 2, 8, 16, 32] {
            let q = quantize(&map(&[5.0, 5.0]), c).unwrap();
            assert_eq!(q.symbols, vec![0, 0]);
            assert_eq!((q.v_min, q.v_max), (5.0, 5.0));
            assert_eq!(dequantize(&q).unwrap().values, vec![5.0, 5.0]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            quantize(&map(&[1.0]), 0),
            Err(Error::InvalidBitDepth(0))
        ));
        assert!(matches!(
            quantize(&map(&[1.0]), 33),
            Err(Error::InvalidBitDepth(33))
        ));
        let bad = FeatureMap {
            shape: vec![2],
            values: vec![1.0, f64::NAN],
        };
        assert!(matches!(quantize(&bad, 4), Err(Error::NonFinite(1))));
        assert!(FeatureMap::new(vec![2], vec![0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn full_32_bit_depth() {
        let q = quantize(&map(&[0.0, 1e10]), 32).unwrap();
        assert_eq!(q.symbols, vec![0, u32::MAX]);
    }

    fn scaled_maps() -> impl Strategy<Value = (Vec<f64>, u8)> {
        (1u8..=16).prop_flat_map(|c| {
            let floor = 2f64.powi(i32::from(c));
            (
                prop::collection::vec(-1e3f64..1e3, 1..200),
                Just(c),
                floor..floor * 4.0,
            )
                .prop_map(|(mut v, c, top)| {
                    // Force the scaled branch.
                    v.push(top);
                    (v, c)
                })
        })
    }

    proptest! {
        #[test]
        fn reconstruction_within_half_step((values, c) in scaled_maps()) {
            let q = quantize(&map(&values), c).unwrap();
            prop_assert!(!q.passthrough);
            let bound = q.error_bound();
            let r = dequantize(&q).unwrap();
            for (x, y) in values.iter().zip(&r.values) {
                prop_assert!((x - y).abs() <= bound + 1e-9 * bound.max(1.0));
            }
        }

        #[test]
        fn symbols_are_monotone_and_in_range(values in prop::collection::vec(-50f64..500.0, 1..200), c in 1u8..=12) {
            let q = quantize(&map(&values), c).unwrap();
            let top = q.max_symbol();
            prop_assert!(q.symbols.iter().all(|&s| s <= top));
            for i in 0..values.len() {
                for j in 0..values.len() {
                    if values[i] <= values[j] {
                        prop_assert!(q.symbols[i] <= q.symbols[j]);
                    }
                }
            }
        }

        #[test]
        fn zeros_stay_zero_when_min_is_zero(mut values in prop::collection::vec(0f64..300.0, 1..100), c in 1u8..=10) {
            values.push(0.0);
            let q = quantize(&map(&values), c).unwrap();
            for (x, s) in values.iter().zip(&q.symbols) {
                if *x == 0.0 {
                    prop_assert_eq!(*s, 0);
                }
            }
        }
    }
}
