//! Seeded stand-ins for real activations and calibration runs.
//!
//! Feature maps are sparse and non-negative: each element is zero with the
//! layer's sparsity probability and otherwise `value_scale * LogNormal(0,
//! value_sigma)`. Every map is a pure function of `(seed, layer, sample)`.
//!
//! Correctness flags follow a per-layer loss curve
//!
//! ```text
//! loss(i, c) = loss_amplitude[i] * exp(-loss_decay * (c - 1)) + loss_floor[i]
//! ```
//!
//! Each sample gets a difficulty `u` in `[0, 1)` from a golden-ratio
//! sequence. A sample is correct before quantization when
//! `u < base_accuracy` and still correct after when
//! `u < base_accuracy - loss(i, c)`, so any contiguous run of samples
//! reproduces the curve with error on the order of `log(n) / n`.
//!
//! Spec file:
//!
//! ```toml
//! schema_version = 1
//! seed = 7
//! base_accuracy = 0.72
//! loss_decay = 0.8
//! value_sigma = 1.0
//! sparsity = [0.55, 0.7, 0.9]        # one entry per decoupling point
//! value_scale = [4.0, 4.0, 4.0]
//! loss_amplitude = [0.6, 0.1, 0.02]
//! loss_floor = [0.006, 0.004, 0.002]
//! ```

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::codec::encoded_size;
use crate::error::{Error, Result};
use crate::predictor::CalibrationRecord;
use crate::profiles::{ModelProfile, SCHEMA_VERSION};
use crate::quantizer::{quantize, FeatureMap};

const GOLDEN: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub schema_version: u32,
    pub seed: u64,
    pub base_accuracy: f64,
    pub loss_decay: f64,
    pub value_sigma: f64,
    pub sparsity: Vec<f64>,
    pub value_scale: Vec<f64>,
    pub loss_amplitude: Vec<f64>,
    pub loss_floor: Vec<f64>,
}

impl GeneratorSpec {
    /// Sparsity rising and loss falling geometrically with depth.
    pub fn ramp(n_layers: usize, seed: u64) -> Self {
        let t = |i: usize| {
            if n_layers <= 1 {
                1.0
            } else {
                i as f64 / (n_layers - 1) as f64
            }
        };
        GeneratorSpec {
            schema_version: SCHEMA_VERSION,
            seed,
            base_accuracy: 0.72,
            loss_decay: 0.8,
            value_sigma: 1.0,
            sparsity: (0..n_layers).map(|i| 0.55 + 0.4 * t(i)).collect(),
            value_scale: vec![4.0; n_layers],
            loss_amplitude: (0..n_layers)
                .map(|i| 0.6 * (0.02f64 / 0.6).powf(t(i)))
                .collect(),
            loss_floor: (0..n_layers).map(|i| 0.006 - 0.004 * t(i)).collect(),
        }
    }

    /// Same curves with no accuracy loss anywhere.
    pub fn lossless(mut self) -> Self {
        self.loss_amplitude.iter_mut().for_each(|a| *a = 0.0);
        self.loss_floor.iter_mut().for_each(|f| *f = 0.0);
        self
    }

    pub fn n_layers(&self) -> usize {
        self.sparsity.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported generator schema_version {}",
                self.schema_version
            )));
        }
        let n = self.sparsity.len();
        if n == 0 {
            return Err(Error::Invalid("generator spec has no layers".into()));
        }
        for (name, len) in [
            ("value_scale", self.value_scale.len()),
            ("loss_amplitude", self.loss_amplitude.len()),
            ("loss_floor", self.loss_floor.len()),
        ] {
            if len != n {
                return Err(Error::Dimension(format!(
                    "{name} has {len} entries, sparsity has {n}"
                )));
            }
        }
        if let Some(i) = self.sparsity.iter().position(|s| !(0.0..1.0).contains(s)) {
            return Err(Error::Invalid(format!(
                "sparsity of layer {} must be in [0, 1)",
                i + 1
            )));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        if !self.value_scale.iter().all(|&v| positive(v)) || !positive(self.value_sigma) {
            return Err(Error::Invalid("value distribution parameters must be positive".into()));
        }
        if !(self.loss_amplitude.iter().chain(&self.loss_floor).all(|&v| non_negative(v))
            && non_negative(self.loss_decay))
        {
            return Err(Error::Invalid("loss curve parameters must be non-negative".into()));
        }
        if !(self.base_accuracy > 0.0 && self.base_accuracy <= 1.0) {
            return Err(Error::Invalid("base_accuracy must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Checks that the spec describes the model's decoupling points.
    pub fn check_model(&self, model: &ModelProfile) -> Result<()> {
        self.validate()?;
        if self.n_layers() != model.n_layers() {
            return Err(Error::Dimension(format!(
                "generator spec has {} layers, model {} has {}",
                self.n_layers(),
                model.model_name,
                model.n_layers()
            )));
        }
        Ok(())
    }

    /// Loss the generator targets at `(layer, c)`, `layer` in `1..=N`.
    pub fn loss(&self, layer: usize, bit_depth: u8) -> f64 {
        let k = layer - 1;
        self.loss_amplitude[k] * (-self.loss_decay * (f64::from(bit_depth) - 1.0)).exp()
            + self.loss_floor[k]
    }

    /// Loss a built table converges to: the curve capped by the base
    /// accuracy.
    pub fn expected_loss(&self, layer: usize, bit_depth: u8) -> f64 {
        self.loss(layer, bit_depth).min(self.base_accuracy)
    }

    pub fn from_toml(text: &str, context: &str) -> Result<Self> {
        let spec: GeneratorSpec =
            toml::from_str(text).map_err(|e| Error::parse(context, e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("generator spec serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_seed(seed: u64, layer: usize, sample_id: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ layer as u64) ^ sample_id)
}

/// Difficulty of a sample, shared by all layers and depths.
pub fn difficulty(seed: u64, sample_id: u64) -> f64 {
    let phase = (splitmix(seed ^ 0x5eed) >> 11) as f64 / (1u64 << 53) as f64;
    (phase + (sample_id as f64 + 1.0) * GOLDEN).fract()
}

/// Feature map of `layer` (`1..=N`) for one sample.
pub fn gen_feature_map(
    spec: &GeneratorSpec,
    model: &ModelProfile,
    layer: usize,
    sample_id: u64,
) -> Result<FeatureMap> {
    let point = model
        .point(layer)
        .ok_or_else(|| Error::Invalid(format!("layer {layer} outside 1..={}", model.n_layers())))?;
    if layer > spec.n_layers() {
        return Err(Error::Invalid(format!(
            "layer {layer} outside generator spec of {} layers",
            spec.n_layers()
        )));
    }
    Ok(gen_map(
        spec,
        layer,
        sample_id,
        point.output_shape.clone(),
        point.output_elements as usize,
    ))
}

/// Bit depth used to ship the input image in the all-cloud plan.
pub const INPUT_BIT_DEPTH: u8 = 8;

/// Stand-in input image: uniform 8-bit pixels shaped like the model input,
/// or one value per raw input byte when no shape is recorded.
pub fn gen_input_map(spec: &GeneratorSpec, model: &ModelProfile, sample_id: u64) -> FeatureMap {
    let shape = model
        .input_shape
        .clone()
        .unwrap_or_else(|| vec![model.input_bytes_raw as usize]);
    let elements = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, 0, sample_id));
    let values = (0..elements)
        .map(|_| f64::from(rng.random_range(0..=255u8)))
        .collect();
    FeatureMap { shape, values }
}

/// Map with an explicit shape, using the sparsity and scale of `layer`.
pub fn gen_map(
    spec: &GeneratorSpec,
    layer: usize,
    sample_id: u64,
    shape: Vec<usize>,
    elements: usize,
) -> FeatureMap {
    let sparsity = spec.sparsity[layer - 1];
    let scale = spec.value_scale[layer - 1];
    let dist = LogNormal::new(0.0, spec.value_sigma).expect("validated sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, layer, sample_id));
    let values = (0..elements)
        .map(|_| {
            if rng.random::<f64>() < sparsity {
                0.0
            } else {
                scale * dist.sample(&mut rng)
            }
        })
        .collect();
    FeatureMap { shape, values }
}

/// Records of one sample: every layer at every requested depth.
pub fn sample_records(
    spec: &GeneratorSpec,
    model: &ModelProfile,
    bit_depths: &[u8],
    sample_id: u64,
) -> Result<Vec<CalibrationRecord>> {
    let u = difficulty(spec.seed, sample_id);
    let correct_before = u < spec.base_accuracy;
    let mut out = Vec::with_capacity(model.n_layers() * bit_depths.len());
    for layer in 1..=model.n_layers() {
        let fm = gen_feature_map(spec, model, layer, sample_id)?;
        for &c in bit_depths {
            let qm = quantize(&fm, c)?;
            out.push(CalibrationRecord {
                sample_id,
                layer,
                bit_depth: c,
                compressed_bytes: encoded_size(&qm)?,
                correct_before,
                correct_after: u < spec.base_accuracy - spec.loss(layer, c),
            });
        }
    }
    Ok(out)
}

/// Records for samples `first..first + count`.
pub fn gen_calibration_range<'a>(
    spec: &'a GeneratorSpec,
    model: &'a ModelProfile,
    bit_depths: &'a [u8],
    first: u64,
    count: u64,
) -> Result<impl Iterator<Item = Result<Vec<CalibrationRecord>>> + 'a> {
    spec.check_model(model)?;
    if count == 0 {
        return Err(Error::Invalid("sample count must be positive".into()));
    }
    Ok((first..first + count).map(move |s| sample_records(spec, model, bit_depths, s)))
}

/// Records for samples `0..n_samples`, grouped per sample.
pub fn gen_calibration_corpus<'a>(
    spec: &'a GeneratorSpec,
    model: &'a ModelProfile,
    bit_depths: &'a [u8],
    n_samples: u64,
) -> Result<impl Iterator<Item = Result<Vec<CalibrationRecord>>> + 'a> {
    gen_calibration_range(spec, model, bit_depths, 0, n_samples)
}

/// Collects a whole range into one vector.
pub fn collect_records(
    spec: &GeneratorSpec,
    model: &ModelProfile,
    bit_depths: &[u8],
    first: u64,
    count: u64,
) -> Result<Vec<CalibrationRecord>> {
    let mut all = Vec::new();
    for batch in gen_calibration_range(spec, model, bit_depths, first, count)? {
        all.extend(batch?);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{build_tables, TableOptions};
    use crate::profiles::DecouplingPoint;

    fn tiny_model(n: usize, elements: usize) -> ModelProfile {
        ModelProfile {
            model_name: "tiny".into(),
            input_bytes_raw: 3000,
            input_bytes_encoded: 2000,
            input_shape: None,
            points: (1..=n)
                .map(|i| DecouplingPoint {
                    index: i,
                    name: format!("l{i}"),
                    fmacs: 1e6,
                    output_elements: elements as u64,
                    output_shape: vec![elements],
                })
                .collect(),
        }
    }

    fn zero_fraction(fm: &FeatureMap) -> f64 {
        fm.values.iter().filter(|&&v| v == 0.0).count() as f64 / fm.len() as f64
    }

    #[test]
    fn sparsity_is_respected() {
        let mut spec = GeneratorSpec::ramp(2, 11);
        spec.sparsity = vec![0.9, 0.0];
        let m = tiny_model(2, 10_000);
        let sparse = gen_feature_map(&spec, &m, 1, 3).unwrap();
        let z = zero_fraction(&sparse);
        assert!((0.88..=0.92).contains(&z), "zero fraction {z}");
        assert!(sparse.values.iter().all(|&v| v >= 0.0));
        let dense = gen_feature_map(&spec, &m, 2, 3).unwrap();
        assert_eq!(zero_fraction(&dense), 0.0);
    }

    #[test]
    fn maps_are_deterministic() {
        let spec = GeneratorSpec::ramp(3, 5);
        let m = tiny_model(3, 500);
        assert_eq!(
            gen_feature_map(&spec, &m, 2, 9).unwrap(),
            gen_feature_map(&spec, &m, 2, 9).unwrap()
        );
        assert_ne!(
            gen_feature_map(&spec, &m, 2, 9).unwrap(),
            gen_feature_map(&spec, &m, 2, 10).unwrap()
        );
    }

    #[test]
    fn input_map_is_eight_bit() {
        let spec = GeneratorSpec::ramp(1, 3);
        let mut m = tiny_model(1, 4);
        m.input_shape = Some(vec![3, 8, 8]);
        let fm = gen_input_map(&spec, &m, 0);
        assert_eq!(fm.len(), 192);
        assert!(fm.values.iter().all(|&v| (0.0..=255.0).contains(&v) && v.fract() == 0.0));
        assert_eq!(fm, gen_input_map(&spec, &m, 0));
    }

    #[test]
    fn ramp_curves_are_shaped() {
        let spec = GeneratorSpec::ramp(10, 0);
        spec.validate().unwrap();
        for i in 1..=10 {
            for c in 1..16u8 {
                assert!(spec.loss(i, c + 1) <= spec.loss(i, c));
            }
            assert!(spec.loss(i, 4) < 0.10);
        }
        assert!(spec.loss(10, 8) < 0.01);
    }

    #[test]
    fn lossless_curve_builds_zero_table() {
        let spec = GeneratorSpec::ramp(3, 2).lossless();
        let m = tiny_model(3, 256);
        let recs = collect_records(&spec, &m, &[2, 4], 0, 50).unwrap();
        let t = build_tables(recs, &m, &[2, 4], TableOptions::default()).unwrap();
        assert!(t.accuracy_loss.iter().flatten().all(|&a| a == 0.0));
    }

    #[test]
    fn built_losses_track_the_curve() {
        let spec = GeneratorSpec::ramp(3, 4);
        let m = tiny_model(3, 64);
        let n = 2000;
        let recs = collect_records(&spec, &m, &[1, 4, 8], 0, n).unwrap();
        let t = build_tables(recs, &m, &[1, 4, 8], TableOptions::default()).unwrap();
        for i in 1..=3 {
            for (k, &c) in t.bit_depths.iter().enumerate() {
                let got = t.accuracy_loss[i - 1][k];
                let want = spec.expected_loss(i, c);
                assert!((got - want).abs() < 0.01, "layer {i} c={c}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn single_sample_covers_grid() {
        let spec = GeneratorSpec::ramp(2, 1);
        let m = tiny_model(2, 32);
        let recs = collect_records(&spec, &m, &[2, 3], 0, 1).unwrap();
        assert_eq!(recs.len(), 4);
        build_tables(recs, &m, &[2, 3], TableOptions::default()).unwrap();
    }

    #[test]
    fn spec_validation() {
        let mut spec = GeneratorSpec::ramp(2, 0);
        spec.sparsity[0] = 1.0;
        assert!(spec.validate().is_err());
        let mut spec = GeneratorSpec::ramp(2, 0);
        spec.loss_floor.pop();
        assert!(spec.validate().is_err());
        let spec = GeneratorSpec::ramp(2, 0);
        assert!(spec.check_model(&tiny_model(3, 4)).is_err());
        assert!(gen_calibration_corpus(&spec, &tiny_model(2, 4), &[2], 0).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let spec = GeneratorSpec::ramp(4, 99);
        assert_eq!(GeneratorSpec::from_toml(&spec.to_toml(), "t").unwrap(), spec);
    }
}
