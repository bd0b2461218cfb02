//! Static descriptions of models, devices and scenarios.
//!
//! All three are stored as TOML documents carrying a mandatory
//! `schema_version`. Paths inside a scenario file are resolved relative to
//! the scenario file itself.
//!
//! Model file:
//!
//! ```toml
//! schema_version = 1
//! model_name = "vgg16"
//! input_bytes_raw = 150528       # Origin2Cloud payload
//! input_bytes_encoded = 96000    # encoded-image payload
//! input_shape = [3, 224, 224]    # optional
//!
//! [[points]]
//! index = 1
//! name = "conv1_1"
//! fmacs = 86704128.0             # fused multiply-adds executed by this unit
//! output_elements = 3211264
//! output_shape = [64, 224, 224]
//! ```
//!
//! Device file (`mode = "analytic"` takes `flops_per_second` and
//! `fit_scale`; `mode = "measured"` takes `layer_seconds`, one entry per
//! decoupling point):
//!
//! ```toml
//! schema_version = 1
//! device_name = "tegra-k1"
//! mode = "analytic"
//! flops_per_second = 3.0e11
//! fit_scale = 1.1176
//! ```
//!
//! Scenario file:
//!
//! ```toml
//! schema_version = 1
//! name = "paper-shape"
//! model = "../models/vgg16.profile"
//! edge = "../devices/tegra-k1.device"
//! cloud = "../devices/cloud-12t.device"
//! tables = "../tables/vgg16.tables.json"
//! accuracy_budget = 0.10
//! bandwidth_trace = [[0.0, 300000.0]]   # (time_s, bytes_per_second)
//! rtt_seconds = 0.0                     # optional
//! upload = "encoded"                    # optional: "encoded" | "raw"
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::LookupTables;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecouplingPoint {
    pub index: usize,
    pub name: String,
    /// Fused multiply-adds executed by this unit.
    pub fmacs: f64,
    pub output_elements: u64,
    pub output_shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelProfile {
    pub model_name: String,
    pub input_bytes_raw: u64,
    pub input_bytes_encoded: u64,
    /// Shape of the model input, used when the input itself is shipped.
    pub input_shape: Option<Vec<usize>>,
    pub points: Vec<DecouplingPoint>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema_version: u32,
    model_name: String,
    input_bytes_raw: u64,
    input_bytes_encoded: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_shape: Option<Vec<usize>>,
    points: Vec<DecouplingPoint>,
}

impl ModelProfile {
    /// Number of decoupling points, N.
    pub fn n_layers(&self) -> usize {
        self.points.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Invalid("model has no decoupling points".into()));
        }
        if self.input_bytes_encoded > self.input_bytes_raw {
            return Err(Error::Invalid(format!(
                "input_bytes_encoded ({}) exceeds input_bytes_raw ({})",
                self.input_bytes_encoded, self.input_bytes_raw
            )));
        }
        for (pos, p) in self.points.iter().enumerate() {
            if p.index != pos + 1 {
                return Err(Error::Invalid(format!("non-contiguous index at {}", p.index)));
            }
            if !(p.fmacs.is_finite() && p.fmacs > 0.0) {
                return Err(Error::Invalid(format!(
                    "point {}: fmacs must be positive and finite",
                    p.index
                )));
            }
            if p.output_elements == 0 || p.output_shape.contains(&0) {
                return Err(Error::Invalid(format!(
                    "point {}: output must be non-empty",
                    p.index
                )));
            }
            let product = p
                .output_shape
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
            if product != Some(p.output_elements) {
                return Err(Error::Invalid(format!(
                    "point {}: output_elements {} does not match shape {:?}",
                    p.index, p.output_elements, p.output_shape
                )));
            }
        }
        Ok(())
    }

    /// `Q(1..i)` for i in 0..=N, with `Q(1..0) = 0`.
    pub fn prefix_fmacs(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len() + 1);
        let mut acc = 0.0;
        out.push(acc);
        for p in &self.points {
            acc += p.fmacs;
            out.push(acc);
        }
        out
    }

    /// `Q(i+1..N)` for i in 0..=N, accumulated from the back so that the
    /// last entry is exactly zero.
    pub fn suffix_fmacs(&self) -> Vec<f64> {
        let n = self.points.len();
        let mut out = vec![0.0; n + 1];
        for i in (0..n).rev() {
            out[i] = out[i + 1] + self.points[i].fmacs;
        }
        out
    }

    pub fn point(&self, index: usize) -> Option<&DecouplingPoint> {
        index.checked_sub(1).and_then(|k| self.points.get(k))
    }

    pub fn upload_bytes(&self, kind: UploadKind) -> u64 {
        match kind {
            UploadKind::Raw => self.input_bytes_raw,
            UploadKind::Encoded => self.input_bytes_encoded,
        }
    }

    pub fn to_toml(&self) -> String {
        let file = ModelFile {
            schema_version: SCHEMA_VERSION,
            model_name: self.model_name.clone(),
            input_bytes_raw: self.input_bytes_raw,
            input_bytes_encoded: self.input_bytes_encoded,
            input_shape: self.input_shape.clone(),
            points: self.points.clone(),
        };
        toml::to_string(&file).expect("model profile serializes")
    }

    pub fn from_toml(text: &str, context: &str) -> Result<Self> {
        let file: ModelFile = toml::from_str(text).map_err(|e| Error::parse(context, e))?;
        check_schema(file.schema_version, context)?;
        let model = ModelProfile {
            model_name: file.model_name,
            input_bytes_raw: file.input_bytes_raw,
            input_bytes_encoded: file.input_bytes_encoded,
            input_shape: file.input_shape,
            points: file.points,
        };
        model.validate()?;
        Ok(model)
    }
}

pub fn load_model_profile(path: impl AsRef<Path>) -> Result<ModelProfile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelProfile::from_toml(&text, &path.display().to_string())
}

/// Which pre-encoded form of the input the all-cloud option uploads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UploadKind {
    Raw,
    #[default]
    Encoded,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeviceMode {
    Analytic { flops_per_second: f64, fit_scale: f64 },
    /// Per-layer execution seconds, one entry per decoupling point.
    Measured { layer_seconds: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceProfile {
    pub device_name: String,
    pub mode: DeviceMode,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceFile {
    schema_version: u32,
    device_name: String,
    mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    flops_per_second: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fit_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layer_seconds: Option<Vec<f64>>,
}

impl DeviceProfile {
    pub fn analytic(name: impl Into<String>, flops_per_second: f64, fit_scale: f64) -> Self {
        DeviceProfile {
            device_name: name.into(),
            mode: DeviceMode::Analytic {
                flops_per_second,
                fit_scale,
            },
        }
    }

    pub fn measured(name: impl Into<String>, layer_seconds: Vec<f64>) -> Self {
        DeviceProfile {
            device_name: name.into(),
            mode: DeviceMode::Measured { layer_seconds },
        }
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self.mode, DeviceMode::Analytic { .. })
    }

    /// Checks the mode-specific invariants. `n_layers` is required to check
    /// a measured vector's length.
    pub fn validate(&self, n_layers: Option<usize>) -> Result<()> {
        match &self.mode {
            DeviceMode::Analytic {
                flops_per_second,
                fit_scale,
            } => {
                if !(flops_per_second.is_finite() && *flops_per_second > 0.0) {
                    return Err(Error::Invalid(format!(
                        "device {}: flops_per_second must be > 0",
                        self.device_name
                    )));
                }
                if !(fit_scale.is_finite() && *fit_scale > 0.0) {
                    return Err(Error::Invalid(format!(
                        "device {}: fit_scale must be > 0",
                        self.device_name
                    )));
                }
            }
            DeviceMode::Measured { layer_seconds } => {
                if let Some(k) = layer_seconds.iter().position(|t| !(t.is_finite() && *t >= 0.0)) {
                    return Err(Error::Invalid(format!(
                        "device {}: layer_seconds[{}] must be finite and >= 0",
                        self.device_name, k
                    )));
                }
                if let Some(n) = n_layers {
                    if layer_seconds.len() != n {
                        return Err(Error::Invalid(format!(
                            "device {}: {} measured layer timings for a model with N={}",
                            self.device_name,
                            layer_seconds.len(),
                            n
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        let mut file = DeviceFile {
            schema_version: SCHEMA_VERSION,
            device_name: self.device_name.clone(),
            mode: String::new(),
            flops_per_second: None,
            fit_scale: None,
            layer_seconds: None,
        };
        match &self.mode {
            DeviceMode::Analytic {
                flops_per_second,
                fit_scale,
            } => {
                file.mode = "analytic".into();
                file.flops_per_second = Some(*flops_per_second);
                file.fit_scale = Some(*fit_scale);
            }
            DeviceMode::Measured { layer_seconds } => {
                file.mode = "measured".into();
                file.layer_seconds = Some(layer_seconds.clone());
            }
        }
        toml::to_string(&file).expect("device profile serializes")
    }

    pub fn from_toml(text: &str, context: &str) -> Result<Self> {
        let file: DeviceFile = toml::from_str(text).map_err(|e| Error::parse(context, e))?;
        check_schema(file.schema_version, context)?;
        let mode = match file.mode.as_str() {
            "analytic" => DeviceMode::Analytic {
                flops_per_second: file
                    .flops_per_second
                    .ok_or_else(|| Error::parse(context, "analytic mode requires `flops_per_second`"))?,
                fit_scale: file
                    .fit_scale
                    .ok_or_else(|| Error::parse(context, "analytic mode requires `fit_scale`"))?,
            },
            "measured" => DeviceMode::Measured {
                layer_seconds: file
                    .layer_seconds
                    .ok_or_else(|| Error::parse(context, "measured mode requires `layer_seconds`"))?,
            },
            other => {
                return Err(Error::parse(
                    context,
                    format!("field `mode`: expected \"analytic\" or \"measured\", found {other:?}"),
                ))
            }
        };
        let device = DeviceProfile {
            device_name: file.device_name,
            mode,
        };
        device.validate(None)?;
        Ok(device)
    }
}

pub fn load_device_profile(path: impl AsRef<Path>) -> Result<DeviceProfile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DeviceProfile::from_toml(&text, &path.display().to_string())
}

/// Piecewise-constant bandwidth over time: each point holds from its start
/// time until the next point.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthTrace {
    points: Vec<(f64, f64)>,
}

impl BandwidthTrace {
    pub fn new(points: Vec<(f64, f64)>) -> Self {
        BandwidthTrace { points }
    }

    pub fn constant(bytes_per_second: f64) -> Self {
        BandwidthTrace {
            points: vec![(0.0, bytes_per_second)],
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Bandwidth in effect at `t`. Times before the first point take the
    /// first value.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.points.partition_point(|&(start, _)| start <= t);
        self.points[k.saturating_sub(1)].1
    }

    pub fn mean(&self) -> f64 {
        self.points.iter().map(|p| p.1).sum::<f64>() / self.points.len() as f64
    }

    fn diagnostics(&self, out: &mut Vec<Diagnostic>) {
        if self.points.is_empty() {
            out.push(Diagnostic::new("bandwidth_trace", "trace is empty"));
            return;
        }
        if self.points[0].0 != 0.0 {
            out.push(Diagnostic::new("bandwidth_trace", "trace must start at time 0"));
        }
        for (k, w) in self.points.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                out.push(Diagnostic::new(
                    "bandwidth_trace",
                    format!("trace times must be strictly increasing (entry {})", k + 1),
                ));
            }
        }
        for (k, &(_, bw)) in self.points.iter().enumerate() {
            if !(bw.is_finite() && bw > 0.0) {
                out.push(Diagnostic::new(
                    "bandwidth_trace",
                    format!("bandwidth must be > 0 (entry {k})"),
                ));
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub model: ModelProfile,
    pub edge: DeviceProfile,
    pub cloud: DeviceProfile,
    pub tables: LookupTables,
    pub bandwidth_trace: BandwidthTrace,
    /// Δα, the largest tolerated accuracy loss.
    pub accuracy_budget: f64,
    pub rtt_seconds: f64,
    pub upload: UploadKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema_version: u32,
    name: String,
    model: PathBuf,
    edge: PathBuf,
    cloud: PathBuf,
    tables: PathBuf,
    accuracy_budget: f64,
    bandwidth_trace: Vec<(f64, f64)>,
    #[serde(default)]
    rtt_seconds: f64,
    #[serde(default)]
    upload: UploadKind,
}

/// Loads a scenario and everything it references. Cross-reference problems
/// are left for [`validate_scenario`].
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let context = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ScenarioFile = toml::from_str(&text).map_err(|e| Error::parse(&context, e))?;
    check_schema(file.schema_version, &context)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(Scenario {
        name: file.name,
        model: load_model_profile(base.join(&file.model))?,
        edge: load_device_profile(base.join(&file.edge))?,
        cloud: load_device_profile(base.join(&file.cloud))?,
        tables: LookupTables::load(base.join(&file.tables))?,
        bandwidth_trace: BandwidthTrace::new(file.bandwidth_trace),
        accuracy_budget: file.accuracy_budget,
        rtt_seconds: file.rtt_seconds,
        upload: file.upload,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Returns an empty list iff the scenario is internally consistent.
pub fn validate_scenario(s: &Scenario) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if let Err(e) = s.model.validate() {
        out.push(Diagnostic::new("model", e.to_string()));
    }
    let n = s.model.n_layers();
    for (field, device) in [("edge", &s.edge), ("cloud", &s.cloud)] {
        if let Err(e) = device.validate(Some(n)) {
            out.push(Diagnostic::new(field, e.to_string()));
        }
    }
    if s.tables.n_layers() != n {
        out.push(Diagnostic::new(
            "tables",
            format!(
                "tables built for N={} paired with model of N={}",
                s.tables.n_layers(),
                n
            ),
        ));
    }
    if let Some((i, c)) = s.tables.first_empty_cell() {
        out.push(Diagnostic::new(
            "tables",
            format!("cell (layer {i}, bits {c}) has no calibration samples"),
        ));
    }
    let sizes = s.tables.upload_sizes();
    if sizes.raw != s.model.input_bytes_raw || sizes.encoded != s.model.input_bytes_encoded {
        out.push(Diagnostic::new(
            "tables",
            "upload sizes differ from the model's input sizes",
        ));
    }
    if !(s.accuracy_budget >= 0.0) {
        out.push(Diagnostic::new("accuracy_budget", "accuracy budget must be ≥ 0"));
    }
    if !(s.rtt_seconds.is_finite() && s.rtt_seconds >= 0.0) {
        out.push(Diagnostic::new("rtt_seconds", "rtt must be finite and ≥ 0"));
    }
    s.bandwidth_trace.diagnostics(&mut out);
    out
}

fn check_schema(version: u32, context: &str) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::parse(
            context,
            format!("field `schema_version`: unsupported version {version} (expected {SCHEMA_VERSION})"),
        ));
    }
    Ok(())
}
