//! Edge prefix, cloud suffix and transmission latency terms.

use std::io::Write;

use crate::error::{Error, Result};
use crate::profiles::{DeviceMode, DeviceProfile, ModelProfile};

/// Floating-point operations per fused multiply-add. Profiles count FMACs
/// while device throughput is quoted in FLOPS.
pub const FLOPS_PER_FMAC: f64 = 2.0;

/// Reference device constants for the analytic model.
pub mod reference {
    pub const CLOUD_FLOPS: f64 = 12e12;
    pub const EDGE_HIGH_FLOPS: f64 = 2e12;
    pub const EDGE_LOW_FLOPS: f64 = 300e9;
    pub const EDGE_FIT_SCALE: f64 = 1.1176;
    pub const CLOUD_FIT_SCALE: f64 = 2.1761;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Measured,
    Analytic,
    Mixed,
}

/// `edge_prefix[i]` is the edge time for layers `1..=i` and
/// `cloud_suffix[i]` the cloud time for layers `i+1..=N`, both for
/// `i in 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyModel {
    edge_prefix: Vec<f64>,
    cloud_suffix: Vec<f64>,
    pub provenance: Provenance,
}

impl LatencyModel {
    pub fn n_layers(&self) -> usize {
        self.edge_prefix.len() - 1
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.edge_prefix[i]
    }

    pub fn cloud(&self, i: usize) -> f64 {
        self.cloud_suffix[i]
    }

    pub fn edge_prefix(&self) -> &[f64] {
        &self.edge_prefix
    }

    pub fn cloud_suffix(&self) -> &[f64] {
        &self.cloud_suffix
    }

    /// Whole network on the edge.
    pub fn all_edge(&self) -> f64 {
        self.edge_prefix[self.n_layers()]
    }

    /// Whole network in the cloud, excluding the upload.
    pub fn all_cloud(&self) -> f64 {
        self.cloud_suffix[0]
    }

    /// `layer,edge_prefix_s,cloud_suffix_s`
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "layer,edge_prefix_s,cloud_suffix_s")?;
        for i in 0..=self.n_layers() {
            writeln!(out, "{},{},{}", i, self.edge_prefix[i], self.cloud_suffix[i])?;
        }
        Ok(())
    }
}

fn analytic_prefix(model: &ModelProfile, flops_per_second: f64, fit_scale: f64) -> Vec<f64> {
    model
        .prefix_fmacs()
        .into_iter()
        .map(|q| fit_scale * FLOPS_PER_FMAC * q / flops_per_second)
        .collect()
}

fn analytic_suffix(model: &ModelProfile, flops_per_second: f64, fit_scale: f64) -> Vec<f64> {
    model
        .suffix_fmacs()
        .into_iter()
        .map(|q| fit_scale * FLOPS_PER_FMAC * q / flops_per_second)
        .collect()
}

fn analytic_params(d: &DeviceProfile) -> Result<(f64, f64)> {
    d.validate(None)?;
    match d.mode {
        DeviceMode::Analytic {
            flops_per_second,
            fit_scale,
        } => Ok((flops_per_second, fit_scale)),
        DeviceMode::Measured { .. } => Err(Error::Invalid(format!(
            "device {} is not in analytic mode",
            d.device_name
        ))),
    }
}

/// `T_E_i = w_e * 2 * Q(1..i) / F_E` and `T_C_i = w_c * 2 * Q(i+1..N) / F_C`.
pub fn analytic_model(
    model: &ModelProfile,
    edge: &DeviceProfile,
    cloud: &DeviceProfile,
) -> Result<LatencyModel> {
    let (fe, we) = analytic_params(edge)?;
    let (fc, wc) = analytic_params(cloud)?;
    Ok(LatencyModel {
        edge_prefix: analytic_prefix(model, fe, we),
        cloud_suffix: analytic_suffix(model, fc, wc),
        provenance: Provenance::Analytic,
    })
}

fn check_timings(name: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension(format!(
            "{name} timings have {} entries for N={n}",
            v.len()
        )));
    }
    if let Some(k) = v.iter().position(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::Invalid(format!(
            "{name} timing for layer {} is negative or non-finite",
            k + 1
        )));
    }
    Ok(())
}

fn prefix_sums(v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for t in v {
        acc += t;
        out.push(acc);
    }
    out
}

fn suffix_sums(v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len() + 1];
    for i in (0..v.len()).rev() {
        out[i] = out[i + 1] + v[i];
    }
    out
}

/// Builds the model from per-layer execution seconds.
pub fn measured_model(
    model: &ModelProfile,
    edge_layer_seconds: &[f64],
    cloud_layer_seconds: &[f64],
) -> Result<LatencyModel> {
    let n = model.n_layers();
    check_timings("edge", edge_layer_seconds, n)?;
    check_timings("cloud", cloud_layer_seconds, n)?;
    Ok(LatencyModel {
        edge_prefix: prefix_sums(edge_layer_seconds),
        cloud_suffix: suffix_sums(cloud_layer_seconds),
        provenance: Provenance::Measured,
    })
}

/// Picks the analytic or measured construction per device; the two may be
/// mixed.
pub fn latency_for_devices(
    model: &ModelProfile,
    edge: &DeviceProfile,
    cloud: &DeviceProfile,
) -> Result<LatencyModel> {
    let n = model.n_layers();
    edge.validate(Some(n))?;
    cloud.validate(Some(n))?;
    let edge_prefix = match &edge.mode {
        DeviceMode::Analytic {
            flops_per_second,
            fit_scale,
        } => analytic_prefix(model, *flops_per_second, *fit_scale),
        DeviceMode::Measured { layer_seconds } => prefix_sums(layer_seconds),
    };
    let cloud_suffix = match &cloud.mode {
        DeviceMode::Analytic {
            flops_per_second,
            fit_scale,
        } => analytic_suffix(model, *flops_per_second, *fit_scale),
        DeviceMode::Measured { layer_seconds } => suffix_sums(layer_seconds),
    };
    let provenance = match (edge.is_analytic(), cloud.is_analytic()) {
        (true, true) => Provenance::Analytic,
        (false, false) => Provenance::Measured,
        _ => Provenance::Mixed,
    };
    Ok(LatencyModel {
        edge_prefix,
        cloud_suffix,
        provenance,
    })
}

pub fn transmission_time(size_bytes: f64, bytes_per_second: f64) -> Result<f64> {
    if !(bytes_per_second > 0.0) {
        return Err(Error::NonPositiveBandwidth(bytes_per_second));
    }
    Ok(size_bytes / bytes_per_second)
}
