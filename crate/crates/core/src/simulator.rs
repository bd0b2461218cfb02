//! Request-stream replay over a scenario.
//!
//! Requests run one after another. A request departs at
//! `max(arrival, previous finish)`, reads the bandwidth in effect at that
//! instant, asks the replan controller for a plan and is charged
//! `edge + transmission + cloud`. In table mode the transmitted size is the
//! table's expected size; in payload mode the feature map is generated,
//! quantized and encoded, and the actual block length is charged. Both
//! baselines upload the input at the same departure time and run the whole
//! network in the cloud.

use std::fmt::Write as _;
use std::io::Write;

use crate::codec::encode;
use crate::error::{Error, Result};
use crate::latency::{latency_for_devices, transmission_time, LatencyModel};
use crate::planner::{PlanDecision, ReplanController, ReplanOutcome, SolverKind};
use crate::predictor::LookupTables;
use crate::profiles::{
    validate_scenario, BandwidthTrace, DeviceMode, ModelProfile, Scenario, UploadKind,
};
use crate::quantizer::quantize;
use crate::synthetic::{gen_feature_map, GeneratorSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum Arrivals {
    /// Request `k` arrives at `k * interval`.
    Fixed(f64),
    /// Explicit arrival times, one per request.
    Times(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestStream {
    pub count: usize,
    pub arrivals: Arrivals,
    /// Sample id of the first request in payload mode.
    pub first_sample: u64,
}

impl RequestStream {
    /// `count` requests arriving back to back.
    pub fn back_to_back(count: usize) -> Self {
        RequestStream {
            count,
            arrivals: Arrivals::Fixed(0.0),
            first_sample: 0,
        }
    }

    pub fn every(count: usize, interval_s: f64) -> Self {
        RequestStream {
            count,
            arrivals: Arrivals::Fixed(interval_s),
            first_sample: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Invalid("request stream is empty".into()));
        }
        match &self.arrivals {
            Arrivals::Fixed(dt) if !(dt.is_finite() && *dt >= 0.0) => {
                Err(Error::Invalid(format!("inter-arrival time {dt} is invalid")))
            }
            Arrivals::Times(t) if t.len() != self.count => Err(Error::Dimension(format!(
                "{} arrival times for {} requests",
                t.len(),
                self.count
            ))),
            Arrivals::Times(t) if t.iter().any(|x| !(x.is_finite() && *x >= 0.0)) => {
                Err(Error::Invalid("arrival times must be finite and non-negative".into()))
            }
            _ => Ok(()),
        }
    }

    fn arrival(&self, k: usize) -> f64 {
        match &self.arrivals {
            Arrivals::Fixed(dt) => k as f64 * dt,
            Arrivals::Times(t) => t[k],
        }
    }
}

#[derive(Debug, Clone, Default)]
pub enum Fidelity {
    #[default]
    Table,
    Payload(GeneratorSpec),
}

impl Fidelity {
    pub fn name(&self) -> &'static str {
        match self {
            Fidelity::Table => "table",
            Fidelity::Payload(_) => "payload",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    pub fidelity: Fidelity,
    pub solver: SolverKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestRecord {
    pub index: usize,
    pub arrival_s: f64,
    pub departure_s: f64,
    pub bandwidth: f64,
    pub epoch: u64,
    pub split_layer: usize,
    pub bit_depth: Option<u8>,
    pub predicted_bytes: f64,
    pub bytes: f64,
    pub edge_s: f64,
    pub trans_s: f64,
    pub cloud_s: f64,
    pub total_s: f64,
    pub predicted_total_s: f64,
    pub origin2cloud_s: f64,
    pub encoded2cloud_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanEpoch {
    pub epoch: u64,
    pub first_request: usize,
    pub decision: PlanDecision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub mode: &'static str,
    pub requests: Vec<RequestRecord>,
    pub plans: Vec<PlanEpoch>,
    pub mean_total_s: f64,
    pub mean_predicted_total_s: f64,
    pub p50_total_s: f64,
    pub p95_total_s: f64,
    pub p99_total_s: f64,
    pub origin2cloud_mean_s: f64,
    pub encoded2cloud_mean_s: f64,
    pub speedup_origin2cloud: f64,
    pub speedup_encoded2cloud: f64,
}

impl RunReport {
    pub const CSV_HEADER: &'static str = "request,arrival_s,departure_s,bandwidth_Bps,epoch,split_layer,bit_depth,predicted_bytes,bytes,edge_s,trans_s,cloud_s,total_s,predicted_total_s,origin2cloud_s,encoded2cloud_s";

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.requests {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.index,
                r.arrival_s,
                r.departure_s,
                r.bandwidth,
                r.epoch,
                r.split_layer,
                r.bit_depth.map_or(String::new(), |c| c.to_string()),
                r.predicted_bytes,
                r.bytes,
                r.edge_s,
                r.trans_s,
                r.cloud_s,
                r.total_s,
                r.predicted_total_s,
                r.origin2cloud_s,
                r.encoded2cloud_s
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let ms = |x: f64| x * 1e3;
        let _ = writeln!(s, "scenario: {}", self.scenario);
        let _ = writeln!(s, "mode: {}", self.mode);
        let _ = writeln!(s, "requests: {}", self.requests.len());
        let _ = writeln!(s, "mean_total_ms: {:.4}", ms(self.mean_total_s));
        if self.mode != "table" {
            let _ = writeln!(s, "mean_predicted_total_ms: {:.4}", ms(self.mean_predicted_total_s));
        }
        let _ = writeln!(
            s,
            "p50/p95/p99_ms: {:.4} / {:.4} / {:.4}",
            ms(self.p50_total_s),
            ms(self.p95_total_s),
            ms(self.p99_total_s)
        );
        let _ = writeln!(s, "origin2cloud_mean_ms: {:.4}", ms(self.origin2cloud_mean_s));
        let _ = writeln!(s, "encoded2cloud_mean_ms: {:.4}", ms(self.encoded2cloud_mean_s));
        let _ = writeln!(s, "speedup_vs_origin2cloud: {:.4}", self.speedup_origin2cloud);
        let _ = writeln!(s, "speedup_vs_encoded2cloud: {:.4}", self.speedup_encoded2cloud);
        for p in &self.plans {
            let _ = writeln!(
                s,
                "plan epoch={} from_request={} {}",
                p.epoch, p.first_request, p.decision
            );
        }
        s
    }
}

fn check_scenario(s: &Scenario) -> Result<()> {
    let diags = validate_scenario(s);
    if diags.is_empty() {
        return Ok(());
    }
    let text: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
    Err(Error::Invalid(format!(
        "scenario {} is invalid: {}",
        s.name,
        text.join("; ")
    )))
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn run(scenario: &Scenario, stream: &RequestStream, options: &SimOptions) -> Result<RunReport> {
    check_scenario(scenario)?;
    stream.validate()?;
    if let Fidelity::Payload(spec) = &options.fidelity {
        spec.check_model(&scenario.model)?;
    }
    let latency = latency_for_devices(&scenario.model, &scenario.edge, &scenario.cloud)?;
    run_with_latency(scenario, &latency, stream, options)
}

fn run_with_latency(
    scenario: &Scenario,
    latency: &LatencyModel,
    stream: &RequestStream,
    options: &SimOptions,
) -> Result<RunReport> {
    let mut controller = ReplanController::new(
        scenario.model.clone(),
        latency.clone(),
        scenario.tables.clone(),
        scenario.accuracy_budget,
    )
    .with_upload(scenario.upload)
    .with_solver(options.solver);

    let raw = scenario.model.upload_bytes(UploadKind::Raw) as f64;
    let encoded = scenario.model.upload_bytes(UploadKind::Encoded) as f64;
    let rtt = scenario.rtt_seconds;

    let mut requests = Vec::with_capacity(stream.count);
    let mut plans = Vec::new();
    let mut finish = 0.0f64;
    for k in 0..stream.count {
        let arrival = stream.arrival(k);
        let departure = arrival.max(finish);
        let bw = scenario.bandwidth_trace.at(departure);
        if let ReplanOutcome::Changed { decision, epoch } = controller.replan(bw)? {
            plans.push(PlanEpoch {
                epoch,
                first_request: k,
                decision,
            });
        }
        let d = controller.current().expect("plan after replan").clone();
        let bytes = match (&options.fidelity, d.bit_depth) {
            (Fidelity::Payload(spec), Some(c)) => {
                let sample = stream.first_sample + k as u64;
                let fm = gen_feature_map(spec, &scenario.model, d.split_layer, sample)?;
                encode(&quantize(&fm, c)?, d.split_layer as u32)?.byte_len() as f64
            }
            _ => d.predicted_bytes,
        };
        let trans = transmission_time(bytes, bw)? + rtt;
        let total = d.edge_s + trans + d.cloud_s;
        let predicted_total = d.edge_s + (d.trans_s + rtt) + d.cloud_s;
        let origin = 0.0 + (transmission_time(raw, bw)? + rtt) + latency.all_cloud();
        let enc = 0.0 + (transmission_time(encoded, bw)? + rtt) + latency.all_cloud();
        finish = departure + total;
        requests.push(RequestRecord {
            index: k,
            arrival_s: arrival,
            departure_s: departure,
            bandwidth: bw,
            epoch: controller.epoch(),
            split_layer: d.split_layer,
            bit_depth: d.bit_depth,
            predicted_bytes: d.predicted_bytes,
            bytes,
            edge_s: d.edge_s,
            trans_s: trans,
            cloud_s: d.cloud_s,
            total_s: total,
            predicted_total_s: predicted_total,
            origin2cloud_s: origin,
            encoded2cloud_s: enc,
        });
    }

    let mean_total = mean(requests.iter().map(|r| r.total_s));
    let origin_mean = mean(requests.iter().map(|r| r.origin2cloud_s));
    let enc_mean = mean(requests.iter().map(|r| r.encoded2cloud_s));
    let mut sorted: Vec<f64> = requests.iter().map(|r| r.total_s).collect();
    sorted.sort_by(f64::total_cmp);
    Ok(RunReport {
        scenario: scenario.name.clone(),
        mode: options.fidelity.name(),
        mean_predicted_total_s: mean(requests.iter().map(|r| r.predicted_total_s)),
        p50_total_s: percentile(&sorted, 50.0),
        p95_total_s: percentile(&sorted, 95.0),
        p99_total_s: percentile(&sorted, 99.0),
        origin2cloud_mean_s: origin_mean,
        encoded2cloud_mean_s: enc_mean,
        speedup_origin2cloud: origin_mean / mean_total,
        speedup_encoded2cloud: enc_mean / mean_total,
        mean_total_s: mean_total,
        requests,
        plans,
    })
}

/// One row of a parameter sweep. `split_layer` and `bit_depth` are those of
/// the first plan; `plan_epochs` counts how many plans the run used.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub parameter: f64,
    pub mean_total_s: f64,
    pub origin2cloud_mean_s: f64,
    pub encoded2cloud_mean_s: f64,
    pub speedup_origin2cloud: f64,
    pub speedup_encoded2cloud: f64,
    pub split_layer: usize,
    pub bit_depth: Option<u8>,
    pub predicted_accuracy_loss: f64,
    pub plan_epochs: usize,
}

impl SweepRow {
    fn from_report(parameter: f64, r: &RunReport) -> Self {
        let first = &r.plans[0].decision;
        SweepRow {
            parameter,
            mean_total_s: r.mean_total_s,
            origin2cloud_mean_s: r.origin2cloud_mean_s,
            encoded2cloud_mean_s: r.encoded2cloud_mean_s,
            speedup_origin2cloud: r.speedup_origin2cloud,
            speedup_encoded2cloud: r.speedup_encoded2cloud,
            split_layer: first.split_layer,
            bit_depth: first.bit_depth,
            predicted_accuracy_loss: first.predicted_accuracy_loss,
            plan_epochs: r.plans.len(),
        }
    }
}

/// Writes sweep rows; `parameter` names the first column.
pub fn write_sweep_csv(rows: &[SweepRow], parameter: &str, mut out: impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "{parameter},mean_total_s,origin2cloud_mean_s,encoded2cloud_mean_s,speedup_origin2cloud,speedup_encoded2cloud,split_layer,bit_depth,predicted_accuracy_loss,plan_epochs"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.parameter,
            r.mean_total_s,
            r.origin2cloud_mean_s,
            r.encoded2cloud_mean_s,
            r.speedup_origin2cloud,
            r.speedup_encoded2cloud,
            r.split_layer,
            r.bit_depth.map_or(String::new(), |c| c.to_string()),
            r.predicted_accuracy_loss,
            r.plan_epochs
        )?;
    }
    Ok(())
}

pub fn sweep_accuracy(
    scenario: &Scenario,
    budgets: &[f64],
    stream: &RequestStream,
    options: &SimOptions,
) -> Result<Vec<SweepRow>> {
    budgets
        .iter()
        .map(|&b| {
            let mut s = scenario.clone();
            s.accuracy_budget = b;
            Ok(SweepRow::from_report(b, &run(&s, stream, options)?))
        })
        .collect()
}

pub fn sweep_edge_power(
    scenario: &Scenario,
    flops: &[f64],
    stream: &RequestStream,
    options: &SimOptions,
) -> Result<Vec<SweepRow>> {
    let DeviceMode::Analytic { fit_scale, .. } = scenario.edge.mode else {
        return Err(Error::Invalid(format!(
            "edge device {} is not analytic; edge-power sweeps need a FLOPS model",
            scenario.edge.device_name
        )));
    };
    flops
        .iter()
        .map(|&f| {
            let mut s = scenario.clone();
            s.edge.mode = DeviceMode::Analytic {
                flops_per_second: f,
                fit_scale,
            };
            Ok(SweepRow::from_report(f, &run(&s, stream, options)?))
        })
        .collect()
}

/// Runs the scenario under each constant bandwidth.
pub fn sweep_bandwidth(
    scenario: &Scenario,
    bandwidths: &[f64],
    stream: &RequestStream,
    options: &SimOptions,
) -> Result<Vec<SweepRow>> {
    bandwidths
        .iter()
        .map(|&bw| {
            let mut s = scenario.clone();
            s.bandwidth_trace = BandwidthTrace::constant(bw);
            Ok(SweepRow::from_report(bw, &run(&s, stream, options)?))
        })
        .collect()
}

/// Output size of every decoupling point relative to the raw input.
pub fn write_amplification_csv(model: &ModelProfile, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "layer,name,float32_bytes,ratio_to_raw_input")?;
    let raw = model.input_bytes_raw as f64;
    for p in &model.points {
        let bytes = 4 * p.output_elements;
        writeln!(out, "{},{},{},{}", p.index, p.name, bytes, bytes as f64 / raw)?;
    }
    Ok(())
}

/// Expected compressed size per cell relative to the float32 map.
pub fn write_compression_csv(
    model: &ModelProfile,
    tables: &LookupTables,
    mut out: impl Write,
) -> std::io::Result<()> {
    writeln!(out, "layer,name,bit_depth,expected_bytes,float32_bytes,compression_ratio")?;
    for p in &model.points {
        let float_bytes = (4 * p.output_elements) as f64;
        for (k, &c) in tables.bit_depths.iter().enumerate() {
            let s = tables.expected_size[p.index - 1][k];
            writeln!(
                out,
                "{},{},{},{},{},{}",
                p.index,
                p.name,
                c,
                s,
                float_bytes,
                float_bytes / s
            )?;
        }
    }
    Ok(())
}
