#![allow(dead_code)]

use edgesplit::latency::{analytic_model, reference, LatencyModel};
use edgesplit::planner::ReplanController;
use edgesplit::predictor::{build_tables, LookupTables, TableOptions};
use edgesplit::profiles::{DecouplingPoint, DeviceProfile, ModelProfile};
use edgesplit::synthetic::{collect_records, GeneratorSpec};

pub const DEPTHS: [u8; 4] = [2, 4, 6, 8];

/// Small conv-like model: shrinking maps, growing compute.
pub fn small_model() -> ModelProfile {
    let shapes: [[usize; 3]; 5] = [[16, 24, 24], [16, 12, 12], [32, 12, 12], [32, 6, 6], [64, 3, 3]];
    ModelProfile {
        model_name: "small".into(),
        input_bytes_raw: 3 * 24 * 24,
        input_bytes_encoded: 1200,
        input_shape: Some(vec![3, 24, 24]),
        points: shapes
            .iter()
            .enumerate()
            .map(|(k, s)| DecouplingPoint {
                index: k + 1,
                name: format!("block{}", k + 1),
                fmacs: 2e7 * (k as f64 + 1.0),
                output_elements: s.iter().product::<usize>() as u64,
                output_shape: s.to_vec(),
            })
            .collect(),
    }
}

pub fn small_spec(seed: u64) -> GeneratorSpec {
    GeneratorSpec::ramp(small_model().n_layers(), seed)
}

pub fn small_tables(spec: &GeneratorSpec, samples: u64) -> LookupTables {
    let model = small_model();
    let recs = collect_records(spec, &model, &DEPTHS, 0, samples).unwrap();
    build_tables(recs, &model, &DEPTHS, TableOptions::default()).unwrap()
}

pub fn small_latency() -> LatencyModel {
    analytic_model(
        &small_model(),
        &DeviceProfile::analytic("edge", reference::EDGE_LOW_FLOPS, reference::EDGE_FIT_SCALE),
        &DeviceProfile::analytic("cloud", reference::CLOUD_FLOPS, reference::CLOUD_FIT_SCALE),
    )
    .unwrap()
}

pub fn small_controller(spec: &GeneratorSpec, budget: f64) -> ReplanController {
    ReplanController::new(small_model(), small_latency(), small_tables(spec, 40), budget)
}
