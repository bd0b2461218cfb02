//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits nonzero if any criterion fails.

use std::cmp::Ordering;
use std::net::TcpStream;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use edgesplit::codec::{decode, encode, CodeTable, EncodedBlock};
use edgesplit::latency::latency_for_devices;
use edgesplit::planner::{
    build_grid_with_upload, solve, solve_branch_and_bound, DecisionGrid, PlanDecision, PlanRecord,
    ReplanController,
};
use edgesplit::predictor::{build_tables, compare_tables, TableOptions};
use edgesplit::profiles::{load_model_profile, load_scenario, Scenario};
use edgesplit::quantizer::{dequantize, quantize, FeatureMap, QuantizedMap};
use edgesplit::simulator::{run, sweep_edge_power, RequestStream, SimOptions};
use edgesplit::synthetic::{collect_records, gen_map, GeneratorSpec};
use edgesplit::transport::wire::{read_message, write_message, Message, MessageKind};
use edgesplit::transport::{local_digest, CloudConfig, CloudService, EdgeAgent, EdgeConfig};

/// Speedups of the paper-shape scenario recorded on the first passing run.
const FROZEN_SPEEDUP_ORIGIN2CLOUD: f64 = 4.378458;
const FROZEN_SPEEDUP_ENCODED2CLOUD: f64 = 2.809930;

const SCENARIOS: [&str; 6] = [
    "paper-shape",
    "paper-shape-1mbps",
    "tegra-x2-1mbps",
    "bandwidth-step",
    "resnet50-300kbps",
    "small-loopback",
];

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn scenario(name: &str) -> Scenario {
    load_scenario(fixtures().join(format!("scenarios/{name}.scenario"))).expect("fixture scenario")
}

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn quantizer_bound() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_slack = f64::INFINITY;
    for m in 0..1000 {
        let len = rng.random_range(16..2048);
        let lo = rng.random_range(-500.0..100.0);
        // The maximum reaches 2^8 so every depth takes the scaled branch.
        let hi = rng.random_range(256.0..5000.0);
        let mut values: Vec<f64> = (0..len).map(|_| rng.random_range(lo..hi)).collect();
        values[0] = hi;
        values[1] = lo;
        let fm = FeatureMap::new(vec![len], values).map_err(|e| e.to_string())?;
        for c in [2u8, 4, 8] {
            let q = quantize(&fm, c).map_err(|e| e.to_string())?;
            let r = dequantize(&q).map_err(|e| e.to_string())?;
            let bound = (hi - lo) / (2.0 * (2f64.powi(i32::from(c)) - 1.0));
            let err = fm
                .values
                .iter()
                .zip(&r.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            ensure(err <= bound + 1e-6, || {
                format!("map {m} c={c}: error {err} exceeds bound {bound}")
            })?;
            worst_slack = worst_slack.min(bound + 1e-6 - err);
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!("3000 reconstructions within bound, min slack {worst_slack:.3e}, {secs:.2}s"))
}

fn random_quantized(rng: &mut ChaCha8Rng) -> QuantizedMap {
    let ndim = rng.random_range(1..=3);
    let shape: Vec<usize> = (0..ndim).map(|_| rng.random_range(1..=24)).collect();
    let n: usize = shape.iter().product();
    let c: u8 = rng.random_range(1..=12);
    let sparsity: f64 = rng.random_range(0.0..1.0);
    let top = (1u32 << c) - 1;
    let skew: f64 = rng.random_range(0.05..1.0);
    let symbols = (0..n)
        .map(|_| {
            if rng.random::<f64>() < sparsity {
                0
            } else {
                ((rng.random::<f64>().powf(1.0 / skew)) * f64::from(top)).round() as u32
            }
        })
        .collect();
    QuantizedMap {
        shape,
        bit_depth: c,
        v_min: -1.5,
        v_max: 7.25,
        passthrough: rng.random(),
        symbols,
    }
}

fn codec_lossless() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut truncations = 0;
    let mut kraft = 0;
    for k in 0..1000 {
        let qm = random_quantized(&mut rng);
        let block = encode(&qm, k).map_err(|e| e.to_string())?;
        let bytes = block.to_bytes();
        let back = EncodedBlock::from_bytes(&bytes)
            .and_then(|b| decode(&b))
            .map_err(|e| format!("case {k}: {e}"))?;
        ensure(back == qm, || format!("case {k}: round trip differs"))?;

        let cut = rng.random_range(0..bytes.len());
        ensure(EncodedBlock::from_bytes(&bytes[..cut]).is_err(), || {
            format!("case {k}: truncation at {cut} of {} accepted", bytes.len())
        })?;
        truncations += 1;

        if let CodeTable::Lengths(lengths) = &block.header.code {
            // Three one-bit codes oversubscribe the code space. A two-letter
            // alphabet cannot exceed the Kraft bound.
            if lengths.len() < 3 {
                continue;
            }
            let mut bad = block.clone();
            let CodeTable::Lengths(l) = &mut bad.header.code else { unreachable!() };
            for x in &mut l[..3] {
                *x = 1;
            }
            let rejected = EncodedBlock::from_bytes(&bad.to_bytes())
                .and_then(|b| decode(&b))
                .is_err();
            ensure(rejected, || format!("case {k}: Kraft-violating table accepted"))?;
            kraft += 1;
        }
    }
    Ok(format!(
        "1000 round trips exact, {truncations} truncations and {kraft} Kraft corruptions rejected"
    ))
}

fn compression() -> Check {
    let mut spec = GeneratorSpec::ramp(1, 3);
    let mut ratios = Vec::new();
    for k in 0..100u64 {
        spec.sparsity[0] = 0.92 + 0.03 * (k % 2) as f64;
        let fm = gen_map(&spec, 1, k, vec![64, 28, 28], 64 * 28 * 28);
        let zeros = fm.values.iter().filter(|&&v| v == 0.0).count() as f64 / fm.len() as f64;
        ensure(zeros >= 0.90, || format!("map {k} has only {zeros:.3} zeros"))?;
        let q = quantize(&fm, 4).map_err(|e| e.to_string())?;
        let bytes = encode(&q, 1).map_err(|e| e.to_string())?.byte_len() as f64;
        ratios.push(bytes / fm.float32_bytes() as f64);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    ensure(mean <= 0.1, || format!("mean ratio {mean:.4} exceeds 1/10"))?;
    Ok(format!("mean encoded/float32 ratio {mean:.4} (1/{:.1})", 1.0 / mean))
}

/// Independent reference: sort every feasible cell by the documented order.
fn oracle(
    edge: &[f64],
    cloud: &[f64],
    bytes: &[f64],
    loss: &[f64],
    cols: usize,
    bw: f64,
    budget: f64,
) -> (usize, usize) {
    let mut cells = Vec::new();
    for i in 0..edge.len() {
        for k in 0..cols {
            if i == 0 || loss[i * cols + k] <= budget {
                let z = edge[i] + bytes[i * cols + k] / bw + cloud[i];
                cells.push((z, i, k));
            }
        }
    }
    cells.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then(b.1.cmp(&a.1))
            .then(b.2.cmp(&a.2))
    });
    (cells[0].1, cells[0].2)
}

fn solver_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut times = Vec::with_capacity(1000);
    let mut ties = 0;
    for g in 0..1000 {
        let n = rng.random_range(1..=50);
        let cols = rng.random_range(1..=32);
        let integral = g % 2 == 0;
        let mut draw = |hi: f64| {
            if integral {
                f64::from(rng.random_range(0..(hi as u32).max(1)))
            } else {
                rng.random_range(0.0..hi)
            }
        };
        let edge: Vec<f64> = (0..=n).map(|_| draw(6.0)).collect();
        let cloud: Vec<f64> = (0..=n).map(|_| draw(6.0)).collect();
        let bytes: Vec<f64> = (0..(n + 1) * cols).map(|_| draw(6.0)).collect();
        let loss: Vec<f64> = (0..(n + 1) * cols).map(|_| draw(3.0) / 10.0).collect();
        let budget = draw(3.0) / 10.0;
        let bw = if integral { 1.0 } else { rng.random_range(0.5..2.0) };
        let grid = DecisionGrid::from_terms(
            (1..=cols as u8).collect(),
            edge.clone(),
            cloud.clone(),
            bytes.clone(),
            loss.clone(),
            bw,
            budget,
        )
        .map_err(|e| e.to_string())?;

        let t = Instant::now();
        let d = solve(&grid).map_err(|e| e.to_string())?;
        times.push(t.elapsed().as_secs_f64());
        let b = solve_branch_and_bound(&grid).map_err(|e| e.to_string())?;

        let (oi, ok) = oracle(&edge, &cloud, &bytes, &loss, cols, bw, budget);
        let got = (d.split_layer, d.bit_depth);
        let want = (oi, (oi > 0).then_some(ok as u8 + 1));
        ensure(got == want, || format!("grid {g}: solve {got:?}, oracle {want:?}"))?;
        ensure((b.split_layer, b.bit_depth) == want, || {
            format!("grid {g}: branch and bound {:?}, oracle {want:?}", (b.split_layer, b.bit_depth))
        })?;
        let z = grid.cost(oi, ok);
        let tied = (0..=n)
            .flat_map(|i| (0..cols).map(move |k| (i, k)))
            .filter(|&(i, k)| grid.is_feasible(i, k) && grid.cost(i, k) == z)
            .count();
        if tied > 1 {
            ties += 1;
        }
    }
    times.sort_by(f64::total_cmp);
    let median_ms = times[times.len() / 2] * 1e3;
    ensure(median_ms < 10.0, || format!("median solve {median_ms:.3} ms"))?;
    Ok(format!(
        "1000 grids match the oracle ({ties} with tied optima), median solve {median_ms:.4} ms"
    ))
}

fn plan_at(s: &Scenario, bw: f64, budget: f64) -> Result<PlanDecision, String> {
    let lm = latency_for_devices(&s.model, &s.edge, &s.cloud).map_err(|e| e.to_string())?;
    let grid = build_grid_with_upload(&s.model, &lm, &s.tables, bw, budget, s.upload)
        .map_err(|e| e.to_string())?;
    solve(&grid).map_err(|e| e.to_string())
}

fn planner_monotonicity() -> Check {
    let s = scenario("paper-shape");
    let mut by_budget = Vec::new();
    for bw in [300e3, 1e6] {
        let mut prev = f64::INFINITY;
        for budget in [0.0, 0.01, 0.05, 0.10, 1.0] {
            let d = plan_at(&s, bw, budget)?;
            ensure(d.total_s <= prev, || format!("latency rose at budget {budget}, {bw} B/s"))?;
            ensure(d.predicted_accuracy_loss <= budget, || format!("budget {budget} violated"))?;
            prev = d.total_s;
            by_budget.push(format!("{budget}@{bw}:{}", d.split_layer));
        }
    }
    // With no loss allowed, only input upload or measured-lossless cells remain.
    let zero = plan_at(&s, 300e3, 0.0)?;
    let lossless = (1..=s.model.n_layers())
        .flat_map(|i| s.tables.bit_depths.iter().map(move |&c| (i, c)))
        .any(|(i, c)| s.tables.lookup_accuracy(i, c).is_ok_and(|a| a <= 0.0));
    ensure(lossless || zero.split_layer == 0, || {
        format!("zero budget chose layer {} with every cell lossy", zero.split_layer)
    })?;

    let mut prev = f64::INFINITY;
    let mut last = None;
    let mut bw = 100e3;
    while bw <= 10e6 * 1.0001 {
        let d = plan_at(&s, bw, s.accuracy_budget)?;
        ensure(d.total_s <= prev, || format!("latency rose at {bw} B/s"))?;
        prev = d.total_s;
        last = Some(d);
        bw *= 10f64.powf(0.25);
    }
    let top = last.expect("non-empty sweep");
    ensure(top.split_layer == 0, || format!("10 MB/s chose layer {}", top.split_layer))?;
    Ok(format!(
        "non-increasing over budgets (split per budget {}) and 100 KB/s..10 MB/s; top bandwidth uploads the input",
        by_budget.join(" ")
    ))
}

fn simulator_dominance() -> Check {
    let mut notes = Vec::new();
    for name in SCENARIOS {
        let s = scenario(name);
        let r = run(&s, &RequestStream::every(100, 0.05), &SimOptions::default())
            .map_err(|e| format!("{name}: {e}"))?;
        let best = r.origin2cloud_mean_s.min(r.encoded2cloud_mean_s);
        ensure(r.mean_total_s <= best, || {
            format!("{name}: mean {} above baseline {best}", r.mean_total_s)
        })?;
        if name == "paper-shape" {
            let (so, se) = (r.speedup_origin2cloud, r.speedup_encoded2cloud);
            println!("    paper-shape speedups: origin2cloud {so:.6}, encoded2cloud {se:.6}");
            for (got, frozen, label) in [
                (so, FROZEN_SPEEDUP_ORIGIN2CLOUD, "origin2cloud"),
                (se, FROZEN_SPEEDUP_ENCODED2CLOUD, "encoded2cloud"),
            ] {
                ensure((got / frozen - 1.0).abs() <= 0.01, || {
                    format!("{label} speedup {got:.6} differs from frozen {frozen:.6}")
                })?;
            }
        }
        notes.push(format!("{name} x{:.2}", r.speedup_encoded2cloud));
    }
    Ok(format!("never above either baseline; speedup vs encoded2cloud: {}", notes.join(", ")))
}

fn edge_power() -> Check {
    let mut notes = Vec::new();
    for name in SCENARIOS {
        let s = scenario(name);
        let rows = sweep_edge_power(&s, &[300e9, 2e12], &RequestStream::every(20, 0.05), &SimOptions::default())
            .map_err(|e| format!("{name}: {e}"))?;
        ensure(rows[1].mean_total_s <= rows[0].mean_total_s, || {
            format!("{name}: 2 TFLOPS slower than 300 GFLOPS")
        })?;
        notes.push(format!(
            "{name} {:.1}->{:.1} ms",
            rows[0].mean_total_s * 1e3,
            rows[1].mean_total_s * 1e3
        ));
    }
    Ok(notes.join(", "))
}

fn predictor_stability() -> Check {
    let model = load_model_profile(fixtures().join("models/small.profile")).map_err(|e| e.to_string())?;
    let spec = GeneratorSpec::load(fixtures().join("generators/small.gen.toml")).map_err(|e| e.to_string())?;
    let depths: Vec<u8> = (1..=8).collect();
    let half = |first| {
        let recs = collect_records(&spec, &model, &depths, first, 2500).map_err(|e| e.to_string())?;
        build_tables(recs, &model, &depths, TableOptions::default()).map_err(|e| e.to_string())
    };
    let a = half(0)?;
    let b = half(2500)?;
    let rep = compare_tables(&a, &b);
    ensure(rep.max_accuracy_abs < 0.02, || {
        format!("accuracy divergence {:.4}", rep.max_accuracy_abs)
    })?;
    ensure(rep.max_size_rel < 0.05, || format!("size divergence {:.4}", rep.max_size_rel))?;
    Ok(format!(
        "max |dA| {:.4}, max relative dS {:.4} over {} cells",
        rep.max_accuracy_abs,
        rep.max_size_rel,
        rep.cells.len()
    ))
}

fn transport_equivalence() -> Check {
    let started = Instant::now();
    let s = scenario("small-loopback");
    let spec = GeneratorSpec::load(fixtures().join("generators/small.gen.toml")).map_err(|e| e.to_string())?;
    let (cloud, join) = CloudService::bind(CloudConfig::new("127.0.0.1:0"))
        .map_err(|e| e.to_string())?
        .spawn();
    let lm = latency_for_devices(&s.model, &s.edge, &s.cloud).map_err(|e| e.to_string())?;
    let controller = ReplanController::new(s.model.clone(), lm, s.tables.clone(), s.accuracy_budget);
    let mut cfg = EdgeConfig::new(cloud.addr().to_string(), spec.clone());
    cfg.retry_backoff = Duration::from_millis(10);
    let mut agent = EdgeAgent::new(cfg, controller).map_err(|e| e.to_string())?;

    let mut mismatches = 0;
    let mut epochs = std::collections::BTreeSet::new();
    for id in 0..100u64 {
        let bw = if id < 50 { 200e3 } else { 20e6 };
        agent.set_bandwidth(bw).map_err(|e| e.to_string())?;
        if id == 75 {
            // Another party moves the cloud to a newer plan while the agent
            // still holds the old one.
            let cur = agent.controller().current().unwrap().clone();
            let mut next = PlanRecord {
                epoch: agent.epoch() + 1,
                decision: cur,
            };
            next.decision.split_layer = s.model.n_layers();
            next.decision.bit_depth = Some(*s.tables.bit_depths.last().unwrap());
            let mut c = TcpStream::connect(cloud.addr()).map_err(|e| e.to_string())?;
            write_message(&mut c, &Message::new(MessageKind::PlanSync, next.epoch, 0, next.to_text()))
                .map_err(|e| e.to_string())?;
            read_message(&mut c).map_err(|e| e.to_string())?;
        }
        let out = agent.request(id).map_err(|e| e.to_string())?;
        epochs.insert(out.epoch);
        let decision = PlanDecision {
            split_layer: out.split_layer,
            bit_depth: out.bit_depth,
            ..agent.controller().current().unwrap().clone()
        };
        let local = local_digest(&spec, &s.model, &decision, id).map_err(|e| e.to_string())?;
        if local != out.digest {
            mismatches += 1;
        }
    }
    cloud.stop();
    let cloud_stats = join.join().map_err(|_| "cloud thread panicked".to_string())?;
    let st = agent.stats();
    let secs = started.elapsed().as_secs_f64();
    ensure(mismatches == 0 && st.digest_mismatches == 0, || format!("{mismatches} digest mismatches"))?;
    ensure(st.epoch_violations == 0, || format!("{} epoch violations", st.epoch_violations))?;
    ensure(st.results == 100 && cloud_stats.results == 100, || {
        format!("{} results at the edge, {} at the cloud", st.results, cloud_stats.results)
    })?;
    ensure(epochs.len() >= 2, || "plan never changed".to_string())?;
    ensure(st.retransmissions >= 1, || "no stale block was rejected".to_string())?;
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "100 results bit-identical to the local pipeline across epochs {:?}, {} stale blocks retransmitted, 0 epoch violations, {secs:.2}s",
        epochs, st.retransmissions
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("quantizer reconstruction bound", quantizer_bound),
        ("codec losslessness and corruption rejection", codec_lossless),
        ("compression of sparse maps at 4 bits", compression),
        ("solver matches exhaustive oracle", solver_correctness),
        ("planner monotonicity", planner_monotonicity),
        ("simulator dominance over baselines", simulator_dominance),
        ("edge-power sweep direction", edge_power),
        ("predictor stability across corpus halves", predictor_stability),
        ("transport equivalence under plan change", transport_equivalence),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
