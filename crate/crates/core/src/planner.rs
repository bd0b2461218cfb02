//! Split-point and bit-depth selection.
//!
//! Exactly one cell `(i, c)` is chosen, so the integer program reduces to a
//! feasibility-filtered argmin over the `(N+1) x C` grid. Row `i = 0` is the
//! all-cloud upload of the input, which is always feasible. Equal costs are
//! broken toward the larger split layer, then the larger bit depth.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};
use crate::latency::{transmission_time, LatencyModel};
use crate::predictor::LookupTables;
use crate::profiles::{ModelProfile, UploadKind};

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionGrid {
    n_layers: usize,
    bit_depths: Vec<u8>,
    edge: Vec<f64>,
    cloud: Vec<f64>,
    /// Row-major `(N+1) x C` matrices.
    trans: Vec<f64>,
    bytes: Vec<f64>,
    loss: Vec<f64>,
    cost: Vec<f64>,
    feasible: Vec<bool>,
}

impl DecisionGrid {
    /// Assembles a grid from raw terms. `edge` and `cloud` have `N+1`
    /// entries; `bytes` and `loss` are row-major `(N+1) x C`.
    pub fn from_terms(
        bit_depths: Vec<u8>,
        edge: Vec<f64>,
        cloud: Vec<f64>,
        bytes: Vec<f64>,
        loss: Vec<f64>,
        bandwidth: f64,
        budget: f64,
    ) -> Result<Self> {
        if bit_depths.is_empty() || edge.is_empty() {
            return Err(Error::Dimension("grid needs at least one row and column".into()));
        }
        let rows = edge.len();
        let cols = bit_depths.len();
        if cloud.len() != rows || bytes.len() != rows * cols || loss.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "grid terms disagree on a {rows}x{cols} shape"
            )));
        }
        let mut trans = Vec::with_capacity(rows * cols);
        let mut cost = Vec::with_capacity(rows * cols);
        let mut feasible = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for k in 0..cols {
                let t = transmission_time(bytes[i * cols + k], bandwidth)?;
                let z = edge[i] + t + cloud[i];
                if !(z.is_finite() && z >= 0.0) {
                    return Err(Error::Invalid(format!("cell ({i}, {}) has cost {z}", bit_depths[k])));
                }
                trans.push(t);
                cost.push(z);
                feasible.push(i == 0 || loss[i * cols + k] <= budget);
            }
        }
        Ok(DecisionGrid {
            n_layers: rows - 1,
            bit_depths,
            edge,
            cloud,
            trans,
            bytes,
            loss,
            cost,
            feasible,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn bit_depths(&self) -> &[u8] {
        &self.bit_depths
    }

    fn idx(&self, i: usize, k: usize) -> usize {
        i * self.bit_depths.len() + k
    }

    /// Cost `Z` of cell `(i, k)` where `k` indexes [`DecisionGrid::bit_depths`].
    pub fn cost(&self, i: usize, k: usize) -> f64 {
        self.cost[self.idx(i, k)]
    }

    pub fn is_feasible(&self, i: usize, k: usize) -> bool {
        self.feasible[self.idx(i, k)]
    }

    pub fn loss(&self, i: usize, k: usize) -> f64 {
        self.loss[self.idx(i, k)]
    }

    fn decision(&self, i: usize, k: usize, solver: SolverKind) -> PlanDecision {
        let j = self.idx(i, k);
        PlanDecision {
            split_layer: i,
            bit_depth: (i > 0).then_some(self.bit_depths[k]),
            edge_s: self.edge[i],
            trans_s: self.trans[j],
            cloud_s: self.cloud[i],
            total_s: self.cost[j],
            predicted_accuracy_loss: self.loss[j],
            predicted_bytes: self.bytes[j],
            solver,
        }
    }
}

pub fn build_grid(
    model: &ModelProfile,
    latency: &LatencyModel,
    tables: &LookupTables,
    bandwidth: f64,
    budget: f64,
) -> Result<DecisionGrid> {
    build_grid_with_upload(model, latency, tables, bandwidth, budget, UploadKind::Encoded)
}

pub fn build_grid_with_upload(
    model: &ModelProfile,
    latency: &LatencyModel,
    tables: &LookupTables,
    bandwidth: f64,
    budget: f64,
    upload: UploadKind,
) -> Result<DecisionGrid> {
    let n = model.n_layers();
    if latency.n_layers() != n || tables.n_layers() != n {
        return Err(Error::Dimension(format!(
            "model N={n}, latency N={}, tables N={}",
            latency.n_layers(),
            tables.n_layers()
        )));
    }
    if budget.is_nan() {
        return Err(Error::Invalid("accuracy budget is NaN".into()));
    }
    let cols = tables.bit_depths.len();
    let upload_bytes = tables.upload_sizes().get(upload) as f64;
    let mut bytes = vec![upload_bytes; cols];
    let mut loss = vec![0.0; cols];
    for i in 1..=n {
        bytes.extend_from_slice(&tables.expected_size[i - 1]);
        loss.extend_from_slice(&tables.accuracy_loss[i - 1]);
    }
    DecisionGrid::from_terms(
        tables.bit_depths.clone(),
        latency.edge_prefix().to_vec(),
        latency.cloud_suffix().to_vec(),
        bytes,
        loss,
        bandwidth,
        budget,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    #[default]
    Exhaustive,
    BranchAndBound,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Exhaustive => "exhaustive",
            SolverKind::BranchAndBound => "bnb",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(SolverKind::Exhaustive),
            "bnb" => Ok(SolverKind::BranchAndBound),
            other => Err(Error::Invalid(format!("unknown solver {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanDecision {
    /// `0` means upload the input and run everything in the cloud.
    pub split_layer: usize,
    /// `None` for the all-cloud upload.
    pub bit_depth: Option<u8>,
    pub edge_s: f64,
    pub trans_s: f64,
    pub cloud_s: f64,
    pub total_s: f64,
    pub predicted_accuracy_loss: f64,
    pub predicted_bytes: f64,
    pub solver: SolverKind,
}

impl PlanDecision {
    pub fn same_cell(&self, other: &PlanDecision) -> bool {
        self.split_layer == other.split_layer && self.bit_depth == other.bit_depth
    }
}

impl fmt::Display for PlanDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits = self
            .bit_depth
            .map_or_else(|| "-".to_string(), |c| c.to_string());
        write!(
            f,
            "split={} bits={} edge={:.3}ms trans={:.3}ms cloud={:.3}ms total={:.3}ms loss={:.4}",
            self.split_layer,
            bits,
            self.edge_s * 1e3,
            self.trans_s * 1e3,
            self.cloud_s * 1e3,
            self.total_s * 1e3,
            self.predicted_accuracy_loss
        )
    }
}

/// True when `(ci, i, k)` should replace `(cb, bi, bk)` as the incumbent.
fn preferred(ci: f64, i: usize, k: usize, cb: f64, bi: usize, bk: usize) -> bool {
    match ci.partial_cmp(&cb) {
        Some(Ordering::Less) => true,
        Some(Ordering::Equal) => (i, k) > (bi, bk),
        _ => false,
    }
}

/// Reference solver: scan every feasible cell.
pub fn solve(grid: &DecisionGrid) -> Result<PlanDecision> {
    let mut best: Option<(usize, usize)> = None;
    for i in 0..=grid.n_layers {
        for k in 0..grid.bit_depths.len() {
            if !grid.is_feasible(i, k) {
                continue;
            }
            let take = match best {
                None => true,
                Some((bi, bk)) => preferred(grid.cost(i, k), i, k, grid.cost(bi, bk), bi, bk),
            };
            if take {
                best = Some((i, k));
            }
        }
    }
    let (i, k) = best.ok_or(Error::Infeasible)?;
    Ok(grid.decision(i, k, SolverKind::Exhaustive))
}

/// Branch and bound over split layers. Each row is bounded by its cost with
/// the accuracy constraint dropped; rows are visited in bound order and the
/// search stops once the bound exceeds the incumbent.
pub fn solve_branch_and_bound(grid: &DecisionGrid) -> Result<PlanDecision> {
    let cols = grid.bit_depths.len();
    let mut rows: Vec<(f64, usize)> = (0..=grid.n_layers)
        .map(|i| {
            let min_trans = grid.trans[grid.idx(i, 0)..grid.idx(i, 0) + cols]
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            (grid.edge[i] + min_trans + grid.cloud[i], i)
        })
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));

    let mut best: Option<(usize, usize)> = None;
    for (bound, i) in rows {
        if let Some((bi, bk)) = best {
            if bound > grid.cost(bi, bk) {
                break;
            }
        }
        for k in 0..cols {
            if !grid.is_feasible(i, k) {
                continue;
            }
            let take = match best {
                None => true,
                Some((bi, bk)) => preferred(grid.cost(i, k), i, k, grid.cost(bi, bk), bi, bk),
            };
            if take {
                best = Some((i, k));
            }
        }
    }
    let (i, k) = best.ok_or(Error::Infeasible)?;
    Ok(grid.decision(i, k, SolverKind::BranchAndBound))
}

pub fn solve_with(grid: &DecisionGrid, solver: SolverKind) -> Result<PlanDecision> {
    match solver {
        SolverKind::Exhaustive => solve(grid),
        SolverKind::BranchAndBound => solve_branch_and_bound(grid),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplanOutcome {
    Changed { decision: PlanDecision, epoch: u64 },
    Unchanged,
}

/// Re-plans on bandwidth changes and numbers each distinct decision with a
/// plan epoch.
#[derive(Debug, Clone)]
pub struct ReplanController {
    model: ModelProfile,
    latency: LatencyModel,
    tables: LookupTables,
    budget: f64,
    upload: UploadKind,
    solver: SolverKind,
    current: Option<PlanDecision>,
    epoch: u64,
}

impl ReplanController {
    pub fn new(model: ModelProfile, latency: LatencyModel, tables: LookupTables, budget: f64) -> Self {
        ReplanController {
            model,
            latency,
            tables,
            budget,
            upload: UploadKind::Encoded,
            solver: SolverKind::Exhaustive,
            current: None,
            epoch: 0,
        }
    }

    pub fn with_upload(mut self, upload: UploadKind) -> Self {
        self.upload = upload;
        self
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = solver;
        self
    }

    pub fn model(&self) -> &ModelProfile {
        &self.model
    }

    pub fn latency(&self) -> &LatencyModel {
        &self.latency
    }

    pub fn tables(&self) -> &LookupTables {
        &self.tables
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn current(&self) -> Option<&PlanDecision> {
        self.current.as_ref()
    }

    pub fn grid(&self, bandwidth: f64) -> Result<DecisionGrid> {
        build_grid_with_upload(
            &self.model,
            &self.latency,
            &self.tables,
            bandwidth,
            self.budget,
            self.upload,
        )
    }

    pub fn replan(&mut self, bandwidth: f64) -> Result<ReplanOutcome> {
        if !(bandwidth > 0.0) {
            return Err(Error::NonPositiveBandwidth(bandwidth));
        }
        let decision = solve_with(&self.grid(bandwidth)?, self.solver)?;
        match &self.current {
            Some(cur) if cur.same_cell(&decision) => {
                // Same cell; refresh the predicted breakdown only.
                self.current = Some(decision);
                Ok(ReplanOutcome::Unchanged)
            }
            _ => {
                self.epoch += 1;
                self.current = Some(decision.clone());
                Ok(ReplanOutcome::Changed {
                    decision,
                    epoch: self.epoch,
                })
            }
        }
    }

    /// Takes over a decision agreed elsewhere if its epoch is newer.
    pub fn adopt(&mut self, decision: PlanDecision, epoch: u64) -> bool {
        if epoch > self.epoch {
            self.epoch = epoch;
            self.current = Some(decision);
            true
        } else {
            false
        }
    }
}

/// A decision tagged with its plan epoch, exchanged as `key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRecord {
    pub epoch: u64,
    pub decision: PlanDecision,
}

impl PlanRecord {
    pub fn to_text(&self) -> String {
        let d = &self.decision;
        let bits = d.bit_depth.map_or_else(|| "none".to_string(), |c| c.to_string());
        format!(
            "epoch={}\nsplit_layer={}\nbit_depth={}\nedge_s={}\ntrans_s={}\ncloud_s={}\ntotal_s={}\naccuracy_loss={}\nbytes={}\nsolver={}\n",
            self.epoch,
            d.split_layer,
            bits,
            d.edge_s,
            d.trans_s,
            d.cloud_s,
            d.total_s,
            d.predicted_accuracy_loss,
            d.predicted_bytes,
            d.solver.as_str()
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let fields = parse_kv(text);
        let get = |key: &str| -> Result<&str> {
            fields
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::parse("plan record", format!("missing field `{key}`")))
        };
        let num = |key: &str| -> Result<f64> {
            get(key)?
                .parse()
                .map_err(|e| Error::parse("plan record", format!("field `{key}`: {e}")))
        };
        let int = |key: &str| -> Result<u64> {
            get(key)?
                .parse()
                .map_err(|e| Error::parse("plan record", format!("field `{key}`: {e}")))
        };
        let bit_depth = match get("bit_depth")? {
            "none" => None,
            v => Some(
                v.parse()
                    .map_err(|e| Error::parse("plan record", format!("field `bit_depth`: {e}")))?,
            ),
        };
        Ok(PlanRecord {
            epoch: int("epoch")?,
            decision: PlanDecision {
                split_layer: int("split_layer")? as usize,
                bit_depth,
                edge_s: num("edge_s")?,
                trans_s: num("trans_s")?,
                cloud_s: num("cloud_s")?,
                total_s: num("total_s")?,
                predicted_accuracy_loss: num("accuracy_loss")?,
                predicted_bytes: num("bytes")?,
                solver: get("solver")?.parse()?,
            },
        })
    }
}

/// Splits `key=value` lines, skipping blanks.
pub(crate) fn parse_kv(text: &str) -> Vec<(&str, &str)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect()
}
