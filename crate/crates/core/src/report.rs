//! Serializable report documents. Every report embeds the manifest of the
//! run that produced it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::attack::{AttackResiduals, AttackSolution, Certification, RestartRecord};
use crate::defense::{DefensePolicy, PolicyKind, Verification};
use crate::model::{FeasibilityMatrices, RowLabel};
use crate::numeric::NumericPolicy;

pub const ATTACK_SCHEMA: &str = "dcattack.attack/1";
pub const DEFENSE_SCHEMA: &str = "dcattack.defense/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub case_paths: Vec<String>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub numeric: NumericPolicy,
    /// Echo of every option that affects the result.
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, case_paths: Vec<String>, seed: u64, numeric: NumericPolicy, config: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            case_paths,
            seed,
            threads: None,
            numeric,
            config,
            outputs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusDelta {
    pub bus: u32,
    pub pu: f64,
    pub percent_of_load: f64,
}

pub fn delta_by_bus(mats: &FeasibilityMatrices, delta: &[f64]) -> Vec<BusDelta> {
    let total = mats.total_load();
    mats.delta_bus_ids
        .iter()
        .zip(delta)
        .map(|(&bus, &pu)| BusDelta { bus, pu, percent_of_load: 100.0 * pu / total })
        .collect()
}

/// `bus,delta_pu,percent_of_load` rows.
pub fn delta_csv(rows: &[BusDelta]) -> String {
    let mut out = String::from("bus,delta_pu,percent_of_load\n");
    for r in rows {
        out.push_str(&format!("{},{:.12e},{:.9}\n", r.bus, r.pu, r.percent_of_load));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackReport {
    pub schema: String,
    pub manifest: RunManifest,
    pub case: String,
    pub norm_sq: f64,
    pub objective: f64,
    pub eps: f64,
    pub converged: bool,
    pub certified: bool,
    pub certification: Certification,
    pub residuals: AttackResiduals,
    pub delta: Vec<BusDelta>,
    pub fixed_dispatch_lb: f64,
    pub restarts: Vec<RestartRecord>,
    pub notes: Vec<String>,
}

impl AttackReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        manifest: RunManifest,
        case: &str,
        mats: &FeasibilityMatrices,
        sol: &AttackSolution,
        certification: Certification,
        fixed_dispatch_lb: f64,
        restarts: Vec<RestartRecord>,
        notes: Vec<String>,
    ) -> Self {
        Self {
            schema: ATTACK_SCHEMA.into(),
            manifest,
            case: case.into(),
            norm_sq: sol.norm_sq,
            objective: sol.objective,
            eps: sol.eps_used,
            converged: sol.converged,
            certified: sol.certified && certification.is_certified(),
            certification,
            residuals: sol.residuals,
            delta: delta_by_bus(mats, &sol.delta),
            fixed_dispatch_lb,
            restarts,
            notes,
        }
    }
}

/// Dense matrix with labeled rows and columns, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub data: Vec<Vec<f64>>,
}

impl LabeledMatrix {
    pub fn new(m: &DMatrix<f64>, rows: Vec<String>, cols: Vec<String>) -> Self {
        let data = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        Self { rows, cols, data }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseReport {
    pub schema: String,
    pub manifest: RunManifest,
    pub case: String,
    pub kind: PolicyKind,
    pub t: f64,
    pub t_init: f64,
    pub binding_row: Option<String>,
    pub stalled: bool,
    pub iterations: usize,
    /// Base dispatch per reduced generator column.
    pub p0: Vec<(String, f64)>,
    pub g: LabeledMatrix,
    pub verification: Verification,
    pub notes: Vec<String>,
}

fn gen_labels(mats: &FeasibilityMatrices) -> Vec<String> {
    mats.gen_columns.iter().map(|g| format!("gen{g}")).collect()
}

fn bus_labels(mats: &FeasibilityMatrices) -> Vec<String> {
    mats.delta_bus_ids.iter().map(|b| format!("bus{b}")).collect()
}

impl DefenseReport {
    pub fn new(
        manifest: RunManifest,
        case: &str,
        mats: &FeasibilityMatrices,
        policy: &DefensePolicy,
        t_init: f64,
        verification: Verification,
        notes: Vec<String>,
    ) -> Self {
        Self {
            schema: DEFENSE_SCHEMA.into(),
            manifest,
            case: case.into(),
            kind: policy.kind,
            t: policy.t,
            t_init,
            binding_row: policy.binding_row.map(|i| mats.row_labels[i].to_string()),
            stalled: policy.stalled,
            iterations: policy.iterations,
            p0: gen_labels(mats).into_iter().zip(policy.p0.iter().copied()).collect(),
            g: LabeledMatrix::new(&policy.g, gen_labels(mats), bus_labels(mats)),
            verification,
            notes,
        }
    }
}

/// `A`, `B`, `c` with labels, for `--dump-matrices`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixDump {
    pub row_labels: Vec<RowLabel>,
    pub a: LabeledMatrix,
    pub b: LabeledMatrix,
    pub c: Vec<f64>,
    pub slack_gen: usize,
}

impl MatrixDump {
    pub fn new(mats: &FeasibilityMatrices) -> Self {
        let rows: Vec<String> = mats.row_labels.iter().map(|l| l.to_string()).collect();
        Self {
            row_labels: mats.row_labels.clone(),
            a: LabeledMatrix::new(&mats.a, rows.clone(), gen_labels(mats)),
            b: LabeledMatrix::new(&mats.b, rows, bus_labels(mats)),
            c: DVector::as_slice(&mats.c).to_vec(),
            slack_gen: mats.slack_gen,
        }
    }
}
