//! Drives the defense lower bound and the attack upper bound together.
//!
//! Both sides are solved separately and compared after each round. A
//! common value certifies global optimality of both.

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{fixed_dispatch_lb, multistart_attack, AttackConfig, AttackError, AttackSolution, FixedBound};
use crate::case::NetworkCase;
use crate::defense::{binding_delta, defense_local, verify_policy, warm_start_defense, DefenseOptions, DefensePolicy, Verification};
use crate::error::{Error, Result};
use crate::model::{build_model, nominal_dispatch, FeasibilityMatrices};
use crate::numeric::NumericPolicy;
use crate::report::RunManifest;

pub const REPORT_SCHEMA: &str = "dcattack.bounds/1";

/// Absolute slack allowed in `lb <= ub`.
pub const ORDER_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqueezeConfig {
    /// Wall-clock budget in seconds, checked between rounds.
    pub budget: f64,
    pub match_threshold: f64,
    pub attack: AttackConfig,
    pub defense: DefenseOptions,
    pub verify_samples: usize,
    /// Attack rounds without improvement before giving up.
    pub stall_rounds: usize,
    pub max_rounds: usize,
    pub slack_gen: Option<usize>,
    pub numeric: NumericPolicy,
}

impl Default for SqueezeConfig {
    fn default() -> Self {
        Self {
            budget: 600.0,
            match_threshold: 0.01,
            attack: AttackConfig::default(),
            defense: DefenseOptions::default(),
            verify_samples: 1000,
            stall_rounds: 3,
            max_rounds: 20,
            slack_gen: None,
            numeric: NumericPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// Seconds since the start of the run.
    pub time: f64,
    pub round: usize,
    pub side: Side,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Matched,
    Budget,
    Stalled,
    MaxRounds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsReport {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<RunManifest>,
    pub case: String,
    /// Best verified defense radius.
    pub lb: f64,
    /// Best certified attack size; absent when no attack was certified.
    pub ub: Option<f64>,
    pub gap: Option<f64>,
    pub matched: bool,
    pub match_time: Option<f64>,
    pub stop_reason: StopReason,
    pub rounds: usize,
    pub elapsed: f64,
    pub fixed_dispatch_lb: f64,
    pub trace: Vec<TracePoint>,
    pub attack: Option<AttackSolution>,
    pub defense: DefensePolicy,
    pub verification: Verification,
    pub notes: Vec<String>,
}

impl BoundsReport {
    /// `lb <= ub + tol` holds at every trace point.
    pub fn ordering_holds(&self) -> bool {
        let mut lb = f64::NEG_INFINITY;
        let mut ub = f64::INFINITY;
        for p in &self.trace {
            match p.side {
                Side::Lower => lb = lb.max(p.value),
                Side::Upper => ub = ub.min(p.value),
            }
            if lb > ub + ORDER_TOL {
                return false;
            }
        }
        true
    }

    /// Writes `time,round,side,value` rows.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,round,side,value")?;
        for p in &self.trace {
            let side = match p.side {
                Side::Lower => "lower",
                Side::Upper => "upper",
            };
            writeln!(w, "{:.6},{},{},{:.12e}", p.time, p.round, side, p.value)?;
        }
        Ok(())
    }
}

pub fn gap(lb: f64, ub: f64) -> f64 {
    (ub - lb) / ub.abs().max(1e-12)
}

/// Hints exchanged between the two sides.
#[derive(Debug, Clone, Default)]
pub struct Hints {
    /// Attack starting directions.
    pub attack_starts: Vec<DVector<f64>>,
    /// Directions along which the defense is probed during verification.
    pub defense_probes: Vec<DVector<f64>>,
}

/// Attack starts along the defense's binding direction (scaled just past
/// `√t`), falling back to the fixed-dispatch direction; defense probes
/// along the best attack.
pub fn cross_feed(
    mats: &FeasibilityMatrices,
    attack_best: Option<&AttackSolution>,
    defense_best: Option<&DefensePolicy>,
    fixed: &FixedBound,
) -> Hints {
    let mut hints = Hints::default();
    let binding = defense_best.and_then(|d| binding_delta(mats, d).map(|v| (v, d.t)));
    match binding {
        Some((dir, t)) if dir.norm() > 0.0 && t > 0.0 => hints.attack_starts.push(dir.normalize() * (t.sqrt() * (1.0 + 1e-3))),
        _ => {
            let d = DVector::from_vec(fixed.delta.clone());
            if d.norm() > 0.0 {
                hints.attack_starts.push(d);
            }
        }
    }
    if let Some(a) = attack_best {
        let d = a.delta_vec();
        if d.norm() > 0.0 {
            hints.defense_probes.push(d.normalize());
        }
    }
    hints
}

/// Per-round attack seed, independent of scheduling.
pub fn round_seed(seed: u64, round: usize) -> u64 {
    if round == 0 {
        return seed;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 << 32 | round as u64);
    rng.next_u64()
}

struct Tracker {
    start: Instant,
    trace: Vec<TracePoint>,
    lb: f64,
    ub: Option<f64>,
    match_time: Option<f64>,
    threshold: f64,
}

impl Tracker {
    fn push(&mut self, round: usize, side: Side, value: f64) -> Result<()> {
        let time = self.start.elapsed().as_secs_f64();
        match side {
            Side::Lower => self.lb = value,
            Side::Upper => self.ub = Some(value),
        }
        self.trace.push(TracePoint { time, round, side, value });
        if let Some(ub) = self.ub {
            if self.lb > ub + ORDER_TOL {
                return Err(Error::BoundOrdering { lb: self.lb, ub });
            }
            if self.match_time.is_none() && gap(self.lb, ub) < self.threshold {
                self.match_time = Some(time);
            }
        }
        Ok(())
    }

    fn matched(&self) -> bool {
        self.ub.is_some_and(|ub| gap(self.lb, ub) < self.threshold)
    }
}

pub fn squeeze_run(case: &NetworkCase, cfg: &SqueezeConfig) -> Result<BoundsReport> {
    let mats = build_model(case, cfg.slack_gen)?;
    let mut report = squeeze_model(&mats, &case.name, cfg)?;
    report.notes.extend(case.notes.iter().cloned());
    Ok(report)
}

pub fn squeeze_model(mats: &FeasibilityMatrices, name: &str, cfg: &SqueezeConfig) -> Result<BoundsReport> {
    let pol = &cfg.numeric;
    let mut tr = Tracker { start: Instant::now(), trace: Vec::new(), lb: 0.0, ub: None, match_time: None, threshold: cfg.match_threshold };
    let mut notes = Vec::new();

    let p_nom = nominal_dispatch(mats, pol)?;
    let fixed = fixed_dispatch_lb(mats, &p_nom, pol)?;

    let mut defense = warm_start_defense(mats, pol)?;
    let mut verification = verify_policy(mats, &defense, cfg.verify_samples, cfg.attack.seed, &[], pol)?;
    defense.verified_samples = verification.passed;
    tr.push(0, Side::Lower, defense.t)?;

    let mut attack: Option<AttackSolution> = None;
    let mut stalled_rounds = 0;
    let mut defense_improving = true;
    let mut round = 0;
    let stop_reason = loop {
        // attack round
        let hints = cross_feed(mats, attack.as_ref(), Some(&defense), &fixed);
        let acfg = AttackConfig { seed: round_seed(cfg.attack.seed, round), ..cfg.attack.clone() };
        match multistart_attack(mats, &acfg, &hints.attack_starts, pol) {
            Ok(run) => {
                let better = attack.as_ref().is_none_or(|a| run.best.norm_sq < a.norm_sq * (1.0 - 1e-9));
                if better {
                    tr.push(round, Side::Upper, run.best.norm_sq)?;
                    attack = Some(run.best);
                    stalled_rounds = 0;
                } else {
                    stalled_rounds += 1;
                }
            }
            Err(AttackError::NoCertified(why)) => {
                notes.push(format!("round {round}: no certified attack ({})", why.join("; ")));
                stalled_rounds += 1;
            }
            Err(e) => return Err(e.into()),
        }

        // defense round; the barrier solve is global, so repeat only while it still moves
        if defense_improving {
            let hints = cross_feed(mats, attack.as_ref(), Some(&defense), &fixed);
            let next = defense_local(mats, &defense, &cfg.defense, pol)?;
            if next.t > defense.t {
                let ver = verify_policy(mats, &next, cfg.verify_samples, cfg.attack.seed ^ round as u64, &hints.defense_probes, pol)?;
                defense = DefensePolicy { verified_samples: ver.passed, ..next };
                verification = ver;
                tr.push(round, Side::Lower, defense.t)?;
            } else {
                defense_improving = false;
            }
        }

        round += 1;
        if tr.matched() {
            break StopReason::Matched;
        }
        if tr.start.elapsed().as_secs_f64() >= cfg.budget {
            break StopReason::Budget;
        }
        if stalled_rounds >= cfg.stall_rounds {
            break StopReason::Stalled;
        }
        if round >= cfg.max_rounds {
            break StopReason::MaxRounds;
        }
    };

    let ub = attack.as_ref().map(|a| a.norm_sq);
    Ok(BoundsReport {
        schema: REPORT_SCHEMA.into(),
        manifest: None,
        case: name.into(),
        lb: defense.t,
        ub,
        gap: ub.map(|u| gap(defense.t, u)),
        matched: tr.matched(),
        match_time: tr.match_time,
        stop_reason,
        rounds: round,
        elapsed: tr.start.elapsed().as_secs_f64(),
        fixed_dispatch_lb: fixed.norm_sq,
        trace: tr.trace,
        attack,
        defense,
        verification,
        notes,
    })
}
