//! The reasoning backend contract and the calibrated scripted oracle.
//!
//! A backend produces the initial response for a scenario and refines it
//! when handed feedback. The scripted oracle injects one of three error
//! archetypes per goal kind (off-by-one placement, dropped constraint,
//! visible-only count) with a calibrated probability, then repairs the
//! error with per-round correction rates once the feedback signal names the
//! matching discrepancy category. Ground truth is read only inside the
//! oracle; remote backends see nothing but the scenario view, the feedback,
//! and encoded context.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::encoders::FeatureSeq;
use crate::engine::{DiscrepancyCategory, FeedbackSignal};
use crate::error::{BackendError, DomainError};
use crate::fusion::FusedFeatures;
use crate::mapsim::{
    identify_match_set, parse_observation, render, true_count, Goal, GoalKind, MoveAction,
    Observation, Scenario,
};
use crate::rng::SplitMix64;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Answer payload; the variant must match the scenario's goal kind.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", content = "value", rename_all = "lowercase"))]
pub enum ResponseBody {
    Plan(Vec<MoveAction>),
    Ids(BTreeSet<u32>),
    Count(u32),
}

/// A backend's answer plus a short free-text rationale.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Response {
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub body: ResponseBody,
    pub rationale: String,
}

impl Response {
    pub fn kind(&self) -> GoalKind {
        match self.body {
            ResponseBody::Plan(_) => GoalKind::Place,
            ResponseBody::Ids(_) => GoalKind::IdentifyAll,
            ResponseBody::Count(_) => GoalKind::Count,
        }
    }

    /// One-line summary used in context history entries.
    pub fn summary(&self) -> String {
        match &self.body {
            ResponseBody::Plan(moves) => {
                let parts: Vec<String> = moves
                    .iter()
                    .map(|m| format!("move {} to ({}, {})", m.object_id, m.to.0, m.to.1))
                    .collect();
                format!("plan {}", parts.join(", "))
            }
            ResponseBody::Ids(ids) => {
                let parts: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
                format!("ids [{}]", parts.join(", "))
            }
            ResponseBody::Count(n) => format!("count {n}"),
        }
    }
}

/// What a backend is allowed to see of a scenario.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioView<'a> {
    pub instruction: &'a str,
    pub observation: &'a Observation,
}

/// The pluggable reasoning contract. Implementations are episode-scoped:
/// one value serves one episode and may keep per-episode state.
pub trait Backend {
    fn generate_initial(
        &mut self,
        view: ScenarioView<'_>,
        fused: &FusedFeatures,
        rng: &mut SplitMix64,
    ) -> Result<Response, BackendError>;

    fn refine_response(
        &mut self,
        prev: &Response,
        feedback: &FeedbackSignal,
        context_features: &FeatureSeq,
        round: usize,
        rng: &mut SplitMix64,
    ) -> Result<Response, BackendError>;
}

/// Scripted oracle configuration.
///
/// `correction_rates[k]` is the probability of repairing a live error at
/// refinement round `k + 2`; rounds past the end reuse the last rate. The
/// `context_factor` multiplier models degraded context (1.0 for the full
/// loop). The Place error template offsets the correct destination by
/// `place_error_offset` (one row up by default).
#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub p_initial_error: f64,
    pub correction_rates: Vec<f64>,
    pub context_factor: f64,
    pub place_error_offset: (i32, i32),
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            p_initial_error: 0.0,
            correction_rates: Vec::new(),
            context_factor: 1.0,
            place_error_offset: (-1, 0),
        }
    }
}

impl OracleConfig {
    /// Correction rate applied at a refinement round (>= 2); rounds past
    /// the configured list reuse the last rate.
    pub fn rate_for_round(&self, round: usize) -> f64 {
        debug_assert!(round >= 2);
        let idx = round - 2;
        self.correction_rates
            .get(idx)
            .or(self.correction_rates.last())
            .copied()
            .unwrap_or(0.0)
    }
}

/// Backend selection for a run.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendKind {
    ScriptedOracle(OracleConfig),
    Remote { endpoint: String, timeout_secs: u64 },
}

/// Default timeout for remote backends.
pub const DEFAULT_REMOTE_TIMEOUT_SECS: u64 = 30;

/// Derives an oracle configuration from per-round cumulative accuracy
/// targets (percentages, strictly increasing inside (0, 100)).
///
/// The initial error probability is the first round's failure mass; each
/// later round's correction rate is the accuracy gain divided by the
/// failure mass remaining before that round.
pub fn calibrate_oracle(targets: &[f64]) -> Result<OracleConfig, DomainError> {
    if targets.is_empty() {
        return Err(DomainError::BadCalibration("no targets given".into()));
    }
    for (i, &t) in targets.iter().enumerate() {
        if !t.is_finite() || t <= 0.0 || t >= 100.0 {
            return Err(DomainError::BadCalibration(format!(
                "target {i} = {t} outside (0, 100)"
            )));
        }
        if i > 0 && t <= targets[i - 1] {
            return Err(DomainError::BadCalibration(format!(
                "targets must be strictly increasing, got {} after {}",
                t,
                targets[i - 1]
            )));
        }
    }
    let p_initial_error = 1.0 - targets[0] / 100.0;
    let correction_rates = targets
        .windows(2)
        .map(|w| (w[1] - w[0]) / (100.0 - w[0]))
        .collect();
    Ok(OracleConfig { p_initial_error, correction_rates, ..OracleConfig::default() })
}

/// A calibrated scripted stand-in for the reasoning model. Holds the full
/// scenario (ground truth) for exactly one episode.
#[derive(Debug, Clone)]
pub struct ScriptedOracle {
    config: OracleConfig,
    scenario: Scenario,
}

impl ScriptedOracle {
    pub fn new(config: OracleConfig, scenario: Scenario) -> Self {
        Self { config, scenario }
    }

    /// The goal-satisfying response computed from ground truth.
    pub fn correct_response(&self) -> Response {
        let scene = &self.scenario.scene;
        let body = match &self.scenario.goal {
            Goal::Place { subject_id, relation, reference_id } => {
                let reference = scene.object(*reference_id).expect("reference exists");
                let dest = relation
                    .target_cell(reference.pos)
                    .expect("generated goals keep the target in bounds");
                ResponseBody::Plan(alloc::vec![MoveAction {
                    object_id: *subject_id,
                    to: (dest.0 as i32, dest.1 as i32),
                }])
            }
            Goal::IdentifyAll { color, shape, material } => {
                ResponseBody::Ids(identify_match_set(scene, *color, *shape, *material))
            }
            Goal::Count { predicate } => ResponseBody::Count(true_count(scene, predicate)),
        };
        Response { body, rationale: "satisfies the instruction on the current scene".into() }
    }

    /// The goal kind's error-template response.
    fn erroneous_response(&self, rng: &mut SplitMix64) -> Response {
        let scene = &self.scenario.scene;
        match &self.scenario.goal {
            Goal::Place { subject_id, relation, reference_id } => {
                let reference = scene.object(*reference_id).expect("reference exists");
                let dest = relation
                    .target_cell(reference.pos)
                    .expect("generated goals keep the target in bounds");
                let off = self.config.place_error_offset;
                let to = (dest.0 as i32 + off.0, dest.1 as i32 + off.1);
                Response {
                    body: ResponseBody::Plan(alloc::vec![MoveAction {
                        object_id: *subject_id,
                        to,
                    }]),
                    rationale: "approximate placement near the reference".into(),
                }
            }
            Goal::IdentifyAll { .. } => {
                // Drop one of the conjunction's constraints.
                let constraints = self.scenario.goal.identify_constraints();
                let dropped = rng.next_below(constraints.len());
                let (mut color, mut shape, mut material) = (None, None, None);
                for (i, c) in constraints.iter().enumerate() {
                    if i == dropped {
                        continue;
                    }
                    match c {
                        crate::mapsim::AttributePredicate::Color(v) => color = Some(*v),
                        crate::mapsim::AttributePredicate::Shape(v) => shape = Some(*v),
                        crate::mapsim::AttributePredicate::Material(v) => material = Some(*v),
                    }
                }
                Response {
                    body: ResponseBody::Ids(identify_match_set(scene, color, shape, material)),
                    rationale: "matched the salient attribute".into(),
                }
            }
            Goal::Count { predicate } => {
                // Count only what the default viewpoint shows.
                let visible = parse_observation(&render(scene, 0))
                    .expect("render output is well-formed")
                    .iter()
                    .filter(|(attrs, _)| attrs.satisfies(predicate))
                    .count() as u32;
                Response {
                    body: ResponseBody::Count(visible),
                    rationale: "counted the objects in view".into(),
                }
            }
        }
    }

    /// The discrepancy category that flags this scenario's error template.
    fn matching_category(&self) -> DiscrepancyCategory {
        match self.scenario.goal.kind() {
            GoalKind::Place => DiscrepancyCategory::SpatialMisalignment,
            GoalKind::IdentifyAll => DiscrepancyCategory::ConstraintViolation,
            GoalKind::Count => DiscrepancyCategory::CountMismatch,
        }
    }
}

impl Backend for ScriptedOracle {
    fn generate_initial(
        &mut self,
        _view: ScenarioView<'_>,
        _fused: &FusedFeatures,
        rng: &mut SplitMix64,
    ) -> Result<Response, BackendError> {
        // The fused features are part of the contract but deliberately
        // unused here; the fusion kernel is verified on its own.
        if rng.chance(self.config.p_initial_error) {
            Ok(self.erroneous_response(rng))
        } else {
            Ok(self.correct_response())
        }
    }

    fn refine_response(
        &mut self,
        prev: &Response,
        feedback: &FeedbackSignal,
        _context_features: &FeatureSeq,
        round: usize,
        rng: &mut SplitMix64,
    ) -> Result<Response, BackendError> {
        if feedback.is_empty() {
            return Ok(prev.clone());
        }
        let correct = self.correct_response();
        // A passing response is never perturbed.
        if prev.body == correct.body {
            return Ok(prev.clone());
        }
        let rate = self.config.rate_for_round(round) * self.config.context_factor;
        if feedback.contains_category(self.matching_category()) && rng.chance(rate) {
            Ok(Response { rationale: "repaired after feedback".into(), ..correct })
        } else {
            Ok(prev.clone())
        }
    }
}
