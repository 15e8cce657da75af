//! The closed loop: context state, feedback parsing, confidence,
//! termination, and episode orchestration.
//!
//! Round 1 encodes the instruction, the viewpoint-0 observation, and the
//! initial context, fuses them, and asks the backend for a response. Place
//! plans are executed on the scene. The feedback parser then inspects a
//! fresh observation — rendered at viewpoint `min(round, 1)`, i.e. from the
//! slightly shifted camera that also reveals back-slot objects — and the
//! context is finalized with the parsed signal. Later rounds refine while
//! feedback stays nonempty, up to `t_max`.
//!
//! Context ordering: the feedback for round t is parsed against the
//! provisional context holding history through round t-1; the round-t entry
//! (response summary plus feedback categories) is appended afterwards. The
//! refinement at round t+1 therefore sees exactly the context that ends
//! with round t's outcome.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::backends::{Backend, Response, ResponseBody, ScenarioView};
use crate::encoders::{encode_context, encode_text, encode_visual, EncoderParams};
use crate::error::{BackendError, DomainError};
use crate::fusion::{fuse, AttentionParams};
use crate::mapsim::{
    apply_action, evaluate_goal, parse_observation, render, Attributes, Goal, GoalKind,
    Observation, Scenario, Scene, TaskOutcome,
};
use crate::rng::SplitMix64;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Discrepancy categories a feedback signal can carry, in emission order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "SCREAMING_SNAKE_CASE"))]
pub enum DiscrepancyCategory {
    SpatialMisalignment,
    ConstraintViolation,
    CountMismatch,
    MissingItem,
    ExtraneousItem,
}

impl DiscrepancyCategory {
    pub fn name(self) -> &'static str {
        match self {
            DiscrepancyCategory::SpatialMisalignment => "SPATIAL_MISALIGNMENT",
            DiscrepancyCategory::ConstraintViolation => "CONSTRAINT_VIOLATION",
            DiscrepancyCategory::CountMismatch => "COUNT_MISMATCH",
            DiscrepancyCategory::MissingItem => "MISSING_ITEM",
            DiscrepancyCategory::ExtraneousItem => "EXTRANEOUS_ITEM",
        }
    }
}

/// One detected discrepancy. Categories are unique within a signal; the
/// ids involved are kept for in-process consumers but excluded from the
/// wire and trace forms.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Discrepancy {
    pub category: DiscrepancyCategory,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub subject_ids: Vec<u32>,
    pub detail: String,
}

/// Ordered list of discrepancies; empty means no detected issue.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct FeedbackSignal {
    pub discrepancies: Vec<Discrepancy>,
}

impl FeedbackSignal {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.discrepancies.is_empty()
    }

    pub fn len(&self) -> usize {
        self.discrepancies.len()
    }

    pub fn contains_category(&self, category: DiscrepancyCategory) -> bool {
        self.discrepancies.iter().any(|d| d.category == category)
    }

    pub fn categories(&self) -> Vec<DiscrepancyCategory> {
        self.discrepancies.iter().map(|d| d.category).collect()
    }
}

/// One context history entry per completed round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryEntry {
    pub round: usize,
    pub response_summary: String,
    pub feedback_categories: Vec<DiscrepancyCategory>,
}

/// Evolving task record: the goal line plus per-round history. In the full
/// variant the history length equals the iteration counter; the
/// static-context variant freezes the history and counts iterations only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextState {
    pub goal_text: String,
    pub history: Vec<HistoryEntry>,
    pub iteration: usize,
}

impl ContextState {
    pub fn initial(goal_text: String) -> Self {
        Self { goal_text, history: Vec::new(), iteration: 0 }
    }

    /// Canonical serialization consumed by the context encoder and by
    /// remote backends: the goal line, then one line per history entry.
    pub fn canonical_text(&self) -> String {
        let mut text = self.goal_text.clone();
        for entry in &self.history {
            let categories = if entry.feedback_categories.is_empty() {
                String::from("none")
            } else {
                let names: Vec<&str> =
                    entry.feedback_categories.iter().map(|c| c.name()).collect();
                names.join(" ")
            };
            text.push_str(&format!(
                "\niter {}: response {}; feedback {}",
                entry.round, entry.response_summary, categories
            ));
        }
        text
    }
}

/// Engine ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoSelfCorrection,
    NoDynamicContext,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSelfCorrection => "no_self_correction",
            Variant::NoDynamicContext => "no_dynamic_context",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Variant::Full),
            "no_self_correction" => Some(Variant::NoSelfCorrection),
            "no_dynamic_context" => Some(Variant::NoDynamicContext),
            _ => None,
        }
    }
}

pub const DEFAULT_T_MAX: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantConfig {
    pub variant: Variant,
    pub t_max: usize,
}

impl VariantConfig {
    pub fn new(variant: Variant) -> Self {
        Self { variant, t_max: DEFAULT_T_MAX }
    }
}

/// Integrates a round into the context. The full (and single-pass) variants
/// append a history entry and advance the iteration counter; the
/// static-context variant advances the counter only.
pub fn update_context(
    prev: &ContextState,
    response: &Response,
    feedback: &FeedbackSignal,
    variant: Variant,
) -> ContextState {
    let mut next = prev.clone();
    next.iteration += 1;
    if variant != Variant::NoDynamicContext {
        next.history.push(HistoryEntry {
            round: prev.iteration + 1,
            response_summary: response.summary(),
            feedback_categories: feedback.categories(),
        });
    }
    next
}

/// Confidence that the instruction requirements are met: 1 / (1 + |S|).
pub fn compute_confidence(feedback: &FeedbackSignal) -> f64 {
    1.0 / (1.0 + feedback.len() as f64)
}

/// The goal plus the attribute grounding the parser needs to locate
/// instruction-named objects inside id-less observations. Derived from the
/// scenario (the instruction names the attributes; ids anchor them).
#[derive(Debug, Clone)]
pub struct GroundedGoal {
    pub goal: Goal,
    object_attrs: BTreeMap<u32, Attributes>,
}

impl GroundedGoal {
    pub fn new(scenario: &Scenario) -> Self {
        let object_attrs =
            scenario.scene.objects.iter().map(|o| (o.id, o.attributes())).collect();
        Self { goal: scenario.goal.clone(), object_attrs }
    }

    fn attrs_of(&self, id: u32) -> Option<Attributes> {
        self.object_attrs.get(&id).copied()
    }
}

fn kind_mismatch_signal(expected: GoalKind, got: GoalKind) -> FeedbackSignal {
    FeedbackSignal {
        discrepancies: alloc::vec![Discrepancy {
            category: DiscrepancyCategory::ConstraintViolation,
            subject_ids: Vec::new(),
            detail: format!(
                "response kind {} does not match the {} goal",
                got.name(),
                expected.name()
            ),
        }],
    }
}

/// Parses structured feedback for the previous response from a fresh
/// observation. Place goals compare the achieved subject position against
/// the goal relation; identification goals run the internal consistency
/// check of each answered id against the full conjunction; counting goals
/// recount from the observation. Empty signal iff no discrepancy found.
pub fn parse_feedback(
    prev_response: &Response,
    new_obs: &Observation,
    _ctx: &ContextState,
    instruction_goal: &GroundedGoal,
) -> Result<FeedbackSignal, DomainError> {
    let visible = parse_observation(new_obs)?;
    let goal = &instruction_goal.goal;

    match goal {
        Goal::Place { subject_id, relation, reference_id } => {
            if prev_response.kind() != GoalKind::Place {
                return Ok(kind_mismatch_signal(GoalKind::Place, prev_response.kind()));
            }
            let find = |id: u32| {
                instruction_goal
                    .attrs_of(id)
                    .and_then(|sig| visible.iter().find(|(a, _)| *a == sig).map(|(_, p)| *p))
            };
            let subject_pos = find(*subject_id);
            let reference_pos = find(*reference_id);
            let discrepancy = |detail: String| {
                Ok(FeedbackSignal {
                    discrepancies: alloc::vec![Discrepancy {
                        category: DiscrepancyCategory::SpatialMisalignment,
                        subject_ids: alloc::vec![*subject_id],
                        detail,
                    }],
                })
            };
            match (subject_pos, reference_pos) {
                (None, _) => discrepancy(format!(
                    "subject not visible from viewpoint {}",
                    new_obs.viewpoint
                )),
                (_, None) => discrepancy(format!(
                    "reference not visible from viewpoint {}",
                    new_obs.viewpoint
                )),
                (Some(s), Some(r)) if relation.satisfied(s, r) => Ok(FeedbackSignal::empty()),
                (Some(s), Some(r)) => {
                    let detail = match relation.target_cell(r) {
                        Some(t) => format!(
                            "subject at ({}, {}) but the cell {} the reference is ({}, {})",
                            s.0,
                            s.1,
                            relation.phrase(),
                            t.0,
                            t.1
                        ),
                        None => format!(
                            "no cell lies {} the reference at ({}, {})",
                            relation.phrase(),
                            r.0,
                            r.1
                        ),
                    };
                    discrepancy(detail)
                }
            }
        }
        Goal::IdentifyAll { color, shape, material } => {
            let ResponseBody::Ids(answered) = &prev_response.body else {
                return Ok(kind_mismatch_signal(GoalKind::IdentifyAll, prev_response.kind()));
            };
            let constraints = goal.identify_constraints();
            let mut violating: Vec<(u32, &'static str)> = Vec::new();
            let mut extraneous: Vec<u32> = Vec::new();
            for &id in answered {
                match instruction_goal.attrs_of(id) {
                    None => extraneous.push(id),
                    Some(attrs) => {
                        if !visible.iter().any(|(a, _)| *a == attrs) {
                            extraneous.push(id);
                        } else if let Some(failed) =
                            constraints.iter().find(|c| !attrs.satisfies(c))
                        {
                            violating.push((id, failed.adjective()));
                        }
                    }
                }
            }
            let mut missing: Vec<u32> = Vec::new();
            for (&id, attrs) in &instruction_goal.object_attrs {
                if attrs.matches_conjunction(*color, *shape, *material)
                    && visible.iter().any(|(a, _)| a == attrs)
                    && !answered.contains(&id)
                {
                    missing.push(id);
                }
            }

            let mut discrepancies = Vec::new();
            if !violating.is_empty() {
                let clauses: Vec<String> = violating
                    .iter()
                    .map(|(id, adj)| format!("object {id} is not {adj}"))
                    .collect();
                discrepancies.push(Discrepancy {
                    category: DiscrepancyCategory::ConstraintViolation,
                    subject_ids: violating.iter().map(|(id, _)| *id).collect(),
                    detail: clauses.join("; "),
                });
            }
            if !missing.is_empty() {
                discrepancies.push(Discrepancy {
                    category: DiscrepancyCategory::MissingItem,
                    subject_ids: missing.clone(),
                    detail: format!("objects {missing:?} match the conjunction but were not answered"),
                });
            }
            if !extraneous.is_empty() {
                discrepancies.push(Discrepancy {
                    category: DiscrepancyCategory::ExtraneousItem,
                    subject_ids: extraneous.clone(),
                    detail: format!("answered ids {extraneous:?} are not visible in the scene"),
                });
            }
            Ok(FeedbackSignal { discrepancies })
        }
        Goal::Count { predicate } => {
            let ResponseBody::Count(answered) = &prev_response.body else {
                return Ok(kind_mismatch_signal(GoalKind::Count, prev_response.kind()));
            };
            let recount =
                visible.iter().filter(|(a, _)| a.satisfies(predicate)).count() as u32;
            if recount == *answered {
                Ok(FeedbackSignal::empty())
            } else {
                Ok(FeedbackSignal {
                    discrepancies: alloc::vec![Discrepancy {
                        category: DiscrepancyCategory::CountMismatch,
                        subject_ids: Vec::new(),
                        detail: format!(
                            "recount from viewpoint {} finds {}, answer says {}",
                            new_obs.viewpoint, recount, answered
                        ),
                    }],
                })
            }
        }
    }
}

/// Per-round record of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub response: Response,
    pub feedback: FeedbackSignal,
    pub confidence: f64,
}

/// Observable history of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub scenario_seed: u64,
    pub variant: Variant,
    pub rounds: Vec<RoundRecord>,
    pub outcome: TaskOutcome,
    pub rounds_used: usize,
}

/// Shared read-only parameters for running episodes.
#[derive(Debug, Clone)]
pub struct Engine {
    pub encoder_params: EncoderParams,
    pub attention_params: AttentionParams,
}

impl Engine {
    pub fn new() -> Self {
        Self {
            encoder_params: EncoderParams::default(),
            attention_params: AttentionParams::default(),
        }
    }
}

impl Default for Engine {
    fn default() -> Self {
        Self::new()
    }
}

/// Viewpoint of the observation parsed at the end of a round. Round t's
/// feedback integrates the observation that informs round t+1, so from the
/// first feedback on the camera is at the shifted viewpoint 1.
fn parse_viewpoint(round: usize) -> u32 {
    round.min(1) as u32
}

fn act_if_place(scene: &mut Scene, goal: &Goal, response: &Response) {
    if goal.kind() != GoalKind::Place {
        return;
    }
    if let ResponseBody::Plan(moves) = &response.body {
        for mv in moves {
            // Invalid moves are rejected by the environment and simply
            // leave the scene unchanged; the feedback parser reports the
            // resulting misalignment.
            if let Ok(next) = apply_action(scene, mv) {
                *scene = next;
            }
        }
    }
}

impl Engine {
    /// Runs one closed-loop episode. Backend errors propagate to the
    /// caller; everything else (including answers of the wrong kind) is
    /// absorbed into the trace as a failed outcome.
    pub fn run_episode(
        &self,
        scenario: &Scenario,
        backend: &mut dyn Backend,
        config: &VariantConfig,
        rng: &mut SplitMix64,
    ) -> Result<EpisodeTrace, BackendError> {
        assert!(config.t_max >= 1, "t_max must be at least 1");
        let grounded = GroundedGoal::new(scenario);
        let mut scene = scenario.scene.clone();

        let initial_obs = render(&scene, 0);
        let f_t = encode_text(&scenario.instruction, &self.encoder_params);
        let f_v = encode_visual(&initial_obs, &self.encoder_params)
            .expect("rendered observations are well-formed");
        let mut ctx = scenario.initial_context.clone();
        let f_c = encode_context(&ctx, &self.encoder_params);
        let fused = fuse(&f_t, &f_v, &f_c, &self.attention_params)
            .expect("the visual global token guarantees a nonempty fusion input");

        let view =
            ScenarioView { instruction: &scenario.instruction, observation: &initial_obs };
        let mut response = backend.generate_initial(view, &fused, rng)?;

        let mut rounds: Vec<RoundRecord> = Vec::new();
        let mut round = 1;
        loop {
            act_if_place(&mut scene, &grounded.goal, &response);
            let obs = render(&scene, parse_viewpoint(round));
            let feedback = parse_feedback(&response, &obs, &ctx, &grounded)
                .expect("rendered observations are well-formed");
            let confidence = compute_confidence(&feedback);
            ctx = update_context(&ctx, &response, &feedback, config.variant);
            rounds.push(RoundRecord { round, response: response.clone(), feedback, confidence });

            let last_feedback = &rounds.last().expect("just pushed").feedback;
            if last_feedback.is_empty()
                || round >= config.t_max
                || config.variant == Variant::NoSelfCorrection
            {
                break;
            }

            round += 1;
            let f_ct = encode_context(&ctx, &self.encoder_params);
            let (prev_response, prev_feedback) = {
                let prev = rounds.last().expect("at least one round");
                (prev.response.clone(), prev.feedback.clone())
            };
            response =
                backend.refine_response(&prev_response, &prev_feedback, &f_ct, round, rng)?;
        }

        let outcome = evaluate_goal(&grounded.goal, &scene, &response).unwrap_or_else(|_| {
            TaskOutcome::fail(alloc::vec![(
                "answer_kind".into(),
                "response kind does not match the goal".into(),
            )])
        });
        Ok(EpisodeTrace {
            scenario_seed: scenario.seed,
            variant: config.variant,
            rounds,
            outcome,
            rounds_used: round,
        })
    }
}

#[cfg(test)]
mod tests;
