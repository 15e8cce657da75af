//! Experiment execution, metric aggregation, and persistence.
//!
//! One run generates a scenario per episode seed, executes every configured
//! variant over the identical scenario sequence (paired comparison), and
//! aggregates cumulative per-round accuracy. Episodes fan out across worker
//! threads; all file output is written by a single thread from ordered
//! buffers, so identical configurations produce byte-identical files.

use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use cimr_core::backends::{calibrate_oracle, BackendKind, OracleConfig, ScriptedOracle};
use cimr_core::engine::{
    Engine, EpisodeTrace, FeedbackSignal, Variant, VariantConfig,
};
use cimr_core::mapsim::{generate_scenario, GoalKind, Scenario};
use cimr_core::rng::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BackendChoice, ConfigError, ExperimentConfig, OutputFormat};
use crate::config::DEFAULT_STATIC_CONTEXT_LEVEL;
use crate::remote::RemoteBackend;
use crate::HarnessError;

/// Stream salt separating task-kind draws from the episode rng.
const KIND_STREAM_SALT: u64 = 0x6b69_6e64; // "kind"

/// One line of the trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: usize,
    pub round: usize,
    pub variant: String,
    pub response: cimr_core::backends::Response,
    pub feedback: FeedbackSignal,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds_used: Option<usize>,
}

/// Flattens an episode trace into trace-file rows; the final round carries
/// the outcome fields.
pub fn rows_from_trace(episode: usize, trace: &EpisodeTrace) -> Vec<TraceRow> {
    let last = trace.rounds.len();
    trace
        .rounds
        .iter()
        .enumerate()
        .map(|(i, round)| TraceRow {
            episode,
            round: round.round,
            variant: trace.variant.name().to_string(),
            response: round.response.clone(),
            feedback: round.feedback.clone(),
            confidence: round.confidence,
            success: (i + 1 == last).then_some(trace.outcome.success),
            rounds_used: (i + 1 == last).then_some(trace.rounds_used),
        })
        .collect()
}

/// Reads a JSONL trace file back into rows.
pub fn load_trace_rows(path: &Path) -> Result<Vec<TraceRow>, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| HarnessError::Read { path: path.to_path_buf(), source })?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: TraceRow = serde_json::from_str(line)
            .map_err(|e| HarnessError::BadTrace { line: i + 1, reason: e.to_string() })?;
        rows.push(row);
    }
    Ok(rows)
}

/// Accuracy table rows, one per (variant, round).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub variant: String,
    pub round: usize,
    pub episodes: usize,
    pub successes: usize,
    pub accuracy_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn accuracy(&self, variant: &str, round: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.round == round)
            .map(|r| r.accuracy_pct)
    }

    pub fn final_accuracy(&self, variant: &str) -> Option<f64> {
        self.rows.iter().filter(|r| r.variant == variant).map(|r| r.accuracy_pct).next_back()
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

struct EpisodeRows<'a> {
    rows: Vec<&'a TraceRow>,
}

impl EpisodeRows<'_> {
    /// Earliest round whose response already equals the final (passing)
    /// response; `None` for failed episodes. Re-emitting an unchanged
    /// response neither solves nor un-solves anything, so the success is
    /// attributed to the round that first produced the final answer.
    fn achieved_round(&self) -> Option<usize> {
        let last = self.rows.last()?;
        if last.success != Some(true) {
            return None;
        }
        let mut achieved = self.rows.len();
        for row in self.rows.iter().rev().skip(1) {
            if row.response == last.response {
                achieved -= 1;
            } else {
                break;
            }
        }
        Some(achieved)
    }
}

/// Aggregates trace rows into a cumulative accuracy table with rounds
/// 1..=`t_max`. A row counts the episodes whose success was achieved at or
/// before its round; episodes that halted early keep their final state in
/// later rounds.
pub fn aggregate_metrics(rows: &[TraceRow], t_max: usize) -> Result<ResultsTable, HarnessError> {
    use std::collections::BTreeMap;

    // Group by variant preserving first-appearance order, then by episode.
    let mut variant_order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<&str, BTreeMap<usize, EpisodeRows>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        if !variant_order.iter().any(|v| v == &row.variant) {
            variant_order.push(row.variant.clone());
        }
        let episodes = grouped.entry(row.variant.as_str()).or_default();
        let entry = episodes.entry(row.episode).or_insert(EpisodeRows { rows: Vec::new() });
        if row.round != entry.rows.len() + 1 {
            return Err(HarnessError::BadTrace {
                line: i + 1,
                reason: format!(
                    "episode {} has round {} after {} rounds",
                    row.episode,
                    row.round,
                    entry.rows.len()
                ),
            });
        }
        entry.rows.push(row);
    }

    let mut table = ResultsTable::default();
    for variant in &variant_order {
        let episodes = &grouped[variant.as_str()];
        for (episode, ep) in episodes {
            let last = ep.rows.last().expect("grouping never creates empty episodes");
            if last.success.is_none() || last.rounds_used != Some(ep.rows.len()) {
                return Err(HarnessError::BadTrace {
                    line: 0,
                    reason: format!(
                        "episode {episode} of variant {variant} lacks a final-round record"
                    ),
                });
            }
        }
        let achieved: Vec<Option<usize>> =
            episodes.values().map(EpisodeRows::achieved_round).collect();
        let n = achieved.len();
        for round in 1..=t_max {
            let successes =
                achieved.iter().filter(|a| a.map(|r| r <= round).unwrap_or(false)).count();
            table.rows.push(ResultRow {
                variant: variant.clone(),
                round,
                episodes: n,
                successes,
                accuracy_pct: round1(100.0 * successes as f64 / n as f64),
            });
        }
    }
    Ok(table)
}

/// Writes the table as CSV (`variant,round,episodes,successes,accuracy_pct`)
/// or as a per-variant two-column markdown table.
pub fn emit_results(
    table: &ResultsTable,
    format: OutputFormat,
    path: &Path,
) -> Result<(), HarnessError> {
    let mut text = String::new();
    match format {
        OutputFormat::Csv => {
            text.push_str("variant,round,episodes,successes,accuracy_pct\n");
            for row in &table.rows {
                text.push_str(&format!(
                    "{},{},{},{},{:.1}\n",
                    row.variant, row.round, row.episodes, row.successes, row.accuracy_pct
                ));
            }
        }
        OutputFormat::Markdown => {
            let mut variants: Vec<&str> = Vec::new();
            for row in &table.rows {
                if !variants.contains(&row.variant.as_str()) {
                    variants.push(&row.variant);
                }
            }
            for (i, variant) in variants.iter().enumerate() {
                if i > 0 {
                    text.push('\n');
                }
                text.push_str(&format!("## {variant}\n\n"));
                text.push_str("| Round | Accuracy (%) |\n|------:|-------------:|\n");
                for row in table.rows.iter().filter(|r| r.variant == *variant) {
                    text.push_str(&format!("| {} | {:.1} |\n", row.round, row.accuracy_pct));
                }
            }
        }
    }
    std::fs::write(path, text)
        .map_err(|source| HarnessError::Write { path: path.to_path_buf(), source })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TripletRow {
    pub erroneous: cimr_core::backends::Response,
    pub feedback: FeedbackSignal,
    pub corrected: cimr_core::backends::Response,
}

/// Exports one JSONL line per correction: a round with nonempty feedback
/// whose successor round's feedback is empty. Returns the number emitted.
pub fn export_correction_triplets(
    rows: &[TraceRow],
    out_path: &Path,
) -> Result<usize, HarnessError> {
    let mut text = String::new();
    let mut count = 0;
    // Rows of one episode are contiguous and round-ordered in trace files.
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.variant == b.variant
            && a.episode == b.episode
            && b.round == a.round + 1
            && !a.feedback.is_empty()
            && b.feedback.is_empty()
        {
            let triplet = TripletRow {
                erroneous: a.response.clone(),
                feedback: a.feedback.clone(),
                corrected: b.response.clone(),
            };
            text.push_str(&serde_json::to_string(&triplet).expect("triplets serialize"));
            text.push('\n');
            count += 1;
        }
    }
    std::fs::write(out_path, text)
        .map_err(|source| HarnessError::Write { path: out_path.to_path_buf(), source })?;
    Ok(count)
}

/// Bisects the correction damping factor so the oracle's expected final
/// accuracy over rounds 2..=`t_max` hits `target_pct`. Clamps to [0, 1]
/// when the target is outside the achievable range.
pub fn solve_context_factor(oracle: &OracleConfig, t_max: usize, target_pct: f64) -> f64 {
    let final_pct = |factor: f64| {
        let mut failure = oracle.p_initial_error;
        for round in 2..=t_max {
            failure *= 1.0 - (factor * oracle.rate_for_round(round)).clamp(0.0, 1.0);
        }
        100.0 * (1.0 - failure)
    };
    if target_pct <= final_pct(0.0) {
        return 0.0;
    }
    if target_pct >= final_pct(1.0) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if final_pct(mid) < target_pct {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

enum RunBackend {
    Oracle(OracleConfig),
    Remote(RemoteBackend),
}

/// Generates the paired scenario sequence for a configuration: episode i
/// uses seed `base_seed + i` and a task kind drawn from the mix.
pub fn build_scenarios(config: &ExperimentConfig) -> Vec<Scenario> {
    let mix = config.task_mix;
    (0..config.episodes)
        .into_par_iter()
        .map(|i| {
            let mut kind_rng = SplitMix64::fork(config.base_seed ^ KIND_STREAM_SALT, i as u64);
            let u = kind_rng.next_f64();
            let kind = if u < mix[0] {
                GoalKind::Place
            } else if u < mix[0] + mix[1] {
                GoalKind::IdentifyAll
            } else {
                GoalKind::Count
            };
            generate_scenario(config.base_seed.wrapping_add(i as u64), kind)
        })
        .collect()
}

/// Everything a run produces besides its files.
#[derive(Debug)]
pub struct RunOutput {
    pub table: ResultsTable,
    pub trace_rows: Vec<TraceRow>,
    pub triplet_count: Option<usize>,
    pub elapsed: Duration,
}

/// Runs the configured experiment: identical scenario sequence per variant,
/// per-episode rng forked from the base seed, cumulative accuracy table,
/// and optional trace / results / triplet files.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    config.validate().map_err(HarnessError::Config)?;
    let started = Instant::now();

    let scenarios = build_scenarios(config);
    let engine = Engine::new();

    let base_oracle = match &config.backend {
        BackendChoice::Oracle { targets } => Some(
            calibrate_oracle(targets)
                .map_err(|e| ConfigError::BadCalibration(e.to_string()))?,
        ),
        BackendChoice::Remote { .. } => None,
    };

    let mut trace_rows: Vec<TraceRow> = Vec::new();
    for &variant in &config.variants {
        // Resolve the backend selection for this variant, then bring it up.
        let kind = match &config.backend {
            BackendChoice::Oracle { .. } => {
                let mut oracle = base_oracle.clone().expect("oracle backend configured");
                if variant == Variant::NoDynamicContext {
                    oracle.context_factor = config.context_factor.unwrap_or_else(|| {
                        solve_context_factor(&oracle, config.t_max, DEFAULT_STATIC_CONTEXT_LEVEL)
                    });
                }
                BackendKind::ScriptedOracle(oracle)
            }
            BackendChoice::Remote { url, timeout_secs } => {
                BackendKind::Remote { endpoint: url.clone(), timeout_secs: *timeout_secs }
            }
        };
        let backend = match kind {
            BackendKind::ScriptedOracle(oracle) => RunBackend::Oracle(oracle),
            BackendKind::Remote { endpoint, timeout_secs } => {
                RunBackend::Remote(RemoteBackend::new(endpoint, timeout_secs)?)
            }
        };
        let variant_config = VariantConfig { variant, t_max: config.t_max };

        let traces: Result<Vec<EpisodeTrace>, cimr_core::error::BackendError> = scenarios
            .par_iter()
            .enumerate()
            .map(|(i, scenario)| {
                let mut rng = SplitMix64::fork(config.base_seed, i as u64);
                match &backend {
                    RunBackend::Oracle(oracle_config) => {
                        let mut session =
                            ScriptedOracle::new(oracle_config.clone(), scenario.clone());
                        engine.run_episode(scenario, &mut session, &variant_config, &mut rng)
                    }
                    RunBackend::Remote(proto) => {
                        let mut session = proto.for_episode();
                        engine.run_episode(scenario, &mut session, &variant_config, &mut rng)
                    }
                }
            })
            .collect();
        let traces = traces.map_err(HarnessError::Backend)?;
        for (i, trace) in traces.iter().enumerate() {
            trace_rows.extend(rows_from_trace(i, trace));
        }
    }

    let table = aggregate_metrics(&trace_rows, config.t_max)?;

    if let Some(path) = &config.traces {
        let file = std::fs::File::create(path)
            .map_err(|source| HarnessError::Write { path: path.clone(), source })?;
        let mut out = std::io::BufWriter::new(file);
        for row in &trace_rows {
            serde_json::to_writer(&mut out, row)
                .map_err(|e| HarnessError::Write { path: path.clone(), source: e.into() })?;
            out.write_all(b"\n")
                .map_err(|source| HarnessError::Write { path: path.clone(), source })?;
        }
        out.flush().map_err(|source| HarnessError::Write { path: path.clone(), source })?;
    }
    if let Some(path) = &config.out {
        emit_results(&table, config.format, path)?;
    }
    let triplet_count = match &config.triplets {
        Some(path) => Some(export_correction_triplets(&trace_rows, path)?),
        None => None,
    };

    Ok(RunOutput { table, trace_rows, triplet_count, elapsed: started.elapsed() })
}
