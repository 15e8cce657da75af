//! Scenario corpus files: JSONL, one scenario per line.

use std::path::Path;

use cimr_core::engine::ContextState;
use cimr_core::mapsim::{Goal, GoalKind, Scenario, Scene};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

#[derive(Debug, Serialize, Deserialize)]
struct CorpusRow {
    seed: u64,
    kind: GoalKind,
    scene: Scene,
    instruction: String,
    goal: Goal,
}

/// Writes scenarios as JSONL with keys seed, kind, scene, instruction, goal.
pub fn write_scenario_corpus(path: &Path, scenarios: &[Scenario]) -> Result<(), HarnessError> {
    let mut text = String::new();
    for scenario in scenarios {
        let row = CorpusRow {
            seed: scenario.seed,
            kind: scenario.goal.kind(),
            scene: scenario.scene.clone(),
            instruction: scenario.instruction.clone(),
            goal: scenario.goal.clone(),
        };
        text.push_str(&serde_json::to_string(&row).expect("scenarios serialize"));
        text.push('\n');
    }
    std::fs::write(path, text)
        .map_err(|source| HarnessError::Write { path: path.to_path_buf(), source })
}

/// Reads a scenario corpus. The initial context is reconstructed from the
/// instruction (goal line, empty history).
pub fn load_scenario_corpus(path: &Path) -> Result<Vec<Scenario>, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| HarnessError::Read { path: path.to_path_buf(), source })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: CorpusRow = serde_json::from_str(line)
            .map_err(|e| HarnessError::BadTrace { line: i + 1, reason: e.to_string() })?;
        out.push(Scenario {
            seed: row.seed,
            scene: row.scene,
            instruction: row.instruction.clone(),
            goal: row.goal,
            initial_context: ContextState::initial(row.instruction),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cimr_core::mapsim::generate_scenario;

    #[test]
    fn corpus_roundtrips() {
        let scenarios: Vec<Scenario> = (0..20)
            .map(|i| {
                let kind = [GoalKind::Place, GoalKind::IdentifyAll, GoalKind::Count][i % 3];
                generate_scenario(i as u64, kind)
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_scenario_corpus(&path, &scenarios).unwrap();
        let loaded = load_scenario_corpus(&path).unwrap();
        assert_eq!(loaded, scenarios);
    }

    #[test]
    fn corpus_lines_carry_expected_keys() {
        let scenarios = vec![generate_scenario(1, GoalKind::Place)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_scenario_corpus(&path, &scenarios).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let value: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["seed", "kind", "scene", "instruction", "goal"] {
            assert!(value.get(key).is_some(), "missing key {key}");
        }
        assert_eq!(value["kind"], "place");
        assert!(value["scene"]["objects"].is_array());
        let first = &value["scene"]["objects"][0];
        for key in ["id", "color", "shape", "material", "pos", "depth"] {
            assert!(first.get(key).is_some(), "missing object key {key}");
        }
    }
}
