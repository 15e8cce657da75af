//! Deterministic modality encoders.
//!
//! All three encoders are training-free: text is whitespace-tokenized,
//! lowercased, and mapped through a seeded hash-embedding table (64-bit
//! FNV-1a modulo the vocabulary size); observations are projected cell-wise
//! through a seeded linear map; context state is serialized to canonical
//! text and encoded like an instruction. Equal inputs and parameter seeds
//! give bit-identical features.

use alloc::string::String;
use alloc::vec::Vec;

use crate::engine::ContextState;
use crate::error::DomainError;
use crate::linalg::Mat;
use crate::mapsim::{Observation, CELL_DIM, GRID};
use crate::rng::SplitMix64;

/// Feature dimension d shared by every encoder and the fusion kernel.
pub const FEATURE_DIM: usize = 64;
/// Hash-embedding vocabulary size.
pub const VOCAB_SIZE: usize = 4096;
/// Per-cell visual input: front slot | back slot | row/7 | col/7.
pub const VISUAL_INPUT_DIM: usize = 2 * CELL_DIM + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Text,
    Visual,
    Context,
}

/// A sequence of d-dimensional feature vectors with a modality tag.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeq {
    pub modality: Modality,
    pub vectors: Vec<Vec<f64>>,
}

impl FeatureSeq {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Seeded encoder parameters: a 4096 x 64 embedding table and a 24 x 64
/// visual projection, entries uniform in [-0.1, 0.1].
#[derive(Debug, Clone)]
pub struct EncoderParams {
    embedding_table: Mat,
    visual_projection: Mat,
    pub param_seed: u64,
}

pub const DEFAULT_PARAM_SEED: u64 = 42;

impl EncoderParams {
    pub fn new(param_seed: u64) -> Self {
        let mut table_rng = SplitMix64::fork(param_seed, 0);
        let mut embedding_table = Mat::zeros(VOCAB_SIZE, FEATURE_DIM);
        for x in &mut embedding_table.data {
            *x = table_rng.range_f64(-0.1, 0.1);
        }
        let mut proj_rng = SplitMix64::fork(param_seed, 1);
        let mut visual_projection = Mat::zeros(VISUAL_INPUT_DIM, FEATURE_DIM);
        for x in &mut visual_projection.data {
            *x = proj_rng.range_f64(-0.1, 0.1);
        }
        Self { embedding_table, visual_projection, param_seed }
    }
}

impl Default for EncoderParams {
    fn default() -> Self {
        Self::new(DEFAULT_PARAM_SEED)
    }
}

/// 64-bit FNV-1a over the token bytes.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn embed_tokens(text: &str, params: &EncoderParams) -> Vec<Vec<f64>> {
    text.split_whitespace()
        .map(|token| {
            let token = token.to_lowercase();
            let row = (fnv1a_64(token.as_bytes()) % VOCAB_SIZE as u64) as usize;
            params.embedding_table.row(row).to_vec()
        })
        .collect()
}

/// Encodes an instruction: one embedding vector per whitespace token.
pub fn encode_text(instruction: &str, params: &EncoderParams) -> FeatureSeq {
    FeatureSeq { modality: Modality::Text, vectors: embed_tokens(instruction, params) }
}

/// Encodes an observation: one projected vector per nonempty cell in
/// row-major order, followed by a global vector equal to the component-wise
/// mean of the cell vectors (all-zero when no cell is occupied).
pub fn encode_visual(
    obs: &Observation,
    params: &EncoderParams,
) -> Result<FeatureSeq, DomainError> {
    // Validate cells up front so malformed input is rejected even when a
    // slot would not contribute to the output.
    crate::mapsim::parse_observation(obs)?;

    let mut vectors: Vec<Vec<f64>> = Vec::new();
    for (idx, cell) in obs.cells.iter().enumerate() {
        if cell[0][CELL_DIM - 1] == 0.0 && cell[1][CELL_DIM - 1] == 0.0 {
            continue;
        }
        let (row, col) = (idx / GRID, idx % GRID);
        let mut input = [0.0; VISUAL_INPUT_DIM];
        input[..CELL_DIM].copy_from_slice(&cell[0]);
        input[CELL_DIM..2 * CELL_DIM].copy_from_slice(&cell[1]);
        input[2 * CELL_DIM] = row as f64 / (GRID - 1) as f64;
        input[2 * CELL_DIM + 1] = col as f64 / (GRID - 1) as f64;

        let mut out = alloc::vec![0.0; FEATURE_DIM];
        for (k, &x) in input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(params.visual_projection.row(k)) {
                *o += x * w;
            }
        }
        vectors.push(out);
    }

    let mut global = alloc::vec![0.0; FEATURE_DIM];
    if !vectors.is_empty() {
        for v in &vectors {
            for (g, &x) in global.iter_mut().zip(v) {
                *g += x;
            }
        }
        let inv = 1.0 / vectors.len() as f64;
        for g in &mut global {
            *g *= inv;
        }
    }
    vectors.push(global);
    Ok(FeatureSeq { modality: Modality::Visual, vectors })
}

/// Encodes a context state by serializing it to canonical text (goal line
/// plus one line per history entry) and embedding that text.
pub fn encode_context(ctx: &ContextState, params: &EncoderParams) -> FeatureSeq {
    let text: String = ctx.canonical_text();
    FeatureSeq { modality: Modality::Context, vectors: embed_tokens(&text, params) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{ContextState, DiscrepancyCategory, HistoryEntry};
    use crate::mapsim::{render, Color, Depth, Material, ObjectSpec, Scene, Shape};
    use alloc::string::ToString;
    use alloc::vec;

    fn obj(id: u32, pos: (usize, usize), depth: Depth) -> ObjectSpec {
        ObjectSpec {
            id,
            color: Color::Gray,
            shape: Shape::Cube,
            material: Material::Rubber,
            pos,
            depth,
        }
    }

    #[test]
    fn empty_instruction_has_no_vectors() {
        let params = EncoderParams::default();
        assert_eq!(encode_text("", &params).len(), 0);
    }

    #[test]
    fn encoding_is_deterministic() {
        let params = EncoderParams::default();
        let a = encode_text("Place the red cube", &params);
        let b = encode_text("Place the red cube", &params);
        assert_eq!(a, b);
    }

    #[test]
    fn token_count_and_dimension() {
        let params = EncoderParams::default();
        let seq = encode_text("place the red cube", &params);
        assert_eq!(seq.len(), 4);
        assert!(seq.vectors.iter().all(|v| v.len() == FEATURE_DIM));
        assert!(seq.vectors.iter().flatten().all(|x| x.is_finite()));
    }

    #[test]
    fn tokenization_is_case_insensitive() {
        let params = EncoderParams::default();
        assert_eq!(
            encode_text("RED Cube", &params).vectors,
            encode_text("red cube", &params).vectors
        );
    }

    #[test]
    fn empty_observation_encodes_to_single_zero_vector() {
        let params = EncoderParams::default();
        let obs = render(&Scene::default(), 0);
        let seq = encode_visual(&obs, &params).unwrap();
        assert_eq!(seq.len(), 1);
        assert!(seq.vectors[0].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn occupied_cells_plus_global() {
        let params = EncoderParams::default();
        let scene = Scene {
            objects: vec![
                obj(0, (0, 0), Depth::Front),
                obj(1, (3, 4), Depth::Front),
                obj(2, (7, 7), Depth::Front),
            ],
        };
        let seq = encode_visual(&render(&scene, 0), &params).unwrap();
        assert_eq!(seq.len(), 4);
    }

    #[test]
    fn global_vector_is_mean_of_cells() {
        let params = EncoderParams::default();
        let scene = Scene {
            objects: vec![obj(0, (1, 2), Depth::Front), obj(1, (5, 6), Depth::Front)],
        };
        let seq = encode_visual(&render(&scene, 0), &params).unwrap();
        let cells = &seq.vectors[..seq.len() - 1];
        let global = seq.vectors.last().unwrap();
        for d in 0..FEATURE_DIM {
            let mean = cells.iter().map(|v| v[d]).sum::<f64>() / cells.len() as f64;
            assert!((global[d] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn initial_context_encodes_like_goal_line() {
        let params = EncoderParams::default();
        let ctx = ContextState::initial("Place the red cube.".to_string());
        assert_eq!(
            encode_context(&ctx, &params).vectors,
            encode_text("Place the red cube.", &params).vectors
        );
    }

    #[test]
    fn history_entry_extends_sequence() {
        let params = EncoderParams::default();
        let mut ctx = ContextState::initial("count the red cubes".to_string());
        let before = encode_context(&ctx, &params).len();
        ctx.history.push(HistoryEntry {
            round: 1,
            response_summary: "count 3".to_string(),
            feedback_categories: vec![DiscrepancyCategory::CountMismatch],
        });
        ctx.iteration = 1;
        assert!(encode_context(&ctx, &params).len() > before);
    }

    #[test]
    fn feedback_category_changes_features() {
        let params = EncoderParams::default();
        let base = |cat| {
            let mut ctx = ContextState::initial("identify the metallic objects".to_string());
            ctx.history.push(HistoryEntry {
                round: 1,
                response_summary: "ids [2]".to_string(),
                feedback_categories: vec![cat],
            });
            ctx.iteration = 1;
            encode_context(&ctx, &params)
        };
        let a = base(DiscrepancyCategory::ConstraintViolation);
        let b = base(DiscrepancyCategory::MissingItem);
        assert_eq!(a.len(), b.len());
        assert_ne!(a.vectors, b.vectors);
    }
}
