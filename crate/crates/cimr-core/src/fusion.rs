//! Dynamic fusion: joint multi-head attention over the concatenated
//! modality sequences.
//!
//! The three sequences are concatenated, a per-modality tag embedding is
//! added to each token, and a single scaled-dot-product multi-head
//! attention runs with queries, keys, and values all drawn from the full
//! concatenation, so every modality queries and is queried by the others.
//! The attention result is added back to the tagged inputs (residual) and
//! sent through the output projection; the pooled feature is the mean over
//! output tokens.
//!
//! Parameters are fixed seeded, never trained; the module's claims are
//! correctness claims. [`fuse_backward`] returns exact analytic gradients
//! of the contraction of the output with an upstream gradient, and
//! [`check_gradients`] compares them against central finite differences.

use alloc::vec;
use alloc::vec::Vec;

use crate::encoders::{FeatureSeq, Modality, FEATURE_DIM};
use crate::error::DomainError;
use crate::linalg::Mat;
use crate::rng::SplitMix64;

/// Attention head count H.
pub const HEADS: usize = 4;
/// Per-head dimension d / H.
pub const HEAD_DIM: usize = FEATURE_DIM / HEADS;

/// Seeded attention parameters: d x d projection matrices for queries,
/// keys, values, and outputs, plus a 3 x d modality tag table. Entries are
/// uniform in [-1/sqrt(d), 1/sqrt(d)].
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub(crate) w_q: Mat,
    pub(crate) w_k: Mat,
    pub(crate) w_v: Mat,
    pub(crate) w_o: Mat,
    pub(crate) modality_tags: Mat,
    pub param_seed: u64,
}

impl AttentionParams {
    pub fn new(param_seed: u64) -> Self {
        let bound = 1.0 / libm::sqrt(FEATURE_DIM as f64);
        let seeded = |stream: u64, rows: usize| {
            let mut rng = SplitMix64::fork(param_seed, stream);
            let mut m = Mat::zeros(rows, FEATURE_DIM);
            for x in &mut m.data {
                *x = rng.range_f64(-bound, bound);
            }
            m
        };
        Self {
            w_q: seeded(0, FEATURE_DIM),
            w_k: seeded(1, FEATURE_DIM),
            w_v: seeded(2, FEATURE_DIM),
            w_o: seeded(3, FEATURE_DIM),
            modality_tags: seeded(4, 3),
            param_seed,
        }
    }

    /// Tag row added to every token of a modality.
    pub fn tag(&self, modality: Modality) -> &[f64] {
        self.modality_tags.row(modality_index(modality))
    }
}

impl Default for AttentionParams {
    fn default() -> Self {
        Self::new(crate::encoders::DEFAULT_PARAM_SEED)
    }
}

fn modality_index(m: Modality) -> usize {
    match m {
        Modality::Text => 0,
        Modality::Visual => 1,
        Modality::Context => 2,
    }
}

/// Output of [`fuse`].
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatures {
    /// One output vector per input token, concatenation order preserved.
    pub vectors: Vec<Vec<f64>>,
    /// Mean over the output vectors.
    pub pooled: Vec<f64>,
    /// Per-head row-stochastic attention matrices, `attention[h][q][k]`.
    pub attention: Vec<Vec<Vec<f64>>>,
}

/// Gradients returned by [`fuse_backward`]; all matrices are row vectors of
/// the same shapes as the corresponding inputs and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FuseGradients {
    pub d_text: Vec<Vec<f64>>,
    pub d_visual: Vec<Vec<f64>>,
    pub d_context: Vec<Vec<f64>>,
    pub d_w_q: Vec<Vec<f64>>,
    pub d_w_k: Vec<Vec<f64>>,
    pub d_w_v: Vec<Vec<f64>>,
    pub d_w_o: Vec<Vec<f64>>,
    pub d_modality_tags: Vec<Vec<f64>>,
}

struct Forward {
    tagged: Mat,
    queries: Mat,
    keys: Mat,
    values: Mat,
    attention: Vec<Mat>,
    residual: Mat,
    output: Mat,
    modality_of: Vec<usize>,
    lens: (usize, usize, usize),
}

fn check_dims(seq: &FeatureSeq) -> Result<(), DomainError> {
    for v in &seq.vectors {
        if v.len() != FEATURE_DIM {
            return Err(DomainError::DimMismatch { expected: FEATURE_DIM, got: v.len() });
        }
    }
    Ok(())
}

fn head_cols(m: &Mat, head: usize) -> Mat {
    let lo = head * HEAD_DIM;
    let mut out = Mat::zeros(m.rows, HEAD_DIM);
    for r in 0..m.rows {
        out.data[r * HEAD_DIM..(r + 1) * HEAD_DIM]
            .copy_from_slice(&m.row(r)[lo..lo + HEAD_DIM]);
    }
    out
}

fn forward_parts(
    f_t: &FeatureSeq,
    f_v: &FeatureSeq,
    f_c: &FeatureSeq,
    params: &AttentionParams,
) -> Result<Forward, DomainError> {
    check_dims(f_t)?;
    check_dims(f_v)?;
    check_dims(f_c)?;
    let lens = (f_t.len(), f_v.len(), f_c.len());
    let total = lens.0 + lens.1 + lens.2;
    if total == 0 {
        return Err(DomainError::EmptyFusionInput);
    }

    let mut tagged = Mat::zeros(total, FEATURE_DIM);
    let mut modality_of = Vec::with_capacity(total);
    let mut row = 0;
    for seq in [f_t, f_v, f_c] {
        let m = modality_index(seq.modality);
        let tag = params.modality_tags.row(m);
        for v in &seq.vectors {
            let dst = &mut tagged.data[row * FEATURE_DIM..(row + 1) * FEATURE_DIM];
            for ((d, &x), &t) in dst.iter_mut().zip(v).zip(tag) {
                *d = x + t;
            }
            modality_of.push(m);
            row += 1;
        }
    }

    let queries = tagged.matmul(&params.w_q);
    let keys = tagged.matmul(&params.w_k);
    let values = tagged.matmul(&params.w_v);
    let scale = 1.0 / libm::sqrt(HEAD_DIM as f64);

    let mut attention = Vec::with_capacity(HEADS);
    let mut heads_out = Mat::zeros(total, FEATURE_DIM);
    for h in 0..HEADS {
        let q = head_cols(&queries, h);
        let k = head_cols(&keys, h);
        let v = head_cols(&values, h);
        let mut scores = q.matmul_nt(&k);
        for x in &mut scores.data {
            *x *= scale;
        }
        // Softmax per row with max subtraction.
        for r in 0..scores.rows {
            let row = &mut scores.data[r * total..(r + 1) * total];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = libm::exp(*x - max);
                sum += *x;
            }
            let inv = 1.0 / sum;
            for x in row.iter_mut() {
                *x *= inv;
            }
        }
        let o = scores.matmul(&v);
        for r in 0..total {
            heads_out.data[r * FEATURE_DIM + h * HEAD_DIM..r * FEATURE_DIM + (h + 1) * HEAD_DIM]
                .copy_from_slice(o.row(r));
        }
        attention.push(scores);
    }

    let mut residual = heads_out;
    residual.add_assign(&tagged);
    let output = residual.matmul(&params.w_o);

    Ok(Forward { tagged, queries, keys, values, attention, residual, output, modality_of, lens })
}

/// Fuses the three modality sequences. Requires at least one token in total
/// and d-dimensional vectors throughout.
pub fn fuse(
    f_t: &FeatureSeq,
    f_v: &FeatureSeq,
    f_c: &FeatureSeq,
    params: &AttentionParams,
) -> Result<FusedFeatures, DomainError> {
    let fwd = forward_parts(f_t, f_v, f_c, params)?;
    let n = fwd.output.rows;
    let mut pooled = vec![0.0; FEATURE_DIM];
    for r in 0..n {
        for (p, &x) in pooled.iter_mut().zip(fwd.output.row(r)) {
            *p += x;
        }
    }
    for p in &mut pooled {
        *p /= n as f64;
    }
    Ok(FusedFeatures {
        vectors: fwd.output.row_vecs(),
        pooled,
        attention: fwd.attention.iter().map(Mat::row_vecs).collect(),
    })
}

/// Analytic gradients of `sum_i <upstream[i], fuse(...).vectors[i]>` with
/// respect to every input vector and every parameter matrix.
pub fn fuse_backward(
    f_t: &FeatureSeq,
    f_v: &FeatureSeq,
    f_c: &FeatureSeq,
    params: &AttentionParams,
    upstream: &[Vec<f64>],
) -> Result<FuseGradients, DomainError> {
    let fwd = forward_parts(f_t, f_v, f_c, params)?;
    let n = fwd.output.rows;
    if upstream.len() != n {
        return Err(DomainError::DimMismatch { expected: n, got: upstream.len() });
    }
    for g in upstream {
        if g.len() != FEATURE_DIM {
            return Err(DomainError::DimMismatch { expected: FEATURE_DIM, got: g.len() });
        }
    }
    let g_out = Mat::from_rows(upstream, FEATURE_DIM);

    // output = residual * W_O
    let d_w_o = fwd.residual.matmul_tn(&g_out);
    let d_residual = g_out.matmul_nt(&params.w_o);

    // residual = tagged + heads_out
    let mut d_tagged = d_residual.clone();
    let d_heads = d_residual;

    let scale = 1.0 / libm::sqrt(HEAD_DIM as f64);
    let mut d_queries = Mat::zeros(n, FEATURE_DIM);
    let mut d_keys = Mat::zeros(n, FEATURE_DIM);
    let mut d_values = Mat::zeros(n, FEATURE_DIM);

    for h in 0..HEADS {
        let q = head_cols(&fwd.queries, h);
        let k = head_cols(&fwd.keys, h);
        let v = head_cols(&fwd.values, h);
        let a = &fwd.attention[h];
        let d_o = head_cols(&d_heads, h);

        let d_a = d_o.matmul_nt(&v);
        let d_v = a.matmul_tn(&d_o);

        // Softmax backward: dS_ij = A_ij * (dA_ij - sum_k dA_ik A_ik).
        let mut d_scores = Mat::zeros(n, n);
        for r in 0..n {
            let arow = a.row(r);
            let darow = d_a.row(r);
            let dot: f64 = arow.iter().zip(darow).map(|(&x, &y)| x * y).sum();
            let dst = &mut d_scores.data[r * n..(r + 1) * n];
            for ((d, &aij), &daij) in dst.iter_mut().zip(arow).zip(darow) {
                *d = aij * (daij - dot);
            }
        }
        for x in &mut d_scores.data {
            *x *= scale;
        }

        let d_q = d_scores.matmul(&k);
        let d_k = d_scores.matmul_tn(&q);

        for r in 0..n {
            let lo = h * HEAD_DIM;
            for c in 0..HEAD_DIM {
                *d_queries.at_mut(r, lo + c) += d_q.at(r, c);
                *d_keys.at_mut(r, lo + c) += d_k.at(r, c);
                *d_values.at_mut(r, lo + c) += d_v.at(r, c);
            }
        }
    }

    let d_w_q = fwd.tagged.matmul_tn(&d_queries);
    let d_w_k = fwd.tagged.matmul_tn(&d_keys);
    let d_w_v = fwd.tagged.matmul_tn(&d_values);

    d_tagged.add_assign(&d_queries.matmul_nt(&params.w_q));
    d_tagged.add_assign(&d_keys.matmul_nt(&params.w_k));
    d_tagged.add_assign(&d_values.matmul_nt(&params.w_v));

    let mut d_tags = Mat::zeros(3, FEATURE_DIM);
    for r in 0..n {
        let m = fwd.modality_of[r];
        let src = d_tagged.row(r).to_vec();
        let dst = &mut d_tags.data[m * FEATURE_DIM..(m + 1) * FEATURE_DIM];
        for (d, x) in dst.iter_mut().zip(src) {
            *d += x;
        }
    }

    let rows = d_tagged.row_vecs();
    let (t, v, _) = fwd.lens;
    Ok(FuseGradients {
        d_text: rows[..t].to_vec(),
        d_visual: rows[t..t + v].to_vec(),
        d_context: rows[t + v..].to_vec(),
        d_w_q: d_w_q.row_vecs(),
        d_w_k: d_w_k.row_vecs(),
        d_w_v: d_w_v.row_vecs(),
        d_w_o: d_w_o.row_vecs(),
        d_modality_tags: d_tags.row_vecs(),
    })
}

/// Central finite-difference step used by the gradient checker.
pub const GRADCHECK_STEP: f64 = 1e-5;

fn random_seq(rng: &mut SplitMix64, modality: Modality, tokens: usize) -> FeatureSeq {
    let vectors = (0..tokens)
        .map(|_| (0..FEATURE_DIM).map(|_| rng.range_f64(-1.0, 1.0)).collect())
        .collect();
    FeatureSeq { modality, vectors }
}

fn contraction(
    f_t: &FeatureSeq,
    f_v: &FeatureSeq,
    f_c: &FeatureSeq,
    params: &AttentionParams,
    upstream: &[Vec<f64>],
) -> f64 {
    let out = fuse(f_t, f_v, f_c, params).expect("gradcheck instance is valid");
    out.vectors
        .iter()
        .zip(upstream)
        .map(|(o, g)| o.iter().zip(g).map(|(&a, &b)| a * b).sum::<f64>())
        .sum()
}

/// Relative error with the denominator floored at 1 so near-zero gradients
/// are compared absolutely.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    libm::fabs(analytic - numeric)
        / libm::fabs(analytic).max(libm::fabs(numeric)).max(1.0)
}

/// Builds a random instance for `token_counts = (text, visual, context)`,
/// compares [`fuse_backward`] against central finite differences on a
/// seeded sample of input and parameter coordinates, and returns the
/// maximum relative error. Deterministic in `seed`.
pub fn check_gradients(seed: u64, token_counts: (usize, usize, usize)) -> f64 {
    let (nt, nv, nc) = token_counts;
    let n = nt + nv + nc;
    assert!(n >= 1, "gradcheck needs at least one token");

    let params = AttentionParams::new(seed);
    let mut rng = SplitMix64::fork(seed, 1000);
    let f_t = random_seq(&mut rng, Modality::Text, nt);
    let f_v = random_seq(&mut rng, Modality::Visual, nv);
    let f_c = random_seq(&mut rng, Modality::Context, nc);
    let upstream: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..FEATURE_DIM).map(|_| rng.range_f64(-1.0, 1.0)).collect())
        .collect();

    let grads = fuse_backward(&f_t, &f_v, &f_c, &params, &upstream)
        .expect("gradcheck instance is valid");

    let h = GRADCHECK_STEP;
    let mut max_err: f64 = 0.0;
    let mut pick = SplitMix64::fork(seed, 2000);

    // Input coordinates: up to 64 sampled (token, dim) pairs.
    let input_grads = [&grads.d_text, &grads.d_visual, &grads.d_context];
    for _ in 0..64.min(n * FEATURE_DIM) {
        let tok = pick.next_below(n);
        let dim = pick.next_below(FEATURE_DIM);
        let (seq_idx, local) = if tok < nt {
            (0, tok)
        } else if tok < nt + nv {
            (1, tok - nt)
        } else {
            (2, tok - nt - nv)
        };
        let mut seqs = [f_t.clone(), f_v.clone(), f_c.clone()];
        seqs[seq_idx].vectors[local][dim] += h;
        let plus = contraction(&seqs[0], &seqs[1], &seqs[2], &params, &upstream);
        seqs[seq_idx].vectors[local][dim] -= 2.0 * h;
        let minus = contraction(&seqs[0], &seqs[1], &seqs[2], &params, &upstream);
        let numeric = (plus - minus) / (2.0 * h);
        max_err = max_err.max(rel_err(input_grads[seq_idx][local][dim], numeric));
    }

    // Parameter coordinates: 16 per projection matrix, 8 tag entries.
    let param_grads: [(&Vec<Vec<f64>>, usize); 5] = [
        (&grads.d_w_q, 0),
        (&grads.d_w_k, 1),
        (&grads.d_w_v, 2),
        (&grads.d_w_o, 3),
        (&grads.d_modality_tags, 4),
    ];
    for (analytic, which) in param_grads {
        let (rows, samples) = if which == 4 { (3, 8) } else { (FEATURE_DIM, 16) };
        for _ in 0..samples {
            let r = pick.next_below(rows);
            let c = pick.next_below(FEATURE_DIM);
            let mut perturbed = params.clone();
            let target = match which {
                0 => &mut perturbed.w_q,
                1 => &mut perturbed.w_k,
                2 => &mut perturbed.w_v,
                3 => &mut perturbed.w_o,
                _ => &mut perturbed.modality_tags,
            };
            *target.at_mut(r, c) += h;
            let plus = contraction(&f_t, &f_v, &f_c, &perturbed, &upstream);
            let target = match which {
                0 => &mut perturbed.w_q,
                1 => &mut perturbed.w_k,
                2 => &mut perturbed.w_v,
                3 => &mut perturbed.w_o,
                _ => &mut perturbed.modality_tags,
            };
            *target.at_mut(r, c) -= 2.0 * h;
            let minus = contraction(&f_t, &f_v, &f_c, &perturbed, &upstream);
            let numeric = (plus - minus) / (2.0 * h);
            max_err = max_err.max(rel_err(analytic[r][c], numeric));
        }
    }

    max_err
}

/// Runs [`check_gradients`] over `instances` random small shapes (at most
/// two tokens per modality, at least one in total) and returns the maximum
/// relative error seen. Deterministic in `seed`.
pub fn gradcheck_suite(seed: u64, instances: usize) -> f64 {
    let mut max_err: f64 = 0.0;
    for i in 0..instances {
        let mut rng = SplitMix64::fork(seed, 3000 + i as u64);
        let counts = loop {
            let c = (rng.next_below(3), rng.next_below(3), rng.next_below(3));
            if c.0 + c.1 + c.2 >= 1 {
                break c;
            }
        };
        max_err = max_err.max(check_gradients(rng.next_u64(), counts));
    }
    max_err
}
