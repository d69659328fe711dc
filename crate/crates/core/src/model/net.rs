//! The network forward pass.
//!
//! Batches are packed: every record's real-atom rows are concatenated into
//! one tall matrix so the query/output/feed-forward projections run as a
//! few large matrix products instead of per-record small ones. Per-record
//! work (attention logits against the record's 3 omics tokens, pooling,
//! head-sequence assembly) operates on gathered row ranges of the pack.
//! Drugs and cells are deduplicated, so a record batch reusing a drug pays
//! for its GCN once.
//!
//! Padded atom slots never enter the pack at all; they are reintroduced as
//! zero constants only where a fixed-length layout requires them (the
//! conv-head sequence and the padded public wrappers), which keeps padding
//! exactly inert.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};

use super::config::{CONV_STRIDE, HEAD_SEQ_LEN};
use super::{BoundParams, ModelConfig, ModelError, ModelParams, PoolKind};
use crate::dataset::{OmicsProfile, PaddedDrugGraph, ATOM_FEATURES, MAX_ATOMS};
use crate::tensor::{BatchNormState, Mode, Tape, Tensor, Var};

type Result<T> = std::result::Result<T, ModelError>;

/// One forward pass over a record batch, ready for loss construction.
pub struct BatchForward {
    /// Predicted ln IC50 per record, shape `[batch, 1]`.
    pub predictions: Var,
    /// The bound parameter leaves, for routing gradients back to paths.
    pub bound: BoundParams,
}

fn real_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect()
}

/// Compact (real-atom-only) feature and normalized-adjacency tensors.
fn compact_graph(g: &PaddedDrugGraph) -> (Tensor, Tensor) {
    let n = g.num_atoms;
    let feat = Tensor::new(
        vec![n, ATOM_FEATURES],
        g.atom_features[..n * ATOM_FEATURES].to_vec(),
    )
    .expect("padded layout");
    let mut adj = vec![0.0; n * n];
    for i in 0..n {
        adj[i * n..(i + 1) * n]
            .copy_from_slice(&g.norm_adjacency[i * MAX_ATOMS..i * MAX_ATOMS + n]);
    }
    (feat, Tensor::new(vec![n, n], adj).expect("square"))
}

/// Appends zero rows to reach `rows` total (used by the padded wrappers).
fn pad_rows(tape: &mut Tape, x: Var, rows: usize) -> Result<Var> {
    let (n, d) = {
        let v = tape.value(x);
        (v.rows(), v.cols())
    };
    if n == rows {
        return Ok(x);
    }
    let zeros = tape.leaf(Tensor::zeros(vec![rows - n, d]));
    Ok(tape.concat(0, &[x, zeros])?)
}

/// GCN over the compact graph: H ← ReLU(Â·H·W + b) per layer (Eq. 1 shape).
fn gcn_compact(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &ModelConfig,
    g: &PaddedDrugGraph,
) -> Result<Var> {
    let (feat, adj) = compact_graph(g);
    let a = tape.leaf(adj);
    let mut h = tape.leaf(feat);
    for l in 0..cfg.gcn_layer_widths.len() {
        let w = bound.var(&format!("gcn.{l}.weight"))?;
        let b = bound.var(&format!("gcn.{l}.bias"))?;
        let prop = tape.matmul(a, h)?;
        let lin = tape.matmul(prop, w)?;
        let biased = tape.add_row(lin, b)?;
        h = tape.relu(biased)?;
    }
    Ok(h)
}

/// Drug encoder on one padded graph; padded rows are exactly zero.
pub fn gcn_forward(
    tape: &mut Tape,
    params: &ModelParams,
    g: &PaddedDrugGraph,
) -> Result<Var> {
    let bound = BoundParams::bind(tape, &params.tensors);
    let compact = gcn_compact(tape, &bound, &params.config, g)?;
    pad_rows(tape, compact, MAX_ATOMS)
}

/// One omics channel's encoder stack over a `[cells, dim]` input.
fn omics_channel(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &ModelConfig,
    channel: &str,
    input: Var,
) -> Result<Var> {
    let n_layers = cfg.omics_hidden.len() + 1;
    let mut x = input;
    for l in 0..n_layers {
        let w = bound.var(&format!("omics.{channel}.{l}.weight"))?;
        let b = bound.var(&format!("omics.{channel}.{l}.bias"))?;
        let lin = tape.matmul(x, w)?;
        x = tape.add_row(lin, b)?;
        if l + 1 < n_layers {
            x = tape.relu(x)?;
        }
    }
    Ok(x)
}

fn check_profile(params: &ModelParams, p: &OmicsProfile) -> Result<()> {
    let (dm, de, dh) = params.omics_dims;
    if p.mutation.len() != dm || p.expression.len() != de || p.methylation.len() != dh {
        return Err(ModelError::Input(format!(
            "cell {}: omics dims ({}, {}, {}) do not match the model's ({dm}, {de}, {dh})",
            p.cell_id,
            p.mutation.len(),
            p.expression.len(),
            p.methylation.len()
        )));
    }
    Ok(())
}

/// Encoders for a batch of unique cells; returns the packed token matrix
/// `[3·cells, d_model]` laid out as all r_g rows, then all r_t, all r_e.
fn omics_encode_packed(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &ModelConfig,
    cells: &[&OmicsProfile],
) -> Result<Var> {
    let pack = |field: fn(&OmicsProfile) -> &[f64]| -> Tensor {
        let dim = field(cells[0]).len();
        let mut data = Vec::with_capacity(cells.len() * dim);
        for c in cells {
            data.extend_from_slice(field(c));
        }
        Tensor::new(vec![cells.len(), dim], data).expect("uniform dims")
    };
    let mutation = tape.leaf(pack(|c| &c.mutation));
    let expression = tape.leaf(pack(|c| &c.expression));
    let methylation = tape.leaf(pack(|c| &c.methylation));
    let r_g = omics_channel(tape, bound, cfg, "mutation", mutation)?;
    let r_t = omics_channel(tape, bound, cfg, "expression", expression)?;
    let r_e = omics_channel(tape, bound, cfg, "methylation", methylation)?;
    Ok(tape.concat(0, &[r_g, r_t, r_e])?)
}

/// Encodes one cell line into its three omics tokens, `[3, d_model]`.
pub fn omics_encode(
    tape: &mut Tape,
    params: &ModelParams,
    profile: &OmicsProfile,
) -> Result<Var> {
    check_profile(params, profile)?;
    let bound = BoundParams::bind(tape, &params.tensors);
    omics_encode_packed(tape, &bound, &params.config, &[profile])
}

/// Per-record row ranges and omics-token indices inside the packed
/// matrices.
struct Packing {
    /// Half-open row range of each record inside the atom pack.
    segments: Vec<(usize, usize)>,
    /// Rows of each record's 3 omics tokens inside the token pack.
    kv_rows: Vec<[usize; 3]>,
}

/// Atom-omics attention over the packed batch (Eqs. 2-4).
///
/// Queries come from atom rows; keys and values from the record's three
/// omics tokens. Returns the packed output and, per record and head, the
/// attention weight matrix (rows sum to 1 over the 3 omics positions).
fn aoa_packed(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &ModelConfig,
    blk: usize,
    x: Var,
    omics_pack: Var,
    packing: &Packing,
) -> Result<(Var, Vec<Vec<Tensor>>)> {
    let scale = 1.0 / (cfg.d_k as f64).sqrt();
    let mut q_all = Vec::with_capacity(cfg.heads);
    let mut k_all = Vec::with_capacity(cfg.heads);
    let mut v_all = Vec::with_capacity(cfg.heads);
    for i in 0..cfg.heads {
        let wq = bound.var(&format!("block.{blk}.attn.q.{i}"))?;
        let wk = bound.var(&format!("block.{blk}.attn.k.{i}"))?;
        let wv = bound.var(&format!("block.{blk}.attn.v.{i}"))?;
        q_all.push(tape.matmul(x, wq)?);
        k_all.push(tape.matmul(omics_pack, wk)?);
        v_all.push(tape.matmul(omics_pack, wv)?);
    }
    let mut per_record = Vec::with_capacity(packing.segments.len());
    let mut weights = Vec::with_capacity(packing.segments.len());
    for (r, &(lo, hi)) in packing.segments.iter().enumerate() {
        let atom_rows: Vec<usize> = (lo..hi).collect();
        let kv = packing.kv_rows[r];
        let mut head_outs = Vec::with_capacity(cfg.heads);
        let mut head_weights = Vec::with_capacity(cfg.heads);
        for i in 0..cfg.heads {
            let q = tape.gather_rows(q_all[i], &atom_rows)?;
            let k = tape.gather_rows(k_all[i], &kv)?;
            let v = tape.gather_rows(v_all[i], &kv)?;
            let kt = tape.transpose(k)?;
            let dots = tape.matmul(q, kt)?;
            let logits = tape.mul_scalar(dots, scale)?;
            let attn = tape.softmax_masked(logits, None)?;
            head_weights.push(tape.value(attn).clone());
            head_outs.push(tape.matmul(attn, v)?);
        }
        let cat = if head_outs.len() == 1 {
            head_outs[0]
        } else {
            tape.concat(1, &head_outs)?
        };
        per_record.push(cat);
        weights.push(head_weights);
    }
    let packed = if per_record.len() == 1 {
        per_record[0]
    } else {
        tape.concat(0, &per_record)?
    };
    let wo = bound.var(&format!("block.{blk}.attn.out"))?;
    Ok((tape.matmul(packed, wo)?, weights))
}

/// One transformer block over the packed batch: attention and feed-forward
/// sublayers, each wrapped in add-and-norm. Omics tokens pass through.
fn block_packed(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &ModelConfig,
    blk: usize,
    x: Var,
    omics_pack: Var,
    packing: &Packing,
) -> Result<Var> {
    let (attn, _) = aoa_packed(tape, bound, cfg, blk, x, omics_pack, packing)?;
    let sum1 = tape.add(x, attn)?;
    let ln1_g = bound.var(&format!("block.{blk}.ln1.gain"))?;
    let ln1_b = bound.var(&format!("block.{blk}.ln1.bias"))?;
    let x1 = tape.layer_norm_rows(sum1, ln1_g, ln1_b)?;

    let w0 = bound.var(&format!("block.{blk}.ff.0.weight"))?;
    let b0 = bound.var(&format!("block.{blk}.ff.0.bias"))?;
    let w1 = bound.var(&format!("block.{blk}.ff.1.weight"))?;
    let b1 = bound.var(&format!("block.{blk}.ff.1.bias"))?;
    let inner = tape.matmul(x1, w0)?;
    let inner = tape.add_row(inner, b0)?;
    let inner = tape.relu(inner)?;
    let ff = tape.matmul(inner, w1)?;
    let ff = tape.add_row(ff, b1)?;

    let sum2 = tape.add(x1, ff)?;
    let ln2_g = bound.var(&format!("block.{blk}.ln2.gain"))?;
    let ln2_b = bound.var(&format!("block.{blk}.ln2.bias"))?;
    Ok(tape.layer_norm_rows(sum2, ln2_g, ln2_b)?)
}

/// Packing for a single graph treated as a one-record batch.
fn single_packing(n: usize) -> Packing {
    Packing {
        segments: vec![(0, n)],
        kv_rows: vec![[0, 1, 2]],
    }
}

/// Gathers the real-atom rows of a padded `[MAX_ATOMS, d]` tensor.
fn compact_from_padded(tape: &mut Tape, atoms: Var, mask: &[bool]) -> Result<(Var, usize)> {
    let idx = real_indices(mask);
    if idx.is_empty() {
        return Err(ModelError::Input("atom mask has no real atoms".into()));
    }
    let n = idx.len();
    Ok((tape.gather_rows(atoms, &idx)?, n))
}

/// Attention sublayer on one padded graph; returns the padded output (rows
/// for padded atoms exactly zero) and per-head attention weights.
pub fn aoa_attention(
    tape: &mut Tape,
    params: &ModelParams,
    blk: usize,
    atom_tokens: Var,
    omics_tokens: Var,
    atom_mask: &[bool],
) -> Result<(Var, Vec<Tensor>)> {
    let bound = BoundParams::bind(tape, &params.tensors);
    let (compact, n) = compact_from_padded(tape, atom_tokens, atom_mask)?;
    let packing = single_packing(n);
    let (out, mut weights) =
        aoa_packed(tape, &bound, &params.config, blk, compact, omics_tokens, &packing)?;
    let padded = pad_rows(tape, out, atom_mask.len())?;
    Ok((padded, weights.remove(0)))
}

/// One full transformer block on one padded graph; padded rows stay zero.
pub fn transformer_block(
    tape: &mut Tape,
    params: &ModelParams,
    blk: usize,
    atom_tokens: Var,
    omics_tokens: Var,
    atom_mask: &[bool],
) -> Result<Var> {
    let bound = BoundParams::bind(tape, &params.tensors);
    let (compact, n) = compact_from_padded(tape, atom_tokens, atom_mask)?;
    let packing = single_packing(n);
    let out = block_packed(
        tape,
        &bound,
        &params.config,
        blk,
        compact,
        omics_tokens,
        &packing,
    )?;
    pad_rows(tape, out, atom_mask.len())
}

/// Masked global pooling to the graph-level vector, shape `[1, d]`.
pub fn global_pool(
    tape: &mut Tape,
    atom_states: Var,
    atom_mask: &[bool],
    pool: PoolKind,
) -> Result<Var> {
    let (compact, _) = compact_from_padded(tape, atom_states, atom_mask)?;
    pool_rows(tape, compact, pool)
}

fn pool_rows(tape: &mut Tape, rows: Var, pool: PoolKind) -> Result<Var> {
    let d = tape.value(rows).cols();
    let pooled = match pool {
        PoolKind::Max => tape.max_pool_rows(rows)?,
        PoolKind::Mean => tape.mean_pool_rows(rows)?,
    };
    Ok(tape.reshape(pooled, vec![1, d])?)
}

/// Full forward pass over a batch of (drug, cell) pairs.
///
/// Deduplicates drugs and cells, runs the packed pipeline, and returns
/// per-record predictions `[batch, 1]`. Train mode updates batch-norm
/// running statistics and draws dropout masks from `rng`; eval mode touches
/// neither.
pub fn forward_batch<R: Rng>(
    tape: &mut Tape,
    params: &mut ModelParams,
    batch: &[(&PaddedDrugGraph, &OmicsProfile)],
    mode: Mode,
    rng: &mut R,
) -> Result<BatchForward> {
    let config = params.config.clone();
    let omics_dims = params.omics_dims;
    forward_inner(
        tape,
        &config,
        omics_dims,
        &params.tensors,
        &mut params.bn_states,
        batch,
        mode,
        rng,
    )
}

/// Eval-mode predictions for a batch; params are shared read-only.
pub fn predict_eval(
    params: &ModelParams,
    batch: &[(&PaddedDrugGraph, &OmicsProfile)],
) -> Result<Vec<f64>> {
    let mut bn = params.bn_states.clone();
    let mut tape = Tape::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let out = forward_inner(
        &mut tape,
        &params.config,
        params.omics_dims,
        &params.tensors,
        &mut bn,
        batch,
        Mode::Eval,
        &mut rng,
    )?;
    Ok(tape.value(out.predictions).data().to_vec())
}

#[allow(clippy::too_many_arguments)]
fn forward_inner<R: Rng>(
    tape: &mut Tape,
    cfg: &ModelConfig,
    omics_dims: (usize, usize, usize),
    tensors: &BTreeMap<String, Tensor>,
    bn_states: &mut BTreeMap<String, BatchNormState>,
    batch: &[(&PaddedDrugGraph, &OmicsProfile)],
    mode: Mode,
    rng: &mut R,
) -> Result<BatchForward> {
    if batch.is_empty() {
        return Err(ModelError::Input("empty batch".into()));
    }
    let (dm, de, dh) = omics_dims;
    for (_, p) in batch {
        if p.mutation.len() != dm || p.expression.len() != de || p.methylation.len() != dh {
            return Err(ModelError::Input(format!(
                "cell {}: omics dims do not match the model's ({dm}, {de}, {dh})",
                p.cell_id
            )));
        }
    }
    let bound = BoundParams::bind(tape, tensors);

    // Deduplicate drugs and cells in first-appearance order.
    let mut drug_ix: HashMap<&str, usize> = HashMap::new();
    let mut cell_ix: HashMap<&str, usize> = HashMap::new();
    let mut drugs: Vec<&PaddedDrugGraph> = Vec::new();
    let mut cells: Vec<&OmicsProfile> = Vec::new();
    let mut drug_of = Vec::with_capacity(batch.len());
    let mut cell_of = Vec::with_capacity(batch.len());
    for &(g, p) in batch {
        let di = *drug_ix.entry(g.drug_id.as_str()).or_insert_with(|| {
            drugs.push(g);
            drugs.len() - 1
        });
        let ci = *cell_ix.entry(p.cell_id.as_str()).or_insert_with(|| {
            cells.push(p);
            cells.len() - 1
        });
        drug_of.push(di);
        cell_of.push(ci);
    }

    // Encoders: one GCN per unique drug, one packed pass per omics channel.
    let mut atom_vars = Vec::with_capacity(drugs.len());
    for g in &drugs {
        atom_vars.push(gcn_compact(tape, &bound, cfg, g)?);
    }
    let omics_pack = omics_encode_packed(tape, &bound, cfg, &cells)?;

    // Pack all records' atom rows into one matrix.
    let mut segments = Vec::with_capacity(batch.len());
    let mut kv_rows = Vec::with_capacity(batch.len());
    let mut parts = Vec::with_capacity(batch.len());
    let mut offset = 0;
    for r in 0..batch.len() {
        let n = drugs[drug_of[r]].num_atoms;
        segments.push((offset, offset + n));
        offset += n;
        let c = cell_of[r];
        kv_rows.push([c, cells.len() + c, 2 * cells.len() + c]);
        parts.push(atom_vars[drug_of[r]]);
    }
    let packing = Packing { segments, kv_rows };
    let mut x = if parts.len() == 1 {
        parts[0]
    } else {
        tape.concat(0, &parts)?
    };

    for blk in 0..cfg.n_blocks {
        x = block_packed(tape, &bound, cfg, blk, x, omics_pack, &packing)?;
    }

    // Head sequences: atoms, zero padding to MAX_ATOMS, pooled vector.
    let mut seqs = Vec::with_capacity(batch.len());
    for &(lo, hi) in &packing.segments {
        let n = hi - lo;
        let rows_idx: Vec<usize> = (lo..hi).collect();
        let rows = tape.gather_rows(x, &rows_idx)?;
        let pooled = pool_rows(tape, rows, cfg.pool)?;
        let mut parts = vec![rows];
        if n < MAX_ATOMS {
            parts.push(tape.leaf(Tensor::zeros(vec![MAX_ATOMS - n, cfg.d_model])));
        }
        parts.push(pooled);
        let seq = tape.concat(0, &parts)?;
        let channels_first = tape.transpose(seq)?;
        seqs.push(tape.reshape(channels_first, vec![1, cfg.d_model, HEAD_SEQ_LEN])?);
    }
    let mut h = if seqs.len() == 1 {
        seqs[0]
    } else {
        tape.concat(0, &seqs)?
    };

    for i in 0..cfg.conv_channels.len() {
        let w = bound.var(&format!("conv.{i}.weight"))?;
        let b = bound.var(&format!("conv.{i}.bias"))?;
        let gamma = bound.var(&format!("conv.{i}.bn.gamma"))?;
        let beta = bound.var(&format!("conv.{i}.bn.beta"))?;
        let key = format!("conv.{i}.bn");
        let state = bn_states
            .get_mut(&key)
            .ok_or(ModelError::MissingParameter(key))?;
        h = tape.conv1d(h, w, CONV_STRIDE)?;
        h = tape.channel_bias(h, b)?;
        h = tape.batch_norm(h, gamma, beta, state, mode)?;
        h = tape.relu(h)?;
        h = tape.dropout(h, cfg.dropout_rate, rng, mode)?;
    }

    let flat_w = cfg.head_input_width()?;
    let flat = tape.reshape(h, vec![batch.len(), flat_w])?;
    let head_w = bound.var("head.weight")?;
    let head_b = bound.var("head.bias")?;
    let scores = tape.matmul(flat, head_w)?;
    let predictions = tape.add_row(scores, head_b)?;
    Ok(BatchForward { predictions, bound })
}
