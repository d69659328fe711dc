//! Data model, preprocessing, cross-validation splits, file formats, and a
//! seeded synthetic generator.
//!
//! A [`Dataset`] holds drugs (molecular graphs), cell lines (multi-omics
//! profiles), and response records (drug, cell, ln IC50 triples), plus index
//! maps from ids to positions. Everything is immutable after load, so
//! datasets are safe to share read-only across parallel fold workers.

mod io;
mod preprocess;
mod split;
mod synth;

pub use io::{load_dataset, load_inputs, write_dataset, LoadReport};
pub use preprocess::{median_impute, preprocess_omics, quantile_normalize, RawOmics};
pub use split::{make_split, SplitMode, SplitPlan};
pub use synth::{synth_generate, SynthConfig, SynthTruth};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fixed atom-feature width (the per-atom property vector length).
pub const ATOM_FEATURES: usize = 75;
/// Fixed atom budget graphs are padded to.
pub const MAX_ATOMS: usize = 100;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("drug {drug_id}: {reason}")]
    BadDrug { drug_id: String, reason: String },
    #[error("cell {cell_id}: {reason}")]
    BadCell { cell_id: String, reason: String },
    #[error("adjacency must be symmetric (rows {0} and {1} disagree)")]
    AsymmetricAdjacency(usize, usize),
    #[error("drug {drug_id} has {atoms} atoms, exceeding the budget of {MAX_ATOMS}")]
    TooManyAtoms { drug_id: String, atoms: usize },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("split: {0}")]
    Split(String),
    #[error("synth: {0}")]
    Synth(String),
    #[error("preprocess: {0}")]
    Preprocess(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// One compound: per-atom feature rows plus a symmetric bond adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct DrugGraph {
    pub drug_id: String,
    /// `num_atoms × ATOM_FEATURES`, row-major.
    pub atom_features: Vec<f64>,
    /// Symmetric `num_atoms × num_atoms` bond matrix; no self-loops stored.
    pub adjacency: Vec<bool>,
    pub num_atoms: usize,
}

impl DrugGraph {
    pub fn new(
        drug_id: String,
        num_atoms: usize,
        atom_features: Vec<f64>,
        adjacency: Vec<bool>,
    ) -> Result<Self> {
        if num_atoms == 0 {
            return Err(DatasetError::BadDrug {
                drug_id,
                reason: "no atoms".into(),
            });
        }
        if atom_features.len() != num_atoms * ATOM_FEATURES {
            return Err(DatasetError::BadDrug {
                drug_id,
                reason: format!(
                    "feature matrix holds {} values, expected {num_atoms}x{ATOM_FEATURES}",
                    atom_features.len()
                ),
            });
        }
        if adjacency.len() != num_atoms * num_atoms {
            return Err(DatasetError::BadDrug {
                drug_id,
                reason: "adjacency size does not match atom count".into(),
            });
        }
        for i in 0..num_atoms {
            for j in (i + 1)..num_atoms {
                if adjacency[i * num_atoms + j] != adjacency[j * num_atoms + i] {
                    return Err(DatasetError::AsymmetricAdjacency(i, j));
                }
            }
        }
        Ok(Self {
            drug_id,
            atom_features,
            adjacency,
            num_atoms,
        })
    }
}

/// A drug graph normalized and zero-padded to the fixed atom budget.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedDrugGraph {
    pub drug_id: String,
    /// `MAX_ATOMS × ATOM_FEATURES`; rows past `num_atoms` are zero.
    pub atom_features: Vec<f64>,
    /// `MAX_ATOMS × MAX_ATOMS` symmetric-normalized adjacency with
    /// self-connections; rows/cols past `num_atoms` are zero.
    pub norm_adjacency: Vec<f64>,
    /// True exactly for the first `num_atoms` positions.
    pub atom_mask: Vec<bool>,
    pub num_atoms: usize,
}

/// One cell line's mutation / expression / methylation vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmicsProfile {
    pub cell_id: String,
    /// Binary (0/1) mutation indicator vector.
    pub mutation: Vec<f64>,
    pub expression: Vec<f64>,
    pub methylation: Vec<f64>,
}

/// One (drug, cell line, ln IC50) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub drug_id: String,
    pub cell_id: String,
    pub ln_ic50: f64,
}

/// Generator or parser output before padding: raw graphs and ready-made
/// omics profiles.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub drugs: Vec<DrugGraph>,
    pub cells: Vec<OmicsProfile>,
    pub records: Vec<ResponseRecord>,
}

impl RawDataset {
    /// Normalizes + pads every graph and builds the record index maps.
    /// Returns the dataset and the number of dropped records.
    pub fn into_dataset(self) -> Result<(Dataset, usize)> {
        let mut padded = Vec::with_capacity(self.drugs.len());
        for g in &self.drugs {
            padded.push(pad_graph(g)?);
        }
        Ok(Dataset::assemble(padded, self.cells, self.records))
    }
}

/// Immutable bundle of drugs, cells, and responses with index maps.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub drugs: Vec<PaddedDrugGraph>,
    pub cells: Vec<OmicsProfile>,
    pub records: Vec<ResponseRecord>,
    /// Per record: (index into drugs, index into cells).
    pub record_index: Vec<(usize, usize)>,
}

impl Dataset {
    /// Builds index maps, dropping records whose drug or cell is missing.
    /// Returns the dataset and the number of dropped records.
    pub fn assemble(
        drugs: Vec<PaddedDrugGraph>,
        cells: Vec<OmicsProfile>,
        records: Vec<ResponseRecord>,
    ) -> (Self, usize) {
        let drug_pos: std::collections::HashMap<&str, usize> = drugs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.drug_id.as_str(), i))
            .collect();
        let cell_pos: std::collections::HashMap<&str, usize> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| (c.cell_id.as_str(), i))
            .collect();
        let mut kept = Vec::with_capacity(records.len());
        let mut record_index = Vec::with_capacity(records.len());
        let mut dropped = 0;
        for r in records {
            match (
                drug_pos.get(r.drug_id.as_str()),
                cell_pos.get(r.cell_id.as_str()),
            ) {
                (Some(&d), Some(&c)) => {
                    record_index.push((d, c));
                    kept.push(r);
                }
                _ => dropped += 1,
            }
        }
        (
            Self {
                drugs,
                cells,
                records: kept,
                record_index,
            },
            dropped,
        )
    }

    pub fn n_drugs(&self) -> usize {
        self.drugs.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_records(&self) -> usize {
        self.records.len()
    }

    /// Omics vector widths as (mutation, expression, methylation).
    pub fn omics_dims(&self) -> (usize, usize, usize) {
        self.cells.first().map_or((0, 0, 0), |c| {
            (c.mutation.len(), c.expression.len(), c.methylation.len())
        })
    }
}

/// Symmetric normalization D^{−1/2}·(A+I)·D^{−1/2} of a bond adjacency.
///
/// Degrees are the row sums of A+I, so an isolated atom has degree 1 and
/// maps to a 1 on the diagonal.
pub fn normalize_adjacency(adjacency: &[bool], n: usize) -> Result<Vec<f64>> {
    assert_eq!(adjacency.len(), n * n, "adjacency must be n x n");
    for i in 0..n {
        for j in (i + 1)..n {
            if adjacency[i * n + j] != adjacency[j * n + i] {
                return Err(DatasetError::AsymmetricAdjacency(i, j));
            }
        }
    }
    let mut degree = vec![0.0f64; n];
    for i in 0..n {
        let mut d = 1.0; // self-connection
        for j in 0..n {
            if i != j && adjacency[i * n + j] {
                d += 1.0;
            }
        }
        degree[i] = d;
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|&d| 1.0 / d.sqrt()).collect();
    let mut out = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let a = if i == j || adjacency[i * n + j] {
                1.0
            } else {
                0.0
            };
            out[i * n + j] = a * inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Ok(out)
}

/// Normalizes (before padding, so padded rows stay exactly zero) and pads a
/// drug graph to the fixed atom budget.
pub fn pad_graph(g: &DrugGraph) -> Result<PaddedDrugGraph> {
    if g.num_atoms > MAX_ATOMS {
        return Err(DatasetError::TooManyAtoms {
            drug_id: g.drug_id.clone(),
            atoms: g.num_atoms,
        });
    }
    let n = g.num_atoms;
    let norm = normalize_adjacency(&g.adjacency, n)?;
    let mut atom_features = vec![0.0; MAX_ATOMS * ATOM_FEATURES];
    for i in 0..n {
        atom_features[i * ATOM_FEATURES..(i + 1) * ATOM_FEATURES]
            .copy_from_slice(&g.atom_features[i * ATOM_FEATURES..(i + 1) * ATOM_FEATURES]);
    }
    let mut norm_adjacency = vec![0.0; MAX_ATOMS * MAX_ATOMS];
    for i in 0..n {
        norm_adjacency[i * MAX_ATOMS..i * MAX_ATOMS + n].copy_from_slice(&norm[i * n..(i + 1) * n]);
    }
    let mut atom_mask = vec![false; MAX_ATOMS];
    atom_mask[..n].fill(true);
    Ok(PaddedDrugGraph {
        drug_id: g.drug_id.clone(),
        atom_features,
        norm_adjacency,
        atom_mask,
        num_atoms: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn path3() -> DrugGraph {
        // Atoms 0-1-2 bonded in a path.
        let mut adj = vec![false; 9];
        for &(i, j) in &[(0usize, 1usize), (1, 2)] {
            adj[i * 3 + j] = true;
            adj[j * 3 + i] = true;
        }
        DrugGraph::new("p3".into(), 3, vec![0.0; 3 * ATOM_FEATURES], adj).unwrap()
    }

    #[test]
    fn single_atom_normalizes_to_one() {
        let out = normalize_adjacency(&[false], 1).unwrap();
        assert_eq!(out, vec![1.0]);
    }

    #[test]
    fn bonded_pair_normalizes_to_halves() {
        let adj = vec![false, true, true, false];
        let out = normalize_adjacency(&adj, 2).unwrap();
        for v in out {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn three_atom_path_matches_hand_normalization() {
        let g = path3();
        let out = normalize_adjacency(&g.adjacency, 3).unwrap();
        let s6 = 1.0 / 6.0f64.sqrt();
        let expected = [0.5, s6, 0.0, s6, 1.0 / 3.0, s6, 0.0, s6, 0.5];
        for (a, e) in out.iter().zip(expected) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-15);
        }
    }

    #[test]
    fn normalized_adjacency_is_symmetric() {
        let g = path3();
        let out = normalize_adjacency(&g.adjacency, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(out[i * 3 + j], out[j * 3 + i]);
            }
        }
    }

    #[test]
    fn asymmetric_adjacency_is_rejected() {
        let mut adj = vec![false; 4];
        adj[1] = true; // (0,1) set, (1,0) not
        assert!(matches!(
            normalize_adjacency(&adj, 2),
            Err(DatasetError::AsymmetricAdjacency(0, 1))
        ));
    }

    #[test]
    fn pad_sets_mask_and_zero_padding() {
        let padded = pad_graph(&path3()).unwrap();
        assert_eq!(padded.atom_mask[..3], [true, true, true]);
        assert!(padded.atom_mask[3..].iter().all(|&m| !m));
        // Everything outside the top-left block is zero.
        let pad_sum: f64 = padded
            .norm_adjacency
            .iter()
            .enumerate()
            .filter(|(idx, _)| idx / MAX_ATOMS >= 3 || idx % MAX_ATOMS >= 3)
            .map(|(_, v)| v.abs())
            .sum();
        assert_eq!(pad_sum, 0.0);
    }

    #[test]
    fn full_budget_graph_has_no_padding() {
        let n = MAX_ATOMS;
        let mut adj = vec![false; n * n];
        for i in 0..n - 1 {
            adj[i * n + i + 1] = true;
            adj[(i + 1) * n + i] = true;
        }
        let g = DrugGraph::new("big".into(), n, vec![1.0; n * ATOM_FEATURES], adj).unwrap();
        let padded = pad_graph(&g).unwrap();
        assert!(padded.atom_mask.iter().all(|&m| m));
    }

    #[test]
    fn oversized_graph_is_rejected_with_id() {
        let n = MAX_ATOMS + 1;
        let g = DrugGraph::new(
            "too-big".into(),
            n,
            vec![0.0; n * ATOM_FEATURES],
            vec![false; n * n],
        )
        .unwrap();
        match pad_graph(&g) {
            Err(DatasetError::TooManyAtoms { drug_id, atoms }) => {
                assert_eq!(drug_id, "too-big");
                assert_eq!(atoms, n);
            }
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn assemble_drops_unresolvable_records() {
        let padded = pad_graph(&path3()).unwrap();
        let cell = OmicsProfile {
            cell_id: "c1".into(),
            mutation: vec![0.0, 1.0],
            expression: vec![0.5, 0.2],
            methylation: vec![0.1, 0.9],
        };
        let records = vec![
            ResponseRecord {
                drug_id: "p3".into(),
                cell_id: "c1".into(),
                ln_ic50: 1.0,
            },
            ResponseRecord {
                drug_id: "p3".into(),
                cell_id: "ghost".into(),
                ln_ic50: 2.0,
            },
        ];
        let (ds, dropped) = Dataset::assemble(vec![padded], vec![cell], records);
        assert_eq!(ds.n_records(), 1);
        assert_eq!(dropped, 1);
        assert_eq!(ds.record_index[0], (0, 0));
    }
}
