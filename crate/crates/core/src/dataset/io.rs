//! File formats: JSON-lines drugs and omics, CSV responses, JSON split
//! plans.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::preprocess::{preprocess_omics, RawOmics};
use super::{
    pad_graph, Dataset, DatasetError, DrugGraph, RawDataset, ResponseRecord, Result, SplitPlan,
    ATOM_FEATURES,
};

/// What `load_dataset` kept and what it had to drop.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub drugs: usize,
    pub cells: usize,
    pub records_loaded: usize,
    /// Response rows whose drug or cell id did not resolve.
    pub records_dropped: usize,
}

#[derive(Serialize, Deserialize)]
struct DrugRow {
    drug_id: String,
    /// One 75-number property vector per atom.
    atoms: Vec<Vec<f64>>,
    /// Undirected bonds as [i, j] atom index pairs.
    bonds: Vec<[usize; 2]>,
}

#[derive(Serialize, Deserialize)]
struct OmicsHeader {
    mutation_dim: usize,
    expression_dim: usize,
    methylation_dim: usize,
    /// True when expression is already log2 + quantile normalized.
    expression_normalized: bool,
}

#[derive(Serialize, Deserialize)]
struct OmicsRow {
    cell_id: String,
    mutation: Vec<f64>,
    expression: Vec<f64>,
    /// `null` entries are missing measurements.
    methylation: Vec<Option<f64>>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })
}

fn parse_err(path: &Path, line: usize, reason: impl std::fmt::Display) -> DatasetError {
    DatasetError::Parse {
        path: path.display().to_string(),
        line,
        reason: reason.to_string(),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_drugs(path: &Path) -> Result<Vec<DrugGraph>> {
    let mut drugs = Vec::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| parse_err(path, line_no, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: DrugRow =
            serde_json::from_str(&line).map_err(|e| parse_err(path, line_no, e))?;
        let n = row.atoms.len();
        if n == 0 {
            return Err(parse_err(path, line_no, format!("drug {} has no atoms", row.drug_id)));
        }
        let mut features = Vec::with_capacity(n * ATOM_FEATURES);
        for (a, atom) in row.atoms.iter().enumerate() {
            if atom.len() != ATOM_FEATURES {
                return Err(parse_err(
                    path,
                    line_no,
                    format!(
                        "drug {} atom {a} has {} features, expected {ATOM_FEATURES}",
                        row.drug_id,
                        atom.len()
                    ),
                ));
            }
            features.extend_from_slice(atom);
        }
        let mut adjacency = vec![false; n * n];
        for &[i, j] in &row.bonds {
            if i >= n || j >= n || i == j {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("drug {} has invalid bond [{i}, {j}]", row.drug_id),
                ));
            }
            adjacency[i * n + j] = true;
            adjacency[j * n + i] = true;
        }
        drugs.push(
            DrugGraph::new(row.drug_id, n, features, adjacency)
                .map_err(|e| parse_err(path, line_no, e))?,
        );
    }
    Ok(drugs)
}

fn read_omics(path: &Path) -> Result<(Vec<RawOmics>, bool)> {
    let mut lines = open(path)?.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| {
        parse_err(path, 1, "missing omics header line")
    })?;
    let first = first.map_err(|e| parse_err(path, 1, e))?;
    let header: OmicsHeader =
        serde_json::from_str(&first).map_err(|e| parse_err(path, 1, e))?;
    let mut cells = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| parse_err(path, line_no, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: OmicsRow =
            serde_json::from_str(&line).map_err(|e| parse_err(path, line_no, e))?;
        for (what, actual, expected) in [
            ("mutation", row.mutation.len(), header.mutation_dim),
            ("expression", row.expression.len(), header.expression_dim),
            ("methylation", row.methylation.len(), header.methylation_dim),
        ] {
            if actual != expected {
                return Err(parse_err(
                    path,
                    line_no,
                    format!(
                        "cell {} {what} has {actual} entries, header declares {expected}",
                        row.cell_id
                    ),
                ));
            }
        }
        cells.push(RawOmics {
            cell_id: row.cell_id,
            mutation: row.mutation,
            expression: row.expression,
            methylation: row.methylation,
        });
    }
    Ok((cells, header.expression_normalized))
}

fn read_responses(path: &Path) -> Result<Vec<ResponseRecord>> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    let mut records = Vec::new();
    for result in reader.deserialize::<ResponseRecord>() {
        let rec = result.map_err(|e| {
            let line = e
                .position()
                .map_or(0, |p| p.line() as usize);
            parse_err(path, line, e)
        })?;
        if !rec.ln_ic50.is_finite() {
            return Err(parse_err(
                path,
                0,
                format!("non-finite ln_ic50 for ({}, {})", rec.drug_id, rec.cell_id),
            ));
        }
        records.push(rec);
    }
    Ok(records)
}

/// Loads just the feature side of a dataset: padded drug graphs and
/// preprocessed omics profiles, without any response file.
pub fn load_inputs(
    drugs_path: &Path,
    omics_path: &Path,
) -> Result<(Vec<super::PaddedDrugGraph>, Vec<super::OmicsProfile>)> {
    let drugs = read_drugs(drugs_path)?;
    let (raw_cells, expression_normalized) = read_omics(omics_path)?;
    let cells = preprocess_omics(raw_cells, expression_normalized)?;
    let mut padded = Vec::with_capacity(drugs.len());
    for g in &drugs {
        padded.push(pad_graph(g)?);
    }
    Ok((padded, cells))
}

/// Loads, preprocesses, pads, and indexes a dataset from its three files.
///
/// Response rows referencing unknown drugs or cells are dropped and counted
/// in the report; malformed rows are hard errors with line numbers.
pub fn load_dataset(
    drugs_path: &Path,
    omics_path: &Path,
    responses_path: &Path,
) -> Result<(Dataset, LoadReport)> {
    let drugs = read_drugs(drugs_path)?;
    let (raw_cells, expression_normalized) = read_omics(omics_path)?;
    let cells = preprocess_omics(raw_cells, expression_normalized)?;
    let records = read_responses(responses_path)?;

    let mut padded = Vec::with_capacity(drugs.len());
    for g in &drugs {
        padded.push(pad_graph(g)?);
    }
    let loaded = records.len();
    let (dataset, dropped) = Dataset::assemble(padded, cells, records);
    let report = LoadReport {
        drugs: dataset.n_drugs(),
        cells: dataset.n_cells(),
        records_loaded: dataset.n_records(),
        records_dropped: dropped,
    };
    debug_assert_eq!(loaded, report.records_loaded + report.records_dropped);
    Ok((dataset, report))
}

/// Writes a raw dataset as drugs/omics/responses files.
///
/// Synthetic omics are emitted with `expression_normalized = true` so a
/// round-trip through `load_dataset` reproduces the generated values
/// exactly.
pub fn write_dataset(
    raw: &RawDataset,
    drugs_path: &Path,
    omics_path: &Path,
    responses_path: &Path,
) -> Result<()> {
    let mut w = create(drugs_path)?;
    for g in &raw.drugs {
        let n = g.num_atoms;
        let atoms: Vec<Vec<f64>> = (0..n)
            .map(|i| g.atom_features[i * ATOM_FEATURES..(i + 1) * ATOM_FEATURES].to_vec())
            .collect();
        let mut bonds = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if g.adjacency[i * n + j] {
                    bonds.push([i, j]);
                }
            }
        }
        let row = DrugRow {
            drug_id: g.drug_id.clone(),
            atoms,
            bonds,
        };
        serde_json::to_writer(&mut w, &row).map_err(|e| parse_err(drugs_path, 0, e))?;
        w.write_all(b"\n").map_err(|e| io_err(drugs_path, e))?;
    }
    w.flush().map_err(|e| io_err(drugs_path, e))?;

    let mut w = create(omics_path)?;
    let (dm, de, dh) = raw
        .cells
        .first()
        .map_or((0, 0, 0), |c| (c.mutation.len(), c.expression.len(), c.methylation.len()));
    let header = OmicsHeader {
        mutation_dim: dm,
        expression_dim: de,
        methylation_dim: dh,
        expression_normalized: true,
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| parse_err(omics_path, 0, e))?;
    w.write_all(b"\n").map_err(|e| io_err(omics_path, e))?;
    for c in &raw.cells {
        let row = OmicsRow {
            cell_id: c.cell_id.clone(),
            mutation: c.mutation.clone(),
            expression: c.expression.clone(),
            methylation: c.methylation.iter().map(|&v| Some(v)).collect(),
        };
        serde_json::to_writer(&mut w, &row).map_err(|e| parse_err(omics_path, 0, e))?;
        w.write_all(b"\n").map_err(|e| io_err(omics_path, e))?;
    }
    w.flush().map_err(|e| io_err(omics_path, e))?;

    let mut w = csv::Writer::from_writer(create(responses_path)?);
    for r in &raw.records {
        w.serialize(r)
            .map_err(|e| parse_err(responses_path, 0, e))?;
    }
    w.flush().map_err(|e| io_err(responses_path, e))?;
    Ok(())
}

impl SplitPlan {
    /// Serializes the plan as pretty JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| parse_err(path, 0, e))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
        w.flush().map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = open(path)?;
        serde_json::from_reader(r).map_err(|e| parse_err(path, 0, e))
    }
}
