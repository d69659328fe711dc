//! Omics preprocessing: expression log2 + quantile normalization,
//! methylation median imputation, mutation validation.

use super::{DatasetError, OmicsProfile, Result};

/// One cell line's omics as parsed from disk, before preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawOmics {
    pub cell_id: String,
    pub mutation: Vec<f64>,
    pub expression: Vec<f64>,
    /// `None` marks a missing measurement to impute.
    pub methylation: Vec<Option<f64>>,
}

/// Quantile-normalizes rows (one row per cell) to a shared distribution.
///
/// The reference distribution is the across-cell mean of each sorted rank;
/// tied values within a cell receive the mean of the reference quantiles
/// they span, so equal inputs stay equal.
pub fn quantile_normalize(rows: &mut [Vec<f64>]) {
    let m = rows.len();
    if m == 0 {
        return;
    }
    let n = rows[0].len();
    if n == 0 {
        return;
    }
    // Sort order per row, then the rank-wise mean as reference.
    let orders: Vec<Vec<usize>> = rows
        .iter()
        .map(|row| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).expect("finite expression"));
            idx
        })
        .collect();
    let mut reference = vec![0.0; n];
    for (row, order) in rows.iter().zip(&orders) {
        for (rank, &j) in order.iter().enumerate() {
            reference[rank] += row[j];
        }
    }
    for r in reference.iter_mut() {
        *r /= m as f64;
    }
    for (row, order) in rows.iter_mut().zip(&orders) {
        let mut out = vec![0.0; n];
        let mut lo = 0;
        while lo < n {
            // Ranks [lo, hi) hold one tied run of input values.
            let mut hi = lo + 1;
            while hi < n && row[order[hi]] == row[order[lo]] {
                hi += 1;
            }
            let mean = reference[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            for &j in &order[lo..hi] {
                out[j] = mean;
            }
            lo = hi;
        }
        *row = out;
    }
}

/// Replaces missing methylation entries by the per-feature median over
/// cells. Returns the filled rows and the number of imputed entries.
pub fn median_impute(rows: &[Vec<Option<f64>>]) -> Result<(Vec<Vec<f64>>, usize)> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    let mut medians = vec![0.0; n];
    for j in 0..n {
        let mut present: Vec<f64> = rows.iter().filter_map(|row| row[j]).collect();
        if present.is_empty() {
            return Err(DatasetError::Preprocess(format!(
                "methylation feature {j} is missing in every cell"
            )));
        }
        present.sort_by(|a, b| a.partial_cmp(b).expect("finite methylation"));
        let mid = present.len() / 2;
        medians[j] = if present.len() % 2 == 1 {
            present[mid]
        } else {
            0.5 * (present[mid - 1] + present[mid])
        };
    }
    let mut imputed = 0;
    let mut out = Vec::with_capacity(m);
    for row in rows.iter() {
        let mut filled = Vec::with_capacity(n);
        for (j, v) in row.iter().enumerate() {
            match v {
                Some(x) => filled.push(*x),
                None => {
                    filled.push(medians[j]);
                    imputed += 1;
                }
            }
        }
        out.push(filled);
    }
    Ok((out, imputed))
}

/// Turns raw per-cell omics into model-ready profiles.
///
/// Mutation entries must already be 0/1. Expression is log2-transformed and
/// quantile-normalized across cells unless `expression_normalized` says the
/// input already went through that pipeline, in which case it passes
/// through untouched. Methylation gaps are median-imputed per feature.
pub fn preprocess_omics(
    raw: Vec<RawOmics>,
    expression_normalized: bool,
) -> Result<Vec<OmicsProfile>> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    let (dm, de, dh) = (
        raw[0].mutation.len(),
        raw[0].expression.len(),
        raw[0].methylation.len(),
    );
    for cell in &raw {
        if cell.mutation.len() != dm || cell.expression.len() != de || cell.methylation.len() != dh
        {
            return Err(DatasetError::BadCell {
                cell_id: cell.cell_id.clone(),
                reason: "omics dimensions disagree with the first cell".into(),
            });
        }
        if let Some(bad) = cell.mutation.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(DatasetError::BadCell {
                cell_id: cell.cell_id.clone(),
                reason: format!("non-binary mutation entry {bad}"),
            });
        }
        if !expression_normalized {
            if let Some(bad) = cell.expression.iter().find(|&&v| v <= 0.0) {
                return Err(DatasetError::BadCell {
                    cell_id: cell.cell_id.clone(),
                    reason: format!("expression value {bad} not positive (required before log2)"),
                });
            }
        }
    }

    let mut expression: Vec<Vec<f64>> = raw.iter().map(|c| c.expression.clone()).collect();
    if !expression_normalized {
        for row in expression.iter_mut() {
            for v in row.iter_mut() {
                *v = v.log2();
            }
        }
        quantile_normalize(&mut expression);
    }

    let methylation: Vec<Vec<Option<f64>>> = raw.iter().map(|c| c.methylation.clone()).collect();
    let (methylation, _imputed) = median_impute(&methylation)?;

    Ok(raw
        .into_iter()
        .zip(expression)
        .zip(methylation)
        .map(|((cell, expr), meth)| OmicsProfile {
            cell_id: cell.cell_id,
            mutation: cell.mutation,
            expression: expr,
            methylation: meth,
        })
        .collect())
}
