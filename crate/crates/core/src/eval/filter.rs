//! Per-drug PCC threshold filtering across models, and the paired scatter
//! export used to compare two models drug by drug.

use super::{DrugStat, EvalError, Result};
use std::collections::HashMap;
use std::path::Path;

/// Minimum per-drug sample count in external-validation analyses.
pub const EXTERNAL_MIN_SAMPLES: usize = 10;

/// Keeps a drug iff at least one model scores it at or above `p`.
///
/// Drugs with fewer than [`EXTERNAL_MIN_SAMPLES`] samples are dropped
/// regardless. Tables are per-model `(drug, n, pcc)` rows over a shared
/// drug universe; survivors come back in first-table order, then any
/// drugs only later tables mention.
pub fn pcc_threshold_filter(tables: &[&[DrugStat]], p: f64) -> Vec<String> {
    let mut order: Vec<&str> = Vec::new();
    let mut best: HashMap<&str, (usize, f64)> = HashMap::new();
    for table in tables {
        for stat in *table {
            let entry = best.entry(stat.drug_id.as_str()).or_insert_with(|| {
                order.push(stat.drug_id.as_str());
                (stat.n, f64::NEG_INFINITY)
            });
            entry.0 = entry.0.max(stat.n);
            entry.1 = entry.1.max(stat.pcc);
        }
    }
    order
        .into_iter()
        .filter(|id| {
            let (n, top) = best[id];
            n >= EXTERNAL_MIN_SAMPLES && top >= p
        })
        .map(str::to_string)
        .collect()
}

/// Writes `drug_id,pcc_model_a,pcc_model_b` rows for drugs both tables
/// score, in `table_a` order.
pub fn write_scatter_csv(path: &Path, table_a: &[DrugStat], table_b: &[DrugStat]) -> Result<()> {
    let io_err = |source: std::io::Error| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let b_by_id: HashMap<&str, f64> = table_b
        .iter()
        .map(|s| (s.drug_id.as_str(), s.pcc))
        .collect();
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(std::io::Error::other(e)))?;
    w.write_record(["drug_id", "pcc_model_a", "pcc_model_b"])
        .map_err(|e| io_err(std::io::Error::other(e)))?;
    for a in table_a {
        if let Some(&b) = b_by_id.get(a.drug_id.as_str()) {
            w.write_record([
                a.drug_id.clone(),
                a.pcc.to_string(),
                b.to_string(),
            ])
            .map_err(|e| io_err(std::io::Error::other(e)))?;
        }
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stat(id: &str, n: usize, pcc: f64) -> DrugStat {
        DrugStat {
            drug_id: id.into(),
            n,
            pcc,
        }
    }

    #[test]
    fn keeps_a_drug_any_model_scores_well() {
        let a = [stat("d1", 12, 0.25), stat("d2", 15, 0.1)];
        let b = [stat("d1", 12, 0.05), stat("d2", 15, 0.15)];
        let kept = pcc_threshold_filter(&[&a, &b], 0.2);
        assert_eq!(kept, vec!["d1".to_string()]);
    }

    #[test]
    fn zero_threshold_keeps_nonnegative_drugs() {
        let a = [stat("d1", 10, -0.4), stat("d2", 10, 0.0), stat("d3", 10, 0.9)];
        let kept = pcc_threshold_filter(&[&a], 0.0);
        assert_eq!(kept, vec!["d2".to_string(), "d3".to_string()]);
    }

    #[test]
    fn impossible_threshold_empties_the_list() {
        let a = [stat("d1", 30, 1.0), stat("d2", 30, 0.99)];
        assert!(pcc_threshold_filter(&[&a], 1.01).is_empty());
    }

    #[test]
    fn small_sample_drugs_are_dropped() {
        let a = [stat("d1", 9, 0.95), stat("d2", 10, 0.95)];
        let kept = pcc_threshold_filter(&[&a], 0.5);
        assert_eq!(kept, vec!["d2".to_string()]);
    }

    #[test]
    fn scatter_csv_joins_on_drug_id() {
        let dir = std::env::temp_dir().join(format!("scatter-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("scatter.csv");
        let a = [stat("d1", 12, 0.5), stat("d2", 12, 0.25)];
        let b = [stat("d2", 12, 0.75), stat("d3", 12, 0.1)];
        write_scatter_csv(&path, &a, &b).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "drug_id,pcc_model_a,pcc_model_b\nd2,0.25,0.75\n");
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
