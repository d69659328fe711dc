//! Correlation and error metrics.

use super::{EvalError, Result};

fn check_paired(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(EvalError::Input(format!(
            "paired inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if let Some(bad) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(EvalError::Input(format!("non-finite value {bad}")));
    }
    Ok(())
}

/// Product-moment correlation.
///
/// Requires at least two points; a constant argument makes the value
/// undefined and is reported as [`EvalError::ZeroVariance`] so callers can
/// skip rather than coerce.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_paired(x, y)?;
    let n = x.len();
    if n < 2 {
        return Err(EvalError::Input(format!(
            "pearson needs at least 2 points, got {n}"
        )));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Average ranks (1-based); tied runs share the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite values"));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) hold one tied run.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson on average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_paired(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Root mean squared error.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_paired(pred, truth)?;
    if pred.is_empty() {
        return Err(EvalError::Input("rmse of an empty list".into()));
    }
    let ss: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((ss / pred.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn pearson_on_exact_lines() {
        assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap(),
            -1.0,
            epsilon = 1e-15
        );
    }

    /// Hand evaluation: x=[1,2,3], y=[1,3,2] has covariance 1/2 against
    /// variances 2/3 and 2/3 (biased), giving 0.5.
    #[test]
    fn pearson_hand_case() {
        assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn pearson_rejects_degenerate_inputs() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(EvalError::ZeroVariance)
        ));
        assert!(matches!(
            pearson(&[1.0], &[2.0]),
            Err(EvalError::Input(_))
        ));
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ranks_average_over_ties() {
        assert_eq!(
            average_ranks(&[1.0, 2.0, 2.0, 3.0]),
            vec![1.0, 2.5, 2.5, 4.0]
        );
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
        assert_eq!(average_ranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn spearman_sees_monotone_maps_as_perfect() {
        let x: [f64; 5] = [0.5, -1.0, 2.0, 1.25, -0.25];
        let cubed: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
        assert_abs_diff_eq!(spearman(&x, &cubed).unwrap(), 1.0, epsilon = 1e-15);
        let mut rev = x.to_vec();
        rev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut sorted = x.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(spearman(&sorted, &rev).unwrap(), -1.0, epsilon = 1e-15);
    }

    /// Tie handling against the brute-force rank-then-pearson oracle.
    #[test]
    fn spearman_matches_rank_then_pearson_oracle() {
        let x = [1.0, 2.0, 2.0, 3.0];
        let y = [1.0, 2.0, 3.0, 4.0];
        let oracle = pearson(&[1.0, 2.5, 2.5, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(spearman(&x, &y).unwrap(), oracle);
    }

    #[test]
    fn rmse_hand_cases() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(),
            12.5f64.sqrt(),
            epsilon = 1e-15
        );
        assert!(rmse(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn correlations_stay_in_range(
            pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..40)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            for r in [pearson(&x, &y), spearman(&x, &y)] {
                match r {
                    Ok(v) => prop_assert!(v.abs() <= 1.0 + 1e-12),
                    Err(EvalError::ZeroVariance) => {}
                    Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
                }
            }
        }

        #[test]
        fn pearson_ignores_positive_affine_maps(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..20),
            a in 0.1f64..5.0,
            b in -3.0f64..3.0,
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let mapped: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            match (pearson(&x, &y), pearson(&mapped, &y)) {
                (Ok(r1), Ok(r2)) => prop_assert!((r1 - r2).abs() <= 1e-12),
                (Err(_), Err(_)) => {}
                (r1, r2) => return Err(TestCaseError::fail(format!("{r1:?} vs {r2:?}"))),
            }
        }

        #[test]
        fn rmse_of_constant_shift_is_the_shift(
            x in proptest::collection::vec(-50.0f64..50.0, 1..30),
            c in -20.0f64..20.0,
        ) {
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let r = rmse(&shifted, &x).unwrap();
            prop_assert!((r - c.abs()).abs() <= 1e-9 * (1.0 + c.abs()));
        }

        #[test]
        fn spearman_is_one_for_strictly_increasing_maps(
            xs in proptest::collection::hash_set(-1000i64..1000, 3..25)
        ) {
            let x: Vec<f64> = xs.iter().map(|&v| v as f64).collect();
            let fx: Vec<f64> = x.iter().map(|v| v.exp().atan() + v * 3.0).collect();
            prop_assert!((spearman(&x, &fx).unwrap() - 1.0).abs() <= 1e-12);
        }
    }
}
