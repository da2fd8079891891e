//! Permutation/scale-invariant distances between parameter matrices and
//! prediction-accuracy scores.
//!
//! Columns of the observation matrix (and latent coordinates generally) are
//! identified only up to permutation and per-column scaling, so raw
//! entrywise comparisons are meaningless. [`subspace_distance`] matches
//! columns by absolute Pearson correlation through an exact linear
//! assignment and reports `log(n / best total correlation)`; the Amari error
//! covers the square-matrix case through `P = A^-1 B`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Optimal column matching between two matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    /// Column `j` of the first matrix is matched to column `permutation[j]`
    /// of the second.
    pub permutation: Vec<usize>,
    /// Sum of absolute correlations along the optimal matching.
    pub total_correlation: f64,
    /// `log(n / total_correlation)`; zero iff a perfect matching exists.
    pub distance: f64,
    /// Set when the total correlation is not positive, in which case the
    /// distance is reported as infinity.
    pub degenerate: bool,
}

/// Absolute Pearson correlations between the columns of `a` and `b`:
/// entry `(i, j)` is `|corr(a_i, b_j)|`. Sign flips are not penalized
/// because column signs are not identified in this model class.
pub fn column_correlation_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let m = a.nrows();
    let n = a.ncols();
    if m < 2 {
        return Err(Error::Invalid("correlation needs at least two rows".into()));
    }

    let standardize = |mat: &DMatrix<f64>, name: &str| -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(m, n);
        for j in 0..n {
            let col = mat.column(j);
            let mean = col.sum() / m as f64;
            let centered = col.map(|v| v - mean);
            let norm = centered.norm();
            if norm == 0.0 {
                return Err(Error::Invalid(format!(
                    "column {j} of {name} has zero variance"
                )));
            }
            out.set_column(j, &(centered / norm));
        }
        Ok(out)
    };
    let za = standardize(a, "first matrix")?;
    let zb = standardize(b, "second matrix")?;
    Ok(za.tr_mul(&zb).map(|v| v.abs()))
}

/// Exact minimum-cost linear assignment on a square cost matrix, O(n^3)
/// shortest-augmenting-path with potentials. Returns the permutation
/// (row `i` assigned to column `perm[i]`) and the optimal total cost.
pub fn hungarian_assign(cost: &DMatrix<f64>) -> Result<(Vec<usize>, f64)> {
    let n = cost.nrows();
    if cost.ncols() != n || n == 0 {
        return Err(Error::Dimension(format!(
            "cost matrix must be square and non-empty, got {}x{}",
            n,
            cost.ncols()
        )));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(
            "cost matrix contains non-finite entries".into(),
        ));
    }

    // 1-based arrays; p[j] is the row assigned to column j, column 0 is the
    // staging slot for the row currently being inserted.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[p[j] - 1] = j - 1;
    }
    let value = (0..n).map(|i| cost[(i, perm[i])]).sum();
    Ok((perm, value))
}

/// Permutation/scale-invariant distance between the column sets of two
/// matrices: maximizes the summed absolute correlation over all matchings
/// and returns `log(n / total)`.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<AssignmentResult> {
    let corr = column_correlation_matrix(a, b)?;
    let (permutation, neg_total) = hungarian_assign(&(-&corr))?;
    let total_correlation = -neg_total;
    let n = corr.nrows() as f64;
    if total_correlation <= 0.0 {
        return Ok(AssignmentResult {
            permutation,
            total_correlation,
            distance: f64::INFINITY,
            degenerate: true,
        });
    }
    Ok(AssignmentResult {
        permutation,
        total_correlation,
        distance: (n / total_correlation).ln(),
        degenerate: false,
    })
}

/// Amari error of `P = A^-1 B`: zero iff `P` is a scaled permutation, i.e.
/// iff `B` equals `A` up to column permutation and scaling.
pub fn amari_error(a: &DMatrix<f64>, a_hat: &DMatrix<f64>) -> Result<f64> {
    let n = a.nrows();
    if a.ncols() != n || a_hat.nrows() != n || a_hat.ncols() != n {
        return Err(Error::Dimension(
            "Amari error requires square matrices of equal size".into(),
        ));
    }
    let p = a
        .clone()
        .lu()
        .solve(a_hat)
        .ok_or_else(|| Error::Numerical("reference matrix is singular".into()))?;
    let abs = p.map(|v| v.abs());
    let mut total = 0.0;
    for i in 0..n {
        let row_max = abs.row(i).max();
        total += abs.row(i).sum() / row_max - 1.0;
    }
    for j in 0..n {
        let col_max = abs.column(j).max();
        total += abs.column(j).sum() / col_max - 1.0;
    }
    Ok(total)
}

/// Entrywise mean squared error and Pearson correlation of two equally
/// shaped matrices. The correlation is `None` when either flattened input
/// is constant (zero variance), while the MSE is always defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionScores {
    pub mse: f64,
    pub correlation: Option<f64>,
}

pub fn prediction_scores(y_true: &DMatrix<f64>, y_pred: &DMatrix<f64>) -> Result<PredictionScores> {
    if y_true.nrows() != y_pred.nrows() || y_true.ncols() != y_pred.ncols() {
        return Err(Error::Dimension(format!(
            "shape mismatch: {}x{} vs {}x{}",
            y_true.nrows(),
            y_true.ncols(),
            y_pred.nrows(),
            y_pred.ncols()
        )));
    }
    let n = (y_true.nrows() * y_true.ncols()) as f64;
    let mse = (y_true - y_pred).map(|v| v * v).sum() / n;

    let mean_t = y_true.sum() / n;
    let mean_p = y_pred.sum() / n;
    let mut cov = 0.0;
    let mut var_t = 0.0;
    let mut var_p = 0.0;
    for (t, p) in y_true.iter().zip(y_pred.iter()) {
        let dt = t - mean_t;
        let dp = p - mean_p;
        cov += dt * dp;
        var_t += dt * dt;
        var_p += dp * dp;
    }
    let correlation = if var_t == 0.0 || var_p == 0.0 {
        None
    } else {
        Some(cov / (var_t.sqrt() * var_p.sqrt()))
    };
    Ok(PredictionScores { mse, correlation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use itertools::Itertools;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn self_correlation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 10, 4);
        let corr = column_correlation_matrix(&a, &a).unwrap();
        for j in 0..4 {
            assert_relative_eq!(corr[(j, j)], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn correlation_ignores_sign_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 12, 3);
        let negated = -a.clone();
        let corr = column_correlation_matrix(&a, &negated).unwrap();
        for j in 0..3 {
            assert_relative_eq!(corr[(j, j)], 1.0, epsilon = 1e-12);
        }
        let mut scaled = a.clone();
        for (j, s) in [2.0, 5.0, 0.1].iter().enumerate() {
            scaled.column_mut(j).scale_mut(*s);
        }
        let corr = column_correlation_matrix(&a, &scaled).unwrap();
        for j in 0..3 {
            assert_relative_eq!(corr[(j, j)], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn correlation_rejects_constant_column() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 1.0, 3.0, 1.0]);
        let err = column_correlation_matrix(&a, &a).unwrap_err();
        assert!(err.to_string().contains("column 1"));
    }

    #[test]
    fn hungarian_identity_and_swap() {
        // Maximizing the diagonal = minimizing ones-minus-identity.
        let cost = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
        let (perm, value) = hungarian_assign(&cost).unwrap();
        assert_eq!(perm, vec![0, 1, 2]);
        assert_eq!(value, 0.0);

        let cost = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let (perm, value) = hungarian_assign(&cost).unwrap();
        assert_eq!(perm, vec![1, 0]);
        assert_eq!(value, 0.0);
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..=6usize {
            for _ in 0..20 {
                let cost = random_matrix(&mut rng, n, n);
                let (_, value) = hungarian_assign(&cost).unwrap();
                let best = (0..n)
                    .permutations(n)
                    .map(|perm| (0..n).map(|i| cost[(i, perm[i])]).sum::<f64>())
                    .fold(f64::INFINITY, f64::min);
                assert_relative_eq!(value, best, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn hungarian_rejects_non_finite() {
        let mut cost = DMatrix::zeros(2, 2);
        cost[(0, 0)] = f64::NAN;
        assert!(hungarian_assign(&cost).is_err());
    }

    #[test]
    fn distance_to_self_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_matrix(&mut rng, 20, 5);
        let result = subspace_distance(&a, &a).unwrap();
        assert!(result.distance.abs() < 1e-12);
        assert_eq!(result.permutation, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn distance_invariant_to_permutation_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 15, 4);
        let perm = [2usize, 0, 3, 1];
        let scales = [3.0, -0.5, 10.0, 0.01];
        let b = DMatrix::from_fn(15, 4, |i, j| a[(i, perm[j])] * scales[j]);
        let result = subspace_distance(&a, &b).unwrap();
        assert!(result.distance < 1e-10, "distance {}", result.distance);
    }

    #[test]
    fn distance_positive_for_independent_matrices_and_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_matrix(&mut rng, 40, 5);
        let b = random_matrix(&mut rng, 40, 5);
        let result = subspace_distance(&a, &b).unwrap();
        assert!(result.distance > 0.0);

        let corr = column_correlation_matrix(&a, &b).unwrap();
        let best = (0..5)
            .permutations(5)
            .map(|perm| (0..5).map(|i| corr[(i, perm[i])]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(result.total_correlation, best, epsilon = 1e-10);
    }

    #[test]
    fn distance_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 25, 4);
        let b = random_matrix(&mut rng, 25, 4);
        let dab = subspace_distance(&a, &b).unwrap().distance;
        let dba = subspace_distance(&b, &a).unwrap().distance;
        assert_relative_eq!(dab, dba, epsilon = 1e-10);
    }

    #[test]
    fn amari_error_zero_cases_and_positivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_matrix(&mut rng, 3, 3) + DMatrix::identity(3, 3) * 3.0;
        assert_relative_eq!(amari_error(&a, &a).unwrap(), 0.0, epsilon = 1e-10);

        // Scaled permutation of the columns must also give zero.
        let perm = [1usize, 2, 0];
        let scales = [2.0, -3.0, 0.5];
        let b = DMatrix::from_fn(3, 3, |i, j| a[(i, perm[j])] * scales[j]);
        assert!(amari_error(&a, &b).unwrap() < 1e-10);

        let c = random_matrix(&mut rng, 3, 3) + DMatrix::identity(3, 3) * 3.0;
        assert!(amari_error(&a, &c).unwrap() > 0.0);
    }

    #[test]
    fn amari_error_matches_direct_transcription() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_matrix(&mut rng, 3, 3) + DMatrix::identity(3, 3) * 2.0;
        let b = random_matrix(&mut rng, 3, 3);
        let p = a.clone().try_inverse().unwrap() * &b;
        let mut expect = 0.0;
        for i in 0..3 {
            let mut row_sum = 0.0;
            let mut row_max: f64 = 0.0;
            for j in 0..3 {
                row_sum += p[(i, j)].abs();
                row_max = row_max.max(p[(i, j)].abs());
            }
            expect += row_sum / row_max - 1.0;
        }
        for j in 0..3 {
            let mut col_sum = 0.0;
            let mut col_max: f64 = 0.0;
            for i in 0..3 {
                col_sum += p[(i, j)].abs();
                col_max = col_max.max(p[(i, j)].abs());
            }
            expect += col_sum / col_max - 1.0;
        }
        assert_relative_eq!(amari_error(&a, &b).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn amari_rejects_singular_reference() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::identity(2, 2);
        assert!(amari_error(&a, &b).is_err());
    }

    #[test]
    fn prediction_scores_basic_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let y = random_matrix(&mut rng, 6, 4);
        let s = prediction_scores(&y, &y).unwrap();
        assert_eq!(s.mse, 0.0);
        assert_relative_eq!(s.correlation.unwrap(), 1.0, epsilon = 1e-12);

        let shifted = y.map(|v| v + 3.0);
        let s = prediction_scores(&y, &shifted).unwrap();
        assert_relative_eq!(s.mse, 9.0, epsilon = 1e-12);
        assert_relative_eq!(s.correlation.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn prediction_scores_match_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 5, 7);
        let b = random_matrix(&mut rng, 5, 7);
        let s = prediction_scores(&a, &b).unwrap();

        let av: Vec<f64> = a.iter().copied().collect();
        let bv: Vec<f64> = b.iter().copied().collect();
        let n = av.len() as f64;
        let mse = av
            .iter()
            .zip(&bv)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        let ma = av.iter().sum::<f64>() / n;
        let mb = bv.iter().sum::<f64>() / n;
        let cov = av
            .iter()
            .zip(&bv)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>();
        let va = av.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>();
        let vb = bv.iter().map(|y| (y - mb) * (y - mb)).sum::<f64>();
        assert_relative_eq!(s.mse, mse, epsilon = 1e-12);
        assert_relative_eq!(
            s.correlation.unwrap(),
            cov / (va * vb).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn prediction_scores_constant_input_has_no_correlation() {
        let a = DMatrix::from_element(3, 3, 2.0);
        let b = DMatrix::from_fn(3, 3, |i, j| (i + j) as f64);
        let s = prediction_scores(&a, &b).unwrap();
        assert!(s.correlation.is_none());
        assert!(s.mse.is_finite());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn assignment_beats_sampled_permutations(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 1 + (rng.random::<u32>() % 5) as usize;
            let cost = random_matrix(&mut rng, n, n);
            let (_, value) = hungarian_assign(&cost).unwrap();
            for _ in 0..100 {
                // Fisher-Yates shuffle for a random permutation.
                let mut perm: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    let j = (rng.random::<u32>() as usize) % (i + 1);
                    perm.swap(i, j);
                }
                let total: f64 = (0..n).map(|i| cost[(i, perm[i])]).sum();
                prop_assert!(value <= total + 1e-10);
            }
        }

        #[test]
        fn subspace_distance_invariance_property(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, 10, 3);
            let mut perm: Vec<usize> = (0..3).collect();
            for i in (1..3).rev() {
                let j = (rng.random::<u32>() as usize) % (i + 1);
                perm.swap(i, j);
            }
            let scales = DVector::from_fn(3, |_, _| {
                let s: f64 = rng.sample(StandardNormal);
                if s.abs() < 0.1 { 0.5 } else { s }
            });
            let b = DMatrix::from_fn(10, 3, |i, j| a[(i, perm[j])] * scales[j]);
            let d = subspace_distance(&a, &b).unwrap().distance;
            prop_assert!(d < 1e-10, "distance {d}");
        }
    }
}
