//! Hadamard class codes.
//!
//! With one code per class and a ridge classifier on top, the objective
//! `min_W ||I - W^T B'||^2 + lambda ||W||^2` depends on `B'` only through the
//! eigenvalues `s_i` of `B'^T B'`, as `sum_i lambda / (s_i + lambda)` with
//! `sum_i s_i = L*C`. The sum is minimized when every `s_i = L`, i.e. when the
//! class codes are mutually orthogonal: `C` columns of a Hadamard matrix.

use nalgebra::DMatrix;

use crate::dataset::LabelArray;
use crate::error::{Error, Result};
use crate::linalg;

/// A `{-1, +1}` matrix.
pub type SignMatrix = DMatrix<i8>;

/// Default cap on the Hadamard order.
pub const DEFAULT_MAX_ORDER: usize = 4096;

/// Largest `L * C` the brute-force oracle will enumerate (`2^(L*C)` matrices).
pub const ORACLE_MAX_ENTRIES: usize = 16;

/// Sylvester Hadamard matrix of order `order` (a power of two, at least 2).
pub fn sylvester(order: usize) -> Result<SignMatrix> {
    sylvester_with_cap(order, DEFAULT_MAX_ORDER)
}

pub fn sylvester_with_cap(order: usize, max_order: usize) -> Result<SignMatrix> {
    if order < 2 || !order.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(order));
    }
    if order > max_order {
        return Err(Error::BudgetExceeded {
            what: "Hadamard order",
            requested: order,
            limit: max_order,
        });
    }
    let mut h = SignMatrix::from_row_slice(2, 2, &[1, 1, 1, -1]);
    while h.nrows() < order {
        let k = h.nrows();
        let mut next = SignMatrix::zeros(2 * k, 2 * k);
        next.view_mut((0, 0), (k, k)).copy_from(&h);
        next.view_mut((0, k), (k, k)).copy_from(&h);
        next.view_mut((k, 0), (k, k)).copy_from(&h);
        next.view_mut((k, k), (k, k)).copy_from(&(-&h));
        h = next;
    }
    Ok(h)
}

/// One `L`-bit code per class, stored as the columns of an `L x C` sign matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCodes {
    codes: SignMatrix,
}

impl ClassCodes {
    /// Wraps an `L x C` matrix after checking the Hadamard-submatrix invariants.
    pub fn new(codes: SignMatrix) -> Result<Self> {
        let bits = codes.nrows();
        if bits < 2 || !bits.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(bits));
        }
        if codes.ncols() > bits {
            return Err(Error::TooManyClasses {
                classes: codes.ncols(),
                bits,
            });
        }
        if codes.iter().any(|&v| v != 1 && v != -1) {
            return Err(Error::invalid("class codes must be +1/-1"));
        }
        let g = gram_i64(&codes);
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let want = if i == j { bits as i64 } else { 0 };
                if g[(i, j)] != want {
                    return Err(Error::invalid(format!(
                        "class codes {i} and {j} are not orthogonal"
                    )));
                }
            }
        }
        Ok(Self { codes })
    }

    pub fn bits(&self) -> usize {
        self.codes.nrows()
    }

    pub fn classes(&self) -> usize {
        self.codes.ncols()
    }

    pub fn matrix(&self) -> &SignMatrix {
        &self.codes
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        self.codes.map(f64::from)
    }
}

/// `A^T A` in exact integer arithmetic.
pub fn gram_i64(a: &SignMatrix) -> DMatrix<i64> {
    let a = a.map(i64::from);
    a.transpose() * a
}

/// The first `classes` columns of `hadamard`.
pub fn pick_class_codes(hadamard: &SignMatrix, classes: usize) -> Result<ClassCodes> {
    let bits = hadamard.nrows();
    if classes > bits {
        return Err(Error::TooManyClasses { classes, bits });
    }
    if classes == 0 {
        return Err(Error::invalid("need at least one class"));
    }
    ClassCodes::new(hadamard.columns(0, classes).into_owned())
}

/// Per-sample code matrix `B` (`L x N`): column `i` is the code of `labels[i]`.
pub fn expand_codes(class_codes: &ClassCodes, labels: &LabelArray) -> Result<SignMatrix> {
    labels.validate(class_codes.classes())?;
    let l = class_codes.bits();
    let mut b = SignMatrix::zeros(l, labels.len());
    for (i, &y) in labels.as_slice().iter().enumerate() {
        b.set_column(i, &class_codes.codes.column(y));
    }
    Ok(b)
}

/// Exact minimizer `W` of `||I - W^T B'||^2 + lambda ||W||^2` for a fixed
/// `L x C` code matrix, together with the attained value.
///
/// `lambda > 0` goes through the normal equations `(B' B'^T + lambda I) W = B'`;
/// `lambda = 0` uses the pseudo-inverse, `W = (B'^+)^T`.
pub fn ridge_fit_identity(codes: &DMatrix<f64>, lambda: f64) -> Result<(DMatrix<f64>, f64)> {
    let (l, c) = codes.shape();
    let w = if lambda > 0.0 {
        linalg::spd_solve(&(codes * codes.transpose()), lambda, codes, "ridge normal equations")?
    } else if lambda == 0.0 {
        codes
            .clone()
            .pseudo_inverse(1e-10)
            .map_err(|_| Error::Singular("pseudo-inverse"))?
            .transpose()
    } else {
        return Err(Error::invalid("lambda must be non-negative"));
    };
    debug_assert_eq!(w.shape(), (l, c));
    let residual = DMatrix::<f64>::identity(c, c) - w.transpose() * codes;
    let value = linalg::frobenius_sq(&residual) + lambda * linalg::frobenius_sq(&w);
    Ok((w, value))
}

/// Outcome of [`fsdh_objective_oracle`].
#[derive(Debug, Clone)]
pub struct ObjectiveOracle {
    pub bits: usize,
    pub classes: usize,
    pub lambda: f64,
    /// `sum_i lambda / (s_i + lambda)` at `s_i = L`, i.e. `C * lambda / (L + lambda)`.
    pub analytic_value: f64,
    /// `L / (L + lambda)`, the other closed form in circulation.
    pub corollary_value: f64,
    /// Minimum over every `B'` in `{-1, +1}^(L x C)`.
    pub brute_force_value: f64,
    /// Objective of the first `C` Sylvester columns, when `L` is a power of two.
    pub hadamard_value: Option<f64>,
    /// Lexicographically first minimizer.
    pub optimal_codes: SignMatrix,
    /// Every minimizer within `ORACLE_TIE_TOL` of the minimum, in enumeration order.
    pub argmin_set: Vec<SignMatrix>,
}

pub const ORACLE_TIE_TOL: f64 = 1e-9;

impl ObjectiveOracle {
    /// Which closed form the enumeration agrees with.
    pub fn confirmed_formula(&self) -> &'static str {
        let a = (self.brute_force_value - self.analytic_value).abs() <= ORACLE_TIE_TOL;
        let c = (self.brute_force_value - self.corollary_value).abs() <= ORACLE_TIE_TOL;
        match (a, c) {
            (true, true) => "both",
            (true, false) => "C*lambda/(L+lambda)",
            (false, true) => "L/(L+lambda)",
            (false, false) => "neither",
        }
    }
}

/// Enumerates all `L x C` sign matrices, solving the ridge problem for each.
pub fn fsdh_objective_oracle(bits: usize, classes: usize, lambda: f64) -> Result<ObjectiveOracle> {
    if bits == 0 || classes == 0 {
        return Err(Error::invalid("bits and classes must be positive"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    let entries = bits * classes;
    if entries > ORACLE_MAX_ENTRIES {
        return Err(Error::BudgetExceeded {
            what: "oracle enumeration size L*C",
            requested: entries,
            limit: ORACLE_MAX_ENTRIES,
        });
    }

    let mut values = Vec::with_capacity(1 << entries);
    for mask in 0u32..(1u32 << entries) {
        let codes = mask_to_codes(mask, bits, classes);
        let (_, v) = ridge_fit_identity(&codes.map(f64::from), lambda)?;
        values.push(v);
    }
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let argmin_set: Vec<SignMatrix> = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v - best <= ORACLE_TIE_TOL)
        .map(|(mask, _)| mask_to_codes(mask as u32, bits, classes))
        .collect();

    let hadamard_value = if bits >= 2 && bits.is_power_of_two() && classes <= bits {
        let cc = pick_class_codes(&sylvester(bits)?, classes)?;
        Some(ridge_fit_identity(&cc.to_f64(), lambda)?.1)
    } else {
        None
    };

    let (l, c) = (bits as f64, classes as f64);
    Ok(ObjectiveOracle {
        bits,
        classes,
        lambda,
        analytic_value: c * lambda / (l + lambda),
        corollary_value: l / (l + lambda),
        brute_force_value: best,
        hadamard_value,
        optimal_codes: argmin_set[0].clone(),
        argmin_set,
    })
}

/// Enumeration order: entry `k` (column-major) is `-1` when bit `k` of the mask
/// is clear. Mask 0 is all `-1`, so enumeration runs lexicographically with
/// `-1 < +1` on the reversed entry sequence.
fn mask_to_codes(mask: u32, bits: usize, classes: usize) -> SignMatrix {
    SignMatrix::from_fn(bits, classes, |i, j| {
        if mask >> (j * bits + i) & 1 == 1 {
            1
        } else {
            -1
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h2_and_h4_match_the_recursion() {
        assert_eq!(sylvester(2).unwrap(), SignMatrix::from_row_slice(2, 2, &[1, 1, 1, -1]));
        assert_eq!(
            sylvester(4).unwrap(),
            SignMatrix::from_row_slice(
                4,
                4,
                &[1, 1, 1, 1, 1, -1, 1, -1, 1, 1, -1, -1, 1, -1, -1, 1]
            )
        );
    }

    #[test]
    fn sylvester_entries_follow_popcount_parity() {
        let h = sylvester(32).unwrap();
        for i in 0..32usize {
            for j in 0..32usize {
                let want = if (i & j).count_ones() % 2 == 0 { 1 } else { -1 };
                assert_eq!(h[(i, j)], want);
            }
        }
    }

    #[test]
    fn h64_is_orthogonal_in_integers() {
        let h = sylvester(64).unwrap();
        assert_eq!(gram_i64(&h), DMatrix::<i64>::identity(64, 64) * 64);
    }

    #[test]
    fn sylvester_rejects_bad_orders() {
        assert!(matches!(sylvester(24), Err(Error::NotPowerOfTwo(24))));
        assert!(matches!(sylvester(1), Err(Error::NotPowerOfTwo(1))));
        assert!(matches!(
            sylvester_with_cap(128, 64),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn pick_codes_from_h4() {
        let cc = pick_class_codes(&sylvester(4).unwrap(), 2).unwrap();
        assert_eq!(cc.matrix().column(0).iter().copied().collect::<Vec<_>>(), vec![1, 1, 1, 1]);
        assert_eq!(
            cc.matrix().column(1).iter().copied().collect::<Vec<_>>(),
            vec![1, -1, 1, -1]
        );
        let dist = cc
            .matrix()
            .column(0)
            .iter()
            .zip(cc.matrix().column(1).iter())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(dist, 2);
        assert!(matches!(
            pick_class_codes(&sylvester(4).unwrap(), 5),
            Err(Error::TooManyClasses { classes: 5, bits: 4 })
        ));
    }

    #[test]
    fn all_h8_columns_are_at_distance_four() {
        let cc = pick_class_codes(&sylvester(8).unwrap(), 8).unwrap();
        for i in 0..8 {
            for j in (i + 1)..8 {
                let d = (0..8).filter(|&r| cc.matrix()[(r, i)] != cc.matrix()[(r, j)]).count();
                assert_eq!(d, 4);
            }
        }
    }

    #[test]
    fn expand_codes_lines_up_by_label() {
        let cc = pick_class_codes(&sylvester(4).unwrap(), 2).unwrap();
        let b = expand_codes(&cc, &vec![0, 1, 0].into()).unwrap();
        assert_eq!(b.column(0), cc.matrix().column(0));
        assert_eq!(b.column(1), cc.matrix().column(1));
        assert_eq!(b.column(2), cc.matrix().column(0));
        let empty = expand_codes(&cc, &LabelArray::default()).unwrap();
        assert_eq!(empty.shape(), (4, 0));
    }

    #[test]
    fn sorted_labels_give_block_diagonal_gram() {
        // L = 8, C = 4, two samples per class in label order.
        let cc = pick_class_codes(&sylvester(8).unwrap(), 4).unwrap();
        let labels: LabelArray = vec![0, 0, 1, 1, 2, 2, 3, 3].into();
        let b = expand_codes(&cc, &labels).unwrap();
        let btb = gram_i64(&b);
        for i in 0..8 {
            for j in 0..8 {
                let want = if i / 2 == j / 2 { 8 } else { 0 };
                assert_eq!(btb[(i, j)], want);
            }
        }
    }

    /// Ridge objective by the closed form `lambda * tr((B'^T B' + lambda I)^-1)`.
    fn dual_objective(codes: &SignMatrix, lambda: f64) -> f64 {
        let b = codes.map(f64::from);
        let g = b.transpose() * &b + DMatrix::identity(b.ncols(), b.ncols()) * lambda;
        lambda * g.try_inverse().unwrap().trace()
    }

    #[test]
    fn ridge_fit_matches_dual_form() {
        let codes = SignMatrix::from_row_slice(3, 2, &[1, 1, -1, 1, 1, 1]);
        for lambda in [0.3, 1.0, 4.0] {
            let (_, v) = ridge_fit_identity(&codes.map(f64::from), lambda).unwrap();
            assert!((v - dual_objective(&codes, lambda)).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_single_class_two_bits() {
        let o = fsdh_objective_oracle(2, 1, 1.0).unwrap();
        assert!((o.brute_force_value - 1.0 / 3.0).abs() < 1e-12);
        // Every 2-bit code has squared norm 2, so all four attain it.
        assert_eq!(o.argmin_set.len(), 4);
        assert!(o
            .argmin_set
            .iter()
            .any(|m| m == &SignMatrix::from_column_slice(2, 1, &[1, 1])));
    }

    #[test]
    fn oracle_four_bits_two_classes() {
        let o = fsdh_objective_oracle(4, 2, 1.0).unwrap();
        assert!((o.brute_force_value - 0.4).abs() < 1e-12);
        assert!((o.analytic_value - 0.4).abs() < 1e-12);
        assert!((o.hadamard_value.unwrap() - o.brute_force_value).abs() < 1e-9);
        assert_eq!(o.confirmed_formula(), "C*lambda/(L+lambda)");
        for m in &o.argmin_set {
            assert_eq!(gram_i64(m), DMatrix::<i64>::identity(2, 2) * 4);
        }
    }

    #[test]
    fn oracle_at_zero_lambda_is_zero() {
        let o = fsdh_objective_oracle(4, 2, 0.0).unwrap();
        assert!(o.brute_force_value.abs() < 1e-12);
        // Any full-column-rank pair attains it; collinear pairs do not.
        let full_rank = (0u32..256)
            .map(|m| mask_to_codes(m, 4, 2))
            .filter(|m| {
                let g = gram_i64(m);
                g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)] != 0
            })
            .count();
        assert_eq!(o.argmin_set.len(), full_rank);
    }

    #[test]
    fn oracle_argmin_is_lambda_invariant() {
        for (l, c) in [(2, 1), (2, 2), (3, 2), (4, 1), (4, 2), (4, 3), (5, 2), (5, 3)] {
            let sets: Vec<_> = [0.1, 1.0, 10.0]
                .iter()
                .map(|&lam| fsdh_objective_oracle(l, c, lam).unwrap().argmin_set)
                .collect();
            assert_eq!(sets[0], sets[1], "L={l} C={c}");
            assert_eq!(sets[1], sets[2], "L={l} C={c}");
        }
    }

    #[test]
    fn oracle_budget_guard() {
        assert!(matches!(
            fsdh_objective_oracle(6, 3, 1.0),
            Err(Error::BudgetExceeded { .. })
        ));
    }
}
