//! Small exact combinatorial helpers shared by the measure and solver modules.

use num_bigint::BigInt;
use num_traits::One;

use crate::rational::Rational;

/// Binomial coefficient C(n, k) as a `BigInt` (0 when k > n).
pub fn binomial(n: usize, k: usize) -> BigInt {
    if k > n {
        return BigInt::from(0);
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// Number of child labels of length `k` in `{-1,0,1}^N`: `2^k * C(N, k)`.
/// A label has length `k` when exactly `k` coordinates are nonzero, each of
/// which can be -1 or +1 independently.
pub fn length_class_size(dim: usize, k: usize) -> BigInt {
    (BigInt::one() << k) * binomial(dim, k)
}

/// Coefficient row of the axis-slab balance condition: entry `k` multiplies
/// the class weight `a_{k + shift}`, counting labels with a fixed first
/// coordinate and `k` nonzero coordinates among the remaining `N - 1`.
pub fn slab_row(dim: usize, shift: usize) -> Vec<Rational> {
    let mut row = vec![Rational::from_integer(0.into()); dim + 1];
    for k in 0..dim {
        row[k + shift] = Rational::from_integer(length_class_size(dim - 1, k));
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::ratio_from_int;

    #[test]
    fn binomials() {
        assert_eq!(binomial(4, 2), 6.into());
        assert_eq!(binomial(5, 0), 1.into());
        assert_eq!(binomial(3, 5), 0.into());
    }

    /// Oracle: enumerate {-1,0,1}^N and count labels per length.
    #[test]
    fn class_sizes_match_enumeration() {
        for dim in 1..=5usize {
            let mut counts = vec![0u64; dim + 1];
            let total = 3usize.pow(dim as u32);
            for mut code in 0..total {
                let mut len = 0;
                for _ in 0..dim {
                    if code % 3 != 1 {
                        len += 1;
                    }
                    code /= 3;
                }
                counts[len] += 1;
            }
            for (k, &c) in counts.iter().enumerate() {
                assert_eq!(length_class_size(dim, k), c.into());
            }
        }
    }

    /// Oracle: enumerate {-1,0,1}^N with nu_1 fixed and count by length.
    #[test]
    fn slab_rows_match_enumeration() {
        for dim in 1..=4usize {
            let rest = 3usize.pow(dim as u32 - 1);
            for (first, shift) in [(0i32, 0usize), (1, 1), (-1, 1)] {
                let mut counts = vec![0u64; dim + 1];
                for mut code in 0..rest {
                    let mut len = usize::from(first != 0);
                    for _ in 0..dim - 1 {
                        if code % 3 != 1 {
                            len += 1;
                        }
                        code /= 3;
                    }
                    counts[len] += 1;
                }
                let row = slab_row(dim, shift);
                for (k, &c) in counts.iter().enumerate() {
                    assert_eq!(row[k], ratio_from_int(c as i64), "dim {dim} first {first}");
                }
            }
        }
    }
}
