//! Exact constraint system for the balanced length-class coefficient family.
//!
//! For weights `a_0..a_N` with `p_nu = a_{|nu|}`, requiring every generation-1
//! axis slab to carry measure exactly 1/3 is a pair of linear rows with
//! binomial coefficients. This module builds that system, parametrizes its
//! affine solution set around the uniform point, and samples validated
//! coefficient vectors from the open positivity box.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use crate::combinatorics::slab_row;
use crate::error::Error;
use crate::measure::LengthClassCoefficients;
use crate::rational::{fmt_ratio, pow_int, ratio, Rational};
use crate::Result;

/// The two balance rows over `(a_0, ..., a_N)`, each with right-hand side 1/3,
/// together with the implicit open-box bounds `0 < a_k < 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintSystem {
    pub dim: usize,
    pub rows: Vec<(Vec<Rational>, Rational)>,
}

/// Affine parametrization of the solution set: the uniform point plus an
/// integer-primitive kernel basis of dimension N - 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolutionParametrization {
    pub particular: Vec<Rational>,
    pub basis: Vec<Vec<Rational>>,
}

/// Build the balance system for dimension `N >= 1`.
///
/// Row one counts labels with a zero first coordinate by length, row two those
/// with a fixed nonzero first coordinate; both sums must equal 1/3.
pub fn build_adc_system(dim: usize) -> ConstraintSystem {
    assert!(dim >= 1, "dimension must be at least 1");
    let third = ratio(1, 3);
    ConstraintSystem {
        dim,
        rows: vec![
            (slab_row(dim, 0), third.clone()),
            (slab_row(dim, 1), third),
        ],
    }
}

/// Solve the system exactly.
///
/// The uniform point `(3^-N, ..., 3^-N)` is always a solution; the kernel of
/// the two rows is computed by rational Gaussian elimination and canonicalized
/// to integer-primitive vectors whose leading nonzero entry is negative,
/// ordered by free column. For N = 2 this yields the single direction
/// `(-4, 2, -1)`, so the parameter coincides with the family's usual epsilon.
pub fn solve_affine(system: &ConstraintSystem) -> SolutionParametrization {
    let dim = system.dim;
    let particular = vec![
        Rational::new(BigInt::one(), pow_int(3, dim as u32));
        dim + 1
    ];
    for (row, rhs) in &system.rows {
        let lhs: Rational = row.iter().zip(&particular).map(|(c, a)| c * a).sum();
        assert_eq!(&lhs, rhs, "uniform point satisfies the balance rows");
    }
    let coeff_rows: Vec<Vec<Rational>> = system.rows.iter().map(|(row, _)| row.clone()).collect();
    let basis = kernel_basis(&coeff_rows)
        .into_iter()
        .map(|v| canonical_direction(&v))
        .collect::<Vec<_>>();
    for v in &basis {
        for (row, _) in &system.rows {
            let dot: Rational = row.iter().zip(v).map(|(c, x)| c * x).sum();
            assert!(dot.is_zero(), "basis vector lies in the kernel");
        }
    }
    SolutionParametrization { particular, basis }
}

impl SolutionParametrization {
    pub fn basis_dim(&self) -> usize {
        self.basis.len()
    }

    /// `particular + sum t_i * basis_i`, validated against the open box.
    pub fn sample(&self, t: &[Rational]) -> Result<LengthClassCoefficients> {
        if t.len() != self.basis.len() {
            return Err(Error::DimensionMismatch {
                expected: self.basis.len(),
                got: t.len(),
            });
        }
        let mut values = self.particular.clone();
        for (ti, dir) in t.iter().zip(&self.basis) {
            for (v, d) in values.iter_mut().zip(dir) {
                *v += ti * d;
            }
        }
        let one = Rational::one();
        for (k, v) in values.iter().enumerate() {
            if !v.is_positive() || v >= &one {
                return Err(Error::OutOfOpenBox {
                    index: k,
                    value: fmt_ratio(v),
                });
            }
        }
        LengthClassCoefficients::new(values)
    }
}

/// Sample coefficients directly from a parameter vector.
pub fn sample_coefficients(
    param: &SolutionParametrization,
    t: &[Rational],
) -> Result<LengthClassCoefficients> {
    param.sample(t)
}

/// Kernel basis of a small rational row system, one vector per free column.
fn kernel_basis(rows: &[Vec<Rational>]) -> Vec<Vec<Rational>> {
    let cols = rows[0].len();
    let mut m: Vec<Vec<Rational>> = rows.to_vec();
    let mut pivots: Vec<usize> = Vec::new();
    let mut rank = 0usize;
    for c in 0..cols {
        let Some(pivot_row) = (rank..m.len()).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(rank, pivot_row);
        let inv = m[rank][c].clone();
        for entry in &mut m[rank] {
            *entry /= &inv;
        }
        for i in 0..m.len() {
            if i != rank && !m[i][c].is_zero() {
                let factor = m[i][c].clone();
                for c2 in 0..cols {
                    let delta = &m[rank][c2] * &factor;
                    m[i][c2] -= delta;
                }
            }
        }
        pivots.push(c);
        rank += 1;
        if rank == m.len() {
            break;
        }
    }
    let mut basis = Vec::new();
    for free in 0..cols {
        if pivots.contains(&free) {
            continue;
        }
        let mut v = vec![Rational::zero(); cols];
        v[free] = Rational::one();
        for (ri, &pc) in pivots.iter().enumerate() {
            v[pc] = -m[ri][free].clone();
        }
        basis.push(v);
    }
    basis
}

/// Scale to coprime integers with a negative leading nonzero entry.
fn canonical_direction(v: &[Rational]) -> Vec<Rational> {
    let mut lcm = BigInt::one();
    for x in v {
        lcm = lcm.lcm(x.denom());
    }
    let mut ints: Vec<BigInt> = v
        .iter()
        .map(|x| x.numer() * (&lcm / x.denom()))
        .collect();
    let mut gcd = BigInt::zero();
    for x in &ints {
        gcd = gcd.gcd(x);
    }
    if !gcd.is_zero() && !gcd.is_one() {
        for x in &mut ints {
            *x /= &gcd;
        }
    }
    if let Some(first) = ints.iter().find(|x| !x.is_zero()) {
        if first.is_positive() {
            for x in &mut ints {
                *x = -x.clone();
            }
        }
    }
    ints.into_iter().map(Rational::from_integer).collect()
}
