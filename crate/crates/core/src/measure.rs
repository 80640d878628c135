//! Bernoulli product measures on `R^N` and their exact evaluation.
//!
//! The period cube is `Q_0 = [-1/2, 1/2)^N`. For an odd division number
//! `p = 2q + 1`, generation `n` subdivides `Q_0` into `p^{nN}` half-open cubes
//! of side `p^-n`. The children of a cube are labeled by vectors
//! `nu in {-q..q}^N`; a cube of generation `n` is addressed by its label path
//! `(nu^1, ..., nu^n)` plus the integer lattice cell it sits in. The measure of
//! a path cube is the product of the per-step child probabilities, and integer
//! translates have equal measure.
//!
//! Exact evaluation is available on boxes whose endpoints lie on the shifted
//! grid (`t + 1/2 in Z[1/p]`); such boxes decompose into finitely many cubes.
//! All other boxes are handled by certified enclosures (see [`crate::region`]).

use std::sync::Arc;

use dashmap::DashMap;
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::combinatorics::{length_class_size, slab_row};
use crate::error::Error;
use crate::rational::{
    fmt_ratio, grid_expansion, pow_int, ratio, ratio_from_int, Rational,
};
use crate::region;
use crate::Result;

/// Hard ceiling on the dense probability table for general-mode measures.
const MAX_CELL_TABLE: usize = 1 << 20;

/// Child label: one entry per axis, each in `[-q, q]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct IndexVector(pub Vec<i32>);

impl IndexVector {
    pub fn entries(&self) -> &[i32] {
        &self.0
    }

    /// Number of nonzero coordinates.
    pub fn length(&self) -> usize {
        self.0.iter().filter(|v| **v != 0).count()
    }

    pub fn validate(&self, dim: usize, q: i32) -> Result<()> {
        if self.0.len() != dim {
            return Err(Error::IndexOutOfRange(format!(
                "label has {} entries, expected {dim}",
                self.0.len()
            )));
        }
        for &v in &self.0 {
            if v < -q || v > q {
                return Err(Error::IndexOutOfRange(format!(
                    "entry {v} outside [{}, {q}]",
                    -q
                )));
            }
        }
        Ok(())
    }

    /// Row-major rank in `{-q..q}^N`, axis 0 most significant.
    pub fn rank(&self, p: u32, q: i32) -> usize {
        self.0
            .iter()
            .fold(0usize, |acc, &v| acc * p as usize + (v + q) as usize)
    }

    pub fn from_rank(mut rank: usize, dim: usize, p: u32, q: i32) -> Self {
        let mut entries = vec![0i32; dim];
        for j in (0..dim).rev() {
            entries[j] = (rank % p as usize) as i32 - q;
            rank /= p as usize;
        }
        IndexVector(entries)
    }
}

/// Address of a generation-`n` cube inside the period cube: the label path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PAdicPath {
    pub dim: usize,
    pub p: u32,
    pub steps: Vec<IndexVector>,
}

impl PAdicPath {
    pub fn generation(&self) -> usize {
        self.steps.len()
    }
}

/// A `p`-adic cube anywhere in `R^N`: a path plus the lattice cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PAdicCube {
    pub path: PAdicPath,
    pub lattice_shift: Vec<i64>,
}

impl PAdicCube {
    pub fn from_path(path: PAdicPath) -> Self {
        let dim = path.dim;
        PAdicCube {
            path,
            lattice_shift: vec![0; dim],
        }
    }

    pub fn generation(&self) -> usize {
        self.path.generation()
    }

    /// Per-axis integer position at the cube's own generation: the cube spans
    /// `[-1/2 + A_j / p^n, -1/2 + (A_j + 1) / p^n)` within its lattice cell.
    pub fn axis_positions(&self) -> Vec<BigInt> {
        let dim = self.path.dim;
        let p = BigInt::from(self.path.p);
        let q = (self.path.p as i32 - 1) / 2;
        let mut pos = vec![BigInt::zero(); dim];
        for step in &self.path.steps {
            for j in 0..dim {
                pos[j] = &pos[j] * &p + BigInt::from(step.0[j] + q);
            }
        }
        pos
    }

    /// Rebuild a cube from integer axis positions at generation `n`.
    pub fn from_positions(dim: usize, p: u32, n: usize, shift: Vec<i64>, pos: &[BigInt]) -> Self {
        let q = (p as i32 - 1) / 2;
        let mut digits: Vec<Vec<i32>> = vec![Vec::with_capacity(n); dim];
        for j in 0..dim {
            let mut a = pos[j].clone();
            let p_big = BigInt::from(p);
            let mut ds = Vec::with_capacity(n);
            for _ in 0..n {
                let d = (&a % &p_big).to_i32().expect("digit fits i32");
                ds.push(d - q);
                a /= &p_big;
            }
            ds.reverse();
            digits[j] = ds;
        }
        let steps = (0..n)
            .map(|k| IndexVector((0..dim).map(|j| digits[j][k]).collect()))
            .collect();
        PAdicCube {
            path: PAdicPath { dim, p, steps },
            lattice_shift: shift,
        }
    }

    /// Geometric realization as a half-open box.
    pub fn realize(&self) -> AxisBox {
        let n = self.generation() as u32;
        let dim = self.path.dim;
        let scale = pow_int(self.path.p, n);
        let pos = self.axis_positions();
        let mut lo = Vec::with_capacity(dim);
        let mut hi = Vec::with_capacity(dim);
        for j in 0..dim {
            let base = ratio_from_int(self.lattice_shift[j]) - ratio(1, 2);
            lo.push(&base + Rational::new(pos[j].clone(), scale.clone()));
            hi.push(&base + Rational::new(&pos[j] + BigInt::one(), scale.clone()));
        }
        AxisBox::new(lo, hi).expect("cube realization is nondegenerate")
    }

    fn digit_key(&self) -> Vec<u8> {
        let q = (self.path.p as i32 - 1) / 2;
        let mut key = Vec::with_capacity(self.generation() * self.path.dim);
        for step in &self.path.steps {
            for &v in &step.0 {
                key.push((v + q) as u8);
            }
        }
        key
    }
}

/// Axis-parallel half-open box with exact rational endpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AxisBox {
    pub lo: Vec<Rational>,
    pub hi: Vec<Rational>,
}

impl AxisBox {
    pub fn new(lo: Vec<Rational>, hi: Vec<Rational>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        for (axis, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if l >= h {
                return Err(Error::DegenerateBox {
                    axis,
                    lo: fmt_ratio(l),
                    hi: fmt_ratio(h),
                });
            }
        }
        Ok(AxisBox { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Euclidean volume.
    pub fn volume(&self) -> Rational {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| h - l)
            .product()
    }

    /// The cube `Q(x, r) = prod [x_j - r, x_j + r)`.
    pub fn cube_around(center: &[Rational], r: &Rational) -> Result<Self> {
        if !r.is_positive() {
            return Err(Error::InvalidInput(format!(
                "cube radius must be positive, got {}",
                fmt_ratio(r)
            )));
        }
        AxisBox::new(
            center.iter().map(|c| c - r).collect(),
            center.iter().map(|c| c + r).collect(),
        )
    }
}

/// The generation-1 axis slab `{ Q_1^nu : nu_axis = i }` as a box (p = 3).
pub fn axis_slab(dim: usize, axis: usize, i: i32) -> AxisBox {
    assert!(axis < dim && (-1..=1).contains(&i));
    let mut lo = vec![ratio(-1, 2); dim];
    let mut hi = vec![ratio(1, 2); dim];
    lo[axis] = ratio(-1, 2) + ratio((1 + i) as i64, 3);
    hi[axis] = ratio(-1, 2) + ratio((2 + i) as i64, 3);
    AxisBox::new(lo, hi).expect("slab is nondegenerate")
}

/// Length-class weights `(a_0, ..., a_N)`: every child label of length `k`
/// carries probability `a_k`. Stored only when exactly normalized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LengthClassCoefficients {
    values: Vec<Rational>,
}

impl LengthClassCoefficients {
    pub fn new(values: Vec<Rational>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty coefficient vector".into()));
        }
        let dim = values.len() - 1;
        let one = Rational::one();
        for (k, a) in values.iter().enumerate() {
            if !a.is_positive() || a >= &one {
                return Err(Error::NonPositiveProbability {
                    label: format!("a_{k}"),
                    value: fmt_ratio(a),
                });
            }
        }
        let sum: Rational = values
            .iter()
            .enumerate()
            .map(|(k, a)| Rational::from_integer(length_class_size(dim, k)) * a)
            .sum();
        if sum != one {
            return Err(Error::NotNormalized {
                sum: fmt_ratio(&sum),
            });
        }
        Ok(LengthClassCoefficients { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[Rational] {
        &self.values
    }

    pub fn min(&self) -> &Rational {
        self.values.iter().min().expect("nonempty")
    }

    pub fn uniform(dim: usize) -> Self {
        let a = Rational::new(BigInt::one(), pow_int(3, dim as u32));
        LengthClassCoefficients {
            values: vec![a; dim + 1],
        }
    }

    /// Whether both axis-slab balance rows hold: each generation-1 slab then
    /// carries measure exactly 1/3.
    pub fn is_balanced(&self) -> bool {
        let dim = self.dim();
        let third = ratio(1, 3);
        for shift in [0usize, 1] {
            let row = slab_row(dim, shift);
            let lhs: Rational = row
                .iter()
                .zip(&self.values)
                .map(|(c, a)| c * a)
                .sum();
            if lhs != third {
                return false;
            }
        }
        true
    }
}

/// Declarative description of a Bernoulli product measure.
#[derive(Debug, Clone)]
pub struct BernoulliSpec {
    pub dim: usize,
    pub p: u32,
    pub mode: SpecMode,
}

#[derive(Debug, Clone)]
pub enum SpecMode {
    /// `p_nu = a_{|nu|}`; requires p = 3.
    LengthClass(LengthClassCoefficients),
    /// Explicit table over all labels.
    General(Vec<(IndexVector, Rational)>),
}

impl BernoulliSpec {
    pub fn length_class(coeffs: LengthClassCoefficients) -> Self {
        BernoulliSpec {
            dim: coeffs.dim(),
            p: 3,
            mode: SpecMode::LengthClass(coeffs),
        }
    }

    pub fn general(dim: usize, p: u32, table: Vec<(IndexVector, Rational)>) -> Self {
        BernoulliSpec {
            dim,
            p,
            mode: SpecMode::General(table),
        }
    }
}

enum Weights {
    LengthClass(LengthClassCoefficients),
    General(Vec<Rational>),
}

struct MeasureInner {
    dim: usize,
    p: u32,
    q: i32,
    weights: Weights,
    /// Child length class per rank (length-class mode only).
    class_of_rank: Vec<u8>,
    prob_min: Rational,
    gen_cap: u32,
    memo: DashMap<Vec<u8>, Rational>,
}

/// An immutable, validated measure handle. Cheap to clone and safe to share
/// across worker threads; all operations are pure functions of their inputs.
#[derive(Clone)]
pub struct ValidatedMeasure {
    inner: Arc<MeasureInner>,
}

/// Default ceiling for enclosure refinement generations.
pub const DEFAULT_GEN_CAP: u32 = 24;

/// Validate a measure description and return an immutable handle.
///
/// Rejects even or too-small division numbers, nonpositive probabilities and
/// any table that does not sum to one exactly.
pub fn validate_spec(spec: &BernoulliSpec) -> Result<ValidatedMeasure> {
    if spec.p < 3 || spec.p.is_multiple_of(2) {
        return Err(Error::BadDivisionNumber { p: spec.p });
    }
    if spec.dim == 0 {
        return Err(Error::InvalidInput("dimension must be >= 1".into()));
    }
    let q = (spec.p as i32 - 1) / 2;
    let cells = (spec.p as usize)
        .checked_pow(spec.dim as u32)
        .filter(|&c| c <= MAX_CELL_TABLE)
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "cell table p^N = {}^{} too large",
                spec.p, spec.dim
            ))
        })?;

    let weights = match &spec.mode {
        SpecMode::LengthClass(coeffs) => {
            if spec.p != 3 {
                return Err(Error::BadDivisionNumber { p: spec.p });
            }
            if coeffs.dim() != spec.dim {
                return Err(Error::DimensionMismatch {
                    expected: spec.dim,
                    got: coeffs.dim(),
                });
            }
            // Re-validate: specs may be built from raw parts.
            Weights::LengthClass(LengthClassCoefficients::new(coeffs.values().to_vec())?)
        }
        SpecMode::General(table) => {
            let mut dense: Vec<Option<Rational>> = vec![None; cells];
            for (nu, prob) in table {
                nu.validate(spec.dim, q)?;
                if !prob.is_positive() {
                    return Err(Error::NonPositiveProbability {
                        label: format!("{:?}", nu.0),
                        value: fmt_ratio(prob),
                    });
                }
                let rank = nu.rank(spec.p, q);
                if dense[rank].replace(prob.clone()).is_some() {
                    return Err(Error::InvalidInput(format!(
                        "duplicate probability for label {:?}",
                        nu.0
                    )));
                }
            }
            let mut probs = Vec::with_capacity(cells);
            for (rank, slot) in dense.into_iter().enumerate() {
                match slot {
                    Some(prob) => probs.push(prob),
                    None => {
                        let nu = IndexVector::from_rank(rank, spec.dim, spec.p, q);
                        return Err(Error::InvalidInput(format!(
                            "missing probability for label {:?}",
                            nu.0
                        )));
                    }
                }
            }
            let sum: Rational = probs.iter().sum();
            if !sum.is_one() {
                return Err(Error::NotNormalized {
                    sum: fmt_ratio(&sum),
                });
            }
            Weights::General(probs)
        }
    };

    let class_of_rank = (0..cells)
        .map(|rank| IndexVector::from_rank(rank, spec.dim, spec.p, q).length() as u8)
        .collect::<Vec<_>>();

    let prob_min = match &weights {
        Weights::LengthClass(c) => c.min().clone(),
        Weights::General(probs) => probs.iter().min().expect("nonempty").clone(),
    };

    Ok(ValidatedMeasure {
        inner: Arc::new(MeasureInner {
            dim: spec.dim,
            p: spec.p,
            q,
            weights,
            class_of_rank,
            prob_min,
            gen_cap: DEFAULT_GEN_CAP,
            memo: DashMap::new(),
        }),
    })
}

impl ValidatedMeasure {
    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn p(&self) -> u32 {
        self.inner.p
    }

    pub fn q(&self) -> i32 {
        self.inner.q
    }

    /// Smallest single-cell probability (`a_min` in length-class mode).
    pub fn prob_min(&self) -> &Rational {
        &self.inner.prob_min
    }

    pub fn gen_cap(&self) -> u32 {
        self.inner.gen_cap
    }

    /// Returns a handle with a different enclosure generation cap.
    pub fn with_gen_cap(&self, cap: u32) -> Self {
        let inner = &self.inner;
        ValidatedMeasure {
            inner: Arc::new(MeasureInner {
                dim: inner.dim,
                p: inner.p,
                q: inner.q,
                weights: match &inner.weights {
                    Weights::LengthClass(c) => Weights::LengthClass(c.clone()),
                    Weights::General(v) => Weights::General(v.clone()),
                },
                class_of_rank: inner.class_of_rank.clone(),
                prob_min: inner.prob_min.clone(),
                gen_cap: cap,
                memo: DashMap::new(),
            }),
        }
    }

    pub fn length_class_coefficients(&self) -> Option<&LengthClassCoefficients> {
        match &self.inner.weights {
            Weights::LengthClass(c) => Some(c),
            Weights::General(_) => None,
        }
    }

    /// Length class per child rank; meaningful in length-class mode.
    pub(crate) fn class_of_rank(&self) -> &[u8] {
        &self.inner.class_of_rank
    }

    /// Probability of the child with the given row-major rank.
    pub fn prob_of_rank(&self, rank: usize) -> Rational {
        match &self.inner.weights {
            Weights::LengthClass(c) => c.values()[self.inner.class_of_rank[rank] as usize].clone(),
            Weights::General(probs) => probs[rank].clone(),
        }
    }

    /// All labels are equally likely (the measure is Lebesgue).
    pub fn is_uniform(&self) -> bool {
        match &self.inner.weights {
            Weights::LengthClass(c) => c.values().windows(2).all(|w| w[0] == w[1]),
            Weights::General(probs) => probs.windows(2).all(|w| w[0] == w[1]),
        }
    }

    /// Length-class p = 3 measure satisfying both slab balance rows.
    pub fn is_balanced_length_class(&self) -> bool {
        matches!(&self.inner.weights, Weights::LengthClass(c) if c.is_balanced())
    }

    /// `p_nu` for a single child label.
    pub fn cell_probability(&self, nu: &IndexVector) -> Result<Rational> {
        nu.validate(self.inner.dim, self.inner.q)?;
        Ok(self.prob_of_rank(nu.rank(self.inner.p, self.inner.q)))
    }

    /// Exact measure of a path cube: the product of per-step probabilities.
    /// Independent of the cube's lattice cell.
    pub fn cube_measure(&self, cube: &PAdicCube) -> Result<Rational> {
        if cube.path.dim != self.inner.dim || cube.path.p != self.inner.p {
            return Err(Error::DimensionMismatch {
                expected: self.inner.dim,
                got: cube.path.dim,
            });
        }
        for step in &cube.path.steps {
            step.validate(self.inner.dim, self.inner.q)?;
        }
        let key = cube.digit_key();
        if let Some(hit) = self.inner.memo.get(&key) {
            return Ok(hit.value().clone());
        }
        let mut acc = Rational::one();
        for step in &cube.path.steps {
            acc *= self.prob_of_rank(step.rank(self.inner.p, self.inner.q));
        }
        self.inner.memo.insert(key, acc.clone());
        Ok(acc)
    }

    /// Path of the generation-`n` cube containing `x` (reduced mod `Z^N`).
    /// Digit extraction is exact, so repeated shifting never drifts.
    pub fn point_path(&self, x: &[Rational], n: usize) -> Result<PAdicPath> {
        if x.len() != self.inner.dim {
            return Err(Error::DimensionMismatch {
                expected: self.inner.dim,
                got: x.len(),
            });
        }
        let p = self.inner.p;
        let q = self.inner.q;
        // u_j = fractional part of x_j + 1/2, in [0, 1).
        let mut u: Vec<Rational> = x
            .iter()
            .map(|t| {
                let shifted = t + ratio(1, 2);
                &shifted - shifted.floor()
            })
            .collect();
        let p_rat = ratio_from_int(p as i64);
        let mut steps = Vec::with_capacity(n);
        for _ in 0..n {
            let mut entries = Vec::with_capacity(self.inner.dim);
            for uj in u.iter_mut() {
                let scaled = &*uj * &p_rat;
                let digit = scaled.floor();
                *uj = &scaled - &digit;
                entries.push(digit.to_integer().to_i32().expect("digit < p") - q);
            }
            steps.push(IndexVector(entries));
        }
        Ok(PAdicPath {
            dim: self.inner.dim,
            p,
            steps,
        })
    }

    /// Exact measure of a grid box: the sum over its canonical decomposition.
    pub fn box_measure_exact(&self, bx: &AxisBox) -> Result<Rational> {
        if bx.dim() != self.inner.dim {
            return Err(Error::DimensionMismatch {
                expected: self.inner.dim,
                got: bx.dim(),
            });
        }
        let cubes = box_decompose(bx, self.inner.p)?;
        let mut acc = Rational::zero();
        for cube in &cubes {
            acc += self.cube_measure(cube)?;
        }
        Ok(acc)
    }

    /// Certified enclosure of `mu(box)` from the generation-`g` cell cover:
    /// the lower bound sums cells inside the box, the upper bound cells that
    /// meet it. Degenerates to the exact value on grid boxes once `g` resolves
    /// every endpoint.
    pub fn box_measure_enclosure(&self, bx: &AxisBox, g: u32) -> Result<MeasureEnclosure> {
        region::box_enclosure(self, bx, g)
    }

    /// Exact measure of a coordinate strip of a cube, for balanced
    /// length-class measures: a strip of thickness `h` inside a generation-`n`
    /// parent carries the fraction `3^n h` of the parent's measure.
    ///
    /// `s` is the strip's absolute lower coordinate along `axis`. The value is
    /// cross-checked against the exact box decomposition before returning.
    pub fn strip_measure(
        &self,
        parent: &PAdicCube,
        axis: usize,
        s: &Rational,
        h: &Rational,
    ) -> Result<Rational> {
        if !self.is_balanced_length_class() {
            return Err(Error::AdcClassRequired(
                "strip identity needs p = 3 length-class weights with balanced slabs".into(),
            ));
        }
        if axis >= self.inner.dim {
            return Err(Error::DimensionMismatch {
                expected: self.inner.dim,
                got: axis,
            });
        }
        let parent_box = parent.realize();
        let lo = &parent_box.lo[axis];
        let hi = &parent_box.hi[axis];
        let upper = s + h;
        if !h.is_positive() || s < lo || &upper > hi {
            return Err(Error::StripNotContained {
                lo: fmt_ratio(s),
                hi: fmt_ratio(&upper),
                parent_lo: fmt_ratio(lo),
                parent_hi: fmt_ratio(hi),
            });
        }
        for t in [s, &upper] {
            if grid_expansion(t, self.inner.p).is_none() {
                return Err(Error::NotGridRational {
                    value: fmt_ratio(t),
                    p: self.inner.p,
                });
            }
        }
        let n = parent.generation() as u32;
        let parent_measure = self.cube_measure(parent)?;
        let result = Rational::from_integer(pow_int(3, n)) * h * &parent_measure;

        let mut strip_lo = parent_box.lo.clone();
        let mut strip_hi = parent_box.hi.clone();
        strip_lo[axis] = s.clone();
        strip_hi[axis] = upper;
        let strip_box = AxisBox::new(strip_lo, strip_hi)?;
        let decomposed = self.box_measure_exact(&strip_box)?;
        assert_eq!(
            result, decomposed,
            "strip identity disagrees with exact decomposition"
        );
        Ok(result)
    }
}

impl std::fmt::Debug for ValidatedMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ValidatedMeasure")
            .field("dim", &self.inner.dim)
            .field("p", &self.inner.p)
            .field("prob_min", &fmt_ratio(&self.inner.prob_min))
            .finish()
    }
}

/// Certified rational interval `[lo, hi]` containing a measure value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasureEnclosure {
    pub lo: Rational,
    pub hi: Rational,
    /// Refinement generation that produced the bounds.
    pub generation: u32,
}

impl MeasureEnclosure {
    pub fn exact(value: Rational, generation: u32) -> Self {
        MeasureEnclosure {
            lo: value.clone(),
            hi: value,
            generation,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.lo == self.hi
    }

    pub fn width(&self) -> Rational {
        &self.hi - &self.lo
    }
}

/// Canonical decomposition of a grid box into disjoint `p`-adic cubes.
///
/// Greedy: a cube is emitted as soon as the box covers it entirely, so the
/// family is coarsest-first; the result is sorted by (generation, lattice
/// cell, axis positions), which makes outputs byte-stable. Errors with
/// [`Error::NotGridRational`] when an endpoint has no finite expansion on the
/// shifted grid.
pub fn box_decompose(bx: &AxisBox, p: u32) -> Result<Vec<PAdicCube>> {
    if p < 3 || p.is_multiple_of(2) {
        return Err(Error::BadDivisionNumber { p });
    }
    let dim = bx.dim();
    // Finest generation needed to resolve every endpoint.
    let mut depth = 0u32;
    let mut expansions_lo = Vec::with_capacity(dim);
    let mut expansions_hi = Vec::with_capacity(dim);
    for j in 0..dim {
        for (t, out) in [(&bx.lo[j], &mut expansions_lo), (&bx.hi[j], &mut expansions_hi)] {
            let (e, m) = grid_expansion(t, p).ok_or_else(|| Error::NotGridRational {
                value: fmt_ratio(t),
                p,
            })?;
            depth = depth.max(e);
            out.push((e, m));
        }
    }
    // Integer endpoints at the common scale p^depth (shifted coordinates).
    let scale = pow_int(p, depth);
    let lo_int: Vec<BigInt> = expansions_lo
        .iter()
        .map(|(e, m)| m * pow_int(p, depth - e))
        .collect();
    let hi_int: Vec<BigInt> = expansions_hi
        .iter()
        .map(|(e, m)| m * pow_int(p, depth - e))
        .collect();

    // Lattice cells intersecting the box.
    let cell_lo: Vec<BigInt> = lo_int.iter().map(|v| v.div_floor(&scale)).collect();
    let cell_hi: Vec<BigInt> = hi_int
        .iter()
        .map(|v| (v - BigInt::one()).div_floor(&scale))
        .collect();

    let mut cubes = Vec::new();
    let mut cell = cell_lo.clone();
    loop {
        // Box clipped to this cell, in local coordinates [0, p^depth)^N.
        let mut local_lo = Vec::with_capacity(dim);
        let mut local_hi = Vec::with_capacity(dim);
        for j in 0..dim {
            let base = &cell[j] * &scale;
            local_lo.push((&lo_int[j] - &base).max(BigInt::zero()));
            local_hi.push((&hi_int[j] - &base).min(scale.clone()));
        }
        let shift: Vec<i64> = cell
            .iter()
            .map(|z| z.to_i64().ok_or_else(|| {
                Error::InvalidInput("lattice shift exceeds i64".into())
            }))
            .collect::<Result<_>>()?;
        decompose_in_cell(
            p,
            depth,
            &local_lo,
            &local_hi,
            &vec![BigInt::zero(); dim],
            &scale,
            0,
            &shift,
            &mut cubes,
        );

        // Advance the odometer over lattice cells.
        let mut j = 0;
        loop {
            if j == dim {
                cubes.sort_by_key(decompose_sort_key);
                return Ok(cubes);
            }
            cell[j] += 1;
            if cell[j] <= cell_hi[j] {
                break;
            }
            cell[j] = cell_lo[j].clone();
            j += 1;
        }
    }
}

type SortKey = (usize, Vec<i64>, Vec<BigInt>);

fn decompose_sort_key(cube: &PAdicCube) -> SortKey {
    (
        cube.generation(),
        cube.lattice_shift.clone(),
        cube.axis_positions(),
    )
}

#[allow(clippy::too_many_arguments)]
fn decompose_in_cell(
    p: u32,
    depth: u32,
    region_lo: &[BigInt],
    region_hi: &[BigInt],
    cube_base: &[BigInt],
    cube_side: &BigInt,
    level: u32,
    shift: &[i64],
    out: &mut Vec<PAdicCube>,
) {
    let dim = region_lo.len();
    let covers = (0..dim).all(|j| {
        region_lo[j] == cube_base[j] && region_hi[j] == &cube_base[j] + cube_side
    });
    if covers {
        let fine = pow_int(p, depth - level);
        let pos: Vec<BigInt> = cube_base.iter().map(|b| b / &fine).collect();
        out.push(PAdicCube::from_positions(
            dim,
            p,
            level as usize,
            shift.to_vec(),
            &pos,
        ));
        return;
    }
    debug_assert!(level < depth, "regions resolve by the finest generation");
    let child_side = cube_side / BigInt::from(p);
    let mut offsets = vec![0u32; dim];
    loop {
        let child_base: Vec<BigInt> = (0..dim)
            .map(|j| &cube_base[j] + &child_side * BigInt::from(offsets[j]))
            .collect();
        let mut clip_lo = Vec::with_capacity(dim);
        let mut clip_hi = Vec::with_capacity(dim);
        let mut empty = false;
        for j in 0..dim {
            let lo = region_lo[j].clone().max(child_base[j].clone());
            let hi = region_hi[j].clone().min(&child_base[j] + &child_side);
            if lo >= hi {
                empty = true;
                break;
            }
            clip_lo.push(lo);
            clip_hi.push(hi);
        }
        if !empty {
            decompose_in_cell(
                p, depth, &clip_lo, &clip_hi, &child_base, &child_side, level + 1, shift, out,
            );
        }
        let mut j = 0;
        loop {
            if j == dim {
                return;
            }
            offsets[j] += 1;
            if offsets[j] < p {
                break;
            }
            offsets[j] = 0;
            j += 1;
        }
    }
}

/// Exhaustive per-position measure table at generation `n` within one period
/// cell. Index layout is row-major over axis positions in `[0, p^n)`.
pub fn measure_table(measure: &ValidatedMeasure, n: u32) -> Result<Vec<Rational>> {
    let p = measure.p() as u64;
    let side = p.pow(n);
    let cells = side
        .checked_pow(measure.dim() as u32)
        .filter(|&c| c <= MAX_CELL_TABLE as u64)
        .ok_or(Error::GenerationTooLarge {
            requested: n,
            cap: measure.gen_cap(),
        })? as usize;
    let dim = measure.dim();
    let mut table = Vec::with_capacity(cells);
    for flat in 0..cells {
        let mut pos = vec![0u64; dim];
        let mut rest = flat as u64;
        for j in (0..dim).rev() {
            pos[j] = rest % side;
            rest /= side;
        }
        let big: Vec<BigInt> = pos.iter().map(|&v| BigInt::from(v)).collect();
        let cube = PAdicCube::from_positions(dim, measure.p(), n as usize, vec![0; dim], &big);
        table.push(measure.cube_measure(&cube)?);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::parse_ratio;

    fn eps72() -> ValidatedMeasure {
        let coeffs =
            LengthClassCoefficients::new(vec![ratio(1, 18), ratio(5, 36), ratio(7, 72)]).unwrap();
        validate_spec(&BernoulliSpec::length_class(coeffs)).unwrap()
    }

    fn uniform(dim: usize) -> ValidatedMeasure {
        validate_spec(&BernoulliSpec::length_class(
            LengthClassCoefficients::uniform(dim),
        ))
        .unwrap()
    }

    fn path(p: u32, steps: &[&[i32]]) -> PAdicCube {
        let dim = steps.first().map_or(2, |s| s.len());
        PAdicCube::from_path(PAdicPath {
            dim,
            p,
            steps: steps.iter().map(|s| IndexVector(s.to_vec())).collect(),
        })
    }

    #[test]
    fn validation_accepts_and_rejects() {
        // Uniform weights are Lebesgue measure.
        let uni = uniform(2);
        assert!(uni.is_uniform());
        assert_eq!(uni.prob_min(), &ratio(1, 9));

        let m = eps72();
        assert_eq!(m.prob_min(), &ratio(1, 18));
        assert!(m.is_balanced_length_class());

        // 1/9 + 4/9 + 4/8 != 1.
        let err =
            LengthClassCoefficients::new(vec![ratio(1, 9), ratio(1, 9), ratio(1, 8)]).unwrap_err();
        assert!(matches!(err, Error::NotNormalized { .. }));

        let err = LengthClassCoefficients::new(vec![ratio(-1, 9), ratio(1, 9), ratio(5, 18)])
            .unwrap_err();
        assert!(matches!(err, Error::NonPositiveProbability { .. }));

        for p in [1u32, 2, 4] {
            let spec = BernoulliSpec::general(
                1,
                p,
                vec![(IndexVector(vec![0]), Rational::one())],
            );
            assert!(matches!(
                validate_spec(&spec),
                Err(Error::BadDivisionNumber { .. })
            ));
        }
    }

    #[test]
    fn cell_probabilities_follow_label_length() {
        let m = eps72();
        assert_eq!(
            m.cell_probability(&IndexVector(vec![0, 0])).unwrap(),
            ratio(1, 18)
        );
        assert_eq!(
            m.cell_probability(&IndexVector(vec![1, -1])).unwrap(),
            ratio(7, 72)
        );
        assert_eq!(
            uniform(2)
                .cell_probability(&IndexVector(vec![-1, 0]))
                .unwrap(),
            ratio(1, 9)
        );
        let err = m.cell_probability(&IndexVector(vec![2, 0])).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange(_)));
    }

    #[test]
    fn cube_measures_multiply_along_the_path() {
        let m = eps72();
        assert_eq!(m.cube_measure(&path(3, &[&[0, 0]])).unwrap(), ratio(1, 18));
        // a_2 * a_1 = (7/72)(5/36).
        assert_eq!(
            m.cube_measure(&path(3, &[&[1, 1], &[0, 1]])).unwrap(),
            ratio(35, 2592)
        );
        // Lattice shifts do not matter.
        let mut shifted = path(3, &[&[1, 1], &[0, 1]]);
        shifted.lattice_shift = vec![-3, 7];
        assert_eq!(m.cube_measure(&shifted).unwrap(), ratio(35, 2592));
        // Uniform cubes have Euclidean volume.
        assert_eq!(
            uniform(2).cube_measure(&path(3, &[&[1, 0], &[0, -1], &[1, 1]])).unwrap(),
            ratio(1, 729)
        );
    }

    /// Recursion consistency: a cube's measure is the sum of its children's.
    #[test]
    fn children_sum_to_parent() {
        let m = eps72();
        let parents = [
            path(3, &[]),
            path(3, &[&[1, -1]]),
            path(3, &[&[0, 1], &[-1, -1]]),
        ];
        for parent in parents {
            let total: Rational = (0..9)
                .map(|rank| {
                    let mut steps = parent.path.steps.clone();
                    steps.push(IndexVector::from_rank(rank, 2, 3, 1));
                    m.cube_measure(&PAdicCube::from_path(PAdicPath {
                        dim: 2,
                        p: 3,
                        steps,
                    }))
                    .unwrap()
                })
                .sum();
            assert_eq!(total, m.cube_measure(&parent).unwrap());
        }
    }

    #[test]
    fn point_paths_locate_cubes() {
        let m = eps72();
        let origin = m.point_path(&[Rational::zero(), Rational::zero()], 1).unwrap();
        assert_eq!(origin.steps, vec![IndexVector(vec![0, 0])]);

        let corner = m.point_path(&[ratio(-1, 2), ratio(-1, 2)], 2).unwrap();
        assert_eq!(
            corner.steps,
            vec![IndexVector(vec![-1, -1]), IndexVector(vec![-1, -1])]
        );

        let third = m.point_path(&[ratio(1, 3), Rational::zero()], 2).unwrap();
        assert_eq!(
            third.steps,
            vec![IndexVector(vec![1, 0]), IndexVector(vec![0, 0])]
        );
    }

    /// Oracle: the realized cube of a point's path must contain the point
    /// (after reduction into the period cube).
    #[test]
    fn point_path_containment() {
        let m = eps72();
        let points = [
            [ratio(7, 13), ratio(-22, 7)],
            [ratio(1, 6), ratio(5, 12)],
            [ratio(-1, 2), ratio(499, 1000)],
        ];
        for x in &points {
            let p = m.point_path(x, 6).unwrap();
            let cube = PAdicCube::from_path(p);
            let realized = cube.realize();
            for j in 0..2 {
                let shifted = &x[j] + ratio(1, 2);
                let reduced = &shifted - shifted.floor() - ratio(1, 2);
                assert!(realized.lo[j] <= reduced && reduced < realized.hi[j]);
            }
        }
    }

    #[test]
    fn decompose_whole_cube_and_slabs() {
        let q0 = AxisBox::new(vec![ratio(-1, 2); 2], vec![ratio(1, 2); 2]).unwrap();
        let cubes = box_decompose(&q0, 3).unwrap();
        assert_eq!(cubes.len(), 1);
        assert_eq!(cubes[0].generation(), 0);

        let slab = axis_slab(2, 0, -1);
        let cubes = box_decompose(&slab, 3).unwrap();
        assert_eq!(cubes.len(), 3);
        assert!(cubes.iter().all(|c| c.generation() == 1));
        assert!(cubes
            .iter()
            .all(|c| c.path.steps[0].0[0] == -1));
    }

    #[test]
    fn decompose_mixed_generations() {
        // Width 4/9 splits into one generation-1 layer plus a generation-2
        // column of three cells.
        let bx = AxisBox::new(
            vec![ratio(-1, 2), ratio(-1, 2)],
            vec![ratio(-1, 2) + ratio(4, 9), ratio(-1, 2) + ratio(1, 3)],
        )
        .unwrap();
        let cubes = box_decompose(&bx, 3).unwrap();
        let gens: Vec<usize> = cubes.iter().map(|c| c.generation()).collect();
        assert_eq!(gens, vec![1, 2, 2, 2]);
        // Disjointness and exact union, by area and by pairwise interval checks.
        let total: Rational = cubes.iter().map(|c| c.realize().volume()).sum();
        assert_eq!(total, bx.volume());
        for (i, a) in cubes.iter().enumerate() {
            let ra = a.realize();
            for b in cubes.iter().skip(i + 1) {
                let rb = b.realize();
                let overlaps = (0..2).all(|j| ra.lo[j] < rb.hi[j] && rb.lo[j] < ra.hi[j]);
                assert!(!overlaps, "cubes {i} and later overlap");
            }
        }
        // Determinism.
        let again = box_decompose(&bx, 3).unwrap();
        assert_eq!(cubes, again);
    }

    #[test]
    fn decompose_rejects_off_grid_endpoints() {
        let bx = AxisBox::new(vec![Rational::zero(); 2], vec![ratio(1, 3); 2]).unwrap();
        let err = box_decompose(&bx, 3).unwrap_err();
        assert!(matches!(err, Error::NotGridRational { .. }));
    }

    #[test]
    fn slab_measures_are_one_third_on_the_balanced_line() {
        let m = eps72();
        // 2 a_2 + a_1 = 14/72 + 10/72 = 1/3 for the left slab.
        let slab = axis_slab(2, 0, -1);
        assert_eq!(m.box_measure_exact(&slab).unwrap(), ratio(1, 3));
        for axis in 0..2 {
            for i in -1..=1 {
                assert_eq!(
                    m.box_measure_exact(&axis_slab(2, axis, i)).unwrap(),
                    ratio(1, 3)
                );
            }
        }
    }

    #[test]
    fn box_measures_match_brute_force() {
        let m = eps72();
        // Two generation-1 cells of lengths 0 and 1: 1/18 + 5/36 = 7/36.
        let bx = AxisBox::new(
            vec![ratio(-1, 6), ratio(-1, 6)],
            vec![ratio(1, 2), ratio(1, 6)],
        )
        .unwrap();
        let exact = m.box_measure_exact(&bx).unwrap();
        assert_eq!(exact, ratio(7, 36));
        // Oracle: sum all generation-2 cells inside the box.
        let table = measure_table(&m, 2).unwrap();
        let mut brute = Rational::zero();
        for (flat, value) in table.iter().enumerate() {
            let (px, py) = (flat / 9, flat % 9);
            let lo_x = ratio(-1, 2) + ratio(px as i64, 9);
            let lo_y = ratio(-1, 2) + ratio(py as i64, 9);
            if lo_x >= bx.lo[0]
                && lo_x + ratio(1, 9) <= bx.hi[0]
                && lo_y >= bx.lo[1]
                && lo_y + ratio(1, 9) <= bx.hi[1]
            {
                brute += value;
            }
        }
        assert_eq!(brute, exact);
    }

    #[test]
    fn uniform_box_measure_is_volume_and_periodic() {
        let m = uniform(2);
        let bx = AxisBox::new(
            vec![ratio(-1, 6), ratio(1, 18)],
            vec![ratio(1, 2), ratio(7, 18)],
        )
        .unwrap();
        assert_eq!(m.box_measure_exact(&bx).unwrap(), bx.volume());

        // Periodicity: translate by an integer vector.
        let m = eps72();
        let shifted = AxisBox::new(
            vec![&bx.lo[0] + ratio_from_int(5), &bx.lo[1] - ratio_from_int(2)],
            vec![&bx.hi[0] + ratio_from_int(5), &bx.hi[1] - ratio_from_int(2)],
        )
        .unwrap();
        assert_eq!(
            m.box_measure_exact(&bx).unwrap(),
            m.box_measure_exact(&shifted).unwrap()
        );

        // A unit box anywhere on the grid carries measure one.
        let unit = AxisBox::new(
            vec![ratio(-1, 6), ratio(1, 18)],
            vec![ratio(5, 6), ratio(19, 18)],
        )
        .unwrap();
        assert_eq!(m.box_measure_exact(&unit).unwrap(), Rational::one());
    }

    #[test]
    fn enclosures_degenerate_on_grid_boxes() {
        let m = eps72();
        let bx = AxisBox::new(
            vec![ratio(-1, 6), ratio(-1, 2)],
            vec![ratio(1, 6), ratio(-1, 6)],
        )
        .unwrap();
        let exact = m.box_measure_exact(&bx).unwrap();
        let enc = m.box_measure_enclosure(&bx, 3).unwrap();
        assert!(enc.is_exact());
        assert_eq!(enc.lo, exact);

        // Off-grid boxes stay sound and tighten with generation.
        let off = AxisBox::new(vec![Rational::zero(); 2], vec![ratio(1, 4); 2]).unwrap();
        let coarse = m.box_measure_enclosure(&off, 3).unwrap();
        let fine = m.box_measure_enclosure(&off, 6).unwrap();
        assert!(coarse.lo <= fine.lo && fine.hi <= coarse.hi);
        assert!(fine.width() < coarse.width());
    }

    #[test]
    fn strip_identities() {
        let m = eps72();
        let q0 = path(3, &[]);
        // A triadic strip of generation n in the period cube has measure 3^-n.
        for (n, s) in [(1u32, ratio(-1, 6)), (2, ratio(-1, 18)), (3, ratio(-1, 2))] {
            let h = Rational::new(BigInt::one(), pow_int(3, n));
            assert_eq!(
                m.strip_measure(&q0, 0, &s, &h).unwrap(),
                Rational::new(BigInt::one(), pow_int(3, n))
            );
        }
        // Any grid-aligned strip of thickness h has measure h.
        assert_eq!(
            m.strip_measure(&q0, 1, &ratio(-1, 6), &ratio(1, 9)).unwrap(),
            ratio(1, 9)
        );
        // Inside a generation-2 cube of measure 35/2592.
        let parent = path(3, &[&[1, 1], &[0, 1]]);
        let parent_box = parent.realize();
        let h = ratio(1, 27);
        let measure = m
            .strip_measure(&parent, 0, &parent_box.lo[0], &h)
            .unwrap();
        assert_eq!(measure, parse_ratio("35/7776").unwrap());
    }

    #[test]
    fn strip_guards() {
        let q0 = path(3, &[]);
        // Not in the balanced class.
        let skew = validate_spec(&BernoulliSpec::length_class(
            LengthClassCoefficients::new(vec![ratio(1, 3), ratio(1, 12), ratio(1, 12)]).unwrap(),
        ))
        .unwrap();
        let err = skew
            .strip_measure(&q0, 0, &ratio(-1, 6), &ratio(1, 9))
            .unwrap_err();
        assert!(matches!(err, Error::AdcClassRequired(_)));

        let m = eps72();
        let err = m
            .strip_measure(&q0, 0, &ratio(1, 3), &ratio(1, 3))
            .unwrap_err();
        assert!(matches!(err, Error::StripNotContained { .. }));

        let err = m
            .strip_measure(&q0, 0, &Rational::zero(), &ratio(1, 9))
            .unwrap_err();
        assert!(matches!(err, Error::NotGridRational { .. }));
    }

    #[test]
    fn general_mode_p5_uniform_is_volume() {
        let table: Vec<(IndexVector, Rational)> = (0..25)
            .map(|rank| (IndexVector::from_rank(rank, 2, 5, 2), ratio(1, 25)))
            .collect();
        let m = validate_spec(&BernoulliSpec::general(2, 5, table)).unwrap();
        assert!(m.is_uniform());
        let bx = AxisBox::new(
            vec![ratio(-1, 2) + ratio(2, 25), ratio(-1, 2)],
            vec![ratio(-1, 2) + ratio(13, 25), ratio(-1, 2) + ratio(1, 5)],
        )
        .unwrap();
        assert_eq!(m.box_measure_exact(&bx).unwrap(), bx.volume());
        // 0 is not a grid point for p = 5 either.
        let off = AxisBox::new(vec![Rational::zero(); 2], vec![ratio(1, 5); 2]).unwrap();
        assert!(matches!(
            m.box_measure_exact(&off),
            Err(Error::NotGridRational { .. })
        ));
    }

    /// Sign flips along any coordinate of any step and a uniform coordinate
    /// permutation across steps leave length-class measures unchanged.
    #[test]
    fn length_class_symmetries() {
        let m = eps72();
        let original = path(3, &[&[1, 0], &[-1, 1], &[0, -1]]);
        let flipped = path(3, &[&[-1, 0], &[1, 1], &[0, 1]]);
        let permuted = path(3, &[&[0, 1], &[1, -1], &[-1, 0]]);
        let base = m.cube_measure(&original).unwrap();
        assert_eq!(base, m.cube_measure(&flipped).unwrap());
        assert_eq!(base, m.cube_measure(&permuted).unwrap());
    }
}
