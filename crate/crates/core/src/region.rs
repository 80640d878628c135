//! Certified measure enclosures for boxes, metric balls and annuli.
//!
//! The engine descends the `p`-adic cube tree from the lattice cells that meet
//! the query region, classifying each cube as inside, outside or straddling.
//! Cubes certainly inside contribute to the lower bound; anything possibly
//! meeting the region contributes to the upper bound; only straddling cubes are
//! refined, so the cost scales with the region's boundary at generation `g`,
//! not its volume.
//!
//! All classification happens in scaled integer coordinates: a common scale
//! `S = p^g * lcm(denominators)` turns every cell boundary, center coordinate
//! and radius into an `i128`, so the per-node tests are exact and cheap. Cube
//! weights are tracked as per-length-class digit counts (length-class mode) or
//! exact rational products (general mode); rational arithmetic happens only
//! once per distinct count vector when the accumulators are totaled.
//!
//! Conventions: `d_inf` balls are the paper-style half-open boxes
//! `prod [c_j - R, c_j + R)`; `d_1`/`d_2` balls are open. Boundary-touching
//! cells are conservatively treated as straddling, which keeps every reported
//! interval sound for either open or closed balls (spheres carry no mass).

use std::collections::HashMap;
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::Error;
use crate::measure::{AxisBox, MeasureEnclosure, ValidatedMeasure};
use crate::rational::{fmt_ratio, ratio, Rational};
use crate::Result;

pub const MAX_DIM: usize = 8;
const MAX_CLASSES: usize = MAX_DIM + 1;
/// Dense count-vector accumulators are used up to this many slots.
const DENSE_ACC_LIMIT: u64 = 1 << 22;
/// Lattice cells visited per axis are capped to keep scans finite.
const MAX_CELL_SPAN: i64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    L1,
    L2,
    Linf,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::L1 => "l1",
            Metric::L2 => "l2",
            Metric::Linf => "linf",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Metric::L1),
            "l2" => Ok(Metric::L2),
            "linf" => Ok(Metric::Linf),
            other => Err(Error::InvalidInput(format!("unknown metric {other:?}"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A query region with exact rational data.
#[derive(Debug, Clone)]
pub enum RegionSpec {
    Box(AxisBox),
    Ball {
        metric: Metric,
        center: Vec<Rational>,
        radius: Rational,
    },
}

impl RegionSpec {
    /// Balls under `d_inf` are half-open boxes; normalize them eagerly so the
    /// engine only sees boxes and strictly curved balls.
    pub fn ball(metric: Metric, center: &[Rational], radius: &Rational) -> Result<Self> {
        if !radius.is_positive() {
            return Err(Error::InvalidInput(format!(
                "ball radius must be positive, got {}",
                fmt_ratio(radius)
            )));
        }
        match metric {
            Metric::Linf => Ok(RegionSpec::Box(AxisBox::cube_around(center, radius)?)),
            _ => Ok(RegionSpec::Ball {
                metric,
                center: center.to_vec(),
                radius: radius.clone(),
            }),
        }
    }

    fn dim(&self) -> usize {
        match self {
            RegionSpec::Box(b) => b.dim(),
            RegionSpec::Ball { center, .. } => center.len(),
        }
    }

    /// Axis-aligned bounding box (closed, for lattice-cell selection).
    fn bounding(&self) -> (Vec<Rational>, Vec<Rational>) {
        match self {
            RegionSpec::Box(b) => (b.lo.clone(), b.hi.clone()),
            RegionSpec::Ball { center, radius, .. } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }

    /// Denominators that the integer scale must clear.
    fn denominators(&self) -> Vec<BigInt> {
        let half = ratio(1, 2);
        match self {
            RegionSpec::Box(b) => b
                .lo
                .iter()
                .chain(&b.hi)
                .map(|t| (t + &half).denom().clone())
                .collect(),
            RegionSpec::Ball { center, radius, .. } => center
                .iter()
                .map(|t| (t + &half).denom().clone())
                .chain([radius.denom().clone()])
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Inside,
    Outside,
    Straddle,
}

enum ScaledRegion {
    Box {
        lo: Vec<i128>,
        hi: Vec<i128>,
    },
    Ball {
        metric: Metric,
        center: Vec<i128>,
        radius: i128,
        radius_sq: i128,
    },
}

impl ScaledRegion {
    fn build(spec: &RegionSpec, scale: &BigInt) -> Result<Self> {
        let half = ratio(1, 2);
        let to_scaled = |t: &Rational| -> Result<i128> {
            let v = (t + &half) * Rational::from_integer(scale.clone());
            debug_assert!(v.denom().is_one(), "scale clears all denominators");
            v.to_integer().to_i128().ok_or(Error::GenerationTooLarge {
                requested: 0,
                cap: 0,
            })
        };
        match spec {
            RegionSpec::Box(b) => Ok(ScaledRegion::Box {
                lo: b.lo.iter().map(&to_scaled).collect::<Result<_>>()?,
                hi: b.hi.iter().map(&to_scaled).collect::<Result<_>>()?,
            }),
            RegionSpec::Ball {
                metric,
                center,
                radius,
            } => {
                let scaled_radius = (radius * Rational::from_integer(scale.clone()))
                    .to_integer()
                    .to_i128()
                    .ok_or(Error::GenerationTooLarge {
                        requested: 0,
                        cap: 0,
                    })?;
                Ok(ScaledRegion::Ball {
                    metric: *metric,
                    center: center.iter().map(&to_scaled).collect::<Result<_>>()?,
                    radius: scaled_radius,
                    radius_sq: scaled_radius
                        .checked_mul(scaled_radius)
                        .ok_or(Error::GenerationTooLarge {
                            requested: 0,
                            cap: 0,
                        })?,
                })
            }
        }
    }

    #[inline]
    fn classify(&self, cube_lo: &[i128], side: i128) -> Class {
        match self {
            ScaledRegion::Box { lo, hi } => {
                let mut inside = true;
                for j in 0..lo.len() {
                    let a = cube_lo[j];
                    let b = a + side;
                    if b <= lo[j] || a >= hi[j] {
                        return Class::Outside;
                    }
                    if a < lo[j] || b > hi[j] {
                        inside = false;
                    }
                }
                if inside {
                    Class::Inside
                } else {
                    Class::Straddle
                }
            }
            ScaledRegion::Ball {
                metric: Metric::L1,
                center,
                radius,
                ..
            } => {
                let mut dmin = 0i128;
                let mut dmax = 0i128;
                for j in 0..center.len() {
                    let a = cube_lo[j];
                    let b = a + side;
                    let c = center[j];
                    dmin += (a - c).max(c - b).max(0);
                    dmax += (c - a).max(b - c);
                }
                if dmin >= *radius {
                    Class::Outside
                } else if dmax < *radius {
                    Class::Inside
                } else {
                    Class::Straddle
                }
            }
            ScaledRegion::Ball {
                metric: Metric::L2,
                center,
                radius_sq,
                ..
            } => {
                let mut dmin_sq = 0i128;
                let mut dmax_sq = 0i128;
                for j in 0..center.len() {
                    let a = cube_lo[j];
                    let b = a + side;
                    let c = center[j];
                    let m = (a - c).max(c - b).max(0);
                    let far = (c - a).max(b - c);
                    dmin_sq += m * m;
                    dmax_sq += far * far;
                }
                if dmin_sq >= *radius_sq {
                    Class::Outside
                } else if dmax_sq < *radius_sq {
                    Class::Inside
                } else {
                    Class::Straddle
                }
            }
            ScaledRegion::Ball {
                metric: Metric::Linf,
                ..
            } => unreachable!("d_inf balls are normalized to boxes"),
        }
    }
}

/// Dual enclosures for a nested pair of regions plus their difference.
#[derive(Debug, Clone)]
pub struct AnnulusEnclosures {
    pub inner: Option<MeasureEnclosure>,
    pub outer: MeasureEnclosure,
    /// Enclosure of `mu(outer \ inner)`; equal to `outer` when there is no
    /// inner region.
    pub difference: MeasureEnclosure,
}

/// Enclosure of a single region at generation `g`.
pub fn region_enclosure(
    measure: &ValidatedMeasure,
    region: &RegionSpec,
    g: u32,
) -> Result<MeasureEnclosure> {
    Ok(annulus_enclosures(measure, None, region, g)?.outer)
}

pub(crate) fn box_enclosure(
    measure: &ValidatedMeasure,
    bx: &AxisBox,
    g: u32,
) -> Result<MeasureEnclosure> {
    region_enclosure(measure, &RegionSpec::Box(bx.clone()), g)
}

/// Joint enclosure pass over a nested region pair. `inner`, when present,
/// must be a subset of `outer` (same-center balls with `r <= R`, or nested
/// boxes); the difference bounds come from the same traversal, which makes the
/// lower bound tighter than subtracting the two ball enclosures.
pub fn annulus_enclosures(
    measure: &ValidatedMeasure,
    inner: Option<&RegionSpec>,
    outer: &RegionSpec,
    g: u32,
) -> Result<AnnulusEnclosures> {
    let dim = measure.dim();
    if outer.dim() != dim || inner.is_some_and(|r| r.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: outer.dim(),
        });
    }
    if dim > MAX_DIM {
        return Err(Error::InvalidInput(format!(
            "enclosure engine supports dimension <= {MAX_DIM}"
        )));
    }
    if g > measure.gen_cap() {
        return Err(Error::GenerationTooLarge {
            requested: g,
            cap: measure.gen_cap(),
        });
    }

    // Common integer scale: p^g times every denominator in sight.
    let mut lcm = BigInt::one();
    for den in outer
        .denominators()
        .into_iter()
        .chain(inner.map(|r| r.denominators()).unwrap_or_default())
    {
        lcm = lcm.lcm(&den);
    }
    let scale = lcm * BigInt::from(measure.p()).pow(g);

    let (bb_lo, bb_hi) = outer.bounding();
    let half = ratio(1, 2);
    let mut cell_lo = Vec::with_capacity(dim);
    let mut cell_hi = Vec::with_capacity(dim);
    for j in 0..dim {
        let lo_big = (&bb_lo[j] + &half).floor().to_integer();
        let hi_big = (&bb_hi[j] + &half).ceil().to_integer() - BigInt::one();
        let far = || Error::InvalidInput("query region too far from the origin".into());
        let lo = lo_big.to_i64().ok_or_else(far)?;
        let hi = hi_big.to_i64().ok_or_else(far)?.max(lo);
        if hi - lo + 1 > MAX_CELL_SPAN {
            return Err(Error::InvalidInput(format!(
                "query region spans more than {MAX_CELL_SPAN} lattice cells per axis"
            )));
        }
        cell_lo.push(lo);
        cell_hi.push(hi);
    }

    // The largest scaled magnitude must leave room for L2 squares.
    let max_abs_cell = cell_lo
        .iter()
        .chain(&cell_hi)
        .map(|z| z.unsigned_abs())
        .max()
        .unwrap_or(0)
        + 2;
    let bound = &scale * BigInt::from(max_abs_cell);
    if bound.bits() > 62 {
        return Err(Error::GenerationTooLarge {
            requested: g,
            cap: measure.gen_cap(),
        });
    }

    let outer_scaled = ScaledRegion::build(outer, &scale)?;
    let inner_scaled = inner.map(|r| ScaledRegion::build(r, &scale)).transpose()?;

    let scale_i = scale.to_i128().expect("checked above");
    let mut sides = Vec::with_capacity(g as usize + 1);
    let mut side = scale_i;
    for _ in 0..=g {
        sides.push(side);
        side /= measure.p() as i128;
    }

    let p = measure.p() as usize;
    let ranks = p.pow(dim as u32);
    let mut child_digits = vec![0u8; ranks * dim];
    for rank in 0..ranks {
        let mut rest = rank;
        for j in (0..dim).rev() {
            child_digits[rank * dim + j] = (rest % p) as u8;
            rest /= p;
        }
    }

    let totals = if let Some(coeffs) = measure.length_class_coefficients() {
        let model = LengthClassModel::new(
            coeffs.values(),
            measure.class_of_rank(),
            g,
        );
        run_engine(
            &model,
            dim,
            g,
            &sides,
            &child_digits,
            ranks,
            &cell_lo,
            &cell_hi,
            &outer_scaled,
            inner_scaled.as_ref(),
        )
    } else {
        let probs: Vec<Rational> = (0..ranks).map(|r| measure.prob_of_rank(r)).collect();
        let model = GeneralModel { probs };
        run_engine(
            &model,
            dim,
            g,
            &sides,
            &child_digits,
            ranks,
            &cell_lo,
            &cell_hi,
            &outer_scaled,
            inner_scaled.as_ref(),
        )
    };

    let [inner_lo, inner_hi, outer_lo, outer_hi, ann_lo, ann_hi] = totals;
    let outer_enc = MeasureEnclosure {
        lo: outer_lo,
        hi: outer_hi,
        generation: g,
    };
    Ok(AnnulusEnclosures {
        inner: inner.map(|_| MeasureEnclosure {
            lo: inner_lo,
            hi: inner_hi,
            generation: g,
        }),
        difference: if inner.is_some() {
            MeasureEnclosure {
                lo: ann_lo,
                hi: ann_hi,
                generation: g,
            }
        } else {
            outer_enc.clone()
        },
        outer: outer_enc,
    })
}

/// Accumulator slots: inner lo/hi, outer lo/hi, difference lo/hi.
const SLOT_INNER_LO: usize = 0;
const SLOT_INNER_HI: usize = 1;
const SLOT_OUTER_LO: usize = 2;
const SLOT_OUTER_HI: usize = 3;
const SLOT_ANN_LO: usize = 4;
const SLOT_ANN_HI: usize = 5;

trait WeightModel {
    type State: Clone;
    type Acc;
    fn root_state(&self) -> Self::State;
    fn child_state(&self, state: &Self::State, rank: usize) -> Self::State;
    fn empty_acc(&self) -> Self::Acc;
    fn accumulate(&self, acc: &mut Self::Acc, state: &Self::State);
    fn total(&self, acc: &Self::Acc) -> Rational;
}

/// Digit-count weights for length-class measures: a cube's measure depends
/// only on how many of its digits fall in each length class, so the engine
/// counts cells per count-vector and defers all rational arithmetic.
struct LengthClassModel<'a> {
    classes: usize,
    class_of_rank: &'a [u8],
    /// pow_table[k][e] = a_k^e
    pow_table: Vec<Vec<Rational>>,
    radix: u64,
    dense_len: Option<usize>,
}

impl<'a> LengthClassModel<'a> {
    fn new(coeffs: &'a [Rational], class_of_rank: &'a [u8], g: u32) -> Self {
        let classes = coeffs.len();
        let radix = g as u64 + 2;
        let mut pow_table = Vec::with_capacity(classes);
        for a in coeffs {
            let mut row = Vec::with_capacity(g as usize + 2);
            row.push(Rational::one());
            for e in 1..=(g as usize + 1) {
                let prev = row[e - 1].clone();
                row.push(prev * a);
            }
            pow_table.push(row);
        }
        let dense_len = radix
            .checked_pow(classes as u32)
            .filter(|&len| len <= DENSE_ACC_LIMIT)
            .map(|len| len as usize);
        LengthClassModel {
            classes,
            class_of_rank,
            pow_table,
            radix,
            dense_len,
        }
    }

    #[inline]
    fn dense_index(&self, counts: &[u16; MAX_CLASSES]) -> usize {
        let mut idx = 0u64;
        for k in (0..self.classes).rev() {
            idx = idx * self.radix + counts[k] as u64;
        }
        idx as usize
    }

    fn monomial(&self, counts: &[u16; MAX_CLASSES]) -> Rational {
        let mut acc = Rational::one();
        for k in 0..self.classes {
            if counts[k] > 0 {
                acc *= &self.pow_table[k][counts[k] as usize];
            }
        }
        acc
    }
}

enum CountAcc {
    Dense(Vec<u64>),
    Sparse(HashMap<[u16; MAX_CLASSES], u64>),
}

impl WeightModel for LengthClassModel<'_> {
    type State = [u16; MAX_CLASSES];
    type Acc = CountAcc;

    fn root_state(&self) -> Self::State {
        [0; MAX_CLASSES]
    }

    #[inline]
    fn child_state(&self, state: &Self::State, rank: usize) -> Self::State {
        let mut next = *state;
        next[self.class_of_rank[rank] as usize] += 1;
        next
    }

    fn empty_acc(&self) -> Self::Acc {
        match self.dense_len {
            Some(len) => CountAcc::Dense(vec![0u64; len]),
            None => CountAcc::Sparse(HashMap::new()),
        }
    }

    #[inline]
    fn accumulate(&self, acc: &mut Self::Acc, state: &Self::State) {
        match acc {
            CountAcc::Dense(v) => v[self.dense_index(state)] += 1,
            CountAcc::Sparse(m) => *m.entry(*state).or_insert(0) += 1,
        }
    }

    fn total(&self, acc: &Self::Acc) -> Rational {
        let mut sum = Rational::zero();
        let mut add = |counts: &[u16; MAX_CLASSES], count: u64| {
            if count == 0 {
                return;
            }
            sum += Rational::from_integer(BigInt::from(count)) * self.monomial(counts);
        };
        match acc {
            CountAcc::Dense(v) => {
                for (idx, &count) in v.iter().enumerate() {
                    if count == 0 {
                        continue;
                    }
                    let mut counts = [0u16; MAX_CLASSES];
                    let mut rest = idx as u64;
                    for slot in counts.iter_mut().take(self.classes) {
                        *slot = (rest % self.radix) as u16;
                        rest /= self.radix;
                    }
                    add(&counts, count);
                }
            }
            CountAcc::Sparse(m) => {
                for (counts, &count) in m {
                    add(counts, count);
                }
            }
        }
        sum
    }
}

/// Running exact products for general-mode measures.
struct GeneralModel {
    probs: Vec<Rational>,
}

impl WeightModel for GeneralModel {
    type State = Rational;
    type Acc = Rational;

    fn root_state(&self) -> Self::State {
        Rational::one()
    }

    fn child_state(&self, state: &Self::State, rank: usize) -> Self::State {
        state * &self.probs[rank]
    }

    fn empty_acc(&self) -> Self::Acc {
        Rational::zero()
    }

    fn accumulate(&self, acc: &mut Self::Acc, state: &Self::State) {
        *acc += state;
    }

    fn total(&self, acc: &Self::Acc) -> Rational {
        acc.clone()
    }
}

struct Engine<'a, W: WeightModel> {
    model: &'a W,
    dim: usize,
    g: u32,
    sides: &'a [i128],
    child_digits: &'a [u8],
    ranks: usize,
    outer: &'a ScaledRegion,
    inner: Option<&'a ScaledRegion>,
    accs: [W::Acc; 6],
}

#[allow(clippy::too_many_arguments)]
fn run_engine<W: WeightModel>(
    model: &W,
    dim: usize,
    g: u32,
    sides: &[i128],
    child_digits: &[u8],
    ranks: usize,
    cell_lo: &[i64],
    cell_hi: &[i64],
    outer: &ScaledRegion,
    inner: Option<&ScaledRegion>,
) -> [Rational; 6] {
    let mut engine = Engine {
        model,
        dim,
        g,
        sides,
        child_digits,
        ranks,
        outer,
        inner,
        accs: [
            model.empty_acc(),
            model.empty_acc(),
            model.empty_acc(),
            model.empty_acc(),
            model.empty_acc(),
            model.empty_acc(),
        ],
    };
    let root_state = model.root_state();
    let mut cell = cell_lo.to_vec();
    'cells: loop {
        let mut lo = [0i128; MAX_DIM];
        for j in 0..dim {
            lo[j] = cell[j] as i128 * sides[0];
        }
        engine.node(&lo, 0, &root_state);
        let mut j = 0;
        loop {
            if j == dim {
                break 'cells;
            }
            cell[j] += 1;
            if cell[j] <= cell_hi[j] {
                break;
            }
            cell[j] = cell_lo[j];
            j += 1;
        }
    }
    let accs = engine.accs;
    [
        model.total(&accs[0]),
        model.total(&accs[1]),
        model.total(&accs[2]),
        model.total(&accs[3]),
        model.total(&accs[4]),
        model.total(&accs[5]),
    ]
}

impl<W: WeightModel> Engine<'_, W> {
    fn add(&mut self, slot: usize, state: &W::State) {
        self.model.accumulate(&mut self.accs[slot], state);
    }

    fn node(&mut self, lo: &[i128; MAX_DIM], depth: u32, state: &W::State) {
        let side = self.sides[depth as usize];
        match self.outer.classify(&lo[..self.dim], side) {
            Class::Outside => {}
            Class::Inside => {
                let inner_class = match self.inner {
                    Some(region) => region.classify(&lo[..self.dim], side),
                    None => Class::Outside,
                };
                match inner_class {
                    Class::Outside => {
                        self.add(SLOT_OUTER_LO, state);
                        self.add(SLOT_OUTER_HI, state);
                        self.add(SLOT_ANN_LO, state);
                        self.add(SLOT_ANN_HI, state);
                    }
                    Class::Inside => {
                        self.add(SLOT_INNER_LO, state);
                        self.add(SLOT_INNER_HI, state);
                        self.add(SLOT_OUTER_LO, state);
                        self.add(SLOT_OUTER_HI, state);
                    }
                    Class::Straddle => {
                        if depth == self.g {
                            self.add(SLOT_OUTER_LO, state);
                            self.add(SLOT_OUTER_HI, state);
                            self.add(SLOT_INNER_HI, state);
                            self.add(SLOT_ANN_HI, state);
                        } else {
                            self.recurse(lo, depth, state);
                        }
                    }
                }
            }
            Class::Straddle => {
                if depth == self.g {
                    self.add(SLOT_OUTER_HI, state);
                    self.add(SLOT_ANN_HI, state);
                    if let Some(region) = self.inner {
                        match region.classify(&lo[..self.dim], side) {
                            Class::Straddle => self.add(SLOT_INNER_HI, state),
                            Class::Outside => {}
                            Class::Inside => {
                                debug_assert!(false, "inner inside implies outer inside")
                            }
                        }
                    }
                } else {
                    self.recurse(lo, depth, state);
                }
            }
        }
    }

    fn recurse(&mut self, lo: &[i128; MAX_DIM], depth: u32, state: &W::State) {
        let child_side = self.sides[depth as usize + 1];
        for rank in 0..self.ranks {
            let mut child_lo = *lo;
            let digits = &self.child_digits[rank * self.dim..(rank + 1) * self.dim];
            for j in 0..self.dim {
                child_lo[j] += digits[j] as i128 * child_side;
            }
            let child_state = self.model.child_state(state, rank);
            self.node(&child_lo, depth + 1, &child_state);
        }
    }
}
