//! Annular decay, doubling and contiguity audits.
//!
//! Every reported quantity is an exact rational or an outward-rounded rational
//! interval; no floating point enters the audit path. The normalized annular
//! ratio is
//!
//! ```text
//! rho = mu(B(x,R) \ B(x,r)) / ( ((R - r)/R) * mu(B(x,R)) )
//! ```
//!
//! A measure satisfies the strong annular decay condition under a metric
//! exactly when `rho` stays bounded over all centers and radii. Under `d_inf`
//! the balanced length-class measures keep `rho` bounded; under `d_1` the
//! diagonal chain inflates annuli around suitably placed centers and `rho`
//! grows geometrically.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;

use crate::error::Error;
use crate::measure::{measure_table, AxisBox, MeasureEnclosure, ValidatedMeasure};
use crate::rational::{fmt_ratio, grid_expansion, pow_int, ratio, Rational};
use crate::region::{annulus_enclosures, region_enclosure, Metric, RegionSpec};
use crate::Result;

/// Outward-rounded rational interval for a ratio; `hi = None` means the upper
/// bound could not be certified (the denominator's lower bound was zero).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatioInterval {
    pub lo: Rational,
    pub hi: Option<Rational>,
}

impl RatioInterval {
    pub fn exact(value: Rational) -> Self {
        RatioInterval {
            lo: value.clone(),
            hi: Some(value),
        }
    }
}

/// One audited annulus.
#[derive(Debug, Clone)]
pub struct AnnulusReport {
    pub center: Vec<Rational>,
    pub r: Rational,
    pub big_r: Rational,
    pub metric: Metric,
    pub annulus: MeasureEnclosure,
    pub ball: MeasureEnclosure,
    pub ratio: RatioInterval,
    pub exact: bool,
}

/// Enclosure of `mu(B(center, radius))` at refinement generation `g`.
///
/// `d_inf` balls with grid endpoints are evaluated exactly; everything else
/// goes through the cell-cover engine with exact corner classification.
pub fn ball_measure(
    measure: &ValidatedMeasure,
    metric: Metric,
    center: &[Rational],
    radius: &Rational,
    g: u32,
) -> Result<MeasureEnclosure> {
    if metric == Metric::Linf {
        let bx = AxisBox::cube_around(center, radius)?;
        if let Some(depth) = grid_depth(&bx, measure.p()) {
            let value = measure.box_measure_exact(&bx)?;
            return Ok(MeasureEnclosure::exact(value, depth));
        }
    }
    region_enclosure(measure, &RegionSpec::ball(metric, center, radius)?, g)
}

/// Normalized annular decay ratio with certified direction of rounding.
pub fn annulus_ratio(
    measure: &ValidatedMeasure,
    metric: Metric,
    center: &[Rational],
    r: &Rational,
    big_r: &Rational,
    g: u32,
) -> Result<AnnulusReport> {
    if !r.is_positive() || r > big_r {
        return Err(Error::DegenerateRadii {
            r: fmt_ratio(r),
            big_r: fmt_ratio(big_r),
        });
    }
    if r == big_r {
        let ball = ball_measure(measure, metric, center, big_r, g)?;
        let exact = ball.is_exact();
        return Ok(AnnulusReport {
            center: center.to_vec(),
            r: r.clone(),
            big_r: big_r.clone(),
            metric,
            annulus: MeasureEnclosure::exact(Rational::zero(), ball.generation),
            ball,
            ratio: RatioInterval::exact(Rational::zero()),
            exact,
        });
    }

    // Fully grid-rational d_inf data: both cubes decompose exactly.
    if metric == Metric::Linf {
        let outer_box = AxisBox::cube_around(center, big_r)?;
        let inner_box = AxisBox::cube_around(center, r)?;
        if let (Some(d_out), Some(d_in)) = (
            grid_depth(&outer_box, measure.p()),
            grid_depth(&inner_box, measure.p()),
        ) {
            let depth = d_out.max(d_in);
            let outer = measure.box_measure_exact(&outer_box)?;
            let inner = measure.box_measure_exact(&inner_box)?;
            let ann = &outer - &inner;
            let factor = (big_r - r) / big_r;
            let rho = &ann / (&factor * &outer);
            return Ok(AnnulusReport {
                center: center.to_vec(),
                r: r.clone(),
                big_r: big_r.clone(),
                metric,
                annulus: MeasureEnclosure::exact(ann, depth),
                ball: MeasureEnclosure::exact(outer, depth),
                ratio: RatioInterval::exact(rho),
                exact: true,
            });
        }
    }

    let inner_region = RegionSpec::ball(metric, center, r)?;
    let outer_region = RegionSpec::ball(metric, center, big_r)?;
    let joint = annulus_enclosures(measure, Some(&inner_region), &outer_region, g)?;
    let factor = (big_r - r) / big_r;
    let ratio = ratio_interval(&joint.difference, &joint.outer, &factor);
    let exact = joint.difference.is_exact() && joint.outer.is_exact();
    Ok(AnnulusReport {
        center: center.to_vec(),
        r: r.clone(),
        big_r: big_r.clone(),
        metric,
        annulus: joint.difference,
        ball: joint.outer,
        ratio,
        exact,
    })
}

fn ratio_interval(
    ann: &MeasureEnclosure,
    ball: &MeasureEnclosure,
    factor: &Rational,
) -> RatioInterval {
    let lo = if ball.hi.is_zero() {
        Rational::zero()
    } else {
        &ann.lo / (factor * &ball.hi)
    };
    let hi = if ball.lo.is_zero() {
        None
    } else {
        Some(&ann.hi / (factor * &ball.lo))
    };
    RatioInterval { lo, hi }
}

/// Finest grid generation of a box, or `None` if any endpoint is off-grid.
fn grid_depth(bx: &AxisBox, p: u32) -> Option<u32> {
    let mut depth = 0;
    for t in bx.lo.iter().chain(&bx.hi) {
        let (e, _) = grid_expansion(t, p)?;
        depth = depth.max(e);
    }
    Some(depth)
}

/// Scan grid: all corner points of generation `center_generation` inside the
/// period cube, i.e. coordinates `-1/2 + k / p^n`.
#[derive(Debug, Clone)]
pub struct ScanGrid {
    pub center_generation: u32,
}

impl ScanGrid {
    pub fn centers(&self, dim: usize, p: u32) -> Vec<Vec<Rational>> {
        let side = (p as i64).pow(self.center_generation);
        let per_axis: Vec<Rational> = (0..side)
            .map(|k| ratio(-1, 2) + ratio(k, side))
            .collect();
        let mut centers = Vec::with_capacity(per_axis.len().pow(dim as u32));
        let mut idx = vec![0usize; dim];
        'outer: loop {
            centers.push(idx.iter().map(|&i| per_axis[i].clone()).collect());
            let mut j = 0;
            loop {
                if j == dim {
                    break 'outer;
                }
                idx[j] += 1;
                if idx[j] < per_axis.len() {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
        }
        centers
    }
}

/// Radius family `R = 3^-k / 2` for `k <= k_max`, `r = R (1 - 3^-j)` for
/// `1 <= j <= j_max`.
#[derive(Debug, Clone)]
pub struct RadiusFamily {
    pub k_max: u32,
    pub j_max: u32,
}

impl RadiusFamily {
    pub fn pairs(&self) -> Vec<(u32, u32, Rational, Rational)> {
        let mut out = Vec::new();
        for k in 0..=self.k_max {
            let big_r = Rational::new(BigInt::one(), BigInt::from(2) * pow_int(3, k));
            for j in 1..=self.j_max {
                let shrink = Rational::one()
                    - Rational::new(BigInt::one(), pow_int(3, j));
                let r = &big_r * &shrink;
                out.push((k, j, r, big_r.clone()));
            }
        }
        out
    }
}

/// One scan sample with its grid coordinates.
#[derive(Debug, Clone)]
pub struct ScanSample {
    pub k: u32,
    pub j: u32,
    pub report: AnnulusReport,
}

#[derive(Debug, Clone)]
pub struct ScanReport {
    pub description: String,
    pub samples: Vec<ScanSample>,
    /// Largest certified upper ratio over the recorded samples; `None` when
    /// some sample had no certified upper bound.
    pub max_ratio_upper: Option<Rational>,
    /// Index into `samples` of the maximizing sample.
    pub argmax: Option<usize>,
}

impl ScanReport {
    /// Largest certified upper ratio among samples with the given `j`.
    pub fn max_upper_for_j(&self, j: u32) -> Option<Rational> {
        let mut best: Option<Rational> = None;
        for s in self.samples.iter().filter(|s| s.j == j) {
            let hi = s.report.ratio.hi.clone()?;
            best = Some(match best {
                Some(b) => b.max(hi),
                None => hi,
            });
        }
        best
    }
}

/// Deterministic annulus scan over a documented grid. Samples run in parallel
/// and are reported in grid order (centers lexicographic, then k, then j);
/// per-sample refinement is `k + j + gen_offset`.
pub fn adc_scan(
    measure: &ValidatedMeasure,
    metric: Metric,
    grid: &ScanGrid,
    radii: &RadiusFamily,
    gen_offset: u32,
) -> Result<ScanReport> {
    let centers = grid.centers(measure.dim(), measure.p());
    let pairs = radii.pairs();
    let mut jobs = Vec::with_capacity(centers.len() * pairs.len());
    for center in &centers {
        for (k, j, r, big_r) in &pairs {
            jobs.push((center.clone(), *k, *j, r.clone(), big_r.clone()));
        }
    }
    let samples: Vec<ScanSample> = jobs
        .into_par_iter()
        .map(|(center, k, j, r, big_r)| {
            let report =
                annulus_ratio(measure, metric, &center, &r, &big_r, k + j + gen_offset)?;
            Ok(ScanSample { k, j, report })
        })
        .collect::<Result<_>>()?;

    let mut max_ratio_upper: Option<Rational> = None;
    let mut argmax = None;
    let mut all_bounded = true;
    for (i, s) in samples.iter().enumerate() {
        match &s.report.ratio.hi {
            Some(hi) => {
                if max_ratio_upper.as_ref().is_none_or(|m| hi > m) {
                    max_ratio_upper = Some(hi.clone());
                    argmax = Some(i);
                }
            }
            None => all_bounded = false,
        }
    }
    if !all_bounded {
        max_ratio_upper = None;
        argmax = None;
    }
    Ok(ScanReport {
        description: format!(
            "centers: generation-{} corners; R = 3^-k/2, k <= {}; r = R(1 - 3^-j), j <= {}; \
             g = k + j + {gen_offset}; metric {metric}",
            grid.center_generation, radii.k_max, radii.j_max
        ),
        samples,
        max_ratio_upper,
        argmax,
    })
}

/// One audited doubling pair of concentric cubes.
#[derive(Debug, Clone)]
pub struct DoublingReport {
    pub center: Vec<Rational>,
    pub r: Rational,
    pub inner: MeasureEnclosure,
    pub outer: MeasureEnclosure,
    pub ratio: RatioInterval,
    pub exact: bool,
}

/// Enclosure of `mu(Q(x, 2r)) / mu(Q(x, r))`; exact on grid data.
pub fn doubling_ratio(
    measure: &ValidatedMeasure,
    center: &[Rational],
    r: &Rational,
    g: u32,
) -> Result<DoublingReport> {
    if !r.is_positive() {
        return Err(Error::DegenerateRadii {
            r: fmt_ratio(r),
            big_r: fmt_ratio(r),
        });
    }
    let two_r = r + r;
    let inner_box = AxisBox::cube_around(center, r)?;
    let outer_box = AxisBox::cube_around(center, &two_r)?;
    let (inner, outer) = match (
        grid_depth(&inner_box, measure.p()),
        grid_depth(&outer_box, measure.p()),
    ) {
        (Some(di), Some(do_)) => {
            let depth = di.max(do_);
            (
                MeasureEnclosure::exact(measure.box_measure_exact(&inner_box)?, depth),
                MeasureEnclosure::exact(measure.box_measure_exact(&outer_box)?, depth),
            )
        }
        _ => {
            let joint = annulus_enclosures(
                measure,
                Some(&RegionSpec::Box(inner_box)),
                &RegionSpec::Box(outer_box),
                g,
            )?;
            (joint.inner.expect("inner region provided"), joint.outer)
        }
    };
    let lo = if inner.hi.is_zero() {
        Rational::zero()
    } else {
        &outer.lo / &inner.hi
    };
    let hi = if inner.lo.is_zero() {
        None
    } else {
        Some(&outer.hi / &inner.lo)
    };
    let exact = inner.is_exact() && outer.is_exact();
    Ok(DoublingReport {
        center: center.to_vec(),
        r: r.clone(),
        inner,
        outer,
        ratio: RatioInterval { lo, hi },
        exact,
    })
}

/// Exhaustive minimum of `mu(Q) / mu(Q~)` over ordered face-adjacent pairs of
/// generation-`n` cubes, with periodic wrap. Always at least the smallest
/// child probability.
pub fn contiguous_pair_audit(measure: &ValidatedMeasure, n: u32) -> Result<Rational> {
    let table = measure_table(measure, n)?;
    let dim = measure.dim();
    let side = (measure.p() as usize).pow(n);
    let mut min_ratio: Option<Rational> = None;
    let mut strides = vec![0usize; dim];
    {
        let mut s = 1usize;
        for j in (0..dim).rev() {
            strides[j] = s;
            s *= side;
        }
    }
    for flat in 0..table.len() {
        for j in 0..dim {
            let pos_j = (flat / strides[j]) % side;
            let neighbor = if pos_j + 1 == side {
                flat - pos_j * strides[j]
            } else {
                flat + strides[j]
            };
            let a = &table[flat];
            let b = &table[neighbor];
            for ratio in [a / b, b / a] {
                if min_ratio.as_ref().is_none_or(|m| &ratio < m) {
                    min_ratio = Some(ratio);
                }
            }
        }
    }
    min_ratio.ok_or_else(|| Error::InvalidInput("empty cube table".into()))
}

/// Step factor of the diagonal chain for N = 2 length-class weights:
/// `2 a_1 + a_2`, which is `1/3 + 3 eps` on the balanced line.
pub fn chain_step_factor(measure: &ValidatedMeasure) -> Result<Rational> {
    if measure.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: measure.dim(),
        });
    }
    let coeffs = measure.length_class_coefficients().ok_or_else(|| {
        Error::AdcClassRequired("diagonal chain analysis needs length-class weights".into())
    })?;
    let v = coeffs.values();
    Ok(ratio(2, 1) * &v[1] + &v[2])
}

/// For balanced N = 2 weights, the line parameter `eps` with
/// `(a_0, a_1, a_2) = (1/9 - 4 eps, 1/9 + 2 eps, 1/9 - eps)`.
pub fn epsilon_of(measure: &ValidatedMeasure) -> Option<Rational> {
    if measure.dim() != 2 {
        return None;
    }
    let v = measure.length_class_coefficients()?.values();
    let ninth = ratio(1, 9);
    let eps = (&v[1] - &ninth) / ratio(2, 1);
    let expect_a0 = &ninth - ratio(4, 1) * &eps;
    let expect_a2 = &ninth - &eps;
    (v[0] == expect_a0 && v[2] == expect_a2).then_some(eps)
}

/// Exact measure of the diagonal chain of `3^n` generation-`n` cubes running
/// parallel to `(1, 1)` from the bottom-center cell, cubes reduced by
/// periodicity. For N = 2 length-class weights this equals `(2 a_1 + a_2)^n`.
pub fn chain_measure(measure: &ValidatedMeasure, n: u32) -> Result<Rational> {
    if measure.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: measure.dim(),
        });
    }
    let coeffs = measure
        .length_class_coefficients()
        .ok_or_else(|| {
            Error::AdcClassRequired("diagonal chain analysis needs length-class weights".into())
        })?
        .values()
        .to_vec();
    if n == 0 || n > 16 {
        return Err(Error::GenerationTooLarge {
            requested: n,
            cap: 16,
        });
    }
    let side = 3u64.pow(n);
    // x-position of the bottom-center cell: the central generation-n index.
    let base_x = (side - 1) / 2;
    let mut class_counts: HashMap<[u16; 3], u64> = HashMap::new();
    for j in 0..side {
        let mut px = base_x + j;
        if px >= side {
            px -= side;
        }
        let mut py = j;
        let mut counts = [0u16; 3];
        for _ in 0..n {
            let dx = px % 3;
            let dy = py % 3;
            px /= 3;
            py /= 3;
            let class = usize::from(dx != 1) + usize::from(dy != 1);
            counts[class] += 1;
        }
        *class_counts.entry(counts).or_insert(0) += 1;
    }
    let mut pow_tables: Vec<Vec<Rational>> = Vec::with_capacity(3);
    for a in &coeffs {
        let mut row = vec![Rational::one()];
        for e in 1..=n as usize {
            let prev = row[e - 1].clone();
            row.push(prev * a);
        }
        pow_tables.push(row);
    }
    let mut total = Rational::zero();
    for (counts, mult) in class_counts {
        let mut term = Rational::from_integer(BigInt::from(mult));
        for (k, &c) in counts.iter().enumerate() {
            term *= &pow_tables[k][c as usize];
        }
        total += term;
    }
    Ok(total)
}

/// Annulus reports for the `d_1` growth family: center `(0, 1/2)`, `R = 1`,
/// `r_n = 1 - 3^-n`, refined at `g = n + gen_offset`. On the balanced line
/// with `eps > 0` the certified ratios grow like `(1 + 9 eps)^n`; at the
/// uniform point they stay bounded.
pub fn d1_blowup_series(
    measure: &ValidatedMeasure,
    n_max: u32,
    gen_offset: u32,
) -> Result<Vec<AnnulusReport>> {
    if measure.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: measure.dim(),
        });
    }
    let center = [Rational::zero(), ratio(1, 2)];
    let big_r = Rational::one();
    (1..=n_max)
        .into_par_iter()
        .map(|n| {
            let r = Rational::one() - Rational::new(BigInt::one(), pow_int(3, n));
            annulus_ratio(measure, Metric::L1, &center, &r, &big_r, n + gen_offset)
        })
        .collect()
}
