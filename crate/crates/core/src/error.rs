//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// Probabilities do not sum to one exactly.
    #[error("probabilities are not normalized: sum is {sum}")]
    NotNormalized { sum: String },

    /// A probability is zero or negative.
    #[error("probability for {label} is not positive: {value}")]
    NonPositiveProbability { label: String, value: String },

    /// The division number must be an odd integer >= 3.
    #[error("bad division number p = {p}: must be odd and >= 3")]
    BadDivisionNumber { p: u32 },

    /// An index vector is malformed for the measure's (N, p).
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// A coordinate has no finite p-adic expansion on the shifted grid.
    #[error("coordinate {value} is not grid-rational: {value} + 1/2 is not in Z[1/{p}]")]
    NotGridRational { value: String, p: u32 },

    /// A refinement generation exceeds the configured cap.
    #[error("generation {requested} exceeds cap {cap}")]
    GenerationTooLarge { requested: u32, cap: u32 },

    /// The operation requires a length-class p = 3 measure whose coefficients
    /// satisfy the flat-strip constraint rows.
    #[error("operation requires the balanced length-class coefficient family: {0}")]
    AdcClassRequired(String),

    /// A strip is not contained in its parent cube.
    #[error("strip [{lo}, {hi}) not contained in parent axis range [{parent_lo}, {parent_hi})")]
    StripNotContained {
        lo: String,
        hi: String,
        parent_lo: String,
        parent_hi: String,
    },

    /// Annulus radii are degenerate (r > R or nonpositive).
    #[error("degenerate radii: r = {r}, R = {big_r}")]
    DegenerateRadii { r: String, big_r: String },

    /// A sampled coefficient left the open box (0,1)^{N+1}.
    #[error("sampled coefficient a_{index} = {value} is outside the open interval (0,1)")]
    OutOfOpenBox { index: usize, value: String },

    /// The operation is only defined for a specific dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A box has an empty or inverted axis range.
    #[error("degenerate box on axis {axis}: lo {lo} >= hi {hi}")]
    DegenerateBox { axis: usize, lo: String, hi: String },

    /// Malformed input that does not fit a more specific variant.
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
