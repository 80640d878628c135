//! Measure description files.
//!
//! A measure travels as JSON with rationals encoded as `"num/den"` strings:
//!
//! ```json
//! {"mode": "length-class", "dim": 2, "p": 3,
//!  "coefficients": ["1/18", "5/36", "7/72"]}
//! ```
//!
//! or, with one explicit probability per child label,
//!
//! ```json
//! {"mode": "general", "dim": 2, "p": 3,
//!  "probabilities": [{"nu": [0, 1], "p": "1/9"}, ...]}
//! ```

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::measure::{
    validate_spec, BernoulliSpec, IndexVector, LengthClassCoefficients, ValidatedMeasure,
};
use crate::rational::{serde_ratio, serde_ratio_vec, Rational};
use crate::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", deny_unknown_fields)]
pub enum MeasureConfig {
    #[serde(rename = "length-class")]
    LengthClass {
        dim: usize,
        p: u32,
        #[serde(with = "serde_ratio_vec")]
        coefficients: Vec<Rational>,
    },
    #[serde(rename = "general")]
    General {
        dim: usize,
        p: u32,
        probabilities: Vec<ProbEntry>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbEntry {
    pub nu: Vec<i32>,
    #[serde(with = "serde_ratio")]
    pub p: Rational,
}

impl MeasureConfig {
    pub fn from_coefficients(coeffs: &LengthClassCoefficients) -> Self {
        MeasureConfig::LengthClass {
            dim: coeffs.dim(),
            p: 3,
            coefficients: coeffs.values().to_vec(),
        }
    }

    pub fn to_spec(&self) -> Result<BernoulliSpec> {
        match self {
            MeasureConfig::LengthClass {
                dim,
                p,
                coefficients,
            } => {
                if *p != 3 {
                    return Err(Error::BadDivisionNumber { p: *p });
                }
                let coeffs = LengthClassCoefficients::new(coefficients.clone())?;
                if coeffs.dim() != *dim {
                    return Err(Error::DimensionMismatch {
                        expected: *dim,
                        got: coeffs.dim(),
                    });
                }
                Ok(BernoulliSpec::length_class(coeffs))
            }
            MeasureConfig::General {
                dim,
                p,
                probabilities,
            } => Ok(BernoulliSpec::general(
                *dim,
                *p,
                probabilities
                    .iter()
                    .map(|e| (IndexVector(e.nu.clone()), e.p.clone()))
                    .collect(),
            )),
        }
    }

    pub fn validate(&self) -> Result<ValidatedMeasure> {
        validate_spec(&self.to_spec()?)
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("config serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("bad measure config: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::ratio;

    #[test]
    fn round_trip_length_class() {
        let text = r#"{"mode":"length-class","dim":2,"p":3,
                       "coefficients":["1/18","5/36","7/72"]}"#;
        let config = MeasureConfig::from_json(text).unwrap();
        let measure = config.validate().unwrap();
        assert_eq!(measure.prob_min(), &ratio(1, 18));
        let emitted = config.to_json();
        let reparsed = MeasureConfig::from_json(&emitted).unwrap();
        assert_eq!(reparsed.to_json(), emitted);
    }

    #[test]
    fn general_mode_requires_a_complete_table() {
        let text = r#"{"mode":"general","dim":1,"p":3,
                       "probabilities":[{"nu":[-1],"p":"1/3"},{"nu":[0],"p":"1/3"}]}"#;
        let config = MeasureConfig::from_json(text).unwrap();
        let err = config.validate().unwrap_err();
        assert!(matches!(err, Error::InvalidInput(msg) if msg.contains("missing")));
    }

    #[test]
    fn emission_is_deterministic() {
        let config = MeasureConfig::from_coefficients(
            &LengthClassCoefficients::new(vec![ratio(1, 18), ratio(5, 36), ratio(7, 72)]).unwrap(),
        );
        assert_eq!(config.to_json(), config.to_json());
        assert!(config.to_json().contains("\"1/18\""));
    }
}
