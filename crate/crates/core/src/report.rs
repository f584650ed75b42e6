//! Check records shared by the verification routines and the report writer.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Every label a report may carry. Reports naming anything else are rejected on read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckLabel {
    ResolventClosedForm,
    ResolventConvergence,
    ExpIntegralIdentity,
    StirlingGrowth,
    WeightGrowthIdentity,
    WeightContinuity,
    WeightMonotone,
    WeightLowerEnvelope,
    WeightTotalGrowth,
    WeightResonantRatio,
    MollifierComparison,
    MollifierDerivative,
    MultiplierComparison,
    MultiplierCommutator,
    MultiplierMoment,
    CascadeTiming,
    CascadeEnvelope,
    CascadeLowerBound,
    CascadePaths,
    ResonantToy,
    ElectrostaticGain,
    ElectrostaticSign,
    NonlinearTiming,
    NonlinearAmplitude,
    ApproximationError,
    DensityShape,
    LowFrequencyNorm,
    LinearToggle,
    BackwardAccessibility,
    RoundTrip,
    Sufficiency,
}

impl CheckLabel {
    pub const ALL: [CheckLabel; 31] = [
        CheckLabel::ResolventClosedForm,
        CheckLabel::ResolventConvergence,
        CheckLabel::ExpIntegralIdentity,
        CheckLabel::StirlingGrowth,
        CheckLabel::WeightGrowthIdentity,
        CheckLabel::WeightContinuity,
        CheckLabel::WeightMonotone,
        CheckLabel::WeightLowerEnvelope,
        CheckLabel::WeightTotalGrowth,
        CheckLabel::WeightResonantRatio,
        CheckLabel::MollifierComparison,
        CheckLabel::MollifierDerivative,
        CheckLabel::MultiplierComparison,
        CheckLabel::MultiplierCommutator,
        CheckLabel::MultiplierMoment,
        CheckLabel::CascadeTiming,
        CheckLabel::CascadeEnvelope,
        CheckLabel::CascadeLowerBound,
        CheckLabel::CascadePaths,
        CheckLabel::ResonantToy,
        CheckLabel::ElectrostaticGain,
        CheckLabel::ElectrostaticSign,
        CheckLabel::NonlinearTiming,
        CheckLabel::NonlinearAmplitude,
        CheckLabel::ApproximationError,
        CheckLabel::DensityShape,
        CheckLabel::LowFrequencyNorm,
        CheckLabel::LinearToggle,
        CheckLabel::BackwardAccessibility,
        CheckLabel::RoundTrip,
        CheckLabel::Sufficiency,
    ];

    /// Reported but never counted as a failure.
    pub fn is_informational(self) -> bool {
        matches!(self, CheckLabel::Sufficiency)
    }

    pub fn as_str(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    }
}

impl fmt::Display for CheckLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str())
    }
}

/// A float that survives JSON: non-finite values are written as strings.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            s.serialize_f64(v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            F(f64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::F(v) => Ok(Num(v)),
            Raw::S(s) => match s.as_str() {
                "inf" => Ok(Num(f64::INFINITY)),
                "-inf" => Ok(Num(f64::NEG_INFINITY)),
                "nan" => Ok(Num(f64::NAN)),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub label: CheckLabel,
    pub pass: bool,
    /// The measured quantity the pass decision is based on.
    pub value: Num,
    /// Threshold it is compared against.
    pub tolerance: Num,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub detail: BTreeMap<String, Num>,
}

impl Check {
    /// Passes when `value <= tolerance`.
    pub fn at_most(label: CheckLabel, value: f64, tolerance: f64) -> Self {
        Self::new(label, value <= tolerance, value, tolerance)
    }

    /// Passes when `value >= tolerance`.
    pub fn at_least(label: CheckLabel, value: f64, tolerance: f64) -> Self {
        Self::new(label, value >= tolerance, value, tolerance)
    }

    pub fn new(label: CheckLabel, pass: bool, value: f64, tolerance: f64) -> Self {
        Check {
            label,
            pass,
            value: Num(value),
            tolerance: Num(tolerance),
            detail: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, v: f64) -> Self {
        self.detail.insert(key.to_owned(), Num(v));
        self
    }

    pub fn line(&self) -> String {
        format!(
            "{:<24} {}  value={:.6e} tol={:.6e}",
            self.label.as_str(),
            match (self.pass, self.label.is_informational()) {
                (true, _) => "PASS",
                (false, true) => "INFO",
                (false, false) => "FAIL",
            },
            self.value.0,
            self.tolerance.0
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_distinct_kebab_strings() {
        let names: std::collections::BTreeSet<String> = CheckLabel::ALL.iter().map(|l| l.as_str()).collect();
        assert_eq!(names.len(), CheckLabel::ALL.len());
        assert!(names.iter().all(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_lowercase() || c == '-')));
    }

    #[test]
    fn non_finite_numbers_round_trip() {
        for v in [f64::INFINITY, f64::NEG_INFINITY, 1.5e-300] {
            let s = serde_json::to_string(&Num(v)).unwrap();
            let back: Num = serde_json::from_str(&s).unwrap();
            assert_eq!(back.0, v);
        }
        let s = serde_json::to_string(&Num(f64::NAN)).unwrap();
        assert!(serde_json::from_str::<Num>(&s).unwrap().0.is_nan());
    }
}
