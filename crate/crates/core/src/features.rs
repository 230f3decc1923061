//! Tagged feature vectors and their fusion.
//!
//! Lengths are part of the contract: deep 256, HOG 2304, LBP 256, fused
//! 2816, concatenated in the fixed order [deep | hog | lbp].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEEP_LEN: usize = 256;
pub const HOG_LEN: usize = 2304;
pub const LBP_LEN: usize = 256;
pub const FUSED_LEN: usize = DEEP_LEN + HOG_LEN + LBP_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureTag {
    Deep,
    Hog,
    Lbp,
    Fused,
}

impl FeatureTag {
    pub fn expected_len(self) -> usize {
        match self {
            FeatureTag::Deep => DEEP_LEN,
            FeatureTag::Hog => HOG_LEN,
            FeatureTag::Lbp => LBP_LEN,
            FeatureTag::Fused => FUSED_LEN,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureTag::Deep => "deep",
            FeatureTag::Hog => "hog",
            FeatureTag::Lbp => "lbp",
            FeatureTag::Fused => "fused",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "deep" => Ok(FeatureTag::Deep),
            "hog" => Ok(FeatureTag::Hog),
            "lbp" => Ok(FeatureTag::Lbp),
            "fused" => Ok(FeatureTag::Fused),
            other => Err(Error::Argument(format!(
                "unknown feature tag {other:?}; expected deep, hog, lbp, or fused"
            ))),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            FeatureTag::Deep => 0,
            FeatureTag::Hog => 1,
            FeatureTag::Lbp => 2,
            FeatureTag::Fused => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(FeatureTag::Deep),
            1 => Ok(FeatureTag::Hog),
            2 => Ok(FeatureTag::Lbp),
            3 => Ok(FeatureTag::Fused),
            other => Err(Error::Format(format!("unknown feature tag code {other}"))),
        }
    }
}

/// A length-checked feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    tag: FeatureTag,
    values: Vec<f32>,
}

impl FeatureVector {
    pub fn new(tag: FeatureTag, values: Vec<f32>) -> Result<Self> {
        if values.len() != tag.expected_len() {
            return Err(Error::Dimension(format!(
                "{} vector must have {} values, got {}",
                tag.as_str(),
                tag.expected_len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "{} vector contains a non-finite value",
                tag.as_str()
            )));
        }
        Ok(FeatureVector { tag, values })
    }

    pub fn tag(&self) -> FeatureTag {
        self.tag
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Concatenate the three families into the fused vector, in fixed order
/// [deep | hog | lbp].
pub fn fuse_features(
    deep: &FeatureVector,
    hog: &FeatureVector,
    lbp: &FeatureVector,
) -> Result<FeatureVector> {
    for (fv, want, name) in [
        (deep, FeatureTag::Deep, "deep"),
        (hog, FeatureTag::Hog, "hog"),
        (lbp, FeatureTag::Lbp, "lbp"),
    ] {
        if fv.tag() != want {
            return Err(Error::Dimension(format!(
                "fusion expects a {name} vector in the {name} slot, got {}",
                fv.tag().as_str()
            )));
        }
    }
    let mut values = Vec::with_capacity(FUSED_LEN);
    values.extend_from_slice(deep.values());
    values.extend_from_slice(hog.values());
    values.extend_from_slice(lbp.values());
    FeatureVector::new(FeatureTag::Fused, values)
}
