//! Local binary patterns with 8 neighbours at radius 1.
//!
//! Each interior pixel compares its 8 neighbours against the centre; a
//! neighbour strictly greater than the centre contributes 2^n. Bit n=0 is
//! the top-left neighbour and n advances clockwise. Border pixels have no
//! full neighbourhood and are excluded, so a HxW image yields an
//! (H-2)x(W-2) code map.

use crate::error::{Error, Result};
use crate::features::{FeatureTag, FeatureVector, LBP_LEN};
use crate::image::GrayImage;

/// (dy, dx) offsets in clockwise bit order starting at the top-left.
const NEIGHBOURS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
];

/// Codes for every interior pixel of the source image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LbpCodeMap {
    height: usize,
    width: usize,
    codes: Vec<u8>,
}

impl LbpCodeMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }
}

/// Code for a single 3x3 window given the centre and its neighbours in bit
/// order. Exposed for direct checks against hand-evaluated windows.
pub fn lbp_code(center: f32, neighbours: [f32; 8]) -> u8 {
    let mut code = 0u8;
    for (n, &v) in neighbours.iter().enumerate() {
        if v > center {
            code |= 1 << n;
        }
    }
    code
}

pub fn compute_lbp_codes(image: &GrayImage) -> Result<LbpCodeMap> {
    let (h, w) = (image.height(), image.width());
    if h < 3 || w < 3 {
        return Err(Error::Dimension(format!(
            "LBP needs at least a 3x3 image, got {h}x{w}"
        )));
    }
    let mut codes = Vec::with_capacity((h - 2) * (w - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = image.get(y, x);
            let mut code = 0u8;
            for (n, (dy, dx)) in NEIGHBOURS.iter().enumerate() {
                let v = image.get((y as isize + dy) as usize, (x as isize + dx) as usize);
                if v > c {
                    code |= 1 << n;
                }
            }
            codes.push(code);
        }
    }
    Ok(LbpCodeMap {
        height: h - 2,
        width: w - 2,
        codes,
    })
}

/// 256-bin histogram of codes, normalized to relative frequencies.
pub fn lbp_histogram(codes: &LbpCodeMap) -> FeatureVector {
    let mut counts = [0u64; LBP_LEN];
    for &c in &codes.codes {
        counts[c as usize] += 1;
    }
    let total = codes.codes.len() as f64;
    let values = counts.iter().map(|&c| (c as f64 / total) as f32).collect();
    FeatureVector::new(FeatureTag::Lbp, values).expect("histogram always has 256 finite bins")
}
