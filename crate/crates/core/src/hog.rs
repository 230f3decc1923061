//! Histogram-of-oriented-gradients descriptor.
//!
//! The 255x255 input is edge-replicated to 256x256 so it divides into a
//! 16x16 grid of 16x16-pixel cells. Gradients come from central
//! differences (clamped at the border), orientations are unsigned over
//! [0, 180) split into 9 bins of 20 degrees, and each magnitude vote is
//! shared linearly between the bin whose left edge it lies in and the next
//! bin. Cells are L2-normalized independently; there is no block overlap.

use crate::error::{Error, Result};
use crate::features::{FeatureTag, FeatureVector, HOG_LEN};
use crate::image::GrayImage;

pub const HOG_INPUT: usize = 255;
const PADDED: usize = 256;
const CELL: usize = 16;
const GRID: usize = PADDED / CELL;
pub const ORIENTATION_BINS: usize = 9;
const BIN_WIDTH: f64 = 180.0 / ORIENTATION_BINS as f64;

pub fn compute_hog(image: &GrayImage) -> Result<FeatureVector> {
    if image.height() != HOG_INPUT || image.width() != HOG_INPUT {
        return Err(Error::Dimension(format!(
            "HOG expects a {HOG_INPUT}x{HOG_INPUT} image, got {}x{}",
            image.height(),
            image.width()
        )));
    }

    // Edge-replicate the last row and column to reach 256x256.
    let at = |y: usize, x: usize| -> f32 {
        image.get(y.min(HOG_INPUT - 1), x.min(HOG_INPUT - 1))
    };

    let mut cells = vec![0.0f64; GRID * GRID * ORIENTATION_BINS];
    for y in 0..PADDED {
        for x in 0..PADDED {
            let gx = at(y, (x + 1).min(PADDED - 1)) - at(y, x.saturating_sub(1));
            let gy = at((y + 1).min(PADDED - 1), x) - at(y.saturating_sub(1), x);
            let mag = ((gx as f64).powi(2) + (gy as f64).powi(2)).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut theta = (gy as f64).atan2(gx as f64).to_degrees();
            if theta < 0.0 {
                theta += 180.0;
            }
            if theta >= 180.0 {
                theta -= 180.0;
            }
            let pos = theta / BIN_WIDTH;
            let bin = pos.floor() as usize % ORIENTATION_BINS;
            let frac = pos - pos.floor();

            let cell = (y / CELL) * GRID + x / CELL;
            let base = cell * ORIENTATION_BINS;
            cells[base + bin] += mag * (1.0 - frac);
            cells[base + (bin + 1) % ORIENTATION_BINS] += mag * frac;
        }
    }

    let mut values = vec![0.0f32; HOG_LEN];
    for (cell, out) in cells
        .chunks(ORIENTATION_BINS)
        .zip(values.chunks_mut(ORIENTATION_BINS))
    {
        let norm = cell.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (o, &v) in out.iter_mut().zip(cell) {
                *o = (v / norm) as f32;
            }
        }
    }
    FeatureVector::new(FeatureTag::Hog, values)
}
