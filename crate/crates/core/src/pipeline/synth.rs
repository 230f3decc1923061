//! Seeded synthetic mammogram stand-ins. Two texture classes that the
//! descriptor + classifier stack can tell apart: class 0 gets a handful
//! of broad smooth blobs, class 1 a swarm of small high-contrast ones.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::pipeline::dataset::{DatasetManifest, ManifestRecord, Split, DESCRIPTOR_SIZE};

const MIN_IMAGES: usize = 20;

/// Generate `n` balanced synthetic images under `dir` and return the
/// manifest describing them. Fully determined by `seed`.
pub fn synth_dataset(n: usize, seed: u64, dir: &Path) -> Result<DatasetManifest> {
    if n < MIN_IMAGES {
        return Err(Error::Argument(format!(
            "need at least {MIN_IMAGES} synthetic images, got {n}"
        )));
    }
    if n % 2 != 0 {
        return Err(Error::Argument(format!(
            "synthetic image count must be even for balanced classes, got {n}"
        )));
    }
    std::fs::create_dir_all(dir)?;

    let per_class = n / 2;
    let train_per_class = (per_class as f64 * 0.8).round() as usize;
    let mut records = Vec::with_capacity(n);
    for idx in 0..n {
        let label = (idx % 2) as u8;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(idx as u64 + 1);
        let img = render(label, &mut rng);
        let file = format!("synth_{idx:05}.png");
        let path = dir.join(&file);
        img.save_png(&path)?;
        // idx/2 counts images within the class; the first 80% train.
        let split = if idx / 2 < train_per_class {
            Split::Train
        } else {
            Split::Test
        };
        records.push(ManifestRecord {
            id: format!("synth_{idx:05}"),
            patient_id: format!("SYN_P_{idx:05}"),
            view: "CC".to_string(),
            laterality: "L".to_string(),
            path,
            label,
            split,
        });
    }
    DatasetManifest::new(records)
}

fn render(label: u8, rng: &mut ChaCha8Rng) -> GrayImage {
    let size = DESCRIPTOR_SIZE;
    let mut px = vec![0.0f32; size * size];

    // Mild vertical illumination gradient so neither class is flat.
    for y in 0..size {
        let base = 0.35 + 0.08 * (y as f32 / size as f32);
        for x in 0..size {
            px[y * size + x] = base;
        }
    }

    let (count, sigma_lo, sigma_hi, amp_lo, amp_hi) = if label == 0 {
        (rng.gen_range(4..=7), 18.0, 30.0, 0.10, 0.20)
    } else {
        (rng.gen_range(60..=90), 1.5, 3.5, 0.25, 0.40)
    };

    for _ in 0..count {
        let cx = rng.gen_range(0.0..size as f32);
        let cy = rng.gen_range(0.0..size as f32);
        let sigma: f32 = rng.gen_range(sigma_lo..sigma_hi);
        let amp = rng.gen_range(amp_lo..amp_hi) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let reach = (3.0 * sigma).ceil() as i64;
        let denom = 2.0 * sigma * sigma;
        let y0 = ((cy as i64) - reach).max(0) as usize;
        let y1 = ((cy as i64) + reach).min(size as i64 - 1) as usize;
        let x0 = ((cx as i64) - reach).max(0) as usize;
        let x1 = ((cx as i64) + reach).min(size as i64 - 1) as usize;
        for y in y0..=y1 {
            let dy = y as f32 - cy;
            for x in x0..=x1 {
                let dx = x as f32 - cx;
                px[y * size + x] += amp * (-(dx * dx + dy * dy) / denom).exp();
            }
        }
    }

    for v in px.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    GrayImage::new(size, size, px).expect("synthetic pixels are finite and clamped")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_or_odd_counts() {
        let dir = tempfile::tempdir().unwrap();
        assert!(synth_dataset(10, 1, dir.path()).is_err());
        assert!(synth_dataset(21, 1, dir.path()).is_err());
    }

    #[test]
    fn balanced_labels_and_grouped_split() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_dataset(20, 7, dir.path()).unwrap();
        assert_eq!(manifest.len(), 20);
        let per_label = |l: u8| manifest.records().iter().filter(|r| r.label == l).count();
        assert_eq!(per_label(0), 10);
        assert_eq!(per_label(1), 10);
        for split in [Split::Train, Split::Test] {
            let of = |l: u8| {
                manifest
                    .split_records(split)
                    .filter(|r| r.label == l)
                    .count()
            };
            assert_eq!(of(0), of(1), "split {split} unbalanced");
        }
        assert_eq!(manifest.split_records(Split::Test).count(), 4);
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        synth_dataset(20, 3, a.path()).unwrap();
        synth_dataset(20, 3, b.path()).unwrap();
        for idx in 0..20 {
            let name = format!("synth_{idx:05}.png");
            let ba = std::fs::read(a.path().join(&name)).unwrap();
            let bb = std::fs::read(b.path().join(&name)).unwrap();
            assert_eq!(ba, bb, "{name} differs across runs");
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        synth_dataset(20, 3, a.path()).unwrap();
        synth_dataset(20, 4, b.path()).unwrap();
        let name = "synth_00000.png";
        assert_ne!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap()
        );
    }

    #[test]
    fn classes_have_distinct_texture() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_dataset(20, 5, dir.path()).unwrap();
        // Mean absolute horizontal gradient separates smooth from busy.
        let roughness = |r: &ManifestRecord| {
            let img = GrayImage::load_png(&r.path).unwrap();
            let (h, w) = (img.height(), img.width());
            let mut acc = 0.0f64;
            for y in 0..h {
                for x in 1..w {
                    acc += (img.pixels()[y * w + x] - img.pixels()[y * w + x - 1]).abs() as f64;
                }
            }
            acc / (h * (w - 1)) as f64
        };
        let mean = |l: u8| {
            let rs: Vec<f64> = manifest
                .records()
                .iter()
                .filter(|r| r.label == l)
                .map(roughness)
                .collect();
            rs.iter().sum::<f64>() / rs.len() as f64
        };
        let (smooth, busy) = (mean(0), mean(1));
        assert!(
            busy > 2.0 * smooth,
            "texture contrast too weak: class0 {smooth}, class1 {busy}"
        );
    }
}
