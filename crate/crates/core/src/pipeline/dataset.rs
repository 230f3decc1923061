//! Dataset manifests: CSV ingestion, label mapping, train/test splitting,
//! and image preprocessing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::tensor::Tensor;

/// Edge length of the grayscale image consumed by the descriptor
/// extractors.
pub const DESCRIPTOR_SIZE: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub patient_id: String,
    pub view: String,
    pub laterality: String,
    pub path: PathBuf,
    /// 0 benign, 1 malignant.
    pub label: u8,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(mut records: Vec<ManifestRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Data(
                "ingestion produced a zero-record manifest".into(),
            ));
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(&r.id) {
                return Err(Error::Data(format!("duplicate image id {:?}", r.id)));
            }
            if r.label > 1 {
                return Err(Error::Data(format!("label {} is not binary", r.label)));
            }
        }
        let mut paths = BTreeSet::new();
        for r in &records {
            if !paths.insert(&r.path) {
                return Err(Error::Data(format!(
                    "duplicate image path {}",
                    r.path.display()
                )));
            }
        }
        Ok(DatasetManifest { records })
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["id", "patient_id", "view", "laterality", "path", "label", "split"])
            .map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.id.as_str(),
                r.patient_id.as_str(),
                r.view.as_str(),
                r.laterality.as_str(),
                &r.path.display().to_string(),
                &r.label.to_string(),
                r.split.as_str(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)
            .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut records = Vec::new();
        for row in r.deserialize::<(String, String, String, String, String, u8, String)>() {
            let (id, patient_id, view, laterality, path, label, split) = row.map_err(csv_err)?;
            records.push(ManifestRecord {
                id,
                patient_id,
                view,
                laterality,
                path: PathBuf::from(path),
                label,
                split: Split::parse(&split)?,
            });
        }
        DatasetManifest::new(records)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv failure: {e}"))
}

pub struct IngestOptions {
    pub image_root: PathBuf,
    /// Used only when the CSV file names do not carry train/test.
    pub split_seed: u64,
    pub train_fraction: f64,
    /// Keep all images of one patient on the same side of the split.
    pub group_by_patient: bool,
    /// Check that each referenced file exists and starts with a PNG
    /// signature.
    pub verify_images: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            image_root: PathBuf::from("."),
            split_seed: 0,
            train_fraction: 0.8,
            group_by_patient: true,
            verify_images: true,
        }
    }
}

/// Map a pathology string onto the binary label. The no-callback benign
/// variant folds into benign.
pub fn map_pathology(s: &str) -> Result<u8> {
    match s.trim().to_ascii_uppercase().as_str() {
        "MALIGNANT" => Ok(1),
        "BENIGN" | "BENIGN_WITHOUT_CALLBACK" => Ok(0),
        _ => Err(Error::Data(format!(
            "unknown pathology string {:?}",
            s.trim()
        ))),
    }
}

fn normalize_header(h: &str) -> String {
    h.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase()
}

struct ColumnMap {
    patient: usize,
    view: usize,
    laterality: usize,
    pathology: usize,
    path: usize,
}

fn resolve_columns(headers: &csv::StringRecord, file: &Path) -> Result<ColumnMap> {
    let mut found: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        let n = normalize_header(h);
        let key = match n.as_str() {
            "patientid" => "patient",
            "view" | "imageview" => "view",
            "laterality" | "leftorrightbreast" => "laterality",
            "pathology" => "pathology",
            "path" | "imagepath" | "imagefilepath" => "path",
            _ => continue, // unknown columns are ignored
        };
        found.entry(key).or_insert(i);
    }
    let need = |key: &str| {
        found.get(key).copied().ok_or_else(|| {
            Error::Data(format!(
                "{}: no column for {key} (headers: {:?})",
                file.display(),
                headers.iter().collect::<Vec<_>>()
            ))
        })
    };
    Ok(ColumnMap {
        patient: need("patient")?,
        view: need("view")?,
        laterality: need("laterality")?,
        pathology: need("pathology")?,
        path: need("path")?,
    })
}

/// Train/test carried by the CSV file name, if any.
fn split_from_name(path: &Path) -> Option<Split> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_ascii_lowercase())?;
    if name.contains("train") {
        Some(Split::Train)
    } else if name.contains("test") {
        Some(Split::Test)
    } else {
        None
    }
}

fn id_from_path(rel: &str) -> String {
    let stripped = rel.strip_suffix(".png").unwrap_or(rel);
    stripped
        .chars()
        .map(|c| if c == '/' || c == '\\' { '_' } else { c })
        .collect()
}

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n'];

fn has_png_signature(path: &Path) -> bool {
    let mut buf = [0u8; 8];
    match File::open(path).and_then(|mut f| f.read_exact(&mut buf)) {
        Ok(()) => buf == PNG_SIGNATURE,
        Err(_) => false,
    }
}

/// Read metadata CSVs into a manifest. Splits come from the CSV file
/// names when present; remaining rows get a seeded stratified split,
/// grouped by patient when requested.
pub fn ingest_dataset(csv_paths: &[PathBuf], opts: &IngestOptions) -> Result<DatasetManifest> {
    if csv_paths.is_empty() {
        return Err(Error::Data("no metadata files given".into()));
    }
    let mut records: Vec<ManifestRecord> = Vec::new();
    let mut preassigned: Vec<bool> = Vec::new();

    for file in csv_paths {
        let mut reader = csv::Reader::from_path(file)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", file.display())))?;
        let headers = reader.headers().map_err(csv_err)?.clone();
        let cols = resolve_columns(&headers, file)?;
        let name_split = split_from_name(file);

        for row in reader.records() {
            let row = row.map_err(csv_err)?;
            let get = |i: usize| row.get(i).unwrap_or("").trim().to_string();
            let rel = get(cols.path);
            if rel.is_empty() {
                return Err(Error::Data(format!(
                    "{}: row with an empty image path",
                    file.display()
                )));
            }
            let label = map_pathology(&get(cols.pathology))?;
            records.push(ManifestRecord {
                id: id_from_path(&rel),
                patient_id: get(cols.patient),
                view: get(cols.view),
                laterality: get(cols.laterality),
                path: opts.image_root.join(&rel),
                label,
                split: name_split.unwrap_or(Split::Train),
            });
            preassigned.push(name_split.is_some());
        }
    }
    if records.is_empty() {
        return Err(Error::Data(
            "ingestion produced a zero-record manifest".into(),
        ));
    }

    if opts.verify_images {
        let mut missing: Vec<String> = records
            .iter()
            .filter(|r| !has_png_signature(&r.path))
            .map(|r| r.path.display().to_string())
            .collect();
        if !missing.is_empty() {
            missing.sort();
            let shown = missing.len().min(10);
            return Err(Error::Data(format!(
                "ingestion failed: {} images missing or not PNG, including: {}",
                missing.len(),
                missing[..shown].join(", ")
            )));
        }
    }

    // Assign the rows that did not come pre-split.
    let unassigned: Vec<usize> = preassigned
        .iter()
        .enumerate()
        .filter(|(_, &a)| !a)
        .map(|(i, _)| i)
        .collect();
    if !unassigned.is_empty() {
        let test_idx = if opts.group_by_patient {
            grouped_split(&records, &unassigned, opts)
        } else {
            plain_split(&records, &unassigned, opts)
        };
        for i in test_idx {
            records[i].split = Split::Test;
        }
    }

    DatasetManifest::new(records)
}

/// Stratified row split: within each label, a seeded shuffle sends the
/// tail fraction to test.
fn plain_split(records: &[ManifestRecord], unassigned: &[usize], opts: &IngestOptions) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.split_seed);
    let mut test = Vec::new();
    for label in 0..2u8 {
        let mut rows: Vec<usize> = unassigned
            .iter()
            .copied()
            .filter(|&i| records[i].label == label)
            .collect();
        shuffle(&mut rows, &mut rng);
        let train_count = (rows.len() as f64 * opts.train_fraction).round() as usize;
        test.extend_from_slice(&rows[train_count.min(rows.len())..]);
    }
    test
}

/// Patient-grouped stratified split: patients (stratified by whether any
/// of their images is malignant) are shuffled and assigned whole.
fn grouped_split(
    records: &[ManifestRecord],
    unassigned: &[usize],
    opts: &IngestOptions,
) -> Vec<usize> {
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in unassigned {
        by_patient
            .entry(records[i].patient_id.as_str())
            .or_default()
            .push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.split_seed);
    let mut test = Vec::new();
    for stratum in 0..2u8 {
        let mut patients: Vec<&Vec<usize>> = by_patient
            .values()
            .filter(|rows| {
                let malignant = rows.iter().any(|&i| records[i].label == 1);
                u8::from(malignant) == stratum
            })
            .collect();
        let total: usize = patients.iter().map(|r| r.len()).sum();
        shuffle(&mut patients, &mut rng);
        let train_target = (total as f64 * opts.train_fraction).round() as usize;
        let mut in_train = 0usize;
        for rows in patients {
            if in_train < train_target {
                in_train += rows.len();
            } else {
                test.extend_from_slice(rows);
            }
        }
    }
    test
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Load a record's PNG into the descriptor-sized grayscale image plus the
/// 3-channel tensor the network consumes (resized to `net_input`).
pub fn load_and_preprocess(
    record: &ManifestRecord,
    net_input: (usize, usize, usize),
) -> Result<(GrayImage, Tensor)> {
    let raw = GrayImage::load_png(&record.path)?;
    let descriptor = raw.resize_bilinear(DESCRIPTOR_SIZE, DESCRIPTOR_SIZE)?;
    let (h, w, _) = net_input;
    let for_net = if (h, w) == (DESCRIPTOR_SIZE, DESCRIPTOR_SIZE) {
        descriptor.clone()
    } else {
        raw.resize_bilinear(h, w)?
    };
    Ok((descriptor, for_net.to_rgb_tensor()))
}
