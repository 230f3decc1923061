//! Experiment stages: network training, feature extraction, classifier
//! training, evaluation. Each stage reads and writes artifacts under one
//! working directory so runs can be resumed, inspected, and reproduced.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::cvgg::{build_cvgg, load_network, save_network, CvggNetwork};
use crate::error::{Error, Result};
use crate::features::{fuse_features, FeatureTag, FeatureVector};
use crate::hog::compute_hog;
use crate::lbp::{compute_lbp_codes, lbp_histogram};
use crate::ml::{
    forest_fit, forest_predict, knn_fit, load_ensemble, load_knn, save_ensemble, save_knn,
    xgb_fit, xgb_predict, EnsembleMode, LabeledMatrix,
};
use crate::pipeline::config::{ClassifierKind, FeatureSet, RunConfig};
use crate::pipeline::dataset::{load_and_preprocess, DatasetManifest, Split};
use crate::pipeline::metrics::{compute_metrics, confusion_svg, render_text, EvalReport};
use crate::pipeline::store::{FeatureStore, NO_NETWORK};

/// Canonical artifact layout inside a working directory.
#[derive(Debug, Clone)]
pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn new(root: &Path) -> Self {
        Workdir {
            root: root.to_path_buf(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.csv")
    }

    pub fn images_dir(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn network_path(&self) -> PathBuf {
        self.root.join("network.cvgg")
    }

    pub fn store_base(&self) -> PathBuf {
        self.root.join("features")
    }

    pub fn classifier_path(&self, kind: ClassifierKind) -> PathBuf {
        match kind {
            ClassifierKind::Knn => self.root.join("classifier.knn"),
            ClassifierKind::Rf | ClassifierKind::Xgb => self.root.join("classifier.tree"),
        }
    }

    pub fn report_json_path(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_text_path(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn confusion_svg_path(&self) -> PathBuf {
        self.root.join("confusion.svg")
    }

    pub fn load_manifest(&self) -> Result<DatasetManifest> {
        let path = self.manifest_path();
        if !path.exists() {
            return Err(Error::State(format!(
                "no manifest at {}; run the ingest or synth stage first",
                path.display()
            )));
        }
        DatasetManifest::load_csv(&path)
    }
}

/// First 8 bytes of the parameter digest; stamped on stored vectors so
/// stale features are detectable.
pub fn network_fingerprint(net: &CvggNetwork) -> u64 {
    let digest = Sha256::digest(net.param_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

fn load_split_tensors(
    manifest: &DatasetManifest,
    split: Split,
    net_input: (usize, usize, usize),
) -> Result<Vec<(crate::tensor::Tensor, u8)>> {
    let records: Vec<_> = manifest.split_records(split).collect();
    records
        .par_iter()
        .map(|r| {
            let (_, tensor) = load_and_preprocess(r, net_input)?;
            Ok((tensor, r.label))
        })
        .collect()
}

/// Train the network on the manifest's train split and save it. Returns
/// the per-epoch mean losses.
pub fn train_network_stage(work: &Workdir, cfg: &RunConfig) -> Result<Vec<f32>> {
    let manifest = work.load_manifest()?;
    let mut net = build_cvgg(cfg.profile, cfg.seed)?;
    let data = load_split_tensors(&manifest, Split::Train, net.input_shape())?;
    if data.is_empty() {
        return Err(Error::Data("train split is empty".into()));
    }
    let losses = net.train(&data, &cfg.train_config())?;
    save_network(&net, &work.network_path())?;
    Ok(losses)
}

/// Which descriptors the extract stage should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractPlan {
    pub deep: bool,
    pub hog: bool,
    pub lbp: bool,
    pub fused: bool,
}

impl ExtractPlan {
    pub fn all() -> Self {
        ExtractPlan {
            deep: true,
            hog: true,
            lbp: true,
            fused: true,
        }
    }

    fn needs_network(self) -> bool {
        self.deep || self.fused
    }
}

/// Compute the requested descriptors for every image in the manifest and
/// persist them. Returns warnings (currently only the fresh-network
/// notice).
pub fn extract_stage(
    work: &Workdir,
    cfg: &RunConfig,
    plan: ExtractPlan,
    allow_fresh_network: bool,
) -> Result<Vec<String>> {
    let manifest = work.load_manifest()?;
    let mut warnings = Vec::new();

    let net = if plan.needs_network() {
        let path = work.network_path();
        if path.exists() {
            Some(load_network(&path)?)
        } else if allow_fresh_network {
            let net = build_cvgg(cfg.profile, cfg.seed)?;
            save_network(&net, &path)?;
            warnings.push(format!(
                "no trained network found; initialized a fresh seeded one at {}",
                path.display()
            ));
            Some(net)
        } else {
            return Err(Error::State(format!(
                "no network at {}; run the train-cnn stage first",
                path.display()
            )));
        }
    } else {
        None
    };
    let fingerprint = net.as_ref().map(network_fingerprint).unwrap_or(NO_NETWORK);

    let mut store = FeatureStore::open_or_create(&work.store_base())?;
    let net_input = net
        .as_ref()
        .map(|n| n.input_shape())
        .unwrap_or(cfg.profile.input_shape());

    let records: Vec<_> = manifest.records().to_vec();
    let computed: Result<Vec<(String, Vec<FeatureVector>)>> = records
        .par_iter()
        .map(|r| {
            let (gray, tensor) = load_and_preprocess(r, net_input)?;
            let mut out = Vec::new();
            if plan.deep || plan.fused {
                let net = net.as_ref().expect("plan.needs_network implies a network");
                out.push(net.extract_dense_features(&tensor)?);
            }
            if plan.hog || plan.fused {
                out.push(compute_hog(&gray)?);
            }
            if plan.lbp || plan.fused {
                out.push(lbp_histogram(&compute_lbp_codes(&gray)?));
            }
            Ok((r.id.clone(), out))
        })
        .collect();

    for (id, vectors) in computed? {
        let mut deep = None;
        let mut hog = None;
        let mut lbp = None;
        for v in vectors {
            match v.tag() {
                FeatureTag::Deep => deep = Some(v),
                FeatureTag::Hog => hog = Some(v),
                FeatureTag::Lbp => lbp = Some(v),
                FeatureTag::Fused => unreachable!("extractors never emit fused"),
            }
        }
        if plan.fused {
            let fused = fuse_features(
                deep.as_ref().expect("fused plan computes deep"),
                hog.as_ref().expect("fused plan computes hog"),
                lbp.as_ref().expect("fused plan computes lbp"),
            )?;
            store.insert(&id, fused, fingerprint);
        }
        if plan.deep {
            store.insert(&id, deep.expect("deep requested"), fingerprint);
        }
        if plan.hog {
            store.insert(&id, hog.expect("hog requested"), NO_NETWORK);
        }
        if plan.lbp {
            store.insert(&id, lbp.expect("lbp requested"), NO_NETWORK);
        }
    }
    store.save()?;
    Ok(warnings)
}

fn required_tag(feature_set: FeatureSet) -> FeatureTag {
    match feature_set {
        FeatureSet::Deep => FeatureTag::Deep,
        FeatureSet::Fused => FeatureTag::Fused,
    }
}

fn open_store(work: &Workdir) -> Result<FeatureStore> {
    let base = work.store_base();
    if !FeatureStore::exists(&base) {
        return Err(Error::State(format!(
            "no feature store at {}; run the extract stage first",
            base.with_extension("dat").display()
        )));
    }
    FeatureStore::open(&base)
}

fn gather_split(
    store: &FeatureStore,
    manifest: &DatasetManifest,
    split: Split,
    tag: FeatureTag,
) -> Result<(LabeledMatrix, Vec<String>)> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for r in manifest.split_records(split) {
        let stored = store.get(&r.id, tag).ok_or_else(|| {
            Error::State(format!(
                "feature store has no {} vector for image {}; run the extract stage with {} enabled",
                tag.as_str(),
                r.id,
                tag.as_str()
            ))
        })?;
        rows.push(stored.vector.values().to_vec());
        labels.push(r.label);
        ids.push(r.id.clone());
    }
    Ok((LabeledMatrix::new(rows, labels)?, ids))
}

/// Fit the configured classifier on the train split and save it.
pub fn train_classifier_stage(work: &Workdir, cfg: &RunConfig) -> Result<()> {
    let manifest = work.load_manifest()?;
    let store = open_store(work)?;
    let tag = required_tag(cfg.feature_set);
    let (train, _) = gather_split(&store, &manifest, Split::Train, tag)?;
    match cfg.classifier {
        ClassifierKind::Knn => {
            let model = knn_fit(&train, cfg.knn_k, cfg.knn_weighting)?;
            save_knn(&work.classifier_path(cfg.classifier), &model)
        }
        ClassifierKind::Rf => {
            let ensemble = forest_fit(&train, &cfg.forest_config())?;
            save_ensemble(&work.classifier_path(cfg.classifier), &ensemble)
        }
        ClassifierKind::Xgb => {
            let training = xgb_fit(&train, &cfg.xgb_config())?;
            save_ensemble(&work.classifier_path(cfg.classifier), &training.ensemble)
        }
    }
}

/// Score the test split with the saved classifier and write the report
/// artifacts (JSON, text table, confusion SVG).
pub fn evaluate_stage(work: &Workdir, cfg: &RunConfig) -> Result<EvalReport> {
    let started = Instant::now();
    let manifest = work.load_manifest()?;
    let store = open_store(work)?;
    let tag = required_tag(cfg.feature_set);
    let (test, _) = gather_split(&store, &manifest, Split::Test, tag)?;

    let classifier_path = work.classifier_path(cfg.classifier);
    if !classifier_path.exists() {
        return Err(Error::State(format!(
            "no classifier at {}; run the train-clf stage first",
            classifier_path.display()
        )));
    }

    let mut predictions = Vec::with_capacity(test.n());
    match cfg.classifier {
        ClassifierKind::Knn => {
            let model = load_knn(&classifier_path)?;
            for i in 0..test.n() {
                predictions.push(model.predict(test.row(i))?.0);
            }
        }
        ClassifierKind::Rf | ClassifierKind::Xgb => {
            let ensemble = load_ensemble(&classifier_path)?;
            let predict = match ensemble.mode {
                EnsembleMode::Forest => forest_predict,
                EnsembleMode::Boosted => xgb_predict,
            };
            for i in 0..test.n() {
                predictions.push(predict(&ensemble, test.row(i))?.0);
            }
        }
    }

    let mut report = compute_metrics(&predictions, test.labels())?;
    report.config_fingerprint = cfg.fingerprint();
    report.warnings = staleness_warnings(work, &store, tag)?;
    report.wall_time_ms = started.elapsed().as_millis() as u64;

    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Format(format!("cannot serialize report: {e}")))?;
    std::fs::write(work.report_json_path(), json + "\n")?;
    std::fs::write(work.report_text_path(), render_text(&report))?;
    std::fs::write(work.confusion_svg_path(), confusion_svg(&report))?;
    Ok(report)
}

/// Warn when stored network-derived features do not match the network
/// currently on disk.
fn staleness_warnings(work: &Workdir, store: &FeatureStore, tag: FeatureTag) -> Result<Vec<String>> {
    if tag != FeatureTag::Deep && tag != FeatureTag::Fused {
        return Ok(Vec::new());
    }
    let path = work.network_path();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let current = network_fingerprint(&load_network(&path)?);
    let stale: Vec<u64> = store
        .fingerprints(tag)
        .into_iter()
        .filter(|&fp| fp != current)
        .collect();
    if stale.is_empty() {
        Ok(Vec::new())
    } else {
        Ok(vec![format!(
            "{} features were extracted with network fingerprint(s) {} but the current network is {:016x}; re-run the extract stage",
            tag.as_str(),
            stale
                .iter()
                .map(|fp| format!("{fp:016x}"))
                .collect::<Vec<_>>()
                .join(", "),
            current
        )])
    }
}

/// One-shot: classifier training plus evaluation over an existing
/// manifest and feature store.
pub fn run_experiment(work: &Workdir, cfg: &RunConfig) -> Result<EvalReport> {
    let started = Instant::now();
    train_classifier_stage(work, cfg)?;
    let mut report = evaluate_stage(work, cfg)?;
    report.wall_time_ms = started.elapsed().as_millis() as u64;
    Ok(report)
}
