//! Binary persistence for classical models.
//!
//! Tree ensembles: magic "TREE", u16 version, u32 header length, JSON
//! header (mode, dimension, hyperparameters), then per tree a u32 node
//! count followed by packed nodes. KNN models: magic "KNNM" with the
//! standardization statistics, stored rows, and labels. All integers and
//! floats little-endian; floats round-trip bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ml::tree::{DecisionTree, EnsembleMode, TreeEnsemble, TreeNode};
use crate::ml::xgb::BoostParams;
use crate::ml::{KnnModel, Standardizer, Weighting};

const TREE_MAGIC: &[u8; 4] = b"TREE";
const KNN_MAGIC: &[u8; 4] = b"KNNM";
const FORMAT_VERSION: u16 = 1;

fn read_bytes<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("truncated file while reading {what}"))
        } else {
            Error::Io(e)
        }
    })?;
    Ok(buf)
}

fn read_u16<R: Read>(r: &mut R, what: &str) -> Result<u16> {
    Ok(u16::from_le_bytes(read_bytes(r, 2, what)?.try_into().unwrap()))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_bytes(r, 4, what)?.try_into().unwrap()))
}

fn check_magic<R: Read>(r: &mut R, expect: &[u8; 4], kind: &str) -> Result<()> {
    let got = read_bytes(r, 4, "magic")?;
    if got != expect {
        return Err(Error::Format(format!(
            "bad magic {:?} for a {kind} file (expected {:?})",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(expect)
        )));
    }
    Ok(())
}

fn check_version<R: Read>(r: &mut R) -> Result<()> {
    let version = read_u16(r, "version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version} (supported: {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

fn write_header<W: Write, H: Serialize>(w: &mut W, magic: &[u8; 4], header: &H) -> Result<()> {
    let json = serde_json::to_vec(header)
        .map_err(|e| Error::Format(format!("cannot encode header: {e}")))?;
    w.write_all(magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

fn read_header<R: Read, H: for<'de> Deserialize<'de>>(
    r: &mut R,
    magic: &[u8; 4],
    kind: &str,
) -> Result<H> {
    check_magic(r, magic, kind)?;
    check_version(r)?;
    let len = read_u32(r, "header length")? as usize;
    let json = read_bytes(r, len, "header")?;
    serde_json::from_slice(&json).map_err(|e| Error::Format(format!("corrupt {kind} header: {e}")))
}

#[derive(Serialize, Deserialize)]
struct EnsembleHeader {
    mode: EnsembleMode,
    dimension: usize,
    max_depth: u32,
    seed: u64,
    tree_count: usize,
    boost: Option<BoostParams>,
}

pub fn save_ensemble(path: &Path, ensemble: &TreeEnsemble) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(
        &mut w,
        TREE_MAGIC,
        &EnsembleHeader {
            mode: ensemble.mode(),
            dimension: ensemble.dimension(),
            max_depth: ensemble.max_depth,
            seed: ensemble.seed,
            tree_count: ensemble.trees().len(),
            boost: ensemble.boost_params().copied(),
        },
    )?;
    for tree in ensemble.trees() {
        w.write_all(&(tree.nodes().len() as u32).to_le_bytes())?;
        for n in tree.nodes() {
            w.write_all(&[u8::from(n.leaf)])?;
            w.write_all(&n.feature.to_le_bytes())?;
            w.write_all(&n.threshold.to_le_bytes())?;
            w.write_all(&n.left.to_le_bytes())?;
            w.write_all(&n.right.to_le_bytes())?;
            w.write_all(&n.value.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_ensemble(path: &Path) -> Result<TreeEnsemble> {
    let mut r = BufReader::new(File::open(path)?);
    let header: EnsembleHeader = read_header(&mut r, TREE_MAGIC, "tree ensemble")?;
    let mut trees = Vec::with_capacity(header.tree_count);
    for t in 0..header.tree_count {
        let count = read_u32(&mut r, "node count")? as usize;
        let bytes = read_bytes(&mut r, count * 21, &format!("nodes of tree {t}"))?;
        let mut nodes = Vec::with_capacity(count);
        for ch in bytes.chunks_exact(21) {
            nodes.push(TreeNode {
                leaf: ch[0] != 0,
                feature: u32::from_le_bytes(ch[1..5].try_into().unwrap()),
                threshold: f32::from_le_bytes(ch[5..9].try_into().unwrap()),
                left: u32::from_le_bytes(ch[9..13].try_into().unwrap()),
                right: u32::from_le_bytes(ch[13..17].try_into().unwrap()),
                value: f32::from_le_bytes(ch[17..21].try_into().unwrap()),
            });
        }
        trees.push(DecisionTree::new(nodes).map_err(|e| {
            Error::Format(format!("tree {t} is structurally invalid: {e}"))
        })?);
    }
    TreeEnsemble::new(
        header.mode,
        trees,
        header.dimension,
        header.max_depth,
        header.seed,
        header.boost,
    )
    .map_err(|e| Error::Format(format!("inconsistent ensemble header: {e}")))
}

#[derive(Serialize, Deserialize)]
struct KnnHeader {
    k: usize,
    weighting: String,
    dimension: usize,
    rows: usize,
}

pub fn save_knn(path: &Path, model: &KnnModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(
        &mut w,
        KNN_MAGIC,
        &KnnHeader {
            k: model.k(),
            weighting: model.weighting().as_str().to_string(),
            dimension: model.dimension(),
            rows: model.len(),
        },
    )?;
    for &v in model.stats().mean() {
        w.write_all(&v.to_le_bytes())?;
    }
    for &v in model.stats().std() {
        w.write_all(&v.to_le_bytes())?;
    }
    for &v in model.stored_rows() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(model.stored_labels())?;
    w.flush()?;
    Ok(())
}

pub fn load_knn(path: &Path) -> Result<KnnModel> {
    let mut r = BufReader::new(File::open(path)?);
    let header: KnnHeader = read_header(&mut r, KNN_MAGIC, "knn model")?;
    let weighting = Weighting::parse(&header.weighting)
        .map_err(|e| Error::Format(format!("bad weighting in header: {e}")))?;
    if header.k == 0 || header.k > header.rows {
        return Err(Error::Format(format!(
            "header k = {} inconsistent with {} rows",
            header.k, header.rows
        )));
    }

    let read_f64s = |r: &mut BufReader<File>, n: usize, what: &str| -> Result<Vec<f64>> {
        let bytes = read_bytes(r, n * 8, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let mean = read_f64s(&mut r, header.dimension, "means")?;
    let std = read_f64s(&mut r, header.dimension, "stddevs")?;

    let bytes = read_bytes(&mut r, header.rows * header.dimension * 4, "rows")?;
    let rows: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = read_bytes(&mut r, header.rows, "labels")?;
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Format(format!("stored label {bad} is not binary")));
    }

    Ok(KnnModel::from_parts(
        header.k,
        weighting,
        Standardizer::from_parts(mean, std),
        header.dimension,
        rows,
        labels,
    ))
}
