//! The compact VGG classifier: twelve layers, eight of them trainable,
//! ending in a 256-unit dense layer whose post-ReLU activations double as
//! the deep feature extractor.
//!
//! Layer chain: Conv1a, Conv1b, MaxPool1, Conv2a, Conv2b, MaxPool2,
//! Conv3a, Conv3b, MaxPool3, Flatten, Dense4, DenseOut. Convolutions are
//! 3x3, stride 1, no padding; pools are 2x2, stride 2; DenseOut feeds a
//! softmax over the two classes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureTag, FeatureVector, DEEP_LEN};
use crate::tensor::{adam_step, ops, AdamHyper, AdamState, ComputeGraph, Tensor};

pub const CLASS_COUNT: usize = 2;
const CONV_KERNEL: usize = 3;
const POOL_WINDOW: usize = 2;

/// Canonical is the real network; Reduced shrinks input and channel widths
/// for fast tests while keeping the 256-wide feature layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Canonical,
    Reduced,
}

impl Profile {
    pub fn input_shape(self) -> (usize, usize, usize) {
        match self {
            Profile::Canonical => (255, 255, 3),
            Profile::Reduced => (64, 64, 3),
        }
    }

    /// Output channels of the six conv layers.
    fn conv_channels(self) -> [usize; 6] {
        match self {
            Profile::Canonical => [64, 64, 128, 128, 128, 128],
            Profile::Reduced => [8, 8, 16, 16, 16, 16],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Canonical => "canonical",
            Profile::Reduced => "reduced",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(Profile::Canonical),
            "reduced" => Ok(Profile::Reduced),
            other => Err(Error::Argument(format!(
                "unknown network profile {other:?}; expected canonical or reduced"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LayerKind {
    Conv,
    MaxPool,
    Flatten,
    DenseRelu,
    DenseLinear,
}

/// One row of the architecture: its name, what it does, and its output
/// shape as computed at build time.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRow {
    pub name: &'static str,
    kind: LayerKind,
    pub output_shape: Vec<usize>,
    pub param_count: usize,
    /// Index into the parameter list for trainable layers.
    param_slot: Option<usize>,
}

const LAYER_NAMES: [(&str, LayerKind); 12] = [
    ("Conv1a", LayerKind::Conv),
    ("Conv1b", LayerKind::Conv),
    ("MaxPool1", LayerKind::MaxPool),
    ("Conv2a", LayerKind::Conv),
    ("Conv2b", LayerKind::Conv),
    ("MaxPool2", LayerKind::MaxPool),
    ("Conv3a", LayerKind::Conv),
    ("Conv3b", LayerKind::Conv),
    ("MaxPool3", LayerKind::MaxPool),
    ("Flatten", LayerKind::Flatten),
    ("Dense4", LayerKind::DenseRelu),
    ("DenseOut", LayerKind::DenseLinear),
];

/// Expected canonical rows: (name, output shape, trainable parameters).
const CANONICAL_ROWS: [(&str, &[usize], usize); 12] = [
    ("Conv1a", &[253, 253, 64], 1_792),
    ("Conv1b", &[251, 251, 64], 36_928),
    ("MaxPool1", &[125, 125, 64], 0),
    ("Conv2a", &[123, 123, 128], 73_856),
    ("Conv2b", &[121, 121, 128], 147_584),
    ("MaxPool2", &[60, 60, 128], 0),
    ("Conv3a", &[58, 58, 128], 147_584),
    ("Conv3b", &[56, 56, 128], 147_584),
    ("MaxPool3", &[28, 28, 128], 0),
    ("Flatten", &[100_352], 0),
    ("Dense4", &[256], 25_690_368),
    ("DenseOut", &[2], 514),
];

pub const CANONICAL_TOTAL_PARAMS: usize = 26_246_210;

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamHyper,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            seed: 0,
            adam: AdamHyper::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvggNetwork {
    profile: Profile,
    seed: u64,
    rows: Vec<LayerRow>,
    /// (weights, bias) per trainable layer, in layer order. Conv weights
    /// are [3, 3, Cin, Cout]; dense weights are [In, Out].
    params: Vec<(Tensor, Tensor)>,
}

/// Architecture rows for a profile, before any parameters exist.
fn plan_rows(profile: Profile) -> Vec<LayerRow> {
    let (h, w, c) = profile.input_shape();
    let channels = profile.conv_channels();
    let mut rows = Vec::with_capacity(LAYER_NAMES.len());
    let (mut h, mut w, mut c) = (h, w, c);
    let mut flat = 0usize;
    let mut conv_idx = 0usize;
    let mut slot = 0usize;
    for (name, kind) in LAYER_NAMES {
        let (shape, params): (Vec<usize>, usize) = match kind {
            LayerKind::Conv => {
                let cout = channels[conv_idx];
                conv_idx += 1;
                let count = CONV_KERNEL * CONV_KERNEL * c * cout + cout;
                h -= CONV_KERNEL - 1;
                w -= CONV_KERNEL - 1;
                c = cout;
                (vec![h, w, c], count)
            }
            LayerKind::MaxPool => {
                h /= POOL_WINDOW;
                w /= POOL_WINDOW;
                (vec![h, w, c], 0)
            }
            LayerKind::Flatten => {
                flat = h * w * c;
                (vec![flat], 0)
            }
            LayerKind::DenseRelu => {
                let count = flat * DEEP_LEN + DEEP_LEN;
                flat = DEEP_LEN;
                (vec![DEEP_LEN], count)
            }
            LayerKind::DenseLinear => {
                let count = flat * CLASS_COUNT + CLASS_COUNT;
                (vec![CLASS_COUNT], count)
            }
        };
        let param_slot = if params > 0 {
            slot += 1;
            Some(slot - 1)
        } else {
            None
        };
        rows.push(LayerRow {
            name,
            kind,
            output_shape: shape,
            param_count: params,
            param_slot,
        });
    }
    rows
}

/// Build the network with freshly initialized parameters: weights uniform
/// in +-1/sqrt(fan_in), biases zero. In the canonical profile every row is
/// checked against the published shape/parameter table and any deviation
/// is a construction error naming the layer.
pub fn build_cvgg(profile: Profile, seed: u64) -> Result<CvggNetwork> {
    let rows = plan_rows(profile);

    if profile == Profile::Canonical {
        for (row, (name, shape, params)) in rows.iter().zip(CANONICAL_ROWS) {
            if row.name != name {
                return Err(Error::Construction(format!(
                    "layer order broken: expected {name}, found {}",
                    row.name
                )));
            }
            if row.output_shape != shape {
                return Err(Error::Construction(format!(
                    "{name}: computed output shape {:?}, expected {shape:?}",
                    row.output_shape
                )));
            }
            if row.param_count != params {
                return Err(Error::Construction(format!(
                    "{name}: computed {} parameters, expected {params}",
                    row.param_count
                )));
            }
        }
        let total: usize = rows.iter().map(|r| r.param_count).sum();
        if total != CANONICAL_TOTAL_PARAMS {
            return Err(Error::Construction(format!(
                "total parameter count {total}, expected {CANONICAL_TOTAL_PARAMS}"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, _, mut cin) = profile.input_shape();
    let mut flat_in = 0usize;
    let mut params = Vec::new();
    for row in &rows {
        match row.kind {
            LayerKind::Conv => {
                let cout = *row.output_shape.last().unwrap();
                let fan_in = CONV_KERNEL * CONV_KERNEL * cin;
                let w = Tensor::uniform_init(
                    vec![CONV_KERNEL, CONV_KERNEL, cin, cout],
                    fan_in,
                    &mut rng,
                );
                params.push((w, Tensor::zeros(vec![cout])));
                cin = cout;
            }
            LayerKind::Flatten => flat_in = row.output_shape[0],
            LayerKind::DenseRelu | LayerKind::DenseLinear => {
                let out = row.output_shape[0];
                let w = Tensor::uniform_init(vec![flat_in, out], flat_in, &mut rng);
                params.push((w, Tensor::zeros(vec![out])));
                flat_in = out;
            }
            LayerKind::MaxPool => {}
        }
    }

    Ok(CvggNetwork {
        profile,
        seed,
        rows,
        params,
    })
}

impl CvggNetwork {
    pub fn profile(&self) -> Profile {
        self.profile
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.profile.input_shape()
    }

    pub fn layer_rows(&self) -> &[LayerRow] {
        &self.rows
    }

    pub fn trainable_layer_count(&self) -> usize {
        self.rows.iter().filter(|r| r.param_count > 0).count()
    }

    pub fn total_param_count(&self) -> usize {
        self.rows.iter().map(|r| r.param_count).sum()
    }

    /// Raw little-endian bytes of every parameter in declaration order
    /// (weights then bias per trainable layer). This is the byte stream
    /// both persistence and fingerprinting consume.
    pub fn param_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::new();
        for (w, b) in &self.params {
            for &v in w.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            for &v in b.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    fn check_image_shape(&self, image: &Tensor) -> Result<()> {
        let (h, w, c) = self.input_shape();
        if image.shape() != [h, w, c] {
            return Err(Error::Dimension(format!(
                "image shape {:?} does not match network input {h}x{w}x{c}",
                image.shape()
            )));
        }
        Ok(())
    }

    /// Pure single-image pass. Returns (post-ReLU Dense4 activations,
    /// class probabilities).
    fn forward_single(&self, image: &Tensor) -> Result<(Vec<f32>, Vec<f32>)> {
        self.check_image_shape(image)?;
        let mut x = image.clone();
        let mut dense4 = Vec::new();
        for row in &self.rows {
            x = match row.kind {
                LayerKind::Conv => {
                    let (w, b) = &self.params[row.param_slot.unwrap()];
                    ops::relu(&ops::conv2d_forward(&x, w, b, 1, 0)?)?
                }
                LayerKind::MaxPool => ops::maxpool2d(&x, POOL_WINDOW, POOL_WINDOW)?,
                LayerKind::Flatten => x.reshaped(vec![row.output_shape[0]])?,
                LayerKind::DenseRelu => {
                    let (w, b) = &self.params[row.param_slot.unwrap()];
                    let out = ops::relu(&ops::dense_forward(&x, w, b)?)?;
                    dense4 = out.data().to_vec();
                    out
                }
                LayerKind::DenseLinear => {
                    let (w, b) = &self.params[row.param_slot.unwrap()];
                    ops::dense_forward(&x, w, b)?
                }
            };
        }
        let probs = ops::softmax(&x)?;
        Ok((dense4, probs.data().to_vec()))
    }

    /// Forward a `[B, H, W, C]` batch to `[B, 2]` softmax rows.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        let (h, w, c) = self.input_shape();
        let b = match batch.shape() {
            [b, bh, bw, bc] if (*bh, *bw, *bc) == (h, w, c) => *b,
            other => {
                return Err(Error::Dimension(format!(
                    "batch shape {other:?} does not match [B, {h}, {w}, {c}]"
                )))
            }
        };
        let per = h * w * c;
        let mut out = Vec::with_capacity(b * CLASS_COUNT);
        for i in 0..b {
            let img = Tensor::new(
                vec![h, w, c],
                batch.data()[i * per..(i + 1) * per].to_vec(),
            )?;
            let (_, probs) = self.forward_single(&img)?;
            out.extend_from_slice(&probs);
        }
        Tensor::new(vec![b, CLASS_COUNT], out)
    }

    /// Post-ReLU Dense4 activations as the deep descriptor.
    pub fn extract_dense_features(&self, image: &Tensor) -> Result<FeatureVector> {
        let (dense4, _) = self.forward_single(image)?;
        FeatureVector::new(FeatureTag::Deep, dense4)
    }

    /// Tape-based pass over one batch; returns the scalar loss node.
    /// `leaves` are the parameter nodes, in parameter order.
    fn forward_batch_tape(
        &self,
        graph: &mut ComputeGraph,
        leaves: &[(crate::tensor::NodeId, crate::tensor::NodeId)],
        images: &[&Tensor],
        labels: &[usize],
    ) -> Result<crate::tensor::NodeId> {
        let mut logits = Vec::with_capacity(images.len());
        for &image in images {
            let mut x = graph.leaf(image.clone());
            for row in &self.rows {
                x = match row.kind {
                    LayerKind::Conv => {
                        let (w, b) = leaves[row.param_slot.unwrap()];
                        let conv = graph.conv2d(x, w, b, 1, 0)?;
                        graph.relu(conv)?
                    }
                    LayerKind::MaxPool => graph.maxpool2d(x, POOL_WINDOW, POOL_WINDOW)?,
                    LayerKind::Flatten => graph.reshape(x, row.output_shape.clone())?,
                    LayerKind::DenseRelu => {
                        let (w, b) = leaves[row.param_slot.unwrap()];
                        let dense = graph.dense(x, w, b)?;
                        graph.relu(dense)?
                    }
                    LayerKind::DenseLinear => {
                        let (w, b) = leaves[row.param_slot.unwrap()];
                        graph.dense(x, w, b)?
                    }
                };
            }
            logits.push(x);
        }
        let stacked = graph.stack(&logits)?;
        let probs = graph.softmax(stacked)?;
        graph.cross_entropy(probs, labels)
    }

    /// Minibatch training with Adam. Shuffles each epoch with a seeded
    /// generator and returns the mean cross-entropy per epoch. Parameters
    /// update in place.
    pub fn train(&mut self, data: &[(Tensor, u8)], cfg: &TrainConfig) -> Result<Vec<f32>> {
        if data.is_empty() {
            return Err(Error::Argument("training set is empty".into()));
        }
        if cfg.epochs == 0 || cfg.batch_size == 0 {
            return Err(Error::Argument(
                "epochs and batch size must be at least 1".into(),
            ));
        }
        for (img, label) in data {
            self.check_image_shape(img)?;
            if *label as usize >= CLASS_COUNT {
                return Err(Error::Argument(format!("label {label} is not binary")));
            }
        }
        let has0 = data.iter().any(|(_, l)| *l == 0);
        let has1 = data.iter().any(|(_, l)| *l == 1);
        if !has0 || !has1 {
            return Err(Error::Argument(
                "training set contains a single class".into(),
            ));
        }

        let mut states: Vec<(AdamState, AdamState)> = self
            .params
            .iter()
            .map(|(w, b)| (AdamState::new(w.numel()), AdamState::new(b.numel())))
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);

        for _ in 0..cfg.epochs {
            shuffle(&mut order, &mut rng);
            let mut loss_sum = 0.0f64;
            for chunk in order.chunks(cfg.batch_size) {
                let images: Vec<&Tensor> = chunk.iter().map(|&i| &data[i].0).collect();
                let labels: Vec<usize> = chunk.iter().map(|&i| data[i].1 as usize).collect();

                let mut graph = ComputeGraph::new();
                let leaves: Vec<_> = self
                    .params
                    .drain(..)
                    .map(|(w, b)| {
                        (graph.leaf(w.with_grad()), graph.leaf(b.with_grad()))
                    })
                    .collect();
                let loss = self.forward_batch_tape(&mut graph, &leaves, &images, &labels)?;
                graph.backward(loss)?;
                loss_sum += graph.value(loss).data()[0] as f64 * chunk.len() as f64;

                for ((wid, bid), (ws, bs)) in leaves.iter().zip(states.iter_mut()) {
                    let mut w = graph.take(*wid);
                    let mut b = graph.take(*bid);
                    adam_step(&mut w, ws, &cfg.adam)?;
                    adam_step(&mut b, bs, &cfg.adam)?;
                    self.params.push((w, b));
                }
            }
            history.push((loss_sum / data.len() as f64) as f32);
        }
        Ok(history)
    }
}

/// Fisher-Yates with the half-open gen_range convention.
fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

const MODEL_MAGIC: &[u8; 4] = b"CVGG";
const MODEL_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    profile: Profile,
    input: (usize, usize, usize),
    seed: u64,
    layers: Vec<String>,
}

pub fn save_network(net: &CvggNetwork, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = ModelHeader {
        profile: net.profile,
        input: net.input_shape(),
        seed: net.seed,
        layers: net.rows.iter().map(|r| r.name.to_string()).collect(),
    };
    let json = serde_json::to_vec(&header)
        .map_err(|e| Error::Format(format!("cannot encode model header: {e}")))?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&net.param_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<CvggNetwork> {
    let mut r = BufReader::new(File::open(path)?);
    let read = |r: &mut BufReader<File>, n: usize, what: &str| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Format(format!("truncated model file while reading {what}"))
            } else {
                Error::Io(e)
            }
        })?;
        Ok(buf)
    };

    let magic = read(&mut r, 4, "magic")?;
    if magic != MODEL_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?} for a network model file",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = u16::from_le_bytes(read(&mut r, 2, "version")?.try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "unsupported model version {version} (supported: {MODEL_VERSION})"
        )));
    }
    let hlen = u32::from_le_bytes(read(&mut r, 4, "header length")?.try_into().unwrap());
    let header: ModelHeader = serde_json::from_slice(&read(&mut r, hlen as usize, "header")?)
        .map_err(|e| Error::Format(format!("corrupt model header: {e}")))?;

    let mut net = build_cvgg(header.profile, header.seed)?;
    if header.input != net.input_shape() {
        return Err(Error::Format(format!(
            "header input shape {:?} does not match the {} profile",
            header.input,
            header.profile.as_str()
        )));
    }
    let names: Vec<String> = net.rows.iter().map(|r| r.name.to_string()).collect();
    if header.layers != names {
        return Err(Error::Format("header layer list does not match".into()));
    }

    for (w, b) in net.params.iter_mut() {
        for t in [w, b] {
            let n = t.numel();
            let bytes = read(&mut r, n * 4, "parameters")?;
            let data = t.data_mut();
            for (i, ch) in bytes.chunks_exact(4).enumerate() {
                data[i] = f32::from_le_bytes(ch.try_into().unwrap());
            }
        }
    }
    let mut extra = [0u8; 1];
    match r.read(&mut extra) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::Format(
                "model file has trailing bytes after parameters".into(),
            ))
        }
        Err(e) => return Err(Error::Io(e)),
    }
    Ok(net)
}
