//! End-to-end orchestration: a JSON-configured run directory shared by the
//! `train → extract → minimize → optimize → emit → eval` chain plus the
//! `report` and `verify` side exits. Each step reads the previous step's
//! artifact files and writes its own, so any step can be re-run in
//! isolation; re-running with the same config and seed reproduces every
//! artifact byte for byte.
//!
//! Artifacts under `out_dir`:
//!
//! | file                 | written by | contents                                   |
//! |----------------------|------------|--------------------------------------------|
//! | `checkpoint.json`    | train      | trained network (architecture + weights)   |
//! | `history.csv`        | train      | per-epoch loss / validation accuracy       |
//! | `block_{b}_isf.pla`  | extract    | recorded or enumerated ON/OFF sets         |
//! | `block_{b}_cover.pla`| minimize   | minimized two-level covers                 |
//! | `stage_{s}.blif`     | optimize   | optimized stage netlist                    |
//! | `stage_{s}.prog`     | emit       | straight-line program for the stage        |
//! | `predictions.csv`    | eval       | per-sample hybrid predictions              |
//! | `report.csv`         | report     | per-layer cost rows                        |
//!
//! A *binary block* is a run of layers computing a binary-in/binary-out
//! function: dense or conv, an optional max-pool (conv only), batch norm,
//! and a sign activation, with dropout layers skipped in eval mode. The
//! blocks live strictly between the first sign activation (the float
//! prefix ends there) and the final dense layer (the add/sub suffix), and
//! each becomes one logic netlist; the staging plan then fuses consecutive
//! blocks into pipeline stages.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::PatternSet;
use crate::cost::{CostLayer, LayerCost, NetworkCost};
use crate::dataset::{self, DatasetError, LabeledSet};
use crate::emit::{
    emit_program, hybrid_infer, read_blif, write_blif, BlifError, BooleanProgram, HybridError,
    ProgramError,
};
use crate::extract::pla::{write_covers, write_on_off, PlaError, PlaFile, PlaKind};
use crate::extract::{
    activations_to_patterns, enumerate_truth_table, fold_batchnorm, row_for_tt_index, ExtractError,
    FoldedNeuron, InputAlgebra, Isf, TruthTable, N_ENUM_MAX,
};
use crate::multilevel::{
    cover_to_aig, optimize_layer, stitch_network, Aig, Lit, MultiLevelError, Stage,
};
use crate::nn::{
    evaluate, sign_bit, train, BatchNormParams, Layer, LayerSpec, Network, NnError, Tensor,
    TrainConfig, TrainData,
};
use crate::twolevel::{minimize, verify_cover, Cover, TwoLevelError};

/// Samples per activation-recording chunk; results are identical to a
/// single whole-set batch because recording is row-independent.
pub const EXTRACT_CHUNK: usize = 4096;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{} not found; run `{run_first}` first", path.display())]
    MissingArtifact { path: PathBuf, run_first: &'static str },
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("unsupported architecture: {0}")]
    Model(String),
    #[error("checkpoint serialization: {0}")]
    Serde(#[from] serde_json::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Pla(#[from] PlaError),
    #[error(transparent)]
    TwoLevel(#[from] TwoLevelError),
    #[error(transparent)]
    MultiLevel(#[from] MultiLevelError),
    #[error(transparent)]
    Blif(#[from] BlifError),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Hybrid(#[from] HybridError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn config_err(field: &str, message: impl Into<String>) -> PipelineError {
    PipelineError::Config { field: field.into(), message: message.into() }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// How a binary block's Boolean function is captured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMode {
    /// Complete truth table from the folded threshold neuron; only valid
    /// when the block fan-in is at most `enum_max`.
    Enumerate,
    /// Incompletely specified function recorded from the training-set
    /// activations; unobserved patterns become don't-cares.
    Isf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionConfig {
    /// Default mode for every block.
    #[serde(default = "default_mode")]
    pub mode: ExtractionMode,
    /// Per-block overrides, keyed by block index.
    #[serde(default)]
    pub per_block: BTreeMap<usize, ExtractionMode>,
    /// Upper fan-in bound for enumeration (capped at the library limit).
    #[serde(default = "default_enum_max")]
    pub enum_max: usize,
}

fn default_mode() -> ExtractionMode {
    ExtractionMode::Isf
}

fn default_enum_max() -> usize {
    N_ENUM_MAX
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            mode: default_mode(),
            per_block: BTreeMap::new(),
            enum_max: default_enum_max(),
        }
    }
}

impl ExtractionConfig {
    pub fn mode_for(&self, block: usize) -> ExtractionMode {
        self.per_block.get(&block).copied().unwrap_or(self.mode)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Fraction of the (possibly limited) training file that trains; the
    /// remainder validates. Absent means the canonical 50,000/10,000
    /// split, which requires the full 60,000-sample file.
    #[serde(default)]
    pub validation_ratio: Option<f64>,
    /// Use only the first N training samples (before the split).
    #[serde(default)]
    pub train_limit: Option<usize>,
    /// Use only the first N test samples.
    #[serde(default)]
    pub test_limit: Option<usize>,
}

/// One JSON document drives the whole pipeline. `seed` governs weight
/// initialization, batch shuffling, and dropout; the seed inside `train`
/// is overridden by it so a single value controls the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Schema version; must be 1.
    pub version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    /// Per-sample shape the flat 28×28 images are viewed as, e.g. `[784]`
    /// for dense networks or `[1, 28, 28]` for convolutional ones.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub extraction: ExtractionConfig,
    /// Groups of consecutive block indices fused into one stage netlist;
    /// absent means one stage per block.
    #[serde(default)]
    pub stages: Option<Vec<Vec<usize>>>,
}

fn default_seed() -> u64 {
    1
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let config: PipelineConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.version != 1 {
            return Err(config_err("version", format!("unsupported version {}", self.version)));
        }
        let pixels: usize = self.input_shape.iter().product();
        if pixels != 28 * 28 {
            return Err(config_err(
                "input_shape",
                format!("{:?} has {pixels} elements; the 28x28 images need 784", self.input_shape),
            ));
        }
        if self.layers.is_empty() {
            return Err(config_err("layers", "at least one layer is required"));
        }
        if self.extraction.enum_max == 0 || self.extraction.enum_max > N_ENUM_MAX {
            return Err(config_err(
                "extraction.enum_max",
                format!("must be between 1 and {N_ENUM_MAX}"),
            ));
        }
        if let Some(r) = self.dataset.validation_ratio {
            if !(r > 0.0 && r < 1.0) {
                return Err(config_err("dataset.validation_ratio", "must lie strictly in (0, 1)"));
            }
        }
        if self.train.epochs == 0 {
            return Err(config_err("train.epochs", "must be at least 1"));
        }
        if self.train.batch_size == 0 {
            return Err(config_err("train.batch_size", "must be at least 1"));
        }
        if !(self.train.lr_initial > 0.0) {
            return Err(config_err("train.lr_initial", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.train.dropout_rate) {
            return Err(config_err("train.dropout_rate", "must lie in [0, 1)"));
        }
        if let Some(stages) = &self.stages {
            if stages.iter().any(Vec::is_empty) {
                return Err(config_err("stages", "stage groups must be non-empty"));
            }
        }
        Ok(())
    }

    /// Stage groups, defaulting to one stage per block, validated as an
    /// in-order partition of `0..num_blocks`.
    pub fn effective_stages(&self, num_blocks: usize) -> Result<Vec<Vec<usize>>, PipelineError> {
        let groups = match &self.stages {
            Some(groups) => groups.clone(),
            None => (0..num_blocks).map(|b| vec![b]).collect(),
        };
        let flat: Vec<usize> = groups.iter().flatten().copied().collect();
        if flat != (0..num_blocks).collect::<Vec<_>>() {
            return Err(config_err(
                "stages",
                format!("groups must partition blocks 0..{num_blocks} in order, got {groups:?}"),
            ));
        }
        Ok(groups)
    }
}

// ---------------------------------------------------------------------------
// Artifact paths
// ---------------------------------------------------------------------------

/// Path helper for one run directory.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Artifacts {
        Artifacts { dir: dir.to_path_buf() }
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.json")
    }

    pub fn history(&self) -> PathBuf {
        self.dir.join("history.csv")
    }

    pub fn block_isf(&self, b: usize) -> PathBuf {
        self.dir.join(format!("block_{b}_isf.pla"))
    }

    pub fn block_cover(&self, b: usize) -> PathBuf {
        self.dir.join(format!("block_{b}_cover.pla"))
    }

    pub fn stage_blif(&self, s: usize) -> PathBuf {
        self.dir.join(format!("stage_{s}.blif"))
    }

    pub fn stage_prog(&self, s: usize) -> PathBuf {
        self.dir.join(format!("stage_{s}.prog"))
    }

    pub fn predictions(&self) -> PathBuf {
        self.dir.join("predictions.csv")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.dir.join("report.csv")
    }
}

fn write_artifact(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn open_artifact(path: &Path, run_first: &'static str) -> Result<fs::File, PipelineError> {
    match fs::File::open(path) {
        Ok(f) => Ok(f),
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            Err(PipelineError::MissingArtifact { path: path.to_path_buf(), run_first })
        }
        Err(e) => Err(PipelineError::Io { path: path.to_path_buf(), source: e }),
    }
}

// ---------------------------------------------------------------------------
// Network plan: locating the binary blocks
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Dense { in_units: usize, out_units: usize },
    Conv { in_channels: usize, out_channels: usize, in_h: usize, in_w: usize, pooled: bool },
}

/// One binary-in/binary-out block of the logic middle, with the layer
/// indices of its pieces.
#[derive(Clone, Debug)]
pub struct BinaryBlock {
    pub index: usize,
    /// Layer index of the dense/conv layer.
    pub linear: usize,
    pub pool: Option<usize>,
    pub bn: usize,
    /// Layer index of the closing sign activation.
    pub sign: usize,
    pub kind: BlockKind,
}

impl BinaryBlock {
    /// Inputs per elementary Boolean function (dense: the layer fan-in;
    /// conv: one 3x3 patch across all input channels).
    pub fn fan_in(&self) -> usize {
        match self.kind {
            BlockKind::Dense { in_units, .. } => in_units,
            BlockKind::Conv { in_channels, .. } => 9 * in_channels,
        }
    }

    /// Elementary Boolean functions in the block (dense units or conv
    /// channels); each is one output column of the PLA artifacts.
    pub fn units(&self) -> usize {
        match self.kind {
            BlockKind::Dense { out_units, .. } => out_units,
            BlockKind::Conv { out_channels, .. } => out_channels,
        }
    }

    /// Flattened bit width entering the block's netlist.
    pub fn in_width(&self) -> usize {
        match self.kind {
            BlockKind::Dense { in_units, .. } => in_units,
            BlockKind::Conv { in_channels, in_h, in_w, .. } => in_channels * in_h * in_w,
        }
    }

    /// Flattened bit width leaving the block's netlist.
    pub fn out_width(&self) -> usize {
        match self.kind {
            BlockKind::Dense { out_units, .. } => out_units,
            BlockKind::Conv { out_channels, in_h, in_w, pooled, .. } => {
                let (h, w) = (in_h - 2, in_w - 2);
                if pooled {
                    out_channels * (h / 2) * (w / 2)
                } else {
                    out_channels * h * w
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct NetworkPlan {
    /// Layers `0..prefix_end` run in float; `suffix_start..` is the
    /// add/sub output layer (plus trailing batch norm).
    pub prefix_end: usize,
    pub suffix_start: usize,
    pub blocks: Vec<BinaryBlock>,
}

/// Splits the network around its logic middle and parses that region into
/// binary blocks.
pub fn analyze_network(net: &Network) -> Result<NetworkPlan, PipelineError> {
    let split = crate::emit::hybrid_split(net)?;
    let shapes = net.shapes()?;
    let mut blocks = Vec::new();
    let mut i = split.prefix_end;
    while i < split.suffix_start {
        if matches!(net.layers[i], Layer::Dropout { .. }) {
            i += 1;
            continue;
        }
        let linear = i;
        let expect = |idx: usize, what: &str, ok: bool| {
            if idx >= split.suffix_start || !ok {
                Err(PipelineError::Model(format!(
                    "layer {linear} starts a binary block but is not followed by {what}; \
                     blocks are dense/conv [+ max-pool] + batch norm + sign"
                )))
            } else {
                Ok(())
            }
        };
        match &net.layers[i] {
            Layer::Dense { weights } => {
                expect(i + 1, "batch norm", matches!(net.layers.get(i + 1), Some(Layer::BatchNorm { .. })))?;
                expect(i + 2, "a sign activation", matches!(net.layers.get(i + 2), Some(Layer::Sign)))?;
                blocks.push(BinaryBlock {
                    index: blocks.len(),
                    linear,
                    pool: None,
                    bn: i + 1,
                    sign: i + 2,
                    kind: BlockKind::Dense { in_units: weights.dim(0), out_units: weights.dim(1) },
                });
                i += 3;
            }
            Layer::Conv2d { weights } => {
                let mut j = i + 1;
                let pool = if matches!(net.layers.get(j), Some(Layer::MaxPool)) {
                    j += 1;
                    Some(j - 1)
                } else {
                    None
                };
                expect(j, "batch norm", matches!(net.layers.get(j), Some(Layer::BatchNorm { .. })))?;
                expect(j + 1, "a sign activation", matches!(net.layers.get(j + 1), Some(Layer::Sign)))?;
                let in_shape =
                    if linear == 0 { net.input_shape.clone() } else { shapes[linear - 1].clone() };
                let [_, h, w] = in_shape[..] else {
                    return Err(PipelineError::Model(format!(
                        "layer {linear}: conv block input shape {in_shape:?} is not [c, h, w]"
                    )));
                };
                blocks.push(BinaryBlock {
                    index: blocks.len(),
                    linear,
                    pool,
                    bn: j,
                    sign: j + 1,
                    kind: BlockKind::Conv {
                        in_channels: weights.dim(1),
                        out_channels: weights.dim(0),
                        in_h: h,
                        in_w: w,
                        pooled: pool.is_some(),
                    },
                });
                i = j + 2;
            }
            other => {
                return Err(PipelineError::Model(format!(
                    "layer {i} ({other:?}) is not a valid start of a binary block"
                )));
            }
        }
    }
    if blocks.is_empty() {
        return Err(PipelineError::Model(
            "no binary blocks between the first sign activation and the output layer".into(),
        ));
    }
    Ok(NetworkPlan { prefix_end: split.prefix_end, suffix_start: split.suffix_start, blocks })
}

// ---------------------------------------------------------------------------
// Shared loading helpers
// ---------------------------------------------------------------------------

/// Views the `[n, 28, 28]` image tensor with the configured per-sample
/// shape.
fn shape_images(images: &Tensor, input_shape: &[usize]) -> Tensor {
    let mut shape = vec![images.dim(0)];
    shape.extend_from_slice(input_shape);
    images.clone().reshaped(&shape)
}

fn load_train_split(config: &PipelineConfig) -> Result<(LabeledSet, LabeledSet), PipelineError> {
    let mut full = dataset::load_idx(&config.dataset.train_images, &config.dataset.train_labels)?;
    if let Some(limit) = config.dataset.train_limit {
        full = full.slice(0, limit.min(full.len()));
    }
    let split = match config.dataset.validation_ratio {
        Some(ratio) => dataset::split_validation_ratio(&full, ratio)?,
        None => dataset::split_validation(&full)?,
    };
    Ok(split)
}

fn load_test_set(config: &PipelineConfig) -> Result<LabeledSet, PipelineError> {
    let mut set = dataset::load_idx(&config.dataset.test_images, &config.dataset.test_labels)?;
    if let Some(limit) = config.dataset.test_limit {
        set = set.slice(0, limit.min(set.len()));
    }
    Ok(set)
}

pub fn load_checkpoint(config: &PipelineConfig) -> Result<Network, PipelineError> {
    let path = Artifacts::new(&config.out_dir).checkpoint();
    let file = open_artifact(&path, "train")?;
    let net: Network = serde_json::from_reader(BufReader::new(file))?;
    Ok(net)
}

fn block_pla(
    path: &Path,
    run_first: &'static str,
    block: &BinaryBlock,
    kind: PlaKind,
) -> Result<PlaFile, PipelineError> {
    let file = open_artifact(path, run_first)?;
    let pla = PlaFile::read(BufReader::new(file))?;
    let expected = (block.fan_in(), block.units());
    if (pla.num_inputs, pla.num_outputs) != expected {
        return Err(PipelineError::Artifact {
            path: path.to_path_buf(),
            message: format!(
                "has {}x{} inputs/outputs but block {} needs {}x{}; re-run `{run_first}`",
                pla.num_inputs, pla.num_outputs, block.index, expected.0, expected.1
            ),
        });
    }
    if pla.kind != kind {
        return Err(PipelineError::Artifact {
            path: path.to_path_buf(),
            message: format!("expected a {kind:?} table, found {:?}", pla.kind),
        });
    }
    Ok(pla)
}

fn accuracy(predictions: &[u8], labels: &[u8]) -> f32 {
    assert_eq!(predictions.len(), labels.len());
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f32 / labels.len().max(1) as f32
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<crate::nn::EpochStats>,
    pub best_val_accuracy: f32,
}

/// The architecture actually trained: when the configured layer list has
/// no explicit dropout and `train.dropout_rate` is positive, a dropout of
/// that rate precedes every linear layer except the first, i.e. hidden
/// layers regularize, the input does not. Explicit dropout layers disable
/// the expansion entirely.
pub fn training_specs(config: &PipelineConfig) -> Vec<LayerSpec> {
    let rate = config.train.dropout_rate;
    let explicit = config.layers.iter().any(|l| matches!(l, LayerSpec::Dropout { .. }));
    if explicit || rate <= 0.0 {
        return config.layers.clone();
    }
    let mut specs = Vec::with_capacity(config.layers.len() + 3);
    let mut seen_linear = false;
    for spec in &config.layers {
        if matches!(spec, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. }) {
            if seen_linear {
                specs.push(LayerSpec::Dropout { rate });
            }
            seen_linear = true;
        }
        specs.push(spec.clone());
    }
    specs
}

/// Initializes a network from the config, trains it, and writes
/// `checkpoint.json` plus `history.csv`.
pub fn run_train(config: &PipelineConfig) -> Result<TrainOutcome, PipelineError> {
    config.validate()?;
    let paths = Artifacts::new(&config.out_dir);
    let (train_set, val_set) = load_train_split(config)?;
    let train_images = shape_images(&train_set.images, &config.input_shape);
    let val_images = shape_images(&val_set.images, &config.input_shape);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = Network::init(&config.input_shape, &training_specs(config), &mut rng)?;
    let mut train_config = config.train.clone();
    train_config.seed = config.seed;
    let data = TrainData {
        train_images: &train_images,
        train_labels: &train_set.labels,
        val_images: &val_images,
        val_labels: &val_set.labels,
    };
    let history = train(&mut net, &data, &train_config)?;

    let mut checkpoint = serde_json::to_vec_pretty(&net)?;
    checkpoint.push(b'\n');
    write_artifact(&paths.checkpoint(), &checkpoint)?;
    let mut csv = String::from("epoch,lr,train_loss,val_accuracy\n");
    for s in &history {
        csv.push_str(&format!("{},{},{},{}\n", s.epoch, s.lr, s.train_loss, s.val_accuracy));
    }
    write_artifact(&paths.history(), csv.as_bytes())?;
    let best = history.iter().map(|s| s.val_accuracy).fold(0.0f32, f32::max);
    Ok(TrainOutcome { history, best_val_accuracy: best })
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

/// Sorted pattern → output-bits map; set semantics make the recorded
/// function independent of sample order and chunking.
type Recording = BTreeMap<Vec<u64>, Vec<u64>>;

fn record_dense(rec: &mut Recording, inputs: &Tensor, outputs: &Tensor) -> Result<(), PipelineError> {
    let ins = activations_to_patterns(inputs)?;
    let outs = activations_to_patterns(outputs)?;
    for i in 0..ins.len() {
        rec.insert(ins.row(i).to_vec(), outs.row(i).to_vec());
    }
    Ok(())
}

/// Records one chunk of a conv block: every 3x3 patch of the (binary)
/// input becomes a pattern, and the pre-pool sign of the normalized conv
/// response gives its output bits. Patch bit `j` is input channel `j / 9`,
/// kernel row `(j % 9) / 3`, kernel column `j % 3` — the kernel's own
/// flattening order.
fn record_conv(
    rec: &mut Recording,
    block: &BinaryBlock,
    inputs: &Tensor,
    conv_out: &Tensor,
    bn: &BatchNormParams,
) -> Result<(), PipelineError> {
    let BlockKind::Conv { in_channels, out_channels, in_h, in_w, .. } = block.kind else {
        unreachable!("record_conv on a dense block");
    };
    let (ch, cw) = (in_h - 2, in_w - 2);
    let bn_net = Network {
        input_shape: vec![out_channels, ch, cw],
        layers: vec![Layer::BatchNorm { params: bn.clone() }],
    };
    let normalized = bn_net.forward_eval(conv_out)?.pop().expect("one layer");
    let n = inputs.dim(0);
    let (inp, nrm) = (inputs.data(), normalized.data());
    let arity = 9 * in_channels;
    let mut in_pat = PatternSet::new(arity);
    let mut bits = vec![false; arity];
    let mut out_bits = vec![false; out_channels];
    for s in 0..n {
        for y in 0..ch {
            for x in 0..cw {
                for ic in 0..in_channels {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let v = inp[((s * in_channels + ic) * in_h + y + ky) * in_w + x + kx];
                            bits[ic * 9 + ky * 3 + kx] = sign_bit(v);
                        }
                    }
                }
                for (oc, bit) in out_bits.iter_mut().enumerate() {
                    *bit = sign_bit(nrm[((s * out_channels + oc) * ch + y) * cw + x]);
                }
                in_pat.push_bits(&bits);
                let mut out_row = PatternSet::new(out_channels);
                out_row.push_bits(&out_bits);
                rec.insert(in_pat.row(in_pat.len() - 1).to_vec(), out_row.row(0).to_vec());
            }
        }
    }
    Ok(())
}

/// Folded threshold neurons (or constants) for every unit of a block.
fn folded_units(net: &Network, block: &BinaryBlock) -> Result<Vec<FoldedNeuron>, PipelineError> {
    let Layer::BatchNorm { params } = &net.layers[block.bn] else {
        unreachable!("block bn index points at a batch norm");
    };
    let weights = match &net.layers[block.linear] {
        Layer::Dense { weights } | Layer::Conv2d { weights } => weights,
        _ => unreachable!("block linear index points at a linear layer"),
    };
    let units = block.units();
    let fan_in = block.fan_in();
    let mut folded = Vec::with_capacity(units);
    for u in 0..units {
        let col: Vec<f32> = match block.kind {
            // Dense weights are [fan_in, units]: unit u is a strided column.
            BlockKind::Dense { .. } => {
                (0..fan_in).map(|j| weights.data()[j * units + u]).collect()
            }
            // Conv weights are [units, fan_in] once the kernel is flattened.
            BlockKind::Conv { .. } => weights.data()[u * fan_in..(u + 1) * fan_in].to_vec(),
        };
        folded.push(fold_batchnorm(&col, params, u)?);
    }
    Ok(folded)
}

fn enumerate_block(
    net: &Network,
    block: &BinaryBlock,
    enum_max: usize,
) -> Result<(PatternSet, PatternSet), PipelineError> {
    let fan_in = block.fan_in();
    let tables: Vec<Option<TruthTable>> = folded_units(net, block)?
        .into_iter()
        .map(|f| match f {
            FoldedNeuron::Threshold(n) => {
                enumerate_truth_table(&n, InputAlgebra::PlusMinusOne, enum_max).map(Some)
            }
            FoldedNeuron::Constant(b) => {
                // A frozen unit still gets a complete output column.
                let mut tt = TruthTable::new(fan_in);
                if b {
                    for idx in 0..1usize << fan_in {
                        tt.set(idx, true);
                    }
                }
                Ok(Some(tt))
            }
        })
        .collect::<Result<_, ExtractError>>()?;
    let mut inputs = PatternSet::new(fan_in);
    let mut outputs = PatternSet::new(block.units());
    let mut row = vec![0u64; crate::bits::words_for(fan_in)];
    let mut bits = vec![false; block.units()];
    for idx in 0..1usize << fan_in {
        row_for_tt_index(idx, fan_in, &mut row);
        inputs.push_row(&row);
        for (u, table) in tables.iter().enumerate() {
            bits[u] = table.as_ref().expect("all units folded").get(idx);
        }
        outputs.push_bits(&bits);
    }
    Ok((inputs, outputs))
}

/// Captures every block's Boolean behaviour and writes
/// `block_{b}_isf.pla` files. `isf` blocks record the training set's
/// activations (streamed in chunks; identical to one whole-set batch);
/// `enumerate` blocks tabulate the folded threshold function completely.
pub fn run_extract(config: &PipelineConfig) -> Result<Vec<PathBuf>, PipelineError> {
    config.validate()?;
    let paths = Artifacts::new(&config.out_dir);
    let net = load_checkpoint(config)?;
    let plan = analyze_network(&net)?;

    for block in &plan.blocks {
        if config.extraction.mode_for(block.index) == ExtractionMode::Enumerate
            && block.fan_in() > config.extraction.enum_max
        {
            return Err(config_err(
                "extraction",
                format!(
                    "block {} has fan-in {} > enum_max {}; use mode \"isf\" for it",
                    block.index,
                    block.fan_in(),
                    config.extraction.enum_max
                ),
            ));
        }
    }

    let isf_blocks: Vec<&BinaryBlock> = plan
        .blocks
        .iter()
        .filter(|b| config.extraction.mode_for(b.index) == ExtractionMode::Isf)
        .collect();
    let mut recordings: BTreeMap<usize, Recording> =
        isf_blocks.iter().map(|b| (b.index, Recording::new())).collect();
    if !isf_blocks.is_empty() {
        let (train_set, _) = load_train_split(config)?;
        let images = shape_images(&train_set.images, &config.input_shape);
        let n = images.dim(0);
        let mut lo = 0;
        while lo < n {
            let hi = (lo + EXTRACT_CHUNK).min(n);
            let acts = net.forward_eval(&images.slice_rows(lo, hi))?;
            for block in &isf_blocks {
                let rec = recordings.get_mut(&block.index).expect("recording allocated");
                let inputs = &acts[block.linear - 1];
                match block.kind {
                    BlockKind::Dense { .. } => {
                        record_dense(rec, inputs, &acts[block.sign])?;
                    }
                    BlockKind::Conv { .. } => {
                        let Layer::BatchNorm { params } = &net.layers[block.bn] else {
                            unreachable!("bn index points at a batch norm");
                        };
                        record_conv(rec, block, inputs, &acts[block.linear], params)?;
                    }
                }
            }
            lo = hi;
        }
    }

    let mut written = Vec::new();
    for block in &plan.blocks {
        let (inputs, outputs) = match config.extraction.mode_for(block.index) {
            ExtractionMode::Enumerate => enumerate_block(&net, block, config.extraction.enum_max)?,
            ExtractionMode::Isf => {
                let rec = &recordings[&block.index];
                let mut inputs = PatternSet::with_capacity(block.fan_in(), rec.len());
                let mut outputs = PatternSet::with_capacity(block.units(), rec.len());
                for (row, out) in rec {
                    inputs.push_row(row);
                    outputs.push_row(out);
                }
                (inputs, outputs)
            }
        };
        let mut bytes = Vec::new();
        write_on_off(&mut bytes, &inputs, &outputs, None, None, None)
            .map_err(io_err(&paths.block_isf(block.index)))?;
        let path = paths.block_isf(block.index);
        write_artifact(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// minimize
// ---------------------------------------------------------------------------

/// Minimizes every block's recorded/enumerated sets into two-level covers
/// and writes `block_{b}_cover.pla` files.
pub fn run_minimize(config: &PipelineConfig) -> Result<Vec<PathBuf>, PipelineError> {
    config.validate()?;
    let paths = Artifacts::new(&config.out_dir);
    let net = load_checkpoint(config)?;
    let plan = analyze_network(&net)?;
    let mut written = Vec::new();
    for block in &plan.blocks {
        let pla = block_pla(&paths.block_isf(block.index), "extract", block, PlaKind::OnOff)?;
        let covers: Vec<Cover> =
            pla.to_isfs()?.iter().map(minimize).collect::<Result<_, _>>()?;
        let mut bytes = Vec::new();
        write_covers(&mut bytes, &covers, None, None)
            .map_err(io_err(&paths.block_cover(block.index)))?;
        let path = paths.block_cover(block.index);
        write_artifact(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// optimize
// ---------------------------------------------------------------------------

/// Unrolls a conv block's per-channel covers over every 3x3 position and
/// adds the pooling plane. Pooling commutes with the sign threshold:
/// max-then-threshold equals OR of the thresholded window for a positive
/// batch-norm scale and AND for a negative one (the normalization is then
/// monotonically decreasing), while a zero scale makes the unit constant,
/// for which both reductions are identities.
fn conv_block_aig(
    block: &BinaryBlock,
    bn: &BatchNormParams,
    covers: &[Cover],
) -> Result<Aig, PipelineError> {
    let BlockKind::Conv { in_channels, out_channels, in_h, in_w, pooled } = block.kind else {
        unreachable!("conv_block_aig on a dense block");
    };
    let (ch, cw) = (in_h - 2, in_w - 2);
    let mut g = Aig::new(in_channels * in_h * in_w);
    let mut grid = vec![Lit::FALSE; out_channels * ch * cw];
    let mut cube_lits = Vec::new();
    let mut lits = Vec::new();
    for (oc, cover) in covers.iter().enumerate() {
        for y in 0..ch {
            for x in 0..cw {
                cube_lits.clear();
                for cube in cover.cubes() {
                    lits.clear();
                    for (j, positive) in cube.literals() {
                        let (ic, ky, kx) = (j / 9, (j % 9) / 3, j % 3);
                        let lit = g.input_lit(ic * in_h * in_w + (y + ky) * in_w + x + kx);
                        lits.push(if positive { lit } else { !lit });
                    }
                    let and = g.and_many(&lits);
                    cube_lits.push(and);
                }
                grid[(oc * ch + y) * cw + x] = g.or_many(&cube_lits);
            }
        }
    }
    if pooled {
        let (ph, pw) = (ch / 2, cw / 2);
        for (oc, _) in covers.iter().enumerate() {
            let negative = bn.gamma[oc] < 0.0;
            for py in 0..ph {
                for px in 0..pw {
                    let at = |dy: usize, dx: usize| {
                        grid[(oc * ch + 2 * py + dy) * cw + 2 * px + dx]
                    };
                    let window = [at(0, 0), at(0, 1), at(1, 0), at(1, 1)];
                    let out =
                        if negative { g.and_many(&window) } else { g.or_many(&window) };
                    g.push_output(out);
                }
            }
        }
    } else {
        for &lit in &grid {
            g.push_output(lit);
        }
    }
    Ok(g)
}

/// Builds each block's netlist from its covers, optimizes it, fuses blocks
/// into stages per the staging plan, and writes `stage_{s}.blif` files.
pub fn run_optimize(config: &PipelineConfig) -> Result<Vec<PathBuf>, PipelineError> {
    config.validate()?;
    let paths = Artifacts::new(&config.out_dir);
    let net = load_checkpoint(config)?;
    let plan = analyze_network(&net)?;
    let groups = config.effective_stages(plan.blocks.len())?;

    let mut block_aigs = Vec::with_capacity(plan.blocks.len());
    for block in &plan.blocks {
        let pla = block_pla(&paths.block_cover(block.index), "minimize", block, PlaKind::Cover)?;
        let covers = pla.to_covers()?;
        let aig = match block.kind {
            BlockKind::Dense { in_units, .. } => cover_to_aig(in_units, &covers)?,
            BlockKind::Conv { .. } => {
                let Layer::BatchNorm { params } = &net.layers[block.bn] else {
                    unreachable!("bn index points at a batch norm");
                };
                conv_block_aig(block, params, &covers)?
            }
        };
        block_aigs.push(optimize_layer(&aig));
    }
    let stage_plan = stitch_network(&block_aigs, &groups)?;

    let mut written = Vec::new();
    for (s, stage) in stage_plan.stages.iter().enumerate() {
        let mut bytes = Vec::new();
        write_blif(&mut bytes, &stage.aig, &format!("stage_{s}"))
            .map_err(io_err(&paths.stage_blif(s)))?;
        let path = paths.stage_blif(s);
        write_artifact(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// emit
// ---------------------------------------------------------------------------

/// Reads every stage netlist back and writes the equivalent straight-line
/// program as `stage_{s}.prog`.
pub fn run_emit(config: &PipelineConfig) -> Result<Vec<PathBuf>, PipelineError> {
    config.validate()?;
    let paths = Artifacts::new(&config.out_dir);
    let net = load_checkpoint(config)?;
    let plan = analyze_network(&net)?;
    let groups = config.effective_stages(plan.blocks.len())?;
    let mut written = Vec::new();
    for s in 0..groups.len() {
        let file = open_artifact(&paths.stage_blif(s), "optimize")?;
        let aig = read_blif(BufReader::new(file))?;
        let program = emit_program(&aig);
        let mut bytes = Vec::new();
        program.write(&mut bytes).map_err(io_err(&paths.stage_prog(s)))?;
        let path = paths.stage_prog(s);
        write_artifact(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn load_stages(config: &PipelineConfig, groups: &[Vec<usize>]) -> Result<Vec<Stage>, PipelineError> {
    let paths = Artifacts::new(&config.out_dir);
    let mut stages = Vec::with_capacity(groups.len());
    for (s, group) in groups.iter().enumerate() {
        let file = open_artifact(&paths.stage_blif(s), "optimize")?;
        let aig = read_blif(BufReader::new(file))?;
        stages.push(Stage {
            layers: group.clone(),
            depth: aig.depth(),
            and_nodes: aig.node_count(),
            aig,
        });
    }
    Ok(stages)
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOutcome {
    pub samples: usize,
    pub arithmetic_accuracy: f32,
    pub hybrid_accuracy: f32,
}

/// Evaluates the arithmetic network and its hybrid realization on the test
/// set and writes per-sample hybrid predictions to `predictions.csv`.
pub fn run_eval(config: &PipelineConfig) -> Result<EvalOutcome, PipelineError> {
    config.validate()?;
    let paths = Artifacts::new(&config.out_dir);
    let net = load_checkpoint(config)?;
    let plan = analyze_network(&net)?;
    let groups = config.effective_stages(plan.blocks.len())?;
    let stages = load_stages(config, &groups)?;

    let test = load_test_set(config)?;
    let images = shape_images(&test.images, &config.input_shape);
    let arithmetic_accuracy = evaluate(&net, &images, &test.labels)?;
    let predictions = hybrid_infer(&net, &stages, &images)?;
    let hybrid_accuracy = accuracy(&predictions, &test.labels);

    let mut csv = String::from("index,label\n");
    for (i, p) in predictions.iter().enumerate() {
        csv.push_str(&format!("{i},{p}\n"));
    }
    write_artifact(&paths.predictions(), csv.as_bytes())?;
    Ok(EvalOutcome { samples: test.len(), arithmetic_accuracy, hybrid_accuracy })
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Builds the cost table for the configured run: arithmetic rows for the
/// float prefix and add/sub suffix, one logic row per stage with the
/// optimized netlist's AND-node count and depth as native size proxies.
/// Writes `report.csv` and returns the model for rendering.
pub fn run_report(config: &PipelineConfig) -> Result<NetworkCost, PipelineError> {
    config.validate()?;
    let paths = Artifacts::new(&config.out_dir);
    let net = load_checkpoint(config)?;
    let plan = analyze_network(&net)?;
    let groups = config.effective_stages(plan.blocks.len())?;
    let stages = load_stages(config, &groups)?;
    let shapes = net.shapes()?;

    let mut cost = NetworkCost::new("pipeline");
    let mac_layer = |i: usize, no: usize, binary: bool| -> Option<LayerCost> {
        let layer = match &net.layers[i] {
            Layer::Dense { weights } => CostLayer::Dense {
                in_units: weights.dim(0) as u64,
                out_units: weights.dim(1) as u64,
            },
            Layer::Conv2d { weights } => {
                let [_, h, w] = shapes[i][..] else { return None };
                CostLayer::Conv {
                    in_channels: weights.dim(1) as u64,
                    out_channels: weights.dim(0) as u64,
                    kernel: 3,
                    positions: (h * w) as u64,
                }
            }
            _ => return None,
        };
        let kind = if matches!(layer, CostLayer::Dense { .. }) { "dense" } else { "conv" };
        Some(LayerCost::mac_row(&format!("{kind}{no}"), layer, 4, binary))
    };
    let mut linear_no = 0usize;
    for i in 0..plan.prefix_end {
        if matches!(net.layers[i], Layer::Dense { .. } | Layer::Conv2d { .. }) {
            linear_no += 1;
            if let Some(row) = mac_layer(i, linear_no, false) {
                cost.rows.push(row);
            }
        }
    }
    // Middle linear layers are realized as logic; keep the numbering
    // aligned with the architecture.
    linear_no += plan.blocks.len();
    for (s, stage) in stages.iter().enumerate() {
        let mut row = LayerCost::logic_row(
            &format!("stage {s}"),
            1,
            stage.aig.num_inputs() as u64,
            stage.aig.outputs().len() as u64,
            None,
        );
        row.and_nodes = Some(stage.and_nodes as u64);
        row.depth = Some(stage.depth as u64);
        cost.rows.push(row);
    }
    linear_no += 1;
    if let Some(row) = mac_layer(plan.suffix_start, linear_no, true) {
        cost.rows.push(row);
    }
    write_artifact(&paths.report_csv(), cost.render_csv().as_bytes())?;
    Ok(cost)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct VerifyCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct VerifySummary {
    pub checks: Vec<VerifyCheck>,
}

impl VerifySummary {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(VerifyCheck { name: name.into(), passed, detail: detail.into() });
    }
}

fn random_isf(rng: &mut ChaCha8Rng) -> Isf {
    let arity = rng.gen_range(4..=12);
    let rows = rng.gen_range(1..=200.min(1usize << arity));
    let mut on = PatternSet::new(arity);
    let mut off = PatternSet::new(arity);
    let mut used = std::collections::BTreeSet::new();
    for _ in 0..rows {
        let idx = rng.gen_range(0..1u64 << arity);
        if !used.insert(idx) {
            continue;
        }
        if rng.gen::<bool>() {
            on.push_index(idx);
        } else {
            off.push_index(idx);
        }
    }
    Isf::from_sets(on, off).expect("disjoint by construction")
}

fn random_aig(rng: &mut ChaCha8Rng) -> Aig {
    let inputs = rng.gen_range(2..=8);
    let mut g = Aig::new(inputs);
    let nodes = rng.gen_range(4..=60);
    for _ in 0..nodes {
        let total = 1 + inputs + g.node_count();
        let pick = |rng: &mut ChaCha8Rng| Lit::new(rng.gen_range(0..total), rng.gen());
        let (a, b) = (pick(rng), pick(rng));
        g.and(a, b);
    }
    let total = 1 + inputs + g.node_count();
    for _ in 0..rng.gen_range(1..=4) {
        g.push_output(Lit::new(rng.gen_range(0..total), rng.gen()));
    }
    g
}

fn exhaustive_equal(a: &Aig, b: &Aig) -> bool {
    let n = a.num_inputs();
    if b.num_inputs() != n || a.outputs().len() != b.outputs().len() {
        return false;
    }
    let mut bits = vec![false; n];
    for idx in 0..1usize << n {
        for (j, bit) in bits.iter_mut().enumerate() {
            *bit = idx >> j & 1 == 1;
        }
        if a.eval_single(&bits) != b.eval_single(&bits) {
            return false;
        }
    }
    true
}

/// Built-in oracle suites: two-level soundness on random ISFs, exact-oracle
/// comparison at small arity, optimization-pass equivalence, netlist and
/// program round-trips, and the cost-model golden totals. Runs without any
/// artifacts so a fresh checkout can self-check.
fn builtin_suites(summary: &mut VerifySummary) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB001);

    let mut sound = 0usize;
    let cases = 200;
    for _ in 0..cases {
        let isf = random_isf(&mut rng);
        let ok = minimize(&isf)
            .and_then(|cover| verify_cover(&cover, &isf))
            .map(|report| report.is_valid())
            .unwrap_or(false);
        sound += ok as usize;
    }
    summary.push(
        "two-level soundness",
        sound == cases,
        format!("{sound}/{cases} random incompletely specified functions"),
    );

    let mut within = 0usize;
    let qm_cases = 60;
    for _ in 0..qm_cases {
        let arity = rng.gen_range(3..=5);
        let mut on_idx = Vec::new();
        let mut tt = TruthTable::new(arity);
        for idx in 0..1usize << arity {
            if rng.gen::<bool>() {
                tt.set(idx, true);
                on_idx.push(idx as u64);
            }
        }
        let heuristic = match minimize(&Isf::from_truth_table(&tt)) {
            Ok(c) => c.len(),
            Err(_) => usize::MAX,
        };
        let exact = crate::twolevel::exact::minimize_exact(arity, &on_idx, &[]).len();
        within += (heuristic <= exact + 1) as usize;
    }
    summary.push(
        "exact-oracle comparison",
        within == qm_cases,
        format!("{within}/{qm_cases} covers within one cube of the exact minimum"),
    );

    let mut preserved = 0usize;
    let aig_cases = 40;
    for _ in 0..aig_cases {
        let g = random_aig(&mut rng);
        preserved += exhaustive_equal(&g, &optimize_layer(&g)) as usize;
    }
    summary.push(
        "optimization equivalence",
        preserved == aig_cases,
        format!("{preserved}/{aig_cases} random graphs preserved by the pass pipeline"),
    );

    let mut round_trips = 0usize;
    let rt_cases = 25;
    for _ in 0..rt_cases {
        let g = random_aig(&mut rng);
        let mut bytes = Vec::new();
        let ok = write_blif(&mut bytes, &g, "check").is_ok()
            && read_blif(&bytes[..]).map(|back| exhaustive_equal(&g, &back)).unwrap_or(false)
            && {
                let program = emit_program(&g);
                let mut text = Vec::new();
                program.write(&mut text).is_ok()
                    && BooleanProgram::read(&text[..])
                        .map(|p| {
                            let mut bits = vec![false; g.num_inputs()];
                            (0..1usize << g.num_inputs()).all(|idx| {
                                for (j, bit) in bits.iter_mut().enumerate() {
                                    *bit = idx >> j & 1 == 1;
                                }
                                p.eval(&bits) == g.eval_single(&bits)
                            })
                        })
                        .unwrap_or(false)
            };
        round_trips += ok as usize;
    }
    summary.push(
        "netlist and program round-trip",
        round_trips == rt_cases,
        format!("{round_trips}/{rt_cases} graphs survive BLIF and program round-trips"),
    );

    let golden = [
        ("net1.1b", Some(79_607u64), 1_266_575i64),
        ("net1.2", Some(99_400), 1_590_400),
        ("net2.2", Some(283_640), 4_538_240),
    ];
    let mut ok = true;
    for (name, macs, bytes) in golden {
        let preset = crate::cost::preset(name).expect("preset exists");
        let (m, b) = preset.totals();
        ok &= m == macs && b == num_rational::Rational64::from_integer(bytes);
    }
    let net21b = crate::cost::preset("net2.1b").expect("preset exists");
    let kb = crate::cost::kilobytes(net21b.totals().1);
    ok &= (kb - 1011.45).abs() <= 0.01;
    summary.push("cost golden totals", ok, "published totals reproduced".to_string());
}

/// Artifact cross-checks for one run directory: covers against recorded
/// sets, netlists against programs, and the hybrid middle against the
/// recorded activations of every stage boundary.
fn artifact_checks(
    config: &PipelineConfig,
    summary: &mut VerifySummary,
) -> Result<(), PipelineError> {
    let paths = Artifacts::new(&config.out_dir);
    let net = load_checkpoint(config)?;
    let plan = analyze_network(&net)?;
    let groups = config.effective_stages(plan.blocks.len())?;

    let mut valid_units = 0usize;
    let mut total_units = 0usize;
    for block in &plan.blocks {
        let isf_pla = block_pla(&paths.block_isf(block.index), "extract", block, PlaKind::OnOff)?;
        let cover_pla =
            block_pla(&paths.block_cover(block.index), "minimize", block, PlaKind::Cover)?;
        let isfs = isf_pla.to_isfs()?;
        let covers = cover_pla.to_covers()?;
        for (isf, cover) in isfs.iter().zip(&covers) {
            total_units += 1;
            valid_units += verify_cover(cover, isf)?.is_valid() as usize;
        }
    }
    summary.push(
        "covers honor recorded sets",
        valid_units == total_units,
        format!("{valid_units}/{total_units} unit covers match their ON/OFF sets"),
    );

    let stages = load_stages(config, &groups)?;
    let mut agree = true;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED);
    for (s, stage) in stages.iter().enumerate() {
        let file = open_artifact(&paths.stage_prog(s), "emit")?;
        let program = BooleanProgram::read(BufReader::new(file))?;
        let mut patterns = PatternSet::new(stage.aig.num_inputs());
        let words = crate::bits::words_for(stage.aig.num_inputs());
        let mut row = vec![0u64; words];
        for _ in 0..256 {
            for w in row.iter_mut() {
                *w = rng.gen();
            }
            row[words - 1] &= crate::bits::last_word_mask(stage.aig.num_inputs());
            patterns.push_row(&row);
        }
        let from_aig = stage.aig.simulate(&patterns)?;
        let from_prog = program.eval_patterns(&patterns)?;
        for i in 0..patterns.len() {
            agree &= from_aig.row(i) == from_prog.row(i);
        }
    }
    summary.push(
        "programs match netlists",
        agree,
        format!("{} stages, 256 random patterns each", stages.len()),
    );

    let (train_set, _) = load_train_split(config)?;
    let images = shape_images(&train_set.images, &config.input_shape);
    let n = images.dim(0);
    let mut mismatches = 0usize;
    let mut lo = 0;
    while lo < n {
        let hi = (lo + EXTRACT_CHUNK).min(n);
        let acts = net.forward_eval(&images.slice_rows(lo, hi))?;
        for (group, stage) in groups.iter().zip(&stages) {
            let first = &plan.blocks[group[0]];
            let last = &plan.blocks[*group.last().expect("non-empty group")];
            let inputs = activations_to_patterns(&acts[first.linear - 1])?;
            let expected = activations_to_patterns(&acts[last.sign])?;
            let got = stage.aig.simulate(&inputs)?;
            for i in 0..inputs.len() {
                mismatches += (got.row(i) != expected.row(i)) as usize;
            }
        }
        lo = hi;
    }
    summary.push(
        "logic reproduces recorded activations",
        mismatches == 0,
        format!("{mismatches} mismatching samples across {n} training samples"),
    );
    Ok(())
}

/// Runs the built-in oracle suites, then — when a config is supplied — the
/// artifact cross-checks for its run directory.
pub fn run_verify(config: Option<&PipelineConfig>) -> Result<VerifySummary, PipelineError> {
    let mut summary = VerifySummary::default();
    builtin_suites(&mut summary);
    if let Some(config) = config {
        config.validate()?;
        artifact_checks(config, &mut summary)?;
    }
    Ok(summary)
}

/// Renders one line per check, e.g. for the CLI.
pub fn render_verify(summary: &VerifySummary) -> String {
    let mut out = String::new();
    for check in &summary.checks {
        let _ = writeln!(
            out,
            "{} {} ({})",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.detail
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LrSchedule;

    fn mnist_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
    }

    /// Small-but-real config: 448/64 train/val samples, 256 test samples.
    fn test_config(name: &str, input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> PipelineConfig {
        let data = mnist_dir();
        let out_dir = std::env::temp_dir().join(format!("boolnet_pipeline_{name}"));
        let _ = fs::remove_dir_all(&out_dir);
        PipelineConfig {
            version: 1,
            seed: 7,
            out_dir,
            dataset: DatasetConfig {
                train_images: data.join("train-images-idx3-ubyte"),
                train_labels: data.join("train-labels-idx1-ubyte"),
                test_images: data.join("t10k-images-idx3-ubyte"),
                test_labels: data.join("t10k-labels-idx1-ubyte"),
                validation_ratio: Some(0.875),
                train_limit: Some(512),
                test_limit: Some(256),
            },
            input_shape,
            layers,
            train: TrainConfig {
                epochs: 2,
                batch_size: 32,
                lr_initial: 0.01,
                lr_schedule: LrSchedule::Constant,
                dropout_rate: 0.0,
                seed: 7,
            },
            extraction: ExtractionConfig::default(),
            stages: None,
        }
    }

    fn dense_layers(hidden: usize, middle: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Dense { out_units: hidden },
            LayerSpec::BatchNorm,
            LayerSpec::Sign,
            LayerSpec::Dense { out_units: middle },
            LayerSpec::BatchNorm,
            LayerSpec::Sign,
            LayerSpec::Dense { out_units: 10 },
            LayerSpec::BatchNorm,
        ]
    }

    fn run_chain(config: &PipelineConfig) -> EvalOutcome {
        run_train(config).unwrap();
        run_extract(config).unwrap();
        run_minimize(config).unwrap();
        run_optimize(config).unwrap();
        run_emit(config).unwrap();
        run_eval(config).unwrap()
    }

    #[test]
    fn isf_chain_produces_consistent_artifacts() {
        let config = test_config("isf_dense", vec![784], dense_layers(16, 12));
        let outcome = run_chain(&config);
        assert_eq!(outcome.samples, 256);
        assert!(outcome.arithmetic_accuracy > 0.2, "{outcome:?}");
        assert!(outcome.hybrid_accuracy > 0.2, "{outcome:?}");

        let paths = Artifacts::new(&config.out_dir);
        for p in [
            paths.checkpoint(),
            paths.history(),
            paths.block_isf(0),
            paths.block_cover(0),
            paths.stage_blif(0),
            paths.stage_prog(0),
            paths.predictions(),
        ] {
            assert!(p.is_file(), "{p:?} missing");
        }

        let summary = run_verify(Some(&config)).unwrap();
        assert!(summary.all_passed(), "{}", render_verify(&summary));

        let report = run_report(&config).unwrap();
        let names: Vec<&str> = report.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["dense1", "stage 0", "dense3"]);
        assert!(paths.report_csv().is_file());
    }

    #[test]
    fn enumerated_dense_chain_matches_arithmetic_exactly() {
        let mut config = test_config("enum_dense", vec![784], dense_layers(12, 10));
        config.extraction.mode = ExtractionMode::Enumerate;
        let outcome = run_chain(&config);

        let net = load_checkpoint(&config).unwrap();
        let plan = analyze_network(&net).unwrap();
        let groups = config.effective_stages(plan.blocks.len()).unwrap();
        let stages = load_stages(&config, &groups).unwrap();
        let test = load_test_set(&config).unwrap();
        let images = shape_images(&test.images, &config.input_shape);
        let hybrid = hybrid_infer(&net, &stages, &images).unwrap();
        let arithmetic = crate::nn::argmax_rows(&net.scores(&images).unwrap());
        assert_eq!(hybrid, arithmetic, "complete tables must reproduce every prediction");
        assert!((outcome.hybrid_accuracy - outcome.arithmetic_accuracy).abs() < 1e-6);

        let summary = run_verify(Some(&config)).unwrap();
        assert!(summary.all_passed(), "{}", render_verify(&summary));
    }

    #[test]
    fn enumerated_conv_chain_matches_arithmetic_exactly() {
        let mut config = test_config(
            "enum_conv",
            vec![1, 28, 28],
            vec![
                LayerSpec::Conv2d { out_channels: 1 },
                LayerSpec::BatchNorm,
                LayerSpec::Sign,
                LayerSpec::Conv2d { out_channels: 2 },
                LayerSpec::MaxPool,
                LayerSpec::BatchNorm,
                LayerSpec::Sign,
                LayerSpec::Dense { out_units: 10 },
                LayerSpec::BatchNorm,
            ],
        );
        config.extraction.mode = ExtractionMode::Enumerate;
        config.dataset.train_limit = Some(256);
        config.dataset.test_limit = Some(128);
        config.train.epochs = 1;
        run_chain(&config);

        let net = load_checkpoint(&config).unwrap();
        let plan = analyze_network(&net).unwrap();
        assert_eq!(plan.blocks.len(), 1);
        assert_eq!(plan.blocks[0].fan_in(), 9);
        assert_eq!(plan.blocks[0].in_width(), 26 * 26);
        assert_eq!(plan.blocks[0].out_width(), 2 * 12 * 12);

        let groups = config.effective_stages(plan.blocks.len()).unwrap();
        let stages = load_stages(&config, &groups).unwrap();
        let test = load_test_set(&config).unwrap();
        let images = shape_images(&test.images, &config.input_shape);
        let hybrid = hybrid_infer(&net, &stages, &images).unwrap();
        let arithmetic = crate::nn::argmax_rows(&net.scores(&images).unwrap());
        assert_eq!(hybrid, arithmetic, "unrolled conv logic must match the arithmetic network");

        let summary = run_verify(Some(&config)).unwrap();
        assert!(summary.all_passed(), "{}", render_verify(&summary));
    }

    #[test]
    fn recorded_conv_block_isf_chain_verifies() {
        let mut config = test_config(
            "isf_conv",
            vec![1, 28, 28],
            vec![
                LayerSpec::Conv2d { out_channels: 1 },
                LayerSpec::BatchNorm,
                LayerSpec::Sign,
                LayerSpec::Conv2d { out_channels: 2 },
                LayerSpec::MaxPool,
                LayerSpec::BatchNorm,
                LayerSpec::Sign,
                LayerSpec::Dense { out_units: 10 },
                LayerSpec::BatchNorm,
            ],
        );
        config.dataset.train_limit = Some(128);
        config.dataset.test_limit = Some(64);
        config.train.epochs = 1;
        run_chain(&config);
        let summary = run_verify(Some(&config)).unwrap();
        assert!(summary.all_passed(), "{}", render_verify(&summary));
    }

    #[test]
    fn rerunning_the_chain_is_byte_identical() {
        let mut first = test_config("repro_a", vec![784], dense_layers(12, 10));
        first.extraction.mode = ExtractionMode::Enumerate;
        first.train.epochs = 1;
        let mut second = first.clone();
        second.out_dir = std::env::temp_dir().join("boolnet_pipeline_repro_b");
        let _ = fs::remove_dir_all(&second.out_dir);
        run_chain(&first);
        run_chain(&second);

        let (a, b) = (Artifacts::new(&first.out_dir), Artifacts::new(&second.out_dir));
        for (pa, pb) in [
            (a.checkpoint(), b.checkpoint()),
            (a.history(), b.history()),
            (a.block_isf(0), b.block_isf(0)),
            (a.block_cover(0), b.block_cover(0)),
            (a.stage_blif(0), b.stage_blif(0)),
            (a.stage_prog(0), b.stage_prog(0)),
            (a.predictions(), b.predictions()),
        ] {
            let (ba, bb) = (fs::read(&pa).unwrap(), fs::read(&pb).unwrap());
            assert_eq!(ba, bb, "{pa:?} differs from {pb:?}");
        }
    }

    #[test]
    fn missing_artifacts_name_the_step_to_run() {
        let config = test_config("missing", vec![784], dense_layers(16, 12));
        match run_extract(&config) {
            Err(PipelineError::MissingArtifact { run_first, .. }) => assert_eq!(run_first, "train"),
            other => panic!("expected a missing-checkpoint error, got {other:?}"),
        }
        run_train(&config).unwrap();
        match run_minimize(&config) {
            Err(PipelineError::MissingArtifact { run_first, .. }) => {
                assert_eq!(run_first, "extract")
            }
            other => panic!("expected a missing-sets error, got {other:?}"),
        }
        match run_optimize(&config) {
            Err(PipelineError::MissingArtifact { run_first, .. }) => {
                assert_eq!(run_first, "minimize")
            }
            other => panic!("expected a missing-covers error, got {other:?}"),
        }
        match run_emit(&config) {
            Err(PipelineError::MissingArtifact { run_first, .. }) => {
                assert_eq!(run_first, "optimize")
            }
            other => panic!("expected a missing-netlist error, got {other:?}"),
        }
    }

    #[test]
    fn config_errors_name_the_field() {
        let mut config = test_config("badcfg", vec![784], dense_layers(16, 12));
        config.version = 2;
        match config.validate() {
            Err(PipelineError::Config { field, .. }) => assert_eq!(field, "version"),
            other => panic!("{other:?}"),
        }
        config.version = 1;
        config.input_shape = vec![27, 27];
        match config.validate() {
            Err(PipelineError::Config { field, .. }) => assert_eq!(field, "input_shape"),
            other => panic!("{other:?}"),
        }
        config.input_shape = vec![784];
        config.extraction.enum_max = 64;
        match config.validate() {
            Err(PipelineError::Config { field, .. }) => {
                assert_eq!(field, "extraction.enum_max")
            }
            other => panic!("{other:?}"),
        }
        config.extraction.enum_max = N_ENUM_MAX;
        config.stages = Some(vec![vec![0], vec![0]]);
        match config.effective_stages(1) {
            Err(PipelineError::Config { field, .. }) => assert_eq!(field, "stages"),
            other => panic!("{other:?}"),
        }

        // Enumeration of an over-wide block is rejected at extract time.
        let mut wide = test_config("badcfg_wide", vec![784], dense_layers(30, 10));
        wide.extraction.mode = ExtractionMode::Enumerate;
        run_train(&wide).unwrap();
        match run_extract(&wide) {
            Err(PipelineError::Config { field, message }) => {
                assert_eq!(field, "extraction");
                assert!(message.contains("fan-in 30"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_json_round_trips_with_field_checks() {
        let text = r#"{
            "version": 1,
            "seed": 3,
            "out_dir": "/tmp/example",
            "dataset": {
                "train_images": "ti", "train_labels": "tl",
                "test_images": "si", "test_labels": "sl",
                "validation_ratio": 0.9, "train_limit": 100, "test_limit": 50
            },
            "input_shape": [784],
            "layers": [
                {"kind": "dense", "out_units": 100},
                {"kind": "batch_norm"},
                {"kind": "sign"},
                {"kind": "dense", "out_units": 10},
                {"kind": "batch_norm"}
            ],
            "train": {
                "epochs": 5, "batch_size": 64, "lr_initial": 0.003,
                "lr_schedule": {"kind": "step_halve", "every": 25},
                "dropout_rate": 0.1, "seed": 1
            },
            "extraction": {"mode": "isf", "per_block": {"0": "enumerate"}, "enum_max": 16},
            "stages": [[0]]
        }"#;
        let config: PipelineConfig = serde_json::from_str(text).unwrap();
        config.validate().unwrap();
        assert_eq!(config.extraction.mode_for(0), ExtractionMode::Enumerate);
        assert_eq!(config.extraction.mode_for(1), ExtractionMode::Isf);
        let back = serde_json::to_string(&config).unwrap();
        let again: PipelineConfig = serde_json::from_str(&back).unwrap();
        assert_eq!(again.seed, 3);

        let bad: Result<PipelineConfig, _> =
            serde_json::from_str(&text.replace("\"seed\": 3", "\"sede\": 3"));
        assert!(bad.is_err(), "unknown fields must be rejected");
    }

    #[test]
    fn dropout_expands_onto_hidden_layers_only() {
        let mut config = test_config("dropout_specs", vec![784], dense_layers(16, 12));
        config.train.dropout_rate = 0.2;
        let specs = training_specs(&config);
        let drops: Vec<usize> = specs
            .iter()
            .enumerate()
            .filter_map(|(i, s)| matches!(s, LayerSpec::Dropout { .. }).then_some(i))
            .collect();
        // One dropout before each linear layer except the first.
        assert_eq!(drops, [3, 7]);
        assert_eq!(specs.len(), config.layers.len() + 2);

        // An explicit dropout layer suppresses the expansion.
        config.layers.insert(3, LayerSpec::Dropout { rate: 0.5 });
        assert_eq!(training_specs(&config), config.layers);

        // Rate zero leaves the architecture untouched.
        config.layers.remove(3);
        config.train.dropout_rate = 0.0;
        assert_eq!(training_specs(&config), config.layers);
    }

    #[test]
    fn builtin_verify_suites_pass_without_artifacts() {
        let summary = run_verify(None).unwrap();
        assert_eq!(summary.checks.len(), 5);
        assert!(summary.all_passed(), "{}", render_verify(&summary));
    }
}
