//! The compact meta-configuration and the corpus probes it is compiled
//! against.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::weighting::CurriculumStage;
use crate::allocator::{CostWeights, DEFAULT_BUDGET};
use crate::clusterer::LanguageDistanceMatrix;
use crate::model::{ClusterTopology, LanguageCode, Side, TaskId};
use crate::pathtmpl::{CorpusLayout, CorpusMode, PathTemplate, TemplateError};
use crate::sharing::{ArchSpec, SharingPattern, DEFAULT_PARAMS_PER_LAYER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    Bart,
    Mass,
}

impl NoiseKind {
    pub fn transform_name(self) -> &'static str {
        match self {
            NoiseKind::Bart => "bart",
            NoiseKind::Mass => "mass",
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderSpec {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default)]
    pub noise: NoiseKind,
}

impl Default for AutoencoderSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            noise: NoiseKind::default(),
        }
    }
}

/// An adapter block inserted after the given layer stacks of one side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSpec {
    pub name: String,
    pub side: Side,
    pub positions: Vec<usize>,
    pub pattern: SharingPattern,
}

fn one() -> f64 {
    1.0
}
fn default_params_per_layer() -> u64 {
    DEFAULT_PARAMS_PER_LAYER
}
fn default_budget() -> usize {
    DEFAULT_BUDGET
}
fn default_w_intra() -> f64 {
    CostWeights::default().w_intra
}
fn default_w_inter() -> f64 {
    CostWeights::default().w_inter
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationSettings {
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_w_intra")]
    pub w_intra: f64,
    #[serde(default = "default_w_inter")]
    pub w_inter: f64,
}

impl Default for AllocationSettings {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            w_intra: default_w_intra(),
            w_inter: default_w_inter(),
        }
    }
}

impl AllocationSettings {
    pub fn weights(&self) -> CostWeights {
        CostWeights {
            w_intra: self.w_intra,
            w_inter: self.w_inter,
        }
    }
}

/// Input to the configuration compiler.
///
/// Relative paths (`distance_matrix_path`, `corpus_stats_path`,
/// `corpus_root`) are resolved against the directory of the meta file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaConfig {
    pub languages: Vec<LanguageCode>,
    pub corpus_mode: CorpusMode,
    pub src_path_template: String,
    pub tgt_path_template: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_root: Option<String>,
    pub arch: ArchSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_groups: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_matrix_path: Option<String>,
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub autoencoder: Option<AutoencoderSpec>,
    #[serde(default)]
    pub curriculum_stages: Vec<CurriculumStage>,
    #[serde(default)]
    pub adapters: Vec<AdapterSpec>,
    /// Known corpus sizes, by task id. Missing entries are counted through
    /// the corpus probe.
    #[serde(default)]
    pub line_counts: BTreeMap<TaskId, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_stats_path: Option<String>,
    pub n_nodes: usize,
    pub n_gpus_per_node: usize,
    pub n_slots_per_gpu: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub links: Option<LinkCosts>,
    #[serde(default = "default_params_per_layer")]
    pub params_per_layer: u64,
    #[serde(default)]
    pub allocation: AllocationSettings,
    #[serde(default)]
    pub seed: u64,
}

/// Overrides for the latency/bandwidth pairs of the topology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkCosts {
    pub alpha_intra: f64,
    pub alpha_inter: f64,
    pub beta_intra: f64,
    pub beta_inter: f64,
}

impl MetaConfig {
    pub fn from_yaml(text: &str) -> Result<Self, serde_yaml::Error> {
        serde_yaml::from_str(text)
    }

    pub fn to_yaml(&self) -> Result<String, serde_yaml::Error> {
        serde_yaml::to_string(self)
    }

    pub fn topology(&self) -> ClusterTopology {
        let mut t = ClusterTopology::new(self.n_nodes, self.n_gpus_per_node, self.n_slots_per_gpu);
        if let Some(l) = self.links {
            t.alpha_intra = l.alpha_intra;
            t.alpha_inter = l.alpha_inter;
            t.beta_intra = l.beta_intra;
            t.beta_inter = l.beta_inter;
        }
        t
    }

    pub fn layout(&self) -> Result<CorpusLayout, TemplateError> {
        CorpusLayout::new(
            PathTemplate::parse(&self.src_path_template, self.corpus_mode)?,
            PathTemplate::parse(&self.tgt_path_template, self.corpus_mode)?,
        )
    }

    pub fn autoencoder_noise(&self) -> Option<NoiseKind> {
        self.autoencoder.filter(|a| a.enabled).map(|a| a.noise)
    }

    pub fn needs_groups(&self) -> bool {
        self.arch.uses_groups() || self.adapters.iter().any(|a| a.pattern.needs_groups())
    }
}

/// Answers existence and size questions about corpus files.
pub trait CorpusProbe {
    fn exists(&self, path: &str) -> bool;
    fn line_count(&self, path: &str) -> Option<u64>;
}

/// Corpus files under a root directory. Compressed files cannot be counted
/// and need an entry in the stats sidecar.
#[derive(Debug, Clone)]
pub struct FsCorpus {
    root: PathBuf,
}

impl FsCorpus {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl CorpusProbe for FsCorpus {
    fn exists(&self, path: &str) -> bool {
        self.root.join(path).is_file()
    }

    fn line_count(&self, path: &str) -> Option<u64> {
        const COMPRESSED: [&str; 4] = [".gz", ".bz2", ".xz", ".zst"];
        if COMPRESSED.iter().any(|ext| path.ends_with(ext)) {
            return None;
        }
        let bytes = fs::read(self.root.join(path)).ok()?;
        let newlines = bytes.iter().filter(|&&b| b == b'\n').count() as u64;
        let unterminated = u64::from(bytes.last().is_some_and(|&b| b != b'\n'));
        Some(newlines + unterminated)
    }
}

/// In-memory corpus: path → line count.
#[derive(Debug, Clone, Default)]
pub struct MemoryCorpus {
    pub files: BTreeMap<String, u64>,
}

impl MemoryCorpus {
    pub fn with_files<I, S>(files: I) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        Self {
            files: files.into_iter().map(|(p, n)| (p.into(), n)).collect(),
        }
    }
}

impl CorpusProbe for MemoryCorpus {
    fn exists(&self, path: &str) -> bool {
        self.files.contains_key(path)
    }

    fn line_count(&self, path: &str) -> Option<u64> {
        self.files.get(path).copied()
    }
}

/// Parses a stats sidecar: one `<task_id> <line_count>` pair per line.
pub fn parse_corpus_stats(text: &str) -> Result<BTreeMap<TaskId, u64>, String> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(id), Some(count), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(format!("line {}: expected `<task_id> <count>`", n + 1));
        };
        let id = TaskId::try_from(id.to_string()).map_err(|e| format!("line {}: {e}", n + 1))?;
        let count = count
            .parse()
            .map_err(|_| format!("line {}: bad count {count:?}", n + 1))?;
        out.insert(id, count);
    }
    Ok(out)
}

/// A meta-configuration with its side files loaded.
#[derive(Debug, Clone)]
pub struct LoadedMeta {
    pub meta: MetaConfig,
    pub distances: Option<LanguageDistanceMatrix<f64>>,
    pub corpus: FsCorpus,
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

fn read(path: &Path) -> Result<String, LoadError> {
    fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a meta file plus its distance matrix and stats sidecar.
pub fn load_meta(path: &Path) -> Result<LoadedMeta, LoadError> {
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let parse_err = |p: &Path, message: String| LoadError::Parse {
        path: p.to_path_buf(),
        message,
    };
    let mut meta =
        MetaConfig::from_yaml(&read(path)?).map_err(|e| parse_err(path, e.to_string()))?;
    let distances = match &meta.distance_matrix_path {
        Some(p) => {
            let p = base.join(p);
            let m = LanguageDistanceMatrix::parse(&read(&p)?)
                .map_err(|e| parse_err(&p, e.to_string()))?;
            Some(m)
        }
        None => None,
    };
    if let Some(p) = &meta.corpus_stats_path {
        let p = base.join(p);
        let stats = parse_corpus_stats(&read(&p)?).map_err(|e| parse_err(&p, e))?;
        for (id, n) in stats {
            meta.line_counts.entry(id).or_insert(n);
        }
    }
    let root = match &meta.corpus_root {
        Some(r) => base.join(r),
        None => base,
    };
    Ok(LoadedMeta {
        meta,
        distances,
        corpus: FsCorpus::new(root),
    })
}
