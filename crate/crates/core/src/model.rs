//! Domain model shared by the planner and the simulator: languages, tasks,
//! module identities, devices and cluster topology.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid language code {0:?}: expected a non-empty [a-z0-9_]+ token")]
    LanguageCode(String),
    #[error("invalid task id {0:?}: expected train_<src>-<tgt>")]
    TaskId(String),
    #[error("invalid device {0:?}: expected <node>:<gpu>")]
    Device(String),
    #[error("invalid transform {0:?}: expected name or name(arg)")]
    Transform(String),
    #[error("invalid topology: {0}")]
    Topology(String),
}

/// Short lowercase language identifier. Ordering is plain byte order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageCode(String);

impl LanguageCode {
    pub fn new(code: impl Into<String>) -> Result<Self, ModelError> {
        let code = code.into();
        let ok = !code.is_empty()
            && code
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_');
        if ok {
            Ok(Self(code))
        } else {
            Err(ModelError::LanguageCode(code))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for LanguageCode {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<LanguageCode> for String {
    fn from(value: LanguageCode) -> Self {
        value.0
    }
}

impl FromStr for LanguageCode {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Task identifier of the form `train_<src>-<tgt>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TaskId(String);

impl TaskId {
    pub fn new(src: &LanguageCode, tgt: &LanguageCode) -> Self {
        Self(format!("train_{src}-{tgt}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Recovers the language pair encoded in the identifier.
    pub fn languages(&self) -> Result<(LanguageCode, LanguageCode), ModelError> {
        let err = || ModelError::TaskId(self.0.clone());
        let pair = self.0.strip_prefix("train_").ok_or_else(err)?;
        let (src, tgt) = pair.split_once('-').ok_or_else(err)?;
        Ok((
            LanguageCode::new(src).map_err(|_| err())?,
            LanguageCode::new(tgt).map_err(|_| err())?,
        ))
    }
}

impl TryFrom<String> for TaskId {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        let id = Self(value);
        id.languages()?;
        Ok(id)
    }
}

impl From<TaskId> for String {
    fn from(value: TaskId) -> Self {
        value.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn task_id(src: &LanguageCode, tgt: &LanguageCode) -> TaskId {
    TaskId::new(src, tgt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Encoder,
    Decoder,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Encoder => "enc",
            Side::Decoder => "dec",
        })
    }
}

/// Identity of a shareable parameter block. Two keys denote the same block
/// iff side, stack position and group name all agree.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModuleKey {
    pub side: Side,
    pub position: usize,
    pub group: String,
}

impl ModuleKey {
    pub fn new(side: Side, position: usize, group: impl Into<String>) -> Self {
        Self {
            side,
            position,
            group: group.into(),
        }
    }
}

impl fmt::Display for ModuleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}:{}", self.side, self.position, self.group)
    }
}

/// A GPU, addressed as `<node>:<gpu>` in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DeviceId {
    pub node: usize,
    pub gpu: usize,
}

impl DeviceId {
    pub fn new(node: usize, gpu: usize) -> Self {
        Self { node, gpu }
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node, self.gpu)
    }
}

impl FromStr for DeviceId {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ModelError::Device(s.to_string());
        let (node, gpu) = s.split_once(':').ok_or_else(err)?;
        Ok(Self {
            node: node.trim().parse().map_err(|_| err())?,
            gpu: gpu.trim().parse().map_err(|_| err())?,
        })
    }
}

impl TryFrom<String> for DeviceId {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<DeviceId> for String {
    fn from(value: DeviceId) -> Self {
        value.to_string()
    }
}

fn default_alpha_intra() -> f64 {
    5e-6
}
fn default_alpha_inter() -> f64 {
    2e-5
}
fn default_beta_intra() -> f64 {
    1.5e11
}
fn default_beta_inter() -> f64 {
    1.25e10
}

/// Nodes × GPUs × slots, plus a latency/bandwidth pair per link class.
///
/// The defaults model NVLink inside a node and a 100 Gb/s interconnect
/// between nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterTopology {
    pub n_nodes: usize,
    pub n_gpus_per_node: usize,
    pub n_slots_per_gpu: usize,
    #[serde(default = "default_alpha_intra")]
    pub alpha_intra: f64,
    #[serde(default = "default_alpha_inter")]
    pub alpha_inter: f64,
    #[serde(default = "default_beta_intra")]
    pub beta_intra: f64,
    #[serde(default = "default_beta_inter")]
    pub beta_inter: f64,
}

impl ClusterTopology {
    pub fn new(n_nodes: usize, n_gpus_per_node: usize, n_slots_per_gpu: usize) -> Self {
        Self {
            n_nodes,
            n_gpus_per_node,
            n_slots_per_gpu,
            alpha_intra: default_alpha_intra(),
            alpha_inter: default_alpha_inter(),
            beta_intra: default_beta_intra(),
            beta_inter: default_beta_inter(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: &str| Err(ModelError::Topology(msg.to_string()));
        if self.n_nodes == 0 || self.n_gpus_per_node == 0 || self.n_slots_per_gpu == 0 {
            return fail("node, gpu and slot counts must be at least 1");
        }
        let finite = [
            self.alpha_intra,
            self.alpha_inter,
            self.beta_intra,
            self.beta_inter,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite || self.alpha_intra < 0.0 {
            return fail("latencies and bandwidths must be finite and non-negative");
        }
        if self.beta_intra <= 0.0 || self.beta_inter <= 0.0 {
            return fail("bandwidths must be positive");
        }
        if self.alpha_inter < self.alpha_intra {
            return fail("alpha_inter must not be below alpha_intra");
        }
        if self.beta_inter > self.beta_intra {
            return fail("beta_inter must not exceed beta_intra");
        }
        Ok(())
    }

    pub fn n_devices(&self) -> usize {
        self.n_nodes * self.n_gpus_per_node
    }

    pub fn total_slots(&self) -> usize {
        self.n_devices() * self.n_slots_per_gpu
    }

    pub fn contains(&self, device: DeviceId) -> bool {
        device.node < self.n_nodes && device.gpu < self.n_gpus_per_node
    }

    /// Dense index in node-major order.
    pub fn device_index(&self, device: DeviceId) -> usize {
        device.node * self.n_gpus_per_node + device.gpu
    }

    pub fn device_at(&self, index: usize) -> DeviceId {
        DeviceId::new(index / self.n_gpus_per_node, index % self.n_gpus_per_node)
    }

    pub fn devices(&self) -> impl Iterator<Item = DeviceId> + '_ {
        (0..self.n_devices()).map(|i| self.device_at(i))
    }
}

/// A named preprocessing step with an optional argument, written `name` or
/// `name(arg)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Transform {
    pub name: String,
    pub arg: Option<String>,
}

impl Transform {
    pub fn named(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            arg: None,
        }
    }

    pub fn with_arg(name: impl Into<String>, arg: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            arg: Some(arg.into()),
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.arg {
            Some(arg) => write!(f, "{}({arg})", self.name),
            None => f.write_str(&self.name),
        }
    }
}

impl FromStr for Transform {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ModelError::Transform(s.to_string());
        let valid_name = |n: &str| !n.is_empty() && !n.contains(['(', ')']);
        match s.split_once('(') {
            None if valid_name(s) => Ok(Self::named(s)),
            None => Err(err()),
            Some((name, rest)) => {
                let arg = rest.strip_suffix(')').ok_or_else(err)?;
                if !valid_name(name) || arg.contains(['(', ')']) {
                    return Err(err());
                }
                Ok(Self::with_arg(name, arg))
            }
        }
    }
}

impl TryFrom<String> for Transform {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Transform> for String {
    fn from(value: Transform) -> Self {
        value.to_string()
    }
}

/// A resolved adapter attached to one task.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AdapterInstance {
    pub adapter: String,
    pub instance: String,
}

/// One translation (or denoising, when `src_lang == tgt_lang`) direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: TaskId,
    pub src_lang: LanguageCode,
    pub tgt_lang: LanguageCode,
    pub src_path: String,
    pub tgt_path: String,
    pub enc_modules: Vec<ModuleKey>,
    pub dec_modules: Vec<ModuleKey>,
    pub enc_layers: Vec<usize>,
    pub dec_layers: Vec<usize>,
    pub weight: u32,
    pub introduce_at_training_step: u64,
    pub transforms: Vec<Transform>,
    pub adapters: Vec<AdapterInstance>,
    pub device: Option<DeviceId>,
}

impl TaskSpec {
    /// A bare task with no modules, paths or placement yet.
    pub fn new(src: LanguageCode, tgt: LanguageCode) -> Self {
        Self {
            id: TaskId::new(&src, &tgt),
            src_lang: src,
            tgt_lang: tgt,
            src_path: String::new(),
            tgt_path: String::new(),
            enc_modules: Vec::new(),
            dec_modules: Vec::new(),
            enc_layers: Vec::new(),
            dec_layers: Vec::new(),
            weight: 1,
            introduce_at_training_step: 0,
            transforms: Vec::new(),
            adapters: Vec::new(),
            device: None,
        }
    }

    pub fn is_denoising(&self) -> bool {
        self.src_lang == self.tgt_lang
    }

    /// Encoder modules followed by decoder modules, the order a datapoint
    /// traverses them.
    pub fn modules(&self) -> impl Iterator<Item = &ModuleKey> {
        self.enc_modules.iter().chain(self.dec_modules.iter())
    }

    pub fn layered_modules(&self) -> impl Iterator<Item = (&ModuleKey, usize)> {
        self.enc_modules
            .iter()
            .zip(self.enc_layers.iter().copied())
            .chain(self.dec_modules.iter().zip(self.dec_layers.iter().copied()))
    }
}

/// A configuration rule broken by a task list.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    DuplicateTask(TaskId),
    TaskIdMismatch {
        task: TaskId,
        expected: TaskId,
    },
    LayerCountMismatch {
        task: TaskId,
        side: Side,
    },
    ModuleSlotMismatch {
        task: TaskId,
        side: Side,
        index: usize,
    },
    ZeroLayers {
        task: TaskId,
        side: Side,
    },
    ZeroWeight(TaskId),
    EmptyModuleSequence {
        task: TaskId,
        side: Side,
    },
    UnequalPositionCount {
        side: Side,
        counts: BTreeMap<usize, Vec<TaskId>>,
    },
    ConflictingModuleLayers {
        module: ModuleKey,
        layers: BTreeSet<usize>,
    },
    DeviceOutOfBounds {
        task: TaskId,
        device: DeviceId,
    },
    SlotCapacity {
        device: DeviceId,
        tasks: Vec<TaskId>,
        capacity: usize,
    },
    InvalidTopology(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateTask(id) => write!(f, "duplicate task {id}"),
            Violation::TaskIdMismatch { task, expected } => {
                write!(
                    f,
                    "task {task} does not match its language pair (expected {expected})"
                )
            }
            Violation::LayerCountMismatch { task, side } => {
                write!(
                    f,
                    "task {task}: {side} module and layer lists differ in length"
                )
            }
            Violation::ModuleSlotMismatch { task, side, index } => {
                write!(
                    f,
                    "task {task}: {side} module at index {index} has the wrong side or position"
                )
            }
            Violation::ZeroLayers { task, side } => {
                write!(f, "task {task}: {side} stack with zero layers")
            }
            Violation::ZeroWeight(id) => write!(f, "task {id}: weight must be positive"),
            Violation::EmptyModuleSequence { task, side } => {
                write!(f, "task {task}: no {side} modules")
            }
            Violation::UnequalPositionCount { side, counts } => {
                let name = match side {
                    Side::Encoder => "encoder",
                    Side::Decoder => "decoder",
                };
                write!(f, "unequal {name} position count:")?;
                for (count, tasks) in counts {
                    let ids: Vec<_> = tasks.iter().map(TaskId::as_str).collect();
                    write!(f, " {count} in [{}];", ids.join(", "))?;
                }
                Ok(())
            }
            Violation::ConflictingModuleLayers { module, layers } => {
                write!(
                    f,
                    "module {module} used with conflicting layer counts {layers:?}"
                )
            }
            Violation::DeviceOutOfBounds { task, device } => {
                write!(f, "task {task}: device {device} is outside the topology")
            }
            Violation::SlotCapacity {
                device,
                tasks,
                capacity,
            } => {
                let ids: Vec<_> = tasks.iter().map(TaskId::as_str).collect();
                write!(
                    f,
                    "device {device} hosts {} tasks, capacity {capacity}: [{}]",
                    tasks.len(),
                    ids.join(", ")
                )
            }
            Violation::InvalidTopology(msg) => write!(f, "{msg}"),
        }
    }
}

/// Checks every task invariant, device bound and slot capacity. The result
/// is sorted, so it does not depend on the order of `tasks`.
pub fn validate_config(tasks: &[TaskSpec], topo: &ClusterTopology) -> Vec<Violation> {
    let mut out = Vec::new();
    if let Err(e) = topo.validate() {
        out.push(Violation::InvalidTopology(e.to_string()));
    }

    let mut seen = BTreeSet::new();
    let mut enc_counts: BTreeMap<usize, Vec<TaskId>> = BTreeMap::new();
    let mut dec_counts: BTreeMap<usize, Vec<TaskId>> = BTreeMap::new();
    let mut module_layers: BTreeMap<&ModuleKey, BTreeSet<usize>> = BTreeMap::new();
    let mut per_device: BTreeMap<DeviceId, Vec<TaskId>> = BTreeMap::new();

    for task in tasks {
        if !seen.insert(&task.id) {
            out.push(Violation::DuplicateTask(task.id.clone()));
        }
        let expected = TaskId::new(&task.src_lang, &task.tgt_lang);
        if expected != task.id {
            out.push(Violation::TaskIdMismatch {
                task: task.id.clone(),
                expected,
            });
        }
        if task.weight == 0 {
            out.push(Violation::ZeroWeight(task.id.clone()));
        }
        for (side, modules, layers) in [
            (Side::Encoder, &task.enc_modules, &task.enc_layers),
            (Side::Decoder, &task.dec_modules, &task.dec_layers),
        ] {
            if modules.is_empty() {
                out.push(Violation::EmptyModuleSequence {
                    task: task.id.clone(),
                    side,
                });
            }
            if modules.len() != layers.len() {
                out.push(Violation::LayerCountMismatch {
                    task: task.id.clone(),
                    side,
                });
            }
            if layers.contains(&0) {
                out.push(Violation::ZeroLayers {
                    task: task.id.clone(),
                    side,
                });
            }
            for (index, key) in modules.iter().enumerate() {
                if key.side != side || key.position != index {
                    out.push(Violation::ModuleSlotMismatch {
                        task: task.id.clone(),
                        side,
                        index,
                    });
                }
            }
        }
        enc_counts
            .entry(task.enc_modules.len())
            .or_default()
            .push(task.id.clone());
        dec_counts
            .entry(task.dec_modules.len())
            .or_default()
            .push(task.id.clone());
        for (key, layers) in task.layered_modules() {
            module_layers.entry(key).or_default().insert(layers);
        }
        if let Some(device) = task.device {
            if !topo.contains(device) {
                out.push(Violation::DeviceOutOfBounds {
                    task: task.id.clone(),
                    device,
                });
            }
            per_device.entry(device).or_default().push(task.id.clone());
        }
    }

    for (side, mut counts) in [(Side::Encoder, enc_counts), (Side::Decoder, dec_counts)] {
        if counts.len() > 1 {
            counts.values_mut().for_each(|ids| ids.sort());
            out.push(Violation::UnequalPositionCount { side, counts });
        }
    }
    for (module, layers) in module_layers {
        if layers.len() > 1 {
            out.push(Violation::ConflictingModuleLayers {
                module: module.clone(),
                layers,
            });
        }
    }
    for (device, mut ids) in per_device {
        if ids.len() > topo.n_slots_per_gpu {
            ids.sort();
            out.push(Violation::SlotCapacity {
                device,
                tasks: ids,
                capacity: topo.n_slots_per_gpu,
            });
        }
    }
    out.sort();
    out
}
