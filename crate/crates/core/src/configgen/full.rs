//! The explicit training configuration and its YAML form.
//!
//! ```yaml
//! enc_layers: [2, 4]
//! dec_layers: [4]
//! params_per_layer: 3147776
//! topology: {n_nodes: 1, n_gpus_per_node: 2, n_slots_per_gpu: 1, ...}
//! tasks:
//!   train_bg-en:
//!     src_tgt: bg-en
//!     enc_sharing_groups: [bg, full]
//!     dec_sharing_groups: [en]
//!     node_gpu: "0:0"
//!     path_src: bg-en/train.bg
//!     path_tgt: bg-en/train.en
//!     transforms: [subword, filter]
//!     weight: 1
//!     introduce_at_training_step: 0
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_config, AdapterInstance, ClusterTopology, DeviceId, LanguageCode, ModuleKey, Side,
    TaskId, TaskSpec, Transform, Violation,
};
use crate::sharing::{enumerate_modules, ModuleInventory, SharingError, DEFAULT_PARAMS_PER_LAYER};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("yaml: {0}")]
    Yaml(#[from] serde_yaml::Error),
    #[error("task {task}: src_tgt {value:?} is not <src>-<tgt>")]
    SrcTgt { task: TaskId, value: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullConfig {
    pub tasks: BTreeMap<TaskId, TaskSpec>,
    pub enc_layers: Vec<usize>,
    pub dec_layers: Vec<usize>,
    pub topology: ClusterTopology,
    pub params_per_layer: u64,
}

fn default_params_per_layer() -> u64 {
    DEFAULT_PARAMS_PER_LAYER
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    enc_layers: Vec<usize>,
    dec_layers: Vec<usize>,
    #[serde(default = "default_params_per_layer")]
    params_per_layer: u64,
    topology: ClusterTopology,
    tasks: BTreeMap<TaskId, FileTask>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileTask {
    src_tgt: String,
    enc_sharing_groups: Vec<String>,
    dec_sharing_groups: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_gpu: Option<DeviceId>,
    path_src: String,
    path_tgt: String,
    #[serde(default)]
    transforms: Vec<Transform>,
    weight: u32,
    #[serde(default)]
    introduce_at_training_step: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    adapters: Vec<AdapterInstance>,
}

impl FullConfig {
    pub fn task_list(&self) -> Vec<TaskSpec> {
        self.tasks.values().cloned().collect()
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_config(&self.task_list(), &self.topology)
    }

    pub fn modules(&self) -> Result<ModuleInventory, SharingError> {
        enumerate_modules(&self.task_list(), self.params_per_layer)
    }

    pub fn to_yaml(&self) -> Result<String, ConfigError> {
        let tasks = self
            .tasks
            .iter()
            .map(|(id, t)| {
                let groups = |ms: &[ModuleKey]| ms.iter().map(|m| m.group.clone()).collect();
                let entry = FileTask {
                    src_tgt: format!("{}-{}", t.src_lang, t.tgt_lang),
                    enc_sharing_groups: groups(&t.enc_modules),
                    dec_sharing_groups: groups(&t.dec_modules),
                    node_gpu: t.device,
                    path_src: t.src_path.clone(),
                    path_tgt: t.tgt_path.clone(),
                    transforms: t.transforms.clone(),
                    weight: t.weight,
                    introduce_at_training_step: t.introduce_at_training_step,
                    adapters: t.adapters.clone(),
                };
                (id.clone(), entry)
            })
            .collect();
        let file = FileConfig {
            enc_layers: self.enc_layers.clone(),
            dec_layers: self.dec_layers.clone(),
            params_per_layer: self.params_per_layer,
            topology: self.topology.clone(),
            tasks,
        };
        Ok(serde_yaml::to_string(&file)?)
    }

    /// Parses a configuration. Structural problems that `validate` can
    /// describe (mismatched layer lists, bad placements) are kept for it to
    /// report rather than rejected here.
    pub fn from_yaml(text: &str) -> Result<Self, ConfigError> {
        let file: FileConfig = serde_yaml::from_str(text)?;
        let mut tasks = BTreeMap::new();
        for (id, entry) in file.tasks {
            let bad = || ConfigError::SrcTgt {
                task: id.clone(),
                value: entry.src_tgt.clone(),
            };
            let (src, tgt) = entry.src_tgt.split_once('-').ok_or_else(bad)?;
            let src = LanguageCode::new(src).map_err(|_| bad())?;
            let tgt = LanguageCode::new(tgt).map_err(|_| bad())?;
            let keys = |side: Side, groups: Vec<String>| {
                groups
                    .into_iter()
                    .enumerate()
                    .map(|(i, g)| ModuleKey::new(side, i, g))
                    .collect::<Vec<_>>()
            };
            let spec = TaskSpec {
                id: id.clone(),
                src_lang: src,
                tgt_lang: tgt,
                src_path: entry.path_src,
                tgt_path: entry.path_tgt,
                enc_modules: keys(Side::Encoder, entry.enc_sharing_groups),
                dec_modules: keys(Side::Decoder, entry.dec_sharing_groups),
                enc_layers: file.enc_layers.clone(),
                dec_layers: file.dec_layers.clone(),
                weight: entry.weight,
                introduce_at_training_step: entry.introduce_at_training_step,
                transforms: entry.transforms,
                adapters: entry.adapters,
                device: entry.node_gpu,
            };
            tasks.insert(id, spec);
        }
        Ok(Self {
            tasks,
            enc_layers: file.enc_layers,
            dec_layers: file.dec_layers,
            topology: file.topology,
            params_per_layer: file.params_per_layer,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONFIG: &str = r#"
enc_layers: [6]
dec_layers: [6]
topology: {n_nodes: 1, n_gpus_per_node: 1, n_slots_per_gpu: 2}
tasks:
  train_bg-en:
    src_tgt: bg-en
    enc_sharing_groups: [bg]
    dec_sharing_groups: [en]
    node_gpu: "0:0"
    path_src: bg-en/train.bg
    path_tgt: bg-en/train.en
    transforms: [subword, filter]
    weight: 2
  train_de-en:
    src_tgt: de-en
    enc_sharing_groups: [de, full]
    dec_sharing_groups: [en]
    node_gpu: "0:0"
    path_src: de-en/train.de
    path_tgt: de-en/train.en
    weight: 1
"#;

    #[test]
    fn parses_and_reports_position_mismatch() {
        let cfg = FullConfig::from_yaml(CONFIG).unwrap();
        assert_eq!(cfg.tasks.len(), 2);
        let bg = &cfg.tasks[&TaskId::try_from("train_bg-en".to_string()).unwrap()];
        assert_eq!(bg.device, Some(DeviceId::new(0, 0)));
        assert_eq!(
            bg.transforms,
            vec![Transform::named("subword"), Transform::named("filter")]
        );
        let v = cfg.validate();
        assert!(v.iter().any(|x| matches!(
            x,
            Violation::UnequalPositionCount {
                side: Side::Encoder,
                ..
            }
        )));
    }

    #[test]
    fn round_trip() {
        let mut cfg = FullConfig::from_yaml(CONFIG).unwrap();
        for t in cfg.tasks.values_mut() {
            t.enc_modules.truncate(1);
        }
        let text = cfg.to_yaml().unwrap();
        assert_eq!(FullConfig::from_yaml(&text).unwrap(), cfg);
        assert!(cfg.validate().is_empty());
    }

    #[test]
    fn rejects_bad_src_tgt_and_unknown_keys() {
        let bad = CONFIG.replace("src_tgt: bg-en", "src_tgt: bgen");
        assert!(matches!(
            FullConfig::from_yaml(&bad),
            Err(ConfigError::SrcTgt { .. })
        ));
        let bad = CONFIG.replace("weight: 2", "weight: 2\n    extra: 1");
        assert!(FullConfig::from_yaml(&bad).is_err());
    }
}
