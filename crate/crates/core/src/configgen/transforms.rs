//! Per-task transform lists and adapter instances.

use super::meta::{AdapterSpec, NoiseKind};
use crate::model::{AdapterInstance, LanguageCode, TaskSpec, Transform};
use crate::sharing::{resolve_group_name, ArchSpec, LanguageGroups, SharingError};

pub const SUBWORD: &str = "subword";
pub const FILTER: &str = "filter";
pub const PREFIX: &str = "prefix";

/// Translation tasks get `[subword, filter]`, denoising tasks
/// `[subword, <noise>]`. When no decoder stack is specific to the target
/// language, the decoder cannot tell which language to produce, so a
/// `prefix(<tgt>)` transform is appended.
pub fn assign_transforms(task: &TaskSpec, arch: &ArchSpec, noise: NoiseKind) -> Vec<Transform> {
    let mut out = vec![Transform::named(SUBWORD)];
    if task.is_denoising() {
        out.push(Transform::named(noise.transform_name()));
    } else {
        out.push(Transform::named(FILTER));
    }
    if !arch.has_target_language_decoder() {
        out.push(Transform::with_arg(PREFIX, task.tgt_lang.as_str()));
    }
    out
}

/// One instance per adapter spec, named `<adapter>:<group>`.
pub fn assign_adapters(
    src: &LanguageCode,
    tgt: &LanguageCode,
    specs: &[AdapterSpec],
    groups: &LanguageGroups,
) -> Result<Vec<AdapterInstance>, SharingError> {
    specs
        .iter()
        .map(|spec| {
            let group = resolve_group_name(spec.pattern, spec.side, src, tgt, groups)?;
            Ok(AdapterInstance {
                adapter: spec.name.clone(),
                instance: format!("{}:{group}", spec.name),
            })
        })
        .collect()
}
