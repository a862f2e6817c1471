//! Layerwise parameter-sharing patterns and the module inventory they induce.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LanguageCode, ModuleKey, Side, TaskSpec};

/// Parameters per transformer layer at d_model=512, ffn=2048: four d×d
/// attention projections, the two feed-forward matrices and two layer norms.
pub const DEFAULT_PARAMS_PER_LAYER: u64 = 4 * 512 * 512 + 2 * 512 * 2048 + 2 * 2 * 512;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SharingError {
    #[error("language {lang} has no group assignment (needed by {pattern})")]
    MissingGroup {
        lang: LanguageCode,
        pattern: SharingPattern,
    },
    #[error("architecture needs at least one {0} stack")]
    EmptySide(Side),
    #[error("{side} stack {position} has zero layers")]
    ZeroLayers { side: Side, position: usize },
    #[error("module {module} is used with {first} and {second} layers")]
    ConflictingLayers {
        module: ModuleKey,
        first: usize,
        second: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SharingPattern {
    Full,
    SrcGroup,
    TgtGroup,
    Group,
    SrcLanguage,
    TgtLanguage,
    Language,
}

impl SharingPattern {
    pub const ALL: [SharingPattern; 7] = [
        SharingPattern::Full,
        SharingPattern::SrcGroup,
        SharingPattern::TgtGroup,
        SharingPattern::Group,
        SharingPattern::SrcLanguage,
        SharingPattern::TgtLanguage,
        SharingPattern::Language,
    ];

    pub fn needs_groups(self) -> bool {
        matches!(
            self,
            SharingPattern::SrcGroup | SharingPattern::TgtGroup | SharingPattern::Group
        )
    }

    /// True when, on `side`, the resolved name is the target language code.
    pub fn is_target_language_on(self, side: Side) -> bool {
        match self {
            SharingPattern::TgtLanguage => true,
            SharingPattern::Language => side == Side::Decoder,
            _ => false,
        }
    }
}

impl fmt::Display for SharingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SharingPattern::Full => "FULL",
            SharingPattern::SrcGroup => "SRC_GROUP",
            SharingPattern::TgtGroup => "TGT_GROUP",
            SharingPattern::Group => "GROUP",
            SharingPattern::SrcLanguage => "SRC_LANGUAGE",
            SharingPattern::TgtLanguage => "TGT_LANGUAGE",
            SharingPattern::Language => "LANGUAGE",
        })
    }
}

/// Language → group-name assignment.
pub type LanguageGroups = BTreeMap<LanguageCode, String>;

pub fn resolve_group_name(
    pattern: SharingPattern,
    side: Side,
    src: &LanguageCode,
    tgt: &LanguageCode,
    groups: &LanguageGroups,
) -> Result<String, SharingError> {
    let group_of = |lang: &LanguageCode| {
        groups
            .get(lang)
            .cloned()
            .ok_or_else(|| SharingError::MissingGroup {
                lang: lang.clone(),
                pattern,
            })
    };
    match (pattern, side) {
        (SharingPattern::Full, _) => Ok("full".to_string()),
        (SharingPattern::SrcLanguage, _) | (SharingPattern::Language, Side::Encoder) => {
            Ok(src.to_string())
        }
        (SharingPattern::TgtLanguage, _) | (SharingPattern::Language, Side::Decoder) => {
            Ok(tgt.to_string())
        }
        (SharingPattern::SrcGroup, _) | (SharingPattern::Group, Side::Encoder) => group_of(src),
        (SharingPattern::TgtGroup, _) | (SharingPattern::Group, Side::Decoder) => group_of(tgt),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackSpec {
    pub pattern: SharingPattern,
    pub n_layers: usize,
}

impl StackSpec {
    pub fn new(pattern: SharingPattern, n_layers: usize) -> Self {
        Self { pattern, n_layers }
    }
}

/// Encoder and decoder as concatenations of layer stacks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub enc: Vec<StackSpec>,
    pub dec: Vec<StackSpec>,
}

impl ArchSpec {
    pub fn new(enc: Vec<StackSpec>, dec: Vec<StackSpec>) -> Self {
        Self { enc, dec }
    }

    pub fn validate(&self) -> Result<(), SharingError> {
        for (side, stacks) in [(Side::Encoder, &self.enc), (Side::Decoder, &self.dec)] {
            if stacks.is_empty() {
                return Err(SharingError::EmptySide(side));
            }
            if let Some(position) = stacks.iter().position(|s| s.n_layers == 0) {
                return Err(SharingError::ZeroLayers { side, position });
            }
        }
        Ok(())
    }

    pub fn stacks(&self, side: Side) -> &[StackSpec] {
        match side {
            Side::Encoder => &self.enc,
            Side::Decoder => &self.dec,
        }
    }

    pub fn uses_groups(&self) -> bool {
        self.enc
            .iter()
            .chain(&self.dec)
            .any(|s| s.pattern.needs_groups())
    }

    /// True when some decoder stack is named after the target language.
    pub fn has_target_language_decoder(&self) -> bool {
        self.dec
            .iter()
            .any(|s| s.pattern.is_target_language_on(Side::Decoder))
    }

    pub fn enc_layers(&self) -> Vec<usize> {
        self.enc.iter().map(|s| s.n_layers).collect()
    }

    pub fn dec_layers(&self) -> Vec<usize> {
        self.dec.iter().map(|s| s.n_layers).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleSequence {
    pub enc_modules: Vec<ModuleKey>,
    pub dec_modules: Vec<ModuleKey>,
    pub enc_layers: Vec<usize>,
    pub dec_layers: Vec<usize>,
}

pub fn build_module_sequence(
    arch: &ArchSpec,
    src: &LanguageCode,
    tgt: &LanguageCode,
    groups: &LanguageGroups,
) -> Result<ModuleSequence, SharingError> {
    arch.validate()?;
    let side_modules = |side: Side| -> Result<Vec<ModuleKey>, SharingError> {
        arch.stacks(side)
            .iter()
            .enumerate()
            .map(|(i, stack)| {
                resolve_group_name(stack.pattern, side, src, tgt, groups)
                    .map(|name| ModuleKey::new(side, i, name))
            })
            .collect()
    };
    Ok(ModuleSequence {
        enc_modules: side_modules(Side::Encoder)?,
        dec_modules: side_modules(Side::Decoder)?,
        enc_layers: arch.enc_layers(),
        dec_layers: arch.dec_layers(),
    })
}

impl ModuleSequence {
    pub fn apply_to(self, task: &mut TaskSpec) {
        task.enc_modules = self.enc_modules;
        task.dec_modules = self.dec_modules;
        task.enc_layers = self.enc_layers;
        task.dec_layers = self.dec_layers;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModuleInfo {
    pub layers: usize,
    pub params: u64,
}

/// Every distinct module referenced by a task list, with its size.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ModuleInventory {
    modules: BTreeMap<ModuleKey, ModuleInfo>,
}

impl ModuleInventory {
    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    pub fn get(&self, key: &ModuleKey) -> Option<&ModuleInfo> {
        self.modules.get(key)
    }

    pub fn params(&self, key: &ModuleKey) -> u64 {
        self.modules.get(key).map_or(0, |m| m.params)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ModuleKey, &ModuleInfo)> {
        self.modules.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &ModuleKey> {
        self.modules.keys()
    }

    pub fn count_side(&self, side: Side) -> usize {
        self.modules.keys().filter(|k| k.side == side).count()
    }

    pub fn total_params(&self) -> u64 {
        self.modules.values().map(|m| m.params).sum()
    }
}

/// Union of all task module sequences. A module's layer count must agree
/// across every task that uses it.
pub fn enumerate_modules(
    tasks: &[TaskSpec],
    params_per_layer: u64,
) -> Result<ModuleInventory, SharingError> {
    let mut modules: BTreeMap<ModuleKey, ModuleInfo> = BTreeMap::new();
    for task in tasks {
        for (key, layers) in task.layered_modules() {
            match modules.get(key) {
                Some(info) if info.layers != layers => {
                    return Err(SharingError::ConflictingLayers {
                        module: key.clone(),
                        first: info.layers,
                        second: layers,
                    })
                }
                Some(_) => {}
                None => {
                    modules.insert(
                        key.clone(),
                        ModuleInfo {
                            layers,
                            params: layers as u64 * params_per_layer,
                        },
                    );
                }
            }
        }
    }
    Ok(ModuleInventory { modules })
}

#[cfg(test)]
mod tests {
    use super::*;
    use SharingPattern::*;

    fn lang(s: &str) -> LanguageCode {
        LanguageCode::new(s).unwrap()
    }

    fn task(arch: &ArchSpec, src: &str, tgt: &str, groups: &LanguageGroups) -> TaskSpec {
        let mut t = TaskSpec::new(lang(src), lang(tgt));
        build_module_sequence(arch, &t.src_lang, &t.tgt_lang, groups)
            .unwrap()
            .apply_to(&mut t);
        t
    }

    #[test]
    fn default_layer_size() {
        assert_eq!(DEFAULT_PARAMS_PER_LAYER, 3_147_776);
    }

    #[test]
    fn pattern_names() {
        let none = LanguageGroups::new();
        let (bg, en) = (lang("bg"), lang("en"));
        assert_eq!(
            resolve_group_name(Full, Side::Encoder, &bg, &en, &none).unwrap(),
            "full"
        );
        assert_eq!(
            resolve_group_name(Language, Side::Decoder, &bg, &en, &none).unwrap(),
            "en"
        );
        assert_eq!(
            resolve_group_name(Language, Side::Encoder, &bg, &en, &none).unwrap(),
            "bg"
        );
        let groups: LanguageGroups = [(lang("en"), "g0".to_string())].into();
        assert_eq!(
            resolve_group_name(TgtGroup, Side::Encoder, &bg, &en, &groups).unwrap(),
            "g0"
        );
        assert!(matches!(
            resolve_group_name(SrcGroup, Side::Encoder, &bg, &en, &groups),
            Err(SharingError::MissingGroup { .. })
        ));
    }

    #[test]
    fn pattern_names_parse_as_uppercase() {
        for p in SharingPattern::ALL {
            let yaml = serde_yaml::to_string(&p).unwrap();
            assert_eq!(yaml.trim(), p.to_string());
            assert_eq!(serde_yaml::from_str::<SharingPattern>(&yaml).unwrap(), p);
        }
    }

    #[test]
    fn partially_shared_sequence() {
        let arch = ArchSpec::new(
            vec![StackSpec::new(Language, 2), StackSpec::new(Full, 4)],
            vec![StackSpec::new(Language, 4)],
        );
        let seq =
            build_module_sequence(&arch, &lang("bg"), &lang("en"), &LanguageGroups::new()).unwrap();
        assert_eq!(
            seq.enc_modules,
            vec![
                ModuleKey::new(Side::Encoder, 0, "bg"),
                ModuleKey::new(Side::Encoder, 1, "full")
            ]
        );
        assert_eq!(
            seq.dec_modules,
            vec![ModuleKey::new(Side::Decoder, 0, "en")]
        );
        assert_eq!(seq.enc_layers, vec![2, 4]);
        assert_eq!(seq.dec_layers, vec![4]);
    }

    #[test]
    fn four_modules_not_two() {
        let arch = ArchSpec::new(
            vec![StackSpec::new(Language, 6)],
            vec![StackSpec::new(Language, 6)],
        );
        let g = LanguageGroups::new();
        let tasks = vec![task(&arch, "de", "en", &g), task(&arch, "en", "de", &g)];
        let inv = enumerate_modules(&tasks, 10).unwrap();
        assert_eq!(inv.len(), 4);
        assert_eq!(inv.params(&ModuleKey::new(Side::Decoder, 0, "de")), 60);
    }

    #[test]
    fn fully_shared_has_two_modules() {
        let arch = ArchSpec::new(vec![StackSpec::new(Full, 9)], vec![StackSpec::new(Full, 4)]);
        let g = LanguageGroups::new();
        let tasks = vec![task(&arch, "de", "en", &g), task(&arch, "fi", "et", &g)];
        let inv = enumerate_modules(&tasks, 1).unwrap();
        assert_eq!(inv.len(), 2);
        assert_eq!(inv.total_params(), 13);
    }

    #[test]
    fn single_task_inventory() {
        let arch = ArchSpec::new(
            vec![StackSpec::new(Language, 1), StackSpec::new(Full, 1)],
            vec![StackSpec::new(TgtLanguage, 2)],
        );
        let t = task(&arch, "bg", "en", &LanguageGroups::new());
        let inv = enumerate_modules(std::slice::from_ref(&t), 1).unwrap();
        let keys: Vec<_> = inv.keys().cloned().collect();
        let mut expected: Vec<_> = t.modules().cloned().collect();
        expected.sort();
        assert_eq!(keys, expected);
    }

    #[test]
    fn conflicting_layer_counts() {
        let g = LanguageGroups::new();
        let a = task(
            &ArchSpec::new(vec![StackSpec::new(Full, 2)], vec![StackSpec::new(Full, 2)]),
            "a",
            "b",
            &g,
        );
        let b = task(
            &ArchSpec::new(vec![StackSpec::new(Full, 3)], vec![StackSpec::new(Full, 2)]),
            "c",
            "d",
            &g,
        );
        assert!(matches!(
            enumerate_modules(&[a, b], 1),
            Err(SharingError::ConflictingLayers { .. })
        ));
    }

    #[test]
    fn arch_validation() {
        assert_eq!(
            ArchSpec::new(vec![], vec![StackSpec::new(Full, 1)]).validate(),
            Err(SharingError::EmptySide(Side::Encoder))
        );
        assert!(
            ArchSpec::new(vec![StackSpec::new(Full, 0)], vec![StackSpec::new(Full, 1)])
                .validate()
                .is_err()
        );
    }
}
