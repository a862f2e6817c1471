#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use mmplan::configgen::{MemoryCorpus, MetaConfig};
use mmplan::model::{ClusterTopology, DeviceId, LanguageCode, ModuleKey, TaskSpec};
use mmplan::sharing::{build_module_sequence, LanguageGroups};
use mmplan::{ArchSpec, SharingPattern, StackSpec};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

pub fn lang(s: &str) -> LanguageCode {
    LanguageCode::new(s).unwrap()
}

pub fn pool(n: usize) -> Vec<LanguageCode> {
    ["bg", "cs", "de", "en", "et", "fi", "fr", "hu", "it", "lt"][..n]
        .iter()
        .map(|s| lang(s))
        .collect()
}

pub fn random_arch<R: Rng>(rng: &mut R, allow_groups: bool) -> ArchSpec {
    let patterns: Vec<SharingPattern> = SharingPattern::ALL
        .into_iter()
        .filter(|p| allow_groups || !p.needs_groups())
        .collect();
    let side = |rng: &mut R| {
        (0..rng.random_range(1..=3))
            .map(|_| StackSpec::new(*patterns.choose(rng).unwrap(), rng.random_range(1..=3)))
            .collect::<Vec<_>>()
    };
    let enc = side(rng);
    let dec = side(rng);
    ArchSpec::new(enc, dec)
}

pub fn random_groups<R: Rng>(rng: &mut R, langs: &[LanguageCode]) -> LanguageGroups {
    let k = rng.random_range(1..=langs.len().min(3));
    langs
        .iter()
        .map(|l| (l.clone(), format!("group{}", rng.random_range(0..k))))
        .collect()
}

/// `n` distinct directions over `langs` (self-pairs allowed), each with the
/// module sequence `arch` gives it.
pub fn random_tasks<R: Rng>(
    rng: &mut R,
    n: usize,
    langs: &[LanguageCode],
    arch: &ArchSpec,
    groups: &LanguageGroups,
) -> Vec<TaskSpec> {
    let mut pairs: Vec<(LanguageCode, LanguageCode)> = langs
        .iter()
        .flat_map(|a| langs.iter().map(move |b| (a.clone(), b.clone())))
        .collect();
    pairs.shuffle(rng);
    pairs.truncate(n);
    assert_eq!(pairs.len(), n, "language pool too small");
    pairs
        .into_iter()
        .map(|(s, t)| {
            let mut task = TaskSpec::new(s, t);
            build_module_sequence(arch, &task.src_lang, &task.tgt_lang, groups)
                .unwrap()
                .apply_to(&mut task);
            task.src_path = format!("{}.src", task.id);
            task.tgt_path = format!("{}.tgt", task.id);
            task
        })
        .collect()
}

/// Spreads tasks over the first `d` devices of `topo`, every device getting
/// at least one.
pub fn spread<R: Rng>(rng: &mut R, tasks: &mut [TaskSpec], topo: &ClusterTopology, d: usize) {
    let devices: Vec<DeviceId> = topo.devices().take(d).collect();
    assert!(tasks.len() >= d);
    let mut slots: Vec<DeviceId> = devices.clone();
    while slots.len() < tasks.len() {
        slots.push(*devices.choose(rng).unwrap());
    }
    slots.shuffle(rng);
    for (t, dev) in tasks.iter_mut().zip(slots) {
        t.device = Some(dev);
    }
}

pub fn union_modules(tasks: &[TaskSpec]) -> BTreeSet<ModuleKey> {
    tasks.iter().flat_map(|t| t.modules().cloned()).collect()
}

/// A meta configuration over `langs` with every directed pair present in
/// an in-memory corpus.
pub fn meta_with_corpus<R: Rng>(
    rng: &mut R,
    langs: &[LanguageCode],
    arch: &ArchSpec,
) -> (MetaConfig, MemoryCorpus) {
    let names: Vec<&str> = langs.iter().map(|l| l.as_str()).collect();
    let yaml = format!(
        r#"
languages: [{}]
corpus_mode: directional
src_path_template: "{{lang_pair}}/train.{{src_lang}}"
tgt_path_template: "{{lang_pair}}/train.{{tgt_lang}}"
arch: {{enc: [], dec: []}}
n_nodes: 2
n_gpus_per_node: 2
n_slots_per_gpu: 8
seed: {}
"#,
        names.join(", "),
        rng.random::<u32>()
    );
    let mut meta = MetaConfig::from_yaml(&yaml).unwrap();
    meta.arch = arch.clone();
    let mut files = BTreeMap::new();
    for s in langs {
        for t in langs {
            if s != t || rng.random_bool(0.5) {
                let n = rng.random_range(10..10_000u64);
                files.insert(format!("{s}-{t}/train.{s}"), n);
                files.insert(format!("{s}-{t}/train.{t}"), n);
            }
        }
    }
    (meta, MemoryCorpus { files })
}
