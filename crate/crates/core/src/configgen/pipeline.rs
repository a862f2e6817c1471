use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::full::FullConfig;
use super::meta::{CorpusProbe, MetaConfig};
use super::transforms::{assign_adapters, assign_transforms};
use super::weighting::{assign_curriculum, compute_weights};
use crate::allocator::{initial_assignment, local_search, Assignment};
use crate::clusterer::{cluster_languages, LanguageDistanceMatrix};
use crate::model::{LanguageCode, Side, TaskId, TaskSpec};
use crate::pathtmpl::discover_tasks;
use crate::sharing::{build_module_sequence, enumerate_modules, LanguageGroups};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Meta,
    Discover,
    Cluster,
    Sharing,
    Weights,
    Curriculum,
    Transforms,
    Adapters,
    Allocate,
    Search,
    Validate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Meta => "meta",
            Stage::Discover => "discover",
            Stage::Cluster => "cluster",
            Stage::Sharing => "sharing",
            Stage::Weights => "weights",
            Stage::Curriculum => "curriculum",
            Stage::Transforms => "transforms",
            Stage::Adapters => "adapters",
            Stage::Allocate => "allocate",
            Stage::Search => "search",
            Stage::Validate => "validate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("[{stage}] {message}")]
pub struct GenerateError {
    pub stage: Stage,
    pub message: String,
}

fn fail<T>(stage: Stage, message: impl fmt::Display) -> Result<T, GenerateError> {
    Err(GenerateError {
        stage,
        message: message.to_string(),
    })
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, GenerateError>;
}

impl<T, E: fmt::Display> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, GenerateError> {
        self.or_else(|e| fail(stage, e))
    }
}

fn check_meta(meta: &MetaConfig) -> Result<Vec<LanguageCode>, GenerateError> {
    let mut languages = meta.languages.clone();
    languages.sort();
    languages.dedup();
    if languages.is_empty() {
        return fail(Stage::Meta, "no languages");
    }
    meta.arch.validate().at(Stage::Meta)?;
    meta.topology().validate().at(Stage::Meta)?;
    if let Some(k) = meta.n_groups {
        if k == 0 || k > languages.len() {
            return fail(
                Stage::Meta,
                format!("n_groups = {k} must be in 1..={}", languages.len()),
            );
        }
    }
    if !(meta.temperature.is_finite() && meta.temperature >= 1.0) {
        return fail(Stage::Meta, "temperature must be >= 1");
    }
    for a in &meta.adapters {
        let n = meta.arch.stacks(a.side).len();
        if let Some(&p) = a.positions.iter().find(|&&p| p >= n) {
            let side = match a.side {
                Side::Encoder => "encoder",
                Side::Decoder => "decoder",
            };
            return fail(
                Stage::Meta,
                format!(
                    "adapter {}: position {p} is outside the {n} {side} stacks",
                    a.name
                ),
            );
        }
    }
    Ok(languages)
}

/// Compiles a meta-configuration into an explicit configuration.
///
/// Stages run in order: discovery, clustering, sharing groups, weights,
/// curriculum, transforms, adapters, allocation, local search, validation.
/// The result depends only on the inputs and `meta.seed`.
pub fn generate(
    meta: &MetaConfig,
    distances: Option<&LanguageDistanceMatrix<f64>>,
    corpus: &dyn CorpusProbe,
) -> Result<FullConfig, GenerateError> {
    let languages = check_meta(meta)?;
    let layout = meta.layout().at(Stage::Meta)?;
    let noise = meta.autoencoder_noise();

    let pairs = discover_tasks(&layout, &languages, noise.is_some(), |p| corpus.exists(p));
    if pairs.is_empty() {
        return fail(Stage::Discover, "empty task set: no language pair has data");
    }

    let groups: LanguageGroups = match (meta.n_groups, distances) {
        (Some(k), Some(m)) => {
            let sub = m.restrict(&languages).at(Stage::Cluster)?;
            cluster_languages(&sub, k).at(Stage::Cluster)?
        }
        _ if meta.needs_groups() => {
            return fail(
                Stage::Cluster,
                "group sharing patterns need n_groups and a distance matrix",
            )
        }
        _ => LanguageGroups::new(),
    };

    let mut tasks = Vec::with_capacity(pairs.len());
    for (src, tgt) in pairs {
        let mut task = TaskSpec::new(src, tgt);
        let (sp, tp) = layout.paths(&task.src_lang, &task.tgt_lang);
        task.src_path = sp;
        task.tgt_path = tp;
        build_module_sequence(&meta.arch, &task.src_lang, &task.tgt_lang, &groups)
            .at(Stage::Sharing)?
            .apply_to(&mut task);
        tasks.push(task);
    }

    let mut counts: BTreeMap<TaskId, u64> = BTreeMap::new();
    for t in &tasks {
        let n = meta
            .line_counts
            .get(&t.id)
            .copied()
            .or_else(|| corpus.line_count(&t.src_path));
        match n {
            Some(n) => counts.insert(t.id.clone(), n),
            None => return fail(Stage::Weights, format!("no line count for {}", t.id)),
        };
    }
    let weights = compute_weights(&counts, meta.temperature).at(Stage::Weights)?;
    let steps = assign_curriculum(&counts, &meta.curriculum_stages);
    for t in &mut tasks {
        t.weight = weights[&t.id];
        t.introduce_at_training_step = steps[&t.id];
        t.transforms = assign_transforms(t, &meta.arch, noise.unwrap_or_default());
        t.adapters = assign_adapters(&t.src_lang, &t.tgt_lang, &meta.adapters, &groups)
            .at(Stage::Adapters)?;
    }

    let topo = meta.topology();
    let inventory = enumerate_modules(&tasks, meta.params_per_layer).at(Stage::Sharing)?;
    let a0 = initial_assignment(&tasks, &topo, meta.seed).at(Stage::Allocate)?;
    let assignment: Assignment = local_search(
        &a0,
        &tasks,
        &inventory,
        &topo,
        meta.allocation.weights(),
        meta.allocation.budget,
        meta.seed,
    )
    .at(Stage::Search)?;
    assignment.apply_to(&mut tasks);

    let cfg = FullConfig {
        tasks: tasks.into_iter().map(|t| (t.id.clone(), t)).collect(),
        enc_layers: meta.arch.enc_layers(),
        dec_layers: meta.arch.dec_layers(),
        topology: topo,
        params_per_layer: meta.params_per_layer,
    };
    let violations = cfg.validate();
    if !violations.is_empty() {
        let msgs: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return fail(Stage::Validate, msgs.join("; "));
    }
    Ok(cfg)
}
