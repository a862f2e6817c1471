//! Task-to-GPU allocation.
//!
//! The objective charges each module for every extra device holding a copy
//! of it, and again (at a higher rate) for every extra node:
//!
//! ```text
//! cost(m) = params(m) · [ w_intra·(|devices(m)| − 1) + (w_inter − w_intra)·(|nodes(m)| − 1) ]
//! ```
//!
//! Feasibility is hard: at most `n_slots_per_gpu` tasks per GPU, and every
//! GPU that hosts anything hosts at least one task active from step 0.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{ClusterTopology, DeviceId, ModuleKey, TaskId, TaskSpec};
use crate::sharing::ModuleInventory;

pub const DEFAULT_BUDGET: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AllocError {
    #[error("{tasks} tasks do not fit in {slots} slots")]
    Capacity { tasks: usize, slots: usize },
    #[error("{step0} tasks start at step 0 but at least {needed} GPUs must be used")]
    Curriculum { step0: usize, needed: usize },
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("task {0} is not placed")]
    Unplaced(TaskId),
    #[error("task {0} is placed but not part of the task list")]
    UnknownTask(TaskId),
    #[error("device {device} is outside the topology")]
    OutOfBounds { device: DeviceId },
    #[error("device {device} hosts {count} tasks, capacity {capacity}")]
    OverCapacity {
        device: DeviceId,
        count: usize,
        capacity: usize,
    },
    #[error("device {device} hosts only curriculum-delayed tasks")]
    IdleDevice { device: DeviceId },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub w_intra: f64,
    pub w_inter: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_intra: 1.0,
            w_inter: 4.0,
        }
    }
}

impl CostWeights {
    fn contribution(&self, params: u64, n_devices: usize, n_nodes: usize) -> f64 {
        if n_devices == 0 {
            return 0.0;
        }
        params as f64
            * (self.w_intra * (n_devices - 1) as f64
                + (self.w_inter - self.w_intra) * (n_nodes - 1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    pub placement: BTreeMap<TaskId, DeviceId>,
}

impl Assignment {
    pub fn from_tasks(tasks: &[TaskSpec]) -> Result<Self, AllocError> {
        let mut placement = BTreeMap::new();
        for t in tasks {
            let device = t.device.ok_or_else(|| AllocError::Unplaced(t.id.clone()))?;
            placement.insert(t.id.clone(), device);
        }
        Ok(Self { placement })
    }

    pub fn device_of(&self, task: &TaskId) -> Option<DeviceId> {
        self.placement.get(task).copied()
    }

    pub fn apply_to(&self, tasks: &mut [TaskSpec]) {
        for t in tasks {
            t.device = self.placement.get(&t.id).copied();
        }
    }

    pub fn tasks_per_device(&self) -> BTreeMap<DeviceId, Vec<TaskId>> {
        let mut out: BTreeMap<DeviceId, Vec<TaskId>> = BTreeMap::new();
        for (task, device) in &self.placement {
            out.entry(*device).or_default().push(task.clone());
        }
        out
    }

    /// Checks placement completeness, bounds, slot capacity and curriculum
    /// cover.
    pub fn check(&self, tasks: &[TaskSpec], topo: &ClusterTopology) -> Result<(), AllocError> {
        let known: BTreeSet<&TaskId> = tasks.iter().map(|t| &t.id).collect();
        if let Some(extra) = self.placement.keys().find(|id| !known.contains(id)) {
            return Err(AllocError::UnknownTask(extra.clone()));
        }
        for t in tasks {
            if !self.placement.contains_key(&t.id) {
                return Err(AllocError::Unplaced(t.id.clone()));
            }
        }
        let step: BTreeMap<&TaskId, u64> = tasks
            .iter()
            .map(|t| (&t.id, t.introduce_at_training_step))
            .collect();
        for (device, ids) in self.tasks_per_device() {
            if !topo.contains(device) {
                return Err(AllocError::OutOfBounds { device });
            }
            if ids.len() > topo.n_slots_per_gpu {
                return Err(AllocError::OverCapacity {
                    device,
                    count: ids.len(),
                    capacity: topo.n_slots_per_gpu,
                });
            }
            if !ids.iter().any(|id| step[id] == 0) {
                return Err(AllocError::IdleDevice { device });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommCost {
    pub total: f64,
    pub per_module: BTreeMap<ModuleKey, f64>,
}

/// Communication cost of an assignment. Depends only on which tasks share a
/// device and which devices share a node.
pub fn comm_cost(
    assignment: &Assignment,
    tasks: &[TaskSpec],
    modules: &ModuleInventory,
    weights: CostWeights,
) -> CommCost {
    let mut spans: BTreeMap<&ModuleKey, (BTreeSet<DeviceId>, BTreeSet<usize>)> = BTreeMap::new();
    for t in tasks {
        let Some(device) = assignment.device_of(&t.id) else {
            continue;
        };
        for key in t.modules() {
            let (devices, nodes) = spans.entry(key).or_default();
            devices.insert(device);
            nodes.insert(device.node);
        }
    }
    let per_module: BTreeMap<ModuleKey, f64> = spans
        .into_iter()
        .map(|(key, (devices, nodes))| {
            let c = weights.contribution(modules.params(key), devices.len(), nodes.len());
            (key.clone(), c)
        })
        .collect();
    CommCost {
        total: per_module.values().sum(),
        per_module,
    }
}

fn signature(task: &TaskSpec) -> Vec<&ModuleKey> {
    let mut sig: Vec<&ModuleKey> = task.modules().collect();
    sig.sort();
    sig
}

/// Greedy warm start: tasks sorted by their module signature are cut into
/// balanced consecutive chunks, one chunk per GPU, with GPUs taken
/// round-robin over nodes. Equal signatures are ordered by a seeded
/// shuffle.
pub fn initial_assignment(
    tasks: &[TaskSpec],
    topo: &ClusterTopology,
    seed: u64,
) -> Result<Assignment, AllocError> {
    topo.validate()
        .map_err(|e| AllocError::Topology(e.to_string()))?;
    let n = tasks.len();
    if n == 0 {
        return Ok(Assignment::default());
    }
    let slots = topo.n_slots_per_gpu;
    if n > topo.total_slots() {
        return Err(AllocError::Capacity {
            tasks: n,
            slots: topo.total_slots(),
        });
    }
    let step0 = tasks
        .iter()
        .filter(|t| t.introduce_at_training_step == 0)
        .count();
    let min_gpus = n.div_ceil(slots);
    if step0 < min_gpus {
        return Err(AllocError::Curriculum {
            step0,
            needed: min_gpus,
        });
    }
    let n_gpus = topo.n_devices().min(n).min(step0).max(min_gpus);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|&a, &b| signature(&tasks[a]).cmp(&signature(&tasks[b])));

    let base = n / n_gpus;
    let extra = n % n_gpus;
    let mut chunks: Vec<Vec<usize>> = Vec::with_capacity(n_gpus);
    let mut rest = order.as_slice();
    for g in 0..n_gpus {
        let size = base + usize::from(g < extra);
        let (head, tail) = rest.split_at(size);
        chunks.push(head.to_vec());
        rest = tail;
    }

    // Curriculum cover: trade a delayed task into every chunk lacking a
    // step-0 task, taking the donor from a chunk with more than one.
    let is_step0 = |i: usize| tasks[i].introduce_at_training_step == 0;
    for g in 0..n_gpus {
        if chunks[g].iter().any(|&i| is_step0(i)) {
            continue;
        }
        let donor = (0..n_gpus)
            .find(|&h| chunks[h].iter().filter(|&&i| is_step0(i)).count() > 1)
            .expect("enough step-0 tasks for every used GPU");
        let from = chunks[donor]
            .iter()
            .rposition(|&i| is_step0(i))
            .expect("donor has step-0 tasks");
        let to = chunks[g].len() - 1;
        let moved = chunks[donor][from];
        chunks[donor][from] = chunks[g][to];
        chunks[g][to] = moved;
    }

    let mut placement = BTreeMap::new();
    for (g, chunk) in chunks.into_iter().enumerate() {
        let device = DeviceId::new(g % topo.n_nodes, g / topo.n_nodes);
        for i in chunk {
            placement.insert(tasks[i].id.clone(), device);
        }
    }
    Ok(Assignment { placement })
}

/// Incremental search state: per-module counts of tasks on each device and
/// of devices on each node.
struct SearchState<'a> {
    topo: &'a ClusterTopology,
    weights: CostWeights,
    task_modules: Vec<Vec<usize>>,
    module_params: Vec<u64>,
    step0: Vec<bool>,
    device_of: Vec<usize>,
    device_tasks: Vec<usize>,
    device_step0: Vec<usize>,
    module_on_device: Vec<Vec<u32>>,
    module_on_node: Vec<Vec<u32>>,
    module_devices: Vec<usize>,
    module_nodes: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
enum Move {
    Relocate { task: usize, to: usize },
    Swap { a: usize, b: usize },
}

impl<'a> SearchState<'a> {
    fn new(
        tasks: &[TaskSpec],
        assignment: &Assignment,
        modules: &ModuleInventory,
        topo: &'a ClusterTopology,
        weights: CostWeights,
    ) -> Self {
        let keys: Vec<&ModuleKey> = modules.keys().collect();
        let index: BTreeMap<&ModuleKey, usize> =
            keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
        let task_modules: Vec<Vec<usize>> = tasks
            .iter()
            .map(|t| {
                let mut ms: Vec<usize> =
                    t.modules().filter_map(|k| index.get(k).copied()).collect();
                ms.sort_unstable();
                ms.dedup();
                ms
            })
            .collect();
        let n_dev = topo.n_devices();
        let mut st = Self {
            topo,
            weights,
            module_params: keys.iter().map(|k| modules.params(k)).collect(),
            step0: tasks
                .iter()
                .map(|t| t.introduce_at_training_step == 0)
                .collect(),
            device_of: tasks
                .iter()
                .map(|t| topo.device_index(assignment.placement[&t.id]))
                .collect(),
            device_tasks: vec![0; n_dev],
            device_step0: vec![0; n_dev],
            module_on_device: vec![vec![0; n_dev]; keys.len()],
            module_on_node: vec![vec![0; topo.n_nodes]; keys.len()],
            module_devices: vec![0; keys.len()],
            module_nodes: vec![0; keys.len()],
            task_modules,
        };
        for t in 0..tasks.len() {
            let d = st.device_of[t];
            st.attach(t, d);
        }
        st
    }

    fn node_of(&self, device: usize) -> usize {
        device / self.topo.n_gpus_per_node
    }

    fn attach(&mut self, task: usize, device: usize) {
        self.device_of[task] = device;
        self.device_tasks[device] += 1;
        self.device_step0[device] += usize::from(self.step0[task]);
        let node = self.node_of(device);
        for &m in &self.task_modules[task] {
            self.module_on_device[m][device] += 1;
            if self.module_on_device[m][device] == 1 {
                self.module_devices[m] += 1;
                self.module_on_node[m][node] += 1;
                if self.module_on_node[m][node] == 1 {
                    self.module_nodes[m] += 1;
                }
            }
        }
    }

    fn detach(&mut self, task: usize) {
        let device = self.device_of[task];
        self.device_tasks[device] -= 1;
        self.device_step0[device] -= usize::from(self.step0[task]);
        let node = self.node_of(device);
        for &m in &self.task_modules[task] {
            self.module_on_device[m][device] -= 1;
            if self.module_on_device[m][device] == 0 {
                self.module_devices[m] -= 1;
                self.module_on_node[m][node] -= 1;
                if self.module_on_node[m][node] == 0 {
                    self.module_nodes[m] -= 1;
                }
            }
        }
    }

    fn module_cost(&self, m: usize) -> f64 {
        self.weights.contribution(
            self.module_params[m],
            self.module_devices[m],
            self.module_nodes[m],
        )
    }

    fn cost_of(&self, ms: &[usize]) -> f64 {
        ms.iter().map(|&m| self.module_cost(m)).sum()
    }

    fn touched(&self, mv: Move) -> Vec<usize> {
        let mut ms = match mv {
            Move::Relocate { task, .. } => self.task_modules[task].clone(),
            Move::Swap { a, b } => {
                let mut v = self.task_modules[a].clone();
                v.extend_from_slice(&self.task_modules[b]);
                v
            }
        };
        ms.sort_unstable();
        ms.dedup();
        ms
    }

    fn feasible(&self, mv: Move) -> bool {
        match mv {
            Move::Relocate { task, to } => {
                let from = self.device_of[task];
                if from == to || self.device_tasks[to] >= self.topo.n_slots_per_gpu {
                    return false;
                }
                let s = usize::from(self.step0[task]);
                let from_ok = self.device_tasks[from] == 1 || self.device_step0[from] > s;
                let to_ok = self.device_step0[to] + s > 0;
                from_ok && to_ok
            }
            Move::Swap { a, b } => {
                let (da, db) = (self.device_of[a], self.device_of[b]);
                if da == db || self.step0[a] == self.step0[b] {
                    return da != db;
                }
                // Exactly one of the two is a step-0 task; its old device
                // must keep another.
                let zero_dev = if self.step0[a] { da } else { db };
                self.device_step0[zero_dev] > 1
            }
        }
    }

    fn apply(&mut self, mv: Move) {
        match mv {
            Move::Relocate { task, to } => {
                self.detach(task);
                self.attach(task, to);
            }
            Move::Swap { a, b } => {
                let (da, db) = (self.device_of[a], self.device_of[b]);
                self.detach(a);
                self.detach(b);
                self.attach(a, db);
                self.attach(b, da);
            }
        }
    }

    fn undo(&mut self, mv: Move, from: usize) {
        match mv {
            Move::Relocate { task, .. } => {
                self.detach(task);
                self.attach(task, from);
            }
            Move::Swap { .. } => self.apply(mv),
        }
    }

    fn moves(&self) -> Vec<Move> {
        let n = self.device_of.len();
        let mut out = Vec::new();
        for task in 0..n {
            for to in 0..self.topo.n_devices() {
                if to != self.device_of[task] {
                    out.push(Move::Relocate { task, to });
                }
            }
        }
        for a in 0..n {
            for b in (a + 1)..n {
                if self.device_of[a] != self.device_of[b] {
                    out.push(Move::Swap { a, b });
                }
            }
        }
        out
    }
}

/// First-improvement hill climbing over relocations and swaps. A move is
/// taken only if it strictly lowers the cost and keeps the assignment
/// feasible; the candidate order of every sweep is a seeded shuffle. Stops
/// after `budget` move evaluations or when a full sweep finds nothing.
pub fn local_search(
    initial: &Assignment,
    tasks: &[TaskSpec],
    modules: &ModuleInventory,
    topo: &ClusterTopology,
    weights: CostWeights,
    budget: usize,
    seed: u64,
) -> Result<Assignment, AllocError> {
    initial.check(tasks, topo)?;
    let mut state = SearchState::new(tasks, initial, modules, topo, weights);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut evaluations = 0usize;

    'sweeps: while evaluations < budget {
        let mut candidates = state.moves();
        candidates.shuffle(&mut rng);
        for mv in candidates {
            if evaluations >= budget {
                break 'sweeps;
            }
            if !state.feasible(mv) {
                continue;
            }
            evaluations += 1;
            let touched = state.touched(mv);
            let before = state.cost_of(&touched);
            let from = match mv {
                Move::Relocate { task, .. } => state.device_of[task],
                Move::Swap { .. } => 0,
            };
            state.apply(mv);
            if state.cost_of(&touched) < before {
                continue 'sweeps;
            }
            state.undo(mv, from);
        }
        break;
    }

    let placement = tasks
        .iter()
        .zip(&state.device_of)
        .map(|(t, &d)| (t.id.clone(), topo.device_at(d)))
        .collect();
    Ok(Assignment { placement })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LanguageCode, Side};
    use crate::sharing::{
        build_module_sequence, enumerate_modules, ArchSpec, LanguageGroups, SharingPattern,
        StackSpec,
    };

    fn lang(s: &str) -> LanguageCode {
        LanguageCode::new(s).unwrap()
    }

    fn tasks_for(arch: &ArchSpec, pairs: &[(&str, &str)]) -> Vec<TaskSpec> {
        pairs
            .iter()
            .map(|(s, t)| {
                let mut task = TaskSpec::new(lang(s), lang(t));
                build_module_sequence(arch, &task.src_lang, &task.tgt_lang, &LanguageGroups::new())
                    .unwrap()
                    .apply_to(&mut task);
                task
            })
            .collect()
    }

    fn independent() -> ArchSpec {
        ArchSpec::new(
            vec![StackSpec::new(SharingPattern::Language, 1)],
            vec![StackSpec::new(SharingPattern::Language, 1)],
        )
    }

    fn shared() -> ArchSpec {
        ArchSpec::new(
            vec![StackSpec::new(SharingPattern::Full, 1)],
            vec![StackSpec::new(SharingPattern::Full, 1)],
        )
    }

    #[test]
    fn single_task_costs_nothing() {
        let tasks = tasks_for(&shared(), &[("a", "b")]);
        let inv = enumerate_modules(&tasks, 100).unwrap();
        let a = initial_assignment(&tasks, &ClusterTopology::new(1, 1, 1), 0).unwrap();
        assert_eq!(
            comm_cost(&a, &tasks, &inv, CostWeights::default()).total,
            0.0
        );
    }

    #[test]
    fn independent_one_per_gpu_costs_nothing() {
        let tasks = tasks_for(
            &independent(),
            &[("a", "b"), ("c", "d"), ("e", "f"), ("g", "h")],
        );
        let inv = enumerate_modules(&tasks, 100).unwrap();
        let topo = ClusterTopology::new(2, 2, 1);
        let a = initial_assignment(&tasks, &topo, 3).unwrap();
        let cost = comm_cost(&a, &tasks, &inv, CostWeights::default());
        assert_eq!(cost.total, 0.0);
        assert!(cost.per_module.values().all(|&c| c == 0.0));
    }

    #[test]
    fn full_module_on_two_gpus_of_one_node() {
        let mut tasks = tasks_for(&shared(), &[("a", "b"), ("c", "d")]);
        // Make the decoder private so only the encoder FULL module is shared.
        tasks[1].dec_modules[0].group = "other".into();
        let inv = enumerate_modules(&tasks, 100).unwrap();
        let mut a = Assignment::default();
        a.placement.insert(tasks[0].id.clone(), DeviceId::new(0, 0));
        a.placement.insert(tasks[1].id.clone(), DeviceId::new(0, 1));
        let cost = comm_cost(&a, &tasks, &inv, CostWeights::default());
        assert_eq!(cost.total, 100.0);
        assert_eq!(
            cost.per_module[&ModuleKey::new(Side::Encoder, 0, "full")],
            100.0
        );
    }

    #[test]
    fn initial_assignment_balances() {
        let topo = ClusterTopology::new(1, 4, 1);
        let tasks = tasks_for(&shared(), &[("a", "b"), ("c", "d"), ("e", "f"), ("g", "h")]);
        let a = initial_assignment(&tasks, &topo, 0).unwrap();
        assert!(a.tasks_per_device().values().all(|v| v.len() == 1));
        assert_eq!(a.tasks_per_device().len(), 4);

        let pairs: Vec<(String, String)> =
            (0..8).map(|i| (format!("s{i}"), "t".to_string())).collect();
        let pairs: Vec<(&str, &str)> = pairs
            .iter()
            .map(|(a, b)| (a.as_str(), b.as_str()))
            .collect();
        let tasks = tasks_for(&shared(), &pairs);
        let a = initial_assignment(&tasks, &ClusterTopology::new(1, 4, 2), 0).unwrap();
        assert_eq!(a.tasks_per_device().len(), 4);
        assert!(a.tasks_per_device().values().all(|v| v.len() == 2));
    }

    #[test]
    fn initial_assignment_capacity_error() {
        let pairs = [("a", "b"), ("c", "d"), ("e", "f"), ("g", "h"), ("i", "j")];
        let tasks = tasks_for(&shared(), &pairs);
        assert_eq!(
            initial_assignment(&tasks, &ClusterTopology::new(1, 4, 1), 0),
            Err(AllocError::Capacity { tasks: 5, slots: 4 })
        );
    }

    #[test]
    fn initial_assignment_curriculum() {
        let mut tasks = tasks_for(&shared(), &[("a", "b"), ("c", "d"), ("e", "f"), ("g", "h")]);
        for t in &mut tasks[..3] {
            t.introduce_at_training_step = 100;
        }
        // One step-0 task cannot cover the two GPUs needed for four tasks.
        assert!(matches!(
            initial_assignment(&tasks, &ClusterTopology::new(1, 4, 2), 0),
            Err(AllocError::Curriculum { .. })
        ));
        tasks[1].introduce_at_training_step = 0;
        let topo = ClusterTopology::new(1, 4, 2);
        let a = initial_assignment(&tasks, &topo, 0).unwrap();
        a.check(&tasks, &topo).unwrap();
        assert_eq!(a.tasks_per_device().len(), 2);
    }

    #[test]
    fn search_keeps_optimal_assignment() {
        let tasks = tasks_for(&independent(), &[("a", "b"), ("c", "d")]);
        let inv = enumerate_modules(&tasks, 10).unwrap();
        let topo = ClusterTopology::new(1, 2, 1);
        let a0 = initial_assignment(&tasks, &topo, 0).unwrap();
        let a1 = local_search(
            &a0,
            &tasks,
            &inv,
            &topo,
            CostWeights::default(),
            DEFAULT_BUDGET,
            1,
        )
        .unwrap();
        assert_eq!(a0, a1);
    }

    #[test]
    fn search_pulls_shared_decoder_onto_one_node() {
        // Two tasks sharing decoder "en", on different nodes, with a free
        // slot next to each of them.
        let tasks = tasks_for(&independent(), &[("bg", "en"), ("de", "en")]);
        let inv = enumerate_modules(&tasks, 10).unwrap();
        let topo = ClusterTopology::new(2, 1, 2);
        let mut a0 = Assignment::default();
        a0.placement
            .insert(tasks[0].id.clone(), DeviceId::new(0, 0));
        a0.placement
            .insert(tasks[1].id.clone(), DeviceId::new(1, 0));
        let w = CostWeights::default();
        let before = comm_cost(&a0, &tasks, &inv, w).total;
        let a1 = local_search(&a0, &tasks, &inv, &topo, w, DEFAULT_BUDGET, 7).unwrap();
        let after = comm_cost(&a1, &tasks, &inv, w).total;
        assert_eq!(before, 40.0);
        assert_eq!(after, 0.0);
        let d0 = a1.device_of(&tasks[0].id).unwrap();
        let d1 = a1.device_of(&tasks[1].id).unwrap();
        assert_eq!(d0.node, d1.node);
    }

    #[test]
    fn check_reports_problems() {
        let mut tasks = tasks_for(&shared(), &[("a", "b"), ("c", "d")]);
        let topo = ClusterTopology::new(1, 1, 1);
        let mut a = Assignment::default();
        a.placement.insert(tasks[0].id.clone(), DeviceId::new(0, 0));
        assert!(matches!(
            a.check(&tasks, &topo),
            Err(AllocError::Unplaced(_))
        ));
        a.placement.insert(tasks[1].id.clone(), DeviceId::new(0, 0));
        assert!(matches!(
            a.check(&tasks, &topo),
            Err(AllocError::OverCapacity { .. })
        ));
        let topo = ClusterTopology::new(1, 1, 2);
        tasks[0].introduce_at_training_step = 5;
        tasks[1].introduce_at_training_step = 5;
        assert!(matches!(
            a.check(&tasks, &topo),
            Err(AllocError::IdleDevice { .. })
        ));
    }
}
