//! Step-by-step simulation of a configuration with communication
//! accounting, and the synthetic scaling benchmark.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cost::{allreduce_time, CostModel, BYTES_PER_PARAM};
use super::device::{sync_step, DeviceState};
use super::multiplex::Multiplexer;
use super::oracle::{oracle_reference, Event};
use super::reservoir::reservoir_batch;
use super::toy::ToyModel;
use super::SimError;
use crate::configgen::{assign_transforms, FullConfig, NoiseKind};
use crate::model::{ClusterTopology, DeviceId, LanguageCode, ModuleKey, TaskId, TaskSpec};
use crate::scalar::Scalar;
use crate::sharing::{build_module_sequence, ArchSpec, LanguageGroups, SharingPattern, StackSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub steps: u64,
    pub seed: u64,
    /// Accumulation micro-steps between synchronizations.
    pub accum_count: usize,
    /// Side length of the toy module matrices.
    pub dim: usize,
    pub learning_rate: f64,
    /// Toy datapoints per micro-step, drawn by reservoir sampling.
    pub batch: usize,
    /// Length of the synthetic stream each batch is sampled from.
    pub window: usize,
    pub cost: CostModel,
    /// Compare every synchronization against the single-process oracle.
    pub verify_oracle: bool,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            steps: 10,
            seed: 0,
            accum_count: 1,
            dim: 4,
            learning_rate: 0.01,
            batch: 2,
            window: 8,
            cost: CostModel::default(),
            verify_oracle: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub tokens: u64,
    pub ready_bytes: u64,
    pub grad_bytes: u64,
    pub compute_seconds: f64,
    pub comm_seconds: f64,
    pub total_seconds: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleRecord {
    pub step: u64,
    pub module: String,
    pub group_size: usize,
    pub spans_nodes: bool,
    pub n_used: usize,
    pub grad_bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommLedger {
    pub steps: Vec<StepRecord>,
    pub modules: Vec<ModuleRecord>,
}

impl CommLedger {
    pub fn grad_bytes(&self) -> u64 {
        self.steps.iter().map(|s| s.grad_bytes).sum()
    }

    pub fn ready_bytes(&self) -> u64 {
        self.steps.iter().map(|s| s.ready_bytes).sum()
    }

    pub fn write_steps<W: io::Write>(&self, w: W) -> csv::Result<()> {
        write_tsv(w, &self.steps)
    }

    pub fn write_modules<W: io::Write>(&self, w: W) -> csv::Result<()> {
        write_tsv(w, &self.modules)
    }
}

fn write_tsv<W: io::Write, R: Serialize>(w: W, rows: &[R]) -> csv::Result<()> {
    let mut out = csv::WriterBuilder::new().delimiter(b'\t').from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub steps: u64,
    pub devices: usize,
    pub tokens: u64,
    pub compute_seconds: f64,
    pub comm_seconds: f64,
    pub total_seconds: f64,
    pub tokens_per_second: Option<f64>,
    pub comm_fraction: Option<f64>,
    pub grad_allreduce_bytes: u64,
    pub ready_bytes: u64,
    pub max_oracle_rel_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub ledger: CommLedger,
    pub summary: Summary,
}

impl BenchReport {
    /// Writes `ledger.tsv`, `modules.tsv` and `summary.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        self.ledger
            .write_steps(fs::File::create(dir.join("ledger.tsv"))?)
            .map_err(io::Error::other)?;
        self.ledger
            .write_modules(fs::File::create(dir.join("modules.tsv"))?)
            .map_err(io::Error::other)?;
        let json = serde_json::to_string_pretty(&self.summary).map_err(io::Error::other)?;
        fs::write(dir.join("summary.json"), json + "\n")
    }
}

struct Placed<'a> {
    device: DeviceId,
    mux: Multiplexer,
    tasks: BTreeMap<&'a TaskId, &'a TaskSpec>,
}

fn placements(cfg: &FullConfig) -> Result<Vec<Placed<'_>>, SimError> {
    let mut by_device: BTreeMap<DeviceId, Vec<&TaskSpec>> = BTreeMap::new();
    for t in cfg.tasks.values() {
        let d = t.device.ok_or_else(|| SimError::Unplaced(t.id.clone()))?;
        by_device.entry(d).or_default().push(t);
    }
    Ok(by_device
        .into_iter()
        .map(|(device, ts)| Placed {
            device,
            mux: Multiplexer::from_tasks(device, ts.iter().copied()),
            tasks: ts.into_iter().map(|t| (&t.id, t)).collect(),
        })
        .collect())
}

/// Simulates `settings.steps` synchronized optimizer steps of `cfg` on the
/// toy model and accounts for their modeled compute and communication.
pub fn run_benchmark<T: Scalar>(
    cfg: &FullConfig,
    settings: &SimSettings,
) -> Result<BenchReport, SimError> {
    let violations = cfg.validate();
    if let Some(v) = violations.first() {
        return Err(SimError::InvalidConfig(v.to_string()));
    }
    if settings.accum_count == 0 || settings.batch == 0 || settings.window == 0 {
        return Err(SimError::InvalidConfig(
            "accum_count, batch and window must be positive".into(),
        ));
    }
    let inventory = cfg
        .modules()
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let topo = &cfg.topology;
    let placed = placements(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut model = ToyModel::<T>::random(inventory.keys(), settings.dim, rng.random())?;
    let mut devices: Vec<DeviceState<T>> = placed
        .iter()
        .map(|p| {
            let hosted: Vec<&ModuleKey> = p.tasks.values().flat_map(|t| t.modules()).collect();
            DeviceState::new(p.device, hosted, settings.dim)
        })
        .collect();

    let mut ledger = CommLedger::default();
    let mut max_err: Option<f64> = None;
    let lr = T::of(settings.learning_rate);

    for step in 0..settings.steps {
        let mut events: Vec<Event<T>> = Vec::new();
        let mut compute = 0.0f64;
        let mut loss_sum = 0.0f64;
        let mut points = 0usize;
        for (p, dev) in placed.iter().zip(devices.iter_mut()) {
            dev.reset();
            let mut device_compute = 0.0;
            for _ in 0..settings.accum_count {
                let task = p.tasks[p.mux.choose(step, &mut rng)?];
                let chain: Vec<ModuleKey> = task.modules().cloned().collect();
                let layers: usize = task.enc_layers.iter().chain(&task.dec_layers).sum();
                device_compute += settings.cost.compute_time(layers);
                let stream = (0..settings.window)
                    .map(|_| {
                        (0..settings.dim)
                            .map(|_| T::of(rng.random_range(-1.0..1.0)))
                            .collect::<Vec<T>>()
                    })
                    .collect::<Vec<_>>();
                for x in reservoir_batch(stream, settings.batch, &mut rng) {
                    let y = model.target().to_vec();
                    loss_sum += dev.accumulate(&model, &chain, &x, &y)?.as_f64();
                    points += 1;
                    if settings.verify_oracle {
                        events.push(Event {
                            device: p.device,
                            chain: chain.clone(),
                            x,
                            y,
                        });
                    }
                }
            }
            compute = compute.max(device_compute);
        }

        let outcome = sync_step(&mut devices)?;
        if settings.verify_oracle {
            let reference = oracle_reference(&model, &events)?;
            for (key, g) in &outcome.gradients {
                let err = g.relative_diff(&reference[key]).as_f64();
                max_err = Some(max_err.map_or(err, |m| m.max(err)));
            }
        }

        // One ready exchange and at most one gradient allreduce per
        // distinct communication group.
        let mut buckets: BTreeMap<&[DeviceId], (u64, u64, bool)> = BTreeMap::new();
        for (key, sync) in &outcome.modules {
            let grad_bytes = if sync.allreduces_gradient() {
                inventory.params(key) * BYTES_PER_PARAM
            } else {
                0
            };
            if sync.exchanges_ready() {
                let b = buckets
                    .entry(sync.group.as_slice())
                    .or_insert((0, 0, sync.spans_nodes()));
                b.0 += BYTES_PER_PARAM;
                b.1 += grad_bytes;
            }
            ledger.modules.push(ModuleRecord {
                step,
                module: key.to_string(),
                group_size: sync.group.len(),
                spans_nodes: sync.spans_nodes(),
                n_used: sync.n_used,
                grad_bytes,
            });
        }
        let mut comm = 0.0;
        let (mut ready_bytes, mut grad_bytes) = (0, 0);
        for (group, (ready, grad, spans)) in &buckets {
            comm += allreduce_time(topo, group.len(), *spans, *ready);
            if *grad > 0 {
                comm += allreduce_time(topo, group.len(), *spans, *grad);
            }
            ready_bytes += ready;
            grad_bytes += grad;
        }

        for (key, g) in &outcome.gradients {
            if let Some(w) = model.get_mut(key) {
                w.add_scaled(lr, g);
            }
        }

        let tokens = settings.cost.batch_tokens * settings.accum_count as u64 * placed.len() as u64;
        ledger.steps.push(StepRecord {
            step,
            tokens,
            ready_bytes,
            grad_bytes,
            compute_seconds: compute,
            comm_seconds: comm,
            total_seconds: compute + comm,
            loss: if points == 0 {
                0.0
            } else {
                loss_sum / points as f64
            },
        });
    }

    let tokens: u64 = ledger.steps.iter().map(|s| s.tokens).sum();
    let compute_seconds: f64 = ledger.steps.iter().map(|s| s.compute_seconds).sum();
    let comm_seconds: f64 = ledger.steps.iter().map(|s| s.comm_seconds).sum();
    let total_seconds = compute_seconds + comm_seconds;
    let positive = |v: f64| (total_seconds > 0.0).then_some(v / total_seconds);
    let summary = Summary {
        steps: settings.steps,
        devices: placed.len(),
        tokens,
        compute_seconds,
        comm_seconds,
        total_seconds,
        tokens_per_second: positive(tokens as f64),
        comm_fraction: positive(comm_seconds),
        grad_allreduce_bytes: ledger.grad_bytes(),
        ready_bytes: ledger.ready_bytes(),
        max_oracle_rel_err: max_err,
    };
    Ok(BenchReport { ledger, summary })
}

/// Preset architectures for the scaling benchmark.
pub const PRESETS: [&str; 4] = ["independent", "partial", "shared", "full"];

pub fn preset_arch(name: &str) -> Option<ArchSpec> {
    use SharingPattern::{Full, Language};
    let s = StackSpec::new;
    let (enc, dec) = match name {
        "independent" => (vec![s(Language, 6)], vec![s(Language, 6)]),
        "partial" => (vec![s(Language, 4), s(Full, 4)], vec![s(Language, 4)]),
        "shared" => (vec![s(Full, 6)], vec![s(Language, 6)]),
        "full" => (vec![s(Full, 9)], vec![s(Full, 4)]),
        _ => return None,
    };
    Some(ArchSpec::new(enc, dec))
}

pub const GPUS_PER_NODE: usize = 4;

/// `k` uniform tasks `srcI → tgtI`, one per GPU, packed onto nodes of
/// four GPUs.
pub fn synthetic_config(arch: &ArchSpec, k: usize) -> Result<FullConfig, SimError> {
    if k == 0 {
        return Err(SimError::InvalidConfig("k must be positive".into()));
    }
    let n_nodes = k.div_ceil(GPUS_PER_NODE);
    let topology = ClusterTopology::new(n_nodes, k.min(GPUS_PER_NODE), 1);
    let mut tasks = BTreeMap::new();
    for i in 0..k {
        let lang = |p: &str| LanguageCode::new(format!("{p}{i}")).expect("valid code");
        let mut t = TaskSpec::new(lang("src"), lang("tgt"));
        build_module_sequence(arch, &t.src_lang, &t.tgt_lang, &LanguageGroups::new())
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?
            .apply_to(&mut t);
        t.src_path = format!("synthetic/{}.src", t.id);
        t.tgt_path = format!("synthetic/{}.tgt", t.id);
        t.transforms = assign_transforms(&t, arch, NoiseKind::default());
        t.device = Some(DeviceId::new(i / GPUS_PER_NODE, i % GPUS_PER_NODE));
        tasks.insert(t.id.clone(), t);
    }
    Ok(FullConfig {
        tasks,
        enc_layers: arch.enc_layers(),
        dec_layers: arch.dec_layers(),
        topology,
        params_per_layer: crate::sharing::DEFAULT_PARAMS_PER_LAYER,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub k: usize,
    pub tokens_per_second: f64,
    pub efficiency: f64,
    pub comm_fraction: f64,
}

/// Throughput for each `k` relative to `k` times the single-GPU run.
pub fn scaling_sweep(
    arch: &ArchSpec,
    ks: &[usize],
    settings: &SimSettings,
) -> Result<Vec<ScalingPoint>, SimError> {
    let tps = |k: usize| -> Result<(f64, f64), SimError> {
        let r = run_benchmark::<f64>(&synthetic_config(arch, k)?, settings)?;
        match (r.summary.tokens_per_second, r.summary.comm_fraction) {
            (Some(t), Some(c)) => Ok((t, c)),
            _ => Err(SimError::InvalidConfig(
                "scaling needs at least one step".into(),
            )),
        }
    };
    let (base, _) = tps(1)?;
    ks.iter()
        .map(|&k| {
            let (t, c) = tps(k)?;
            Ok(ScalingPoint {
                k,
                tokens_per_second: t,
                efficiency: t / (k as f64 * base),
                comm_fraction: c,
            })
        })
        .collect()
}
