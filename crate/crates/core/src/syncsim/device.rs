//! Per-device gradient buffers and the ready-count/allreduce exchange.

use std::collections::{BTreeMap, BTreeSet};

use super::toy::{forward, local_backward, Matrix, ToyModel};
use super::SimError;
use crate::model::{DeviceId, ModuleKey};
use crate::scalar::Scalar;

/// One simulated GPU: the modules it hosts, a gradient buffer for each, and
/// which of them were used since the last synchronization.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceState<T> {
    pub device: DeviceId,
    buffers: BTreeMap<ModuleKey, Matrix<T>>,
    used: BTreeSet<ModuleKey>,
}

impl<T: Scalar> DeviceState<T> {
    pub fn new<'a>(
        device: DeviceId,
        hosted: impl IntoIterator<Item = &'a ModuleKey>,
        dim: usize,
    ) -> Self {
        Self {
            device,
            buffers: hosted
                .into_iter()
                .map(|k| (k.clone(), Matrix::zeros(dim)))
                .collect(),
            used: BTreeSet::new(),
        }
    }

    pub fn hosted(&self) -> impl Iterator<Item = &ModuleKey> {
        self.buffers.keys()
    }

    pub fn hosts(&self, key: &ModuleKey) -> bool {
        self.buffers.contains_key(key)
    }

    pub fn buffer(&self, key: &ModuleKey) -> Option<&Matrix<T>> {
        self.buffers.get(key)
    }

    /// Ready indicator per hosted module, in key order.
    pub fn ready(&self) -> Vec<(&ModuleKey, bool)> {
        self.buffers
            .keys()
            .map(|k| (k, self.used.contains(k)))
            .collect()
    }

    pub fn is_used(&self, key: &ModuleKey) -> bool {
        self.used.contains(key)
    }

    /// Adds a (negated) gradient into a hosted module's buffer and marks it
    /// used.
    pub fn add_gradient(&mut self, key: &ModuleKey, grad: &Matrix<T>) -> Result<(), SimError> {
        let buf = self
            .buffers
            .get_mut(key)
            .ok_or_else(|| SimError::ModuleNotHosted {
                device: self.device,
                module: key.clone(),
            })?;
        if buf.dim() != grad.dim() {
            return Err(SimError::DimensionMismatch {
                expected: buf.dim(),
                got: grad.dim(),
            });
        }
        buf.add_assign(grad);
        self.used.insert(key.clone());
        Ok(())
    }

    /// Forward and backward pass of one datapoint of a task whose modules
    /// are `chain`; returns the loss. Hosted modules outside the chain get
    /// a zero contribution.
    pub fn accumulate(
        &mut self,
        model: &ToyModel<T>,
        chain: &[ModuleKey],
        x: &[T],
        y: &[T],
    ) -> Result<T, SimError> {
        if let Some(k) = chain.iter().find(|k| !self.hosts(k)) {
            return Err(SimError::ModuleNotHosted {
                device: self.device,
                module: k.clone(),
            });
        }
        let trace = forward(model, chain, x)?;
        for (key, grad) in local_backward(model, chain, &trace, y)? {
            self.add_gradient(&key, &grad)?;
        }
        Ok(trace.loss(y))
    }

    pub fn reset(&mut self) {
        for b in self.buffers.values_mut() {
            b.scale(T::zero());
        }
        self.used.clear();
    }
}

/// How one module was synchronized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleSync {
    /// Hosting devices in ascending order.
    pub group: Vec<DeviceId>,
    /// Number of hosting devices that used the module.
    pub n_used: usize,
}

impl ModuleSync {
    /// Groups of one exchange nothing.
    pub fn exchanges_ready(&self) -> bool {
        self.group.len() > 1
    }

    pub fn allreduces_gradient(&self) -> bool {
        self.group.len() > 1 && self.n_used > 0
    }

    pub fn spans_nodes(&self) -> bool {
        self.group.windows(2).any(|w| w[0].node != w[1].node)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncOutcome<T> {
    pub gradients: BTreeMap<ModuleKey, Matrix<T>>,
    pub modules: BTreeMap<ModuleKey, ModuleSync>,
}

/// Synchronizes every hosted module over the devices hosting it: the
/// ready indicators are summed into `n`, buffers are summed in ascending
/// device order and divided by `n`, and the result is written back to every
/// hosting device. Modules nobody used stay zero.
pub fn sync_step<T: Scalar>(devices: &mut [DeviceState<T>]) -> Result<SyncOutcome<T>, SimError> {
    let mut order: Vec<usize> = (0..devices.len()).collect();
    order.sort_by_key(|&i| devices[i].device);
    if let Some(w) = order
        .windows(2)
        .find(|w| devices[w[0]].device == devices[w[1]].device)
    {
        return Err(SimError::DuplicateDevice(devices[w[0]].device));
    }

    let mut groups: BTreeMap<ModuleKey, Vec<usize>> = BTreeMap::new();
    for &i in &order {
        for key in devices[i].hosted() {
            groups.entry(key.clone()).or_default().push(i);
        }
    }

    let mut gradients = BTreeMap::new();
    let mut modules = BTreeMap::new();
    for (key, members) in groups {
        let dim = devices[members[0]].buffers[&key].dim();
        if members
            .iter()
            .any(|&i| devices[i].buffers[&key].dim() != dim)
        {
            return Err(SimError::InconsistentModule(key));
        }
        let n_used = members
            .iter()
            .filter(|&&i| devices[i].is_used(&key))
            .count();
        let mut total = Matrix::zeros(dim);
        if n_used > 0 {
            for &i in &members {
                total.add_assign(&devices[i].buffers[&key]);
            }
            total.div_scalar(T::from_usize(n_used).expect("device count fits any float"));
        }
        for &i in &members {
            devices[i].buffers.insert(key.clone(), total.clone());
        }
        modules.insert(
            key.clone(),
            ModuleSync {
                group: members.iter().map(|&i| devices[i].device).collect(),
                n_used,
            },
        );
        gradients.insert(key, total);
    }
    Ok(SyncOutcome { gradients, modules })
}
