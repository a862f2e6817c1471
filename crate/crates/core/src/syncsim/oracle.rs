//! Single-process reference for the synchronized gradients.

use std::collections::BTreeMap;

use super::toy::{forward, local_backward, Matrix, ToyModel};
use super::SimError;
use crate::model::{DeviceId, ModuleKey};
use crate::scalar::Scalar;

/// One datapoint processed on one device.
#[derive(Debug, Clone, PartialEq)]
pub struct Event<T> {
    pub device: DeviceId,
    pub chain: Vec<ModuleKey>,
    pub x: Vec<T>,
    pub y: Vec<T>,
}

/// Per module: the sum over devices (ascending) of each device's summed
/// gradient, divided by the number of devices that used the module. Every
/// module of `model` appears; unused ones are zero.
pub fn oracle_reference<T: Scalar>(
    model: &ToyModel<T>,
    events: &[Event<T>],
) -> Result<BTreeMap<ModuleKey, Matrix<T>>, SimError> {
    let mut per_device: BTreeMap<DeviceId, BTreeMap<ModuleKey, Matrix<T>>> = BTreeMap::new();
    for e in events {
        let trace = forward(model, &e.chain, &e.x)?;
        let sums = per_device.entry(e.device).or_default();
        for (key, g) in local_backward(model, &e.chain, &trace, &e.y)? {
            sums.entry(key)
                .or_insert_with(|| Matrix::zeros(model.dim()))
                .add_assign(&g);
        }
    }
    let mut out = BTreeMap::new();
    for key in model.modules() {
        let mut total = Matrix::zeros(model.dim());
        let mut users = 0usize;
        for sums in per_device.values() {
            if let Some(g) = sums.get(key) {
                total.add_assign(g);
                users += 1;
            }
        }
        if users > 0 {
            total.div_scalar(T::from_usize(users).expect("count fits"));
        }
        out.insert(key.clone(), total);
    }
    Ok(out)
}
