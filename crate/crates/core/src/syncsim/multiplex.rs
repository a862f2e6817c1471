use rand::Rng;

use super::SimError;
use crate::model::{DeviceId, TaskId, TaskSpec};

/// Weighted choice among the tasks of one device, excluding tasks whose
/// curriculum start lies in the future.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Multiplexer {
    device: DeviceId,
    entries: Vec<(TaskId, u32, u64)>,
}

impl Multiplexer {
    pub fn new(device: DeviceId, entries: Vec<(TaskId, u32, u64)>) -> Self {
        let mut entries = entries;
        entries.sort();
        Self { device, entries }
    }

    pub fn from_tasks<'a>(device: DeviceId, tasks: impl IntoIterator<Item = &'a TaskSpec>) -> Self {
        Self::new(
            device,
            tasks
                .into_iter()
                .map(|t| (t.id.clone(), t.weight, t.introduce_at_training_step))
                .collect(),
        )
    }

    pub fn device(&self) -> DeviceId {
        self.device
    }

    pub fn active(&self, step: u64) -> impl Iterator<Item = &(TaskId, u32, u64)> {
        self.entries.iter().filter(move |e| e.2 <= step && e.1 > 0)
    }

    pub fn choose<R: Rng + ?Sized>(&self, step: u64, rng: &mut R) -> Result<&TaskId, SimError> {
        let total: u64 = self.active(step).map(|e| u64::from(e.1)).sum();
        if total == 0 {
            return Err(SimError::NoActiveTask {
                device: self.device,
                step,
            });
        }
        let mut r = rng.random_range(0..total);
        for (id, w, _) in self.active(step) {
            let w = u64::from(*w);
            if r < w {
                return Ok(id);
            }
            r -= w;
        }
        unreachable!("draw is below the total weight")
    }
}
