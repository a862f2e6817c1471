use rand::Rng;

/// Single-pass uniform sample of fixed capacity (Algorithm R).
#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir<T> {
    capacity: usize,
    seen: u64,
    items: Vec<T>,
}

impl<T> Reservoir<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "reservoir capacity must be at least 1");
        Self {
            capacity,
            seen: 0,
            items: Vec::with_capacity(capacity),
        }
    }

    pub fn offer<R: Rng + ?Sized>(&mut self, item: T, rng: &mut R) {
        self.seen += 1;
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            let j = rng.random_range(0..self.seen);
            if let Some(slot) = self.items.get_mut(j as usize) {
                *slot = item;
            }
        }
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn into_items(self) -> Vec<T> {
        self.items
    }
}

pub fn reservoir_batch<T, R: Rng + ?Sized>(
    stream: impl IntoIterator<Item = T>,
    capacity: usize,
    rng: &mut R,
) -> Vec<T> {
    let mut r = Reservoir::new(capacity);
    for item in stream {
        r.offer(item, rng);
    }
    r.into_items()
}
