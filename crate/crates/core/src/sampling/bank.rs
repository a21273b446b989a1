//! Fixed-capacity FIFO of detached past representations.

/// Snapshot of one sample's representations. Plain vectors, so it can
/// never carry gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBankEntry {
    pub z: Vec<f64>,
    pub embed: Vec<f64>,
    pub label: u8,
    pub scenario: usize,
    pub cluster: usize,
}

#[derive(Clone, Debug)]
pub struct MemoryBank {
    capacity: usize,
    slots: Vec<MemoryBankEntry>,
    cursor: usize,
}

impl MemoryBank {
    /// A capacity of zero makes every push a no-op.
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            slots: Vec::with_capacity(capacity),
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, entry: MemoryBankEntry) {
        if self.capacity == 0 {
            return;
        }
        if self.slots.len() < self.capacity {
            self.slots.push(entry);
        } else {
            self.slots[self.cursor] = entry;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &MemoryBankEntry> {
        let split = if self.slots.len() < self.capacity {
            0
        } else {
            self.cursor
        };
        self.slots[split..].iter().chain(&self.slots[..split])
    }

    /// Storage order; stable between pushes. Used for cluster refreshes.
    pub fn slots(&self) -> &[MemoryBankEntry] {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut [MemoryBankEntry] {
        &mut self.slots
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(tag: usize) -> MemoryBankEntry {
        MemoryBankEntry {
            z: vec![tag as f64],
            embed: vec![],
            label: 0,
            scenario: tag,
            cluster: 0,
        }
    }

    fn tags(bank: &MemoryBank) -> Vec<usize> {
        bank.iter().map(|e| e.scenario).collect()
    }

    #[test]
    fn evicts_oldest() {
        let mut bank = MemoryBank::new(2);
        for t in [1, 2, 3] {
            bank.push(entry(t));
        }
        assert_eq!(tags(&bank), vec![2, 3]);
    }

    #[test]
    fn capacity_one_keeps_last() {
        let mut bank = MemoryBank::new(1);
        for t in 0..5 {
            bank.push(entry(t));
            assert_eq!(tags(&bank), vec![t]);
        }
    }

    #[test]
    fn zero_capacity_stays_empty() {
        let mut bank = MemoryBank::new(0);
        bank.push(entry(1));
        assert!(bank.is_empty());
    }
}
