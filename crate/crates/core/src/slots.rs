use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open range of class slots `start..end` in the union label space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotRange {
    pub start: usize,
    pub end: usize,
}

impl SlotRange {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::invalid(format!("empty slot range {start}..{end}")));
        }
        Ok(Self { start, end })
    }

    pub fn width(&self) -> usize {
        self.end - self.start
    }

    pub fn contains(&self, slot: usize) -> bool {
        (self.start..self.end).contains(&slot)
    }

    pub fn overlaps(&self, other: &SlotRange) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Checks that `ranges` are pairwise disjoint and, when `total` is given,
/// exactly cover `0..total`.
pub fn check_partition(ranges: &[SlotRange], total: Option<usize>) -> Result<()> {
    for (i, a) in ranges.iter().enumerate() {
        if a.start >= a.end {
            return Err(Error::invalid(format!("empty slot range {}..{}", a.start, a.end)));
        }
        for b in &ranges[i + 1..] {
            if a.overlaps(b) {
                return Err(Error::invalid(format!(
                    "slot ranges {}..{} and {}..{} overlap",
                    a.start, a.end, b.start, b.end
                )));
            }
        }
    }
    if let Some(total) = total {
        let covered: usize = ranges.iter().map(SlotRange::width).sum();
        let max_end = ranges.iter().map(|r| r.end).max().unwrap_or(0);
        if covered != total || max_end != total {
            return Err(Error::invalid(format!(
                "slot ranges cover {covered} of {total} union classes"
            )));
        }
    }
    Ok(())
}

/// Union width implied by a disjoint set of ranges.
pub fn union_width(ranges: &[SlotRange]) -> usize {
    ranges.iter().map(|r| r.end).max().unwrap_or(0)
}
