use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, Dataset};
use crate::error::{Error, Result};
use crate::slots::SlotRange;

/// The classes one teacher specialises in and where they sit in the union.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub teacher_id: usize,
    /// Dataset class ids, in slot order.
    pub classes: Vec<usize>,
    pub slots: SlotRange,
}

/// Disjoint tasks covering every class; union slots are laid out task by task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPartition {
    pub tasks: Vec<TaskSpec>,
    /// `class_to_slot[c]` is the union slot of dataset class `c`.
    pub class_to_slot: Vec<usize>,
}

impl TaskPartition {
    pub fn from_tasks(tasks: Vec<TaskSpec>, num_classes: usize) -> Result<Self> {
        let ranges: Vec<SlotRange> = tasks.iter().map(|t| t.slots).collect();
        crate::slots::check_partition(&ranges, Some(num_classes))?;
        let mut class_to_slot = vec![usize::MAX; num_classes];
        for t in &tasks {
            if t.classes.len() != t.slots.width() {
                return Err(Error::invalid(format!(
                    "task {} has {} classes but {} slots",
                    t.teacher_id,
                    t.classes.len(),
                    t.slots.width()
                )));
            }
            for (k, &c) in t.classes.iter().enumerate() {
                if c >= num_classes || class_to_slot[c] != usize::MAX {
                    return Err(Error::invalid(format!("class {c} is out of range or assigned twice")));
                }
                class_to_slot[c] = t.slots.start + k;
            }
        }
        Ok(Self { tasks, class_to_slot })
    }

    pub fn num_classes(&self) -> usize {
        self.class_to_slot.len()
    }

    pub fn slot_ranges(&self) -> Vec<SlotRange> {
        self.tasks.iter().map(|t| t.slots).collect()
    }

    /// Dataset labels translated to union slots.
    pub fn slot_labels(&self, labels: &[usize]) -> Vec<usize> {
        labels.iter().map(|&l| self.class_to_slot[l]).collect()
    }

    /// `data` with every label replaced by its union slot.
    pub fn to_slot_space(&self, data: &Dataset) -> Result<Dataset> {
        if data.num_classes != self.num_classes() {
            return Err(Error::invalid(format!(
                "dataset has {} classes, partition covers {}",
                data.num_classes,
                self.num_classes()
            )));
        }
        Dataset::new(data.samples.clone(), self.slot_labels(&data.labels), data.num_classes, data.split)
    }

    /// The rows of `data` belonging to task `t`, labelled by local slot.
    pub fn task_subset(&self, data: &Dataset, t: usize) -> Result<Dataset> {
        let task = self
            .tasks
            .get(t)
            .ok_or_else(|| Error::invalid(format!("no task {t} (have {})", self.tasks.len())))?;
        data.restrict(&task.classes)
    }
}

/// Shuffles the class ids with `seed` and deals them into equal tasks.
pub fn split_tasks(num_classes: usize, teacher_count: usize, seed: u64) -> Result<TaskPartition> {
    if teacher_count == 0 || num_classes == 0 || !num_classes.is_multiple_of(teacher_count) {
        return Err(Error::invalid(format!(
            "{num_classes} classes cannot be split evenly across {teacher_count} teachers"
        )));
    }
    let per = num_classes / teacher_count;
    let mut classes: Vec<usize> = (0..num_classes).collect();
    classes.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3])));
    let tasks = classes
        .chunks(per)
        .enumerate()
        .map(|(t, chunk)| {
            let mut chunk = chunk.to_vec();
            chunk.sort_unstable();
            Ok(TaskSpec {
                teacher_id: t,
                classes: chunk,
                slots: SlotRange::new(t * per, (t + 1) * per)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TaskPartition::from_tasks(tasks, num_classes)
}
