//! Evaluation-only access to hidden task labels.
//!
//! Learners never import this module. The harness and the metrics code use
//! it to attribute errors and buffer contents to tasks.

use std::collections::BTreeMap;

use crate::model::Sample;

pub fn task_of(sample: &Sample) -> u32 {
    sample.task_id
}

/// Returns a copy of `sample` carrying a different hidden label.
pub fn relabel(sample: &Sample, task_id: u32) -> Sample {
    let mut s = sample.clone();
    s.task_id = task_id;
    s
}

/// Count of samples per hidden task id.
pub fn count_tasks<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> BTreeMap<u32, usize> {
    let mut out = BTreeMap::new();
    for s in samples {
        *out.entry(s.task_id).or_insert(0) += 1;
    }
    out
}
