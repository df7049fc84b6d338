use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::stats::{WinMatrix, ALPHA};
use crate::tasks::{Annotation, EvalTask};

fn task_index(tasks: &[EvalTask]) -> BTreeMap<&str, &EvalTask> {
    tasks.iter().map(|t| (t.id.as_str(), t)).collect()
}

/// Annotators with more than `max_failures` control tasks on which they
/// picked the repetitive side. `max_failures = 0` excludes on any failure.
pub fn gate_annotators(tasks: &[EvalTask], annotations: &[Annotation], max_failures: usize) -> BTreeSet<String> {
    let index = task_index(tasks);
    let mut failures: BTreeMap<&str, usize> = BTreeMap::new();
    for a in annotations {
        let Some(rep) = index.get(a.task_id.as_str()).and_then(|t| t.repetitive_side()) else {
            continue;
        };
        let n = failures.entry(&a.annotator_id).or_default();
        if a.choice == rep {
            *n += 1;
        }
    }
    failures
        .into_iter()
        .filter(|&(_, n)| n > max_failures)
        .map(|(a, _)| a.to_string())
        .collect()
}

/// Systems sorted by name; control tasks and unknown task ids are ignored.
pub fn win_matrix(annotations: &[Annotation], tasks: &[EvalTask]) -> WinMatrix {
    let index = task_index(tasks);
    let systems: Vec<String> = tasks
        .iter()
        .filter(|t| !t.is_control)
        .flat_map(|t| [t.left_system.clone(), t.right_system.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let outcomes = annotations.iter().filter_map(|a| {
        let t = index.get(a.task_id.as_str()).filter(|t| !t.is_control)?;
        Some((t.system(a.choice), t.system(a.choice.other())))
    });
    WinMatrix::from_outcomes(&systems, outcomes, ALPHA)
}

/// A results snapshot: the matrix over retained annotators' comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    #[serde(flatten)]
    pub matrix: WinMatrix,
    pub excluded_annotators: Vec<String>,
    pub retained_annotators: Vec<String>,
    pub n_annotations_used: usize,
}

pub fn analyze(tasks: &[EvalTask], annotations: &[Annotation], max_failures: usize) -> Analysis {
    let excluded = gate_annotators(tasks, annotations, max_failures);
    let kept: Vec<Annotation> = annotations
        .iter()
        .filter(|a| !excluded.contains(&a.annotator_id))
        .cloned()
        .collect();
    let index = task_index(tasks);
    let n_used = kept
        .iter()
        .filter(|a| index.get(a.task_id.as_str()).is_some_and(|t| !t.is_control))
        .count();
    let retained: BTreeSet<String> = kept.iter().map(|a| a.annotator_id.clone()).collect();
    Analysis {
        matrix: win_matrix(&kept, tasks),
        excluded_annotators: excluded.into_iter().collect(),
        retained_annotators: retained.into_iter().collect(),
        n_annotations_used: n_used,
    }
}
