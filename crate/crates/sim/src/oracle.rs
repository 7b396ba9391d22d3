//! Brute-force answers to the study tasks, computed straight from the cube.

use holoproxy_core::{Axis, CellId, DataCube};

/// Task kinds from the study: find extremes, sort, compare three marks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TaskKind {
    Range,
    Order,
    Compare,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Range => "range",
            TaskKind::Order => "order",
            TaskKind::Compare => "compare",
        }
    }
}

/// `(argmin, argmax)` over the slice; ties go to the lowest free-axis index.
/// `None` when `index` is out of bounds.
pub fn oracle_range(cube: &DataCube, axis: Axis, index: usize) -> Option<(CellId, CellId)> {
    if index >= cube.axis_len(axis) {
        return None;
    }
    let slice = cube.slice(axis, index);
    let (mut lo, mut hi) = (slice[0], slice[0]);
    for &c in &slice[1..] {
        if cube.value(c) < cube.value(lo) {
            lo = c;
        }
        if cube.value(c) > cube.value(hi) {
            hi = c;
        }
    }
    Some((lo, hi))
}

/// The slice in ascending value order; equal values keep free-axis order.
pub fn oracle_order(cube: &DataCube, axis: Axis, index: usize) -> Option<Vec<CellId>> {
    if index >= cube.axis_len(axis) {
        return None;
    }
    let mut slice = cube.slice(axis, index);
    slice.sort_by(|a, b| cube.value(*a).total_cmp(&cube.value(*b)));
    Some(slice)
}

/// The lowest-valued of three distinct cells; ties go to the lowest `(location, year)`.
pub fn oracle_compare(cube: &DataCube, cells: [CellId; 3]) -> Option<CellId> {
    let distinct = cells[0] != cells[1] && cells[1] != cells[2] && cells[0] != cells[2];
    if !distinct || !cells.iter().all(|&c| cube.contains(c)) {
        return None;
    }
    cells.into_iter().min_by(|a, b| cube.value(*a).total_cmp(&cube.value(*b)).then(a.cmp(b)))
}
