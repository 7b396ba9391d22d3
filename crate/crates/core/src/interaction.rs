//! The proxy interaction techniques as pure state transitions.
//!
//! Discrete selection ([`hit_test_mark`] + [`toggle_select`]), axis selection
//! ([`axis_select`]), vibrotactile encoding ([`haptic_encode`]) and projection
//! ([`project_series`]) live here. Physical manipulation is pose math in [`crate::anchor`];
//! summarization is [`crate::model::summarize`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Axis, CellId, ChartLayout, DataCube};
use crate::scalar::Scalar;

pub const HAPTIC_FLOOR: f64 = 0.1;
pub const HAPTIC_PULSE_MS: u32 = 150;
pub const HAPTIC_MAX_MS: u32 = 2000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InteractionError {
    #[error("cell {0} is out of bounds")]
    OutOfBoundsCell(CellId),
    #[error("{axis} index {index} is out of bounds (axis length {len})")]
    OutOfBoundsIndex { axis: Axis, index: usize, len: usize },
    #[error("value range is degenerate")]
    DegenerateRange,
    #[error("invalid haptic command: {0}")]
    InvalidHaptic(String),
    #[error("invalid screen configuration: {0}")]
    InvalidScreen(String),
}

/// Pixel rectangle `[x, x+width) × [y, y+height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl PixelRect {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Self { x, y, width, height }
    }

    fn right(&self) -> u64 {
        u64::from(self.x) + u64::from(self.width)
    }

    fn bottom(&self) -> u64 {
        u64::from(self.y) + u64::from(self.height)
    }

    pub fn contains<T: Scalar>(&self, px: T, py: T) -> bool {
        let (x0, y0) = (T::from_u32(self.x).unwrap(), T::from_u32(self.y).unwrap());
        let (x1, y1) = (T::from_u64(self.right()).unwrap(), T::from_u64(self.bottom()).unwrap());
        x0 <= px && px < x1 && y0 <= py && py < y1
    }

    pub fn intersects(&self, other: &PixelRect) -> bool {
        u64::from(self.x) < other.right()
            && u64::from(other.x) < self.right()
            && u64::from(self.y) < other.bottom()
            && u64::from(other.y) < self.bottom()
    }
}

/// Proxy screen split into the selection area under the hologram and the exploration area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenConfig {
    pub width_px: u32,
    pub height_px: u32,
    pub selection_area: PixelRect,
    pub exploration_area: PixelRect,
}

impl ScreenConfig {
    pub fn new(
        width_px: u32,
        height_px: u32,
        selection_area: PixelRect,
        exploration_area: PixelRect,
    ) -> Result<Self, InteractionError> {
        let screen = Self { width_px, height_px, selection_area, exploration_area };
        screen.validate()?;
        Ok(screen)
    }

    /// Landscape split: selection area on the left half, exploration area on the right.
    pub fn landscape(width_px: u32, height_px: u32) -> Result<Self, InteractionError> {
        let left = width_px / 2;
        Self::new(
            width_px,
            height_px,
            PixelRect::new(0, 0, left, height_px),
            PixelRect::new(left, 0, width_px - left, height_px),
        )
    }

    pub fn validate(&self) -> Result<(), InteractionError> {
        let bad = |m: &str| Err(InteractionError::InvalidScreen(m.to_string()));
        if self.width_px == 0 || self.height_px == 0 {
            return bad("screen has zero size");
        }
        for (name, area) in [("selection", &self.selection_area), ("exploration", &self.exploration_area)] {
            if area.width == 0 || area.height == 0 {
                return bad(&format!("{name} area is empty"));
            }
            if area.right() > u64::from(self.width_px) || area.bottom() > u64::from(self.height_px) {
                return bad(&format!("{name} area extends past the screen"));
            }
        }
        if self.selection_area.intersects(&self.exploration_area) {
            return bad("selection and exploration areas overlap");
        }
        Ok(())
    }

    pub fn contains<T: Scalar>(&self, px: T, py: T) -> bool {
        PixelRect::new(0, 0, self.width_px, self.height_px).contains(px, py)
    }

    /// Maps a pixel inside the selection area to normalized `[0,1)²` coordinates.
    pub fn to_selection_unit<T: Scalar>(&self, px: T, py: T) -> Option<(T, T)> {
        let area = &self.selection_area;
        if !self.contains(px, py) || !area.contains(px, py) {
            return None;
        }
        let below_one = T::one() - T::epsilon() / T::lit(2.0);
        let u = (px - T::from_u32(area.x).unwrap()) / T::from_u32(area.width).unwrap();
        let v = (py - T::from_u32(area.y).unwrap()) / T::from_u32(area.height).unwrap();
        Some((u.min(below_one), v.min(below_one)))
    }

    /// Pixel at normalized selection-area coordinates.
    pub fn from_selection_unit<T: Scalar>(&self, u: T, v: T) -> (T, T) {
        let area = &self.selection_area;
        (
            T::from_u32(area.x).unwrap() + u * T::from_u32(area.width).unwrap(),
            T::from_u32(area.y).unwrap() + v * T::from_u32(area.height).unwrap(),
        )
    }
}

/// Discrete selection hit test: the cell under a tap, or `None` outside the selection area.
pub fn hit_test_mark<T: Scalar>(point_px: (T, T), layout: &ChartLayout<T>, screen: &ScreenConfig) -> Option<CellId> {
    let (u, v) = screen.to_selection_unit(point_px.0, point_px.1)?;
    layout.locate(u, v)
}

/// Pixel at the centre of a cell's tap target.
pub fn tap_point<T: Scalar>(cell: CellId, layout: &ChartLayout<T>, screen: &ScreenConfig) -> (T, T) {
    let (u, v) = layout.rect(cell).center();
    screen.from_selection_unit(u, v)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelectionState {
    pub selected: BTreeSet<CellId>,
}

impl SelectionState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, cell: CellId) -> bool {
        self.selected.contains(&cell)
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CellId> {
        self.selected.iter()
    }
}

impl FromIterator<CellId> for SelectionState {
    fn from_iter<I: IntoIterator<Item = CellId>>(iter: I) -> Self {
        Self { selected: iter.into_iter().collect() }
    }
}

/// Flips one cell's membership.
pub fn toggle_select<T: Scalar>(
    state: &SelectionState,
    cube: &DataCube<T>,
    cell: CellId,
) -> Result<SelectionState, InteractionError> {
    if !cube.contains(cell) {
        return Err(InteractionError::OutOfBoundsCell(cell));
    }
    let mut next = state.clone();
    if !next.selected.remove(&cell) {
        next.selected.insert(cell);
    }
    Ok(next)
}

fn check_index<T: Scalar>(cube: &DataCube<T>, axis: Axis, index: usize) -> Result<(), InteractionError> {
    let len = cube.axis_len(axis);
    if index < len {
        Ok(())
    } else {
        Err(InteractionError::OutOfBoundsIndex { axis, index, len })
    }
}

/// Selects a whole slice, or deselects it when every cell of the slice is already selected.
pub fn axis_select<T: Scalar>(
    state: &SelectionState,
    cube: &DataCube<T>,
    axis: Axis,
    index: usize,
) -> Result<SelectionState, InteractionError> {
    check_index(cube, axis, index)?;
    let slice = cube.slice(axis, index);
    let mut next = state.clone();
    if slice.iter().all(|c| state.selected.contains(c)) {
        for c in &slice {
            next.selected.remove(c);
        }
    } else {
        next.selected.extend(slice);
    }
    Ok(next)
}

/// Vibration pulse: amplitude in `[0, 1]`, duration in `(0, 2000]` ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HapticCommand<T> {
    pub amplitude: T,
    pub duration_ms: u32,
}

impl<T: Scalar> HapticCommand<T> {
    pub fn new(amplitude: T, duration_ms: u32) -> Result<Self, InteractionError> {
        let cmd = Self { amplitude, duration_ms };
        cmd.validate()?;
        Ok(cmd)
    }

    pub fn validate(&self) -> Result<(), InteractionError> {
        if !(self.amplitude >= T::zero() && self.amplitude <= T::one()) {
            return Err(InteractionError::InvalidHaptic(format!("amplitude {} outside [0, 1]", self.amplitude)));
        }
        if self.duration_ms == 0 || self.duration_ms > HAPTIC_MAX_MS {
            return Err(InteractionError::InvalidHaptic(format!(
                "duration {} ms outside (0, {HAPTIC_MAX_MS}]",
                self.duration_ms
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HapticMode<T> {
    /// Encode the value itself.
    Absolute,
    /// Encode `|value - other|`.
    Difference(T),
}

/// Maps a value (or a difference of two values) onto vibration amplitude.
///
/// `amplitude = 0.1 + 0.9 · t`, where `t` is the value's (or the absolute difference's)
/// fraction of the range, clamped to `[0.1, 1.0]`. Pulses last 150 ms.
pub fn haptic_encode<T: Scalar>(value: T, range: (T, T), mode: HapticMode<T>) -> Result<HapticCommand<T>, InteractionError> {
    let (min, max) = range;
    if !(max > min) || !(max - min).is_finite() {
        return Err(InteractionError::DegenerateRange);
    }
    let numerator = match mode {
        HapticMode::Absolute => value - min,
        HapticMode::Difference(other) => (value - other).abs(),
    };
    let floor = T::lit(HAPTIC_FLOOR);
    let amplitude = floor + (T::one() - floor) * (numerator / (max - min));
    let amplitude = if amplitude.is_nan() { floor } else { amplitude.max(floor).min(T::one()) };
    Ok(HapticCommand { amplitude, duration_ms: HAPTIC_PULSE_MS })
}

/// One slice of the cube flattened onto the proxy display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D<T> {
    /// The axis held fixed.
    pub series_axis: Axis,
    pub fixed_index: usize,
    /// Labels along the free axis, in axis order.
    pub labels: Vec<String>,
    pub values: Vec<T>,
    /// `(min, max)` of the full cube, so the flat chart shares the hologram's scale.
    pub value_range: (T, T),
}

impl<T: Scalar> Projection2D<T> {
    /// Cell behind the `i`th projected value.
    pub fn cell(&self, i: usize) -> CellId {
        match self.series_axis {
            Axis::Location => CellId::new(self.fixed_index, i),
            Axis::Year => CellId::new(i, self.fixed_index),
        }
    }
}

/// Extracts the slice with `axis` fixed at `index`.
pub fn project_series<T: Scalar>(cube: &DataCube<T>, axis: Axis, index: usize) -> Result<Projection2D<T>, InteractionError> {
    check_index(cube, axis, index)?;
    let cells = cube.slice(axis, index);
    Ok(Projection2D {
        series_axis: axis,
        fixed_index: index,
        labels: cube.axis_labels(axis.other()).to_vec(),
        values: cells.iter().map(|&c| cube.value(c)).collect(),
        value_range: cube.value_range(),
    })
}
