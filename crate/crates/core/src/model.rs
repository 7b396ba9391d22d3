//! Dataset ingestion, chart layout and aggregate statistics.
//!
//! A [`DataCube`] is a dense `locations × years` grid with one measured value per cell.
//! Everything the proxy does (hit-testing, selection, projection, summaries) is expressed
//! over [`CellId`]s into that grid.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{render, Scalar};
use crate::sha256_hex;

/// Expected CSV header, verbatim.
pub const CSV_HEADER: [&str; 3] = ["location", "year", "value"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("dataset contains no rows")]
    EmptyDataset,
    #[error("expected header `location,year,value`, found `{found}`")]
    BadHeader { found: String },
    #[error("line {line}: expected 3 fields, found {fields}")]
    MalformedRow { line: u64, fields: usize },
    #[error("missing cell ({location}, {year})")]
    MissingCell { location: String, year: String },
    #[error("line {line}: duplicate cell ({location}, {year})")]
    DuplicateCell { line: u64, location: String, year: String },
    #[error("line {line}: value `{text}` is not a number")]
    NonNumericValue { line: u64, text: String },
    #[error("non-finite value at ({location}, {year})")]
    NonFiniteValue { location: String, year: String },
    #[error("duplicate {axis} label `{label}`")]
    DuplicateLabel { axis: Axis, label: String },
    #[error("value matrix has {found} entries, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("cell {0} is out of bounds")]
    OutOfBoundsCell(CellId),
    #[error("csv: {0}")]
    Csv(String),
}

/// One of the two categorical axes of the cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Location,
    Year,
}

impl Axis {
    pub fn other(self) -> Axis {
        match self {
            Axis::Location => Axis::Year,
            Axis::Year => Axis::Location,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Location => "location",
            Axis::Year => "year",
        })
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "location" => Ok(Axis::Location),
            "year" => Ok(Axis::Year),
            other => Err(format!("unknown axis `{other}`")),
        }
    }
}

/// Address of one mark. Ordered by `(location, year)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub location: usize,
    pub year: usize,
}

impl CellId {
    pub fn new(location: usize, year: usize) -> Self {
        Self { location, year }
    }

    pub fn index_on(self, axis: Axis) -> usize {
        match axis {
            Axis::Location => self.location,
            Axis::Year => self.year,
        }
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.location, self.year)
    }
}

/// Dense `locations × years` grid of finite values, stored location-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCube<T> {
    locations: Vec<String>,
    years: Vec<String>,
    values: Vec<T>,
    measure_name: String,
    measure_unit: String,
}

impl<T: Scalar> DataCube<T> {
    pub fn new(
        locations: Vec<String>,
        years: Vec<String>,
        values: Vec<T>,
        measure_name: impl Into<String>,
        measure_unit: impl Into<String>,
    ) -> Result<Self, ModelError> {
        if locations.is_empty() || years.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        check_unique(Axis::Location, &locations)?;
        check_unique(Axis::Year, &years)?;
        let expected = locations.len() * years.len();
        if values.len() != expected {
            return Err(ModelError::ShapeMismatch { expected, found: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteValue {
                location: locations[i / years.len()].clone(),
                year: years[i % years.len()].clone(),
            });
        }
        Ok(Self {
            locations,
            years,
            values,
            measure_name: measure_name.into(),
            measure_unit: measure_unit.into(),
        })
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn years(&self) -> &[String] {
        &self.years
    }

    /// Row-major (location-major) values.
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn measure_name(&self) -> &str {
        &self.measure_name
    }

    pub fn measure_unit(&self) -> &str {
        &self.measure_unit
    }

    pub fn location_count(&self) -> usize {
        self.locations.len()
    }

    pub fn year_count(&self) -> usize {
        self.years.len()
    }

    pub fn axis_len(&self, axis: Axis) -> usize {
        match axis {
            Axis::Location => self.locations.len(),
            Axis::Year => self.years.len(),
        }
    }

    pub fn axis_labels(&self, axis: Axis) -> &[String] {
        match axis {
            Axis::Location => &self.locations,
            Axis::Year => &self.years,
        }
    }

    pub fn contains(&self, cell: CellId) -> bool {
        cell.location < self.locations.len() && cell.year < self.years.len()
    }

    pub fn check(&self, cell: CellId) -> Result<(), ModelError> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(ModelError::OutOfBoundsCell(cell))
        }
    }

    pub fn get(&self, cell: CellId) -> Option<T> {
        self.contains(cell).then(|| self.values[cell.location * self.years.len() + cell.year])
    }

    /// Value at an in-bounds cell. Panics when out of bounds.
    pub fn value(&self, cell: CellId) -> T {
        self.get(cell).unwrap_or_else(|| panic!("cell {cell} out of bounds"))
    }

    pub fn cells(&self) -> impl Iterator<Item = CellId> + '_ {
        (0..self.locations.len())
            .flat_map(move |l| (0..self.years.len()).map(move |y| CellId::new(l, y)))
    }

    /// Cells of the slice where `axis` is fixed at `index`, in free-axis order.
    pub fn slice(&self, axis: Axis, index: usize) -> Vec<CellId> {
        match axis {
            Axis::Location => (0..self.years.len()).map(|y| CellId::new(index, y)).collect(),
            Axis::Year => (0..self.locations.len()).map(|l| CellId::new(l, index)).collect(),
        }
    }

    /// `(min, max)` over every cell.
    pub fn value_range(&self) -> (T, T) {
        self.values.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
    }

    /// Canonical UTF-8 serialization used for digests.
    ///
    /// Lines: `datacube 1`, measure name and unit, the location axis, the year axis, then
    /// every value in row-major order. Labels are JSON-quoted; numbers use shortest
    /// round-trip rendering.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let quote = |s: &str| serde_json::to_string(s).expect("string serialization");
        let mut out = String::from("datacube 1\n");
        out.push_str(&format!("measure {} {}\n", quote(&self.measure_name), quote(&self.measure_unit)));
        for (tag, labels) in [("locations", &self.locations), ("years", &self.years)] {
            out.push_str(&format!("{tag} {}", labels.len()));
            for l in labels {
                out.push(' ');
                out.push_str(&quote(l));
            }
            out.push('\n');
        }
        out.push_str("values");
        for v in &self.values {
            out.push(' ');
            out.push_str(&render(*v));
        }
        out.push('\n');
        out.into_bytes()
    }

    /// SHA-256 of [`Self::canonical_bytes`], lowercase hex.
    pub fn digest(&self) -> String {
        sha256_hex(&self.canonical_bytes())
    }

    /// Writes the cube back out as `location,year,value` CSV, location-major.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ModelError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for cell in self.cells() {
            w.write_record([
                self.locations[cell.location].as_str(),
                self.years[cell.year].as_str(),
                &render(self.value(cell)),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| ModelError::Csv(e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

fn check_unique(axis: Axis, labels: &[String]) -> Result<(), ModelError> {
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(ModelError::DuplicateLabel { axis, label: l.clone() });
        }
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> ModelError {
    ModelError::Csv(e.to_string())
}

/// Year ordering: numeric labels compare by value and come first, the rest lexicographically.
pub fn compare_year_labels(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>().ok(), b.parse::<f64>().ok()) {
        (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal).then_with(|| a.cmp(b)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.cmp(b),
    }
}

/// Parses `location,year,value` CSV into a cube with measure name `value`.
pub fn load_dataset<T: Scalar, R: Read>(source: R) -> Result<DataCube<T>, ModelError> {
    load_dataset_with(source, "value", "")
}

/// Like [`load_dataset`], naming the measure.
///
/// Locations keep first-appearance order; years are sorted with [`compare_year_labels`].
pub fn load_dataset_with<T: Scalar, R: Read>(
    source: R,
    measure_name: &str,
    measure_unit: &str,
) -> Result<DataCube<T>, ModelError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut records = reader.records();

    let header = match records.next() {
        None => return Err(ModelError::EmptyDataset),
        Some(r) => r.map_err(csv_err)?,
    };
    if header.iter().ne(CSV_HEADER) {
        return Err(ModelError::BadHeader { found: header.iter().collect::<Vec<_>>().join(",") });
    }

    let mut locations: Vec<String> = Vec::new();
    let mut location_index: HashMap<String, usize> = HashMap::new();
    let mut years: BTreeSet<YearKey> = BTreeSet::new();
    let mut cells: HashMap<(usize, String), T> = HashMap::new();

    for record in records {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(ModelError::MalformedRow { line, fields: record.len() });
        }
        let (location, year, text) = (&record[0], &record[1], &record[2]);
        let value: T = text
            .parse()
            .map_err(|_| ModelError::NonNumericValue { line, text: text.to_string() })?;
        if !value.is_finite() {
            return Err(ModelError::NonFiniteValue {
                location: location.to_string(),
                year: year.to_string(),
            });
        }
        let li = *location_index.entry(location.to_string()).or_insert_with(|| {
            locations.push(location.to_string());
            locations.len() - 1
        });
        years.insert(YearKey(year.to_string()));
        if cells.insert((li, year.to_string()), value).is_some() {
            return Err(ModelError::DuplicateCell {
                line,
                location: location.to_string(),
                year: year.to_string(),
            });
        }
    }

    if cells.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let years: Vec<String> = years.into_iter().map(|k| k.0).collect();
    let mut values = Vec::with_capacity(locations.len() * years.len());
    for (li, location) in locations.iter().enumerate() {
        for year in &years {
            match cells.remove(&(li, year.clone())) {
                Some(v) => values.push(v),
                None => {
                    return Err(ModelError::MissingCell {
                        location: location.clone(),
                        year: year.clone(),
                    })
                }
            }
        }
    }
    DataCube::new(locations, years, values, measure_name, measure_unit)
}

#[derive(PartialEq, Eq)]
struct YearKey(String);

impl Ord for YearKey {
    fn cmp(&self, other: &Self) -> Ordering {
        compare_year_labels(&self.0, &other.0)
    }
}

impl PartialOrd for YearKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Axis-aligned rectangle, half-open: `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect<T> {
    pub x0: T,
    pub y0: T,
    pub x1: T,
    pub y1: T,
}

impl<T: Scalar> Rect<T> {
    pub fn contains(&self, x: T, y: T) -> bool {
        self.x0 <= x && x < self.x1 && self.y0 <= y && y < self.y1
    }

    pub fn center(&self) -> (T, T) {
        let half = T::lit(0.5);
        ((self.x0 + self.x1) * half, (self.y0 + self.y1) * half)
    }

    pub fn width(&self) -> T {
        self.x1 - self.x0
    }

    pub fn height(&self) -> T {
        self.y1 - self.y0
    }
}

/// Which data dimension drives each chart axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisAssignment {
    pub horizontal: Axis,
    pub depth: Axis,
}

impl Default for AxisAssignment {
    fn default() -> Self {
        Self { horizontal: Axis::Year, depth: Axis::Location }
    }
}

/// Placement of every mark: normalized bar height and its tap rectangle in the unit square.
///
/// Columns are years (horizontal), rows are locations (depth); the measure is vertical.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartLayout<T> {
    cube_digest: String,
    columns: usize,
    rows: usize,
    axis_assignment: AxisAssignment,
    bar_heights: Vec<T>,
    cell_rects: Vec<Rect<T>>,
}

/// `k / n` as the scalar type; every edge of the grid goes through here so neighbouring
/// rectangles share bit-identical boundaries.
fn grid_edge<T: Scalar>(k: usize, n: usize) -> T {
    T::from_count(k) / T::from_count(n)
}

/// Index of the half-open band `[k/n, (k+1)/n)` containing `t`, which must lie in `[0, 1)`.
fn band<T: Scalar>(t: T, n: usize) -> usize {
    let mut k = (t * T::from_count(n)).floor().to_usize().unwrap_or(0).min(n - 1);
    while k > 0 && t < grid_edge(k, n) {
        k -= 1;
    }
    while k + 1 < n && t >= grid_edge(k + 1, n) {
        k += 1;
    }
    k
}

impl<T: Scalar> ChartLayout<T> {
    pub fn cube_digest(&self) -> &str {
        &self.cube_digest
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn axis_assignment(&self) -> AxisAssignment {
        self.axis_assignment
    }

    /// Row-major bar heights in `[0, 1]`.
    pub fn bar_heights(&self) -> &[T] {
        &self.bar_heights
    }

    pub fn cell_rects(&self) -> &[Rect<T>] {
        &self.cell_rects
    }

    pub fn contains(&self, cell: CellId) -> bool {
        cell.location < self.rows && cell.year < self.columns
    }

    fn offset(&self, cell: CellId) -> usize {
        assert!(self.contains(cell), "cell {cell} outside layout");
        cell.location * self.columns + cell.year
    }

    pub fn height(&self, cell: CellId) -> T {
        self.bar_heights[self.offset(cell)]
    }

    pub fn rect(&self, cell: CellId) -> Rect<T> {
        self.cell_rects[self.offset(cell)]
    }

    /// Cell whose half-open rectangle contains the normalized point, if any.
    pub fn locate(&self, u: T, v: T) -> Option<CellId> {
        let unit = T::zero()..T::one();
        if !unit.contains(&u) || !unit.contains(&v) {
            return None;
        }
        Some(CellId::new(band(v, self.rows), band(u, self.columns)))
    }
}

/// Computes bar heights (value over the cube maximum) and the tap grid.
///
/// Negative values draw as zero-height bars; a cube whose maximum is not positive lays out
/// flat.
pub fn layout_chart<T: Scalar>(cube: &DataCube<T>) -> ChartLayout<T> {
    let (_, max) = cube.value_range();
    let bar_heights = cube
        .values()
        .iter()
        .map(|&v| if max > T::zero() { v.max(T::zero()) / max } else { T::zero() })
        .collect();
    let (rows, columns) = (cube.location_count(), cube.year_count());
    let cell_rects = cube
        .cells()
        .map(|c| Rect {
            x0: grid_edge(c.year, columns),
            x1: grid_edge(c.year + 1, columns),
            y0: grid_edge(c.location, rows),
            y1: grid_edge(c.location + 1, rows),
        })
        .collect();
    ChartLayout {
        cube_digest: cube.digest(),
        columns,
        rows,
        axis_assignment: AxisAssignment::default(),
        bar_heights,
        cell_rects,
    }
}

/// Aggregates over a selection. `min`, `max` and `mean` are `None` for an empty selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats<T> {
    pub count: usize,
    pub sum: T,
    pub min: Option<T>,
    pub max: Option<T>,
    pub mean: Option<T>,
}

impl<T: Scalar> SummaryStats<T> {
    pub fn empty() -> Self {
        Self { count: 0, sum: T::zero(), min: None, max: None, mean: None }
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Summary statistics over the selected cells. Duplicates count once and the result does
/// not depend on iteration order.
pub fn summarize<'a, T, I>(cube: &DataCube<T>, selection: I) -> Result<SummaryStats<T>, ModelError>
where
    T: Scalar,
    I: IntoIterator<Item = &'a CellId>,
{
    let cells: BTreeSet<CellId> = selection.into_iter().copied().collect();
    if cells.is_empty() {
        return Ok(SummaryStats::empty());
    }
    // Neumaier compensated summation.
    let (mut sum, mut carry) = (T::zero(), T::zero());
    let (mut min, mut max) = (T::infinity(), T::neg_infinity());
    for &cell in &cells {
        cube.check(cell)?;
        let v = cube.value(cell);
        let t = sum + v;
        carry = carry + if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
        min = min.min(v);
        max = max.max(v);
    }
    let sum = sum + carry;
    let mean = (sum / T::from_count(cells.len())).max(min).min(max);
    Ok(SummaryStats { count: cells.len(), sum, min: Some(min), max: Some(max), mean: Some(mean) })
}
