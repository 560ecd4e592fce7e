//! Tabular data model: typed columns, rows of numeric/symbolic/missing cells,
//! CSV ingestion, min-max normalization, the row distance and the
//! distance-to-heaven score.
//!
//! Column roles come from the header. A trailing `+` marks an objective to
//! maximize, a trailing `-` one to minimize, and a leading `?` marks a column
//! that is carried along but ignored. Everything else is a decision column;
//! it is numeric when every non-missing cell parses as a finite number.
//!
//! ```
//! use keys::data::{Dataset, Role, Goal};
//!
//! let ds = Dataset::parse_csv("?id,x1,color,cost-,acc+\n1,0.5,red,10,0.9\n2,?,blue,20,0.7\n").unwrap();
//! assert_eq!(ds.columns()[0].role, Role::Ignored);
//! assert_eq!(ds.columns()[2].role, Role::SymbolicDecision);
//! assert_eq!(ds.columns()[3].role, Role::Objective(Goal::Minimize));
//! assert_eq!(ds.decision_columns(), &[1, 2]);
//! ```

use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stable identifier of a row: its position in the dataset as ingested.
pub type RowId = usize;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("empty input: no header row")]
    NoHeader,
    #[error("line {line}: expected {expected} cells, found {found}")]
    Ragged {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: objective column `{column}` has non-numeric value `{value}`")]
    NonNumericObjective {
        line: u64,
        column: String,
        value: String,
    },
    #[error("no decision columns")]
    NoDecisionColumns,
    #[error("no objective columns")]
    NoObjectives,
    #[error("row {row}: objective `{column}` is missing")]
    MissingObjective { row: RowId, column: String },
    #[error("expected {expected} objective values, got {found}")]
    ObjectiveArity { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Num(f64),
    Sym(String),
    Missing,
}

impl Cell {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    fn parse(raw: &str) -> Cell {
        let raw = raw.trim();
        if raw.is_empty() || raw == "?" {
            return Cell::Missing;
        }
        match parse_finite(raw) {
            Some(v) => Cell::Num(v),
            None => Cell::Sym(raw.to_string()),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Num(v) => write!(f, "{v}"),
            Cell::Sym(s) => f.write_str(s),
            Cell::Missing => f.write_str("?"),
        }
    }
}

fn parse_finite(raw: &str) -> Option<f64> {
    raw.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Goal {
    Maximize,
    Minimize,
}

impl Goal {
    /// Normalized value of the ideal point for this goal.
    pub fn heaven(self) -> f64 {
        match self {
            Goal::Maximize => 1.0,
            Goal::Minimize => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    NumericDecision,
    SymbolicDecision,
    Objective(Goal),
    Ignored,
}

impl Role {
    pub fn is_decision(self) -> bool {
        matches!(self, Role::NumericDecision | Role::SymbolicDecision)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub role: Role,
    /// Observed minimum; `+inf` until a numeric value is seen.
    pub lo: f64,
    /// Observed maximum; `-inf` until a numeric value is seen.
    pub hi: f64,
}

impl Column {
    pub fn new(name: impl Into<String>, role: Role) -> Self {
        Column {
            name: name.into(),
            role,
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
        }
    }

    /// Parses a header name into a column, stripping the role marks.
    pub fn from_header(raw: &str) -> Self {
        let raw = raw.trim();
        if let Some(rest) = raw.strip_prefix('?') {
            return Column::new(rest, Role::Ignored);
        }
        if let Some(rest) = raw.strip_suffix('+') {
            return Column::new(rest, Role::Objective(Goal::Maximize));
        }
        if let Some(rest) = raw.strip_suffix('-') {
            return Column::new(rest, Role::Objective(Goal::Minimize));
        }
        Column::new(raw, Role::NumericDecision)
    }

    /// Header name with the role marks restored.
    pub fn header(&self) -> String {
        match self.role {
            Role::Ignored => format!("?{}", self.name),
            Role::Objective(Goal::Maximize) => format!("{}+", self.name),
            Role::Objective(Goal::Minimize) => format!("{}-", self.name),
            _ => self.name.clone(),
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.role, Role::NumericDecision | Role::Objective(_))
    }

    pub fn has_range(&self) -> bool {
        self.lo <= self.hi
    }

    fn observe(&mut self, v: f64) {
        self.lo = self.lo.min(v);
        self.hi = self.hi.max(v);
    }

    /// Min-max normalization into `[0, 1]`, clamped. A degenerate column
    /// (`hi == lo`, or nothing observed) maps everything to 0.5.
    pub fn norm(&self, v: f64) -> f64 {
        if self.hi.is_nan() || self.lo.is_nan() || self.hi <= self.lo {
            return 0.5;
        }
        ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub id: RowId,
    pub cells: Vec<Cell>,
}

/// An immutable table. Row ids equal row positions and never change.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    rows: Vec<Row>,
    decisions: Vec<usize>,
    objectives: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset from columns and raw cell lists. Numeric decision
    /// columns holding a symbol are demoted to symbolic; `lo`/`hi` are
    /// recomputed from the data.
    pub fn new(columns: Vec<Column>, cells: Vec<Vec<Cell>>) -> Result<Self, DataError> {
        let lines: Vec<u64> = (0..cells.len() as u64).map(|i| i + 2).collect();
        Self::build(columns, cells, &lines)
    }

    fn build(
        mut columns: Vec<Column>,
        cells: Vec<Vec<Cell>>,
        lines: &[u64],
    ) -> Result<Self, DataError> {
        for (row, line) in cells.iter().zip(lines) {
            if row.len() != columns.len() {
                return Err(DataError::Ragged {
                    line: *line,
                    expected: columns.len(),
                    found: row.len(),
                });
            }
        }
        for (j, col) in columns.iter_mut().enumerate() {
            col.lo = f64::INFINITY;
            col.hi = f64::NEG_INFINITY;
            match col.role {
                Role::Objective(_) => {
                    for (row, line) in cells.iter().zip(lines) {
                        if let Cell::Sym(s) = &row[j] {
                            return Err(DataError::NonNumericObjective {
                                line: *line,
                                column: col.name.clone(),
                                value: s.clone(),
                            });
                        }
                    }
                }
                Role::NumericDecision | Role::SymbolicDecision => {
                    let numeric = cells.iter().all(|r| !matches!(r[j], Cell::Sym(_)));
                    col.role = if numeric {
                        Role::NumericDecision
                    } else {
                        Role::SymbolicDecision
                    };
                }
                Role::Ignored => {}
            }
        }
        let rows: Vec<Row> = cells
            .into_iter()
            .enumerate()
            .map(|(id, mut cells)| {
                for (j, col) in columns.iter().enumerate() {
                    match (&cells[j], col.role) {
                        (Cell::Num(v), _) if !v.is_finite() => cells[j] = Cell::Missing,
                        // A symbolic column keeps numbers as tokens.
                        (Cell::Num(v), Role::SymbolicDecision) => {
                            cells[j] = Cell::Sym(Cell::Num(*v).to_string())
                        }
                        _ => {}
                    }
                }
                Row { id, cells }
            })
            .collect();
        for (j, col) in columns.iter_mut().enumerate() {
            if col.is_numeric() {
                for row in &rows {
                    if let Cell::Num(v) = row.cells[j] {
                        col.observe(v);
                    }
                }
            }
        }
        let decisions = (0..columns.len())
            .filter(|&j| columns[j].role.is_decision())
            .collect();
        let objectives = (0..columns.len())
            .filter(|&j| matches!(columns[j].role, Role::Objective(_)))
            .collect();
        Ok(Dataset {
            columns,
            rows,
            decisions,
            objectives,
        })
    }

    pub fn parse_csv(text: &str) -> Result<Self, DataError> {
        Self::from_reader(text.as_bytes())
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, DataError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut records = rdr.records();
        let header = records.next().ok_or(DataError::NoHeader)??;
        let columns: Vec<Column> = header.iter().map(Column::from_header).collect();
        let mut cells = Vec::new();
        let mut lines = Vec::new();
        for record in records {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() == 1 && record[0].trim().is_empty() && columns.len() > 1 {
                continue;
            }
            cells.push(record.iter().map(Cell::parse).collect());
            lines.push(line);
        }
        Self::build(columns, cells, &lines)
    }

    /// Serializes back to CSV with role marks in the header.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(self.columns.iter().map(Column::header))
            .expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.cells.iter().map(|c| c.to_string()))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn row(&self, id: RowId) -> &Row {
        &self.rows[id]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn ids(&self) -> Vec<RowId> {
        (0..self.rows.len()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Indices of the decision columns, in column order.
    pub fn decision_columns(&self) -> &[usize] {
        &self.decisions
    }

    pub fn objective_columns(&self) -> &[usize] {
        &self.objectives
    }

    pub fn norm(&self, col: usize, v: f64) -> f64 {
        self.columns[col].norm(v)
    }

    /// The Euclidean row metric (exponent 2).
    pub fn distance(&self) -> Result<Distance<'_>, DataError> {
        self.distance_with(2.0)
    }

    /// Row metric with exponent `p`: `(sum d_i^p / k)^(1/p)`.
    pub fn distance_with(&self, p: f64) -> Result<Distance<'_>, DataError> {
        if self.decisions.is_empty() {
            return Err(DataError::NoDecisionColumns);
        }
        Ok(Distance { ds: self, p })
    }

    pub fn dist(&self, a: RowId, b: RowId) -> Result<f64, DataError> {
        Ok(self.distance()?.between(a, b))
    }

    /// Distance to heaven of a row, read from its own objective cells.
    pub fn d2h(&self, id: RowId) -> Result<f64, DataError> {
        let values = self.objective_values(id)?;
        self.d2h_of(&values)
    }

    /// Raw objective values of a row, in objective-column order.
    pub fn objective_values(&self, id: RowId) -> Result<Vec<f64>, DataError> {
        if self.objectives.is_empty() {
            return Err(DataError::NoObjectives);
        }
        self.objectives
            .iter()
            .map(|&j| {
                self.rows[id].cells[j]
                    .as_num()
                    .ok_or_else(|| DataError::MissingObjective {
                        row: id,
                        column: self.columns[j].name.clone(),
                    })
            })
            .collect()
    }

    /// Distance to heaven of an externally supplied objective vector,
    /// normalized with this dataset's objective bounds.
    pub fn d2h_of(&self, values: &[f64]) -> Result<f64, DataError> {
        if self.objectives.is_empty() {
            return Err(DataError::NoObjectives);
        }
        if values.len() != self.objectives.len() {
            return Err(DataError::ObjectiveArity {
                expected: self.objectives.len(),
                found: values.len(),
            });
        }
        let m = values.len() as f64;
        let sum: f64 = self
            .objectives
            .iter()
            .zip(values)
            .map(|(&j, &v)| {
                let col = &self.columns[j];
                let heaven = match col.role {
                    Role::Objective(goal) => goal.heaven(),
                    _ => unreachable!("objective index points at an objective"),
                };
                (col.norm(v) - heaven).powi(2)
            })
            .sum();
        Ok((sum / m).sqrt())
    }
}

/// Borrowed row metric over the decision columns of a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Distance<'a> {
    ds: &'a Dataset,
    p: f64,
}

impl<'a> Distance<'a> {
    pub fn dataset(&self) -> &'a Dataset {
        self.ds
    }

    pub fn between(&self, a: RowId, b: RowId) -> f64 {
        let (ra, rb) = (&self.ds.rows[a], &self.ds.rows[b]);
        let k = self.ds.decisions.len() as f64;
        let sum: f64 = self
            .ds
            .decisions
            .iter()
            .map(|&j| {
                let d = self.cell_diff(j, &ra.cells[j], &rb.cells[j]);
                if self.p == 2.0 {
                    d * d
                } else {
                    d.powf(self.p)
                }
            })
            .sum();
        let out = if self.p == 2.0 {
            (sum / k).sqrt()
        } else {
            (sum / k).powf(1.0 / self.p)
        };
        out.min(1.0)
    }

    fn cell_diff(&self, j: usize, a: &Cell, b: &Cell) -> f64 {
        let col = &self.ds.columns[j];
        match (a, b) {
            (Cell::Missing, Cell::Missing) => 1.0,
            (Cell::Num(v), Cell::Missing) | (Cell::Missing, Cell::Num(v)) => {
                let n = col.norm(*v);
                n.max(1.0 - n)
            }
            (Cell::Num(x), Cell::Num(y)) => (col.norm(*x) - col.norm(*y)).abs(),
            (Cell::Sym(x), Cell::Sym(y)) if x == y => 0.0,
            _ => 1.0,
        }
    }
}
