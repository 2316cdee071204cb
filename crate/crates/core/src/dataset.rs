//! Incomplete categorical data tables.
//!
//! Codes are 0-based in memory. On disk they are 1-based integers, one sample
//! per row under a header of variable names; an empty field or `NA` marks a
//! missing value and, in query files, `?` marks a cell to predict.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// An `M × N` table of categorical codes with missing entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsDataset {
    names: Vec<String>,
    cardinalities: Vec<usize>,
    rows: Vec<Vec<Option<usize>>>,
}

/// A parsed cell of a query file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Observed(usize),
    Missing,
    Target,
}

impl RatingsDataset {
    pub fn new(cardinalities: Vec<usize>, rows: Vec<Vec<Option<usize>>>) -> Result<Self> {
        let names = (1..=cardinalities.len()).map(|n| format!("x{n}")).collect();
        Self::with_names(names, cardinalities, rows)
    }

    pub fn with_names(
        names: Vec<String>,
        cardinalities: Vec<usize>,
        rows: Vec<Vec<Option<usize>>>,
    ) -> Result<Self> {
        if cardinalities.is_empty() || cardinalities.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "cardinalities must be positive, got {cardinalities:?}"
            )));
        }
        if names.len() != cardinalities.len() {
            return Err(Error::Dimension("one name per variable required".into()));
        }
        if rows.is_empty() {
            return Err(Error::InvalidInput("dataset has no rows".into()));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cardinalities.len() {
                return Err(Error::Dimension(format!(
                    "row {r} has {} fields, expected {}",
                    row.len(),
                    cardinalities.len()
                )));
            }
            for (n, (&c, &card)) in row.iter().zip(&cardinalities).enumerate() {
                if let Some(c) = c {
                    if c >= card {
                        return Err(Error::InvalidInput(format!(
                            "row {r}, variable {n}: code {} exceeds cardinality {card}",
                            c + 1
                        )));
                    }
                }
            }
        }
        Ok(Self { names, cardinalities, rows })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn n_vars(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<Option<usize>>] {
        &self.rows
    }

    pub fn get(&self, row: usize, var: usize) -> Option<usize> {
        self.rows[row][var]
    }

    /// `(row, var, code)` for every observed cell, row-major.
    pub fn observed_cells(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.rows.iter().enumerate().flat_map(|(r, row)| {
            row.iter().enumerate().filter_map(move |(n, c)| c.map(|c| (r, n, c)))
        })
    }

    pub fn n_observed(&self) -> usize {
        self.rows.iter().flatten().filter(|c| c.is_some()).count()
    }

    /// A copy with only the listed `(row, var)` cells kept observed.
    pub fn restrict_to(&self, cells: &[(usize, usize)]) -> Self {
        let mut rows = vec![vec![None; self.n_vars()]; self.n_rows()];
        for &(r, n) in cells {
            rows[r][n] = self.rows[r][n];
        }
        Self { names: self.names.clone(), cardinalities: self.cardinalities.clone(), rows }
    }

    /// Reads a delimited table. When `cardinalities` is `None` each variable's
    /// cardinality is its largest observed code.
    pub fn read_csv(path: &Path, delimiter: u8, cardinalities: Option<Vec<usize>>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let (names, cells) = parse_table(file, delimiter, &path.display().to_string(), false)?;
        let rows: Vec<Vec<Option<usize>>> = cells
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|c| match c {
                        Cell::Observed(c) => Some(c),
                        _ => None,
                    })
                    .collect()
            })
            .collect();
        let cards = match cardinalities {
            Some(c) => c,
            None => infer_cardinalities(names.len(), rows.iter().map(|r| r.as_slice())),
        };
        Self::with_names(names, cards, rows)
    }

    pub fn write_csv<W: Write>(&self, w: W, delimiter: u8) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().delimiter(delimiter).from_writer(w);
        wtr.write_record(&self.names).map_err(csv_io)?;
        for row in &self.rows {
            let fields: Vec<String> = row
                .iter()
                .map(|c| c.map(|c| (c + 1).to_string()).unwrap_or_else(|| "NA".into()))
                .collect();
            wtr.write_record(&fields).map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn infer_cardinalities<'a>(n: usize, rows: impl Iterator<Item = &'a [Option<usize>]>) -> Vec<usize> {
    let mut cards = vec![1; n];
    for row in rows {
        for (card, c) in cards.iter_mut().zip(row) {
            if let Some(c) = c {
                *card = (*card).max(c + 1);
            }
        }
    }
    cards
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Parses a delimited table into a header and rows of cells. `?` is accepted
/// only when `allow_targets` is set.
pub fn parse_table<R: Read>(
    reader: R,
    delimiter: u8,
    source: &str,
    allow_targets: bool,
) -> Result<(Vec<String>, Vec<Vec<Cell>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let parse_err = |line: usize, column: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        column,
        message,
    };
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, 1, e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if names.is_empty() || names.iter().all(|s| s.is_empty()) {
        return Err(parse_err(1, 1, "missing header row".into()));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, 1, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != names.len() {
            return Err(parse_err(
                line,
                rec.len().min(names.len()) + 1,
                format!("expected {} fields, found {}", names.len(), rec.len()),
            ));
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(col, field)| {
                let field = field.trim();
                match field {
                    "" | "NA" => Ok(Cell::Missing),
                    "?" if allow_targets => Ok(Cell::Target),
                    _ => match field.parse::<usize>() {
                        Ok(c) if c >= 1 => Ok(Cell::Observed(c - 1)),
                        _ => Err(parse_err(
                            line,
                            col + 1,
                            format!("expected a positive integer code, found {field:?}"),
                        )),
                    },
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(2, 1, "no data rows".into()));
    }
    Ok((names, rows))
}
