//! Plain-text field tables: header `x,y,u_1,...,u_k`, one row per lattice
//! node in row-major order, values in shortest round-trip decimal form.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use segsolve::{Field, Grid, State};

use crate::error::CliError;

pub fn fields_to_string(grid: &Grid, s: &State) -> String {
    let mut out = String::from("x,y");
    for i in 1..=s.k() {
        write!(out, ",u_{i}").unwrap();
    }
    out.push('\n');
    for q in 0..grid.len() {
        let [x, y] = grid.coords(q);
        write!(out, "{x:?},{y:?}").unwrap();
        for f in s.fields() {
            write!(out, ",{:?}", f.get(q)).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_fields(grid: &Grid, s: &State, path: &Path) -> Result<(), CliError> {
    fs::write(path, fields_to_string(grid, s)).map_err(|e| CliError::io(path, e))
}

/// Reads a table written by [`write_fields`] for the same grid.
pub fn read_fields(grid: &Grid, path: &Path) -> Result<State, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_fields(grid, &text).map_err(|message| CliError::Format { path: path.into(), message })
}

pub fn parse_fields(grid: &Grid, text: &str) -> Result<State, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    let cols: Vec<&str> = header.split(',').collect();
    let k = cols.len().checked_sub(2).filter(|k| *k >= 1).ok_or("header needs x, y and densities")?;
    let expected: Vec<String> = ["x".to_string(), "y".to_string()]
        .into_iter()
        .chain((1..=k).map(|i| format!("u_{i}")))
        .collect();
    if cols != expected {
        return Err(format!("header must be `{}`", expected.join(",")));
    }
    let mut values = vec![vec![0.0; grid.len()]; k];
    let mut rows = 0;
    for (q, line) in lines.enumerate() {
        let row = q + 2;
        if q >= grid.len() {
            return Err(format!("line {row}: more rows than the {} grid nodes", grid.len()));
        }
        let nums: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("line {row}: {e}")))
            .collect::<Result<_, _>>()?;
        if nums.len() != k + 2 {
            return Err(format!("line {row}: expected {} columns", k + 2));
        }
        let c = grid.coords(q);
        let tol = 1e-9 * grid.h();
        if (nums[0] - c[0]).abs() > tol || (nums[1] - c[1]).abs() > tol {
            return Err(format!("line {row}: coordinates do not match the grid"));
        }
        for i in 0..k {
            values[i][q] = nums[i + 2];
        }
        rows += 1;
    }
    if rows != grid.len() {
        return Err(format!("expected {} rows, found {rows}", grid.len()));
    }
    let fields = values
        .into_iter()
        .map(|v| Field::from_values(grid, v))
        .collect::<segsolve::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    State::new(fields).map_err(|e| e.to_string())
}
