//! Textual map format: `gridmap v1`, then `<height> <width>`, then one line
//! of `.`/`#` per row.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{GridMap, MapError};

pub const MAP_FORMAT_VERSION: &str = "gridmap v1";

pub fn load_map(path: impl AsRef<Path>) -> Result<GridMap, MapError> {
    parse_map(&fs::read_to_string(path)?)
}

pub fn save_map(map: &GridMap, path: impl AsRef<Path>) -> Result<(), MapError> {
    let mut file = fs::File::create(path)?;
    write_map(map, &mut file)?;
    Ok(())
}

pub fn write_map(map: &GridMap, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{MAP_FORMAT_VERSION}")?;
    writeln!(out, "{} {}", map.height(), map.width())?;
    for row in map.to_rows() {
        writeln!(out, "{row}")?;
    }
    Ok(())
}

pub fn parse_map(text: &str) -> Result<GridMap, MapError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l.trim_end() == MAP_FORMAT_VERSION => {}
        other => {
            return Err(MapError::MalformedHeader(format!(
                "expected {MAP_FORMAT_VERSION:?}, found {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let dims = lines
        .next()
        .ok_or_else(|| MapError::MalformedHeader("missing dimension line".into()))?;
    let parsed: Vec<usize> = dims
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| MapError::MalformedHeader(format!("bad dimension line {dims:?}")))?;
    let [height, width] = parsed[..] else {
        return Err(MapError::MalformedHeader(format!(
            "bad dimension line {dims:?}"
        )));
    };
    let rows: Vec<&str> = lines.collect();
    parse_rows(&rows, height, width)
}

pub(super) fn parse_rows(rows: &[&str], height: usize, width: usize) -> Result<GridMap, MapError> {
    if rows.len() != height {
        return Err(MapError::RowCount {
            expected: height,
            found: rows.len(),
        });
    }
    let mut occupancy = Vec::with_capacity(width * height);
    for (r, line) in rows.iter().enumerate() {
        let found = line.chars().count();
        if found != width {
            return Err(MapError::InconsistentRowLength {
                row: r,
                expected: width,
                found,
            });
        }
        for (c, ch) in line.chars().enumerate() {
            occupancy.push(match ch {
                '.' => 0,
                '#' => 1,
                _ => return Err(MapError::IllegalCharacter { row: r, col: c, ch }),
            });
        }
    }
    GridMap::new(width, height, occupancy)
}
