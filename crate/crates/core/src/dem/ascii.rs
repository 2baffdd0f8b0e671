//! ESRI ASCII grid reader and canonical writer.

use std::fmt::Write as _;

use super::{DemError, DemGrid};

const HEADER_KEYS: [&str; 6] = [
    "ncols",
    "nrows",
    "xllcorner",
    "yllcorner",
    "cellsize",
    "nodata_value",
];

struct Token<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

fn tokens(text: &str) -> impl Iterator<Item = Token<'_>> {
    text.lines().enumerate().flat_map(|(i, line)| {
        let base = line.as_ptr() as usize;
        line.split_whitespace().map(move |tok| Token {
            text: tok,
            line: i + 1,
            column: tok.as_ptr() as usize - base + 1,
        })
    })
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> DemError {
    DemError::Parse {
        line,
        column,
        message: message.into(),
    }
}

pub fn parse_ascii_grid(text: &str) -> Result<DemGrid, DemError> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < HEADER_KEYS.len() {
        return Err(parse_err(
            lines.len() + 1,
            1,
            format!("expected {} header lines", HEADER_KEYS.len()),
        ));
    }

    let mut header = [0.0f64; 6];
    for (i, key) in HEADER_KEYS.iter().enumerate() {
        let line = lines[i];
        let mut parts = line.split_whitespace();
        let found = parts
            .next()
            .ok_or_else(|| parse_err(i + 1, 1, format!("missing header key `{key}`")))?;
        if !found.eq_ignore_ascii_case(key) {
            return Err(parse_err(
                i + 1,
                1,
                format!("expected header key `{key}`, found `{found}`"),
            ));
        }
        let value = parts
            .next()
            .ok_or_else(|| parse_err(i + 1, found.len() + 1, format!("missing value for `{key}`")))?;
        let column = value.as_ptr() as usize - line.as_ptr() as usize + 1;
        header[i] = value
            .parse::<f64>()
            .map_err(|_| parse_err(i + 1, column, format!("`{value}` is not a number")))?;
        if let Some(extra) = parts.next() {
            let column = extra.as_ptr() as usize - line.as_ptr() as usize + 1;
            return Err(parse_err(i + 1, column, format!("unexpected token `{extra}`")));
        }
    }

    let count = |v: f64, line: usize, key: &str| -> Result<usize, DemError> {
        if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
            return Err(parse_err(line, 1, format!("`{key}` must be a non-negative integer")));
        }
        Ok(v as usize)
    };
    let ncols = count(header[0], 1, "ncols")?;
    let nrows = count(header[1], 2, "nrows")?;
    let expected = ncols * nrows;

    // Body tokens keep absolute line numbers.
    let mut elevations = Vec::with_capacity(expected);
    let mut last = (HEADER_KEYS.len(), 1);
    for tok in tokens(text).filter(|t| t.line > HEADER_KEYS.len()) {
        if elevations.len() == expected {
            return Err(parse_err(
                tok.line,
                tok.column,
                format!("more than {expected} values"),
            ));
        }
        let v = tok.text.parse::<f64>().map_err(|_| {
            parse_err(tok.line, tok.column, format!("`{}` is not a number", tok.text))
        })?;
        elevations.push(v);
        last = (tok.line, tok.column);
    }
    if elevations.len() != expected {
        return Err(parse_err(
            last.0,
            last.1,
            format!("expected {expected} values, found {}", elevations.len()),
        ));
    }

    DemGrid::new(
        ncols, nrows, header[2], header[3], header[4], header[5], elevations,
    )
}

/// Six-line header, then one raster row per line, northernmost first.
/// Numbers use the shortest representation that parses back to the same
/// `f64`.
pub fn write_ascii_grid(grid: &DemGrid) -> String {
    let mut out = String::with_capacity(grid.len() * 8 + 128);
    let _ = writeln!(out, "ncols {}", grid.ncols());
    let _ = writeln!(out, "nrows {}", grid.nrows());
    let _ = writeln!(out, "xllcorner {}", grid.origin_x());
    let _ = writeln!(out, "yllcorner {}", grid.origin_y());
    let _ = writeln!(out, "cellsize {}", grid.cellsize());
    let _ = writeln!(out, "NODATA_value {}", grid.nodata());
    for row in grid.elevations().chunks(grid.ncols()) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}
