//! Ground-truth table: CSV with one row per pixel, row-major.
//!
//! Columns: `x,y,depth,nx,ny,nz,proj_col,lit,c_s,c_d,rho_d,phi_d_deg`.
//! Pixels with no surface hold `NA` in every float column. `lit` is 1 where
//! the projector illuminated the pixel and 0 elsewhere; the full incident
//! Stokes vector is not stored, so a reloaded table carries a unit `s0`
//! placeholder for lit pixels. That preserves the lit-pixel census used by
//! the evaluation metrics, which never read the incident polarization.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::simulator::GroundTruth;

use super::IoError;

const HEADER: &str = "x,y,depth,nx,ny,nz,proj_col,lit,c_s,c_d,rho_d,phi_d_deg";

fn push_cell(line: &mut String, v: f64) {
    if v.is_nan() {
        line.push_str(",NA");
    } else {
        write!(line, ",{v}").unwrap();
    }
}

pub fn encode_truth(gt: &GroundTruth) -> String {
    let mut out = String::with_capacity(32 * gt.width * gt.height);
    out.push_str(HEADER);
    out.push('\n');
    for y in 0..gt.height {
        for x in 0..gt.width {
            let i = gt.at(x, y);
            let mut line = format!("{x},{y}");
            push_cell(&mut line, gt.depth[i]);
            for c in 0..3 {
                push_cell(&mut line, gt.normal[i][c]);
            }
            push_cell(&mut line, gt.proj_col[i]);
            line.push(',');
            line.push(if gt.incident[i][0] > 0.0 { '1' } else { '0' });
            for c in 0..4 {
                push_cell(&mut line, gt.lobes[i][c]);
            }
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

fn parse_cell(tok: &str, line: usize, what: &str) -> Result<f64, IoError> {
    if tok == "NA" {
        return Ok(f64::NAN);
    }
    let v: f64 = tok
        .parse()
        .map_err(|_| IoError::text(line, format!("{what}: bad number {tok:?}")))?;
    if v.is_nan() {
        return Err(IoError::text(
            line,
            format!("{what}: literal NaN, want the NA sentinel"),
        ));
    }
    Ok(v)
}

pub fn parse_truth(text: &str) -> Result<GroundTruth, IoError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| IoError::text(1, "empty file, want a header row"))?;
    if header.trim() != HEADER {
        return Err(IoError::text(1, format!("bad header {header:?}")));
    }

    let mut cells: Vec<(usize, usize, Vec<f64>, bool)> = Vec::new();
    let (mut width, mut height) = (0usize, 0usize);
    for (i, raw) in lines {
        let line_no = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let toks: Vec<&str> = trimmed.split(',').collect();
        if toks.len() != 12 {
            return Err(IoError::text(
                line_no,
                format!("{} columns, want 12", toks.len()),
            ));
        }
        let x: usize = toks[0]
            .parse()
            .map_err(|_| IoError::text(line_no, format!("x: bad index {:?}", toks[0])))?;
        let y: usize = toks[1]
            .parse()
            .map_err(|_| IoError::text(line_no, format!("y: bad index {:?}", toks[1])))?;
        let lit = match toks[7] {
            "1" => true,
            "0" => false,
            other => {
                return Err(IoError::text(
                    line_no,
                    format!("lit: {other:?}, want 0 or 1"),
                ))
            }
        };
        let names = [
            "depth",
            "nx",
            "ny",
            "nz",
            "proj_col",
            "c_s",
            "c_d",
            "rho_d",
            "phi_d_deg",
        ];
        let mut vals = Vec::with_capacity(9);
        for (k, &tok) in toks[2..7].iter().chain(toks[8..].iter()).enumerate() {
            vals.push(parse_cell(tok, line_no, names[k])?);
        }
        width = width.max(x + 1);
        height = height.max(y + 1);
        cells.push((x, y, vals, lit));
    }
    if cells.len() != width * height {
        return Err(IoError::invalid(format!(
            "{} pixel rows do not tile a {width} x {height} grid",
            cells.len()
        )));
    }

    let n = width * height;
    let mut gt = GroundTruth {
        width,
        height,
        depth: vec![f64::NAN; n],
        normal: vec![[f64::NAN; 3]; n],
        proj_col: vec![f64::NAN; n],
        lobes: vec![[f64::NAN; 4]; n],
        incident: vec![[0.0; 3]; n],
    };
    let mut seen = vec![false; n];
    for (x, y, v, lit) in cells {
        let i = y * width + x;
        if seen[i] {
            return Err(IoError::invalid(format!("pixel ({x}, {y}) listed twice")));
        }
        seen[i] = true;
        gt.depth[i] = v[0];
        gt.normal[i] = [v[1], v[2], v[3]];
        gt.proj_col[i] = v[4];
        gt.lobes[i] = [v[5], v[6], v[7], v[8]];
        gt.incident[i] = if lit { [1.0, 0.0, 0.0] } else { [0.0; 3] };
    }
    Ok(gt)
}

pub fn write_truth(path: &Path, gt: &GroundTruth) -> Result<(), IoError> {
    fs::write(path, encode_truth(gt))?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<GroundTruth, IoError> {
    parse_truth(&fs::read_to_string(path)?)
}
