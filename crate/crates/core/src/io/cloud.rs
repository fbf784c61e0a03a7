//! Point-cloud file: line-oriented text, one record per decoded point.
//!
//! Lines are keyword-led. `rig` appears once before any point and embeds
//! the camera-projector geometry so downstream stages need no side channel.
//! Each `pt` line carries image position, the matched projector column, the
//! 3D point, and the optional surface fields; `pair` lines that follow it
//! list the point's (incident, observed) Stokes stack in order.
//!
//! ```text
//! rig  width height f_c cx cy f_p cx_p baseline
//! pt   row cam_u proj_col X Y Z nx ny nz c_s c_d md10 md20 K_b
//! pair i_s0 i_s1 i_s2 o_s0 o_s1 o_s2
//! ```
//!
//! Absent fields are the literal token `NA`, never zero. All stored numbers
//! are finite; floats print with the shortest decimal form that parses back
//! to the same bits, so a write-read cycle is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::decoder::{Correspondence, StokesPair};
use crate::polarization::StokesVector;
use crate::simulator::Rig;

use super::IoError;

/// One record of a cloud file. `normal` and the reflectance fields start
/// absent and are filled by later pipeline stages.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudPoint {
    pub row: usize,
    /// Sub-pixel image column of the decoded stripe or pixel.
    pub cam_u: f64,
    /// Sub-pixel projector column it matched.
    pub proj_col: f64,
    pub position: [f64; 3],
    pub normal: Option<[f64; 3]>,
    pub c_s: Option<f64>,
    pub c_d: Option<f64>,
    pub md10: Option<f64>,
    pub md20: Option<f64>,
    pub k_b: Option<f64>,
    pub pairs: Vec<StokesPair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudFile {
    pub rig: Rig,
    pub points: Vec<CloudPoint>,
}

impl CloudFile {
    pub fn from_correspondences(rig: &Rig, corrs: &[Correspondence]) -> Self {
        let points = corrs
            .iter()
            .map(|c| CloudPoint {
                row: c.row,
                cam_u: c.image_u,
                proj_col: c.proj_col,
                position: c.point,
                normal: None,
                c_s: None,
                c_d: None,
                md10: None,
                md20: None,
                k_b: None,
                pairs: c.pairs.clone(),
            })
            .collect();
        Self {
            rig: rig.clone(),
            points,
        }
    }

    /// Rebuild correspondences for re-running decomposition on a loaded
    /// cloud. Stripe and symbol indices are not stored in the file and come
    /// back zero; depth is the stored Z.
    pub fn to_correspondences(&self) -> Vec<Correspondence> {
        self.points
            .iter()
            .map(|p| Correspondence {
                row: p.row,
                image_u: p.cam_u,
                stripe: 0,
                symbol: 0,
                proj_col: p.proj_col,
                depth: p.position[2],
                point: p.position,
                pairs: p.pairs.clone(),
            })
            .collect()
    }
}

fn push_f64(line: &mut String, v: f64) -> Result<(), IoError> {
    if !v.is_finite() {
        return Err(IoError::invalid(format!(
            "cloud files hold finite numbers only, got {v}"
        )));
    }
    write!(line, " {v}").unwrap();
    Ok(())
}

fn push_opt(line: &mut String, v: Option<f64>) -> Result<(), IoError> {
    match v {
        Some(v) => push_f64(line, v),
        None => {
            line.push_str(" NA");
            Ok(())
        }
    }
}

pub fn encode_cloud(cloud: &CloudFile) -> Result<String, IoError> {
    let mut out = String::new();
    let r = &cloud.rig;
    out.push_str(&format!("rig {} {}", r.width, r.height));
    for v in [r.f_c, r.cx, r.cy, r.f_p, r.cx_p, r.baseline] {
        push_f64(&mut out, v)?;
    }
    out.push('\n');
    for p in &cloud.points {
        let mut line = format!("pt {}", p.row);
        push_f64(&mut line, p.cam_u)?;
        push_f64(&mut line, p.proj_col)?;
        for v in p.position {
            push_f64(&mut line, v)?;
        }
        match p.normal {
            Some(n) => {
                for v in n {
                    push_f64(&mut line, v)?;
                }
            }
            None => line.push_str(" NA NA NA"),
        }
        for v in [p.c_s, p.c_d, p.md10, p.md20, p.k_b] {
            push_opt(&mut line, v)?;
        }
        out.push_str(&line);
        out.push('\n');
        for pair in &p.pairs {
            let mut line = String::from("pair");
            for s in [&pair.incident, &pair.observed] {
                push_f64(&mut line, s.s0)?;
                push_f64(&mut line, s.s1)?;
                push_f64(&mut line, s.s2)?;
            }
            out.push_str(&line);
            out.push('\n');
        }
    }
    Ok(out)
}

struct Tokens<'a> {
    line: usize,
    toks: std::str::SplitWhitespace<'a>,
    col: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str, IoError> {
        self.col += 1;
        self.toks.next().ok_or_else(|| {
            IoError::text(
                self.line,
                format!("missing field {} ({what})", self.col),
            )
        })
    }

    fn f64(&mut self, what: &str) -> Result<f64, IoError> {
        let tok = self.next(what)?;
        let v: f64 = tok.parse().map_err(|_| {
            IoError::text(
                self.line,
                format!("field {} ({what}): bad number {tok:?}", self.col),
            )
        })?;
        if !v.is_finite() {
            return Err(IoError::text(
                self.line,
                format!("field {} ({what}): {v} is not finite", self.col),
            ));
        }
        Ok(v)
    }

    fn opt_f64(&mut self, what: &str) -> Result<Option<f64>, IoError> {
        let save = self.toks.clone();
        let tok = self.next(what)?;
        if tok == "NA" {
            return Ok(None);
        }
        self.toks = save;
        self.col -= 1;
        self.f64(what).map(Some)
    }

    fn usize(&mut self, what: &str) -> Result<usize, IoError> {
        let tok = self.next(what)?;
        tok.parse().map_err(|_| {
            IoError::text(
                self.line,
                format!("field {} ({what}): bad index {tok:?}", self.col),
            )
        })
    }

    fn done(mut self) -> Result<(), IoError> {
        if self.toks.next().is_some() {
            return Err(IoError::text(
                self.line,
                format!("trailing tokens after field {}", self.col),
            ));
        }
        Ok(())
    }
}

pub fn parse_cloud(text: &str) -> Result<CloudFile, IoError> {
    let mut rig: Option<Rig> = None;
    let mut points: Vec<CloudPoint> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut toks = Tokens {
            line: line_no,
            toks: trimmed.split_whitespace(),
            col: 0,
        };
        match toks.next("keyword")? {
            "rig" => {
                if rig.is_some() {
                    return Err(IoError::text(line_no, "duplicate rig line"));
                }
                let r = Rig {
                    width: toks.usize("width")?,
                    height: toks.usize("height")?,
                    f_c: toks.f64("f_c")?,
                    cx: toks.f64("cx")?,
                    cy: toks.f64("cy")?,
                    f_p: toks.f64("f_p")?,
                    cx_p: toks.f64("cx_p")?,
                    baseline: toks.f64("baseline")?,
                };
                toks.done()?;
                rig = Some(r);
            }
            "pt" => {
                if rig.is_none() {
                    return Err(IoError::text(line_no, "pt before rig line"));
                }
                let row = toks.usize("row")?;
                let cam_u = toks.f64("cam_u")?;
                let proj_col = toks.f64("proj_col")?;
                let position = [toks.f64("X")?, toks.f64("Y")?, toks.f64("Z")?];
                let nx = toks.opt_f64("nx")?;
                let ny = toks.opt_f64("ny")?;
                let nz = toks.opt_f64("nz")?;
                let normal = match (nx, ny, nz) {
                    (Some(x), Some(y), Some(z)) => Some([x, y, z]),
                    (None, None, None) => None,
                    _ => {
                        return Err(IoError::text(
                            line_no,
                            "normal components must all be numbers or all NA",
                        ))
                    }
                };
                let c_s = toks.opt_f64("c_s")?;
                let c_d = toks.opt_f64("c_d")?;
                let md10 = toks.opt_f64("md10")?;
                let md20 = toks.opt_f64("md20")?;
                let k_b = toks.opt_f64("K_b")?;
                toks.done()?;
                points.push(CloudPoint {
                    row,
                    cam_u,
                    proj_col,
                    position,
                    normal,
                    c_s,
                    c_d,
                    md10,
                    md20,
                    k_b,
                    pairs: Vec::new(),
                });
            }
            "pair" => {
                let point = points.last_mut().ok_or_else(|| {
                    IoError::text(line_no, "pair line before any pt line")
                })?;
                let mut s = [0.0; 6];
                for (k, slot) in s.iter_mut().enumerate() {
                    *slot = toks.f64(["i_s0", "i_s1", "i_s2", "o_s0", "o_s1", "o_s2"][k])?;
                }
                toks.done()?;
                point.pairs.push(StokesPair {
                    incident: StokesVector::new(s[0], s[1], s[2], 0.0),
                    observed: StokesVector::new(s[3], s[4], s[5], 0.0),
                });
            }
            kw => {
                return Err(IoError::text(line_no, format!("unknown keyword {kw:?}")));
            }
        }
    }
    let rig = rig.ok_or_else(|| IoError::invalid("cloud file has no rig line"))?;
    Ok(CloudFile { rig, points })
}

pub fn write_cloud(path: &Path, cloud: &CloudFile) -> Result<(), IoError> {
    fs::write(path, encode_cloud(cloud)?)?;
    Ok(())
}

pub fn read_cloud(path: &Path) -> Result<CloudFile, IoError> {
    parse_cloud(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::test_rig;

    fn sample_cloud() -> CloudFile {
        let rig = test_rig();
        let pair = |a: f64| StokesPair {
            incident: StokesVector::new(1.0, a.cos(), a.sin(), 0.0),
            observed: StokesVector::new(0.5, 0.25 * a.cos(), -0.25 * a.sin(), 0.0),
        };
        CloudFile {
            rig,
            points: vec![
                CloudPoint {
                    row: 4,
                    cam_u: 17.25,
                    proj_col: 1500.5,
                    position: [0.01, -0.02, 1.0],
                    normal: None,
                    c_s: None,
                    c_d: None,
                    md10: None,
                    md20: None,
                    k_b: None,
                    pairs: vec![pair(0.3), pair(1.1)],
                },
                CloudPoint {
                    row: 9,
                    cam_u: 40.0,
                    proj_col: 1433.0,
                    position: [0.1, 0.0, 0.9],
                    normal: Some([0.0, 0.0, 1.0]),
                    c_s: Some(0.2),
                    c_d: Some(0.55),
                    md10: Some(0.01),
                    md20: Some(-0.025),
                    k_b: Some(0.8),
                    pairs: vec![pair(2.0)],
                },
            ],
        }
    }

    #[test]
    fn clouds_round_trip_exactly() {
        let cloud = sample_cloud();
        let text = encode_cloud(&cloud).unwrap();
        let back = parse_cloud(&text).unwrap();
        assert_eq!(back, cloud);
        assert_eq!(encode_cloud(&back).unwrap(), text);
    }

    #[test]
    fn absent_fields_stay_absent_not_zero() {
        let text = encode_cloud(&sample_cloud()).unwrap();
        let first_pt = text.lines().find(|l| l.starts_with("pt")).unwrap();
        assert!(first_pt.ends_with("NA NA NA NA NA NA NA NA"));
        let back = parse_cloud(&text).unwrap();
        assert_eq!(back.points[0].normal, None);
        assert_eq!(back.points[0].c_s, None);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cloud = sample_cloud();
        let text = encode_cloud(&cloud).unwrap();

        let broken = text.replacen("1500.5", "15xx.5", 1);
        match parse_cloud(&broken) {
            Err(IoError::Text { line: 2, .. }) => {}
            other => panic!("want line-2 error, got {other:?}"),
        }

        let orphan = "pair 1 0 0 1 0 0\n";
        assert!(matches!(
            parse_cloud(orphan),
            Err(IoError::Text { line: 1, .. })
        ));

        assert!(matches!(
            parse_cloud("pt 0 1 2 3 4 5 NA NA NA NA NA NA NA NA\n"),
            Err(IoError::Text { line: 1, .. })
        ));

        assert!(matches!(parse_cloud(""), Err(IoError::Invalid { .. })));
    }

    #[test]
    fn non_finite_values_are_refused_on_write() {
        let mut cloud = sample_cloud();
        cloud.points[0].position[2] = f64::NAN;
        assert!(matches!(encode_cloud(&cloud), Err(IoError::Invalid { .. })));
    }

    #[test]
    fn correspondence_conversion_preserves_geometry_and_stacks() {
        let cloud = sample_cloud();
        let corrs = cloud.to_correspondences();
        assert_eq!(corrs.len(), 2);
        assert_eq!(corrs[0].depth, cloud.points[0].position[2]);
        assert_eq!(corrs[0].pairs, cloud.points[0].pairs);
        let back = CloudFile::from_correspondences(&cloud.rig, &corrs);
        assert_eq!(back.points[1].position, cloud.points[1].position);
        assert_eq!(back.points[1].normal, None);
    }
}
