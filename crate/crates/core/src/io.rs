//! Point-cloud file formats: ASCII PLY (`x y z` as float64) and plain XYZ text.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::Vec3;

#[derive(Debug, Error)]
pub enum CloudIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
}

fn io_err(path: &Path, source: std::io::Error) -> CloudIoError {
    CloudIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a point cloud, dispatching on the extension (`.ply` or anything else as XYZ).
pub fn read_cloud(path: &Path) -> Result<Vec<Vec3>, CloudIoError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let is_ply = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("ply"))
        .unwrap_or(false);
    if is_ply {
        parse_ply(&text, &path.display().to_string())
    } else {
        parse_xyz(&text, &path.display().to_string())
    }
}

pub fn parse_xyz(text: &str, name: &str) -> Result<Vec<Vec3>, CloudIoError> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        points.push(parse_xyz_line(line, name, i + 1)?);
    }
    Ok(points)
}

fn parse_xyz_line(line: &str, name: &str, lineno: usize) -> Result<Vec3, CloudIoError> {
    let mut it = line.split_whitespace().map(str::parse::<f64>);
    let mut next = || -> Result<f64, CloudIoError> {
        match it.next() {
            Some(Ok(v)) if v.is_finite() => Ok(v),
            Some(Ok(_)) => Err(CloudIoError::Parse {
                path: name.to_string(),
                line: lineno,
                msg: "non-finite coordinate".into(),
            }),
            Some(Err(e)) => Err(CloudIoError::Parse {
                path: name.to_string(),
                line: lineno,
                msg: e.to_string(),
            }),
            None => Err(CloudIoError::Parse {
                path: name.to_string(),
                line: lineno,
                msg: "expected 3 coordinates".into(),
            }),
        }
    };
    Ok(Vec3::new(next()?, next()?, next()?))
}

pub fn parse_ply(text: &str, name: &str) -> Result<Vec<Vec3>, CloudIoError> {
    let perr = |line: usize, msg: &str| CloudIoError::Parse {
        path: name.to_string(),
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(perr(1, "missing 'ply' magic")),
    }
    let mut count = None;
    for (i, line) in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(perr(i + 1, "only ascii PLY is supported"))
            }
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|e| perr(i + 1, &e.to_string()))?)
            }
            ["end_header"] => break,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| perr(0, "no vertex element"))?;
    let mut points = Vec::with_capacity(count);
    for (i, line) in lines {
        if points.len() == count {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        points.push(parse_xyz_line(line, name, i + 1)?);
    }
    if points.len() != count {
        return Err(perr(0, "fewer vertices than declared"));
    }
    Ok(points)
}

pub fn write_ply(path: &Path, points: &[Vec3]) -> Result<(), CloudIoError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| -> std::io::Result<()> {
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", points.len())?;
        writeln!(w, "property double x")?;
        writeln!(w, "property double y")?;
        writeln!(w, "property double z")?;
        writeln!(w, "end_header")?;
        for p in points {
            writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
        }
        w.flush()
    })();
    res.map_err(|e| io_err(path, e))
}

pub fn write_xyz(path: &Path, points: &[Vec3]) -> Result<(), CloudIoError> {
    let mut s = String::with_capacity(points.len() * 24);
    for p in points {
        s.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    fs::write(path, s).map_err(|e| io_err(path, e))
}
