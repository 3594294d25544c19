//! Line-oriented text interchange for point clouds and pose trajectories.
//!
//! Lines starting with `#` are comments; blank lines are skipped.
//!
//! * Cloud files: one point per line, `x y z`. An optional `# frame <k>`
//!   comment sets the source frame index.
//! * Trajectory files: one pose per line, `tx ty tz qw qx qy qz`
//!   (translation, then unit quaternion scalar-first).
//! * Depth files: a `width height fx fy cx cy` line, then one row of
//!   `width` depths per image row. Zero marks a missing return.
//! * Mask files: a `width height` line, then rows of `0`/`1`.
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! write → read reproduces every coordinate exactly.

use std::fmt::Write as _;

use nalgebra::Vector3;

use super::{DepthFrame, GeometryError, Intrinsics, MaskFrame, PointCloud, Pose};

fn parse_row(line: &str, lineno: usize, expect: usize) -> Result<Vec<f64>, GeometryError> {
    let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
    let vals = vals.map_err(|e| GeometryError::Parse { line: lineno, message: e.to_string() })?;
    if vals.len() != expect {
        return Err(GeometryError::Parse {
            line: lineno,
            message: format!("expected {expect} fields, found {}", vals.len()),
        });
    }
    Ok(vals)
}

pub fn format_cloud(cloud: &PointCloud) -> String {
    let mut s = format!("# frame {}\n# x y z\n", cloud.source_frame);
    for p in &cloud.points {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    s
}

pub fn parse_cloud(text: &str) -> Result<PointCloud, GeometryError> {
    let mut frame = 0;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(k) = comment.trim().strip_prefix("frame") {
                frame = k.trim().parse().map_err(|_| GeometryError::Parse {
                    line: i + 1,
                    message: format!("bad frame index `{}`", k.trim()),
                })?;
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let v = parse_row(line, i + 1, 3)?;
        points.push(Vector3::new(v[0], v[1], v[2]));
    }
    Ok(PointCloud::new(points, frame))
}

pub fn format_trajectory(poses: &[Pose]) -> String {
    let mut s = String::from("# tx ty tz qw qx qy qz\n");
    for p in poses {
        let t = p.translation();
        let q = p.wxyz();
        let _ = writeln!(s, "{} {} {} {} {} {} {}", t.x, t.y, t.z, q[0], q[1], q[2], q[3]);
    }
    s
}

pub fn parse_trajectory(text: &str) -> Result<Vec<Pose>, GeometryError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v = parse_row(line, i + 1, 7)?;
        let pose = Pose::from_wxyz([v[0], v[1], v[2]], [v[3], v[4], v[5], v[6]])
            .map_err(|e| GeometryError::Parse { line: i + 1, message: e.to_string() })?;
        out.push(pose);
    }
    Ok(out)
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn format_depth(d: &DepthFrame) -> String {
    let k = d.intrinsics;
    let mut s = format!("{} {} {} {} {} {}\n", d.width, d.height, k.fx, k.fy, k.cx, k.cy);
    for row in d.depth.chunks_exact(d.width) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_depth(text: &str) -> Result<DepthFrame, GeometryError> {
    let mut lines = data_lines(text);
    let (n, header) = lines.next().ok_or(GeometryError::Parse { line: 1, message: "empty depth file".into() })?;
    let h = parse_row(header, n, 6)?;
    let (w, ht) = (h[0] as usize, h[1] as usize);
    let intr = Intrinsics::new(h[2], h[3], h[4], h[5]).map_err(|e| GeometryError::Parse { line: n, message: e.to_string() })?;
    let mut depth = Vec::with_capacity(w * ht);
    for (i, line) in lines {
        depth.extend(parse_row(line, i, w)?);
    }
    if depth.len() != w * ht {
        return Err(GeometryError::Parse { line: n, message: format!("expected {ht} rows of depth values") });
    }
    DepthFrame::new(w, ht, depth, intr)
}

pub fn format_mask(m: &MaskFrame) -> String {
    let mut s = format!("{} {}\n", m.width, m.height);
    for row in m.mask.chunks_exact(m.width) {
        let cells: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_mask(text: &str) -> Result<MaskFrame, GeometryError> {
    let mut lines = data_lines(text);
    let (n, header) = lines.next().ok_or(GeometryError::Parse { line: 1, message: "empty mask file".into() })?;
    let h = parse_row(header, n, 2)?;
    let (w, ht) = (h[0] as usize, h[1] as usize);
    let mut mask = Vec::with_capacity(w * ht);
    for (i, line) in lines {
        mask.extend(parse_row(line, i, w)?.into_iter().map(|v| v != 0.0));
    }
    if mask.len() != w * ht {
        return Err(GeometryError::Parse { line: n, message: format!("expected {ht} rows of mask values") });
    }
    MaskFrame::new(w, ht, mask)
}
