//! `.xyzl` text clouds: one `x y z [label]` point per line, `#` comments.

use std::fmt::Write as _;
use std::path::Path;

use super::PointCloud;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn parse(text: &str, path: Option<&Path>) -> Result<PointCloud> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.map(Path::to_path_buf),
        line,
        message,
    };
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    let mut labelled: Option<bool> = None;
    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(err(line_no, format!("expected 3 or 4 fields, found {}", fields.len())));
        }
        for f in &fields[..3] {
            let v: f64 = f
                .parse()
                .map_err(|_| err(line_no, format!("invalid coordinate `{f}`")))?;
            if !v.is_finite() {
                return Err(err(line_no, format!("non-finite coordinate `{f}`")));
            }
            coords.push(v);
        }
        let has_label = fields.len() == 4;
        match labelled {
            None => labelled = Some(has_label),
            Some(prev) if prev != has_label => {
                return Err(err(line_no, "labels must be given for every point or none".into()))
            }
            _ => {}
        }
        if has_label {
            let l: usize = fields[3]
                .parse()
                .map_err(|_| err(line_no, format!("invalid label `{}`", fields[3])))?;
            labels.push(l);
        }
    }
    if coords.is_empty() {
        return Err(err(0, "file contains no points".into()));
    }
    let n = coords.len() / 3;
    let positions = Tensor::new(vec![n, 3], coords)?;
    PointCloud::from_positions(positions, labelled.unwrap_or(false).then_some(labels))
}

pub fn read(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, Some(path))
}

/// Formats with shortest round-trip float notation, so parse(format(c))
/// reproduces positions exactly.
pub fn format(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for i in 0..cloud.len() {
        let [x, y, z] = cloud.point(i);
        let _ = write!(out, "{x:?} {y:?} {z:?}");
        if let Some(l) = cloud.labels() {
            let _ = write!(out, " {}", l[i]);
        }
        out.push('\n');
    }
    out
}

pub fn write(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, format(cloud)).map_err(|e| Error::io(path, e))
}

/// Every `*.xyzl` file directly inside `dir`, in file-name order.
pub fn read_dir(dir: &Path) -> Result<Vec<PointCloud>> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "xyzl") {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::Parse {
            path: Some(dir.to_path_buf()),
            line: 0,
            message: "no .xyzl files found".into(),
        });
    }
    paths.sort();
    paths.iter().map(|p| read(p)).collect()
}
