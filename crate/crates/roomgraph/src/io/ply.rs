//! ASCII PLY point clouds: `x y z` per vertex plus an optional integer
//! `label` property.

use std::fmt::Write;
use std::path::Path;

use nalgebra::Vector3;
use roomgraph_core::geometry::PointCloud;

use super::{read_text, write_file, IoError};

const INTEGER_TYPES: [&str; 12] = [
    "char", "uchar", "short", "ushort", "int", "uint", "int8", "uint8", "int16", "uint16", "int32", "uint32",
];

pub fn format(cloud: &PointCloud) -> String {
    let mut out = String::from("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.labels().is_some() {
        out.push_str("property int label\n");
    }
    out.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(out, "{} {} {}", p.x, p.y, p.z);
        if let Some(labels) = cloud.labels() {
            let _ = write!(out, " {}", labels[i]);
        }
        out.push('\n');
    }
    out
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, String)>,
}

/// Parses an ASCII PLY file. Elements other than `vertex` and properties
/// other than `x`, `y`, `z` and `label` are skipped.
pub fn parse(text: &str) -> Result<PointCloud, (usize, String)> {
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err((1, "missing `ply` magic".into())),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut ascii = false;
    loop {
        let (line, content) = lines.next().ok_or((0, "header is not terminated".to_string()))?;
        let tokens: Vec<&str> = content.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => ascii = true,
            ["format", other, ..] => return Err((line, format!("unsupported format `{other}`"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| (line, format!("bad count `{count}`")))?,
                properties: Vec::new(),
            }),
            ["property", "list", ..] => {
                let e = elements
                    .last_mut()
                    .ok_or((line, "property before element".to_string()))?;
                e.properties
                    .push(("list".into(), tokens.last().unwrap_or(&"").to_string()));
            }
            ["property", ty, name] => {
                let e = elements
                    .last_mut()
                    .ok_or((line, "property before element".to_string()))?;
                e.properties.push((ty.to_string(), name.to_string()));
            }
            _ => return Err((line, format!("unexpected header line `{content}`"))),
        }
    }
    if !ascii {
        return Err((1, "format line missing".into()));
    }

    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut has_labels = false;
    for element in &elements {
        if element.name != "vertex" {
            for _ in 0..element.count {
                lines
                    .next()
                    .ok_or((0, format!("truncated `{}` element", element.name)))?;
            }
            continue;
        }
        let find = |n: &str| element.properties.iter().position(|(_, p)| p == n);
        let (Some(ix), Some(iy), Some(iz)) = (find("x"), find("y"), find("z")) else {
            return Err((0, "vertex element lacks x, y or z".into()));
        };
        let il = find("label");
        if let Some(i) = il {
            if !INTEGER_TYPES.contains(&element.properties[i].0.as_str()) {
                return Err((0, "label property must be an integer type".into()));
            }
            has_labels = true;
        }
        if element.properties.iter().any(|(t, _)| t == "list") {
            return Err((0, "list properties on vertices are not supported".into()));
        }
        for _ in 0..element.count {
            let (line, content) = lines.next().ok_or((0, "fewer vertices than declared".to_string()))?;
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields.len() != element.properties.len() {
                return Err((
                    line,
                    format!("expected {} values, got {}", element.properties.len(), fields.len()),
                ));
            }
            let num = |i: usize| {
                fields[i]
                    .parse::<f64>()
                    .map_err(|_| (line, format!("bad number `{}`", fields[i])))
            };
            points.push(Vector3::new(num(ix)?, num(iy)?, num(iz)?));
            if let Some(i) = il {
                labels.push(
                    fields[i]
                        .parse::<u32>()
                        .map_err(|_| (line, format!("bad label `{}`", fields[i])))?,
                );
            }
        }
    }
    let cloud = if has_labels {
        PointCloud::with_labels(points, labels)
    } else {
        PointCloud::new(points)
    };
    cloud.map_err(|e| (0, e.to_string()))
}

pub fn read(path: &Path) -> Result<PointCloud, IoError> {
    parse(&read_text(path)?).map_err(|(line, reason)| IoError::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    })
}

pub fn write(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    write_file(path, format(cloud))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labeled_roundtrip_is_exact() {
        let pts = vec![Vector3::new(0.1, -2.5, 1e-9), Vector3::new(3.0, 0.0, 7.125)];
        let cloud = PointCloud::with_labels(pts, vec![4, 0]).unwrap();
        assert_eq!(parse(&format(&cloud)).unwrap(), cloud);
        let plain = cloud.without_labels();
        assert_eq!(parse(&format(&plain)).unwrap(), plain);
    }

    #[test]
    fn foreign_headers_are_accepted() {
        let text = "ply\nformat ascii 1.0\ncomment made elsewhere\nelement vertex 2\n\
                    property float x\nproperty float y\nproperty float z\nproperty uchar red\n\
                    property uint label\nelement face 1\nproperty list uchar int vertex_indices\n\
                    end_header\n0 0 0 255 1\n1 2 3 0 2\n3 0 1 1\n";
        let cloud = parse(text).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.labels(), Some(&[1, 2][..]));
        assert_eq!(cloud.points()[1], Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(parse("plx\n").is_err());
        assert!(parse("ply\nformat binary_little_endian 1.0\nend_header\n").is_err());
        let short = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n\
                     property float z\nend_header\n0 0 0\n";
        assert!(parse(short).is_err());
        let bad = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n\
                   property float z\nend_header\n0 nan? 0\n";
        assert_eq!(parse(bad).unwrap_err().0, 8);
    }
}
