use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::pose::{Pose2D, Pose3D};

/// A labelled (or predicted) pose at one timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct TimedPose {
    pub t_us: u64,
    pub pose2d: Pose2D,
    pub pose3d: Option<Pose3D>,
}

fn parse_err(source_name: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source_name.to_string(),
        location: format!("line {line}"),
        message: message.into(),
    }
}

/// Parses an optional float: an empty field means "not visible".
pub(crate) fn opt_f64(field: &str) -> std::result::Result<Option<f64>, String> {
    let f = field.trim();
    if f.is_empty() || f.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    f.parse::<f64>()
        .map(Some)
        .map_err(|e| format!("{f:?}: {e}"))
}

/// Reads `t_us,joint_id,u,v[,x,y,z]`. Joints absent at a timestamp, or with
/// empty coordinates, are invisible.
pub fn parse_pose_csv(text: &str, joints: usize, source_name: &str) -> Result<Vec<TimedPose>> {
    let mut by_t: BTreeMap<u64, TimedPose> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("t_us")) {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 && f.len() != 7 {
            return Err(parse_err(
                source_name,
                n,
                format!("expected 4 or 7 fields, got {}", f.len()),
            ));
        }
        let t_us: u64 = f[0]
            .trim()
            .parse()
            .map_err(|e| parse_err(source_name, n, format!("t_us: {e}")))?;
        let j: usize = f[1]
            .trim()
            .parse()
            .map_err(|e| parse_err(source_name, n, format!("joint_id: {e}")))?;
        if j >= joints {
            return Err(parse_err(
                source_name,
                n,
                format!("joint_id {j} >= {joints}"),
            ));
        }
        let num = |s: &str| opt_f64(s).map_err(|m| parse_err(source_name, n, m));
        let entry = by_t.entry(t_us).or_insert_with(|| TimedPose {
            t_us,
            pose2d: Pose2D::invisible(joints),
            pose3d: None,
        });
        if let (Some(u), Some(v)) = (num(f[2])?, num(f[3])?) {
            entry.pose2d.coords[j] = [u, v];
            entry.pose2d.visible[j] = true;
        }
        if f.len() == 7 {
            let p3 = entry
                .pose3d
                .get_or_insert_with(|| Pose3D::invisible(joints));
            if let (Some(x), Some(y), Some(z)) = (num(f[4])?, num(f[5])?, num(f[6])?) {
                p3.coords[j] = [x, y, z];
                p3.visible[j] = true;
            }
        }
    }
    Ok(by_t.into_values().collect())
}

pub fn write_pose_csv(poses: &[TimedPose]) -> String {
    let with_3d = poses.iter().any(|p| p.pose3d.is_some());
    let mut out = String::from(if with_3d {
        "t_us,joint_id,u,v,x,y,z\n"
    } else {
        "t_us,joint_id,u,v\n"
    });
    for p in poses {
        for j in 0..p.pose2d.joints() {
            let uv = if p.pose2d.visible[j] {
                format!("{},{}", p.pose2d.coords[j][0], p.pose2d.coords[j][1])
            } else {
                ",".to_string()
            };
            out.push_str(&format!("{},{},{}", p.t_us, j, uv));
            if with_3d {
                match &p.pose3d {
                    Some(p3) if p3.visible[j] => {
                        let [x, y, z] = p3.coords[j];
                        out.push_str(&format!(",{x},{y},{z}"));
                    }
                    _ => out.push_str(",,,"),
                }
            }
            out.push('\n');
        }
    }
    out
}
