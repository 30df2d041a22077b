use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera: 3×4 projection matrix plus image size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraFile", into = "CameraFile")]
pub struct CameraModel {
    pub p: [[f64; 4]; 3],
    pub width: u32,
    pub height: u32,
    pub name: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraFile {
    #[serde(rename = "P")]
    p: Vec<f64>,
    width: u32,
    height: u32,
    #[serde(default)]
    name: String,
}

impl TryFrom<CameraFile> for CameraModel {
    type Error = Error;

    fn try_from(f: CameraFile) -> Result<Self> {
        if f.p.len() != 12 {
            return Err(Error::config(format!(
                "camera P has {} entries, need 12",
                f.p.len()
            )));
        }
        let mut p = [[0.0; 4]; 3];
        for (i, v) in f.p.into_iter().enumerate() {
            p[i / 4][i % 4] = v;
        }
        CameraModel::new(p, f.width, f.height, f.name)
    }
}

impl From<CameraModel> for CameraFile {
    fn from(c: CameraModel) -> Self {
        CameraFile {
            p: c.p.iter().flatten().copied().collect(),
            width: c.width,
            height: c.height,
            name: c.name,
        }
    }
}

impl CameraModel {
    pub fn new(p: [[f64; 4]; 3], width: u32, height: u32, name: impl Into<String>) -> Result<Self> {
        if p.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("camera P has non-finite entries"));
        }
        let mut a = [[0.0; 4]; 4];
        a[..3].copy_from_slice(&p);
        let (sigma, _) = jacobi_svd(a);
        let max = sigma.iter().cloned().fold(0.0, f64::max);
        let rank = sigma.iter().filter(|&&s| s > max * 1e-12).count();
        if rank != 3 {
            return Err(Error::config(format!("camera P has rank {rank}, need 3")));
        }
        Ok(Self {
            p,
            width,
            height,
            name: name.into(),
        })
    }

    /// `P = K [R | t]`.
    pub fn from_krt(
        k: [[f64; 3]; 3],
        r: [[f64; 3]; 3],
        t: [f64; 3],
        width: u32,
        height: u32,
        name: impl Into<String>,
    ) -> Result<Self> {
        let mut rt = [[0.0; 4]; 3];
        for i in 0..3 {
            rt[i][..3].copy_from_slice(&r[i]);
            rt[i][3] = t[i];
        }
        let mut p = [[0.0; 4]; 3];
        for i in 0..3 {
            for j in 0..4 {
                p[i][j] = (0..3).map(|m| k[i][m] * rt[m][j]).sum();
            }
        }
        Self::new(p, width, height, name)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            source_name: path.display().to_string(),
            location: format!("line {}", e.line()),
            message: e.to_string(),
        })
    }

    /// Camera centre: the right null vector of P, dehomogenized.
    pub fn center(&self) -> Option<[f64; 3]> {
        let mut a = [[0.0; 4]; 4];
        a[..3].copy_from_slice(&self.p);
        let (sigma, v) = jacobi_svd(a);
        let c = smallest_vector(&sigma, &v);
        (c[3].abs() > 1e-300).then(|| [c[0] / c[3], c[1] / c[3], c[2] / c[3]])
    }
}

/// Homogeneous projection followed by dehomogenization.
pub fn project(point: [f64; 3], cam: &CameraModel) -> Result<[f64; 2]> {
    let x = [point[0], point[1], point[2], 1.0];
    let row = |r: &[f64; 4]| r.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
    let (u, v, w) = (row(&cam.p[0]), row(&cam.p[1]), row(&cam.p[2]));
    if w.abs() <= f64::EPSILON * (u.abs() + v.abs()).max(1.0) {
        return Err(Error::Projection(format!(
            "point {point:?} lies on the principal plane of camera {:?}",
            cam.name
        )));
    }
    Ok([u / w, v / w])
}

/// Two-view DLT: stacks `u·P3 − P1` and `v·P3 − P2` for both views and takes
/// the right singular vector of the smallest singular value.
pub fn triangulate(obs: &[([f64; 2], &CameraModel)]) -> Result<[f64; 3]> {
    if obs.len() != 2 {
        return Err(Error::Triangulation(format!(
            "need exactly 2 views, got {}",
            obs.len()
        )));
    }
    let (c0, c1) = (obs[0].1.center(), obs[1].1.center());
    match (c0, c1) {
        (Some(a), Some(b)) => {
            let scale = norm3(&a).max(norm3(&b)).max(1.0);
            let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
            if norm3(&d) <= 1e-9 * scale {
                return Err(Error::Triangulation("camera centres coincide".into()));
            }
        }
        _ => return Err(Error::Triangulation("camera centre at infinity".into())),
    }
    let mut a = [[0.0; 4]; 4];
    for (i, ((u, v), p)) in obs.iter().map(|(uv, c)| ((uv[0], uv[1]), &c.p)).enumerate() {
        for j in 0..4 {
            a[2 * i][j] = u * p[2][j] - p[0][j];
            a[2 * i + 1][j] = v * p[2][j] - p[1][j];
        }
    }
    for row in &mut a {
        let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::Triangulation("degenerate observation row".into()));
        }
        row.iter_mut().for_each(|x| *x /= n);
    }
    let (sigma, v) = jacobi_svd(a);
    let mut order = [0, 1, 2, 3];
    order.sort_by(|&i, &j| sigma[i].total_cmp(&sigma[j]));
    if sigma[order[1]] <= 1e-10 * sigma[order[3]] {
        return Err(Error::Triangulation(
            "rays do not determine a unique point".into(),
        ));
    }
    let x = smallest_vector(&sigma, &v);
    let w = x[3];
    if w.abs() <= 1e-12 * norm3(&[x[0], x[1], x[2]]) {
        return Err(Error::Triangulation("rays are parallel".into()));
    }
    Ok([x[0] / w, x[1] / w, x[2] / w])
}

fn norm3(a: &[f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn smallest_vector(sigma: &[f64; 4], v: &[[f64; 4]; 4]) -> [f64; 4] {
    let k = (0..4)
        .min_by(|&i, &j| sigma[i].total_cmp(&sigma[j]))
        .unwrap();
    [v[0][k], v[1][k], v[2][k], v[3][k]]
}

/// One-sided Jacobi SVD of a 4×4 matrix. Returns the singular values
/// (unsorted) and `V` whose column `k` pairs with `sigma[k]`.
pub fn jacobi_svd(mut a: [[f64; 4]; 4]) -> ([f64; 4], [[f64; 4]; 4]) {
    let mut v = [[0.0; 4]; 4];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..3 {
            for q in p + 1..4 {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for row in &a {
                    alpha += row[p] * row[p];
                    beta += row[q] * row[q];
                    gamma += row[p] * row[q];
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut a, &mut v] {
                    for row in m.iter_mut() {
                        let (xp, xq) = (row[p], row[q]);
                        row[p] = c * xp - s * xq;
                        row[q] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sigma = [0.0; 4];
    for (k, s) in sigma.iter_mut().enumerate() {
        *s = a.iter().map(|row| row[k] * row[k]).sum::<f64>().sqrt();
    }
    (sigma, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intrinsics() -> [[f64; 3]; 3] {
        [[300.0, 0.0, 128.0], [0.0, 300.0, 128.0], [0.0, 0.0, 1.0]]
    }

    fn rot_y(a: f64) -> [[f64; 3]; 3] {
        [
            [a.cos(), 0.0, a.sin()],
            [0.0, 1.0, 0.0],
            [-a.sin(), 0.0, a.cos()],
        ]
    }

    /// Camera at `centre` with rotation `r`: `t = -R C`.
    fn cam_at(r: [[f64; 3]; 3], centre: [f64; 3]) -> CameraModel {
        let t = [0, 1, 2].map(|i| -(0..3).map(|j| r[i][j] * centre[j]).sum::<f64>());
        CameraModel::from_krt(intrinsics(), r, t, 256, 256, "c").unwrap()
    }

    #[test]
    fn identity_camera_projects_axis_to_principal_point() {
        let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let cam = CameraModel::from_krt(intrinsics(), identity, [0.0; 3], 256, 256, "id").unwrap();
        assert_eq!(project([0.0, 0.0, 5.0], &cam).unwrap(), [128.0, 128.0]);
        assert_eq!(project([0.0, 0.0, 50.0], &cam).unwrap(), [128.0, 128.0]);
        assert!(project([1.0, 1.0, 0.0], &cam).is_err());
    }

    #[test]
    fn noiseless_round_trip() {
        let a = cam_at(rot_y(0.3), [-500.0, 0.0, -3000.0]);
        let b = cam_at(rot_y(-0.3), [500.0, 0.0, -3000.0]);
        let x = [120.0, -340.0, 250.0];
        let obs = [(project(x, &a).unwrap(), &a), (project(x, &b).unwrap(), &b)];
        let y = triangulate(&obs).unwrap();
        let err = norm3(&[x[0] - y[0], x[1] - y[1], x[2] - y[2]]);
        assert!(err <= 1e-6 * norm3(&x), "{err}");
    }

    #[test]
    fn centre_is_recovered() {
        let c = cam_at(rot_y(0.7), [10.0, 20.0, -30.0]).center().unwrap();
        for (a, b) in c.iter().zip([10.0, 20.0, -30.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn symmetric_cameras_midplane() {
        let a = cam_at(rot_y(0.2), [-400.0, 0.0, -2000.0]);
        let b = cam_at(rot_y(-0.2), [400.0, 0.0, -2000.0]);
        let x = [0.0, 50.0, 300.0];
        let y =
            triangulate(&[(project(x, &a).unwrap(), &a), (project(x, &b).unwrap(), &b)]).unwrap();
        assert!(y[0].abs() < 1e-7);
        assert!((y[2] - 300.0).abs() < 1e-7);
    }

    #[test]
    fn degenerate_geometry_errors() {
        let a = cam_at(rot_y(0.2), [0.0, 0.0, -2000.0]);
        let b = cam_at(rot_y(-0.2), [0.0, 0.0, -2000.0]);
        let x = [10.0, 20.0, 30.0];
        let obs = [(project(x, &a).unwrap(), &a), (project(x, &b).unwrap(), &b)];
        assert!(matches!(triangulate(&obs), Err(Error::Triangulation(_))));
        // Same orientation and same pixel: the two rays are parallel.
        let c = cam_at(rot_y(0.0), [0.0, 0.0, -2000.0]);
        let d = cam_at(rot_y(0.0), [300.0, 0.0, -2000.0]);
        assert!(matches!(
            triangulate(&[([128.0, 128.0], &c), ([128.0, 128.0], &d)]),
            Err(Error::Triangulation(_))
        ));
        assert!(triangulate(&[([0.0, 0.0], &c)]).is_err());
    }

    #[test]
    fn rank_deficient_camera_rejected() {
        let p = [
            [1.0, 0.0, 0.0, 0.0],
            [2.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ];
        assert!(CameraModel::new(p, 10, 10, "bad").is_err());
    }

    #[test]
    fn json_round_trip() {
        let cam = cam_at(rot_y(0.1), [1.0, 2.0, -3.0]);
        let text = serde_json::to_string(&cam).unwrap();
        assert!(text.contains("\"P\""));
        assert_eq!(serde_json::from_str::<CameraModel>(&text).unwrap(), cam);
        assert!(
            serde_json::from_str::<CameraModel>(r#"{"P":[1,2],"width":1,"height":1}"#).is_err()
        );
    }
}
