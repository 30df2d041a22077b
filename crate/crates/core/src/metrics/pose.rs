use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensornet::Tensor;

/// `J` joint positions with a visibility mask. `D = 2` holds `(u, v)`
/// pixels, `D = 3` holds `(x, y, z)` millimetres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose<const D: usize> {
    #[serde(with = "coords_serde")]
    pub coords: Vec<[f64; D]>,
    pub visible: Vec<bool>,
}

pub type Pose2D = Pose<2>;
pub type Pose3D = Pose<3>;

mod coords_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const D: usize>(
        v: &[[f64; D]],
        s: S,
    ) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|c| c.to_vec())
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, De: Deserializer<'de>, const D: usize>(
        d: De,
    ) -> Result<Vec<[f64; D]>, De::Error> {
        let raw = Vec::<Vec<f64>>::deserialize(d)?;
        raw.into_iter()
            .map(|c| {
                <[f64; D]>::try_from(c.as_slice())
                    .map_err(|_| serde::de::Error::custom(format!("expected {D} coordinates")))
            })
            .collect()
    }
}

impl<const D: usize> Pose<D> {
    pub fn new(coords: Vec<[f64; D]>) -> Self {
        let visible = vec![true; coords.len()];
        Self { coords, visible }
    }

    /// All joints at the origin and invisible.
    pub fn invisible(joints: usize) -> Self {
        Self {
            coords: vec![[0.0; D]; joints],
            visible: vec![false; joints],
        }
    }

    pub fn joints(&self) -> usize {
        self.coords.len()
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }
}

/// Per-channel argmax. Ties go to the smallest `(v, u)`; a channel whose
/// values are all equal is marked invisible.
pub fn decode_heatmaps(heatmaps: &Tensor) -> Pose2D {
    let s = heatmaps.shape();
    let mut pose = Pose2D::invisible(s.c);
    for c in 0..s.c {
        let ch = heatmaps.channel(c);
        let Some(&first) = ch.first() else { continue };
        let mut best = 0usize;
        let mut all_equal = true;
        for (i, &v) in ch.iter().enumerate() {
            if v != first {
                all_equal = false;
            }
            if v > ch[best] {
                best = i;
            }
        }
        pose.coords[c] = [(best % s.w) as f64, (best / s.w) as f64];
        pose.visible[c] = !all_equal;
    }
    pose
}

/// Mean Euclidean error over joints visible in both poses; `None` when no
/// joint is visible in both.
pub fn mpjpe<const D: usize>(pred: &Pose<D>, gt: &Pose<D>) -> Result<Option<f64>> {
    if pred.joints() != gt.joints() {
        return Err(Error::contract(format!(
            "MPJPE between {} and {} joints",
            pred.joints(),
            gt.joints()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for j in 0..pred.joints() {
        if pred.visible[j] && gt.visible[j] {
            sum += joint_distance(&pred.coords[j], &gt.coords[j]);
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

pub fn joint_distance<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::Shape;

    #[test]
    fn mpjpe_examples() {
        let gt = Pose2D::new(vec![[10.0, 10.0]]);
        assert_eq!(mpjpe(&gt, &gt).unwrap(), Some(0.0));
        let pred = Pose2D::new(vec![[13.0, 14.0]]);
        assert_eq!(mpjpe(&pred, &gt).unwrap(), Some(5.0));
        let gt = Pose2D::new(vec![[0.0, 0.0], [0.0, 0.0]]);
        let pred = Pose2D::new(vec![[0.0, 0.0], [6.0, 8.0]]);
        assert_eq!(mpjpe(&pred, &gt).unwrap(), Some(5.0));
    }

    #[test]
    fn mpjpe_masks_and_errors() {
        let mut pred = Pose2D::new(vec![[0.0, 0.0], [100.0, 0.0]]);
        let gt = Pose2D::new(vec![[3.0, 4.0], [0.0, 0.0]]);
        pred.visible[1] = false;
        assert_eq!(mpjpe(&pred, &gt).unwrap(), Some(5.0));
        assert_eq!(mpjpe(&Pose2D::invisible(2), &gt).unwrap(), None);
        assert!(mpjpe(&Pose2D::invisible(3), &gt).is_err());
    }

    #[test]
    fn decode_examples() {
        let mut t = Tensor::zeros(Shape::new(3, 4, 5));
        t.set(0, 2, 3, 1.0);
        t.set(1, 1, 4, 2.0);
        t.set(1, 3, 0, 2.0);
        let pose = decode_heatmaps(&t);
        assert_eq!(pose.coords[0], [3.0, 2.0]);
        assert!(pose.visible[0]);
        assert_eq!(pose.coords[1], [4.0, 1.0]);
        assert!(!pose.visible[2]);
    }

    #[test]
    fn ties_match_exhaustive_scan() {
        // Every placement of two equal maxima on a 3x3 grid.
        for a in 0..9 {
            for b in 0..9 {
                let mut t = Tensor::zeros(Shape::new(1, 3, 3));
                t.data_mut()[a] = 1.0;
                t.data_mut()[b] = 1.0;
                let mut best = None;
                for v in 0..3 {
                    for u in 0..3 {
                        if best.is_none() && t.get(0, v, u) == 1.0 {
                            best = Some([u as f64, v as f64]);
                        }
                    }
                }
                assert_eq!(decode_heatmaps(&t).coords[0], best.unwrap());
            }
        }
    }
}
