use std::f64::consts::PI;

pub const TARGET_KERNEL: usize = 11;
pub const TARGET_SIGMA: f64 = 2.0;

/// Weight of the (unnormalized, truncated) Gaussian blur kernel at offset
/// `(dx, dy)` from the joint pixel.
pub fn gaussian_weight(dx: i64, dy: i64, sigma: f64) -> f64 {
    let r2 = (dx * dx + dy * dy) as f64;
    (-r2 / (2.0 * sigma * sigma)).exp() / (2.0 * PI * sigma * sigma)
}

/// One target channel plus its visibility flag.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapTarget {
    pub data: Vec<f64>,
    pub visible: bool,
}

/// A one-hot at the joint pixel blurred by an 11×11, σ = 2 Gaussian whose
/// taps are the continuous density (not renormalized). Out-of-frame joints
/// give an all-zero, invisible channel.
pub fn make_heatmap_target(u: f64, v: f64, height: usize, width: usize) -> HeatmapTarget {
    let mut data = vec![0.0; height * width];
    let inside = u.is_finite()
        && v.is_finite()
        && u >= 0.0
        && v >= 0.0
        && u < width as f64
        && v < height as f64;
    if !inside {
        return HeatmapTarget {
            data,
            visible: false,
        };
    }
    let ju = (u.round() as usize).min(width - 1) as i64;
    let jv = (v.round() as usize).min(height - 1) as i64;
    let r = (TARGET_KERNEL / 2) as i64;
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (ju + dx, jv + dy);
            if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
                data[y as usize * width + x as usize] = gaussian_weight(dx, dy, TARGET_SIGMA);
            }
        }
    }
    HeatmapTarget {
        data,
        visible: true,
    }
}
