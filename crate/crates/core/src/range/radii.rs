//! Per-sample radius estimation: half the median 3D distance to the
//! unprojected 4-neighbors, with a pixel-footprint fallback for isolated
//! samples.

use super::{ProjectionModel, RangeImage};

/// `NaN`-for-absent grid of sample radii, one entry per pixel.
pub fn estimate_sample_radii(img: &RangeImage) -> Vec<f64> {
    let (w, h) = (img.width as i64, img.height as i64);
    let wrap_x = matches!(img.model, ProjectionModel::Equirectangular);
    let mut radii = vec![f64::NAN; (w * h) as usize];
    let mut dists = [0f64; 4];

    for y in 0..h {
        for x in 0..w {
            let Some(d) = img.depth_at(x as u32, y as u32) else {
                continue;
            };
            let p = img.unproject(x as u32, y as u32, d);
            let mut count = 0usize;
            for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let mut nx = x + dx;
                let ny = y + dy;
                if wrap_x {
                    nx = nx.rem_euclid(w);
                }
                if nx < 0 || nx >= w || ny < 0 || ny >= h {
                    continue;
                }
                let Some(nd) = img.depth_at(nx as u32, ny as u32) else {
                    continue;
                };
                let np = img.unproject(nx as u32, ny as u32, nd);
                dists[count] = (np - p).norm();
                count += 1;
            }
            radii[(y * w + x) as usize] = if count == 0 {
                img.half_pixel_footprint(d)
            } else {
                0.5 * median(&mut dists[..count])
            };
        }
    }
    radii
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
