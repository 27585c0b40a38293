//! Depth and color images of clouds, written as binary PGM/PPM.

use crate::camera::CameraModel;
use crate::cloud::PointCloud;

fn pixel_of(cam: &CameraModel, p: &[f32; 3]) -> Option<usize> {
    let z = p[2] as f64;
    if z <= 0.0 {
        return None;
    }
    let u = cam.fx * p[0] as f64 / z + cam.cx;
    let v = cam.fy * p[1] as f64 / z + cam.cy;
    if u >= 0.0 && v >= 0.0 && u < cam.width as f64 && v < cam.height as f64 {
        Some(v as usize * cam.width as usize + u as usize)
    } else {
        None
    }
}

/// Nearest depth per pixel, 0 where no point projects.
pub fn depth_image(cloud: &PointCloud, cam: &CameraModel) -> Vec<f32> {
    let mut img = vec![0f32; cam.pixel_count()];
    for p in &cloud.points {
        if let Some(i) = pixel_of(cam, p) {
            if img[i] == 0.0 || p[2] < img[i] {
                img[i] = p[2];
            }
        }
    }
    img
}

/// Color of the nearest point per pixel, black where empty.
pub fn color_image(cloud: &PointCloud, cam: &CameraModel) -> Vec<[u8; 3]> {
    let mut depth = vec![f32::INFINITY; cam.pixel_count()];
    let mut img = vec![[0u8; 3]; cam.pixel_count()];
    for (k, p) in cloud.points.iter().enumerate() {
        if let Some(i) = pixel_of(cam, p) {
            if p[2] < depth[i] {
                depth[i] = p[2];
                img[i] = cloud.colors.as_ref().map_or([255, 255, 255], |c| c[k]);
            }
        }
    }
    img
}

/// 16-bit PGM with depth in millimeters.
pub fn encode_pgm16(depth: &[f32], width: u32, height: u32) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for d in depth {
        let mm = (*d as f64 * 1000.0).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&mm.to_be_bytes());
    }
    out
}

pub fn encode_ppm(rgb: &[[u8; 3]], width: u32, height: u32) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for c in rgb {
        out.extend_from_slice(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        CameraModel {
            fx: 10.0,
            fy: 10.0,
            cx: 2.0,
            cy: 1.5,
            width: 4,
            height: 3,
            depth_min: 0.1,
            depth_max: 5.0,
        }
    }

    #[test]
    fn nearest_point_wins() {
        let c = PointCloud {
            points: vec![[0.0, 0.0, 2.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]],
            colors: Some(vec![[1, 1, 1], [9, 9, 9], [5, 5, 5]]),
            labels: None,
        };
        let d = depth_image(&c, &cam());
        assert_eq!(d[1 * 4 + 2], 1.0);
        assert_eq!(d.iter().filter(|x| **x > 0.0).count(), 1);
        assert_eq!(color_image(&c, &cam())[6], [9, 9, 9]);
    }

    #[test]
    fn pgm_layout() {
        let b = encode_pgm16(&[1.5, 0.0], 2, 1);
        assert!(b.starts_with(b"P5\n2 1\n65535\n"));
        assert_eq!(&b[b.len() - 4..], &[0x05, 0xDC, 0, 0]);
    }
}
