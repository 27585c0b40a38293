use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CameraError {
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    Focal { fx: f64, fy: f64 },
    #[error("principal point ({cx}, {cy}) outside the {width}x{height} image")]
    PrincipalPoint {
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    },
    #[error("invalid depth range [{0}, {1}]")]
    DepthRange(f64, f64),
}

/// Pinhole intrinsics plus image size and the valid depth range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub depth_min: f64,
    pub depth_max: f64,
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::Focal {
                fx: self.fx,
                fy: self.fy,
            });
        }
        if !(self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64)
        {
            return Err(CameraError::PrincipalPoint {
                cx: self.cx,
                cy: self.cy,
                width: self.width,
                height: self.height,
            });
        }
        if !(self.depth_min >= 0.0 && self.depth_min < self.depth_max) {
            return Err(CameraError::DepthRange(self.depth_min, self.depth_max));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Camera restricted to the `w` x `h` window whose top-left pixel is `(x0, y0)`.
    pub fn cropped(&self, x0: u32, y0: u32, w: u32, h: u32) -> CameraModel {
        CameraModel {
            cx: self.cx - x0 as f64,
            cy: self.cy - y0 as f64,
            width: w,
            height: h,
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        CameraModel {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
            depth_min: 0.1,
            depth_max: 3.0,
        }
    }

    #[test]
    fn valid_camera() {
        assert!(cam().validate().is_ok());
    }

    #[test]
    fn rejects_principal_point_on_edge() {
        let c = CameraModel { cx: 640.0, ..cam() };
        assert!(matches!(c.validate(), Err(CameraError::PrincipalPoint { .. })));
    }

    #[test]
    fn rejects_inverted_depth() {
        let c = CameraModel {
            depth_min: 2.0,
            depth_max: 1.0,
            ..cam()
        };
        assert!(matches!(c.validate(), Err(CameraError::DepthRange(..))));
    }

    #[test]
    fn crop_shifts_principal_point() {
        let c = cam().cropped(10, 20, 100, 50);
        assert_eq!((c.cx, c.cy, c.width, c.height), (310.0, 220.0, 100, 50));
    }
}
