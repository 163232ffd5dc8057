//! Software rasterization of RGB, depth, NOCS and mask images, and template-set persistence.

mod raster;
mod template_set;

use thiserror::Error;

use crate::geometry::{CameraIntrinsics, GeometryError, Pose, Vec2, Vec3};

pub use raster::{rasterize, rasterize_model, rasterize_transformed, Shading, AMBIENT};
pub use template_set::{
    load_template_set, render_template_set, save_template_set, template_radius, TemplateSet, PATCH_SIZE,
};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("every vertex lies behind the camera")]
    ObjectBehindCamera,
    #[error("resolution {0} is not a positive multiple of 14")]
    BadResolution(u32),
    #[error("template {0} does not show the object")]
    EmptyTemplate(usize),
    #[error("template set format error: {0}")]
    Format(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One rendered view. Buffers are row-major, `width × height`.
///
/// Depth is the camera-frame z of the visible surface, in the units of the rendered mesh
/// (normalized units for templates); 0 marks background.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateImage {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<[f32; 3]>,
    pub depth: Vec<f32>,
    pub nocs: Vec<[f32; 3]>,
    pub mask: Vec<bool>,
    pub view_pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

impl TemplateImage {
    pub fn blank(intrinsics: CameraIntrinsics, view_pose: Pose) -> Self {
        let n = (intrinsics.width * intrinsics.height) as usize;
        Self {
            width: intrinsics.width,
            height: intrinsics.height,
            rgb: vec![[0.0; 3]; n],
            depth: vec![0.0; n],
            nocs: vec![[0.0; 3]; n],
            mask: vec![false; n],
            view_pose,
            intrinsics,
        }
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Object-frame point seen at pixel `(x, y)`: back-projects the pixel centre at the stored
    /// depth and maps it through the inverse view pose. `None` on background.
    pub fn lift_pixel(&self, x: u32, y: u32) -> Option<Vec3> {
        let i = self.index(x, y);
        if !self.mask[i] {
            return None;
        }
        let centre = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
        let cam = self.intrinsics.back_project(&centre, self.depth[i] as f64);
        Some(self.view_pose.inverse().transform_point(&cam))
    }

    /// Tight bounding box `(x0, y0, x1, y1)` of the mask, exclusive upper bounds.
    pub fn mask_bbox(&self) -> Option<[u32; 4]> {
        let mut b = [u32::MAX, u32::MAX, 0, 0];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.mask[self.index(x, y)] {
                    b[0] = b[0].min(x);
                    b[1] = b[1].min(y);
                    b[2] = b[2].max(x + 1);
                    b[3] = b[3].max(y + 1);
                }
            }
        }
        (b[0] != u32::MAX).then_some(b)
    }
}

/// NOCS encoding of a normalized-frame point.
#[inline]
pub fn nocs_encode(p: &Vec3) -> [f32; 3] {
    [
        ((p.x + 1.0) / 2.0) as f32,
        ((p.y + 1.0) / 2.0) as f32,
        ((p.z + 1.0) / 2.0) as f32,
    ]
}

#[inline]
pub fn nocs_decode(c: &[f32; 3]) -> Vec3 {
    Vec3::new(
        c[0] as f64 * 2.0 - 1.0,
        c[1] as f64 * 2.0 - 1.0,
        c[2] as f64 * 2.0 - 1.0,
    )
}
