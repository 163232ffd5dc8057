use crate::geometry::CameraIntrinsics;

use super::MatchError;

/// Row-major image buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<P> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<P>,
}

impl<P: Copy> Image<P> {
    pub fn new(width: usize, height: usize, data: Vec<P>) -> Self {
        assert_eq!(data.len(), width * height, "image buffer size");
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> P {
        self.data[y * self.width + x]
    }
}

/// Square scale-and-translate crop: original pixel coordinates are `offset + scale · crop`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropTransform {
    pub scale: f64,
    pub offset: [f64; 2],
    /// Side of the cropped image in pixels.
    pub resolution: usize,
}

impl CropTransform {
    pub fn identity(resolution: usize) -> Self {
        Self {
            scale: 1.0,
            offset: [0.0; 2],
            resolution,
        }
    }

    #[inline]
    pub fn to_original(&self, p: [f64; 2]) -> [f64; 2] {
        [self.offset[0] + self.scale * p[0], self.offset[1] + self.scale * p[1]]
    }

    #[inline]
    pub fn to_crop(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.offset[0]) / self.scale, (p[1] - self.offset[1]) / self.scale]
    }

    /// Intrinsics of the virtual camera that sees the crop.
    pub fn intrinsics(&self, k: &CameraIntrinsics) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: k.fx / self.scale,
            fy: k.fy / self.scale,
            cx: (k.cx - self.offset[0]) / self.scale,
            cy: (k.cy - self.offset[1]) / self.scale,
            width: self.resolution as u32,
            height: self.resolution as u32,
        }
    }
}

/// Square region around a `[x, y, w, h]` box: the longer side times `padding`, centred on the
/// box, shrunk and shifted as needed to stay inside a `width × height` image.
pub fn crop_region(
    bbox: [f64; 4],
    width: usize,
    height: usize,
    resolution: usize,
    padding: f64,
) -> Result<CropTransform, MatchError> {
    let [x, y, w, h] = bbox;
    if !(w > 0.0 && h > 0.0) || !bbox.iter().all(|v| v.is_finite()) {
        return Err(MatchError::EmptyBox);
    }
    let (cx, cy) = (x + w / 2.0, y + h / 2.0);
    let side = (w.max(h) * padding).min(width as f64).min(height as f64);
    let ox = (cx - side / 2.0).clamp(0.0, width as f64 - side);
    let oy = (cy - side / 2.0).clamp(0.0, height as f64 - side);
    Ok(CropTransform {
        scale: side / resolution as f64,
        offset: [ox, oy],
        resolution,
    })
}

/// Bilinear resampling of the crop region, edge-clamped.
pub fn crop_bilinear(img: &Image<[f32; 3]>, t: &CropTransform) -> Image<[f32; 3]> {
    let n = t.resolution;
    let mut data = Vec::with_capacity(n * n);
    let (wmax, hmax) = (img.width as f64 - 1.0, img.height as f64 - 1.0);
    for v in 0..n {
        for u in 0..n {
            let [x, y] = t.to_original([u as f64 + 0.5, v as f64 + 0.5]);
            let px = (x - 0.5).clamp(0.0, wmax);
            let py = (y - 0.5).clamp(0.0, hmax);
            let (x0, y0) = (px.floor() as usize, py.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(img.width - 1), (y0 + 1).min(img.height - 1));
            let (fx, fy) = ((px - x0 as f64) as f32, (py - y0 as f64) as f32);
            let (a, b, c, d) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
            data.push(std::array::from_fn(|ch| {
                let top = a[ch] + (b[ch] - a[ch]) * fx;
                let bottom = c[ch] + (d[ch] - c[ch]) * fx;
                top + (bottom - top) * fy
            }));
        }
    }
    Image::new(n, n, data)
}

/// Nearest-neighbour resampling of the crop region, for label-like buffers (NOCS, masks).
pub fn crop_nearest<P: Copy>(img: &Image<P>, t: &CropTransform, background: P) -> Image<P> {
    let n = t.resolution;
    let mut data = Vec::with_capacity(n * n);
    for v in 0..n {
        for u in 0..n {
            let [x, y] = t.to_original([u as f64 + 0.5, v as f64 + 0.5]);
            let (xi, yi) = (x.floor(), y.floor());
            if xi < 0.0 || yi < 0.0 || xi >= img.width as f64 || yi >= img.height as f64 {
                data.push(background);
            } else {
                data.push(img.get(xi as usize, yi as usize));
            }
        }
    }
    Image::new(n, n, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_image_box_is_pure_scaling() {
        let t = crop_region([0.0, 0.0, 640.0, 640.0], 640, 640, 420, 1.0).unwrap();
        assert_eq!(t.offset, [0.0, 0.0]);
        assert!((t.scale - 640.0 / 420.0).abs() < 1e-15);
    }

    #[test]
    fn mapping_round_trips() {
        let t = crop_region([100.0, 50.0, 80.0, 40.0], 640, 480, 224, 1.2).unwrap();
        for p in [[0.0, 0.0], [13.5, 200.25], [223.9, 7.0]] {
            let back = t.to_crop(t.to_original(p));
            assert!((back[0] - p[0]).abs() < 1e-9 && (back[1] - p[1]).abs() < 1e-9);
        }
        assert!((t.scale * 224.0 - 96.0).abs() < 1e-9);
        assert_eq!(t.offset, [92.0, 22.0]);
    }

    #[test]
    fn patch_centres_land_in_padded_box() {
        let bbox = [400.0, 300.0, 60.0, 90.0];
        let t = crop_region(bbox, 640, 480, 140, 1.2).unwrap();
        let (cx, cy) = (430.0, 345.0);
        let half = 90.0 * 1.2 / 2.0;
        for i in 0..100 {
            let p = crate::backbone::patch_center(i, 10);
            let [x, y] = t.to_original([p.0, p.1]);
            assert!((x - cx).abs() <= half && (y - cy).abs() <= half);
        }
    }

    #[test]
    fn region_is_clamped_inside_image() {
        let t = crop_region([600.0, 440.0, 100.0, 100.0], 640, 480, 140, 1.2).unwrap();
        assert!(t.offset[0] >= 0.0 && t.offset[0] + t.scale * 140.0 <= 640.0 + 1e-9);
        assert!(t.offset[1] + t.scale * 140.0 <= 480.0 + 1e-9);
        let big = crop_region([0.0, 0.0, 2000.0, 100.0], 640, 480, 140, 1.2).unwrap();
        assert!((big.scale * 140.0 - 480.0).abs() < 1e-9);
    }

    #[test]
    fn empty_box_is_rejected() {
        assert!(matches!(crop_region([5.0, 5.0, 0.0, 10.0], 64, 64, 14, 1.2), Err(MatchError::EmptyBox)));
    }

    #[test]
    fn identity_crop_reproduces_image() {
        let data: Vec<[f32; 3]> = (0..28 * 28).map(|i| [i as f32, 0.0, 1.0]).collect();
        let img = Image::new(28, 28, data);
        let t = CropTransform::identity(28);
        assert_eq!(crop_bilinear(&img, &t), img);
        assert_eq!(crop_nearest(&img, &t, [0.0; 3]), img);
    }

    #[test]
    fn bilinear_interpolates_linear_ramps_exactly() {
        let data: Vec<[f32; 3]> = (0..32 * 32).map(|i| [(i % 32) as f32, (i / 32) as f32, 0.0]).collect();
        let img = Image::new(32, 32, data);
        let t = CropTransform {
            scale: 0.5,
            offset: [4.0, 6.0],
            resolution: 14,
        };
        let out = crop_bilinear(&img, &t);
        for v in 0..14 {
            for u in 0..14 {
                let [x, y] = t.to_original([u as f64 + 0.5, v as f64 + 0.5]);
                let p = out.get(u, v);
                assert!((p[0] as f64 - (x - 0.5)).abs() < 1e-4);
                assert!((p[1] as f64 - (y - 0.5)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn crop_intrinsics_agree_with_mapping() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let t = crop_region([200.0, 100.0, 120.0, 150.0], 640, 480, 280, 1.2).unwrap();
        let kc = t.intrinsics(&k);
        let p = crate::geometry::Vec3::new(0.05, -0.02, 0.8);
        let a = k.project_point(&p);
        let b = kc.project_point(&p);
        let mapped = t.to_original([b.x, b.y]);
        assert!((mapped[0] - a.x).abs() < 1e-9 && (mapped[1] - a.y).abs() < 1e-9);
    }
}
