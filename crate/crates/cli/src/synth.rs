use std::path::PathBuf;

use anyhow::anyhow;
use clap::ValueEnum;
use posekit_core::geometry::{load_mesh, save_ply, synth as meshes};
use posekit_core::synthetic::random_test_view;
use posekit_core::{CameraIntrinsics, ObjectModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::failure::{Failure, ResultExt};
use crate::inputs::{
    default_depth_scale, read_camera, write_depth, write_json, write_mask, write_nocs, write_rgb, Detection, GtImage,
    GtInstance, ImageEntry,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Builtin {
    /// Asymmetric textured L-shaped toy, about 0.2 m across.
    Toy,
    /// Untextured 0.1 m cube.
    Cube,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Object mesh (.ply or .obj) in meters; omitted uses --builtin.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Built-in object when no mesh is given.
    #[arg(long, value_enum, default_value_t = Builtin::Toy)]
    pub builtin: Builtin,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of test views.
    #[arg(long, default_value_t = 10)]
    pub views: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub object_id: u32,
    /// Camera intrinsics JSON [default: 640x480, f = 600 px, centred principal point].
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Smallest projected object diameter, pixels.
    #[arg(long, default_value_t = 120.0)]
    pub min_px: f64,
    /// Largest projected object diameter, pixels.
    #[arg(long, default_value_t = 220.0)]
    pub max_px: f64,
}

pub fn run(a: Args) -> Result<(), Failure> {
    if a.views == 0 || !(a.min_px > 0.0 && a.min_px <= a.max_px) {
        return Err(Failure::usage(anyhow!("need at least one view and 0 < min-px <= max-px")));
    }
    let mesh = match &a.mesh {
        Some(p) => load_mesh(p).usage_ctx(format!("cannot load mesh {}", p.display()))?,
        None => match a.builtin {
            Builtin::Toy => meshes::asymmetric_toy(),
            Builtin::Cube => meshes::cube(0.1),
        },
    };
    let k = match &a.camera {
        Some(p) => read_camera(p)?,
        None => CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).expect("valid default camera"),
    };
    let model = ObjectModel::from_mesh(&mesh, Vec::new()).pipeline()?;
    let models = a.out.join("models");
    std::fs::create_dir_all(&models).usage_ctx(format!("cannot create {}", models.display()))?;
    let mesh_path = models.join(format!("obj_{:06}.ply", a.object_id));
    save_ply(&mesh_path, &mesh).usage_ctx(format!("cannot write {}", mesh_path.display()))?;
    write_json(&a.out.join("camera.json"), &k)?;

    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (w, h) = (k.width as usize, k.height as usize);
    let scale = default_depth_scale();
    let mut entries = Vec::with_capacity(a.views);
    let mut gts = Vec::with_capacity(a.views);
    for i in 0..a.views {
        let view = random_test_view(&model, &k, &mut rng, a.min_px, a.max_px).pipeline()?;
        let name = |kind: &str| format!("{kind}_{i:06}.png");
        write_rgb(&a.out.join(name("rgb")), w, h, &view.image.rgb)?;
        write_nocs(&a.out.join(name("nocs")), w, h, &view.image.nocs)?;
        write_mask(&a.out.join(name("mask")), w, h, &view.image.mask)?;
        write_depth(&a.out.join(name("depth")), w, h, &view.image.depth, scale)?;
        entries.push(ImageEntry {
            scene_id: 0,
            im_id: i as u32,
            image: name("rgb").into(),
            nocs: Some(name("nocs").into()),
            mask: Some(name("mask").into()),
            camera: Some("camera.json".into()),
            detections: vec![Detection {
                bbox: view.bbox,
                score: 1.0,
                object_id: a.object_id,
            }],
        });
        gts.push(GtImage {
            scene_id: 0,
            im_id: i as u32,
            camera: k,
            depth: Some(name("depth").into()),
            depth_scale: scale,
            instances: vec![GtInstance {
                obj_id: a.object_id,
                pose: view.pose,
            }],
        });
    }
    write_json(&a.out.join("detections.json"), &entries)?;
    write_json(&a.out.join("gt.json"), &gts)?;
    println!("views {} in {}", a.views, a.out.display());
    Ok(())
}
