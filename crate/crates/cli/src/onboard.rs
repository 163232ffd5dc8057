use std::path::PathBuf;
use std::time::Instant;

use anyhow::anyhow;
use posekit_core::geometry::{load_mesh, load_symmetries};
use posekit_core::render::{render_template_set, save_template_set, PATCH_SIZE};
use posekit_core::ObjectModel;

use crate::failure::{Failure, ResultExt};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Object mesh (.ply or .obj), in meters.
    #[arg(long)]
    pub mesh: PathBuf,
    /// Output template-set directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Icosphere subdivision frequency; 2 gives 42 views, 4 gives 162 [published value].
    #[arg(long, default_value_t = 2)]
    pub frequency: u32,
    /// Template side in pixels, a multiple of 14 [published value].
    #[arg(long, default_value_t = 420)]
    pub resolution: u32,
    /// Object id recorded in the template set and matched against detections [toolkit choice].
    #[arg(long, default_value_t = 1)]
    pub object_id: u32,
    /// Symmetry sidecar JSON (discrete transforms and continuous axes).
    #[arg(long)]
    pub symmetries: Option<PathBuf>,
}

pub fn run(a: Args) -> Result<(), Failure> {
    if a.frequency == 0 || a.resolution == 0 || a.resolution % PATCH_SIZE != 0 {
        return Err(Failure::usage(anyhow!(
            "frequency must be positive and resolution a positive multiple of {PATCH_SIZE}"
        )));
    }
    let start = Instant::now();
    let mesh = load_mesh(&a.mesh).usage_ctx(format!("cannot load mesh {}", a.mesh.display()))?;
    let syms = match &a.symmetries {
        Some(p) => load_symmetries(p).usage_ctx(format!("cannot load symmetries {}", p.display()))?,
        None => Vec::new(),
    };
    let model = ObjectModel::from_mesh(&mesh, syms).pipeline()?;
    let set = render_template_set(&model, &a.object_id.to_string(), a.frequency, a.resolution).pipeline()?;
    save_template_set(&set, &a.out).usage_ctx(format!("cannot write templates to {}", a.out.display()))?;
    println!("object {}", a.object_id);
    println!("diameter {:.6} m", model.diameter);
    println!("views {}", set.len());
    println!("wall time {:.2} s", start.elapsed().as_secs_f64());
    Ok(())
}
