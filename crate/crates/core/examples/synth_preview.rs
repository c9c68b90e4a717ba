//! Writes one scene per synthetic task to the given directory.

use segnet::datakit::{netpbm, synth_scene, SceneSpec, Task};

fn main() -> segnet::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "preview".into());
    std::fs::create_dir_all(&out)?;
    for task in Task::ALL {
        let scene = synth_scene(&SceneSpec::new(task, 128, 4))?;
        netpbm::write(format!("{}/{}.{}", out, task, if scene.channels() == 1 { "pgm" } else { "ppm" }), &scene.image)?;
        let mut mask = scene.mask.clone();
        mask.data_mut().iter_mut().for_each(|v| *v *= 60);
        netpbm::write_mask(format!("{}/{}_mask.pgm", out, task), &mask)?;
    }
    Ok(())
}
