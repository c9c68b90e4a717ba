//! Dataset directories: `images/<idx>.pgm|ppm`, `masks/<idx>.pgm` and a
//! `manifest.txt` that is the authoritative record of the split.
//!
//! Manifest lines after the `#` header are `index split source row col`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::split::{SampleSet, Split};
use super::{netpbm, Provenance, Scene};

pub const MANIFEST: &str = "manifest.txt";

fn image_name(index: usize, channels: usize) -> String {
    format!("{:05}.{}", index, if channels == 1 { "pgm" } else { "ppm" })
}

pub fn write_dataset(root: impl AsRef<Path>, set: &SampleSet) -> Result<()> {
    let root = root.as_ref();
    std::fs::create_dir_all(root.join("images"))?;
    std::fs::create_dir_all(root.join("masks"))?;
    let mut manifest = String::new();
    writeln!(manifest, "# seed {}", set.seed).unwrap();
    writeln!(manifest, "# index split source row col").unwrap();
    for (i, (scene, split)) in set.scenes.iter().zip(&set.splits).enumerate() {
        if scene.provenance.source.contains(char::is_whitespace) {
            return Err(Error::config(format!("source '{}' contains whitespace", scene.provenance.source)));
        }
        netpbm::write(root.join("images").join(image_name(i, scene.channels())), &scene.image)?;
        netpbm::write_mask(root.join("masks").join(format!("{:05}.pgm", i)), &scene.mask)?;
        let (r, c) = scene.provenance.origin;
        writeln!(manifest, "{} {} {} {} {}", i, split.name(), scene.provenance.source, r, c).unwrap();
    }
    std::fs::write(root.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn read_dataset(root: impl AsRef<Path>) -> Result<SampleSet> {
    let root = root.as_ref();
    let text = std::fs::read_to_string(root.join(MANIFEST))?;
    let mut seed = 0;
    let mut scenes = vec![];
    let mut splits = vec![];
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len();
        let line = line.trim();
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("seed ") {
                seed = v.trim().parse().map_err(|_| Error::format(at, "bad seed in manifest"))?;
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = |what: &str| Error::format(at, format!("manifest: {} in line '{}'", what, line));
        if f.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let index: usize = f[0].parse().map_err(|_| bad("bad index"))?;
        if index != scenes.len() {
            return Err(bad("indices must count up from 0"));
        }
        let split = Split::parse(f[1]).ok_or_else(|| bad("unknown split"))?;
        let origin = (
            f[3].parse().map_err(|_| bad("bad row"))?,
            f[4].parse().map_err(|_| bad("bad col"))?,
        );
        let gray = root.join("images").join(image_name(index, 1));
        let path = if gray.exists() { gray } else { root.join("images").join(image_name(index, 3)) };
        let image = netpbm::read(&path)?;
        let mask = netpbm::read_mask(root.join("masks").join(format!("{:05}.pgm", index)))?;
        scenes.push(Scene::new(image, mask, Provenance { source: f[2].to_string(), origin })?);
        splits.push(split);
    }
    if scenes.is_empty() {
        return Err(Error::format(0, "manifest lists no scenes"));
    }
    Ok(SampleSet { scenes, splits, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{synth_dataset, SceneSpec, Task};

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for task in [Task::ShipsSar, Task::Multilabel] {
            let set = synth_dataset(&SceneSpec::new(task, 64, 3), 5).unwrap();
            let root = dir.path().join(task.name());
            write_dataset(&root, &set).unwrap();
            assert_eq!(read_dataset(&root).unwrap(), set);
        }
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let set = synth_dataset(&SceneSpec::new(Task::Trees, 64, 3), 3).unwrap();
        write_dataset(dir.path(), &set).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace(" train ", " test ")).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Format { .. })));
    }
}
