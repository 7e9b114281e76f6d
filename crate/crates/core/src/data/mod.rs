//! File formats, augmentations, synthetic shapes and training-sample selection.

pub mod augment;
pub mod io;
mod sampling;
pub mod synth;

use std::path::Path;

pub use augment::{
    add_gaussian_noise, apply_density, density_gradient, density_striped, noise_presets, AugmentationSpec,
    DensityMode, NOISE_HIGH, NOISE_LOW, NOISE_MEDIUM,
};
pub use io::{read_normals, read_pidx, read_shape_list, read_xyz, write_normals, write_pidx, write_xyz};
pub use sampling::{sample_training_patches, PatchSample};
pub use synth::{add_outliers, synth_shape, ShapeKind, ShapeRecord};

use crate::error::Result;
use crate::geometry::PointCloud;

/// Loads `<dir>/<name>.xyz` and, when present, `<dir>/<name>.normals`.
pub fn load_shape(dir: &Path, name: &str) -> Result<ShapeRecord> {
    let points = read_xyz(io::shape_file(dir, name, "xyz"))?;
    let normals_path = io::shape_file(dir, name, "normals");
    let normals = if normals_path.exists() {
        Some(read_normals(normals_path)?)
    } else {
        None
    };
    Ok(ShapeRecord::new(name, PointCloud::new(points, normals)?))
}

/// Every shape named in a shape-list file, resolved next to the list.
pub fn load_shape_list(list: &Path) -> Result<Vec<ShapeRecord>> {
    let dir = list.parent().unwrap_or(Path::new("."));
    read_shape_list(list)?.iter().map(|name| load_shape(dir, name)).collect()
}

/// Writes `<dir>/<name>.xyz` and `.normals` when the cloud carries normals.
pub fn save_shape(dir: &Path, shape: &ShapeRecord) -> Result<()> {
    write_xyz(io::shape_file(dir, &shape.name, "xyz"), shape.cloud.points())?;
    if let Some(n) = shape.cloud.normals() {
        write_normals(io::shape_file(dir, &shape.name, "normals"), n)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_list_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = synth_shape(ShapeKind::from_name("sphere").unwrap(), 100, 1).unwrap();
        let mut b = synth_shape(ShapeKind::from_name("cube").unwrap(), 80, 2).unwrap();
        b.cloud = b.cloud.with_normals(None).unwrap();
        save_shape(dir.path(), &a).unwrap();
        save_shape(dir.path(), &b).unwrap();
        let list = dir.path().join("list.txt");
        std::fs::write(&list, "sphere\ncube\n").unwrap();
        let loaded = load_shape_list(&list).unwrap();
        assert_eq!(loaded[0].cloud, a.cloud);
        assert_eq!(loaded[1].cloud, b.cloud);
        assert!(loaded[1].cloud.normals().is_none());
    }
}
