use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::compose::{compose_image, Background, ComposeOptions, Placement};
use super::manifest::{DatasetManifest, Record, Split, MANIFEST_FILE};
use super::segment::{extract_cutout, ThresholdConfig};
use super::Cutout;
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::{par, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub per_class: usize,
    pub seeds_per_image: usize,
    pub canvas: (usize, usize),
    /// `(train_fraction, val_fraction)`, summing to 1.
    pub split: (f64, f64),
    pub background: [u8; 3],
    /// Per-image uniform brightness offset range, in 8-bit levels.
    pub background_jitter: u8,
    /// Per-image, per-channel offset range added on top of the brightness
    /// jitter, in 8-bit levels.
    #[serde(default)]
    pub background_tint: u8,
    /// Per-image seed count is drawn from `seeds_per_image ± seed_count_jitter`.
    #[serde(default)]
    pub seed_count_jitter: usize,
    pub compose: ComposeOptions,
}

impl DatasetSpec {
    pub fn new(per_class: usize, seeds_per_image: usize, size: usize) -> Self {
        Self {
            per_class,
            seeds_per_image,
            canvas: (size, size),
            split: (0.8, 0.2),
            background: [220, 220, 220],
            background_jitter: 5,
            background_tint: 0,
            seed_count_jitter: 0,
            compose: ComposeOptions::default(),
        }
    }

    pub fn train_count(&self) -> usize {
        (self.split.0 * self.per_class as f64 + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let (t, v) = self.split;
        if !(0.0..=1.0).contains(&t) || !(0.0..=1.0).contains(&v) || (t + v - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ({t}, {v}) must be two fractions summing to 1")));
        }
        if self.per_class == 0 {
            return Err(Error::Config("per-class image count must be positive".into()));
        }
        if self.canvas.0 == 0 || self.canvas.1 == 0 {
            return Err(Error::Config("canvas must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub manifest: DatasetManifest,
    /// Placements per record, aligned with `manifest.records`.
    pub placements: Vec<Vec<Placement>>,
}

/// Render `per_class` images for every class under `out_dir/images/` and
/// write `out_dir/manifest.jsonl`. Image `i` of class `c` draws its
/// randomness from a stream derived from `(master_seed, c, i)`, so the
/// output does not depend on the worker count.
pub fn generate_dataset(
    cutouts_by_class: &[(String, Vec<Cutout>)],
    spec: &DatasetSpec,
    out_dir: &Path,
    master_seed: u64,
) -> Result<GeneratedDataset> {
    spec.validate()?;
    if cutouts_by_class.is_empty() {
        return Err(Error::Config("no classes to generate".into()));
    }
    for (name, _) in cutouts_by_class {
        let dir = out_dir.join("images").join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let train = spec.train_count();
    let jobs: Vec<(usize, usize)> =
        (0..cutouts_by_class.len()).flat_map(|c| (0..spec.per_class).map(move |i| (c, i))).collect();
    let rendered = par::try_map(&jobs, |_, &(c, i)| {
        let (name, cutouts) = &cutouts_by_class[c];
        let mut rng = rng::stream(master_seed, &[c as u64, i as u64]);
        let j = spec.background_jitter as i32;
        let offset = if j > 0 { rng.gen_range(-j..=j) } else { 0 };
        let t = spec.background_tint as i32;
        let tint: [i32; 3] = std::array::from_fn(|_| if t > 0 { rng.gen_range(-t..=t) } else { 0 });
        let bg: [u8; 3] = std::array::from_fn(|k| (spec.background[k] as i32 + offset + tint[k]).clamp(0, 255) as u8);
        let cj = spec.seed_count_jitter.min(spec.seeds_per_image);
        let count = if cj > 0 { rng.gen_range(spec.seeds_per_image - cj..=spec.seeds_per_image + cj) } else { spec.seeds_per_image };
        let (img, placements) =
            compose_image(cutouts, count, spec.canvas, &Background::Solid(bg), spec.compose, &mut rng)?;
        let rel = format!("images/{name}/{name}_{i:05}.png");
        img.save_png(&out_dir.join(&rel))?;
        let split = if i < train { Split::Train } else { Split::Val };
        Ok::<_, Error>((Record { path: rel, class_label: name.clone(), split }, placements))
    })?;
    let (records, placements) = rendered.into_iter().unzip();
    let manifest = DatasetManifest {
        class_names: cutouts_by_class.iter().map(|(n, _)| n.clone()).collect(),
        master_seed,
        records,
        root: out_dir.to_path_buf(),
    };
    manifest.validate()?;
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(GeneratedDataset { manifest, placements })
}

/// Read `dir/<class>/*.png`. Images that already carry a partially
/// transparent alpha mask are used as they are; others are segmented.
pub fn load_cutout_dir(dir: &Path, threshold: ThresholdConfig) -> Result<Vec<(String, Vec<Cutout>)>> {
    let sorted = |p: &Path| -> Result<Vec<std::path::PathBuf>> {
        let mut v: Vec<_> = std::fs::read_dir(p)
            .map_err(|e| Error::io(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        v.sort();
        Ok(v)
    };
    let mut out = Vec::new();
    for class_dir in sorted(dir)?.into_iter().filter(|p| p.is_dir()) {
        let name = class_dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let mut cutouts = Vec::new();
        for file in sorted(&class_dir)?.into_iter().filter(|p| p.is_file()) {
            let img = Image::load(&file)?;
            let has_mask = img.alpha().is_some_and(|a| a.iter().any(|&v| v < 255) && a.iter().any(|&v| v > 0));
            let image = if has_mask { img } else { extract_cutout(&img.strip_alpha(), threshold)? };
            let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            cutouts.push(Cutout { image, class_label: name.clone(), source_id: format!("{name}/{stem}") });
        }
        if cutouts.is_empty() {
            return Err(Error::InsufficientData(format!("no images in {}", class_dir.display())));
        }
        out.push((name, cutouts));
    }
    if out.is_empty() {
        return Err(Error::InsufficientData(format!("no class directories in {}", dir.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_toy_cutouts, ToyConfig};

    fn toy_classes(k: usize, size: usize) -> Vec<(String, Vec<Cutout>)> {
        let cuts = generate_toy_cutouts(k, 4, &ToyConfig::for_canvas(size), &mut rng::seeded(1)).unwrap();
        (0..k)
            .map(|c| {
                let name = format!("toy_{c}");
                (name.clone(), cuts.iter().filter(|x| x.class_label == name).cloned().collect())
            })
            .collect()
    }

    #[test]
    fn small_toy_dataset_contract() {
        let dir = tempfile::tempdir().unwrap();
        let g = generate_dataset(&toy_classes(3, 32), &DatasetSpec::new(10, 5, 32), dir.path(), 4).unwrap();
        let m = &g.manifest;
        assert_eq!(m.records.len(), 30);
        assert_eq!(m.count(Split::Train), 24);
        assert_eq!(m.count(Split::Val), 6);
        for r in &m.records {
            let img = Image::load(&m.resolve(r)).unwrap();
            assert_eq!((img.width(), img.height()), (32, 32));
            assert!(img.alpha().is_none());
        }
        assert!(g.placements.iter().all(|p| p.len() == 5));
        let again = DatasetManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(&again, m);
    }

    #[test]
    fn degenerate_split() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = DatasetSpec::new(1, 2, 32);
        spec.split = (1.0, 0.0);
        let classes = toy_classes(2, 32).into_iter().take(1).collect::<Vec<_>>();
        let g = generate_dataset(&classes, &spec, dir.path(), 0).unwrap();
        assert_eq!(g.manifest.count(Split::Train), 1);
        assert_eq!(g.manifest.count(Split::Val), 0);
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let classes = toy_classes(2, 32);
        let spec = DatasetSpec::new(3, 4, 32);
        let ga = generate_dataset(&classes, &spec, a.path(), 9).unwrap();
        generate_dataset(&classes, &spec, b.path(), 9).unwrap();
        for r in &ga.manifest.records {
            assert_eq!(std::fs::read(a.path().join(&r.path)).unwrap(), std::fs::read(b.path().join(&r.path)).unwrap());
        }
        assert_eq!(std::fs::read(a.path().join(MANIFEST_FILE)).unwrap(), std::fs::read(b.path().join(MANIFEST_FILE)).unwrap());
    }
}
