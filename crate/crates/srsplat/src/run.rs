//! Datasets on disk and the full pipeline with its artifact directory.

use std::fs;
use std::path::{Path, PathBuf};

use srsplat_core::densify::shuffle_split;
use srsplat_core::image::ImageBuffer;
use srsplat_core::pipeline::{
    evaluate, stage1_train, stage2_train, synth_scene, BicubicResolver, DepthMap, DepthProvider, EvalSummary,
    OracleDepth, OracleResolver, ResolverKind, Stage2Input, Stage2Output, SuperResolver, SynthScene, TrainConfig,
    TrainLog, View, BACKGROUND,
};
use srsplat_core::raster::render;
use srsplat_core::{Camera, GaussianCloud};

use crate::cameras::{load_cameras, write_cameras};
use crate::config_io::write_config;
use crate::error::{Error, Result};
use crate::image_io::{read_png, write_png, Bits};
use crate::nets::write_nets;
use crate::ply::{export_ply, has_flag_properties, import_ply, write_checkpoint};

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn indexed(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("{i:03}.png"))
}

/// A synthetic dataset: ground truth, rigs and images.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub truth: Option<GaussianCloud>,
    /// High-resolution training cameras.
    pub train_cameras: Vec<Camera>,
    pub test_cameras: Vec<Camera>,
    pub lr_images: Vec<ImageBuffer>,
    pub test_images: Vec<ImageBuffer>,
    pub depth: Vec<DepthMap>,
}

impl Dataset {
    pub fn lr_views(&self, factor: usize) -> Result<Vec<View>> {
        self.train_cameras
            .iter()
            .zip(&self.lr_images)
            .enumerate()
            .map(|(i, (c, img))| {
                let camera = c.downscaled(factor);
                if (img.width(), img.height()) != (camera.width, camera.height) {
                    return Err(Error::Validation(format!(
                        "LR image {i} is {}x{} but camera {i} at x{factor} is {}x{}",
                        img.width(),
                        img.height(),
                        camera.width,
                        camera.height
                    )));
                }
                Ok(View {
                    camera,
                    image: img.clone(),
                })
            })
            .collect()
    }

    pub fn test_views(&self) -> Vec<View> {
        self.test_cameras
            .iter()
            .zip(&self.test_images)
            .map(|(c, img)| View {
                camera: c.clone(),
                image: img.clone(),
            })
            .collect()
    }
}

/// Depth priors loaded from disk; invalid pixels are stored as 0.
pub struct FileDepth<'a> {
    pub maps: &'a [DepthMap],
}

impl DepthProvider for FileDepth<'_> {
    fn estimate(&self, view: usize, image: &ImageBuffer, _camera: &Camera) -> srsplat_core::Result<DepthMap> {
        let m = self.maps.get(view).ok_or_else(|| srsplat_core::Error::Provider {
            view,
            message: "no depth map on disk".into(),
        })?;
        if (m.depth.width(), m.depth.height()) != (image.width(), image.height()) {
            return Err(srsplat_core::Error::Provider {
                view,
                message: "depth map size differs from the image".into(),
            });
        }
        Ok(m.clone())
    }
}

/// Writes `config.snapshot`, `truth.ply`, camera rigs and the `lr/`, `hr/`,
/// `test/` and `depth/` image folders.
pub fn write_dataset(scene: &SynthScene, cfg: &TrainConfig, dir: &Path) -> Result<()> {
    for sub in ["lr", "hr", "test", "depth"] {
        create_dir(&dir.join(sub))?;
    }
    write_config(cfg, &dir.join("config.snapshot"))?;
    write_checkpoint(&scene.truth, &dir.join("truth.ply"))?;
    write_cameras(&scene.train_cameras, &dir.join("cameras_train.toml"))?;
    write_cameras(&scene.test_cameras, &dir.join("cameras_test.toml"))?;
    let depth = OracleDepth {
        truth: &scene.truth,
        scale: cfg.depth_affine_scale,
        offset: cfg.depth_affine_offset,
        noise: cfg.depth_noise,
        seed: cfg.seed,
    };
    for (i, hr) in scene.hr_train_views().iter().enumerate() {
        let lr = scene.lr_view(i)?;
        write_png(&indexed(&dir.join("hr"), i), &hr.image, Bits::Sixteen)?;
        write_png(&indexed(&dir.join("lr"), i), &lr.image, Bits::Sixteen)?;
        let d = depth.estimate(i, &lr.image, &lr.camera)?;
        let max = d
            .depth
            .data()
            .iter()
            .zip(&d.mask)
            .filter(|(_, &m)| m)
            .fold(0.0f64, |a, (&v, _)| a.max(v));
        let mut img = ImageBuffer::new(d.depth.width(), d.depth.height(), 1);
        for (k, (&v, &m)) in d.depth.data().iter().zip(&d.mask).enumerate() {
            // Normalized to (0, 1]; the Pearson loss ignores the scale.
            img.data_mut()[k] = if m && max > 0.0 { (v / max).max(1.0 / 65535.0) } else { 0.0 };
        }
        write_png(&indexed(&dir.join("depth"), i), &img, Bits::Sixteen)?;
    }
    for (i, v) in scene.test_views().iter().enumerate() {
        write_png(&indexed(&dir.join("test"), i), &v.image, Bits::Sixteen)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::Validation(format!("dataset directory {} does not exist", dir.display())));
    }
    let train_cameras = load_cameras(&dir.join("cameras_train.toml"))?;
    let test_cameras = load_cameras(&dir.join("cameras_test.toml"))?;
    let truth_path = dir.join("truth.ply");
    let truth = if truth_path.exists() { Some(import_ply(&truth_path)?) } else { None };
    let read_all = |sub: &str, n: usize| -> Result<Vec<ImageBuffer>> {
        (0..n).map(|i| read_png(&indexed(&dir.join(sub), i), false)).collect()
    };
    let lr_images = read_all("lr", train_cameras.len())?;
    let test_images = read_all("test", test_cameras.len())?;
    let depth = if dir.join("depth").is_dir() {
        read_all("depth", train_cameras.len())?
            .into_iter()
            .map(|img| DepthMap {
                mask: img.data().iter().map(|&v| v > 0.0).collect(),
                depth: img,
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(Dataset {
        truth,
        train_cameras,
        test_cameras,
        lr_images,
        test_images,
        depth,
    })
}

/// Writes `iter,term,value` rows.
pub fn write_metrics(log: &TrainLog, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut rows = vec![["iter".to_string(), "term".into(), "value".into()]];
    rows.extend(
        log.records
            .iter()
            .map(|r| [r.iter.to_string(), r.term.clone(), r.value.to_string()]),
    );
    for r in rows {
        w.write_record(&r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Renders `cloud` at every view into `dir/NNN.png` (16-bit).
pub fn write_renders(cloud: &GaussianCloud, cams: &[Camera], dir: &Path) -> Result<()> {
    create_dir(dir)?;
    for (i, c) in cams.iter().enumerate() {
        let img = render(cloud, c, BACKGROUND).color.clamped01();
        write_png(&indexed(dir, i), &img, Bits::Sixteen)?;
    }
    Ok(())
}

/// Stage-2 outputs: `scene.ply`, `checkpoints/stage2.ply`,
/// `checkpoints/nets.bin`, `renders/` and `reference/`.
pub fn write_stage2_artifacts(out: &Stage2Output, test: &[View], dir: &Path) -> Result<()> {
    let ck = dir.join("checkpoints");
    create_dir(&ck)?;
    export_ply(&out.cloud, &dir.join("scene.ply"))?;
    write_checkpoint(&out.checkpoint, &ck.join("stage2.ply"))?;
    write_nets(&out.im, &out.bp, &ck.join("nets.bin"))?;
    let cams: Vec<Camera> = test.iter().map(|v| v.camera.clone()).collect();
    write_renders(&out.cloud, &cams, &dir.join("renders"))?;
    let refdir = dir.join("reference");
    create_dir(&refdir)?;
    for (i, v) in test.iter().enumerate() {
        write_png(&indexed(&refdir, i), &v.image, Bits::Sixteen)?;
    }
    Ok(())
}

/// Picks the configured super-resolver.
pub fn resolver_for<'a>(
    cfg: &TrainConfig,
    truth: Option<&'a GaussianCloud>,
    oracle: &'a mut Option<OracleResolver<'a>>,
) -> Result<&'a dyn SuperResolver> {
    static BICUBIC: BicubicResolver = BicubicResolver;
    match cfg.resolver {
        ResolverKind::Bicubic => Ok(&BICUBIC),
        ResolverKind::Oracle => {
            let truth = truth.ok_or_else(|| {
                Error::Validation("resolver = \"oracle\" needs the ground-truth cloud (truth.ply)".into())
            })?;
            Ok(oracle.insert(OracleResolver { truth }))
        }
    }
}

/// Outcome of [`run_full`].
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub stage1_gaussians: usize,
    pub split_gaussians: usize,
    pub final_gaussians: usize,
    pub stage1_test: EvalSummary,
    pub test: EvalSummary,
    pub files: Vec<PathBuf>,
}

/// Synthesizes the scene and runs stage 1, shuffle split and stage 2,
/// writing every artifact under `out`.
pub fn run_full(cfg: &TrainConfig, out: &Path) -> Result<RunSummary> {
    cfg.validate().map_err(|e| Error::Validation(e.to_string()))?;
    create_dir(out)?;
    let ck = out.join("checkpoints");
    create_dir(&ck)?;
    write_config(cfg, &out.join("config.snapshot"))?;

    let scene = synth_scene(cfg).map_err(|e| e.in_stage("synth"))?;
    let views = scene.lr_views().map_err(|e| e.in_stage("synth"))?;
    let test = scene.test_views();
    let depth = OracleDepth {
        truth: &scene.truth,
        scale: cfg.depth_affine_scale,
        offset: cfg.depth_affine_offset,
        noise: cfg.depth_noise,
        seed: cfg.seed,
    };
    let s1 = stage1_train(&views, &depth, cfg)?;
    write_checkpoint(&s1.cloud, &ck.join("stage1.ply"))?;
    let split = shuffle_split(&s1.cloud, &cfg.split_params()).map_err(|e| e.in_stage("split"))?;
    write_checkpoint(&split, &ck.join("split.ply"))?;
    let stage1_test = evaluate(&s1.cloud, &test)?;
    let (stage1_gaussians, split_gaussians) = (s1.cloud.len(), split.len());

    let mut oracle = None;
    let resolver = resolver_for(cfg, Some(&scene.truth), &mut oracle)?;
    let s2 = stage2_train(
        Stage2Input {
            hr_cloud: split,
            lr_views: &views,
            lr_cloud: &s1.cloud,
            resolver,
        },
        cfg,
    )?;
    let result = evaluate(&s2.cloud, &test)?;
    write_stage2_artifacts(&s2, &test, out)?;

    let mut log = s1.log;
    log.push(cfg.stage1_iters, "split.gaussians", split_gaussians as f64);
    log.extend(s2.log.clone());
    log.push(cfg.stage2_iters, "eval.stage1_test_psnr", stage1_test.psnr);
    log.push(cfg.stage2_iters, "eval.test_psnr", result.psnr);
    log.push(cfg.stage2_iters, "eval.test_ssim", result.ssim);
    write_metrics(&log, &out.join("metrics.csv"))?;

    let files = write_manifest(out)?;
    Ok(RunSummary {
        stage1_gaussians,
        split_gaussians,
        final_gaussians: s2.cloud.len(),
        stage1_test,
        test: result,
        files,
    })
}

/// Every file the full pipeline writes, relative to the run directory.
pub fn expected_artifacts(test_views: usize) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = [
        "config.snapshot",
        "metrics.csv",
        "scene.ply",
        "checkpoints/stage1.ply",
        "checkpoints/split.ply",
        "checkpoints/stage2.ply",
        "checkpoints/nets.bin",
    ]
    .iter()
    .map(PathBuf::from)
    .collect();
    for i in 0..test_views {
        v.push(PathBuf::from(format!("renders/{i:03}.png")));
        v.push(PathBuf::from(format!("reference/{i:03}.png")));
    }
    v
}

fn walk(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            walk(&p, base, out)?;
        } else if p.file_name().is_some_and(|n| n != "manifest.txt") {
            out.push(p.strip_prefix(base).unwrap_or(&p).to_path_buf());
        }
    }
    Ok(())
}

/// Writes `manifest.txt`: one `path bytes` line per artifact and a line
/// stating whether `scene.ply` carries flag properties.
pub fn write_manifest(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    let mut text = String::new();
    for f in &files {
        let len = fs::metadata(dir.join(f)).map_err(|e| Error::io(f, e))?.len();
        text.push_str(&format!("{} {}\n", f.display(), len));
    }
    let scene = dir.join("scene.ply");
    if scene.exists() {
        let bytes = fs::read(&scene).map_err(|e| Error::io(&scene, e))?;
        let flags = if has_flag_properties(&bytes) { "present" } else { "none" };
        text.push_str(&format!("# scene.ply flag properties: {flags}\n"));
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(files)
}
