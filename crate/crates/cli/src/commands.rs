use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use tas_core::datagen::{
    gen_keypoint_shape, gen_multipart, gen_partial_complete, gen_split_plane, ShapeKind, SyntheticSpec,
};
use tas_core::dispnet::checkpoint;
use tas_core::geom::{self, Point3};
use tas_core::metrics::{chamfer, chamfer_mean, emd, emd_star, keypoint_ap, seg_scores};
use tas_core::sampling::{fps, grid_sample, random_sample};
use tas_core::task_aware::{
    default_epsilon, detect_boundary, edge_fps, key_fps, part_fps, soft_keypoints, TaskAwareConfig,
};
use tas_core::training::{
    synthetic_dataset, synthetic_view, SamplerKind, Supervision, TaskKind, TrainConfig, TrainSample, Trainer,
};
use tas_core::PointCloud;

use crate::args::{
    BoundaryArgs, GenArgs, MetricArg, MetricArgs, SampleArgs, SamplerArg, SettingFlags, ShapeArg, SweepArgs,
    TrainArgs,
};
use crate::error::{CliError, CliResult};
use crate::pointfile::{read_cloud, read_indices, write_indices, PointFile};
use crate::settings::{self, parse_list, DataOptions};

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn say(out: &mut dyn Write, line: &str) -> CliResult<()> {
    writeln!(out, "{line}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn parse_point(text: &str) -> CliResult<Point3> {
    let v: Vec<f64> = parse_list("view", text)?;
    let p: Point3 = v.try_into().map_err(|_| CliError::usage("view needs three comma-separated values"))?;
    let n = geom::norm(&p);
    if !n.is_finite() || n == 0.0 {
        return Err(CliError::usage("view must be a nonzero finite vector"));
    }
    Ok(geom::scale(&p, 1.0 / n))
}

pub fn gen(a: &GenArgs, out: &mut dyn Write) -> CliResult<()> {
    if a.count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    let (kind, default_name) = match a.kind {
        ShapeArg::SplitPlane => (ShapeKind::SplitPlane, "split-plane"),
        ShapeArg::MultiPart => (ShapeKind::MultiPart, "multi-part"),
        ShapeArg::PartialComplete => (ShapeKind::PartialComplete, "partial-complete"),
        ShapeArg::Keypoint => (ShapeKind::KeypointShape, "keypoint"),
    };
    let base = a.out.clone().unwrap_or_else(|| PathBuf::from(default_name));
    let view = a.view.as_deref().map(parse_point).transpose()?;
    for i in 0..a.count {
        let seed = a.seed.wrapping_add(i as u64);
        let name = if a.count == 1 { base.clone() } else { with_suffix(&base, &format!("-{i}")) };
        let spec = SyntheticSpec::new(kind, a.n, a.parts, a.noise, seed);
        let mut written = Vec::new();
        match kind {
            ShapeKind::SplitPlane | ShapeKind::MultiPart => {
                let cloud = if kind == ShapeKind::SplitPlane { gen_split_plane(&spec)? } else { gen_multipart(&spec)? };
                let path = with_suffix(&name, ".xyz");
                PointFile::from_cloud(&cloud).write(&path)?;
                written.push((path, cloud.len()));
            }
            ShapeKind::PartialComplete => {
                let v = view.unwrap_or_else(|| synthetic_view(seed));
                let (partial, complete) = gen_partial_complete(&spec, &v)?;
                for (suffix, cloud) in [(".partial.xyz", &partial), (".complete.xyz", &complete)] {
                    let path = with_suffix(&name, suffix);
                    PointFile::from_cloud(cloud).write(&path)?;
                    written.push((path, cloud.len()));
                }
            }
            ShapeKind::KeypointShape => {
                let (cloud, keys) = gen_keypoint_shape(&spec)?;
                let path = with_suffix(&name, ".xyz");
                PointFile::from_cloud(&cloud).write(&path)?;
                written.push((path, cloud.len()));
                let path = with_suffix(&name, ".keys");
                write_indices(&path, &keys)?;
                written.push((path, keys.len()));
            }
        }
        for (path, n) in written {
            say(out, &format!("wrote={} rows={n}", path.display()))?;
        }
    }
    Ok(())
}

fn require_labels(cloud: &PointCloud, what: &str) -> CliResult<()> {
    if cloud.labels().is_none() {
        return Err(CliError::usage(format!("{what} needs a labeled input (4th column)")));
    }
    Ok(())
}

pub fn sample(a: &SampleArgs, out: &mut dyn Write) -> CliResult<()> {
    let cloud = read_cloud(&a.input)?;
    let defaults =
        if a.sampler == SamplerArg::KeyFps { TaskAwareConfig::keypoint() } else { TaskAwareConfig::segmentation() };
    let ta = TaskAwareConfig {
        lambda: a.lambda.unwrap_or(defaults.lambda),
        beta: a.beta.unwrap_or(defaults.beta),
        epsilon: a.epsilon,
        knn_soft: a.knn_soft,
    };
    let m = || a.m.ok_or_else(|| CliError::usage("--m is required for this sampler"));
    let result = match a.sampler {
        SamplerArg::Fps => fps(&cloud, m()?, 0)?,
        SamplerArg::Random => random_sample(&cloud, m()?, a.seed)?,
        SamplerArg::Grid => {
            let cell = a.cell_size.ok_or_else(|| CliError::usage("grid sampling needs --cell-size"))?;
            grid_sample(&cloud, cell)?
        }
        SamplerArg::EdgeFps => {
            require_labels(&cloud, "edge-fps")?;
            edge_fps(&cloud, m()?, &ta)?
        }
        SamplerArg::PartFps => {
            require_labels(&cloud, "part-fps")?;
            part_fps(&cloud, m()?)?
        }
        SamplerArg::KeyFps => {
            let keys = a.keys.as_ref().ok_or_else(|| CliError::usage("key-fps needs --keys"))?;
            let soft = soft_keypoints(&cloud, &read_indices(keys)?, ta.knn_soft)?;
            key_fps(&cloud, &soft, m()?, &ta)?
        }
    };
    let idx = result.source_indices.clone().expect("samplers select input points");
    let name = a.sampler.to_possible_value().expect("named sampler").get_name().to_string();
    let path = a.out.clone().unwrap_or_else(|| with_suffix(&a.input, &format!(".{name}.xyz")));
    PointFile::from_cloud(&cloud.subset(&idx)?).write(&path)?;
    if cloud.labels().is_some() {
        let mask = detect_boundary(&cloud, ta.resolve_epsilon(&cloud)?)?;
        say(out, &format!("m={} boundary_fraction={:.9}", idx.len(), mask.fraction_of(&idx)))
    } else {
        say(out, &format!("m={}", idx.len()))
    }
}

use clap::ValueEnum as _;

pub fn boundary(a: &BoundaryArgs, out: &mut dyn Write) -> CliResult<()> {
    let cloud = read_cloud(&a.input)?;
    require_labels(&cloud, "boundary detection")?;
    let eps = match a.epsilon {
        Some(e) => e,
        None => default_epsilon(&cloud)?,
    };
    let mask = detect_boundary(&cloud, eps)?;
    let (flagged, _) = mask.counts();
    if let Some(path) = &a.out {
        let labels = mask.flags.iter().map(|&f| i32::from(f)).collect();
        PointFile { points: cloud.points().to_vec(), labels: Some(labels) }.write(path)?;
    }
    say(
        out,
        &format!(
            "n={} flagged={flagged} fraction={:.9} epsilon={:.9}",
            cloud.len(),
            flagged as f64 / cloud.len() as f64,
            eps
        ),
    )
}

fn files<const N: usize>(a: &MetricArgs) -> CliResult<[&Path; N]> {
    let paths: Vec<&Path> = a.files.iter().map(PathBuf::as_path).collect();
    paths.try_into().map_err(|_| CliError::usage(format!("this metric takes {N} files, got {}", a.files.len())))
}

fn points(path: &Path) -> CliResult<Vec<Point3>> {
    Ok(PointFile::read(path)?.points)
}

fn value(out: &mut dyn Write, name: &str, v: f64) -> CliResult<()> {
    say(out, &format!("metric={name} value={v:.9}"))
}

pub fn metric(a: &MetricArgs, out: &mut dyn Write) -> CliResult<()> {
    match a.metric {
        MetricArg::Cd => {
            let [x, y] = files(a)?;
            let (x, y) = (points(x)?, points(y)?);
            value(out, "cd", chamfer(&x, &y)?)?;
            value(out, "cd_mean", chamfer_mean(&x, &y)?)
        }
        MetricArg::Emd => {
            let [x, y] = files(a)?;
            let (x, y) = (points(x)?, points(y)?);
            if x.len() != y.len() {
                return Err(CliError::usage(format!("emd needs equal sizes, got {} and {}", x.len(), y.len())));
            }
            value(out, "emd", emd(&x, &y)?.0)
        }
        MetricArg::EmdStar => {
            let [pred, target] = files(a)?;
            let init = a.init.as_ref().ok_or_else(|| CliError::usage("emd-star needs --init"))?;
            let (pred, target, init) = (points(pred)?, points(target)?, points(init)?);
            if pred.len() != target.len() || init.len() != target.len() {
                return Err(CliError::usage("emd-star needs equal sizes"));
            }
            value(out, "emd_star", emd_star(&pred, &init, &target)?)
        }
        MetricArg::Miou => {
            if a.files.len() % 2 != 0 {
                return Err(CliError::usage("miou takes PRED GT pairs"));
            }
            let mut preds = Vec::new();
            let mut gts = Vec::new();
            for pair in a.files.chunks(2) {
                for (path, dst) in [(&pair[0], &mut preds), (&pair[1], &mut gts)] {
                    let f = PointFile::read(path)?;
                    let labels = f
                        .labels
                        .ok_or_else(|| CliError::usage(format!("{}: labels required", path.display())))?;
                    dst.push(labels);
                }
            }
            let top = preds.iter().chain(&gts).flatten().copied().max().unwrap_or(0).max(0) as usize;
            let parts = a.parts.unwrap_or(top + 1);
            let s = seg_scores(&preds, &gts, parts)?;
            value(out, "shape_miou", s.shape_miou)?;
            value(out, "part_miou", s.part_miou)?;
            value(out, "oa", s.overall_acc)
        }
        MetricArg::Ap => {
            let [pred, gt] = files(a)?;
            value(out, "ap", keypoint_ap(&points(pred)?, &points(gt)?, a.threshold)?)
        }
    }
}

fn settings_of(flags: &SettingFlags) -> CliResult<(TrainConfig, DataOptions)> {
    let mut pairs = match &flags.config {
        Some(path) => settings::read_config(path)?,
        None => Vec::new(),
    };
    pairs.extend(flags.pairs());
    settings::build(&pairs)
}

fn centroid(points: &[Point3]) -> Point3 {
    let sum = points.iter().fold([0.0; 3], |a, p| geom::add(&a, p));
    geom::scale(&sum, 1.0 / points.len().max(1) as f64)
}

fn strip_suffix(path: &Path, suffix: &str) -> Option<PathBuf> {
    path.to_str().and_then(|s| s.strip_suffix(suffix)).map(PathBuf::from)
}

fn load_dataset(cfg: &TrainConfig, data: &DataOptions, files: &[PathBuf]) -> CliResult<Vec<TrainSample>> {
    if files.is_empty() {
        let spec = SyntheticSpec::new(data.shape, data.n, data.parts, data.noise, data.seed);
        return Ok(synthetic_dataset(&spec, data.count)?);
    }
    files
        .iter()
        .map(|path| match cfg.task {
            TaskKind::Segmentation => Ok(TrainSample::labeled(read_cloud(path)?)),
            TaskKind::Keypoint => {
                let cloud = read_cloud(path)?;
                let base = strip_suffix(path, ".xyz").unwrap_or_else(|| path.clone());
                let keys = read_indices(&with_suffix(&base, ".keys"))?;
                Ok(TrainSample::keypoint(cloud, keys))
            }
            TaskKind::Completion => {
                let base = strip_suffix(path, ".partial.xyz").ok_or_else(|| {
                    CliError::usage(format!("{}: completion data must be NAME.partial.xyz", path.display()))
                })?;
                let partial = read_cloud(path)?;
                let complete = read_cloud(&with_suffix(&base, ".complete.xyz"))?;
                let dir = geom::sub(&centroid(partial.points()), &centroid(complete.points()));
                let n = geom::norm(&dir);
                let view = if n > 0.0 { geom::scale(&dir, 1.0 / n) } else { [0.0, 0.0, 1.0] };
                Ok(TrainSample::completion(partial, complete, view))
            }
        })
        .collect()
}

pub fn train(a: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let (cfg, data) = settings_of(&a.settings)?;
    let dataset = load_dataset(&cfg, &data, &a.settings.data)?;
    let mut trainer = Trainer::new(cfg, &dataset)?;
    let outcome = trainer.train().map(|_| ());
    let report = trainer.report();
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(|e| CliError::io(&a.csv, e))?;
    std::fs::write(&a.csv, csv).map_err(|e| CliError::io(&a.csv, e))?;
    outcome?;
    checkpoint::save(trainer.params(), &a.checkpoint).map_err(|e| match e {
        tas_core::Error::Io(source) => CliError::io(&a.checkpoint, source),
        other => other.into(),
    })?;
    match report.last() {
        Some(r) => say(
            out,
            &format!(
                "epochs={} task_loss={:.9} disp_loss={:.9} metric={:.9} boundary_fraction={:.9}",
                report.records.len(),
                r.task_loss,
                r.disp_loss,
                r.metric,
                r.boundary_fraction
            ),
        ),
        None => say(out, "epochs=0"),
    }
}

pub const SWEEP_HEADER: &str = "sampler,lambda,beta,boundary_fraction,shape_miou,part_miou,oa";

pub fn sweep(a: &SweepArgs, out: &mut dyn Write) -> CliResult<()> {
    let (base, data) = settings_of(&a.settings)?;
    if base.task != TaskKind::Segmentation {
        return Err(CliError::usage("sweep runs the segmentation task"));
    }
    let lambdas: Vec<f64> = parse_list("lambdas", &a.lambdas)?;
    let betas: Vec<f64> = parse_list("betas", &a.betas)?;
    let dataset = load_dataset(&base, &data, &a.settings.data)?;
    let mut rows = vec![SWEEP_HEADER.to_string()];
    let run = |cfg: TrainConfig| -> CliResult<(f64, f64, f64, f64)> {
        let mut t = Trainer::new(cfg, &dataset)?;
        t.train()?;
        let r = t.report();
        let s = r.seg_scores.ok_or_else(|| CliError::usage("no epochs to evaluate"))?;
        Ok((r.final_boundary_fraction().unwrap_or(0.0), s.shape_miou, s.part_miou, s.overall_acc))
    };
    let (b, s, p, o) = run(TrainConfig { sampler: SamplerKind::Fps, ..base.clone() })?;
    rows.push(format!("fps,,,{b},{s},{p},{o}"));
    for &beta in &betas {
        for &lambda in &lambdas {
            let cfg = TrainConfig {
                sampler: SamplerKind::TaskAware,
                supervision: Supervision::EdgeFps,
                lambda,
                beta,
                ..base.clone()
            };
            cfg.validate()?;
            let (b, s, p, o) = run(cfg)?;
            rows.push(format!("edge-fps,{lambda},{beta},{b},{s},{p},{o}"));
        }
    }
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    match &a.out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => out.write_all(text.as_bytes()).map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}
