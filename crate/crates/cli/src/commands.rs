//! Subcommand implementations. Tables go to standard output as TSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use srnkit::anchors::{anchor_count_stats, generate_pyramid_anchors, AnchorSet};
use srnkit::augment::{augment_pipeline, Branch, ImageBuffer};
use srnkit::backbone::{build_stem, build_stem_named, trace_shapes, StemName, StemVariant};
use srnkit::config::RunConfig;
use srnkit::data::{
    detection_file_name, detections_to_string, load_scores, parse_detections, parse_detections_str,
    parse_gt, save_scores, synth_scene, synth_scores, write_detections, write_gt, GroundTruthFace,
    GroundTruthSet, ImageAnnotation, SceneSpec, ScoreModel,
};
use srnkit::eval::{evaluate, SubsetLists, SubsetRule};
use srnkit::matching::{class_balance_stats, match_anchors_with, ClassBalance};
use srnkit::refine::{merge_multiscale, run_inference, Detection, StepScores};
use srnkit::seed::{derive_seed, rng_from_seed, stream_rng};
use srnkit::{BoxXYXY, Error, Execution};

use crate::{Command, Failure, Step};

const DEFAULT_TEST_SCALES: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

type CmdResult = Result<(), Failure>;

pub fn dispatch(cmd: Command, cfg: &RunConfig, exec: Execution) -> CmdResult {
    match cmd {
        Command::Anchors { .. } => anchors(cfg),
        Command::Shapes { variant, input } => shapes(&variant, input),
        Command::MatchStats { gt, step } => match_stats(cfg, &gt, step, exec),
        Command::Simulate {
            gt,
            scores,
            out,
            noiseless,
            no_cap,
        } => simulate(cfg, &gt, scores.as_deref(), &out, noiseless, no_cap, exec),
        Command::Synth {
            out,
            images,
            noiseless,
            text_scores,
            ..
        } => synth(cfg, &out, images, noiseless, text_scores, exec),
        Command::Augment {
            image,
            gt,
            key,
            out_image,
            out_boxes,
            ..
        } => augment(cfg, &image, &gt, key.as_deref(), &out_image, &out_boxes),
        Command::Nms {
            dets, scales, out, ..
        } => nms_cmd(cfg, &dets, &scales, out.as_deref()),
        Command::Eval {
            gt,
            dets,
            subset_lists,
            out,
            ..
        } => eval(
            cfg,
            &gt,
            &dets,
            subset_lists.as_deref(),
            out.as_deref(),
            exec,
        ),
    }
}

fn ensure_parent(path: &Path) -> Result<(), Error> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    ensure_parent(path)?;
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn fmt_ratio(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        "inf".into()
    }
}

fn anchors(cfg: &RunConfig) -> CmdResult {
    let census = anchor_count_stats(&cfg.pyramid)?;
    let mut out = String::from(
        "level\tstride\tgrid_w\tgrid_h\tanchors_per_cell\tcount\tscale_min\tscale_max\n",
    );
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (l, lv) in census.levels.iter().enumerate() {
        let smin = lv.scales.iter().copied().fold(f64::INFINITY, f64::min);
        let smax = lv.scales.iter().copied().fold(0.0, f64::max);
        lo = lo.min(smin);
        hi = hi.max(smax);
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{smin:.2}\t{smax:.2}",
            l + 1,
            lv.stride,
            lv.grid_width,
            lv.grid_height,
            lv.scales.len(),
            lv.count
        );
    }
    let _ = writeln!(out, "total\t-\t-\t-\t-\t{}\t{lo:.2}\t{hi:.2}", census.total);
    let _ = writeln!(out, "low_level_total\t{}", census.low_level_total);
    let _ = writeln!(out, "low_level_fraction\t{:.6}", census.low_level_fraction);
    print!("{out}");
    Ok(())
}

fn shapes(variant: &str, input: u32) -> CmdResult {
    if input == 0 {
        return Err(Failure::Usage("--input must be positive".into()));
    }
    let stems: Vec<StemVariant> = if variant == "all" {
        StemName::ALL.iter().map(|&n| build_stem(n)).collect()
    } else {
        vec![build_stem_named(variant).map_err(|e| Failure::Usage(e.to_string()))?]
    };
    let mut out = String::from("variant\tlayer\tspec\theight\twidth\tchannels\tstride\tparams\n");
    for stem in &stems {
        for (i, t) in trace_shapes(stem, input, input).iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                stem.name,
                i + 1,
                t.layer,
                t.height,
                t.width,
                t.channels,
                t.cumulative_stride,
                t.layer.param_count()
            );
        }
        let _ = writeln!(
            out,
            "{}\ttotal\t-\t-\t-\t-\t-\t{}",
            stem.name,
            stem.param_count()
        );
    }
    print!("{out}");
    Ok(())
}

fn proper_boxes(img: &ImageAnnotation) -> Vec<BoxXYXY> {
    img.faces
        .iter()
        .map(|f| f.bbox)
        .filter(BoxXYXY::is_proper)
        .collect()
}

fn match_stats(cfg: &RunConfig, gt_path: &Path, step: Step, exec: Execution) -> CmdResult {
    let gt = parse_gt(gt_path)?;
    let anchors = generate_pyramid_anchors(&cfg.pyramid)?;
    let th = match step {
        Step::First => cfg.first_step,
        Step::Second => cfg.second_step,
    };
    let stats: Vec<ClassBalance> = exec
        .map_slice(&gt.images, |img| {
            match_anchors_with(
                anchors.boxes(),
                &proper_boxes(img),
                th,
                Execution::Sequential,
            )
            .map(|m| class_balance_stats(&m))
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
    let mut out =
        String::from("image\tpositives\tnegatives\tignored\tpos_neg_ratio\tunmatched_gts\n");
    let row = |out: &mut String, name: &str, s: &ClassBalance| {
        let _ = writeln!(
            out,
            "{name}\t{}\t{}\t{}\t{}\t{}",
            s.positives,
            s.negatives,
            s.ignored,
            fmt_ratio(s.pos_to_neg_ratio),
            s.unmatched_gts
        );
    };
    for (img, s) in gt.images.iter().zip(&stats) {
        row(&mut out, &img.path, s);
    }
    row(&mut out, "total", &ClassBalance::aggregate(&stats));
    print!("{out}");
    Ok(())
}

fn scene_template(cfg: &RunConfig, noiseless: bool) -> SceneSpec {
    let mut spec = cfg.scene_spec(cfg.seed);
    if noiseless {
        spec.score_model = ScoreModel::Noiseless;
        spec.delta_sigma = 0.0;
    }
    spec
}

fn score_path_for(dir: &Path, key: &str) -> PathBuf {
    let bin = dir.join(detection_file_name(key).with_extension("bin"));
    if bin.exists() {
        return bin;
    }
    dir.join(detection_file_name(key))
}

fn load_image_scores(
    source: Option<&Path>,
    gt: &GroundTruthSet,
    idx: usize,
    anchors: &AnchorSet,
    spec: &SceneSpec,
    seed: u64,
) -> Result<StepScores, Error> {
    let img = &gt.images[idx];
    match source {
        Some(p) if p.is_dir() => load_scores(score_path_for(p, &img.path)),
        Some(p) => {
            if gt.images.len() != 1 {
                return Err(Error::Config(
                    "a single score file needs a single-image ground truth; pass a directory"
                        .into(),
                ));
            }
            load_scores(p)
        }
        None => synth_scores(
            &proper_boxes(img),
            anchors,
            spec,
            &mut stream_rng(seed, idx as u64),
        ),
    }
}

fn simulate(
    cfg: &RunConfig,
    gt_path: &Path,
    scores: Option<&Path>,
    out_dir: &Path,
    noiseless: bool,
    no_cap: bool,
    exec: Execution,
) -> CmdResult {
    let gt = parse_gt(gt_path)?;
    let anchors = generate_pyramid_anchors(&cfg.pyramid)?;
    let spec = scene_template(cfg, noiseless);
    let (w, h) = (
        cfg.pyramid.input_width as f64,
        cfg.pyramid.input_height as f64,
    );
    let dets: Vec<(String, Vec<Detection>)> = exec
        .map_range(gt.images.len(), |i| {
            let s = load_image_scores(scores, &gt, i, &anchors, &spec, cfg.seed)?;
            let d = run_inference(&anchors, &s, &cfg.inference, w, h)?;
            Ok::<_, Error>((gt.images[i].path.clone(), d))
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
    let cap = (!no_cap).then_some(cfg.inference.max_detections);
    write_detections(&dets, out_dir, cap)?;
    let mut out = String::from("image\tdetections\n");
    for (k, d) in &dets {
        let _ = writeln!(out, "{k}\t{}", d.len());
    }
    print!("{out}");
    Ok(())
}

fn synth(
    cfg: &RunConfig,
    out_dir: &Path,
    images: usize,
    noiseless: bool,
    text: bool,
    exec: Execution,
) -> CmdResult {
    let anchors = generate_pyramid_anchors(&cfg.pyramid)?;
    let template = scene_template(cfg, noiseless);
    let scenes = exec
        .map_range(images, |i| {
            let spec = SceneSpec {
                seed: derive_seed(cfg.seed, i as u64),
                ..template.clone()
            };
            synth_scene(&spec, &anchors)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let mut gt = GroundTruthSet::default();
    let ext = if text { "txt" } else { "bin" };
    let mut out = String::from("image\tfaces\tscore_file\n");
    for (i, scene) in scenes.iter().enumerate() {
        let key = format!("synth/scene_{i:04}.jpg");
        let rel = Path::new("scores").join(detection_file_name(&key).with_extension(ext));
        let path = out_dir.join(&rel);
        ensure_parent(&path)?;
        save_scores(&scene.scores, &path)?;
        let _ = writeln!(out, "{key}\t{}\t{}", scene.faces.len(), rel.display());
        gt.images.push(ImageAnnotation {
            path: key,
            faces: scene
                .faces
                .iter()
                .map(|&b| GroundTruthFace::new(b))
                .collect(),
        });
    }
    ensure_parent(&out_dir.join("gt.txt"))?;
    write_gt(&gt, out_dir.join("gt.txt"))?;
    print!("{out}");
    Ok(())
}

fn augment(
    cfg: &RunConfig,
    image: &Path,
    gt_path: &Path,
    key: Option<&str>,
    out_image: &Path,
    out_boxes: &Path,
) -> CmdResult {
    let img = ImageBuffer::read_ppm(image)?;
    let gt = parse_gt(gt_path)?;
    let ann = match key {
        Some(k) => gt
            .get(k)
            .ok_or_else(|| Error::UnknownImages(vec![k.to_string()]))?,
        None if gt.images.len() == 1 => &gt.images[0],
        None => {
            return Err(Failure::Usage(
                "ground truth holds several images; choose one with --key".into(),
            ))
        }
    };
    let boxes: Vec<BoxXYXY> = ann.faces.iter().map(|f| f.bbox).collect();
    let out = augment_pipeline(&img, &boxes, &cfg.augment, &mut rng_from_seed(cfg.seed))?;
    write_file(out_image, out.image.to_ppm())?;
    let faces = out
        .sources
        .iter()
        .zip(&out.boxes)
        .map(|(&s, &b)| GroundTruthFace {
            bbox: b,
            ..ann.faces[s]
        })
        .collect();
    let result = GroundTruthSet {
        images: vec![ImageAnnotation {
            path: ann.path.clone(),
            faces,
        }],
    };
    ensure_parent(out_boxes)?;
    write_gt(&result, out_boxes)?;
    let branch = match out.branch {
        Branch::DataAnchor(_) => "data_anchor",
        Branch::Standard { .. } => "standard",
    };
    println!(
        "branch\t{branch}\nboxes\t{}\nsize\t{}x{}",
        out.boxes.len(),
        out.image.width(),
        out.image.height()
    );
    Ok(())
}

fn nms_cmd(cfg: &RunConfig, paths: &[PathBuf], scales: &[f64], out: Option<&Path>) -> CmdResult {
    let scales = match (scales.len(), paths.len()) {
        (0, 1) => vec![1.0],
        (0, 4) => DEFAULT_TEST_SCALES.to_vec(),
        (0, n) => {
            return Err(Failure::Usage(format!(
                "{n} detection files need an explicit --scales list"
            )));
        }
        (s, n) if s != n => {
            return Err(Failure::Usage(format!(
                "{s} scales given for {n} detection files"
            )));
        }
        _ => scales.to_vec(),
    };
    let mut key = None;
    let mut sets = Vec::with_capacity(paths.len());
    for (path, &scale) in paths.iter().zip(&scales) {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let (k, dets) = parse_detections_str(&text).map_err(|e| e.at_path(path))?;
        match &key {
            None => key = Some(k),
            Some(first) if *first != k => {
                return Err(Failure::Data(Error::Parse {
                    path: Some(path.clone()),
                    line: 1,
                    msg: format!("image key {k:?} differs from {first:?}"),
                }));
            }
            Some(_) => {}
        }
        sets.push((scale, dets));
    }
    let kept = merge_multiscale(&sets, cfg.inference.nms_iou, cfg.inference.max_detections)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let s = detections_to_string(key.as_deref().unwrap_or_default(), &kept, None)?;
    match out {
        Some(p) => write_file(p, s)?,
        None => print!("{s}"),
    }
    Ok(())
}

fn eval(
    cfg: &RunConfig,
    gt_path: &Path,
    dets_dir: &Path,
    lists: Option<&Path>,
    out: Option<&Path>,
    exec: Execution,
) -> CmdResult {
    let gt = parse_gt(gt_path)?;
    let dets = parse_detections(dets_dir)?;
    let rule = match lists {
        Some(d) => SubsetRule::Lists(SubsetLists::load(d)?),
        None => cfg.subset_rule(),
    };
    let report = evaluate(&dets, &gt, &rule, cfg.eval_iou, exec)?;
    println!("{}", report.summary_line());
    if let Some(p) = out {
        write_file(p, report.to_csv())?;
    }
    Ok(())
}
