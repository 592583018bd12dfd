use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use egopose_core::align::{
    align_transform, encode_pose_features, serialize_pose_prompt, PromptConvention, DEFAULT_PROMPT_PRECISION,
};
use egopose_core::intersection::{build_intersection_matrix, IntersectionConfig};
use egopose_core::io::{self, matrix, PlyFormat, TrajectoryOptions};
use egopose_core::llm::{self, aggregate, EndpointConfig, HttpChatClient, TemplateKind};
use egopose_core::policy::{self, choose_pose, ClipRatio, SelectionPolicy};
use egopose_core::seed;
use egopose_core::synth::{gen_scene, SynthBudget, SynthSpec};
use egopose_core::CameraExtrinsic;

use crate::{
    AlignArgs, BuildArgs, CliError, Context, ConventionArg, LlmArgs, PolicyArg, ScoreArgs, SelectArgs, StatsArgs,
    SynthArgs, VariantArg,
};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn failed(msg: impl std::fmt::Display) -> CliError {
    CliError::Failed(msg.to_string())
}

fn existing_dir(flag: Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    let path = flag.or_else(|| file.clone()).ok_or_else(|| usage(format!("--{name} is required")))?;
    if !path.is_dir() {
        return Err(usage(format!("--{name} {} is not a directory", path.display())));
    }
    Ok(path)
}

fn required_path(flag: Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| file.clone()).ok_or_else(|| usage(format!("--{name} is required")))
}

fn score_config(ctx: &Context, a: &ScoreArgs) -> Result<IntersectionConfig, CliError> {
    let f = &ctx.file;
    let d = IntersectionConfig::default();
    let cfg = IntersectionConfig {
        near: a.near.or(f.near).unwrap_or(d.near),
        far: a.far.or(f.far).unwrap_or(d.far),
        delta: a.delta.or(f.delta).unwrap_or(d.delta),
        grid_step: a.grid_step.or(f.grid_step).unwrap_or(d.grid_step),
        zbuffer_scale: a.zbuffer_scale.or(f.zbuffer_scale).unwrap_or(d.zbuffer_scale),
        seed: a.seed.or(f.seed).unwrap_or(d.seed),
        jitter: true,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn convention(ctx: &Context, flag: Option<ConventionArg>) -> Result<PromptConvention, CliError> {
    let from_file = match ctx.file.convention.as_deref() {
        None => None,
        Some("verbatim") => Some(ConventionArg::Verbatim),
        Some("camera-axes") => Some(ConventionArg::CameraAxes),
        Some(other) => return Err(usage(format!("unknown convention '{other}'"))),
    };
    Ok(match flag.or(from_file) {
        Some(ConventionArg::CameraAxes) => PromptConvention::CameraAxes,
        _ => PromptConvention::Verbatim,
    })
}

fn load_trajectory(scans: &Path, scene: &str) -> Result<egopose_core::Trajectory, CliError> {
    let read = io::read_trajectory(scans.join(scene), &TrajectoryOptions::default()).map_err(failed)?;
    for s in &read.skipped {
        log::warn!("{scene}: skipped frame {}: {}", s.frame_id, s.reason);
    }
    Ok(read.trajectory)
}

#[derive(Serialize)]
struct SceneSummary {
    scene_id: String,
    frames: usize,
    objects: usize,
    warnings: usize,
}

#[derive(Serialize)]
struct SceneFailure {
    scene_id: String,
    error: String,
}

#[derive(Serialize)]
struct BuildSummary {
    scenes: usize,
    frames: usize,
    objects: usize,
    warnings: usize,
    built: Vec<SceneSummary>,
    failed: Vec<SceneFailure>,
}

fn build_one(
    scans: &Path,
    annotations: &Path,
    out: &Path,
    scene_id: &str,
    cfg: &IntersectionConfig,
) -> Result<SceneSummary, String> {
    let loaded =
        io::load_scene(scans, annotations, scene_id, &TrajectoryOptions::default()).map_err(|e| e.to_string())?;
    for w in &loaded.warnings {
        log::warn!("{scene_id}: {w}");
    }
    let build = build_intersection_matrix(&loaded.bundle, cfg).map_err(|e| e.to_string())?;
    let path = out.join(format!("{scene_id}.{}", matrix::EXTENSION));
    io::write_matrix(&build.matrix, &path).map_err(|e| e.to_string())?;
    Ok(SceneSummary {
        scene_id: scene_id.to_owned(),
        frames: build.matrix.n_frames(),
        objects: build.matrix.n_objects(),
        warnings: build.warnings + loaded.warnings.len(),
    })
}

pub fn build_intersections(ctx: &Context, a: BuildArgs) -> Result<(), CliError> {
    let scans = existing_dir(a.scans, &ctx.file.scans, "scans")?;
    let annotations = existing_dir(a.annotations, &ctx.file.annotations, "annotations")?;
    let out = required_path(a.out, &ctx.file.out, "out")?;
    let cfg = score_config(ctx, &a.score)?;
    let scenes = if a.scene.is_empty() {
        io::list_scenes(&scans).map_err(failed)?
    } else {
        a.scene
    };
    if scenes.is_empty() {
        return Err(failed(format!("no scenes under {}", scans.display())));
    }
    fs::create_dir_all(&out).map_err(failed)?;

    let start = Instant::now();
    let results: Vec<(String, Result<SceneSummary, String>)> = scenes
        .par_iter()
        .map(|id| (id.clone(), build_one(&scans, &annotations, &out, id, &cfg)))
        .collect();
    let mut summary = BuildSummary {
        scenes: 0,
        frames: 0,
        objects: 0,
        warnings: 0,
        built: vec![],
        failed: vec![],
    };
    for (scene_id, r) in results {
        match r {
            Ok(s) => {
                summary.scenes += 1;
                summary.frames += s.frames;
                summary.objects += s.objects;
                summary.warnings += s.warnings;
                summary.built.push(s);
            }
            Err(error) => {
                log::warn!("{scene_id}: skipped: {error}");
                eprintln!("skipped {scene_id}: {error}");
                summary.failed.push(SceneFailure { scene_id, error });
            }
        }
    }
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(out.join("summary.json"), text + "\n").map_err(failed)?;
    eprintln!(
        "built {} of {} scenes: {} frames, {} objects, {} warnings in {:.2}s",
        summary.scenes,
        scenes.len(),
        summary.frames,
        summary.objects,
        summary.warnings,
        start.elapsed().as_secs_f64()
    );
    if summary.scenes == 0 {
        return Err(failed("every scene failed"));
    }
    Ok(())
}

pub fn select_pose(ctx: &Context, a: SelectArgs) -> Result<(), CliError> {
    let f = &ctx.file;
    let dir = existing_dir(a.out, &f.out, "out")?;
    let policy_arg = match (a.policy, f.policy.as_deref()) {
        (Some(p), _) => p,
        (None, None) | (None, Some("clip")) => PolicyArg::Clip,
        (None, Some("top")) => PolicyArg::Top,
        (None, Some("random")) => PolicyArg::Random,
        (None, Some(other)) => return Err(usage(format!("unknown policy '{other}'"))),
    };
    let ratio = ClipRatio::new(a.clip_ratio.or(f.clip_ratio).unwrap_or(ClipRatio::DEFAULT.value()))
        .map_err(|e| usage(e.to_string()))?;
    let policy = match policy_arg {
        PolicyArg::Top => SelectionPolicy::Top,
        PolicyArg::Clip => SelectionPolicy::Clip(ratio),
        PolicyArg::Random => SelectionPolicy::Random,
    };
    let seed = a.seed.or(f.seed).unwrap_or(0);
    let m = io::read_matrix(dir.join(format!("{}.{}", a.scene, matrix::EXTENSION))).map_err(failed)?;
    let mut rng = seed::query_rng(seed, &a.scene, a.query_id);
    let choice = choose_pose(&m, &a.objects, policy, &mut rng).map_err(failed)?;

    let pose = match a.scans.or_else(|| f.scans.clone()) {
        Some(scans) => {
            let traj = load_trajectory(&scans, &a.scene)?;
            let e = traj
                .frame(choice.frame_id)
                .ok_or_else(|| failed(format!("frame {} missing from trajectory", choice.frame_id)))?;
            let precision = a.precision.or(f.precision).unwrap_or(DEFAULT_PROMPT_PRECISION);
            Some(serialize_pose_prompt(e, precision, convention(ctx, a.convention)?).text)
        }
        None => None,
    };
    if choice.fallback {
        eprintln!("note: no frame sees the target; fell back to a random pose");
    }
    let record = json!({
        "scene_id": a.scene,
        "object_ids": a.objects,
        "query_id": a.query_id,
        "policy": policy.to_string(),
        "frame_id": choice.frame_id,
        "fallback": choice.fallback,
        "pose": pose,
    });
    println!("{record}");
    Ok(())
}

fn write_text(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(failed),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(failed)
        }
    }
}

pub fn align(ctx: &Context, a: AlignArgs) -> Result<(), CliError> {
    let f = &ctx.file;
    let scans = existing_dir(a.scans, &f.scans, "scans")?;
    let variant = match (a.variant, f.variant.as_deref()) {
        (Some(v), _) => v,
        (None, None) | (None, Some("transform")) => VariantArg::Transform,
        (None, Some("embed-features")) => VariantArg::EmbedFeatures,
        (None, Some("prompt")) => VariantArg::Prompt,
        (None, Some("none")) => VariantArg::None,
        (None, Some(other)) => return Err(usage(format!("unknown variant '{other}'"))),
    };
    if matches!(variant, VariantArg::Transform | VariantArg::None) && a.out.is_none() {
        return Err(usage("--out is required for point-cloud output"));
    }
    let annotations = if variant == VariantArg::EmbedFeatures {
        Some(existing_dir(a.annotations, &f.annotations, "annotations")?)
    } else {
        None
    };
    let traj = load_trajectory(&scans, &a.scene)?;
    let e: CameraExtrinsic = *traj
        .frame(a.frame)
        .ok_or_else(|| failed(format!("frame {} not in trajectory of {}", a.frame, a.scene)))?;
    let read_cloud = || -> Result<egopose_core::PointCloud, CliError> {
        let read = io::read_ply(scans.join(&a.scene).join(io::CLOUD_FILE)).map_err(failed)?;
        for w in &read.warnings {
            log::warn!("{}: {w}", a.scene);
        }
        Ok(read.cloud)
    };

    match variant {
        VariantArg::Transform | VariantArg::None => {
            let cloud = read_cloud()?;
            let cloud = if variant == VariantArg::Transform {
                align_transform(&cloud, &e, &a.scene).cloud
            } else {
                cloud
            };
            let out = a.out.as_deref().expect("checked above");
            io::write_ply(&cloud, out, PlyFormat::BinaryLittleEndian).map_err(failed)?;
            eprintln!("wrote {} points to {}", cloud.len(), out.display());
        }
        VariantArg::Prompt => {
            let precision = a.precision.or(f.precision).unwrap_or(DEFAULT_PROMPT_PRECISION);
            let prompt = serialize_pose_prompt(&e, precision, convention(ctx, a.convention)?);
            write_text(a.out.as_deref(), &format!("{}\n", prompt.text))?;
        }
        VariantArg::EmbedFeatures => {
            let cloud = read_cloud()?;
            let root = annotations.expect("checked above");
            let file = io::read_annotations(io::annotations_path(&root, &a.scene)).map_err(failed)?;
            let tokens: Vec<_> = file.objects.iter().map(|o| o.center(&cloud)).collect();
            let block = encode_pose_features(&tokens, &e).map_err(failed)?;
            let mut text = String::new();
            for (obj, feat) in file.objects.iter().zip(&block.features) {
                writeln!(text, "{}", json!({ "object_id": obj.object_id, "features": feat })).expect("string write");
            }
            write_text(a.out.as_deref(), &text)?;
        }
    }
    Ok(())
}

pub fn stats(ctx: &Context, a: StatsArgs) -> Result<(), CliError> {
    let f = &ctx.file;
    let scans = existing_dir(a.scans, &f.scans, "scans")?;
    let out = required_path(a.out, &f.out, "out")?;
    let matrices = match a.matrices {
        Some(m) => m,
        None => out.clone(),
    };
    if !matrices.is_dir() {
        return Err(usage(format!("matrix directory {} does not exist", matrices.display())));
    }
    let raw_ratios = if a.clip_ratio.is_empty() {
        vec![f.clip_ratio.unwrap_or(ClipRatio::DEFAULT.value())]
    } else {
        a.clip_ratio
    };
    let ratios = raw_ratios
        .iter()
        .map(|&r| ClipRatio::new(r).map_err(|e| usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;

    let mut files: Vec<PathBuf> = fs::read_dir(&matrices)
        .map_err(failed)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|x| x.to_str()) == Some(matrix::EXTENSION))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(failed(format!("no .{} files in {}", matrix::EXTENSION, matrices.display())));
    }

    let mut spreads: Vec<Vec<f64>> = vec![Vec::new(); ratios.len()];
    let mut table = String::from("clip_ratio,scene_id,object_id,candidates,spread\n");
    let mut skipped_queries = 0usize;
    for path in &files {
        let m = match io::read_matrix(path) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("skipped {}: {e}", path.display());
                continue;
            }
        };
        let traj = match load_trajectory(&scans, m.scene_id()) {
            Ok(t) => t,
            Err(CliError::Failed(e) | CliError::Usage(e)) => {
                eprintln!("skipped {}: {e}", m.scene_id());
                continue;
            }
        };
        for &obj in m.object_ids() {
            let c = policy::candidates(&m, obj).map_err(failed)?;
            if c.is_empty() {
                skipped_queries += 1;
                continue;
            }
            for (ri, ratio) in ratios.iter().enumerate() {
                let frames: Vec<CameraExtrinsic> = c
                    .clip_band(*ratio)
                    .iter()
                    .filter_map(|(id, _)| traj.frame(*id).copied())
                    .collect();
                let spread = match policy::max_yaw_spread(&frames) {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("{} object {obj}: {e}", m.scene_id());
                        continue;
                    }
                };
                spreads[ri].push(spread);
                writeln!(table, "{},{},{obj},{},{spread}", ratio.value(), m.scene_id(), frames.len()).expect("string write");
            }
        }
    }

    fs::create_dir_all(&out).map_err(failed)?;
    let mut kde_csv = String::from("clip_ratio,x,density\n");
    let mut any = false;
    for (ratio, s) in ratios.iter().zip(&spreads) {
        match policy::yaw_spread_kde(s, a.bandwidth) {
            Ok(kde) => {
                any = true;
                for (x, d) in kde.xs.iter().zip(&kde.density) {
                    writeln!(kde_csv, "{},{x},{d}", ratio.value()).expect("string write");
                }
                eprintln!(
                    "X={}: {} queries, bandwidth {:.4} rad, mass below 0.5 rad {:.4}",
                    ratio.value(),
                    s.len(),
                    kde.bandwidth,
                    kde.mass_below(0.5)
                );
            }
            Err(e) => eprintln!("X={}: no density ({e})", ratio.value()),
        }
    }
    if skipped_queries > 0 {
        eprintln!("{skipped_queries} queries had no candidate frames");
    }
    fs::write(out.join("yaw_spreads.csv"), table).map_err(failed)?;
    fs::write(out.join("yaw_kde.csv"), kde_csv).map_err(failed)?;
    if !any {
        return Err(failed("not enough queries for a density estimate"));
    }
    Ok(())
}

pub fn llm(ctx: &Context, a: LlmArgs, kind: TemplateKind) -> Result<(), CliError> {
    let f = &ctx.file;
    let d = EndpointConfig::default();
    let cfg = EndpointConfig {
        base_url: a
            .endpoint
            .or_else(|| f.endpoint.clone())
            .ok_or_else(|| usage("--endpoint is required"))?,
        model: a.model.or_else(|| f.model.clone()).unwrap_or(d.model),
        token_env: a.token_env.or_else(|| f.token_env.clone()),
        timeout_secs: a.timeout.or(f.timeout).unwrap_or(d.timeout_secs),
        max_retries: a.retries.or(f.retries).unwrap_or(d.max_retries),
        max_in_flight: a.max_in_flight.or(f.max_in_flight).unwrap_or(d.max_in_flight),
        ..d
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let text = fs::read_to_string(&a.dataset).map_err(|e| usage(format!("{}: {e}", a.dataset.display())))?;
    let queries = llm::parse_queries(&text, kind).map_err(failed)?;
    let client = HttpChatClient::new(&cfg).map_err(|e| usage(e.to_string()))?;
    let outcome = llm::run_batch(&client, &cfg, &queries).map_err(failed)?;
    for (id, e) in &outcome.failures {
        eprintln!("query {id} failed: {e}");
    }
    let records = outcome.records();
    match &a.out {
        Some(p) => {
            let file = fs::File::create(p).map_err(failed)?;
            llm::write_verdict_log(&records, std::io::BufWriter::new(file)).map_err(failed)?;
        }
        None => llm::write_verdict_log(&records, std::io::stdout().lock()).map_err(failed)?,
    }
    let agg = aggregate(outcome.verdicts.iter().map(|(_, v)| v)).map_err(failed)?;
    eprintln!(
        "{kind}: {}/{} = {} ({} unparseable, {} failed)",
        agg.a,
        agg.a + agg.b,
        agg.fraction,
        agg.unparseable,
        outcome.failures.len()
    );
    Ok(())
}

pub fn synth(ctx: &Context, a: SynthArgs) -> Result<(), CliError> {
    let out = required_path(a.out, &ctx.file.out, "out")?;
    if a.frames == 0 || a.points == 0 {
        return Err(usage("--frames and --points must be positive"));
    }
    let seed = a.seed.or(ctx.file.seed).unwrap_or(0);
    let kinds = if a.mixed {
        SynthBudget::MIXED
    } else {
        SynthBudget::SEGMENTATION_ONLY
    };
    for i in 0..a.scenes as u64 {
        let spec = SynthSpec::random(
            seed + i,
            SynthBudget {
                points: a.points,
                frames: a.frames,
                objects: a.objects,
                kinds,
            },
        );
        let scene = gen_scene(&spec);
        io::save_scene(&scene.bundle, &out.join("scans"), &out.join("annotations"), PlyFormat::BinaryLittleEndian)
            .map_err(failed)?;
    }
    eprintln!("wrote {} scenes under {}", a.scenes, out.display());
    Ok(())
}
