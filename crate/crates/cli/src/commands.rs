use std::path::{Path, PathBuf};

use log::info;
use playrecon::ballistics::{estimate_speed, CameraConfig, CameraModel, PlaneConfig};
use playrecon::batglove::{assign_bat_ends, fuse_bat_track, DetectorBox};
use playrecon::events::{
    detect_batter_first_step, detect_foot_down, detect_leg_raise, detect_pitcher_first_move, refine_first_move,
    EventTimeline,
};
use playrecon::fmoc::{detect_sequence, FmocConfig, FrameCandidates};
use playrecon::gbcv::{build_candidate_graph, detect_ball_tracks, estimate_release_frame, BallTrack2D, TrackRecord};
use playrecon::io;
use playrecon::mccnn::{
    accuracy, balanced_accuracy, confusion_matrix, cross_validate, decode_checkpoint, fit, predict, ChannelStats,
    Dataset, NetShape, TrajectorySample,
};
use playrecon::pipeline::{
    dense_poses, merge_candidates, reconstruct, run_pipeline, swing_span, synthetic_inputs, PipelineConfig,
    PipelineInputs, PlayersConfig, Stage, StageStatus,
};
use playrecon::synthgen::{synth_trajectories, synthetic_play, ClassSpec, GroundTruth};
use playrecon::trajkit::{track_player, JointTrajectories, PoseFrame, TrajectoryFile};
use playrecon::Point;
use serde::{Deserialize, Serialize};

use crate::config::load_layered;
use crate::{
    BatArgs, Cli, CliError, Command, EvalArgs, EventsArgs, FmocArgs, GbcvArgs, RunArgs, SpeedArgs, SynthArgs,
    SynthKind, TrackPoseArgs, TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn stage(e: impl std::fmt::Display) -> CliError {
    CliError::Stage(e.to_string())
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let config = |first: Option<PathBuf>| -> Result<PipelineConfig> {
        let files: Vec<PathBuf> = first.into_iter().chain(cli.config.iter().cloned()).collect();
        let mut cfg = load_layered(&files)?;
        if let Some(seed) = cli.seed {
            cfg.train.seed = seed;
        }
        Ok(cfg)
    };
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::TrackPose(a) => track_pose(&config(None)?, a),
        Command::Fmoc(a) => fmoc(&config(None)?, a),
        Command::Gbcv(a) => gbcv(&config(None)?, a),
        Command::Events(a) => events(&config(None)?, a),
        Command::Speed(a) => speed(&config(None)?, a),
        Command::Bat(a) => bat(&config(None)?, a),
        Command::Train(a) => train(&config(None)?, a),
        Command::Eval(a) => eval(&config(None)?, a, seed),
        Command::Synth(a) => synth(a, seed),
        Command::Run(a) => {
            let play_cfg = a.play.as_ref().map(|d| d.join("config.toml")).filter(|p| p.exists());
            run(&config(play_cfg)?, a)
        }
    }
}

fn read_trajectories(path: &Path) -> Result<JointTrajectories> {
    let file: TrajectoryFile = io::read_json(path)?;
    JointTrajectories::from_file(&file).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn read_candidates(paths: &[PathBuf]) -> Result<Option<Vec<FrameCandidates>>> {
    let mut merged: Option<Vec<FrameCandidates>> = None;
    for p in paths {
        let next: Vec<FrameCandidates> = io::read_jsonl(p)?;
        merged = merge_candidates(merged.as_deref(), Some(&next));
    }
    Ok(merged)
}

fn track_pose(cfg: &PipelineConfig, a: &TrackPoseArgs) -> Result<()> {
    let poses: Vec<PoseFrame> = io::read_jsonl(&a.poses)?;
    let [w, h] = cfg.frame_size;
    let out = track_player(
        &dense_poses(&poses),
        Point::new(a.start[0], a.start[1]),
        w as f64,
        h as f64,
        cfg.fps,
        &cfg.localize,
    );
    let located = out.located.iter().filter(|&&l| l).count();
    if located == 0 {
        return Err(stage("player never located"));
    }
    info!("located in {located} of {} frames", out.located.len());
    if let Some(raw) = &a.raw_out {
        io::write_json(raw, &out.trajectories.to_file())?;
    }
    let smoothed = out.trajectories.smoothed(cfg.smoother).map_err(stage)?;
    io::write_json(&a.out, &smoothed.to_file())?;
    Ok(())
}

fn fmoc(cfg: &PipelineConfig, a: &FmocArgs) -> Result<()> {
    let (first, frames) = io::read_frames(&a.frames)?;
    let fcfg = FmocConfig { k: a.k.unwrap_or(cfg.fmoc.k), ..cfg.fmoc.clone() };
    let cands = detect_sequence(&frames, a.first_frame.unwrap_or(first), &fcfg).map_err(input)?;
    info!("{} candidate sets from {} frames", cands.len(), frames.len());
    io::write_jsonl(&a.out, &cands)?;
    Ok(())
}

fn gbcv(cfg: &PipelineConfig, a: &GbcvArgs) -> Result<()> {
    let cands: Vec<FrameCandidates> = io::read_jsonl(&a.candidates)?;
    let graph = build_candidate_graph(&cands, cfg.gbcv.theta_dist);
    let tracks = detect_ball_tracks(&graph, &cfg.gbcv).map_err(input)?;
    io::write_json(&a.out, &tracks.iter().map(|t| t.to_record(None)).collect::<Vec<_>>())?;
    let Some(best) = tracks.first() else {
        return Err(stage("no ball track found"));
    };
    let rp = a.release_point.or(cfg.release_point_px).map_or(best.points[0].pos(), |[x, y]| Point::new(x, y));
    let release = estimate_release_frame(best, rp).map_err(stage)?;
    info!("{} tracks, best has {} points, release at frame {release}", tracks.len(), best.len());
    if let Some(p) = &a.ball_out {
        io::write_json(p, &best.to_record(Some(release)))?;
    }
    Ok(())
}

fn events(cfg: &PipelineConfig, a: &EventsArgs) -> Result<()> {
    let mut tl = EventTimeline { fps: cfg.fps, ..EventTimeline::default() };
    let mut errors = Vec::new();
    if let Some(p) = &a.pitcher {
        let joints = read_trajectories(p)?;
        let cands = read_candidates(&a.candidates)?.ok_or_else(|| input("first movement needs --candidates"))?;
        match detect_pitcher_first_move(&cands, &joints, &cfg.first_move) {
            Ok(n) => {
                tl.first_movement = Some(n);
                match refine_first_move(n, &joints, cfg.first_move.refine_halfwidth) {
                    Ok(h) => tl.first_movement_refined = Some(h),
                    Err(e) => errors.push(format!("refinement: {e}")),
                }
            }
            Err(e) => errors.push(format!("first movement: {e}")),
        }
    }
    tl.release = match (&a.ball, a.release) {
        (Some(p), _) => io::read_json::<TrackRecord>(p)?.release_frame,
        (None, r) => r,
    };
    if let Some(p) = &a.batter {
        let joints = read_trajectories(p)?;
        let r = tl.release.ok_or_else(|| input("batter events need --release or a ball track with a release"))?;
        match detect_batter_first_step(&joints, r, &cfg.first_step) {
            Ok(s) => tl.first_step = Some(s),
            Err(e) => errors.push(format!("first step: {e}")),
        }
        if let Some(s) = tl.first_step {
            match detect_leg_raise(&joints, r, s) {
                Ok(l) => tl.leg_raise = Some(l),
                Err(e) => errors.push(format!("leg raise: {e}")),
            }
        }
        if let Some(l) = tl.leg_raise {
            match detect_foot_down(&joints, l, cfg.foot_down_search) {
                Ok(g) => {
                    tl.foot_down = Some(g.frame);
                    tl.foot_down_low_confidence = g.low_confidence;
                }
                Err(e) => errors.push(format!("foot down: {e}")),
            }
        }
    }
    io::write_json(&a.out, &tl)?;
    if errors.is_empty() {
        Ok(())
    } else {
        Err(stage(errors.join("; ")))
    }
}

fn camera_and_plane(cfg: &PipelineConfig) -> Result<(&CameraConfig, &PlaneConfig)> {
    match (&cfg.camera, &cfg.plane) {
        (Some(c), Some(p)) => Ok((c, p)),
        _ => Err(input("speed needs [camera] and [plane] in the configuration")),
    }
}

fn speed(cfg: &PipelineConfig, a: &SpeedArgs) -> Result<()> {
    let (cam, plane) = camera_and_plane(cfg)?;
    let record: TrackRecord = io::read_json(&a.ball)?;
    let track = BallTrack2D { points: record.points, confidences: Vec::new() };
    let cam = CameraModel::from_config(cam).map_err(input)?;
    let plane = plane.to_plane().map_err(input)?;
    let toward = plane.signed_distance(&cam.position).signum();
    let plane = plane.clone().with_offset(plane.offset_m + toward * a.plane_offset);
    let est = estimate_speed(&track, &cam, &plane, cfg.fps).map_err(stage)?;
    info!("{:.2} mph", est.speed_mph);
    io::write_json(&a.out, &est)?;
    Ok(())
}

fn bat(cfg: &PipelineConfig, a: &BatArgs) -> Result<()> {
    let boxes: Vec<DetectorBox> = io::read_jsonl(&a.detections)?;
    let cands = read_candidates(&a.candidates)?.unwrap_or_default();
    let range = a
        .frames
        .or(cfg.swing_frames)
        .map(|[s, e]| s..e)
        .or_else(|| swing_span(&boxes, &cands))
        .ok_or_else(|| stage("no bat detections"))?;
    let mut track = fuse_bat_track(&boxes, &cands, range.clone(), &cfg.bat).map_err(stage)?;
    if let Some(p) = &a.batter {
        assign_bat_ends(&mut track, &read_trajectories(p)?);
    }
    info!("bat coverage {:.3} over frames {}..{}", track.coverage(range.clone()), range.start, range.end);
    io::write_json(&a.out, &track)?;
    Ok(())
}

fn net_shape(ds: &Dataset, small: bool) -> NetShape {
    let mut shape = NetShape::standard(ds.len, ds.n_classes);
    shape.channels = ds.width();
    if small {
        shape.filters1 = 16;
        shape.filters2 = 16;
        shape.hidden = 32;
    }
    shape
}

#[derive(Serialize)]
struct ConfusionRow<'a> {
    true_class: &'a str,
    predicted_class: &'a str,
    count: usize,
    rate: f64,
}

fn write_confusion(path: &Path, names: &[String], pred: &[usize], labels: &[usize], n: usize) -> Result<()> {
    let counts = confusion_matrix(pred, labels, n, false);
    let rates = confusion_matrix(pred, labels, n, true);
    let mut w = csv::Writer::from_path(path).map_err(input)?;
    for i in 0..n {
        for j in 0..n {
            w.serialize(ConfusionRow {
                true_class: &names[i],
                predicted_class: &names[j],
                count: counts[i][j] as usize,
                rate: rates[i][j],
            })
            .map_err(input)?;
        }
    }
    w.flush().map_err(input)
}

fn class_names(ds: &Dataset) -> Vec<String> {
    if ds.class_names.len() == ds.n_classes {
        ds.class_names.clone()
    } else {
        (0..ds.n_classes).map(|c| format!("class_{c}")).collect()
    }
}

fn train(cfg: &PipelineConfig, a: &TrainArgs) -> Result<()> {
    let ds: Dataset = io::read_json(&a.dataset)?;
    ds.validate().map_err(input)?;
    cfg.train.validate(ds.n_classes).map_err(input)?;
    if a.cv.is_none() && a.model_out.is_none() {
        return Err(input("nothing to do: give --cv and/or --model-out"));
    }
    let shape = net_shape(&ds, a.small);
    if let Some(k) = a.cv {
        let report = cross_validate(&ds, shape, k, &cfg.train).map_err(stage)?;
        println!("accuracy {:.4}  balanced accuracy {:.4}", report.accuracy, report.balanced_accuracy);
        if let Some(dir) = &a.report_dir {
            std::fs::create_dir_all(dir).map_err(input)?;
            io::write_json(&dir.join("cv_report.json"), &report)?;
            write_confusion(
                &dir.join("confusion.csv"),
                &class_names(&ds),
                &report.predictions,
                &ds.labels(),
                ds.n_classes,
            )?;
            let mut w = csv::Writer::from_path(dir.join("loss_curves.csv")).map_err(input)?;
            w.write_record(["fold", "epoch", "loss"]).map_err(input)?;
            for (f, curve) in report.loss_curves.iter().enumerate() {
                for (e, l) in curve.iter().enumerate() {
                    w.write_record([f.to_string(), (e + 1).to_string(), l.to_string()]).map_err(input)?;
                }
            }
            w.flush().map_err(input)?;
        }
    }
    if let Some(out) = &a.model_out {
        let model = fit(&ds, shape, &cfg.train).map_err(stage)?;
        info!("trained {} epochs, final loss {:?}", model.report.epochs_run, model.report.loss_curve.last());
        std::fs::write(out, model.checkpoint()).map_err(|e| input(format!("{}: {e}", out.display())))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EventRow {
    play: usize,
    seed: u64,
    event: &'static str,
    truth: Option<usize>,
    estimate: Option<usize>,
    error: Option<i64>,
}

#[derive(Serialize)]
struct SpeedRow {
    play: usize,
    seed: u64,
    truth_mph: f64,
    estimate_mph: Option<f64>,
    error_mph: Option<f64>,
}

#[derive(Serialize)]
struct BallRow {
    play: usize,
    seed: u64,
    matched_frames: usize,
    mean_error_px: Option<f64>,
}

#[derive(Serialize)]
struct BatRow {
    play: usize,
    seed: u64,
    coverage: Option<f64>,
}

/// Mean distance between observed track points and the true ball in the
/// frames both have.
fn ball_error(track: Option<&BallTrack2D>, truth: &GroundTruth) -> (usize, Option<f64>) {
    let Some(track) = track else { return (0, None) };
    let d: Vec<f64> = truth
        .ball_px
        .iter()
        .filter_map(|(f, p)| track.at(*f).filter(|q| !q.inferred).map(|q| q.pos().dist(*p)))
        .collect();
    (d.len(), (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64))
}

fn eval(cfg: &PipelineConfig, a: &EvalArgs, seed: u64) -> Result<()> {
    if a.plays == 0 && a.dataset.is_none() {
        return Err(input("nothing to do: give --plays and/or --dataset with --model"));
    }
    std::fs::create_dir_all(&a.out).map_err(input)?;
    let csv_at = |name: &str| csv::Writer::from_path(a.out.join(name)).map_err(input);
    if a.plays > 0 {
        let (mut ev, mut sp, mut ba, mut bt) =
            (csv_at("events.csv")?, csv_at("speed.csv")?, csv_at("ball.csv")?, csv_at("bat.csv")?);
        for i in 0..a.plays {
            let s = seed.wrapping_add(i as u64);
            let play = synthetic_play(s);
            let (pcfg, inputs) = synthetic_inputs(&play, cfg);
            let rec = reconstruct(&pcfg, &inputs, &[]);
            let t = &play.truth.events;
            let tl = &rec.timeline;
            for (event, truth, estimate) in [
                ("first_movement", t.first_movement, tl.first_movement),
                ("first_movement_refined", t.first_movement, tl.first_movement_refined),
                ("release", t.release, tl.release),
                ("leg_raise", t.leg_raise, tl.leg_raise),
                ("foot_down", t.foot_down, tl.foot_down),
                ("first_step", t.first_step, tl.first_step),
            ] {
                let error = truth.zip(estimate).map(|(a, b)| b as i64 - a as i64);
                ev.serialize(EventRow { play: i, seed: s, event, truth, estimate, error }).map_err(input)?;
            }
            let est = rec.speed.as_ref().map(|e| e.speed_mph);
            sp.serialize(SpeedRow {
                play: i,
                seed: s,
                truth_mph: play.truth.speed_mph,
                estimate_mph: est,
                error_mph: est.map(|e| e - play.truth.speed_mph),
            })
            .map_err(input)?;
            let (matched_frames, mean_error_px) = ball_error(rec.ball(), &play.truth);
            ba.serialize(BallRow { play: i, seed: s, matched_frames, mean_error_px }).map_err(input)?;
            let [f0, f1] = play.truth.swing_frames;
            bt.serialize(BatRow { play: i, seed: s, coverage: rec.bat.as_ref().map(|b| b.coverage(f0..f1)) })
                .map_err(input)?;
            info!("play {i}: {:?}", tl);
        }
        for w in [&mut ev, &mut sp, &mut ba, &mut bt] {
            w.flush().map_err(input)?;
        }
    }
    if let (Some(ds_path), Some(model)) = (&a.dataset, &a.model) {
        let ds: Dataset = io::read_json(ds_path)?;
        let bytes = std::fs::read(model).map_err(|e| input(format!("{}: {e}", model.display())))?;
        let (net, mean, scale) = decode_checkpoint(&bytes).map_err(input)?;
        let stats = ChannelStats { mean, scale };
        let samples: Vec<TrajectorySample> = ds.samples.iter().map(|s| stats.apply(s)).collect();
        let pred = predict(&net, &samples).map_err(input)?;
        let labels = ds.labels();
        let acc = accuracy(&pred, &labels);
        let ba = balanced_accuracy(&pred, &labels, ds.n_classes).map_err(stage)?;
        println!("accuracy {acc:.4}  balanced accuracy {ba:.4}");
        write_confusion(&a.out.join("confusion.csv"), &class_names(&ds), &pred, &labels, ds.n_classes)?;
        io::write_json(
            &a.out.join("classification.json"),
            &serde_json::json!({ "accuracy": acc, "balanced_accuracy": ba }),
        )?;
    }
    Ok(())
}

/// Layout facts of a `synth play` directory.
#[derive(Debug, Serialize, Deserialize)]
struct PlayLayout {
    seed: u64,
    frames: String,
    first_frame: usize,
}

/// The part of the configuration a synthetic play determines.
#[derive(Serialize)]
struct PlayConfigFile {
    fps: f64,
    release_point_px: [f64; 2],
    players: PlayersConfig,
    camera: CameraConfig,
    plane: PlaneConfig,
}

fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    match &a.kind {
        SynthKind::Play { out, raw } => {
            let play = synthetic_play(seed);
            std::fs::create_dir_all(out).map_err(input)?;
            let first = play.scene.first_frame;
            let frames = if *raw {
                io::write_raw_stream(&out.join("frames.raw"), &play.frames)?;
                "frames.raw"
            } else {
                io::write_pgm_dir(&out.join("frames"), first, &play.frames)?;
                "frames"
            };
            io::write_json(&out.join("play.json"), &PlayLayout { seed, frames: frames.into(), first_frame: first })?;
            io::write_jsonl(&out.join("pitcher_poses.jsonl"), &play.pitcher.poses)?;
            io::write_jsonl(&out.join("batter_poses.jsonl"), &play.batter.poses)?;
            io::write_jsonl(&out.join("detections.jsonl"), &play.swing.boxes)?;
            io::write_jsonl(&out.join("extra_candidates.jsonl"), &play.extra_candidates())?;
            io::write_json(&out.join("truth.json"), &play.truth)?;
            let (pcfg, _) = synthetic_inputs(&play, &PipelineConfig::default());
            let file = PlayConfigFile {
                fps: play.scene.fps,
                release_point_px: pcfg.release_point_px.expect("set for synthetic plays"),
                players: pcfg.players,
                camera: play.scene.camera.clone(),
                plane: play.scene.plane.clone(),
            };
            let text = toml::to_string(&file).map_err(input)?;
            std::fs::write(out.join("config.toml"), text).map_err(input)?;
            println!("release frame {}, {:.1} mph", play.truth.events.release.unwrap_or(0), play.truth.speed_mph);
            Ok(())
        }
        SynthKind::Dataset { classes, per_class, len, out } => {
            let spec = ClassSpec::distinct(*classes);
            let labeled = synth_trajectories(&spec, *per_class, *len, seed).map_err(input)?;
            let samples = labeled
                .iter()
                .map(|l| TrajectorySample::from_trajectories(&l.trajectories, l.label))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(input)?;
            let mut ds = Dataset::new(samples, *classes).map_err(input)?;
            ds.class_names = (0..*classes).map(|c| format!("class_{c}")).collect();
            io::write_json(out, &ds)?;
            Ok(())
        }
    }
}

fn run(cfg: &PipelineConfig, a: &RunArgs) -> Result<()> {
    let mut inputs = PipelineInputs {
        frames: a.frames.clone(),
        first_frame: a.first_frame,
        pitcher_poses: a.pitcher_poses.clone(),
        batter_poses: a.batter_poses.clone(),
        detections: a.detections.clone(),
        extra_candidates: a.extra_candidates.clone(),
    };
    if let Some(dir) = &a.play {
        let layout: PlayLayout = io::read_json(&dir.join("play.json"))?;
        let fill = |slot: &mut Option<PathBuf>, name: &str| {
            if slot.is_none() && dir.join(name).exists() {
                *slot = Some(dir.join(name));
            }
        };
        fill(&mut inputs.frames, &layout.frames);
        fill(&mut inputs.pitcher_poses, "pitcher_poses.jsonl");
        fill(&mut inputs.batter_poses, "batter_poses.jsonl");
        fill(&mut inputs.detections, "detections.jsonl");
        fill(&mut inputs.extra_candidates, "extra_candidates.jsonl");
        inputs.first_frame = inputs.first_frame.or(Some(layout.first_frame));
    }
    let stages = a
        .stage
        .iter()
        .map(|s| Stage::parse(s).ok_or_else(|| input(format!("unknown stage {s}"))))
        .collect::<Result<Vec<_>>>()?;
    let rec = run_pipeline(cfg, &inputs, &stages, &a.out).map_err(|e| match e {
        playrecon::pipeline::PipelineError::InvalidConfig(m) => CliError::Input(m),
        playrecon::pipeline::PipelineError::Io(e) => CliError::from(e),
    })?;
    for (s, st) in &rec.status {
        match st {
            StageStatus::Ok => println!("{:<11} ok", s.name()),
            StageStatus::Skipped { reason } => println!("{:<11} skipped: {reason}", s.name()),
            StageStatus::Failed { error } => println!("{:<11} FAILED: {error}", s.name()),
        }
    }
    if rec.any_failed() {
        Err(stage("one or more stages failed; see metrics.json"))
    } else {
        Ok(())
    }
}
