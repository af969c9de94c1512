use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{PipelineConfig, PipelineInputs, Reconstruction, Stage, StageStatus};
use crate::gbcv::TrackRecord;
use crate::geom::Aabb;
use crate::io::{self, IoError};

/// Run facts that differ between identical runs. Nothing else in the bundle
/// carries a time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub created_unix_s: u64,
    pub detect_seconds: f64,
    /// Frames per second of the FMO-C and GBCV loop.
    pub detect_fps: Option<f64>,
    pub inputs: PipelineInputs,
    pub stages: Vec<Stage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMetrics {
    pub stages: BTreeMap<Stage, StageStatus>,
    pub notes: Vec<String>,
    pub frames: usize,
    pub candidates: usize,
    pub candidates_per_frame: Option<f64>,
    pub tracks: usize,
    pub ball_track_len: Option<usize>,
    pub ball_inferred_points: Option<usize>,
    pub swing_frames: Option<[usize; 2]>,
    pub bat_coverage: Option<f64>,
    pub timeline_consistent: bool,
}

impl BundleMetrics {
    pub fn of(rec: &Reconstruction) -> Self {
        let n_cands: usize = rec.candidates.iter().flatten().map(|f| f.candidates.len()).sum();
        let n_sets = rec.candidates.as_ref().map_or(0, Vec::len);
        Self {
            stages: rec.status.clone(),
            notes: rec.notes.clone(),
            frames: rec.n_frames,
            candidates: n_cands,
            candidates_per_frame: (n_sets > 0).then(|| n_cands as f64 / n_sets as f64),
            tracks: rec.tracks.len(),
            ball_track_len: rec.ball().map(|t| t.len()),
            ball_inferred_points: rec.ball().map(|t| t.points.iter().filter(|p| p.inferred).count()),
            swing_frames: rec.swing_frames,
            bat_coverage: rec.bat.as_ref().zip(rec.swing_frames).map(|(b, [s, e])| b.coverage(s..e)),
            timeline_consistent: rec.timeline.is_consistent(),
        }
    }
}

#[derive(Serialize)]
struct GloveRecord {
    frame: usize,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

fn glove_records(glove: &[(usize, Aabb)]) -> Vec<GloveRecord> {
    glove.iter().map(|(f, a)| GloveRecord { frame: *f, x0: a.p1.x, y0: a.p1.y, x1: a.p2.x, y1: a.p2.y }).collect()
}

/// Every file name a bundle may contain.
pub const BUNDLE_FILES: [&str; 16] = [
    "manifest.json",
    "config.json",
    "metrics.json",
    "pitcher_raw.json",
    "pitcher.json",
    "batter_raw.json",
    "batter.json",
    "candidates.jsonl",
    "move_candidates.jsonl",
    "tracks.json",
    "ball_track.json",
    "timeline.json",
    "speed.json",
    "bat.json",
    "glove.jsonl",
    "classification.json",
];

/// Writes the bundle directory. Files of outputs that were not produced are
/// removed so that a bundle never mixes two runs.
pub fn write_bundle(
    dir: &Path,
    rec: &Reconstruction,
    cfg: &PipelineConfig,
    inputs: &PipelineInputs,
) -> Result<(), IoError> {
    let io_err = |source| IoError::Io { path: dir.to_path_buf(), source };
    fs::create_dir_all(dir).map_err(io_err)?;
    for name in BUNDLE_FILES {
        let p = dir.join(name);
        if p.exists() {
            fs::remove_file(&p).map_err(|source| IoError::Io { path: p.clone(), source })?;
        }
    }
    let p = |name: &str| dir.join(name);
    let stages: Vec<Stage> = rec.status.keys().copied().collect();
    let manifest = Manifest {
        tool: "playrecon".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        created_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        detect_seconds: rec.detect_seconds,
        detect_fps: (rec.n_frames > 0 && rec.detect_seconds > 0.0).then(|| rec.n_frames as f64 / rec.detect_seconds),
        inputs: inputs.clone(),
        stages,
    };
    io::write_json(&p("manifest.json"), &manifest)?;
    io::write_json(&p("config.json"), cfg)?;
    io::write_json(&p("metrics.json"), &BundleMetrics::of(rec))?;
    for (name, tr) in [
        ("pitcher_raw.json", &rec.pitcher_raw),
        ("pitcher.json", &rec.pitcher),
        ("batter_raw.json", &rec.batter_raw),
        ("batter.json", &rec.batter),
    ] {
        if let Some(tr) = tr {
            io::write_json(&p(name), &tr.to_file())?;
        }
    }
    if let Some(c) = &rec.candidates {
        io::write_jsonl(&p("candidates.jsonl"), c)?;
    }
    if let Some(c) = &rec.move_candidates {
        io::write_jsonl(&p("move_candidates.jsonl"), c)?;
    }
    if rec.status.contains_key(&Stage::Gbcv) {
        let records: Vec<TrackRecord> = rec.tracks.iter().map(|t| t.to_record(None)).collect();
        io::write_json(&p("tracks.json"), &records)?;
    }
    if let Some(ball) = rec.ball() {
        io::write_json(&p("ball_track.json"), &ball.to_record(rec.timeline.release))?;
    }
    if rec.status.contains_key(&Stage::Events) || rec.status.contains_key(&Stage::FirstMove) {
        io::write_json(&p("timeline.json"), &rec.timeline)?;
    }
    if let Some(s) = &rec.speed {
        io::write_json(&p("speed.json"), s)?;
    }
    if let Some(b) = &rec.bat {
        io::write_json(&p("bat.json"), b)?;
    }
    if let Some(g) = &rec.glove {
        io::write_jsonl(&p("glove.jsonl"), &glove_records(g))?;
    }
    if let Some(c) = &rec.classification {
        io::write_json(&p("classification.json"), c)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{reconstruct, tests::play_inputs};
    use super::*;
    use crate::synthgen::synthetic_play;

    fn tmp(name: &str) -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("playrecon-bundle-{}-{name}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        d
    }

    fn contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        for e in fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            if name != "manifest.json" {
                out.insert(name, fs::read(&path).unwrap());
            }
        }
        out
    }

    #[test]
    fn bundles_are_reproducible() {
        let play = synthetic_play(21);
        let (cfg, inputs) = play_inputs(&play);
        let (a, b) = (tmp("a"), tmp("b"));
        write_bundle(&a, &reconstruct(&cfg, &inputs, &[]), &cfg, &PipelineInputs::default()).unwrap();
        write_bundle(&b, &reconstruct(&cfg, &inputs, &[]), &cfg, &PipelineInputs::default()).unwrap();
        let (ca, cb) = (contents(&a), contents(&b));
        assert!(ca.contains_key("timeline.json") && ca.contains_key("bat.json") && ca.contains_key("speed.json"));
        assert_eq!(ca, cb);
        fs::remove_dir_all(&a).unwrap();
        fs::remove_dir_all(&b).unwrap();
    }

    #[test]
    fn rewriting_drops_stale_outputs() {
        let play = synthetic_play(22);
        let (cfg, inputs) = play_inputs(&play);
        let d = tmp("stale");
        write_bundle(&d, &reconstruct(&cfg, &inputs, &[]), &cfg, &PipelineInputs::default()).unwrap();
        assert!(d.join("bat.json").exists());
        write_bundle(&d, &reconstruct(&cfg, &inputs, &[Stage::Fmoc]), &cfg, &PipelineInputs::default()).unwrap();
        assert!(!d.join("bat.json").exists());
        assert!(d.join("candidates.jsonl").exists());
        let m: BundleMetrics = io::read_json(&d.join("metrics.json")).unwrap();
        assert_eq!(m.stages.len(), 1);
        fs::remove_dir_all(&d).unwrap();
    }
}
