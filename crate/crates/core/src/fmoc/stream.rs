use std::collections::VecDeque;

use super::{
    extract_candidates, motion_mask, remove_jitter, BinaryMask, FmocConfig, FmocError, FrameCandidates, GrayFrame,
};

/// Online FMO-C. Frames are pushed in order; the candidates of target frame
/// `t` are emitted as soon as frame `t + k` arrives, so the detector never
/// looks further ahead than `k` frames. The first and last `k` frames of a
/// sequence produce no output.
#[derive(Debug)]
pub struct FmocDetector {
    cfg: FmocConfig,
    window: VecDeque<GrayFrame>,
    /// Pre-removal motion masks of the most recent targets, newest last.
    history: VecDeque<BinaryMask>,
    pushed: usize,
}

impl FmocDetector {
    pub fn new(cfg: FmocConfig) -> Result<Self, FmocError> {
        cfg.validate()?;
        Ok(Self { cfg, window: VecDeque::new(), history: VecDeque::new(), pushed: 0 })
    }

    pub fn config(&self) -> &FmocConfig {
        &self.cfg
    }

    /// Number of frames pushed so far.
    pub fn frames_seen(&self) -> usize {
        self.pushed
    }

    pub fn push(&mut self, frame: GrayFrame) -> Result<Option<FrameCandidates>, FmocError> {
        if let Some(first) = self.window.front() {
            first.check_same(&frame)?;
        }
        let k = self.cfg.k;
        self.window.push_back(frame);
        self.pushed += 1;
        if self.window.len() > 2 * k + 1 {
            self.window.pop_front();
        }
        if self.window.len() < 2 * k + 1 {
            return Ok(None);
        }
        let target = self.pushed - 1 - k;
        let d = motion_mask(&self.window[0], &self.window[k], &self.window[2 * k], self.cfg.tau_diff)?;
        let hist: Vec<&BinaryMask> = self.history.iter().collect();
        let filtered = remove_jitter(&d, &hist);
        if self.cfg.jitter_memory > 0 {
            self.history.push_back(d);
            while self.history.len() > self.cfg.jitter_memory {
                self.history.pop_front();
            }
        }
        Ok(Some(FrameCandidates { frame: target, candidates: extract_candidates(&filtered, self.cfg.min_area) }))
    }
}

/// Runs the detector over a whole sequence. `first_frame` is the index of
/// `frames[0]` in the play.
pub fn detect_sequence(
    frames: &[GrayFrame],
    first_frame: usize,
    cfg: &FmocConfig,
) -> Result<Vec<FrameCandidates>, FmocError> {
    let mut det = FmocDetector::new(cfg.clone())?;
    let mut out = Vec::new();
    for f in frames {
        if let Some(mut fc) = det.push(f.clone())? {
            fc.frame += first_frame;
            out.push(fc);
        }
    }
    Ok(out)
}
