use super::{
    combine, distance_similarity, layer_edges, node_confidence, slope_similarity, triple_confidence, BallTrack2D,
    CandidateGraph, GbcvConfig, GbcvError, TrackPoint,
};
use crate::fmoc::{FrameCandidates, MotionCandidate};
use crate::geom::Point;

struct LayerState {
    frame: usize,
    nodes: Vec<MotionCandidate>,
    claimed: Vec<bool>,
}

enum Kind {
    Extend(usize),
    Seed(usize, usize),
}

impl Kind {
    fn rank(&self) -> u8 {
        match self {
            Kind::Extend(_) => 0,
            Kind::Seed(..) => 1,
        }
    }
}

struct Proposal {
    conf: f64,
    kind: Kind,
    c: usize,
}

struct Active {
    track: BallTrack2D,
    /// Node indices of the last two points, in the previous and the
    /// second-to-last layer.
    last: usize,
    before_last: usize,
    origin: (usize, usize),
}

fn children(edges: &[Vec<usize>], i: usize) -> &[usize] {
    edges.get(i).map(Vec::as_slice).unwrap_or(&[])
}

/// Confident triples through unclaimed nodes of the last three layers.
fn seed_proposals(
    older: &LayerState,
    newer: &LayerState,
    edges_on: &[Vec<usize>],
    edges_cur: &[Vec<usize>],
    nodes: &[MotionCandidate],
    claimed: &[bool],
    cfg: &GbcvConfig,
) -> Vec<Proposal> {
    let mut out = Vec::new();
    for (a, kids) in edges_on.iter().enumerate() {
        if older.claimed[a] {
            continue;
        }
        for &b in kids.iter().filter(|&&b| !newer.claimed[b]) {
            for &c in children(edges_cur, b).iter().filter(|&&c| !claimed[c]) {
                let conf = node_confidence(&older.nodes[a], &newer.nodes[b], &nodes[c], cfg);
                if conf >= cfg.theta_confidence {
                    out.push(Proposal { conf, kind: Kind::Seed(a, b), c });
                }
            }
        }
    }
    out
}

/// Greedy assignment of proposals, most confident first. Extensions win ties.
fn accept(
    mut proposals: Vec<Proposal>,
    older: &mut LayerState,
    newer: &mut LayerState,
    claimed: &mut [bool],
    extended: &mut [Option<(usize, f64)>],
    seeds: &mut Vec<(usize, usize, usize, f64)>,
) {
    proposals.sort_by(|x, y| y.conf.total_cmp(&x.conf).then(x.kind.rank().cmp(&y.kind.rank())));
    for p in proposals {
        if claimed[p.c] {
            continue;
        }
        match p.kind {
            Kind::Extend(ti) => {
                if extended[ti].is_some() {
                    continue;
                }
                extended[ti] = Some((p.c, p.conf));
            }
            Kind::Seed(a, b) => {
                if older.claimed[a] || newer.claimed[b] {
                    continue;
                }
                older.claimed[a] = true;
                newer.claimed[b] = true;
                seeds.push((a, b, p.c, p.conf));
            }
        }
        claimed[p.c] = true;
    }
}

/// Online track extension. Layers are pushed in frame order and every
/// decision only uses the current and the two preceding layers.
pub struct TrackBuilder {
    cfg: GbcvConfig,
    older: Option<LayerState>,
    newer: Option<LayerState>,
    /// Edges from `older` into `newer`.
    edges: Vec<Vec<usize>>,
    active: Vec<Active>,
    finished: Vec<(BallTrack2D, (usize, usize))>,
}

impl TrackBuilder {
    pub fn new(cfg: GbcvConfig) -> Result<Self, GbcvError> {
        cfg.validate()?;
        Ok(Self { cfg, older: None, newer: None, edges: Vec::new(), active: Vec::new(), finished: Vec::new() })
    }

    /// Adds the candidates of the next frame, linking them to the previous
    /// layer by the minimum-distance rule.
    pub fn push(&mut self, fc: &FrameCandidates) {
        let edges = match &self.newer {
            Some(prev) => layer_edges(prev.frame, &prev.nodes, fc.frame, &fc.candidates, self.cfg.theta_dist),
            None => Vec::new(),
        };
        self.advance(fc.frame, fc.candidates.clone(), edges);
    }

    /// Number of tracks currently being extended.
    pub fn active_tracks(&self) -> usize {
        self.active.len()
    }

    fn advance(&mut self, frame: usize, nodes: Vec<MotionCandidate>, edges: Vec<Vec<usize>>) {
        let mut claimed = vec![false; nodes.len()];
        let theta = self.cfg.theta_confidence;
        let active = std::mem::take(&mut self.active);
        let mut extended: Vec<Option<(usize, f64)>> = vec![None; active.len()];
        let mut seeds: Vec<(usize, usize, usize, f64)> = Vec::new();

        if let (Some(older), Some(newer)) = (&mut self.older, &mut self.newer) {
            // Extensions of live tracks and new seed triples compete for the
            // nodes of this layer, most confident first.
            let mut proposals = Vec::new();
            for (ti, tr) in active.iter().enumerate() {
                let (a, b) = (&older.nodes[tr.before_last], &newer.nodes[tr.last]);
                for &c in children(&edges, tr.last) {
                    let conf = node_confidence(a, b, &nodes[c], &self.cfg);
                    if conf >= theta {
                        proposals.push(Proposal { conf, kind: Kind::Extend(ti), c });
                    }
                }
            }
            proposals.extend(seed_proposals(older, newer, &self.edges, &edges, &nodes, &claimed, &self.cfg));
            accept(proposals, older, newer, &mut claimed, &mut extended, &mut seeds);

            // A bare triple that could not be extended gives its nodes back,
            // so a better triple through them can still start.
            let mut released = false;
            for (tr, ext) in active.iter().zip(&extended) {
                if ext.is_none() && tr.track.len() == 3 {
                    older.claimed[tr.before_last] = false;
                    newer.claimed[tr.last] = false;
                    released = true;
                }
            }
            if released {
                let again = seed_proposals(older, newer, &self.edges, &edges, &nodes, &claimed, &self.cfg);
                accept(again, older, newer, &mut claimed, &mut extended, &mut seeds);
            }
        }

        for (mut tr, ext) in active.into_iter().zip(extended) {
            match ext {
                Some((c, conf)) => {
                    let p = nodes[c].centroid;
                    tr.track.points.push(TrackPoint { frame, x: p.x, y: p.y, inferred: false });
                    tr.track.confidences.push(conf);
                    tr.before_last = tr.last;
                    tr.last = c;
                    self.active.push(tr);
                }
                None => self.finished.push((tr.track, tr.origin)),
            }
        }
        if let (Some(older), Some(newer)) = (&self.older, &self.newer) {
            let pt = |f: usize, p: Point| TrackPoint { frame: f, x: p.x, y: p.y, inferred: false };
            for (a, b, c, conf) in seeds {
                self.active.push(Active {
                    track: BallTrack2D {
                        points: vec![
                            pt(older.frame, older.nodes[a].centroid),
                            pt(newer.frame, newer.nodes[b].centroid),
                            pt(frame, nodes[c].centroid),
                        ],
                        confidences: vec![conf],
                    },
                    last: c,
                    before_last: b,
                    origin: (older.frame, a),
                });
            }
        }

        self.older = self.newer.take();
        self.newer = Some(LayerState { frame, nodes, claimed });
        self.edges = edges;
    }

    /// Closes all tracks and returns them unmerged, ordered by start frame
    /// and then by node index of the first point.
    pub fn finish(mut self) -> Vec<BallTrack2D> {
        self.finished.extend(self.active.drain(..).map(|tr| (tr.track, tr.origin)));
        self.finished.sort_by_key(|(_, origin)| *origin);
        self.finished.into_iter().map(|(t, _)| t).collect()
    }

    /// Closes all tracks, then merges, filters and ranks them exactly like
    /// [`detect_ball_tracks`].
    pub fn finish_ranked(self) -> Vec<BallTrack2D> {
        let cfg = self.cfg.clone();
        finalize(self.finish(), &cfg)
    }
}

/// Ball tracks of a candidate graph, merged across short gaps, filtered by
/// length and ranked best first by (length, mean confidence). Ties go to the
/// earlier start frame, then to the lower node index.
pub fn detect_ball_tracks(graph: &CandidateGraph, cfg: &GbcvConfig) -> Result<Vec<BallTrack2D>, GbcvError> {
    let mut builder = TrackBuilder::new(cfg.clone())?;
    for (l, layer) in graph.layers.iter().enumerate() {
        let edges = if l == 0 { Vec::new() } else { graph.edges[l - 1].clone() };
        builder.advance(layer.frame, layer.nodes.iter().map(|n| n.candidate.clone()).collect(), edges);
    }
    Ok(finalize(builder.finish(), cfg))
}

pub(crate) fn finalize(mut tracks: Vec<BallTrack2D>, cfg: &GbcvConfig) -> Vec<BallTrack2D> {
    // repeatedly apply the most confident admissible merge
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..tracks.len() {
            for j in 0..tracks.len() {
                if i == j || tracks[i].last_frame() >= tracks[j].first_frame() {
                    continue;
                }
                if let Ok(conf) = merge_confidence(&tracks[i], &tracks[j], cfg) {
                    if best.is_none_or(|(bc, _, _)| conf > bc) {
                        best = Some((conf, i, j));
                    }
                }
            }
        }
        let Some((conf, i, j)) = best else { break };
        let merged = join(&tracks[i], &tracks[j], conf);
        tracks[i] = merged;
        tracks.remove(j);
    }
    tracks.retain(|t| t.len() >= cfg.min_track_len);
    // stable sort keeps the start-frame order for ties
    tracks.sort_by(|a, b| b.len().cmp(&a.len()).then(b.mean_confidence().total_cmp(&a.mean_confidence())));
    tracks
}

/// Mean direction and mean per-frame step of a track.
fn track_average(t: &BallTrack2D) -> Result<(Option<Point>, f64), GbcvError> {
    if t.len() < 2 {
        return Err(GbcvError::DegenerateTrack);
    }
    let sum = t.slopes().into_iter().flatten().fold(Point::default(), |acc, s| acc + s);
    Ok((sum.normalized(), t.mean_step()))
}

fn pair_confidence(a: (Option<Point>, f64), b: (Option<Point>, f64), cfg: &GbcvConfig) -> f64 {
    let ss = match (a.0, b.0) {
        (Some(x), Some(y)) => slope_similarity(x, y),
        _ => 0.0,
    };
    combine(ss, distance_similarity(a.1, b.1), cfg.weights)
}

/// Confidence that `later` continues `earlier`: the weakest of the
/// comparisons earlier/bridge, bridge/later and earlier/later.
fn merge_confidence(earlier: &BallTrack2D, later: &BallTrack2D, cfg: &GbcvConfig) -> Result<f64, GbcvError> {
    if earlier.is_empty() || later.is_empty() || later.first_frame() <= earlier.last_frame() {
        return Err(GbcvError::InvalidMerge);
    }
    let frames = later.first_frame() - earlier.last_frame();
    let gap = frames - 1;
    if gap > cfg.gap_merge_max {
        return Err(GbcvError::GapTooLong { gap, max: cfg.gap_merge_max });
    }
    let e = track_average(earlier)?;
    let l = track_average(later)?;
    let from = earlier.points[earlier.len() - 1].pos();
    let to = later.points[0].pos();
    let bridge_step = from.dist(to) / frames as f64;
    let bridge = ((to - from).normalized(), bridge_step);
    let mut conf = if bridge_step > cfg.theta_dist {
        pair_confidence(e, bridge, cfg).min(pair_confidence(bridge, l, cfg)).min(pair_confidence(e, l, cfg))
    } else {
        0.0
    };
    if gap == 0 {
        // the seam triples are fully observed and must pass like any other
        let n = earlier.len();
        let p = |t: &TrackPoint| t.pos();
        conf = conf.min(triple_confidence(p(&earlier.points[n - 2]), from, to, cfg.weights)).min(triple_confidence(
            from,
            to,
            p(&later.points[1]),
            cfg.weights,
        ));
    }
    if conf >= cfg.theta_confidence {
        Ok(conf)
    } else {
        Err(GbcvError::Unmergeable { confidence: conf })
    }
}

fn join(earlier: &BallTrack2D, later: &BallTrack2D, conf: f64) -> BallTrack2D {
    let a = earlier.points[earlier.len() - 1];
    let b = later.points[0];
    let frames = (b.frame - a.frame) as f64;
    let mut points = earlier.points.clone();
    for f in a.frame + 1..b.frame {
        let p = a.pos().lerp(b.pos(), (f - a.frame) as f64 / frames);
        points.push(TrackPoint { frame: f, x: p.x, y: p.y, inferred: true });
    }
    points.extend_from_slice(&later.points);
    let mut confidences = earlier.confidences.clone();
    confidences.push(conf);
    confidences.extend_from_slice(&later.confidences);
    BallTrack2D { points, confidences }
}

/// Joins two tracks separated by at most `gap_merge_max` missing frames when
/// the later one continues the earlier one. Gap frames receive linearly
/// interpolated points flagged as inferred.
pub fn merge_tracks(earlier: &BallTrack2D, later: &BallTrack2D, cfg: &GbcvConfig) -> Result<BallTrack2D, GbcvError> {
    let conf = merge_confidence(earlier, later, cfg)?;
    Ok(join(earlier, later, conf))
}

/// Frame of release extrapolated backwards from the first track point at the
/// track's mean speed. Never later than the first track frame.
pub fn estimate_release_frame(track: &BallTrack2D, release_point: Point) -> Result<usize, GbcvError> {
    if track.len() < 2 {
        return Err(GbcvError::DegenerateTrack);
    }
    let step = track.mean_step();
    if !(step > 0.0 && step.is_finite()) {
        return Err(GbcvError::DegenerateTrack);
    }
    let back = (track.points[0].pos().dist(release_point) / step).round() as usize;
    Ok(track.first_frame().saturating_sub(back))
}

#[cfg(test)]
mod tests {
    use super::super::build_candidate_graph;
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cand(p: Point) -> MotionCandidate {
        MotionCandidate::at(p, 3.0, 20)
    }

    fn line_track(first: usize, n: usize, start: Point, step: Point) -> BallTrack2D {
        BallTrack2D {
            points: (0..n)
                .map(|i| {
                    let p = start + step * i as f64;
                    TrackPoint { frame: first + i, x: p.x, y: p.y, inferred: false }
                })
                .collect(),
            confidences: vec![1.0; n.saturating_sub(2)],
        }
    }

    /// Pitch-like candidate stream: a ball at 15 px/frame with a slight drop,
    /// a slow arm moving on an arc and random clutter.
    fn pitch_stream(seed: u64, skip: &[usize]) -> (Vec<FrameCandidates>, Vec<(usize, Point)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stream = Vec::new();
        let mut truth = Vec::new();
        for f in 80..120usize {
            let mut c = Vec::new();
            if (93..115).contains(&f) && !skip.contains(&f) {
                let u = (f - 93) as f64;
                let p = Point::new(200.0 + 15.0 * u, 150.0 + 0.08 * u * u);
                truth.push((f, p));
                c.push(cand(p));
            }
            let ang = f as f64 * 0.08;
            c.push(cand(Point::new(150.0 + 40.0 * ang.cos(), 140.0 + 40.0 * ang.sin())));
            for _ in 0..rng.gen_range(0..4) {
                c.push(cand(Point::new(rng.gen_range(0.0..600.0), rng.gen_range(0.0..400.0))));
            }
            stream.push(FrameCandidates { frame: f, candidates: c });
        }
        (stream, truth)
    }

    fn run(stream: &[FrameCandidates], cfg: &GbcvConfig) -> Vec<BallTrack2D> {
        detect_ball_tracks(&build_candidate_graph(stream, cfg.theta_dist), cfg).unwrap()
    }

    /// Independent re-check of the emitted track invariants.
    fn check_track(t: &BallTrack2D, cfg: &GbcvConfig) -> Result<(), TestCaseError> {
        prop_assert!(t.len() >= cfg.min_track_len);
        for w in t.points.windows(2) {
            prop_assert_eq!(w[1].frame, w[0].frame + 1);
            prop_assert!(w[0].pos().dist(w[1].pos()) > cfg.theta_dist);
        }
        for w in t.points.windows(3) {
            if w.iter().all(|p| !p.inferred) {
                let c = triple_confidence(w[0].pos(), w[1].pos(), w[2].pos(), cfg.weights);
                prop_assert!(c >= cfg.theta_confidence, "triple confidence {}", c);
            }
        }
        Ok(())
    }

    #[test]
    fn no_candidates_no_tracks() {
        let cfg = GbcvConfig::default();
        assert!(run(&[], &cfg).is_empty());
        let empty: Vec<FrameCandidates> = (0..10).map(|f| FrameCandidates { frame: f, candidates: vec![] }).collect();
        assert!(run(&empty, &cfg).is_empty());
    }

    #[test]
    fn ball_found_and_decoy_rejected() {
        let cfg = GbcvConfig::default();
        for seed in 0..20 {
            let (stream, truth) = pitch_stream(seed, &[]);
            let tracks = run(&stream, &cfg);
            let best = &tracks[0];
            assert_eq!(best.len(), truth.len(), "seed {seed}");
            for (p, (f, q)) in best.points.iter().zip(&truth) {
                assert_eq!(p.frame, *f);
                assert!(p.pos().dist(*q) < 1e-9);
            }
            // nothing else survives on this much clutter
            assert_eq!(tracks.len(), 1, "seed {seed}");
        }
    }

    #[test]
    fn missed_frame_mid_flight_is_merged() {
        let cfg = GbcvConfig::default();
        let (stream, truth) = pitch_stream(5, &[101]);
        let tracks = run(&stream, &cfg);
        assert_eq!(tracks.len(), 1);
        let t = &tracks[0];
        assert_eq!(t.len(), truth.len() + 1);
        let inferred: Vec<&TrackPoint> = t.points.iter().filter(|p| p.inferred).collect();
        assert_eq!(inferred.len(), 1);
        assert_eq!(inferred[0].frame, 101);
        let (p100, p102) = (t.at(100).unwrap().pos(), t.at(102).unwrap().pos());
        assert!(inferred[0].pos().dist(p100.lerp(p102, 0.5)) < 1e-9);
    }

    #[test]
    fn online_builder_matches_batch() {
        let cfg = GbcvConfig::default();
        let (stream, _) = pitch_stream(9, &[104]);
        let mut b = TrackBuilder::new(cfg.clone()).unwrap();
        let mut seen_active = false;
        for fc in &stream {
            b.push(fc);
            seen_active |= b.active_tracks() > 0;
        }
        assert!(seen_active);
        assert_eq!(finalize(b.finish(), &cfg), run(&stream, &cfg));
    }

    #[test]
    fn equal_tracks_rank_by_start() {
        let cfg = GbcvConfig::default();
        let mut stream: Vec<FrameCandidates> =
            (0..20).map(|f| FrameCandidates { frame: f, candidates: vec![] }).collect();
        for f in 2..8 {
            stream[f].candidates.push(cand(Point::new(20.0 * f as f64, 300.0)));
        }
        for f in 10..16 {
            stream[f].candidates.push(cand(Point::new(20.0 * f as f64, 50.0)));
        }
        let tracks = run(&stream, &cfg);
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].first_frame(), 2);
        assert_eq!(tracks[1].first_frame(), 10);
    }

    #[test]
    fn merge_examples() {
        let cfg = GbcvConfig::default();
        let e = line_track(10, 4, Point::new(0.0, 0.0), Point::new(15.0, 0.0));
        let l = line_track(15, 4, Point::new(75.0, 0.0), Point::new(15.0, 0.0));
        let m = merge_tracks(&e, &l, &cfg).unwrap();
        assert_eq!(m.len(), 9);
        let bridged = m.at(14).unwrap();
        assert!(bridged.inferred);
        assert_eq!((bridged.x, bridged.y), (60.0, 0.0));

        let perp = line_track(15, 4, Point::new(75.0, 0.0), Point::new(0.0, 15.0));
        match merge_tracks(&e, &perp, &cfg) {
            Err(GbcvError::Unmergeable { confidence }) => assert!(confidence < 0.8),
            other => panic!("{other:?}"),
        }
        let overlap = line_track(12, 4, Point::new(75.0, 0.0), Point::new(15.0, 0.0));
        assert_eq!(merge_tracks(&e, &overlap, &cfg), Err(GbcvError::InvalidMerge));
        let far = line_track(30, 4, Point::new(300.0, 0.0), Point::new(15.0, 0.0));
        assert!(matches!(merge_tracks(&e, &far, &cfg), Err(GbcvError::GapTooLong { .. })));
    }

    #[test]
    fn perpendicular_continuation_scores_below_threshold() {
        // earlier-vs-later comparison alone: 0.5 * 0.2929 + 0.5 * 1
        let cfg = GbcvConfig::default();
        let e = line_track(0, 3, Point::new(0.0, 0.0), Point::new(15.0, 0.0));
        let l = line_track(4, 3, Point::new(60.0, 0.0), Point::new(0.0, 15.0));
        let c = pair_confidence(track_average(&e).unwrap(), track_average(&l).unwrap(), &cfg);
        assert!((c - 0.6464).abs() < 1e-4);
    }

    #[test]
    fn release_examples() {
        let t = line_track(96, 5, Point::new(245.0, 100.0), Point::new(15.0, 0.0));
        assert_eq!(estimate_release_frame(&t, Point::new(200.0, 100.0)), Ok(93));
        assert_eq!(estimate_release_frame(&t, Point::new(245.0, 100.0)), Ok(96));
        assert_eq!(estimate_release_frame(&t, Point::new(-10000.0, 100.0)), Ok(0));
        let still = line_track(5, 3, Point::new(1.0, 1.0), Point::new(0.0, 0.0));
        assert_eq!(estimate_release_frame(&still, Point::new(0.0, 0.0)), Err(GbcvError::DegenerateTrack));
        let one = line_track(5, 1, Point::new(1.0, 1.0), Point::new(0.0, 0.0));
        assert_eq!(estimate_release_frame(&one, Point::new(0.0, 0.0)), Err(GbcvError::DegenerateTrack));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn emitted_tracks_satisfy_their_bounds(seed in 0u64..10_000, clutter in 0usize..12, skip in 95usize..110) {
            let cfg = GbcvConfig::default();
            let (mut stream, _) = pitch_stream(seed, &[skip]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            for fc in &mut stream {
                for _ in 0..clutter {
                    fc.candidates.push(cand(Point::new(rng.gen_range(0.0..600.0), rng.gen_range(0.0..400.0))));
                }
            }
            for t in run(&stream, &cfg) {
                check_track(&t, &cfg)?;
            }
        }
    }
}
