//! Transition scoring against cue embeddings and the hysteresis state
//! machine that cuts a frame stream into room batches.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::embedding::Embedding;
use crate::geometry::Sim3;
use crate::scene_graph::FrameId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SegmentError {
    #[error("cue set is empty")]
    NoCues,
    #[error("frame {got} arrived after frame {last}")]
    OutOfOrder { last: FrameId, got: FrameId },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("subsample target must be at least 2, got {0}")]
    TargetTooSmall(usize),
    #[error("invalid segmenter config: {0}")]
    Config(&'static str),
}

/// One monocular observation.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub id: FrameId,
    pub timestamp: f64,
    pub feature: Embedding,
    pub gt_pose: Option<Sim3>,
    pub gt_room: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Cue {
    pub label: String,
    pub embedding: Embedding,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CueSet {
    pub transition: Vec<Cue>,
    pub room: Vec<Cue>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameScore {
    pub label: String,
    pub is_transition: bool,
    /// Best transition-cue similarity minus best room-cue similarity.
    pub margin: f64,
}

/// Labels a frame with its most similar cue. Transition cues precede room
/// cues in tie-breaking, then list order applies.
pub fn score_frame(feature: &Embedding, cues: &CueSet) -> Result<FrameScore, SegmentError> {
    let best = |list: &[Cue]| {
        list.iter()
            .enumerate()
            .map(|(i, c)| (i, feature.cosine(&c.embedding)))
            .fold(None, |acc: Option<(usize, f64)>, (i, s)| match acc {
                Some((_, b)) if b >= s => acc,
                _ => Some((i, s)),
            })
    };
    let t = best(&cues.transition);
    let r = best(&cues.room);
    let (label, is_transition) = match (t, r) {
        (None, None) => return Err(SegmentError::NoCues),
        (Some((i, _)), None) => (&cues.transition[i].label, true),
        (None, Some((j, _))) => (&cues.room[j].label, false),
        (Some((i, st)), Some((j, sr))) => {
            if st >= sr {
                (&cues.transition[i].label, true)
            } else {
                (&cues.room[j].label, false)
            }
        }
    };
    let t_sim = t.map_or(-1.0, |(_, s)| s);
    let r_sim = r.map_or(-1.0, |(_, s)| s);
    Ok(FrameScore {
        label: label.clone(),
        is_transition,
        margin: t_sim - r_sim,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct HysteresisConfig {
    pub increment: f64,
    pub decay: f64,
    pub trigger_threshold: f64,
    /// After a finalization the trigger stays disarmed until confidence
    /// falls to this level, so the tail of one transition cannot close the
    /// next batch.
    pub rearm_threshold: f64,
    pub c_max: f64,
    pub overlap_count: usize,
    pub min_batch_size: usize,
    pub max_batch_size: usize,
}

impl Default for HysteresisConfig {
    fn default() -> Self {
        Self {
            increment: 1.0,
            decay: 0.5,
            trigger_threshold: 4.0,
            rearm_threshold: 0.0,
            c_max: 8.0,
            overlap_count: 5,
            min_batch_size: 30,
            max_batch_size: 240,
        }
    }
}

impl HysteresisConfig {
    pub fn validate(&self) -> Result<(), SegmentError> {
        if !(self.increment > 0.0 && self.decay >= 0.0) {
            return Err(SegmentError::Config("increment must be > 0 and decay >= 0"));
        }
        if !(self.trigger_threshold > 0.0 && self.trigger_threshold <= self.c_max) {
            return Err(SegmentError::Config("need 0 < trigger_threshold <= c_max"));
        }
        if !(self.rearm_threshold >= 0.0 && self.rearm_threshold < self.trigger_threshold) {
            return Err(SegmentError::Config("need 0 <= rearm_threshold < trigger_threshold"));
        }
        if self.min_batch_size == 0 || self.min_batch_size > self.max_batch_size {
            return Err(SegmentError::Config("need 0 < min_batch_size <= max_batch_size"));
        }
        if self.overlap_count >= self.min_batch_size {
            return Err(SegmentError::Config("overlap_count must be below min_batch_size"));
        }
        Ok(())
    }
}

/// A closed batch of consecutive frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FinalizedBatch {
    pub frames: Vec<FrameRecord>,
    /// Per-frame margins, index-aligned with `frames`.
    pub margins: Vec<f64>,
    /// Number of leading frames carried over from the previous batch.
    pub carried_in: usize,
    /// Number of trailing frames carried into the next batch.
    pub carried_out: usize,
    /// Closed by the size cap or end of stream rather than by a detected
    /// transition.
    pub forced: bool,
}

impl FinalizedBatch {
    /// Frames that are neither shared with a neighbouring batch nor scored
    /// as transition frames.
    pub fn interior_frames(&self) -> impl Iterator<Item = &FrameRecord> + '_ {
        let end = self.frames.len() - self.carried_out;
        self.frames
            .iter()
            .zip(&self.margins)
            .enumerate()
            .filter(move |(i, (_, m))| *i >= self.carried_in && *i < end && **m <= 0.0)
            .map(|(_, (f, _))| f)
    }
}

#[derive(Clone, Debug)]
pub struct Segmenter {
    config: HysteresisConfig,
    confidence: f64,
    armed: bool,
    batch: Vec<FrameRecord>,
    margins: Vec<f64>,
    carried_in: usize,
    last_id: Option<FrameId>,
}

impl Segmenter {
    pub fn new(config: HysteresisConfig) -> Result<Self, SegmentError> {
        config.validate()?;
        Ok(Self {
            config,
            confidence: 0.0,
            armed: true,
            batch: Vec::new(),
            margins: Vec::new(),
            carried_in: 0,
            last_id: None,
        })
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    /// False between a finalization and the return of confidence to the
    /// re-arm level.
    pub fn armed(&self) -> bool {
        self.armed
    }

    pub fn pending(&self) -> usize {
        self.batch.len()
    }

    /// Scores `frame` and feeds it to the state machine.
    pub fn step(&mut self, frame: FrameRecord, cues: &CueSet) -> Result<Option<FinalizedBatch>, SegmentError> {
        let margin = score_frame(&frame.feature, cues)?.margin;
        self.step_with_margin(frame, margin)
    }

    pub fn step_with_margin(
        &mut self,
        frame: FrameRecord,
        margin: f64,
    ) -> Result<Option<FinalizedBatch>, SegmentError> {
        if let Some(last) = self.last_id {
            if frame.id <= last {
                return Err(SegmentError::OutOfOrder { last, got: frame.id });
            }
        }
        self.last_id = Some(frame.id);
        let c = &self.config;
        self.confidence = if margin > 0.0 {
            (self.confidence + c.increment).min(c.c_max)
        } else {
            (self.confidence - c.decay).max(0.0)
        };
        self.armed |= self.confidence <= c.rearm_threshold;
        self.batch.push(frame);
        self.margins.push(margin);

        let triggered = self.armed && self.confidence >= c.trigger_threshold && self.batch.len() >= c.min_batch_size;
        if triggered || self.batch.len() >= c.max_batch_size {
            Ok(Some(self.cut(!triggered)))
        } else {
            Ok(None)
        }
    }

    fn cut(&mut self, forced: bool) -> FinalizedBatch {
        let keep = self.config.overlap_count.min(self.batch.len());
        let start = self.batch.len() - keep;
        let next_frames = self.batch[start..].to_vec();
        let next_margins = self.margins[start..].to_vec();
        let batch = FinalizedBatch {
            frames: core::mem::replace(&mut self.batch, next_frames),
            margins: core::mem::replace(&mut self.margins, next_margins),
            carried_in: self.carried_in,
            carried_out: keep,
            forced,
        };
        self.carried_in = keep;
        self.confidence = 0.0;
        self.armed = false;
        batch
    }

    /// Closes the stream. Returns the remaining batch unless it consists
    /// only of frames already carried from the previous one.
    pub fn finish(mut self) -> Option<FinalizedBatch> {
        if self.batch.len() <= self.carried_in {
            return None;
        }
        Some(FinalizedBatch {
            frames: core::mem::take(&mut self.batch),
            margins: core::mem::take(&mut self.margins),
            carried_in: self.carried_in,
            carried_out: 0,
            forced: true,
        })
    }
}

/// Uniform-stride indices into a batch of `len`, keeping first and last.
pub fn subsample_indices(len: usize, target: usize) -> Result<Vec<usize>, SegmentError> {
    if len == 0 {
        return Err(SegmentError::EmptyBatch);
    }
    if target < 2 {
        return Err(SegmentError::TargetTooSmall(target));
    }
    if len <= target {
        return Ok((0..len).collect());
    }
    // Rounded stride positions i * (len - 1) / (target - 1); they are
    // strictly increasing because the stride exceeds one.
    let (n, d) = ((len - 1) as u128, (target - 1) as u128);
    Ok((0..target as u128)
        .map(|i| ((2 * i * n + d) / (2 * d)) as usize)
        .collect())
}

/// Uniform subsample of a batch; see [`subsample_indices`].
pub fn subsample_batch(frames: &[FrameRecord], target: usize) -> Result<Vec<FrameRecord>, SegmentError> {
    Ok(subsample_indices(frames.len(), target)?
        .into_iter()
        .map(|i| frames[i].clone())
        .collect())
}

/// Uniform subsample that additionally keeps every index in `pinned`. The
/// result may exceed `target` by at most the number of pins.
pub fn subsample_with_pins(len: usize, target: usize, pinned: &BTreeSet<usize>) -> Result<Vec<usize>, SegmentError> {
    let mut keep: BTreeSet<usize> = subsample_indices(len, target)?.into_iter().collect();
    keep.extend(pinned.iter().copied().filter(|&i| i < len));
    Ok(keep.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn unit(dim: usize, axis: usize) -> Embedding {
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Embedding::normalized(&v).unwrap()
    }

    fn cues() -> CueSet {
        CueSet {
            transition: vec![
                Cue {
                    label: "doorway".into(),
                    embedding: unit(4, 0),
                },
                Cue {
                    label: "corridor".into(),
                    embedding: unit(4, 1),
                },
            ],
            room: vec![Cue {
                label: "room".into(),
                embedding: unit(4, 2),
            }],
        }
    }

    fn frame(id: u64) -> FrameRecord {
        FrameRecord {
            id: FrameId(id),
            timestamp: id as f64 * 0.1,
            feature: unit(4, 2),
            gt_pose: None,
            gt_room: None,
        }
    }

    fn config(theta: f64, min: usize) -> HysteresisConfig {
        HysteresisConfig {
            trigger_threshold: theta,
            min_batch_size: min,
            ..Default::default()
        }
    }

    #[test]
    fn scores_transition_and_room_cues() {
        let c = cues();
        let s = score_frame(&unit(4, 1), &c).unwrap();
        assert_eq!(s.label, "corridor");
        assert!(s.is_transition && s.margin > 0.0);
        let s = score_frame(&unit(4, 2), &c).unwrap();
        assert_eq!(s.label, "room");
        assert!(s.margin < 0.0);
    }

    #[test]
    fn equidistant_feature_ties_to_first_cue() {
        let f = Embedding::normalized(&[1.0, 1.0, 1.0, 0.0]).unwrap();
        let s = score_frame(&f, &cues()).unwrap();
        assert_eq!(s.margin, 0.0);
        assert_eq!(s.label, "doorway");
        assert_eq!(score_frame(&f, &CueSet::default()), Err(SegmentError::NoCues));
    }

    #[test]
    fn negative_margins_never_trigger() {
        let mut s = Segmenter::new(HysteresisConfig::default()).unwrap();
        for i in 0..100 {
            assert!(s.step_with_margin(frame(i), -0.3).unwrap().is_none());
            assert_eq!(s.confidence(), 0.0);
        }
    }

    #[test]
    fn triggers_on_fifth_positive_frame() {
        let mut s = Segmenter::new(config(5.0, 30)).unwrap();
        for i in 0..40 {
            assert!(s.step_with_margin(frame(i), -1.0).unwrap().is_none());
        }
        for i in 40..44 {
            assert!(s.step_with_margin(frame(i), 1.0).unwrap().is_none());
        }
        let b = s.step_with_margin(frame(44), 1.0).unwrap().unwrap();
        assert_eq!(b.frames.len(), 45);
        assert!(!b.forced);
        assert_eq!(b.carried_out, 5);
        assert_eq!(s.confidence(), 0.0);
        assert_eq!(s.pending(), 5);
    }

    #[test]
    fn alternating_margins_with_strong_decay_never_trigger() {
        let cfg = HysteresisConfig {
            decay: 1.0,
            ..config(4.0, 30)
        };
        let mut s = Segmenter::new(cfg).unwrap();
        for i in 0..200 {
            let m = if i % 2 == 0 { 1.0 } else { -1.0 };
            assert!(s.step_with_margin(frame(i), m).unwrap().is_none());
            assert!(s.confidence() <= 1.0);
        }
    }

    #[test]
    fn max_batch_size_forces_finalization() {
        let cfg = HysteresisConfig {
            max_batch_size: 50,
            ..Default::default()
        };
        let mut s = Segmenter::new(cfg).unwrap();
        let mut events = 0;
        for i in 0..50 {
            if let Some(b) = s.step_with_margin(frame(i), -1.0).unwrap() {
                assert!(b.forced);
                assert_eq!(b.frames.len(), 50);
                events += 1;
            }
        }
        assert_eq!(events, 1);
    }

    #[test]
    fn out_of_order_frames_are_rejected() {
        let mut s = Segmenter::new(HysteresisConfig::default()).unwrap();
        s.step_with_margin(frame(5), -1.0).unwrap();
        assert_eq!(
            s.step_with_margin(frame(5), -1.0),
            Err(SegmentError::OutOfOrder {
                last: FrameId(5),
                got: FrameId(5)
            })
        );
    }

    #[test]
    fn subsample_stride_arithmetic() {
        assert_eq!(subsample_indices(60, 60).unwrap(), (0..60).collect::<Vec<_>>());
        let idx = subsample_indices(120, 60).unwrap();
        assert_eq!(idx.len(), 60);
        assert_eq!((idx[0], idx[59]), (0, 119));
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample_indices(10, 60).unwrap().len(), 10);
        assert_eq!(subsample_indices(0, 60), Err(SegmentError::EmptyBatch));
        assert_eq!(subsample_indices(5, 1), Err(SegmentError::TargetTooSmall(1)));
    }

    #[test]
    fn pins_survive_subsampling() {
        let pins: BTreeSet<usize> = [1, 2, 97].into_iter().collect();
        let idx = subsample_with_pins(100, 10, &pins).unwrap();
        assert!(pins.iter().all(|p| idx.contains(p)));
        assert!(idx.len() <= 13);
    }

    fn run(margins: &[f64], cfg: HysteresisConfig) -> (Vec<FinalizedBatch>, usize) {
        let mut s = Segmenter::new(cfg).unwrap();
        let mut out = Vec::new();
        for (i, &m) in margins.iter().enumerate() {
            out.extend(s.step_with_margin(frame(i as u64), m).unwrap());
        }
        out.extend(s.finish());
        (out, margins.len())
    }

    #[test]
    fn transition_tail_does_not_close_the_next_batch() {
        // 40 room frames, a 20-frame transition, then a room again. The
        // first cut lands on the 4th transition frame; the remaining 16
        // positive frames keep confidence high but the trigger is disarmed.
        let mut margins = vec![-1.0; 40];
        margins.extend([1.0; 20]);
        margins.extend([-1.0; 60]);
        let cfg = HysteresisConfig {
            min_batch_size: 10,
            ..Default::default()
        };
        let (batches, _) = run(&margins, cfg);
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[0].frames.last().unwrap().id, FrameId(43));
        assert!(!batches[0].forced && batches[1].forced);

        let mut s = Segmenter::new(cfg).unwrap();
        for (i, &m) in margins[..44].iter().enumerate() {
            s.step_with_margin(frame(i as u64), m).unwrap();
        }
        assert!(!s.armed());
        for i in 44..60 {
            s.step_with_margin(frame(i), 1.0).unwrap();
        }
        assert!(!s.armed() && s.confidence() >= cfg.trigger_threshold);
        for i in 60..76 {
            s.step_with_margin(frame(i), -1.0).unwrap();
        }
        assert!(s.armed());
    }

    proptest! {
        #[test]
        fn batches_partition_the_stream(margins in prop::collection::vec(-1.0f64..1.0, 1..600)) {
            let cfg = HysteresisConfig::default();
            let (batches, n) = run(&margins, cfg);
            let mut seen = vec![0u32; n];
            for b in &batches {
                prop_assert!(b.frames.len() <= cfg.max_batch_size);
                if !b.forced {
                    prop_assert!(b.frames.len() >= cfg.min_batch_size);
                }
                for f in &b.frames {
                    seen[f.id.0 as usize] += 1;
                }
            }
            let overlap: BTreeSet<u64> = batches
                .windows(2)
                .flat_map(|w| w[1].frames[..w[1].carried_in].iter().map(|f| f.id.0))
                .collect();
            for (i, &c) in seen.iter().enumerate() {
                let expected = if overlap.contains(&(i as u64)) { 2 } else { 1 };
                prop_assert_eq!(c, expected);
            }
            prop_assert_eq!(run(&margins, cfg).0, batches);
        }

        #[test]
        fn isolated_false_positives_never_trigger(
            spikes in prop::collection::btree_set(0usize..400, 0..40)
        ) {
            // One positive frame at most every other frame: increment 1 is
            // undone by two decays of 0.5, so confidence stays below 2.
            let margins: Vec<f64> = (0..400)
                .map(|i| if spikes.contains(&i) && i % 3 == 0 { 0.5 } else { -0.5 })
                .collect();
            let (batches, _) = run(&margins, HysteresisConfig::default());
            prop_assert!(batches.iter().all(|b| b.forced));
        }
    }
}
