use std::collections::{BTreeMap, HashMap, HashSet};
use std::ops::Range;

use log::warn;
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    Action, CategoryQuota, Clip, ClipMeta, DerivedLabel, FrameDetections, SensorSample,
    SuperCategory,
};
use crate::error::{Error, Result};

/// Frame stride that maps `source_fps` onto `target_fps`.
pub fn downsample_stride(source_fps: f64, target_fps: f64) -> Result<usize> {
    if !(target_fps > 0.0) || !(source_fps > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "frame rates must be positive (source {source_fps}, target {target_fps})"
        )));
    }
    if target_fps > source_fps {
        return Err(Error::InvalidConfig(format!(
            "target rate {target_fps} exceeds source rate {source_fps}"
        )));
    }
    Ok(((source_fps / target_fps).round() as usize).max(1))
}

/// Keeps every `round(source/target)`-th record, starting with the first.
pub fn downsample<R: Clone>(records: &[R], source_fps: f64, target_fps: f64) -> Result<Vec<R>> {
    let stride = downsample_stride(source_fps, target_fps)?;
    Ok(records.iter().step_by(stride).cloned().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EligibilityConfig {
    /// Largest absolute steering angle (degrees) a covered frame may have.
    pub max_steer_deg: f64,
    pub require_moving_start: bool,
}

impl Default for EligibilityConfig {
    fn default() -> Self {
        EligibilityConfig {
            max_steer_deg: 30.0,
            require_moving_start: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipParams {
    /// History length `T` in (downsampled) frames.
    pub history: usize,
    /// Offset `FT` of the predicted frame past the anchor.
    pub future: usize,
    pub quota: CategoryQuota,
}

impl Default for ClipParams {
    fn default() -> Self {
        ClipParams {
            history: 10,
            future: 1,
            quota: CategoryQuota::default(),
        }
    }
}

impl ClipParams {
    pub fn validate(&self) -> Result<()> {
        if self.history < 1 || self.future < 1 {
            return Err(Error::InvalidConfig(format!(
                "history and future offset must be >= 1 (T={}, FT={})",
                self.history, self.future
            )));
        }
        self.quota.validate()
    }
}

/// Anchor positions `t` with a full history window and a target frame `t + FT` in range.
pub fn candidate_anchors(len: usize, history: usize, future: usize) -> Range<usize> {
    if history == 0 || len < history + future {
        return 0..0;
    }
    history - 1..len - future
}

fn sensor_index(sensors: &[SensorSample]) -> HashMap<u64, &SensorSample> {
    sensors.iter().map(|s| (s.frame_index, s)).collect()
}

fn lookup<'a>(
    index: &HashMap<u64, &'a SensorSample>,
    frame: &FrameDetections,
) -> Result<&'a SensorSample> {
    index.get(&frame.frame_index).copied().ok_or_else(|| {
        Error::DataAlignment(format!(
            "no sensor row for session {} frame {}",
            frame.session, frame.frame_index
        ))
    })
}

/// One flag per candidate anchor (see [`candidate_anchors`]): the covered
/// frames `t-T+1 ..= t+FT` stay within the steering limit and the first
/// history frame is moving.
pub fn eligibility_filter(
    frames: &[FrameDetections],
    sensors: &[SensorSample],
    params: &ClipParams,
    config: &EligibilityConfig,
) -> Result<Vec<bool>> {
    params.validate()?;
    let index = sensor_index(sensors);
    let aligned = frames
        .iter()
        .map(|f| lookup(&index, f))
        .collect::<Result<Vec<_>>>()?;
    let turning: Vec<bool> = aligned
        .iter()
        .map(|s| s.steer_deg.abs() > config.max_steer_deg)
        .collect();
    let out = candidate_anchors(frames.len(), params.history, params.future)
        .map(|t| {
            let start = t + 1 - params.history;
            let straight = !turning[start..=t + params.future].iter().any(|&x| x);
            let moving = !config.require_moving_start || aligned[start].moving();
            straight && moving
        })
        .collect();
    Ok(out)
}

/// Maps pedal readings to an action using the per-scenario thresholds.
/// Brake pressure takes precedence when both pedals are active.
pub fn derive_label(sensor: &SensorSample) -> Result<DerivedLabel> {
    sensor.validate()?;
    let scenario = sensor.scenario;
    let label = if sensor.brake_kpa > 0.0 {
        if sensor.brake_kpa >= scenario.full_brake_kpa() {
            DerivedLabel::Action(Action::FullBraking)
        } else {
            DerivedLabel::Action(Action::SlightBraking)
        }
    } else if sensor.accel_pct > 0.0 {
        if sensor.accel_pct >= scenario.full_accel_pct() {
            DerivedLabel::Action(Action::FullAcceleration)
        } else {
            DerivedLabel::Action(Action::SlightAcceleration)
        }
    } else {
        DerivedLabel::Coast
    };
    Ok(label)
}

/// Keeps the most confident detections of each view, up to its quota.
///
/// Rows are `(x1/W, y1/H, x2/W, y2/H)`; unused slots stay zero with a `false`
/// mask. Within a view, rows are in descending confidence with ties broken
/// by detection index.
pub fn select_top_n(frame: &FrameDetections, quota: &CategoryQuota) -> (Array2<f64>, Vec<bool>) {
    let n = quota.total();
    let mut rows = Array2::<f64>::zeros((n, 4));
    let mut mask = vec![false; n];
    let (w, h) = (frame.width as f64, frame.height as f64);
    for cat in SuperCategory::ALL {
        let mut members: Vec<usize> = frame
            .objects
            .iter()
            .enumerate()
            .filter(|(_, d)| d.category.super_category() == cat)
            .map(|(i, _)| i)
            .collect();
        members.sort_by(|&a, &b| {
            frame.objects[b]
                .confidence
                .total_cmp(&frame.objects[a].confidence)
                .then(a.cmp(&b))
        });
        for (slot, &i) in quota.slots(cat).zip(members.iter()) {
            let d = &frame.objects[i];
            rows[[slot, 0]] = d.x1 / w;
            rows[[slot, 1]] = d.y1 / h;
            rows[[slot, 2]] = d.x2 / w;
            rows[[slot, 3]] = d.y2 / h;
            mask[slot] = true;
        }
    }
    (rows, mask)
}

/// Emits one clip per eligible anchor whose target frame carries a non-coast label.
///
/// `eligible`, when given, holds one flag per candidate anchor as produced by
/// [`eligibility_filter`].
pub fn assemble_clips(
    frames: &[FrameDetections],
    sensors: &[SensorSample],
    params: &ClipParams,
    eligible: Option<&[bool]>,
) -> Result<Vec<Clip>> {
    params.validate()?;
    let anchors = candidate_anchors(frames.len(), params.history, params.future);
    if let Some(flags) = eligible {
        if flags.len() != anchors.len() {
            return Err(Error::shape("eligibility flags", anchors.len(), flags.len()));
        }
    }
    let index = sensor_index(sensors);
    let n = params.quota.total();
    let selected: Vec<(Array2<f64>, Vec<bool>)> =
        frames.iter().map(|f| select_top_n(f, &params.quota)).collect();

    let mut clips = Vec::new();
    for (k, t) in anchors.enumerate() {
        if let Some(flags) = eligible {
            if !flags[k] {
                continue;
            }
        }
        let target = lookup(&index, &frames[t + params.future])?;
        let Some(label) = derive_label(target)?.action() else {
            continue;
        };
        let anchor_sensor = lookup(&index, &frames[t])?;
        let start = t + 1 - params.history;
        let mut features = Array3::<f64>::zeros((params.history, n, 4));
        let mut mask = Array2::<bool>::from_elem((params.history, n), false);
        for (ti, fi) in (start..=t).enumerate() {
            let (rows, m) = &selected[fi];
            features.slice_mut(ndarray::s![ti, .., ..]).assign(rows);
            for (slot, &v) in m.iter().enumerate() {
                mask[[ti, slot]] = v;
            }
        }
        clips.push(Clip {
            features,
            mask,
            label,
            meta: ClipMeta {
                session: frames[t].session.clone(),
                anchor: t as u64,
                anchor_frame: frames[t].frame_index,
                scenario: anchor_sensor.scenario,
            },
        });
    }
    Ok(clips)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            val: 0.10,
            test: 0.20,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 || self.train < 0.0 || self.val < 0.0 || self.test < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "split ratios must be non-negative and sum to 1 (got {sum})"
            )));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes: validation and test are floored, the remainder goes to train.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let floor = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
        let val = floor(self.val);
        let test = floor(self.test).min(n - val);
        (n - val - test, val, test)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<Clip>,
    pub val: Vec<Clip>,
    pub test: Vec<Clip>,
}

impl DatasetSplits {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded shuffle followed by a contiguous train/val/test partition.
pub fn split_dataset(clips: Vec<Clip>, ratios: SplitRatios, seed: u64) -> Result<DatasetSplits> {
    ratios.validate()?;
    let (n_train, n_val, _) = ratios.counts(clips.len());
    let mut order: Vec<usize> = (0..clips.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut slots: Vec<Option<Clip>> = clips.into_iter().map(Some).collect();
    let mut take = |range: Range<usize>| -> Vec<Clip> {
        order[range]
            .iter()
            .map(|&i| slots[i].take().expect("each index appears once"))
            .collect()
    };
    let n = order.len();
    let train = take(0..n_train);
    let val = take(n_train..n_train + n_val);
    let test = take(n_train + n_val..n);
    Ok(DatasetSplits { train, val, test })
}

/// Split variant that keeps every session inside a single partition, so
/// overlapping clips of one drive never straddle train and test.
pub fn split_dataset_by_session(
    clips: Vec<Clip>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplits> {
    ratios.validate()?;
    let (n_train, n_val, n_test) = ratios.counts(clips.len());
    let mut sessions: BTreeMap<String, Vec<Clip>> = BTreeMap::new();
    for c in clips {
        sessions.entry(c.meta.session.clone()).or_default().push(c);
    }
    let mut groups: Vec<Vec<Clip>> = sessions.into_values().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    // A session joins a partition only when that moves its size closer to
    // the target, and sessions are held back while a partition with a
    // non-zero target is still empty.
    let closer = |have: usize, add: usize, target: usize| 2 * have + add <= 2 * target;
    let total = groups.len();
    let mut out = DatasetSplits::default();
    for (i, g) in groups.into_iter().enumerate() {
        let left = total - i - 1;
        let owed_test = (n_test > 0 && out.test.is_empty()) as usize;
        let owed = (n_val > 0 && out.val.is_empty()) as usize + owed_test;
        if out.train.is_empty() || (left >= owed && closer(out.train.len(), g.len(), n_train)) {
            out.train.extend(g);
        } else if (n_val > 0 && out.val.is_empty())
            || (left >= owed_test && closer(out.val.len(), g.len(), n_val))
        {
            out.val.extend(g);
        } else {
            out.test.extend(g);
        }
    }
    Ok(out)
}

/// How a clip set is partitioned.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: SplitRatios,
    pub seed: u64,
    /// Keep each session inside one partition.
    pub by_session: bool,
}

impl SplitConfig {
    pub fn apply(&self, clips: Vec<Clip>) -> Result<DatasetSplits> {
        if self.by_session {
            split_dataset_by_session(clips, self.ratios, self.seed)
        } else {
            split_dataset(clips, self.ratios, self.seed)
        }
    }
}

pub fn class_histogram<'a>(clips: impl IntoIterator<Item = &'a Clip>) -> [usize; 4] {
    let mut h = [0usize; 4];
    for c in clips {
        h[c.label.index()] += 1;
    }
    h
}

/// Indices into `labels` after seeded oversampling: every original index in
/// order, then duplicates (drawn with replacement) of each under-represented
/// class until it matches the largest one. Empty classes stay empty.
pub fn oversample_indices(labels: &[Action], seed: u64) -> Vec<usize> {
    let mut hist = [0usize; 4];
    for l in labels {
        hist[l.index()] += 1;
    }
    let target = hist.iter().copied().max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<usize> = (0..labels.len()).collect();
    for action in Action::ALL {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == action).collect();
        if members.is_empty() {
            if target > 0 {
                warn!("class {action} has no training samples; cannot oversample");
            }
            continue;
        }
        for _ in members.len()..target {
            out.push(members[rng.gen_range(0..members.len())]);
        }
    }
    out
}

/// Clip-level form of [`oversample_indices`].
pub fn oversample(train: Vec<Clip>, seed: u64) -> Vec<Clip> {
    let labels: Vec<Action> = train.iter().map(|c| c.label).collect();
    let idx = oversample_indices(&labels, seed);
    let extra: Vec<Clip> = idx[train.len()..].iter().map(|&i| train[i].clone()).collect();
    let mut out = train;
    out.extend(extra);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    pub source_fps: f64,
    pub target_fps: f64,
    pub clip: ClipParams,
    pub eligibility: EligibilityConfig,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            source_fps: 30.0,
            target_fps: 3.0,
            clip: ClipParams::default(),
            eligibility: EligibilityConfig::default(),
        }
    }
}

/// Downsample, filter and assemble the clips of one session.
pub fn prepare_session(
    frames: &[FrameDetections],
    sensors: &[SensorSample],
    cfg: &PrepareConfig,
) -> Result<Vec<Clip>> {
    cfg.clip.validate()?;
    for f in frames {
        f.validate()?;
    }
    for s in sensors {
        s.validate()?;
    }
    let mut frames = frames.to_vec();
    frames.sort_by_key(|f| f.frame_index);
    let kept = downsample(&frames, cfg.source_fps, cfg.target_fps)?;
    let kept_idx: HashSet<u64> = kept.iter().map(|f| f.frame_index).collect();
    let kept_sensors: Vec<SensorSample> = sensors
        .iter()
        .filter(|s| kept_idx.contains(&s.frame_index))
        .cloned()
        .collect();
    let eligible = eligibility_filter(&kept, &kept_sensors, &cfg.clip, &cfg.eligibility)?;
    assemble_clips(&kept, &kept_sensors, &cfg.clip, Some(&eligible))
}

/// Runs [`prepare_session`] over every session; output is ordered by session id.
pub fn prepare_dataset(
    frames: &[FrameDetections],
    sensors: &[SensorSample],
    cfg: &PrepareConfig,
) -> Result<Vec<Clip>> {
    let mut by_session: BTreeMap<&str, (Vec<FrameDetections>, Vec<SensorSample>)> =
        BTreeMap::new();
    for f in frames {
        by_session.entry(&f.session).or_default().0.push(f.clone());
    }
    for s in sensors {
        by_session.entry(&s.session).or_default().1.push(s.clone());
    }
    let per_session: Vec<Result<Vec<Clip>>> = by_session
        .par_iter()
        .map(|(_, (f, s))| prepare_session(f, s, cfg))
        .collect();
    let mut clips = Vec::new();
    for r in per_session {
        clips.extend(r?);
    }
    Ok(clips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Category, Detection, Scenario};

    fn frame(i: u64, objects: Vec<Detection>) -> FrameDetections {
        FrameDetections {
            session: "s0".into(),
            frame_index: i,
            timestamp: i as f64 / 30.0,
            width: 1280,
            height: 720,
            objects,
        }
    }

    fn sensor(i: u64, brake: f64, accel: f64, steer: f64) -> SensorSample {
        SensorSample {
            session: "s0".into(),
            frame_index: i,
            brake_kpa: brake,
            accel_pct: accel,
            steer_deg: steer,
            scenario: Scenario::Highway,
            is_moving: None,
        }
    }

    fn det(cat: Category, conf: f64, x: f64) -> Detection {
        Detection {
            category: cat,
            x1: x,
            y1: 100.0,
            x2: x + 20.0,
            y2: 140.0,
            confidence: conf,
        }
    }

    #[test]
    fn downsample_keeps_stride_from_first() {
        let frames: Vec<u32> = (0..30).collect();
        assert_eq!(downsample(&frames, 30.0, 3.0).unwrap(), vec![0, 10, 20]);
        assert_eq!(downsample(&frames, 30.0, 30.0).unwrap(), frames);
        assert!(downsample(&frames, 30.0, 0.0).is_err());
        assert!(downsample::<u32>(&[], 30.0, 3.0).unwrap().is_empty());
    }

    #[test]
    fn downsample_matches_timestamp_buckets() {
        // one frame per 1/5 s bucket, the earliest in each
        let frames: Vec<usize> = (0..137).collect();
        let mut seen = HashSet::new();
        let mut oracle = Vec::new();
        for &i in &frames {
            let ts = i as f64 / 25.0;
            let bucket = (ts * 5.0 + 1e-9).floor() as i64;
            if seen.insert(bucket) {
                oracle.push(i);
            }
        }
        assert_eq!(downsample(&frames, 25.0, 5.0).unwrap(), oracle);
    }

    #[test]
    fn label_thresholds_depend_on_scenario() {
        let mut s = sensor(0, 1000.0, 0.0, 0.0);
        assert_eq!(derive_label(&s).unwrap(), DerivedLabel::Action(Action::FullBraking));
        s.scenario = Scenario::Urban;
        assert_eq!(derive_label(&s).unwrap(), DerivedLabel::Action(Action::SlightBraking));

        let mut s = sensor(0, 0.0, 25.0, 0.0);
        assert_eq!(derive_label(&s).unwrap(), DerivedLabel::Action(Action::FullAcceleration));
        s.accel_pct = 20.0;
        assert_eq!(derive_label(&s).unwrap(), DerivedLabel::Action(Action::SlightAcceleration));
        s.scenario = Scenario::Urban;
        assert_eq!(derive_label(&s).unwrap(), DerivedLabel::Action(Action::FullAcceleration));

        assert_eq!(derive_label(&sensor(0, 0.0, 0.0, 0.0)).unwrap(), DerivedLabel::Coast);
        // brake dominates
        assert_eq!(
            derive_label(&sensor(0, 10.0, 80.0, 0.0)).unwrap(),
            DerivedLabel::Action(Action::SlightBraking)
        );
        assert!(matches!(
            derive_label(&sensor(0, -1.0, 0.0, 0.0)),
            Err(Error::InvalidRecord(_))
        ));
    }

    #[test]
    fn top_n_keeps_most_confident_per_view() {
        let mut objects: Vec<Detection> = (0..25)
            .map(|i| det(Category::Car, (i as f64) / 25.0, i as f64 * 10.0))
            .collect();
        objects.push(det(Category::Pedestrian, 0.5, 5.0));
        let f = frame(0, objects);
        let q = CategoryQuota::default();
        let (rows, mask) = select_top_n(&f, &q);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 21);
        // highest-confidence car (index 24) first, lowest kept is index 5
        assert_eq!(rows[[0, 0]], 240.0 / 1280.0);
        assert_eq!(rows[[19, 0]], 50.0 / 1280.0);
        assert!(mask[20] && !mask[21]);
        assert_eq!(rows[[20, 1]], 100.0 / 720.0);
    }

    #[test]
    fn top_n_empty_frame_is_all_padding() {
        let (rows, mask) = select_top_n(&frame(0, vec![]), &CategoryQuota::default());
        assert_eq!(rows.dim(), (40, 4));
        assert!(rows.iter().all(|&v| v == 0.0));
        assert!(mask.iter().all(|&m| !m));
    }

    #[test]
    fn top_n_matches_full_sort_oracle() {
        let cats = [
            Category::Car,
            Category::Truck,
            Category::Pedestrian,
            Category::Car,
            Category::TrafficLight,
            Category::Bus,
            Category::Pedestrian,
            Category::Car,
        ];
        let confs = [0.3, 0.9, 0.4, 0.9, 0.7, 0.1, 0.8, 0.5];
        let objects: Vec<Detection> = cats
            .iter()
            .zip(confs)
            .enumerate()
            .map(|(i, (&c, p))| det(c, p, i as f64 * 30.0))
            .collect();
        let f = frame(0, objects.clone());
        let q = CategoryQuota::default();
        let (rows, mask) = select_top_n(&f, &q);
        let counts: Vec<usize> = SuperCategory::ALL
            .iter()
            .map(|&c| q.slots(c).filter(|&s| mask[s]).count())
            .collect();
        assert_eq!(counts, vec![5, 2, 1]);

        for cat in SuperCategory::ALL {
            // brute force: repeatedly extract the max-confidence remaining member
            let mut remaining: Vec<usize> = (0..objects.len())
                .filter(|&i| objects[i].category.super_category() == cat)
                .collect();
            let mut expected = Vec::new();
            while !remaining.is_empty() {
                let mut best = 0;
                for k in 1..remaining.len() {
                    let (a, b) = (remaining[k], remaining[best]);
                    if objects[a].confidence > objects[b].confidence {
                        best = k;
                    }
                }
                expected.push(remaining.remove(best));
            }
            for (slot, i) in q.slots(cat).zip(expected) {
                assert_eq!(rows[[slot, 0]], objects[i].x1 / 1280.0);
            }
        }
    }

    #[test]
    fn assemble_counts_follow_anchor_enumeration() {
        let frames: Vec<_> = (0..11).map(|i| frame(i, vec![])).collect();
        let sensors: Vec<_> = (0..11).map(|i| sensor(i, 0.0, 10.0, 0.0)).collect();
        let p = ClipParams {
            history: 10,
            future: 1,
            quota: CategoryQuota::default(),
        };
        let clips = assemble_clips(&frames, &sensors, &p, None).unwrap();
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].meta.anchor, 9);

        let p2 = ClipParams { history: 2, ..p };
        assert!(assemble_clips(&frames[..1], &sensors[..1], &p2, None).unwrap().is_empty());

        let frames: Vec<_> = (0..30).map(|i| frame(i, vec![])).collect();
        let sensors: Vec<_> = (0..30).map(|i| sensor(i, 0.0, 10.0, 0.0)).collect();
        let p3 = ClipParams {
            history: 15,
            future: 10,
            ..p
        };
        let oracle: Vec<u64> = (0..30u64).filter(|&t| t >= 14 && t + 10 <= 29).collect();
        let clips = assemble_clips(&frames, &sensors, &p3, None).unwrap();
        let anchors: Vec<u64> = clips.iter().map(|c| c.meta.anchor).collect();
        assert_eq!(anchors, oracle);
        assert_eq!(clips.len(), 6);

        let bad = ClipParams { future: 0, ..p };
        assert!(matches!(
            assemble_clips(&frames, &sensors, &bad, None),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn coast_targets_are_skipped() {
        let frames: Vec<_> = (0..4).map(|i| frame(i, vec![])).collect();
        let mut sensors: Vec<_> = (0..4).map(|i| sensor(i, 0.0, 10.0, 0.0)).collect();
        sensors[3].accel_pct = 0.0;
        let p = ClipParams {
            history: 2,
            future: 1,
            quota: CategoryQuota::default(),
        };
        let clips = assemble_clips(&frames, &sensors, &p, None).unwrap();
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].meta.anchor, 1);
    }

    #[test]
    fn eligibility_rules() {
        let frames: Vec<_> = (0..5).map(|i| frame(i, vec![])).collect();
        let p = ClipParams {
            history: 3,
            future: 1,
            quota: CategoryQuota::default(),
        };
        let cfg = EligibilityConfig::default();
        let sensors: Vec<_> = (0..5).map(|i| sensor(i, 0.0, 5.0, 0.0)).collect();
        assert_eq!(eligibility_filter(&frames, &sensors, &p, &cfg).unwrap(), vec![true, true]);

        let mut turning = sensors.clone();
        turning[3].steer_deg = 31.0;
        assert_eq!(eligibility_filter(&frames, &turning, &p, &cfg).unwrap(), vec![false, false]);
        turning[3].steer_deg = -30.0;
        assert_eq!(eligibility_filter(&frames, &turning, &p, &cfg).unwrap(), vec![true, true]);

        let mut stopped = sensors.clone();
        stopped[0].accel_pct = 0.0;
        assert_eq!(eligibility_filter(&frames, &stopped, &p, &cfg).unwrap(), vec![false, true]);
        stopped[0].is_moving = Some(true);
        assert_eq!(eligibility_filter(&frames, &stopped, &p, &cfg).unwrap(), vec![true, true]);

        let missing = &sensors[..4];
        match eligibility_filter(&frames, missing, &p, &cfg) {
            Err(Error::DataAlignment(msg)) => assert!(msg.contains("frame 4")),
            other => panic!("expected alignment error, got {other:?}"),
        }
    }

    fn labelled(n: usize, label: Action) -> Vec<Clip> {
        (0..n)
            .map(|i| Clip {
                features: Array3::zeros((1, 3, 4)),
                mask: Array2::from_elem((1, 3), false),
                label,
                meta: ClipMeta {
                    session: format!("s{}", i % 7),
                    anchor: i as u64,
                    anchor_frame: i as u64,
                    scenario: Scenario::Highway,
                },
            })
            .collect()
    }

    #[test]
    fn split_counts_and_determinism() {
        let clips = labelled(100, Action::FullBraking);
        let s = split_dataset(clips.clone(), SplitRatios::default(), 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 10, 20));
        let again = split_dataset(clips.clone(), SplitRatios::default(), 7).unwrap();
        assert_eq!(s, again);
        let mut anchors: Vec<u64> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .map(|c| c.meta.anchor)
            .collect();
        anchors.sort();
        assert_eq!(anchors, (0..100).collect::<Vec<u64>>());

        assert_eq!(SplitRatios::default().counts(58721), (41105, 5872, 11744));
        assert!(split_dataset(vec![], SplitRatios::default(), 1).unwrap().is_empty());
        let bad = SplitRatios {
            train: 0.7,
            val: 0.2,
            test: 0.2,
        };
        assert!(split_dataset(vec![], bad, 1).is_err());
    }

    #[test]
    fn session_split_keeps_sessions_whole() {
        let s = split_dataset_by_session(labelled(140, Action::FullBraking), SplitRatios::default(), 3)
            .unwrap();
        let sessions = |v: &[Clip]| v.iter().map(|c| c.meta.session.clone()).collect::<HashSet<_>>();
        assert!(sessions(&s.train).is_disjoint(&sessions(&s.test)));
        assert!(sessions(&s.train).is_disjoint(&sessions(&s.val)));
        assert_eq!(s.len(), 140);
    }

    #[test]
    fn session_split_does_not_starve_test_with_few_sessions() {
        let mut clips = labelled(60, Action::FullBraking);
        for (i, c) in clips.iter_mut().enumerate() {
            c.meta.session = format!("s{}", i / 10);
        }
        let s = split_dataset_by_session(clips, SplitRatios::default(), 5).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (40, 10, 10));

        let mut clips = labelled(80, Action::FullBraking);
        for (i, c) in clips.iter_mut().enumerate() {
            c.meta.session = format!("s{}", i / 16);
        }
        let s = split_dataset_by_session(clips, SplitRatios::default(), 5).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (48, 16, 16));
    }

    #[test]
    fn oversample_balances_to_majority() {
        let mut train = labelled(10, Action::FullBraking);
        train.extend(labelled(10, Action::SlightBraking));
        train.extend(labelled(5, Action::SlightAcceleration));
        train.extend(labelled(5, Action::FullAcceleration));
        let out = oversample(train.clone(), 1);
        assert_eq!(class_histogram(&out), [10, 10, 10, 10]);
        assert_eq!(&out[..30], &train[..]);

        let balanced = oversample(out.clone(), 2);
        assert_eq!(balanced.len(), out.len());

        let mut missing = labelled(4, Action::FullBraking);
        missing.extend(labelled(1, Action::SlightBraking));
        assert_eq!(class_histogram(&oversample(missing, 3)), [4, 4, 0, 0]);
    }
}
