//! Data ingestion and generation: NGSIM-format CSV parsing, 5 Hz
//! resampling, 8-second segmentation into samples, train/val/test splitting,
//! a kinematic scenario generator, and the on-disk dataset cache.

mod cache;
mod ngsim;
mod synth;

pub(crate) mod bytes;

pub use cache::{load_dataset, save_dataset, CacheManifest, DatasetStats};
pub use ngsim::{parse_trajectory_csv, write_trajectory_csv};
pub use synth::{generate_synthetic, Scenario, SyntheticDataset};

use crate::config::RunConfig;
use crate::encoder::HistorySequence;
use crate::error::{Error, Result};
use crate::social::{assign_grid_cell, resolve_cell_collisions, GridCell};

/// One row of an NGSIM-format trajectory file, already converted to meters.
/// `local_x` is lateral (across lanes), `local_y` longitudinal (direction of
/// travel); frames tick at `source_rate_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRecord {
    pub vehicle_id: u64,
    pub frame_id: i64,
    pub local_x: f64,
    pub local_y: f64,
    pub lane_id: u32,
}

/// A contiguous resampled trajectory for one vehicle. The source frame id of
/// index `k` is `start_frame + k * frame_step`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub vehicle_id: u64,
    pub source: String,
    pub start_frame: i64,
    pub frame_step: i64,
    pub frames: Vec<(f64, f64)>,
    pub lane_ids: Vec<u32>,
}

/// A neighbor's observed history and its cell in the target-centered grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub history: HistorySequence,
    pub cell: GridCell,
    /// Absolute longitudinal distance to the target at the anchor frame,
    /// meters; used as the deterministic tie-break during placement.
    pub abs_longitudinal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMeta {
    pub source: String,
    pub vehicle_id: u64,
    pub anchor_frame: i64,
}

/// One training or evaluation instance: the target's history, its neighbors
/// with resolved grid cells, and the ground-truth future relative to the
/// target's last observed position.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub target_history: HistorySequence,
    pub neighbors: Vec<Neighbor>,
    pub future: Vec<(f64, f64)>,
    pub meta: SampleMeta,
}

impl Sample {
    /// Position the future frames are relative to.
    pub fn anchor_position(&self) -> (f64, f64) {
        self.target_history.last_position()
    }

    pub fn validate(&self, config: &RunConfig) -> Result<()> {
        if self.target_history.len() != config.history_frames {
            return Err(Error::Invariant(format!(
                "sample history has {} frames, config says {}",
                self.target_history.len(),
                config.history_frames
            )));
        }
        if self.future.len() != config.future_frames {
            return Err(Error::Invariant(format!(
                "sample future has {} frames, config says {}",
                self.future.len(),
                config.future_frames
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for n in &self.neighbors {
            if n.history.len() != config.history_frames {
                return Err(Error::Invariant("neighbor history length mismatch".into()));
            }
            if !seen.insert((n.cell.row(), n.cell.col())) {
                return Err(Error::Invariant(format!(
                    "duplicate neighbor cell ({}, {})",
                    n.cell.row(),
                    n.cell.col()
                )));
            }
        }
        let center = config.center_cell();
        if seen.contains(&center) {
            return Err(Error::Invariant("neighbor occupies the target's center cell".into()));
        }
        Ok(())
    }
}

/// Disjoint train/validation/test sample lists, split by target vehicle so
/// no vehicle's samples leak across parts.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn part(&self, name: &str) -> Option<&[Sample]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Counters from one segmentation run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SegmentStats {
    pub samples: usize,
    /// Neighbors dropped because a nearer vehicle occupied their grid cell
    /// (including the target's own center cell).
    pub cell_collisions: usize,
    /// Neighbors present at an anchor but lacking a full history.
    pub short_history_neighbors: usize,
    /// Neighbors outside the grid at the anchor.
    pub out_of_grid_neighbors: usize,
}

/// Decimate one vehicle's 10 Hz records to the sample rate, splitting at
/// frame gaps. Records must be sorted by frame and belong to one vehicle;
/// every `decimation`-th frame is kept starting from the first frame of each
/// contiguous run.
pub fn resample_5hz(records: &[VehicleRecord], source: &str, config: &RunConfig) -> Vec<Trajectory> {
    let decimation = config.decimation() as i64;
    let mut out = Vec::new();
    let mut run: Vec<&VehicleRecord> = Vec::new();
    let flush = |run: &mut Vec<&VehicleRecord>, out: &mut Vec<Trajectory>| {
        if run.is_empty() {
            return;
        }
        let kept: Vec<&VehicleRecord> = run.iter().step_by(decimation as usize).copied().collect();
        out.push(Trajectory {
            vehicle_id: run[0].vehicle_id,
            source: source.to_string(),
            start_frame: kept[0].frame_id,
            frame_step: decimation,
            frames: kept.iter().map(|r| (r.local_x, r.local_y)).collect(),
            lane_ids: kept.iter().map(|r| r.lane_id).collect(),
        });
        run.clear();
    };
    for r in records {
        if let Some(last) = run.last() {
            debug_assert_eq!(last.vehicle_id, r.vehicle_id, "records must be one vehicle");
            if r.frame_id - last.frame_id != 1 {
                flush(&mut run, &mut out);
            }
        }
        run.push(r);
    }
    flush(&mut run, &mut out);
    out
}

/// Group records by vehicle (input must be sorted by vehicle then frame) and
/// resample each.
pub fn resample_all(records: &[VehicleRecord], source: &str, config: &RunConfig) -> Vec<Trajectory> {
    let mut out = Vec::new();
    let mut begin = 0;
    for i in 1..=records.len() {
        if i == records.len() || records[i].vehicle_id != records[begin].vehicle_id {
            out.extend(resample_5hz(&records[begin..i], source, config));
            begin = i;
        }
    }
    out
}

/// Cut resampled trajectories into overlapping samples.
///
/// Anchors slide every `anchor_stride_frames`; a sample exists wherever the
/// target has a full history before (and including) the anchor and a full
/// future after it. Neighbors are vehicles with a resampled frame at exactly
/// the anchor frame id and a full history ending there; those outside the
/// grid or displaced by a nearer vehicle are dropped and counted.
pub fn segment_samples(trajectories: &[Trajectory], config: &RunConfig) -> (Vec<Sample>, SegmentStats) {
    let mut stats = SegmentStats::default();
    // Scene index: source frame id -> (trajectory index, frame index).
    let mut index: std::collections::HashMap<i64, Vec<(usize, usize)>> =
        std::collections::HashMap::new();
    for (ti, t) in trajectories.iter().enumerate() {
        for fi in 0..t.frames.len() {
            let frame = t.start_frame + fi as i64 * t.frame_step;
            index.entry(frame).or_default().push((ti, fi));
        }
    }

    let f_hist = config.history_frames;
    let f_fut = config.future_frames;
    let mut samples = Vec::new();
    for target in trajectories.iter() {
        if target.frames.len() < f_hist + f_fut {
            continue;
        }
        let mut idx = f_hist - 1;
        while idx + f_fut < target.frames.len() {
            let anchor_frame = target.start_frame + idx as i64 * target.frame_step;
            let anchor_pos = target.frames[idx];
            let target_lane = target.lane_ids[idx];
            let history =
                HistorySequence::new(target.frames[idx + 1 - f_hist..=idx].to_vec()).expect("finite");
            let future: Vec<(f64, f64)> = target.frames[idx + 1..=idx + f_fut]
                .iter()
                .map(|(x, y)| (x - anchor_pos.0, y - anchor_pos.1))
                .collect();

            let mut histories = Vec::new();
            let mut cells = Vec::new();
            let mut dists = Vec::new();
            if let Some(present) = index.get(&anchor_frame) {
                for &(ni, fi) in present {
                    if trajectories[ni].vehicle_id == target.vehicle_id {
                        continue;
                    }
                    let n = &trajectories[ni];
                    if fi + 1 < f_hist {
                        stats.short_history_neighbors += 1;
                        continue;
                    }
                    let n_pos = n.frames[fi];
                    let cell = match assign_grid_cell(anchor_pos, n_pos, target_lane, n.lane_ids[fi], config)
                    {
                        Some(c) => c,
                        None => {
                            stats.out_of_grid_neighbors += 1;
                            continue;
                        }
                    };
                    // The target owns the center cell unconditionally.
                    if (cell.row(), cell.col()) == config.center_cell() {
                        stats.cell_collisions += 1;
                        continue;
                    }
                    histories.push(
                        HistorySequence::new(n.frames[fi + 1 - f_hist..=fi].to_vec()).expect("finite"),
                    );
                    cells.push(Some(cell));
                    dists.push((n_pos.1 - anchor_pos.1).abs());
                }
            }
            let placement = resolve_cell_collisions(&mut cells, &dists);
            stats.cell_collisions += placement.cell_collisions;
            let neighbors: Vec<Neighbor> = histories
                .into_iter()
                .zip(cells.iter())
                .zip(dists.iter())
                .filter_map(|((history, cell), &d)| {
                    cell.map(|cell| Neighbor {
                        history,
                        cell,
                        abs_longitudinal: d,
                    })
                })
                .collect();

            samples.push(Sample {
                target_history: history,
                neighbors,
                future,
                meta: SampleMeta {
                    source: target.source.clone(),
                    vehicle_id: target.vehicle_id,
                    anchor_frame,
                },
            });
            idx += config.anchor_stride_frames;
        }
    }
    stats.samples = samples.len();
    (samples, stats)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Assign samples to train/val/test by a seeded hash of the target vehicle
/// id, so every sample of one vehicle lands in the same part.
pub fn split_dataset(
    samples: Vec<Sample>,
    seed: u64,
    ratios: (f64, f64, f64),
) -> Result<DatasetSplit> {
    let sum = ratios.0 + ratios.1 + ratios.2;
    if (sum - 1.0).abs() > 1e-9 || ratios.0 < 0.0 || ratios.1 < 0.0 || ratios.2 < 0.0 {
        return Err(Error::argument(
            "split_dataset",
            format!("ratios {ratios:?} must be non-negative and sum to 1"),
        ));
    }
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for sample in samples {
        let h = splitmix64(splitmix64(seed) ^ sample.meta.vehicle_id);
        let u = h as f64 / (u64::MAX as f64 + 1.0);
        if u < ratios.0 {
            split.train.push(sample);
        } else if u < ratios.0 + ratios.1 {
            split.val.push(sample);
        } else {
            split.test.push(sample);
        }
    }
    Ok(split)
}
