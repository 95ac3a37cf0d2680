//! Occupancy-grid placement of vehicle embeddings and convolutional pooling
//! into the social context feature.
//!
//! The grid is grid_rows x grid_cols cells centered on the target: one lane
//! per column, `cell_length_m` (15 ft) of longitudinal extent per row. Rows
//! grow in the direction of travel, so the cell ahead of the target is one
//! row up.

use rand::Rng;

use crate::autodiff::{ops, Tape, Tensor};
use crate::config::RunConfig;
use crate::encoder::TrajectoryEmbedding;
use crate::error::{Error, Result};

/// A cell of the occupancy grid; row is longitudinal, column is lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridCell {
    row: usize,
    col: usize,
}

impl GridCell {
    pub fn new(row: usize, col: usize, config: &RunConfig) -> Result<Self> {
        if row >= config.grid_rows || col >= config.grid_cols {
            return Err(Error::argument(
                "grid_cell",
                format!(
                    "cell ({row}, {col}) outside {}x{} grid",
                    config.grid_rows, config.grid_cols
                ),
            ));
        }
        Ok(GridCell { row, col })
    }

    pub fn row(&self) -> usize {
        self.row
    }

    pub fn col(&self) -> usize {
        self.col
    }

    fn flat(&self, config: &RunConfig) -> usize {
        self.row * config.grid_cols + self.col
    }
}

/// Locate a neighbor in the target-centered grid, or `None` when it falls
/// outside.
///
/// The column is the lane offset from the target's lane (one column per
/// lane); the row is the longitudinal offset in `cell_length_m` cells,
/// rounded half away from zero. The target itself lands on the center cell.
pub fn assign_grid_cell(
    target_pos: (f64, f64),
    neighbor_pos: (f64, f64),
    target_lane: u32,
    neighbor_lane: u32,
    config: &RunConfig,
) -> Option<GridCell> {
    let (center_row, center_col) = config.center_cell();
    let lane_diff = neighbor_lane as i64 - target_lane as i64;
    let col = center_col as i64 + lane_diff;
    if col < 0 || col >= config.grid_cols as i64 {
        return None;
    }
    let d_long = neighbor_pos.1 - target_pos.1;
    let row_offset = (d_long / config.cell_length_m).round();
    let row = center_row as i64 + row_offset as i64;
    if row < 0 || row >= config.grid_rows as i64 {
        return None;
    }
    Some(GridCell {
        row: row as usize,
        col: col as usize,
    })
}

/// Embedding-channel grid tensor `[embed x grid_rows x grid_cols]`; cells
/// with no vehicle are exactly zero across all channels.
#[derive(Debug, Clone)]
pub struct SocialTensor {
    tensor: Tensor,
}

impl SocialTensor {
    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }
}

/// Counters accumulated while placing one scene.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PlacementStats {
    /// Vehicles dropped because another vehicle closer to the target already
    /// occupied their cell.
    pub cell_collisions: usize,
}

/// Resolve duplicate cells before placement: the vehicle with the smaller
/// absolute longitudinal distance to the target wins, earlier index winning
/// ties. Losing entries are set to `None` and counted.
pub fn resolve_cell_collisions(
    cells: &mut [Option<GridCell>],
    abs_longitudinal: &[f64],
) -> PlacementStats {
    let mut stats = PlacementStats::default();
    let mut groups: std::collections::BTreeMap<(usize, usize), Vec<usize>> =
        std::collections::BTreeMap::new();
    for (i, cell) in cells.iter().enumerate() {
        if let Some(c) = cell {
            groups.entry((c.row, c.col)).or_default().push(i);
        }
    }
    for members in groups.values() {
        if members.len() < 2 {
            continue;
        }
        let winner = *members
            .iter()
            .min_by(|&&a, &&b| {
                abs_longitudinal[a]
                    .total_cmp(&abs_longitudinal[b])
                    .then(a.cmp(&b))
            })
            .expect("non-empty group");
        for &m in members {
            if m != winner {
                cells[m] = None;
                stats.cell_collisions += 1;
            }
        }
    }
    stats
}

/// Place embedding matrix rows into the grid. `cells[k]` locates row `k`;
/// `None` entries are dropped. On a cell collision the vehicle with the
/// smaller `abs_longitudinal` wins and the event is counted.
pub fn build_social_tensor_from_matrix(
    tape: Option<&mut Tape>,
    embeddings: &Tensor,
    cells: &[Option<GridCell>],
    abs_longitudinal: &[f64],
    config: &RunConfig,
) -> Result<(SocialTensor, PlacementStats)> {
    if embeddings.rank() != 2 || embeddings.shape()[0] != cells.len() {
        return Err(Error::shape(
            "build_social_tensor",
            format!(
                "embeddings {:?} do not match {} cells",
                embeddings.shape(),
                cells.len()
            ),
        ));
    }
    if abs_longitudinal.len() != cells.len() {
        return Err(Error::argument(
            "build_social_tensor",
            format!(
                "{} longitudinal distances for {} cells",
                abs_longitudinal.len(),
                cells.len()
            ),
        ));
    }
    let mut resolved = cells.to_vec();
    let stats = resolve_cell_collisions(&mut resolved, abs_longitudinal);
    let slots: Vec<(usize, usize)> = resolved
        .iter()
        .enumerate()
        .filter_map(|(row, cell)| cell.map(|c| (row, c.flat(config))))
        .collect();
    let tensor = ops::scatter_rows_to_grid(tape, embeddings, &slots, config.grid_rows, config.grid_cols)?;
    Ok((SocialTensor { tensor }, stats))
}

/// List-of-embeddings form of [`build_social_tensor_from_matrix`].
pub fn build_social_tensor(
    mut tape: Option<&mut Tape>,
    embeddings: &[TrajectoryEmbedding],
    cells: &[Option<GridCell>],
    abs_longitudinal: &[f64],
    config: &RunConfig,
) -> Result<(SocialTensor, PlacementStats)> {
    if embeddings.is_empty() {
        return Err(Error::argument("build_social_tensor", "no embeddings"));
    }
    let vectors: Vec<&Tensor> = embeddings.iter().map(|e| e.vector()).collect();
    let matrix = ops::stack_rows(tape.as_deref_mut(), &vectors)?;
    build_social_tensor_from_matrix(tape, &matrix, cells, abs_longitudinal, config)
}

/// Weights of the two-convolution pooling stack.
#[derive(Debug, Clone)]
pub struct SocialConvWeights {
    /// `[c1 x embed x k1h x k1w]`
    pub conv1_kernels: Tensor,
    pub conv1_bias: Tensor,
    /// `[c2 x c1 x k2h x k2w]`
    pub conv2_kernels: Tensor,
    pub conv2_bias: Tensor,
}

impl SocialConvWeights {
    pub fn zeros(config: &RunConfig) -> Self {
        let (k1h, k1w) = config.social_conv1_kernel;
        let (k2h, k2w) = config.social_conv2_kernel;
        SocialConvWeights {
            conv1_kernels: Tensor::zeros(vec![config.social_conv1_channels, config.embed_dim, k1h, k1w]),
            conv1_bias: Tensor::zeros(vec![config.social_conv1_channels]),
            conv2_kernels: Tensor::zeros(vec![
                config.social_conv2_channels,
                config.social_conv1_channels,
                k2h,
                k2w,
            ]),
            conv2_bias: Tensor::zeros(vec![config.social_conv2_channels]),
        }
    }

    pub fn init(config: &RunConfig, rng: &mut impl Rng) -> Self {
        let (k1h, k1w) = config.social_conv1_kernel;
        let (k2h, k2w) = config.social_conv2_kernel;
        let b1 = 1.0 / ((config.embed_dim * k1h * k1w) as f64).sqrt();
        let b2 = 1.0 / ((config.social_conv1_channels * k2h * k2w) as f64).sqrt();
        SocialConvWeights {
            conv1_kernels: Tensor::uniform(
                vec![config.social_conv1_channels, config.embed_dim, k1h, k1w],
                -b1,
                b1,
                rng,
            ),
            conv1_bias: Tensor::uniform(vec![config.social_conv1_channels], -b1, b1, rng),
            conv2_kernels: Tensor::uniform(
                vec![config.social_conv2_channels, config.social_conv1_channels, k2h, k2w],
                -b2,
                b2,
                rng,
            ),
            conv2_bias: Tensor::uniform(vec![config.social_conv2_channels], -b2, b2, rng),
        }
    }
}

/// Pool a social tensor into the flat context feature: conv + ReLU, conv +
/// ReLU, max pool, flatten. With the default sizes the chain is
/// 64x13x3 -> 64x11x1 -> 16x9x1 -> 16x4x1 -> 64.
pub fn social_conv(
    mut tape: Option<&mut Tape>,
    social: &SocialTensor,
    weights: &SocialConvWeights,
    config: &RunConfig,
) -> Result<Tensor> {
    let c1 = ops::conv2d(tape.as_deref_mut(), social.tensor(), &weights.conv1_kernels, &weights.conv1_bias)?;
    let c1 = ops::relu(tape.as_deref_mut(), &c1)?;
    let c2 = ops::conv2d(tape.as_deref_mut(), &c1, &weights.conv2_kernels, &weights.conv2_bias)?;
    let c2 = ops::relu(tape.as_deref_mut(), &c2)?;
    let pooled = ops::maxpool2d(tape.as_deref_mut(), &c2, config.social_pool)?;
    let dim = pooled.numel();
    debug_assert_eq!(dim, config.social_feature_dim()?);
    ops::reshape(tape, &pooled, vec![dim])
}
