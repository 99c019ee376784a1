use std::fmt;

use serde::Serialize;

use crate::layout::{LayoutChoice, LANES};
use crate::shape::TensorShape;

/// Largest width or height of one texture.
pub const MAX_EXTENT: usize = 16384;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TextureError {
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("tensor {shape} needs a {width}x{height} texture, limit is {max}")]
    TooLarge {
        shape: TensorShape,
        width: usize,
        height: usize,
        max: usize,
    },
    #[error("index {index:?} outside {shape}")]
    OutOfRange { index: Vec<usize>, shape: TensorShape },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TexelCoord {
    pub w: usize,
    pub h: usize,
    pub lane: usize,
}

impl fmt::Display for TexelCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.w, self.h, self.lane)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    W,
    H,
    Lane,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
struct HPart {
    dim: usize,
    extent: usize,
    /// The lane dim contributes its lane-group index.
    groups: bool,
}

/// How an oversized logical grid is folded into the extent limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
enum Fold {
    None,
    /// Long rows continue on the next `bands - 1` rows.
    WrapRows { bands: usize },
    /// `factor` consecutive rows sit side by side.
    PackRows { factor: usize },
}

/// Placement of a tensor in a width x height texture of 4-lane texels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TextureLayout {
    pub shape: TensorShape,
    pub lane_dim: usize,
    pub w_dim: usize,
    pub width: usize,
    pub height: usize,
    h_parts: Vec<HPart>,
    grid_width: usize,
    grid_height: usize,
    fold: Fold,
}

/// Places `shape` in texture memory following `layout`.
///
/// The blocked dim (or the unit-stride dim when nothing is blocked) fills
/// the lanes, the unit-stride dim runs along W and every other dim is
/// folded row-major into H in `dim_order` order.
pub fn map_to_texture(shape: &TensorShape, layout: &LayoutChoice) -> Result<TextureLayout, TextureError> {
    layout.check(shape.rank()).map_err(TextureError::Layout)?;
    let w_dim = *layout.dim_order.last().expect("rank >= 1");
    let lane_dim = layout.blocked.unwrap_or(w_dim);
    let groups = shape.dim(lane_dim).div_ceil(LANES);
    let grid_width = if w_dim == lane_dim { groups } else { shape.dim(w_dim) };
    let h_parts: Vec<HPart> = layout
        .dim_order
        .iter()
        .filter(|&&d| d != w_dim)
        .map(|&d| HPart {
            dim: d,
            extent: if d == lane_dim { groups } else { shape.dim(d) },
            groups: d == lane_dim,
        })
        .collect();
    let grid_height: usize = h_parts.iter().map(|p| p.extent).product();
    let (fold, width, height) = if grid_width > MAX_EXTENT {
        let bands = grid_width.div_ceil(MAX_EXTENT);
        (Fold::WrapRows { bands }, MAX_EXTENT, grid_height * bands)
    } else if grid_height > MAX_EXTENT {
        let factor = grid_height.div_ceil(MAX_EXTENT);
        (Fold::PackRows { factor }, grid_width * factor, grid_height.div_ceil(factor))
    } else {
        (Fold::None, grid_width, grid_height)
    };
    if width > MAX_EXTENT || height > MAX_EXTENT {
        return Err(TextureError::TooLarge {
            shape: shape.clone(),
            width,
            height,
            max: MAX_EXTENT,
        });
    }
    Ok(TextureLayout {
        shape: shape.clone(),
        lane_dim,
        w_dim,
        width,
        height,
        h_parts,
        grid_width,
        grid_height,
        fold,
    })
}

impl TextureLayout {
    pub fn texels(&self) -> usize {
        self.width * self.height
    }

    /// Axis each logical dim is addressed along; the lane dim also spills
    /// into W or H in groups of four.
    pub fn axis_map(&self) -> Vec<Axis> {
        (0..self.shape.rank())
            .map(|d| {
                if d == self.lane_dim {
                    Axis::Lane
                } else if d == self.w_dim {
                    Axis::W
                } else {
                    Axis::H
                }
            })
            .collect()
    }

    pub fn address(&self, index: &[usize]) -> Result<TexelCoord, TextureError> {
        if !self.shape.contains(index) {
            return Err(TextureError::OutOfRange {
                index: index.to_vec(),
                shape: self.shape.clone(),
            });
        }
        Ok(self.address_unchecked(index))
    }

    pub(crate) fn address_unchecked(&self, index: &[usize]) -> TexelCoord {
        let lane = index[self.lane_dim] % LANES;
        let col = if self.w_dim == self.lane_dim {
            index[self.lane_dim] / LANES
        } else {
            index[self.w_dim]
        };
        let mut row = 0;
        for p in &self.h_parts {
            let v = if p.groups { index[p.dim] / LANES } else { index[p.dim] };
            row = row * p.extent + v;
        }
        let (w, h) = match self.fold {
            Fold::None => (col, row),
            Fold::WrapRows { bands } => (col % MAX_EXTENT, row * bands + col / MAX_EXTENT),
            Fold::PackRows { factor } => ((row % factor) * self.grid_width + col, row / factor),
        };
        TexelCoord { w, h, lane }
    }

    /// Logical index stored at `coord`, `None` for padding.
    pub fn unmap(&self, coord: TexelCoord) -> Option<Vec<usize>> {
        if coord.w >= self.width || coord.h >= self.height || coord.lane >= LANES {
            return None;
        }
        let (col, row) = match self.fold {
            Fold::None => (coord.w, coord.h),
            Fold::WrapRows { bands } => (coord.w + (coord.h % bands) * MAX_EXTENT, coord.h / bands),
            Fold::PackRows { factor } => (coord.w % self.grid_width, coord.h * factor + coord.w / self.grid_width),
        };
        if col >= self.grid_width || row >= self.grid_height {
            return None;
        }
        let mut index = vec![0; self.shape.rank()];
        let mut rest = row;
        for p in self.h_parts.iter().rev() {
            let v = rest % p.extent;
            rest /= p.extent;
            index[p.dim] = if p.groups { v * LANES + coord.lane } else { v };
        }
        if self.w_dim == self.lane_dim {
            index[self.lane_dim] = col * LANES + coord.lane;
        } else {
            index[self.w_dim] = col;
        }
        self.shape.contains(&index).then_some(index)
    }

    /// Every stored logical index in texel raster order (row, column, lane).
    pub fn raster(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.height).flat_map(move |h| {
            (0..self.width).flat_map(move |w| (0..LANES).filter_map(move |lane| self.unmap(TexelCoord { w, h, lane })))
        })
    }
}
