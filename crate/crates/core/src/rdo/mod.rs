//! Partition quadtree: block geometry, the leaf cost model and the RD search.

mod cost;
mod search;

pub use cost::{leaf_cost, CostModel};
pub use search::{
    encode_frame, full_search_nodes, rdo_search, tree_to_depthmap, trees_to_depthmap,
    FrameEncoding, FullSearch, SearchStats, Terminator,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest block edge (the superblock).
pub const MAX_BLOCK: usize = 64;
/// Smallest block edge.
pub const MIN_BLOCK: usize = 4;
/// Deepest square depth (4x4).
pub const MAX_DEPTH: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PartitionMode {
    None,
    Horz,
    Vert,
    Split4,
}

impl PartitionMode {
    /// Candidate order; earlier modes win cost ties.
    pub const ALL: [PartitionMode; 4] =
        [PartitionMode::None, PartitionMode::Horz, PartitionMode::Vert, PartitionMode::Split4];

    pub fn child_count(self) -> usize {
        match self {
            PartitionMode::None => 0,
            PartitionMode::Horz | PartitionMode::Vert => 2,
            PartitionMode::Split4 => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BlockRect {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        BlockRect { x, y, w, h }
    }

    pub const fn square(x: usize, y: usize, size: usize) -> Self {
        BlockRect { x, y, w: size, h: size }
    }

    pub fn is_square(&self) -> bool {
        self.w == self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    /// Power-of-two edges in `4..=64` whose aspect ratio is at most 2.
    pub fn is_legal(&self) -> bool {
        let edge_ok = |e: usize| e.is_power_of_two() && (MIN_BLOCK..=MAX_BLOCK).contains(&e);
        edge_ok(self.w) && edge_ok(self.h) && self.w.max(self.h) <= 2 * self.w.min(self.h)
    }

    /// Whether `mode` may be applied to this block.
    pub fn allows(&self, mode: PartitionMode) -> bool {
        match mode {
            PartitionMode::None => true,
            _ => self.is_square() && self.w >= 2 * MIN_BLOCK,
        }
    }

    /// Sub-blocks produced by `mode`, in coding order.
    pub fn children(&self, mode: PartitionMode) -> Vec<BlockRect> {
        let BlockRect { x, y, w, h } = *self;
        match mode {
            PartitionMode::None => Vec::new(),
            PartitionMode::Horz => {
                vec![BlockRect::new(x, y, w, h / 2), BlockRect::new(x, y + h / 2, w, h / 2)]
            }
            PartitionMode::Vert => {
                vec![BlockRect::new(x, y, w / 2, h), BlockRect::new(x + w / 2, y, w / 2, h)]
            }
            PartitionMode::Split4 => {
                let (hw, hh) = (w / 2, h / 2);
                vec![
                    BlockRect::new(x, y, hw, hh),
                    BlockRect::new(x + hw, y, hw, hh),
                    BlockRect::new(x, y + hh, hw, hh),
                    BlockRect::new(x + hw, y + hh, hw, hh),
                ]
            }
        }
    }

    pub fn contains(&self, other: &BlockRect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.x + other.w <= self.x + self.w
            && other.y + other.h <= self.y + self.h
    }
}

/// Depth of a block, measured on its longer edge: `min(log2(64/w), log2(64/h))`.
pub fn block_depth(rect: &BlockRect) -> u8 {
    let d = |e: usize| (MAX_BLOCK / e).trailing_zeros() as u8;
    d(rect.w).min(d(rect.h))
}

/// HEVC-style lambda: `0.85 * 2^((qp - 12) / 3)`.
pub fn lambda_for_qp(qp: u8) -> f64 {
    0.85 * ((qp as f64 - 12.0) / 3.0).exp2()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdoConfig {
    pub qp: u8,
    pub lambda: f64,
    /// Rate charged for signaling a HORZ, VERT or SPLIT4 decision.
    pub split_bits: f64,
    /// Rate charged per leaf block.
    pub header_bits: f64,
}

impl RdoConfig {
    pub const DEFAULT_SPLIT_BITS: f64 = 16.0;
    pub const DEFAULT_HEADER_BITS: f64 = 8.0;

    pub fn for_qp(qp: u8) -> Self {
        RdoConfig {
            qp,
            lambda: lambda_for_qp(qp),
            split_bits: Self::DEFAULT_SPLIT_BITS,
            header_bits: Self::DEFAULT_HEADER_BITS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.lambda) || !positive(self.split_bits) || !positive(self.header_bits) {
            return Err(Error::Config(format!(
                "lambda, split_bits and header_bits must be positive (got {}, {}, {})",
                self.lambda, self.split_bits, self.header_bits
            )));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn split_cost(&self) -> f64 {
        self.lambda * self.split_bits
    }

    #[inline]
    pub(crate) fn leaf_rate_cost(&self) -> f64 {
        self.lambda * self.header_bits
    }
}

/// Result of the RD search over one square block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionTree {
    pub rect: BlockRect,
    pub mode: PartitionMode,
    pub cost: f64,
    pub children: Vec<PartitionTree>,
}

impl PartitionTree {
    pub fn leaf(rect: BlockRect, cost: f64) -> Self {
        PartitionTree { rect, mode: PartitionMode::None, cost, children: Vec::new() }
    }

    pub fn depth(&self) -> u8 {
        block_depth(&self.rect)
    }

    /// Visits every node, parents before children.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a PartitionTree)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    pub fn leaves(&self) -> Vec<&PartitionTree> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            if n.children.is_empty() {
                out.push(n);
            }
        });
        out
    }

    /// Cost of this tree recomputed from the leaves, using the search's
    /// accumulation order.
    pub fn recompute_cost(&self, model: &CostModel, cfg: &RdoConfig) -> f64 {
        match self.mode {
            PartitionMode::None => model.leaf_cost(&self.rect, cfg),
            _ => {
                let sum = self.children.iter().fold(0.0, |acc, c| acc + c.recompute_cost(model, cfg));
                sum + cfg.split_cost()
            }
        }
    }

    /// Structural invariants: legal modes, child counts, exact tiling.
    pub fn check_structure(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !self.rect.allows(self.mode) {
            return bad(format!("{:?} not allowed on {:?}", self.mode, self.rect));
        }
        if self.children.len() != self.mode.child_count() {
            return bad(format!("{:?} node with {} children", self.mode, self.children.len()));
        }
        let expected = self.rect.children(self.mode);
        for (child, rect) in self.children.iter().zip(&expected) {
            if child.rect != *rect {
                return bad(format!("child {:?} does not tile {:?}", child.rect, self.rect));
            }
            if self.mode != PartitionMode::Split4 && child.mode != PartitionMode::None {
                return bad("2-way split children must be leaves".into());
            }
            child.check_structure()?;
        }
        Ok(())
    }
}
