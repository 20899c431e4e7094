use rayon::prelude::*;

use super::{block_depth, BlockRect, CostModel, PartitionMode, PartitionTree, RdoConfig, MAX_BLOCK};
use crate::frame_io::FrameBuffer;
use crate::neighborhood::DepthMap;
use crate::{Error, Result};

/// Decides, per square block, whether the 4-way split candidate is skipped.
/// NONE, HORZ and VERT are always evaluated.
pub trait Terminator: Sync {
    fn should_terminate(&self, rect: &BlockRect) -> bool;
}

/// Never terminates: the full RD search.
#[derive(Debug, Clone, Copy, Default)]
pub struct FullSearch;

impl Terminator for FullSearch {
    fn should_terminate(&self, _: &BlockRect) -> bool {
        false
    }
}

/// Per-task search accounting, merged after parallel work.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SearchStats {
    /// `(block, mode)` candidates scored.
    pub nodes: u64,
    /// Terminations that fired, by depth of the terminated block.
    pub fired: [u64; 5],
    /// Candidates a full search would have scored inside the skipped splits.
    pub pruned_nodes: u64,
}

impl SearchStats {
    pub fn merge(&mut self, other: &SearchStats) {
        self.nodes += other.nodes;
        self.pruned_nodes += other.pruned_nodes;
        for (a, b) in self.fired.iter_mut().zip(other.fired) {
            *a += b;
        }
    }
}

/// Candidates scored by a full search rooted at a square of edge `size`.
pub fn full_search_nodes(size: usize) -> u64 {
    if size <= super::MIN_BLOCK {
        1
    } else {
        4 + 4 * full_search_nodes(size / 2)
    }
}

/// Minimum-cost partition tree for the square `rect`.
///
/// Candidates are scored in the order NONE, HORZ, VERT, SPLIT4 and a later
/// candidate replaces the incumbent only if strictly cheaper.
pub fn rdo_search(
    model: &CostModel,
    rect: BlockRect,
    cfg: &RdoConfig,
    terminator: &dyn Terminator,
    stats: &mut SearchStats,
) -> PartitionTree {
    debug_assert!(rect.is_square() && rect.is_legal());
    stats.nodes += 1;
    let mut best = PartitionTree::leaf(rect, model.leaf_cost(&rect, cfg));
    if !rect.allows(PartitionMode::Horz) {
        return best;
    }

    for mode in [PartitionMode::Horz, PartitionMode::Vert] {
        stats.nodes += 1;
        let children: Vec<_> = rect
            .children(mode)
            .into_iter()
            .map(|r| PartitionTree::leaf(r, model.leaf_cost(&r, cfg)))
            .collect();
        let cost = children.iter().fold(0.0, |acc, c| acc + c.cost) + cfg.split_cost();
        if cost < best.cost {
            best = PartitionTree { rect, mode, cost, children };
        }
    }

    if terminator.should_terminate(&rect) {
        stats.fired[block_depth(&rect) as usize] += 1;
        stats.pruned_nodes += full_search_nodes(rect.w) - 3;
        return best;
    }

    stats.nodes += 1;
    let children: Vec<_> = rect
        .children(PartitionMode::Split4)
        .into_iter()
        .map(|r| rdo_search(model, r, cfg, terminator, stats))
        .collect();
    let cost = children.iter().fold(0.0, |acc, c| acc + c.cost) + cfg.split_cost();
    if cost < best.cost {
        best = PartitionTree { rect, mode: PartitionMode::Split4, cost, children };
    }
    best
}

/// All superblock trees of one frame, in raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEncoding {
    pub trees: Vec<PartitionTree>,
    pub stats: SearchStats,
    pub cost: f64,
}

impl FrameEncoding {
    pub fn depthmap(&self, width: usize, height: usize) -> DepthMap {
        trees_to_depthmap(width, height, &self.trees)
    }
}

/// Searches every superblock of a padded frame. Superblocks are independent
/// and processed in parallel; the result does not depend on scheduling.
pub fn encode_frame(frame: &FrameBuffer, cfg: &RdoConfig, terminator: &dyn Terminator) -> Result<FrameEncoding> {
    cfg.validate()?;
    if !frame.width().is_multiple_of(MAX_BLOCK) || !frame.height().is_multiple_of(MAX_BLOCK) {
        return Err(Error::InvalidArgument(format!(
            "frame {} is not padded to whole superblocks",
            frame.dims()
        )));
    }
    let model = CostModel::new(frame);
    let cols = frame.width() / MAX_BLOCK;
    let rows = frame.height() / MAX_BLOCK;
    let results: Vec<(PartitionTree, SearchStats)> = (0..rows * cols)
        .into_par_iter()
        .map(|i| {
            let rect = BlockRect::square((i % cols) * MAX_BLOCK, (i / cols) * MAX_BLOCK, MAX_BLOCK);
            let mut stats = SearchStats::default();
            let tree = rdo_search(&model, rect, cfg, terminator, &mut stats);
            (tree, stats)
        })
        .collect();

    let mut stats = SearchStats::default();
    let mut cost = 0.0;
    let mut trees = Vec::with_capacity(results.len());
    for (tree, s) in results {
        stats.merge(&s);
        cost += tree.cost;
        trees.push(tree);
    }
    Ok(FrameEncoding { trees, stats, cost })
}

/// Rasterizes the leaf depths of `tree` into `map`. Two-way split leaves carry
/// the depth of their parent square.
pub fn tree_to_depthmap(tree: &PartitionTree, map: &mut DepthMap) {
    for leaf in tree.leaves() {
        map.fill_rect(&leaf.rect, block_depth(&leaf.rect));
    }
}

pub fn trees_to_depthmap(width: usize, height: usize, trees: &[PartitionTree]) -> DepthMap {
    let mut map = DepthMap::zeros(width, height);
    for t in trees {
        tree_to_depthmap(t, &mut map);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn search(frame: &FrameBuffer, rect: BlockRect, cfg: &RdoConfig) -> (PartitionTree, SearchStats) {
        let mut stats = SearchStats::default();
        let tree = rdo_search(&CostModel::new(frame), rect, cfg, &FullSearch, &mut stats);
        (tree, stats)
    }

    struct NeverSplit;
    impl Terminator for NeverSplit {
        fn should_terminate(&self, _: &BlockRect) -> bool {
            true
        }
    }

    struct NoSplitAtDepth(u8);
    impl Terminator for NoSplitAtDepth {
        fn should_terminate(&self, r: &BlockRect) -> bool {
            block_depth(r) == self.0
        }
    }

    #[test]
    fn node_counts() {
        assert_eq!(full_search_nodes(4), 1);
        assert_eq!(full_search_nodes(8), 8);
        assert_eq!(full_search_nodes(16), 36);
        assert_eq!(full_search_nodes(64), 596);
    }

    #[test]
    fn flat_superblock_stays_whole() {
        let f = FrameBuffer::filled(64, 64, 90);
        let cfg = RdoConfig::for_qp(27);
        let (t, s) = search(&f, BlockRect::square(0, 0, 64), &cfg);
        assert_eq!(t.mode, PartitionMode::None);
        assert_eq!(t.cost, cfg.lambda * cfg.header_bits);
        assert_eq!(s.nodes, full_search_nodes(64));
    }

    #[test]
    fn half_and_half_picks_vert() {
        let f = FrameBuffer::from_fn(64, 64, |x, _| if x < 32 { 0 } else { 255 });
        let (t, _) = search(&f, BlockRect::square(0, 0, 64), &RdoConfig::for_qp(27));
        assert_eq!(t.mode, PartitionMode::Vert);
        let g = FrameBuffer::from_fn(64, 64, |_, y| if y < 32 { 10 } else { 200 });
        let (t, _) = search(&g, BlockRect::square(0, 0, 64), &RdoConfig::for_qp(27));
        assert_eq!(t.mode, PartitionMode::Horz);
    }

    #[test]
    fn never_split_terminator() {
        let f = FrameBuffer::from_fn(64, 64, |x, y| ((x * 97) ^ (y * 53)) as u8);
        let model = CostModel::new(&f);
        let cfg = RdoConfig::for_qp(22);
        let mut stats = SearchStats::default();
        let t = rdo_search(&model, BlockRect::square(0, 0, 64), &cfg, &NeverSplit, &mut stats);
        assert_ne!(t.mode, PartitionMode::Split4);
        assert_eq!(stats.nodes, 3);
        assert_eq!(stats.fired[0], 1);
        assert_eq!(stats.nodes + stats.pruned_nodes, full_search_nodes(64));
    }

    #[test]
    fn depth_terminator_leaves_no_split_there() {
        let f = FrameBuffer::from_fn(64, 64, |x, y| ((x * 97) ^ (y * 53)) as u8);
        let model = CostModel::new(&f);
        let cfg = RdoConfig::for_qp(22);
        let mut full = SearchStats::default();
        let reference = rdo_search(&model, BlockRect::square(0, 0, 64), &cfg, &FullSearch, &mut full);
        let mut stats = SearchStats::default();
        let t = rdo_search(&model, BlockRect::square(0, 0, 64), &cfg, &NoSplitAtDepth(2), &mut stats);
        t.walk(&mut |n| assert!(!(n.depth() == 2 && n.rect.is_square() && n.mode == PartitionMode::Split4)));
        assert!(t.cost >= reference.cost);
        assert_eq!(full.nodes - stats.nodes, stats.pruned_nodes);
        t.check_structure().unwrap();
        assert_eq!(t.recompute_cost(&model, &cfg), t.cost);
    }

    #[test]
    fn depthmap_conventions() {
        let cfg = RdoConfig::for_qp(27);
        let mut map = DepthMap::zeros(64, 64);
        let whole = PartitionTree::leaf(BlockRect::square(0, 0, 64), 0.0);
        tree_to_depthmap(&whole, &mut map);
        assert!(map.depths().iter().all(|&d| d == 0));

        let root = BlockRect::square(0, 0, 64);
        let split = PartitionTree {
            rect: root,
            mode: PartitionMode::Split4,
            cost: 0.0,
            children: root.children(PartitionMode::Split4).into_iter().map(|r| PartitionTree::leaf(r, 0.0)).collect(),
        };
        tree_to_depthmap(&split, &mut map);
        assert!(map.depths().iter().all(|&d| d == 1));

        let horz = PartitionTree {
            rect: root,
            mode: PartitionMode::Horz,
            cost: 0.0,
            children: root.children(PartitionMode::Horz).into_iter().map(|r| PartitionTree::leaf(r, 0.0)).collect(),
        };
        tree_to_depthmap(&horz, &mut map);
        assert!(map.depths().iter().all(|&d| d == 0));

        let f = FrameBuffer::from_fn(128, 64, |x, y| ((x * x + y * 7) % 251) as u8);
        let enc = encode_frame(&f, &cfg, &FullSearch).unwrap();
        assert_eq!(enc.trees.len(), 2);
        let m = enc.depthmap(128, 64);
        assert!(m.depths().iter().all(|&d| d <= 4));
    }

    #[test]
    fn unpadded_frame_rejected() {
        let f = FrameBuffer::filled(65, 64, 0);
        assert!(encode_frame(&f, &RdoConfig::for_qp(27), &FullSearch).is_err());
    }
}
