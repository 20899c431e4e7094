//! Property tests for structural invariants.

use proptest::prelude::*;
use qtree_core::driver::EarlyTerminator;
use qtree_core::frame_io::{downscale, pad_to_superblocks, Chroma, Y4mReader, Y4mWriter};
use qtree_core::neighborhood::{colocate, DepthIndex, Ladder};
use qtree_core::rdo::{encode_frame, CostModel, FullSearch};
use qtree_core::sim::{estimator_moments, neighborhood_offsets, sample_field, FieldParams, LinkFunction};
use qtree_core::trainer::{calibrate, collect_samples, evaluate_errors, CalibrationConfig, DepthModel, InferenceModel};
use qtree_core::{BlockRect, Dims, FrameBuffer, NeighborhoodSpec, PartitionMode, PartitionTree, RdoConfig};
use std::io::Cursor;

fn frame_strategy(max: usize) -> impl Strategy<Value = FrameBuffer> {
    (1..=max, 1..=max, any::<u64>(), 0u8..4).prop_map(|(w, h, seed, kind)| {
        let mut s = seed;
        FrameBuffer::from_fn(w, h, |x, y| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            match kind {
                0 => (s >> 56) as u8,
                1 => ((x / 9 + y / 13) * 40 % 256) as u8,
                2 => ((x * y) % 251) as u8,
                _ => (((x / 16 + y / 16) % 2) * 200 + (s >> 61) as usize) as u8,
            }
        })
    })
}

fn check_tree(t: &PartitionTree) {
    assert_eq!(t.children.len(), t.mode.child_count());
    let r = t.rect;
    assert!(r.w.max(r.h) <= 2 * r.w.min(r.h));
    if !r.is_square() {
        assert_eq!(t.mode, PartitionMode::None);
    }
    let area: usize = t.children.iter().map(|c| c.rect.area()).sum();
    if !t.children.is_empty() {
        assert_eq!(area, r.area());
        assert!(t.children.iter().all(|c| r.contains(&c.rect)));
        for (i, a) in t.children.iter().enumerate() {
            for b in &t.children[i + 1..] {
                let overlap = a.rect.x < b.rect.x + b.rect.w
                    && b.rect.x < a.rect.x + a.rect.w
                    && a.rect.y < b.rect.y + b.rect.h
                    && b.rect.y < a.rect.y + a.rect.h;
                assert!(!overlap);
            }
        }
    }
    assert!(t.cost >= 0.0);
    t.children.iter().for_each(check_tree);
}

fn model_strategy() -> impl Strategy<Value = InferenceModel> {
    prop::collection::vec((1usize..=16, 0usize..=10, any::<bool>()), 4).prop_map(|v| InferenceModel {
        epsilon: 0.1,
        denominator: Default::default(),
        depths: v
            .into_iter()
            .enumerate()
            .map(|(d, (slot, k, enabled))| DepthModel {
                depth: d as u8,
                margin: if d == 3 { 0 } else { slot * 8 },
                tau: k as f64 / 10.0,
                enabled,
                type1_rate: 0.0,
                type2_rate: 0.0,
                sample_count: 0,
            })
            .collect(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn padding_shape(frame in frame_strategy(150)) {
        let p = pad_to_superblocks(&frame);
        prop_assert!(p.width() >= 64 && p.height() >= 64);
        prop_assert_eq!(p.width() % 64, 0);
        prop_assert_eq!(p.height() % 64, 0);
        prop_assert_eq!(p.samples().len(), p.width() * p.height());
        for y in 0..frame.height() {
            prop_assert_eq!(&p.row(y)[..frame.width()], frame.row(y));
        }
    }

    #[test]
    fn downscale_constant(w in 1usize..60, h in 1usize..60, v: u8, fx in 0.1f64..1.0, fy in 0.1f64..1.0) {
        let tw = ((w as f64 * fx) as usize).max(1);
        let th = ((h as f64 * fy) as usize).max(1);
        let out = downscale(&FrameBuffer::filled(w, h, v), tw, th).unwrap();
        prop_assert!(out.samples().iter().all(|&s| s == v));
    }

    #[test]
    fn y4m_round_trip(frames in prop::collection::vec(frame_strategy(1), 1..4), w in 2usize..40, h in 2usize..40) {
        let w = w & !1;
        let h = h & !1;
        let frames: Vec<_> = frames.iter().enumerate()
            .map(|(i, _)| FrameBuffer::from_fn(w, h, |x, y| (x * 3 + y * 5 + i * 7) as u8))
            .collect();
        let mut wr = Y4mWriter::new(Vec::new(), Dims::new(w, h), (25, 1), Chroma::Yuv420).unwrap();
        for f in &frames {
            wr.write_frame(f).unwrap();
        }
        let buf = wr.finish().unwrap();
        let rd = Y4mReader::new(Cursor::new(buf)).unwrap();
        let back: Vec<_> = rd.collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back, frames);
    }

    #[test]
    fn encoded_trees_are_well_formed(frame in frame_strategy(130), qp in 18u8..45) {
        let frame = pad_to_superblocks(&frame);
        let cfg = RdoConfig::for_qp(qp);
        let enc = encode_frame(&frame, &cfg, &FullSearch).unwrap();
        let model = CostModel::new(&frame);
        let mut total = 0.0;
        for t in &enc.trees {
            check_tree(t);
            prop_assert!(t.check_structure().is_ok());
            let again = t.recompute_cost(&model, &cfg);
            prop_assert!((again - t.cost).abs() <= 1e-9 * t.cost.max(1.0));
            total += t.cost;
        }
        prop_assert!((total - enc.cost).abs() <= 1e-9 * total.max(1.0));
        let map = enc.depthmap(frame.width(), frame.height());
        prop_assert!(map.depths().iter().all(|&d| d <= 4));
        prop_assert_eq!(map.dims(), frame.dims());
    }

    #[test]
    fn pruning_never_helps(frame in frame_strategy(128), model in model_strategy(), lo_frac in 0.5f64..1.0, qp in 22u8..38) {
        let hi = pad_to_superblocks(&frame);
        let lo_dims = Dims::new(((frame.width() as f64 * lo_frac) as usize).max(1), ((frame.height() as f64 * lo_frac) as usize).max(1));
        let lo = pad_to_superblocks(&downscale(&frame, lo_dims.width, lo_dims.height).unwrap());
        let cfg = RdoConfig::for_qp(qp);
        let lo_map = encode_frame(&lo, &cfg, &FullSearch).unwrap().depthmap(lo.width(), lo.height());
        let index = DepthIndex::new(&lo_map);
        let ladder = Ladder::new(frame.dims(), lo_dims).unwrap();
        let full = encode_frame(&hi, &cfg, &FullSearch).unwrap();
        let fast = encode_frame(&hi, &cfg, &EarlyTerminator::new(Some(&model), &index, ladder)).unwrap();
        prop_assert!(fast.cost >= full.cost);
        prop_assert!(fast.stats.nodes <= full.stats.nodes);
        prop_assert_eq!(fast.stats.nodes + fast.stats.pruned_nodes, full.stats.nodes);
        for (a, b) in fast.trees.iter().zip(&full.trees) {
            prop_assert!(a.cost >= b.cost);
        }
    }

    #[test]
    fn calibration_invariants(frame in frame_strategy(128), eps in 0.05f64..0.5, qp in 22u8..38) {
        let hi = pad_to_superblocks(&frame);
        let lo_dims = Dims::new((frame.width() * 3 / 4).max(1), (frame.height() * 3 / 4).max(1));
        let lo = pad_to_superblocks(&downscale(&frame, lo_dims.width, lo_dims.height).unwrap());
        let cfg = RdoConfig::for_qp(qp);
        let lo_map = encode_frame(&lo, &cfg, &FullSearch).unwrap().depthmap(lo.width(), lo.height());
        let trees = encode_frame(&hi, &cfg, &FullSearch).unwrap().trees;
        let ladder = Ladder::new(frame.dims(), lo_dims).unwrap();
        let samples = collect_samples(&[trees], &[lo_map], &ladder).unwrap();
        for s in &samples {
            prop_assert!(s.depth <= 3);
            prop_assert!(s.x2.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let calib = CalibrationConfig { min_samples: 1, ..CalibrationConfig::with_epsilon(eps) };
        let model = calibrate(&samples, &calib).unwrap();
        prop_assert!(model.validate().is_ok());
        for d in &model.depths {
            if d.enabled && d.depth < 3 {
                prop_assert!(d.type2_rate <= eps);
            }
            let subset: Vec<_> = samples.iter().filter(|s| s.depth == d.depth).cloned().collect();
            let e = evaluate_errors(&subset, d.margin, d.tau);
            prop_assert!(e.type1 + e.type2 <= e.total);
        }
        let text = model.to_toml_string().unwrap();
        prop_assert_eq!(InferenceModel::from_toml_str(&text).unwrap(), model);
    }

    #[test]
    fn neighborhood_mean_in_unit_interval(
        bx in 0usize..4, by in 0usize..4, size_log in 0u32..4, margin in 0usize..=16, depth in 0u8..4, seed: u64,
    ) {
        let size = 8usize << size_log;
        let rect = BlockRect::square(bx * size % 256, by * size % 192, size);
        let hi = Dims::new(256, 192);
        let lo = Dims::new(192, 144);
        let mut s = seed;
        let map = qtree_core::DepthMap::new(192, 192, (0..192 * 192).map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            (s >> 61) as u8 % 5
        }).collect()).unwrap();
        let spec = NeighborhoodSpec::new(margin * 8, depth).unwrap();
        let v = DepthIndex::new(&map).mean(&colocate(&rect, hi, lo), &spec).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn link_is_increasing(loc in -5.0f64..5.0, scale in 0.05f64..5.0, a in -20.0f64..20.0, d in 0.01f64..5.0) {
        let g = LinkFunction::logistic(loc, scale);
        let (ga, gb) = (g.eval(a), g.eval(a + d));
        prop_assert!(ga <= gb);
        prop_assert!((0.0..=1.0).contains(&ga));
        if ga > 1e-12 && gb < 1.0 - 1e-12 {
            prop_assert!(ga < gb);
            prop_assert!(g.derivative(a) > 0.0);
        }
    }

    #[test]
    fn estimator_report_finite(mu0 in -3.0f64..3.0, b0 in -1.0f64..1.0, b1 in -1.0f64..1.0, s2 in 0.0f64..1.0, r in 0usize..5, seed: u64) {
        let params = FieldParams { mu0, beta: [b0, b1], sigma2: s2 };
        let field = sample_field(&params, r, seed).unwrap();
        prop_assert!(field.grid.iter().all(|v| v.is_finite()));
        prop_assert_eq!(field.grid.len(), neighborhood_offsets(r).len());
        prop_assert_eq!(field.at((0, 0)), mu0);
        let rep = estimator_moments(&field, &LinkFunction::logistic(0.0, 1.0), r, 50, seed).unwrap();
        prop_assert!(rep.n >= 1);
        for v in [rep.empirical_mean, rep.empirical_sd, rep.predicted_mean, rep.predicted_sd, rep.bias_bound] {
            prop_assert!(v.is_finite());
        }
    }
}
