mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use layoutsmith::graph::{parse_graph, to_ir};
use layoutsmith::layout::LayoutChoice;
use layoutsmith::pipeline::{run_pipeline, PipelineConfig};
use layoutsmith::synth::{random_graph, SynthConfig};
use layoutsmith::texture::map_to_texture;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_graphs_survive_the_pipeline(seed in 1000u64..100_000) {
        let g = random_graph(seed, &SynthConfig::default());
        let out = run_pipeline(&g, &PipelineConfig { trials: 3, ..Default::default() }).unwrap();
        prop_assert!(out.report.pass, "{:?}", out.report.equivalence.outputs);
        prop_assert!(out.graph.node_count() <= g.node_count());
        let text = to_ir(&out.graph);
        prop_assert_eq!(to_ir(&parse_graph(&text).unwrap()), text);
    }

    #[test]
    fn movement_chains_agree_with_data_movement(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (src, ops, map) = common::random_chain(&mut rng, 4096);
        let mut moved = common::iota(&src);
        for op in &ops {
            moved = common::move_data(&moved, op);
        }
        let reduced = map.reduced();
        prop_assert!(reduced.divmod_count() <= map.divmod_count());
        for (flat, o) in map.out_shape().indices().enumerate() {
            let at = reduced.eval(&o).unwrap();
            prop_assert_eq!(src.linearize(&at) as f64, moved.data()[flat]);
        }
    }

    #[test]
    fn serving_layouts_round_trip(
        dims in prop::collection::vec(1usize..12, 1..=4),
        a in 0usize..4,
        b in 0usize..4,
    ) {
        let shape = layoutsmith::shape::TensorShape::from_slice(&dims);
        let r = dims.len();
        let l = LayoutChoice::serving(r, &[a % r, b % r]);
        let tl = map_to_texture(&shape, &l).unwrap();
        for idx in shape.indices() {
            prop_assert_eq!(tl.unmap(tl.address(&idx).unwrap()), Some(idx));
        }
    }
}
