mod common;

use asyncrank::engine::Fragment;
use asyncrank::kernels::{
    apply_google_block, apply_linear_block, dense_oracle, run_sync, GoogleOperator, GoogleParams,
};
use asyncrank::ranking::compare_rankings;
use asyncrank::termination::{ControlKind, ControlMessage, PersistenceCounter, UeProtocolState};
use asyncrank::transport::codec::{decode_frame, encode_frame, FrameDecoder};
use asyncrank::transport::Message;
use asyncrank::webgraph::{
    build_all_blocks, generate_synthetic, parse_edge_list_str, partition_rows, AdjacencyGraph, ParseOptions,
};
use common::l1;
use proptest::prelude::*;

fn graph_strategy() -> impl Strategy<Value = AdjacencyGraph> {
    (1usize..80, 0.5f64..6.0, prop_oneof![Just(0.0), Just(0.1), Just(0.4), Just(1.0)], any::<u64>())
        .prop_map(|(n, avg, dangling, seed)| generate_synthetic(n, avg, dangling, seed).unwrap())
}

fn graph_and_vector() -> impl Strategy<Value = (AdjacencyGraph, Vec<f64>)> {
    graph_strategy().prop_flat_map(|g| {
        let n = g.n();
        (Just(g), prop::collection::vec(0.0f64..1.0, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn google_operator_keeps_the_norm((g, x) in graph_and_vector(), alpha in 0.05f64..0.99) {
        let params = GoogleParams::uniform(g.n(), alpha).unwrap();
        let gx = GoogleOperator::new(&g, params).unwrap().apply(&x).unwrap();
        let before: f64 = x.iter().sum();
        let after: f64 = gx.iter().sum();
        prop_assert!(gx.iter().all(|&v| v >= 0.0));
        prop_assert!((before - after).abs() <= 1e-12 * before.max(1.0));
    }

    #[test]
    fn kernels_agree_on_unit_vectors((g, x) in graph_and_vector(), p in 1usize..5) {
        let total: f64 = x.iter().sum();
        prop_assume!(total > 0.0);
        let x: Vec<f64> = x.iter().map(|v| v / total).collect();
        let n = g.n();
        let params = GoogleParams::uniform(n, 0.85).unwrap();
        let part = partition_rows(n, p.min(n)).unwrap();
        for block in build_all_blocks(&g, &part).unwrap() {
            let power = apply_google_block(&block, &x, &params).unwrap();
            let linear = apply_linear_block(&block, &x, &params).unwrap();
            prop_assert!(l1(&power, &linear) <= 1e-14);
        }
    }

    #[test]
    fn blocks_reassemble_the_operator((g, x) in graph_and_vector(), p in 1usize..6) {
        let n = g.n();
        let params = GoogleParams::uniform(n, 0.85).unwrap();
        let whole = GoogleOperator::new(&g, params.clone()).unwrap().apply(&x).unwrap();
        let part = partition_rows(n, p.min(n)).unwrap();
        let mut pieces = Vec::new();
        for block in build_all_blocks(&g, &part).unwrap() {
            pieces.extend(apply_google_block(&block, &x, &params).unwrap());
        }
        prop_assert_eq!(pieces, whole);
    }

    #[test]
    fn power_method_reaches_the_oracle(g in graph_strategy()) {
        let params = GoogleParams::uniform(g.n(), 0.85).unwrap();
        let sync = run_sync(&g, &params, 1e-12, 10_000, None).unwrap();
        let oracle = dense_oracle(&g, &params, 1e-12).unwrap();
        prop_assert!(sync.converged);
        prop_assert!(l1(&sync.x, &oracle) <= 1e-9);
    }

    #[test]
    fn residuals_contract(g in graph_strategy(), alpha in 0.3f64..0.95) {
        let params = GoogleParams::uniform(g.n(), alpha).unwrap();
        let sync = run_sync(&g, &params, 1e-13, 60, None).unwrap();
        for w in sync.residual_history.windows(2) {
            if w[0] > 1e-13 {
                prop_assert!(w[1] / w[0] <= alpha + 0.05, "ratio {} for alpha {}", w[1] / w[0], alpha);
            }
        }
    }

    #[test]
    fn partitions_tile_the_rows(n in 1usize..500, p in 1usize..40) {
        prop_assume!(p <= n);
        let part = partition_rows(n, p).unwrap();
        let lens: Vec<usize> = part.ranges().map(|r| r.len()).collect();
        prop_assert_eq!(lens.iter().sum::<usize>(), n);
        prop_assert!(lens.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(lens[0] - lens[p - 1] <= 1);
        let mut next = 0;
        for (ue, range) in part.ranges().enumerate() {
            prop_assert_eq!(range.start, next);
            for row in range.clone() {
                prop_assert_eq!(part.owner_of(row), Some(ue as u32));
            }
            next = range.end;
        }
    }

    #[test]
    fn edge_lists_round_trip(g in graph_strategy()) {
        let text = g.to_edge_list_string();
        let back = parse_edge_list_str(&text, ParseOptions { declared_n: Some(g.n()), ..Default::default() }).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn frames_round_trip_through_a_stream(
        frags in prop::collection::vec((any::<u32>(), any::<u64>(), any::<u32>(), prop::collection::vec(any::<u64>(), 0..20)), 1..8),
        chunk in 1usize..64,
    ) {
        let msgs: Vec<Message> = frags
            .into_iter()
            .map(|(sender, local_iter, start, bits)| Message::Fragment(Fragment {
                sender,
                local_iter,
                start: start as usize,
                values: bits.into_iter().map(f64::from_bits).collect(),
            }))
            .chain(std::iter::once(Message::Control(ControlMessage { kind: ControlKind::Stop, sender: 7 })))
            .collect();
        let wire: Vec<u8> = msgs.iter().flat_map(|m| encode_frame(m).unwrap()).collect();
        let mut decoder = FrameDecoder::new();
        let mut got = Vec::new();
        for piece in wire.chunks(chunk) {
            decoder.extend(piece);
            while let Some(frame) = decoder.next_frame() {
                got.push(encode_frame(&frame.unwrap()).unwrap());
            }
        }
        let expected: Vec<Vec<u8>> = msgs.iter().map(|m| encode_frame(m).unwrap()).collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn single_bit_errors_are_caught(bits in prop::collection::vec(any::<u64>(), 0..16), flip in any::<prop::sample::Index>()) {
        let msg = Message::Fragment(Fragment { sender: 1, local_iter: 9, start: 4, values: bits.into_iter().map(f64::from_bits).collect() });
        let mut bytes = encode_frame(&msg).unwrap();
        let bit = flip.index(bytes.len() * 8);
        bytes[bit / 8] ^= 1 << (bit % 8);
        prop_assert!(decode_frame(&bytes).is_err());
    }

    #[test]
    fn ranking_ignores_positive_scaling(x in prop::collection::vec(0.0f64..1.0, 1..60), c in 1e-3f64..1e3, k in 0usize..60) {
        let k = k.min(x.len());
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        let cmp = compare_rankings(&x, &scaled, k).unwrap();
        // Scaling can merge two nearly equal values; exact ties keep index order.
        let distinct = {
            let mut s = x.clone();
            s.sort_by(f64::total_cmp);
            s.windows(2).all(|w| w[0] != w[1]) && {
                let mut t = scaled.clone();
                t.sort_by(f64::total_cmp);
                t.windows(2).all(|w| w[0] != w[1])
            }
        };
        if distinct {
            prop_assert_eq!(cmp.overlap, 1.0);
            prop_assert_eq!(cmp.max_displacement, 0);
        }
    }

    #[test]
    fn ue_and_monitor_counters_match(stream in prop::collection::vec(any::<bool>(), 0..80), pc_max in 1u32..5) {
        let mut ue = UeProtocolState::new(pc_max).unwrap();
        let mut counter = PersistenceCounter::new(pc_max).unwrap();
        for &b in &stream {
            ue.on_check(b);
            counter.check(b);
            prop_assert_eq!(ue.pc(), counter.pc());
            prop_assert!(ue.pc() <= pc_max);
            prop_assert!(ue.pc() == 0 || ue.converged());
        }
    }
}
