mod common;

use common::{config, iid_shards, mlp4, run};
use proptest::prelude::*;
use splitedge::compression::{compress_payload, quantize_weights_step, CompressionSpec};
use splitedge::protocols::ProtocolKind;
use splitedge::Tensor;

const SPLIT_KINDS: [ProtocolKind; 4] = [ProtocolKind::VanillaSl, ProtocolKind::Sfl, ProtocolKind::Psl, ProtocolKind::Epsl];

#[test]
fn eight_bit_activations_quarter_smashed_bytes() {
    let p = mlp4(3, 3);
    for kind in SPLIT_KINDS {
        let base = config(kind, 2, 3, 4);
        let mut q = base.clone();
        q.compression.activation_bits = 8;
        let (_, full) = run(&p, iid_shards(3, 16, 3, 3, 40), base, 2);
        let (_, small) = run(&p, iid_shards(3, 16, 3, 3, 40), q, 2);
        for (a, b) in full.iter().zip(&small) {
            assert_eq!(a.trace.smashed_bytes(), 4 * b.trace.smashed_bytes(), "{kind:?}");
        }
    }
}

#[test]
fn quantized_weights_stay_on_their_grid() {
    let p = mlp4(3, 3);
    let mut cfg = config(ProtocolKind::Psl, 3, 3, 4);
    cfg.compression.client_weight_bits = 8;
    cfg.compression.server_weight_bits = 16;
    let (s, _) = run(&p, iid_shards(2, 16, 3, 3, 41), cfg, 2);
    let mut head = s.clients()[0].head().clone();
    let before = head.clone();
    quantize_weights_step(&mut head, 8).unwrap();
    assert!(head.params_bit_eq(&before));
    let mut server = s.server().clone();
    quantize_weights_step(&mut server, 16).unwrap();
    assert!(server.params_bit_eq(s.server()));
}

#[test]
fn sparse_payloads_shrink_the_trace() {
    let p = mlp4(3, 3);
    let base = config(ProtocolKind::Psl, 2, 3, 4);
    let mut sparse = base.clone();
    sparse.compression.topk_ratio = 0.25;
    let (_, a) = run(&p, iid_shards(2, 16, 3, 3, 42), base, 1);
    let (_, b) = run(&p, iid_shards(2, 16, 3, 3, 42), sparse, 1);
    // 32 values -> 8 kept, each with a 4-byte index.
    assert_eq!(a[0].trace.smashed_bytes(), 2 * b[0].trace.smashed_bytes());
}

proptest! {
    #[test]
    fn default_spec_returns_the_payload_untouched(data in prop::collection::vec(-1e6f64..1e6, 1..100)) {
        let t = Tensor::from_vec(vec![data.len()], data).unwrap();
        let (out, wire) = compress_payload(&t, &CompressionSpec::default()).unwrap();
        prop_assert_eq!(out.data(), t.data());
        prop_assert_eq!(wire.total(), 4 * t.len() as u64);
    }

    #[test]
    fn compression_is_idempotent(data in prop::collection::vec(-50.0f64..50.0, 4..60), bits in prop::sample::select(vec![2u32, 4, 8, 16])) {
        let t = Tensor::from_vec(vec![data.len()], data).unwrap();
        let spec = CompressionSpec { activation_bits: bits, ..CompressionSpec::default() };
        let (once, _) = compress_payload(&t, &spec).unwrap();
        let (twice, _) = compress_payload(&once, &spec).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
