use egoface_nn::io::{decode_weights, encode_weights, load_spec, load_weights, save_spec, save_weights};
use egoface_nn::{build_network, Layer, NetworkSpec, NetworkState};
use proptest::prelude::*;
use std::path::Path;

fn spec() -> NetworkSpec {
    NetworkSpec::new(
        vec![3, 8, 8],
        vec![
            Layer::Conv { in_channels: 3, out_channels: 4, kernel: 3, stride: 2, padding: 1, bias: true },
            Layer::InstanceNorm { channels: 4 },
            Layer::LeakyRelu { slope: 0.2 },
            Layer::Flatten,
            Layer::Dense { inputs: 64, outputs: 5 },
        ],
    )
    .unwrap()
}

#[test]
fn header_layout_is_stable() {
    let state: NetworkState<f32> = build_network(&spec(), 1).unwrap();
    let bytes = encode_weights(&state);
    assert_eq!(&bytes[..4], b"EGFW");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    // conv w+b, norm scale+shift, dense w+b
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 6);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 4);
    let dims: Vec<u32> = (0..4)
        .map(|i| u32::from_le_bytes(bytes[16 + 4 * i..20 + 4 * i].try_into().unwrap()))
        .collect();
    assert_eq!(dims, vec![4, 3, 3, 3]);
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec();
    let state: NetworkState<f32> = build_network(&s, 9).unwrap();
    save_weights(&dir.path().join("m.egfw"), &state).unwrap();
    save_spec(&dir.path().join("m.json"), &s).unwrap();
    let s2 = load_spec(&dir.path().join("m.json")).unwrap();
    let back: NetworkState<f32> = load_weights(&dir.path().join("m.egfw"), &s2).unwrap();
    assert_eq!(back.weights, state.weights);
}

#[test]
fn corrupted_files_are_rejected() {
    let s = spec();
    let state: NetworkState<f32> = build_network(&s, 9).unwrap();
    let mut bytes = encode_weights(&state);
    let p = Path::new("mem");
    bytes.truncate(bytes.len() - 3);
    assert!(decode_weights::<f32>(&bytes, &s, p).is_err());
    let mut bad = encode_weights(&state);
    bad[0] = b'X';
    assert!(decode_weights::<f32>(&bad, &s, p).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn encode_decode_is_lossless_for_f32(seed in any::<u64>()) {
        let s = spec();
        let state: NetworkState<f32> = build_network(&s, seed).unwrap();
        let back: NetworkState<f32> = decode_weights(&encode_weights(&state), &s, Path::new("mem")).unwrap();
        prop_assert_eq!(back.weights, state.weights);
    }
}
