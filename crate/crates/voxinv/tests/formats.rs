use proptest::prelude::*;
use voxinv::config::RunConfig;
use voxinv::error::Error;
use voxinv::volume::{decode_volume, encode_volume, Volume};
use voxinv_core::Tensor;

proptest! {
    #[test]
    fn volumes_round_trip_bit_exactly(dims in prop::collection::vec(1usize..6, 1..5), seed in any::<u32>(), wide in any::<bool>()) {
        let n: usize = dims.iter().product();
        let vals: Vec<f64> = (0..n).map(|i| ((i as u64 * 2654435761 + seed as u64) % 1000) as f64 * 0.37 - 100.0).collect();
        let v = if wide {
            Volume::F64(Tensor::from_vec(&dims, vals).unwrap())
        } else {
            Volume::F32(Tensor::from_vec(&dims, vals.iter().map(|&x| x as f32).collect()).unwrap())
        };
        let bytes = encode_volume(&v).unwrap();
        prop_assert_eq!(&bytes[..4], b"GPRV");
        prop_assert_eq!(&bytes[4..6], &[1, 0]);
        prop_assert_eq!(bytes[6], u8::from(wide));
        prop_assert_eq!(bytes[7] as usize, dims.len());
        prop_assert_eq!(bytes.len(), 8 + 4 * dims.len() + n * if wide { 8 } else { 4 });
        let back = decode_volume(&bytes).unwrap();
        prop_assert_eq!(encode_volume(&back).unwrap(), bytes);
        prop_assert_eq!(back, v);
    }

    #[test]
    fn truncation_is_reported(cut in 1usize..40) {
        let v = Volume::F32(Tensor::full(&[2, 2, 2], 1.5f32));
        let bytes = encode_volume(&v).unwrap();
        let short = &bytes[..bytes.len() - cut.min(bytes.len() - 1)];
        prop_assert!(decode_volume(short).is_err());
    }
}

#[test]
fn dims_exceeding_payload_is_truncation() {
    let mut bytes = encode_volume(&Volume::F32(Tensor::full(&[2, 2, 2], 0.0f32))).unwrap();
    bytes[8] = 200;
    assert!(matches!(decode_volume(&bytes), Err(Error::Truncated { .. })));
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"XXXX");
    assert!(matches!(decode_volume(&bad), Err(Error::BadMagic { .. })));
}

#[test]
fn config_documents_paper_defaults() {
    let c = RunConfig::parse("").unwrap();
    assert_eq!(c.survey.center_frequency, 1e9);
    assert_eq!(c.train.lr0, 0.001);
    assert_eq!(c.train.decay_factor, 0.98);
    assert_eq!(c.fine_tune.lr0, 0.0006);
    let text = c.to_pretty_json();
    assert_eq!(RunConfig::parse(&text).unwrap(), c);
}
