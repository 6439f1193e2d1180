use illm_entropy::{
    build_cdf, cross_entropy_bits, decode_indexed, encode_indexed, parse_container,
    serialize_container, BitstreamContainer, CdfTable, Density, TableParams,
};
use proptest::prelude::*;

fn gaussian_tables(scales: &[f64], precision: u32) -> Vec<CdfTable> {
    let params = TableParams { precision, ..Default::default() };
    scales
        .iter()
        .map(|&s| build_cdf(Density::Gaussian { mean: 0.0, scale: s }, &params).unwrap())
        .collect()
}

fn case_strategy() -> impl Strategy<Value = (Vec<f64>, u32, Vec<(i32, u32)>)> {
    (
        prop::collection::vec(0.11f64..300.0, 1..6),
        prop::sample::select(vec![8u32, 12, 16, 20, 24]),
    )
        .prop_flat_map(|(scales, precision)| {
            let n = scales.len() as u32;
            let symbols = prop::collection::vec(
                (
                    prop_oneof![
                        8 => -40i32..40,
                        1 => any::<i32>(),
                    ],
                    0..n,
                ),
                0..1500,
            );
            (Just(scales), Just(precision), symbols)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn decode_inverts_encode((scales, precision, pairs) in case_strategy()) {
        let tables = gaussian_tables(&scales, precision);
        let (symbols, indexes): (Vec<i32>, Vec<u32>) = pairs.into_iter().unzip();
        let bytes = encode_indexed(&symbols, &indexes, &tables).unwrap();
        prop_assert_eq!(decode_indexed(&bytes, &indexes, &tables).unwrap(), symbols);
    }

    #[test]
    fn coded_length_is_near_the_model_cross_entropy((scales, precision, pairs) in case_strategy()) {
        let tables = gaussian_tables(&scales, precision);
        let (symbols, indexes): (Vec<i32>, Vec<u32>) = pairs.into_iter().unzip();
        let bytes = encode_indexed(&symbols, &indexes, &tables).unwrap();
        let ideal = cross_entropy_bits(&symbols, &indexes, &tables);
        prop_assert!((bytes.len() * 8) as f64 <= ideal + 32.0,
            "coded {} bits, cross-entropy {ideal}", bytes.len() * 8);
    }

    #[test]
    fn encoding_is_deterministic((scales, precision, pairs) in case_strategy()) {
        let tables = gaussian_tables(&scales, precision);
        let (symbols, indexes): (Vec<i32>, Vec<u32>) = pairs.into_iter().unzip();
        prop_assert_eq!(
            encode_indexed(&symbols, &indexes, &tables).unwrap(),
            encode_indexed(&symbols, &indexes, &tables).unwrap()
        );
    }

    #[test]
    fn container_round_trip(
        streams in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..64), 0..8),
        w in 1u32..5000, h in 1u32..5000, id in any::<u64>(),
    ) {
        let bytes = serialize_container(&streams, w, h, id).unwrap();
        let c = parse_container(&bytes).unwrap();
        prop_assert_eq!(&c, &BitstreamContainer::new(streams, w, h, id).unwrap());
        prop_assert_eq!(c.to_bytes(), bytes);
    }
}
