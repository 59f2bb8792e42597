use driftlens::tensorio::{read_activation_dump, write_activation_dump, ActivationSet, LayerActivations};
use driftlens::Error;
use proptest::prelude::*;

fn set_strategy() -> impl Strategy<Value = ActivationSet> {
    (1usize..12, prop::collection::vec(1usize..6, 1..4)).prop_flat_map(|(rows, cols)| {
        let total = rows * cols.iter().sum::<usize>();
        (Just(rows), Just(cols), prop::collection::vec(-1e6f32..1e6, total)).prop_map(|(rows, cols, values)| {
            let mut at = 0;
            let layers = cols
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let chunk = values[at..at + rows * c].to_vec();
                    at += rows * c;
                    LayerActivations::new(format!("layer{i}"), rows, c, chunk).unwrap()
                })
                .collect();
            ActivationSet::new("model", "data", layers).unwrap()
        })
    })
}

fn encode(set: &ActivationSet) -> Vec<u8> {
    let mut buf = Vec::new();
    write_activation_dump(set, &mut buf).unwrap();
    buf
}

proptest! {
    #[test]
    fn round_trip(set in set_strategy()) {
        let bytes = encode(&set);
        prop_assert_eq!(bytes.len(), set.encoded_len());
        prop_assert_eq!(read_activation_dump(bytes.as_slice()).unwrap(), set);
    }

    #[test]
    fn every_strict_prefix_is_rejected(set in set_strategy(), cut in any::<prop::sample::Index>()) {
        let bytes = encode(&set);
        let len = cut.index(bytes.len());
        let err = read_activation_dump(&bytes[..len]).unwrap_err();
        prop_assert!(matches!(err, Error::Corruption { .. }), "prefix {len}: {err}");
    }

    #[test]
    fn byte_flips_never_panic(set in set_strategy(), at in any::<prop::sample::Index>(), byte in any::<u8>()) {
        let mut bytes = encode(&set);
        let i = at.index(bytes.len());
        bytes[i] = byte;
        if let Ok(back) = read_activation_dump(bytes.as_slice()) {
            prop_assert_eq!(back.encoded_len(), bytes.len());
        }
    }
}
