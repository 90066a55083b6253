#![no_main]

use driftlab::experiment::formats::batch_csv;
use driftlab::experiment::parse_batch_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(b) = parse_batch_csv(text) {
        let written = String::from_utf8(batch_csv(&b)).unwrap();
        let back = parse_batch_csv(&written).expect("re-parse");
        assert_eq!(back.condition, b.condition);
        assert!(back.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
});
