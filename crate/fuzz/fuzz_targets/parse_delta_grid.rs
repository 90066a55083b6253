#![no_main]

use driftlab::experiment::parse_delta_grid;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(grid) = parse_delta_grid(text) {
        assert!(!grid.is_empty());
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }
});
