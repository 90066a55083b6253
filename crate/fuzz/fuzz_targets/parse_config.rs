#![no_main]

use driftlab::experiment::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    // A config that parses must survive its own serialization.
    if let Ok(cfg) = ExperimentConfig::from_json(text) {
        let back = ExperimentConfig::from_json(&cfg.to_json()).expect("re-parse");
        assert_eq!(back, cfg);
    }
});
