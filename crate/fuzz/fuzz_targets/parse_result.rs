#![no_main]

use driftlab::experiment::{ExperimentResult, RunManifest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(r) = ExperimentResult::from_json(text) {
        assert!(r.artifacts.iter().all(|a| !a.path.contains('/')));
    }
    let _ = RunManifest::from_json(text);
});
