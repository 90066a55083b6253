#![no_main]

use driftlab::denoiser::network::Checkpoint;
use driftlab::denoiser::MlpDenoiser;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(ck) = Checkpoint::parse(text) {
        let _ = MlpDenoiser::from_checkpoint(&ck);
    }
});
