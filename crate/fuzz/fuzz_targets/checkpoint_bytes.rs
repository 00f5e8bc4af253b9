#![no_main]

use graphkernel::trainer::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::from_bytes(data) {
        let bytes = ck.to_bytes().expect("loaded checkpoint re-encodes");
        Checkpoint::from_bytes(&bytes).expect("re-encoded checkpoint loads");
    }
});
