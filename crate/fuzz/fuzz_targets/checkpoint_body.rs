#![no_main]

//! Appends a valid digest so mutations reach the field decoder instead of
//! stopping at the checksum.

use graphkernel::trainer::Checkpoint;
use libfuzzer_sys::fuzz_target;
use sha2::{Digest, Sha256};

fuzz_target!(|body: &[u8]| {
    let mut bytes = body.to_vec();
    bytes.extend_from_slice(&Sha256::digest(body));
    if let Ok(ck) = Checkpoint::from_bytes(&bytes) {
        let _ = ck.validate();
        let again = ck.to_bytes().expect("loaded checkpoint re-encodes");
        Checkpoint::from_bytes(&again).expect("re-encoded checkpoint loads");
    }
});
