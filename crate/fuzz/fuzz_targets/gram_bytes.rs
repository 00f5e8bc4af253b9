#![no_main]

use graphkernel::kernelspace::GramMatrix;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(gram) = GramMatrix::from_bytes(data) {
        let again = GramMatrix::from_bytes(&gram.to_bytes()).expect("re-encoded gram parses");
        let bits = |g: &GramMatrix| g.values.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&again), bits(&gram));
        let _ = gram.report();
    }
});
