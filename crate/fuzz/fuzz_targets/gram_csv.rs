#![no_main]

use graphkernel::kernelspace::GramMatrix;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(text) = std::str::from_utf8(bytes) {
        if let Ok(gram) = GramMatrix::from_csv(text) {
            assert_eq!(gram.values.rows(), gram.ids.len());
            assert_eq!(gram.values.cols(), gram.ids.len());
            if let Ok(csv) = gram.to_csv() {
                let _ = GramMatrix::from_csv(&csv);
            }
        }
    }
});
