#![no_main]

use graphkernel::graphdata::Vocabulary;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(text) = std::str::from_utf8(bytes) {
        if let Ok(vocab) = Vocabulary::parse(text) {
            let again = Vocabulary::parse(&vocab.to_text()).expect("round trip");
            assert_eq!(again, vocab);
            assert_eq!(again.hash(), vocab.hash());
        }
    }
});
