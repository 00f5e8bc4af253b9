#![no_main]

use graphkernel::graphdata::{make_batch, normalized_adjacency, parse_graphs, write_graphs, BatchOptions};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|bytes: &[u8]| {
    let Ok(text) = std::str::from_utf8(bytes) else {
        return;
    };
    let Ok(data) = parse_graphs(text, None) else {
        return;
    };
    let written = write_graphs(&data.graphs, &data.vocab);
    let again = parse_graphs(&written, Some(&data.vocab)).expect("writer output parses");
    assert_eq!(again.graphs, data.graphs);

    let refs: Vec<_> = data.graphs.iter().collect();
    if !refs.is_empty() && data.graphs.iter().map(|g| g.len()).sum::<usize>() < 10_000 {
        let batch = make_batch(&refs, data.vocab.len(), &BatchOptions::default()).expect("valid graphs batch");
        let adj = normalized_adjacency(&batch);
        for r in 0..adj.n() {
            assert!((adj.row_sum(r) - 1.0).abs() < 1e-9);
        }
    }
});
