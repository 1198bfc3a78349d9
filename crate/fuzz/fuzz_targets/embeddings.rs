#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(table) = gibbsnet::EmbeddingTable::parse(text) {
            let mut out = Vec::new();
            table.write(&mut out).expect("write");
            let again = gibbsnet::EmbeddingTable::parse(std::str::from_utf8(&out).unwrap()).expect("reparse");
            assert_eq!(table.len(), again.len());
        }
    }
});
