#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = gibbsnet::checkpoint::decode_model(data) {
        let again = gibbsnet::checkpoint::encode_model(&params);
        assert!(gibbsnet::checkpoint::decode_model(&again).is_ok());
    }
});
