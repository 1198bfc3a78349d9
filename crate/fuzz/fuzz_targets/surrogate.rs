#![no_main]

use libfuzzer_sys::fuzz_target;

use gibbsnet::surrogate::SurrogateParams;

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = SurrogateParams::decode(data) {
        assert!(SurrogateParams::decode(&params.encode()).is_ok());
    }
});
