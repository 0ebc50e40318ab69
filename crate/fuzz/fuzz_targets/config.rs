#![no_main]

use libfuzzer_sys::fuzz_target;
use phunet::train::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = TrainConfig::from_toml(text) {
        let again = TrainConfig::from_toml(&cfg.to_toml().expect("valid configs serialize")).expect("reparses");
        assert_eq!(again.to_toml().expect("serializes"), cfg.to_toml().expect("serializes"));
    }
});
