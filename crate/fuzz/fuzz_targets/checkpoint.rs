#![no_main]

use libfuzzer_sys::fuzz_target;
use phunet::checkpoint::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        let bytes = ck.encode().expect("decoded checkpoints encode");
        let again = Checkpoint::decode(&bytes).expect("encoded checkpoints decode");
        assert_eq!(again.encode().expect("encodes"), bytes);
    }
});
