#![no_main]

use libfuzzer_sys::fuzz_target;
use phunet::data::nifti;

fuzz_target!(|data: &[u8]| {
    // Anything that decodes must survive a round trip bit for bit.
    if let Ok(v) = nifti::decode(data) {
        let again = nifti::decode(&nifti::encode(&v).expect("decoded volumes encode")).expect("encoded volumes decode");
        assert_eq!(again.dims, v.dims);
        assert_eq!(again.pixdim, v.pixdim);
        assert!(again.data.iter().zip(&v.data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
});
