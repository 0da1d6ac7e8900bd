/// Width of the per-packet payload feature vector.
pub const PAYLOAD_LEN: usize = 1500;

/// Map payload bytes to a fixed 1500-wide vector of unsigned byte values.
/// Shorter payloads are zero padded, longer ones truncated.
pub fn encode_payload(payload: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; PAYLOAD_LEN];
    let n = payload.len().min(PAYLOAD_LEN);
    out[..n].copy_from_slice(&payload[..n]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn get_request_prefix() {
        let v = encode_payload(b"GET");
        assert_eq!(v.len(), PAYLOAD_LEN);
        assert_eq!(&v[..3], &[71, 69, 84]);
        assert!(v[3..].iter().all(|&b| b == 0));
    }

    #[test]
    fn empty_is_all_zero() {
        assert_eq!(encode_payload(&[]), vec![0u8; PAYLOAD_LEN]);
    }

    #[test]
    fn long_payload_truncates() {
        let v = encode_payload(&[0xFF; 2000]);
        assert_eq!(v, vec![255u8; PAYLOAD_LEN]);
    }

    proptest! {
        #[test]
        fn idempotent_on_clipped_prefix(bytes in proptest::collection::vec(any::<u8>(), 0..3000)) {
            let once = encode_payload(&bytes);
            let clipped = &bytes[..bytes.len().min(PAYLOAD_LEN)];
            prop_assert_eq!(encode_payload(clipped), once.clone());
            prop_assert_eq!(encode_payload(&once), once);
        }
    }
}
