//! Byte-level tokenizer: ids 0..=255 are raw bytes, followed by three reserved ids.

use alloc::string::String;
use alloc::vec::Vec;

pub type TokenId = u32;

pub const PAD: TokenId = 256;
pub const REASON: TokenId = 257;
pub const ANS: TokenId = 258;
/// Smallest vocabulary that covers bytes plus the reserved ids.
pub const VOCAB_SIZE: usize = 259;

pub fn is_reserved(t: TokenId) -> bool {
    t >= PAD
}

pub fn encode(text: &str) -> Vec<TokenId> {
    encode_bytes(text.as_bytes())
}

pub fn encode_bytes(bytes: &[u8]) -> Vec<TokenId> {
    bytes.iter().map(|&b| b as TokenId).collect()
}

/// Byte ids back to bytes; reserved ids are skipped.
pub fn decode_bytes(tokens: &[TokenId]) -> Vec<u8> {
    tokens.iter().filter(|&&t| t < 256).map(|&t| t as u8).collect()
}

pub fn decode(tokens: &[TokenId]) -> String {
    String::from_utf8_lossy(&decode_bytes(tokens)).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn specials_are_skipped() {
        assert_eq!(decode(&[104, REASON, 105, ANS, PAD]), "hi");
    }

    proptest! {
        #[test]
        fn byte_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            prop_assert_eq!(decode_bytes(&encode_bytes(&bytes)), bytes);
        }

        #[test]
        fn text_round_trip(s in ".{0,80}") {
            prop_assert_eq!(decode(&encode(&s)), s);
        }
    }
}
