//! Stable seed derivation, so every stochastic choice in the pipeline is a
//! pure function of (run seed, context labels) rather than call order.

/// FNV-1a over the parts with a separator byte between them, so
/// `["ab","c"]` and `["a","bc"]` derive different seeds.
pub fn derive(parts: &[&str]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |byte: u8| {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for part in parts {
        for b in part.bytes() {
            eat(b);
        }
        eat(0xff);
    }
    hash
}
