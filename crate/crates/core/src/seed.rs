//! Stable 64-bit seed derivation.

/// Domain tag for Eve's own simulations.
pub const EVE_PREPARATION: u64 = 0x4556_455f_5052_4550;
/// Domain tag for the high-frequency tie-break coin.
pub const TIE_BREAK: u64 = 0x5449_455f_4252_4b00;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `base` with an ordered list of words. Changing any word changes
/// the result; the value for a given input never changes.
pub fn mix(base: u64, words: &[u64]) -> u64 {
    words
        .iter()
        .fold(splitmix64(base), |acc, &w| splitmix64(acc ^ splitmix64(w)))
}
