//! Seed splitting.
//!
//! Every random stream in a run is seeded by `derive_seed(global, label)`:
//! the label's 64-bit FNV-1a hash is XORed into the global seed and the
//! result is passed through the SplitMix64 finalizer. Labels name the
//! consumer, for example `"subsample"`, `"kmeans"` or
//! `"layer0/procedure3"`, so adding a consumer never shifts another one's
//! stream.

/// Seed for the stream named `label` under the run seed `global`.
pub fn derive_seed(global: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(global ^ h)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
