//! Stable seed derivation. `derive_seed(master, subject, purpose)` gives every
//! fold/purpose its own RNG stream, independent of execution order.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn derive_seed(master: u64, subject: u32, purpose: &str) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a(purpose)).wrapping_add(subject as u64))
}
