//! Deterministic seed derivation so every rollout, shuffle, and eval draw is
//! a pure function of the run seed and its position in the schedule.

/// Mixes a base seed with a tag (splitmix64 finalizer). Chain calls to
/// derive nested seeds: `mix_seed(mix_seed(run, step), sample)`.
pub fn mix_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
