//! Bit-interleaved Morton codes.
//!
//! The 3D code gives `y` the most significant slot of every bit triple, then
//! `x`, then `z`. The 2D code puts `u` above `v`.

/// Largest coordinate (exclusive) accepted by [`morton3`].
pub const MORTON3_LIMIT: u32 = 1 << 21;

fn spread3(v: u32) -> u64 {
    let mut x = u64::from(v) & 0x1f_ffff;
    x = (x | x << 32) & 0x001f_0000_0000_ffff;
    x = (x | x << 16) & 0x001f_0000_ff00_00ff;
    x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
    x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
    x = (x | x << 2) & 0x1249_2492_4924_9249;
    x
}

fn compact3(code: u64) -> u32 {
    let mut x = code & 0x1249_2492_4924_9249;
    x = (x ^ (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x ^ (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x ^ (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x ^ (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x ^ (x >> 32)) & 0x1f_ffff;
    x as u32
}

fn spread2(v: u32) -> u64 {
    let mut x = u64::from(v);
    x = (x | x << 16) & 0x0000_ffff_0000_ffff;
    x = (x | x << 8) & 0x00ff_00ff_00ff_00ff;
    x = (x | x << 4) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | x << 2) & 0x3333_3333_3333_3333;
    x = (x | x << 1) & 0x5555_5555_5555_5555;
    x
}

fn compact2(code: u64) -> u32 {
    let mut x = code & 0x5555_5555_5555_5555;
    x = (x ^ (x >> 1)) & 0x3333_3333_3333_3333;
    x = (x ^ (x >> 2)) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x ^ (x >> 4)) & 0x00ff_00ff_00ff_00ff;
    x = (x ^ (x >> 8)) & 0x0000_ffff_0000_ffff;
    x = (x ^ (x >> 16)) & 0x0000_0000_ffff_ffff;
    x as u32
}

/// Interleaves bit `b` of each coordinate as `(4y + 2x + z) << 3b`.
/// Coordinates must be below [`MORTON3_LIMIT`].
pub fn morton3(x: u32, y: u32, z: u32) -> u64 {
    debug_assert!(x < MORTON3_LIMIT && y < MORTON3_LIMIT && z < MORTON3_LIMIT);
    spread3(y) << 2 | spread3(x) << 1 | spread3(z)
}

/// Inverse of [`morton3`], returned as `(x, y, z)`.
pub fn morton3_inv(code: u64) -> (u32, u32, u32) {
    (compact3(code >> 1), compact3(code >> 2), compact3(code))
}

/// Interleaves bit `b` of each coordinate as `(2u + v) << 2b`.
pub fn morton2(u: u32, v: u32) -> u64 {
    spread2(u) << 1 | spread2(v)
}

/// Inverse of [`morton2`], returned as `(u, v)`.
pub fn morton2_inv(code: u64) -> (u32, u32) {
    (compact2(code >> 1), compact2(code))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive3(x: u32, y: u32, z: u32) -> u64 {
        (0..21).map(|b| u64::from(4 * (y >> b & 1) + 2 * (x >> b & 1) + (z >> b & 1)) << (3 * b)).sum()
    }

    fn naive2(u: u32, v: u32) -> u64 {
        (0..32).map(|b| u64::from(2 * (u >> b & 1) + (v >> b & 1)) << (2 * b)).sum()
    }

    #[test]
    fn examples() {
        assert_eq!(morton3(0, 0, 0), 0);
        assert_eq!(morton3(1, 1, 1), 7);
        assert_eq!(morton3(2, 0, 1), 17);
        assert_eq!(morton2(0, 0), 0);
        assert_eq!(morton2(1, 1), 3);
        assert_eq!(morton2_inv(1), (0, 1));
        assert_eq!(morton3(0, 1, 0), 4);
        let m = MORTON3_LIMIT - 1;
        assert_eq!(morton3(m, m, m), (1 << 63) - 1);
    }

    proptest! {
        #[test]
        fn matches_bit_loop(x in 0..MORTON3_LIMIT, y in 0..MORTON3_LIMIT, z in 0..MORTON3_LIMIT, u: u32, v: u32) {
            prop_assert_eq!(morton3(x, y, z), naive3(x, y, z));
            prop_assert_eq!(morton3_inv(morton3(x, y, z)), (x, y, z));
            prop_assert_eq!(morton2(u, v), naive2(u, v));
            prop_assert_eq!(morton2_inv(morton2(u, v)), (u, v));
        }
    }
}
