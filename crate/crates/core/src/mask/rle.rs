//! Row-major run-length encoding: alternating run lengths, always starting
//! with the 0-run (which may have length zero).

use super::BinaryGrid;
use crate::error::{Error, Result};

pub fn encode(grid: &BinaryGrid) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &b in grid.bits() {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

pub fn decode(runs: &[u32], height: usize, width: usize) -> Result<BinaryGrid> {
    let expected = height * width;
    let total: u64 = runs.iter().map(|&r| u64::from(r)).sum();
    if total != expected as u64 {
        return Err(Error::RleLength {
            expected,
            got: total as usize,
        });
    }
    let mut bits = Vec::with_capacity(expected);
    let mut value = false;
    for &run in runs {
        bits.extend(std::iter::repeat_n(value, run as usize));
        value = !value;
    }
    BinaryGrid::from_bits(height, width, bits)
}
