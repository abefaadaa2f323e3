//! Contiguous equal partitioning of arrays over tiles in grid order.

use std::ops::Range;

/// `n` items over `tiles` tiles; the first `n mod tiles` tiles take one
/// extra item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Partition {
    pub n: u64,
    pub tiles: u32,
    q: u64,
    r: u64,
}

impl Partition {
    pub fn new(n: u64, tiles: u32) -> Self {
        assert!(tiles > 0);
        Partition { n, tiles, q: n / tiles as u64, r: n % tiles as u64 }
    }

    pub fn owner(&self, i: u64) -> u32 {
        debug_assert!(i < self.n);
        let big = self.r * (self.q + 1);
        if i < big {
            (i / (self.q + 1)) as u32
        } else {
            (self.r + (i - big) / self.q) as u32
        }
    }

    pub fn start(&self, tile: u32) -> u64 {
        let t = tile as u64;
        t * self.q + t.min(self.r)
    }

    pub fn range(&self, tile: u32) -> Range<u64> {
        self.start(tile)..self.start(tile + 1)
    }

    pub fn len(&self, tile: u32) -> u64 {
        self.q + (u64::from(tile) < self.r) as u64
    }

    pub fn is_empty(&self, tile: u32) -> bool {
        self.len(tile) == 0
    }

    pub fn local(&self, i: u64) -> usize {
        (i - self.start(self.owner(i))) as usize
    }
}

/// Byte offsets of consecutive arrays inside a tile's data region.
#[derive(Debug, Clone, Copy, Default)]
pub struct Layout {
    next: u64,
}

impl Layout {
    /// Reserve `count` elements of `elem` bytes; returns the array's base.
    pub fn array(&mut self, base: u64, count: u64, elem: u64) -> u64 {
        let at = base + self.next;
        self.next += (count * elem).div_ceil(8) * 8;
        at
    }

    pub fn bytes(&self) -> u64 {
        self.next
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_split() {
        let p = Partition::new(16, 4);
        assert_eq!((0..4).map(|t| p.len(t)).collect::<Vec<_>>(), [4, 4, 4, 4]);
        assert_eq!(p.owner(5), 1);
    }

    #[test]
    fn remainder_goes_to_first_tiles() {
        let p = Partition::new(10, 4);
        assert_eq!((0..4).map(|t| p.len(t)).collect::<Vec<_>>(), [3, 3, 2, 2]);
        assert_eq!(p.range(2), 6..8);
        let small = Partition::new(2, 4);
        assert_eq!((0..4).map(|t| small.len(t)).collect::<Vec<_>>(), [1, 1, 0, 0]);
        assert_eq!(small.owner(1), 1);
    }

    proptest! {
        #[test]
        fn owner_matches_ranges(n in 1u64..5000, tiles in 1u32..300) {
            let p = Partition::new(n, tiles);
            prop_assert_eq!(p.start(tiles), n);
            for i in (0..n).step_by(7) {
                let t = p.owner(i);
                prop_assert!(p.range(t).contains(&i));
                prop_assert_eq!(p.start(t) + p.local(i) as u64, i);
            }
        }
    }
}
