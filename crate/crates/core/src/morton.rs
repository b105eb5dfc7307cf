//! 96-bit Morton codes and the Z-curve key order of the linear octree.
//!
//! A code is a depth in `[0, 30]` plus a path of `depth` octant triplets
//! (3 bits each, most significant first) left-aligned in a 96-bit field.
//! Bits below the `3 * depth` leading path bits are always zero, so the
//! derived lexicographic order on `(path, depth)` sorts every ancestor
//! immediately before its first descendant: a preorder Z-curve traversal.

pub const MAX_DEPTH: u8 = 30;

/// Octant triplet layout: bit 2 = x, bit 1 = y, bit 0 = z.
/// The path occupies bits 95..=6 of the `u128`; bits 5..=0 stay zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MortonCode {
    path: u128,
    depth: u8,
}

/// Axis-aligned face directions, used for neighbor arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Face {
    XNeg,
    XPos,
    YNeg,
    YPos,
    ZNeg,
    ZPos,
}

pub const FACES: [Face; 6] = [
    Face::XNeg,
    Face::XPos,
    Face::YNeg,
    Face::YPos,
    Face::ZNeg,
    Face::ZPos,
];

impl Face {
    #[inline]
    pub fn axis(self) -> usize {
        match self {
            Face::XNeg | Face::XPos => 0,
            Face::YNeg | Face::YPos => 1,
            Face::ZNeg | Face::ZPos => 2,
        }
    }

    #[inline]
    pub fn sign(self) -> i64 {
        match self {
            Face::XNeg | Face::YNeg | Face::ZNeg => -1,
            Face::XPos | Face::YPos | Face::ZPos => 1,
        }
    }

    #[inline]
    pub fn opposite(self) -> Face {
        match self {
            Face::XNeg => Face::XPos,
            Face::XPos => Face::XNeg,
            Face::YNeg => Face::YPos,
            Face::YPos => Face::YNeg,
            Face::ZNeg => Face::ZPos,
            Face::ZPos => Face::ZNeg,
        }
    }
}

impl MortonCode {
    pub const ROOT: MortonCode = MortonCode { path: 0, depth: 0 };

    /// Bit-interleave per-axis cell indices, most significant level first.
    pub fn encode(depth: u8, x: u32, y: u32, z: u32) -> Self {
        assert!(depth <= MAX_DEPTH, "depth {depth} out of range");
        let n = 1u64 << depth;
        assert!(
            (x as u64) < n && (y as u64) < n && (z as u64) < n,
            "cell ({x}, {y}, {z}) out of range at depth {depth}"
        );
        let mut path = 0u128;
        for level in 0..depth {
            let bit = depth - 1 - level;
            let oct = (((x >> bit) & 1) << 2) | (((y >> bit) & 1) << 1) | ((z >> bit) & 1);
            path |= (oct as u128) << (93 - 3 * level as u32);
        }
        MortonCode { path, depth }
    }

    /// Per-axis cell indices at this code's depth.
    pub fn decode(&self) -> (u32, u32, u32) {
        let (mut x, mut y, mut z) = (0u32, 0u32, 0u32);
        for level in 0..self.depth {
            let oct = self.octant_at(level);
            x = (x << 1) | ((oct >> 2) & 1) as u32;
            y = (y << 1) | ((oct >> 1) & 1) as u32;
            z = (z << 1) | (oct & 1) as u32;
        }
        (x, y, z)
    }

    #[inline]
    pub fn depth(&self) -> u8 {
        self.depth
    }

    /// Raw path field; bits 95..=6 hold the octant triplets.
    #[inline]
    pub fn path_bits(&self) -> u128 {
        self.path
    }

    pub fn from_raw(path: u128, depth: u8) -> Option<Self> {
        if depth > MAX_DEPTH || path >> 96 != 0 {
            return None;
        }
        let used = 3 * depth as u32;
        let low_mask = if used >= 96 {
            0
        } else {
            (1u128 << (96 - used)) - 1
        };
        if path & low_mask != 0 {
            return None;
        }
        Some(MortonCode { path, depth })
    }

    /// Octant triplet chosen at `level` (0 = first split below the root).
    #[inline]
    pub fn octant_at(&self, level: u8) -> u8 {
        debug_assert!(level < self.depth);
        ((self.path >> (93 - 3 * level as u32)) & 0b111) as u8
    }

    pub fn parent(&self) -> Option<Self> {
        if self.depth == 0 {
            return None;
        }
        let level = self.depth - 1;
        let path = self.path & !(0b111u128 << (93 - 3 * level as u32));
        Some(MortonCode {
            path,
            depth: level,
        })
    }

    pub fn child(&self, octant: u8) -> Self {
        assert!(self.depth < MAX_DEPTH, "cannot descend below depth 30");
        debug_assert!(octant < 8);
        let path = self.path | ((octant as u128) << (93 - 3 * self.depth as u32));
        MortonCode {
            path,
            depth: self.depth + 1,
        }
    }

    pub fn children(&self) -> [Self; 8] {
        std::array::from_fn(|i| self.child(i as u8))
    }

    /// Ancestor at a shallower depth (identity when `depth >= self.depth`).
    pub fn ancestor_at(&self, depth: u8) -> Self {
        if depth >= self.depth {
            return *self;
        }
        let used = 3 * depth as u32;
        let mask = if used == 0 {
            0
        } else {
            !((1u128 << (96 - used)) - 1)
        };
        MortonCode {
            path: self.path & mask & ((1u128 << 96) - 1),
            depth,
        }
    }

    /// True when `self` is a strict ancestor of `other`.
    pub fn is_ancestor_of(&self, other: &MortonCode) -> bool {
        if self.depth >= other.depth {
            return false;
        }
        let used = 3 * self.depth as u32;
        if used == 0 {
            return true;
        }
        ((self.path ^ other.path) >> (96 - used)) == 0
    }

    #[inline]
    pub fn contains(&self, other: &MortonCode) -> bool {
        *self == *other || self.is_ancestor_of(other)
    }

    /// Same-depth cell offset by one step along `face`; `None` outside the root cube.
    pub fn face_neighbor(&self, face: Face) -> Option<Self> {
        let (x, y, z) = self.decode();
        let n = 1i64 << self.depth;
        let mut c = [x as i64, y as i64, z as i64];
        c[face.axis()] += face.sign();
        if c[face.axis()] < 0 || c[face.axis()] >= n {
            return None;
        }
        Some(MortonCode::encode(
            self.depth,
            c[0] as u32,
            c[1] as u32,
            c[2] as u32,
        ))
    }

    /// Exclusive upper bound of this code's subtree in key order.
    /// Every descendant key is `>= self` and `< self.subtree_end()`
    /// (`None` for the last subtree along the curve).
    pub fn subtree_end(&self) -> Option<u128> {
        if self.depth == 0 {
            return None;
        }
        let step = 1u128 << (96 - 3 * self.depth as u32);
        let end = self.path + step;
        if end >> 96 != 0 {
            None
        } else {
            Some(end)
        }
    }

    /// Depth-30 key of the cell containing integer lattice cell `xyz`
    /// (lattice resolution `2^30` per axis).
    pub fn finest(x: u32, y: u32, z: u32) -> Self {
        MortonCode::encode(MAX_DEPTH, x, y, z)
    }
}

impl std::fmt::Display for MortonCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "d{}:", self.depth)?;
        if self.depth == 0 {
            return write!(f, "root");
        }
        for level in 0..self.depth {
            write!(f, "{}", self.octant_at(level))?;
        }
        Ok(())
    }
}
