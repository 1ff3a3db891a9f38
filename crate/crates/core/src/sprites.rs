//! Greedy pixel-wise sprite identification: background-color inference,
//! depth-first extraction of same-colored 4-connected components, and exact
//! frame reconstruction.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::pixelgrid::{Color, Frame};

/// Translation-invariant canonical form of a sprite: sorted (dy, dx) offsets
/// from the anchor, plus the sprite color. Two sprites with equal signatures
/// have pixel sets equal up to translation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ShapeSignature {
    pub color: Color,
    /// Sorted offsets (dy, dx) from the anchor; offsets are relative to the
    /// lexicographically minimal (y, x) pixel so dy >= 0 always.
    pub offsets: Vec<(i32, i32)>,
}

impl ShapeSignature {
    /// Stable 64-bit FNV-1a hash over color and offsets; identical across
    /// platforms and runs.
    pub fn hash64(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |byte: u8| {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        };
        for b in self.color.0 {
            eat(b);
        }
        for &(dy, dx) in &self.offsets {
            for b in dy.to_le_bytes() {
                eat(b);
            }
            for b in dx.to_le_bytes() {
                eat(b);
            }
        }
        h
    }
}

/// A maximal connected group of same-colored non-background pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sprite {
    pub color: Color,
    /// Pixel coordinates sorted by (y, x).
    pub pixels: Vec<(usize, usize)>,
    /// Lexicographically minimal (y, x) pixel, i.e. the first in raster order.
    pub anchor: (usize, usize),
    pub signature: ShapeSignature,
}

impl Sprite {
    fn from_pixels(color: Color, mut pixels: Vec<(usize, usize)>) -> Sprite {
        debug_assert!(!pixels.is_empty());
        pixels.sort_by_key(|&(x, y)| (y, x));
        let anchor = pixels[0];
        let offsets = pixels
            .iter()
            .map(|&(x, y)| (y as i32 - anchor.1 as i32, x as i32 - anchor.0 as i32))
            .collect();
        Sprite {
            color,
            pixels,
            anchor,
            signature: ShapeSignature { color, offsets },
        }
    }
}

/// The full output of sprite identification for one frame: the sprites, the
/// inferred background color, and the frame dimensions. Carrying background
/// and dimensions is what makes reconstruction exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpriteDecomposition {
    pub sprites: Vec<Sprite>,
    pub background: Color,
    pub width: usize,
    pub height: usize,
}

/// The color with the maximal pixel count; ties broken by smallest packed
/// color value.
pub fn infer_background(f: &Frame) -> Color {
    let mut counts: BTreeMap<Color, usize> = BTreeMap::new();
    for &c in f.pixels() {
        *counts.entry(c).or_insert(0) += 1;
    }
    // BTreeMap iterates in ascending color order, so the first maximal entry
    // is the smallest color among ties.
    let mut best = (Color::BLACK, 0usize);
    for (&c, &n) in &counts {
        if n > best.1 {
            best = (c, n);
        }
    }
    best.0
}

/// Count colors, pick the background, then extract one sprite per unvisited
/// non-background pixel via an explicit-stack DFS over same-colored
/// 4-connected neighbors. Outer iteration is raster order, which fixes sprite
/// emission order; sprites sharing a signature are then ordered by (x, y)
/// anchor.
pub fn identify_sprites(f: &Frame) -> SpriteDecomposition {
    let background = infer_background(f);
    let (w, h) = (f.width(), f.height());
    let mut visited = vec![false; w * h];
    let mut sprites = Vec::new();
    let mut stack = Vec::new();

    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let color = f.get(x, y);
            if color == background || visited[idx] {
                continue;
            }
            let mut pixels = Vec::new();
            visited[idx] = true;
            stack.push((x, y));
            while let Some((px, py)) = stack.pop() {
                pixels.push((px, py));
                let mut try_push = |nx: usize, ny: usize| {
                    let nidx = ny * w + nx;
                    if !visited[nidx] && f.get(nx, ny) == color {
                        visited[nidx] = true;
                        stack.push((nx, ny));
                    }
                };
                if px > 0 {
                    try_push(px - 1, py);
                }
                if px + 1 < w {
                    try_push(px + 1, py);
                }
                if py > 0 {
                    try_push(px, py - 1);
                }
                if py + 1 < h {
                    try_push(px, py + 1);
                }
            }
            sprites.push(Sprite::from_pixels(color, pixels));
        }
    }

    order_same_signature_by_anchor(&mut sprites);
    SpriteDecomposition {
        sprites,
        background,
        width: w,
        height: h,
    }
}

/// Within each group of sprites sharing a signature, reassign the group's
/// list positions so the sprites appear in ascending (x, y) anchor order.
/// Positions of other signatures are untouched.
fn order_same_signature_by_anchor(sprites: &mut [Sprite]) {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, s) in sprites.iter().enumerate() {
        groups.entry(s.signature.hash64()).or_default().push(i);
    }
    for positions in groups.values() {
        if positions.len() < 2 {
            continue;
        }
        let mut members: Vec<Sprite> = positions.iter().map(|&i| sprites[i].clone()).collect();
        members.sort_by_key(|s| s.anchor);
        for (&pos, member) in positions.iter().zip(members) {
            sprites[pos] = member;
        }
    }
}

/// Paint the sprites over a background-filled frame. Inverse of
/// `identify_sprites` whenever the background color was the strict plurality
/// color of the source frame.
pub fn reconstruct(d: &SpriteDecomposition) -> Result<Frame> {
    let mut f = Frame::filled(d.width, d.height, d.background)?;
    let mut occupied = vec![false; d.width * d.height];
    for sprite in &d.sprites {
        for &(x, y) in &sprite.pixels {
            if x >= d.width || y >= d.height {
                return Err(Error::Invariant(format!(
                    "sprite pixel ({x}, {y}) out of bounds {}x{}",
                    d.width, d.height
                )));
            }
            let idx = y * d.width + x;
            if occupied[idx] {
                return Err(Error::Invariant(format!(
                    "sprite pixel ({x}, {y}) claimed by two sprites"
                )));
            }
            occupied[idx] = true;
            f.set(x, y, sprite.color);
        }
    }
    Ok(f)
}

impl SpriteDecomposition {
    /// Debug listing: one sprite per line (signature hash, color, anchor,
    /// pixel count).
    pub fn to_debug_record(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "background {:06x} size {}x{} sprites {}",
            self.background.packed(),
            self.width,
            self.height,
            self.sprites.len()
        )
        .unwrap();
        for s in &self.sprites {
            writeln!(
                out,
                "{:016x} color {:06x} anchor ({}, {}) pixels {}",
                s.signature.hash64(),
                s.color.packed(),
                s.anchor.0,
                s.anchor.1,
                s.pixels.len()
            )
            .unwrap();
        }
        out
    }
}
