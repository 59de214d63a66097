//! Built-in 5×7 monospaced bitmap font.
//!
//! Lowercase letters use full-height capital shapes so every letter and digit
//! spans all seven rows; the recognizer relies on that to find the text line.

use thiserror::Error;

pub const GLYPH_WIDTH: usize = 5;
pub const GLYPH_HEIGHT: usize = 7;
/// Horizontal advance per character, glyph plus one blank column.
pub const PITCH: usize = GLYPH_WIDTH + 1;

pub const CHARSET: &str = "abcdefghijklmnopqrstuvwxyz0123456789.-/:";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("character {0:?} is not in the bitmap font")]
pub struct UnsupportedChar(pub char);

pub struct Glyph {
    pub ch: char,
    rows: [&'static str; GLYPH_HEIGHT],
}

impl Glyph {
    #[inline]
    pub fn ink(&self, col: usize, row: usize) -> bool {
        col < GLYPH_WIDTH && self.rows[row].as_bytes()[col] == b'#'
    }

    pub fn ink_count(&self) -> usize {
        self.rows
            .iter()
            .map(|r| r.bytes().filter(|&b| b == b'#').count())
            .sum()
    }
}

macro_rules! glyphs {
    ($($ch:literal => [$($row:literal),* $(,)?]),* $(,)?) => {
        &[$(Glyph { ch: $ch, rows: [$($row),*] }),*]
    };
}

static GLYPHS: &[Glyph] = glyphs![
    'a' => [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
    'b' => ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."],
    'c' => [".####", "#....", "#....", "#....", "#....", "#....", ".####"],
    'd' => ["###..", "#..#.", "#...#", "#...#", "#...#", "#..#.", "###.."],
    'e' => ["#####", "#....", "#....", "####.", "#....", "#....", "#####"],
    'f' => ["#####", "#....", "#....", "###..", "#....", "#....", "#...."],
    'g' => [".####", "#....", "#....", "#.###", "#...#", "#...#", ".####"],
    'h' => ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
    'i' => [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."],
    'j' => ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."],
    'k' => ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"],
    'l' => ["#....", "#....", "#....", "#....", "#....", "#....", "#####"],
    'm' => ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"],
    'n' => ["#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"],
    'o' => [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
    'p' => ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."],
    'q' => [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"],
    'r' => ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"],
    's' => [".####", "#....", "#....", ".###.", "....#", "....#", "####."],
    't' => ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
    'u' => ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
    'v' => ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."],
    'w' => ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."],
    'x' => ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"],
    'y' => ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."],
    'z' => ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"],
    '0' => [".###.", "#..##", "#.#.#", "#.#.#", "#.#.#", "##..#", ".###."],
    '1' => ["..#..", ".##..", "#.#..", "..#..", "..#..", "..#..", "#####"],
    '2' => [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    '3' => ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."],
    '4' => ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    '5' => ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    '6' => ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."],
    '7' => ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    '8' => [".###.", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", ".###."],
    '9' => [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."],
    '.' => [".....", ".....", ".....", ".....", ".....", ".##..", ".##.."],
    '-' => [".....", ".....", ".....", "#####", ".....", ".....", "....."],
    '/' => ["....#", "....#", "...#.", "..#..", ".#...", "#....", "#...."],
    ':' => [".....", ".##..", ".##..", ".....", ".##..", ".##..", "....."],
];

pub fn glyphs() -> &'static [Glyph] {
    GLYPHS
}

pub fn glyph(ch: char) -> Option<&'static Glyph> {
    GLYPHS.iter().find(|g| g.ch == ch)
}

pub fn supports(text: &str) -> bool {
    text.chars().all(|c| glyph(c).is_some())
}

/// Pixel width of `text` at `scale`, trailing spacing column included.
pub fn text_width(text: &str, scale: usize) -> usize {
    text.chars().count() * PITCH * scale
}

pub fn text_height(scale: usize) -> usize {
    GLYPH_HEIGHT * scale
}

/// Calls `plot(x, y)` for every ink pixel of `text` drawn with its top-left
/// corner at the origin, each font pixel becoming a `scale × scale` block.
pub fn rasterize(
    text: &str,
    scale: usize,
    mut plot: impl FnMut(usize, usize),
) -> Result<(), UnsupportedChar> {
    let glyphs = text
        .chars()
        .map(|c| glyph(c).ok_or(UnsupportedChar(c)))
        .collect::<Result<Vec<_>, _>>()?;
    for (i, g) in glyphs.iter().enumerate() {
        let left = i * PITCH * scale;
        for row in 0..GLYPH_HEIGHT {
            for col in 0..GLYPH_WIDTH {
                if !g.ink(col, row) {
                    continue;
                }
                for sy in 0..scale {
                    for sx in 0..scale {
                        plot(left + col * scale + sx, row * scale + sy);
                    }
                }
            }
        }
    }
    Ok(())
}
