//! Embedded 5x7 bitmap font for the synthetic word renderer. Covers the
//! lowercase letters and digits; glyphs are classic uppercase-style
//! terminal shapes, which is fine since the renderer only needs distinct,
//! deterministic rasters per character.

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;

/// Rows of a glyph, top to bottom; bit 4 is the leftmost column.
pub fn glyph(c: char) -> Option<[u8; GLYPH_H]> {
    let rows: [&str; GLYPH_H] = match c {
        'a' => ["..#..", ".#.#.", "#...#", "#...#", "#####", "#...#", "#...#"],
        'b' => ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."],
        'c' => [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."],
        'd' => ["####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."],
        'e' => ["#####", "#....", "#....", "####.", "#....", "#....", "#####"],
        'f' => ["#####", "#....", "#....", "####.", "#....", "#....", "#...."],
        'g' => [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".###."],
        'h' => ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
        'i' => [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."],
        'j' => ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."],
        'k' => ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"],
        'l' => ["#....", "#....", "#....", "#....", "#....", "#....", "#####"],
        'm' => ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"],
        'n' => ["#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"],
        'o' => [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
        'p' => ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."],
        'q' => [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"],
        'r' => ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"],
        's' => [".####", "#....", "#....", ".###.", "....#", "....#", "####."],
        't' => ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
        'u' => ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
        'v' => ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."],
        'w' => ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"],
        'x' => ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"],
        'y' => ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."],
        'z' => ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"],
        '0' => [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
        '1' => ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
        '2' => [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
        '3' => [".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."],
        '4' => ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
        '5' => ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
        '6' => [".###.", "#....", "#....", "####.", "#...#", "#...#", ".###."],
        '7' => ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
        '8' => [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
        '9' => [".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."],
        _ => return None,
    };
    let mut out = [0u8; GLYPH_H];
    for (y, row) in rows.iter().enumerate() {
        debug_assert_eq!(row.len(), GLYPH_W);
        for (x, ch) in row.bytes().enumerate() {
            if ch == b'#' {
                out[y] |= 1 << (GLYPH_W - 1 - x);
            }
        }
    }
    Some(out)
}

/// True when every character of `word` has a glyph.
pub fn covers(word: &str) -> bool {
    word.chars().all(|c| glyph(c).is_some())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_letters_and_digits_present() {
        for c in ('a'..='z').chain('0'..='9') {
            assert!(glyph(c).is_some(), "{c}");
        }
        assert!(glyph('A').is_none());
        assert!(glyph(' ').is_none());
    }

    #[test]
    fn glyphs_are_distinct_and_nonempty() {
        let all: Vec<[u8; 7]> = ('a'..='z')
            .chain('0'..='9')
            .map(|c| glyph(c).unwrap())
            .collect();
        for (i, a) in all.iter().enumerate() {
            assert!(a.iter().any(|&r| r != 0));
            for b in &all[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn rows_fit_five_columns() {
        for c in 'a'..='z' {
            for row in glyph(c).unwrap() {
                assert_eq!(row & !0b11111, 0);
            }
        }
    }
}
