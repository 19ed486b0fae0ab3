//! Built-in 4x7 bitmap font covering digits and both letter cases.
//! Every glyph is a distinct bit pattern (the zero is slashed to separate it
//! from 'O'); rows are 4-bit values, most significant bit leftmost.

pub const GLYPH_W: usize = 4;
pub const GLYPH_H: usize = 7;
/// Horizontal advance per character (glyph plus one column of spacing).
pub const ADVANCE: usize = GLYPH_W + 1;

pub fn glyph(c: char) -> Option<&'static [u8; GLYPH_H]> {
    let idx = match c {
        '0'..='9' => c as usize - '0' as usize,
        'a'..='z' => 10 + c as usize - 'a' as usize,
        'A'..='Z' => 36 + c as usize - 'A' as usize,
        _ => return None,
    };
    Some(&GLYPHS[idx])
}

#[rustfmt::skip]
static GLYPHS: [[u8; GLYPH_H]; 62] = [
    // digits
    [0b0110, 0b1001, 0b1011, 0b1101, 0b1001, 0b1001, 0b0110], // 0 (slashed)
    [0b0010, 0b0110, 0b0010, 0b0010, 0b0010, 0b0010, 0b0111], // 1
    [0b0110, 0b1001, 0b0001, 0b0010, 0b0100, 0b1000, 0b1111], // 2
    [0b1110, 0b0001, 0b0001, 0b0110, 0b0001, 0b0001, 0b1110], // 3
    [0b0010, 0b0110, 0b1010, 0b1010, 0b1111, 0b0010, 0b0010], // 4
    [0b1111, 0b1000, 0b1000, 0b1110, 0b0001, 0b0001, 0b1110], // 5
    [0b0110, 0b1000, 0b1000, 0b1110, 0b1001, 0b1001, 0b0110], // 6
    [0b1111, 0b0001, 0b0001, 0b0010, 0b0010, 0b0100, 0b0100], // 7
    [0b0110, 0b1001, 0b1001, 0b0110, 0b1001, 0b1001, 0b0110], // 8
    [0b0110, 0b1001, 0b1001, 0b0111, 0b0001, 0b0001, 0b0110], // 9
    // lowercase
    [0b0000, 0b0000, 0b0110, 0b0001, 0b0111, 0b1001, 0b0111], // a
    [0b1000, 0b1000, 0b1110, 0b1001, 0b1001, 0b1001, 0b1110], // b
    [0b0000, 0b0000, 0b0111, 0b1000, 0b1000, 0b1000, 0b0111], // c
    [0b0001, 0b0001, 0b0111, 0b1001, 0b1001, 0b1001, 0b0111], // d
    [0b0000, 0b0000, 0b0110, 0b1001, 0b1111, 0b1000, 0b0111], // e
    [0b0011, 0b0100, 0b1110, 0b0100, 0b0100, 0b0100, 0b0100], // f
    [0b0000, 0b0111, 0b1001, 0b1001, 0b0111, 0b0001, 0b0110], // g
    [0b1000, 0b1000, 0b1110, 0b1001, 0b1001, 0b1001, 0b1001], // h
    [0b0010, 0b0000, 0b0110, 0b0010, 0b0010, 0b0010, 0b0111], // i
    [0b0001, 0b0000, 0b0011, 0b0001, 0b0001, 0b1001, 0b0110], // j
    [0b1000, 0b1000, 0b1001, 0b1010, 0b1100, 0b1010, 0b1001], // k
    [0b0110, 0b0010, 0b0010, 0b0010, 0b0010, 0b0010, 0b0111], // l
    [0b0000, 0b0000, 0b1010, 0b1111, 0b1011, 0b1011, 0b1011], // m
    [0b0000, 0b0000, 0b1110, 0b1001, 0b1001, 0b1001, 0b1001], // n
    [0b0000, 0b0000, 0b0110, 0b1001, 0b1001, 0b1001, 0b0110], // o
    [0b0000, 0b0000, 0b1110, 0b1001, 0b1001, 0b1110, 0b1000], // p
    [0b0000, 0b0000, 0b0111, 0b1001, 0b1001, 0b0111, 0b0001], // q
    [0b0000, 0b0000, 0b1011, 0b1100, 0b1000, 0b1000, 0b1000], // r
    [0b0000, 0b0000, 0b0111, 0b1000, 0b0110, 0b0001, 0b1110], // s
    [0b0100, 0b0100, 0b1110, 0b0100, 0b0100, 0b0100, 0b0011], // t
    [0b0000, 0b0000, 0b1001, 0b1001, 0b1001, 0b1001, 0b0111], // u
    [0b0000, 0b0000, 0b1001, 0b1001, 0b1001, 0b1010, 0b0100], // v
    [0b0000, 0b0000, 0b1001, 0b1001, 0b1011, 0b1111, 0b1001], // w
    [0b0000, 0b0000, 0b1001, 0b0110, 0b0100, 0b0110, 0b1001], // x
    [0b0000, 0b0000, 0b1001, 0b1001, 0b0111, 0b0001, 0b0110], // y
    [0b0000, 0b0000, 0b1111, 0b0010, 0b0100, 0b1000, 0b1111], // z
    // uppercase
    [0b0110, 0b1001, 0b1001, 0b1111, 0b1001, 0b1001, 0b1001], // A
    [0b1110, 0b1001, 0b1001, 0b1110, 0b1001, 0b1001, 0b1110], // B
    [0b0110, 0b1001, 0b1000, 0b1000, 0b1000, 0b1001, 0b0110], // C
    [0b1110, 0b1001, 0b1001, 0b1001, 0b1001, 0b1001, 0b1110], // D
    [0b1111, 0b1000, 0b1000, 0b1110, 0b1000, 0b1000, 0b1111], // E
    [0b1111, 0b1000, 0b1000, 0b1110, 0b1000, 0b1000, 0b1000], // F
    [0b0110, 0b1001, 0b1000, 0b1011, 0b1001, 0b1001, 0b0111], // G
    [0b1001, 0b1001, 0b1001, 0b1111, 0b1001, 0b1001, 0b1001], // H
    [0b0111, 0b0010, 0b0010, 0b0010, 0b0010, 0b0010, 0b0111], // I
    [0b0011, 0b0001, 0b0001, 0b0001, 0b0001, 0b1001, 0b0110], // J
    [0b1001, 0b1010, 0b1100, 0b1000, 0b1100, 0b1010, 0b1001], // K
    [0b1000, 0b1000, 0b1000, 0b1000, 0b1000, 0b1000, 0b1111], // L
    [0b1001, 0b1111, 0b1111, 0b1001, 0b1001, 0b1001, 0b1001], // M
    [0b1001, 0b1101, 0b1101, 0b1011, 0b1011, 0b1001, 0b1001], // N
    [0b0110, 0b1001, 0b1001, 0b1001, 0b1001, 0b1001, 0b0110], // O
    [0b1110, 0b1001, 0b1001, 0b1110, 0b1000, 0b1000, 0b1000], // P
    [0b0110, 0b1001, 0b1001, 0b1001, 0b1001, 0b1010, 0b0101], // Q
    [0b1110, 0b1001, 0b1001, 0b1110, 0b1100, 0b1010, 0b1001], // R
    [0b0111, 0b1000, 0b1000, 0b0110, 0b0001, 0b0001, 0b1110], // S
    [0b1111, 0b0010, 0b0010, 0b0010, 0b0010, 0b0010, 0b0010], // T
    [0b1001, 0b1001, 0b1001, 0b1001, 0b1001, 0b1001, 0b0110], // U
    [0b1001, 0b1001, 0b1001, 0b1001, 0b1001, 0b0110, 0b0100], // V
    [0b1001, 0b1001, 0b1001, 0b1011, 0b1111, 0b1111, 0b1001], // W
    [0b1001, 0b1001, 0b0110, 0b0110, 0b0110, 0b1001, 0b1001], // X
    [0b1001, 0b1001, 0b1001, 0b0110, 0b0010, 0b0010, 0b0010], // Y
    [0b1111, 0b0001, 0b0010, 0b0100, 0b1000, 0b1000, 0b1111], // Z
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_glyphs_are_distinct() {
        for i in 0..GLYPHS.len() {
            for j in i + 1..GLYPHS.len() {
                assert_ne!(GLYPHS[i], GLYPHS[j], "glyphs {i} and {j} collide");
            }
        }
    }

    #[test]
    fn full_charset_is_covered() {
        for c in ('0'..='9').chain('a'..='z').chain('A'..='Z') {
            assert!(glyph(c).is_some(), "missing glyph for {c:?}");
        }
        assert!(glyph('%').is_none());
    }

    #[test]
    fn rows_fit_four_bits() {
        for g in &GLYPHS {
            for &row in g.iter() {
                assert!(row < 16);
            }
        }
    }
}
