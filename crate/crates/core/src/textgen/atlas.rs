//! Embedded 8x8 glyph atlas for A-Z and 0-9.

pub const NUM_CLASSES: usize = 36;
pub const GLYPH_SIZE: usize = 8;

pub const CLASS_CHARS: [char; NUM_CLASSES] = [
    'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'J', 'K', 'L', 'M', 'N', 'O', 'P', 'Q', 'R',
    'S', 'T', 'U', 'V', 'W', 'X', 'Y', 'Z', '0', '1', '2', '3', '4', '5', '6', '7', '8', '9',
];

pub fn char_for_class(class_id: usize) -> Option<char> {
    CLASS_CHARS.get(class_id).copied()
}

pub fn class_for_char(c: char) -> Option<usize> {
    CLASS_CHARS.iter().position(|&g| g == c.to_ascii_uppercase())
}

#[rustfmt::skip]
const GLYPHS: [[&str; 8]; NUM_CLASSES] = [
    [ // A
    "..####..",
    ".##..##.",
    ".##..##.",
    ".######.",
    ".##..##.",
    ".##..##.",
    ".##..##.",
    "........"],
    [ // B
    ".#####..",
    ".##..##.",
    ".##..##.",
    ".#####..",
    ".##..##.",
    ".##..##.",
    ".#####..",
    "........"],
    [ // C
    "..####..",
    ".##..##.",
    ".##.....",
    ".##.....",
    ".##.....",
    ".##..##.",
    "..####..",
    "........"],
    [ // D
    ".#####..",
    ".##..##.",
    ".##..##.",
    ".##..##.",
    ".##..##.",
    ".##..##.",
    ".#####..",
    "........"],
    [ // E
    ".######.",
    ".##.....",
    ".##.....",
    ".#####..",
    ".##.....",
    ".##.....",
    ".######.",
    "........"],
    [ // F
    ".######.",
    ".##.....",
    ".##.....",
    ".#####..",
    ".##.....",
    ".##.....",
    ".##.....",
    "........"],
    [ // G
    "..####..",
    ".##..##.",
    ".##.....",
    ".##.###.",
    ".##..##.",
    ".##..##.",
    "..####..",
    "........"],
    [ // H
    ".##..##.",
    ".##..##.",
    ".##..##.",
    ".######.",
    ".##..##.",
    ".##..##.",
    ".##..##.",
    "........"],
    [ // I
    ".######.",
    "...##...",
    "...##...",
    "...##...",
    "...##...",
    "...##...",
    ".######.",
    "........"],
    [ // J
    "..#####.",
    "....##..",
    "....##..",
    "....##..",
    ".##.##..",
    ".##.##..",
    "..###...",
    "........"],
    [ // K
    ".##..##.",
    ".##.##..",
    ".####...",
    ".###....",
    ".####...",
    ".##.##..",
    ".##..##.",
    "........"],
    [ // L
    ".##.....",
    ".##.....",
    ".##.....",
    ".##.....",
    ".##.....",
    ".##.....",
    ".######.",
    "........"],
    [ // M
    ".##...##",
    ".###.###",
    ".#######",
    ".##.#.##",
    ".##...##",
    ".##...##",
    ".##...##",
    "........"],
    [ // N
    ".##..##.",
    ".###.##.",
    ".######.",
    ".##.###.",
    ".##..##.",
    ".##..##.",
    ".##..##.",
    "........"],
    [ // O
    "..####..",
    ".##..##.",
    ".##..##.",
    ".##..##.",
    ".##..##.",
    ".##..##.",
    "..####..",
    "........"],
    [ // P
    ".#####..",
    ".##..##.",
    ".##..##.",
    ".#####..",
    ".##.....",
    ".##.....",
    ".##.....",
    "........"],
    [ // Q
    "..####..",
    ".##..##.",
    ".##..##.",
    ".##..##.",
    ".##.###.",
    ".##..##.",
    "..#####.",
    "........"],
    [ // R
    ".#####..",
    ".##..##.",
    ".##..##.",
    ".#####..",
    ".####...",
    ".##.##..",
    ".##..##.",
    "........"],
    [ // S
    "..####..",
    ".##..##.",
    ".##.....",
    "..####..",
    ".....##.",
    ".##..##.",
    "..####..",
    "........"],
    [ // T
    ".######.",
    "...##...",
    "...##...",
    "...##...",
    "...##...",
    "...##...",
    "...##...",
    "........"],
    [ // U
    ".##..##.",
    ".##..##.",
    ".##..##.",
    ".##..##.",
    ".##..##.",
    ".##..##.",
    "..####..",
    "........"],
    [ // V
    ".##..##.",
    ".##..##.",
    ".##..##.",
    ".##..##.",
    ".##..##.",
    "..####..",
    "...##...",
    "........"],
    [ // W
    ".##...##",
    ".##...##",
    ".##...##",
    ".##.#.##",
    ".#######",
    ".###.###",
    ".##...##",
    "........"],
    [ // X
    ".##..##.",
    ".##..##.",
    "..####..",
    "...##...",
    "..####..",
    ".##..##.",
    ".##..##.",
    "........"],
    [ // Y
    ".##..##.",
    ".##..##.",
    ".##..##.",
    "..####..",
    "...##...",
    "...##...",
    "...##...",
    "........"],
    [ // Z
    ".######.",
    ".....##.",
    "....##..",
    "...##...",
    "..##....",
    ".##.....",
    ".######.",
    "........"],
    [ // 0
    "..####..",
    ".##..##.",
    ".##.###.",
    ".######.",
    ".###.##.",
    ".##..##.",
    "..####..",
    "........"],
    [ // 1
    "...##...",
    "..###...",
    "...##...",
    "...##...",
    "...##...",
    "...##...",
    ".######.",
    "........"],
    [ // 2
    "..####..",
    ".##..##.",
    ".....##.",
    "....##..",
    "...##...",
    "..##....",
    ".######.",
    "........"],
    [ // 3
    "..####..",
    ".##..##.",
    ".....##.",
    "...###..",
    ".....##.",
    ".##..##.",
    "..####..",
    "........"],
    [ // 4
    "....##..",
    "...###..",
    "..####..",
    ".##.##..",
    ".######.",
    "....##..",
    "....##..",
    "........"],
    [ // 5
    ".######.",
    ".##.....",
    ".#####..",
    ".....##.",
    ".....##.",
    ".##..##.",
    "..####..",
    "........"],
    [ // 6
    "..####..",
    ".##.....",
    ".##.....",
    ".#####..",
    ".##..##.",
    ".##..##.",
    "..####..",
    "........"],
    [ // 7
    ".######.",
    ".....##.",
    "....##..",
    "...##...",
    "..##....",
    "..##....",
    "..##....",
    "........"],
    [ // 8
    "..####..",
    ".##..##.",
    ".##..##.",
    "..####..",
    ".##..##.",
    ".##..##.",
    "..####..",
    "........"],
    [ // 9
    "..####..",
    ".##..##.",
    ".##..##.",
    "..#####.",
    ".....##.",
    ".....##.",
    "..####..",
    "........"],
];

/// Binary 8x8 bitmap for a class, row-major, 1 = ink.
pub fn glyph_bitmap(class_id: usize) -> Option<[u8; GLYPH_SIZE * GLYPH_SIZE]> {
    let rows = GLYPHS.get(class_id)?;
    let mut out = [0u8; GLYPH_SIZE * GLYPH_SIZE];
    for (y, row) in rows.iter().enumerate() {
        debug_assert_eq!(row.len(), GLYPH_SIZE);
        for (x, c) in row.bytes().enumerate() {
            out[y * GLYPH_SIZE + x] = u8::from(c == b'#');
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_class_nonempty_and_distinct() {
        let mut seen = Vec::new();
        for id in 0..NUM_CLASSES {
            let bm = glyph_bitmap(id).unwrap();
            assert!(bm.iter().any(|&v| v == 1), "class {id} empty");
            assert!(!seen.contains(&bm), "class {id} duplicates another glyph");
            seen.push(bm);
        }
        assert!(glyph_bitmap(NUM_CLASSES).is_none());
    }

    #[test]
    fn char_class_round_trip() {
        for id in 0..NUM_CLASSES {
            let c = char_for_class(id).unwrap();
            assert_eq!(class_for_char(c), Some(id));
        }
        assert_eq!(class_for_char('a'), Some(0));
        assert_eq!(class_for_char('!'), None);
    }
}
