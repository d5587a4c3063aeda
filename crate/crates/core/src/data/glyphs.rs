use crate::tensor::Tensor;

// 8x8 binary digit bitmaps, `#` = 1.
const DIGITS: [[&str; 8]; 10] = [
    [
        "..####..", ".##..##.", ".##.###.", ".#####..", ".###.##.", ".##..##.", ".##..##.",
        "..####..",
    ],
    [
        "...##...", "..###...", ".####...", "...##...", "...##...", "...##...", "...##...",
        ".######.",
    ],
    [
        "..####..", ".##..##.", ".....##.", "....##..", "...##...", "..##....", ".##.....",
        ".######.",
    ],
    [
        "..####..", ".##..##.", ".....##.", "...###..", ".....##.", ".....##.", ".##..##.",
        "..####..",
    ],
    [
        "....##..", "...###..", "..####..", ".##.##..", ".######.", "....##..", "....##..",
        "....##..",
    ],
    [
        ".######.", ".##.....", ".#####..", ".....##.", ".....##.", ".....##.", ".##..##.",
        "..####..",
    ],
    [
        "...###..", "..##....", ".##.....", ".#####..", ".##..##.", ".##..##.", ".##..##.",
        "..####..",
    ],
    [
        ".######.", ".....##.", "....##..", "...##...", "...##...", "..##....", "..##....",
        "..##....",
    ],
    [
        "..####..", ".##..##.", ".##..##.", "..####..", ".##..##.", ".##..##.", ".##..##.",
        "..####..",
    ],
    [
        "..####..", ".##..##.", ".##..##.", ".##..##.", "..#####.", ".....##.", "....##..",
        "..###...",
    ],
];

/// The ten built-in 8x8 digit glyphs as a `[10, 8, 8]` tensor.
pub fn builtin_glyphs() -> Tensor<f32> {
    let data = DIGITS
        .iter()
        .flat_map(|rows| rows.iter().flat_map(|r| r.bytes()))
        .map(|b| if b == b'#' { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(vec![10, 8, 8], data).expect("static glyph table is 10x8x8")
}

/// Nearest-neighbour enlargement of `[N, h, w]` glyphs by an integer factor.
pub fn scale_glyphs(glyphs: &Tensor<f32>, factor: usize) -> Tensor<f32> {
    if factor <= 1 {
        return glyphs.clone();
    }
    let (n, h, w) = (glyphs.shape()[0], glyphs.shape()[1], glyphs.shape()[2]);
    let (oh, ow) = (h * factor, w * factor);
    let mut data = Vec::with_capacity(n * oh * ow);
    for g in glyphs.data().chunks(h * w) {
        for y in 0..oh {
            for x in 0..ow {
                data.push(g[(y / factor) * w + x / factor]);
            }
        }
    }
    Tensor::new(vec![n, oh, ow], data).expect("scaled extents are positive")
}
