//! Writes a 4x4 grid of random dolls (image above, labels below) as one PNG.

use dressup_core::dataset::{render_person, PaperDollSpec};
use dressup_core::image::RgbImage;

fn main() {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "contact_sheet.png".into());
    let n = 64;
    let scale = 3;
    let palette = [
        [0.0, 0.0, 0.0],
        [0.9, 0.7, 0.6],
        [0.4, 0.2, 0.0],
        [0.2, 0.4, 0.9],
        [0.2, 0.8, 0.3],
    ];
    let mut sheet = RgbImage::new(4 * n * scale, 8 * n * scale);
    for k in 0..16 {
        let s = render_person(&PaperDollSpec::random(k as u64)).unwrap();
        let (ox, oy) = ((k % 4) * n, (k / 4) * 2 * n);
        for y in 0..n {
            for x in 0..n {
                let label = palette[s.seg.get(y, x) as usize];
                for dy in 0..scale {
                    for dx in 0..scale {
                        let col = (ox + x) * scale + dx;
                        sheet.set_pixel((oy + y) * scale + dy, col, s.image.pixel(y, x));
                        sheet.set_pixel((oy + n + y) * scale + dy, col, label);
                    }
                }
            }
        }
    }
    sheet.save_png(std::path::Path::new(&out)).unwrap();
}
