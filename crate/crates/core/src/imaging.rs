//! RGB rendering of composition fields and the feature-vector preprocessing
//! used by the learning pipeline.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::grid::FieldPair;

/// Side length of the square images fed to the learning pipeline.
pub const FEATURE_SIDE: u32 = 200;

fn channel(x: f64) -> u8 {
    (255.0 * x.clamp(0.0, 1.0)).round() as u8
}

/// Map (a, b, c) to (R, G, B). Pixel column `i` is cell column `i`; pixel
/// row 0 is the top of the domain (largest y).
pub fn render_rgb(f: &FieldPair) -> RgbImage {
    let g = *f.grid();
    let (a, b) = (f.a.values(), f.b.values());
    RgbImage::from_fn(g.nx as u32, g.ny as u32, |x, y| {
        let k = g.idx(x as usize, g.ny - 1 - y as usize);
        Rgb([channel(a[k]), channel(b[k]), channel(1.0 - a[k] - b[k])])
    })
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()?;
    Ok(img.to_rgb8())
}

/// Bilinear sample of one channel with pixel-centre alignment and edge
/// clamping.
fn bilinear(img: &RgbImage, ch: usize, sx: f64, sy: f64) -> f64 {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = sx.floor();
    let y0 = sy.floor();
    let (fx, fy) = (sx - x0, sy - y0);
    let px = |x: i64, y: i64| -> f64 {
        let x = x.clamp(0, w - 1) as u32;
        let y = y.clamp(0, h - 1) as u32;
        img.get_pixel(x, y)[ch] as f64
    };
    let (x0, y0) = (x0 as i64, y0 as i64);
    let top = px(x0, y0) * (1.0 - fx) + px(x0 + 1, y0) * fx;
    let bot = px(x0, y0 + 1) * (1.0 - fx) + px(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Resample to `w` x `h` and return the concatenated R, G, B planes, each
/// flattened row-major and scaled to [0, 1].
pub fn preprocess_to(img: &RgbImage, w: u32, h: u32) -> Result<Vec<f64>> {
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Data("cannot preprocess an empty image".into()));
    }
    if w == 0 || h == 0 {
        return Err(Error::InvalidConfig("target size must be nonzero".into()));
    }
    let scale_x = img.width() as f64 / w as f64;
    let scale_y = img.height() as f64 / h as f64;
    let plane = (w * h) as usize;
    let mut out = vec![0.0; 3 * plane];
    for y in 0..h {
        let sy = (y as f64 + 0.5) * scale_y - 0.5;
        for x in 0..w {
            let sx = (x as f64 + 0.5) * scale_x - 0.5;
            let k = (y * w + x) as usize;
            for ch in 0..3 {
                out[ch * plane + k] = bilinear(img, ch, sx, sy) / 255.0;
            }
        }
    }
    Ok(out)
}

/// Preprocess at the default 200 x 200 resolution.
pub fn preprocess(img: &RgbImage) -> Result<Vec<f64>> {
    preprocess_to(img, FEATURE_SIDE, FEATURE_SIDE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, ScalarField};

    #[test]
    fn uniform_thirds_render_grey() {
        let f = FieldPair::uniform(GridSpec::square(6, 3.0).unwrap(), 1.0 / 3.0, 1.0 / 3.0);
        let img = render_rgb(&f);
        assert!(img.pixels().all(|p| p.0 == [85, 85, 85]));
    }

    #[test]
    fn top_row_is_top_of_domain() {
        let g = GridSpec::new(4, 5, 4.0, 5.0).unwrap();
        let a = ScalarField::from_fn(g, |_, y| if y > 4.0 { 0.8 } else { 0.1 });
        let f = FieldPair::new(a, ScalarField::constant(g, 0.1)).unwrap();
        let img = render_rgb(&f);
        assert_eq!(img.get_pixel(0, 0)[0], 204);
        assert_eq!(img.get_pixel(0, 4)[0], 26);
    }

    #[test]
    fn grey_image_gives_constant_vector() {
        let img = RgbImage::from_pixel(13, 7, Rgb([51, 51, 51]));
        let v = preprocess(&img).unwrap();
        assert_eq!(v.len(), 120_000);
        assert!(v.iter().all(|&x| (x - 0.2).abs() < 1e-12));
    }

    #[test]
    fn empty_image_rejected() {
        assert!(preprocess(&RgbImage::new(0, 0)).is_err());
    }
}
