//! PNG encoding of single images and image grids.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::datasets::{denormalize_u8, Image, ImageBatch, ImageShape, PreprocessSpec, RawImage};
use crate::error::{Error, Result};

fn to_dynamic(img: &Image) -> Result<DynamicImage> {
    let s = img.shape;
    let (w, h) = (s.width as u32, s.height as u32);
    let hw = s.height * s.width;
    match s.channels {
        1 => {
            let px: Vec<u8> = img.data.iter().map(|&v| denormalize_u8(v)).collect();
            Ok(DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, px).expect("sized buffer")))
        }
        3 => {
            let px: Vec<u8> = (0..hw)
                .flat_map(|i| (0..3).map(move |c| c * hw + i))
                .map(|j| denormalize_u8(img.data[j]))
                .collect();
            Ok(DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, px).expect("sized buffer")))
        }
        c => Err(Error::Shape(format!("cannot encode {c}-channel images"))),
    }
}

/// Lossless PNG bytes of an image in [-1, 1].
pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    to_dynamic(img)?.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, encode_png(img)?)?;
    Ok(())
}

/// Decodes PNG or JPEG bytes and resizes them to `shape`. The channel count
/// must match: grayscale for 1-channel models, color for 3-channel ones.
/// Alpha is dropped.
pub fn decode_image(bytes: &[u8], shape: ImageShape) -> Result<Image> {
    let img = image::load_from_memory(bytes)?;
    let color = img.color().has_color();
    let raw = match (shape.channels, color) {
        (1, false) => {
            let g = img.into_luma8();
            RawImage::gray(g.width() as usize, g.height() as usize, g.into_raw())?
        }
        (3, true) => {
            let c = img.into_rgb8();
            RawImage::new(c.width() as usize, c.height() as usize, 3, c.into_raw())?
        }
        (c, _) => {
            return Err(Error::Shape(format!(
                "model takes {c}-channel images, got a {} image",
                if color { "color" } else { "grayscale" }
            )))
        }
    };
    let spec = PreprocessSpec {
        target: shape,
        ..PreprocessSpec::handwritten()
    };
    spec.apply_raw(&raw)
}

pub fn load_image(path: &Path, shape: ImageShape) -> Result<Image> {
    decode_image(&std::fs::read(path)?, shape).map_err(|e| Error::CorruptImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Tiles a batch row-major into `cols` columns with `pad` pixels of
/// background (-1) between and around cells.
pub fn tile(batch: &ImageBatch, cols: usize, pad: usize) -> Result<Image> {
    if batch.is_empty() || cols == 0 {
        return Err(Error::InvalidArgument("grid needs at least one image and one column".into()));
    }
    let s = batch.shape();
    let cols = cols.min(batch.len());
    let rows = batch.len().div_ceil(cols);
    let gw = cols * s.width + (cols + 1) * pad;
    let gh = rows * s.height + (rows + 1) * pad;
    let mut out = Image::filled(ImageShape::new(s.channels, gh, gw), -1.0);
    for k in 0..batch.len() {
        let (r, c) = (k / cols, k % cols);
        let (y0, x0) = (pad + r * (s.height + pad), pad + c * (s.width + pad));
        let src = batch.image_slice(k);
        for ch in 0..s.channels {
            for y in 0..s.height {
                let row = &src[(ch * s.height + y) * s.width..][..s.width];
                let dst = (ch * gh + y0 + y) * gw + x0;
                out.data[dst..dst + s.width].copy_from_slice(row);
            }
        }
    }
    Ok(out)
}
