//! Image decoding: PNM natively, PNG through the `image` crate.

use std::path::Path;

use keylearn::imagekit::{decode_image, RgbImage};
use keylearn::trainset::PNM_EXTENSIONS;
use keylearn::Error;

/// `None` for files that are not images.
pub fn decode(path: &Path) -> Option<keylearn::Result<RgbImage>> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    let is_png = ext == "png";
    if !is_png && !PNM_EXTENSIONS.contains(&ext.as_str()) {
        return None;
    }
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(source) => {
            return Some(Err(Error::Io {
                path: path.display().to_string(),
                source,
            }))
        }
    };
    if !is_png {
        return Some(decode_image(&bytes));
    }
    Some(
        image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
            .and_then(|img| {
                let rgb = img.to_rgb8();
                RgbImage::new(rgb.width() as usize, rgb.height() as usize, rgb.into_raw())
            }),
    )
}

pub fn load(path: &Path) -> keylearn::Result<RgbImage> {
    decode(path).unwrap_or_else(|| {
        Err(Error::Data(format!(
            "{}: unsupported image format (expected png, ppm, pgm or pnm)",
            path.display()
        )))
    })
}
