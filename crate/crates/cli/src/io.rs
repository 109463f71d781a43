//! File ingestion and crash-safe output writing.

use std::io::Cursor;
use std::path::Path;

use image::ImageReader;
use oddspot_core::image::MultiChannelImage;

use crate::Failure;

/// Loads a PNG (8- or 16-bit, gray or color) as a 3-channel image with
/// values in [0, 255]. 8-bit samples map to their exact integer values.
pub fn load_png(path: &Path) -> Result<MultiChannelImage, Failure> {
    let decoded = ImageReader::open(path)
        .map_err(|e| Failure::input(format!("cannot open {}: {e}", path.display())))?
        .decode()
        .map_err(|e| Failure::input(format!("cannot decode {}: {e}", path.display())))?;
    let rgb = decoded.to_rgb16();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut img = MultiChannelImage::new(w, h, 3)
        .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            // 16-bit samples span [0, 65535] = 257 * [0, 255]
            img.set(x as usize, y as usize, c, f64::from(px[c]) / 257.0);
        }
    }
    Ok(img)
}

/// Writes a whole file atomically: a temporary sibling gets the bytes,
/// then rename replaces the target in one step.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".tmp-{name}"));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

/// Encodes an RGB byte image as PNG and writes it atomically.
pub fn write_png_atomic(path: &Path, rgb: &image::RgbImage) -> Result<(), Failure> {
    let mut bytes = Vec::new();
    rgb.write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Failure::input(format!("cannot encode {}: {e}", path.display())))?;
    atomic_write(path, &bytes)
        .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}
