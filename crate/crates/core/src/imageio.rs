//! 8-bit PNG import/export for images in `[0, 1]` units.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

/// Quantizes a `[0, 1]` value to a byte (round to nearest, clamped).
pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes raw 8-bit pixels (1 or 3 channels, row-major) as PNG bytes.
pub fn encode_png(width: usize, height: usize, channels: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    let color = match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        c => return Err(Error::Shape(format!("PNG export supports 1, 3 or 4 channels, got {c}"))),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Format(format!("PNG header: {e}")))?;
        writer.write_image_data(pixels).map_err(|e| Error::Format(format!("PNG data: {e}")))?;
    }
    Ok(out)
}

/// Writes an image whose values are in `[0, 1]` (clamped) as an 8-bit PNG.
pub fn write_png<T: Scalar>(path: impl AsRef<Path>, img: &Tensor<T>) -> Result<()> {
    let (h, w, c) = img.image_dims()?;
    let bytes: Vec<u8> = img.data().iter().map(|v| to_byte(v.as_f64())).collect();
    std::fs::write(path, encode_png(w, h, c, &bytes)?)?;
    Ok(())
}

/// Decodes a PNG into an RGB image in `[0, 1]`. Grey images are replicated to
/// three channels and alpha is dropped.
pub fn decode_png<T: Scalar>(bytes: &[u8]) -> std::result::Result<Tensor<T>, String> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(|e| e.to_string())?;
    let size = reader.output_buffer_size().ok_or("PNG too large")?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src_c = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err("indexed PNG not expanded".into()),
    };
    let mut data = Vec::with_capacity(w * h * 3);
    for px in buf[..info.line_size * h].chunks(info.line_size).flat_map(|row| row[..w * src_c].chunks(src_c)) {
        let rgb = if src_c < 3 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
        data.extend(rgb.iter().map(|&b| T::lit(b as f64 / 255.0)));
    }
    Tensor::image(h, w, 3, data).map_err(|e| e.to_string())
}

pub fn read_png<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    decode_png(&bytes).map_err(|e| Error::Data(format!("cannot decode '{}': {e}", path.display())))
}
