//! 8-bit RGB PNG images.

use std::path::Path;

use radmap_core::Image;

use crate::error::{self, Error, Result};

/// Byte for a value in `[0, 1]`: clamped, scaled by 255, rounded half away
/// from zero.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::Validation(format!("cannot encode PNG: {e}")))?;
        let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
        w.write_image_data(&bytes)
            .map_err(|e| Error::Validation(format!("cannot encode PNG: {e}")))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let dec = png::Decoder::new(bytes);
    let mut reader = dec.read_info().map_err(|e| Error::Format(format!("invalid PNG: {e}")))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "unsupported PNG: {:?} at {:?} bits, expected 8-bit RGB",
            info.color_type, info.bit_depth
        )));
    }
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("invalid PNG: {e}")))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let mut img = Image::new(w, h);
    for r in 0..h {
        let row = &buf[r * frame.line_size..r * frame.line_size + 3 * w];
        for (k, &b) in row.iter().enumerate() {
            img.data[r * 3 * w + k] = b as f64 / 255.0;
        }
    }
    Ok(img)
}

pub fn load_png(path: &Path) -> Result<Image> {
    decode_png(&error::read(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    error::write(path, &encode_png(img)?)
}

/// Width and height from the header alone.
pub fn png_size(path: &Path) -> Result<(usize, usize)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = png::Decoder::new(std::io::BufReader::new(file))
        .read_info()
        .map_err(|e| Error::Format(format!("{}: invalid PNG: {e}", path.display())))?;
    let info = reader.info();
    Ok((info.width as usize, info.height as usize))
}
