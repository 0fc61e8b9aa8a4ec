//! 8-bit PNG encoding of image planes (RGB or single-channel).

use std::io::BufWriter;
use std::path::Path;

use placement_core::composer::ImagePlane;

use crate::error::{Error, Result};

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png(path: &Path, img: &ImagePlane) -> Result<()> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let color = match c {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => {
            return Err(Error::format(
                path,
                format!("cannot store {c} channels as PNG"),
            ))
        }
    };
    let mut bytes = Vec::with_capacity(h * w * c);
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                bytes.push(to_byte(img.get(ch, i, j)));
            }
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let file = std::fs::File::create(path).map_err(Error::io(path))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let encode = |e: png::EncodingError| Error::format(path, e.to_string());
    let mut writer = encoder.write_header().map_err(encode)?;
    writer.write_image_data(&bytes).map_err(encode)?;
    writer.finish().map_err(encode)
}

pub fn read_png(path: &Path) -> Result<ImagePlane> {
    let file = std::fs::File::open(path).map_err(Error::io(path))?;
    let decode = |e: png::DecodingError| Error::format(path, e.to_string());
    let mut reader = png::Decoder::new(std::io::BufReader::new(file))
        .read_info()
        .map_err(decode)?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(decode)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, "only 8-bit PNGs are supported"));
    }
    let c = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::format(
                path,
                format!("unsupported color type {other:?}"),
            ))
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    Ok(ImagePlane::from_fn(c, h, w, |ch, i, j| {
        f32::from(buf[i * stride + j * c + ch]) / 255.0
    }))
}
