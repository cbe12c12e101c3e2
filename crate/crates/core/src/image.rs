//! Plain raster buffers and their PNG encodings.

use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("png encoding failed: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decoding failed: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported png layout: {0}")]
    Unsupported(String),
}

/// 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage { width, height, data: vec![0; width * height * 3] }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Binary mask, row-major; `true` marks foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask { width, height, data: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Mask { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Depth in scene units, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Linear map of `[near, far]` onto `[0, 65535]`.
    pub fn quantize(&self, near: f64, far: f64) -> Vec<u16> {
        self.data
            .iter()
            .map(|&d| {
                let t = ((d - near) / (far - near)).clamp(0.0, 1.0);
                (t * 65535.0).round() as u16
            })
            .collect()
    }
}

fn encoder<W: Write>(w: W, width: usize, height: usize, color: png::ColorType, depth: png::BitDepth) -> png::Encoder<'static, W> {
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    enc.set_compression(png::Compression::Fast);
    enc
}

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    {
        let mut w = encoder(&mut out, img.width, img.height, png::ColorType::Rgb, png::BitDepth::Eight).write_header()?;
        w.write_image_data(&img.data)?;
    }
    Ok(out)
}

/// Masks are stored as 8-bit gray with values {0, 255}.
pub fn encode_mask_png(mask: &Mask) -> Result<Vec<u8>, ImageError> {
    let bytes: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_gray8_png(&bytes, mask.width, mask.height)
}

pub fn encode_gray8_png(bytes: &[u8], width: usize, height: usize) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    {
        let mut w = encoder(&mut out, width, height, png::ColorType::Grayscale, png::BitDepth::Eight).write_header()?;
        w.write_image_data(bytes)?;
    }
    Ok(out)
}

/// 16-bit grayscale; PNG stores samples big-endian.
pub fn encode_gray16_png(values: &[u16], width: usize, height: usize) -> Result<Vec<u8>, ImageError> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_be_bytes()).collect();
    let mut out = Vec::new();
    {
        let mut w = encoder(&mut out, width, height, png::ColorType::Grayscale, png::BitDepth::Sixteen).write_header()?;
        w.write_image_data(&bytes)?;
    }
    Ok(out)
}

/// A decoded PNG in its stored layout.
#[derive(Debug, Clone)]
pub struct DecodedPng {
    pub width: usize,
    pub height: usize,
    pub color: png::ColorType,
    pub bit_depth: png::BitDepth,
    pub bytes: Vec<u8>,
}

impl DecodedPng {
    pub fn channels(&self) -> usize {
        self.color.samples()
    }

    /// Gray16 samples, if that is the stored layout.
    pub fn gray16(&self) -> Option<Vec<u16>> {
        (self.color == png::ColorType::Grayscale && self.bit_depth == png::BitDepth::Sixteen).then(|| {
            self.bytes
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        })
    }

    /// Per-pixel intensity in [0, 1]: the first channel of 8-bit or 16-bit data.
    pub fn intensities(&self) -> Vec<f64> {
        let ch = self.channels();
        match self.bit_depth {
            png::BitDepth::Sixteen => self
                .bytes
                .chunks_exact(2 * ch)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
                .collect(),
            _ => self.bytes.chunks_exact(ch).map(|c| c[0] as f64 / 255.0).collect(),
        }
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<DecodedPng, ImageError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Unsupported("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    if !matches!(info.bit_depth, png::BitDepth::Eight | png::BitDepth::Sixteen) {
        return Err(ImageError::Unsupported(format!("bit depth {:?}", info.bit_depth)));
    }
    Ok(DecodedPng {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        bit_depth: info.bit_depth,
        bytes: buf,
    })
}

pub fn read_png(path: &Path) -> Result<DecodedPng, ImageError> {
    decode_png(&std::fs::read(path)?)
}

/// Reads a mask PNG, marking pixels whose intensity is at least `threshold` as foreground.
pub fn read_mask(path: &Path, threshold: f64) -> Result<Mask, ImageError> {
    let png = read_png(path)?;
    let data = png.intensities().into_iter().map(|v| v >= threshold).collect();
    Ok(Mask { width: png.width, height: png.height, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_png_round_trip() {
        let mask = Mask::from_fn(13, 7, |x, y| (x + y) % 3 == 0);
        let bytes = encode_mask_png(&mask).unwrap();
        let png = decode_png(&bytes[..]).unwrap();
        assert_eq!(png.color, png::ColorType::Grayscale);
        let back: Vec<bool> = png.bytes.iter().map(|&b| b == 255).collect();
        assert_eq!(back, mask.data);
        assert!(png.bytes.iter().all(|&b| b == 0 || b == 255));
    }

    #[test]
    fn depth_png_is_sixteen_bit() {
        let d = DepthMap { width: 3, height: 1, data: vec![0.1, 5.0, 10.0] };
        let q = d.quantize(0.1, 10.0);
        assert_eq!(q[0], 0);
        assert_eq!(q[2], 65535);
        let bytes = encode_gray16_png(&q, 3, 1).unwrap();
        let png = decode_png(&bytes[..]).unwrap();
        assert_eq!(png.bit_depth, png::BitDepth::Sixteen);
        assert_eq!(png.gray16().unwrap(), q);
    }
}
