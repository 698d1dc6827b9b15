use std::cell::Cell;
use std::io::{BufRead, Cursor, Read, Seek, SeekFrom};

use super::{GrayImage, LabelMap, RgbImage};
use crate::error::{Error, Result};

/// Colors for classes `1..`, cycled when there are more than twelve classes.
/// Index 0 of an encoded label map is always black.
pub const CLASS_PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [170, 110, 40],
];

/// Decoded samples before normalization.
struct RawImage {
    width: usize,
    height: usize,
    samples: Vec<[u16; 3]>,
    max_value: u16,
}

/// Decodes a PNG or binary PPM (P6) into an [`RgbImage`] with channels in `[0, 1]`.
///
/// Alpha is dropped; grayscale is replicated into all three channels.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    let raw = decode_raw(bytes)?;
    let scale = f64::from(raw.max_value);
    let pixels = raw
        .samples
        .iter()
        .map(|s| s.map(|c| (f64::from(c) / scale).min(1.0)))
        .collect();
    RgbImage::new(raw.width, raw.height, pixels)
}

/// Decodes a single-channel 8-bit view of an image.
///
/// Color inputs are accepted only when every pixel is gray (R = G = B).
/// 16-bit samples keep their high byte.
pub fn decode_gray(bytes: &[u8]) -> Result<GrayImage> {
    let raw = decode_raw(bytes)?;
    let mut data = Vec::with_capacity(raw.samples.len());
    for (i, s) in raw.samples.iter().enumerate() {
        if s[0] != s[1] || s[1] != s[2] {
            return Err(Error::UnsupportedFormat(format!(
                "expected a grayscale image, pixel ({}, {}) is colored",
                i % raw.width,
                i / raw.width
            )));
        }
        let v = match raw.max_value {
            255 => s[0] as u8,
            65535 => (s[0] >> 8) as u8,
            m => ((u32::from(s[0]) * 255 + u32::from(m) / 2) / u32::from(m)) as u8,
        };
        data.push(v);
    }
    Ok(GrayImage {
        width: raw.width,
        height: raw.height,
        data,
    })
}

fn decode_raw(bytes: &[u8]) -> Result<RawImage> {
    if bytes.is_empty() {
        return Err(Error::Decode {
            offset: 0,
            reason: "empty input".into(),
        });
    }
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else {
        Err(Error::UnsupportedFormat(
            "not a PNG or binary PPM (P6) stream".into(),
        ))
    }
}

/// Cursor that remembers how far the decoder got, for error reporting.
struct Tracked<'a> {
    cur: Cursor<&'a [u8]>,
    high: &'a Cell<u64>,
}

impl Tracked<'_> {
    fn mark(&self) {
        self.high.set(self.high.get().max(self.cur.position()));
    }
}

impl Read for Tracked<'_> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.cur.read(buf)?;
        self.mark();
        Ok(n)
    }
}

impl BufRead for Tracked<'_> {
    fn fill_buf(&mut self) -> std::io::Result<&[u8]> {
        self.cur.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        self.cur.consume(amt);
        self.mark();
    }
}

impl Seek for Tracked<'_> {
    fn seek(&mut self, pos: SeekFrom) -> std::io::Result<u64> {
        self.cur.seek(pos)
    }
}

fn png_reader<'a>(
    bytes: &'a [u8],
    high: &'a Cell<u64>,
    transform: png::Transformations,
) -> Result<png::Reader<Tracked<'a>>> {
    let mut decoder = png::Decoder::new(Tracked {
        cur: Cursor::new(bytes),
        high,
    });
    decoder.set_transformations(transform);
    decoder.read_info().map_err(|e| png_error(e, high))
}

fn png_error(e: png::DecodingError, high: &Cell<u64>) -> Error {
    Error::Decode {
        offset: high.get() as usize,
        reason: e.to_string(),
    }
}

fn read_frame(reader: &mut png::Reader<Tracked<'_>>, high: &Cell<u64>) -> Result<Vec<u8>> {
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::UnsupportedFormat("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_error(e, high))?;
    buf.truncate(info.buffer_size());
    Ok(buf)
}

fn decode_png(bytes: &[u8]) -> Result<RawImage> {
    let high = Cell::new(0);
    let mut reader = png_reader(bytes, &high, png::Transformations::EXPAND)?;
    let buf = read_frame(&mut reader, &high)?;
    let (color, depth) = reader.output_color_type();
    let info = reader.info();
    let (width, height) = (info.width as usize, info.height as usize);

    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::UnsupportedFormat("unexpanded palette".into()))
        }
    };
    let (bytes_per_sample, max_value) = match depth {
        png::BitDepth::Eight => (1, 255),
        png::BitDepth::Sixteen => (2, 65535),
        d => {
            return Err(Error::UnsupportedFormat(format!(
                "unexpected output bit depth {d:?}"
            )))
        }
    };
    let stride = channels * bytes_per_sample;
    let sample = |px: &[u8], c: usize| -> u16 {
        if bytes_per_sample == 1 {
            u16::from(px[c])
        } else {
            u16::from_be_bytes([px[2 * c], px[2 * c + 1]])
        }
    };
    let samples = buf
        .chunks_exact(stride)
        .take(width * height)
        .map(|px| match channels {
            1 | 2 => [sample(px, 0); 3],
            _ => [sample(px, 0), sample(px, 1), sample(px, 2)],
        })
        .collect::<Vec<_>>();
    if samples.len() != width * height {
        return Err(Error::Decode {
            offset: high.get() as usize,
            reason: "image data shorter than header dimensions".into(),
        });
    }
    Ok(RawImage {
        width,
        height,
        samples,
        max_value,
    })
}

fn decode_ppm(bytes: &[u8]) -> Result<RawImage> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Decode {
                offset: pos,
                reason: "expected a decimal header field".into(),
            });
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(Error::Decode {
                offset: start,
                reason: "header field out of range".into(),
            })?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Decode {
            offset: pos,
            reason: "missing whitespace after header".into(),
        });
    }
    pos += 1;

    let [width, height, max_value] = fields;
    if max_value == 0 || max_value > 65535 {
        return Err(Error::Decode {
            offset: pos - 1,
            reason: format!("invalid maxval {max_value}"),
        });
    }
    let bps = if max_value < 256 { 1 } else { 2 };
    let need = width * height * 3 * bps;
    let data = &bytes[pos..];
    if data.len() < need {
        return Err(Error::Decode {
            offset: bytes.len(),
            reason: format!("truncated pixel data: need {need} bytes, have {}", data.len()),
        });
    }
    let samples = data[..need]
        .chunks_exact(3 * bps)
        .map(|px| {
            if bps == 1 {
                [px[0], px[1], px[2]].map(u16::from)
            } else {
                [0, 1, 2].map(|c| u16::from_be_bytes([px[2 * c], px[2 * c + 1]]))
            }
        })
        .collect::<Vec<_>>();
    if let Some(i) = samples
        .iter()
        .position(|s| s.iter().any(|&c| usize::from(c) > max_value))
    {
        return Err(Error::Decode {
            offset: pos + i * 3 * bps,
            reason: format!("sample exceeds maxval {max_value}"),
        });
    }
    Ok(RawImage {
        width,
        height,
        samples,
        max_value: max_value as u16,
    })
}

fn png_encoder(
    out: &mut Vec<u8>,
    width: usize,
    height: usize,
    color: png::ColorType,
) -> Result<png::Encoder<'_, &mut Vec<u8>>> {
    let (w, h) = (
        u32::try_from(width).map_err(|_| Error::Encode("width too large".into()))?,
        u32::try_from(height).map_err(|_| Error::Encode("height too large".into()))?,
    );
    let mut enc = png::Encoder::new(out, w, h);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    Ok(enc)
}

fn write_png(enc: png::Encoder<'_, &mut Vec<u8>>, data: &[u8]) -> Result<()> {
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Encode(e.to_string()))?;
    writer
        .write_image_data(data)
        .map_err(|e| Error::Encode(e.to_string()))?;
    writer.finish().map_err(|e| Error::Encode(e.to_string()))
}

/// Encodes a label map as an 8-bit indexed PNG whose pixel values are the
/// class ids. The palette has exactly `num_classes + 1` entries.
pub fn encode_labelmap(labels: &LabelMap) -> Result<Vec<u8>> {
    let c = labels.num_classes();
    if c > 255 {
        return Err(Error::TooManyClasses(c));
    }
    let mut palette = Vec::with_capacity(3 * (c + 1));
    palette.extend_from_slice(&[0, 0, 0]);
    for class in 0..c {
        palette.extend_from_slice(&CLASS_PALETTE[class % CLASS_PALETTE.len()]);
    }
    let data: Vec<u8> = labels.labels().iter().map(|&l| l as u8).collect();

    let mut out = Vec::new();
    let mut enc = png_encoder(&mut out, labels.width(), labels.height(), png::ColorType::Indexed)?;
    enc.set_palette(palette);
    write_png(enc, &data)?;
    Ok(out)
}

/// Inverse of [`encode_labelmap`]: the class count is recovered from the palette length.
pub fn decode_labelmap(bytes: &[u8]) -> Result<LabelMap> {
    let high = Cell::new(0);
    let mut reader = png_reader(bytes, &high, png::Transformations::IDENTITY)?;
    let buf = read_frame(&mut reader, &high)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Indexed || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(
            "label maps must be 8-bit indexed PNG".into(),
        ));
    }
    let entries = info.palette.as_ref().map_or(0, |p| p.len() / 3);
    if entries == 0 {
        return Err(Error::UnsupportedFormat("indexed PNG without palette".into()));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let labels = buf.iter().take(w * h).map(|&v| u16::from(v)).collect();
    LabelMap::new(w, h, labels, entries - 1)
}

/// Encodes an RGB image as an 8-bit truecolor PNG.
pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>> {
    let data: Vec<u8> = img.to_rgb8().into_iter().flatten().collect();
    let mut out = Vec::new();
    let enc = png_encoder(&mut out, img.width(), img.height(), png::ColorType::Rgb)?;
    write_png(enc, &data)?;
    Ok(out)
}

pub fn encode_gray_png(img: &GrayImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let enc = png_encoder(&mut out, img.width, img.height, png::ColorType::Grayscale)?;
    write_png(enc, &img.data)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_red_pixel_png() {
        let img = RgbImage::from_rgb8(1, 1, &[[255, 0, 0]]).unwrap();
        let png = encode_rgb_png(&img).unwrap();
        let back = decode_image(&png).unwrap();
        assert_eq!(back.width(), 1);
        assert_eq!(back.pixels(), &[[1.0, 0.0, 0.0]]);
    }

    #[test]
    fn ppm_two_pixels() {
        let mut bytes = b"P6 2 1 255\n".to_vec();
        bytes.extend_from_slice(&[0, 0, 0, 0xFF, 0xFF, 0xFF]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!(img.pixels(), &[[0.0; 3], [1.0; 3]]);
    }

    #[test]
    fn ppm_with_comment_and_16_bit() {
        let mut bytes = b"P6\n# made by hand\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0xFF, 0xFF, 0, 0, 0x80, 0x00]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!(img.pixels()[0][0], 1.0);
        assert_eq!(img.pixels()[0][1], 0.0);
        assert!((img.pixels()[0][2] - 32768.0 / 65535.0).abs() < 1e-15);
    }

    #[test]
    fn truncated_png_is_a_decode_error() {
        let img = RgbImage::filled(8, 8, [0.2, 0.4, 0.6]).unwrap();
        let png = encode_rgb_png(&img).unwrap();
        let cut = &png[..png.len() / 2];
        match decode_image(cut) {
            Err(Error::Decode { offset, .. }) => assert!(offset <= cut.len()),
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_ppm_names_offset() {
        let bytes = b"P6 2 2 255\n\x00\x00\x00".to_vec();
        assert!(matches!(
            decode_image(&bytes),
            Err(Error::Decode { offset: 14, .. })
        ));
        assert!(matches!(
            decode_image(b"P6 x"),
            Err(Error::Decode { offset: 3, .. })
        ));
    }

    #[test]
    fn unknown_format_and_empty_input() {
        assert!(matches!(
            decode_image(b"GIF89a"),
            Err(Error::UnsupportedFormat(_))
        ));
        assert!(matches!(decode_image(b""), Err(Error::Decode { .. })));
    }

    #[test]
    fn sixteen_bit_png_is_rescaled() {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, 1, 1);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[0xFF, 0xFF, 0x00, 0x00, 0x80, 0x00]).unwrap();
        w.finish().unwrap();
        let img = decode_image(&out).unwrap();
        assert_eq!(img.pixels()[0][0], 1.0);
        assert!((img.pixels()[0][2] - 32768.0 / 65535.0).abs() < 1e-15);
    }

    #[test]
    fn gray_and_rgba_inputs() {
        let gray = GrayImage {
            width: 2,
            height: 1,
            data: vec![64, 255],
        };
        let png = encode_gray_png(&gray).unwrap();
        assert_eq!(decode_gray(&png).unwrap(), gray);
        let rgb = decode_image(&png).unwrap();
        assert_eq!(rgb.pixels()[1], [1.0; 3]);

        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, 1, 1);
        enc.set_color(png::ColorType::Rgba);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[0, 255, 0, 7]).unwrap();
        w.finish().unwrap();
        assert_eq!(decode_image(&out).unwrap().pixels()[0], [0.0, 1.0, 0.0]);

        let colored = encode_rgb_png(&RgbImage::from_rgb8(1, 1, &[[1, 2, 3]]).unwrap()).unwrap();
        assert!(matches!(
            decode_gray(&colored),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn labelmap_single_pixel() {
        let map = LabelMap::new(1, 1, vec![1], 1).unwrap();
        let png = encode_labelmap(&map).unwrap();
        assert_eq!(decode_labelmap(&png).unwrap(), map);
    }

    #[test]
    fn labelmap_too_many_classes() {
        let map = LabelMap::new(1, 1, vec![300], 300).unwrap();
        assert!(matches!(
            encode_labelmap(&map),
            Err(Error::TooManyClasses(300))
        ));
    }

    #[test]
    fn indexed_png_decodes_as_color() {
        let map = LabelMap::new(2, 1, vec![0, 1], 1).unwrap();
        let img = decode_image(&encode_labelmap(&map).unwrap()).unwrap();
        assert_eq!(img.pixels()[0], [0.0; 3]);
        assert_eq!(img.to_rgb8()[1], CLASS_PALETTE[0]);
    }

    proptest! {
        #[test]
        fn labelmap_round_trip(
            classes in 1usize..=255,
            seed in proptest::collection::vec(0u16..=255, 256),
        ) {
            let labels = seed.iter().map(|&l| l % (classes as u16 + 1)).collect();
            let map = LabelMap::new(16, 16, labels, classes).unwrap();
            let back = decode_labelmap(&encode_labelmap(&map).unwrap()).unwrap();
            prop_assert_eq!(back, map);
        }
    }
}
