//! Baseline TIFF reading and writing.
//!
//! Reading goes through the `tiff` crate (strips, tiles, deflate). Writing is
//! done here so the byte layout is fixed: little-endian, one uncompressed
//! strip, image data at offset 8, IFD after the data.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::tags::Tag;
use tiff::{ColorType, TiffError};

use super::{RasterImage, Units};
use crate::error::{PicsError, Result};

const TAG_IMAGE_WIDTH: u16 = 256;
const TAG_IMAGE_LENGTH: u16 = 257;
const TAG_BITS_PER_SAMPLE: u16 = 258;
const TAG_COMPRESSION: u16 = 259;
const TAG_PHOTOMETRIC: u16 = 262;
const TAG_STRIP_OFFSETS: u16 = 273;
const TAG_SAMPLES_PER_PIXEL: u16 = 277;
const TAG_ROWS_PER_STRIP: u16 = 278;
const TAG_STRIP_BYTE_COUNTS: u16 = 279;
const TAG_PLANAR_CONFIG: u16 = 284;
const TAG_COLOR_MAP: u16 = 320;
const TAG_SAMPLE_FORMAT: u16 = 339;

const TYPE_SHORT: u16 = 3;
const TYPE_LONG: u16 = 4;

const COMPRESSION_NONE: u32 = 1;
const COMPRESSION_DEFLATE: u32 = 8;
const COMPRESSION_DEFLATE_OLD: u32 = 32946;

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = 3 * (row * self.width + col);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

struct Entry {
    tag: u16,
    kind: u16,
    count: u32,
    bytes: Vec<u8>,
}

impl Entry {
    fn short(tag: u16, v: u16) -> Self {
        Self::shorts(tag, &[v])
    }

    fn shorts(tag: u16, vs: &[u16]) -> Self {
        Self {
            tag,
            kind: TYPE_SHORT,
            count: vs.len() as u32,
            bytes: vs.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    fn long(tag: u16, v: u32) -> Self {
        Self {
            tag,
            kind: TYPE_LONG,
            count: 1,
            bytes: v.to_le_bytes().to_vec(),
        }
    }
}

fn encode_tiff(
    height: usize,
    width: usize,
    data: &[u8],
    mut entries: Vec<Entry>,
) -> Result<Vec<u8>> {
    let data_len = u32::try_from(data.len())
        .map_err(|_| PicsError::UnsupportedFormat("image larger than 4 GiB".into()))?;
    entries.push(Entry::long(TAG_IMAGE_WIDTH, width as u32));
    entries.push(Entry::long(TAG_IMAGE_LENGTH, height as u32));
    entries.push(Entry::short(TAG_COMPRESSION, COMPRESSION_NONE as u16));
    entries.push(Entry::long(TAG_STRIP_OFFSETS, 8));
    entries.push(Entry::long(TAG_ROWS_PER_STRIP, height as u32));
    entries.push(Entry::long(TAG_STRIP_BYTE_COUNTS, data_len));
    entries.push(Entry::short(TAG_PLANAR_CONFIG, 1));
    entries.sort_by_key(|e| e.tag);

    let mut out = Vec::with_capacity(data.len() + 512);
    out.extend_from_slice(b"II");
    out.extend_from_slice(&42u16.to_le_bytes());
    let ifd_offset = (8 + data.len() + 1) & !1;
    out.extend_from_slice(&(ifd_offset as u32).to_le_bytes());
    out.extend_from_slice(data);
    out.resize(ifd_offset, 0);

    let ifd_len = 2 + 12 * entries.len() + 4;
    let mut extra_offset = ifd_offset + ifd_len;
    let mut extra = Vec::new();
    out.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    for e in &entries {
        out.extend_from_slice(&e.tag.to_le_bytes());
        out.extend_from_slice(&e.kind.to_le_bytes());
        out.extend_from_slice(&e.count.to_le_bytes());
        if e.bytes.len() <= 4 {
            let mut v = [0u8; 4];
            v[..e.bytes.len()].copy_from_slice(&e.bytes);
            out.extend_from_slice(&v);
        } else {
            out.extend_from_slice(&(extra_offset as u32).to_le_bytes());
            extra.extend_from_slice(&e.bytes);
            if extra.len() % 2 == 1 {
                extra.push(0);
            }
            extra_offset = ifd_offset + ifd_len + extra.len();
        }
    }
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&extra);
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| PicsError::io(path, e))?;
    f.write_all(bytes).map_err(|e| PicsError::io(path, e))?;
    Ok(())
}

/// Writes a 32-bit float grayscale TIFF.
pub fn save_raster(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let data: Vec<u8> = img
        .pixels()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect();
    let entries = vec![
        Entry::short(TAG_BITS_PER_SAMPLE, 32),
        Entry::short(TAG_PHOTOMETRIC, 1),
        Entry::short(TAG_SAMPLES_PER_PIXEL, 1),
        Entry::short(TAG_SAMPLE_FORMAT, 3),
    ];
    let bytes = encode_tiff(img.height(), img.width(), &data, entries)?;
    write_file(path.as_ref(), &bytes)
}

/// Writes an 8-bit RGB TIFF.
pub fn save_rgb8(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let entries = vec![
        Entry::shorts(TAG_BITS_PER_SAMPLE, &[8, 8, 8]),
        Entry::short(TAG_PHOTOMETRIC, 2),
        Entry::short(TAG_SAMPLES_PER_PIXEL, 3),
        Entry::shorts(TAG_SAMPLE_FORMAT, &[1, 1, 1]),
    ];
    let bytes = encode_tiff(img.height, img.width, &img.data, entries)?;
    write_file(path.as_ref(), &bytes)
}

/// Writes an 8-bit paletted TIFF; `palette` maps index to RGB (unlisted
/// entries are black).
pub fn save_palette_u8(
    height: usize,
    width: usize,
    indices: &[u8],
    palette: &[[u8; 3]],
    path: impl AsRef<Path>,
) -> Result<()> {
    if indices.len() != height * width {
        return Err(PicsError::ShapeMismatch(format!(
            "{} indices for a {height}x{width} image",
            indices.len()
        )));
    }
    // TIFF colormaps are 16-bit, all reds then all greens then all blues.
    let mut map = vec![0u16; 3 * 256];
    for (i, rgb) in palette.iter().take(256).enumerate() {
        for ch in 0..3 {
            map[ch * 256 + i] = u16::from(rgb[ch]) * 257;
        }
    }
    let entries = vec![
        Entry::short(TAG_BITS_PER_SAMPLE, 8),
        Entry::short(TAG_PHOTOMETRIC, 3),
        Entry::short(TAG_SAMPLES_PER_PIXEL, 1),
        Entry::short(TAG_SAMPLE_FORMAT, 1),
        Entry::shorts(TAG_COLOR_MAP, &map),
    ];
    let bytes = encode_tiff(height, width, indices, entries)?;
    write_file(path.as_ref(), &bytes)
}

fn map_tiff_err(path: &Path, e: TiffError) -> PicsError {
    match e {
        TiffError::IoError(io) => PicsError::io(path, io),
        TiffError::UnsupportedError(u) => PicsError::UnsupportedFormat(u.to_string()),
        TiffError::FormatError(f) => PicsError::CorruptHeader(f.to_string()),
        other => PicsError::CorruptHeader(other.to_string()),
    }
}

fn open_decoder(path: &Path) -> Result<Decoder<BufReader<File>>> {
    let f = File::open(path).map_err(|e| PicsError::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(f))
        .map_err(|e| map_tiff_err(path, e))?
        .with_limits(Limits::unlimited());
    let compression = dec
        .find_tag_unsigned::<u32>(Tag::Compression)
        .map_err(|e| map_tiff_err(path, e))?
        .unwrap_or(COMPRESSION_NONE);
    if !matches!(
        compression,
        COMPRESSION_NONE | COMPRESSION_DEFLATE | COMPRESSION_DEFLATE_OLD
    ) {
        return Err(PicsError::UnsupportedFormat(format!(
            "compression scheme {compression}"
        )));
    }
    Ok(dec)
}

/// Reads a grayscale float32 or uint16 TIFF into a 64-bit raster.
///
/// 16-bit samples keep their raw counts (0..=65535).
pub fn load_raster(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let mut dec = open_decoder(path)?;
    let (w, h) = dec.dimensions().map_err(|e| map_tiff_err(path, e))?;
    let color = dec.colortype().map_err(|e| map_tiff_err(path, e))?;
    if !matches!(color, ColorType::Gray(16) | ColorType::Gray(32)) {
        return Err(PicsError::UnsupportedFormat(format!(
            "{color:?}; expected 16-bit or float32 grayscale"
        )));
    }
    let pixels: Vec<f64> = match dec.read_image().map_err(|e| map_tiff_err(path, e))? {
        DecodingResult::F32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f64::from).collect(),
        _ => {
            return Err(PicsError::UnsupportedFormat(
                "32-bit integer samples".into(),
            ))
        }
    };
    let units = Units::IntensityAu;
    RasterImage::new(h as usize, w as usize, pixels, units).map_err(|e| match e {
        PicsError::ShapeMismatch(m) => PicsError::CorruptHeader(m),
        other => other,
    })
}

/// Reads an 8-bit single-sample TIFF (grayscale or paletted) as raw indices.
pub fn load_u8_raster(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let mut dec = open_decoder(path)?;
    let (w, h) = dec.dimensions().map_err(|e| map_tiff_err(path, e))?;
    let (h, w) = (h as usize, w as usize);
    let photometric = dec
        .find_tag_unsigned::<u32>(Tag::PhotometricInterpretation)
        .map_err(|e| map_tiff_err(path, e))?;
    let bits = dec
        .find_tag_unsigned_vec::<u32>(Tag::BitsPerSample)
        .map_err(|e| map_tiff_err(path, e))?
        .unwrap_or_else(|| vec![1]);
    if photometric != Some(3) || bits != [8] {
        let color = dec.colortype().map_err(|e| map_tiff_err(path, e))?;
        if color != ColorType::Gray(8) {
            return Err(PicsError::UnsupportedFormat(format!(
                "{color:?}; expected 8-bit single channel"
            )));
        }
        return match dec.read_image().map_err(|e| map_tiff_err(path, e))? {
            DecodingResult::U8(v) if v.len() == w * h => Ok((h, w, v)),
            _ => Err(PicsError::CorruptHeader("unexpected sample layout".into())),
        };
    }
    // The decoder does not expand palettes; uncompressed strips are read raw.
    let compression = dec
        .find_tag_unsigned::<u32>(Tag::Compression)
        .map_err(|e| map_tiff_err(path, e))?
        .unwrap_or(COMPRESSION_NONE);
    if compression != COMPRESSION_NONE {
        return Err(PicsError::UnsupportedFormat(
            "compressed paletted TIFF".into(),
        ));
    }
    let offsets = dec
        .get_tag_u64_vec(Tag::StripOffsets)
        .map_err(|e| map_tiff_err(path, e))?;
    let counts = dec
        .get_tag_u64_vec(Tag::StripByteCounts)
        .map_err(|e| map_tiff_err(path, e))?;
    let file = std::fs::read(path).map_err(|e| PicsError::io(path, e))?;
    let mut data = Vec::with_capacity(w * h);
    for (&off, &len) in offsets.iter().zip(&counts) {
        let (off, len) = (off as usize, len as usize);
        let chunk = file
            .get(off..off + len)
            .ok_or_else(|| PicsError::CorruptHeader("strip outside file".into()))?;
        data.extend_from_slice(chunk);
    }
    if data.len() < w * h {
        return Err(PicsError::CorruptHeader("short pixel data".into()));
    }
    data.truncate(w * h);
    Ok((h, w, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_raster_round_trip_and_zero_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.tif");
        let img = RasterImage::zeros(4, 4, Units::Radians);
        save_raster(&img, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"II*\0");
        assert!(bytes[8..8 + 64].iter().all(|&b| b == 0));
        let back = load_raster(&p).unwrap();
        assert_eq!(back.dims(), (4, 4));
        assert!(back.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_float32_values_survive() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.tif");
        save_raster(&RasterImage::filled(3, 5, 1.5, Units::Radians), &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        for chunk in bytes[8..8 + 60].chunks(4) {
            assert_eq!(f32::from_le_bytes(chunk.try_into().unwrap()), 1.5);
        }
        assert!(load_raster(&p).unwrap().pixels().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn random_round_trip_is_float32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.tif");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = RasterImage::from_fn(32, 32, Units::Radians, |_, _| rng.random_range(-5.0..5.0));
        save_raster(&img, &p).unwrap();
        let back = load_raster(&p).unwrap();
        for (&a, &b) in img.pixels().iter().zip(back.pixels()) {
            assert_eq!(b, f64::from(a as f32));
        }
        // a second pass is bit-identical
        save_raster(&back, &p).unwrap();
        assert_eq!(load_raster(&p).unwrap(), back.with_units(Units::IntensityAu));
    }

    #[test]
    fn reads_u16_via_external_encoder() {
        use tiff::encoder::{colortype, TiffEncoder};
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u16.tif");
        let data: Vec<u16> = vec![0, 1, 65535, 1234];
        {
            let f = File::create(&p).unwrap();
            let mut enc = TiffEncoder::new(f).unwrap();
            enc.write_image::<colortype::Gray16>(2, 2, &data).unwrap();
        }
        let img = load_raster(&p).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0, 65535.0, 1234.0]);
    }

    #[test]
    fn rejects_rgb_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.tif");
        save_rgb8(&RgbImage::new(2, 2), &p).unwrap();
        assert!(matches!(
            load_raster(&p),
            Err(PicsError::UnsupportedFormat(_))
        ));
        let g = dir.path().join("garbage.tif");
        std::fs::write(&g, b"not a tiff at all").unwrap();
        assert!(matches!(load_raster(&g), Err(PicsError::CorruptHeader(_))));
    }

    #[test]
    fn palette_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("seg.tif");
        let idx = vec![0u8, 1, 2, 3, 3, 0];
        save_palette_u8(2, 3, &idx, &[[0, 0, 0], [0, 255, 0], [255, 0, 0], [0, 0, 255]], &p)
            .unwrap();
        let (h, w, back) = load_u8_raster(&p).unwrap();
        assert_eq!((h, w), (2, 3));
        assert_eq!(back, idx);
    }
}
