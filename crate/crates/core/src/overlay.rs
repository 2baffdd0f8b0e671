//! RGBA overlay textures, mip pyramids, tile extraction and PNG coding.
//!
//! Textures hold straight (non-premultiplied) 8-bit RGBA. Pyramid levels are
//! averaged in premultiplied space so transparent texels do not darken their
//! neighbors.

use std::io::Cursor;

use serde::{Deserialize, Serialize};

use crate::dem::DemGrid;
use crate::simulate::RunoutRaster;
use crate::terrain::NormalField;

/// Largest texture edge, in pixels.
pub const MAX_TEXTURE_SIZE: usize = 8192;
pub const DEFAULT_TILE_PX: usize = 256;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum OverlayError {
    #[error("texture {width}x{height} exceeds the {MAX_TEXTURE_SIZE}x{MAX_TEXTURE_SIZE} texture limit")]
    TooLarge { width: usize, height: usize },
    #[error("invalid texture: {0}")]
    Invalid(String),
    #[error("invalid colormap: {0}")]
    Colormap(String),
    #[error("cannot colorize: {0}")]
    Colorize(String),
    #[error("zoom {zoom} beyond pyramid depth (max {max_zoom})")]
    ZoomTooDeep { zoom: u32, max_zoom: u32 },
    #[error("tile ({tx}, {ty}) outside zoom {zoom}")]
    TileOutOfRange { zoom: u32, tx: u32, ty: u32 },
    #[error("png encode: {0}")]
    Encode(String),
    #[error("png decode: {0}")]
    Decode(String),
}

pub fn check_texture_size(width: usize, height: usize) -> Result<(), OverlayError> {
    if width > MAX_TEXTURE_SIZE || height > MAX_TEXTURE_SIZE {
        return Err(OverlayError::TooLarge { width, height });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlayTexture {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl OverlayTexture {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, OverlayError> {
        check_texture_size(width, height)?;
        if width == 0 || height == 0 {
            return Err(OverlayError::Invalid(format!("empty texture {width}x{height}")));
        }
        if pixels.len() != width * height * 4 {
            return Err(OverlayError::Invalid(format!(
                "expected {} bytes, got {}",
                width * height * 4,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn transparent(width: usize, height: usize) -> Result<Self, OverlayError> {
        Self::new(width, height, vec![0; width * height * 4])
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 4] {
        let i = (y * self.width + x) * 4;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2], self.pixels[i + 3]]
    }

    /// Mean of `c * a / 255` per color channel plus mean alpha, in 8-bit units.
    pub fn premultiplied_mean(&self) -> [f64; 4] {
        let mut acc = [0.0f64; 4];
        for p in self.pixels.chunks_exact(4) {
            let a = p[3] as f64;
            for k in 0..3 {
                acc[k] += p[k] as f64 * a / 255.0;
            }
            acc[3] += a;
        }
        let n = (self.width * self.height) as f64;
        acc.map(|v| v / n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorStop {
    pub value: f64,
    pub color: [u8; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Colormap {
    stops: Vec<ColorStop>,
    pub zero_transparent: bool,
}

impl Colormap {
    pub fn new(stops: Vec<ColorStop>, zero_transparent: bool) -> Result<Self, OverlayError> {
        if stops.len() < 2 {
            return Err(OverlayError::Colormap("need at least two stops".into()));
        }
        if stops.first().map(|s| s.value) != Some(0.0) || stops.last().map(|s| s.value) != Some(1.0) {
            return Err(OverlayError::Colormap("stops must span 0 to 1".into()));
        }
        if stops.windows(2).any(|w| w[0].value.partial_cmp(&w[1].value).is_none_or(|o| o.is_gt())) {
            return Err(OverlayError::Colormap("stops must be sorted".into()));
        }
        Ok(Self {
            stops,
            zero_transparent,
        })
    }

    pub fn stops(&self) -> &[ColorStop] {
        &self.stops
    }

    /// Blue, cyan, yellow, red: low to high vertical displacement.
    pub fn velocity() -> Self {
        let stop = |value, color| ColorStop { value, color };
        Self::new(
            vec![
                stop(0.0, [40, 60, 200, 255]),
                stop(0.33, [0, 200, 230, 255]),
                stop(0.66, [250, 220, 30, 255]),
                stop(1.0, [220, 20, 30, 255]),
            ],
            true,
        )
        .expect("valid built-in colormap")
    }

    /// Color at normalized `t`, clamped to `[0, 1]`.
    pub fn sample(&self, t: f64) -> [u8; 4] {
        let t = t.clamp(0.0, 1.0);
        let hi = self
            .stops
            .iter()
            .position(|s| s.value >= t)
            .unwrap_or(self.stops.len() - 1)
            .max(1);
        let (a, b) = (self.stops[hi - 1], self.stops[hi]);
        let span = b.value - a.value;
        let f = if span > 0.0 { (t - a.value) / span } else { 1.0 };
        std::array::from_fn(|k| {
            let (ca, cb) = (a.color[k] as f64, b.color[k] as f64);
            (ca + f * (cb - ca)).round().clamp(0.0, 255.0) as u8
        })
    }
}

/// Maps `z_delta_max` normalized by its maximum through `cmap`.
pub fn colorize(raster: &RunoutRaster, cmap: &Colormap) -> Result<OverlayTexture, OverlayError> {
    if raster.z_delta_max.is_empty() || raster.ncols * raster.nrows != raster.z_delta_max.len() {
        return Err(OverlayError::Colorize("empty raster".into()));
    }
    check_texture_size(raster.ncols, raster.nrows)?;
    let max = raster.z_delta_max_global();
    if max <= 0.0 && !cmap.zero_transparent {
        return Err(OverlayError::Colorize(
            "raster maximum is zero and zero values are not transparent".into(),
        ));
    }
    let mut pixels = Vec::with_capacity(raster.z_delta_max.len() * 4);
    for &z in &raster.z_delta_max {
        if z <= 0.0 && cmap.zero_transparent {
            pixels.extend_from_slice(&[0, 0, 0, 0]);
        } else {
            let t = if max > 0.0 { z / max } else { 0.0 };
            pixels.extend_from_slice(&cmap.sample(t));
        }
    }
    OverlayTexture::new(raster.ncols, raster.nrows, pixels)
}

/// Gray, opaque hillshade lit from `azimuth_deg` (clockwise from north) at
/// `altitude_deg` above the horizon.
pub fn hillshade(
    normals: &NormalField,
    azimuth_deg: f64,
    altitude_deg: f64,
) -> Result<OverlayTexture, OverlayError> {
    check_texture_size(normals.ncols, normals.nrows)?;
    let (az, alt) = (azimuth_deg.to_radians(), altitude_deg.to_radians());
    let light = [az.sin() * alt.cos(), az.cos() * alt.cos(), alt.sin()];
    let mut pixels = Vec::with_capacity(normals.normals.len() * 4);
    for n in &normals.normals {
        let shade = (n[0] * light[0] + n[1] * light[1] + n[2] * light[2]).max(0.0);
        let v = (255.0 * shade).round() as u8;
        pixels.extend_from_slice(&[v, v, v, 255]);
    }
    OverlayTexture::new(normals.ncols, normals.nrows, pixels)
}

/// Level 0 is full resolution; every further level halves both axes
/// (rounding up) down to 1x1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipPyramid {
    levels: Vec<OverlayTexture>,
}

impl MipPyramid {
    pub fn levels(&self) -> &[OverlayTexture] {
        &self.levels
    }

    pub fn base(&self) -> &OverlayTexture {
        &self.levels[0]
    }

    /// Deepest tile zoom: the smallest `z` with `tile_px * 2^z` covering the
    /// base texture.
    pub fn max_zoom(&self, tile_px: usize) -> u32 {
        let edge = self.base().width.max(self.base().height);
        let mut z = 0;
        while tile_px << z < edge {
            z += 1;
        }
        z
    }
}

pub fn level_count(width: usize, height: usize) -> usize {
    let edge = width.max(height).max(1);
    1 + (usize::BITS - (edge - 1).leading_zeros()) as usize
}

/// Premultiplied texel at full precision: alpha and `c * a` per channel.
type Premul = [f64; 4];

fn quantize(p: &Premul) -> [u8; 4] {
    let a = p[3].round().clamp(0.0, 255.0);
    if a == 0.0 {
        return [0; 4];
    }
    let c = |v: f64| (v / a).round().clamp(0.0, 255.0) as u8;
    [c(p[0]), c(p[1]), c(p[2]), a as u8]
}

pub fn build_mipmap(tex: &OverlayTexture) -> MipPyramid {
    let mut levels = vec![tex.clone()];
    let (mut w, mut h) = (tex.width, tex.height);
    let mut cur: Vec<Premul> = tex
        .pixels
        .chunks_exact(4)
        .map(|p| {
            let a = p[3] as f64;
            [p[0] as f64 * a, p[1] as f64 * a, p[2] as f64 * a, a]
        })
        .collect();
    // Levels are chained at full precision (exact: only sums of four and
    // divisions by four) and rounded once each for output.
    while w > 1 || h > 1 {
        let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
        let mut next = Vec::with_capacity(nw * nh);
        for y in 0..nh {
            let (y0, y1) = (2 * y, (2 * y + 1).min(h - 1));
            for x in 0..nw {
                let (x0, x1) = (2 * x, (2 * x + 1).min(w - 1));
                let (a, b, c, d) = (cur[y0 * w + x0], cur[y0 * w + x1], cur[y1 * w + x0], cur[y1 * w + x1]);
                next.push(std::array::from_fn(|k| (a[k] + b[k] + c[k] + d[k]) / 4.0));
            }
        }
        let pixels = next.iter().flat_map(quantize).collect();
        levels.push(OverlayTexture {
            width: nw,
            height: nh,
            pixels,
        });
        cur = next;
        w = nw;
        h = nh;
    }
    debug_assert_eq!(levels.len(), level_count(tex.width, tex.height));
    MipPyramid { levels }
}

/// `tile_px`-square crop of the pyramid level matching `zoom`, padded with
/// transparent black past the texture edge.
pub fn extract_tile(
    pyr: &MipPyramid,
    zoom: u32,
    tx: u32,
    ty: u32,
    tile_px: usize,
) -> Result<OverlayTexture, OverlayError> {
    let max_zoom = pyr.max_zoom(tile_px);
    if zoom > max_zoom {
        return Err(OverlayError::ZoomTooDeep { zoom, max_zoom });
    }
    let n = 1u64 << zoom;
    if tx as u64 >= n || ty as u64 >= n {
        return Err(OverlayError::TileOutOfRange { zoom, tx, ty });
    }
    let level = &pyr.levels[(max_zoom - zoom) as usize];
    let mut pixels = vec![0u8; tile_px * tile_px * 4];
    let x0 = tx as usize * tile_px;
    let y0 = ty as usize * tile_px;
    if x0 < level.width && y0 < level.height {
        let cols = tile_px.min(level.width - x0);
        for row in 0..tile_px.min(level.height - y0) {
            let src = ((y0 + row) * level.width + x0) * 4;
            let dst = row * tile_px * 4;
            pixels[dst..dst + cols * 4].copy_from_slice(&level.pixels[src..src + cols * 4]);
        }
    }
    OverlayTexture::new(tile_px, tile_px, pixels)
}

pub fn encode_png(tex: &OverlayTexture) -> Result<Vec<u8>, OverlayError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, tex.width as u32, tex.height as u32);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| OverlayError::Encode(e.to_string()))?;
        writer
            .write_image_data(&tex.pixels)
            .map_err(|e| OverlayError::Encode(e.to_string()))?;
        writer.finish().map_err(|e| OverlayError::Encode(e.to_string()))?;
    }
    Ok(out)
}

/// Decodes 8-bit PNGs; gray and RGB inputs are expanded to RGBA.
pub fn decode_png(bytes: &[u8]) -> Result<OverlayTexture, OverlayError> {
    let err = |e: png::DecodingError| OverlayError::Decode(e.to_string());
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| OverlayError::Decode("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(err)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(OverlayError::Decode(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let data = &buf[..info.buffer_size()];
    let pixels = match info.color_type {
        png::ColorType::Rgba => data.to_vec(),
        png::ColorType::Rgb => data.chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect(),
        png::ColorType::GrayscaleAlpha => data.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0], p[1]]).collect(),
        png::ColorType::Grayscale => data.iter().flat_map(|&v| [v, v, v, 255]).collect(),
        other => return Err(OverlayError::Decode(format!("unsupported color type {other:?}"))),
    };
    OverlayTexture::new(info.width as usize, info.height as usize, pixels)
}

/// Opaque grayscale rendering of a DEM for previews.
pub fn grid_hillshade(grid: &DemGrid) -> Result<OverlayTexture, crate::Error> {
    let normals = crate::terrain::compute_normals(grid)?;
    Ok(hillshade(&normals, 315.0, 45.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raster(values: Vec<f64>, ncols: usize) -> RunoutRaster {
        let nrows = values.len() / ncols;
        RunoutRaster {
            ncols,
            nrows,
            origin_x: 0.0,
            origin_y: 0.0,
            cellsize: 1.0,
            hit_count: values.iter().map(|&v| (v > 0.0) as u32).collect(),
            z_delta_max: values,
            particles: 0,
            total_steps: 0,
        }
    }

    fn blue_red() -> Colormap {
        Colormap::new(
            vec![
                ColorStop { value: 0.0, color: [0, 0, 255, 255] },
                ColorStop { value: 1.0, color: [255, 0, 0, 255] },
            ],
            true,
        )
        .unwrap()
    }

    #[test]
    fn texture_cap_is_enforced() {
        assert!(matches!(
            OverlayTexture::transparent(8193, 1),
            Err(OverlayError::TooLarge { width: 8193, height: 1 })
        ));
        assert!(OverlayTexture::transparent(1, 8193).is_err());
        assert!(check_texture_size(8192, 8192).is_ok());
        assert!(OverlayTexture::new(2, 2, vec![0; 15]).is_err());
    }

    #[test]
    fn colorize_cases() {
        let t = colorize(&raster(vec![0.0; 6], 3), &blue_red()).unwrap();
        assert!(t.pixels().iter().all(|&v| v == 0));

        let t = colorize(&raster(vec![0.0, 2.0, 4.0, 1.0], 2), &blue_red()).unwrap();
        assert_eq!(t.pixel(0, 1), [255, 0, 0, 255]);
        // Scalar interpolation oracle at t = 0.5.
        let mid = |a: f64, b: f64| (a + 0.5 * (b - a)).round() as u8;
        assert_eq!(t.pixel(1, 0), [mid(0.0, 255.0), 0, mid(255.0, 0.0), 255]);
        assert_eq!(t.pixel(0, 0)[3], 0);

        let opaque = Colormap::new(blue_red().stops().to_vec(), false).unwrap();
        assert!(colorize(&raster(vec![0.0; 4], 2), &opaque).is_err());
        assert!(Colormap::new(vec![ColorStop { value: 0.0, color: [0; 4] }], true).is_err());
    }

    #[test]
    fn colormap_hits_stops() {
        let m = Colormap::velocity();
        for s in m.stops() {
            assert_eq!(m.sample(s.value), s.color);
        }
    }

    #[test]
    fn mip_of_2x2_averages() {
        let tex = OverlayTexture::new(
            2,
            2,
            vec![255, 255, 255, 0, 255, 255, 255, 64, 255, 255, 255, 128, 255, 255, 255, 255],
        )
        .unwrap();
        let pyr = build_mipmap(&tex);
        assert_eq!(pyr.levels().len(), 2);
        // Mean alpha (0 + 64 + 128 + 255) / 4 = 111.75 rounds to 112, and
        // color is recovered against it: 255 * 111.75 / 112 = 254.4.
        assert_eq!(pyr.levels()[1].pixel(0, 0), [254, 254, 254, 112]);
    }

    #[test]
    fn transparent_texels_do_not_bleed() {
        let tex = OverlayTexture::new(2, 1, vec![200, 10, 10, 255, 0, 0, 0, 0]).unwrap();
        let top = build_mipmap(&tex).levels()[1].pixel(0, 0);
        // Color is recovered against the rounded alpha: 25500 / 128.
        assert_eq!(top, [199, 10, 10, 128]);
    }

    #[test]
    fn constant_texture_stays_constant() {
        let px = [12u8, 200, 99, 180];
        let tex = OverlayTexture::new(4, 4, px.repeat(16)).unwrap();
        for level in build_mipmap(&tex).levels() {
            assert!(level.pixels().chunks(4).all(|p| p == px));
        }
    }

    #[test]
    fn level_dimensions() {
        let pyr = build_mipmap(&OverlayTexture::transparent(501, 151).unwrap());
        let dims: Vec<_> = pyr.levels().iter().map(|l| (l.width(), l.height())).collect();
        assert_eq!(dims.len(), level_count(501, 151));
        assert_eq!(dims.len(), 10);
        assert_eq!(dims[1], (251, 76));
        assert_eq!(*dims.last().unwrap(), (1, 1));
        assert_eq!(level_count(1, 1), 1);
        assert_eq!(level_count(2, 1), 2);
        assert_eq!(level_count(256, 256), 9);
        assert_eq!(level_count(257, 3), 10);
    }

    fn gradient_tex(w: usize, h: usize) -> OverlayTexture {
        let mut px = Vec::new();
        for y in 0..h {
            for x in 0..w {
                px.extend_from_slice(&[(x % 256) as u8, (y % 256) as u8, 7, 255]);
            }
        }
        OverlayTexture::new(w, h, px).unwrap()
    }

    #[test]
    fn tiles_select_levels() {
        let small = build_mipmap(&gradient_tex(256, 256));
        assert_eq!(&extract_tile(&small, 0, 0, 0, 256).unwrap(), small.base());
        assert!(matches!(
            extract_tile(&small, 1, 0, 0, 256),
            Err(OverlayError::ZoomTooDeep { .. })
        ));

        let big = build_mipmap(&gradient_tex(512, 512));
        let t = extract_tile(&big, 1, 1, 1, 256).unwrap();
        assert_eq!(t.pixel(0, 0), big.base().pixel(256, 256));
        assert_eq!(t.pixel(255, 255), big.base().pixel(511, 511));
        assert_eq!(&extract_tile(&big, 0, 0, 0, 256).unwrap(), &big.levels()[1]);
        assert!(matches!(
            extract_tile(&big, 1, 0, 2, 256),
            Err(OverlayError::TileOutOfRange { .. })
        ));
    }

    #[test]
    fn tiles_pad_and_reassemble() {
        let pyr = build_mipmap(&gradient_tex(300, 100));
        assert_eq!(pyr.max_zoom(128), 2);
        for zoom in 0..=2u32 {
            let level = &pyr.levels()[(2 - zoom) as usize];
            let n = 1u32 << zoom;
            for ty in 0..n {
                for tx in 0..n {
                    let t = extract_tile(&pyr, zoom, tx, ty, 128).unwrap();
                    for y in 0..128 {
                        for x in 0..128 {
                            let (lx, ly) = (tx as usize * 128 + x, ty as usize * 128 + y);
                            let want = if lx < level.width() && ly < level.height() {
                                level.pixel(lx, ly)
                            } else {
                                [0; 4]
                            };
                            assert_eq!(t.pixel(x, y), want);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn png_edge_cases() {
        let one = OverlayTexture::transparent(1, 1).unwrap();
        let bytes = encode_png(&one).unwrap();
        assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
        assert_eq!(decode_png(&bytes).unwrap(), one);
        assert!(decode_png(&bytes[..bytes.len() / 2]).is_err());
        assert!(decode_png(b"not a png").is_err());
    }

    proptest! {
        #[test]
        fn png_round_trip(w in 1usize..40, h in 1usize..40, seed in any::<u64>()) {
            let mut s = seed | 1;
            let px: Vec<u8> = (0..w * h * 4).map(|_| { s ^= s << 13; s ^= s >> 7; s ^= s << 17; s as u8 }).collect();
            let tex = OverlayTexture::new(w, h, px).unwrap();
            prop_assert_eq!(decode_png(&encode_png(&tex).unwrap()).unwrap(), tex);
        }
    }
}
