//! Radiance RGBE (`.hdr`) reading and writing.
//!
//! Pixels decode as `v = mantissa / 256 · 2^(e − 128)` with `e = 0` meaning
//! black. Both flat scanlines (including the old repeat-pixel run form) and
//! the adaptive per-channel run-length encoding are read; the writer emits
//! run-length encoded scanlines whenever the width allows it.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ImagePlane, PlaneKind};
use crate::{Error, Result};

/// Decodes one RGBE quadruple.
#[inline]
pub fn decode_pixel(px: [u8; 4]) -> [f64; 3] {
    if px[3] == 0 {
        return [0.0; 3];
    }
    let scale = 2f64.powi(px[3] as i32 - 128 - 8);
    [px[0] as f64 * scale, px[1] as f64 * scale, px[2] as f64 * scale]
}

/// Encodes one RGB triple; the largest channel sets the shared exponent.
pub fn encode_pixel(rgb: [f64; 3]) -> [u8; 4] {
    let v = rgb[0].max(rgb[1]).max(rgb[2]);
    if !(v > 1e-32) {
        return [0; 4];
    }
    // v = m · 2^e with m in [0.5, 1)
    let mut e = v.log2().floor() as i32 + 1;
    let mut m = v / 2f64.powi(e);
    if m >= 1.0 {
        m /= 2.0;
        e += 1;
    } else if m < 0.5 {
        m *= 2.0;
        e -= 1;
    }
    if e + 128 > 255 {
        return [255, 255, 255, 255];
    }
    if e + 128 < 1 {
        return [0; 4];
    }
    let scale = m * 256.0 / v;
    let q = |c: f64| (c.max(0.0) * scale).floor().min(255.0) as u8;
    [q(rgb[0]), q(rgb[1]), q(rgb[2]), (e + 128) as u8]
}

pub fn load_hdr(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::Hdr {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn save_hdr(img: &ImagePlane, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(img)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn byte(&mut self) -> Result<u8, String> {
        let b = *self
            .buf
            .get(self.pos)
            .ok_or_else(|| "truncated scanline data".to_string())?;
        self.pos += 1;
        Ok(b)
    }

    fn quad(&mut self) -> Result<[u8; 4], String> {
        Ok([self.byte()?, self.byte()?, self.byte()?, self.byte()?])
    }

    fn line(&mut self) -> Result<&str, String> {
        let rest = &self.buf[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| "unterminated header line".to_string())?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| "header is not valid text".to_string())
    }
}

/// Decodes an in-memory `.hdr` file.
pub fn decode(bytes: &[u8]) -> Result<ImagePlane, String> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic = cur.line()?;
    if !(magic.starts_with("#?RADIANCE") || magic.starts_with("#?RGBE")) {
        return Err("missing #?RADIANCE signature".into());
    }
    loop {
        let line = cur.line()?.trim().to_string();
        if line.is_empty() {
            break;
        }
        if let Some(fmt) = line.strip_prefix("FORMAT=") {
            if fmt != "32-bit_rle_rgbe" {
                return Err(format!("unsupported pixel format {fmt}"));
            }
        }
    }
    let res = cur.line()?.trim().to_string();
    let parts: Vec<&str> = res.split_whitespace().collect();
    let (height, width) = match parts[..] {
        ["-Y", h, "+X", w] => (
            h.parse::<usize>().map_err(|_| format!("bad resolution line {res:?}"))?,
            w.parse::<usize>().map_err(|_| format!("bad resolution line {res:?}"))?,
        ),
        _ => return Err(format!("unsupported resolution line {res:?}")),
    };
    if height == 0 || width == 0 {
        return Err("zero image dimension".into());
    }
    let mut data = Vec::with_capacity(height * width * 3);
    let mut scan = vec![[0u8; 4]; width];
    for _ in 0..height {
        read_scanline(&mut cur, &mut scan)?;
        for px in &scan {
            data.extend_from_slice(&decode_pixel(*px));
        }
    }
    ImagePlane::new(height, width, 3, data, PlaneKind::Hdr).map_err(|e| e.to_string())
}

fn read_scanline(cur: &mut Cursor, scan: &mut [[u8; 4]]) -> Result<(), String> {
    let width = scan.len();
    let first = cur.quad()?;
    if (8..=0x7fff).contains(&width) && first[0] == 2 && first[1] == 2 && first[2] & 0x80 == 0 {
        let encoded = ((first[2] as usize) << 8) | first[3] as usize;
        if encoded != width {
            return Err(format!("scanline width {encoded} does not match image width {width}"));
        }
        for ch in 0..4 {
            let mut x = 0;
            while x < width {
                let count = cur.byte()? as usize;
                if count > 128 {
                    let run = count - 128;
                    if x + run > width {
                        return Err("run overflows scanline".into());
                    }
                    let v = cur.byte()?;
                    for px in &mut scan[x..x + run] {
                        px[ch] = v;
                    }
                    x += run;
                } else {
                    if count == 0 || x + count > width {
                        return Err("bad literal count in scanline".into());
                    }
                    for px in &mut scan[x..x + count] {
                        px[ch] = cur.byte()?;
                    }
                    x += count;
                }
            }
        }
        return Ok(());
    }
    // Flat pixels, possibly with old-style (1,1,1,n) repeat runs.
    let mut x = 0;
    let mut shift = 0;
    let mut next = Some(first);
    while x < width {
        let px = match next.take() {
            Some(p) => p,
            None => cur.quad()?,
        };
        if px[0] == 1 && px[1] == 1 && px[2] == 1 {
            if x == 0 {
                return Err("repeat run at start of scanline".into());
            }
            let run = (px[3] as usize) << shift;
            if x + run > width {
                return Err("run overflows scanline".into());
            }
            let prev = scan[x - 1];
            for p in &mut scan[x..x + run] {
                *p = prev;
            }
            x += run;
            shift += 8;
        } else {
            scan[x] = px;
            x += 1;
            shift = 0;
        }
    }
    Ok(())
}

/// Encodes a plane as an RLE Radiance file.
pub fn encode(img: &ImagePlane) -> Result<Vec<u8>> {
    if img.channels() != 3 {
        return Err(Error::InvalidArgument("RGBE needs 3 channels".into()));
    }
    if img.data().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("RGBE cannot store negative radiance".into()));
    }
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::new();
    out.extend_from_slice(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n");
    out.extend_from_slice(format!("-Y {h} +X {w}\n").as_bytes());
    let rle = (8..=0x7fff).contains(&w);
    let mut row = vec![[0u8; 4]; w];
    for y in 0..h {
        for (x, px) in row.iter_mut().enumerate() {
            *px = encode_pixel([img.get(y, x, 0), img.get(y, x, 1), img.get(y, x, 2)]);
        }
        if rle {
            out.extend_from_slice(&[2, 2, (w >> 8) as u8, (w & 0xff) as u8]);
            for ch in 0..4 {
                let chan: Vec<u8> = row.iter().map(|p| p[ch]).collect();
                rle_channel(&chan, &mut out);
            }
        } else {
            for px in &row {
                out.extend_from_slice(px);
            }
        }
    }
    Ok(out)
}

fn rle_channel(chan: &[u8], out: &mut Vec<u8>) {
    const MIN_RUN: usize = 4;
    let n = chan.len();
    let mut i = 0;
    while i < n {
        // Find the next run of at least MIN_RUN equal bytes.
        let mut run_start = i;
        let mut run_len = 0;
        while run_start < n {
            run_len = 1;
            while run_start + run_len < n && run_len < 127 && chan[run_start + run_len] == chan[run_start] {
                run_len += 1;
            }
            if run_len >= MIN_RUN {
                break;
            }
            run_start += run_len;
        }
        // Literals up to the run.
        while i < run_start {
            let count = (run_start - i).min(128);
            out.push(count as u8);
            out.extend_from_slice(&chan[i..i + count]);
            i += count;
        }
        if run_start < n && run_len >= MIN_RUN {
            out.push((128 + run_len) as u8);
            out.push(chan[run_start]);
            i = run_start + run_len;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_rule_examples() {
        assert_eq!(decode_pixel([128, 128, 128, 129]), [1.0, 1.0, 1.0]);
        assert_eq!(decode_pixel([200, 17, 3, 0]), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(decode(b"P6\n1 1\n255\n").is_err());
        assert!(decode(b"#?RADIANCE\nFORMAT=32-bit_rle_xyze\n\n-Y 1 +X 1\n\x80\x80\x80\x81").is_err());
        assert!(decode(b"#?RADIANCE\n\n+Y 1 +X 1\n\x80\x80\x80\x81").is_err());
        assert!(decode(b"#?RADIANCE\n\n-Y 1 +X 2\n\x80\x80\x80\x81").is_err());
    }

    #[test]
    fn flat_file_with_old_style_run() {
        let mut f = b"#?RGBE\n\n-Y 1 +X 4\n".to_vec();
        f.extend_from_slice(&[128, 64, 0, 129, 1, 1, 1, 3]);
        let img = decode(&f).unwrap();
        assert_eq!(img.dims(), (1, 4, 3));
        for x in 0..4 {
            assert_eq!([img.get(0, x, 0), img.get(0, x, 1), img.get(0, x, 2)], [1.0, 0.5, 0.0]);
        }
    }

    #[test]
    fn truncated_rle_scanline_is_an_error() {
        let img = ImagePlane::from_fn(2, 16, 3, |y, x, c| (y + x + c) as f64 * 0.3, PlaneKind::Hdr);
        let bytes = encode(&img).unwrap();
        assert!(decode(&bytes).is_ok());
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }
}
