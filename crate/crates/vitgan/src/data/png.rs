//! Minimal PNG codec: 8-bit grayscale and RGB, no interlacing.
//!
//! The encoder emits stored (uncompressed) deflate blocks, which keeps
//! written files byte-deterministic. The decoder carries a complete
//! inflate (stored, fixed and dynamic Huffman) plus all five scanline
//! filters, so files from ordinary tools load too.

use crate::error::{Error, Result};

const SIGNATURE: [u8; 8] = [137, 80, 78, 71, 13, 10, 26, 10];

fn crc32_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    for (n, slot) in table.iter_mut().enumerate() {
        let mut c = n as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *slot = c;
    }
    table
}

fn crc32(data: &[u8]) -> u32 {
    let table = crc32_table();
    let mut c = 0xFFFF_FFFFu32;
    for &b in data {
        c = table[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

fn adler32(data: &[u8]) -> u32 {
    let mut a = 1u32;
    let mut b = 0u32;
    for &byte in data {
        a = (a + byte as u32) % 65521;
        b = (b + a) % 65521;
    }
    (b << 16) | a
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

fn push_chunk(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    let start = out.len();
    out.extend_from_slice(tag);
    out.extend_from_slice(payload);
    let crc = crc32(&out[start..]);
    out.extend_from_slice(&crc.to_be_bytes());
}

/// Encode 8-bit pixels (row-major, interleaved channels; 1 or 3 channels).
pub fn encode(width: usize, height: usize, channels: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if !(channels == 1 || channels == 3) {
        return Err(Error::Contract(format!("png encoder supports 1 or 3 channels, got {channels}")));
    }
    if pixels.len() != width * height * channels || width == 0 || height == 0 {
        return Err(Error::Contract(format!(
            "pixel buffer {} does not match {width}x{height}x{channels}",
            pixels.len()
        )));
    }
    // Raw scanline stream: filter byte 0 per row.
    let stride = width * channels;
    let mut raw = Vec::with_capacity(height * (stride + 1));
    for row in pixels.chunks(stride) {
        raw.push(0);
        raw.extend_from_slice(row);
    }
    // zlib with stored deflate blocks.
    let mut z = vec![0x78, 0x01];
    let mut rest = &raw[..];
    loop {
        let take = rest.len().min(65535);
        let (block, tail) = rest.split_at(take);
        let final_bit = u8::from(tail.is_empty());
        z.push(final_bit);
        z.extend_from_slice(&(take as u16).to_le_bytes());
        z.extend_from_slice(&(!(take as u16)).to_le_bytes());
        z.extend_from_slice(block);
        rest = tail;
        if tail.is_empty() {
            break;
        }
    }
    z.extend_from_slice(&adler32(&raw).to_be_bytes());

    let mut ihdr = Vec::with_capacity(13);
    ihdr.extend_from_slice(&(width as u32).to_be_bytes());
    ihdr.extend_from_slice(&(height as u32).to_be_bytes());
    ihdr.push(8); // bit depth
    ihdr.push(if channels == 3 { 2 } else { 0 }); // color type
    ihdr.extend_from_slice(&[0, 0, 0]); // compression, filter, interlace

    let mut out = SIGNATURE.to_vec();
    push_chunk(&mut out, b"IHDR", &ihdr);
    push_chunk(&mut out, b"IDAT", &z);
    push_chunk(&mut out, b"IEND", &[]);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Inflate
// ---------------------------------------------------------------------------

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    bit: u32,
}

impl<'a> BitReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        BitReader { data, pos: 0, bit: 0 }
    }

    fn bit(&mut self) -> Result<u32> {
        let byte = *self
            .data
            .get(self.pos)
            .ok_or_else(|| Error::Data("truncated deflate stream".into()))?;
        let v = (byte >> self.bit) & 1;
        self.bit += 1;
        if self.bit == 8 {
            self.bit = 0;
            self.pos += 1;
        }
        Ok(v as u32)
    }

    fn bits(&mut self, n: u32) -> Result<u32> {
        let mut v = 0;
        for i in 0..n {
            v |= self.bit()? << i;
        }
        Ok(v)
    }

    fn align_byte(&mut self) {
        if self.bit != 0 {
            self.bit = 0;
            self.pos += 1;
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Data("truncated stored block".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Canonical Huffman decoder over code lengths (the `puff` construction).
struct Huffman {
    counts: [u16; 16],
    symbols: Vec<u16>,
}

impl Huffman {
    fn new(lengths: &[u8]) -> Result<Self> {
        let mut counts = [0u16; 16];
        for &l in lengths {
            counts[l as usize] += 1;
        }
        counts[0] = 0;
        let mut offsets = [0u16; 16];
        for l in 1..16 {
            offsets[l] = offsets[l - 1] + counts[l - 1];
        }
        let mut symbols = vec![0u16; lengths.iter().filter(|&&l| l > 0).count()];
        for (sym, &l) in lengths.iter().enumerate() {
            if l > 0 {
                symbols[offsets[l as usize] as usize] = sym as u16;
                offsets[l as usize] += 1;
            }
        }
        Ok(Huffman {
            counts,
            symbols,
        })
    }

    fn decode(&self, r: &mut BitReader) -> Result<u16> {
        let mut code = 0i32;
        let mut first = 0i32;
        let mut index = 0i32;
        for len in 1..16 {
            code |= r.bit()? as i32;
            let count = self.counts[len] as i32;
            if code - first < count {
                return Ok(self.symbols[(index + (code - first)) as usize]);
            }
            index += count;
            first = (first + count) << 1;
            code <<= 1;
        }
        Err(Error::Data("invalid huffman code in deflate stream".into()))
    }
}

const LENGTH_BASE: [u16; 29] = [
    3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 15, 17, 19, 23, 27, 31, 35, 43, 51, 59, 67, 83, 99, 115, 131,
    163, 195, 227, 258,
];
const LENGTH_EXTRA: [u32; 29] = [
    0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0,
];
const DIST_BASE: [u16; 30] = [
    1, 2, 3, 4, 5, 7, 9, 13, 17, 25, 33, 49, 65, 97, 129, 193, 257, 385, 513, 769, 1025, 1537,
    2049, 3073, 4097, 6145, 8193, 12289, 16385, 24577,
];
const DIST_EXTRA: [u32; 30] = [
    0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13,
    13,
];
const CODE_LENGTH_ORDER: [usize; 19] = [16, 17, 18, 0, 8, 7, 9, 6, 10, 5, 11, 4, 12, 3, 13, 2, 14, 1, 15];

fn fixed_trees() -> Result<(Huffman, Huffman)> {
    let mut lit = [0u8; 288];
    for (i, l) in lit.iter_mut().enumerate() {
        *l = match i {
            0..=143 => 8,
            144..=255 => 9,
            256..=279 => 7,
            _ => 8,
        };
    }
    Ok((Huffman::new(&lit)?, Huffman::new(&[5u8; 30])?))
}

fn inflate_block(r: &mut BitReader, out: &mut Vec<u8>, lit: &Huffman, dist: &Huffman) -> Result<()> {
    loop {
        let sym = lit.decode(r)?;
        match sym {
            0..=255 => out.push(sym as u8),
            256 => return Ok(()),
            257..=285 => {
                let idx = (sym - 257) as usize;
                let len = LENGTH_BASE[idx] as usize + r.bits(LENGTH_EXTRA[idx])? as usize;
                let dsym = dist.decode(r)? as usize;
                if dsym >= 30 {
                    return Err(Error::Data("invalid distance symbol".into()));
                }
                let d = DIST_BASE[dsym] as usize + r.bits(DIST_EXTRA[dsym])? as usize;
                if d > out.len() {
                    return Err(Error::Data("deflate distance reaches before output start".into()));
                }
                let start = out.len() - d;
                for i in 0..len {
                    let b = out[start + i];
                    out.push(b);
                }
            }
            _ => return Err(Error::Data(format!("invalid literal/length symbol {sym}"))),
        }
    }
}

/// Raw DEFLATE decompression.
pub fn inflate(data: &[u8]) -> Result<Vec<u8>> {
    let mut r = BitReader::new(data);
    let mut out = Vec::new();
    loop {
        let final_block = r.bit()? == 1;
        match r.bits(2)? {
            0 => {
                r.align_byte();
                let header = r.take(4)?;
                let len = u16::from_le_bytes([header[0], header[1]]);
                let nlen = u16::from_le_bytes([header[2], header[3]]);
                if len != !nlen {
                    return Err(Error::Data("stored block length check failed".into()));
                }
                let block = r.take(len as usize)?;
                out.extend_from_slice(block);
            }
            1 => {
                let (lit, dist) = fixed_trees()?;
                inflate_block(&mut r, &mut out, &lit, &dist)?;
            }
            2 => {
                let hlit = r.bits(5)? as usize + 257;
                let hdist = r.bits(5)? as usize + 1;
                let hclen = r.bits(4)? as usize + 4;
                let mut cl_lengths = [0u8; 19];
                for i in 0..hclen {
                    cl_lengths[CODE_LENGTH_ORDER[i]] = r.bits(3)? as u8;
                }
                let cl_tree = Huffman::new(&cl_lengths)?;
                let mut lengths = vec![0u8; hlit + hdist];
                let mut i = 0;
                while i < lengths.len() {
                    let sym = cl_tree.decode(&mut r)?;
                    match sym {
                        0..=15 => {
                            lengths[i] = sym as u8;
                            i += 1;
                        }
                        16 => {
                            if i == 0 {
                                return Err(Error::Data("repeat with no previous length".into()));
                            }
                            let prev = lengths[i - 1];
                            let n = 3 + r.bits(2)? as usize;
                            for _ in 0..n {
                                if i >= lengths.len() {
                                    return Err(Error::Data("code length overflow".into()));
                                }
                                lengths[i] = prev;
                                i += 1;
                            }
                        }
                        17 | 18 => {
                            let n = if sym == 17 {
                                3 + r.bits(3)? as usize
                            } else {
                                11 + r.bits(7)? as usize
                            };
                            if i + n > lengths.len() {
                                return Err(Error::Data("code length overflow".into()));
                            }
                            i += n;
                        }
                        _ => return Err(Error::Data("invalid code length symbol".into())),
                    }
                }
                let lit = Huffman::new(&lengths[..hlit])?;
                let dist = Huffman::new(&lengths[hlit..])?;
                inflate_block(&mut r, &mut out, &lit, &dist)?;
            }
            _ => return Err(Error::Data("reserved deflate block type".into())),
        }
        if final_block {
            return Ok(out);
        }
    }
}

/// zlib envelope around [`inflate`], with adler32 verification.
pub fn zlib_decompress(data: &[u8]) -> Result<Vec<u8>> {
    if data.len() < 6 {
        return Err(Error::Data("zlib stream too short".into()));
    }
    let cmf = data[0];
    let flg = data[1];
    if cmf & 0x0F != 8 {
        return Err(Error::Data("zlib stream is not deflate".into()));
    }
    if (u16::from(cmf) * 256 + u16::from(flg)) % 31 != 0 {
        return Err(Error::Data("zlib header check failed".into()));
    }
    if flg & 0x20 != 0 {
        return Err(Error::Data("preset dictionaries are not supported".into()));
    }
    let out = inflate(&data[2..data.len() - 4])?;
    let want = u32::from_be_bytes(data[data.len() - 4..].try_into().expect("4 bytes"));
    if adler32(&out) != want {
        return Err(Error::Data("zlib checksum mismatch".into()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

fn paeth(a: i32, b: i32, c: i32) -> i32 {
    let p = a + b - c;
    let (pa, pb, pc) = ((p - a).abs(), (p - b).abs(), (p - c).abs());
    if pa <= pb && pa <= pc {
        a
    } else if pb <= pc {
        b
    } else {
        c
    }
}

/// Decode into (width, height, channels, 8-bit interleaved pixels).
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    if bytes.len() < 8 || bytes[..8] != SIGNATURE {
        return Err(Error::Data("malformed PNG header".into()));
    }
    let mut pos = 8;
    let mut header: Option<(usize, usize, usize)> = None;
    let mut idat = Vec::new();
    let mut seen_end = false;
    while pos + 8 <= bytes.len() {
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        let tag = &bytes[pos + 4..pos + 8];
        let data_start = pos + 8;
        if data_start + len + 4 > bytes.len() {
            return Err(Error::Data("truncated PNG chunk".into()));
        }
        let payload = &bytes[data_start..data_start + len];
        let want_crc =
            u32::from_be_bytes(bytes[data_start + len..data_start + len + 4].try_into().expect("4 bytes"));
        if crc32(&bytes[pos + 4..data_start + len]) != want_crc {
            return Err(Error::Data(format!(
                "PNG chunk {} fails CRC",
                String::from_utf8_lossy(tag)
            )));
        }
        match tag {
            b"IHDR" => {
                if payload.len() != 13 {
                    return Err(Error::Data("IHDR has wrong length".into()));
                }
                let w = u32::from_be_bytes(payload[0..4].try_into().expect("4 bytes")) as usize;
                let h = u32::from_be_bytes(payload[4..8].try_into().expect("4 bytes")) as usize;
                let depth = payload[8];
                let color = payload[9];
                let interlace = payload[12];
                if depth != 8 {
                    return Err(Error::Data(format!("unsupported bit depth {depth}, only 8")));
                }
                let channels = match color {
                    0 => 1,
                    2 => 3,
                    other => {
                        return Err(Error::Data(format!(
                            "unsupported color type {other}, only grayscale (0) and RGB (2)"
                        )))
                    }
                };
                if interlace != 0 {
                    return Err(Error::Data("interlaced PNGs are not supported".into()));
                }
                header = Some((w, h, channels));
            }
            b"IDAT" => idat.extend_from_slice(payload),
            b"IEND" => {
                seen_end = true;
                break;
            }
            _ => {} // ancillary chunks skipped
        }
        pos = data_start + len + 4;
    }
    let (w, h, channels) = header.ok_or_else(|| Error::Data("PNG has no IHDR".into()))?;
    if !seen_end {
        return Err(Error::Data("PNG has no IEND".into()));
    }
    if w == 0 || h == 0 {
        return Err(Error::Data("PNG has zero dimension".into()));
    }
    let raw = zlib_decompress(&idat)?;
    let stride = w * channels;
    if raw.len() != h * (stride + 1) {
        return Err(Error::Data(format!(
            "decompressed scanline data has {} bytes, expected {}",
            raw.len(),
            h * (stride + 1)
        )));
    }
    let mut pixels = vec![0u8; h * stride];
    let bpp = channels;
    for y in 0..h {
        let filter = raw[y * (stride + 1)];
        let line = &raw[y * (stride + 1) + 1..][..stride];
        for x in 0..stride {
            let left = if x >= bpp { pixels[y * stride + x - bpp] as i32 } else { 0 };
            let up = if y > 0 { pixels[(y - 1) * stride + x] as i32 } else { 0 };
            let up_left = if y > 0 && x >= bpp {
                pixels[(y - 1) * stride + x - bpp] as i32
            } else {
                0
            };
            let v = line[x] as i32;
            let recon = match filter {
                0 => v,
                1 => v + left,
                2 => v + up,
                3 => v + (left + up) / 2,
                4 => v + paeth(left, up, up_left),
                other => return Err(Error::Data(format!("unknown PNG filter {other}"))),
            };
            pixels[y * stride + x] = (recon & 0xFF) as u8;
        }
    }
    Ok((w, h, channels, pixels))
}
