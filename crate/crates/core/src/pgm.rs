//! Binary PGM (P5) reading and writing.
//!
//! Image row `i` is raster row `i`; no flipping is applied, so `+y` points
//! down in ordinary image viewers. 16-bit samples are big-endian per the
//! netpbm format.

use std::io::{self, BufRead, BufReader, Read, Write};

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn write_pgm8<W: Write>(mut out: W, width: usize, height: usize, pixels: &[u8]) -> io::Result<()> {
    if pixels.len() != width * height {
        return Err(invalid("pixel count does not match dimensions"));
    }
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(pixels)
}

pub fn write_pgm16<W: Write>(mut out: W, width: usize, height: usize, pixels: &[u16]) -> io::Result<()> {
    if pixels.len() != width * height {
        return Err(invalid("pixel count does not match dimensions"));
    }
    write!(out, "P5\n{width} {height}\n65535\n")?;
    let mut bytes = Vec::with_capacity(pixels.len() * 2);
    for p in pixels {
        bytes.extend_from_slice(&p.to_be_bytes());
    }
    out.write_all(&bytes)
}

fn read_token<R: BufRead>(r: &mut R) -> io::Result<String> {
    let mut tok = String::new();
    loop {
        let mut byte = [0u8; 1];
        if r.read(&mut byte)? == 0 {
            if tok.is_empty() {
                return Err(invalid("truncated PGM header"));
            }
            return Ok(tok);
        }
        let c = byte[0] as char;
        if c == '#' && tok.is_empty() {
            let mut skip = String::new();
            r.read_line(&mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(c);
    }
}

fn read_header<R: BufRead>(r: &mut R) -> io::Result<(usize, usize, u32)> {
    if read_token(r)? != "P5" {
        return Err(invalid("not a binary PGM (P5)"));
    }
    let parse = |t: String| t.parse::<u32>().map_err(|_| invalid(format!("bad header field {t:?}")));
    let w = parse(read_token(r)?)? as usize;
    let h = parse(read_token(r)?)? as usize;
    let maxval = parse(read_token(r)?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(invalid(format!("bad maxval {maxval}")));
    }
    Ok((w, h, maxval))
}

/// Reads an 8-bit PGM, returning `(width, height, pixels)`.
pub fn read_pgm8<R: Read>(input: R) -> io::Result<(usize, usize, Vec<u8>)> {
    let mut r = BufReader::new(input);
    let (w, h, maxval) = read_header(&mut r)?;
    if maxval > 255 {
        return Err(invalid("expected an 8-bit PGM"));
    }
    let mut px = vec![0u8; w * h];
    r.read_exact(&mut px)?;
    Ok((w, h, px))
}

/// Reads a 16-bit PGM, returning `(width, height, pixels)`.
pub fn read_pgm16<R: Read>(input: R) -> io::Result<(usize, usize, Vec<u16>)> {
    let mut r = BufReader::new(input);
    let (w, h, maxval) = read_header(&mut r)?;
    if maxval < 256 {
        return Err(invalid("expected a 16-bit PGM"));
    }
    let mut bytes = vec![0u8; w * h * 2];
    r.read_exact(&mut bytes)?;
    Ok((
        w,
        h,
        bytes
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect(),
    ))
}
