//! Binary PPM (P6) with maxval 255.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb8Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub data: Vec<u8>,
}

impl Rgb8Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!("{width}x{height} RGB image needs {} bytes, got {}", width * height * 3, data.len())));
        }
        Ok(Self { width, height, data })
    }

    /// Quantizes real colors in `[0, 255]` (clamped, rounded).
    pub fn from_colors(width: usize, height: usize, colors: &[f64]) -> Result<Self> {
        Self::new(width, height, colors.iter().map(|&c| c.clamp(0.0, 255.0).round() as u8).collect())
    }

    pub fn colors(&self) -> Vec<f64> {
        self.data.iter().map(|&b| f64::from(b)).collect()
    }
}

pub fn write_ppm<W: Write>(w: &mut W, img: &Rgb8Image) -> Result<()> {
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.data)?;
    Ok(())
}

fn token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::Format("truncated PPM header".into()));
        }
        match byte[0] {
            b'#' if tok.is_empty() => {
                let mut skip = Vec::new();
                r.read_until(b'\n', &mut skip)?;
            }
            c if c.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    break;
                }
            }
            c => tok.push(c),
        }
    }
    String::from_utf8(tok).map_err(|_| Error::Format("PPM header is not ASCII".into()))
}

pub fn read_ppm<R: BufRead>(r: &mut R) -> Result<Rgb8Image> {
    if token(r)? != "P6" {
        return Err(Error::Format("only binary PPM (P6) is supported".into()));
    }
    let mut num = |what: &str| -> Result<usize> {
        token(r)?.parse().map_err(|_| Error::Format(format!("bad PPM {what}")))
    };
    let (width, height, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 255 {
        return Err(Error::Format(format!("PPM maxval {maxval} unsupported (need 255)")));
    }
    let mut data = vec![0u8; width * height * 3];
    r.read_exact(&mut data).map_err(|_| Error::Format("truncated PPM pixel data".into()))?;
    Rgb8Image::new(width, height, data)
}
