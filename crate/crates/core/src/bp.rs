//! Core Bongard-problem domain types and the on-disk loader.
//!
//! A puzzle is twelve binary images split into two groups of six. On disk a
//! puzzle is a directory of plain PBM (`P1`) files named `00.pbm` .. `11.pbm`;
//! `00`–`05` are the left group, `06`–`11` the right group. Pixel value 1 is
//! ink (black).

use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::synth::GroundTruth;

/// Errors from image construction, the PBM loader, and pair assembly.
#[derive(Debug, Error)]
pub enum BpError {
    #[error("missing image file: {0}")]
    MissingFile(String),
    #[error("image dimension mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("malformed PBM: {0}")]
    MalformedFormat(String),
    #[error("invalid downsample target {target_w}x{target_h} for source {src_w}x{src_h}")]
    InvalidTarget {
        target_w: usize,
        target_h: usize,
        src_w: usize,
        src_h: usize,
    },
    #[error("group must hold exactly 6 images, got {0}")]
    BadGroupSize(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A binary raster image. Pixels are row-major, 1 = ink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, BpError> {
        if width == 0 || height == 0 {
            return Err(BpError::MalformedFormat(format!(
                "zero dimension {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(BpError::MalformedFormat(format!(
                "pixel buffer length {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|&&p| p > 1) {
            return Err(BpError::MalformedFormat(format!(
                "pixel value {bad} outside {{0,1}}"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// All-zero image.
    pub fn blank(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0; width * height]).expect("blank dims")
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

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        debug_assert!(v <= 1);
        self.pixels[y * self.width + x] = v;
    }

    /// Number of ink pixels.
    pub fn ink_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 1).count()
    }

    /// Parse a plain PBM (`P1`). Accepts `#` comments and both packed and
    /// whitespace-separated pixel digits.
    pub fn from_pbm(text: &str) -> Result<Self, BpError> {
        let mut tokens = PbmTokens::new(text);
        let magic = tokens
            .next_token()
            .ok_or_else(|| BpError::MalformedFormat("empty file".into()))?;
        if magic != "P1" {
            return Err(BpError::MalformedFormat(format!(
                "magic {magic:?}, expected P1"
            )));
        }
        let width = tokens.next_usize("width")?;
        let height = tokens.next_usize("height")?;
        if width == 0 || height == 0 {
            return Err(BpError::MalformedFormat(format!(
                "zero dimension {width}x{height}"
            )));
        }
        let mut pixels = Vec::with_capacity(width * height);
        while pixels.len() < width * height {
            match tokens.next_pixel_digit() {
                Some('0') => pixels.push(0),
                Some('1') => pixels.push(1),
                Some(c) => {
                    return Err(BpError::MalformedFormat(format!(
                        "pixel character {c:?} outside {{0,1}}"
                    )))
                }
                None => {
                    return Err(BpError::MalformedFormat(format!(
                        "expected {} pixels, got {}",
                        width * height,
                        pixels.len()
                    )))
                }
            }
        }
        Image::new(width, height, pixels)
    }

    /// Serialize as plain PBM, one whitespace-separated row per line.
    pub fn to_pbm(&self) -> String {
        let mut out = String::with_capacity(self.pixels.len() * 2 + 32);
        out.push_str("P1\n");
        out.push_str(&format!("{} {}\n", self.width, self.height));
        for row in self.pixels.chunks(self.width) {
            let mut first = true;
            for &p in row {
                if !first {
                    out.push(' ');
                }
                out.push(if p == 1 { '1' } else { '0' });
                first = false;
            }
            out.push('\n');
        }
        out
    }
}

impl fmt::Display for Image {
    /// ASCII-art rendering; handy in test failures.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.pixels.chunks(self.width) {
            for &p in row {
                f.write_str(if p == 1 { "#" } else { "." })?;
            }
            f.write_str("\n")?;
        }
        Ok(())
    }
}

/// Tokenizer for plain PBM headers and pixel sections.
struct PbmTokens<'a> {
    rest: std::str::Chars<'a>,
}

impl<'a> PbmTokens<'a> {
    fn new(text: &'a str) -> Self {
        Self { rest: text.chars() }
    }

    fn skip_ws_and_comments(&mut self) -> Option<char> {
        loop {
            let c = self.rest.next()?;
            if c == '#' {
                for c in self.rest.by_ref() {
                    if c == '\n' {
                        break;
                    }
                }
            } else if !c.is_whitespace() {
                return Some(c);
            }
        }
    }

    fn next_token(&mut self) -> Option<String> {
        let first = self.skip_ws_and_comments()?;
        let mut tok = String::new();
        tok.push(first);
        // Clone so the delimiter is not consumed past the token.
        loop {
            let mut peek = self.rest.clone();
            match peek.next() {
                Some(c) if !c.is_whitespace() && c != '#' => {
                    tok.push(c);
                    self.rest = peek;
                }
                _ => break,
            }
        }
        Some(tok)
    }

    fn next_usize(&mut self, what: &str) -> Result<usize, BpError> {
        let tok = self
            .next_token()
            .ok_or_else(|| BpError::MalformedFormat(format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| BpError::MalformedFormat(format!("bad {what} {tok:?}")))
    }

    /// Pixels may be packed (`0110`) or separated; read one digit at a time.
    fn next_pixel_digit(&mut self) -> Option<char> {
        self.skip_ws_and_comments()
    }
}

/// Which of the two groups an image belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupLabel {
    Left,
    Right,
}

/// A full puzzle: two disjoint groups of six images, optionally carrying the
/// generator's ground truth.
#[derive(Debug, Clone)]
pub struct BongardProblem {
    id: u64,
    left: Vec<Image>,
    right: Vec<Image>,
    ground_truth: Option<GroundTruth>,
}

impl BongardProblem {
    pub fn new(
        id: u64,
        left: Vec<Image>,
        right: Vec<Image>,
        ground_truth: Option<GroundTruth>,
    ) -> Result<Self, BpError> {
        if left.len() != 6 {
            return Err(BpError::BadGroupSize(left.len()));
        }
        if right.len() != 6 {
            return Err(BpError::BadGroupSize(right.len()));
        }
        let w = left[0].width();
        let h = left[0].height();
        for img in left.iter().chain(right.iter()) {
            if img.width() != w || img.height() != h {
                return Err(BpError::DimensionMismatch {
                    expected_w: w,
                    expected_h: h,
                    got_w: img.width(),
                    got_h: img.height(),
                });
            }
        }
        Ok(Self {
            id,
            left,
            right,
            ground_truth,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn left(&self) -> &[Image] {
        &self.left
    }

    pub fn right(&self) -> &[Image] {
        &self.right
    }

    /// Image by flat index 0..12; 0–5 left, 6–11 right.
    pub fn image(&self, idx: usize) -> &Image {
        assert!(idx < 12, "image index {idx} out of range");
        if idx < 6 {
            &self.left[idx]
        } else {
            &self.right[idx - 6]
        }
    }

    pub fn group_of(idx: usize) -> GroupLabel {
        assert!(idx < 12);
        if idx < 6 {
            GroupLabel::Left
        } else {
            GroupLabel::Right
        }
    }

    pub fn width(&self) -> usize {
        self.left[0].width()
    }

    pub fn height(&self) -> usize {
        self.left[0].height()
    }

    pub fn ground_truth(&self) -> Option<&GroundTruth> {
        self.ground_truth.as_ref()
    }
}

/// An ordered image pair as a 2-channel state; channel 0 is the first image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairState {
    first: Image,
    second: Image,
}

impl PairState {
    pub fn first(&self) -> &Image {
        &self.first
    }

    pub fn second(&self) -> &Image {
        &self.second
    }

    pub fn width(&self) -> usize {
        self.first.width()
    }

    pub fn height(&self) -> usize {
        self.first.height()
    }

    /// Flatten to `2 * w * h` values, channel 0 then channel 1.
    pub fn to_f64(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.first.pixels().len());
        out.extend(self.first.pixels().iter().map(|&p| f64::from(p)));
        out.extend(self.second.pixels().iter().map(|&p| f64::from(p)));
        out
    }

    /// One channel flattened to `w * h` values.
    pub fn channel_f64(&self, channel: usize) -> Vec<f64> {
        let img = match channel {
            0 => &self.first,
            1 => &self.second,
            _ => panic!("channel {channel} out of range"),
        };
        img.pixels().iter().map(|&p| f64::from(p)).collect()
    }
}

/// Build the ordered 2-channel state for a pair of equally sized images.
pub fn make_state(a: &Image, b: &Image) -> Result<PairState, BpError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(BpError::DimensionMismatch {
            expected_w: a.width(),
            expected_h: a.height(),
            got_w: b.width(),
            got_h: b.height(),
        });
    }
    Ok(PairState {
        first: a.clone(),
        second: b.clone(),
    })
}

/// Block-average downsampling with a 0.5 ink threshold.
///
/// The source is split into `target_w x target_h` approximately equal
/// rectangular blocks; an output pixel is 1 iff its block mean is >= 0.5.
pub fn downsample(img: &Image, target_w: usize, target_h: usize) -> Result<Image, BpError> {
    let (w, h) = (img.width(), img.height());
    if target_w == 0 || target_h == 0 || target_w > w || target_h > h {
        return Err(BpError::InvalidTarget {
            target_w,
            target_h,
            src_w: w,
            src_h: h,
        });
    }
    let mut pixels = Vec::with_capacity(target_w * target_h);
    for oy in 0..target_h {
        let y0 = oy * h / target_h;
        let y1 = (oy + 1) * h / target_h;
        for ox in 0..target_w {
            let x0 = ox * w / target_w;
            let x1 = (ox + 1) * w / target_w;
            let mut ink = 0usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    ink += usize::from(img.get(x, y));
                }
            }
            let area = (y1 - y0) * (x1 - x0);
            // mean >= 0.5  <=>  2 * ink >= area
            pixels.push(u8::from(2 * ink >= area));
        }
    }
    Image::new(target_w, target_h, pixels)
}

/// Load a puzzle from a directory of `00.pbm` .. `11.pbm`.
///
/// Files 00–05 form the left group, 06–11 the right group. The result carries
/// no ground truth; concept metadata only exists for generated puzzles.
pub fn load_bp(dir: &Path) -> Result<BongardProblem, BpError> {
    let id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.parse().ok())
        .unwrap_or(0);
    let mut images = Vec::with_capacity(12);
    for i in 0..12 {
        let path = dir.join(format!("{i:02}.pbm"));
        if !path.is_file() {
            return Err(BpError::MissingFile(path.display().to_string()));
        }
        let text = fs::read_to_string(&path)?;
        let img = Image::from_pbm(&text)
            .map_err(|e| match e {
                BpError::MalformedFormat(msg) => {
                    BpError::MalformedFormat(format!("{}: {msg}", path.display()))
                }
                other => other,
            })?;
        images.push(img);
    }
    let right = images.split_off(6);
    BongardProblem::new(id, images, right, None)
}

/// Write a puzzle into `dir` in the `load_bp` layout.
pub fn save_bp(bp: &BongardProblem, dir: &Path) -> Result<(), BpError> {
    fs::create_dir_all(dir)?;
    for i in 0..12 {
        let path = dir.join(format!("{i:02}.pbm"));
        fs::write(&path, bp.image(i).to_pbm())?;
    }
    Ok(())
}
