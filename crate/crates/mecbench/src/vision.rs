//! Deterministic stand-in for the sentiment-recognition workload: frame
//! decode, nearest-neighbor resize, and a luminance-blob face detector
//! with six synthetic sentiment labels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Working resolution every incoming frame is resized to before detection.
pub const WORK_WIDTH: u32 = 200;
pub const WORK_HEIGHT: u32 = 152;

pub const RAW_HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Png,
    Jpeg,
    Raw,
}

impl Encoding {
    pub fn from_content_type(ct: &str) -> Option<Encoding> {
        match ct {
            "image/png" => Some(Encoding::Png),
            "image/jpeg" => Some(Encoding::Jpeg),
            "application/x-raw-frame" => Some(Encoding::Raw),
            _ => None,
        }
    }

    pub fn content_type(self) -> &'static str {
        match self {
            Encoding::Png => "image/png",
            Encoding::Jpeg => "image/jpeg",
            Encoding::Raw => "application/x-raw-frame",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    /// 1 (luminance) or 3 (RGB).
    pub channels: u32,
    /// Row-major 8-bit samples, length = width * height * channels.
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: u32, height: u32, channels: u32, pixels: Vec<u8>) -> Result<Frame, VisionError> {
        if width < 1 || height < 1 {
            return Err(VisionError::MalformedImage("zero dimension".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(VisionError::MalformedImage("channels must be 1 or 3".into()));
        }
        if pixels.len() != (width * height * channels) as usize {
            return Err(VisionError::MalformedImage(format!(
                "pixel buffer length {} does not match {}x{}x{}",
                pixels.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Frame { width, height, channels, pixels })
    }

    /// BT.601 luminance; identity for single-channel frames.
    pub fn luminance(&self) -> Vec<u8> {
        if self.channels == 1 {
            return self.pixels.clone();
        }
        self.pixels
            .chunks_exact(3)
            .map(|p| {
                (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round() as u8
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Fear,
    Neutral,
    Happy,
    Sad,
    Anger,
    Disgust,
}

/// Label order is fixed; `area mod 6` indexes into it.
pub const SENTIMENTS: [Sentiment; 6] = [
    Sentiment::Fear,
    Sentiment::Neutral,
    Sentiment::Happy,
    Sentiment::Sad,
    Sentiment::Anger,
    Sentiment::Disgust,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceDetection {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub sentiment: Sentiment,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DetectorParams {
    pub threshold: u8,
    pub min_area: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams { threshold: 200, min_area: 16 }
    }
}

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("malformed image: {0}")]
    MalformedImage(String),
    #[error("unsupported encoding")]
    UnsupportedEncoding,
}

pub fn decode_frame(bytes: &[u8], encoding: Encoding) -> Result<Frame, VisionError> {
    match encoding {
        Encoding::Raw => decode_raw(bytes),
        Encoding::Png | Encoding::Jpeg => {
            let format = match encoding {
                Encoding::Png => image::ImageFormat::Png,
                _ => image::ImageFormat::Jpeg,
            };
            let img = image::load_from_memory_with_format(bytes, format)
                .map_err(|e| VisionError::MalformedImage(e.to_string()))?;
            match img {
                image::DynamicImage::ImageLuma8(g) => {
                    Frame::new(g.width(), g.height(), 1, g.into_raw())
                }
                other => {
                    let rgb = other.to_rgb8();
                    Frame::new(rgb.width(), rgb.height(), 3, rgb.into_raw())
                }
            }
        }
    }
}

fn decode_raw(bytes: &[u8]) -> Result<Frame, VisionError> {
    if bytes.len() < RAW_HEADER_LEN {
        return Err(VisionError::MalformedImage("raw header truncated".into()));
    }
    let be32 = |o: usize| u32::from_be_bytes(bytes[o..o + 4].try_into().unwrap());
    let (width, height, channels) = (be32(0), be32(4), be32(8));
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| VisionError::MalformedImage("raw dimensions overflow".into()))?
        as usize;
    let payload = &bytes[RAW_HEADER_LEN..];
    if payload.len() != expected {
        return Err(VisionError::MalformedImage(format!(
            "raw payload {} bytes, header promises {}",
            payload.len(),
            expected
        )));
    }
    Frame::new(width, height, channels, payload.to_vec())
}

pub fn encode_raw(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + frame.pixels.len());
    out.extend_from_slice(&frame.width.to_be_bytes());
    out.extend_from_slice(&frame.height.to_be_bytes());
    out.extend_from_slice(&frame.channels.to_be_bytes());
    out.extend_from_slice(&frame.pixels);
    out
}

pub fn encode_png(frame: &Frame) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    match frame.channels {
        1 => {
            let img = image::GrayImage::from_raw(frame.width, frame.height, frame.pixels.clone())
                .expect("frame invariant");
            img.write_to(&mut out, image::ImageFormat::Png).expect("png encode");
        }
        _ => {
            let img = image::RgbImage::from_raw(frame.width, frame.height, frame.pixels.clone())
                .expect("frame invariant");
            img.write_to(&mut out, image::ImageFormat::Png).expect("png encode");
        }
    }
    out.into_inner()
}

/// Nearest-neighbor resize; source index per axis is floor(i * in / out).
pub fn resize(frame: &Frame, out_w: u32, out_h: u32) -> Frame {
    assert!(out_w >= 1 && out_h >= 1, "output dimensions must be positive");
    if out_w == frame.width && out_h == frame.height {
        return frame.clone();
    }
    let ch = frame.channels as usize;
    let mut pixels = Vec::with_capacity((out_w * out_h) as usize * ch);
    for oy in 0..out_h as u64 {
        let sy = (oy * frame.height as u64 / out_h as u64) as usize;
        for ox in 0..out_w as u64 {
            let sx = (ox * frame.width as u64 / out_w as u64) as usize;
            let base = (sy * frame.width as usize + sx) * ch;
            pixels.extend_from_slice(&frame.pixels[base..base + ch]);
        }
    }
    Frame { width: out_w, height: out_h, channels: frame.channels, pixels }
}

/// Connected-component (4-connectivity) blob detector over the luminance
/// threshold. Each component at or above `min_area` yields one box;
/// sentiment and confidence are synthetic but deterministic.
pub fn detect(frame: &Frame, params: &DetectorParams) -> Vec<FaceDetection> {
    let luma = frame.luminance();
    let w = frame.width as usize;
    let h = frame.height as usize;
    let mut visited = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if visited[start] || luma[start] < params.threshold {
            continue;
        }
        // flood one component
        let mut area = 0usize;
        let (mut min_x, mut min_y, mut max_x, mut max_y) = (w, h, 0usize, 0usize);
        visited[start] = true;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            area += 1;
            let (x, y) = (idx % w, idx / w);
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
            let mut push = |nidx: usize| {
                if !visited[nidx] && luma[nidx] >= params.threshold {
                    visited[nidx] = true;
                    stack.push(nidx);
                }
            };
            if x > 0 {
                push(idx - 1);
            }
            if x + 1 < w {
                push(idx + 1);
            }
            if y > 0 {
                push(idx - w);
            }
            if y + 1 < h {
                push(idx + w);
            }
        }
        if area < params.min_area {
            continue;
        }
        let (bw, bh) = (max_x - min_x + 1, max_y - min_y + 1);
        out.push(FaceDetection {
            x: min_x as u32,
            y: min_y as u32,
            w: bw as u32,
            h: bh as u32,
            sentiment: SENTIMENTS[area % 6],
            confidence: (area as f64 / (bw * bh) as f64).min(1.0),
        });
    }
    out.sort_by_key(|d| (d.y, d.x));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank(w: u32, h: u32) -> Frame {
        Frame::new(w, h, 1, vec![0u8; (w * h) as usize]).unwrap()
    }

    fn paint_rect(frame: &mut Frame, x: u32, y: u32, w: u32, h: u32, value: u8) {
        for yy in y..y + h {
            for xx in x..x + w {
                frame.pixels[(yy * frame.width + xx) as usize] = value;
            }
        }
    }

    #[test]
    fn raw_round_trip() {
        let frame = Frame::new(2, 2, 1, vec![0, 255, 0, 255]).unwrap();
        let bytes = encode_raw(&frame);
        assert_eq!(bytes.len(), RAW_HEADER_LEN + 4);
        assert_eq!(decode_frame(&bytes, Encoding::Raw).unwrap(), frame);
    }

    #[test]
    fn raw_truncated_payload() {
        let frame = Frame::new(2, 2, 1, vec![0, 255, 0, 255]).unwrap();
        let mut bytes = encode_raw(&frame);
        bytes.pop();
        assert!(matches!(
            decode_frame(&bytes, Encoding::Raw),
            Err(VisionError::MalformedImage(_))
        ));
    }

    #[test]
    fn png_round_trip() {
        let frame = Frame::new(2, 2, 3, vec![10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120])
            .unwrap();
        let png = encode_png(&frame);
        assert_eq!(decode_frame(&png, Encoding::Png).unwrap(), frame);
    }

    #[test]
    fn undecodable_png() {
        assert!(matches!(
            decode_frame(b"not a png", Encoding::Png),
            Err(VisionError::MalformedImage(_))
        ));
    }

    #[test]
    fn resize_identity() {
        let frame = Frame::new(3, 2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(resize(&frame, 3, 2), frame);
    }

    #[test]
    fn resize_four_to_two_hand_oracle() {
        let frame = Frame::new(4, 4, 1, (0u8..16).collect()).unwrap();
        let small = resize(&frame, 2, 2);
        assert_eq!(small.pixels, vec![0, 2, 8, 10]);
    }

    #[test]
    fn resize_to_work_resolution() {
        let frame = blank(640, 480);
        let out = resize(&frame, WORK_WIDTH, WORK_HEIGHT);
        assert_eq!((out.width, out.height), (200, 152));
        assert_eq!(out.pixels.len(), 200 * 152);
    }

    #[test]
    fn detect_all_black() {
        assert!(detect(&blank(50, 50), &DetectorParams::default()).is_empty());
    }

    #[test]
    fn detect_single_rectangle() {
        let mut frame = blank(50, 50);
        paint_rect(&mut frame, 10, 10, 5, 4, 255);
        let found = detect(&frame, &DetectorParams::default());
        assert_eq!(found.len(), 1);
        let d = &found[0];
        assert_eq!((d.x, d.y, d.w, d.h), (10, 10, 5, 4));
        // area 20 -> 20 mod 6 = 2 -> happy
        assert_eq!(d.sentiment, Sentiment::Happy);
        assert_eq!(d.confidence, 1.0);
    }

    #[test]
    fn detect_orders_by_corner() {
        let mut frame = blank(60, 60);
        paint_rect(&mut frame, 30, 40, 6, 6, 255);
        paint_rect(&mut frame, 5, 5, 6, 6, 255);
        let found = detect(&frame, &DetectorParams::default());
        assert_eq!(found.len(), 2);
        assert_eq!((found[0].x, found[0].y), (5, 5));
        assert_eq!((found[1].x, found[1].y), (30, 40));
    }

    #[test]
    fn detect_min_area_filters_specks() {
        let mut frame = blank(20, 20);
        paint_rect(&mut frame, 3, 3, 2, 2, 255); // area 4 < 16
        assert!(detect(&frame, &DetectorParams::default()).is_empty());
    }

    #[test]
    fn rgb_luminance_thresholding() {
        // pure green: round(0.587*255) = 150, below the default threshold
        let mut pixels = vec![0u8; 10 * 10 * 3];
        for p in pixels.chunks_exact_mut(3).take(50) {
            p[1] = 255;
        }
        let frame = Frame::new(10, 10, 3, pixels).unwrap();
        assert!(detect(&frame, &DetectorParams::default()).is_empty());
        // white passes
        let frame = Frame::new(10, 10, 3, vec![255u8; 300]).unwrap();
        assert_eq!(detect(&frame, &DetectorParams::default()).len(), 1);
    }
}
