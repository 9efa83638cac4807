//! Pixel-level and manifest-level post-processing of tool outputs.

use image::{imageops, Rgb, RgbImage};

use super::{Annotation, BBox};
use crate::error::{Error, Result};
use crate::ingestion::{resize_plan, VideoManifest, DEFAULT_MAX_PIXELS};

/// Marker colors, indexed by `object_id % len`.
pub const MARKER_PALETTE: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

pub fn marker_color(object_id: u32) -> Rgb<u8> {
    Rgb(MARKER_PALETTE[object_id as usize % MARKER_PALETTE.len()])
}

/// A decoded frame together with its manifest index.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub image: RgbImage,
}

impl Frame {
    pub fn new(index: usize, image: RgbImage) -> Self {
        Self { index, image }
    }
}

/// Draws a filled disk at every annotation center, colored by object id.
///
/// A pixel at integer coordinates `(px, py)` is recolored iff
/// `(px − cx)² + (py − cy)² ≤ r²`. Inputs are left untouched.
pub fn overlay_markers(frames: &[Frame], annotations: &[Annotation]) -> Result<Vec<Frame>> {
    for a in annotations {
        let frame = frames
            .iter()
            .find(|f| f.index == a.frame)
            .ok_or_else(|| Error::OutOfBounds(format!("annotation for missing frame {}", a.frame)))?;
        let (w, h) = frame.image.dimensions();
        let [cx, cy] = a.center;
        if !(cx >= 0.0 && cy >= 0.0 && cx < f64::from(w) && cy < f64::from(h)) {
            return Err(Error::OutOfBounds(format!(
                "marker center ({cx}, {cy}) outside {w}x{h} frame {}",
                a.frame
            )));
        }
        if !(a.radius > 0.0 && a.radius.is_finite()) {
            return Err(Error::OutOfBounds(format!("marker radius {} must be positive", a.radius)));
        }
    }
    let mut out = frames.to_vec();
    for a in annotations {
        let frame = out.iter_mut().find(|f| f.index == a.frame).expect("checked above");
        draw_disk(&mut frame.image, a.center, a.radius, marker_color(a.object_id));
    }
    Ok(out)
}

fn draw_disk(img: &mut RgbImage, [cx, cy]: [f64; 2], r: f64, color: Rgb<u8>) {
    let (w, h) = img.dimensions();
    let x0 = (cx - r).ceil().max(0.0) as u32;
    let y0 = (cy - r).ceil().max(0.0) as u32;
    let x1 = ((cx + r).floor() as u32).min(w - 1);
    let y1 = ((cy + r).floor() as u32).min(h - 1);
    for py in y0..=y1 {
        for px in x0..=x1 {
            let (dx, dy) = (f64::from(px) - cx, f64::from(py) - cy);
            if dx * dx + dy * dy <= r * r {
                img.put_pixel(px, py, color);
            }
        }
    }
}

/// Frames with `t0 ≤ timestamp ≤ t1`. Parent indices, fps and duration are
/// kept so trimming twice with the same bounds is a no-op.
pub fn trim_segment(manifest: &VideoManifest, t0: f64, t1: f64) -> Result<VideoManifest> {
    if !(t0 >= 0.0 && t0 < t1 && t1 <= manifest.duration) {
        return Err(Error::InvalidSegment {
            t0,
            t1,
            duration: manifest.duration,
        });
    }
    let frames: Vec<_> = manifest
        .frames
        .iter()
        .filter(|f| f.timestamp >= t0 && f.timestamp <= t1)
        .cloned()
        .collect();
    if frames.is_empty() {
        return Err(Error::EmptySegment { t0, t1 });
    }
    Ok(VideoManifest {
        native_fps: manifest.native_fps,
        duration: manifest.duration,
        frames,
    })
}

/// Size of a zoomed crop once the pixel budget is applied.
pub fn zoom_plan(width: u32, height: u32, bbox: BBox) -> Result<(u32, u32)> {
    check_bbox(width, height, bbox)?;
    Ok(resize_plan(bbox.w, bbox.h, DEFAULT_MAX_PIXELS))
}

/// Crops to `bbox` and downsizes the crop if it exceeds the pixel budget.
pub fn zoom_image(image: &RgbImage, bbox: BBox) -> Result<RgbImage> {
    let (w, h) = zoom_plan(image.width(), image.height(), bbox)?;
    let crop = imageops::crop_imm(image, bbox.x, bbox.y, bbox.w, bbox.h).to_image();
    if (w, h) == crop.dimensions() {
        Ok(crop)
    } else {
        Ok(imageops::resize(&crop, w, h, imageops::FilterType::Triangle))
    }
}

fn check_bbox(width: u32, height: u32, bbox: BBox) -> Result<()> {
    if bbox.w == 0 || bbox.h == 0 || !bbox.fits(width, height) {
        return Err(Error::OutOfBounds(format!(
            "box [{}, {}, {}, {}] outside {width}x{height} frame",
            bbox.x, bbox.y, bbox.w, bbox.h
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::FrameMeta;

    fn blank(index: usize, w: u32, h: u32) -> Frame {
        Frame::new(index, RgbImage::from_pixel(w, h, Rgb([0, 0, 0])))
    }

    fn ann(frame: usize, x: f64, y: f64, id: u32) -> Annotation {
        Annotation {
            frame,
            center: [x, y],
            radius: 4.0,
            object_id: id,
            label: String::new(),
        }
    }

    #[test]
    fn no_tracks_no_change() {
        let frames = vec![blank(0, 16, 16)];
        assert_eq!(overlay_markers(&frames, &[]).unwrap(), frames);
    }

    #[test]
    fn single_marker_matches_distance_oracle() {
        let frames = vec![blank(0, 224, 224)];
        let out = overlay_markers(&frames, &[ann(0, 10.0, 10.0, 0)]).unwrap();
        let color = marker_color(0);
        let mut painted = 0;
        for (x, y, p) in out[0].image.enumerate_pixels() {
            let d2 = (f64::from(x) - 10.0).powi(2) + (f64::from(y) - 10.0).powi(2);
            if d2 <= 16.0 {
                assert_eq!(*p, color);
                painted += 1;
            } else {
                assert_eq!(*p, Rgb([0, 0, 0]));
            }
        }
        // lattice points in a radius-4 disk
        assert_eq!(painted, 49);
        assert_eq!(frames[0].image.get_pixel(10, 10), &Rgb([0, 0, 0]));
    }

    #[test]
    fn colors_are_stable_per_object() {
        let frames = vec![blank(0, 32, 32), blank(5, 32, 32)];
        let anns = [
            ann(0, 5.0, 5.0, 1),
            ann(0, 20.0, 20.0, 2),
            ann(5, 8.0, 8.0, 1),
            ann(5, 25.0, 25.0, 2),
        ];
        let out = overlay_markers(&frames, &anns).unwrap();
        assert_ne!(marker_color(1), marker_color(2));
        assert_eq!(out[0].image.get_pixel(5, 5), out[1].image.get_pixel(8, 8));
        assert_eq!(out[0].image.get_pixel(20, 20), out[1].image.get_pixel(25, 25));
    }

    #[test]
    fn marker_out_of_bounds() {
        let frames = vec![blank(0, 16, 16)];
        assert!(overlay_markers(&frames, &[ann(0, 16.0, 3.0, 0)]).is_err());
        assert!(overlay_markers(&frames, &[ann(1, 3.0, 3.0, 0)]).is_err());
        // a disk clipped by the border is fine
        assert!(overlay_markers(&frames, &[ann(0, 0.0, 15.5, 0)]).is_ok());
    }

    fn ten_frames() -> VideoManifest {
        VideoManifest {
            native_fps: 1.0,
            duration: 10.0,
            frames: (0..10)
                .map(|i| FrameMeta {
                    index: i + 100,
                    timestamp: i as f64 + 0.5,
                    width: 8,
                    height: 8,
                    uri: format!("f{i}"),
                    embedding_row: None,
                })
                .collect(),
        }
    }

    #[test]
    fn trim_examples() {
        let m = ten_frames();
        assert_eq!(trim_segment(&m, 0.0, 10.0).unwrap(), m);
        let one = trim_segment(&m, 3.5 - 1e-6, 3.5).unwrap();
        assert_eq!(one.frames.len(), 1);
        assert_eq!(one.frames[0].index, 103);
        let seg = trim_segment(&m, 2.0, 5.0).unwrap();
        let oracle: Vec<usize> = m
            .frames
            .iter()
            .filter(|f| (2.0..=5.0).contains(&f.timestamp))
            .map(|f| f.index)
            .collect();
        assert_eq!(seg.frames.iter().map(|f| f.index).collect::<Vec<_>>(), oracle);
        assert_eq!(trim_segment(&seg, 2.0, 5.0).unwrap(), seg);
        assert!(matches!(trim_segment(&m, 0.6, 0.9), Err(Error::EmptySegment { .. })));
        assert!(matches!(trim_segment(&m, 5.0, 5.0), Err(Error::InvalidSegment { .. })));
        assert!(matches!(trim_segment(&m, 1.0, 11.0), Err(Error::InvalidSegment { .. })));
    }

    #[test]
    fn zoom_examples() {
        let img = RgbImage::from_fn(64, 48, |x, y| Rgb([x as u8, y as u8, 7]));
        let full = zoom_image(&img, BBox::new(0, 0, 64, 48)).unwrap();
        assert_eq!(full, img);
        let px = zoom_image(&img, BBox::new(10, 20, 1, 1)).unwrap();
        assert_eq!(px.dimensions(), (1, 1));
        assert_eq!(px.get_pixel(0, 0), &Rgb([10, 20, 7]));
        assert!(zoom_image(&img, BBox::new(60, 0, 5, 5)).is_err());

        let big = RgbImage::new(1920, 1080);
        let crop = zoom_image(&big, BBox::new(100, 100, 500, 400)).unwrap();
        let (w, h) = crop.dimensions();
        assert!(u64::from(w) * u64::from(h) < DEFAULT_MAX_PIXELS);
        assert_eq!((w, h), zoom_plan(1920, 1080, BBox::new(100, 100, 500, 400)).unwrap());
    }
}
