//! Synthetic drawings and projects for tests, demos and benchmarks.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::geometry::{polygon, Point2};
use crate::part_builder::AnnotationSet;
use crate::project::{save_project, Pairing, PartRecord, ProjectFile};

/// Inflation seed used by fixture projects; rounder than the library
/// default so that parts overlap in depth.
pub const FIXTURE_SEED_BIAS: f64 = 2.0;

/// Closed ellipse outline with `n` points, rotated by `angle`.
pub fn ellipse(c: Point2, a: f64, b: f64, angle: f64, n: usize) -> Vec<Point2> {
    let (s, co) = angle.sin_cos();
    (0..n)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            let (x, y) = (a * t.cos(), b * t.sin());
            c + Point2::new(co * x - s * y, s * x + co * y)
        })
        .collect()
}

/// One part of a synthetic drawing.
#[derive(Clone, Debug)]
pub struct FixturePart {
    pub id: &'static str,
    pub outline: Vec<Point2>,
    pub color: [u8; 3],
    /// Paint order; higher layers cover lower ones.
    pub layer: i32,
    pub pairing: Pairing,
    pub parent: Option<&'static str>,
}

/// Paints the parts over a white square image with diagonal stripes so
/// that textures carry structure.
pub fn render(parts: &[FixturePart], size: u32) -> RgbImage {
    let mut order: Vec<&FixturePart> = parts.iter().collect();
    order.sort_by_key(|p| p.layer);
    let s = size as f64;
    RgbImage::from_fn(size, size, |x, y| {
        let p = Point2::new((x as f64 + 0.5) / s, (s - y as f64 - 0.5) / s);
        let mut px = Rgb([255, 255, 255]);
        for part in &order {
            if polygon::contains(&part.outline, &p) {
                let stripe = if ((x + y) / 6) % 2 == 0 { 1.0 } else { 0.7 };
                px = Rgb(part.color.map(|c| (c as f64 * stripe).round() as u8));
            }
        }
        px
    })
}

/// Writes `drawing.png` and `project.json` into `dir`; returns the project
/// path.
pub fn write_fixture(dir: &Path, parts: &[FixturePart], size: u32, target_faces: usize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let img = render(parts, size);
    let image_path = dir.join("drawing.png");
    img.save_with_format(&image_path, image::ImageFormat::Png)?;
    let bytes = std::fs::read(&image_path)?;
    let mut file = ProjectFile::new("drawing.png", &bytes);
    file.config.shape.target_faces = target_faces;
    file.config.shape.optimizer.seed_bias = FIXTURE_SEED_BIAS;
    for p in parts {
        let mut rec = PartRecord::new(p.id, AnnotationSet::new(p.outline.clone()));
        rec.pairing = p.pairing.clone();
        rec.parent = p.parent.map(str::to_string);
        file.parts.push(rec);
    }
    let path = dir.join("project.json");
    save_project(&path, &file)?;
    Ok(path)
}

/// A body and an overlapping head, both round.
pub fn two_part_parts() -> Vec<FixturePart> {
    vec![
        FixturePart {
            id: "body",
            outline: ellipse(Point2::new(0.42, 0.48), 0.22, 0.2, 0.0, 64),
            color: [200, 120, 60],
            layer: 0,
            pairing: Pairing::Solo,
            parent: None,
        },
        FixturePart {
            id: "head",
            outline: ellipse(Point2::new(0.68, 0.6), 0.13, 0.13, 0.0, 48),
            color: [90, 140, 200],
            layer: 1,
            pairing: Pairing::Solo,
            parent: Some("body"),
        },
    ]
}

/// A four-legged character: torso, head, tail and two leg pairs.
pub fn seven_part_parts() -> Vec<FixturePart> {
    let leg = |c: Point2| ellipse(c, 0.045, 0.12, 0.0, 40);
    let pair = |kind: &str, partner: &str| {
        if kind == "near" {
            Pairing::Near {
                partner: partner.into(),
                parent: "torso".into(),
            }
        } else {
            Pairing::Far {
                partner: partner.into(),
                parent: "torso".into(),
            }
        }
    };
    vec![
        FixturePart {
            id: "torso",
            outline: ellipse(Point2::new(0.5, 0.5), 0.25, 0.13, 0.0, 72),
            color: [210, 110, 40],
            layer: 2,
            pairing: Pairing::Solo,
            parent: None,
        },
        FixturePart {
            id: "head",
            outline: ellipse(Point2::new(0.78, 0.63), 0.11, 0.1, 0.0, 56),
            color: [230, 150, 70],
            layer: 3,
            pairing: Pairing::Solo,
            parent: Some("torso"),
        },
        FixturePart {
            id: "tail",
            outline: ellipse(Point2::new(0.2, 0.57), 0.12, 0.045, 0.35, 48),
            color: [240, 230, 210],
            layer: 1,
            pairing: Pairing::Solo,
            parent: Some("torso"),
        },
        FixturePart {
            id: "front_near",
            outline: leg(Point2::new(0.64, 0.31)),
            color: [120, 60, 30],
            layer: 4,
            pairing: pair("near", "front_far"),
            parent: None,
        },
        FixturePart {
            id: "front_far",
            outline: leg(Point2::new(0.69, 0.32)),
            color: [100, 50, 25],
            layer: 0,
            pairing: pair("far", "front_near"),
            parent: None,
        },
        FixturePart {
            id: "back_near",
            outline: leg(Point2::new(0.36, 0.31)),
            color: [120, 60, 30],
            layer: 4,
            pairing: pair("near", "back_far"),
            parent: None,
        },
        FixturePart {
            id: "back_far",
            outline: leg(Point2::new(0.31, 0.32)),
            color: [100, 50, 25],
            layer: 0,
            pairing: pair("far", "back_near"),
            parent: None,
        },
    ]
}
