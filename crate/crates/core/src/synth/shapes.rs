use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Disk,
    Square,
    Triangle,
    Cross,
    HorizontalBar,
    Ring,
    Diamond,
    LShape,
    TShape,
    DotPair,
}

impl ShapeKind {
    pub const ID_DEFAULT: [ShapeKind; 5] = [
        ShapeKind::Disk,
        ShapeKind::Square,
        ShapeKind::Triangle,
        ShapeKind::Cross,
        ShapeKind::HorizontalBar,
    ];
    pub const OOD_DEFAULT: [ShapeKind; 5] = [
        ShapeKind::Ring,
        ShapeKind::Diamond,
        ShapeKind::LShape,
        ShapeKind::TShape,
        ShapeKind::DotPair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Disk => "disk",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Cross => "cross",
            ShapeKind::HorizontalBar => "horizontal-bar",
            ShapeKind::Ring => "ring",
            ShapeKind::Diamond => "diamond",
            ShapeKind::LShape => "l-shape",
            ShapeKind::TShape => "t-shape",
            ShapeKind::DotPair => "dot-pair",
        }
    }

    /// Membership test in shape-local coordinates, where the shape spans
    /// roughly `[-1, 1]²` and `v` grows downwards.
    fn contains(self, u: f64, v: f64) -> bool {
        let r2 = u * u + v * v;
        let rect = |u0: f64, u1: f64, v0: f64, v1: f64| (u0..=u1).contains(&u) && (v0..=v1).contains(&v);
        match self {
            ShapeKind::Disk => r2 <= 1.0,
            ShapeKind::Square => u.abs() <= 0.8 && v.abs() <= 0.8,
            ShapeKind::Triangle => (-0.9..=0.7).contains(&v) && u.abs() <= 0.9 * (v + 0.9) / 1.6,
            ShapeKind::Cross => {
                (u.abs() <= 0.25 && v.abs() <= 0.9) || (v.abs() <= 0.25 && u.abs() <= 0.9)
            }
            ShapeKind::HorizontalBar => u.abs() <= 0.95 && v.abs() <= 0.25,
            ShapeKind::Ring => (0.3025..=1.0).contains(&r2),
            ShapeKind::Diamond => u.abs() + v.abs() <= 0.95,
            ShapeKind::LShape => rect(-0.8, -0.3, -0.9, 0.9) || rect(-0.8, 0.8, 0.4, 0.9),
            ShapeKind::TShape => rect(-0.9, 0.9, -0.9, -0.4) || rect(-0.25, 0.25, -0.9, 0.9),
            ShapeKind::DotPair => {
                let d = |cu: f64| (u - cu).powi(2) + v * v <= 0.09;
                d(-0.55) || d(0.55)
            }
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ID_DEFAULT
            .iter()
            .chain(&ShapeKind::OOD_DEFAULT)
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown shape kind `{s}`")))
    }
}

/// Placement of a shape on the canvas. `center` is in pixel units with
/// `(0, 0)` at the top-left corner; `scale` is the half-extent in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub center: (f64, f64),
    pub scale: f64,
    /// Radians, counter-clockwise on screen.
    pub rotation: f64,
    pub intensity: f64,
}

const SUBSAMPLES: [f64; 2] = [0.25, 0.75];

/// Rasterises a shape with 2×2 supersampling. Row-major, `side²` values in `[0, 1]`.
pub fn render_shape(kind: ShapeKind, pose: &Pose, side: usize) -> Result<Vec<f64>> {
    let s = side as f64;
    let (cx, cy) = pose.center;
    if side == 0 {
        return Err(Error::Validation("canvas side must be positive".into()));
    }
    if !((0.0..=s).contains(&cx) && (0.0..=s).contains(&cy)) {
        return Err(Error::Validation(format!("center {:?} outside a {side}px canvas", pose.center)));
    }
    if !(pose.scale > 0.0 && pose.scale.is_finite()) || !pose.rotation.is_finite() {
        return Err(Error::Validation(format!("bad pose {pose:?}")));
    }
    if !(0.0..=1.0).contains(&pose.intensity) {
        return Err(Error::Validation(format!("intensity {} outside [0, 1]", pose.intensity)));
    }
    let (sin, cos) = pose.rotation.sin_cos();
    let per_sample = pose.intensity / (SUBSAMPLES.len() * SUBSAMPLES.len()) as f64;
    let mut img = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            let mut value = 0.0;
            for oy in SUBSAMPLES {
                for ox in SUBSAMPLES {
                    let dx = (x as f64 + ox - cx) / pose.scale;
                    let dy = (y as f64 + oy - cy) / pose.scale;
                    // rotate the sample point by −rotation into the shape frame
                    let u = cos * dx + sin * dy;
                    let v = -sin * dx + cos * dy;
                    if kind.contains(u, v) {
                        value += per_sample;
                    }
                }
            }
            img[y * side + x] = value;
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centred(rotation: f64, intensity: f64) -> Pose {
        Pose {
            center: (8.0, 8.0),
            scale: 6.0,
            rotation,
            intensity,
        }
    }

    #[test]
    fn disk_centre_pixel_has_full_intensity() {
        let img = render_shape(ShapeKind::Disk, &centred(0.0, 0.8), 16).unwrap();
        assert_eq!(img[8 * 16 + 8], 0.8);
        assert_eq!(img[0], 0.0);
    }

    #[test]
    fn zero_intensity_is_blank() {
        for kind in ShapeKind::ID_DEFAULT.iter().chain(&ShapeKind::OOD_DEFAULT) {
            let img = render_shape(*kind, &centred(0.3, 0.0), 16).unwrap();
            assert!(img.iter().all(|&p| p == 0.0), "{kind}");
        }
    }

    #[test]
    fn quarter_turn_of_bar_is_its_transpose() {
        let side = 16;
        let flat = render_shape(ShapeKind::HorizontalBar, &centred(0.0, 1.0), side).unwrap();
        let turned =
            render_shape(ShapeKind::HorizontalBar, &centred(std::f64::consts::FRAC_PI_2, 1.0), side).unwrap();
        let differing = (0..side * side)
            .filter(|&i| {
                let (y, x) = (i / side, i % side);
                (turned[y * side + x] - flat[x * side + y]).abs() > 1e-9
            })
            .count();
        assert!(differing <= 2, "{differing} pixels differ");
        assert!(flat.iter().any(|&p| p > 0.0));
    }

    #[test]
    fn every_kind_draws_something_distinct() {
        let kinds: Vec<ShapeKind> = ShapeKind::ID_DEFAULT.iter().chain(&ShapeKind::OOD_DEFAULT).copied().collect();
        let images: Vec<Vec<f64>> = kinds
            .iter()
            .map(|k| render_shape(*k, &centred(0.0, 1.0), 16).unwrap())
            .collect();
        for (i, a) in images.iter().enumerate() {
            assert!(a.iter().sum::<f64>() > 4.0, "{}", kinds[i]);
            assert!(a.iter().all(|p| (0.0..=1.0).contains(p)));
            for b in &images[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn names_round_trip_and_unknown_kind_fails() {
        for kind in ShapeKind::ID_DEFAULT.iter().chain(&ShapeKind::OOD_DEFAULT) {
            assert_eq!(kind.name().parse::<ShapeKind>().unwrap(), *kind);
        }
        assert!(matches!("hexagon".parse::<ShapeKind>(), Err(Error::Validation(_))));
    }

    #[test]
    fn off_canvas_pose_rejected() {
        let pose = Pose { center: (20.0, 8.0), ..centred(0.0, 1.0) };
        assert!(render_shape(ShapeKind::Disk, &pose, 16).is_err());
        let pose = Pose { scale: 0.0, ..centred(0.0, 1.0) };
        assert!(render_shape(ShapeKind::Disk, &pose, 16).is_err());
    }
}
