//! Named initial conditions.
//!
//! The A-shape is the union of three rotated rectangles on `[0, pi]^2`:
//! two legs from the apex `(pi/2, 2.6)` to the feet `(0.75, 0.5)` and
//! `(pi - 0.75, 0.5)` with half-width 0.22, and a horizontal crossbar
//! centred at `(pi/2, 1.3)` with half-length 0.55 and half-width 0.15.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{Field, Grid, Point};

pub const APEX: Point = [PI / 2.0, 2.6];
pub const LEFT_FOOT: Point = [0.75, 0.5];
pub const RIGHT_FOOT: Point = [PI - 0.75, 0.5];
pub const LEG_HALF_WIDTH: f64 = 0.22;
pub const BAR_CENTER: Point = [PI / 2.0, 1.3];
pub const BAR_HALF_LENGTH: f64 = 0.55;
pub const BAR_HALF_WIDTH: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `amplitude * sin(kx x) sin(ky y)`; one factor in 1D.
    ProductOfSines {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "two")]
        kx: f64,
        #[serde(default = "two")]
        ky: f64,
    },
    /// `amplitude` times the indicator of the A-shape.
    AShape {
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Nodal values from a field CSV.
    Csv { path: String },
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

impl InitialCondition {
    pub fn smooth() -> Self {
        InitialCondition::ProductOfSines { amplitude: 1.0, kx: 2.0, ky: 2.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InitialCondition::ProductOfSines { .. } => "product_of_sines",
            InitialCondition::AShape { .. } => "a_shape",
            InitialCondition::Csv { .. } => "csv",
        }
    }

    /// Nodal field with zero boundary values.
    pub fn field(&self, grid: &Grid) -> Result<Field> {
        let f = match self {
            InitialCondition::ProductOfSines { amplitude, kx, ky } => {
                let dim = grid.dim();
                Field::from_fn(grid, |p| {
                    let y = if dim == 2 { (ky * p[1]).sin() } else { 1.0 };
                    amplitude * (kx * p[0]).sin() * y
                })?
            }
            InitialCondition::AShape { amplitude } => {
                Field::from_fn(grid, |p| if in_a_shape(p) { *amplitude } else { 0.0 })?
            }
            InitialCondition::Csv { path } => Field::read_csv(grid, std::fs::File::open(path)?)?,
        };
        Ok(f.clamp_boundary())
    }
}

/// Whether `p` lies in the rectangle of half-width `hw` around segment `ab`.
fn in_segment_band(p: Point, a: Point, b: Point, hw: f64) -> bool {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let s = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2;
    if !(0.0..=1.0).contains(&s) {
        return false;
    }
    let cross = ((p[0] - a[0]) * dy - (p[1] - a[1]) * dx).abs() / len2.sqrt();
    cross <= hw
}

pub fn in_a_shape(p: Point) -> bool {
    let bar = (p[0] - BAR_CENTER[0]).abs() <= BAR_HALF_LENGTH && (p[1] - BAR_CENTER[1]).abs() <= BAR_HALF_WIDTH;
    bar || in_segment_band(p, LEFT_FOOT, APEX, LEG_HALF_WIDTH) || in_segment_band(p, RIGHT_FOOT, APEX, LEG_HALF_WIDTH)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_shape_geometry() {
        assert!(in_a_shape(APEX));
        assert!(in_a_shape(LEFT_FOOT) && in_a_shape(RIGHT_FOOT));
        assert!(in_a_shape(BAR_CENTER));
        // Between the legs below the bar, and outside the letter.
        assert!(!in_a_shape([PI / 2.0, 0.6]));
        assert!(!in_a_shape([0.2, 2.8]));
        assert!(!in_a_shape([PI / 2.0, 2.9]));
        // Symmetric about x = pi/2.
        for &(x, y) in &[(1.0, 1.0), (1.2, 1.9), (0.9, 0.7), (1.3, 1.3)] {
            assert_eq!(in_a_shape([x, y]), in_a_shape([PI - x, y]));
        }
    }

    #[test]
    fn presets_vanish_on_boundary() {
        let g = Grid::uniform(2, 0.0, PI, 33).unwrap();
        for ic in [InitialCondition::smooth(), InitialCondition::AShape { amplitude: 1.0 }] {
            let f = ic.field(&g).unwrap();
            for (i, v) in f.values().iter().enumerate() {
                if g.is_boundary(i) {
                    assert_eq!(*v, 0.0);
                }
            }
            assert!(f.max_abs() > 0.5);
        }
    }

    #[test]
    fn config_round_trip() {
        let ic: InitialCondition = serde_json::from_str(r#"{"kind":"a_shape"}"#).unwrap();
        assert_eq!(ic, InitialCondition::AShape { amplitude: 1.0 });
        let ic: InitialCondition = serde_json::from_str(r#"{"kind":"product_of_sines","amplitude":2}"#).unwrap();
        assert_eq!(ic, InitialCondition::ProductOfSines { amplitude: 2.0, kx: 2.0, ky: 2.0 });
        assert!(serde_json::from_str::<InitialCondition>(r#"{"kind":"a_shape","bogus":1}"#).is_err());
    }
}
