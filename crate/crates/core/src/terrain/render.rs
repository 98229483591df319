//! 8-bit binary PPM (P6) rendering. Image row 0 is the grid's top row
//! (largest y); unknown cells are black.
//!
//! Ramps: elevations, spread and normal angle use [`Ramp::Heat`]
//! (blue -> cyan -> yellow -> red over the channel's min..max);
//! variances use [`Ramp::Gray`]; the signed concavity angle uses
//! [`Ramp::Diverging`] (blue for convex, white at 0, red for concave,
//! symmetric around 0).

use std::io::Write;

use super::{Channel, FeatureMap, GridGeometry};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ramp {
    Heat,
    Gray,
    Diverging,
}

impl Ramp {
    pub fn for_channel(ch: Channel) -> Ramp {
        match ch {
            Channel::ObservedVariance | Channel::PredictedVariance => Ramp::Gray,
            Channel::ConcavityAngle => Ramp::Diverging,
            _ => Ramp::Heat,
        }
    }

    /// Colour of `t` in `[0, 1]`.
    pub fn color(self, t: f64) -> [u8; 3] {
        let t = t.clamp(0.0, 1.0);
        let to8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        match self {
            Ramp::Gray => [to8(t); 3],
            Ramp::Heat => {
                let stops = [
                    (0.0, [0.0, 0.0, 1.0]),
                    (0.33, [0.0, 1.0, 1.0]),
                    (0.66, [1.0, 1.0, 0.0]),
                    (1.0, [1.0, 0.0, 0.0]),
                ];
                let k = stops.windows(2).position(|w| t <= w[1].0).unwrap_or(2);
                let (t0, c0) = stops[k];
                let (t1, c1) = stops[k + 1];
                let u = (t - t0) / (t1 - t0);
                [
                    to8(c0[0] + u * (c1[0] - c0[0])),
                    to8(c0[1] + u * (c1[1] - c0[1])),
                    to8(c0[2] + u * (c1[2] - c0[2])),
                ]
            }
            Ramp::Diverging => {
                if t < 0.5 {
                    let u = t / 0.5;
                    [to8(u), to8(u), 255]
                } else {
                    let u = (1.0 - t) / 0.5;
                    [255, to8(u), to8(u)]
                }
            }
        }
    }
}

/// Writes a P6 image from per-cell colours (`None` = black).
pub fn write_ppm<W: Write>(
    out: &mut W,
    geom: &GridGeometry,
    color: impl Fn(usize) -> Option<[u8; 3]>,
) -> Result<()> {
    write!(out, "P6\n{} {}\n255\n", geom.width, geom.height)?;
    let mut buf = Vec::with_capacity(geom.len() * 3);
    for row in (0..geom.height).rev() {
        for col in 0..geom.width {
            buf.extend_from_slice(&color(geom.index(row, col)).unwrap_or([0, 0, 0]));
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn render_channel<W: Write>(out: &mut W, map: &FeatureMap<f32>, ch: Channel) -> Result<()> {
    let ramp = Ramp::for_channel(ch);
    let plane = map.plane(ch);
    let known = map.known();
    let vals = plane
        .iter()
        .zip(known)
        .filter(|(_, &k)| k)
        .map(|(&v, _)| v as f64);
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let (lo, hi) = if ramp == Ramp::Diverging {
        let m = lo.abs().max(hi.abs()).max(1e-12);
        (-m, m)
    } else {
        (lo, hi)
    };
    let span = (hi - lo).max(1e-12);
    write_ppm(out, &map.geometry, |i| {
        known[i].then(|| ramp.color((plane[i] as f64 - lo) / span))
    })
}
