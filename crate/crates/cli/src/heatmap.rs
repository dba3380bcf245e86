//! Binary PPM rendering of a surface grid.

use std::io::Write;

use irmap::forecast::SurfaceGrid;

/// Ranges narrower than this, relative to the magnitude, count as flat so
/// round-off in a constant surface does not paint a full ramp.
const FLAT_RANGE: f64 = 1e-12;

/// Blue at `min`, white at the midpoint, red at `max`. A flat range maps to
/// white.
pub fn ramp(value: f64, min: f64, max: f64) -> [u8; 3] {
    if !(max - min > FLAT_RANGE * max.abs().max(min.abs()).max(1.0)) {
        return [255, 255, 255];
    }
    let t = ((value - min) / (max - min)).clamp(0.0, 1.0);
    let channel = |x: f64| (255.0 * x).round() as u8;
    if t <= 0.5 {
        let s = channel(t / 0.5);
        [s, s, 255]
    } else {
        let s = channel(1.0 - (t - 0.5) / 0.5);
        [255, s, s]
    }
}

/// P6 image, one pixel per node: width = maturities, height = days, first
/// row = smallest day.
pub fn write_ppm<W: Write>(grid: &SurfaceGrid, mut out: W) -> std::io::Result<()> {
    let (nx, ny) = (grid.maturities.len(), grid.days.len());
    let (min, max) = grid.range();
    write!(out, "P6\n{nx} {ny}\n255\n")?;
    let mut pixels = Vec::with_capacity(nx * ny * 3);
    for v in &grid.values {
        pixels.extend_from_slice(&ramp(*v, min, max));
    }
    out.write_all(&pixels)?;
    out.flush()
}
