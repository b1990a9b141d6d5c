//! Panoramic view geometry: 36 views (12 headings × 3 elevations at 30°
//! intervals) and the 37-entry direction bucket table whose last entry is
//! reserved for STOP.

use crate::nav_graph::normalize_angle;

pub const HEADING_BINS: usize = 12;
pub const ELEVATION_BINS: usize = 3;
pub const NUM_VIEWS: usize = HEADING_BINS * ELEVATION_BINS;
/// Number of direction buckets including STOP.
pub const NUM_BUCKETS: usize = NUM_VIEWS + 1;
pub const STOP_BUCKET: u8 = NUM_VIEWS as u8;
pub const BIN_DEGREES: f64 = 30.0;

/// View index ordered by (elevation, heading); elevation bin 0 is −30°.
pub fn view_index(elevation_bin: usize, heading_bin: usize) -> usize {
    debug_assert!(elevation_bin < ELEVATION_BINS && heading_bin < HEADING_BINS);
    elevation_bin * HEADING_BINS + heading_bin
}

pub fn view_heading_bin(view: usize) -> usize {
    view % HEADING_BINS
}

pub fn view_elevation_bin(view: usize) -> usize {
    view / HEADING_BINS
}

/// Compass heading of a view in radians.
pub fn view_heading(view: usize) -> f64 {
    (view_heading_bin(view) as f64 * BIN_DEGREES).to_radians()
}

/// Elevation of a view in radians.
pub fn view_elevation(view: usize) -> f64 {
    ((view_elevation_bin(view) as f64 - 1.0) * BIN_DEGREES).to_radians()
}

/// Nearest 30° heading bin. Exact half-way angles go to the clockwise bin.
pub fn heading_bin(angle: f64) -> usize {
    let deg = normalize_angle(angle).to_degrees();
    ((deg / BIN_DEGREES + 0.5).floor() as usize) % HEADING_BINS
}

/// Nearest of the −30°/0°/+30° elevation bins, clamped.
pub fn elevation_bin(angle: f64) -> usize {
    let k = (angle.to_degrees() / BIN_DEGREES + 0.5).floor();
    (k.clamp(-1.0, 1.0) + 1.0) as usize
}

/// Direction bucket of an absolute direction as seen by an agent facing
/// `agent_heading`.
pub fn relative_bucket(heading: f64, elevation_bin: usize, agent_heading: f64) -> u8 {
    view_index(elevation_bin, heading_bin(heading - agent_heading)) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_round_to_nearest() {
        assert_eq!(heading_bin(0.0), 0);
        assert_eq!(heading_bin(14f64.to_radians()), 0);
        assert_eq!(heading_bin(16f64.to_radians()), 1);
        assert_eq!(heading_bin(350f64.to_radians()), 0);
        assert_eq!(heading_bin(-40f64.to_radians()), 11);
        assert_eq!(elevation_bin(0.0), 1);
        assert_eq!(elevation_bin(80f64.to_radians()), 2);
        assert_eq!(elevation_bin(-20f64.to_radians()), 0);
    }

    #[test]
    fn view_geometry_round_trips() {
        for v in 0..NUM_VIEWS {
            assert_eq!(view_index(elevation_bin(view_elevation(v)), heading_bin(view_heading(v))), v);
        }
    }
}
