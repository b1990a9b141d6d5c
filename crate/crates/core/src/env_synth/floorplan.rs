//! Binary-space-partition floorplans: rectangular rooms separated by
//! one-cell walls, each wall pierced by a door gap.

use rand::Rng;

use crate::nav_graph::OccupancyGrid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Rect {
    fn w(&self) -> usize {
        self.x1 - self.x0
    }
    fn h(&self) -> usize {
        self.y1 - self.y0
    }
    fn area(&self) -> usize {
        self.w() * self.h()
    }
}

pub(crate) struct FloorplanSpec {
    pub rooms: usize,
    pub width_m: f64,
    pub height_m: f64,
    pub cell_size: f64,
    pub min_room_m: f64,
    pub door_m: f64,
}

/// Generates the grid and returns it with every free cell outside the
/// largest connected free region blocked.
pub(crate) fn generate_floorplan<R: Rng>(spec: &FloorplanSpec, rng: &mut R) -> Result<OccupancyGrid> {
    let width = (spec.width_m / spec.cell_size).round() as usize;
    let height = (spec.height_m / spec.cell_size).round() as usize;
    if width < 3 || height < 3 {
        return Err(Error::InvalidEnvironment(format!(
            "a {}x{} m footprint at {} m cells leaves no free interior",
            spec.width_m, spec.height_m, spec.cell_size
        )));
    }
    let mut grid = OccupancyGrid::open(spec.cell_size, [0.0, 0.0], width, height)?;
    for c in 0..width {
        grid.set_blocked(c, 0, true);
        grid.set_blocked(c, height - 1, true);
    }
    for r in 0..height {
        grid.set_blocked(0, r, true);
        grid.set_blocked(width - 1, r, true);
    }

    let min_room = ((spec.min_room_m / spec.cell_size).ceil() as usize).max(2);
    let door = ((spec.door_m / spec.cell_size).round() as usize).max(2);
    let mut rooms = vec![Rect {
        x0: 1,
        y0: 1,
        x1: width - 1,
        y1: height - 1,
    }];

    while rooms.len() < spec.rooms {
        // split the largest room that can still hold two rooms and a wall
        let splittable = |r: &Rect| r.w().max(r.h()) > 2 * min_room;
        let Some((pick, _)) = rooms
            .iter()
            .enumerate()
            .filter(|(_, r)| splittable(r))
            .max_by(|(i, a), (j, b)| a.area().cmp(&b.area()).then(j.cmp(i)))
        else {
            break;
        };
        let room = rooms.swap_remove(pick);
        let vertical = room.w() >= room.h();
        let (lo, hi, span) = if vertical {
            (room.x0, room.x1, room.h())
        } else {
            (room.y0, room.y1, room.w())
        };
        let wall = rng.random_range(lo + min_room..=hi - min_room - 1);
        let door_len = door.min(span.saturating_sub(2)).max(1);
        let door_start = if span > door_len + 2 {
            rng.random_range(1..=span - door_len - 1)
        } else {
            0
        };
        for k in 0..span {
            let is_door = k >= door_start && k < door_start + door_len;
            if vertical {
                grid.set_blocked(wall, room.y0 + k, !is_door);
            } else {
                grid.set_blocked(room.x0 + k, wall, !is_door);
            }
        }
        let (a, b) = if vertical {
            (
                Rect { x1: wall, ..room },
                Rect { x0: wall + 1, ..room },
            )
        } else {
            (
                Rect { y1: wall, ..room },
                Rect { y0: wall + 1, ..room },
            )
        };
        rooms.push(a);
        rooms.push(b);
    }

    keep_largest_free_region(&mut grid);
    if grid.free_cell_count() == 0 {
        return Err(Error::InvalidEnvironment("floorplan has no free cells".into()));
    }
    Ok(grid)
}

fn keep_largest_free_region(grid: &mut OccupancyGrid) {
    let labels = grid.free_components();
    let mut sizes = std::collections::BTreeMap::<usize, usize>::new();
    for &l in labels.iter().filter(|&&l| l != usize::MAX) {
        *sizes.entry(l).or_default() += 1;
    }
    let Some((&keep, _)) = sizes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) else {
        return;
    };
    for (i, &l) in labels.iter().enumerate() {
        if l != usize::MAX && l != keep {
            grid.set_blocked(i % grid.width(), i / grid.width(), true);
        }
    }
}
