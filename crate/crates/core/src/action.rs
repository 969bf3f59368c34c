use serde::{Deserialize, Serialize};

use crate::grid::{Cell, Grid};

/// Row/col offsets of the eight moves. The order is part of the checkpoint
/// format: output unit `k` of a saved policy means `OFFSETS[k]`.
pub const OFFSETS: [(i32, i32); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

pub const NUM_ACTIONS: usize = OFFSETS.len();

/// A move to one of the 8-connected neighbor cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(u8);

impl Action {
    pub const NORTH_WEST: Action = Action(0);
    pub const NORTH: Action = Action(1);
    pub const NORTH_EAST: Action = Action(2);
    pub const WEST: Action = Action(3);
    pub const EAST: Action = Action(4);
    pub const SOUTH_WEST: Action = Action(5);
    pub const SOUTH: Action = Action(6);
    pub const SOUTH_EAST: Action = Action(7);

    pub fn new(index: usize) -> Option<Action> {
        (index < NUM_ACTIONS).then_some(Action(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn offset(self) -> (i32, i32) {
        OFFSETS[self.index()]
    }

    pub fn all() -> impl Iterator<Item = Action> {
        (0..NUM_ACTIONS as u8).map(Action)
    }

    pub fn apply(self, cell: Cell) -> Cell {
        let (dr, dc) = self.offset();
        cell.offset(dr, dc)
    }
}

/// Bit `k` set means action `k` keeps the robot on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionMask(pub u8);

impl ActionMask {
    pub const ALL: ActionMask = ActionMask(0xFF);

    pub fn feasible_at(cell: Cell, height: usize, width: usize) -> ActionMask {
        let mut bits = 0u8;
        for a in Action::all() {
            let next = a.apply(cell);
            if next.row >= 0
                && next.col >= 0
                && (next.row as usize) < height
                && (next.col as usize) < width
            {
                bits |= 1 << a.index();
            }
        }
        ActionMask(bits)
    }

    pub fn for_grid(cell: Cell, grid: &Grid) -> ActionMask {
        ActionMask::feasible_at(cell, grid.height(), grid.width())
    }

    pub fn allows(self, action: Action) -> bool {
        self.0 & (1 << action.index()) != 0
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}
