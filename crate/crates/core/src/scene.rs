//! Semantic map rasters, their one-hot channel encoding, and obstacle masks.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellIndex, Grid};

/// Number of semantic categories.
pub const NUM_CATEGORIES: usize = 8;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("category id {0} is outside 0..8")]
    InvalidCategory(u8),
    #[error("map has {got} cells, grid needs {expected}")]
    ShapeMismatch { got: usize, expected: usize },
    #[error("map image is {width}x{height}, grid side is {side}")]
    ImageSize { width: usize, height: usize, side: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[repr(u8)]
pub enum SemanticCategory {
    StaticObstacle = 0,
    DynamicObstacle = 1,
    Sidewalk = 2,
    Road = 3,
    WalkableVegetation = 4,
    Person = 5,
    UnknownObstacle = 6,
    UnknownFreeSpace = 7,
}

impl SemanticCategory {
    pub const ALL: [SemanticCategory; NUM_CATEGORIES] = [
        Self::StaticObstacle,
        Self::DynamicObstacle,
        Self::Sidewalk,
        Self::Road,
        Self::WalkableVegetation,
        Self::Person,
        Self::UnknownObstacle,
        Self::UnknownFreeSpace,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self, SceneError> {
        Self::ALL
            .get(id as usize)
            .copied()
            .ok_or(SceneError::InvalidCategory(id))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::StaticObstacle => "static-obstacle",
            Self::DynamicObstacle => "dynamic-obstacle",
            Self::Sidewalk => "sidewalk",
            Self::Road => "road",
            Self::WalkableVegetation => "walkable-vegetation",
            Self::Person => "person",
            Self::UnknownObstacle => "unknown-obstacle",
            Self::UnknownFreeSpace => "unknown-free-space",
        }
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|c| c.name().to_string()).collect()
    }
}

impl fmt::Display for SemanticCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Category raster in the forecast grid frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    grid: Grid,
    cells: Vec<SemanticCategory>,
}

impl SemanticMap {
    pub fn new(grid: Grid, cells: Vec<SemanticCategory>) -> Result<Self, SceneError> {
        if cells.len() != grid.len() {
            return Err(SceneError::ShapeMismatch {
                got: cells.len(),
                expected: grid.len(),
            });
        }
        Ok(Self { grid, cells })
    }

    pub fn filled(grid: Grid, category: SemanticCategory) -> Self {
        Self {
            grid,
            cells: vec![category; grid.len()],
        }
    }

    pub fn from_ids(grid: Grid, ids: &[u8]) -> Result<Self, SceneError> {
        let cells = ids
            .iter()
            .map(|&id| SemanticCategory::from_id(id))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(grid, cells)
    }

    /// Rasterizes `classify(x, y)` at every cell center.
    pub fn rasterize(grid: Grid, mut classify: impl FnMut([f64; 2]) -> SemanticCategory) -> Self {
        let cells = (0..grid.len())
            .map(|i| classify(grid.cell_center(grid.unflat(i))))
            .collect();
        Self { grid, cells }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn cells(&self) -> &[SemanticCategory] {
        &self.cells
    }

    pub fn get(&self, idx: CellIndex) -> SemanticCategory {
        self.cells[self.grid.flat(idx)]
    }

    pub fn set(&mut self, idx: CellIndex, category: SemanticCategory) {
        let i = self.grid.flat(idx);
        self.cells[i] = category;
    }

    pub fn ids(&self) -> Vec<u8> {
        self.cells.iter().map(|c| c.id()).collect()
    }

    /// Eight binary channels, channel-major (`channel * len + cell`); channel
    /// `k` is 1 exactly where the category id is `k`.
    pub fn encode_one_hot(&self) -> Vec<f64> {
        let n = self.grid.len();
        let mut out = vec![0.0; NUM_CATEGORIES * n];
        for (i, c) in self.cells.iter().enumerate() {
            out[c.id() as usize * n + i] = 1.0;
        }
        out
    }

    pub fn obstacle_mask(&self, kind: ObstacleKind) -> ObstacleMask {
        let mask = self.cells.iter().map(|&c| kind.marks(c)).collect();
        ObstacleMask {
            grid: self.grid,
            mask,
            kind,
        }
    }

    /// Rotates the map counter-clockwise by `angle` radians about the grid
    /// center using nearest-neighbor lookup into the source raster. Cells
    /// whose source falls outside the grid become unknown free space.
    pub fn rotate(&self, angle: f64) -> Self {
        if angle == 0.0 {
            return self.clone();
        }
        let (s, c) = angle.sin_cos();
        let cells = (0..self.grid.len())
            .map(|i| {
                let [x, y] = self.grid.cell_center(self.grid.unflat(i));
                let src = [c * x + s * y, -s * x + c * y];
                match self.grid.nearest_cell(src) {
                    Some(idx) => self.get(idx),
                    None => SemanticCategory::UnknownFreeSpace,
                }
            })
            .collect();
        Self {
            grid: self.grid,
            cells,
        }
    }

    pub fn write_pgm<W: Write>(&self, out: W) -> Result<(), SceneError> {
        let side = self.grid.side();
        crate::pgm::write_pgm8(out, side, side, &self.ids())?;
        Ok(())
    }

    pub fn read_pgm<R: Read>(grid: Grid, input: R) -> Result<Self, SceneError> {
        let (width, height, px) = crate::pgm::read_pgm8(input)?;
        if width != grid.side() || height != grid.side() {
            return Err(SceneError::ImageSize {
                width,
                height,
                side: grid.side(),
            });
        }
        Self::from_ids(grid, &px)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObstacleKind {
    /// Static and dynamic obstacles; used to mask training targets.
    Training,
    /// Static obstacles only; used by the occupancy score.
    Occupancy,
}

impl ObstacleKind {
    pub fn marks(self, c: SemanticCategory) -> bool {
        match self {
            Self::Training => matches!(
                c,
                SemanticCategory::StaticObstacle | SemanticCategory::DynamicObstacle
            ),
            Self::Occupancy => c == SemanticCategory::StaticObstacle,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleMask {
    grid: Grid,
    mask: Vec<bool>,
    kind: ObstacleKind,
}

impl ObstacleMask {
    pub fn new(grid: Grid, mask: Vec<bool>, kind: ObstacleKind) -> Result<Self, SceneError> {
        if mask.len() != grid.len() {
            return Err(SceneError::ShapeMismatch {
                got: mask.len(),
                expected: grid.len(),
            });
        }
        Ok(Self { grid, mask, kind })
    }

    pub fn empty(grid: Grid, kind: ObstacleKind) -> Self {
        Self {
            grid,
            mask: vec![false; grid.len()],
            kind,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> ObstacleKind {
        self.kind
    }

    pub fn cells(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_set(&self, idx: CellIndex) -> bool {
        self.mask[self.grid.flat(idx)]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}
