use std::fmt;
use std::str::FromStr;

use super::{Geometry, ValueKind, VolumeError, VoxelGrid};

/// Number of label classes including background.
pub const NUM_CLASSES: usize = 9;

/// The eight cardiac substructures, with their on-disk label values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Structure {
    Aa = 1,
    Pa = 2,
    Svc = 3,
    Ivc = 4,
    Ra = 5,
    Rv = 6,
    La = 7,
    Lv = 8,
}

impl Structure {
    pub const ALL: [Structure; 8] = [
        Structure::Aa,
        Structure::Pa,
        Structure::Svc,
        Structure::Ivc,
        Structure::Ra,
        Structure::Rv,
        Structure::La,
        Structure::Lv,
    ];

    pub const VESSELS: [Structure; 4] = [Structure::Aa, Structure::Pa, Structure::Svc, Structure::Ivc];

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn from_label(v: u8) -> Option<Self> {
        Self::ALL.get(usize::from(v).wrapping_sub(1)).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            Structure::Aa => "AA",
            Structure::Pa => "PA",
            Structure::Svc => "SVC",
            Structure::Ivc => "IVC",
            Structure::Ra => "RA",
            Structure::Rv => "RV",
            Structure::La => "LA",
            Structure::Lv => "LV",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Structure::Aa => "Aorta",
            Structure::Pa => "Pulmonary artery",
            Structure::Svc => "Superior vena cava",
            Structure::Ivc => "Inferior vena cava",
            Structure::Ra => "Right atrium",
            Structure::Rv => "Right ventricle",
            Structure::La => "Left atrium",
            Structure::Lv => "Left ventricle",
        }
    }

    pub fn is_vessel(self) -> bool {
        Self::VESSELS.contains(&self)
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Structure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|st| st.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown structure {s:?}"))
    }
}

/// A label volume over background (0) and the eight substructures.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    grid: VoxelGrid,
}

impl LabelMask {
    /// Wraps a grid, checking every value is an integral label in `0..=8`.
    pub fn new(grid: VoxelGrid) -> Result<Self, VolumeError> {
        if let Some((idx, v)) = grid
            .values()
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v.fract() == 0.0 && (0.0..NUM_CLASSES as f64).contains(&v)))
        {
            return Err(VolumeError::InvalidLabel { index: idx, value: *v });
        }
        let grid = if grid.kind() == ValueKind::Label {
            grid
        } else {
            grid.map(ValueKind::Label, |v| v)
        };
        Ok(Self { grid })
    }

    pub fn from_labels(geometry: Geometry, labels: &[u8]) -> Result<Self, VolumeError> {
        let grid = VoxelGrid::new(
            geometry,
            ValueKind::Label,
            labels.iter().map(|&l| f64::from(l)).collect(),
        )?;
        Self::new(grid)
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn into_grid(self) -> VoxelGrid {
        self.grid
    }

    pub fn geometry(&self) -> &Geometry {
        self.grid.geometry()
    }

    pub fn label_at(&self, idx: usize) -> u8 {
        self.grid.values()[idx] as u8
    }

    pub fn labels(&self) -> Vec<u8> {
        self.grid.values().iter().map(|&v| v as u8).collect()
    }

    pub fn count(&self, structure: Structure) -> usize {
        let l = f64::from(structure.label());
        self.grid.values().iter().filter(|&&v| v == l).count()
    }

    /// Structures with at least one voxel.
    pub fn present(&self) -> Vec<Structure> {
        let mut seen = [false; NUM_CLASSES];
        for &v in self.grid.values() {
            seen[v as usize] = true;
        }
        Structure::ALL
            .iter()
            .copied()
            .filter(|s| seen[s.label() as usize])
            .collect()
    }
}
