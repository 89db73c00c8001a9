use super::VolumeError;

/// What the scalar values of a grid mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueKind {
    /// CT intensity in Hounsfield units.
    Hu,
    /// Absorbed dose in Gray.
    Gy,
    /// Unit-interval values (normalized intensities or class scores).
    Probability,
    /// Integral structure identifiers.
    Label,
    /// Euclidean distances in millimetres.
    Distance,
}

impl ValueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueKind::Hu => "hu",
            ValueKind::Gy => "gy",
            ValueKind::Probability => "probability",
            ValueKind::Label => "label",
            ValueKind::Distance => "distance",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "hu" => ValueKind::Hu,
            "gy" => ValueKind::Gy,
            "probability" => ValueKind::Probability,
            "label" => ValueKind::Label,
            "distance" => ValueKind::Distance,
            _ => return None,
        })
    }
}

/// Axis-aligned direction matrix: voxel axis `j` points along world axis
/// `axes[j]` with sign `signs[j]`.
///
/// Only signed permutations are representable; oblique directions are
/// rejected at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Orientation {
    axes: [usize; 3],
    signs: [i8; 3],
}

impl Default for Orientation {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Orientation {
    pub const IDENTITY: Orientation = Orientation {
        axes: [0, 1, 2],
        signs: [1, 1, 1],
    };

    pub fn new(axes: [usize; 3], signs: [i8; 3]) -> Result<Self, VolumeError> {
        let mut seen = [false; 3];
        for &a in &axes {
            if a > 2 || seen[a] {
                return Err(VolumeError::InvalidOrientation(format!(
                    "axes {axes:?} are not a permutation"
                )));
            }
            seen[a] = true;
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(VolumeError::InvalidOrientation(format!(
                "signs {signs:?} must be +1 or -1"
            )));
        }
        Ok(Self { axes, signs })
    }

    /// Recovers a signed permutation from a direction matrix (columns are the
    /// voxel axes). Each column must be a unit axis vector within `tol`.
    pub fn from_matrix(m: &[[f64; 3]; 3], tol: f64) -> Result<Self, VolumeError> {
        let mut axes = [0usize; 3];
        let mut signs = [1i8; 3];
        for j in 0..3 {
            let col = [m[0][j], m[1][j], m[2][j]];
            let (a, v) = col
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
                .map(|(i, v)| (i, *v))
                .unwrap();
            for (i, c) in col.iter().enumerate() {
                let expect = if i == a { 1.0 } else { 0.0 };
                if (c.abs() - expect).abs() > tol {
                    return Err(VolumeError::Oblique);
                }
            }
            axes[j] = a;
            signs[j] = if v < 0.0 { -1 } else { 1 };
        }
        Self::new(axes, signs).map_err(|_| VolumeError::Oblique)
    }

    pub fn axes(&self) -> [usize; 3] {
        self.axes
    }

    pub fn signs(&self) -> [i8; 3] {
        self.signs
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// Row-major direction matrix, `m[world][voxel]`.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for j in 0..3 {
            m[self.axes[j]][j] = f64::from(self.signs[j]);
        }
        m
    }

    /// Voxel axis that runs along world axis `world`.
    pub fn voxel_axis_for(&self, world: usize) -> usize {
        self.axes.iter().position(|&a| a == world).unwrap()
    }
}

/// Physical placement of a voxel lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub orientation: Orientation,
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Self {
        Self {
            dims,
            spacing,
            origin: [0.0; 3],
            orientation: Orientation::IDENTITY,
        }
    }

    pub fn with_origin(mut self, origin: [f64; 3]) -> Self {
        self.origin = origin;
        self
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        if self.dims.contains(&0) {
            return Err(VolumeError::InvalidGeometry(format!(
                "dims {:?} must be positive",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(VolumeError::InvalidGeometry(format!(
                "spacing {:?} must be strictly positive",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(VolumeError::InvalidGeometry(format!(
                "origin {:?} must be finite",
                self.origin
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let r = idx / self.dims[0];
        [i, r % self.dims[1], r / self.dims[1]]
    }

    /// World position (mm) of a (possibly fractional) voxel index.
    pub fn physical(&self, idx: [f64; 3]) -> [f64; 3] {
        let mut p = self.origin;
        for j in 0..3 {
            let a = self.orientation.axes[j];
            p[a] += f64::from(self.orientation.signs[j]) * self.spacing[j] * idx[j];
        }
        p
    }

    /// Continuous voxel index of a world position.
    pub fn continuous_index(&self, p: [f64; 3]) -> [f64; 3] {
        let mut idx = [0.0; 3];
        for j in 0..3 {
            let a = self.orientation.axes[j];
            idx[j] = (p[a] - self.origin[a]) / (f64::from(self.orientation.signs[j]) * self.spacing[j]);
        }
        idx
    }

    /// Physical centre of the voxel lattice.
    pub fn center(&self) -> [f64; 3] {
        self.physical([
            (self.dims[0] as f64 - 1.0) / 2.0,
            (self.dims[1] as f64 - 1.0) / 2.0,
            (self.dims[2] as f64 - 1.0) / 2.0,
        ])
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// 4x4 voxel-to-world affine (row-major).
    pub fn affine(&self) -> [[f64; 4]; 4] {
        let m = self.orientation.matrix();
        let mut a = [[0.0; 4]; 4];
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] = m[r][c] * self.spacing[c];
            }
            a[r][3] = self.origin[r];
        }
        a[3][3] = 1.0;
        a
    }

    /// Same lattice and placement, tolerating float noise in spacing/origin.
    pub fn approx_eq(&self, other: &Geometry, tol: f64) -> bool {
        self.dims == other.dims
            && self.orientation == other.orientation
            && (0..3).all(|i| {
                (self.spacing[i] - other.spacing[i]).abs() <= tol && (self.origin[i] - other.origin[i]).abs() <= tol
            })
    }
}

/// A scalar field on a voxel lattice, stored x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    geometry: Geometry,
    kind: ValueKind,
    values: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(geometry: Geometry, kind: ValueKind, values: Vec<f64>) -> Result<Self, VolumeError> {
        geometry.validate()?;
        if values.len() != geometry.len() {
            return Err(VolumeError::InvalidGeometry(format!(
                "expected {} values for dims {:?}, got {}",
                geometry.len(),
                geometry.dims,
                values.len()
            )));
        }
        Ok(Self { geometry, kind, values })
    }

    pub fn filled(geometry: Geometry, kind: ValueKind, value: f64) -> Result<Self, VolumeError> {
        let n = geometry.len();
        Self::new(geometry, kind, vec![value; n])
    }

    pub fn from_fn(
        geometry: Geometry,
        kind: ValueKind,
        mut f: impl FnMut([usize; 3]) -> f64,
    ) -> Result<Self, VolumeError> {
        geometry.validate()?;
        let [nx, ny, nz] = geometry.dims;
        let mut values = Vec::with_capacity(geometry.len());
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    values.push(f([i, j, k]));
                }
            }
        }
        Self::new(geometry, kind, values)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.geometry.origin
    }

    pub fn orientation(&self) -> Orientation {
        self.geometry.orientation
    }

    pub fn kind(&self) -> ValueKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.geometry.index(i, j, k)]
    }

    /// Same geometry, new values (length must match).
    pub fn with_values(&self, kind: ValueKind, values: Vec<f64>) -> Result<Self, VolumeError> {
        Self::new(self.geometry, kind, values)
    }

    pub fn map(&self, kind: ValueKind, f: impl Fn(f64) -> f64) -> Self {
        Self {
            geometry: self.geometry,
            kind,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}
