//! Voxelized spatial domain, density field, and the beam source.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Density floor [g/cm^3]; keeps the 1/ρ advection term bounded.
pub const RHO_FLOOR: f64 = 0.05;

/// Hounsfield-to-density conversion: linear ramp `ρ = 1 + HU/1000`, floored.
pub fn hu_to_density(hu: f64) -> f64 {
    (1.0 + hu / 1000.0).max(RHO_FLOOR)
}

/// Regular 3D cell grid. Cells are indexed `(ix, iy, iz)` and flattened as
/// `ix + nx*(iy + ny*iz)`; points map to cells by the half-open convention
/// `[lo, hi)` per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub counts: [usize; 3],
    /// Cell size per axis [cm].
    pub delta: [f64; 3],
    /// Position of the low corner [cm].
    pub origin: [f64; 3],
}

impl Grid3 {
    pub fn new(counts: [usize; 3], delta: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::Validation("cell counts must be >= 1".into()));
        }
        if delta.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Validation("cell sizes must be positive".into()));
        }
        Ok(Grid3 {
            counts,
            delta,
            origin,
        })
    }

    /// Uniform grid over a box `[0, extent]` with the given cell counts.
    pub fn from_extent(counts: [usize; 3], extent: [f64; 3]) -> Result<Self> {
        let delta = [
            extent[0] / counts[0] as f64,
            extent[1] / counts[1] as f64,
            extent[2] / counts[2] as f64,
        ];
        Grid3::new(counts, delta, [0.0; 3])
    }

    pub fn n_cells(&self) -> usize {
        self.counts[0] * self.counts[1] * self.counts[2]
    }

    pub fn cell_volume(&self) -> f64 {
        self.delta[0] * self.delta[1] * self.delta[2]
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.counts[0] as f64 * self.delta[0],
            self.counts[1] as f64 * self.delta[1],
            self.counts[2] as f64 * self.delta[2],
        ]
    }

    pub fn flat(&self, ix: usize, iy: usize, iz: usize) -> usize {
        debug_assert!(ix < self.counts[0] && iy < self.counts[1] && iz < self.counts[2]);
        ix + self.counts[0] * (iy + self.counts[1] * iz)
    }

    pub fn unflat(&self, cell: usize) -> (usize, usize, usize) {
        let ix = cell % self.counts[0];
        let rest = cell / self.counts[0];
        (ix, rest % self.counts[1], rest / self.counts[1])
    }

    /// Cell center coordinates [cm].
    pub fn cell_center(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.delta[0],
            self.origin[1] + (iy as f64 + 0.5) * self.delta[1],
            self.origin[2] + (iz as f64 + 0.5) * self.delta[2],
        ]
    }

    /// Index of the cell containing `p` under the half-open convention; points
    /// on an internal face resolve to the higher-index cell.
    pub fn locate(&self, p: [f64; 3]) -> Result<(usize, usize, usize)> {
        let mut idx = [0usize; 3];
        for d in 0..3 {
            let rel = (p[d] - self.origin[d]) / self.delta[d];
            if rel < 0.0 || rel >= self.counts[d] as f64 {
                return Err(Error::Domain(format!(
                    "point {p:?} outside domain on axis {d}"
                )));
            }
            idx[d] = rel as usize;
        }
        Ok((idx[0], idx[1], idx[2]))
    }
}

/// Axis-aligned box given by inclusive low and exclusive high corners [cm].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Box3 {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|d| p[d] >= self.lo[d] && p[d] < self.hi[d])
    }
}

/// An HU override region within a phantom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuOverride {
    pub region: Box3,
    pub hu: f64,
}

/// Scenario description for a box phantom: background HU plus override boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub grid: Grid3,
    pub background_hu: f64,
    #[serde(default)]
    pub overrides: Vec<HuOverride>,
}

/// Density field over a grid cell by cell.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    pub grid: Grid3,
    pub hu: Vec<f64>,
    pub rho: Vec<f64>,
}

impl DensityGrid {
    /// Assigns HU by cell-center box membership and derives ρ.
    pub fn build(spec: &PhantomSpec) -> Result<Self> {
        let grid = spec.grid.clone();
        let ext = grid.extent();
        for (k, ov) in spec.overrides.iter().enumerate() {
            for d in 0..3 {
                let lo_ok = ov.region.lo[d] >= grid.origin[d] - 1e-12;
                let hi_ok = ov.region.hi[d] <= grid.origin[d] + ext[d] + 1e-12;
                if !lo_ok || !hi_ok || ov.region.hi[d] <= ov.region.lo[d] {
                    return Err(Error::Validation(format!(
                        "override box {k} invalid or outside domain on axis {d}"
                    )));
                }
            }
        }
        let n = grid.n_cells();
        let mut hu = vec![spec.background_hu; n];
        for iz in 0..grid.counts[2] {
            for iy in 0..grid.counts[1] {
                for ix in 0..grid.counts[0] {
                    let c = grid.cell_center(ix, iy, iz);
                    for ov in &spec.overrides {
                        if ov.region.contains(c) {
                            hu[grid.flat(ix, iy, iz)] = ov.hu;
                        }
                    }
                }
            }
        }
        let rho = hu.iter().map(|&h| hu_to_density(h)).collect();
        Ok(DensityGrid { grid, hu, rho })
    }

    /// Uniform-density phantom, mostly for tests.
    pub fn uniform(grid: Grid3, rho: f64) -> Self {
        let n = grid.n_cells();
        DensityGrid {
            grid,
            hu: vec![(rho - 1.0) * 1000.0; n],
            rho: vec![rho; n],
        }
    }

    pub fn min_rho(&self) -> f64 {
        self.rho.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Domain face through which the beam enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryFace {
    XLow,
    XHigh,
    YLow,
    YHigh,
    ZLow,
    ZHigh,
}

impl EntryFace {
    /// Axis along which rays travel.
    pub fn axis(&self) -> usize {
        match self {
            EntryFace::XLow | EntryFace::XHigh => 0,
            EntryFace::YLow | EntryFace::YHigh => 1,
            EntryFace::ZLow | EntryFace::ZHigh => 2,
        }
    }

    /// +1 when marching from the low face upward, -1 otherwise.
    pub fn step(&self) -> i64 {
        match self {
            EntryFace::XLow | EntryFace::YLow | EntryFace::ZLow => 1,
            _ => -1,
        }
    }

    /// Inward unit direction.
    pub fn direction(&self) -> [f64; 3] {
        let mut d = [0.0; 3];
        d[self.axis()] = self.step() as f64;
        d
    }

    /// The two transverse axes, in ascending order.
    pub fn transverse(&self) -> (usize, usize) {
        match self.axis() {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }
}

/// Unidirectional Gaussian pencil beam entering through one domain face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamSource {
    pub face: EntryFace,
    /// Beam center in the entry plane (coordinates of the two transverse axes)
    /// [cm]; `None` means the face center.
    pub center: Option<[f64; 2]>,
    /// Spatial standard deviation [cm].
    pub sigma: f64,
    /// Mean kinetic energy [MeV].
    pub energy_mean: f64,
    /// Energy standard deviation [MeV].
    pub energy_sigma: f64,
    /// Total particle weight.
    pub weight: f64,
}

impl BeamSource {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::Validation("beam sigma must be positive".into()));
        }
        if self.energy_sigma < 0.0 {
            return Err(Error::Validation("energy sigma must be >= 0".into()));
        }
        if self.weight < 0.0 {
            return Err(Error::Validation("beam weight must be >= 0".into()));
        }
        Ok(())
    }

    /// Beam center in transverse coordinates for the given grid.
    pub fn center_on(&self, grid: &Grid3) -> [f64; 2] {
        match self.center {
            Some(c) => c,
            None => {
                let (a, b) = self.face.transverse();
                let ext = grid.extent();
                [
                    grid.origin[a] + 0.5 * ext[a],
                    grid.origin[b] + 0.5 * ext[b],
                ]
            }
        }
    }

    /// Weight assigned to the ray entering through the face cell `(ia, ib)`
    /// (transverse cell indices): the 2D Gaussian profile integrated over
    /// that face rectangle.
    pub fn ray_weight(&self, grid: &Grid3, ia: usize, ib: usize) -> f64 {
        let (a, b) = self.face.transverse();
        let c = self.center_on(grid);
        let ga = gaussian_mass_1d(
            grid.origin[a] + ia as f64 * grid.delta[a],
            grid.origin[a] + (ia + 1) as f64 * grid.delta[a],
            c[0],
            self.sigma,
        );
        let gb = gaussian_mass_1d(
            grid.origin[b] + ib as f64 * grid.delta[b],
            grid.origin[b] + (ib + 1) as f64 * grid.delta[b],
            c[1],
            self.sigma,
        );
        self.weight * ga * gb
    }
}

/// Mass of a 1D normal distribution on [lo, hi].
pub fn gaussian_mass_1d(lo: f64, hi: f64, mean: f64, sigma: f64) -> f64 {
    let phi = |x: f64| 0.5 * (1.0 + libm::erf((x - mean) / (sigma * std::f64::consts::SQRT_2)));
    phi(hi) - phi(lo)
}
