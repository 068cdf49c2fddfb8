//! Random subsurface scenes: correlated heterogeneous soil under an air
//! layer, with one (or optionally several) buried objects.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdtd::{DebyeMaterial, MaterialGrid};

pub const SOIL_BINS: usize = 50;
pub const SOIL_TAU: f64 = 9.23e-12;
const SOIL_EPS: (f64, f64) = (3.59, 7.17);
const SOIL_SIGMA: (f64, f64) = (8.37e-3, 52.13e-3);
const WATER: (f64, f64) = (0.001, 0.10);
const POLYGON_RETRIES: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub nx: usize,
    pub ny: usize,
    /// Square cell size (m).
    pub cell: f64,
    pub air_fraction: f64,
    /// Training soil realizations; scenes cycle through them.
    pub soil_seeds: Vec<u64>,
    /// Held-out realization, addressed as distribution id `soil_seeds.len()`.
    pub transfer_soil_seed: u64,
    /// Gaussian smoothing length of the soil noise, in cells.
    pub smoothing_cells: f64,
    pub margin_cells: usize,
    /// Semi-axis range of objects (m).
    pub size_range: [f64; 2],
    pub eps_range: [f64; 2],
    /// Object conductivity range (S/m).
    pub sigma_range: [f64; 2],
    pub object_count: usize,
    pub allow_concave: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            nx: 120,
            ny: 60,
            cell: 0.005,
            air_fraction: 0.25,
            soil_seeds: (1..=10).collect(),
            transfer_soil_seed: 11,
            smoothing_cells: 7.0,
            margin_cells: 3,
            size_range: [0.015, 0.05],
            eps_range: [1.0, 32.0],
            sigma_range: [0.0, 0.8e-3],
            object_count: 1,
            allow_concave: false,
        }
    }
}

impl SceneConfig {
    pub fn surface_row(&self) -> usize {
        (self.ny as f64 * self.air_fraction).round() as usize
    }

    pub fn soil_rows(&self) -> usize {
        self.ny - self.surface_row()
    }

    pub fn soil_seed(&self, distribution: usize) -> Result<u64> {
        match distribution {
            d if d < self.soil_seeds.len() => Ok(self.soil_seeds[d]),
            d if d == self.soil_seeds.len() => Ok(self.transfer_soil_seed),
            d => Err(Error::Config(format!("soil distribution {d} does not exist"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.nx < 8 || self.ny < 8 || !(self.cell > 0.0) {
            return bad("grid must be at least 8×8 with a positive cell size");
        }
        if !(0.0..1.0).contains(&self.air_fraction) {
            return bad("air_fraction must lie in [0, 1)");
        }
        if self.soil_seeds.is_empty() {
            return bad("at least one soil seed is required");
        }
        if !(self.smoothing_cells >= 0.0) {
            return bad("smoothing_cells must be non-negative");
        }
        let [lo, hi] = self.size_range;
        if !(lo > 0.0 && hi >= lo) {
            return bad("size_range must be positive and ordered");
        }
        let [elo, ehi] = self.eps_range;
        if !(elo >= 1.0 && ehi >= elo) {
            return bad("eps_range must be ordered and at least 1");
        }
        let [slo, shi] = self.sigma_range;
        if !(slo >= 0.0 && shi >= slo) {
            return bad("sigma_range must be ordered and non-negative");
        }
        if self.object_count == 0 {
            return bad("object_count must be at least 1");
        }
        let extent = 2.0 * (hi / self.cell + self.margin_cells as f64);
        if extent > self.nx as f64 || extent > self.soil_rows() as f64 {
            return bad("largest object does not fit inside the soil region");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Ellipse,
    Hexagon,
    Pentagon,
    Quadrilateral,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Circle,
        ShapeKind::Ellipse,
        ShapeKind::Hexagon,
        ShapeKind::Pentagon,
        ShapeKind::Quadrilateral,
        ShapeKind::Triangle,
    ];

    pub fn vertex_count(self) -> Option<usize> {
        match self {
            ShapeKind::Circle | ShapeKind::Ellipse => None,
            ShapeKind::Hexagon => Some(6),
            ShapeKind::Pentagon => Some(5),
            ShapeKind::Quadrilateral => Some(4),
            ShapeKind::Triangle => Some(3),
        }
    }
}

/// A buried object. Coordinates are metres from the top-left corner of
/// the domain with y pointing down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub kind: ShapeKind,
    pub center: [f64; 2],
    /// Semi-axes of the circle, ellipse, or the ellipse the polygon is inscribed in.
    pub semi_axes: [f64; 2],
    pub rotation: f64,
    /// Polygon vertices in absolute coordinates, counter-clockwise in (x, y).
    pub vertices: Vec<[f64; 2]>,
    pub eps_r: f64,
    pub sigma: f64,
}

impl ObjectSpec {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        match self.kind {
            ShapeKind::Circle | ShapeKind::Ellipse => {
                let (s, c) = self.rotation.sin_cos();
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / self.semi_axes[0]).powi(2) + (v / self.semi_axes[1]).powi(2) <= 1.0
            }
            _ => point_in_polygon(&self.vertices, p),
        }
    }

    /// Half-widths of an axis-aligned box enclosing the object.
    fn half_extent(&self) -> [f64; 2] {
        match self.kind {
            ShapeKind::Circle | ShapeKind::Ellipse => {
                let (s, c) = self.rotation.sin_cos();
                let [a, b] = self.semi_axes;
                [(a * a * c * c + b * b * s * s).sqrt(), (a * a * s * s + b * b * c * c).sqrt()]
            }
            _ => self.vertices.iter().fold([0.0f64; 2], |m, v| {
                [m[0].max((v[0] - self.center[0]).abs()), m[1].max((v[1] - self.center[1]).abs())]
            }),
        }
    }
}

/// Even-odd rule; valid for concave polygons too.
pub fn point_in_polygon(vertices: &[[f64; 2]], p: [f64; 2]) -> bool {
    let mut inside = false;
    let n = vertices.len();
    for k in 0..n {
        let (a, b) = (vertices[k], vertices[(k + n - 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
    }
    inside
}

/// True when every turn along the closed polygon has the same orientation.
pub fn is_convex(vertices: &[[f64; 2]]) -> bool {
    let n = vertices.len();
    if n < 3 {
        return false;
    }
    let mut sign = 0.0f64;
    for k in 0..n {
        let (a, b, c) = (vertices[k], vertices[(k + 1) % n], vertices[(k + 2) % n]);
        let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        if cross == 0.0 {
            continue;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    sign != 0.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub soil_distribution_id: usize,
    pub objects: Vec<ObjectSpec>,
}

/// Spatially correlated soil: seeded white noise, Gaussian-smoothed and
/// rank-quantized into [`SOIL_BINS`] equally populated bins. Returns an
/// x-major `nx × ny` array of bin indices.
pub fn soil_field(nx: usize, ny: usize, smoothing_cells: f64, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..nx * ny).map(|_| rng.sample(StandardNormal)).collect();
    let smooth = gaussian_blur(&noise, nx, ny, smoothing_cells);
    let mut order: Vec<usize> = (0..nx * ny).collect();
    order.sort_by(|&a, &b| smooth[a].total_cmp(&smooth[b]).then(a.cmp(&b)));
    let mut bins = vec![0u8; nx * ny];
    for (rank, &idx) in order.iter().enumerate() {
        bins[idx] = (rank * SOIL_BINS / (nx * ny)) as u8;
    }
    bins
}

fn gaussian_blur(data: &[f64], nx: usize, ny: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return data.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let reflect = |k: isize, n: usize| -> usize {
        let n = n as isize;
        let mut k = k;
        // symmetric extension; loop handles kernels wider than the grid
        while k < 0 || k >= n {
            k = if k < 0 { -k - 1 } else { 2 * n - k - 1 };
        }
        k as usize
    };
    let mut tmp = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                acc += w * data[reflect(i as isize + t as isize - r, nx) * ny + j];
            }
            tmp[i * ny + j] = acc / norm;
        }
    }
    let mut out = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                acc += w * tmp[i * ny + reflect(j as isize + t as isize - r, ny)];
            }
            out[i * ny + j] = acc / norm;
        }
    }
    out
}

/// Debye description of soil bin `bin`; endpoints are the dry and wet
/// limits of the mixture and values between are linear in water content.
pub fn soil_bin_to_material(bin: usize) -> Result<DebyeMaterial> {
    if bin >= SOIL_BINS {
        return Err(Error::Invalid(format!("soil bin {bin} outside 0..{SOIL_BINS}")));
    }
    let water = WATER.0 + bin as f64 * (WATER.1 - WATER.0) / (SOIL_BINS - 1) as f64;
    let f = (water - WATER.0) / (WATER.1 - WATER.0);
    let eps = SOIL_EPS.0 + f * (SOIL_EPS.1 - SOIL_EPS.0);
    let sigma = SOIL_SIGMA.0 + f * (SOIL_SIGMA.1 - SOIL_SIGMA.0);
    let eps_inf = 1.0 + 0.3 * (eps - 1.0);
    DebyeMaterial::new(eps_inf, eps - eps_inf, SOIL_TAU, sigma)
}

pub fn sample_scene(config: &SceneConfig, seed: u64, soil_distribution_id: usize) -> Result<SceneSpec> {
    config.validate()?;
    config.soil_seed(soil_distribution_id)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objects = (0..config.object_count)
        .map(|_| sample_object(config, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneSpec {
        seed,
        soil_distribution_id,
        objects,
    })
}

fn sample_object(config: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<ObjectSpec> {
    let kind = ShapeKind::ALL[rng.random_range(0..ShapeKind::ALL.len())];
    let [lo, hi] = config.size_range;
    let a = rng.random_range(lo..=hi);
    let b = match kind {
        ShapeKind::Circle => a,
        _ => rng.random_range(lo..=hi),
    };
    let rotation = rng.random_range(0.0..std::f64::consts::PI);
    let eps_r = rng.random_range(config.eps_range[0]..=config.eps_range[1]);
    let sigma = rng.random_range(config.sigma_range[0]..=config.sigma_range[1]);
    let shape = match kind.vertex_count() {
        None => Vec::new(),
        Some(n) => polygon_on_ellipse(n, a, b, rotation, config.allow_concave, rng),
    };
    let mut obj = ObjectSpec {
        kind,
        center: [0.0; 2],
        semi_axes: [a, b],
        rotation,
        vertices: shape.clone(),
        eps_r,
        sigma,
    };
    // place the object so its bounding box keeps the margin inside the soil
    let [hx, hy] = obj.half_extent();
    let margin = config.margin_cells as f64 * config.cell;
    let x = (margin + hx, config.nx as f64 * config.cell - margin - hx);
    let y = (
        config.surface_row() as f64 * config.cell + margin + hy,
        config.ny as f64 * config.cell - margin - hy,
    );
    if x.0 > x.1 || y.0 > y.1 {
        return Err(Error::Config("object does not fit inside the soil region".into()));
    }
    obj.center = [rng.random_range(x.0..=x.1), rng.random_range(y.0..=y.1)];
    for v in &mut obj.vertices {
        v[0] += obj.center[0];
        v[1] += obj.center[1];
    }
    Ok(obj)
}

/// Vertices on a rotated ellipse at jittered angles, each pulled inward
/// by a random factor. Inward pulls can still produce a reflex corner, so
/// those draws are rejected; after too many rejections the unperturbed
/// points (always convex) are used.
fn polygon_on_ellipse(n: usize, a: f64, b: f64, rotation: f64, concave: bool, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let sector = std::f64::consts::TAU / n as f64;
    let phase = rng.random_range(0.0..sector);
    let place = |theta: f64, r: f64| {
        let (u, v) = (r * a * theta.cos(), r * b * theta.sin());
        let (s, c) = rotation.sin_cos();
        [c * u - s * v, s * u + c * v]
    };
    for _ in 0..POLYGON_RETRIES {
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|k| {
                let theta = phase + sector * (k as f64 + rng.random_range(-0.3..0.3));
                let r = if concave { rng.random_range(0.4..1.0) } else { rng.random_range(0.8..1.0) };
                place(theta, r)
            })
            .collect();
        if concave || is_convex(&pts) {
            return pts;
        }
    }
    (0..n).map(|k| place(phase + sector * k as f64, 1.0)).collect()
}

/// Per-cell permittivity and conductivity maps plus the FDTD material
/// layout. Material indices: soil bins `0..50`, air `50`, objects from `51`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialMaps {
    pub nx: usize,
    pub ny: usize,
    /// x-major static relative permittivity.
    pub eps_r: Vec<f64>,
    pub sigma: Vec<f64>,
    pub grid: MaterialGrid,
}

pub const AIR_INDEX: u16 = SOIL_BINS as u16;

impl MaterialMaps {
    fn from_grid(grid: MaterialGrid) -> Self {
        let eps_r = grid.index.iter().map(|&m| grid.materials[m as usize].static_permittivity()).collect();
        let sigma = grid.index.iter().map(|&m| grid.materials[m as usize].sigma).collect();
        Self {
            nx: grid.nx,
            ny: grid.ny,
            eps_r,
            sigma,
            grid,
        }
    }

    /// Cells that carry an object material.
    pub fn object_mask(&self) -> Vec<bool> {
        self.grid.index.iter().map(|&m| m > AIR_INDEX).collect()
    }
}

/// Soil and air with no objects.
fn background(config: &SceneConfig, soil_distribution_id: usize) -> Result<MaterialGrid> {
    config.validate()?;
    let seed = config.soil_seed(soil_distribution_id)?;
    let (nx, ny, top) = (config.nx, config.ny, config.surface_row());
    let mut grid = MaterialGrid::uniform(nx, ny, config.cell, config.cell, soil_bin_to_material(0)?);
    for bin in 1..SOIL_BINS {
        grid.add_material(soil_bin_to_material(bin)?);
    }
    grid.add_material(DebyeMaterial::vacuum());
    grid.surface_row = top;
    let rows = ny - top;
    let soil = soil_field(nx, rows, config.smoothing_cells, seed);
    for i in 0..nx {
        for j in 0..ny {
            let m = if j < top { AIR_INDEX } else { soil[i * rows + j - top] as u16 };
            grid.set(i, j, m);
        }
    }
    Ok(grid)
}

fn object_material(eps_r: f64, sigma: f64) -> Result<DebyeMaterial> {
    DebyeMaterial::non_dispersive(eps_r, sigma)
}

pub fn rasterize(spec: &SceneSpec, config: &SceneConfig) -> Result<MaterialMaps> {
    let mut grid = background(config, spec.soil_distribution_id)?;
    let top = config.surface_row();
    for obj in &spec.objects {
        let [hx, hy] = obj.half_extent();
        let (w, h) = (config.nx as f64 * config.cell, config.ny as f64 * config.cell);
        let top_m = top as f64 * config.cell;
        if obj.center[0] - hx < 0.0 || obj.center[0] + hx > w || obj.center[1] - hy < top_m || obj.center[1] + hy > h {
            return Err(Error::Invalid("object extends outside the soil region".into()));
        }
        let m = grid.add_material(object_material(obj.eps_r, obj.sigma)?);
        for i in 0..config.nx {
            for j in top..config.ny {
                let p = [(i as f64 + 0.5) * config.cell, (j as f64 + 0.5) * config.cell];
                if obj.contains(p) {
                    grid.set(i, j, m);
                }
            }
        }
    }
    Ok(MaterialMaps::from_grid(grid))
}

/// Binary object mask, x-major `nx × ny`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<bool>,
}

impl Mask {
    /// Parses a binary (P5) PGM with 8-bit samples; values ≥ 128 are set.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = |d: &str| Error::Invalid(format!("PGM: {d}"));
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("only binary greyscale (P5) is supported"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(bad("only 8-bit samples are supported"));
        }
        let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
        if data.len() < width * height {
            return Err(bad("raster shorter than header"));
        }
        // PGM rows run left to right, top to bottom
        let mut cells = vec![false; width * height];
        for row in 0..height {
            for col in 0..width {
                cells[col * height + row] = data[row * width + col] >= 128;
            }
        }
        Ok(Self {
            nx: width,
            ny: height,
            cells,
        })
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.nx, self.ny).into_bytes();
        for row in 0..self.ny {
            for col in 0..self.nx {
                out.push(if self.cells[col * self.ny + row] { 255 } else { 0 });
            }
        }
        out
    }
}

/// Object cells from `mask` over a generated soil background. The mask
/// covers the full domain; only its soil part is applied.
pub fn mask_to_maps(mask: &Mask, config: &SceneConfig, soil_distribution_id: usize, eps_r: f64, sigma: f64) -> Result<MaterialMaps> {
    if mask.nx != config.nx || mask.ny != config.ny {
        return Err(Error::shape(
            "import_mask",
            format!("mask is {}×{}, grid is {}×{}", mask.nx, mask.ny, config.nx, config.ny),
        ));
    }
    let mut grid = background(config, soil_distribution_id)?;
    let m = grid.add_material(object_material(eps_r, sigma)?);
    for i in 0..config.nx {
        for j in config.surface_row()..config.ny {
            if mask.cells[i * config.ny + j] {
                grid.set(i, j, m);
            }
        }
    }
    Ok(MaterialMaps::from_grid(grid))
}

/// A scene whose object is an irregular convex polygon outside the six
/// generator shapes: 7 to 12 vertices at random angles on a rotated
/// ellipse, which keeps it convex. Used as unseen test geometry.
pub fn freeform_maps(config: &SceneConfig, seed: u64, soil_distribution_id: usize) -> Result<MaterialMaps> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(7..=12);
    let [lo, hi] = config.size_range;
    let (a, b) = (rng.random_range(lo..=hi), rng.random_range(lo..=hi));
    let rotation = rng.random_range(0.0..std::f64::consts::PI);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    let (s, c) = rotation.sin_cos();
    let mut vertices: Vec<[f64; 2]> = angles
        .iter()
        .map(|t| {
            let (u, v) = (a * t.cos(), b * t.sin());
            [c * u - s * v, s * u + c * v]
        })
        .collect();
    let eps_r = rng.random_range(config.eps_range[0]..=config.eps_range[1]);
    let sigma = rng.random_range(config.sigma_range[0]..=config.sigma_range[1]);
    let [hx, hy] = vertices
        .iter()
        .fold([0.0f64; 2], |m, v| [m[0].max(v[0].abs()), m[1].max(v[1].abs())]);
    let margin = config.margin_cells as f64 * config.cell;
    let x = (margin + hx, config.nx as f64 * config.cell - margin - hx);
    let y = (
        config.surface_row() as f64 * config.cell + margin + hy,
        config.ny as f64 * config.cell - margin - hy,
    );
    if x.0 > x.1 || y.0 > y.1 {
        return Err(Error::Config("object does not fit inside the soil region".into()));
    }
    let center = [rng.random_range(x.0..=x.1), rng.random_range(y.0..=y.1)];
    for v in &mut vertices {
        v[0] += center[0];
        v[1] += center[1];
    }
    let mut mask = Mask {
        nx: config.nx,
        ny: config.ny,
        cells: vec![false; config.nx * config.ny],
    };
    for i in 0..config.nx {
        for j in 0..config.ny {
            let p = [(i as f64 + 0.5) * config.cell, (j as f64 + 0.5) * config.cell];
            mask.cells[i * config.ny + j] = point_in_polygon(&vertices, p);
        }
    }
    mask_to_maps(&mask, config, soil_distribution_id, eps_r, sigma)
}

pub fn import_mask(path: &Path, config: &SceneConfig, soil_distribution_id: usize, eps_r: f64, sigma: f64) -> Result<MaterialMaps> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mask = Mask::from_pgm(&bytes)?;
    mask_to_maps(&mask, config, soil_distribution_id, eps_r, sigma)
}
