//! Two-dimensional TMz finite-difference time-domain solver.
//!
//! Fields live on a Yee grid: `Ez` at integer nodes `(i, j)`, `Hx` at
//! `(i, j+½)` and `Hy` at `(i+½, j)`. Arrays are x-major (`i * ny + j`),
//! with `j` increasing downwards. Dispersive cells carry one Debye pole
//! advanced by an auxiliary differential equation. A CPML of
//! `pml_cells` surrounds the physical domain, which is padded by
//! replicating its edge materials.

mod cpml;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;

pub const C0: f64 = 299_792_458.0;
pub const EPS0: f64 = 8.854_187_812_8e-12;
pub const MU0: f64 = 1.256_637_062_12e-6;

/// Largest stable time step scaled by `safety`.
pub fn courant_dt(dx: f64, dy: f64, safety: f64) -> f64 {
    safety / (C0 * (1.0 / (dx * dx) + 1.0 / (dy * dy)).sqrt())
}

/// Gaussian pulse `exp(-2π²fc²(t - t0)²)` delayed by `t0 = 1/fc`.
pub fn gaussian_waveform(t: f64, fc: f64) -> f64 {
    let t0 = 1.0 / fc;
    let zeta = 2.0 * std::f64::consts::PI.powi(2) * fc * fc;
    (-zeta * (t - t0).powi(2)).exp()
}

/// Ricker wavelet (negated second derivative of a Gaussian) delayed by `√2/fc`.
pub fn ricker_waveform(t: f64, fc: f64) -> f64 {
    let t0 = 2f64.sqrt() / fc;
    let zeta = std::f64::consts::PI.powi(2) * fc * fc;
    let arg = zeta * (t - t0).powi(2);
    (1.0 - 2.0 * arg) * (-arg).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveformKind {
    Gaussian,
    Ricker,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Waveform {
    pub kind: WaveformKind,
    pub center_frequency: f64,
    /// Peak source current (A).
    pub amplitude: f64,
}

impl Waveform {
    pub fn value(&self, t: f64) -> f64 {
        self.amplitude
            * match self.kind {
                WaveformKind::Gaussian => gaussian_waveform(t, self.center_frequency),
                WaveformKind::Ricker => ricker_waveform(t, self.center_frequency),
            }
    }
}

impl Default for Waveform {
    fn default() -> Self {
        Self {
            kind: WaveformKind::Gaussian,
            center_frequency: 1e9,
            amplitude: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DebyeMaterial {
    pub eps_inf: f64,
    pub delta_eps: f64,
    /// Relaxation time (s).
    pub tau: f64,
    /// Static conductivity (S/m).
    pub sigma: f64,
}

impl DebyeMaterial {
    pub fn new(eps_inf: f64, delta_eps: f64, tau: f64, sigma: f64) -> Result<Self> {
        let ok = eps_inf >= 1.0 && delta_eps >= 0.0 && tau > 0.0 && sigma >= 0.0;
        if !ok || ![eps_inf, delta_eps, tau, sigma].iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid(format!(
                "invalid Debye material eps_inf={eps_inf} delta_eps={delta_eps} tau={tau} sigma={sigma}"
            )));
        }
        Ok(Self {
            eps_inf,
            delta_eps,
            tau,
            sigma,
        })
    }

    pub fn non_dispersive(eps_r: f64, sigma: f64) -> Result<Self> {
        Self::new(eps_r, 0.0, 1.0, sigma)
    }

    pub fn vacuum() -> Self {
        Self {
            eps_inf: 1.0,
            delta_eps: 0.0,
            tau: 1.0,
            sigma: 0.0,
        }
    }

    pub fn static_permittivity(&self) -> f64 {
        self.eps_inf + self.delta_eps
    }

    pub fn is_dispersive(&self) -> bool {
        self.delta_eps > 0.0
    }
}

/// Material layout of the physical domain (without absorbing layers).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialGrid {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub materials: Vec<DebyeMaterial>,
    /// x-major material index per cell.
    pub index: Vec<u16>,
    /// First soil row; antennas are placed relative to it.
    pub surface_row: usize,
}

impl MaterialGrid {
    pub fn uniform(nx: usize, ny: usize, dx: f64, dy: f64, material: DebyeMaterial) -> Self {
        Self {
            nx,
            ny,
            dx,
            dy,
            materials: vec![material],
            index: vec![0; nx * ny],
            surface_row: 0,
        }
    }

    pub fn material_at(&self, i: usize, j: usize) -> &DebyeMaterial {
        &self.materials[self.index[i * self.ny + j] as usize]
    }

    /// Registers `material` and returns its index.
    pub fn add_material(&mut self, material: DebyeMaterial) -> u16 {
        self.materials.push(material);
        (self.materials.len() - 1) as u16
    }

    pub fn set(&mut self, i: usize, j: usize, material: u16) {
        self.index[i * self.ny + j] = material;
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 3 || self.index.len() != self.nx * self.ny {
            return Err(Error::Invalid(format!("material grid {}×{} is malformed", self.nx, self.ny)));
        }
        if !(self.dx > 0.0 && self.dy > 0.0) {
            return Err(Error::Invalid("cell sizes must be positive".into()));
        }
        if self.index.iter().any(|&m| m as usize >= self.materials.len()) {
            return Err(Error::Invalid("material index out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub pml_cells: usize,
    pub courant_safety: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            pml_cells: 10,
            courant_safety: 0.95,
        }
    }
}

impl SolverConfig {
    /// Time step no larger than the Courant limit that divides
    /// `time_window` exactly, and the resulting sample count.
    pub fn time_step(&self, dx: f64, dy: f64, time_window: f64) -> Result<(f64, usize)> {
        if !(self.courant_safety > 0.0 && self.courant_safety <= 1.0) {
            return Err(Error::Config(format!("courant_safety {} not in (0, 1]", self.courant_safety)));
        }
        if !(time_window > 0.0) {
            return Err(Error::Config("time window must be positive".into()));
        }
        let limit = courant_dt(dx, dy, self.courant_safety);
        let steps = (time_window / limit).ceil() as usize;
        Ok((time_window / steps as f64, steps))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    /// Transmitter–receiver separation (m).
    pub tx_rx_offset: f64,
    /// Distance between consecutive traces (m).
    pub scan_step: f64,
    /// Antenna elevation above the soil surface, in cells.
    pub antenna_height_cells: usize,
    pub trace_count: usize,
    /// Recorded duration (s).
    pub time_window: f64,
    pub waveform: Waveform,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            tx_rx_offset: 0.20,
            scan_step: 0.025,
            antenna_height_cells: 2,
            trace_count: 16,
            time_window: 8e-9,
            waveform: Waveform::default(),
        }
    }
}

/// A cell in physical-domain coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub i: usize,
    pub j: usize,
}

fn as_cells(length: f64, d: f64, what: &str) -> Result<usize> {
    let n = (length / d).round();
    if (n * d - length).abs() > 1e-9 * d.max(length) || n < 0.0 {
        return Err(Error::Config(format!("{what} {length} m is not a multiple of the cell size {d} m")));
    }
    Ok(n as usize)
}

impl ScanConfig {
    /// Transmitter and receiver cells of every trace, centred on the domain.
    pub fn antenna_cells(&self, grid: &MaterialGrid) -> Result<Vec<(Cell, Cell)>> {
        if self.trace_count == 0 {
            return Err(Error::Config("trace_count must be positive".into()));
        }
        let offset = as_cells(self.tx_rx_offset, grid.dx, "tx_rx_offset")?;
        let step = as_cells(self.scan_step, grid.dx, "scan_step")?;
        let span = (self.trace_count - 1) * step + offset;
        if span + 2 >= grid.nx {
            return Err(Error::Config(format!(
                "scan spans {span} cells but the domain is only {} wide",
                grid.nx
            )));
        }
        let row = grid
            .surface_row
            .checked_sub(self.antenna_height_cells)
            .filter(|&r| r >= 1)
            .ok_or_else(|| Error::Config("antenna row falls outside the domain".into()))?;
        let start = (grid.nx - 1 - span) / 2;
        Ok((0..self.trace_count)
            .map(|k| {
                let tx = start + k * step;
                (Cell { i: tx, j: row }, Cell { i: tx + offset, j: row })
            })
            .collect())
    }
}

/// Received `Ez` per trace, `data[trace * samples + k]` at time `k·dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BScan {
    pub traces: usize,
    pub samples: usize,
    pub dt: f64,
    /// Midpoint of each trace's antenna pair (m).
    pub positions: Vec<f64>,
    pub data: Vec<f64>,
}

impl BScan {
    pub fn trace(&self, k: usize) -> &[f64] {
        &self.data[k * self.samples..(k + 1) * self.samples]
    }
}

#[derive(Clone, Copy, Debug)]
struct UpdateCoeffs {
    ca: f64,
    cb: f64,
    cj: f64,
    kp: f64,
    beta: f64,
}

impl UpdateCoeffs {
    fn new(m: &DebyeMaterial, dt: f64) -> Self {
        let (beta, kp) = if m.is_dispersive() {
            (
                2.0 * EPS0 * m.delta_eps / (2.0 * m.tau + dt),
                (2.0 * m.tau - dt) / (2.0 * m.tau + dt),
            )
        } else {
            (0.0, 0.0)
        };
        let e = EPS0 * m.eps_inf / dt;
        let denom = e + 0.5 * m.sigma + 0.5 * beta;
        Self {
            ca: (e - 0.5 * m.sigma + 0.5 * beta) / denom,
            cb: 1.0 / denom,
            cj: 0.5 * (1.0 + kp) / denom,
            kp,
            beta,
        }
    }
}

/// Simulation state: fields, polarisation current and CPML memory.
pub struct Grid2D {
    nx: usize,
    ny: usize,
    pml: usize,
    dx: f64,
    dy: f64,
    dt: f64,
    ez: Vec<f64>,
    hx: Vec<f64>,
    hy: Vec<f64>,
    jp: Vec<f64>,
    material: Vec<u16>,
    coeffs: Vec<UpdateCoeffs>,
    psi_ez_x: Vec<f64>,
    psi_ez_y: Vec<f64>,
    psi_hy_x: Vec<f64>,
    psi_hx_y: Vec<f64>,
    prof_x: cpml::Profile,
    prof_y: cpml::Profile,
    steps: usize,
}

const DIVERGENCE_CHECK_INTERVAL: usize = 64;

impl Grid2D {
    pub fn new(materials: &MaterialGrid, solver: &SolverConfig, dt: f64) -> Result<Self> {
        materials.validate()?;
        let limit = courant_dt(materials.dx, materials.dy, 1.0);
        if !(dt > 0.0 && dt <= limit * (1.0 + 1e-12)) {
            return Err(Error::Config(format!("dt {dt:e} exceeds the Courant limit {limit:e}")));
        }
        let p = solver.pml_cells;
        let (nx, ny) = (materials.nx + 2 * p, materials.ny + 2 * p);
        let mut material = vec![0u16; nx * ny];
        for i in 0..nx {
            let si = i.saturating_sub(p).min(materials.nx - 1);
            for j in 0..ny {
                let sj = j.saturating_sub(p).min(materials.ny - 1);
                material[i * ny + j] = materials.index[si * materials.ny + sj];
            }
        }
        let coeffs = materials.materials.iter().map(|m| UpdateCoeffs::new(m, dt)).collect();
        let zeros = || vec![0.0; nx * ny];
        Ok(Self {
            nx,
            ny,
            pml: p,
            dx: materials.dx,
            dy: materials.dy,
            dt,
            ez: zeros(),
            hx: zeros(),
            hy: zeros(),
            jp: zeros(),
            material,
            coeffs,
            psi_ez_x: zeros(),
            psi_ez_y: zeros(),
            psi_hy_x: zeros(),
            psi_hx_y: zeros(),
            prof_x: cpml::Profile::new(nx, p, materials.dx, dt),
            prof_y: cpml::Profile::new(ny, p, materials.dy, dt),
            steps: 0,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Padded dimensions including absorbing layers.
    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    fn flat(&self, c: Cell) -> usize {
        (c.i + self.pml) * self.ny + c.j + self.pml
    }

    pub fn ez_at(&self, c: Cell) -> f64 {
        self.ez[self.flat(c)]
    }

    pub fn ez(&self) -> &[f64] {
        &self.ez
    }

    pub fn hx(&self) -> &[f64] {
        &self.hx
    }

    pub fn hy(&self) -> &[f64] {
        &self.hy
    }

    /// `cb` at `c`: the factor multiplying current density in the E update.
    pub fn source_coefficient(&self, c: Cell) -> f64 {
        self.coeffs[self.material[self.flat(c)] as usize].cb
    }

    /// Advances one full time step. `source` is a soft line current (A)
    /// injected at a physical cell during the E update.
    pub fn step(&mut self, source: Option<(Cell, f64)>) -> Result<()> {
        self.update_h();
        self.update_e(source)?;
        self.steps += 1;
        if self.steps % DIVERGENCE_CHECK_INTERVAL == 0 && !self.ez.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { step: self.steps });
        }
        Ok(())
    }

    fn update_h(&mut self) {
        let (nx, ny) = (self.nx, self.ny);
        let chx = self.dt / (MU0 * self.dx);
        let chy = self.dt / (MU0 * self.dy);
        for i in 0..nx {
            let ez = &self.ez[i * ny..(i + 1) * ny];
            let hx = &mut self.hx[i * ny..(i + 1) * ny - 1];
            for (j, h) in hx.iter_mut().enumerate() {
                *h -= chy * (ez[j + 1] - ez[j]);
            }
        }
        for i in 0..nx - 1 {
            let (ez0, ez1) = (&self.ez[i * ny..(i + 1) * ny], &self.ez[(i + 1) * ny..(i + 2) * ny]);
            let hy = &mut self.hy[i * ny..(i + 1) * ny];
            for j in 0..ny {
                hy[j] += chx * (ez1[j] - ez0[j]);
            }
        }
        // CPML corrections
        let inv_dx = 1.0 / self.dx;
        let inv_dy = 1.0 / self.dy;
        let cmu = self.dt / MU0;
        for &i in &self.prof_x.h_active {
            let (b, a) = self.prof_x.h[i];
            for j in 0..ny {
                let idx = i * ny + j;
                let psi = &mut self.psi_hy_x[idx];
                *psi = b * *psi + a * (self.ez[idx + ny] - self.ez[idx]) * inv_dx;
                self.hy[idx] += cmu * *psi;
            }
        }
        for i in 0..nx {
            for &j in &self.prof_y.h_active {
                let (b, a) = self.prof_y.h[j];
                let idx = i * ny + j;
                let psi = &mut self.psi_hx_y[idx];
                *psi = b * *psi + a * (self.ez[idx + 1] - self.ez[idx]) * inv_dy;
                self.hx[idx] -= cmu * *psi;
            }
        }
    }

    /// Adds `delta` (already multiplied by `cb`) to `Ez` at `idx`, keeping
    /// the Debye current consistent with the corrected field.
    #[inline]
    fn correct_e(&mut self, idx: usize, delta: f64) {
        let c = &self.coeffs[self.material[idx] as usize];
        self.ez[idx] += delta;
        self.jp[idx] += c.beta * delta;
    }

    fn update_e(&mut self, source: Option<(Cell, f64)>) -> Result<()> {
        let (nx, ny) = (self.nx, self.ny);
        let inv_dx = 1.0 / self.dx;
        let inv_dy = 1.0 / self.dy;
        for i in 1..nx - 1 {
            let row = i * ny;
            let hy0 = &self.hy[row - ny..row];
            let hy1 = &self.hy[row..row + ny];
            let hx = &self.hx[row..row + ny];
            let mat = &self.material[row..row + ny];
            let ez = &mut self.ez[row..row + ny];
            let jp = &mut self.jp[row..row + ny];
            for j in 1..ny - 1 {
                let curl = (hy1[j] - hy0[j]) * inv_dx - (hx[j] - hx[j - 1]) * inv_dy;
                let c = &self.coeffs[mat[j] as usize];
                let old = ez[j];
                let new = c.ca * old + c.cb * curl - c.cj * jp[j];
                jp[j] = c.kp * jp[j] + c.beta * (new - old);
                ez[j] = new;
            }
        }
        for k in 0..self.prof_x.e_active.len() {
            let i = self.prof_x.e_active[k];
            let (b, a) = self.prof_x.e[i];
            for j in 1..ny - 1 {
                let idx = i * ny + j;
                let psi = b * self.psi_ez_x[idx] + a * (self.hy[idx] - self.hy[idx - ny]) * inv_dx;
                self.psi_ez_x[idx] = psi;
                let cb = self.coeffs[self.material[idx] as usize].cb;
                self.correct_e(idx, cb * psi);
            }
        }
        for i in 1..nx - 1 {
            for k in 0..self.prof_y.e_active.len() {
                let j = self.prof_y.e_active[k];
                let (b, a) = self.prof_y.e[j];
                let idx = i * ny + j;
                let psi = b * self.psi_ez_y[idx] + a * (self.hx[idx] - self.hx[idx - 1]) * inv_dy;
                self.psi_ez_y[idx] = psi;
                let cb = self.coeffs[self.material[idx] as usize].cb;
                self.correct_e(idx, -cb * psi);
            }
        }
        if let Some((cell, current)) = source {
            let (pi, pj) = (cell.i + self.pml, cell.j + self.pml);
            if pi == 0 || pj == 0 || pi + 1 >= nx || pj + 1 >= ny {
                return Err(Error::Invalid(format!("source cell {cell:?} is not interior")));
            }
            let idx = self.flat(cell);
            let cb = self.coeffs[self.material[idx] as usize].cb;
            self.correct_e(idx, -cb * current / (self.dx * self.dy));
        }
        Ok(())
    }
}

fn check_cell(grid: &MaterialGrid, c: Cell, what: &str) -> Result<()> {
    if c.i == 0 || c.j == 0 || c.i + 1 >= grid.nx || c.j + 1 >= grid.ny {
        return Err(Error::Invalid(format!("{what} cell {c:?} is outside the physical domain interior")));
    }
    Ok(())
}

/// Simulates one transmitter/receiver pair and returns `Ez` at the receiver
/// for every sample time `k·dt`, `k = 0..n_samples`.
pub fn run_ascan(grid: &MaterialGrid, solver: &SolverConfig, tx: Cell, rx: Cell, scan: &ScanConfig) -> Result<Vec<f64>> {
    check_cell(grid, tx, "transmitter")?;
    check_cell(grid, rx, "receiver")?;
    let (dt, n_samples) = solver.time_step(grid.dx, grid.dy, scan.time_window)?;
    let mut sim = Grid2D::new(grid, solver, dt)?;
    let mut trace = Vec::with_capacity(n_samples);
    trace.push(sim.ez_at(rx));
    for n in 0..n_samples - 1 {
        let current = scan.waveform.value((n as f64 + 0.5) * dt);
        sim.step(Some((tx, current)))?;
        let v = sim.ez_at(rx);
        if !v.is_finite() {
            return Err(Error::Diverged { step: sim.steps() });
        }
        trace.push(v);
    }
    Ok(trace)
}

/// Whether traces of a B-scan are simulated concurrently.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

/// Common-offset B-scan: one independent simulation per trace.
pub fn run_bscan(grid: &MaterialGrid, solver: &SolverConfig, scan: &ScanConfig) -> Result<BScan> {
    run_bscan_with(grid, solver, scan, Execution::Parallel)
}

pub fn run_bscan_with(grid: &MaterialGrid, solver: &SolverConfig, scan: &ScanConfig, exec: Execution) -> Result<BScan> {
    let pairs = scan.antenna_cells(grid)?;
    let (dt, samples) = solver.time_step(grid.dx, grid.dy, scan.time_window)?;
    let run = |k: usize| run_ascan(grid, solver, pairs[k].0, pairs[k].1, scan);
    let traces: Vec<Result<Vec<f64>>> = match exec {
        Execution::Parallel => parallel::map_indexed(pairs.len(), run),
        Execution::Sequential => (0..pairs.len()).map(run).collect(),
    };
    let mut data = Vec::with_capacity(pairs.len() * samples);
    for t in traces {
        data.extend(t?);
    }
    let positions = pairs
        .iter()
        .map(|(tx, rx)| ((tx.i + rx.i) as f64 / 2.0 + 0.5) * grid.dx)
        .collect();
    Ok(BScan {
        traces: pairs.len(),
        samples,
        dt,
        positions,
        data,
    })
}

#[cfg(test)]
mod tests;
