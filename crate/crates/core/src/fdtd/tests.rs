use super::*;

const DESK_DX: f64 = 0.005;

fn peak(tr: &[f64]) -> (usize, f64) {
    tr.iter()
        .enumerate()
        .fold((0, 0.0f64), |(bk, bv), (k, &v)| if v.abs() > bv.abs() { (k, v) } else { (bk, bv) })
}

/// Sub-sample peak location of |trace| by parabolic interpolation.
fn peak_time(tr: &[f64], dt: f64) -> f64 {
    let (k, _) = peak(tr);
    if k == 0 || k + 1 >= tr.len() {
        return k as f64 * dt;
    }
    let (a, b, c) = (tr[k - 1].abs(), tr[k].abs(), tr[k + 1].abs());
    let denom = a - 2.0 * b + c;
    let shift = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    (k as f64 + shift) * dt
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Air over non-dispersive soil, desk dimensions.
fn desk_ground(eps_soil: f64, sigma: f64) -> MaterialGrid {
    let mut g = MaterialGrid::uniform(120, 60, DESK_DX, DESK_DX, DebyeMaterial::vacuum());
    let soil = g.add_material(DebyeMaterial::non_dispersive(eps_soil, sigma).unwrap());
    g.surface_row = 15;
    for i in 0..g.nx {
        for j in 15..g.ny {
            g.set(i, j, soil);
        }
    }
    g
}

/// Analytic Ez of an infinite line current `I(t) = w(t)` in vacuum at
/// distance `rho`: `-(μ0/2π) ∫_0^∞ I'(t - (ρ/c)·cosh u) du`.
fn line_source_field(t: f64, rho: f64, fc: f64) -> f64 {
    let a = rho / C0;
    if t <= a {
        return 0.0;
    }
    let dw = |s: f64| {
        let t0 = 1.0 / fc;
        let z = 2.0 * std::f64::consts::PI.powi(2) * fc * fc;
        -2.0 * z * (s - t0) * (-z * (s - t0).powi(2)).exp()
    };
    let umax = (t / a).acosh();
    let n = 20_000;
    let h = umax / n as f64;
    // composite Simpson
    let mut acc = dw(t - a) + dw(t - a * umax.cosh());
    for k in 1..n {
        let u = k as f64 * h;
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * dw(t - a * u.cosh());
    }
    -MU0 / (2.0 * std::f64::consts::PI) * acc * h / 3.0
}

#[test]
fn courant_limit() {
    let dt = courant_dt(0.0025, 0.0025, 1.0);
    assert!((dt - 5.8966e-12).abs() < 1e-15, "{dt:e}");
    assert!((courant_dt(0.00125, 0.00125, 1.0) - dt / 2.0).abs() < 1e-24);
    assert!((courant_dt(0.0025, 0.0025, 0.5) - dt / 2.0).abs() < 1e-24);
}

#[test]
fn time_step_divides_window() {
    let s = SolverConfig::default();
    let (dt, n) = s.time_step(DESK_DX, DESK_DX, 8e-9).unwrap();
    assert!(dt <= courant_dt(DESK_DX, DESK_DX, 0.95));
    assert!((dt * n as f64 - 8e-9).abs() < 1e-21);
    let bad = SolverConfig { courant_safety: 1.5, ..s };
    assert!(bad.time_step(DESK_DX, DESK_DX, 8e-9).is_err());
}

#[test]
fn gaussian_pulse_shape() {
    let fc = 1e9;
    assert_eq!(gaussian_waveform(1.0 / fc, fc), 1.0);
    let w0 = gaussian_waveform(0.0, fc);
    assert!((w0 - (-2.0 * std::f64::consts::PI.powi(2)).exp()).abs() < 1e-20);
    assert!((w0 - 2.68e-9).abs() < 0.01e-9);
    for d in [0.1e-9, 0.37e-9, 0.8e-9] {
        assert!((gaussian_waveform(1e-9 + d, fc) - gaussian_waveform(1e-9 - d, fc)).abs() < 1e-15);
    }
}

#[test]
fn debye_material_validation() {
    assert!(DebyeMaterial::new(0.5, 1.0, 1e-11, 0.0).is_err());
    assert!(DebyeMaterial::new(2.0, -1.0, 1e-11, 0.0).is_err());
    assert!(DebyeMaterial::new(2.0, 1.0, 0.0, 0.0).is_err());
    assert!(DebyeMaterial::new(2.0, 1.0, 1e-11, -0.1).is_err());
    let m = DebyeMaterial::new(2.0, 3.0, 1e-11, 0.01).unwrap();
    assert_eq!(m.static_permittivity(), 5.0);
}

#[test]
fn zero_source_keeps_fields_zero() {
    let g = desk_ground(5.0, 0.01);
    let mut sim = Grid2D::new(&g, &SolverConfig::default(), 1e-11).unwrap();
    for _ in 0..200 {
        sim.step(None).unwrap();
    }
    assert!(sim.ez().iter().chain(sim.hx()).chain(sim.hy()).all(|&v| v == 0.0));
}

#[test]
fn single_injection_step() {
    let g = desk_ground(5.0, 0.01);
    let mut sim = Grid2D::new(&g, &SolverConfig::default(), 1e-11).unwrap();
    let src = Cell { i: 60, j: 30 };
    sim.step(Some((src, 1.0))).unwrap();
    let expect = -sim.source_coefficient(src) * 1.0 / (DESK_DX * DESK_DX);
    assert_eq!(sim.ez_at(src), expect);
    for (di, dj) in [(0isize, 1isize), (0, -1), (1, 0), (-1, 0)] {
        let c = Cell {
            i: (60 + di) as usize,
            j: (30 + dj) as usize,
        };
        assert_eq!(sim.ez_at(c), 0.0);
    }
}

#[test]
fn free_space_energy_is_conserved_after_turn_off() {
    let g = MaterialGrid::uniform(400, 400, DESK_DX, DESK_DX, DebyeMaterial::vacuum());
    let solver = SolverConfig::default();
    let (dt, _) = solver.time_step(DESK_DX, DESK_DX, 8e-9).unwrap();
    let mut sim = Grid2D::new(&g, &solver, dt).unwrap();
    let src = Cell { i: 200, j: 200 };
    let w = Waveform::default();
    let off = 200;
    for n in 0..off {
        sim.step(Some((src, w.value((n as f64 + 0.5) * dt)))).unwrap();
    }
    // W^n = ε0 Σ(E^n)² + μ0 Σ H^{n-½}·H^{n+½} is the invariant of the lossless Yee scheme.
    let energy = |sim: &mut Grid2D| {
        let e: f64 = sim.ez().iter().map(|v| v * v).sum::<f64>() * EPS0;
        let (hx0, hy0) = (sim.hx().to_vec(), sim.hy().to_vec());
        sim.step(None).unwrap();
        let h: f64 = hx0.iter().zip(sim.hx()).map(|(a, b)| a * b).sum::<f64>()
            + hy0.iter().zip(sim.hy()).map(|(a, b)| a * b).sum::<f64>();
        e + MU0 * h
    };
    let mut prev = energy(&mut sim);
    assert!(prev > 0.0);
    // the leading edge of the turn-on reaches the absorbing layer near step 330
    for _ in 0..3 {
        for _ in 0..39 {
            sim.step(None).unwrap();
        }
        let now = energy(&mut sim);
        assert!(now <= prev * (1.0 + 1e-3), "energy grew: {prev:e} -> {now:e}");
        assert!(now >= prev * (1.0 - 1e-3), "energy lost: {prev:e} -> {now:e}");
        prev = now;
    }
}

#[test]
fn free_space_arrival_matches_line_source_oracle() {
    let dx = 0.0025;
    let g = MaterialGrid::uniform(240, 240, dx, dx, DebyeMaterial::vacuum());
    let solver = SolverConfig::default();
    let scan = ScanConfig {
        time_window: 3e-9,
        ..ScanConfig::default()
    };
    let (dt, n) = solver.time_step(dx, dx, scan.time_window).unwrap();
    let tx = Cell { i: 60, j: 120 };
    let cell_time = dx / C0;
    for cells in [40usize, 80, 120] {
        let l = cells as f64 * dx;
        let trace = run_ascan(&g, &solver, tx, Cell { i: 60 + cells, j: 120 }, &scan).unwrap();
        let analytic: Vec<f64> = (0..n).map(|k| line_source_field(k as f64 * dt, l, 1e9)).collect();
        // the 2D Green's function reshapes the pulse; remove its intrinsic
        // peak offset so what remains is the travel time
        let shape_offset = peak_time(&analytic, dt) - (1e-9 + l / C0);
        let arrival = peak_time(&trace, dt) - shape_offset;
        let err = (arrival - (1e-9 + l / C0)).abs();
        assert!(err < 2.0 * cell_time, "L={l}: arrival error {:.2} cells", err / cell_time);
        let rel_amp = (max_abs(&trace) - max_abs(&analytic)).abs() / max_abs(&analytic);
        assert!(rel_amp < 0.05, "L={l}: amplitude off by {rel_amp}");
    }
}

#[test]
fn fresnel_half_space_reflection() {
    let h = 120;
    let (nx, ny, top) = (200, 100 + 2 * h, 50);
    let free = MaterialGrid::uniform(nx, ny, DESK_DX, DESK_DX, DebyeMaterial::vacuum());
    let mut half = free.clone();
    let d = half.add_material(DebyeMaterial::non_dispersive(4.0, 0.0).unwrap());
    for i in 0..nx {
        for j in top + h..ny {
            half.set(i, j, d);
        }
    }
    let solver = SolverConfig::default();
    let scan = ScanConfig {
        time_window: 2.8e-9 + 2.0 * h as f64 * DESK_DX / C0,
        ..ScanConfig::default()
    };
    let tx = Cell { i: 100, j: top };
    let with = run_ascan(&half, &solver, tx, tx, &scan).unwrap();
    let without = run_ascan(&free, &solver, tx, tx, &scan).unwrap();
    let reflected: Vec<f64> = with.iter().zip(&without).map(|(a, b)| a - b).collect();
    // incident field after the same two-way path length, no interface
    let incident = run_ascan(&free, &solver, tx, Cell { i: 100, j: top + 2 * h }, &scan).unwrap();
    let ratio = max_abs(&reflected) / max_abs(&incident);
    let fresnel = ((1.0 - 2.0f64) / (1.0 + 2.0)).abs();
    assert!((ratio - fresnel).abs() / fresnel < 0.03, "ratio {ratio}");
    // reflection from a denser medium inverts the pulse
    assert!(peak(&reflected).1 * peak(&incident).1 < 0.0);
}

#[test]
fn zero_amplitude_gives_zero_trace() {
    let g = desk_ground(5.0, 0.01);
    let scan = ScanConfig {
        waveform: Waveform {
            amplitude: 0.0,
            ..Waveform::default()
        },
        ..ScanConfig::default()
    };
    let tr = run_ascan(&g, &SolverConfig::default(), Cell { i: 20, j: 13 }, Cell { i: 60, j: 13 }, &scan).unwrap();
    assert!(tr.iter().all(|&v| v == 0.0));
    let b = run_bscan(&g, &SolverConfig::default(), &scan).unwrap();
    assert!(b.data.iter().all(|&v| v == 0.0));
}

#[test]
fn pml_reentry_below_minus_40_db() {
    let solver = SolverConfig::default();
    let scan = ScanConfig::default();
    let small = MaterialGrid::uniform(120, 60, DESK_DX, DESK_DX, DebyeMaterial::vacuum());
    let big = MaterialGrid::uniform(240, 120, DESK_DX, DESK_DX, DebyeMaterial::vacuum());
    for ((ti, tj), (ri, rj)) in [((60, 30), (100, 30)), ((20, 10), (40, 10)), ((60, 30), (60, 5))] {
        let a = run_ascan(&small, &solver, Cell { i: ti, j: tj }, Cell { i: ri, j: rj }, &scan).unwrap();
        let reference = run_ascan(
            &big,
            &solver,
            Cell { i: ti + 60, j: tj + 30 },
            Cell { i: ri + 60, j: rj + 30 },
            &scan,
        )
        .unwrap();
        let err = a.iter().zip(&reference).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(err < 0.01 * max_abs(&reference), "re-entry {:.1} dB", 20.0 * (err / max_abs(&reference)).log10());
    }
}

#[test]
fn reciprocity_in_lossless_scene() {
    let mut g = desk_ground(5.0, 0.0);
    let obj = g.add_material(DebyeMaterial::non_dispersive(12.0, 0.0).unwrap());
    for i in 50..62 {
        for j in 30..38 {
            g.set(i, j, obj);
        }
    }
    let solver = SolverConfig::default();
    let scan = ScanConfig::default();
    let (a, b) = (Cell { i: 30, j: 13 }, Cell { i: 70, j: 13 });
    let ab = run_ascan(&g, &solver, a, b, &scan).unwrap();
    let ba = run_ascan(&g, &solver, b, a, &scan).unwrap();
    let err = ab.iter().zip(&ba).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    assert!(err < 1e-3 * max_abs(&ab), "reciprocity error {}", err / max_abs(&ab));
}

#[test]
fn homogeneous_bscan_is_translation_invariant() {
    let g = desk_ground(5.0, 0.0);
    let b = run_bscan(&g, &SolverConfig::default(), &ScanConfig::default()).unwrap();
    assert_eq!(b.traces, 16);
    assert_eq!(b.samples, SolverConfig::default().time_step(DESK_DX, DESK_DX, 8e-9).unwrap().1);
    // the outermost antennas sit within 10 cells of the absorbing layer
    let pairs = ScanConfig::default().antenna_cells(&g).unwrap();
    let interior: Vec<usize> = (0..b.traces)
        .filter(|&k| pairs[k].0.i >= 10 && pairs[k].1.i + 10 < g.nx)
        .collect();
    assert!(interior.len() >= 10);
    let reference = b.trace(interior[0]);
    let scale = max_abs(reference);
    for &k in &interior[1..] {
        let err = b.trace(k).iter().zip(reference).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(err < 1e-3 * scale, "trace {k} differs by {}", err / scale);
    }
}

#[test]
fn hyperbola_apex_above_cylinder() {
    let background = desk_ground(6.0, 0.0);
    let mut scene = background.clone();
    let obj = scene.add_material(DebyeMaterial::non_dispersive(20.0, 0.0).unwrap());
    let scan = ScanConfig::default();
    let pairs = scan.antenna_cells(&scene).unwrap();
    let target = 5;
    let ci = (pairs[target].0.i + pairs[target].1.i) as f64 / 2.0;
    let cj = 40.0;
    for i in 0..scene.nx {
        for j in 0..scene.ny {
            if (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2) <= 16.0 {
                scene.set(i, j, obj);
            }
        }
    }
    let solver = SolverConfig::default();
    let with = run_bscan(&scene, &solver, &scan).unwrap();
    let without = run_bscan(&background, &solver, &scan).unwrap();
    let diff: Vec<f64> = with.data.iter().zip(&without.data).map(|(a, b)| a - b).collect();
    let threshold = 0.2 * max_abs(&diff);
    let arrivals: Vec<usize> = diff
        .chunks(with.samples)
        .map(|t| t.iter().position(|v| v.abs() > threshold).unwrap_or(usize::MAX))
        .collect();
    let apex = (0..arrivals.len()).min_by_key(|&k| arrivals[k]).unwrap();
    let nearest = (0..with.traces)
        .min_by(|&a, &b| {
            (with.positions[a] - (ci + 0.5) * DESK_DX)
                .abs()
                .total_cmp(&(with.positions[b] - (ci + 0.5) * DESK_DX).abs())
        })
        .unwrap();
    assert_eq!(nearest, target);
    assert_eq!(apex, nearest, "arrivals {arrivals:?}");
    // two-way travel time through the soil is consistent with the depth
    let depth = (cj - 4.0 - 15.0) * DESK_DX;
    let half_offset = 0.1;
    let slant = (depth * depth + half_offset * half_offset).sqrt();
    let expect = 2.0 * slant * 6f64.sqrt() / C0;
    let measured = arrivals[apex] as f64 * with.dt;
    assert!(measured > expect && measured < expect + 2.5e-9, "{measured:e} vs {expect:e}");
}

#[test]
fn runs_are_bitwise_deterministic() {
    let mut g = desk_ground(5.0, 0.02);
    let d = g.add_material(DebyeMaterial::new(3.0, 4.0, 9.23e-12, 0.03).unwrap());
    for i in 0..120 {
        for j in 40..60 {
            g.set(i, j, d);
        }
    }
    let s = SolverConfig::default();
    let scan = ScanConfig::default();
    let a = run_bscan(&g, &s, &scan).unwrap();
    let b = run_bscan_with(&g, &s, &scan, Execution::Sequential).unwrap();
    assert_eq!(a, b);
    assert!(a.data.iter().all(|v| v.is_finite()));
}

#[test]
fn scan_must_fit_domain() {
    let g = desk_ground(5.0, 0.0);
    let too_many = ScanConfig {
        trace_count: 40,
        ..ScanConfig::default()
    };
    assert!(matches!(too_many.antenna_cells(&g), Err(Error::Config(_))));
    let off_grid = ScanConfig {
        scan_step: 0.0237,
        ..ScanConfig::default()
    };
    assert!(off_grid.antenna_cells(&g).is_err());
    let pairs = ScanConfig::default().antenna_cells(&g).unwrap();
    assert_eq!(pairs[1].0.i - pairs[0].0.i, 5);
    assert_eq!(pairs[0].1.i - pairs[0].0.i, 40);
    assert_eq!(pairs[0].0.j, 13);
    let bad = Cell { i: 0, j: 13 };
    assert!(run_ascan(&g, &SolverConfig::default(), bad, pairs[0].1, &ScanConfig::default()).is_err());
}

#[test]
fn lossy_dispersive_soil_attenuates() {
    // same static permittivity, with and without loss and dispersion
    let lossless = desk_ground(7.17, 0.0);
    let mut lossy = desk_ground(7.17, 0.0);
    let m = lossy.add_material(DebyeMaterial::new(2.851, 4.319, 9.23e-12, 0.05213).unwrap());
    for i in 0..120 {
        for j in 15..60 {
            lossy.set(i, j, m);
        }
    }
    let s = SolverConfig::default();
    let scan = ScanConfig::default();
    let (tx, rx) = (Cell { i: 40, j: 40 }, Cell { i: 80, j: 40 });
    let a = run_ascan(&lossless, &s, tx, rx, &scan).unwrap();
    let b = run_ascan(&lossy, &s, tx, rx, &scan).unwrap();
    assert!(max_abs(&b) < max_abs(&a));
    assert!(b.iter().all(|v| v.is_finite()));
}

