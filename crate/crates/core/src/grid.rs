//! Spectral lattice for a periodic one-dimensional box.
//!
//! Positions are `z_j = (j - M/2) dz`, so the box is symmetric about `z = 0`
//! and the center point `z = 0` sits exactly at index `M/2`.  Two momentum
//! layouts are supported:
//!
//! * [`GridMode::Balanced`] (default): `k_m = (m - M/2 + 1/2) dk`.  Every
//!   momentum has an exact negation partner, there is no zero mode and no
//!   unpaired extremal mode.  The transform to this half-step-shifted set is
//!   realized as a per-point phase before a standard FFT plus a per-bin phase
//!   after it.
//! * [`GridMode::Periodic`]: `k_m = (m - M/2) dk`, the conventional layout
//!   with a zero mode; the single unpaired extremal bin breaks the momentum
//!   set's symmetry, so its amplitude is projected to zero by the transforms
//!   and its table entry is stored as `0`.
//!
//! Both transforms are unitary on `C^M`: `sum |field|^2 = sum |spectrum|^2`,
//! hence `dz * sum |field|^2 = dz * sum |spectrum|^2` (the discrete analogue
//! of the energy identity between a field and its spectrum).  Unitarity also
//! guarantees that independent Gaussian noise added per lattice point is
//! statistically identical to independent Gaussian noise added per momentum
//! mode, which is what makes per-point noise sampling valid.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::error::SimError;
use crate::C64;

/// Momentum-grid layout; see the module docs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridMode {
    /// Half-step-shifted momenta: symmetric under negation, no zero mode.
    Balanced,
    /// Conventional momenta including zero; unpaired extremal bin projected.
    Periodic,
}

impl GridMode {
    /// Parse a config-file value.
    pub fn parse(s: &str) -> Option<GridMode> {
        match s {
            "balanced" => Some(GridMode::Balanced),
            "periodic" => Some(GridMode::Periodic),
            _ => None,
        }
    }

    /// The config-file spelling of this mode.
    pub fn as_str(self) -> &'static str {
        match self {
            GridMode::Balanced => "balanced",
            GridMode::Periodic => "periodic",
        }
    }
}

/// Spectral lattice: geometry tables plus planned transforms.
///
/// Cheap to clone conceptually but heavy in practice; share it by reference
/// (it is `Send + Sync`, so worker threads can borrow one instance).
pub struct Grid {
    m: usize,
    length: f64,
    dz: f64,
    dk: f64,
    mode: GridMode,
    z: Vec<f64>,
    k: Vec<f64>,
    /// Per-point factor applied before the forward FFT.
    pre_fwd: Vec<C64>,
    /// Per-bin factor applied after the forward FFT (includes 1/sqrt(M)).
    post_fwd: Vec<C64>,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
    scratch_len: usize,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid")
            .field("m", &self.m)
            .field("length", &self.length)
            .field("mode", &self.mode)
            .finish()
    }
}

impl Grid {
    /// Build a lattice with `m` points on a box of the given length.
    ///
    /// `m` must be even and at least 8 so that the momentum set pairs up and
    /// leaves room for a resolved spectrum; the length must be positive and
    /// finite.
    pub fn new(m: usize, length: f64, mode: GridMode) -> Result<Grid, SimError> {
        if m < 8 || m % 2 != 0 {
            return Err(SimError::Grid(format!(
                "point count must be even and >= 8, got {m}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(SimError::Grid(format!("box length must be positive, got {length}")));
        }
        let dz = length / m as f64;
        let dk = 2.0 * std::f64::consts::PI / length;
        let half = (m / 2) as f64;

        let z: Vec<f64> = (0..m).map(|j| (j as f64 - half) * dz).collect();
        let k: Vec<f64> = match mode {
            GridMode::Balanced => (0..m).map(|i| (i as f64 - half + 0.5) * dk).collect(),
            GridMode::Periodic => (0..m)
                .map(|i| if i == 0 { 0.0 } else { (i as f64 - half) * dk })
                .collect(),
        };

        // Phase factors turning the standard index-space FFT into the
        // centered transform `spectrum_m = M^{-1/2} sum_j field_j e^{-i k_m z_j}`.
        // Expanding k_m z_j for each layout splits the exponent into a pure
        // FFT kernel, a j-dependent factor, an m-dependent factor, and a
        // constant; the j/constant parts go in `pre_fwd`, the m part in
        // `post_fwd` along with the 1/sqrt(M) normalization.
        let pi = std::f64::consts::PI;
        let sign = |n: usize| if n % 2 == 0 { 1.0 } else { -1.0 };
        let norm = 1.0 / (m as f64).sqrt();
        let (pre_fwd, post_fwd): (Vec<C64>, Vec<C64>) = match mode {
            GridMode::Balanced => {
                let const_phase = C64::from_polar(1.0, pi * (0.5 - half));
                (
                    (0..m)
                        .map(|j| C64::from_polar(1.0, -pi * j as f64 / m as f64) * sign(j))
                        .collect(),
                    (0..m).map(|i| const_phase * (sign(i) * norm)).collect(),
                )
            }
            GridMode::Periodic => {
                let const_phase = C64::from_polar(1.0, -pi * half);
                (
                    (0..m).map(|j| C64::new(sign(j), 0.0)).collect(),
                    (0..m).map(|i| const_phase * (sign(i) * norm)).collect(),
                )
            }
        };

        let mut planner = FftPlanner::new();
        let fft_fwd = planner.plan_fft_forward(m);
        let fft_inv = planner.plan_fft_inverse(m);
        let scratch_len = fft_fwd
            .get_inplace_scratch_len()
            .max(fft_inv.get_inplace_scratch_len());

        Ok(Grid {
            m,
            length,
            dz,
            dk,
            mode,
            z,
            k,
            pre_fwd,
            post_fwd,
            fft_fwd,
            fft_inv,
            scratch_len,
        })
    }

    /// Number of lattice points (= number of momentum bins).
    pub fn m(&self) -> usize {
        self.m
    }

    /// Box length.
    pub fn length(&self) -> f64 {
        self.length
    }

    /// Lattice spacing `length / m`.
    pub fn dz(&self) -> f64 {
        self.dz
    }

    /// Momentum spacing `2 pi / length`.
    pub fn dk(&self) -> f64 {
        self.dk
    }

    /// Momentum layout.
    pub fn mode(&self) -> GridMode {
        self.mode
    }

    /// Positions `z_j`, ascending; `z[center_index()] == 0`.
    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// Momenta `k_m`, ascending (periodic mode stores 0 in the projected bin).
    pub fn k(&self) -> &[f64] {
        &self.k
    }

    /// Index of the `z = 0` lattice point.
    pub fn center_index(&self) -> usize {
        self.m / 2
    }

    /// Number of momentum modes the transforms keep (the projected bin of the
    /// periodic layout does not count).
    pub fn live_modes(&self) -> usize {
        match self.mode {
            GridMode::Balanced => self.m,
            GridMode::Periodic => self.m - 1,
        }
    }

    /// Allocate a scratch buffer suitable for the in-place transforms.
    pub fn make_scratch(&self) -> Vec<C64> {
        vec![C64::new(0.0, 0.0); self.scratch_len]
    }

    fn check_len(&self, len: usize) -> Result<(), SimError> {
        if len == self.m {
            Ok(())
        } else {
            Err(SimError::Shape {
                expected: self.m,
                got: len,
            })
        }
    }

    /// In-place position → momentum transform (unitary).
    ///
    /// `scratch` must come from [`Grid::make_scratch`] (or be at least as
    /// long).  Panics on length mismatch: the in-place path is the inner-loop
    /// primitive and its callers size buffers once.
    pub fn forward_inplace(&self, buf: &mut [C64], scratch: &mut [C64]) {
        assert_eq!(buf.len(), self.m, "field buffer length");
        for (v, p) in buf.iter_mut().zip(&self.pre_fwd) {
            *v *= p;
        }
        self.fft_fwd.process_with_scratch(buf, scratch);
        for (v, p) in buf.iter_mut().zip(&self.post_fwd) {
            *v *= p;
        }
        if self.mode == GridMode::Periodic {
            buf[0] = C64::new(0.0, 0.0);
        }
    }

    /// In-place momentum → position transform (unitary; inverse of
    /// [`Grid::forward_inplace`] on the kept modes).
    pub fn inverse_inplace(&self, buf: &mut [C64], scratch: &mut [C64]) {
        assert_eq!(buf.len(), self.m, "spectrum buffer length");
        if self.mode == GridMode::Periodic {
            buf[0] = C64::new(0.0, 0.0);
        }
        for (v, p) in buf.iter_mut().zip(&self.post_fwd) {
            *v *= p.conj();
        }
        self.fft_inv.process_with_scratch(buf, scratch);
        for (v, p) in buf.iter_mut().zip(&self.pre_fwd) {
            *v *= p.conj();
        }
    }

    /// Position → momentum transform, allocating.
    pub fn forward(&self, field: &[C64]) -> Result<Vec<C64>, SimError> {
        self.check_len(field.len())?;
        let mut buf = field.to_vec();
        let mut scratch = self.make_scratch();
        self.forward_inplace(&mut buf, &mut scratch);
        Ok(buf)
    }

    /// Momentum → position transform, allocating.
    pub fn inverse(&self, spectrum: &[C64]) -> Result<Vec<C64>, SimError> {
        self.check_len(spectrum.len())?;
        let mut buf = spectrum.to_vec();
        let mut scratch = self.make_scratch();
        self.inverse_inplace(&mut buf, &mut scratch);
        Ok(buf)
    }

    /// Spectral derivative `d field / dz`, exact for every resolved mode.
    pub fn derivative(&self, field: &[C64]) -> Result<Vec<C64>, SimError> {
        self.check_len(field.len())?;
        let mut buf = field.to_vec();
        let mut scratch = self.make_scratch();
        self.forward_inplace(&mut buf, &mut scratch);
        for (v, &k) in buf.iter_mut().zip(&self.k) {
            *v *= C64::new(0.0, k);
        }
        self.inverse_inplace(&mut buf, &mut scratch);
        Ok(buf)
    }

    /// Per-bin kinetic phase factors `exp(-i k^2 dt)`: the exact free-field
    /// propagator over `dt` applied in momentum space.
    pub fn kinetic_phases(&self, dt: f64) -> Vec<C64> {
        self.k
            .iter()
            .map(|&k| C64::from_polar(1.0, -k * k * dt))
            .collect()
    }

    /// Largest momentum magnitude on the grid.
    pub fn k_max(&self) -> f64 {
        self.k.iter().fold(0.0_f64, |a, &k| a.max(k.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    const TAU: f64 = std::f64::consts::TAU;

    fn random_field(m: usize, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect()
    }

    fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Grid::new(6, 20.0, GridMode::Balanced).is_err());
        assert!(Grid::new(9, 20.0, GridMode::Balanced).is_err());
        assert!(Grid::new(256, 0.0, GridMode::Balanced).is_err());
        assert!(Grid::new(256, f64::NAN, GridMode::Balanced).is_err());
    }

    #[test]
    fn positions_symmetric_and_centered() {
        let g = Grid::new(256, 20.0, GridMode::Balanced).unwrap();
        assert_eq!(g.z()[g.center_index()], 0.0);
        assert_eq!(g.z()[0], -10.0);
        for j in 1..g.m() {
            assert_eq!(g.z()[j], -g.z()[g.m() - j], "z pairing at {j}");
        }
        assert!((g.dz() - 20.0 / 256.0).abs() < 1e-15);
    }

    #[test]
    fn balanced_momenta_pair_exactly_and_have_no_zero_mode() {
        let g = Grid::new(256, 20.0, GridMode::Balanced).unwrap();
        for i in 0..g.m() {
            assert_eq!(g.k()[i], -g.k()[g.m() - 1 - i], "k pairing at {i}");
            assert_ne!(g.k()[i], 0.0);
        }
        let naive_sum: f64 = g.k().iter().sum();
        assert!(naive_sum.abs() < 1e-10, "sum of momenta {naive_sum}");
        // Largest momentum for the larger reference lattice: 255.5 * 2 pi / 20.
        let g512 = Grid::new(512, 20.0, GridMode::Balanced).unwrap();
        let expect = 255.5 * TAU / 20.0;
        assert!((g512.k_max() - expect).abs() < 1e-12);
        assert!((g512.k_max() - 80.2677).abs() < 1e-3);
    }

    #[test]
    fn periodic_momenta_keep_zero_and_zero_the_unpaired_bin() {
        let g = Grid::new(64, 20.0, GridMode::Periodic).unwrap();
        assert_eq!(g.k()[0], 0.0);
        assert_eq!(g.k()[g.center_index()], 0.0);
        for i in 1..g.m() {
            assert_eq!(g.k()[i], -g.k()[g.m() - i], "k pairing at {i}");
        }
        assert_eq!(g.live_modes(), 63);
    }

    #[test]
    fn forward_maps_plane_wave_to_single_bin() {
        let g = Grid::new(64, 20.0, GridMode::Balanced).unwrap();
        for &mode in &[0usize, 3, 32, 63] {
            let km = g.k()[mode];
            let f: Vec<C64> = g.z().iter().map(|&z| C64::from_polar(1.0, km * z)).collect();
            let spec = g.forward(&f).unwrap();
            let amp = (g.m() as f64).sqrt();
            for (i, s) in spec.iter().enumerate() {
                if i == mode {
                    assert!((s - C64::new(amp, 0.0)).norm() < 1e-12 * amp, "bin {i}");
                } else {
                    assert!(s.norm() < 1e-12 * amp, "leakage into bin {i}: {s}");
                }
            }
        }
    }

    #[test]
    fn round_trip_and_parseval_on_random_fields() {
        for &mode in &[GridMode::Balanced, GridMode::Periodic] {
            let g = Grid::new(128, 17.0, mode).unwrap();
            let mut f = random_field(g.m(), 7);
            if mode == GridMode::Periodic {
                // The unpaired extremal bin is outside the simulation subspace;
                // compare against the projected field.
                let mut spec = g.forward(&f).unwrap();
                f = g.inverse(&spec).unwrap();
                spec = g.forward(&f).unwrap();
                let back = g.inverse(&spec).unwrap();
                assert!(max_abs_diff(&f, &back) < 1e-12);
            } else {
                let spec = g.forward(&f).unwrap();
                let back = g.inverse(&spec).unwrap();
                assert!(max_abs_diff(&f, &back) < 1e-12);
            }
            let spec = g.forward(&f).unwrap();
            let pos: f64 = f.iter().map(|v| v.norm_sqr()).sum();
            let mom: f64 = spec.iter().map(|v| v.norm_sqr()).sum();
            assert!(
                (pos - mom).abs() < 1e-12 * pos,
                "norm mismatch {mode:?}: {pos} vs {mom}"
            );
        }
    }

    #[test]
    fn derivative_is_exact_per_mode() {
        let g = Grid::new(256, 20.0, GridMode::Balanced).unwrap();
        for &mode in &[0usize, 17, 128, 255] {
            let km = g.k()[mode];
            let f: Vec<C64> = g.z().iter().map(|&z| C64::from_polar(1.0, km * z)).collect();
            let d = g.derivative(&f).unwrap();
            let exact: Vec<C64> = f.iter().map(|v| v * C64::new(0.0, km)).collect();
            let tol = 1e-12 * (1.0 + km.abs());
            assert!(max_abs_diff(&d, &exact) < tol, "mode {mode}");
        }
    }

    #[test]
    fn derivative_matches_analytic_gaussian() {
        let g = Grid::new(256, 20.0, GridMode::Balanced).unwrap();
        let f: Vec<C64> = g.z().iter().map(|&z| C64::new((-z * z).exp(), 0.0)).collect();
        let d = g.derivative(&f).unwrap();
        let exact: Vec<C64> = g
            .z()
            .iter()
            .map(|&z| C64::new(-2.0 * z * (-z * z).exp(), 0.0))
            .collect();
        assert!(max_abs_diff(&d, &exact) < 1e-8);
    }

    #[test]
    fn kinetic_phases_have_unit_modulus_and_follow_momenta() {
        let g = Grid::new(64, 20.0, GridMode::Balanced).unwrap();
        let dt = 3.5e-4;
        let ph = g.kinetic_phases(dt);
        for (i, p) in ph.iter().enumerate() {
            assert!((p.norm() - 1.0).abs() < 1e-14);
            let k = g.k()[i];
            let expect = C64::from_polar(1.0, -k * k * dt);
            assert!((p - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn periodic_transform_kills_extremal_bin() {
        let g = Grid::new(64, 20.0, GridMode::Periodic).unwrap();
        // A pure alternating-sign pattern lives entirely in the extremal bin.
        let f: Vec<C64> = (0..g.m())
            .map(|j| C64::new(if j % 2 == 0 { 1.0 } else { -1.0 }, 0.0))
            .collect();
        let spec = g.forward(&f).unwrap();
        let total: f64 = spec.iter().map(|v| v.norm_sqr()).sum();
        assert!(total < 1e-20, "extremal content survived: {total}");
    }
}
