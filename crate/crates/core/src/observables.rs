//! From ensemble moments to physical observables.
//!
//! Ensemble averages over phase-space trajectories estimate *symmetrically
//! ordered* operator moments.  Physical densities and correlations are
//! normally ordered, so every moment needs a subtraction that removes the
//! half quantum the sampling added per mode:
//!
//! * density: `n_j = <|psi_j|^2> - 1/(2 dz)`
//! * same-point pair density: `g2_j = <|psi_j|^4> - 2 <|psi_j|^2> / dz + 1/(2 dz^2)`
//! * one-body matrix: `g1_{jl} = <psi_j^* psi_l> - delta_{jl} / (2 dz)`
//!
//! The coefficients are fixed by single-mode Weyl-ordering algebra; the unit
//! tests pin them against a brute-force quadrature over the exact Gaussian
//! phase-space distribution of a coherent state, so a wrong coefficient
//! cannot build green.
//!
//! The same logic gives the center-of-mass variance estimator: the ensemble
//! variance of the first moment `A = dz * sum_j z_j |psi_j|^2` exceeds the
//! quantum variance of the corresponding operator by the constant
//! `sum_j z_j^2 / 4` (the vacuum-mode fluctuations are stationary under the
//! kinetic flow, so the excess does not drift in time).  Subtracting that
//! floor and normalizing by the vacuum-corrected particle number yields a
//! center-of-mass variance directly comparable to the free-particle result.
//!
//! Accumulation is organized for batch statistics: trajectories are assigned
//! round-robin to a fixed number of batches, each batch keeps its own sums,
//! and every reported quantity carries the spread of per-batch means as its
//! standard error.  Batch merging is plain elementwise addition, so partial
//! accumulators form a commutative monoid and a fixed merge order gives
//! bit-reproducible totals.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::SimError;
use crate::grid::Grid;
use crate::C64;

// ---------------------------------------------------------------------------
// Ordering corrections (single-point formulas)
// ---------------------------------------------------------------------------

/// Normally ordered density from the mean squared modulus at one point.
#[inline]
pub fn corrected_density_point(mean_abs_sq: f64, dz: f64) -> f64 {
    mean_abs_sq - 0.5 / dz
}

/// Normally ordered same-point pair density from the mean fourth and second
/// moments at one point.
#[inline]
pub fn corrected_pair_point(mean_abs_qu: f64, mean_abs_sq: f64, dz: f64) -> f64 {
    mean_abs_qu - 2.0 * mean_abs_sq / dz + 0.5 / (dz * dz)
}

/// Brute-force validation of the correction coefficients: numerically
/// integrate `|psi|^2` and `|psi|^4` over the exact phase-space distribution
/// of a single coherent mode with `|alpha|^2 = alpha_sq` (a Gaussian of
/// variance 1/2 per quadrature pair around `alpha`).  Returns the two raw
/// symmetric moments; the normally ordered values they must reduce to are
/// `alpha_sq` and `alpha_sq^2`.
pub fn single_mode_symmetric_moments(alpha_sq: f64) -> (f64, f64) {
    let alpha = alpha_sq.sqrt();
    // Midpoint rule on a Gaussian: converges faster than any power of the
    // step, so this modest lattice already reaches ~1e-12.  The distribution
    // for one coherent mode is Gaussian with variance 1/4 per quadrature,
    // i.e. proportional to exp(-2 (x^2 + y^2)).
    let half_width = 8.0;
    let steps = 1024usize;
    let h = 2.0 * half_width / steps as f64;
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    let mut weight = 0.0;
    for ix in 0..steps {
        let x = -half_width + (ix as f64 + 0.5) * h;
        for iy in 0..steps {
            let y = -half_width + (iy as f64 + 0.5) * h;
            let w = (-2.0 * (x * x + y * y)).exp();
            let abs_sq = (alpha + x) * (alpha + x) + y * y;
            m2 += w * abs_sq;
            m4 += w * abs_sq * abs_sq;
            weight += w;
        }
    }
    (m2 / weight, m4 / weight)
}

// ---------------------------------------------------------------------------
// Per-field quantities
// ---------------------------------------------------------------------------

/// Classical invariants of one field configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Invariants {
    /// `dz * sum |psi|^2`
    pub number: f64,
    /// `dz * sum_k k |spectrum_k|^2`
    pub momentum: f64,
    /// `dz * (sum_k k^2 |spectrum_k|^2 + c * sum_j |psi_j|^4)`
    pub energy: f64,
}

/// Compute the classical invariants using caller-provided spectral buffers
/// (`buf` receives a copy of the field; `scratch` comes from
/// [`Grid::make_scratch`]).
pub fn invariants_with(
    grid: &Grid,
    field: &[C64],
    c: f64,
    buf: &mut Vec<C64>,
    scratch: &mut [C64],
) -> Invariants {
    let dz = grid.dz();
    let mut number = 0.0;
    let mut quartic = 0.0;
    for v in field {
        let d = v.norm_sqr();
        number += d;
        quartic += d * d;
    }
    buf.clear();
    buf.extend_from_slice(field);
    grid.forward_inplace(buf, scratch);
    let mut momentum = 0.0;
    let mut kinetic = 0.0;
    for (v, &k) in buf.iter().zip(grid.k()) {
        let occ = v.norm_sqr();
        momentum += k * occ;
        kinetic += k * k * occ;
    }
    Invariants {
        number: dz * number,
        momentum: dz * momentum,
        energy: dz * (kinetic + c * quartic),
    }
}

/// Allocating convenience wrapper around [`invariants_with`].
pub fn invariants(grid: &Grid, field: &[C64], c: f64) -> Invariants {
    let mut buf = Vec::with_capacity(grid.m());
    let mut scratch = grid.make_scratch();
    invariants_with(grid, field, c, &mut buf, &mut scratch)
}

/// Center of mass of one field's raw density: `sum z |psi|^2 / sum |psi|^2`.
pub fn com_position(grid: &Grid, field: &[C64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&z, v) in grid.z().iter().zip(field) {
        let d = v.norm_sqr();
        num += z * d;
        den += d;
    }
    num / den
}

/// First moment of the raw density, `dz * sum z |psi|^2` — the quantity whose
/// ensemble variance (minus the vacuum floor) gives the center-of-mass
/// spreading.
pub fn com_first_moment(grid: &Grid, field: &[C64]) -> f64 {
    grid.z()
        .iter()
        .zip(field)
        .map(|(&z, v)| z * v.norm_sqr())
        .sum::<f64>()
        * grid.dz()
}

/// The constant excess the half-quantum noise adds to the ensemble variance
/// of [`com_first_moment`]: `sum_j z_j^2 / 4`.
pub fn com_variance_floor(grid: &Grid) -> f64 {
    grid.z().iter().map(|&z| z * z).sum::<f64>() * 0.25
}

/// Mean particle number carried by the noise alone: half a quantum per kept
/// mode.
pub fn vacuum_number(grid: &Grid) -> f64 {
    grid.live_modes() as f64 * 0.5
}

// ---------------------------------------------------------------------------
// Batch statistics
// ---------------------------------------------------------------------------

/// Standard error of a mean estimated from independent batch means: the
/// sample standard deviation of the values divided by `sqrt(len)`.
pub fn batch_error(batch_means: &[f64]) -> f64 {
    let n = batch_means.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = batch_means.iter().sum::<f64>() / n as f64;
    let var = batch_means
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (n - 1) as f64;
    (var / n as f64).sqrt()
}

// ---------------------------------------------------------------------------
// Accumulation
// ---------------------------------------------------------------------------

/// Shape of a run's observable record: how many snapshots, which of them also
/// accumulate the one-body matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotLayout {
    /// Lattice size.
    pub m: usize,
    /// Number of captured snapshots (including t = 0).
    pub n_snapshots: usize,
    /// Snapshot indices (into `0..n_snapshots`) that accumulate the one-body
    /// matrix; strictly increasing.
    pub g1_snapshots: Vec<usize>,
}

impl SnapshotLayout {
    /// Position of `snapshot` in the one-body list, if it is one.
    pub fn g1_slot(&self, snapshot: usize) -> Option<usize> {
        self.g1_snapshots.binary_search(&snapshot).ok()
    }
}

/// Staging area for one trajectory.  Nothing reaches the ensemble sums until
/// the trajectory finishes with finite values, so an aborted trajectory is
/// excluded exactly rather than partially.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    layout: SnapshotLayout,
    /// `|psi_j|^2` per snapshot, row-major `[snapshot][point]`.
    abs_sq: Vec<f64>,
    /// `|psi_j|^4` per snapshot.
    abs_qu: Vec<f64>,
    /// First moment of the raw density per snapshot.
    com_num: Vec<f64>,
    /// Raw `dz * sum |psi|^2` per snapshot.
    number: Vec<f64>,
    /// Invariant drifts per snapshot, scaled as described in
    /// [`BatchAccumulator::drift_means`].
    drift: Vec<[f64; 3]>,
    /// Field copies at the one-body snapshots.
    g1_fields: Vec<C64>,
    /// Reference invariants from the first captured snapshot.
    initial: Option<Invariants>,
    /// Snapshots at which the nonlinear phase advance per step exceeded 0.1.
    pub nl_phase_hits: u64,
    /// Spectral work space.
    buf: Vec<C64>,
    scratch: Vec<C64>,
    /// True once any captured value stopped being finite.
    pub poisoned: bool,
}

impl TrajectoryRecord {
    pub fn new(grid: &Grid, layout: SnapshotLayout) -> TrajectoryRecord {
        let m = layout.m;
        let t = layout.n_snapshots;
        let tg = layout.g1_snapshots.len();
        TrajectoryRecord {
            layout,
            abs_sq: vec![0.0; t * m],
            abs_qu: vec![0.0; t * m],
            com_num: vec![0.0; t],
            number: vec![0.0; t],
            drift: vec![[0.0; 3]; t],
            g1_fields: vec![C64::new(0.0, 0.0); tg * m],
            initial: None,
            nl_phase_hits: 0,
            buf: Vec::with_capacity(m),
            scratch: grid.make_scratch(),
            poisoned: false,
        }
    }

    /// Reset for reuse on the next trajectory.
    pub fn reset(&mut self) {
        self.initial = None;
        self.nl_phase_hits = 0;
        self.poisoned = false;
        // Sums are overwritten by capture; nothing else to clear.
    }

    pub fn layout(&self) -> &SnapshotLayout {
        &self.layout
    }

    /// Record snapshot `snapshot` of the field.  `c` is the interaction
    /// strength and `dt` the step size (used for the nonlinear-phase
    /// warning).  Returns `false` if the field contains non-finite values, in
    /// which case the record is poisoned and must not be merged.
    pub fn capture(&mut self, grid: &Grid, field: &[C64], snapshot: usize, c: f64, dt: f64) -> bool {
        let m = self.layout.m;
        assert_eq!(field.len(), m, "field length");
        assert!(snapshot < self.layout.n_snapshots, "snapshot index");
        let dz = grid.dz();
        let row = snapshot * m;
        let mut com = 0.0;
        let mut max_d = 0.0_f64;
        let mut finite = true;
        for (j, v) in field.iter().enumerate() {
            let d = v.norm_sqr();
            finite &= d.is_finite();
            self.abs_sq[row + j] = d;
            self.abs_qu[row + j] = d * d;
            com += grid.z()[j] * d;
            max_d = max_d.max(d);
        }
        if !finite {
            self.poisoned = true;
            return false;
        }
        self.com_num[snapshot] = com * dz;
        if 2.0 * c.abs() * max_d * dt > 0.1 {
            self.nl_phase_hits += 1;
        }
        let inv = invariants_with(grid, field, c, &mut self.buf, &mut self.scratch);
        self.number[snapshot] = inv.number;
        let initial = *self.initial.get_or_insert(inv);
        let momentum_scale = initial.number * grid.k_max();
        self.drift[snapshot] = [
            (inv.number - initial.number).abs() / initial.number,
            (inv.momentum - initial.momentum).abs() / momentum_scale,
            (inv.energy - initial.energy).abs() / initial.energy.abs(),
        ];
        if let Some(slot) = self.layout.g1_slot(snapshot) {
            self.g1_fields[slot * m..(slot + 1) * m].copy_from_slice(field);
        }
        true
    }
}

/// Sums over the trajectories of one batch.
#[derive(Debug, Clone)]
pub struct BatchAccumulator {
    layout: SnapshotLayout,
    pub count: u64,
    pub aborted: u64,
    pub nl_phase_hits: u64,
    sum_sq: Vec<f64>,
    sum_qu: Vec<f64>,
    sum_com: Vec<f64>,
    sum_com2: Vec<f64>,
    sum_number: Vec<f64>,
    sum_number2: Vec<f64>,
    sum_drift: Vec<[f64; 3]>,
    max_drift: [f64; 3],
    /// One-body sums `sum psi_j^* psi_l`, row-major `[slot][j * m + l]`.
    g1: Vec<C64>,
}

impl BatchAccumulator {
    pub fn new(layout: SnapshotLayout) -> BatchAccumulator {
        let m = layout.m;
        let t = layout.n_snapshots;
        let tg = layout.g1_snapshots.len();
        BatchAccumulator {
            layout,
            count: 0,
            aborted: 0,
            nl_phase_hits: 0,
            sum_sq: vec![0.0; t * m],
            sum_qu: vec![0.0; t * m],
            sum_com: vec![0.0; t],
            sum_com2: vec![0.0; t],
            sum_number: vec![0.0; t],
            sum_number2: vec![0.0; t],
            sum_drift: vec![[0.0; 3]; t],
            max_drift: [0.0; 3],
            g1: vec![C64::new(0.0, 0.0); tg * m * m],
        }
    }

    pub fn layout(&self) -> &SnapshotLayout {
        &self.layout
    }

    /// Fold one finished trajectory into the sums.  Panics if the record is
    /// poisoned (callers must exclude those) or shaped differently.
    pub fn absorb(&mut self, rec: &TrajectoryRecord) {
        assert!(!rec.poisoned, "poisoned record");
        assert_eq!(rec.layout, self.layout, "layout mismatch");
        let m = self.layout.m;
        self.count += 1;
        self.nl_phase_hits += rec.nl_phase_hits;
        for (s, &v) in self.sum_sq.iter_mut().zip(&rec.abs_sq) {
            *s += v;
        }
        for (s, &v) in self.sum_qu.iter_mut().zip(&rec.abs_qu) {
            *s += v;
        }
        for (t, (&a, &n)) in rec.com_num.iter().zip(&rec.number).enumerate() {
            self.sum_com[t] += a;
            self.sum_com2[t] += a * a;
            self.sum_number[t] += n;
            self.sum_number2[t] += n * n;
        }
        for (t, d) in rec.drift.iter().enumerate() {
            for q in 0..3 {
                self.sum_drift[t][q] += d[q];
                self.max_drift[q] = self.max_drift[q].max(d[q]);
            }
        }
        for slot in 0..self.layout.g1_snapshots.len() {
            let f = &rec.g1_fields[slot * m..(slot + 1) * m];
            let mat = &mut self.g1[slot * m * m..(slot + 1) * m * m];
            for j in 0..m {
                let cj = f[j].conj();
                let row = &mut mat[j * m..(j + 1) * m];
                for (r, &v) in row.iter_mut().zip(f) {
                    *r += cj * v;
                }
            }
        }
    }

    /// Merge another batch into this one (elementwise sums; associative and
    /// commutative up to floating-point rounding).
    pub fn merge(&mut self, other: &BatchAccumulator) {
        assert_eq!(other.layout, self.layout, "layout mismatch");
        self.count += other.count;
        self.aborted += other.aborted;
        self.nl_phase_hits += other.nl_phase_hits;
        for (s, &v) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *s += v;
        }
        for (s, &v) in self.sum_qu.iter_mut().zip(&other.sum_qu) {
            *s += v;
        }
        for t in 0..self.layout.n_snapshots {
            self.sum_com[t] += other.sum_com[t];
            self.sum_com2[t] += other.sum_com2[t];
            self.sum_number[t] += other.sum_number[t];
            self.sum_number2[t] += other.sum_number2[t];
            for q in 0..3 {
                self.sum_drift[t][q] += other.sum_drift[t][q];
                self.max_drift[q] = self.max_drift[q].max(other.max_drift[q]);
            }
        }
        for (s, &v) in self.g1.iter_mut().zip(&other.g1) {
            *s += v;
        }
    }

    fn mean_sq(&self, snapshot: usize, j: usize) -> f64 {
        self.sum_sq[snapshot * self.layout.m + j] / self.count as f64
    }

    fn mean_qu(&self, snapshot: usize, j: usize) -> f64 {
        self.sum_qu[snapshot * self.layout.m + j] / self.count as f64
    }
}

/// How moments map to reported values: phase-space ensembles need the
/// half-quantum subtractions, a noise-free (mean-field) run must not apply
/// them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderingCorrection {
    HalfQuantum,
    None,
}

/// Read-side view over a set of batch accumulators: pooled estimates plus
/// batch standard errors.
pub struct EnsembleStats<'a> {
    grid: &'a Grid,
    batches: &'a [BatchAccumulator],
    correction: OrderingCorrection,
    /// Nominal particle number used to normalize the pair correlation.
    n_norm: f64,
}

impl<'a> EnsembleStats<'a> {
    pub fn new(
        grid: &'a Grid,
        batches: &'a [BatchAccumulator],
        correction: OrderingCorrection,
        n_norm: f64,
    ) -> Result<EnsembleStats<'a>, SimError> {
        if batches.is_empty() || batches.iter().all(|b| b.count == 0) {
            return Err(SimError::EmptyEnsemble);
        }
        let layout = batches[0].layout.clone();
        for b in batches {
            if b.layout != layout {
                return Err(SimError::Plan("batch layouts differ".into()));
            }
        }
        Ok(EnsembleStats {
            grid,
            batches,
            correction,
            n_norm,
        })
    }

    pub fn layout(&self) -> &SnapshotLayout {
        &self.batches[0].layout
    }

    pub fn count(&self) -> u64 {
        self.batches.iter().map(|b| b.count).sum()
    }

    pub fn aborted(&self) -> u64 {
        self.batches.iter().map(|b| b.aborted).sum()
    }

    pub fn nl_phase_hits(&self) -> u64 {
        self.batches.iter().map(|b| b.nl_phase_hits).sum()
    }

    fn density_shift(&self) -> f64 {
        match self.correction {
            OrderingCorrection::HalfQuantum => 0.5 / self.grid.dz(),
            OrderingCorrection::None => 0.0,
        }
    }

    fn occupied_batches(&self) -> impl Iterator<Item = &BatchAccumulator> {
        self.batches.iter().filter(|b| b.count > 0)
    }

    /// Batch means of an arbitrary per-batch statistic, for error bars.
    fn batch_means(&self, f: impl Fn(&BatchAccumulator) -> f64) -> Vec<f64> {
        self.occupied_batches().map(f).collect()
    }

    /// Corrected density profile and its standard error at one snapshot.
    pub fn density(&self, snapshot: usize) -> (Vec<f64>, Vec<f64>) {
        let m = self.layout().m;
        let shift = self.density_shift();
        let total: u64 = self.count();
        let mut n = vec![0.0; m];
        let mut err = vec![0.0; m];
        for j in 0..m {
            let pooled: f64 = self
                .occupied_batches()
                .map(|b| b.sum_sq[snapshot * m + j])
                .sum::<f64>()
                / total as f64;
            n[j] = pooled - shift;
            let means = self.batch_means(|b| b.mean_sq(snapshot, j));
            err[j] = batch_error(&means);
        }
        (n, err)
    }

    /// Corrected density and standard error at the box center.
    pub fn center_density(&self, snapshot: usize) -> (f64, f64) {
        let j = self.grid.center_index();
        let m = self.layout().m;
        let shift = self.density_shift();
        let pooled: f64 = self
            .occupied_batches()
            .map(|b| b.sum_sq[snapshot * m + j])
            .sum::<f64>()
            / self.count() as f64;
        let means = self.batch_means(|b| b.mean_sq(snapshot, j));
        (pooled - shift, batch_error(&means))
    }

    /// Corrected total particle number and standard error.
    pub fn number(&self, snapshot: usize) -> (f64, f64) {
        let vac = match self.correction {
            OrderingCorrection::HalfQuantum => vacuum_number(self.grid),
            OrderingCorrection::None => 0.0,
        };
        let pooled: f64 = self
            .occupied_batches()
            .map(|b| b.sum_number[snapshot])
            .sum::<f64>()
            / self.count() as f64;
        let means = self.batch_means(|b| b.sum_number[snapshot] / b.count as f64);
        (pooled - vac, batch_error(&means))
    }

    fn mu_of_batch(&self, b: &BatchAccumulator, snapshot: usize) -> f64 {
        let m = self.layout().m;
        let dz = self.grid.dz();
        let mut total = 0.0;
        for j in 0..m {
            let g2 = match self.correction {
                OrderingCorrection::HalfQuantum => {
                    corrected_pair_point(b.mean_qu(snapshot, j), b.mean_sq(snapshot, j), dz)
                }
                OrderingCorrection::None => b.mean_qu(snapshot, j),
            };
            total += g2;
        }
        dz * total / (self.n_norm * self.n_norm)
    }

    /// Integrated same-point pair correlation `dz * sum g2 / N^2` and its
    /// standard error.
    pub fn mu(&self, snapshot: usize) -> (f64, f64) {
        let m = self.layout().m;
        let dz = self.grid.dz();
        let total = self.count() as f64;
        let mut sum = 0.0;
        for j in 0..m {
            let mean_qu: f64 = self
                .occupied_batches()
                .map(|b| b.sum_qu[snapshot * m + j])
                .sum::<f64>()
                / total;
            let mean_sq: f64 = self
                .occupied_batches()
                .map(|b| b.sum_sq[snapshot * m + j])
                .sum::<f64>()
                / total;
            sum += match self.correction {
                OrderingCorrection::HalfQuantum => corrected_pair_point(mean_qu, mean_sq, dz),
                OrderingCorrection::None => mean_qu,
            };
        }
        let pooled = dz * sum / (self.n_norm * self.n_norm);
        let means = self.batch_means(|b| self.mu_of_batch(b, snapshot));
        (pooled, batch_error(&means))
    }

    fn com_var_of(&self, sum: f64, sum2: f64, count: f64) -> f64 {
        let mean = sum / count;
        let raw = (sum2 - count * mean * mean) / (count - 1.0);
        let floor = match self.correction {
            OrderingCorrection::HalfQuantum => com_variance_floor(self.grid),
            OrderingCorrection::None => 0.0,
        };
        raw - floor
    }

    /// Center-of-mass variance (vacuum floor subtracted, normalized by the
    /// squared corrected particle number) and its standard error.
    pub fn com_variance(&self, snapshot: usize) -> (f64, f64) {
        let (n_est, _) = self.number(snapshot);
        let sum: f64 = self.occupied_batches().map(|b| b.sum_com[snapshot]).sum();
        let sum2: f64 = self.occupied_batches().map(|b| b.sum_com2[snapshot]).sum();
        let pooled = self.com_var_of(sum, sum2, self.count() as f64) / (n_est * n_est);
        let means: Vec<f64> = self
            .occupied_batches()
            .filter(|b| b.count > 1)
            .map(|b| {
                self.com_var_of(b.sum_com[snapshot], b.sum_com2[snapshot], b.count as f64)
                    / (n_est * n_est)
            })
            .collect();
        (pooled, batch_error(&means))
    }

    /// Ensemble mean of the center-of-mass first moment divided by the
    /// corrected number — the mean center-of-mass position.
    pub fn com_mean(&self, snapshot: usize) -> f64 {
        let (n_est, _) = self.number(snapshot);
        let sum: f64 = self.occupied_batches().map(|b| b.sum_com[snapshot]).sum();
        let vac_moment = match self.correction {
            // The vacuum density is uniform, so its first moment is the mean
            // over the (asymmetric-endpoint) position table.
            OrderingCorrection::HalfQuantum => {
                self.grid.z().iter().sum::<f64>() * self.grid.dz() * 0.5 / self.grid.dz()
            }
            OrderingCorrection::None => 0.0,
        };
        (sum / self.count() as f64 - vac_moment) / n_est
    }

    /// Mean invariant drifts `[number, momentum, energy]` at one snapshot.
    /// Number and energy drifts are relative to their initial values; the
    /// momentum drift is scaled by `initial number * max |k|` (momentum
    /// starts near zero, so a relative measure would be meaningless).
    pub fn drift_means(&self, snapshot: usize) -> [f64; 3] {
        let total = self.count() as f64;
        let mut out = [0.0; 3];
        for b in self.occupied_batches() {
            for q in 0..3 {
                out[q] += b.sum_drift[snapshot][q];
            }
        }
        for q in out.iter_mut() {
            *q /= total;
        }
        out
    }

    /// Worst per-trajectory drift over the whole run, `[number, momentum, energy]`.
    pub fn drift_max(&self) -> [f64; 3] {
        let mut out = [0.0_f64; 3];
        for b in self.occupied_batches() {
            for q in 0..3 {
                out[q] = out[q].max(b.max_drift[q]);
            }
        }
        out
    }

    /// Pooled one-body matrix at a one-body slot: Hermitized mean of
    /// `psi_j^* psi_l` with the half-quantum diagonal removed, scaled by `dz`
    /// so eigenvalues are occupation numbers.
    pub fn one_body_operator(&self, slot: usize) -> Vec<C64> {
        self.pooled_g1_operator(slot, None)
    }

    /// Same as [`EnsembleStats::one_body_operator`] but for a single batch —
    /// used for error bars on eigenvalues.
    pub fn one_body_operator_of_batch(&self, slot: usize, batch: usize) -> Vec<C64> {
        self.pooled_g1_operator(slot, Some(batch))
    }

    fn pooled_g1_operator(&self, slot: usize, batch: Option<usize>) -> Vec<C64> {
        let m = self.layout().m;
        let dz = self.grid.dz();
        let shift = self.density_shift();
        let mut mat = vec![C64::new(0.0, 0.0); m * m];
        let mut count = 0u64;
        for (i, b) in self.batches.iter().enumerate() {
            if b.count == 0 || batch.is_some_and(|want| want != i) {
                continue;
            }
            count += b.count;
            for (s, &v) in mat.iter_mut().zip(&b.g1[slot * m * m..(slot + 1) * m * m]) {
                *s += v;
            }
        }
        let inv = 1.0 / count as f64;
        for j in 0..m {
            for l in 0..=j {
                let a = mat[j * m + l] * inv;
                let bta = mat[l * m + j] * inv;
                let herm = (a + bta.conj()) * 0.5;
                let herm = if j == l {
                    C64::new(herm.re - shift, 0.0)
                } else {
                    herm
                };
                mat[j * m + l] = herm * dz;
                mat[l * m + j] = herm.conj() * dz;
            }
        }
        mat
    }
}

// ---------------------------------------------------------------------------
// One-body eigenmodes
// ---------------------------------------------------------------------------

/// Eigenvalues of a Hermitian matrix (given row-major, size `m`), descending.
pub fn hermitian_eigenvalues_desc(mat: &[C64], m: usize) -> Result<Vec<f64>, SimError> {
    assert_eq!(mat.len(), m * m, "matrix size");
    let a = DMatrix::from_fn(m, m, |r, c| mat[r * m + c]);
    let eig = SymmetricEigen::try_new(a, f64::EPSILON, 0)
        .ok_or_else(|| SimError::Eigen("no convergence".into()))?;
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
    Ok(vals)
}

/// Count eigenvalues more negative than `-3 sigma` — occupations that are
/// negative beyond what sampling noise explains and deserve a warning.
pub fn suspicious_negative_count(eigenvalues: &[f64], sigma: f64) -> usize {
    eigenvalues.iter().filter(|&&l| l < -3.0 * sigma).count()
}

// ---------------------------------------------------------------------------
// Series utilities
// ---------------------------------------------------------------------------

/// Interior local maxima of a sampled curve, refined by fitting a parabola
/// through the three points around each maximum.  Returns `(time, value)`
/// pairs in time order.
pub fn refined_peaks(times: &[f64], values: &[f64]) -> Vec<(f64, f64)> {
    assert_eq!(times.len(), values.len());
    let mut out = Vec::new();
    for i in 1..values.len().saturating_sub(1) {
        if values[i] > values[i - 1] && values[i] >= values[i + 1] {
            let (ym, y0, yp) = (values[i - 1], values[i], values[i + 1]);
            let denom = ym - 2.0 * y0 + yp;
            let (dt_frac, peak) = if denom.abs() > 1e-300 {
                let s = 0.5 * (ym - yp) / denom;
                (s, y0 - 0.25 * (ym - yp) * s)
            } else {
                (0.0, y0)
            };
            let h = times[i + 1] - times[i];
            out.push((times[i] + dt_frac * h, peak));
        }
    }
    out
}
