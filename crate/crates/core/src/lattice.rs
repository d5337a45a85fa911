//! Lazily hashed iid conductance fields on Z^d, the tilted environment and
//! the Q_0 density.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::rng::{combine, derive_seed, mix64, unit_f64};

pub const MAX_DIM: usize = 4;
pub const MAX_MOVES: usize = 2 * MAX_DIM;

pub type Coords = [i64; MAX_DIM];

/// A lattice point of Z^d, 2 <= d <= MAX_DIM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Site {
    coords: Coords,
    dim: u8,
}

impl Site {
    pub fn new(coords: &[i64]) -> Result<Self> {
        let d = coords.len();
        if !(2..=MAX_DIM).contains(&d) {
            return Err(LabError::Dimension(d));
        }
        let mut c = [0; MAX_DIM];
        c[..d].copy_from_slice(coords);
        Ok(Self { coords: c, dim: d as u8 })
    }

    pub fn origin(dim: usize) -> Result<Self> {
        Self::new(&vec![0; dim])
    }

    pub(crate) fn from_raw(coords: Coords, dim: usize) -> Self {
        Self { coords, dim: dim as u8 }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn coords(&self) -> &[i64] {
        &self.coords[..self.dim()]
    }

    pub fn raw(&self) -> &Coords {
        &self.coords
    }

    /// The neighbour reached by move `m` (see [`Move`]).
    pub fn step(&self, m: usize) -> Self {
        let mut c = self.coords;
        let mv = Move(m);
        c[mv.axis()] += mv.sign();
        Self { coords: c, dim: self.dim }
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.coords().iter().zip(v).map(|(&a, &b)| a as f64 * b).sum()
    }
}

/// Unit moves, ordered (+e1, -e1, +e2, -e2, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Move(pub usize);

impl Move {
    #[inline]
    pub fn axis(self) -> usize {
        self.0 >> 1
    }

    #[inline]
    pub fn sign(self) -> i64 {
        if self.0 & 1 == 0 {
            1
        } else {
            -1
        }
    }

    pub fn count(dim: usize) -> usize {
        2 * dim
    }

    /// Projection of the unit vector onto `v`.
    #[inline]
    pub fn dot(self, v: &[f64]) -> f64 {
        self.sign() as f64 * v[self.axis()]
    }
}

/// Non-oriented nearest-neighbour bond, stored canonically as
/// (lexicographically smaller endpoint, axis).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bond {
    base: Site,
    axis: usize,
}

impl Bond {
    pub fn new(x: Site, y: Site) -> Result<Self> {
        if x.dim() != y.dim() {
            return Err(LabError::DimensionMismatch {
                expected: x.dim(),
                got: y.dim(),
            });
        }
        let mut axis = None;
        let mut dist = 0i64;
        for i in 0..x.dim() {
            let diff = (x.coords[i] - y.coords[i]).abs();
            dist += diff;
            if diff != 0 {
                axis = Some(i);
            }
        }
        match (dist, axis) {
            (1, Some(a)) => {
                let base = if x.coords[a] < y.coords[a] { x } else { y };
                Ok(Self { base, axis: a })
            }
            _ => Err(LabError::MalformedBond),
        }
    }

    pub fn from_base(base: Site, axis: usize) -> Result<Self> {
        if axis >= base.dim() {
            return Err(LabError::MalformedBond);
        }
        Ok(Self { base, axis })
    }

    pub fn base(&self) -> Site {
        self.base
    }

    pub fn axis(&self) -> usize {
        self.axis
    }

    pub fn endpoints(&self) -> (Site, Site) {
        (self.base, self.base.step(2 * self.axis))
    }
}

/// Marginal law of a single conductance on [1/kappa, kappa].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Law {
    /// kappa with probability `p`, 1/kappa otherwise.
    TwoPoint { p: f64 },
    Uniform,
    LogUniform,
    /// Degenerate law; `value` must lie in [1/kappa, kappa].
    Constant { value: f64 },
}

impl Law {
    pub fn name(&self) -> &'static str {
        match self {
            Law::TwoPoint { .. } => "two_point",
            Law::Uniform => "uniform",
            Law::LogUniform => "log_uniform",
            Law::Constant { .. } => "constant",
        }
    }

    fn validate(&self, kappa: f64) -> Result<()> {
        match *self {
            Law::TwoPoint { p } if !(0.0..=1.0).contains(&p) => {
                Err(invalid("law_param", format!("two-point weight {p} outside [0, 1]")))
            }
            Law::Constant { value } if !(1.0 / kappa..=kappa).contains(&value) => Err(invalid(
                "law_param",
                format!("constant {value} outside [1/kappa, kappa]"),
            )),
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn quantile(&self, kappa: f64, u: f64) -> f64 {
        match *self {
            Law::TwoPoint { p } => {
                if u < p {
                    kappa
                } else {
                    1.0 / kappa
                }
            }
            Law::Uniform => {
                let lo = 1.0 / kappa;
                lo + u * (kappa - lo)
            }
            Law::LogUniform => {
                let lk = kappa.ln();
                (-lk + 2.0 * lk * u).exp()
            }
            Law::Constant { value } => value,
        }
    }

    /// (E[w], E[w^2]).
    pub fn moments(&self, kappa: f64) -> (f64, f64) {
        let (a, b) = (1.0 / kappa, kappa);
        match *self {
            Law::TwoPoint { p } => (p * b + (1.0 - p) * a, p * b * b + (1.0 - p) * a * a),
            Law::Uniform => ((a + b) / 2.0, (a * a + a * b + b * b) / 3.0),
            Law::LogUniform => {
                let lk = kappa.ln();
                ((b - a) / (2.0 * lk), (b * b - a * a) / (4.0 * lk))
            }
            Law::Constant { value } => (value, value * value),
        }
    }

    pub fn constant_value(&self, kappa: f64) -> Option<f64> {
        match *self {
            Law::Constant { value } => Some(value),
            Law::TwoPoint { p } if p == 1.0 => Some(kappa),
            Law::TwoPoint { p } if p == 0.0 => Some(1.0 / kappa),
            _ => None,
        }
    }
}

/// Read access to conductances of some (possibly finite or periodic) graph
/// embedded in Z^d.
pub trait Environment: Sync {
    fn dim(&self) -> usize;
    fn kappa(&self) -> f64;
    /// Conductance of the bond {x, x + e_axis}.
    fn conductance_from(&self, x: &Coords, axis: usize) -> f64;
    /// `Some(c)` when every bond has conductance c.
    fn constant(&self) -> Option<f64> {
        None
    }
    /// Stable fingerprint used to tie paths to the environment they came from.
    fn fingerprint(&self) -> u64;

    /// The 2d conductances incident to `x`, in move order.
    #[inline]
    fn incident(&self, x: &Coords, out: &mut [f64; MAX_MOVES]) {
        let d = self.dim();
        for axis in 0..d {
            out[2 * axis] = self.conductance_from(x, axis);
            let mut y = *x;
            y[axis] -= 1;
            out[2 * axis + 1] = self.conductance_from(&y, axis);
        }
    }
}

/// Seed-deterministic iid conductances on the bonds of Z^d.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConductanceField {
    pub dimension: usize,
    pub kappa: f64,
    #[serde(flatten)]
    pub law: Law,
    pub seed: u64,
}

impl ConductanceField {
    pub fn new(dimension: usize, kappa: f64, law: Law, seed: u64) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&dimension) {
            return Err(LabError::Dimension(dimension));
        }
        if !(kappa > 1.0 && kappa.is_finite()) {
            return Err(invalid("kappa", format!("{kappa} must be finite and > 1")));
        }
        law.validate(kappa)?;
        Ok(Self {
            dimension,
            kappa,
            law,
            seed,
        })
    }

    /// Same law, different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }

    #[inline]
    fn bond_hash(&self, base: &Coords, axis: usize) -> u64 {
        let mut h = mix64(self.seed ^ 0xA076_1D64_78BD_642F);
        for &c in &base[..self.dimension] {
            h = combine(h, c as u64);
        }
        combine(h, axis as u64)
    }

    #[inline]
    fn value(&self, base: &Coords, axis: usize) -> f64 {
        let w = self
            .law
            .quantile(self.kappa, unit_f64(self.bond_hash(base, axis)));
        debug_assert!(w >= 1.0 / self.kappa - 1e-15 && w <= self.kappa + 1e-15);
        w
    }

    pub fn conductance_at(&self, bond: &Bond) -> f64 {
        self.value(bond.base.raw(), bond.axis)
    }

    pub fn conductance_between(&self, x: Site, y: Site) -> Result<f64> {
        Ok(self.conductance_at(&Bond::new(x, y)?))
    }

    /// omega(x,y) * exp(lambda * ell.(x+y)).
    pub fn tilted_conductance(&self, bond: &Bond, bias: &BiasSpec) -> f64 {
        let (x, y) = bond.endpoints();
        let s = x.dot(bias.ell()) + y.dot(bias.ell());
        self.conductance_at(bond) * (bias.lambda * s).exp()
    }

    /// Unnormalized Q_0 density of the shifted environment: sum of the 2d
    /// incident conductances.
    pub fn q0_weight(&self, site: &Site) -> f64 {
        let mut w = [0.0; MAX_MOVES];
        self.incident(site.raw(), &mut w);
        w[..2 * self.dimension].iter().sum()
    }

    /// Z = 2d E[omega(e)].
    pub fn q0_normalizer(&self) -> f64 {
        2.0 * self.dimension as f64 * self.law.moments(self.kappa).0
    }

    /// dQ_0/dP at the shifted environment; lies in [1/kappa^2, kappa^2].
    pub fn q0_density(&self, site: &Site) -> f64 {
        self.q0_weight(site) / self.q0_normalizer()
    }

    /// Fresh iid table for the n-torus, keyed by (seed, "periodic", n).
    pub fn sample_periodic(&self, period: usize) -> Result<PeriodicEnvironment> {
        if period == 0 {
            return Err(invalid("period", "must be >= 1"));
        }
        let derived = self.with_seed(derive_seed(self.seed, "periodic", period as u64));
        let d = self.dimension;
        let states = period
            .checked_pow(d as u32)
            .ok_or_else(|| invalid("period", "torus too large"))?;
        let mut table = Vec::with_capacity(states * d);
        for idx in 0..states {
            let x = torus_coords(idx, period, d);
            for axis in 0..d {
                table.push(derived.value(&x, axis));
            }
        }
        Ok(PeriodicEnvironment {
            dim: d,
            period,
            kappa: self.kappa,
            table,
            fingerprint: derived.fingerprint() ^ 0x5045_5249_4F44_4943,
        })
    }
}

impl Environment for ConductanceField {
    fn dim(&self) -> usize {
        self.dimension
    }

    fn kappa(&self) -> f64 {
        self.kappa
    }

    #[inline]
    fn conductance_from(&self, x: &Coords, axis: usize) -> f64 {
        self.value(x, axis)
    }

    fn constant(&self) -> Option<f64> {
        self.law.constant_value(self.kappa)
    }

    fn fingerprint(&self) -> u64 {
        let (tag, param) = match self.law {
            Law::TwoPoint { p } => (1u64, p.to_bits()),
            Law::Uniform => (2, 0),
            Law::LogUniform => (3, 0),
            Law::Constant { value } => (4, value.to_bits()),
        };
        let mut h = combine(self.seed, self.dimension as u64);
        h = combine(h, self.kappa.to_bits());
        h = combine(h, tag);
        combine(h, param)
    }
}

pub(crate) fn torus_coords(mut idx: usize, n: usize, d: usize) -> Coords {
    let mut x = [0i64; MAX_DIM];
    for c in x.iter_mut().take(d) {
        *c = (idx % n) as i64;
        idx /= n;
    }
    x
}

pub(crate) fn torus_index(x: &Coords, n: usize, d: usize) -> usize {
    let n_i = n as i64;
    let mut idx = 0usize;
    for i in (0..d).rev() {
        idx = idx * n + x[i].rem_euclid(n_i) as usize;
    }
    idx
}

/// Conductances on the bonds of the discrete torus (Z/nZ)^d.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicEnvironment {
    dim: usize,
    period: usize,
    kappa: f64,
    table: Vec<f64>,
    fingerprint: u64,
}

impl PeriodicEnvironment {
    /// Builds a torus from explicit values; `table[site * d + axis]` is the
    /// bond from `site` in direction +e_axis.
    pub fn from_table(dim: usize, period: usize, kappa: f64, table: Vec<f64>) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(LabError::Dimension(dim));
        }
        if period == 0 {
            return Err(invalid("period", "must be >= 1"));
        }
        let expected = period.pow(dim as u32) * dim;
        if table.len() != expected {
            return Err(invalid("table", format!("expected {expected} entries, got {}", table.len())));
        }
        if let Some(w) = table
            .iter()
            .find(|&&w| !(w >= 1.0 / kappa - 1e-15 && w <= kappa + 1e-15))
        {
            return Err(invalid("table", format!("conductance {w} outside [1/kappa, kappa]")));
        }
        let mut h = combine(period as u64, dim as u64);
        for w in &table {
            h = combine(h, w.to_bits());
        }
        Ok(Self {
            dim,
            period,
            kappa,
            table,
            fingerprint: h,
        })
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn states(&self) -> usize {
        self.period.pow(self.dim as u32)
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn site_index(&self, x: &Coords) -> usize {
        torus_index(x, self.period, self.dim)
    }

    pub fn site_coords(&self, idx: usize) -> Coords {
        torus_coords(idx, self.period, self.dim)
    }
}

impl Environment for PeriodicEnvironment {
    fn dim(&self) -> usize {
        self.dim
    }

    fn kappa(&self) -> f64 {
        self.kappa
    }

    #[inline]
    fn conductance_from(&self, x: &Coords, axis: usize) -> f64 {
        self.table[self.site_index(x) * self.dim + axis]
    }

    fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

/// Tilt strength, direction and the hyperplane grid scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub lambda: f64,
    ell: Coords64,
    dim: usize,
    pub l0: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Coords64([f64; MAX_DIM]);

impl BiasSpec {
    pub fn new(lambda: f64, ell: &[f64], l0: u32) -> Result<Self> {
        let d = ell.len();
        if !(2..=MAX_DIM).contains(&d) {
            return Err(LabError::Dimension(d));
        }
        if !(0.0..1.0).contains(&lambda) {
            return Err(invalid("lambda", format!("{lambda} outside [0, 1)")));
        }
        let norm: f64 = ell.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(invalid("ell", format!("|ell| = {norm}, expected 1")));
        }
        let top = ell.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if ell[0] < top - 1e-12 {
            return Err(invalid(
                "ell",
                "coordinates must be arranged so that ell.e1 = max_i |ell.e_i|",
            ));
        }
        if l0 == 0 {
            return Err(invalid("l0", "must be >= 1"));
        }
        let mut e = [0.0; MAX_DIM];
        e[..d].copy_from_slice(ell);
        Ok(Self {
            lambda,
            ell: Coords64(e),
            dim: d,
            l0,
        })
    }

    /// Tilt along e1.
    pub fn along_e1(dim: usize, lambda: f64, l0: u32) -> Result<Self> {
        let mut e = vec![0.0; dim];
        e[0] = 1.0;
        Self::new(lambda, &e, l0)
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(lambda, self.ell(), self.l0)
    }

    pub fn with_l0(&self, l0: u32) -> Result<Self> {
        Self::new(self.lambda, self.ell(), l0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ell(&self) -> &[f64] {
        &self.ell.0[..self.dim]
    }

    /// floor(1/lambda) = 1/lambda_1.
    pub fn inv_lambda1(&self) -> Option<i64> {
        (self.lambda > 0.0).then(|| (1.0 / self.lambda).floor() as i64)
    }

    pub fn lambda1(&self) -> Option<f64> {
        self.inv_lambda1().map(|k| 1.0 / k as f64)
    }

    /// Level spacing L1 = 4 L0 / lambda_1 in lattice units.
    pub fn l1(&self) -> Option<i64> {
        self.inv_lambda1().map(|k| 4 * self.l0 as i64 * k)
    }

    /// exp(lambda ell.e) for each move.
    pub fn tilt_factors(&self) -> [f64; MAX_MOVES] {
        let mut t = [1.0; MAX_MOVES];
        for (m, v) in t.iter_mut().enumerate().take(2 * self.dim) {
            *v = (self.lambda * Move(m).dot(self.ell())).exp();
        }
        t
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = combine(self.lambda.to_bits(), self.l0 as u64);
        for x in self.ell() {
            h = combine(h, x.to_bits());
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn site(c: &[i64]) -> Site {
        Site::new(c).unwrap()
    }

    #[test]
    fn degenerate_two_point_is_kappa() {
        let f = ConductanceField::new(2, 2.0, Law::TwoPoint { p: 1.0 }, 9).unwrap();
        for x in -3..3 {
            let b = Bond::new(site(&[x, 1]), site(&[x + 1, 1])).unwrap();
            assert_eq!(f.conductance_at(&b), 2.0);
        }
    }

    #[test]
    fn orientation_invariance() {
        let f = ConductanceField::new(3, 3.0, Law::Uniform, 1234).unwrap();
        let x = site(&[4, -2, 7]);
        for m in 0..6 {
            let y = x.step(m);
            assert_eq!(
                f.conductance_between(x, y).unwrap(),
                f.conductance_between(y, x).unwrap()
            );
        }
    }

    #[test]
    fn malformed_bonds_rejected() {
        assert_eq!(
            Bond::new(site(&[0, 0]), site(&[1, 1])).unwrap_err(),
            LabError::MalformedBond
        );
        assert_eq!(
            Bond::new(site(&[0, 0]), site(&[0, 0])).unwrap_err(),
            LabError::MalformedBond
        );
        assert!(Bond::new(site(&[0, 0]), site(&[2, 0])).is_err());
    }

    #[test]
    fn determinism_across_instances() {
        let f = ConductanceField::new(2, 2.0, Law::Uniform, 0xDEADBEEF).unwrap();
        let b = Bond::new(site(&[0, 0]), site(&[1, 0])).unwrap();
        let v = f.conductance_at(&b);
        assert!((0.5..=2.0).contains(&v));
        let g = ConductanceField::new(2, 2.0, Law::Uniform, 0xDEADBEEF).unwrap();
        assert_eq!(v.to_bits(), g.conductance_at(&b).to_bits());
    }

    #[test]
    fn tilt_examples() {
        let f = ConductanceField::new(2, 2.0, Law::Constant { value: 1.0 }, 0).unwrap();
        let b = Bond::new(site(&[0, 0]), site(&[1, 0])).unwrap();
        let bias0 = BiasSpec::along_e1(2, 0.0, 2).unwrap();
        assert_eq!(f.tilted_conductance(&b, &bias0), f.conductance_at(&b));
        let bias = BiasSpec::along_e1(2, 0.2, 2).unwrap();
        assert!((f.tilted_conductance(&b, &bias) - 0.2f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn q0_examples() {
        let f = ConductanceField::new(2, 2.0, Law::Constant { value: 1.0 }, 0).unwrap();
        let o = Site::origin(2).unwrap();
        assert_eq!(f.q0_weight(&o), 4.0);
        assert_eq!(f.q0_density(&o), 1.0);
        let g = ConductanceField::new(2, 2.0, Law::TwoPoint { p: 1.0 }, 0).unwrap();
        assert_eq!(g.q0_weight(&o), 8.0);
    }

    #[test]
    fn periodic_counts_and_ranges() {
        let f = ConductanceField::new(2, 2.0, Law::Uniform, 5).unwrap();
        let p = f.sample_periodic(3).unwrap();
        assert_eq!(p.table().len(), 18);
        assert!(p.table().iter().all(|&w| (0.5..=2.0).contains(&w)));
        assert!(f.sample_periodic(0).is_err());
        let one = f.sample_periodic(1).unwrap();
        let a = one.conductance_from(&[0, 0, 0, 0], 0);
        assert_eq!(a, one.conductance_from(&[5, -3, 0, 0], 0));
        let det = ConductanceField::new(2, 2.0, Law::TwoPoint { p: 1.0 }, 5)
            .unwrap()
            .sample_periodic(4)
            .unwrap();
        assert!(det.table().iter().all(|&w| w == 2.0));
    }

    #[test]
    fn periodic_wraps() {
        let f = ConductanceField::new(2, 2.0, Law::LogUniform, 5).unwrap();
        let p = f.sample_periodic(3).unwrap();
        assert_eq!(
            p.conductance_from(&[2, 1, 0, 0], 1),
            p.conductance_from(&[-1, 4, 0, 0], 1)
        );
    }

    #[test]
    fn bias_grid_quantities() {
        let b = BiasSpec::along_e1(2, 0.3, 2).unwrap();
        assert_eq!(b.inv_lambda1(), Some(3));
        assert!((b.lambda1().unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(b.l1(), Some(24));
        assert!(b.lambda1().unwrap() >= b.lambda);
        assert!(BiasSpec::new(0.1, &[0.0, 1.0], 2).is_err());
        assert!(BiasSpec::new(0.1, &[0.6, 0.8], 2).is_err());
        assert!(BiasSpec::new(0.1, &[0.8, -0.6], 2).is_ok());
        assert!(BiasSpec::new(1.0, &[1.0, 0.0], 2).is_err());
        assert_eq!(BiasSpec::along_e1(3, 0.0, 2).unwrap().l1(), None);
    }

    #[test]
    fn law_moments_match_quadrature() {
        let kappa = 2.5;
        for law in [Law::Uniform, Law::LogUniform, Law::TwoPoint { p: 0.3 }] {
            let n = 200_000;
            let (mut s1, mut s2) = (0.0, 0.0);
            for i in 0..n {
                let u = (i as f64 + 0.5) / n as f64;
                let w = law.quantile(kappa, u);
                s1 += w;
                s2 += w * w;
            }
            let (m1, m2) = law.moments(kappa);
            assert!((s1 / n as f64 - m1).abs() < 1e-6, "{law:?}");
            assert!((s2 / n as f64 - m2).abs() < 1e-5, "{law:?}");
        }
    }
}
