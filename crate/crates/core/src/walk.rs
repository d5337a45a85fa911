//! The quenched walk: one-step kernel, path sampling, the martingale/drift
//! decomposition along ell and the exact likelihood ratio between tilted and
//! untilted path laws.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lattice::{BiasSpec, Coords, ConductanceField, Environment, Move, Site, MAX_MOVES};
use crate::rng::{combine, uniform, StreamId};

/// Fingerprint tying a path to the environment and bias it was sampled in.
pub fn config_hash<E: Environment + ?Sized>(env: &E, bias: &BiasSpec) -> u64 {
    combine(env.fingerprint(), bias.fingerprint())
}

/// Transition probabilities at `site`, in move order (+e1, -e1, +e2, ...).
///
/// The site factor exp(2 lambda ell.x) of omega^lambda cancels in the
/// normalization, so only exp(lambda ell.e) enters.
pub fn step_distribution<E: Environment + ?Sized>(env: &E, bias: &BiasSpec, site: &Site) -> Vec<f64> {
    let mut w = [0.0; MAX_MOVES];
    env.incident(site.raw(), &mut w);
    let tilt = bias.tilt_factors();
    let n = 2 * env.dim();
    let mut p: Vec<f64> = (0..n).map(|m| w[m] * tilt[m]).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

/// d(omega, x) = E^x[X_1 - X_0] under the tilted kernel.
pub fn local_drift<E: Environment + ?Sized>(env: &E, bias: &BiasSpec, site: &Site) -> Vec<f64> {
    let p = step_distribution(env, bias, site);
    let mut d = vec![0.0; env.dim()];
    for (m, pm) in p.iter().enumerate() {
        d[Move(m).axis()] += Move(m).sign() as f64 * pm;
    }
    d
}

/// Drift along `ell` and Var[(X_1 - X_0).ell] of the untilted kernel, given
/// the incident conductances.
#[inline]
pub(crate) fn untilted_moments(incident: &[f64], ell: &[f64]) -> (f64, f64) {
    let total: f64 = incident.iter().sum();
    let (mut m1, mut m2) = (0.0, 0.0);
    for (m, w) in incident.iter().enumerate() {
        let e = Move(m).dot(ell);
        m1 += w * e;
        m2 += w * e * e;
    }
    m1 /= total;
    m2 /= total;
    (m1, (m2 - m1 * m1).max(0.0))
}

/// log of sum_e omega(x, x+e) exp(lambda ell.e) / sum_e omega(x, x+e).
#[inline]
pub(crate) fn log_normalizer_ratio(incident: &[f64], tilt: &[f64]) -> f64 {
    let (mut a, mut b) = (0.0, 0.0);
    for (w, t) in incident.iter().zip(tilt) {
        a += w * t;
        b += w;
    }
    (a / b).ln()
}

/// Streaming walker; keeps the incident conductances of the current site.
pub struct Walker<'e, E: Environment + ?Sized> {
    env: &'e E,
    dim: usize,
    pos: Coords,
    tilt: [f64; MAX_MOVES],
    incident: [f64; MAX_MOVES],
    fresh: bool,
    constant_cdf: Option<[f64; MAX_MOVES]>,
}

impl<'e, E: Environment + ?Sized> Walker<'e, E> {
    pub fn new(env: &'e E, bias: &BiasSpec, start: &Site) -> Self {
        let dim = env.dim();
        let tilt = bias.tilt_factors();
        let constant_cdf = env.constant().map(|_| {
            let total: f64 = tilt[..2 * dim].iter().sum();
            let mut cdf = [f64::INFINITY; MAX_MOVES];
            let mut acc = 0.0;
            for m in 0..2 * dim {
                acc += tilt[m] / total;
                cdf[m] = acc;
            }
            cdf[2 * dim - 1] = f64::INFINITY;
            cdf
        });
        Self {
            env,
            dim,
            pos: *start.raw(),
            tilt,
            incident: [0.0; MAX_MOVES],
            fresh: false,
            constant_cdf,
        }
    }

    pub fn position(&self) -> &Coords {
        &self.pos
    }

    pub fn site(&self) -> Site {
        Site::from_raw(self.pos, self.dim)
    }

    pub fn moves(&self) -> usize {
        2 * self.dim
    }

    pub fn tilt(&self) -> &[f64] {
        &self.tilt[..2 * self.dim]
    }

    /// Incident conductances at the current site.
    #[inline]
    pub fn incident(&mut self) -> &[f64] {
        if !self.fresh {
            match self.env.constant() {
                Some(c) => self.incident[..2 * self.dim].fill(c),
                None => self.env.incident(&self.pos, &mut self.incident),
            }
            self.fresh = true;
        }
        &self.incident[..2 * self.dim]
    }

    #[inline]
    pub fn apply(&mut self, m: usize) {
        let mv = Move(m);
        self.pos[mv.axis()] += mv.sign();
        self.fresh = false;
    }

    /// Samples a move from the tilted kernel and applies it.
    #[inline]
    pub fn step<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> usize {
        let u = uniform(rng);
        let m = if let Some(cdf) = &self.constant_cdf {
            let mut m = 0;
            while u >= cdf[m] {
                m += 1;
            }
            m
        } else {
            self.incident();
            let n = 2 * self.dim;
            let mut total = 0.0;
            let mut w = [0.0; MAX_MOVES];
            for k in 0..n {
                w[k] = self.incident[k] * self.tilt[k];
                total += w[k];
            }
            let target = u * total;
            let mut acc = 0.0;
            let mut m = n - 1;
            for (k, wk) in w.iter().enumerate().take(n - 1) {
                acc += wk;
                if target < acc {
                    m = k;
                    break;
                }
            }
            m
        };
        self.apply(m);
        m
    }
}

/// A sampled trajectory stored as move codes.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkPath {
    pub start: Site,
    pub steps: Vec<u8>,
    pub stream_id: u64,
    pub config_hash: u64,
}

impl WalkPath {
    pub fn from_moves(start: Site, steps: Vec<u8>, config_hash: u64) -> Self {
        Self {
            start,
            steps,
            stream_id: 0,
            config_hash,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// X_0, X_1, ..., X_n.
    pub fn positions(&self) -> impl Iterator<Item = Site> + '_ {
        let mut cur = self.start;
        std::iter::once(self.start).chain(self.steps.iter().map(move |&m| {
            cur = cur.step(m as usize);
            cur
        }))
    }

    pub fn end(&self) -> Site {
        self.positions().last().unwrap_or(self.start)
    }

    /// (X_k - X_0).e1 for k = 0..=n.
    pub fn e1_offsets(&self) -> Vec<i64> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        let mut x = 0i64;
        out.push(0);
        for &m in &self.steps {
            match m {
                0 => x += 1,
                1 => x -= 1,
                _ => {}
            }
            out.push(x);
        }
        out
    }

    /// Binary dump: 32-byte header (magic, d, horizon, seed) then one byte per step.
    pub fn to_bytes(&self, seed: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.steps.len());
        out.extend_from_slice(PATH_MAGIC);
        out.extend_from_slice(&(self.start.dim() as u64).to_le_bytes());
        out.extend_from_slice(&(self.steps.len() as u64).to_le_bytes());
        out.extend_from_slice(&seed.to_le_bytes());
        out.extend_from_slice(&self.steps);
        out
    }

    /// Inverse of [`WalkPath::to_bytes`]; the path starts at the origin.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, u64)> {
        let bad = |r: &str| LabError::InvalidParameter {
            name: "path dump",
            reason: r.to_string(),
        };
        if bytes.len() < 32 || &bytes[..8] != PATH_MAGIC {
            return Err(bad("missing header"));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let (d, n, seed) = (word(8) as usize, word(16) as usize, word(24));
        if bytes.len() != 32 + n {
            return Err(bad("length does not match header"));
        }
        if bytes[32..].iter().any(|&m| m as usize >= 2 * d) {
            return Err(bad("move code out of range"));
        }
        let path = WalkPath::from_moves(Site::origin(d)?, bytes[32..].to_vec(), 0);
        Ok((path, seed))
    }
}

const PATH_MAGIC: &[u8; 8] = b"CLPATH01";

pub fn run_walk<E: Environment + ?Sized>(
    env: &E,
    bias: &BiasSpec,
    start: &Site,
    horizon: usize,
    stream: &StreamId,
) -> WalkPath {
    let mut rng = stream.rng();
    let mut path = sample_path(env, bias, start, horizon, &mut rng);
    path.stream_id = stream.id();
    path
}

pub fn sample_path<E: Environment + ?Sized, R: RngCore + ?Sized>(
    env: &E,
    bias: &BiasSpec,
    start: &Site,
    horizon: usize,
    rng: &mut R,
) -> WalkPath {
    let mut w = Walker::new(env, bias, start);
    let steps = (0..horizon).map(|_| w.step(rng) as u8).collect();
    WalkPath {
        start: *start,
        steps,
        stream_id: 0,
        config_hash: config_hash(env, bias),
    }
}

/// M_n, the accumulated untilted drift and the quadratic terms D_ell.
#[derive(Debug, Clone, PartialEq)]
pub struct PathDecomposition {
    /// M_0 = 0, ..., M_n.
    pub martingale: Vec<f64>,
    pub drift_sum: Vec<f64>,
    pub quad_terms: Vec<f64>,
    pub quad_sum: f64,
}

pub fn decompose_path<E: Environment + ?Sized>(
    env: &E,
    bias: &BiasSpec,
    path: &WalkPath,
) -> Result<PathDecomposition> {
    let expected = config_hash(env, bias);
    if path.config_hash != expected {
        return Err(LabError::ConfigMismatch {
            path: path.config_hash,
            expected,
        });
    }
    let d = env.dim();
    let ell = bias.ell();
    let mut martingale = Vec::with_capacity(path.len() + 1);
    let mut quad_terms = Vec::with_capacity(path.len());
    let mut drift_sum = vec![0.0; d];
    let mut m = 0.0;
    martingale.push(m);
    let mut w = [0.0; MAX_MOVES];
    let mut x = *path.start.raw();
    for &code in &path.steps {
        env.incident(&x, &mut w);
        let total: f64 = w[..2 * d].iter().sum();
        for (k, wk) in w[..2 * d].iter().enumerate() {
            drift_sum[Move(k).axis()] += Move(k).sign() as f64 * wk / total;
        }
        let (drift_ell, var_ell) = untilted_moments(&w[..2 * d], ell);
        let mv = Move(code as usize);
        m += mv.dot(ell) - drift_ell;
        martingale.push(m);
        quad_terms.push(var_ell);
        x[mv.axis()] += mv.sign();
    }
    let quad_sum = quad_terms.iter().sum();
    Ok(PathDecomposition {
        martingale,
        drift_sum,
        quad_terms,
        quad_sum,
    })
}

/// log dP_{omega,lambda}/dP_omega of the path.
pub fn log_girsanov_weight<E: Environment + ?Sized>(env: &E, bias: &BiasSpec, path: &WalkPath) -> f64 {
    let d = env.dim();
    let tilt = bias.tilt_factors();
    let mut w = [0.0; MAX_MOVES];
    let mut x = *path.start.raw();
    let mut log = 0.0;
    for &code in &path.steps {
        env.incident(&x, &mut w);
        let mv = Move(code as usize);
        log += bias.lambda * mv.dot(bias.ell()) - log_normalizer_ratio(&w[..2 * d], &tilt[..2 * d]);
        x[mv.axis()] += mv.sign();
    }
    log
}

/// G(lambda, n) = prod_i exp(lambda ell.dX_i) Z_omega(X_i) / Z_{omega^lambda}(X_i).
pub fn girsanov_weight<E: Environment + ?Sized>(env: &E, bias: &BiasSpec, path: &WalkPath) -> f64 {
    log_girsanov_weight(env, bias, path).exp()
}

/// Bounded local functions of the environment, as a small serializable family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalFunction {
    Constant { value: f64 },
    /// omega(offset, offset + e_axis).
    BondReadout { offset: Vec<i64>, axis: usize },
    /// sum of the 2d conductances incident to the origin.
    IncidentSum,
    /// IncidentSum divided by `norm` (2d E[omega] gives the Q_0 density).
    Q0Density { norm: f64 },
    Centered { inner: Box<LocalFunction>, mean: f64 },
}

impl LocalFunction {
    /// f(omega) = omega(0, e_1).
    pub fn first_bond() -> Self {
        LocalFunction::BondReadout {
            offset: vec![],
            axis: 0,
        }
    }

    pub fn q0_density(field: &ConductanceField) -> Self {
        LocalFunction::Q0Density {
            norm: field.q0_normalizer(),
        }
    }

    pub fn centered(self, mean: f64) -> Self {
        LocalFunction::Centered {
            inner: Box::new(self),
            mean,
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            LocalFunction::Constant { .. } => true,
            LocalFunction::Centered { inner, .. } => inner.is_constant(),
            _ => false,
        }
    }

    pub fn bound(&self, dim: usize, kappa: f64) -> f64 {
        match self {
            LocalFunction::Constant { value } => value.abs(),
            LocalFunction::BondReadout { .. } => kappa,
            LocalFunction::IncidentSum => 2.0 * dim as f64 * kappa,
            LocalFunction::Q0Density { norm } => 2.0 * dim as f64 * kappa / norm,
            LocalFunction::Centered { inner, mean } => inner.bound(dim, kappa) + mean.abs(),
        }
    }

    /// Bonds (as base offset, axis) the function reads.
    pub fn window(&self, dim: usize) -> Vec<(Vec<i64>, usize)> {
        match self {
            LocalFunction::Constant { .. } => vec![],
            LocalFunction::BondReadout { offset, axis } => vec![(padded(offset, dim), *axis)],
            LocalFunction::IncidentSum | LocalFunction::Q0Density { .. } => (0..dim)
                .flat_map(|a| {
                    let mut minus = vec![0; dim];
                    minus[a] = -1;
                    [(vec![0; dim], a), (minus, a)]
                })
                .collect(),
            LocalFunction::Centered { inner, .. } => inner.window(dim),
        }
    }

    /// f(theta_site omega).
    pub fn evaluate<E: Environment + ?Sized>(&self, env: &E, site: &Site) -> f64 {
        let mut w = [0.0; MAX_MOVES];
        env.incident(site.raw(), &mut w);
        self.eval_with(env, site.raw(), &w[..2 * env.dim()])
    }

    /// Evaluation reusing the incident conductances at `x` when possible.
    #[inline]
    pub fn eval_with<E: Environment + ?Sized>(&self, env: &E, x: &Coords, incident: &[f64]) -> f64 {
        match self {
            LocalFunction::Constant { value } => *value,
            LocalFunction::BondReadout { offset, axis } => {
                if offset.iter().all(|&o| o == 0) {
                    incident[2 * axis]
                } else {
                    let mut y = *x;
                    for (c, o) in y.iter_mut().zip(offset) {
                        *c += o;
                    }
                    env.conductance_from(&y, *axis)
                }
            }
            LocalFunction::IncidentSum => incident.iter().sum(),
            LocalFunction::Q0Density { norm } => incident.iter().sum::<f64>() / norm,
            LocalFunction::Centered { inner, mean } => inner.eval_with(env, x, incident) - mean,
        }
    }

    /// Exact mean under P for iid fields.
    pub fn p_mean(&self, field: &ConductanceField) -> f64 {
        let (m1, _) = field.law.moments(field.kappa);
        let d = field.dimension as f64;
        match self {
            LocalFunction::Constant { value } => *value,
            LocalFunction::BondReadout { .. } => m1,
            LocalFunction::IncidentSum => 2.0 * d * m1,
            LocalFunction::Q0Density { norm } => 2.0 * d * m1 / norm,
            LocalFunction::Centered { inner, mean } => inner.p_mean(field) - mean,
        }
    }

    /// Exact mean under Q_0 (density proportional to the incident sum).
    pub fn q0_mean(&self, field: &ConductanceField) -> f64 {
        let (m1, m2) = field.law.moments(field.kappa);
        let dd = 2.0 * field.dimension as f64;
        // E[w_b * sum_e w_e] / E[sum_e w_e] for an incident bond b
        let incident_bond = (m2 + (dd - 1.0) * m1 * m1) / (dd * m1);
        match self {
            LocalFunction::Constant { value } => *value,
            LocalFunction::BondReadout { offset, axis } => {
                let off = padded(offset, field.dimension);
                let at_origin = off.iter().all(|&o| o == 0);
                let behind = off
                    .iter()
                    .enumerate()
                    .all(|(i, &o)| if i == *axis { o == -1 } else { o == 0 });
                if at_origin || behind {
                    incident_bond
                } else {
                    m1
                }
            }
            LocalFunction::IncidentSum => dd * incident_bond,
            LocalFunction::Q0Density { norm } => dd * incident_bond / norm,
            LocalFunction::Centered { inner, mean } => inner.q0_mean(field) - mean,
        }
    }
}

fn padded(offset: &[i64], dim: usize) -> Vec<i64> {
    let mut v = offset.to_vec();
    v.resize(dim, 0);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Law, PeriodicEnvironment};

    fn ones(d: usize) -> ConductanceField {
        ConductanceField::new(d, 2.0, Law::Constant { value: 1.0 }, 0).unwrap()
    }

    #[test]
    fn kernel_from_single_heavy_bond() {
        // omega(0,e1) = 2, rest 1, via a 1-torus? use a handcrafted periodic table
        let mut table = vec![1.0; 4 * 4 * 2];
        table[0] = 2.0; // bond from (0,0) along e1
        let env = PeriodicEnvironment::from_table(2, 4, 2.0, table).unwrap();
        let bias = BiasSpec::along_e1(2, 0.0, 2).unwrap();
        let p = step_distribution(&env, &bias, &Site::origin(2).unwrap());
        let want = [0.4, 0.2, 0.2, 0.2];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn homogeneous_closed_form() {
        let lam: f64 = 0.2;
        let bias = BiasSpec::along_e1(2, lam, 2).unwrap();
        let p = step_distribution(&ones(2), &bias, &Site::origin(2).unwrap());
        let z = 2.0 * lam.cosh() + 2.0;
        assert!((p[0] - lam.exp() / z).abs() < 1e-15);
        assert!((p[1] - (-lam).exp() / z).abs() < 1e-15);
        assert!((p[2] - 1.0 / z).abs() < 1e-15);
        let d = local_drift(&ones(2), &bias, &Site::origin(2).unwrap());
        assert!((d[0] - 0.1f64.tanh()).abs() < 1e-15);
        assert!((d[0] - 0.099_667_994_6).abs() < 1e-9);
        assert_eq!(d[1], 0.0);
    }

    #[test]
    fn drift_monotone_in_lambda() {
        let mut prev = -1.0;
        for k in 0..20 {
            let bias = BiasSpec::along_e1(2, k as f64 * 0.04, 2).unwrap();
            let d = local_drift(&ones(2), &bias, &Site::origin(2).unwrap())[0];
            assert!(d > prev);
            prev = d;
        }
    }

    #[test]
    fn scale_invariance_at_zero_tilt() {
        let f = ConductanceField::new(3, 2.0, Law::Uniform, 3).unwrap();
        let bias = BiasSpec::along_e1(3, 0.0, 2).unwrap();
        let s = Site::new(&[1, 2, -1]).unwrap();
        let p = step_distribution(&f, &bias, &s);
        let mut table = Vec::new();
        let torus = f.sample_periodic(3).unwrap();
        for w in torus.table() {
            table.push(w * 1.5);
        }
        let scaled = PeriodicEnvironment::from_table(3, 3, 4.0, table).unwrap();
        let p1 = step_distribution(&torus, &bias, &s);
        let p2 = step_distribution(&scaled, &bias, &s);
        for (a, b) in p1.iter().zip(&p2) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn horizon_zero_and_replay() {
        let f = ConductanceField::new(2, 2.0, Law::Uniform, 3).unwrap();
        let bias = BiasSpec::along_e1(2, 0.1, 2).unwrap();
        let o = Site::origin(2).unwrap();
        let s = StreamId::new(1, "t", 0);
        let p0 = run_walk(&f, &bias, &o, 0, &s);
        assert!(p0.is_empty());
        assert_eq!(p0.end(), o);
        let a = run_walk(&f, &bias, &o, 500, &s);
        let b = run_walk(&f, &bias, &o, 500, &s);
        assert_eq!(a, b);
    }

    #[test]
    fn decomposition_examples() {
        let env = ones(2);
        let bias = BiasSpec::along_e1(2, 0.0, 2).unwrap();
        let o = Site::origin(2).unwrap();
        let path = WalkPath::from_moves(o, vec![0; 7], config_hash(&env, &bias));
        let dec = decompose_path(&env, &bias, &path).unwrap();
        assert_eq!(dec.martingale.last().copied(), Some(7.0));
        assert!(dec.quad_terms.iter().all(|&q| (q - 0.5).abs() < 1e-15));
        let other = BiasSpec::along_e1(2, 0.1, 2).unwrap();
        assert!(matches!(
            decompose_path(&env, &other, &path),
            Err(LabError::ConfigMismatch { .. })
        ));
    }

    #[test]
    fn girsanov_examples() {
        let env = ones(2);
        let o = Site::origin(2).unwrap();
        let bias = BiasSpec::along_e1(2, 0.2, 2).unwrap();
        let path = WalkPath::from_moves(o, vec![0], 0);
        let g = girsanov_weight(&env, &bias, &path);
        let want = 0.2f64.exp() * 4.0 / (2.0 * 0.2f64.cosh() + 2.0);
        assert!((g - want).abs() < 1e-15);
        assert!((g - 1.2093).abs() < 1e-4);
        let zero = BiasSpec::along_e1(2, 0.0, 2).unwrap();
        let path = WalkPath::from_moves(o, vec![0, 3, 1, 2, 2], 0);
        assert_eq!(girsanov_weight(&env, &zero, &path), 1.0);
    }

    #[test]
    fn local_function_examples() {
        let f = ConductanceField::new(2, 3.0, Law::TwoPoint { p: 1.0 }, 1).unwrap();
        let o = Site::origin(2).unwrap();
        assert_eq!(LocalFunction::first_bond().evaluate(&f, &o), 3.0);
        let c = LocalFunction::Constant { value: 0.7 };
        assert_eq!(c.evaluate(&f, &Site::new(&[5, 9]).unwrap()), 0.7);
        let g = ConductanceField::new(2, 2.0, Law::TwoPoint { p: 0.5 }, 1).unwrap();
        assert!((LocalFunction::first_bond().p_mean(&g) - 1.25).abs() < 1e-15);
        // offset readout agrees with direct bond lookup
        let h = ConductanceField::new(3, 2.0, Law::Uniform, 8).unwrap();
        let fx = LocalFunction::BondReadout {
            offset: vec![1, -2, 0],
            axis: 2,
        };
        let s = Site::new(&[3, 3, 3]).unwrap();
        let b = crate::lattice::Bond::from_base(Site::new(&[4, 1, 3]).unwrap(), 2).unwrap();
        assert_eq!(fx.evaluate(&h, &s), h.conductance_at(&b));
        assert!(fx.bound(3, 2.0) >= fx.evaluate(&h, &s));
    }

    #[test]
    fn path_dump_roundtrip() {
        let f = ConductanceField::new(3, 2.0, Law::Uniform, 3).unwrap();
        let bias = BiasSpec::along_e1(3, 0.1, 2).unwrap();
        let o = Site::origin(3).unwrap();
        let p = run_walk(&f, &bias, &o, 100, &StreamId::new(4, "dump", 1));
        let bytes = p.to_bytes(4);
        assert_eq!(bytes.len(), 132);
        let (q, seed) = WalkPath::from_bytes(&bytes).unwrap();
        assert_eq!(seed, 4);
        assert_eq!(q.steps, p.steps);
        assert!(WalkPath::from_bytes(&bytes[..40]).is_err());
    }
}
