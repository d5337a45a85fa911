//! Hyperplane levels, regeneration times and the coin-trick construction.
//!
//! The exact construction runs on a cylinder world: transverse coordinates
//! live on a torus of side `cross_section` and the walk is reflected at a
//! wall `backstop` levels behind the origin. On that world the exit law of
//! every level is computable by an absorbing-chain solve, which is what the
//! decomposition of the exit law into a coin-selected mixture needs.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::exact::{DirichletSolver, FiniteNetwork};
use crate::lattice::{BiasSpec, ConductanceField, Coords, Environment, Move, Site, MAX_DIM, MAX_MOVES};
use crate::rng::{combine, uniform, unit_f64, StreamId};
use crate::stats::{exp_moment, pooled_autocorrelation};
use crate::walk::{config_hash, LocalFunction, WalkPath, Walker};

/// Hyperplanes H_m = {x : (x - X_0).e1 = m L1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperplaneGrid {
    l1: i64,
}

impl HyperplaneGrid {
    pub fn new(bias: &BiasSpec) -> Result<Self> {
        bias.l1()
            .map(|l1| Self { l1 })
            .ok_or(LabError::NeedsBias("hyperplane grid"))
    }

    pub fn with_spacing(l1: i64) -> Result<Self> {
        if l1 < 4 || l1 % 4 != 0 {
            return Err(invalid("l1", format!("{l1} must be a positive multiple of 4")));
        }
        Ok(Self { l1 })
    }

    pub fn spacing(&self) -> i64 {
        self.l1
    }

    pub fn level_of(&self, offset: i64) -> i64 {
        offset.div_euclid(self.l1)
    }
}

/// First n with (X_n - X_0).e1 = m L1, or None within the horizon.
pub fn hitting_time(path: &WalkPath, grid: &HyperplaneGrid, m: i64) -> Option<usize> {
    let target = m * grid.l1;
    path.e1_offsets().iter().position(|&o| o == target)
}

/// Same for the quarter planes q L1 / 4.
pub fn hitting_time_quarters(path: &WalkPath, grid: &HyperplaneGrid, q: i64) -> Option<usize> {
    let target = q * grid.l1 / 4;
    path.e1_offsets().iter().position(|&o| o == target)
}

/// Lazily evaluated iid Bernoulli(beta) coins; coin i depends only on (seed, i).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoinStream {
    pub beta: f64,
    pub seed: u64,
}

impl CoinStream {
    pub fn new(beta: f64, seed: u64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(invalid("beta", format!("{beta} outside (0, 1]")));
        }
        Ok(Self { beta, seed })
    }

    pub fn coin(&self, i: u64) -> bool {
        unit_f64(combine(self.seed, i)) < self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegenMode {
    ExactCoin,
    ApproximateBacktrack,
}

impl RegenMode {
    pub fn name(&self) -> &'static str {
        match self {
            RegenMode::ExactCoin => "exact-coin",
            RegenMode::ApproximateBacktrack => "approximate-backtrack",
        }
    }
}

/// Bookkeeping of the construction: every attempt S_k with its backtrack
/// time R_k (None on success) and the record level M_k it leaves behind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenerationRecord {
    pub tau: Vec<usize>,
    pub tau_tilde: Vec<usize>,
    /// X_{tau_k}.e1 relative to the start.
    pub levels: Vec<i64>,
    pub s_list: Vec<usize>,
    pub r_list: Vec<Option<usize>>,
    pub m_list: Vec<i64>,
    /// Attempt index (1-based) of the first success.
    pub k_first: Option<usize>,
    pub mode: RegenMode,
}

impl RegenerationRecord {
    fn empty(mode: RegenMode) -> Self {
        Self {
            tau: Vec::new(),
            tau_tilde: Vec::new(),
            levels: Vec::new(),
            s_list: Vec::new(),
            r_list: Vec::new(),
            m_list: Vec::new(),
            k_first: None,
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
enum Check {
    /// Backtracks are searched up to the end of the path; attempts within
    /// `margin` levels of the highest level reached are not decided.
    ToEnd { margin: i64 },
    Lookahead(usize),
}

fn scan(offsets: &[i64], l1: i64, coin: &dyn Fn(u64) -> bool, check: Check, mode: RegenMode) -> RegenerationRecord {
    let mut rec = RegenerationRecord::empty(mode);
    let top = *offsets.iter().max().unwrap_or(&0);
    let mut first_hit = vec![0usize; top.max(0) as usize + 1];
    let mut best = 0i64;
    for (t, &o) in offsets.iter().enumerate() {
        if o > best {
            best = o;
            first_hit[o as usize] = t;
        }
    }
    let max_level = top.max(0) / l1;
    let last = offsets.len() - 1;
    let mut record = 0i64;
    let mut attempts = 0usize;
    loop {
        let mut n = (record + l1 - 1).div_euclid(l1);
        while n < max_level && !coin(n as u64) {
            n += 1;
        }
        if n + 1 > max_level {
            break;
        }
        let s = first_hit[((n + 1) * l1) as usize];
        let end = match check {
            Check::Lookahead(w) => {
                if s + w > last {
                    break;
                }
                s + w
            }
            Check::ToEnd { margin } => {
                if n + 1 + margin > max_level {
                    break;
                }
                last
            }
        };
        let floor = offsets[s] - l1 / 4;
        let mut peak = offsets[s];
        let mut back = None;
        for (t, &o) in offsets.iter().enumerate().take(end + 1).skip(s + 1) {
            peak = peak.max(o);
            if o <= floor {
                back = Some(t);
                break;
            }
        }
        attempts += 1;
        rec.s_list.push(s);
        rec.r_list.push(back);
        match back {
            Some(_) => {
                let levels_up = (peak - offsets[s]) / l1 + 1;
                record = offsets[s] + levels_up * l1;
            }
            None => {
                record = offsets[s];
                rec.tau.push(s);
                rec.tau_tilde.push(first_hit[(n * l1) as usize]);
                rec.levels.push(offsets[s]);
                rec.k_first.get_or_insert(attempts);
            }
        }
        rec.m_list.push(record);
    }
    rec
}

/// Regeneration times with the coin condition dropped: a fresh level counts
/// when the next `lookahead` steps never come back to L1/4 below it.
/// Candidates closer than `lookahead` to the end of the path are discarded.
pub fn detect_approx_regenerations(path: &WalkPath, grid: &HyperplaneGrid, lookahead: usize) -> Result<RegenerationRecord> {
    if (lookahead as i64) < grid.l1 {
        return Err(LabError::LookaheadTooShort {
            lookahead,
            l1: grid.l1,
        });
    }
    if path.len() <= lookahead {
        return Err(LabError::PathTooShort {
            len: path.len(),
            lookahead,
        });
    }
    Ok(scan(
        &path.e1_offsets(),
        grid.l1,
        &|_| true,
        Check::Lookahead(lookahead),
        RegenMode::ApproximateBacktrack,
    ))
}

/// Among regenerations accepted with `lookahead` that have at least
/// another `lookahead` steps of path after the window, how many are undone
/// by a backtrack further on. Returns (checked, invalidated).
pub fn truncation_invalidations(path: &WalkPath, grid: &HyperplaneGrid, lookahead: usize) -> Result<(usize, usize)> {
    let rec = detect_approx_regenerations(path, grid, lookahead)?;
    let offsets = path.e1_offsets();
    let mut suffix_min = offsets.clone();
    for t in (0..suffix_min.len() - 1).rev() {
        suffix_min[t] = suffix_min[t].min(suffix_min[t + 1]);
    }
    let mut checked = 0;
    let mut bad = 0;
    for &t in &rec.tau {
        if t + 2 * lookahead > path.len() {
            break;
        }
        checked += 1;
        if suffix_min[t] <= offsets[t] - grid.l1 / 4 {
            bad += 1;
        }
    }
    Ok((checked, bad))
}

/// Default lookahead 50 / lambda^2, at least L1.
pub fn default_lookahead(bias: &BiasSpec) -> Result<usize> {
    let l1 = bias.l1().ok_or(LabError::NeedsBias("lookahead"))?;
    Ok(((50.0 / (bias.lambda * bias.lambda)).ceil() as usize).max(l1 as usize))
}

/// Per-block statistics between consecutive regenerations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenSummary {
    pub dtau: Vec<f64>,
    pub dx: Vec<f64>,
    pub fsum: Vec<f64>,
    /// (rho, stderr) of dx at lags 1, 2, 3.
    pub autocorr: Vec<(f64, f64)>,
}

impl RegenSummary {
    /// E[exp(c lambda dx)] and E[exp(c lambda^2 dtau)].
    pub fn exp_moments(&self, lambda: f64, c: f64) -> ((f64, f64), (f64, f64)) {
        let x: Vec<f64> = self.dx.iter().map(|d| lambda * d).collect();
        let t: Vec<f64> = self.dtau.iter().map(|d| lambda * lambda * d).collect();
        (exp_moment(&x, c), exp_moment(&t, c))
    }

    pub fn blocks(&self) -> usize {
        self.dtau.len()
    }
}

/// Blocks [tau_k, tau_{k+1}) for k >= 1; the stretch before tau_1 is dropped.
pub fn inter_regen_summary<E: Environment + ?Sized>(
    record: &RegenerationRecord,
    path: &WalkPath,
    env: &E,
    f: Option<&LocalFunction>,
) -> Result<RegenSummary> {
    if record.len() < 3 {
        return Err(LabError::TooFewBlocks {
            found: record.len().saturating_sub(1),
            needed: 2,
        });
    }
    let mut dtau = Vec::new();
    let mut dx = Vec::new();
    for k in 0..record.len() - 1 {
        dtau.push((record.tau[k + 1] - record.tau[k]) as f64);
        dx.push((record.levels[k + 1] - record.levels[k]) as f64);
    }
    let mut fsum = vec![0.0; dtau.len()];
    if let Some(f) = f {
        let mut block = 0;
        let stop = *record.tau.last().unwrap();
        for (i, site) in path.positions().enumerate().take(stop).skip(record.tau[0]) {
            while i >= record.tau[block + 1] {
                block += 1;
            }
            fsum[block] += f.evaluate(env, &site);
        }
    }
    let autocorr = (1..=3)
        .map(|lag| pooled_autocorrelation(std::slice::from_ref(&dx), lag))
        .collect();
    Ok(RegenSummary {
        dtau,
        dx,
        fsum,
        autocorr,
    })
}

/// Conductances of a field seen on a cylinder: transverse coordinates are
/// reduced modulo `cross`, bonds below `wall` along e1 are removed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylinderEnv {
    field: ConductanceField,
    cross: i64,
    wall: i64,
}

impl CylinderEnv {
    pub fn new(field: ConductanceField, cross: usize, wall: i64) -> Result<Self> {
        if cross == 0 {
            return Err(invalid("cross_section", "must be >= 1"));
        }
        if wall > 0 {
            return Err(invalid("wall", "must not lie ahead of the origin"));
        }
        Ok(Self {
            field,
            cross: cross as i64,
            wall,
        })
    }

    pub fn field(&self) -> &ConductanceField {
        &self.field
    }

    pub fn cross_section(&self) -> usize {
        self.cross as usize
    }

    pub fn wall(&self) -> i64 {
        self.wall
    }

    pub fn transverse_count(&self) -> usize {
        (self.cross as usize).pow(self.field.dimension as u32 - 1)
    }

    pub fn transverse_index(&self, x: &Coords) -> usize {
        let mut idx = 0;
        for k in (1..self.field.dimension).rev() {
            idx = idx * self.cross as usize + x[k].rem_euclid(self.cross) as usize;
        }
        idx
    }

    pub fn transverse_coords(&self, mut idx: usize) -> Coords {
        let mut x = [0; MAX_DIM];
        for c in x.iter_mut().take(self.field.dimension).skip(1) {
            *c = (idx % self.cross as usize) as i64;
            idx /= self.cross as usize;
        }
        x
    }
}

impl Environment for CylinderEnv {
    fn dim(&self) -> usize {
        self.field.dimension
    }

    fn kappa(&self) -> f64 {
        self.field.kappa
    }

    #[inline]
    fn conductance_from(&self, x: &Coords, axis: usize) -> f64 {
        if x[0] < self.wall {
            return 0.0;
        }
        let mut y = *x;
        for c in y.iter_mut().take(self.field.dimension).skip(1) {
            *c = c.rem_euclid(self.cross);
        }
        self.field.conductance_from(&y, axis)
    }

    fn fingerprint(&self) -> u64 {
        combine(combine(self.field.fingerprint(), self.cross as u64), self.wall as u64)
    }
}

/// A stretch [lo, hi] of the cylinder as a finite chain; `hi` is absorbing
/// and `lo` is either absorbing or the reflecting wall.
pub struct SlabRegion {
    pub lo: i64,
    pub hi: i64,
    transverse: usize,
    pub net: FiniteNetwork,
}

impl SlabRegion {
    pub fn index(&self, offset: i64, t: usize) -> usize {
        (offset - self.lo) as usize * self.transverse + t
    }
}

/// Finite substrate for the exit-law decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlabProblem {
    env: CylinderEnv,
    bias: BiasSpec,
    l1: i64,
    pub max_states: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuDecomposition {
    /// nu[x][w]: exit law on the next level from transverse start x.
    pub nu: Vec<Vec<f64>>,
    pub mu1: Vec<Vec<f64>>,
    pub mu0: Option<Vec<Vec<f64>>>,
    /// min_w nu[x][w] / mu1[x][w] for each start.
    pub ratio_per_start: Vec<f64>,
    pub c4_hat: f64,
    pub beta_max: f64,
    pub beta: Option<f64>,
}

impl SlabProblem {
    pub fn new(field: ConductanceField, bias: BiasSpec, cross_section: usize, backstop_levels: i64) -> Result<Self> {
        let l1 = bias.l1().ok_or(LabError::NeedsBias("slab problem"))?;
        Self::with_spacing(field, bias, cross_section, backstop_levels, l1)
    }

    pub fn with_spacing(
        field: ConductanceField,
        bias: BiasSpec,
        cross_section: usize,
        backstop_levels: i64,
        l1: i64,
    ) -> Result<Self> {
        HyperplaneGrid::with_spacing(l1)?;
        if bias.dim() != field.dimension {
            return Err(LabError::DimensionMismatch {
                expected: field.dimension,
                got: bias.dim(),
            });
        }
        if backstop_levels < 0 {
            return Err(invalid("backstop", "must be >= 0"));
        }
        Ok(Self {
            env: CylinderEnv::new(field, cross_section, -backstop_levels * l1)?,
            bias,
            l1,
            max_states: 4_000_000,
        })
    }

    pub fn environment(&self) -> &CylinderEnv {
        &self.env
    }

    pub fn bias(&self) -> &BiasSpec {
        &self.bias
    }

    pub fn spacing(&self) -> i64 {
        self.l1
    }

    pub fn grid(&self) -> HyperplaneGrid {
        HyperplaneGrid { l1: self.l1 }
    }

    pub fn transverse_count(&self) -> usize {
        self.env.transverse_count()
    }

    /// Builds the chain on [lo, hi]; `lo` must be the wall unless absorbing.
    pub fn region(&self, lo: i64, hi: i64, absorbing_lo: bool) -> Result<SlabRegion> {
        if !absorbing_lo && lo != self.env.wall {
            return Err(invalid("lo", "a reflecting lower end must sit on the wall"));
        }
        if hi <= lo || lo < self.env.wall {
            return Err(invalid("region", format!("[{lo}, {hi}] is empty or behind the wall")));
        }
        let tcount = self.transverse_count();
        let states = (hi - lo + 1) as usize * tcount;
        if states > self.max_states {
            return Err(LabError::TooLarge {
                states,
                cap: self.max_states,
            });
        }
        let d = self.env.dim();
        let tilt = self.bias.tilt_factors();
        let mut positions = Vec::with_capacity(states);
        let mut rows = Vec::with_capacity(states);
        let mut absorbing = Vec::with_capacity(states);
        let mut w = [0.0; MAX_MOVES];
        for o in lo..=hi {
            for t in 0..tcount {
                let mut x = self.env.transverse_coords(t);
                x[0] = o;
                positions.push(x);
                let absorb = o == hi || (absorbing_lo && o == lo);
                absorbing.push(absorb);
                let mut row = Vec::new();
                if !absorb {
                    self.env.incident(&x, &mut w);
                    for m in 0..2 * d {
                        if w[m] <= 0.0 {
                            continue;
                        }
                        let mv = Move(m);
                        let mut y = x;
                        y[mv.axis()] += mv.sign();
                        let j = (y[0] - lo) as usize * tcount + self.env.transverse_index(&y);
                        row.push((j, w[m] * tilt[m]));
                    }
                }
                rows.push(row);
            }
        }
        Ok(SlabRegion {
            lo,
            hi,
            transverse: tcount,
            net: FiniteNetwork::from_rows(d, positions, rows, absorbing)?,
        })
    }

    /// Exit laws from level n to level n + 1: the full region from the wall
    /// and the harmonic functions h_w(z) = P^z(exit at w).
    fn level_harmonics(&self, n: i64) -> Result<(SlabRegion, Vec<Vec<f64>>)> {
        let hi = (n + 1) * self.l1;
        let region = self.region(self.env.wall, hi, false)?;
        let solver = DirichletSolver::new(&region.net)?;
        let tcount = self.transverse_count();
        let mut h = Vec::with_capacity(tcount);
        for w in 0..tcount {
            let target = region.index(hi, w);
            h.push(solver.solve(|i| if i == target { 1.0 } else { 0.0 })?);
        }
        Ok((region, h))
    }

    /// mu1 for level n: started from x + 3 L1 / 4, exit law on level n + 1
    /// conditioned on not returning to x + L1 / 2.
    fn level_mu1(&self, n: i64) -> Result<Vec<Vec<f64>>> {
        let lo = n * self.l1 + self.l1 / 2;
        let hi = (n + 1) * self.l1;
        let region = self.region(lo, hi, true)?;
        let solver = DirichletSolver::new(&region.net)?;
        let tcount = self.transverse_count();
        let g: Vec<Vec<f64>> = (0..tcount)
            .map(|w| {
                let target = region.index(hi, w);
                solver.solve(|i| if i == target { 1.0 } else { 0.0 })
            })
            .collect::<Result<_>>()?;
        let mid = n * self.l1 + 3 * self.l1 / 4;
        (0..tcount)
            .map(|x| {
                let z = region.index(mid, x);
                let raw: Vec<f64> = g.iter().map(|gw| gw[z].max(0.0)).collect();
                let total: f64 = raw.iter().sum();
                if total <= 0.0 {
                    return Err(LabError::Singular("mu1 has no mass".into()));
                }
                Ok(raw.into_iter().map(|v| v / total).collect())
            })
            .collect()
    }

    /// The decomposition nu = beta mu1 + (1 - beta) mu0 for level n.
    pub fn mu_decomposition(&self, n: i64, beta: Option<f64>) -> Result<MuDecomposition> {
        let (region, h) = self.level_harmonics(n)?;
        decompose(self, &region, &h, n, beta)
    }

    /// P(reach `right_levels` levels ahead before dropping L1/4 below level
    /// n + 1) when started from w ~ `start_law` on level n + 1.
    pub fn no_backtrack_probability(&self, n: i64, start_law: &[f64], right_levels: i64) -> Result<f64> {
        let base = (n + 1) * self.l1;
        let region = self.region(base - self.l1 / 4, base + right_levels * self.l1, true)?;
        let solver = DirichletSolver::new(&region.net)?;
        let u = solver.solve(|i| if region.net.position(i)[0] == region.hi { 1.0 } else { 0.0 })?;
        Ok(start_law
            .iter()
            .enumerate()
            .map(|(w, p)| p * u[region.index(base, w)])
            .sum())
    }
}

fn decompose(problem: &SlabProblem, region: &SlabRegion, h: &[Vec<f64>], n: i64, beta: Option<f64>) -> Result<MuDecomposition> {
    let tcount = problem.transverse_count();
    let base = n * problem.l1;
    let nu: Vec<Vec<f64>> = (0..tcount)
        .map(|x| {
            let z = region.index(base, x);
            h.iter().map(|hw| hw[z].max(0.0)).collect()
        })
        .collect();
    let mu1 = problem.level_mu1(n)?;
    let ratio_per_start: Vec<f64> = nu
        .iter()
        .zip(&mu1)
        .map(|(nx, mx)| {
            nx.iter()
                .zip(mx)
                .filter(|(_, &m)| m > 0.0)
                .map(|(v, m)| v / m)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let c4_hat = ratio_per_start.iter().copied().fold(f64::INFINITY, f64::min);
    let beta_max = c4_hat.min(1.0);
    let mu0 = match beta {
        None => None,
        Some(b) => Some(mixture_remainder(&nu, &mu1, b, beta_max)?),
    };
    Ok(MuDecomposition {
        nu,
        mu1,
        mu0,
        ratio_per_start,
        c4_hat,
        beta_max,
        beta,
    })
}

fn mixture_remainder(nu: &[Vec<f64>], mu1: &[Vec<f64>], beta: f64, beta_max: f64) -> Result<Vec<Vec<f64>>> {
    if !(beta > 0.0 && beta <= beta_max + 1e-12) {
        return Err(LabError::InfeasibleBeta { beta, beta_max });
    }
    if beta >= 1.0 {
        return Ok(nu.to_vec());
    }
    Ok(nu
        .iter()
        .zip(mu1)
        .map(|(nx, mx)| {
            nx.iter()
                .zip(mx)
                .map(|(v, m)| {
                    let r = (v - beta * m) / (1.0 - beta);
                    if r < 0.0 && r >= -1e-14 {
                        0.0
                    } else {
                        r
                    }
                })
                .collect()
        })
        .collect())
}

struct LevelData {
    region: SlabRegion,
    h: Vec<Vec<f64>>,
    decomposition: MuDecomposition,
}

/// Solved levels 0..n of a slab problem, ready for coin-trick sampling.
pub struct SlabChain {
    problem: SlabProblem,
    levels: Vec<LevelData>,
}

impl SlabChain {
    pub fn build(problem: SlabProblem, n_levels: usize) -> Result<Self> {
        let levels = (0..n_levels as i64)
            .map(|n| {
                let (region, h) = problem.level_harmonics(n)?;
                let decomposition = decompose(&problem, &region, &h, n, None)?;
                Ok(LevelData {
                    region,
                    h,
                    decomposition,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { problem, levels })
    }

    pub fn problem(&self) -> &SlabProblem {
        &self.problem
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn decomposition(&self, n: usize) -> &MuDecomposition {
        &self.levels[n].decomposition
    }

    /// Largest beta feasible on every level.
    pub fn beta_max(&self) -> f64 {
        self.levels
            .iter()
            .map(|l| l.decomposition.beta_max)
            .fold(1.0, f64::min)
    }

    /// Draws the exit on level n + 1 from start x: coin, then mu1 or mu0.
    pub fn draw_exit<R: RngCore + ?Sized>(&self, n: usize, x: usize, coin: bool, beta: f64, rng: &mut R) -> usize {
        let dec = &self.levels[n].decomposition;
        let u = uniform(rng);
        if coin {
            sample_index(&dec.mu1[x], u)
        } else {
            let rem: Vec<f64> = dec.nu[x]
                .iter()
                .zip(&dec.mu1[x])
                .map(|(v, m)| ((v - beta * m) / (1.0 - beta)).max(0.0))
                .collect();
            sample_index(&rem, u)
        }
    }
}

fn sample_index(probs: &[f64], u: f64) -> usize {
    let total: f64 = probs.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if target < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Samples a path level by level with the coin trick: the exit on each
/// level is drawn first, then the walk is bridged to it.
pub fn coin_trick_path<R: RngCore + ?Sized>(chain: &SlabChain, coins: &CoinStream, rng: &mut R) -> Result<WalkPath> {
    let beta_max = chain.beta_max();
    if coins.beta > beta_max + 1e-12 {
        return Err(LabError::InfeasibleBeta {
            beta: coins.beta,
            beta_max,
        });
    }
    let problem = &chain.problem;
    let env = &problem.env;
    let d = env.dim();
    let tilt = problem.bias.tilt_factors();
    let mut pos: Coords = [0; MAX_DIM];
    let mut steps = Vec::new();
    let mut w = [0.0; MAX_MOVES];
    let mut weights = [0.0; MAX_MOVES];
    for (n, level) in chain.levels.iter().enumerate() {
        let x = env.transverse_index(&pos);
        let exit = chain.draw_exit(n, x, coins.coin(n as u64), coins.beta, rng);
        let hw = &level.h[exit];
        let hi = level.region.hi;
        while pos[0] < hi {
            env.incident(&pos, &mut w);
            let mut total = 0.0;
            for m in 0..2 * d {
                weights[m] = 0.0;
                if w[m] <= 0.0 {
                    continue;
                }
                let mv = Move(m);
                let mut y = pos;
                y[mv.axis()] += mv.sign();
                let t = env.transverse_index(&y);
                let hy = if y[0] == hi {
                    if t == exit {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    hw[level.region.index(y[0], t)]
                };
                weights[m] = w[m] * tilt[m] * hy.max(0.0);
                total += weights[m];
            }
            if total <= 0.0 {
                return Err(LabError::Singular("bridge reached a dead end".into()));
            }
            let target = uniform(rng) * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (m, wm) in weights.iter().enumerate().take(2 * d) {
                if *wm > 0.0 {
                    acc += wm;
                    chosen = Some(m);
                    if target < acc {
                        break;
                    }
                }
            }
            let m = chosen.expect("positive total weight");
            let mv = Move(m);
            pos[mv.axis()] += mv.sign();
            steps.push(m as u8);
        }
    }
    let start = Site::origin(d)?;
    Ok(WalkPath::from_moves(start, steps, config_hash(env, &problem.bias)))
}

/// [`coin_trick_path`] plus its regeneration record. Attempts within
/// `margin` levels of the last solved level are left undecided.
pub fn coin_trick_sample<R: RngCore + ?Sized>(
    chain: &SlabChain,
    coins: &CoinStream,
    rng: &mut R,
    margin: i64,
) -> Result<(WalkPath, RegenerationRecord)> {
    let path = coin_trick_path(chain, coins, rng)?;
    let l1 = chain.problem.l1;
    let offsets = path.e1_offsets();
    let record = scan(
        &offsets,
        l1,
        &|n| coins.coin(n),
        Check::ToEnd { margin },
        RegenMode::ExactCoin,
    );
    if record.is_empty() {
        return Err(LabError::NoRegeneration);
    }
    Ok((path, record))
}

/// Walks from the origin until |X.e1| reaches `distance`; true when the
/// right side is hit first. Gives up (false) after `max_steps`.
pub fn right_before_left<E: Environment + ?Sized, R: RngCore + ?Sized>(
    env: &E,
    bias: &BiasSpec,
    distance: i64,
    max_steps: usize,
    rng: &mut R,
) -> Result<bool> {
    let start = Site::origin(env.dim())?;
    let mut walker = Walker::new(env, bias, &start);
    for _ in 0..max_steps {
        walker.step(rng);
        let o = walker.position()[0];
        if o >= distance {
            return Ok(true);
        }
        if o <= -distance {
            return Ok(false);
        }
    }
    Ok(false)
}

/// Result of the L0 search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L0Calibration {
    pub l0: u32,
    /// (L0, smallest per-seed estimate of P(T_1 < T_-1)) for each tried L0.
    pub trials: Vec<(u32, f64)>,
}

/// Smallest L0 in 1..=8 for which every one of `seeds` environments gives an
/// empirical P(T_1 < T_-1) of at least 2/3.
pub fn calibrate_l0(field: &ConductanceField, bias: &BiasSpec, seeds: u64, walks: u64, master: u64) -> Result<L0Calibration> {
    if bias.lambda <= 0.0 {
        return Err(LabError::NeedsBias("L0 calibration"));
    }
    let mut trials = Vec::new();
    for l0 in 1..=8u32 {
        let b = bias.with_l0(l0)?;
        let l1 = b.l1().ok_or(LabError::NeedsBias("L0 calibration"))?;
        let cap = (400.0 * l1 as f64 / b.lambda) as usize;
        let mut worst = f64::INFINITY;
        for s in 0..seeds {
            let env = field.with_seed(crate::rng::derive_seed(master, "calibrate-env", s));
            let mut rng = StreamId::new(master, "calibrate-walk", s).rng();
            let mut wins = 0u64;
            for _ in 0..walks {
                if right_before_left(&env, &b, l1, cap, &mut rng)? {
                    wins += 1;
                }
            }
            worst = worst.min(wins as f64 / walks as f64);
        }
        trials.push((l0, worst));
        if worst >= 2.0 / 3.0 {
            return Ok(L0Calibration { l0, trials });
        }
    }
    Ok(L0Calibration { l0: 8, trials })
}
