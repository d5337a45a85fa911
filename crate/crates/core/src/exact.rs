//! Exact solvers on finite conductance networks: exit laws, crossing
//! probabilities, stationary laws of the torus environment chain, Dirichlet
//! energies, Harnack ratios and brute-force path enumeration.

use std::collections::{HashMap, VecDeque};

use crate::error::{invalid, LabError, Result};
use crate::lattice::{BiasSpec, Coords, Environment, Move, PeriodicEnvironment, Site, MAX_MOVES};
use crate::linalg::{dense_solve, BandedMatrix};
use crate::walk::{config_hash, WalkPath};

/// Above this many states the stationary solver switches to power iteration.
pub const DENSE_LIMIT: usize = 5_000;
/// Direct banded elimination is used while n * band^2 stays below this.
const BANDED_WORK_LIMIT: f64 = 4e9;
pub const ENUMERATION_CAP: usize = 6;
const TOL: f64 = 1e-12;

/// A finite Markov chain given by nonnegative directed jump weights; rows are
/// normalized on use. Networks built from conductances are symmetric.
#[derive(Debug, Clone)]
pub struct FiniteNetwork {
    dim: usize,
    positions: Vec<Coords>,
    rows: Vec<Vec<(usize, f64)>>,
    absorbing: Vec<bool>,
    lookup: HashMap<Coords, usize>,
}

impl FiniteNetwork {
    pub fn from_rows(
        dim: usize,
        positions: Vec<Coords>,
        rows: Vec<Vec<(usize, f64)>>,
        absorbing: Vec<bool>,
    ) -> Result<Self> {
        let n = positions.len();
        if rows.len() != n || absorbing.len() != n {
            return Err(invalid("network", "positions, rows and absorbing flags differ in length"));
        }
        for row in &rows {
            for &(j, w) in row {
                if j >= n {
                    return Err(invalid("network", format!("neighbour index {j} out of range")));
                }
                if !(w > 0.0 && w.is_finite()) {
                    return Err(invalid("network", format!("weight {w} must be positive")));
                }
            }
        }
        let lookup = positions.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        Ok(Self {
            dim,
            positions,
            rows,
            absorbing,
            lookup,
        })
    }

    /// Symmetric network from undirected conductances.
    pub fn from_edges(
        dim: usize,
        positions: Vec<Coords>,
        edges: &[(usize, usize, f64)],
        absorbing: Vec<bool>,
    ) -> Result<Self> {
        let mut rows = vec![Vec::new(); positions.len()];
        for &(a, b, c) in edges {
            if a >= rows.len() || b >= rows.len() {
                return Err(invalid("network", "edge endpoint out of range"));
            }
            rows[a].push((b, c));
            if a != b {
                rows[b].push((a, c));
            }
        }
        Self::from_rows(dim, positions, rows, absorbing)
    }

    /// Nearest-neighbour path 0..n with the given conductances between
    /// consecutive nodes, placed on the first axis of Z^2.
    pub fn path(conductances: &[f64], absorbing: Vec<bool>) -> Result<Self> {
        let n = conductances.len() + 1;
        let positions = (0..n)
            .map(|i| {
                let mut c = [0; crate::lattice::MAX_DIM];
                c[0] = i as i64;
                c
            })
            .collect();
        let edges: Vec<_> = conductances
            .iter()
            .enumerate()
            .map(|(i, &c)| (i, i + 1, c))
            .collect();
        Self::from_edges(2, positions, &edges, absorbing)
    }

    /// The box [lo, hi] of Z^d with tilted conductances omega^lambda; nothing
    /// absorbing yet. Sites are ordered with the first axis slowest.
    pub fn lattice_box<E: Environment + ?Sized>(
        env: &E,
        bias: &BiasSpec,
        lo: &[i64],
        hi: &[i64],
    ) -> Result<Self> {
        let d = env.dim();
        if lo.len() != d || hi.len() != d {
            return Err(LabError::DimensionMismatch {
                expected: d,
                got: lo.len(),
            });
        }
        let mut positions = Vec::new();
        let mut cur: Coords = [0; crate::lattice::MAX_DIM];
        cur[..d].copy_from_slice(lo);
        loop {
            positions.push(cur);
            // odometer with the last axis fastest
            let mut axis = d;
            loop {
                if axis == 0 {
                    break;
                }
                axis -= 1;
                if cur[axis] < hi[axis] {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = lo[axis];
                if axis == 0 {
                    axis = usize::MAX;
                    break;
                }
            }
            if axis == usize::MAX {
                break;
            }
        }
        let lookup: HashMap<Coords, usize> = positions.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let ell = bias.ell();
        let mut edges = Vec::new();
        for (i, x) in positions.iter().enumerate() {
            for axis in 0..d {
                let mut y = *x;
                y[axis] += 1;
                if let Some(&j) = lookup.get(&y) {
                    let s: f64 = (0..d).map(|k| (x[k] + y[k]) as f64 * ell[k]).sum();
                    edges.push((i, j, env.conductance_from(x, axis) * (bias.lambda * s).exp()));
                }
            }
        }
        let n = positions.len();
        Self::from_edges(d, positions, &edges, vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn position(&self, i: usize) -> &Coords {
        &self.positions[i]
    }

    pub fn index_of(&self, x: &[i64]) -> Option<usize> {
        let mut c: Coords = [0; crate::lattice::MAX_DIM];
        c[..x.len()].copy_from_slice(x);
        self.lookup.get(&c).copied()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn is_absorbing(&self, i: usize) -> bool {
        self.absorbing[i]
    }

    pub fn set_absorbing(&mut self, pred: impl Fn(&Coords) -> bool) {
        for (flag, p) in self.absorbing.iter_mut().zip(&self.positions) {
            *flag = pred(p);
        }
    }

    pub fn set_absorbing_flags(&mut self, flags: Vec<bool>) {
        assert_eq!(flags.len(), self.len());
        self.absorbing = flags;
    }

    pub fn absorbing_sites(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.absorbing[i]).collect()
    }

    fn row_total(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|e| e.1).sum()
    }

    /// Transient states reachable from `start`, with a check that each can
    /// reach the absorbing set.
    fn reachable_transient(&self, start: usize) -> Result<Vec<usize>> {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut order = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut hits_absorbing = false;
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &(j, _) in &self.rows[i] {
                if self.absorbing[j] {
                    hits_absorbing = true;
                } else if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if !hits_absorbing {
            return Err(LabError::Disconnected(start));
        }
        order.sort_unstable();
        self.check_escapes(&order)?;
        Ok(order)
    }

    fn check_escapes(&self, states: &[usize]) -> Result<()> {
        let n = self.len();
        let mut member = vec![false; n];
        states.iter().for_each(|&i| member[i] = true);
        let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut good = vec![false; n];
        let mut queue = VecDeque::new();
        for &i in states {
            for &(j, _) in &self.rows[i] {
                if self.absorbing[j] {
                    if !good[i] {
                        good[i] = true;
                        queue.push_back(i);
                    }
                } else if member[j] {
                    reverse[j].push(i);
                }
            }
        }
        while let Some(j) = queue.pop_front() {
            for &i in &reverse[j] {
                if !good[i] {
                    good[i] = true;
                    queue.push_back(i);
                }
            }
        }
        match states.iter().find(|&&i| !good[i]) {
            Some(&i) => Err(LabError::Singular(format!(
                "state {i} cannot reach the absorbing set"
            ))),
            None => Ok(()),
        }
    }

    fn bandwidth(&self, states: &[usize], local: &[usize]) -> usize {
        let mut band = 0;
        for (a, &i) in states.iter().enumerate() {
            for &(j, _) in &self.rows[i] {
                if !self.absorbing[j] && local[j] != usize::MAX {
                    band = band.max(a.abs_diff(local[j]));
                }
            }
        }
        band
    }
}

/// Factored I - Q over a set of transient states.
struct TransientSystem {
    states: Vec<usize>,
    local: Vec<usize>,
    kind: SystemKind,
}

enum SystemKind {
    Banded(BandedMatrix),
    Iterative,
}

impl TransientSystem {
    fn build(net: &FiniteNetwork, states: Vec<usize>, transpose: bool) -> Result<Self> {
        let mut local = vec![usize::MAX; net.len()];
        for (a, &i) in states.iter().enumerate() {
            local[i] = a;
        }
        let band = net.bandwidth(&states, &local);
        let n = states.len();
        let work = n as f64 * (band as f64 + 1.0).powi(2);
        if work > BANDED_WORK_LIMIT {
            return Ok(Self {
                states,
                local,
                kind: SystemKind::Iterative,
            });
        }
        let mut m = BandedMatrix::zeros(n, band);
        for (a, &i) in states.iter().enumerate() {
            m.add(a, a, 1.0);
            let total = net.row_total(i);
            for &(j, w) in &net.rows[i] {
                if net.absorbing[j] || local[j] == usize::MAX {
                    continue;
                }
                let b = local[j];
                if transpose {
                    m.add(b, a, -w / total);
                } else {
                    m.add(a, b, -w / total);
                }
            }
        }
        m.factor()?;
        Ok(Self {
            states,
            local,
            kind: SystemKind::Banded(m),
        })
    }

    /// Solves u = Q u + r on the transient states (r indexed locally).
    fn solve_forward(&self, net: &FiniteNetwork, mut r: Vec<f64>) -> Result<Vec<f64>> {
        match &self.kind {
            SystemKind::Banded(m) => {
                m.solve(&mut r);
                Ok(r)
            }
            SystemKind::Iterative => self.gauss_seidel(net, &r),
        }
    }

    fn gauss_seidel(&self, net: &FiniteNetwork, r: &[f64]) -> Result<Vec<f64>> {
        let mut u = r.to_vec();
        for _ in 0..1_000_000 {
            let mut change = 0.0f64;
            for (a, &i) in self.states.iter().enumerate() {
                let total = net.row_total(i);
                let mut s = r[a];
                let mut self_w = 0.0;
                for &(j, w) in &net.rows[i] {
                    if net.absorbing[j] || self.local[j] == usize::MAX {
                        continue;
                    }
                    if j == i {
                        self_w += w / total;
                    } else {
                        s += w / total * u[self.local[j]];
                    }
                }
                let new = s / (1.0 - self_w);
                change = change.max((new - u[a]).abs());
                u[a] = new;
            }
            if change < 1e-15 {
                return Ok(u);
            }
        }
        Err(LabError::Singular("Gauss-Seidel did not converge".into()))
    }
}

/// Exit law of a walk started at `start`, over the network's absorbing sites.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitLaw {
    pub sites: Vec<usize>,
    pub probs: Vec<f64>,
}

impl ExitLaw {
    pub fn prob_of(&self, site: usize) -> f64 {
        self.sites
            .iter()
            .position(|&s| s == site)
            .map_or(0.0, |k| self.probs[k])
    }
}

pub fn hitting_distribution(net: &FiniteNetwork, start: usize) -> Result<ExitLaw> {
    if start >= net.len() {
        return Err(invalid("start", "index out of range"));
    }
    if net.absorbing[start] {
        return Err(LabError::StartAbsorbing(start));
    }
    let states = net.reachable_transient(start)?;
    let sys = TransientSystem::build(net, states, true)?;
    let sites = net.absorbing_sites();
    let mut slot = vec![usize::MAX; net.len()];
    sites.iter().enumerate().for_each(|(k, &s)| slot[s] = k);
    let mut probs = vec![0.0; sites.len()];
    match &sys.kind {
        SystemKind::Banded(m) => {
            // Green's function row: (I - Q)^T g = e_start
            let mut g = vec![0.0; sys.states.len()];
            g[sys.local[start]] = 1.0;
            m.solve(&mut g);
            for (a, &i) in sys.states.iter().enumerate() {
                let total = net.row_total(i);
                for &(j, w) in &net.rows[i] {
                    if net.absorbing[j] {
                        probs[slot[j]] += g[a] * w / total;
                    }
                }
            }
        }
        SystemKind::Iterative => {
            for (k, &target) in sites.iter().enumerate() {
                let r = boundary_rhs(net, &sys, |j| if j == target { 1.0 } else { 0.0 });
                let u = sys.gauss_seidel(net, &r)?;
                probs[k] = u[sys.local[start]];
            }
        }
    }
    for p in probs.iter_mut() {
        if *p < 0.0 && *p > -1e-14 {
            *p = 0.0;
        }
    }
    Ok(ExitLaw { sites, probs })
}

fn boundary_rhs(net: &FiniteNetwork, sys: &TransientSystem, g: impl Fn(usize) -> f64) -> Vec<f64> {
    sys.states
        .iter()
        .map(|&i| {
            let total = net.row_total(i);
            net.rows[i]
                .iter()
                .filter(|(j, _)| net.absorbing[*j])
                .map(|&(j, w)| w / total * g(j))
                .sum()
        })
        .collect()
}

/// Reusable factorization for harmonic extensions of boundary data.
pub struct DirichletSolver<'n> {
    net: &'n FiniteNetwork,
    sys: TransientSystem,
}

impl<'n> DirichletSolver<'n> {
    pub fn new(net: &'n FiniteNetwork) -> Result<Self> {
        let states: Vec<usize> = (0..net.len()).filter(|&i| !net.absorbing[i]).collect();
        if states.is_empty() {
            return Err(invalid("network", "no transient states"));
        }
        net.check_escapes(&states)?;
        let sys = TransientSystem::build(net, states, false)?;
        Ok(Self { net, sys })
    }

    /// u = boundary on absorbing sites, u(x) = sum_y p(x,y) u(y) elsewhere.
    pub fn solve(&self, boundary: impl Fn(usize) -> f64) -> Result<Vec<f64>> {
        let r = boundary_rhs(self.net, &self.sys, &boundary);
        let u_t = self.sys.solve_forward(self.net, r)?;
        let mut u: Vec<f64> = (0..self.net.len())
            .map(|i| if self.net.absorbing[i] { boundary(i) } else { 0.0 })
            .collect();
        for (a, &i) in self.sys.states.iter().enumerate() {
            u[i] = u_t[a];
        }
        Ok(u)
    }
}

/// P(hit `right` before `left`) from `start`.
pub fn crossing_probability(
    net: &FiniteNetwork,
    start: usize,
    right: &[usize],
    left: &[usize],
) -> Result<f64> {
    if right.iter().any(|r| left.contains(r)) {
        return Err(invalid("right/left", "target sets must be disjoint"));
    }
    if let Some(&s) = right.iter().chain(left).find(|&&s| !net.absorbing[s]) {
        return Err(invalid("right/left", format!("site {s} is not absorbing")));
    }
    let law = hitting_distribution(net, start)?;
    Ok(right.iter().map(|&r| law.prob_of(r)).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarySolution {
    pub pi: Vec<f64>,
    pub residual: f64,
}

impl StationarySolution {
    /// sum_x pi(x) g(x).
    pub fn expect(&self, g: impl Fn(usize) -> f64) -> f64 {
        self.pi.iter().enumerate().map(|(i, p)| p * g(i)).sum()
    }
}

/// Stationary law of the environment chain on the n-torus: positions mod n
/// with p(x -> x+e) proportional to omega(x, x+e) exp(lambda ell.e).
pub fn periodic_stationary(env: &PeriodicEnvironment, bias: &BiasSpec) -> Result<StationarySolution> {
    let d = env.dim();
    if bias.dim() != d {
        return Err(LabError::DimensionMismatch {
            expected: d,
            got: bias.dim(),
        });
    }
    let n_states = env.states();
    let tilt = bias.tilt_factors();
    // kernel[x] = list of (target, prob)
    let mut kernel: Vec<[(usize, f64); MAX_MOVES]> = Vec::with_capacity(n_states);
    let mut w = [0.0; MAX_MOVES];
    for i in 0..n_states {
        let x = env.site_coords(i);
        env.incident(&x, &mut w);
        let total: f64 = (0..2 * d).map(|m| w[m] * tilt[m]).sum();
        let mut row = [(0usize, 0.0); MAX_MOVES];
        for (m, slot) in row.iter_mut().enumerate().take(2 * d) {
            let mv = Move(m);
            let mut y = x;
            y[mv.axis()] += mv.sign();
            *slot = (env.site_index(&y), w[m] * tilt[m] / total);
        }
        kernel.push(row);
    }
    let apply = |pi: &[f64]| {
        let mut out = vec![0.0; n_states];
        for (i, row) in kernel.iter().enumerate() {
            for &(j, p) in &row[..2 * d] {
                out[j] += pi[i] * p;
            }
        }
        out
    };
    let pi = if n_states <= DENSE_LIMIT.min(1500) {
        // (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1
        let mut a = vec![0.0; n_states * n_states];
        for (i, row) in kernel.iter().enumerate() {
            for &(j, p) in &row[..2 * d] {
                a[j * n_states + i] += p;
            }
        }
        for i in 0..n_states {
            a[i * n_states + i] -= 1.0;
        }
        for i in 0..n_states {
            a[(n_states - 1) * n_states + i] = 1.0;
        }
        let mut b = vec![0.0; n_states];
        b[n_states - 1] = 1.0;
        dense_solve(a, n_states, b)?
    } else {
        // lazy power iteration; same fixed point, no periodicity
        let mut pi = vec![1.0 / n_states as f64; n_states];
        for _ in 0..10_000_000 {
            let next = apply(&pi);
            let mut delta = 0.0f64;
            for i in 0..n_states {
                let v = 0.5 * (pi[i] + next[i]);
                delta = delta.max((v - pi[i]).abs());
                pi[i] = v;
            }
            if delta < 1e-16 {
                break;
            }
        }
        pi
    };
    let mut pi: Vec<f64> = pi.into_iter().map(|p| if p < 0.0 && p > -1e-14 { 0.0 } else { p }).collect();
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    let next = apply(&pi);
    let residual = pi
        .iter()
        .zip(&next)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if residual > TOL {
        return Err(LabError::Singular(format!("stationary residual {residual:e}")));
    }
    Ok(StationarySolution { pi, residual })
}

/// sum over bonds touching `region` of c(x,y) (h(x) - h(y))^2, with c taken
/// as the average of the two directed weights.
pub fn dirichlet_energy(net: &FiniteNetwork, h: &[f64], region: &[bool]) -> f64 {
    let mut e = 0.0;
    for i in 0..net.len() {
        for &(j, w) in &net.rows[i] {
            if region[i] || region[j] {
                e += 0.5 * w * (h[i] - h[j]).powi(2);
            }
        }
    }
    e
}

pub enum HarnackInput<'a> {
    /// Solution of the elliptic equation.
    Elliptic(&'a [f64]),
    /// u[n][x], a solution of the parabolic equation.
    Parabolic(&'a [Vec<f64>]),
}

fn ball(net: &FiniteNetwork, center: &[i64], radius: f64) -> Vec<usize> {
    (0..net.len())
        .filter(|&i| {
            let p = net.position(i);
            let r2: f64 = center
                .iter()
                .enumerate()
                .map(|(k, &c)| ((p[k] - c) as f64).powi(2))
                .sum();
            r2 <= radius * radius + 1e-9
        })
        .collect()
}

fn equation_residual(net: &FiniteNetwork, x: usize, now: &[f64], next: f64) -> f64 {
    let total = net.row_total(x);
    let avg: f64 = net.rows[x].iter().map(|&(j, w)| w / total * now[j]).sum();
    (next - avg).abs()
}

/// Harnack ratio of a positive solution over the ball B_R(center): max/min
/// in the elliptic case. In the parabolic case, the max over times
/// [R, 2R^2] against the min of u[n] + u[n+1] over n in [3R^2, 4R^2].
pub fn harnack_ratio(net: &FiniteNetwork, h: HarnackInput<'_>, center: &[i64], radius: f64) -> Result<f64> {
    let inner = ball(net, center, radius);
    let outer = ball(net, center, 2.0 * radius);
    if inner.is_empty() {
        return Err(invalid("radius", "ball contains no sites"));
    }
    if outer.iter().any(|&i| net.absorbing[i]) {
        return Err(invalid("radius", "the 2R-ball meets the absorbing boundary"));
    }
    match h {
        HarnackInput::Elliptic(h) => {
            if outer.iter().any(|&i| h[i] <= 0.0) {
                return Err(LabError::NotPositive);
            }
            let residual = outer
                .iter()
                .map(|&x| equation_residual(net, x, h, h[x]))
                .fold(0.0f64, f64::max);
            if residual > 1e-10 {
                return Err(LabError::NotASolution { residual });
            }
            let max = inner.iter().map(|&i| h[i]).fold(f64::MIN, f64::max);
            let min = inner.iter().map(|&i| h[i]).fold(f64::MAX, f64::min);
            Ok(max / min)
        }
        HarnackInput::Parabolic(u) => {
            let r2 = (radius * radius).ceil() as usize;
            let last = 4 * r2 + 1;
            if u.len() <= last {
                return Err(invalid("u", format!("need times 0..={last}")));
            }
            let mut residual = 0.0f64;
            for n in 0..last {
                for &x in &outer {
                    if u[n][x] < 0.0 {
                        return Err(LabError::NotPositive);
                    }
                    residual = residual.max(equation_residual(net, x, &u[n], u[n + 1][x]));
                }
            }
            if residual > 1e-10 {
                return Err(LabError::NotASolution { residual });
            }
            let r = radius.ceil() as usize;
            let mut max = f64::MIN;
            for row in &u[r..=2 * r2] {
                for &x in &inner {
                    max = max.max(row[x]);
                }
            }
            let mut min = f64::MAX;
            for n in 3 * r2..=4 * r2 {
                for &x in &inner {
                    min = min.min(u[n][x] + u[n + 1][x]);
                }
            }
            if min <= 0.0 {
                return Err(LabError::NotPositive);
            }
            Ok(max / min)
        }
    }
}

/// u[n+1](x) = sum_y p(x,y) u[n](y) on transient sites; absorbing sites keep
/// their initial value.
pub fn evolve_caloric(net: &FiniteNetwork, initial: Vec<f64>, steps: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(initial);
    for _ in 0..steps {
        let now = out.last().unwrap();
        let next = (0..net.len())
            .map(|x| {
                if net.absorbing[x] {
                    now[x]
                } else {
                    let total = net.row_total(x);
                    net.rows[x].iter().map(|&(j, w)| w / total * now[j]).sum()
                }
            })
            .collect();
        out.push(next);
    }
    out
}

/// sum over all (2d)^n paths of P_{omega,lambda}(path) * functional(path).
pub fn enumerate_paths_expectation<E: Environment + ?Sized>(
    env: &E,
    bias: &BiasSpec,
    start: &Site,
    n: usize,
    functional: &mut dyn FnMut(&WalkPath) -> f64,
) -> Result<f64> {
    if n > ENUMERATION_CAP {
        return Err(LabError::EnumerationCap {
            n,
            cap: ENUMERATION_CAP,
        });
    }
    let hash = config_hash(env, bias);
    let mut path = WalkPath::from_moves(*start, Vec::with_capacity(n), hash);
    let mut total = 0.0;
    recurse(env, bias, *start, n, 1.0, &mut path, functional, &mut total);
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn recurse<E: Environment + ?Sized>(
    env: &E,
    bias: &BiasSpec,
    at: Site,
    remaining: usize,
    prob: f64,
    path: &mut WalkPath,
    functional: &mut dyn FnMut(&WalkPath) -> f64,
    total: &mut f64,
) {
    if remaining == 0 {
        *total += prob * functional(path);
        return;
    }
    let p = crate::walk::step_distribution(env, bias, &at);
    for (m, pm) in p.iter().enumerate() {
        path.steps.push(m as u8);
        recurse(env, bias, at.step(m), remaining - 1, prob * pm, path, functional, total);
        path.steps.pop();
    }
}
