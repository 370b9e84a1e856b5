//! Population network games.
//!
//! A game is a graph whose vertices are populations of agents and whose edges
//! carry a pair of payoff matrices `(A_ij, A_ji)` for the two-player subgame
//! played between neighbouring populations. `A_ij` has one row per strategy
//! of population `i` and one column per strategy of population `j`.
//!
//! Populations may carry a fixed mixed strategy; such populations do not learn
//! and every solver substitutes the fixed strategy for their mean play.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SfpError};

/// Tolerance on `sum(x) = 1` for anything that claims to live on a simplex.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Largest number of pure profiles the zero-sum test will enumerate.
pub const MAX_PURE_PROFILES: u128 = 1 << 20;

const ZERO_SUM_TOL: f64 = 1e-9;
const COORDINATION_TOL: f64 = 1e-12;

pub(crate) fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(SfpError::NotOnSimplex(format!("{what}: empty vector")));
    }
    if let Some(x) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(SfpError::NotOnSimplex(format!("{what}: entry {x} is negative or non-finite")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(SfpError::NotOnSimplex(format!("{what}: entries sum to {sum}")));
    }
    Ok(())
}

/// A probability vector over one population's pure strategies.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct MixedStrategy(Vec<f64>);

impl MixedStrategy {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        check_simplex(&probabilities, "mixed strategy")?;
        Ok(Self(probabilities))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn pure(n: usize, k: usize) -> Self {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        Self(v)
    }

    pub(crate) fn from_vec_unchecked(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for MixedStrategy {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

/// Offsets of each population's block inside a flat per-coordinate vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    offsets: Vec<usize>,
}

impl Layout {
    pub fn new(counts: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(counts.len() + 1);
        offsets.push(0);
        for c in counts {
            offsets.push(offsets.last().unwrap() + c);
        }
        Self { offsets }
    }

    pub fn populations(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn count(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }
}

/// One probability vector per population, stored contiguously.
///
/// Used both for beliefs (the pooled system-wide belief about each population)
/// and for strategy profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefProfile {
    layout: Layout,
    data: Vec<f64>,
}

pub type StrategyProfile = BeliefProfile;

impl BeliefProfile {
    pub fn new(parts: Vec<Vec<f64>>) -> Result<Self> {
        for (i, p) in parts.iter().enumerate() {
            check_simplex(p, &format!("population {i}"))?;
        }
        let counts: Vec<usize> = parts.iter().map(Vec::len).collect();
        Ok(Self {
            layout: Layout::new(&counts),
            data: parts.into_iter().flatten().collect(),
        })
    }

    pub fn from_strategies(parts: &[MixedStrategy]) -> Self {
        let counts: Vec<usize> = parts.iter().map(MixedStrategy::len).collect();
        Self {
            layout: Layout::new(&counts),
            data: parts.iter().flat_map(|p| p.0.iter().copied()).collect(),
        }
    }

    pub fn from_flat(layout: Layout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.dim() {
            return Err(SfpError::ShapeMismatch(format!(
                "flat profile has {} entries, layout needs {}",
                data.len(),
                layout.dim()
            )));
        }
        for i in 0..layout.populations() {
            check_simplex(&data[layout.range(i)], &format!("population {i}"))?;
        }
        Ok(Self { layout, data })
    }

    pub(crate) fn from_flat_unchecked(layout: Layout, data: Vec<f64>) -> Self {
        debug_assert_eq!(layout.dim(), data.len());
        Self { layout, data }
    }

    pub fn uniform(counts: &[usize]) -> Self {
        let layout = Layout::new(counts);
        let data = counts.iter().flat_map(|&c| std::iter::repeat_n(1.0 / c as f64, c)).collect();
        Self { layout, data }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn population(&self, i: usize) -> &[f64] {
        &self.data[self.layout.range(i)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn populations(&self) -> usize {
        self.layout.populations()
    }

    pub fn strategy(&self, i: usize) -> MixedStrategy {
        MixedStrategy(self.population(i).to_vec())
    }

    /// Largest absolute coordinate difference to another profile of the same shape.
    pub fn max_abs_diff(&self, other: &BeliefProfile) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SfpError::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(SfpError::InvalidGame("payoff entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if r == 0 || c == 0 {
            return Err(SfpError::ShapeMismatch("payoff matrix must be non-empty".into()));
        }
        if rows.iter().any(|row| row.len() != c) {
            return Err(SfpError::ShapeMismatch("payoff matrix rows have different lengths".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.get(r, c));
            }
        }
        Matrix { rows: self.cols, cols: self.rows, data }
    }

    /// `out += self * v`
    #[inline]
    pub fn mul_vec_add(&self, v: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `x^T self y`
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(r, xr)| xr * self.row(r).iter().zip(y).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }
}

/// A population of agents sharing a strategy set.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub id: String,
    pub strategies: usize,
    pub labels: Option<Vec<String>>,
    /// Mixed strategy of a non-learning population.
    pub fixed: Option<MixedStrategy>,
}

impl Population {
    pub fn learning(id: impl Into<String>, strategies: usize) -> Self {
        Self { id: id.into(), strategies, labels: None, fixed: None }
    }

    pub fn with_labels(mut self, labels: &[&str]) -> Self {
        self.labels = Some(labels.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn with_fixed(mut self, fixed: MixedStrategy) -> Self {
        self.fixed = Some(fixed);
        self
    }
}

/// Undirected edge carrying `A_from,to` and `A_to,from`.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub payoff_from_to: Matrix,
    pub payoff_to_from: Matrix,
}

/// A neighbour of some population `i` together with `A_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub population: usize,
    pub payoff: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationNetworkGame {
    populations: Vec<Population>,
    edges: Vec<Edge>,
    weights: Vec<f64>,
    neighbors: Vec<Vec<Neighbor>>,
    layout: Layout,
}

/// Outcome of the weighted zero-sum test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroSumReport {
    pub holds: bool,
    /// Largest |sum_i w_i r_i| over all pure profiles.
    pub max_residual: f64,
}

impl PopulationNetworkGame {
    pub fn new(populations: Vec<Population>, edges: Vec<Edge>, weights: Vec<f64>) -> Result<Self> {
        let n = populations.len();
        if n == 0 {
            return Err(SfpError::InvalidGame("a game needs at least one population".into()));
        }
        if weights.len() != n {
            return Err(SfpError::InvalidGame(format!(
                "{} weights given for {n} populations",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(SfpError::InvalidGame(format!("weight {w} is not positive")));
        }
        let mut seen_ids = HashMap::new();
        for (k, p) in populations.iter().enumerate() {
            if p.strategies == 0 {
                return Err(SfpError::InvalidGame(format!("population {} has no strategies", p.id)));
            }
            if let Some(labels) = &p.labels {
                if labels.len() != p.strategies {
                    return Err(SfpError::InvalidGame(format!(
                        "population {} has {} labels for {} strategies",
                        p.id,
                        labels.len(),
                        p.strategies
                    )));
                }
            }
            if let Some(f) = &p.fixed {
                if f.len() != p.strategies {
                    return Err(SfpError::ShapeMismatch(format!(
                        "fixed strategy of population {} has length {}",
                        p.id,
                        f.len()
                    )));
                }
                check_simplex(f.probabilities(), &format!("fixed strategy of population {}", p.id))?;
            }
            if seen_ids.insert(p.id.clone(), k).is_some() {
                return Err(SfpError::InvalidGame(format!("duplicate population id {}", p.id)));
            }
        }

        let mut neighbors: Vec<Vec<Neighbor>> = vec![Vec::new(); n];
        let mut pairs = std::collections::HashSet::new();
        for e in &edges {
            if e.from >= n || e.to >= n {
                return Err(SfpError::InvalidGame(format!(
                    "edge ({}, {}) references a missing population",
                    e.from, e.to
                )));
            }
            if e.from == e.to {
                return Err(SfpError::InvalidGame(format!("self-loop at population {}", e.from)));
            }
            if !pairs.insert((e.from.min(e.to), e.from.max(e.to))) {
                return Err(SfpError::InvalidGame(format!(
                    "more than one edge between populations {} and {}",
                    e.from, e.to
                )));
            }
            let (si, sj) = (populations[e.from].strategies, populations[e.to].strategies);
            if e.payoff_from_to.rows() != si || e.payoff_from_to.cols() != sj {
                return Err(SfpError::ShapeMismatch(format!(
                    "A_{}{} is {}x{}, expected {si}x{sj}",
                    e.from,
                    e.to,
                    e.payoff_from_to.rows(),
                    e.payoff_from_to.cols()
                )));
            }
            if e.payoff_to_from.rows() != sj || e.payoff_to_from.cols() != si {
                return Err(SfpError::ShapeMismatch(format!(
                    "A_{}{} is {}x{}, expected {sj}x{si}",
                    e.to,
                    e.from,
                    e.payoff_to_from.rows(),
                    e.payoff_to_from.cols()
                )));
            }
            neighbors[e.from].push(Neighbor { population: e.to, payoff: e.payoff_from_to.clone() });
            neighbors[e.to].push(Neighbor { population: e.from, payoff: e.payoff_to_from.clone() });
        }
        for nb in &mut neighbors {
            nb.sort_by_key(|x| x.population);
        }
        let counts: Vec<usize> = populations.iter().map(|p| p.strategies).collect();
        Ok(Self { populations, edges, weights, neighbors, layout: Layout::new(&counts) })
    }

    pub fn populations(&self) -> &[Population] {
        &self.populations
    }

    pub fn population_count(&self) -> usize {
        self.populations.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn strategy_counts(&self) -> Vec<usize> {
        self.populations.iter().map(|p| p.strategies).collect()
    }

    pub fn strategies(&self, i: usize) -> usize {
        self.populations[i].strategies
    }

    /// Neighbours of `i` in increasing index order, each with `A_ij`.
    pub fn neighbors(&self, i: usize) -> &[Neighbor] {
        &self.neighbors[i]
    }

    pub fn fixed_strategy(&self, i: usize) -> Option<&MixedStrategy> {
        self.populations[i].fixed.as_ref()
    }

    pub fn is_static(&self, i: usize) -> bool {
        self.populations[i].fixed.is_some()
    }

    pub fn learning_populations(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.populations.len()).filter(|&i| !self.is_static(i))
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.populations.iter().position(|p| p.id == id)
    }

    pub(crate) fn check_population(&self, i: usize) -> Result<()> {
        if i >= self.populations.len() {
            Err(SfpError::UnknownPopulation(i))
        } else {
            Ok(())
        }
    }

    pub(crate) fn check_profile(&self, profile: &BeliefProfile) -> Result<()> {
        if profile.layout() != &self.layout {
            return Err(SfpError::ShapeMismatch(format!(
                "profile covers {} populations / {} coordinates, game has {} / {}",
                profile.populations(),
                profile.layout().dim(),
                self.populations.len(),
                self.layout.dim()
            )));
        }
        Ok(())
    }

    /// Uniform beliefs with static populations pinned to their fixed strategy.
    pub fn default_profile(&self) -> BeliefProfile {
        let mut data = BeliefProfile::uniform(&self.strategy_counts()).into_flat();
        self.pin_static(&mut data);
        BeliefProfile::from_flat_unchecked(self.layout.clone(), data)
    }

    /// Overwrite the blocks of static populations with their fixed strategy.
    pub fn pin_static(&self, flat: &mut [f64]) {
        for (i, p) in self.populations.iter().enumerate() {
            if let Some(f) = &p.fixed {
                flat[self.layout.range(i)].copy_from_slice(f.probabilities());
            }
        }
    }

    /// Expected payoff `r_i(x) = sum_j x_i^T A_ij x_j`.
    pub fn expected_payoff(&self, i: usize, profile: &StrategyProfile) -> Result<f64> {
        self.check_population(i)?;
        self.check_profile(profile)?;
        let xi = profile.population(i);
        Ok(self.neighbors[i]
            .iter()
            .map(|nb| nb.payoff.bilinear(xi, profile.population(nb.population)))
            .sum())
    }

    /// Exact weighted zero-sum decision by enumerating every pure profile.
    ///
    /// The weighted payoff sum is multilinear in the mixed strategies, so it
    /// vanishes on the product of simplices iff it vanishes at every vertex.
    pub fn is_weighted_zero_sum(&self, weights: &[f64]) -> Result<ZeroSumReport> {
        if weights.len() != self.populations.len() {
            return Err(SfpError::InvalidParameter(format!(
                "{} weights for {} populations",
                weights.len(),
                self.populations.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(SfpError::InvalidParameter(format!("weight {w} is not positive")));
        }
        let counts = self.strategy_counts();
        let total: u128 = counts.iter().map(|&c| c as u128).product();
        if total > MAX_PURE_PROFILES {
            return Err(SfpError::EnumerationLimit(total));
        }
        let mut pure = vec![0usize; counts.len()];
        let mut max_residual = 0.0f64;
        loop {
            let value: f64 = self
                .edges
                .iter()
                .map(|e| {
                    weights[e.from] * e.payoff_from_to.get(pure[e.from], pure[e.to])
                        + weights[e.to] * e.payoff_to_from.get(pure[e.to], pure[e.from])
                })
                .sum();
            max_residual = max_residual.max(value.abs());
            // mixed-radix increment
            let mut k = 0;
            loop {
                if k == pure.len() {
                    return Ok(ZeroSumReport { holds: max_residual <= ZERO_SUM_TOL, max_residual });
                }
                pure[k] += 1;
                if pure[k] < counts[k] {
                    break;
                }
                pure[k] = 0;
                k += 1;
            }
        }
    }

    /// Strict coordination test: `A_ij = A_ji^T` on every edge.
    pub fn is_exact_coordination(&self) -> bool {
        self.edges.iter().all(|e| {
            let t = e.payoff_to_from.transpose();
            e.payoff_from_to.data.iter().zip(&t.data).all(|(a, b)| (a - b).abs() <= COORDINATION_TOL)
        })
    }

    /// Coordination test up to payoff shifts that only depend on the opponent's
    /// strategy.
    ///
    /// Adding `1 c^T` to `A_ij` changes every utility of population `i` by the
    /// same amount, so logit responses are unchanged. An edge is coordination in
    /// this sense iff `A_ij - A_ji^T` is additively separable, i.e.
    /// `D[s,t] - D[0,t] - D[s,0] + D[0,0] = 0`. Symmetric bimatrix games such as
    /// the stag hunt fall in this class; exact coordination games trivially do.
    pub fn is_coordination(&self) -> bool {
        self.edges.iter().all(|e| {
            let d = |s: usize, t: usize| e.payoff_from_to.get(s, t) - e.payoff_to_from.get(t, s);
            let (rows, cols) = (e.payoff_from_to.rows(), e.payoff_from_to.cols());
            (0..rows).all(|s| {
                (0..cols).all(|t| (d(s, t) - d(0, t) - d(s, 0) + d(0, 0)).abs() <= COORDINATION_TOL)
            })
        })
    }

    /// Common-payoff matrices `B_ij` with `B_ij = B_ji^T`, obtained from `A_ij`
    /// by subtracting an opponent-only shift. Returns `None` unless
    /// [`is_coordination`](Self::is_coordination) holds. For exact coordination
    /// games `B_ij = A_ij`.
    pub fn coordination_payoffs(&self) -> Option<Vec<Vec<Neighbor>>> {
        if !self.is_coordination() {
            return None;
        }
        let mut out: Vec<Vec<Neighbor>> = vec![Vec::new(); self.populations.len()];
        for e in &self.edges {
            let (rows, cols) = (e.payoff_from_to.rows(), e.payoff_from_to.cols());
            let d = |s: usize, t: usize| e.payoff_from_to.get(s, t) - e.payoff_to_from.get(t, s);
            // D[s,t] = r[s] + k[t] with r[s] = D[s,0], k[t] = D[0,t] - D[0,0]
            let k: Vec<f64> = (0..cols).map(|t| d(0, t) - d(0, 0)).collect();
            let r: Vec<f64> = (0..rows).map(|s| d(s, 0)).collect();
            let mut b_from = Vec::with_capacity(rows * cols);
            for s in 0..rows {
                for (t, kt) in k.iter().enumerate() {
                    b_from.push(e.payoff_from_to.get(s, t) - kt);
                }
            }
            let mut b_to = Vec::with_capacity(rows * cols);
            for t in 0..cols {
                for (s, rs) in r.iter().enumerate() {
                    b_to.push(e.payoff_to_from.get(t, s) + rs);
                }
            }
            out[e.from].push(Neighbor {
                population: e.to,
                payoff: Matrix { rows, cols, data: b_from },
            });
            out[e.to].push(Neighbor {
                population: e.from,
                payoff: Matrix { rows: cols, cols: rows, data: b_to },
            });
        }
        for nb in &mut out {
            nb.sort_by_key(|x| x.population);
        }
        Some(out)
    }

    /// True iff every connected component of the interaction graph is a star.
    /// Isolated vertices and isolated edges count as stars.
    pub fn is_star_forest(&self) -> bool {
        let n = self.populations.len();
        let mut seen = vec![false; n];
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut component = vec![start];
            seen[start] = true;
            let mut k = 0;
            while k < component.len() {
                let v = component[k];
                for nb in &self.neighbors[v] {
                    if !seen[nb.population] {
                        seen[nb.population] = true;
                        component.push(nb.population);
                    }
                }
                k += 1;
            }
            let size = component.len();
            if size <= 2 {
                continue;
            }
            let centers = component.iter().filter(|&&v| self.neighbors[v].len() == size - 1).count();
            let leaves = component.iter().filter(|&&v| self.neighbors[v].len() == 1).count();
            if centers != 1 || leaves != size - 1 {
                return false;
            }
        }
        true
    }

    /// Star centres, one per component with at least one edge. For a component
    /// made of a single edge the lower index is used.
    pub fn star_centers(&self) -> Option<Vec<usize>> {
        if !self.is_star_forest() {
            return None;
        }
        let n = self.populations.len();
        let mut covered = vec![false; n];
        let mut centers = Vec::new();
        // centres of components with >= 3 vertices first
        for v in 0..n {
            if self.neighbors[v].len() >= 2 {
                centers.push(v);
                covered[v] = true;
                for nb in &self.neighbors[v] {
                    covered[nb.population] = true;
                }
            }
        }
        for v in 0..n {
            if !covered[v] && self.neighbors[v].len() == 1 {
                centers.push(v);
                covered[v] = true;
                covered[self.neighbors[v][0].population] = true;
            }
        }
        centers.sort_unstable();
        Some(centers)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: GameSpec = serde_json::from_str(s)?;
        spec.into_game()
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&GameSpec::from_game(self)).expect("game spec serializes")
    }
}

impl fmt::Display for PopulationNetworkGame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "population network game: {} populations, {} edges",
            self.populations.len(),
            self.edges.len()
        )
    }
}

/// The two-population stag hunt.
///
/// Both populations choose between H and S; the bimatrix is
/// `(H,H)=(1,1)`, `(H,S)=(2,0)`, `(S,H)=(0,2)`, `(S,S)=(4,4)`. In row-player
/// form both `A_12` and `A_21` equal `[[1,2],[0,4]]` (rows: own H,S).
pub fn stag_hunt() -> PopulationNetworkGame {
    let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 4.0]]).unwrap();
    PopulationNetworkGame::new(
        vec![
            Population::learning("1", 2).with_labels(&["H", "S"]),
            Population::learning("2", 2).with_labels(&["H", "S"]),
        ],
        vec![Edge { from: 0, to: 1, payoff_from_to: a.clone(), payoff_to_from: a }],
        vec![1.0, 1.0],
    )
    .unwrap()
}

/// Five populations on a line. Populations 1 and 5 do not learn and play pure
/// H and pure T. Everyone gains +1 for matching the next population and for
/// mismatching the previous one (-1 otherwise).
pub fn asymmetric_matching_pennies() -> PopulationNetworkGame {
    let m = Matrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
    let neg_m = Matrix::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
    let mut pops: Vec<Population> =
        (1..=5).map(|k| Population::learning(k.to_string(), 2).with_labels(&["H", "T"])).collect();
    pops[0].fixed = Some(MixedStrategy::pure(2, 0));
    pops[4].fixed = Some(MixedStrategy::pure(2, 1));
    let edges = (0..4)
        .map(|i| Edge { from: i, to: i + 1, payoff_from_to: m.clone(), payoff_to_from: neg_m.clone() })
        .collect();
    PopulationNetworkGame::new(pops, edges, vec![1.0; 5]).unwrap()
}

// ---------------------------------------------------------------------------
// JSON game-spec file

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
enum IdRepr {
    Num(u64),
    Str(String),
}

impl IdRepr {
    fn into_string(self) -> String {
        match self {
            IdRepr::Num(n) => n.to_string(),
            IdRepr::Str(s) => s,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum StrategiesRepr {
    Count(usize),
    Labels(Vec<String>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PopulationSpec {
    id: IdRepr,
    strategies: StrategiesRepr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fixed: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeSpec {
    from: IdRepr,
    to: IdRepr,
    payoff_from_to: Vec<Vec<f64>>,
    payoff_to_from: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GameSpec {
    populations: Vec<PopulationSpec>,
    #[serde(default)]
    edges: Vec<EdgeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

impl GameSpec {
    fn into_game(self) -> Result<PopulationNetworkGame> {
        let mut pops = Vec::with_capacity(self.populations.len());
        for p in self.populations {
            let (strategies, labels) = match p.strategies {
                StrategiesRepr::Count(c) => (c, None),
                StrategiesRepr::Labels(l) => (l.len(), Some(l)),
            };
            let fixed = match p.fixed {
                Some(v) => Some(MixedStrategy::new(v)?),
                None => None,
            };
            pops.push(Population { id: p.id.into_string(), strategies, labels, fixed });
        }
        let index: HashMap<String, usize> =
            pops.iter().enumerate().map(|(k, p)| (p.id.clone(), k)).collect();
        let lookup = |id: IdRepr| -> Result<usize> {
            let s = id.into_string();
            index.get(&s).copied().ok_or_else(|| SfpError::InvalidGame(format!("edge references unknown population {s}")))
        };
        let mut edges = Vec::with_capacity(self.edges.len());
        for e in self.edges {
            edges.push(Edge {
                from: lookup(e.from)?,
                to: lookup(e.to)?,
                payoff_from_to: Matrix::from_rows(&e.payoff_from_to)?,
                payoff_to_from: Matrix::from_rows(&e.payoff_to_from)?,
            });
        }
        let n = pops.len();
        PopulationNetworkGame::new(pops, edges, self.weights.unwrap_or_else(|| vec![1.0; n]))
    }

    fn from_game(g: &PopulationNetworkGame) -> Self {
        GameSpec {
            populations: g
                .populations
                .iter()
                .map(|p| PopulationSpec {
                    id: IdRepr::Str(p.id.clone()),
                    strategies: match &p.labels {
                        Some(l) => StrategiesRepr::Labels(l.clone()),
                        None => StrategiesRepr::Count(p.strategies),
                    },
                    fixed: p.fixed.as_ref().map(|f| f.probabilities().to_vec()),
                })
                .collect(),
            edges: g
                .edges
                .iter()
                .map(|e| EdgeSpec {
                    from: IdRepr::Str(g.populations[e.from].id.clone()),
                    to: IdRepr::Str(g.populations[e.to].id.clone()),
                    payoff_from_to: e.payoff_from_to.to_rows(),
                    payoff_to_from: e.payoff_to_from.to_rows(),
                })
                .collect(),
            weights: Some(g.weights.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_pop(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PopulationNetworkGame {
        PopulationNetworkGame::new(
            vec![Population::learning("a", a.len()), Population::learning("b", b.len())],
            vec![Edge {
                from: 0,
                to: 1,
                payoff_from_to: Matrix::from_rows(&a).unwrap(),
                payoff_to_from: Matrix::from_rows(&b).unwrap(),
            }],
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    fn star(leaves: usize) -> PopulationNetworkGame {
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let pops = (0..=leaves).map(|k| Population::learning(k.to_string(), 2)).collect();
        let edges = (1..=leaves)
            .map(|l| Edge { from: 0, to: l, payoff_from_to: m.clone(), payoff_to_from: m.clone() })
            .collect();
        PopulationNetworkGame::new(pops, edges, vec![1.0; leaves + 1]).unwrap()
    }

    #[test]
    fn stag_hunt_payoffs() {
        let g = stag_hunt();
        let ss = BeliefProfile::new(vec![vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(g.expected_payoff(0, &ss).unwrap(), 4.0);
        assert_eq!(g.expected_payoff(1, &ss).unwrap(), 4.0);
        let p = BeliefProfile::new(vec![vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert_eq!(g.expected_payoff(0, &p).unwrap(), 1.5);
        // (H,S): population 1 earns 2, population 2 earns 0
        let hs = BeliefProfile::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(g.expected_payoff(0, &hs).unwrap(), 2.0);
        assert_eq!(g.expected_payoff(1, &hs).unwrap(), 0.0);
    }

    #[test]
    fn isolated_population_earns_nothing() {
        let g = PopulationNetworkGame::new(vec![Population::learning("x", 3)], vec![], vec![1.0]).unwrap();
        let p = BeliefProfile::uniform(&[3]);
        assert_eq!(g.expected_payoff(0, &p).unwrap(), 0.0);
        assert!(g.is_coordination());
        assert!(g.is_exact_coordination());
        assert!(g.is_star_forest());
    }

    #[test]
    fn payoff_errors() {
        let g = stag_hunt();
        let p = BeliefProfile::uniform(&[2, 2]);
        assert!(matches!(g.expected_payoff(5, &p), Err(SfpError::UnknownPopulation(5))));
        let wrong = BeliefProfile::uniform(&[2, 3]);
        assert!(matches!(g.expected_payoff(0, &wrong), Err(SfpError::ShapeMismatch(_))));
    }

    #[test]
    fn zero_sum_classification() {
        let mp = asymmetric_matching_pennies();
        let r = mp.is_weighted_zero_sum(&[1.0; 5]).unwrap();
        assert!(r.holds);
        assert_eq!(r.max_residual, 0.0);

        let m = vec![vec![3.0, -1.0, 2.0], vec![0.5, 0.0, -4.0]];
        let mt_neg: Vec<Vec<f64>> = (0..3).map(|c| m.iter().map(|row| -row[c]).collect()).collect();
        assert!(two_pop(m, mt_neg).is_weighted_zero_sum(&[1.0, 1.0]).unwrap().holds);

        let sh = stag_hunt().is_weighted_zero_sum(&[1.0, 1.0]).unwrap();
        assert!(!sh.holds);
        assert!(sh.max_residual >= 8.0);

        assert!(matches!(mp.is_weighted_zero_sum(&[1.0, 1.0, 0.0, 1.0, 1.0]), Err(SfpError::InvalidParameter(_))));
    }

    #[test]
    fn zero_sum_enumeration_is_capped() {
        let pops = (0..21).map(|k| Population::learning(k.to_string(), 2)).collect();
        let g = PopulationNetworkGame::new(pops, vec![], vec![1.0; 21]).unwrap();
        assert!(matches!(g.is_weighted_zero_sum(&[1.0; 21]), Err(SfpError::EnumerationLimit(_))));
    }

    #[test]
    fn coordination_classification() {
        let sh = stag_hunt();
        assert!(sh.is_coordination());
        assert!(!sh.is_exact_coordination());
        assert!(!asymmetric_matching_pennies().is_coordination());
        let exact = two_pop(vec![vec![1.0, 2.0], vec![0.0, 4.0]], vec![vec![1.0, 0.0], vec![2.0, 4.0]]);
        assert!(exact.is_exact_coordination());
        assert!(exact.is_coordination());
    }

    #[test]
    fn normalized_payoffs_are_common_interest() {
        let sh = stag_hunt();
        let b = sh.coordination_payoffs().unwrap();
        assert_eq!(b[0][0].payoff, b[1][0].payoff.transpose());
        assert_eq!(b[0][0].payoff.to_rows(), vec![vec![1.0, 0.0], vec![0.0, 2.0]]);
        // exact coordination games are left untouched
        let exact = two_pop(vec![vec![1.0, 2.0], vec![0.0, 4.0]], vec![vec![1.0, 0.0], vec![2.0, 4.0]]);
        let be = exact.coordination_payoffs().unwrap();
        assert_eq!(be[0][0].payoff, exact.neighbors(0)[0].payoff);
        assert_eq!(be[1][0].payoff, exact.neighbors(1)[0].payoff);
        assert!(asymmetric_matching_pennies().coordination_payoffs().is_none());
    }

    #[test]
    fn star_forests() {
        assert!(stag_hunt().is_star_forest());
        assert!(!asymmetric_matching_pennies().is_star_forest());
        let s = star(3);
        assert!(s.is_star_forest());
        assert_eq!(s.star_centers().unwrap(), vec![0]);
        assert_eq!(stag_hunt().star_centers().unwrap(), vec![0]);
    }

    #[test]
    fn matching_pennies_structure() {
        let g = asymmetric_matching_pennies();
        assert_eq!(g.edges().len(), 4);
        assert_eq!(g.fixed_strategy(0).unwrap().probabilities(), &[1.0, 0.0]);
        assert_eq!(g.fixed_strategy(4).unwrap().probabilities(), &[0.0, 1.0]);
        assert_eq!(g.learning_populations().collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn validation_rejects_bad_games() {
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let pops = || vec![Population::learning("a", 2), Population::learning("b", 2)];
        let e = |f, t| Edge { from: f, to: t, payoff_from_to: m.clone(), payoff_to_from: m.clone() };
        assert!(PopulationNetworkGame::new(pops(), vec![e(0, 0)], vec![1.0, 1.0]).is_err());
        assert!(PopulationNetworkGame::new(pops(), vec![e(0, 2)], vec![1.0, 1.0]).is_err());
        assert!(PopulationNetworkGame::new(pops(), vec![e(0, 1), e(1, 0)], vec![1.0, 1.0]).is_err());
        assert!(PopulationNetworkGame::new(pops(), vec![e(0, 1)], vec![1.0, -1.0]).is_err());
        let wide = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let bad = Edge { from: 0, to: 1, payoff_from_to: wide, payoff_to_from: m.clone() };
        assert!(matches!(
            PopulationNetworkGame::new(pops(), vec![bad], vec![1.0, 1.0]),
            Err(SfpError::ShapeMismatch(_))
        ));
        assert!(MixedStrategy::new(vec![0.5, 0.5 + 1e-9]).is_err());
        assert!(MixedStrategy::new(vec![-0.1, 1.1]).is_err());
        assert!(MixedStrategy::new(vec![0.5, 0.5 + 1e-14]).is_ok());
    }

    #[test]
    fn json_parsing() {
        let text = r#"{
            "populations": [
                {"id": 1, "strategies": ["H", "T"], "fixed": [1, 0]},
                {"id": 2, "strategies": 2}
            ],
            "edges": [
                {"from": 1, "to": 2, "payoff_from_to": [[1, -1], [-1, 1]], "payoff_to_from": [[-1, 1], [1, -1]]}
            ],
            "weights": [1, 1]
        }"#;
        let g = PopulationNetworkGame::from_json_str(text).unwrap();
        assert_eq!(g.population_count(), 2);
        assert!(g.is_static(0));
        assert!(g.is_weighted_zero_sum(&[1.0, 1.0]).unwrap().holds);

        let bad = r#"{"populations": [{"id": 1, "strategies": 2}], "edges": [], "weights": [NaN]}"#;
        assert!(PopulationNetworkGame::from_json_str(bad).is_err());
        let huge = r#"{"populations": [{"id": 1, "strategies": 2}], "weights": [1e400]}"#;
        assert!(PopulationNetworkGame::from_json_str(huge).is_err());
        let unknown = r#"{"populations": [{"id": 1, "strategies": 2}], "edges": [{"from": 1, "to": 9, "payoff_from_to": [[1]], "payoff_to_from": [[1]]}]}"#;
        assert!(PopulationNetworkGame::from_json_str(unknown).is_err());
    }

    #[test]
    fn json_decimal_parsing_is_exact() {
        let text = r#"{"populations": [{"id": "a", "strategies": 1}, {"id": "b", "strategies": 1}],
            "edges": [{"from": "a", "to": "b", "payoff_from_to": [[0.1]], "payoff_to_from": [[2.2250738585072014e-308]]}]}"#;
        let g = PopulationNetworkGame::from_json_str(text).unwrap();
        assert_eq!(g.edges()[0].payoff_from_to.get(0, 0), 0.1);
        assert_eq!(g.edges()[0].payoff_to_from.get(0, 0), f64::MIN_POSITIVE);
    }

    #[test]
    fn builtin_round_trip() {
        for g in [stag_hunt(), asymmetric_matching_pennies()] {
            let back = PopulationNetworkGame::from_json_str(&g.to_json_string()).unwrap();
            assert_eq!(back, g);
        }
    }
}
