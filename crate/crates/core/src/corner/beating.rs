//! Beating sets and the costate conditions on them.
//!
//! `Σₖ` is the set of guard points whose reset chain applies the reset at
//! least `k + 1` times at one instant. Points that land on or beyond a guard
//! count as firing it again.

use nalgebra::DMatrix;
use thiserror::Error;

use super::{axpy, energy_roots, CornerError};
use crate::hamiltonian::Hamiltonian;
use crate::hybrid::{apply_reset, AffineBoxChart, FlowConfig, Guard, HybridSystem, ResetChainError};
use crate::numeric::dot;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeatingSetError {
    #[error("beating sets stop shrinking at level {level}; blocking set appears non-empty")]
    BlockingNonEmpty { level: usize },
    #[error("chart {0} has no closed-form description and no samples were supplied")]
    NeedsSamples(String),
}

/// Closed box (possibly degenerate) attributed to the chart the chain starts on.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatingPiece {
    pub chart_id: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BeatingPiece {
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }

    /// Orthonormal basis of covectors vanishing on the piece (one column per
    /// degenerate coordinate).
    pub fn annihilator(&self) -> DMatrix<f64> {
        let n = self.lower.len();
        let axes: Vec<usize> = (0..n).filter(|&i| self.upper[i] - self.lower[i] <= 1e-14).collect();
        DMatrix::from_fn(n, axes.len(), |i, j| if i == axes[j] { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeatingSet {
    pub level: usize,
    pub pieces: Vec<BeatingPiece>,
    /// Sample points known to belong to the set (sampled mode).
    pub samples: Vec<Vec<f64>>,
}

impl BeatingSet {
    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty() && self.samples.is_empty()
    }

    pub fn piece(&self, chart_id: &str) -> Option<&BeatingPiece> {
        self.pieces.iter().find(|p| p.chart_id == chart_id)
    }
}

#[derive(Debug, Clone)]
struct Region {
    chart: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

fn firing_region(c: &AffineBoxChart, chart: usize) -> Region {
    let mut lower = c.lower.clone();
    let mut upper = c.upper.clone();
    if c.fires_above {
        lower[c.axis] = c.level;
        upper[c.axis] = f64::INFINITY;
    } else {
        lower[c.axis] = f64::NEG_INFINITY;
        upper[c.axis] = c.level;
    }
    Region { chart, lower, upper }
}

/// `{x in r : Δ(x) in q}` for an axis-aligned affine reset.
fn preimage(c: &AffineBoxChart, r: &Region, q_lower: &[f64], q_upper: &[f64]) -> Option<Region> {
    let mut lower = r.lower.clone();
    let mut upper = r.upper.clone();
    for (i, &(src, scale, off)) in c.reset.iter().enumerate() {
        match src {
            Some(j) if scale != 0.0 => {
                let a = (q_lower[i] - off) / scale;
                let b = (q_upper[i] - off) / scale;
                let (a, b) = if a <= b { (a, b) } else { (b, a) };
                lower[j] = lower[j].max(a);
                upper[j] = upper[j].min(b);
            }
            _ => {
                if off < q_lower[i] - 1e-12 || off > q_upper[i] + 1e-12 {
                    return None;
                }
            }
        }
    }
    if lower.iter().zip(&upper).all(|(a, b)| *a <= *b + 1e-12) {
        Some(Region { chart: r.chart, lower, upper })
    } else {
        None
    }
}

fn on_guard(c: &AffineBoxChart, r: &Region) -> Option<BeatingPiece> {
    if r.lower[c.axis] > c.level + 1e-12 || r.upper[c.axis] < c.level - 1e-12 {
        return None;
    }
    let mut lower = r.lower.clone();
    let mut upper = r.upper.clone();
    lower[c.axis] = c.level;
    upper[c.axis] = c.level;
    Some(BeatingPiece { chart_id: String::new(), lower, upper })
}

fn same_sets(a: &BeatingSet, b: &BeatingSet) -> bool {
    let key = |p: &BeatingPiece| format!("{}{:?}{:?}", p.chart_id, p.lower, p.upper);
    let mut ka: Vec<String> = a.pieces.iter().map(key).collect();
    let mut kb: Vec<String> = b.pieces.iter().map(key).collect();
    ka.sort();
    kb.sort();
    ka == kb && a.samples == b.samples
}

/// Computes `Σ₀ ⊇ Σ₁ ⊇ … ⊇ Σ_{k_max}`.
///
/// Uses interval arithmetic when every chart has an [`AffineBoxChart`]
/// description; otherwise runs the reset chains of the supplied guard
/// `samples` that the flow reaches transversally.
pub fn beating_sets(sys: &HybridSystem, k_max: usize, samples: Option<&[Vec<f64>]>) -> Result<Vec<BeatingSet>, BeatingSetError> {
    let charts: Vec<Option<AffineBoxChart>> = sys.guards.iter().map(|g| g.affine_box()).collect();
    let sets = if charts.iter().all(|c| c.is_some()) {
        let charts: Vec<AffineBoxChart> = charts.into_iter().map(|c| c.unwrap()).collect();
        closed_form(sys, &charts, k_max)
    } else {
        let samples = match samples {
            Some(s) => s,
            None => {
                let id = sys.guards.iter().find(|g| g.affine_box().is_none()).map(|g| g.id().to_string());
                return Err(BeatingSetError::NeedsSamples(id.unwrap_or_default()));
            }
        };
        sampled(sys, k_max, samples)?
    };
    if k_max >= 1 {
        let last = &sets[k_max];
        if !last.is_empty() && same_sets(last, &sets[k_max - 1]) {
            return Err(BeatingSetError::BlockingNonEmpty { level: k_max });
        }
    }
    Ok(sets)
}

fn closed_form(sys: &HybridSystem, charts: &[AffineBoxChart], k_max: usize) -> Vec<BeatingSet> {
    let cfg = FlowConfig::default();
    let base: Vec<Region> = charts.iter().enumerate().map(|(i, c)| firing_region(c, i)).collect();
    // extended[k]: regions (on or beyond a guard) whose chain fires ≥ k + 1 times
    let mut extended: Vec<Vec<Region>> = vec![base.clone()];
    for k in 1..=k_max {
        let mut level = Vec::new();
        for (ci, c) in charts.iter().enumerate() {
            let folded = sys.guards[ci].folded_beats();
            if k <= folded {
                level.push(base[ci].clone());
                continue;
            }
            let prev = &extended[k - folded - 1];
            for q in prev {
                if let Some(r) = preimage(c, &base[ci], &q.lower, &q.upper) {
                    level.push(r);
                }
            }
        }
        // guard against combinatorial growth on pathological inputs
        level.truncate(4096);
        extended.push(level);
    }
    extended
        .iter()
        .enumerate()
        .map(|(k, regions)| {
            let mut pieces: Vec<BeatingPiece> = Vec::new();
            for r in regions {
                if let Some(mut p) = on_guard(&charts[r.chart], r) {
                    p.chart_id = sys.guards[r.chart].id().to_string();
                    if k > 0 && !confirmed(sys, r.chart, &p, k, &cfg) {
                        continue;
                    }
                    if !pieces.iter().any(|q| covers(q, &p)) {
                        pieces.retain(|q| !covers(&p, q));
                        pieces.push(p);
                    }
                }
            }
            BeatingSet { level: k, pieces, samples: Vec::new() }
        })
        .collect()
}

/// Number of reset applications (folded beats included) when chart `k`
/// fires at `x`; `usize::MAX` for a blocking chain.
fn chain_applications(sys: &HybridSystem, k: usize, x: &[f64], cfg: &FlowConfig) -> usize {
    match apply_reset(sys, k, 0.0, x, cfg) {
        Ok(out) => out.events.iter().map(|e| 1 + sys.guards[e.guard_index].folded_beats()).sum(),
        Err((ResetChainError::Blocking { .. }, _)) => usize::MAX,
        Err(_) => 0,
    }
}

fn sampled(sys: &HybridSystem, k_max: usize, samples: &[Vec<f64>]) -> Result<Vec<BeatingSet>, BeatingSetError> {
    let cfg = FlowConfig::default();
    let mut counts = Vec::new();
    for x in samples {
        let chart = (0..sys.guards.len()).find(|&k| {
            let g = &sys.guards[k];
            (g.value(0.0, x)).abs() <= 1e-9 && g.in_domain(0.0, x) && sys.transversality(k, 0.0, x) > 0.0
        });
        let Some(k) = chart else { continue };
        counts.push((x.clone(), chain_applications(sys, k, x, &cfg)));
    }
    Ok((0..=k_max)
        .map(|k| BeatingSet {
            level: k,
            pieces: Vec::new(),
            samples: counts.iter().filter(|(_, c)| *c > k).map(|(x, _)| x.clone()).collect(),
        })
        .collect())
}

fn axis_samples(lo: f64, hi: f64) -> Vec<f64> {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) if hi - lo <= 1e-14 => vec![lo],
        (true, true) => (0..=8).map(|i| lo + (hi - lo) * i as f64 / 8.0).collect(),
        (true, false) => vec![lo, lo + 1.0, lo + 10.0],
        (false, true) => vec![hi, hi - 1.0, hi - 10.0],
        (false, false) => vec![-10.0, -1.0, 0.0, 1.0, 10.0],
    }
}

/// Whether some sample point of `piece` really fires more than `k` times.
/// Interval arithmetic ignores the direction of motion at points that land
/// exactly on a guard; this check removes those spurious pieces. Only guard
/// points the flow reaches transversally start a chain.
fn confirmed(sys: &HybridSystem, chart: usize, piece: &BeatingPiece, k: usize, cfg: &FlowConfig) -> bool {
    let axes: Vec<Vec<f64>> = piece.lower.iter().zip(&piece.upper).map(|(a, b)| axis_samples(*a, *b)).collect();
    let mut idx = vec![0usize; axes.len()];
    loop {
        let x: Vec<f64> = idx.iter().zip(&axes).map(|(i, a)| a[*i]).collect();
        let reached = sys.transversality(chart, 0.0, &x) > 0.0;
        if reached && sys.guards[chart].in_domain(0.0, &x) && chain_applications(sys, chart, &x, cfg) > k {
            return true;
        }
        let mut d = 0;
        while d < idx.len() {
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == idx.len() {
            return false;
        }
    }
}

fn covers(a: &BeatingPiece, b: &BeatingPiece) -> bool {
    a.lower.iter().zip(&b.lower).all(|(x, y)| *x <= *y + 1e-12) && a.upper.iter().zip(&b.upper).all(|(x, y)| *x >= *y - 1e-12)
}

#[derive(Debug, Clone, PartialEq)]
pub enum BeatingDirection {
    /// Given the costate after the whole reset chain.
    Backward { p_post: Vec<f64> },
    /// Given the costate before the chain.
    Forward { p_pre: Vec<f64> },
}

/// Costates compatible with a beating chain `x⁻ ↦ x⁺ = Δᵏ⁺¹(x⁻)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatingMomentumSet {
    pub base_point: Vec<f64>,
    pub image_point: Vec<f64>,
    pub annihilator: DMatrix<f64>,
    pub direction: BeatingDirection,
    /// Backward: candidate `p⁻`; forward: candidate `p⁺`.
    pub solutions: Vec<Vec<f64>>,
    pub energy_residuals: Vec<f64>,
    /// Backward only: whether the pre-chain motion reaches the guard.
    pub reaches_guard: Vec<bool>,
    /// Forward only: distance of `p⁻` from the set the chain can absorb.
    pub consistency_residual: f64,
    /// True when `solutions` samples a continuous family.
    pub is_family: bool,
}

/// Solves the corner conditions across a beating chain with composite
/// differential `d_chain` and annihilator basis `annihilator` of `T Σₖ`.
///
/// Finite solution lists arise when the unknown has one free coordinate;
/// two free coordinates yield a family sampled with `samples` points for the
/// first coordinate over `range`.
#[allow(clippy::too_many_arguments)]
pub fn solve_corner_beating(
    ham: &dyn Hamiltonian,
    guard: &dyn Guard,
    t: f64,
    x_pre: &[f64],
    x_post: &[f64],
    d_chain: &DMatrix<f64>,
    annihilator: &DMatrix<f64>,
    direction: BeatingDirection,
    samples: usize,
    range: (f64, f64),
) -> Result<BeatingMomentumSet, CornerError> {
    let n = x_pre.len();
    match &direction {
        BeatingDirection::Backward { p_post } => {
            let energy = ham.value(t, x_post, p_post);
            // p⁻ = p⁺ D + A s
            let pd: Vec<f64> = (0..n).map(|j| (0..n).map(|i| p_post[i] * d_chain[(i, j)]).sum()).collect();
            let cols: Vec<Vec<f64>> = (0..annihilator.ncols()).map(|j| annihilator.column(j).iter().copied().collect()).collect();
            let (solutions, is_family) = solve_on_affine(ham, t, x_pre, &pd, &cols, energy, samples, range)?;
            let residuals = solutions.iter().map(|p| (ham.value(t, x_pre, p) - energy).abs()).collect();
            let reaches = solutions
                .iter()
                .map(|p| {
                    let v = ham.grad_p(t, x_pre, p);
                    guard.direction() * (dot(&guard.gradient(t, x_pre), &v) + guard.time_derivative(t, x_pre)) > 0.0
                })
                .collect();
            Ok(BeatingMomentumSet {
                base_point: x_pre.to_vec(),
                image_point: x_post.to_vec(),
                annihilator: annihilator.clone(),
                direction,
                solutions,
                energy_residuals: residuals,
                reaches_guard: reaches,
                consistency_residual: 0.0,
                is_family,
            })
        }
        BeatingDirection::Forward { p_pre } => {
            let energy = ham.value(t, x_pre, p_pre);
            // tangent basis of Σₖ: complement of the annihilator columns
            let tangent = tangent_basis(annihilator);
            // constraints Tᵀ Dᵀ p⁺ = Tᵀ p⁻
            let m = tangent.transpose() * d_chain.transpose();
            let rhs = tangent.transpose() * nalgebra::DVector::from_column_slice(p_pre);
            let (particular, null) = least_squares_and_null(&m, &rhs, n);
            let consistency = (&m * &particular - &rhs).norm();
            let particular: Vec<f64> = particular.iter().copied().collect();
            let (solutions, is_family) = solve_on_affine(ham, t, x_post, &particular, &null, energy, samples, range)?;
            let residuals = solutions.iter().map(|p| (ham.value(t, x_post, p) - energy).abs()).collect();
            Ok(BeatingMomentumSet {
                base_point: x_pre.to_vec(),
                image_point: x_post.to_vec(),
                annihilator: annihilator.clone(),
                direction,
                reaches_guard: vec![true; solutions.len()],
                solutions,
                energy_residuals: residuals,
                consistency_residual: consistency,
                is_family,
            })
        }
    }
}

fn tangent_basis(ann: &DMatrix<f64>) -> DMatrix<f64> {
    let n = ann.nrows();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut current: Vec<Vec<f64>> = (0..ann.ncols()).map(|j| ann.column(j).iter().copied().collect()).collect();
    for k in 0..n {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        for b in &current {
            let c = dot(b, &v);
            for i in 0..n {
                v[i] -= c * b[i];
            }
        }
        let nv = dot(&v, &v).sqrt();
        if nv > 1e-10 {
            let u: Vec<f64> = v.iter().map(|x| x / nv).collect();
            current.push(u.clone());
            basis.push(u);
        }
    }
    DMatrix::from_fn(n, basis.len(), |i, j| basis[j][i])
}

fn least_squares_and_null(m: &DMatrix<f64>, rhs: &nalgebra::DVector<f64>, n: usize) -> (nalgebra::DVector<f64>, Vec<Vec<f64>>) {
    if m.nrows() == 0 {
        let null = (0..n).map(|k| (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect()).collect();
        return (nalgebra::DVector::zeros(n), null);
    }
    let svd = m.clone().svd(true, true);
    let vt = svd.v_t.as_ref().unwrap();
    let u = svd.u.as_ref().unwrap();
    let smax = svd.singular_values.max().max(1e-300);
    let mut x = nalgebra::DVector::zeros(n);
    let mut used = vec![false; vt.nrows()];
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s > 1e-10 * smax.max(1.0) && smax > 1e-12 {
            used[k] = true;
            let c = u.column(k).dot(rhs) / s;
            x += vt.row(k).transpose() * c;
        }
    }
    // null space: rows of Vᵀ not used, plus the complement when m is wide
    let mut rows: Vec<Vec<f64>> = (0..vt.nrows()).filter(|&k| used[k]).map(|k| vt.row(k).iter().copied().collect()).collect();
    let mut null = Vec::new();
    for k in 0..n {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        for r in &rows {
            let c = dot(r, &v);
            for i in 0..n {
                v[i] -= c * r[i];
            }
        }
        let nv = dot(&v, &v).sqrt();
        if nv > 1e-10 {
            let u: Vec<f64> = v.iter().map(|x| x / nv).collect();
            rows.push(u.clone());
            null.push(u);
        }
    }
    (x, null)
}

/// Solves `H(t, x, base + Σ sᵢ colᵢ) = energy` for one or two free
/// coordinates.
#[allow(clippy::too_many_arguments)]
fn solve_on_affine(
    ham: &dyn Hamiltonian,
    t: f64,
    x: &[f64],
    base: &[f64],
    cols: &[Vec<f64>],
    energy: f64,
    samples: usize,
    range: (f64, f64),
) -> Result<(Vec<Vec<f64>>, bool), CornerError> {
    let n = x.len();
    let scalar = |b: &[f64], dir: &[f64]| -> Result<Vec<f64>, CornerError> {
        let phi = |e: f64| ham.value(t, x, &axpy(b, e, dir)) - energy;
        let dphi = |e: f64| dot(&ham.grad_p(t, x, &axpy(b, e, dir)), dir);
        let hess = ham.hessian(t, x, b);
        let mut c2 = 0.0;
        for i in 0..n {
            for j in 0..n {
                c2 += dir[i] * hess[(n + i, n + j)] * dir[j];
            }
        }
        let tol = 1e-10 * energy.abs().max(1.0);
        energy_roots(phi, dphi, phi(0.0), dphi(0.0), c2, tol)
    };
    match cols.len() {
        0 => {
            if (ham.value(t, x, base) - energy).abs() <= 1e-10 * energy.abs().max(1.0) {
                Ok((vec![base.to_vec()], false))
            } else {
                Err(CornerError::NoRealRoot { discriminant: f64::NAN })
            }
        }
        1 => {
            let roots = scalar(base, &cols[0])?;
            Ok((roots.iter().map(|e| axpy(base, *e, &cols[0])).collect(), false))
        }
        2 => {
            let mut out = Vec::new();
            let m = samples.max(2);
            for k in 0..m {
                let s = range.0 + (range.1 - range.0) * k as f64 / (m - 1) as f64;
                let b = axpy(base, s, &cols[0]);
                if let Ok(roots) = scalar(&b, &cols[1]) {
                    for e in roots {
                        out.push(axpy(&b, e, &cols[1]));
                    }
                }
            }
            if out.is_empty() {
                return Err(CornerError::NoRealRoot { discriminant: f64::NAN });
            }
            Ok((out, true))
        }
        _ => Err(CornerError::Underdetermined),
    }
}
