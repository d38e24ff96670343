//! Kernel rank-SVM in the primal.
//!
//! The ranker is restricted to the span of the training points,
//! `g = sum_a beta[a] k(x_a, .)`, so with `f = K beta` the objective is
//!
//! ```text
//! F(beta) = 1/2 beta' K beta + C * sum_{(i,j) in P} max(0, 1 - (f_i - f_j))
//! ```
//!
//! The hinge is replaced by a Huber smoothing of width `mu` (quadratic on
//! `(0, mu]`), which is minimized by nonlinear conjugate gradients in the
//! RKHS metric `<a, b>_K = a' K b` with exact line searches. `mu` is driven
//! towards zero by continuation. The smoothed slopes double as a feasible
//! dual point, so every sweep yields a duality gap, which is the stopping
//! rule. The point with the lowest exact hinge objective seen is returned.
//!
//! When the preference set holds every cross-level pair the loss and its
//! gradient are evaluated per pair of level blocks in `O(n log n)` with
//! sorting and prefix sums instead of `O(|P|)`.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{seeded_rng, DataMatrix};
use crate::error::{Error, Result};
use crate::ranker::kernel::{gram_matrix, KernelConfig};
use crate::ranker::model::RankModel;
use crate::ranker::prefs::PreferenceSet;
use crate::scalar::{cmp, Scalar};

/// Starting point of the coefficient vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Init {
    Zero,
    /// i.i.d. `N(0, scale^2)` coefficients.
    Random { seed: u64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SolverOptions<T> {
    /// Conjugate-gradient iterations across all smoothing stages.
    pub max_sweeps: usize,
    /// A stage ends once the relative decrease of its objective between
    /// sweeps stays below this; the solve ends early once the duality gap is
    /// below this fraction of the objective.
    pub rel_tol: T,
    /// Decreasing smoothing widths; the last one is the final stage.
    pub smoothing: Vec<T>,
    /// Coefficients with `|beta| <= support_tol` are dropped from the model.
    pub support_tol: T,
    pub init: Init,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        SolverOptions {
            max_sweeps: 5000,
            rel_tol: T::of(1e-6),
            smoothing: (0..=12).map(|i| T::of(10f64.powf(-0.5 * i as f64))).collect(),
            support_tol: T::of(1e-9),
            init: Init::Zero,
        }
    }
}

/// Per-sweep record of a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace<T> {
    /// Exact objective of the retained iterate after each sweep.
    pub objective: Vec<T>,
    pub sweeps: usize,
    /// False when the sweep budget ran out first.
    pub converged: bool,
    /// Final gap between the returned objective and the best dual bound.
    pub gap: T,
}

/// Huber-smoothed hinge on `z = 1 - margin`; `mu = 0` is the plain hinge.
#[inline]
fn huber<T: Scalar>(z: T, mu: T) -> (T, T) {
    if z <= T::zero() {
        (T::zero(), T::zero())
    } else if z <= mu {
        (z * z / (mu + mu), z / mu)
    } else {
        (z - mu * T::of(0.5), T::one())
    }
}

struct Block<T> {
    /// Member indices sorted by their current value.
    idx: Vec<usize>,
    vals: Vec<T>,
    /// `vals - 1`, as used when the block sits on the upper side.
    shifted: Vec<T>,
    p1: Vec<T>,
    p2: Vec<T>,
    ps: Vec<T>,
}

impl<T: Scalar> Block<T> {
    fn new(members: &[usize]) -> Self {
        let n = members.len();
        Block {
            idx: members.to_vec(),
            vals: vec![T::zero(); n],
            shifted: vec![T::zero(); n],
            p1: vec![T::zero(); n + 1],
            p2: vec![T::zero(); n + 1],
            ps: vec![T::zero(); n + 1],
        }
    }

    fn refresh(&mut self, f: &[T]) {
        self.idx.sort_unstable_by(|&a, &b| cmp(&f[a], &f[b]));
        for (slot, &i) in self.idx.iter().enumerate() {
            let v = f[i];
            self.vals[slot] = v;
            self.shifted[slot] = v - T::one();
            self.p1[slot + 1] = self.p1[slot] + v;
            self.p2[slot + 1] = self.p2[slot] + v * v;
            self.ps[slot + 1] = self.ps[slot] + (v - T::one());
        }
    }
}

struct Loss<'a, T> {
    kind: LossKind<'a, T>,
}

enum LossKind<'a, T> {
    /// Level groups, lowest level first; every upper/lower member pair is a preference.
    Blocks(Vec<Block<T>>),
    Pairs(&'a [(usize, usize)]),
}

impl<'a, T: Scalar> Loss<'a, T> {
    fn new(prefs: &'a PreferenceSet) -> Self {
        let kind = if prefs.is_complete() {
            LossKind::Blocks(prefs.level_groups().iter().map(|g| Block::new(g)).collect())
        } else {
            LossKind::Pairs(prefs.pairs())
        };
        Loss { kind }
    }

    /// Smoothed loss at `f` and the sum of the per-pair slopes `h'`; when
    /// `grad` is given it is overwritten with `dL/df`.
    fn eval(&mut self, f: &[T], mu: T, mut grad: Option<&mut [T]>) -> (T, T) {
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
        match &mut self.kind {
            LossKind::Pairs(pairs) => {
                let mut total = T::zero();
                let mut slopes = T::zero();
                for &(i, j) in pairs.iter() {
                    let (h, dh) = huber(T::one() - f[i] + f[j], mu);
                    total += h;
                    slopes += dh;
                    if let Some(g) = grad.as_deref_mut() {
                        g[i] -= dh;
                        g[j] += dh;
                    }
                }
                (total, slopes)
            }
            LossKind::Blocks(blocks) => {
                for b in blocks.iter_mut() {
                    b.refresh(f);
                }
                let mut total = T::zero();
                let mut slopes = T::zero();
                for hi in 1..blocks.len() {
                    for lo in 0..hi {
                        let (v, s) = block_pair(&blocks[hi], &blocks[lo], mu, grad.as_deref_mut());
                        total += v;
                        slopes += s;
                    }
                }
                (total, slopes)
            }
        }
    }
}

/// Sum of `huber(l - t)` over `t` in the upper block (`f - 1`) and `l` in the lower block,
/// with the matching sum of slopes.
fn block_pair<T: Scalar>(
    upper: &Block<T>,
    lower: &Block<T>,
    mu: T,
    mut grad: Option<&mut [T]>,
) -> (T, T) {
    let half_mu = mu * T::of(0.5);
    let smooth = mu > T::zero();
    let nl = lower.vals.len();
    let mut total = T::zero();
    let mut slopes = T::zero();

    for (&i, &t) in upper.idx.iter().zip(&upper.shifted) {
        let start = lower.vals.partition_point(|&l| l <= t);
        let lin = if smooth {
            lower.vals.partition_point(|&l| l <= t + mu)
        } else {
            start
        };
        let lin_cnt = T::of_usize(nl - lin);
        let lin_sum = lower.p1[nl] - lower.p1[lin];
        total += lin_sum - lin_cnt * (t + half_mu);
        let mut dh = lin_cnt;
        if smooth && lin > start {
            let c = T::of_usize(lin - start);
            let s1 = lower.p1[lin] - lower.p1[start];
            let s2 = lower.p2[lin] - lower.p2[start];
            let sq = (s2 - (t + t) * s1 + c * t * t).max(T::zero());
            total += sq / (mu + mu);
            dh += (s1 - c * t) / mu;
        }
        slopes += dh;
        if let Some(g) = grad.as_deref_mut() {
            g[i] -= dh;
        }
    }

    if let Some(g) = grad {
        for (&j, &l) in lower.idx.iter().zip(&lower.vals) {
            let active = upper.shifted.partition_point(|&t| t < l);
            let lin = if smooth {
                upper.shifted.partition_point(|&t| t < l - mu)
            } else {
                active
            };
            let mut dh = T::of_usize(lin);
            if smooth && active > lin {
                let c = T::of_usize(active - lin);
                let st = upper.ps[active] - upper.ps[lin];
                dh += (c * l - st) / mu;
            }
            g[j] += dh;
        }
    }
    (total, slopes)
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    ArrayView1::from(a).dot(&ArrayView1::from(b))
}

fn matvec<T: Scalar>(k: &Array2<T>, v: &[T], out: &mut [T]) {
    let y = k.dot(&ArrayView1::from(v));
    out.copy_from_slice(y.as_slice().expect("contiguous"));
}

/// Exact objective `1/2 beta' K beta + C sum hinge` for coefficients over the rows of `data`.
pub fn objective<T: Scalar>(
    data: &DataMatrix<T>,
    prefs: &PreferenceSet,
    kernel: &KernelConfig<T>,
    c: T,
    beta: &[T],
) -> Result<T> {
    if beta.len() != data.n() || prefs.levels().len() != data.n() {
        return Err(Error::InvalidParameter(
            "coefficients, preferences and data must agree on n".into(),
        ));
    }
    let k = gram_matrix(data, kernel);
    let mut f = vec![T::zero(); beta.len()];
    matvec(&k, beta, &mut f);
    let mut loss = Loss::new(prefs);
    Ok(T::of(0.5) * dot(beta, &f) + c * loss.eval(&f, T::zero(), None).0)
}

struct Problem<'a, T> {
    c: T,
    loss: Loss<'a, T>,
}

/// Best primal point and best dual value seen so far.
struct Incumbent<T> {
    obj: T,
    beta: Vec<T>,
    dual: T,
}

impl<T: Scalar> Problem<'_, T> {
    /// `(smoothed objective, exact objective, slope sum)` at `(beta, f)`,
    /// filling `grad` with `dL_mu/df`.
    fn evaluate(&mut self, beta: &[T], f: &[T], mu: T, grad: &mut [T]) -> (T, T, T) {
        let quad = T::of(0.5) * dot(beta, f);
        let (smooth, slopes) = self.loss.eval(f, mu, Some(grad));
        let exact = if mu > T::zero() {
            self.loss.eval(f, T::zero(), None).0
        } else {
            smooth
        };
        (quad + self.c * smooth, quad + self.c * exact, slopes)
    }

    /// Updates the incumbent and returns the duality gap.
    ///
    /// The smoothed slopes `alpha = C h'` lie in `[0, C]`, so they are dual
    /// feasible with value `sum alpha - 1/2 |b|_K^2` for `b = -C grad`, and
    /// `b` is itself a primal candidate.
    #[allow(clippy::too_many_arguments)]
    fn certify(
        &mut self,
        best: &mut Incumbent<T>,
        beta: &[T],
        exact: T,
        grad: &[T],
        kgrad: &[T],
        slopes: T,
        scratch: &mut [T],
    ) -> T {
        let c = self.c;
        if exact < best.obj {
            best.obj = exact;
            best.beta.copy_from_slice(beta);
        }
        let norm = c * c * dot(grad, kgrad);
        best.dual = best.dual.max(c * slopes - T::of(0.5) * norm);
        for (s, &kg) in scratch.iter_mut().zip(kgrad) {
            *s = -c * kg;
        }
        let snapped = T::of(0.5) * norm + c * self.loss.eval(scratch, T::zero(), None).0;
        if snapped <= best.obj {
            best.obj = snapped;
            for (b, &g) in best.beta.iter_mut().zip(grad) {
                *b = -c * g;
            }
        }
        best.obj - best.dual
    }
}

/// Trains the ranker; see [`train_ranksvm_traced`] for the per-sweep record.
pub fn train_ranksvm<T: Scalar>(
    data: &DataMatrix<T>,
    prefs: &PreferenceSet,
    kernel: &KernelConfig<T>,
    c: T,
    opts: &SolverOptions<T>,
) -> Result<RankModel<T>> {
    train_ranksvm_traced(data, prefs, kernel, c, opts).map(|(m, _)| m)
}

pub fn train_ranksvm_traced<T: Scalar>(
    data: &DataMatrix<T>,
    prefs: &PreferenceSet,
    kernel: &KernelConfig<T>,
    c: T,
    opts: &SolverOptions<T>,
) -> Result<(RankModel<T>, SolverTrace<T>)> {
    validate(data, prefs, c, opts)?;
    let k = gram_matrix(data, kernel);
    train_with_gram(data, &k, prefs, kernel, c, opts)
}

fn validate<T: Scalar>(
    data: &DataMatrix<T>,
    prefs: &PreferenceSet,
    c: T,
    opts: &SolverOptions<T>,
) -> Result<()> {
    let n = data.n();
    if prefs.is_empty() {
        return Err(Error::InsufficientData("preference set is empty".into()));
    }
    if prefs.levels().len() != n {
        return Err(Error::InvalidParameter(format!(
            "preferences cover {} items but data has {n} rows",
            prefs.levels().len()
        )));
    }
    if !(c > T::zero() && c.is_finite()) {
        return Err(Error::InvalidParameter(format!("C must be positive, got {c}")));
    }
    if opts.smoothing.is_empty() || opts.smoothing.iter().any(|m| !(*m >= T::zero())) {
        return Err(Error::InvalidParameter(
            "smoothing schedule must be nonempty and non-negative".into(),
        ));
    }
    Ok(())
}

/// Training with a precomputed Gram matrix of `data` under `kernel`.
pub(crate) fn train_with_gram<T: Scalar>(
    data: &DataMatrix<T>,
    k: &Array2<T>,
    prefs: &PreferenceSet,
    kernel: &KernelConfig<T>,
    c: T,
    opts: &SolverOptions<T>,
) -> Result<(RankModel<T>, SolverTrace<T>)> {
    validate(data, prefs, c, opts)?;
    let n = data.n();
    if k.dim() != (n, n) {
        return Err(Error::DimensionMismatch { expected: n, got: k.nrows() });
    }
    let mut problem = Problem {
        c,
        loss: Loss::new(prefs),
    };

    let beta0 = match opts.init {
        Init::Zero => vec![T::zero(); n],
        Init::Random { seed, scale } => {
            let mut rng = seeded_rng(seed);
            (0..n)
                .map(|_| T::of(scale * rng.sample::<f64, _>(StandardNormal)))
                .collect()
        }
    };
    let mut beta = beta0.clone();
    let mut f = vec![T::zero(); n];
    let mut gl = vec![T::zero(); n];
    let mut kg = vec![T::zero(); n];
    let mut d = vec![T::zero(); n];
    let mut kd = vec![T::zero(); n];
    let mut p = vec![T::zero(); n];
    let mut q = vec![T::zero(); n];
    let mut scratch_f = vec![T::zero(); n];
    let mut scratch_g = vec![T::zero(); n];

    let mut trace = SolverTrace {
        objective: Vec::new(),
        sweeps: 0,
        converged: false,
        gap: T::infinity(),
    };
    let mut best = Incumbent {
        obj: T::infinity(),
        beta: beta0,
        dual: T::neg_infinity(),
    };
    let tol = opts.rel_tol.max(T::epsilon() * T::of(100.0));
    let schedule = &opts.smoothing;
    let restart_every = 50usize.min(2 * n).max(5);
    let mut mu = schedule[0];
    let mut stage = 0;

    'stages: loop {
        // Fresh f each stage to shed accumulated drift.
        matvec(k, &beta, &mut f);
        let (mut fs, exact, slopes) = problem.evaluate(&beta, &f, mu, &mut gl);
        check_finite(exact, trace.sweeps, mu)?;
        matvec(k, &gl, &mut kg);
        trace.gap = problem.certify(&mut best, &beta, exact, &gl, &kg, slopes, &mut scratch_f);
        if trace.gap <= tol * best.obj.abs() {
            trace.converged = true;
            break;
        }
        for i in 0..n {
            d[i] = beta[i] + c * gl[i];
            kd[i] = f[i] + c * kg[i];
            p[i] = -d[i];
            q[i] = -kd[i];
        }
        let mut dd = dot(&d, &kd);
        let mut stalls = 0;
        let mut since_restart = 0;
        loop {
            if trace.sweeps >= opts.max_sweeps {
                break 'stages;
            }
            if !(dd > T::zero()) {
                break;
            }
            let mut slope = dot(&d, &q);
            if !(slope < T::zero()) || since_restart >= restart_every {
                for i in 0..n {
                    p[i] = -d[i];
                    q[i] = -kd[i];
                }
                slope = -dd;
                since_restart = 0;
            }
            let pq = dot(&p, &q);
            let scale = beta.iter().fold(T::one(), |m, b| m.max(b.abs()));
            let p_max = p.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            if !(pq > T::zero()) || p_max <= T::of(16.0) * T::epsilon() * scale {
                break;
            }
            let pf = dot(&p, &f);
            let t = line_search(
                &mut problem,
                &f,
                &q,
                pf,
                pq,
                slope,
                mu,
                &mut scratch_f,
                &mut scratch_g,
            );
            for i in 0..n {
                beta[i] += t * p[i];
            }
            // Recomputed rather than updated by t * q, which drifts on noise-level steps.
            matvec(k, &beta, &mut f);
            let (fs_new, exact, slopes) = problem.evaluate(&beta, &f, mu, &mut gl);
            trace.sweeps += 1;
            since_restart += 1;
            check_finite(exact, trace.sweeps, mu)?;
            if fs_new > fs {
                // Only rounding noise can make an exact line search go uphill.
                for i in 0..n {
                    beta[i] -= t * p[i];
                }
                break;
            }
            matvec(k, &gl, &mut kg);
            trace.gap = problem.certify(&mut best, &beta, exact, &gl, &kg, slopes, &mut scratch_f);
            trace.objective.push(best.obj);
            if trace.gap <= tol * best.obj.abs() {
                trace.converged = true;
                break 'stages;
            }

            let mut dn_kd_old = T::zero();
            let mut dd_new = T::zero();
            for i in 0..n {
                let dn = beta[i] + c * gl[i];
                let kdn = f[i] + c * kg[i];
                dn_kd_old += dn * kd[i];
                dd_new += dn * kdn;
                d[i] = dn;
                kd[i] = kdn;
            }
            let gamma = ((dd_new - dn_kd_old) / dd).max(T::zero());
            let gamma = if gamma.is_finite() { gamma } else { T::zero() };
            for i in 0..n {
                p[i] = -d[i] + gamma * p[i];
                q[i] = -kd[i] + gamma * q[i];
            }
            dd = dd_new;

            if fs - fs_new <= tol * fs_new.abs() {
                stalls += 1;
                if stalls >= 2 {
                    break;
                }
            } else {
                stalls = 0;
            }
            fs = fs_new;
        }
        stage += 1;
        if stage >= schedule.len() {
            trace.converged = true;
            break;
        }
        mu = schedule[stage];
    }
    if trace.objective.is_empty() {
        trace.objective.push(best.obj);
    }

    let keep: Vec<usize> = (0..n)
        .filter(|&i| best.beta[i].abs() > opts.support_tol)
        .collect();
    let d_dim = data.d();
    let mut flat = Vec::with_capacity(keep.len() * d_dim);
    for &i in &keep {
        flat.extend_from_slice(data.row(i));
    }
    let support = Array2::from_shape_vec((keep.len(), d_dim), flat)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let coef = keep.iter().map(|&i| best.beta[i]).collect();
    let model = RankModel::new(support, coef, *kernel, best.obj)?;
    Ok((model, trace))
}

fn check_finite<T: Scalar>(value: T, sweep: usize, mu: T) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "objective became {value} at sweep {sweep} (smoothing {mu})"
        )))
    }
}

/// Minimizes `phi(t) = F_mu(beta + t p)` along the direction, where
/// `phi'(t) = p.f + t p.q + C dL(f + t q).q`.
#[allow(clippy::too_many_arguments)]
fn line_search<T: Scalar>(
    problem: &mut Problem<'_, T>,
    f: &[T],
    q: &[T],
    pf: T,
    pq: T,
    slope0: T,
    mu: T,
    ft: &mut [T],
    gt: &mut [T],
) -> T {
    let c = problem.c;
    let mut deriv = |t: T| -> T {
        for i in 0..f.len() {
            ft[i] = f[i] + t * q[i];
        }
        problem.loss.eval(ft, mu, Some(gt));
        pf + t * pq + c * dot(gt, q)
    };

    let mut lo = T::zero();
    let mut dlo = slope0;
    let mut hi = T::one();
    let mut dhi = deriv(hi);
    let mut expansions = 0;
    while dhi < T::zero() && expansions < 80 {
        lo = hi;
        dlo = dhi;
        hi = hi * T::of(4.0);
        dhi = deriv(hi);
        expansions += 1;
    }
    if dhi < T::zero() {
        return hi;
    }
    // Shrink an overshooting unit step towards the minimizer.
    let tol = T::of(1e-10) * slope0.abs();
    let mut best_t = hi;
    let mut best_abs = dhi.abs();
    if dlo.abs() < best_abs && lo > T::zero() {
        best_t = lo;
        best_abs = dlo.abs();
    }
    // Illinois-weighted secant on the derivative; bisect when the bracket
    // fails to halve.
    let (mut wlo, mut whi) = (dlo, dhi);
    let mut side = 0i8;
    for _ in 0..100 {
        if best_abs <= tol || hi - lo <= T::of(1e-14) * hi {
            break;
        }
        let width = hi - lo;
        let mut t = lo - wlo * width / (whi - wlo);
        if !(t > lo && t < hi) {
            t = lo + T::of(0.5) * width;
        }
        let dt = deriv(t);
        if dt.abs() < best_abs {
            best_abs = dt.abs();
            best_t = t;
        }
        if dt < T::zero() {
            lo = t;
            dlo = dt;
            wlo = dt;
            if side == -1 {
                whi = whi * T::of(0.5);
            }
            side = -1;
        } else {
            hi = t;
            dhi = dt;
            whi = dt;
            if side == 1 {
                wlo = wlo * T::of(0.5);
            }
            side = 1;
        }
        if hi - lo > T::of(0.5) * width {
            let mid = lo + T::of(0.5) * (hi - lo);
            let dm = deriv(mid);
            if dm.abs() < best_abs {
                best_abs = dm.abs();
                best_t = mid;
            }
            if dm < T::zero() {
                lo = mid;
                dlo = dm;
            } else {
                hi = mid;
                dhi = dm;
            }
            wlo = dlo;
            whi = dhi;
            side = 0;
        }
    }
    best_t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranker::prefs::make_pairs;
    use rand::Rng;
    use proptest::prelude::*;

    #[test]
    fn huber_pieces() {
        assert_eq!(huber(-1.0, 0.5), (0.0, 0.0));
        assert_eq!(huber(0.25, 0.5), (0.0625, 0.5));
        assert_eq!(huber(2.0, 0.5), (1.75, 1.0));
        assert_eq!(huber(2.0, 0.0), (2.0, 1.0));
        assert_eq!(huber(0.0, 0.0), (0.0, 0.0));
    }

    proptest! {
        #[test]
        fn block_loss_matches_pair_loop(
            levels in prop::collection::vec(1usize..=4, 2..30),
            fvals in prop::collection::vec(-3.0f64..3.0, 30),
            mu in prop::sample::select(vec![0.0, 1e-3, 0.1, 1.0, 2.5]),
        ) {
            let prefs = make_pairs(&levels, None, 0);
            prop_assume!(!prefs.is_empty());
            let f = &fvals[..levels.len()];
            let mut blocks: Loss<f64> = Loss::new(&prefs);
            assert!(matches!(blocks.kind, LossKind::Blocks(_)));
            let mut gb = vec![0.0; f.len()];
            let (vb, sb) = blocks.eval(f, mu, Some(&mut gb));
            let mut pairs: Loss<f64> = Loss { kind: LossKind::Pairs(prefs.pairs()) };
            let mut gp = vec![0.0; f.len()];
            let (vp, sp) = pairs.eval(f, mu, Some(&mut gp));
            prop_assert!((sb - sp).abs() <= 1e-9 * (1.0 + sp.abs()));
            prop_assert!((vb - vp).abs() <= 1e-9 * (1.0 + vp.abs()), "{} vs {}", vb, vp);
            for (a, b) in gb.iter().zip(&gp) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn empty_preferences_rejected() {
        let data = DataMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let prefs = make_pairs(&[1, 1], None, 0);
        let k = KernelConfig::rbf(1.0).unwrap();
        let err = train_ranksvm(&data, &prefs, &k, 1.0, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
        let prefs = make_pairs(&[1, 2], None, 0);
        assert!(train_ranksvm(&data, &prefs, &k, 0.0, &SolverOptions::default()).is_err());
    }

    fn rbf(a: &[f64], b: &[f64], sigma: f64) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (-d2 / (sigma * sigma)).exp()
    }

    /// Objective recomputed from the model's own expansion.
    fn primal(model: &RankModel<f64>, data: &DataMatrix<f64>, prefs: &PreferenceSet, c: f64) -> f64 {
        let sigma = model.kernel().sigma();
        let sup = model.support();
        let coef = model.coefficients();
        let mut quad = 0.0;
        for a in 0..coef.len() {
            for b in 0..coef.len() {
                quad += coef[a] * coef[b] * rbf(sup.row(a).as_slice().unwrap(), sup.row(b).as_slice().unwrap(), sigma);
            }
        }
        let g: Vec<f64> = (0..data.n()).map(|i| model.evaluate(data.row(i)).unwrap()).collect();
        let hinge: f64 = prefs.pairs().iter().map(|&(i, j)| (1.0 - g[i] + g[j]).max(0.0)).sum();
        0.5 * quad + c * hinge
    }

    fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
            if a[piv][col].abs() < 1e-10 {
                return None;
            }
            a.swap(col, piv);
            b.swap(col, piv);
            for r in col + 1..n {
                let m = a[r][col] / a[col][col];
                for k in col..n {
                    a[r][k] -= m * a[col][k];
                }
                b[r] -= m * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        Some(x)
    }

    /// Dual optimum by enumerating which multipliers sit at 0, at C, or strictly inside.
    fn dual_optimum(data: &DataMatrix<f64>, pairs: &[(usize, usize)], sigma: f64, c: f64) -> f64 {
        let np = pairs.len();
        let k = |i: usize, j: usize| rbf(data.row(i), data.row(j), sigma);
        let q: Vec<Vec<f64>> = pairs
            .iter()
            .map(|&(i, j)| {
                pairs
                    .iter()
                    .map(|&(a, b)| k(i, a) - k(i, b) - k(j, a) + k(j, b))
                    .collect()
            })
            .collect();
        let mut best = f64::NEG_INFINITY;
        for code in 0..3usize.pow(np as u32) {
            let mut state = vec![0u8; np];
            let mut v = code;
            for s in state.iter_mut() {
                *s = (v % 3) as u8;
                v /= 3;
            }
            let mut alpha: Vec<f64> = state.iter().map(|&s| if s == 1 { c } else { 0.0 }).collect();
            let free: Vec<usize> = (0..np).filter(|&p| state[p] == 2).collect();
            if !free.is_empty() {
                let a = free.iter().map(|&p| free.iter().map(|&r| q[p][r]).collect()).collect();
                let b = free
                    .iter()
                    .map(|&p| 1.0 - (0..np).filter(|&r| state[r] == 1).map(|r| q[p][r] * c).sum::<f64>())
                    .collect();
                let Some(x) = solve_dense(a, b) else { continue };
                if x.iter().any(|&v| !(-1e-12..=c + 1e-12).contains(&v)) {
                    continue;
                }
                for (&p, &v) in free.iter().zip(&x) {
                    alpha[p] = v;
                }
            }
            let lin: f64 = alpha.iter().sum();
            let mut quad = 0.0;
            for p in 0..np {
                for r in 0..np {
                    quad += alpha[p] * alpha[r] * q[p][r];
                }
            }
            best = best.max(lin - 0.5 * quad);
        }
        best
    }

    fn cloud(n: usize, seed: u64) -> DataMatrix<f64> {
        let mut rng = seeded_rng(seed);
        let flat: Vec<f64> = (0..2 * n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        DataMatrix::from_flat(n, 2, flat).unwrap()
    }

    #[test]
    fn two_points_match_grid_search() {
        let data = DataMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let prefs = make_pairs(&[1, 2], None, 0);
        let (sigma, c) = (1.0, 10.0);
        let k01 = rbf(&[0.0], &[1.0], sigma);
        let f = |b0: f64, b1: f64| {
            let g0 = b0 + b1 * k01;
            let g1 = b0 * k01 + b1;
            0.5 * (b0 * g0 + b1 * g1) + c * (1.0 - g1 + g0).max(0.0)
        };
        let mut grid_best = f64::INFINITY;
        for a in 0..=10_000 {
            for b in 0..=10_000 {
                grid_best = grid_best.min(f(-5.0 + a as f64 * 1e-3, -5.0 + b as f64 * 1e-3));
            }
        }
        let kernel = KernelConfig::rbf(sigma).unwrap();
        let model = train_ranksvm(&data, &prefs, &kernel, c, &SolverOptions::default()).unwrap();
        let obj = primal(&model, &data, &prefs, c);
        assert!((model.objective() - obj).abs() < 1e-9);
        assert!(obj <= grid_best + 1e-6, "{obj} vs grid {grid_best}");
        let gap = model.evaluate(&[1.0]).unwrap() - model.evaluate(&[0.0]).unwrap();
        assert!(gap >= 1.0 - 1e-3, "{gap}");
    }

    #[test]
    fn matches_exact_dual() {
        let data = cloud(5, 4);
        let levels = [1, 1, 2, 3, 3];
        for (prefs, c, sigma) in [
            (make_pairs(&levels, None, 0), 1.0, 1.0),
            (make_pairs(&levels, None, 0), 0.05, 0.7),
            (make_pairs(&levels, Some(5), 9), 3.0, 2.0),
        ] {
            let kernel = KernelConfig::rbf(sigma).unwrap();
            let (model, trace) =
                train_ranksvm_traced(&data, &prefs, &kernel, c, &SolverOptions::default()).unwrap();
            assert!(trace.converged);
            let obj = primal(&model, &data, &prefs, c);
            let dual = dual_optimum(&data, prefs.pairs(), sigma, c);
            assert!(
                (obj - dual).abs() <= 1e-6 * (1.0 + dual.abs()),
                "C={c} sigma={sigma}: primal {obj} dual {dual}"
            );
        }
    }

    #[test]
    fn collinear_levels_give_monotone_ranker() {
        let data = DataMatrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let prefs = make_pairs(&[1, 2, 3, 4], None, 0);
        let kernel = KernelConfig::rbf(1.0).unwrap();
        let model = train_ranksvm(&data, &prefs, &kernel, 10.0, &SolverOptions::default()).unwrap();
        let g: Vec<f64> = (0..4).map(|i| model.evaluate(data.row(i)).unwrap()).collect();
        assert!(g.windows(2).all(|w| w[0] < w[1]), "{g:?}");
    }

    #[test]
    fn tiny_c_keeps_zero_ranker() {
        let data = cloud(12, 1);
        let levels: Vec<usize> = (0..12).map(|i| 1 + i % 3).collect();
        let prefs = make_pairs(&levels, None, 0);
        let kernel = KernelConfig::rbf(1.0).unwrap();
        let c = 1e-12;
        let model = train_ranksvm(&data, &prefs, &kernel, c, &SolverOptions::default()).unwrap();
        assert!((model.objective() - c * prefs.len() as f64).abs() <= 1e-9);
    }

    #[test]
    fn history_monotone_and_inits_agree() {
        let data = cloud(60, 2);
        let levels: Vec<usize> = (0..60).map(|i| 1 + (i * 7) % 3).collect();
        let prefs = make_pairs(&levels, None, 0);
        let kernel = KernelConfig::rbf(1.5).unwrap();
        let mut objs = Vec::new();
        for init in [Init::Zero, Init::Random { seed: 5, scale: 0.1 }] {
            let opts = SolverOptions { init, ..SolverOptions::default() };
            let (model, trace) = train_ranksvm_traced(&data, &prefs, &kernel, 1.0, &opts).unwrap();
            assert!(trace.converged);
            assert!(trace.objective.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(trace.objective.last().copied(), Some(model.objective()));
            let direct = objective(&data, &prefs, &kernel, 1.0, &dense_beta(&model, &data)).unwrap();
            assert!((direct - model.objective()).abs() <= 1e-9 * direct);
            objs.push(model.objective());
        }
        assert!((objs[0] - objs[1]).abs() <= 1e-5 * objs[0], "{objs:?}");
    }

    fn dense_beta(model: &RankModel<f64>, data: &DataMatrix<f64>) -> Vec<f64> {
        let mut beta = vec![0.0; data.n()];
        let mut used = vec![false; data.n()];
        for (a, row) in model.support().rows().into_iter().enumerate() {
            let i = (0..data.n())
                .find(|&i| !used[i] && data.row(i) == row.as_slice().unwrap())
                .unwrap();
            used[i] = true;
            beta[i] = model.coefficients()[a];
        }
        beta
    }

    #[test]
    fn single_precision_solves() {
        let data = cloud(30, 3).cast::<f32>();
        let levels: Vec<usize> = (0..30).map(|i| 1 + i % 3).collect();
        let prefs = make_pairs(&levels, None, 0);
        let kernel = KernelConfig::rbf(1.0f32).unwrap();
        let model = train_ranksvm(&data, &prefs, &kernel, 1.0, &SolverOptions::default()).unwrap();
        assert!(model.objective().is_finite());
        assert!(model.objective() <= prefs.len() as f32);
    }

    #[test]
    fn reported_objective_is_exact_on_near_duplicate_pairs() {
        // Close points give a nearly singular K, where a noise-level direction
        // once produced a huge step and a stale objective.
        let mut rng = seeded_rng(3);
        for _ in 0..300 {
            let x = rng.random_range(-2.0..2.0);
            let gap = rng.random_range(0.05..0.6);
            let data = DataMatrix::from_rows(&[vec![x], vec![x + gap]]).unwrap();
            let prefs = make_pairs(&[2, 1], None, 0);
            let kernel = KernelConfig::rbf(rng.random_range(0.5..3.0)).unwrap();
            let c = 10f64.powf(rng.random_range(-2.0..1.0));
            let (model, trace) =
                train_ranksvm_traced(&data, &prefs, &kernel, c, &SolverOptions::default()).unwrap();
            let direct = objective(&data, &prefs, &kernel, c, &dense_beta(&model, &data)).unwrap();
            assert!((direct - model.objective()).abs() <= 1e-9 * direct, "{direct} vs {}", model.objective());
            assert!(trace.converged && trace.gap >= -1e-9 * direct);
            assert!(trace.sweeps < 1000, "{} sweeps", trace.sweeps);
        }
    }

    #[test]
    fn line_search_finds_a_root_far_below_the_unit_step() {
        // First step from zero on a wide kernel: the minimizer along the
        // direction sits orders of magnitude below t = 1.
        let data = cloud(400, 2);
        let levels: Vec<usize> = data
            .rows()
            .map(|r| match r[0] * r[0] + r[1] * r[1] {
                v if v < 1.0 => 3,
                v if v < 2.5 => 2,
                _ => 1,
            })
            .collect();
        let prefs = make_pairs(&levels, None, 0);
        let k = gram_matrix(&data, &KernelConfig::rbf(5.0).unwrap());
        let (n, c, mu) = (data.n(), 1.0, 1.0);
        let mut problem = Problem { c, loss: Loss::new(&prefs) };
        let beta = vec![0.0; n];
        let f = vec![0.0; n];
        let mut gl = vec![0.0; n];
        let (f0, _, _) = problem.evaluate(&beta, &f, mu, &mut gl);
        let mut kg = vec![0.0; n];
        matvec(&k, &gl, &mut kg);
        let p: Vec<f64> = gl.iter().map(|g| -c * g).collect();
        let q: Vec<f64> = kg.iter().map(|g| -c * g).collect();
        let pq = dot(&p, &q);
        let (mut ft, mut gt) = (vec![0.0; n], vec![0.0; n]);
        let t = line_search(&mut problem, &f, &q, 0.0, pq, -pq, mu, &mut ft, &mut gt);
        assert!(t < 1e-2, "{t}");

        let mut at = |t: f64| {
            let b: Vec<f64> = p.iter().map(|v| t * v).collect();
            let ff: Vec<f64> = q.iter().map(|v| t * v).collect();
            let mut g = vec![0.0; n];
            let (val, _, _) = problem.evaluate(&b, &ff, mu, &mut g);
            (val, t * pq + c * dot(&g, &q))
        };
        let (val, deriv) = at(t);
        assert!(val < f0, "{val} >= {f0}");
        assert!(deriv.abs() <= 1e-6 * pq, "{deriv} vs {pq}");
        assert!(at(0.5 * t).0 >= val && at(2.0 * t).0 >= val);
    }
}
