//! Brute-force and golden-section search over strategy parameters.
//!
//! Every objective evaluation is a full simulation on a private copy of the
//! scenario world, so the results here serve as an independent check on the
//! closed-form optima.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::strategies::{self, bd_inputs, formulas, BbInputs, StrategyKind, StrategyParams};
use crate::world::World;

/// Absolute tolerance on the argument for golden-section refinement.
pub const REFINE_TOL: f64 = 1e-9;
/// Relative tolerance under which two scores count as tied.
pub const TIE_TOL: f64 = 1e-9;
/// Highest round count the multi-round sweep tries.
pub const MAX_SWEEP_ROUNDS: u32 = 200;

const INV_PHI: f64 = 0.618_033_988_749_894_9;
const UNIMODAL_SAMPLES: usize = 9;
const FALLBACK_CELLS: usize = 64;
const MAX_FALLBACK_DEPTH: u32 = 4;
const MAX_GOLDEN_ITERS: u32 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub profit: f64,
    pub feasible: bool,
}

impl Evaluation {
    pub const INFEASIBLE: Evaluation = Evaluation {
        profit: 0.0,
        feasible: false,
    };

    /// Ranking value: infeasible points sort below everything.
    pub fn score(&self) -> f64 {
        if self.feasible && self.profit.is_finite() {
            self.profit
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Simulated profit of one strategy run. Parameter errors count as infeasible.
pub fn evaluate(world: &World, kind: StrategyKind, params: &StrategyParams) -> Evaluation {
    match strategies::run(world, kind, params) {
        Ok(x) => Evaluation {
            profit: x.report.simulated_profit,
            feasible: x.report.feasible,
        },
        Err(_) => Evaluation::INFEASIBLE,
    }
}

fn better(candidate: f64, incumbent: f64) -> bool {
    if incumbent == f64::NEG_INFINITY {
        return candidate > incumbent;
    }
    candidate > incumbent + TIE_TOL * incumbent.abs().max(1.0)
}

fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousAxis {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegerAxis {
    pub name: String,
    pub lo: u32,
    pub hi: u32,
}

/// What to search: a strategy, the axes to vary, and the parameters held
/// fixed. Parameters on neither list fall back to the strategy defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    pub strategy: StrategyKind,
    pub continuous: Vec<ContinuousAxis>,
    pub integer: Vec<IntegerAxis>,
    pub fixed: StrategyParams,
}

impl SearchSpec {
    pub fn new(strategy: StrategyKind) -> Self {
        Self {
            strategy,
            continuous: Vec::new(),
            integer: Vec::new(),
            fixed: StrategyParams::new(),
        }
    }

    pub fn continuous(mut self, name: &str, lo: f64, hi: f64) -> Self {
        self.continuous.push(ContinuousAxis {
            name: name.into(),
            lo,
            hi,
        });
        self
    }

    pub fn integer(mut self, name: &str, lo: u32, hi: u32) -> Self {
        self.integer.push(IntegerAxis {
            name: name.into(),
            lo,
            hi,
        });
        self
    }

    pub fn fixed(mut self, params: StrategyParams) -> Self {
        self.fixed = params;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let keys = self.strategy.param_keys();
        let names = self
            .continuous
            .iter()
            .map(|a| &a.name)
            .chain(self.integer.iter().map(|a| &a.name));
        for name in names {
            if !keys.contains(&name.as_str()) {
                return Err(SimError::InvalidParameter(format!(
                    "`{name}` is not a parameter of {}",
                    self.strategy.name()
                )));
            }
        }
        self.fixed.ensure_keys(keys)?;
        for a in &self.continuous {
            if !(a.lo.is_finite() && a.hi.is_finite() && a.lo <= a.hi) {
                return Err(SimError::InvalidParameter(format!(
                    "axis `{}` has bad bounds [{}, {}]",
                    a.name, a.lo, a.hi
                )));
            }
        }
        for a in &self.integer {
            if a.lo > a.hi {
                return Err(SimError::InvalidParameter(format!(
                    "axis `{}` has bad bounds [{}, {}]",
                    a.name, a.lo, a.hi
                )));
            }
        }
        Ok(())
    }

    fn params_at(&self, point: &[f64]) -> StrategyParams {
        let names = self
            .continuous
            .iter()
            .map(|a| &a.name)
            .chain(self.integer.iter().map(|a| &a.name));
        names
            .zip(point)
            .fold(self.fixed.clone(), |p, (name, v)| p.with(name, *v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    /// Continuous coordinates first, then integer ones, in axis order.
    pub point: Vec<f64>,
    pub eval: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_params: StrategyParams,
    pub best_point: Vec<f64>,
    /// Zero when nothing on the grid is feasible.
    pub best_profit: f64,
    pub all_infeasible: bool,
    pub surface: Vec<GridPoint>,
}

/// Evaluates every point of the grid: `resolution` cells per continuous
/// axis (so `resolution + 1` samples) and every value of each integer axis.
/// Ties go to the lexicographically smallest point.
pub fn grid_oracle(world: &World, spec: &SearchSpec, resolution: usize) -> Result<GridResult> {
    spec.validate()?;
    if resolution < 3 {
        return Err(SimError::InvalidParameter(format!(
            "grid resolution must be at least 3, got {resolution}"
        )));
    }
    let mut axes: Vec<Vec<f64>> = spec
        .continuous
        .iter()
        .map(|a| linspace(a.lo, a.hi, resolution))
        .collect();
    axes.extend(spec.integer.iter().map(|a| (a.lo..=a.hi).map(f64::from).collect()));
    let points = cartesian(&axes);
    let evals = par_map(&points, |p| evaluate(world, spec.strategy, &spec.params_at(p)));

    let mut best: Option<usize> = None;
    for (i, e) in evals.iter().enumerate() {
        let s = e.score();
        let take = match best {
            None => s > f64::NEG_INFINITY,
            Some(b) => {
                let bs = evals[b].score();
                s > bs || (s == bs && points[i] < points[b])
            }
        };
        if take {
            best = Some(i);
        }
    }
    let surface: Vec<GridPoint> = points
        .iter()
        .zip(&evals)
        .map(|(p, e)| GridPoint {
            point: p.clone(),
            eval: *e,
        })
        .collect();
    Ok(match best {
        Some(b) => GridResult {
            best_params: spec.params_at(&points[b]),
            best_point: points[b].clone(),
            best_profit: evals[b].profit,
            all_infeasible: false,
            surface,
        },
        None => GridResult {
            best_params: spec.fixed.clone(),
            best_point: Vec::new(),
            best_profit: 0.0,
            all_infeasible: true,
            surface,
        },
    })
}

fn linspace(lo: f64, hi: f64, cells: usize) -> Vec<f64> {
    if lo == hi {
        return vec![lo];
    }
    (0..=cells)
        .map(|i| {
            if i == cells {
                hi
            } else {
                lo + (hi - lo) * i as f64 / cells as f64
            }
        })
        .collect()
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect()
    })
}

/// A refined one-dimensional maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Refined {
    pub x: f64,
    pub value: f64,
}

/// No strict increase may follow a strict decrease.
fn looks_unimodal(values: &[f64]) -> bool {
    let mut decreased = false;
    for w in values.windows(2) {
        if w[1] < w[0] {
            decreased = true;
        } else if w[1] > w[0] && decreased {
            return false;
        }
    }
    true
}

/// Golden-section maximization of `f` on `[lo, hi]` to [`REFINE_TOL`].
///
/// The bracket is first probed at a few evenly spaced points; a constant
/// profile returns the midpoint, and a profile that is visibly not
/// unimodal is narrowed by a finer grid before refining.
pub fn refine_1d(f: &impl Fn(f64) -> f64, lo: f64, hi: f64) -> Refined {
    refine_inner(f, lo, hi, 0)
}

fn refine_inner(f: &impl Fn(f64) -> f64, lo: f64, hi: f64, depth: u32) -> Refined {
    if hi <= lo {
        return Refined { x: lo, value: f(lo) };
    }
    let xs = linspace(lo, hi, UNIMODAL_SAMPLES - 1);
    let vs: Vec<f64> = xs.iter().map(|x| f(*x)).collect();
    if vs.iter().all(|v| *v == vs[0]) {
        let mid = 0.5 * (lo + hi);
        return Refined { x: mid, value: f(mid) };
    }
    let mut best = argmax(&xs, &vs);
    if !looks_unimodal(&vs) && depth < MAX_FALLBACK_DEPTH {
        let fine = linspace(lo, hi, FALLBACK_CELLS);
        let fv: Vec<f64> = fine.iter().map(|x| f(*x)).collect();
        let i = argmax_index(&fv);
        let a = fine[i.saturating_sub(1)];
        let b = fine[(i + 1).min(fine.len() - 1)];
        let inner = refine_inner(f, a, b, depth + 1);
        return pick(
            inner,
            Refined {
                x: fine[i],
                value: fv[i],
            },
        );
    }
    let (mut a, mut b) = (lo, hi);
    let tol = REFINE_TOL.max(4.0 * f64::EPSILON * lo.abs().max(hi.abs()));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    best = pick(best, pick(Refined { x: c, value: fc }, Refined { x: d, value: fd }));
    let mut iters = 0;
    while b - a > tol && iters < MAX_GOLDEN_ITERS {
        iters += 1;
        let go_left = if fc != fd { fc > fd } else { best.x <= d };
        if go_left {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            best = pick(best, Refined { x: c, value: fc });
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
            best = pick(best, Refined { x: d, value: fd });
        }
    }
    let mid = 0.5 * (a + b);
    pick(best, Refined { x: mid, value: f(mid) })
}

/// The higher of two points; ties go to the smaller argument.
fn pick(p: Refined, q: Refined) -> Refined {
    if q.value > p.value || (q.value == p.value && q.x < p.x) {
        q
    } else {
        p
    }
}

fn argmax_index(vs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in vs.iter().enumerate() {
        if *v > vs[best] {
            best = i;
        }
    }
    best
}

fn argmax(xs: &[f64], vs: &[f64]) -> Refined {
    let i = argmax_index(vs);
    Refined { x: xs[i], value: vs[i] }
}

/// Grid search followed by golden-section refinement around the best few
/// local maxima of the grid.
pub fn maximize_1d(f: &(impl Fn(f64) -> f64 + Sync), lo: f64, hi: f64, resolution: usize) -> Refined {
    let xs = linspace(lo, hi, resolution.max(2));
    let vs = par_map(&xs, |x| f(*x));
    let n = xs.len();
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&i| vs[i] > f64::NEG_INFINITY && (i == 0 || vs[i] >= vs[i - 1]) && (i + 1 == n || vs[i] >= vs[i + 1]))
        .collect();
    peaks.sort_by(|&i, &j| vs[j].total_cmp(&vs[i]).then(i.cmp(&j)));
    peaks.truncate(3);
    let mut best = argmax(&xs, &vs);
    for i in peaks {
        let a = xs[i.saturating_sub(1)];
        let b = xs[(i + 1).min(n - 1)];
        best = pick(best, refine_1d(f, a, b));
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegerSweep<T> {
    pub best: u32,
    pub value: f64,
    pub payload: T,
    pub scores: Vec<(u32, f64)>,
}

/// Evaluates every integer in `[lo, hi]`. `f` returns a score plus whatever
/// the caller wants back for the winner. Scores within [`TIE_TOL`]
/// relative go to the smallest value.
pub fn integer_sweep<T: Send>(lo: u32, hi: u32, f: impl Fn(u32) -> (f64, T) + Sync + Send) -> Result<IntegerSweep<T>> {
    if lo > hi {
        return Err(SimError::InvalidParameter(format!("empty integer range [{lo}, {hi}]")));
    }
    let values: Vec<u32> = (lo..=hi).collect();
    let results = par_map(&values, |v| f(*v));
    let scores: Vec<(u32, f64)> = values.iter().zip(&results).map(|(v, r)| (*v, r.0)).collect();
    let mut best = 0;
    for (i, (_, s)) in scores.iter().enumerate() {
        if better(*s, scores[best].1) {
            best = i;
        }
    }
    let value = scores[best].1;
    let payload = results.into_iter().nth(best).map(|r| r.1).expect("non-empty range");
    Ok(IntegerSweep {
        best: values[best],
        value,
        payload,
        scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    /// Grid cells per continuous axis before refinement.
    pub resolution: usize,
    /// Upper end of the multi-round sweep.
    pub max_rounds: u32,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            resolution: 32,
            max_rounds: MAX_SWEEP_ROUNDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub strategy: StrategyKind,
    pub params: StrategyParams,
    pub profit: f64,
    pub feasible: bool,
}

fn optimum(world: &World, kind: StrategyKind, params: StrategyParams) -> Optimum {
    let e = evaluate(world, kind, &params);
    Optimum {
        strategy: kind,
        params,
        profit: e.profit,
        feasible: e.feasible,
    }
}

/// Numerically maximizes the simulated profit of `kind`. Parameters present
/// in `fixed` are held; all others are searched.
pub fn optimize(world: &World, kind: StrategyKind, fixed: &StrategyParams, opts: &OptimizeOptions) -> Result<Optimum> {
    fixed.ensure_keys(kind.param_keys())?;
    match kind {
        StrategyKind::BorrowBuy => {
            if fixed.get("out_s").is_some() {
                return Ok(optimum(world, kind, fixed.clone()));
            }
            let inputs = BbInputs::from_world(world)?;
            let best = optimize_out_s(world, inputs.init_s, opts.resolution);
            Ok(optimum(world, kind, fixed.clone().with("out_s", best.x)))
        }
        StrategyKind::BorrowBuyMulti => {
            let hi = match fixed.get("rounds") {
                Some(r) => return Ok(optimum(world, kind, fixed.clone().with("rounds", r))),
                None => opts.max_rounds.max(1),
            };
            let sweep = integer_sweep(1, hi, |r| {
                let p = fixed.clone().with("rounds", f64::from(r));
                (evaluate(world, kind, &p).score(), ())
            })?;
            Ok(optimum(
                world,
                kind,
                fixed.clone().with("rounds", f64::from(sweep.best)),
            ))
        }
        StrategyKind::BorrowDonate | StrategyKind::BorrowDonateEnhanced => optimize_bd(world, kind, fixed, opts),
    }
}

/// Maximizes single-round profit over the purchase size. Beyond `init_s`
/// the borrow is capped and the profit is negative.
pub fn optimize_out_s(world: &World, init_s: f64, resolution: usize) -> Refined {
    let f = |x: f64| evaluate(world, StrategyKind::BorrowBuy, &StrategyParams::new().with("out_s", x)).score();
    maximize_1d(&f, 0.0, init_s.max(0.0), resolution)
}

/// Largest seed mint whose flashloan, before the donation, fits the
/// stable-side flash liquidity.
fn seed_mint_cap(world: &World, iter: u32, enhanced: bool) -> Result<f64> {
    let i = bd_inputs(world)?;
    let vault = world.vault().ok_or(SimError::MissingComponent("vault"))?;
    let budget = world.flashloans().map_or(0.0, |f| f.liquidity(&vault.underlying));
    let n = f64::from(iter);
    let fixed_collateral = if enhanced {
        (n * i.borrowable_ib + i.borrowable_s) / i.cr_s
    } else {
        n * i.borrowable_ib / i.cr_s
    };
    Ok((budget - fixed_collateral) / (1.0 + n / i.cr_s))
}

fn optimize_bd(world: &World, kind: StrategyKind, fixed: &StrategyParams, opts: &OptimizeOptions) -> Result<Optimum> {
    let enhanced = kind == StrategyKind::BorrowDonateEnhanced;
    let max_iter = fixed.get("max_iter").map_or(strategies::DEFAULT_MAX_ITER, |v| v as u32);
    let (lo, hi) = match fixed.get("iter") {
        Some(v) => (v as u32, v as u32),
        None => (1, max_iter),
    };
    // Only iter and the seed mint are searched here; the collateral and the
    // donation follow the closed-form coupling until the final refinement.
    let coupled = {
        let mut f = fixed.clone();
        f.0.remove("collateral_b");
        f.0.remove("donate");
        f
    };
    let sweep = integer_sweep(lo, hi, |iter| {
        let base = coupled.clone().with("iter", f64::from(iter));
        let m = match base.get("init_mint") {
            Some(m) => m,
            None => {
                let cap = match seed_mint_cap(world, iter, enhanced) {
                    Ok(c) if c > 0.0 => c,
                    _ => return (f64::NEG_INFINITY, base),
                };
                let f = |m: f64| evaluate(world, kind, &base.clone().with("init_mint", m)).score();
                maximize_1d(&f, 0.0, cap, opts.resolution).x
            }
        };
        let p = base.with("init_mint", m);
        (evaluate(world, kind, &p).score(), p)
    })?;
    let params = sweep.payload;
    let (iter, m) = (
        params.get("iter").unwrap_or(1.0) as u32,
        params.get("init_mint").unwrap_or(0.0),
    );
    let refined = match (fixed.get("collateral_b"), fixed.get("donate")) {
        (Some(c), Some(d)) => params.with("collateral_b", c).with("donate", d),
        _ => {
            let (c, d) = refine_collateral_and_donation(world, kind, iter, m)?;
            params
                .with("collateral_b", fixed.get("collateral_b").unwrap_or(c))
                .with("donate", fixed.get("donate").unwrap_or(d))
        }
    };
    Ok(optimum(world, kind, refined))
}

/// Searches B's collateral and the donation independently of the closed
/// form, holding iter and the seed mint. The outer search is over the
/// collateral; each outer point maximizes over the donation. Brackets span
/// twice the closed-form values.
pub fn refine_collateral_and_donation(
    world: &World,
    kind: StrategyKind,
    iter: u32,
    init_mint: f64,
) -> Result<(f64, f64)> {
    let enhanced = kind == StrategyKind::BorrowDonateEnhanced;
    let inputs = bd_inputs(world)?;
    let cf = formulas::bd_formula(&inputs, iter, init_mint, enhanced)?;
    let base = StrategyParams::new()
        .with("iter", f64::from(iter))
        .with("init_mint", init_mint);
    let c_hi = 2.0 * cf.collateral_b.max(1.0);
    let d_hi = 2.0 * cf.donate.max(1.0);
    let inner = |c: f64| {
        let g = |d: f64| {
            let p = base.clone().with("collateral_b", c).with("donate", d);
            evaluate(world, kind, &p).score()
        };
        refine_1d(&g, 0.0, d_hi)
    };
    let outer = refine_1d(&|c| inner(c).value, 0.0, c_hi);
    Ok((outer.x, inner(outer.x).x))
}
