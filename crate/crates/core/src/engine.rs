//! Batched search driver: select, sample, evaluate once, divide, repeat.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::estimator::{self, BoundMode, SlopeState};
use crate::partition::{ParamSpace, Partition, PointKey, MAX_DEPTH};
use crate::selection::{select_po, SizeGroups};

/// Header line written above every trace CSV.
pub const TRACE_SCHEMA: &str = "# geoverify trace v1";

#[derive(Debug, Error)]
#[error("{0}")]
pub struct ObjectiveError(pub String);

/// Black-box objective evaluated on batches of physical points.
///
/// Implementations must return one value per point, in request order.
pub trait Objective {
    fn evaluate(&self, points: &[Vec<f64>]) -> std::result::Result<Vec<f64>, ObjectiveError>;
}

impl<T: Objective + ?Sized> Objective for &T {
    fn evaluate(&self, points: &[Vec<f64>]) -> std::result::Result<Vec<f64>, ObjectiveError> {
        (**self).evaluate(points)
    }
}

/// Adapts a per-point closure.
pub struct Pointwise<F>(pub F);

impl<F: Fn(&[f64]) -> f64> Objective for Pointwise<F> {
    fn evaluate(&self, points: &[Vec<f64>]) -> std::result::Result<Vec<f64>, ObjectiveError> {
        Ok(points.iter().map(|p| (self.0)(p)).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    /// `T`: iterations.
    pub max_iters: usize,
    /// `Q`: queries; checked before each batch, so one batch may overshoot.
    pub max_queries: usize,
    /// `D`: trisections per dimension.
    pub max_depth: u32,
    /// `α`: candidates per size group.
    pub alpha: usize,
    /// `τ`: relative improvement tolerance.
    pub tau: f64,
    pub bound: BoundMode,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            max_iters: 150,
            max_queries: 2000,
            max_depth: 6,
            alpha: 2,
            tau: 1e-4,
            bound: BoundMode::Estimated,
        }
    }
}

impl BudgetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidBudget(m.to_string()));
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1");
        }
        if self.max_queries < 1 {
            return bad("max_queries must be at least 1");
        }
        if self.max_depth < 1 || self.max_depth > MAX_DEPTH {
            return Err(Error::InvalidBudget(format!(
                "max_depth must be in 1..={MAX_DEPTH}"
            )));
        }
        if self.alpha < 1 {
            return bad("alpha must be at least 1");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be positive");
        }
        if let BoundMode::Certified { lipschitz } = self.bound {
            if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
                return bad("lipschitz constant must be finite and non-negative");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Cumulative objective evaluations, including the initial centre.
    pub queries: usize,
    pub l_min: f64,
    /// Physical coordinates of the best centre.
    pub c_min: Vec<f64>,
    /// Physical half side lengths of the rect around `c_min`.
    pub half_widths: Vec<f64>,
    pub l_star_min: f64,
    pub k_hat_max: f64,
    /// Rects divided in this iteration.
    pub n_po: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    MaxIterations,
    MaxQueries,
    /// Every rect reached the depth limit.
    Exhausted,
    ObjectiveFailed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
}

impl RunTrace {
    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn l_min(&self) -> f64 {
        self.last().map_or(f64::INFINITY, |r| r.l_min)
    }

    pub fn l_star_min(&self) -> f64 {
        self.last().map_or(f64::NEG_INFINITY, |r| r.l_star_min)
    }

    pub fn c_min(&self) -> &[f64] {
        self.last().map_or(&[], |r| r.c_min.as_slice())
    }

    pub fn queries(&self) -> usize {
        self.last().map_or(0, |r| r.queries)
    }

    pub fn iterations(&self) -> usize {
        self.last().map_or(0, |r| r.iteration)
    }

    /// Line-per-iteration CSV preceded by [`TRACE_SCHEMA`].
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(TRACE_SCHEMA);
        out.push('\n');
        out.push_str("iteration,queries,l_min,l_star_min,k_hat_max,n_po\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iteration, r.queries, r.l_min, r.l_star_min, r.k_hat_max, r.n_po
            );
        }
        out
    }
}

/// Robustness verdict for a margin objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Verdict {
    /// Some queried transformation has negative margin.
    Falsified { witness: Vec<f64>, margin: f64 },
    /// The lower-bound estimate is positive at termination.
    VerifiedEstimate,
    Undecided,
}

impl Verdict {
    pub fn from_trace(trace: &RunTrace) -> Self {
        if trace.l_min() < 0.0 {
            Verdict::Falsified {
                witness: trace.c_min().to_vec(),
                margin: trace.l_min(),
            }
        } else if trace.l_star_min() > 0.0 {
            Verdict::VerifiedEstimate
        } else {
            Verdict::Undecided
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Falsified { .. } => "falsified",
            Verdict::VerifiedEstimate => "verified-estimate",
            Verdict::Undecided => "undecided",
        }
    }
}

/// Structured summary emitted next to the trace CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub verdict: Verdict,
    pub l_min: f64,
    pub l_star_min: f64,
    pub c_min: Vec<f64>,
    pub queries: usize,
    pub iterations: usize,
    pub termination: Termination,
}

impl RunSummary {
    pub fn new(trace: &RunTrace) -> Self {
        Self {
            verdict: Verdict::from_trace(trace),
            l_min: trace.l_min(),
            l_star_min: trace.l_star_min(),
            c_min: trace.c_min().to_vec(),
            queries: trace.queries(),
            iterations: trace.iterations(),
            termination: trace.termination,
        }
    }
}

struct Search<'a, O: Objective> {
    objective: O,
    space: &'a ParamSpace,
    budget: BudgetConfig,
    partition: Partition,
    cache: HashMap<PointKey, f64>,
    slopes: SlopeState,
    best: usize,
    queries: usize,
    records: Vec<IterationRecord>,
}

impl<O: Objective> Search<'_, O> {
    fn fail(&self, message: String) -> Error {
        Error::ObjectiveFailed {
            message,
            partial: Box::new(RunTrace {
                records: self.records.clone(),
                termination: Termination::ObjectiveFailed,
            }),
        }
    }

    fn query(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        let values = self
            .objective
            .evaluate(points)
            .map_err(|e| self.fail(e.0))?;
        if values.len() != points.len() {
            return Err(self.fail(format!(
                "objective returned {} values for {} points",
                values.len(),
                points.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(self.fail(format!("non-finite objective value at batch index {i}")));
        }
        Ok(values)
    }

    fn record(&mut self, iteration: usize, n_po: usize) {
        let best = self.partition.rect(self.best);
        let l_star_min =
            estimator::lower_bound(best, self.slopes.k_hat_max(), self.space, self.budget.bound);
        self.records.push(IterationRecord {
            iteration,
            queries: self.queries,
            l_min: best.value,
            c_min: self.space.to_physical(&best.center()),
            half_widths: (0..best.dim())
                .map(|i| 0.5 * best.side(i) * self.space.width(i))
                .collect(),
            l_star_min,
            k_hat_max: self.slopes.k_hat_max(),
            n_po,
        });
    }

    fn select(&self) -> Vec<usize> {
        let groups = SizeGroups::from_partition(&self.partition);
        let l_min = self.partition.rect(self.best).value;
        select_po(
            &groups,
            self.budget.alpha,
            self.budget.tau,
            l_min,
            self.budget.max_depth,
        )
    }

    fn iterate(&mut self, po: &[usize]) -> Result<usize> {
        // Gather every sample of every PO rect into one batch.
        let mut plan = Vec::with_capacity(po.len());
        let mut batch: Vec<Vec<f64>> = Vec::new();
        let mut batch_keys: HashMap<PointKey, usize> = HashMap::new();
        for &id in po {
            let samples = self.partition.sample_points(id, self.budget.max_depth);
            if samples.is_empty() {
                continue;
            }
            for s in &samples {
                let key = s.key();
                if !self.cache.contains_key(&key) && !batch_keys.contains_key(&key) {
                    batch_keys.insert(key, batch.len());
                    batch.push(self.space.to_physical(&s.point));
                }
            }
            plan.push((id, samples));
        }
        let values = self.query(&batch)?;
        self.queries += batch.len();
        for (key, i) in batch_keys {
            self.cache.insert(key, values[i]);
        }

        for (id, samples) in &plan {
            let parent = self.partition.rect(*id).clone();
            let sample_values: Vec<f64> = samples.iter().map(|s| self.cache[&s.key()]).collect();
            let measured: Vec<(f64, f64)> = samples
                .iter()
                .zip(&sample_values)
                .map(|(s, &v)| (v, estimator::sample_distance(self.space, parent.side(s.dim), s.dim)))
                .collect();
            let slope = estimator::local_slope(parent.value, &measured).max(parent.local_slope);
            let division = self.partition.divide(*id, &sample_values)?;
            self.partition.set_local_slope(division.center, slope);
            self.slopes.observe(slope);
            if self.best == *id {
                self.best = division.center;
            }
            let mut sides = division.sides.clone();
            sides.sort_unstable();
            for side in sides {
                if self.partition.rect(side).value < self.partition.rect(self.best).value {
                    self.best = side;
                }
            }
        }
        Ok(plan.len())
    }
}

/// Runs the search over `space` until the iteration budget, the query budget
/// or the depth limit is exhausted.
///
/// The unit-cube centre is always the first query. On objective failure the
/// error carries the trace recorded so far.
pub fn run<O: Objective>(objective: O, space: &ParamSpace, budget: &BudgetConfig) -> Result<RunTrace> {
    budget.validate()?;
    let n = space.dim();
    let mut search = Search {
        objective,
        space,
        budget: *budget,
        partition: Partition::unit(n, 0.0),
        cache: HashMap::new(),
        slopes: SlopeState::default(),
        best: 0,
        queries: 0,
        records: Vec::new(),
    };
    let v0 = search.query(&[space.to_physical(&vec![0.5; n])])?[0];
    search.partition.set_value(0, v0);
    search.cache.insert(search.partition.rect(0).center_key(), v0);
    search.queries = 1;
    search.record(0, 0);

    let mut po = search.select();
    let mut t = 0;
    let termination = loop {
        if t >= budget.max_iters {
            break Termination::MaxIterations;
        }
        if search.queries >= budget.max_queries {
            break Termination::MaxQueries;
        }
        if po.is_empty() {
            break Termination::Exhausted;
        }
        t += 1;
        let divided = search.iterate(&po)?;
        search.record(t, divided);
        po = search.select();
    };
    Ok(RunTrace {
        records: search.records,
        termination,
    })
}

/// Result of [`verify`].
#[derive(Clone, Debug, PartialEq)]
pub struct Verification {
    pub verdict: Verdict,
    pub trace: RunTrace,
}

/// Runs the search on a margin objective and classifies the outcome.
pub fn verify<O: Objective>(objective: O, space: &ParamSpace, budget: &BudgetConfig) -> Result<Verification> {
    let trace = run(objective, space, budget)?;
    Ok(Verification {
        verdict: Verdict::from_trace(&trace),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit1() -> ParamSpace {
        ParamSpace::new(&[(0.0, 1.0)]).unwrap()
    }

    #[test]
    fn constant_objective_exhausts() {
        let budget = BudgetConfig {
            max_iters: 10,
            max_queries: 10_000,
            max_depth: 2,
            alpha: 1,
            ..Default::default()
        };
        let trace = run(Pointwise(|_: &[f64]| 0.0), &unit1(), &budget).unwrap();
        assert_eq!(trace.termination, Termination::Exhausted);
        assert!(trace.queries() <= 9);
        for r in &trace.records {
            assert_eq!(r.l_min, 0.0);
            assert_eq!(r.l_star_min, 0.0);
        }
    }

    #[test]
    fn abs_minimum_located() {
        let budget = BudgetConfig {
            max_iters: 50,
            max_queries: 100_000,
            max_depth: 6,
            alpha: 1,
            ..Default::default()
        };
        let trace = run(Pointwise(|t: &[f64]| (t[0] - 0.3).abs()), &unit1(), &budget).unwrap();
        assert!(trace.l_min() <= 3f64.powi(-6), "{}", trace.l_min());
    }

    #[test]
    fn first_query_is_centre() {
        let space = ParamSpace::new(&[(-20.0, 20.0), (0.9, 1.1)]).unwrap();
        let seen = std::cell::RefCell::new(Vec::new());
        let obj = Pointwise(|p: &[f64]| {
            seen.borrow_mut().push(p.to_vec());
            p[0].abs()
        });
        let budget = BudgetConfig { max_iters: 1, ..Default::default() };
        run(&obj, &space, &budget).unwrap();
        assert_eq!(seen.borrow()[0], vec![0.0, 1.0]);
    }

    #[test]
    fn budget_validation() {
        let bad = [
            BudgetConfig { max_iters: 0, ..Default::default() },
            BudgetConfig { max_queries: 0, ..Default::default() },
            BudgetConfig { max_depth: 0, ..Default::default() },
            BudgetConfig { alpha: 0, ..Default::default() },
            BudgetConfig { tau: 0.0, ..Default::default() },
        ];
        for b in bad {
            assert!(matches!(b.validate(), Err(Error::InvalidBudget(_))));
        }
    }

    #[test]
    fn query_budget_checked_before_batch() {
        let budget = BudgetConfig {
            max_iters: 1000,
            max_queries: 5,
            max_depth: 8,
            alpha: 3,
            ..Default::default()
        };
        let space = ParamSpace::new(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let trace = run(Pointwise(|p: &[f64]| p[0] * p[1]), &space, &budget).unwrap();
        assert_eq!(trace.termination, Termination::MaxQueries);
        let before_last = trace.records[trace.records.len() - 2].queries;
        assert!(before_last < 5);
    }

    struct Failing;
    impl Objective for Failing {
        fn evaluate(&self, points: &[Vec<f64>]) -> std::result::Result<Vec<f64>, ObjectiveError> {
            if points.len() == 1 {
                Ok(vec![1.0])
            } else {
                Err(ObjectiveError("model crashed".into()))
            }
        }
    }

    #[test]
    fn objective_failure_keeps_partial_trace() {
        match run(Failing, &unit1(), &BudgetConfig::default()) {
            Err(Error::ObjectiveFailed { message, partial }) => {
                assert_eq!(message, "model crashed");
                assert_eq!(partial.records.len(), 1);
                assert_eq!(partial.termination, Termination::ObjectiveFailed);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_aborts() {
        let r = run(Pointwise(|p: &[f64]| if p[0] < 0.4 { f64::NAN } else { 1.0 }), &unit1(), &BudgetConfig::default());
        assert!(matches!(r, Err(Error::ObjectiveFailed { .. })));
    }

    #[test]
    fn verdicts() {
        let budget = BudgetConfig {
            max_iters: 60,
            max_queries: 10_000,
            max_depth: 6,
            alpha: 1,
            ..Default::default()
        };
        let v = verify(Pointwise(|_: &[f64]| 1.0), &unit1(), &budget).unwrap();
        assert_eq!(v.verdict, Verdict::VerifiedEstimate);
        assert_eq!(v.trace.l_star_min(), 1.0);

        let v = verify(Pointwise(|t: &[f64]| (t[0] - 0.3).abs() - 0.1), &unit1(), &budget).unwrap();
        match v.verdict {
            Verdict::Falsified { witness, margin } => {
                assert!(margin < 0.0);
                assert!((witness[0] - 0.3).abs() < 0.1);
            }
            other => panic!("expected falsified, got {other:?}"),
        }
    }

    #[test]
    fn small_positive_margin_with_steep_slope_is_undecided() {
        // ℓ_min stays 0.05 at depth 1, but the sampled slope drags ℓ* below 0.
        let budget = BudgetConfig {
            max_iters: 5,
            max_queries: 100,
            max_depth: 1,
            alpha: 1,
            ..Default::default()
        };
        let f = |t: &[f64]| 0.05 + 1.26 * (t[0] - 0.5).abs();
        let v = verify(Pointwise(f), &unit1(), &budget).unwrap();
        assert!((v.trace.l_min() - 0.05).abs() < 1e-12);
        assert!((v.trace.l_star_min() + 0.02).abs() < 1e-9);
        assert_eq!(v.verdict, Verdict::Undecided);
    }

    #[test]
    fn csv_has_schema_and_header() {
        let budget = BudgetConfig { max_iters: 2, ..Default::default() };
        let trace = run(Pointwise(|t: &[f64]| t[0]), &unit1(), &budget).unwrap();
        let csv = trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(TRACE_SCHEMA));
        assert_eq!(lines.next(), Some("iteration,queries,l_min,l_star_min,k_hat_max,n_po"));
        assert_eq!(lines.count(), trace.records.len());
    }
}
