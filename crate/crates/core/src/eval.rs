//! Retrieval metrics, loss tables and the bias-term diagnostics.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::codes::SignMatrix;
use crate::dataset::LabelArray;
use crate::error::{Error, Result};
use crate::index::{counting_rank, CodeIndex, PackedCodes};
use crate::linalg;
use crate::sdh::{classification_loss, projection_loss, w_step, ObjectiveBreakdown};

/// Largest `N` for which the `N x N` diagnostic grids are materialized.
pub const DIAGNOSTICS_MAX_SAMPLES: usize = 5000;

/// How a query that retrieves nothing at the radius enters the precision mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroRetrieval {
    /// Precision 0 for that query.
    #[default]
    CountAsZero,
    /// Query left out of the precision and recall means.
    Skip,
}

impl FromStr for ZeroRetrieval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::CountAsZero),
            "skip" => Ok(Self::Skip),
            other => Err(Error::invalid(format!(
                "unknown zero-retrieval policy {other:?}, expected zero or skip"
            ))),
        }
    }
}

impl std::fmt::Display for ZeroRetrieval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::CountAsZero => "zero",
            Self::Skip => "skip",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryDetail {
    pub retrieved: usize,
    pub relevant_retrieved: usize,
    /// Database items sharing the query's label.
    pub relevant_total: usize,
    pub precision: f64,
    pub recall: f64,
    pub average_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub radius: u32,
    pub queries: usize,
    pub database: usize,
    pub bits: usize,
    pub policy: ZeroRetrieval,
    pub precision_at_radius: f64,
    pub recall_at_radius: f64,
    /// Queries that retrieved nothing within the radius.
    pub empty_queries: usize,
    pub map: f64,
    /// `(recall, precision)` per Hamming threshold `0..=bits`.
    pub pr_curve: Vec<(f64, f64)>,
    pub per_query: Option<Vec<QueryDetail>>,
    /// `(sdh, fsdh)`.
    pub losses: Option<(ObjectiveBreakdown, ObjectiveBreakdown)>,
}

fn check_queries(index: &CodeIndex, queries: &PackedCodes, labels: &LabelArray) -> Result<()> {
    if index.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if queries.bits() != index.codes().bits() {
        return Err(Error::DimensionMismatch {
            what: "query code length vs database code length",
            expected: index.codes().bits(),
            actual: queries.bits(),
        });
    }
    if queries.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "query label count vs query count",
            expected: queries.len(),
            actual: labels.len(),
        });
    }
    Ok(())
}

struct Accumulator {
    bits: usize,
    radius: u32,
    policy: ZeroRetrieval,
    precision_sum: f64,
    recall_sum: f64,
    counted: usize,
    empty: usize,
    ap_sum: f64,
    curve_recall: Vec<f64>,
    curve_precision: Vec<f64>,
    curve_counted: Vec<usize>,
    details: Vec<QueryDetail>,
}

impl Accumulator {
    fn new(bits: usize, radius: u32, policy: ZeroRetrieval) -> Self {
        Self {
            bits,
            radius,
            policy,
            precision_sum: 0.0,
            recall_sum: 0.0,
            counted: 0,
            empty: 0,
            ap_sum: 0.0,
            curve_recall: vec![0.0; bits + 1],
            curve_precision: vec![0.0; bits + 1],
            curve_counted: vec![0; bits + 1],
            details: Vec::new(),
        }
    }

    /// `dist[i]` is the distance to database item `i`; `relevant[i]` its label match.
    fn add(&mut self, dist: &[u32], relevant: &[bool]) -> Result<()> {
        let relevant_total = relevant.iter().filter(|&&r| r).count();
        let mut hist_all = vec![0usize; self.bits + 1];
        let mut hist_rel = vec![0usize; self.bits + 1];
        for (&d, &r) in dist.iter().zip(relevant) {
            hist_all[d as usize] += 1;
            if r {
                hist_rel[d as usize] += 1;
            }
        }

        let (mut all, mut rel) = (0usize, 0usize);
        let mut at_radius = (0usize, 0usize);
        for t in 0..=self.bits {
            all += hist_all[t];
            rel += hist_rel[t];
            if t as u32 == self.radius.min(self.bits as u32) {
                at_radius = (all, rel);
            }
            if relevant_total > 0 {
                self.curve_recall[t] += rel as f64 / relevant_total as f64;
            }
            if all > 0 {
                self.curve_precision[t] += rel as f64 / all as f64;
                self.curve_counted[t] += 1;
            } else if self.policy == ZeroRetrieval::CountAsZero {
                self.curve_counted[t] += 1;
            }
        }

        let (retrieved, relevant_retrieved) = at_radius;
        let precision = if retrieved > 0 {
            relevant_retrieved as f64 / retrieved as f64
        } else {
            0.0
        };
        let recall = if relevant_total > 0 {
            relevant_retrieved as f64 / relevant_total as f64
        } else {
            0.0
        };
        if retrieved == 0 {
            self.empty += 1;
        }
        if retrieved > 0 || self.policy == ZeroRetrieval::CountAsZero {
            self.precision_sum += precision;
            self.recall_sum += recall;
            self.counted += 1;
        }

        let average_precision = if relevant_total > 0 {
            let order = counting_rank(dist, self.bits);
            average_precision(order.iter().map(|&i| relevant[i]), relevant_total)
        } else {
            f64::NAN
        };
        self.ap_sum += average_precision;
        self.details.push(QueryDetail {
            retrieved,
            relevant_retrieved,
            relevant_total,
            precision,
            recall,
            average_precision,
        });
        Ok(())
    }
}

/// `(1/R) * sum over relevant ranks k of (relevant so far / k)`.
fn average_precision(ranked_relevance: impl Iterator<Item = bool>, relevant_total: usize) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, rel) in ranked_relevance.enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
            if hits == relevant_total {
                break;
            }
        }
    }
    sum / relevant_total as f64
}

/// Every metric in one pass over the queries.
///
/// Queries whose label does not occur in the database are rejected since
/// their average precision is undefined.
pub fn evaluate(
    index: &CodeIndex,
    queries: &PackedCodes,
    query_labels: &LabelArray,
    radius: u32,
    policy: ZeroRetrieval,
    keep_details: bool,
) -> Result<EvalReport> {
    check_queries(index, queries, query_labels)?;
    let bits = index.codes().bits();
    let db_labels = index.labels().as_slice();
    let mut acc = Accumulator::new(bits, radius, policy);
    let mut relevant = vec![false; index.len()];
    for q in 0..queries.len() {
        let y = query_labels.get(q);
        for (r, &l) in relevant.iter_mut().zip(db_labels) {
            *r = l == y;
        }
        if !relevant.contains(&true) {
            return Err(Error::invalid(format!(
                "query {q} has label {y}, which does not occur in the database"
            )));
        }
        let dist = index.distances(queries.code(q))?;
        acc.add(&dist, &relevant)?;
    }
    let nq = queries.len().max(1) as f64;
    let mean = |sum: f64, n: usize| if n > 0 { sum / n as f64 } else { 0.0 };
    let pr_curve = (0..=bits)
        .map(|t| (acc.curve_recall[t] / nq, mean(acc.curve_precision[t], acc.curve_counted[t])))
        .collect();
    Ok(EvalReport {
        radius,
        queries: queries.len(),
        database: index.len(),
        bits,
        policy,
        precision_at_radius: mean(acc.precision_sum, acc.counted),
        recall_at_radius: mean(acc.recall_sum, acc.counted),
        empty_queries: acc.empty,
        map: acc.ap_sum / nq,
        pr_curve,
        per_query: keep_details.then_some(acc.details),
        losses: None,
    })
}

/// Mean precision and recall of radius retrieval.
pub fn precision_recall_at_radius(
    index: &CodeIndex,
    queries: &PackedCodes,
    query_labels: &LabelArray,
    radius: u32,
    policy: ZeroRetrieval,
) -> Result<(f64, f64)> {
    check_queries(index, queries, query_labels)?;
    let db_labels = index.labels().as_slice();
    let (mut p, mut r, mut n) = (0.0, 0.0, 0usize);
    for q in 0..queries.len() {
        let y = query_labels.get(q);
        let relevant_total = db_labels.iter().filter(|&&l| l == y).count();
        let hits = index.radius_search(queries.code(q), radius)?;
        if hits.is_empty() && policy == ZeroRetrieval::Skip {
            continue;
        }
        let good = hits.iter().filter(|h| db_labels[h.0] == y).count();
        if !hits.is_empty() {
            p += good as f64 / hits.len() as f64;
        }
        if relevant_total > 0 {
            r += good as f64 / relevant_total as f64;
        }
        n += 1;
    }
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((p / n as f64, r / n as f64))
}

/// Mean average precision over the full Hamming ranking.
pub fn mean_average_precision(
    index: &CodeIndex,
    queries: &PackedCodes,
    query_labels: &LabelArray,
) -> Result<f64> {
    Ok(evaluate(index, queries, query_labels, 0, ZeroRetrieval::CountAsZero, false)?.map)
}

/// Averaged `(recall, precision)` at each Hamming threshold `0..=L`.
pub fn pr_curve(
    index: &CodeIndex,
    queries: &PackedCodes,
    query_labels: &LabelArray,
    policy: ZeroRetrieval,
) -> Result<Vec<(f64, f64)>> {
    Ok(evaluate(index, queries, query_labels, 0, policy, false)?.pr_curve)
}

impl EvalReport {
    /// `key=value` lines.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "bits={}", self.bits);
        let _ = writeln!(s, "database={}", self.database);
        let _ = writeln!(s, "queries={}", self.queries);
        let _ = writeln!(s, "radius={}", self.radius);
        let _ = writeln!(s, "zero_retrieval={}", self.policy);
        let _ = writeln!(s, "empty_queries={}", self.empty_queries);
        let _ = writeln!(s, "precision_at_radius={:.6}", self.precision_at_radius);
        let _ = writeln!(s, "recall_at_radius={:.6}", self.recall_at_radius);
        let _ = writeln!(s, "map={:.6}", self.map);
        if let Some((sdh, fsdh)) = &self.losses {
            let _ = writeln!(s, "sdh_w_loss={:.9}", sdh.classification_term);
            let _ = writeln!(s, "sdh_p_loss={:.9}", sdh.p_loss);
            let _ = writeln!(s, "fsdh_w_loss={:.9}", fsdh.classification_term);
            let _ = writeln!(s, "fsdh_p_loss={:.9}", fsdh.p_loss);
        }
        s
    }

    pub fn pr_curve_csv(&self) -> String {
        let mut s = String::from("threshold,recall,precision\n");
        for (t, (r, p)) in self.pr_curve.iter().enumerate() {
            let _ = writeln!(s, "{t},{r:.9},{p:.9}");
        }
        s
    }

    /// Per-query CSV, empty header-only when details were not kept.
    pub fn per_query_csv(&self) -> String {
        let mut s = String::from(
            "query,retrieved,relevant_retrieved,relevant_total,precision,recall,average_precision\n",
        );
        for (q, d) in self.per_query.iter().flatten().enumerate() {
            let _ = writeln!(
                s,
                "{q},{},{},{},{:.9},{:.9},{:.9}",
                d.retrieved, d.relevant_retrieved, d.relevant_total, d.precision, d.recall, d.average_precision
            );
        }
        s
    }
}

/// Output of [`bias_term_diagnostics`]; grids are in label-sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasDiagnostics {
    /// Sample ids in grid order (stable sort by label).
    pub order: Vec<usize>,
    /// `K = X^T (X X^T + jitter I)^-1 X`, `N x N`.
    pub k_matrix: DMatrix<f64>,
    /// `B^T B`, `N x N`.
    pub btb: DMatrix<f64>,
    /// `Tr(B^T B)`; `L * N` for sign codes.
    pub trace_btb: f64,
    /// `Tr(B K B^T)` by direct evaluation.
    pub trace_bkb: f64,
    /// `L * sum_i sum_k (sum_{j in class k} K_ij)^2`; only defined when
    /// `B^T B = L` on same-label pairs and 0 elsewhere.
    pub trace_grouped: Option<f64>,
}

impl BiasDiagnostics {
    /// `Tr(B^T B) - Tr(B K B^T)`, which equals `||B - P^T X||^2` for the
    /// least-squares `P` when `jitter = 0`.
    pub fn bias_from_traces(&self) -> f64 {
        self.trace_btb - self.trace_bkb
    }

    pub fn grid_csv(grid: &DMatrix<f64>) -> String {
        let mut s = String::new();
        for row in grid.row_iter() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

/// Materializes `K` and `B^T B` for heatmaps and evaluates `Tr(B K B^T)`.
pub fn bias_term_diagnostics(
    features: &DMatrix<f64>,
    codes: &SignMatrix,
    labels: &LabelArray,
    jitter: f64,
) -> Result<BiasDiagnostics> {
    let n = features.ncols();
    if n > DIAGNOSTICS_MAX_SAMPLES {
        return Err(Error::BudgetExceeded {
            what: "diagnostic sample count",
            requested: n,
            limit: DIAGNOSTICS_MAX_SAMPLES,
        });
    }
    if codes.ncols() != n || labels.len() != n {
        return Err(Error::DimensionMismatch {
            what: "codes/labels vs sample count",
            expected: n,
            actual: if codes.ncols() != n { codes.ncols() } else { labels.len() },
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| labels.get(i));
    let x = DMatrix::from_fn(features.nrows(), n, |r, c| features[(r, order[c])]);
    let b = DMatrix::from_fn(codes.nrows(), n, |r, c| f64::from(codes[(r, order[c])]));
    let y: Vec<usize> = order.iter().map(|&i| labels.get(i)).collect();

    let solved = linalg::spd_solve(&linalg::gram(&x), jitter, &x, "diagnostics X X^T")?;
    let mut k = linalg::tr_mul(&x, &solved);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let btb = linalg::tr_mul(&b, &b);
    let trace_btb = linalg::trace(&btb);
    let trace_bkb = k.iter().zip(btb.iter()).map(|(a, b)| a * b).sum();

    let l = codes.nrows() as f64;
    let class_orthogonal = (0..n).all(|i| (0..n).all(|j| btb[(i, j)] == if y[i] == y[j] { l } else { 0.0 }));
    let trace_grouped = class_orthogonal.then(|| {
        let mut total = 0.0;
        for i in 0..n {
            let mut start = 0;
            while start < n {
                let mut end = start;
                let mut s = 0.0;
                while end < n && y[end] == y[start] {
                    s += k[(i, end)];
                    end += 1;
                }
                total += s * s;
                start = end;
            }
        }
        l * total
    });
    Ok(BiasDiagnostics {
        order,
        k_matrix: k,
        btb,
        trace_btb,
        trace_bkb,
        trace_grouped,
    })
}

/// W-loss and P-loss of one trained method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodLosses {
    /// `||Y - W^T B||^2` with `W` the exact ridge fit to `B`.
    pub w_loss: f64,
    /// `||B - P^T X||^2`.
    pub p_loss: f64,
}

/// Losses of codes `B` with projection `P`; `W` is refitted by the W-step.
pub fn method_losses(
    codes: &SignMatrix,
    projection: &DMatrix<f64>,
    features: &DMatrix<f64>,
    labels: &LabelArray,
    classes: usize,
    lambda: f64,
) -> Result<MethodLosses> {
    if projection.shape() != (features.nrows(), codes.nrows()) {
        return Err(Error::DimensionMismatch {
            what: "projection rows vs feature dimension",
            expected: features.nrows(),
            actual: projection.nrows(),
        });
    }
    let w = w_step(codes, labels, classes, lambda)?;
    let b = codes.map(f64::from);
    Ok(MethodLosses {
        w_loss: classification_loss(&w, &b, labels)?,
        p_loss: projection_loss(projection, features, &b),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub bits: usize,
    pub sdh: MethodLosses,
    pub fsdh: MethodLosses,
}

pub fn loss_row(bits: usize, sdh: MethodLosses, fsdh: MethodLosses) -> LossRow {
    LossRow { bits, sdh, fsdh }
}

pub fn loss_table_csv(rows: &[LossRow]) -> String {
    let mut s = String::from("bits,sdh_w_loss,fsdh_w_loss,sdh_p_loss,fsdh_p_loss\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.9},{:.9},{:.9},{:.9}",
            r.bits, r.sdh.w_loss, r.fsdh.w_loss, r.sdh.p_loss, r.fsdh.p_loss
        );
    }
    s
}
