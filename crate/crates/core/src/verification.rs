//! Warm-up threshold calibration, accept/reject, and ROC evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codeword::SecretAssignment;
use crate::error::{Error, Result};
use crate::losses::correlation;
use crate::model::{forward_lenient, ForwardTrace, ModelParams};
use crate::rng::stream_rng;
use crate::synth::UserDataset;

pub const FPR_TARGETS: [f64; 3] = [0.01, 0.05, 0.1];

/// What a user's verifier compares the model output against.
#[derive(Debug, Clone, PartialEq)]
pub enum Verifier {
    /// Bipolar secret codeword; score is `v . sigma(W g(x)) / c`.
    Codeword(Vec<f64>),
    /// Projection row used as a class embedding; score is the cosine with
    /// `g(x)`.
    Class(usize),
}

impl Verifier {
    pub fn from_secret(secret: &SecretAssignment) -> Self {
        Verifier::Codeword(secret.bipolar().to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: f64,
    /// The model output had zero norm; the score is reported as 0.
    pub degenerate: bool,
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    (na > 0.0 && nb > 0.0).then(|| dot(a, b) / (na * nb))
}

/// Scores an already computed forward pass.
pub fn score_trace(
    params: &ModelParams,
    trace: &ForwardTrace,
    verifier: &Verifier,
) -> Result<Score> {
    let value = match verifier {
        Verifier::Codeword(v) => {
            if v.len() != trace.scaled.len() {
                return Err(Error::DimensionMismatch {
                    expected: trace.scaled.len(),
                    actual: v.len(),
                });
            }
            if trace.is_degenerate() {
                None
            } else {
                Some(correlation(&trace.scaled, v))
            }
        }
        Verifier::Class(y) => {
            if *y >= params.rows() {
                return Err(Error::IndexOutOfRange {
                    index: *y,
                    len: params.rows(),
                });
            }
            cosine(trace.embedding(), params.projection_row(*y))
        }
    };
    Ok(match value {
        Some(v) => Score {
            value: v.clamp(-1.0, 1.0),
            degenerate: false,
        },
        None => Score {
            value: 0.0,
            degenerate: true,
        },
    })
}

pub fn score(params: &ModelParams, verifier: &Verifier, x: &[f64]) -> Result<Score> {
    score_trace(params, &forward_lenient(params, x)?, verifier)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub tau: f64,
    pub q: f64,
    pub n: usize,
}

/// Rank of the threshold among the sorted warm-up scores. The small slack
/// absorbs rounding in `1 - q` (e.g. `10 * (1 - 0.9)` is just below 1).
pub fn warmup_rank(n: usize, q: f64) -> usize {
    ((n as f64 * (1.0 - q)) + 1e-9).floor().max(0.0) as usize
}

/// Threshold from raw warm-up scores: the `i`-th smallest with
/// `i = floor(n (1 - q))`, or -1 when `i = 0`.
pub fn threshold_from_scores(scores: &[f64], q: f64) -> Result<Threshold> {
    if scores.is_empty() {
        return Err(Error::EmptyWarmupSet);
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "q must be in (0, 1], got {q}"
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let i = warmup_rank(sorted.len(), q).min(sorted.len());
    let tau = if i == 0 { -1.0 } else { sorted[i - 1] };
    Ok(Threshold {
        tau,
        q,
        n: sorted.len(),
    })
}

pub fn warmup_threshold(
    params: &ModelParams,
    verifier: &Verifier,
    warmup_inputs: &[Vec<f64>],
    q: f64,
) -> Result<Threshold> {
    if warmup_inputs.is_empty() {
        return Err(Error::EmptyWarmupSet);
    }
    let scores = warmup_inputs
        .iter()
        .map(|x| score(params, verifier, x).map(|s| s.value))
        .collect::<Result<Vec<_>>>()?;
    threshold_from_scores(&scores, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Accept,
    Reject,
}

pub fn decide(score: f64, tau: f64) -> Decision {
    if score >= tau {
        Decision::Accept
    } else {
        Decision::Reject
    }
}

pub fn verify(params: &ModelParams, verifier: &Verifier, tau: f64, x: &[f64]) -> Result<Decision> {
    Ok(decide(score(params, verifier, x)?.value, tau))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    TestKnown,
    TestUnknown,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::TestKnown, Split::TestUnknown];

    pub fn label(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TestKnown => "test_known",
            Split::TestUnknown => "test_unknown",
        }
    }
}

/// One scored trial: which verifier judged it and the score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trial {
    pub verifier: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trials {
    pub genuine: Vec<Trial>,
    pub impostor: Vec<Trial>,
}

impl Trials {
    pub fn genuine_scores(&self) -> Vec<f64> {
        self.genuine.iter().map(|t| t.score).collect()
    }

    pub fn impostor_scores(&self) -> Vec<f64> {
        self.impostor.iter().map(|t| t.score).collect()
    }
}

/// Which other verifiers each example is tried against as an impostor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ImpostorSampling {
    /// Every other verifier.
    #[default]
    All,
    /// A seeded uniform subset of this many other verifiers per example.
    PerExample { count: usize, seed: u64 },
}

/// Scores each example (tagged with its owner's verifier index, or `None`
/// for unseen users) against its owner as a genuine trial and against
/// other verifiers as impostor trials.
pub fn collect_trials(
    params: &ModelParams,
    verifiers: &[Verifier],
    examples: &[(Option<usize>, &[f64])],
    sampling: ImpostorSampling,
) -> Result<Trials> {
    let per_example: Vec<Trials> = examples
        .par_iter()
        .enumerate()
        .map(|(idx, (owner, x))| {
            let trace = forward_lenient(params, x)?;
            let mut out = Trials::default();
            if let Some(o) = owner {
                let verifier = verifiers.get(*o).ok_or(Error::IndexOutOfRange {
                    index: *o,
                    len: verifiers.len(),
                })?;
                out.genuine.push(Trial {
                    verifier: *o,
                    score: score_trace(params, &trace, verifier)?.value,
                });
            }
            let others: Vec<usize> = (0..verifiers.len())
                .filter(|j| Some(*j) != *owner)
                .collect();
            let chosen: Vec<usize> = match sampling {
                ImpostorSampling::PerExample { count, seed } if count < others.len() => {
                    let mut rng = stream_rng(seed, &[idx as u64]);
                    let mut pick = index::sample(&mut rng, others.len(), count).into_vec();
                    pick.sort_unstable();
                    pick.into_iter().map(|p| others[p]).collect()
                }
                _ => others,
            };
            for j in chosen {
                out.impostor.push(Trial {
                    verifier: j,
                    score: score_trace(params, &trace, &verifiers[j])?.value,
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut all = Trials::default();
    for t in per_example {
        all.genuine.extend(t.genuine);
        all.impostor.extend(t.impostor);
    }
    Ok(all)
}

fn tagged(
    users: &[UserDataset],
    pick: fn(&UserDataset) -> &Vec<Vec<f64>>,
    own: bool,
) -> Vec<(Option<usize>, &[f64])> {
    users
        .iter()
        .enumerate()
        .flat_map(|(i, u)| {
            pick(u)
                .iter()
                .map(move |x| (own.then_some(i), x.as_slice()))
        })
        .collect()
}

/// Trials for each split. Known users' verifiers are indexed by their
/// position in `known`. `test_unknown` reuses the known users' genuine test
/// trials and takes impostors only from unseen users.
pub fn split_trials(
    params: &ModelParams,
    verifiers: &[Verifier],
    known: &[UserDataset],
    unknown: &[UserDataset],
    sampling: ImpostorSampling,
) -> Result<BTreeMap<Split, Trials>> {
    if verifiers.len() != known.len() {
        return Err(Error::LengthMismatch {
            expected: known.len(),
            actual: verifiers.len(),
        });
    }
    let train = collect_trials(
        params,
        verifiers,
        &tagged(known, |u| &u.train, true),
        sampling,
    )?;
    let test_known = collect_trials(
        params,
        verifiers,
        &tagged(known, |u| &u.test, true),
        sampling,
    )?;
    let unseen = collect_trials(
        params,
        verifiers,
        &tagged(unknown, |u| &u.test, false),
        sampling,
    )?;
    let test_unknown = Trials {
        genuine: test_known.genuine.clone(),
        impostor: unseen.impostor,
    };
    Ok(BTreeMap::from([
        (Split::Train, train),
        (Split::TestKnown, test_known),
        (Split::TestUnknown, test_unknown),
    ]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub split: Split,
    /// Ordered by increasing threshold.
    pub points: Vec<RocPoint>,
}

fn count_at_least(sorted: &[f64], tau: f64) -> usize {
    sorted.len() - sorted.partition_point(|&s| s < tau)
}

/// Exact threshold sweep: -1, every distinct score above -1, and one value
/// above 1.
pub fn roc_points(genuine: &[f64], impostor: &[f64]) -> Result<Vec<RocPoint>> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::EmptySplit(format!(
            "{} genuine and {} impostor trials",
            genuine.len(),
            impostor.len()
        )));
    }
    let mut g = genuine.to_vec();
    let mut im = impostor.to_vec();
    g.sort_by(f64::total_cmp);
    im.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = g.iter().chain(&im).copied().filter(|&s| s > -1.0).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.insert(0, -1.0);
    thresholds.push(1.0 + f64::EPSILON);
    Ok(thresholds
        .into_iter()
        .map(|tau| RocPoint {
            threshold: tau,
            tpr: count_at_least(&g, tau) as f64 / g.len() as f64,
            fpr: count_at_least(&im, tau) as f64 / im.len() as f64,
        })
        .collect())
}

impl RocCurve {
    pub fn from_trials(split: Split, trials: &Trials) -> Result<Self> {
        let points = roc_points(&trials.genuine_scores(), &trials.impostor_scores()).map_err(
            |e| match e {
                Error::EmptySplit(detail) => {
                    Error::EmptySplit(format!("{}: {detail}", split.label()))
                }
                other => other,
            },
        )?;
        Ok(RocCurve { split, points })
    }

    /// Trapezoid area under the (FPR, TPR) curve.
    pub fn auc(&self) -> f64 {
        auc(&self.points)
    }

    pub fn tpr_at_fpr(&self, max_fpr: f64) -> f64 {
        tpr_at_fpr(&self.points, max_fpr)
    }
}

pub fn auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[0].fpr - w[1].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

/// Best TPR among operating points whose FPR does not exceed `max_fpr`.
pub fn tpr_at_fpr(points: &[RocPoint], max_fpr: f64) -> f64 {
    points
        .iter()
        .filter(|p| p.fpr <= max_fpr)
        .map(|p| p.tpr)
        .fold(0.0, f64::max)
}

pub fn roc_evaluate(
    params: &ModelParams,
    verifiers: &[Verifier],
    known: &[UserDataset],
    unknown: &[UserDataset],
    sampling: ImpostorSampling,
) -> Result<Vec<RocCurve>> {
    split_trials(params, verifiers, known, unknown, sampling)?
        .iter()
        .map(|(split, trials)| RocCurve::from_trials(*split, trials))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub tpr: f64,
    pub fpr: f64,
}

/// Rates when each verifier uses its own calibrated threshold.
pub fn calibrated_operating_point(trials: &Trials, taus: &[f64]) -> Result<OperatingPoint> {
    let rate = |set: &[Trial]| -> Result<f64> {
        let mut accepted = 0usize;
        for t in set {
            let tau = taus.get(t.verifier).ok_or(Error::IndexOutOfRange {
                index: t.verifier,
                len: taus.len(),
            })?;
            if decide(t.score, *tau) == Decision::Accept {
                accepted += 1;
            }
        }
        Ok(accepted as f64 / set.len().max(1) as f64)
    };
    Ok(OperatingPoint {
        tpr: rate(&trials.genuine)?,
        fpr: rate(&trials.impostor)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: Split,
    pub auc: f64,
    /// Keyed by the FPR ceiling, e.g. `"0.05"`.
    pub tpr_at_fpr: BTreeMap<String, f64>,
    pub genuine_trials: usize,
    pub impostor_trials: usize,
    pub calibrated: Option<OperatingPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub method: String,
    pub code_length: usize,
    pub splits: Vec<SplitSummary>,
}

impl EvaluationSummary {
    pub fn split(&self, split: Split) -> Option<&SplitSummary> {
        self.splits.iter().find(|s| s.split == split)
    }
}

pub fn summarize(curve: &RocCurve, trials: &Trials, taus: Option<&[f64]>) -> Result<SplitSummary> {
    Ok(SplitSummary {
        split: curve.split,
        auc: curve.auc(),
        tpr_at_fpr: FPR_TARGETS
            .iter()
            .map(|&f| (f.to_string(), curve.tpr_at_fpr(f)))
            .collect(),
        genuine_trials: trials.genuine.len(),
        impostor_trials: trials.impostor.len(),
        calibrated: taus
            .map(|t| calibrated_operating_point(trials, t))
            .transpose()?,
    })
}

pub const ROC_HEADER: &str = "split,threshold,tpr,fpr";

pub fn render_roc_csv(curves: &[RocCurve]) -> String {
    let mut out = format!("{ROC_HEADER}\n");
    for c in curves {
        for p in &c.points {
            writeln!(
                out,
                "{},{:e},{:e},{:e}",
                c.split.label(),
                p.threshold,
                p.tpr,
                p.fpr
            )
            .unwrap();
        }
    }
    out
}

pub fn parse_roc_csv(text: &str, path: &Path) -> Result<Vec<RocCurve>> {
    let corrupt = |detail: String| Error::CorruptFile {
        path: path.to_path_buf(),
        detail,
    };
    let mut lines = text.lines();
    if lines.next() != Some(ROC_HEADER) {
        return Err(corrupt("missing ROC header".into()));
    }
    let mut curves: Vec<RocCurve> = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(corrupt(format!("bad row '{line}'")));
        }
        let split = Split::ALL
            .into_iter()
            .find(|s| s.label() == f[0])
            .ok_or_else(|| corrupt(format!("unknown split '{}'", f[0])))?;
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| corrupt(format!("bad number '{s}'")))
        };
        let point = RocPoint {
            threshold: num(f[1])?,
            tpr: num(f[2])?,
            fpr: num(f[3])?,
        };
        match curves.last_mut() {
            Some(c) if c.split == split => c.points.push(point),
            _ => curves.push(RocCurve {
                split,
                points: vec![point],
            }),
        }
    }
    Ok(curves)
}

pub const THRESHOLD_HEADER: &str = "user_index,tau,q,n";

pub fn render_thresholds(rows: &[(usize, Threshold)]) -> String {
    let mut out = format!("{THRESHOLD_HEADER}\n");
    for (user, t) in rows {
        writeln!(out, "{user},{:e},{},{}", t.tau, t.q, t.n).unwrap();
    }
    out
}

pub fn parse_thresholds(text: &str, path: &Path) -> Result<Vec<(usize, Threshold)>> {
    let corrupt = |detail: String| Error::CorruptFile {
        path: path.to_path_buf(),
        detail,
    };
    let mut lines = text.lines();
    if lines.next() != Some(THRESHOLD_HEADER) {
        return Err(corrupt("missing threshold header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || corrupt(format!("bad row '{line}'"));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok((
                f[0].parse().map_err(|_| bad())?,
                Threshold {
                    tau: f[1].parse().map_err(|_| bad())?,
                    q: f[2].parse().map_err(|_| bad())?,
                    n: f[3].parse().map_err(|_| bad())?,
                },
            ))
        })
        .collect()
}

pub fn read_thresholds(path: &Path) -> Result<Vec<(usize, Threshold)>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    parse_thresholds(&fs::read_to_string(path)?, path)
}

const PLOT_SIZE: f64 = 400.0;
const PLOT_MARGIN: f64 = 50.0;

fn split_color(split: Split) -> &'static str {
    match split {
        Split::Train => "#1f77b4",
        Split::TestKnown => "#d62728",
        Split::TestUnknown => "#2ca02c",
    }
}

/// Static SVG of ROC curves with a chance diagonal and a legend.
pub fn render_roc_svg(title: &str, curves: &[RocCurve]) -> String {
    let side = PLOT_SIZE + 2.0 * PLOT_MARGIN;
    let px = |fpr: f64| PLOT_MARGIN + fpr * PLOT_SIZE;
    let py = |tpr: f64| PLOT_MARGIN + (1.0 - tpr) * PLOT_SIZE;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{side}" viewBox="0 0 {side} {side}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{side}" height="{side}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{}</text>"#,
        side / 2.0,
        PLOT_MARGIN / 2.0,
        escape_xml(title)
    )
    .unwrap();
    writeln!(
        s,
        r#"<rect x="{PLOT_MARGIN}" y="{PLOT_MARGIN}" width="{PLOT_SIZE}" height="{PLOT_SIZE}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 4"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    )
    .unwrap();
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{v}</text>"#,
            px(v),
            py(0.0) + 16.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{v}</text>"#,
            px(0.0) - 6.0,
            py(v) + 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">FPR</text>"#,
        side / 2.0,
        side - 10.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">TPR</text>"#,
        side / 2.0,
        side / 2.0
    )
    .unwrap();
    for (i, c) in curves.iter().enumerate() {
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.fpr), py(p.tpr)))
            .collect();
        let color = split_color(c.split);
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        )
        .unwrap();
        let ly = py(0.0) - 16.0 * (curves.len() - i) as f64;
        writeln!(
            s,
            r#"<text x="{}" y="{ly}" text-anchor="end" fill="{color}">{} (AUC {:.3})</text>"#,
            px(1.0) - 8.0,
            c.split.label(),
            c.auc()
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;

    fn toy_params() -> ModelParams {
        ModelParams::init(&Architecture::new(3, vec![5, 4]), 7, 2).unwrap()
    }

    #[test]
    fn grid_threshold() {
        let scores: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let t = threshold_from_scores(&scores, 0.9).unwrap();
        assert_eq!(warmup_rank(100, 0.9), 10);
        assert!((t.tau - 0.09).abs() < 1e-12);
        assert_eq!(scores.iter().filter(|&&s| s >= t.tau).count(), 91);
    }

    #[test]
    fn small_threshold_cases() {
        let scores = [0.3, 0.1, 0.7, 0.5, 0.2, 0.9, 0.4, 0.8, 0.6, 0.35];
        let t = threshold_from_scores(&scores, 0.9).unwrap();
        assert_eq!(warmup_rank(10, 0.9), 1);
        assert_eq!(t.tau, 0.1);
        assert_eq!(scores.iter().filter(|&&s| s >= t.tau).count(), 10);
        assert_eq!(scores.iter().filter(|&&s| s > t.tau).count(), 9);
        let all = threshold_from_scores(&[0.1, 0.2, 0.3, 0.4], 1.0).unwrap();
        assert_eq!(all.tau, -1.0);
        assert!(matches!(
            threshold_from_scores(&[], 0.5),
            Err(Error::EmptyWarmupSet)
        ));
        assert!(threshold_from_scores(&[0.1], 0.0).is_err());
    }

    #[test]
    fn decisions() {
        assert_eq!(decide(0.4, 0.4), Decision::Accept);
        assert_eq!(decide(-1.0, -1.0), Decision::Accept);
        assert_eq!(decide(1.0, 1.0 + f64::EPSILON), Decision::Reject);
    }

    #[test]
    fn codeword_score_extremes() {
        let p = toy_params();
        let trace = forward_lenient(&p, &[0.5, -1.0, 2.0]).unwrap();
        let v: Vec<f64> = trace.scaled.iter().map(|z| z.signum()).collect();
        let s = score_trace(&p, &trace, &Verifier::Codeword(v.clone())).unwrap();
        assert!(s.value > -1.0 && s.value <= 1.0 && !s.degenerate);

        let mut exact = trace.clone();
        exact.scaled = v.clone();
        assert_eq!(
            score_trace(&p, &exact, &Verifier::Codeword(v.clone()))
                .unwrap()
                .value,
            1.0
        );
        exact.scaled = v.iter().map(|x| -x).collect();
        assert_eq!(
            score_trace(&p, &exact, &Verifier::Codeword(v))
                .unwrap()
                .value,
            -1.0
        );
    }

    #[test]
    fn degenerate_score_is_flagged() {
        let mut p = toy_params();
        p.projection_mut().iter_mut().for_each(|w| *w = 0.0);
        let s = score(&p, &Verifier::Codeword(vec![1.0; 7]), &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(
            s,
            Score {
                value: 0.0,
                degenerate: true
            }
        );
        assert!(score(&p, &Verifier::Codeword(vec![1.0; 3]), &[1.0, 1.0, 1.0]).is_err());
        assert!(score(&p, &Verifier::Class(7), &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn perfect_separation() {
        let pts = roc_points(&[0.8, 0.9, 0.95], &[-0.2, 0.1, 0.3, 0.5]).unwrap();
        assert_eq!(auc(&pts), 1.0);
        assert_eq!(tpr_at_fpr(&pts, 0.0), 1.0);
        let first = pts.first().unwrap();
        let last = pts.last().unwrap();
        assert_eq!((first.threshold, first.tpr, first.fpr), (-1.0, 1.0, 1.0));
        assert_eq!((last.tpr, last.fpr), (0.0, 0.0));
        assert!(last.threshold > 1.0);
    }

    #[test]
    fn empty_split_rejected() {
        assert!(matches!(roc_points(&[], &[0.1]), Err(Error::EmptySplit(_))));
        assert!(matches!(roc_points(&[0.1], &[]), Err(Error::EmptySplit(_))));
    }

    #[test]
    fn calibrated_rates() {
        let trials = Trials {
            genuine: vec![
                Trial {
                    verifier: 0,
                    score: 0.5,
                },
                Trial {
                    verifier: 1,
                    score: 0.1,
                },
            ],
            impostor: vec![
                Trial {
                    verifier: 0,
                    score: 0.4,
                },
                Trial {
                    verifier: 1,
                    score: 0.3,
                },
            ],
        };
        let op = calibrated_operating_point(&trials, &[0.45, 0.2]).unwrap();
        assert_eq!(op, OperatingPoint { tpr: 0.5, fpr: 0.5 });
        assert!(calibrated_operating_point(&trials, &[0.1]).is_err());
    }

    #[test]
    fn trial_collection_counts() {
        let p = toy_params();
        let verifiers: Vec<Verifier> = (0..4)
            .map(|i| Verifier::Codeword(vec![if i % 2 == 0 { 1.0 } else { -1.0 }; 7]))
            .collect();
        let xs = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let ex: Vec<(Option<usize>, &[f64])> = vec![(Some(0), &xs[0]), (None, &xs[1])];
        let t = collect_trials(&p, &verifiers, &ex, ImpostorSampling::All).unwrap();
        assert_eq!(t.genuine.len(), 1);
        assert_eq!(t.impostor.len(), 3 + 4);
        let sub = collect_trials(
            &p,
            &verifiers,
            &ex,
            ImpostorSampling::PerExample { count: 2, seed: 1 },
        )
        .unwrap();
        assert_eq!(sub.impostor.len(), 4);
        assert!(sub.impostor[..2].iter().all(|t| t.verifier != 0));
    }

    #[test]
    fn file_roundtrips() {
        let pts = roc_points(&[0.3, 0.9], &[0.1, 0.3]).unwrap();
        let curves = vec![
            RocCurve {
                split: Split::Train,
                points: pts.clone(),
            },
            RocCurve {
                split: Split::TestUnknown,
                points: pts,
            },
        ];
        let text = render_roc_csv(&curves);
        assert_eq!(parse_roc_csv(&text, Path::new("r")).unwrap(), curves);
        let rows = vec![(
            3,
            Threshold {
                tau: 0.123456789,
                q: 0.9,
                n: 10,
            },
        )];
        assert_eq!(
            parse_thresholds(&render_thresholds(&rows), Path::new("t")).unwrap(),
            rows
        );
        let svg = render_roc_svg("a<b", &curves);
        assert!(
            svg.starts_with("<svg")
                && svg.contains("a&lt;b")
                && svg.matches("<polyline").count() == 2
        );
    }
}
