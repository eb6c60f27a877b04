//! Welch's t-test, Cohen's d and TOST equivalence testing over Likert
//! scores, plus score-file ingestion.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::config::Task;
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const LIKERT_MIN: u8 = 1;
pub const LIKERT_MAX: u8 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    Victim,
    Surrogate,
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelTag::Victim => "victim",
            ModelTag::Surrogate => "surrogate",
        })
    }
}

impl std::str::FromStr for ModelTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "victim" => Ok(ModelTag::Victim),
            "surrogate" => Ok(ModelTag::Surrogate),
            other => Err(Error::Malformed(format!("unknown model tag `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikertSample {
    pub task: Task,
    pub model: ModelTag,
    pub scores: Vec<u8>,
}

impl LikertSample {
    pub fn new(task: Task, model: ModelTag, scores: Vec<u8>) -> Result<Self> {
        if let Some(bad) = scores.iter().find(|s| !(LIKERT_MIN..=LIKERT_MAX).contains(*s)) {
            return Err(Error::InvalidArgument(format!("Likert score {bad} outside [1, 5]")));
        }
        Ok(Self { task, model, scores })
    }

    pub fn values(&self) -> Vec<f64> {
        self.scores.iter().map(|&s| f64::from(s)).collect()
    }
}

/// Mean and unbiased variance.
fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn require_two(x: &[f64], name: &str) -> Result<()> {
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!("{name} needs at least 2 observations")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(name.into()));
    }
    Ok(())
}

/// `P(T > t)` for Student's t with `df` degrees of freedom.
pub fn t_sf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 0.0 } else { 1.0 };
    }
    let half_tail = 0.5 * beta_reg(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        half_tail
    } else {
        1.0 - half_tail
    }
}

/// `P(T < t)`.
pub fn t_cdf(t: f64, df: f64) -> f64 {
    t_sf(-t, df)
}

/// Two-sided `P(|T| > |t|)`.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub std_a: f64,
    pub std_b: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub alpha: f64,
    /// `p_value < alpha`.
    pub significant: bool,
}

struct Welch {
    diff: f64,
    se: f64,
    df: f64,
    ma: f64,
    mb: f64,
    va: f64,
    vb: f64,
}

fn welch_parts(a: &[f64], b: &[f64]) -> Result<Welch> {
    require_two(a, "sample a")?;
    require_two(b, "sample b")?;
    let (ma, va) = moments(a);
    let (mb, vb) = moments(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (qa, qb) = (va / na, vb / nb);
    let se2 = qa + qb;
    let df = if se2 > 0.0 {
        se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0))
    } else {
        na + nb - 2.0
    };
    Ok(Welch {
        diff: ma - mb,
        se: se2.sqrt(),
        df,
        ma,
        mb,
        va,
        vb,
    })
}

/// `diff / se`, with `0/0 = 0` for two constant samples with equal means.
fn ratio(num: f64, se: f64) -> f64 {
    if se > 0.0 {
        num / se
    } else if num == 0.0 {
        0.0
    } else {
        num.signum() * f64::INFINITY
    }
}

/// Welch's unequal-variance t-test on raw values, two-sided.
pub fn welch_t_values(a: &[f64], b: &[f64], alpha: f64) -> Result<TTestResult> {
    let w = welch_parts(a, b)?;
    let t = ratio(w.diff, w.se);
    let p = t_two_sided(t, w.df);
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: w.df,
        p_value: p,
        mean_a: w.ma,
        mean_b: w.mb,
        std_a: w.va.sqrt(),
        std_b: w.vb.sqrt(),
        n_a: a.len(),
        n_b: b.len(),
        alpha,
        significant: p < alpha,
    })
}

pub fn welch_t(a: &LikertSample, b: &LikertSample, alpha: f64) -> Result<TTestResult> {
    welch_t_values(&a.values(), &b.values(), alpha)
}

/// `sqrt(((n_a - 1) s_a^2 + (n_b - 1) s_b^2) / (n_a + n_b - 2))`.
pub fn pooled_sd(a: &[f64], b: &[f64]) -> Result<f64> {
    require_two(a, "sample a")?;
    require_two(b, "sample b")?;
    let (_, va) = moments(a);
    let (_, vb) = moments(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    Ok((((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0)).sqrt())
}

/// Standardized mean difference; `None` when the pooled sd is zero.
pub fn cohens_d_values(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    let sd = pooled_sd(a, b)?;
    let (ma, _) = moments(a);
    let (mb, _) = moments(b);
    Ok((sd > 0.0).then(|| (ma - mb) / sd))
}

pub fn cohens_d(a: &LikertSample, b: &LikertSample) -> Result<Option<f64>> {
    cohens_d_values(&a.values(), &b.values())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TostResult {
    pub d_bound: f64,
    pub raw_bound: f64,
    pub t_lower: f64,
    pub t_upper: f64,
    pub degrees_of_freedom: f64,
    /// Test of `diff <= -raw_bound`.
    pub p_lower: f64,
    /// Test of `diff >= raw_bound`.
    pub p_upper: f64,
    pub p_tost: f64,
    pub alpha: f64,
    /// `p_tost < alpha`.
    pub reject_nonequivalence: bool,
}

/// Two one-sided Welch tests against `+-d_bound * pooled_sd`.
pub fn tost_values(a: &[f64], b: &[f64], d_bound: f64, alpha: f64) -> Result<TostResult> {
    if !(d_bound.is_finite() && d_bound > 0.0) {
        return Err(Error::InvalidArgument(format!("d_bound must be positive, got {d_bound}")));
    }
    let raw_bound = d_bound * pooled_sd(a, b)?;
    if raw_bound == 0.0 {
        return Err(Error::InvalidArgument("both samples are constant; equivalence bounds are empty".into()));
    }
    let w = welch_parts(a, b)?;
    let t_lower = ratio(w.diff + raw_bound, w.se);
    let t_upper = ratio(w.diff - raw_bound, w.se);
    let p_lower = t_sf(t_lower, w.df);
    let p_upper = t_cdf(t_upper, w.df);
    let p_tost = p_lower.max(p_upper);
    Ok(TostResult {
        d_bound,
        raw_bound,
        t_lower,
        t_upper,
        degrees_of_freedom: w.df,
        p_lower,
        p_upper,
        p_tost,
        alpha,
        reject_nonequivalence: p_tost < alpha,
    })
}

pub fn tost(a: &LikertSample, b: &LikertSample, d_bound: f64, alpha: f64) -> Result<TostResult> {
    tost_values(&a.values(), &b.values(), d_bound, alpha)
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    task: String,
    model: String,
    #[allow(dead_code)]
    participant_id: String,
    #[allow(dead_code)]
    item_id: String,
    score: i64,
}

/// Reads `task,model,participant_id,item_id,score` rows and groups scores by
/// `(task, model)`, in tag order.
pub fn ingest_scores(path: impl AsRef<Path>) -> Result<Vec<LikertSample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text).map_err(|e| match e {
        Error::Malformed(m) => Error::Malformed(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_scores(text: &str) -> Result<Vec<LikertSample>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut groups: BTreeMap<(Task, ModelTag), Vec<u8>> = BTreeMap::new();
    for (i, row) in reader.deserialize::<ScoreRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Malformed(format!("line {line}: {e}")))?;
        let task: Task = row
            .task
            .parse()
            .map_err(|_| Error::Malformed(format!("line {line}: unknown task tag `{}`", row.task)))?;
        let model: ModelTag = row.model.parse().map_err(|e| Error::Malformed(format!("line {line}: {e}")))?;
        if !(i64::from(LIKERT_MIN)..=i64::from(LIKERT_MAX)).contains(&row.score) {
            return Err(Error::Malformed(format!("line {line}: score {} outside [1, 5]", row.score)));
        }
        groups.entry((task, model)).or_default().push(row.score as u8);
    }
    Ok(groups
        .into_iter()
        .map(|((task, model), scores)| LikertSample { task, model, scores })
        .collect())
}

/// Integer scores on `{1, 3, 5}` whose sample mean and sd approximate the
/// requested moments.
pub fn likert_with_moments(n: usize, mean: f64, sd: f64) -> Result<Vec<u8>> {
    if n < 2 {
        return Err(Error::InvalidArgument("need n >= 2".into()));
    }
    let nf = n as f64;
    // With p1, p5 the shares of 1s and 5s: mean = 3 + 2 (p5 - p1) and
    // E[(x - 3)^2] = 4 (p1 + p5).
    let spread = (sd * sd * (nf - 1.0) / nf + (mean - 3.0).powi(2)) / 4.0;
    let skew = (mean - 3.0) / 2.0;
    let p5 = (spread + skew) / 2.0;
    let p1 = (spread - skew) / 2.0;
    if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p5) || p1 + p5 > 1.0 {
        return Err(Error::InvalidArgument(format!(
            "mean {mean} and sd {sd} are not reachable on {{1, 3, 5}}"
        )));
    }
    let n5 = (p5 * nf).round() as usize;
    let n1 = ((p1 * nf).round() as usize).min(n - n5);
    let mut scores = vec![LIKERT_MAX; n5];
    scores.extend(std::iter::repeat_n(LIKERT_MIN, n1));
    scores.extend(std::iter::repeat_n(3, n - n5 - n1));
    Ok(scores)
}

/// Victim-versus-surrogate analysis of one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskAnalysis {
    pub task: Task,
    pub welch: TTestResult,
    pub cohens_d: Option<f64>,
    pub tost: Option<TostResult>,
}

/// Pairs the victim and surrogate samples of every task present in both.
pub fn analyze(samples: &[LikertSample], d_bound: f64, alpha: f64) -> Result<Vec<TaskAnalysis>> {
    let mut by_task: BTreeMap<Task, (Option<&LikertSample>, Option<&LikertSample>)> = BTreeMap::new();
    for s in samples {
        let slot = by_task.entry(s.task).or_default();
        match s.model {
            ModelTag::Victim => slot.0 = Some(s),
            ModelTag::Surrogate => slot.1 = Some(s),
        }
    }
    let mut out = Vec::new();
    for (task, pair) in by_task {
        if let (Some(v), Some(s)) = pair {
            let tost = match tost(v, s, d_bound, alpha) {
                Ok(t) => Some(t),
                Err(Error::InvalidArgument(_)) => None,
                Err(e) => return Err(e),
            };
            out.push(TaskAnalysis {
                task,
                welch: welch_t(v, s, alpha)?,
                cohens_d: cohens_d(v, s)?,
                tost,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.0, 4.0, 5.0];
        let r = welch_t_values(&a, &a, DEFAULT_ALPHA).unwrap();
        assert_eq!(r.t_statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-15);
        assert_eq!(cohens_d_values(&a, &a).unwrap(), Some(0.0));
    }

    #[test]
    fn constant_samples_follow_conventions() {
        let a = [3.0; 4];
        let r = welch_t_values(&a, &a, DEFAULT_ALPHA).unwrap();
        assert_eq!((r.t_statistic, r.p_value), (0.0, 1.0));
        let b = [4.0; 4];
        assert_eq!(welch_t_values(&a, &b, DEFAULT_ALPHA).unwrap().p_value, 0.0);
        assert_eq!(cohens_d_values(&a, &b).unwrap(), None);
        assert!(tost_values(&a, &a, 0.3, DEFAULT_ALPHA).is_err());
    }

    #[test]
    fn rejects_small_or_bad_input() {
        assert!(welch_t_values(&[1.0], &[1.0, 2.0], 0.05).is_err());
        assert!(tost_values(&[1.0, 2.0], &[1.0, 2.0], 0.0, 0.05).is_err());
        assert!(LikertSample::new(Task::Monet, ModelTag::Victim, vec![0]).is_err());
    }

    #[test]
    fn ingestion_groups_by_task_and_model() {
        assert!(parse_scores("").unwrap().is_empty());
        let one = parse_scores("task,model,participant_id,item_id,score\nmonet,victim,p1,i1,5\n").unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].scores, vec![5]);
        let four = parse_scores(
            "task,model,participant_id,item_id,score\n\
             monet,victim,p1,i1,5\nmonet,surrogate,p1,i1,4\n\
             anime,victim,p2,i2,3\nanime,surrogate,p2,i2,2\nmonet,victim,p3,i1,1\n",
        )
        .unwrap();
        assert_eq!(four.len(), 4);
        assert_eq!(four.iter().map(|s| s.scores.len()).sum::<usize>(), 5);
        assert!(parse_scores("task,model,participant_id,item_id,score\nmonet,victim,p,i,6\n").is_err());
        assert!(parse_scores("task,model,participant_id,item_id,score\nmonet,thief,p,i,3\n").is_err());
        assert!(parse_scores("task,model,participant_id,item_id,score\nmars,victim,p,i,3\n").is_err());
    }

    #[test]
    fn synthetic_likert_hits_moments() {
        let s = likert_with_moments(1250, 3.11, 1.76).unwrap();
        let v: Vec<f64> = s.iter().map(|&x| f64::from(x)).collect();
        let (m, var) = moments(&v);
        assert!((m - 3.11).abs() < 0.005, "{m}");
        assert!((var.sqrt() - 1.76).abs() < 0.005, "{}", var.sqrt());
        assert!(likert_with_moments(10, 4.9, 2.0).is_err());
    }
}
