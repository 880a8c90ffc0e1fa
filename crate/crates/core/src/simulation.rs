//! Monte-Carlo experiments: random designs and error laws, calibration of
//! the effect size to a target F-test power, and blocked power / null-CDF
//! studies in which every method sees the same dataset within a trial.
//!
//! Trial `t` of a setting draws everything from the seed
//! `seed0 + t * seed_step`, so a single trial can be rerun in isolation.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{breusch_pagan_koenker, partial_f_test, BaselineError};
use crate::distributions::f_quantile;
use crate::framework::{palmrt_test, Dataset, FrameworkError, Method, ModelFitter};
use crate::linalg::{dot, Matrix, QrFactor};
use crate::rng::{Domain, Stream};

/// Size of the outlier added by the multinomial error law.
pub const OUTLIER_SIZE: f64 = 1e4;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid setting: {0}")]
    InvalidSetting(String),
    #[error("setting `{0}` has no effect size; calibrate it first")]
    Unresolved(String),
    #[error("could not bracket target power {target}: power {power} at beta = {beta_max}")]
    NoBracket {
        target: f64,
        beta_max: f64,
        power: f64,
    },
    #[error(transparent)]
    Framework(#[from] FrameworkError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Normal,
    T3,
    Cauchy,
    BalancedAnova,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Normal,
    T3,
    Cauchy,
    LogNormal,
    MultinomialOutlier,
}

/// `Location`: `y = x beta + e`. `Dispersion`: `y = (1 + beta x) e` with a
/// balanced 0/1 `x`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    #[default]
    Location,
    Dispersion,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Location => "location",
            Model::Dispersion => "dispersion",
        }
    }
}

impl DesignKind {
    pub fn name(self) -> &'static str {
        match self {
            DesignKind::Normal => "normal",
            DesignKind::T3 => "t3",
            DesignKind::Cauchy => "cauchy",
            DesignKind::BalancedAnova => "balanced_anova",
        }
    }

    fn draw(self, s: &mut Stream) -> f64 {
        match self {
            DesignKind::Normal => s.normal(),
            DesignKind::T3 => s.student_t3(),
            DesignKind::Cauchy => s.cauchy(),
            DesignKind::BalancedAnova => unreachable!("the ANOVA design is not random"),
        }
    }
}

impl ErrorKind {
    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Normal => "normal",
            ErrorKind::T3 => "t3",
            ErrorKind::Cauchy => "cauchy",
            ErrorKind::LogNormal => "log_normal",
            ErrorKind::MultinomialOutlier => "multinomial_outlier",
        }
    }

    fn draw_vec(self, s: &mut Stream, n: usize) -> Vec<f64> {
        match self {
            ErrorKind::Normal => (0..n).map(|_| s.normal()).collect(),
            ErrorKind::T3 => (0..n).map(|_| s.student_t3()).collect(),
            ErrorKind::Cauchy => (0..n).map(|_| s.cauchy()).collect(),
            ErrorKind::LogNormal => (0..n).map(|_| s.log_normal()).collect(),
            ErrorKind::MultinomialOutlier => {
                let mut e: Vec<f64> = (0..n).map(|_| s.normal()).collect();
                let i = s.below(n as u64) as usize;
                let sign = if s.bernoulli_half() { -1.0 } else { 1.0 };
                e[i] += sign * OUTLIER_SIZE;
                e
            }
        }
    }
}

impl std::str::FromStr for DesignKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            DesignKind::Normal,
            DesignKind::T3,
            DesignKind::Cauchy,
            DesignKind::BalancedAnova,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| format!("unknown design `{s}` (normal, t3, cauchy, balanced_anova)"))
    }
}

impl std::str::FromStr for ErrorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            ErrorKind::Normal,
            ErrorKind::T3,
            ErrorKind::Cauchy,
            ErrorKind::LogNormal,
            ErrorKind::MultinomialOutlier,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| {
            format!("unknown error law `{s}` (normal, t3, cauchy, log_normal, multinomial_outlier)")
        })
    }
}

fn default_one() -> u64 {
    1
}

fn default_d() -> usize {
    1
}

fn default_alpha() -> f64 {
    0.05
}

fn default_reps() -> usize {
    5000
}

/// One cell of an experiment. `p` counts the intercept. In the location
/// model `z` has `p` columns; in the dispersion model `p` also counts `x`,
/// so `z` has `p - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSetting {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub model: Model,
    pub design: DesignKind,
    pub error: ErrorKind,
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub target_power: Option<f64>,
    pub trials: usize,
    pub b: usize,
    pub seed0: u64,
    #[serde(default = "default_one")]
    pub seed_step: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_reps")]
    pub calibration_reps: usize,
}

impl SimSetting {
    /// A location setting with explicit `beta` and the desk-scale defaults.
    pub fn location(design: DesignKind, error: ErrorKind, n: usize, p: usize, beta: f64) -> Self {
        Self {
            id: None,
            model: Model::Location,
            design,
            error,
            n,
            p,
            d: 1,
            beta: Some(beta),
            target_power: None,
            trials: 200,
            b: 99,
            seed0: 1,
            seed_step: 1,
            alpha: 0.05,
            calibration_reps: 5000,
        }
    }

    pub fn dispersion(design: DesignKind, error: ErrorKind, n: usize, p: usize, beta: f64) -> Self {
        Self {
            model: Model::Dispersion,
            ..Self::location(design, error, n, p, beta)
        }
    }

    pub fn label(&self) -> String {
        if let Some(id) = &self.id {
            return id.clone();
        }
        let effect = match (self.beta, self.target_power) {
            (Some(b), _) => format!("beta{b}"),
            (None, Some(t)) => format!("power{t}"),
            (None, None) => "unresolved".into(),
        };
        format!(
            "{}-{}-{}-n{}-p{}-{}",
            self.model.name(),
            self.design.name(),
            self.error.name(),
            self.n,
            self.p,
            effect
        )
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSetting(format!("{}: {m}", self.label())));
        if self.beta.is_some() == self.target_power.is_some() {
            return bad("exactly one of beta and target_power must be set".into());
        }
        if self.beta.is_some_and(|b| !b.is_finite()) {
            return bad("beta must be finite".into());
        }
        if let Some(t) = self.target_power {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("target_power must be in (0, 1), got {t}"));
            }
            if self.model == Model::Dispersion {
                return bad("target_power is only defined for the location model".into());
            }
            if self.calibration_reps < 1000 {
                return bad(format!(
                    "calibration_reps must be at least 1000, got {}",
                    self.calibration_reps
                ));
            }
        }
        if self.d != 1 {
            return bad(format!("only d = 1 is supported, got {}", self.d));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.b == 0 {
            return bad("b must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        let min_p = if self.model == Model::Dispersion {
            2
        } else {
            1
        };
        if self.p < min_p {
            return bad(format!("p must be at least {min_p}"));
        }
        if self.model == Model::Dispersion && self.design == DesignKind::BalancedAnova {
            return bad("the dispersion model needs a random design for z".into());
        }
        let n = self.effective_n();
        if n < self.p + 3 {
            return bad(format!(
                "n = {n} leaves no residual degrees of freedom for p = {}",
                self.p
            ));
        }
        Ok(())
    }

    /// `n`, rounded down to a multiple of the treatment count for the
    /// balanced ANOVA design.
    pub fn effective_n(&self) -> usize {
        match self.design {
            DesignKind::BalancedAnova => self.n / (self.p + 1) * (self.p + 1),
            _ => self.n,
        }
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed0
            .wrapping_add((trial as u64).wrapping_mul(self.seed_step))
    }
}

/// Covariates and errors of one location draw.
struct Draw {
    x: Vec<f64>,
    z: Matrix,
    e: Vec<f64>,
}

fn draw_location(setting: &SimSetting, s: &mut Stream) -> Draw {
    let n = setting.effective_n();
    let p = setting.p;
    let (x, z) = match setting.design {
        DesignKind::BalancedAnova => {
            // treatment 0 is the reference level, 1 is x, 2..=p are columns of z
            let per = n / (p + 1);
            let level = |i: usize| i / per;
            let x: Vec<f64> = (0..n).map(|i| f64::from(u8::from(level(i) == 1))).collect();
            let mut cols = vec![vec![1.0; n]];
            for t in 2..=p {
                cols.push((0..n).map(|i| f64::from(u8::from(level(i) == t))).collect());
            }
            (x, Matrix::from_columns(n, &cols))
        }
        kind => {
            let x: Vec<f64> = (0..n).map(|_| kind.draw(s)).collect();
            let mut cols = vec![vec![1.0; n]];
            for _ in 1..p {
                cols.push((0..n).map(|_| kind.draw(s)).collect());
            }
            (x, Matrix::from_columns(n, &cols))
        }
    };
    let e = setting.error.draw_vec(s, n);
    Draw { x, z, e }
}

fn draw_dispersion(setting: &SimSetting, s: &mut Stream) -> Draw {
    let n = setting.n;
    let ones = n - n / 2;
    let order = s.permutation(n);
    let mut x = vec![0.0; n];
    for &i in &order[..ones] {
        x[i] = 1.0;
    }
    let mut cols = vec![vec![1.0; n]];
    for _ in 2..setting.p {
        cols.push((0..n).map(|_| setting.design.draw(s)).collect());
    }
    let e = setting.error.draw_vec(s, n);
    Draw {
        x,
        z: Matrix::from_columns(n, &cols),
        e,
    }
}

/// Dataset of trial `trial`; a pure function of the setting and the trial's seed.
pub fn generate(setting: &SimSetting, trial: usize) -> Result<Dataset, SimError> {
    let beta = setting
        .beta
        .ok_or_else(|| SimError::Unresolved(setting.label()))?;
    let mut s = Stream::new(setting.trial_seed(trial), Domain::Data, 0);
    let (draw, y) = match setting.model {
        Model::Location => {
            let d = draw_location(setting, &mut s);
            let y = d.x.iter().zip(&d.e).map(|(x, e)| x * beta + e).collect();
            (d, y)
        }
        Model::Dispersion => {
            let d = draw_dispersion(setting, &mut s);
            let y =
                d.x.iter()
                    .zip(&d.e)
                    .map(|(x, e)| (1.0 + beta * x) * e)
                    .collect();
            (d, y)
        }
    };
    Ok(Dataset::new(y, Matrix::column_vector(&draw.x), draw.z)?)
}

/// Outcome of [`calibrate_beta`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub beta: f64,
    /// Monte-Carlo F-test power at `beta` on the calibration draws.
    pub power: f64,
    pub reps: usize,
    pub evaluations: usize,
}

/// Per-draw sufficient statistics of the F-test as a function of beta:
/// with `e_z`, `x_z` the residuals of the errors and of `x` on `z`,
/// `RSS_0 - RSS_1 = (b + beta c)^2 / c` and `RSS_1 = a - b^2 / c`.
struct FPower {
    stats: Vec<(f64, f64, f64)>,
    crit: f64,
}

impl FPower {
    fn new(setting: &SimSetting, reps: usize) -> Self {
        let n = setting.effective_n();
        let df2 = (n - setting.p - 1) as f64;
        let crit = f_quantile(1.0 - setting.alpha, 1.0, df2);
        let stats = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut s = Stream::new(setting.seed0, Domain::Calibration, r as u64);
                let d = draw_location(setting, &mut s);
                let qr = QrFactor::pivoted(&d.z);
                let ez = qr.residuals(&d.e);
                let xz = qr.residuals(&d.x);
                let (a, b, c) = (dot(&ez, &ez), dot(&ez, &xz), dot(&xz, &xz));
                (b, c, (a - b * b / c).max(0.0) / df2)
            })
            .collect();
        Self { stats, crit }
    }

    fn power(&self, beta: f64) -> f64 {
        let hits = self
            .stats
            .iter()
            .filter(|&&(b, c, s2)| {
                let num = (b + beta * c).powi(2) / c;
                num > self.crit * s2
            })
            .count();
        hits as f64 / self.stats.len() as f64
    }
}

/// Finds `beta >= 0` whose Monte-Carlo F-test power matches
/// `setting.target_power`, using the same `reps` draws for every candidate.
pub fn calibrate_beta(setting: &SimSetting, reps: usize) -> Result<Calibration, SimError> {
    let target = setting
        .target_power
        .ok_or_else(|| SimError::InvalidSetting("calibration needs target_power".into()))?;
    if setting.model != Model::Location {
        return Err(SimError::InvalidSetting(
            "calibration is defined for the location model".into(),
        ));
    }
    if reps < 1000 {
        return Err(SimError::InvalidSetting(format!(
            "need at least 1000 reps, got {reps}"
        )));
    }
    let f = FPower::new(setting, reps);
    let tol = 2.0 * (target * (1.0 - target) / reps as f64).sqrt();
    let mut evaluations = 1;
    let g = |beta: f64| f.power(beta) - target;

    let g0 = g(0.0);
    if g0 >= -tol {
        return Ok(Calibration {
            beta: 0.0,
            power: g0 + target,
            reps,
            evaluations,
        });
    }
    let (mut lo, mut glo) = (0.0, g0);
    let (mut hi, mut ghi) = (1.0, g(1.0));
    evaluations += 1;
    while ghi < 0.0 {
        if hi > 1e12 {
            return Err(SimError::NoBracket {
                target,
                beta_max: hi,
                power: ghi + target,
            });
        }
        (lo, glo) = (hi, ghi);
        hi *= 2.0;
        ghi = g(hi);
        evaluations += 1;
    }

    let (mut best, mut gbest) = if ghi.abs() < glo.abs() {
        (hi, ghi)
    } else {
        (lo, glo)
    };
    for step in 0..200 {
        if gbest.abs() < tol || hi - lo < 1e-3 * hi {
            break;
        }
        // alternate secant and bisection steps; the secant step is used only
        // when it lands strictly inside the bracket
        let secant = lo - glo * (hi - lo) / (ghi - glo);
        let mid = if step % 2 == 0 && secant > lo && secant < hi && ghi > glo {
            secant
        } else {
            0.5 * (lo + hi)
        };
        let gm = g(mid);
        evaluations += 1;
        if gm.abs() < gbest.abs() {
            (best, gbest) = (mid, gm);
        }
        if gm < 0.0 {
            (lo, glo) = (mid, gm);
        } else {
            (hi, ghi) = (mid, gm);
        }
    }
    Ok(Calibration {
        beta: best,
        power: gbest + target,
        reps,
        evaluations,
    })
}

/// A method in a power study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Competitor {
    Permutation(Method),
    FTest,
    BreuschPagan,
}

impl Competitor {
    pub fn label(self) -> &'static str {
        match self {
            Competitor::Permutation(m) => m.label(),
            Competitor::FTest => "F-test",
            Competitor::BreuschPagan => "Breusch-Pagan",
        }
    }

    fn p_value(self, data: &Dataset, b: usize, seed: u64) -> Result<f64, SimError> {
        Ok(match self {
            Competitor::Permutation(m) => {
                let fitter = m.fitter();
                fitter.validate().map_err(FrameworkError::from)?;
                let fitter: &dyn ModelFitter = &fitter;
                palmrt_test(data, fitter, &m.evaluator(), b, seed)?.p_value
            }
            Competitor::FTest => partial_f_test(data)?.p_value,
            Competitor::BreuschPagan => breusch_pagan_koenker(data)?.p_value,
        })
    }
}

impl std::str::FromStr for Competitor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("F-test") {
            Ok(Competitor::FTest)
        } else if s.eq_ignore_ascii_case("Breusch-Pagan") {
            Ok(Competitor::BreuschPagan)
        } else {
            s.parse().map(Competitor::Permutation)
        }
    }
}

impl TryFrom<String> for Competitor {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Competitor> for String {
    fn from(c: Competitor) -> Self {
        c.label().to_owned()
    }
}

impl std::fmt::Display for Competitor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// One p-value: one method on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub setting: String,
    pub trial: usize,
    pub seed: u64,
    pub method: Competitor,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub setting: String,
    pub method: Competitor,
    pub beta: f64,
    pub alpha: f64,
    pub b: usize,
    pub seed0: u64,
    pub seed_step: u64,
    pub rejections: usize,
    pub trials: usize,
    pub rejection_rate: f64,
    pub mc_stderr: f64,
    /// Rejection rate divided by the F-test's, when the F-test ran and rejected at all.
    pub relative_power: Option<f64>,
}

impl PowerRow {
    pub fn new(setting: &SimSetting, method: Competitor, rejections: usize, trials: usize) -> Self {
        let rate = if trials == 0 {
            0.0
        } else {
            rejections as f64 / trials as f64
        };
        Self {
            setting: setting.label(),
            method,
            beta: setting.beta.unwrap_or(f64::NAN),
            alpha: setting.alpha,
            b: setting.b,
            seed0: setting.seed0,
            seed_step: setting.seed_step,
            rejections,
            trials,
            rejection_rate: rate,
            mc_stderr: if trials == 0 {
                0.0
            } else {
                (rate * (1.0 - rate) / trials as f64).sqrt()
            },
            relative_power: None,
        }
    }

    pub fn rate(&self) -> f64 {
        self.rejection_rate
    }
}

/// A setting as run: effect size resolved, calibration recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSetting {
    pub setting: SimSetting,
    pub calibration: Option<Calibration>,
}

impl ResolvedSetting {
    pub fn resolve(setting: &SimSetting) -> Result<Self, SimError> {
        setting.validate()?;
        if setting.beta.is_some() {
            return Ok(Self {
                setting: setting.clone(),
                calibration: None,
            });
        }
        let label = setting.label();
        let cal = calibrate_beta(setting, setting.calibration_reps)?;
        let mut resolved = setting.clone();
        resolved.id = Some(label);
        resolved.beta = Some(cal.beta);
        resolved.target_power = None;
        Ok(Self {
            setting: resolved,
            calibration: Some(cal),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutput {
    pub settings: Vec<ResolvedSetting>,
    pub trials: Vec<TrialRecord>,
    pub rows: Vec<PowerRow>,
}

/// Every method on every trial of a resolved setting; trial-major order.
pub fn run_trials(
    setting: &SimSetting,
    methods: &[Competitor],
) -> Result<Vec<TrialRecord>, SimError> {
    let label = setting.label();
    let per_trial = (0..setting.trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<TrialRecord>, SimError> {
            let data = generate(setting, t)?;
            let seed = setting.trial_seed(t);
            methods
                .iter()
                .map(|&m| {
                    Ok(TrialRecord {
                        setting: label.clone(),
                        trial: t,
                        seed,
                        method: m,
                        p_value: m.p_value(&data, setting.b, seed)?,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

/// Rejection rates per method at `setting.alpha`, in `methods` order.
pub fn aggregate(
    setting: &SimSetting,
    methods: &[Competitor],
    records: &[TrialRecord],
) -> Vec<PowerRow> {
    let label = setting.label();
    let mut rows: Vec<PowerRow> = methods
        .iter()
        .map(|&m| {
            let ps = records
                .iter()
                .filter(|r| r.method == m && r.setting == label);
            let (mut hits, mut total) = (0, 0);
            for r in ps {
                total += 1;
                hits += usize::from(r.p_value <= setting.alpha);
            }
            PowerRow::new(setting, m, hits, total)
        })
        .collect();
    let f_rate = rows
        .iter()
        .find(|r| r.method == Competitor::FTest)
        .map(|r| r.rejection_rate);
    if let Some(f) = f_rate.filter(|&f| f > 0.0) {
        for r in &mut rows {
            r.relative_power = Some(r.rejection_rate / f);
        }
    }
    rows
}

/// Resolves (calibrating where needed) and runs every setting.
pub fn run_power_study(
    settings: &[SimSetting],
    methods: &[Competitor],
) -> Result<StudyOutput, SimError> {
    if methods.is_empty() {
        return Err(SimError::InvalidSetting("no methods given".into()));
    }
    let mut out = StudyOutput {
        settings: Vec::new(),
        trials: Vec::new(),
        rows: Vec::new(),
    };
    for s in settings {
        let resolved = ResolvedSetting::resolve(s)?;
        let records = run_trials(&resolved.setting, methods)?;
        out.rows
            .extend(aggregate(&resolved.setting, methods, &records));
        out.trials.extend(records);
        out.settings.push(resolved);
    }
    Ok(out)
}

/// Empirical CDF of one method's p-values at one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    pub setting: String,
    pub method: Competitor,
    pub alpha: f64,
    pub fraction: f64,
    pub trials: usize,
    /// `alpha + 3 sqrt(alpha (1 - alpha) / trials)`.
    pub nominal_bound: f64,
    /// `2 alpha + 3 sqrt(2 alpha (1 - 2 alpha) / trials)`, the guaranteed level plus slack.
    pub guarantee_bound: f64,
    pub exceeds_nominal: bool,
    pub exceeds_guarantee: bool,
}

/// `level + 3` binomial standard errors over `trials`.
pub fn slack_bound(level: f64, trials: usize) -> f64 {
    level + 3.0 * (level * (1.0 - level).max(0.0) / trials as f64).sqrt()
}

/// `#{p <= alpha} / len` for each alpha.
pub fn empirical_cdf(p_values: &[f64], alphas: &[f64]) -> Vec<f64> {
    alphas
        .iter()
        .map(|&a| p_values.iter().filter(|&&p| p <= a).count() as f64 / p_values.len() as f64)
        .collect()
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `values` and
/// the uniform CDF on [0, 1].
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - x).max(x - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

fn cdf_rows(
    setting: &SimSetting,
    methods: &[Competitor],
    records: &[TrialRecord],
    alphas: &[f64],
) -> Vec<CdfRow> {
    let label = setting.label();
    let mut rows = Vec::new();
    for &m in methods {
        let ps: Vec<f64> = records
            .iter()
            .filter(|r| r.method == m)
            .map(|r| r.p_value)
            .collect();
        let n = ps.len();
        for (&alpha, fraction) in alphas.iter().zip(empirical_cdf(&ps, alphas)) {
            let nominal_bound = slack_bound(alpha, n);
            let guarantee_bound = slack_bound(2.0 * alpha, n);
            rows.push(CdfRow {
                setting: label.clone(),
                method: m,
                alpha,
                fraction,
                trials: n,
                nominal_bound,
                guarantee_bound,
                exceeds_nominal: fraction > nominal_bound,
                exceeds_guarantee: fraction > guarantee_bound,
            });
        }
    }
    rows
}

/// Null p-value CDFs: every setting must have `beta = 0`.
pub fn run_null_cdf_study(
    settings: &[SimSetting],
    methods: &[Competitor],
    alphas: &[f64],
) -> Result<Vec<CdfRow>, SimError> {
    let mut rows = Vec::new();
    for s in settings {
        s.validate()?;
        if s.beta != Some(0.0) {
            return Err(SimError::InvalidSetting(format!(
                "{}: null CDF needs beta = 0",
                s.label()
            )));
        }
        let records = run_trials(s, methods)?;
        rows.extend(cdf_rows(s, methods, &records, alphas));
    }
    Ok(rows)
}

/// A study description: settings, methods and optional CDF levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub settings: Vec<SimSetting>,
    pub methods: Vec<Competitor>,
    #[serde(default)]
    pub cdf_alphas: Vec<f64>,
}

impl Manifest {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.settings.is_empty() {
            return Err(SimError::InvalidSetting(
                "manifest lists no settings".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(SimError::InvalidSetting("manifest lists no methods".into()));
        }
        if self.cdf_alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(SimError::InvalidSetting(
                "cdf_alphas must lie in [0, 1]".into(),
            ));
        }
        self.settings.iter().try_for_each(SimSetting::validate)
    }
}

/// Per-setting CDF rows for a finished study (uses the recorded p-values).
pub fn study_cdf(study: &StudyOutput, methods: &[Competitor], alphas: &[f64]) -> Vec<CdfRow> {
    study
        .settings
        .iter()
        .flat_map(|r| {
            let label = r.setting.label();
            let records: Vec<TrialRecord> = study
                .trials
                .iter()
                .filter(|t| t.setting == label)
                .cloned()
                .collect();
            cdf_rows(&r.setting, methods, &records, alphas)
        })
        .collect()
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<(), SimError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_design_shape() {
        let s = SimSetting::location(DesignKind::Normal, ErrorKind::Normal, 100, 6, 0.0);
        let d = generate(&s, 0).unwrap();
        assert_eq!(d.z().cols(), 6);
        assert!(d.z().column(0).iter().all(|&v| v == 1.0));
        assert_eq!(d.x().cols(), 1);
        assert_eq!(d.n(), 100);
    }

    #[test]
    fn anova_design_is_balanced() {
        let s = SimSetting::location(DesignKind::BalancedAnova, ErrorKind::Normal, 100, 6, 0.0);
        let d = generate(&s, 0).unwrap();
        // 7 treatments: n rounded down to 98
        assert_eq!(d.n(), 98);
        let c = Matrix::hstack(&[d.x(), d.z()]);
        for i in 0..98 {
            let row = c.row(i);
            assert_eq!(row[1], 1.0);
            let treated = row[0] + row[2..].iter().sum::<f64>();
            assert!(treated <= 1.0);
        }
        let x_count: f64 = d.x().column(0).iter().sum();
        assert_eq!(x_count, 14.0);
    }

    #[test]
    fn dispersion_design_shape() {
        let s = SimSetting::dispersion(DesignKind::Cauchy, ErrorKind::Normal, 200, 6, 1.0);
        let d = generate(&s, 3).unwrap();
        assert_eq!(d.z().cols(), 5);
        assert!(d.is_two_group());
        assert_eq!(d.x().column(0).iter().sum::<f64>(), 100.0);
    }

    #[test]
    fn outlier_law_has_one_outlier() {
        let s = SimSetting::location(
            DesignKind::Normal,
            ErrorKind::MultinomialOutlier,
            100,
            6,
            0.0,
        );
        for t in 0..20 {
            let d = generate(&s, t).unwrap();
            assert_eq!(d.y().iter().filter(|v| v.abs() > 100.0).count(), 1);
        }
    }

    #[test]
    fn validation() {
        let mut s = SimSetting::location(DesignKind::Normal, ErrorKind::Normal, 100, 6, 0.0);
        assert!(s.validate().is_ok());
        s.trials = 0;
        assert!(s.validate().is_err());
        s.trials = 1;
        s.target_power = Some(0.5);
        assert!(s.validate().is_err());
        s.beta = None;
        assert!(s.validate().is_ok());
    }

    #[test]
    fn labels() {
        let s = SimSetting::location(DesignKind::BalancedAnova, ErrorKind::LogNormal, 100, 6, 0.5);
        assert_eq!(
            s.label(),
            "location-balanced_anova-log_normal-n100-p6-beta0.5"
        );
        for c in ["F-test", "Breusch-Pagan", "Huber-Huber", "OLS-L2"] {
            assert_eq!(c.parse::<Competitor>().unwrap().label(), c);
        }
        assert!("nope".parse::<Competitor>().is_err());
    }

    #[test]
    fn ks_of_grid_is_small() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_uniform(&v) <= 0.0005 + 1e-12);
    }
}
