//! Scenario files: TOML sections `[scenario]`, `[grid]`, `[time]`,
//! `[control]` and `[inputs]`, parsed into a validated [`Scenario`].
//!
//! Input descriptors are short word lists:
//!
//! ```text
//! d1 = "zero" | "constant A" | "sine A F" | "gaussian C W A" | "bump A" | "file PATH"
//! d2 = "zero" | "constant A"
//! w0 = "zero" | "constant A" | "sine A F" | "gaussian C W A" | "bump A" | "random A MODES" | "file PATH"
//! ```
//!
//! `sine A F` is A·sin(Fπx/L) and `bump A` is A·x(L−x)² scaled to peak A.
//! A trailing `l2` makes A the L² norm of the profile instead of its peak.
//! `random` draws MODES sine coefficients from the scenario seed.

use kdvf_core::grid::{Field, Grid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use toml::Spanned;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Linear,
    Nonlinear,
}

impl Model {
    pub fn as_str(&self) -> &'static str {
        match self {
            Model::Linear => "linear",
            Model::Nonlinear => "nonlinear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    /// |y(T) − r| below the model's tolerance.
    Regulation,
    /// Closed-loop 𝒱 non-increasing between records.
    Dissipation,
    /// Exponential fit of the X-distance to the equilibrium.
    XDecay,
    /// Boundary-flux identity of the deviation.
    Identity,
    /// Residual (and contraction) of the equilibrium solve.
    Equilibrium,
}

impl Check {
    pub fn as_str(&self) -> &'static str {
        match self {
            Check::Regulation => "regulation",
            Check::Dissipation => "dissipation",
            Check::XDecay => "x-decay",
            Check::Identity => "identity",
            Check::Equilibrium => "equilibrium",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gain {
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Zero,
    Constant { amp: f64, l2: bool },
    Sine { amp: f64, freq: f64, l2: bool },
    Gaussian { center: f64, width: f64, amp: f64, l2: bool },
    Bump { amp: f64, l2: bool },
    Random { amp: f64, modes: usize },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: Model,
    pub checks: Vec<Check>,
    pub seed: u64,
    pub override_safety: bool,
    pub l: f64,
    pub n: usize,
    pub dt: f64,
    pub t_final: f64,
    pub theta: f64,
    pub record_every: usize,
    pub lambda: f64,
    pub k: Gain,
    /// Upper cap on the nonlinear gain bound.
    pub k_cap: Option<f64>,
    pub r: f64,
    pub eta0: f64,
    pub d1: Profile,
    pub d2: f64,
    pub w0: Profile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.line, &self.field) {
            (Some(l), Some(k)) => write!(f, "line {l}, field {k}: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            (None, Some(k)) => write!(f, "field {k}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    scenario: RawMeta,
    grid: RawGrid,
    time: RawTime,
    control: RawControl,
    #[serde(default)]
    inputs: RawInputs,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeta {
    name: Spanned<String>,
    model: Model,
    #[serde(default)]
    checks: Vec<Check>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    override_safety: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    #[serde(rename = "L")]
    l: Spanned<f64>,
    n: Spanned<i64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTime {
    dt: Spanned<f64>,
    #[serde(rename = "T")]
    t_final: Spanned<f64>,
    theta: Option<Spanned<f64>>,
    record_every: Option<Spanned<i64>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawGain {
    Number(f64),
    Word(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawControl {
    lambda: Option<Spanned<f64>>,
    k: Spanned<RawGain>,
    k_cap: Option<Spanned<f64>>,
    r: Spanned<f64>,
    eta0: Option<Spanned<f64>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawInputs {
    d1: Option<Spanned<String>>,
    d2: Option<Spanned<String>>,
    w0: Option<Spanned<String>>,
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn line(&self, span: Range<usize>) -> usize {
        let end = span.start.min(self.text.len());
        self.text[..end].matches('\n').count() + 1
    }

    fn err(&self, span: Range<usize>, field: &str, message: impl Into<String>) -> ConfigError {
        ConfigError { line: Some(self.line(span)), field: Some(field.into()), message: message.into() }
    }

    fn finite(&self, v: &Spanned<f64>, field: &str) -> Result<f64, ConfigError> {
        let x = *v.get_ref();
        if x.is_finite() {
            Ok(x)
        } else {
            Err(self.err(v.span(), field, format!("must be finite, got {x}")))
        }
    }

    fn positive(&self, v: &Spanned<f64>, field: &str) -> Result<f64, ConfigError> {
        let x = self.finite(v, field)?;
        if x > 0.0 {
            Ok(x)
        } else {
            Err(self.err(v.span(), field, format!("must be positive, got {x}")))
        }
    }
}

/// Parses scenario text; relative `file` descriptors resolve against `base`.
pub fn parse_scenario(text: &str, base: &Path) -> Result<Scenario, ConfigError> {
    let raw: Raw = toml::from_str(text).map_err(|e| {
        let cx = Ctx { text };
        ConfigError {
            line: e.span().map(|s| cx.line(s)),
            field: None,
            message: e.message().trim().to_string(),
        }
    })?;
    let cx = Ctx { text };
    let name = raw.scenario.name.get_ref().trim().to_string();
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.') {
        return Err(cx.err(raw.scenario.name.span(), "scenario.name", "must be a non-empty file-name-safe identifier"));
    }
    let l = cx.positive(&raw.grid.l, "grid.L")?;
    let n_raw = *raw.grid.n.get_ref();
    if n_raw < kdvf_core::grid::MIN_CELLS as i64 {
        return Err(cx.err(raw.grid.n.span(), "grid.n", format!("need at least {} cells, got {n_raw}", kdvf_core::grid::MIN_CELLS)));
    }
    let dt = cx.positive(&raw.time.dt, "time.dt")?;
    let t_final = cx.finite(&raw.time.t_final, "time.T")?;
    if t_final < 0.0 {
        return Err(cx.err(raw.time.t_final.span(), "time.T", "must be non-negative"));
    }
    let theta = match &raw.time.theta {
        Some(v) => {
            let th = cx.finite(v, "time.theta")?;
            if !(0.5..=1.0).contains(&th) {
                return Err(cx.err(v.span(), "time.theta", format!("must lie in [0.5, 1], got {th}")));
            }
            th
        }
        None => 1.0,
    };
    let record_every = match &raw.time.record_every {
        Some(v) if *v.get_ref() < 1 => return Err(cx.err(v.span(), "time.record_every", "must be at least 1")),
        Some(v) => *v.get_ref() as usize,
        None => 1,
    };
    let lambda = match &raw.control.lambda {
        Some(v) => cx.positive(v, "control.lambda")?,
        None => 1.0,
    };
    let k = match raw.control.k.get_ref() {
        RawGain::Word(w) if w == "auto" => Gain::Auto,
        RawGain::Number(x) if x.is_finite() && *x > 0.0 => Gain::Value(*x),
        RawGain::Number(x) => return Err(cx.err(raw.control.k.span(), "control.k", format!("must be positive and finite, got {x}"))),
        RawGain::Word(w) => return Err(cx.err(raw.control.k.span(), "control.k", format!("expected a number or \"auto\", got \"{w}\""))),
    };
    let k_cap = raw.control.k_cap.as_ref().map(|v| cx.positive(v, "control.k_cap")).transpose()?;
    let r = cx.finite(&raw.control.r, "control.r")?;
    let eta0 = raw.control.eta0.as_ref().map(|v| cx.finite(v, "control.eta0")).transpose()?.unwrap_or(0.0);
    let profile = |v: &Option<Spanned<String>>, field: &str, allow_random: bool| -> Result<Profile, ConfigError> {
        match v {
            None => Ok(Profile::Zero),
            Some(s) => parse_profile(s.get_ref(), base, allow_random).map_err(|m| cx.err(s.span(), field, m)),
        }
    };
    let d1 = profile(&raw.inputs.d1, "inputs.d1", false)?;
    let w0 = profile(&raw.inputs.w0, "inputs.w0", true)?;
    let d2 = match &raw.inputs.d2 {
        None => 0.0,
        Some(s) => match parse_profile(s.get_ref(), base, false).map_err(|m| cx.err(s.span(), "inputs.d2", m))? {
            Profile::Zero => 0.0,
            Profile::Constant { amp, l2: false } => amp,
            _ => return Err(cx.err(s.span(), "inputs.d2", "boundary disturbance must be \"zero\" or \"constant A\"")),
        },
    };
    let mut checks = Vec::new();
    for c in raw.scenario.checks {
        if !checks.contains(&c) {
            checks.push(c);
        }
    }
    Ok(Scenario {
        name,
        model: raw.scenario.model,
        checks,
        seed: raw.scenario.seed,
        override_safety: raw.scenario.override_safety,
        l,
        n: n_raw as usize,
        dt,
        t_final,
        theta,
        record_every,
        lambda,
        k,
        k_cap,
        r,
        eta0,
        d1,
        d2,
        w0,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        line: None,
        field: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_scenario(&text, path.parent().unwrap_or(Path::new(".")))
}

fn number(word: Option<&str>, what: &str) -> Result<f64, String> {
    let w = word.ok_or_else(|| format!("missing {what}"))?;
    let x: f64 = w.parse().map_err(|_| format!("{what} \"{w}\" is not a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{what} must be finite"))
    }
}

/// Parses one descriptor; see the module documentation for the grammar.
pub fn parse_profile(text: &str, base: &Path, allow_random: bool) -> Result<Profile, String> {
    let mut words: Vec<&str> = text.split_whitespace().collect();
    let l2 = words.len() > 1 && words.last() == Some(&"l2");
    if l2 {
        words.pop();
    }
    let kind = *words.first().ok_or("empty descriptor")?;
    let mut args = words[1..].iter().copied();
    let p = match kind {
        "zero" => Profile::Zero,
        "constant" => Profile::Constant { amp: number(args.next(), "amplitude")?, l2 },
        "sine" => Profile::Sine { amp: number(args.next(), "amplitude")?, freq: number(args.next(), "frequency")?, l2 },
        "gaussian" => {
            let center = number(args.next(), "center")?;
            let width = number(args.next(), "width")?;
            if !(width > 0.0) {
                return Err("gaussian width must be positive".into());
            }
            Profile::Gaussian { center, width, amp: number(args.next(), "amplitude")?, l2 }
        }
        "bump" => Profile::Bump { amp: number(args.next(), "amplitude")?, l2 },
        "random" if allow_random => {
            let amp = number(args.next(), "amplitude")?;
            let modes = number(args.next(), "mode count")?;
            if !(modes >= 1.0 && modes.fract() == 0.0) {
                return Err("mode count must be a positive integer".into());
            }
            Profile::Random { amp, modes: modes as usize }
        }
        "file" => {
            let rest = text.trim_start().strip_prefix("file").unwrap_or("").trim();
            if rest.is_empty() {
                return Err("missing file path".into());
            }
            return Ok(Profile::File(base.join(rest)));
        }
        other => return Err(format!("unknown descriptor \"{other}\"")),
    };
    if args.next().is_some() {
        return Err(format!("too many arguments for \"{kind}\""));
    }
    Ok(p)
}

fn scale_to(f: Field, amp: f64, l2: bool) -> Field {
    let size = if l2 { f.norm() } else { f.max_abs() };
    if size == 0.0 {
        f
    } else {
        f.scaled(amp / size)
    }
}

/// Samples a descriptor on the grid.
pub fn realize(profile: &Profile, grid: Grid, seed: u64) -> Result<Field, String> {
    let l = grid.length();
    let f = match profile {
        Profile::Zero => Field::zeros(grid),
        Profile::Constant { amp, l2 } => scale_to(Field::from_fn(grid, |_| 1.0), *amp, *l2),
        Profile::Sine { amp, freq, l2 } => {
            let f = Field::from_fn(grid, |x| (freq * PI * x / l).sin());
            if *l2 {
                scale_to(f, *amp, true)
            } else {
                f.scaled(*amp)
            }
        }
        Profile::Gaussian { center, width, amp, l2 } => {
            let g = |x: f64| (-((x - center) / width).powi(2)).exp();
            let (g0, gl) = (g(0.0), g(l));
            // subtract the chord so the profile vanishes at both ends
            let f = Field::from_fn(grid, |x| g(x) - (g0 * (l - x) + gl * x) / l);
            scale_to(f, *amp, *l2)
        }
        Profile::Bump { amp, l2 } => scale_to(Field::from_fn(grid, |x| x * (l - x) * (l - x)), *amp, *l2),
        Profile::Random { amp, modes } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coef: Vec<f64> = (0..*modes).map(|j| rng.gen_range(-1.0..1.0) / (j + 1) as f64).collect();
            let f = Field::from_fn(grid, |x| {
                coef.iter().enumerate().map(|(j, c)| c * ((j + 1) as f64 * PI * x / l).sin()).sum()
            });
            scale_to(f, *amp, true)
        }
        Profile::File(path) => read_profile_file(path, grid)?,
    };
    Ok(f)
}

/// One value per node, separated by newlines or commas; `#` starts a comment.
fn read_profile_file(path: &Path, grid: Grid) -> Result<Field, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut vals = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let v: f64 = tok.parse().map_err(|_| format!("{}:{}: \"{tok}\" is not a number", path.display(), i + 1))?;
            vals.push(v);
        }
    }
    if vals.len() != grid.nodes() {
        return Err(format!("{} holds {} values, grid has {} nodes", path.display(), vals.len(), grid.nodes()));
    }
    Field::new(grid, vals).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use kdvf_core::grid::make_grid;

    const BASE: &str = r#"
[scenario]
name = "t1"
model = "linear"
checks = ["regulation", "dissipation"]

[grid]
L = 1.5
n = 40

[time]
dt = 1e-3
T = 1.0

[control]
k = "auto"
r = 0.05

[inputs]
d1 = "sine 0.05 1"
"#;

    fn parse(text: &str) -> Result<Scenario, ConfigError> {
        parse_scenario(text, Path::new("."))
    }

    #[test]
    fn parses_defaults() {
        let s = parse(BASE).unwrap();
        assert_eq!(s.name, "t1");
        assert_eq!(s.model, Model::Linear);
        assert_eq!(s.checks, vec![Check::Regulation, Check::Dissipation]);
        assert_eq!((s.theta, s.record_every, s.lambda, s.eta0, s.d2), (1.0, 1, 1.0, 0.0, 0.0));
        assert_eq!(s.k, Gain::Auto);
        assert_eq!(s.d1, Profile::Sine { amp: 0.05, freq: 1.0, l2: false });
        assert_eq!(s.w0, Profile::Zero);
    }

    #[test]
    fn errors_name_line_and_field() {
        let e = parse(&BASE.replace("n = 40", "n = 4")).unwrap_err();
        assert_eq!(e.line, Some(9));
        assert_eq!(e.field.as_deref(), Some("grid.n"));
        let e = parse(&BASE.replace("k = \"auto\"", "k = \"fast\"")).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("control.k"));
        assert_eq!(e.line, Some(16));
        let e = parse(&BASE.replace("d1 = \"sine 0.05 1\"", "d1 = \"sine 0.05\"")).unwrap_err();
        assert!(e.to_string().contains("inputs.d1") && e.to_string().contains("frequency"), "{e}");
        let e = parse(&BASE.replace("model = \"linear\"", "model = \"cubic\"")).unwrap_err();
        assert_eq!(e.line, Some(4));
        let e = parse(&BASE.replace("T = 1.0", "T = 1.0\nspeed = 2")).unwrap_err();
        assert!(e.message.contains("speed"), "{e}");
        let e = parse(&BASE.replace("dt = 1e-3", "dt = nan")).unwrap_err();
        assert_eq!(e.field.as_deref(), Some("time.dt"));
        let e = parse(&BASE.replace("\"dissipation\"", "\"vibes\"")).unwrap_err();
        assert_eq!(e.line, Some(5));
    }

    #[test]
    fn d2_restricted_to_constants() {
        let s = parse(&BASE.replace("d1 = \"sine 0.05 1\"", "d2 = \"constant 0.01\"")).unwrap();
        assert_eq!(s.d2, 0.01);
        assert!(parse(&BASE.replace("d1 = \"sine 0.05 1\"", "d2 = \"sine 1 1\"")).is_err());
    }

    #[test]
    fn descriptor_grammar() {
        let b = Path::new("/data");
        assert_eq!(parse_profile("bump 0.05 l2", b, false), Ok(Profile::Bump { amp: 0.05, l2: true }));
        assert_eq!(parse_profile("file shapes/d.csv", b, false), Ok(Profile::File(PathBuf::from("/data/shapes/d.csv"))));
        assert!(parse_profile("random 1 3", b, false).is_err());
        assert!(parse_profile("random 1 3", b, true).is_ok());
        assert!(parse_profile("zero 1", b, false).is_err());
        assert!(parse_profile("gaussian 0.5 0 1", b, false).is_err());
        assert!(parse_profile("", b, false).is_err());
    }

    #[test]
    fn realized_profiles() {
        let g = make_grid(1.5, 60).unwrap();
        let bump = realize(&Profile::Bump { amp: 0.05, l2: true }, g, 0).unwrap();
        assert!((bump.norm() - 0.05).abs() < 1e-15);
        let peak = realize(&Profile::Bump { amp: 2.0, l2: false }, g, 0).unwrap();
        assert!((peak.max_abs() - 2.0).abs() < 1e-12);
        let gs = realize(&Profile::Gaussian { center: 0.3, width: 0.2, amp: 1.0, l2: false }, g, 0).unwrap();
        assert!(gs.values()[0].abs() < 1e-15 && gs.values()[60].abs() < 1e-15);
        let a = realize(&Profile::Random { amp: 0.1, modes: 4 }, g, 7).unwrap();
        let b = realize(&Profile::Random { amp: 0.1, modes: 4 }, g, 7).unwrap();
        let c = realize(&Profile::Random { amp: 0.1, modes: 4 }, g, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let s = realize(&Profile::Sine { amp: 0.05, freq: 1.0, l2: false }, g, 0).unwrap();
        assert!((s.values()[30] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn profile_files() {
        let dir = tempfile::tempdir().unwrap();
        let g = make_grid(1.5, 8).unwrap();
        let p = dir.path().join("w.csv");
        std::fs::write(&p, "# w0\n0, 1, 2\n3,4,5\n6\n7\n8\n").unwrap();
        let f = realize(&Profile::File(p.clone()), g, 0).unwrap();
        assert_eq!(f.values()[8], 8.0);
        std::fs::write(&p, "0,1,2").unwrap();
        assert!(realize(&Profile::File(p), g, 0).unwrap_err().contains("9 nodes"));
    }
}
