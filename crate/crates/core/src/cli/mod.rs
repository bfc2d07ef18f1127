//! Experiment runner: TOML configs, the experiment registry, output files
//! and the reproducibility check.
//!
//! Output goes to `<root>/<output_dir>` where `root` is `$SBM_OUTPUT_ROOT`
//! (default `output`) and `output_dir` defaults to the experiment name.
//! Each run writes `report.json`, `estimates.csv`, one CSV per table, SVG
//! charts when enabled and finally `manifest.json`.

pub mod plot;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{self, ConvexTest, Report};
use crate::error::{Error, Result};
use crate::heat;
use crate::lattice::{self, Field, Geometry};
use crate::particle;
use crate::rng::{Role, StreamKey};
use crate::sde::{self, Drift, SbmParams, Scheme};
use crate::stats::{McEstimate, Moments, DEFAULT_LEVEL};

pub const OUTPUT_ROOT_ENV: &str = "SBM_OUTPUT_ROOT";
const DEFAULT_ROOT: &str = "output";

/// Process exit status for a run outcome or error.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const STATISTICAL_FAIL: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const BLOWUP: i32 = 3;
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NumericalBlowup { .. } | Error::Quadrature { .. } => exit::BLOWUP,
        _ => exit::USAGE,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub d: usize,
    #[serde(rename = "L")]
    pub side: usize,
}

fn default_b() -> f64 {
    1.0
}
fn default_rho() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    1e-2
}
fn default_horizon() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub drift: Drift,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_n: Option<f64>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            b: default_b(),
            rho: default_rho(),
            dt: default_dt(),
            horizon: default_horizon(),
            scheme: Scheme::default(),
            drift: Drift::default(),
            bound_n: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteMass {
    pub at: Vec<i64>,
    pub mass: f64,
}

/// An initial profile: flat, a point mass (at the origin by default) or an
/// explicit list of site masses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    Flat {
        theta: f64,
    },
    Point {
        mass: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        at: Vec<i64>,
    },
    Sites {
        sites: Vec<SiteMass>,
    },
}

impl FieldSpec {
    pub fn build(&self, geometry: &Geometry) -> Result<Field> {
        match self {
            FieldSpec::Flat { theta } => Field::new(
                geometry.clone(),
                vec![*theta; geometry.site_count()],
            ),
            FieldSpec::Point { mass, at } => {
                let at = if at.is_empty() { vec![0; geometry.dim()] } else { at.clone() };
                Field::from_sites(geometry, &[(at, *mass)])
            }
            FieldSpec::Sites { sites } => {
                let list: Vec<(Vec<i64>, f64)> =
                    sites.iter().map(|s| (s.at.clone(), s.mass)).collect();
                Field::from_sites(geometry, &list)
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<FieldSpec>,
    /// signed heat datum
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<FieldSpec>,
    /// nonnegative test function
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<FieldSpec>,
}

/// Experiment-specific settings; each experiment documents which it reads.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ns: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tests: Option<Vec<ConvexTest>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoffs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_factors: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heat_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sde_replicas: Option<u64>,
    /// write the first `snapshots` replicas at `times` to snapshots.csv
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub seed: u64,
    pub replicas: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub svg: bool,
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub options: Options,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        find(&cfg.experiment)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.geometry.d, self.geometry.side)
    }

    pub fn sbm_params(&self) -> Result<SbmParams> {
        let m = &self.model;
        let p = SbmParams::new(m.b, m.rho, m.dt, m.horizon)?
            .with_scheme(m.scheme)
            .with_drift(m.drift);
        match m.bound_n {
            Some(n) => p.with_bound(n),
            None => Ok(p),
        }
    }

    fn field(&self, spec: &Option<FieldSpec>, name: &str) -> Result<Field> {
        let spec = spec
            .as_ref()
            .ok_or_else(|| Error::config(format!("experiment `{}` needs initial.{name}", self.experiment)))?;
        spec.build(&self.geometry()?)
    }

    fn times(&self) -> Result<Vec<f64>> {
        self.options
            .times
            .clone()
            .ok_or_else(|| Error::config(format!("experiment `{}` needs options.times", self.experiment)))
    }

    fn params_json(&self) -> serde_json::Value {
        serde_json::json!({
            "replicas": self.replicas,
            "geometry": self.geometry,
            "model": self.model,
            "initial": self.initial,
            "options": self.options,
        })
    }

    fn report(&self) -> Report {
        Report::new(&self.experiment, self.params_json(), self.seed)
    }
}

/// A numeric table written as CSV and optionally charted.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub chart: Option<Chart>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x: String,
    /// (column, optional (low column, high column))
    pub series: Vec<(String, Option<(String, String)>)>,
    pub log_x: bool,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            chart: None,
        }
    }

    pub fn row(&mut self, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push(values);
    }

    pub fn with_chart(mut self, chart: Chart) -> Self {
        self.chart = Some(chart);
        self
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    fn to_svg(&self) -> Option<String> {
        let chart = self.chart.as_ref()?;
        let x = self.column(&chart.x)?;
        let cols: Vec<(String, Vec<f64>, Option<(Vec<f64>, Vec<f64>)>)> = chart
            .series
            .iter()
            .filter_map(|(name, band)| {
                let y = self.column(name)?;
                let band = band
                    .as_ref()
                    .and_then(|(lo, hi)| Some((self.column(lo)?, self.column(hi)?)));
                Some((name.clone(), y, band))
            })
            .collect();
        let series: Vec<plot::Series> = cols
            .iter()
            .map(|(name, y, band)| plot::Series {
                name,
                y,
                band: band.as_ref().map(|(lo, hi)| (lo.as_slice(), hi.as_slice())),
            })
            .collect();
        Some(plot::line_chart(&chart.title, &chart.x, &x, &series, chart.log_x))
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: Report,
    pub tables: Vec<Table>,
}

pub struct Experiment {
    pub name: &'static str,
    /// the statement the experiment checks
    pub anchor: &'static str,
    run: fn(&ExperimentConfig) -> Result<Outcome>,
    config: fn() -> ExperimentConfig,
    quick: fn(&mut ExperimentConfig),
}

impl Experiment {
    pub fn default_config(&self) -> ExperimentConfig {
        (self.config)()
    }

    /// A reduced-cost variant of the default config.
    pub fn quick_config(&self) -> ExperimentConfig {
        let mut c = self.default_config();
        (self.quick)(&mut c);
        c
    }

    pub fn run(&self, cfg: &ExperimentConfig) -> Result<Outcome> {
        (self.run)(cfg)
    }
}

pub fn registry() -> &'static [Experiment] {
    &REGISTRY
}

pub fn find(name: &str) -> Result<&'static Experiment> {
    REGISTRY
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::UnknownExperiment(name.to_string()))
}

/// `name → anchor` lines.
pub fn list_experiments() -> String {
    let width = REGISTRY.iter().map(|e| e.name.len()).max().unwrap_or(0);
    REGISTRY
        .iter()
        .map(|e| format!("{:width$} → {}\n", e.name, e.anchor))
        .collect()
}

fn base(name: &str, seed: u64, replicas: u64, d: usize, side: usize) -> ExperimentConfig {
    ExperimentConfig {
        experiment: name.to_string(),
        seed,
        replicas,
        output_dir: None,
        svg: false,
        geometry: GeometrySpec { d, side },
        model: ModelSpec::default(),
        initial: InitialSpec::default(),
        options: Options::default(),
    }
}

fn point(mass: f64, at: &[i64]) -> FieldSpec {
    FieldSpec::Point {
        mass,
        at: at.to_vec(),
    }
}

fn sites(list: &[(&[i64], f64)]) -> FieldSpec {
    FieldSpec::Sites {
        sites: list
            .iter()
            .map(|(at, mass)| SiteMass {
                at: at.to_vec(),
                mass: *mass,
            })
            .collect(),
    }
}

static REGISTRY: [Experiment; 13] = [
    Experiment {
        name: "green-b2",
        anchor: "b₂ := 2/g(0,0) with g the Green function of the rate-one walk (d ≥ 3)",
        run: run_green,
        config: || {
            let mut c = base("green-b2", 20_241, 400_000, 3, 1);
            c.options.tail_tol = Some(1e-7);
            c.options.tolerance = Some(1e-3);
            c
        },
        quick: |c| c.replicas = 20_000,
    },
    Experiment {
        name: "heat-qlimit",
        anchor: "q_f nonnegative and nondecreasing; ⟨q_f(t),1⟩ → ⟨f⁻,1⟩ and ⟨ζ⁻(t),1⟩ → 0",
        run: run_qlimit,
        config: || {
            let mut c = base("heat-qlimit", 0, 1, 1, 128);
            c.model.horizon = 200.0;
            c.initial.f = Some(sites(&[(&[0], 2.0), (&[1], -1.0)]));
            c.options.heat_points = Some(80);
            c.options.tolerance = Some(1e-2);
            c
        },
        quick: |c| {
            c.geometry.side = 32;
            c.model.horizon = 20.0;
            c.options.heat_points = Some(20);
            c.options.tolerance = Some(0.5);
        },
    },
    Experiment {
        name: "heat-l1-collapse",
        anchor: "⟨|ζ_f(t) − ζ^M(t)|, 1⟩ → 0 with ζ^M started from M·1_0, M = ⟨f,1⟩",
        run: run_l1_collapse,
        config: || {
            let mut c = base("heat-l1-collapse", 0, 1, 1, 128);
            c.initial.f = Some(point(1.0, &[1]));
            c.options.times = Some(vec![1.0, 10.0, 100.0]);
            c.options.tolerance = Some(0.05);
            c
        },
        quick: |c| {
            c.geometry.side = 64;
            c.options.times = Some(vec![1.0, 10.0]);
        },
    },
    Experiment {
        name: "martingale",
        anchor: "ū, v̄ are nonnegative square-integrable martingales with [ū]_t = b∫⟨u_s,v_s⟩ds",
        run: run_martingale,
        config: || {
            let mut c = base("martingale", 41, 10_000, 1, 32);
            c.model = ModelSpec {
                b: 1.0,
                rho: 1.0,
                dt: 1e-3,
                horizon: 5.0,
                ..ModelSpec::default()
            };
            c.initial.u = Some(FieldSpec::Flat { theta: 1.0 });
            c.initial.v = Some(FieldSpec::Sites {
                sites: (0..32)
                    .map(|i| SiteMass {
                        at: vec![i],
                        mass: if i == 0 { 2.0 } else { 1.0 },
                    })
                    .collect(),
            });
            c.options.stride = Some(1);
            c.options.tolerance = Some(0.1);
            c
        },
        quick: |c| {
            c.replicas = 64;
            c.model.horizon = 0.5;
            c.model.dt = 1e-2;
        },
    },
    Experiment {
        name: "pam-gbm",
        anchor: "PAM on one site is geometric Brownian motion: E[w_t] = w_0, E[w_t²] = w_0² e^{bt}",
        run: run_pam_gbm,
        config: || {
            let mut c = base("pam-gbm", 5, 100_000, 1, 1);
            c.model = ModelSpec {
                b: 1.0,
                rho: 1.0,
                dt: 1e-2,
                horizon: 1.0,
                scheme: Scheme::SplitStep,
                ..ModelSpec::default()
            };
            c.initial.u = Some(FieldSpec::Flat { theta: 1.0 });
            c
        },
        quick: |c| c.replicas = 2_000,
    },
    Experiment {
        name: "selfduality",
        anchor: "PAM self-duality ⟨w̃_t, θ1⟩ = ⟨φ, w_t⟩ in law, w_0 = θ1, w̃_0 = φ",
        run: run_selfduality,
        config: || {
            let mut c = base("selfduality", 6, 20_000, 1, 16);
            c.model = ModelSpec {
                b: 0.5,
                rho: 1.0,
                dt: 1e-2,
                horizon: 2.0,
                scheme: Scheme::SplitStep,
                ..ModelSpec::default()
            };
            c.initial.phi = Some(point(1.0, &[0]));
            c.options.theta = Some(1.0);
            c.options.lambdas = Some(vec![0.5, 1.0, 2.0]);
            c
        },
        quick: |c| {
            c.replicas = 200;
            c.model.horizon = 0.5;
        },
    },
    Experiment {
        name: "comparison",
        anchor: "E[Φ(ū_t + v̄_t)] ≤ E[Φ(w̄_t)] for convex nondecreasing Φ ≥ 0, w the PAM from u_0 + v_0",
        run: run_comparison,
        config: || {
            let mut c = base("comparison", 7, 10_000, 1, 16);
            c.model = ModelSpec {
                b: 1.0,
                rho: 1.0,
                dt: 2e-3,
                horizon: 5.0,
                ..ModelSpec::default()
            };
            c.initial.u = Some(point(1.0, &[0]));
            c.initial.v = Some(point(1.0, &[1]));
            c.options.times = Some(vec![1.0, 2.0, 5.0]);
            c.options.tests = Some(vec![ConvexTest::Square, ConvexTest::ExpScaled]);
            c
        },
        quick: |c| {
            c.replicas = 100;
            c.model.horizon = 1.0;
            c.model.dt = 1e-2;
            c.options.times = Some(vec![0.5, 1.0]);
        },
    },
    Experiment {
        name: "rho1-identities",
        anchor: "for ρ = 1: η = v − u solves the heat equation, u = min(u,v) + η⁻ and min(u,v)² ≤ uv",
        run: run_rho1,
        config: || {
            let mut c = base("rho1-identities", 8, 200, 1, 32);
            c.model = ModelSpec {
                b: 1.0,
                rho: 1.0,
                dt: 1e-3,
                horizon: 5.0,
                ..ModelSpec::default()
            };
            c.initial.u = Some(point(2.0, &[0]));
            c.initial.v = Some(sites(&[(&[1], 1.0), (&[-1], 2.0)]));
            c.options.times = Some((0..=50).map(|k| 0.1 * k as f64).collect());
            c.options.tolerance = Some(1e-6);
            c
        },
        quick: |c| {
            c.replicas = 8;
            c.model.horizon = 1.0;
            c.options.times = Some(vec![0.0, 0.5, 1.0]);
        },
    },
    Experiment {
        name: "stepping-stone",
        anchor: "for ρ = −1 and u_0 + v_0 ≡ 1 the sum u_t + v_t ≡ 1 (interacting Fisher–Wright diffusions)",
        run: run_stepping_stone,
        config: || {
            let mut c = base("stepping-stone", 9, 100, 1, 32);
            c.model = ModelSpec {
                b: 1.0,
                rho: -1.0,
                dt: 1e-3,
                horizon: 5.0,
                ..ModelSpec::default()
            };
            c.initial.u = Some(FieldSpec::Flat { theta: 0.3 });
            c.options.tolerance = Some(1e-10);
            c
        },
        quick: |c| {
            c.replicas = 4;
            c.model.horizon = 0.5;
        },
    },
    Experiment {
        name: "extinction-trend",
        anchor: "d ≤ 2, ρ = 1, ū_0 ≤ v̄_0: ū_t → 0 while v̄_t − ū_t stays v̄_0 − ū_0",
        run: run_extinction,
        config: || {
            let mut c = base("extinction-trend", 10, 1_000, 1, 64);
            c.model = ModelSpec {
                b: 1.0,
                rho: 1.0,
                dt: 5e-3,
                horizon: 50.0,
                scheme: Scheme::SplitStep,
                ..ModelSpec::default()
            };
            c.initial.u = Some(point(1.0, &[0]));
            c.initial.v = Some(sites(&[(&[1], 1.0), (&[-1], 1.0)]));
            c.options.times = Some(vec![5.0, 20.0, 50.0]);
            c.options.eps = Some(0.05);
            c.options.tolerance = Some(1e-9);
            c
        },
        quick: |c| {
            c.replicas = 32;
            c.geometry.side = 16;
            c.model.horizon = 2.0;
            c.model.dt = 2e-2;
            c.options.times = Some(vec![0.5, 1.0, 2.0]);
        },
    },
    Experiment {
        name: "duality-functional",
        anchor: "E[exp(−⟨w_{T*}, w̃_{T−T*}⟩)] − E[exp(−θ w̄_T)] ≤ θ(q̄(T) − q̄(T*)) with w = min(u,v)",
        run: run_duality,
        config: || {
            let mut c = base("duality-functional", 11, 4_000, 1, 32);
            c.model = ModelSpec {
                b: 1.0,
                rho: 1.0,
                dt: 5e-3,
                horizon: 10.0,
                ..ModelSpec::default()
            };
            c.initial.u = Some(point(2.0, &[0]));
            c.initial.v = Some(sites(&[(&[1], 1.0), (&[-1], 2.0)]));
            c.options.theta = Some(1.0);
            c.options.eps = Some(0.05);
            c.options.times = Some(vec![2.0, 5.0, 10.0]);
            c.options.heat_points = Some(60);
            c
        },
        quick: |c| {
            c.replicas = 32;
            c.model.dt = 2e-2;
            c.options.times = Some(vec![2.0, 5.0]);
            c.model.horizon = 5.0;
        },
    },
    Experiment {
        name: "particle-bridge",
        anchor: "particles of mass 1/n with initial mass of order n converge to the diffusion as n → ∞",
        run: run_bridge,
        config: || {
            let mut c = base("particle-bridge", 12, 10_000, 1, 8);
            c.model = ModelSpec {
                b: 1.0,
                rho: 1.0,
                dt: 1e-3,
                horizon: 1.0,
                ..ModelSpec::default()
            };
            c.initial.u = Some(FieldSpec::Flat { theta: 0.375 });
            c.initial.v = Some(FieldSpec::Flat { theta: 0.125 });
            c.options.ns = Some(vec![10, 50, 250]);
            c.options.sde_replicas = Some(40_000);
            c
        },
        quick: |c| {
            c.replicas = 50;
            c.options.sde_replicas = Some(50);
            c.options.ns = Some(vec![10, 50]);
            c.model.dt = 1e-2;
        },
    },
    Experiment {
        name: "ui-probe",
        anchor: "uniform integrability of ū_t via PAM comparison; PAM second moments bounded in time iff b < b₂",
        run: run_ui_probe,
        config: || {
            let mut c = base("ui-probe", 13, 1_000, 3, 6);
            c.model = ModelSpec {
                b: 1.0,
                rho: 1.0,
                dt: 1e-2,
                horizon: 5.0,
                ..ModelSpec::default()
            };
            c.initial.u = Some(point(1.0, &[0, 0, 0]));
            c.initial.v = Some(point(1.0, &[1, 0, 0]));
            c.options.times = Some(vec![1.0, 3.0, 5.0]);
            c.options.cutoffs = Some(vec![1.0, 2.0, 4.0, 8.0]);
            c.options.b_factors = Some(vec![0.5, 2.0]);
            c.options.theta = Some(1.0);
            c
        },
        quick: |c| {
            c.replicas = 32;
            c.geometry.side = 4;
            c.model.horizon = 1.0;
            c.options.times = Some(vec![0.5, 1.0]);
        },
    },
];

fn run_green(cfg: &ExperimentConfig) -> Result<Outcome> {
    let d = cfg.geometry.d;
    let tail_tol = cfg.options.tail_tol.unwrap_or(1e-7);
    let tol = cfg.options.tolerance.unwrap_or(1e-3);
    let g = lattice::green_origin_detailed(d, tail_tol)?;
    let b2 = 2.0 / g.value;
    let mc = lattice::green_origin_mc(d, cfg.replicas, cfg.seed)?;
    let mut report = cfg.report();
    report
        .value("g00_series", g.value)
        .value("g00_partial_sum", g.partial_sum)
        .value("g00_tail_estimate", g.tail_estimate)
        .value("g00_error_estimate", g.error_estimate)
        .value("b2", b2)
        .estimate("g00_monte_carlo", &mc)
        .value("series_minus_mc", g.value - mc.mean);
    report
        .check("|g_series - g_mc| <= tolerance", (g.value - mc.mean).abs() <= tol)
        .check("b2 * g = 2", (b2 * g.value - 2.0).abs() <= 1e-12);
    report.note(format!(
        "series truncated at {} steps; Monte Carlo SE {:.2e}",
        g.truncation, mc.std_error
    ));
    let sums = lattice::green_partial_sums(d, 1 << 12)?;
    let mut table = Table::new("partial_sums", &["steps", "partial_sum"]).with_chart(Chart {
        title: format!("partial sums of p^n(0,0), d = {d}"),
        x: "steps".into(),
        series: vec![("partial_sum".into(), None)],
        log_x: true,
    });
    let mut n = 1;
    while n <= sums.len() {
        table.row(vec![n as f64, sums[n - 1]]);
        n *= 2;
    }
    Ok(Outcome {
        report,
        tables: vec![table],
    })
}

fn run_qlimit(cfg: &ExperimentConfig) -> Result<Outcome> {
    let f = cfg.field(&cfg.initial.f, "f")?;
    let horizon = cfg.model.horizon;
    let tol = cfg.options.tolerance.unwrap_or(1e-2);
    let grid = heat::geometric_grid(1e-2_f64.min(horizon), horizon, cfg.options.heat_points.unwrap_or(60));
    let q = heat::q_compensator(&f, &grid)?;
    let pos = heat::positive_mass_path(&f, &grid)?;
    let last = grid.len() - 1;
    let mut report = cfg.report();
    report
        .value("q_limit", q.limit)
        .value("q_total_final", q.total[last])
        .value("negative_mass_final", q.negative_mass[last])
        .value("max_decrease", q.max_decrease)
        .value("max_residual", q.max_residual)
        .value("quadrature_steps", q.steps as f64)
        .value("refinements", q.refinements as f64);
    let total_monotone = q.total.windows(2).all(|w| w[1] >= w[0] - 1e-8);
    report
        .check("|q_total(T) - <f-,1>| <= tolerance", (q.total[last] - q.limit).abs() <= tol)
        .check("<zeta-(T),1> <= tolerance", q.negative_mass[last] <= tol)
        .check("q nondecreasing per site within 1e-8", q.max_decrease <= 1e-8)
        .check("q_total nondecreasing within 1e-8", total_monotone);
    let mut table = Table::new(
        "compensator",
        &["t", "q_total", "negative_mass", "positive_mass", "limit_gap"],
    )
    .with_chart(Chart {
        title: "compensator total and negative mass".into(),
        x: "t".into(),
        series: vec![("q_total".into(), None), ("negative_mass".into(), None)],
        log_x: true,
    });
    let mut sites = Table::new("compensator_sites", &["t", "site_index", "value"]);
    for k in 0..grid.len() {
        table.row(vec![grid[k], q.total[k], q.negative_mass[k], pos[k], q.limit - q.total[k]]);
        for (i, &v) in q.q[k].values().iter().enumerate() {
            sites.row(vec![grid[k], i as f64, v]);
        }
    }
    Ok(Outcome {
        report,
        tables: vec![table, sites],
    })
}

fn run_l1_collapse(cfg: &ExperimentConfig) -> Result<Outcome> {
    let f = cfg.field(&cfg.initial.f, "f")?;
    let times = cfg.times()?;
    let tol = cfg.options.tolerance.unwrap_or(0.05);
    let mut report = cfg.report();
    let mut table = Table::new("l1_distance", &["t", "distance"]).with_chart(Chart {
        title: "L1 distance to the point-source solution".into(),
        x: "t".into(),
        series: vec![("distance".into(), None)],
        log_x: true,
    });
    let d0 = heat::l1_distance_to_point_source(&f, 0.0)?;
    table.row(vec![0.0, d0]);
    let mut dist = Vec::new();
    for &t in &times {
        let d = heat::l1_distance_to_point_source(&f, t)?;
        report.value(format!("distance_t{t}"), d);
        table.row(vec![t, d]);
        dist.push(d);
    }
    let decreasing = dist.windows(2).all(|w| w[1] < w[0]);
    let last = dist.last().copied().unwrap_or(d0);
    report
        .check("strictly decreasing across times", decreasing)
        .check("final distance < tolerance", last < tol);
    Ok(Outcome {
        report,
        tables: vec![table],
    })
}

fn run_martingale(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.sbm_params()?;
    let u = cfg.field(&cfg.initial.u, "u")?;
    let v = cfg.field(&cfg.initial.v, "v")?;
    let stride = cfg.options.stride.unwrap_or(1);
    let r = analysis::martingale_test(&p, &u, &v, cfg.replicas, cfg.seed, stride)?;
    let tol = cfg.options.tolerance.unwrap_or(r.gap_tolerance);
    let mut report = cfg.report();
    report
        .value("u0_bar", r.u0_bar)
        .estimate("u_bar_T", &r.u_bar)
        .estimate("v_bar_T", &r.v_bar)
        .value("z_u", r.z_u)
        .value("z_v", r.z_v)
        .estimate("realized_qv", &r.realized_qv)
        .estimate("bracket_integral", &r.bracket)
        .value("qv_relative_gap", r.qv_gap)
        .value("cov_qv_mismatch", r.cov_qv_mismatch);
    report
        .check("|z_u| <= 3", r.z_u.abs() <= 3.0)
        .check("|z_v| <= 3", r.z_v.abs() <= 3.0)
        .check("qv relative gap <= tolerance", r.qv_gap <= tol);
    Ok(Outcome {
        report,
        tables: Vec::new(),
    })
}

fn run_pam_gbm(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.sbm_params()?;
    let w0 = cfg.field(&cfg.initial.u, "u")?;
    let steps = p.steps();
    let origin = w0.geometry().origin();
    let samples = analysis::replicate(cfg.replicas, |r| {
        let mut noise = StreamKey::new(cfg.seed, r, Role::Primary).gaussian();
        let s = sde::run_pam(&w0, &p, &mut noise, steps, |_, _| {})?;
        Ok(s.w.get(origin))
    })?;
    let first = McEstimate::from_moments(&Moments::from_slice(&samples), DEFAULT_LEVEL);
    let sq: Vec<f64> = samples.iter().map(|x| x * x).collect();
    let second = McEstimate::from_moments(&Moments::from_slice(&sq), DEFAULT_LEVEL);
    let expected_mean = lattice::heat_semigroup_apply(&w0, p.horizon, 1e-16)?.get(origin);
    let mut report = cfg.report();
    report
        .estimate("w_T", &first)
        .estimate("w_T_squared", &second)
        .value("expected_mean", expected_mean);
    let z1 = (first.mean - expected_mean) / first.std_error;
    report.value("z_mean", z1).check("|z_mean| <= 3", z1.abs() <= 3.0);
    if w0.geometry().site_count() == 1 {
        let expected = w0.get(0).powi(2) * (p.b * p.horizon).exp();
        let z2 = (second.mean - expected) / second.std_error;
        report
            .value("expected_second_moment", expected)
            .value("z_second", z2)
            .check("|z_second| <= 3", z2.abs() <= 3.0);
    } else {
        report.note("second-moment closed form applies to a single site only");
    }
    Ok(Outcome {
        report,
        tables: Vec::new(),
    })
}

fn run_selfduality(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.sbm_params()?;
    let phi = cfg.field(&cfg.initial.phi, "phi")?;
    let theta = cfg.options.theta.unwrap_or(1.0);
    let lambdas = cfg.options.lambdas.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0]);
    let r = analysis::self_duality_test(&p, theta, &phi, &lambdas, cfg.replicas, cfg.seed)?;
    let mut report = cfg.report();
    let mut table = Table::new(
        "laplace",
        &["lambda", "dual_mean", "dual_se", "primal_mean", "primal_se", "z"],
    );
    for pair in &r.pairs {
        let l = pair.lambda;
        report
            .estimate(format!("dual_lambda{l}"), &pair.dual)
            .estimate(format!("primal_lambda{l}"), &pair.primal)
            .value(format!("z_lambda{l}"), pair.z);
        report.check(&format!("|z| <= 3 at lambda {l}"), pair.z.abs() <= 3.0);
        table.row(vec![
            l,
            pair.dual.mean,
            pair.dual.std_error,
            pair.primal.mean,
            pair.primal.std_error,
            pair.z,
        ]);
    }
    Ok(Outcome {
        report,
        tables: vec![table],
    })
}

fn run_comparison(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.sbm_params()?;
    let u = cfg.field(&cfg.initial.u, "u")?;
    let v = cfg.field(&cfg.initial.v, "v")?;
    let times = cfg.times()?;
    let tests = cfg
        .options
        .tests
        .clone()
        .unwrap_or_else(|| vec![ConvexTest::Square, ConvexTest::ExpScaled]);
    let r = analysis::comparison_test(&p, &u, &v, &tests, &times, cfg.replicas, cfg.seed)?;
    let mut report = cfg.report();
    let mut tables = Vec::new();
    for &test in &tests {
        let name = test.name();
        let mut table = Table::new(
            &format!("comparison_{name}"),
            &["t", "sbm", "sbm_lo", "sbm_hi", "pam", "pam_lo", "pam_hi", "z"],
        )
        .with_chart(Chart {
            title: format!("E[Phi] for Phi = {name}"),
            x: "t".into(),
            series: vec![
                ("sbm".into(), Some(("sbm_lo".into(), "sbm_hi".into()))),
                ("pam".into(), Some(("pam_lo".into(), "pam_hi".into()))),
            ],
            log_x: false,
        });
        for pt in r.points.iter().filter(|pt| pt.test == test) {
            report
                .estimate(format!("sbm_{name}_t{}", pt.t), &pt.sbm)
                .estimate(format!("pam_{name}_t{}", pt.t), &pt.pam)
                .check(&format!("{name} at t = {}: sbm <= pam + 2 SE", pt.t), pt.pass);
            table.row(vec![
                pt.t,
                pt.sbm.mean,
                pt.sbm.ci_low,
                pt.sbm.ci_high,
                pt.pam.mean,
                pt.pam.ci_low,
                pt.pam.ci_high,
                pt.z,
            ]);
        }
        tables.push(table);
    }
    Ok(Outcome { report, tables })
}

fn run_rho1(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.sbm_params()?;
    let u = cfg.field(&cfg.initial.u, "u")?;
    let v = cfg.field(&cfg.initial.v, "v")?;
    let times = cfg.times()?;
    let tol = cfg.options.tolerance.unwrap_or(1e-6);
    let r = analysis::rho1_identities(&p, &u, &v, &times, cfg.replicas, cfg.seed, tol)?;
    let m = &r.min_decomposition;
    let mut report = cfg.report();
    report
        .value("snapshots", m.snapshots as f64)
        .value("identity_violation_exact", m.identity_violation)
        .value("identity_violation_rounded", m.rounded_identity_violation)
        .value("product_violation", m.product_violation)
        .value("eta_heat_deviation", r.eta_heat_deviation)
        .value("eta_cross_seed_spread", r.eta_cross_seed_spread);
    report
        .check("u = min(u,v) + (v-u)^- exactly", m.identity_violation == 0.0)
        .check("min(u,v)^2 <= uv exactly", m.product_violation <= 0.0)
        .check("max |eta - heat solution| <= tolerance", r.eta_heat_deviation <= tol);
    report.note(
        "the identity residual is evaluated exactly by carrying (v-u)^- as a sum of two doubles; \
         the rounded residual is reported for reference",
    );
    Ok(Outcome {
        report,
        tables: Vec::new(),
    })
}

fn run_stepping_stone(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.sbm_params()?;
    let u = cfg.field(&cfg.initial.u, "u")?;
    let tol = cfg.options.tolerance.unwrap_or(1e-10);
    let r = analysis::stepping_stone_check(&p, &u, cfg.replicas, cfg.seed, tol)?;
    let mut report = cfg.report();
    report
        .value("max_sum_deviation", r.max_sum_deviation)
        .check("max |u + v - 1| <= tolerance", r.pass);
    Ok(Outcome {
        report,
        tables: Vec::new(),
    })
}

fn run_extinction(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.sbm_params()?;
    let u = cfg.field(&cfg.initial.u, "u")?;
    let v = cfg.field(&cfg.initial.v, "v")?;
    let times = cfg.times()?;
    let frac = cfg.options.eps.unwrap_or(0.05);
    let tol = cfg.options.tolerance.unwrap_or(1e-9);
    let eps_mass = frac * u.total();
    let pts = analysis::coexistence_estimator(&p, &u, &v, &times, eps_mass, cfg.replicas, cfg.seed)?;
    let mut report = cfg.report();
    let mut table = Table::new(
        "extinction",
        &["t", "p_u", "p_u_lo", "p_u_hi", "p_both", "u_bar", "v_bar", "eta_mass_deviation"],
    )
    .with_chart(Chart {
        title: format!("P(u_bar_T > {frac} u_bar_0)"),
        x: "t".into(),
        series: vec![("p_u".into(), Some(("p_u_lo".into(), "p_u_hi".into())))],
        log_x: false,
    });
    let scale = u.total() + v.total();
    for pt in &pts {
        report
            .estimate(format!("p_u_t{}", pt.t), &pt.p_u)
            .estimate(format!("p_both_t{}", pt.t), &pt.p_both)
            .estimate(format!("u_bar_t{}", pt.t), &pt.u_bar)
            .estimate(format!("v_bar_t{}", pt.t), &pt.v_bar)
            .value(format!("eta_mass_deviation_t{}", pt.t), pt.eta_mass_deviation);
        table.row(vec![
            pt.t,
            pt.p_u.mean,
            pt.p_u.ci_low,
            pt.p_u.ci_high,
            pt.p_both.mean,
            pt.u_bar.mean,
            pt.v_bar.mean,
            pt.eta_mass_deviation,
        ]);
    }
    let nonincreasing = pts.windows(2).all(|w| w[1].p_u.mean <= w[0].p_u.mean);
    let eta_ok = pts.iter().all(|pt| pt.eta_mass_deviation <= tol * scale);
    report
        .check("P(u_bar_T > eps) nonincreasing in T", nonincreasing)
        .check("v_bar_T - u_bar_T = v_bar_0 - u_bar_0 per replica (to roundoff)", eta_ok);
    Ok(Outcome {
        report,
        tables: vec![table],
    })
}

fn run_duality(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.sbm_params()?;
    let u = cfg.field(&cfg.initial.u, "u")?;
    let v = cfg.field(&cfg.initial.v, "v")?;
    let times = cfg.times()?;
    let theta = cfg.options.theta.unwrap_or(1.0);
    let eps = cfg.options.eps.unwrap_or(0.05);
    let points = cfg.options.heat_points.unwrap_or(60);
    let r = analysis::duality_functional_experiment(
        &p, &u, &v, theta, &times, eps, points, cfg.replicas, cfg.seed,
    )?;
    let mut report = cfg.report();
    report
        .value("q_limit", r.q_limit)
        .value("t_star", r.t_star)
        .value("q_at_t_star", r.q_at_t_star);
    let mut table = Table::new(
        "duality",
        &["t", "paired", "paired_se", "direct", "direct_se", "gap", "bound", "se"],
    );
    for pt in &r.points {
        report
            .estimate(format!("paired_t{}", pt.t), &pt.paired)
            .estimate(format!("direct_t{}", pt.t), &pt.direct)
            .value(format!("gap_t{}", pt.t), pt.gap)
            .value(format!("bound_t{}", pt.t), pt.bound)
            .check(&format!("gap <= bound + 3 SE at T = {}", pt.t), pt.pass);
        table.row(vec![
            pt.t,
            pt.paired.mean,
            pt.paired.std_error,
            pt.direct.mean,
            pt.direct.std_error,
            pt.gap,
            pt.bound,
            pt.se,
        ]);
    }
    for t in &r.skipped {
        report.note(format!("T = {t} does not exceed T* = {}; no inequality to check", r.t_star));
    }
    let mut qtable = Table::new("compensator", &["t", "q_total", "negative_mass"]).with_chart(Chart {
        title: "compensator total".into(),
        x: "t".into(),
        series: vec![("q_total".into(), None)],
        log_x: true,
    });
    for k in 0..r.compensator.times.len() {
        qtable.row(vec![
            r.compensator.times[k],
            r.compensator.total[k],
            r.compensator.negative_mass[k],
        ]);
    }
    Ok(Outcome {
        report,
        tables: vec![table, qtable],
    })
}

fn run_bridge(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.sbm_params()?;
    let u = cfg.field(&cfg.initial.u, "u")?;
    let v = cfg.field(&cfg.initial.v, "v")?;
    let ns = cfg.options.ns.clone().unwrap_or_else(|| vec![10, 50, 250]);
    let sde_replicas = cfg.options.sde_replicas.unwrap_or(cfg.replicas);
    let r = particle::scaling_bridge(
        &u, &v, p.b, p.rho, &ns, &p, cfg.replicas, sde_replicas, cfg.seed,
    )?;
    let mut report = cfg.report();
    report
        .estimate("sde_u_mean", &r.u_mean)
        .estimate("sde_u_second", &r.u_second)
        .estimate("sde_v_mean", &r.v_mean)
        .estimate("sde_v_second", &r.v_second);
    let mut table = Table::new(
        "bridge",
        &["n", "x_mean", "x_second", "y_mean", "y_second", "discrepancy", "mean_events"],
    )
    .with_chart(Chart {
        title: "particle vs diffusion moment discrepancy".into(),
        x: "n".into(),
        series: vec![("discrepancy".into(), None)],
        log_x: true,
    });
    let mut means_ok = true;
    for row in &r.rows {
        let n = row.n;
        let init = particle::ParticleState::from_density(&u, &v, n)?;
        let x0 = init.total_x() as f64 / n as f64;
        let y0 = init.total_y() as f64 / n as f64;
        let zx = (row.x_mean.mean - x0) / row.x_mean.std_error;
        let zy = (row.y_mean.mean - y0) / row.y_mean.std_error;
        means_ok &= zx.abs() <= 3.0 && zy.abs() <= 3.0;
        report
            .estimate(format!("x_mean_n{n}"), &row.x_mean)
            .estimate(format!("x_second_n{n}"), &row.x_second)
            .estimate(format!("y_mean_n{n}"), &row.y_mean)
            .estimate(format!("y_second_n{n}"), &row.y_second)
            .value(format!("discrepancy_n{n}"), row.discrepancy)
            .value(format!("z_x_mean_n{n}"), zx)
            .value(format!("z_y_mean_n{n}"), zy);
        table.row(vec![
            n as f64,
            row.x_mean.mean,
            row.x_second.mean,
            row.y_mean.mean,
            row.y_second.mean,
            row.discrepancy,
            row.mean_events,
        ]);
    }
    let d = r.discrepancies();
    report
        .check("discrepancy decreasing in n", d.windows(2).all(|w| w[1] < w[0]))
        .check("particle mean mass within 3 SE of its initial mass", means_ok);
    Ok(Outcome {
        report,
        tables: vec![table],
    })
}

fn run_ui_probe(cfg: &ExperimentConfig) -> Result<Outcome> {
    let p = cfg.sbm_params()?;
    let geometry = cfg.geometry()?;
    let u = cfg.field(&cfg.initial.u, "u")?;
    let v = cfg.field(&cfg.initial.v, "v")?;
    let times = cfg.times()?;
    let cutoffs = cfg.options.cutoffs.clone().unwrap_or_else(|| vec![1.0, 2.0, 4.0]);
    let tails = analysis::uniform_integrability_probe(&p, &u, &v, &times, &cutoffs, cfg.replicas, cfg.seed)?;
    let mut report = cfg.report();
    let mut tail_table = Table::new("tails", &["t", "cutoff", "tail", "tail_se"]);
    for tp in &tails {
        report.estimate(format!("tail_t{}_K{}", tp.t, tp.cutoff), &tp.tail);
        tail_table.row(vec![tp.t, tp.cutoff, tp.tail.mean, tp.tail.std_error]);
    }
    let monotone_in_k = times.iter().all(|&t| {
        let col: Vec<f64> = tails.iter().filter(|tp| tp.t == t).map(|tp| tp.tail.mean).collect();
        col.windows(2).all(|w| w[1] <= w[0])
    });
    report.check("tail contribution nonincreasing in K", monotone_in_k);

    let mut tables = vec![tail_table];
    if geometry.dim() >= 3 {
        let b2 = lattice::b2(geometry.dim())?;
        let theta = cfg.options.theta.unwrap_or(1.0);
        let factors = cfg.options.b_factors.clone().unwrap_or_else(|| vec![0.5, 2.0]);
        let mut growth = Vec::new();
        let mut table = Table::new("pam_second_moment", &["b_factor", "t", "mean", "se"]);
        for (k, &fac) in factors.iter().enumerate() {
            let pp = SbmParams {
                b: fac * b2,
                scheme: Scheme::SplitStep,
                ..p
            };
            let trend = analysis::pam_second_moment_trend(
                &pp,
                &geometry,
                theta,
                &times,
                cfg.replicas,
                cfg.seed.wrapping_add(k as u64 + 1),
            )?;
            for (t, e) in &trend {
                report.estimate(format!("pam_w0_sq_b{fac}_t{t}"), e);
                table.row(vec![fac, *t, e.mean, e.std_error]);
            }
            let first = trend.first().map(|x| x.1.mean).unwrap_or(1.0);
            let last = trend.last().map(|x| x.1.mean).unwrap_or(1.0);
            growth.push(last / first);
            report.value(format!("pam_growth_ratio_b{fac}"), last / first);
        }
        report.value("b2", b2);
        report.note("second-moment growth is a qualitative probe and does not enter the verdict");
        tables.push(table);
    }
    Ok(Outcome { report, tables })
}

/// Per-site states of the first `replicas` replicas at the record times:
/// `replica,t,site_index,u,v` when both fields are set, else `replica,t,site_index,w`.
fn snapshot_csv(cfg: &ExperimentConfig, replicas: u64) -> Result<String> {
    let p = cfg.sbm_params()?;
    let times = cfg.times()?;
    let u = cfg.field(&cfg.initial.u, "u")?;
    let mut out = String::new();
    match &cfg.initial.v {
        Some(spec) => {
            let v = spec.build(&cfg.geometry()?)?;
            out.push_str("replica,t,site_index,u,v\n");
            for r in 0..replicas {
                let mut noise = StreamKey::new(cfg.seed, r, Role::Primary).gaussian();
                let traj = sde::simulate_sbm_with_noise(&u, &v, &p, &mut noise, &times)?;
                for s in &traj.states {
                    for (i, (a, b)) in s.u.values().iter().zip(s.v.values()).enumerate() {
                        out.push_str(&format!("{r},{:e},{i},{a:e},{b:e}\n", s.t));
                    }
                }
            }
        }
        None => {
            out.push_str("replica,t,site_index,w\n");
            for r in 0..replicas {
                let mut noise = StreamKey::new(cfg.seed, r, Role::Primary).gaussian();
                let traj = sde::simulate_pam_with_noise(&u, &p, &mut noise, &times)?;
                for s in &traj.states {
                    for (i, w) in s.w.values().iter().enumerate() {
                        out.push_str(&format!("{r},{:e},{i},{w:e}\n", s.t));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Emitted run metadata; written last.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub code_version: String,
    pub wall_time_seconds: f64,
    pub experiment: String,
    pub pass: bool,
    pub files: Vec<String>,
}

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT))
}

pub fn output_dir(cfg: &ExperimentConfig, root: &Path) -> PathBuf {
    root.join(cfg.output_dir.as_deref().unwrap_or(&cfg.experiment))
}

/// Runs the configured experiment and writes its outputs under `root`.
pub fn run_in(cfg: &ExperimentConfig, root: &Path) -> Result<(RunManifest, Outcome)> {
    let exp = find(&cfg.experiment)?;
    let start = Instant::now();
    let outcome = exp.run(cfg)?;
    let dir = output_dir(cfg, root);
    fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    let mut write = |name: String, body: &str| -> Result<()> {
        fs::write(dir.join(&name), body)?;
        files.push(name);
        Ok(())
    };
    write("report.json".into(), &(serde_json::to_string_pretty(&outcome.report)? + "\n"))?;
    let mut est_csv = String::from("name,mean,se,ci_low,ci_high,n\n");
    for e in &outcome.report.estimates {
        est_csv.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{}\n",
            e.name, e.mean, e.se, e.ci[0], e.ci[1], e.n
        ));
    }
    write("estimates.csv".into(), &est_csv)?;
    if let Some(k) = cfg.options.snapshots {
        write("snapshots.csv".into(), &snapshot_csv(cfg, k)?)?;
    }
    for t in &outcome.tables {
        write(format!("{}.csv", t.name), &t.to_csv())?;
        if cfg.svg {
            if let Some(svg) = t.to_svg() {
                write(format!("{}.svg", t.name), &svg)?;
            }
        }
    }
    files.push("manifest.json".into());
    let manifest = RunManifest {
        config: cfg.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        experiment: cfg.experiment.clone(),
        pass: outcome.report.pass,
        files,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok((manifest, outcome))
}

pub fn run(cfg: &ExperimentConfig) -> Result<(RunManifest, Outcome)> {
    run_in(cfg, &output_root())
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedCheck {
    pub experiment: String,
    pub compared: Vec<String>,
    pub mismatched: Vec<String>,
    pub identical: bool,
}

/// Runs `cfg` twice into separate directories under `root` and compares
/// every emitted file except the manifest byte for byte.
pub fn seed_check_in(cfg: &ExperimentConfig, root: &Path) -> Result<SeedCheck> {
    let base = output_dir(cfg, &root.join("seed-check"));
    let mut runs = Vec::new();
    for label in ["a", "b"] {
        let mut c = cfg.clone();
        c.output_dir = Some(label.to_string());
        let (manifest, _) = run_in(&c, &base)?;
        runs.push((base.join(label), manifest));
    }
    let mut compared = Vec::new();
    let mut mismatched = Vec::new();
    let files: BTreeMap<_, _> = runs[0].1.files.iter().map(|f| (f.clone(), ())).collect();
    let other: BTreeMap<_, _> = runs[1].1.files.iter().map(|f| (f.clone(), ())).collect();
    for name in files.keys().chain(other.keys().filter(|k| !files.contains_key(*k))) {
        if name == "manifest.json" {
            continue;
        }
        let a = fs::read(runs[0].0.join(name)).ok();
        let b = fs::read(runs[1].0.join(name)).ok();
        compared.push(name.clone());
        if a.is_none() || a != b {
            mismatched.push(name.clone());
        }
    }
    Ok(SeedCheck {
        experiment: cfg.experiment.clone(),
        identical: mismatched.is_empty(),
        compared,
        mismatched,
    })
}

pub fn seed_check(cfg: &ExperimentConfig) -> Result<SeedCheck> {
    seed_check_in(cfg, &output_root())
}
