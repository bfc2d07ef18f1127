use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use sbm_core::cli::{self, ExperimentConfig};
use sbm_core::lattice;
use sbm_core::particle::{self, ParticleParams, ParticleState};
use sbm_core::rng::{Role, StreamKey};
use sbm_core::sde::{self, Drift, Scheme};
use sbm_core::{heat, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::NumericalBlowup { .. } | Error::Quadrature { .. } => {
            PyArithmeticError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Periodic box (Z/LZ)^d.
#[pyclass(name = "Geometry", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGeometry(lattice::Geometry);

#[pymethods]
impl PyGeometry {
    #[new]
    fn new(d: usize, side: usize) -> PyResult<Self> {
        lattice::Geometry::new(d, side).map(Self).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn side(&self) -> usize {
        self.0.side()
    }

    #[getter]
    fn sites(&self) -> usize {
        self.0.site_count()
    }

    fn index(&self, coords: Vec<i64>) -> PyResult<usize> {
        self.0.index(&coords).map_err(py_err)
    }

    fn coords(&self, site: usize) -> Vec<i64> {
        self.0.coords(site)
    }

    fn neighbors(&self, site: usize) -> Vec<usize> {
        self.0.neighbors(site).to_vec()
    }

    /// Values of a field with `mass` at each listed coordinate.
    fn field(&self, sites: Vec<(Vec<i64>, f64)>) -> PyResult<Vec<f64>> {
        lattice::Field::from_sites(&self.0, &sites)
            .map(lattice::Field::into_values)
            .map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Geometry(d={}, L={})", self.0.dim(), self.0.side())
    }
}

impl PyGeometry {
    fn wrap(&self, values: Vec<f64>) -> PyResult<lattice::Field> {
        lattice::Field::new(self.0.clone(), values).map_err(py_err)
    }
}

/// Model parameters for the diffusion and PAM.
#[pyclass(name = "Params", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyParams(sde::SbmParams);

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (b, rho, dt, horizon, scheme = "truncated-euler", drift = "exact", bound_n = None))]
    fn new(
        b: f64,
        rho: f64,
        dt: f64,
        horizon: f64,
        scheme: &str,
        drift: &str,
        bound_n: Option<f64>,
    ) -> PyResult<Self> {
        let scheme = match scheme {
            "truncated-euler" => Scheme::TruncatedEuler,
            "split-step" => Scheme::SplitStep,
            other => return Err(PyValueError::new_err(format!("unknown scheme `{other}`"))),
        };
        let drift = match drift {
            "exact" => Drift::Exact,
            "euler" => Drift::Euler,
            other => return Err(PyValueError::new_err(format!("unknown drift `{other}`"))),
        };
        let p = sde::SbmParams::new(b, rho, dt, horizon)
            .map_err(py_err)?
            .with_scheme(scheme)
            .with_drift(drift);
        let p = match bound_n {
            Some(n) => p.with_bound(n).map_err(py_err)?,
            None => p,
        };
        Ok(Self(p))
    }

    #[getter]
    fn b(&self) -> f64 {
        self.0.b
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.0.rho
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.0.dt
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.0.horizon
    }

    #[getter]
    fn steps(&self) -> u64 {
        self.0.steps()
    }

    fn __repr__(&self) -> String {
        format!(
            "Params(b={}, rho={}, dt={}, horizon={})",
            self.0.b, self.0.rho, self.0.dt, self.0.horizon
        )
    }
}

/// g(0,0) for the rate-one walk on Z^d, d >= 3.
#[pyfunction]
#[pyo3(signature = (d, tail_tol = 1e-7))]
fn green_origin(d: usize, tail_tol: f64) -> PyResult<f64> {
    lattice::green_origin(d, tail_tol).map_err(py_err)
}

#[pyfunction]
fn b2(d: usize) -> PyResult<f64> {
    lattice::b2(d).map_err(py_err)
}

/// (mean, standard error) of the Monte Carlo occupation-time estimate.
#[pyfunction]
fn green_origin_mc(d: usize, samples: u64, seed: u64) -> PyResult<(f64, f64)> {
    let e = lattice::green_origin_mc(d, samples, seed).map_err(py_err)?;
    Ok((e.mean, e.std_error))
}

/// Heat-equation snapshots of `f` at each time of `times`.
#[pyfunction]
fn solve_heat(geometry: &PyGeometry, f: Vec<f64>, times: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let sol = heat::solve_heat(&geometry.wrap(f)?, &times).map_err(py_err)?;
    Ok(sol.snapshots.into_iter().map(lattice::Field::into_values).collect())
}

/// Total compensator mass and negative mass along `times`, with the limit ⟨f⁻,1⟩.
#[pyfunction]
fn q_compensator(
    geometry: &PyGeometry,
    f: Vec<f64>,
    times: Vec<f64>,
) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let q = heat::q_compensator(&geometry.wrap(f)?, &times).map_err(py_err)?;
    Ok((q.total, q.negative_mass, q.limit))
}

#[pyfunction]
fn l1_distance_to_point_source(geometry: &PyGeometry, f: Vec<f64>, t: f64) -> PyResult<f64> {
    heat::l1_distance_to_point_source(&geometry.wrap(f)?, t).map_err(py_err)
}

/// Snapshots (t, u, v) at each record time.
#[pyfunction]
fn simulate_sbm(
    geometry: &PyGeometry,
    u0: Vec<f64>,
    v0: Vec<f64>,
    params: &PyParams,
    seed: u64,
    times: Vec<f64>,
) -> PyResult<Vec<(f64, Vec<f64>, Vec<f64>)>> {
    let traj = sde::simulate_sbm(&geometry.wrap(u0)?, &geometry.wrap(v0)?, &params.0, seed, &times)
        .map_err(py_err)?;
    Ok(traj
        .states
        .into_iter()
        .map(|s| (s.t, s.u.into_values(), s.v.into_values()))
        .collect())
}

/// Snapshots (t, w) at each record time.
#[pyfunction]
fn simulate_pam(
    geometry: &PyGeometry,
    w0: Vec<f64>,
    params: &PyParams,
    seed: u64,
    times: Vec<f64>,
) -> PyResult<Vec<(f64, Vec<f64>)>> {
    let traj = sde::simulate_pam(&geometry.wrap(w0)?, &params.0, seed, &times).map_err(py_err)?;
    Ok(traj.states.into_iter().map(|s| (s.t, s.w.into_values())).collect())
}

/// Particle counts (t, x, y) at each record time, and the number of events.
#[pyfunction]
#[pyo3(signature = (geometry, x0, y0, b, rho, n, horizon, seed, times, replica = 0))]
#[allow(clippy::too_many_arguments)]
fn simulate_particles(
    geometry: &PyGeometry,
    x0: Vec<u64>,
    y0: Vec<u64>,
    b: f64,
    rho: f64,
    n: u64,
    horizon: f64,
    seed: u64,
    times: Vec<f64>,
    replica: u64,
) -> PyResult<(Vec<(f64, Vec<u64>, Vec<u64>)>, u64)> {
    let init = ParticleState::new(&geometry.0, x0, y0).map_err(py_err)?;
    let params = ParticleParams::new(b, rho, n).map_err(py_err)?;
    let key = StreamKey::new(seed, replica, Role::Particle);
    let run = particle::simulate_particles(&init, &params, horizon, key, &times, false)
        .map_err(py_err)?;
    let snaps = run.snapshots.into_iter().map(|s| (s.t, s.x, s.y)).collect();
    Ok((snaps, run.events))
}

#[pyfunction]
fn list_experiments() -> Vec<(String, String)> {
    cli::registry()
        .iter()
        .map(|e| (e.name.to_string(), e.anchor.to_string()))
        .collect()
}

/// Default (or quick) TOML config of a registry experiment.
#[pyfunction]
#[pyo3(signature = (name, quick = false))]
fn default_config(name: &str, quick: bool) -> PyResult<String> {
    let e = cli::find(name).map_err(py_err)?;
    let cfg = if quick { e.quick_config() } else { e.default_config() };
    Ok(cfg.to_toml())
}

/// Runs a TOML config, writing under `output_root`; returns the report as JSON.
#[pyfunction]
fn run_experiment(config: &str, output_root: PathBuf) -> PyResult<String> {
    let cfg = ExperimentConfig::from_toml(config).map_err(py_err)?;
    let (_, outcome) = cli::run_in(&cfg, &output_root).map_err(py_err)?;
    serde_json::to_string(&outcome.report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn sbm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGeometry>()?;
    m.add_class::<PyParams>()?;
    m.add_function(wrap_pyfunction!(green_origin, m)?)?;
    m.add_function(wrap_pyfunction!(green_origin_mc, m)?)?;
    m.add_function(wrap_pyfunction!(b2, m)?)?;
    m.add_function(wrap_pyfunction!(solve_heat, m)?)?;
    m.add_function(wrap_pyfunction!(q_compensator, m)?)?;
    m.add_function(wrap_pyfunction!(l1_distance_to_point_source, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_sbm, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_pam, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_particles, m)?)?;
    m.add_function(wrap_pyfunction!(list_experiments, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
