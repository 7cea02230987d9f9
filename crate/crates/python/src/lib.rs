use morse_conley::config::RunConfig;
use morse_conley::conley::conley_pair_homology;
use morse_conley::critical::CriticalPoint;
use morse_conley::homology::HomologyGroup;
use morse_conley::reports::{self, Context};
use morse_conley::systems::RiemannianSystem;
use morse_conley::Error;
use num_traits::ToPrimitive;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use std::collections::HashMap;

create_exception!(morse_conley, MorseConleyError, PyException);
create_exception!(morse_conley, ConfigError, MorseConleyError);
create_exception!(morse_conley, VerificationError, MorseConleyError);
create_exception!(morse_conley, NumericalError, MorseConleyError);

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        2 => ConfigError::new_err(e.to_string()),
        1 => VerificationError::new_err(e.to_string()),
        _ => NumericalError::new_err(e.to_string()),
    }
}

fn config(system: &str, level: Option<f64>, seed: Option<u64>, settings: Option<HashMap<String, String>>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::default();
    cfg.set("system.name", system).map_err(py_err)?;
    if let Some(l) = level {
        cfg.set("level", &l.to_string()).map_err(py_err)?;
    }
    if let Some(s) = seed {
        cfg.set("seed", &s.to_string()).map_err(py_err)?;
    }
    let mut kv: Vec<_> = settings.unwrap_or_default().into_iter().collect();
    kv.sort();
    for (k, v) in kv {
        cfg.set(&k, &v).map_err(py_err)?;
    }
    cfg.system().map_err(py_err)?;
    Ok(cfg)
}

fn groups(h: &[HomologyGroup]) -> Vec<(usize, Vec<u64>)> {
    h.iter().map(|g| (g.betti, g.torsion.clone())).collect()
}

/// Energy function on a finite-dimensional Riemannian manifold.
#[pyclass(name = "RiemannianSystem", module = "morse_conley")]
struct PySystem {
    sys: RiemannianSystem,
}

#[pymethods]
impl PySystem {
    #[new]
    #[pyo3(signature = (name, settings = None))]
    fn new(name: &str, settings: Option<HashMap<String, String>>) -> PyResult<Self> {
        let cfg = config(name, None, None, settings)?;
        Ok(PySystem { sys: cfg.system().map_err(py_err)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.sys.dim()
    }

    #[getter]
    fn ambient_dim(&self) -> usize {
        self.sys.ambient_dim()
    }

    fn value(&self, p: Vec<f64>) -> PyResult<f64> {
        self.sys.check_point(&p).map_err(py_err)?;
        Ok(self.sys.value(&p))
    }

    fn gradient(&self, p: Vec<f64>) -> PyResult<Vec<f64>> {
        self.sys.check_point(&p).map_err(py_err)?;
        Ok(self.sys.grad_vec(&p))
    }

    /// Eigenvalues of the Riemannian Hessian, ascending.
    fn hessian_eigenvalues(&self, p: Vec<f64>) -> PyResult<Vec<f64>> {
        self.sys.check_point(&p).map_err(py_err)?;
        Ok(self.sys.hessian_spectrum(&p).map_err(py_err)?.into_iter().map(|(l, _)| l).collect())
    }

    fn __repr__(&self) -> String {
        format!("RiemannianSystem(dim={})", self.sys.dim())
    }
}

#[pyclass(name = "CriticalPoint", module = "morse_conley", get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyCriticalPoint {
    id: usize,
    location: Vec<f64>,
    value: f64,
    index: usize,
    eigenvalues: Vec<f64>,
    spectral_gap: f64,
}

impl From<&CriticalPoint> for PyCriticalPoint {
    fn from(c: &CriticalPoint) -> Self {
        PyCriticalPoint {
            id: c.id,
            location: c.location.clone(),
            value: c.value,
            index: c.index,
            eigenvalues: c.eigenvalues.clone(),
            spectral_gap: c.spectral_gap,
        }
    }
}

#[pymethods]
impl PyCriticalPoint {
    fn __repr__(&self) -> String {
        format!("CriticalPoint(id={}, index={}, value={:.6})", self.id, self.index, self.value)
    }
}

#[pyclass(name = "Connection", module = "morse_conley", get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyConnection {
    source: usize,
    target: usize,
    sign: i8,
}

#[pymethods]
impl PyConnection {
    fn __repr__(&self) -> String {
        format!("Connection(x{} -> x{}, sign={:+})", self.source, self.target, self.sign)
    }
}

/// Critical points, flow and isolating scale of one system below one level.
#[pyclass(name = "Engine", module = "morse_conley")]
struct PyEngine {
    ctx: Context,
}

#[pymethods]
impl PyEngine {
    #[new]
    #[pyo3(signature = (system, level = None, seed = None, settings = None))]
    fn new(system: &str, level: Option<f64>, seed: Option<u64>, settings: Option<HashMap<String, String>>) -> PyResult<Self> {
        let cfg = config(system, level, seed, settings)?;
        Ok(PyEngine { ctx: Context::new(&cfg).map_err(py_err)? })
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.ctx.rho.rho
    }

    fn critical_points(&self) -> Vec<PyCriticalPoint> {
        self.ctx.reg.points.iter().map(PyCriticalPoint::from).collect()
    }

    fn connections(&self) -> PyResult<Vec<PyConnection>> {
        let c = self.ctx.connections().map_err(py_err)?;
        Ok(c.iter().map(|c| PyConnection { source: c.from, target: c.to, sign: c.sign }).collect())
    }

    /// Matrix of the Morse boundary from degree k to k-1, rows indexed by degree k-1.
    fn boundary(&self, k: usize) -> PyResult<Vec<Vec<i64>>> {
        let (_, mc) = self.ctx.complex().map_err(py_err)?;
        let m = mc.boundary(k);
        Ok((0..m.rows).map(|i| (0..m.cols).map(|j| m.get(i, j).to_i64().unwrap_or(0)).collect()).collect())
    }

    /// Morse homology as (betti, torsion) per degree.
    fn morse_homology(&self) -> PyResult<Vec<(usize, Vec<u64>)>> {
        let (_, mc) = self.ctx.complex().map_err(py_err)?;
        Ok(groups(&mc.homology().map_err(py_err)?))
    }

    /// Homology of the Conley pair of critical point `id`, rasterized on an n-grid.
    #[pyo3(signature = (id, grid = 64))]
    fn conley_homology(&self, id: usize, grid: usize) -> PyResult<Vec<(usize, Vec<u64>)>> {
        let pairs = self.ctx.pairs().map_err(py_err)?;
        let pair = pairs
            .iter()
            .find(|p| p.crit.id == id)
            .ok_or_else(|| ConfigError::new_err(format!("no critical point x{id}")))?;
        Ok(groups(&conley_pair_homology(&self.ctx.flow, pair, grid).map_err(py_err)?))
    }

    /// Entrance times T_1..T_m of the filtration.
    fn filtration_times(&self) -> PyResult<Vec<f64>> {
        let pairs = self.ctx.pairs().map_err(py_err)?;
        Ok(self.ctx.filtration(&pairs).map_err(py_err)?.times)
    }

    fn __repr__(&self) -> String {
        format!("Engine({}, critical_points={})", self.ctx.cfg.system.name, self.ctx.reg.points.len())
    }
}

/// Run one CLI command and return (pass, json report).
#[pyfunction]
#[pyo3(signature = (command, system, level = None, seed = None, settings = None, suite = None))]
fn run(
    command: &str,
    system: &str,
    level: Option<f64>,
    seed: Option<u64>,
    settings: Option<HashMap<String, String>>,
    suite: Option<&str>,
) -> PyResult<(bool, String)> {
    if !reports::COMMANDS.contains(&command) {
        return Err(ConfigError::new_err(format!("unknown command {command}")));
    }
    let cfg = config(system, level, seed, settings)?;
    let r = reports::run(command, &cfg, suite, false).map_err(py_err)?;
    Ok((r.pass, r.to_json(&cfg)))
}

#[pymodule(name = "morse_conley")]
fn morse_conley_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystem>()?;
    m.add_class::<PyCriticalPoint>()?;
    m.add_class::<PyConnection>()?;
    m.add_class::<PyEngine>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add("MorseConleyError", m.py().get_type::<MorseConleyError>())?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("VerificationError", m.py().get_type::<VerificationError>())?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add("SYSTEMS", reports::SYSTEMS.to_vec())?;
    Ok(())
}
