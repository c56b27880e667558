//! Python bindings: votes and keys, a hand-built chain with finality
//! evaluation, and the scenario runner.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ffg_core::sim::{self, scenarios, World};
use ffg_core::{
    Block, BlockId, BlockTree, Checkpoint, FinalityConfig, FinalityState, Fraction, LeakConfig, Proposer, Registry,
    Transaction, ValidatorId, ViolationKind, VotePool,
};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn block_id(hex: &str) -> PyResult<BlockId> {
    BlockId::from_hex(hex).ok_or_else(|| err(format!("not a 64-digit block id: {hex}")))
}

fn cp_tuple(c: &Checkpoint) -> (String, u64) {
    (c.block.to_hex(), c.height)
}

#[pyclass(frozen, eq, from_py_object, module = "ffg")]
#[derive(Clone, PartialEq)]
pub struct Vote(ffg_core::Vote);

#[pymethods]
impl Vote {
    #[getter]
    fn validator(&self) -> u32 {
        self.0.validator.0
    }
    #[getter]
    fn source(&self) -> String {
        self.0.source.to_hex()
    }
    #[getter]
    fn target(&self) -> String {
        self.0.target.to_hex()
    }
    #[getter]
    fn source_height(&self) -> u64 {
        self.0.source_height
    }
    #[getter]
    fn target_height(&self) -> u64 {
        self.0.target_height
    }
    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("votes serialize")
    }
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Vote> {
        serde_json::from_str(text).map(Vote).map_err(err)
    }
    fn __repr__(&self) -> String {
        format!(
            "Vote(v{}, {}@{} -> {}@{})",
            self.0.validator.0,
            &self.source()[..12],
            self.0.source_height,
            &self.target()[..12],
            self.0.target_height
        )
    }
}

#[pyclass(module = "ffg")]
pub struct Keyring(ffg_core::Keyring);

#[pymethods]
impl Keyring {
    #[new]
    fn new(seed: u64, ids: Vec<u32>) -> Keyring {
        Keyring(ffg_core::Keyring::from_seed(seed, ids.into_iter().map(ValidatorId)))
    }
    fn sign(&self, validator: u32, source: &str, target: &str, source_height: u64, target_height: u64) -> PyResult<Vote> {
        self.0
            .sign(ValidatorId(validator), block_id(source)?, block_id(target)?, source_height, target_height)
            .map(Vote)
            .ok_or_else(|| err(format!("no key for validator {validator}")))
    }
    fn verify(&self, vote: &Vote) -> bool {
        self.0.verify(&vote.0)
    }
}

/// Slashing condition broken by two votes: "I", "II" or None.
#[pyfunction]
fn check_pair(a: &Vote, b: &Vote) -> PyResult<Option<&'static str>> {
    let v = ffg_core::check_pair(&a.0, &b.0).map_err(err)?;
    Ok(v.map(|v| match v.kind {
        ViolationKind::I => "I",
        ViolationKind::II => "II",
    }))
}

/// Leak epochs until `online` weight is a two-thirds supermajority.
#[pyfunction]
#[pyo3(signature = (online, offline, num = 1, den = 10))]
fn epochs_to_supermajority(online: u64, offline: u64, num: u64, den: u64) -> PyResult<u64> {
    let cfg = LeakConfig::new(Fraction::new(num, den)).map_err(err)?;
    ffg_core::epochs_to_supermajority(online, offline, &cfg).map_err(err)
}

/// A block tree built by hand, with its vote pool and a genesis validator set.
#[pyclass(module = "ffg")]
pub struct Chain {
    tree: BlockTree,
    pool: VotePool,
    keyring: ffg_core::Keyring,
    genesis: Registry,
    ts: u64,
}

impl Chain {
    fn push(&mut self, parent: &str, payload: Vec<Transaction>) -> PyResult<String> {
        let parent = block_id(parent)?;
        let height = self.tree.block_height(&parent).map_err(err)? + 1;
        self.ts += 1;
        let b = Block::new(parent, height, self.ts, Proposer::External, payload);
        let id = b.id.to_hex();
        self.tree.insert_block(b).map_err(err)?;
        Ok(id)
    }

    fn checkpoint(&self, hex: &str) -> PyResult<Checkpoint> {
        self.tree.checkpoint(&block_id(hex)?).map_err(err)
    }
}

#[pymethods]
impl Chain {
    #[new]
    #[pyo3(signature = (spacing, deposits, seed = 0, withdrawal_delay = 4))]
    fn new(spacing: u64, deposits: Vec<u64>, seed: u64, withdrawal_delay: u64) -> PyResult<Chain> {
        let ids: Vec<ValidatorId> = (0..deposits.len() as u32).map(ValidatorId).collect();
        Ok(Chain {
            tree: BlockTree::new(spacing).map_err(err)?,
            pool: VotePool::new(),
            keyring: ffg_core::Keyring::from_seed(seed, ids.iter().copied()),
            genesis: Registry::genesis(ids.into_iter().zip(deposits), withdrawal_delay),
            ts: 0,
        })
    }

    #[getter]
    fn genesis(&self) -> String {
        BlockId::GENESIS.to_hex()
    }

    fn height(&self, block: &str) -> PyResult<u64> {
        self.tree.block_height(&block_id(block)?).map_err(err)
    }

    /// Appends `n` empty blocks; returns their ids.
    fn extend(&mut self, parent: &str, n: usize) -> PyResult<Vec<String>> {
        let mut out = Vec::with_capacity(n);
        let mut tip = parent.to_string();
        for _ in 0..n {
            tip = self.push(&tip, vec![])?;
            out.push(tip.clone());
        }
        Ok(out)
    }

    /// Signs a vote between two checkpoints and adds it to the pool.
    fn vote(&mut self, validator: u32, source: &str, target: &str) -> PyResult<Vote> {
        let (s, t) = (self.checkpoint(source)?, self.checkpoint(target)?);
        let vote = self
            .keyring
            .sign(ValidatorId(validator), s.block, t.block, s.height, t.height)
            .ok_or_else(|| err(format!("no key for validator {validator}")))?;
        self.pool.add_vote(&self.keyring, vote.clone()).map_err(err)?;
        Ok(Vote(vote))
    }

    /// A block including `votes`; returns its id.
    fn include(&mut self, parent: &str, votes: Vec<Vote>) -> PyResult<String> {
        let payload = votes.into_iter().map(|v| Transaction::VoteInclusion(v.0)).collect();
        self.push(parent, payload)
    }

    /// A block carrying slashing evidence; returns its id.
    fn evidence(&mut self, parent: &str, a: &Vote, b: &Vote) -> PyResult<String> {
        self.push(parent, vec![Transaction::SlashEvidence(a.0.clone(), b.0.clone())])
    }

    #[pyo3(signature = (stitching = true))]
    fn evaluate(&self, stitching: bool) -> Finality {
        let cfg = FinalityConfig {
            stitching,
            leak: None,
            finder_fee: Fraction::new(1, 100),
        };
        Finality {
            state: FinalityState::evaluate(&self.tree, &self.pool, &self.keyring, &self.genesis, &cfg),
            tree: self.tree.clone(),
            pool: self.pool.clone(),
        }
    }
}

#[pyclass(module = "ffg")]
pub struct Finality {
    state: FinalityState,
    tree: BlockTree,
    pool: VotePool,
}

#[pymethods]
impl Finality {
    fn justified(&self) -> Vec<(String, u64)> {
        let mut out: Vec<_> = self.state.justified().iter().map(cp_tuple).collect();
        out.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));
        out
    }
    fn finalized(&self) -> Vec<(String, u64)> {
        self.state.finalized().iter().map(cp_tuple).collect()
    }
    fn is_justified(&self, block: &str) -> PyResult<bool> {
        Ok(self.state.is_justified(&block_id(block)?))
    }
    fn is_finalized(&self, block: &str) -> PyResult<bool> {
        let id = block_id(block)?;
        Ok(self.state.finalized().iter().any(|c| c.block == id))
    }
    fn dynasty(&self, block: &str) -> PyResult<Option<u64>> {
        Ok(self.state.dynasty_of(&block_id(block)?))
    }
    /// The two links compliant validators can vote to finalize a new
    /// checkpoint, as `{"source", "target", "finalize_target"}`.
    fn liveness_plan<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let plan = self.state.liveness_plan(&self.tree, &self.pool).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("source", cp_tuple(&plan.source))?;
        d.set_item("target", cp_tuple(&plan.target))?;
        d.set_item("finalize_target", cp_tuple(&plan.finalize_target))?;
        Ok(d)
    }
}

#[pyclass(skip_from_py_object, module = "ffg")]
#[derive(Clone)]
pub struct ScenarioConfig(sim::ScenarioConfig);

#[pymethods]
impl ScenarioConfig {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<ScenarioConfig> {
        sim::ScenarioConfig::from_json(text).map(ScenarioConfig).map_err(err)
    }
    #[staticmethod]
    fn honest(n: u32, seed: u64) -> ScenarioConfig {
        ScenarioConfig(sim::ScenarioConfig::honest(n, seed))
    }
    /// One of the canonical scenarios; see `builtin_names()`.
    #[staticmethod]
    #[pyo3(signature = (name, seed = 1))]
    fn builtin(name: &str, seed: u64) -> PyResult<ScenarioConfig> {
        scenarios::builtin(name, seed)
            .map(ScenarioConfig)
            .ok_or_else(|| err(format!("unknown scenario {name}")))
    }
    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }
    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.0.seed = seed;
    }
    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.0).expect("configs serialize")
    }
}

#[pyfunction]
fn builtin_names() -> Vec<&'static str> {
    scenarios::BUILTIN.to_vec()
}

#[pyclass(module = "ffg")]
pub struct RunReport(sim::RunReport);

#[pymethods]
impl RunReport {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<RunReport> {
        sim::RunReport::from_json(text).map(RunReport).map_err(err)
    }
    #[getter]
    fn passed(&self) -> bool {
        self.0.passed()
    }
    #[getter]
    fn digest(&self) -> String {
        self.0.digest.clone()
    }
    #[getter]
    fn heuristics(&self) -> Vec<String> {
        self.0.heuristics.clone()
    }
    #[getter]
    fn conflicts(&self) -> Vec<((String, u64), (String, u64))> {
        self.0.conflicts.iter().map(|(a, b)| (cp_tuple(a), cp_tuple(b))).collect()
    }
    #[getter]
    fn finalized(&self) -> Vec<(String, u64)> {
        self.0.finalized.iter().map(cp_tuple).collect()
    }
    fn failed_checks(&self) -> Vec<String> {
        self.0.failed_checks().iter().map(|c| c.name.clone()).collect()
    }
    fn summary(&self) -> String {
        self.0.summary()
    }
    fn to_json(&self) -> String {
        self.0.to_json()
    }
    /// Violators behind a conflicting pair (the first reported one by
    /// default), as `{"violators", "weight", "total", "meets_bound"}`.
    #[pyo3(signature = (a = None, b = None))]
    fn audit<'py>(&self, py: Python<'py>, a: Option<&str>, b: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
        let world = World::replay(&self.0).map_err(err)?;
        let (a, b) = match (a, b) {
            (Some(a), Some(b)) => (
                world.tree.checkpoint(&block_id(a)?).map_err(err)?,
                world.tree.checkpoint(&block_id(b)?).map_err(err)?,
            ),
            _ => *self.0.conflicts.first().ok_or_else(|| err("no conflicting finalized checkpoints"))?,
        };
        let state = world.global_state();
        let audit = ffg_core::safety_audit(&world.tree, &world.pool, &state, a, b, &world.genesis).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("violators", audit.violators.keys().map(|v| v.0).collect::<Vec<u32>>())?;
        d.set_item("weight", audit.violator_weight)?;
        d.set_item("total", audit.reference_total)?;
        d.set_item("meets_bound", audit.meets_bound())?;
        Ok(d)
    }
}

/// Runs a scenario to completion.
#[pyfunction]
fn run(config: &ScenarioConfig) -> PyResult<RunReport> {
    sim::run(&config.0).map(RunReport).map_err(err)
}

#[pymodule]
fn ffg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Vote>()?;
    m.add_class::<Keyring>()?;
    m.add_class::<Chain>()?;
    m.add_class::<Finality>()?;
    m.add_class::<ScenarioConfig>()?;
    m.add_class::<RunReport>()?;
    m.add_function(wrap_pyfunction!(check_pair, m)?)?;
    m.add_function(wrap_pyfunction!(epochs_to_supermajority, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_names, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
