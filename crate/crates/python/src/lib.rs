//! Python bindings: exact stage arithmetic, checkpoint loading, and staged
//! model addition.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ccat::checkpoint::load_checkpoint;
use ccat::generate::{add_with_model, verify_addition, ExactStages, StageModel};
use ccat::instances::enumerate_stage_space;
use ccat::model::{ModelConfig, ModelParams};
use ccat::optim::evaluate_stage_accuracy;
use ccat::{vocab, DigitString, Error};

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn digits(s: &str) -> PyResult<DigitString> {
    s.parse().map_err(py_err)
}

/// Exact sum of two non-negative decimal strings.
#[pyfunction]
fn add_digit_strings(a: &str, b: &str) -> PyResult<String> {
    Ok(ccat::add_digit_strings(&digits(a)?, &digits(b)?).to_string())
}

/// `(input, target)` texts of every stage of `a + b`, least significant first.
#[pyfunction]
fn decompose_stages(a: &str, b: &str) -> PyResult<Vec<(String, String)>> {
    Ok(ccat::decompose_stages(&digits(a)?, &digits(b)?)
        .into_iter()
        .map(|(i, t)| (i.text(), t.text()))
        .collect())
}

#[pyfunction]
fn collate(stage_outputs: Vec<String>) -> PyResult<String> {
    ccat::collate(&stage_outputs).map(|d| d.to_string()).map_err(py_err)
}

#[pyfunction]
fn encode(text: &str) -> PyResult<Vec<u32>> {
    vocab::encode(text).map_err(py_err)
}

#[pyfunction]
fn decode(ids: Vec<u32>) -> PyResult<String> {
    vocab::decode(&ids).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (max_prev_sum=18))]
fn enumerate_stage_space_texts(max_prev_sum: u8) -> PyResult<Vec<(String, String)>> {
    if max_prev_sum > 19 {
        return Err(PyValueError::new_err("max_prev_sum must be at most 19"));
    }
    Ok(enumerate_stage_space(max_prev_sum)
        .into_iter()
        .map(|c| (c.input.text(), c.target.text()))
        .collect())
}

enum Inner {
    Params(Box<ModelParams<f32>>),
    Exact,
}

impl Inner {
    fn stage_model(&self) -> &dyn StageModel {
        match self {
            Inner::Params(p) => &**p,
            Inner::Exact => &ExactStages,
        }
    }
}

/// A trained model, a freshly initialized one, or the exact-arithmetic stub.
#[pyclass]
struct Model {
    inner: Inner,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ckpt = load_checkpoint(path).map_err(py_err)?;
        Ok(Model {
            inner: Inner::Params(Box::new(ckpt.params)),
        })
    }

    /// Untrained model with the default architecture.
    #[staticmethod]
    #[pyo3(signature = (seed=0))]
    fn init(seed: u64) -> Self {
        Model {
            inner: Inner::Params(Box::new(ModelParams::init(ModelConfig::default(), seed))),
        }
    }

    #[staticmethod]
    fn exact() -> Self {
        Model { inner: Inner::Exact }
    }

    #[getter]
    fn num_params(&self) -> usize {
        match &self.inner {
            Inner::Params(p) => p.num_params(),
            Inner::Exact => 0,
        }
    }

    /// Greedy output of one stage, `S` included when produced.
    fn generate_stage(&self, input: &str) -> PyResult<String> {
        self.inner
            .stage_model()
            .decode_stage(input)
            .map(|o| o.raw())
            .map_err(py_err)
    }

    /// Staged addition; returns the answer and the `(input, output)` trace.
    fn add(&self, a: &str, b: &str) -> PyResult<(String, Vec<(String, String)>)> {
        let (sum, trace) =
            add_with_model(self.inner.stage_model(), &digits(a)?, &digits(b)?).map_err(py_err)?;
        Ok((sum.to_string(), trace.stages))
    }

    /// `(matched, predicted, expected)`; `predicted` is None on malformed output.
    fn verify(&self, a: &str, b: &str) -> PyResult<(bool, Option<String>, String)> {
        let r = verify_addition(self.inner.stage_model(), &digits(a)?, &digits(b)?);
        Ok((
            r.matched,
            r.predicted.map(|p| p.to_string()),
            r.expected.to_string(),
        ))
    }

    /// Exact-match accuracy over the stage space and the failing inputs.
    #[pyo3(signature = (include_19=false))]
    fn stage_accuracy(&self, include_19: bool) -> PyResult<(f64, Vec<String>)> {
        let space = enumerate_stage_space(if include_19 { 19 } else { 18 });
        let acc = evaluate_stage_accuracy(self.inner.stage_model(), &space).map_err(py_err)?;
        Ok((
            acc.accuracy(),
            acc.failures.into_iter().map(|f| f.input).collect(),
        ))
    }
}

#[pymodule]
fn pyccat(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(add_digit_strings, m)?)?;
    m.add_function(wrap_pyfunction!(decompose_stages, m)?)?;
    m.add_function(wrap_pyfunction!(collate, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_stage_space_texts, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
