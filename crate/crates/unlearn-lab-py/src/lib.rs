//! Python bindings for the unlearning laboratory. The module mirrors the
//! crate's main operations — dataset generation and splitting, training,
//! the alternating unlearning loop, checkpoint evaluation, and the
//! variance-bound calculators — with plain Python types at the boundary.
//! Structured configuration (optimizers, unlearning methods) is passed
//! as JSON strings using the same schema as the command-line tool.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use unlearn_lab::data::{self, BlobSpec, DatasetSplit, RowTag};
use unlearn_lab::error::Error;
use unlearn_lab::metrics;
use unlearn_lab::nn::MlpModel;
use unlearn_lab::optim::OptimizerConfig;
use unlearn_lab::rng;
use unlearn_lab::tensor::Tensor;
use unlearn_lab::unlearn::{self, UnlearnConfig, UnlearnTask};
use unlearn_lab::variance_lab::{self, NoiseSpec, QuadraticObjective, SchemeConfig, SchemeKind};

/// Library errors become `ValueError`s carrying the error code and the
/// human-readable message.
fn to_py(e: Error) -> PyErr {
    PyValueError::new_err(format!("{}: {e}", e.code()))
}

fn parse_json<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> PyResult<T> {
    serde_json::from_str(text)
        .map_err(|e| PyValueError::new_err(format!("config: invalid {what} JSON: {e}")))
}

fn tag_from_name(name: &str) -> PyResult<Option<RowTag>> {
    match name {
        "forget" => Ok(Some(RowTag::Forget)),
        "retain" => Ok(Some(RowTag::Retain)),
        "test" => Ok(Some(RowTag::Test)),
        "train" => Ok(None),
        other => Err(PyValueError::new_err(format!(
            "input: unknown subset {other:?}; expected forget, retain, test or train"
        ))),
    }
}

fn rows_to_tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let n = rows.len();
    let d = rows.first().map(|r| r.len()).unwrap_or(0);
    if n == 0 || d == 0 {
        return Err(PyValueError::new_err("input: feature rows must be non-empty"));
    }
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("dimension: feature rows have mixed lengths"));
    }
    Tensor::from_vec(&[n, d], rows.into_iter().flatten().collect()).map_err(to_py)
}

fn tensor_to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let d = t.shape()[1];
    t.data().chunks_exact(d).map(|r| r.to_vec()).collect()
}

/// A generated or loaded dataset with per-row forget/retain/test tags.
#[pyclass(frozen)]
struct Dataset {
    inner: DatasetSplit,
}

#[pymethods]
impl Dataset {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    /// Row counts as a `(forget, retain, test)` tuple.
    fn counts(&self) -> (usize, usize, usize) {
        (
            self.inner.count(RowTag::Forget),
            self.inner.count(RowTag::Retain),
            self.inner.count(RowTag::Test),
        )
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    /// Feature matrix of one subset (`"forget"`, `"retain"`, `"test"` or
    /// `"train"`) as a list of rows, with the matching labels.
    fn subset(&self, name: &str) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
        let idxs = match tag_from_name(name)? {
            Some(tag) => self.inner.indices(tag),
            None => self.inner.train_indices(),
        };
        let (x, y) = self.inner.gather(&idxs);
        Ok((tensor_to_rows(&x), y))
    }

    /// Re-tag `floor(fraction * n_train)` training rows as the forget set
    /// for one trial. Deterministic in the trial seed.
    fn split_forget(&self, fraction: f64, trial_seed: u64) -> PyResult<Dataset> {
        Ok(Dataset { inner: data::split_forget(&self.inner, fraction, trial_seed).map_err(to_py)? })
    }
}

/// A multi-layer perceptron checkpoint.
#[pyclass(frozen)]
struct Model {
    inner: MlpModel,
}

#[pymethods]
impl Model {
    #[getter]
    fn layer_dims(&self) -> Vec<usize> {
        self.inner.layer_dims().to_vec()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Class probabilities for a batch of feature rows.
    fn predict_proba(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = rows_to_tensor(rows)?;
        Ok(tensor_to_rows(&self.inner.predict_proba(&x).map_err(to_py)?))
    }

    /// Accuracy on one subset of a dataset.
    fn accuracy(&self, dataset: &Dataset, subset: &str) -> PyResult<f64> {
        let idxs = match tag_from_name(subset)? {
            Some(tag) => dataset.inner.indices(tag),
            None => dataset.inner.train_indices(),
        };
        let (x, y) = dataset.inner.gather(&idxs);
        self.inner.accuracy(&x, &y).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_checkpoint(&path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Model> {
        Ok(Model { inner: MlpModel::load_checkpoint(&path).map_err(to_py)? })
    }
}

/// Forget/retain/test accuracy plus the membership-attack read-out for
/// one checkpoint.
#[pyclass(frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct EvalResult {
    trial_seed: u64,
    fa: f64,
    ra: f64,
    ta: f64,
    mia: f64,
    threshold: f64,
    member_below: bool,
    holdout_member_rate: f64,
}

/// Final train/test accuracy and loss of a training run.
#[pyclass(frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct TrainStats {
    train_accuracy: f64,
    test_accuracy: f64,
    final_loss: f64,
    steps: usize,
}

/// Mean/std/gap summary over a set of trials.
#[pyclass(frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct AggregateResult {
    n_trials: usize,
    metric_names: Vec<String>,
    means: Vec<f64>,
    stds: Vec<f64>,
    rt_means: Option<Vec<f64>>,
    gaps: Option<Vec<f64>>,
    avg_gap: Option<f64>,
    avg_std: f64,
}

/// Worst-case iterate-variance tables for both optimizer layouts.
#[pyclass(frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct BoundTable {
    shared_f: Vec<f64>,
    shared_r: Vec<f64>,
    decoupled_f: Vec<f64>,
    decoupled_r: Vec<f64>,
}

/// One grid point of the variance-ordering sweep.
#[pyclass(frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct OrderingPoint {
    alpha: f64,
    tau: f64,
    lipschitz: f64,
    holds: bool,
    margin_f: f64,
    margin_r: f64,
}

/// The full variance-ordering sweep.
#[pyclass(frozen, get_all, skip_from_py_object)]
struct OrderingReport {
    all_hold: bool,
    points: Vec<OrderingPoint>,
}

/// Monte-Carlo check of the gradient-variance bound on one quadratic.
#[pyclass(frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct LemmaResult {
    empirical: f64,
    bound: f64,
    exact: f64,
}

/// Per-step iterate variances from simulated optimization trajectories.
#[pyclass(frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct SimResult {
    var_f: Vec<f64>,
    var_r: Vec<f64>,
    n_trials: usize,
}

/// Draw an isotropic Gaussian blob dataset. Centers may be given
/// explicitly (flattened row-major) or drawn uniformly from
/// `[-center_spread, center_spread]^dim`.
#[pyfunction]
#[pyo3(signature = (num_classes, dim, n_per_class, cluster_stddev, seed, centers=None, center_spread=None))]
fn gen_blobs(
    num_classes: usize,
    dim: usize,
    n_per_class: usize,
    cluster_stddev: f64,
    seed: u64,
    centers: Option<Vec<f64>>,
    center_spread: Option<f64>,
) -> PyResult<Dataset> {
    let spec = BlobSpec {
        num_classes,
        dim,
        n_per_class,
        cluster_stddev,
        centers: centers.unwrap_or_default(),
        center_spread,
    };
    Ok(Dataset { inner: data::gen_blobs(&spec, seed).map_err(to_py)? })
}

/// Load an IDX image/label quadruple as a tagged dataset.
#[pyfunction]
fn load_idx(
    train_images: PathBuf,
    train_labels: PathBuf,
    test_images: PathBuf,
    test_labels: PathBuf,
) -> PyResult<Dataset> {
    Ok(Dataset {
        inner: data::load_idx(&train_images, &train_labels, &test_images, &test_labels)
            .map_err(to_py)?,
    })
}

fn train_impl(
    retain_only: bool,
    dataset: &Dataset,
    hidden: Vec<usize>,
    epochs: usize,
    batch_size: usize,
    optim_json: &str,
    seed: u64,
) -> PyResult<(Model, TrainStats)> {
    let cfg: OptimizerConfig = parse_json("optimizer", optim_json)?;
    let run = if retain_only { unlearn::retrain } else { unlearn::pretrain };
    let (ckpt, summary) =
        run(&dataset.inner, &hidden, epochs, batch_size, &cfg, seed).map_err(to_py)?;
    Ok((
        Model { inner: ckpt.model },
        TrainStats {
            train_accuracy: summary.train_accuracy,
            test_accuracy: summary.test_accuracy,
            final_loss: summary.final_loss,
            steps: summary.steps,
        },
    ))
}

/// Train the initial model on every training row. The optimizer config
/// is JSON, e.g. `{"kind": "adam", "step_size": 1e-3}`.
#[pyfunction]
fn pretrain(
    dataset: &Dataset,
    hidden: Vec<usize>,
    epochs: usize,
    batch_size: usize,
    optim_json: &str,
    seed: u64,
) -> PyResult<(Model, TrainStats)> {
    train_impl(false, dataset, hidden, epochs, batch_size, optim_json, seed)
}

/// Train the exact-unlearning reference on the retain rows only; the
/// dataset must carry a forget split.
#[pyfunction]
fn retrain(
    dataset: &Dataset,
    hidden: Vec<usize>,
    epochs: usize,
    batch_size: usize,
    optim_json: &str,
    seed: u64,
) -> PyResult<(Model, TrainStats)> {
    train_impl(true, dataset, hidden, epochs, batch_size, optim_json, seed)
}

/// Run the alternating unlearning loop from a pretrained model. The
/// config is JSON with the same schema as the CLI's `unlearn` section,
/// e.g. `{"method": "ga_ce", "t_outer": 5, "t_forget": 1, "t_retain": 2,
/// "optim": {"forget": {...}, "retain": {...}}}`. Returns the unlearned
/// model and per-step diagnostics as
/// `(step, outer, phase, loss, grad_norm, cosine_fr)` tuples.
#[pyfunction]
fn run_unlearn(
    pretrained: &Model,
    dataset: &Dataset,
    config_json: &str,
    seed: u64,
) -> PyResult<(Model, Vec<(usize, usize, String, f64, f64, Option<f64>)>)> {
    let cfg: UnlearnConfig = parse_json("unlearn config", config_json)?;
    let task = UnlearnTask {
        pretrained: pretrained.inner.clone(),
        data: dataset.inner.clone(),
        seed,
    };
    let (ckpt, trace) = unlearn::run_unlearn(&task, &cfg).map_err(to_py)?;
    let steps = trace
        .steps
        .iter()
        .map(|s| {
            let phase = match s.phase {
                unlearn_lab::optim::Phase::Forget => "forget".to_string(),
                unlearn_lab::optim::Phase::Retain => "retain".to_string(),
            };
            (s.step, s.outer, phase, s.loss, s.grad_norm, s.cosine_fr)
        })
        .collect();
    Ok((Model { inner: ckpt.model }, steps))
}

/// Evaluate a checkpoint: subset accuracies plus the entropy-threshold
/// membership attack on the forget rows, calibrated on `calib_size`
/// retain rows and half of the test rows.
#[pyfunction]
fn evaluate(
    model: &Model,
    dataset: &Dataset,
    calib_size: usize,
    seed: u64,
    trial_seed: u64,
) -> PyResult<EvalResult> {
    let (rep, audit) =
        metrics::evaluate_checkpoint(&model.inner, &dataset.inner, calib_size, seed, trial_seed)
            .map_err(to_py)?;
    Ok(EvalResult {
        trial_seed: rep.trial_seed,
        fa: rep.fa,
        ra: rep.ra,
        ta: rep.ta,
        mia: rep.mia,
        threshold: audit.threshold,
        member_below: audit.member_below,
        holdout_member_rate: audit.holdout_member_rate,
    })
}

/// Aggregate per-trial `(trial_seed, fa, ra, ta, mia)` tuples into
/// means, sample standard deviations, and (when reference trials are
/// given) per-metric gaps.
#[pyfunction]
#[pyo3(signature = (trials, rt_trials=None))]
fn aggregate(
    trials: Vec<(u64, f64, f64, f64, f64)>,
    rt_trials: Option<Vec<(u64, f64, f64, f64, f64)>>,
) -> PyResult<AggregateResult> {
    let unpack = |rows: Vec<(u64, f64, f64, f64, f64)>| -> Vec<metrics::EvalReport> {
        rows.into_iter()
            .map(|(trial_seed, fa, ra, ta, mia)| metrics::EvalReport {
                trial_seed,
                fa,
                ra,
                ta,
                mia,
            })
            .collect()
    };
    let reports = unpack(trials);
    let rt = rt_trials.map(unpack);
    let agg = metrics::aggregate(&reports, rt.as_deref()).map_err(to_py)?;
    Ok(AggregateResult {
        n_trials: agg.n_trials,
        metric_names: agg.metric_names,
        means: agg.means,
        stds: agg.stds,
        rt_means: agg.rt_means,
        gaps: agg.gaps,
        avg_gap: agg.avg_gap,
        avg_std: agg.avg_std,
    })
}

/// Entropy of one probability vector (natural log).
#[pyfunction]
fn entropy(probs: Vec<f64>) -> PyResult<f64> {
    metrics::entropy(&probs).map_err(to_py)
}

/// Evaluate the worst-case iterate-variance recursions for the shared
/// and decoupled optimizer layouts.
#[pyfunction]
fn bound_recursion(
    alpha: f64,
    tau: f64,
    lipschitz: f64,
    sigma: f64,
    t_steps: usize,
) -> PyResult<BoundTable> {
    let t = variance_lab::bound_recursion(alpha, tau, lipschitz, sigma, t_steps).map_err(to_py)?;
    Ok(BoundTable {
        shared_f: t.shared_f,
        shared_r: t.shared_r,
        decoupled_f: t.decoupled_f,
        decoupled_r: t.decoupled_r,
    })
}

/// Check the decoupled-never-worse ordering over the default
/// `alpha x tau x L` grid.
#[pyfunction]
#[pyo3(signature = (sigma=1.0, t_steps=50))]
fn verify_theorem(sigma: f64, t_steps: usize) -> PyResult<OrderingReport> {
    let rep = variance_lab::verify_theorem_grid(sigma, t_steps).map_err(to_py)?;
    Ok(OrderingReport {
        all_hold: rep.all_hold,
        points: rep
            .points
            .into_iter()
            .map(|p| OrderingPoint {
                alpha: p.alpha,
                tau: p.tau,
                lipschitz: p.lipschitz,
                holds: p.check.holds,
                margin_f: p.check.margin_f,
                margin_r: p.check.margin_r,
            })
            .collect(),
    })
}

/// Monte-Carlo check of the smoothness bound
/// `Var(grad L(theta)) <= L^2 Var(theta)` on one quadratic objective
/// with eigenvalues `eigs`, minimizer `center`, and a rotation drawn
/// from `rotation_seed`; `theta ~ N(mean, coord_std^2 I)`.
#[pyfunction]
fn verify_lemma(
    eigs: Vec<f64>,
    center: Vec<f64>,
    rotation_seed: u64,
    mean: Vec<f64>,
    coord_std: f64,
    n_samples: usize,
    seed: u64,
) -> PyResult<LemmaResult> {
    let obj = QuadraticObjective::from_spectrum(&eigs, &center, rotation_seed).map_err(to_py)?;
    let rep = variance_lab::verify_lemma(&obj, &mean, coord_std, n_samples, seed).map_err(to_py)?;
    Ok(LemmaResult { empirical: rep.empirical, bound: rep.bound, exact: rep.exact })
}

/// Simulate the alternating two-objective scheme under correlated
/// gradient noise and return per-step iterate variances across trials.
/// `kind` is `"shared"` or `"decoupled"`.
#[pyfunction]
#[pyo3(signature = (kind, eigs_f, center_f, eigs_r, center_r, alpha, eta, t_steps, sigma, n_trials, seed, temporal_corr=0.0, cross_corr=0.0, objective_seed=0))]
#[allow(clippy::too_many_arguments)]
fn simulate_scheme(
    kind: &str,
    eigs_f: Vec<f64>,
    center_f: Vec<f64>,
    eigs_r: Vec<f64>,
    center_r: Vec<f64>,
    alpha: f64,
    eta: f64,
    t_steps: usize,
    sigma: f64,
    n_trials: usize,
    seed: u64,
    temporal_corr: f64,
    cross_corr: f64,
    objective_seed: u64,
) -> PyResult<SimResult> {
    let kind = match kind {
        "shared" => SchemeKind::Shared,
        "decoupled" => SchemeKind::Decoupled,
        other => {
            return Err(PyValueError::new_err(format!(
                "config: unknown scheme kind {other:?}; expected shared or decoupled"
            )))
        }
    };
    let lf = QuadraticObjective::from_spectrum(&eigs_f, &center_f, objective_seed).map_err(to_py)?;
    let lr = QuadraticObjective::from_spectrum(&eigs_r, &center_r, objective_seed.wrapping_add(1))
        .map_err(to_py)?;
    let d = lf.dim();
    let noise = NoiseSpec { sigma, temporal_corr, cross_corr };
    let scheme = SchemeConfig { kind, alpha, eta, t_steps };
    let stats =
        variance_lab::simulate_scheme(&lf, &lr, &vec![0.0; d], &noise, &scheme, n_trials, seed)
            .map_err(to_py)?;
    Ok(SimResult { var_f: stats.var_f, var_r: stats.var_r, n_trials: stats.n_trials })
}

/// Derive a named sub-stream seed from a base seed, identically to the
/// rest of the toolkit.
#[pyfunction]
fn derive_seed(base: u64, tag: &str) -> u64 {
    rng::derive_seed(base, tag)
}

#[pymodule]
fn unlearn_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_class::<EvalResult>()?;
    m.add_class::<TrainStats>()?;
    m.add_class::<AggregateResult>()?;
    m.add_class::<BoundTable>()?;
    m.add_class::<OrderingPoint>()?;
    m.add_class::<OrderingReport>()?;
    m.add_class::<LemmaResult>()?;
    m.add_class::<SimResult>()?;
    m.add_function(wrap_pyfunction!(gen_blobs, m)?)?;
    m.add_function(wrap_pyfunction!(load_idx, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(retrain, m)?)?;
    m.add_function(wrap_pyfunction!(run_unlearn, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(bound_recursion, m)?)?;
    m.add_function(wrap_pyfunction!(verify_theorem, m)?)?;
    m.add_function(wrap_pyfunction!(verify_lemma, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_scheme, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    Ok(())
}
