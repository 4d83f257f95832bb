"""Output emulation, loss emulation and the two loss functions.

Output emulation fits one surrogate per simulator output and compares the
emulated output vector with the data. Loss emulation computes the loss of
every training simulation against the data first and fits a single scalar
surrogate to those losses.
"""

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from .errors import DataError, DomainError, FactorizationError
from .forward import load_dataset
from .gp.local import LocalGP, LocalGPConfig
from .gp.lowrank import LowRankBasis, LowRankConfig, LowRankGP, lowrank_fit
from .io import file_sha256, write_json, write_npz

SCHEMA = "hoemu.emulator/1"

EUCLIDEAN = "euclidean"
MAHALANOBIS = "mahalanobis"
LOSS_FAMILIES = (EUCLIDEAN, MAHALANOBIS)
LOCAL = "local"
LOWRANK = "lowrank"
INTERPOLATORS = (LOCAL, LOWRANK)
COV_JITTER = 1e-8
PIVOT_RTOL = 1e-14

# rank defaults per emulation path
OUTPUT_RANK = 2000
LOSS_RANK = 1000


def _residuals(yhat, y0):
    yhat = np.asarray(yhat, dtype=float)
    y0 = np.asarray(y0, dtype=float).ravel()
    if yhat.shape[-1] != y0.size:
        raise DomainError(f"length mismatch: {yhat.shape[-1]} emulated outputs vs {y0.size} observed")
    return yhat - y0


def euclidean_loss(yhat, y0, sigma=1.0):
    """``||yhat - y0||^2 / (2 sigma^2)``; rows of a 2-D ``yhat`` give a vector of losses."""
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma!r}")
    r = _residuals(yhat, y0)
    return np.einsum("...j,...j->...", r, r) / (2.0 * sigma**2)


def mahalanobis_loss(yhat, y0, cov):
    """``(yhat - y0)^T cov^-1 (yhat - y0) / 2`` through a Cholesky solve.

    ``cov`` is a covariance matrix or a :class:`LossSpec` holding its factor.
    """
    if isinstance(cov, LossSpec):
        return cov(yhat, y0)
    factor = _cholesky_factor(np.asarray(cov, dtype=float))
    return _mahalanobis(_residuals(yhat, y0), factor)


def _mahalanobis(r, factor):
    z = scipy.linalg.solve_triangular(factor, np.atleast_2d(r).T, lower=True, check_finite=False)
    out = 0.5 * np.einsum("jm,jm->m", z, z)
    return out if r.ndim > 1 else float(out[0])


def _cholesky_factor(cov):
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise DomainError(f"covariance must be square, got shape {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(cov).max())):
        raise DomainError("covariance must be symmetric")
    factor = _try_cholesky(cov)
    if factor is None:
        raise FactorizationError("output covariance is not positive definite")
    return factor


def _try_cholesky(cov):
    # numpy accepts zero pivots; require every pivot to stand clear of the
    # rounding level of the diagonal
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return None
    floor = PIVOT_RTOL * max(float(np.max(np.diag(cov))), 0.0)
    if not np.all(np.diag(L) ** 2 > floor):
        return None
    return L


def compute_output_covariance(Y):
    """Sample covariance of the output rows, jittered until it factorizes.

    ``Y`` is an (N, J) array or a :class:`~hoemu.forward.TrainingSet`. The
    jitter starts at ``1e-8`` times the mean diagonal (absolute ``1e-8`` if
    that is zero) and grows tenfold per failed attempt.
    """
    Y = np.asarray(getattr(Y, "Y", Y), dtype=float)
    if Y.ndim != 2 or Y.shape[0] < 1:
        raise DomainError("need an (N, J) output matrix")
    J = Y.shape[1]
    S = (np.cov(Y, rowvar=False) if Y.shape[0] > 1 else np.zeros((J, J))).reshape(J, J)
    scale = float(np.mean(np.diag(S)))
    jit = COV_JITTER * (scale if scale > 0 else 1.0)
    cov = S
    for _ in range(40):
        if _try_cholesky(cov) is not None:
            return cov
        cov = S + jit * np.eye(J)
        jit *= 10.0
    raise FactorizationError("could not regularize the output covariance")


@dataclass(frozen=True)
class LossSpec:
    """Loss family with its scale (Euclidean) or covariance (Mahalanobis)."""

    family: str = EUCLIDEAN
    sigma: float = 1.0
    cov: np.ndarray = None
    _factor: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in LOSS_FAMILIES:
            raise DomainError(f"unknown loss family {self.family!r}; choose from {LOSS_FAMILIES}")
        if self.family == EUCLIDEAN:
            if not self.sigma > 0:
                raise DomainError(f"sigma must be positive, got {self.sigma!r}")
            return
        if self.cov is None:
            raise DomainError("Mahalanobis loss needs a covariance matrix")
        cov = np.array(self.cov, dtype=float)
        factor = _cholesky_factor(cov)
        cov.setflags(write=False)
        factor.setflags(write=False)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_factor", factor)

    @classmethod
    def euclidean(cls, sigma=1.0):
        return cls(EUCLIDEAN, sigma=sigma)

    @classmethod
    def mahalanobis(cls, cov):
        return cls(MAHALANOBIS, cov=cov)

    @classmethod
    def from_training(cls, family, ts, sigma=1.0):
        """Loss of ``family`` with the covariance taken from the training outputs."""
        if family == MAHALANOBIS:
            return cls.mahalanobis(compute_output_covariance(ts))
        return cls(family, sigma=sigma)

    def __call__(self, yhat, y0):
        """Loss of one emulated vector, or of each row of a 2-D array."""
        if self.family == EUCLIDEAN:
            return euclidean_loss(yhat, y0, self.sigma)
        return _mahalanobis(_residuals(yhat, y0), self._factor)


def _check_interp(interpolator):
    if interpolator not in INTERPOLATORS:
        raise DomainError(f"unknown interpolator {interpolator!r}; choose from {INTERPOLATORS}")


class _Surrogate:
    """Uniform predict interface over the local and low-rank models."""

    def __init__(self, interpolator, model):
        self.interpolator = interpolator
        self.model = model

    def predict(self, Theta, return_var=True):
        mean, var = self.model.predict(np.atleast_2d(Theta), return_var)
        return mean, var


def _fit_surrogate(X, Y, interpolator, local_config, lowrank_config, basis, default_rank):
    _check_interp(interpolator)
    if interpolator == LOCAL:
        return _Surrogate(LOCAL, LocalGP(X, Y, local_config or LocalGPConfig()))
    if basis is None:
        cfg = lowrank_config or LowRankConfig(k=default_rank)
        basis = cfg.for_size(X.shape[0]).build_basis(X)
    return _Surrogate(LOWRANK, lowrank_fit(X, Y, basis=basis))


class OutputEmulator:
    """Independent surrogates for each output column of a training set.

    The columns share the training inputs; the local interpolator fits all
    of them per neighbourhood in one batch, the low-rank one through a
    shared basis.
    """

    def __init__(self, ts, surrogate):
        self.ts = ts
        self.surrogate = surrogate

    @property
    def interpolator(self):
        return self.surrogate.interpolator

    @property
    def n_outputs(self):
        return self.ts.n_outputs

    def predict(self, Theta, return_var=True):
        """Emulated means and variances, shape (m, J), at the rows of ``Theta``."""
        return self.surrogate.predict(Theta, return_var)

    def predict_component(self, theta, j, return_var=True):
        """Scalar prediction of output ``j`` at ``theta``."""
        if not 0 <= j < self.n_outputs:
            raise DomainError(f"output index {j} outside [0, {self.n_outputs})")
        mean, var = self.predict(theta, return_var)
        return float(mean[0, j]), (None if var is None else float(var[0, j]))


def fit_output_emulator(ts, interpolator=LOCAL, local_config=None, lowrank_config=None, basis=None):
    """Build the per-output emulator on a training set.

    The local interpolator is configured here and fitted per query; the
    low-rank one is fitted now (rank 2000 unless ``lowrank_config`` says
    otherwise).
    """
    surrogate = _fit_surrogate(ts.Theta, ts.Y, interpolator, local_config, lowrank_config, basis, OUTPUT_RANK)
    return OutputEmulator(ts, surrogate)


def emulate_outputs(emulator, theta):
    """Mean and variance vectors of the J outputs at one parameter vector."""
    mean, var = emulator.predict(np.asarray(theta, dtype=float)[None])
    return mean[0], var[0]


class LossEmulator:
    """Scalar surrogate of the training losses against one observation."""

    def __init__(self, ts, y0, loss, surrogate, targets, log_transform=False):
        self.ts = ts
        self.y0 = np.asarray(y0, dtype=float)
        self.loss = loss
        self.surrogate = surrogate
        self.targets = targets
        self.log_transform = log_transform

    @property
    def interpolator(self):
        return self.surrogate.interpolator

    def predict(self, Theta, return_var=True):
        """Posterior mean (and variance) of the loss, in loss units when untransformed."""
        mean, var = self.surrogate.predict(Theta, return_var)
        if self.log_transform:
            mean = np.expm1(mean)
        return mean, var


def training_losses(ts, y0, loss):
    """Loss of every training output row against ``y0``."""
    y0 = np.asarray(y0, dtype=float).ravel()
    if y0.size != ts.n_outputs:
        raise DomainError(f"observed data have {y0.size} components, training outputs {ts.n_outputs}")
    return np.asarray(loss(ts.Y, y0), dtype=float)


def fit_loss_emulator(
    ts, y0, loss=None, interpolator=LOCAL, local_config=None, lowrank_config=None, basis=None, log_transform=False
):
    """Compute the training losses against ``y0`` and fit one scalar surrogate.

    With ``log_transform`` the surrogate is fitted to ``log(1 + loss)`` and
    predictions are mapped back.
    """
    loss = LossSpec() if loss is None else loss
    targets = training_losses(ts, y0, loss)
    if not np.all(np.isfinite(targets)):
        raise DomainError("training losses contain non-finite values")
    fit_y = np.log1p(targets) if log_transform else targets
    surrogate = _fit_surrogate(ts.Theta, fit_y, interpolator, local_config, lowrank_config, basis, LOSS_RANK)
    return LossEmulator(ts, y0, loss, surrogate, targets, log_transform)


def surrogate_loss(theta, y0, emulator, loss=None):
    """Surrogate loss at ``theta``.

    For an :class:`OutputEmulator` this is ``loss`` between the emulated
    mean outputs and ``y0``; for a :class:`LossEmulator` it is the posterior
    mean of the loss surrogate (``y0`` and ``loss`` must then match the ones
    it was built with, or be ``None``).
    """
    return float(SurrogateObjective(emulator, y0, loss)(theta))


class SurrogateObjective:
    """Surrogate loss as a function of the parameters, for the optimizers.

    Calling it on one vector returns a float; :meth:`many` evaluates the
    rows of a matrix. ``n_evals`` counts evaluated points.
    """

    def __init__(self, emulator, y0=None, loss=None):
        self.emulator = emulator
        if isinstance(emulator, LossEmulator):
            if y0 is not None and not np.array_equal(np.asarray(y0, dtype=float).ravel(), emulator.y0.ravel()):
                raise DomainError("y0 differs from the observation the loss emulator was built on")
            if loss is not None and loss != emulator.loss:
                raise DomainError("loss differs from the one the loss emulator was built with")
            self.y0, self.loss = emulator.y0, emulator.loss
        elif isinstance(emulator, OutputEmulator):
            if y0 is None:
                raise DomainError("output emulation needs the observed data y0")
            self.y0 = np.asarray(y0, dtype=float).ravel()
            if self.y0.size != emulator.n_outputs:
                raise DomainError(f"y0 has {self.y0.size} components, emulator {emulator.n_outputs}")
            self.loss = LossSpec() if loss is None else loss
        else:
            raise DomainError(f"not an emulator: {type(emulator).__name__}")
        self.n_evals = 0

    def many(self, Theta):
        Theta = np.atleast_2d(np.asarray(Theta, dtype=float))
        self.n_evals += Theta.shape[0]
        mean, _ = self.emulator.predict(Theta, return_var=False)
        if isinstance(self.emulator, LossEmulator):
            return np.asarray(mean, dtype=float).reshape(-1)
        return np.asarray(self.loss(mean, self.y0), dtype=float).reshape(-1)

    def __call__(self, theta):
        return float(self.many(np.asarray(theta, dtype=float)[None])[0])


def _sidecar(path):
    return os.path.splitext(os.fspath(path))[0] + ".npz"


def _loss_record(loss):
    return {"family": loss.family, "sigma": loss.sigma, "cov": None if loss.cov is None else loss.cov}


def save_emulator(emulator, path, dataset_path):
    """Persist a fitted emulator as a JSON document (plus ``.npz`` for low-rank).

    The training data are not copied: the document records ``dataset_path``
    (relative to the emulator file) and its SHA-256, checked on load. A
    low-rank emulator also stores its subsample indices, retained eigenpairs
    and posterior weights in the ``.npz`` sidecar next to ``path``.
    """
    path = os.fspath(path)
    here = os.path.dirname(os.path.abspath(path))
    doc = {
        "schema": SCHEMA,
        "kind": "loss" if isinstance(emulator, LossEmulator) else "output",
        "interpolator": emulator.interpolator,
        "dataset": {
            "path": os.path.relpath(os.path.abspath(dataset_path), here),
            "sha256": file_sha256(dataset_path),
        },
    }
    if isinstance(emulator, LossEmulator):
        doc["loss"] = _loss_record(emulator.loss)
        doc["y0"] = emulator.y0
        doc["log_transform"] = emulator.log_transform
    model = emulator.surrogate.model
    if emulator.interpolator == LOCAL:
        doc["local_config"] = asdict(model.config)
    else:
        basis = model.basis
        doc["lowrank"] = {
            "family": "matern32",
            "n_r": basis.n_r,
            "k": basis.k,
            "blocks": list(basis.blocks),
            "seed": basis.seed,
            "ratios": list(basis.ratios),
            "lengthscales": [b.lengthscale for b in basis.block_list],
            "beta": model.beta,
            "signal_var": model.signal_var,
            "noise_var": model.noise_var,
            "ratio": model.ratio,
            "squeeze": model.squeeze,
            "sidecar": os.path.basename(_sidecar(path)),
        }
        arrays = {"subsample": basis.subsample, "coef": model.coef}
        for b in basis.block_list:
            arrays[f"{b.name}_eigvals"] = b.D
            arrays[f"{b.name}_eigvecs"] = b.U
        write_npz(_sidecar(path), **arrays)
    write_json(path, doc)


def load_emulator(path):
    """Rebuild an emulator written by :func:`save_emulator`."""
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read emulator file {path}: {exc}") from exc
    if doc.get("schema") != SCHEMA:
        raise DataError(f"{path}: unsupported emulator schema {doc.get('schema')!r}")
    here = os.path.dirname(os.path.abspath(path))
    data_path = os.path.join(here, doc["dataset"]["path"])
    if not os.path.exists(data_path):
        raise DataError(f"training dataset {data_path} referenced by {path} is missing")
    if file_sha256(data_path) != doc["dataset"]["sha256"]:
        raise DataError(f"training dataset {data_path} changed since the emulator was saved")
    ts = load_dataset(data_path)
    interpolator = doc["interpolator"]
    _check_interp(interpolator)
    if doc["kind"] == "loss":
        rec = doc["loss"]
        loss = LossSpec(rec["family"], sigma=rec["sigma"], cov=None if rec["cov"] is None else np.array(rec["cov"]))
        y0 = np.array(doc["y0"], dtype=float)
        targets = training_losses(ts, y0, loss)
        fit_y = np.log1p(targets) if doc["log_transform"] else targets
    else:
        fit_y = ts.Y
    if interpolator == LOCAL:
        cfg = dict(doc["local_config"])
        model = LocalGP(ts.Theta, fit_y, LocalGPConfig(**cfg))
    else:
        lr = doc["lowrank"]
        with np.load(os.path.join(here, lr["sidecar"])) as z:
            basis = LowRankBasis.from_components(
                ts.Theta,
                z["subsample"],
                lr["blocks"],
                lr["lengthscales"],
                [z[f"{b}_eigvals"] for b in lr["blocks"]],
                [z[f"{b}_eigvecs"] for b in lr["blocks"]],
                lr["k"],
                lr["seed"],
                lr["ratios"],
            )
            coef = z["coef"]
        model = LowRankGP(
            basis,
            fit_y,
            np.array(lr["beta"], dtype=float),
            np.array(lr["signal_var"], dtype=float),
            np.array(lr["noise_var"], dtype=float),
            np.array(lr["ratio"], dtype=float),
            coef,
            lr["squeeze"],
        )
    surrogate = _Surrogate(interpolator, model)
    if doc["kind"] == "loss":
        return LossEmulator(ts, y0, loss, surrogate, targets, doc["log_transform"])
    return OutputEmulator(ts, surrogate)
