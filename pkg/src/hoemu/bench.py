"""Synthetic recovery benchmark over the eight method combinations.

Every combination of interpolator (local, low-rank), framework (output or
loss emulation) and loss (Euclidean, Mahalanobis) infers the parameters of
each held-out test case from its noiseless outputs. The score of a case is
the parameter-space mean squared error ``||theta_hat - theta_true||^2 / d``.
"""

import itertools
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import emulate
from .errors import DomainError, HoemuError
from .gp.local import LocalGPConfig
from .gp.lowrank import LowRankConfig
from .infer import CG_MULTISTART, GLOBAL_SEARCH, OptimizerConfig, minimize

INTERPOLATORS = ("local", "lowrank")
FRAMEWORKS = ("output", "loss")
LOSSES = ("euclidean", "mahalanobis")


@dataclass(frozen=True, order=True)
class MethodCombo:
    interpolator: str
    framework: str
    loss: str

    def __post_init__(self):
        if self.interpolator not in INTERPOLATORS:
            raise DomainError(f"unknown interpolator {self.interpolator!r}")
        if self.framework not in FRAMEWORKS:
            raise DomainError(f"unknown framework {self.framework!r}")
        if self.loss not in LOSSES:
            raise DomainError(f"unknown loss {self.loss!r}")

    @property
    def label(self):
        return f"{self.framework}-{self.interpolator}-{self.loss}"

    @property
    def strategy(self):
        # the local path pairs with global search, the low-rank path with CG
        return GLOBAL_SEARCH if self.interpolator == "local" else CG_MULTISTART

    @classmethod
    def parse(cls, label):
        parts = label.split("-")
        if len(parts) != 3:
            raise DomainError(f"combo label {label!r} is not framework-interpolator-loss")
        framework, interpolator, loss = parts
        return cls(interpolator, framework, loss)


ALL_COMBOS = tuple(MethodCombo(i, f, l) for i, f, l in itertools.product(INTERPOLATORS, FRAMEWORKS, LOSSES))


def parameter_mse(theta_hat, theta_true):
    """Mean over coordinates of the squared parameter error."""
    diff = np.asarray(theta_hat, dtype=float) - np.asarray(theta_true, dtype=float)
    return float(np.mean(diff**2))


@dataclass
class BenchReport:
    """Per-combo MSEs (NaN where a case failed), estimates and failure reasons.

    ``runtime`` holds wall-clock seconds per combo; it is kept apart from
    the deterministic content written by :meth:`record`.
    """

    combos: list
    n_cases: int
    mse: dict
    estimates: dict
    failures: dict
    seed: int
    runtime: dict = field(default_factory=dict)

    def record(self):
        return {
            "schema": "hoemu.bench/1",
            "mse_definition": "mean over the 4 parameters of (theta_hat - theta_true)^2",
            "seed": self.seed,
            "n_cases": self.n_cases,
            "combos": [c.label for c in self.combos],
            "mse": {c.label: [None if np.isnan(v) else v for v in self.mse[c.label]] for c in self.combos},
            "estimates": {c.label: self.estimates[c.label] for c in self.combos},
            "failures": {c.label: [{"case": i, "reason": r} for i, r in self.failures[c.label]] for c in self.combos},
            "summary": summarize(self),
        }


@dataclass(frozen=True)
class BenchSettings:
    """Surrogate and optimizer settings shared by all combos."""

    local: LocalGPConfig = LocalGPConfig()
    output_rank: LowRankConfig = LowRankConfig(k=emulate.OUTPUT_RANK)
    loss_rank: LowRankConfig = LowRankConfig(k=emulate.LOSS_RANK)
    global_search: OptimizerConfig = OptimizerConfig(strategy=GLOBAL_SEARCH)
    cg: OptimizerConfig = OptimizerConfig(strategy=CG_MULTISTART)
    sigma: float = 1.0


class _Shared:
    """Emulator pieces that do not depend on the test case, built on first use."""

    def __init__(self, train, settings):
        self.train = train
        self.settings = settings
        self._output = {}
        self._basis = {}
        self._cov = None

    def loss_spec(self, name):
        if name == "euclidean":
            return emulate.LossSpec.euclidean(self.settings.sigma)
        if self._cov is None:
            self._cov = emulate.compute_output_covariance(self.train)
        return emulate.LossSpec.mahalanobis(self._cov)

    def basis(self, which):
        if which not in self._basis:
            cfg = self.settings.output_rank if which == "output" else self.settings.loss_rank
            self._basis[which] = cfg.for_size(len(self.train)).build_basis(self.train.Theta)
        return self._basis[which]

    def output_emulator(self, interpolator):
        if interpolator not in self._output:
            basis = self.basis("output") if interpolator == "lowrank" else None
            self._output[interpolator] = emulate.fit_output_emulator(
                self.train, interpolator, local_config=self.settings.local, basis=basis
            )
        return self._output[interpolator]

    def objective(self, combo, y0):
        loss = self.loss_spec(combo.loss)
        if combo.framework == "output":
            return emulate.SurrogateObjective(self.output_emulator(combo.interpolator), y0, loss)
        basis = self.basis("loss") if combo.interpolator == "lowrank" else None
        em = emulate.fit_loss_emulator(
            self.train, y0, loss, combo.interpolator, local_config=self.settings.local, basis=basis
        )
        return emulate.SurrogateObjective(em)


def run_benchmark(train, test, combos=ALL_COMBOS, seed=0, settings=None, progress=None):
    """Infer every test case with every combo and collect the MSEs.

    Parameters
    ----------
    train, test : TrainingSet
        ``test.Y`` rows are the observations, ``test.Theta`` the truth.
    combos : sequence of MethodCombo
    seed : int
        Seeds the optimizer scatter; surrogates use the seeds in ``settings``.
    progress : callable, optional
        Called as ``progress(combo, case, mse_or_None)`` after each case.

    Returns
    -------
    BenchReport
    """
    settings = BenchSettings() if settings is None else settings
    combos = list(combos)
    if not combos:
        raise DomainError("no method combinations selected")
    if len(test) == 0:
        raise DomainError("empty test set")
    shared = _Shared(train, settings)
    mse, estimates, failures, runtime = {}, {}, {}, {}
    for combo in combos:
        base = settings.global_search if combo.strategy == GLOBAL_SEARCH else settings.cg
        opt = replace(base, strategy=combo.strategy, seed=seed)
        t0 = time.perf_counter()
        values = np.full(len(test), np.nan)
        est = [None] * len(test)
        fails = []
        for i in range(len(test)):
            try:
                result = minimize(shared.objective(combo, test.Y[i]), opt)
                values[i] = parameter_mse(result.theta, test.Theta[i])
                est[i] = result.theta
            except (HoemuError, FloatingPointError, np.linalg.LinAlgError) as exc:
                fails.append((i, f"{type(exc).__name__}: {exc}"))
            if progress is not None:
                progress(combo, i, None if np.isnan(values[i]) else values[i])
        mse[combo.label], estimates[combo.label], failures[combo.label] = values, est, fails
        runtime[combo.label] = time.perf_counter() - t0
    return BenchReport(combos, len(test), mse, estimates, failures, seed, runtime)


def quartiles(values):
    """Median and type-7 (linear interpolation) first and third quartiles."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise DomainError("no finite values to summarize")
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    return float(med), float(q1), float(q3)


def summarize(report):
    """One row per combo: label, median, Q1, Q3, successes and failures."""
    rows = []
    for c in report.combos:
        v = report.mse[c.label]
        ok = int(np.isfinite(v).sum())
        med, q1, q3 = quartiles(v) if ok else (np.nan, np.nan, np.nan)
        rows.append({"combo": c.label, "median": med, "q1": q1, "q3": q3, "n_ok": ok, "n_failed": len(v) - ok})
    return rows


def format_summary(rows):
    """Fixed-width text table of :func:`summarize` rows."""
    lines = [f"{'combo':<28} {'median':>12} {'q1':>12} {'q3':>12} {'ok':>4} {'fail':>4}"]
    for r in rows:
        lines.append(
            f"{r['combo']:<28} {r['median']:>12.5g} {r['q1']:>12.5g} {r['q3']:>12.5g} {r['n_ok']:>4d} {r['n_failed']:>4d}"
        )
    return "\n".join(lines) + "\n"


def ranking_holds(rows):
    """Whether output emulation beats loss emulation in median MSE for each matched pair.

    Returns a dict from ``interpolator-loss`` to a bool for every pair
    present in ``rows``.
    """
    med = {r["combo"]: r["median"] for r in rows}
    out = {}
    for i, l in itertools.product(INTERPOLATORS, LOSSES):
        a, b = f"output-{i}-{l}", f"loss-{i}-{l}"
        if a in med and b in med:
            out[f"{i}-{l}"] = bool(med[a] < med[b])
    return out
