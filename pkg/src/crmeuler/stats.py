"""Monte Carlo reports and reproducible reductions."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

Z_MAX = 4.0


def pairwise_sum(x):
    """Fixed-tree pairwise sum along axis 0 (order independent of chunking)."""
    x = np.asarray(x)
    n = x.shape[0]
    if n <= 8:
        return x.sum(axis=0)
    h = n // 2
    return pairwise_sum(x[:h]) + pairwise_sum(x[h:])


def mean_and_stderr(values):
    """Mean and standard error of a 1-D real or complex array.

    The standard error is the sample standard deviation over sqrt(N), with the
    variance accumulated about the mean (two-pass, numerically stable).
    For complex input the error combines both components.
    """
    v = np.asarray(values)
    n = v.shape[0]
    if n < 2:
        raise ValueError("need at least two values")
    mean = pairwise_sum(v) / n
    dev = v - mean
    var = float(np.real(pairwise_sum(dev * np.conj(dev)))) / (n - 1)
    return mean, math.sqrt(var / n)


def component_stderr(values):
    v = np.asarray(values)
    n = v.shape[0]
    re = float(np.std(v.real, ddof=1)) / math.sqrt(n)
    im = float(np.std(v.imag, ddof=1)) / math.sqrt(n) if np.iscomplexobj(v) else 0.0
    return re, im


@dataclass
class MCReport:
    """Monte Carlo estimate of a quantity whose exact value is zero."""

    estimate: complex
    stderr: float
    N: int
    z_score: float
    verdict: str
    seed: int | None = None
    workers: int = 1
    z_max: float = Z_MAX
    stderr_re: float = 0.0
    stderr_im: float = 0.0
    z_re: float = 0.0
    z_im: float = 0.0
    reruns: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    @classmethod
    def from_values(cls, values, z_max=Z_MAX, seed=None, workers=1, n_samples=None, **extra):
        values = np.asarray(values)
        est, se = mean_and_stderr(values)
        se_re, se_im = component_stderr(values)
        est = complex(est)
        z = abs(est) / se if se > 0 else (0.0 if est == 0 else math.inf)
        z_re = est.real / se_re if se_re > 0 else 0.0
        z_im = est.imag / se_im if se_im > 0 else 0.0
        return cls(
            estimate=est,
            stderr=se,
            N=int(n_samples if n_samples is not None else len(values)),
            z_score=z,
            verdict="pass" if abs(est) <= z_max * se or est == 0 else "fail",
            seed=seed,
            workers=workers,
            z_max=z_max,
            stderr_re=se_re,
            stderr_im=se_im,
            z_re=z_re,
            z_im=z_im,
            extra=dict(extra),
        )

    def to_json(self):
        # the worker count is provenance, not a result: it goes to the sidecar file
        d = asdict(self)
        d.pop("workers")
        d["estimate"] = {"re": self.estimate.real, "im": self.estimate.imag}
        return d
