"""Model specifications for the four target families, seeded synthetic-data
generation, prior builders, and plain-text model (de)serialization."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit, ndtr

from caviw.linmetric import SpdMatrix


@dataclass(frozen=True)
class RngStream:
    """Deterministic RNG handle: (seed, stream) fully determines the draws.

    A fresh generator is created per call, so sampling functions taking a
    stream are pure.  Distinct streams may be consumed concurrently; a
    single stream must not be shared across threads.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64) or not (0 <= self.stream < 2**64):
            raise ValueError("seed and stream must be unsigned 64-bit integers")

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        )


def _as_matrix(x, what):
    # copy before freezing so caller-owned arrays are never aliased
    x = np.array(x, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"{what} must be a 2-D array, got ndim={x.ndim}")
    return x


def _as_binary(y, n, what="y"):
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"{what} must have length {n}")
    vals = np.unique(y)
    if not np.all(np.isin(vals, (0, 1))):
        raise ValueError(f"{what} entries must be in {{0, 1}}")
    return y.astype(np.int64)


@dataclass(frozen=True)
class GaussianTarget:
    """Zero-mean Gaussian target split into two blocks of a joint precision."""

    q11: SpdMatrix
    q22: SpdMatrix
    q12: np.ndarray  # cross block, shape (dim_z, dim_beta)

    def __post_init__(self):
        q12 = _as_matrix(self.q12, "q12")
        q12.setflags(write=False)
        object.__setattr__(self, "q12", q12)
        if q12.shape != (self.q11.dim, self.q22.dim):
            raise ValueError(
                f"q12 shape {q12.shape} incompatible with blocks "
                f"({self.q11.dim}, {self.q22.dim})"
            )
        SpdMatrix(self.full_precision())  # joint precision must be PD

    @property
    def dim_z(self) -> int:
        return self.q11.dim

    @property
    def dim_beta(self) -> int:
        return self.q22.dim

    def full_precision(self) -> np.ndarray:
        return np.block([[self.q11.mat, self.q12], [self.q12.T, self.q22.mat]])


@dataclass(frozen=True)
class GmmModel:
    """Two-component symmetric-location mixture with a Gaussian mean prior.

    Observations follow p N(beta, tau^-1 I) + (1-p) N(-beta, tau^-1 I);
    the prior on beta is N(0, tau0^-1 I).
    """

    weight: float   # mixture weight p of the +beta component
    tau: float      # likelihood precision
    tau0: float     # prior precision
    data: np.ndarray  # n x d observation matrix

    def __post_init__(self):
        if not (0.0 < self.weight < 1.0):
            raise ValueError("weight must lie in (0, 1)")
        if self.tau <= 0.0 or self.tau0 <= 0.0:
            raise ValueError("tau and tau0 must be positive")
        data = _as_matrix(self.data, "data")
        if data.shape[0] < 1:
            raise ValueError("need at least one observation")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ProbitModel:
    """Binary regression with Gaussian-CDF link and Gaussian prior."""

    design: np.ndarray   # n x p
    response: np.ndarray  # length n, entries in {0, 1}
    prior_mean: np.ndarray
    prior_precision: SpdMatrix

    def __post_init__(self):
        x = _as_matrix(self.design, "design")
        x.setflags(write=False)
        object.__setattr__(self, "design", x)
        object.__setattr__(self, "response", _as_binary(self.response, x.shape[0]))
        m0 = np.array(self.prior_mean, dtype=float).reshape(-1)
        m0.setflags(write=False)
        object.__setattr__(self, "prior_mean", m0)
        if m0.shape[0] != x.shape[1] or self.prior_precision.dim != x.shape[1]:
            raise ValueError("prior dimensions must match the design columns")

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]


@dataclass(frozen=True)
class LogitModel:
    """Binary regression with logistic link and Gaussian prior."""

    design: np.ndarray
    response: np.ndarray
    prior_mean: np.ndarray
    prior_precision: SpdMatrix

    __post_init__ = ProbitModel.__post_init__

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]


@dataclass(frozen=True)
class PriorSpec:
    """Prior precision family: 'scaled' (p/c) I or 'gprior' X^T X / g + c I."""

    kind: str
    c: float
    g: float | None = None

    def __post_init__(self):
        if self.kind not in ("scaled", "gprior"):
            raise ValueError(f"unknown prior family {self.kind!r}")
        if self.kind == "gprior" and (self.g is None or self.g <= 0.0):
            raise ValueError("gprior requires g > 0")
        if self.kind == "scaled" and self.c <= 0.0:
            raise ValueError("scaled prior requires c > 0")
        if self.c < 0.0:
            raise ValueError("c must be nonnegative")

    def build(self, design=None, p=None) -> SpdMatrix:
        if self.kind == "scaled":
            if p is None:
                if design is None:
                    raise ValueError("scaled prior needs p or a design matrix")
                p = np.asarray(design).shape[1]
            return build_scaled_prior(p, self.c)
        if design is None:
            raise ValueError("gprior needs the design matrix")
        return build_g_prior(design, self.g, self.c)


def sample_gmm_data(n, d, beta0, tau, weight, rng: RngStream) -> np.ndarray:
    """Draw n rows from the two-component mixture centered at +-beta0.

    weight may be 1.0 (all rows from the +beta0 component), which is useful
    for moment checks; model construction still requires weight in (0, 1).
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    if not (0.0 < weight <= 1.0):
        raise ValueError("weight must lie in (0, 1]")
    beta0 = np.asarray(beta0, dtype=float).reshape(-1)
    if beta0.shape[0] != d:
        raise ValueError("beta0 must have length d")
    gen = rng.generator()
    # draw order fixed (uniforms, then normals) so the same stream gives
    # common random numbers across different beta0 / tau values
    signs = np.where(gen.random(n) < weight, 1.0, -1.0)
    noise = gen.standard_normal((n, d)) / np.sqrt(tau)
    return signs[:, None] * beta0 + noise


def sample_design(n, p, rng: RngStream) -> np.ndarray:
    """i.i.d. standard normal design matrix (mean 0, unit variance)."""
    if n < 1 or p < 1:
        raise ValueError("n and p must be positive")
    return rng.generator().standard_normal((n, p))


def sample_binary_responses(design, beta0, link, rng: RngStream) -> np.ndarray:
    """Bernoulli responses with success probability link(x_i . beta0).

    The uniforms are drawn before applying the link, so the same stream
    produces paired responses across links.
    """
    design = _as_matrix(design, "design")
    beta0 = np.asarray(beta0, dtype=float).reshape(-1)
    if beta0.shape[0] != design.shape[1]:
        raise ValueError("beta0 length must match design columns")
    eta = design @ beta0
    if link == "probit":
        probs = ndtr(eta)
    elif link == "logit":
        probs = expit(eta)
    else:
        raise ValueError(f"unknown link {link!r}")
    u = rng.generator().random(design.shape[0])
    return (u < probs).astype(np.int64)


def build_scaled_prior(p, c) -> SpdMatrix:
    """Prior precision (p/c) I."""
    if c <= 0.0:
        raise ValueError("c must be positive")
    if p < 1:
        raise ValueError("p must be positive")
    return SpdMatrix(np.eye(p) * (p / c))


def build_g_prior(design, g, c) -> SpdMatrix:
    """Prior precision X^T X / g + c I; must come out positive definite."""
    if g <= 0.0:
        raise ValueError("g must be positive")
    if c < 0.0:
        raise ValueError("c must be nonnegative")
    design = _as_matrix(design, "design")
    mat = design.T @ design / g + c * np.eye(design.shape[1])
    return SpdMatrix(mat)  # factorization certifies positive definiteness


# ---------------------------------------------------------------------------
# plain-text serialization: key=value lines plus [name] CSV blocks


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _write_block(lines, name, arr):
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    lines.append(f"[{name}]")
    for row in arr:
        lines.append(",".join(_fmt(v) for v in row))


def model_to_text(model) -> str:
    """Serialize a model to the key=value + CSV-block format."""
    lines = []
    if isinstance(model, GaussianTarget):
        lines.append("family=gaussian")
        _write_block(lines, "Q11", model.q11.mat)
        _write_block(lines, "Q12", model.q12)
        _write_block(lines, "Q22", model.q22.mat)
    elif isinstance(model, GmmModel):
        lines.append("family=gmm")
        lines.append(f"weight={_fmt(model.weight)}")
        lines.append(f"tau={_fmt(model.tau)}")
        lines.append(f"tau0={_fmt(model.tau0)}")
        _write_block(lines, "Y", model.data)
    elif isinstance(model, (ProbitModel, LogitModel)):
        lines.append(f"family={'probit' if isinstance(model, ProbitModel) else 'logit'}")
        _write_block(lines, "X", model.design)
        _write_block(lines, "y", model.response)
        _write_block(lines, "m0", model.prior_mean)
        _write_block(lines, "Q0", model.prior_precision.mat)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return "\n".join(lines) + "\n"


def model_from_text(text: str):
    """Parse a model serialized by model_to_text."""
    keys: dict[str, str] = {}
    blocks: dict[str, list[list[float]]] = {}
    current = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            blocks[current] = []
        elif current is not None:
            blocks[current].append([float(v) for v in line.split(",")])
        elif "=" in line:
            key, _, value = line.partition("=")
            keys[key.strip()] = value.strip()
        else:
            raise ValueError(f"unparseable line: {raw!r}")
    family = keys.get("family")
    mats = {name: np.array(rows, dtype=float) for name, rows in blocks.items()}
    if family == "gaussian":
        return GaussianTarget(SpdMatrix(mats["Q11"]), SpdMatrix(mats["Q22"]), mats["Q12"])
    if family == "gmm":
        return GmmModel(
            weight=float(keys["weight"]),
            tau=float(keys["tau"]),
            tau0=float(keys["tau0"]),
            data=mats["Y"],
        )
    if family in ("probit", "logit"):
        cls = ProbitModel if family == "probit" else LogitModel
        return cls(
            design=mats["X"],
            response=mats["y"].reshape(-1).astype(np.int64),
            prior_mean=mats["m0"].reshape(-1),
            prior_precision=SpdMatrix(mats["Q0"]),
        )
    raise ValueError(f"unknown or missing family {family!r}")


def save_model(model, path):
    Path(path).write_text(model_to_text(model), encoding="utf-8")


def load_model(path):
    return model_from_text(Path(path).read_text(encoding="utf-8"))
