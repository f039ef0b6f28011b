"""Discrete SCM lab for checking the front-door estimator against exact enumeration.

The graph is fixed: U -> X, U -> Y, X -> M, M -> Y. Values are integer
indices into each variable's domain.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import StratumError, ValidationError


@dataclass(frozen=True)
class DiscreteScm:
    p_u: np.ndarray  # (|U|,)
    p_x_given_u: np.ndarray  # (|U|, |X|)
    p_m_given_x: np.ndarray  # (|X|, |M|)
    p_y_given_m_u: np.ndarray  # (|M|, |U|, |Y|)
    name: str = "scm"

    def __post_init__(self):
        for attr in ("p_u", "p_x_given_u", "p_m_given_x", "p_y_given_m_u"):
            table = np.asarray(getattr(self, attr), dtype=np.float64)
            object.__setattr__(self, attr, table)
            if np.any(table < 0):
                raise ValidationError(attr, "negative probability")
            if not np.allclose(table.sum(axis=-1), 1.0, rtol=0, atol=1e-12):
                raise ValidationError(attr, "rows must sum to 1")
        nu, nx, nm = len(self.p_u), self.p_x_given_u.shape[1], self.p_m_given_x.shape[1]
        if self.p_x_given_u.shape[0] != nu:
            raise ValidationError("p_x_given_u", f"expected {nu} rows")
        if self.p_m_given_x.shape[0] != nx:
            raise ValidationError("p_m_given_x", f"expected {nx} rows")
        if self.p_y_given_m_u.shape[:2] != (nm, nu):
            raise ValidationError("p_y_given_m_u", f"expected shape ({nm}, {nu}, |Y|)")

    @property
    def sizes(self) -> dict[str, int]:
        return {
            "U": len(self.p_u),
            "X": self.p_x_given_u.shape[1],
            "M": self.p_m_given_x.shape[1],
            "Y": self.p_y_given_m_u.shape[2],
        }


@dataclass(frozen=True)
class SampleSet:
    x: np.ndarray
    m: np.ndarray
    y: np.ndarray
    sizes: dict

    @property
    def count(self) -> int:
        return len(self.x)


def scm_a() -> DiscreteScm:
    """Binary SCM with strong confounding and strong mediation."""

    def p_y1(m, u):
        return 0.1 + 0.3 * m + 0.5 * u - 0.2 * m * u

    return DiscreteScm(
        p_u=np.array([0.5, 0.5]),
        p_x_given_u=np.array([[0.8, 0.2], [0.2, 0.8]]),
        p_m_given_x=np.array([[0.9, 0.1], [0.1, 0.9]]),
        p_y_given_m_u=np.array([[[1 - p_y1(m, u), p_y1(m, u)] for u in (0, 1)] for m in (0, 1)]),
        name="scm-A",
    )


def enumerate_interventional(scm: DiscreteScm, x: int) -> np.ndarray:
    """Exact P(Y | do(X=x)) = sum_u p(u) sum_m p(m|x) p(y|m,u)."""
    if not 0 <= x < scm.sizes["X"]:
        raise ValidationError("x", f"{x} outside domain of size {scm.sizes['X']}")
    return np.einsum("u,m,muy->y", scm.p_u, scm.p_m_given_x[x], scm.p_y_given_m_u)


def observational_conditional(scm: DiscreteScm, x: int) -> np.ndarray:
    """Exact P(Y | X=x) from the joint, for comparison with the naive estimate."""
    joint_u = scm.p_u * scm.p_x_given_u[:, x]
    post_u = joint_u / joint_u.sum()
    return np.einsum("u,m,muy->y", post_u, scm.p_m_given_x[x], scm.p_y_given_m_u)


def _draw(rng: np.random.Generator, rows: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(rows, axis=1)
    u = rng.random(len(rows))[:, None]
    return np.minimum((u >= cdf).sum(axis=1), rows.shape[1] - 1)


def sample(scm: DiscreteScm, count: int, seed: int) -> SampleSet:
    """Ancestral sampling; U is drawn and then discarded."""
    if count < 1:
        raise ValidationError("count", "must be >= 1")
    rng = np.random.default_rng(seed)
    u = _draw(rng, np.broadcast_to(scm.p_u, (count, len(scm.p_u))))
    x = _draw(rng, scm.p_x_given_u[u])
    m = _draw(rng, scm.p_m_given_x[x])
    y = _draw(rng, scm.p_y_given_m_u[m, u])
    return SampleSet(x, m, y, scm.sizes)


def naive_estimate(samples: SampleSet, x: int) -> np.ndarray:
    """Empirical P(Y | X=x)."""
    mask = samples.x == x
    if not mask.any():
        raise StratumError([("x", x)])
    return np.bincount(samples.y[mask], minlength=samples.sizes["Y"]) / mask.sum()


def frontdoor_estimate(samples: SampleSet, x: int) -> np.ndarray:
    """Plug-in sum_m P(m|x) sum_x' P(x') P(Y|m,x')."""
    nx, nm, ny = samples.sizes["X"], samples.sizes["M"], samples.sizes["Y"]
    counts = np.zeros((nx, nm, ny))
    np.add.at(counts, (samples.x, samples.m, samples.y), 1)
    n_xm = counts.sum(axis=2)
    n_x = n_xm.sum(axis=1)
    if n_x[x] == 0:
        raise StratumError([("x", x)])
    p_m_given_x = n_xm[x] / n_x[x]
    p_x = n_x / samples.count

    needed = [(m, xp) for m in range(nm) if p_m_given_x[m] > 0 for xp in range(nx) if p_x[xp] > 0]
    missing = [(m, xp) for m, xp in needed if n_xm[xp, m] == 0]
    if missing:
        raise StratumError(missing)

    out = np.zeros(ny)
    for m in range(nm):
        if p_m_given_x[m] == 0:
            continue
        inner = np.zeros(ny)
        for xp in range(nx):
            if p_x[xp] > 0:
                inner += p_x[xp] * counts[xp, m] / n_xm[xp, m]
        out += p_m_given_x[m] * inner
    return out


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


# ---------------------------------------------------------------- SCM files


def load_scm(path: str | Path) -> DiscreteScm:
    """Read an SCM table file.

    Format: ``name: value...`` headers followed by rows of numbers::

        p_u: 0.5 0.5
        p_x_given_u:      # one row per u
          0.8 0.2
          0.2 0.8
        p_m_given_x:      # one row per x
          0.9 0.1
          0.1 0.9
        p_y_given_m_u:    # one row per (m, u), m major
          0.9 0.1
          0.4 0.6
          0.6 0.4
          0.3 0.7

    ``#`` starts a comment. The literal name ``scm-A`` loads the built-in model.
    """
    if str(path) == "scm-A":
        return scm_a()
    path = Path(path)
    tables: dict[str, list[list[float]]] = {}
    current = None
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" in line:
            name, rest = (s.strip() for s in line.split(":", 1))
            if name not in ("p_u", "p_x_given_u", "p_m_given_x", "p_y_given_m_u"):
                raise ValidationError(f"line {lineno}", f"unknown table {name!r}")
            current = tables.setdefault(name, [])
            line = rest
            if not line:
                continue
        if current is None:
            raise ValidationError(f"line {lineno}", "numbers before any table header")
        try:
            current.append([float(v) for v in line.split()])
        except ValueError:
            raise ValidationError(f"line {lineno}", f"not a row of numbers: {raw!r}") from None

    missing = {"p_u", "p_x_given_u", "p_m_given_x", "p_y_given_m_u"} - set(tables)
    if missing:
        raise ValidationError("scm", f"missing tables {sorted(missing)}")
    p_u = np.asarray(tables["p_u"][0])
    p_x_u = np.asarray(tables["p_x_given_u"])
    p_m_x = np.asarray(tables["p_m_given_x"])
    rows = np.asarray(tables["p_y_given_m_u"])
    nm, nu = p_m_x.shape[1], len(p_u)
    if rows.shape[0] != nm * nu:
        raise ValidationError("p_y_given_m_u", f"expected {nm * nu} rows, got {rows.shape[0]}")
    return DiscreteScm(p_u, p_x_u, p_m_x, rows.reshape(nm, nu, -1), name=path.stem)


def dump_scm(scm: DiscreteScm) -> str:
    def fmt(row):
        return " ".join(repr(float(v)) for v in row)

    lines = [f"p_u: {fmt(scm.p_u)}", "p_x_given_u:"]
    lines += [f"  {fmt(r)}" for r in scm.p_x_given_u]
    lines.append("p_m_given_x:")
    lines += [f"  {fmt(r)}" for r in scm.p_m_given_x]
    lines.append("p_y_given_m_u:")
    lines += [f"  {fmt(r)}" for r in scm.p_y_given_m_u.reshape(-1, scm.sizes["Y"])]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- verification runs


@dataclass(frozen=True)
class VerifyRow:
    seed: int
    x: int
    oracle: tuple[float, ...]
    naive: tuple[float, ...]
    frontdoor: tuple[float, ...]
    tv_naive: float
    tv_frontdoor: float


def verify(scm: DiscreteScm, samples: int, seeds: int, base_seed: int = 0) -> list[VerifyRow]:
    rows = []
    for s in range(seeds):
        seed = base_seed + s
        data = sample(scm, samples, seed)
        for x in range(scm.sizes["X"]):
            oracle = enumerate_interventional(scm, x)
            naive = naive_estimate(data, x)
            fd = frontdoor_estimate(data, x)
            rows.append(VerifyRow(
                seed, x, tuple(oracle.tolist()), tuple(naive.tolist()), tuple(fd.tolist()),
                total_variation(naive, oracle), total_variation(fd, oracle),
            ))
    return rows


def write_report(rows: list[VerifyRow], path: str | Path) -> None:
    def vec(v):
        return " ".join(f"{p:.6f}" for p in v)

    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("seed\tx\toracle\tnaive\tfrontdoor\ttv_naive\ttv_frontdoor\n")
        for r in rows:
            fh.write(f"{r.seed}\t{r.x}\t{vec(r.oracle)}\t{vec(r.naive)}\t{vec(r.frontdoor)}\t{r.tv_naive:.6f}\t{r.tv_frontdoor:.6f}\n")
