"""Ensembles of independent chains and single-chain time averages.

Randomness is organised as counter-based Philox streams keyed by
(master_seed, substream, chain_index), so every chain owns a reproducible,
collision-free stream regardless of how chains are scheduled onto threads.
All reductions over chains run in chain-index order, which makes results
byte-identical across thread counts.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import EscapedEnsembleError, InvalidInputError
from .observables import Observable
from .potentials import Potential, State, hamiltonian
from .scheme import (
    DEFAULT_ESCAPE_ENERGY,
    SchemeParams,
    noise_coefficient,
    threshold,
)

_MAX_SUBSTREAM = 1 << 16
_MAX_CHAIN = 1 << 48
# cap on pre-drawn normals per kernel call (floats)
_SEGMENT_BUDGET = 1 << 22


def _philox_key(master_seed: int, chain_index: int, substream: int) -> np.ndarray:
    if not 0 <= chain_index < _MAX_CHAIN:
        raise InvalidInputError("chain index out of range")
    if not 0 <= substream < _MAX_SUBSTREAM:
        raise InvalidInputError("substream index out of range")
    word = (substream << 48) | chain_index
    return np.array([master_seed & 0xFFFFFFFFFFFFFFFF, word], dtype=np.uint64)


def derive_stream(master_seed: int, chain_index: int, substream: int = 0) -> np.random.Generator:
    """Independent, reproducible stream for one chain of one experiment."""
    return np.random.Generator(np.random.Philox(key=_philox_key(master_seed, chain_index, substream)))


class StreamPool:
    """Reuses one Philox generator by resetting its counter state per chain.

    Produces draw sequences identical to :func:`derive_stream` while avoiding
    the construction cost of a fresh generator for every chain. One pool per
    worker thread; the returned generator is only valid until the next call.
    """

    def __init__(self, master_seed: int, substream: int = 0):
        self._seed = master_seed
        self._sub = substream
        self._bg = np.random.Philox(key=np.array([0, 0], dtype=np.uint64))
        self._gen = np.random.Generator(self._bg)
        self._state = self._bg.state
        self._buffer_len = len(self._state["buffer"])

    def generator_for(self, chain_index: int) -> np.random.Generator:
        st = self._state
        st["state"]["key"] = _philox_key(self._seed, chain_index, self._sub)
        st["state"]["counter"] = np.zeros(4, dtype=np.uint64)
        st["buffer_pos"] = self._buffer_len
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self._bg.state = st
        return self._gen


@dataclass(frozen=True)
class CloudInit:
    """Gaussian cloud around a centre state; consumes 2d draws per chain."""

    center: State
    sigma: float = 0.1


@dataclass
class RunSpec:
    """Shape of an ensemble / time-average run."""

    n_chains: int
    n_steps: int
    master_seed: int
    init: State | CloudInit
    burn_in: int | None = None
    record_stride: int = 1
    threads: int = 1
    substream: int = 0
    escape_energy: float = DEFAULT_ESCAPE_ENERGY

    def __post_init__(self):
        if self.n_chains < 1:
            raise InvalidInputError("n_chains must be >= 1")
        if self.n_steps < 0:
            raise InvalidInputError("n_steps must be >= 0")
        if self.record_stride < 1:
            raise InvalidInputError("record_stride must be >= 1")
        if self.threads < 1:
            raise InvalidInputError("threads must be >= 1")
        bi = self.n_steps // 10 if self.burn_in is None else self.burn_in
        if not 0 <= bi <= self.n_steps:
            raise InvalidInputError("need 0 <= burn_in <= n_steps")
        if self.n_steps > 0 and bi >= self.n_steps:
            raise InvalidInputError("burn_in must leave at least one step")
        self.burn_in = bi


@dataclass
class ObservableStats:
    mean: float
    variance: float
    ci_halfwidth: float
    n_effective: int


@dataclass
class EnsembleResult:
    stats: dict[str, ObservableStats]
    escape_count: int
    rejection_rate: float
    n_chains: int
    n_steps: int
    max_h: float
    # recording (only filled when requested): global step ids plus per-chain
    # state arrays trimmed to the rows actually produced before any escape
    record_steps: np.ndarray | None = None
    records_x: list[np.ndarray] | None = None
    records_y: list[np.ndarray] | None = None
    max_u_per_chain: np.ndarray | None = None
    escape_steps: np.ndarray | None = None


def _chain_init(spec: RunSpec, gen, dim: int):
    if isinstance(spec.init, CloudInit):
        c = spec.init.center
        x = c.x + spec.init.sigma * gen.standard_normal(dim)
        y = c.y + spec.init.sigma * gen.standard_normal(dim)
        return x, y
    return spec.init.x.copy(), spec.init.y.copy()


def _segments(n_steps: int, dim: int, checkpoints=None):
    """Split [0, n_steps) into kernel segments, breaking at checkpoints."""
    max_len = max(1, _SEGMENT_BUDGET // max(dim, 1))
    marks = sorted({0, n_steps, *(checkpoints or [])})
    out = []
    for a, b in zip(marks[:-1], marks[1:]):
        start = a
        while start < b:
            end = min(start + max_len, b)
            out.append((start, end))
            start = end
    return out


def _current_h(potential: Potential, x, y) -> float:
    u = float(kernels.energy_point(potential.kind_code, potential.kernel_params, x))
    return u + 0.5 * float(np.sum(y * y))


def _advance_python(x, y, g, params, thr, stopped, escape_energy, potential,
                    out_h, rec, rec_stride, rec_count, step0):
    """Per-step fallback mirroring the compiled kernel for composite potentials."""
    d = x.shape[0]
    sq = noise_coefficient(params)
    u_cur = potential.energy(x)
    h_cur = u_cur + 0.5 * float(np.sum(y * y))
    max_h, max_u = h_cur, u_cur
    rejections = 0
    for s in range(g.shape[0]):
        grad = potential.gradient(x)
        yp = y - params.delta * grad - params.delta * params.gamma * y + sq * g[s]
        xp = x + params.delta * yp
        u_prop = potential.energy(xp)
        h_prop = u_prop + 0.5 * float(np.sum(yp * yp))
        if stopped:
            if h_prop <= thr:
                x[:], y[:] = xp, yp
                u_cur, h_cur = u_prop, h_prop
            else:
                rejections += 1
        else:
            ok = u_prop <= escape_energy and np.all(np.isfinite(xp)) and np.all(np.isfinite(yp))
            if not ok:
                return rejections, step0 + s, max_h, max_u, rec_count
            x[:], y[:] = xp, yp
            u_cur, h_cur = u_prop, h_prop
        max_h = max(max_h, h_cur)
        max_u = max(max_u, u_cur)
        if out_h is not None and out_h.shape[0] > 0:
            out_h[s] = h_cur
        if rec is not None and rec.shape[0] > 0 and (step0 + s + 1) % rec_stride == 0:
            rec[rec_count, :d] = x
            rec[rec_count, d:] = y
            rec_count += 1
    return rejections, kernels.NO_ESCAPE, max_h, max_u, rec_count


def _drive_chain(gen, x, y, n_steps, potential, params, stopped, escape_energy,
                 rec=None, rec_stride=1, checkpoints=None, checkpoint_h=None):
    """Run one chain for n_steps, drawing normals from ``gen`` segment-wise.

    Fills ``checkpoint_h[k]`` with H at step ``checkpoints[k]`` (a sorted
    array). Returns (rejections, escape_step, max_h, max_u, rec_count).
    """
    d = x.shape[0]
    thr = threshold(params)
    compiled = potential.kind_code is not None
    empty_h = kernels.empty_h()
    empty_rec = kernels.empty_rec()
    rec_arr = rec if rec is not None else empty_rec
    rejections = 0
    escape_step = kernels.NO_ESCAPE
    max_h = -math.inf
    max_u = -math.inf
    rec_count = 0
    cp = list(checkpoints) if checkpoints is not None else []
    if checkpoint_h is not None and cp and cp[0] == 0:
        checkpoint_h[0] = _current_h(potential, x, y) if compiled else (
            potential.energy(x) + 0.5 * float(np.sum(y * y)))
    done = 0
    for start, end in _segments(n_steps, d, cp):
        if escape_step == kernels.NO_ESCAPE:
            g = gen.standard_normal((end - start, d))
            if compiled:
                r, esc, mh, mu, rec_count = kernels.advance_chain(
                    x, y, g, params.delta, params.gamma, params.beta, thr,
                    stopped, escape_energy, potential.kind_code,
                    potential.kernel_params, empty_h, rec_arr, rec_stride,
                    rec_count, start,
                )
            else:
                r, esc, mh, mu, rec_count = _advance_python(
                    x, y, g, params, thr, stopped, escape_energy, potential,
                    None, rec_arr, rec_stride, rec_count, start,
                )
            rejections += r
            max_h = max(max_h, mh)
            max_u = max(max_u, mu)
            if esc != kernels.NO_ESCAPE:
                escape_step = esc
        done = end
        if checkpoint_h is not None and done in cp and done > 0:
            k = cp.index(done)
            if escape_step != kernels.NO_ESCAPE:
                checkpoint_h[k] = math.inf
            elif compiled:
                checkpoint_h[k] = _current_h(potential, x, y)
            else:
                checkpoint_h[k] = potential.energy(x) + 0.5 * float(np.sum(y * y))
    if n_steps == 0:
        u0 = potential.energy(x)
        max_u = u0
        max_h = u0 + 0.5 * float(np.sum(y * y))
    return rejections, escape_step, max_h, max_u, rec_count


def _warn_if_outside(spec: RunSpec, potential: Potential, params: SchemeParams):
    init_state = spec.init.center if isinstance(spec.init, CloudInit) else spec.init
    h0 = hamiltonian(potential, init_state)
    if h0 > threshold(params):
        warnings.warn(
            f"initial energy {h0:.4g} exceeds the acceptance ceiling "
            f"{threshold(params):.4g}; drift guarantees only cover states below it",
            stacklevel=3,
        )


def _run_all_chains(spec: RunSpec, potential: Potential, params: SchemeParams,
                    stopped: bool, record: bool, checkpoints=None):
    d = potential.dim
    n = spec.n_chains
    X = np.empty((n, d))
    Y = np.empty((n, d))
    rej = np.zeros(n, dtype=np.int64)
    esc = np.full(n, kernels.NO_ESCAPE, dtype=np.int64)
    maxh = np.empty(n)
    maxu = np.empty(n)
    rec_counts = np.zeros(n, dtype=np.int64)
    n_rec = spec.n_steps // spec.record_stride if record else 0
    recs = np.zeros((n, n_rec, 2 * d)) if record else None
    cph = np.empty((n, len(checkpoints))) if checkpoints is not None else None

    def worker(lo, hi):
        pool = StreamPool(spec.master_seed, spec.substream)
        for c in range(lo, hi):
            gen = pool.generator_for(c)
            x, y = _chain_init(spec, gen, d)
            rec = recs[c] if record else None
            ch = cph[c] if cph is not None else None
            r, e, mh, mu, rc = _drive_chain(
                gen, x, y, spec.n_steps, potential, params, stopped,
                spec.escape_energy, rec=rec, rec_stride=spec.record_stride,
                checkpoints=checkpoints, checkpoint_h=ch,
            )
            X[c], Y[c] = x, y
            rej[c], esc[c], maxh[c], maxu[c], rec_counts[c] = r, e, mh, mu, rc

    if spec.threads == 1 or n == 1:
        worker(0, n)
    else:
        block = max(1, math.ceil(n / (spec.threads * 4)))
        bounds = [(lo, min(lo + block, n)) for lo in range(0, n, block)]
        with ThreadPoolExecutor(max_workers=spec.threads) as ex:
            list(ex.map(lambda ab: worker(*ab), bounds))
    return X, Y, rej, esc, maxh, maxu, rec_counts, recs, cph


def run_ensemble(
    spec: RunSpec,
    potential: Potential,
    params: SchemeParams,
    observables: list[Observable],
    scheme: str = "stopped",
    record: bool = False,
) -> EnsembleResult:
    """Evolve independent chains and aggregate observables at their final states.

    With the plain scheme, chains that escape the domain keep their last valid
    state and are excluded from observable statistics; if every chain escapes
    an EscapedEnsembleError is raised carrying the escape statistics.
    """
    if scheme not in ("stopped", "unstopped"):
        raise InvalidInputError(f"unknown scheme kind: {scheme!r}")
    stopped = scheme == "stopped"
    if stopped:
        _warn_if_outside(spec, potential, params)

    X, Y, rej, esc, maxh, maxu, rec_counts, recs, _ = _run_all_chains(
        spec, potential, params, stopped, record
    )
    alive = esc == kernels.NO_ESCAPE
    escape_count = int(np.count_nonzero(~alive))
    if escape_count == spec.n_chains:
        raise EscapedEnsembleError(escape_count, spec.n_chains, int(esc.min()))

    steps_taken = np.where(alive, spec.n_steps, esc)
    total_steps = int(np.sum(steps_taken))
    rejection_rate = float(np.sum(rej) / total_steps) if total_steps > 0 else 0.0

    stats = {}
    n_eff = int(np.count_nonzero(alive))
    for obs in observables:
        vals = obs.evaluate_many(X[alive], Y[alive])
        if n_eff > 1 and np.ptp(vals) != 0.0:
            mean = float(np.mean(vals))
            var = float(np.var(vals, ddof=1))
            ci = 1.96 * math.sqrt(var / n_eff)
        else:  # constant observable: exactly zero spread
            mean = float(vals[0])
            var = 0.0
            ci = 0.0
        stats[obs.name] = ObservableStats(mean, var, ci, n_eff)

    result = EnsembleResult(
        stats=stats,
        escape_count=escape_count,
        rejection_rate=rejection_rate,
        n_chains=spec.n_chains,
        n_steps=spec.n_steps,
        max_h=float(np.max(maxh)),
        max_u_per_chain=maxu,
        escape_steps=esc,
    )
    if record:
        result.record_steps = np.arange(
            spec.record_stride, spec.n_steps + 1, spec.record_stride, dtype=np.int64
        )
        d = potential.dim
        result.records_x = [recs[c, : rec_counts[c], :d] for c in range(spec.n_chains)]
        result.records_y = [recs[c, : rec_counts[c], d:] for c in range(spec.n_chains)]
    return result


def ergodic_average(
    spec: RunSpec,
    potential: Potential,
    params: SchemeParams,
    observable: Observable,
    scheme: str = "stopped",
) -> tuple[float, float]:
    """Time average of an observable along one chain, post burn-in.

    The confidence half-width comes from batch means with ~sqrt(n) batches,
    which absorbs the serial correlation of the chain.
    """
    if spec.n_chains != 1:
        raise InvalidInputError("ergodic averages use a single chain (n_chains = 1)")
    if spec.n_steps <= spec.burn_in:
        raise InvalidInputError("need n_steps > burn_in")
    stopped = scheme == "stopped"
    if stopped:
        _warn_if_outside(spec, potential, params)

    d = potential.dim
    pool = StreamPool(spec.master_seed, spec.substream)
    gen = pool.generator_for(0)
    x, y = _chain_init(spec, gen, d)

    n_kept = spec.n_steps - spec.burn_in
    n_batches = max(1, int(math.isqrt(n_kept)))
    batch_len = n_kept // n_batches
    used = n_batches * batch_len
    batch_sums = np.zeros(n_batches)
    total = 0.0
    kept_seen = 0

    thr = threshold(params)
    compiled = potential.kind_code is not None
    rec_buf = None
    for start, end in _segments(spec.n_steps, d, [spec.burn_in]):
        k = end - start
        g = gen.standard_normal((k, d))
        want_states = end > spec.burn_in
        if want_states:
            if rec_buf is None or rec_buf.shape[0] < k:
                rec_buf = np.empty((k, 2 * d))
            rec = rec_buf[:k]
        else:
            rec = kernels.empty_rec()
        if compiled:
            r, esc, mh, mu, rc = kernels.advance_chain(
                x, y, g, params.delta, params.gamma, params.beta, thr,
                stopped, spec.escape_energy, potential.kind_code,
                potential.kernel_params, kernels.empty_h(), rec, 1, 0, 0,
            )
        else:
            r, esc, mh, mu, rc = _advance_python(
                x, y, g, params, thr, stopped, spec.escape_energy, potential,
                None, rec, 1, 0, 0,
            )
        if esc != kernels.NO_ESCAPE:
            raise EscapedEnsembleError(1, 1, start + int(esc))
        if want_states:
            lo = max(0, spec.burn_in - start)
            states = rec[lo:k]
            vals = observable.evaluate_many(states[:, :d], states[:, d:])
            total += float(np.sum(vals))
            idx = kept_seen + np.arange(vals.shape[0])
            in_batches = idx < used
            if np.any(in_batches):
                np.add.at(batch_sums, idx[in_batches] // batch_len, vals[in_batches])
            kept_seen += vals.shape[0]

    mean = total / n_kept
    bm = batch_sums / batch_len
    if n_batches > 1 and np.ptp(bm) != 0.0:
        ci = 1.96 * float(np.std(bm, ddof=1)) / math.sqrt(n_batches)
    else:
        ci = 0.0
        if np.ptp(bm) == 0.0 and n_kept > 0:
            mean = float(bm[0])  # constant observable: keep the value exact
    return mean, ci


@dataclass
class ExpMomentCurve:
    """Cross-chain averages of exp(b H) at chosen step checkpoints."""

    b: float
    steps: np.ndarray
    mean: np.ndarray
    ci: np.ndarray
    n_chains: int


def exp_moment(
    spec: RunSpec,
    potential: Potential,
    params: SchemeParams,
    b: float,
    scheme: str = "stopped",
    n_checkpoints: int = 25,
) -> ExpMomentCurve:
    """Track E[exp(b H)] over log-spaced checkpoints to probe boundedness."""
    if not 0 < b < params.beta:
        raise InvalidInputError("exponential-moment exponent must satisfy 0 < b < beta")
    if spec.n_steps == 0:
        checkpoints = [0]
    else:
        pts = np.unique(
            np.round(np.geomspace(1, spec.n_steps, n_checkpoints)).astype(np.int64)
        )
        checkpoints = [0] + [int(p) for p in pts]
    stopped = scheme == "stopped"
    if stopped:
        _warn_if_outside(spec, potential, params)
    _, _, _, _, _, _, _, _, cph = _run_all_chains(
        spec, potential, params, stopped, record=False, checkpoints=checkpoints
    )
    with np.errstate(over="ignore"):
        vals = np.exp(b * cph)  # (n_chains, n_checkpoints); inf past an escape
    mean = np.mean(vals, axis=0)
    if spec.n_chains > 1:
        ci = 1.96 * np.std(vals, axis=0, ddof=1) / math.sqrt(spec.n_chains)
    else:
        ci = np.zeros_like(mean)
    return ExpMomentCurve(
        b=b,
        steps=np.asarray(checkpoints, dtype=np.int64),
        mean=mean,
        ci=ci,
        n_chains=spec.n_chains,
    )


def log_trend(curve: ExpMomentCurve, min_step_fraction: float = 0.1) -> tuple[float, float]:
    """OLS slope (and its standard error) of log mean vs step number.

    Checkpoints earlier than ``min_step_fraction`` of the horizon are dropped
    so the equilibration transient does not masquerade as a trend.
    """
    cutoff = min_step_fraction * float(curve.steps.max())
    keep = curve.steps >= max(1.0, cutoff)
    t = curve.steps[keep].astype(np.float64)
    z = np.log(curve.mean[keep])
    if t.shape[0] < 3:
        raise InvalidInputError("need at least 3 checkpoints past the transient")
    A = np.column_stack([t, np.ones_like(t)])
    coef, res, *_ = np.linalg.lstsq(A, z, rcond=None)
    dof = t.shape[0] - 2
    resid = z - A @ coef
    s2 = float(resid @ resid) / max(dof, 1)
    cov = s2 * np.linalg.inv(A.T @ A)
    return float(coef[0]), float(math.sqrt(cov[0, 0]))


def tail_probability(
    spec: RunSpec,
    potential: Potential,
    params: SchemeParams,
    a: float,
    scheme: str = "stopped",
) -> tuple[float, float]:
    """Empirical P(H >= a) at the final step across chains, with binomial CI."""
    if a < 0:
        raise InvalidInputError("tail level must be >= 0")
    stopped = scheme == "stopped"
    if stopped:
        _warn_if_outside(spec, potential, params)
    X, Y, _, esc, _, _, _, _, _ = _run_all_chains(
        spec, potential, params, stopped, record=False
    )
    alive = esc == kernels.NO_ESCAPE
    n_eff = int(np.count_nonzero(alive))
    if n_eff == 0:
        raise EscapedEnsembleError(spec.n_chains, spec.n_chains, int(esc.min()))
    h = potential.energy_many(X[alive]) + 0.5 * np.sum(Y[alive] * Y[alive], axis=-1)
    p = float(np.count_nonzero(h >= a) / n_eff)
    ci = 1.96 * math.sqrt(p * (1.0 - p) / n_eff)
    return p, ci
