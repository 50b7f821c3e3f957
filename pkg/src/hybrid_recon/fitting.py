"""Three-parameter IR Look-Locker model, T1 maps and curve-fitting networks.

Signal model: ``S(t) = A - B exp(-t / T1*)``; T1 follows as ``(B/A - 1) T1*``.
Curves are real; complex series are first phase-referenced with
:func:`signed_curves`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .diffcore import Adam, MlpNetwork, Tape, Tensor, ops

T1_STAR_STARTS = (300.0, 1000.0, 2500.0)
T1_STAR_UNIT = 1000.0  # ms; internal scale of T1* for the fitter and the networks


@dataclass(frozen=True)
class ModelParams:
    A: np.ndarray
    B: np.ndarray
    t1_star: np.ndarray
    valid: np.ndarray | None = None

    def stack(self) -> np.ndarray:
        return np.stack([self.A, self.B, self.t1_star], axis=-1)


@dataclass(frozen=True)
class T1Map:
    t1: np.ndarray
    valid: np.ndarray


def signal_model(A, B, t1_star, t) -> np.ndarray:
    """``A - B exp(-t/T1*)`` broadcast over parameters (leading) and times (last axis)."""
    A, B, t1_star = (np.asarray(v, dtype=np.float64)[..., None] for v in (A, B, t1_star))
    return A - B * np.exp(-np.asarray(t, dtype=np.float64) / t1_star)


def t1_from_params(A, B, t1_star):
    """``(B/A - 1) T1*`` with a validity mask (``A == 0`` or non-finite -> invalid, value 0)."""
    A, B, t1_star = (np.asarray(v, dtype=np.float64) for v in (A, B, t1_star))
    ok = (A != 0) & np.isfinite(A) & np.isfinite(B) & np.isfinite(t1_star)
    t1 = np.where(ok, (B / np.where(ok, A, 1.0) - 1.0) * t1_star, 0.0)
    return t1, ok


def t1_map(params: ModelParams) -> T1Map:
    """T1 per pixel; valid where the fit converged and T1 is finite and positive."""
    t1, ok = t1_from_params(params.A, params.B, params.t1_star)
    if params.valid is not None:
        ok &= params.valid
    if np.any(ok & (params.B < params.A)):
        warnings.warn("some fitted pixels have B < A (unphysical)", RuntimeWarning, stacklevel=2)
    ok &= t1 > 0
    return T1Map(np.where(ok, t1, 0.0), ok)


def signed_curves(series: np.ndarray) -> np.ndarray:
    """Real signed curves from a complex series ``(T, ...)`` -> ``(..., T)``.

    The phase of the last (fully recovered, positive) frame is removed, so
    early frames keep the negative polarity of the inversion.
    """
    series = np.asarray(series)
    if not np.iscomplexobj(series):
        return np.moveaxis(series.astype(np.float64), 0, -1)
    ref = series[-1]
    phase = np.where(np.abs(ref) > 0, ref / np.where(np.abs(ref) > 0, np.abs(ref), 1.0), 1.0)
    return np.moveaxis(np.real(series * np.conj(phase)), 0, -1)


# ---------------------------------------------------------------- LM oracle

def _linear_amplitudes(y, t, tau):
    """Best ``(A, B)`` for fixed scaled ``tau`` by linear least squares."""
    e = np.exp(-t[None, :] / (tau[:, None] * T1_STAR_UNIT))
    n = t.size
    se, see = e.sum(1), (e * e).sum(1)
    sy, sey = y.sum(1), (e * y).sum(1)
    det = n * see - se * se
    det = np.where(np.abs(det) < 1e-300, 1e-300, det)
    A = (see * sy - se * sey) / det
    B = -(n * sey - se * sy) / det
    return A, B


def _residual(theta, y, t):
    A, B, tau = theta[:, 0:1], theta[:, 1:2], theta[:, 2:3]
    e = np.exp(-t[None, :] / (tau * T1_STAR_UNIT))
    return A - B * e - y, e


def _lm(theta, y, t, max_iter, tol):
    m = theta.shape[0]
    lam = np.full(m, 1e-3)
    r, e = _residual(theta, y, t)
    cost = np.sum(r * r, axis=1)
    done = np.zeros(m, dtype=bool)
    for _ in range(max_iter):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        th, ea, ra = theta[act], e[act], r[act]
        tau = th[:, 2:3]
        J = np.stack([np.ones_like(ea), -ea, -th[:, 1:2] * ea * t[None, :] / (T1_STAR_UNIT * tau * tau)], axis=-1)
        JtJ = np.einsum("mti,mtj->mij", J, J)
        Jtr = np.einsum("mti,mt->mi", J, ra)
        damp = JtJ + lam[act, None, None] * np.eye(3) * np.maximum(np.diagonal(JtJ, axis1=1, axis2=2), 1e-12)[:, None, :]
        try:
            step = -np.linalg.solve(damp, Jtr[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = -np.stack([np.linalg.lstsq(d, g, rcond=None)[0] for d, g in zip(damp, Jtr)])
        trial = th + step
        positive = trial[:, 2] > 1e-6
        trial[~positive, 2] = th[~positive, 2]
        rt, et = _residual(trial, y[act], t)
        ct = np.sum(rt * rt, axis=1)
        better = (ct <= cost[act]) & positive & np.isfinite(ct)
        idx = act[better]
        theta[idx], r[idx], e[idx], cost[idx] = trial[better], rt[better], et[better], ct[better]
        lam[idx] = np.maximum(lam[idx] / 10.0, 1e-12)
        lam[act[~better]] *= 10.0
        rel = np.linalg.norm(step, axis=1) / (np.linalg.norm(th, axis=1) + 1e-300)
        done[act[(better & (rel < tol)) | (cost[act] == 0.0)]] = True
        done[act[lam[act] > 1e12]] = True
    return theta, cost, done


def lm_fit(curves: np.ndarray, times, init=None, max_iter: int = 200, tol: float = 1e-8) -> ModelParams:
    """Levenberg-Marquardt fit of ``A - B exp(-t/T1*)`` to each curve.

    Parameters
    ----------
    curves : ndarray, shape (..., T)
        Real signal curves.
    times : array_like, shape (T,)
        Increasing inversion times in ms.
    init : sequence of float, optional
        T1* starting values (ms); defaults to three starts spanning 300-2500 ms.
        ``A`` and ``B`` start at their linear least-squares values.

    Returns
    -------
    ModelParams
        Best-residual parameters across starts; ``valid`` flags curves whose
        best start converged to a finite, positive T1*.
    """
    times = np.asarray(times, dtype=np.float64)
    curves = np.asarray(curves, dtype=np.float64)
    if curves.shape[-1] != times.size:
        raise ValueError(f"curves have {curves.shape[-1]} points, {times.size} times given")
    if times.size < 4:
        raise ValueError("at least 4 time points are required")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    lead = curves.shape[:-1]
    y = curves.reshape(-1, times.size)
    scale = np.max(np.abs(y), axis=1)
    scale = np.where(scale > 0, scale, 1.0)
    ys = y / scale[:, None]
    starts = T1_STAR_STARTS if init is None else tuple(init)
    best = None
    for s in starts:
        tau = np.full(ys.shape[0], s / T1_STAR_UNIT)
        A, B = _linear_amplitudes(ys, times, tau)
        theta, cost, conv = _lm(np.stack([A, B, tau], axis=1), ys, times, max_iter, tol)
        if best is None:
            best = (theta, cost, conv)
        else:
            pick = cost < best[1]
            best = tuple(np.where(pick[:, None] if b.ndim == 2 else pick, new, b)
                         for new, b in zip((theta, cost, conv), best))
    theta, _, conv = best
    valid = conv & np.all(np.isfinite(theta), axis=1) & (theta[:, 2] > 0)
    return ModelParams(A=(theta[:, 0] * scale).reshape(lead), B=(theta[:, 1] * scale).reshape(lead),
                       t1_star=(theta[:, 2] * T1_STAR_UNIT).reshape(lead), valid=valid.reshape(lead))


# ---------------------------------------------------------------- networks

class FittingNetwork:
    """MLP mapping a curve to ``(A, B, T1*)``.

    Curves are divided by their max-abs value before entering the MLP; the
    outputs ``(a, b, s)`` map to ``A = a*scale``, ``B = b*scale`` and
    ``T1* = 1000 ms * softplus(s)``, so the predicted T1 is scale invariant.
    """

    def __init__(self, n_times: int, hidden=(64, 64), seed: int = 0, activation: str = "tanh"):
        self.mlp = MlpNetwork(n_times, hidden, 3, rng=np.random.default_rng(seed), activation=activation)
        # bias the T1* output so that training starts near T1* ~ 1 s
        self.mlp.biases[-1].data[:] = [0.0, 0.0, 0.5]
        self.n_times = n_times

    def parameters(self, prefix: str = "") -> dict:
        return self.mlp.parameters(prefix)

    @staticmethod
    def normalise(curves: np.ndarray):
        curves = np.asarray(curves, dtype=np.float64)
        scale = np.max(np.abs(curves), axis=-1)
        scale = np.where(scale > 0, scale, 1.0)
        return curves / scale[..., None], scale

    def scaled_outputs(self, normalised) -> tuple:
        """Tensors ``(a, b, tau)`` of shape ``(n, 1)`` in normalised units."""
        out = self.mlp(normalised)
        a = ops.getitem(out, (slice(None), slice(0, 1)))
        b = ops.getitem(out, (slice(None), slice(1, 2)))
        tau = ops.add(ops.softplus(ops.getitem(out, (slice(None), slice(2, 3)))), 1e-3)
        return a, b, tau

    def synthesise(self, normalised, times) -> Tensor:
        a, b, tau = self.scaled_outputs(normalised)
        t = np.asarray(times, dtype=np.float64)[None, :] / T1_STAR_UNIT
        return ops.sub(a, ops.mul(b, ops.exp(ops.neg(ops.div(t, tau)))))

    def predict(self, curves: np.ndarray) -> ModelParams:
        curves = np.asarray(curves, dtype=np.float64)
        lead = curves.shape[:-1]
        norm, scale = self.normalise(curves.reshape(-1, curves.shape[-1]))
        a, b, tau = self.scaled_outputs(norm)
        return ModelParams(A=(a.data[:, 0] * scale).reshape(lead), B=(b.data[:, 0] * scale).reshape(lead),
                           t1_star=(tau.data[:, 0] * T1_STAR_UNIT).reshape(lead),
                           valid=np.ones(lead, dtype=bool))

    def predict_t1(self, curves: np.ndarray) -> T1Map:
        return t1_map(self.predict(curves))


def _l1(pred: Tensor, target: np.ndarray) -> Tensor:
    return ops.mean(ops.abs(ops.sub(pred, target)))


def selfsup_loss(net: FittingNetwork, curves: np.ndarray, times) -> Tensor:
    """Model-consistency loss: L1 between synthesised and input (normalised) curves."""
    norm, _ = net.normalise(curves)
    return _l1(net.synthesise(norm, times), norm)


def supervised_loss(net: FittingNetwork, curves: np.ndarray, p_ref: ModelParams) -> Tensor:
    """L1 between predicted and reference ``(A, B, T1*)`` in normalised units."""
    norm, scale = net.normalise(curves)
    a, b, tau = net.scaled_outputs(norm)
    pred = ops.concat([a, b, tau], axis=1)
    ref = np.stack([p_ref.A / scale, p_ref.B / scale, p_ref.t1_star / T1_STAR_UNIT], axis=1)
    return _l1(pred, ref)


def cosine_lr(lr: float, epoch: int, epochs: int, floor: float = 0.01) -> float:
    """Cosine decay from ``lr`` to ``floor * lr`` over ``epochs``."""
    frac = epoch / max(epochs - 1, 1)
    return lr * (floor + (1.0 - floor) * 0.5 * (1.0 + np.cos(np.pi * frac)))


def _train(net: FittingNetwork, n: int, loss_fn, epochs: int, batch: int, lr: float, seed: int) -> list:
    params = net.parameters()
    opt = Adam(params, lr=lr)
    rng = np.random.default_rng(seed)
    history = []
    for epoch in range(epochs):
        opt.lr = cosine_lr(lr, epoch, epochs)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            with Tape() as tape:
                loss = loss_fn(idx)
            grads = tape.gradient(loss, params)
            opt.step(grads)
            total += loss.item() * idx.size
        history.append(total / n)
        if not np.isfinite(history[-1]):
            raise FloatingPointError(f"fitting network diverged (loss {history[-1]})")
    return history


def fit_network_selfsup_train(net: FittingNetwork, curves: np.ndarray, times, epochs: int = 300,
                              batch: int = 64, lr: float = 3e-3, seed: int = 0) -> list:
    """Train ``net`` on curves ``(n, T)`` with the model-consistency loss; returns epoch losses."""
    curves = np.asarray(curves, dtype=np.float64)
    return _train(net, curves.shape[0], lambda i: selfsup_loss(net, curves[i], times), epochs, batch, lr, seed)


def fit_network_sup_train(net: FittingNetwork, curves: np.ndarray, p_ref: ModelParams, epochs: int = 300,
                          batch: int = 64, lr: float = 3e-3, seed: int = 0) -> list:
    """Train ``net`` to regress reference parameters ``p_ref`` (one row per curve)."""
    curves = np.asarray(curves, dtype=np.float64)

    def loss(i):
        ref = ModelParams(p_ref.A[i], p_ref.B[i], p_ref.t1_star[i])
        return supervised_loss(net, curves[i], ref)

    return _train(net, curves.shape[0], loss, epochs, batch, lr, seed)
