"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

The engine is deliberately small: a `Tape` records each executed operation
in order, `backward` replays the records in reverse, and the op vocabulary
is exactly what the graph model and the interpretation objective need.
Operations accept plain numpy arrays or `DiffTensor`s; when no input is
attached to a tape the op evaluates eagerly and records nothing, so forward
values are identical with or without gradient tracking.

Conventions:
  * everything is float64; scalars are 0-d arrays,
  * one tape per optimization step, discarded after a single backward pass,
  * gradients accumulate out-of-place (no aliasing hazards across branches).
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.special import expit


class DiffTensor:
    """Array value tracked by (at most) one tape.

    `grad` is populated by `backward` for every tensor that participated in
    the recorded computation; constants (no tape) never receive gradients.
    """

    def __init__(self, data, tape: "Tape | None" = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = "var" if self.tape is not None else "const"
        return f"DiffTensor({tag}, shape={self.data.shape})"


class Tape:
    """Ordered record of executed operations for one optimization step."""

    def __init__(self):
        self._records: list[Callable[[], None]] = []
        self._leaves: list[DiffTensor] = []
        self._spent = False

    def var(self, data) -> DiffTensor:
        """Register a gradient-tracked leaf on this tape."""
        t = DiffTensor(data, tape=self)
        self._leaves.append(t)
        return t

    def record(self, fn: Callable[[], None]) -> None:
        self._records.append(fn)


def constant(data) -> DiffTensor:
    """Tensor that participates in forward evaluation only."""
    return DiffTensor(data, tape=None)


def _as_dt(x) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(x)


def _merged_tape(*tensors: DiffTensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise RuntimeError("operands belong to different tapes")
    return tape


def _accum(t: DiffTensor, g: np.ndarray) -> None:
    if t.tape is None:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: DiffTensor) -> None:
    """Populate `grad` on every tensor of the loss's tape, leaves included.

    The loss must be a scalar produced on a live tape; a second backward
    call on the same tape is an error (build a fresh tape per step).
    """
    if not isinstance(loss, DiffTensor) or loss.tape is None:
        raise RuntimeError("loss was not produced on a tape")
    if loss.data.shape != ():
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    tape = loss.tape
    if tape._spent:
        raise RuntimeError("tape already consumed by a previous backward call")
    tape._spent = True
    loss.grad = np.ones(())
    for fn in reversed(tape._records):
        fn()
    for leaf in tape._leaves:
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def matmul(a, b) -> DiffTensor:
    """Matrix product; supports (k,), (n,k) or (B,n,k) against (k,m) or (B,k,m)."""
    a, b = _as_dt(a), _as_dt(b)
    A, B = a.data, b.data
    if A.ndim < 1 or B.ndim < 2:
        raise ValueError(f"matmul shape mismatch: {A.shape} vs {B.shape}")
    try:
        out_data = A @ B
    except ValueError:
        raise ValueError(f"matmul shape mismatch: {A.shape} vs {B.shape}") from None
    tape = _merged_tape(a, b)
    out = DiffTensor(out_data, tape=tape)
    if tape is not None:
        def back():
            if out.grad is None:
                return
            g = out.grad
            # promote a 1-d left operand so both adjoints are plain matmuls
            A2 = A if A.ndim >= 2 else A[None, :]
            g2 = g if A.ndim >= 2 else g[..., None, :]
            da = g2 @ np.swapaxes(B, -1, -2)
            db = np.swapaxes(A2, -1, -2) @ g2
            _accum(a, _unbroadcast(da, A2.shape).reshape(A.shape))
            _accum(b, _unbroadcast(db, B.shape))
        tape.record(back)
    return out


def add(a, b) -> DiffTensor:
    """Elementwise sum with numpy broadcasting (bias rows, scalars)."""
    a, b = _as_dt(a), _as_dt(b)
    A, B = a.data, b.data
    try:
        out_data = A + B
    except ValueError:
        raise ValueError(f"add shape mismatch: {A.shape} vs {B.shape}") from None
    tape = _merged_tape(a, b)
    out = DiffTensor(out_data, tape=tape)
    if tape is not None:
        def back():
            if out.grad is None:
                return
            _accum(a, _unbroadcast(out.grad, A.shape))
            _accum(b, _unbroadcast(out.grad, B.shape))
        tape.record(back)
    return out


def scale(a, k: float) -> DiffTensor:
    """Multiply by a Python scalar."""
    a = _as_dt(a)
    k = float(k)
    out = DiffTensor(a.data * k, tape=a.tape)
    if a.tape is not None:
        def back():
            if out.grad is not None:
                _accum(a, out.grad * k)
        a.tape.record(back)
    return out


def sub(a, b) -> DiffTensor:
    """Convenience composition: a - b."""
    return add(a, scale(b, -1.0))


def _clamp_at_zero(a) -> DiffTensor:
    a = _as_dt(a)
    out = DiffTensor(np.maximum(a.data, 0.0), tape=a.tape)
    if a.tape is not None:
        mask = a.data > 0.0  # strict: subgradient at exactly 0 is 0
        def back():
            if out.grad is not None:
                _accum(a, out.grad * mask)
        a.tape.record(back)
    return out


def relu(a) -> DiffTensor:
    """Elementwise max(a, 0) used as the network nonlinearity."""
    return _clamp_at_zero(a)


def max_zero(a) -> DiffTensor:
    """Elementwise max(a, 0) used as the hinge in the sparsity penalty."""
    return _clamp_at_zero(a)


def sigmoid(a) -> DiffTensor:
    """Numerically stable logistic function."""
    a = _as_dt(a)
    out_data = expit(a.data)
    out = DiffTensor(out_data, tape=a.tape)
    if a.tape is not None:
        def back():
            if out.grad is not None:
                _accum(a, out.grad * out_data * (1.0 - out_data))
        a.tape.record(back)
    return out


def row_mean(a) -> DiffTensor:
    """Mean over the row axis (second to last): (n,h) -> (h,), (B,n,h) -> (B,h)."""
    a = _as_dt(a)
    if a.data.ndim < 2:
        raise ValueError(f"row_mean needs ndim >= 2, got shape {a.data.shape}")
    n = a.data.shape[-2]
    out = DiffTensor(a.data.mean(axis=-2), tape=a.tape)
    if a.tape is not None:
        def back():
            if out.grad is not None:
                g = np.broadcast_to(out.grad[..., None, :] / n, a.data.shape)
                _accum(a, g)
        a.tape.record(back)
    return out


def sum(a) -> DiffTensor:  # noqa: A001 - deliberate, accessed module-qualified
    """Sum of all entries, as a scalar."""
    a = _as_dt(a)
    out = DiffTensor(a.data.sum(), tape=a.tape)
    if a.tape is not None:
        def back():
            if out.grad is not None:
                _accum(a, np.full(a.data.shape, float(out.grad)))
        a.tape.record(back)
    return out


def sq_norm(a) -> DiffTensor:
    """Sum of squared entries, as a scalar."""
    a = _as_dt(a)
    out = DiffTensor((a.data * a.data).sum(), tape=a.tape)
    if a.tape is not None:
        def back():
            if out.grad is not None:
                _accum(a, 2.0 * a.data * float(out.grad))
        a.tape.record(back)
    return out


def log_softmax(a) -> DiffTensor:
    """Log-softmax over the last axis, stable under large logits."""
    a = _as_dt(a)
    A = a.data
    mx = A.max(axis=-1, keepdims=True)
    lse = mx + np.log(np.exp(A - mx).sum(axis=-1, keepdims=True))
    out_data = A - lse
    out = DiffTensor(out_data, tape=a.tape)
    if a.tape is not None:
        def back():
            if out.grad is None:
                return
            g = out.grad
            soft = np.exp(out_data)
            _accum(a, g - soft * g.sum(axis=-1, keepdims=True))
        a.tape.record(back)
    return out


def nll(logp, label) -> DiffTensor:
    """Negative log-likelihood of the given label(s).

    1-d log-probabilities with an int label give a scalar; 2-d (B, C) with
    an int vector give the per-row values as shape (B,).
    """
    logp = _as_dt(logp)
    L = logp.data
    if L.ndim == 1:
        label = int(label)
        if not 0 <= label < L.shape[0]:
            raise ValueError(f"label {label} out of range for {L.shape[0]} classes")
        out_data = np.asarray(-L[label])
        out = DiffTensor(out_data, tape=logp.tape)
        if logp.tape is not None:
            def back():
                if out.grad is not None:
                    g = np.zeros_like(L)
                    g[label] = -float(out.grad)
                    _accum(logp, g)
            logp.tape.record(back)
        return out
    if L.ndim == 2:
        labels = np.asarray(label, dtype=np.intp)
        if labels.shape != (L.shape[0],):
            raise ValueError(f"labels shape {labels.shape} does not match logp {L.shape}")
        if labels.min() < 0 or labels.max() >= L.shape[1]:
            raise ValueError(f"label out of range for {L.shape[1]} classes")
        rows = np.arange(L.shape[0])
        out = DiffTensor(-L[rows, labels], tape=logp.tape)
        if logp.tape is not None:
            def back():
                if out.grad is not None:
                    g = np.zeros_like(L)
                    g[rows, labels] = -out.grad
                    _accum(logp, g)
            logp.tape.record(back)
        return out
    raise ValueError(f"nll expects 1-d or 2-d log-probabilities, got shape {L.shape}")


def sym_normalize(a) -> DiffTensor:
    """Symmetric degree normalization with self-loops.

    For adjacency A (square, or a stack of squares) returns
    D^{-1/2} (A + I) D^{-1/2} with D the degree of A + I.  Accepts relaxed
    fractional adjacencies, and the hand-derived adjoint keeps the whole
    interpretation objective differentiable through the normalization.
    """
    a = _as_dt(a)
    A = a.data
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"sym_normalize expects square matrices, got shape {A.shape}")
    n = A.shape[-1]
    M = A + np.eye(n)
    d = M.sum(axis=-1)
    inv = 1.0 / np.sqrt(d)
    out_data = M * inv[..., :, None] * inv[..., None, :]
    out = DiffTensor(out_data, tape=a.tape)
    if a.tape is not None:
        def back():
            if out.grad is None:
                return
            g = out.grad
            # entry (p, q) moves only the row-sum d_p, which rescales both
            # row p and column p of the output, hence the row-shaped term
            gn = g * out_data
            s = (gn.sum(axis=-1) + gn.sum(axis=-2)) / d
            da = g * inv[..., :, None] * inv[..., None, :] - 0.5 * s[..., :, None]
            _accum(a, da)
        a.tape.record(back)
    return out


def grad_check(f: Callable[[DiffTensor], DiffTensor], x, h: float = 1e-4) -> float:
    """Compare analytic gradients of a scalar function against central differences.

    Returns max over entries of |analytic - numeric| / max(1, |analytic|).
    `f` must accept a DiffTensor and return a scalar DiffTensor; it is
    re-evaluated on perturbed constants, so any randomness inside `f` must
    be frozen by the caller.
    """
    x0 = np.asarray(x, dtype=np.float64)
    tape = Tape()
    xv = tape.var(x0)
    loss = f(xv)
    if loss.data.shape != ():
        raise ValueError(f"grad_check needs a scalar-valued f, got shape {loss.data.shape}")
    backward(loss)
    analytic = xv.grad
    numeric = np.empty_like(x0)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        delta = np.zeros_like(flat)
        delta[i] = h
        fp = f(constant((flat + delta).reshape(x0.shape))).item()
        fm = f(constant((flat - delta).reshape(x0.shape))).item()
        numeric.reshape(-1)[i] = (fp - fm) / (2.0 * h)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
