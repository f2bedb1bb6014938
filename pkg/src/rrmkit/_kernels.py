"""Numerical hot loops with a numba-compiled fast path and a numpy fallback.

Two kernel families live here:

* feedforward-net kernels operating on a flat parameter vector ``theta``
  (per layer: row-major weight matrix, then bias), with ``dims`` giving the
  layer widths ``[input, hidden..., output]``;
* the per-TTI downlink scheduling loop that advances a simulation window.

Backend selection is controlled by the ``RRMKIT_BACKEND`` environment
variable: ``auto`` (default; numba when importable), ``numba``, or
``numpy``. The net kernels share one source body (numba compiles the epoch
loop; numpy interprets it over vectorized ops); the scheduling loop has a
separate vectorized numpy implementation. Within one backend every kernel
is bit-deterministic; across backends results agree only to floating-point
round-off, so never mix backends inside one reproducibility experiment.
"""

import os

import numpy as np

ACT_TANH = 0
ACT_RELU = 1

_SENTINEL_SHARE = 1e300


def param_count(dims) -> int:
    """Number of entries in a flat parameter vector for layer widths `dims`."""
    dims = np.asarray(dims)
    return int(np.sum(dims[1:] * dims[:-1] + dims[1:]))


# --------------------------------------------------------------------------
# Feedforward-net kernels (single source; numba-compilable body)
# --------------------------------------------------------------------------

def _net_forward(theta, dims, act_id, X):
    n_layers = dims.shape[0] - 1
    A = X
    off = 0
    for l in range(n_layers):
        fi = dims[l]
        fo = dims[l + 1]
        W = theta[off:off + fo * fi].reshape(fo, fi)
        b = theta[off + fo * fi:off + fo * fi + fo]
        off += fo * fi + fo
        Z = A @ W.T + b
        if l < n_layers - 1:
            if act_id == ACT_TANH:
                A = np.tanh(Z)
            else:
                A = np.maximum(Z, 0.0)
        else:
            A = Z
    return A


def _net_grad(theta, dims, act_id, X, targets, mask):
    """Gradient of mean masked squared error; returns (grad, loss).

    loss = (1/N) * sum_n sum_j mask[n,j] * (out[n,j] - targets[n,j])**2
    """
    n_layers = dims.shape[0] - 1
    n = X.shape[0]
    acts = [X]
    zs = []
    off = 0
    for l in range(n_layers):
        fi = dims[l]
        fo = dims[l + 1]
        W = theta[off:off + fo * fi].reshape(fo, fi)
        b = theta[off + fo * fi:off + fo * fi + fo]
        off += fo * fi + fo
        Z = acts[-1] @ W.T + b
        if l < n_layers - 1:
            if act_id == ACT_TANH:
                A = np.tanh(Z)
            else:
                A = np.maximum(Z, 0.0)
        else:
            A = Z
        zs.append(Z)
        acts.append(A)
    err = acts[-1] - targets
    masked = mask * err
    loss = np.sum(masked * err) / n
    delta = (2.0 / n) * masked
    g = np.empty_like(theta)
    off_end = theta.shape[0]
    for l in range(n_layers - 1, -1, -1):
        fi = dims[l]
        fo = dims[l + 1]
        off_end -= fo * fi + fo
        gW = delta.T @ acts[l]
        gb = delta.sum(axis=0)
        g[off_end:off_end + fo * fi] = gW.ravel()
        g[off_end + fo * fi:off_end + fo * fi + fo] = gb
        if l > 0:
            W = theta[off_end:off_end + fo * fi].reshape(fo, fi)
            back = delta @ W
            if act_id == ACT_TANH:
                t = np.tanh(zs[l - 1])
                delta = back * (1.0 - t * t)
            else:
                delta = back * (zs[l - 1] > 0.0)
    return g, loss


def _net_fit_full(theta, dims, act_id, X, targets, mask, epochs, lr):
    """Full-batch gradient descent.

    Returns (theta, losses, diverged_epoch). ``losses[e]`` is the loss at
    the start of epoch ``e`` (before that epoch's update); entries after a
    divergence stay NaN and ``diverged_epoch`` is the offending epoch (-1
    when training stayed finite).
    """
    theta = theta.copy()
    losses = np.full(epochs, np.nan)
    for epoch in range(epochs):
        g, loss = _net_grad(theta, dims, act_id, X, targets, mask)
        losses[epoch] = loss
        if not np.isfinite(loss):
            return theta, losses, epoch
        theta = theta - lr * g
    return theta, losses, -1


def _net_fit_minibatch(theta, dims, act_id, X, targets, mask, lr, order, batch_size):
    """Mini-batch gradient descent over precomputed per-epoch sample orders.

    ``order`` is an (epochs, N) int64 matrix of sample permutations, drawn
    by the caller so that no RNG lives inside the kernel. Recorded losses
    are full-batch, evaluated at the start of each epoch.
    """
    theta = theta.copy()
    epochs = order.shape[0]
    n = X.shape[0]
    losses = np.full(epochs, np.nan)
    for epoch in range(epochs):
        _, loss = _net_grad(theta, dims, act_id, X, targets, mask)
        losses[epoch] = loss
        if not np.isfinite(loss):
            return theta, losses, epoch
        start = 0
        while start < n:
            stop = min(start + batch_size, n)
            idx = order[epoch, start:stop]
            g, _ = _net_grad(theta, dims, act_id, X[idx], targets[idx], mask[idx])
            theta = theta - lr * g
            start = stop
    return theta, losses, -1


# --------------------------------------------------------------------------
# Simulation window kernel
# --------------------------------------------------------------------------
#
# Model per TTI: arrivals land in buffers; every cell splits its resource
# blocks equally among its active users; a jointly-served user receives the
# minimum share across its serving cells (those RBs are occupied in every
# serving cell); delivered bits follow the Shannon bound on the user's
# per-RB SINR and are capped by the buffer for finite-traffic users.

def _sim_window_loops(serving, primary, sinr, full_buffer, buffer,
                      arrivals, rb_count, rb_bw, tti):
    n_tti = arrivals.shape[0]
    n_users = serving.shape[0]
    n_cells = serving.shape[1]
    delivered = np.zeros(n_users)
    active_time = np.zeros(n_users)
    rb_used = np.zeros(n_cells)
    se = np.empty(n_users)
    for u in range(n_users):
        se[u] = np.log2(1.0 + sinr[u])
    n_active = np.zeros(n_cells, np.int64)
    for t in range(n_tti):
        for u in range(n_users):
            buffer[u] += arrivals[t, u]
        for c in range(n_cells):
            n_active[c] = 0
        for u in range(n_users):
            if full_buffer[u] == 1 or buffer[u] > 0.0:
                for c in range(n_cells):
                    if serving[u, c] == 1:
                        n_active[c] += 1
        for u in range(n_users):
            if not (full_buffer[u] == 1 or buffer[u] > 0.0):
                continue
            active_time[u] += tti
            share = _SENTINEL_SHARE
            for c in range(n_cells):
                if serving[u, c] == 1:
                    s = rb_count[c] / n_active[c]
                    if s < share:
                        share = s
            if share >= _SENTINEL_SHARE:
                continue
            cap = share * rb_bw[primary[u]] * tti * se[u]
            if full_buffer[u] == 1:
                bits = cap
                used = share
            else:
                bits = buffer[u] if buffer[u] <= cap else cap
                buffer[u] -= bits
                used = share * (bits / cap) if cap > 0.0 else 0.0
            delivered[u] += bits
            for c in range(n_cells):
                if serving[u, c] == 1:
                    rb_used[c] += used / rb_count[c]
    return delivered, active_time, rb_used


def _sim_window_numpy(serving, primary, sinr, full_buffer, buffer,
                      arrivals, rb_count, rb_bw, tti):
    n_tti = arrivals.shape[0]
    n_users, n_cells = serving.shape
    delivered = np.zeros(n_users)
    active_time = np.zeros(n_users)
    rb_used = np.zeros(n_cells)
    se = np.log2(1.0 + sinr)
    rbw = rb_bw[primary]
    full = full_buffer == 1
    srv = serving == 1
    for t in range(n_tti):
        buffer += arrivals[t]
        active = full | (buffer > 0.0)
        n_active = (srv & active[:, None]).sum(axis=0)
        per_cell = np.where(n_active > 0, rb_count / np.maximum(n_active, 1),
                            _SENTINEL_SHARE)
        share = np.where(srv, per_cell[None, :], _SENTINEL_SHARE).min(axis=1)
        eligible = active & (share < _SENTINEL_SHARE)
        cap = np.where(eligible, share * rbw * tti * se, 0.0)
        bits = np.where(full, cap, np.minimum(buffer, cap))
        bits = np.where(eligible, bits, 0.0)
        buffer -= np.where(full, 0.0, bits)
        safe_cap = np.where(cap > 0.0, cap, 1.0)
        used = np.where(full, share, share * (bits / safe_cap) * (cap > 0.0))
        used = np.where(eligible, used, 0.0)
        delivered += bits
        active_time += np.where(active, tti, 0.0)
        rb_used += (srv * used[:, None]).sum(axis=0) / rb_count
    return delivered, active_time, rb_used


# --------------------------------------------------------------------------
# Backend selection
# --------------------------------------------------------------------------

NUMPY_IMPL = {
    "net_forward": _net_forward,
    "net_grad": _net_grad,
    "net_fit_full": _net_fit_full,
    "net_fit_minibatch": _net_fit_minibatch,
    "sim_window": _sim_window_numpy,
}

NUMBA_IMPL = None


def _build_numba_impl():
    from numba import njit

    jit = njit(cache=True)
    forward = jit(_net_forward)
    grad = jit(_net_grad)
    # fit loops call the jitted grad, so rebind before compiling them
    fit_full_src = _make_fit_full(grad)
    fit_mb_src = _make_fit_minibatch(grad)
    return {
        "net_forward": forward,
        "net_grad": grad,
        "net_fit_full": jit(fit_full_src),
        "net_fit_minibatch": jit(fit_mb_src),
        "sim_window": jit(_sim_window_loops),
    }


def _make_fit_full(grad_fn):
    def fit_full(theta, dims, act_id, X, targets, mask, epochs, lr):
        theta = theta.copy()
        losses = np.full(epochs, np.nan)
        for epoch in range(epochs):
            g, loss = grad_fn(theta, dims, act_id, X, targets, mask)
            losses[epoch] = loss
            if not np.isfinite(loss):
                return theta, losses, epoch
            theta = theta - lr * g
        return theta, losses, -1
    return fit_full


def _make_fit_minibatch(grad_fn):
    def fit_minibatch(theta, dims, act_id, X, targets, mask, lr, order, batch_size):
        theta = theta.copy()
        epochs = order.shape[0]
        n = X.shape[0]
        losses = np.full(epochs, np.nan)
        for epoch in range(epochs):
            _, loss = grad_fn(theta, dims, act_id, X, targets, mask)
            losses[epoch] = loss
            if not np.isfinite(loss):
                return theta, losses, epoch
            start = 0
            while start < n:
                stop = min(start + batch_size, n)
                idx = order[epoch, start:stop]
                g, _ = grad_fn(theta, dims, act_id, X[idx], targets[idx], mask[idx])
                theta = theta - lr * g
                start = stop
        return theta, losses, -1
    return fit_minibatch


def _resolve_backend() -> str:
    requested = os.environ.get("RRMKIT_BACKEND", "auto").lower()
    if requested not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"RRMKIT_BACKEND must be auto, numba, or numpy; got {requested!r}")
    global NUMBA_IMPL
    if requested == "numpy":
        return "numpy"
    try:
        NUMBA_IMPL = _build_numba_impl()
    except ImportError:
        if requested == "numba":
            raise ImportError(
                "RRMKIT_BACKEND=numba but numba is not importable") from None
        return "numpy"
    return "numba"


BACKEND = _resolve_backend()
_ACTIVE = NUMBA_IMPL if BACKEND == "numba" else NUMPY_IMPL

net_forward = _ACTIVE["net_forward"]
net_grad = _ACTIVE["net_grad"]
net_fit_full = _ACTIVE["net_fit_full"]
net_fit_minibatch = _ACTIVE["net_fit_minibatch"]
sim_window = _ACTIVE["sim_window"]
