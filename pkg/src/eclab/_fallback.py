"""Pure numpy implementations of the hot kernels.

These mirror ``eclab._kernels`` (Cython) argument for argument and are used
when the compiled extension is unavailable or ``ECLAB_PURE_PYTHON=1``.

Perturbations are passed flattened: ``pfreq (T, n)``, ``pcoord (T,)``,
``pcos (T,)``, ``psin (T,)`` so that coordinate ``c`` of ``p`` is
``sum a cos(2 pi k.x) + b sin(2 pi k.x)`` over the terms with ``pcoord == c``.
"""
import numpy as np

TWO_PI = 2.0 * np.pi


def lift_jacobian(x, A, pfreq, pcoord, pcos, psin):
    """Evaluate the lift ``A x + p(x)`` and its Jacobian at points ``x (P, n)``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = x @ A.T
    jac = np.broadcast_to(A, (x.shape[0],) + A.shape).copy()
    if len(pcoord):
        theta = TWO_PI * (x @ pfreq.T)  # (P, T)
        c, s = np.cos(theta), np.sin(theta)
        vals = pcos * c + psin * s
        dvals = TWO_PI * (-pcos * s + psin * c)  # (P, T)
        for t, coord in enumerate(pcoord):
            y[:, coord] += vals[:, t]
            jac[:, coord, :] += dvals[:, t, None] * pfreq[t]
    return y, jac


def newton_solve(targets, seeds, A, pfreq, pcoord, pcos, psin, tol=1e-12, maxiter=50):
    """Solve ``A x + p(x) = target`` by Newton's method, one system per row.

    Returns ``(x, residual, iterations)``; rows that fail to reach ``tol``
    keep their last iterate and report the final residual.
    """
    x = np.array(seeds, dtype=np.float64, copy=True)
    targets = np.asarray(targets, dtype=np.float64)
    iters = np.zeros(x.shape[0], dtype=np.int64)
    active = np.ones(x.shape[0], dtype=bool)
    resid = np.full(x.shape[0], np.inf)
    for it in range(maxiter + 1):
        y, jac = lift_jacobian(x[active], A, pfreq, pcoord, pcos, psin)
        r = y - targets[active]
        rn = np.max(np.abs(r), axis=1)
        idx = np.flatnonzero(active)
        resid[idx] = rn
        done = rn < tol
        active[idx[done]] = False
        if not active.any() or it == maxiter:
            break
        keep = ~done
        step = np.linalg.solve(jac[keep], r[keep][..., None])[..., 0]
        x[idx[keep]] -= step
        iters[idx[keep]] += 1
    return x, resid, iters


def eval_modes(points, modes, coefs):
    """Real part of ``sum_m coefs[m] exp(2 pi i m.x)`` at ``points (P, n)``."""
    if modes.shape[0] == 0:
        return np.zeros((points.shape[0], coefs.shape[1]))
    phase = np.exp(1j * TWO_PI * (points @ modes.T.astype(np.float64)))
    return (phase @ coefs).real


def orbit_series(points, A, pfreq, pcoord, pcos, psin, modes, coefs, offsets, degree):
    """Sum of iterated pullbacks ``sum_j (f^j)^* b_j`` evaluated at ``points``.

    ``b_j`` is the band-limited form whose modes are rows
    ``offsets[j]:offsets[j+1]`` of ``modes``/``coefs``. ``degree`` is 0 or 1;
    for 1-forms the pullback contracts with the transposed Jacobian of
    ``f^j`` accumulated along the orbit.
    """
    x = np.array(points, dtype=np.float64, copy=True)
    P, n = x.shape
    ncomp = coefs.shape[1]
    out = np.zeros((P, ncomp))
    D = np.broadcast_to(np.eye(n), (P, n, n)).copy()
    depth = len(offsets) - 1
    for j in range(depth):
        lo, hi = offsets[j], offsets[j + 1]
        if hi > lo:
            b = eval_modes(x, modes[lo:hi], coefs[lo:hi])
            if degree == 0:
                out += b
            else:
                out += np.einsum("pji,pj->pi", D, b)
        if j + 1 < depth:
            y, jac = lift_jacobian(x, A, pfreq, pcoord, pcos, psin)
            if degree == 1:
                D = jac @ D
            x = np.mod(y, 1.0)
    return out
