"""Pure numpy implementations of the hot kernels.

Signatures and results match the compiled ``_kernels`` module; see
:mod:`ncdmm.kernels` for the selection logic.
"""

from __future__ import annotations

import numpy as np

_CROSS_EPS = 1e-12


def stencil_batch(offsets, dx, dy, wsq):
    """Weighted least-squares GFDM coefficients for a batch of stencils.

    ``offsets`` is a CSR-style pointer into the flat neighbour arrays ``dx``,
    ``dy`` (offsets to the centre) and ``wsq`` (squared weights).  Returns
    ``(coeffs, cond, reduced)`` where ``coeffs`` is ``5 x nnz``, ``cond`` the
    1-norm condition number of the column-scaled normal matrix and
    ``reduced`` flags stencils whose cross term is unobservable (every
    neighbour on an axis); those are solved in the 4-term basis with a zero
    ``dxy`` row.
    """
    offsets = np.asarray(offsets, dtype=np.int64)
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    wsq = np.asarray(wsq, dtype=float)
    nc = len(offsets) - 1
    coeffs = np.zeros((5, len(dx)))
    cond = np.empty(nc)
    reduced = np.zeros(nc, dtype=np.int8)
    for c in range(nc):
        a, b = offsets[c], offsets[c + 1]
        if b - a == 0:
            cond[c] = np.inf
            continue
        s = np.sqrt(dx[a:b] ** 2 + dy[a:b] ** 2).max()
        wmax = wsq[a:b].max()
        if s <= 0 or wmax <= 0:
            cond[c] = np.inf
            continue
        x = dx[a:b] / s
        y = dy[a:b] / s
        w = wsq[a:b] / wmax
        L = np.column_stack([x, y, 0.5 * x * x, 0.5 * y * y, x * y])
        k = 5
        if np.abs(L[:, 4]).max() < _CROSS_EPS:
            k = 4
            reduced[c] = 1
        L = L[:, :k]
        A = L.T @ (w[:, None] * L)
        try:
            Ainv = np.linalg.inv(A)
        except np.linalg.LinAlgError:
            cond[c] = np.inf
            continue
        cond[c] = np.abs(A).sum(axis=0).max() * np.abs(Ainv).sum(axis=0).max()
        if not np.isfinite(cond[c]):
            cond[c] = np.inf
            continue
        M = Ainv @ (L.T * w)
        unscale = np.array([1 / s, 1 / s, 1 / s**2, 1 / s**2, 1 / s**2])[:k]
        coeffs[:k, a:b] = M * unscale[:, None]
    return coeffs, cond, reduced


def pair_flux(pi, pj, T, p, krw, kro, dkrw, dkro, bw, bo, dbw, dbo, muw, muo,
              idx_p, idx_s, row_o, row_w, R, jr, jc, jv):
    """Two-phase upwinded pair fluxes with their Jacobian in COO form.

    For every pair the surface-volume flux ``F = kr_up * T * (p_j - p_i) /
    (B_avg * mu_avg)`` is added to node ``i``'s residual row and subtracted
    from node ``j``'s.  Rows equal to -1 are skipped.  ``jr``/``jc``/``jv``
    receive 12 entries per pair (unused slots keep row -1).  Returns the
    per-pair oil and water fluxes.
    """
    pi = np.asarray(pi)
    pj = np.asarray(pj)
    dp = p[pj] - p[pi]
    up = np.where(dp >= 0, pj, pi)
    fo = np.empty(len(pi))
    fw = np.empty(len(pi))
    jr[:] = -1
    jc[:] = 0
    jv[:] = 0.0
    phases = (
        (kro, dkro, bo, dbo, muo, row_o, fo, 0),
        (krw, dkrw, bw, dbw, muw, row_w, fw, 6),
    )
    for kr, dkr, B, dB, mu, row, flux, base in phases:
        bavg = 0.5 * (B[pi] + B[pj])
        muavg = 0.5 * (mu[pi] + mu[pj])
        m = 1.0 / (bavg * muavg)
        g = kr[up] * T
        F = g * m * dp
        flux[:] = F
        dm_i = -0.5 * dB[pi] / (bavg * bavg * muavg)
        dm_j = -0.5 * dB[pj] / (bavg * bavg * muavg)
        dFdpi = g * (dm_i * dp - m)
        dFdpj = g * (dm_j * dp + m)
        dFds = dkr[up] * T * m * dp
        ri = row[pi]
        rj = row[pj]
        np.add.at(R, ri[ri >= 0], F[ri >= 0])
        np.add.at(R, rj[rj >= 0], -F[rj >= 0])
        cols = (idx_p[pi], idx_p[pj], idx_s[up])
        vals = (dFdpi, dFdpj, dFds)
        k = base
        for rr, sign in ((ri, 1.0), (rj, -1.0)):
            for cc, vv in zip(cols, vals):
                ok = rr >= 0
                jr[k::12][ok] = rr[ok]
                jc[k::12][ok] = cc[ok]
                jv[k::12][ok] = sign * vv[ok]
                k += 1
    return fo, fw
