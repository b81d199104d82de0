"""Independent oracles the tests check the package against.

Everything here deliberately avoids the package's own code paths: the null
model is solved by a general-purpose root finder on the strength equations,
the fixed point is iterated by a plain Jacobi loop with a different
normaliser, and clustered covariances come from statsmodels.
"""

from __future__ import annotations

import numpy as np
import scipy.optimize


def biwcm_root_oracle(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve the strength equations with scipy.optimize.root.

    Unknowns are log-multipliers with the gauge fixed by y[-1] = 1; the last
    column equation is dropped (it is implied by total-mass conservation) so
    the system is square. Returns (x, y); raises if the residual check fails.
    """
    w = np.asarray(w, dtype=float)
    n, m = w.shape
    s_row, s_col = w.sum(axis=1), w.sum(axis=0)
    total = w.sum()

    def unpack(z):
        x = np.exp(z[:n])
        y = np.concatenate([np.exp(z[n:]), [1.0]])
        return x, y

    def equations(z):
        x, y = unpack(z)
        p = np.outer(x, y)
        if (p >= 1.0).any():
            return np.full(n + m - 1, 1e6) * (1.0 + np.abs(z))
        e = p / (1.0 - p)
        return np.concatenate([e.sum(axis=1) - s_row, e.sum(axis=0)[:-1] - s_col[:-1]])

    x0 = s_row / np.sqrt(total)
    y0 = s_col / np.sqrt(total)
    scale = np.sqrt(0.5 / max(np.outer(x0, y0).max(), 1e-12))
    x0, y0 = x0 * scale, y0 * scale
    z0 = np.concatenate([np.log(x0), np.log(y0[:-1] / y0[-1])])
    solution = scipy.optimize.root(equations, z0, method="hybr", tol=1e-13)
    x, y = unpack(solution.x)
    p = np.outer(x, y)
    e = p / (1.0 - p)
    residual = max(
        np.abs(e.sum(axis=1) - s_row).max() / s_row.max(),
        np.abs(e.sum(axis=0) - s_col).max() / s_col.max(),
    )
    assert residual < 1e-9, f"oracle root-finder failed (residual {residual:.2e})"
    return x, y


def gauge_fix(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalise the multiplier gauge to y[0] = 1 for comparability."""
    g = y[0]
    return x * g, y / g


def efc_jacobi_oracle(entries: np.ndarray, dummy_index: int, iterations: int = 200_000, tol: float = 1e-14):
    """Plain Jacobi iteration of the two-line map, max-normalised, then
    mean-normalised and anchored at the dummy row. Independent of the package
    implementation (different update order and normaliser)."""
    a = np.asarray(entries, dtype=float)
    n, m = a.shape
    f = np.ones(n)
    q = np.ones(m)
    for _ in range(iterations):
        f_new = a @ q
        q_new = 1.0 / (a.T @ (1.0 / f))
        f_new /= f_new.max()
        q_new /= q_new.max()
        if np.abs(f_new - f).max() < tol and np.abs(q_new - q).max() < tol:
            f, q = f_new, q_new
            break
        f, q = f_new, q_new
    f /= f.mean()
    q /= q.mean()
    anchor = f[dummy_index]
    return f / anchor, q / anchor


def statsmodels_twoway_cgm(frame, outcome: str, regressors: list[str]):
    """Two-way CGM clustered SEs from statsmodels with explicit FE dummies."""
    import pandas as pd
    import statsmodels.formula.api as smf

    formula = f"{outcome} ~ {' + '.join(regressors)} + C(country) + C(year)"
    cells = pd.factorize(frame["country"].astype(str) + "|" + frame["year"].astype(str))[0]

    def cov_for(groups):
        fit = smf.ols(formula, data=frame).fit(
            cov_type="cluster", cov_kwds={"groups": groups, "use_correction": True}
        )
        return fit.cov_params().loc[regressors, regressors].to_numpy(), fit

    cov_c, fit = cov_for(frame["country"])
    cov_t, _ = cov_for(frame["year"])
    cov_cell, _ = cov_for(cells)
    cov = cov_c + cov_t - cov_cell
    params = fit.params[regressors].to_numpy()
    return params, np.sqrt(np.diag(cov))
