"""Named game presets and the inline affine-in-control problem family.

Each preset pins one behaviour that has an independent closed-form or
quadrature oracle.
"""

from __future__ import annotations

import numpy as np

from .dynamics import ControlSet, GameProblem
from .errors import ConfigError


def _zeros_drift(d):
    def drift(t, x, u, v):
        return np.zeros(np.broadcast_shapes(x.shape[:-1], u.shape[:-1], v.shape[:-1]) + (d,))
    return drift


def _const_diffusion(d, dn, value):
    mat = np.asarray(value, dtype=float).reshape(d, dn)

    def diffusion(t, x, u, v):
        return np.broadcast_to(mat, np.broadcast_shapes(x.shape[:-1], u.shape[:-1], v.shape[:-1]) + (d, dn))
    return diffusion


def gaussian_payoff(x):
    return np.exp(-np.sum(np.asarray(x) ** 2, axis=-1))


def tanh_payoff(x):
    return np.tanh(np.asarray(x)[..., 0])


def capped_square_payoff(x):
    return np.minimum(np.asarray(x)[..., 0] ** 2, 9.0)


def sum_drift(t, x, u, v):
    return u + v


def product_drift(t, x, u, v):
    return u * v


def null(T=1.0):
    return GameProblem(1, 1, _zeros_drift(1), _const_diffusion(1, 1, 0.0), gaussian_payoff,
                       ControlSet.singleton(0.0, "U"), ControlSet.singleton(0.0, "V"), T, (0.0, 1.0), "null")


def hopf_lax_asym(T=1.0):
    """``b = u + v`` with ``U = [-1, 1]`` (21 pts), ``V = [-1/2, 1/2]`` (11 pts), no noise."""
    return GameProblem(1, 1, sum_drift, _const_diffusion(1, 1, 0.0), gaussian_payoff,
                       ControlSet.linspace(-1, 1, 21, "U"), ControlSet.linspace(-0.5, 0.5, 11, "V"), T,
                       (0.0, 1.0), "hopf_lax_asym")


def non_isaacs(T=1.0):
    """``b = u v`` on ``{-1, 1}^2``: ``H^+ = |p|`` and ``H^- = -|p|``."""
    return GameProblem(1, 1, product_drift, _const_diffusion(1, 1, 0.0), tanh_payoff,
                       ControlSet([-1.0, 1.0], "U"), ControlSet([-1.0, 1.0], "V"), T, (-1.0, 1.0), "non_isaacs")


def heat(T=1.0):
    """Uncontrolled ``dX = sqrt(2) dW``."""
    return GameProblem(1, 1, _zeros_drift(1), _const_diffusion(1, 1, np.sqrt(2.0)), gaussian_payoff,
                       ControlSet.singleton(0.0, "U"), ControlSet.singleton(0.0, "V"), T, (0.0, 1.0), "heat")


def cancel(T=1.0):
    """``b = u + v`` with symmetric ``U = V = [-1, 1]``: ``H = 0`` so ``v = g``."""
    return GameProblem(1, 1, sum_drift, _const_diffusion(1, 1, 0.0), gaussian_payoff,
                       ControlSet.linspace(-1, 1, 21, "U"), ControlSet.linspace(-1, 1, 21, "V"), T,
                       (0.0, 1.0), "cancel")


def controlled_vol(T=1.0):
    """Player one picks the volatility in ``{0.5, 1.5}``; ``g = min(x^2, 9)``."""
    def diffusion(t, x, u, v):
        lead = np.broadcast_shapes(x.shape[:-1], u.shape[:-1], v.shape[:-1])
        return np.broadcast_to(u[..., None], lead + (1, 1)) * np.ones(lead + (1, 1))

    return GameProblem(1, 1, _zeros_drift(1), diffusion, capped_square_payoff,
                       ControlSet([0.5, 1.5], "U"), ControlSet.singleton(0.0, "V"), T, (0.0, 9.0), "controlled_vol")


PRESETS = {
    "null": null,
    "hopf_lax_asym": hopf_lax_asym,
    "non_isaacs": non_isaacs,
    "heat": heat,
    "cancel": cancel,
    "controlled_vol": controlled_vol,
}

# Grids used by the CLI when a config does not give one.
DEFAULT_GRIDS = {
    "null": {"bounds": [[-3.0, 3.0]], "nodes": [401]},
    "hopf_lax_asym": {"bounds": [[-3.0, 3.0]], "nodes": [401]},
    "non_isaacs": {"bounds": [[-3.0, 3.0]], "nodes": [401]},
    "heat": {"bounds": [[-6.0, 6.0]], "nodes": [401]},
    "cancel": {"bounds": [[-3.0, 3.0]], "nodes": [401]},
    "controlled_vol": {"bounds": [[-8.0, 8.0]], "nodes": [401]},
}

DESCRIPTIONS = {
    "null": "b = 0, sigma = 0, g = exp(-x^2)",
    "hopf_lax_asym": "b = u + v, U = [-1,1] (21), V = [-1/2,1/2] (11), sigma = 0, g = exp(-x^2)",
    "non_isaacs": "b = u v, U = V = {-1, 1}, sigma = 0, g = tanh(x)",
    "heat": "b = 0, sigma = sqrt(2), singleton controls, g = exp(-x^2)",
    "cancel": "b = u + v, U = V = [-1,1] (21), sigma = 0, g = exp(-x^2)",
    "controlled_vol": "b = 0, sigma = u in {0.5, 1.5}, singleton V, g = min(x^2, 9)",
}


def get_preset(name: str, T: float = 1.0) -> GameProblem:
    try:
        return PRESETS[name](T)
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None


# ---------------------------------------------------------------- inline problems

PAYOFFS = {
    "gaussian": (gaussian_payoff, (0.0, 1.0)),
    "tanh": (tanh_payoff, (-1.0, 1.0)),
    "capped_square": (capped_square_payoff, (0.0, 9.0)),
}


class Polynomial:
    """Polynomial in ``(t, x_1..x_d)`` of total degree at most 3.

    Terms are ``{"coef": c, "t": i, "x": [k_1, .., k_d]}``.
    """

    max_degree = 3

    def __init__(self, terms, dim):
        self.terms = []
        for term in terms:
            powers = list(term.get("x", [0] * dim))
            if len(powers) != dim:
                raise ConfigError("polynomial term has the wrong number of state powers")
            tp = int(term.get("t", 0))
            if tp < 0 or min(powers) < 0 or tp + sum(powers) > self.max_degree:
                raise ConfigError("polynomial degree must be between 0 and 3")
            self.terms.append((float(term["coef"]), tp, tuple(int(p) for p in powers)))

    def __call__(self, t, x):
        out = np.zeros(x.shape[:-1])
        for c, tp, powers in self.terms:
            val = np.full(x.shape[:-1], c * float(t) ** tp)
            for i, p in enumerate(powers):
                if p:
                    val = val * x[..., i] ** p
            out = out + val
        return out


def _poly_matrix(spec, rows, cols, dim):
    if spec is None:
        return None
    if len(spec) != rows or any(len(r) != cols for r in spec):
        raise ConfigError(f"coefficient matrix must be {rows}x{cols}")
    return [[Polynomial(entry, dim) for entry in row] for row in spec]


def _eval_matrix(polys, t, x, rows, cols):
    out = np.zeros(x.shape[:-1] + (rows, cols))
    for i in range(rows):
        for j in range(cols):
            out[..., i, j] = polys[i][j](t, x)
    return out


def inline_problem(spec: dict) -> GameProblem:
    """Affine-in-control problem from a config dict.

    ``drift = b0 + Bu u + Bv v`` and ``diffusion = S0 + sum_k u_k Su[k] + sum_k v_k Sv[k]``
    with polynomial entries of degree at most 3.
    """
    d = int(spec["dim_state"])
    dn = int(spec.get("dim_noise", 1))
    u_set = ControlSet(np.asarray(spec["u_set"], dtype=float), "U")
    v_set = ControlSet(np.asarray(spec["v_set"], dtype=float), "V")
    k, l = u_set.dim, v_set.dim
    drift_spec = spec.get("drift", {})
    b0 = _poly_matrix(drift_spec.get("b0", [[[]] for _ in range(d)]), d, 1, d)
    Bu = _poly_matrix(drift_spec.get("Bu"), d, k, d)
    Bv = _poly_matrix(drift_spec.get("Bv"), d, l, d)
    diff_spec = spec.get("diffusion", {})
    S0 = _poly_matrix(diff_spec.get("S0", [[[] for _ in range(dn)] for _ in range(d)]), d, dn, d)
    Su = [_poly_matrix(m, d, dn, d) for m in diff_spec.get("Su", [])]
    Sv = [_poly_matrix(m, d, dn, d) for m in diff_spec.get("Sv", [])]
    if Su and len(Su) != k or Sv and len(Sv) != l:
        raise ConfigError("one diffusion matrix per control component is required")

    def drift(t, x, u, v):
        lead = np.broadcast_shapes(x.shape[:-1], u.shape[:-1], v.shape[:-1])
        x = np.broadcast_to(x, lead + (d,))
        out = _eval_matrix(b0, t, x, d, 1)[..., 0]
        if Bu is not None:
            out = out + np.einsum("...ij,...j->...i", _eval_matrix(Bu, t, x, d, k), np.broadcast_to(u, lead + (k,)))
        if Bv is not None:
            out = out + np.einsum("...ij,...j->...i", _eval_matrix(Bv, t, x, d, l), np.broadcast_to(v, lead + (l,)))
        return out

    def diffusion(t, x, u, v):
        lead = np.broadcast_shapes(x.shape[:-1], u.shape[:-1], v.shape[:-1])
        x = np.broadcast_to(x, lead + (d,))
        out = _eval_matrix(S0, t, x, d, dn)
        u = np.broadcast_to(u, lead + (k,))
        v = np.broadcast_to(v, lead + (l,))
        for i, m in enumerate(Su):
            out = out + u[..., i, None, None] * _eval_matrix(m, t, x, d, dn)
        for i, m in enumerate(Sv):
            out = out + v[..., i, None, None] * _eval_matrix(m, t, x, d, dn)
        return out

    payoff_name = spec.get("payoff", "gaussian")
    if payoff_name not in PAYOFFS:
        raise ConfigError(f"unknown payoff {payoff_name!r}; available: {sorted(PAYOFFS)}")
    payoff, bounds = PAYOFFS[payoff_name]
    return GameProblem(d, dn, drift, diffusion, payoff, u_set, v_set, float(spec.get("horizon", 1.0)),
                       bounds, spec.get("name", "inline"), {"spec": spec})
