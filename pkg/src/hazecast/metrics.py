"""Accuracy metrics, inference cost accounting and reference baselines."""

from __future__ import annotations

import math

import numpy as np

from .errors import EmptyInput
from .retnet import RetNetConfig, param_shapes


def rmse(y, yhat) -> float:
    y, yhat = np.asarray(y, float).ravel(), np.asarray(yhat, float).ravel()
    return math.sqrt(float(np.mean((y - yhat) ** 2)))


def mae(y, yhat) -> float:
    y, yhat = np.asarray(y, float).ravel(), np.asarray(yhat, float).ravel()
    return float(np.mean(np.abs(y - yhat)))


def r2(y, yhat) -> float:
    """Coefficient of determination; NaN when the actuals have no variance
    and the forecast is imperfect."""
    y, yhat = np.asarray(y, float).ravel(), np.asarray(yhat, float).ravel()
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else math.nan
    return 1.0 - ss_res / ss_tot


def all_metrics(y, yhat) -> dict:
    if np.asarray(y).size == 0:
        return {"rmse": None, "mae": None, "r2": None}
    return {"rmse": rmse(y, yhat), "mae": mae(y, yhat), "r2": r2(y, yhat)}


# inference cost --------------------------------------------------------------
#
# matmul [a x b] @ [b x c] = 2abc; every elementwise op (activation, residual
# add, gating product, decay mask, rotation, normalisation, bias add) = 1 per
# output element; conv1d = 2 * len * c_out * c_in * kwidth plus its bias add.

def dense_cost(n_in: int, n_out: int, bias: bool = True) -> tuple:
    """(flops, params) of one dense layer applied to a single row."""
    return 2 * n_in * n_out + (n_out if bias else 0), n_in * n_out + (n_out if bias else 0)


def count_flops_params(cfg: RetNetConfig) -> tuple:
    l, d, h, f = cfg.input_len, cfg.d, cfg.h, cfg.ffn_dim
    c1, c2 = cfg.conv_channels
    k = cfg.kernel_width

    flops = 0
    # convolutional front end: conv+bias+gelu, conv+bias+gelu, conv+bias
    for c_in, c_out, act in ((cfg.n_vars, c1, True), (c1, c2, True), (c2, d, False)):
        flops += 2 * l * c_out * c_in * k + l * c_out + (l * c_out if act else 0)

    per_layer = (
        l * d                      # layer norm before MSR
        + 3 * 2 * l * d * d        # Q, K, V projections
        + 2 * l * d                # rotate Q and K
        + 2 * l * l * d            # Q K^T summed over heads
        + h * l * l                # decay mask
        + 2 * l * l * d            # (.) V summed over heads
        + l * d                    # group norm
        + 2 * l * d * d + l * d    # X W_G and swish
        + l * d                    # gate product
        + 2 * l * d * d            # W_O
        + l * d                    # residual
        + l * d                    # layer norm before FFN
        + 2 * l * d * f + l * f    # X W_1 and gelu
        + 2 * l * f * d            # W_2
        + l * d                    # residual
    )
    flops += cfg.L * per_layer
    flops += dense_cost(d, cfg.horizon)[0]

    params = sum(int(np.prod(s)) for s in param_shapes(cfg).values())
    return int(flops), int(params)


# baselines -------------------------------------------------------------------

def persistence_forecast(X, horizon: int) -> np.ndarray:
    """Repeat the last observed target value (last input column) over the horizon."""
    X = np.asarray(X, float)
    return np.repeat(X[:, -1, -1][:, None], horizon, axis=1)


def fit_linear(X, Y) -> np.ndarray:
    """Least-squares map from flattened windows (plus intercept) to the horizon."""
    X = np.asarray(X, float)
    if len(X) == 0:
        raise EmptyInput("no samples to fit")
    A = np.column_stack([X.reshape(len(X), -1), np.ones(len(X))])
    coef, *_ = np.linalg.lstsq(A, np.asarray(Y, float), rcond=None)
    return coef


def linear_forecast(coef, X) -> np.ndarray:
    X = np.asarray(X, float)
    A = np.column_stack([X.reshape(len(X), -1), np.ones(len(X))])
    return A @ coef


def baselines(train, test, denorm=None) -> dict:
    """Metrics of the persistence and least-squares baselines on ``test``.

    ``train``/``test`` are (X, Y) arrays; ``denorm`` maps normalised target
    values back to physical units before scoring.
    """
    Xte, Yte = test
    if len(Xte) == 0:
        raise EmptyInput("no test samples")
    horizon = Yte.shape[1]
    back = denorm or (lambda v: v)
    out = {"persistence": all_metrics(back(Yte), back(persistence_forecast(Xte, horizon)))}
    if train is not None and len(train[0]):
        coef = fit_linear(*train)
        out["linear"] = all_metrics(back(Yte), back(linear_forecast(coef, Xte)))
    return out
