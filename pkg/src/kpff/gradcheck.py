"""Independent derivative oracles: central finite differences and the
explicit dense Jacobians of the fusion layer.

These stay deliberately naive (entry-by-entry construction, no reuse of
the analytic code paths) so they can catch index bugs in the fast paths.
"""

from dataclasses import dataclass
import math

import numpy as np

from .tensor import Tensor, from_array
from .fusion import FusionInputs, KpffLayer, kpff_forward, kpff_backward
from .rng import stream

REL_TOL = 1e-6
ABS_FLOOR = 1e-9
DENOM_FLOOR = 1e-12
MAX_SAMPLED_COORDS = 200


@dataclass
class GradCheckReport:
    name: str
    analytic: float
    numeric: float
    rel_error: float
    passed: bool


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(DENOM_FLOOR, abs(a) + abs(n))


def check_value(name: str, analytic: float, numeric: float, tol: float = REL_TOL) -> GradCheckReport:
    rel = relative_error(analytic, numeric)
    # 0/0 guard: treat both-tiny as agreement
    passed = rel < tol or (abs(analytic) < ABS_FLOOR and abs(numeric) < ABS_FLOOR)
    return GradCheckReport(name, analytic, numeric, rel, passed)


def finite_diff_grad(f, theta: Tensor, h: float = 1e-6) -> Tensor:
    """Central differences, per-coordinate step h * max(1, |theta_k|)."""
    base = theta.data.copy()
    grad = np.zeros_like(base)
    for k in range(base.size):
        step = h * max(1.0, abs(base[k]))
        plus = base.copy()
        plus[k] += step
        minus = base.copy()
        minus[k] -= step
        fp = f(from_array(plus.reshape(theta.shape)))
        fm = f(from_array(minus.reshape(theta.shape)))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ValueError("loss returned non-finite value during finite differences")
        grad[k] = (fp - fm) / (2.0 * step)
    return from_array(grad.reshape(theta.shape))


def sample_coords(size: int, stream=None, cap: int = MAX_SAMPLED_COORDS):
    """Coordinate subset for large tensors; boundaries always included."""
    if size <= cap or stream is None:
        return list(range(size))
    picked = {0, size - 1}
    while len(picked) < cap:
        picked.add(int(stream.uniform() * size))
    return sorted(picked)


def kpff_dense_jacobians(layer: KpffLayer, inputs: FusionInputs):
    """Explicit dense Jacobians of y = sum_i w_i (x) x_i.

    J_w: (n*r) x (n*n), column (i*n + b) is dy/dw_i[b].
    J_x: (n*r) x (n*r), column (j*r + c) is dy/dx_j[c].
    Built entry-by-entry from the two case formulas (0-based): row a sits
    in block b = a // r with offset c = a - b*r, and
      dy_a/dw_i[b'] = x_i[c] if b' == b else 0
      dy_a/dx_j[c'] = w_j[b] if c' == c else 0
    """
    n, r = inputs.n, inputs.r
    J_w = np.zeros((n * r, n * n))
    J_x = np.zeros((n * r, n * r))
    for a in range(n * r):
        b = a // r
        c = a - b * r
        for i in range(n):
            J_w[a, i * n + b] = inputs.xs[i].data[c]
        for j in range(n):
            J_x[a, j * r + c] = layer.ws[j].data[b]
    return from_array(J_w), from_array(J_x)


# ---------------------------------------------------------------------------
# runnable check suite (backs the `gradcheck` CLI subcommand)


def _quadratic_loss(coef_lin, coef_quad):
    def f(y):
        return float(coef_lin @ y + 0.5 * coef_quad @ (y * y))

    def grad(y):
        return coef_lin + coef_quad * y

    return f, grad


def check_kpff_instance(n, r, seed, tol=REL_TOL, jac_tol=1e-15):
    """One random fusion instance: analytic backward vs finite differences
    and vs the dense-Jacobian oracle."""
    s = stream(seed, f"gradcheck/kpff/{n}x{r}")
    ws = [s.uniform(size=(n,), low=-1, high=1) for _ in range(n)]
    xs = [s.uniform(size=(r,), low=-1, high=1) for _ in range(n)]
    coef_lin = s.uniform(size=(n * r,), low=-1, high=1)
    coef_quad = s.uniform(size=(n * r,), low=-1, high=1)
    loss, loss_grad = _quadratic_loss(coef_lin, coef_quad)

    layer = KpffLayer(ws)
    inputs = FusionInputs(tuple(from_array(x) for x in xs))
    y = kpff_forward(layer, inputs)
    upstream = from_array(loss_grad(y.data))
    layer.zero_grads()
    dxs = kpff_backward(layer, upstream)

    reports = []

    # finite differences on the scalar loss, parameter by parameter
    for i in range(n):
        def f_w(w, i=i):
            trial = KpffLayer([from_array(w.data if j == i else ws[j]) for j in range(n)])
            return loss(kpff_forward(trial, inputs).data)

        num = finite_diff_grad(f_w, from_array(ws[i]))
        for b in range(n):
            reports.append(
                check_value(f"kpff({n}x{r}).w{i}[{b}]", layer.grad_ws[i][b], num.data[b], tol)
            )
    for j in range(n):
        def f_x(x, j=j):
            trial = KpffLayer(ws)
            xs2 = tuple(x if t == j else inputs.xs[t] for t in range(n))
            return loss(kpff_forward(trial, FusionInputs(xs2)).data)

        num = finite_diff_grad(f_x, inputs.xs[j])
        for c in range(r):
            reports.append(
                check_value(f"kpff({n}x{r}).x{j}[{c}]", dxs[j].data[c], num.data[c], tol)
            )

    # dense-Jacobian oracle cross-check
    J_w, J_x = kpff_dense_jacobians(layer, inputs)
    dw_oracle = J_w.view().T @ upstream.data
    dx_oracle = J_x.view().T @ upstream.data
    dw_analytic = np.concatenate([g for g in layer.grad_ws])
    dx_analytic = np.concatenate([d.data for d in dxs])
    reports.append(
        GradCheckReport(
            f"kpff({n}x{r}).Jw-oracle",
            float(np.max(np.abs(dw_analytic))),
            float(np.max(np.abs(dw_oracle))),
            float(np.max(np.abs(dw_analytic - dw_oracle))),
            bool(np.max(np.abs(dw_analytic - dw_oracle)) <= jac_tol * max(1.0, np.max(np.abs(dw_oracle)))),
        )
    )
    reports.append(
        GradCheckReport(
            f"kpff({n}x{r}).Jx-oracle",
            float(np.max(np.abs(dx_analytic))),
            float(np.max(np.abs(dx_oracle))),
            float(np.max(np.abs(dx_analytic - dx_oracle))),
            bool(np.max(np.abs(dx_analytic - dx_oracle)) <= jac_tol * max(1.0, np.max(np.abs(dx_oracle)))),
        )
    )
    return reports


def check_adam_first_step(tol=1e-9):
    """Closed form: bias correction makes the first Adam update lr * sign(g)."""
    from .net import OptimizerState, optimizer_step

    opt = OptimizerState("adam", lr=0.01, weight_decay=0.0)
    theta = from_array([1.0, -2.0, 3.0])
    grad = from_array([0.5, -0.25, 4.0])
    updated = optimizer_step(opt, theta, grad)
    expected = theta.data - 0.01 * np.sign(grad.data)
    err = float(np.max(np.abs(updated.data - expected)))
    return [GradCheckReport("adam.first-step", 0.0, err, err, err < tol)]


def model_loss(model, x, labels):
    from .net import softmax_ce_batch

    logits = model.forward_batch(x, train=False)
    losses, _ = softmax_ce_batch(logits, labels)
    return float(losses.mean())


def check_model(model, x, labels, tol=1e-5, cap=MAX_SAMPLED_COORDS, seed=0):
    """Finite-difference check of every model parameter (dropout off)."""
    _, _, grads = model.forward_backward(x, labels, train=False)
    sampler = stream(seed, "gradcheck/sample")
    reports = []
    for name, arr in model.params().items():
        flat = arr.ravel()
        g = grads[name].ravel()
        for k in sample_coords(flat.size, sampler, cap):
            h = 1e-6 * max(1.0, abs(flat[k]))
            old = flat[k]
            flat[k] = old + h
            fp = model_loss(model, x, labels)
            flat[k] = old - h
            fm = model_loss(model, x, labels)
            flat[k] = old
            reports.append(check_value(f"{name}[{k}]", float(g[k]), (fp - fm) / (2 * h), tol))
    return reports


def run_suite(seed=0, sizes=((1, 1), (2, 3), (3, 4), (4, 8)), with_model=True):
    """The default gradcheck run: fusion instances, Adam, and a toy model."""
    from .net import Model

    reports = []
    for n, r in sizes:
        reports.extend(check_kpff_instance(n, r, seed))
    reports.extend(check_adam_first_step())
    if with_model:
        model = Model(seed=seed, image_size=8, channels=(3, 4), activation="sigmoid",
                      fusion="kpff", num_classes=3, dropout_p=0.0)
        s = stream(seed, "gradcheck/model-data")
        x = s.uniform(size=(4, 1, 8, 8))
        labels = np.array([0, 1, 2, 0])
        reports.extend(check_model(model, x, labels, tol=1e-5, seed=seed))
    return reports


def format_report_table(reports, max_rows=None):
    lines = [f"{'check':<40} {'analytic':>14} {'numeric':>14} {'rel err':>10}  status"]
    shown = reports if max_rows is None else reports[:max_rows]
    for rep in shown:
        lines.append(
            f"{rep.name:<40} {rep.analytic:>14.6g} {rep.numeric:>14.6g} "
            f"{rep.rel_error:>10.2e}  {'ok' if rep.passed else 'FAIL'}"
        )
    if max_rows is not None and len(reports) > max_rows:
        lines.append(f"... {len(reports) - max_rows} more rows")
    failures = [rep for rep in reports if not rep.passed]
    lines.append(f"{len(reports) - len(failures)}/{len(reports)} checks passed")
    return "\n".join(lines)
