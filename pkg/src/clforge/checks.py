"""Numerical checks shared by ``clforge verify`` and the acceptance tests.

Each check returns a :class:`Check` holding the measured values and a
pass/fail flag against a fixed tolerance.  Defaults are the full-scale
settings; ``verify`` runs reduced versions of the cheap ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from clforge import data, linearized as L, metrics, mnist, model, prng, trainer
from clforge.loss import LossFn

QUAD = model.Activation("quadratic")
LINEAR = LossFn("linear")


@dataclass
class Check:
    name: str
    passed: bool
    measured: dict
    extra: dict = field(default_factory=dict, repr=False)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_short(v)}" for k, v in self.measured.items())
        return f"[{status}] {self.name}: {shown}"


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def xor_stream(seed, d, K, n, n_test, sigma_coeff, norm=None):
    return data.build_stream(d, K, n, n_test, sigma_coeff / math.sqrt(d),
                             prng.derive(seed, "data"), norm=norm)


# --- gradients ---------------------------------------------------------------

def _fd_grad(params, x, act, h):
    G = np.empty_like(params.W)
    for i in range(params.m):
        for j in range(params.d):
            old = params.W[i, j]
            params.W[i, j] = old + h
            up = model.forward(params, x, act)
            params.W[i, j] = old - h
            down = model.forward(params, x, act)
            params.W[i, j] = old
            G[i, j] = (up - down) / (2 * h)
    return G


def gradient_check(cases_per_act: int = 20, m: int = 5, d: int = 4, tol: float = 1e-5,
                   grad_fn=model.grad_margin, seed: int = 0) -> Check:
    """Analytic vs central-difference gradient of Phi, relative error in norm."""
    worst = {}
    count = 0
    for kind in ("quadratic", "relu", "gelu"):
        act = model.Activation(kind)
        stream = prng.derive(seed, f"gradcheck/{kind}")
        done, attempt = 0, 0
        worst[kind] = 0.0
        while done < cases_per_act:
            s = stream.child(str(attempt))
            attempt += 1
            params = model.init(m, d, s.child("init"))
            x = prng.gaussian(s.child("x"), d)
            h = 1e-6
            if kind == "relu" and np.min(np.abs(params.W @ x)) < 10 * h * np.abs(x).max():
                continue  # too close to a kink for central differences
            g = grad_fn(params, x, act)
            fd = _fd_grad(params, x, act, h)
            rel = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-300)
            worst[kind] = max(worst[kind], float(rel))
            done += 1
            count += 1
    passed = all(v <= tol for v in worst.values()) and count >= 3 * cases_per_act
    return Check("gradient check", passed, {"cases": count, **{f"max_rel_{k}": v for k, v in worst.items()}})


# --- regularization ------------------------------------------------------------

def regularization_check(eta: float = 0.1, lams=(0.01, 0.1, 1.0), T: int = 200, K: int = 3,
                         d: int = 20, n: int = 50, m: int = 200, t_max: int = 1000,
                         tol: float = 1e-10, alpha_tol: float = 1e-12) -> Check:
    s = xor_stream(0, d, K, n, 10, 0.1)
    gaps = [L.regularized_equivalence_check(s, eta, T, lam, seed=0, m=m) for lam in lams]
    worst_alpha = 0.0
    for lam in lams:
        alpha = 1.0
        for t in range(1, t_max + 1):
            if t > 1:
                alpha = (1 - eta * lam) * alpha + 1
            worst_alpha = max(worst_alpha, abs(L.alpha_t(eta, lam, t) - alpha) / alpha)
    passed = max(gaps) <= tol and worst_alpha <= alpha_tol
    return Check("regularization equivalence", passed,
                 {"max_weight_gap": max(gaps), "alpha_max_rel": worst_alpha})


def closed_form_check(T: int = 200, tol: float = 1e-10) -> Check:
    s = xor_stream(1, 12, 3, 30, 10, 0.1)
    cfg = trainer.TrainConfig(eta=0.1, T=T, m=20)
    a = L.train_linearized(s, cfg, 1, closed_form=True)
    b = L.train_linearized(s, cfg, 1, closed_form=False)
    gap = max(float(np.max(np.abs(x - y))) for x, y in zip(a.deltas, b.deltas))
    return Check("closed form vs iterated linearized GD", gap <= tol, {"max_delta_gap": gap})


# --- forgetting decomposition ---------------------------------------------------

def decomposition_check(reports, tol: float = 1e-12) -> Check:
    worst = 0.0
    count = 0
    for rep in reports:
        for e in rep.entries:
            worst = max(worst, abs(e.f_ts - (e.f_tr + e.gen_gap + e.pre_gap)),
                        abs(e.f_ts_err - (e.f_tr_err + e.gen_gap_err + e.pre_gap_err)))
            count += 1
    return Check("forgetting decomposition identity", worst <= tol and count > 0,
                 {"entries": count, "max_residual": worst})


def _forgetting_runs(seeds, d, K, n, n_test, sigma_coeff, cfg, act, loss):
    out = []
    for seed in seeds:
        s = xor_stream(seed, d, K, n, n_test, sigma_coeff)
        rec = trainer.train_stream(s, cfg, act, loss, seed)
        out.append((s, rec, metrics.forgetting(rec, s, act, loss)))
    return out


def small_decomposition_check(seeds=range(3)) -> Check:
    reports = []
    for kind, lk in (("quadratic", "linear"), ("gelu", "logistic"), ("relu", "hinge")):
        runs = _forgetting_runs(seeds, 12, 3, 40, 100, 0.1,
                                trainer.TrainConfig(eta=1.0, T=20, m=50),
                                model.Activation(kind), LossFn(lk))
        reports += [r[2] for r in runs]
    return decomposition_check(reports)


# --- Figure 1 ------------------------------------------------------------------

def figure1_check(seeds=range(5), n_values=(2500, 5000), d: int = 50, m: int = 1000,
                  eta: float = 2.0, T: int = 200, sigma_coeff: float = 0.1, K: int = 3,
                  n_test: int = 10_000, max_train_err: float = 0.02) -> Check:
    cfg = trainer.TrainConfig(eta=eta, T=T, m=m)
    own_err = []
    test_err = {}
    reports = []
    for n in n_values:
        vals = []
        for s, rec, rep in _forgetting_runs(seeds, d, K, n, n_test, sigma_coeff, cfg, QUAD, LINEAR):
            for k in range(1, K + 1):
                own_err.append(metrics.eval_loss(rec.snapshots[k], s.train[k - 1], QUAD, LINEAR)[1])
            vals.append(metrics.eval_loss(rec.final, s.test[0], QUAD, LINEAR)[1])
            reports.append(rep)
        test_err[n] = float(np.median(vals))
    med = [test_err[n] for n in n_values]
    passed = max(own_err) <= max_train_err and all(b <= a for a, b in zip(med, med[1:]))
    return Check("figure 1 reproduction", passed,
                 {"max_own_train_err": max(own_err), "median_task1_test_err": med},
                 {"reports": reports})


# --- sample-size and width trends -------------------------------------------------

def sample_size_check(seeds=range(16), d: int = 30, m: int = 4000, K: int = 3,
                      eta: float = 90.0, T: int = 10, sigma_coeff: float = 1.0,
                      n_mult=(1, 2, 4), band=(-0.9, -0.1)) -> Check:
    """Slope of median |train-time forgetting of task 1 after task K| against n."""
    cfg = trainer.TrainConfig(eta=eta, T=T, m=m)
    ns = [c * d * d for c in n_mult]
    med = []
    reports = []
    for n in ns:
        runs = _forgetting_runs(seeds, d, K, n, 100, sigma_coeff, cfg, QUAD, LINEAR)
        med.append(float(np.median([abs(r[2].get(1, K).f_tr) for r in runs])))
        reports += [r[2] for r in runs]
    slope = loglog_slope(ns, med)
    return Check("sample-size trend", band[0] <= slope <= band[1],
                 {"n": ns, "median_abs_f_tr": med, "slope": slope}, {"reports": reports})


def width_check(seeds=range(8), d: int = 30, ms=(100, 1000, 3000, 10_000), K: int = 3,
                eta: float = 90.0, T: int = 10, sigma_coeff: float = 1.0,
                n_test: int = 2000, rel_tol: float = 0.3) -> Check:
    """Median test-error forgetting of task 1 after task K across widths."""
    n = 2 * d * d
    med = []
    reports = []
    for m in ms:
        cfg = trainer.TrainConfig(eta=eta, T=T, m=m)
        runs = _forgetting_runs(seeds, d, K, n, n_test, sigma_coeff, cfg, QUAD, LINEAR)
        med.append(float(np.median([r[2].get(1, K).f_ts_err for r in runs])))
        reports += [r[2] for r in runs]
    f100, f1000, f3000, f10000 = med
    scale = max(abs(f3000), abs(f10000))
    rel = 0.0 if scale == 0 else abs(f10000 - f3000) / scale
    passed = f1000 <= f100 and rel < rel_tol
    return Check("width trend", passed, {"m": list(ms), "median_f_ts_err": med,
                                         "rel_change_large_m": rel}, {"reports": reports})


# --- infinite-width law -----------------------------------------------------------

def infinite_width_check(inits: int = 1000, m: int = 1000, probes: int = 20, d: int = 50,
                         K: int = 3, n: int = 500, eta: float = 2.0, T: int = 200,
                         z_tol: float = 5.0) -> Check:
    s = xor_stream(0, d, K, n, probes, 0.1)
    A = [L.signal_matrix(ds) for ds in s.train]
    X = np.vstack([ds.X for ds in s.test])[:probes]
    target = np.array([L.infinite_width_prediction(A, eta, T, x) for x in X])
    cfg = trainer.TrainConfig(eta=eta, T=T, m=m)
    outs = np.empty((inits, len(X)))
    for i in range(inits):
        run = L.train_linearized(s, cfg, seed=i)
        outs[i] = run.final.outputs(X)
    se = outs.std(axis=0, ddof=1) / math.sqrt(inits)
    z = (outs.mean(axis=0) - target) / se
    return Check("infinite-width mean", float(np.max(np.abs(z))) <= z_tol,
                 {"probes": len(X), "max_abs_z": float(np.max(np.abs(z)))})


def finite_width_check(ms=(100, 1000, 10_000), seeds=range(2), d: int = 50, K: int = 3,
                       n: int = 500, eta: float = 2.0, T: int = 200,
                       band=(-0.65, -0.35)) -> Check:
    """Frobenius gap between full-trainer and linearized weights against m."""
    s = xor_stream(0, d, K, n, 10, 0.1)
    gaps = []
    for m in ms:
        cfg = trainer.TrainConfig(eta=eta, T=T, m=m)
        vals = []
        for seed in seeds:
            rec = trainer.train_stream(s, cfg, QUAD, LINEAR, seed)
            lin = L.train_linearized(s, cfg, seed)
            vals.append(float(np.linalg.norm(rec.final.W - lin.final.as_params().W)))
        gaps.append(float(np.median(vals)))
    slope = loglog_slope(ms, gaps)
    return Check("finite vs linearized width scaling", band[0] <= slope <= band[1],
                 {"m": list(ms), "frobenius_gap": gaps, "slope": slope})


# --- U-statistic and NTK margin ----------------------------------------------------

def u_statistic_check(draws: int = 1000, d: int = 50, n: int = 500, sigma_coeff: float = 0.1,
                      z_tol: float = 5.0) -> Check:
    """Same-task probes: mean U vs y/(2 d^2); cross-task probes: |mean U| small."""
    sigma = sigma_coeff / math.sqrt(d)
    norm = 1 / math.sqrt(d)
    K = 3
    specs = [data.task_spec(d, k, sigma, norm=norm) for k in range(1, K + 1)]
    target = 1 / (2 * d * d)

    def probes(spec):
        return [(spec.mu_plus, 1.0), (-spec.mu_plus, 1.0), (spec.mu_minus, -1.0),
                (-spec.mu_minus, -1.0)]

    def mean_u(spec_data, x, y, label):
        U = np.array([L.u_statistic(data.sample_xor(spec_data, n, prng.derive(r, label)), x, y)
                      for r in range(draws)])
        return U.mean(), U.std(ddof=1) / math.sqrt(draws)

    worst_z = 0.0
    for x, y in probes(specs[0]):
        mean, se = mean_u(specs[0], x, y, "ustat/same")
        worst_z = max(worst_z, abs(mean - y * target) / se)
    worst_cross = 0.0
    for x, y in probes(specs[K - 1]):
        mean, _ = mean_u(specs[0], x, y, "ustat/cross")
        worst_cross = max(worst_cross, abs(mean))
    passed = worst_z <= z_tol and worst_cross <= target / 3
    return Check("U-statistic", passed, {"max_abs_z_same": worst_z, "max_abs_cross": worst_cross,
                                         "same_target": target})


def ntk_margin_check(ds=(10, 50, 100), samples: int = 10**6, rel_tol: float = 0.2) -> Check:
    min_z = math.inf
    scaled = []
    for d in ds:
        spec = data.task_spec(d, 1, 0.0)
        centers = [(spec.mu_plus, 1.0), (-spec.mu_plus, 1.0), (spec.mu_minus, -1.0),
                   (-spec.mu_minus, -1.0)]
        vals = []
        for i, (x, y) in enumerate(centers):
            mean, se = L.ntk_margin_mc(spec, x, y, samples, prng.derive(0, f"ntk/{d}/{i}"))
            min_z = min(min_z, mean / se)
            vals.append(mean)
        scaled.append(d * float(np.mean(vals)))
    spread = (max(scaled) - min(scaled)) / min(scaled)
    return Check("NTK margin", min_z >= 3 and spread <= rel_tol,
                 {"min_z": min_z, "d_times_M": scaled, "rel_spread": spread})


# --- MNIST ---------------------------------------------------------------------

def mnist_check(images_path, labels_path, seeds=range(15), n2_values=(50, 200, 800),
                eta: float = 5.0, T: int = 50, m: int = 500, n1: int = 50,
                pairs=((0, 1), (2, 3)), normalize: bool = True) -> Check:
    """Median train-time forgetting of task 1 after task 2 as task 2 grows."""
    act = model.Activation("gelu")
    loss = LossFn("hinge")
    cfg = trainer.TrainConfig(eta=eta, T=T, m=m)
    med = []
    reports = []
    for n2 in n2_values:
        vals = []
        for seed in seeds:
            s = mnist.build_stream(images_path, labels_path, pairs, [n1, n2], 100,
                                   prng.derive(seed, "data"), normalize)
            rec = trainer.train_stream(s, cfg, act, loss, seed)
            rep = metrics.forgetting(rec, s, act, loss)
            vals.append(rep.get(1, 2).f_tr)
            reports.append(rep)
        med.append(float(np.median(vals)))
    passed = all(b <= a for a, b in zip(med, med[1:]))
    return Check("MNIST sample-size trend", passed,
                 {"n_task2": list(n2_values), "median_f_tr": med}, {"reports": reports})


# --- suites ----------------------------------------------------------------------

def quick_suite():
    """Cheap versions of every check; used by ``clforge verify``."""
    return [
        gradient_check,
        regularization_check,
        closed_form_check,
        small_decomposition_check,
        lambda: infinite_width_check(inits=200, m=300, d=20, n=200),
        lambda: finite_width_check(ms=(100, 400, 1600), seeds=range(1), d=20, n=200, T=100),
        lambda: u_statistic_check(draws=300),
        lambda: ntk_margin_check(samples=200_000),
        lambda: sample_size_check(seeds=range(16), m=1000),
    ]


def full_suite(images_path=None, labels_path=None):
    suite = [gradient_check, regularization_check, closed_form_check,
             small_decomposition_check, figure1_check, sample_size_check, width_check,
             infinite_width_check, finite_width_check, u_statistic_check, ntk_margin_check]
    if images_path is not None:
        suite.append(lambda: mnist_check(images_path, labels_path))
    return suite
