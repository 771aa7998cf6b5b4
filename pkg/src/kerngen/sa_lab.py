"""Stochastic-approximation lab: SGD variants on a shared sample stream.

Four update rules around the same stochastic gradient H(W, theta):

  classical   theta_t = theta_{t-1} - mu H(W_t, theta_{t-1})
  batch       theta' advances once per K samples by (mu'/K) sum H(W_j, theta')
  smoothed    exponentially averaged gradient, weight rho
  delayed     gradient evaluated at theta_{t-k}

Progress is counted in consumed samples, never in iterations, so one batch
update "costs" K; all variants driven by the same seed see the identical
sample sequence. The linear-regression objective carries its minimizer,
Hessian, and gradient covariance so steady-state fluctuation levels can be
checked against the Lyapunov prediction mu*trace(Q).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

VARIANT_KINDS = ("classical", "batch", "smoothed", "delayed")

STEADY_CONTRACTION = 1e-3
STEADY_WINDOW = 100_000


@dataclass
class StochasticObjective:
    """A stochastic gradient field plus whatever analytics the model admits.

    grad(W, theta) must return the true gradient of the per-sample loss.
    The optional pieces (mean_grad, theta_star, hessian_at_min C,
    grad_cov_at_min R = E[H H^T at the minimizer]) unlock the average
    trajectory and the steady-state predictor. sample_block(rng, count), when
    given, must consume the rng equivalently to its own repeated use and
    exists so long runs avoid per-sample Python dispatch.
    """

    dim: int
    sample: Callable
    grad: Callable
    mean_grad: Callable | None = None
    theta_star: np.ndarray | None = None
    hessian_at_min: np.ndarray | None = None
    grad_cov_at_min: np.ndarray | None = None
    sample_block: Callable | None = None


@dataclass(frozen=True)
class SAVariant:
    """One update rule; extra knobs must be present exactly when used."""

    kind: str
    mu: float
    K: int | None = None
    rho: float | None = None
    delay_k: int | None = None

    def __post_init__(self):
        if self.kind not in VARIANT_KINDS:
            raise ValueError(f"kind must be one of {VARIANT_KINDS}, got {self.kind!r}")
        if self.mu < 0.0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        need = {"batch": "K", "smoothed": "rho", "delayed": "delay_k"}.get(self.kind)
        for name in ("K", "rho", "delay_k"):
            val = getattr(self, name)
            if name == need:
                if val is None:
                    raise ValueError(f"{self.kind} variant requires {name}")
            elif val is not None:
                raise ValueError(f"{name} is not a parameter of the {self.kind} variant")
        if self.kind == "batch" and self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.kind == "smoothed" and not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0,1), got {self.rho}")
        if self.kind == "delayed" and self.delay_k < 1:
            raise ValueError(f"delay_k must be >= 1, got {self.delay_k}")

    def label(self) -> str:
        if self.kind == "batch":
            return f"batch:{self.K}"
        if self.kind == "smoothed":
            return f"smooth:{self.rho:g}"
        if self.kind == "delayed":
            return f"delay:{self.delay_k}"
        return "classical"

    def effective_mu(self) -> float:
        """Per-sample learning rate: mu'/K for batch, mu otherwise.

        This is the rate that governs both the per-sample contraction of the
        mean dynamics and the steady-state fluctuation level mu_eff*Q.
        """
        if self.kind == "batch":
            return self.mu / self.K
        return self.mu


@dataclass(frozen=True)
class RegressionModel:
    """y = theta_star . X + w with X ~ N(0, I) and w ~ N(0, noise_var)."""

    theta_star: np.ndarray
    noise_var: float

    def __post_init__(self):
        if np.asarray(self.theta_star).ndim != 1:
            raise ValueError("theta_star must be a vector")
        if self.noise_var < 0.0:
            raise ValueError(f"noise_var must be >= 0, got {self.noise_var}")


def regression_objective(model: RegressionModel) -> StochasticObjective:
    """The least-squares objective E[(y - theta.X)^2] as a stochastic field.

    grad is the true gradient H = -2(y - theta.X) X; the textbook LMS update
    theta + mu(y - theta.X)X therefore corresponds to half this mu. At the
    minimizer: mean Hessian C = 2I and gradient covariance R = 4 sigma^2 I.
    """
    star = np.asarray(model.theta_star, dtype=np.float64)
    d = star.shape[0]
    sd = float(np.sqrt(model.noise_var))

    def sample(rng):
        X = rng.standard_normal(d)
        return X, float(star @ X) + sd * float(rng.standard_normal())

    def sample_block(rng, count):
        X = rng.standard_normal((count, d))
        y = X @ star + sd * rng.standard_normal(count)
        return list(zip(X, y))

    def grad(W, theta):
        X, y = W
        return -2.0 * (y - theta @ X) * X

    def mean_grad(theta):
        return 2.0 * (theta - star)

    return StochasticObjective(
        dim=d,
        sample=sample,
        grad=grad,
        mean_grad=mean_grad,
        theta_star=star,
        hessian_at_min=2.0 * np.eye(d),
        grad_cov_at_min=4.0 * model.noise_var * np.eye(d),
        sample_block=sample_block,
    )


def _draw_samples(obj: StochasticObjective, count: int, seed: int):
    rng = np.random.default_rng(seed)
    if obj.sample_block is not None:
        return obj.sample_block(rng, count)
    return [obj.sample(rng) for _ in range(count)]


def run_variant(
    obj: StochasticObjective,
    v: SAVariant,
    steps_in_samples: int,
    seed: int,
    theta0: np.ndarray | None = None,
    return_internals: bool = False,
):
    """Run one variant for a budget of consumed samples.

    Returns a (steps+1, dim) trajectory with one row per consumed sample,
    row 0 being theta0 (zeros by default). The batch variant holds theta
    through each block and leaves a trailing partial block unapplied, though
    its gradients are still computed and counted. With return_internals=True
    (smoothed only) also returns the list of smoothed gradients H~_t.
    """
    if return_internals and v.kind != "smoothed":
        raise ValueError("internals are only recorded for the smoothed variant")
    steps = int(steps_in_samples)
    if steps < 0:
        raise ValueError(f"steps_in_samples must be >= 0, got {steps}")
    theta = np.zeros(obj.dim) if theta0 is None else np.array(theta0, dtype=np.float64)
    samples = _draw_samples(obj, steps, seed)
    traj = np.empty((steps + 1, obj.dim))
    traj[0] = theta
    grad = obj.grad

    if v.kind == "classical":
        for t in range(1, steps + 1):
            theta = theta - v.mu * grad(samples[t - 1], theta)
            traj[t] = theta
    elif v.kind == "batch":
        scale = v.mu / v.K
        acc = np.zeros(obj.dim)
        fill = 0
        base = theta
        for t in range(1, steps + 1):
            acc += grad(samples[t - 1], base)
            fill += 1
            if fill == v.K:
                theta = base - scale * acc
                base = theta
                acc = np.zeros(obj.dim)
                fill = 0
            traj[t] = theta
    elif v.kind == "smoothed":
        smoothed = np.zeros(obj.dim)
        internals = []
        for t in range(1, steps + 1):
            smoothed = v.rho * smoothed + (1.0 - v.rho) * grad(samples[t - 1], theta)
            theta = theta - v.mu * smoothed
            traj[t] = theta
            if return_internals:
                internals.append(smoothed.copy())
        if return_internals:
            return traj, internals
    else:
        k = v.delay_k
        for t in range(1, steps + 1):
            theta = theta - v.mu * grad(samples[t - 1], traj[max(0, t - k)])
            traj[t] = theta
    return traj


def relative_diff_power(theta_a, theta_b, theta_star) -> float:
    """2|a-b|^2 / (|a-star|^2 + |b-star|^2); lies in [0, 4]."""
    a = np.asarray(theta_a, dtype=np.float64)
    b = np.asarray(theta_b, dtype=np.float64)
    star = np.asarray(theta_star, dtype=np.float64)
    if a.shape != b.shape or a.shape != star.shape:
        raise ValueError(
            f"shape mismatch: {a.shape} vs {b.shape} vs theta_star {star.shape}"
        )
    da = a - star
    db = b - star
    denom = float(da @ da + db @ db)
    if denom == 0.0:
        raise ValueError("relative difference power undefined: both arguments equal theta_star")
    d = a - b
    return 2.0 * float(d @ d) / denom


def average_trajectory(obj: StochasticObjective, mu: float, steps: int, theta0) -> np.ndarray:
    """Deterministic recursion on the expected gradient; (steps+1, dim)."""
    if obj.mean_grad is None:
        raise ValueError("objective does not provide a mean gradient")
    theta = np.array(theta0, dtype=np.float64)
    traj = np.empty((steps + 1, obj.dim))
    traj[0] = theta
    for t in range(1, steps + 1):
        theta = theta - mu * obj.mean_grad(theta)
        traj[t] = theta
    return traj


def solve_lyapunov(C: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Unique symmetric Q with C Q + Q C^T = R, by Kronecker vectorization.

    Requires every eigenvalue of C to have positive real part (then all
    eigenvalue sums lambda_i + lambda_j are nonzero and the solution is
    unique). Intended for the lab's small dimensions.
    """
    C = np.asarray(C, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape != R.shape:
        raise ValueError(f"C and R must be square and same shape, got {C.shape} and {R.shape}")
    if not np.allclose(R, R.T, rtol=0.0, atol=1e-10 * max(1.0, float(np.abs(R).max()))):
        raise ValueError("R must be symmetric")
    eig = np.linalg.eigvals(C)
    if float(eig.real.min()) <= 0.0:
        raise ValueError(
            f"C must have eigenvalues with positive real part, got min Re = {eig.real.min():.6g}"
        )
    d = C.shape[0]
    eye = np.eye(d)
    coeff = np.kron(eye, C) + np.kron(C, eye)
    vec_q = np.linalg.solve(coeff, R.reshape(-1, order="F"))
    Q = vec_q.reshape((d, d), order="F")
    Q = 0.5 * (Q + Q.T)
    residual = np.linalg.norm(C @ Q + Q @ C.T - R)
    if residual > 1e-10 * max(np.linalg.norm(R), 1e-300):
        raise ArithmeticError(f"Lyapunov residual too large: {residual:.3e}")
    return Q


def predicted_steady_state(mu: float, Q: np.ndarray) -> float:
    """mu * trace(Q): the predicted steady-state E|theta - theta_star|^2."""
    return float(mu) * float(np.trace(Q))


def steady_state_start(obj: StochasticObjective, mu: float) -> int:
    """Sample index where the mean-trajectory transient is considered over.

    Declared once the slowest mode's contraction (1 - mu*lambda_min(C))^t
    falls below 1e-3. Requires the Hessian at the minimizer.
    """
    if obj.hessian_at_min is None:
        raise ValueError("objective does not provide a Hessian at the minimizer")
    lam_min = float(np.linalg.eigvalsh(0.5 * (obj.hessian_at_min + obj.hessian_at_min.T)).min())
    factor = 1.0 - mu * lam_min
    if factor <= 0.0:
        return 0
    if factor >= 1.0:
        raise ValueError(f"mean dynamics do not contract for mu={mu}")
    return int(np.ceil(np.log(STEADY_CONTRACTION) / np.log(factor)))


@dataclass
class ComparisonReport:
    """Shared-stream comparison of variants against the first one listed."""

    labels: list[str]
    baseline: str
    samples: int
    steady_start: int
    err_power: dict
    rel_diff: dict
    steady_err_power: dict
    steady_rel_diff: dict
    lyapunov_prediction: float | None

    def summary_dict(self) -> dict:
        return {
            "baseline": self.baseline,
            "samples": self.samples,
            "steady_start": self.steady_start,
            "steady_err_power": {k: float(v) for k, v in self.steady_err_power.items()},
            "steady_rel_diff": {k: float(v) for k, v in self.steady_rel_diff.items()},
            "lyapunov_prediction": self.lyapunov_prediction,
        }


def _dedup_labels(variants) -> list:
    labels = []
    seen = {}
    for v in variants:
        base = v.label()
        seen[base] = seen.get(base, 0) + 1
        labels.append(base if seen[base] == 1 else f"{base}#{seen[base]}")
    return labels


def compare_variants(
    obj: StochasticObjective,
    variants: list,
    samples: int,
    seed: int,
    theta0: np.ndarray | None = None,
) -> ComparisonReport:
    """Run every variant on the identical sample stream and compare.

    The first variant is the baseline; each alternative gets a per-sample
    relative_diff_power series against it. Steady-state means are taken
    from the transient cutoff (computed at the baseline's effective rate)
    over at most STEADY_WINDOW samples. Requires theta_star.
    """
    if len(variants) < 1:
        raise ValueError("need at least one variant")
    if obj.theta_star is None:
        raise ValueError("comparison metrics require theta_star")
    star = obj.theta_star
    labels = _dedup_labels(variants)
    trajs = [run_variant(obj, v, samples, seed, theta0=theta0) for v in variants]

    err_power = {}
    for lab, traj in zip(labels, trajs):
        diff = traj - star
        err_power[lab] = np.sum(diff * diff, axis=1)

    base_label = labels[0]
    rel_diff = {}
    for lab, traj in zip(labels[1:], trajs[1:]):
        d = trajs[0] - traj
        num = 2.0 * np.sum(d * d, axis=1)
        den = err_power[base_label] + err_power[lab]
        with np.errstate(invalid="ignore", divide="ignore"):
            series = np.where(den > 0.0, num / den, 0.0)
        rel_diff[lab] = series

    t_star = (steady_state_start(obj, variants[0].effective_mu())
              if obj.hessian_at_min is not None else samples // 2)
    t0 = min(t_star, samples)
    t1 = min(samples + 1, t0 + STEADY_WINDOW)
    steady_err = {lab: float(np.mean(series[t0:t1])) for lab, series in err_power.items()}
    steady_rel = {lab: float(np.mean(series[t0:t1])) for lab, series in rel_diff.items()}

    prediction = None
    if obj.hessian_at_min is not None and obj.grad_cov_at_min is not None:
        Q = solve_lyapunov(obj.hessian_at_min, obj.grad_cov_at_min)
        prediction = predicted_steady_state(variants[0].effective_mu(), Q)

    return ComparisonReport(
        labels=labels,
        baseline=base_label,
        samples=samples,
        steady_start=t0,
        err_power=err_power,
        rel_diff=rel_diff,
        steady_err_power=steady_err,
        steady_rel_diff=steady_rel,
        lyapunov_prediction=prediction,
    )


def write_bench_csv(report: ComparisonReport, path: str, every: int = 1) -> None:
    """One row per (sample, variant): sample_index, variant, err_power,
    rel_diff_power. The baseline's rel_diff_power field is left empty.
    `every` thins the output to one sample in that many."""
    if every < 1:
        raise ValueError(f"every must be >= 1, got {every}")
    with open(path, "w") as fh:
        fh.write("sample_index,variant,err_power,rel_diff_power\n")
        for t in range(0, report.samples + 1, every):
            for lab in report.labels:
                rel = report.rel_diff.get(lab)
                rel_field = "" if rel is None else repr(float(rel[t]))
                fh.write(f"{t},{lab},{float(report.err_power[lab][t])!r},{rel_field}\n")
