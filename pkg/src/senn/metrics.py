"""Quantitative interpretability evaluation: faithfulness by feature
removal, continuous / black-box / sample-based local Lipschitz estimation of
explanation maps, and adversarial explanation search."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import autodiff as ad
from .autodiff import Tensor
from .model import SennModel


# ---------------------------------------------------------------------------
# faithfulness


@dataclass
class FaithfulnessReport:
    per_point: list            # correlations, missing points excluded
    n_missing: int
    method: str                # "senn" or explainer name
    removal_mode: str          # "zero-theta" or "baseline-substitute"
    correlation: str           # "pearson" or "spearman"
    q1: float
    median: float
    q3: float
    mean: float


def _correlations(scores, drops):
    out = {}
    for name, fn in (("pearson", stats.pearsonr), ("spearman", stats.spearmanr)):
        if np.std(scores) == 0 or np.std(drops) == 0:
            out[name] = None  # undefined, recorded as missing
        else:
            out[name] = float(fn(scores, drops).statistic)
    return out


def faithfulness(model, x, explainer=None, baseline=None):
    """Correlation between relevance scores and prediction-probability drops
    under removal.

    With `explainer=None` the model's own contributions are scored and
    removal zeroes each concept's coefficient vector; with an explainer,
    removal substitutes the baseline value for the feature. Returns a dict
    with 'pearson', 'spearman' (None when undefined), 'scores', 'drops'.
    """
    x = np.asarray(x, dtype=np.float64)
    probs = model.predict_proba(x.reshape(1, -1))[0]
    y_hat = int(np.argmax(probs))
    if explainer is None:
        expl = model.explain(x)
        scores = expl.contributions[:, y_hat]
        logits = model.decision_function(x.reshape(1, -1))[0]
        if model.aggregator.kind == "positive-affine":
            contrib = expl.contributions * model.aggregator.weights[:, None]
        else:
            contrib = expl.contributions
        drops = np.empty(len(scores))
        for i in range(len(scores)):
            removed = logits - contrib[i]
            drops[i] = probs[y_hat] - _softmax_np(removed)[y_hat]
        mode = "zero-theta"
        method = "senn"
    else:
        att = explainer(model, x)
        scores = att.scores
        base = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=np.float64)
        occluded = np.tile(x, (x.size, 1))
        occluded[np.arange(x.size), np.arange(x.size)] = base
        drops = probs[y_hat] - model.predict_proba(occluded)[:, y_hat]
        mode = "baseline-substitute"
        method = att.method
    if len(scores) < 3:
        raise ValueError("faithfulness needs at least 3 features/concepts")
    result = _correlations(scores, drops)
    result.update(scores=scores, drops=drops, removal_mode=mode, method=method,
                  predicted_class=y_hat)
    return result


def _softmax_np(z):
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def aggregate_faithfulness(model, X, explainer=None, baseline=None, correlation="pearson"):
    """Per-point faithfulness correlations with box-plot summary statistics."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    values, missing = [], 0
    method = "senn"
    for x in X:
        r = faithfulness(model, x, explainer=explainer, baseline=baseline)
        method = r["method"]
        c = r[correlation]
        if c is None:
            missing += 1
        else:
            values.append(c)
    if not values:
        raise ValueError("all faithfulness correlations undefined")
    arr = np.asarray(values)
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    return FaithfulnessReport(values, missing, method,
                              "zero-theta" if explainer is None else "baseline-substitute",
                              correlation, float(q1), float(med), float(q3), float(arr.mean()))


# ---------------------------------------------------------------------------
# stability / local Lipschitz estimation


@dataclass
class StabilityReport:
    point: np.ndarray
    L_hat: float
    argmax_point: np.ndarray
    epsilon: float
    strategy: str              # "gradient-ascent", "black-box", "discrete"
    budget: int                # explainer/model evaluations spent
    explanation_pair: tuple    # (f_expl(x), f_expl(x*))
    flags: list = field(default_factory=list)

    def recompute(self, h=None):
        """L_hat re-derived from the stored pair (reproducibility check)."""
        e0, e1 = self.explanation_pair
        num = np.linalg.norm(np.asarray(e0) - np.asarray(e1))
        a, b = (self.point, self.argmax_point) if h is None else (h(self.point), h(self.argmax_point))
        den = np.linalg.norm(np.asarray(a) - np.asarray(b))
        return 0.0 if den == 0 else num / den


def _theta_flat(model, x_t):
    batch = ad.reshape(x_t, (1, x_t.shape[0]))
    _, h, theta = model.forward(batch)
    k, m = model.encoder.k, model.m
    return ad.reshape(theta, (k * m,)), ad.reshape(h, (model.encoder.k,))


def lipschitz_gradient_ascent(model, x, epsilon, steps=200, lr=0.01,
                              penalty=10.0, restarts=3, seed=0):
    """Continuous local Lipschitz estimate for the model's own explanation
    map theta(.), by ascent on the change ratio with a soft ball constraint;
    the final point is projected back into the epsilon-ball.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if not isinstance(model, SennModel):
        raise TypeError("gradient ascent requires a differentiable senn model")
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x_ref = Tensor(x)
    theta0, h0 = _theta_flat(model, x_ref)
    theta0 = theta0.detach()
    h0 = h0.detach()
    tiny = 1e-12
    best = (-np.inf, x.copy())
    evals = 0
    for _ in range(max(1, restarts)):
        direction = rng.standard_normal(x.size)
        direction *= (0.5 * epsilon * rng.uniform() ** (1.0 / x.size)) / \
            max(np.linalg.norm(direction), tiny)
        xp = Tensor(x + direction, requires_grad=True)
        for _ in range(steps):
            theta_p, h_p = _theta_flat(model, xp)
            num = ad.sqrt(ad.norm_sq(ad.sub(theta_p, theta0)) + tiny)
            den = ad.sqrt(ad.norm_sq(ad.sub(h_p, h0)) + tiny)
            dist = ad.sqrt(ad.norm_sq(ad.sub(xp, x_ref)) + tiny)
            excess = ad.relu(ad.sub(dist, epsilon))
            objective = ad.sub(ad.div(num, den), ad.mul(ad.mul(excess, excess), penalty))
            g = ad.grad(objective, xp)
            xp = Tensor(xp.data + lr * g.data, requires_grad=True)
            evals += 1
        # project into the ball and score the exact ratio
        delta = xp.data - x
        dist = np.linalg.norm(delta)
        if dist > epsilon:
            delta *= epsilon / dist
        cand = x + delta
        ratio, _ = _exact_ratio(model, x, cand, theta0.data, h0.data)
        if ratio is not None and ratio > best[0]:
            best = (ratio, cand)
    x_star = best[1]
    ratio, degenerate = _exact_ratio(model, x, x_star, theta0.data, h0.data)
    flags = ["degenerate-denominator"] if degenerate else []
    theta_star, _ = _theta_flat(model, Tensor(x_star))
    return StabilityReport(x, 0.0 if ratio is None else ratio, x_star, epsilon,
                           "gradient-ascent", evals,
                           (theta0.data.copy(), theta_star.data.copy()), flags)


def _exact_ratio(model, x, x_star, theta0, h0):
    with ad.no_grad():
        theta_s, h_s = _theta_flat(model, Tensor(np.asarray(x_star, dtype=np.float64)))
    den = np.linalg.norm(h_s.data - h0)
    num = np.linalg.norm(theta_s.data - theta0)
    if den < 1e-12:
        return (0.0 if num < 1e-12 else None), True
    return num / den, False


def _latin_hypercube(rng, n_points, dim):
    # stratified [0,1)^dim sample, one point per stratum along each axis
    u = (rng.permuted(np.tile(np.arange(n_points), (dim, 1)), axis=1).T
         + rng.uniform(size=(n_points, dim))) / n_points
    return u


def lipschitz_black_box(f_expl, x, epsilon, budget, seed=0, h=None):
    """Derivative-free estimate of the explanation-change ratio maximum over
    the epsilon-ball, spending exactly `budget` explainer evaluations
    (including the reference evaluation at x). Two phases: Latin-hypercube
    exploration, then coordinate refinement around the incumbent.

    `h` maps inputs to the denominator space; identity (raw inputs) when None.
    """
    if budget < 2:
        raise ValueError("budget must be >= 2")
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    rng = np.random.default_rng(seed)
    h_fn = (lambda z: z) if h is None else h
    e_ref = np.asarray(f_expl(x), dtype=np.float64)
    h_ref = np.asarray(h_fn(x), dtype=np.float64)
    evals = 1
    flags = []

    def ratio_at(z):
        nonlocal evals
        e = np.asarray(f_expl(z), dtype=np.float64)
        evals += 1
        den = np.linalg.norm(np.asarray(h_fn(z), dtype=np.float64) - h_ref)
        if den < 1e-12:
            return -np.inf, e
        return np.linalg.norm(e - e_ref) / den, e

    def clip_to_ball(z):
        d = z - x
        r = np.linalg.norm(d)
        return x + d * (epsilon / r) if r > epsilon else z

    best_ratio, best_x, best_e = -np.inf, x.copy(), e_ref.copy()
    n_explore = max(1, int(0.6 * (budget - 1)))
    cube = _latin_hypercube(rng, n_explore, n) * 2.0 - 1.0  # [-1,1]^n
    for row in cube:
        if evals >= budget:
            break
        z = clip_to_ball(x + epsilon * row)
        r, e = ratio_at(z)
        if r > best_ratio:
            best_ratio, best_x, best_e = r, z, e
    step = 0.25 * epsilon
    while evals < budget:
        coord = int(rng.integers(n))
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        z = best_x.copy()
        z[coord] += sign * step
        z = clip_to_ball(z)
        r, e = ratio_at(z)
        if r > best_ratio:
            best_ratio, best_x, best_e = r, z, e
        else:
            step = max(step * 0.9, 0.01 * epsilon)
    if not np.isfinite(best_ratio):
        best_ratio, best_x, best_e = 0.0, x.copy(), e_ref.copy()
        flags.append("degenerate-denominator")
    return StabilityReport(x, float(best_ratio), best_x, epsilon, "black-box",
                           evals, (e_ref, best_e), flags)


def lipschitz_discrete(f_expl, x, X, epsilon, h=None):
    """Exact maximum of the explanation-change ratio over the dataset points
    within L2 distance epsilon of x (brute force)."""
    x = np.asarray(x, dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    h_fn = (lambda z: z) if h is None else h
    dists = np.linalg.norm(X - x, axis=1)
    neighbors = X[(dists <= epsilon) & (dists > 0)]
    e_ref = np.asarray(f_expl(x), dtype=np.float64)
    h_ref = np.asarray(h_fn(x), dtype=np.float64)
    if len(neighbors) == 0:
        return StabilityReport(x, 0.0, x.copy(), epsilon, "discrete", 1,
                               (e_ref, e_ref.copy()), ["empty-neighborhood"])
    best_ratio, best_x, best_e = -np.inf, x.copy(), e_ref.copy()
    evals = 1
    degenerate = True
    for z in neighbors:
        e = np.asarray(f_expl(z), dtype=np.float64)
        evals += 1
        den = np.linalg.norm(np.asarray(h_fn(z), dtype=np.float64) - h_ref)
        if den < 1e-12:
            continue
        degenerate = False
        r = np.linalg.norm(e - e_ref) / den
        if r > best_ratio:
            best_ratio, best_x, best_e = r, z.copy(), e
    if degenerate:
        return StabilityReport(x, 0.0, x.copy(), epsilon, "discrete", evals,
                               (e_ref, e_ref.copy()), ["degenerate-denominator"])
    return StabilityReport(x, float(best_ratio), best_x, epsilon, "discrete",
                           evals, (e_ref, best_e))


def adversarial_pair(model_or_explainer, x, epsilon=None, dataset=None,
                     budget=200, seed=0, h=None, **kwargs):
    """The maximizing (x, x*) pair with both explanations, for side-by-side
    reporting. Chooses the search strategy from the arguments: a SennModel
    gets gradient ascent, a callable explainer gets black-box search, and a
    dataset triggers the discrete variant."""
    if dataset is not None:
        return lipschitz_discrete(model_or_explainer, x, dataset, epsilon, h=h)
    if isinstance(model_or_explainer, SennModel):
        return lipschitz_gradient_ascent(model_or_explainer, x, epsilon, seed=seed, **kwargs)
    return lipschitz_black_box(model_or_explainer, x, epsilon, budget, seed=seed, h=h)


def gaussian_perturbation_probe(model, explainer, x, sigma, seed=0):
    """Single-draw ratio ||e(x) - e(x~)|| / ||x - x~|| under Gaussian noise,
    plus the model's prediction-probability change for the predicted class."""
    x = np.asarray(x, dtype=np.float64)
    if sigma == 0:
        return {"ratio": None, "prob_change": 0.0, "flags": ["zero-sigma"]}
    rng = np.random.default_rng(seed)
    x_tilde = x + sigma * rng.standard_normal(x.size)
    e0 = np.asarray(explainer(x), dtype=np.float64)
    e1 = np.asarray(explainer(x_tilde), dtype=np.float64)
    dist = np.linalg.norm(x - x_tilde)
    p0 = model.predict_proba(x.reshape(1, -1))[0]
    y_hat = int(np.argmax(p0))
    p1 = model.predict_proba(x_tilde.reshape(1, -1))[0]
    return {
        "ratio": float(np.linalg.norm(e0 - e1) / dist),
        "prob_change": float(abs(p0[y_hat] - p1[y_hat])),
        "flags": [],
        "perturbed": x_tilde,
    }
