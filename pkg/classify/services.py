"""
One-class and two-class RBF SVMs on standardized metric vectors, and the
repeated random-split protocol that reports P_miss / P_fa.

Positive decision values mean "original"; a decision value of exactly
zero is treated as fake.
"""
import csv
import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from authmetrics.models import METRIC_NAMES, MetricVector
from cdpbench.exceptions import FormatError, ParameterError, ProtocolError
from patterns.services import template_rng
from .models import (
    LABEL_FAKE, LABEL_ORIGINAL, ONE_CLASS, TWO_CLASS,
    ErrorRates, ScoreSet, Standardization, SvmModel,
)
from .solver import max_violation, solve_dual

logger = logging.getLogger(__name__)

KKT_TOL = 1e-6
MIN_ONE_CLASS = 10


def as_matrix(vectors):
    """Stack MetricVectors (or rows of floats) into an (n, d) float array."""
    if isinstance(vectors, np.ndarray):
        return np.atleast_2d(vectors.astype(np.float64))
    rows = [v.as_tuple() if isinstance(v, MetricVector) else tuple(v) for v in vectors]
    return np.atleast_2d(np.array(rows, dtype=np.float64))


def rbf_kernel(A, B, gamma):
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def standardize_fit(train):
    """Zero-mean, unit-variance transform; a constant feature keeps scale 1."""
    X = as_matrix(train)
    if len(X) < 2:
        raise ParameterError('standardization needs at least 2 vectors')
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    constant = scale <= 1e-12
    if constant.any():
        logger.warning('Constant feature(s) at column(s) %s; leaving them unscaled',
                       np.flatnonzero(constant).tolist())
        scale = np.where(constant, 1.0, scale)
    return Standardization(mean=mean, scale=scale)


def _bounds(Z):
    return Z.min(axis=0), Z.max(axis=0)


def _solve(Q, p, y, upper, alpha0, seed):
    """
    Solve the dual with the rows visited in a seeded order, which fixes how
    ties between equally violating pairs are broken. The solution is returned
    in the original row order.
    """
    order = template_rng(seed).permutation(len(y))
    solution = solve_dual(Q[np.ix_(order, order)], p[order], y[order], upper, alpha0[order], tol=KKT_TOL)
    alpha = np.empty_like(solution.alpha)
    gradient = np.empty_like(solution.gradient)
    alpha[order] = solution.alpha
    gradient[order] = solution.gradient
    return replace(solution, alpha=alpha, gradient=gradient)


def _finish(kind, solution, Z, coef, std, gamma, seed, features, **hyper):
    support = np.flatnonzero(solution.alpha > 0)
    return SvmModel(
        kind=kind, gamma=gamma,
        support_vectors=Z[support], dual_coef=coef[support], rho=solution.rho,
        standardization=std, support_indices=support, bounds=_bounds(Z),
        features=tuple(features), seed=seed, iterations=solution.iterations, **hyper,
    )


def train_one_class(train, nu=0.01, gamma=0.3, seed=0, features=METRIC_NAMES):
    """nu-one-class SVM: at most a nu fraction of training points fall outside."""
    X = as_matrix(train)
    if len(X) < MIN_ONE_CLASS:
        raise ParameterError(f'one-class training needs >= {MIN_ONE_CLASS} vectors, got {len(X)}')
    if not 0 < nu <= 1:
        raise ParameterError(f'nu must lie in (0, 1], got {nu}')
    std = standardize_fit(X)
    Z = std.transform(X)
    n = len(Z)

    alpha0 = np.zeros(n)
    full = int(nu * n)
    alpha0[:full] = 1.0
    if full < n:
        alpha0[full] = nu * n - full

    K = rbf_kernel(Z, Z, gamma)
    solution = _solve(K, np.zeros(n), np.ones(n), 1.0, alpha0, seed)
    return _finish(ONE_CLASS, solution, Z, solution.alpha, std, gamma, seed, features, nu=nu)


def train_two_class(pos, neg, C=1.0, gamma=0.3, seed=0, features=METRIC_NAMES):
    """Soft-margin C-SVM with originals as +1 and fakes as -1."""
    P = as_matrix(pos)
    N = as_matrix(neg)
    if len(P) == 0 or len(N) == 0:
        raise ParameterError('both classes need at least one vector')
    if C <= 0:
        raise ParameterError(f'C must be > 0, got {C}')
    X = np.vstack([P, N])
    y = np.concatenate([np.ones(len(P)), -np.ones(len(N))])
    std = standardize_fit(X)
    Z = std.transform(X)

    K = rbf_kernel(Z, Z, gamma)
    Q = (y[:, None] * y[None, :]) * K
    solution = _solve(Q, -np.ones(len(y)), y, C, np.zeros(len(y)), seed)
    return _finish(TWO_CLASS, solution, Z, y * solution.alpha, std, gamma, seed, features, C=C)


def decision_function(model, X):
    """Decision values for raw (unstandardized) feature rows."""
    Z = model.standardization.transform(as_matrix(X))
    if Z.shape[1] != model.n_features:
        raise ParameterError(f'model expects {model.n_features} features, got {Z.shape[1]}')
    if len(model.support_vectors) == 0:
        return np.full(len(Z), -model.rho)
    return rbf_kernel(Z, model.support_vectors, model.gamma) @ model.dual_coef - model.rho


def predict(model, v):
    """(label, decision value) for one vector."""
    score = float(decision_function(model, [v.as_tuple() if isinstance(v, MetricVector) else v])[0])
    return (LABEL_ORIGINAL if score > 0 else LABEL_FAKE), score


def predict_original(model, X):
    """Boolean mask: True where the model accepts the row as original."""
    return decision_function(model, X) > 0


def kkt_residual(model, train, labels=None):
    """
    Recompute the maximal KKT violation of a trained model on its training
    rows (in training order). `labels` are +1/-1 for two-class models.
    """
    X = as_matrix(train)
    Z = model.standardization.transform(X)
    n = len(Z)
    K = rbf_kernel(Z, Z, model.gamma)
    alpha = np.zeros(n)
    if model.kind == ONE_CLASS:
        y = np.ones(n)
        alpha[model.support_indices] = model.dual_coef
        gradient = K @ alpha
        upper = 1.0
    else:
        y = np.asarray(labels, dtype=np.float64)
        alpha[model.support_indices] = model.dual_coef * y[model.support_indices]
        gradient = ((y[:, None] * y[None, :]) * K) @ alpha - 1.0
        upper = model.C
    return max_violation(alpha, gradient, y, np.full(n, upper))


# Protocol

def _scoreset(data):
    if isinstance(data, ScoreSet):
        return data
    X = as_matrix(data)
    return ScoreSet(X, np.arange(len(X)))


def evaluate_protocol(originals, fakes, cfg, test_originals=None, test_fakes=None):
    """
    Repeat `cfg.runs` random splits by code id: train on `cfg.train_size`
    originals (and, for two-class, the fakes of the same codes), then
    measure P_miss on held-out originals and P_fa on held-out fakes.

    `test_originals` / `test_fakes` replace the held-out populations for
    cross-printer evaluation; codes used for training are always excluded.
    """
    columns = list(cfg.feature_index)
    originals = _scoreset(originals).sorted()
    fakes = _scoreset(fakes).sorted()
    test_originals = originals if test_originals is None else _scoreset(test_originals).sorted()
    test_fakes = fakes if test_fakes is None else _scoreset(test_fakes).sorted()

    codes = np.unique(originals.ids)
    if len(codes) <= cfg.train_size:
        raise ProtocolError(f'{len(codes)} original codes cannot give {cfg.train_size} training codes '
                            'plus a held-out set')

    misses, false_accepts = [], []
    for run in range(cfg.runs):
        rng = template_rng(cfg.seed + run)
        train_codes = rng.permutation(codes)[:cfg.train_size]
        in_train = np.isin(originals.ids, train_codes)
        train_x = originals.vectors[in_train][:, columns]

        if cfg.kind == ONE_CLASS:
            model = train_one_class(train_x, nu=cfg.nu, gamma=cfg.gamma, seed=cfg.seed + run,
                                    features=cfg.metric_subset)
        else:
            train_f = fakes.vectors[np.isin(fakes.ids, train_codes)][:, columns]
            if len(train_f) == 0:
                raise ProtocolError('no fakes share codes with the training originals')
            model = train_two_class(train_x, train_f, C=cfg.C, gamma=cfg.gamma, seed=cfg.seed + run,
                                    features=cfg.metric_subset)

        held_o = test_originals.vectors[~np.isin(test_originals.ids, train_codes)][:, columns]
        held_f = test_fakes.vectors[~np.isin(test_fakes.ids, train_codes)][:, columns]
        if len(held_o) == 0 or len(held_f) == 0:
            raise ProtocolError('held-out originals or fakes are empty')

        misses.append(100.0 * np.mean(~predict_original(model, held_o)))
        false_accepts.append(100.0 * np.mean(predict_original(model, held_f)))

    misses = np.array(misses)
    false_accepts = np.array(false_accepts)
    return ErrorRates(
        p_miss=float(misses.mean()), p_miss_std=float(misses.std()),
        p_fa=float(false_accepts.mean()), p_fa_std=float(false_accepts.std()),
        runs=cfg.runs, p_miss_runs=tuple(float(v) for v in misses),
        p_fa_runs=tuple(float(v) for v in false_accepts),
    )


ERROR_COLUMNS = ('metric_subset', 'trained_on', 'P_D', 'P_A',
                 'p_miss_mean', 'p_miss_std', 'p_fa_mean', 'p_fa_std')


def write_error_table(rows, path, header_comment=None):
    """rows: (metric_subset, trained_on, P_D, P_A, ErrorRates)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + '.tmp')
    with open(tmp, 'w', newline='', encoding='utf-8') as f:
        if header_comment:
            f.write(f'# {header_comment}\n')
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(ERROR_COLUMNS)
        for subset, trained_on, p_d, p_a, rates in rows:
            writer.writerow([
                '+'.join(subset), trained_on, p_d, p_a,
                f'{rates.p_miss:.2f}', f'{rates.p_miss_std:.2f}',
                f'{rates.p_fa:.2f}', f'{rates.p_fa_std:.2f}',
            ])
    tmp.replace(path)
    return path


def save_svm(model, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        'kind': model.kind, 'gamma': model.gamma, 'nu': model.nu, 'C': model.C,
        'rho': model.rho, 'features': list(model.features), 'seed': model.seed,
        'iterations': model.iterations,
    }
    with open(path, 'wb') as f:
        np.savez(
            f, meta=np.array(json.dumps(meta, sort_keys=True)),
            support_vectors=model.support_vectors, dual_coef=model.dual_coef,
            support_indices=model.support_indices,
            mean=model.standardization.mean, scale=model.standardization.scale,
            lower=model.bounds[0], upper=model.bounds[1],
        )
    return path


def load_svm(path):
    try:
        data = np.load(path, allow_pickle=False)
    except (FileNotFoundError, OSError, ValueError) as e:
        raise FormatError(f'Cannot read SVM model {path}: {e}')
    with data:
        meta = json.loads(str(data['meta']))
        return SvmModel(
            kind=meta['kind'], gamma=meta['gamma'], nu=meta['nu'], C=meta['C'], rho=meta['rho'],
            support_vectors=np.array(data['support_vectors']), dual_coef=np.array(data['dual_coef']),
            support_indices=np.array(data['support_indices']),
            standardization=Standardization(np.array(data['mean']), np.array(data['scale'])),
            bounds=(np.array(data['lower']), np.array(data['upper'])),
            features=tuple(meta['features']), seed=meta['seed'], iterations=meta['iterations'],
        )
