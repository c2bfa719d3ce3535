"""Canonical models used throughout the tests and the self-test."""

import numpy as np

from .model import OUModel, validate_model


def m_ou1() -> OUModel:
    return validate_model([[2.0]], [[-1.0]], label="M_OU1")


def m_self(n: int = 2) -> OUModel:
    return validate_model(np.eye(n), -np.eye(n), label="M_SELF")


def m_kramers() -> OUModel:
    return validate_model([[0.0, 0.0], [0.0, 2.0]], [[0.0, 1.0], [-1.0, -1.0]], label="M_KRAMERS")


def m_ellnn() -> OUModel:
    return validate_model(np.eye(2), [[-1.0, 1.0], [0.0, -1.0]], label="M_ELLNN")


def m_chain3() -> OUModel:
    B = -np.eye(3) + np.diag([1.0, 1.0], k=-1)
    return validate_model(np.diag([2.0, 0.0, 0.0]), B, label="M_CHAIN3")


CANONICAL = {
    "M_OU1": m_ou1,
    "M_SELF": m_self,
    "M_KRAMERS": m_kramers,
    "M_ELLNN": m_ellnn,
    "M_CHAIN3": m_chain3,
}


def canonical_models() -> list[OUModel]:
    return [f() for f in CANONICAL.values()]


def random_stable_model(rng: np.random.Generator, n: int | None = None, rank: int | None = None) -> OUModel:
    """Random (Q, B) with sigma(B) in the open left half-plane and Q of the given rank.

    Controllability is generic, so such models are almost surely hypoelliptic
    when rank >= 1.
    """
    n = int(rng.integers(1, 5)) if n is None else n
    rank = int(rng.integers(1, n + 1)) if rank is None else rank
    G = rng.standard_normal((n, rank))
    Q = G @ G.T
    A = rng.standard_normal((n, n))
    shift = np.max(np.linalg.eigvals(A).real) + rng.uniform(0.3, 1.5)
    B = A - shift * np.eye(n)
    return validate_model(Q, B, label=f"random_n{n}_r{rank}")


def random_mixed_model(rng: np.random.Generator) -> OUModel:
    """Random stable model that is hypoelliptic or not with equal odds.

    Non-hypoelliptic draws put the diffusion inside a proper B-invariant
    subspace and then rotate by a random orthogonal matrix.
    """
    n = int(rng.integers(2, 5))
    if rng.random() < 0.5:
        return random_stable_model(rng, n=n, rank=int(rng.integers(1, n + 1)))
    m = int(rng.integers(1, n))
    B = rng.standard_normal((n, n))
    B[m:, :m] = 0.0
    shift = np.max(np.linalg.eigvals(B).real) + rng.uniform(0.3, 1.5)
    B = B - shift * np.eye(n)
    Q = np.zeros((n, n))
    r = int(rng.integers(0, m + 1))
    if r:
        G = rng.standard_normal((m, r))
        Q[:m, :m] = G @ G.T
    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return validate_model(U @ Q @ U.T, U @ B @ U.T, label=f"random_uncontrollable_n{n}_m{m}")
