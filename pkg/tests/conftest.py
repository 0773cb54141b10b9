import numpy as np
import pytest

from graf.attention import AttentionBundle
from graf.autodiff import Tape, Tensor
from graf.datasets import planted_bundle
from graf.graph import AssociationNetwork


def finite_difference(loss_fn, param: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``loss_fn()`` with respect to ``param``."""
    out = np.zeros_like(param.values)
    it = np.nditer(param.values, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = param.values[idx]
        param.values[idx] = orig + step
        up = float(loss_fn().values)
        param.values[idx] = orig - step
        down = float(loss_fn().values)
        param.values[idx] = orig
        out[idx] = (up - down) / (2 * step)
    return out


def analytic_gradients(loss_fn, params):
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    return [p.grad.copy() for p in params]


def relative_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def max_gradient_error(loss_fn, params) -> float:
    grads = analytic_gradients(loss_fn, params)
    return max(relative_error(g, finite_difference(loss_fn, p)) for g, p in zip(grads, params))


def random_networks(rng, n, phi, p=None):
    """``phi`` random association networks over ``n`` nodes (self-loops included)."""
    nets = []
    for k in range(phi):
        density = rng.uniform(0.05, 0.6) if p is None else p
        upper = np.triu(rng.random((n, n)) < density, 1)
        src, dst = np.nonzero(upper)
        nets.append(AssociationNetwork.from_pairs(f"N{k}", n, src, dst))
    return nets


def random_attention(rng, nets) -> AttentionBundle:
    """Attention with a random softmax per neighbourhood and a random simplex point for beta."""
    alpha = {}
    for net in nets:
        raw = np.exp(rng.normal(size=net.num_arcs) * 2)
        alpha[net.name] = raw / np.bincount(net.edges.rows, weights=raw)[net.edges.rows]
    beta = rng.dirichlet(np.ones(len(nets))) if len(nets) > 1 else [1.0]
    return AttentionBundle(alpha, {net.name: float(b) for net, b in zip(nets, beta)},
                           {net.name: net.edges for net in nets})


@pytest.fixture(scope="session")
def planted():
    return planted_bundle(n=90, n_features=12, seed=3)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
