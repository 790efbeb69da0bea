import numpy as np
import pytest

from cdfcold.data import AttributeSchema, Panel


def make_panel(values, names=None, known=(), observed=None, pid="p"):
    values = np.asarray(values, dtype=float)
    names = names or [f"a{j}" for j in range(values.shape[1])]
    return Panel(pid, values, AttributeSchema.simple(names, known), observed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def relative_error(a, n, floor=1e-6):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def max_gradient_error(net, X, KF, Y, h=1e-5):
    """Largest relative error between analytic and central-difference gradients."""
    from cdfcold.nn import mse_loss

    _, grads = net.loss_and_grads(X, KF, Y)
    worst = 0.0
    for name, p in net.params.items():
        flat = p.ravel()
        num = np.empty_like(flat)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = mse_loss(net.forward(X, KF), Y)[0]
            flat[i] = old - h
            down = mse_loss(net.forward(X, KF), Y)[0]
            flat[i] = old
            num[i] = (up - down) / (2 * h)
        worst = max(worst, float(relative_error(grads[name].ravel(), num).max()))
    return worst


def random_net(A=5, U=6, H=3, graph_dim=4, lstm_dim=8, layers=2, n_known=2, B=4, seed=0, graph=True):
    from cdfcold.nn import Network

    rng = np.random.default_rng(seed + 100)
    M = (rng.uniform(size=(A, A)) > 0.5).astype(float)
    np.fill_diagonal(M, 0)
    P = (M + np.eye(A)) / (M + np.eye(A)).sum(axis=0)
    net = Network(A, H, list(range(n_known)), list(range(n_known, A)), graph_dim, lstm_dim, layers,
                  P if graph else None, seed=seed)
    X = rng.normal(size=(B, U, A))
    KF = rng.normal(size=(B, H, n_known))
    Y = rng.normal(size=(B, H, A - n_known))
    return net, X, KF, Y


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
