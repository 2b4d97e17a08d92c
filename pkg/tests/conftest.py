import numpy as np
import pytest
import torch
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tone(freq, n=16000, fs=16000, amp=1.0):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / fs)


def gradient_error(module, loss_of, n_coords=24, seed=0, eps=1e-6):
    """Relative error between autograd and central differences on random parameter coordinates."""
    from torch.nn.utils import parameters_to_vector, vector_to_parameters

    from haaqinet.predictor import numeric_gradient, relative_error

    params = [p for p in module.parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss_of(), params, allow_unused=True)
    analytic = torch.cat([torch.zeros_like(p).reshape(-1) if g is None else g.reshape(-1)
                          for p, g in zip(params, grads)]).detach().numpy()
    base = parameters_to_vector(params).detach().clone()
    idx = np.random.default_rng(seed).choice(base.numel(), size=min(n_coords, base.numel()), replace=False)

    def f(v):
        with torch.no_grad():
            vector_to_parameters(torch.as_tensor(v), params)
            return loss_of().item()

    try:
        numeric = numeric_gradient(f, base.numpy(), eps=eps, indices=idx)
    finally:
        with torch.no_grad():
            vector_to_parameters(base, params)
    return relative_error(analytic[idx], numeric)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
