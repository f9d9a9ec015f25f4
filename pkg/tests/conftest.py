import numpy as np
import pytest

from ssmrl import autodiff as ad


def fd_gradcheck(make_loss, tensors, h=1e-4, tol=1e-4):
    """Five-point central finite-difference check of d(loss)/d(tensor).

    The fourth-order stencil keeps truncation error ~h^4 while the larger
    step keeps floating-point cancellation noise ~eps|f|/h small, so even
    entries with tiny gradients are measured accurately.  make_loss() must
    rebuild the scalar loss Tensor from the (mutated) tensors on each call.
    Returns the worst relative error.
    """
    for t in tensors:
        t.grad = None
    with ad.Tape() as tape:
        loss = make_loss()
        grads = tape.backward(loss)
    worst = 0.0
    # the stencil's own rounding noise: differences below this level are
    # unmeasurable by finite differences, whatever the true gradient is
    atol = 30.0 * np.finfo(float).eps * max(abs(float(loss.data)), 1.0) / h
    for t in tensors:
        g = t.grad
        assert g is not None, "missing gradient"
        flat = t.data.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        idx = np.linspace(0, flat.size - 1, min(flat.size, 8)).astype(int)
        for i in idx:
            orig = flat[i]

            def at(x):
                flat[i] = x
                return float(make_loss().data)

            def stencil(step):
                return (-at(orig + 2 * step) + 8 * at(orig + step)
                        - 8 * at(orig - step) + at(orig - 2 * step)) \
                    / (12 * step)

            num, num_half = stencil(h), stencil(h / 2)
            flat[i] = orig
            # a kink (e.g. relu) inside the stencil makes the FD estimate
            # itself meaningless: require the two step sizes to agree
            # before using it as a reference
            scale = max(abs(num), abs(num_half), 1e-8)
            if abs(num - num_half) > 10 * tol * scale:
                continue
            denom = max(abs(num_half), abs(gflat[i]), 1e-8)
            excess = max(0.0, abs(num_half - gflat[i]) - atol)
            worst = max(worst, excess / denom)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(0)
