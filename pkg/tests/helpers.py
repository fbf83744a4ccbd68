"""Shared test utilities: model finite-difference checks, tiny datasets."""

import numpy as np

from fsbench import autodiff as ad
from fsbench.autodiff import Tape
from fsbench.data import SyntheticSpec, generate_synthetic
from fsbench.rng import derive_seed


def model_loss(model, batch, labels, field_scalers=None):
    logit = model.forward(batch, field_scalers=field_scalers)
    return ad.bce_loss(ad.sigmoid(logit), labels)


def grad_check_model(
    model,
    batch,
    labels,
    n_checks=20,
    h=1e-5,
    rtol=1e-4,
    seed=0,
    extra_params=(),
    loss_fn=None,
):
    """Central finite differences vs tape gradients on random parameters.

    Returns the worst relative error seen. ``extra_params`` lets callers
    include gate tensors that live outside the model's own store.
    """
    loss_fn = loss_fn or (lambda: model_loss(model, batch, labels))
    params = [t for _, t in model.params.items()] + list(extra_params)
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    grads = [None if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    rng = np.random.default_rng(derive_seed("grad-check", seed))
    worst = 0.0
    for _ in range(n_checks):
        t = int(rng.integers(0, len(params)))
        i = int(rng.integers(0, params[t].size))
        flat = params[t].data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn().item()
        flat[i] = orig - h
        down = loss_fn().item()
        flat[i] = orig
        fd = (up - down) / (2 * h)
        an = 0.0 if grads[t] is None else grads[t].reshape(-1)[i]
        denom = max(abs(fd), abs(an), 1e-8)
        rel = abs(fd - an) / denom
        worst = max(worst, rel)
        assert rel <= rtol, f"param {t} index {i}: fd={fd} vs tape={an}"
    return worst


def planted_dataset(
    n_fields=6,
    n_informative=2,
    vocab=12,
    n_samples=8000,
    seed=0,
    noise_sigma=0.3,
    ratio=(7, 2, 1),
):
    spec = SyntheticSpec(
        n_fields=n_fields,
        n_informative=n_informative,
        vocab_sizes=tuple([vocab] * n_fields),
        n_samples=n_samples,
        noise_sigma=noise_sigma,
        seed=seed,
        ratio=ratio,
    )
    return generate_synthetic(spec)


def noise_dataset(n_fields=4, vocab=10, n_samples=8000, seed=0):
    spec = SyntheticSpec(
        n_fields=n_fields,
        n_informative=0,
        vocab_sizes=tuple([vocab] * n_fields),
        n_samples=n_samples,
        noise_sigma=0.0,
        seed=seed,
    )
    return generate_synthetic(spec)[0]
