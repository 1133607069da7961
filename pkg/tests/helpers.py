import torch


def random_ids(batch, length, vocab=20, generator=None):
    """Content ids in [4, vocab) followed by EOS."""
    ids = torch.randint(4, vocab, (batch, length - 1), generator=generator)
    return torch.cat([ids, torch.full((batch, 1), 3)], dim=1)


def grad_check(loss_fn, params, n_samples=40, h=1e-6, seed=0):
    """Analytic vs central-difference gradients on a random subset of scalar parameters.

    Returns (analytic, numeric) vectors; ``loss_fn`` must be deterministic.
    """
    for p in params:
        p.grad = None
    loss_fn().backward()
    g = torch.Generator().manual_seed(seed)
    sizes = torch.tensor([p.numel() for p in params], dtype=torch.float64)
    analytic, numeric = [], []
    with torch.no_grad():
        for _ in range(n_samples):
            k = int(torch.multinomial(sizes, 1, generator=g))
            p = params[k]
            idx = int(torch.randint(p.numel(), (1,), generator=g))
            flat = p.view(-1)
            orig = flat[idx].item()
            flat[idx] = orig + h
            up = float(loss_fn())
            flat[idx] = orig - h
            down = float(loss_fn())
            flat[idx] = orig
            analytic.append(float(p.grad.view(-1)[idx]))
            numeric.append((up - down) / (2 * h))
    return torch.tensor(analytic), torch.tensor(numeric)


def relative_error(a, b):
    return float((a - b).norm() / max(a.norm(), b.norm(), 1e-12))


TINY = dict(
    d_e=16, d_h=16, d_z=4, layers=1, bt_layers=1, bt_model_dim=16, bt_heads=2, bt_ff_dim=32,
    bt_dropout=0.0, batch_size=8, lr=3e-3, decode_max_len=8, epochs=2, steps_per_epoch=2,
)


def tiny_config(**overrides):
    from btmpg.config import RunConfig

    return RunConfig(**{**TINY, **overrides})


def toy_data(n=40, seed=0):
    """Encoded toy pairs and their vocabulary."""
    from btmpg.corpus import build_vocab, make_pair
    from toy_corpus import make_pairs

    texts = make_pairs(n, seed)
    vocab = build_vocab(texts)
    return [make_pair(a, b, vocab) for a, b in texts], vocab
