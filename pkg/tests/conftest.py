import io

import pytest

from raterirt import _kernels, _pykernels
from raterirt.data import RatingDataset, RatingRecord, ScaleSpec

try:
    from raterirt import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None

BACKENDS = [pytest.param(_pykernels, id="python")]
if _ckernels is not None:
    BACKENDS.append(pytest.param(_ckernels, id="cython"))


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def make_dataset(rows, k=7, min_label=1):
    """rows: (output, item, rater, policy, category) tuples."""
    return RatingDataset(ScaleSpec(k, min_label), tuple(RatingRecord(*r) for r in rows))


def csv_bytes(text: str) -> io.BytesIO:
    return io.BytesIO(text.encode("utf-8"))


def random_mfrm_instance(rng, n_out=5, n_item=2, n_rater=3, k=4, density=0.8):
    """Small random MFRM dataset and parameter set (every output rated at least once)."""
    import numpy as np

    from raterirt.model import MfrmParams

    rows = []
    for n in range(n_out):
        for i in range(n_item):
            for j in range(n_rater):
                if rng.random() < density or (i == 0 and j == n % n_rater):
                    rows.append((f"o{n}", f"i{i}", f"r{j}", None, int(rng.integers(1, k + 1))))
    ds = make_dataset(rows, k=k)
    params = MfrmParams(
        rng.normal(0, 1, ds.n_outputs), rng.normal(0, 0.5, ds.n_items),
        rng.normal(0, 0.5, ds.n_raters), rng.normal(0, 1, (ds.n_raters, k - 1)),
    )
    return ds, params


def numeric_gradient(f, params, h=1e-5):
    """Central differences of ``f`` over every parameter array of ``params``."""
    import dataclasses

    import numpy as np

    out = {}
    for fld in dataclasses.fields(params):
        base = getattr(params, fld.name)
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            up, dn = base.copy(), base.copy()
            up[idx] += h
            dn[idx] -= h
            g[idx] = (f(dataclasses.replace(params, **{fld.name: up}))
                      - f(dataclasses.replace(params, **{fld.name: dn}))) / (2 * h)
        out[fld.name] = g
    return out


def max_rel_error(analytic, numeric) -> float:
    import dataclasses

    import numpy as np

    worst = 0.0
    for fld in dataclasses.fields(analytic):
        a = getattr(analytic, fld.name)
        n = numeric[fld.name]
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(n)))))
    return worst
