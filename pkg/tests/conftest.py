import numpy as np
import pytest

from mmeda import autodiff as ad
from mmeda.data import SynthSpec, generate_synthetic
from mmeda.models import (
    AemfConfig,
    AemfModel,
    CmfConfig,
    CmfModel,
    Mmeda1Config,
    Mmeda1Model,
    Mmeda2Config,
    Mmeda2Model,
    aemf_forward,
    aemf_loss_terms,
    cmf_forward,
    mmeda1_forward,
    mmeda1_loss,
    mmeda2_forward,
    mmeda2_loss,
)
from mmeda.nn import make_rng

TINY_IMAGE = (1, 6, 6)
TINY_B, TINY_N2, TINY_D = 3, 4, 2


def randomize_biases(model, seed=0, scale=0.1):
    """Zero-init biases put all-dead ReLU rows exactly on the kink; move off it."""
    rng = np.random.default_rng(seed + 1000)
    for name, p in model.named_parameters():
        if name.endswith("bias"):
            p.value[...] = rng.uniform(-scale, scale, p.shape)
    return model


def tiny_batch(seed=0, b=TINY_B, n2=TINY_N2, image=TINY_IMAGE):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(b, *image)), rng.normal(size=(b, n2))


def cmf_case(seed=0):
    rng = np.random.default_rng(seed)
    model = CmfModel(CmfConfig(4, [3, 5], embed_dim=2, links=["identity", "sigmoid"]), make_rng(seed))
    m0, m1 = rng.normal(size=(4, 3)), rng.uniform(size=(4, 5))
    loss = lambda: ad.mse_loss(cmf_forward(model, 0), m0) + ad.mse_loss(cmf_forward(model, 1), m1)
    return model, loss


def aemf_case(seed=0):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 2))
    model = AemfModel(AemfConfig([4, 2], batch_size=3, embed_dim=2), make_rng(seed))
    randomize_biases(model, seed)
    xcat = np.hstack([a, b])

    def loss():
        out = aemf_forward(model, ad.constant(xcat), ad.constant(a.T), ad.constant(b.T))
        t = aemf_loss_terms(out, xcat, [a, b])
        return t["view0"] + t["view1"] + t["cat"] + t["col0"] + t["col1"]

    return model, loss


def mmeda1_case(seed=0):
    x0, x1 = tiny_batch(seed)
    cfg = Mmeda1Config(TINY_IMAGE, TINY_N2, batch_size=TINY_B, embed_dim=TINY_D, channels=(2, 2))
    model = Mmeda1Model(cfg, make_rng(seed))
    randomize_biases(model, seed)
    loss = lambda: mmeda1_loss(mmeda1_forward(model, ad.constant(x0), ad.constant(x1)), x0, x1)
    return model, loss


def mmeda2_case(seed=0, x0_source="own", c=TINY_N2):
    x0, x1 = tiny_batch(seed)
    cfg = Mmeda2Config(
        TINY_IMAGE, TINY_N2, batch_size=TINY_B, embed_dim=TINY_D, channels=(2, 2), x0_source=x0_source
    )
    model = Mmeda2Model(cfg, make_rng(seed))
    randomize_biases(model, seed)
    x2 = x1.T[:c]
    block = x1[:, :c]

    def loss():
        out = mmeda2_forward(model, ad.constant(x0), ad.constant(x1), ad.constant(x2))
        return mmeda2_loss(out, x0, x1, x2, block)

    return model, loss


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic(SynthSpec(n=24, rank=3, image_shape=(1, 8, 8), n2=6, sigma=0.05, seed=1))


# criterion id -> (passed, detail); filled by test_acceptance
ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")
