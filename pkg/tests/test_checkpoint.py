import numpy as np
from hypothesis import given, strategies as st

from nfqs import QCNF, QNVP
from nfqs.checkpoint import load_flow, save_flow
from nfqs.flow import evaluate


@given(seed=st.integers(0, 2**16), kind=st.sampled_from(["qnvp", "qcnf"]))
def test_round_trip_is_bitwise(tmp_path_factory, seed, kind):
    rng = np.random.default_rng(seed)
    arch = QNVP(3, 2, (5,)) if kind == "qnvp" else QCNF(2, (6,), 8)
    flow = arch.init(rng, scale=0.4)
    path = tmp_path_factory.mktemp("ckpt") / "m.npz"
    save_flow(flow, path)
    back = load_flow(path)
    assert back.arch == flow.arch
    a = np.concatenate([np.ravel(v) for v in _leaves(flow.params)])
    b = np.concatenate([np.ravel(v) for v in _leaves(back.params)])
    assert a.tobytes() == b.tobytes()


def _leaves(params):
    import jax

    return jax.tree_util.tree_leaves(params)


def test_loaded_flow_evaluates_identically(tmp_path):
    flow = QNVP(2, 2, (4,)).init(np.random.default_rng(0))
    save_flow(flow, tmp_path / "m.npz")
    y = np.array([0.3, -0.2])
    a, b = evaluate(flow, y), evaluate(load_flow(tmp_path / "m.npz"), y)
    assert a.log_abs_psi == b.log_abs_psi and a.phase == b.phase
