import numpy as np
import pytest

from hybridbnb import mpc
from hybridbnb.bench import INSTANCE_1, INSTANCE_2, di2route, q2_store
from hybridbnb.geometry import Polyhedron
from hybridbnb.model import HybridSystem, QuadraticStageCost, TransitionRule


@pytest.fixture(autouse=True)
def _certify_upper_bounds(monkeypatch):
    # every finite upper bound is re-simulated during tests
    monkeypatch.setattr(mpc, "CHECK_CERTIFICATES", True)


@pytest.fixture(scope="session")
def di2():
    return di2route()


@pytest.fixture(scope="session")
def di2_q2(di2):
    return q2_store(di2)


@pytest.fixture(scope="session", params=[INSTANCE_1, INSTANCE_2], ids=["I1", "I2"])
def instance(request):
    return request.param


def scalar_system(
    modes=("a",),
    rules=(("a", "go", "a"),),
    guard=(-5.0, 5.0),
    u_box=(-1.0, 1.0),
    constant=1.0,
    targets=("a",),
    target=(-1.0, 1.0),
    inputs=None,
) -> HybridSystem:
    """One-dimensional ``x' = x + u`` system with cost ``u^2 + constant`` off target."""
    one = np.eye(1)
    G = Polyhedron.box([guard[0]], [guard[1]])
    U = Polyhedron.box([u_box[0]], [u_box[1]])
    trs = [TransitionRule(q, v, r, one, one, np.zeros(1), G, U) for q, v, r in rules]
    costs = {
        q: QuadraticStageCost.input_energy(1, 1, 0.0 if q in targets else constant) for q in modes
    }
    inputs = list(inputs) if inputs is not None else sorted({v for _, v, _ in rules})
    return HybridSystem(list(modes), inputs, 1, 1, trs, costs, G, frozenset(targets),
                        Polyhedron.box([target[0]], [target[1]]))
