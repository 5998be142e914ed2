import os

import numpy as np
import pytest

from elastic_tickets import arch, data, ticket
from elastic_tickets.tensor import Rng


def dataset_dir(name: str) -> str | None:
    """Locate a real dataset; tests that need one skip when it is absent."""
    base = os.environ.get("ELASTIC_TICKETS_DATA", "data")
    for candidate in (os.path.join(base, name), base):
        if name == "mnist":
            if os.path.exists(os.path.join(candidate, "train-images-idx3-ubyte")) or \
               os.path.exists(os.path.join(candidate, "train-images-idx3-ubyte.gz")):
                return candidate
        else:
            for sub in (candidate, os.path.join(candidate, "cifar-10-batches-bin")):
                if os.path.exists(os.path.join(sub, "data_batch_1.bin")):
                    return candidate
    return None


def require_dataset(name: str) -> str:
    d = dataset_dir(name)
    if d is None:
        pytest.skip(
            f"{name} files not present (set ELASTIC_TICKETS_DATA or place them under ./data/{name}); "
            + data.fetch_instructions(name, os.path.join(os.environ.get('ELASTIC_TICKETS_DATA', 'data'), name)))
    return d


@pytest.fixture
def blob_data():
    return data.synth(data.SynthSpec(n_per_class=50, num_classes=4,
                                     input_shape=(12,), noise=0.5, seed=77))


_init_cache: dict = {}


def _cached_init(a, seed):
    """Weights are copied downstream by make_ticket, so sharing here is safe."""
    key = (arch.arch_to_json(a).__str__(), seed)
    if key not in _init_cache:
        _init_cache[key] = arch.init_params(a, Rng(seed))
    return _init_cache[key]


def tiny_mlp_ticket(seed=0, sparsity_target=0.5, widths=(12, 10, 10, 6, 4)):
    """A valid random ticket for transform/format tests (no training involved)."""
    from elastic_tickets import prune
    a = arch.mlp_arch(list(widths))
    weights = _cached_init(a, seed)
    mask = prune.magnitude_prune(weights, ticket.all_ones_mask(a), sparsity_target, a)
    prov = {"method": "imp", "imp_round": 1, "dataset": "synth", "seed": seed,
            "source_arch": a.name()}
    return ticket.make_ticket(a, weights, mask, 3, prov)


def tiny_resnet_ticket(seed=0, depth=8, sparsity_target=0.6, input_side=8):
    from elastic_tickets import prune
    a = arch.derive_arch("resnet_cifar", depth, input_shape=(3, input_side, input_side))
    weights = _cached_init(a, seed)
    mask = prune.magnitude_prune(weights, ticket.all_ones_mask(a), sparsity_target, a)
    prov = {"method": "imp", "imp_round": 1, "dataset": "synth", "seed": seed,
            "source_arch": a.name()}
    return ticket.make_ticket(a, weights, mask, 3, prov)


def assert_tickets_equal(a, b, check_provenance=False):
    assert a.arch == b.arch
    assert sorted(a.rewind_weights) == sorted(b.rewind_weights)
    for k in a.rewind_weights:
        assert np.array_equal(a.rewind_weights[k], b.rewind_weights[k]), f"weights differ at {k}"
    assert sorted(a.mask) == sorted(b.mask)
    for k in a.mask:
        assert np.array_equal(a.mask[k], b.mask[k]), f"mask differs at {k}"
    if check_provenance:
        assert a.provenance == b.provenance
        assert a.rewind_step == b.rewind_step


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One line per acceptance criterion at the end of the run."""
    lines = []
    for status in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(status, []):
            name = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" in name:
                short = name.split("::", 1)[1]
                lines.append((short, status.upper()))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for short, status in sorted(lines):
            terminalreporter.write_line(f"{short}: {status}")
