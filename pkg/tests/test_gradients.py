import numpy as np
import pytest

from gradcheck import LOSSES, check_case


@pytest.mark.parametrize("kind", LOSSES)
def test_analytic_gradient_matches_central_differences(kind):
    rng = np.random.default_rng(LOSSES.index(kind))
    for _ in range(8):
        assert check_case(rng, kind) < 1e-5
