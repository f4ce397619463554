import numpy as np
import pytest

from hamts import arithmetic, build_coefficients, build_timescale, interval, validate_boundary


def free_field(q="0", weight="1"):
    """Scalar Schroedinger-type field ``A=0, B=1, C=q, W1=weight, W2=0``."""
    return build_coefficients(1, [["0"]], [["1"]], [[q]], [[weight]], [["0"]])


@pytest.fixture
def free():
    return free_field()


@pytest.fixture
def dirichlet():
    return validate_boundary([[1, 0]], [[1, 0]])


@pytest.fixture
def segment():
    """The interval ``[0, pi]`` anchored at 0."""
    return build_timescale([interval(0, np.pi)], 0)


def integer_scale(lo, hi, t0=None):
    """``Z`` restricted to ``[lo, hi]``; ``t0`` defaults to ``lo + 1``."""
    return build_timescale([arithmetic(lo, 1, int(hi - lo) + 1)], lo + 1 if t0 is None else t0)
