import numpy as np
import pytest

from excisionlab import lsc_fields, null_fields, scalar_kit
from excisionlab.ham_extension import epigraph_target, extend_null_field


@pytest.fixture(scope="session")
def brush():
    """Cantor-brush target, null field and Hamiltonian extension."""
    C = scalar_kit.ClosedSetSpec(
        dim=2,
        pieces=((scalar_kit.axis_point(0.0),
                 scalar_kit.cantor_axis(0.0, 1.0, 6)),),
    )
    spec = null_fields.EpigraphSpec(
        C=C, lam=null_fields.constant_map(0.0),
        validation_box=((-1.0, -1.0), (2.0, 2.0)), sharpness=0.002,
    )
    vfield = null_fields.build_epigraph_field(spec)
    ham = extend_null_field(vfield, epigraph_target(spec))
    return C, spec, vfield, ham


@pytest.fixture(scope="session")
def box_tail_field():
    """Glued tower for the box-with-tail target (shared across tests)."""
    spec = lsc_fields.LscSpec(
        base_lo=(-2.0, -2.0), base_hi=(2.0, 2.0),
        pieces=(((-1.0, -1.0), (1.0, 1.0), 0.5),
                ((0.0, 0.0), (0.0, 0.0), 0.25)),
    )
    transect = np.stack([np.linspace(-1.95, 1.95, 50), np.full(50, 0.12)],
                        axis=1)
    field = lsc_fields.build_lsc_field(spec, depth=12, grid=transect)
    return spec, field, transect
