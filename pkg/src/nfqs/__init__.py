"""Neural quantum states built from normalizing flows.

Importing the package switches JAX to 64-bit floats; every loss threshold and
error bound in here assumes double precision.
"""

import jax

jax.config.update("jax_enable_x64", True)

from nfqs.errors import (  # noqa: E402
    CoincidentParticles,
    ConfigError,
    InitialStateNotReached,
    NonFinite,
    ScalePinch,
)
from nfqs.flow import Flow, SampleBatch, PsiEval  # noqa: E402
from nfqs.qnvp import QNVP  # noqa: E402
from nfqs.qcnf import QCNF  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "CoincidentParticles",
    "ConfigError",
    "Flow",
    "InitialStateNotReached",
    "NonFinite",
    "PsiEval",
    "QCNF",
    "QNVP",
    "SampleBatch",
    "ScalePinch",
]
