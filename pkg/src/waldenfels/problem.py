"""A bundled problem: domain, coefficients, jump kernel and quadrature parameters."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .grid import DomainSpec
from .kernel import LevyKernel, check_levy_moment
from .operator import CoefficientFields

C_REGIMES = ("zero", "nonpositive", "unsigned")
DRIFT_SCHEMES = ("auto", "central", "upwind")


@dataclass(eq=False)
class ProblemSpec:
    domain: DomainSpec
    coeffs: CoefficientFields
    kernel: Optional[LevyKernel] = None
    delta: Optional[float] = None
    R: Optional[float] = None
    # declared sign of c on D: "zero", "nonpositive" or "unsigned"
    c_regime: str = "unsigned"
    drift_scheme: str = "auto"
    # refuse tabulated kernels without an integrability certificate
    require_certificate: bool = False

    def __post_init__(self):
        if self.c_regime not in C_REGIMES:
            raise ConfigurationError(f"c_regime must be one of {C_REGIMES}")
        c = self.coeffs.c[self.domain.interior]
        if self.c_regime == "zero" and np.any(c != 0):
            raise ConfigurationError("c_regime 'zero' declared but c is nonzero in D")
        if self.c_regime == "nonpositive" and np.any(c > 0):
            raise ConfigurationError("c_regime 'nonpositive' declared but c > 0 somewhere in D")
        if self.drift_scheme not in DRIFT_SCHEMES:
            raise ConfigurationError(f"drift_scheme must be one of {DRIFT_SCHEMES}")
        if self.kernel is not None:
            chk = check_levy_moment(self.kernel)
            if chk.ok is False:
                raise ConfigurationError("the jump kernel violates the Levy moment condition")
            if chk.ok is None and self.require_certificate:
                raise ConfigurationError(
                    "tabulated kernel has no integrability certificate (required when validated)")

    @property
    def grid(self):
        return self.domain.grid

    def with_data(self, **kwargs) -> "ProblemSpec":
        """Copy with some coefficient/data fields replaced (``c``, ``f``, ``g``, ``g_far``...)."""
        co = self.coeffs
        current = dict(a=co.a, b=co.b, c=co.c, f=co.f, g=co.g, g_far=co.g_far,
                       divergence=co.divergence, uniformly_elliptic=co.uniformly_elliptic)
        current.update(kwargs)
        return replace(self, coeffs=CoefficientFields.build(self.domain, **current))
