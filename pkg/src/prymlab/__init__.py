"""Homological Darboux coordinates for quadratic differentials on genus-2
curves: period geometry of the canonical double cover, Bergman and Wirtinger
projective connections, monodromy of the associated self-adjoint operator,
and the induced Poisson and flow structure."""

__version__ = "0.1.0"

from .surface import Surface, example_surface  # noqa: F401
