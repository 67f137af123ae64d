"""Exception hierarchy for vbcert.

Input and modelling-assumption failures derive from ``VbcertInputError`` so the
CLI can map them onto exit code 2 in one place.
"""


class VbcertError(Exception):
    """Base class for all vbcert errors."""


class VbcertInputError(VbcertError, ValueError):
    """Invalid input data or a violated modelling assumption."""


# numerics
class SingularMatrix(VbcertError, ArithmeticError):
    pass


class NonFinite(VbcertInputError):
    pass


class NotSymmetric(VbcertInputError):
    pass


class NonConvergence(VbcertError, ArithmeticError):
    pass


# mdp_core
class MdpValidationError(VbcertInputError):
    """Raised with every violated invariant collected in ``problems``."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ShapeMismatch(MdpValidationError):
    pass


class InvalidKernel(MdpValidationError):
    pass


class InvalidGamma(MdpValidationError):
    pass


class InvalidPolicy(MdpValidationError):
    pass


class Reducible(VbcertInputError):
    pass


class NotErgodic(VbcertInputError):
    pass


class RankDeficientFeatures(VbcertInputError):
    pass


# certificates
class NonPositiveXi(VbcertInputError):
    pass


class NonPositiveNu(VbcertInputError):
    pass


class NotPositiveDefinite(VbcertInputError):
    pass


class KindUnavailable(VbcertError):
    pass


class SingularAbar(VbcertInputError):
    pass


class NotHurwitz(VbcertInputError):
    pass


class TooLarge(VbcertInputError):
    pass
