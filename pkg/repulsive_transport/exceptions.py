"""Error types raised by the construction, verification and I/O layers.

Every error carries a human readable ``detail``, a short machine ``code`` and
the process ``exit_code`` the management commands use when it escapes.
"""


class TransportError(Exception):
    default_detail = "Transport construction failed."
    default_code = "error"
    exit_code = 3

    def __init__(self, detail=None, code=None):
        self.detail = detail if detail is not None else self.default_detail
        self.code = code if code is not None else self.default_code
        super().__init__(self.detail)

    def __str__(self):
        return str(self.detail)


# I/O and documents

class InputError(TransportError):
    default_detail = "Input file could not be read."
    default_code = "io_error"
    exit_code = 1


class SchemaError(TransportError):
    default_detail = "Document does not match the expected schema."
    default_code = "schema_error"
    exit_code = 1

    def __init__(self, detail=None, code=None, errors=None):
        super().__init__(detail, code)
        self.errors = errors or {}


class PreconditionError(TransportError):
    default_detail = "Operation precondition violated."
    default_code = "precondition"


class ValidationFailed(TransportError):
    default_detail = "Marginal is not constructible."
    default_code = "validation_failed"
    exit_code = 2

    def __init__(self, detail=None, code=None, report=None):
        super().__init__(detail, code)
        self.report = report


# partition

class DegenerateCloud(TransportError):
    default_detail = "Cloud is effectively atomic along every candidate direction."
    default_code = "degenerate_cloud"


class GapCollapse(TransportError):
    default_detail = "A separating gap has zero spatial width."
    default_code = "gap_collapse"


class InsufficientMass(TransportError):
    default_detail = "Diffuse part is too light for the requested partition."
    default_code = "insufficient_mass"


# construct

class ConditionViolated(TransportError):
    default_detail = "(N-1)*b_1 <= sum of the remaining weights does not hold."
    default_code = "condition_violated"


class NegativeWeight(TransportError):
    default_detail = "Base-case weights have a negative entry."
    default_code = "negative_weight"


class ArityUnderflow(TransportError):
    default_detail = "Fewer atoms than slots in the discrete recursion."
    default_code = "arity_underflow"


class LedgerViolation(TransportError):
    default_detail = "Runtime mass ledger check failed."
    default_code = "ledger_violation"


# plan

class ArityMismatch(TransportError):
    default_detail = "Plans have different arity or dimension."
    default_code = "arity_mismatch"


class InsertIntoSymmetrized(TransportError):
    default_detail = "Cannot insert a slot into a symmetrized block."
    default_code = "insert_into_symmetrized"


class DiffuseIntoMapBlock(TransportError):
    default_detail = "A diffuse factor cannot be inserted into a map block."
    default_code = "diffuse_into_map_block"


class UnsymmetrizedPlan(TransportError):
    default_detail = "Marginal requested for a plan with unsymmetrized blocks."
    default_code = "unsymmetrized_plan"


class ExpansionTooLarge(TransportError):
    default_detail = "Dense expansion exceeds the configured cap."
    default_code = "expansion_too_large"


# verify

class SizeCap(TransportError):
    default_detail = "Instance too large for the exact linear-programming oracle."
    default_code = "size_cap"
