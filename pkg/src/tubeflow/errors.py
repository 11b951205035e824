"""Exception hierarchy for tubeflow."""


class TubeflowError(Exception):
    """Base class for all library errors."""


class SpecError(TubeflowError):
    """Malformed or inconsistent user input (manifold spec, cloud, config)."""


class PipelineError(TubeflowError):
    """A numerical pipeline could not produce a certified result."""


class OutOfDomain(SpecError):
    pass


class RankDeficient(PipelineError):
    pass


class NotNormal(SpecError):
    pass


class DegenerateMetric(PipelineError):
    pass


class StencilOutOfDomain(PipelineError):
    pass


class SingularMatrix(PipelineError):
    pass


class NoValidDelta(PipelineError):
    pass


class OutsideCertifiedBox(PipelineError):
    pass


class NoConvergence(PipelineError):
    pass


class OutsideTube(PipelineError):
    pass


class SingularDE(PipelineError):
    pass


class EmptyCloud(SpecError):
    pass


class NotBijective(SpecError):
    pass


class FieldGridMismatch(SpecError):
    pass


class OracleFailure(TubeflowError):
    """Raised by the gradient-flow driver when a step leaves the space of embeddings."""

    def __init__(self, step, witness, trace=None):
        super().__init__(f"embedding oracle failed at step {step}: {witness}")
        self.step = step
        self.witness = witness
        self.trace = trace
