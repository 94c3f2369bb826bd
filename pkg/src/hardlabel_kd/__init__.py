"""Knowledge distillation from a teacher that only returns its top-1 class."""
from .errors import (
    BudgetExhaustedError,
    ConfigError,
    EstimationError,
    FormatError,
    NumericalError,
    PreconditionError,
    ShapeMismatchError,
)
from .oracle import CentroidTeacher, DecisionOracle, LinearTeacher, NetworkOracle, exact_boundary_distance

__version__ = "0.1.0"
from .pipelines import METHODS, TeacherRecipe, default_recipe, distill, robustness_transfer_set, train_teacher
