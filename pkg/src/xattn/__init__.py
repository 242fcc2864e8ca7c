"""Cross-domain spatial/channel attention for unsupervised segmentation adaptation,
on a small numpy autodiff core."""

from .tensor import ContractError, DimensionError, Tape, Tensor, backward
from .gradcheck import finite_diff_check

__all__ = ["Tensor", "Tape", "backward", "finite_diff_check", "DimensionError", "ContractError"]
__version__ = "0.1.0"
