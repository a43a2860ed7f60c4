"""Types used for clearer documentation and type hinting"""

from typing import Literal, Tuple

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]
Vector3 = FloatArray
RotationMatrix = FloatArray
Matrix3 = FloatArray

AxisMask = Tuple[bool, bool, bool]
Flags3 = Tuple[bool, bool, bool]

ReportFormat = Literal["json", "csv"]
WeightingScheme = Literal["learnable", "sum", "standardized"]
RotationLossKind = Literal["mse_euler", "geodesic", "geodesic_inertia"]
SelectionStrategy = Literal["none", "unique", "mean", "oracle", "trainable"]
