from enum import Enum, IntEnum
from typing import Any, Callable, Dict, Optional, TypeVar

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

CONFIG_TYPE = TypeVar('CONFIG_TYPE')
ConfigExtractor = Optional[Callable[[Dict[str, Any]], CONFIG_TYPE]]
CommandHandlerType = Callable[['CommandContext'], 'CommandResult']  # noqa
BlockHandlerType = Callable[['BlockParams'], Any]  # noqa

# angular frequencies are rad/ns throughout; 2*pi*1 MHz in those units
TWO_PI_MHZ = 2.0 * np.pi * 1e-3
PS_PER_NS = 1000
PS_PER_S = 10 ** 12


class SourceMode(Enum):
    CW = 'cw'
    PULSED = 'pulsed'


class Channel(IntEnum):
    A = 0
    B = 1
    CLK = 2

    @classmethod
    def from_label(cls, label: str) -> 'Channel':
        return cls[label.strip().upper()]


class CurveNormalization(Enum):
    RAW = 'raw'
    UNIT_PEAK_NONINTERFERING = 'unit-peak-noninterfering'


class MixtureCoherence(Enum):
    INCOHERENT = 'incoherent'
    COHERENT = 'coherent'


class BellState(Enum):
    PHI_PLUS = 'phi+'
    PHI_MINUS = 'phi-'
    PSI_PLUS = 'psi+'
    PSI_MINUS = 'psi-'


class G2Normalization(Enum):
    PLATEAU = 'plateau'
    ANALYTIC = 'analytic'


class StreamFormat(Enum):
    CSV = 'csv'
    BINARY = 'binary'


class ExitCode:
    OK = 0
    UNHANDLED = 1
    INPUT_ERROR = 2
    IO_ERROR = 3
