from __future__ import annotations

import contextlib
from datetime import datetime
from pathlib import Path
from typing import TYPE_CHECKING, TypedDict

from .util import truncate

if TYPE_CHECKING:
    from .bounds import BoundsRow

# Global state is isolated here:
_TIMING_BLOCKS: list[dict[str, TimingBlock]] = []


class Callback:
    """
    Base class for callbacks of a bounds sweep.

    Subclass this class and override any of the hook methods
    to implement relevant, custom behaviour.
    """

    def start(self, delta: float) -> None:
        """Called before the bounds at ``delta`` are computed."""

    def end(self, row: BoundsRow) -> None:
        """
        Called once the bounds at a ``delta`` are known. Callbacks typically
        modify ``row.metadata`` to record additional information.
        """


class Logging(Callback):
    """Responsible for (optional) printing of sweep progress"""

    def __init__(self, verbose: bool = True):
        self.verbose = verbose

    def start(self, delta: float):
        if self.verbose:
            print(f"solving delta={delta:.6g}")

    def end(self, row: BoundsRow):
        if not self.verbose:
            return

        interval = truncate(f"[{row.kappa_lower:.6g}, {row.kappa_upper:.6g}]")
        flag = " (envelope enforced)" if row.envelope else ""
        print(
            f"finished delta={row.delta:.6g} with bounds {interval} "
            f"({row.case_lower}/{row.case_upper}){flag}"
        )


class TimingBlock(TypedDict):
    start: str
    end: str
    duration: float


def _timing_block(start: datetime, end: datetime) -> TimingBlock:
    return TimingBlock(
        start=start.strftime("%Y-%m-%d %H:%M:%S"),
        end=end.strftime("%Y-%m-%d %H:%M:%S"),
        duration=(end - start).total_seconds(),
    )


class Timing(Callback):
    """Responsible for timing (portions of) each delta row"""

    def start(self, delta: float):
        self.start_time = datetime.now()
        _TIMING_BLOCKS.append({})

    def end(self, row: BoundsRow):
        total_time = _timing_block(self.start_time, datetime.now())

        blocks = _TIMING_BLOCKS.pop()
        if len(blocks) == 0:
            row.metadata["timing"] = total_time
        else:
            blocks["total"] = total_time
            row.metadata["timing"] = blocks


@contextlib.contextmanager
def time_block(name: str):
    """
    Time the code that runs inside this context manager.

    While a :class:`Timing` callback is active, the start, end and duration
    are added into ``row.metadata["timing"][name]`` of the row being solved.
    Outside a timed sweep this does nothing.

    Parameters
    ----------
    name : str
        The name of the timing block

    Example
    -------

    .. code-block:: python

        from robust_counterfactuals import Timing, bounds_curve

        curve = bounds_curve(..., callbacks=[Timing()])
        curve.rows[0].metadata["timing"]["upper"]
        # returns something like:
        # {
        #     "start": "2021-01-01 12:00:00",
        #     "end": "2021-01-01 12:00:03",
        #     "duration": 3.0,
        # }
    """

    if len(_TIMING_BLOCKS) == 0:
        yield
        return

    start = datetime.now()
    yield
    end = datetime.now()
    _TIMING_BLOCKS[-1][name] = _timing_block(start, end)


class Flush(Callback):
    """
    Responsible for writing the rows finished so far after every delta,
    so that long sweeps leave partial results behind.

    Parameters
    ----------
    path : Path
        The results file, rewritten after each row.
    backend : str, optional
        The name of a registered results backend. Defaults to the backend
        handling the suffix of ``path``.
    """

    def __init__(self, path: Path | str, backend: str | None = None):
        from .backends import backend_for, instantiate_backend

        self.path = Path(path)
        self.backend = (
            backend_for(self.path)
            if backend is None
            else instantiate_backend(backend)
        )
        self.records: list[dict] = []

    def end(self, row: BoundsRow):
        self.records.append(row.record())
        self.backend.write(self.path, self.records)
