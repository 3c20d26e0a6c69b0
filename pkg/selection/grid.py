import itertools
from dataclasses import dataclass

import numpy as np

from configs.schema import RunConfig
from utils.exceptions import ArgumentError

LOG = "log"
LINEAR = "linear"

INT_AXES = ("batch_size", "total_steps", "num_layers", "num_heads", "hidden_dim")


@dataclass(frozen=True)
class SweepAxis:
    field: str
    values: tuple
    scale: str = LOG

    def __post_init__(self):
        if not self.values:
            raise ArgumentError(f"Sweep axis '{self.field}' has no values", module="selection")
        if self.field not in RunConfig.__dataclass_fields__:
            raise ArgumentError(f"Unknown sweep field '{self.field}'", module="selection")
        if self.scale not in (LOG, LINEAR):
            raise ArgumentError(f"Axis scale must be '{LOG}' or '{LINEAR}', got {self.scale!r}", module="selection")

    @classmethod
    def log_spaced(cls, field, start, stop, num):
        values = np.geomspace(start, stop, int(num))
        if field in INT_AXES:
            values = np.unique(np.round(values).astype(int))
            return cls(field, tuple(int(v) for v in values), LOG)
        return cls(field, tuple(float(v) for v in values), LOG)


@dataclass(frozen=True)
class SweepGrid:
    """Cartesian grid of ``axes`` around ``base_config``; the first axis varies slowest."""

    base_config: RunConfig
    axes: tuple

    def __post_init__(self):
        if not self.axes:
            raise ArgumentError("A sweep grid needs at least one axis", module="selection")
        fields = [axis.field for axis in self.axes]
        if len(set(fields)) != len(fields):
            raise ArgumentError(f"Sweep axes must name distinct fields, got {fields}", module="selection")

    @property
    def fields(self):
        return tuple(axis.field for axis in self.axes)

    @property
    def size(self):
        return int(np.prod([len(axis.values) for axis in self.axes]))

    def points(self):
        """(grid index, {field: value}) for every grid point."""
        for index, values in enumerate(itertools.product(*(axis.values for axis in self.axes))):
            yield index, dict(zip(self.fields, values))

    def without(self, fields):
        """The grid with the axes for ``fields`` removed."""
        return SweepGrid(self.base_config, tuple(axis for axis in self.axes if axis.field not in fields))

    def with_base(self, base_config):
        return SweepGrid(base_config, self.axes)

    @classmethod
    def from_config(cls, section, base_config):
        """lr x batch grid from the ``sweep`` section of the pipeline config."""
        lr_axis = section["lr_axis"]
        return cls(base_config, (
            SweepAxis.log_spaced("peak_lr", lr_axis["start"], lr_axis["stop"], lr_axis["num"]),
            SweepAxis("batch_size", tuple(int(b) for b in section["batch_axis"]), LOG),
        ))
