"""Shared builders for test inputs."""
import datetime as dt

import numpy as np

from woodycover.raster import GridGeometry, RasterGrid
from woodycover.stm import DatedStack

S2 = ["Blue", "Green", "Red", "RE1", "RE2", "RE3", "NIR", "NIR2", "SWIR1", "SWIR2"]


def random_stack(rng, n_dates=6, shape=(4, 5), mask_prob=0.25, dates=None):
    geom = GridGeometry(0.0, 100.0, 10.0, 10.0, *shape)
    if dates is None:
        dry = [dt.date(2023, 6, 1) + dt.timedelta(days=int(d)) for d in rng.choice(92, n_dates // 2, replace=False)]
        wet = [dt.date(2023, 12, 1) + dt.timedelta(days=int(d)) for d in rng.choice(120, n_dates - n_dates // 2,
                                                                                      replace=False)]
        dates = sorted(dry + wet)
    grids = []
    for _ in dates:
        vals = rng.uniform(0.0, 0.6, (len(S2),) + shape)
        valid = rng.random(shape) > mask_prob
        grids.append(RasterGrid(geom, vals, valid, S2))
    return DatedStack(dates, grids)
