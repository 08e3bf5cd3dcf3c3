from app.adaptivity.indicators import (
    IndicatorVector, adjoint_indicators, cell_indicators, compute_indicators, interface_indicators,
)
from app.adaptivity.marking import coarsen_mark, dorfler_mark, interface_band_fraction
from app.adaptivity.adapt_loop import AdaptCycle, AdaptResult, MarkParams, adapt_loop, total_cells
