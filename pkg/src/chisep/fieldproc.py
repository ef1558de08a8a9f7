"""Multi-echo phase to local-field conversion.

Temporal unwrapping predicts each echo's phase from the previous one
(scaled by the TE ratio) and removes the nearest 2*pi ambiguity; the
weighted echo combination then averages per-echo frequency estimates with
SNR-of-phase weights proportional to TE * magnitude.
"""

from __future__ import annotations

import numpy as np

from .constants import GAMMA_HZ_PER_TESLA
from .errors import BadB0, InvalidArgument, TooFewEchoes, WrappedInput
from .phantom import MultiEchoSeries
from .volume import Unit, Volume3D

_MIN_WEIGHT = 1e-12


def temporal_unwrap(series: MultiEchoSeries) -> MultiEchoSeries:
    """Resolve per-echo 2*pi ambiguities using the previous echo as predictor.

    Echo 1 is taken as-is, so its true phase must already lie in (-pi, pi].
    Idempotent on already-unwrapped data.
    """
    if series.phase is None:
        raise InvalidArgument("series has no phase data to unwrap")
    if series.n_echoes < 2:
        raise TooFewEchoes(f"temporal unwrap needs >= 2 echoes, got {series.n_echoes}")
    tes = series.echo_times
    phase = np.array(series.phase)
    for e in range(1, len(tes)):
        predicted = phase[e - 1] * (tes[e] / tes[e - 1])
        cycles = np.round((predicted - phase[e]) / (2.0 * np.pi))
        phase[e] = phase[e] + 2.0 * np.pi * cycles
    return MultiEchoSeries(
        echo_times=tes, magnitude=series.magnitude, phase=phase,
        voxel_size=series.voxel_size, b0_dir=series.b0_dir,
        b0_tesla=series.b0_tesla, phase_wrapped=False,
    )


def combine_echoes_weighted(series: MultiEchoSeries) -> Volume3D:
    """Weighted echo average of per-echo frequencies, in hertz.

    f = sum_e w_e * phase_e / (2*pi*TE_e) with w_e proportional to
    TE_e * magnitude_e. Voxels with negligible total weight return 0.
    Raises WrappedInput when a residual 2*pi jump is still detectable.
    """
    if series.phase is None:
        raise InvalidArgument("series has no phase data to combine")
    tes = np.asarray(series.echo_times)
    phase = series.phase
    mag = series.magnitude
    for e in range(1, len(tes)):
        predicted = phase[e - 1] * (tes[e] / tes[e - 1])
        if np.any(np.abs(phase[e] - predicted) > np.pi):
            raise WrappedInput(f"echo {e + 1} phase deviates > pi from TE-ratio "
                               "prediction; run temporal_unwrap first")
    w = tes[:, None, None, None] * mag
    wsum = w.sum(axis=0)
    freq = phase / (2.0 * np.pi * tes[:, None, None, None])
    num = (w * freq).sum(axis=0)
    out = np.zeros(series.dims)
    np.divide(num, wsum, out=out, where=wsum >= _MIN_WEIGHT)
    return Volume3D(out, series.voxel_size, Unit.HERTZ, series.b0_dir)


def field_hz_to_ppm(field: Volume3D, b0_tesla: float) -> Volume3D:
    """Frequency shift (Hz) to susceptibility-induced field in ppm of B0."""
    if b0_tesla <= 0:
        raise BadB0(f"b0_tesla must be positive, got {b0_tesla}")
    scale = GAMMA_HZ_PER_TESLA * b0_tesla * 1e-6
    return field.with_data(field.data / scale, unit=Unit.PPM)


def field_ppm_to_hz(field: Volume3D, b0_tesla: float) -> Volume3D:
    """Inverse of :func:`field_hz_to_ppm`."""
    if b0_tesla <= 0:
        raise BadB0(f"b0_tesla must be positive, got {b0_tesla}")
    scale = GAMMA_HZ_PER_TESLA * b0_tesla * 1e-6
    return field.with_data(field.data * scale, unit=Unit.HERTZ)
