"""dB / linear conversions used across the package."""

import numpy as np


def db_to_linear(value_db):
    return np.power(10.0, np.asarray(value_db, dtype=float) / 10.0)


def linear_to_db(value):
    return 10.0 * np.log10(np.asarray(value, dtype=float))


def dbm_to_watt(value_dbm):
    """dBm (or dBm/Hz) to W (or W/Hz)."""
    return db_to_linear(np.asarray(value_dbm, dtype=float) - 30.0)


def bytes_per_period_to_bps(n_bytes, period_hours):
    """Average bit rate of ``n_bytes`` delivered over ``period_hours``."""
    return np.asarray(n_bytes, dtype=float) * 8.0 / (period_hours * 3600.0)
