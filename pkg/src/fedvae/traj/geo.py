"""Great-circle distances."""

import numpy as np

EARTH_RADIUS_KM = 6371.0


def haversine_array(lat1, lon1, lat2, lon2):
    """Element-wise haversine distance in km for arrays of degrees."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def haversine_km(a, b):
    return float(haversine_array(a.lat, a.lon, b.lat, b.lon))


def pairwise_km(latlon_a, latlon_b):
    """Distances between matching rows of two (n, 2) lat/lon arrays."""
    a = np.asarray(latlon_a)
    b = np.asarray(latlon_b)
    return haversine_array(a[..., 0], a[..., 1], b[..., 0], b[..., 1])


def step_lengths_km(latlon):
    """Distances between consecutive rows of an (n, 2) lat/lon array."""
    latlon = np.asarray(latlon)
    if len(latlon) < 2:
        return np.zeros(0)
    return pairwise_km(latlon[:-1], latlon[1:])


def path_length_km(latlon):
    return float(step_lengths_km(latlon).sum())
