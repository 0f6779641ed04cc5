"""Great-circle distances on a spherical Earth."""
import numpy as np

EARTH_RADIUS_KM = 6371.0
KM_PER_DEGREE = EARTH_RADIUS_KM * np.pi / 180.0  # one degree of arc, ~111.195 km
KM_PER_MILE = 1.609344


def haversine_km(lat1, lon1, lat2, lon2):
    """Haversine distance in km; arguments broadcast like numpy arrays."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(a, dtype=np.float64)) for a in (lat1, lon1, lat2, lon2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    a = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def pairwise_km(lat, lon, lat2=None, lon2=None):
    """Distance matrix between two point sets (or within one)."""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    if lat2 is None:
        lat2, lon2 = lat, lon
    return haversine_km(lat[:, None], lon[:, None], np.asarray(lat2)[None, :], np.asarray(lon2)[None, :])
