"""Per-frame spatial feature providers for the local and global streams.

A provider returns ``(local, global)`` arrays of shape ``(len(frames), d_v)``
for a record and a list of frame indices.

``ToyFeatureProvider`` featurises the planted scene factors stored on
synthetic records: a fixed random linear map of a +-1 factor code plus
seeded per-frame Gaussian noise. ``PrecomputedFeatureProvider`` reads
vectors computed by an external backbone from text files with one
``<pedestrian_id> <frame_index> <v1> ... <vd>`` line per frame.
"""

import hashlib

import numpy as np

from .checkpoint import atomic_write_text


class ConfigurationError(ValueError):
    """Inconsistent provider or model configuration."""


LOCAL_CODE = ("group_none", "group_one", "group_many", "engaged_roadside", "acknowledges_ego",
              "at_crosswalk")
GLOBAL_CODE = ("signal_red", "ego_high", "other_high", "at_crosswalk", "group_present")


def factor_code(factors, stream):
    """+-1 code of the factors visible to ``stream`` ("local" or "global")."""
    g = int(factors["group_size"])
    values = {
        "group_none": g == 0,
        "group_one": g == 1,
        "group_many": g >= 2,
        "group_present": g >= 1,
        "engaged_roadside": factors["engaged_roadside"],
        "acknowledges_ego": factors["acknowledges_ego"],
        "at_crosswalk": factors["at_crosswalk"],
        "signal_red": factors["signal"] == "red",
        "ego_high": factors["ego_speed"] == "high",
        "other_high": factors["other_vehicle_speed"] == "high",
    }
    names = LOCAL_CODE if stream == "local" else GLOBAL_CODE
    return np.array([1.0 if values[n] else -1.0 for n in names])


def _frame_rng(seed, pedestrian_id, frame_index, stream):
    key = f"{seed}|{pedestrian_id}|{frame_index}|{stream}".encode("utf-8")
    return np.random.default_rng(int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little"))


class ToyFeatureProvider:
    """Deterministic features from planted scene factors.

    Parameters
    ----------
    d_v : int, default=16
        Output width of each stream.
    noise : float, default=1.0
        Standard deviation of the per-frame Gaussian noise.
    seed : int, default=0
        Seeds both the projection matrices and the noise.
    """

    def __init__(self, d_v=16, noise=1.0, seed=0):
        if d_v < max(len(LOCAL_CODE), len(GLOBAL_CODE)):
            raise ConfigurationError(
                f"toy provider needs d_v >= {max(len(LOCAL_CODE), len(GLOBAL_CODE))}, got {d_v}"
            )
        self.d_v = d_v
        self.noise = noise
        self.seed = seed
        rng = np.random.default_rng([seed, 7919])
        self.projection = {
            "local": rng.standard_normal((len(LOCAL_CODE), d_v)),
            "global": rng.standard_normal((len(GLOBAL_CODE), d_v)),
        }

    def featurize(self, factors, pedestrian_id, frame_index, stream):
        """Feature row for one scene descriptor."""
        row = factor_code(factors, stream) @ self.projection[stream]
        if self.noise:
            rng = _frame_rng(self.seed, pedestrian_id, frame_index, stream)
            row = row + self.noise * rng.standard_normal(self.d_v)
        return row

    def features(self, record, frames):
        if record.scene is None:
            raise ConfigurationError(
                f"record {record.pedestrian_id!r} has no scene factors; the toy provider "
                "only featurises synthetic records"
            )
        out = []
        for stream in ("local", "global"):
            out.append(np.array([
                self.featurize(record.scene, record.pedestrian_id, f, stream) for f in frames
            ]))
        return out[0], out[1]


def _parse_feature_file(path):
    table = {}
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 3:
                raise ValueError(f"{path}:{lineno}: expected '<pedestrian_id> <frame> <values...>'")
            key = (parts[0], int(parts[1]))
            vec = np.array([float(v) for v in parts[2:]])
            if width is None:
                width = len(vec)
            elif len(vec) != width:
                raise ValueError(f"{path}:{lineno}: width {len(vec)} differs from {width}")
            if key in table:
                raise ValueError(f"{path}:{lineno}: duplicate row for {key}")
            table[key] = vec
    return table, width


def write_feature_file(path, rows):
    """Write ``{(pedestrian_id, frame_index): vector}`` in the provider format."""
    atomic_write_text(
        path,
        "".join(
            f"{pid} {frame} " + " ".join(repr(float(v)) for v in vec) + "\n"
            for (pid, frame), vec in sorted(rows.items())
        ),
    )


class PrecomputedFeatureProvider:
    """Features looked up from externally computed per-frame vectors.

    Parameters
    ----------
    local_path, global_path : str or path
    d_v : int, optional
        Expected width; a mismatch raises :class:`ConfigurationError`.
    """

    def __init__(self, local_path, global_path, d_v=None):
        self.tables = {}
        widths = set()
        for stream, path in (("local", local_path), ("global", global_path)):
            self.tables[stream], w = _parse_feature_file(path)
            widths.add(w)
        if len(widths) != 1:
            raise ConfigurationError(f"local and global feature widths differ: {sorted(widths)}")
        self.d_v = widths.pop()
        if d_v is not None and d_v != self.d_v:
            raise ConfigurationError(f"feature files have width {self.d_v}, expected {d_v}")

    def features(self, record, frames):
        out = []
        for stream in ("local", "global"):
            rows = []
            for f in frames:
                try:
                    rows.append(self.tables[stream][(record.pedestrian_id, int(f))])
                except KeyError:
                    raise ConfigurationError(
                        f"no {stream} features for pedestrian {record.pedestrian_id!r} frame {f}"
                    ) from None
            out.append(np.array(rows))
        return out[0], out[1]
