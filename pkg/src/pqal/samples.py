"""Sample containers and the pool file format.

``Samples`` is the columnar form every estimator consumes. ``SampleRecord``
is the per-observation view used for serialization and for tests that reason
about single records.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class SampleRecord:
    covariate: np.ndarray
    environment: int
    proxy: Optional[np.ndarray] = None
    outcome: Optional[float] = None
    latent_u: Optional[float] = None


def _frozen(arr, dtype=np.float64, ndim=None):
    if arr is None:
        return None
    out = np.array(arr, dtype=dtype)
    if ndim == 2 and out.ndim == 1:
        out = out[:, None]
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Samples:
    """Columnar batch of observations.

    x: (n, d) covariates; z: (n,) integer environment ids; w: (n, dw)
    proxies or None; y: (n,) outcomes or None; u: (n,) latent values
    (simulator ground truth, never read by estimators) or None.
    """

    x: np.ndarray
    z: np.ndarray
    w: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x, ndim=2))
        object.__setattr__(self, "z", _frozen(self.z, dtype=np.int64))
        object.__setattr__(self, "w", _frozen(self.w, ndim=2))
        object.__setattr__(self, "y", _frozen(self.y))
        object.__setattr__(self, "u", _frozen(self.u))
        n = self.x.shape[0]
        for name in ("z", "w", "y", "u"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[0] != n:
                raise InputError(f"field {name} has {arr.shape[0]} rows, x has {n}")

    def __len__(self):
        return self.x.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]

    @property
    def environments(self):
        return sorted(int(e) for e in np.unique(self.z))

    def subset(self, idx) -> Samples:
        idx = np.asarray(idx, dtype=np.int64)
        pick = lambda a: None if a is None else a[idx]
        return Samples(self.x[idx], self.z[idx], pick(self.w), pick(self.y), pick(self.u))

    def filter_env(self, environment) -> Samples:
        return self.subset(np.flatnonzero(self.z == environment))

    def without_hidden(self) -> Samples:
        """Visible view of a candidate pool: covariates and environments only."""
        return Samples(self.x, self.z)

    def records(self):
        for i in range(len(self)):
            yield SampleRecord(
                covariate=self.x[i],
                environment=int(self.z[i]),
                proxy=None if self.w is None else self.w[i],
                outcome=None if self.y is None else float(self.y[i]),
                latent_u=None if self.u is None else float(self.u[i]),
            )

    @classmethod
    def from_records(cls, records: Iterable[SampleRecord]) -> Samples:
        records = list(records)
        if not records:
            raise InputError("cannot build Samples from zero records")

        def column(attr):
            vals = [getattr(r, attr) for r in records]
            if all(v is None for v in vals):
                return None
            if any(v is None for v in vals):
                raise InputError(f"field {attr} is present on some records but not all")
            return np.asarray(vals, dtype=np.float64)

        x = np.asarray([np.atleast_1d(r.covariate) for r in records], dtype=np.float64)
        z = np.asarray([r.environment for r in records], dtype=np.int64)
        w = column("proxy")
        if w is not None and w.ndim == 1:
            w = w[:, None]
        return cls(x, z, w, column("outcome"), column("latent_u"))

    @classmethod
    def concat(cls, parts: Iterable[Samples]) -> Samples:
        parts = [p for p in parts if p is not None and len(p) > 0]
        if not parts:
            raise InputError("nothing to concatenate")

        def join(name):
            cols = [getattr(p, name) for p in parts]
            if any(c is None for c in cols):
                return None
            return np.concatenate(cols)

        return cls(join("x"), join("z"), join("w"), join("y"), join("u"))


FORMAT_VERSION = 1


def write_pool_csv(samples: Samples, stream, visible_w=None, visible_y=None):
    """Write ``idx,env,x_0..x_{d-1},w,y,u,visible_w,visible_y`` rows.

    Hidden values are written but flagged, so the simulator oracle and the
    estimators can read one file with different visibility masks. Proxies
    must be scalar.
    """
    n, d = samples.x.shape
    if samples.w is not None and samples.w.shape[1] != 1:
        raise InputError("pool files hold scalar proxies only")
    vw = np.ones(n, bool) if visible_w is None else np.asarray(visible_w, bool)
    vy = np.ones(n, bool) if visible_y is None else np.asarray(visible_y, bool)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["idx", "env"] + [f"x_{k}" for k in range(d)]
                    + ["w", "y", "u", "visible_w", "visible_y"])
    for i in range(n):
        w = "" if samples.w is None else repr(float(samples.w[i, 0]))
        y = "" if samples.y is None else repr(float(samples.y[i]))
        u = "" if samples.u is None else repr(float(samples.u[i]))
        writer.writerow([i, int(samples.z[i])] + [repr(float(v)) for v in samples.x[i]]
                        + [w, y, u, int(vw[i]), int(vy[i])])


def read_pool_csv(stream, respect_visibility=True) -> Samples:
    """Read a pool file; hidden fields are dropped unless ``respect_visibility`` is False.

    With visibility respected, a column is returned only if every row marks it
    visible.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    header = next(reader)
    xcols = [k for k, h in enumerate(header) if h.startswith("x_")]
    col = {h: k for k, h in enumerate(header)}
    rows = list(reader)
    if not rows:
        raise InputError("pool file has no rows")
    x = np.array([[float(r[k]) for k in xcols] for r in rows])
    z = np.array([int(r[col["env"]]) for r in rows])

    def field(name, flag):
        raw = [r[col[name]] for r in rows]
        if any(v == "" for v in raw):
            return None
        if respect_visibility and flag is not None:
            if not all(r[col[flag]] == "1" for r in rows):
                return None
        return np.array([float(v) for v in raw])

    w = field("w", "visible_w")
    y = field("y", "visible_y")
    u = None if respect_visibility else field("u", None)
    return Samples(x, z, w, y, u)
