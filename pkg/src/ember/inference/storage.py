"""Binary container for fitted models.

Layout: magic ``b"EMBR1"``, little-endian uint32 header length, UTF-8 JSON
header, then raw little-endian arrays at the offsets listed in the header.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np
import scipy.sparse as sp

from ..errors import DataError
from ..gmrf import Mesh2D
from .fit import PosteriorFit
from .model import LatentLayout

MAGIC = b"EMBR1"


def save_fit(fit, path, extra=None):
    """Write ``fit`` to ``path`` atomically.  ``extra`` is stored in the header."""
    Q = sp.coo_matrix(fit.precision)
    arrays = {"theta": np.asarray(fit.theta, dtype="<f8"),
              "mode": np.asarray(fit.mode, dtype="<f8"),
              "q_row": Q.row.astype("<i8"), "q_col": Q.col.astype("<i8"),
              "q_val": Q.data.astype("<f8")}
    if fit.constraints is not None:
        arrays["constraints"] = np.asarray(fit.constraints, dtype="<f8")
    if fit.hessian is not None:
        arrays["hessian"] = np.asarray(fit.hessian, dtype="<f8")
    mesh = fit.layout.mesh
    if mesh is not None:
        arrays["mesh_nodes"] = np.asarray(mesh.nodes, dtype="<f8")
        arrays["mesh_triangles"] = np.asarray(mesh.triangles, dtype="<i8")
        arrays["mesh_interior"] = np.asarray(mesh.interior, dtype="u1")
    table, blobs, off = {}, [], 0
    for name, a in arrays.items():
        a = np.ascontiguousarray(a)
        table[name] = {"dtype": a.dtype.str, "shape": list(a.shape), "offset": off,
                       "nbytes": a.nbytes}
        blobs.append(a.tobytes())
        off += a.nbytes
    header = {"format": "EMBR1", "layout": fit.layout.to_dict(), "hyper": fit.hyper,
              "n": int(len(fit.mode)), "shape": list(fit.precision.shape),
              "log_marginal": fit.log_marginal,
              "flags": {"optimizer_converged": bool(fit.optimizer_converged),
                        "identifiable": bool(fit.identifiable),
                        "newton_converged": bool(fit.newton_converged)},
              "n_evals": int(fit.n_evals), "accepted_moves": int(fit.accepted_moves),
              "spec_digest": fit.spec_digest, "data_digest": fit.data_digest,
              "seed": int(fit.seed), "arrays": table, "extra": extra or {}}
    hb = json.dumps(header, sort_keys=True).encode()
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".fit-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(hb)))
            fh.write(hb)
            for b in blobs:
                fh.write(b)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_header(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:5] != MAGIC:
        raise DataError(f"{path}: not an EMBR1 fit file")
    (hl,) = struct.unpack("<I", raw[5:9])
    header = json.loads(raw[9:9 + hl].decode())
    return header, raw[9 + hl:]


def load_fit(path):
    """Read a fit written by :func:`save_fit`.  The returned fit has no
    observations attached (``fit.model is None``)."""
    header, body = read_header(path)
    arr = {}
    for name, t in header["arrays"].items():
        a = np.frombuffer(body, dtype=np.dtype(t["dtype"]), count=int(np.prod(t["shape"])),
                          offset=t["offset"])
        arr[name] = a.reshape(t["shape"]).copy()
    mesh = None
    if "mesh_nodes" in arr:
        mesh = Mesh2D(arr["mesh_nodes"], arr["mesh_triangles"], arr["mesh_interior"].astype(bool))
    layout = LatentLayout.from_dict(header["layout"], mesh)
    n = header["n"]
    Q = sp.csc_matrix((arr["q_val"], (arr["q_row"], arr["q_col"])), shape=(n, n))
    fl = header["flags"]
    fit = PosteriorFit(layout, header["hyper"], arr["theta"], arr["mode"], Q,
                       arr.get("constraints"), header["log_marginal"], [],
                       fl["optimizer_converged"], fl["identifiable"], fl["newton_converged"],
                       header["n_evals"], header["accepted_moves"], header["spec_digest"],
                       header["data_digest"], header["seed"], arr.get("hessian"), None)
    fit.extra = header.get("extra", {})
    return fit
