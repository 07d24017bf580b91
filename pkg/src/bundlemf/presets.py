"""Named presets for the conformal factor, connection and weight, plus field I/O.

Preset grammar (all case-sensitive):
  v:          "zero" | "cos-x[:amp]" | "custom-file:<path>"
  connection: "zero" | "harmonic:a,b" | "exact:cos-x:amp" | "file:<path>"
  h weight:   "one" | "exp-cos:amp" | "file:<path>"

Fields serialize to CSV (row-major, two header lines "n,v-preset" / values) and
to a small JSON descriptor pointing at the CSV.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .geometry import OneForm, ScalarField, TorusGrid, exterior_derivative


def _axis(n: int) -> np.ndarray:
    return np.arange(n) / n


def make_v_field(preset: str, n: int) -> ScalarField:
    if preset == "zero":
        return ScalarField(np.zeros((n, n)))
    if preset.startswith("cos-x"):
        amp = 0.1
        if ":" in preset:
            amp = float(preset.split(":", 1)[1])
        x = _axis(n)
        return ScalarField(amp * np.cos(2.0 * np.pi * x)[:, None] * np.ones((1, n)))
    if preset.startswith("custom-file:"):
        return load_scalar_csv(preset.split(":", 1)[1], expected_n=n)
    raise ValueError(f"unknown v preset {preset!r}")


def make_connection_form(preset: str, grid: TorusGrid) -> OneForm:
    n = grid.n
    if preset == "zero":
        z = np.zeros((n, n))
        return OneForm(z, z)
    if preset.startswith("harmonic:"):
        a, b = (float(t) for t in preset.split(":", 1)[1].split(","))
        return OneForm(np.full((n, n), a), np.full((n, n), b))
    if preset.startswith("exact:cos-x:"):
        amp = float(preset.split(":")[2])
        x = _axis(n)
        f = ScalarField(amp * np.cos(2.0 * np.pi * x)[:, None] * np.ones((1, n)))
        return exterior_derivative(f, grid)
    if preset.startswith("file:"):
        return load_oneform_csv(preset.split(":", 1)[1], expected_n=n)
    raise ValueError(f"unknown connection preset {preset!r}")


def make_h_field(preset: str, n: int) -> ScalarField:
    if preset == "one":
        return ScalarField(np.ones((n, n)))
    if preset.startswith("exp-cos:"):
        amp = float(preset.split(":", 1)[1])
        x = _axis(n)
        h = np.exp(amp * np.cos(2.0 * np.pi * x))[:, None] * np.ones((1, n))
        return ScalarField(h)
    if preset.startswith("file:"):
        h = load_scalar_csv(preset.split(":", 1)[1], expected_n=n)
        if h.values.min() <= 0.0:
            raise ValueError("h preset must yield a strictly positive field")
        return h
    raise ValueError(f"unknown h preset {preset!r}")


# ---------------------------------------------------------------------------
# CSV / JSON field serialization
# ---------------------------------------------------------------------------

def save_scalar_csv(field: ScalarField, path: str, v_preset: str = "zero") -> None:
    with open(path, "w") as fh:
        fh.write("n,v-preset\n")
        fh.write(f"{field.n},{v_preset}\n")
        np.savetxt(fh, field.values, delimiter=",", fmt="%.17g")


def load_scalar_csv(path: str, expected_n: int | None = None) -> ScalarField:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "n,v-preset":
            raise ValueError(f"{path}: expected header 'n,v-preset', got {header!r}")
        n = int(fh.readline().split(",")[0])
        vals = np.loadtxt(fh, delimiter=",", ndmin=2)
    if vals.shape != (n, n):
        raise ValueError(f"{path}: payload shape {vals.shape} does not match n={n}")
    if expected_n is not None and n != expected_n:
        raise ValueError(f"{path}: field size {n} does not match grid size {expected_n}")
    return ScalarField(vals)


def save_oneform_csv(form: OneForm, path: str, v_preset: str = "zero") -> None:
    with open(path, "w") as fh:
        fh.write("n,v-preset\n")
        fh.write(f"{form.n},{v_preset}\n")
        np.savetxt(fh, np.vstack([form.c1, form.c2]), delimiter=",", fmt="%.17g")


def load_oneform_csv(path: str, expected_n: int | None = None) -> OneForm:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "n,v-preset":
            raise ValueError(f"{path}: expected header 'n,v-preset', got {header!r}")
        n = int(fh.readline().split(",")[0])
        vals = np.loadtxt(fh, delimiter=",", ndmin=2)
    if vals.shape != (2 * n, n):
        raise ValueError(f"{path}: payload shape {vals.shape} does not match n={n}")
    if expected_n is not None and n != expected_n:
        raise ValueError(f"{path}: form size {n} does not match grid size {expected_n}")
    return OneForm(vals[:n], vals[n:])


def save_field_json(path_json: str, path_csv: str, kind: str, n: int, v_preset: str) -> None:
    desc = {"kind": kind, "n": n, "v_preset": v_preset, "csv": os.path.basename(path_csv)}
    with open(path_json, "w") as fh:
        json.dump(desc, fh, indent=2, sort_keys=True)
        fh.write("\n")
