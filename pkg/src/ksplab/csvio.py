"""CSV emission and ingestion for all artifact schemas.

Plain RFC-4180-style files: comma separator, '.' decimal, LF line endings.
Floats are written with ``repr`` (shortest round-trip form), so a write /
read cycle reproduces every value bit-exactly.
"""

from __future__ import annotations

import numpy as np

from .filters import FilterEstimate
from .kalman import GaussianBelief
from .markov import RateMatrix
from .observation import ObservationPath
from .sde import SamplePath


def _fmt(v) -> str:
    return repr(float(v))


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, "r", newline="\n") as fh:
        header = fh.readline().rstrip("\n").split(",")
        data = [[float(v) for v in line.rstrip("\n").split(",")] for line in fh if line.strip()]
    return header, np.asarray(data, dtype=float)


def path_to_csv(path_obj: SamplePath, path) -> None:
    d = path_obj.dim
    header = ["t"] + [f"x_{i + 1}" for i in range(d)]
    rows = np.column_stack([path_obj.times, path_obj.states])
    write_csv(path, header, rows)


def path_from_csv(path) -> SamplePath:
    _, data = read_csv(path)
    return SamplePath(times=data[:, 0], states=data[:, 1:])


def observation_to_csv(obs: ObservationPath, path) -> None:
    m = obs.dim
    header = ["t"] + [f"y_{i + 1}" for i in range(m)]
    rows = np.column_stack([obs.times, obs.values])
    write_csv(path, header, rows)


def observation_from_csv(path) -> ObservationPath:
    _, data = read_csv(path)
    values = data[:, 1:]
    return ObservationPath(times=data[:, 0], values=values, increments=np.diff(values, axis=0))


def beliefs_to_csv(times: np.ndarray, beliefs: list[GaussianBelief], path) -> None:
    """Header t, xhat_1..xhat_d, then the upper covariance triangle row-major."""
    d = beliefs[0].mean.size
    header = ["t"] + [f"xhat_{i + 1}" for i in range(d)]
    header += [f"R_{i + 1}{j + 1}" for i in range(d) for j in range(i, d)]
    rows = []
    for t, b in zip(times, beliefs):
        tri = [b.cov[i, j] for i in range(d) for j in range(i, d)]
        rows.append([t, *b.mean, *tri])
    write_csv(path, header, rows)


def estimates_to_csv(est: FilterEstimate, path) -> None:
    names = list(est.moments)
    header = ["t"] + [f"phi_{i + 1}" for i in range(len(names))] + ["ess"]
    rows = np.column_stack([est.times] + [est.moments[n] for n in names] + [est.ess])
    write_csv(path, header, rows)


def rate_matrix_to_csv(W: RateMatrix, path) -> None:
    """(i, j, rate) triplets, 0-indexed, off-diagonal entries only."""
    rows = []
    for i in range(W.n_states):
        for j in range(W.n_states):
            if i != j:
                rows.append([i, j, W.rates[i, j]])
    with open(path, "w", newline="\n") as fh:
        fh.write("i,j,rate\n")
        for i, j, rate in rows:
            fh.write(f"{int(i)},{int(j)},{_fmt(rate)}\n")


def rate_matrix_from_csv(path) -> RateMatrix:
    from .markov import rate_matrix_from_triplets

    triplets = []
    with open(path, "r", newline="\n") as fh:
        fh.readline()  # header
        for line in fh:
            if line.strip():
                i, j, rate = line.rstrip("\n").split(",")
                triplets.append((int(i), int(j), float(rate)))
    return rate_matrix_from_triplets(triplets)


def matrix_to_csv(mat: np.ndarray, path, prefix: str = "q") -> None:
    mat = np.atleast_2d(mat)
    header = [f"{prefix}_{j + 1}" for j in range(mat.shape[1])]
    write_csv(path, header, mat)
