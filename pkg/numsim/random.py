"""
Per-path random streams.

Every path owns two counter-based Philox streams derived from
``(seed, path_index)``: one for the Brownian increments and one for the
Brownian-bridge uniforms.  Streams never depend on how paths are grouped
into chunks or threads, which makes every ensemble statistic reproducible.
"""
from typing import Tuple

import attr
import numpy as np
from numpy.random import Generator, Philox, SeedSequence

NOISE_STREAM = 0
BRIDGE_STREAM = 1


def path_generator(seed: int, path_index: int, stream: int = NOISE_STREAM) -> Generator:
    """Return the generator of one stream of one path."""
    sequence = SeedSequence(entropy=seed, spawn_key=(path_index, stream))
    return Generator(Philox(sequence))


@attr.s(auto_attribs=True, frozen=True)
class PathStreams(object):
    noise: Generator
    bridge: Generator

    @classmethod
    def create(cls, seed: int, path_index: int) -> 'PathStreams':
        if path_index < 0:
            raise ValueError(f'path index must be nonnegative, got {path_index}')
        return cls(
            noise=path_generator(seed, path_index, NOISE_STREAM),
            bridge=path_generator(seed, path_index, BRIDGE_STREAM),
        )


def brownian_increments(rng: Generator, steps: int, drivers: int, dt: float) -> np.ndarray:
    """Draw ``steps`` independent increments of an m-dimensional Brownian motion."""
    return rng.standard_normal(size=(steps, drivers)) * np.sqrt(dt)


def open_uniforms(rng: Generator, size: int) -> np.ndarray:
    """Draw uniforms on (0, 1], safe to pass through a logarithm."""
    return 1.0 - rng.random(size)


def chunk_bounds(n_paths: int, chunk_size: int) -> Tuple[Tuple[int, int], ...]:
    """Return the half-open path index ranges of all chunks, in chunk order."""
    return tuple(
        (start, min(start + chunk_size, n_paths)) for start in range(0, n_paths, chunk_size)
    )
