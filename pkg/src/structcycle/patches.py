"""3x3 input/output patch grid, pair sampling over the four cases, combination labels.

A draw picks two distinct patches out of the 18 formed by the grids of a tagged
input and its translation. Pairs are classified as

    A  same position, different source
    B  both from the tagged input, different positions
    C  both from the translated output, different positions
    D  different source and different position

and labelled with the modality combination (tagged-tagged, cine-cine, tagged-cine).
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from .data import Image

GRID = 3
N_POS = GRID * GRID


class Source(str, enum.Enum):
    INPUT_TAGGED = "INPUT_TAGGED"
    OUTPUT_CINE = "OUTPUT_CINE"


class PairCase(str, enum.Enum):
    A_SAME_POS_CROSS_MOD = "A"
    B_BOTH_TAGGED = "B"
    C_BOTH_CINE = "C"
    D_CROSS_MOD_DIFF_POS = "D"


class Combo(enum.IntEnum):
    TAGGED_TAGGED = 0
    CINE_CINE = 1
    TAGGED_CINE = 2


class SamplerMode(str, enum.Enum):
    UNIFORM = "UNIFORM"
    STRATIFIED = "STRATIFIED"


@dataclass
class GridPatch:
    pixels: np.ndarray
    grid_pos: int
    source: Source


@dataclass
class PatchPair:
    first: GridPatch
    second: GridPatch
    case: PairCase
    combo_label: np.ndarray


def patch_side(image_side: int) -> int:
    return image_side // GRID


def grid_window(grid_pos: int, image_side: int) -> tuple[slice, slice]:
    """Row/column slices of a grid cell; the remainder strip on the bottom/right is dropped."""
    p = patch_side(image_side)
    r, c = divmod(grid_pos, GRID)
    return slice(r * p, (r + 1) * p), slice(c * p, (c + 1) * p)


def split_grid(x: Image | np.ndarray, source: Source) -> list[GridPatch]:
    pixels = x.pixels if isinstance(x, Image) else np.asarray(x)
    side = min(pixels.shape[-2:])
    if side < GRID:
        raise ValueError(f"image side must be >= {GRID}, got {side}")
    return [GridPatch(pixels[(..., *grid_window(k, side))], k, source) for k in range(N_POS)]


def assemble_grid(patches: list[GridPatch]) -> np.ndarray:
    ordered = sorted(patches, key=lambda p: p.grid_pos)
    rows = [np.concatenate([p.pixels for p in ordered[r * GRID:(r + 1) * GRID]], axis=-1) for r in range(GRID)]
    return np.concatenate(rows, axis=-2)


def classify(src1: Source, pos1: int, src2: Source, pos2: int) -> PairCase:
    if src1 == src2 and pos1 == pos2:
        raise ValueError("a pair must consist of two distinct patches")
    if src1 != src2:
        return PairCase.A_SAME_POS_CROSS_MOD if pos1 == pos2 else PairCase.D_CROSS_MOD_DIFF_POS
    return PairCase.B_BOTH_TAGGED if src1 is Source.INPUT_TAGGED else PairCase.C_BOTH_CINE


def combo_of(src1: Source, src2: Source) -> Combo:
    if src1 != src2:
        return Combo.TAGGED_CINE
    return Combo.TAGGED_TAGGED if src1 is Source.INPUT_TAGGED else Combo.CINE_CINE


def onehot(combo: Combo) -> np.ndarray:
    y = np.zeros(3)
    y[int(combo)] = 1.0
    return y


# slot k in 0..17: k < 9 is the tagged-input patch at position k, otherwise output position k-9
def slot_source(slot: int) -> Source:
    return Source.INPUT_TAGGED if slot < N_POS else Source.OUTPUT_CINE


def slot_pos(slot: int) -> int:
    return slot % N_POS


ALL_PAIRS: tuple[tuple[int, int], ...] = tuple(itertools.combinations(range(2 * N_POS), 2))
PAIRS_BY_CASE: dict[PairCase, tuple[tuple[int, int], ...]] = {
    case: tuple(p for p in ALL_PAIRS
                if classify(slot_source(p[0]), slot_pos(p[0]), slot_source(p[1]), slot_pos(p[1])) is case)
    for case in PairCase
}
_CASES = tuple(PairCase)


def sample_slots(rng: np.random.Generator, mode: SamplerMode | str = SamplerMode.STRATIFIED) -> tuple[int, int, PairCase]:
    """Draw one unordered pair of slots. Self-pairs are excluded."""
    mode = SamplerMode(mode)
    if mode is SamplerMode.UNIFORM:
        i, j = ALL_PAIRS[rng.integers(len(ALL_PAIRS))]
    else:
        case = _CASES[rng.integers(len(_CASES))]
        pool = PAIRS_BY_CASE[case]
        i, j = pool[rng.integers(len(pool))]
    return i, j, classify(slot_source(i), slot_pos(i), slot_source(j), slot_pos(j))


def sample_pair(input_patches: list[GridPatch], output_patches: list[GridPatch],
                rng: np.random.Generator, mode: SamplerMode | str = SamplerMode.STRATIFIED) -> PatchPair:
    if len(input_patches) != N_POS or len(output_patches) != N_POS:
        raise ValueError(f"expected {N_POS} patches per grid, got {len(input_patches)} and {len(output_patches)}")
    pool = list(input_patches) + list(output_patches)
    i, j, case = sample_slots(rng, mode)
    first, second = pool[i], pool[j]
    return PatchPair(first, second, case, onehot(combo_of(first.source, second.source)))


def combo_onehot(pair: PatchPair) -> np.ndarray:
    return onehot(combo_of(pair.first.source, pair.second.source))
