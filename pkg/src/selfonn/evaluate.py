"""
PSNR, whole-image denoising, dataset evaluation and the benchmark table arithmetic.

Result grids are indexed by (method, dataset, sigma). Reports compute per-sigma cross-dataset means, overall means and
margins against a baseline; the delta-Q table gives the mean per-dataset percentage change of PSNR between two
polynomial orders at a fixed width.
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from selfonn.classes import Image, NoiseConfig
from selfonn.data import add_awgn
from selfonn.exceptions import IncompleteGrid, InvalidArgument, NetworkNameError
from selfonn.layers import Network, network_forward, parse_network_name
from selfonn.tensor import clip01
from selfonn.values import BASELINE_METHOD, FIG2_HEADER, RESULTS_HEADER, STREAM_EVAL_NOISE, published_rows

logger = logging.getLogger(__name__)

Cell = tuple[str, str, float]


#
# Metrics
#

def _pixels(img: Union[Image, np.ndarray]) -> np.ndarray:
    return img.pixels if isinstance(img, Image) else np.asarray(img)


def psnr(reference: Union[Image, np.ndarray], test: Union[Image, np.ndarray]) -> float:
    """
    Peak signal-to-noise ratio for a peak of 1.0.

    Args:
        reference: clean image or pixel array
        test: image or pixel array of the same shape

    Returns:
        10 * log10(1 / mse) in dB, math.inf when the two are identical
    """
    a, b = _pixels(reference), _pixels(test)
    if a.shape != b.shape:
        raise InvalidArgument(f'Cannot compare images shaped {a.shape} and {b.shape}')

    diff = a.astype(np.float64) - b.astype(np.float64)
    # exactly rounded sum, independent of pixel order
    mse = math.fsum(np.square(diff).ravel().tolist()) / diff.size
    if mse == 0:
        return math.inf
    return 10 * math.log10(1 / mse)


def mean_psnr(values: Iterable[float]) -> float:
    """
    Arithmetic mean of per-image PSNRs. All-infinite input yields infinity; a mix of finite and infinite values is
    rejected because no finite mean represents it.
    """
    values = list(values)
    if not values:
        raise InvalidArgument('Cannot average an empty list of PSNRs')

    infinite = [v for v in values if math.isinf(v)]
    if len(infinite) == len(values):
        return math.inf
    if infinite:
        raise InvalidArgument(f'{len(infinite)} of {len(values)} PSNRs are infinite, finite entries are required')
    return math.fsum(values) / len(values)


def denoise_image(net: Network, noisy: Image) -> Image:
    """
    Runs the network over a whole image and clips the result into [0,1].

    Args:
        net: denoiser, fully convolutional so any size of at least 3x3 works
        noisy: image with the network's channel count

    Returns:
        denoised image of the same size
    """
    if noisy.channels != net.channels:
        raise InvalidArgument(f'Image {noisy.name!r} has {noisy.channels} channels, network expects {net.channels}')
    if noisy.height < 3 or noisy.width < 3:
        raise InvalidArgument(f'Image {noisy.name!r} is {noisy.width}x{noisy.height}, at least 3x3 is needed')

    y, _ = network_forward(net, noisy.pixels[None].astype(net.dtype))
    return Image(clip01(y[0]).astype(np.float32), noisy.name)


def evaluate_dataset(net: Network, images: list[Image], cfg: NoiseConfig) -> float:
    """
    Corrupts every image (noise keyed by its index), denoises it and averages the PSNR against the clean image.

    Args:
        net: denoiser
        images: clean test images
        cfg: noise level and seed

    Returns:
        mean PSNR in dB
    """
    if not images:
        raise InvalidArgument('Cannot evaluate an empty image list')

    scores = []
    for i, img in enumerate(images):
        noisy = add_awgn(img, cfg, (STREAM_EVAL_NOISE, i))
        scores.append(psnr(img, denoise_image(net, noisy)))
        logger.debug('%s sigma %g: %.4f dB', img, cfg.sigma255, scores[-1])

    return mean_psnr(scores)


#
# Result Grids
#

def sigma_label(sigma: float) -> str:
    return f'{sigma:g}'


class EvalGrid:
    """PSNR cells indexed by (method, dataset, sigma), remembering the order in which keys first appeared."""

    def __init__(self):
        self.cells: dict[Cell, float] = {}
        self.external: set[str] = set()
        self.methods: list[str] = []
        self.datasets: list[str] = []
        self.sigmas: list[float] = []

    def set(self, method: str, dataset: str, sigma: float, psnr_db: float, external: bool = False):
        """Stores a cell, replacing an earlier value with the same key."""
        if not math.isfinite(psnr_db):
            raise InvalidArgument(f'PSNR of ({method}, {dataset}, {sigma_label(sigma)}) must be finite')
        sigma = float(sigma)
        for values, key in ((self.methods, method), (self.datasets, dataset), (self.sigmas, sigma)):
            if key not in values:
                values.append(key)
        self.cells[(method, dataset, sigma)] = float(psnr_db)
        if external:
            self.external.add(method)

    def get(self, method: str, dataset: str, sigma: float) -> float:
        try:
            return self.cells[(method, dataset, float(sigma))]
        except KeyError:
            raise IncompleteGrid(f'Missing cell ({method}, {dataset}, sigma={sigma_label(sigma)})')

    def require(self, methods: list[str], datasets: list[str], sigmas: list[float]):
        """Raises IncompleteGrid naming every missing cell of the given cross product."""
        missing = [f'({m}, {d}, sigma={sigma_label(s)})' for m in methods for d in datasets for s in sigmas
                   if (m, d, float(s)) not in self.cells]
        if missing:
            raise IncompleteGrid(f'Missing cells: {", ".join(missing)}')

    def rows(self) -> list[tuple[str, str, float, float]]:
        return [(m, d, s, v) for (m, d, s), v in self.cells.items()]

    def __len__(self) -> int:
        return len(self.cells)

    def __contains__(self, cell: Cell) -> bool:
        method, dataset, sigma = cell
        return (method, dataset, float(sigma)) in self.cells


def published_grid() -> EvalGrid:
    """The bundled Table 1: BM3D (marked external), CNN-64/128 and Self-ONN-{3,5,7}-{64,128}."""
    grid = EvalGrid()
    for method, dataset, sigma, value in published_rows():
        grid.set(method, dataset, sigma, value, external=method == BASELINE_METHOD)
    return grid


def read_results_csv(path: Union[str, Path]) -> EvalGrid:
    grid = EvalGrid()
    with open(path, newline='') as f:
        for row in csv.DictReader(f):
            grid.set(row['method'], row['dataset'], float(row['sigma']), float(row['psnr_db']))
    return grid


def write_results_csv(grid: EvalGrid, path: Union[str, Path]):
    """Writes method,dataset,sigma,psnr_db rows with 4 decimal dB."""
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(RESULTS_HEADER)
        for method, dataset, sigma, value in grid.rows():
            writer.writerow([method, dataset, sigma_label(sigma), f'{value:.4f}'])


#
# Reports
#

@dataclass
class Report:
    """Benchmark summary of a complete result grid."""
    grid: EvalGrid
    methods: list[str]
    datasets: list[str]
    sigmas: list[float]
    baseline: Optional[str]
    sigma_means: dict[str, dict[float, float]] = field(default_factory=dict)
    overall: dict[str, float] = field(default_factory=dict)
    sigma_margins: dict[str, dict[float, float]] = field(default_factory=dict)
    overall_margins: dict[str, float] = field(default_factory=dict)


def aggregate_report(grid: EvalGrid, baseline: Optional[str] = BASELINE_METHOD) -> Report:
    """
    Summarizes a grid: per-sigma means across datasets, each method's mean over every cell and, when a baseline is
    given, every method's margin over it.

    Args:
        grid: results, complete over its methods x datasets x sigmas
        baseline: method the margins are measured against, None to skip margins

    Returns:
        report
    """
    if not len(grid):
        raise IncompleteGrid('Result grid is empty')
    sigmas = sorted(grid.sigmas)
    grid.require(grid.methods, grid.datasets, sigmas)
    if baseline is not None and baseline not in grid.methods:
        raise IncompleteGrid(f'Baseline method {baseline!r} has no cells')

    report = Report(grid, list(grid.methods), list(grid.datasets), sigmas, baseline)
    for m in report.methods:
        report.sigma_means[m] = {s: math.fsum(grid.get(m, d, s) for d in report.datasets) / len(report.datasets)
                                 for s in sigmas}
        cells = [grid.get(m, d, s) for d in report.datasets for s in sigmas]
        report.overall[m] = math.fsum(cells) / len(cells)

    if baseline is not None:
        for m in report.methods:
            report.sigma_margins[m] = {s: report.sigma_means[m][s] - report.sigma_means[baseline][s] for s in sigmas}
            report.overall_margins[m] = report.overall[m] - report.overall[baseline]

    return report


def architecture_name(q_order: int, width: int) -> str:
    return f'CNN-{width}' if q_order == 1 else f'Self-ONN-{q_order}-{width}'


def delta_q_table(grid: EvalGrid, width: int,
                  q_pairs: list[tuple[int, int]]) -> dict[tuple[int, int], dict[float, float]]:
    """
    Percentage change of PSNR when raising Q at a fixed width: for every pair and sigma, the mean over datasets of
    100 * (P_b - P_a) / P_a.

    Args:
        grid: results holding both architectures of every pair
        width: hidden width X
        q_pairs: (Q_a, Q_b) pairs, Q = 1 meaning CNN-X

    Returns:
        pair -> sigma -> percentage change
    """
    sigmas = sorted(grid.sigmas)
    table = {}
    for qa, qb in q_pairs:
        a, b = architecture_name(qa, width), architecture_name(qb, width)
        grid.require([a, b], grid.datasets, sigmas)
        table[(qa, qb)] = {
            s: math.fsum(100 * (grid.get(b, d, s) - grid.get(a, d, s)) / grid.get(a, d, s)
                         for d in grid.datasets) / len(grid.datasets)
            for s in sigmas
        }
    return table


def q_orders_by_width(methods: Iterable[str]) -> dict[int, list[int]]:
    """Groups CNN-X / Self-ONN-Q-X method names by width, skipping other methods."""
    widths: dict[int, list[int]] = {}
    for method in methods:
        try:
            q_order, width = parse_network_name(method)
        except NetworkNameError:
            continue
        widths.setdefault(width, []).append(q_order)
    return {w: sorted(qs) for w, qs in sorted(widths.items())}


def render_table1(report: Report) -> str:
    """Fixed-width method x (dataset, sigma) grid with 2 decimal dB, followed by the summary lines."""
    label = max(len(m) for m in report.methods + ['Method']) + 2
    cell = 8
    span = cell * len(report.sigmas)

    lines = [' ' * label + ''.join(d.center(span) for d in report.datasets),
             'Method'.ljust(label) + ''.join(f'σ={sigma_label(s)}'.rjust(cell)
                                             for _ in report.datasets for s in report.sigmas)]
    for m in report.methods:
        values = ''.join(f'{report.grid.get(m, d, s):.2f}'.rjust(cell) for d in report.datasets for s in report.sigmas)
        lines.append(m.ljust(label) + values)

    lines += ['', 'Mean over datasets'.ljust(label) + ''.join(f'σ={sigma_label(s)}'.rjust(cell)
                                                               for s in report.sigmas) + 'overall'.rjust(cell + 2)]
    for m in report.methods:
        lines.append(m.ljust(label) + ''.join(f'{report.sigma_means[m][s]:.2f}'.rjust(cell) for s in report.sigmas) +
                     f'{report.overall[m]:.2f}'.rjust(cell + 2))

    if report.baseline is not None:
        lines += ['', f'Margin over {report.baseline}'.ljust(label) +
                  ''.join(f'σ={sigma_label(s)}'.rjust(cell) for s in report.sigmas) + 'overall'.rjust(cell + 2)]
        for m in report.methods:
            if m == report.baseline:
                continue
            lines.append(m.ljust(label) +
                         ''.join(f'{report.sigma_margins[m][s]:+.2f}'.rjust(cell) for s in report.sigmas) +
                         f'{report.overall_margins[m]:+.2f}'.rjust(cell + 2))

    return '\n'.join(lines) + '\n'


def render_table2(tables: dict[int, dict[tuple[int, int], dict[float, float]]]) -> str:
    """Neurons / delta-Q / per-sigma percentage change rows with 2 decimals."""
    sigmas = sorted({s for table in tables.values() for row in table.values() for s in row})
    cell = 8
    lines = ['Neurons'.ljust(9) + 'ΔQ'.ljust(9) + ''.join(f'σ={sigma_label(s)}'.rjust(cell) for s in sigmas)]
    for width, table in tables.items():
        for i, ((qa, qb), row) in enumerate(table.items()):
            lead = str(width) if i == 0 else ''
            lines.append(lead.ljust(9) + f'{qa} → {qb}'.ljust(9) +
                         ''.join(f'{row[s]:.2f}'.rjust(cell) for s in sigmas))
    return '\n'.join(lines) + '\n'


def fig2_rows(report: Report) -> list[tuple[float, str, float]]:
    """(sigma, method, mean PSNR across datasets) rows, sigma-major."""
    return [(s, m, report.sigma_means[m][s]) for s in report.sigmas for m in report.methods]


def write_fig2_csv(report: Report, path: Union[str, Path]):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(FIG2_HEADER)
        for sigma, method, value in fig2_rows(report):
            writer.writerow([sigma_label(sigma), method, f'{value:.4f}'])
