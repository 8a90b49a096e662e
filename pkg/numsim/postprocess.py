"""
Report files and plot data.

Numbers are written with ``repr`` so that every float round-trips exactly,
and nothing time- or host-dependent is written, so identical runs produce
byte-identical files.
"""
import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from numsim.enlarge import log_floor
from numsim.simulate import MinimumRecord, PathBundle
from numsim.verify import CalibrationBin, TestReport

logger = logging.getLogger(__name__)

REPORT_FILE = 'reports.json'
SUMMARY_FILE = 'summary.csv'
CDF_FILE = 'cdf_minimum.csv'
CALIBRATION_FILE = 'doob_calibration.csv'
SAMPLE_FILE = 'sample_paths.csv'
TRACE_DIR = 'traces'

SUMMARY_COLUMNS = (
    'name',
    'verdict',
    'statistic',
    'threshold',
    'n_paths',
    'truncated_fraction',
    'details',
)


def _number(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _finite(value: Any) -> Any:
    """Replace NaN and infinities by None, which JSON writes as null."""
    if isinstance(value, dict):
        return {key: _finite(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(item) for item in value]
    if isinstance(value, (float, np.floating)):
        return float(value) if np.isfinite(value) else None
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    count = 0
    with open(path, 'w', newline='') as file:
        writer = csv.writer(file, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([value if isinstance(value, str) else _number(value) for value in row])
            count += 1
    return count


def write_reports(reports: Sequence[TestReport], directory: Path, formats: Sequence[str]) -> None:
    """Write ``reports.json`` and/or ``summary.csv`` in report order."""
    directory.mkdir(parents=True, exist_ok=True)
    if 'json' in formats:
        with open(directory / REPORT_FILE, 'w') as file:
            records = [_finite(report.as_dict()) for report in reports]
            json.dump(records, file, indent=2, allow_nan=False)
            file.write('\n')
    if 'csv' in formats:
        rows = (
            (
                r.name,
                r.verdict.value,
                r.statistic,
                r.threshold,
                r.n_paths,
                r.truncated_fraction,
                r.details,
            )
            for r in reports
        )
        _write_rows(directory / SUMMARY_FILE, SUMMARY_COLUMNS, rows)


def cdf_rows(minima: np.ndarray) -> Iterable[Tuple[float, float, float]]:
    values = np.sort(np.asarray(minima, dtype=np.float64))
    n = values.size
    for k, value in enumerate(values, start=1):
        yield value, k / n, value


def sample_rows(
    paths: Sequence[Tuple[int, PathBundle, MinimumRecord]], stride: int
) -> Iterable[Tuple[int, float, float, float, int]]:
    """Yield every ``stride``-th grid point of each path plus its minimum point."""
    for index, path, record in paths:
        keep = np.zeros(path.steps + 1, dtype=bool)
        keep[::stride] = True
        keep[-1] = True
        keep[record.rho_index] = True
        floor = np.exp(log_floor(path, record.step_log_minima))
        for k in np.flatnonzero(keep):
            yield index, path.times[k], path.xhat[k], floor[k], int(k == record.rho_index)


def write_trace(path: PathBundle, target: Path) -> None:
    """Write one path as time, S1..Sd, xhat, yhat, run_min."""
    d = path.s.shape[1]
    header = ['time'] + [f's{i + 1}' for i in range(d)] + ['xhat', 'yhat', 'run_min']
    rows = (
        (path.times[k], *path.s[k], path.xhat[k], path.yhat[k], path.run_min[k])
        for k in range(path.steps + 1)
    )
    _write_rows(target, header, rows)


def emit_plot_data(
    directory: Path,
    minima: np.ndarray,
    calibration: Sequence[CalibrationBin],
    samples: Sequence[Tuple[int, PathBundle, MinimumRecord]],
    stride: int = 16,
) -> None:
    """Write the CSV series behind the standard plots."""
    directory.mkdir(parents=True, exist_ok=True)
    _write_rows(directory / CDF_FILE, ('minimum', 'empirical_cdf', 'uniform_cdf'), cdf_rows(minima))
    _write_rows(
        directory / CALIBRATION_FILE,
        ('lower', 'upper', 'count', 'mean_predictor', 'frequency'),
        ((b.lower, b.upper, b.count, b.mean_predictor, b.frequency) for b in calibration),
    )
    _write_rows(
        directory / SAMPLE_FILE,
        ('path', 'time', 'xhat', 'run_min', 'is_rho'),
        sample_rows(samples, stride),
    )


def emit_traces(directory: Path, paths: Sequence[Tuple[int, PathBundle, MinimumRecord]]) -> None:
    trace_dir = directory / TRACE_DIR
    trace_dir.mkdir(parents=True, exist_ok=True)
    for index, path, _ in paths:
        write_trace(path, trace_dir / f'path-{index:06d}.csv')


def _read_columns(path: Path) -> Dict[str, np.ndarray]:
    with open(path, newline='') as file:
        reader = csv.reader(file)
        header = next(reader)
        rows = [[float(value) for value in row] for row in reader]
    data = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def render_plots(directory: Path) -> List[Path]:
    """Render PNG figures from the plot data in ``directory``."""
    import matplotlib

    matplotlib.use('Agg')
    from matplotlib import pyplot as plt

    written = []

    if (directory / CDF_FILE).exists():
        data = _read_columns(directory / CDF_FILE)
        fig, ax = plt.subplots()
        ax.plot(data['minimum'], data['empirical_cdf'], label='empirical')
        ax.plot([0, 1], [0, 1], linestyle='--', color='gray', label='uniform')
        ax.set_xlabel('overall minimum')
        ax.set_ylabel('cdf')
        ax.legend()
        written.append(_save(fig, directory / 'cdf_minimum.png'))

    if (directory / CALIBRATION_FILE).exists():
        data = _read_columns(directory / CALIBRATION_FILE)
        fig, ax = plt.subplots()
        ax.scatter(data['mean_predictor'], data['frequency'])
        ax.plot([0, 1], [0, 1], linestyle='--', color='gray')
        ax.set_xlabel('mean predictor I(t)Y(t)')
        ax.set_ylabel('frequency of rho > t')
        written.append(_save(fig, directory / 'doob_calibration.png'))

    if (directory / SAMPLE_FILE).exists():
        data = _read_columns(directory / SAMPLE_FILE)
        fig, ax = plt.subplots()
        for index in np.unique(data['path']):
            mask = data['path'] == index
            ax.plot(data['time'][mask], data['xhat'][mask], linewidth=0.8)
            rho = mask & (data['is_rho'] > 0)
            ax.scatter(data['time'][rho], data['xhat'][rho], marker='o', color='black', s=12)
        ax.set_yscale('log')
        ax.set_xlabel('time')
        ax.set_ylabel('numeraire portfolio')
        written.append(_save(fig, directory / 'sample_paths.png'))

    return written


def _save(fig, target: Path) -> Path:
    from matplotlib import pyplot as plt

    fig.savefig(target)
    plt.close(fig)
    logger.info('wrote %s', target)
    return target
