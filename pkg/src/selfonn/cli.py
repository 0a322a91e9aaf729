"""Command-line front end: train, denoise, eval and report."""
import argparse
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from selfonn.classes import NoiseConfig
from selfonn.data import add_awgn, image_paths, load_image, load_images, extract_patches, save_image
from selfonn.evaluate import EvalGrid, aggregate_report, denoise_image, delta_q_table, evaluate_dataset, \
    published_grid, psnr, q_orders_by_width, read_results_csv, render_table1, render_table2, sigma_label, \
    write_fig2_csv, write_results_csv
from selfonn.exceptions import ConfigError, DecodeError, IncompleteGrid, InvalidArgument, NetworkNameError, \
    NumericError
from selfonn.layers import Network, build_network, load_model, parse_network_name, save_model
from selfonn.tools import resolve_threads, set_threads
from selfonn.train import AdamConfig, TrainConfig, fit, write_history_csv
from selfonn.values import BASELINE_METHOD, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE, \
    DEFAULT_PATCH_COUNT, DEFAULT_PATCH_SIZE, DEFAULT_SIGMAS, MODEL_SUFFIX, STREAM_DENOISE_NOISE, TABLE1_DATASETS

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

RUN_CONFIG_FILE = 'run.cfg'
RESULTS_FILE = 'results.csv'
TABLE1_FILE = 'table1.txt'
TABLE2_FILE = 'table2.txt'
FIG2_FILE = 'fig2.csv'

COMMANDS = ['train', 'denoise', 'eval', 'report']


@dataclass
class RunConfig:
    """
    Fully resolved command settings: defaults, then a config file, then flags.

    Args:
        model: architecture name for train, model file path(s) for denoise / eval, may contain {sigma}
        data: training image directory (train) or input directory (denoise)
        test: test image directory, one dataset per subdirectory
        sigma: noise levels on the 0 - 255 scale
        seed: seed of patch sampling, initialization, shuffling and every noise stream
        epochs: training epochs
        batch: minibatch size
        patches: number of training patches
        patch_size: square patch side
        channels: image channels, 1 or 3
        learning_rate: Adam step size
        out: output directory
        threads: worker count
        published: report on the bundled Table 1 instead of results.csv
    """
    model: str = 'CNN-64'
    data: str = ''
    test: str = ''
    sigma: list[float] = field(default_factory=lambda: list(DEFAULT_SIGMAS))
    seed: int = 0
    epochs: int = DEFAULT_EPOCHS
    batch: int = DEFAULT_BATCH_SIZE
    patches: int = DEFAULT_PATCH_COUNT
    patch_size: int = DEFAULT_PATCH_SIZE
    channels: int = 1
    learning_rate: float = DEFAULT_LEARNING_RATE
    out: str = 'out'
    threads: int = 0
    published: bool = False

    def render(self, command: str) -> str:
        """key = value lines accepted back by --config."""
        lines = [f'# selfonn {command} --config {RUN_CONFIG_FILE}']
        for key, value in asdict(self).items():
            if isinstance(value, list):
                value = ','.join(sigma_label(v) for v in value)
            elif isinstance(value, bool):
                value = 'true' if value else 'false'
            lines.append(f'{key} = {value}')
        return '\n'.join(lines) + '\n'


# command specific defaults, denoise only adds noise when asked to
COMMAND_DEFAULTS = {
    'denoise': {'sigma': []},
}

_FIELD_TYPES = {
    'model': str, 'data': str, 'test': str, 'sigma': list, 'seed': int, 'epochs': int, 'batch': int,
    'patches': int, 'patch_size': int, 'channels': int, 'learning_rate': float, 'out': str, 'threads': int,
    'published': bool,
}


def _convert(key: str, value: str):
    """Converts a config file or flag string to the field's type."""
    kind = _FIELD_TYPES[key]
    try:
        if kind is list:
            return [float(v) for v in value.split(',') if v.strip()]
        if kind is bool:
            if value.strip().lower() not in ('true', 'false', '1', '0', 'yes', 'no'):
                raise ValueError(value)
            return value.strip().lower() in ('true', '1', 'yes')
        return kind(value.strip())
    except ValueError:
        raise ConfigError(f'Invalid value {value!r} for {key}')


def read_config_file(path: str) -> dict[str, object]:
    """
    Parses `key = value` lines. # starts a comment, blank lines are ignored and keys may use - or _.

    Args:
        path: config file path

    Returns:
        converted values by field name
    """
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f'Cannot read config file {path}: {e}')

    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f'{path}:{number}: expected key = value, got {line!r}')
        key, value = (part.strip() for part in line.split('=', 1))
        key = key.replace('-', '_')
        if key not in _FIELD_TYPES:
            raise ConfigError(f'{path}:{number}: unknown key {key!r}')
        values[key] = _convert(key, value)

    return values


def resolve_config(command: str, args: argparse.Namespace) -> RunConfig:
    """Layers defaults, the optional config file and the given flags, flags winning."""
    values = dict(COMMAND_DEFAULTS.get(command, {}))
    if args.config:
        values.update(read_config_file(args.config))
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None and flag is not False:
            values[f.name] = _convert(f.name, str(flag)) if isinstance(flag, str) else flag

    cfg = replace(RunConfig(), **values)
    try:
        cfg.threads = resolve_threads(cfg.threads or None)
    except InvalidArgument as e:
        raise ConfigError(str(e))
    return cfg


def _write_run_config(cfg: RunConfig, command: str) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / RUN_CONFIG_FILE).write_text(cfg.render(command), encoding='utf-8')
    return out


def _model_path(template: str, sigma: Optional[float]) -> str:
    if '{sigma}' in template:
        if sigma is None:
            raise ConfigError(f'Model path {template!r} needs --sigma to fill in {{sigma}}')
        return template.replace('{sigma}', sigma_label(sigma))
    return template


def _load_model(path: str) -> Network:
    if not Path(path).is_file():
        raise FileNotFoundError(f'Model file {path} does not exist')
    return load_model(path)


#
# Commands
#

def cmd_train(cfg: RunConfig):
    """Trains one model per noise level and writes <name>-sigma<s>.sonn with its history CSV."""
    parse_network_name(cfg.model)
    if not cfg.data:
        raise ConfigError('train needs --data')
    if not cfg.sigma:
        raise ConfigError('train needs at least one --sigma')

    images = load_images(cfg.data)
    for img in images:
        if img.channels != cfg.channels:
            raise InvalidArgument(f'Image {img.name} has {img.channels} channels, --channels is {cfg.channels}')
    patches = extract_patches(images, cfg.patch_size, cfg.patches, cfg.seed)
    logger.info('Extracted %s', patches)

    out = _write_run_config(cfg, 'train')
    for sigma in cfg.sigma:
        net = build_network(cfg.model, cfg.channels, cfg.seed)
        logger.info('Training %s at sigma %s', net, sigma_label(sigma))
        train_cfg = TrainConfig(NoiseConfig(sigma, cfg.seed), cfg.epochs, cfg.batch, cfg.seed,
                                adam=AdamConfig(cfg.learning_rate))
        best, history = fit(net, patches, train_cfg)

        stem = f'{net.name}-sigma{sigma_label(sigma)}'
        save_model(best, out / f'{stem}{MODEL_SUFFIX}')
        write_history_csv(history, out / f'{stem}-history.csv')


def cmd_denoise(cfg: RunConfig):
    """Denoises every image of --data (or --test), optionally corrupting it first with --sigma."""
    source = cfg.data or cfg.test
    if not source:
        raise ConfigError('denoise needs --data with the input images')
    paths = image_paths(source)
    if not paths:
        raise InvalidArgument(f'No .pgm or .ppm images in {source}')

    out = _write_run_config(cfg, 'denoise')
    for sigma in cfg.sigma or [None]:
        net = _load_model(_model_path(cfg.model, sigma))
        for i, path in enumerate(paths):
            img = load_image(path)
            tag = '' if sigma is None or len(cfg.sigma) == 1 else f'_sigma{sigma_label(sigma)}'
            if sigma is not None:
                noisy = add_awgn(img, NoiseConfig(sigma, cfg.seed), (STREAM_DENOISE_NOISE, i))
                save_image(noisy, out / f'{path.stem}{tag}_noisy{path.suffix}')
            else:
                noisy = img

            denoised = denoise_image(net, noisy)
            save_image(denoised, out / f'{path.stem}{tag}_denoised{path.suffix}')
            if sigma is not None:
                logger.info('%s: noisy %.2f dB, denoised %.2f dB', path.name, psnr(img, noisy), psnr(img, denoised))


def _datasets(test: str) -> list[tuple[str, Path]]:
    """Subdirectories holding images, or the directory itself when it holds images directly."""
    root = Path(test)
    if not root.is_dir():
        raise FileNotFoundError(f'Test directory {test} does not exist')
    if image_paths(root):
        return [(root.name, root)]
    subsets = [(d.name, d) for d in sorted(root.iterdir()) if d.is_dir() and image_paths(d)]
    if not subsets:
        raise InvalidArgument(f'No .pgm or .ppm images in {test} or its subdirectories')
    return subsets


def cmd_eval(cfg: RunConfig):
    """Evaluates every (model, dataset, sigma) and merges the rows into results.csv."""
    if not cfg.test:
        raise ConfigError('eval needs --test')
    if not cfg.sigma:
        raise ConfigError('eval needs at least one --sigma')

    datasets = [(name, load_images(path)) for name, path in _datasets(cfg.test)]
    out = _write_run_config(cfg, 'eval')
    results = out / RESULTS_FILE
    grid = read_results_csv(results) if results.is_file() else EvalGrid()

    published = published_grid()
    for template in (t.strip() for t in cfg.model.split(',') if t.strip()):
        for sigma in cfg.sigma:
            net = _load_model(_model_path(template, sigma))
            for name, images in datasets:
                value = evaluate_dataset(net, images, NoiseConfig(sigma, cfg.seed))
                grid.set(net.name, name, sigma, value)
                logger.info('%s on %s at sigma %s: %.4f dB', net.name, name, sigma_label(sigma), value)

    # BM3D is never run, its published numbers stand in for datasets of the same name
    for name, _ in datasets:
        for reference in TABLE1_DATASETS:
            if name.casefold() != reference.casefold():
                continue
            for sigma in cfg.sigma:
                if (BASELINE_METHOD, reference, sigma) in published:
                    grid.set(BASELINE_METHOD, name, sigma, published.get(BASELINE_METHOD, reference, sigma),
                             external=True)

    write_results_csv(grid, results)


def cmd_report(cfg: RunConfig):
    """Writes table1.txt, table2.txt and fig2.csv from results.csv (or the bundled Table 1)."""
    out = Path(cfg.out)
    if cfg.published:
        grid = published_grid()
    else:
        results = out / RESULTS_FILE
        if not results.is_file():
            raise FileNotFoundError(f'No {RESULTS_FILE} in {out}, run eval first')
        grid = read_results_csv(results)

    baseline = BASELINE_METHOD if BASELINE_METHOD in grid.methods else None
    report = aggregate_report(grid, baseline)
    tables = {width: delta_q_table(grid, width, list(zip(orders, orders[1:])))
              for width, orders in q_orders_by_width(report.methods).items() if len(orders) > 1}

    out = _write_run_config(cfg, 'report')
    (out / TABLE1_FILE).write_text(render_table1(report), encoding='utf-8')
    (out / TABLE2_FILE).write_text(render_table2(tables), encoding='utf-8')
    write_fig2_csv(report, out / FIG2_FILE)
    for m in report.methods:
        logger.info('%s overall %.2f dB', m, report.overall[m])


HANDLERS = {
    'train': cmd_train,
    'denoise': cmd_denoise,
    'eval': cmd_eval,
    'report': cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--model', help='architecture name (train) or model file, may contain {sigma}')
    common.add_argument('--data', help='training / input image directory')
    common.add_argument('--test', help='test image directory, one dataset per subdirectory')
    common.add_argument('--sigma', help='comma separated noise levels on the 0 - 255 scale')
    common.add_argument('--seed', type=int)
    common.add_argument('--epochs', type=int)
    common.add_argument('--batch', type=int)
    common.add_argument('--patches', type=int)
    common.add_argument('--patch-size', dest='patch_size', type=int)
    common.add_argument('--channels', type=int, choices=[1, 3])
    common.add_argument('--lr', dest='learning_rate', type=float)
    common.add_argument('--out', help='output directory')
    common.add_argument('--config', help='key = value config file, overridden by flags')
    common.add_argument('--threads', type=int, help='worker cap, default $SELFONN_THREADS or all cores')
    common.add_argument('--published', action='store_true', help='report on the bundled Table 1')
    common.add_argument('--verbose', action='store_true', help='log every batch')

    parser = argparse.ArgumentParser(prog='selfonn', description='Compact CNN / Self-ONN image denoisers.')
    commands = parser.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        commands.add_parser(name, parents=[common], help=HANDLERS[name].__doc__)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    """
    Runs one command.

    Returns:
        0 on success, 2 on usage, config or data errors, 3 when training diverges
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    try:
        cfg = resolve_config(args.command, args)
        set_threads(cfg.threads)
        HANDLERS[args.command](cfg)
    except NumericError as e:
        logger.error('%s', e)
        return EXIT_NUMERIC
    except (ConfigError, NetworkNameError, InvalidArgument, DecodeError, IncompleteGrid, OSError) as e:
        logger.error('%s', e)
        return EXIT_USAGE

    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
