"""Contains constants used across the library and the loader for the bundled benchmark table."""
import csv
from importlib import resources

# model file
MODEL_MAGIC = b'SONN'
MODEL_VERSION = 1
MODEL_SUFFIX = '.sonn'

# architecture
KERNEL_SIZE = 3
HIDDEN_LAYERS = 2
DEFAULT_Q_ORDERS = [1, 3, 5, 7]
DEFAULT_WIDTHS = [64, 128]
MAX_EXACT_POWER = 7

# data
PIXEL_MAX = 255
DEFAULT_PATCH_SIZE = 40
DEFAULT_PATCH_COUNT = 200_000
DEFAULT_SIGMAS = [30.0, 60.0, 90.0]
DEFAULT_SPLIT_RATIO = 0.95
IMAGE_SUFFIXES = ['.pgm', '.ppm']

# training
DEFAULT_LEARNING_RATE = 1e-3
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPSILON = 1e-8
DEFAULT_EPOCHS = 100
DEFAULT_BATCH_SIZE = 64

# random stream tags, mixed into per-item seeds so streams never collide
STREAM_TRAIN_NOISE = 1
STREAM_VAL_NOISE = 2
STREAM_SHUFFLE = 3
STREAM_EVAL_NOISE = 4
STREAM_DENOISE_NOISE = 5

# reporting
BASELINE_METHOD = 'BM3D'
TABLE1_DATASETS = ['KODAK', 'McMaster', 'CBSD68']
RESULTS_HEADER = ['method', 'dataset', 'sigma', 'psnr_db']
HISTORY_HEADER = ['epoch', 'train_loss', 'val_psnr']
FIG2_HEADER = ['sigma', 'method', 'mean_psnr_db']


def published_rows() -> list[tuple[str, str, float, float]]:
    """
    Reads the bundled Table 1 of the CNN / Self-ONN / BM3D comparison.

    Returns:
        (method, dataset, sigma, psnr_db) tuples in publication order
    """
    text = resources.files('selfonn').joinpath('resources/table1.csv').read_text(encoding='utf-8')
    reader = csv.DictReader(text.splitlines())
    return [(r['method'], r['dataset'], float(r['sigma']), float(r['psnr_db'])) for r in reader]
