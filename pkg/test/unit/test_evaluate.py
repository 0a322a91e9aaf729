import math

import numpy as np
from pytest import approx, raises

from selfonn.classes import Activation, Image, LayerSpec, NetworkSpec, NoiseConfig
from selfonn.data import add_awgn, synthetic_images
from selfonn.evaluate import EvalGrid, aggregate_report, delta_q_table, denoise_image, evaluate_dataset, \
    fig2_rows, mean_psnr, psnr, published_grid, q_orders_by_width, read_results_csv, render_table1, \
    render_table2, write_results_csv
from selfonn.exceptions import IncompleteGrid, InvalidArgument
from selfonn.layers import GenerativeConvParams, Network, build_network, network_forward
from selfonn.values import STREAM_EVAL_NOISE

rng = np.random.default_rng(5)

# percentage change rows as printed next to the benchmark table
PUBLISHED_DELTA_Q = {
    64: {(1, 3): [0.35, 0.28, 0.31], (3, 5): [0.04, 0.10, -0.04], (5, 7): [-0.01, -0.05, -0.01]},
    128: {(1, 3): [0.34, 0.25, 0.07], (3, 5): [0.00, -0.09, 0.13], (5, 7): [0.12, 0.03, 0.04]},
}


def identity_network(channels=1):
    layer = LayerSpec(channels, channels, 1, Activation.LINEAR)
    weights = np.zeros((1, channels, channels, 3, 3), dtype=np.float32)
    for c in range(channels):
        weights[0, c, c, 1, 1] = 1
    params = [GenerativeConvParams(weights.copy(), np.zeros(channels, dtype=np.float32)) for _ in range(3)]
    return Network(NetworkSpec(channels, (layer,) * 3), params)


def test_psnr_closed_forms():
    a = rng.uniform(0, 1, (1, 6, 6))
    assert psnr(a, a) == math.inf
    assert psnr(np.zeros((1, 4, 4)), np.full((1, 4, 4), 0.1)) == approx(20.0, abs=1e-9)
    with raises(InvalidArgument):
        psnr(np.zeros((1, 4, 4)), np.zeros((1, 4, 5)))


def test_psnr_matches_two_pass_mse():
    a, b = rng.uniform(0, 1, (2, 3, 17, 13))
    total = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        total += (x - y) ** 2
    assert psnr(a, b) == approx(10 * math.log10(a.size / total), abs=1e-9)


def test_psnr_symmetry_and_permutation():
    a, b = rng.uniform(0, 1, (2, 1, 16, 16))
    assert psnr(a, b) == psnr(b, a)
    order = rng.permutation(a.size)
    shuffled_a = a.ravel()[order].reshape(a.shape)
    shuffled_b = b.ravel()[order].reshape(b.shape)
    assert psnr(shuffled_a, shuffled_b) == psnr(a, b)
    assert psnr(Image(a), Image(b)) == psnr(a, b)


def test_mean_psnr_policy():
    assert mean_psnr([20.0, 30.0]) == 25.0
    assert mean_psnr([math.inf, math.inf]) == math.inf
    with raises(InvalidArgument):
        mean_psnr([math.inf, 30.0])
    with raises(InvalidArgument):
        mean_psnr([])


def test_identity_network_denoise():
    net = identity_network()
    noisy = add_awgn(synthetic_images(1, 12, 9)[0], NoiseConfig(60), (0,))
    assert np.array_equal(denoise_image(net, noisy).pixels, noisy.pixels)


def test_denoise_clips_and_checks():
    net = build_network('Self-ONN-3-4', seed=1)
    net.params[-1].bias[...] = 5
    out = denoise_image(net, synthetic_images(1, 8, 8)[0])
    assert out.pixels.shape == (1, 8, 8)
    assert out.pixels.min() >= 0 and out.pixels.max() <= 1

    with raises(InvalidArgument):
        denoise_image(net, Image(np.zeros((1, 2, 8))))
    with raises(InvalidArgument):
        denoise_image(net, Image(np.zeros((3, 8, 8))))


def test_receptive_field_locality():
    net = build_network('Self-ONN-3-4', seed=2)
    big = synthetic_images(1, 80, 80, seed=3)[0].pixels[None]
    crop = np.ascontiguousarray(big[:, :, 20:60, 20:60])
    full, _ = network_forward(net, big)
    part, _ = network_forward(net, crop)
    np.testing.assert_allclose(part[:, :, 3:-3, 3:-3], full[:, :, 23:57, 23:57], rtol=1e-5, atol=1e-6)
    assert not np.allclose(part[:, :, 0, :], full[:, :, 20, 20:60], rtol=1e-5, atol=1e-6)


def test_evaluate_dataset():
    net = build_network('CNN-4', seed=1)
    img = synthetic_images(1, 16, 16)[0]
    cfg = NoiseConfig(30, seed=2)
    single = evaluate_dataset(net, [img], cfg)
    # noise is keyed by image index
    noisy = add_awgn(img, cfg, (STREAM_EVAL_NOISE, 1))
    second = psnr(img, denoise_image(net, noisy))
    assert evaluate_dataset(net, [img, img], cfg) == (single + second) / 2

    assert evaluate_dataset(identity_network(), [img, img], NoiseConfig(0)) == math.inf
    with raises(InvalidArgument):
        evaluate_dataset(net, [], cfg)


def test_noise_lowers_psnr():
    img = synthetic_images(1, 32, 32, seed=1)[0]
    wins = sum(psnr(img, add_awgn(img, NoiseConfig(30, seed=s), (0,))) <
               psnr(img, add_awgn(img, NoiseConfig(15, seed=s), (0,))) for s in range(20))
    assert wins >= 19


def test_grid():
    grid = EvalGrid()
    grid.set('CNN-64', 'KODAK', 30, 28.4)
    grid.set('CNN-64', 'KODAK', 30.0, 28.5)
    assert len(grid) == 1
    assert grid.get('CNN-64', 'KODAK', 30.0) == 28.5
    assert ('CNN-64', 'KODAK', 30) in grid
    with raises(IncompleteGrid) as e:
        grid.get('CNN-64', 'KODAK', 60)
    assert 'sigma=60' in str(e.value)
    with raises(InvalidArgument):
        grid.set('CNN-64', 'KODAK', 60, math.inf)


def test_results_csv(tmp_path):
    grid = published_grid()
    path = tmp_path / 'results.csv'
    write_results_csv(grid, path)
    assert path.read_text().splitlines()[1] == 'BM3D,KODAK,30,28.5800'
    restored = read_results_csv(path)
    assert restored.rows() == grid.rows()
    assert restored.methods == grid.methods


def test_published_grid():
    grid = published_grid()
    assert len(grid) == 81
    assert grid.external == {'BM3D'}
    assert grid.methods[0] == 'BM3D'
    assert grid.datasets == ['KODAK', 'McMaster', 'CBSD68']
    assert grid.sigmas == [30.0, 60.0, 90.0]


def test_report_margins():
    report = aggregate_report(published_grid())
    assert report.overall['Self-ONN-7-128'] == approx(25.57, abs=0.01)
    assert report.overall['BM3D'] == approx(24.87, abs=0.01)
    assert round(report.overall_margins['Self-ONN-7-128'], 2) == 0.70
    assert round(report.sigma_margins['Self-ONN-7-128'][30.0], 2) == 0.19
    assert round(report.sigma_margins['Self-ONN-3-128'][60.0], 2) == 0.60
    assert round(report.sigma_margins['Self-ONN-7-128'][90.0], 2) == 1.32
    assert round(report.sigma_margins['Self-ONN-7-128'][90.0], 1) == 1.3
    assert max(report.overall, key=report.overall.get) == 'Self-ONN-7-128'

    grid = report.grid
    for m in report.methods:
        cells = [grid.get(m, d, s) for d in report.datasets for s in report.sigmas]
        assert abs(report.overall[m] - sum(cells) / 9) < 1e-12


def test_report_errors():
    with raises(IncompleteGrid):
        aggregate_report(EvalGrid())

    grid = EvalGrid()
    grid.set('CNN-64', 'KODAK', 30, 28.0)
    grid.set('CNN-64', 'KODAK', 60, 25.0)
    grid.set('CNN-128', 'KODAK', 30, 28.1)
    with raises(IncompleteGrid) as e:
        aggregate_report(grid, baseline=None)
    assert '(CNN-128, KODAK, sigma=60)' in str(e.value)

    grid.set('CNN-128', 'KODAK', 60, 25.1)
    with raises(IncompleteGrid):
        aggregate_report(grid)
    assert aggregate_report(grid, baseline=None).sigma_margins == {}


def test_delta_q_matches_published():
    grid = published_grid()
    for width, rows in PUBLISHED_DELTA_Q.items():
        table = delta_q_table(grid, width, list(rows))
        for pair, expected in rows.items():
            for sigma, value in zip([30.0, 60.0, 90.0], expected):
                assert abs(table[pair][sigma] - value) <= 0.05, (width, pair, sigma)

    assert delta_q_table(grid, 64, [(1, 3)])[(1, 3)][30.0] == approx(0.36, abs=0.005)


def test_delta_q_identical_grids():
    grid = EvalGrid()
    for method in ('CNN-8', 'Self-ONN-3-8'):
        for dataset, value in (('a', 20.0), ('b', 31.5)):
            grid.set(method, dataset, 30, value)
    assert delta_q_table(grid, 8, [(1, 3)]) == {(1, 3): {30.0: 0.0}}
    with raises(IncompleteGrid):
        delta_q_table(grid, 8, [(3, 5)])


def test_q_orders_by_width():
    methods = published_grid().methods + ['DnCNN']
    assert q_orders_by_width(methods) == {64: [1, 3, 5, 7], 128: [1, 3, 5, 7]}


def test_rendering():
    report = aggregate_report(published_grid())
    table1 = render_table1(report)
    assert 'Self-ONN-7-128' in table1
    assert 'Margin over BM3D' in table1
    assert '+0.70' in table1
    assert '25.56' in table1

    table2 = render_table2({64: delta_q_table(report.grid, 64, [(1, 3), (3, 5), (5, 7)])})
    lines = table2.splitlines()
    assert len(lines) == 4
    assert lines[1].startswith('64') and '1 → 3' in lines[1]
    assert '0.36' in lines[1]

    rows = fig2_rows(report)
    assert len(rows) == 30
    assert rows[0][0] == 30.0 and rows[0][1] == 'BM3D'
