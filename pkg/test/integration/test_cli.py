import csv

import numpy as np
from pytest import raises

from selfonn.classes import Activation, LayerSpec, NetworkSpec
from selfonn.cli import main, read_config_file
from selfonn.data import load_image, save_image, synthetic_images
from selfonn.evaluate import psnr
from selfonn.exceptions import ConfigError
from selfonn.layers import GenerativeConvParams, Network, load_model, save_model


def write_images(directory, count, size=24, seed=0):
    directory.mkdir(parents=True, exist_ok=True)
    for img in synthetic_images(count, size, size, seed=seed):
        save_image(img, directory / f'{img.name}.pgm')
    return directory


def train(tmp_path, out, *extra):
    data = write_images(tmp_path / 'train', 3)
    return main(['train', '--model', 'CNN-4', '--data', str(data), '--sigma', '30', '--epochs', '1',
                 '--batch', '16', '--patches', '64', '--patch-size', '8', '--out', str(out), *extra])


def test_train_denoise_eval_report(tmp_path):
    out = tmp_path / 'out'
    assert train(tmp_path, out) == 0
    model = out / 'CNN-4-sigma30.sonn'
    assert load_model(model).name == 'CNN-4'
    history = (out / 'CNN-4-sigma30-history.csv').read_text().splitlines()
    assert history[0] == 'epoch,train_loss,val_psnr'
    assert len(history) == 2
    assert 'model = CNN-4' in (out / 'run.cfg').read_text()

    inputs = write_images(tmp_path / 'inputs', 2, seed=1)
    denoised = tmp_path / 'denoised'
    assert main(['denoise', '--model', str(out / 'CNN-4-sigma{sigma}.sonn'), '--data', str(inputs),
                 '--sigma', '30', '--out', str(denoised)]) == 0
    noisy = load_image(denoised / 'synthetic-000_noisy.pgm')
    clean = load_image(denoised / 'synthetic-000_denoised.pgm')
    assert (noisy.width, noisy.height) == (clean.width, clean.height) == (24, 24)

    test = write_images(tmp_path / 'test' / 'Kodak', 2, seed=2)
    assert main(['eval', '--model', str(model), '--test', str(test.parent), '--sigma', '30',
                 '--out', str(out)]) == 0
    with open(out / 'results.csv', newline='') as f:
        rows = list(csv.DictReader(f))
    assert [(r['method'], r['dataset'], r['sigma']) for r in rows] == [('CNN-4', 'Kodak', '30'),
                                                                        ('BM3D', 'Kodak', '30')]
    assert rows[1]['psnr_db'] == '28.5800'

    assert main(['report', '--out', str(out)]) == 0
    table1 = (out / 'table1.txt').read_text()
    assert 'CNN-4' in table1 and 'Margin over BM3D' in table1
    fig2 = (out / 'fig2.csv').read_text().splitlines()
    assert fig2[0] == 'sigma,method,mean_psnr_db'
    assert fig2[2] == '30,BM3D,28.5800'


def test_worker_count_does_not_change_outputs(tmp_path):
    outputs = []
    for threads in (1, 4):
        out = tmp_path / f'out{threads}'
        assert train(tmp_path, out, '--threads', str(threads)) == 0
        outputs.append(((out / 'CNN-4-sigma30.sonn').read_bytes(),
                        (out / 'CNN-4-sigma30-history.csv').read_bytes()))
    assert outputs[0] == outputs[1]


def test_report_published(tmp_path):
    out = tmp_path / 'out'
    assert main(['report', '--published', '--out', str(out)]) == 0
    table1 = (out / 'table1.txt').read_text()
    assert '+0.70' in table1
    table2 = (out / 'table2.txt').read_text().splitlines()
    assert len(table2) == 7
    assert table2[1].split()[:4] == ['64', '1', '→', '3']
    assert len((out / 'fig2.csv').read_text().splitlines()) == 31


def test_config_precedence(tmp_path):
    config = tmp_path / 'run.cfg'
    config.write_text('# comment\nepochs = 2\nseed = 5\npatch-size = 16\n')
    out = tmp_path / 'out'
    assert main(['report', '--published', '--config', str(config), '--seed', '7', '--out', str(out)]) == 0
    rendered = (out / 'run.cfg').read_text().splitlines()
    assert 'epochs = 2' in rendered
    assert 'seed = 7' in rendered
    assert 'patch_size = 16' in rendered
    assert 'batch = 64' in rendered

    # the written config reads back
    assert read_config_file(str(out / 'run.cfg'))['seed'] == 7


def test_config_errors(tmp_path):
    config = tmp_path / 'bad.cfg'
    config.write_text('colour = blue\n')
    with raises(ConfigError):
        read_config_file(str(config))
    assert main(['report', '--published', '--config', str(config), '--out', str(tmp_path)]) == 2

    config.write_text('epochs = many\n')
    assert main(['report', '--published', '--config', str(config), '--out', str(tmp_path)]) == 2


def test_usage_errors(tmp_path):
    assert main(['train', '--model', 'Self-ONN-128', '--out', str(tmp_path / 'out')]) == 2
    assert main(['train', '--model', 'CNN-4', '--out', str(tmp_path / 'out')]) == 2
    assert main(['eval', '--model', str(tmp_path / 'missing.sonn'), '--test', str(tmp_path),
                 '--out', str(tmp_path / 'out')]) == 2
    assert main(['report', '--out', str(tmp_path / 'empty')]) == 2

    data = tmp_path / 'bad'
    data.mkdir()
    (data / 'deep.pgm').write_bytes(b'P5\n2 2\n65535\n' + bytes(8))
    assert main(['train', '--model', 'CNN-4', '--data', str(data), '--out', str(tmp_path / 'out')]) == 2

    color = tmp_path / 'color'
    color.mkdir()
    save_image(synthetic_images(1, 12, 12, channels=3)[0], color / 'c.ppm')
    assert main(['train', '--model', 'CNN-4', '--data', str(color), '--out', str(tmp_path / 'out')]) == 2

    with raises(SystemExit) as e:
        main(['train', '--channels', '2'])
    assert e.value.code == 2


def test_divergence_exit_code(tmp_path):
    assert train(tmp_path, tmp_path / 'out', '--lr', 'inf') == 3


def test_denoise_identity_model_keeps_inputs(tmp_path):
    layer = LayerSpec(1, 1, 1, Activation.LINEAR)
    weights = np.zeros((1, 1, 1, 3, 3), dtype=np.float32)
    weights[0, 0, 0, 1, 1] = 1
    net = Network(NetworkSpec(1, (layer,) * 3),
                  [GenerativeConvParams(weights.copy(), np.zeros(1, dtype=np.float32)) for _ in range(3)])
    save_model(net, tmp_path / 'identity.sonn')

    inputs = write_images(tmp_path / 'inputs', 2)
    out = tmp_path / 'out'
    assert main(['denoise', '--model', str(tmp_path / 'identity.sonn'), '--data', str(inputs),
                 '--out', str(out)]) == 0
    for path in sorted(inputs.iterdir()):
        assert (out / f'{path.stem}_denoised.pgm').read_bytes() == path.read_bytes()

    assert main(['denoise', '--model', str(tmp_path / 'missing.sonn'), '--data', str(inputs),
                 '--out', str(out)]) == 2


def test_eval_rerun_is_identical(tmp_path):
    out = tmp_path / 'out'
    assert train(tmp_path, out) == 0
    test = write_images(tmp_path / 'test' / 'a', 1, seed=3).parent
    write_images(test / 'b', 1, seed=4)

    args = ['eval', '--model', str(out / 'CNN-4-sigma{sigma}.sonn'), '--test', str(test), '--sigma', '30',
            '--out', str(out)]
    assert main(args) == 0
    first = (out / 'results.csv').read_bytes()
    assert len(first.splitlines()) == 3
    assert main(args) == 0
    assert (out / 'results.csv').read_bytes() == first


def test_report_on_empty_results(tmp_path):
    (tmp_path / 'results.csv').write_text('method,dataset,sigma,psnr_db\n')
    assert main(['report', '--out', str(tmp_path)]) == 2


def test_denoise_improves_heavy_noise(tmp_path):
    data = write_images(tmp_path / 'train', 4, size=48)
    out = tmp_path / 'out'
    assert main(['train', '--model', 'CNN-8', '--data', str(data), '--sigma', '90', '--epochs', '4', '--batch', '16',
                 '--patches', '512', '--patch-size', '16', '--lr', '5e-3', '--out', str(out)]) == 0

    inputs = write_images(tmp_path / 'inputs', 1, size=48, seed=7)
    denoised = tmp_path / 'denoised'
    assert main(['denoise', '--model', str(out / 'CNN-8-sigma90.sonn'), '--data', str(inputs), '--sigma', '90',
                 '--out', str(denoised)]) == 0
    clean = load_image(inputs / 'synthetic-000.pgm')
    noisy = load_image(denoised / 'synthetic-000_noisy.pgm')
    assert psnr(clean, load_image(denoised / 'synthetic-000_denoised.pgm')) > psnr(clean, noisy)
