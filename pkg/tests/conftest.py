import numpy as np
import pytest

from vaesim.data_io import MNIST_FILES, PNEUMONIA_FILE, Dataset, SplitPart, write_idx


def pattern_images(n, n_classes=10, size=32, seed=0, noise=0.08, shift=2):
    """Easily clusterable grayscale patterns: one sinusoidal grating per
    class, randomly shifted and lightly noised. Returns ((n,1,s,s) float32
    in [0,1], (n,) int64 labels)."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / (size - 1)
    base = np.zeros((n_classes, size, size), np.float32)
    for c in range(n_classes):
        fx, fy = 1 + c % 4, 1 + c // 4
        base[c] = 0.5 + 0.5 * np.sin(2 * np.pi * (fx * xx + fy * yy) + 0.7 * c)
    labels = rng.integers(0, n_classes, size=n)
    images = base[labels].copy()
    if shift:
        for i in range(n):
            dy, dx = rng.integers(-shift, shift + 1, 2)
            images[i] = np.roll(images[i], (dy, dx), axis=(0, 1))
    images += rng.normal(0, noise, images.shape).astype(np.float32)
    np.clip(images, 0, 1, out=images)
    return images[:, None].astype(np.float32), labels.astype(np.int64)


def pattern_dataset(n_train, n_test, n_classes=10, seed=0, name="synth") -> Dataset:
    xi, yi = pattern_images(n_train, n_classes, seed=seed)
    xt, yt = pattern_images(n_test, n_classes, seed=seed + 1)
    return Dataset(name=name, train=SplitPart(xi, yi), test=SplitPart(xt, yt))


def write_mnist_fixture(data_dir, n_train=96, n_test=32, seed=0):
    """Write synthetic 28x28 uint8 data under the conventional IDX names."""
    def to_u8(images, labels):
        return (images[:, 0] * 255).astype(np.uint8), labels.astype(np.uint8)

    xi, yi = to_u8(*pattern_images(n_train, size=28, seed=seed))
    xt, yt = to_u8(*pattern_images(n_test, size=28, seed=seed + 1))
    (data_dir / MNIST_FILES["train_images"]).write_bytes(write_idx(xi.shape, xi))
    (data_dir / MNIST_FILES["train_labels"]).write_bytes(write_idx(yi.shape, yi))
    (data_dir / MNIST_FILES["test_images"]).write_bytes(write_idx(xt.shape, xt))
    (data_dir / MNIST_FILES["test_labels"]).write_bytes(write_idx(yt.shape, yt))


def write_pneumonia_fixture(data_dir, n_train=60, n_val=10, n_test=20, seed=0):
    """Synthetic two-class archive with a separate validation split, mirroring
    the published layout."""
    def to_u8(images, labels):
        return (images[:, 0] * 255).astype(np.uint8), labels.reshape(-1, 1).astype(np.uint8)

    xi, yi = to_u8(*pattern_images(n_train, n_classes=2, size=28, seed=seed))
    xv, yv = to_u8(*pattern_images(n_val, n_classes=2, size=28, seed=seed + 1))
    xt, yt = to_u8(*pattern_images(n_test, n_classes=2, size=28, seed=seed + 2))
    np.savez(
        data_dir / PNEUMONIA_FILE,
        train_images=xi, train_labels=yi,
        val_images=xv, val_labels=yv,
        test_images=xt, test_labels=yt,
    )


@pytest.fixture()
def mnist_fixture_dir(tmp_path):
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    write_mnist_fixture(data_dir)
    return data_dir


@pytest.fixture()
def pneumonia_fixture_dir(tmp_path):
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    write_pneumonia_fixture(data_dir)
    return data_dir


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One line per acceptance criterion at the end of the run."""
    lines = []
    for outcome, tag in (("passed", "PASS"), ("failed", "FAIL"), ("skipped", "SKIP")):
        for report in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" not in report.nodeid:
                continue
            if outcome != "skipped" and report.when != "call":
                continue
            name = report.nodeid.split("::")[-1]
            lines.append((name, tag))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, tag in sorted(set(lines)):
            terminalreporter.write_line(f"{tag}  {name}")
