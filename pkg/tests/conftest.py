import numpy as np
import pytest

from hyret.encoder import EncoderConfig
from hyret.model import Model
from hyret.text import Vocab

# One visible pass/fail line per acceptance criterion, printed after the
# normal pytest summary.
_ACCEPTANCE_LINES = []


def record_criterion(num: int, description: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    line = f"[{status}] criterion {num}: {description}"
    if detail:
        line += f" -- {detail}"
    _ACCEPTANCE_LINES.append((num, line))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


def make_tiny_vocab(n_chars: int = 20) -> Vocab:
    return Vocab.from_tokens([chr(0x4E00 + i) for i in range(n_chars)])


def make_tiny_model(seed: int = 0, max_len: int = 8) -> Model:
    vocab = make_tiny_vocab()
    config = EncoderConfig(hidden_size=8, heads=2, layers_ssb=1, layers_gle=1,
                           layers_lde=1, ffn_size=16, max_len=max_len,
                           vocab_size=vocab.size, seed=seed)
    return Model(config, vocab)


@pytest.fixture
def tiny_vocab():
    return make_tiny_vocab()


@pytest.fixture
def tiny_model():
    return make_tiny_model()


def random_cjk_text(rng, n_chars: int, length) -> str:
    return "".join(chr(0x4E00 + i) for i in rng.integers(0, n_chars, size=length))


@pytest.fixture(scope="session")
def pipeline_artifacts(tmp_path_factory):
    """A small end-to-end run: synthetic data, trained checkpoint, index."""
    from hyret import pipeline, synthetic

    root = tmp_path_factory.mktemp("tinyworld")
    paths = synthetic.generate(str(root / "data"), seed=1, n_train=24)
    checkpoint = str(root / "model.ckpt")
    train_result = pipeline.run_train(
        paths["train"], checkpoint, vocab_path=paths["vocab"],
        lexicon_path=paths["lexicon"], rules_path=paths["rules"],
        encoder_config={"hidden_size": 8, "heads": 2, "max_len": 16,
                        "ffn_size": 16},
        train_config={"epochs": 1, "batch_size": 8, "seed": 0})
    index_dir = str(root / "index")
    pipeline.run_index(paths["corpus"], checkpoint, index_dir,
                       vocab_path=paths["vocab"])
    return {"root": root, "paths": paths, "checkpoint": checkpoint,
            "index_dir": index_dir, "train_result": train_result}


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function over an array."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g
