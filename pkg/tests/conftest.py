import numpy as np
import pytest

from patcorrect.model import ModelConfig, PATCorrect
from patcorrect.textphon import Vocab, load_pronouncing_dict

TOY = dict(d_h=8, n_layers_text=1, n_layers_phon=1, n_layers_dec=1, n_heads=2, d_mlp=16, dropout=0.0)
FUSIONS = ("concat", "add", "max", "cross_atten")


def toy_vocabs(n_words: int = 8, n_phones: int = 6) -> tuple[Vocab, Vocab]:
    return Vocab.for_text(f"w{i}" for i in range(n_words)), Vocab.for_phonemes(f"P{i}" for i in range(n_phones))


def toy_model(fusion: str = "cross_atten", seed: int = 0, **overrides) -> PATCorrect:
    text, phon = toy_vocabs()
    cfg = ModelConfig(**{**TOY, "fusion": fusion, **overrides})
    return PATCorrect(cfg, text, phon, seed=seed)


def random_ids(rng: np.random.Generator, vocab: Vocab, length: int, first: int) -> list[int]:
    """Ids drawn from the non-reserved part of ``vocab``."""
    return [int(i) for i in rng.integers(first, len(vocab), size=length)]


@pytest.fixture(scope="session")
def pron():
    return load_pronouncing_dict()


# -- acceptance summary -------------------------------------------------------

_acceptance: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion listed in the terminal summary")


@pytest.fixture()
def measured(request):
    """Dict a criterion test fills with the numbers it measured."""
    return _acceptance.setdefault(request.node.nodeid, {}).setdefault("measured", {})


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    entry = _acceptance.setdefault(item.nodeid, {})
    entry["label"] = marker.args[0]
    entry["ok"] = entry.get("ok", True) and rep.passed


def pytest_terminal_summary(terminalreporter):
    entries = [e for e in _acceptance.values() if "label" in e]
    if not entries:
        return
    terminalreporter.section("acceptance criteria")
    for e in sorted(entries, key=lambda e: e["label"]):
        detail = ", ".join(f"{k}={_fmt(v)}" for k, v in e.get("measured", {}).items())
        terminalreporter.write_line(f"{'PASS' if e['ok'] else 'FAIL'}  {e['label']}  {detail}")


def _fmt(v):
    return f"{v:.4g}" if isinstance(v, float) else str(v)
