import numpy as np
import pytest

from neumann_bmo.corpus import CORPUS_PATH, KINDS, LAYOUT, generate_corpus, load_corpus, save_corpus
from neumann_bmo.grid import GridSpec


def test_shipped_corpus_layout(corpus):
    assert len(corpus) == 20
    counts = {k: sum(e.kind == k for e in corpus) for k in KINDS}
    assert counts == LAYOUT
    assert len({e.id for e in corpus}) == 20


def test_shipped_corpus_is_reproducible(tmp_path):
    path = tmp_path / "corpus.json"
    save_corpus(generate_corpus(), path, seed=20240611)
    assert path.read_text() == CORPUS_PATH.read_text()


def test_kind_filter():
    atoms = load_corpus(kinds=("atom",))
    assert [e.kind for e in atoms] == ["atom"] * 3


@pytest.mark.parametrize("dimension", [1, 2])
def test_entries_are_finite_on_grids(corpus, dimension):
    spec = GridSpec(dimension, 4.0, 32)
    for e in corpus:
        v = e.values(spec)
        assert v.shape == spec.shape and np.all(np.isfinite(v))


def test_atoms_have_zero_mean(corpus):
    spec = GridSpec(1, 8.0, 1024)
    for e in corpus:
        if e.kind == "atom":
            assert abs(e.values(spec).sum() * spec.h) < 1e-8
