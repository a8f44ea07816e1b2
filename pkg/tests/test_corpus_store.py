import pytest

from app.core.errors import DataError
from app.services.corpus_store import CorpusStore, open_store


def test_store_round_trip(tmp_path, small_synthetic):
    store = CorpusStore(f"sqlite:///{tmp_path / 'corpus.db'}")
    store.write(small_synthetic.corpus, small_synthetic.labels, small_synthetic.cpe_table)

    corpus, labels, cpe_table = store.read()
    assert corpus == small_synthetic.corpus
    assert cpe_table.entries == small_synthetic.cpe_table.entries
    assert labels.totals() == small_synthetic.labels.totals()


def test_second_write_replaces_the_corpus(tmp_path, small_synthetic):
    store = CorpusStore(f"sqlite:///{tmp_path / 'corpus.db'}")
    store.write(small_synthetic.corpus, small_synthetic.labels, small_synthetic.cpe_table)
    smaller = small_synthetic.corpus.restrict(forum_ids=["forum00"])
    store.write(smaller, small_synthetic.labels, small_synthetic.cpe_table)

    corpus, _, _ = store.read()
    assert corpus.forum_ids() == ["forum00"]


def test_empty_store_is_a_data_error(tmp_path):
    store = CorpusStore(f"sqlite:///{tmp_path / 'corpus.db'}")
    with pytest.raises(DataError):
        store.read()


def test_open_store_needs_a_url():
    with pytest.raises(DataError):
        open_store("")
